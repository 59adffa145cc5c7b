//! Mean-spin response, spin-noise references and Zeeman population models.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::constants::PhysicalConstants;
use crate::error::{ensure_non_negative, ensure_positive, ensure_unit_interval, Error, Result};

/// Atomic ensemble description. Times in seconds; `t1_s`/`t2_s` may be
/// infinite to switch a decay channel off.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleParams {
    pub atom_number: f64,
    pub spin_f: u32,
    pub t1_s: f64,
    pub t2_s: f64,
    pub polarization: f64,
    pub larmor_rad_s: f64,
    pub gyromagnetic_rad_s_t: f64,
}

impl EnsembleParams {
    /// Cesium F=4 ensemble at the 725 kHz operating point, fully polarized.
    pub fn cesium_f4(atom_number: f64) -> Self {
        Self {
            atom_number,
            spin_f: 4,
            t1_s: 4.5e-3,
            t2_s: 2.35e-3,
            polarization: 1.0,
            larmor_rad_s: 2.0 * PI * 725e3,
            gyromagnetic_rad_s_t: PhysicalConstants::default().gyromagnetic_f4_rad_s_t,
        }
    }

    pub fn with_polarization(mut self, p: f64) -> Self {
        self.polarization = p;
        self
    }

    pub fn validate(&self) -> Result<()> {
        ensure_positive("atom_number", self.atom_number)?;
        if self.spin_f == 0 {
            return Err(Error::invalid("spin_f", "must be at least 1"));
        }
        ensure_unit_interval("polarization", self.polarization)?;
        if !(self.t2_s > 0.0) {
            return Err(Error::invalid("t2_s", format!("must be > 0, got {}", self.t2_s)));
        }
        if !(self.t1_s >= self.t2_s / 2.0) {
            return Err(Error::invalid("t1_s", "must satisfy T1 >= T2/2"));
        }
        ensure_positive("larmor_rad_s", self.larmor_rad_s)?;
        ensure_positive("gyromagnetic_rad_s_t", self.gyromagnetic_rad_s_t)?;
        Ok(())
    }

    /// Macroscopic longitudinal spin J_x = F·N_A·p.
    pub fn jx(&self) -> f64 {
        self.spin_f as f64 * self.atom_number * self.polarization
    }
}

/// RF (eddy-current) drive at the Larmor frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RfPulseParams {
    pub amplitude_t: f64,
    pub phase_rad: f64,
    pub duration_s: f64,
    pub frequency_rad_s: f64,
    /// Duration is an integer number of drive periods.
    #[serde(default)]
    pub phase_clean: bool,
}

impl RfPulseParams {
    pub fn new(amplitude_t: f64, phase_rad: f64, duration_s: f64, frequency_rad_s: f64) -> Result<Self> {
        let rf = Self {
            amplitude_t,
            phase_rad,
            duration_s,
            frequency_rad_s,
            phase_clean: false,
        };
        rf.validate()?;
        Ok(rf)
    }

    /// Rounds `approx_duration_s` to the nearest whole number of periods
    /// (at least one) and marks the pulse phase-clean.
    pub fn phase_clean(
        amplitude_t: f64,
        phase_rad: f64,
        approx_duration_s: f64,
        frequency_rad_s: f64,
    ) -> Result<Self> {
        ensure_positive("frequency_rad_s", frequency_rad_s)?;
        ensure_positive("duration_s", approx_duration_s)?;
        let period = 2.0 * PI / frequency_rad_s;
        let cycles = (approx_duration_s / period).round().max(1.0);
        let rf = Self {
            amplitude_t,
            phase_rad,
            duration_s: cycles * period,
            frequency_rad_s,
            phase_clean: true,
        };
        rf.validate()?;
        Ok(rf)
    }

    pub fn cycles(&self) -> f64 {
        self.duration_s * self.frequency_rad_s / (2.0 * PI)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_non_negative("amplitude_t", self.amplitude_t)?;
        if !self.amplitude_t.is_finite() || !self.phase_rad.is_finite() {
            return Err(Error::invalid("rf", "amplitude and phase must be finite"));
        }
        ensure_positive("duration_s", self.duration_s)?;
        ensure_positive("frequency_rad_s", self.frequency_rad_s)?;
        if self.phase_clean {
            let c = self.cycles();
            if (c - c.round()).abs() > 1e-6 || c.round() < 1.0 {
                return Err(Error::invalid(
                    "duration_s",
                    format!("phase-clean pulse spans {c} periods, not an integer"),
                ));
            }
        }
        Ok(())
    }
}

/// Mean transverse spin ⟨J⊥⟩ = γ/2·B·J_x·T₂(1 − e^{−τ/T₂}) built up by a
/// resonant drive of duration τ.
pub fn transverse_response(ens: &EnsembleParams, rf: &RfPulseParams) -> f64 {
    let tau = rf.duration_s.max(0.0);
    let build_up = if ens.t2_s.is_infinite() {
        tau
    } else {
        -ens.t2_s * (-tau / ens.t2_s).exp_m1()
    };
    0.5 * ens.gyromagnetic_rad_s_t * rf.amplitude_t * ens.jx() * build_up
}

/// Excess transverse variance of a partially polarized ensemble relative to
/// the coherent spin state, `(F(F+1) − (pF)²) / F`. Equals 1 at p = 1.
///
/// The longitudinal moment is approximated by its mean, so the factor only
/// depends on the polarization. [`PopulationDistribution::transverse_variance`]
/// gives the exact value for a specific population model.
pub fn polarization_correction(spin_f: u32, polarization: f64) -> f64 {
    let f = spin_f as f64;
    let jx = polarization * f;
    (f * (f + 1.0) - jx * jx) / f
}

/// Projection-noise variance Var(J_z) = F/2·N_A, scaled by
/// [`polarization_correction`] when p < 1.
pub fn css_variance(ens: &EnsembleParams) -> f64 {
    0.5 * ens.spin_f as f64 * ens.atom_number * polarization_correction(ens.spin_f, ens.polarization)
}

/// Spin-noise variance of the unpolarized (thermal) cesium ground state
/// measured on F=4: the single-atom F=4 variance F(F+1)/3 = 20/3 weighted by
/// the 9/16 occupation of that manifold, i.e. 15/4·N_A.
pub fn tss_variance(ens: &EnsembleParams) -> f64 {
    let f = ens.spin_f as f64;
    // 2F+1 of the 2(2F+1)-2 = 16 ground sublevels sit in the upper manifold
    let occupation = (2.0 * f + 1.0) / (2.0 * (2.0 * f + 1.0) - 2.0);
    f * (f + 1.0) / 3.0 * occupation * ens.atom_number
}

pub fn longitudinal_decay(amplitude: f64, t: f64, t1: f64) -> f64 {
    amplitude * (-t / t1).exp()
}

/// Zeeman sublevel populations p_m, stored from m = −F to m = F.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationDistribution {
    pub spin_f: u32,
    pub populations: Vec<f64>,
}

impl PopulationDistribution {
    pub fn new(spin_f: u32, populations: Vec<f64>) -> Result<Self> {
        let d = Self { spin_f, populations };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.populations.len() != 2 * self.spin_f as usize + 1 {
            return Err(Error::invalid(
                "populations",
                format!("expected {} entries for F = {}", 2 * self.spin_f + 1, self.spin_f),
            ));
        }
        if self.populations.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(Error::invalid("populations", "entries must be finite and >= 0"));
        }
        let total: f64 = self.populations.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("populations", format!("sum to {total}, not 1")));
        }
        Ok(())
    }

    /// All atoms in m = F.
    pub fn stretched(spin_f: u32) -> Self {
        let mut populations = vec![0.0; 2 * spin_f as usize + 1];
        *populations.last_mut().unwrap() = 1.0;
        Self { spin_f, populations }
    }

    pub fn uniform(spin_f: u32) -> Self {
        let n = 2 * spin_f as usize + 1;
        Self {
            spin_f,
            populations: vec![1.0 / n as f64; n],
        }
    }

    /// Spin-temperature populations p_m ∝ ε^{F−m}; ε ∈ [0, 1].
    pub fn from_epsilon(spin_f: u32, epsilon: f64) -> Result<Self> {
        ensure_unit_interval("epsilon", epsilon)?;
        let weights: Vec<f64> = (0..=2 * spin_f)
            .map(|i| epsilon.powi((2 * spin_f - i) as i32))
            .collect();
        let z: f64 = weights.iter().sum();
        Ok(Self {
            spin_f,
            populations: weights.into_iter().map(|w| w / z).collect(),
        })
    }

    /// Spin-temperature distribution whose polarization Σ m·p_m / F equals `p`.
    pub fn spin_temperature(spin_f: u32, polarization: f64) -> Result<Self> {
        ensure_unit_interval("polarization", polarization)?;
        if spin_f == 0 {
            return Err(Error::invalid("spin_f", "must be at least 1"));
        }
        Self::from_epsilon(spin_f, spin_temperature_epsilon(spin_f, polarization))
    }

    pub fn m_values(&self) -> impl Iterator<Item = i32> {
        let f = self.spin_f as i32;
        -f..=f
    }

    /// p_m for m ∈ [−F, F].
    pub fn population(&self, m: i32) -> f64 {
        self.populations[(m + self.spin_f as i32) as usize]
    }

    pub fn polarization(&self) -> f64 {
        self.m_values()
            .zip(&self.populations)
            .map(|(m, p)| m as f64 * p)
            .sum::<f64>()
            / self.spin_f as f64
    }

    /// Single-atom Var(J_z) transverse to the polarization axis,
    /// (F(F+1) − ⟨m²⟩)/2, relative to the stretched-state value F/2.
    pub fn transverse_variance(&self) -> f64 {
        let f = self.spin_f as f64;
        let m2: f64 = self
            .m_values()
            .zip(&self.populations)
            .map(|(m, p)| (m * m) as f64 * p)
            .sum();
        (f * (f + 1.0) - m2) / f
    }
}

/// ε of the spin-temperature distribution at polarization `p`, by bisection.
pub(crate) fn spin_temperature_epsilon(spin_f: u32, p: f64) -> f64 {
    if p >= 1.0 {
        return 0.0;
    }
    if p <= 0.0 {
        return 1.0;
    }
    let pol = |eps: f64| {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..=2 * spin_f {
            let w = eps.powi((2 * spin_f - i) as i32);
            num += (i as f64 - spin_f as f64) * w;
            den += w;
        }
        num / (den * spin_f as f64)
    };
    // polarization falls monotonically from 1 at ε = 0 to 0 at ε = 1
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if pol(mid) > p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// One Δm = 1 resonance of the MORS spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MorsComponent {
    /// Lower sublevel of the (m, m+1) transition.
    pub m: i32,
    pub frequency_hz: f64,
    pub amplitude: f64,
}

/// Resonances of a pulsed MORS spectrum and the line shape that renders them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MorsSpectrum {
    pub components: Vec<MorsComponent>,
    /// Half width at half maximum of each complex Lorentzian.
    pub linewidth_hz: f64,
}

impl MorsSpectrum {
    /// |Σ_k A_k·γ / (γ − i(f − f_k))| at frequency `f`.
    pub fn magnitude(&self, f: f64) -> f64 {
        let g = self.linewidth_hz;
        let (mut re, mut im) = (0.0, 0.0);
        for c in &self.components {
            let d = f - c.frequency_hz;
            let den = g * g + d * d;
            re += c.amplitude * g * g / den;
            im += c.amplitude * g * d / den;
        }
        re.hypot(im)
    }

    pub fn sample(&self, frequencies: &[f64]) -> Vec<f64> {
        frequencies.iter().map(|&f| self.magnitude(f)).collect()
    }

    pub fn total_amplitude(&self) -> f64 {
        self.components.iter().map(|c| c.amplitude).sum()
    }
}

/// Raw MORS components from unnormalized populations (index 0 is m = −F).
/// Transition (m, m+1) sits at f_L + (m + ½)·ν_qz with strength
/// (p_{m+1} − p_m)·(F(F+1) − m(m+1)).
pub fn mors_components(spin_f: u32, populations: &[f64], larmor_hz: f64, quadratic_splitting_hz: f64) -> Vec<MorsComponent> {
    let f = spin_f as i32;
    let ff1 = (f * (f + 1)) as f64;
    (-f..f)
        .map(|m| {
            let lower = populations[(m + f) as usize];
            let upper = populations[(m + f + 1) as usize];
            MorsComponent {
                m,
                frequency_hz: larmor_hz + (m as f64 + 0.5) * quadratic_splitting_hz,
                amplitude: (upper - lower) * (ff1 - (m * (m + 1)) as f64),
            }
        })
        .collect()
}

pub fn mors_spectrum(
    pop: &PopulationDistribution,
    larmor_hz: f64,
    quadratic_splitting_hz: f64,
    linewidth_hz: f64,
) -> Result<MorsSpectrum> {
    pop.validate()?;
    ensure_positive("linewidth_hz", linewidth_hz)?;
    ensure_positive("larmor_hz", larmor_hz)?;
    if !quadratic_splitting_hz.is_finite() {
        return Err(Error::invalid("quadratic_splitting_hz", "must be finite"));
    }
    Ok(MorsSpectrum {
        components: mors_components(pop.spin_f, &pop.populations, larmor_hz, quadratic_splitting_hz),
        linewidth_hz,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ens() -> EnsembleParams {
        EnsembleParams::cesium_f4(1.5e9)
    }

    fn rf(amplitude: f64, tau: f64) -> RfPulseParams {
        RfPulseParams {
            amplitude_t: amplitude,
            phase_rad: 0.0,
            duration_s: tau,
            frequency_rad_s: 2.0 * PI * 725e3,
            phase_clean: false,
        }
    }

    #[test]
    fn response_limits() {
        let e = ens();
        assert_eq!(transverse_response(&e, &rf(1e-12, 0.0)), 0.0);
        let sat = 0.5 * e.gyromagnetic_rad_s_t * 1e-12 * e.jx() * e.t2_s;
        let long = transverse_response(&e, &rf(1e-12, 100.0 * e.t2_s));
        assert!((long - sat).abs() < 1e-12 * sat);
        let at_t2 = transverse_response(&e, &rf(1e-12, e.t2_s));
        assert!((at_t2 - sat * (1.0 - (-1f64).exp())).abs() < 1e-12 * sat);
    }

    // Lab-frame Bloch equations with a linear RF field, integrated by RK4 at
    // 10⁴ steps per Larmor period. Units: Larmor period 1, γ = 2π, B₀ = 1.
    fn bloch_transverse(b1: f64, t2: f64, tau: f64) -> f64 {
        let gamma = 2.0 * PI;
        let omega = gamma;
        let steps_per_period = 10_000.0;
        let n = (tau * steps_per_period).round() as usize;
        let h = tau / n as f64;
        let deriv = |t: f64, j: [f64; 3]| -> [f64; 3] {
            let b = [1.0, b1 * (omega * t).cos(), 0.0];
            let cross = [
                j[1] * b[2] - j[2] * b[1],
                j[2] * b[0] - j[0] * b[2],
                j[0] * b[1] - j[1] * b[0],
            ];
            [gamma * cross[0], gamma * cross[1] - j[1] / t2, gamma * cross[2] - j[2] / t2]
        };
        let mut j = [1.0, 0.0, 0.0];
        let mut t = 0.0;
        let add = |a: [f64; 3], b: [f64; 3], s: f64| [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2]];
        for _ in 0..n {
            let k1 = deriv(t, j);
            let k2 = deriv(t + h / 2.0, add(j, k1, h / 2.0));
            let k3 = deriv(t + h / 2.0, add(j, k2, h / 2.0));
            let k4 = deriv(t + h, add(j, k3, h));
            for i in 0..3 {
                j[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            t += h;
        }
        j[1].hypot(j[2])
    }

    #[test]
    fn response_matches_bloch_integration() {
        let t2 = 50.0;
        let b1 = 1e-4;
        let oracle = bloch_transverse(b1, t2, t2);
        let e = EnsembleParams {
            atom_number: 1.0,
            spin_f: 1,
            t1_s: f64::INFINITY,
            t2_s: t2,
            polarization: 1.0,
            larmor_rad_s: 2.0 * PI,
            gyromagnetic_rad_s_t: 2.0 * PI,
        };
        let pulse = RfPulseParams {
            amplitude_t: b1,
            phase_rad: 0.0,
            duration_s: t2,
            frequency_rad_s: 2.0 * PI,
            phase_clean: true,
        };
        let model = transverse_response(&e, &pulse);
        assert!((model - oracle).abs() < 5e-3 * oracle, "model {model} vs Bloch {oracle}");
    }

    #[test]
    fn phase_clean_pulse_rounds_to_whole_periods() {
        let rf = RfPulseParams::phase_clean(1e-12, 0.0, 47e-6, 2.0 * PI * 725e3).unwrap();
        assert_eq!(rf.cycles().round(), 34.0);
        assert!((rf.cycles() - 34.0).abs() < 1e-9);
        let mut bad = rf;
        bad.duration_s *= 1.01;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn css_and_tss_reference_values() {
        let e = ens();
        assert!((css_variance(&e) - 3e9).abs() < 1e-3);
        let zero = EnsembleParams { atom_number: 0.0, ..e };
        assert_eq!(css_variance(&zero), 0.0);
        let sixteen = EnsembleParams { atom_number: 16.0, ..e };
        assert!((tss_variance(&sixteen) - 60.0).abs() < 1e-12);
        let partial = e.with_polarization(0.975);
        assert!((css_variance(&partial) / css_variance(&e) - 1.195).abs() < 0.01);
    }

    #[test]
    fn tss_matches_sublevel_enumeration() {
        // Sixteen ground sublevels equally occupied; only the nine F=4 ones
        // contribute, each with Var(J_z) = m² averaged over the axis choice.
        let mut sum = 0.0;
        for m in -4i32..=4 {
            sum += (m * m) as f64 / 9.0;
        }
        // ⟨m²⟩ = F(F+1)/3 for a uniform F=4 manifold
        assert!((sum - 20.0 / 3.0).abs() < 1e-14);
        let single = EnsembleParams { atom_number: 1.0, ..ens() };
        assert!((tss_variance(&single) - sum * 9.0 / 16.0).abs() < 1e-14);
    }

    #[test]
    fn correction_monotone_and_normalized() {
        assert_eq!(polarization_correction(4, 1.0), 1.0);
        let mut prev = f64::INFINITY;
        for i in 1..=1000 {
            let c = polarization_correction(4, i as f64 / 1000.0);
            assert!(c < prev);
            prev = c;
        }
    }

    #[test]
    fn spin_temperature_hits_polarization() {
        for p in [0.3, 0.9, 0.975, 0.999] {
            let d = PopulationDistribution::spin_temperature(4, p).unwrap();
            assert!((d.polarization() - p).abs() < 1e-12);
            d.validate().unwrap();
        }
        assert_eq!(PopulationDistribution::spin_temperature(4, 1.0).unwrap(), PopulationDistribution::stretched(4));
        let eps = spin_temperature_epsilon(4, 0.975);
        assert!((eps - 0.0909).abs() < 2e-3, "eps = {eps}");
    }

    #[test]
    fn decay_values() {
        assert_eq!(longitudinal_decay(2.0, 0.0, 4.5e-3), 2.0);
        assert!((longitudinal_decay(1.0, 4.5e-3, 4.5e-3) - (-1f64).exp()).abs() < 1e-15);
        assert!((longitudinal_decay(1.0, 220e-6, 4.5e-3) - 0.9523).abs() < 1e-4);
    }

    #[test]
    fn mors_trivial_spectra() {
        let s = mors_spectrum(&PopulationDistribution::stretched(4), 1.45e6, 2e3, 200.0).unwrap();
        let nonzero: Vec<_> = s.components.iter().filter(|c| c.amplitude != 0.0).collect();
        assert_eq!(nonzero.len(), 1);
        assert_eq!(nonzero[0].m, 3);
        let u = mors_spectrum(&PopulationDistribution::uniform(4), 1.45e6, 2e3, 200.0).unwrap();
        assert!(u.components.iter().all(|c| c.amplitude.abs() < 1e-15));
        assert!(u.magnitude(1.45e6) < 1e-14);
    }

    #[test]
    fn mors_partial_polarization_has_secondary_maximum() {
        let d = PopulationDistribution::spin_temperature(4, 0.975).unwrap();
        let (fl, nq) = (1.45e6, 2.0e3);
        let s = mors_spectrum(&d, fl, nq, 250.0).unwrap();
        let freqs: Vec<f64> = (0..4000).map(|i| fl - 5.0 * nq + 10.0 * nq * i as f64 / 4000.0).collect();
        let y = s.sample(&freqs);
        let peaks: Vec<(f64, f64)> = (1..y.len() - 1)
            .filter(|&i| y[i] > y[i - 1] && y[i] > y[i + 1])
            .map(|i| (freqs[i], y[i]))
            .collect();
        assert!(peaks.len() >= 2, "peaks: {peaks:?}");
        let main = peaks.iter().cloned().fold((0.0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
        assert!((main.0 - (fl + 3.5 * nq)).abs() < 50.0);
        let second = peaks.iter().filter(|p| p.0 != main.0).map(|p| p.1).fold(0.0, f64::max);
        assert!(second < 0.3 * main.1 && second > 0.01 * main.1);
    }

    proptest! {
        #[test]
        fn response_is_linear(scale in 0.1f64..10.0, b in 1e-13f64..1e-10, n in 1e8f64..1e10) {
            let e = EnsembleParams::cesium_f4(n);
            let base = transverse_response(&e, &rf(b, 47e-6));
            let scaled_b = transverse_response(&e, &rf(b * scale, 47e-6));
            let scaled_n = transverse_response(&EnsembleParams::cesium_f4(n * scale), &rf(b, 47e-6));
            prop_assert!((scaled_b - scale * base).abs() <= 1e-12 * scaled_b.abs());
            prop_assert!((scaled_n - scale * base).abs() <= 1e-12 * scaled_n.abs());
        }

        #[test]
        fn css_over_tss_is_eight_fifteenths(n in 1.0f64..1e12) {
            let e = EnsembleParams::cesium_f4(n);
            prop_assert!((css_variance(&e) / tss_variance(&e) - 8.0 / 15.0).abs() < 1e-15);
        }

        #[test]
        fn decay_semigroup(t1 in 1e-4f64..1e-2, a in 0.0f64..1e-2, b in 0.0f64..1e-2, amp in 0.1f64..10.0) {
            let lhs = longitudinal_decay(amp, a + b, t1);
            let rhs = longitudinal_decay(amp, a, t1) * longitudinal_decay(amp, b, t1) / amp;
            prop_assert!((lhs - rhs).abs() <= 1e-12 * amp);
        }

        #[test]
        fn mors_amplitude_invariant_under_uniform_shift(
            pops in proptest::collection::vec(0.0f64..1.0, 9),
            shift in -0.5f64..0.5,
        ) {
            let shifted: Vec<f64> = pops.iter().map(|p| p + shift).collect();
            let a: Vec<_> = mors_components(4, &pops, 1e6, 1e3);
            let b: Vec<_> = mors_components(4, &shifted, 1e6, 1e3);
            let ta: f64 = a.iter().map(|c| c.amplitude).sum();
            let tb: f64 = b.iter().map(|c| c.amplitude).sum();
            prop_assert!((ta - tb).abs() < 1e-9);
        }
    }
}
