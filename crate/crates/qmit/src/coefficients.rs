//! Atom-light coupling constants and closed-form quantum-noise budgets.
//!
//! Everything here is a pure function of its inputs. The simulator and the
//! estimation code use these formulas as their reference values.
//!
//! # Detuning convention
//!
//! Detunings are `ν_transition − ν_laser`: positive means red of the reference
//! transition, negative means blue. The F=4 formulas take the detuning from
//! F=4 → F'=5 (a blue-detuned probe has Δ < 0). The F=3 formulas take it from
//! F=3 → F'=2, which for the same laser is large and positive. Use
//! [`OpticalParams::f4`] / [`OpticalParams::f3`] rather than filling the
//! struct by hand, and [`same_laser_f3_detuning`] to convert between the two.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::constants::PhysicalConstants;
use crate::error::{ensure_non_negative, ensure_positive, ensure_unit_interval, Error, Result};

/// Relative distance to a resonance below which the polarizability is
/// reported as singular: `|1 − Δ_ij/Δ| < SINGULAR_EPSILON`.
pub const SINGULAR_EPSILON: f64 = 1e-6;

/// Unnormalized sinc, `sin(x)/x`, with the removable singularity at zero.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        let x2 = x * x;
        1.0 - x2 / 6.0 + x2 * x2 / 120.0
    } else {
        x.sin() / x
    }
}

/// Overlap of a stroboscopic pulse train of duty cycle `d` with the lock-in
/// cosine quadrature, `η = 1 + sinc(πD)`. Ranges from 2 (δ-pulses) to 1
/// (continuous probing).
pub fn demodulation_overlap(duty_cycle: f64) -> f64 {
    1.0 + sinc(PI * duty_cycle)
}

/// Fraction of the continuous-probing back-action that survives stroboscopic
/// probing, `C = (1 − sinc(πD)) / (1 + sinc(πD))`.
pub fn back_action_fraction(duty_cycle: f64) -> f64 {
    let s = sinc(PI * duty_cycle);
    (1.0 - s) / (1.0 + s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GroundManifold {
    F4,
    F3,
}

/// Excited-state hyperfine offsets entering the vector polarizability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperfineSplittings {
    /// F'=3 ↔ F'=5 (F=4 branch).
    pub f3_f5_hz: f64,
    /// F'=4 ↔ F'=5 (F=4 branch).
    pub f4_f5_hz: f64,
    /// F'=2 ↔ F'=3 (F=3 branch).
    pub f3_f2_hz: f64,
    /// F'=2 ↔ F'=4 (F=3 branch).
    pub f4_f2_hz: f64,
}

impl From<&PhysicalConstants> for HyperfineSplittings {
    fn from(c: &PhysicalConstants) -> Self {
        Self {
            f3_f5_hz: c.hyperfine_f3_f5_hz,
            f4_f5_hz: c.hyperfine_f4_f5_hz,
            f3_f2_hz: c.hyperfine_f3_f2_hz,
            f4_f2_hz: c.hyperfine_f4_f2_hz,
        }
    }
}

impl Default for HyperfineSplittings {
    fn default() -> Self {
        (&PhysicalConstants::default()).into()
    }
}

/// Probe-light description.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpticalParams {
    pub manifold: GroundManifold,
    /// Signed detuning from the manifold's reference transition (see module docs).
    pub detuning_hz: f64,
    pub wavelength_m: f64,
    /// Natural linewidth Γ, rad/s.
    pub linewidth_rad_s: f64,
    pub beam_area_m2: f64,
    pub photon_flux_per_s: f64,
    pub splittings: HyperfineSplittings,
}

/// Cross-section of the vapour-cell channel, 500 µm × 500 µm.
pub const DEFAULT_BEAM_AREA_M2: f64 = 500e-6 * 500e-6;

impl OpticalParams {
    /// Probe acting on F=4; `detuning_hz` is measured from F=4 → F'=5 and is
    /// negative for blue detuning.
    pub fn f4(detuning_hz: f64) -> Self {
        Self::with_constants(GroundManifold::F4, detuning_hz, &PhysicalConstants::default())
    }

    /// Probe acting on F=3; `detuning_hz` is measured from F=3 → F'=2 and is
    /// positive for a laser red of that line.
    pub fn f3(detuning_hz: f64) -> Self {
        Self::with_constants(GroundManifold::F3, detuning_hz, &PhysicalConstants::default())
    }

    pub fn with_constants(
        manifold: GroundManifold,
        detuning_hz: f64,
        constants: &PhysicalConstants,
    ) -> Self {
        Self {
            manifold,
            detuning_hz,
            wavelength_m: constants.d2_wavelength_m,
            linewidth_rad_s: constants.d2_linewidth_rad_s,
            beam_area_m2: DEFAULT_BEAM_AREA_M2,
            photon_flux_per_s: 0.0,
            splittings: constants.into(),
        }
    }

    pub fn with_photon_flux(mut self, photons_per_s: f64) -> Self {
        self.photon_flux_per_s = photons_per_s;
        self
    }

    pub fn with_beam_area(mut self, area_m2: f64) -> Self {
        self.beam_area_m2 = area_m2;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.detuning_hz.is_finite() || self.detuning_hz == 0.0 {
            return Err(Error::invalid("detuning_hz", "must be finite and non-zero"));
        }
        ensure_positive("wavelength_m", self.wavelength_m)?;
        ensure_positive("linewidth_rad_s", self.linewidth_rad_s)?;
        ensure_positive("beam_area_m2", self.beam_area_m2)?;
        ensure_non_negative("photon_flux_per_s", self.photon_flux_per_s)?;
        if !self.photon_flux_per_s.is_finite() {
            return Err(Error::invalid("photon_flux_per_s", "must be finite"));
        }
        Ok(())
    }
}

/// Detuning from F=3 → F'=2 of the laser whose detuning from F=4 → F'=5 is
/// `f4_detuning_hz`.
pub fn same_laser_f3_detuning(f4_detuning_hz: f64, constants: &PhysicalConstants) -> f64 {
    let f5_to_f2 = constants.hyperfine_f3_f5_hz + constants.hyperfine_f3_f2_hz;
    f4_detuning_hz + constants.ground_hyperfine_hz - f5_to_f2
}

fn resonance_term(
    weight: f64,
    denominator: f64,
    detuning_hz: f64,
    transition: &'static str,
    epsilon: f64,
) -> Result<f64> {
    if denominator.abs() < epsilon {
        return Err(Error::SingularDetuning {
            detuning_hz,
            transition,
        });
    }
    Ok(weight / denominator)
}

fn check_manifold(optical: &OpticalParams, expected: GroundManifold) -> Result<()> {
    if optical.manifold != expected {
        return Err(Error::invalid(
            "manifold",
            format!("expected {expected:?} probe parameters, got {:?}", optical.manifold),
        ));
    }
    if !optical.detuning_hz.is_finite() || optical.detuning_hz == 0.0 {
        return Err(Error::invalid("detuning_hz", "must be finite and non-zero"));
    }
    Ok(())
}

/// Rank-1 (vector) polarizability a₁ of the F=4 ground state on the D2 line.
pub fn vector_polarizability_f4(optical: &OpticalParams) -> Result<f64> {
    vector_polarizability_f4_with_epsilon(optical, SINGULAR_EPSILON)
}

pub fn vector_polarizability_f4_with_epsilon(optical: &OpticalParams, epsilon: f64) -> Result<f64> {
    check_manifold(optical, GroundManifold::F4)?;
    let d = optical.detuning_hz;
    let s = &optical.splittings;
    let t35 = resonance_term(35.0, 1.0 - s.f3_f5_hz / d, d, "F=4 -> F'=3", epsilon)?;
    let t45 = resonance_term(21.0, 1.0 - s.f4_f5_hz / d, d, "F=4 -> F'=4", epsilon)?;
    Ok((-t35 - t45 + 176.0) / 120.0)
}

/// Rank-1 (vector) polarizability a₁ of the F=3 ground state on the D2 line.
pub fn vector_polarizability_f3(optical: &OpticalParams) -> Result<f64> {
    vector_polarizability_f3_with_epsilon(optical, SINGULAR_EPSILON)
}

pub fn vector_polarizability_f3_with_epsilon(optical: &OpticalParams, epsilon: f64) -> Result<f64> {
    check_manifold(optical, GroundManifold::F3)?;
    let d = optical.detuning_hz;
    let s = &optical.splittings;
    let t24 = resonance_term(45.0, 1.0 + s.f4_f2_hz / d, d, "F=3 -> F'=4", epsilon)?;
    let t23 = resonance_term(21.0, 1.0 + s.f3_f2_hz / d, d, "F=3 -> F'=3", epsilon)?;
    Ok((t24 - t23 - 80.0) / 56.0)
}

pub fn vector_polarizability(optical: &OpticalParams) -> Result<f64> {
    match optical.manifold {
        GroundManifold::F4 => vector_polarizability_f4(optical),
        GroundManifold::F3 => vector_polarizability_f3(optical),
    }
}

/// How much weaker the projection-noise contribution of F=3 atoms is than
/// that of F=4 atoms for the same probe: `(a₁⁴/Δ⁴)² / (a₁³/Δ³)²`.
pub fn f3_pn_suppression_ratio(f4: &OpticalParams, f3: &OpticalParams) -> Result<f64> {
    let r4 = vector_polarizability_f4(f4)? / f4.detuning_hz;
    let r3 = vector_polarizability_f3(f3)? / f3.detuning_hz;
    Ok((r4 * r4) / (r3 * r3))
}

/// Faraday coupling β = −Γ/(8AΔ) · λ²/(2π) · a₁ (dimensionless; Δ in rad/s).
pub fn faraday_coupling(optical: &OpticalParams) -> Result<f64> {
    optical.validate()?;
    let a1 = vector_polarizability(optical)?;
    let detuning = 2.0 * PI * optical.detuning_hz;
    let lambda2 = optical.wavelength_m * optical.wavelength_m;
    Ok(-optical.linewidth_rad_s / (8.0 * optical.beam_area_m2 * detuning) * lambda2 / (2.0 * PI) * a1)
}

/// Stroboscopic probing description. `kappa_hat_sq` is the coupling
/// accumulated over a pulse train of length `duration_s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StroboscopicParams {
    pub duty_cycle: f64,
    pub duration_s: f64,
    pub kappa_hat_sq: f64,
}

impl StroboscopicParams {
    pub fn new(duty_cycle: f64, duration_s: f64, kappa_hat_sq: f64) -> Result<Self> {
        let s = Self {
            duty_cycle,
            duration_s,
            kappa_hat_sq,
        };
        s.validate()?;
        Ok(s)
    }

    /// Builds the parameters from the main-text coupling κ̃² = 2κ̂².
    pub fn with_kappa_tilde_sq(duty_cycle: f64, duration_s: f64, kappa_tilde_sq: f64) -> Result<Self> {
        Self::new(duty_cycle, duration_s, kappa_tilde_sq / 2.0)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_unit_interval("duty_cycle", self.duty_cycle)?;
        ensure_positive("duration_s", self.duration_s)?;
        ensure_non_negative("kappa_hat_sq", self.kappa_hat_sq)?;
        if !self.kappa_hat_sq.is_finite() {
            return Err(Error::invalid("kappa_hat_sq", "must be finite"));
        }
        Ok(())
    }

    pub fn eta(&self) -> f64 {
        demodulation_overlap(self.duty_cycle)
    }

    pub fn back_action_fraction(&self) -> f64 {
        back_action_fraction(self.duty_cycle)
    }

    pub fn kappa_tilde_sq(&self) -> f64 {
        2.0 * self.kappa_hat_sq
    }

    /// Coupling per second of probing; κ̂² grows linearly with pulse length.
    pub fn kappa_rate(&self) -> f64 {
        self.kappa_hat_sq / self.duration_s
    }

    /// Same probe, different pulse length.
    pub fn rescaled(&self, duration_s: f64) -> Self {
        Self {
            duty_cycle: self.duty_cycle,
            duration_s,
            kappa_hat_sq: self.kappa_rate() * duration_s,
        }
    }
}

/// κ̂² = ¼ β² J_x Φ τ η for the given probe and macroscopic spin `jx`.
pub fn kappa_squared(optical: &OpticalParams, strobo: &StroboscopicParams, jx: f64) -> Result<f64> {
    ensure_positive("jx", jx)?;
    strobo.validate()?;
    let beta = faraday_coupling(optical)?;
    Ok(0.25 * beta * beta * jx * optical.photon_flux_per_s * strobo.duration_s * strobo.eta())
}

/// Readout variance decomposed into shot, projection, back-action and
/// electronic noise. All components share one unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseBudget {
    pub sn: f64,
    pub pn: f64,
    pub ban: f64,
    pub en: f64,
    pub total: f64,
}

impl NoiseBudget {
    pub fn new(sn: f64, pn: f64, ban: f64, en: f64) -> Self {
        Self {
            sn,
            pn,
            ban,
            en,
            total: sn + pn + ban + en,
        }
    }
}

/// Cosine-quadrature noise of a stroboscopic pulse train:
/// `sn_scale·η·[1 + κ̂² + C κ̂⁴/3] + en`.
///
/// `sn_scale` is the shot noise of the same pulse train at η = 1 (Φτ/8 in
/// photon units).
pub fn stroboscopic_noise_budget(strobo: &StroboscopicParams, sn_scale: f64, en: f64) -> Result<NoiseBudget> {
    strobo.validate()?;
    ensure_positive("sn_scale", sn_scale)?;
    ensure_non_negative("en", en)?;
    let sn = sn_scale * strobo.eta();
    let k2 = strobo.kappa_hat_sq;
    let pn = sn * k2;
    let ban = sn * k2 * k2 / 3.0 * strobo.back_action_fraction();
    Ok(NoiseBudget::new(sn, pn, ban, en))
}

/// Bracketed noise factor in the main-text parameterization,
/// `1 + κ̃²/2 + C κ̃⁴/12`.
pub fn noise_factor_tilde(kappa_tilde_sq: f64, duty_cycle: f64) -> f64 {
    1.0 + kappa_tilde_sq / 2.0
        + back_action_fraction(duty_cycle) * kappa_tilde_sq * kappa_tilde_sq / 12.0
}

/// Continuous-probing noise factor `1 + κ²/2 + κ⁴/12`.
pub fn continuous_noise_factor(kappa: f64) -> f64 {
    let k2 = kappa * kappa;
    1.0 + k2 / 2.0 + k2 * k2 / 12.0
}

/// Inverse signal-to-noise ratio of continuous probing (up to a constant).
pub fn snr_inverse(kappa: f64) -> f64 {
    continuous_noise_factor(kappa).sqrt() / kappa
}

/// Standard quantum limit of continuous probing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SqlOptimum {
    /// κ at the optimum, 12^{1/4}.
    pub kappa_opt: f64,
    /// Total noise relative to projection noise at the optimum, 1 + 2/√3.
    pub variance_ratio: f64,
    pub std_ratio: f64,
}

pub fn sql_optimum() -> SqlOptimum {
    let kappa_opt = 12f64.powf(0.25);
    let k2 = kappa_opt * kappa_opt;
    let variance_ratio = 2.0 * continuous_noise_factor(kappa_opt) / k2;
    SqlOptimum {
        kappa_opt,
        variance_ratio,
        std_ratio: variance_ratio.sqrt(),
    }
}

/// Golden-section minimization of [`snr_inverse`] on `[lo, hi]`.
pub fn minimize_snr_inverse(lo: f64, hi: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (snr_inverse(c), snr_inverse(d));
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = snr_inverse(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = snr_inverse(d);
        }
    }
    0.5 * (a + b)
}

/// Relative magnetic sensitivity of back-action-evading readout,
/// `√(1 + ξ²κ̃²/2) / κ̃`. Use `xi2 = 1` for a coherent spin state.
pub fn sensitivity(strobo: &StroboscopicParams, xi2: f64) -> Result<f64> {
    if !(xi2 > 0.0 && xi2 <= 1.0) {
        return Err(Error::invalid("xi2", format!("must lie in (0, 1], got {xi2}")));
    }
    let kt2 = strobo.kappa_tilde_sq();
    if !(kt2 > 0.0) {
        return Err(Error::ZeroCoupling);
    }
    Ok((1.0 + xi2 * kt2 / 2.0).sqrt() / kt2.sqrt())
}

/// Squeezed over unsqueezed sensitivity for a verification window whose
/// projection noise is `pn_over_sn` times its shot noise:
/// `√(SN + ξ²PN) / √(SN + PN)`.
pub fn squeezing_improvement_ratio(pn_over_sn: f64, xi2: f64) -> Result<f64> {
    // κ̃²/2 is the PN/SN ratio of the window
    let strobo = StroboscopicParams::new(0.0, 1.0, pn_over_sn)?;
    Ok(sensitivity(&strobo, xi2)? / sensitivity(&strobo, 1.0)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sinc_limit_is_continuous() {
        assert_eq!(sinc(0.0), 1.0);
        for x in [1e-5, 9.9e-5, 1.01e-4, 1e-3] {
            assert!((sinc(x) - x.sin() / x).abs() < 1e-15, "x = {x}");
        }
        assert!(sinc(PI).abs() < 1e-16);
    }

    #[test]
    fn overlap_and_back_action_endpoints() {
        assert_eq!(demodulation_overlap(0.0), 2.0);
        assert!((demodulation_overlap(1.0) - 1.0).abs() < 1e-15);
        assert_eq!(back_action_fraction(0.0), 0.0);
        assert!((back_action_fraction(1.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn back_action_fraction_monotone_on_dense_grid() {
        let mut prev = back_action_fraction(0.0);
        for i in 1..=10_000 {
            let c = back_action_fraction(i as f64 / 10_000.0);
            assert!(c >= prev, "C decreased at D = {}", i as f64 / 10_000.0);
            assert!((0.0..=1.0).contains(&c));
            prev = c;
        }
    }

    #[test]
    fn f4_polarizability_reference_value() {
        let a1 = vector_polarizability_f4(&OpticalParams::f4(-1.82e9)).unwrap();
        assert!((a1 - 1.079).abs() < 1e-3, "a1 = {a1}");
    }

    #[test]
    fn f3_polarizability_reference_value() {
        let a1 = vector_polarizability_f3(&OpticalParams::f3(6.76e9)).unwrap();
        assert!((a1 + 1.032).abs() < 2e-3, "a1 = {a1}");
    }

    #[test]
    fn far_detuned_limits() {
        let far = 1e6 * 452.24e6;
        let a4 = vector_polarizability_f4(&OpticalParams::f4(-far)).unwrap();
        let a3 = vector_polarizability_f3(&OpticalParams::f3(far)).unwrap();
        assert!((a4 - 1.0).abs() < 1e-3);
        assert!((a3 + 1.0).abs() < 1e-3);
    }

    // Independent evaluation of the three-term formulas, written out term by
    // term with the hyperfine offsets as literals.
    fn a1_f4_oracle(d: f64) -> f64 {
        (-35.0 / (1.0 - 452.24e6 / d) - 21.0 / (1.0 - 251.00e6 / d) + 176.0) / 120.0
    }

    fn a1_f3_oracle(d: f64) -> f64 {
        (45.0 / (1.0 + 352.45e6 / d) - 21.0 / (1.0 + 151.21e6 / d) - 80.0) / 56.0
    }

    #[test]
    fn polarizability_matches_direct_evaluation() {
        // Frozen from the oracle: a1(F=4, -1 GHz) = 1.1396786..., a1(F=3, 5 GHz) = -1.0425...
        let a4 = vector_polarizability_f4(&OpticalParams::f4(-1.0e9)).unwrap();
        assert!((a4 - a1_f4_oracle(-1.0e9)).abs() < 1e-14);
        let a3 = vector_polarizability_f3(&OpticalParams::f3(5.0e9)).unwrap();
        assert!((a3 - a1_f3_oracle(5.0e9)).abs() < 1e-14);
    }

    #[test]
    fn suppression_ratio_reference_and_symmetry() {
        let r = f3_pn_suppression_ratio(&OpticalParams::f4(-1.82e9), &OpticalParams::f3(6.76e9)).unwrap();
        assert!((r - 15.0).abs() < 1.0, "ratio = {r}");

        let oracle = (a1_f4_oracle(-1.0e9) / -1.0e9).powi(2) / (a1_f3_oracle(7.58e9) / 7.58e9).powi(2);
        let r2 = f3_pn_suppression_ratio(&OpticalParams::f4(-1.0e9), &OpticalParams::f3(7.58e9)).unwrap();
        assert!((r2 - oracle).abs() < 1e-12 * oracle);

        // With both a1 and |Δ| forced equal the ratio is exactly one.
        let mut f4 = OpticalParams::f4(-5.0e12);
        f4.splittings = HyperfineSplittings {
            f3_f5_hz: 0.0,
            f4_f5_hz: 0.0,
            f3_f2_hz: 0.0,
            f4_f2_hz: 0.0,
        };
        let mut f3 = OpticalParams::f3(5.0e12);
        f3.splittings = f4.splittings;
        // a1 = 1 and -1 exactly without splittings
        assert_eq!(f3_pn_suppression_ratio(&f4, &f3).unwrap(), 1.0);
    }

    #[test]
    fn same_laser_detuning_matches_reference_pair() {
        let d3 = same_laser_f3_detuning(-1.82e9, &PhysicalConstants::default());
        assert!((d3 - 6.76e9).abs() < 0.02e9, "d3 = {d3}");
    }

    #[test]
    fn singular_detuning_detected() {
        let err = vector_polarizability_f4(&OpticalParams::f4(452.24e6)).unwrap_err();
        assert!(matches!(err, Error::SingularDetuning { .. }));
        let err = vector_polarizability_f3(&OpticalParams::f3(-151.21e6)).unwrap_err();
        assert!(matches!(err, Error::SingularDetuning { .. }));
        // wrong manifold and zero detuning are validation errors
        assert!(vector_polarizability_f4(&OpticalParams::f3(6.76e9)).is_err());
        assert!(vector_polarizability_f4(&OpticalParams::f4(0.0)).is_err());
    }

    #[test]
    fn kappa_squared_scaling() {
        let strobo = StroboscopicParams::new(0.15, 220e-6, 0.0).unwrap();
        let jx = 4.0 * 1.5e9;
        let dark = OpticalParams::f4(-1.82e9);
        assert_eq!(kappa_squared(&dark, &strobo, jx).unwrap(), 0.0);

        let lit = dark.with_photon_flux(5e13);
        let k = kappa_squared(&lit, &strobo, jx).unwrap();
        let k2 = kappa_squared(&lit.with_photon_flux(1e14), &strobo, jx).unwrap();
        assert!((k2 / k - 2.0).abs() < 1e-12);

        // far detuned a1 is constant, so doubling Δ quarters κ̂²
        let far = OpticalParams::f4(-2e13).with_photon_flux(5e13);
        let farther = OpticalParams::f4(-4e13).with_photon_flux(5e13);
        let ratio = kappa_squared(&farther, &strobo, jx).unwrap() / kappa_squared(&far, &strobo, jx).unwrap();
        assert!((ratio - 0.25).abs() < 1e-4, "ratio = {ratio}");
    }

    #[test]
    fn kappa_squared_two_stage_oracle() {
        let optical = OpticalParams::f4(-1.82e9).with_photon_flux(5e13);
        let strobo = StroboscopicParams::new(0.15, 220e-6, 0.0).unwrap();
        let jx = 4.0 * 1.5e9 * 0.975;
        // Stage 1: β from the raw constants.
        let a1 = a1_f4_oracle(-1.82e9);
        let gamma = 2.0 * PI * 5.234e6;
        let lambda: f64 = 852.34727e-9;
        let area = 2.5e-7;
        let beta = -gamma / (8.0 * area * 2.0 * PI * -1.82e9) * lambda.powi(2) / (2.0 * PI) * a1;
        assert!((faraday_coupling(&optical).unwrap() - beta).abs() < 1e-12 * beta.abs());
        // Stage 2: κ̂².
        let eta = 1.0 + (PI * 0.15).sin() / (PI * 0.15);
        let expected = 0.25 * beta * beta * jx * 5e13 * 220e-6 * eta;
        let got = kappa_squared(&optical, &strobo, jx).unwrap();
        assert!((got - expected).abs() < 1e-12 * expected, "{got} vs {expected}");
        // A 12 µW-scale probe gives order-unity coupling.
        assert!(got > 0.5 && got < 10.0, "κ̂² = {got}");
    }

    #[test]
    fn budget_limits() {
        let delta = StroboscopicParams::new(0.0, 1e-4, 3.0).unwrap();
        let b = stroboscopic_noise_budget(&delta, 1.0, 0.0).unwrap();
        assert_eq!(b.ban, 0.0);
        assert_eq!(b.sn, 2.0);

        let cont = StroboscopicParams::new(1.0, 1e-4, 1.3).unwrap();
        let b = stroboscopic_noise_budget(&cont, 1.0, 0.0).unwrap();
        let kt2 = cont.kappa_tilde_sq();
        let expected = 1.0 + kt2 / 2.0 + kt2 * kt2 / 12.0;
        assert!((b.total - expected).abs() < 1e-14);
    }

    #[test]
    fn budget_at_fifteen_percent_duty() {
        // Oracle: η and C evaluated directly from sin.
        let x = PI * 0.15;
        let s = x.sin() / x;
        let eta = 1.0 + s;
        let c = (1.0 - s) / (1.0 + s);
        let strobo = StroboscopicParams::new(0.15, 1e-4, 1.0).unwrap();
        let b = stroboscopic_noise_budget(&strobo, 2.5, 0.1).unwrap();
        assert!((b.sn - 2.5 * eta).abs() < 1e-14);
        assert!((b.pn - 2.5 * eta).abs() < 1e-14);
        assert!((b.ban - 2.5 * eta * c / 3.0).abs() < 1e-14);
        assert_eq!(b.en, 0.1);
        assert_eq!(b.total, b.sn + b.pn + b.ban + b.en);
    }

    #[test]
    fn budget_rejects_bad_scale() {
        let strobo = StroboscopicParams::new(0.5, 1e-4, 1.0).unwrap();
        assert!(stroboscopic_noise_budget(&strobo, 0.0, 0.0).is_err());
        assert!(stroboscopic_noise_budget(&strobo, 1.0, -1.0).is_err());
    }

    #[test]
    fn sql_values() {
        let sql = sql_optimum();
        assert!((sql.kappa_opt.powi(4) - 12.0).abs() < 1e-12);
        assert!((sql.variance_ratio - (1.0 + 2.0 / 3f64.sqrt())).abs() < 1e-12);
        assert!((sql.variance_ratio - 2.1547).abs() < 1e-4);
        assert!((sql.std_ratio - 1.47).abs() < 0.005);
    }

    #[test]
    fn sql_numerical_minimizers_agree() {
        // brute-force grid over (0, 5]
        let (mut best_k, mut best) = (0.0, f64::INFINITY);
        for i in 1..=500_000 {
            let k = 5.0 * i as f64 / 500_000.0;
            let v = snr_inverse(k);
            if v < best {
                best = v;
                best_k = k;
            }
        }
        assert!((best_k.powi(4) - 12.0).abs() < 1e-2);
        let golden = minimize_snr_inverse(1e-3, 5.0, 1e-10);
        assert!((golden.powi(4) - 12.0).abs() < 1e-2);
    }

    #[test]
    fn sensitivity_reference_ratios() {
        let xi2 = 10f64.powf(-0.18);
        let r = squeezing_improvement_ratio(1.75, xi2).unwrap();
        assert!((r - 0.89).abs() < 0.005, "r = {r}");
        let r = squeezing_improvement_ratio(1.2 * 1.75, xi2).unwrap();
        assert!((r - 0.88).abs() < 0.005, "r = {r}");
    }

    #[test]
    fn sensitivity_errors_and_css_case() {
        let zero = StroboscopicParams::new(0.0, 1e-4, 0.0).unwrap();
        assert!(matches!(sensitivity(&zero, 1.0), Err(Error::ZeroCoupling)));
        let s = StroboscopicParams::new(0.0, 1e-4, 2.0).unwrap();
        let kt2: f64 = 4.0;
        assert!((sensitivity(&s, 1.0).unwrap() - (1.0 + kt2 / 2.0).sqrt() / kt2.sqrt()).abs() < 1e-15);
        assert!(sensitivity(&s, 0.0).is_err());
        assert!(sensitivity(&s, 1.5).is_err());
    }

    proptest! {
        #[test]
        fn parameterizations_agree(k2 in 0.0f64..50.0, d in 0.0f64..=1.0) {
            let strobo = StroboscopicParams::new(d, 1e-4, k2).unwrap();
            let eta = strobo.eta();
            let hat = eta * (1.0 + k2 + k2 * k2 * strobo.back_action_fraction() / 3.0);
            let tilde = eta * noise_factor_tilde(strobo.kappa_tilde_sq(), d);
            prop_assert!((hat - tilde).abs() <= 1e-12 * hat.max(1.0));
        }

        #[test]
        fn budget_total_is_exact_sum(k2 in 0.0f64..20.0, d in 0.0f64..=1.0, sn in 1e-3f64..1e3, en in 0.0f64..10.0) {
            let strobo = StroboscopicParams::new(d, 1e-4, k2).unwrap();
            let b = stroboscopic_noise_budget(&strobo, sn, en).unwrap();
            prop_assert_eq!(b.total, b.sn + b.pn + b.ban + b.en);
            prop_assert!(b.sn >= 0.0 && b.pn >= 0.0 && b.ban >= 0.0 && b.en >= 0.0);
        }

        #[test]
        fn sensitivity_decreases_with_coupling(k2 in 0.01f64..20.0, xi2 in 0.05f64..=1.0) {
            let a = StroboscopicParams::new(0.0, 1e-4, k2).unwrap();
            let b = StroboscopicParams::new(0.0, 1e-4, k2 * 1.1).unwrap();
            prop_assert!(sensitivity(&b, xi2).unwrap() < sensitivity(&a, xi2).unwrap());
        }
    }
}
