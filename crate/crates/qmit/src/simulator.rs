//! Gaussian-state shot simulator for the squeeze / gap / verify sequence.
//!
//! # Model
//!
//! The latent state is the normalized probed spin component
//! `X = J_z / √(F·N_A/2)` and a conjugate back-action variable `Y`. Time is
//! split into bins of width δ and each bin is propagated exactly:
//!
//! * `X` is an Ornstein–Uhlenbeck process relaxing at 1/T₂ towards zero with
//!   stationary variance `c(p)` (the polarization correction).
//! * `Y` is a unit random walk started afresh at each probe pulse. It stands
//!   for the back-action that a finite duty cycle leaks into the measured
//!   quadrature.
//! * Each bin of pulse `P ∈ {A, B}` adds to `Q_P`
//!   `g(t)·∫X dt + g_y(t)·∫Y dt + white noise`, with
//!   `g² = η·r·k·e^{−t/T₁}·cos²φ_d`, `g_y² = η·r·C·k²·e^{−2t/T₁}·cos²φ_d`,
//!   and white variance `(η + en)·r·δ`. Here `k` is κ̂² per second,
//!   `r` = [`SHOT_NOISE_RATE`] and `φ_d` the demodulation mismatch.
//!
//! With T₁ = T₂ = ∞ the pulse variance is exactly
//! `η·r·τ·(1 + c·κ̂² + C·κ̂⁴/3) + en·r·τ`, the closed-form stroboscopic
//! budget. Between pulses `X` decays by
//! `a = exp(−gap/T₂ − Γ_coil·gap − (gap/τ_dark)²)` while fresh noise restores
//! its stationary variance, and an optional RF pulse at the end of the gap
//! shifts its mean.
//!
//! [`ShotModel::moments`] propagates the mean and covariance of `(X, Y, Q_A,
//! Q_B)` through the same bins that [`ShotModel::simulate_shot`] samples, so
//! it is the exact oracle for the Monte Carlo.

use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{Matrix4, Vector4};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::StroboscopicParams;
use crate::error::{ensure_non_negative, ensure_positive, Error, Result};
use crate::rng::{record_seed, rng_from_seed};
use crate::spin::{polarization_correction, transverse_response, EnsembleParams, RfPulseParams};

/// Shot-noise variance accumulated per second of continuous probing, in the
/// simulator's variance unit. One unit is the shot noise of 1 µs of probing.
pub const SHOT_NOISE_RATE: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceParams {
    pub tau_a_s: f64,
    pub gap_s: f64,
    pub tau_b_s: f64,
    /// RF pulse filling the last `duration_s` of the gap.
    #[serde(default)]
    pub rf: Option<RfPulseParams>,
    /// Mismatch between demodulation and stroboscopic phase.
    #[serde(default)]
    pub demod_phase_rad: f64,
    pub bin_width_s: f64,
}

impl SequenceParams {
    pub fn new(tau_a_s: f64, gap_s: f64, tau_b_s: f64, bin_width_s: f64) -> Result<Self> {
        let s = Self {
            tau_a_s,
            gap_s,
            tau_b_s,
            rf: None,
            demod_phase_rad: 0.0,
            bin_width_s,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn with_rf(mut self, rf: RfPulseParams) -> Self {
        self.rf = Some(rf);
        self
    }

    pub fn validate(&self) -> Result<()> {
        ensure_positive("tau_a_s", self.tau_a_s)?;
        ensure_positive("tau_b_s", self.tau_b_s)?;
        ensure_non_negative("gap_s", self.gap_s)?;
        ensure_positive("bin_width_s", self.bin_width_s)?;
        if !self.demod_phase_rad.is_finite() {
            return Err(Error::invalid("demod_phase_rad", "must be finite"));
        }
        bins_in("tau_a_s", self.tau_a_s, self.bin_width_s)?;
        bins_in("tau_b_s", self.tau_b_s, self.bin_width_s)?;
        if let Some(rf) = &self.rf {
            rf.validate()?;
            if !self.gap_s.is_finite() || rf.duration_s > self.gap_s * (1.0 + 1e-12) {
                return Err(Error::invalid(
                    "rf.duration_s",
                    format!("RF pulse of {} s does not fit in a gap of {} s", rf.duration_s, self.gap_s),
                ));
            }
        }
        Ok(())
    }

    pub fn bins_a(&self) -> usize {
        (self.tau_a_s / self.bin_width_s).round() as usize
    }

    pub fn bins_b(&self) -> usize {
        (self.tau_b_s / self.bin_width_s).round() as usize
    }
}

fn bins_in(field: &str, tau: f64, width: f64) -> Result<usize> {
    let n = (tau / width).round();
    if n < 1.0 || (n * width - tau).abs() > 1e-9 * tau {
        return Err(Error::invalid(
            field,
            format!("{tau} s is not a whole number (>= 1) of {width} s bins"),
        ));
    }
    Ok(n as usize)
}

/// Decay channels. Infinite times switch a channel off.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoherenceModel {
    pub t2_s: f64,
    pub t1_s: f64,
    /// Extra decorrelation rate during the gap, e.g. from RF coils left
    /// connected to the generator.
    #[serde(default)]
    pub gap_rate_per_s: f64,
    /// Gaussian dephasing time of the unprobed gap; the gap correlation picks
    /// up a factor `exp(−(gap/τ)²)`.
    #[serde(default = "infinity")]
    pub dark_dephasing_s: f64,
}

fn infinity() -> f64 {
    f64::INFINITY
}

impl DecoherenceModel {
    pub fn from_ensemble(ens: &EnsembleParams) -> Self {
        Self {
            t2_s: ens.t2_s,
            t1_s: ens.t1_s,
            gap_rate_per_s: 0.0,
            dark_dephasing_s: f64::INFINITY,
        }
    }

    /// No decay of any kind.
    pub fn none() -> Self {
        Self {
            t2_s: f64::INFINITY,
            t1_s: f64::INFINITY,
            gap_rate_per_s: 0.0,
            dark_dephasing_s: f64::INFINITY,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [("t2_s", self.t2_s), ("t1_s", self.t1_s), ("dark_dephasing_s", self.dark_dephasing_s)] {
            if !(v > 0.0) {
                return Err(Error::invalid(field, format!("must be > 0, got {v}")));
            }
        }
        ensure_non_negative("gap_rate_per_s", self.gap_rate_per_s)?;
        if !self.gap_rate_per_s.is_finite() {
            return Err(Error::invalid("gap_rate_per_s", "must be finite"));
        }
        Ok(())
    }

    /// Correlation of `X` across an unprobed gap.
    pub fn gap_correlation(&self, gap_s: f64) -> f64 {
        if gap_s == 0.0 {
            return 1.0;
        }
        let dark = gap_s / self.dark_dephasing_s;
        (-gap_s / self.t2_s - self.gap_rate_per_s * gap_s - dark * dark).exp()
    }
}

/// One repetition of the sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotRecord {
    pub index: u64,
    pub seed: u64,
    pub q_a: f64,
    /// Sum of `q_b_bins`, accumulated in bin order.
    pub q_b: f64,
    pub q_b_bins: Vec<f64>,
    pub rf_phase_rad: f64,
    pub position_m: f64,
}

impl ShotRecord {
    /// `Q_B` restricted to its first `bins` bins.
    pub fn q_b_truncated(&self, bins: usize) -> f64 {
        self.q_b_bins.iter().take(bins).sum()
    }
}

/// Exact first and second moments of `(Q_A, Q_B)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairMoments {
    pub mean_a: f64,
    pub mean_b: f64,
    pub var_a: f64,
    pub var_b: f64,
    pub cov_ab: f64,
    /// Shot-noise part of `var_b`.
    pub sn_b: f64,
    /// Electronic-noise part of `var_b`.
    pub en_b: f64,
}

impl PairMoments {
    pub fn alpha(&self) -> f64 {
        self.cov_ab / self.var_a
    }

    pub fn conditional_var_b(&self) -> f64 {
        self.var_b - self.cov_ab * self.cov_ab / self.var_a
    }

    /// Predicted squeezing parameter.
    pub fn xi2(&self) -> f64 {
        let floor = self.sn_b + self.en_b;
        (self.conditional_var_b() - floor) / (self.var_b - floor)
    }

    pub fn xi2_db(&self) -> f64 {
        10.0 * self.xi2().log10()
    }
}

#[derive(Debug, Clone, Copy)]
struct OuBin {
    a: f64,
    b: f64,
    vx: f64,
    cxi: f64,
    vi: f64,
    // sampling factors for (ΔX noise, ∫X noise)
    sx: f64,
    ci: f64,
    si: f64,
}

/// 1 − 2(1−e^{−x})/x + (1−e^{−2x})/(2x), cancellation-free for small x.
fn ou_integral_shape(x: f64) -> f64 {
    if x < 0.5 {
        let mut sum = 0.0;
        let mut pow = 1.0;
        let mut fact = 1.0;
        for n in 1..24 {
            pow *= -x;
            fact *= (n + 1) as f64;
            let two_n = 2f64.powi(n);
            sum += pow * (two_n - 2.0) / fact;
        }
        sum
    } else {
        1.0 + 2.0 * (-x).exp_m1() / x - (-2.0 * x).exp_m1() / (2.0 * x)
    }
}

impl OuBin {
    fn new(rate: f64, delta: f64, c: f64) -> Self {
        if rate == 0.0 {
            return Self {
                a: 1.0,
                b: delta,
                vx: 0.0,
                cxi: 0.0,
                vi: 0.0,
                sx: 0.0,
                ci: 0.0,
                si: 0.0,
            };
        }
        let x = rate * delta;
        let one_minus_a = -(-x).exp_m1();
        let a = 1.0 - one_minus_a;
        let b = delta * one_minus_a / x;
        let vx = -c * (-2.0 * x).exp_m1();
        let cxi = c * delta * one_minus_a * one_minus_a / x;
        let vi = 2.0 * c * delta * delta * ou_integral_shape(x) / x;
        let sx = vx.sqrt();
        let ci = if sx > 0.0 { cxi / sx } else { 0.0 };
        let si = (vi - ci * ci).max(0.0).sqrt();
        Self { a, b, vx, cxi, vi, sx, ci, si }
    }
}

#[derive(Debug, Clone, Copy)]
struct BinGains {
    g: f64,
    gy: f64,
}

/// Precomputed propagation of one sequence configuration.
#[derive(Debug, Clone)]
pub struct ShotModel {
    ens: EnsembleParams,
    strobo: StroboscopicParams,
    seq: SequenceParams,
    dec: DecoherenceModel,
    en: f64,
    stationary_var: f64,
    ou: OuBin,
    gains_a: Vec<BinGains>,
    gains_b: Vec<BinGains>,
    white_sd: f64,
    gap_a: f64,
    gap_sd: f64,
    rf_shift: f64,
    position_m: f64,
}

impl ShotModel {
    pub fn new(
        ens: &EnsembleParams,
        strobo: &StroboscopicParams,
        seq: &SequenceParams,
        dec: &DecoherenceModel,
        en: f64,
    ) -> Result<Self> {
        ens.validate()?;
        strobo.validate()?;
        seq.validate()?;
        dec.validate()?;
        ensure_non_negative("en", en)?;
        if !en.is_finite() {
            return Err(Error::invalid("en", "must be finite"));
        }

        let c = polarization_correction(ens.spin_f, ens.polarization);
        let delta = seq.bin_width_s;
        let eta = strobo.eta();
        let back = strobo.back_action_fraction();
        let k = strobo.kappa_rate();
        let r = SHOT_NOISE_RATE;
        let demod = seq.demod_phase_rad.cos();
        let gains = |t0: f64, n: usize| -> Vec<BinGains> {
            (0..n)
                .map(|j| {
                    let t = t0 + (j as f64 + 0.5) * delta;
                    let decay = (-t / dec.t1_s).exp();
                    BinGains {
                        g: (eta * r * k * decay).sqrt() * demod,
                        gy: (eta * r * back).sqrt() * k * decay * demod,
                    }
                })
                .collect()
        };
        let gains_a = gains(0.0, seq.bins_a());
        let gains_b = gains(seq.tau_a_s + seq.gap_s, seq.bins_b());

        let gap_a = dec.gap_correlation(seq.gap_s);
        let rf_shift = match &seq.rf {
            Some(rf) => {
                let t_end = seq.tau_a_s + seq.gap_s;
                let norm = (0.5 * ens.spin_f as f64 * ens.atom_number).sqrt();
                transverse_response(ens, rf) / norm * rf.phase_rad.cos() * (-t_end / (2.0 * dec.t1_s)).exp()
            }
            None => 0.0,
        };

        Ok(Self {
            ens: *ens,
            strobo: *strobo,
            seq: *seq,
            dec: *dec,
            en,
            stationary_var: c,
            ou: OuBin::new(1.0 / dec.t2_s, delta, c),
            gains_a,
            gains_b,
            white_sd: ((eta + en) * r * delta).sqrt(),
            gap_a,
            gap_sd: (c * (1.0 - gap_a * gap_a)).max(0.0).sqrt(),
            rf_shift,
            position_m: 0.0,
        })
    }

    /// Position label written into every record.
    pub fn with_position(mut self, position_m: f64) -> Self {
        self.position_m = position_m;
        self
    }

    pub fn ensemble(&self) -> &EnsembleParams {
        &self.ens
    }

    pub fn stroboscopic(&self) -> &StroboscopicParams {
        &self.strobo
    }

    pub fn sequence(&self) -> &SequenceParams {
        &self.seq
    }

    pub fn decoherence(&self) -> &DecoherenceModel {
        &self.dec
    }

    pub fn electronic_noise(&self) -> f64 {
        self.en
    }

    /// Mean shift of `X` produced by the RF pulse.
    pub fn rf_shift(&self) -> f64 {
        self.rf_shift
    }

    /// Shot-noise variance of `Q_B` over its first `bins` bins.
    pub fn sn_b(&self, bins: usize) -> f64 {
        self.strobo.eta() * SHOT_NOISE_RATE * self.seq.bin_width_s * bins as f64
    }

    /// Electronic-noise variance of `Q_B` over its first `bins` bins.
    pub fn en_b(&self, bins: usize) -> f64 {
        self.en * SHOT_NOISE_RATE * self.seq.bin_width_s * bins as f64
    }

    /// Same configuration with `Q_B` cut after `bins` bins.
    pub fn truncated(&self, bins: usize) -> Result<Self> {
        if bins == 0 || bins > self.gains_b.len() {
            return Err(Error::invalid(
                "bins",
                format!("must lie in 1..={}, got {bins}", self.gains_b.len()),
            ));
        }
        let mut m = self.clone();
        m.gains_b.truncate(bins);
        m.seq.tau_b_s = bins as f64 * self.seq.bin_width_s;
        Ok(m)
    }

    fn pulse_moments(&self, mean: &mut Vector4<f64>, cov: &mut Matrix4<f64>, gains: &[BinGains], qi: usize) {
        let delta = self.seq.bin_width_s;
        let ou = &self.ou;
        let white = self.white_sd * self.white_sd;
        for bin in gains {
            let mut f = Matrix4::identity();
            f[(0, 0)] = ou.a;
            f[(qi, 0)] = bin.g * ou.b;
            f[(qi, 1)] = bin.gy * delta;
            let mut n = Matrix4::zeros();
            n[(0, 0)] = ou.vx;
            n[(0, qi)] = bin.g * ou.cxi;
            n[(qi, 0)] = n[(0, qi)];
            n[(1, 1)] = delta;
            n[(1, qi)] = bin.gy * delta * delta / 2.0;
            n[(qi, 1)] = n[(1, qi)];
            n[(qi, qi)] = bin.g * bin.g * ou.vi + bin.gy * bin.gy * delta.powi(3) / 3.0 + white;
            *mean = f * *mean;
            *cov = f * *cov * f.transpose() + n;
        }
    }

    /// Exact mean and covariance of `(Q_A, Q_B)` under the binned model.
    pub fn moments(&self) -> PairMoments {
        let mut mean = Vector4::zeros();
        let mut cov = Matrix4::zeros();
        cov[(0, 0)] = self.stationary_var;
        self.pulse_moments(&mut mean, &mut cov, &self.gains_a, 2);

        // back-action walk restarts with the next pulse
        for i in 0..4 {
            cov[(1, i)] = 0.0;
            cov[(i, 1)] = 0.0;
        }
        mean[1] = 0.0;
        let mut f = Matrix4::identity();
        f[(0, 0)] = self.gap_a;
        cov = f * cov * f.transpose();
        cov[(0, 0)] += self.gap_sd * self.gap_sd;
        mean[0] = self.gap_a * mean[0] + self.rf_shift;

        self.pulse_moments(&mut mean, &mut cov, &self.gains_b, 3);
        let bins = self.gains_b.len();
        PairMoments {
            mean_a: mean[2],
            mean_b: mean[3],
            var_a: cov[(2, 2)],
            var_b: cov[(3, 3)],
            cov_ab: cov[(2, 3)],
            sn_b: self.sn_b(bins),
            en_b: self.en_b(bins),
        }
    }

    fn sample_pulse<R: Rng>(&self, rng: &mut R, x: &mut f64, gains: &[BinGains], mut out: impl FnMut(f64)) {
        let delta = self.seq.bin_width_s;
        let sd_w = delta.sqrt();
        let j_w = delta.powf(1.5) / 2.0;
        let j_own = (delta.powi(3) / 12.0).sqrt();
        let ou = &self.ou;
        let mut y = 0.0;
        for bin in gains {
            let z: [f64; 5] = std::array::from_fn(|_| rng.sample(StandardNormal));
            let x_int = ou.b * *x + ou.ci * z[0] + ou.si * z[1];
            *x = ou.a * *x + ou.sx * z[0];
            let y_int = y * delta + j_w * z[2] + j_own * z[3];
            y += sd_w * z[2];
            out(bin.g * x_int + bin.gy * y_int + self.white_sd * z[4]);
        }
    }

    /// One record with the given seed and repetition index.
    pub fn simulate_record(&self, seed: u64, index: u64) -> ShotRecord {
        let mut rng = rng_from_seed(seed);
        let mut x = self.stationary_var.sqrt() * rng.sample::<f64, _>(StandardNormal);
        let mut q_a = 0.0;
        self.sample_pulse(&mut rng, &mut x, &self.gains_a, |q| q_a += q);
        x = self.gap_a * x + self.gap_sd * rng.sample::<f64, _>(StandardNormal) + self.rf_shift;
        let mut q_b_bins = Vec::with_capacity(self.gains_b.len());
        self.sample_pulse(&mut rng, &mut x, &self.gains_b, |q| q_b_bins.push(q));
        ShotRecord {
            index,
            seed,
            q_a,
            q_b: q_b_bins.iter().sum(),
            q_b_bins,
            rf_phase_rad: self.seq.rf.map_or(0.0, |rf| rf.phase_rad),
            position_m: self.position_m,
        }
    }

    pub fn simulate_shot(&self, seed: u64) -> ShotRecord {
        self.simulate_record(seed, 0)
    }

    /// `n_reps` records seeded by [`record_seed`]; identical for any thread
    /// count.
    pub fn simulate_batch(&self, n_reps: usize, base_seed: u64) -> Result<Vec<ShotRecord>> {
        self.simulate_batch_with_progress(n_reps, base_seed, |_| {})
    }

    /// Like [`simulate_batch`](Self::simulate_batch), calling `progress` with
    /// the number of finished records every 1024 records and at the end.
    pub fn simulate_batch_with_progress(
        &self,
        n_reps: usize,
        base_seed: u64,
        progress: impl Fn(usize) + Sync,
    ) -> Result<Vec<ShotRecord>> {
        if n_reps == 0 {
            return Err(Error::invalid("n_reps", "must be at least 1"));
        }
        let done = AtomicUsize::new(0);
        let records = (0..n_reps as u64)
            .into_par_iter()
            .map(|i| {
                let rec = self.simulate_record(record_seed(base_seed, i), i);
                let finished = done.fetch_add(1, Ordering::Relaxed) + 1;
                if finished % 1024 == 0 || finished == n_reps {
                    progress(finished);
                }
                rec
            })
            .collect();
        Ok(records)
    }

    /// Predicted squeezing for each gap, all else fixed.
    pub fn sweep_gap(&self, gaps_s: &[f64]) -> Result<Vec<(f64, f64)>> {
        gaps_s
            .iter()
            .map(|&gap| {
                let seq = SequenceParams { gap_s: gap, ..self.seq };
                let m = ShotModel::new(&self.ens, &self.strobo, &seq, &self.dec, self.en)?;
                Ok((gap, m.moments().xi2_db()))
            })
            .collect()
    }
}

pub fn simulate_shot(
    ens: &EnsembleParams,
    strobo: &StroboscopicParams,
    seq: &SequenceParams,
    dec: &DecoherenceModel,
    en: f64,
    seed: u64,
) -> Result<ShotRecord> {
    Ok(ShotModel::new(ens, strobo, seq, dec, en)?.simulate_shot(seed))
}

pub fn simulate_batch(
    ens: &EnsembleParams,
    strobo: &StroboscopicParams,
    seq: &SequenceParams,
    dec: &DecoherenceModel,
    en: f64,
    n_reps: usize,
    base_seed: u64,
) -> Result<Vec<ShotRecord>> {
    ShotModel::new(ens, strobo, seq, dec, en)?.simulate_batch(n_reps, base_seed)
}

pub fn correlated_pair_covariance(
    ens: &EnsembleParams,
    strobo: &StroboscopicParams,
    seq: &SequenceParams,
    dec: &DecoherenceModel,
    en: f64,
) -> Result<PairMoments> {
    Ok(ShotModel::new(ens, strobo, seq, dec, en)?.moments())
}

pub fn sweep_gap(
    ens: &EnsembleParams,
    strobo: &StroboscopicParams,
    seq: &SequenceParams,
    dec: &DecoherenceModel,
    en: f64,
    gaps_s: &[f64],
) -> Result<Vec<(f64, f64)>> {
    ShotModel::new(ens, strobo, seq, dec, en)?.sweep_gap(gaps_s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::stroboscopic_noise_budget;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn ens() -> EnsembleParams {
        EnsembleParams::cesium_f4(1.5e9)
    }

    fn seq(tau_a: f64, gap: f64, tau_b: f64) -> SequenceParams {
        SequenceParams::new(tau_a, gap, tau_b, 10e-6).unwrap()
    }

    fn stats(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
        let n = xs.clone().count() as f64;
        let mean = xs.clone().sum::<f64>() / n;
        let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    #[test]
    fn ou_shape_series_matches_closed_form_at_switch() {
        let x: f64 = 0.5;
        let closed = 1.0 + 2.0 * (-x).exp_m1() / x - (-2.0 * x).exp_m1() / (2.0 * x);
        assert!((ou_integral_shape(x - 1e-12) - closed).abs() < 1e-12);
        assert!((ou_integral_shape(1e-3) - (1e-6 / 3.0 - 1e-9 / 4.0 + 7e-12 / 60.0)).abs() < 1e-16);
    }

    #[test]
    fn ou_bin_integrals_match_quadrature() {
        // Oracle: Var(∫X) = ∫∫ c e^{−γ|s−t|} ds dt for a stationary start,
        // split into the conditional part reported by the bin and the part
        // carried by X(0): b²c.
        let (g, d, c) = (1.0 / 2.35e-3, 10e-6, 1.2);
        let bin = OuBin::new(g, d, c);
        let n = 2000;
        let h = d / n as f64;
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                let s = (i as f64 + 0.5) * h;
                let t = (j as f64 + 0.5) * h;
                total += c * (-g * (s - t).abs()).exp() * h * h;
            }
        }
        let model = bin.vi + bin.b * bin.b * c;
        assert!((model - total).abs() < 1e-6 * total, "{model} vs {total}");
        assert!((bin.vx + bin.a * bin.a * c - c).abs() < 1e-15);
    }

    #[test]
    fn probe_only_variance_is_shot_noise() {
        let strobo = StroboscopicParams::new(0.15, 220e-6, 0.0).unwrap();
        let s = seq(220e-6, 0.0, 40e-6);
        let model = ShotModel::new(&ens(), &strobo, &s, &DecoherenceModel::from_ensemble(&ens()), 0.0).unwrap();
        let m = model.moments();
        assert!((m.var_a - strobo.eta() * SHOT_NOISE_RATE * 220e-6).abs() < 1e-9);
        assert_eq!(m.cov_ab, 0.0);
        assert_eq!(m.mean_a, 0.0);
    }

    #[test]
    fn analytic_moments_reproduce_closed_form_budget() {
        for d in [0.0, 0.15, 0.5, 0.9, 1.0] {
            for k2 in [0.3, 2.0, 6.0] {
                let strobo = StroboscopicParams::new(d, 220e-6, k2).unwrap();
                let s = seq(220e-6, 0.0, 40e-6);
                let m = correlated_pair_covariance(&ens(), &strobo, &s, &DecoherenceModel::none(), 0.1).unwrap();
                let b = stroboscopic_noise_budget(&strobo, SHOT_NOISE_RATE * 220e-6, 0.1 * SHOT_NOISE_RATE * 220e-6)
                    .unwrap();
                assert!((m.var_a - b.total).abs() < 1e-9 * b.total, "D={d} k2={k2}: {} vs {}", m.var_a, b.total);
            }
        }
    }

    #[test]
    fn monte_carlo_matches_budget_at_zero_duty() {
        let strobo = StroboscopicParams::new(0.0, 220e-6, 2.0).unwrap();
        let s = seq(220e-6, 0.0, 40e-6);
        let model = ShotModel::new(&ens(), &strobo, &s, &DecoherenceModel::none(), 0.0).unwrap();
        let recs = model.simulate_batch(100_000, 3).unwrap();
        let (mean, var) = stats(recs.iter().map(|r| r.q_a));
        let expected = 2.0 * (1.0 + 2.0) * SHOT_NOISE_RATE * 220e-6;
        let band = 3.0 * expected * (2.0 / 99_999.0f64).sqrt();
        assert!((var - expected).abs() < band, "{var} vs {expected}");
        assert!(mean.abs() < 3.0 * (expected / 1e5).sqrt());
    }

    #[test]
    fn infinite_gap_decorrelates() {
        let strobo = StroboscopicParams::new(0.15, 220e-6, 2.0).unwrap();
        let dec = DecoherenceModel::from_ensemble(&ens());
        let m = correlated_pair_covariance(&ens(), &strobo, &seq(220e-6, 1.0, 40e-6), &dec, 0.1).unwrap();
        assert!(m.cov_ab.abs() < 1e-12 * m.var_a);
        assert!((m.conditional_var_b() - m.var_b).abs() < 1e-9 * m.var_b);
    }

    #[test]
    fn strong_qnd_limit_reaches_shot_noise_floor() {
        let mut last = f64::INFINITY;
        for k2 in [10.0, 100.0, 1000.0, 10000.0] {
            let strobo = StroboscopicParams::new(0.0, 220e-6, k2).unwrap();
            let m = correlated_pair_covariance(&ens(), &strobo, &seq(220e-6, 0.0, 40e-6), &DecoherenceModel::none(), 0.0)
                .unwrap();
            let xi2 = m.xi2();
            assert!(xi2 < last);
            last = xi2;
        }
        assert!(last < 1e-2, "xi2 = {last}");
    }

    #[test]
    fn rf_signal_is_linear_and_sinusoidal() {
        let strobo = StroboscopicParams::new(0.15, 220e-6, 2.0).unwrap();
        let dec = DecoherenceModel::from_ensemble(&ens());
        let omega = ens().larmor_rad_s;
        let signal = |b: f64, phi: f64| {
            let rf = RfPulseParams::phase_clean(b, phi, 47e-6, omega).unwrap();
            let s = seq(220e-6, 50e-6, 100e-6).with_rf(rf);
            correlated_pair_covariance(&ens(), &strobo, &s, &dec, 0.1).unwrap().mean_b
        };
        let base = signal(1e-13, 0.0);
        assert!(base > 0.0);
        assert!((signal(3e-13, 0.0) - 3.0 * base).abs() < 1e-9 * base);
        for phi in [0.3, 1.0, 2.5, 4.0] {
            assert!((signal(1e-13, phi) - base * phi.cos()).abs() < 1e-9 * base);
            assert!((signal(1e-13, phi + 2.0 * PI) - signal(1e-13, phi)).abs() < 1e-9 * base);
        }
    }

    #[test]
    fn rf_must_fit_in_gap() {
        let rf = RfPulseParams::phase_clean(1e-13, 0.0, 47e-6, ens().larmor_rad_s).unwrap();
        assert!(SequenceParams::new(220e-6, 20e-6, 40e-6, 10e-6).unwrap().with_rf(rf).validate().is_err());
        assert!(SequenceParams::new(225e-6, 0.0, 40e-6, 10e-6).is_err());
    }

    #[test]
    fn batch_is_deterministic_and_matches_single_shots() {
        let strobo = StroboscopicParams::new(0.15, 220e-6, 2.0).unwrap();
        let model = ShotModel::new(&ens(), &strobo, &seq(220e-6, 0.0, 40e-6), &DecoherenceModel::from_ensemble(&ens()), 0.1)
            .unwrap();
        let a = model.simulate_batch(300, 11).unwrap();
        let b = model.simulate_batch(300, 11).unwrap();
        assert_eq!(a, b);
        let one = model.simulate_batch(1, 11).unwrap();
        assert_eq!(one[0], model.simulate_shot(record_seed(11, 0)));
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let c = single.install(|| model.simulate_batch(300, 11).unwrap());
        assert_eq!(a, c);
        for r in &a {
            assert_eq!(r.q_b, r.q_b_bins.iter().sum::<f64>());
        }
    }

    #[test]
    fn progress_hook_reports_completion() {
        let strobo = StroboscopicParams::new(0.15, 220e-6, 2.0).unwrap();
        let model = ShotModel::new(&ens(), &strobo, &seq(220e-6, 0.0, 40e-6), &DecoherenceModel::none(), 0.0).unwrap();
        let max = AtomicUsize::new(0);
        model
            .simulate_batch_with_progress(3000, 1, |n| {
                max.fetch_max(n, Ordering::Relaxed);
            })
            .unwrap();
        assert_eq!(max.into_inner(), 3000);
    }

    #[test]
    fn truncation_matches_shorter_sequence() {
        let strobo = StroboscopicParams::new(0.15, 220e-6, 2.0).unwrap();
        let dec = DecoherenceModel::from_ensemble(&ens());
        let full = ShotModel::new(&ens(), &strobo, &seq(220e-6, 30e-6, 100e-6), &dec, 0.1).unwrap();
        let short = ShotModel::new(&ens(), &strobo, &seq(220e-6, 30e-6, 40e-6), &dec, 0.1).unwrap();
        let t = full.truncated(4).unwrap().moments();
        let s = short.moments();
        assert!((t.var_b - s.var_b).abs() < 1e-9 * s.var_b);
        assert!((t.cov_ab - s.cov_ab).abs() < 1e-9 * s.var_b);
        assert_eq!(t.sn_b, s.sn_b);
        let rec = full.simulate_shot(5);
        assert_eq!(full.truncated(4).unwrap().simulate_shot(5).q_b, rec.q_b_truncated(4));
    }

    #[test]
    fn gap_sweep_is_monotone() {
        let strobo = StroboscopicParams::new(0.15, 220e-6, 2.28).unwrap();
        let dec = DecoherenceModel {
            dark_dephasing_s: 155e-6,
            ..DecoherenceModel::from_ensemble(&ens())
        };
        let gaps: Vec<f64> = (0..=30).map(|i| i as f64 * 10e-6).collect();
        let sweep = sweep_gap(&ens(), &strobo, &seq(220e-6, 0.0, 100e-6), &dec, 0.1, &gaps).unwrap();
        for w in sweep.windows(2) {
            assert!(w[1].1 >= w[0].1 - 1e-12);
        }
        assert!(sweep[0].1 < -3.0);
        assert!(sweep.last().unwrap().1.abs() < 0.05);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn moments_are_valid_covariances(
            k2 in 0.0f64..8.0,
            d in 0.0f64..=1.0,
            gap_bins in 0usize..20,
            en in 0.0f64..1.0,
            p in 0.8f64..=1.0,
        ) {
            let strobo = StroboscopicParams::new(d, 220e-6, k2).unwrap();
            let e = ens().with_polarization(p);
            let s = seq(220e-6, gap_bins as f64 * 10e-6, 60e-6);
            let m = correlated_pair_covariance(&e, &strobo, &s, &DecoherenceModel::from_ensemble(&e), en).unwrap();
            prop_assert!(m.var_a > 0.0 && m.var_b > 0.0);
            prop_assert!(m.cov_ab * m.cov_ab <= m.var_a * m.var_b * (1.0 + 1e-12));
            prop_assert!(m.conditional_var_b() <= m.var_b);
            prop_assert!(m.var_b >= m.sn_b + m.en_b);
        }

        #[test]
        fn same_seed_same_record(seed in any::<u64>()) {
            let strobo = StroboscopicParams::new(0.15, 220e-6, 2.0).unwrap();
            let model = ShotModel::new(&ens(), &strobo, &seq(220e-6, 0.0, 40e-6), &DecoherenceModel::from_ensemble(&ens()), 0.1).unwrap();
            prop_assert_eq!(model.simulate_shot(seed), model.simulate_shot(seed));
        }
    }
}
