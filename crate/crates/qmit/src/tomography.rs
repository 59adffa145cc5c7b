//! Magnetic induction tomography on top of the shot simulator.
//!
//! A conducting sample near the cell answers the RF pulse with an eddy-current
//! field. Its amplitude falls off as a Gaussian in the sample position and its
//! phase trails the drive by a fixed offset. Without the sample the cell sees
//! no RF field at all, so a background batch with the RF amplitude at zero
//! provides both the reference mean and the feedback gain α used for
//! conditional processing.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_non_negative, ensure_positive, Error, Result};
use crate::estimation::{
    conditional_variance, fit_gaussian_profile, gaussian_profile, mean, squeezing_metric_with, variance,
    SqueezingOptions,
};
use crate::presets::Setup;
use crate::rng::child_seed;
use crate::simulator::{ShotModel, ShotRecord};

/// Reference RF amplitude used to measure the (linear) signal per tesla.
const PROBE_FIELD_T: f64 = 1e-12;

/// Parametric eddy-current response of the sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleResponse {
    pub center_m: f64,
    /// Gaussian σ of the response in position.
    pub width_m: f64,
    pub peak_field_t: f64,
    /// Lag of the eddy field behind the RF drive.
    pub phase_offset_rad: f64,
}

impl Default for SampleResponse {
    fn default() -> Self {
        Self {
            center_m: 0.0,
            width_m: 5e-3,
            peak_field_t: 0.0,
            phase_offset_rad: FRAC_PI_2,
        }
    }
}

impl SampleResponse {
    pub fn new(center_m: f64, width_m: f64, peak_field_t: f64) -> Result<Self> {
        let s = Self {
            center_m,
            width_m,
            peak_field_t,
            ..Self::default()
        };
        s.validate()?;
        Ok(s)
    }

    pub fn with_phase_offset(mut self, phase_offset_rad: f64) -> Self {
        self.phase_offset_rad = phase_offset_rad;
        self
    }

    pub fn with_peak_field(mut self, peak_field_t: f64) -> Self {
        self.peak_field_t = peak_field_t;
        self
    }

    pub fn validate(&self) -> Result<()> {
        ensure_positive("sample.width_m", self.width_m)?;
        ensure_non_negative("sample.peak_field_t", self.peak_field_t)?;
        if !(self.center_m.is_finite() && self.peak_field_t.is_finite() && self.phase_offset_rad.is_finite()) {
            return Err(Error::invalid("sample", "center, peak field and phase offset must be finite"));
        }
        Ok(())
    }

    /// Eddy-current amplitude with the sample at `position_m`.
    pub fn field_at(&self, position_m: f64) -> f64 {
        gaussian_profile(position_m, self.center_m, self.width_m, self.peak_field_t, 0.0)
    }

    /// Phase of the eddy field seen by the atoms for an RF drive at `rf_phase_rad`.
    pub fn effective_phase(&self, rf_phase_rad: f64) -> f64 {
        rf_phase_rad - self.phase_offset_rad
    }
}

/// `n` positions `step_m` apart, centered on zero.
pub fn scan_positions(n: usize, step_m: f64) -> Vec<f64> {
    let mid = (n as f64 - 1.0) / 2.0;
    (0..n).map(|i| (i as f64 - mid) * step_m).collect()
}

/// How α is chosen when processing sample data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlphaMode {
    /// Frozen from the no-sample run.
    #[default]
    Background,
    /// Re-estimated from each sample batch, for comparison.
    PerPoint,
}

fn sample_model(setup: &Setup, sample: &SampleResponse, position_m: f64, rf_phase_rad: f64) -> Result<ShotModel> {
    let amplitude = sample.field_at(position_m);
    Ok(setup
        .with_rf(amplitude, sample.effective_phase(rf_phase_rad))?
        .model()?
        .with_position(position_m))
}

fn background_model(setup: &Setup) -> Result<ShotModel> {
    setup.with_rf(0.0, 0.0)?.model()
}

/// Mean verification signal per tesla of eddy field when the field is in phase
/// with the demodulation.
pub fn signal_per_tesla(setup: &Setup) -> Result<f64> {
    Ok(setup.with_rf(PROBE_FIELD_T, 0.0)?.model()?.moments().mean_b / PROBE_FIELD_T)
}

/// Sets the peak field so that the single-shot, unconditional SNR at the
/// signal maximum equals `snr`.
pub fn calibrate_peak_field_for_snr(setup: &Setup, sample: &SampleResponse, snr: f64) -> Result<SampleResponse> {
    ensure_non_negative("snr", snr)?;
    let per_tesla = signal_per_tesla(setup)?;
    if per_tesla == 0.0 {
        return Err(Error::ZeroCoupling);
    }
    let sd = background_model(setup)?.moments().var_b.sqrt();
    Ok(sample.with_peak_field(snr * sd / per_tesla.abs()))
}

/// Least-squares standard deviation of the fitted center for a Gaussian
/// profile of the given `amplitude` sampled at `positions` with independent
/// noise `point_sd`. All four profile parameters are free.
pub fn center_std_fisher(sample: &SampleResponse, positions: &[f64], amplitude: f64, point_sd: f64) -> Result<f64> {
    if positions.len() < 4 {
        return Err(Error::invalid("positions", "at least 4 positions are needed"));
    }
    let (c, w) = (sample.center_m, sample.width_m);
    let jac = DMatrix::from_fn(positions.len(), 4, |i, j| {
        let d = positions[i] - c;
        let g = (-0.5 * d * d / (w * w)).exp();
        match j {
            0 => amplitude * g * d / (w * w),
            1 => amplitude * g * d * d / (w * w * w),
            2 => g,
            _ => 1.0,
        }
    });
    let info = jac.transpose() * jac;
    let inv = info
        .cholesky()
        .ok_or_else(|| Error::RankDeficient("profile parameters are not identifiable from these positions".into()))?
        .inverse();
    Ok(point_sd * inv[(0, 0)].sqrt())
}

/// Sets the peak field so that the predicted unconditional spread of fitted
/// centers equals `target_std_m` for scans averaging `n_reps` shots per
/// position.
pub fn calibrate_peak_field_for_center_std(
    setup: &Setup,
    sample: &SampleResponse,
    positions: &[f64],
    n_reps: usize,
    target_std_m: f64,
) -> Result<SampleResponse> {
    ensure_positive("target_std_m", target_std_m)?;
    if n_reps == 0 {
        return Err(Error::invalid("n_reps", "must be at least 1"));
    }
    let point_sd = (background_model(setup)?.moments().var_b / n_reps as f64).sqrt();
    // the center spread is inversely proportional to the amplitude
    let std_at_unit = center_std_fisher(sample, positions, 1.0, point_sd)?;
    let amplitude = std_at_unit / target_std_m;
    let per_tesla = signal_per_tesla(setup)?;
    if per_tesla == 0.0 {
        return Err(Error::ZeroCoupling);
    }
    Ok(sample.with_peak_field(amplitude / per_tesla.abs()))
}

/// Total scan time.
pub fn scan_duration_estimate(n_positions: usize, n_reps: usize, per_rep_s: f64) -> Result<f64> {
    ensure_non_negative("per_rep_s", per_rep_s)?;
    if !per_rep_s.is_finite() {
        return Err(Error::invalid("per_rep_s", "must be finite"));
    }
    Ok(n_positions as f64 * n_reps as f64 * per_rep_s)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct BatchStats {
    n: usize,
    mean_a: f64,
    mean_b: f64,
    var_b: f64,
}

impl BatchStats {
    fn of(recs: &[ShotRecord]) -> Self {
        let q_a: Vec<f64> = recs.iter().map(|r| r.q_a).collect();
        let q_b: Vec<f64> = recs.iter().map(|r| r.q_b).collect();
        Self {
            n: recs.len(),
            mean_a: mean(&q_a),
            mean_b: mean(&q_b),
            var_b: variance(&q_b),
        }
    }

    fn conditional_mean(&self, alpha: f64) -> f64 {
        self.mean_b - alpha * self.mean_a
    }
}

fn residual_variance(recs: &[ShotRecord], alpha: f64) -> f64 {
    let r: Vec<f64> = recs.iter().map(|r| r.q_b - alpha * r.q_a).collect();
    variance(&r)
}

fn alpha_of(recs: &[ShotRecord]) -> Result<f64> {
    Ok(conditional_variance(recs)?.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseSweepOptions {
    pub alpha_mode: AlphaMode,
    /// Use exact model means and variances instead of sampling.
    pub noiseless: bool,
}

impl Default for PhaseSweepOptions {
    fn default() -> Self {
        Self {
            alpha_mode: AlphaMode::Background,
            noiseless: false,
        }
    }
}

/// One RF phase of a sweep. Signals are sample minus background in SNU,
/// uncertainties are single-shot standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub phase_rad: f64,
    pub signal: f64,
    /// Standard error of `signal`, background included.
    pub signal_se: f64,
    pub signal_cond: f64,
    pub signal_cond_se: f64,
    pub sd_uncond: f64,
    pub sd_cond: f64,
    pub alpha: f64,
    pub snr_uncond: f64,
    pub snr_cond: f64,
}

impl PhasePoint {
    /// Fractional reduction of the single-shot uncertainty by conditioning.
    pub fn uncertainty_reduction(&self) -> f64 {
        1.0 - self.sd_cond / self.sd_uncond
    }
}

/// `y = a·cos φ + b·sin φ + c`, reported as amplitude and phase of the maximum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinusoidFit {
    pub amplitude: f64,
    /// Phase of the maximum in `[0, 2π)`.
    pub phase_of_max_rad: f64,
    pub offset: f64,
    pub r_squared: f64,
}

/// Linear least-squares sinusoid with period 2π.
pub fn fit_sinusoid(phases: &[f64], values: &[f64]) -> Result<SinusoidFit> {
    if phases.len() != values.len() {
        return Err(Error::invalid("values", "one value per phase required"));
    }
    let n = phases.len();
    let design = DMatrix::from_fn(n, 3, |i, j| match j {
        0 => phases[i].cos(),
        1 => phases[i].sin(),
        _ => 1.0,
    });
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let rank = svd.singular_values.iter().filter(|&&s| s > 1e-10 * smax).count();
    if n < 3 || rank < 3 {
        return Err(Error::RankDeficient(
            "a sinusoid needs at least 3 phases that are distinct modulo 2π".into(),
        ));
    }
    let y = DVector::from_column_slice(values);
    let coef = svd.solve(&y, 1e-10 * smax).map_err(|e| Error::RankDeficient(e.to_string()))?;
    let resid = &design * &coef - &y;
    let ss_res = resid.norm_squared();
    let ybar = y.mean();
    let ss_tot: f64 = y.iter().map(|v| (v - ybar).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { f64::NAN };
    Ok(SinusoidFit {
        amplitude: coef[0].hypot(coef[1]),
        phase_of_max_rad: coef[1].atan2(coef[0]).rem_euclid(std::f64::consts::TAU),
        offset: coef[2],
        r_squared,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSweep {
    /// α from the no-sample batch.
    pub background_alpha: f64,
    pub n_reps: usize,
    pub points: Vec<PhasePoint>,
}

impl PhaseSweep {
    pub fn sinusoid(&self) -> Result<SinusoidFit> {
        let phases: Vec<f64> = self.points.iter().map(|p| p.phase_rad).collect();
        let signals: Vec<f64> = self.points.iter().map(|p| p.signal).collect();
        fit_sinusoid(&phases, &signals)
    }

    /// Point whose phase is closest to `phase_rad` modulo 2π.
    pub fn nearest(&self, phase_rad: f64) -> Option<&PhasePoint> {
        let dist = |p: &PhasePoint| {
            let d = (p.phase_rad - phase_rad).rem_euclid(std::f64::consts::TAU);
            d.min(std::f64::consts::TAU - d)
        };
        self.points.iter().min_by(|a, b| dist(a).total_cmp(&dist(b)))
    }
}

/// RF phase sweep with the sample at its center. Each phase gets a sample
/// batch of `n_reps` shots; one background batch of `n_reps` shots is shared
/// by all phases.
pub fn phase_sweep(
    setup: &Setup,
    sample: &SampleResponse,
    phases: &[f64],
    n_reps: usize,
    base_seed: u64,
    opts: &PhaseSweepOptions,
) -> Result<PhaseSweep> {
    sample.validate()?;
    if phases.is_empty() {
        return Err(Error::invalid("phases", "at least one phase is required"));
    }
    if n_reps < 2 {
        return Err(Error::invalid("n_reps", "at least 2 repetitions are required"));
    }
    let bg_model = background_model(setup)?;
    let models = phases
        .iter()
        .map(|&phi| sample_model(setup, sample, sample.center_m, phi))
        .collect::<Result<Vec<_>>>()?;

    if opts.noiseless {
        let bg = bg_model.moments();
        let alpha = bg.alpha();
        let points = phases
            .iter()
            .zip(&models)
            .map(|(&phi, m)| {
                let mo = m.moments();
                let signal = mo.mean_b - bg.mean_b;
                let signal_cond = (mo.mean_b - alpha * mo.mean_a) - (bg.mean_b - alpha * bg.mean_a);
                let sd_uncond = mo.var_b.sqrt();
                let sd_cond = mo.conditional_var_b().sqrt();
                PhasePoint {
                    phase_rad: phi,
                    signal,
                    signal_se: 0.0,
                    signal_cond,
                    signal_cond_se: 0.0,
                    sd_uncond,
                    sd_cond,
                    alpha,
                    snr_uncond: signal / sd_uncond,
                    snr_cond: signal_cond / sd_cond,
                }
            })
            .collect();
        return Ok(PhaseSweep {
            background_alpha: alpha,
            n_reps,
            points,
        });
    }

    let bg_recs = bg_model.simulate_batch(n_reps, child_seed(base_seed, 0))?;
    let bg = BatchStats::of(&bg_recs);
    let bg_alpha = alpha_of(&bg_recs)?;
    let points = phases
        .par_iter()
        .zip(&models)
        .enumerate()
        .map(|(i, (&phi, m))| {
            let mut recs = m.simulate_batch(n_reps, child_seed(base_seed, 1 + i as u64))?;
            for r in &mut recs {
                r.rf_phase_rad = phi;
            }
            let alpha = match opts.alpha_mode {
                AlphaMode::Background => bg_alpha,
                AlphaMode::PerPoint => alpha_of(&recs)?,
            };
            let st = BatchStats::of(&recs);
            let var_cond = residual_variance(&recs, alpha);
            let bg_var_cond = residual_variance(&bg_recs, alpha);
            let signal = st.mean_b - bg.mean_b;
            let signal_cond = st.conditional_mean(alpha) - bg.conditional_mean(alpha);
            let (sd_uncond, sd_cond) = (st.var_b.sqrt(), var_cond.sqrt());
            Ok(PhasePoint {
                phase_rad: phi,
                signal,
                signal_se: (st.var_b / st.n as f64 + bg.var_b / bg.n as f64).sqrt(),
                signal_cond,
                signal_cond_se: (var_cond / st.n as f64 + bg_var_cond / bg.n as f64).sqrt(),
                sd_uncond,
                sd_cond,
                alpha,
                snr_uncond: signal / sd_uncond,
                snr_cond: signal_cond / sd_cond,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PhaseSweep {
        background_alpha: bg_alpha,
        n_reps,
        points,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanOptions {
    pub n_reps_per_pos: usize,
    pub n_scans: usize,
    /// Size of each scan's no-sample batch; defaults to positions × reps.
    pub background_reps: Option<usize>,
    pub alpha_mode: AlphaMode,
    /// RF phase of the scan; defaults to the signal maximum.
    pub rf_phase_rad: Option<f64>,
    pub noiseless: bool,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self {
            n_reps_per_pos: 40,
            n_scans: 100,
            background_reps: None,
            alpha_mode: AlphaMode::Background,
            rf_phase_rad: None,
            noiseless: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Processing {
    Unconditional,
    Conditional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanFailure {
    pub scan: usize,
    pub processing: Processing,
    pub message: String,
}

/// Per-position averages over all scans.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionStats {
    pub position_m: f64,
    pub signal: f64,
    pub signal_cond: f64,
    /// Pooled single-shot standard deviations.
    pub sd_uncond: f64,
    pub sd_cond: f64,
}

/// Distribution of fitted centers for one kind of processing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CenterStats {
    pub n: usize,
    pub mean_m: f64,
    pub std_m: f64,
    /// Standard error of `mean_m`.
    pub se_m: f64,
}

impl CenterStats {
    fn of(centers: &[f64]) -> Self {
        let n = centers.len();
        let (m, sd) = match n {
            0 => (f64::NAN, f64::NAN),
            1 => (centers[0], f64::NAN),
            _ => (mean(centers), variance(centers).sqrt()),
        };
        Self {
            n,
            mean_m: m,
            std_m: sd,
            se_m: sd / (n as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub sample: SampleResponse,
    pub rf_phase_rad: f64,
    pub n_reps_per_pos: usize,
    pub positions: Vec<PositionStats>,
    /// Fitted center of each scan, `None` where the fit failed.
    pub centers_uncond: Vec<Option<f64>>,
    pub centers_cond: Vec<Option<f64>>,
    /// α of each scan's background batch.
    pub alphas: Vec<f64>,
    pub failures: Vec<ScanFailure>,
    pub uncond: CenterStats,
    pub cond: CenterStats,
    /// `uncond.std_m / cond.std_m`.
    pub improvement: f64,
}

impl ScanResult {
    /// One line per scan left out of the statistics.
    pub fn warnings(&self) -> Vec<String> {
        self.failures
            .iter()
            .map(|f| {
                let kind = match f.processing {
                    Processing::Unconditional => "unconditional",
                    Processing::Conditional => "conditional",
                };
                format!("scan {} ({kind}) excluded: {}", f.scan, f.message)
            })
            .collect()
    }
}

struct ScanRun {
    signals: Vec<f64>,
    signals_cond: Vec<f64>,
    vars: Vec<f64>,
    vars_cond: Vec<f64>,
    alpha: f64,
}

fn run_scan(
    bg_model: &ShotModel,
    models: &[ShotModel],
    opts: &ScanOptions,
    rf_phase: f64,
    seed: u64,
) -> Result<ScanRun> {
    let n_bg = opts.background_reps.unwrap_or(models.len() * opts.n_reps_per_pos);
    let bg_recs = bg_model.simulate_batch(n_bg, child_seed(seed, 0))?;
    let bg = BatchStats::of(&bg_recs);
    let bg_alpha = alpha_of(&bg_recs)?;
    let mut run = ScanRun {
        signals: Vec::with_capacity(models.len()),
        signals_cond: Vec::with_capacity(models.len()),
        vars: Vec::with_capacity(models.len()),
        vars_cond: Vec::with_capacity(models.len()),
        alpha: bg_alpha,
    };
    for (i, m) in models.iter().enumerate() {
        let mut recs = m.simulate_batch(opts.n_reps_per_pos, child_seed(seed, 1 + i as u64))?;
        for r in &mut recs {
            r.rf_phase_rad = rf_phase;
        }
        let alpha = match opts.alpha_mode {
            AlphaMode::Background => bg_alpha,
            AlphaMode::PerPoint => alpha_of(&recs)?,
        };
        let st = BatchStats::of(&recs);
        run.signals.push(st.mean_b - bg.mean_b);
        run.signals_cond.push(st.conditional_mean(alpha) - bg.conditional_mean(alpha));
        run.vars.push(st.var_b);
        run.vars_cond.push(residual_variance(&recs, alpha));
    }
    Ok(run)
}

fn fit_center(positions: &[f64], signals: &[f64]) -> Result<f64> {
    let pts: Vec<(f64, f64)> = positions.iter().copied().zip(signals.iter().copied()).collect();
    let fit = fit_gaussian_profile(&pts)?;
    Ok(fit.params[0])
}

/// Repeated 1D scans. Each scan has its own no-sample batch, then averages
/// `n_reps_per_pos` shots at every position and fits a Gaussian profile to
/// the background-subtracted means, once with and once without conditioning
/// on `Q_A`. Failed fits are recorded and left out of the statistics.
pub fn scan_1d(
    setup: &Setup,
    sample: &SampleResponse,
    positions: &[f64],
    base_seed: u64,
    opts: &ScanOptions,
) -> Result<ScanResult> {
    sample.validate()?;
    if positions.len() < 4 {
        return Err(Error::invalid("positions", "at least 4 positions are needed"));
    }
    if opts.n_reps_per_pos < 2 || opts.n_scans == 0 {
        return Err(Error::invalid(
            "scan",
            "need at least 2 repetitions per position and 1 scan",
        ));
    }
    if opts.background_reps.is_some_and(|n| n < 2) {
        return Err(Error::invalid("background_reps", "must be at least 2"));
    }
    let rf_phase = opts.rf_phase_rad.unwrap_or(sample.phase_offset_rad);
    let bg_model = background_model(setup)?;
    let models = positions
        .iter()
        .map(|&x| sample_model(setup, sample, x, rf_phase))
        .collect::<Result<Vec<_>>>()?;

    let runs: Vec<ScanRun> = if opts.noiseless {
        let bg = bg_model.moments();
        let alpha = bg.alpha();
        let mut run = ScanRun {
            signals: vec![],
            signals_cond: vec![],
            vars: vec![],
            vars_cond: vec![],
            alpha,
        };
        for m in &models {
            let mo = m.moments();
            run.signals.push(mo.mean_b - bg.mean_b);
            run.signals_cond.push((mo.mean_b - alpha * mo.mean_a) - (bg.mean_b - alpha * bg.mean_a));
            run.vars.push(mo.var_b);
            run.vars_cond.push(mo.conditional_var_b());
        }
        let single = vec![run];
        (0..opts.n_scans)
            .map(|_| ScanRun {
                signals: single[0].signals.clone(),
                signals_cond: single[0].signals_cond.clone(),
                vars: single[0].vars.clone(),
                vars_cond: single[0].vars_cond.clone(),
                alpha,
            })
            .collect()
    } else {
        (0..opts.n_scans)
            .into_par_iter()
            .map(|s| run_scan(&bg_model, &models, opts, rf_phase, child_seed(base_seed, s as u64)))
            .collect::<Result<Vec<_>>>()?
    };

    let mut failures = Vec::new();
    let mut centers_uncond = Vec::with_capacity(runs.len());
    let mut centers_cond = Vec::with_capacity(runs.len());
    for (s, run) in runs.iter().enumerate() {
        for (processing, signals, out) in [
            (Processing::Unconditional, &run.signals, &mut centers_uncond),
            (Processing::Conditional, &run.signals_cond, &mut centers_cond),
        ] {
            match fit_center(positions, signals) {
                Ok(c) => out.push(Some(c)),
                Err(e) => {
                    failures.push(ScanFailure {
                        scan: s,
                        processing,
                        message: e.to_string(),
                    });
                    out.push(None);
                }
            }
        }
    }

    let n = runs.len() as f64;
    let position_stats = positions
        .iter()
        .enumerate()
        .map(|(i, &x)| PositionStats {
            position_m: x,
            signal: runs.iter().map(|r| r.signals[i]).sum::<f64>() / n,
            signal_cond: runs.iter().map(|r| r.signals_cond[i]).sum::<f64>() / n,
            sd_uncond: (runs.iter().map(|r| r.vars[i]).sum::<f64>() / n).sqrt(),
            sd_cond: (runs.iter().map(|r| r.vars_cond[i]).sum::<f64>() / n).sqrt(),
        })
        .collect();
    let ok = |v: &[Option<f64>]| v.iter().flatten().copied().collect::<Vec<_>>();
    let uncond = CenterStats::of(&ok(&centers_uncond));
    let cond = CenterStats::of(&ok(&centers_cond));
    Ok(ScanResult {
        sample: *sample,
        rf_phase_rad: rf_phase,
        n_reps_per_pos: opts.n_reps_per_pos,
        positions: position_stats,
        alphas: runs.iter().map(|r| r.alpha).collect(),
        centers_uncond,
        centers_cond,
        failures,
        improvement: uncond.std_m / cond.std_m,
        uncond,
        cond,
    })
}

/// Measured and predicted squeezing at one gap duration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapPoint {
    pub gap_s: f64,
    pub predicted_xi2_db: f64,
    pub xi2_db: f64,
    pub xi2_db_se: f64,
    pub n_shots: usize,
}

/// Simulates `n_reps` shots without RF at every gap and estimates ξ².
pub fn gap_squeezing_sweep(
    setup: &Setup,
    gaps_s: &[f64],
    n_reps: usize,
    base_seed: u64,
    opts: &SqueezingOptions,
) -> Result<Vec<GapPoint>> {
    for &g in gaps_s {
        ensure_non_negative("gap_s", g)?;
        if !g.is_finite() {
            return Err(Error::invalid("gap_s", "must be finite"));
        }
    }
    gaps_s
        .par_iter()
        .enumerate()
        .map(|(i, &gap)| {
            let mut s = setup.without_rf();
            s.sequence.gap_s = gap;
            let model = s.model()?;
            let recs = model.simulate_batch(n_reps, child_seed(base_seed, i as u64))?;
            let bins = opts.truncate_bins.unwrap_or(model.sequence().bins_b());
            let res = squeezing_metric_with(&recs, model.sn_b(bins), model.en_b(bins), opts)?;
            let predicted = match opts.truncate_bins {
                Some(b) => model.truncated(b)?.moments().xi2_db(),
                None => model.moments().xi2_db(),
            };
            Ok(GapPoint {
                gap_s: gap,
                predicted_xi2_db: predicted,
                xi2_db: res.xi2_db,
                xi2_db_se: res.xi2_db_se,
                n_shots: recs.len(),
            })
        })
        .collect()
}
