//! Conditional variance and the squeezing parameter
//! ξ² = (Var(Q_B|Q_A) − SN_B − EN_B) / (Var(Q_B) − SN_B − EN_B).
//!
//! Both variances are raw sample variances: electronic noise is not removed
//! from Var(Q_A) before computing the feedback gain α.

use serde::{Deserialize, Serialize};

use super::stats::{covariance, mean, variance};
use crate::error::{ensure_non_negative, Error, Result};
use crate::simulator::ShotRecord;
use crate::spin::polarization_correction;

/// `(Var(Q_B − α·Q_A), α)` with α = Cov(Q_A, Q_B)/Var(Q_A).
pub fn conditional_variance_of(q_a: &[f64], q_b: &[f64]) -> Result<(f64, f64)> {
    if q_a.len() != q_b.len() {
        return Err(Error::invalid("shots", "Q_A and Q_B differ in length"));
    }
    if q_a.len() < 2 {
        return Err(Error::Degenerate(format!("need at least 2 shots, got {}", q_a.len())));
    }
    let var_a = variance(q_a);
    let scale = mean(q_a).powi(2) + q_a.iter().map(|x| x * x).sum::<f64>() / q_a.len() as f64;
    if !(var_a > 1e-14 * scale) {
        return Err(Error::Degenerate(format!("Var(Q_A) = {var_a} is not positive")));
    }
    let alpha = covariance(q_a, q_b) / var_a;
    let residual: Vec<f64> = q_a.iter().zip(q_b).map(|(a, b)| b - alpha * a).collect();
    // the optimum can never beat doing nothing; guard the last ulp
    Ok((variance(&residual).min(variance(q_b)), alpha))
}

/// Conditional variance of the full `Q_B` of each record given `Q_A`.
pub fn conditional_variance(shots: &[ShotRecord]) -> Result<(f64, f64)> {
    let q_a: Vec<f64> = shots.iter().map(|s| s.q_a).collect();
    let q_b: Vec<f64> = shots.iter().map(|s| s.q_b).collect();
    conditional_variance_of(&q_a, &q_b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SqueezingOptions {
    /// Number of contiguous blocks used for the standard errors.
    pub blocks: usize,
    /// Use only the first `n` bins of `Q_B`.
    pub truncate_bins: Option<usize>,
    /// Minimum PN_B, in standard errors, for ξ² to be reported.
    pub significance: f64,
}

impl Default for SqueezingOptions {
    fn default() -> Self {
        Self {
            blocks: 9,
            truncate_bins: None,
            significance: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SqueezingResult {
    pub n_shots: usize,
    pub blocks: usize,
    pub xi2: f64,
    pub xi2_se: f64,
    pub xi2_db: f64,
    pub xi2_db_se: f64,
    pub alpha: f64,
    pub alpha_se: f64,
    pub var_a: f64,
    pub var_a_se: f64,
    pub var_b: f64,
    pub var_b_se: f64,
    pub cond_var_b: f64,
    pub cond_var_b_se: f64,
    pub sn_b: f64,
    pub en_b: f64,
    pub pn_b: f64,
    pub pn_b_se: f64,
}

pub fn squeezing_metric(shots: &[ShotRecord], sn_b: f64, en_b: f64) -> Result<SqueezingResult> {
    squeezing_metric_with(shots, sn_b, en_b, &SqueezingOptions::default())
}

struct BlockStats {
    var_a: f64,
    var_b: f64,
    cond: f64,
    alpha: f64,
}

fn block_stats(q_a: &[f64], q_b: &[f64]) -> Result<BlockStats> {
    let (cond, alpha) = conditional_variance_of(q_a, q_b)?;
    Ok(BlockStats {
        var_a: variance(q_a),
        var_b: variance(q_b),
        cond,
        alpha,
    })
}

fn std_error(values: &[f64]) -> f64 {
    (variance(values) / values.len() as f64).sqrt()
}

/// ξ² with standard errors from splitting the batch into `opts.blocks`
/// contiguous blocks and propagating the block standard errors to first
/// order.
pub fn squeezing_metric_with(
    shots: &[ShotRecord],
    sn_b: f64,
    en_b: f64,
    opts: &SqueezingOptions,
) -> Result<SqueezingResult> {
    ensure_non_negative("sn_b", sn_b)?;
    ensure_non_negative("en_b", en_b)?;
    if opts.blocks < 2 {
        return Err(Error::invalid("blocks", "need at least 2 blocks for error estimates"));
    }
    let n = shots.len();
    if n < 2 * opts.blocks {
        return Err(Error::Degenerate(format!(
            "{n} shots cannot fill {} blocks of at least 2",
            opts.blocks
        )));
    }
    let q_a: Vec<f64> = shots.iter().map(|s| s.q_a).collect();
    let q_b: Vec<f64> = match opts.truncate_bins {
        None => shots.iter().map(|s| s.q_b).collect(),
        Some(bins) => {
            if bins == 0 || shots.iter().any(|s| s.q_b_bins.len() < bins) {
                return Err(Error::invalid("truncate_bins", format!("{bins} bins not available in every record")));
            }
            shots.iter().map(|s| s.q_b_truncated(bins)).collect()
        }
    };

    let full = block_stats(&q_a, &q_b)?;
    let parts: Vec<BlockStats> = (0..opts.blocks)
        .map(|i| {
            let (lo, hi) = (i * n / opts.blocks, (i + 1) * n / opts.blocks);
            block_stats(&q_a[lo..hi], &q_b[lo..hi])
        })
        .collect::<Result<_>>()?;
    let se = |f: fn(&BlockStats) -> f64| std_error(&parts.iter().map(f).collect::<Vec<_>>());
    let var_a_se = se(|b| b.var_a);
    let var_b_se = se(|b| b.var_b);
    let cond_se = se(|b| b.cond);
    let alpha_se = se(|b| b.alpha);

    let floor = sn_b + en_b;
    let pn_b = full.var_b - floor;
    if !(pn_b > opts.significance * var_b_se) {
        return Err(Error::NonPositiveProjectionNoise {
            pn: pn_b,
            stderr: var_b_se,
        });
    }
    let cond_atomic = full.cond - floor;
    if !(cond_atomic > 0.0) {
        return Err(Error::Degenerate(format!(
            "conditional variance {} is below the shot + electronic noise floor {floor}",
            full.cond
        )));
    }
    let xi2 = cond_atomic / pn_b;
    let xi2_se = ((cond_se / pn_b).powi(2) + (xi2 * var_b_se / pn_b).powi(2)).sqrt();
    Ok(SqueezingResult {
        n_shots: n,
        blocks: opts.blocks,
        xi2,
        xi2_se,
        xi2_db: 10.0 * xi2.log10(),
        xi2_db_se: 10.0 / std::f64::consts::LN_10 * xi2_se / xi2,
        alpha: full.alpha,
        alpha_se,
        var_a: full.var_a,
        var_a_se,
        var_b: full.var_b,
        var_b_se,
        cond_var_b: full.cond,
        cond_var_b_se: cond_se,
        sn_b,
        en_b,
        pn_b,
        pn_b_se: var_b_se,
    })
}

/// Projection noise of the coherent state inferred from a thermal-state
/// measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PnCalibration {
    /// 8/15 of the thermal-state variance.
    pub pn_css: f64,
    /// Excess noise factor at the given polarization.
    pub correction: f64,
    /// `pn_css · correction`.
    pub pn_corrected: f64,
}

/// `tss_var` is the thermal-state atomic variance with shot and electronic
/// noise already subtracted.
pub fn calibrate_pn_from_tss(tss_var: f64, polarization: f64) -> Result<PnCalibration> {
    if !(tss_var > 0.0) || !tss_var.is_finite() {
        return Err(Error::invalid("tss_var", format!("must be finite and > 0, got {tss_var}")));
    }
    if !(polarization > 0.0 && polarization <= 1.0) {
        return Err(Error::invalid("polarization", format!("must lie in (0, 1], got {polarization}")));
    }
    let pn_css = 8.0 / 15.0 * tss_var;
    let correction = polarization_correction(4, polarization);
    Ok(PnCalibration {
        pn_css,
        correction,
        pn_corrected: pn_css * correction,
    })
}
