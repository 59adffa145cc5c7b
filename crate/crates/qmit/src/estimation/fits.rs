//! Curve fits: T₁ decay, noise versus probe power, Gaussian sensor response
//! and MORS polarization.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::lm::{levenberg_marquardt, LmOptions};
use crate::error::{Error, Result};
use crate::spin::{mors_components, PopulationDistribution};

/// Parameter estimates with their covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: String,
    pub param_names: Vec<String>,
    pub params: Vec<f64>,
    /// Row-major, symmetric positive semidefinite. All zeros when the data
    /// leave no degrees of freedom to estimate the noise from.
    pub covariance: Vec<Vec<f64>>,
    pub residual_norm: f64,
    pub iterations: usize,
    pub n_points: usize,
}

impl FitResult {
    pub fn std_errors(&self) -> Vec<f64> {
        (0..self.params.len()).map(|i| self.covariance[i][i].max(0.0).sqrt()).collect()
    }

    fn index(&self, name: &str) -> Option<usize> {
        self.param_names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.params[i])
    }

    pub fn std_error(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.covariance[i][i].max(0.0).sqrt())
    }
}

/// (JᵀJ)⁺ scaled by the residual variance, or unscaled when residuals were
/// already divided by known standard deviations.
fn parameter_covariance(jac: &DMatrix<f64>, rss: f64, absolute_sigma: bool) -> Vec<Vec<f64>> {
    let (m, n) = jac.shape();
    let scale = if absolute_sigma {
        1.0
    } else if m > n {
        rss / (m - n) as f64
    } else {
        0.0
    };
    let jtj = jac.transpose() * jac;
    let svd = jtj.svd(true, true);
    let max_sv = svd.singular_values.max();
    let inv = svd
        .pseudo_inverse(1e-13 * max_sv.max(f64::MIN_POSITIVE))
        .unwrap_or_else(|_| DMatrix::zeros(n, n));
    (0..n)
        .map(|i| (0..n).map(|j| 0.5 * scale * (inv[(i, j)] + inv[(j, i)])).collect())
        .collect()
}

fn check_points(points: &[(f64, f64)], min: usize, what: &str) -> Result<()> {
    if points.len() < min {
        return Err(Error::invalid("points", format!("{what} needs at least {min} points, got {}", points.len())));
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::invalid("points", "coordinates must be finite"));
    }
    Ok(())
}

/// Default options with the exact-fit floor set relative to the data.
fn options_for(ys: impl Iterator<Item = f64>) -> LmOptions {
    let norm = ys.map(|y| y * y).sum::<f64>().sqrt();
    LmOptions {
        residual_floor: 1e-13 * norm,
        ..LmOptions::default()
    }
}

fn names(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

/// Fits `A(t) = B·exp(−t/T₁)`; parameters `[amplitude, t1]`.
pub fn fit_exponential_decay(points: &[(f64, f64)]) -> Result<FitResult> {
    check_points(points, 2, "an exponential fit")?;
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (t0, t1) = (sorted[0].0, sorted[sorted.len() - 1].0);
    if !(t1 > t0) {
        return Err(Error::invalid("points", "times span a zero range"));
    }

    // two-point log slope between the first and last positive samples
    let positive: Vec<&(f64, f64)> = sorted.iter().filter(|p| p.1 > 0.0).collect();
    let tau0 = match (positive.first(), positive.last()) {
        (Some(a), Some(b)) if b.0 > a.0 && a.1 > b.1 => (b.0 - a.0) / (a.1 / b.1).ln(),
        _ => 10.0 * (t1 - t0),
    };
    let amp0 = sorted[0].1 * (sorted[0].0 / tau0).exp();

    let residuals = |p: &[f64]| sorted.iter().map(|&(t, y)| p[0] * (-t / p[1]).exp() - y).collect::<Vec<_>>();
    let opts = options_for(sorted.iter().map(|p| p.1));
    let sol = levenberg_marquardt(residuals, &[amp0, tau0], &[amp0.abs().max(1e-300), tau0.abs()], &opts)?;
    Ok(FitResult {
        model: "exponential_decay".into(),
        param_names: names(&["amplitude", "t1"]),
        covariance: parameter_covariance(&sol.jacobian, sol.residual_norm.powi(2), false),
        params: sol.params,
        residual_norm: sol.residual_norm,
        iterations: sol.iterations,
        n_points: points.len(),
    })
}

/// Weighted least-squares parabola `y/η = c₀ + c₁x + c₂x²` through noise
/// variances `y` recorded at coupling `x`; parameters
/// `[constant, linear, quadratic]`.
///
/// Pass `eta = 1` if the variances are already divided by η. With `sigmas`
/// the covariance is absolute, otherwise it is scaled by the residual
/// variance.
pub fn fit_noise_vs_power(points: &[(f64, f64)], eta: f64, sigmas: Option<&[f64]>) -> Result<FitResult> {
    check_points(points, 1, "a polynomial fit")?;
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::invalid("eta", format!("must be finite and > 0, got {eta}")));
    }
    if let Some(s) = sigmas {
        if s.len() != points.len() || s.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::invalid("sigmas", "need one finite positive sigma per point"));
        }
    }
    let mut xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    if xs.len() < 3 {
        return Err(Error::RankDeficient(format!(
            "a second-order polynomial needs 3 distinct abscissae, got {}",
            xs.len()
        )));
    }

    let m = points.len();
    let weight = |i: usize| sigmas.map_or(1.0, |s| eta / s[i]);
    let design = DMatrix::from_fn(m, 3, |i, j| points[i].0.powi(j as i32) * weight(i));
    let rhs = DVector::from_fn(m, |i, _| points[i].1 / eta * weight(i));
    let svd = design.clone().svd(true, true);
    let sv = &svd.singular_values;
    if sv.min() <= 1e-13 * sv.max() {
        return Err(Error::RankDeficient("design matrix is numerically singular".into()));
    }
    let coef = svd
        .solve(&rhs, 0.0)
        .map_err(|e| Error::RankDeficient(e.to_string()))?;
    let resid = &design * &coef - &rhs;
    let rss = resid.norm_squared();
    Ok(FitResult {
        model: "noise_vs_power".into(),
        param_names: names(&["constant", "linear", "quadratic"]),
        params: coef.iter().copied().collect(),
        covariance: parameter_covariance(&design, rss, sigmas.is_some()),
        residual_norm: rss.sqrt(),
        iterations: 1,
        n_points: m,
    })
}

/// `offset + amplitude·exp(−(x − center)²/(2·width²))`.
pub fn gaussian_profile(x: f64, center: f64, width: f64, amplitude: f64, offset: f64) -> f64 {
    let z = (x - center) / width;
    offset + amplitude * (-0.5 * z * z).exp()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Gaussian fit of a sensor response profile; parameters
/// `[center, width, amplitude, offset]`. The reported width is positive.
///
/// Initial guesses: center at the extreme sample, offset from the median of
/// the outer tenth of the scan, width from the half-maximum crossings.
pub fn fit_gaussian_profile(points: &[(f64, f64)]) -> Result<FitResult> {
    check_points(points, 3, "a Gaussian fit")?;
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = pts.len();
    let step = pts
        .windows(2)
        .map(|w| w[1].0 - w[0].0)
        .filter(|d| *d > 0.0)
        .fold(f64::INFINITY, f64::min);
    if !step.is_finite() {
        return Err(Error::invalid("points", "positions must not all coincide"));
    }

    // With only three samples the offset cannot be separated from the tails
    // and is held at zero.
    let free_offset = n > 3;
    let offset0 = if free_offset {
        let edge = (n / 10).max(1);
        median(pts[..edge].iter().chain(&pts[n - edge..]).map(|p| p.1).collect())
    } else {
        0.0
    };
    let peak = (0..n)
        .max_by(|&i, &j| (pts[i].1 - offset0).abs().total_cmp(&(pts[j].1 - offset0).abs()))
        .unwrap();
    let amp0 = pts[peak].1 - offset0;
    let half = 0.5 * amp0.abs();
    let crossing = |range: &mut dyn Iterator<Item = usize>| -> Option<f64> {
        let mut prev = peak;
        for i in range {
            let h = (pts[i].1 - offset0).abs();
            if h < half {
                let hp = (pts[prev].1 - offset0).abs();
                let frac = (hp - half) / (hp - h);
                return Some(pts[prev].0 + frac * (pts[i].0 - pts[prev].0));
            }
            prev = i;
        }
        None
    };
    let left = crossing(&mut (0..peak).rev()).unwrap_or(pts[0].0);
    let right = crossing(&mut (peak + 1..n)).unwrap_or(pts[n - 1].0);
    let fwhm_to_sigma = 2.0 * (2.0 * 2f64.ln()).sqrt();
    let width0 = ((right - left) / fwhm_to_sigma).max(step);
    let center0 = pts[peak].0;

    let residuals = |p: &[f64]| {
        let offset = if free_offset { p[3] } else { 0.0 };
        pts.iter()
            .map(|&(x, y)| gaussian_profile(x, p[0], p[1], p[2], offset) - y)
            .collect::<Vec<_>>()
    };
    let scale = amp0.abs().max(f64::MIN_POSITIVE);
    let (p0, typical) = if free_offset {
        (vec![center0, width0, amp0, offset0], vec![width0, width0, scale, scale])
    } else {
        (vec![center0, width0, amp0], vec![width0, width0, scale])
    };
    let opts = options_for(pts.iter().map(|p| p.1));
    let sol = levenberg_marquardt(residuals, &p0, &typical, &opts)?;
    let mut params = sol.params;
    params[1] = params[1].abs();
    if params[1] <= step {
        return Err(Error::DegenerateWidth { width: params[1], step });
    }
    let mut covariance = parameter_covariance(&sol.jacobian, sol.residual_norm.powi(2), false);
    if !free_offset {
        params.push(0.0);
        for row in &mut covariance {
            row.push(0.0);
        }
        covariance.push(vec![0.0; 4]);
    }
    Ok(FitResult {
        model: "gaussian_profile".into(),
        param_names: names(&["center", "width", "amplitude", "offset"]),
        covariance,
        params,
        residual_norm: sol.residual_norm,
        iterations: sol.iterations,
        n_points: n,
    })
}

const MORS_SPIN: u32 = 4;

fn epsilon_of(u: f64) -> f64 {
    u * u / (1.0 + u * u)
}

fn polarization_of(u: f64) -> f64 {
    PopulationDistribution::from_epsilon(MORS_SPIN, epsilon_of(u))
        .expect("epsilon in [0, 1)")
        .polarization()
}

fn mors_model(f: f64, eps: f64, gamma: f64, larmor_hz: f64, nu_qz: f64) -> f64 {
    let pops = PopulationDistribution::from_epsilon(MORS_SPIN, eps).expect("epsilon in [0, 1)");
    let (mut re, mut im) = (0.0, 0.0);
    for c in mors_components(MORS_SPIN, &pops.populations, larmor_hz, nu_qz) {
        let d = f - c.frequency_hz;
        let den = gamma * gamma + d * d;
        re += c.amplitude * gamma * gamma / den;
        im += c.amplitude * gamma * d / den;
    }
    re.hypot(im)
}

/// Fits the spin-temperature MORS model of an F=4 ensemble to a sampled
/// magnitude spectrum `(frequency_hz, magnitude)`; parameters
/// `[polarization, linewidth_hz, scale]`.
///
/// Fails with [`Error::UnresolvedSpectrum`] when the quadratic splitting does
/// not exceed the linewidth, since the line ratios then no longer determine
/// the populations.
pub fn fit_mors_polarization(spectrum: &[(f64, f64)], larmor_hz: f64, quadratic_splitting_hz: f64) -> Result<FitResult> {
    check_points(spectrum, 4, "a MORS fit")?;
    let nu = quadratic_splitting_hz;
    if !(nu.abs() > 0.0) || !nu.is_finite() || !(larmor_hz > 0.0) {
        return Err(Error::invalid("mors", "Larmor frequency and quadratic splitting must be finite and non-zero"));
    }
    let mut pts = spectrum.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = pts.len();
    let peak = (0..n).max_by(|&i, &j| pts[i].1.total_cmp(&pts[j].1)).unwrap();
    let y_peak = pts[peak].1;
    if !(y_peak > 0.0) {
        return Err(Error::Degenerate("spectrum has no positive signal".into()));
    }

    // linewidth from the half-maximum points of the strongest line
    let half = 0.5 * y_peak;
    let left = (0..peak).rev().find(|&i| pts[i].1 < half).map(|i| pts[i].0);
    let right = (peak + 1..n).find(|&i| pts[i].1 < half).map(|i| pts[i].0);
    let hwhm = match (left, right) {
        (Some(l), Some(r)) => 0.5 * (r - l),
        (Some(l), None) => pts[peak].0 - l,
        (None, Some(r)) => r - pts[peak].0,
        (None, None) => pts[n - 1].0 - pts[0].0,
    };
    // |γ/(γ − iδ)| falls to one half at δ = √3·γ
    let gamma0 = hwhm / 3f64.sqrt();
    if nu.abs() <= gamma0 {
        return Err(Error::UnresolvedSpectrum {
            splitting_hz: nu.abs(),
            linewidth_hz: gamma0,
        });
    }

    // A(2→3)/A(3→4) = 14ε/8 for spin-temperature populations
    let near = |f: f64| {
        pts.iter()
            .min_by(|a, b| (a.0 - f).abs().total_cmp(&(b.0 - f).abs()))
            .unwrap()
            .1
    };
    let ratio = near(larmor_hz + 2.5 * nu) / near(larmor_hz + 3.5 * nu);
    let eps0 = (8.0 / 14.0 * ratio).clamp(1e-6, 0.9);
    let u0 = (eps0 / (1.0 - eps0)).sqrt();
    let scale0 = y_peak / mors_model(pts[peak].0, eps0, gamma0, larmor_hz, nu).max(f64::MIN_POSITIVE);

    let residuals = |p: &[f64]| {
        let eps = epsilon_of(p[0]);
        pts.iter()
            .map(|&(f, y)| p[2] * mors_model(f, eps, p[1], larmor_hz, nu) - y)
            .collect::<Vec<_>>()
    };
    let opts = options_for(pts.iter().map(|p| p.1));
    let sol = levenberg_marquardt(residuals, &[u0, gamma0, scale0], &[0.1, gamma0, scale0.abs()], &opts)?;
    let (u, gamma, scale) = (sol.params[0], sol.params[1].abs(), sol.params[2]);
    if nu.abs() <= gamma {
        return Err(Error::UnresolvedSpectrum {
            splitting_hz: nu.abs(),
            linewidth_hz: gamma,
        });
    }

    // map the covariance of u to that of the polarization
    let mut cov = parameter_covariance(&sol.jacobian, sol.residual_norm.powi(2), false);
    let h = 1e-6 * (u.abs() + 1e-3);
    let dp = (polarization_of(u + h) - polarization_of(u - h)) / (2.0 * h);
    for j in 0..3 {
        cov[0][j] *= dp;
        cov[j][0] *= dp;
    }
    Ok(FitResult {
        model: "mors_polarization".into(),
        param_names: names(&["polarization", "linewidth_hz", "scale"]),
        params: vec![polarization_of(u), gamma, scale],
        covariance: cov,
        residual_norm: sol.residual_norm,
        iterations: sol.iterations,
        n_points: n,
    })
}
