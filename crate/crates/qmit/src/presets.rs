//! Operating points of the experiment, calibrated at run time against the
//! analytic covariance of the shot model.
//!
//! Three reference levels of conditional squeezing anchor the free model
//! parameters:
//!
//! | preset | τ_A / gap / τ_B (µs) | target | solved for |
//! |---|---|---|---|
//! | [`optimum`] | 220 / 0 / 40 | −4.6 dB | coupling rate κ̂²/s |
//! | [`gap_degraded`] | 220 / 50 / 100 | −3.0 dB | dark dephasing time |
//! | [`mit`] | 220 / 50 / 100 | −1.8 dB | coil decorrelation rate |
//!
//! Each preset inherits the parameters solved by the previous one.

use serde::{Deserialize, Serialize};

use crate::coefficients::StroboscopicParams;
use crate::error::{Error, Result};
use crate::simulator::{DecoherenceModel, SequenceParams, ShotModel};
use crate::spin::{EnsembleParams, RfPulseParams};

pub const OPTIMUM_XI2_DB: f64 = -4.6;
pub const GAP_XI2_DB: f64 = -3.0;
pub const MIT_XI2_DB: f64 = -1.8;

pub const ATOM_NUMBER: f64 = 1.5e9;
pub const POLARIZATION: f64 = 0.975;
pub const DUTY_CYCLE: f64 = 0.15;
pub const ELECTRONIC_NOISE: f64 = 0.1;
pub const BIN_WIDTH_S: f64 = 10e-6;
pub const TAU_A_S: f64 = 220e-6;
pub const TAU_B_OPTIMUM_S: f64 = 40e-6;
pub const TAU_B_GAP_S: f64 = 100e-6;
pub const GAP_S: f64 = 50e-6;
/// Phase-clean RF pulse length before rounding to whole Larmor periods.
pub const RF_PULSE_S: f64 = 47e-6;

/// A complete simulator configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Setup {
    pub ensemble: EnsembleParams,
    pub stroboscopic: StroboscopicParams,
    pub sequence: SequenceParams,
    pub decoherence: DecoherenceModel,
    /// Electronic noise relative to the η = 1 shot noise of the same window.
    pub electronic_noise: f64,
}

impl Setup {
    pub fn model(&self) -> Result<ShotModel> {
        ShotModel::new(
            &self.ensemble,
            &self.stroboscopic,
            &self.sequence,
            &self.decoherence,
            self.electronic_noise,
        )
    }

    pub fn predicted_xi2_db(&self) -> Result<f64> {
        Ok(self.model()?.moments().xi2_db())
    }

    pub fn validate(&self) -> Result<()> {
        self.model().map(|_| ())
    }

    /// Same setup with the RF pulse switched on at `amplitude_t`, `phase_rad`.
    pub fn with_rf(&self, amplitude_t: f64, phase_rad: f64) -> Result<Self> {
        let rf = RfPulseParams::phase_clean(amplitude_t, phase_rad, RF_PULSE_S, self.ensemble.larmor_rad_s)?;
        let mut s = *self;
        s.sequence.rf = Some(rf);
        s.validate()?;
        Ok(s)
    }

    pub fn without_rf(&self) -> Self {
        let mut s = *self;
        s.sequence.rf = None;
        s
    }
}

/// Uncalibrated starting point: the optimum geometry with a unit coupling.
pub fn base() -> Setup {
    let ensemble = EnsembleParams::cesium_f4(ATOM_NUMBER).with_polarization(POLARIZATION);
    Setup {
        ensemble,
        stroboscopic: StroboscopicParams {
            duty_cycle: DUTY_CYCLE,
            duration_s: TAU_A_S,
            kappa_hat_sq: 1.0,
        },
        sequence: SequenceParams {
            tau_a_s: TAU_A_S,
            gap_s: 0.0,
            tau_b_s: TAU_B_OPTIMUM_S,
            rf: None,
            demod_phase_rad: 0.0,
            bin_width_s: BIN_WIDTH_S,
        },
        decoherence: DecoherenceModel::from_ensemble(&ensemble),
        electronic_noise: ELECTRONIC_NOISE,
    }
}

/// Bisection for `f(x) = target` with `f` monotone on `[lo, hi]`. Works on a
/// log scale when `log_scale` is set (both ends must then be positive).
pub fn bisect(mut f: impl FnMut(f64) -> Result<f64>, lo: f64, hi: f64, target: f64, log_scale: bool) -> Result<f64> {
    let map = |x: f64| if log_scale { x.ln() } else { x };
    let unmap = |x: f64| if log_scale { x.exp() } else { x };
    let (mut a, mut b) = (map(lo), map(hi));
    let fa = f(unmap(a))? - target;
    let fb = f(unmap(b))? - target;
    if fa * fb > 0.0 {
        return Err(Error::Degenerate(format!(
            "calibration target {target} not bracketed: f({lo}) = {}, f({hi}) = {}",
            fa + target,
            fb + target
        )));
    }
    let increasing = fb > fa;
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        let fm = f(unmap(mid))? - target;
        if (fm > 0.0) == increasing {
            b = mid;
        } else {
            a = mid;
        }
        if (b - a).abs() <= 1e-13 * a.abs().max(1.0) {
            break;
        }
    }
    Ok(unmap(0.5 * (a + b)))
}

/// Sets the coupling rate so the predicted squeezing equals `target_db`.
pub fn calibrate_coupling(setup: &Setup, target_db: f64) -> Result<Setup> {
    let duration = setup.stroboscopic.duration_s;
    let with_rate = |rate: f64| {
        let mut s = *setup;
        s.stroboscopic.kappa_hat_sq = rate * duration;
        s
    };
    // ξ² falls monotonically with coupling up to κ̂² ≈ 10 at these settings
    let rate = bisect(|r| with_rate(r).predicted_xi2_db(), 1e2, 4e4, target_db, true)?;
    Ok(with_rate(rate))
}

/// Sets the dark dephasing time so the predicted squeezing equals `target_db`.
pub fn calibrate_dark_dephasing(setup: &Setup, target_db: f64) -> Result<Setup> {
    let with_tau = |tau: f64| {
        let mut s = *setup;
        s.decoherence.dark_dephasing_s = tau;
        s
    };
    let tau = bisect(|t| with_tau(t).predicted_xi2_db(), 1e-7, 1.0, target_db, true)?;
    Ok(with_tau(tau))
}

/// Sets the extra gap decorrelation rate so the predicted squeezing equals
/// `target_db`.
pub fn calibrate_gap_rate(setup: &Setup, target_db: f64) -> Result<Setup> {
    let with_rate = |rate: f64| {
        let mut s = *setup;
        s.decoherence.gap_rate_per_s = rate;
        s
    };
    let rate = bisect(|r| with_rate(r).predicted_xi2_db(), 0.0, 1e7, target_db, false)?;
    Ok(with_rate(rate))
}

/// Best squeezing: τ_A = 220 µs, τ_B = 40 µs, no gap, −4.6 dB.
pub fn optimum() -> Result<Setup> {
    calibrate_coupling(&base(), OPTIMUM_XI2_DB)
}

/// 50 µs gap with the RF coils disconnected and τ_B = 100 µs, −3.0 dB.
pub fn gap_degraded() -> Result<Setup> {
    let mut s = optimum()?;
    s.sequence.gap_s = GAP_S;
    s.sequence.tau_b_s = TAU_B_GAP_S;
    calibrate_dark_dephasing(&s, GAP_XI2_DB)
}

/// Tomography configuration: coils connected, room for the RF pulse in the
/// gap, −1.8 dB.
pub fn mit() -> Result<Setup> {
    calibrate_gap_rate(&gap_degraded()?, MIT_XI2_DB)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PresetName {
    Optimum,
    Gap,
    Mit,
}

pub fn by_name(name: PresetName) -> Result<Setup> {
    match name {
        PresetName::Optimum => optimum(),
        PresetName::Gap => gap_degraded(),
        PresetName::Mit => mit(),
    }
}
