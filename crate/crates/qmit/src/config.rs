//! Run configuration: one TOML file holding every parameter group, with SI
//! units spelled out in the key names.
//!
//! Unknown keys are rejected at every level. [`RunConfig::validate`] runs the
//! owning module's checks on each group and prefixes failures with the group
//! name, e.g. `ensemble.t2_s`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coefficients::{OpticalParams, StroboscopicParams};
use crate::error::{ensure_non_negative, ensure_positive, ensure_unit_interval, Error, Result};
use crate::estimation::SqueezingOptions;
use crate::presets::{self, PresetName, Setup};
use crate::simulator::{DecoherenceModel, SequenceParams};
use crate::spin::EnsembleParams;
use crate::tomography::{scan_positions, AlphaMode, SampleResponse};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetParams {
    pub duty_cycles: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseSweepParams {
    pub phases_rad: Vec<f64>,
    pub n_reps: usize,
    /// When set, the sample peak field is solved for this single-shot SNR.
    #[serde(default)]
    pub target_snr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanParams {
    pub n_positions: usize,
    pub step_m: f64,
    pub n_reps_per_pos: usize,
    pub n_scans: usize,
    #[serde(default)]
    pub background_reps: Option<usize>,
    /// Time per repetition for the duration estimate.
    pub per_rep_s: f64,
    /// When set, the sample peak field is solved so that the predicted
    /// unconditional center spread equals this value.
    #[serde(default)]
    pub target_center_std_m: Option<f64>,
}

impl ScanParams {
    pub fn positions(&self) -> Vec<f64> {
        scan_positions(self.n_positions, self.step_m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GapSweepParams {
    pub gaps_s: Vec<f64>,
    pub n_reps: usize,
}

/// Synthetic MORS spectrum: populations follow the ensemble polarization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MorsParams {
    pub larmor_hz: f64,
    pub quadratic_splitting_hz: f64,
    /// Lorentzian half width.
    pub linewidth_hz: f64,
    pub n_points: usize,
    /// Gaussian noise relative to the spectrum maximum.
    pub noise_rel: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisParams {
    /// Shots per `simulate` run.
    pub n_reps: usize,
    pub blocks: usize,
    pub significance: f64,
    #[serde(default)]
    pub truncate_bins: Option<usize>,
    #[serde(default)]
    pub alpha_mode: AlphaMode,
    pub budget: BudgetParams,
    pub phase_sweep: PhaseSweepParams,
    pub scan: ScanParams,
    pub gap_sweep: GapSweepParams,
    pub mors: MorsParams,
}

impl AnalysisParams {
    pub fn squeezing_options(&self) -> SqueezingOptions {
        SqueezingOptions {
            blocks: self.blocks,
            truncate_bins: self.truncate_bins,
            significance: self.significance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmitFlags {
    pub csv: bool,
    pub json: bool,
}

impl Default for EmitFlags {
    fn default() -> Self {
        Self { csv: true, json: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Electronic noise in units of the η = 1 shot noise.
    pub electronic_noise_snu: f64,
    #[serde(default)]
    pub emit: EmitFlags,
    pub ensemble: EnsembleParams,
    pub optical: OpticalParams,
    pub stroboscopic: StroboscopicParams,
    pub sequence: SequenceParams,
    pub decoherence: DecoherenceModel,
    pub sample: SampleResponse,
    pub analysis: AnalysisParams,
}

fn in_group<T>(group: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::InvalidParameter { field, reason } => Error::InvalidParameter {
            field: format!("{group}.{field}"),
            reason,
        },
        other => other,
    })
}

fn nonempty<T>(field: &str, v: &[T]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::invalid(field, "must not be empty"));
    }
    Ok(())
}

fn at_least(field: &str, v: usize, min: usize) -> Result<()> {
    if v < min {
        return Err(Error::invalid(field, format!("must be at least {min}, got {v}")));
    }
    Ok(())
}

impl AnalysisParams {
    fn validate(&self) -> Result<()> {
        at_least("n_reps", self.n_reps, 2)?;
        at_least("blocks", self.blocks, 2)?;
        ensure_non_negative("significance", self.significance)?;
        if let Some(b) = self.truncate_bins {
            at_least("truncate_bins", b, 1)?;
        }
        nonempty("budget.duty_cycles", &self.budget.duty_cycles)?;
        for &d in &self.budget.duty_cycles {
            ensure_unit_interval("budget.duty_cycles", d)?;
        }
        nonempty("phase_sweep.phases_rad", &self.phase_sweep.phases_rad)?;
        at_least("phase_sweep.n_reps", self.phase_sweep.n_reps, 2)?;
        if let Some(s) = self.phase_sweep.target_snr {
            ensure_non_negative("phase_sweep.target_snr", s)?;
        }
        let s = &self.scan;
        at_least("scan.n_positions", s.n_positions, 4)?;
        ensure_positive("scan.step_m", s.step_m)?;
        at_least("scan.n_reps_per_pos", s.n_reps_per_pos, 2)?;
        at_least("scan.n_scans", s.n_scans, 1)?;
        if let Some(b) = s.background_reps {
            at_least("scan.background_reps", b, 2)?;
        }
        ensure_non_negative("scan.per_rep_s", s.per_rep_s)?;
        if let Some(t) = s.target_center_std_m {
            ensure_positive("scan.target_center_std_m", t)?;
        }
        nonempty("gap_sweep.gaps_s", &self.gap_sweep.gaps_s)?;
        for &g in &self.gap_sweep.gaps_s {
            ensure_non_negative("gap_sweep.gaps_s", g)?;
        }
        at_least("gap_sweep.n_reps", self.gap_sweep.n_reps, 2)?;
        let m = &self.mors;
        ensure_positive("mors.larmor_hz", m.larmor_hz)?;
        ensure_positive("mors.quadratic_splitting_hz", m.quadratic_splitting_hz)?;
        ensure_positive("mors.linewidth_hz", m.linewidth_hz)?;
        at_least("mors.n_points", m.n_points, 16)?;
        ensure_non_negative("mors.noise_rel", m.noise_rel)?;
        Ok(())
    }
}

impl RunConfig {
    /// Complete configuration for one of the calibrated operating points.
    pub fn from_preset(name: PresetName) -> Result<Self> {
        let setup = presets::by_name(name)?;
        Ok(Self {
            seed: 1,
            output_dir: PathBuf::from("qmit-out"),
            electronic_noise_snu: setup.electronic_noise,
            emit: EmitFlags::default(),
            ensemble: setup.ensemble,
            optical: OpticalParams::f4(-1.82e9),
            stroboscopic: setup.stroboscopic,
            sequence: setup.sequence,
            decoherence: setup.decoherence,
            sample: SampleResponse::default(),
            analysis: AnalysisParams {
                n_reps: 4000,
                blocks: 9,
                significance: 2.0,
                truncate_bins: None,
                alpha_mode: AlphaMode::Background,
                budget: BudgetParams {
                    duty_cycles: vec![0.0, 0.15, 0.5, 0.9],
                },
                phase_sweep: PhaseSweepParams {
                    phases_rad: (0..=12).map(|i| i as f64 * std::f64::consts::PI / 6.0).collect(),
                    n_reps: 16_000,
                    target_snr: Some(0.72),
                },
                scan: ScanParams {
                    n_positions: 50,
                    step_m: 1e-3,
                    n_reps_per_pos: 40,
                    n_scans: 100,
                    background_reps: None,
                    per_rep_s: 13e-3,
                    target_center_std_m: Some(0.36e-3),
                },
                gap_sweep: GapSweepParams {
                    gaps_s: (0..=6).map(|i| i as f64 * 50e-6).collect(),
                    n_reps: 4000,
                },
                mors: MorsParams {
                    larmor_hz: 1.44e6,
                    quadratic_splitting_hz: 2.0e3,
                    linewidth_hz: 250.0,
                    n_points: 800,
                    noise_rel: 0.01,
                },
            },
        })
    }

    pub fn setup(&self) -> Setup {
        Setup {
            ensemble: self.ensemble,
            stroboscopic: self.stroboscopic,
            sequence: self.sequence,
            decoherence: self.decoherence,
            electronic_noise: self.electronic_noise_snu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_non_negative("electronic_noise_snu", self.electronic_noise_snu)?;
        in_group("ensemble", self.ensemble.validate())?;
        in_group("optical", self.optical.validate())?;
        in_group("stroboscopic", self.stroboscopic.validate())?;
        in_group("sequence", self.sequence.validate())?;
        in_group("decoherence", self.decoherence.validate())?;
        in_group("sample", self.sample.validate())?;
        in_group("analysis", self.analysis.validate())?;
        if let Some(b) = self.analysis.truncate_bins {
            if b > self.sequence.bins_b() {
                return Err(Error::invalid(
                    "analysis.truncate_bins",
                    format!("exceeds the {} bins of tau_b_s", self.sequence.bins_b()),
                ));
            }
        }
        // cross-group consistency, e.g. the RF pulse against the Larmor period
        self.setup().validate()
    }

    /// Parses and validates.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    /// SHA-256 of the canonical TOML serialization, hex encoded.
    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(self.to_toml_string()?.as_bytes()))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
