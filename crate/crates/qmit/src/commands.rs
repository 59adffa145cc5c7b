//! Experiment runs driven by a [`RunConfig`], each writing CSV plot data and
//! a JSON report into the output directory.
//!
//! Every command returns its report, the files it wrote and a short
//! human-readable summary. No report contains timestamps or host data, so
//! identical inputs give identical files.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::archive::ShotArchive;
use crate::coefficients::{
    kappa_squared, minimize_snr_inverse, sql_optimum, stroboscopic_noise_budget, NoiseBudget, SqlOptimum,
    StroboscopicParams,
};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::estimation::{
    fit_exponential_decay, fit_gaussian_profile, fit_mors_polarization, fit_noise_vs_power, squeezing_metric_with,
    FitResult, SqueezingResult,
};
use crate::rng::{child_seed, rng_from_seed};
use crate::simulator::{PairMoments, ShotRecord};
use crate::spin::{mors_spectrum, PopulationDistribution};
use crate::tomography::{
    calibrate_peak_field_for_center_std, calibrate_peak_field_for_snr, gap_squeezing_sweep, phase_sweep, scan_1d,
    scan_duration_estimate, GapPoint, PhaseSweep, PhaseSweepOptions, SampleResponse, ScanOptions, ScanResult,
    SinusoidFit,
};

/// File name of the archive written by [`cmd_simulate`].
pub const ARCHIVE_FILE: &str = "shots.qmit.jsonl";

#[derive(Debug, Clone)]
pub struct CommandOutput<R> {
    pub report: R,
    pub files: Vec<PathBuf>,
    pub summary: String,
}

struct Emitter {
    dir: PathBuf,
    csv: bool,
    json: bool,
    files: Vec<PathBuf>,
}

impl Emitter {
    fn new(dir: &Path, cfg_emit: crate::config::EmitFlags) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            csv: cfg_emit.csv,
            json: cfg_emit.json,
            files: vec![],
        })
    }

    fn csv(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
        if !self.csv {
            return Ok(());
        }
        let path = self.dir.join(name);
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
        w.write_record(header).map_err(|e| csv_error(&path, e))?;
        for row in rows {
            w.write_record(&row).map_err(|e| csv_error(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        self.files.push(path);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        if !self.json {
            return Ok(());
        }
        let path = self.dir.join(name);
        let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Serialization(e.to_string()))?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        self.files.push(path);
        Ok(())
    }

    fn text(&mut self, name: &str, text: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        self.files.push(path);
        Ok(())
    }

    fn finish<R>(self, report: R, summary: String) -> CommandOutput<R> {
        CommandOutput {
            report,
            files: self.files,
            summary,
        }
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Serialization(format!("{}: {other:?}", path.display())),
    }
}

fn num(x: f64) -> String {
    x.to_string()
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetRow {
    pub duty_cycle: f64,
    pub eta: f64,
    pub back_action_fraction: f64,
    pub budget: NoiseBudget,
    /// Total minus electronic noise, divided by η.
    pub eta_corrected: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub kappa_hat_sq: f64,
    /// Coupling predicted from the optical parameters, when a photon flux is
    /// configured.
    pub kappa_hat_sq_from_optics: Option<f64>,
    pub electronic_noise_snu: f64,
    pub rows: Vec<BudgetRow>,
    pub sql: SqlOptimum,
    /// κ⁴ at the numerically located continuous-probing optimum.
    pub sql_kappa4_numeric: f64,
    /// Squeezing predicted by the simulator model for this configuration.
    pub predicted: PairMoments,
    pub predicted_xi2_db: f64,
}

/// Noise budget in shot-noise units for each configured duty cycle, the SQL
/// summary, and the model's predicted squeezing.
pub fn cmd_budget(cfg: &RunConfig) -> Result<CommandOutput<BudgetReport>> {
    cfg.validate()?;
    let rows = cfg
        .analysis
        .budget
        .duty_cycles
        .iter()
        .map(|&d| {
            let strobo = StroboscopicParams {
                duty_cycle: d,
                ..cfg.stroboscopic
            };
            let b = stroboscopic_noise_budget(&strobo, 1.0, cfg.electronic_noise_snu)?;
            Ok(BudgetRow {
                duty_cycle: d,
                eta: strobo.eta(),
                back_action_fraction: strobo.back_action_fraction(),
                eta_corrected: (b.total - b.en) / strobo.eta(),
                budget: b,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let kappa_hat_sq_from_optics = if cfg.optical.photon_flux_per_s > 0.0 {
        Some(kappa_squared(&cfg.optical, &cfg.stroboscopic, cfg.ensemble.jx())?)
    } else {
        None
    };
    let k = minimize_snr_inverse(0.5, 5.0, 1e-10);
    let predicted = cfg.setup().model()?.moments();
    let report = BudgetReport {
        kappa_hat_sq: cfg.stroboscopic.kappa_hat_sq,
        kappa_hat_sq_from_optics,
        electronic_noise_snu: cfg.electronic_noise_snu,
        rows,
        sql: sql_optimum(),
        sql_kappa4_numeric: k.powi(4),
        predicted_xi2_db: predicted.xi2_db(),
        predicted,
    };

    let mut em = Emitter::new(&cfg.output_dir, cfg.emit)?;
    em.csv(
        "budget.csv",
        &["duty_cycle", "eta", "c", "sn", "pn", "ban", "en", "total", "eta_corrected"],
        report.rows.iter().map(|r| {
            vec![
                num(r.duty_cycle),
                num(r.eta),
                num(r.back_action_fraction),
                num(r.budget.sn),
                num(r.budget.pn),
                num(r.budget.ban),
                num(r.budget.en),
                num(r.budget.total),
                num(r.eta_corrected),
            ]
        }),
    )?;
    em.json("budget.json", &report)?;

    let mut s = format!("kappa_hat_sq = {:.4}\n", report.kappa_hat_sq);
    s += "    D      eta      SN       PN       BAN      EN       total\n";
    for r in &report.rows {
        s += &format!(
            "{:6.3} {:7.4} {:8.4} {:8.4} {:8.4} {:8.4} {:8.4}\n",
            r.duty_cycle, r.eta, r.budget.sn, r.budget.pn, r.budget.ban, r.budget.en, r.budget.total
        );
    }
    s += &format!(
        "SQL: kappa^4 = {:.4} (numeric {:.4}), noise/PN = {:.4}, std ratio = {:.3}\n",
        report.sql.kappa_opt.powi(4),
        report.sql_kappa4_numeric,
        report.sql.variance_ratio,
        report.sql.std_ratio
    );
    s += &format!("predicted xi^2 = {:.3} dB\n", report.predicted_xi2_db);
    Ok(em.finish(report, s))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateReport {
    pub archive: PathBuf,
    pub record_count: usize,
    pub config_hash: String,
}

/// Simulates `analysis.n_reps` shots and writes them as an archive.
pub fn cmd_simulate(cfg: &RunConfig, progress: impl Fn(usize) + Sync) -> Result<CommandOutput<SimulateReport>> {
    cfg.validate()?;
    let model = cfg.setup().model()?;
    let records = model.simulate_batch_with_progress(cfg.analysis.n_reps, cfg.seed, progress)?;
    let archive = ShotArchive::new(cfg, records)?;
    let mut em = Emitter::new(&cfg.output_dir, cfg.emit)?;
    let path = cfg.output_dir.join(ARCHIVE_FILE);
    archive.write(&path)?;
    em.files.push(path.clone());
    let report = SimulateReport {
        archive: path,
        record_count: archive.header.record_count,
        config_hash: archive.header.config_hash.clone(),
    };
    let s = format!(
        "wrote {} records to {}\nconfig hash {}\n",
        report.record_count,
        report.archive.display(),
        report.config_hash
    );
    Ok(em.finish(report, s))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub config_hash: String,
    pub n_shots: usize,
    pub bins_used: usize,
    pub squeezing: SqueezingResult,
    /// Exact moments of the generating model at the same truncation.
    pub predicted: PairMoments,
    pub predicted_xi2_db: f64,
}

impl AnalysisReport {
    pub fn to_text(&self) -> String {
        let q = &self.squeezing;
        format!(
            "shots            {}\n\
             Q_B bins used    {}\n\
             xi^2             {:.4} +/- {:.4} ({:.3} +/- {:.3} dB)\n\
             predicted xi^2   {:.3} dB\n\
             alpha            {:.4} +/- {:.4}\n\
             Var(Q_A)         {:.4} +/- {:.4}\n\
             Var(Q_B)         {:.4} +/- {:.4}\n\
             Var(Q_B|Q_A)     {:.4} +/- {:.4}\n\
             SN_B, EN_B       {:.4}, {:.4}\n\
             PN_B             {:.4} +/- {:.4}\n\
             config hash      {}\n",
            self.n_shots,
            self.bins_used,
            q.xi2,
            q.xi2_se,
            q.xi2_db,
            q.xi2_db_se,
            self.predicted_xi2_db,
            q.alpha,
            q.alpha_se,
            q.var_a,
            q.var_a_se,
            q.var_b,
            q.var_b_se,
            q.cond_var_b,
            q.cond_var_b_se,
            q.sn_b,
            q.en_b,
            q.pn_b,
            q.pn_b_se,
            self.config_hash
        )
    }
}

/// Squeezing analysis of in-memory records produced under `cfg`.
/// `truncate_bins` overrides the configured truncation.
pub fn analyze_records(cfg: &RunConfig, records: &[ShotRecord], truncate_bins: Option<usize>) -> Result<AnalysisReport> {
    let model = cfg.setup().model()?;
    let mut opts = cfg.analysis.squeezing_options();
    if truncate_bins.is_some() {
        opts.truncate_bins = truncate_bins;
    }
    let bins = opts.truncate_bins.unwrap_or(model.sequence().bins_b());
    let model = model.truncated(bins)?;
    let squeezing = squeezing_metric_with(records, model.sn_b(bins), model.en_b(bins), &opts)?;
    let predicted = model.moments();
    Ok(AnalysisReport {
        config_hash: cfg.hash()?,
        n_shots: records.len(),
        bins_used: bins,
        squeezing,
        predicted_xi2_db: predicted.xi2_db(),
        predicted,
    })
}

/// Reads and verifies an archive, then runs [`analyze_records`].
pub fn cmd_analyze(archive: &Path, truncate_bins: Option<usize>, out_dir: &Path) -> Result<CommandOutput<AnalysisReport>> {
    let a = ShotArchive::read(archive)?;
    let report = analyze_records(&a.config, &a.records, truncate_bins)?;
    let mut em = Emitter::new(out_dir, a.config.emit)?;
    em.json("analysis.json", &report)?;
    let text = report.to_text();
    em.text("analysis.txt", &text)?;
    Ok(em.finish(report, text))
}

/// The sample with its peak field solved for `analysis.phase_sweep.target_snr`
/// if set.
fn phase_sweep_sample(cfg: &RunConfig) -> Result<SampleResponse> {
    match cfg.analysis.phase_sweep.target_snr {
        Some(snr) => calibrate_peak_field_for_snr(&cfg.setup(), &cfg.sample, snr),
        None => Ok(cfg.sample),
    }
}

fn scan_sample(cfg: &RunConfig) -> Result<SampleResponse> {
    let s = &cfg.analysis.scan;
    match s.target_center_std_m {
        Some(t) => calibrate_peak_field_for_center_std(&cfg.setup(), &cfg.sample, &s.positions(), s.n_reps_per_pos, t),
        None => Ok(cfg.sample),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSweepReport {
    pub sample: SampleResponse,
    pub sweep: PhaseSweep,
    /// Sinusoid through the background-subtracted means, when the phases
    /// allow one.
    pub sinusoid: Option<SinusoidFit>,
}

pub fn cmd_phase_sweep(cfg: &RunConfig) -> Result<CommandOutput<PhaseSweepReport>> {
    cfg.validate()?;
    let sample = phase_sweep_sample(cfg)?;
    let p = &cfg.analysis.phase_sweep;
    let opts = PhaseSweepOptions {
        alpha_mode: cfg.analysis.alpha_mode,
        noiseless: false,
    };
    let sweep = phase_sweep(&cfg.setup(), &sample, &p.phases_rad, p.n_reps, cfg.seed, &opts)?;
    let sinusoid = sweep.sinusoid().ok();
    let report = PhaseSweepReport { sample, sweep, sinusoid };

    let mut em = Emitter::new(&cfg.output_dir, cfg.emit)?;
    em.csv(
        "phase_sweep.csv",
        &[
            "phase_deg",
            "phase_rad",
            "signal",
            "signal_se",
            "signal_cond",
            "signal_cond_se",
            "sd_uncond",
            "sd_cond",
            "snr_uncond",
            "snr_cond",
        ],
        report.sweep.points.iter().map(|q| {
            vec![
                num(q.phase_rad.to_degrees()),
                num(q.phase_rad),
                num(q.signal),
                num(q.signal_se),
                num(q.signal_cond),
                num(q.signal_cond_se),
                num(q.sd_uncond),
                num(q.sd_cond),
                num(q.snr_uncond),
                num(q.snr_cond),
            ]
        }),
    )?;
    em.json("phase_sweep.json", &report)?;

    let mut s = format!(
        "peak field {:.4e} T, background alpha {:.4}\n  phase   signal   SNR    SNR|Q_A\n",
        report.sample.peak_field_t, report.sweep.background_alpha
    );
    for q in &report.sweep.points {
        s += &format!(
            "{:7.1} {:8.4} {:6.3} {:6.3}\n",
            q.phase_rad.to_degrees(),
            q.signal,
            q.snr_uncond,
            q.snr_cond
        );
    }
    if let Some(f) = &report.sinusoid {
        s += &format!(
            "sinusoid: maximum at {:.1} deg, amplitude {:.4}, R^2 {:.4}\n",
            f.phase_of_max_rad.to_degrees(),
            f.amplitude,
            f.r_squared
        );
    }
    Ok(em.finish(report, s))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub duration_estimate_s: f64,
    pub scan: ScanResult,
}

/// Histogram of `values` in bins of `width` aligned to multiples of `width`.
fn histogram(values: &[f64], width: f64) -> Vec<(f64, usize)> {
    if values.is_empty() {
        return vec![];
    }
    let idx = |v: f64| (v / width).floor() as i64;
    let lo = values.iter().map(|&v| idx(v)).min().unwrap();
    let hi = values.iter().map(|&v| idx(v)).max().unwrap();
    let mut counts = vec![0usize; (hi - lo + 1) as usize];
    for &v in values {
        counts[(idx(v) - lo) as usize] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| ((lo + i as i64) as f64 * width, c))
        .collect()
}

pub fn cmd_scan(cfg: &RunConfig) -> Result<CommandOutput<ScanReport>> {
    cfg.validate()?;
    let sample = scan_sample(cfg)?;
    let p = &cfg.analysis.scan;
    let opts = ScanOptions {
        n_reps_per_pos: p.n_reps_per_pos,
        n_scans: p.n_scans,
        background_reps: p.background_reps,
        alpha_mode: cfg.analysis.alpha_mode,
        rf_phase_rad: None,
        noiseless: false,
    };
    let scan = scan_1d(&cfg.setup(), &sample, &p.positions(), cfg.seed, &opts)?;
    let report = ScanReport {
        duration_estimate_s: scan_duration_estimate(p.n_positions, p.n_reps_per_pos, p.per_rep_s)?,
        scan,
    };
    let r = &report.scan;

    let mut em = Emitter::new(&cfg.output_dir, cfg.emit)?;
    em.csv(
        "scan_profile.csv",
        &["position_m", "signal", "signal_cond", "sd_uncond", "sd_cond"],
        r.positions.iter().map(|q| {
            vec![
                num(q.position_m),
                num(q.signal),
                num(q.signal_cond),
                num(q.sd_uncond),
                num(q.sd_cond),
            ]
        }),
    )?;
    em.csv(
        "scan_centers.csv",
        &["scan", "center_uncond_m", "center_cond_m", "alpha"],
        (0..r.centers_uncond.len()).map(|i| {
            vec![
                i.to_string(),
                opt(r.centers_uncond[i]),
                opt(r.centers_cond[i]),
                num(r.alphas[i]),
            ]
        }),
    )?;
    let bin = 0.1e-3;
    let flat = |v: &[Option<f64>]| v.iter().flatten().copied().collect::<Vec<_>>();
    let (hu, hc) = (histogram(&flat(&r.centers_uncond), bin), histogram(&flat(&r.centers_cond), bin));
    let mut edges: Vec<f64> = hu.iter().chain(&hc).map(|h| h.0).collect();
    edges.sort_by(f64::total_cmp);
    edges.dedup();
    let count = |h: &[(f64, usize)], e: f64| h.iter().find(|x| x.0 == e).map_or(0, |x| x.1);
    em.csv(
        "scan_histogram.csv",
        &["bin_start_m", "bin_width_m", "count_uncond", "count_cond"],
        edges
            .iter()
            .map(|&e| vec![num(e), num(bin), count(&hu, e).to_string(), count(&hc, e).to_string()]),
    )?;
    em.json("scan.json", &report)?;

    let mut s = format!(
        "peak field {:.4e} T, {} scans x {} positions x {} reps\n",
        r.sample.peak_field_t,
        r.centers_uncond.len(),
        r.positions.len(),
        r.n_reps_per_pos
    );
    s += &format!(
        "center std: unconditional {:.3} mm, conditional {:.3} mm, improvement {:.3}\n",
        r.uncond.std_m * 1e3,
        r.cond.std_m * 1e3,
        r.improvement
    );
    s += &format!(
        "center mean: unconditional {:.4} mm, conditional {:.4} mm\n",
        r.uncond.mean_m * 1e3,
        r.cond.mean_m * 1e3
    );
    s += &format!("scan duration estimate {:.1} s\n", report.duration_estimate_s);
    for w in r.warnings() {
        s += &format!("warning: {w}\n");
    }
    Ok(em.finish(report, s))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapSweepReport {
    pub points: Vec<GapPoint>,
}

pub fn cmd_gap_sweep(cfg: &RunConfig) -> Result<CommandOutput<GapSweepReport>> {
    cfg.validate()?;
    let g = &cfg.analysis.gap_sweep;
    let points = gap_squeezing_sweep(
        &cfg.setup(),
        &g.gaps_s,
        g.n_reps,
        cfg.seed,
        &cfg.analysis.squeezing_options(),
    )?;
    let report = GapSweepReport { points };
    let mut em = Emitter::new(&cfg.output_dir, cfg.emit)?;
    em.csv(
        "gap_sweep.csv",
        &["gap_s", "xi2_db", "xi2_db_se", "predicted_xi2_db", "n_shots"],
        report.points.iter().map(|q| {
            vec![
                num(q.gap_s),
                num(q.xi2_db),
                num(q.xi2_db_se),
                num(q.predicted_xi2_db),
                q.n_shots.to_string(),
            ]
        }),
    )?;
    em.json("gap_sweep.json", &report)?;
    let mut s = String::from("  gap(us)  xi2(dB)         predicted\n");
    for q in &report.points {
        s += &format!(
            "{:9.1} {:7.3} +/- {:5.3} {:7.3}\n",
            q.gap_s * 1e6,
            q.xi2_db,
            q.xi2_db_se,
            q.predicted_xi2_db
        );
    }
    Ok(em.finish(report, s))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MorsReport {
    pub true_polarization: f64,
    pub fit: FitResult,
}

/// Synthesizes a MORS spectrum at the ensemble polarization and fits it back.
pub fn cmd_mors(cfg: &RunConfig) -> Result<CommandOutput<MorsReport>> {
    cfg.validate()?;
    let m = &cfg.analysis.mors;
    let pop = PopulationDistribution::spin_temperature(cfg.ensemble.spin_f, cfg.ensemble.polarization)?;
    let spectrum = mors_spectrum(&pop, m.larmor_hz, m.quadratic_splitting_hz, m.linewidth_hz)?;
    let half_span = (cfg.ensemble.spin_f as f64 + 2.0) * m.quadratic_splitting_hz;
    let freqs: Vec<f64> = (0..m.n_points)
        .map(|i| m.larmor_hz - half_span + 2.0 * half_span * i as f64 / (m.n_points - 1) as f64)
        .collect();
    let clean = spectrum.sample(&freqs);
    let peak = clean.iter().copied().fold(0.0, f64::max);
    let mut rng = rng_from_seed(child_seed(cfg.seed, 0x4d4f5253));
    let noisy: Vec<f64> = clean
        .iter()
        .map(|&y| y + m.noise_rel * peak * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let points: Vec<(f64, f64)> = freqs.iter().copied().zip(noisy.iter().copied()).collect();
    let fit = fit_mors_polarization(&points, m.larmor_hz, m.quadratic_splitting_hz)?;
    let report = MorsReport {
        true_polarization: cfg.ensemble.polarization,
        fit,
    };

    let mut em = Emitter::new(&cfg.output_dir, cfg.emit)?;
    em.csv(
        "mors_spectrum.csv",
        &["frequency_hz", "magnitude", "model"],
        (0..freqs.len()).map(|i| vec![num(freqs[i]), num(noisy[i]), num(clean[i])]),
    )?;
    em.json("mors.json", &report)?;
    let s = format!(
        "polarization {:.5} +/- {:.5} (true {:.5})\n",
        report.fit.params[0],
        report.fit.std_errors()[0],
        report.true_polarization
    );
    Ok(em.finish(report, s))
}

/// Fitters available to [`cmd_fit`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitKind {
    Decay,
    Gaussian,
    NoisePower { eta: f64 },
    Mors { larmor_hz: f64, quadratic_splitting_hz: f64 },
}

/// Reads `x,y[,sigma]` rows. A first row that does not parse as numbers is
/// taken as a header; lines starting with `#` are comments.
pub fn read_points(path: &Path) -> Result<(Vec<(f64, f64)>, Option<Vec<f64>>)> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(file);
    let mut points = Vec::new();
    let mut sigmas = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let parsed: std::result::Result<Vec<f64>, _> = row.iter().map(str::parse::<f64>).collect();
        let vals = match parsed {
            Ok(v) => v,
            Err(_) if i == 0 => continue,
            Err(e) => return Err(Error::invalid("input", format!("row {}: {e}", i + 1))),
        };
        if !(2..=3).contains(&vals.len()) {
            return Err(Error::invalid("input", format!("row {} needs 2 or 3 columns", i + 1)));
        }
        points.push((vals[0], vals[1]));
        if let Some(&s) = vals.get(2) {
            sigmas.push(s);
        }
    }
    let sigmas = match sigmas.len() {
        0 => None,
        n if n == points.len() => Some(sigmas),
        _ => return Err(Error::invalid("input", "sigma column must be given on every row or none")),
    };
    Ok((points, sigmas))
}

/// Fits the points in `input` and writes `fit.json` into `out_dir`.
pub fn cmd_fit(kind: FitKind, input: &Path, out_dir: &Path) -> Result<CommandOutput<FitResult>> {
    let (points, sigmas) = read_points(input)?;
    let fit = match kind {
        FitKind::Decay => fit_exponential_decay(&points)?,
        FitKind::Gaussian => fit_gaussian_profile(&points)?,
        FitKind::NoisePower { eta } => fit_noise_vs_power(&points, eta, sigmas.as_deref())?,
        FitKind::Mors {
            larmor_hz,
            quadratic_splitting_hz,
        } => fit_mors_polarization(&points, larmor_hz, quadratic_splitting_hz)?,
    };
    let mut em = Emitter::new(
        out_dir,
        crate::config::EmitFlags {
            csv: false,
            json: true,
        },
    )?;
    em.json("fit.json", &fit)?;
    let se = fit.std_errors();
    let mut s = format!("{} ({} points, residual norm {:.4e})\n", fit.model, fit.n_points, fit.residual_norm);
    for (i, name) in fit.param_names.iter().enumerate() {
        s += &format!("  {name:<12} {:.6e} +/- {:.2e}\n", fit.params[i], se[i]);
    }
    Ok(em.finish(fit, s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::StroboscopicParams;
    use crate::presets::PresetName;

    fn cfg_in(dir: &Path) -> RunConfig {
        let mut cfg = RunConfig::from_preset(PresetName::Optimum).unwrap();
        cfg.output_dir = dir.to_path_buf();
        cfg
    }

    #[test]
    fn budget_matches_direct_calls() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = cfg_in(dir.path());
        cfg.analysis.budget.duty_cycles = vec![0.0, 0.15, 0.5, 0.9];
        let out = cmd_budget(&cfg).unwrap();
        assert_eq!(out.report.rows[0].budget.ban, 0.0);
        for row in &out.report.rows[1..] {
            let s = StroboscopicParams::new(row.duty_cycle, cfg.stroboscopic.duration_s, cfg.stroboscopic.kappa_hat_sq)
                .unwrap();
            let direct = stroboscopic_noise_budget(&s, 1.0, cfg.electronic_noise_snu).unwrap();
            assert_eq!(row.budget, direct);
        }
        assert!((out.report.sql.std_ratio - 1.47).abs() < 0.005);
        assert!(out.summary.contains("std ratio = 1.468"));
        assert!(dir.path().join("budget.csv").exists());
    }

    #[test]
    fn histogram_counts_everything() {
        let h = histogram(&[0.05, 0.15, 0.16, -0.01], 0.1);
        assert_eq!(h.iter().map(|x| x.1).sum::<usize>(), 4);
        assert_eq!(h.len(), 3);
    }

    #[test]
    fn point_reader_handles_headers_and_sigmas() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pts.csv");
        fs::write(&p, "# comment\nx,y,sigma\n1,2,0.1\n3,4,0.2\n").unwrap();
        let (pts, s) = read_points(&p).unwrap();
        assert_eq!(pts, vec![(1.0, 2.0), (3.0, 4.0)]);
        assert_eq!(s, Some(vec![0.1, 0.2]));
        fs::write(&p, "1,2\nfoo,4\n").unwrap();
        assert!(read_points(&p).is_err());
    }
}
