//! The subcommands as library functions. The binary only parses arguments,
//! prints, and maps errors to exit codes.

use std::path::{Path, PathBuf};

use statrs::distribution::{ChiSquared, ContinuousCDF};

use hbt_core::calibration::{
    aom_gate_improvement, extinction_chain, extinction_db, factorize_fidelities, fit_power_vs_reprate,
    peak_power_from_trace, srd_pulse_shape, ChainConfig, Fidelities, PowerScanPoint, PulseTail, ShelvingModel,
    SrdPulse,
};
use hbt_core::correlator::{
    expected_background, g2_n_prediction, g2_zero, gate_stream, integrate_peak, multiphoton_bound, side_peak_stats,
    AnalysisParams, CorrelationHistogram, G2Report, RateSet, SidePeaks,
};
use hbt_core::experiment::ExperimentConfig;
use hbt_core::sampler::RunSpec;
use hbt_core::sequence::CycleTimeline;
use hbt_core::tagstream::TagStream;
use hbt_core::{Measured, PS_PER_S};

use crate::config::{seconds_to_ps, BackgroundMode, RunConfig};
use crate::error::{CliError, Result};
use crate::format::{self, Format};
use crate::fsio;
use crate::manifest::Manifest;
use crate::parallel;
use crate::report::{self, CorrelationReport, PulseChainReport, ScanRow};

/// Seed of the companion no-ion run belonging to a signal seed.
pub fn background_seed(seed: u64) -> u64 {
    seed ^ 0x9e37_79b9_7f4a_7c15
}

/// Seed of the `n`-ion run in a scan.
pub fn scan_seed(seed: u64, n: u32) -> u64 {
    seed.wrapping_add((n as u64).wrapping_mul(0xd1b5_4a32_d192_ed03))
}

fn run_spec(cfg: &RunConfig, duration_ps: u64, seed: u64, emissions: bool) -> RunSpec {
    RunSpec {
        duration_ps,
        seed,
        emissions,
        method: cfg.io.method,
        shard_cycles: cfg.io.shard_cycles,
    }
}

#[derive(Debug, Clone)]
pub struct SimulateOptions {
    pub seed: u64,
    pub no_ion: bool,
    pub format: Format,
    pub threads: Option<usize>,
}

impl SimulateOptions {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self { seed: cfg.io.seed, no_ion: false, format: cfg.io.format, threads: None }
    }
}

/// Simulates one stream in memory.
pub fn simulate_stream(cfg: &RunConfig, duration_ps: u64, seed: u64, emissions: bool, threads: Option<usize>) -> Result<TagStream> {
    let experiment = cfg.experiment()?;
    let pool = parallel::pool(threads)?;
    parallel::simulate(&experiment, &run_spec(cfg, duration_ps, seed, emissions), &pool)
}

/// `simulate`: writes the stream and its manifest next to it.
pub fn cmd_simulate(cfg: &RunConfig, opts: &SimulateOptions, out: &Path) -> Result<Manifest> {
    let experiment = cfg.experiment()?;
    let duration_ps = seconds_to_ps(cfg.io.duration_s)?;
    let stream = simulate_stream(cfg, duration_ps, opts.seed, !opts.no_ion, opts.threads)?;
    let bytes = format::write_stream(out, &stream, opts.format)?;
    let mut echo = cfg.clone();
    echo.io.seed = opts.seed;
    echo.io.format = opts.format;
    echo.io.out = None;
    let manifest =
        Manifest::for_stream(&echo, &experiment.detector, opts.seed, !opts.no_ion, opts.format, out, &stream, &bytes);
    fsio::write_atomic(&Manifest::path_for(out), manifest.to_toml().as_bytes())?;
    Ok(manifest)
}

/// Re-runs a manifest into `out` and checks the content hash.
pub fn cmd_replay(manifest_path: &Path, out: &Path, threads: Option<usize>) -> Result<Manifest> {
    let m = Manifest::load(manifest_path)?;
    let opts = SimulateOptions { seed: m.seed, no_ion: !m.emissions, format: m.format, threads };
    let replayed = cmd_simulate(&m.config, &opts, out)?;
    if replayed.output_hash != m.output_hash {
        return Err(CliError::config(format!(
            "replay hash {} differs from manifest hash {}",
            replayed.output_hash, m.output_hash
        )));
    }
    Ok(replayed)
}

/// Gates a stream unless it is already gated; checks the repetition period.
fn gated(stream: &TagStream, timeline: &CycleTimeline, what: &str) -> Result<TagStream> {
    if stream.header.rep_period_ps != timeline.rep_period_ps {
        return Err(CliError::config(format!(
            "{what} stream has a {} ps period but the config uses {} ps",
            stream.header.rep_period_ps, timeline.rep_period_ps
        )));
    }
    Ok(match stream.header.gate {
        Some(g) if g == timeline.gate() => stream.clone(),
        _ => gate_stream(stream, timeline),
    })
}

/// Background source for the correlate pipeline.
#[derive(Debug, Clone)]
pub enum Background {
    /// A recorded or simulated no-ion stream.
    Stream(TagStream),
    Rates(RateSet),
    None,
}

impl Background {
    /// Resolves the configured mode. `explicit` (from `--background`) wins.
    pub fn resolve(cfg: &RunConfig, explicit: Option<&Path>, seed: u64, threads: Option<usize>) -> Result<Self> {
        if let Some(p) = explicit {
            return Ok(Background::Stream(format::read_stream(p)?));
        }
        match cfg.analysis.background {
            BackgroundMode::NoIon => {
                let d = seconds_to_ps(cfg.analysis.background_duration_s)?;
                Ok(Background::Stream(simulate_stream(cfg, d, background_seed(seed), false, threads)?))
            }
            BackgroundMode::Rates => cfg.analysis.rates.map(Background::Rates).ok_or(CliError::NoBackgroundSource),
            BackgroundMode::None => Ok(Background::None),
        }
    }

    fn mode(&self) -> BackgroundMode {
        match self {
            Background::Stream(_) => BackgroundMode::NoIon,
            Background::Rates(_) => BackgroundMode::Rates,
            Background::None => BackgroundMode::None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CorrelateOutput {
    pub histogram: CorrelationHistogram,
    pub side_peaks: SidePeaks,
    pub report: CorrelationReport,
}

/// `correlate` on an in-memory stream.
pub fn correlate_stream(
    cfg: &RunConfig,
    params: &AnalysisParams,
    stream: &TagStream,
    background: &Background,
    threads: Option<usize>,
) -> Result<CorrelateOutput> {
    let experiment = cfg.experiment()?;
    let timeline = experiment.timeline()?;
    let signal = gated(stream, &timeline, "signal")?;
    let pool = parallel::pool(threads)?;
    let rep = timeline.rep_period_ps;
    let spec = params.histogram_spec(rep)?;
    let histogram = parallel::cross_correlate(&signal.tags, &spec, &pool)?;
    let c0 = integrate_peak(&histogram, 0, params.peak_half_width_ps)?;
    let side = side_peak_stats(&histogram, rep, params.side_peaks, params.peak_half_width_ps)?;
    let t_exp_s = signal.duration_s();
    let rates = match background {
        Background::Stream(bg) => Some(RateSet::from_streams(&signal, &gated(bg, &timeline, "background")?)?),
        Background::Rates(r) => Some(*r),
        Background::None => None,
    };
    let c_b = match &rates {
        Some(r) => expected_background(r, t_exp_s, rep as f64 / PS_PER_S)?,
        None => Measured::exact(0.0),
    };
    let g2 = g2_zero(c0, side.c_tau(), c_b, params.side_peaks)?;
    let report = CorrelationReport {
        stream_hash: None,
        background_mode: background.mode(),
        t_exp_s,
        rep_period_ps: rep,
        bin_width_ps: params.bin_width_ps,
        peak_half_width_ps: params.peak_half_width_ps,
        gated_tags: signal.len() as u64,
        side_peak_dispersion: Some(side.dispersion()).filter(|d| d.is_finite()),
        rates,
        multiphoton_bound: multiphoton_bound(experiment.emitter.p_excite, g2.g2_corrected.value.max(0.0)).ok(),
        g2,
    };
    Ok(CorrelateOutput { histogram, side_peaks: side, report })
}

/// `correlate` from files; writes `histogram.csv`, `peaks.csv`, and
/// `report.toml` into `out_dir` when given.
pub fn cmd_correlate(
    cfg: &RunConfig,
    stream_path: &Path,
    background_path: Option<&Path>,
    out_dir: Option<&Path>,
    threads: Option<usize>,
) -> Result<CorrelateOutput> {
    let bytes = fsio::read(stream_path)?;
    let stream = format::read_stream(stream_path)?;
    let seed = stream.header.seed.unwrap_or(cfg.io.seed);
    let background = Background::resolve(cfg, background_path, seed, threads)?;
    let mut out = correlate_stream(cfg, &cfg.analysis.params(), &stream, &background, threads)?;
    out.report.stream_hash = Some(fsio::content_hash(&bytes));
    if let Some(dir) = out_dir {
        write_correlation(dir, &out)?;
    }
    Ok(out)
}

pub fn write_correlation(dir: &Path, out: &CorrelateOutput) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    fsio::write_atomic(&dir.join("histogram.csv"), report::histogram_csv(&out.histogram).as_bytes())?;
    let rows = report::peak_rows(out.report.g2.c0.value as u64, &out.side_peaks, out.report.rep_period_ps);
    let comments = [format!("half_width_ps={}", out.report.peak_half_width_ps)];
    fsio::write_atomic(&dir.join("peaks.csv"), report::rows_csv(&rows, &comments).as_bytes())?;
    fsio::write_atomic(&dir.join("report.toml"), out.report.to_toml().as_bytes())?;
    Ok(())
}

/// Inputs for `correlate --offline`.
#[derive(Debug, Clone, Copy)]
pub struct OfflineCounts {
    pub c0: u64,
    pub c_tau_mean: f64,
    /// Standard error of the side-peak mean; `√(mean/n)` when not given.
    pub c_tau_err: Option<f64>,
    pub n_peaks: usize,
    pub t_exp_s: f64,
}

/// `g²(0)` from integrated counts alone.
pub fn cmd_offline(cfg: &RunConfig, counts: &OfflineCounts) -> Result<G2Report> {
    if counts.n_peaks == 0 || !(counts.c_tau_mean >= 0.0) {
        return Err(CliError::config("offline mode needs n_peaks > 0 and a nonnegative side-peak mean"));
    }
    let err = counts.c_tau_err.unwrap_or_else(|| (counts.c_tau_mean / counts.n_peaks as f64).sqrt());
    let c_tau = Measured::new(counts.c_tau_mean, err);
    let rep_s = cfg.experiment.timing.rep_period_ps as f64 / PS_PER_S;
    let c_b = match (cfg.analysis.background, cfg.analysis.rates) {
        (BackgroundMode::None, _) => Measured::exact(0.0),
        (BackgroundMode::Rates, Some(r)) => expected_background(&r, counts.t_exp_s, rep_s)?,
        _ => return Err(CliError::NoBackgroundSource),
    };
    Ok(g2_zero(counts.c0, c_tau, c_b, counts.n_peaks)?)
}

#[derive(Debug, Clone, Copy)]
pub struct ScanOptions {
    pub n_max: u32,
    pub duration_s: f64,
    pub background_s: f64,
    pub side_peaks: usize,
}

impl Default for ScanOptions {
    /// Twenty-minute runs over 16 side peaks with a five-minute no-ion run.
    fn default() -> Self {
        Self { n_max: 6, duration_s: 1_200.0, background_s: 300.0, side_peaks: 16 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanResult {
    pub rows: Vec<ScanRow>,
    pub chi2: f64,
    pub dof: usize,
    pub p_value: f64,
}

impl ScanResult {
    pub fn csv(&self) -> String {
        let comments = [
            format!("chi2={}", self.chi2),
            format!("dof={}", self.dof),
            format!("p_value={}", self.p_value),
        ];
        report::rows_csv(&self.rows, &comments)
    }
}

/// Upper-tail χ² probability.
pub fn chi2_p_value(chi2: f64, dof: usize) -> f64 {
    ChiSquared::new(dof as f64).map(|d| d.sf(chi2)).unwrap_or(f64::NAN)
}

/// `scan-n`: one simulated run per ion number, corrected with a shared no-ion run.
pub fn cmd_scan_n(cfg: &RunConfig, opts: &ScanOptions, seed: u64, threads: Option<usize>) -> Result<ScanResult> {
    if opts.n_max < 1 {
        return Err(CliError::config("n_max must be at least 1"));
    }
    let params = AnalysisParams { side_peaks: opts.side_peaks, ..cfg.analysis.params() };
    let duration = seconds_to_ps(opts.duration_s)?;
    let bg = simulate_stream(cfg, seconds_to_ps(opts.background_s)?, background_seed(seed), false, threads)?;
    let background = Background::Stream(bg);
    let mut rows = Vec::new();
    for n in 1..=opts.n_max {
        let mut run_cfg = cfg.clone();
        run_cfg.experiment.n_ions = n;
        let stream = simulate_stream(&run_cfg, duration, scan_seed(seed, n), true, threads)?;
        let out = correlate_stream(&run_cfg, &params, &stream, &background, threads)?;
        let g = out.report.g2;
        rows.push(ScanRow {
            n,
            g2: g.g2_corrected.value,
            g2_err: g.g2_corrected.err,
            prediction: g2_n_prediction(n)?,
            c0: g.c0.value as u64,
            c_tau: g.c_tau_mean.value,
            c_b: g.c_b.value,
        });
    }
    let chi2: f64 = rows.iter().map(|r| r.pull() * r.pull()).sum();
    let dof = rows.len();
    Ok(ScanResult { rows, chi2, dof, p_value: chi2_p_value(chi2, dof) })
}

/// Noiseless power scan built from the reference pulse energy and CW leakage.
pub fn synthetic_power_scan() -> Vec<PowerScanPoint> {
    let (e, b) = (19.1e-12, 1.92e-6);
    [0.0, 0.2e6, 0.4e6, 0.8e6, 1.0e6, 2.0e6, 5.0e6]
        .iter()
        .map(|&r| PowerScanPoint::new(r, e * r + b))
        .collect()
}

/// `pulsechain`: fit, peak power from the synthesized pulse, and the leakage budget.
pub fn cmd_pulsechain(points: &[PowerScanPoint], chain: &ChainConfig) -> Result<PulseChainReport> {
    let fit = fit_power_vs_reprate(points)?;
    let pulse = srd_pulse_shape(&SrdPulse { tail: Some(PulseTail::REFERENCE), ..SrdPulse::default() })?;
    let peak_power_w = peak_power_from_trace(&pulse, fit.pulse_energy_j.value)?;
    let measured_extinction_db = extinction_db(peak_power_w, fit.cw_background_w.value)?;
    Ok(PulseChainReport {
        fit,
        peak_power_w,
        pulse_fwhm_ps: pulse.fwhm().unwrap_or(f64::NAN),
        measured_extinction_db,
        aom_improvement_db: aom_gate_improvement(chain.aom_gate_ps, chain.rep_period_ps)?,
        budget: extinction_chain(chain)?,
    })
}

pub fn cmd_factorize(f_a: f64, f_b: f64, f_ab: f64, model: ShelvingModel) -> Result<Fidelities> {
    Ok(factorize_fidelities(f_a, f_b, f_ab, model)?)
}

/// Reads a power-scan CSV.
pub fn load_power_scan(path: &Path) -> Result<Vec<PowerScanPoint>> {
    report::parse_power_scan(&fsio::read(path)?, path)
}

/// Loads an optional TOML chain config.
pub fn load_chain(path: Option<&PathBuf>) -> Result<ChainConfig> {
    match path {
        None => Ok(ChainConfig::default()),
        Some(p) => toml::from_str(&fsio::read_to_string(p)?).map_err(|e| CliError::config(format!("{}: {e}", p.display()))),
    }
}

/// The experiment a config resolves to, for display.
pub fn describe(cfg: &RunConfig) -> Result<(ExperimentConfig, CycleTimeline)> {
    let e = cfg.experiment()?;
    let t = e.timeline()?;
    Ok((e, t))
}
