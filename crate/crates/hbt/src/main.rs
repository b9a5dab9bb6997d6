use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hbt_core::calibration::ShelvingModel;
use photon_hbt::commands::{self, OfflineCounts, ScanOptions, SimulateOptions};
use photon_hbt::config::RunConfig;
use photon_hbt::error::{CliError, Result};
use photon_hbt::format::Format;
use photon_hbt::parallel::THREADS_ENV;
use photon_hbt::{fsio, report};

#[derive(Parser)]
#[command(name = "photon-hbt", version, about = "Pulsed single-photon source simulation and g²(0) analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration; defaults to the reference experiment.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding io.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, env = THREADS_ENV)]
    threads: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        match &self.config {
            Some(p) => RunConfig::load(p),
            None => Ok(RunConfig::default()),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a tag stream and write it with a replay manifest.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Stream file; the manifest goes to `<out>.manifest.toml`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<Format>,
        /// Duration in seconds, overriding io.duration_s.
        #[arg(long)]
        duration: Option<f64>,
        /// Number of ions, overriding experiment.n_ions.
        #[arg(long)]
        ions: Option<u32>,
        /// Background run: pulse sequence applied with no ion present.
        #[arg(long)]
        no_ion: bool,
        /// Re-run a manifest and verify its hash.
        #[arg(long, conflicts_with_all = ["no_ion", "duration", "ions"])]
        replay: Option<PathBuf>,
    },
    /// Gate, correlate, and estimate g²(0) for a stream, or from counts with --offline.
    Correlate {
        #[command(flatten)]
        common: Common,
        /// Stream file (binary or text).
        stream: Option<PathBuf>,
        /// No-ion stream for the background rates.
        #[arg(long)]
        background: Option<PathBuf>,
        /// Output directory for histogram.csv, peaks.csv, and report.toml.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Compute from integrated counts instead of a stream.
        #[arg(long, requires_all = ["c0", "c_tau", "t_exp"])]
        offline: bool,
        #[arg(long)]
        c0: Option<u64>,
        /// Mean integrated side-peak counts.
        #[arg(long)]
        c_tau: Option<f64>,
        /// Standard error of the side-peak mean.
        #[arg(long)]
        c_tau_err: Option<f64>,
        #[arg(long, default_value_t = 32)]
        n_peaks: usize,
        /// Experiment time in seconds.
        #[arg(long)]
        t_exp: Option<f64>,
        /// Use the reference single-ion singles rates for the background.
        #[arg(long)]
        reference_rates: bool,
    },
    /// g²ₙ(0) against 1 − 1/n for n = 1..n_max.
    ScanN {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 6)]
        n_max: u32,
        /// Seconds per run.
        #[arg(long, default_value_t = 1200.0)]
        duration: f64,
        /// Seconds of no-ion background.
        #[arg(long, default_value_t = 300.0)]
        background_duration: f64,
        #[arg(long, default_value_t = 16)]
        side_peaks: usize,
        /// CSV output; printed to stdout otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pulse energy fit and extinction budget.
    Pulsechain {
        #[command(flatten)]
        common: Common,
        /// CSV with rep_rate_hz,avg_power_w[,sigma_w]; a noiseless reference scan if omitted.
        #[arg(long)]
        scan: Option<PathBuf>,
        /// TOML with eom_db, ase_floor_db, aom_gate_ps, rep_period_ps.
        #[arg(long)]
        budget: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Split sequence fidelities into pumping and shelving fidelities.
    Factorize {
        #[arg(long)]
        f_a: f64,
        #[arg(long)]
        f_b: f64,
        #[arg(long)]
        f_ab: f64,
        #[arg(long, value_enum, default_value = "sequential-rescue")]
        model: ModelArg,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ModelArg {
    SequentialRescue,
    Product,
}

fn emit(out: Option<&PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(p) => fsio::write_atomic(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { common, out, format, duration, ions, no_ion, replay } => {
            let mut cfg = common.load()?;
            let out = out.or_else(|| cfg.io.out.clone()).ok_or_else(|| CliError::config("--out or io.out is required"))?;
            if let Some(m) = replay {
                let man = commands::cmd_replay(&m, &out, common.threads)?;
                println!("replayed {} ({} + {} tags), hash {}", out.display(), man.tags_ch1, man.tags_ch2, man.output_hash);
                return Ok(());
            }
            if let Some(d) = duration {
                cfg.io.duration_s = d;
            }
            if let Some(n) = ions {
                cfg.experiment.n_ions = n;
            }
            cfg.validate()?;
            let opts = SimulateOptions {
                seed: common.seed.unwrap_or(cfg.io.seed),
                no_ion,
                format: format.unwrap_or(cfg.io.format),
                threads: common.threads,
            };
            let man = commands::cmd_simulate(&cfg, &opts, &out)?;
            println!("wrote {} ({} + {} tags), hash {}", out.display(), man.tags_ch1, man.tags_ch2, man.output_hash);
        }
        Command::Correlate {
            common,
            stream,
            background,
            out,
            offline,
            c0,
            c_tau,
            c_tau_err,
            n_peaks,
            t_exp,
            reference_rates,
        } => {
            let mut cfg = common.load()?;
            if let Some(s) = common.seed {
                cfg.io.seed = s;
            }
            if reference_rates {
                cfg.analysis.background = photon_hbt::config::BackgroundMode::Rates;
                cfg.analysis.rates = Some(hbt_core::correlator::RateSet::reference());
            }
            if offline {
                let counts = OfflineCounts {
                    c0: c0.expect("required by clap"),
                    c_tau_mean: c_tau.expect("required by clap"),
                    c_tau_err,
                    n_peaks,
                    t_exp_s: t_exp.expect("required by clap"),
                };
                let g2 = commands::cmd_offline(&cfg, &counts)?;
                let text = toml::to_string(&g2).expect("report serializes");
                return emit(out.as_ref(), &text);
            }
            let stream = stream.ok_or_else(|| CliError::config("a stream path is required unless --offline"))?;
            let res = commands::cmd_correlate(&cfg, &stream, background.as_deref(), out.as_deref(), common.threads)?;
            let g = &res.report.g2;
            println!("C0          = {}", g.c0.value);
            println!("C_tau       = {:.2} ± {:.2} ({} peaks)", g.c_tau_mean.value, g.c_tau_mean.err, g.n_side_peaks);
            println!("C_B         = {:.2} ± {:.2}", g.c_b.value, g.c_b.err);
            println!("g2(0)       = {}", report::fmt_measured(&g.g2_corrected));
            println!("g2(0) raw   = {}", report::fmt_measured(&g.g2_raw));
            if out.is_none() {
                print!("{}", res.report.to_toml());
            }
        }
        Command::ScanN { common, n_max, duration, background_duration, side_peaks, out } => {
            let cfg = common.load()?;
            let opts = ScanOptions { n_max, duration_s: duration, background_s: background_duration, side_peaks };
            let res = commands::cmd_scan_n(&cfg, &opts, common.seed.unwrap_or(cfg.io.seed), common.threads)?;
            emit(out.as_ref(), &res.csv())?;
        }
        Command::Pulsechain { common: _, scan, budget, out } => {
            let points = match &scan {
                Some(p) => commands::load_power_scan(p)?,
                None => commands::synthetic_power_scan(),
            };
            let chain = commands::load_chain(budget.as_ref())?;
            let rep = commands::cmd_pulsechain(&points, &chain)?;
            let mut text = rep.to_toml();
            text.push_str("\n# extinction budget\n");
            for line in rep.budget.to_string().lines() {
                text.push_str("# ");
                text.push_str(line);
                text.push('\n');
            }
            emit(out.as_ref(), &text)?;
        }
        Command::Factorize { f_a, f_b, f_ab, model } => {
            let model = match model {
                ModelArg::SequentialRescue => ShelvingModel::SequentialRescue,
                ModelArg::Product => ShelvingModel::Product,
            };
            let f = commands::cmd_factorize(f_a, f_b, f_ab, model)?;
            println!("pump   = {:.12}", f.pump);
            println!("first  = {:.12}", f.first);
            println!("second = {:.12}", f.second);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
