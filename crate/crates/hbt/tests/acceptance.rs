//! Acceptance suite: one PASS/FAIL line per criterion; exits nonzero on any failure.

use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use hbt_core::calibration::{
    compose_fidelities, extinction_chain, factorize_fidelities, fit_power_vs_reprate, srd_pulse_shape, ChainConfig,
    Fidelities, ShelvingModel, SrdPulse,
};
use hbt_core::correlator::{
    cross_correlate, cross_correlate_sharded, expected_background, gate_stream, integrate_peak, AnalysisParams,
    HistogramSpec, RateSet,
};
use hbt_core::tagstream::{TimeTag, CH1, CH2};
use photon_hbt::commands::{self, Background, OfflineCounts, ScanOptions, SimulateOptions};
use photon_hbt::config::{BackgroundMode, RunConfig};
use photon_hbt::fsio;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

const PS: u64 = 1_000_000_000_000;

fn c1_offline() -> Outcome {
    let start = Instant::now();
    let mut cfg = RunConfig::default();
    cfg.analysis.background = BackgroundMode::Rates;
    cfg.analysis.rates = Some(RateSet::reference());
    let counts = OfflineCounts { c0: 158, c_tau_mean: 7700.0, c_tau_err: None, n_peaks: 32, t_exp_s: 10_800.0 };
    let r = commands::cmd_offline(&cfg, &counts).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let (g, raw, cb) = (r.g2_corrected, r.g2_raw, r.c_b.value);
    let ok = (4.6e-3..=5.7e-3).contains(&g.value)
        && (20.3e-3..=20.8e-3).contains(&raw.value)
        && (113.0..=126.0).contains(&cb)
        && (g.err - 1.67e-3).abs() <= 0.15 * 1.67e-3
        && elapsed < Duration::from_secs(1);
    check(
        ok,
        format!(
            "g2 = ({:.3} ± {:.3})e-3, raw = ({:.3} ± {:.3})e-3, C_B = {:.2} ± {:.2}, {:?}",
            g.value * 1e3,
            g.err * 1e3,
            raw.value * 1e3,
            raw.err * 1e3,
            cb,
            r.c_b.err,
            elapsed
        ),
    )
}

fn c2_background_formula() -> Outcome {
    let cfg = RunConfig::default();
    let experiment = cfg.experiment().map_err(|e| e.to_string())?;
    let tl = experiment.timeline().map_err(|e| e.to_string())?;
    let spec = AnalysisParams::default().histogram_spec(tl.rep_period_ps).map_err(|e| e.to_string())?;
    let runs: Vec<(u64, f64)> = (0..100u64)
        .into_par_iter()
        .map(|i| {
            let s = commands::simulate_stream(&cfg, 10_800 * PS, 1_000 + i, false, Some(1)).unwrap();
            let g = gate_stream(&s, &tl);
            let h = cross_correlate(&g.tags, &spec).unwrap();
            let c0 = integrate_peak(&h, 0, 10_000).unwrap();
            let rates = RateSet::from_streams(&g, &g).unwrap();
            let cb = expected_background(&rates, g.duration_s(), tl.rep_period_ps as f64 / 1e12).unwrap();
            (c0, cb.value)
        })
        .collect();
    let n = runs.len() as f64;
    let mean_c0 = runs.iter().map(|r| r.0 as f64).sum::<f64>() / n;
    let mean_cb = runs.iter().map(|r| r.1).sum::<f64>() / n;
    let sd = (runs.iter().map(|r| (r.0 as f64 - mean_c0).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let sem = sd / n.sqrt();
    check(
        (mean_c0 - mean_cb).abs() <= 3.0 * sem,
        format!("mean C0 = {mean_c0:.3} ± {sem:.3} over 100 x 3 h no-ion runs, mean C_B = {mean_cb:.3}"),
    )
}

fn c3_multi_ion() -> Outcome {
    let res = commands::cmd_scan_n(&RunConfig::default(), &ScanOptions::default(), 2024, None).map_err(|e| e.to_string())?;
    let rows: Vec<String> =
        res.rows.iter().map(|r| format!("n={} {:.4}±{:.4} (pull {:+.2})", r.n, r.g2, r.g2_err, r.pull())).collect();
    let ok = res.rows.len() == 6 && res.rows.iter().all(|r| r.pull().abs() <= 3.0) && res.p_value > 1e-3;
    check(ok, format!("{}; chi2 = {:.2}/{}, p = {:.3}", rows.join(", "), res.chi2, res.dof, res.p_value))
}

fn brute_force(tags: &[TimeTag], spec: &HistogramSpec) -> Vec<u64> {
    let ch2: Vec<i64> = tags.iter().filter(|t| t.channel == CH2).map(|t| t.t_ps as i64).collect();
    let mut counts = vec![0u64; spec.n_bins()];
    for a in tags.iter().filter(|t| t.channel == CH1) {
        let t1 = a.t_ps as i64;
        for &t2 in &ch2 {
            let tau = t2 - t1;
            if tau >= spec.tau_min_ps && tau < spec.tau_max_ps {
                counts[((tau - spec.tau_min_ps) as u64 / spec.bin_width_ps) as usize] += 1;
            }
        }
    }
    counts
}

fn c4_oracle() -> Outcome {
    let failures: Vec<u64> = (0..1000u64)
        .into_par_iter()
        .filter_map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(0xacce_0004 ^ i);
            let n = rng.random_range(0..=10_000usize);
            let span = rng.random_range(1..=2_000_000_000u64);
            let mut tags: Vec<TimeTag> =
                (0..n).map(|_| TimeTag::new(rng.random_range(1..=2), rng.random_range(0..span))).collect();
            tags.sort_unstable();
            let width = rng.random_range(1..=5_000u64);
            let bins = rng.random_range(1..=2_000i64);
            let lo = rng.random_range(-bins..=0) * width as i64;
            let spec = HistogramSpec::new(width, lo, lo + bins * width as i64).unwrap();
            let h = cross_correlate(&tags, &spec).unwrap();
            let same = h.counts == brute_force(&tags, &spec)
                && [1, 2, 4, 8].iter().all(|&k| cross_correlate_sharded(&tags, &spec, k).unwrap() == h);
            (!same).then_some(i)
        })
        .collect();
    check(failures.is_empty(), format!("1000 random streams, shards 1/2/4/8, mismatches: {failures:?}"))
}

fn c5_perfect_source() -> Outcome {
    let mut cfg = RunConfig::default();
    cfg.experiment.emitter.p_double = 0.0;
    cfg.experiment.emitter.p_leakage_excite = 0.0;
    let d = &mut cfg.experiment.detector;
    (d.dark_rate_1, d.dark_rate_2) = (0.0, 0.0);
    (d.scatter_per_cycle_1, d.scatter_per_cycle_2) = (Some(0.0), Some(0.0));
    let params = cfg.analysis.params();
    let mut worst = Vec::new();
    for (seed, secs) in [(1u64, 60u64), (2, 600), (3, 1_800), (4, 10_800)] {
        let s = commands::simulate_stream(&cfg, secs * PS, seed, true, None).map_err(|e| e.to_string())?;
        let out = commands::correlate_stream(&cfg, &params, &s, &Background::None, None).map_err(|e| e.to_string())?;
        worst.push((out.report.g2.c0.value, out.report.g2.g2_corrected.value));
    }
    check(worst.iter().all(|&(c0, g)| c0 == 0.0 && g == 0.0), format!("(C0, g2) for 1 min .. 3 h: {worst:?}"))
}

/// Fixed benchmark: 10⁷ cycles, one gated tag in 600 cycles on average, 1 ns bins over ±16 periods.
fn benchmark_stream() -> Vec<TimeTag> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut tags = Vec::new();
    let mut cycle = 0u64;
    while tags.len() < 8_000_000 {
        cycle += rng.random_range(1..60);
        let ch = rng.random_range(1..=2);
        tags.push(TimeTag::new(ch, cycle * 1_250_000 + 205_500 + rng.random_range(0..10_000)));
    }
    tags.sort_unstable();
    tags
}

fn c6_throughput() -> Outcome {
    let tags = benchmark_stream();
    let spec = AnalysisParams::default().histogram_spec(1_250_000).unwrap();
    let mut best = f64::MAX;
    for _ in 0..3 {
        let start = Instant::now();
        let h = cross_correlate(&tags, &spec).unwrap();
        std::hint::black_box(h);
        best = best.min(start.elapsed().as_secs_f64());
    }
    let rate = tags.len() as f64 / best;
    let log = Path::new(env!("CARGO_TARGET_TMPDIR")).join("throughput.csv");
    let line = format!("{},{rate:.0}\n", tags.len());
    let mut history = std::fs::read_to_string(&log).unwrap_or_else(|_| "tags,tags_per_s\n".into());
    let previous = history.lines().last().and_then(|l| l.split(',').nth(1)).and_then(|v| v.parse::<f64>().ok());
    history.push_str(&line);
    let _ = std::fs::write(&log, history);
    let trend = previous.map(|p| format!(", previous run {:.2e}", p)).unwrap_or_default();
    check(rate >= 5e6, format!("{:.2e} tags/s single-threaded on {} tags{trend}", rate, tags.len()))
}

fn c7_calibration() -> Outcome {
    let scan = commands::synthetic_power_scan();
    let fit = fit_power_vs_reprate(&scan).map_err(|e| e.to_string())?;
    let e_rel = (fit.pulse_energy_j.value / 19.1e-12 - 1.0).abs();
    let b_rel = (fit.cw_background_w.value / 1.92e-6 - 1.0).abs();
    let report = commands::cmd_pulsechain(&scan, &ChainConfig::default()).map_err(|e| e.to_string())?;
    let chain = extinction_chain(&ChainConfig::default()).map_err(|e| e.to_string())?;
    let doubled = chain.stages.iter().find(|s| s.label == "doubler_squares_contrast").map(|s| s.db_after).unwrap_or(f64::NAN);
    let fwhm = srd_pulse_shape(&SrdPulse::default()).map_err(|e| e.to_string())?.fwhm().unwrap_or(f64::NAN);
    let ok = e_rel < 1e-13
        && b_rel < 1e-13
        && (report.measured_extinction_db - 44.3).abs() < 0.05
        && doubled == 62.0
        && (chain.total_db - 55.0).abs() <= 1.0
        && (fwhm - 148.0).abs() <= 5.0;
    check(
        ok,
        format!(
            "E = 19.1 pJ (rel {e_rel:.1e}), P_cw = 1.92 uW (rel {b_rel:.1e}), measured {:.2} dB, doubled {doubled} dB, final {:.2} dB, FWHM {fwhm:.1} ps",
            report.measured_extinction_db, chain.total_db
        ),
    )
}

fn c8_factorize() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    for i in 0..10_000 {
        let model = if i % 2 == 0 { ShelvingModel::SequentialRescue } else { ShelvingModel::Product };
        let truth = Fidelities {
            pump: rng.random_range(0.5..=1.0),
            first: rng.random_range(0.5..=1.0),
            second: rng.random_range(0.5..=1.0),
        };
        let (fa, fb, fab) = compose_fidelities(model, &truth);
        let f = factorize_fidelities(fa, fb, fab, model).map_err(|e| format!("draw {i}: {e}"))?;
        let (ga, gb, gab) = compose_fidelities(model, &f);
        worst = worst.max((ga - fa).abs()).max((gb - fb).abs()).max((gab - fab).abs());
    }
    check(worst <= 1e-9, format!("max forward-model residual {worst:.2e} over 10^4 draws"))
}

fn c9_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = RunConfig::default();
    cfg.io.duration_s = 600.0;
    cfg.analysis.background_duration_s = 300.0;
    let mut digests = Vec::new();
    for (run, threads) in [(0, 1), (1, 4), (2, 1), (3, 2)] {
        let sub = dir.path().join(format!("run{run}"));
        std::fs::create_dir_all(&sub).map_err(|e| e.to_string())?;
        let s = sub.join("s.ttag");
        let opts = SimulateOptions { threads: Some(threads), ..SimulateOptions::from_config(&cfg) };
        commands::cmd_simulate(&cfg, &opts, &s).map_err(|e| e.to_string())?;
        commands::cmd_correlate(&cfg, &s, None, Some(&sub.join("out")), Some(threads)).map_err(|e| e.to_string())?;
        let files = ["s.ttag", "s.ttag.manifest.toml", "out/histogram.csv", "out/peaks.csv", "out/report.toml"];
        let d: Vec<String> = files.iter().map(|f| fsio::content_hash(&std::fs::read(sub.join(f)).unwrap())).collect();
        digests.push(d);
    }
    check(
        digests.windows(2).all(|w| w[0] == w[1]),
        format!("4 runs at 1/4/1/2 threads, stream hash {}", &digests[0][0][..16]),
    )
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("reported-number reproduction (offline)", c1_offline),
        ("accidental-background Monte Carlo", c2_background_formula),
        ("multi-ion law", c3_multi_ion),
        ("correlator oracle equivalence", c4_oracle),
        ("perfect-source invariant", c5_perfect_source),
        ("correlator throughput", c6_throughput),
        ("calibration", c7_calibration),
        ("fidelity factorization round trip", c8_factorize),
        ("determinism", c9_determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {} {name}: {detail} [{secs:.1} s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {} {name}: {detail} [{secs:.1} s]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
