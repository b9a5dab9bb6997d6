//! Stream generation over shards of the cycle index space.
//!
//! The cycle range `[0, n_cycles)` is cut into contiguous shards of a fixed
//! length. Every shard owns a random source keyed by `(seed, shard_index)`, so
//! a shard's tags depend only on its index and never on how many shards run
//! at once or on which thread. Shard outputs are merged in cycle order, then
//! the per-channel dead time is applied across the whole stream.
//!
//! Two samplers produce statistically identical streams:
//!
//! * [`Method::Direct`] walks every cycle, drawing emissions with
//!   [`sample_cycle_emissions_into`] and detections with [`detect_into`].
//! * [`Method::SkipAhead`] jumps straight to the cycles in which an emitter
//!   produces at least one detected photon. Detection probabilities are around
//!   10⁻³ per cycle, so this is orders of magnitude faster for long runs.
//!   Dark counts and gate scatter are drawn as Poisson processes in continuous
//!   time and in concatenated gate time respectively.

use alloc::vec::Vec;

use rand::RngCore;

use crate::error::Result;
use crate::experiment::ExperimentConfig;
use crate::rng::{exp_from_quantile, shard_rng, unit};
use crate::sequence::CycleTimeline;
use crate::simcore::{sample_cycle_emissions_into, sample_decay_delay};
use crate::tagstream::{apply_dead_time, detect_into, Jitter, StreamHeader, TagStream, TimeTag, CH1, CH2};
use crate::PS_PER_S;

/// Default shard length: 2²² cycles, about 5.2 s of experiment time at 1.25 µs.
pub const DEFAULT_SHARD_CYCLES: u64 = 1 << 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Method {
    Direct,
    #[default]
    SkipAhead,
}

/// What to simulate and how to cut it into shards.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSpec {
    pub duration_ps: u64,
    pub seed: u64,
    /// `false` gives a no-ion background run with the same pulse sequence.
    pub emissions: bool,
    pub method: Method,
    pub shard_cycles: u64,
}

impl RunSpec {
    pub fn new(duration_ps: u64, seed: u64) -> Self {
        Self { duration_ps, seed, emissions: true, method: Method::SkipAhead, shard_cycles: DEFAULT_SHARD_CYCLES }
    }

    pub fn background(self) -> Self {
        Self { emissions: false, ..self }
    }

    pub fn method(self, method: Method) -> Self {
        Self { method, ..self }
    }

    pub fn n_cycles(&self, rep_period_ps: u64) -> u64 {
        self.duration_ps.div_ceil(rep_period_ps)
    }

    pub fn n_shards(&self, rep_period_ps: u64) -> u64 {
        self.n_cycles(rep_period_ps).div_ceil(self.shard_cycles.max(1))
    }

    /// Cycle range `[start, end)` covered by shard `index`.
    pub fn shard_range(&self, rep_period_ps: u64, index: u64) -> (u64, u64) {
        let n = self.n_cycles(rep_period_ps);
        let len = self.shard_cycles.max(1);
        let start = (index * len).min(n);
        (start, (start + len).min(n))
    }
}

/// Per-ion outcome of one cycle, restricted to cycles with something detected.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Outcome {
    /// Detected pulse photons (single or double emission).
    detected: u8,
    /// A CW-leakage photon was detected.
    leakage: bool,
}

/// Distribution of per-ion cycle outcomes conditioned on at least one detection.
#[derive(Debug, Clone)]
pub struct OutcomeTable {
    p_any: f64,
    cumulative: Vec<(f64, Outcome)>,
    p_ch1: f64,
}

impl OutcomeTable {
    pub fn new(config: &ExperimentConfig) -> Self {
        let e = &config.emitter;
        let (d1, d2) = config.detector.channel_probabilities();
        let d = d1 + d2;
        let emitted = [1.0 - e.p_excite, e.p_excite - e.p_double, e.p_double];
        let mut atoms = Vec::new();
        for (a, &w_a) in emitted.iter().enumerate() {
            // leakage needs every pulse decay to return to the ground state
            let leak = libm::pow(1.0 - e.branch_to_d, a as f64) * e.p_leakage_excite * d;
            for k in 0..=a {
                let binom = if k == 1 && a == 2 { 2.0 } else { 1.0 };
                let w_k = w_a * binom * libm::pow(d, k as f64) * libm::pow(1.0 - d, (a - k) as f64);
                for leakage in [false, true] {
                    if k == 0 && !leakage {
                        continue;
                    }
                    let w = w_k * if leakage { leak } else { 1.0 - leak };
                    if w > 0.0 {
                        atoms.push((w, Outcome { detected: k as u8, leakage }));
                    }
                }
            }
        }
        let p_any: f64 = atoms.iter().map(|(w, _)| w).sum();
        let mut acc = 0.0;
        let cumulative = atoms
            .into_iter()
            .map(|(w, o)| {
                acc += w / p_any;
                (acc, o)
            })
            .collect();
        Self { p_any, cumulative, p_ch1: if d > 0.0 { d1 / d } else { 0.0 } }
    }

    /// Probability that an ion yields at least one detection in a cycle.
    pub fn p_any(&self) -> f64 {
        self.p_any
    }

    fn draw<R: RngCore + ?Sized>(&self, rng: &mut R) -> Outcome {
        let u = unit(rng);
        self.cumulative
            .iter()
            .find(|(c, _)| u < *c)
            .or(self.cumulative.last())
            .map(|(_, o)| *o)
            .expect("table is not empty when p_any > 0")
    }
}

/// Tags of one shard, sorted but not yet dead-time filtered.
pub fn simulate_shard(config: &ExperimentConfig, timeline: &CycleTimeline, run: &RunSpec, shard: u64) -> Vec<TimeTag> {
    let (start, end) = run.shard_range(timeline.rep_period_ps, shard);
    let mut rng = shard_rng(run.seed, shard);
    let mut tags = match run.method {
        Method::Direct => direct_cycles(config, timeline, run.emissions, start, end, &mut rng),
        Method::SkipAhead => skip_ahead_cycles(config, timeline, run.emissions, start, end, &mut rng),
    };
    tags.sort_unstable();
    tags
}

fn direct_cycles<R: RngCore + ?Sized>(
    config: &ExperimentConfig,
    timeline: &CycleTimeline,
    emissions: bool,
    start: u64,
    end: u64,
    rng: &mut R,
) -> Vec<TimeTag> {
    let jitter = Jitter::new(config.detector.jitter_sigma_ps);
    let mut events = Vec::new();
    let mut tags = Vec::new();
    for cycle in start..end {
        events.clear();
        if emissions {
            sample_cycle_emissions_into(&config.emitter, config.n_ions, timeline, rng, &mut events)
                .expect("validated n_ions");
        }
        detect_into(&events, cycle, &config.detector, timeline, &jitter, rng, &mut tags);
    }
    tags
}

fn skip_ahead_cycles<R: RngCore + ?Sized>(
    config: &ExperimentConfig,
    timeline: &CycleTimeline,
    emissions: bool,
    start: u64,
    end: u64,
    rng: &mut R,
) -> Vec<TimeTag> {
    let det = &config.detector;
    let rep = timeline.rep_period_ps;
    let jitter = Jitter::new(det.jitter_sigma_ps);
    let mut tags = Vec::new();

    if emissions {
        let table = OutcomeTable::new(config);
        let channel = |rng: &mut R| if unit(rng) < table.p_ch1 { CH1 } else { CH2 };
        for _ion in 0..config.n_ions {
            let mut cycle = start;
            loop {
                let skip = crate::rng::geometric_failures(rng, table.p_any);
                cycle = match cycle.checked_add(skip) {
                    Some(c) if c < end => c,
                    _ => break,
                };
                let outcome = table.draw(rng);
                let cycle_start = cycle * rep;
                for _ in 0..outcome.detected {
                    let t = cycle_start + timeline.pulse_peak_ps + sample_decay_delay(&config.emitter, rng);
                    let ch = channel(rng);
                    tags.push(TimeTag::new(ch, jitter.apply(t, rng)));
                }
                if outcome.leakage {
                    let ungated = timeline.ungated_len_ps();
                    let x = ((unit(rng) * ungated as f64) as u64).min(ungated - 1);
                    let t = cycle_start + timeline.ungated_offset(x);
                    let ch = channel(rng);
                    tags.push(TimeTag::new(ch, jitter.apply(t, rng)));
                }
                cycle += 1;
            }
        }
    }

    for ch in [CH1, CH2] {
        // dark counts: homogeneous Poisson process over absolute time
        let rate_per_ps = det.dark_rate(ch) / PS_PER_S;
        if rate_per_ps > 0.0 {
            let (t0, t1) = ((start * rep) as f64, (end * rep) as f64);
            let mut t = t0;
            loop {
                t += exp_from_quantile(1.0 / rate_per_ps, unit(rng));
                if t >= t1 {
                    break;
                }
                tags.push(TimeTag::new(ch, t as u64));
            }
        }
        // scatter: Poisson process over the concatenated gate windows
        let width = timeline.gate_width_ps;
        let mean = det.scatter_per_cycle(ch);
        if mean > 0.0 {
            let (g0, g1) = ((start * width) as f64, (end * width) as f64);
            let mut g = g0;
            loop {
                g += exp_from_quantile(width as f64 / mean, unit(rng));
                if g >= g1 {
                    break;
                }
                let gi = g as u64;
                let (cycle, offset) = (gi / width, gi % width);
                tags.push(TimeTag::new(ch, cycle * rep + timeline.gate_start_ps + offset));
            }
        }
    }
    tags
}

/// Merges shard outputs (in shard order) into a finished stream.
pub fn assemble_stream(
    config: &ExperimentConfig,
    timeline: &CycleTimeline,
    run: &RunSpec,
    shards: impl IntoIterator<Item = Vec<TimeTag>>,
) -> TagStream {
    let mut tags: Vec<TimeTag> = shards.into_iter().flatten().collect();
    // jitter can carry a tag across a shard boundary; the shards are sorted
    // runs so the adaptive stable sort is near linear here
    tags.sort();
    apply_dead_time(&mut tags, config.detector.dead_time_ps);
    tags.retain(|t| t.t_ps < run.duration_ps);
    TagStream {
        header: StreamHeader {
            duration_ps: run.duration_ps,
            rep_period_ps: timeline.rep_period_ps,
            gate: None,
            seed: Some(run.seed),
            metadata: alloc::format!(
                "n_ions={} emissions={} method={:?} shard_cycles={}",
                config.n_ions,
                run.emissions,
                run.method,
                run.shard_cycles
            ),
        },
        tags,
    }
}

/// Single-threaded stream simulation.
pub fn simulate_stream(config: &ExperimentConfig, run: &RunSpec) -> Result<TagStream> {
    let timeline = config.validate()?;
    let shards = (0..run.n_shards(timeline.rep_period_ps)).map(|s| simulate_shard(config, &timeline, run, s));
    Ok(assemble_stream(config, &timeline, run, shards))
}
