//! Detector model and two-channel time-tag streams.
//!
//! Emissions reach the HBT beamsplitter, go to channel 1 with probability
//! `split`, survive with that channel's efficiency, and pick up Gaussian
//! timing jitter. Dark counts arrive uniformly over the whole cycle, while
//! scattered excitation light only lands inside the gate window. A per-channel
//! dead time then drops any tag that follows an accepted tag too closely.

use alloc::string::String;
use alloc::vec::Vec;

use rand::RngCore;
use rand_distr::{Distribution, Normal, Poisson};

use crate::error::{Error, Result};
use crate::rng::unit;
use crate::sequence::{CycleTimeline, GateDescriptor};
use crate::simcore::{EmissionEvent, EmitterModel};
use crate::PS_PER_S;

pub const CH1: u8 = 1;
pub const CH2: u8 = 2;

/// One detection event. Ordering is by time, then channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimeTag {
    pub t_ps: u64,
    pub channel: u8,
}

impl TimeTag {
    pub const fn new(channel: u8, t_ps: u64) -> Self {
        Self { t_ps, channel }
    }
}

/// Index of the first tag that breaks `(t_ps, channel)` order, if any.
pub fn first_unsorted(tags: &[TimeTag]) -> Option<usize> {
    tags.windows(2).position(|w| w[1] < w[0]).map(|i| i + 1)
}

pub fn check_sorted(tags: &[TimeTag]) -> Result<()> {
    match first_unsorted(tags) {
        Some(index) => Err(Error::Unsorted { index }),
        None => Ok(()),
    }
}

/// Drops every tag that falls within `dead_time_ps` after an accepted tag on
/// the same channel. Input must be sorted.
pub fn apply_dead_time(tags: &mut Vec<TimeTag>, dead_time_ps: u64) {
    if dead_time_ps == 0 {
        return;
    }
    let mut last: [Option<u64>; 256] = [None; 256];
    tags.retain(|tag| {
        let slot = &mut last[tag.channel as usize];
        match *slot {
            Some(prev) if tag.t_ps - prev < dead_time_ps => false,
            _ => {
                *slot = Some(tag.t_ps);
                true
            }
        }
    });
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct DetectorModel {
    /// Total detection efficiency of channel 1 (collection, optics, PMT).
    pub eta_1: f64,
    pub eta_2: f64,
    /// Beamsplitter probability toward channel 1.
    pub split: f64,
    /// Dark counts per second.
    pub dark_rate_1: f64,
    pub dark_rate_2: f64,
    /// Mean scattered-light counts per cycle, all inside the gate.
    pub scatter_per_cycle_1: f64,
    pub scatter_per_cycle_2: f64,
    pub dead_time_ps: u64,
    pub jitter_sigma_ps: u64,
}

/// Documented assumptions for quantities the experiment does not report.
pub const DEFAULT_DEAD_TIME_PS: u64 = 20_000;
pub const DEFAULT_JITTER_PS: u64 = 100;
pub const DEFAULT_DARK_RATE: f64 = 30.0;

impl DetectorModel {
    /// A lossless, noiseless detector pair with a 50/50 splitter.
    pub fn ideal() -> Self {
        Self {
            eta_1: 1.0,
            eta_2: 1.0,
            split: 0.5,
            dark_rate_1: 0.0,
            dark_rate_2: 0.0,
            scatter_per_cycle_1: 0.0,
            scatter_per_cycle_2: 0.0,
            dead_time_ps: 0,
            jitter_sigma_ps: 0,
        }
    }

    /// Same detector with all background sources switched off.
    pub fn without_background(&self) -> Self {
        Self { dark_rate_1: 0.0, dark_rate_2: 0.0, scatter_per_cycle_1: 0.0, scatter_per_cycle_2: 0.0, ..*self }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("eta_1", self.eta_1), ("eta_2", self.eta_2), ("split", self.split)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::model(alloc::format!("{name} = {p} is not a probability")));
            }
        }
        if self.eta_1 * self.split + self.eta_2 * (1.0 - self.split) > 1.0 + 1e-12 {
            return Err(Error::model("combined detection probability exceeds 1"));
        }
        for (name, r) in [
            ("dark_rate_1", self.dark_rate_1),
            ("dark_rate_2", self.dark_rate_2),
            ("scatter_per_cycle_1", self.scatter_per_cycle_1),
            ("scatter_per_cycle_2", self.scatter_per_cycle_2),
        ] {
            if !(r >= 0.0 && r.is_finite()) {
                return Err(Error::model(alloc::format!("{name} = {r} must be a finite nonnegative rate")));
            }
        }
        Ok(())
    }

    /// Per-photon probability of a detection on channel 1 and on channel 2.
    pub fn channel_probabilities(&self) -> (f64, f64) {
        (self.split * self.eta_1, (1.0 - self.split) * self.eta_2)
    }

    pub fn dark_rate(&self, channel: u8) -> f64 {
        if channel == CH1 {
            self.dark_rate_1
        } else {
            self.dark_rate_2
        }
    }

    pub fn scatter_per_cycle(&self, channel: u8) -> f64 {
        if channel == CH1 {
            self.scatter_per_cycle_1
        } else {
            self.scatter_per_cycle_2
        }
    }
}

/// Gated singles rates a detector model should reproduce, in counts per second.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct RateTargets {
    pub r_t1: f64,
    pub r_b1: f64,
    pub r_t2: f64,
    pub r_b2: f64,
}

impl Default for RateTargets {
    /// Single-ion total and residual-background gated rates of the reference run.
    fn default() -> Self {
        Self { r_t1: 615.4, r_b1: 4.21, r_t2: 913.1, r_b2: 8.16 }
    }
}

/// Chooses efficiencies and scatter levels so a single emitter reproduces `targets`.
///
/// Mean gated photons per cycle are `(p_excite + p_double)·q`, with `q` the
/// fraction of exponential decays landing inside the gate. The residual
/// background is split into the dark-count share that falls into the gate and
/// gate-confined scatter. Split, dark rates, dead time, and jitter come from
/// `base`.
pub fn calibrate_detector(
    targets: &RateTargets,
    emitter: &EmitterModel,
    timeline: &CycleTimeline,
    base: &DetectorModel,
) -> Result<DetectorModel> {
    let t_rep_s = timeline.rep_period_ps as f64 / PS_PER_S;
    let gated_photons = (emitter.p_excite + emitter.p_double) * emitter.gate_capture(timeline);
    if gated_photons <= 0.0 {
        return Err(Error::domain("emitter produces no gated photons"));
    }
    if !(base.split > 0.0 && base.split < 1.0) {
        return Err(Error::domain("calibration needs 0 < split < 1"));
    }
    let duty = timeline.gate_duty();
    let solve = |r_t: f64, r_b: f64, share: f64, dark: f64| -> Result<(f64, f64)> {
        if !(r_t >= r_b && r_b >= 0.0) {
            return Err(Error::domain("need 0 <= background rate <= total rate"));
        }
        let eta = (r_t - r_b) * t_rep_s / (gated_photons * share);
        let scatter = (r_b - dark * duty) * t_rep_s;
        if scatter < 0.0 {
            return Err(Error::domain("dark counts alone exceed the background target"));
        }
        Ok((eta, scatter))
    };
    let (eta_1, scatter_1) = solve(targets.r_t1, targets.r_b1, base.split, base.dark_rate_1)?;
    let (eta_2, scatter_2) = solve(targets.r_t2, targets.r_b2, 1.0 - base.split, base.dark_rate_2)?;
    let model = DetectorModel {
        eta_1,
        eta_2,
        scatter_per_cycle_1: scatter_1,
        scatter_per_cycle_2: scatter_2,
        ..*base
    };
    model.validate()?;
    Ok(model)
}

/// Gated singles rates (s⁻¹) predicted for `n_ions` emitters, ignoring dead time.
pub fn predicted_gated_rates(
    emitter: &EmitterModel,
    detector: &DetectorModel,
    timeline: &CycleTimeline,
    n_ions: u32,
    emissions: bool,
) -> [(f64, f64); 2] {
    let t_rep_s = timeline.rep_period_ps as f64 / PS_PER_S;
    let photons = if emissions {
        n_ions as f64 * (emitter.p_excite + emitter.p_double) * emitter.gate_capture(timeline)
    } else {
        0.0
    };
    let (d1, d2) = detector.channel_probabilities();
    let duty = timeline.gate_duty();
    let bg = |ch: u8| detector.dark_rate(ch) * duty + detector.scatter_per_cycle(ch) / t_rep_s;
    [(photons * d1 / t_rep_s + bg(CH1), bg(CH1)), (photons * d2 / t_rep_s + bg(CH2), bg(CH2))]
}

/// Symmetric Gaussian timing jitter, rounded to whole picoseconds.
#[derive(Debug, Clone, Copy)]
pub struct Jitter(Option<Normal<f64>>);

impl Jitter {
    pub fn new(sigma_ps: u64) -> Self {
        Self((sigma_ps > 0).then(|| Normal::new(0.0, sigma_ps as f64).expect("finite sigma")))
    }

    #[inline]
    pub fn apply<R: RngCore + ?Sized>(&self, t_ps: u64, rng: &mut R) -> u64 {
        match &self.0 {
            None => t_ps,
            Some(n) => {
                let dt = libm::round(n.sample(rng)) as i64;
                t_ps.saturating_add_signed(dt)
            }
        }
    }
}

pub(crate) fn poisson<R: RngCore + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).map(|p| p.sample(rng) as u64).unwrap_or(0)
}

/// Turns one cycle of emissions into detector tags.
///
/// Emission times are relative to the start of cycle `cycle_index`. Returned
/// tags are sorted and dead-time filtered within the cycle.
pub fn detect<R: RngCore + ?Sized>(
    events: &[EmissionEvent],
    cycle_index: u64,
    model: &DetectorModel,
    timeline: &CycleTimeline,
    rng: &mut R,
) -> Vec<TimeTag> {
    let mut tags = Vec::new();
    detect_into(events, cycle_index, model, timeline, &Jitter::new(model.jitter_sigma_ps), rng, &mut tags);
    tags.sort_unstable();
    apply_dead_time(&mut tags, model.dead_time_ps);
    tags
}

/// Appends the unsorted, unfiltered tags of one cycle to `out`.
pub fn detect_into<R: RngCore + ?Sized>(
    events: &[EmissionEvent],
    cycle_index: u64,
    model: &DetectorModel,
    timeline: &CycleTimeline,
    jitter: &Jitter,
    rng: &mut R,
    out: &mut Vec<TimeTag>,
) {
    let cycle_start = cycle_index * timeline.rep_period_ps;
    for ev in events {
        let (channel, eta) = if unit(rng) < model.split { (CH1, model.eta_1) } else { (CH2, model.eta_2) };
        if unit(rng) < eta {
            let t = jitter.apply(cycle_start + ev.t_emit_ps, rng);
            out.push(TimeTag::new(channel, t));
        }
    }
    let t_rep_s = timeline.rep_period_ps as f64 / PS_PER_S;
    for channel in [CH1, CH2] {
        for _ in 0..poisson(model.dark_rate(channel) * t_rep_s, rng) {
            let offset = (unit(rng) * timeline.rep_period_ps as f64) as u64;
            out.push(TimeTag::new(channel, cycle_start + offset.min(timeline.rep_period_ps - 1)));
        }
        for _ in 0..poisson(model.scatter_per_cycle(channel), rng) {
            let offset = (unit(rng) * timeline.gate_width_ps as f64) as u64;
            out.push(TimeTag::new(channel, cycle_start + timeline.gate_start_ps + offset.min(timeline.gate_width_ps - 1)));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StreamHeader {
    pub duration_ps: u64,
    pub rep_period_ps: u64,
    /// Set once the stream has been software-gated.
    pub gate: Option<GateDescriptor>,
    pub seed: Option<u64>,
    /// Free-form creation metadata.
    pub metadata: String,
}

/// A time-sorted two-channel tag sequence with its header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagStream {
    pub header: StreamHeader,
    pub tags: Vec<TimeTag>,
}

impl TagStream {
    /// Builds a stream, checking sort order, channel range, and duration.
    pub fn new(header: StreamHeader, tags: Vec<TimeTag>) -> Result<Self> {
        let stream = Self { header, tags };
        stream.validate()?;
        Ok(stream)
    }

    pub fn empty(duration_ps: u64, rep_period_ps: u64) -> Self {
        Self { header: StreamHeader { duration_ps, rep_period_ps, ..Default::default() }, tags: Vec::new() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.header.rep_period_ps == 0 {
            return Err(Error::model("rep_period_ps must be positive"));
        }
        check_sorted(&self.tags)?;
        if let Some(i) = self.tags.iter().position(|t| t.channel != CH1 && t.channel != CH2) {
            return Err(Error::model(alloc::format!("tag {i} has channel {}", self.tags[i].channel)));
        }
        if let Some(last) = self.tags.last() {
            if last.t_ps >= self.header.duration_ps {
                return Err(Error::model(alloc::format!(
                    "tag at {} ps is not before the {} ps duration",
                    last.t_ps,
                    self.header.duration_ps
                )));
            }
        }
        Ok(())
    }

    pub fn count(&self, channel: u8) -> u64 {
        self.tags.iter().filter(|t| t.channel == channel).count() as u64
    }

    pub fn duration_s(&self) -> f64 {
        self.header.duration_ps as f64 / PS_PER_S
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::shard_rng;
    use crate::sequence::{build_cycle, TimingConfig};
    use crate::simcore::EmissionKind;

    fn timeline() -> CycleTimeline {
        build_cycle(&TimingConfig::default()).unwrap()
    }

    fn photon(t: u64) -> EmissionEvent {
        EmissionEvent { emitter_id: 0, t_emit_ps: t, kind: EmissionKind::PulsePhoton, shelved: false }
    }

    #[test]
    fn deterministic_routing() {
        let model = DetectorModel { split: 1.0, ..DetectorModel::ideal() };
        let mut rng = shard_rng(1, 0);
        let tags = detect(&[photon(210_000)], 3, &model, &timeline(), &mut rng);
        assert_eq!(tags, [TimeTag::new(CH1, 3 * 1_250_000 + 210_000)]);
    }

    #[test]
    fn symmetric_split() {
        let model = DetectorModel::ideal();
        let tl = timeline();
        let mut rng = shard_rng(2, 0);
        let n = 1_000_000u64;
        let mut ch1 = 0u64;
        let mut out = Vec::new();
        let jitter = Jitter::new(0);
        let ev = [photon(210_000)];
        for c in 0..n {
            out.clear();
            detect_into(&ev, c, &model, &tl, &jitter, &mut rng, &mut out);
            ch1 += out.iter().filter(|t| t.channel == CH1).count() as u64;
        }
        let sd = (0.25 * n as f64).sqrt();
        assert!((ch1 as f64 - 0.5 * n as f64).abs() < 3.0 * sd);
    }

    #[test]
    fn dead_time_gaps_respected() {
        let mut rng = shard_rng(3, 0);
        let mut tags: Vec<TimeTag> = (0..50_000)
            .map(|_| TimeTag::new(1 + (rand::Rng::random::<bool>(&mut rng)) as u8, rand::Rng::random_range(&mut rng, 0..10_000_000)))
            .collect();
        tags.sort_unstable();
        apply_dead_time(&mut tags, 20_000);
        for ch in [CH1, CH2] {
            let ts: Vec<u64> = tags.iter().filter(|t| t.channel == ch).map(|t| t.t_ps).collect();
            assert!(ts.windows(2).all(|w| w[1] - w[0] >= 20_000));
        }
    }

    #[test]
    fn dead_time_keeps_first_of_burst() {
        let mut tags = vec![
            TimeTag::new(1, 0),
            TimeTag::new(2, 5),
            TimeTag::new(1, 10),
            TimeTag::new(1, 30),
            TimeTag::new(2, 29),
        ];
        tags.sort_unstable();
        apply_dead_time(&mut tags, 20);
        assert_eq!(tags, [TimeTag::new(1, 0), TimeTag::new(2, 5), TimeTag::new(2, 29), TimeTag::new(1, 30)]);
    }

    #[test]
    fn background_only_counts_are_poisson() {
        let tl = timeline();
        let model = DetectorModel {
            dark_rate_1: 2_000.0,
            dark_rate_2: 500.0,
            scatter_per_cycle_1: 1e-3,
            scatter_per_cycle_2: 3e-3,
            ..DetectorModel::ideal()
        };
        let cycles = 20_000u64;
        let t_rep_s = 1.25e-6;
        let jitter = Jitter::new(0);
        for (ch, expect) in [
            (CH1, 2_000.0 * t_rep_s * cycles as f64 + 1e-3 * cycles as f64),
            (CH2, 500.0 * t_rep_s * cycles as f64 + 3e-3 * cycles as f64),
        ] {
            let mut counts = Vec::new();
            for rep in 0..100 {
                let mut rng = shard_rng(100 + rep, ch as u64);
                let mut out = Vec::new();
                for c in 0..cycles {
                    detect_into(&[], c, &model, &tl, &jitter, &mut rng, &mut out);
                }
                counts.push(out.iter().filter(|t| t.channel == ch).count() as f64);
            }
            let n = counts.len() as f64;
            let mean = counts.iter().sum::<f64>() / n;
            let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0);
            assert!((mean - expect).abs() < 3.0 * (expect / n).sqrt(), "mean {mean} vs {expect}");
            // sampling sd of a variance estimate is about var·sqrt(2/(n-1))
            assert!((var - expect).abs() < 3.0 * expect * (2.0 / (n - 1.0)).sqrt(), "var {var} vs {expect}");
        }
    }

    #[test]
    fn scatter_stays_in_gate() {
        let tl = timeline();
        let model = DetectorModel { scatter_per_cycle_1: 0.5, scatter_per_cycle_2: 0.5, ..DetectorModel::ideal() };
        let mut rng = shard_rng(4, 0);
        for c in 0..10_000 {
            for tag in detect(&[], c, &model, &tl, &mut rng) {
                assert!(crate::sequence::in_gate(tag.t_ps, &tl));
            }
        }
    }

    #[test]
    fn calibration_reproduces_targets() {
        let tl = timeline();
        let emitter = EmitterModel::default();
        let base = DetectorModel { dead_time_ps: DEFAULT_DEAD_TIME_PS, jitter_sigma_ps: DEFAULT_JITTER_PS, dark_rate_1: DEFAULT_DARK_RATE, dark_rate_2: DEFAULT_DARK_RATE, ..DetectorModel::ideal() };
        let targets = RateTargets::default();
        let det = calibrate_detector(&targets, &emitter, &tl, &base).unwrap();
        let [(t1, b1), (t2, b2)] = predicted_gated_rates(&emitter, &det, &tl, 1, true);
        for (got, want) in [(t1, 615.4), (b1, 4.21), (t2, 913.1), (b2, 8.16)] {
            assert!((got - want).abs() < 1e-9 * want, "{got} vs {want}");
        }
        assert!(det.eta_1 > 0.0 && det.eta_1 < 0.05);
    }

    #[test]
    fn calibration_rejects_inconsistent_targets() {
        let tl = timeline();
        let base = DetectorModel { dark_rate_1: 1e4, ..DetectorModel::ideal() };
        assert!(calibrate_detector(&RateTargets::default(), &EmitterModel::default(), &tl, &base).is_err());
        let bad = RateTargets { r_t1: 1.0, r_b1: 2.0, ..Default::default() };
        assert!(calibrate_detector(&bad, &EmitterModel::default(), &tl, &DetectorModel::ideal()).is_err());
    }

    #[test]
    fn stream_validation() {
        let header = StreamHeader { duration_ps: 100, rep_period_ps: 10, ..Default::default() };
        assert!(TagStream::new(header.clone(), vec![TimeTag::new(1, 5), TimeTag::new(2, 5)]).is_ok());
        assert_eq!(
            TagStream::new(header.clone(), vec![TimeTag::new(2, 5), TimeTag::new(1, 5)]),
            Err(Error::Unsorted { index: 1 })
        );
        assert!(TagStream::new(header.clone(), vec![TimeTag::new(1, 100)]).is_err());
        assert!(TagStream::new(header, vec![TimeTag::new(3, 1)]).is_err());
    }

    #[test]
    fn jitter_saturates_at_zero() {
        let j = Jitter::new(1_000);
        let mut rng = shard_rng(5, 0);
        for _ in 0..1000 {
            let _ = j.apply(0, &mut rng);
        }
        assert_eq!(Jitter::new(0).apply(17, &mut rng), 17);
    }
}
