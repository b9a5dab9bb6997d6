//! Cross-correlation of two-channel tag streams and pulsed `g²(0)` estimation.
//!
//! Delays are `τ = t₂ − t₁` with channel 1 as start. Coincidences are all
//! pairs inside the τ range, not first-stop. The τ = 0 peak is normalized by
//! the mean of side peaks at multiples of the repetition period, after
//! removing the accidental coincidences expected from the measured singles
//! rates:
//!
//! ```text
//! g²(0) = (C₀ − C_B) / (C_τ − C_B)
//! C_B   = T_exp·T_rep·(R_T1·R_B2 + R_B1·R_T2 − R_B1·R_B2)
//! ```

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::measurement::{propagate, Measured};
use crate::sequence::{in_gate, CycleTimeline};
use crate::tagstream::{check_sorted, TagStream, TimeTag, CH1, CH2};
use crate::PS_PER_S;

/// Binning of the delay axis: `[tau_min, tau_max)` in `bin_width` steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HistogramSpec {
    pub bin_width_ps: u64,
    pub tau_min_ps: i64,
    pub tau_max_ps: i64,
}

impl HistogramSpec {
    pub fn new(bin_width_ps: u64, tau_min_ps: i64, tau_max_ps: i64) -> Result<Self> {
        let spec = Self { bin_width_ps, tau_min_ps, tau_max_ps };
        spec.validate()?;
        Ok(spec)
    }

    /// Symmetric range `[-reach, reach)` with `reach` rounded up to a whole bin.
    pub fn symmetric(bin_width_ps: u64, reach_ps: u64) -> Result<Self> {
        if bin_width_ps == 0 {
            return Err(Error::domain("bin width must be positive"));
        }
        let reach = reach_ps.div_ceil(bin_width_ps) * bin_width_ps;
        Self::new(bin_width_ps, -(reach as i64), reach as i64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bin_width_ps == 0 {
            return Err(Error::domain("bin width must be positive"));
        }
        if self.tau_max_ps <= self.tau_min_ps {
            return Err(Error::domain("tau_max must exceed tau_min"));
        }
        let span = self.tau_max_ps.checked_sub(self.tau_min_ps).ok_or_else(|| Error::domain("tau range overflows"))?;
        if span as u64 % self.bin_width_ps != 0 {
            return Err(Error::domain("tau range is not a whole number of bins"));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        ((self.tau_max_ps - self.tau_min_ps) as u64 / self.bin_width_ps) as usize
    }

    /// Largest |τ| a pair in range can have.
    fn reach(&self) -> i64 {
        self.tau_max_ps.max(-self.tau_min_ps).max(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CorrelationHistogram {
    pub bin_width_ps: u64,
    pub tau_min_ps: i64,
    pub tau_max_ps: i64,
    pub counts: Vec<u64>,
}

impl CorrelationHistogram {
    pub fn zeros(spec: &HistogramSpec) -> Self {
        Self {
            bin_width_ps: spec.bin_width_ps,
            tau_min_ps: spec.tau_min_ps,
            tau_max_ps: spec.tau_max_ps,
            counts: vec![0; spec.n_bins()],
        }
    }

    pub fn spec(&self) -> HistogramSpec {
        HistogramSpec { bin_width_ps: self.bin_width_ps, tau_min_ps: self.tau_min_ps, tau_max_ps: self.tau_max_ps }
    }

    /// Lower edge of bin `b`.
    pub fn bin_start(&self, b: usize) -> i64 {
        self.tau_min_ps + (b as u64 * self.bin_width_ps) as i64
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds another histogram with the same binning.
    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if self.spec() != other.spec() {
            return Err(Error::domain("cannot merge histograms with different binning"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// Checks the length invariant, e.g. after parsing from a file.
    pub fn validate(&self) -> Result<()> {
        let spec = self.spec();
        spec.validate()?;
        if self.counts.len() != spec.n_bins() {
            return Err(Error::domain("counts length does not match the tau range"));
        }
        Ok(())
    }
}

/// Keeps exactly the tags inside the software gate and records the gate in the header.
pub fn gate_stream(stream: &TagStream, timeline: &CycleTimeline) -> TagStream {
    let tags = stream.tags.iter().copied().filter(|t| in_gate(t.t_ps, timeline)).collect();
    let mut header = stream.header.clone();
    header.gate = Some(timeline.gate());
    TagStream { header, tags }
}

/// Single-pass all-pairs cross-correlation of a sorted stream.
///
/// Each pair is counted when its later tag arrives: a channel-2 tag pairs with
/// buffered channel-1 tags (τ ≥ 0) and a channel-1 tag with buffered channel-2
/// tags (τ < 0). Buffers only hold tags within reach of the τ range.
pub fn cross_correlate(tags: &[TimeTag], spec: &HistogramSpec) -> Result<CorrelationHistogram> {
    spec.validate()?;
    check_sorted(tags)?;
    let mut hist = CorrelationHistogram::zeros(spec);
    accumulate(tags, spec, 0, 0, tags.len(), &mut hist.counts);
    Ok(hist)
}

/// One shard of a correlation pass: tags `[warmup, start)` only fill the
/// buffers, pairs are counted for arrivals in `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShardBounds {
    pub warmup: usize,
    pub start: usize,
    pub end: usize,
}

/// Splits a sorted tag slice into `n_shards` contiguous shards with enough
/// warm-up overlap that the summed shard histograms equal the full one.
pub fn shard_bounds(tags: &[TimeTag], spec: &HistogramSpec, n_shards: usize) -> Vec<ShardBounds> {
    let n_shards = n_shards.max(1);
    let reach = spec.reach();
    (0..n_shards)
        .map(|k| {
            let start = k * tags.len() / n_shards;
            let end = (k + 1) * tags.len() / n_shards;
            let warmup = match tags.get(start) {
                Some(first) => {
                    let from = (first.t_ps as i64).saturating_sub(reach);
                    tags[..start].partition_point(|t| (t.t_ps as i64) < from)
                }
                None => start,
            };
            ShardBounds { warmup, start, end }
        })
        .collect()
}

/// Histogram of one shard; see [`shard_bounds`].
pub fn correlate_shard(tags: &[TimeTag], spec: &HistogramSpec, bounds: ShardBounds) -> CorrelationHistogram {
    let mut hist = CorrelationHistogram::zeros(spec);
    accumulate(tags, spec, bounds.warmup, bounds.start, bounds.end, &mut hist.counts);
    hist
}

/// Serial sharded correlation, equal to [`cross_correlate`] for any shard count.
pub fn cross_correlate_sharded(tags: &[TimeTag], spec: &HistogramSpec, n_shards: usize) -> Result<CorrelationHistogram> {
    spec.validate()?;
    check_sorted(tags)?;
    let mut total = CorrelationHistogram::zeros(spec);
    for b in shard_bounds(tags, spec, n_shards) {
        total.merge(&correlate_shard(tags, spec, b))?;
    }
    Ok(total)
}

fn accumulate(tags: &[TimeTag], spec: &HistogramSpec, warmup: usize, start: usize, end: usize, counts: &mut [u64]) {
    let (tau_min, tau_max) = (spec.tau_min_ps, spec.tau_max_ps);
    let width = spec.bin_width_ps as i64;
    // τ ≥ 0 pairs need channel-1 history, τ < 0 pairs channel-2 history
    let pos_lo = tau_min.max(0);
    let keep_ch1 = tau_max > 0;
    let neg_hi = tau_max.min(0);
    let keep_ch2 = tau_min < 0;
    let mut ch1: VecDeque<i64> = VecDeque::new();
    let mut ch2: VecDeque<i64> = VecDeque::new();

    for (i, tag) in tags.iter().enumerate().take(end).skip(warmup) {
        let t = tag.t_ps as i64;
        while ch1.front().is_some_and(|&t1| t - t1 >= tau_max) {
            ch1.pop_front();
        }
        while ch2.front().is_some_and(|&t2| t - t2 > -tau_min) {
            ch2.pop_front();
        }
        let counting = i >= start;
        match tag.channel {
            CH1 => {
                if counting {
                    for &t2 in &ch2 {
                        let tau = t2 - t;
                        if tau < neg_hi {
                            counts[((tau - tau_min) / width) as usize] += 1;
                        }
                    }
                }
                if keep_ch1 {
                    ch1.push_back(t);
                }
            }
            CH2 => {
                if counting {
                    for &t1 in &ch1 {
                        let tau = t - t1;
                        if tau >= pos_lo {
                            counts[((tau - tau_min) / width) as usize] += 1;
                        }
                    }
                }
                if keep_ch2 {
                    ch2.push_back(t);
                }
            }
            _ => {}
        }
    }
}

/// Sum of the bins that lie entirely inside `[center − half_width, center + half_width]`.
pub fn integrate_peak(hist: &CorrelationHistogram, center_ps: i64, half_width_ps: u64) -> Result<u64> {
    let lo = center_ps - half_width_ps as i64;
    let hi = center_ps + half_width_ps as i64;
    if lo < hist.tau_min_ps || hi > hist.tau_max_ps {
        return Err(Error::domain(alloc::format!(
            "window [{lo}, {hi}] ps is outside the histogram range [{}, {})",
            hist.tau_min_ps,
            hist.tau_max_ps
        )));
    }
    let w = hist.bin_width_ps as i64;
    Ok((0..hist.counts.len())
        .filter(|&b| {
            let s = hist.bin_start(b);
            s >= lo && s + w <= hi
        })
        .map(|b| hist.counts[b])
        .sum())
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SidePeaks {
    pub mean: f64,
    /// Standard error of the mean over the peaks.
    pub sem: f64,
    /// `(k, counts)` for the peak centered at `k·rep_period`.
    pub peaks: Vec<(i64, u64)>,
}

impl SidePeaks {
    pub fn c_tau(&self) -> Measured {
        Measured::new(self.mean, self.sem)
    }

    /// Sample variance over mean, ≈ 1 for Poisson peaks.
    pub fn dispersion(&self) -> f64 {
        let n = self.peaks.len() as f64;
        let var = self.peaks.iter().map(|&(_, c)| sq(c as f64 - self.mean)).sum::<f64>() / (n - 1.0);
        var / self.mean
    }
}

/// Integrates the side peaks at `k·rep_period` for `k = ±1 … ±n_peaks/2`.
pub fn side_peak_stats(
    hist: &CorrelationHistogram,
    rep_period_ps: u64,
    n_peaks: usize,
    half_width_ps: u64,
) -> Result<SidePeaks> {
    if n_peaks < 2 || n_peaks % 2 != 0 {
        return Err(Error::domain("side peaks are taken in symmetric pairs: n_peaks must be even and at least 2"));
    }
    if 2 * half_width_ps > rep_period_ps {
        return Err(Error::domain("peak windows overlap: 2·half_width exceeds the repetition period"));
    }
    let half = (n_peaks / 2) as i64;
    let mut peaks = Vec::with_capacity(n_peaks);
    for k in (-half..=half).filter(|&k| k != 0) {
        peaks.push((k, integrate_peak(hist, k * rep_period_ps as i64, half_width_ps)?));
    }
    let n = peaks.len() as f64;
    let mean = peaks.iter().map(|&(_, c)| c as f64).sum::<f64>() / n;
    let var = peaks.iter().map(|&(_, c)| sq(c as f64 - mean)).sum::<f64>() / (n - 1.0);
    Ok(SidePeaks { mean, sem: libm::sqrt(var / n), peaks })
}

/// Total and residual-background gated singles rates, s⁻¹.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RateSet {
    pub r_t1: Measured,
    pub r_b1: Measured,
    pub r_t2: Measured,
    pub r_b2: Measured,
}

impl RateSet {
    /// Reference single-ion rates.
    pub fn reference() -> Self {
        Self {
            r_t1: Measured::new(615.4, 0.2),
            r_b1: Measured::new(4.21, 0.05),
            r_t2: Measured::new(913.1, 0.3),
            r_b2: Measured::new(8.16, 0.07),
        }
    }

    /// Rates from a gated signal stream and a gated no-ion stream.
    pub fn from_streams(signal: &TagStream, background: &TagStream) -> Result<Self> {
        let [r_t1, r_t2] = singles_rates(signal)?;
        let [r_b1, r_b2] = singles_rates(background)?;
        Ok(Self { r_t1, r_b1, r_t2, r_b2 })
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.r_t1, self.r_b1, self.r_t2, self.r_b2];
        if all.iter().any(|m| !(m.value >= 0.0 && m.err >= 0.0)) {
            return Err(Error::domain("rates and their errors must be nonnegative"));
        }
        Ok(())
    }
}

/// Per-channel singles rates `n/T ± √n/T` of a stream.
pub fn singles_rates(stream: &TagStream) -> Result<[Measured; 2]> {
    let t = stream.duration_s();
    if !(t > 0.0) {
        return Err(Error::domain("stream duration must be positive to form rates"));
    }
    let rate = |ch| {
        let m = Measured::poisson(stream.count(ch));
        Measured::new(m.value / t, m.err / t)
    };
    Ok([rate(CH1), rate(CH2)])
}

/// Expected accidental coincidences in one peak window.
pub fn expected_background(rates: &RateSet, t_exp_s: f64, rep_period_s: f64) -> Result<Measured> {
    if !(t_exp_s > 0.0 && rep_period_s > 0.0) {
        return Err(Error::domain("experiment time and repetition period must be positive"));
    }
    rates.validate()?;
    let k = t_exp_s * rep_period_s;
    let (t1, b1, t2, b2) = (rates.r_t1.value, rates.r_b1.value, rates.r_t2.value, rates.r_b2.value);
    let value = k * (t1 * b2 + b1 * t2 - b1 * b2);
    let err = propagate(&[
        (k * b2, rates.r_t1.err),
        (k * (t2 - b2), rates.r_b1.err),
        (k * b1, rates.r_t2.err),
        (k * (t1 - b1), rates.r_b2.err),
    ]);
    Ok(Measured::new(value, err))
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct G2Report {
    pub c0: Measured,
    pub c_tau_mean: Measured,
    pub n_side_peaks: usize,
    pub c_b: Measured,
    pub g2_corrected: Measured,
    pub g2_raw: Measured,
}

/// Background-corrected and raw `g²(0)` with first-order error propagation.
///
/// `σ(C₀) = √C₀`; the side-peak and background errors are taken as given.
pub fn g2_zero(c0: u64, c_tau: Measured, c_b: Measured, n_side_peaks: usize) -> Result<G2Report> {
    if !(c_tau.value > c_b.value) {
        return Err(Error::DegenerateDenominator { c_tau: c_tau.value, c_b: c_b.value });
    }
    let c0m = Measured::poisson(c0);
    let num = c0m.value - c_b.value;
    let den = c_tau.value - c_b.value;
    let corrected = Measured::new(
        num / den,
        propagate(&[(1.0 / den, c0m.err), (-num / (den * den), c_tau.err), ((num - den) / (den * den), c_b.err)]),
    );
    let raw = Measured::new(
        c0m.value / c_tau.value,
        propagate(&[(1.0 / c_tau.value, c0m.err), (-c0m.value / (c_tau.value * c_tau.value), c_tau.err)]),
    );
    Ok(G2Report { c0: c0m, c_tau_mean: c_tau, n_side_peaks, c_b, g2_corrected: corrected, g2_raw: raw })
}

/// `g²ₙ(0) = 1 − 1/n` for `n` independent ideal emitters.
pub fn g2_n_prediction(n: u32) -> Result<f64> {
    if n < 1 {
        return Err(Error::domain("n must be at least 1"));
    }
    Ok(1.0 - 1.0 / n as f64)
}

/// Mean multiphoton infidelity bound `P(2)/P(1) ≈ ½·P(1)·g²(0)`.
pub fn multiphoton_bound(p1: f64, g2: f64) -> Result<f64> {
    if !(p1 > 0.0 && p1 <= 1.0) {
        return Err(Error::domain("p1 must lie in (0, 1]"));
    }
    if !(g2 >= 0.0) {
        return Err(Error::domain("g2 must be nonnegative"));
    }
    Ok(0.5 * p1 * g2)
}

/// Analysis settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct AnalysisParams {
    pub bin_width_ps: u64,
    /// Half-width of every peak window; defaults to the gate width.
    pub peak_half_width_ps: u64,
    pub side_peaks: usize,
}

impl Default for AnalysisParams {
    fn default() -> Self {
        Self { bin_width_ps: 1_000, peak_half_width_ps: 10_000, side_peaks: 32 }
    }
}

impl AnalysisParams {
    /// Histogram range that just holds every peak window.
    pub fn histogram_spec(&self, rep_period_ps: u64) -> Result<HistogramSpec> {
        let reach = (self.side_peaks as u64 / 2) * rep_period_ps + self.peak_half_width_ps;
        HistogramSpec::symmetric(self.bin_width_ps, reach)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub histogram: CorrelationHistogram,
    pub side_peaks: SidePeaks,
    pub rates: RateSet,
    pub report: G2Report,
}

/// Full pipeline on an already gated signal stream.
pub fn analyze(gated: &TagStream, rates: &RateSet, params: &AnalysisParams) -> Result<Analysis> {
    let rep = gated.header.rep_period_ps;
    let spec = params.histogram_spec(rep)?;
    let histogram = cross_correlate(&gated.tags, &spec)?;
    analyze_histogram(histogram, gated.duration_s(), rep, rates, params)
}

/// Peak integration and `g²(0)` from a finished histogram.
pub fn analyze_histogram(
    histogram: CorrelationHistogram,
    t_exp_s: f64,
    rep_period_ps: u64,
    rates: &RateSet,
    params: &AnalysisParams,
) -> Result<Analysis> {
    let c0 = integrate_peak(&histogram, 0, params.peak_half_width_ps)?;
    let side_peaks = side_peak_stats(&histogram, rep_period_ps, params.side_peaks, params.peak_half_width_ps)?;
    let c_b = expected_background(rates, t_exp_s, rep_period_ps as f64 / PS_PER_S)?;
    let report = g2_zero(c0, side_peaks.c_tau(), c_b, params.side_peaks)?;
    Ok(Analysis { histogram, side_peaks, rates: *rates, report })
}

fn sq(x: f64) -> f64 {
    x * x
}
