//! Calibration numerics for the pulsed excitation laser and state preparation.
//!
//! * pulse energy and CW background from average power versus repetition rate
//! * peak power from a measured pulse trace, extinction ratios, the AOM gate
//! * electrical pulse synthesis by a step-recovery diode and a shorted line
//! * optical pumping and shelving fidelities from a double-shelving sequence

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::measurement::Measured;

/// Final peak-to-background extinction of the 408 nm pulse train, in dB.
pub const FINAL_EXTINCTION_DB: f64 = 55.0;
/// Optical pulse FWHM.
pub const PULSE_FWHM_PS: f64 = 148.0;
/// Line propagation speed that puts the synthesized pulse at 148 ps FWHM for a
/// 1 cm line (not measured; `2L/v = 148 ps`).
pub const CALIBRATED_PROP_SPEED_MPS: f64 = 1.35e8;

/// CW-leakage excitation probability per cycle implied by an extinction ratio.
///
/// Leakage and pulse drive the same transition, so in the weak-drive limit the
/// excitation probability scales with delivered energy: the background power
/// `P_peak·10^(−dB/10)` acts for a whole period while the pulse delivers about
/// `P_peak·width`.
pub fn leakage_excitation_probability(extinction_db: f64, pulse_width_ps: f64, rep_period_ps: f64, p_excite: f64) -> f64 {
    let ratio = libm::pow(10.0, -extinction_db / 10.0);
    (p_excite * ratio * rep_period_ps / pulse_width_ps).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PowerScanPoint {
    pub rep_rate_hz: f64,
    pub avg_power_w: f64,
    /// One-sigma power uncertainty, when known.
    pub sigma_w: Option<f64>,
}

impl PowerScanPoint {
    pub fn new(rep_rate_hz: f64, avg_power_w: f64) -> Self {
        Self { rep_rate_hz, avg_power_w, sigma_w: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PowerFit {
    /// Slope: energy per pulse, J.
    pub pulse_energy_j: Measured,
    /// Intercept: CW background power, W.
    pub cw_background_w: Measured,
    pub covariance: f64,
    pub chi2: f64,
    pub dof: usize,
}

/// Straight-line least squares of average power against repetition rate.
///
/// With a sigma on every point the fit is weighted and the parameter errors
/// come straight from the covariance. Otherwise the fit is unweighted and the
/// covariance is scaled by the residual variance, which is undefined (NaN)
/// for exactly two points. Rows are put into a canonical order first, so the
/// result does not depend on the input order.
pub fn fit_power_vs_reprate(points: &[PowerScanPoint]) -> Result<PowerFit> {
    for p in points {
        if !(p.rep_rate_hz.is_finite() && p.rep_rate_hz >= 0.0 && p.avg_power_w.is_finite()) {
            return Err(Error::domain("power scan values must be finite with nonnegative rates"));
        }
        if let Some(s) = p.sigma_w {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::domain("power sigma must be positive"));
            }
        }
    }
    let mut pts: Vec<PowerScanPoint> = points.to_vec();
    pts.sort_by(|a, b| {
        a.rep_rate_hz
            .total_cmp(&b.rep_rate_hz)
            .then(a.avg_power_w.total_cmp(&b.avg_power_w))
            .then(a.sigma_w.unwrap_or(0.0).total_cmp(&b.sigma_w.unwrap_or(0.0)))
    });
    let distinct = pts.windows(2).filter(|w| w[0].rep_rate_hz != w[1].rep_rate_hz).count() + usize::from(!pts.is_empty());
    if distinct < 2 {
        return Err(Error::DegenerateFit(alloc::format!("{distinct} distinct repetition rate(s), need 2")));
    }

    let weighted = pts.iter().all(|p| p.sigma_w.is_some());
    let weight = |p: &PowerScanPoint| if weighted { 1.0 / p.sigma_w.map_or(1.0, |s| s * s) } else { 1.0 };
    let w_sum: f64 = pts.iter().map(weight).sum();
    let x_bar = pts.iter().map(|p| weight(p) * p.rep_rate_hz).sum::<f64>() / w_sum;
    let y_bar = pts.iter().map(|p| weight(p) * p.avg_power_w).sum::<f64>() / w_sum;
    let sxx: f64 = pts.iter().map(|p| weight(p) * sq(p.rep_rate_hz - x_bar)).sum();
    let sxy: f64 = pts.iter().map(|p| weight(p) * (p.rep_rate_hz - x_bar) * (p.avg_power_w - y_bar)).sum();
    let slope = sxy / sxx;
    let intercept = y_bar - slope * x_bar;

    let chi2: f64 = pts
        .iter()
        .map(|p| weight(p) * sq(p.avg_power_w - intercept - slope * p.rep_rate_hz))
        .sum();
    let dof = pts.len() - 2;
    let scale = if weighted {
        1.0
    } else if dof > 0 {
        chi2 / dof as f64
    } else {
        f64::NAN
    };
    let var_slope = scale / sxx;
    let var_intercept = scale * (1.0 / w_sum + x_bar * x_bar / sxx);
    Ok(PowerFit {
        pulse_energy_j: Measured::new(slope, libm::sqrt(var_slope)),
        cw_background_w: Measured::new(intercept, libm::sqrt(var_intercept)),
        covariance: -x_bar * scale / sxx,
        chi2,
        dof,
    })
}

/// A sampled waveform: `(t_ps, amplitude)` pairs with increasing time.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Waveform {
    pub samples: Vec<(f64, f64)>,
}

impl Waveform {
    /// Trapezoidal integral, amplitude·ps.
    pub fn integral(&self) -> f64 {
        self.samples.windows(2).map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0)).sum()
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { samples: self.samples.iter().map(|&(t, a)| (t, a * factor)).collect() }
    }

    /// Full width at half maximum with linear interpolation at both crossings.
    pub fn fwhm(&self) -> Option<f64> {
        let (imax, &(_, peak)) = self.samples.iter().enumerate().max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))?;
        let half = 0.5 * peak;
        let cross = |a: (f64, f64), b: (f64, f64)| a.0 + (half - a.1) * (b.0 - a.0) / (b.1 - a.1);
        let rise = (1..=imax).rev().find(|&i| self.samples[i - 1].1 < half)?;
        let left = cross(self.samples[rise - 1], self.samples[rise]);
        let fall = (imax..self.samples.len() - 1).find(|&i| self.samples[i + 1].1 < half)?;
        let right = cross(self.samples[fall], self.samples[fall + 1]);
        Some(right - left)
    }

    fn validate_trace(&self) -> Result<()> {
        if self.samples.len() < 2 {
            return Err(Error::domain("trace needs at least two samples"));
        }
        if self.samples.iter().any(|s| !(s.0.is_finite() && s.1.is_finite() && s.1 >= 0.0)) {
            return Err(Error::domain("trace amplitudes must be finite and nonnegative"));
        }
        if self.samples.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::domain("trace times must increase"));
        }
        Ok(())
    }
}

/// Scales a relative pulse trace so its time integral equals `pulse_energy_j`
/// and returns the scaled maximum, W.
pub fn peak_power_from_trace(trace: &Waveform, pulse_energy_j: f64) -> Result<f64> {
    trace.validate_trace()?;
    let area_s = trace.integral() * 1e-12;
    if area_s <= 0.0 {
        return Err(Error::domain("trace has zero integral"));
    }
    Ok(trace.peak() * pulse_energy_j / area_s)
}

/// `10·log₁₀(peak / background)`.
pub fn extinction_db(peak_w: f64, background_w: f64) -> Result<f64> {
    if !(peak_w > 0.0 && background_w > 0.0) {
        return Err(Error::domain("powers must be positive"));
    }
    Ok(10.0 * libm::log10(peak_w / background_w))
}

/// Extinction after a stage whose output power goes as the square of its input.
pub fn doubled_extinction(db_in: f64) -> f64 {
    2.0 * db_in
}

/// Average CW-leakage suppression from opening an AOM for `gate_ps` per period.
pub fn aom_gate_improvement(gate_ps: f64, rep_period_ps: f64) -> Result<f64> {
    if !(gate_ps > 0.0) {
        return Err(Error::domain("gate must be positive"));
    }
    if gate_ps > rep_period_ps {
        return Err(Error::domain("gate exceeds the repetition period"));
    }
    Ok(10.0 * libm::log10(rep_period_ps / gate_ps))
}

/// Slow exponential tail after the falling edge, as added by the EOM driver amplifier.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PulseTail {
    /// Tail height relative to the pulse plateau.
    pub amplitude: f64,
    pub time_constant_ps: f64,
}

impl PulseTail {
    /// A tail that brings a 19.1 pJ pulse down to about 52 mW peak while
    /// keeping the FWHM near 148 ps.
    pub const REFERENCE: PulseTail = PulseTail { amplitude: 0.1, time_constant_ps: 2_200.0 };
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SrdPulse {
    pub line_length_m: f64,
    pub prop_speed_mps: f64,
    /// 10–90 % transition time of the diode edge.
    pub edge_time_ps: f64,
    pub sample_step_ps: f64,
    pub tail: Option<PulseTail>,
}

impl Default for SrdPulse {
    fn default() -> Self {
        Self {
            line_length_m: 0.01,
            prop_speed_mps: CALIBRATED_PROP_SPEED_MPS,
            edge_time_ps: 60.0,
            sample_step_ps: 1.0,
            tail: None,
        }
    }
}

impl SrdPulse {
    /// Round-trip delay of the shorted line, `2L/v`, in ps.
    pub fn round_trip_ps(&self) -> f64 {
        2.0 * self.line_length_m / self.prop_speed_mps * 1e12
    }
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Synthesizes `V(t) = edge(t) − edge(t − 2L/v)` with a logistic edge.
///
/// The reflected, inverted edge from the shorted line cancels the leading
/// edge one round trip later. A logistic with scale `s` has a 10–90 % time of
/// `2·s·ln 9`.
pub fn srd_pulse_shape(params: &SrdPulse) -> Result<Waveform> {
    let SrdPulse { line_length_m, prop_speed_mps, edge_time_ps, sample_step_ps, tail } = *params;
    if !(line_length_m > 0.0 && prop_speed_mps > 0.0 && edge_time_ps > 0.0 && sample_step_ps > 0.0) {
        return Err(Error::domain("pulse parameters must be positive"));
    }
    let width = params.round_trip_ps();
    let scale = edge_time_ps / (2.0 * libm::log(9.0));
    let pad = 12.0 * scale + 2.0 * sample_step_ps;
    let tail_len = tail.map_or(0.0, |t| 12.0 * t.time_constant_ps);
    let (t0, t1) = (-pad, width + pad + tail_len);
    let n = libm::ceil((t1 - t0) / sample_step_ps) as usize + 1;
    let samples = (0..n)
        .map(|i| {
            let t = t0 + i as f64 * sample_step_ps;
            let falling = logistic((t - width) / scale);
            let mut v = logistic(t / scale) - falling;
            if let Some(tail) = tail {
                v += tail.amplitude * falling * libm::exp(-(t - width) / tail.time_constant_ps);
            }
            (t, v)
        })
        .collect();
    Ok(Waveform { samples })
}

/// One labeled stage in an extinction budget.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BudgetStage {
    pub label: String,
    pub db_change: f64,
    /// Running extinction after this stage.
    pub db_after: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ExtinctionBudget {
    pub stages: Vec<BudgetStage>,
    pub total_db: f64,
}

impl ExtinctionBudget {
    pub fn push(&mut self, label: impl Into<String>, db_change: f64) {
        self.total_db += db_change;
        self.stages.push(BudgetStage { label: label.into(), db_change, db_after: self.total_db });
    }
}

impl fmt::Display for ExtinctionBudget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.stages {
            writeln!(f, "{:<28} {:+8.2} dB  -> {:6.2} dB", s.label, s.db_change, s.db_after)?;
        }
        writeln!(f, "{:<28} {:>8}     {:6.2} dB", "total", "", self.total_db)
    }
}

/// Inputs for the EOM → doubler → AOM leakage chain.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct ChainConfig {
    /// Stabilized EOM extinction at 816 nm.
    pub eom_db: f64,
    /// Extinction floor at the doubler output set by doubled TA ASE.
    pub ase_floor_db: f64,
    pub aom_gate_ps: f64,
    pub rep_period_ps: f64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self { eom_db: 31.0, ase_floor_db: 43.0, aom_gate_ps: 80_000.0, rep_period_ps: 1_250_000.0 }
    }
}

/// Builds the labeled leakage budget. Doubling squares the EOM contrast, ASE
/// caps it at the floor, and the AOM gate then suppresses only the CW part.
pub fn extinction_chain(cfg: &ChainConfig) -> Result<ExtinctionBudget> {
    let mut budget = ExtinctionBudget::default();
    budget.push("eom_stabilized", cfg.eom_db);
    let doubled = doubled_extinction(cfg.eom_db);
    budget.push("doubler_squares_contrast", doubled - cfg.eom_db);
    budget.push("ase_floor", (cfg.ase_floor_db - doubled).min(0.0));
    budget.push("aom_gate_cw_leakage", aom_gate_improvement(cfg.aom_gate_ps, cfg.rep_period_ps)?);
    Ok(budget)
}

/// Two readings of how the double-shelving sequence composes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ShelvingModel {
    /// The second π pulse starts from the same ground state and rescues
    /// first-pulse failures: `F_AB = F_p·(F₁ + F₂ − F₁F₂)`.
    #[default]
    SequentialRescue,
    /// Independent successes: `F_AB = F_p·F₁·F₂`.
    Product,
}

impl ShelvingModel {
    pub fn combined(self, pump: f64, first: f64, second: f64) -> f64 {
        match self {
            ShelvingModel::SequentialRescue => pump * (first + second - first * second),
            ShelvingModel::Product => pump * first * second,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Fidelities {
    pub pump: f64,
    pub first: f64,
    pub second: f64,
}

/// Forward model: the three measured sequence fidelities `(F_A, F_B, F_AB)`.
pub fn compose_fidelities(model: ShelvingModel, f: &Fidelities) -> (f64, f64, f64) {
    (f.pump * f.first, f.pump * f.second, model.combined(f.pump, f.first, f.second))
}

/// Recovers pumping and per-transition shelving fidelities from the two
/// single-shelving and the double-shelving sequence fidelities.
///
/// With `F₁ = F_A/F_p` and `F₂ = F_B/F_p` the combined fidelity is a monotone
/// function of `F_p` alone; the root on `[max(F_A, F_B), 1]` is found by
/// bisection down to adjacent floating-point values.
pub fn factorize_fidelities(f_a: f64, f_b: f64, f_ab: f64, model: ShelvingModel) -> Result<Fidelities> {
    for (name, f) in [("f_a", f_a), ("f_b", f_b), ("f_ab", f_ab)] {
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::domain(alloc::format!("{name} = {f} must lie in (0, 1]")));
        }
    }
    let residual = |pump: f64| model.combined(pump, f_a / pump, f_b / pump) - f_ab;
    let (mut lo, mut hi) = (f_a.max(f_b), 1.0);
    let (r_lo, r_hi) = (residual(lo), residual(hi));
    let tol = 1e-12;
    if r_lo.abs() <= tol * 1e-3 {
        hi = lo;
    } else if r_hi.abs() <= tol * 1e-3 {
        lo = hi;
    } else if r_lo.signum() == r_hi.signum() {
        return Err(Error::InconsistentData(alloc::format!(
            "no pumping fidelity in [{lo}, 1] reproduces f_ab = {f_ab}"
        )));
    }
    let rising = r_hi > r_lo;
    for _ in 0..2_000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if (residual(mid) < 0.0) == rising {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let pump = 0.5 * (lo + hi);
    Ok(Fidelities { pump, first: f_a / pump, second: f_b / pump })
}

fn sq(x: f64) -> f64 {
    x * x
}
