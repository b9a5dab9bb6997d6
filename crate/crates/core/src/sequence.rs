//! Per-cycle experiment timeline and software gate placement.
//!
//! One cycle runs optical pumping, the excitation pulse, the detection gate,
//! the metastable-state quench, and Doppler cooling, back to back. The gate
//! opens a fixed delay after the excitation pulse peak.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};

/// Timing inputs for [`build_cycle`]. All values in picoseconds.
///
/// Only the repetition period, gate width, and gate delay are set by the
/// experiment being modeled; the pumping, quench, and cooling lengths are
/// fillers that make the default phases add up to exactly one period.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct TimingConfig {
    pub rep_period_ps: u64,
    pub pumping_ps: u64,
    /// Offset of the excitation pulse peak from the start of the excitation phase.
    pub pulse_lead_ps: u64,
    /// Delay from the pulse peak to the gate opening.
    pub gate_delay_ps: u64,
    pub gate_width_ps: u64,
    pub quench_ps: u64,
    pub cooling_ps: u64,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self {
            rep_period_ps: 1_250_000,
            pumping_ps: 200_000,
            pulse_lead_ps: 1_000,
            gate_delay_ps: 4_500,
            gate_width_ps: 10_000,
            quench_ps: 300_000,
            cooling_ps: 734_500,
        }
    }
}

impl TimingConfig {
    /// Sum of all phase durations.
    pub fn required_period_ps(&self) -> u64 {
        self.pumping_ps
            + self.pulse_lead_ps
            + self.gate_delay_ps
            + self.gate_width_ps
            + self.quench_ps
            + self.cooling_ps
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum PhaseKind {
    OpticalPumping,
    Excitation,
    Gate,
    Quench,
    DopplerCooling,
}

impl PhaseKind {
    pub fn label(self) -> &'static str {
        match self {
            PhaseKind::OpticalPumping => "optical_pumping",
            PhaseKind::Excitation => "excitation",
            PhaseKind::Gate => "gate",
            PhaseKind::Quench => "quench",
            PhaseKind::DopplerCooling => "doppler_cooling",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Phase {
    pub kind: PhaseKind,
    pub start_ps: u64,
    pub end_ps: u64,
}

/// Gate position inside a cycle, carried in stream headers once a stream is gated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GateDescriptor {
    pub start_ps: u64,
    pub width_ps: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CycleTimeline {
    pub rep_period_ps: u64,
    pub pulse_peak_ps: u64,
    pub gate_start_ps: u64,
    pub gate_width_ps: u64,
    pub phases: Vec<Phase>,
}

/// Lays out the cycle phases in order and checks that they fit in one period.
pub fn build_cycle(timing: &TimingConfig) -> Result<CycleTimeline> {
    if timing.rep_period_ps == 0 {
        return Err(Error::domain("rep_period_ps must be positive"));
    }
    if timing.gate_width_ps == 0 {
        return Err(Error::domain("gate_width_ps must be positive"));
    }
    for (name, v) in [
        ("pumping_ps", timing.pumping_ps),
        ("quench_ps", timing.quench_ps),
        ("cooling_ps", timing.cooling_ps),
        ("pulse_lead_ps + gate_delay_ps", timing.pulse_lead_ps + timing.gate_delay_ps),
    ] {
        if v == 0 {
            return Err(Error::domain(alloc::format!("{name} must be positive")));
        }
    }

    let durations = [
        (PhaseKind::OpticalPumping, timing.pumping_ps),
        (PhaseKind::Excitation, timing.pulse_lead_ps + timing.gate_delay_ps),
        (PhaseKind::Gate, timing.gate_width_ps),
        (PhaseKind::Quench, timing.quench_ps),
        (PhaseKind::DopplerCooling, timing.cooling_ps),
    ];
    let mut phases = Vec::with_capacity(durations.len());
    let mut cursor = 0u64;
    for (kind, len) in durations {
        let end = cursor.checked_add(len).ok_or_else(|| Error::domain("phase durations overflow"))?;
        if end > timing.rep_period_ps {
            return Err(Error::Timing {
                phase: kind.label().to_string(),
                end_ps: end,
                rep_period_ps: timing.rep_period_ps,
            });
        }
        phases.push(Phase { kind, start_ps: cursor, end_ps: end });
        cursor = end;
    }

    let pulse_peak_ps = timing.pumping_ps + timing.pulse_lead_ps;
    Ok(CycleTimeline {
        rep_period_ps: timing.rep_period_ps,
        pulse_peak_ps,
        gate_start_ps: pulse_peak_ps + timing.gate_delay_ps,
        gate_width_ps: timing.gate_width_ps,
        phases,
    })
}

/// True iff `t_ps mod rep_period` lies in `[gate_start, gate_start + gate_width)`.
#[inline]
pub fn in_gate(t_ps: u64, timeline: &CycleTimeline) -> bool {
    let offset = t_ps % timeline.rep_period_ps;
    offset.wrapping_sub(timeline.gate_start_ps) < timeline.gate_width_ps
}

impl CycleTimeline {
    pub fn gate(&self) -> GateDescriptor {
        GateDescriptor { start_ps: self.gate_start_ps, width_ps: self.gate_width_ps }
    }

    pub fn gate_end_ps(&self) -> u64 {
        self.gate_start_ps + self.gate_width_ps
    }

    /// Fraction of the period covered by the gate.
    pub fn gate_duty(&self) -> f64 {
        self.gate_width_ps as f64 / self.rep_period_ps as f64
    }

    /// Length of the part of a cycle outside the gate.
    pub fn ungated_len_ps(&self) -> u64 {
        self.rep_period_ps - self.gate_width_ps
    }

    /// Maps a position `x ∈ [0, ungated_len)` in the un-gated remainder to a cycle offset.
    pub fn ungated_offset(&self, x: u64) -> u64 {
        if x < self.gate_start_ps {
            x
        } else {
            x + self.gate_width_ps
        }
    }

    pub fn phase(&self, kind: PhaseKind) -> Option<&Phase> {
        self.phases.iter().find(|p| p.kind == kind)
    }

    /// Unused time at the end of the cycle.
    pub fn slack_ps(&self) -> u64 {
        self.rep_period_ps - self.phases.last().map_or(0, |p| p.end_ps)
    }

    /// Human-readable report block.
    pub fn to_text(&self) -> String {
        alloc::format!("{self}")
    }
}

impl fmt::Display for CycleTimeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "[timeline]")?;
        writeln!(f, "rep_period_ps = {}", self.rep_period_ps)?;
        writeln!(f, "pulse_peak_ps = {}", self.pulse_peak_ps)?;
        writeln!(f, "gate_start_ps = {}", self.gate_start_ps)?;
        writeln!(f, "gate_width_ps = {}", self.gate_width_ps)?;
        writeln!(f, "slack_ps = {}", self.slack_ps())?;
        for p in &self.phases {
            writeln!(f, "phase.{} = [{}, {})", p.kind.label(), p.start_ps, p.end_ps)?;
        }
        Ok(())
    }
}
