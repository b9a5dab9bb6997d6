//! Stochastic photon emission from independent emitters, one excitation per cycle.
//!
//! Per ion and cycle: the pulse excites with probability `p_excite` and the ion
//! emits a photon at the pulse peak plus an exponential decay delay. With
//! marginal probability `p_double` the pulse produces a second emission with
//! its own decay delay. Every emission draws a decay branch; landing in the
//! metastable state shelves the ion for the rest of the cycle, which blocks
//! any later CW-leakage excitation. A leakage photon, when present, is placed
//! uniformly in the un-gated part of the cycle.
//!
//! `p_excite` for the single-ion source is not measured directly. The default
//! 0.99 is inferred from the reported multiphoton bound `½·P(1)·g²(0)` and the
//! measured `g²(0)`, and the default `p_double` inverts `g²(0) ≈ 2P(2)/P(1)²`.

use alloc::vec::Vec;

use rand::RngCore;

use crate::calibration;
use crate::error::{Error, Result};
use crate::rng::{exp_from_quantile, unit};
use crate::sequence::CycleTimeline;

/// Excited-state lifetime of the 408 nm transition.
pub const DEFAULT_LIFETIME_PS: u64 = 6_990;
/// Single-emitter `g²(0)` used to seed the default double-emission probability.
pub const REFERENCE_G2: f64 = 5.15e-3;
/// Inferred single-emission probability per cycle.
pub const REFERENCE_P1: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct EmitterModel {
    /// 1/e lifetime of the excited state.
    pub lifetime_ps: u64,
    /// Probability that a decay lands in the shelved metastable state (odds 1:16).
    pub branch_to_d: f64,
    pub p_excite: f64,
    /// Marginal probability of a second pulse-induced emission in one cycle.
    pub p_double: f64,
    /// Probability of a spurious excitation by CW leakage outside the pulse.
    pub p_leakage_excite: f64,
}

impl Default for EmitterModel {
    fn default() -> Self {
        Self {
            lifetime_ps: DEFAULT_LIFETIME_PS,
            branch_to_d: 1.0 / 17.0,
            p_excite: REFERENCE_P1,
            p_double: double_probability_for(REFERENCE_P1, REFERENCE_G2),
            p_leakage_excite: calibration::leakage_excitation_probability(
                calibration::FINAL_EXTINCTION_DB,
                calibration::PULSE_FWHM_PS,
                1_250_000.0,
                REFERENCE_P1,
            ),
        }
    }
}

/// `P(2) = ½·P(1)²·g²(0)`, the inverse of `g²(0) ≈ 2P(2)/P(1)²`.
pub fn double_probability_for(p1: f64, g2: f64) -> f64 {
    0.5 * p1 * p1 * g2
}

impl EmitterModel {
    /// An emitter that always emits exactly one photon per cycle.
    pub fn ideal() -> Self {
        Self { p_excite: 1.0, p_double: 0.0, p_leakage_excite: 0.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lifetime_ps == 0 {
            return Err(Error::model("lifetime_ps must be positive"));
        }
        for (name, p) in [
            ("branch_to_d", self.branch_to_d),
            ("p_excite", self.p_excite),
            ("p_double", self.p_double),
            ("p_leakage_excite", self.p_leakage_excite),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::model(alloc::format!("{name} = {p} is not a probability")));
            }
        }
        if self.p_double > self.p_excite {
            return Err(Error::model("p_double must not exceed p_excite"));
        }
        Ok(())
    }

    /// Conditional probability of the second emission given an excitation.
    pub fn p_double_given_excite(&self) -> f64 {
        if self.p_excite > 0.0 {
            self.p_double / self.p_excite
        } else {
            0.0
        }
    }

    /// Probability that a pulse photon's decay delay lands inside `[gate_start, gate_end)`.
    pub fn gate_capture(&self, timeline: &CycleTimeline) -> f64 {
        let tau = self.lifetime_ps as f64;
        let a = (timeline.gate_start_ps - timeline.pulse_peak_ps) as f64;
        let b = (timeline.gate_end_ps() - timeline.pulse_peak_ps) as f64;
        libm::exp(-a / tau) - libm::exp(-b / tau)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum EmissionKind {
    PulsePhoton,
    DoublePhoton,
    LeakagePhoton,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmissionEvent {
    pub emitter_id: u32,
    /// Emission time relative to the start of the cycle.
    pub t_emit_ps: u64,
    pub kind: EmissionKind,
    /// The decay ended in the metastable state.
    pub shelved: bool,
}

/// Decay delay at CDF quantile `u ∈ [0, 1)`, rounded to the nearest picosecond.
#[inline]
pub fn decay_delay_at_quantile(model: &EmitterModel, u: f64) -> u64 {
    libm::round(exp_from_quantile(model.lifetime_ps as f64, u)) as u64
}

/// Exponential decay delay with mean `lifetime_ps`.
#[inline]
pub fn sample_decay_delay<R: RngCore + ?Sized>(model: &EmitterModel, rng: &mut R) -> u64 {
    decay_delay_at_quantile(model, unit(rng))
}

/// Draws one cycle of emissions for `n_ions` independent emitters.
pub fn sample_cycle_emissions<R: RngCore + ?Sized>(
    model: &EmitterModel,
    n_ions: u32,
    timeline: &CycleTimeline,
    rng: &mut R,
) -> Result<Vec<EmissionEvent>> {
    let mut out = Vec::new();
    sample_cycle_emissions_into(model, n_ions, timeline, rng, &mut out)?;
    Ok(out)
}

/// Like [`sample_cycle_emissions`] but appends to `out`.
pub fn sample_cycle_emissions_into<R: RngCore + ?Sized>(
    model: &EmitterModel,
    n_ions: u32,
    timeline: &CycleTimeline,
    rng: &mut R,
    out: &mut Vec<EmissionEvent>,
) -> Result<()> {
    if n_ions < 1 {
        return Err(Error::domain("n_ions must be at least 1"));
    }
    let p_second = model.p_double_given_excite();
    for emitter_id in 0..n_ions {
        let mut shelved = false;
        if unit(rng) < model.p_excite {
            for kind in [EmissionKind::PulsePhoton, EmissionKind::DoublePhoton] {
                if kind == EmissionKind::DoublePhoton && unit(rng) >= p_second {
                    break;
                }
                let t = timeline.pulse_peak_ps + sample_decay_delay(model, rng);
                let to_d = unit(rng) < model.branch_to_d;
                shelved |= to_d;
                out.push(EmissionEvent { emitter_id, t_emit_ps: t, kind, shelved: to_d });
            }
        }
        if !shelved && unit(rng) < model.p_leakage_excite {
            let x = (unit(rng) * timeline.ungated_len_ps() as f64) as u64;
            let to_d = unit(rng) < model.branch_to_d;
            out.push(EmissionEvent {
                emitter_id,
                t_emit_ps: timeline.ungated_offset(x.min(timeline.ungated_len_ps() - 1)),
                kind: EmissionKind::LeakagePhoton,
                shelved: to_d,
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::shard_rng;
    use crate::sequence::{build_cycle, TimingConfig};

    fn timeline() -> CycleTimeline {
        build_cycle(&TimingConfig::default()).unwrap()
    }

    #[test]
    fn default_model_is_valid() {
        let m = EmitterModel::default();
        m.validate().unwrap();
        assert_eq!(m.lifetime_ps, 6_990);
        assert!((m.branch_to_d - 1.0 / 17.0).abs() < 1e-15);
        assert!((m.p_double - 2.5237e-3).abs() < 1e-6);
        assert!(m.p_leakage_excite > 0.0 && m.p_leakage_excite < 0.1);
    }

    #[test]
    fn invalid_models_rejected() {
        let bad = [
            EmitterModel { lifetime_ps: 0, ..EmitterModel::default() },
            EmitterModel { p_excite: 1.5, ..EmitterModel::default() },
            EmitterModel { p_excite: 0.1, p_double: 0.2, ..EmitterModel::default() },
            EmitterModel { branch_to_d: -0.1, ..EmitterModel::default() },
        ];
        for m in bad {
            assert!(m.validate().is_err(), "{m:?}");
        }
    }

    #[test]
    fn quantile_zero_gives_zero_delay() {
        assert_eq!(decay_delay_at_quantile(&EmitterModel::default(), 0.0), 0);
    }

    #[test]
    fn decay_mean_matches_lifetime() {
        let m = EmitterModel::default();
        let mut rng = shard_rng(11, 0);
        let n = 1_000_000;
        let mean = (0..n).map(|_| sample_decay_delay(&m, &mut rng) as f64).sum::<f64>() / n as f64;
        // 3σ of the mean is 3·6990/1000 ≈ 21 ps
        assert!((mean - 6990.0).abs() < 25.0, "mean = {mean}");
    }

    #[test]
    fn survival_past_one_lifetime_is_one_over_e() {
        let m = EmitterModel::default();
        let mut rng = shard_rng(12, 0);
        let n = 1_000_000;
        let survived = (0..n).filter(|_| sample_decay_delay(&m, &mut rng) > 6990).count();
        let frac = survived as f64 / n as f64;
        assert!((frac - (-1.0f64).exp()).abs() < 0.002, "frac = {frac}");
    }

    #[test]
    fn decay_delays_pass_ks_test() {
        let m = EmitterModel::default();
        let mut rng = shard_rng(13, 0);
        let n = 100_000;
        let mut xs: Vec<f64> = (0..n).map(|_| sample_decay_delay(&m, &mut rng) as f64).collect();
        xs.sort_by(f64::total_cmp);
        let tau = m.lifetime_ps as f64;
        let mut d: f64 = 0.0;
        for (i, &x) in xs.iter().enumerate() {
            // rounding to whole ps shifts the CDF by at most half a picosecond
            let cdf = 1.0 - (-(x + 0.5) / tau).exp();
            let cdf_lo = 1.0 - (-(x - 0.5).max(0.0) / tau).exp();
            d = d.max((i + 1) as f64 / n as f64 - cdf).max(cdf_lo - i as f64 / n as f64);
        }
        // asymptotic critical value at α = 1e-3
        let crit = 1.949 / (n as f64).sqrt();
        assert!(d < crit, "D = {d}, critical {crit}");
    }

    #[test]
    fn deterministic_limit_one_photon_per_cycle() {
        let m = EmitterModel::ideal();
        let tl = timeline();
        let mut rng = shard_rng(1, 0);
        for _ in 0..10_000 {
            let ev = sample_cycle_emissions(&m, 1, &tl, &mut rng).unwrap();
            assert_eq!(ev.len(), 1);
            assert_eq!(ev[0].kind, EmissionKind::PulsePhoton);
            assert!(ev[0].t_emit_ps >= tl.pulse_peak_ps);
        }
    }

    #[test]
    fn six_ions_one_event_each() {
        let m = EmitterModel::ideal();
        let tl = timeline();
        let mut rng = shard_rng(2, 0);
        for _ in 0..1_000 {
            let ev = sample_cycle_emissions(&m, 6, &tl, &mut rng).unwrap();
            let ids: Vec<u32> = ev.iter().map(|e| e.emitter_id).collect();
            assert_eq!(ids, [0, 1, 2, 3, 4, 5]);
        }
    }

    #[test]
    fn zero_ions_is_domain_error() {
        let mut rng = shard_rng(3, 0);
        assert!(matches!(
            sample_cycle_emissions(&EmitterModel::default(), 0, &timeline(), &mut rng),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn two_emission_fraction_matches_p_double() {
        let m = EmitterModel { p_leakage_excite: 0.0, ..EmitterModel::default() };
        let tl = timeline();
        let mut rng = shard_rng(4, 0);
        let cycles = 10_000_000u64;
        let mut buf = Vec::new();
        let mut doubles = 0u64;
        for _ in 0..cycles {
            buf.clear();
            sample_cycle_emissions_into(&m, 1, &tl, &mut rng, &mut buf).unwrap();
            if buf.len() == 2 {
                doubles += 1;
            }
        }
        let expect = 2.52e-3 * cycles as f64;
        assert!((m.p_double - 2.52e-3).abs() < 5e-6);
        assert!((doubles as f64 - expect).abs() < 3.0 * expect.sqrt(), "{doubles}");
        let exact = m.p_double * cycles as f64;
        assert!((doubles as f64 - exact).abs() < 3.0 * exact.sqrt(), "{doubles} vs {exact}");
    }

    #[test]
    fn branching_fraction_matches() {
        let m = EmitterModel::default();
        let tl = timeline();
        let mut rng = shard_rng(5, 0);
        let (mut total, mut to_d) = (0u64, 0u64);
        let mut buf = Vec::new();
        while total < 1_000_000 {
            buf.clear();
            sample_cycle_emissions_into(&m, 1, &tl, &mut rng, &mut buf).unwrap();
            total += buf.len() as u64;
            to_d += buf.iter().filter(|e| e.shelved).count() as u64;
        }
        let p = m.branch_to_d;
        let sd = (p * (1.0 - p) * total as f64).sqrt();
        assert!((to_d as f64 - p * total as f64).abs() < 3.0 * sd);
    }

    #[test]
    fn shelving_blocks_leakage() {
        let m = EmitterModel { branch_to_d: 1.0, p_leakage_excite: 1.0, p_double: 0.0, p_excite: 1.0, ..EmitterModel::default() };
        let mut rng = shard_rng(6, 0);
        for _ in 0..1000 {
            let ev = sample_cycle_emissions(&m, 1, &timeline(), &mut rng).unwrap();
            assert_eq!(ev.len(), 1);
        }
    }

    #[test]
    fn leakage_photons_avoid_gate() {
        let m = EmitterModel { p_excite: 0.0, p_double: 0.0, p_leakage_excite: 1.0, ..EmitterModel::default() };
        let tl = timeline();
        let mut rng = shard_rng(7, 0);
        for _ in 0..100_000 {
            let ev = sample_cycle_emissions(&m, 1, &tl, &mut rng).unwrap();
            assert_eq!(ev.len(), 1);
            let t = ev[0].t_emit_ps;
            assert!(t < tl.rep_period_ps);
            assert!(!crate::sequence::in_gate(t, &tl));
        }
    }

    #[test]
    fn ions_are_independent() {
        let m = EmitterModel { p_excite: 0.5, p_double: 0.0, p_leakage_excite: 0.0, ..EmitterModel::default() };
        let tl = timeline();
        let mut rng = shard_rng(8, 0);
        let n = 1_000_000;
        let (mut sa, mut sb, mut sab) = (0.0, 0.0, 0.0);
        let mut buf = Vec::new();
        for _ in 0..n {
            buf.clear();
            sample_cycle_emissions_into(&m, 2, &tl, &mut rng, &mut buf).unwrap();
            let a = buf.iter().any(|e| e.emitter_id == 0) as u8 as f64;
            let b = buf.iter().any(|e| e.emitter_id == 1) as u8 as f64;
            sa += a;
            sb += b;
            sab += a * b;
        }
        let nf = n as f64;
        let cov = sab / nf - (sa / nf) * (sb / nf);
        // var(a·b) ≈ 0.25·0.25 under independence
        let sd = (0.25f64 * 0.75).sqrt() / nf.sqrt();
        assert!(cov.abs() < 3.0 * sd, "cov = {cov}");
    }

    #[test]
    fn fixed_seed_replays() {
        let m = EmitterModel::default();
        let tl = timeline();
        let run = |seed| {
            let mut rng = shard_rng(seed, 0);
            (0..1000).flat_map(|_| sample_cycle_emissions(&m, 3, &tl, &mut rng).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(run(42), run(42));
    }
}
