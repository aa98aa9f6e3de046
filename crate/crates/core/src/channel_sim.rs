//! Primary-user channel activity: Hyper-Erlang ON/OFF sojourns, intermittent
//! sensing, and short-impulse emulation attacks.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, SimRng};

const WEIGHT_SUM_TOL: f64 = 1e-9;

/// Mixture of Erlang branches describing one sojourn-time distribution.
///
/// Branch `i` is chosen with probability `weights[i]` and contributes an
/// Erlang(`shapes[i]`, `scales[i]`) holding time. Scales are in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperErlangParams {
    pub weights: Vec<f64>,
    pub shapes: Vec<u32>,
    pub scales: Vec<f64>,
}

impl HyperErlangParams {
    pub fn new(weights: Vec<f64>, shapes: Vec<u32>, scales: Vec<f64>) -> Result<Self> {
        let params = Self {
            weights,
            shapes,
            scales,
        };
        params.validate("")?;
        Ok(params)
    }

    /// Checks every invariant, reporting violations as `{prefix}weights` etc.
    pub fn validate(&self, prefix: &str) -> Result<()> {
        let field = |name: &str| format!("{prefix}{name}");
        let n = self.weights.len();
        if n == 0 {
            return Err(Error::invalid(
                field("weights"),
                "at least one branch is required",
            ));
        }
        if self.shapes.len() != n {
            return Err(Error::invalid(
                field("shapes"),
                format!("has {} entries but weights has {n}", self.shapes.len()),
            ));
        }
        if self.scales.len() != n {
            return Err(Error::invalid(
                field("scales"),
                format!("has {} entries but weights has {n}", self.scales.len()),
            ));
        }
        if let Some(w) = self.weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::invalid(
                field("weights"),
                format!("entry {w} is not a finite non-negative probability"),
            ));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::invalid(
                field("weights"),
                format!("must sum to 1, got {sum}"),
            ));
        }
        if self.shapes.contains(&0) {
            return Err(Error::invalid(
                field("shapes"),
                "every shape must be an integer >= 1",
            ));
        }
        if let Some(s) = self.scales.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::invalid(
                field("scales"),
                format!("entry {s} is not a finite positive scale"),
            ));
        }
        Ok(())
    }

    pub fn branches(&self) -> usize {
        self.weights.len()
    }

    fn iter(&self) -> impl Iterator<Item = (f64, u32, f64)> + '_ {
        self.weights
            .iter()
            .zip(&self.shapes)
            .zip(&self.scales)
            .map(|((&w, &k), &s)| (w, k, s))
    }
}

/// Mean sojourn time: the weighted sum of branch means `k * theta`.
pub fn expected_sojourn(params: &HyperErlangParams) -> Result<f64> {
    params.validate("")?;
    Ok(params.iter().map(|(w, k, s)| w * f64::from(k) * s).sum())
}

/// Probability density of the sojourn time at `t` seconds.
pub fn pdf(params: &HyperErlangParams, t: f64) -> Result<f64> {
    params.validate("")?;
    if !t.is_finite() || t < 0.0 {
        return Err(Error::Domain(format!(
            "density requested at t = {t}; t must be >= 0"
        )));
    }
    Ok(params.iter().map(|(w, k, s)| w * erlang_pdf(k, s, t)).sum())
}

fn ln_factorial(n: u32) -> f64 {
    (2..=n).map(|i| f64::from(i).ln()).sum()
}

fn erlang_pdf(shape: u32, scale: f64, t: f64) -> f64 {
    if t == 0.0 {
        return if shape == 1 { 1.0 / scale } else { 0.0 };
    }
    let k = f64::from(shape);
    ((k - 1.0) * t.ln() - t / scale - k * scale.ln() - ln_factorial(shape - 1)).exp()
}

/// Pre-validated sampler; draws a branch, then sums `k` exponentials.
#[derive(Debug, Clone)]
pub struct SojournSampler {
    cumulative: Vec<f64>,
    shapes: Vec<u32>,
    scales: Vec<f64>,
}

impl SojournSampler {
    pub fn new(params: &HyperErlangParams) -> Result<Self> {
        params.validate("")?;
        let mut acc = 0.0;
        let cumulative = params
            .weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        Ok(Self {
            cumulative,
            shapes: params.shapes.clone(),
            scales: params.scales.clone(),
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random::<f64>() * self.cumulative[self.cumulative.len() - 1];
        let branch = self
            .cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.cumulative.len() - 1);
        let scale = self.scales[branch];
        let mut total = 0.0;
        for _ in 0..self.shapes[branch] {
            // 1 - U lies in (0, 1], so the log is finite.
            let u: f64 = 1.0 - rng.random::<f64>();
            total -= scale * u.ln();
        }
        // A zero draw needs U = 1 exactly in every stage; nudge to keep durations positive.
        if total > 0.0 {
            total
        } else {
            f64::MIN_POSITIVE
        }
    }
}

pub fn sample_sojourn<R: Rng + ?Sized>(params: &HyperErlangParams, rng: &mut R) -> Result<f64> {
    Ok(SojournSampler::new(params)?.sample(rng))
}

/// Two-state alternating renewal model of primary-user activity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OnOffModel {
    pub on: HyperErlangParams,
    pub off: HyperErlangParams,
}

impl OnOffModel {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        self.on.validate(&format!("{prefix}on."))?;
        self.off.validate(&format!("{prefix}off."))
    }

    /// The low-complexity two-branch model.
    pub fn simple() -> Self {
        Self {
            on: HyperErlangParams {
                weights: vec![0.5, 0.5],
                shapes: vec![1, 1],
                scales: vec![0.5, 1.5],
            },
            off: HyperErlangParams {
                weights: vec![0.5, 0.5],
                shapes: vec![2, 4],
                scales: vec![2.0, 1.0],
            },
        }
    }

    /// The ten-branch model with long, heterogeneous sojourns.
    pub fn complex() -> Self {
        Self {
            on: HyperErlangParams {
                weights: vec![0.2, 0.05, 0.1, 0.1, 0.2, 0.05, 0.1, 0.03, 0.07, 0.1],
                shapes: vec![2, 1, 2, 2, 1, 3, 10, 4, 3, 6],
                scales: vec![0.5, 1.2, 0.3, 0.6, 2.0, 0.8, 1.2, 1.8, 2.0, 2.5],
            },
            off: HyperErlangParams {
                weights: vec![0.1, 0.15, 0.05, 0.15, 0.12, 0.13, 0.08, 0.05, 0.05, 0.12],
                shapes: vec![4, 2, 3, 5, 15, 4, 3, 6, 5, 1],
                scales: vec![2.5, 1.3, 4.0, 3.0, 1.0, 1.5, 1.0, 0.8, 1.8, 4.0],
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelState {
    On,
    Off,
}

impl ChannelState {
    pub fn flip(self) -> Self {
        match self {
            ChannelState::On => ChannelState::Off,
            ChannelState::Off => ChannelState::On,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub state: ChannelState,
    pub duration: f64,
}

/// Ground-truth channel history as alternating ON/OFF segments.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousTrace {
    pub segments: Vec<Segment>,
}

impl ContinuousTrace {
    pub fn total_duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "segment,state,start,duration")?;
        let mut start = 0.0;
        for (i, seg) in self.segments.iter().enumerate() {
            let state = match seg.state {
                ChannelState::On => "on",
                ChannelState::Off => "off",
            };
            writeln!(w, "{i},{state},{start},{}", seg.duration)?;
            start += seg.duration;
        }
        Ok(())
    }
}

/// Draws alternating sojourns starting in `initial_state` until the trace
/// covers `horizon` seconds.
pub fn generate_trace<R: Rng + ?Sized>(
    model: &OnOffModel,
    horizon: f64,
    initial_state: ChannelState,
    rng: &mut R,
) -> Result<ContinuousTrace> {
    if !horizon.is_finite() || horizon <= 0.0 {
        return Err(Error::invalid(
            "horizon",
            format!("must be a positive duration, got {horizon}"),
        ));
    }
    let on = SojournSampler::new(&model.on)?;
    let off = SojournSampler::new(&model.off)?;
    let mut segments = Vec::new();
    let mut state = initial_state;
    let mut elapsed = 0.0;
    while elapsed < horizon {
        let duration = match state {
            ChannelState::On => on.sample(rng),
            ChannelState::Off => off.sample(rng),
        };
        segments.push(Segment { state, duration });
        elapsed += duration;
        state = state.flip();
    }
    Ok(ContinuousTrace { segments })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensingConfig {
    /// Observation window length, seconds.
    pub t_ob: f64,
    /// Revisit gap between observations, seconds.
    pub t_re: f64,
}

impl SensingConfig {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        if !(self.t_ob > 0.0 && self.t_ob.is_finite()) {
            return Err(Error::invalid(
                format!("{prefix}t_ob"),
                "observation time must be > 0",
            ));
        }
        if !(self.t_re >= 0.0 && self.t_re.is_finite()) {
            return Err(Error::invalid(
                format!("{prefix}t_re"),
                "revisit time must be >= 0",
            ));
        }
        Ok(())
    }

    pub fn slot_period(&self) -> f64 {
        self.t_ob + self.t_re
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    /// Chance that the attacker fires an impulse in any given slot.
    pub impulse_probability: f64,
}

impl AttackConfig {
    pub const NONE: AttackConfig = AttackConfig {
        impulse_probability: 0.0,
    };

    pub fn validate(&self, prefix: &str) -> Result<()> {
        if !(0.0..=1.0).contains(&self.impulse_probability) {
            return Err(Error::invalid(
                format!("{prefix}impulse_probability"),
                format!("must lie in [0, 1], got {}", self.impulse_probability),
            ));
        }
        Ok(())
    }
}

/// Binary sensing outcomes, one per slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SensedSeries {
    /// Observed channel state, 1 = busy.
    pub bits: Vec<u8>,
    /// Slots in which the attacker transmitted, whatever the PU was doing.
    pub attack_mask: Vec<u8>,
    /// What the sensor would have seen without the attacker.
    pub pu_bits: Vec<u8>,
    pub slot_period: f64,
}

impl SensedSeries {
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Attack impulse that actually changed the observation (PU was idle).
    pub fn corrupted(&self, slot: usize) -> bool {
        self.attack_mask[slot] == 1 && self.pu_bits[slot] == 0
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "slot,bit,attack_mask")?;
        for (i, (b, m)) in self.bits.iter().zip(&self.attack_mask).enumerate() {
            writeln!(w, "{i},{b},{m}")?;
        }
        Ok(())
    }
}

/// Senses every complete observation window the trace covers.
pub fn sense<R: Rng + ?Sized>(
    trace: &ContinuousTrace,
    sensing: &SensingConfig,
    attack: &AttackConfig,
    rng: &mut R,
) -> Result<SensedSeries> {
    sensing.validate("sensing.")?;
    if trace.segments.is_empty() {
        return Err(Error::InsufficientData(
            "cannot sense an empty trace".into(),
        ));
    }
    let total = trace.total_duration();
    if total < sensing.t_ob {
        return Err(Error::InsufficientData(format!(
            "trace lasts {total} s, shorter than one observation window ({} s)",
            sensing.t_ob
        )));
    }
    let slots = ((total - sensing.t_ob) / sensing.slot_period()).floor() as usize + 1;
    sense_slots(trace, sensing, attack, slots, rng)
}

/// Senses exactly `slots` windows; the trace must cover all of them.
pub fn sense_slots<R: Rng + ?Sized>(
    trace: &ContinuousTrace,
    sensing: &SensingConfig,
    attack: &AttackConfig,
    slots: usize,
    rng: &mut R,
) -> Result<SensedSeries> {
    sensing.validate("sensing.")?;
    attack.validate("attack.")?;
    if trace.segments.is_empty() {
        return Err(Error::InsufficientData(
            "cannot sense an empty trace".into(),
        ));
    }
    let period = sensing.slot_period();
    let total = trace.total_duration();
    let needed = (slots.saturating_sub(1)) as f64 * period + sensing.t_ob;
    if total < needed {
        return Err(Error::InsufficientData(format!(
            "trace lasts {total} s but {slots} slots need {needed} s"
        )));
    }

    let mut pu_bits = Vec::with_capacity(slots);
    let mut seg = 0;
    let mut seg_start = 0.0;
    for k in 0..slots {
        let open = k as f64 * period;
        let close = open + sensing.t_ob;
        // Skip segments that end before this window opens.
        while seg + 1 < trace.segments.len() && seg_start + trace.segments[seg].duration <= open {
            seg_start += trace.segments[seg].duration;
            seg += 1;
        }
        let mut busy = false;
        let mut i = seg;
        let mut start = seg_start;
        while i < trace.segments.len() && start <= close {
            if trace.segments[i].state == ChannelState::On {
                busy = true;
                break;
            }
            start += trace.segments[i].duration;
            i += 1;
        }
        pu_bits.push(u8::from(busy));
    }

    let p = attack.impulse_probability;
    let attack_mask: Vec<u8> = (0..slots)
        .map(|_| u8::from(rng.random::<f64>() < p))
        .collect();
    let bits = pu_bits
        .iter()
        .zip(&attack_mask)
        .map(|(&b, &m)| b | m)
        .collect();
    Ok(SensedSeries {
        bits,
        attack_mask,
        pu_bits,
        slot_period: period,
    })
}

/// Generates a trace long enough for `slots` windows and senses it, drawing
/// from the `trace/{label}` and `attack/{label}` sub-streams of `seed`.
pub fn simulate_series(
    model: &OnOffModel,
    sensing: &SensingConfig,
    attack: &AttackConfig,
    slots: usize,
    seed: u64,
    label: &str,
) -> Result<(ContinuousTrace, SensedSeries)> {
    if slots == 0 {
        return Err(Error::invalid("slots", "at least one slot is required"));
    }
    sensing.validate("sensing.")?;
    let mut trace_rng: SimRng = rng::substream(seed, &format!("{}/{label}", rng::TRACE));
    let mut attack_rng: SimRng = rng::substream(seed, &format!("{}/{label}", rng::ATTACK));
    let horizon = slots as f64 * sensing.slot_period();
    let trace = generate_trace(model, horizon, ChannelState::Off, &mut trace_rng)?;
    let series = sense_slots(&trace, sensing, attack, slots, &mut attack_rng)?;
    Ok((trace, series))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn exp1(scale: f64) -> HyperErlangParams {
        HyperErlangParams::new(vec![1.0], vec![1], vec![scale]).unwrap()
    }

    #[test]
    fn expectations_of_bundled_models() {
        let simple = OnOffModel::simple();
        let complex = OnOffModel::complex();
        assert!((expected_sojourn(&simple.on).unwrap() - 1.0).abs() < 1e-12);
        assert!((expected_sojourn(&simple.off).unwrap() - 4.0).abs() < 1e-12);
        assert!((expected_sojourn(&complex.on).unwrap() - 4.296).abs() < 1e-9);
        assert!((expected_sojourn(&complex.off).unwrap() - 8.23).abs() < 1e-9);
        assert_eq!(expected_sojourn(&exp1(2.5)).unwrap(), 2.5);
    }

    #[test]
    fn validation_names_the_field() {
        let bad = HyperErlangParams {
            weights: vec![0.5, 0.4],
            shapes: vec![1, 1],
            scales: vec![1.0, 1.0],
        };
        let err = expected_sojourn(&bad).unwrap_err();
        assert!(err.to_string().contains("weights"), "{err}");

        let err = HyperErlangParams::new(vec![1.0], vec![0], vec![1.0]).unwrap_err();
        assert!(err.to_string().contains("shapes"));
        let err = HyperErlangParams::new(vec![1.0], vec![1], vec![0.0]).unwrap_err();
        assert!(err.to_string().contains("scales"));
        let err = HyperErlangParams::new(vec![0.5, 0.5], vec![1], vec![1.0, 1.0]).unwrap_err();
        assert!(err.to_string().contains("shapes"));
        let err = HyperErlangParams::new(vec![], vec![], vec![]).unwrap_err();
        assert!(err.to_string().contains("weights"));
        let err = HyperErlangParams::new(vec![1.5, -0.5], vec![1, 1], vec![1.0, 1.0]).unwrap_err();
        assert!(err.to_string().contains("weights"));
    }

    #[test]
    fn pdf_point_values() {
        assert!((pdf(&exp1(1.0), 0.0).unwrap() - 1.0).abs() < 1e-15);
        let erlang2 = HyperErlangParams::new(vec![1.0], vec![2], vec![1.0]).unwrap();
        assert!((pdf(&erlang2, 1.0).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(pdf(&erlang2, 0.0).unwrap(), 0.0);
        assert!(matches!(pdf(&erlang2, -0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let p = OnOffModel::complex().off;
        let a = sample_sojourn(&p, &mut substream(3, "x")).unwrap();
        let b = sample_sojourn(&p, &mut substream(3, "x")).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert!(a > 0.0);
    }

    #[test]
    fn tiny_horizon_yields_one_segment() {
        for model in [OnOffModel::simple(), OnOffModel::complex()] {
            let mut rng = substream(11, "t");
            let trace = generate_trace(&model, 0.001, ChannelState::Off, &mut rng).unwrap();
            assert_eq!(trace.segments.len(), 1);
            assert_eq!(trace.segments[0].state, ChannelState::Off);
        }
        let mut rng = substream(1, "t");
        assert!(generate_trace(&OnOffModel::simple(), 0.0, ChannelState::On, &mut rng).is_err());
    }

    #[test]
    fn sensing_all_on_trace() {
        let trace = ContinuousTrace {
            segments: vec![Segment {
                state: ChannelState::On,
                duration: 100.0,
            }],
        };
        let sensing = SensingConfig {
            t_ob: 0.01,
            t_re: 0.24,
        };
        let s = sense(
            &trace,
            &sensing,
            &AttackConfig::NONE,
            &mut substream(0, "a"),
        )
        .unwrap();
        assert_eq!(s.len(), 400);
        assert!(s.bits.iter().all(|&b| b == 1));
        assert!(s.attack_mask.iter().all(|&m| m == 0));
    }

    #[test]
    fn certain_attack_marks_every_slot() {
        let trace = ContinuousTrace {
            segments: vec![Segment {
                state: ChannelState::Off,
                duration: 10.0,
            }],
        };
        let sensing = SensingConfig {
            t_ob: 0.01,
            t_re: 0.99,
        };
        let attack = AttackConfig {
            impulse_probability: 1.0,
        };
        let s = sense(&trace, &sensing, &attack, &mut substream(0, "a")).unwrap();
        assert_eq!(s.len(), 10);
        assert!(s.bits.iter().all(|&b| b == 1));
        assert!(s.attack_mask.iter().all(|&m| m == 1));
        assert!((0..s.len()).all(|k| s.corrupted(k)));
    }

    #[test]
    fn window_straddling_an_edge_senses_busy() {
        // OFF until 1.005 s, then ON: the window [1.0, 1.01] overlaps the ON part.
        let trace = ContinuousTrace {
            segments: vec![
                Segment {
                    state: ChannelState::Off,
                    duration: 1.005,
                },
                Segment {
                    state: ChannelState::On,
                    duration: 0.1,
                },
                Segment {
                    state: ChannelState::Off,
                    duration: 5.0,
                },
            ],
        };
        let sensing = SensingConfig {
            t_ob: 0.01,
            t_re: 0.24,
        };
        let s = sense(
            &trace,
            &sensing,
            &AttackConfig::NONE,
            &mut substream(0, "a"),
        )
        .unwrap();
        // Slots at 0.0, 0.25, 0.5, 0.75, 1.0, 1.25 ...
        assert_eq!(&s.bits[..6], &[0, 0, 0, 0, 1, 0]);
    }

    #[test]
    fn short_on_burst_inside_revisit_gap_is_missed() {
        let trace = ContinuousTrace {
            segments: vec![
                Segment {
                    state: ChannelState::Off,
                    duration: 0.1,
                },
                Segment {
                    state: ChannelState::On,
                    duration: 0.05,
                },
                Segment {
                    state: ChannelState::Off,
                    duration: 2.0,
                },
            ],
        };
        let sensing = SensingConfig {
            t_ob: 0.01,
            t_re: 0.24,
        };
        let s = sense(
            &trace,
            &sensing,
            &AttackConfig::NONE,
            &mut substream(0, "a"),
        )
        .unwrap();
        assert!(s.bits.iter().all(|&b| b == 0));
    }

    #[test]
    fn empty_or_short_trace_is_rejected() {
        let sensing = SensingConfig {
            t_ob: 0.01,
            t_re: 0.24,
        };
        let empty = ContinuousTrace { segments: vec![] };
        assert!(sense(
            &empty,
            &sensing,
            &AttackConfig::NONE,
            &mut substream(0, "a")
        )
        .is_err());
        let short = ContinuousTrace {
            segments: vec![Segment {
                state: ChannelState::On,
                duration: 0.001,
            }],
        };
        assert!(sense(
            &short,
            &sensing,
            &AttackConfig::NONE,
            &mut substream(0, "a")
        )
        .is_err());
    }

    #[test]
    fn csv_header_and_rows() {
        let s = SensedSeries {
            bits: vec![0, 1],
            attack_mask: vec![0, 1],
            pu_bits: vec![0, 0],
            slot_period: 0.25,
        };
        let mut out = Vec::new();
        s.write_csv(&mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "slot,bit,attack_mask\n0,0,0\n1,1,1\n"
        );
    }
}
