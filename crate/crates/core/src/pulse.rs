//! Pulse-level gate vocabulary: modulation trees, pulses, NOPs and gate
//! definitions, plus their reduction to quantized pulselet words.

use std::sync::Arc;

use thiserror::Error;

use crate::config::{Param, Slot, CHANNELS, CLOCK_HZ, MIN_CYCLES, SLOTS, TONES};
use crate::spline::{
    fit_natural_cubic, quantize, quantize_lsb, to_forward_difference, CubicSegment,
    FixedPointFormat, SplineError,
};
use crate::word::{PulseletWord, WordMeta};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PulseError {
    #[error("duration of {cycles} cycles is below the {MIN_CYCLES}-cycle minimum")]
    DurationTooShort { cycles: u64 },
    #[error("pulse duration {0} s is not a positive finite time")]
    InvalidDuration(f64),
    #[error("channel {0} does not exist")]
    InvalidChannel(u8),
    #[error("modulation list must not be empty")]
    EmptyModulation,
    #[error("spline needs at least two knots, got {0}")]
    TooFewKnots(usize),
    #[error("{slot}: {source}")]
    Quantization {
        slot: Slot,
        #[source]
        source: SplineError,
    },
}

/// Modulation of one parameter over a pulse (or over a share of it).
#[derive(Debug, Clone, PartialEq)]
pub enum ModulationNode {
    Scalar(f64),
    /// Stepwise updates, one per equal share of the duration.
    Discrete(Vec<f64>),
    /// Knots of a natural cubic spline spread evenly over the duration.
    Spline(Vec<f64>),
    /// Children each take an equal share of the duration.
    Mixed(Vec<ModulationNode>),
}

impl Default for ModulationNode {
    fn default() -> Self {
        ModulationNode::Scalar(0.0)
    }
}

impl ModulationNode {
    pub fn is_zero(&self) -> bool {
        matches!(self, ModulationNode::Scalar(v) if *v == 0.0)
    }

    /// Number of leaf segments the node flattens into.
    pub fn leaf_count(&self) -> usize {
        match self {
            ModulationNode::Scalar(_) => 1,
            ModulationNode::Discrete(v) => v.len(),
            ModulationNode::Spline(k) => k.len().saturating_sub(1),
            ModulationNode::Mixed(c) => c.iter().map(|n| n.leaf_count()).sum(),
        }
    }
}

/// What a flattened segment holds.
#[derive(Debug, Clone, PartialEq)]
pub enum SegmentKind {
    Scalar(f64),
    DiscreteStep(f64),
    SplineSegment {
        start: f64,
        end: f64,
        cubic: CubicSegment,
    },
}

impl SegmentKind {
    fn cubic(&self, cycles: u64) -> CubicSegment {
        match self {
            SegmentKind::Scalar(v) | SegmentKind::DiscreteStep(v) => {
                CubicSegment::constant(*v, cycles)
            }
            SegmentKind::SplineSegment { cubic, .. } => CubicSegment {
                cycles,
                ..cubic.clone()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub cycles: u64,
    pub kind: SegmentKind,
}

fn split_equal(total: u64, parts: usize) -> impl Iterator<Item = u64> {
    let parts = parts as u64;
    let base = total / parts;
    let rem = total % parts;
    (0..parts).map(move |i| if i + 1 == parts { base + rem } else { base })
}

/// Flattens a modulation tree over `duration_cycles`. Equal shares use
/// floor division and the final share absorbs the remainder.
pub fn flatten(node: &ModulationNode, duration_cycles: u64) -> Result<Vec<Segment>, PulseError> {
    let mut out = Vec::with_capacity(node.leaf_count());
    flatten_into(node, duration_cycles, &mut out)?;
    Ok(out)
}

fn flatten_into(
    node: &ModulationNode,
    cycles: u64,
    out: &mut Vec<Segment>,
) -> Result<(), PulseError> {
    let leaf = |cycles: u64, kind: SegmentKind| {
        if cycles < MIN_CYCLES {
            Err(PulseError::DurationTooShort { cycles })
        } else {
            Ok(Segment { cycles, kind })
        }
    };
    match node {
        ModulationNode::Scalar(v) => out.push(leaf(cycles, SegmentKind::Scalar(*v))?),
        ModulationNode::Discrete(values) => {
            if values.is_empty() {
                return Err(PulseError::EmptyModulation);
            }
            for (v, c) in values.iter().zip(split_equal(cycles, values.len())) {
                out.push(leaf(c, SegmentKind::DiscreteStep(*v))?);
            }
        }
        ModulationNode::Spline(knots) => {
            if knots.len() < 2 {
                return Err(PulseError::TooFewKnots(knots.len()));
            }
            let cubics = fit_natural_cubic(knots).expect("knot count checked");
            for (i, (cubic, c)) in cubics
                .into_iter()
                .zip(split_equal(cycles, knots.len() - 1))
                .enumerate()
            {
                out.push(leaf(
                    c,
                    SegmentKind::SplineSegment {
                        start: knots[i],
                        end: knots[i + 1],
                        cubic: CubicSegment { cycles: c, ..cubic },
                    },
                )?);
            }
        }
        ModulationNode::Mixed(children) => {
            if children.is_empty() {
                return Err(PulseError::EmptyModulation);
            }
            for (child, c) in children.iter().zip(split_equal(cycles, children.len())) {
                flatten_into(child, c, out)?;
            }
        }
    }
    Ok(())
}

/// Converts seconds to update-clock cycles.
pub fn quantize_duration(seconds: f64) -> Result<u64, PulseError> {
    if !(seconds.is_finite() && seconds > 0.0) {
        return Err(PulseError::InvalidDuration(seconds));
    }
    let cycles = (seconds * CLOCK_HZ).round() as u64;
    if cycles < MIN_CYCLES {
        return Err(PulseError::DurationTooShort { cycles });
    }
    Ok(cycles)
}

pub fn cycles_to_seconds(cycles: u64) -> f64 {
    cycles as f64 / CLOCK_HZ
}

/// Pulse attributes. `sync` and `wait_trigger` land on the first word of
/// each slot; the remaining flags are replicated onto every word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct PulseMetadata {
    pub sync: bool,
    pub wait_trigger: bool,
    pub feedforward: bool,
    /// Bit t applies the frame accumulator to tone t.
    pub frame_apply_mask: u8,
    /// Bit t negates the frame contribution on tone t.
    pub frame_invert_mask: u8,
    /// The pulse's own output ignores the frame rotation it carries.
    pub frame_apply_at_end: bool,
}

impl PulseMetadata {
    pub fn to_byte(&self) -> u8 {
        (self.sync as u8)
            | (self.wait_trigger as u8) << 1
            | (self.feedforward as u8) << 2
            | (self.frame_apply_mask & 0b11) << 3
            | (self.frame_invert_mask & 0b11) << 5
            | (self.frame_apply_at_end as u8) << 7
    }

    pub fn from_byte(b: u8) -> PulseMetadata {
        PulseMetadata {
            sync: b & 1 == 1,
            wait_trigger: b >> 1 & 1 == 1,
            feedforward: b >> 2 & 1 == 1,
            frame_apply_mask: b >> 3 & 0b11,
            frame_invert_mask: b >> 5 & 0b11,
            frame_apply_at_end: b >> 7 & 1 == 1,
        }
    }
}

/// One pulse on one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Pulse {
    pub channel: u8,
    /// Seconds.
    pub duration: f64,
    /// Indexed by [`Slot::index`].
    pub slots: [ModulationNode; SLOTS],
    pub metadata: PulseMetadata,
    pub mutation_id: Option<u64>,
}

impl Pulse {
    pub fn new(channel: u8, duration: f64) -> Pulse {
        Pulse {
            channel,
            duration,
            slots: Default::default(),
            metadata: PulseMetadata::default(),
            mutation_id: None,
        }
    }

    pub fn with_cycles(channel: u8, cycles: u64) -> Pulse {
        Pulse::new(channel, cycles_to_seconds(cycles))
    }

    pub fn set(mut self, param: Param, tone: u8, node: ModulationNode) -> Pulse {
        self.slots[Slot::new(param, tone).index()] = node;
        self
    }

    pub fn meta(mut self, metadata: PulseMetadata) -> Pulse {
        self.metadata = metadata;
        self
    }

    pub fn mutation(mut self, id: u64) -> Pulse {
        self.mutation_id = Some(id);
        self
    }

    pub fn slot(&self, param: Param, tone: u8) -> &ModulationNode {
        &self.slots[Slot::new(param, tone).index()]
    }

    pub fn cycles(&self) -> Result<u64, PulseError> {
        quantize_duration(self.duration)
    }

    pub fn is_nop(&self) -> bool {
        self.slots.iter().all(ModulationNode::is_zero)
            && self.metadata == PulseMetadata::default()
    }
}

/// A NOP: channel and duration only.
pub fn nop(channel: u8, cycles: u64) -> Result<Pulse, PulseError> {
    if cycles < MIN_CYCLES {
        return Err(PulseError::DurationTooShort { cycles });
    }
    if channel as usize >= CHANNELS {
        return Err(PulseError::InvalidChannel(channel));
    }
    Ok(Pulse::with_cycles(channel, cycles))
}

/// Gate definition produced by a gate provider.
#[derive(Debug, Clone, PartialEq)]
pub struct GateDefinition {
    pub name: String,
    pub args: Vec<num_rational::Rational64>,
    pub pulses: Vec<Pulse>,
}

impl GateDefinition {
    /// Per-channel durations in cycles (pulses on one channel run back to back).
    pub fn channel_cycles(&self) -> Result<[u64; CHANNELS], PulseError> {
        let mut out = [0u64; CHANNELS];
        for p in &self.pulses {
            if p.channel as usize >= CHANNELS {
                return Err(PulseError::InvalidChannel(p.channel));
            }
            out[p.channel as usize] += p.cycles()?;
        }
        Ok(out)
    }

    /// Checks pulse-level invariants and returns every violation.
    pub fn validate(&self) -> Vec<PulseError> {
        let mut errors = Vec::new();
        for p in &self.pulses {
            if p.channel as usize >= CHANNELS {
                errors.push(PulseError::InvalidChannel(p.channel));
                continue;
            }
            match p.cycles() {
                Ok(cycles) => {
                    for (i, node) in p.slots.iter().enumerate() {
                        if let Err(e) = flatten(node, cycles) {
                            let _ = i;
                            errors.push(e);
                        }
                    }
                }
                Err(e) => errors.push(e),
            }
        }
        errors
    }

    /// Strict check that every populated channel has the same total duration.
    pub fn check_symmetric(&self) -> Result<(), (u8, u64, u64)> {
        let cycles = self.channel_cycles().map_err(|_| (0, 0, 0))?;
        let mut reference: Option<(u8, u64)> = None;
        for (ch, &c) in cycles.iter().enumerate() {
            if c == 0 {
                continue;
            }
            match reference {
                None => reference = Some((ch as u8, c)),
                Some((_, r)) if r != c => return Err((ch as u8, r, c)),
                _ => {}
            }
        }
        Ok(())
    }

    /// Sorted by channel, preserving same-channel order.
    pub fn canonicalized(&self) -> GateDefinition {
        let mut pulses = self.pulses.clone();
        pulses.sort_by_key(|p| p.channel);
        GateDefinition {
            name: self.name.clone(),
            args: self.args.clone(),
            pulses,
        }
    }
}

/// Quantized words of one pulse, one list per slot.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PulseWords {
    pub channel: u8,
    pub cycles: u64,
    pub slots: [Vec<PulseletWord>; SLOTS],
    pub mutation_id: Option<u64>,
}

pub type PulseRef = Arc<PulseWords>;

impl PulseWords {
    pub fn word_count(&self) -> usize {
        self.slots.iter().map(Vec::len).sum()
    }
}

/// Reduces a pulse to quantized pulselet words.
///
/// Frame-rotation slots are emitted relative to what earlier words of the
/// same pulse have already committed, so the accumulator ends the pulse at
/// the slot's final value and each word's start is corrected for the
/// quantization of its predecessors.
pub fn quantize_pulse(pulse: &Pulse) -> Result<PulseWords, PulseError> {
    if pulse.channel as usize >= CHANNELS {
        return Err(PulseError::InvalidChannel(pulse.channel));
    }
    let cycles = pulse.cycles()?;
    let mut slots: [Vec<PulseletWord>; SLOTS] = Default::default();
    for slot in Slot::all() {
        let segments = flatten(&pulse.slots[slot.index()], cycles)?;
        let qerr = |source| PulseError::Quantization { slot, source };
        let mut words = Vec::with_capacity(segments.len());
        let mut committed: i64 = 0;
        let fmt = FixedPointFormat::of(slot.param);
        for (i, seg) in segments.iter().enumerate() {
            let cubic = seg.kind.cubic(seg.cycles);
            let fd = if slot.param == Param::Frm {
                let mut rel = to_forward_difference(&cubic.scaled(1.0 / fmt.lsb));
                rel.u0 -= committed as f64;
                let fd = quantize_lsb(&rel, slot.param).map_err(qerr)?;
                let end = fd.value_at(fd.cycles).map_err(qerr)?;
                committed = committed.wrapping_add(end as i64);
                fd
            } else {
                quantize(&to_forward_difference(&cubic), slot.param).map_err(qerr)?
            };
            let first = i == 0;
            let md = &pulse.metadata;
            let meta = WordMeta {
                channel: pulse.channel,
                param: slot.param as u8,
                tone: slot.tone,
                wait_trigger: first && md.wait_trigger,
                sync: first && md.sync,
                feedforward: md.feedforward,
                frame_apply_mask: md.frame_apply_mask,
                frame_invert_mask: md.frame_invert_mask,
                frame_apply_at_end: md.frame_apply_at_end,
                coef_shift: 0,
            };
            words.push(PulseletWord::from_fd(&fd, meta));
        }
        slots[slot.index()] = words;
    }
    Ok(PulseWords {
        channel: pulse.channel,
        cycles,
        slots,
        mutation_id: pulse.mutation_id,
    })
}

/// Quantized NOP words for padding.
pub fn nop_words(channel: u8, cycles: u64) -> Result<PulseWords, PulseError> {
    quantize_pulse(&nop(channel, cycles)?)
}

pub const fn tone_count() -> usize {
    TONES
}

#[cfg(test)]
mod tests {
    use super::*;

    fn durations(s: &[Segment]) -> Vec<u64> {
        s.iter().map(|s| s.cycles).collect()
    }

    #[test]
    fn scalar_flattens_to_one_segment() {
        let s = flatten(&ModulationNode::Scalar(0.5), 4096).unwrap();
        assert_eq!(
            s,
            vec![Segment {
                cycles: 4096,
                kind: SegmentKind::Scalar(0.5)
            }]
        );
    }

    #[test]
    fn discrete_remainder_goes_last() {
        let s = flatten(&ModulationNode::Discrete(vec![1.0, 2.0, 3.0, 4.0]), 4098).unwrap();
        assert_eq!(durations(&s), vec![1024, 1024, 1024, 1026]);
    }

    #[test]
    fn mixed_splits_evenly_then_recursively() {
        let node = ModulationNode::Mixed(vec![
            ModulationNode::Scalar(0.2),
            ModulationNode::Spline(vec![0.0, 0.5, 0.1]),
        ]);
        let s = flatten(&node, 4000).unwrap();
        assert_eq!(durations(&s), vec![2000, 1000, 1000]);
        assert!(matches!(s[0].kind, SegmentKind::Scalar(v) if v == 0.2));
        assert!(matches!(
            s[2].kind,
            SegmentKind::SplineSegment { start, end, .. } if start == 0.5 && end == 0.1
        ));
    }

    #[test]
    fn flatten_rejects_short_leaves() {
        let node = ModulationNode::Discrete(vec![0.0; 5]);
        assert_eq!(
            flatten(&node, 39),
            Err(PulseError::DurationTooShort { cycles: 7 })
        );
        assert!(flatten(&node, 40).is_ok());
    }

    #[test]
    fn empty_lists_rejected() {
        assert_eq!(
            flatten(&ModulationNode::Discrete(vec![]), 80),
            Err(PulseError::EmptyModulation)
        );
        assert_eq!(
            flatten(&ModulationNode::Spline(vec![1.0]), 80),
            Err(PulseError::TooFewKnots(1))
        );
    }

    #[test]
    fn duration_quantization() {
        assert_eq!(quantize_duration(10e-6).unwrap(), 4096);
        assert_eq!(quantize_duration(8.0 / 409.6e6).unwrap(), 8);
        assert_eq!(quantize_duration(200e-6).unwrap(), 81920);
        assert_eq!(
            quantize_duration(7.0 / 409.6e6),
            Err(PulseError::DurationTooShort { cycles: 7 })
        );
        assert!(quantize_duration(-1.0).is_err());
    }

    #[test]
    fn nop_shape() {
        let p = nop(3, 100).unwrap();
        assert!(p.is_nop());
        let w = quantize_pulse(&p).unwrap();
        assert_eq!(w.channel, 3);
        assert_eq!(w.word_count(), 8);
        for slot in &w.slots {
            assert_eq!(slot.len(), 1);
            assert_eq!(slot[0].duration, 100);
            assert_eq!(slot[0].fields, [0; 4]);
        }
        assert_eq!(nop(0, 7), Err(PulseError::DurationTooShort { cycles: 7 }));
        let minimal = nop(0, 8).unwrap();
        assert!((minimal.duration - 19.53125e-9).abs() < 1e-15);
    }

    #[test]
    fn sync_lands_on_first_word_only() {
        let p = Pulse::with_cycles(1, 64)
            .set(Param::Amp, 0, ModulationNode::Discrete(vec![0.1, 0.2]))
            .meta(PulseMetadata {
                sync: true,
                feedforward: true,
                ..Default::default()
            });
        let w = quantize_pulse(&p).unwrap();
        let amp = &w.slots[Slot::new(Param::Amp, 0).index()];
        assert!(amp[0].meta.sync && !amp[1].meta.sync);
        assert!(amp[0].meta.feedforward && amp[1].meta.feedforward);
    }

    #[test]
    fn frame_words_commit_final_value() {
        let knots = vec![0.0, 0.3, 0.9, 1.2, 1.25];
        let p = Pulse::with_cycles(0, 400).set(Param::Frm, 0, ModulationNode::Spline(knots));
        let w = quantize_pulse(&p).unwrap();
        let frm = &w.slots[Slot::new(Param::Frm, 0).index()];
        let mut total: u64 = 0;
        for word in frm {
            total = (total + word.fd().value_at(word.duration).unwrap()) & crate::config::WORD_MASK;
        }
        let want = FixedPointFormat::of(Param::Frm).encode(1.25).unwrap();
        let diff = (total as i64 - want as i64).abs();
        assert!(diff <= 2, "diff {diff}");
    }
}
