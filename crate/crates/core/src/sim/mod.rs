//! Cycle-level model of the sequencer: bytecode walk, LUT decompression,
//! FIFO delivery and consumption, spline engines, DDS phase composition and
//! branch resolution.

pub mod measure;
pub mod trace;

use std::collections::VecDeque;
use std::io;

use thiserror::Error;

use crate::config::{Param, Slot, CHANNELS, SLOTS, TONES};
use crate::dds::{effective_phase, frame_multiplier, DdsChannel};
use crate::file::Program;
use crate::lut::bytecode::{resolve, BytecodeItem, Items};
use crate::lut::{ChannelLut, LutError};
use crate::sched::DEFAULT_FIFO_DEPTH;
use crate::spline::{Interpolator, SplineError};
use crate::word::{StoredWord, WordMeta};

pub use measure::{Fixed, Lines, MeasurementSource, Scripted, Seeded};
pub use trace::{
    BinarySink, CsvSink, DigestSink, EventKind, NullSink, ThreadedSink, TraceEvent, TraceParam,
    TraceRow, TraceSink, VecSink,
};

pub const DEFAULT_BRANCH_LATENCY: u64 = 20;

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub fifo_depth: usize,
    /// Cycles between a measurement and the first delivery of the chosen
    /// branch.
    pub branch_latency: u64,
    /// Emit value rows only on cycles divisible by this.
    pub decimation: u64,
    pub max_cycles: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            fifo_depth: DEFAULT_FIFO_DEPTH,
            branch_latency: DEFAULT_BRANCH_LATENCY,
            decimation: 1,
            max_cycles: u64::MAX,
        }
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("cycle {cycle}: FIFO underflow on channel {channel} {slot}")]
    FifoUnderflow { cycle: u64, channel: u8, slot: Slot },
    #[error("channel {channel}: no GLUT entry at address {address:#x}")]
    MissingGlutEntry { channel: u8, address: u16 },
    #[error("cycle {cycle}: delivery blocked before trigger release")]
    Deadlock { cycle: u64 },
    #[error("cycle {cycle}: measurement source exhausted")]
    MeasurementsExhausted { cycle: u64 },
    #[error("cycle {cycle}: channel {channel}: {source}")]
    Interpolation {
        cycle: u64,
        channel: u8,
        source: SplineError,
    },
    #[error("cycle limit {0} reached")]
    CycleLimit(u64),
    #[error(transparent)]
    Bytecode(#[from] LutError),
    #[error("trace output: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimSummary {
    /// Cycles simulated.
    pub cycles: u64,
    pub releases: Vec<u64>,
    /// (cycle of measurement, outcome) per resolved branch.
    pub branches: Vec<(u64, u32)>,
    pub words: u64,
    /// Fewest words waiting in each FIFO right after one of its pops.
    pub min_headroom: [[usize; SLOTS]; CHANNELS],
    pub final_dds: [DdsChannel; CHANNELS],
}

struct Active {
    interp: Interpolator,
    cycles: u64,
    elapsed: u64,
    meta: WordMeta,
}

struct Channel<'a> {
    index: u8,
    lut: &'a ChannelLut,
    cursor: Items<'a>,
    peek: Option<BytecodeItem>,
    pending: VecDeque<(u16, u16)>,
    fifos: [VecDeque<StoredWord>; SLOTS],
    engines: [Option<Active>; SLOTS],
    dds: DdsChannel,
    headroom: [usize; SLOTS],
}

impl<'a> Channel<'a> {
    fn advance_cursor(&mut self) -> Result<(), SimError> {
        self.peek = self.cursor.next().transpose()?;
        Ok(())
    }

    fn push_gate(&mut self, address: u16) -> Result<(), SimError> {
        let missing = SimError::MissingGlutEntry {
            channel: self.index,
            address,
        };
        let &(start, stop) = self.lut.glut.get(&address).ok_or(missing)?;
        self.pending.push_back((start, stop));
        Ok(())
    }

    fn refill(&mut self) -> Result<(), SimError> {
        while self.pending.is_empty() {
            match self.peek {
                Some(BytecodeItem::Gate(id)) => {
                    self.push_gate(id)?;
                    self.advance_cursor()?;
                }
                _ => break,
            }
        }
        Ok(())
    }

    fn resolve_branch(&mut self, outcome: u32, shift: u32) -> Result<(), SimError> {
        if let Some(BytecodeItem::Branch(bases)) = self.peek.take() {
            for b in bases {
                self.push_gate(resolve(b, outcome, shift))?;
            }
            self.advance_cursor()?;
        }
        Ok(())
    }

    fn head(&self) -> Result<Option<StoredWord>, SimError> {
        let Some(&(pos, _)) = self.pending.front() else {
            return Ok(None);
        };
        let dangling = LutError::Malformed {
            offset: pos as usize,
            reason: format!("channel {}: dangling MLUT entry", self.index),
        };
        let addr = *self.lut.mlut.get(pos as usize).ok_or(dangling.clone())?;
        Ok(Some(*self.lut.plut.get(addr as usize).ok_or(dangling)?))
    }

    fn blocked(&self, depth: usize) -> Result<bool, SimError> {
        Ok(match self.head()? {
            Some(w) => self.fifos[w.slot().index()].len() >= depth,
            None => false,
        })
    }

    fn deliver(&mut self, depth: usize) -> Result<(), SimError> {
        self.refill()?;
        if let Some(w) = self.head()? {
            let fifo = &mut self.fifos[w.slot().index()];
            if fifo.len() < depth {
                fifo.push_back(w);
                let front = self.pending.front_mut().unwrap();
                if front.0 == front.1 {
                    self.pending.pop_front();
                } else {
                    front.0 += 1;
                }
            }
        }
        Ok(())
    }

    fn has_more(&self) -> bool {
        !self.pending.is_empty() || matches!(self.peek, Some(BytecodeItem::Gate(_)))
    }

    fn drained(&self) -> bool {
        self.pending.is_empty()
            && self.fifos.iter().all(VecDeque::is_empty)
            && self.engines.iter().all(Option::is_none)
    }

    fn idle(&self) -> bool {
        self.engines.iter().all(Option::is_none)
    }
}

/// Runs a program to completion.
pub fn run(
    program: &Program,
    config: &SimConfig,
    measurements: &mut dyn MeasurementSource,
    sink: &mut dyn TraceSink,
) -> Result<SimSummary, SimError> {
    let (result, summary) = run_inner(program, config, measurements, sink);
    result?;
    sink.finish()?;
    Ok(summary)
}

fn run_inner(
    program: &Program,
    config: &SimConfig,
    measurements: &mut dyn MeasurementSource,
    sink: &mut dyn TraceSink,
) -> (Result<(), SimError>, SimSummary) {
    let mut summary = SimSummary {
        cycles: 0,
        releases: Vec::new(),
        branches: Vec::new(),
        words: 0,
        min_headroom: [[usize::MAX; SLOTS]; CHANNELS],
        final_dds: [DdsChannel::default(); CHANNELS],
    };
    let mut channels: Vec<Channel> = program
        .image
        .channels
        .iter()
        .enumerate()
        .map(|(i, lut)| Channel {
            index: i as u8,
            lut,
            cursor: program.bytecode.items(),
            peek: None,
            pending: VecDeque::new(),
            fifos: Default::default(),
            engines: Default::default(),
            dds: DdsChannel::default(),
            headroom: [usize::MAX; SLOTS],
        })
        .collect();
    let result = simulate(&mut channels, program, config, measurements, sink, &mut summary);
    for (i, ch) in channels.iter().enumerate() {
        summary.final_dds[i] = ch.dds;
        summary.min_headroom[i] = ch.headroom.map(|h| if h == usize::MAX { 0 } else { h });
    }
    (result, summary)
}

fn simulate(
    channels: &mut [Channel],
    program: &Program,
    config: &SimConfig,
    measurements: &mut dyn MeasurementSource,
    sink: &mut dyn TraceSink,
    summary: &mut SimSummary,
) -> Result<(), SimError> {
    let depth = config.fifo_depth.max(1);
    let decimation = config.decimation.max(1);
    let shift = program.meta.branch_shift;
    for ch in channels.iter_mut() {
        ch.advance_cursor()?;
    }
    let mut running = false;
    let mut resume: Option<(u64, u32)> = None;
    let mut t: u64 = 0;
    loop {
        summary.cycles = t;
        if t >= config.max_cycles {
            return Err(SimError::CycleLimit(t));
        }
        if let Some((at, outcome)) = resume {
            if at == t {
                for ch in channels.iter_mut() {
                    ch.resolve_branch(outcome, shift)?;
                }
                resume = None;
            }
        }
        for ch in channels.iter_mut() {
            ch.deliver(depth)?;
        }
        if !running {
            let full = channels
                .iter()
                .all(|c| c.fifos.iter().all(|f| !f.is_empty()));
            if full {
                running = true;
                summary.releases.push(t);
                sink.event(&TraceEvent {
                    cycle: t,
                    channel: None,
                    kind: EventKind::Release,
                })?;
            } else if resume.is_none() {
                if channels.iter().all(Channel::drained) {
                    if channels.iter().all(|c| c.peek.is_none()) {
                        break;
                    }
                    if channels
                        .iter()
                        .all(|c| matches!(c.peek, Some(BytecodeItem::Branch(_))))
                    {
                        let outcome = measurements
                            .measure(program.meta.outcome_bits)
                            .ok_or(SimError::MeasurementsExhausted { cycle: t })?;
                        summary.branches.push((t, outcome));
                        sink.event(&TraceEvent {
                            cycle: t,
                            channel: None,
                            kind: EventKind::Branch { outcome },
                        })?;
                        resume = Some((t + config.branch_latency.max(1), outcome));
                    }
                } else {
                    for c in channels.iter() {
                        let starved = c.fifos.iter().any(VecDeque::is_empty);
                        if starved && (c.blocked(depth)? || c.pending.is_empty()) {
                            return Err(SimError::Deadlock { cycle: t });
                        }
                    }
                }
            }
        }
        if running {
            let emit = t.is_multiple_of(decimation);
            let mut any = false;
            for ch in channels.iter_mut() {
                any |= consume(ch, t, emit, sink, summary)?;
            }
            if !any {
                running = false;
            }
        }
        for ch in channels.iter_mut() {
            ch.dds.advance();
        }
        t += 1;
    }
    Ok(())
}

fn finish_word(ch: &mut Channel, s: usize, t: u64) -> Result<(), SimError> {
    if let Some(a) = &ch.engines[s] {
        if a.elapsed >= a.cycles {
            if a.meta.slot().param == Param::Frm {
                let total = a.interp.output(a.cycles).map_err(|source| SimError::Interpolation {
                    cycle: t,
                    channel: ch.index,
                    source,
                })?;
                ch.dds.commit_frame(total);
            }
            ch.engines[s] = None;
        }
    }
    Ok(())
}

/// One cycle of the engines of a channel. Returns whether any engine is
/// still playing.
fn consume(
    ch: &mut Channel,
    t: u64,
    emit: bool,
    sink: &mut dyn TraceSink,
    summary: &mut SimSummary,
) -> Result<bool, SimError> {
    let err = |channel: u8| move |source| SimError::Interpolation {
        cycle: t,
        channel,
        source,
    };
    for s in 0..SLOTS {
        finish_word(ch, s, t)?;
        if ch.engines[s].is_some() {
            continue;
        }
        match ch.fifos[s].pop_front() {
            Some(w) => {
                ch.headroom[s] = ch.headroom[s].min(ch.fifos[s].len());
                summary.words += 1;
                let word = w.expand(ch.index);
                let fd = word.fd();
                let interp = Interpolator::new(&fd);
                let slot = Slot::from_index(s);
                if slot.param == Param::Frq && word.meta.sync {
                    let ftw = interp.output(0).map_err(err(ch.index))?;
                    ch.dds.sync(slot.tone as usize, t, ftw);
                    sink.event(&TraceEvent {
                        cycle: t,
                        channel: Some(ch.index),
                        kind: EventKind::Sync { tone: slot.tone },
                    })?;
                }
                ch.engines[s] = Some(Active {
                    interp,
                    cycles: fd.cycles,
                    elapsed: 0,
                    meta: word.meta,
                });
            }
            None if ch.has_more() => {
                sink.event(&TraceEvent {
                    cycle: t,
                    channel: Some(ch.index),
                    kind: EventKind::Underflow { slot: s as u8 },
                })?;
                return Err(SimError::FifoUnderflow {
                    cycle: t,
                    channel: ch.index,
                    slot: Slot::from_index(s),
                });
            }
            None => {}
        }
    }
    if ch.idle() {
        return Ok(false);
    }
    let mut out = [None; SLOTS];
    for (s, e) in ch.engines.iter().enumerate() {
        if let Some(a) = e {
            out[s] = Some(a.interp.output(a.elapsed).map_err(err(ch.index))?);
        }
    }
    let mut applied = ch.dds.frame;
    for tone in 0..TONES {
        let s = Slot::new(Param::Frq, tone as u8).index();
        if let Some(v) = out[s] {
            ch.dds.ftw[tone] = v;
        }
        let f = Slot::new(Param::Frm, tone as u8).index();
        if let (Some(v), Some(a)) = (out[f], &ch.engines[f]) {
            if !a.meta.frame_apply_at_end {
                applied = applied.wrapping_add(v);
            }
        }
    }
    if emit {
        for (s, v) in out.iter().enumerate() {
            if let Some(v) = v {
                let slot = Slot::from_index(s);
                sink.value(&TraceRow {
                    cycle: t,
                    channel: ch.index,
                    tone: slot.tone,
                    param: TraceParam::Slot(slot.param),
                    value: *v,
                })?;
            }
        }
        for tone in 0..TONES {
            let p = Slot::new(Param::Phs, tone as u8).index();
            if let (Some(offset), Some(a)) = (out[p], &ch.engines[p]) {
                let m = frame_multiplier(a.meta.frame_apply_mask, a.meta.frame_invert_mask, tone as u8);
                sink.value(&TraceRow {
                    cycle: t,
                    channel: ch.index,
                    tone: tone as u8,
                    param: TraceParam::Phase,
                    value: effective_phase(ch.dds.phase[tone], offset, applied, m),
                })?;
            }
        }
    }
    for a in ch.engines.iter_mut().flatten() {
        a.interp.step();
        a.elapsed += 1;
    }
    Ok(true)
}

/// Result of a dry run used to check FIFO safety.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScheduleReport {
    pub cycles: u64,
    pub releases: Vec<u64>,
    pub underflow: Option<(u64, u8, Slot)>,
    pub deadlock: Option<u64>,
    pub min_headroom: [[usize; SLOTS]; CHANNELS],
}

impl ScheduleReport {
    pub fn clean(&self) -> bool {
        self.underflow.is_none() && self.deadlock.is_none()
    }
}

/// Replays the program without recording a trace and reports FIFO health
/// instead of failing on the first fault.
pub fn verify_schedule(
    program: &Program,
    config: &SimConfig,
    measurements: &mut dyn MeasurementSource,
) -> Result<ScheduleReport, SimError> {
    let (result, summary) = run_inner(program, config, measurements, &mut NullSink);
    let mut report = ScheduleReport {
        cycles: summary.cycles,
        releases: summary.releases,
        underflow: None,
        deadlock: None,
        min_headroom: summary.min_headroom,
    };
    match result {
        Ok(()) => {}
        Err(SimError::FifoUnderflow {
            cycle,
            channel,
            slot,
        }) => report.underflow = Some((cycle, channel, slot)),
        Err(SimError::Deadlock { cycle }) => report.deadlock = Some(cycle),
        Err(e) => return Err(e),
    }
    Ok(report)
}

/// Decompressed serial word stream of one channel, taking `outcomes[k]` at
/// the k-th branch encountered (0 once the list runs out).
pub fn expand_channel(program: &Program, channel: usize, outcomes: &[u32]) -> Result<Vec<StoredWord>, SimError> {
    let lut = &program.image.channels[channel];
    let mut out = Vec::new();
    let mut push = |address: u16| -> Result<(), SimError> {
        lut.for_each_word(address, |w| out.push(*w))
            .ok_or(SimError::MissingGlutEntry {
                channel: channel as u8,
                address,
            })
    };
    let mut k = 0;
    for item in program.bytecode.items() {
        match item? {
            BytecodeItem::Gate(id) => push(id)?,
            BytecodeItem::Branch(bases) => {
                let o = outcomes.get(k).copied().unwrap_or(0);
                k += 1;
                for b in bases {
                    push(resolve(b, o, program.meta.branch_shift))?;
                }
            }
        }
    }
    Ok(out)
}
