//! Gate-slice algebra: merging parallel gates, NOP padding, slice interning
//! and the serial word order that keeps every FIFO fed.

use std::collections::HashMap;
use std::sync::Arc;

use thiserror::Error;

use crate::config::{Slot, CHANNELS, GLUT_STREAM_CAPACITY, MIN_CYCLES, SLOTS};
use crate::lut::LutError;
use crate::pulse::{nop_words, PulseError, PulseRef, PulseWords};
use crate::word::PulseletWord;

pub const DEFAULT_FIFO_DEPTH: usize = 16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SchedError {
    #[error("channel {channel}: merged gates differ at word {word} of {slot}")]
    MergeConflict { channel: u8, slot: Slot, word: usize },
    #[error("{slot} word {word} is needed at cycle {deadline} but cannot be delivered before cycle {earliest}")]
    UnschedulableAsymmetry {
        slot: Slot,
        word: usize,
        deadline: u64,
        earliest: u64,
    },
    #[error(transparent)]
    Pulse(#[from] PulseError),
}

/// Per-channel pulses of one sequential step, before padding.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GateSlice {
    pub channels: [Option<Vec<PulseRef>>; CHANNELS],
}

impl GateSlice {
    pub fn from_pulses(pulses: impl IntoIterator<Item = PulseRef>) -> GateSlice {
        let mut s = GateSlice::default();
        for p in pulses {
            s.channels[p.channel as usize]
                .get_or_insert_with(Vec::new)
                .push(p);
        }
        s
    }

    pub fn channel_cycles(&self, channel: usize) -> u64 {
        self.channels[channel]
            .as_ref()
            .map_or(0, |ps| ps.iter().map(|p| p.cycles).sum())
    }

    pub fn duration(&self) -> u64 {
        (0..CHANNELS).map(|c| self.channel_cycles(c)).max().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.channels.iter().all(Option::is_none)
    }
}

/// Concatenated words of each slot over a run of back-to-back pulses.
pub fn slot_streams(pulses: &[PulseRef]) -> [Vec<PulseletWord>; SLOTS] {
    let mut out: [Vec<PulseletWord>; SLOTS] = Default::default();
    for p in pulses {
        for (s, words) in p.slots.iter().enumerate() {
            out[s].extend_from_slice(words);
        }
    }
    out
}

fn is_prefix_word(short: &PulseletWord, long: &PulseletWord) -> bool {
    short.fd().is_constant()
        && long.fd().is_constant()
        && short.fields == long.fields
        && short.meta == long.meta
        && short.duration < long.duration
}

fn compare_channel(channel: u8, a: &[PulseRef], b: &[PulseRef]) -> Result<bool, SchedError> {
    let da: u64 = a.iter().map(|p| p.cycles).sum();
    let db: u64 = b.iter().map(|p| p.cycles).sum();
    let (short, long) = if da <= db { (a, b) } else { (b, a) };
    let (ss, ls) = (slot_streams(short), slot_streams(long));
    for s in 0..SLOTS {
        let (sw, lw) = (&ss[s], &ls[s]);
        for (i, w) in sw.iter().enumerate() {
            let last = i + 1 == sw.len();
            match lw.get(i) {
                Some(l) if l == w => {}
                Some(l) if last && is_prefix_word(w, l) => {}
                _ => {
                    return Err(SchedError::MergeConflict {
                        channel,
                        slot: Slot::from_index(s),
                        word: i,
                    })
                }
            }
        }
    }
    Ok(da <= db)
}

/// Merges two unpadded slices. A channel populated in both must carry the
/// same words up to the shorter duration; the longer pulse list is kept.
pub fn merge(a: &GateSlice, b: &GateSlice) -> Result<GateSlice, SchedError> {
    let mut out = GateSlice::default();
    for ch in 0..CHANNELS {
        out.channels[ch] = match (&a.channels[ch], &b.channels[ch]) {
            (None, None) => None,
            (Some(x), None) | (None, Some(x)) => Some(x.clone()),
            (Some(x), Some(y)) => {
                if compare_channel(ch as u8, x, y)? {
                    Some(y.clone())
                } else {
                    Some(x.clone())
                }
            }
        };
    }
    Ok(out)
}

/// Every channel covers exactly `duration` cycles.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PaddedSlice {
    pub duration: u64,
    pub channels: [Vec<PulseRef>; CHANNELS],
}

impl PaddedSlice {
    pub fn unpadded(&self) -> GateSlice {
        GateSlice {
            channels: self.channels.clone().map(Some),
        }
    }

    pub fn slot_streams(&self, channel: usize) -> [Vec<PulseletWord>; SLOTS] {
        slot_streams(&self.channels[channel])
    }

    /// Channel words in FIFO delivery order.
    pub fn serial_words(&self, channel: usize) -> Vec<PulseletWord> {
        let streams = self.slot_streams(channel);
        fifo_order(&streams)
            .into_iter()
            .map(|(s, i)| streams[s][i])
            .collect()
    }

    pub fn mutation_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.channels
            .iter()
            .flatten()
            .filter_map(|p| p.mutation_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PadWarning {
    pub requested: u64,
    pub extended: u64,
}

/// Pads with trailing NOPs. A remainder shorter than the minimum pulse
/// length stretches the whole slice by the minimum.
pub fn pad(s: &GateSlice) -> Result<(PaddedSlice, Option<PadWarning>), SchedError> {
    let requested = s.duration();
    let short = (0..CHANNELS).any(|c| {
        let r = requested - s.channel_cycles(c);
        r > 0 && r < MIN_CYCLES
    });
    let duration = if requested < MIN_CYCLES {
        MIN_CYCLES
    } else if short {
        requested + MIN_CYCLES
    } else {
        requested
    };
    let warning = (duration != requested).then_some(PadWarning {
        requested,
        extended: duration,
    });
    let mut channels: [Vec<PulseRef>; CHANNELS] = Default::default();
    for (ch, out) in channels.iter_mut().enumerate() {
        let mut list = s.channels[ch].clone().unwrap_or_default();
        let r = duration - s.channel_cycles(ch);
        if r > 0 {
            list.push(Arc::new(nop_words(ch as u8, r)?));
        }
        *out = list;
    }
    Ok((PaddedSlice { duration, channels }, warning))
}

/// Earliest-deadline-first order over per-slot word lists: words sorted by
/// the cycle they start playing, ties broken by slot index. Returns
/// (slot, index) pairs.
pub fn fifo_order_by(durations: &[Vec<u64>]) -> Vec<(usize, usize)> {
    let mut keyed: Vec<(u64, usize, usize)> = Vec::new();
    for (s, ds) in durations.iter().enumerate() {
        let mut start = 0;
        for (i, d) in ds.iter().enumerate() {
            keyed.push((start, s, i));
            start += d;
        }
    }
    keyed.sort_unstable();
    keyed.into_iter().map(|(_, s, i)| (s, i)).collect()
}

pub fn fifo_order(streams: &[Vec<PulseletWord>; SLOTS]) -> Vec<(usize, usize)> {
    let durations: Vec<Vec<u64>> = streams
        .iter()
        .map(|ws| ws.iter().map(|w| w.duration).collect())
        .collect();
    fifo_order_by(&durations)
}

/// Start cycle (relative to release) of every word of a serial order.
fn start_cycles(order: &[(usize, u64)]) -> (Vec<u64>, Vec<usize>) {
    let mut next = [0u64; SLOTS];
    let mut count = [0usize; SLOTS];
    let mut starts = Vec::with_capacity(order.len());
    let mut index = Vec::with_capacity(order.len());
    for &(s, d) in order {
        starts.push(next[s]);
        index.push(count[s]);
        next[s] += d;
        count[s] += 1;
    }
    (starts, index)
}

/// Checks an order against unlimited-rate delivery: a word can enter its
/// FIFO once every earlier word of the order has and the word `depth`
/// places ahead of it in the same slot has started.
pub fn check_order(order: &[(usize, u64)], depth: usize) -> Result<(), SchedError> {
    let (starts, index) = start_cycles(order);
    let mut per_slot: Vec<Vec<u64>> = vec![Vec::new(); SLOTS];
    let mut earliest = 0u64;
    for (k, &(s, _)) in order.iter().enumerate() {
        let j = index[k];
        if j >= depth {
            earliest = earliest.max(per_slot[s][j - depth] + 1);
        }
        if earliest > starts[k] {
            return Err(SchedError::UnschedulableAsymmetry {
                slot: Slot::from_index(s),
                word: j,
                deadline: starts[k],
                earliest,
            });
        }
        per_slot[s].push(starts[k]);
    }
    Ok(())
}

/// Outcome of replaying a serial order through one channel's FIFOs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayReport {
    /// Cycle at which all FIFOs first held a word.
    pub release: Option<u64>,
    /// First underflow as (cycle, slot, word index within the slot).
    pub underflow: Option<(u64, usize, usize)>,
    /// Fewest words left waiting in each FIFO right after one of its pops.
    pub min_headroom: [usize; SLOTS],
    pub deadlock: bool,
    pub end: u64,
}

/// Cycle-level replay of one channel: one word delivered per cycle in
/// serial order (blocked while the head word's FIFO is full), delivery
/// before consumption within a cycle, engines released together once every
/// populated FIFO holds a word.
pub fn replay(order: &[(usize, u64)], depth: usize) -> ReplayReport {
    assert!(depth >= 1);
    let mut expected = [0usize; SLOTS];
    for &(s, _) in order {
        expected[s] += 1;
    }
    let mut fifo: [std::collections::VecDeque<u64>; SLOTS] = Default::default();
    let mut popped = [0usize; SLOTS];
    let mut busy_until = [0u64; SLOTS];
    let mut min_headroom = [usize::MAX; SLOTS];
    let mut next = 0;
    let mut release = None;
    let mut t = 0u64;
    loop {
        if let Some(&(s, d)) = order.get(next) {
            if fifo[s].len() < depth {
                fifo[s].push_back(d);
                next += 1;
            }
        }
        if release.is_none() {
            let ready = (0..SLOTS).all(|s| expected[s] == 0 || !fifo[s].is_empty());
            if ready && next > 0 {
                release = Some(t);
            } else if next < order.len() && fifo[order[next].0].len() >= depth {
                return ReplayReport {
                    release: None,
                    underflow: None,
                    min_headroom,
                    deadlock: true,
                    end: t,
                };
            }
        }
        if release.is_some() {
            let mut active = false;
            for s in 0..SLOTS {
                if busy_until[s] > t {
                    active = true;
                    continue;
                }
                if popped[s] == expected[s] {
                    continue;
                }
                match fifo[s].pop_front() {
                    Some(d) => {
                        popped[s] += 1;
                        busy_until[s] = t + d;
                        min_headroom[s] = min_headroom[s].min(fifo[s].len());
                        active = true;
                    }
                    None => {
                        return ReplayReport {
                            release,
                            underflow: Some((t, s, popped[s])),
                            min_headroom,
                            deadlock: false,
                            end: t,
                        }
                    }
                }
            }
            if !active {
                break;
            }
        }
        if order.is_empty() {
            break;
        }
        t += 1;
    }
    for h in &mut min_headroom {
        if *h == usize::MAX {
            *h = 0;
        }
    }
    ReplayReport {
        release,
        underflow: None,
        min_headroom,
        deadlock: false,
        end: t,
    }
}

/// Serial (slot, duration) order of a padded slice channel.
pub fn serial_durations(streams: &[Vec<PulseletWord>; SLOTS]) -> Vec<(usize, u64)> {
    fifo_order(streams)
        .into_iter()
        .map(|(s, i)| (s, streams[s][i].duration))
        .collect()
}

/// Interns padded slices; each distinct slice receives the next GLUT id.
#[derive(Debug, Default)]
pub struct SliceTable {
    slices: Vec<PaddedSlice>,
    index: HashMap<PaddedSlice, u16>,
}

impl SliceTable {
    pub fn new() -> SliceTable {
        SliceTable::default()
    }

    pub fn intern(&mut self, s: PaddedSlice) -> Result<u16, LutError> {
        if let Some(&id) = self.index.get(&s) {
            return Ok(id);
        }
        if self.slices.len() >= GLUT_STREAM_CAPACITY {
            return Err(LutError::GlutCapacityExceeded {
                needed: self.slices.len() + 1,
                available: GLUT_STREAM_CAPACITY,
            });
        }
        let id = self.slices.len() as u16;
        self.index.insert(s.clone(), id);
        self.slices.push(s);
        Ok(id)
    }

    /// Swaps the contents behind `id`, keeping the id stable.
    pub fn replace(&mut self, id: u16, s: PaddedSlice) {
        let old = std::mem::replace(&mut self.slices[id as usize], s.clone());
        if self.index.get(&old) == Some(&id) {
            self.index.remove(&old);
        }
        self.index.entry(s).or_insert(id);
    }

    pub fn get(&self, id: u16) -> &PaddedSlice {
        &self.slices[id as usize]
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u16, &PaddedSlice)> {
        self.slices.iter().enumerate().map(|(i, s)| (i as u16, s))
    }
}

/// Quantized pulses of a slice built directly from word lists; handy for
/// tests and synthetic workloads.
pub fn pulse_ref(words: PulseWords) -> PulseRef {
    Arc::new(words)
}
