//! Lookup-table compression: per-channel PLUT/MLUT/GLUT images, the pulse
//! managers that build them, and their binary encodings.

pub mod bytecode;
pub mod program;

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use crate::config::{CHANNELS, GLUT_CAPACITY, MLUT_CAPACITY, PLUT_CAPACITY};
use crate::word::{PulseletWord, StoredWord};

pub use bytecode::{resolve_branch, Bytecode, BytecodeItem, PacketKind};
pub use program::{decode_programming, encode_programming, encode_writes, Write};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LutError {
    #[error("channel {channel}: PLUT capacity of {PLUT_CAPACITY} words exceeded")]
    PlutCapacityExceeded { channel: u8 },
    #[error("channel {channel}: MLUT capacity of {MLUT_CAPACITY} entries exceeded")]
    MlutCapacityExceeded { channel: u8 },
    #[error("GLUT capacity exceeded: {needed} gate identifiers needed, {available} available")]
    GlutCapacityExceeded { needed: usize, available: usize },
    #[error("channel {channel}: PLUT word {address} is shared with gates outside the mutation set")]
    SharedDataConflict { channel: u8, address: u16 },
    #[error("malformed stream at byte {offset}: {reason}")]
    Malformed { offset: usize, reason: String },
}

/// GLUT bounds: first and last MLUT index of a gate, inclusive.
pub type Bounds = (u16, u16);

/// Memory contents of one channel's lookup tables.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ChannelLut {
    pub plut: Vec<StoredWord>,
    pub mlut: Vec<u16>,
    pub glut: BTreeMap<u16, Bounds>,
}

impl ChannelLut {
    /// Expands one GLUT entry to its stored words.
    pub fn decompress(&self, glut_addr: u16) -> Option<Vec<StoredWord>> {
        let (start, stop) = *self.glut.get(&glut_addr)?;
        let range = self.mlut.get(start as usize..=stop as usize)?;
        range
            .iter()
            .map(|&a| self.plut.get(a as usize).copied())
            .collect()
    }

    /// Same as [`ChannelLut::decompress`] without allocating; `None` on a
    /// missing entry or dangling address.
    pub fn for_each_word(&self, glut_addr: u16, mut f: impl FnMut(&StoredWord)) -> Option<()> {
        let (start, stop) = *self.glut.get(&glut_addr)?;
        for &a in self.mlut.get(start as usize..=stop as usize)? {
            f(self.plut.get(a as usize)?);
        }
        Some(())
    }

    /// For each PLUT address, the GLUT entries whose ranges reference it.
    pub fn plut_users(&self) -> Vec<Vec<u16>> {
        let mut users = vec![Vec::new(); self.plut.len()];
        for (&id, &(start, stop)) in &self.glut {
            for &a in &self.mlut[start as usize..=stop as usize] {
                let u: &mut Vec<u16> = &mut users[a as usize];
                if u.last() != Some(&id) {
                    u.push(id);
                }
            }
        }
        users
    }

    /// For each MLUT index, the GLUT entries whose ranges cover it.
    pub fn mlut_users(&self) -> Vec<Vec<u16>> {
        let mut users = vec![Vec::new(); self.mlut.len()];
        for (&id, &(start, stop)) in &self.glut {
            for u in &mut users[start as usize..=stop as usize] {
                u.push(id);
            }
        }
        users
    }
}

/// LUT contents of every channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LutImage {
    pub channels: Vec<ChannelLut>,
}

impl Default for LutImage {
    fn default() -> Self {
        LutImage {
            channels: vec![ChannelLut::default(); CHANNELS],
        }
    }
}

impl LutImage {
    /// Applies decoded programming writes in order.
    pub fn apply(&mut self, writes: &[Write]) {
        for w in writes {
            let ch = &mut self.channels[w.channel() as usize];
            match w {
                Write::Plut { address, word, .. } => {
                    let a = *address as usize;
                    if ch.plut.len() <= a {
                        ch.plut.resize(a + 1, StoredWord::default());
                    }
                    ch.plut[a] = *word;
                }
                Write::Mlut {
                    address, entries, ..
                } => {
                    let end = *address as usize + entries.len();
                    if ch.mlut.len() < end {
                        ch.mlut.resize(end, 0);
                    }
                    ch.mlut[*address as usize..end].copy_from_slice(entries);
                }
                Write::Glut { id, bounds, .. } => {
                    match bounds {
                        Some(b) => ch.glut.insert(*id, *b),
                        None => ch.glut.remove(id),
                    };
                }
            }
        }
    }

    pub fn plut_words(&self) -> usize {
        self.channels.iter().map(|c| c.plut.len()).sum()
    }

    pub fn mlut_entries(&self) -> usize {
        self.channels.iter().map(|c| c.mlut.len()).sum()
    }

    pub fn glut_entries(&self) -> usize {
        self.channels.iter().map(|c| c.glut.len()).sum()
    }
}

/// Builds one channel's tables and mirrors their layout: every distinct
/// pulselet has exactly one PLUT address, which doubles as its handle.
#[derive(Debug, Clone)]
pub struct PulseManager {
    pub channel: u8,
    lut: ChannelLut,
    index: HashMap<StoredWord, u16>,
    runs: HashMap<Vec<u16>, Bounds>,
    growths: usize,
}

impl PulseManager {
    pub fn new(channel: u8) -> PulseManager {
        PulseManager {
            channel,
            lut: ChannelLut::default(),
            index: HashMap::new(),
            runs: HashMap::new(),
            growths: 0,
        }
    }

    pub fn lut(&self) -> &ChannelLut {
        &self.lut
    }

    pub fn into_lut(self) -> ChannelLut {
        self.lut
    }

    /// Reallocations of the PLUT/MLUT arrays so far.
    pub fn growths(&self) -> usize {
        self.growths
    }

    /// Sizes both arrays for an upcoming compile pass in one step.
    pub fn reserve(&mut self, plut_words: usize, mlut_entries: usize) {
        let plut = plut_words.min(PLUT_CAPACITY);
        let mlut = mlut_entries.min(MLUT_CAPACITY);
        let before = (self.lut.plut.capacity(), self.lut.mlut.capacity());
        self.lut.plut.reserve(plut.saturating_sub(self.lut.plut.len()));
        self.lut.mlut.reserve(mlut.saturating_sub(self.lut.mlut.len()));
        self.index.reserve(plut.saturating_sub(self.index.len()));
        if before != (self.lut.plut.capacity(), self.lut.mlut.capacity()) {
            self.growths += 1;
        }
    }

    pub fn address_of(&self, word: &StoredWord) -> Option<u16> {
        self.index.get(word).copied()
    }

    /// Address of `word`, appending it if new.
    pub fn intern(&mut self, word: &PulseletWord) -> Result<u16, LutError> {
        self.intern_stored(word.stored())
    }

    pub fn intern_stored(&mut self, stored: StoredWord) -> Result<u16, LutError> {
        if let Some(&a) = self.index.get(&stored) {
            return Ok(a);
        }
        if self.lut.plut.len() >= PLUT_CAPACITY {
            return Err(LutError::PlutCapacityExceeded {
                channel: self.channel,
            });
        }
        let cap = self.lut.plut.capacity();
        self.lut.plut.push(stored);
        if self.lut.plut.capacity() != cap {
            self.growths += 1;
        }
        let a = (self.lut.plut.len() - 1) as u16;
        self.index.insert(stored, a);
        Ok(a)
    }

    /// Places an address list contiguously in the MLUT, reusing an identical
    /// existing run (lowest start wins) or overlapping the current tail.
    pub fn map_range(&mut self, addrs: &[u16]) -> Result<Bounds, LutError> {
        assert!(!addrs.is_empty(), "a gate has at least one word");
        if let Some(&b) = self.runs.get(addrs) {
            return Ok(b);
        }
        let mlut = &self.lut.mlut;
        let start = match mlut.windows(addrs.len()).position(|w| w == addrs) {
            Some(s) => s,
            None => {
                let max_overlap = addrs.len().min(mlut.len());
                let overlap = (1..=max_overlap)
                    .rev()
                    .find(|&k| mlut[mlut.len() - k..] == addrs[..k])
                    .unwrap_or(0);
                let start = mlut.len() - overlap;
                if start + addrs.len() > MLUT_CAPACITY {
                    return Err(LutError::MlutCapacityExceeded {
                        channel: self.channel,
                    });
                }
                let cap = self.lut.mlut.capacity();
                self.lut.mlut.extend_from_slice(&addrs[overlap..]);
                if self.lut.mlut.capacity() != cap {
                    self.growths += 1;
                }
                start
            }
        };
        let b = (start as u16, (start + addrs.len() - 1) as u16);
        self.runs.insert(addrs.to_vec(), b);
        Ok(b)
    }

    pub fn set_glut(&mut self, id: u16, bounds: Bounds) -> Result<(), LutError> {
        if id as usize >= GLUT_CAPACITY {
            return Err(LutError::GlutCapacityExceeded {
                needed: id as usize + 1,
                available: GLUT_CAPACITY,
            });
        }
        self.lut.glut.insert(id, bounds);
        Ok(())
    }

    /// Interns `words`, maps them into the MLUT and points GLUT entry `id`
    /// at the range.
    pub fn register_gate(&mut self, id: u16, words: &[PulseletWord]) -> Result<Bounds, LutError> {
        let addrs = words
            .iter()
            .map(|w| self.intern(w))
            .collect::<Result<Vec<_>, _>>()?;
        let b = self.map_range(&addrs)?;
        self.set_glut(id, b)?;
        Ok(b)
    }

    pub fn gate_words(&self, id: u16) -> Option<Vec<PulseletWord>> {
        Some(
            self.lut
                .decompress(id)?
                .iter()
                .map(|w| w.expand(self.channel))
                .collect(),
        )
    }

    /// Overwrites a PLUT word in place.
    pub fn write_plut(&mut self, address: u16, word: StoredWord) {
        let old = self.lut.plut[address as usize];
        if self.index.get(&old) == Some(&address) {
            self.index.remove(&old);
        }
        self.lut.plut[address as usize] = word;
        self.index.entry(word).or_insert(address);
        self.runs.clear();
    }

    /// Appends a fresh MLUT run without searching for reuse.
    pub fn append_range(&mut self, addrs: &[u16]) -> Result<Bounds, LutError> {
        let start = self.lut.mlut.len();
        if start + addrs.len() > MLUT_CAPACITY {
            return Err(LutError::MlutCapacityExceeded {
                channel: self.channel,
            });
        }
        self.lut.mlut.extend_from_slice(addrs);
        Ok((start as u16, (start + addrs.len() - 1) as u16))
    }

    /// Overwrites MLUT entries in place.
    pub fn write_mlut(&mut self, start: u16, addrs: &[u16]) {
        self.lut.mlut[start as usize..start as usize + addrs.len()].copy_from_slice(addrs);
        self.runs.clear();
    }

    /// Checks that the handle index and the PLUT agree exactly.
    pub fn check_mirror(&self) -> bool {
        self.index.len() == self.lut.plut.len()
            && self
                .index
                .iter()
                .all(|(w, &a)| self.lut.plut.get(a as usize) == Some(w))
    }
}

/// Address-stage compression: PLUT address bits per referenced data bits.
pub fn address_stage_ratio(references: usize) -> f64 {
    if references == 0 {
        return 0.0;
    }
    (references as f64 * crate::config::PLUT_ADDR_BITS as f64)
        / (references as f64 * crate::config::PULSELET_BITS as f64)
}

/// Gate-stage compression: streamed identifier bits per GLUT entry bits.
pub fn gate_stage_ratio(invocations: usize) -> f64 {
    if invocations == 0 {
        return 0.0;
    }
    (invocations as f64 * crate::config::GLUT_ID_BITS as f64)
        / (invocations as f64 * crate::config::GLUT_ENTRY_BITS as f64)
}
