//! Pulselet words: the 256-bit streaming format and the 216-bit stored form.
//!
//! Streaming layout (bit 0 is the LSB of byte 0):
//!
//! | bits      | field                      |
//! |-----------|----------------------------|
//! | 0..40     | u0                         |
//! | 40..160   | u1, u2, u3 (40 bits each)  |
//! | 160..200  | duration in cycles         |
//! | 200..256  | metadata (56 bits)         |
//!
//! Metadata layout: channel (3), parameter (2), tone (1), wait_trigger (1),
//! sync (1), feedforward (1), frame_apply_mask (2), frame_invert_mask (2),
//! frame_apply_at_end (1), coef_shift (6), reserved (36).
//!
//! The stored form keeps the 200-bit payload and 16 metadata bits:
//! parameter (2), tone (1), sync (1), feedforward (1), frame_apply_mask (2),
//! frame_invert_mask (2), frame_apply_at_end (1), coef_shift (6).

use crate::config::{Param, Slot, WORD_MASK};
use crate::spline::FixedFd;

pub const PULSELET_BYTES: usize = 32;
pub const STORED_BYTES: usize = 27;
const PAYLOAD_BITS: usize = 200;

pub(crate) fn put_bits(buf: &mut [u8], offset: usize, width: usize, value: u64) {
    debug_assert!(width <= 64);
    let mut done = 0;
    while done < width {
        let pos = offset + done;
        let shift = pos % 8;
        let take = (8 - shift).min(width - done);
        let mask = ((((1u16 << take) - 1) as u8) as u16) << shift;
        let bits = (((value >> done) & ((1 << take) - 1)) as u16) << shift;
        let byte = &mut buf[pos / 8];
        *byte = (*byte & !(mask as u8)) | bits as u8;
        done += take;
    }
}

pub(crate) fn get_bits(buf: &[u8], offset: usize, width: usize) -> u64 {
    debug_assert!(width <= 64);
    let mut v = 0u64;
    let mut done = 0;
    while done < width {
        let pos = offset + done;
        let shift = pos % 8;
        let take = (8 - shift).min(width - done);
        let bits = (buf[pos / 8] >> shift) as u64 & ((1 << take) - 1);
        v |= bits << done;
        done += take;
    }
    v
}

/// Per-word routing and pulse attributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct WordMeta {
    pub channel: u8,
    pub param: u8,
    pub tone: u8,
    pub wait_trigger: bool,
    pub sync: bool,
    pub feedforward: bool,
    pub frame_apply_mask: u8,
    pub frame_invert_mask: u8,
    pub frame_apply_at_end: bool,
    pub coef_shift: u8,
}

impl WordMeta {
    pub fn slot(&self) -> Slot {
        Slot::new(Param::from_bits(self.param), self.tone & 1)
    }

    pub fn to_bits(&self) -> u64 {
        (self.channel as u64 & 0b111)
            | (self.param as u64 & 0b11) << 3
            | (self.tone as u64 & 1) << 5
            | (self.wait_trigger as u64) << 6
            | (self.sync as u64) << 7
            | (self.feedforward as u64) << 8
            | (self.frame_apply_mask as u64 & 0b11) << 9
            | (self.frame_invert_mask as u64 & 0b11) << 11
            | (self.frame_apply_at_end as u64) << 13
            | (self.coef_shift as u64 & 0x3f) << 14
    }

    pub fn from_bits(v: u64) -> WordMeta {
        WordMeta {
            channel: (v & 0b111) as u8,
            param: (v >> 3 & 0b11) as u8,
            tone: (v >> 5 & 1) as u8,
            wait_trigger: v >> 6 & 1 == 1,
            sync: v >> 7 & 1 == 1,
            feedforward: v >> 8 & 1 == 1,
            frame_apply_mask: (v >> 9 & 0b11) as u8,
            frame_invert_mask: (v >> 11 & 0b11) as u8,
            frame_apply_at_end: v >> 13 & 1 == 1,
            coef_shift: (v >> 14 & 0x3f) as u8,
        }
    }

    /// The 16 bits that survive into the PLUT.
    pub fn retained(&self) -> u16 {
        (self.param as u16 & 0b11)
            | (self.tone as u16 & 1) << 2
            | (self.sync as u16) << 3
            | (self.feedforward as u16) << 4
            | (self.frame_apply_mask as u16 & 0b11) << 5
            | (self.frame_invert_mask as u16 & 0b11) << 7
            | (self.frame_apply_at_end as u16) << 9
            | (self.coef_shift as u16 & 0x3f) << 10
    }

    pub fn from_retained(bits: u16, channel: u8) -> WordMeta {
        WordMeta {
            channel,
            param: (bits & 0b11) as u8,
            tone: (bits >> 2 & 1) as u8,
            wait_trigger: false,
            sync: bits >> 3 & 1 == 1,
            feedforward: bits >> 4 & 1 == 1,
            frame_apply_mask: (bits >> 5 & 0b11) as u8,
            frame_invert_mask: (bits >> 7 & 0b11) as u8,
            frame_apply_at_end: bits >> 9 & 1 == 1,
            coef_shift: (bits >> 10 & 0x3f) as u8,
        }
    }
}

/// One 256-bit streaming word for a single (channel, tone, parameter).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PulseletWord {
    pub fields: [u64; 4],
    pub duration: u64,
    pub meta: WordMeta,
}

impl PulseletWord {
    pub fn from_fd(fd: &FixedFd, mut meta: WordMeta) -> PulseletWord {
        meta.param = fd.param as u8;
        meta.coef_shift = fd.coef_shift;
        PulseletWord {
            fields: fd.fields(),
            duration: fd.cycles,
            meta,
        }
    }

    pub fn slot(&self) -> Slot {
        self.meta.slot()
    }

    pub fn fd(&self) -> FixedFd {
        FixedFd::from_fields(
            Param::from_bits(self.meta.param),
            self.fields,
            self.meta.coef_shift,
            self.duration,
        )
    }

    pub fn stored(&self) -> StoredWord {
        StoredWord {
            fields: self.fields,
            duration: self.duration,
            meta: self.meta.retained(),
        }
    }

    pub fn to_bytes(&self) -> [u8; PULSELET_BYTES] {
        let mut b = [0u8; PULSELET_BYTES];
        for (i, f) in self.fields.iter().enumerate() {
            put_bits(&mut b, 40 * i, 40, f & WORD_MASK);
        }
        put_bits(&mut b, 160, 40, self.duration & WORD_MASK);
        put_bits(&mut b, PAYLOAD_BITS, 56, self.meta.to_bits());
        b
    }

    pub fn from_bytes(b: &[u8; PULSELET_BYTES]) -> PulseletWord {
        PulseletWord {
            fields: [0, 1, 2, 3].map(|i| get_bits(b, 40 * i, 40)),
            duration: get_bits(b, 160, 40),
            meta: WordMeta::from_bits(get_bits(b, PAYLOAD_BITS, 56)),
        }
    }
}

/// A word as held in the PLUT: payload plus the retained metadata. Equality
/// on this type is the interning rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct StoredWord {
    pub fields: [u64; 4],
    pub duration: u64,
    pub meta: u16,
}

impl StoredWord {
    pub fn expand(&self, channel: u8) -> PulseletWord {
        PulseletWord {
            fields: self.fields,
            duration: self.duration,
            meta: WordMeta::from_retained(self.meta, channel),
        }
    }

    pub fn slot(&self) -> Slot {
        WordMeta::from_retained(self.meta, 0).slot()
    }

    pub fn to_bytes(&self) -> [u8; STORED_BYTES] {
        let mut b = [0u8; STORED_BYTES];
        for (i, f) in self.fields.iter().enumerate() {
            put_bits(&mut b, 40 * i, 40, f & WORD_MASK);
        }
        put_bits(&mut b, 160, 40, self.duration & WORD_MASK);
        put_bits(&mut b, PAYLOAD_BITS, 16, self.meta as u64);
        b
    }

    pub fn from_bytes(b: &[u8]) -> StoredWord {
        StoredWord {
            fields: [0, 1, 2, 3].map(|i| get_bits(b, 40 * i, 40)),
            duration: get_bits(b, 160, 40),
            meta: get_bits(b, PAYLOAD_BITS, 16) as u16,
        }
    }
}
