//! Hardware constants and the slot vocabulary shared by every stage.

use std::fmt;

/// Parameter update clock of the spline engines.
pub const CLOCK_HZ: f64 = 409.6e6;
/// Reference clock of the frequency tuning word; one FTW LSB is `FTW_CLOCK_HZ / 2^40`.
pub const FTW_CLOCK_HZ: f64 = 819.2e6;
/// Output channels per board.
pub const CHANNELS: usize = 8;
/// Tones per channel.
pub const TONES: usize = 2;
/// Modulated parameters per tone.
pub const PARAMS: usize = 4;
/// Spline engines (and FIFOs) per channel.
pub const SLOTS: usize = PARAMS * TONES;
/// Shortest word a spline engine accepts.
pub const MIN_CYCLES: u64 = 8;

/// Width of phase, frequency and frame words.
pub const WORD_BITS: u32 = 40;
pub const WORD_MASK: u64 = (1 << WORD_BITS) - 1;
/// Amplitude output resolution: a signed 16-bit payload.
pub const AMP_FULL_SCALE: i64 = 32767;

pub const PLUT_ADDR_BITS: u32 = 12;
pub const PLUT_CAPACITY: usize = 1 << PLUT_ADDR_BITS;
pub const MLUT_ADDR_BITS: u32 = 14;
pub const MLUT_CAPACITY: usize = 1 << MLUT_ADDR_BITS;
/// Streaming gate identifier width.
pub const GLUT_ID_BITS: u32 = 11;
pub const GLUT_STREAM_CAPACITY: usize = 1 << GLUT_ID_BITS;
/// Programmable GLUT address width (streaming ids plus the branch half).
pub const GLUT_ADDR_BITS: u32 = 12;
pub const GLUT_CAPACITY: usize = 1 << GLUT_ADDR_BITS;

/// Bits of a streamed pulselet word.
pub const PULSELET_BITS: u32 = 256;
/// Bits of a word as stored in the PLUT after the metadata trim.
pub const STORED_WORD_BITS: u32 = 216;
/// Bits of one GLUT entry (two MLUT bounds).
pub const GLUT_ENTRY_BITS: u32 = 2 * MLUT_ADDR_BITS;

/// Waveform parameter driven by one spline engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Param {
    Amp = 0,
    Frq = 1,
    Phs = 2,
    Frm = 3,
}

impl Param {
    pub const ALL: [Param; PARAMS] = [Param::Amp, Param::Frq, Param::Phs, Param::Frm];

    pub fn from_bits(bits: u8) -> Param {
        Param::ALL[(bits & 0b11) as usize]
    }

    pub fn name(self) -> &'static str {
        match self {
            Param::Amp => "AMP",
            Param::Frq => "FRQ",
            Param::Phs => "PHS",
            Param::Frm => "FRM",
        }
    }

    /// Phase-like parameters wrap modulo 2^40 instead of faulting.
    pub fn wraps(self) -> bool {
        matches!(self, Param::Phs | Param::Frm)
    }
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One (parameter, tone) pair: the unit that owns a FIFO and a spline engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Slot {
    pub param: Param,
    pub tone: u8,
}

impl Slot {
    pub fn new(param: Param, tone: u8) -> Slot {
        debug_assert!((tone as usize) < TONES);
        Slot { param, tone }
    }

    /// Slots ordered AMP0, AMP1, FRQ0, FRQ1, PHS0, PHS1, FRM0, FRM1.
    pub fn all() -> impl Iterator<Item = Slot> {
        (0..SLOTS).map(Slot::from_index)
    }

    pub fn index(self) -> usize {
        self.param as usize * TONES + self.tone as usize
    }

    pub fn from_index(i: usize) -> Slot {
        Slot {
            param: Param::ALL[i / TONES],
            tone: (i % TONES) as u8,
        }
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.param, self.tone)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slot_index_round_trips() {
        for (i, s) in Slot::all().enumerate() {
            assert_eq!(s.index(), i);
            assert_eq!(Slot::from_index(i), s);
        }
        assert_eq!(Slot::from_index(6), Slot::new(Param::Frm, 0));
    }

    #[test]
    fn ftw_lsb_matches_resolution() {
        let lsb = FTW_CLOCK_HZ / (1u64 << 40) as f64;
        assert!((lsb - 745.06e-6).abs() < 0.01e-6);
    }
}
