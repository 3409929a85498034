//! Program file: a small header and section table followed by the LUT
//! programming stream, the sequence bytecode and program metadata, each
//! section aligned to 32 bytes. All integers are little-endian.

use crate::lut::bytecode::Bytecode;
use crate::lut::program::{decode_programming, encode_programming};
use crate::lut::{LutError, LutImage};

pub const MAGIC: &[u8; 4] = b"OCT8";
pub const VERSION: u16 = 1;
const ALIGN: usize = 32;
const ENTRY_BYTES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum Section {
    Programming = 1,
    Bytecode = 2,
    Meta = 3,
}

/// Run-time parameters the sequencer needs besides the tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ProgramMeta {
    /// Shift applied to measurement outcomes when resolving branches.
    pub branch_shift: u32,
    /// Width of the measurement word consumed by branches.
    pub outcome_bits: u32,
}

impl ProgramMeta {
    fn to_bytes(self) -> [u8; ALIGN] {
        let mut b = [0u8; ALIGN];
        b[..4].copy_from_slice(&self.branch_shift.to_le_bytes());
        b[4..8].copy_from_slice(&self.outcome_bits.to_le_bytes());
        b
    }

    fn from_bytes(b: &[u8]) -> Result<ProgramMeta, LutError> {
        if b.len() < 8 {
            return Err(LutError::Malformed {
                offset: 0,
                reason: "metadata section too short".into(),
            });
        }
        Ok(ProgramMeta {
            branch_shift: u32::from_le_bytes(b[..4].try_into().unwrap()),
            outcome_bits: u32::from_le_bytes(b[4..8].try_into().unwrap()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Program {
    pub image: LutImage,
    pub bytecode: Bytecode,
    pub meta: ProgramMeta,
}

fn align(n: usize) -> usize {
    n.div_ceil(ALIGN) * ALIGN
}

impl Program {
    pub fn to_bytes(&self) -> Vec<u8> {
        let sections = [
            (Section::Programming, encode_programming(&self.image)),
            (Section::Bytecode, self.bytecode.to_bytes()),
            (Section::Meta, self.meta.to_bytes().to_vec()),
        ];
        let header = align(8 + ENTRY_BYTES * sections.len());
        let mut out = vec![0u8; header];
        out[..4].copy_from_slice(MAGIC);
        out[4..6].copy_from_slice(&VERSION.to_le_bytes());
        out[6..8].copy_from_slice(&(sections.len() as u16).to_le_bytes());
        for (i, (kind, body)) in sections.iter().enumerate() {
            let e = 8 + i * ENTRY_BYTES;
            let offset = out.len();
            out[e..e + 4].copy_from_slice(&(*kind as u32).to_le_bytes());
            out[e + 4..e + 8].copy_from_slice(&(offset as u32).to_le_bytes());
            out[e + 8..e + 16].copy_from_slice(&(body.len() as u64).to_le_bytes());
            out.extend_from_slice(body);
            out.resize(align(out.len()), 0);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Program, LutError> {
        let bad = |offset, reason: &str| LutError::Malformed {
            offset,
            reason: reason.into(),
        };
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(bad(0, "not a program file"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(bad(4, "unsupported program file version"));
        }
        let count = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
        if bytes.len() < 8 + count * ENTRY_BYTES {
            return Err(bad(8, "truncated section table"));
        }
        let mut program = Program::default();
        let mut seen = [false; 3];
        for i in 0..count {
            let e = 8 + i * ENTRY_BYTES;
            let kind = u32::from_le_bytes(bytes[e..e + 4].try_into().unwrap());
            let offset = u32::from_le_bytes(bytes[e + 4..e + 8].try_into().unwrap()) as usize;
            let len = u64::from_le_bytes(bytes[e + 8..e + 16].try_into().unwrap()) as usize;
            let body = offset
                .checked_add(len)
                .and_then(|end| bytes.get(offset..end))
                .ok_or_else(|| bad(e, "section extends past end of file"))?;
            let shift = |err: LutError| match err {
                LutError::Malformed { offset: o, reason } => LutError::Malformed {
                    offset: offset + o,
                    reason,
                },
                other => other,
            };
            match kind {
                1 => program.image = decode_programming(body).map_err(shift)?,
                2 => program.bytecode = Bytecode::from_bytes(body).map_err(shift)?,
                3 => program.meta = ProgramMeta::from_bytes(body).map_err(shift)?,
                _ => continue,
            }
            seen[kind as usize - 1] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(bad(8, "missing section"));
        }
        Ok(program)
    }
}
