//! Programming stream: 256-bit words that load LUT contents.
//!
//! The stream starts with one header word (`"OCTP"`, version, word count)
//! followed by programming words laid out as
//!
//! | bits     | field                              |
//! |----------|------------------------------------|
//! | 0..2     | destination (PLUT, MLUT, GLUT, bytecode) |
//! | 2..5     | channel                            |
//! | 5..19    | address                            |
//! | 19..256  | payload                            |
//!
//! PLUT payloads hold one 216-bit stored word. MLUT payloads hold a 5-bit
//! count and up to 18 packed 12-bit PLUT addresses (three 72-bit physical
//! MLUT words). GLUT payloads hold a valid bit and two 14-bit bounds.

use super::{Bounds, LutError, LutImage};
use crate::word::{get_bits, put_bits, StoredWord, STORED_BYTES};

pub const WORD_BYTES: usize = 32;
pub const STREAM_MAGIC: &[u8; 4] = b"OCTP";
pub const STREAM_VERSION: u16 = 1;
/// PLUT addresses per MLUT programming word.
pub const MLUT_PER_WORD: usize = 18;

const PAYLOAD: usize = 19;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
#[repr(u8)]
pub enum Destination {
    Plut = 0,
    Mlut = 1,
    Glut = 2,
    Bytecode = 3,
}

/// One decoded programming word.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Write {
    Plut {
        channel: u8,
        address: u16,
        word: StoredWord,
    },
    Mlut {
        channel: u8,
        address: u16,
        entries: Vec<u16>,
    },
    Glut {
        channel: u8,
        id: u16,
        bounds: Option<Bounds>,
    },
}

impl Write {
    pub fn channel(&self) -> u8 {
        match self {
            Write::Plut { channel, .. } | Write::Mlut { channel, .. } | Write::Glut { channel, .. } => {
                *channel
            }
        }
    }

    pub fn destination(&self) -> Destination {
        match self {
            Write::Plut { .. } => Destination::Plut,
            Write::Mlut { .. } => Destination::Mlut,
            Write::Glut { .. } => Destination::Glut,
        }
    }

    fn address(&self) -> u16 {
        match self {
            Write::Plut { address, .. } | Write::Mlut { address, .. } => *address,
            Write::Glut { id, .. } => *id,
        }
    }

    fn sort_key(&self) -> (u8, Destination, u16) {
        (self.channel(), self.destination(), self.address())
    }

    fn encode(&self) -> [u8; WORD_BYTES] {
        let mut b = [0u8; WORD_BYTES];
        put_bits(&mut b, 0, 2, self.destination() as u64);
        put_bits(&mut b, 2, 3, self.channel() as u64);
        put_bits(&mut b, 5, 14, self.address() as u64);
        match self {
            Write::Plut { word, .. } => {
                for (i, byte) in word.to_bytes().iter().enumerate() {
                    put_bits(&mut b, PAYLOAD + 8 * i, 8, *byte as u64);
                }
            }
            Write::Mlut { entries, .. } => {
                debug_assert!(entries.len() <= MLUT_PER_WORD);
                put_bits(&mut b, PAYLOAD, 5, entries.len() as u64);
                for (i, e) in entries.iter().enumerate() {
                    put_bits(&mut b, PAYLOAD + 5 + 12 * i, 12, *e as u64);
                }
            }
            Write::Glut { bounds, .. } => {
                if let Some((start, stop)) = bounds {
                    put_bits(&mut b, PAYLOAD, 1, 1);
                    put_bits(&mut b, PAYLOAD + 1, 14, *start as u64);
                    put_bits(&mut b, PAYLOAD + 15, 14, *stop as u64);
                }
            }
        }
        b
    }

    fn decode(b: &[u8], offset: usize) -> Result<Write, LutError> {
        let channel = get_bits(b, 2, 3) as u8;
        let address = get_bits(b, 5, 14) as u16;
        Ok(match get_bits(b, 0, 2) {
            0 => {
                let mut raw = [0u8; STORED_BYTES];
                for (i, byte) in raw.iter_mut().enumerate() {
                    *byte = get_bits(b, PAYLOAD + 8 * i, 8) as u8;
                }
                Write::Plut {
                    channel,
                    address,
                    word: StoredWord::from_bytes(&raw),
                }
            }
            1 => {
                let count = get_bits(b, PAYLOAD, 5) as usize;
                if count > MLUT_PER_WORD {
                    return Err(LutError::Malformed {
                        offset,
                        reason: format!("MLUT word claims {count} entries"),
                    });
                }
                Write::Mlut {
                    channel,
                    address,
                    entries: (0..count)
                        .map(|i| get_bits(b, PAYLOAD + 5 + 12 * i, 12) as u16)
                        .collect(),
                }
            }
            2 => Write::Glut {
                channel,
                id: address,
                bounds: (get_bits(b, PAYLOAD, 1) == 1).then(|| {
                    (
                        get_bits(b, PAYLOAD + 1, 14) as u16,
                        get_bits(b, PAYLOAD + 15, 14) as u16,
                    )
                }),
            },
            _ => {
                return Err(LutError::Malformed {
                    offset,
                    reason: "bytecode destination inside a LUT programming stream".into(),
                })
            }
        })
    }
}

/// All writes that load `image` from scratch, in (channel, destination,
/// address) order.
pub fn image_writes(image: &LutImage) -> Vec<Write> {
    let mut writes = Vec::new();
    for (ch, lut) in image.channels.iter().enumerate() {
        let channel = ch as u8;
        for (a, w) in lut.plut.iter().enumerate() {
            writes.push(Write::Plut {
                channel,
                address: a as u16,
                word: *w,
            });
        }
        writes.extend(mlut_writes(channel, 0, &lut.mlut));
        for (&id, &b) in &lut.glut {
            writes.push(Write::Glut {
                channel,
                id,
                bounds: Some(b),
            });
        }
    }
    writes
}

/// MLUT writes covering `entries` placed at `start`.
pub fn mlut_writes(channel: u8, start: u16, entries: &[u16]) -> impl Iterator<Item = Write> + '_ {
    entries
        .chunks(MLUT_PER_WORD)
        .enumerate()
        .map(move |(i, chunk)| Write::Mlut {
            channel,
            address: start + (i * MLUT_PER_WORD) as u16,
            entries: chunk.to_vec(),
        })
}

pub fn encode_programming(image: &LutImage) -> Vec<u8> {
    encode_writes(&image_writes(image))
}

/// Header plus one word per write, sorted by (channel, destination, address).
pub fn encode_writes(writes: &[Write]) -> Vec<u8> {
    let mut sorted: Vec<&Write> = writes.iter().collect();
    sorted.sort_by_key(|w| w.sort_key());
    let mut out = Vec::with_capacity((sorted.len() + 1) * WORD_BYTES);
    let mut header = [0u8; WORD_BYTES];
    header[..4].copy_from_slice(STREAM_MAGIC);
    header[4..6].copy_from_slice(&STREAM_VERSION.to_le_bytes());
    header[8..12].copy_from_slice(&(sorted.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for w in sorted {
        out.extend_from_slice(&w.encode());
    }
    out
}

pub fn decode_writes(bytes: &[u8]) -> Result<Vec<Write>, LutError> {
    let malformed = |offset, reason: &str| LutError::Malformed {
        offset,
        reason: reason.to_string(),
    };
    if bytes.len() < WORD_BYTES || &bytes[..4] != STREAM_MAGIC {
        return Err(malformed(0, "missing programming stream header"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != STREAM_VERSION {
        return Err(malformed(4, &format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bytes.len() != (count + 1) * WORD_BYTES {
        return Err(malformed(
            bytes.len().min((count + 1) * WORD_BYTES),
            "stream length does not match word count",
        ));
    }
    bytes[WORD_BYTES..]
        .chunks_exact(WORD_BYTES)
        .enumerate()
        .map(|(i, w)| Write::decode(w, (i + 1) * WORD_BYTES))
        .collect()
}

pub fn decode_programming(bytes: &[u8]) -> Result<LutImage, LutError> {
    let mut image = LutImage::default();
    image.apply(&decode_writes(bytes)?);
    Ok(image)
}
