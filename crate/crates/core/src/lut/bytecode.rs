//! Sequence bytecode: 256-bit packets of densely packed 11-bit GLUT ids.
//!
//! | bits     | field                                   |
//! |----------|-----------------------------------------|
//! | 0..2     | kind (normal, branch, continuation)     |
//! | 2..7     | address count                           |
//! | 7..249   | up to 22 addresses, 11 bits each        |
//! | 249..256 | zero                                    |
//!
//! A branch packet carries base addresses that are combined with a
//! measurement outcome at run time; continuation packets extend a branch
//! packet that needs more than 22 bases.

use super::LutError;
use crate::config::{GLUT_ADDR_BITS, GLUT_ID_BITS};
use crate::word::{get_bits, put_bits};

pub const PACKET_BYTES: usize = 32;
pub const IDS_PER_PACKET: usize = 22;
const ADDR_OFFSET: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum PacketKind {
    Normal = 0,
    Branch = 1,
    Continuation = 2,
}

/// Resolved GLUT address of a branch gate: the base, the outcome shifted
/// into place and the forced most significant bit, masked to `width` bits.
pub fn resolve_branch(base: u16, outcome: u32, shift: u32, width: u32) -> u16 {
    let mask = (1u64 << width) - 1;
    let v = base as u64 | ((outcome as u64) << shift) | (1u64 << (width - 1));
    (v & mask) as u16
}

pub fn resolve(base: u16, outcome: u32, shift: u32) -> u16 {
    resolve_branch(base, outcome, shift, GLUT_ADDR_BITS)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BytecodeItem {
    Gate(u16),
    Branch(Vec<u16>),
}

#[derive(Debug, Clone, Default)]
pub struct Bytecode {
    packets: Vec<[u8; PACKET_BYTES]>,
    open: Option<usize>,
    gates: u64,
}

impl PartialEq for Bytecode {
    fn eq(&self, other: &Bytecode) -> bool {
        self.packets == other.packets
    }
}

impl Eq for Bytecode {}

fn header(kind: PacketKind, count: usize) -> [u8; PACKET_BYTES] {
    let mut p = [0u8; PACKET_BYTES];
    put_bits(&mut p, 0, 2, kind as u64);
    put_bits(&mut p, 2, 5, count as u64);
    p
}

impl Bytecode {
    pub fn new() -> Bytecode {
        Bytecode::default()
    }

    pub fn with_capacity(gates: usize) -> Bytecode {
        Bytecode {
            packets: Vec::with_capacity(gates.div_ceil(IDS_PER_PACKET)),
            ..Bytecode::default()
        }
    }

    pub fn push_gate(&mut self, id: u16) {
        debug_assert!(id < 1 << GLUT_ID_BITS);
        let idx = match self.open {
            Some(i) if get_bits(&self.packets[i], 2, 5) < IDS_PER_PACKET as u64 => i,
            _ => {
                self.packets.push(header(PacketKind::Normal, 0));
                self.packets.len() - 1
            }
        };
        self.open = Some(idx);
        let p = &mut self.packets[idx];
        let n = get_bits(p, 2, 5) as usize;
        put_bits(p, ADDR_OFFSET + 11 * n, 11, id as u64);
        put_bits(p, 2, 5, n as u64 + 1);
        self.gates += 1;
    }

    /// Repeats the ids of `body` `count` times.
    pub fn push_repeated(&mut self, body: &[u16], count: u64) {
        for _ in 0..count {
            for &id in body {
                self.push_gate(id);
            }
        }
    }

    pub fn push_branch(&mut self, bases: &[u16]) {
        assert!(!bases.is_empty(), "a branch has at least one position");
        self.open = None;
        for (i, chunk) in bases.chunks(IDS_PER_PACKET).enumerate() {
            let kind = if i == 0 {
                PacketKind::Branch
            } else {
                PacketKind::Continuation
            };
            let mut p = header(kind, chunk.len());
            for (j, &b) in chunk.iter().enumerate() {
                put_bits(&mut p, ADDR_OFFSET + 11 * j, 11, b as u64);
            }
            self.packets.push(p);
        }
        self.gates += bases.len() as u64;
    }

    pub fn packets(&self) -> &[[u8; PACKET_BYTES]] {
        &self.packets
    }

    /// Gate slots carried, counting each branch position once.
    pub fn gate_count(&self) -> u64 {
        self.gates
    }

    pub fn byte_len(&self) -> usize {
        self.packets.len() * PACKET_BYTES
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.packets.concat()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Bytecode, LutError> {
        if !bytes.len().is_multiple_of(PACKET_BYTES) {
            return Err(LutError::Malformed {
                offset: bytes.len() - bytes.len() % PACKET_BYTES,
                reason: "partial bytecode packet".into(),
            });
        }
        let packets: Vec<[u8; PACKET_BYTES]> = bytes
            .chunks_exact(PACKET_BYTES)
            .map(|c| c.try_into().unwrap())
            .collect();
        let mut gates = 0;
        for (i, p) in packets.iter().enumerate() {
            let count = get_bits(p, 2, 5);
            if count > IDS_PER_PACKET as u64 || get_bits(p, 0, 2) == 3 {
                return Err(LutError::Malformed {
                    offset: i * PACKET_BYTES,
                    reason: "invalid packet header".into(),
                });
            }
            gates += count;
        }
        Ok(Bytecode {
            packets,
            open: None,
            gates,
        })
    }

    pub fn items(&self) -> Items<'_> {
        Items {
            packets: &self.packets,
            packet: 0,
            slot: 0,
        }
    }
}

/// Decoding cursor over the bytecode. Cheap to clone; each channel of the
/// simulator walks its own copy.
#[derive(Debug, Clone)]
pub struct Items<'a> {
    packets: &'a [[u8; PACKET_BYTES]],
    packet: usize,
    slot: usize,
}

impl Items<'_> {
    /// Position in the packet stream, for ordering cursors.
    pub fn position(&self) -> (usize, usize) {
        (self.packet, self.slot)
    }
}

impl Iterator for Items<'_> {
    type Item = Result<BytecodeItem, LutError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let p = self.packets.get(self.packet)?;
            let count = get_bits(p, 2, 5) as usize;
            match get_bits(p, 0, 2) {
                0 => {
                    if self.slot < count {
                        let id = get_bits(p, ADDR_OFFSET + 11 * self.slot, 11) as u16;
                        self.slot += 1;
                        return Some(Ok(BytecodeItem::Gate(id)));
                    }
                    self.packet += 1;
                    self.slot = 0;
                }
                1 => {
                    let mut bases: Vec<u16> = (0..count)
                        .map(|j| get_bits(p, ADDR_OFFSET + 11 * j, 11) as u16)
                        .collect();
                    self.packet += 1;
                    while let Some(c) = self.packets.get(self.packet) {
                        if get_bits(c, 0, 2) != PacketKind::Continuation as u64 {
                            break;
                        }
                        let n = get_bits(c, 2, 5) as usize;
                        bases.extend((0..n).map(|j| get_bits(c, ADDR_OFFSET + 11 * j, 11) as u16));
                        self.packet += 1;
                    }
                    self.slot = 0;
                    return Some(Ok(BytecodeItem::Branch(bases)));
                }
                _ => {
                    let offset = self.packet * PACKET_BYTES;
                    self.packet = self.packets.len();
                    return Some(Err(LutError::Malformed {
                        offset,
                        reason: "continuation packet without a preceding branch packet".into(),
                    }));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn packet_capacity() {
        assert_eq!((256 - 7) / 11, IDS_PER_PACKET);
        let mut b = Bytecode::new();
        for i in 0..22 {
            b.push_gate(i);
        }
        assert_eq!(b.packets().len(), 1);
        b.push_gate(22);
        assert_eq!(b.packets().len(), 2);
        assert_eq!(get_bits(&b.packets()[1], 2, 5), 1);
    }

    #[test]
    fn items_round_trip() {
        let mut b = Bytecode::new();
        b.push_gate(5);
        b.push_gate(2047);
        let bases: Vec<u16> = (0..30).collect();
        b.push_branch(&bases);
        b.push_gate(7);
        let back = Bytecode::from_bytes(&b.to_bytes()).unwrap();
        let items: Vec<_> = back.items().map(Result::unwrap).collect();
        assert_eq!(
            items,
            vec![
                BytecodeItem::Gate(5),
                BytecodeItem::Gate(2047),
                BytecodeItem::Branch(bases),
                BytecodeItem::Gate(7),
            ]
        );
        assert_eq!(back.gate_count(), 33);
    }

    #[test]
    fn stray_continuation() {
        let mut p = [0u8; PACKET_BYTES];
        put_bits(&mut p, 0, 2, PacketKind::Continuation as u64);
        let b = Bytecode::from_bytes(&p).unwrap();
        assert!(b.items().next().unwrap().is_err());
    }

    #[test]
    fn branch_resolution_examples() {
        assert_eq!(resolve_branch(0x005, 0, 0, 12), 0x805);
        assert_eq!(resolve_branch(0x005, 1, 2, 12), 0x805);
        assert_eq!(resolve_branch(0x010, 0b11, 4, 12), 0x830);
        assert_eq!(resolve_branch(0x000, 0xff, 8, 12), 0xf00);
    }
}
