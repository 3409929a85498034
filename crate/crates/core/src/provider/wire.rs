//! Length-prefixed binary frames spoken between compiler and provider.
//!
//! Frame: `len u32 | "GPR1" | version u8 | kind u8 | payload`, where `len`
//! counts everything after itself. All integers are little-endian.

use std::io::{self, Read, Write};

use num_rational::Rational64;

use super::{GateKey, ProviderError};
use crate::config::SLOTS;
use crate::pulse::{GateDefinition, ModulationNode, Pulse, PulseMetadata};

pub const MAGIC: &[u8; 4] = b"GPR1";
pub const VERSION: u8 = 1;
/// Largest frame body accepted from a peer.
pub const MAX_FRAME: u32 = 64 << 20;

const FETCH: u8 = 1;
const DEF: u8 = 2;
const ERR: u8 = 3;
const UPLOAD: u8 = 4;
const ACK: u8 = 5;

const NODE_SCALAR: u8 = 0;
const NODE_DISCRETE: u8 = 1;
const NODE_SPLINE: u8 = 2;
const NODE_MIXED: u8 = 3;

/// Error codes carried by `ERR` frames.
pub mod code {
    pub const UNKNOWN_GATE: u16 = 1;
    pub const BUILDER: u16 = 2;
    pub const INVALID: u16 = 3;
    pub const PROTOCOL: u16 = 4;
    pub const PARSE: u16 = 5;
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Fetch(GateKey),
    Def(GateDefinition),
    Err { code: u16, text: String },
    /// Circuit source to be parsed on the provider side.
    Upload(String),
    /// Reply to `Upload` carrying the parser's operation count.
    Ack(u64),
}

impl Message {
    pub fn error(e: &ProviderError) -> Message {
        let code = match e {
            ProviderError::UnknownGate(_) => code::UNKNOWN_GATE,
            ProviderError::Builder { .. } => code::BUILDER,
            ProviderError::InvalidDefinition { .. } => code::INVALID,
            _ => code::PROTOCOL,
        };
        let text = match e {
            ProviderError::UnknownGate(name) => name.clone(),
            other => other.to_string(),
        };
        Message::Err { code, text }
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.u64(v.to_bits());
    }
    fn str16(&mut self, s: &str) {
        let b = s.as_bytes();
        let n = b.len().min(u16::MAX as usize);
        self.u16(n as u16);
        self.0.extend_from_slice(&b[..n]);
    }
    fn str32(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn key(&mut self, name: &str, args: &[Rational64]) {
        self.str16(name);
        self.u16(args.len() as u16);
        for a in args {
            // Rational64 keeps the sign on the numerator.
            self.u64(*a.numer() as u64);
            self.u64(*a.denom() as u64);
        }
    }
    fn node(&mut self, n: &ModulationNode) {
        match n {
            ModulationNode::Scalar(v) => {
                self.u8(NODE_SCALAR);
                self.f64(*v);
            }
            ModulationNode::Discrete(v) | ModulationNode::Spline(v) => {
                let tag = if matches!(n, ModulationNode::Discrete(_)) {
                    NODE_DISCRETE
                } else {
                    NODE_SPLINE
                };
                self.u8(tag);
                self.u32(v.len() as u32);
                for x in v {
                    self.f64(*x);
                }
            }
            ModulationNode::Mixed(children) => {
                self.u8(NODE_MIXED);
                self.u32(children.len() as u32);
                for c in children {
                    self.node(c);
                }
            }
        }
    }
    fn pulse(&mut self, p: &Pulse) {
        self.u8(p.channel);
        self.f64(p.duration);
        self.u8(p.metadata.to_byte());
        match p.mutation_id {
            Some(id) => {
                self.u8(1);
                self.u64(id);
            }
            None => self.u8(0),
        }
        for s in &p.slots {
            self.node(s);
        }
    }
}

/// Encodes a complete frame including its length prefix.
pub fn encode(m: &Message) -> Vec<u8> {
    let mut w = Writer(Vec::with_capacity(64));
    w.u32(0);
    w.0.extend_from_slice(MAGIC);
    w.u8(VERSION);
    match m {
        Message::Fetch(k) => {
            w.u8(FETCH);
            w.key(&k.name, &k.args);
        }
        Message::Def(d) => {
            w.u8(DEF);
            w.key(&d.name, &d.args);
            w.u32(d.pulses.len() as u32);
            for p in &d.pulses {
                w.pulse(p);
            }
        }
        Message::Err { code, text } => {
            w.u8(ERR);
            w.u16(*code);
            w.str32(text);
        }
        Message::Upload(src) => {
            w.u8(UPLOAD);
            w.str32(src);
        }
        Message::Ack(n) => {
            w.u8(ACK);
            w.u64(*n);
        }
    }
    let len = (w.0.len() - 4) as u32;
    w.0[..4].copy_from_slice(&len.to_le_bytes());
    w.0
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail<T>(&self, reason: impl Into<String>) -> Result<T, ProviderError> {
        Err(ProviderError::Protocol {
            offset: self.pos,
            reason: reason.into(),
        })
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8], ProviderError> {
        if self.buf.len() - self.pos < n {
            return self.fail(format!("truncated: need {n} bytes, have {}", self.buf.len() - self.pos));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, ProviderError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, ProviderError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, ProviderError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, ProviderError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, ProviderError> {
        Ok(f64::from_bits(self.u64()?))
    }
    fn string(&mut self, n: usize) -> Result<String, ProviderError> {
        let at = self.pos;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| ProviderError::Protocol {
            offset: at,
            reason: "string is not UTF-8".into(),
        })
    }
    fn count(&mut self, elem: usize) -> Result<usize, ProviderError> {
        let n = self.u32()? as usize;
        if n.saturating_mul(elem) > self.buf.len() - self.pos {
            self.pos -= 4;
            return self.fail(format!("count {n} exceeds frame"));
        }
        Ok(n)
    }
    fn key(&mut self) -> Result<(String, Vec<Rational64>), ProviderError> {
        let n = self.u16()? as usize;
        let name = self.string(n)?;
        let argc = self.u16()?;
        let mut args = Vec::with_capacity(argc as usize);
        for _ in 0..argc {
            let at = self.pos;
            let num = self.u64()? as i64;
            let den = self.u64()?;
            if den == 0 || den > i64::MAX as u64 {
                self.pos = at;
                return self.fail(format!("bad denominator {den}"));
            }
            args.push(Rational64::new(num, den as i64));
        }
        Ok((name, args))
    }
    fn floats(&mut self) -> Result<Vec<f64>, ProviderError> {
        let n = self.count(8)?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn node(&mut self, depth: u32) -> Result<ModulationNode, ProviderError> {
        if depth > 64 {
            return self.fail("modulation tree too deep");
        }
        Ok(match self.u8()? {
            NODE_SCALAR => ModulationNode::Scalar(self.f64()?),
            NODE_DISCRETE => ModulationNode::Discrete(self.floats()?),
            NODE_SPLINE => ModulationNode::Spline(self.floats()?),
            NODE_MIXED => {
                let n = self.count(1)?;
                let mut c = Vec::with_capacity(n);
                for _ in 0..n {
                    c.push(self.node(depth + 1)?);
                }
                ModulationNode::Mixed(c)
            }
            t => {
                self.pos -= 1;
                return self.fail(format!("unknown node tag {t}"));
            }
        })
    }
    fn pulse(&mut self) -> Result<Pulse, ProviderError> {
        let channel = self.u8()?;
        let duration = self.f64()?;
        let metadata = PulseMetadata::from_byte(self.u8()?);
        let mutation_id = match self.u8()? {
            0 => None,
            1 => Some(self.u64()?),
            f => {
                self.pos -= 1;
                return self.fail(format!("bad mutation flag {f}"));
            }
        };
        let mut p = Pulse::new(channel, duration);
        p.metadata = metadata;
        p.mutation_id = mutation_id;
        for i in 0..SLOTS {
            p.slots[i] = self.node(0)?;
        }
        Ok(p)
    }
}

/// Decodes one complete frame; trailing bytes are an error.
pub fn decode(frame: &[u8]) -> Result<Message, ProviderError> {
    let mut r = Reader { buf: frame, pos: 0 };
    let len = r.u32()? as usize;
    if len != frame.len() - 4 {
        return r.fail(format!("length prefix {len} but {} bytes follow", frame.len() - 4));
    }
    if r.take(4)? != MAGIC {
        r.pos -= 4;
        return r.fail("bad magic");
    }
    let v = r.u8()?;
    if v != VERSION {
        r.pos -= 1;
        return r.fail(format!("unsupported version {v}"));
    }
    let m = match r.u8()? {
        FETCH => {
            let (name, args) = r.key()?;
            Message::Fetch(GateKey { name, args })
        }
        DEF => {
            let (name, args) = r.key()?;
            let n = r.count(1)?;
            let mut pulses = Vec::with_capacity(n);
            for _ in 0..n {
                pulses.push(r.pulse()?);
            }
            Message::Def(GateDefinition { name, args, pulses })
        }
        ERR => {
            let code = r.u16()?;
            let n = r.count(1)?;
            let text = r.string(n)?;
            Message::Err { code, text }
        }
        UPLOAD => {
            let n = r.count(1)?;
            Message::Upload(r.string(n)?)
        }
        ACK => Message::Ack(r.u64()?),
        k => {
            r.pos -= 1;
            return r.fail(format!("unknown frame kind {k}"));
        }
    };
    if r.pos != frame.len() {
        return r.fail("trailing bytes");
    }
    Ok(m)
}

/// Reads one frame (prefix included) from a stream.
pub fn read_frame(src: &mut impl Read) -> io::Result<Vec<u8>> {
    let mut len = [0u8; 4];
    src.read_exact(&mut len)?;
    let n = u32::from_le_bytes(len);
    if n > MAX_FRAME {
        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("frame of {n} bytes")));
    }
    let mut buf = vec![0u8; n as usize + 4];
    buf[..4].copy_from_slice(&len);
    src.read_exact(&mut buf[4..])?;
    Ok(buf)
}

pub fn write_message(dst: &mut impl Write, m: &Message) -> io::Result<()> {
    dst.write_all(&encode(m))?;
    dst.flush()
}

/// Bytes a modulation tree occupies on the wire.
pub fn node_size(n: &ModulationNode) -> usize {
    match n {
        ModulationNode::Scalar(_) => 9,
        ModulationNode::Discrete(v) | ModulationNode::Spline(v) => 5 + 8 * v.len(),
        ModulationNode::Mixed(c) => 5 + c.iter().map(node_size).sum::<usize>(),
    }
}
