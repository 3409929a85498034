//! Trace rows, events and the sinks that consume them.

use std::hash::{DefaultHasher, Hasher};
use std::io::{self, Write};
use std::sync::mpsc::{sync_channel, SyncSender};
use std::thread::JoinHandle;

use crate::config::Param;

/// Quantity carried by a value row. The first four are raw slot outputs;
/// `Phase` is the composed phase argument of a tone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TraceParam {
    Slot(Param),
    Phase,
}

impl TraceParam {
    pub fn name(self) -> &'static str {
        match self {
            TraceParam::Slot(p) => p.name(),
            TraceParam::Phase => "PHASE",
        }
    }

    fn code(self) -> u8 {
        match self {
            TraceParam::Slot(p) => p as u8,
            TraceParam::Phase => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TraceRow {
    pub cycle: u64,
    pub channel: u8,
    pub tone: u8,
    pub param: TraceParam,
    pub value: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    /// All engines started together.
    Release,
    /// A synchronizing frequency word reset the phase of `tone`.
    Sync { tone: u8 },
    /// A branch resolved with the given outcome after a measurement.
    Branch { outcome: u32 },
    Underflow { slot: u8 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TraceEvent {
    pub cycle: u64,
    pub channel: Option<u8>,
    pub kind: EventKind,
}

impl TraceEvent {
    fn name(&self) -> &'static str {
        match self.kind {
            EventKind::Release => "release",
            EventKind::Sync { .. } => "sync",
            EventKind::Branch { .. } => "branch",
            EventKind::Underflow { .. } => "underflow",
        }
    }

    fn detail(&self) -> u64 {
        match self.kind {
            EventKind::Release => 0,
            EventKind::Sync { tone } => tone as u64,
            EventKind::Branch { outcome } => outcome as u64,
            EventKind::Underflow { slot } => slot as u64,
        }
    }
}

pub trait TraceSink {
    fn value(&mut self, row: &TraceRow) -> io::Result<()>;
    fn event(&mut self, event: &TraceEvent) -> io::Result<()>;
    fn finish(&mut self) -> io::Result<()> {
        Ok(())
    }
}

#[derive(Debug, Default)]
pub struct NullSink;

impl TraceSink for NullSink {
    fn value(&mut self, _: &TraceRow) -> io::Result<()> {
        Ok(())
    }
    fn event(&mut self, _: &TraceEvent) -> io::Result<()> {
        Ok(())
    }
}

/// Keeps everything in memory.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct VecSink {
    pub rows: Vec<TraceRow>,
    pub events: Vec<TraceEvent>,
}

impl VecSink {
    /// Value sequence of one quantity with cycle numbers dropped.
    pub fn series(&self, channel: u8, tone: u8, param: TraceParam) -> Vec<u64> {
        self.rows
            .iter()
            .filter(|r| r.channel == channel && r.tone == tone && r.param == param)
            .map(|r| r.value)
            .collect()
    }
}

impl TraceSink for VecSink {
    fn value(&mut self, row: &TraceRow) -> io::Result<()> {
        self.rows.push(*row);
        Ok(())
    }
    fn event(&mut self, event: &TraceEvent) -> io::Result<()> {
        self.events.push(*event);
        Ok(())
    }
}

/// `cycle,channel,tone,param,value_hex`; events use `event:<name>` in the
/// param column and leave the tone empty.
pub struct CsvSink<W: Write> {
    out: W,
    header: bool,
}

impl<W: Write> CsvSink<W> {
    pub fn new(out: W) -> CsvSink<W> {
        CsvSink { out, header: false }
    }

    fn ensure_header(&mut self) -> io::Result<()> {
        if !self.header {
            self.header = true;
            writeln!(self.out, "cycle,channel,tone,param,value_hex")?;
        }
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl<W: Write> TraceSink for CsvSink<W> {
    fn value(&mut self, r: &TraceRow) -> io::Result<()> {
        self.ensure_header()?;
        writeln!(
            self.out,
            "{},{},{},{},{:010x}",
            r.cycle,
            r.channel,
            r.tone,
            r.param.name(),
            r.value
        )
    }

    fn event(&mut self, e: &TraceEvent) -> io::Result<()> {
        self.ensure_header()?;
        match e.channel {
            Some(c) => write!(self.out, "{},{c},", e.cycle)?,
            None => write!(self.out, "{},,", e.cycle)?,
        }
        writeln!(self.out, ",event:{},{:x}", e.name(), e.detail())
    }

    fn finish(&mut self) -> io::Result<()> {
        self.ensure_header()?;
        self.out.flush()
    }
}

pub const BINARY_MAGIC: &[u8; 4] = b"OCTR";
pub const BINARY_RECORD: usize = 16;

fn binary_record(cycle: u64, channel: u8, tone: u8, code: u8, value: u64) -> [u8; BINARY_RECORD] {
    let mut b = [0u8; BINARY_RECORD];
    b[..8].copy_from_slice(&cycle.to_le_bytes());
    b[8] = channel;
    b[9] = tone;
    b[10] = code;
    b[11..16].copy_from_slice(&value.to_le_bytes()[..5]);
    b
}

fn row_record(r: &TraceRow) -> [u8; BINARY_RECORD] {
    binary_record(r.cycle, r.channel, r.tone, r.param.code(), r.value)
}

fn event_record(e: &TraceEvent) -> [u8; BINARY_RECORD] {
    let code = 0x80
        | match e.kind {
            EventKind::Release => 0,
            EventKind::Sync { .. } => 1,
            EventKind::Branch { .. } => 2,
            EventKind::Underflow { .. } => 3,
        };
    binary_record(e.cycle, e.channel.unwrap_or(0xff), 0, code, e.detail())
}

/// Fixed 16-byte records after a 4-byte magic: cycle u64, channel u8,
/// tone u8, code u8 (0..=4 values, 0x80.. events), 40-bit value.
pub struct BinarySink<W: Write> {
    out: W,
    started: bool,
}

impl<W: Write> BinarySink<W> {
    pub fn new(out: W) -> BinarySink<W> {
        BinarySink {
            out,
            started: false,
        }
    }

    fn start(&mut self) -> io::Result<()> {
        if !self.started {
            self.started = true;
            self.out.write_all(BINARY_MAGIC)?;
        }
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl<W: Write> TraceSink for BinarySink<W> {
    fn value(&mut self, r: &TraceRow) -> io::Result<()> {
        self.start()?;
        self.out.write_all(&row_record(r))
    }
    fn event(&mut self, e: &TraceEvent) -> io::Result<()> {
        self.start()?;
        self.out.write_all(&event_record(e))
    }
    fn finish(&mut self) -> io::Result<()> {
        self.start()?;
        self.out.flush()
    }
}

/// Hash of the binary encoding, for cheap equality checks on long runs.
#[derive(Default)]
pub struct DigestSink {
    hasher: DefaultHasher,
    pub rows: u64,
    pub events: u64,
}

impl DigestSink {
    pub fn digest(&self) -> u64 {
        self.hasher.finish()
    }
}

impl TraceSink for DigestSink {
    fn value(&mut self, r: &TraceRow) -> io::Result<()> {
        self.rows += 1;
        self.hasher.write(&row_record(r));
        Ok(())
    }
    fn event(&mut self, e: &TraceEvent) -> io::Result<()> {
        self.events += 1;
        self.hasher.write(&event_record(e));
        Ok(())
    }
}

enum Message {
    Row(TraceRow),
    Event(TraceEvent),
}

/// Forwards to a sink running on its own thread through a bounded queue;
/// the simulator blocks when the queue is full.
pub struct ThreadedSink {
    tx: Option<SyncSender<Message>>,
    handle: Option<JoinHandle<io::Result<()>>>,
}

impl ThreadedSink {
    pub fn spawn<S: TraceSink + Send + 'static>(mut inner: S, bound: usize) -> ThreadedSink {
        let (tx, rx) = sync_channel::<Message>(bound);
        let handle = std::thread::spawn(move || {
            for m in rx {
                match m {
                    Message::Row(r) => inner.value(&r)?,
                    Message::Event(e) => inner.event(&e)?,
                }
            }
            inner.finish()
        });
        ThreadedSink {
            tx: Some(tx),
            handle: Some(handle),
        }
    }

    fn send(&mut self, m: Message) -> io::Result<()> {
        match &self.tx {
            Some(tx) if tx.send(m).is_ok() => Ok(()),
            _ => self.join(),
        }
    }

    fn join(&mut self) -> io::Result<()> {
        self.tx = None;
        match self.handle.take() {
            Some(h) => h
                .join()
                .map_err(|_| io::Error::other("trace writer panicked"))?,
            None => Err(io::Error::other("trace writer already stopped")),
        }
    }
}

impl TraceSink for ThreadedSink {
    fn value(&mut self, r: &TraceRow) -> io::Result<()> {
        self.send(Message::Row(*r))
    }
    fn event(&mut self, e: &TraceEvent) -> io::Result<()> {
        self.send(Message::Event(*e))
    }
    fn finish(&mut self) -> io::Result<()> {
        self.join()
    }
}
