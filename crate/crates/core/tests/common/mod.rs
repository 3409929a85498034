//! Shared generators for the integration suites.

#![allow(dead_code)]

use std::fmt::Write as _;
use std::sync::Arc;

use gatestream::compile::Compiled;
use gatestream::file::Program;
use gatestream::provider::{Calibration, Provider, Registry};
use gatestream::sim::{self, MeasurementSource, SimConfig, SimSummary, VecSink};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const QUBITS: usize = 7;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Calibration with short gates so that simulations stay small.
pub fn short_calibration() -> Calibration {
    Calibration {
        pi_cycles: 256,
        prepare_cycles: 512,
        measure_cycles: 512,
        ms_cycles: 2048,
        spline_cycles: 1024,
        ..Calibration::default()
    }
}

pub fn standard() -> Arc<Provider> {
    Arc::new(Provider::standard())
}

pub fn short_provider() -> Arc<Provider> {
    Arc::new(Provider::new(Registry::standard(), short_calibration()))
}

/// An angle with three decimals in [0, 2pi).
pub fn angle(rng: &mut ChaCha8Rng) -> String {
    format!("{:.3}", rng.gen_range(0..6283) as f64 / 1000.0)
}

/// One branch-free single-qubit gate statement.
pub fn simple_gate(rng: &mut ChaCha8Rng, qubits: usize) -> String {
    let q = rng.gen_range(0..qubits);
    match rng.gen_range(0..8) {
        0 => format!("Sx q[{q}]"),
        1 => format!("Sy q[{q}]"),
        2 => format!("Px q[{q}]"),
        3 => format!("Py q[{q}]"),
        4 => format!("Rx q[{q}] {}", angle(rng)),
        5 => format!("Ry q[{q}] {}", angle(rng)),
        6 => format!("Rz q[{q}] {}", angle(rng)),
        _ => format!("Idle q[{q}] {}", rng.gen_range(8..64)),
    }
}

fn drive(rng: &mut ChaCha8Rng, q: usize) -> String {
    match rng.gen_range(0..5) {
        0 => format!("Sx q[{q}]"),
        1 => format!("Sy q[{q}]"),
        2 => format!("Rx q[{q}] {}", angle(rng)),
        3 => format!("Ry q[{q}] {}", angle(rng)),
        _ => format!("Rz q[{q}] {}", angle(rng)),
    }
}

/// Label of `width` characters whose leftmost character is bit 0.
pub fn label(outcome: u32, width: u32) -> String {
    (0..width)
        .map(|i| if outcome >> i & 1 == 1 { '1' } else { '0' })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Circuit {
    pub source: String,
    /// Outcomes listed by each branch, in execution order.
    pub branches: Vec<Vec<u32>>,
    pub invocations: usize,
}

impl Circuit {
    /// A listed outcome for every branch.
    pub fn pick_outcomes(&self, rng: &mut ChaCha8Rng) -> Vec<u32> {
        self.branches
            .iter()
            .map(|os| os[rng.gen_range(0..os.len())])
            .collect()
    }
}

/// Random program over all channels: single-qubit gates, MS, splines with
/// 2 to 200 knots, parallel blocks, short loops and up to three branches.
pub fn random_circuit(rng: &mut ChaCha8Rng, max_gates: usize) -> Circuit {
    let mut s = format!("register q[{QUBITS}]\nprepare_all\n");
    let mut n = 1;
    let mut splines = 0;
    let mut branches = Vec::new();
    let target = rng.gen_range(10..=max_gates);
    while n < target {
        match rng.gen_range(0..20) {
            0 if splines < 6 => {
                splines += 1;
                let q = rng.gen_range(0..QUBITS);
                writeln!(s, "Spline q[{q}] {}", rng.gen_range(2..=200)).unwrap();
                n += 1;
            }
            1 => {
                let a = rng.gen_range(0..QUBITS);
                let b = (a + rng.gen_range(1..QUBITS)) % QUBITS;
                writeln!(s, "MS q[{a}] q[{b}]").unwrap();
                n += 1;
            }
            2 => {
                let a = rng.gen_range(0..QUBITS);
                let b = (a + rng.gen_range(1..QUBITS)) % QUBITS;
                writeln!(s, "<{} | {}>", drive(rng, a), drive(rng, b)).unwrap();
                n += 2;
            }
            3 if n + 8 < target => {
                let count = rng.gen_range(2..=4);
                let body: Vec<String> = (0..rng.gen_range(1..=2)).map(|_| simple_gate(rng, QUBITS)).collect();
                writeln!(s, "loop {count} {{ {} }}", body.join("\n")).unwrap();
                n += count * body.len();
            }
            4 if branches.len() < 3 && n + 8 < target => {
                s.push_str("measure_all\nbranch {\n");
                let mut listed = Vec::new();
                for o in 0..4u32 {
                    if rng.gen_bool(0.7) || (o == 3 && listed.is_empty()) {
                        let body: Vec<String> = (0..rng.gen_range(1..=3)).map(|_| simple_gate(rng, QUBITS)).collect();
                        writeln!(s, "'{}': {{ {} }}", label(o, 2), body.join("\n")).unwrap();
                        listed.push(o);
                    }
                }
                s.push_str("}\n");
                branches.push(listed);
                n += 4;
            }
            _ => {
                writeln!(s, "{}", simple_gate(rng, QUBITS)).unwrap();
                n += 1;
            }
        }
    }
    s.push_str("measure_all\n");
    Circuit {
        source: s,
        branches,
        invocations: n + 1,
    }
}

/// Runs a program to completion into memory.
pub fn simulate(program: &Program, measurements: &mut dyn MeasurementSource) -> (SimSummary, VecSink) {
    let mut sink = VecSink::default();
    let summary = sim::run(program, &SimConfig::default(), measurements, &mut sink).expect("simulation");
    (summary, sink)
}

/// Decompressed streams of every channel equal the pre-compression ones.
pub fn streams_match(c: &Compiled, outcomes: &[u32]) -> Result<(), String> {
    for ch in 0..gatestream::config::CHANNELS {
        let got = sim::expand_channel(c.program(), ch, outcomes).map_err(|e| e.to_string())?;
        let want = c
            .reference_stream(ch, outcomes)
            .ok_or_else(|| format!("channel {ch}: no reference stream"))?;
        if got != want {
            let at = got.iter().zip(&want).position(|(a, b)| a != b).unwrap_or(got.len().min(want.len()));
            return Err(format!(
                "channel {ch}: {} words vs {} expected, first mismatch at {at}",
                got.len(),
                want.len()
            ));
        }
    }
    Ok(())
}
