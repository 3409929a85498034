//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. `cargo test --test acceptance -- <substring>` runs a subset.

mod common;

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use gatestream::bench::{self, mutation_demo, CONTROLLER_SLOWDOWN};
use gatestream::compile::{compile, CompileOptions, Compiled, MutateMode, Selector};
use gatestream::config::{Param, Slot, CHANNELS, CLOCK_HZ, FTW_CLOCK_HZ, GLUT_ENTRY_BITS, GLUT_ID_BITS, PLUT_ADDR_BITS, PULSELET_BITS, SLOTS, WORD_MASK};
use gatestream::dds::{intensity_product, stark_frame_from_amplitude};
use gatestream::file::{Program, ProgramMeta};
use gatestream::jaqal::compile_tir;
use gatestream::lut::bytecode::{resolve, resolve_branch, Bytecode};
use gatestream::lut::program::Write;
use gatestream::lut::{LutImage, PulseManager};
use gatestream::provider::builders::envelope;
use gatestream::provider::remote::{Client, Server};
use gatestream::provider::wire::{self, Message};
use gatestream::provider::{Calibration, GateKey, Provider, Registry};
use gatestream::pulse::{nop, quantize_pulse, GateDefinition, ModulationNode, Pulse, PulseMetadata, PulseWords};
use gatestream::sched::{check_order, fifo_order, replay};
use gatestream::sim::{self, expand_channel, Fixed, Scripted, SimConfig, TraceParam, TraceRow, VecSink};
use gatestream::spline::{fit_natural_cubic, interpolate, quantize_segment, to_forward_difference, CubicSegment, FixedPointFormat};
use gatestream::word::PulseletWord;
use gatestream::compile_source;
use num_bigint::BigInt;
use num_rational::{BigRational, Rational64};
use num_traits::ToPrimitive;
use rand::Rng;

use common::{label, rng, short_calibration, short_provider, simple_gate, standard};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($arg)+));
        }
    };
}

type Check = fn() -> Outcome;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn main() -> ExitCode {
    let checks: [(&str, Check); 12] = [
        ("round-trip identity", round_trip),
        ("compression ratios", compression_ratios),
        ("bytecode density", bytecode_density),
        ("phase synchronization", phase_sync),
        ("virtual-Z equivalence", virtual_z),
        ("stark ramp", stark_ramp),
        ("spline engine", spline_engine),
        ("branching", branching),
        ("FIFO scheduling", fifo_scheduling),
        ("parser and TIR", parser_tir),
        ("mutation", mutation),
        ("remote provider", remote_provider),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let t = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = t.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {:>2} {name:<24} {secs:>7.2}s  {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name:<24} {secs:>7.2}s  {detail}", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}

// 1

fn round_trip() -> Outcome {
    let mut r = rng(1);
    let t = Instant::now();
    let mut words = 0usize;
    let mut branched = 0;
    for i in 0..200 {
        let circ = common::random_circuit(&mut r, 500);
        let c = compile_source(&circ.source, standard()).map_err(|e| format!("circuit {i}: {e}"))?;
        let restored = Program::from_bytes(&c.program().to_bytes()).map_err(|e| format!("circuit {i}: {e}"))?;
        ensure!(restored == *c.program(), "circuit {i}: file round trip changed the program");
        branched += !circ.branches.is_empty() as usize;
        let trials = if circ.branches.is_empty() { 1 } else { 3 };
        for _ in 0..trials {
            let outcomes = circ.pick_outcomes(&mut r);
            common::streams_match(&c, &outcomes).map_err(|e| format!("circuit {i} {outcomes:?}: {e}"))?;
            for ch in 0..CHANNELS {
                let got = expand_channel(&restored, ch, &outcomes).map_err(err)?;
                words += got.len();
                for w in &got {
                    ensure!(w.expand(ch as u8).stored() == *w, "circuit {i}: stored word does not survive expansion");
                }
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    ensure!(secs < 60.0, "took {secs:.1}s");
    Ok(format!("200 circuits ({branched} with branches), {words} words, 0 mismatches"))
}

// 2

/// A gate whose words are all distinct from every other gate's.
fn unique_registry() -> Registry {
    let mut r = Registry::empty();
    r.register("U", |args, _c| {
        let v = args[0].to_integer() as f64 + 1.0;
        let pulses = (0..CHANNELS as u8)
            .map(|ch| {
                let k = v * 8.0 + ch as f64;
                Pulse::with_cycles(ch, 64)
                    .set(Param::Amp, 0, ModulationNode::Scalar(k / 32767.0))
                    .set(Param::Amp, 1, ModulationNode::Scalar(-k / 32767.0))
                    .set(Param::Frq, 0, ModulationNode::Scalar(1e6 + k * 1e3))
                    .set(Param::Frq, 1, ModulationNode::Scalar(2e6 + k * 1e3))
                    .set(Param::Phs, 0, ModulationNode::Scalar(k * 1e-4))
                    .set(Param::Phs, 1, ModulationNode::Scalar(k * 2e-4))
                    .set(Param::Frm, 0, ModulationNode::Scalar(k * 1e-5))
                    .set(Param::Frm, 1, ModulationNode::Scalar(k * 2e-5))
            })
            .collect();
        Ok(GateDefinition {
            name: "U".into(),
            args: args.to_vec(),
            pulses,
        })
    });
    r
}

fn compression_ratios() -> Outcome {
    let gates = 400;
    let mut src = String::from("register q[1]\n");
    for v in 0..gates {
        writeln!(src, "U {v}").unwrap();
    }
    let p = Arc::new(Provider::new(unique_registry(), Calibration::default()));
    let c = compile_source(&src, p).map_err(err)?;
    let s = c.stats();
    let plut: usize = s.plut_words.iter().sum();
    let mlut: usize = s.mlut_entries.iter().sum();
    let glut: usize = s.glut_entries.iter().sum();
    ensure!(plut == gates * SLOTS * CHANNELS, "expected all-unique words, PLUT holds {plut}");
    ensure!(mlut == plut && s.references == plut, "references {} mlut {mlut} plut {plut}", s.references);
    ensure!(s.invocations as usize == gates && glut == gates * CHANNELS, "one GLUT entry per invocation expected");
    // Bits streamed versus bits stored, counted from table sizes.
    let addr_oracle = (mlut * PLUT_ADDR_BITS as usize) as f64 / (plut * PULSELET_BITS as usize) as f64;
    let gate_oracle = (s.invocations as usize * GLUT_ID_BITS as usize) as f64
        / (glut / CHANNELS * GLUT_ENTRY_BITS as usize) as f64;
    let (a, g) = (s.address_stage_ratio(), s.gate_stage_ratio());
    ensure!((a - 0.0469).abs() <= 1e-4 && (a - addr_oracle).abs() < 1e-12, "address stage {a} (oracle {addr_oracle})");
    ensure!((g - 0.3929).abs() <= 1e-4 && (g - gate_oracle).abs() < 1e-12, "gate stage {g} (oracle {gate_oracle})");
    Ok(format!("address stage {a:.4}, gate stage {g:.4} over {plut} unique words"))
}

// 3

fn bytecode_density() -> Outcome {
    let n: u64 = 10_000_000;
    let t = Instant::now();
    let c = compile_source(&format!("register q[1]\nloop {n} {{ Sx q[0] }}\n"), standard()).map_err(err)?;
    let compile_secs = t.elapsed().as_secs_f64();
    let s = c.stats();
    ensure!(s.invocations == n, "{} invocations", s.invocations);
    let mut count = 0u64;
    for item in c.program().bytecode.items() {
        item.map_err(err)?;
        count += 1;
    }
    ensure!(count == n, "bytecode decodes to {count} gates");
    let bytes = s.bytecode_bytes;
    let per_gate = s.bytes_per_gate();
    ensure!(bytes <= 128_000_000, "{bytes} bytes");
    ensure!(per_gate <= 1.5, "{per_gate:.4} B/gate");
    let secs = t.elapsed().as_secs_f64();
    ensure!(secs < 120.0, "took {secs:.1}s");
    Ok(format!(
        "{:.2} MB for 1e7 gates, {per_gate:.4} B/gate, compiled in {compile_secs:.2}s",
        bytes as f64 / 1e6
    ))
}

// 4

fn hz(ftw: u64) -> f64 {
    ftw as f64 * (FTW_CLOCK_HZ / (1u64 << 40) as f64)
}

fn turns(t: u64, ftw: u64) -> u64 {
    ((t as u128 * ftw as u128) % (1u128 << 40)) as u64
}

fn single_gate_program(name: &str, registry: Registry) -> Result<Compiled, String> {
    let provider = Arc::new(Provider::new(registry, Calibration::default()));
    let tir = compile_tir(&format!("register q[1]\n{name}\n")).map_err(err)?;
    compile(&tir, provider, CompileOptions::default()).map_err(err)
}

fn rows(sink: &VecSink, channel: u8, tone: u8, param: TraceParam) -> Vec<(u64, u64)> {
    sink.rows
        .iter()
        .filter(|r| r.channel == channel && r.tone == tone && r.param == param)
        .map(|r| (r.cycle, r.value))
        .collect()
}

fn phase_sync() -> Outcome {
    let mut r = rng(4);
    let mut checked = 0usize;
    for i in 0..1000 {
        let (fa, fb, f2) = (r.gen_range(0..1u64 << 39), r.gen_range(0..1u64 << 39), r.gen_range(1..1u64 << 39));
        let (t1, t2) = (r.gen_range(8..1500u64), r.gen_range(8..1500u64));
        let mut reg = Registry::empty();
        reg.register("Hop", move |args, _c| {
            let sync = PulseMetadata {
                sync: true,
                ..Default::default()
            };
            let seg = |ch: u8, cycles: u64, ftw: u64, meta: PulseMetadata| {
                Pulse::with_cycles(ch, cycles)
                    .set(Param::Frq, 0, ModulationNode::Scalar(hz(ftw)))
                    .set(Param::Phs, 0, ModulationNode::Scalar(0.0))
                    .meta(meta)
            };
            Ok(GateDefinition {
                name: "Hop".into(),
                args: args.to_vec(),
                pulses: vec![
                    seg(1, t1, fa, sync),
                    seg(1, t2, f2, sync),
                    seg(2, t1, fb, sync),
                    seg(2, t2, f2, sync),
                    // absolute phase: zero the accumulator at 0 Hz, then hop unsynced
                    seg(3, t1, 0, sync),
                    seg(3, t2, f2, PulseMetadata::default()),
                ],
            })
        });
        let c = single_gate_program("Hop", reg)?;
        let (summary, sink) = common::simulate(c.program(), &mut Fixed(0));
        let start = summary.releases[0];
        let hop = start + t1;
        let end = hop + t2;
        let ch1 = rows(&sink, 1, 0, TraceParam::Phase);
        let ch2 = rows(&sink, 2, 0, TraceParam::Phase);
        let ch3 = rows(&sink, 3, 0, TraceParam::Phase);
        ensure!(ch1.len() as u64 == t1 + t2, "tuple {i}: {} phase rows", ch1.len());
        for &(t, v) in &ch1 {
            let want = if t < hop { turns(t, fa) } else { turns(t, f2) };
            ensure!(v == want, "tuple {i}: channel 1 cycle {t}: {v:#x} != {want:#x}");
        }
        let after = |rs: &[(u64, u64)]| rs.iter().copied().filter(|&(t, _)| t >= hop && t < end).collect::<Vec<_>>();
        ensure!(after(&ch1) == after(&ch2), "tuple {i}: channels disagree after the synchronized hop");
        for &(t, v) in &ch3 {
            let want = if t < hop { 0 } else { turns(t - hop, f2) };
            ensure!(v == want, "tuple {i}: absolute phase at cycle {t}: {v:#x} != {want:#x}");
        }
        checked += ch1.len() + ch3.len();
    }
    Ok(format!("1000 tuples, {checked} phase samples, 0 LSB error"))
}

// 5

const DRIVES: [&str; 6] = ["Sx", "Sy", "Px", "Py", "Rx", "Ry"];

/// Registry where `<G>V q [theta] delta` is gate G with its phase word
/// rebased by `delta` phase LSBs and the frame switched off.
fn rebasing_registry() -> Registry {
    let mut reg = Registry::standard();
    for base in DRIVES {
        let std = Registry::standard();
        reg.register(&format!("{base}V"), move |args, c| {
            let (delta, rest) = args.split_last().ok_or("missing delta")?;
            let mut d = std.build(&GateKey::new(base, rest.to_vec()), c).map_err(err)?;
            let fmt = FixedPointFormat::of(Param::Phs);
            let slot = Slot::new(Param::Phs, 0).index();
            for p in &mut d.pulses {
                if p.metadata.frame_apply_mask & 1 == 0 {
                    continue;
                }
                let phase = match p.slots[slot] {
                    ModulationNode::Scalar(v) => v,
                    _ => return Err("expected a constant phase".into()),
                };
                let field = (fmt.encode(phase).map_err(err)? + delta.to_integer() as u64) & WORD_MASK;
                p.slots[slot] = ModulationNode::Scalar(field as f64 * fmt.lsb);
                p.metadata.frame_apply_mask = 0;
            }
            Ok(d)
        });
    }
    reg
}

/// Hardware circuit with virtual Z gates and its software-rebased twin.
fn vz_pair(r: &mut impl Rng) -> Result<(String, String), String> {
    let frm = FixedPointFormat::of(Param::Frm);
    let mut frame = [0u64; 3];
    let mut hw = String::from("register q[3]\n");
    let mut sw = hw.clone();
    for _ in 0..r.gen_range(8..24) {
        let q = r.gen_range(0..3);
        if r.gen_bool(0.4) {
            let k = r.gen_range(0..6283);
            let theta = Rational64::new(k, 1000).to_f64().unwrap();
            frame[q] = (frame[q] + frm.encode(theta).map_err(err)?) & WORD_MASK;
            writeln!(hw, "Rz q[{q}] {:.3}", k as f64 / 1000.0).unwrap();
            writeln!(sw, "Idle q[{q}] 8").unwrap();
        } else {
            let g = DRIVES[r.gen_range(0..DRIVES.len())];
            let arg = if g.starts_with('R') {
                format!(" {:.3}", r.gen_range(0..6283) as f64 / 1000.0)
            } else {
                String::new()
            };
            writeln!(hw, "{g} q[{q}]{arg}").unwrap();
            writeln!(sw, "{g}V q[{q}]{arg} {}", frame[q]).unwrap();
        }
    }
    Ok((hw, sw))
}

fn comparable(sink: &VecSink) -> Vec<TraceRow> {
    sink.rows
        .iter()
        .filter(|r| !matches!(r.param, TraceParam::Slot(Param::Phs | Param::Frm)))
        .copied()
        .collect()
}

fn virtual_z() -> Outcome {
    let mut r = rng(5);
    let cal = short_calibration();
    let hw_provider = Arc::new(Provider::new(Registry::standard(), cal.clone()));
    let sw_provider = Arc::new(Provider::new(rebasing_registry(), cal));
    let mut phase_rows = 0;
    for i in 0..100 {
        let (hw, sw) = vz_pair(&mut r)?;
        let a = compile_source(&hw, hw_provider.clone()).map_err(err)?;
        let b = compile_source(&sw, sw_provider.clone()).map_err(err)?;
        let (_, ta) = common::simulate(a.program(), &mut Fixed(0));
        let (_, tb) = common::simulate(b.program(), &mut Fixed(0));
        let (ra, rb) = (comparable(&ta), comparable(&tb));
        ensure!(ra.len() == rb.len(), "circuit {i}: {} vs {} rows", ra.len(), rb.len());
        if let Some(k) = ra.iter().zip(&rb).position(|(x, y)| x != y) {
            return Err(format!("circuit {i}: first difference {:?} vs {:?}", ra[k], rb[k]));
        }
        phase_rows += ra.iter().filter(|r| r.param == TraceParam::Phase).count();
    }

    // Rz inside branch cases must not multiply downstream entries.
    let base = "register q[2]\nSx q[0]\nmeasure_all\nbranch {\n'00': { Sx q[0] }\n'10': { Sy q[0] }\n}\nSx q[1]\nPx q[0]\nSy q[0]\n";
    let with_rz = base
        .replace("{ Sx q[0] }", "{ Sx q[0]\nRz q[0] 0.3 }")
        .replace("{ Sy q[0] }", "{ Sy q[0]\nRz q[0] 1.1 }");
    let (tb, tr) = (compile_tir(base).map_err(err)?, compile_tir(&with_rz).map_err(err)?);
    let non_rz = |t: &gatestream::jaqal::Tir| t.gates.iter().filter(|g| g.name != "Rz").count();
    ensure!(non_rz(&tr) == tb.gates.len(), "gate table grew from {} to {}", tb.gates.len(), non_rz(&tr));
    let (cb, cr) = (compile_source(base, standard()).map_err(err)?, compile_source(&with_rz, standard()).map_err(err)?);
    let slices = |c: &Compiled| (0..c.stats().slices as u16).filter(|&id| !c.slice_gates(id).contains("Rz")).count();
    ensure!(slices(&cr) == cb.stats().slices, "downstream slices {} vs {}", slices(&cr), cb.stats().slices);
    Ok(format!(
        "100 circuits bit-identical ({phase_rows} phase rows); branch+Rz gate table {} entries as baseline",
        tb.gates.len()
    ))
}

// 6

fn stark_ramp() -> Outcome {
    let mut r = rng(6);
    let phs = FixedPointFormat::of(Param::Phs);
    let mut worst = Vec::new();
    for n in [1_000u64, 10_000, 100_000] {
        let f = r.gen_range(1u64 << 30..1u64 << 38);
        let d = r.gen_range(10_000u64..100_000_000);
        let mut reg = Registry::empty();
        reg.register("Ramp", move |args, _c| {
            let framed = PulseMetadata {
                frame_apply_mask: 1,
                ..Default::default()
            };
            let end = (d as f64 * n as f64) * phs.lsb;
            Ok(GateDefinition {
                name: "Ramp".into(),
                args: args.to_vec(),
                pulses: vec![
                    Pulse::with_cycles(1, n)
                        .set(Param::Frq, 0, ModulationNode::Scalar(hz(f)))
                        .set(Param::Phs, 0, ModulationNode::Scalar(0.0))
                        .set(Param::Frm, 0, ModulationNode::Spline(vec![0.0, end]))
                        .meta(framed),
                    Pulse::with_cycles(2, n)
                        .set(Param::Frq, 0, ModulationNode::Scalar(hz(f + d)))
                        .set(Param::Phs, 0, ModulationNode::Scalar(0.0)),
                ],
            })
        });
        let c = single_gate_program("Ramp", reg)?;
        let (_, sink) = common::simulate(c.program(), &mut Fixed(0));
        let (a, b) = (rows(&sink, 1, 0, TraceParam::Phase), rows(&sink, 2, 0, TraceParam::Phase));
        ensure!(a.len() as u64 == n && b.len() as u64 == n, "ramp {n}: missing rows");
        let mut max = 0i64;
        for ((ta, va), (tb, vb)) in a.iter().zip(&b) {
            ensure!(ta == tb, "ramp {n}: cycles out of step");
            let diff = (((va.wrapping_sub(*vb) & WORD_MASK) << 24) as i64) >> 24;
            max = max.max(diff.abs());
        }
        ensure!(max as u64 <= n, "ramp {n}: {max} LSB apart");
        worst.push(format!("N={n}: {max} LSB"));
    }

    let mut rel = 0.0f64;
    for _ in 0..200 {
        let k = r.gen_range(2..300);
        let samples: Vec<f64> = (0..k).map(|_| r.gen_range(0.0..1.0)).collect();
        let cycles = r.gen_range(8..200_000u64);
        let scale = r.gen_range(1e2..1e5);
        let ModulationNode::Spline(knots) = stark_frame_from_amplitude(&samples, scale, cycles) else {
            return Err("expected a spline".into());
        };
        rel = rel.max(trapezoid_error(&knots, &samples, scale, cycles));
    }
    let cal = Calibration::default();
    let ms = Registry::standard()
        .build(&GateKey::new("MS", vec![0.into(), 1.into()]), &cal)
        .map_err(err)?;
    let profile = envelope(cal.ms_amp, cal.ms_knots);
    let intensity = intensity_product(&profile, &profile);
    let ModulationNode::Spline(knots) = ms.pulses[1].slot(Param::Frm, 0).clone() else {
        return Err("MS carries no frame ramp".into());
    };
    rel = rel.max(trapezoid_error(&knots, &intensity, cal.stark_scale, cal.ms_cycles));
    ensure!(rel <= 1e-12, "trapezoid relative error {rel:e}");
    Ok(format!("{}; trapezoid knots within {rel:.1e}", worst.join(", ")))
}

/// Largest error of `knots` against a running trapezoid sum, relative to
/// the largest knot.
fn trapezoid_error(knots: &[f64], samples: &[f64], scale: f64, cycles: u64) -> f64 {
    let h = cycles as f64 / CLOCK_HZ / (samples.len() - 1) as f64;
    let mut acc = 0.0;
    let mut oracle = vec![0.0];
    for i in 1..samples.len() {
        acc += (samples[i - 1] + samples[i]) * h / 2.0;
        oracle.push(acc * scale);
    }
    let peak = oracle.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    if knots.len() != oracle.len() {
        return f64::INFINITY;
    }
    knots
        .iter()
        .zip(&oracle)
        .map(|(a, b)| (a - b).abs() / peak)
        .fold(0.0, f64::max)
}

// 7

fn spline_engine() -> Outcome {
    let mut r = rng(7);
    let mut worst = 0.0f64;
    let mut knot_err = 0.0f64;
    let mut cycles_total = 0u64;
    for i in 0..10_000 {
        let param = Param::ALL[i % 4];
        let k = r.gen_range(2..10);
        // Smooth knot sets: a random walk moving at most an eighth of the
        // parameter's range per knot.
        let (lo, hi) = match param {
            Param::Amp => (-0.6, 0.6),
            Param::Frq => (5e7, 3e8),
            _ => (-std::f64::consts::PI, std::f64::consts::PI),
        };
        let mut x = r.gen_range(lo..hi);
        let knots: Vec<f64> = (0..k)
            .map(|_| {
                let v = x;
                x = (x + r.gen_range(-0.125..0.125) * (hi - lo)).clamp(lo, hi);
                v
            })
            .collect();
        let segs = fit_natural_cubic(&knots).map_err(err)?;
        let scale = knots.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (j, s) in segs.iter().enumerate() {
            knot_err = knot_err
                .max((s.eval(0.0) - knots[j]).abs() / scale)
                .max((s.eval(1.0) - knots[j + 1]).abs() / scale);
        }
        let mut seg = segs[r.gen_range(0..segs.len())].clone();
        seg.cycles = (8f64 * 12_500f64.powf(r.gen_range(0.0..1.0))) as u64;
        cycles_total += seg.cycles;
        let fd = quantize_segment(&seg, param).map_err(|e| format!("segment {i}: {e}"))?;
        let out = interpolate(&fd).map_err(|e| format!("segment {i}: {e}"))?;
        let fmt = FixedPointFormat::of(param);
        for (c, &v) in out.iter().enumerate() {
            let exact = fmt.to_lsb(seg.eval(c as f64 / seg.cycles as f64));
            let got = fmt.field_value(v) as f64;
            let e = if param.wraps() {
                let full = (1u64 << 40) as f64;
                let d = (got - exact).rem_euclid(full);
                d.min(full - d)
            } else {
                (got - exact).abs()
            };
            worst = worst.max(e);
        }
        ensure!(worst <= 2.0, "segment {i} ({param:?}, {} cycles): {worst:.3} LSB", seg.cycles);
    }
    ensure!(knot_err <= 1e-12, "knots missed by {knot_err:e}");

    // Forward differences reproduce the cubic exactly in rationals.
    let q = |r: &mut rand_chacha::ChaCha8Rng| BigRational::new(BigInt::from(r.gen_range(-1000i64..1000)), BigInt::from(r.gen_range(1i64..97)));
    for i in 0..200 {
        let seg = CubicSegment {
            a: q(&mut r),
            b: q(&mut r),
            c: q(&mut r),
            d: q(&mut r),
            cycles: r.gen_range(1..300),
        };
        let fd = to_forward_difference(&seg);
        let (mut u0, mut u1, mut u2) = (fd.u0.clone(), fd.u1.clone(), fd.u2.clone());
        let n = BigRational::from_integer(BigInt::from(seg.cycles));
        for k in 0..=seg.cycles {
            let tau = BigRational::from_integer(BigInt::from(k)) / &n;
            ensure!(u0 == seg.eval(tau), "rational segment {i} differs at step {k}");
            u0 += &u1;
            u1 += &u2;
            u2 += &fd.u3;
        }
    }
    Ok(format!(
        "10^4 segments ({cycles_total} cycles) within {worst:.3} LSB; knots within {knot_err:.1e}; 200 rational segments exact"
    ))
}

// 8

/// Random `(branch program, straight-line program per outcome)`.
fn branch_pair(r: &mut impl Rng) -> (String, Vec<String>) {
    let mut cr = rng(r.gen());
    let prefix: Vec<String> = (0..r.gen_range(1..4)).map(|_| simple_gate(&mut cr, 3)).collect();
    let suffix: Vec<String> = (0..r.gen_range(1..4)).map(|_| simple_gate(&mut cr, 3)).collect();
    let bodies: Vec<Vec<String>> = (0..4)
        .map(|_| (0..cr.gen_range(1..4)).map(|_| simple_gate(&mut cr, 3)).collect())
        .collect();
    let head = format!("register q[3]\n{}\nmeasure_all\n", prefix.join("\n"));
    let tail = format!("{}\n", suffix.join("\n"));
    let mut branch = format!("{head}branch {{\n");
    for (o, b) in bodies.iter().enumerate() {
        writeln!(branch, "'{}': {{ {} }}", label(o as u32, 2), b.join("\n")).unwrap();
    }
    branch.push_str("}\n");
    branch.push_str(&tail);
    let straight = bodies.iter().map(|b| format!("{head}{}\n{tail}", b.join("\n"))).collect();
    (branch, straight)
}

/// Slot output sequences keyed by (channel, tone, parameter), cycles dropped.
fn slot_series(sink: &VecSink) -> BTreeMap<(u8, u8, u8), Vec<u64>> {
    let mut m: BTreeMap<(u8, u8, u8), Vec<u64>> = BTreeMap::new();
    for row in &sink.rows {
        if let TraceParam::Slot(p) = row.param {
            m.entry((row.channel, row.tone, p as u8)).or_default().push(row.value);
        }
    }
    m
}

fn branching() -> Outcome {
    let mut checked = 0u64;
    for shift in 0..=8u32 {
        for base in 0..1u16 << 11 {
            for outcome in 0..16u32 {
                let oracle = ((base as u32 | (outcome << shift) | 0x800) & 0xfff) as u16;
                ensure!(resolve(base, outcome, shift) == oracle, "A={base:#x} O={outcome} S={shift}");
                ensure!(resolve_branch(base, outcome, shift, 12) == oracle, "A={base:#x} O={outcome} S={shift}");
                checked += 1;
            }
        }
    }
    let mut r = rng(8);
    let provider = short_provider();
    for i in 0..30 {
        let (branch, straight) = branch_pair(&mut r);
        let c = compile_source(&branch, provider.clone()).map_err(|e| format!("circuit {i}: {e}"))?;
        for (o, s) in straight.iter().enumerate() {
            let lin = compile_source(s, provider.clone()).map_err(err)?;
            let (sb, tb) = common::simulate(c.program(), &mut Fixed(o as u32));
            let (_, tl) = common::simulate(lin.program(), &mut Fixed(0));
            ensure!(sb.branches.len() == 1, "circuit {i}: branch not taken");
            ensure!(slot_series(&tb) == slot_series(&tl), "circuit {i} outcome {o}: traces differ");
            for ch in 0..CHANNELS {
                let a = expand_channel(c.program(), ch, &[o as u32]).map_err(err)?;
                let b = expand_channel(lin.program(), ch, &[]).map_err(err)?;
                ensure!(a == b, "circuit {i} outcome {o}: channel {ch} words differ");
            }
        }
    }
    Ok(format!("{checked} resolutions exact; 30 circuits x 4 outcomes equal their straight-line traces"))
}

// 9

/// One pulse whose AMP slot plays five times as many words as its PHS slot.
fn asymmetric_pulse(channel: u8) -> Pulse {
    let knots = |k: usize, peak: f64| -> Vec<f64> {
        (0..k).map(|i| peak * (0.3 + 0.2 * (i as f64 * 0.37).sin())).collect()
    };
    Pulse::with_cycles(channel, 800)
        .set(Param::Amp, 0, ModulationNode::Spline(knots(101, 0.8)))
        .set(Param::Phs, 0, ModulationNode::Spline(knots(21, 2.0)))
        .set(Param::Frq, 0, ModulationNode::Scalar(1e6))
}

fn serial(pw: &PulseWords, order: &[(usize, usize)]) -> (Vec<PulseletWord>, Vec<(usize, u64)>) {
    let words: Vec<PulseletWord> = order.iter().map(|&(s, i)| pw.slots[s][i]).collect();
    let durations = order.iter().map(|&(s, i)| (s, pw.slots[s][i].duration)).collect();
    (words, durations)
}

/// Single-gate program whose channel 0 streams `words` in the given order.
fn hand_program(words: &[PulseletWord], cycles: u64) -> Result<Program, String> {
    let mut image = LutImage::default();
    for ch in 0..CHANNELS {
        let mut m = PulseManager::new(ch as u8);
        if ch == 0 {
            m.register_gate(0, words).map_err(err)?;
        } else {
            let pad = quantize_pulse(&nop(ch as u8, cycles).map_err(err)?).map_err(err)?;
            let order = fifo_order(&pad.slots);
            m.register_gate(0, &serial(&pad, &order).0).map_err(err)?;
        }
        image.channels[ch] = m.into_lut();
    }
    let mut bytecode = Bytecode::new();
    bytecode.push_gate(0);
    Ok(Program {
        image,
        bytecode,
        meta: ProgramMeta::default(),
    })
}

fn fifo_scheduling() -> Outcome {
    let depth = 16;
    let config = SimConfig {
        fifo_depth: depth,
        ..SimConfig::default()
    };
    let pw = quantize_pulse(&asymmetric_pulse(0)).map_err(err)?;
    let (amp, phs) = (Slot::new(Param::Amp, 0).index(), Slot::new(Param::Phs, 0).index());
    ensure!(pw.slots[amp].len() == 5 * pw.slots[phs].len(), "expected 5:1, got {}:{}", pw.slots[amp].len(), pw.slots[phs].len());

    let good = fifo_order(&pw.slots);
    let (words, durations) = serial(&pw, &good);
    check_order(&durations, depth).map_err(err)?;
    ensure!(replay(&durations, depth).underflow.is_none(), "replay underflows the scheduler order");
    let report = sim::verify_schedule(&hand_program(&words, 800)?, &config, &mut Fixed(0)).map_err(err)?;
    ensure!(report.clean(), "scheduler order faults: {report:?}");

    // Adversarial: every PHS word ahead of the second AMP word.
    let mut bad: Vec<(usize, usize)> = (0..SLOTS).filter(|&s| s != amp && s != phs).map(|s| (s, 0)).collect();
    bad.push((amp, 0));
    bad.extend((0..pw.slots[phs].len()).map(|i| (phs, i)));
    bad.extend((1..pw.slots[amp].len()).map(|i| (amp, i)));
    let (words, durations) = serial(&pw, &bad);
    ensure!(check_order(&durations, depth).is_err(), "analytic check accepted the adversarial order");
    let oracle = replay(&durations, depth).underflow.ok_or("replay found no underflow")?;
    let report = sim::verify_schedule(&hand_program(&words, 800)?, &config, &mut Fixed(0)).map_err(err)?;
    let (cycle, channel, slot) = report.underflow.ok_or("simulator found no underflow")?;
    ensure!(
        cycle == oracle.0 && channel == 0 && slot.index() == oracle.1,
        "simulator underflow at cycle {cycle} slot {slot}, replay says cycle {} slot {}",
        oracle.0,
        oracle.1
    );

    // Compiled circuits, the asymmetric gate included.
    let mut reg = Registry::standard();
    reg.register("Asym", |args, _c| {
        let ch = gatestream::provider::builders::qubit_channel(args, 0)?;
        Ok(GateDefinition {
            name: "Asym".into(),
            args: args.to_vec(),
            pulses: vec![asymmetric_pulse(ch)],
        })
    });
    let provider = Arc::new(Provider::new(reg, short_calibration()));
    let mut r = rng(9);
    let mut circuits = 0;
    let mut min_headroom = usize::MAX;
    for i in 0..25 {
        let mut circ = common::random_circuit(&mut r, 80);
        circ.source.push_str("Asym q[2]\n<Sx q[0] | Asym q[4]>\nMS q[1] q[3]\nSpline q[5] 200\n");
        let c = compile_source(&circ.source, provider.clone()).map_err(|e| format!("circuit {i}: {e}"))?;
        let outcomes = circ.pick_outcomes(&mut r);
        let report = sim::verify_schedule(c.program(), &config, &mut Scripted::new(outcomes)).map_err(err)?;
        ensure!(report.clean(), "circuit {i}: {:?} {:?}", report.underflow, report.deadlock);
        min_headroom = min_headroom.min(report.min_headroom.iter().flatten().copied().min().unwrap_or(0));
        circuits += 1;
    }
    Ok(format!(
        "{circuits} circuits clean at depth {depth}; adversarial order underflows at cycle {} (slot {}), matching replay",
        oracle.0,
        Slot::from_index(oracle.1)
    ))
}

// 10

/// A random program of `statements` top-level statements and its expansion
/// computed by walking the generator's own structure.
fn tir_program(r: &mut impl Rng, statements: usize) -> (String, Vec<(String, Vec<Rational64>)>) {
    let consts: Vec<Rational64> = (0..6).map(|i| Rational64::new(i + 1, 8)).collect();
    let mut src = String::from("register q[5]\n");
    for (i, c) in consts.iter().enumerate() {
        writeln!(src, "let c{i} {}", *c.numer() as f64 / *c.denom() as f64).unwrap();
    }
    // macro m<j> a b { G<x> a b ; G<y> a }
    let macros: Vec<(usize, usize)> = (0..4).map(|_| (r.gen_range(0..12), r.gen_range(0..12))).collect();
    for (j, (x, y)) in macros.iter().enumerate() {
        writeln!(src, "macro m{j} a b {{ G{x} a b\nG{y} a }}").unwrap();
    }
    let mut naive = Vec::new();
    let q = |v: usize| Rational64::from_integer(v as i64);
    let gate = |r: &mut dyn rand::RngCore, naive: &mut Vec<(String, Vec<Rational64>)>| -> String {
        let name = format!("G{}", r.gen_range(0..12));
        let qubit = r.gen_range(0..5);
        let (text, value) = if r.gen_bool(0.5) {
            let i = r.gen_range(0..consts.len());
            (format!("c{i}"), consts[i])
        } else {
            let k = r.gen_range(0..16);
            (format!("{}", k as f64 / 8.0), Rational64::new(k, 8))
        };
        naive.push((name.clone(), vec![q(qubit), value]));
        format!("{name} q[{qubit}] {text}")
    };
    for _ in 0..statements {
        match r.gen_range(0..10) {
            0 => {
                let j = r.gen_range(0..macros.len());
                let qubit = r.gen_range(0..5);
                let k = r.gen_range(0..16);
                let v = Rational64::new(k, 8);
                writeln!(src, "m{j} q[{qubit}] {}", k as f64 / 8.0).unwrap();
                let (x, y) = macros[j];
                naive.push((format!("G{x}"), vec![q(qubit), v]));
                naive.push((format!("G{y}"), vec![q(qubit)]));
            }
            1 => {
                let count = r.gen_range(1..5);
                let mut once = Vec::new();
                let body: Vec<String> = (0..r.gen_range(1..3)).map(|_| gate(r, &mut once)).collect();
                writeln!(src, "loop {count} {{ {} }}", body.join("\n")).unwrap();
                for _ in 0..count {
                    naive.extend(once.iter().cloned());
                }
            }
            _ => {
                let g = gate(r, &mut naive);
                writeln!(src, "{g}").unwrap();
            }
        }
    }
    (src, naive)
}

fn parser_tir() -> Outcome {
    let mut r = rng(10);
    let mut unique = 0;
    for i in 0..5 {
        let (src, naive) = tir_program(&mut r, 10_000);
        let tir = compile_tir(&src).map_err(|e| format!("program {i}: {e}"))?;
        let distinct: HashSet<&(String, Vec<Rational64>)> = naive.iter().collect();
        ensure!(tir.gates.len() == distinct.len(), "program {i}: {} entries, naive walk finds {}", tir.gates.len(), distinct.len());
        let expanded = tir.expand();
        ensure!(expanded.len() == naive.len(), "program {i}: {} invocations vs {}", expanded.len(), naive.len());
        for (k, (id, (name, args))) in expanded.iter().zip(&naive).enumerate() {
            let g = tir.gate(*id);
            ensure!(g.name == *name && g.args == *args, "program {i}: invocation {k} is {} {:?}, expected {name} {args:?}", g.name, g.args);
        }
        unique += distinct.len();
    }

    let sizes: Vec<usize> = (1..=10).map(|k| 8 * k).collect();
    let mut best = f64::INFINITY;
    let mut fit = None;
    for _ in 0..3 {
        let samples = bench::bench_parse(&sizes, 40, 10);
        let pts = bench::points(&samples);
        let f = bench::linear_fit(&pts);
        let dev = f.max_relative_deviation(&pts);
        if dev < best {
            best = dev;
            fit = Some(f);
        }
        if best < 0.2 {
            break;
        }
    }
    let f = fit.unwrap();
    ensure!(best < 0.2, "parse cost deviates {:.1}% from its linear fit", best * 100.0);
    Ok(format!(
        "5 x 10^4-statement programs match the naive walk ({unique} unique gates); parse {:.3} us/gate + {:.2} us, max deviation {:.1}%",
        f.slope * 1e6,
        f.intercept * 1e6,
        best * 100.0
    ))
}

// 11

fn budget() -> Duration {
    let ms = std::env::var("GATESTREAM_MUTATION_BUDGET_MS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(50.0);
    Duration::from_secs_f64(ms / 1e3)
}

fn scaled(def: &GateDefinition, k: f64) -> GateDefinition {
    let mut d = def.clone();
    for p in &mut d.pulses {
        for tone in 0..2 {
            let s = Slot::new(Param::Amp, tone).index();
            p.slots[s] = match &p.slots[s] {
                ModulationNode::Scalar(v) => ModulationNode::Scalar(v * k),
                ModulationNode::Spline(v) => ModulationNode::Spline(v.iter().map(|x| x * k).collect()),
                other => other.clone(),
            };
        }
    }
    d
}

/// Registry that answers `key` with `def` and everything else as usual.
fn overriding(key: GateKey, def: GateDefinition, calibration: &Calibration) -> Arc<Provider> {
    let mut reg = Registry::standard();
    let std = Registry::standard();
    let name = key.name.clone();
    reg.register(&name, move |args, c| {
        if args == key.args.as_slice() {
            Ok(def.clone())
        } else {
            std.build(&GateKey::new(key.name.clone(), args.to_vec()), c).map_err(err)
        }
    });
    Arc::new(Provider::new(reg, calibration.clone()))
}

fn mutation() -> Outcome {
    // Shared global-beam amplitude over a class of ten gates.
    let (demo, report) = mutation_demo(0, 10).map_err(err)?;
    ensure!(report.plut_writes() == 1 && report.writes.len() == 1, "class mutation wrote {:?}", report.writes);
    ensure!(report.keys.len() == 10, "{} gates patched", report.keys.len());
    let mut cal = Calibration::default();
    cal.global_amp *= 0.9;
    let fresh = compile(
        &compile_tir(&bench::class_circuit(10)).map_err(err)?,
        Arc::new(Provider::new(bench::class_registry(0), cal)),
        CompileOptions::default(),
    )
    .map_err(err)?;
    for ch in 0..CHANNELS {
        ensure!(
            expand_channel(demo.program(), ch, &[]).map_err(err)? == expand_channel(fresh.program(), ch, &[]).map_err(err)?,
            "class mutation: channel {ch} differs from recompilation"
        );
    }

    // Random mutations against a full recompile.
    let mut r = rng(11);
    let mut total_writes = 0;
    for i in 0..100 {
        let mut src = String::from("register q[4]\n");
        for _ in 0..r.gen_range(5..40) {
            match r.gen_range(0..10) {
                0 => writeln!(src, "MS q[0] q[{}]", r.gen_range(1..4)).unwrap(),
                1 => writeln!(src, "Spline q[{}] {}", r.gen_range(0..4), r.gen_range(2..40)).unwrap(),
                _ => writeln!(src, "{}", simple_gate(&mut r, 4)).unwrap(),
            }
        }
        let cal = short_calibration();
        let provider = Arc::new(Provider::new(Registry::standard(), cal.clone()));
        let tir = compile_tir(&src).map_err(err)?;
        let mut c = compile(&tir, provider.clone(), CompileOptions::default()).map_err(err)?;
        let before: Vec<HashSet<_>> = (0..CHANNELS)
            .map(|ch| c.program().image.channels[ch].plut.iter().copied().collect())
            .collect();
        let g = &tir.gates[r.gen_range(0..tir.gates.len())];
        let key = GateKey::new(g.name.clone(), g.args.clone());
        let new_def = scaled(&*provider.fetch(&key).map_err(err)?, r.gen_range(0.5..0.95));
        let report = c
            .mutate(&Selector::Key(key.clone()), Some(new_def.clone()), MutateMode::Remap)
            .map_err(|e| format!("mutation {i} ({key}): {e}"))?;
        let oracle = compile(&tir, overriding(key.clone(), new_def, &cal), CompileOptions::default()).map_err(err)?;
        for (ch, before) in before.iter().enumerate().take(CHANNELS) {
            let got = expand_channel(c.program(), ch, &[]).map_err(err)?;
            let want = expand_channel(oracle.program(), ch, &[]).map_err(err)?;
            ensure!(got == want, "mutation {i} ({key}): channel {ch} differs from recompilation");
            // Minimal: each written PLUT word is new, needed and written once.
            let needed: HashSet<_> = want.iter().copied().filter(|w| !before.contains(w)).collect();
            let written: Vec<_> = report
                .writes
                .iter()
                .filter_map(|w| match w {
                    Write::Plut { channel, word, .. } if *channel as usize == ch => Some(*word),
                    _ => None,
                })
                .collect();
            let distinct: HashSet<_> = written.iter().copied().collect();
            ensure!(
                distinct.len() == written.len() && distinct == needed,
                "mutation {i} ({key}): channel {ch} wrote {} PLUT words, {} needed",
                written.len(),
                needed.len()
            );
        }
        for w in &report.writes {
            if let Write::Glut { id, .. } = w {
                ensure!(report.entries.contains(id), "mutation {i}: GLUT write to untouched entry {id}");
            }
        }
        total_writes += report.writes.len();
    }

    let (_, big) = mutation_demo(150, 10).map_err(err)?;
    let limit = budget();
    let t = &big.timings;
    ensure!(big.plut_writes() > 0, "150-knot mutation wrote nothing");
    ensure!(t.total < limit, "150-knot mutation took {:?} (budget {limit:?})", t.total);
    Ok(format!(
        "class patch = 1 PLUT word; 100 random patches minimal ({total_writes} writes); 150 knots: fetch {:.2} ms, fit+map {:.2} ms, encode {:.3} ms, total {:.2} ms (budget {} ms)",
        t.fetch.as_secs_f64() * 1e3,
        t.fit_map.as_secs_f64() * 1e3,
        t.encode.as_secs_f64() * 1e3,
        t.total.as_secs_f64() * 1e3,
        limit.as_millis()
    ))
}

// 12

fn sample_args(name: &str) -> Option<Vec<Vec<Rational64>>> {
    let i = |v: &[i64]| v.iter().map(|&x| Rational64::from_integer(x)).collect::<Vec<_>>();
    Some(match name {
        "prepare_all" | "measure_all" => vec![vec![]],
        "Sx" | "Sy" | "Px" | "Py" => vec![i(&[0]), i(&[6])],
        "Rx" | "Ry" | "Rz" => vec![vec![1.into(), Rational64::new(1, 3)], vec![5.into(), Rational64::new(-7, 2)]],
        "MS" => vec![i(&[0, 1]), i(&[2, 6])],
        "Spline" => vec![i(&[0, 2]), i(&[3, 150])],
        "Idle" => vec![i(&[0]), i(&[2, 40])],
        _ => return None,
    })
}

fn remote_provider() -> Outcome {
    let local = Provider::standard();
    let server = Server::start("127.0.0.1:0", Arc::new(Provider::standard()), Duration::ZERO).map_err(err)?;
    let mut client = Client::connect(server.addr(), Duration::from_secs(5)).map_err(err)?;
    let mut names: Vec<String> = local.registry().names().map(str::to_string).collect();
    names.sort();
    let mut compared = 0;
    for name in &names {
        let cases = sample_args(name).ok_or_else(|| format!("no sample arguments for builder {name}"))?;
        for args in cases {
            let key = GateKey::new(name.clone(), args);
            let here = local.fetch(&key).map_err(err)?;
            let there = client.fetch(&key).map_err(err)?;
            ensure!(
                wire::encode(&Message::Def(here.as_ref().clone())) == wire::encode(&Message::Def(there.clone())),
                "{key}: definitions differ on the wire"
            );
            for (a, b) in here.pulses.iter().zip(&there.pulses) {
                let (wa, wb) = (quantize_pulse(a).map_err(err)?, quantize_pulse(b).map_err(err)?);
                for (sa, sb) in wa.slots.iter().zip(&wb.slots) {
                    let bytes = |ws: &[PulseletWord]| ws.iter().flat_map(|w| w.to_bytes()).collect::<Vec<u8>>();
                    ensure!(bytes(sa) == bytes(sb), "{key}: pulselet words differ");
                }
            }
            compared += 1;
        }
    }
    drop(server);

    let sizes = [25, 100, 250, 500, 1000, 2000];
    let mut stars = Vec::new();
    for us in [250u64, 500, 1000] {
        let x = bench::crossover(Duration::from_micros(us), &sizes, 15, CONTROLLER_SLOWDOWN).map_err(err)?;
        let n = x.n_star.ok_or_else(|| format!("no crossover at {us} us: local {:?} remote {:?}", x.local, x.remote))?;
        stars.push((us, n));
    }
    ensure!(stars.windows(2).all(|w| w[1].1 > w[0].1), "crossover not monotonic in latency: {stars:?}");
    let shown: Vec<String> = stars.iter().map(|(us, n)| format!("L={us}us N*={n:.0}")).collect();
    Ok(format!("{compared} definitions over {} builders byte-exact; {}", names.len(), shown.join(", ")))
}
