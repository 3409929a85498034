//! In-process gate builders and the calibration record they read.
//!
//! Qubit `q` is driven on channel `q + 1`; channel 0 is the global beam.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::Arc;

use num_rational::Rational64;
use num_traits::ToPrimitive;

use super::{hash_f64s, GateKey, ProviderError};
use crate::config::{Param, CHANNELS, MIN_CYCLES};
use crate::dds::{intensity_product, stark_frame_from_amplitude};
use crate::pulse::{cycles_to_seconds, GateDefinition, ModulationNode, Pulse, PulseMetadata};

pub const GLOBAL_CHANNEL: u8 = 0;
/// Mutation class shared by the global-beam pulse of every MS gate.
pub const MS_MUTATION_CLASS: u64 = 1;

/// Tunable parameters the builders read.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub qubit_freq_hz: [f64; 2],
    pub global_freq_hz: [f64; 2],
    pub qubit_amp: f64,
    pub global_amp: f64,
    /// Duration of a pi rotation at `qubit_amp`.
    pub pi_cycles: u64,
    pub prepare_cycles: u64,
    pub measure_cycles: u64,
    pub ms_cycles: u64,
    pub ms_amp: f64,
    pub ms_knots: usize,
    pub ms_detuning_hz: f64,
    /// Radians per second per unit of tone-product intensity.
    pub stark_scale: f64,
    pub spline_cycles: u64,
}

impl Default for Calibration {
    fn default() -> Self {
        Calibration {
            qubit_freq_hz: [200e6, 210e6],
            global_freq_hz: [180e6, 190e6],
            qubit_amp: 0.5,
            global_amp: 0.8,
            pi_cycles: 4096,
            prepare_cycles: 8192,
            measure_cycles: 16384,
            ms_cycles: 40960,
            ms_amp: 0.6,
            ms_knots: 16,
            ms_detuning_hz: 10e3,
            stark_scale: 2.0 * PI * 2e3,
            spline_cycles: 16384,
        }
    }
}

impl Calibration {
    /// Sets one field by name from its textual value.
    pub fn set(&mut self, field: &str, value: &str) -> Result<(), String> {
        let f = || value.parse::<f64>().map_err(|e| format!("{field}: {e}"));
        let u = || value.parse::<u64>().map_err(|e| format!("{field}: {e}"));
        match field {
            "qubit_freq_hz" => self.qubit_freq_hz[0] = f()?,
            "qubit_freq_hz.1" => self.qubit_freq_hz[1] = f()?,
            "global_freq_hz" => self.global_freq_hz[0] = f()?,
            "global_freq_hz.1" => self.global_freq_hz[1] = f()?,
            "qubit_amp" => self.qubit_amp = f()?,
            "global_amp" => self.global_amp = f()?,
            "pi_cycles" => self.pi_cycles = u()?,
            "prepare_cycles" => self.prepare_cycles = u()?,
            "measure_cycles" => self.measure_cycles = u()?,
            "ms_cycles" => self.ms_cycles = u()?,
            "ms_amp" => self.ms_amp = f()?,
            "ms_knots" => self.ms_knots = u()? as usize,
            "ms_detuning_hz" => self.ms_detuning_hz = f()?,
            "stark_scale" => self.stark_scale = f()?,
            "spline_cycles" => self.spline_cycles = u()?,
            _ => return Err(format!("unknown calibration field '{field}'")),
        }
        Ok(())
    }

    pub fn hash_value(&self) -> u64 {
        hash_f64s(&[
            self.qubit_freq_hz[0],
            self.qubit_freq_hz[1],
            self.global_freq_hz[0],
            self.global_freq_hz[1],
            self.qubit_amp,
            self.global_amp,
            self.pi_cycles as f64,
            self.prepare_cycles as f64,
            self.measure_cycles as f64,
            self.ms_cycles as f64,
            self.ms_amp,
            self.ms_knots as f64,
            self.ms_detuning_hz,
            self.stark_scale,
            self.spline_cycles as f64,
        ])
    }
}

pub type BuilderFn =
    Arc<dyn Fn(&[Rational64], &Calibration) -> Result<GateDefinition, String> + Send + Sync>;

/// Gate builders by name.
#[derive(Clone, Default)]
pub struct Registry {
    builders: BTreeMap<String, BuilderFn>,
}

impl Registry {
    pub fn empty() -> Registry {
        Registry::default()
    }

    pub fn standard() -> Registry {
        let mut r = Registry::empty();
        r.register("prepare_all", prepare_all);
        r.register("measure_all", measure_all);
        r.register("Sx", |a, c| rotation("Sx", a, c, c.qubit_amp, 0.0, c.pi_cycles / 2));
        r.register("Sy", |a, c| rotation("Sy", a, c, c.qubit_amp, FRAC_PI_2, c.pi_cycles / 2));
        r.register("Px", |a, c| rotation("Px", a, c, c.qubit_amp, 0.0, c.pi_cycles));
        r.register("Py", |a, c| rotation("Py", a, c, c.qubit_amp, FRAC_PI_2, c.pi_cycles));
        r.register("Rx", |a, c| angle_rotation("Rx", a, c, 0.0));
        r.register("Ry", |a, c| angle_rotation("Ry", a, c, FRAC_PI_2));
        r.register("Rz", rz);
        r.register("MS", ms);
        r.register("Spline", spline);
        r.register("Idle", idle);
        r
    }

    pub fn register<F>(&mut self, name: &str, f: F)
    where
        F: Fn(&[Rational64], &Calibration) -> Result<GateDefinition, String> + Send + Sync + 'static,
    {
        self.builders.insert(name.to_string(), Arc::new(f));
    }

    pub fn contains(&self, name: &str) -> bool {
        self.builders.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.builders.keys().map(String::as_str)
    }

    pub fn build(&self, key: &GateKey, calibration: &Calibration) -> Result<GateDefinition, ProviderError> {
        let b = self
            .builders
            .get(&key.name)
            .ok_or_else(|| ProviderError::UnknownGate(key.name.clone()))?;
        b(&key.args, calibration).map_err(|message| ProviderError::Builder {
            name: key.name.clone(),
            message,
        })
    }
}

fn def(name: &str, args: &[Rational64], pulses: Vec<Pulse>) -> GateDefinition {
    GateDefinition {
        name: name.to_string(),
        args: args.to_vec(),
        pulses,
    }
}

fn arity(args: &[Rational64], n: usize) -> Result<(), String> {
    if args.len() != n {
        return Err(format!("expected {n} arguments, got {}", args.len()));
    }
    Ok(())
}

/// Channel of the qubit given as argument `i`.
pub fn qubit_channel(args: &[Rational64], i: usize) -> Result<u8, String> {
    let a = args.get(i).ok_or("missing qubit argument")?;
    match a.to_integer() {
        q if a.is_integer() && (0..CHANNELS as i64 - 1).contains(&q) => Ok(q as u8 + 1),
        _ => Err(format!("argument {i} is not a qubit index")),
    }
}

fn real(args: &[Rational64], i: usize) -> Result<f64, String> {
    args.get(i)
        .and_then(|a| a.to_f64())
        .ok_or_else(|| format!("missing argument {i}"))
}

fn scalar(v: f64) -> ModulationNode {
    ModulationNode::Scalar(v)
}

fn frame_applied() -> PulseMetadata {
    PulseMetadata {
        frame_apply_mask: 0b01,
        ..Default::default()
    }
}

fn global_beam(c: &Calibration, cycles: u64) -> Pulse {
    Pulse::with_cycles(GLOBAL_CHANNEL, cycles)
        .set(Param::Amp, 0, scalar(c.global_amp))
        .set(Param::Frq, 0, scalar(c.global_freq_hz[0]))
}

fn qubit_drive(channel: u8, c: &Calibration, amp: f64, phase: f64, cycles: u64) -> Pulse {
    Pulse::with_cycles(channel, cycles)
        .set(Param::Amp, 0, scalar(amp))
        .set(Param::Frq, 0, scalar(c.qubit_freq_hz[0]))
        .set(Param::Phs, 0, scalar(phase))
        .meta(frame_applied())
}

fn rotation(name: &str, args: &[Rational64], c: &Calibration, amp: f64, phase: f64, cycles: u64) -> Result<GateDefinition, String> {
    arity(args, 1)?;
    let ch = qubit_channel(args, 0)?;
    Ok(def(
        name,
        args,
        vec![global_beam(c, cycles), qubit_drive(ch, c, amp, phase, cycles)],
    ))
}

/// Fixed duration; the amplitude scales with the angle folded into (-pi, pi].
fn angle_rotation(name: &str, args: &[Rational64], c: &Calibration, phase: f64) -> Result<GateDefinition, String> {
    arity(args, 2)?;
    let ch = qubit_channel(args, 0)?;
    let mut theta = real(args, 1)? % (2.0 * PI);
    if theta > PI {
        theta -= 2.0 * PI;
    } else if theta <= -PI {
        theta += 2.0 * PI;
    }
    let amp = c.qubit_amp * theta / PI;
    Ok(def(
        name,
        args,
        vec![global_beam(c, c.pi_cycles), qubit_drive(ch, c, amp, phase, c.pi_cycles)],
    ))
}

/// Virtual Z: a single frame-rotation word on the qubit channel.
fn rz(args: &[Rational64], _c: &Calibration) -> Result<GateDefinition, String> {
    arity(args, 2)?;
    let ch = qubit_channel(args, 0)?;
    let theta = real(args, 1)?;
    Ok(def(
        "Rz",
        args,
        vec![Pulse::with_cycles(ch, MIN_CYCLES).set(Param::Frm, 0, scalar(theta))],
    ))
}

fn prepare_all(args: &[Rational64], c: &Calibration) -> Result<GateDefinition, String> {
    arity(args, 0)?;
    let sync = PulseMetadata {
        sync: true,
        ..Default::default()
    };
    let pulses = (0..CHANNELS as u8)
        .map(|ch| {
            let f = if ch == GLOBAL_CHANNEL {
                c.global_freq_hz
            } else {
                c.qubit_freq_hz
            };
            Pulse::with_cycles(ch, c.prepare_cycles)
                .set(Param::Frq, 0, scalar(f[0]))
                .set(Param::Frq, 1, scalar(f[1]))
                .meta(sync)
        })
        .collect();
    Ok(def("prepare_all", args, pulses))
}

fn measure_all(args: &[Rational64], c: &Calibration) -> Result<GateDefinition, String> {
    arity(args, 0)?;
    Ok(def("measure_all", args, vec![global_beam(c, c.measure_cycles)]))
}

/// Smooth on/off envelope sampled at `k` knots.
pub fn envelope(peak: f64, k: usize) -> Vec<f64> {
    (0..k)
        .map(|i| {
            let x = PI * i as f64 / (k - 1) as f64;
            peak * x.sin().powi(2)
        })
        .collect()
}

fn ms(args: &[Rational64], c: &Calibration) -> Result<GateDefinition, String> {
    arity(args, 2)?;
    let a = qubit_channel(args, 0)?;
    let b = qubit_channel(args, 1)?;
    if a == b {
        return Err("MS needs two distinct qubits".into());
    }
    let profile = envelope(c.ms_amp, c.ms_knots.max(2));
    let global = Pulse::with_cycles(GLOBAL_CHANNEL, c.ms_cycles)
        .set(Param::Amp, 0, ModulationNode::Spline(profile.clone()))
        .set(Param::Amp, 1, ModulationNode::Spline(profile.clone()))
        .set(Param::Frq, 0, scalar(c.global_freq_hz[0] + c.ms_detuning_hz))
        .set(Param::Frq, 1, scalar(c.global_freq_hz[1] - c.ms_detuning_hz))
        .mutation(MS_MUTATION_CLASS);
    let stark = stark_frame_from_amplitude(&intensity_product(&profile, &profile), c.stark_scale, c.ms_cycles);
    let mut pulses = vec![global];
    for ch in [a, b] {
        pulses.push(
            qubit_drive(ch, c, c.qubit_amp, 0.0, c.ms_cycles).set(Param::Frm, 0, stark.clone()),
        );
    }
    Ok(def("MS", args, pulses))
}

/// Test gate with a `k`-knot amplitude spline on one qubit.
fn spline(args: &[Rational64], c: &Calibration) -> Result<GateDefinition, String> {
    arity(args, 2)?;
    let ch = qubit_channel(args, 0)?;
    let k = real(args, 1)? as usize;
    if k < 2 {
        return Err("a spline needs at least two knots".into());
    }
    let cycles = c.spline_cycles.max(MIN_CYCLES * (k as u64 - 1));
    let knots: Vec<f64> = (0..k)
        .map(|i| {
            let x = i as f64 / (k - 1) as f64;
            c.qubit_amp * (0.5 - 0.4 * (2.0 * PI * x).cos() + 0.1 * (7.0 * x).sin())
        })
        .collect();
    Ok(def(
        "Spline",
        args,
        vec![Pulse::with_cycles(ch, cycles)
            .set(Param::Amp, 0, ModulationNode::Spline(knots))
            .set(Param::Frq, 0, scalar(c.qubit_freq_hz[0]))
            .meta(frame_applied())],
    ))
}

/// Wait on a qubit: `Idle q` lasts a pi time, `Idle q n` lasts n cycles.
fn idle(args: &[Rational64], c: &Calibration) -> Result<GateDefinition, String> {
    let ch = qubit_channel(args, 0)?;
    let cycles = match args.len() {
        1 => c.pi_cycles,
        2 => {
            let n = args[1];
            if !n.is_integer() || n.to_integer() < MIN_CYCLES as i64 {
                return Err(format!("idle needs an integer of at least {MIN_CYCLES} cycles"));
            }
            n.to_integer() as u64
        }
        n => return Err(format!("expected 1 or 2 arguments, got {n}")),
    };
    Ok(def("Idle", args, vec![Pulse::new(ch, cycles_to_seconds(cycles))]))
}
