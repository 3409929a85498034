//! Measurement harnesses: parse cost against circuit size, definition fetch
//! cost against knot count, the local/remote parse crossover and a
//! mutation round with its stage timings.

use std::fmt::Write as _;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use num_rational::Rational64;

use crate::compile::{compile, CompileError, CompileOptions, Compiled, MutateMode, MutationReport, Selector};
use crate::config::Param;
use crate::jaqal::{compile_tir, parse_with_stats};
use crate::provider::builders::{envelope, qubit_channel, GLOBAL_CHANNEL};
use crate::provider::remote::{Client, Server};
use crate::provider::{Calibration, GateKey, Provider, ProviderError, Registry};
use crate::pulse::{quantize_pulse, GateDefinition, ModulationNode, Pulse, PulseMetadata};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub n: usize,
    /// Seconds.
    pub mean: f64,
    pub stddev: f64,
    pub median: f64,
}

/// Times `f` over `reps` repetitions after `warmup` unrecorded ones. Each
/// repetition runs `f` `inner` times and records the per-call average.
pub fn measure(reps: usize, warmup: usize, inner: usize, mut f: impl FnMut()) -> (f64, f64, f64) {
    let inner = inner.max(1);
    for _ in 0..warmup {
        f();
    }
    let mut xs: Vec<f64> = (0..reps.max(1))
        .map(|_| {
            let t = Instant::now();
            for _ in 0..inner {
                f();
            }
            t.elapsed().as_secs_f64() / inner as f64
        })
        .collect();
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
    xs.sort_by(f64::total_cmp);
    (mean, var.sqrt(), xs[xs.len() / 2])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fit {
    pub slope: f64,
    pub intercept: f64,
}

impl Fit {
    pub fn eval(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }

    /// Largest |y - fit(x)| / fit(x) over the points.
    pub fn max_relative_deviation(&self, points: &[(f64, f64)]) -> f64 {
        points
            .iter()
            .map(|&(x, y)| ((y - self.eval(x)) / self.eval(x)).abs())
            .fold(0.0, f64::max)
    }
}

/// Ordinary least squares.
pub fn linear_fit(points: &[(f64, f64)]) -> Fit {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = if sxx == 0.0 { 0.0 } else { sxy / sxx };
    Fit {
        slope,
        intercept: my - slope * mx,
    }
}

pub fn points(samples: &[Sample]) -> Vec<(f64, f64)> {
    samples.iter().map(|s| (s.n as f64, s.median)).collect()
}

/// `n,mean_us,stddev_us,median_us` rows.
pub fn samples_csv(samples: &[Sample]) -> String {
    let mut out = String::from("n,mean_us,stddev_us,median_us\n");
    for s in samples {
        let _ = writeln!(
            out,
            "{},{:.3},{:.3},{:.3}",
            s.n,
            s.mean * 1e6,
            s.stddev * 1e6,
            s.median * 1e6
        );
    }
    out
}

/// A straight-line circuit of `n` gate statements over 4 qubits.
pub fn circuit(n: usize) -> String {
    let mut s = String::from("register q[4]\n");
    for i in 0..n {
        let q = i % 4;
        match i % 3 {
            0 => writeln!(s, "Sx q[{q}]"),
            1 => writeln!(s, "Rz q[{q}] {}", (i % 7) as f64 * 0.125),
            _ => writeln!(s, "Sy q[{q}]"),
        }
        .unwrap();
    }
    s
}

/// Parse plus lowering time per circuit size.
pub fn bench_parse(ns: &[usize], reps: usize, warmup: usize) -> Vec<Sample> {
    ns.iter()
        .map(|&n| {
            let src = circuit(n);
            let (mean, stddev, median) = measure(reps, warmup, 20, || {
                std::hint::black_box(compile_tir(&src).unwrap());
            });
            Sample {
                n,
                mean,
                stddev,
                median,
            }
        })
        .collect()
}

fn spline_key(k: usize) -> GateKey {
    GateKey::new("Spline", vec![Rational64::from_integer(0), Rational64::from_integer(k as i64)])
}

/// Time to obtain and quantize a `k`-knot definition, in process or from
/// a provider at `remote`.
pub fn bench_fetch(knots: &[usize], reps: usize, remote: Option<SocketAddr>) -> Result<Vec<Sample>, ProviderError> {
    let registry = Registry::standard();
    let cal = Calibration::default();
    let mut client = match remote {
        Some(a) => Some(Client::connect(a, Duration::from_secs(5))?),
        None => None,
    };
    let mut out = Vec::new();
    for &k in knots {
        let key = spline_key(k);
        let mut err = None;
        let (mean, stddev, median) = measure(reps, 3, 1, || {
            let def = match client.as_mut() {
                Some(c) => c.fetch(&key),
                None => registry.build(&key, &cal),
            };
            match def {
                Ok(d) => {
                    for p in &d.pulses {
                        std::hint::black_box(quantize_pulse(p).ok());
                    }
                }
                Err(e) => err = Some(e),
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        out.push(Sample {
            n: k,
            mean,
            stddev,
            median,
        });
    }
    Ok(out)
}

/// Local versus remote cost of parsing circuits of growing size.
#[derive(Debug, Clone, PartialEq)]
pub struct Crossover {
    pub latency: Duration,
    /// Controller-side parse, modeled as host parse time times `slowdown`.
    pub local: Fit,
    /// Host round trip: upload, parse on the far side, reply, plus latency.
    pub remote: Fit,
    /// Circuit size where the two lines meet; `None` when they do not.
    pub n_star: Option<f64>,
    pub local_samples: Vec<Sample>,
    pub remote_samples: Vec<Sample>,
}

pub const CONTROLLER_SLOWDOWN: f64 = 4.0;

pub fn crossover(latency: Duration, ns: &[usize], reps: usize, slowdown: f64) -> Result<Crossover, ProviderError> {
    let mut server = Server::start("127.0.0.1:0", Arc::new(Provider::standard()), latency).map_err(|e| {
        ProviderError::RemoteUnavailable {
            addr: "127.0.0.1:0".into(),
            reason: e.to_string(),
        }
    })?;
    let mut client = Client::connect(server.addr(), Duration::from_secs(5))?;
    let mut local_samples = Vec::new();
    let mut remote_samples = Vec::new();
    for &n in ns {
        let src = circuit(n);
        let (mean, stddev, median) = measure(reps, 3, 10, || {
            std::hint::black_box(parse_with_stats(&src).unwrap());
        });
        local_samples.push(Sample {
            n,
            mean: mean * slowdown,
            stddev: stddev * slowdown,
            median: median * slowdown,
        });
        let mut err = None;
        let (mean, stddev, median) = measure(reps, 2, 1, || {
            if let Err(e) = client.upload(&src) {
                err = Some(e);
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        remote_samples.push(Sample {
            n,
            mean,
            stddev,
            median,
        });
    }
    server.stop();
    let local = linear_fit(&points(&local_samples));
    let remote = linear_fit(&points(&remote_samples));
    let n_star = (local.slope > remote.slope)
        .then(|| (remote.intercept - local.intercept) / (local.slope - remote.slope))
        .filter(|n| *n > 0.0);
    Ok(Crossover {
        latency,
        local,
        remote,
        n_star,
        local_samples,
        remote_samples,
    })
}

/// Mutation class used by the demo gates.
pub const DEMO_CLASS: u64 = 9;

/// Registry with a `Class q v` gate: a shared global-beam spline of
/// `knots` knots tagged with [`DEMO_CLASS`] and a per-variant qubit pulse.
pub fn class_registry(knots: usize) -> Registry {
    let mut r = Registry::standard();
    r.register("Class", move |args, c| {
        let ch = qubit_channel(args, 0)?;
        let v = args.get(1).map_or(0.0, |a| *a.numer() as f64 / *a.denom() as f64);
        let cycles = (8 * knots as u64).max(4096);
        let shared = if knots < 2 {
            ModulationNode::Scalar(c.global_amp * 0.5)
        } else {
            ModulationNode::Spline(envelope(c.global_amp * 0.5, knots))
        };
        Ok(GateDefinition {
            name: "Class".into(),
            args: args.to_vec(),
            pulses: vec![
                Pulse::with_cycles(GLOBAL_CHANNEL, cycles)
                    .set(Param::Amp, 0, shared)
                    .mutation(DEMO_CLASS),
                Pulse::with_cycles(ch, cycles)
                    .set(Param::Amp, 0, ModulationNode::Scalar(0.05 + 0.01 * v))
                    .set(Param::Frq, 0, ModulationNode::Scalar(c.qubit_freq_hz[0]))
                    .meta(PulseMetadata {
                        frame_apply_mask: 1,
                        ..Default::default()
                    }),
            ],
        })
    });
    r
}

/// Source with `gates` distinct `Class` calls.
pub fn class_circuit(gates: usize) -> String {
    let mut s = String::from("register q[7]\n");
    for i in 0..gates {
        writeln!(s, "Class q[{}] {}", i % 7, i / 7).unwrap();
    }
    s
}

/// Compiles `gates` class gates, rescales the shared amplitude and patches
/// the program through the mutation class.
pub fn mutation_demo(knots: usize, gates: usize) -> Result<(Compiled, MutationReport), crate::Error> {
    let provider = Arc::new(Provider::new(class_registry(knots), Calibration::default()));
    let tir = compile_tir(&class_circuit(gates))?;
    let mut c = compile(&tir, provider.clone(), CompileOptions::default())?;
    let mut cal = provider.calibration();
    cal.global_amp *= 0.9;
    provider.set_calibration(cal);
    let report = c
        .mutate(&Selector::MutationId(DEMO_CLASS), None, MutateMode::Strict)
        .map_err(|e: CompileError| crate::Error::from(e))?;
    Ok((c, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_recovers_a_line() {
        let pts: Vec<_> = (0..10).map(|i| (i as f64, 3.0 * i as f64 + 2.0)).collect();
        let f = linear_fit(&pts);
        assert!((f.slope - 3.0).abs() < 1e-12 && (f.intercept - 2.0).abs() < 1e-12);
        assert!(f.max_relative_deviation(&pts) < 1e-12);
    }

    #[test]
    fn circuit_has_n_gates() {
        let tir = compile_tir(&circuit(30)).unwrap();
        assert_eq!(tir.expand().len(), 30);
    }

    #[test]
    fn demo_patches_one_word_per_changed_knot_word() {
        let (_, r) = mutation_demo(0, 10).unwrap();
        assert_eq!(r.plut_writes(), 1);
        assert_eq!(r.writes.len(), 1);
        assert_eq!(r.keys.len(), 10);
    }
}
