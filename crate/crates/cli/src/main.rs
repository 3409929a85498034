use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write as _};
use std::net::{SocketAddr, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_rational::Rational64;

use gatestream::bench;
use gatestream::compile::{compile, CompileOptions, Compiled, MutateMode, Selector};
use gatestream::file::Program;
use gatestream::jaqal::number::parse_rational;
use gatestream::jaqal::{compile_tir_with, Tir};
use gatestream::provider::remote::Server;
use gatestream::provider::{Calibration, GateKey, Provider, Registry};
use gatestream::sim::{
    self, BinarySink, CsvSink, Fixed, Lines, MeasurementSource, Scripted, Seeded, SimConfig,
    ThreadedSink, TraceSink,
};
use gatestream::Error;

#[derive(Parser)]
#[command(name = "gatestream", version, about = "Compile, simulate and patch gate-sequencer programs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compile a circuit into a program file and print table occupancy.
    Compile(CompileArgs),
    /// Run a program through the sequencer model.
    Simulate(SimArgs),
    /// Simulate and write the CSV trace to stdout (or --out).
    Trace(SimArgs),
    /// Print compile statistics for a circuit or table occupancy of a program.
    Stats(SourceArgs),
    /// Recompute gates in a compiled circuit and emit the patch stream.
    Mutate(MutateArgs),
    /// Timing harnesses; write CSV to stdout or --out.
    Bench(BenchArgs),
    /// Serve gate definitions over TCP.
    Serve(ServeArgs),
}

#[derive(Args)]
struct SourceArgs {
    input: PathBuf,
    /// Override a `let` binding, NAME=VALUE (repeatable).
    #[arg(long = "let", value_name = "NAME=VALUE")]
    lets: Vec<String>,
    /// Fetch every gate from a remote provider.
    #[arg(long, env = "GATE_PROVIDER_ADDR")]
    provider: Option<String>,
    /// Override a calibration field, FIELD=VALUE (repeatable).
    #[arg(long = "set", value_name = "FIELD=VALUE")]
    calibration: Vec<String>,
    #[arg(long, default_value_t = gatestream::sched::DEFAULT_FIFO_DEPTH)]
    fifo_depth: usize,
}

#[derive(Args)]
struct CompileArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Print the slice table.
    #[arg(long)]
    dump_slices: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum TraceFormat {
    Csv,
    Bin,
}

#[derive(Args)]
struct SimArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Outcome list "0,1,0b11", @FILE with one per line, or - for stdin.
    #[arg(long, conflicts_with = "seed")]
    measurements: Option<String>,
    /// Draw outcomes from a seeded generator.
    #[arg(long)]
    seed: Option<u64>,
    /// Keep every Nth cycle of value rows.
    #[arg(long, default_value_t = 1)]
    decimate: u64,
    #[arg(long, default_value_t = sim::DEFAULT_BRANCH_LATENCY)]
    branch_latency: u64,
    #[arg(long)]
    max_cycles: Option<u64>,
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Trace format; defaults to bin for *.bin outputs and csv otherwise.
    #[arg(long, value_enum)]
    format: Option<TraceFormat>,
}

#[derive(Args)]
struct MutateArgs {
    /// Circuit to compile; omit with --demo-knots.
    #[arg(required_unless_present = "demo_knots")]
    input: Option<PathBuf>,
    #[arg(long = "let", value_name = "NAME=VALUE")]
    lets: Vec<String>,
    #[arg(long, env = "GATE_PROVIDER_ADDR")]
    provider: Option<String>,
    /// Calibration change applied before recomputing, FIELD=VALUE.
    #[arg(long = "set", value_name = "FIELD=VALUE")]
    calibration: Vec<String>,
    /// Gate to recompute, e.g. "Sx 0".
    #[arg(long, conflicts_with = "mutation_id")]
    gate: Option<String>,
    /// Recompute every gate carrying this mutation id.
    #[arg(long)]
    mutation_id: Option<u64>,
    /// Allow MLUT remapping when a changed word is shared.
    #[arg(long)]
    remap: bool,
    /// Run the built-in mutation demo with a shared spline of this many knots.
    #[arg(long, conflicts_with_all = ["input", "gate", "mutation_id"])]
    demo_knots: Option<usize>,
    #[arg(long, default_value_t = 10)]
    demo_gates: usize,
    /// Write the patch programming stream here.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Workload {
    Parse,
    Fetch,
    Crossover,
    Mutate,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(value_enum)]
    workload: Workload,
    #[arg(long, default_value_t = 30)]
    reps: usize,
    #[arg(long, default_value_t = 5)]
    warmup: usize,
    /// Sizes to sweep: gate counts for parse/crossover, knots for fetch/mutate.
    #[arg(long, value_delimiter = ',')]
    sizes: Vec<usize>,
    /// Injected latency for crossover, microseconds (repeatable list).
    #[arg(long, value_delimiter = ',', default_value = "250,500,1000")]
    latency_us: Vec<u64>,
    #[arg(long, env = "GATE_PROVIDER_ADDR")]
    provider: Option<String>,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:7878")]
    addr: String,
    /// Delay added to every reply, microseconds.
    #[arg(long, default_value_t = 0)]
    latency_us: u64,
    #[arg(long = "set", value_name = "FIELD=VALUE")]
    calibration: Vec<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cmd: Command) -> Result<(), Error> {
    match cmd {
        Command::Compile(a) => cmd_compile(a),
        Command::Simulate(a) => cmd_simulate(a, false),
        Command::Trace(a) => cmd_simulate(a, true),
        Command::Stats(a) => cmd_stats(a),
        Command::Mutate(a) => cmd_mutate(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Serve(a) => cmd_serve(a),
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::Invalid(msg.into())
}

fn split_pair(s: &str) -> Result<(&str, &str), Error> {
    s.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .ok_or_else(|| invalid(format!("expected NAME=VALUE, got '{s}'")))
}

fn parse_lets(lets: &[String]) -> Result<Vec<(String, Rational64)>, Error> {
    lets.iter()
        .map(|s| {
            let (k, v) = split_pair(s)?;
            let r = parse_rational(v).ok_or_else(|| invalid(format!("--let {k}: bad number '{v}'")))?;
            Ok((k.to_string(), r))
        })
        .collect()
}

fn calibration(sets: &[String]) -> Result<Calibration, Error> {
    let mut c = Calibration::default();
    for s in sets {
        let (k, v) = split_pair(s)?;
        c.set(k, v).map_err(invalid)?;
    }
    Ok(c)
}

fn resolve_addr(addr: &str) -> Result<SocketAddr, Error> {
    addr.to_socket_addrs()
        .ok()
        .and_then(|mut a| a.next())
        .ok_or_else(|| invalid(format!("cannot resolve provider address '{addr}'")))
}

fn provider(registry: Registry, remote: Option<&str>, sets: &[String]) -> Result<Arc<Provider>, Error> {
    let mut p = Provider::new(registry, calibration(sets)?);
    if let Some(a) = remote {
        p = p.route("", resolve_addr(a)?);
    }
    Ok(Arc::new(p))
}

fn read_source(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn lower(path: &Path, lets: &[String]) -> Result<Tir, Error> {
    let src = read_source(path)?;
    compile_tir_with(&src, &parse_lets(lets)?).map_err(|e| invalid(format!("{}:{e}", path.display())))
}

fn compile_args(a: &SourceArgs) -> Result<Compiled, Error> {
    let tir = lower(&a.input, &a.lets)?;
    let options = CompileOptions {
        fifo_depth: a.fifo_depth,
        ..CompileOptions::default()
    };
    let p = provider(Registry::standard(), a.provider.as_deref(), &a.calibration)?;
    Ok(compile(&tir, p, options)?)
}

fn is_program(path: &Path) -> Result<bool, Error> {
    let mut magic = [0u8; 4];
    let n = io::Read::read(&mut File::open(path).map_err(|e| Error::io(path, e))?, &mut magic)
        .map_err(|e| Error::io(path, e))?;
    Ok(n == 4 && &magic == gatestream::file::MAGIC)
}

/// A program file as is, or a circuit compiled on the fly.
fn load_program(a: &SourceArgs) -> Result<Program, Error> {
    if is_program(&a.input)? {
        let bytes = fs::read(&a.input).map_err(|e| Error::io(&a.input, e))?;
        return Ok(Program::from_bytes(&bytes)?);
    }
    Ok(compile_args(a)?.into_program())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Error> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn cmd_compile(a: CompileArgs) -> Result<(), Error> {
    let c = compile_args(&a.source)?;
    for w in c.warnings() {
        eprintln!("warning: {w}");
    }
    let bytes = c.program().to_bytes();
    let out = a.out.unwrap_or_else(|| a.source.input.with_extension("oct8"));
    write_file(&out, &bytes)?;
    println!("{}", c.stats());
    println!("wrote {} ({} bytes)", out.display(), bytes.len());
    if a.dump_slices {
        print!("{}", c.dump_slices());
    }
    Ok(())
}

fn cmd_stats(a: SourceArgs) -> Result<(), Error> {
    if is_program(&a.input)? {
        let bytes = fs::read(&a.input).map_err(|e| Error::io(&a.input, e))?;
        let p = Program::from_bytes(&bytes)?;
        println!("invocations         {}", p.bytecode.gate_count());
        println!("bytecode            {} bytes", p.bytecode.byte_len());
        println!("branch shift        {}", p.meta.branch_shift);
        println!("outcome bits        {}", p.meta.outcome_bits);
        println!("channel  plut  mlut  glut");
        for (ch, lut) in p.image.channels.iter().enumerate() {
            println!("{ch:>7} {:>5} {:>5} {:>5}", lut.plut.len(), lut.mlut.len(), lut.glut.len());
        }
        return Ok(());
    }
    let c = compile_args(&a)?;
    println!("{}", c.stats());
    Ok(())
}

fn measurement_source(a: &SimArgs) -> Result<Box<dyn MeasurementSource>, Error> {
    if let Some(seed) = a.seed {
        return Ok(Box::new(Seeded::new(seed)));
    }
    match a.measurements.as_deref() {
        None => Ok(Box::new(Fixed(0))),
        Some("-") => Ok(Box::new(Lines(io::stdin().lock()))),
        Some(m) => match m.strip_prefix('@') {
            Some(path) => {
                let f = File::open(path).map_err(|e| Error::io(path, e))?;
                Ok(Box::new(Lines(BufReader::new(f))))
            }
            None => Ok(Box::new(Scripted::parse(m).map_err(invalid)?)),
        },
    }
}

fn cmd_simulate(a: SimArgs, to_stdout: bool) -> Result<(), Error> {
    let program = load_program(&a.source)?;
    let config = SimConfig {
        fifo_depth: a.source.fifo_depth,
        branch_latency: a.branch_latency,
        decimation: a.decimate.max(1),
        max_cycles: a.max_cycles.unwrap_or(u64::MAX),
    };
    let mut meas = measurement_source(&a)?;
    let format = a.format.unwrap_or(match &a.out {
        Some(p) if p.extension().is_some_and(|e| e == "bin") => TraceFormat::Bin,
        _ => TraceFormat::Csv,
    });
    let summary = match &a.out {
        Some(path) => {
            let f = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
            let mut sink = match format {
                TraceFormat::Csv => ThreadedSink::spawn(CsvSink::new(f), 4096),
                TraceFormat::Bin => ThreadedSink::spawn(BinarySink::new(f), 4096),
            };
            sim::run(&program, &config, meas.as_mut(), &mut sink)?
        }
        None if to_stdout => {
            let out = io::stdout().lock();
            let mut sink: Box<dyn TraceSink> = match format {
                TraceFormat::Csv => Box::new(CsvSink::new(BufWriter::new(out))),
                TraceFormat::Bin => Box::new(BinarySink::new(BufWriter::new(out))),
            };
            sim::run(&program, &config, meas.as_mut(), sink.as_mut())?;
            return Ok(());
        }
        None => sim::run(&program, &config, meas.as_mut(), &mut sim::NullSink)?,
    };
    println!("cycles   {}", summary.cycles);
    println!("words    {}", summary.words);
    println!("releases {:?}", summary.releases);
    for (cycle, outcome) in &summary.branches {
        println!("branch   cycle {cycle} outcome {outcome:#b}");
    }
    let headroom = summary
        .min_headroom
        .iter()
        .flatten()
        .filter(|&&h| h != usize::MAX)
        .min()
        .copied()
        .unwrap_or(0);
    println!("min FIFO headroom {headroom}");
    if let Some(p) = &a.out {
        println!("trace written to {}", p.display());
    }
    Ok(())
}

fn parse_gate(text: &str) -> Result<GateKey, Error> {
    let mut parts = text.split_whitespace();
    let name = parts.next().ok_or_else(|| invalid("empty --gate"))?;
    let args = parts
        .map(|p| parse_rational(p).ok_or_else(|| invalid(format!("bad gate argument '{p}'"))))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(GateKey::new(name, args))
}

fn cmd_mutate(a: MutateArgs) -> Result<(), Error> {
    let report = if let Some(k) = a.demo_knots {
        let (_, r) = bench::mutation_demo(k, a.demo_gates)?;
        println!("demo: {} class gates sharing a {k}-knot pulse", a.demo_gates);
        r
    } else {
        let input = a.input.as_ref().expect("required by clap");
        let tir = lower(input, &a.lets)?;
        let p = provider(Registry::standard(), a.provider.as_deref(), &[])?;
        let mut c = compile(&tir, p.clone(), CompileOptions::default())?;
        p.set_calibration(calibration(&a.calibration)?);
        let selector = match (&a.gate, a.mutation_id) {
            (Some(g), _) => Selector::Key(parse_gate(g)?),
            (None, Some(m)) => Selector::MutationId(m),
            (None, None) => return Err(invalid("give --gate or --mutation-id")),
        };
        let mode = if a.remap { MutateMode::Remap } else { MutateMode::Strict };
        c.mutate(&selector, None, mode)?
    };
    println!(
        "gates {}  slices {}  entries {}",
        report.keys.len(),
        report.slices.len(),
        report.entries.len()
    );
    println!(
        "writes: plut {}  mlut {}  glut {}",
        report.plut_writes(),
        report.mlut_writes(),
        report.glut_writes()
    );
    println!("{}", report.timings);
    if let Some(out) = &a.out {
        write_file(out, &report.stream)?;
    }
    Ok(())
}

fn default_sizes(w: Workload) -> Vec<usize> {
    match w {
        Workload::Parse | Workload::Crossover => (8..=80).step_by(8).collect(),
        Workload::Fetch => vec![2, 10, 20, 50, 100, 150, 200],
        Workload::Mutate => vec![10, 50, 100, 150, 200],
    }
}

fn cmd_bench(a: BenchArgs) -> Result<(), Error> {
    let sizes = if a.sizes.is_empty() {
        default_sizes(a.workload)
    } else {
        a.sizes.clone()
    };
    let mut csv = String::new();
    match a.workload {
        Workload::Parse => {
            let s = bench::bench_parse(&sizes, a.reps, a.warmup);
            let fit = bench::linear_fit(&bench::points(&s));
            csv.push_str(&bench::samples_csv(&s));
            eprintln!(
                "fit: {:.4} us/gate + {:.3} us, max deviation {:.1}%",
                fit.slope * 1e6,
                fit.intercept * 1e6,
                100.0 * fit.max_relative_deviation(&bench::points(&s))
            );
        }
        Workload::Fetch => {
            let remote = a.provider.as_deref().map(resolve_addr).transpose()?;
            let s = bench::bench_fetch(&sizes, a.reps, remote)?;
            let fit = bench::linear_fit(&bench::points(&s));
            csv.push_str(&bench::samples_csv(&s));
            eprintln!("fit: {:.4} us/knot + {:.3} us", fit.slope * 1e6, fit.intercept * 1e6);
        }
        Workload::Crossover => {
            csv.push_str("latency_us,n,local_us,remote_us\n");
            for &l in &a.latency_us {
                let c = bench::crossover(Duration::from_micros(l), &sizes, a.reps, bench::CONTROLLER_SLOWDOWN)?;
                for (lo, re) in c.local_samples.iter().zip(&c.remote_samples) {
                    csv.push_str(&format!("{l},{},{:.3},{:.3}\n", lo.n, lo.median * 1e6, re.median * 1e6));
                }
                match c.n_star {
                    Some(n) => eprintln!("latency {l} us: crossover at {n:.1} gates"),
                    None => eprintln!("latency {l} us: no crossover"),
                }
            }
        }
        Workload::Mutate => {
            csv.push_str("knots,fetch_us,fit_map_us,encode_us,total_us,plut_writes\n");
            for &k in &sizes {
                let (_, r) = bench::mutation_demo(k, 10)?;
                let t = r.timings;
                let us = |d: Duration| d.as_secs_f64() * 1e6;
                csv.push_str(&format!(
                    "{k},{:.1},{:.1},{:.1},{:.1},{}\n",
                    us(t.fetch),
                    us(t.fit_map),
                    us(t.encode),
                    us(t.total),
                    r.plut_writes()
                ));
            }
        }
    }
    match &a.out {
        Some(p) => write_file(p, csv.as_bytes()),
        None => io::stdout()
            .write_all(csv.as_bytes())
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

fn cmd_serve(a: ServeArgs) -> Result<(), Error> {
    let p = Arc::new(Provider::new(Registry::standard(), calibration(&a.calibration)?));
    let server = Server::start(&a.addr, p, Duration::from_micros(a.latency_us)).map_err(|e| Error::io(&a.addr, e))?;
    eprintln!("serving gate definitions on {}", server.addr());
    server.wait();
    Ok(())
}
