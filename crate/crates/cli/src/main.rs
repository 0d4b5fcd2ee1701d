use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use cachescope::compare::{compare_run, Comparison};
use cachescope::config::RunConfig;
use cachescope::oracle::{run_oracle, OracleReport};
use cachescope::pipeline::run_profile;
use cachescope::report::ProfileReport;
use cachescope::suite::{run_suite, DEFAULT_SEEDS};
use cachescope::trace::{write_trace, TraceReader};
use cachescope::workloads::{generate, WorkloadKind, WorkloadSpec};

#[derive(Parser)]
#[command(name = "cachescope", version, about = "Trace-driven cache miss profiler")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic workload trace
    Gen(GenArgs),
    /// Profile a trace and report classified cache issues
    Profile(TraceArgs),
    /// Exact, unsampled miss breakdown of a trace
    Oracle(TraceArgs),
    /// Check profile reports against oracle output and ground truth
    Compare(CompareArgs),
    /// Run the six-class workload batch and compare every run
    Suite(SuiteArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Structured,
}

#[derive(Args)]
struct Common {
    /// key=value configuration file
    #[arg(long, env = "CACHESCOPE_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    load_period: Option<u64>,
    #[arg(long)]
    store_period: Option<u64>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    window_ratio: Option<f64>,
    #[arg(long)]
    expiry_events: Option<u64>,
    #[arg(long)]
    line_size: Option<u32>,
    #[arg(long)]
    sets: Option<u32>,
    #[arg(long)]
    assoc: Option<u32>,
    #[arg(long)]
    cores: Option<u32>,
    /// Any other configuration key, as key=value (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
    /// Output path (default stdout)
    #[arg(short = 'o', long = "output")]
    output: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut ov: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                ov.push((k.to_string(), v));
            }
        };
        put("seed", self.seed.map(|v| v.to_string()));
        put("load_period", self.load_period.map(|v| v.to_string()));
        put("store_period", self.store_period.map(|v| v.to_string()));
        put("window", self.window.map(|v| v.to_string()));
        put("window_ratio", self.window_ratio.map(|v| v.to_string()));
        put("expiry_events", self.expiry_events.map(|v| v.to_string()));
        put("line_size", self.line_size.map(|v| v.to_string()));
        put("sets", self.sets.map(|v| v.to_string()));
        put("assoc", self.assoc.map(|v| v.to_string()));
        put("cores", self.cores.map(|v| v.to_string()));
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .with_context(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
            ov.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(RunConfig::resolve(self.config.as_deref(), std::env::vars(), &ov)?)
    }

    fn sink(&self) -> Result<Box<dyn Write>> {
        Ok(match &self.output {
            Some(p) => Box::new(BufWriter::new(
                File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
            )),
            None => Box::new(BufWriter::new(io::stdout().lock())),
        })
    }

    fn emit(&self, text: &str) -> Result<()> {
        let mut out = self.sink()?;
        out.write_all(text.as_bytes())?;
        out.flush()?;
        Ok(())
    }
}

#[derive(Args)]
struct GenArgs {
    /// Workload kind (false-sharing, true-sharing, conflict-stride, capacity,
    /// alloc-false-sharing, alloc-conflict, baseline, minor-issue)
    #[arg(long)]
    kind: WorkloadKind,
    #[arg(long)]
    threads: Option<u32>,
    #[arg(long)]
    iterations: Option<u64>,
    /// Capacity loops: array size as a multiple of the cache capacity
    #[arg(long)]
    scale: Option<u32>,
    /// Conflict stride: distinct lines per set
    #[arg(long)]
    lines: Option<u32>,
    #[arg(long)]
    passes: Option<u32>,
    #[arg(long)]
    objects: Option<u32>,
    #[arg(long)]
    object_size: Option<u64>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct TraceArgs {
    /// Trace file, or - for stdin
    trace: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct CompareArgs {
    /// Pairs of structured profile report and oracle output: R1 O1 [R2 O2 ...]
    #[arg(required = true, num_args = 2..)]
    files: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
    #[arg(short = 'o', long = "output")]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SuiteArgs {
    /// Comma-separated seeds
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SEEDS)]
    seeds: Vec<u64>,
    #[command(flatten)]
    common: Common,
}

fn open_trace(path: &Path) -> Result<TraceReader<Box<dyn BufRead>>> {
    let input: Box<dyn BufRead> = if path == Path::new("-") {
        Box::new(BufReader::new(io::stdin()))
    } else {
        let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
        Box::new(BufReader::with_capacity(1 << 16, f))
    };
    TraceReader::new(input).with_context(|| format!("reading {}", path.display()))
}

fn cmd_gen(a: &GenArgs) -> Result<ExitCode> {
    let cfg = a.common.resolve()?;
    let mut spec = WorkloadSpec::new(a.kind, cfg.sampler.seed);
    if let Some(v) = a.threads {
        spec.threads = v;
    }
    if let Some(v) = a.iterations {
        spec.iterations = v;
    }
    if let Some(v) = a.scale {
        spec.scale = v;
    }
    if a.lines.is_some() {
        spec.lines = a.lines;
    }
    if let Some(v) = a.passes {
        spec.passes = v;
    }
    if let Some(v) = a.objects {
        spec.objects = v;
    }
    if let Some(v) = a.object_size {
        spec.object_size = v;
    }
    let w = generate(&spec, &cfg.cache)?;
    let out = a.common.sink()?;
    let mut out = write_trace(&w.header, w.events, out)?;
    out.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_profile(a: &TraceArgs) -> Result<ExitCode> {
    let cfg = a.common.resolve()?;
    let reader = open_trace(&a.trace)?;
    let header = reader.header().clone();
    let run = run_profile(header, cfg, reader)?;
    let c = run.classify(&run.config.thresholds);
    let report = ProfileReport::new(&run, &c);
    a.common.emit(&match a.common.format {
        Format::Text => report.to_text(),
        Format::Structured => report.to_json(),
    })?;
    Ok(ExitCode::SUCCESS)
}

fn oracle_text(o: &OracleReport) -> String {
    let k = &o.kinds;
    let misses = k.compulsory + k.capacity + k.conflict + k.coherence;
    let mut s = format!(
        "trace {}\n{} accesses ({} loads, {} stores), {} misses\n",
        o.trace_id, o.accesses, o.loads, o.stores, misses
    );
    s.push_str(&format!(
        "compulsory {}  capacity {}  conflict {}  coherence {}\n",
        k.compulsory, k.capacity, k.conflict, k.coherence
    ));
    s.push_str(&format!(
        "load miss ratio {:.4}%  store miss ratio {:.4}%\n",
        o.load_miss_ratio * 100.0,
        o.store_miss_ratio * 100.0
    ));
    s.push_str(&format!(
        "dominant non-compulsory kind: {}\n",
        o.dominant_kind.map_or("none", |k| k.name())
    ));
    s
}

fn cmd_oracle(a: &TraceArgs) -> Result<ExitCode> {
    // only the trace matters here, but reject a malformed config all the same
    a.common.resolve()?;
    let reader = open_trace(&a.trace)?;
    let header = reader.header().clone();
    let o = run_oracle(&header, reader)?;
    a.common.emit(&match a.common.format {
        Format::Text => oracle_text(&o),
        Format::Structured => {
            let mut s = serde_json::to_string_pretty(&o)?;
            s.push('\n');
            s
        }
    })?;
    Ok(ExitCode::SUCCESS)
}

fn read_json<T: serde::de::DeserializeOwned>(p: &Path) -> Result<T> {
    let text = std::fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
    serde_json::from_str(&text).with_context(|| format!("{} is not a structured report", p.display()))
}

fn cmd_compare(a: &CompareArgs) -> Result<ExitCode> {
    if a.files.len() % 2 != 0 {
        bail!("compare takes report/oracle pairs, got {} files", a.files.len());
    }
    let mut rows = Vec::new();
    for pair in a.files.chunks(2) {
        let report: ProfileReport = read_json(&pair[0])?;
        let oracle: OracleReport = read_json(&pair[1])?;
        rows.push(compare_run(&report, &oracle).with_context(|| format!("comparing {}", pair[0].display()))?);
    }
    let cmp = Comparison::from_rows(rows);
    write_out(
        a.output.as_deref(),
        &match a.format {
            Format::Text => cmp.to_text(),
            Format::Structured => cmp.to_json(),
        },
    )?;
    Ok(if cmp.all_matched() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("cannot write {}", p.display()))?,
        None => {
            let mut o = io::stdout().lock();
            o.write_all(text.as_bytes())?;
            o.flush()?;
        }
    }
    Ok(())
}

fn cmd_suite(a: &SuiteArgs) -> Result<ExitCode> {
    let cfg = a.common.resolve()?;
    if a.seeds.is_empty() {
        bail!("no seeds given");
    }
    let res = run_suite(&WorkloadKind::SUITE, &a.seeds, &cfg)?;
    let text = match a.common.format {
        Format::Text => {
            let mut t = res.comparison.to_text();
            for r in &res.runs {
                if let Some(e) = &r.breakpoint_log_error {
                    t.push_str(&format!("breakpoint log violation in {} seed {}: {e}\n", r.kind, r.seed));
                }
            }
            t
        }
        Format::Structured => {
            let mut s = serde_json::to_string_pretty(&res)?;
            s.push('\n');
            s
        }
    };
    a.common.emit(&text)?;
    Ok(if res.passed() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match &cli.cmd {
        Command::Gen(a) => cmd_gen(a),
        Command::Profile(a) => cmd_profile(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Suite(a) => cmd_suite(a),
    };
    match r {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
