use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use rainbow_core::config::{load_config, parse_rational};
use rainbow_core::experiment::{compare, format_comparisons, run_plan, write_results, ExperimentPlan, Workload, RESULTS_FILE};
use rainbow_core::workload::{dump_text, histogram_preset, read_trace, write_trace, GeneratorKind, GeneratorSpec};
use rainbow_core::{PolicyKind, SimConfig};

#[derive(Parser)]
#[command(name = "rainbow", version, about = "Hybrid DRAM/NVM memory simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate policies on generated or recorded traces
    Run(RunArgs),
    /// Normalize a results directory to the flat-static baseline
    Report(ReportArgs),
    /// Write a generated trace to a binary file
    Gen(GenArgs),
    /// Print a binary trace as text
    TraceDump(DumpArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Policy name, or `all`; repeatable
    #[arg(long = "policy", default_value = "rainbow")]
    policies: Vec<String>,
    /// Generator name; repeatable
    #[arg(long = "gen")]
    generators: Vec<String>,
    /// Binary trace file; repeatable
    #[arg(long = "trace")]
    traces: Vec<PathBuf>,
    /// Configuration file of `section.key = value` lines
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key, `key=value`; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Sweep one key over values, `key=v1,v2,...`
    #[arg(long, value_name = "KEY=VALUES")]
    sweep: Option<String>,
    /// Output directory
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Cells simulated at once; defaults to the number of CPUs
    #[arg(long)]
    jobs: Option<usize>,
    #[command(flatten)]
    generator: GeneratorArgs,
}

#[derive(Args)]
struct GeneratorArgs {
    /// Number of references, e.g. 1e6
    #[arg(long, default_value = "1e6")]
    refs: String,
    /// Generator seed
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Address span, e.g. 4G
    #[arg(long)]
    footprint: Option<String>,
    /// Bytes of hot data, e.g. 512M
    #[arg(long = "working-set")]
    working_set: Option<String>,
    /// Hot-pages-per-superpage histogram preset
    #[arg(long = "hist")]
    histogram: Option<String>,
    /// Zipf exponent
    #[arg(long = "zipf-s")]
    zipf_exponent: Option<f64>,
    /// Fraction of references that are writes
    #[arg(long = "write-fraction")]
    write_fraction: Option<f64>,
    /// Fraction of references aimed at hot pages
    #[arg(long = "hot-fraction")]
    hot_fraction: Option<f64>,
    /// Number of issuing threads
    #[arg(long)]
    threads: Option<u8>,
    /// Redraw the working set every this many references
    #[arg(long = "phase-refs")]
    phase_refs: Option<String>,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory written by `run`
    #[arg(long, default_value = "results")]
    dir: PathBuf,
    /// Emit JSON instead of a table
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct GenArgs {
    /// Generator name
    #[arg(long = "gen", default_value = "hot-superpage-mix")]
    generator: String,
    /// Output trace file
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    spec: GeneratorArgs,
}

#[derive(Args)]
struct DumpArgs {
    trace: PathBuf,
    /// Stop after this many records
    #[arg(long)]
    limit: Option<u64>,
}

/// Integer with optional scientific notation or a binary K/M/G/T suffix.
fn parse_count(text: &str) -> anyhow::Result<u64> {
    let t = text.trim();
    let (digits, shift) = match t.chars().last().map(|c| c.to_ascii_uppercase()) {
        Some('K') => (&t[..t.len() - 1], 10),
        Some('M') => (&t[..t.len() - 1], 20),
        Some('G') => (&t[..t.len() - 1], 30),
        Some('T') => (&t[..t.len() - 1], 40),
        _ => (t, 0),
    };
    let value = parse_rational(digits)
        .map(|r| r * (1u64 << shift))
        .filter(|r| r.is_integer())
        .with_context(|| format!("`{text}` is not a non-negative integer"))?;
    Ok(value.to_integer())
}

impl GeneratorArgs {
    fn spec(&self, kind: GeneratorKind) -> anyhow::Result<GeneratorSpec> {
        let mut spec = GeneratorSpec::new(kind);
        spec.references = parse_count(&self.refs).context("--refs")?;
        spec.seed = self.seed;
        if let Some(f) = &self.footprint {
            spec.footprint_bytes = parse_count(f).context("--footprint")?;
        }
        if let Some(w) = &self.working_set {
            spec.working_set_bytes = parse_count(w).context("--working-set")?;
        }
        if let Some(h) = &self.histogram {
            spec.histogram = histogram_preset(h).with_context(|| format!("unknown histogram preset `{h}`"))?;
        }
        if let Some(s) = self.zipf_exponent {
            spec.zipf_exponent = s;
        }
        if let Some(w) = self.write_fraction {
            spec.write_fraction = w;
        }
        if let Some(h) = self.hot_fraction {
            spec.hot_fraction = h;
        }
        if let Some(t) = self.threads {
            spec.threads = t;
        }
        if let Some(p) = &self.phase_refs {
            spec.phase_references = parse_count(p).context("--phase-refs")?;
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn parse_policies(names: &[String]) -> anyhow::Result<Vec<PolicyKind>> {
    let mut out = Vec::new();
    for name in names.iter().flat_map(|n| n.split(',')) {
        if name.trim() == "all" {
            out.extend(PolicyKind::ALL);
        } else {
            out.push(name.parse::<PolicyKind>()?);
        }
    }
    let mut seen = Vec::new();
    out.retain(|p| {
        let fresh = !seen.contains(p);
        seen.push(*p);
        fresh
    });
    Ok(out)
}

fn run(args: RunArgs) -> anyhow::Result<()> {
    let mut base = match &args.config {
        Some(path) => load_config(path)?,
        None => SimConfig::default(),
    };
    for o in &args.overrides {
        let (k, v) = o.split_once('=').with_context(|| format!("--set expects key=value, got `{o}`"))?;
        base.set(k, v)?;
    }
    let policies = parse_policies(&args.policies)?;
    let mut workloads = Vec::new();
    for g in &args.generators {
        workloads.push(Workload::Generated(args.generator.spec(g.parse()?)?));
    }
    for t in &args.traces {
        if !t.is_file() {
            bail!("trace file {} does not exist", t.display());
        }
        workloads.push(Workload::Trace(t.clone()));
    }
    if workloads.is_empty() {
        workloads.push(Workload::Generated(args.generator.spec(GeneratorKind::HotSuperpageMix)?));
    }
    let sweep = match &args.sweep {
        Some(s) => {
            let (k, vs) = s.split_once('=').with_context(|| format!("--sweep expects key=v1,v2, got `{s}`"))?;
            let values: Vec<String> = vs.split(',').map(|v| v.trim().to_owned()).filter(|v| !v.is_empty()).collect();
            if values.is_empty() {
                bail!("--sweep `{s}` lists no values");
            }
            Some((k.trim().to_owned(), values))
        }
        None => None,
    };
    let jobs = args.jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if jobs == 0 {
        bail!("--jobs must be at least 1");
    }
    let plan = ExperimentPlan::grid(base, &policies, &workloads, sweep.as_ref().map(|(k, v)| (k.as_str(), v.as_slice())), jobs);
    let results = run_plan(&plan)?;
    write_results(&args.out, &results)?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    for r in &results {
        writeln!(
            out,
            "{:<48} cycles/kref {:>10.1}  mpkr {:>8.3}  migrations {:>7}",
            r.cell.id,
            r.report.cycles_per_kilo_ref(),
            r.report.mpkr(),
            r.report.migration.migrations
        )?;
    }
    writeln!(out, "wrote {}", args.out.join(RESULTS_FILE).display())?;
    Ok(())
}

fn report(args: ReportArgs) -> anyhow::Result<()> {
    let rows = compare(&args.dir)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&rows)?);
    } else {
        print!("{}", format_comparisons(&rows));
    }
    Ok(())
}

fn gen(args: GenArgs) -> anyhow::Result<()> {
    let spec = args.spec.spec(args.generator.parse()?)?;
    let n = write_trace(&args.out, spec.generate()?)?;
    println!("wrote {n} records to {}", args.out.display());
    Ok(())
}

fn trace_dump(args: DumpArgs) -> anyhow::Result<()> {
    let reader = read_trace(&args.trace)?;
    let limit = args.limit.unwrap_or(u64::MAX);
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    dump_text(reader.take(usize::try_from(limit).unwrap_or(usize::MAX)), &mut out)?;
    out.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Report(a) => report(a),
        Command::Gen(a) => gen(a),
        Command::TraceDump(a) => trace_dump(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
