//! `mapdd`: generate instances, run simulations, sweep alpha grids and
//! validate traces.
//!
//! Exit codes: 0 success, 2 usage, 3 input, 4 liveness (step cap reached),
//! 5 trace validation found violations.

use std::collections::HashSet;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use mapdd_core::instance::resolve_map;
use mapdd_core::sweep::{
    default_configs, read_rows, run_sweep, summarize, summary_path, write_summary, ResultsWriter, SweepRow, SweepSpec,
    DEFAULT_ALPHAS, WORKERS_ENV,
};
use mapdd_core::{
    generate, load_instance, read_trace, run, save_instance, validate_trace, write_trace, Algorithm, GenSpec, GridMap,
    Regime, SchedulerConfig, SimError, SimOptions, BUILTIN_WAREHOUSE,
};

#[derive(Parser)]
#[command(name = "mapdd", version, about = "Multi-agent pickup and delivery with task deadlines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random instance file.
    Gen(GenArgs),
    /// Simulate one instance and append a result row.
    Run(RunArgs),
    /// Run the regime x configuration x alpha x seed grid.
    Sweep(SweepArgs),
    /// Re-check a trace against its instance.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Map file, or `builtin:warehouse-35x21`.
    #[arg(long, default_value = BUILTIN_WAREHOUSE)]
    map: String,
    #[arg(long, default_value_t = 151)]
    tasks: usize,
    #[arg(long, default_value_t = 15)]
    agents: usize,
    #[arg(long, value_parser = ["dense", "sparse"])]
    release: String,
    #[arg(long, value_parser = ["short", "long"])]
    deadline: String,
    #[arg(long)]
    seed: u64,
    /// Output path; defaults to `<release>-<deadline>-s<seed>.instance`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long, value_parser = ["tp", "dtp", "tpts", "dtpts"])]
    algo: String,
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
    #[arg(long)]
    swap: bool,
    #[arg(long)]
    switch: bool,
    /// Recorded with the result; runs are deterministic.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the event trace here (JSON lines).
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Append the result row to this CSV.
    #[arg(long)]
    results: Option<PathBuf>,
    /// Label for the `regime` column.
    #[arg(long, default_value = "custom")]
    regime: String,
    #[arg(long)]
    step_cap: Option<u32>,
    /// Run even if the instance is not well-formed.
    #[arg(long)]
    allow_ill_formed: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// Results CSV; existing rows are kept and skipped.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = BUILTIN_WAREHOUSE)]
    map: String,
    #[arg(long, default_value_t = 30)]
    seeds: u64,
    #[arg(long, default_value_t = 0)]
    first_seed: u64,
    #[arg(long, value_delimiter = ',')]
    alphas: Option<Vec<f64>>,
    /// Comma-separated, e.g. `dense-short,sparse-long`.
    #[arg(long, value_delimiter = ',')]
    regimes: Option<Vec<String>>,
    #[arg(long, default_value_t = 15)]
    agents: usize,
    #[arg(long, default_value_t = 151)]
    tasks: usize,
    /// Worker threads; defaults to $MAPDD_WORKERS, then to the CPU count.
    #[arg(long, env = WORKERS_ENV)]
    workers: Option<usize>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long)]
    trace: PathBuf,
}

enum Failure {
    Usage(String),
    Input(String),
    Liveness(String),
    Invalid(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Input(_) => 3,
            Failure::Liveness(_) => 4,
            Failure::Invalid(_) => 5,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Input(m) | Failure::Liveness(m) | Failure::Invalid(m) => m,
        }
    }
}

fn input<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Input(e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Validate(a) => cmd_validate(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("mapdd: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn load_map(map: &str) -> Result<GridMap, Failure> {
    resolve_map(map, Path::new(".")).map_err(input)
}

/// Map reference as seen from the directory the instance is written to.
fn map_ref_for(map: &str, out: &Path) -> String {
    if map == BUILTIN_WAREHOUSE {
        return map.to_string();
    }
    let map_path = Path::new(map);
    let out_dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    match (map_path.canonicalize(), out_dir.canonicalize()) {
        (Ok(m), Ok(d)) => match m.strip_prefix(&d) {
            Ok(rel) => rel.display().to_string(),
            Err(_) => m.display().to_string(),
        },
        _ => map.to_string(),
    }
}

fn cmd_gen(a: GenArgs) -> Result<(), Failure> {
    if a.agents == 0 {
        return Err(Failure::Usage("--agents must be at least 1".into()));
    }
    if a.tasks == 0 {
        return Err(Failure::Usage("--tasks must be at least 1".into()));
    }
    let regime: Regime = format!("{}-{}", a.release, a.deadline).parse().map_err(Failure::Usage)?;
    let out = a.out.unwrap_or_else(|| PathBuf::from(format!("{regime}-s{}.instance", a.seed)));
    let map = Arc::new(load_map(&a.map)?);
    let spec = GenSpec::new(map, map_ref_for(&a.map, &out), a.agents, a.tasks, regime, a.seed);
    let instance = generate(&spec).map_err(input)?;
    save_instance(&instance, &out).map_err(input)?;
    println!(
        "wrote {}: {} agents, {} tasks, regime {regime}, seed {}",
        out.display(),
        instance.agent_starts.len(),
        instance.tasks.len(),
        a.seed
    );
    Ok(())
}

fn cmd_run(a: RunArgs) -> Result<(), Failure> {
    let algo: Algorithm = a.algo.parse().map_err(|e: mapdd_core::ConfigError| Failure::Usage(e.to_string()))?;
    let cfg = SchedulerConfig::new(algo, a.alpha, a.swap, a.switch).map_err(|e| Failure::Usage(e.to_string()))?;
    let (instance, warnings) = load_instance(&a.instance).map_err(input)?;
    for w in &warnings {
        eprintln!("mapdd: warning: {w}");
    }
    let opts = SimOptions {
        skip_well_formed_check: a.allow_ill_formed,
        step_cap: a.step_cap,
    };
    let out = match run(&instance, &cfg, a.seed, opts) {
        Ok(out) => out,
        Err(SimError::Liveness {
            cap,
            completed,
            total,
            trace,
        }) => {
            if let Some(path) = &a.trace {
                write_trace_file(path, &trace)?;
            }
            return Err(Failure::Liveness(format!(
                "step cap {cap} reached with {completed} of {total} tasks delivered"
            )));
        }
        Err(e) => return Err(Failure::Input(e.to_string())),
    };
    if let Some(path) = &a.trace {
        write_trace_file(path, &out.trace)?;
    }
    let r = &out.result;
    let row = SweepRow {
        instance_id: a
            .instance
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        regime: a.regime,
        algo: cfg.algorithm.to_string(),
        alpha: cfg.alpha,
        swap: cfg.enable_swap,
        switch: cfg.enable_switch,
        seed: a.seed,
        cumulative_tardiness: Some(r.cumulative_tardiness),
        failure_count: Some(r.failure_count),
        makespan: Some(r.makespan),
        wall_ms: Some(r.wall_time.as_millis() as u64),
        status: "ok".into(),
    };
    if let Some(path) = &a.results {
        ResultsWriter::open(path).and_then(|mut w| w.append(&row)).map_err(input)?;
    }
    println!(
        "{} cumulative_tardiness={} failure_count={} makespan={} wall_ms={}",
        cfg.label(),
        r.cumulative_tardiness,
        r.failure_count,
        r.makespan,
        r.wall_time.as_millis()
    );
    Ok(())
}

fn write_trace_file(path: &Path, trace: &[mapdd_core::TraceEvent]) -> Result<(), Failure> {
    let file = File::create(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    write_trace(BufWriter::new(file), trace).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn cmd_sweep(a: SweepArgs) -> Result<(), Failure> {
    let regimes = match a.regimes {
        None => Regime::ALL.to_vec(),
        Some(list) => list
            .iter()
            .map(|s| s.parse::<Regime>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(Failure::Usage)?,
    };
    let spec = SweepSpec {
        map: Arc::new(load_map(&a.map)?),
        map_ref: a.map.clone(),
        num_agents: a.agents,
        num_tasks: a.tasks,
        regimes,
        configs: default_configs(),
        alphas: a.alphas.unwrap_or_else(|| DEFAULT_ALPHAS.to_vec()),
        seeds: (a.first_seed..a.first_seed + a.seeds).collect(),
    };
    let total = spec.jobs().map_err(|e| Failure::Usage(e.to_string()))?.len();
    let workers = a
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));

    let existing = read_rows(&a.out).map_err(input)?;
    let done: HashSet<_> = existing.iter().map(|r| r.key()).collect();
    let mut writer = ResultsWriter::open(&a.out).map_err(input)?;
    let stderr = io::stderr();
    let mut finished = done.len().min(total);
    let mut problems = 0usize;
    run_sweep(&spec, workers, &done, |row| {
        finished += 1;
        if !row.is_ok() {
            problems += 1;
        }
        let _ = writeln!(stderr.lock(), "[{finished}/{total}] {} {} {} alpha={} {}", row.instance_id, row.algo, flags(&row), row.alpha, row.status);
        writer.append(&row)
    })
    .map_err(input)?;

    let rows = read_rows(&a.out).map_err(input)?;
    let summary_file = summary_path(&a.out);
    write_summary(&summary_file, &summarize(&rows)).map_err(input)?;
    println!(
        "{} rows in {} ({problems} not ok this session), summary in {}",
        rows.len(),
        a.out.display(),
        summary_file.display()
    );
    Ok(())
}

fn flags(row: &SweepRow) -> &'static str {
    match (row.swap, row.switch) {
        (false, false) => "none",
        (true, false) => "swap",
        (false, true) => "switch",
        (true, true) => "swap+switch",
    }
}

fn cmd_validate(a: ValidateArgs) -> Result<(), Failure> {
    let (instance, _) = load_instance(&a.instance).map_err(input)?;
    let file = File::open(&a.trace).map_err(|e| Failure::Input(format!("{}: {e}", a.trace.display())))?;
    let trace = read_trace(BufReader::new(file)).map_err(input)?;
    let report = validate_trace(&trace, &instance);
    println!(
        "deliveries={} cumulative_tardiness={} failure_count={} makespan={} violations={}",
        report.deliveries,
        report.cumulative_tardiness,
        report.failure_count,
        report.makespan,
        report.violations.len()
    );
    for v in report.violations.iter().take(50) {
        println!("  {v}");
    }
    if report.is_clean() {
        Ok(())
    } else {
        Err(Failure::Invalid(format!("{} violations", report.violations.len())))
    }
}
