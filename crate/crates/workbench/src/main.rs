use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dpbalance_core::{run_trace, OutputHistory, PredictorKind, RouterKind};
use dpbalance_workbench::config::{load_run_traces, load_toml};
use dpbalance_workbench::{
    emit_results, emit_sweep, generate_synthetic, load_trace, run_sweep, save_trace, LoadOptions,
    RunConfig, SweepConfig, SynthSpec, TraceFormat,
};

#[derive(Parser)]
#[command(
    name = "dpbalance",
    version,
    about = "Decode-stage load balancing simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replay one trace under one configuration.
    Run(RunArgs),
    /// Run a parameter sweep described by a TOML file.
    Sweep(SweepArgs),
    /// Write a synthetic trace in the native format.
    GenTrace(GenArgs),
    /// Convert an Azure CSV trace to the native format.
    ConvertAzure(ConvertArgs),
}

#[derive(Args)]
struct TraceArgs {
    #[arg(long)]
    trace: Option<PathBuf>,
    /// native or azure
    #[arg(long)]
    format: Option<TraceFormat>,
    /// Drop requests with at most this many output tokens (0 keeps all).
    #[arg(long)]
    filter_output_gt: Option<u64>,
    #[arg(long)]
    ms_per_step: Option<f64>,
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    trace: TraceArgs,
    /// Trace the survival and exact-match predictors fit on.
    #[arg(long)]
    train_trace: Option<PathBuf>,
    #[arg(long)]
    router: Option<RouterKind>,
    #[arg(long = "G")]
    workers: Option<usize>,
    #[arg(long = "B")]
    capacity: Option<usize>,
    #[arg(long = "H")]
    horizon: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    s_greedy: Option<usize>,
    #[arg(long)]
    r_max: Option<usize>,
    /// oracle, survival or exact-match
    #[arg(long)]
    predictor: Option<PredictorKind>,
    /// Steps between predictor re-queries.
    #[arg(long)]
    delta_t: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    step_time_a: Option<f64>,
    #[arg(long)]
    step_time_b: Option<f64>,
    /// Output directory for summary.json and steps.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory for sweep.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenArgs {
    /// heavy-tailed or azure-like
    #[arg(long, default_value = "heavy-tailed")]
    profile: String,
    /// Number of requests; the profile's count if absent.
    #[arg(long)]
    count: Option<usize>,
    /// Arrivals per step; overrides --load.
    #[arg(long)]
    rate: Option<f64>,
    /// Offered load as a fraction of the G * B decode slots.
    #[arg(long, default_value_t = 1.0)]
    load: f64,
    #[arg(long = "G", default_value_t = 8)]
    workers: usize,
    #[arg(long = "B", default_value_t = 16)]
    capacity: usize,
    #[arg(long)]
    key_pool: Option<usize>,
    #[arg(long)]
    key_repeat: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ConvertArgs {
    #[arg(long)]
    trace: PathBuf,
    #[arg(long, default_value_t = 1000)]
    filter_output_gt: u64,
    #[arg(long, default_value_t = 60.0)]
    ms_per_step: f64,
    #[arg(long)]
    out: PathBuf,
}

fn apply_trace_args(config: &mut RunConfig, args: &TraceArgs) {
    if let Some(path) = &args.trace {
        config.trace = Some(path.clone());
    }
    if let Some(format) = args.format {
        config.format = format;
        if format == TraceFormat::Azure && config.load.filter_output_gt.is_none() {
            config.load.filter_output_gt = LoadOptions::for_format(format).filter_output_gt;
        }
    }
    if let Some(gt) = args.filter_output_gt {
        config.load.filter_output_gt = (gt > 0).then_some(gt);
    }
    if let Some(ms) = args.ms_per_step {
        config.load.ms_per_step = ms;
    }
}

fn resolve_run(args: &RunArgs) -> Result<RunConfig> {
    let mut config: RunConfig = match &args.config {
        Some(path) => load_toml(path).with_context(|| format!("reading {}", path.display()))?,
        None => RunConfig::default(),
    };
    apply_trace_args(&mut config, &args.trace);
    if let Some(path) = &args.train_trace {
        config.train_trace = Some(path.clone());
    }
    let sim = &mut config.sim;
    if let Some(kind) = args.router {
        sim.router.kind = kind;
    }
    if let Some(g) = args.workers {
        sim.workers = g;
    }
    if let Some(b) = args.capacity {
        sim.capacity = b;
    }
    if let Some(h) = args.horizon {
        sim.router = sim.router.clone().with_horizon(h);
    }
    if let Some(alpha) = args.alpha {
        sim.router.score.alpha = alpha;
    }
    if let Some(beta) = args.beta {
        sim.router.score.beta = beta;
    }
    if let Some(gamma) = args.gamma {
        sim.router.score.gamma = gamma;
    }
    if let Some(s) = args.s_greedy {
        sim.router.s_greedy = Some(s);
    }
    if let Some(r) = args.r_max {
        sim.router.r_max = r;
    }
    if let Some(kind) = args.predictor {
        sim.router.predictor.kind = kind;
    }
    if let Some(dt) = args.delta_t {
        sim.router.predictor.refresh_period = Some(dt);
    }
    if let Some(seed) = args.seed {
        sim.seed = seed;
    }
    if let Some(a) = args.step_time_a {
        sim.step_time_a = a;
    }
    if let Some(b) = args.step_time_b {
        sim.step_time_b = b;
    }
    sim.validate()?;
    Ok(config)
}

fn run(args: RunArgs) -> Result<()> {
    let config = resolve_run(&args)?;
    let (trace, training) = load_run_traces(&config)?;
    let learned = config.sim.router.needs_predictions()
        && config.sim.router.predictor.kind != PredictorKind::Oracle;
    let history = if learned {
        Some(OutputHistory::from_requests(
            training.as_deref().unwrap_or(&trace),
        )?)
    } else {
        None
    };
    let output = run_trace(&trace, &config.sim, history.as_ref())?;
    let files = emit_results(&args.out, &output, config.sim.workers, &config)?;
    let s = &output.summary;
    println!(
        "{} requests, {} steps: avg spread {:.1}, avg total imbalance {:.1}, throughput {:.2} tok/s",
        s.completed, s.steps, s.avg_imbalance_spread, s.avg_imbalance_total, s.throughput_proxy
    );
    for file in files {
        println!("wrote {}", file.display());
    }
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<()> {
    let config: SweepConfig =
        load_toml(&args.config).with_context(|| format!("reading {}", args.config.display()))?;
    let spec = config.into_spec()?;
    let rows = run_sweep(&spec)?;
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    let path = emit_sweep(&args.out, &rows)?;
    println!(
        "{} cells ({failed} failed), wrote {}",
        rows.len(),
        path.display()
    );
    Ok(())
}

fn gen_trace(args: GenArgs) -> Result<()> {
    let mut spec = SynthSpec::profile(&args.profile)?;
    if let Some(count) = args.count {
        spec.count = count;
    }
    spec.seed = args.seed;
    spec.rate = match args.rate {
        Some(rate) => rate,
        None => spec.rate_for_load(args.load, args.workers, args.capacity),
    };
    if let Some(pool) = args.key_pool {
        spec.key_pool = pool;
    }
    if let Some(p) = args.key_repeat {
        spec.key_repeat = p;
    }
    let trace = generate_synthetic(&spec)?;
    write_trace(&args.out, &trace)
}

fn convert_azure(args: ConvertArgs) -> Result<()> {
    let options = LoadOptions {
        ms_per_step: args.ms_per_step,
        filter_output_gt: (args.filter_output_gt > 0).then_some(args.filter_output_gt),
    };
    let trace = load_trace(&args.trace, TraceFormat::Azure, &options)?;
    write_trace(&args.out, &trace)
}

fn write_trace(path: &Path, trace: &[dpbalance_core::Request]) -> Result<()> {
    if trace.is_empty() {
        bail!("trace is empty");
    }
    save_trace(path, trace)?;
    println!("wrote {} requests to {}", trace.len(), path.display());
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run(args) => run(args),
        Command::Sweep(args) => sweep(args),
        Command::GenTrace(args) => gen_trace(args),
        Command::ConvertAzure(args) => convert_azure(args),
    }
}
