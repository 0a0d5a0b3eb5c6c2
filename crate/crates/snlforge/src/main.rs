use std::fs;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use snlforge::bench::{run_sweep, FrameworkKind, SweepSpec};
use snlforge::config::{self, Divergences};
use snlforge::core::codegen::{emit_testbench, generate, CodegenConfig};
use snlforge::core::model::{sample_inputs, ModelGraph};
use snlforge::core::perf::{
    check_fit, estimate_latency, estimate_resources, Calibration, ClockPeriod, DesignPoint, Feasibility, Strategy,
};
use snlforge::core::plan::StagePlan;
use snlforge::core::qsim::{self, Numerics};
use snlforge::core::sim::{EventKind, FifoDepth, Pipeline};
use snlforge::core::FixedFormat;
use snlforge::report::{self, ReportRow};
use snlforge::server::{serve, ServerConfig, DEFAULT_PORT};
use snlforge::{resolve_model, snlx};

#[derive(Parser)]
#[command(name = "snlforge", version, about = "Streaming neural-network accelerator toolchain")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Benchmark sweeps and their reports.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Resource and latency estimate for one design point.
    Estimate(EstimateArgs),
    /// Float vs fixed-point scoring.
    Eval(EvalArgs),
    /// Emit an HLS-style project.
    Codegen(CodegenArgs),
    /// Run one inference through the cycle-level simulator.
    Simulate(SimulateArgs),
    /// Serve a virtual board over TCP.
    Serve(ServeArgs),
    /// Model files.
    #[command(subcommand)]
    Model(ModelCommand),
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Run a sweep and write results.csv, results.md and plotdata.json.
    Run(BenchRunArgs),
    /// Regenerate a report from a results CSV.
    Report(BenchReportArgs),
}

#[derive(Subcommand)]
enum ModelCommand {
    /// Write a builtin benchmark as an snlx-1 manifest and blob.
    Export {
        #[arg(long)]
        builtin: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize a model (builtin name or manifest path).
    Info { model: String },
}

fn parse_precision(s: &str) -> Result<FixedFormat, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    Strategy::from_name(s).ok_or_else(|| format!("unknown strategy {s:?} (latency|resource)"))
}

fn parse_framework(s: &str) -> Result<FrameworkKind, String> {
    FrameworkKind::from_name(s).ok_or_else(|| format!("unknown framework {s:?} (snl|baked)"))
}

fn parse_rf(s: &str) -> Result<u32, String> {
    s.parse().map_err(|_| format!("bad reuse factor {s:?}"))
}

fn parse_model(s: &str) -> Result<String, String> {
    Ok(s.to_string())
}

fn parse_depth(s: &str) -> Result<FifoDepth, String> {
    if s.eq_ignore_ascii_case("unbounded") {
        return Ok(FifoDepth::UNBOUNDED);
    }
    s.parse::<usize>()
        .ok()
        .and_then(FifoDepth::bounded)
        .ok_or_else(|| format!("bad FIFO depth {s:?} (positive integer or 'unbounded')"))
}

#[derive(Args)]
struct Tuning {
    /// Calibration TOML overriding the shipped defaults.
    #[arg(long)]
    calib: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    clock_ns: u64,
}

impl Tuning {
    fn calibration(&self) -> Result<Calibration> {
        match &self.calib {
            Some(p) => Ok(config::load_calibration(p)?),
            None => Ok(Calibration::default()),
        }
    }

    fn clock(&self) -> Result<ClockPeriod> {
        ClockPeriod::from_nanos(self.clock_ns).context("clock period must be positive")
    }
}

#[derive(Args)]
struct BenchRunArgs {
    #[arg(long, value_parser = parse_model, value_delimiter = ',', default_value = "jet,anomaly,kws,vww")]
    models: Vec<String>,
    #[arg(long, value_parser = parse_precision, value_delimiter = ',', default_value = "32:16,16:6,8:3")]
    precisions: Vec<FixedFormat>,
    #[arg(long, value_parser = parse_framework, value_delimiter = ',', default_value = "snl,baked")]
    frameworks: Vec<FrameworkKind>,
    #[arg(long, value_parser = parse_strategy, value_delimiter = ',', default_value = "latency,resource")]
    strategies: Vec<Strategy>,
    #[arg(long, value_parser = parse_rf, value_delimiter = ',', default_value = "1,2,4,8")]
    rf: Vec<u32>,
    /// Device profile name (`zcu102`) or TOML path.
    #[arg(long, default_value = "zcu102")]
    profile: String,
    /// Known-divergence TOML, or `none`.
    #[arg(long)]
    divergences: Option<String>,
    /// Cross-check runtime-weight latency in the cycle simulator.
    #[arg(long)]
    simulate: bool,
    #[command(flatten)]
    tuning: Tuning,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Csv,
    Md,
    Plotdata,
}

#[derive(Args)]
struct BenchReportArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "md")]
    format: ReportFormat,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DesignArgs {
    /// Builtin name or snlx-1 manifest path.
    #[arg(long)]
    model: String,
    #[arg(long, value_parser = parse_precision, default_value = "16:6")]
    precision: FixedFormat,
    #[arg(long, value_parser = parse_framework, default_value = "snl")]
    framework: FrameworkKind,
    #[arg(long, value_parser = parse_strategy, default_value = "latency")]
    strategy: Strategy,
    #[arg(long, default_value_t = 1)]
    rf: u32,
    #[command(flatten)]
    tuning: Tuning,
}

impl DesignArgs {
    fn design(&self) -> Result<DesignPoint> {
        let dp = match self.framework {
            FrameworkKind::Snl => DesignPoint::snl(self.precision),
            FrameworkKind::Baked => DesignPoint::baked(self.precision, self.strategy, self.rf)?,
        };
        Ok(dp.with_clock(self.tuning.clock()?))
    }

    fn graph(&self) -> Result<ModelGraph> {
        load_normalized(&self.model)
    }
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    design: DesignArgs,
    #[arg(long, default_value = "zcu102")]
    profile: String,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: String,
    #[arg(long, value_parser = parse_precision, value_delimiter = ',', default_value = "32:16,16:6,8:3")]
    precisions: Vec<FixedFormat>,
    /// snlx-1 dataset manifest. Without it, seeded random inputs are compared
    /// against float inference.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct CodegenArgs {
    #[arg(long)]
    model: String,
    #[arg(long, value_parser = parse_precision, default_value = "16:6")]
    precision: FixedFormat,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    part: Option<String>,
    #[arg(long)]
    project: Option<String>,
    #[arg(long, default_value_t = 10)]
    clock_ns: u64,
    /// Also emit a C++ testbench with this many seeded vectors.
    #[arg(long)]
    testbench: Option<usize>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    design: DesignArgs,
    /// Positive integer or `unbounded`.
    #[arg(long, value_parser = parse_depth, default_value = "2")]
    fifo_depth: FifoDepth,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Write the event trace as CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    design: DesignArgs,
    #[arg(long, default_value = "127.0.0.1")]
    bind: IpAddr,
    #[arg(long, default_value_t = DEFAULT_PORT)]
    port: u16,
    /// Start every session with the model's own weights loaded.
    #[arg(long)]
    preload: bool,
}

fn load_normalized(spec: &str) -> Result<ModelGraph> {
    let graph = resolve_model(spec).with_context(|| format!("loading model {spec}"))?;
    Ok(graph.normalize_for_hardware()?)
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn bench_run(a: BenchRunArgs) -> Result<()> {
    let divergences = match a.divergences.as_deref() {
        None => Divergences::shipped(),
        Some("none") => Divergences::default(),
        Some(path) => Divergences::load(path)?,
    };
    let spec = SweepSpec {
        models: a.models,
        precisions: a.precisions,
        frameworks: a.frameworks,
        strategies: a.strategies,
        reuse_factors: a.rf,
        profile: config::profile(&a.profile)?,
        calibration: a.tuning.calibration()?,
        clock: a.tuning.clock()?,
        simulate: a.simulate,
        divergences,
    };
    let records = run_sweep(&spec)?;
    let rows = report::rows(&records);
    write(&a.out.join("results.csv"), &report::to_csv(&rows)?)?;
    write(&a.out.join("results.md"), &report::to_markdown(&rows))?;
    write(&a.out.join("plotdata.json"), &report::to_plotdata(&rows)?)?;
    let feasible = rows.iter().filter(|r| r.feasible).count();
    println!(
        "{} design points ({feasible} feasible on {}) written to {}",
        rows.len(),
        spec.profile.name,
        a.out.display()
    );
    Ok(())
}

fn bench_report(a: BenchReportArgs) -> Result<()> {
    let text = fs::read_to_string(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let rows: Vec<ReportRow> = report::from_csv(&text)?;
    let out = match a.format {
        ReportFormat::Csv => report::to_csv(&rows)?,
        ReportFormat::Md => report::to_markdown(&rows),
        ReportFormat::Plotdata => report::to_plotdata(&rows)?,
    };
    match a.out {
        Some(p) => write(&p, &out),
        None => {
            print!("{out}");
            Ok(())
        }
    }
}

fn estimate(a: EstimateArgs) -> Result<()> {
    let graph = a.design.graph()?;
    let dp = a.design.design()?;
    let calib = a.design.tuning.calibration()?;
    let plan = StagePlan::build(&graph, dp.precision)?;
    let res = estimate_resources(&plan, &dp, &calib);
    let lat = estimate_latency(&plan, &dp, &calib);
    let profile = config::profile(&a.profile)?;
    println!("{} {} {}", graph.name(), dp.precision, dp.label());
    println!(
        "{:<28} {:>5} {:>5} {:>9} {:>9} {:>5} {:>6}",
        "stage", "II", "fill", "LUT", "FF", "DSP", "BRAM18"
    );
    for (s, l) in res.stages.iter().zip(&lat.stages) {
        let r = &s.resources;
        println!(
            "{:<28} {:>5} {:>5} {:>9} {:>9} {:>5} {:>6}",
            s.stage, l.timing.ii, l.timing.fill, r.lut, r.ff, r.dsp, r.bram
        );
    }
    let t = &res.total;
    println!("total: LUT {} FF {} DSP {} BRAM18 {}", t.lut, t.ff, t.dsp, t.bram);
    println!(
        "latency: {} cycles, {} us at {} ns",
        lat.cycles,
        lat.microseconds(),
        dp.clock
    );
    match check_fit(t, &profile) {
        Feasibility::Fits => println!("fits {}", profile.name),
        Feasibility::Exceeds(list) => {
            for e in list {
                println!(
                    "exceeds {}: {} {} > {}",
                    profile.name,
                    e.resource.name(),
                    e.used,
                    e.available
                );
            }
        }
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let graph = resolve_model(&a.model).with_context(|| format!("loading model {}", a.model))?;
    if let Some(path) = &a.dataset {
        let dataset = snlx::load_dataset(path)?;
        let show = |label: &str, m: qsim::EvalMetrics| {
            let score = match (m.accuracy, m.auc) {
                (Some(acc), _) => format!("accuracy {acc:.4}"),
                (None, Some(auc)) => format!("AUC {auc:.4}"),
                (None, None) => "no score (single class)".to_string(),
            };
            println!("{label:<8} {score}  max|err| {:.6}", m.max_abs_error);
        };
        show("float", qsim::evaluate(&graph, &dataset, Numerics::Float)?);
        for &p in &a.precisions {
            show(&p.to_string(), qsim::evaluate(&graph, &dataset, Numerics::Fixed(p))?);
        }
        return Ok(());
    }
    let normalized = graph.normalize_for_hardware()?;
    let inputs = sample_inputs(normalized.input_shape().len(), a.samples, a.seed);
    let reference: Vec<Vec<f64>> = inputs
        .iter()
        .map(|x| qsim::run_float(&normalized, x))
        .collect::<Result<_, _>>()?;
    println!("{} random inputs, seed {}", a.samples, a.seed);
    for &p in &a.precisions {
        let (mut max_err, mut sum_err, mut n, mut agree) = (0.0f64, 0.0f64, 0usize, 0usize);
        for (x, r) in inputs.iter().zip(&reference) {
            let q = qsim::run_quantized(&normalized, x, p)?.values();
            for (a, b) in q.iter().zip(r) {
                max_err = max_err.max((a - b).abs());
                sum_err += (a - b).abs();
                n += 1;
            }
            if qsim::argmax(&q) == qsim::argmax(r) {
                agree += 1;
            }
        }
        println!(
            "{p:<8} max|err| {max_err:.6}  mean|err| {:.6}  argmax agreement {:.4}",
            sum_err / n.max(1) as f64,
            agree as f64 / inputs.len().max(1) as f64
        );
    }
    Ok(())
}

fn codegen(a: CodegenArgs) -> Result<()> {
    let graph = resolve_model(&a.model).with_context(|| format!("loading model {}", a.model))?;
    let mut cfg = CodegenConfig::new(a.precision);
    cfg.clock = ClockPeriod::from_nanos(a.clock_ns).context("clock period must be positive")?;
    if let Some(part) = a.part {
        cfg.part = part;
    }
    cfg.project = a.project;
    let project = generate(&graph, &cfg)?;
    let mut files = project.files.clone();
    if let Some(n) = a.testbench {
        let inputs = sample_inputs(graph.input_shape().len(), n, 1);
        files.extend(emit_testbench(&graph, &cfg, &inputs)?);
    }
    for f in &files {
        write(&a.out.join(&f.path), &f.contents)?;
    }
    println!(
        "{} files for {} written to {}",
        files.len(),
        project.name,
        a.out.display()
    );
    Ok(())
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let graph = a.design.graph()?;
    let dp = a.design.design()?;
    let calib = a.design.tuning.calibration()?;
    let mut pipeline = Pipeline::build(&graph, &dp, &calib)?
        .with_fifo_depth(a.fifo_depth)
        .with_trace(a.trace.is_some());
    pipeline.load_graph_weights(&graph)?;
    let input = sample_inputs(pipeline.plan().input_len, 1, a.seed).remove(0);
    let result = pipeline.infer(&input)?;
    let closed = estimate_latency(pipeline.plan(), &dp, &calib);
    let depth = a.fifo_depth.0.map_or("unbounded".to_string(), |d| d.to_string());
    println!("{} {} {} fifo depth {depth}", graph.name(), dp.precision, dp.label());
    println!(
        "simulated latency: {} cycles (closed form {})",
        result.latency_cycles, closed.cycles
    );
    for (i, (stage, stats)) in pipeline.plan().stages.iter().zip(&result.stages).enumerate() {
        println!(
            "  s{i:02} {:<24} first accept {:>8} last emit {:>8} stalls {:>8} fifo peak {}",
            stage.name,
            stats.first_accept,
            stats.last_emit,
            stats.stall_cycles,
            result.fifo_peak.get(i).copied().unwrap_or(0)
        );
    }
    let shown: Vec<String> = result.output.iter().take(8).map(|v| v.to_string()).collect();
    println!("output[..{}] raw: {}", shown.len(), shown.join(" "));
    if let Some(path) = a.trace {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["cycle", "stage", "event", "element", "occupancy"])?;
        for e in &result.trace {
            let kind = match e.kind {
                EventKind::Accept => "accept",
                EventKind::Emit => "emit",
            };
            w.write_record([
                e.cycle.to_string(),
                pipeline.plan().stages[e.stage].name.clone(),
                kind.to_string(),
                e.element.to_string(),
                e.occupancy.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        println!("{} trace events written to {}", result.trace.len(), path.display());
    }
    Ok(())
}

fn serve_cmd(a: ServeArgs) -> Result<()> {
    let graph = a.design.graph()?;
    let dp = a.design.design()?;
    let calib = a.design.tuning.calibration()?;
    let mut template = Pipeline::build(&graph, &dp, &calib)?;
    if a.preload {
        template.load_graph_weights(&graph)?;
    }
    let config = ServerConfig {
        bind: SocketAddr::new(a.bind, a.port),
        ..ServerConfig::default()
    };
    let handle = serve(template, graph.name(), config)?;
    println!("listening on {}", handle.local_addr());
    handle.wait();
    Ok(())
}

fn model_cmd(c: ModelCommand) -> Result<()> {
    match c {
        ModelCommand::Export { builtin, out } => {
            let graph =
                snlforge::core::model::builtin(&builtin).with_context(|| format!("unknown builtin {builtin:?}"))?;
            let path = snlx::write_model(&graph, &out)?;
            println!("{}", path.display());
        }
        ModelCommand::Info { model } => {
            let graph = resolve_model(&model)?;
            println!(
                "{}: input {:?}, {} parameters",
                graph.name(),
                graph.input_shape().dims(),
                graph.param_count()
            );
            for (layer, shape) in graph.layers().iter().zip(graph.shapes()) {
                println!(
                    "  {:<3} {:<28} {:<24} {:?} -> {:?}",
                    layer.id,
                    layer.name,
                    layer.kind.name(),
                    shape.input.dims(),
                    shape.output.dims()
                );
            }
            let normalized = graph.normalize_for_hardware()?;
            let plan = StagePlan::build(&normalized, "16:6".parse()?)?;
            println!(
                "{} streaming stages, {} register words",
                plan.stages.len(),
                plan.total_words()
            );
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Bench(BenchCommand::Run(a)) => bench_run(a),
        Command::Bench(BenchCommand::Report(a)) => bench_report(a),
        Command::Estimate(a) => estimate(a),
        Command::Eval(a) => eval(a),
        Command::Codegen(a) => codegen(a),
        Command::Simulate(a) => simulate(a),
        Command::Serve(a) => serve_cmd(a),
        Command::Model(c) => model_cmd(c),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
