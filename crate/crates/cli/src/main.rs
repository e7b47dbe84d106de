//! `simreg`: phantom data generation, metric training, registration,
//! evaluation, metric sweeps and the console server.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime failure.

use std::fs;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use simreg_core::datagen::{
    gen_training_set, make_phantom, read_case, read_dataset, write_case, write_dataset, PerturbationRanges,
    PhantomCase, PhantomConfig,
};
use simreg_core::metrics::MetricKind;
use simreg_core::nn::{load_model, save_model, train, Network, NetworkSpec, TrainConfig};
use simreg_core::optim::OptimizerKind;
use simreg_core::pipeline::{
    evaluate, init_at_tre, metric_sweep, register, write_report, Axis, EvalSpec, GroundTruth, Initialization,
    Objective, RegistrationConfig, RegistrationResult, Similarity,
};
use simreg_core::volgeom::{read_volume, resample, write_volume, Mat4, RigidParams, SurfacePointSet};
use simreg_core::Error as CoreError;

#[derive(Debug)]
enum CliError {
    Config(String),
    Runtime(String),
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Config(_) | CoreError::InvalidArgument(_) => CliError::Config(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser)]
#[command(name = "simreg", version, about = "Rigid MR/ultrasound registration with a learned similarity metric")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate phantom cases and a perturbed training set.
    GenData(GenDataArgs),
    /// Train the TRE regression network on a generated dataset.
    Train(TrainArgs),
    /// Register one moving volume onto a fixed volume.
    Register(RegisterArgs),
    /// Run a grid of registration configurations over a set of cases.
    Evaluate(EvaluateArgs),
    /// Tabulate metric values along one parameter axis.
    Sweep(SweepArgs),
    /// Serve the console HTTP API.
    Serve(ServeArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    cases: usize,
    #[arg(long)]
    samples_per_case: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Writes `cases/case_NNN/` and `dataset/` under this directory.
    #[arg(long)]
    out: PathBuf,
    /// Phantom configuration JSON.
    #[arg(long)]
    phantom: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory written by gen-data.
    #[arg(long)]
    data: PathBuf,
    /// Validation dataset directory.
    #[arg(long)]
    val: Option<PathBuf>,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
    /// Training configuration JSON; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lr_decay: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    /// Seed for weight initialisation.
    #[arg(long, default_value_t = 1)]
    init_seed: u64,
    /// Training log JSON.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct RegisterArgs {
    /// Case directory (fixed, moving and ground truth). Alternative to
    /// --fixed/--moving.
    #[arg(long, conflicts_with_all = ["fixed", "moving"])]
    case: Option<PathBuf>,
    /// Fixed volume sidecar JSON.
    #[arg(long, requires = "moving")]
    fixed: Option<PathBuf>,
    /// Moving volume sidecar JSON.
    #[arg(long, requires = "fixed")]
    moving: Option<PathBuf>,
    /// Ground-truth meta JSON (surface points and transform). Defaults to
    /// `meta.json` next to the fixed volume when present.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    metric: Option<MetricKind>,
    #[arg(long)]
    optimizer: Option<OptimizerKind>,
    #[arg(long)]
    multipass: bool,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Start at this TRE (needs ground truth).
    #[arg(long, conflicts_with = "init")]
    init_tre: Option<f64>,
    /// Start parameters "tx,ty,tz,rx,ry,rz" (mm, degrees).
    #[arg(long)]
    init: Option<String>,
    /// Seed for the initial direction, DE and multipass.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Registration configuration JSON; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Evaluation specification JSON.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    case: PathBuf,
    #[arg(long, default_value = "tz")]
    axis: Axis,
    #[arg(long, default_value_t = -20.0, allow_hyphen_values = true)]
    from: f64,
    #[arg(long, default_value_t = 20.0, allow_hyphen_values = true)]
    to: f64,
    #[arg(long, default_value_t = 41)]
    steps: usize,
    /// Metric to tabulate; repeat for several columns.
    #[arg(long = "metric", required = true)]
    metrics: Vec<MetricKind>,
    #[arg(long)]
    multipass: bool,
    #[arg(long)]
    model: Option<PathBuf>,
    /// CSV output; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
    /// Directory of case directories.
    #[arg(long)]
    cases: PathBuf,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Where saved alignments are kept; defaults to the cases directory.
    #[arg(long)]
    store: Option<PathBuf>,
    /// Built console assets.
    #[arg(long = "static")]
    static_dir: Option<PathBuf>,
}

fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let bytes = fs::read(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> CliResult {
    let bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    fs::write(path, bytes)?;
    Ok(())
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Phantom and sample seeds for case `i`.
fn case_seeds(seed: u64, i: usize) -> (u64, u64) {
    let base = seed.wrapping_mul(1_000_003);
    (base.wrapping_add(2 * i as u64), base.wrapping_add(2 * i as u64 + 1))
}

fn gen_data(a: GenDataArgs) -> CliResult {
    if a.cases == 0 || a.samples_per_case == 0 {
        return Err(CliError::Config("--cases and --samples-per-case must be positive".into()));
    }
    let phantom: PhantomConfig = match &a.phantom {
        Some(p) => read_json(p)?,
        None => PhantomConfig::default(),
    };
    let ranges = PerturbationRanges::default();
    let mut samples = Vec::with_capacity(a.cases * a.samples_per_case);
    for i in 0..a.cases {
        let (case_seed, sample_seed) = case_seeds(a.seed, i);
        let case = make_phantom(case_seed, &phantom)?;
        write_case(a.out.join("cases").join(format!("case_{i:03}")), &case)?;
        samples.extend(gen_training_set(&case, i, a.samples_per_case, sample_seed, &ranges)?);
        eprintln!("case {i}: {} samples", a.samples_per_case);
    }
    let index = write_dataset(a.out.join("dataset"), &samples)?;
    println!("wrote {} cases and {} samples to {}", a.cases, index.samples.len(), a.out.display());
    Ok(())
}

fn train_cmd(a: TrainArgs) -> CliResult {
    let mut cfg: TrainConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.lr {
        cfg.lr = v;
    }
    if let Some(v) = a.lr_decay {
        cfg.lr_decay = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if a.checkpoint_dir.is_some() {
        cfg.checkpoint_dir = a.checkpoint_dir.clone();
    }
    let train_set = read_dataset(&a.data)?;
    let val_set = match &a.val {
        Some(v) => read_dataset(v)?,
        None => Vec::new(),
    };
    let mut net = Network::new(NetworkSpec::default_tre(), a.init_seed)?;
    let log = train(&mut net, &train_set, &val_set, &cfg, |e| {
        eprintln!("epoch {}: train loss {:.5}, val mse {:.4} mm^2", e.epoch, e.train_loss, e.val_mse);
    })?;
    save_model(&a.out, &net)?;
    if let Some(p) = &a.log {
        write_json(p, &log)?;
    }
    println!("saved {} (final val mse {:.4} mm^2)", a.out.display(), log.final_val_mse());
    Ok(())
}

fn parse_params(s: &str) -> CliResult<RigidParams> {
    let p: RigidParams = s.parse().map_err(|e: CoreError| CliError::Config(format!("--init: {e}")))?;
    if !p.is_finite() {
        return Err(CliError::Config("--init values must be finite".into()));
    }
    Ok(p)
}

#[derive(serde::Deserialize)]
struct Meta {
    surface: SurfacePointSet,
    ground_truth: Mat4,
}

fn write_trace(path: &Path, r: &RegistrationResult) -> CliResult {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["iteration", "tx", "ty", "tz", "rx", "ry", "rz", "objective", "evaluations"]).map_err(csv_err)?;
    for e in &r.trace {
        let mut row = vec![e.iteration.to_string()];
        row.extend(e.x.iter().map(|v| v.to_string()));
        row.push(e.f.to_string());
        row.push(e.evaluations.to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn register_cmd(a: RegisterArgs) -> CliResult {
    let mut cfg: RegistrationConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => RegistrationConfig::default(),
    };
    if let Some(m) = a.metric {
        cfg.metric = m;
    }
    if let Some(o) = a.optimizer {
        cfg.optimizer = o;
    }
    if a.multipass {
        cfg.multipass = true;
    }
    if a.model.is_some() {
        cfg.model = a.model.clone();
    }
    cfg.dino.de.seed = a.seed;
    cfg.multipass_config.rng_seed = a.seed;
    cfg.validate()?;

    let (fixed, moving, truth) = match (&a.case, &a.fixed, &a.moving) {
        (Some(dir), _, _) => {
            let c = read_case(dir)?;
            let truth = GroundTruth::from(&c);
            (c.fixed, c.moving, Some(truth))
        }
        (None, Some(f), Some(m)) => {
            let meta_path = a.truth.clone().or_else(|| f.parent().map(|d| d.join("meta.json")).filter(|p| p.is_file()));
            let truth = match meta_path {
                Some(p) => {
                    let meta: Meta = read_json(&p)?;
                    let surface = SurfacePointSet::new(meta.surface.points().to_vec())?;
                    Some(GroundTruth { surface, transform: meta.ground_truth })
                }
                None => None,
            };
            (read_volume(f)?, read_volume(m)?, truth)
        }
        _ => return Err(CliError::Config("give --case DIR or both --fixed and --moving".into())),
    };
    if let Some(p) = &a.init {
        cfg.init = Initialization::Params { params: parse_params(p)? };
    } else if let Some(t) = a.init_tre {
        cfg.init = Initialization::AtTre { tre_mm: t, seed: a.seed };
    }
    let init = match &cfg.init {
        Initialization::Params { params } => *params,
        Initialization::AtTre { tre_mm, seed } => {
            let truth = truth
                .as_ref()
                .ok_or_else(|| CliError::Config("--init-tre needs ground truth (--case or --truth)".into()))?;
            if truth.transform != Mat4::IDENTITY {
                return Err(CliError::Config("--init-tre needs an identity ground truth".into()));
            }
            let case = PhantomCase {
                fixed: fixed.clone(),
                moving: moving.clone(),
                surface: truth.surface.clone(),
                ground_truth: truth.transform,
            };
            init_at_tre(&case, *tre_mm, *seed)?
        }
    };
    let r = register(&fixed, &moving, truth.as_ref(), &cfg, init, None, &mut ())?;
    fs::create_dir_all(&a.out)?;
    write_json(&a.out.join("result.json"), &r)?;
    write_json(&a.out.join("params.json"), &r.params)?;
    write_trace(&a.out.join("trace.csv"), &r)?;
    let registered = resample(&moving, &r.matrix, fixed.geometry())?;
    write_volume(a.out.join("registered.json"), &registered)?;
    let fmt = |v: Option<f64>| v.map_or("n/a".to_owned(), |x| format!("{x:.3} mm"));
    println!(
        "objective {:.5} -> {:.5}, TRE {} -> {}, {} evaluations, {:.1}s",
        r.initial_objective,
        r.objective,
        fmt(r.initial_tre),
        fmt(r.final_tre),
        r.evaluations,
        r.wall_time_s
    );
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs) -> CliResult {
    let spec: EvalSpec = read_json(&a.config)?;
    for run in &spec.runs {
        run.config.check_with_model(spec.model.is_some())?;
    }
    let model = spec.model.as_ref().map(load_model).transpose()?;
    let cases = spec.cases.load()?;
    let (report, timings) = evaluate(&cases, &spec.runs, &spec.inits_mm, spec.seed, model.as_ref())?;
    write_report(&a.out, &report, &timings)?;
    println!(
        "{:<20} {:>7} {:>4} {:>8} {:>8} {:>8} {:>8} {:>6}",
        "run", "init", "n", "mean", "std", "min", "max", "failed"
    );
    for r in &report.rows {
        println!(
            "{:<20} {:>7.1} {:>4} {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>6}",
            r.run, r.init_mm, r.n, r.mean, r.std, r.min, r.max, r.failures
        );
    }
    Ok(())
}

fn sweep_cmd(a: SweepArgs) -> CliResult {
    let case = read_case(&a.case)?;
    let needs_model = a.metrics.contains(&MetricKind::Deep);
    let net = match (&a.model, needs_model) {
        (Some(p), true) => Some(load_model(p)?),
        (None, true) => return Err(CliError::Config("metric 'deep' requires --model".into())),
        _ => None,
    };
    let cfg = RegistrationConfig::default();
    let mut objectives = Vec::new();
    for &m in &a.metrics {
        let sim = Similarity::new(m, &case.fixed, net.as_ref(), cfg.mi_bins, &cfg.mind)?;
        let multipass = a.multipass.then_some(cfg.multipass_config);
        let name = if a.multipass { format!("{m}_mp") } else { m.to_string() };
        objectives.push((name, Objective { fixed: &case.fixed, moving: &case.moving, similarity: sim, multipass }));
    }
    let refs: Vec<(String, &Objective)> = objectives.iter().map(|(n, o)| (n.clone(), o)).collect();
    let table = metric_sweep(&refs, &RigidParams::IDENTITY, a.axis, a.from, a.to, a.steps)?;
    match &a.out {
        Some(p) => table.write_csv(fs::File::create(p)?)?,
        None => table.write_csv(std::io::stdout().lock())?,
    }
    Ok(())
}

fn serve_cmd(a: ServeArgs) -> CliResult {
    if !a.cases.is_dir() {
        return Err(CliError::Config(format!("cases directory {} does not exist", a.cases.display())));
    }
    let model = a.model.as_ref().map(load_model).transpose()?;
    let addr = SocketAddr::new(a.host, a.port);
    let rt = tokio::runtime::Runtime::new()?;
    eprintln!("listening on http://{addr}");
    rt.block_on(simreg_service::serve(simreg_service::ServeOptions {
        addr,
        cases_dir: a.cases,
        store_dir: a.store,
        model,
        static_dir: a.static_dir,
    }))?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Register(a) => register_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Sweep(a) => sweep_cmd(a),
        Command::Serve(a) => serve_cmd(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(m)) => {
            eprintln!("configuration error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}
