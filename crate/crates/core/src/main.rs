use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use robust_coreset::bench::{run_bench, ExperimentConfig};
use robust_coreset::builders::{gsp_build, importance_sample, uniform_sample, BlackBox, BuilderKind, Coreset, SizeRule};
use robust_coreset::data::{ContinuityKind, ParamBall, WeightedDataset};
use robust_coreset::dynamic::{DynamicConfig, DynamicRobustCoreset, Op};
use robust_coreset::error::{CoresetError, Result};
use robust_coreset::io::{
    ingest_csv, provenance_path, read_dataset_csv, read_json, read_points_any, read_oplog, write_coreset, write_coreset_csv, write_dataset,
    write_json, write_sensitivity, CoresetProvenance, IngestOptions,
};
use robust_coreset::loss::{BregmanPhi, LossModel, ModelDescriptor};
use robust_coreset::robust::{build_robust, RobustParams};
use robust_coreset::sensitivity::{sensitivity_lipschitz, sensitivity_qfp, DINKELBACH_TOL};
use robust_coreset::solvers::{pilot_ball, pilot_theta, solve_auto, DEFAULT_MAX_ROUNDS};
use robust_coreset::synth::{inject_outliers, synth_generate, OutlierMode, SynthSpec};

/// Robust coresets for trimmed learning objectives.
#[derive(Parser)]
#[command(name = "rcoreset", version)]
struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Convert a numeric CSV into the dataset format.
    Ingest(IngestArgs),
    /// Generate a synthetic dataset, optionally with outliers.
    Synth(SynthArgs),
    /// Build a coreset (robust with --robust).
    Build(BuildArgs),
    /// Run the trimmed solver.
    Solve(SolveArgs),
    /// Per-point sensitivity upper bounds.
    Sensitivity(SensitivityArgs),
    /// Replay an operation log against the dynamic structure.
    Dynamic(DynamicArgs),
    /// Run an experiment config.
    Bench(BenchArgs),
}

#[derive(Args, Serialize, Deserialize, Default, Clone)]
struct ModelArgs {
    /// logistic, kmeans, kmedian, bregman or truth_discovery.
    #[arg(long)]
    #[serde(default)]
    model: Option<String>,
    #[arg(long)]
    #[serde(default)]
    k: Option<usize>,
    /// Bregman potential: squared_euclidean or negative_entropy.
    #[arg(long)]
    #[serde(default)]
    phi: Option<String>,
    /// Gradient bound of the Bregman potential.
    #[arg(long = "bregman-l")]
    #[serde(default)]
    bregman_l: Option<f64>,
}

impl ModelArgs {
    fn model(&self, dim: usize) -> Result<LossModel> {
        let kind = self.model.clone().ok_or_else(|| config_error("--model is required"))?;
        let phi = match self.phi.as_deref() {
            None => None,
            Some(s) => Some(
                serde_json::from_value::<BregmanPhi>(serde_json::Value::String(s.into()))
                    .map_err(|_| config_error(&format!("unknown potential {s}")))?,
            ),
        };
        LossModel::from_descriptor(&ModelDescriptor { kind, k: self.k, phi, bregman_l: self.bregman_l }, dim)
    }
}

#[derive(Args, Serialize, Deserialize, Default, Clone)]
struct BallArgs {
    /// Share of the data used by the pilot fit.
    #[arg(long)]
    #[serde(default)]
    pilot_frac: Option<f64>,
    /// Ball radius; defaults to twice the pilot drift.
    #[arg(long)]
    #[serde(default)]
    radius: Option<f64>,
}

impl BallArgs {
    fn ball(&self, model: &LossModel, data: &WeightedDataset, seed: u64) -> Result<ParamBall> {
        let pilot = pilot_theta(model, data, self.pilot_frac.unwrap_or(0.01), seed)?;
        pilot_ball(model, data, &pilot, self.radius, 2.0)
    }
}

#[derive(Args, Serialize, Deserialize, Default, Clone)]
struct RobustArgs {
    #[arg(long)]
    #[serde(default)]
    z: Option<f64>,
    #[arg(long)]
    #[serde(default)]
    beta: Option<f64>,
    #[arg(long)]
    #[serde(default)]
    eps: Option<f64>,
    #[arg(long)]
    #[serde(default)]
    eps0: Option<f64>,
    /// Size of the suspected-outlier sample when beta > 0.
    #[arg(long)]
    #[serde(default)]
    so_size: Option<usize>,
    /// Known lower bound on the optimal trimmed loss.
    #[arg(long)]
    #[serde(default)]
    fz_lower: Option<f64>,
}

impl RobustArgs {
    fn params(&self) -> Result<RobustParams> {
        let z = self.z.ok_or_else(|| config_error("--z is required"))?;
        let p = RobustParams {
            eps0_override: self.eps0,
            so_size_override: self.so_size,
            fz_lower: self.fz_lower,
            ..RobustParams::new(z, self.beta.unwrap_or(0.0), self.eps.unwrap_or(0.3))
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Args, Serialize, Deserialize, Default)]
struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// The input has a header row.
    #[arg(long)]
    #[serde(default)]
    header: bool,
    /// Zero-based label column.
    #[arg(long)]
    #[serde(default)]
    label_col: Option<usize>,
    /// Raw label value mapped to +1.
    #[arg(long)]
    #[serde(default)]
    positive_class: Option<String>,
    /// Zero-based id column.
    #[arg(long)]
    #[serde(default)]
    id_col: Option<usize>,
}

#[derive(Args, Serialize, Deserialize, Default)]
struct SynthArgs {
    /// JSON file with generator settings; flags override it.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// mixture or logistic.
    #[arg(long)]
    #[serde(default)]
    kind: Option<String>,
    #[arg(long)]
    #[serde(default)]
    n: Option<usize>,
    #[arg(long)]
    #[serde(default)]
    dim: Option<usize>,
    #[arg(long)]
    #[serde(default)]
    k: Option<usize>,
    #[arg(long)]
    #[serde(default)]
    separation: Option<f64>,
    #[arg(long)]
    #[serde(default)]
    spread: Option<f64>,
    #[arg(long)]
    #[serde(default)]
    noise: Option<f64>,
    #[arg(long)]
    #[serde(default)]
    scale: Option<f64>,
    #[arg(long)]
    #[serde(default)]
    seed: Option<u64>,
    /// Number of outliers to inject.
    #[arg(long)]
    #[serde(default)]
    outliers: Option<usize>,
    /// Outlier noise standard deviation.
    #[arg(long)]
    #[serde(default)]
    sigma: Option<f64>,
    #[arg(long)]
    #[serde(default)]
    output: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Default)]
struct BuildArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    #[serde(default)]
    data: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    #[serde(flatten)]
    ball: BallArgs,
    /// Build a robust coreset instead of a plain one.
    #[arg(long)]
    #[serde(default)]
    robust: bool,
    #[command(flatten)]
    #[serde(flatten)]
    robust_args: RobustArgs,
    /// uniform, importance, gsp or identity.
    #[arg(long)]
    #[serde(default)]
    builder: Option<String>,
    /// Sample size (per layer for gsp).
    #[arg(long)]
    #[serde(default)]
    size: Option<usize>,
    #[arg(long)]
    #[serde(default)]
    seed: Option<u64>,
    #[arg(long)]
    #[serde(default)]
    output: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Default)]
struct SolveArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    #[serde(default)]
    data: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    #[arg(long)]
    #[serde(default)]
    z: Option<f64>,
    #[arg(long)]
    #[serde(default)]
    max_rounds: Option<usize>,
    #[arg(long)]
    #[serde(default)]
    seed: Option<u64>,
    /// Starting parameter as comma-separated values.
    #[arg(long, value_delimiter = ',')]
    #[serde(default)]
    theta0: Option<Vec<f64>>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    #[serde(default)]
    output: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Default)]
struct SensitivityArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    #[serde(default)]
    data: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    #[serde(flatten)]
    ball: BallArgs,
    /// lipschitz or qfp.
    #[arg(long)]
    #[serde(default)]
    method: Option<String>,
    #[arg(long)]
    #[serde(default)]
    seed: Option<u64>,
    #[arg(long)]
    #[serde(default)]
    output: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Default)]
struct DynamicArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    #[serde(default)]
    data: Option<PathBuf>,
    /// JSON-lines operation log.
    #[arg(long)]
    #[serde(default)]
    oplog: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    #[serde(flatten)]
    ball: BallArgs,
    #[command(flatten)]
    #[serde(flatten)]
    robust_args: RobustArgs,
    /// Leaf bucket size.
    #[arg(long)]
    #[serde(default)]
    bucket: Option<usize>,
    /// Black-box size per tree node.
    #[arg(long)]
    #[serde(default)]
    node_size: Option<usize>,
    #[arg(long)]
    #[serde(default)]
    builder: Option<String>,
    #[arg(long)]
    #[serde(default)]
    capacity: Option<usize>,
    #[arg(long)]
    #[serde(default)]
    seed: Option<u64>,
    /// Per-operation counters CSV.
    #[arg(long)]
    #[serde(default)]
    output: Option<PathBuf>,
    /// Final coreset CSV.
    #[arg(long)]
    #[serde(default)]
    query: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    config: PathBuf,
    /// Run directory.
    #[arg(long, default_value = "run")]
    out: PathBuf,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

fn config_error(msg: &str) -> CoresetError {
    CoresetError::InvalidParameter(msg.to_string())
}

/// Flags win over the JSON config; unset flags (and `false` switches) fall back to it.
fn merged<T: Serialize + DeserializeOwned>(cli: T, config: Option<&Path>) -> Result<T> {
    let Some(path) = config else { return Ok(cli) };
    let mut base: serde_json::Value = read_json(path)?;
    let over = serde_json::to_value(&cli)?;
    let (Some(b), serde_json::Value::Object(o)) = (base.as_object_mut(), over) else {
        return Err(config_error("config file must hold a JSON object"));
    };
    for (k, v) in o {
        if !v.is_null() && v != serde_json::Value::Bool(false) {
            b.insert(k, v);
        }
    }
    Ok(serde_json::from_value(base)?)
}

fn need<T>(v: Option<T>, flag: &str) -> Result<T> {
    v.ok_or_else(|| config_error(&format!("--{flag} is required")))
}

fn parse_builder(s: &str) -> Result<BuilderKind> {
    s.parse().map_err(|e: CoresetError| e)
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    say(&serde_json::to_string_pretty(v)?);
    Ok(())
}

/// Prints a line, ignoring a closed stdout.
fn say(line: &str) {
    let _ = writeln!(std::io::stdout(), "{line}");
}

fn ingest(a: IngestArgs) -> Result<()> {
    let opts = IngestOptions {
        has_header: a.header,
        label_col: a.label_col,
        positive_class: a.positive_class,
        id_col: a.id_col,
    };
    let data = ingest_csv(&a.input, &opts)?;
    print_json(&write_dataset(&a.output, &data)?)
}

fn synth(a: SynthArgs) -> Result<()> {
    let config = a.config.clone();
    let a = merged(a, config.as_deref())?;
    let output = need(a.output.clone(), "output")?;
    let seed = a.seed.unwrap_or(0);
    let spec = match a.kind.as_deref().unwrap_or("mixture") {
        "mixture" => SynthSpec::Mixture {
            n: need(a.n, "n")?,
            dim: a.dim.unwrap_or(2),
            k: a.k.unwrap_or(3),
            separation: a.separation.unwrap_or(10.0),
            spread: a.spread.unwrap_or(1.0),
            seed,
        },
        "logistic" => SynthSpec::Logistic {
            n: need(a.n, "n")?,
            dim: a.dim.unwrap_or(2),
            noise: a.noise.unwrap_or(0.0),
            scale: a.scale.unwrap_or(1.0),
            seed,
        },
        other => return Err(config_error(&format!("unknown generator {other}"))),
    };
    let out = synth_generate(&spec)?;
    let mut data = out.data;
    let mut outlier_ids = Vec::new();
    if let Some(count) = a.outliers {
        let sigma = a.sigma.unwrap_or(200.0);
        let mode = match spec {
            SynthSpec::Mixture { .. } => OutlierMode::Clustering { sigma },
            SynthSpec::Logistic { .. } => OutlierMode::Supervised { sigma },
        };
        (data, outlier_ids) = inject_outliers(&data, count, mode, seed.wrapping_add(1))?;
    }
    let manifest = write_dataset(&output, &data)?;
    let mut value = serde_json::to_value(&manifest)?;
    value["generator"] = serde_json::to_value(&spec)?;
    value["planted"] = serde_json::to_value(&out.planted)?;
    value["outlier_ids"] = serde_json::to_value(&outlier_ids)?;
    write_json(&output.with_extension("json"), &value)?;
    print_json(&value)
}

fn build(a: BuildArgs) -> Result<()> {
    let config = a.config.clone();
    let a = merged(a, config.as_deref())?;
    let data = read_dataset_csv(&need(a.data.clone(), "data")?)?;
    let output = need(a.output.clone(), "output")?;
    let model = a.model.model(data.dim())?;
    let seed = a.seed.unwrap_or(0);
    let kind = parse_builder(a.builder.as_deref().unwrap_or("gsp"))?;
    let size = match kind {
        BuilderKind::Identity => usize::MAX,
        _ => need(a.size.filter(|&m| m > 0), "size (≥ 1)")?,
    };
    let ball = a.ball.ball(&model, &data, seed)?;
    if a.robust {
        let params = a.robust_args.params()?;
        let c = build_robust(&model, &data, &ball, &params, &BlackBox::new(kind, SizeRule::Fixed { m: size }), seed)?;
        write_coreset_csv(&output, &c.points())?;
        let mut params_out = c.c_si.params.clone();
        params_out.insert("beta".into(), c.beta);
        params_out.insert("eps".into(), c.eps);
        params_out.insert("z".into(), c.z);
        let prov = CoresetProvenance {
            builder: kind,
            params: params_out,
            seed,
            source_size: data.len(),
            robust: Some(c.provenance.clone()),
        };
        write_json(&provenance_path(&output), &prov)?;
        return print_json(&serde_json::json!({
            "size": c.len(),
            "c_si": c.c_si.len(),
            "c_so": c.c_so.len(),
            "total_weight": c.total_weight(),
            "provenance": c.provenance,
        }));
    }
    let c: Coreset = match kind {
        BuilderKind::Uniform => uniform_sample(&data, size.min(data.len()), seed)?,
        BuilderKind::Importance => importance_sample(&data, &sensitivity_lipschitz(&model, &data, &ball)?, size, seed)?,
        BuilderKind::Gsp => gsp_build(&model, &data, &ball, size, seed)?,
        BuilderKind::Identity => Coreset::identity(data.points().to_vec()),
    };
    write_coreset(&output, &c, seed)?;
    print_json(&serde_json::json!({
        "size": c.len(),
        "total_weight": c.total_weight(),
        "builder": c.builder,
        "params": c.params,
    }))
}

fn solve(a: SolveArgs) -> Result<()> {
    let config = a.config.clone();
    let a = merged(a, config.as_deref())?;
    let data = read_points_any(&need(a.data.clone(), "data")?)?;
    let model = a.model.model(data.dim())?;
    let rep = solve_auto(
        &model,
        &data,
        a.z.unwrap_or(0.0),
        a.theta0.as_deref(),
        a.seed.unwrap_or(0),
        a.max_rounds.unwrap_or(DEFAULT_MAX_ROUNDS),
    )?;
    match &a.output {
        Some(p) => write_json(p, &rep),
        None => print_json(&rep),
    }
}

fn sensitivity(a: SensitivityArgs) -> Result<()> {
    let config = a.config.clone();
    let a = merged(a, config.as_deref())?;
    let data = read_dataset_csv(&need(a.data.clone(), "data")?)?;
    let output = need(a.output.clone(), "output")?;
    let model = a.model.model(data.dim())?;
    let ball = a.ball.ball(&model, &data, a.seed.unwrap_or(0))?;
    let (profile, tol) = match a.method.as_deref().unwrap_or("lipschitz") {
        "lipschitz" => (sensitivity_lipschitz(&model, &data, &ball)?, 0.0),
        "qfp" => {
            let alpha = model
                .smoothness_constant(&data)
                .ok_or_else(|| config_error("qfp needs a model with a smoothness constant"))?;
            let h = model.max_gradient_norm(&ball.center, &data);
            let smooth = ParamBall::new(ball.center.clone(), ball.radius, ContinuityKind::Smooth { alpha, h })?;
            (sensitivity_qfp(&model, &data, &smooth)?, DINKELBACH_TOL)
        }
        other => return Err(config_error(&format!("unknown sensitivity method {other}"))),
    };
    write_sensitivity(&output, &profile, tol)?;
    print_json(&serde_json::json!({ "S": profile.total, "n": profile.s.len(), "method": profile.method }))
}

#[derive(Serialize)]
struct OpRow {
    index: usize,
    op: &'static str,
    n: usize,
    z: f64,
    touched_nodes: usize,
    raw_points_touched: usize,
    height: usize,
    migrated: usize,
}

fn dynamic(a: DynamicArgs) -> Result<()> {
    let config = a.config.clone();
    let a = merged(a, config.as_deref())?;
    let data = read_dataset_csv(&need(a.data.clone(), "data")?)?;
    let ops = read_oplog(&need(a.oplog.clone(), "oplog")?)?;
    let model = a.model.model(data.dim())?;
    let seed = a.seed.unwrap_or(0);
    let ball = a.ball.ball(&model, &data, seed)?;
    let cfg = DynamicConfig {
        params: a.robust_args.params()?,
        blackbox: BlackBox::new(
            parse_builder(a.builder.as_deref().unwrap_or("uniform"))?,
            SizeRule::Fixed { m: a.node_size.unwrap_or(1000) },
        ),
        bucket_size: a.bucket.unwrap_or_else(|| data.len().div_ceil(8).max(1)),
        capacity: a.capacity,
        seed,
    };
    let mut d = DynamicRobustCoreset::init(model, &data, ball, cfg)?;
    let mut rows = Vec::with_capacity(ops.len());
    for (index, op) in ops.iter().enumerate() {
        d.apply(op)?;
        let s = d.last_op();
        rows.push(OpRow {
            index,
            op: match op {
                Op::Insert { .. } => "insert",
                Op::Delete { .. } => "delete",
                Op::Update { .. } => "update",
                Op::Changez { .. } => "changez",
            },
            n: d.len(),
            z: d.z(),
            touched_nodes: s.touched_nodes,
            raw_points_touched: s.raw_points_touched,
            height: s.height,
            migrated: s.migrated,
        });
    }
    if let Some(p) = &a.output {
        let mut w = csv::Writer::from_path(p)?;
        for r in &rows {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    let c = d.query()?;
    if let Some(p) = &a.query {
        write_coreset_csv(p, &c.points())?;
    }
    print_json(&serde_json::json!({
        "ops": rows.len(),
        "n": d.len(),
        "z": d.z(),
        "coreset_size": c.len(),
        "height": d.height(),
        "max_touched_nodes": rows.iter().map(|r| r.touched_nodes).max().unwrap_or(0),
    }))
}

fn bench(a: BenchArgs) -> Result<()> {
    let mut cfg: ExperimentConfig = read_json(&a.config)?;
    if let Some(t) = a.trials {
        cfg.trials = t;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let run = run_bench(&cfg, &a.out)?;
    if let Some(sb) = &run.static_bench {
        for r in &sb.rows {
            say(&format!(
                "{:<12} |C|={:<6} loss_ratio={:.4} speedup={:.1}{}",
                r.method,
                r.coreset_size,
                r.loss_ratio,
                r.speedup,
                r.accuracy.map_or(String::new(), |v| format!(" accuracy={v:.4}"))
            ));
        }
    }
    if let Some(rows) = &run.dynamic {
        for r in rows {
            say(&format!(
                "h={} B={} speedup={:.1} raw_points_touched={:.1}",
                r.height, r.bucket, r.speedup, r.raw_points_touched
            ));
        }
    }
    say(&format!("results written to {}", a.out.display()));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let res = match cli.cmd {
        Cmd::Ingest(a) => ingest(a),
        Cmd::Synth(a) => synth(a),
        Cmd::Build(a) => build(a),
        Cmd::Solve(a) => solve(a),
        Cmd::Sensitivity(a) => sensitivity(a),
        Cmd::Dynamic(a) => dynamic(a),
        Cmd::Bench(a) => bench(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}
