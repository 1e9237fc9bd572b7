//! Experiment pipelines: loss ratio, speedup and accuracy of robust coresets against full-data
//! solves, and per-update timings of the dynamic structure.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use crate::builders::{delta_sample_size, gsp_layering, BlackBox, BuilderKind, SizeRule};
use crate::data::{ParamBall, TrimSpec, WeightedDataset, WeightedPoint};
use crate::dynamic::{DynamicConfig, DynamicRobustCoreset, Op};
use crate::error::{CoresetError, Result};
use crate::io::{read_dataset_csv, read_oplog, write_json};
use crate::loss::{dot, LossModel, ModelDescriptor};
use crate::objective::trimmed_objective;
use crate::plot::{render_svg, LineSeries};
use crate::rng::{derive_seed, rng};
use crate::robust::{build_robust, compute_eps0, split, RobustCoreset, RobustParams, RobustProvenance};
use crate::solvers::{pilot_ball, pilot_theta, solve_auto, SolveReport, DEFAULT_MAX_ROUNDS};
use crate::synth::{inject_outliers, random_oplog, synth_generate, OpMix, OutlierMode, SynthSpec};

/// Exactly one of `path` (dataset CSV) or `synth`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierSpec {
    #[serde(default)]
    pub count: Option<usize>,
    /// Share of the training size, used when `count` is absent.
    #[serde(default)]
    pub fraction: Option<f64>,
    pub mode: OutlierMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallSpec {
    #[serde(default = "default_pilot_frac")]
    pub pilot_frac: f64,
    #[serde(default)]
    pub radius: Option<f64>,
    #[serde(default = "default_drift_factor")]
    pub drift_factor: f64,
}

impl Default for BallSpec {
    fn default() -> Self {
        BallSpec { pilot_frac: default_pilot_frac(), radius: None, drift_factor: default_drift_factor() }
    }
}

fn default_pilot_frac() -> f64 {
    0.01
}
fn default_drift_factor() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustSpec {
    /// Defaults to the number of injected outliers.
    #[serde(default)]
    pub z: Option<f64>,
    #[serde(default)]
    pub beta: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub eps0: Option<f64>,
    #[serde(default)]
    pub so_size: Option<usize>,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_delta_c")]
    pub delta_c: f64,
    #[serde(default)]
    pub vcdim: Option<f64>,
    #[serde(default)]
    pub fz_lower: Option<f64>,
}

impl Default for RobustSpec {
    fn default() -> Self {
        RobustSpec {
            z: None,
            beta: 0.0,
            eps: default_eps(),
            eps0: None,
            so_size: None,
            eta: default_eta(),
            delta_c: default_delta_c(),
            vcdim: None,
            fz_lower: None,
        }
    }
}

fn default_eps() -> f64 {
    0.3
}
fn default_eta() -> f64 {
    0.1
}
fn default_delta_c() -> f64 {
    1.0
}

impl RobustSpec {
    pub fn params(&self, z: f64) -> RobustParams {
        RobustParams {
            eta: self.eta,
            delta_c: self.delta_c,
            vcdim: self.vcdim,
            fz_lower: self.fz_lower,
            eps0_override: self.eps0,
            so_size_override: self.so_size,
            ..RobustParams::new(z, self.beta, self.eps)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub name: String,
    pub builder: BuilderKind,
    /// Target total sizes `|C|`.
    pub sizes: Vec<usize>,
}

/// Starting point of every solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Seeding {
    /// Local search for clustering models, the pilot parameter otherwise.
    #[default]
    Auto,
    LocalSearch,
    Pilot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSpec {
    #[serde(default = "default_rounds")]
    pub max_rounds: usize,
    #[serde(default)]
    pub seeding: Seeding,
}

impl Default for SolverSpec {
    fn default() -> Self {
        SolverSpec { max_rounds: default_rounds(), seeding: Seeding::Auto }
    }
}

fn default_rounds() -> usize {
    DEFAULT_MAX_ROUNDS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicSpec {
    /// Operation log (JSON lines); a random log of `ops` entries is generated when absent.
    #[serde(default)]
    pub oplog: Option<PathBuf>,
    #[serde(default = "default_ops")]
    pub ops: usize,
    #[serde(default)]
    pub mix: OpMix,
    #[serde(default = "default_heights")]
    pub heights: Vec<usize>,
    /// Per-node black-box size.
    #[serde(default = "default_node_size")]
    pub node_size: usize,
    #[serde(default = "default_builder")]
    pub builder: BuilderKind,
    /// Full re-solves are timed on every `full_every`-th operation.
    #[serde(default = "default_full_every")]
    pub full_every: usize,
}

fn default_ops() -> usize {
    50
}
fn default_heights() -> Vec<usize> {
    vec![2, 3, 4, 5, 6]
}
fn default_node_size() -> usize {
    1000
}
fn default_builder() -> BuilderKind {
    BuilderKind::Uniform
}
fn default_full_every() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub outliers: Option<OutlierSpec>,
    pub model: ModelDescriptor,
    #[serde(default)]
    pub ball: BallSpec,
    #[serde(default)]
    pub robust: RobustSpec,
    #[serde(default)]
    pub methods: Vec<MethodSpec>,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    /// Held-out share of the clean data for supervised accuracy.
    #[serde(default = "default_holdout")]
    pub holdout: f64,
    #[serde(default)]
    pub dynamic: Option<DynamicSpec>,
}

fn default_trials() -> usize {
    1
}
fn default_holdout() -> f64 {
    0.1
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoresetError::InvalidParameter(m));
        if self.trials == 0 {
            return bad("trials must be ≥ 1".into());
        }
        match (&self.dataset.path, &self.dataset.synth) {
            (Some(p), None) if !p.exists() => return bad(format!("dataset {} does not exist", p.display())),
            (Some(_), None) | (None, Some(_)) => {}
            _ => return bad("dataset needs exactly one of path or synth".into()),
        }
        if !(0.0..1.0).contains(&self.holdout) {
            return bad(format!("holdout must be in [0,1), got {}", self.holdout));
        }
        if let Some(m) = self.methods.iter().find(|m| m.sizes.is_empty() || m.sizes.contains(&0)) {
            return bad(format!("method {} needs positive sizes", m.name));
        }
        if let Some(d) = &self.dynamic {
            if let Some(p) = d.oplog.as_ref().filter(|p| !p.exists()) {
                return bad(format!("op log {} does not exist", p.display()));
            }
            if d.heights.contains(&0) || d.full_every == 0 || d.node_size == 0 {
                return bad("dynamic heights, node_size and full_every must be ≥ 1".into());
            }
        }
        if self.methods.is_empty() && self.dynamic.is_none() {
            return bad("nothing to run: no methods and no dynamic section".into());
        }
        Ok(())
    }
}

/// Training data (with injected outliers), the clean held-out split and the trim level.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub model: LossModel,
    pub train: WeightedDataset,
    pub test: Option<WeightedDataset>,
    pub outlier_ids: Vec<u64>,
    pub z: f64,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    let data = match (&cfg.dataset.path, &cfg.dataset.synth) {
        (Some(p), _) => read_dataset_csv(p)?,
        (_, Some(s)) => synth_generate(s)?.data,
        _ => unreachable!("validated"),
    };
    let model = LossModel::from_descriptor(&cfg.model, data.dim())?;
    let (train, test) = if model.is_supervised() && cfg.holdout > 0.0 {
        let n = data.len();
        let m = ((cfg.holdout * n as f64).round() as usize).clamp(1, n - 1);
        let held: HashSet<usize> =
            rand::seq::index::sample(&mut rng(derive_seed(cfg.seed, 0x686f)), n, m).into_iter().collect();
        let (te, tr): (Vec<_>, Vec<_>) =
            data.into_points().into_iter().enumerate().partition(|(i, _)| held.contains(i));
        let strip = |v: Vec<(usize, WeightedPoint)>| WeightedDataset::new(v.into_iter().map(|(_, p)| p).collect());
        (strip(tr)?, Some(strip(te)?))
    } else {
        (data, None)
    };
    let (train, outlier_ids) = match &cfg.outliers {
        Some(o) => {
            let count = o
                .count
                .unwrap_or_else(|| (o.fraction.unwrap_or(0.0) * train.len() as f64).round() as usize);
            inject_outliers(&train, count, o.mode, derive_seed(cfg.seed, 0x6f75))?
        }
        None => (train, Vec::new()),
    };
    let z = match cfg.robust.z {
        Some(z) => z,
        None => outlier_ids.len() as f64,
    };
    Ok(Prepared { model, train, test, outlier_ids, z })
}

/// Share of held-out points whose label matches `sign⟨θ, x⟩`.
pub fn accuracy(theta: &[f64], test: &WeightedDataset) -> f64 {
    let hits = test
        .points()
        .iter()
        .filter(|p| (if dot(theta, &p.features) >= 0.0 { 1 } else { -1 }) == p.label.unwrap_or(0))
        .count();
    hits as f64 / test.len() as f64
}

/// Robust build whose total size `|C_si| + |C_so|` is at most `target`. The outlier part keeps its
/// own size (all `z̃` points when `β = 0`); the black box gets the rest, per layer for GSP.
pub fn build_sized(
    model: &LossModel,
    data: &WeightedDataset,
    ball: &ParamBall,
    params: &RobustParams,
    builder: BuilderKind,
    target: usize,
    seed: u64,
) -> Result<RobustCoreset> {
    let eps0 = match params.eps0_override {
        Some(e) => e,
        None => compute_eps0(model, data, ball, params.z, params.eps, params.fz_lower)?.eps0,
    };
    let sp = split(model, data, ball, params.z, eps0)?;
    let so = if params.beta == 0.0 {
        sp.z_tilde
    } else {
        let vcdim = params.vcdim.unwrap_or(model.vcdim_hint() as f64);
        match params.so_size_override {
            Some(m) => m,
            None => delta_sample_size(params.delta(eps0), vcdim, params.eta, params.delta_c)?,
        }
        .min(sp.z_tilde)
    };
    let si = target.saturating_sub(so);
    let blackbox = match builder {
        BuilderKind::Identity => BlackBox::new(BuilderKind::Identity, SizeRule::Fixed { m: usize::MAX }),
        _ if si == 0 => {
            return Err(CoresetError::InvalidParameter(format!(
                "target size {target} leaves no room beside {so} outlier-part points"
            )))
        }
        BuilderKind::Gsp => {
            let ids: HashSet<u64> = sp.suspected_inliers.iter().copied().collect();
            let inliers = WeightedDataset::new(data.points().iter().filter(|p| ids.contains(&p.id)).cloned().collect())?;
            let sizes: Vec<usize> = gsp_layering(model, &inliers, ball)?.layers.iter().map(|l| l.ids.len()).collect();
            let total = |m: usize| sizes.iter().map(|&s| s.min(m)).sum::<usize>();
            let (mut lo, mut hi) = (1, sizes.iter().copied().max().unwrap_or(1));
            while lo < hi {
                let mid = (lo + hi).div_ceil(2);
                if total(mid) <= si {
                    lo = mid;
                } else {
                    hi = mid - 1;
                }
            }
            BlackBox::new(BuilderKind::Gsp, SizeRule::Fixed { m: lo })
        }
        kind => BlackBox::new(kind, SizeRule::Fixed { m: si }),
    };
    let params = RobustParams { eps0_override: Some(eps0), ..params.clone() };
    build_robust(model, data, ball, &params, &blackbox, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: String,
    pub size: usize,
    /// Mean realized `|C|`.
    pub coreset_size: f64,
    pub loss_ratio: f64,
    pub loss_ratio_std: f64,
    pub speedup: f64,
    pub speedup_std: f64,
    pub accuracy: Option<f64>,
    pub full_accuracy: Option<f64>,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub method: String,
    pub size: usize,
    pub coreset_size: usize,
    pub loss_ratio: f64,
    pub t_pilot: f64,
    pub t_build: f64,
    pub t_solve: f64,
    pub t_full: f64,
    pub speedup: f64,
    pub accuracy: Option<f64>,
    pub provenance: RobustProvenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialBaseline {
    pub trial: usize,
    pub seed: u64,
    pub theta_tilde: Vec<f64>,
    pub radius: f64,
    pub alpha: f64,
    pub pilot_drift: f64,
    pub full_loss: f64,
    pub full_iterations: usize,
    pub t_full: f64,
    pub full_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticBench {
    pub rows: Vec<BenchRow>,
    pub trials: Vec<TrialRecord>,
    pub baselines: Vec<TrialBaseline>,
    pub n_train: usize,
    pub n_test: usize,
    pub z: f64,
}

fn solve(
    cfg: &ExperimentConfig,
    model: &LossModel,
    data: &WeightedDataset,
    z: f64,
    ball: &ParamBall,
    seed: u64,
) -> Result<SolveReport> {
    let local = match cfg.solver.seeding {
        Seeding::Auto => model.clusters().is_some(),
        Seeding::LocalSearch => true,
        Seeding::Pilot => false,
    };
    let theta0 = (!local).then_some(ball.center.as_slice());
    solve_auto(model, data, z, theta0, seed, cfg.solver.max_rounds)
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

/// Timers wrap only the pilot, builds and solves.
pub fn run_static_bench(cfg: &ExperimentConfig, prep: &Prepared) -> Result<StaticBench> {
    let model = &prep.model;
    let params = cfg.robust.params(prep.z);
    let mut trials = Vec::new();
    let mut baselines = Vec::new();
    for t in 0..cfg.trials {
        let seed = derive_seed(cfg.seed, t as u64);
        let clock = Instant::now();
        let pilot = pilot_theta(model, &prep.train, cfg.ball.pilot_frac, derive_seed(seed, 1))?;
        let ball = pilot_ball(model, &prep.train, &pilot, cfg.ball.radius, cfg.ball.drift_factor)?;
        let t_pilot = clock.elapsed().as_secs_f64();

        let clock = Instant::now();
        let full = solve(cfg, model, &prep.train, prep.z, &ball, derive_seed(seed, 2))?;
        let t_full = clock.elapsed().as_secs_f64();
        let full_loss = trimmed_objective(model, &full.theta_star, &prep.train, TrimSpec { z: prep.z })?;
        let full_accuracy = prep.test.as_ref().map(|d| accuracy(&full.theta_star, d));
        info!("trial {t}: full solve {t_full:.3}s, loss {full_loss:.6}");
        baselines.push(TrialBaseline {
            trial: t,
            seed,
            theta_tilde: ball.center.clone(),
            radius: ball.radius,
            alpha: ball.continuity.alpha(),
            pilot_drift: pilot.drift,
            full_loss,
            full_iterations: full.iterations,
            t_full,
            full_accuracy,
        });

        for (mi, method) in cfg.methods.iter().enumerate() {
            for (si, &size) in method.sizes.iter().enumerate() {
                let bseed = derive_seed(seed, 0x1000 + (mi * 64 + si) as u64);
                let clock = Instant::now();
                let c = build_sized(model, &prep.train, &ball, &params, method.builder, size, bseed)?;
                let t_build = clock.elapsed().as_secs_f64();
                let cdata = c.to_dataset()?;
                let clock = Instant::now();
                let rc = solve(cfg, model, &cdata, prep.z, &ball, derive_seed(seed, 2))?;
                let t_solve = clock.elapsed().as_secs_f64();
                let loss = trimmed_objective(model, &rc.theta_star, &prep.train, TrimSpec { z: prep.z })?;
                let speedup = t_full / (t_pilot + t_build + t_solve);
                info!("trial {t} {} |C|={}: ratio {:.4}, speedup {speedup:.1}", method.name, c.len(), loss / full_loss);
                trials.push(TrialRecord {
                    trial: t,
                    seed: bseed,
                    method: method.name.clone(),
                    size,
                    coreset_size: c.len(),
                    loss_ratio: loss / full_loss,
                    t_pilot,
                    t_build,
                    t_solve,
                    t_full,
                    speedup,
                    accuracy: prep.test.as_ref().map(|d| accuracy(&rc.theta_star, d)),
                    provenance: c.provenance.clone(),
                });
            }
        }
    }
    let mut rows = Vec::new();
    for method in &cfg.methods {
        for &size in &method.sizes {
            let recs: Vec<&TrialRecord> = trials.iter().filter(|r| r.method == method.name && r.size == size).collect();
            let col = |f: fn(&TrialRecord) -> f64| recs.iter().map(|r| f(r)).collect::<Vec<f64>>();
            let (lr, lr_sd) = mean_std(&col(|r| r.loss_ratio));
            let (sp, sp_sd) = mean_std(&col(|r| r.speedup));
            let acc = prep.test.as_ref().map(|_| mean_std(&col(|r| r.accuracy.unwrap_or(f64::NAN))).0);
            let full_acc = prep.test.as_ref().map(|_| {
                mean_std(&baselines.iter().map(|b| b.full_accuracy.unwrap_or(f64::NAN)).collect::<Vec<_>>()).0
            });
            rows.push(BenchRow {
                method: method.name.clone(),
                size,
                coreset_size: mean_std(&col(|r| r.coreset_size as f64)).0,
                loss_ratio: lr,
                loss_ratio_std: lr_sd,
                speedup: sp,
                speedup_std: sp_sd,
                accuracy: acc,
                full_accuracy: full_acc,
                trials: recs.len(),
            });
        }
    }
    Ok(StaticBench {
        rows,
        trials,
        baselines,
        n_train: prep.train.len(),
        n_test: prep.test.as_ref().map_or(0, |d| d.len()),
        z: prep.z,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicRow {
    pub height: usize,
    pub bucket: usize,
    pub ops: usize,
    /// Mean seconds per operation for the update itself.
    pub t_maintain: f64,
    /// Mean seconds per operation for the query plus the solve on the queried coreset.
    pub t_query_solve: f64,
    /// Mean seconds of a full re-solve on the live data.
    pub t_full: f64,
    pub speedup: f64,
    /// Means over insert and delete operations.
    pub raw_points_touched: f64,
    pub touched_nodes: f64,
    pub max_touched_nodes: usize,
    pub coreset_size: f64,
}

/// Replays `ops` once per tree height with leaf size `⌈n₀/2^{h−1}⌉`.
pub fn run_dynamic_bench(cfg: &ExperimentConfig, prep: &Prepared, ops: &[Op]) -> Result<Vec<DynamicRow>> {
    let spec = cfg
        .dynamic
        .as_ref()
        .ok_or_else(|| CoresetError::InvalidParameter("config has no dynamic section".into()))?;
    if ops.is_empty() {
        return Ok(Vec::new());
    }
    let model = &prep.model;
    let n0 = prep.train.len();
    let seed = derive_seed(cfg.seed, 0x6479);
    let pilot = pilot_theta(model, &prep.train, cfg.ball.pilot_frac, derive_seed(seed, 1))?;
    let ball = pilot_ball(model, &prep.train, &pilot, cfg.ball.radius, cfg.ball.drift_factor)?;
    let params = cfg.robust.params(prep.z);
    let mut rows = Vec::new();
    for &h in &spec.heights {
        let bucket = n0.div_ceil(1 << (h - 1)).max(1);
        let config = DynamicConfig {
            params: params.clone(),
            blackbox: BlackBox::new(spec.builder, SizeRule::Fixed { m: spec.node_size }),
            bucket_size: bucket,
            capacity: Some(n0),
            seed,
        };
        let mut dynamic = DynamicRobustCoreset::init(*model, &prep.train, ball.clone(), config)?;
        let (mut t_maint, mut t_qs, mut fulls) = (0.0, 0.0, Vec::new());
        let (mut raw, mut nodes, mut updates, mut max_nodes, mut csize) = (0usize, 0usize, 0usize, 0usize, 0usize);
        for (i, op) in ops.iter().enumerate() {
            let clock = Instant::now();
            dynamic.apply(op)?;
            t_maint += clock.elapsed().as_secs_f64();
            let stats = dynamic.last_op();
            if matches!(op, Op::Insert { .. } | Op::Delete { .. }) {
                raw += stats.raw_points_touched;
                nodes += stats.touched_nodes;
                max_nodes = max_nodes.max(stats.touched_nodes);
                updates += 1;
            }
            let clock = Instant::now();
            let c = dynamic.query()?;
            let cdata = c.to_dataset()?;
            solve(cfg, model, &cdata, dynamic.z(), &ball, derive_seed(seed, 2))?;
            t_qs += clock.elapsed().as_secs_f64();
            csize += c.len();
            if i % spec.full_every == 0 {
                let live = dynamic.dataset()?;
                let clock = Instant::now();
                solve(cfg, model, &live, dynamic.z(), &ball, derive_seed(seed, 2))?;
                fulls.push(clock.elapsed().as_secs_f64());
            }
        }
        let k = ops.len() as f64;
        let t_full = mean_std(&fulls).0;
        let u = updates.max(1) as f64;
        rows.push(DynamicRow {
            height: h,
            bucket,
            ops: ops.len(),
            t_maintain: t_maint / k,
            t_query_solve: t_qs / k,
            t_full,
            speedup: t_full / ((t_maint + t_qs) / k),
            raw_points_touched: raw as f64 / u,
            touched_nodes: nodes as f64 / u,
            max_touched_nodes: max_nodes,
            coreset_size: csize as f64 / k,
        });
        info!("dynamic h={h}: {:?}", rows.last());
    }
    Ok(rows)
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct RunProvenance<'a> {
    config: &'a ExperimentConfig,
    crate_version: &'static str,
    n_train: usize,
    n_test: usize,
    injected_outliers: usize,
    z: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    baselines: Option<&'a [TrialBaseline]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    trials: Option<&'a [TrialRecord]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dynamic: Option<&'a [DynamicRow]>,
}

/// Everything a bench run produced.
#[derive(Debug, Clone)]
pub struct BenchRun {
    pub static_bench: Option<StaticBench>,
    pub dynamic: Option<Vec<DynamicRow>>,
}

/// Runs the configured pipelines and writes `results.csv`, `provenance.json`, `series/*.csv` and
/// `plots/*.svg` under `out`.
pub fn run_bench(cfg: &ExperimentConfig, out: &Path) -> Result<BenchRun> {
    let prep = prepare(cfg)?;
    let static_bench = if cfg.methods.is_empty() { None } else { Some(run_static_bench(cfg, &prep)?) };
    let dynamic = match &cfg.dynamic {
        Some(spec) => {
            let ops = match &spec.oplog {
                Some(p) => read_oplog(p)?,
                None => random_oplog(&prep.train, spec.ops, spec.mix, prep.z.round() as i64, derive_seed(cfg.seed, 0x6f6c))?,
            };
            Some(run_dynamic_bench(cfg, &prep, &ops)?)
        }
        None => None,
    };
    std::fs::create_dir_all(out.join("series"))?;
    std::fs::create_dir_all(out.join("plots"))?;
    if let Some(sb) = &static_bench {
        write_csv(&out.join("results.csv"), &sb.rows)?;
        write_csv(&out.join("series").join("trials.csv"), &sb.trials.iter().map(TrialCsv::from).collect::<Vec<_>>())?;
        let mut ratio = Vec::new();
        let mut speed = Vec::new();
        for m in &cfg.methods {
            let rows: Vec<&BenchRow> = sb.rows.iter().filter(|r| r.method == m.name).collect();
            ratio.push(LineSeries { name: m.name.clone(), points: rows.iter().map(|r| (r.size as f64, r.loss_ratio)).collect() });
            speed.push(LineSeries { name: m.name.clone(), points: rows.iter().map(|r| (r.size as f64, r.speedup)).collect() });
        }
        std::fs::write(out.join("plots").join("loss_ratio.svg"), render_svg(&cfg.name, "coreset size", "loss ratio", &ratio))?;
        std::fs::write(out.join("plots").join("speedup.svg"), render_svg(&cfg.name, "coreset size", "speedup", &speed))?;
    }
    if let Some(rows) = &dynamic {
        write_csv(&out.join("series").join("dynamic.csv"), rows)?;
        let pts = |f: fn(&DynamicRow) -> f64| rows.iter().map(|r| (r.height as f64, f(r))).collect::<Vec<_>>();
        std::fs::write(
            out.join("plots").join("dynamic_speedup.svg"),
            render_svg(&cfg.name, "tree height", "speedup per update", &[LineSeries { name: "speedup".into(), points: pts(|r| r.speedup) }]),
        )?;
        std::fs::write(
            out.join("plots").join("dynamic_touched.svg"),
            render_svg(
                &cfg.name,
                "tree height",
                "raw points touched per update",
                &[LineSeries { name: "raw points".into(), points: pts(|r| r.raw_points_touched) }],
            ),
        )?;
    }
    let prov = RunProvenance {
        config: cfg,
        crate_version: env!("CARGO_PKG_VERSION"),
        n_train: prep.train.len(),
        n_test: prep.test.as_ref().map_or(0, |d| d.len()),
        injected_outliers: prep.outlier_ids.len(),
        z: prep.z,
        baselines: static_bench.as_ref().map(|s| s.baselines.as_slice()),
        trials: static_bench.as_ref().map(|s| s.trials.as_slice()),
        dynamic: dynamic.as_deref(),
    };
    write_json(&out.join("provenance.json"), &prov)?;
    Ok(BenchRun { static_bench, dynamic })
}

/// Flat per-trial row (the nested provenance goes to `provenance.json`).
#[derive(Debug, Serialize)]
struct TrialCsv {
    trial: usize,
    method: String,
    size: usize,
    coreset_size: usize,
    loss_ratio: f64,
    t_pilot: f64,
    t_build: f64,
    t_solve: f64,
    t_full: f64,
    speedup: f64,
    accuracy: Option<f64>,
    eps0: f64,
    z_tilde: usize,
}

impl From<&TrialRecord> for TrialCsv {
    fn from(r: &TrialRecord) -> Self {
        TrialCsv {
            trial: r.trial,
            method: r.method.clone(),
            size: r.size,
            coreset_size: r.coreset_size,
            loss_ratio: r.loss_ratio,
            t_pilot: r.t_pilot,
            t_build: r.t_build,
            t_solve: r.t_solve,
            t_full: r.t_full,
            speedup: r.speedup,
            accuracy: r.accuracy,
            eps0: r.provenance.eps0,
            z_tilde: r.provenance.z_tilde,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ExperimentConfig {
        serde_json::from_str(
            r#"{
                "name": "tiny",
                "dataset": {"synth": {"kind": "mixture", "n": 600, "dim": 2, "k": 3, "seed": 4}},
                "outliers": {"count": 6, "mode": {"mode": "clustering"}},
                "model": {"kind": "kmeans", "k": 3},
                "robust": {"beta": 0.0, "eps": 0.3, "eps0": 0.5},
                "methods": [
                    {"name": "Full", "builder": "identity", "sizes": [1]},
                    {"name": "GSP+", "builder": "gsp", "sizes": [150]}
                ],
                "seed": 11
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn identity_method_has_unit_ratio() {
        let c = cfg();
        let prep = prepare(&c).unwrap();
        assert_eq!(prep.z, 6.0);
        let sb = run_static_bench(&c, &prep).unwrap();
        assert!((sb.rows[0].loss_ratio - 1.0).abs() < 1e-12);
        assert!(sb.rows[1].coreset_size <= 150.0);
        assert!(sb.rows.iter().all(|r| r.loss_ratio >= 0.0 && r.speedup > 0.0));
    }

    #[test]
    fn validation() {
        let mut c = cfg();
        c.trials = 0;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.dataset.path = Some("/nonexistent.csv".into());
        assert!(c.validate().is_err());
    }

    #[test]
    fn empty_oplog_gives_no_rows() {
        let mut c = cfg();
        c.dynamic = Some(serde_json::from_str("{}").unwrap());
        let prep = prepare(&c).unwrap();
        assert!(run_dynamic_bench(&c, &prep, &[]).unwrap().is_empty());
    }
}
