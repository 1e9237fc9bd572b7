//! Robust coresets: split the data at the pilot parameter into suspected inliers and suspected
//! outliers, summarize the inliers with an ordinary black-box coreset and keep the outliers (or a
//! uniform δ-sample of them).

use std::collections::BTreeMap;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::builders::{delta_sample_size, sample_preserving_weight, BlackBox, BuilderKind, Coreset};
use crate::data::{ParamBall, WeightedDataset, WeightedPoint};
use crate::error::{CoresetError, Result};
use crate::loss::LossModel;
use crate::objective::{trim_order, trimmed_objective_points, trimmed_sum, xi};
use crate::rng::{derive_seed, derive_seed2, rng};
use crate::sensitivity::ceil_guarded;

/// Lower bounds on the trimmed objective below this are treated as uninformative.
pub const FZ_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Eps0Choice {
    pub eps0: f64,
    /// The lower bound `F` on `inf_ball f_z(θ, X)` that was used (absent when ε₀ was given).
    pub f_lower: Option<f64>,
    /// True when `F` was at the floor and `ε/16` was used instead.
    pub fallback: bool,
}

/// `ε₀ = min{ε/16, ε·F/(16(⟦X⟧ − z)ξ(ℓ))}`, with `F` the supplied lower bound or the
/// Lipschitz transfer `f_z(θ̃,X) − (⟦X⟧ − z)ξ(ℓ)`.
pub fn compute_eps0(
    model: &LossModel,
    data: &WeightedDataset,
    ball: &ParamBall,
    z: f64,
    eps: f64,
    fz_lower: Option<f64>,
) -> Result<Eps0Choice> {
    check_eps(eps)?;
    let total = data.total_weight();
    if !(z >= 0.0) || z >= total {
        return Err(CoresetError::TrimTooLarge { z, total });
    }
    let xi = xi(ball);
    let f_lower = match fz_lower {
        Some(f) => f,
        None => {
            let fz = crate::objective::trimmed_objective(model, &ball.center, data, crate::data::TrimSpec { z })?;
            (fz - (total - z) * xi).max(FZ_FLOOR)
        }
    };
    Ok(eps0_from_bound(eps, f_lower, total - z, xi))
}

pub(crate) fn eps0_from_bound(eps: f64, f_lower: f64, kept: f64, xi: f64) -> Eps0Choice {
    let first = eps / 16.0;
    if xi <= 0.0 {
        return Eps0Choice { eps0: first, f_lower: Some(f_lower), fallback: false };
    }
    if !(f_lower > FZ_FLOOR) {
        warn!("lower bound on the trimmed objective is at the floor; using eps0 = eps/16");
        return Eps0Choice { eps0: first, f_lower: Some(f_lower), fallback: true };
    }
    let second = eps * f_lower / (16.0 * kept * xi);
    Eps0Choice { eps0: first.min(second), f_lower: Some(f_lower), fallback: false }
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(CoresetError::InvalidParameter(format!("eps must be in (0,1), got {eps}")));
    }
    Ok(())
}

/// `z̃ = ⌈(1 + 1/ε₀) z⌉`, capped at `n`.
pub fn z_tilde(z: f64, eps0: f64, n: usize) -> usize {
    let raw = ceil_guarded((1.0 + 1.0 / eps0) * z);
    if raw >= n as f64 {
        n
    } else {
        raw as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustSplit {
    /// The `z̃`-th largest cost at θ̃ (0 when `z̃ = 0`).
    pub tau: f64,
    pub eps0: f64,
    pub z_tilde: usize,
    /// Ids in descending cost order (ties by ascending id).
    pub suspected_outliers: Vec<u64>,
    pub suspected_inliers: Vec<u64>,
    /// True when `z̃` hit the cap `n`.
    pub degenerate: bool,
}

struct SplitParts {
    split: RobustSplit,
    outlier_pos: Vec<usize>,
    inlier_pos: Vec<usize>,
    costs: Vec<f64>,
}

/// Top-`z̃` points by cost at θ̃ become suspected outliers.
pub fn split(
    model: &LossModel,
    data: &WeightedDataset,
    ball: &ParamBall,
    z: f64,
    eps0: f64,
) -> Result<RobustSplit> {
    model.check_theta(&ball.center)?;
    model.check_dataset(data)?;
    Ok(split_parts(model, data, ball, z, eps0)?.split)
}

fn split_parts(
    model: &LossModel,
    data: &WeightedDataset,
    ball: &ParamBall,
    z: f64,
    eps0: f64,
) -> Result<SplitParts> {
    if !(eps0 > 0.0) {
        return Err(CoresetError::InvalidParameter(format!("eps0 must be positive, got {eps0}")));
    }
    let pts = data.points();
    let costs: Vec<f64> = pts.iter().map(|p| model.cost(&ball.center, p)).collect();
    let order = trim_order(pts, &costs);
    let zt = z_tilde(z, eps0, pts.len());
    let degenerate = ceil_guarded((1.0 + 1.0 / eps0) * z) >= pts.len() as f64;
    if degenerate {
        warn!("z_tilde reaches n = {}; every point is a suspected outlier", pts.len());
    }
    let outlier_pos: Vec<usize> = order[..zt].to_vec();
    let mut inlier_pos: Vec<usize> = order[zt..].to_vec();
    inlier_pos.sort_unstable();
    let tau = outlier_pos.last().map_or(0.0, |&i| costs[i]);
    Ok(SplitParts {
        split: RobustSplit {
            tau,
            eps0,
            z_tilde: zt,
            suspected_outliers: outlier_pos.iter().map(|&i| pts[i].id).collect(),
            suspected_inliers: inlier_pos.iter().map(|&i| pts[i].id).collect(),
            degenerate,
        },
        outlier_pos,
        inlier_pos,
        costs,
    })
}

/// Parameters of a robust construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustParams {
    /// Outlier count (unit-weight points).
    pub z: f64,
    pub beta: f64,
    pub eps: f64,
    /// Failure probability used to size the δ-sample.
    pub eta: f64,
    /// Leading constant of the δ-sample size.
    pub delta_c: f64,
    /// Dimension term of the δ-sample size; defaults to the model's hint.
    pub vcdim: Option<f64>,
    pub fz_lower: Option<f64>,
    /// Use this ε₀ instead of the computed one.
    pub eps0_override: Option<f64>,
    /// Use this δ-sample size instead of the formula.
    pub so_size_override: Option<usize>,
}

impl RobustParams {
    pub fn new(z: f64, beta: f64, eps: f64) -> Self {
        RobustParams {
            z,
            beta,
            eps,
            eta: 0.1,
            delta_c: 1.0,
            vcdim: None,
            fz_lower: None,
            eps0_override: None,
            so_size_override: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_eps(self.eps)?;
        if !(self.beta >= 0.0 && self.beta < 1.0) {
            return Err(CoresetError::InvalidParameter(format!("beta must be in [0,1), got {}", self.beta)));
        }
        if !(self.z >= 1.0) || self.z.fract() != 0.0 {
            return Err(CoresetError::InvalidParameter(format!("z must be an integer ≥ 1, got {}", self.z)));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) || !(self.delta_c > 0.0) {
            return Err(CoresetError::InvalidParameter("need 0 < eta < 1 and delta_c > 0".into()));
        }
        if let Some(e0) = self.eps0_override {
            if !(e0 > 0.0) {
                return Err(CoresetError::InvalidParameter(format!("eps0 override must be positive, got {e0}")));
            }
        }
        if self.so_size_override == Some(0) {
            return Err(CoresetError::InvalidParameter("outlier sample size must be ≥ 1".into()));
        }
        Ok(())
    }

    /// `δ = βε₀/(1+ε₀)`.
    pub fn delta(&self, eps0: f64) -> f64 {
        self.beta * eps0 / (1.0 + eps0)
    }
}

/// Everything needed to audit a robust construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustProvenance {
    pub eps0: f64,
    pub eps0_fallback: bool,
    pub f_lower: Option<f64>,
    pub eps1: f64,
    pub z_tilde: usize,
    pub tau: f64,
    pub delta: f64,
    pub so_sample_size: usize,
    pub degenerate: bool,
    /// `τ·z`.
    pub markov_lhs: f64,
    /// `ε₀·f_z(θ̃,X)`.
    pub markov_rhs: f64,
    pub builder: BuilderKind,
    pub seed: u64,
    pub source_size: usize,
}

impl RobustProvenance {
    /// `τ·z ≤ ε₀·f_z(θ̃,X)` up to summation rounding.
    pub fn markov_holds(&self) -> bool {
        self.markov_lhs <= self.markov_rhs * (1.0 + 1e-12)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustCoreset {
    pub c_si: Coreset,
    pub c_so: Coreset,
    pub beta: f64,
    pub eps: f64,
    pub z: f64,
    pub provenance: RobustProvenance,
}

impl RobustCoreset {
    pub fn points(&self) -> Vec<WeightedPoint> {
        self.c_si.points.iter().chain(&self.c_so.points).cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.c_si.len() + self.c_so.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn total_weight(&self) -> f64 {
        self.c_si.total_weight() + self.c_so.total_weight()
    }

    pub fn to_dataset(&self) -> Result<WeightedDataset> {
        WeightedDataset::new(self.points())
    }
}

/// Seed of the per-node black-box build; the static inlier summary uses node `(0, 0)`.
pub(crate) fn node_seed(seed: u64, level: usize, index: usize) -> u64 {
    derive_seed2(derive_seed(seed, 0x7472_6565), level as u64, index as u64)
}

/// Seed of the δ-sample of the suspected outliers, keyed by the pool's membership.
pub(crate) fn so_sample_seed(seed: u64, sorted_ids: &[u64]) -> u64 {
    let mut h = derive_seed(seed, 0x736f);
    for &id in sorted_ids {
        h = derive_seed(h, id);
    }
    h
}

/// The suspected-outlier part: all of the pool when `β = 0`, else a uniform δ-sample weighted
/// `|pool|/|sample|`.
pub(crate) fn outlier_part(
    pool: &[WeightedPoint],
    params: &RobustParams,
    eps0: f64,
    vcdim: f64,
    seed: u64,
) -> Result<(Coreset, f64)> {
    let delta = params.delta(eps0);
    let mut sorted: Vec<&WeightedPoint> = pool.iter().collect();
    sorted.sort_by_key(|p| p.id);
    let mut params_out = BTreeMap::new();
    if params.beta == 0.0 || sorted.is_empty() {
        let mut c = Coreset::identity(sorted.into_iter().cloned().collect());
        params_out.insert("delta".into(), delta);
        c.params = params_out;
        return Ok((c, delta));
    }
    let m = match params.so_size_override {
        Some(m) => m,
        None => delta_sample_size(delta, vcdim, params.eta, params.delta_c)?,
    };
    let ids: Vec<u64> = sorted.iter().map(|p| p.id).collect();
    let mut r = rng(so_sample_seed(seed, &ids));
    let sample = sample_preserving_weight(&sorted, m, &mut r)?;
    params_out.insert("delta".into(), delta);
    params_out.insert("m".into(), m as f64);
    Ok((
        Coreset {
            points: sample,
            source_size: sorted.len(),
            builder: BuilderKind::Uniform,
            params: params_out,
        },
        delta,
    ))
}

pub(crate) fn require_unit_weights(data: &WeightedDataset) -> Result<()> {
    if let Some(p) = data.points().iter().find(|p| p.weight != 1.0) {
        return Err(CoresetError::InvalidParameter(format!(
            "robust constructions count points and need unit weights (point {} has {})",
            p.id, p.weight
        )));
    }
    Ok(())
}

/// Builds a `(β, ε)`-robust coreset: an `ε/4`-coreset of the suspected inliers from the black
/// box plus the suspected outliers (or their δ-sample with `δ = βε₀/(1+ε₀)`).
pub fn build_robust(
    model: &LossModel,
    data: &WeightedDataset,
    ball: &ParamBall,
    params: &RobustParams,
    blackbox: &BlackBox,
    seed: u64,
) -> Result<RobustCoreset> {
    params.validate()?;
    model.check_theta(&ball.center)?;
    model.check_dataset(data)?;
    require_unit_weights(data)?;
    let n = data.len();
    if params.z >= n as f64 {
        return Err(CoresetError::TrimTooLarge { z: params.z, total: n as f64 });
    }
    let choice = match params.eps0_override {
        Some(e0) => Eps0Choice { eps0: e0, f_lower: params.fz_lower, fallback: false },
        None => compute_eps0(model, data, ball, params.z, params.eps, params.fz_lower)?,
    };
    let parts = split_parts(model, data, ball, params.z, choice.eps0)?;
    let pts = data.points();
    let inliers: Vec<WeightedPoint> = parts.inlier_pos.iter().map(|&i| pts[i].clone()).collect();
    let outliers: Vec<WeightedPoint> = parts.outlier_pos.iter().map(|&i| pts[i].clone()).collect();

    let eps1 = params.eps / 4.0;
    let mut c_si = if inliers.is_empty() {
        Coreset::identity(Vec::new())
    } else {
        blackbox.build(model, &inliers, ball, eps1, node_seed(seed, 0, 0))?
    };
    c_si.source_size = inliers.len();
    let vcdim = params.vcdim.unwrap_or(model.vcdim_hint() as f64);
    let (c_so, delta) = outlier_part(&outliers, params, choice.eps0, vcdim, seed)?;

    let fz_tilde = trimmed_sum(pts, &parts.costs, params.z)?;
    let provenance = RobustProvenance {
        eps0: choice.eps0,
        eps0_fallback: choice.fallback,
        f_lower: choice.f_lower,
        eps1,
        z_tilde: parts.split.z_tilde,
        tau: parts.split.tau,
        delta,
        so_sample_size: c_so.len(),
        degenerate: parts.split.degenerate,
        markov_lhs: parts.split.tau * params.z,
        markov_rhs: choice.eps0 * fz_tilde,
        builder: blackbox.kind,
        seed,
        source_size: n,
    };
    if !parts.split.degenerate && !provenance.markov_holds() {
        // Cannot happen for a correct split; surfaced rather than hidden.
        warn!(
            "threshold check failed: tau*z = {} > eps0*f_z = {}",
            provenance.markov_lhs, provenance.markov_rhs
        );
    }
    Ok(RobustCoreset {
        c_si,
        c_so,
        beta: params.beta,
        eps: params.eps,
        z: params.z,
        provenance,
    })
}

/// `f_z(θ, C)` on the union of both parts.
pub fn robust_trimmed_eval(model: &LossModel, theta: &[f64], coreset: &RobustCoreset, z: f64) -> Result<f64> {
    model.check_theta(theta)?;
    let pts = coreset.points();
    if pts.is_empty() {
        return Err(CoresetError::EmptyDataset);
    }
    for p in &pts {
        model.check_point(p)?;
    }
    trimmed_objective_points(model, theta, &pts, z)
}

/// Both sides of `f_{(1+4β)z}(θ*_C, X) ≤ (1+3ε)·f_z(θ*_X, X)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityTransferReport {
    pub theta_c: Vec<f64>,
    pub theta_x: Vec<f64>,
    /// `f_{(1+4β)z}(θ*_C, X)`.
    pub lhs: f64,
    /// `(1+3ε)·f_z(θ*_X, X)`.
    pub rhs: f64,
    /// `lhs / f_z(θ*_X, X)`.
    pub ratio: f64,
    pub pass: bool,
}

/// Solves on the coreset at `(1+2β)z` and on the full data at `z`, both from the ball center with
/// the same round budget, and compares the full-data costs.
#[allow(clippy::too_many_arguments)]
pub fn quality_transfer_check(
    model: &LossModel,
    data: &WeightedDataset,
    ball: &ParamBall,
    z: f64,
    beta: f64,
    eps: f64,
    coreset: &RobustCoreset,
    max_rounds: usize,
) -> Result<QualityTransferReport> {
    let cdata = coreset.to_dataset()?;
    let rc = best_fit(model, &cdata, (1.0 + 2.0 * beta) * z, &ball.center, max_rounds)?;
    let rx = best_fit(model, data, z, &ball.center, max_rounds)?;
    let lhs = crate::objective::trimmed_objective(model, &rc.theta_star, data, crate::data::TrimSpec { z: (1.0 + 4.0 * beta) * z })?;
    let base = rx.trimmed_loss;
    let rhs = (1.0 + 3.0 * eps) * base;
    Ok(QualityTransferReport {
        theta_c: rc.theta_star,
        theta_x: rx.theta_star,
        lhs,
        rhs,
        ratio: lhs / base,
        pass: lhs <= rhs,
    })
}

/// Stand-in for the optimum: the better of a fit from `start` and, for center-based models, one
/// from outlier-aware local-search seeding.
fn best_fit(model: &LossModel, data: &WeightedDataset, z: f64, start: &[f64], max_rounds: usize) -> Result<crate::solvers::SolveReport> {
    let a = crate::solvers::trimmed_fit(model, data, z, start, max_rounds)?;
    if model.clusters().is_none() {
        return Ok(a);
    }
    let b = crate::solvers::solve_auto(model, data, z, None, 0, max_rounds)?;
    Ok(if b.trimmed_loss < a.trimmed_loss { b } else { a })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builders::SizeRule;
    use crate::data::ContinuityKind;

    fn costs_data(costs: &[f64]) -> (LossModel, WeightedDataset) {
        let pts = costs
            .iter()
            .enumerate()
            .map(|(i, c)| WeightedPoint::new(i as u64, vec![c.sqrt()], 1.0))
            .collect();
        (LossModel::kmeans(1, 1), WeightedDataset::new(pts).unwrap())
    }

    #[test]
    fn eps0_examples() {
        let e = eps0_from_bound(0.16, 1e9, 1e4 - 10.0, 1.0);
        assert!((e.eps0 - 0.01).abs() < 1e-15);
        let kept = 1e4 - 10.0;
        let e = eps0_from_bound(0.16, kept / 2.0, kept, 1.0);
        assert!((e.eps0 - 0.005).abs() < 1e-15);
        let e = eps0_from_bound(0.16, 1.0, kept, 0.0);
        assert_eq!(e.eps0, 0.01);
        let e = eps0_from_bound(0.16, 0.0, kept, 1.0);
        assert!(e.fallback && e.eps0 == 0.01);
    }

    #[test]
    fn z_tilde_examples() {
        assert_eq!(z_tilde(10.0, 0.01, 100_000), 1010);
        assert_eq!(z_tilde(10.0, 0.01, 500), 500);
        assert_eq!(z_tilde(1.0, 0.3, 100), 5);
    }

    #[test]
    fn split_examples() {
        let (m, d) = costs_data(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        let ball = ParamBall::new(vec![0.0], 0.1, ContinuityKind::Lipschitz { alpha: 1.0 }).unwrap();
        // z̃ = ⌈(1 + 1/1)·1⌉ = 2
        let s = split(&m, &d, &ball, 1.0, 1.0).unwrap();
        assert_eq!(s.z_tilde, 2);
        assert_eq!(s.suspected_outliers, vec![4, 3]);
        assert!((s.tau - 4.0).abs() < 1e-12);
        assert_eq!(s.suspected_inliers, vec![0, 1, 2]);

        let (m, d) = costs_data(&[3.0, 3.0, 1.0]);
        // z̃ = ⌈(1 + 1/1e9)·(1/2)⌉ = 1
        let s = split(&m, &d, &ball, 0.5, 1e9).unwrap();
        assert_eq!(s.suspected_outliers, vec![0]);
    }

    #[test]
    fn delta_formula() {
        let p = RobustParams::new(1.0, 0.5, 0.1);
        assert!((p.delta(0.01) - 0.005 / 1.01).abs() < 1e-15);
        assert!((p.delta(0.01) - 0.004950).abs() < 1e-6);
    }

    fn cluster_data(n: usize) -> (LossModel, WeightedDataset, ParamBall) {
        let pts: Vec<WeightedPoint> = (0..n)
            .map(|i| {
                let t = i as f64;
                let far = if i % 50 == 0 { 100.0 } else { 0.0 };
                WeightedPoint::new(i as u64, vec![(t * 0.37).sin() + far, (t * 0.11).cos()], 1.0)
            })
            .collect();
        let ball = ParamBall::new(vec![0.0, 0.0], 0.1, ContinuityKind::Lipschitz { alpha: 1.0 }).unwrap();
        (LossModel::kmedian(1, 2), WeightedDataset::new(pts).unwrap(), ball)
    }

    #[test]
    fn beta_zero_keeps_all_suspected_outliers() {
        let (m, d, ball) = cluster_data(400);
        let mut p = RobustParams::new(2.0, 0.0, 0.3);
        p.eps0_override = Some(0.5);
        let bb = BlackBox::new(BuilderKind::Gsp, SizeRule::Fixed { m: 20 });
        let c = build_robust(&m, &d, &ball, &p, &bb, 7).unwrap();
        let s = split(&m, &d, &ball, 2.0, 0.5).unwrap();
        let mut so: Vec<u64> = c.c_so.points.iter().map(|q| q.id).collect();
        let mut want = s.suspected_outliers.clone();
        so.sort_unstable();
        want.sort_unstable();
        assert_eq!(so, want);
        assert_eq!(c.provenance.z_tilde, 6);
        assert!(c.provenance.markov_holds());
        assert!((c.total_weight() - 400.0).abs() < 1e-9);
        assert_eq!(c, build_robust(&m, &d, &ball, &p, &bb, 7).unwrap());
    }

    #[test]
    fn positive_beta_samples_outliers_with_conserved_weight() {
        let (m, d, ball) = cluster_data(400);
        let mut p = RobustParams::new(5.0, 0.5, 0.3);
        p.eps0_override = Some(0.25);
        p.so_size_override = Some(10);
        let bb = BlackBox::new(BuilderKind::Uniform, SizeRule::Fixed { m: 50 });
        let c = build_robust(&m, &d, &ball, &p, &bb, 1).unwrap();
        assert_eq!(c.provenance.z_tilde, 25);
        assert_eq!(c.c_so.len(), 10);
        assert!((c.c_so.total_weight() - 25.0).abs() < 1e-9);
        assert!((c.c_si.total_weight() - 375.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_split_puts_everything_in_outlier_part() {
        let (m, d, ball) = cluster_data(40);
        let mut p = RobustParams::new(2.0, 0.0, 0.3);
        p.eps0_override = Some(0.01);
        let bb = BlackBox::new(BuilderKind::Gsp, SizeRule::Fixed { m: 5 });
        let c = build_robust(&m, &d, &ball, &p, &bb, 0).unwrap();
        assert!(c.provenance.degenerate);
        assert!(c.c_si.is_empty());
        assert_eq!(c.c_so.len(), 40);
        let theta = [0.3, -0.2];
        let direct = crate::objective::trimmed_objective(&m, &theta, &d, crate::data::TrimSpec { z: 2.0 }).unwrap();
        assert!((robust_trimmed_eval(&m, &theta, &c, 2.0).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_parameters() {
        let (m, d, ball) = cluster_data(40);
        let bb = BlackBox::new(BuilderKind::Gsp, SizeRule::Fixed { m: 5 });
        for p in [
            RobustParams::new(0.0, 0.0, 0.3),
            RobustParams::new(1.0, 1.0, 0.3),
            RobustParams::new(1.0, 0.0, 1.0),
            RobustParams::new(40.0, 0.0, 0.3),
        ] {
            assert!(build_robust(&m, &d, &ball, &p, &bb, 0).is_err());
        }
    }
}
