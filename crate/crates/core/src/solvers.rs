//! Trimmed optimizers: alternate between trimming the heaviest-cost weight and refitting on the
//! remainder, plus the pilot fit and k-means seeding.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ContinuityKind, ParamBall, WeightedDataset, WeightedPoint};
use crate::error::{CoresetError, Result};
use crate::loss::{norm, sq_dist, LossKind, LossModel};
use crate::objective::{pairwise_sum, trim_weights, trimmed_sum};
use crate::rng::rng;

pub const DEFAULT_MAX_ROUNDS: usize = 50;
const GD_MAX_ITER: usize = 200;
const GD_TOL: f64 = 1e-6;
const PILOT_GD_MAX_ITER: usize = 100;
const WEISZFELD_ITER: usize = 10;
const LOCAL_SEARCH_SWAPS: usize = 20;
const LOCAL_SEARCH_POOL: usize = 16;
const LOCAL_SEARCH_GAIN: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub theta_star: Vec<f64>,
    /// Trimmed objective at `theta_star`, recomputed on return.
    pub trimmed_loss: f64,
    pub iterations: usize,
    pub converged: bool,
    pub wall_time: f64,
    pub max_rounds: usize,
    /// Trimmed loss after every accepted round, starting with the initial parameter.
    pub loss_history: Vec<f64>,
    /// Largest parameter distance between the final iterate and the five before it.
    pub drift: f64,
}

/// Iterates kept for the drift estimate.
struct Trail(Vec<Vec<f64>>);

impl Trail {
    fn push(&mut self, t: &[f64]) {
        self.0.push(t.to_vec());
        if self.0.len() > 6 {
            self.0.remove(0);
        }
    }

    fn drift(&self, model: &LossModel) -> f64 {
        let Some(last) = self.0.last() else { return 0.0 };
        self.0.iter().map(|t| model.param_distance(t, last)).fold(0.0, f64::max)
    }
}

fn costs_at(model: &LossModel, theta: &[f64], pts: &[WeightedPoint]) -> Vec<f64> {
    pts.iter().map(|p| model.cost(theta, p)).collect()
}

fn weighted_mean_objective(model: &LossModel, theta: &[f64], pts: &[WeightedPoint], w: &[f64], total: f64) -> f64 {
    let terms: Vec<f64> = pts
        .iter()
        .zip(w)
        .map(|(p, &wi)| if wi == 0.0 { 0.0 } else { wi * model.cost(theta, p) })
        .collect();
    pairwise_sum(&terms) / total
}

fn weighted_mean_gradient(model: &LossModel, theta: &[f64], pts: &[WeightedPoint], w: &[f64], total: f64) -> Vec<f64> {
    let mut g = vec![0.0; theta.len()];
    for (p, &wi) in pts.iter().zip(w) {
        if wi == 0.0 {
            continue;
        }
        for (a, b) in g.iter_mut().zip(model.point_gradient(theta, p)) {
            *a += wi * b;
        }
    }
    g.iter_mut().for_each(|v| *v /= total);
    g
}

/// Gradient descent with Armijo backtracking on the `w`-weighted mean loss.
fn gradient_descent(
    model: &LossModel,
    pts: &[WeightedPoint],
    w: &[f64],
    theta0: &[f64],
    max_iter: usize,
    trail: Option<&mut Trail>,
) -> Vec<f64> {
    let total: f64 = pairwise_sum(w);
    let mut theta = theta0.to_vec();
    if !(total > 0.0) {
        return theta;
    }
    let mut trail = trail;
    let mut f = weighted_mean_objective(model, &theta, pts, w, total);
    let mut step = 1.0;
    for _ in 0..max_iter {
        let g = weighted_mean_gradient(model, &theta, pts, w, total);
        let gn2: f64 = g.iter().map(|v| v * v).sum();
        if gn2.sqrt() <= GD_TOL {
            break;
        }
        let mut t = step * 2.0;
        let mut accepted = None;
        while t > 1e-12 {
            let cand: Vec<f64> = theta.iter().zip(&g).map(|(a, b)| a - t * b).collect();
            let fc = weighted_mean_objective(model, &cand, pts, w, total);
            if fc <= f - 1e-4 * t * gn2 {
                accepted = Some((cand, fc));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((cand, fc)) => {
                theta = cand;
                f = fc;
                step = t;
                if let Some(tr) = trail.as_deref_mut() {
                    tr.push(&theta);
                }
            }
            None => break,
        }
    }
    theta
}

/// Cluster index of every point with positive weight (`usize::MAX` for zero weight).
fn assignments(model: &LossModel, theta: &[f64], pts: &[WeightedPoint], w: &[f64]) -> Vec<usize> {
    pts.iter()
        .zip(w)
        .map(|(p, &wi)| if wi > 0.0 { model.nearest_center(theta, &p.features).0 } else { usize::MAX })
        .collect()
}

/// Positions of kept points by decreasing cost, for reseeding empty clusters.
fn reseed_order(costs: &[f64], w: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..costs.len()).filter(|&i| w[i] > 0.0).collect();
    idx.sort_by(|&a, &b| costs[b].total_cmp(&costs[a]).then(a.cmp(&b)));
    idx
}

/// One Lloyd update: every center moves to the weighted mean of its kept points.
fn lloyd_step(model: &LossModel, theta: &[f64], pts: &[WeightedPoint], w: &[f64]) -> Vec<f64> {
    let d = model.data_dim();
    let k = model.clusters().unwrap_or(1);
    let assign = assignments(model, theta, pts, w);
    let mut sums = vec![0.0; k * d];
    let mut mass = vec![0.0; k];
    for ((p, &wi), &j) in pts.iter().zip(w).zip(&assign) {
        if wi == 0.0 {
            continue;
        }
        mass[j] += wi;
        for (s, x) in sums[j * d..(j + 1) * d].iter_mut().zip(&p.features) {
            *s += wi * x;
        }
    }
    let mut out = theta.to_vec();
    let costs = costs_at(model, theta, pts);
    let mut spare = reseed_order(&costs, w).into_iter();
    for j in 0..k {
        if mass[j] > 0.0 {
            for (o, s) in out[j * d..(j + 1) * d].iter_mut().zip(&sums[j * d..(j + 1) * d]) {
                *o = s / mass[j];
            }
        } else if let Some(i) = spare.next() {
            out[j * d..(j + 1) * d].copy_from_slice(&pts[i].features);
        }
    }
    out
}

/// Weighted geometric-median refinement of every center (Weiszfeld iterations that skip points
/// coinciding with the current center).
fn weiszfeld_step(model: &LossModel, theta: &[f64], pts: &[WeightedPoint], w: &[f64]) -> Vec<f64> {
    let d = model.data_dim();
    let k = model.clusters().unwrap_or(1);
    let assign = assignments(model, theta, pts, w);
    let mut out = theta.to_vec();
    let costs = costs_at(model, theta, pts);
    let mut spare = reseed_order(&costs, w).into_iter();
    for j in 0..k {
        let members: Vec<usize> = (0..pts.len()).filter(|&i| assign[i] == j).collect();
        if members.is_empty() {
            if let Some(i) = spare.next() {
                out[j * d..(j + 1) * d].copy_from_slice(&pts[i].features);
            }
            continue;
        }
        let mut c = theta[j * d..(j + 1) * d].to_vec();
        for _ in 0..WEISZFELD_ITER {
            let mut num = vec![0.0; d];
            let mut den = 0.0;
            for &i in &members {
                let dist = sq_dist(&c, &pts[i].features).sqrt();
                if dist < 1e-12 {
                    continue;
                }
                let a = w[i] / dist;
                den += a;
                for (n, x) in num.iter_mut().zip(&pts[i].features) {
                    *n += a * x;
                }
            }
            if den == 0.0 {
                break;
            }
            let next: Vec<f64> = num.iter().map(|v| v / den).collect();
            let moved = sq_dist(&next, &c).sqrt();
            c = next;
            if moved <= 1e-12 * (1.0 + norm(&c)) {
                break;
            }
        }
        out[j * d..(j + 1) * d].copy_from_slice(&c);
    }
    out
}

fn inner_step(model: &LossModel, theta: &[f64], pts: &[WeightedPoint], w: &[f64]) -> Vec<f64> {
    match model.kind() {
        LossKind::Logistic | LossKind::TruthDiscovery => gradient_descent(model, pts, w, theta, GD_MAX_ITER, None),
        LossKind::KMeans { .. } | LossKind::Bregman { .. } => lloyd_step(model, theta, pts, w),
        LossKind::KMedian { .. } => weiszfeld_step(model, theta, pts, w),
    }
}

/// Alternates trimming the top-`z` weight at the current parameter with a refit on the rest until
/// the trimmed set (and, for clustering, the assignment) repeats or `max_rounds` is reached.
/// Steps that would increase the trimmed loss are shortened and, failing that, rejected.
pub fn trimmed_fit(
    model: &LossModel,
    data: &WeightedDataset,
    z: f64,
    theta0: &[f64],
    max_rounds: usize,
) -> Result<SolveReport> {
    model.check_theta(theta0)?;
    model.check_dataset(data)?;
    let start = Instant::now();
    let pts = data.points();
    let mut theta = theta0.to_vec();
    let mut costs = costs_at(model, &theta, pts);
    let mut loss = trimmed_sum(pts, &costs, z)?;
    let mut history = vec![loss];
    let mut trail = Trail(Vec::new());
    trail.push(&theta);
    let mut prev: Option<(Vec<f64>, Vec<usize>)> = None;
    let mut converged = false;
    let mut rounds = 0;
    let clustering = model.clusters().is_some();
    for _ in 0..max_rounds {
        let kept = trim_weights(pts, &costs, z)?;
        let assign = if clustering { assignments(model, &theta, pts, &kept) } else { Vec::new() };
        let sig = (kept.iter().zip(pts).map(|(k, p)| p.weight - k).collect::<Vec<f64>>(), assign);
        if prev.as_ref() == Some(&sig) {
            converged = true;
            break;
        }
        rounds += 1;
        let target = inner_step(model, &theta, pts, &kept);
        let mut accepted = None;
        let mut frac = 1.0;
        for _ in 0..=10 {
            let cand: Vec<f64> = theta.iter().zip(&target).map(|(a, b)| a + frac * (b - a)).collect();
            let cand_costs = costs_at(model, &cand, pts);
            let cand_loss = trimmed_sum(pts, &cand_costs, z)?;
            if cand_loss <= loss {
                accepted = Some((cand, cand_costs, cand_loss));
                break;
            }
            frac *= 0.5;
        }
        match accepted {
            Some((cand, cand_costs, cand_loss)) => {
                theta = cand;
                costs = cand_costs;
                loss = cand_loss;
                history.push(loss);
                trail.push(&theta);
            }
            None => {
                converged = true;
                break;
            }
        }
        prev = Some(sig);
    }
    let trimmed_loss = trimmed_sum(pts, &costs_at(model, &theta, pts), z)?;
    Ok(SolveReport {
        drift: trail.drift(model),
        theta_star: theta,
        trimmed_loss,
        iterations: rounds,
        converged,
        wall_time: start.elapsed().as_secs_f64(),
        max_rounds,
        loss_history: history,
    })
}

/// k-means-- from the given centers.
pub fn kmeans_mm(data: &WeightedDataset, k: usize, z: f64, centers0: &[f64], max_rounds: usize) -> Result<SolveReport> {
    let model = LossModel::new(LossKind::KMeans { k }, data.dim())?;
    trimmed_fit(&model, data, z, centers0, max_rounds)
}

fn distinct_count(pts: &[&WeightedPoint], cap: usize) -> usize {
    let mut seen: Vec<&[f64]> = Vec::new();
    for p in pts {
        if !seen.contains(&p.features.as_slice()) {
            seen.push(&p.features);
            if seen.len() >= cap {
                break;
            }
        }
    }
    seen.len()
}

/// Trimmed sum of per-point costs by selection rather than sorting (expected linear time).
fn fast_trimmed(weights: &[f64], costs: &[f64], z: f64, unit: bool) -> f64 {
    if unit && z.fract() == 0.0 {
        let zi = z as usize;
        let total: f64 = costs.iter().sum();
        if zi == 0 {
            return total;
        }
        let mut c = costs.to_vec();
        let pivot = c.len() - zi;
        c.select_nth_unstable_by(pivot, |a, b| a.total_cmp(b));
        return c[..pivot].iter().sum();
    }
    let mut pairs: Vec<(f64, f64)> = costs.iter().copied().zip(weights.iter().copied()).collect();
    let total: f64 = pairs.iter().map(|(c, w)| c * w).sum();
    total - heaviest_mass(&mut pairs, z)
}

/// Weighted cost carried by the top `z` units of weight in `(cost, weight)` pairs; the boundary
/// pair contributes fractionally. Reorders `pairs`.
fn heaviest_mass(mut pairs: &mut [(f64, f64)], mut z: f64) -> f64 {
    let mut removed = 0.0;
    while z > 0.0 && !pairs.is_empty() {
        let mid = pairs.len() / 2;
        pairs.select_nth_unstable_by(mid, |a, b| b.0.total_cmp(&a.0));
        let (hi, rest) = pairs.split_at_mut(mid);
        let w_hi: f64 = hi.iter().map(|p| p.1).sum();
        if w_hi >= z {
            pairs = hi;
            continue;
        }
        removed += hi.iter().map(|p| p.0 * p.1).sum::<f64>();
        z -= w_hi;
        let (pc, pw) = rest[0];
        let take = pw.min(z);
        removed += take * pc;
        z -= take;
        pairs = &mut rest[1..];
    }
    removed
}

/// k-means++ seeding (weighted D² sampling, ignoring the `z` farthest weight) followed by
/// single-swap local search on the trimmed k-means cost. A swap is kept when it lowers the cost by
/// at least a `10⁻³` fraction.
pub fn local_search_seed(data: &WeightedDataset, k: usize, z: f64, seed: u64) -> Result<Vec<f64>> {
    let pts = data.points();
    let d = data.dim();
    let total = data.total_weight();
    if k == 0 {
        return Err(CoresetError::InvalidParameter("k must be ≥ 1".into()));
    }
    if !(z >= 0.0) || z >= total {
        return Err(CoresetError::TrimTooLarge { z, total });
    }
    let refs: Vec<&WeightedPoint> = pts.iter().filter(|p| p.weight > 0.0).collect();
    let distinct = distinct_count(&refs, k);
    if distinct < k {
        return Err(CoresetError::TooFewDistinctPoints { k, distinct });
    }
    let mut r = rng(seed);
    let weights: Vec<f64> = pts.iter().map(|p| p.weight).collect();
    let unit = weights.iter().all(|&w| w == 1.0);

    let first = sample_by(&mut r, &weights).expect("positive total weight");
    let mut centers: Vec<Vec<f64>> = vec![pts[first].features.clone()];
    let mut near: Vec<f64> = pts.iter().map(|p| sq_dist(&p.features, &centers[0])).collect();
    while centers.len() < k {
        let scores = trimmed_scores(&weights, &near, z);
        let i = sample_by(&mut r, &scores).unwrap_or_else(|| first_unused(pts, &centers));
        let c = pts[i].features.clone();
        for (n, p) in near.iter_mut().zip(pts) {
            *n = n.min(sq_dist(&p.features, &c));
        }
        centers.push(c);
    }

    let dist_matrix = |centers: &[Vec<f64>]| -> Vec<Vec<f64>> {
        centers.iter().map(|c| pts.iter().map(|p| sq_dist(&p.features, c)).collect()).collect()
    };
    let mut dm = dist_matrix(&centers);
    let nearest = |dm: &[Vec<f64>], skip: Option<usize>| -> Vec<f64> {
        (0..pts.len())
            .map(|i| {
                dm.iter()
                    .enumerate()
                    .filter(|(j, _)| Some(*j) != skip)
                    .map(|(_, row)| row[i])
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    };
    let mut cur_near = nearest(&dm, None);
    let mut cur = fast_trimmed(&weights, &cur_near, z, unit);
    for _ in 0..LOCAL_SEARCH_SWAPS {
        let scores = trimmed_scores(&weights, &cur_near, z);
        let mut cands: Vec<usize> = Vec::new();
        for _ in 0..LOCAL_SEARCH_POOL {
            match sample_by(&mut r, &scores) {
                Some(i) if !cands.contains(&i) => cands.push(i),
                _ => {}
            }
        }
        let mut best: Option<(f64, usize, usize)> = None;
        let without: Vec<Vec<f64>> = (0..k).map(|j| nearest(&dm, Some(j))).collect();
        for &c in &cands {
            let dc: Vec<f64> = pts.iter().map(|p| sq_dist(&p.features, &pts[c].features)).collect();
            for (j, wo) in without.iter().enumerate() {
                let costs: Vec<f64> = wo.iter().zip(&dc).map(|(a, b)| a.min(*b)).collect();
                let v = fast_trimmed(&weights, &costs, z, unit);
                if best.is_none_or(|b| v < b.0) {
                    best = Some((v, c, j));
                }
            }
        }
        match best {
            Some((v, c, j)) if v <= (1.0 - LOCAL_SEARCH_GAIN) * cur => {
                centers[j] = pts[c].features.clone();
                dm[j] = pts.iter().map(|p| sq_dist(&p.features, &centers[j])).collect();
                cur_near = nearest(&dm, None);
                cur = v;
            }
            _ => break,
        }
    }
    let mut out = Vec::with_capacity(k * d);
    for c in centers {
        out.extend(c);
    }
    Ok(out)
}

/// D² scores `w·near` after removing weight `z` from the farthest points, so the current
/// outliers are never sampled as centers.
fn trimmed_scores(weights: &[f64], near: &[f64], z: f64) -> Vec<f64> {
    let mut kept = weights.to_vec();
    let mut idx: Vec<usize> = (0..near.len()).collect();
    idx.sort_by(|&a, &b| near[b].total_cmp(&near[a]));
    let mut remaining = z;
    for i in idx {
        if remaining <= 0.0 {
            break;
        }
        let take = kept[i].min(remaining);
        kept[i] -= take;
        remaining -= take;
    }
    kept.iter().zip(near).map(|(w, n)| w * n).collect()
}

fn sample_by(r: &mut impl Rng, scores: &[f64]) -> Option<usize> {
    let total: f64 = scores.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return None;
    }
    let mut u = r.random::<f64>() * total;
    for (i, &s) in scores.iter().enumerate() {
        if s <= 0.0 {
            continue;
        }
        if u < s {
            return Some(i);
        }
        u -= s;
    }
    scores.iter().rposition(|&s| s > 0.0)
}

fn first_unused(pts: &[WeightedPoint], centers: &[Vec<f64>]) -> usize {
    pts.iter()
        .position(|p| p.weight > 0.0 && !centers.iter().any(|c| c == &p.features))
        .unwrap_or(0)
}

/// Result of the pilot fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotFit {
    pub theta: Vec<f64>,
    /// Largest parameter movement over the last five iterations.
    pub drift: f64,
    pub sample_size: usize,
}

/// Untrimmed fit on a uniform sample of `max(⌈frac·n⌉, 20, 2·param_dim)` points (capped at `n`).
pub fn pilot_theta(model: &LossModel, data: &WeightedDataset, frac: f64, seed: u64) -> Result<PilotFit> {
    model.check_dataset(data)?;
    if !(frac > 0.0 && frac <= 1.0) {
        return Err(CoresetError::InvalidParameter(format!("pilot fraction must be in (0,1], got {frac}")));
    }
    let n = data.len();
    let m = ((frac * n as f64).ceil() as usize).max(20).max(2 * model.param_dim()).min(n);
    let mut r = rng(seed);
    let mut idx = rand::seq::index::sample(&mut r, n, m).into_vec();
    idx.sort_unstable();
    let sample: Vec<WeightedPoint> = idx.iter().map(|&i| data.points()[i].with_weight(1.0)).collect();
    let w = vec![1.0; m];
    let d = model.data_dim();
    let (theta, drift) = match model.kind() {
        LossKind::Logistic | LossKind::TruthDiscovery => {
            let start = if model.kind() == LossKind::Logistic {
                vec![0.0; d]
            } else {
                let mut mean = vec![0.0; d];
                for p in &sample {
                    for (a, b) in mean.iter_mut().zip(&p.features) {
                        *a += b / m as f64;
                    }
                }
                mean
            };
            let mut trail = Trail(Vec::new());
            trail.push(&start);
            let t = gradient_descent(model, &sample, &w, &start, PILOT_GD_MAX_ITER, Some(&mut trail));
            let drift = trail.drift(model);
            (t, drift)
        }
        LossKind::KMeans { k } | LossKind::KMedian { k } | LossKind::Bregman { k, .. } => {
            let refs: Vec<&WeightedPoint> = sample.iter().collect();
            let distinct = distinct_count(&refs, k);
            if distinct < k {
                return Err(CoresetError::DegenerateSample(format!(
                    "pilot sample has {distinct} distinct points for k = {k}"
                )));
            }
            let first = r.random_range(0..m);
            let mut centers: Vec<&[f64]> = vec![&sample[first].features];
            let mut near: Vec<f64> = sample.iter().map(|p| sq_dist(&p.features, centers[0])).collect();
            while centers.len() < k {
                let (i, _) = near
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
                let c = &sample[i].features;
                for (nv, p) in near.iter_mut().zip(&sample) {
                    *nv = nv.min(sq_dist(&p.features, c));
                }
                centers.push(c);
            }
            let theta0: Vec<f64> = centers.concat();
            let ds = WeightedDataset::new(sample.clone())?;
            let rep = trimmed_fit(model, &ds, 0.0, &theta0, 20)?;
            (rep.theta_star, rep.drift)
        }
    };
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(CoresetError::DegenerateSample("pilot fit produced a non-finite parameter".into()));
    }
    Ok(PilotFit { theta, drift, sample_size: m })
}

/// Pilot ball `𝔹(θ̃, ℓ)` with Lipschitz continuity. Without an explicit radius `ℓ` is
/// `drift_factor` times the pilot drift, floored at `10⁻³(1 + ‖θ̃‖)` so a converged pilot still
/// yields a proper ball.
pub fn pilot_ball(
    model: &LossModel,
    data: &WeightedDataset,
    pilot: &PilotFit,
    radius: Option<f64>,
    drift_factor: f64,
) -> Result<ParamBall> {
    let floor = 1e-3 * (1.0 + norm(&pilot.theta));
    let radius = radius.unwrap_or_else(|| (drift_factor * pilot.drift).max(floor));
    let provisional = ParamBall::new(pilot.theta.clone(), radius, ContinuityKind::Lipschitz { alpha: 1.0 })?;
    let alpha = model.lipschitz_constant(data, Some(&provisional))?.alpha;
    ParamBall::new(pilot.theta.clone(), radius, ContinuityKind::Lipschitz { alpha })
}

/// Trimmed fit from `theta0`, or from a default start: local-search seeding for clustering
/// models, zero for logistic regression and the weighted mean for truth discovery.
pub fn solve_auto(
    model: &LossModel,
    data: &WeightedDataset,
    z: f64,
    theta0: Option<&[f64]>,
    seed: u64,
    max_rounds: usize,
) -> Result<SolveReport> {
    let start = Instant::now();
    let init = match (theta0, model.kind()) {
        (Some(t), _) => t.to_vec(),
        (None, LossKind::Logistic) => vec![0.0; model.data_dim()],
        (None, LossKind::TruthDiscovery) => {
            let total = data.total_weight();
            let mut mean = vec![0.0; model.data_dim()];
            for p in data.points() {
                for (a, b) in mean.iter_mut().zip(&p.features) {
                    *a += p.weight * b / total;
                }
            }
            mean
        }
        (None, LossKind::KMeans { k } | LossKind::KMedian { k } | LossKind::Bregman { k, .. }) => {
            local_search_seed(data, k, z, seed)?
        }
    };
    let mut rep = trimmed_fit(model, data, z, &init, max_rounds)?;
    rep.wall_time = start.elapsed().as_secs_f64();
    Ok(rep)
}
