//! Weighted and trimmed objective evaluation.
//!
//! Trimming removes exactly `z` weight from the highest-cost end, ordering points by
//! `(cost desc, id asc)` and splitting the boundary point's weight fractionally.

use std::cmp::Ordering;

use crate::data::{ContinuityKind, ParamBall, TrimSpec, WeightedDataset, WeightedPoint};
use crate::error::{CoresetError, Result};
use crate::loss::LossModel;

/// Deterministic pairwise (tree) summation in slice order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// `f(θ, X) = Σ w(x) f(θ, x)`.
pub fn objective(model: &LossModel, theta: &[f64], data: &WeightedDataset) -> Result<f64> {
    model.check_theta(theta)?;
    model.check_dataset(data)?;
    Ok(objective_points(model, theta, data.points()))
}

/// Unchecked weighted objective over a point slice.
pub fn objective_points(model: &LossModel, theta: &[f64], points: &[WeightedPoint]) -> f64 {
    let terms: Vec<f64> = points
        .iter()
        .map(|p| weighted_term(p.weight, model.cost(theta, p)))
        .collect();
    pairwise_sum(&terms)
}

#[inline]
fn weighted_term(w: f64, c: f64) -> f64 {
    if w == 0.0 {
        0.0
    } else {
        w * c
    }
}

/// `f_z(θ, X)`: the objective after trimming the `z` heaviest-cost weight.
pub fn trimmed_objective(
    model: &LossModel,
    theta: &[f64],
    data: &WeightedDataset,
    trim: TrimSpec,
) -> Result<f64> {
    model.check_theta(theta)?;
    model.check_dataset(data)?;
    trimmed_objective_points(model, theta, data.points(), trim.z)
}

/// Unchecked trimmed objective over a point slice.
pub fn trimmed_objective_points(
    model: &LossModel,
    theta: &[f64],
    points: &[WeightedPoint],
    z: f64,
) -> Result<f64> {
    let costs: Vec<f64> = points.iter().map(|p| model.cost(theta, p)).collect();
    trimmed_sum(points, &costs, z)
}

/// Trimmed weighted sum for precomputed per-point costs.
pub fn trimmed_sum(points: &[WeightedPoint], costs: &[f64], z: f64) -> Result<f64> {
    let kept = trim_weights(points, costs, z)?;
    let terms: Vec<f64> = kept
        .iter()
        .zip(costs)
        .map(|(&w, &c)| weighted_term(w, c))
        .collect();
    Ok(pairwise_sum(&terms))
}

/// Order used by trimming: higher cost first, ties by ascending id, then by position.
pub fn trim_order(points: &[WeightedPoint], costs: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        costs[b]
            .partial_cmp(&costs[a])
            .unwrap_or(Ordering::Equal)
            .then(points[a].id.cmp(&points[b].id))
            .then(a.cmp(&b))
    });
    order
}

/// Remaining (inlier) weight of every point after peeling `z` weight from the top of the trim
/// order.
pub fn trim_weights(points: &[WeightedPoint], costs: &[f64], z: f64) -> Result<Vec<f64>> {
    let total = pairwise_sum(&points.iter().map(|p| p.weight).collect::<Vec<_>>());
    if !(z >= 0.0) || z >= total {
        return Err(CoresetError::TrimTooLarge { z, total });
    }
    let mut kept: Vec<f64> = points.iter().map(|p| p.weight).collect();
    if z == 0.0 {
        return Ok(kept);
    }
    let mut remaining = z;
    for i in trim_order(points, costs) {
        if remaining <= 0.0 {
            break;
        }
        let take = kept[i].min(remaining);
        kept[i] -= take;
        remaining -= take;
    }
    Ok(kept)
}

/// The minimizing outlier set of the trimmed objective, as `(index, weight)` pairs into the
/// dataset's point order.
#[derive(Debug, Clone, PartialEq)]
pub struct TrimPartition {
    pub inliers: Vec<(usize, f64)>,
    pub outliers: Vec<(usize, f64)>,
}

impl TrimPartition {
    pub fn outlier_ids(&self, data: &WeightedDataset) -> Vec<u64> {
        self.outliers.iter().map(|&(i, _)| data.points()[i].id).collect()
    }
}

pub fn trimmed_argmask(
    model: &LossModel,
    theta: &[f64],
    data: &WeightedDataset,
    trim: TrimSpec,
) -> Result<TrimPartition> {
    model.check_theta(theta)?;
    model.check_dataset(data)?;
    let costs: Vec<f64> = data.points().iter().map(|p| model.cost(theta, p)).collect();
    partition_from_costs(data.points(), &costs, trim.z)
}

pub fn partition_from_costs(
    points: &[WeightedPoint],
    costs: &[f64],
    z: f64,
) -> Result<TrimPartition> {
    let kept = trim_weights(points, costs, z)?;
    let mut inliers = Vec::new();
    let mut outliers = Vec::new();
    for (i, (p, &k)) in points.iter().zip(&kept).enumerate() {
        if k > 0.0 {
            inliers.push((i, k));
        }
        let trimmed = p.weight - k;
        if trimmed > 0.0 {
            outliers.push((i, trimmed));
        }
    }
    Ok(TrimPartition { inliers, outliers })
}

/// Uniform bound on `|f(θ,x) − f(θ̃,x)|` over the ball for the declared continuity.
pub fn xi(ball: &ParamBall) -> f64 {
    let l = ball.radius;
    match ball.continuity {
        ContinuityKind::Lipschitz { alpha } => alpha * l,
        ContinuityKind::Smooth { alpha, h } => h * l + alpha * l * l / 2.0,
        ContinuityKind::LipschitzHessian { alpha, h, h2 } => {
            h * l + h2 * l * l / 2.0 + alpha * l * l * l / 6.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// A 1-D k-means model with a single center at 0 makes `cost = x²`, so costs can be dialed in
    /// through features.
    fn with_costs(costs: &[f64], weights: &[f64]) -> (LossModel, WeightedDataset) {
        let pts = costs
            .iter()
            .zip(weights)
            .enumerate()
            .map(|(i, (&c, &w))| WeightedPoint::new(i as u64, vec![c.sqrt()], w))
            .collect();
        (LossModel::kmeans(1, 1), WeightedDataset::new(pts).unwrap())
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * b.abs().max(1.0)
    }

    #[test]
    fn objective_examples() {
        let (m, d) = with_costs(&[1.0, 2.0, 3.0], &[1.0, 1.0, 1.0]);
        assert!(close(objective(&m, &[0.0], &d).unwrap(), 6.0));
        let (m, d) = with_costs(&[1.0, 5.0, 3.0], &[2.0, 0.0, 1.0]);
        assert!(close(objective(&m, &[0.0], &d).unwrap(), 5.0));
    }

    #[test]
    fn logistic_at_origin_is_n_ln2() {
        let pts = (0..7)
            .map(|i| WeightedPoint::labeled(i, vec![i as f64, -1.0], if i % 2 == 0 { 1 } else { -1 }, 1.0))
            .collect();
        let d = WeightedDataset::new(pts).unwrap();
        let v = objective(&LossModel::logistic(2), &[0.0, 0.0], &d).unwrap();
        assert!(close(v, 7.0 * 2f64.ln()));
    }

    #[test]
    fn objective_dimension_mismatch() {
        let (m, d) = with_costs(&[1.0], &[1.0]);
        assert!(matches!(
            objective(&m, &[0.0, 1.0], &d),
            Err(CoresetError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn trimmed_examples() {
        let (m, d) = with_costs(&[1.0, 2.0, 3.0, 10.0], &[1.0; 4]);
        let t = |z| trimmed_objective(&m, &[0.0], &d, TrimSpec::new(z).unwrap()).unwrap();
        assert!(close(t(1.0), 6.0));
        assert!(close(t(0.0), 16.0));
        assert!(trimmed_objective(&m, &[0.0], &d, TrimSpec::new(4.0).unwrap()).is_err());

        // Fractional trim: sort descending {5,4,1} with weights {1,1,2}; peel 1.5.
        let (m, d) = with_costs(&[5.0, 4.0, 1.0], &[1.0, 1.0, 2.0]);
        let v = trimmed_objective(&m, &[0.0], &d, TrimSpec::new(1.5).unwrap()).unwrap();
        assert!(close(v, 0.5 * 4.0 + 2.0 * 1.0));
    }

    #[test]
    fn argmask_examples() {
        let (m, d) = with_costs(&[1.0, 2.0, 3.0, 10.0], &[1.0; 4]);
        let part = trimmed_argmask(&m, &[0.0], &d, TrimSpec::new(1.0).unwrap()).unwrap();
        assert_eq!(part.outlier_ids(&d), vec![3]);

        let (m, d) = with_costs(&[5.0, 5.0], &[1.0, 1.0]);
        let part = trimmed_argmask(&m, &[0.0], &d, TrimSpec::new(1.0).unwrap()).unwrap();
        assert_eq!(part.outlier_ids(&d), vec![0]);

        let (m, d) = with_costs(&[5.0, 4.0, 1.0], &[1.0, 1.0, 2.0]);
        let part = trimmed_argmask(&m, &[0.0], &d, TrimSpec::new(1.5).unwrap()).unwrap();
        assert_eq!(part.outliers, vec![(0, 1.0), (1, 0.5)]);
        assert_eq!(part.inliers, vec![(1, 0.5), (2, 2.0)]);
    }

    #[test]
    fn xi_examples() {
        let b = |c| ParamBall::new(vec![0.0], 0.5, c).unwrap();
        assert_eq!(xi(&b(ContinuityKind::Lipschitz { alpha: 2.0 })), 1.0);
        let s = ParamBall::new(vec![0.0], 2.0, ContinuityKind::Smooth { alpha: 1.0, h: 3.0 }).unwrap();
        assert_eq!(xi(&s), 8.0);
        let tiny = ParamBall::new(vec![0.0], 1e-300, ContinuityKind::Lipschitz { alpha: 1.0 }).unwrap();
        assert!(xi(&tiny) < 1e-299);
        let h = ParamBall::new(
            vec![0.0],
            2.0,
            ContinuityKind::LipschitzHessian { alpha: 3.0, h: 1.0, h2: 0.5 },
        )
        .unwrap();
        assert!(close(xi(&h), 2.0 + 0.5 * 4.0 / 2.0 + 3.0 * 8.0 / 6.0));
    }

    #[test]
    fn pairwise_sum_matches_naive_on_small() {
        let v: Vec<f64> = (0..100).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&v), 4950.0);
        assert_eq!(pairwise_sum(&[]), 0.0);
    }
}
