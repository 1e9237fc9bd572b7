#![allow(dead_code)]

use robust_coreset::data::{ParamBall, TrimSpec, WeightedDataset, WeightedPoint};
use robust_coreset::loss::LossModel;
use robust_coreset::objective::{trimmed_objective, trimmed_objective_points};
use robust_coreset::solvers::{pilot_ball, pilot_theta};
use robust_coreset::synth::{gaussian_mixture, inject_outliers, OutlierMode};

/// `n` points: Gaussian clusters (separation 10, unit spread) plus `outliers` far copies.
pub fn clusters_with_outliers(n: usize, outliers: usize, dim: usize, k: usize, seed: u64) -> WeightedDataset {
    let (clean, _) = gaussian_mixture(n - outliers, dim, k, 10.0, 1.0, seed).unwrap();
    inject_outliers(&clean, outliers, OutlierMode::Clustering { sigma: 200.0 }, seed ^ 0x5eed)
        .unwrap()
        .0
}

/// Ball of the given radius around a pilot fit on 5% of the data.
pub fn pilot_ball_with_radius(model: &LossModel, data: &WeightedDataset, radius: f64, seed: u64) -> ParamBall {
    let pilot = pilot_theta(model, data, 0.05, seed).unwrap();
    pilot_ball(model, data, &pilot, Some(radius), 2.0).unwrap()
}

/// Largest violation of `(1−ε)f_{(1+β)z}(θ,X) ≤ f_z(θ,C) ≤ (1+ε)f_{(1−β)z}(θ,X)` over the grid,
/// as a relative excess (≤ 0 means the sandwich holds everywhere).
pub fn robust_sandwich_excess(
    model: &LossModel,
    data: &WeightedDataset,
    coreset: &[WeightedPoint],
    z: f64,
    beta: f64,
    eps: f64,
    grid: &[Vec<f64>],
) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for theta in grid {
        let lo = (1.0 - eps) * trimmed_objective(model, theta, data, TrimSpec { z: (1.0 + beta) * z }).unwrap();
        let hi = (1.0 + eps) * trimmed_objective(model, theta, data, TrimSpec { z: (1.0 - beta) * z }).unwrap();
        let mid = trimmed_objective_points(model, theta, coreset, z).unwrap();
        worst = worst.max((lo - mid) / lo).max((mid - hi) / hi);
    }
    worst
}
