//! Per-point loss functions of the supported continuous-and-bounded objectives, with their
//! gradients and Lipschitz certificates.
//!
//! Clustering parameters are the concatenation of `k` centers; the parameter metric for them is
//! the index-wise maximum `max_i ‖c_i − c'_i‖`, so a ball around a center list is a product of `k`
//! Euclidean balls.

use serde::{Deserialize, Serialize};

use crate::data::{ParamBall, WeightedDataset, WeightedPoint};
use crate::error::{CoresetError, Result};

/// Interior-domain guard for the negative-entropy potential.
pub const ENTROPY_DOMAIN_GUARD: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BregmanPhi {
    /// φ(u) = ‖u‖², giving d_φ(x, c) = ‖x − c‖².
    SquaredEuclidean,
    /// φ(u) = Σ u_j ln u_j on the positive orthant (generalized KL divergence).
    NegativeEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LossKind {
    Logistic,
    KMedian { k: usize },
    KMeans { k: usize },
    Bregman {
        k: usize,
        phi: BregmanPhi,
        gradient_bound: Option<f64>,
    },
    TruthDiscovery,
}

/// JSON model descriptor: `{"kind": "...", "k": ..., "phi": "...", "bregman_L": ...}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDescriptor {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<BregmanPhi>,
    #[serde(default, rename = "bregman_L", skip_serializing_if = "Option::is_none")]
    pub bregman_l: Option<f64>,
}

/// A loss instantiation bound to a data dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossModel {
    kind: LossKind,
    data_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzCertificate {
    pub alpha: f64,
    pub basis: String,
}

impl LossModel {
    pub fn new(kind: LossKind, data_dim: usize) -> Result<Self> {
        if data_dim == 0 {
            return Err(CoresetError::InvalidParameter("data dimension must be >= 1".into()));
        }
        match kind {
            LossKind::KMedian { k } | LossKind::KMeans { k } | LossKind::Bregman { k, .. }
                if k == 0 =>
            {
                return Err(CoresetError::InvalidParameter("k must be >= 1".into()))
            }
            LossKind::Bregman {
                gradient_bound: Some(l),
                ..
            } if !(l > 0.0) => {
                return Err(CoresetError::InvalidParameter(
                    "bregman_L must be positive".into(),
                ))
            }
            _ => {}
        }
        Ok(LossModel { kind, data_dim })
    }

    pub fn logistic(data_dim: usize) -> Self {
        LossModel {
            kind: LossKind::Logistic,
            data_dim,
        }
    }

    pub fn kmedian(k: usize, data_dim: usize) -> Self {
        LossModel {
            kind: LossKind::KMedian { k: k.max(1) },
            data_dim,
        }
    }

    pub fn kmeans(k: usize, data_dim: usize) -> Self {
        LossModel {
            kind: LossKind::KMeans { k: k.max(1) },
            data_dim,
        }
    }

    pub fn truth_discovery(data_dim: usize) -> Self {
        LossModel {
            kind: LossKind::TruthDiscovery,
            data_dim,
        }
    }

    pub fn from_descriptor(desc: &ModelDescriptor, data_dim: usize) -> Result<Self> {
        let k = desc.k.unwrap_or(1);
        let kind = match desc.kind.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "logistic" => LossKind::Logistic,
            "kmedian" => LossKind::KMedian { k },
            "kmeans" => LossKind::KMeans { k },
            "truthdiscovery" | "truth" => LossKind::TruthDiscovery,
            "bregman" => LossKind::Bregman {
                k,
                phi: desc.phi.unwrap_or(BregmanPhi::SquaredEuclidean),
                gradient_bound: desc.bregman_l,
            },
            other => {
                return Err(CoresetError::InvalidParameter(format!(
                    "unknown model kind '{other}'"
                )))
            }
        };
        LossModel::new(kind, data_dim)
    }

    pub fn descriptor(&self) -> ModelDescriptor {
        let (kind, k, phi, l) = match self.kind {
            LossKind::Logistic => ("logistic", None, None, None),
            LossKind::KMedian { k } => ("kmedian", Some(k), None, None),
            LossKind::KMeans { k } => ("kmeans", Some(k), None, None),
            LossKind::TruthDiscovery => ("truth_discovery", None, None, None),
            LossKind::Bregman {
                k,
                phi,
                gradient_bound,
            } => ("bregman", Some(k), Some(phi), gradient_bound),
        };
        ModelDescriptor {
            kind: kind.into(),
            k,
            phi,
            bregman_l: l,
        }
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }

    pub fn data_dim(&self) -> usize {
        self.data_dim
    }

    /// Number of centers for clustering models, `None` otherwise.
    pub fn clusters(&self) -> Option<usize> {
        match self.kind {
            LossKind::KMedian { k } | LossKind::KMeans { k } | LossKind::Bregman { k, .. } => {
                Some(k)
            }
            _ => None,
        }
    }

    pub fn is_supervised(&self) -> bool {
        matches!(self.kind, LossKind::Logistic)
    }

    pub fn param_dim(&self) -> usize {
        self.clusters().unwrap_or(1) * self.data_dim
    }

    /// Range-space dimension used to size δ-samples. This is configuration, not a computed
    /// VC dimension.
    pub fn vcdim_hint(&self) -> usize {
        match self.kind {
            LossKind::Logistic => self.data_dim,
            LossKind::TruthDiscovery => self.data_dim + 1,
            _ => self.clusters().unwrap_or(1) * (self.data_dim + 1),
        }
    }

    pub fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.param_dim() {
            return Err(CoresetError::DimensionMismatch {
                expected: self.param_dim(),
                found: theta.len(),
            });
        }
        Ok(())
    }

    pub fn check_point(&self, x: &WeightedPoint) -> Result<()> {
        if x.features.len() != self.data_dim {
            return Err(CoresetError::DimensionMismatch {
                expected: self.data_dim,
                found: x.features.len(),
            });
        }
        if self.is_supervised() && x.label.is_none() {
            return Err(CoresetError::MissingLabel { id: x.id });
        }
        Ok(())
    }

    pub fn check_dataset(&self, data: &WeightedDataset) -> Result<()> {
        if data.dim() != self.data_dim {
            return Err(CoresetError::DimensionMismatch {
                expected: self.data_dim,
                found: data.dim(),
            });
        }
        if self.is_supervised() {
            if let Some(p) = data.points().iter().find(|p| p.label.is_none()) {
                return Err(CoresetError::MissingLabel { id: p.id });
            }
        }
        Ok(())
    }

    /// Per-point loss `f(θ, x)` with dimension and label checks.
    pub fn point_cost(&self, theta: &[f64], x: &WeightedPoint) -> Result<f64> {
        self.check_theta(theta)?;
        self.check_point(x)?;
        Ok(self.cost(theta, x))
    }

    /// Per-point loss without validation; callers check dimensions once per dataset.
    pub fn cost(&self, theta: &[f64], x: &WeightedPoint) -> f64 {
        let xf = &x.features;
        match self.kind {
            LossKind::Logistic => {
                let y = f64::from(x.label.unwrap_or(1));
                softplus(-y * dot(theta, xf))
            }
            LossKind::KMedian { .. } => self.nearest_center(theta, xf).1.sqrt(),
            LossKind::KMeans { .. } => self.nearest_center(theta, xf).1,
            LossKind::Bregman { .. } => self.nearest_center(theta, xf).1.max(0.0),
            LossKind::TruthDiscovery => truth_cost(sq_dist(theta, xf).sqrt()),
        }
    }

    /// `∇_θ f(θ, x)`. Clustering models return the (sub)gradient with respect to the assigned
    /// center and zeros elsewhere.
    pub fn point_gradient(&self, theta: &[f64], x: &WeightedPoint) -> Vec<f64> {
        let d = self.data_dim;
        let xf = &x.features;
        match self.kind {
            LossKind::Logistic => {
                let y = f64::from(x.label.unwrap_or(1));
                // d/dθ ln(1 + e^{-y<θ,x>}) = -y x σ(-y<θ,x>)
                let s = sigmoid(-y * dot(theta, xf));
                xf.iter().map(|v| -y * v * s).collect()
            }
            LossKind::TruthDiscovery => {
                let t2 = sq_dist(theta, xf);
                let scale = if t2 < 1.0 { 2.0 } else { 2.0 / t2 };
                theta.iter().zip(xf).map(|(a, b)| scale * (a - b)).collect()
            }
            LossKind::KMedian { .. } | LossKind::KMeans { .. } | LossKind::Bregman { .. } => {
                let (j, _) = self.nearest_center(theta, xf);
                let c = &theta[j * d..(j + 1) * d];
                let mut g = vec![0.0; theta.len()];
                let slot = &mut g[j * d..(j + 1) * d];
                match self.kind {
                    LossKind::KMedian { .. } => {
                        let dist = sq_dist(c, xf).sqrt();
                        if dist > 0.0 {
                            for ((s, a), b) in slot.iter_mut().zip(c).zip(xf) {
                                *s = (a - b) / dist;
                            }
                        }
                    }
                    LossKind::KMeans { .. }
                    | LossKind::Bregman {
                        phi: BregmanPhi::SquaredEuclidean,
                        ..
                    } => {
                        for ((s, a), b) in slot.iter_mut().zip(c).zip(xf) {
                            *s = 2.0 * (a - b);
                        }
                    }
                    LossKind::Bregman {
                        phi: BregmanPhi::NegativeEntropy,
                        ..
                    } => {
                        // ∂/∂c [x ln(x/c) − x + c] = 1 − x/c
                        for ((s, a), b) in slot.iter_mut().zip(c).zip(xf) {
                            let cc = a.max(ENTROPY_DOMAIN_GUARD);
                            let xx = b.max(ENTROPY_DOMAIN_GUARD);
                            *s = 1.0 - xx / cc;
                        }
                    }
                    _ => unreachable!(),
                }
                g
            }
        }
    }

    /// Index of the nearest center and its divergence (squared distance for Euclidean models).
    pub fn nearest_center(&self, theta: &[f64], x: &[f64]) -> (usize, f64) {
        let d = self.data_dim;
        let k = self.clusters().unwrap_or(1);
        let mut best = (0, f64::INFINITY);
        for j in 0..k {
            let c = &theta[j * d..(j + 1) * d];
            let v = match self.kind {
                LossKind::Bregman {
                    phi: BregmanPhi::NegativeEntropy,
                    ..
                } => generalized_kl(x, c),
                _ => sq_dist(c, x),
            };
            if v < best.1 {
                best = (j, v);
            }
        }
        best
    }

    /// Distance in parameter space: Euclidean, or index-wise max over centers for clustering.
    pub fn param_distance(&self, a: &[f64], b: &[f64]) -> f64 {
        match self.clusters() {
            Some(k) => {
                let d = self.data_dim;
                (0..k)
                    .map(|j| sq_dist(&a[j * d..(j + 1) * d], &b[j * d..(j + 1) * d]).sqrt())
                    .fold(0.0, f64::max)
            }
            None => sq_dist(a, b).sqrt(),
        }
    }

    /// Lipschitz constant of `f(·, x)` over the ball, uniformly in `x ∈ X`.
    ///
    /// k-means is only Lipschitz on a bounded region, so it needs the ball.
    pub fn lipschitz_constant(
        &self,
        data: &WeightedDataset,
        ball: Option<&ParamBall>,
    ) -> Result<LipschitzCertificate> {
        if data.is_empty() {
            return Err(CoresetError::EmptyDataset);
        }
        let cert = match self.kind {
            LossKind::Logistic => LipschitzCertificate {
                alpha: data.max_norm(),
                basis: "logistic: max ||x|| over the data".into(),
            },
            LossKind::TruthDiscovery => LipschitzCertificate {
                alpha: 2.0,
                basis: "truth discovery: |f_truth'(t)| <= 2".into(),
            },
            LossKind::KMedian { .. } => LipschitzCertificate {
                alpha: 1.0,
                basis: "k-median: 1-Lipschitz under the index-wise max center metric".into(),
            },
            LossKind::KMeans { k } => {
                let ball = ball.ok_or_else(|| {
                    CoresetError::InvalidParameter(
                        "k-means Lipschitz constant needs the parameter ball".into(),
                    )
                })?;
                self.check_theta(&ball.center)?;
                let d = self.data_dim;
                let max_center = (0..k)
                    .map(|j| norm(&ball.center[j * d..(j + 1) * d]))
                    .fold(0.0, f64::max);
                LipschitzCertificate {
                    alpha: 2.0 * (data.max_norm() + max_center + ball.radius),
                    basis: "k-means: 2(max||x|| + max||c_i|| + radius) within the ball".into(),
                }
            }
            LossKind::Bregman { gradient_bound, .. } => {
                let l = gradient_bound.ok_or(CoresetError::MissingBregmanBound)?;
                LipschitzCertificate {
                    alpha: 2.0 * l,
                    basis: "Bregman: 2L with ||grad phi|| <= L".into(),
                }
            }
        };
        if !(cert.alpha > 0.0) {
            return Err(CoresetError::InvalidParameter(format!(
                "degenerate Lipschitz constant {} ({})",
                cert.alpha, cert.basis
            )));
        }
        Ok(cert)
    }

    /// Gradient-Lipschitz (smoothness) constant where the model has one.
    pub fn smoothness_constant(&self, data: &WeightedDataset) -> Option<f64> {
        match self.kind {
            LossKind::Logistic => {
                let delta = data.max_norm();
                Some(delta * delta / 4.0)
            }
            LossKind::TruthDiscovery => Some(2.0),
            LossKind::KMeans { k: 1 }
            | LossKind::Bregman {
                k: 1,
                phi: BregmanPhi::SquaredEuclidean,
                ..
            } => Some(2.0),
            _ => None,
        }
    }

    /// `max_x ‖∇f(θ, x)‖`, the `h` of the smooth continuity bound.
    pub fn max_gradient_norm(&self, theta: &[f64], data: &WeightedDataset) -> f64 {
        data.points()
            .iter()
            .map(|p| norm(&self.point_gradient(theta, p)))
            .fold(0.0, f64::max)
    }
}

/// Bound on `‖∇φ‖` over the bounding box of the data and the ball, for Bregman models whose
/// potential has no global gradient bound.
pub fn bregman_gradient_bound(phi: BregmanPhi, data: &WeightedDataset, ball: &ParamBall) -> f64 {
    let d = data.dim();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    let mut widen = |v: &[f64], pad: f64| {
        for j in 0..d {
            lo[j] = lo[j].min(v[j] - pad);
            hi[j] = hi[j].max(v[j] + pad);
        }
    };
    for p in data.points() {
        widen(&p.features, 0.0);
    }
    for c in ball.center.chunks(d) {
        widen(c, ball.radius);
    }
    let per_coord = lo.iter().zip(&hi).map(|(&a, &b)| match phi {
        BregmanPhi::SquaredEuclidean => 2.0 * a.abs().max(b.abs()),
        BregmanPhi::NegativeEntropy => {
            let a = a.max(ENTROPY_DOMAIN_GUARD);
            let b = b.max(ENTROPY_DOMAIN_GUARD);
            (1.0 + a.ln()).abs().max((1.0 + b.ln()).abs())
        }
    });
    per_coord.map(|v| v * v).sum::<f64>().sqrt()
}

fn truth_cost(t: f64) -> f64 {
    if t < 1.0 {
        t * t
    } else {
        1.0 + 2.0 * t.ln()
    }
}

fn generalized_kl(x: &[f64], c: &[f64]) -> f64 {
    x.iter()
        .zip(c)
        .map(|(&a, &b)| {
            let a = a.max(ENTROPY_DOMAIN_GUARD);
            let b = b.max(ENTROPY_DOMAIN_GUARD);
            a * (a / b).ln() - a + b
        })
        .sum()
}

/// `ln(1 + e^v)` without overflow.
pub fn softplus(v: f64) -> f64 {
    if v > 0.0 {
        v + (-v).exp().ln_1p()
    } else {
        v.exp().ln_1p()
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ContinuityKind;

    fn pt(f: Vec<f64>) -> WeightedPoint {
        WeightedPoint::new(0, f, 1.0)
    }

    #[test]
    fn logistic_at_zero_margin_is_ln2() {
        let m = LossModel::logistic(2);
        let x = WeightedPoint::labeled(0, vec![3.0, -1.0], 1, 1.0);
        let c = m.point_cost(&[1.0, 3.0], &x).unwrap();
        assert!((c - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn logistic_requires_label() {
        let m = LossModel::logistic(1);
        assert!(matches!(
            m.point_cost(&[0.0], &pt(vec![1.0])),
            Err(CoresetError::MissingLabel { .. })
        ));
    }

    #[test]
    fn kmedian_nearest_center() {
        let m = LossModel::kmedian(2, 2);
        let c = m.point_cost(&[0.0, 0.0, 4.0, 0.0], &pt(vec![1.0, 0.0])).unwrap();
        assert_eq!(c, 1.0);
    }

    #[test]
    fn truth_discovery_branches() {
        let m = LossModel::truth_discovery(1);
        let e = std::f64::consts::E;
        assert!((m.point_cost(&[e], &pt(vec![0.0])).unwrap() - 3.0).abs() < 1e-12);
        // continuity at t = 1
        assert!((m.point_cost(&[1.0], &pt(vec![0.0])).unwrap() - 1.0).abs() < 1e-15);
        assert!((m.point_cost(&[1.0 - 1e-12], &pt(vec![0.0])).unwrap() - 1.0).abs() < 1e-11);
    }

    #[test]
    fn gradient_examples() {
        let x = WeightedPoint::labeled(0, vec![2.0, -4.0], 1, 1.0);
        let g = LossModel::logistic(2).point_gradient(&[0.0, 0.0], &x);
        assert_eq!(g, vec![-1.0, 2.0]);

        let g = LossModel::truth_discovery(2).point_gradient(&[0.5, 0.0], &pt(vec![0.0, 0.0]));
        assert_eq!(g, vec![1.0, 0.0]);

        let g = LossModel::kmeans(1, 2).point_gradient(&[1.0, 1.0], &pt(vec![0.0, 3.0]));
        assert_eq!(g, vec![2.0, -4.0]);
    }

    #[test]
    fn certificates() {
        let data = WeightedDataset::new(vec![
            WeightedPoint::labeled(0, vec![3.0, 0.0], 1, 1.0),
            WeightedPoint::labeled(1, vec![1.0, 1.0], -1, 1.0),
        ])
        .unwrap();
        assert_eq!(LossModel::logistic(2).lipschitz_constant(&data, None).unwrap().alpha, 3.0);
        assert_eq!(LossModel::truth_discovery(2).lipschitz_constant(&data, None).unwrap().alpha, 2.0);
        assert_eq!(LossModel::kmedian(3, 2).lipschitz_constant(&data, None).unwrap().alpha, 1.0);
        assert!(LossModel::kmeans(1, 2).lipschitz_constant(&data, None).is_err());
        let ball = ParamBall::new(vec![0.0, 4.0], 0.5, ContinuityKind::Lipschitz { alpha: 1.0 }).unwrap();
        let a = LossModel::kmeans(1, 2).lipschitz_constant(&data, Some(&ball)).unwrap().alpha;
        assert_eq!(a, 2.0 * (3.0 + 4.0 + 0.5));
    }

    #[test]
    fn bregman_needs_bound() {
        let data = WeightedDataset::from_rows(vec![vec![1.0]]).unwrap();
        let desc = ModelDescriptor {
            kind: "bregman".into(),
            k: Some(1),
            phi: Some(BregmanPhi::NegativeEntropy),
            bregman_l: None,
        };
        let m = LossModel::from_descriptor(&desc, 1).unwrap();
        assert!(matches!(
            m.lipschitz_constant(&data, None),
            Err(CoresetError::MissingBregmanBound)
        ));
        let desc = ModelDescriptor { bregman_l: Some(1.5), ..desc };
        let m = LossModel::from_descriptor(&desc, 1).unwrap();
        assert_eq!(m.lipschitz_constant(&data, None).unwrap().alpha, 3.0);
    }

    #[test]
    fn squared_bregman_matches_kmeans() {
        let desc: ModelDescriptor =
            serde_json::from_str(r#"{"kind":"bregman","k":2,"phi":"squared_euclidean","bregman_L":2.0}"#)
                .unwrap();
        let b = LossModel::from_descriptor(&desc, 2).unwrap();
        let km = LossModel::kmeans(2, 2);
        let theta = [0.0, 0.0, 3.0, 1.0];
        let x = pt(vec![2.0, 2.0]);
        assert_eq!(b.cost(&theta, &x), km.cost(&theta, &x));
    }

    #[test]
    fn entropy_bregman_is_kl() {
        let desc = ModelDescriptor {
            kind: "bregman".into(),
            k: Some(1),
            phi: Some(BregmanPhi::NegativeEntropy),
            bregman_l: Some(1.0),
        };
        let m = LossModel::from_descriptor(&desc, 2).unwrap();
        let x = pt(vec![0.5, 0.5]);
        assert!(m.cost(&[0.5, 0.5], &x).abs() < 1e-15);
        let expected = 0.5 * (0.5f64 / 0.25).ln() - 0.5 + 0.25 + 0.5 * (0.5f64 / 0.75).ln() - 0.5 + 0.75;
        assert!((m.cost(&[0.25, 0.75], &x) - expected).abs() < 1e-14);
    }

    #[test]
    fn descriptor_round_trip() {
        for m in [
            LossModel::logistic(3),
            LossModel::kmeans(4, 3),
            LossModel::kmedian(2, 3),
            LossModel::truth_discovery(3),
        ] {
            let json = serde_json::to_string(&m.descriptor()).unwrap();
            let back: ModelDescriptor = serde_json::from_str(&json).unwrap();
            assert_eq!(LossModel::from_descriptor(&back, 3).unwrap(), m);
        }
        let bad = ModelDescriptor { kind: "svm".into(), k: None, phi: None, bregman_l: None };
        assert!(LossModel::from_descriptor(&bad, 2).is_err());
    }

    #[test]
    fn kmedian_cost_invariant_under_center_permutation() {
        let m = LossModel::kmedian(3, 2);
        let a = [0.0, 0.0, 5.0, 1.0, -2.0, 3.0];
        let b = [5.0, 1.0, -2.0, 3.0, 0.0, 0.0];
        for x in [vec![1.0, 1.0], vec![4.0, 0.0], vec![-3.0, 3.5]] {
            assert_eq!(m.cost(&a, &pt(x.clone())), m.cost(&b, &pt(x)));
        }
        assert!(m.param_distance(&a, &b) > 0.0);
    }
}
