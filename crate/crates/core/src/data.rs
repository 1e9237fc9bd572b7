//! Weighted datasets and the bounded parameter region the coreset guarantees are stated over.

use serde::{Deserialize, Serialize};

use crate::error::{CoresetError, Result};

/// A single data item with its weight. Labels are `+1`/`-1` for supervised models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedPoint {
    pub id: u64,
    pub features: Vec<f64>,
    #[serde(default)]
    pub label: Option<i8>,
    #[serde(default = "unit_weight")]
    pub weight: f64,
}

fn unit_weight() -> f64 {
    1.0
}

impl WeightedPoint {
    pub fn new(id: u64, features: Vec<f64>, weight: f64) -> Self {
        WeightedPoint {
            id,
            features,
            label: None,
            weight,
        }
    }

    pub fn labeled(id: u64, features: Vec<f64>, label: i8, weight: f64) -> Self {
        WeightedPoint {
            id,
            features,
            label: Some(label),
            weight,
        }
    }

    pub fn with_weight(&self, weight: f64) -> Self {
        WeightedPoint {
            weight,
            ..self.clone()
        }
    }

    pub fn norm(&self) -> f64 {
        self.features.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// A nonempty collection of points sharing one feature dimension, kept sorted by id.
///
/// Ids are not required to be unique here: importance-sampled coresets keep repeated draws of the
/// same source point as separate entries. Uniqueness is enforced where it matters (ingestion and
/// the dynamic structure).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedDataset {
    points: Vec<WeightedPoint>,
    dim: usize,
}

impl WeightedDataset {
    pub fn new(mut points: Vec<WeightedPoint>) -> Result<Self> {
        let dim = points
            .first()
            .map(|p| p.features.len())
            .ok_or(CoresetError::EmptyDataset)?;
        let mut total = 0.0;
        for p in &points {
            if p.features.len() != dim {
                return Err(CoresetError::DimensionMismatch {
                    expected: dim,
                    found: p.features.len(),
                });
            }
            if !(p.weight >= 0.0) || !p.weight.is_finite() {
                return Err(CoresetError::InvalidWeight {
                    id: p.id,
                    weight: p.weight,
                });
            }
            if p.features.iter().any(|v| !v.is_finite()) {
                return Err(CoresetError::Malformed(format!(
                    "non-finite feature in point {}",
                    p.id
                )));
            }
            total += p.weight;
        }
        if total <= 0.0 {
            return Err(CoresetError::EmptyDataset);
        }
        points.sort_by_key(|p| p.id);
        Ok(WeightedDataset { points, dim })
    }

    /// Builds a unit-weight dataset from raw feature rows, with ids `0..n`.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(
            rows.into_iter()
                .enumerate()
                .map(|(i, f)| WeightedPoint::new(i as u64, f, 1.0))
                .collect(),
        )
    }

    pub fn points(&self) -> &[WeightedPoint] {
        &self.points
    }

    pub fn into_points(self) -> Vec<WeightedPoint> {
        self.points
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// ⟦X⟧, the total weight.
    pub fn total_weight(&self) -> f64 {
        crate::objective::pairwise_sum(&self.points.iter().map(|p| p.weight).collect::<Vec<_>>())
    }

    /// True when every point carries the same weight.
    pub fn has_uniform_weights(&self) -> bool {
        let w0 = self.points[0].weight;
        self.points.iter().all(|p| p.weight == w0)
    }

    pub fn max_norm(&self) -> f64 {
        self.points.iter().map(|p| p.norm()).fold(0.0, f64::max)
    }

    pub fn is_labeled(&self) -> bool {
        self.points.iter().all(|p| p.label.is_some())
    }
}

/// How the per-point loss varies over the parameter ball.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ContinuityKind {
    /// `|f(θ,x) − f(θ',x)| ≤ α‖θ − θ'‖`.
    Lipschitz { alpha: f64 },
    /// α-Lipschitz gradient; `h` bounds the gradient norm at the ball center.
    Smooth { alpha: f64, h: f64 },
    /// α-Lipschitz Hessian; `h` bounds the gradient and `h2` the Hessian operator norm at the center.
    LipschitzHessian { alpha: f64, h: f64, h2: f64 },
}

impl ContinuityKind {
    pub fn alpha(&self) -> f64 {
        match *self {
            ContinuityKind::Lipschitz { alpha }
            | ContinuityKind::Smooth { alpha, .. }
            | ContinuityKind::LipschitzHessian { alpha, .. } => alpha,
        }
    }

    fn validate(&self) -> Result<()> {
        let (alpha, rest) = match *self {
            ContinuityKind::Lipschitz { alpha } => (alpha, [0.0, 0.0]),
            ContinuityKind::Smooth { alpha, h } => (alpha, [h, 0.0]),
            ContinuityKind::LipschitzHessian { alpha, h, h2 } => (alpha, [h, h2]),
        };
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(CoresetError::InvalidParameter(format!(
                "continuity constant must be positive, got {alpha}"
            )));
        }
        if rest.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(CoresetError::InvalidParameter(
                "gradient/Hessian bounds must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// The ball 𝔹(θ̃, ℓ) that parameters are restricted to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBall {
    pub center: Vec<f64>,
    pub radius: f64,
    pub continuity: ContinuityKind,
}

impl ParamBall {
    pub fn new(center: Vec<f64>, radius: f64, continuity: ContinuityKind) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(CoresetError::InvalidParameter(format!(
                "ball radius must be positive, got {radius}"
            )));
        }
        continuity.validate()?;
        Ok(ParamBall {
            center,
            radius,
            continuity,
        })
    }

    pub fn with_radius(&self, radius: f64) -> Result<Self> {
        ParamBall::new(self.center.clone(), radius, self.continuity)
    }
}

/// Total weight of outliers to trim.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrimSpec {
    pub z: f64,
}

impl TrimSpec {
    pub fn new(z: f64) -> Result<Self> {
        if !(z >= 0.0) || !z.is_finite() {
            return Err(CoresetError::InvalidParameter(format!(
                "outlier weight must be nonnegative, got {z}"
            )));
        }
        Ok(TrimSpec { z })
    }

    pub fn none() -> Self {
        TrimSpec { z: 0.0 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_rejects_mixed_dimensions() {
        let pts = vec![
            WeightedPoint::new(0, vec![1.0, 2.0], 1.0),
            WeightedPoint::new(1, vec![1.0], 1.0),
        ];
        assert!(matches!(
            WeightedDataset::new(pts),
            Err(CoresetError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn dataset_rejects_zero_total_weight() {
        let pts = vec![WeightedPoint::new(0, vec![1.0], 0.0)];
        assert!(matches!(
            WeightedDataset::new(pts),
            Err(CoresetError::EmptyDataset)
        ));
        assert!(WeightedDataset::new(vec![]).is_err());
    }

    #[test]
    fn dataset_sorts_by_id() {
        let pts = vec![
            WeightedPoint::new(5, vec![1.0], 1.0),
            WeightedPoint::new(2, vec![2.0], 1.0),
        ];
        let ds = WeightedDataset::new(pts).unwrap();
        assert_eq!(ds.points()[0].id, 2);
        assert_eq!(ds.total_weight(), 2.0);
    }

    #[test]
    fn ball_validation() {
        let c = ContinuityKind::Lipschitz { alpha: 1.0 };
        assert!(ParamBall::new(vec![0.0], 0.0, c).is_err());
        assert!(ParamBall::new(vec![0.0], 1.0, ContinuityKind::Lipschitz { alpha: 0.0 }).is_err());
        assert!(ParamBall::new(vec![0.0], 1.0, c).is_ok());
    }
}
