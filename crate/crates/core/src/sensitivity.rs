//! Upper bounds `s_i` on point sensitivities `σ_i = sup_θ w_i f(θ,x_i) / f(θ,X)` over the
//! parameter ball.
//!
//! Two routes are provided. The closed form uses the uniform continuity bound `ξ(ℓ)` on both the
//! numerator and the denominator. The quadratic fractional route uses the smooth expansion around
//! θ̃, which gives a ratio of two isotropic quadratics in `Δθ`; its supremum over `‖Δθ‖ ≤ ℓ` is found
//! by Dinkelbach iteration, each step being an exact trust-region subproblem.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{ContinuityKind, ParamBall, WeightedDataset};
use crate::error::{CoresetError, Result};
use crate::loss::{dot, LossModel};
use crate::objective::{objective_points, pairwise_sum, xi};
use crate::trs::{solve_trs, TrsSolution};

/// Dinkelbach stops once `max_Δ N(Δ) − λ D(Δ)` drops to this value.
pub const DINKELBACH_TOL: f64 = 1e-8;
pub const DINKELBACH_MAX_ITER: usize = 100;
/// Lower clamp keeping every bound strictly positive.
pub const SENSITIVITY_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SensitivityMethod {
    LipschitzClosedForm,
    QfpDinkelbach,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityProfile {
    /// Point ids, aligned with `s`, in the dataset's order.
    pub ids: Vec<u64>,
    pub s: Vec<f64>,
    /// `S = Σ s_i`.
    pub total: f64,
    pub method: SensitivityMethod,
}

impl SensitivityProfile {
    fn from_bounds(ids: Vec<u64>, s: Vec<f64>, method: SensitivityMethod) -> Self {
        let total = pairwise_sum(&s);
        SensitivityProfile { ids, s, total, method }
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.s.iter().map(|v| v / self.total).collect()
    }
}

fn clamp_bound(v: f64) -> f64 {
    v.clamp(SENSITIVITY_FLOOR, 1.0)
}

/// Closed-form bound `s_i = min(1, w_i (f_i(θ̃) + ξ) / (f(θ̃,X) − ⟦X⟧ ξ))`.
pub fn sensitivity_lipschitz(
    model: &LossModel,
    data: &WeightedDataset,
    ball: &ParamBall,
) -> Result<SensitivityProfile> {
    model.check_theta(&ball.center)?;
    model.check_dataset(data)?;
    let xi = xi(ball);
    let pts = data.points();
    let total = objective_points(model, &ball.center, pts);
    let denom = total - data.total_weight() * xi;
    if !(denom > 0.0) {
        return Err(CoresetError::NonPositiveDenominator { value: denom });
    }
    let s = pts
        .iter()
        .map(|p| clamp_bound(p.weight * (model.cost(&ball.center, p) + xi) / denom))
        .collect();
    Ok(SensitivityProfile::from_bounds(
        pts.iter().map(|p| p.id).collect(),
        s,
        SensitivityMethod::LipschitzClosedForm,
    ))
}

/// `c + ⟨b, Δ⟩ + q ‖Δ‖²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsoQuadratic {
    pub constant: f64,
    pub linear: Vec<f64>,
    pub curvature: f64,
}

impl IsoQuadratic {
    pub fn eval(&self, delta: &[f64]) -> f64 {
        let sq: f64 = delta.iter().map(|v| v * v).sum();
        self.constant + dot(&self.linear, delta) + self.curvature * sq
    }

    /// `self − λ·other`.
    fn combine(&self, lambda: f64, other: &IsoQuadratic) -> IsoQuadratic {
        IsoQuadratic {
            constant: self.constant - lambda * other.constant,
            linear: self
                .linear
                .iter()
                .zip(&other.linear)
                .map(|(a, b)| a - lambda * b)
                .collect(),
            curvature: self.curvature - lambda * other.curvature,
        }
    }

    /// Maximizer over the ball, via the trust-region subproblem on the negated quadratic.
    fn maximize(&self, radius: f64) -> Result<(TrsSolution, f64)> {
        let d = self.linear.len();
        let a = DMatrix::from_diagonal_element(d, d, -2.0 * self.curvature);
        let b = -DVector::from_column_slice(&self.linear);
        let sol = solve_trs(&a, &b, radius)?;
        let value = self.eval(&sol.step);
        Ok((sol, value))
    }

    fn minimize(&self, radius: f64) -> Result<f64> {
        let d = self.linear.len();
        let a = DMatrix::from_diagonal_element(d, d, 2.0 * self.curvature);
        let b = DVector::from_column_slice(&self.linear);
        let sol = solve_trs(&a, &b, radius)?;
        Ok(self.eval(&sol.step))
    }
}

/// `sup_{‖Δ‖ ≤ radius} numerator(Δ) / denominator(Δ)` with a denominator positive on the ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QfpInstance {
    pub numerator: IsoQuadratic,
    pub denominator: IsoQuadratic,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QfpSolution {
    /// Certified upper bound on the supremum: `λ + F(λ)/min D`.
    pub upper_bound: f64,
    /// Final Dinkelbach ratio, attained at `argmax`.
    pub ratio: f64,
    pub argmax: Vec<f64>,
    /// The λ sequence, strictly increasing.
    pub lambdas: Vec<f64>,
}

impl QfpInstance {
    pub fn denominator_min(&self) -> Result<f64> {
        self.denominator.minimize(self.radius)
    }

    pub fn solve(&self) -> Result<QfpSolution> {
        let dmin = self.denominator_min()?;
        self.solve_with_denominator_min(dmin)
    }

    /// As [`solve`](Self::solve) with a precomputed `min D` (shared across points).
    pub fn solve_with_denominator_min(&self, dmin: f64) -> Result<QfpSolution> {
        if self.numerator.linear.len() != self.denominator.linear.len() {
            return Err(CoresetError::DimensionMismatch {
                expected: self.denominator.linear.len(),
                found: self.numerator.linear.len(),
            });
        }
        if !(dmin > 0.0) {
            return Err(CoresetError::NonPositiveDenominator { value: dmin });
        }
        let d = self.numerator.linear.len();
        let mut argmax = vec![0.0; d];
        let mut lambda = self.numerator.eval(&argmax) / self.denominator.eval(&argmax);
        let mut lambdas = vec![lambda];
        for _ in 0..DINKELBACH_MAX_ITER {
            let param = self.numerator.combine(lambda, &self.denominator);
            let (sol, gap) = param.maximize(self.radius)?;
            if gap <= DINKELBACH_TOL {
                return Ok(QfpSolution {
                    upper_bound: lambda + gap.max(0.0) / dmin,
                    ratio: lambda,
                    argmax,
                    lambdas,
                });
            }
            let next = self.numerator.eval(&sol.step) / self.denominator.eval(&sol.step);
            if !(next > lambda) {
                // Rounding stall: the gap already certifies the bound.
                return Ok(QfpSolution {
                    upper_bound: lambda + gap / dmin,
                    ratio: lambda,
                    argmax,
                    lambdas,
                });
            }
            lambda = next;
            argmax = sol.step;
            lambdas.push(lambda);
        }
        Err(CoresetError::NoConvergence {
            what: "Dinkelbach iteration",
            iterations: DINKELBACH_MAX_ITER,
        })
    }
}

/// Bounds from the smooth expansion
/// `f_i(θ̃) + ⟨∇f_i(θ̃), Δ⟩ ± α/2 ‖Δ‖²` in numerator and denominator.
pub fn sensitivity_qfp(
    model: &LossModel,
    data: &WeightedDataset,
    ball: &ParamBall,
) -> Result<SensitivityProfile> {
    let alpha = match ball.continuity {
        ContinuityKind::Smooth { alpha, .. } => alpha,
        other => {
            return Err(CoresetError::InvalidParameter(format!(
                "quadratic fractional bounds need smooth continuity, got {other:?}"
            )))
        }
    };
    model.check_theta(&ball.center)?;
    model.check_dataset(data)?;
    let pts = data.points();
    let theta = &ball.center;
    let pd = theta.len();
    let costs: Vec<f64> = pts.iter().map(|p| model.cost(theta, p)).collect();
    let grads: Vec<Vec<f64>> = pts.iter().map(|p| model.point_gradient(theta, p)).collect();

    let total_w = data.total_weight();
    let total_f = pairwise_sum(&pts.iter().zip(&costs).map(|(p, c)| p.weight * c).collect::<Vec<_>>());
    let mut total_g = vec![0.0; pd];
    for (p, g) in pts.iter().zip(&grads) {
        for (t, v) in total_g.iter_mut().zip(g) {
            *t += p.weight * v;
        }
    }
    let denominator = IsoQuadratic {
        constant: total_f,
        linear: total_g,
        curvature: -alpha * total_w / 2.0,
    };
    let dmin = denominator.minimize(ball.radius)?;
    if !(dmin > 0.0) {
        return Err(CoresetError::NonPositiveDenominator { value: dmin });
    }

    let mut s = Vec::with_capacity(pts.len());
    for ((p, &c), g) in pts.iter().zip(&costs).zip(&grads) {
        if p.weight == 0.0 {
            s.push(SENSITIVITY_FLOOR);
            continue;
        }
        let inst = QfpInstance {
            numerator: IsoQuadratic {
                constant: p.weight * c,
                linear: g.iter().map(|v| p.weight * v).collect(),
                curvature: p.weight * alpha / 2.0,
            },
            denominator: denominator.clone(),
            radius: ball.radius,
        };
        s.push(clamp_bound(inst.solve_with_denominator_min(dmin)?.upper_bound));
    }
    Ok(SensitivityProfile::from_bounds(
        pts.iter().map(|p| p.id).collect(),
        s,
        SensitivityMethod::QfpDinkelbach,
    ))
}

/// The dimension term of a coreset size bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SizeDimension {
    /// `c·S²/ε²·(ddim·ln(1/ε) + ln(1/η))`.
    Doubling(f64),
    /// `c·S/ε²·(vcdim·ln S + ln(1/η))`.
    Vc(f64),
}

/// Importance-sampling size guidance with leading constant `c` (natural logs).
pub fn theoretical_sample_size(
    total_sensitivity: f64,
    eps: f64,
    eta: f64,
    dim: SizeDimension,
    c: f64,
) -> Result<usize> {
    if !(total_sensitivity > 0.0) || !(eps > 0.0 && eps < 1.0) || !(eta > 0.0 && eta < 1.0) {
        return Err(CoresetError::InvalidParameter(
            "need S > 0, 0 < eps < 1, 0 < eta < 1".into(),
        ));
    }
    let s = total_sensitivity;
    let raw = match dim {
        SizeDimension::Doubling(ddim) => {
            c * s * s / (eps * eps) * (ddim * (1.0 / eps).ln() + (1.0 / eta).ln())
        }
        SizeDimension::Vc(vc) => c * s / (eps * eps) * (vc * s.ln().max(0.0) + (1.0 / eta).ln()),
    };
    Ok(ceil_guarded(raw).max(1.0) as usize)
}

/// Ceiling that ignores relative rounding noise below 1e-9 (so `1010.0000000000001 → 1010`).
pub(crate) fn ceil_guarded(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() <= 1e-9 * v.abs().max(1.0) {
        r
    } else {
        v.ceil()
    }
}
