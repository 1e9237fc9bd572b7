//! Exact trust-region subproblem solver:
//!
//! ```text
//! minimize ½ pᵀ A p + bᵀ p   subject to ‖p‖ ≤ r
//! ```
//!
//! for symmetric (possibly indefinite) `A`. The solution satisfies `(A + μI) p = −b` with
//! `A + μI ⪰ 0`, `μ ≥ 0` and `μ(‖p‖ − r) = 0`. We diagonalize `A` once and find `μ` on the
//! secular equation `‖p(μ)‖ = r` by safeguarded Newton, handling the hard case explicitly.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{CoresetError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrsSolution {
    pub step: Vec<f64>,
    pub multiplier: f64,
    pub on_boundary: bool,
    /// Objective value `½ pᵀ A p + bᵀ p` at the step.
    pub value: f64,
}

pub fn solve_trs(a: &DMatrix<f64>, b: &DVector<f64>, radius: f64) -> Result<TrsSolution> {
    let n = b.len();
    if a.nrows() != n || a.ncols() != n {
        return Err(CoresetError::DimensionMismatch {
            expected: n,
            found: a.nrows(),
        });
    }
    if !(radius > 0.0) {
        return Err(CoresetError::InvalidParameter(format!(
            "trust radius must be positive, got {radius}"
        )));
    }
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let lambdas: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    let q = &eig.eigenvectors;
    let g: Vec<f64> = (q.transpose() * b).iter().copied().collect();

    let scale = lambdas.iter().fold(0.0f64, |m, l| m.max(l.abs())).max(1.0);
    let (imin, lmin) = lambdas
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, l)| if l < acc.1 { (i, l) } else { acc });
    let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();

    let step_norm = |mu: f64| -> f64 {
        g.iter()
            .zip(&lambdas)
            .map(|(gi, li)| {
                let den = li + mu;
                (gi / den) * (gi / den)
            })
            .sum::<f64>()
            .sqrt()
    };
    let assemble = |coeffs: &[f64]| -> DVector<f64> { q * DVector::from_column_slice(coeffs) };

    // Interior Newton step.
    if lmin > 1e-14 * scale {
        let coeffs: Vec<f64> = g.iter().zip(&lambdas).map(|(gi, li)| -gi / li).collect();
        if coeffs.iter().map(|c| c * c).sum::<f64>().sqrt() <= radius {
            return Ok(finish(a, b, assemble(&coeffs), 0.0, false));
        }
    }

    let lo = (-lmin).max(0.0);
    let eig_tol = 1e-12 * scale;
    let small_g = 1e-14 * gnorm.max(1.0);
    let degenerate: Vec<bool> = lambdas.iter().map(|l| (l - lmin).abs() <= eig_tol).collect();
    let hard_candidate = lmin <= eig_tol
        && g.iter()
            .zip(&degenerate)
            .all(|(gi, &deg)| !deg || gi.abs() <= small_g);

    if hard_candidate {
        // Step at μ = −λ_min using only the components off the bottom eigenspace.
        let coeffs: Vec<f64> = g
            .iter()
            .zip(&lambdas)
            .zip(&degenerate)
            .map(|((gi, li), &deg)| if deg { 0.0 } else { -gi / (li + lo) })
            .collect();
        let pn = coeffs.iter().map(|c| c * c).sum::<f64>().sqrt();
        if pn <= radius {
            let mut coeffs = coeffs;
            coeffs[imin] += (radius * radius - pn * pn).max(0.0).sqrt();
            return Ok(finish(a, b, assemble(&coeffs), lo, true));
        }
    }

    // Boundary solution: ‖p(μ)‖ = r on μ ∈ (lo, hi].
    let mut hi = (gnorm / radius - lmin).max(lo);
    while step_norm(hi) > radius {
        hi = hi * 2.0 + 1.0;
    }
    let mut left = lo;
    let mut right = hi;
    let mut mu = hi;
    for _ in 0..300 {
        let pn = step_norm(mu);
        if !pn.is_finite() {
            left = mu;
        } else {
            if (pn - radius).abs() <= 1e-15 * radius {
                break;
            }
            if pn > radius {
                left = mu;
            } else {
                right = mu;
            }
        }
        // Newton on 1/‖p(μ)‖ − 1/r.
        let next = if pn.is_finite() && pn > 0.0 {
            let d3: f64 = g
                .iter()
                .zip(&lambdas)
                .map(|(gi, li)| gi * gi / (li + mu).powi(3))
                .sum();
            let phi = 1.0 / pn - 1.0 / radius;
            let dphi = d3 / pn.powi(3);
            if dphi > 0.0 {
                mu - phi / dphi
            } else {
                f64::NAN
            }
        } else {
            f64::NAN
        };
        mu = if next.is_finite() && next > left && next < right {
            next
        } else {
            0.5 * (left + right)
        };
        if right - left <= 1e-16 * right.abs().max(1.0) {
            break;
        }
    }
    let coeffs: Vec<f64> = g
        .iter()
        .zip(&lambdas)
        .map(|(gi, li)| -gi / (li + mu))
        .collect();
    let mut p = assemble(&coeffs);
    // Clip rounding overshoot back onto the sphere.
    let pn = p.norm();
    if pn > radius {
        p *= radius / pn;
    }
    Ok(finish(a, b, p, mu, true))
}

fn finish(a: &DMatrix<f64>, b: &DVector<f64>, p: DVector<f64>, mu: f64, on_boundary: bool) -> TrsSolution {
    let value = 0.5 * p.dot(&(a * &p)) + b.dot(&p);
    TrsSolution {
        step: p.iter().copied().collect(),
        multiplier: mu,
        on_boundary,
        value,
    }
}

/// `‖(A + μI)p + b‖`, the first-order optimality residual.
pub fn kkt_residual(a: &DMatrix<f64>, b: &DVector<f64>, sol: &TrsSolution) -> f64 {
    let p = DVector::from_column_slice(&sol.step);
    (a * &p + &p * sol.multiplier + b).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn brute_min(a: &DMatrix<f64>, b: &DVector<f64>, r: f64) -> f64 {
        // 2-D polar grid
        let mut best = f64::INFINITY;
        for i in 0..=400 {
            let rad = r * i as f64 / 400.0;
            for j in 0..720 {
                let t = j as f64 * std::f64::consts::PI / 360.0;
                let p = DVector::from_vec(vec![rad * t.cos(), rad * t.sin()]);
                best = best.min(0.5 * p.dot(&(a * &p)) + b.dot(&p));
            }
        }
        best
    }

    #[test]
    fn interior_convex() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 4.0]);
        let b = DVector::from_vec(vec![-2.0, -4.0]);
        let s = solve_trs(&a, &b, 10.0).unwrap();
        assert!(!s.on_boundary);
        assert!((s.step[0] - 1.0).abs() < 1e-12 && (s.step[1] - 1.0).abs() < 1e-12);
        assert_eq!(s.multiplier, 0.0);
    }

    #[test]
    fn concave_isotropic_goes_against_gradient() {
        let a = DMatrix::from_row_slice(2, 2, &[-3.0, 0.0, 0.0, -3.0]);
        let b = DVector::from_vec(vec![3.0, 4.0]);
        let s = solve_trs(&a, &b, 2.0).unwrap();
        assert!((s.step[0] + 1.2).abs() < 1e-10 && (s.step[1] + 1.6).abs() < 1e-10);
        assert!((s.multiplier - (3.0 + 5.0 / 2.0)).abs() < 1e-9);
        assert!(kkt_residual(&a, &b, &s) < 1e-10);
    }

    #[test]
    fn hard_case() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 2.0]);
        let b = DVector::from_vec(vec![0.0, 1.0]);
        let s = solve_trs(&a, &b, 1.0).unwrap();
        let pn = (s.step[0].powi(2) + s.step[1].powi(2)).sqrt();
        assert!((pn - 1.0).abs() < 1e-12);
        assert!((s.multiplier - 1.0).abs() < 1e-12);
        assert!(kkt_residual(&a, &b, &s) < 1e-12);
        assert!(s.value <= brute_min(&a, &b, 1.0) + 1e-9);
    }

    #[test]
    fn zero_gradient_indefinite() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -2.0]);
        let b = DVector::from_vec(vec![0.0, 0.0]);
        let s = solve_trs(&a, &b, 1.5).unwrap();
        assert!((s.value - (-2.0 * 1.5 * 1.5 / 2.0)).abs() < 1e-12);
    }

    #[test]
    fn random_instances_match_grid_and_kkt() {
        let mut rng = crate::rng::rng(11);
        for _ in 0..40 {
            let m: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
            let a = DMatrix::from_row_slice(2, 2, &[m[0], m[1], m[1], m[2]]);
            let b = DVector::from_vec(vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]);
            let r = rng.random_range(0.2..2.0);
            let s = solve_trs(&a, &b, r).unwrap();
            assert!(kkt_residual(&a, &b, &s) <= 1e-8, "residual {}", kkt_residual(&a, &b, &s));
            assert!(s.multiplier >= 0.0);
            let pn = DVector::from_column_slice(&s.step).norm();
            assert!(pn <= r * (1.0 + 1e-12));
            assert!(s.multiplier * (pn - r).abs() <= 1e-8);
            let grid = brute_min(&a, &b, r);
            assert!(s.value <= grid + 1e-9, "solver {} grid {}", s.value, grid);
        }
    }
}
