//! Synthetic datasets and outlier injection.

use log::warn;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{WeightedDataset, WeightedPoint};
use crate::dynamic::Op;
use crate::error::{CoresetError, Result};
use crate::loss::{dot, sq_dist};
use crate::rng::{derive_seed, rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SynthSpec {
    /// `k` Gaussian blobs with pairwise center distance at least `separation` and per-coordinate
    /// standard deviation `spread`; points are dealt to blobs round-robin.
    Mixture {
        n: usize,
        dim: usize,
        k: usize,
        #[serde(default = "default_separation")]
        separation: f64,
        #[serde(default = "default_spread")]
        spread: f64,
        seed: u64,
    },
    /// Standard normal features labeled by the sign of `⟨θ°, x⟩ + noise·N(0,1)` for a random unit
    /// `θ°` scaled by `scale`.
    Logistic {
        n: usize,
        dim: usize,
        #[serde(default)]
        noise: f64,
        #[serde(default = "default_scale")]
        scale: f64,
        seed: u64,
    },
}

fn default_separation() -> f64 {
    10.0
}
fn default_spread() -> f64 {
    1.0
}
fn default_scale() -> f64 {
    1.0
}

/// Generated data plus the planted parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub data: WeightedDataset,
    /// Mixture centers concatenated, or the planted hyperplane normal.
    pub planted: Vec<f64>,
    pub spec: SynthSpec,
}

pub fn synth_generate(spec: &SynthSpec) -> Result<SynthOutput> {
    match *spec {
        SynthSpec::Mixture { n, dim, k, separation, spread, seed } => {
            if n == 0 || dim == 0 || k == 0 {
                return Err(CoresetError::InvalidParameter("mixture needs n, dim, k ≥ 1".into()));
            }
            let (data, centers) = gaussian_mixture(n, dim, k, separation, spread, seed)?;
            Ok(SynthOutput { data, planted: centers.concat(), spec: spec.clone() })
        }
        SynthSpec::Logistic { n, dim, noise, scale, seed } => {
            if n == 0 || dim == 0 {
                return Err(CoresetError::InvalidParameter("logistic data needs n, dim ≥ 1".into()));
            }
            let (data, theta) = planted_logistic(n, dim, noise, scale, seed)?;
            Ok(SynthOutput { data, planted: theta, spec: spec.clone() })
        }
    }
}

pub fn gaussian_mixture(
    n: usize,
    dim: usize,
    k: usize,
    separation: f64,
    spread: f64,
    seed: u64,
) -> Result<(WeightedDataset, Vec<Vec<f64>>)> {
    let mut r = rng(seed);
    let side = separation * (k as f64).powf(1.0 / dim as f64) * 2.0;
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut attempts = 0;
    while centers.len() < k {
        let c: Vec<f64> = (0..dim).map(|_| r.random_range(0.0..side.max(f64::MIN_POSITIVE))).collect();
        attempts += 1;
        let ok = centers.iter().all(|o| sq_dist(o, &c).sqrt() >= separation);
        if ok || attempts > 10_000 {
            centers.push(c);
        }
    }
    let noise = Normal::new(0.0, spread.max(0.0))
        .map_err(|e| CoresetError::InvalidParameter(e.to_string()))?;
    let pts = (0..n)
        .map(|i| {
            let c = &centers[i % k];
            let f = c.iter().map(|v| v + noise.sample(&mut r)).collect();
            WeightedPoint::new(i as u64, f, 1.0)
        })
        .collect();
    Ok((WeightedDataset::new(pts)?, centers))
}

pub fn planted_logistic(n: usize, dim: usize, noise: f64, scale: f64, seed: u64) -> Result<(WeightedDataset, Vec<f64>)> {
    let mut r = rng(seed);
    let mut theta: Vec<f64> = (0..dim).map(|_| r.sample(StandardNormal)).collect();
    let nt = theta.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    theta.iter_mut().for_each(|v| *v *= scale / nt);
    let pts = (0..n)
        .map(|i| {
            let x: Vec<f64> = (0..dim).map(|_| r.sample(StandardNormal)).collect();
            let e: f64 = r.sample(StandardNormal);
            let y = if dot(&theta, &x) + noise * e >= 0.0 { 1 } else { -1 };
            WeightedPoint::labeled(i as u64, x, y, 1.0)
        })
        .collect();
    Ok((WeightedDataset::new(pts)?, theta))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum OutlierMode {
    /// New points: copies of random data points plus `N(0, σ²)` per coordinate, with fresh ids.
    Clustering {
        #[serde(default = "default_sigma")]
        sigma: f64,
    },
    /// Existing points get `N(0, σ²)` feature noise and a label flipped with probability 1/2.
    Supervised {
        #[serde(default = "default_sigma")]
        sigma: f64,
    },
}

fn default_sigma() -> f64 {
    200.0
}

/// Returns the corrupted dataset and the ids of the injected (or perturbed) points.
pub fn inject_outliers(
    data: &WeightedDataset,
    count: usize,
    mode: OutlierMode,
    seed: u64,
) -> Result<(WeightedDataset, Vec<u64>)> {
    let n = data.len();
    if count >= n {
        return Err(CoresetError::InvalidParameter(format!(
            "outlier count {count} must be below n = {n}"
        )));
    }
    if count == 0 {
        return Ok((data.clone(), Vec::new()));
    }
    let sigma = match mode {
        OutlierMode::Clustering { sigma } | OutlierMode::Supervised { sigma } => sigma,
    };
    if sigma == 0.0 {
        warn!("outlier noise is zero; injected points coincide with originals");
    }
    let noise = Normal::new(0.0, sigma.abs()).map_err(|e| CoresetError::InvalidParameter(e.to_string()))?;
    let mut r = rng(seed);
    let pts = data.points();
    match mode {
        OutlierMode::Clustering { .. } => {
            let first = pts.iter().map(|p| p.id).max().unwrap_or(0) + 1;
            let mut out = pts.to_vec();
            let mut ids = Vec::with_capacity(count);
            for id in first..first + count as u64 {
                let src = &pts[r.random_range(0..n)];
                let f = src.features.iter().map(|v| v + noise.sample(&mut r)).collect();
                out.push(WeightedPoint { id, features: f, label: src.label, weight: 1.0 });
                ids.push(id);
            }
            Ok((WeightedDataset::new(out)?, ids))
        }
        OutlierMode::Supervised { .. } => {
            let mut chosen = rand::seq::index::sample(&mut r, n, count).into_vec();
            chosen.sort_unstable();
            let mut out = pts.to_vec();
            for &i in &chosen {
                let p = &mut out[i];
                for v in &mut p.features {
                    *v += noise.sample(&mut r);
                }
                if r.random_bool(0.5) {
                    p.label = p.label.map(|y| -y);
                }
            }
            let ids = chosen.iter().map(|&i| pts[i].id).collect();
            Ok((WeightedDataset::new(out)?, ids))
        }
    }
}

/// Proportions of a random operation log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpMix {
    pub insert: f64,
    pub delete: f64,
    pub change_z: f64,
    /// Largest `|Δz|` per change.
    pub max_dz: i64,
    /// `z` is kept inside `[1, z_max]`.
    pub z_max: i64,
    /// Per-coordinate noise added to copied points on insert.
    pub jitter: f64,
    /// Probability that an inserted point is a far outlier (noise `outlier_sigma`).
    pub outlier_rate: f64,
    pub outlier_sigma: f64,
}

impl Default for OpMix {
    fn default() -> Self {
        OpMix {
            insert: 0.7,
            delete: 0.2,
            change_z: 0.1,
            max_dz: 2,
            z_max: 10,
            jitter: 0.5,
            outlier_rate: 0.02,
            outlier_sigma: 200.0,
        }
    }
}

/// A random log against `data` whose deletes always name live ids, starting from outlier count
/// `z0`.
pub fn random_oplog(data: &WeightedDataset, ops: usize, mix: OpMix, z0: i64, seed: u64) -> Result<Vec<Op>> {
    let mut r = rng(derive_seed(seed, 0x6f70));
    let mut live: Vec<WeightedPoint> = data.points().to_vec();
    let mut next = live.iter().map(|p| p.id).max().unwrap_or(0) + 1;
    let mut z = z0;
    let jitter = Normal::new(0.0, mix.jitter.abs()).map_err(|e| CoresetError::InvalidParameter(e.to_string()))?;
    let far = Normal::new(0.0, mix.outlier_sigma.abs()).map_err(|e| CoresetError::InvalidParameter(e.to_string()))?;
    let total = mix.insert + mix.delete + mix.change_z;
    if !(total > 0.0) {
        return Err(CoresetError::InvalidParameter("operation mix must have positive mass".into()));
    }
    let mut log = Vec::with_capacity(ops);
    for _ in 0..ops {
        let u = r.random::<f64>() * total;
        if u < mix.insert || live.len() <= 2 {
            let src = &live[r.random_range(0..live.len())];
            let outlier = r.random_bool(mix.outlier_rate.clamp(0.0, 1.0));
            let f = src
                .features
                .iter()
                .map(|v| v + if outlier { far.sample(&mut r) } else { jitter.sample(&mut r) })
                .collect();
            let p = WeightedPoint { id: next, features: f, label: src.label, weight: 1.0 };
            next += 1;
            live.push(p.clone());
            log.push(Op::Insert { point: p });
        } else if u < mix.insert + mix.delete {
            let i = r.random_range(0..live.len());
            let p = live.swap_remove(i);
            log.push(Op::Delete { id: p.id });
        } else {
            let mut dz = 0;
            while dz == 0 {
                dz = r.random_range(-mix.max_dz..=mix.max_dz);
            }
            let nz = (z + dz).clamp(1, mix.z_max.max(1));
            let dz = nz - z;
            z = nz;
            log.push(Op::Changez { dz });
        }
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixture_is_deterministic_and_separated() {
        let spec = SynthSpec::Mixture { n: 3000, dim: 2, k: 3, separation: 10.0, spread: 1.0, seed: 5 };
        let a = synth_generate(&spec).unwrap();
        assert_eq!(a, synth_generate(&spec).unwrap());
        assert_eq!(a.data.len(), 3000);
        let c = &a.planted;
        for i in 0..3 {
            for j in 0..i {
                assert!(sq_dist(&c[2 * i..2 * i + 2], &c[2 * j..2 * j + 2]).sqrt() >= 10.0);
            }
        }
    }

    #[test]
    fn noiseless_logistic_is_separable_by_the_planted_normal() {
        let out = synth_generate(&SynthSpec::Logistic { n: 500, dim: 4, noise: 0.0, scale: 1.0, seed: 1 }).unwrap();
        for p in out.data.points() {
            let s = dot(&out.planted, &p.features);
            assert_eq!(s >= 0.0, p.label == Some(1));
        }
        let one = synth_generate(&SynthSpec::Logistic { n: 1, dim: 4, noise: 0.0, scale: 1.0, seed: 1 }).unwrap();
        assert_eq!(one.data.len(), 1);
    }

    #[test]
    fn injection_modes() {
        let base = synth_generate(&SynthSpec::Mixture { n: 100, dim: 2, k: 2, separation: 10.0, spread: 1.0, seed: 2 })
            .unwrap()
            .data;
        let (same, ids) = inject_outliers(&base, 0, OutlierMode::Clustering { sigma: 200.0 }, 1).unwrap();
        assert_eq!(same, base);
        assert!(ids.is_empty());
        let (a, ids) = inject_outliers(&base, 5, OutlierMode::Clustering { sigma: 200.0 }, 1).unwrap();
        assert_eq!(a.len(), 105);
        assert_eq!(ids, vec![100, 101, 102, 103, 104]);
        assert_eq!(a, inject_outliers(&base, 5, OutlierMode::Clustering { sigma: 200.0 }, 1).unwrap().0);
        assert!(inject_outliers(&base, 100, OutlierMode::Clustering { sigma: 1.0 }, 1).is_err());

        let lab = synth_generate(&SynthSpec::Logistic { n: 100, dim: 3, noise: 0.0, scale: 1.0, seed: 1 }).unwrap().data;
        let (b, ids) = inject_outliers(&lab, 10, OutlierMode::Supervised { sigma: 5.0 }, 3).unwrap();
        assert_eq!(b.len(), 100);
        assert_eq!(ids.len(), 10);
    }

    #[test]
    fn oplog_respects_bounds() {
        let base = synth_generate(&SynthSpec::Mixture { n: 50, dim: 2, k: 2, separation: 10.0, spread: 1.0, seed: 2 })
            .unwrap()
            .data;
        let log = random_oplog(&base, 300, OpMix::default(), 5, 9).unwrap();
        let mut live: std::collections::HashSet<u64> = base.points().iter().map(|p| p.id).collect();
        let mut z = 5;
        for op in &log {
            match op {
                Op::Insert { point } => assert!(live.insert(point.id)),
                Op::Delete { id } => assert!(live.remove(id)),
                Op::Changez { dz } => {
                    z += dz;
                    assert!((1..=10).contains(&z) && dz.abs() <= 2);
                }
                Op::Update { .. } => unreachable!(),
            }
        }
    }
}
