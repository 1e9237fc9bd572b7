//! Ordinary (outlier-free) coreset constructions: uniform sampling, importance sampling over
//! sensitivity bounds, and the generalized spatial partition (GSP).

use std::collections::BTreeMap;

use log::warn;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::data::{ParamBall, WeightedDataset, WeightedPoint};
use crate::error::{CoresetError, Result};
use crate::loss::LossModel;
use crate::objective::pairwise_sum;
use crate::rng::{derive_seed, rng, DetRng};
use crate::sensitivity::{ceil_guarded, sensitivity_lipschitz, SensitivityProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuilderKind {
    Uniform,
    Importance,
    Gsp,
    /// The input itself, returned when it is already below the requested size.
    Identity,
}

impl std::str::FromStr for BuilderKind {
    type Err = CoresetError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" => Ok(BuilderKind::Uniform),
            "importance" => Ok(BuilderKind::Importance),
            "gsp" => Ok(BuilderKind::Gsp),
            "identity" => Ok(BuilderKind::Identity),
            other => Err(CoresetError::InvalidParameter(format!("unknown builder '{other}'"))),
        }
    }
}

impl std::fmt::Display for BuilderKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            BuilderKind::Uniform => "uniform",
            BuilderKind::Importance => "importance",
            BuilderKind::Gsp => "gsp",
            BuilderKind::Identity => "identity",
        };
        f.write_str(s)
    }
}

/// A weighted summary of a source set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coreset {
    pub points: Vec<WeightedPoint>,
    /// Number of points in the source set.
    pub source_size: usize,
    pub builder: BuilderKind,
    pub params: BTreeMap<String, f64>,
}

impl Coreset {
    pub fn identity(points: Vec<WeightedPoint>) -> Self {
        Coreset {
            source_size: points.len(),
            points,
            builder: BuilderKind::Identity,
            params: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        pairwise_sum(&self.points.iter().map(|p| p.weight).collect::<Vec<_>>())
    }

    pub fn to_dataset(&self) -> Result<WeightedDataset> {
        WeightedDataset::new(self.points.clone())
    }
}

fn total_weight_of(points: &[WeightedPoint]) -> f64 {
    pairwise_sum(&points.iter().map(|p| p.weight).collect::<Vec<_>>())
}

fn equal_weights(points: &[&WeightedPoint]) -> bool {
    points.first().is_none_or(|p0| points.iter().all(|p| p.weight == p0.weight))
}

/// `m` of the given points preserving their total weight. Equal-weight inputs are sampled
/// uniformly without replacement; otherwise draws are weight-proportional with replacement, each
/// carrying `⟦P⟧/m`, and repeated draws of one id are merged.
pub(crate) fn sample_preserving_weight(
    points: &[&WeightedPoint],
    m: usize,
    rng: &mut DetRng,
) -> Result<Vec<WeightedPoint>> {
    if m >= points.len() {
        return Ok(points.iter().map(|p| (*p).clone()).collect());
    }
    if m == 0 {
        return Ok(Vec::new());
    }
    let total = pairwise_sum(&points.iter().map(|p| p.weight).collect::<Vec<_>>());
    if equal_weights(points) {
        let mut idx = rand::seq::index::sample(rng, points.len(), m).into_vec();
        idx.sort_unstable();
        let w = total / m as f64;
        return Ok(idx.into_iter().map(|i| points[i].with_weight(w)).collect());
    }
    let dist = WeightedIndex::new(points.iter().map(|p| p.weight))
        .map_err(|e| CoresetError::DegenerateSample(e.to_string()))?;
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for _ in 0..m {
        *counts.entry(dist.sample(rng)).or_default() += 1;
    }
    let unit = total / m as f64;
    let mut merged: BTreeMap<u64, WeightedPoint> = BTreeMap::new();
    for (i, c) in counts {
        let w = unit * c as f64;
        merged
            .entry(points[i].id)
            .and_modify(|p| p.weight += w)
            .or_insert_with(|| points[i].with_weight(w));
    }
    Ok(merged.into_values().collect())
}

/// `m` points uniformly without replacement, each weighted `⟦X⟧/m`. The input must carry equal
/// weights; use importance sampling for general weighted inputs.
pub fn uniform_sample(data: &WeightedDataset, m: usize, seed: u64) -> Result<Coreset> {
    let n = data.len();
    if m == 0 || m > n {
        return Err(CoresetError::InvalidParameter(format!(
            "uniform sample size {m} outside 1..={n}"
        )));
    }
    if !data.has_uniform_weights() {
        return Err(CoresetError::InvalidParameter(
            "uniform sampling needs equal weights; use importance sampling".into(),
        ));
    }
    let refs: Vec<&WeightedPoint> = data.points().iter().collect();
    let total = data.total_weight();
    let points = if m == n {
        refs.iter().map(|p| (*p).clone()).collect()
    } else {
        sample_preserving_weight(&refs, m, &mut rng(seed))?
    };
    debug_assert!(points.len() == m);
    let mut params = BTreeMap::new();
    params.insert("m".into(), m as f64);
    params.insert("seed".into(), seed as f64);
    params.insert("weight".into(), total / m as f64);
    Ok(Coreset {
        points,
        source_size: n,
        builder: BuilderKind::Uniform,
        params,
    })
}

/// `⌈c/δ² · (vcdim + ln(1/η))⌉`, at least 1.
pub fn delta_sample_size(delta: f64, vcdim: f64, eta: f64, c: f64) -> Result<usize> {
    if !(delta > 0.0 && delta < 1.0) || !(eta > 0.0 && eta <= 1.0) || !(vcdim >= 0.0) || !(c > 0.0) {
        return Err(CoresetError::InvalidParameter(format!(
            "delta sample size needs 0<δ<1, 0<η≤1, vcdim≥0, c>0 (got δ={delta}, η={eta}, vcdim={vcdim}, c={c})"
        )));
    }
    let raw = c / (delta * delta) * (vcdim + (1.0 / eta).ln());
    Ok((ceil_guarded(raw) as usize).max(1))
}

/// `m` i.i.d. draws with probability `s_i/S`; a drawn point gets `w_i · S/(s_i m)`. Repeated
/// draws stay as separate entries.
pub fn importance_sample(
    data: &WeightedDataset,
    profile: &SensitivityProfile,
    m: usize,
    seed: u64,
) -> Result<Coreset> {
    let pts = data.points();
    if profile.s.len() != pts.len() || profile.ids.iter().zip(pts).any(|(id, p)| *id != p.id) {
        return Err(CoresetError::InvalidParameter(
            "sensitivity profile does not cover the dataset".into(),
        ));
    }
    if m == 0 {
        return Err(CoresetError::InvalidParameter("importance sample size must be ≥ 1".into()));
    }
    let dist = WeightedIndex::new(profile.s.iter().copied())
        .map_err(|e| CoresetError::DegenerateSample(e.to_string()))?;
    let mut r = rng(seed);
    let scale = profile.total / m as f64;
    let points = (0..m)
        .map(|_| {
            let i = dist.sample(&mut r);
            pts[i].with_weight(pts[i].weight * scale / profile.s[i])
        })
        .collect();
    let mut params = BTreeMap::new();
    params.insert("m".into(), m as f64);
    params.insert("seed".into(), seed as f64);
    params.insert("S".into(), profile.total);
    Ok(Coreset {
        points,
        source_size: pts.len(),
        builder: BuilderKind::Importance,
        params,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GspLayer {
    pub index: usize,
    pub ids: Vec<u64>,
    /// Positions of the members in the dataset's point order.
    pub positions: Vec<usize>,
}

/// Partition of a dataset into dyadic cost ranges around the pilot parameter. Layer 0 holds
/// `cost − ϱ < T`; layer `j ≥ 1` holds `⌊log₂((cost − ϱ)/T)⌋ = j`, i.e. `cost − ϱ ∈ [2^j T, 2^{j+1} T)`.
/// Empty layers are omitted and indices are not renumbered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GspLayering {
    pub rho: f64,
    pub t: f64,
    pub layers: Vec<GspLayer>,
    /// Number of nonempty layers.
    pub l: usize,
}

impl GspLayering {
    pub fn layer_of(&self, rho_gap: f64) -> usize {
        layer_index(rho_gap, self.t)
    }
}

fn layer_index(gap: f64, t: f64) -> usize {
    if !(t > 0.0) || gap < t {
        return 0;
    }
    let ratio = gap / t;
    let mut j = ratio.log2().floor() as i64;
    // log2 rounding can land one off near exact powers of two.
    if (2f64).powi(j as i32 + 1) <= ratio {
        j += 1;
    }
    if (2f64).powi(j as i32) > ratio {
        j -= 1;
    }
    j.max(0) as usize
}

pub fn gsp_layering(model: &LossModel, data: &WeightedDataset, ball: &ParamBall) -> Result<GspLayering> {
    model.check_theta(&ball.center)?;
    model.check_dataset(data)?;
    let costs: Vec<f64> = data.points().iter().map(|p| model.cost(&ball.center, p)).collect();
    Ok(layering_from_costs(data.points(), &costs))
}

pub(crate) fn layering_from_costs(points: &[WeightedPoint], costs: &[f64]) -> GspLayering {
    let rho = costs.iter().copied().fold(f64::INFINITY, f64::min);
    let total = pairwise_sum(&points.iter().zip(costs).map(|(p, c)| p.weight * c).collect::<Vec<_>>());
    let t = total / total_weight_of(points);
    let mut by_layer: BTreeMap<usize, GspLayer> = BTreeMap::new();
    for (i, (p, &c)) in points.iter().zip(costs).enumerate() {
        let j = layer_index(c - rho, t);
        let layer = by_layer.entry(j).or_insert_with(|| GspLayer {
            index: j,
            ids: Vec::new(),
            positions: Vec::new(),
        });
        layer.ids.push(p.id);
        layer.positions.push(i);
    }
    let layers: Vec<GspLayer> = by_layer.into_values().collect();
    GspLayering {
        rho,
        t,
        l: layers.len(),
        layers,
    }
}

/// Samples `min(m, |X_j|)` points from every layer, each weighted `⟦X_j⟧/|C_j|`.
pub fn gsp_build(
    model: &LossModel,
    data: &WeightedDataset,
    ball: &ParamBall,
    m: usize,
    seed: u64,
) -> Result<Coreset> {
    let layering = gsp_layering(model, data, ball)?;
    gsp_build_from_layering(data.points(), &layering, &|_| m, seed)
}

/// GSP sampling with a per-layer size rule on a precomputed layering.
pub fn gsp_build_from_layering(
    points: &[WeightedPoint],
    layering: &GspLayering,
    size_of_layer: &dyn Fn(usize) -> usize,
    seed: u64,
) -> Result<Coreset> {
    let mut out = Vec::new();
    let mut params = BTreeMap::new();
    for layer in &layering.layers {
        let m = size_of_layer(layer.index);
        if m == 0 {
            return Err(CoresetError::InvalidParameter(format!(
                "layer {} needs a sample size ≥ 1",
                layer.index
            )));
        }
        let members: Vec<&WeightedPoint> = layer.positions.iter().map(|&i| &points[i]).collect();
        let mut r = rng(derive_seed(seed, layer.index as u64));
        out.extend(sample_preserving_weight(&members, m, &mut r)?);
        params.insert(format!("m_{}", layer.index), m.min(members.len()) as f64);
    }
    params.insert("rho".into(), layering.rho);
    params.insert("T".into(), layering.t);
    params.insert("L".into(), layering.l as f64);
    params.insert("seed".into(), seed as f64);
    Ok(Coreset {
        points: out,
        source_size: points.len(),
        builder: BuilderKind::Gsp,
        params,
    })
}

/// How many points a black-box build may keep at accuracy `ε`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum SizeRule {
    Fixed { m: usize },
    /// `clamp(⌈c/ε²⌉, min, max)`.
    InverseSquare { c: f64, min: usize, max: usize },
}

impl SizeRule {
    pub fn size(&self, eps: f64) -> usize {
        match *self {
            SizeRule::Fixed { m } => m.max(1),
            SizeRule::InverseSquare { c, min, max } => {
                let raw = ceil_guarded(c / (eps * eps));
                (raw.min(usize::MAX as f64) as usize).clamp(min.max(1), max.max(min.max(1)))
            }
        }
    }
}

/// A pure (given its seed) ordinary coreset builder used inside the robust constructions.
/// For GSP the size applies per layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlackBox {
    pub kind: BuilderKind,
    pub size: SizeRule,
}

impl BlackBox {
    pub fn new(kind: BuilderKind, size: SizeRule) -> Self {
        BlackBox { kind, size }
    }

    pub fn build(
        &self,
        model: &LossModel,
        points: &[WeightedPoint],
        ball: &ParamBall,
        eps: f64,
        seed: u64,
    ) -> Result<Coreset> {
        let m = self.size.size(eps);
        let n = points.len();
        let with_meta = |mut c: Coreset| {
            c.source_size = n;
            c.params.insert("eps".into(), eps);
            c
        };
        if n <= m || self.kind == BuilderKind::Identity || total_weight_of(points) <= 0.0 {
            return Ok(with_meta(Coreset::identity(points.to_vec())));
        }
        let data = WeightedDataset::new(points.to_vec())?;
        match self.kind {
            BuilderKind::Uniform => {
                let refs: Vec<&WeightedPoint> = data.points().iter().collect();
                let pts = sample_preserving_weight(&refs, m, &mut rng(seed))?;
                let mut params = BTreeMap::new();
                params.insert("m".into(), m as f64);
                Ok(with_meta(Coreset {
                    points: pts,
                    source_size: n,
                    builder: BuilderKind::Uniform,
                    params,
                }))
            }
            BuilderKind::Importance => {
                let profile = match sensitivity_lipschitz(model, &data, ball) {
                    Ok(p) => p,
                    Err(CoresetError::NonPositiveDenominator { value }) => {
                        warn!("sensitivity denominator {value} ≤ 0 on a subset; sampling by weight");
                        let s: Vec<f64> = data.points().iter().map(|p| p.weight.max(1e-300)).collect();
                        SensitivityProfile {
                            ids: data.points().iter().map(|p| p.id).collect(),
                            total: pairwise_sum(&s),
                            s,
                            method: crate::sensitivity::SensitivityMethod::LipschitzClosedForm,
                        }
                    }
                    Err(e) => return Err(e),
                };
                importance_sample(&data, &profile, m, seed).map(with_meta)
            }
            BuilderKind::Gsp => gsp_build(model, &data, ball, m, seed).map(with_meta),
            BuilderKind::Identity => unreachable!(),
        }
    }
}
