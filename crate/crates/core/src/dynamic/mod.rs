//! Fully-dynamic robust coreset: a sorted cost table splits live points at the pilot parameter;
//! the suspected outliers are kept raw and the suspected inliers live in a merge-and-reduce tree.

pub mod table;
pub mod tree;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::builders::{BlackBox, Coreset};
use crate::data::{ParamBall, WeightedDataset, WeightedPoint};
use crate::error::{CoresetError, Result};
use crate::loss::LossModel;
use crate::objective::pairwise_sum;
use crate::robust::{
    compute_eps0, outlier_part, require_unit_weights, z_tilde, RobustCoreset, RobustParams, RobustProvenance,
};

pub use table::{AuxTable, Placement, Removal};
pub use tree::{budget_height, FlushStats, MnrTree};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicConfig {
    pub params: RobustParams,
    pub blackbox: BlackBox,
    /// Leaf capacity `B`.
    pub bucket_size: usize,
    /// Capacity budget `n̄` fixing the per-level accuracy; defaults to twice the initial size.
    pub capacity: Option<usize>,
    pub seed: u64,
}

/// Work done by the last operation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpStats {
    /// Tree nodes re-reduced.
    pub touched_nodes: usize,
    /// Raw points fed to leaf reductions.
    pub raw_points_touched: usize,
    /// Live tree height when the operation finished.
    pub height: usize,
    /// Points moved between the tree and the outlier pool.
    pub migrated: usize,
}

/// One entry of an operation log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Op {
    Insert { point: WeightedPoint },
    Delete { id: u64 },
    Update { point: WeightedPoint },
    Changez { dz: i64 },
}

#[derive(Debug, Clone)]
pub struct DynamicRobustCoreset {
    model: LossModel,
    ball: ParamBall,
    config: DynamicConfig,
    eps0: f64,
    eps0_fallback: bool,
    f_lower: Option<f64>,
    z: f64,
    height_budget: usize,
    points: HashMap<u64, WeightedPoint>,
    values: HashMap<u64, f64>,
    table: AuxTable,
    tree: MnrTree,
    last: OpStats,
}

impl DynamicRobustCoreset {
    pub fn init(model: LossModel, data: &WeightedDataset, ball: ParamBall, config: DynamicConfig) -> Result<Self> {
        config.params.validate()?;
        if config.bucket_size == 0 {
            return Err(CoresetError::InvalidParameter("bucket size must be ≥ 1".into()));
        }
        model.check_theta(&ball.center)?;
        model.check_dataset(data)?;
        require_unit_weights(data)?;
        let n = data.len();
        if config.params.z >= n as f64 {
            return Err(CoresetError::TrimTooLarge { z: config.params.z, total: n as f64 });
        }
        let (eps0, fallback, f_lower) = match config.params.eps0_override {
            Some(e) => (e, false, config.params.fz_lower),
            None => {
                let c = compute_eps0(&model, data, &ball, config.params.z, config.params.eps, config.params.fz_lower)?;
                (c.eps0, c.fallback, c.f_lower)
            }
        };
        let capacity = config.capacity.unwrap_or(2 * n).max(1);
        let height_budget = budget_height(capacity, config.bucket_size);
        let eps_level = config.params.eps / (4.0 * height_budget as f64);
        let mut tree = MnrTree::new(config.bucket_size, height_budget, eps_level, config.seed);
        let mut table = AuxTable::new(z_tilde(config.params.z, eps0, usize::MAX));
        let mut points = HashMap::with_capacity(n);
        let mut values = HashMap::with_capacity(n);
        for p in data.points() {
            if points.contains_key(&p.id) {
                return Err(CoresetError::DuplicateId(p.id));
            }
            let v = model.cost(&ball.center, p);
            values.insert(p.id, v);
            points.insert(p.id, p.clone());
            table.insert(p.id, v);
        }
        let mut inliers: Vec<u64> = table.inlier_ids().collect();
        inliers.sort_unstable();
        for id in inliers {
            tree.insert(id);
        }
        let mut s = DynamicRobustCoreset {
            z: config.params.z,
            model,
            ball,
            config,
            eps0,
            eps0_fallback: fallback,
            f_lower,
            height_budget,
            points,
            values,
            table,
            tree,
            last: OpStats::default(),
        };
        s.finish(0)?;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn eps0(&self) -> f64 {
        self.eps0
    }

    pub fn z_tilde(&self) -> usize {
        self.table.z_tilde()
    }

    /// Height of the capacity budget; per-level accuracy is `ε/(4·h)` with this `h`.
    pub fn height_budget(&self) -> usize {
        self.height_budget
    }

    pub fn height(&self) -> usize {
        self.tree.height()
    }

    pub fn last_op(&self) -> OpStats {
        self.last
    }

    pub fn tree(&self) -> &MnrTree {
        &self.tree
    }

    pub fn table(&self) -> &AuxTable {
        &self.table
    }

    pub fn model(&self) -> &LossModel {
        &self.model
    }

    pub fn ball(&self) -> &ParamBall {
        &self.ball
    }

    pub fn config(&self) -> &DynamicConfig {
        &self.config
    }

    pub fn point(&self, id: u64) -> Option<&WeightedPoint> {
        self.points.get(&id)
    }

    /// The live dataset.
    pub fn dataset(&self) -> Result<WeightedDataset> {
        WeightedDataset::new(self.points.values().cloned().collect())
    }

    pub fn outlier_ids(&self) -> Vec<u64> {
        self.table.outlier_ids().collect()
    }

    fn finish(&mut self, migrated: usize) -> Result<()> {
        let stats = self.tree.flush(&self.model, &self.ball, &self.config.blackbox, &self.points)?;
        self.last = OpStats {
            touched_nodes: stats.nodes,
            raw_points_touched: stats.raw_points,
            height: self.tree.height(),
            migrated,
        };
        Ok(())
    }

    fn validate_new(&self, p: &WeightedPoint) -> Result<()> {
        self.model.check_point(p)?;
        if p.weight != 1.0 {
            return Err(CoresetError::InvalidWeight { id: p.id, weight: p.weight });
        }
        if p.features.iter().any(|v| !v.is_finite()) {
            return Err(CoresetError::Malformed(format!("non-finite feature in point {}", p.id)));
        }
        Ok(())
    }

    fn insert_unflushed(&mut self, p: WeightedPoint) -> usize {
        let id = p.id;
        let v = self.model.cost(&self.ball.center, &p);
        self.values.insert(id, v);
        self.points.insert(id, p);
        match self.table.insert(id, v) {
            Placement::Inlier => {
                self.tree.insert(id);
                0
            }
            Placement::Outlier { demoted: Some(d) } => {
                self.tree.insert(d);
                1
            }
            Placement::Outlier { demoted: None } => 0,
        }
    }

    fn delete_unflushed(&mut self, id: u64) -> usize {
        let v = self.values.remove(&id).expect("checked by caller");
        self.points.remove(&id);
        let r = self.table.remove(id, v).expect("table holds every live id");
        if r.was_outlier {
            if let Some(pid) = r.promoted {
                self.tree.remove(pid);
                return 1;
            }
            0
        } else {
            self.tree.remove(id);
            0
        }
    }

    pub fn insert(&mut self, p: WeightedPoint) -> Result<()> {
        if self.points.contains_key(&p.id) {
            return Err(CoresetError::DuplicateId(p.id));
        }
        self.validate_new(&p)?;
        let migrated = self.insert_unflushed(p);
        self.finish(migrated)
    }

    pub fn delete(&mut self, id: u64) -> Result<()> {
        if !self.points.contains_key(&id) {
            return Err(CoresetError::UnknownId(id));
        }
        if self.points.len() == 1 {
            return Err(CoresetError::InvalidParameter("cannot delete the last point".into()));
        }
        let migrated = self.delete_unflushed(id);
        self.finish(migrated)
    }

    /// Replaces a point; either both halves apply or neither does.
    pub fn update(&mut self, p: WeightedPoint) -> Result<()> {
        if !self.points.contains_key(&p.id) {
            return Err(CoresetError::UnknownId(p.id));
        }
        self.validate_new(&p)?;
        let m1 = self.delete_unflushed(p.id);
        let m2 = self.insert_unflushed(p);
        self.finish(m1 + m2)
    }

    /// Shifts the outlier count by `dz`; `z̃` is recomputed with the frozen `ε₀` and the points
    /// between the old and new thresholds migrate.
    pub fn change_z(&mut self, dz: i64) -> Result<()> {
        let z_new = self.z + dz as f64;
        if !(z_new >= 1.0) {
            return Err(CoresetError::InvalidParameter(format!("z + dz must be ≥ 1, got {z_new}")));
        }
        if dz == 0 {
            self.last = OpStats { height: self.tree.height(), ..Default::default() };
            return Ok(());
        }
        self.z = z_new;
        let (promoted, demoted) = self.table.set_z_tilde(z_tilde(z_new, self.eps0, usize::MAX));
        for id in &promoted {
            self.tree.remove(*id);
        }
        for id in &demoted {
            self.tree.insert(*id);
        }
        self.finish(promoted.len() + demoted.len())
    }

    pub fn apply(&mut self, op: &Op) -> Result<()> {
        match op {
            Op::Insert { point } => self.insert(point.clone()),
            Op::Delete { id } => self.delete(*id),
            Op::Update { point } => self.update(point.clone()),
            Op::Changez { dz } => self.change_z(*dz),
        }
    }

    /// The current robust coreset: the root summary of the tree plus the outlier pool (or its
    /// δ-sample, drawn from a seed keyed by the pool's membership).
    pub fn query(&self) -> Result<RobustCoreset> {
        let p = &self.config.params;
        let mut c_si = Coreset::identity(self.tree.root().to_vec());
        c_si.builder = self.config.blackbox.kind;
        c_si.source_size = self.tree.len();
        let pool: Vec<WeightedPoint> = self.table.outlier_ids().map(|id| self.points[&id].clone()).collect();
        let vcdim = p.vcdim.unwrap_or(self.model.vcdim_hint() as f64);
        let (c_so, delta) = outlier_part(&pool, p, self.eps0, vcdim, self.config.seed)?;
        let tau = self.table.critical().map_or(0.0, |c| c.0);
        let provenance = RobustProvenance {
            eps0: self.eps0,
            eps0_fallback: self.eps0_fallback,
            f_lower: self.f_lower,
            eps1: p.eps / 4.0,
            z_tilde: self.table.outlier_count(),
            tau,
            delta,
            so_sample_size: c_so.len(),
            degenerate: self.table.z_tilde() >= self.points.len(),
            markov_lhs: tau * self.z,
            markov_rhs: self.eps0 * self.pilot_trimmed_cost(),
            builder: self.config.blackbox.kind,
            seed: self.config.seed,
            source_size: self.points.len(),
        };
        Ok(RobustCoreset {
            c_si,
            c_so,
            beta: p.beta,
            eps: p.eps,
            z: self.z,
            provenance,
        })
    }

    /// `f_z(θ̃, X)` from the stored table values.
    fn pilot_trimmed_cost(&self) -> f64 {
        let mut entries: Vec<(f64, u64)> = self.table.entries().collect();
        entries.reverse();
        let mut remaining = self.z;
        let terms: Vec<f64> = entries
            .iter()
            .map(|&(v, _)| {
                let take = remaining.clamp(0.0, 1.0);
                remaining -= take;
                (1.0 - take) * v
            })
            .collect();
        pairwise_sum(&terms)
    }

    /// Re-derives `ε₀` from the live data and rebuilds every structure.
    pub fn rebuild(&mut self) -> Result<()> {
        let data = self.dataset()?;
        let mut config = self.config.clone();
        config.params.z = self.z;
        config.params.eps0_override = None;
        *self = DynamicRobustCoreset::init(self.model, &data, self.ball.clone(), config)?;
        Ok(())
    }

    /// Full consistency check: table order and size, pool/tree membership, leaf bookkeeping and
    /// weight conservation through the tree.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        self.table.check()?;
        self.tree.check()?;
        if self.table.len() != self.points.len() || self.values.len() != self.points.len() {
            return Err("table and point store disagree".into());
        }
        if self.table.outlier_count() != self.table.z_tilde().min(self.points.len()) {
            return Err("outlier pool has the wrong size".into());
        }
        for id in self.table.outlier_ids() {
            if self.tree.contains(id) {
                return Err(format!("suspected outlier {id} is in the tree"));
            }
        }
        for id in self.table.inlier_ids() {
            if !self.tree.contains(id) {
                return Err(format!("suspected inlier {id} missing from the tree"));
            }
        }
        if self.tree.len() + self.table.outlier_count() != self.points.len() {
            return Err("tree and pool do not partition the points".into());
        }
        let root_weight = pairwise_sum(&self.tree.root().iter().map(|p| p.weight).collect::<Vec<_>>());
        let n_si = self.tree.len() as f64;
        if (root_weight - n_si).abs() > 1e-9 * n_si.max(1.0) {
            return Err(format!("root weight {root_weight} differs from {n_si} inliers"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builders::{BuilderKind, SizeRule};
    use crate::data::ContinuityKind;
    use crate::robust::build_robust;

    fn data(n: usize) -> WeightedDataset {
        let pts = (0..n)
            .map(|i| {
                let t = i as f64;
                let far = if i % 40 == 0 { 50.0 } else { 0.0 };
                WeightedPoint::new(i as u64, vec![(t * 0.37).sin() + far, (t * 0.11).cos()], 1.0)
            })
            .collect();
        WeightedDataset::new(pts).unwrap()
    }

    fn setup(n: usize, bucket: usize, capacity: Option<usize>) -> (LossModel, WeightedDataset, ParamBall, DynamicConfig) {
        let ball = ParamBall::new(vec![0.0, 0.0], 0.1, ContinuityKind::Lipschitz { alpha: 1.0 }).unwrap();
        let mut params = RobustParams::new(2.0, 0.0, 0.3);
        params.eps0_override = Some(0.25);
        let config = DynamicConfig {
            params,
            blackbox: BlackBox::new(BuilderKind::Gsp, SizeRule::Fixed { m: 16 }),
            bucket_size: bucket,
            capacity,
            seed: 3,
        };
        (LossModel::kmedian(1, 2), data(n), ball, config)
    }

    #[test]
    fn single_leaf_matches_static_build() {
        let (m, d, ball, cfg) = setup(64, 64, Some(64));
        let dy = DynamicRobustCoreset::init(m, &d, ball.clone(), cfg.clone()).unwrap();
        assert_eq!(dy.height(), 1);
        dy.check_invariants().unwrap();
        let q = dy.query().unwrap();
        let s = build_robust(&m, &d, &ball, &cfg.params, &cfg.blackbox, cfg.seed).unwrap();
        let sort = |mut v: Vec<WeightedPoint>| {
            v.sort_by_key(|p| p.id);
            v
        };
        assert_eq!(sort(q.c_si.points.clone()), sort(s.c_si.points.clone()));
        assert_eq!(q.c_so.points, s.c_so.points);
        assert_eq!(q.provenance.z_tilde, s.provenance.z_tilde);
    }

    #[test]
    fn example_height() {
        let (m, d, ball, cfg) = setup(1024, 64, Some(1024));
        let dy = DynamicRobustCoreset::init(m, &d, ball, cfg).unwrap();
        assert_eq!(dy.height_budget(), 5);
        assert_eq!(dy.height(), 5);
    }

    #[test]
    fn operations_keep_invariants() {
        let (m, d, ball, cfg) = setup(300, 16, None);
        let mut dy = DynamicRobustCoreset::init(m, &d, ball, cfg).unwrap();
        dy.check_invariants().unwrap();
        let zt = dy.z_tilde();
        assert_eq!(zt, 10);

        // below the pointer: tree grows
        let before = dy.tree().len();
        dy.insert(WeightedPoint::new(1000, vec![0.1, 0.1], 1.0)).unwrap();
        assert_eq!(dy.tree().len(), before + 1);
        dy.check_invariants().unwrap();

        // above the pointer: pool keeps its size, boundary point demoted
        let before = dy.tree().len();
        dy.insert(WeightedPoint::new(1001, vec![500.0, 0.0], 1.0)).unwrap();
        assert_eq!(dy.table().outlier_count(), zt);
        assert_eq!(dy.tree().len(), before + 1);
        assert!(dy.outlier_ids().contains(&1001));
        dy.check_invariants().unwrap();

        // delete an outlier: promotion
        let before = dy.tree().len();
        dy.delete(1001).unwrap();
        assert_eq!(dy.tree().len(), before - 1);
        assert_eq!(dy.table().outlier_count(), zt);
        dy.check_invariants().unwrap();

        // delete an inlier
        let pool: Vec<u64> = dy.outlier_ids();
        dy.delete(5).unwrap();
        assert_eq!(dy.outlier_ids(), pool);
        dy.check_invariants().unwrap();

        assert!(matches!(dy.delete(5), Err(CoresetError::UnknownId(5))));
        assert!(matches!(
            dy.insert(WeightedPoint::new(1, vec![0.0, 0.0], 1.0)),
            Err(CoresetError::DuplicateId(1))
        ));

        // update crossing upward
        dy.update(WeightedPoint::new(7, vec![400.0, 0.0], 1.0)).unwrap();
        assert!(dy.outlier_ids().contains(&7));
        dy.check_invariants().unwrap();
        assert!(dy.update(WeightedPoint::new(99999, vec![0.0, 0.0], 1.0)).is_err());
        let bad = WeightedPoint::new(8, vec![0.0], 1.0);
        assert!(dy.update(bad).is_err());
        assert!(dy.point(8).is_some());
        dy.check_invariants().unwrap();
    }

    #[test]
    fn change_z_round_trip() {
        let (m, d, ball, cfg) = setup(300, 16, None);
        let mut dy = DynamicRobustCoreset::init(m, &d, ball, cfg).unwrap();
        let pool = dy.outlier_ids();
        dy.change_z(1).unwrap();
        // ε₀ = 0.25: z̃ goes from 10 to 15
        assert_eq!(dy.last_op().migrated, 5);
        dy.check_invariants().unwrap();
        dy.change_z(-1).unwrap();
        assert_eq!(dy.outlier_ids(), pool);
        dy.check_invariants().unwrap();
        dy.change_z(0).unwrap();
        assert!(dy.change_z(-2).is_err());
    }

    #[test]
    fn touched_nodes_are_logarithmic() {
        let (m, d, ball, cfg) = setup(600, 8, None);
        let mut dy = DynamicRobustCoreset::init(m, &d, ball, cfg).unwrap();
        let h = dy.height();
        for i in 0..50u64 {
            dy.insert(WeightedPoint::new(5000 + i, vec![0.01 * i as f64, 0.0], 1.0)).unwrap();
            assert!(dy.last_op().touched_nodes <= 2 * dy.height());
            dy.delete(i * 3 + 1).unwrap();
            assert!(dy.last_op().touched_nodes <= 4 * h.max(dy.height()));
        }
        dy.check_invariants().unwrap();
    }
}
