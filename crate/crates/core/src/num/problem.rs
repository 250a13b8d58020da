//! Linear-constraint layout of the utility maximization.
//!
//! Every architecture is lowered onto the same shape: a vector `z >= 0`
//! holding activity fractions, RB-partition fractions and (for the mixed
//! architecture) per-BS cellular shares, a set of rows `g·z <= h`, and a
//! proportional-fair objective `Σ_k log(Σ_i r_i z_i)` over each user's
//! activity variables.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rates::{Cluster, ClusterCatalog};
use crate::topology::{Budgets, BsId, UserId};

/// A slice of the RBs dedicated to one cluster size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub size: usize,
    /// Partitions in the same group share one RB budget.
    pub group: usize,
    /// Fraction pinned by construction instead of optimized.
    pub fixed: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Clustered,
    Cellular,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Var {
    Activity { user: UserId, cluster: Cluster, partition: usize, rate: f64 },
    Lambda { partition: usize },
    /// Fraction of the partition's RBs on which a BS runs in cellular mode.
    CellularShare { bs: BsId, partition: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowKind {
    BsLoad { bs: BsId, partition: usize, mode: Mode },
    UserCap { user: UserId, partition: usize },
    GroupBudget { group: usize },
    ShareCap { bs: BsId, partition: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub kind: RowKind,
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl Row {
    pub fn eval(&self, z: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(i, c)| c * z[i]).sum()
    }

    pub fn slack(&self, z: &[f64]) -> f64 {
        self.rhs - self.eval(z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    /// Uniform cluster size per RB, partitions for `L = 1..=L_max`.
    Ucs,
    /// Cellular-only problem without partition variables.
    Cellular,
    /// Mixed cluster size: partitions for `L >= 2`, each BS splits between modes.
    Mcs { shares: ShareMode },
    /// Macros cellular on a `rho` fraction, picos clustered on the rest.
    OrthogonalSplit { rho: f64 },
}

/// Which MCS modes are available inside each partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShareMode {
    Free,
    /// `y_jL = 0`: clustered service only.
    Clustered,
    /// `y_jL = lambda_L`: cellular service only.
    Cellular,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumProblem {
    pub architecture: Architecture,
    pub partitions: Vec<Partition>,
    pub group_budgets: Vec<f64>,
    pub vars: Vec<Var>,
    pub rows: Vec<Row>,
    /// `(user, [(var, rate)])` for every user in the objective.
    pub objective: Vec<(UserId, Vec<(usize, f64)>)>,
    pub users: usize,
    /// Users left out of the objective for lack of a positive-rate candidate.
    pub orphans: Vec<UserId>,
}

struct Builder<'a> {
    budgets: &'a Budgets,
    partitions: Vec<Partition>,
    group_budgets: Vec<f64>,
    vars: Vec<Var>,
    lambda_var: Vec<Option<usize>>,
    rows: Vec<Row>,
}

impl<'a> Builder<'a> {
    fn new(budgets: &'a Budgets) -> Self {
        Self { budgets, partitions: vec![], group_budgets: vec![], vars: vec![], lambda_var: vec![], rows: vec![] }
    }

    fn partition(&mut self, size: usize, group: usize, fixed: Option<f64>) -> usize {
        let p = self.partitions.len();
        self.partitions.push(Partition { size, group, fixed });
        let var = fixed.is_none().then(|| {
            self.vars.push(Var::Lambda { partition: p });
            self.vars.len() - 1
        });
        self.lambda_var.push(var);
        p
    }

    /// Adds `coeffs + scale * lambda_p <= 0` with a pinned lambda moved to the rhs.
    fn row_with_lambda(&mut self, kind: RowKind, mut coeffs: Vec<(usize, f64)>, p: usize, scale: f64) {
        let rhs = match (self.lambda_var[p], self.partitions[p].fixed) {
            (Some(v), _) => {
                coeffs.push((v, scale));
                0.0
            }
            (None, Some(f)) => -scale * f,
            (None, None) => unreachable!(),
        };
        self.rows.push(Row { kind, coeffs, rhs });
    }

    fn activities(&mut self, catalog: &ClusterCatalog, p: usize, keep: impl Fn(&Cluster) -> bool) {
        for e in &catalog.entries {
            if e.rate > 0.0 && keep(&e.cluster) {
                self.vars.push(Var::Activity { user: e.user, cluster: e.cluster.clone(), partition: p, rate: e.rate });
            }
        }
    }

    fn act_vars(&self, p: usize) -> impl Iterator<Item = (usize, UserId, &Cluster)> + '_ {
        self.vars.iter().enumerate().filter_map(move |(i, v)| match v {
            Var::Activity { user, cluster, partition, .. } if *partition == p => Some((i, *user, cluster)),
            _ => None,
        })
    }

    /// Per-BS load rows for the activities in partition `p` whose cluster size is `size`.
    fn load_rows(&mut self, p: usize, size: usize, mode: Mode, share: Option<&[Option<usize>]>) -> Result<()> {
        let mut per_bs: std::collections::BTreeMap<BsId, Vec<(usize, f64)>> = Default::default();
        for (i, _, c) in self.act_vars(p).filter(|(_, _, c)| c.size() == size) {
            for &j in c.members() {
                per_bs.entry(j).or_default().push((i, 1.0));
            }
        }
        for (j, mut coeffs) in per_bs {
            let s = self.budgets.get(j, size)? as f64;
            let kind = RowKind::BsLoad { bs: j, partition: p, mode };
            match (mode, share.and_then(|y| y[j])) {
                // Σx <= S_L (lambda - y)
                (Mode::Clustered, Some(y)) => {
                    coeffs.push((y, s));
                    self.row_with_lambda(kind, coeffs, p, -s);
                }
                // Σx <= S_1 y
                (Mode::Cellular, Some(y)) => {
                    coeffs.push((y, -s));
                    self.rows.push(Row { kind, coeffs, rhs: 0.0 });
                }
                _ => self.row_with_lambda(kind, coeffs, p, -s),
            }
        }
        Ok(())
    }

    fn user_rows(&mut self, p: usize) {
        let mut per_user: std::collections::BTreeMap<UserId, Vec<(usize, f64)>> = Default::default();
        for (i, k, _) in self.act_vars(p) {
            per_user.entry(k).or_default().push((i, 1.0));
        }
        for (k, coeffs) in per_user {
            self.row_with_lambda(RowKind::UserCap { user: k, partition: p }, coeffs, p, -1.0);
        }
    }

    fn group_rows(&mut self) {
        for (g, &budget) in self.group_budgets.iter().enumerate() {
            let coeffs: Vec<_> = (0..self.partitions.len())
                .filter(|&p| self.partitions[p].group == g)
                .filter_map(|p| self.lambda_var[p].map(|v| (v, 1.0)))
                .collect();
            if !coeffs.is_empty() {
                self.rows.push(Row { kind: RowKind::GroupBudget { group: g }, coeffs, rhs: budget });
            }
        }
    }

    fn finish(self, architecture: Architecture, users: usize) -> Result<NumProblem> {
        let mut terms: Vec<Vec<(usize, f64)>> = vec![vec![]; users];
        for (i, v) in self.vars.iter().enumerate() {
            if let Var::Activity { user, rate, .. } = v {
                terms[*user].push((i, *rate));
            }
        }
        let orphans: Vec<UserId> = (0..users).filter(|&k| terms[k].is_empty()).collect();
        if !orphans.is_empty() {
            log::warn!("{} user(s) without a positive-rate candidate left out of the objective: {orphans:?}", orphans.len());
        }
        let objective: Vec<_> = terms.into_iter().enumerate().filter(|(_, t)| !t.is_empty()).collect();
        if objective.is_empty() {
            return Err(Error::OrphanUsers(orphans));
        }
        Ok(NumProblem {
            architecture,
            partitions: self.partitions,
            group_budgets: self.group_budgets,
            vars: self.vars,
            rows: self.rows,
            objective,
            users,
            orphans,
        })
    }
}

impl NumProblem {
    /// Uniform cluster-size architecture over every size in the catalog.
    pub fn ucs(catalog: &ClusterCatalog, budgets: &Budgets) -> Result<Self> {
        let mut b = Builder::new(budgets);
        b.group_budgets.push(1.0);
        for size in 1..=catalog.l_max {
            let p = b.partition(size, 0, None);
            b.activities(catalog, p, |c| c.size() == size);
            b.load_rows(p, size, Mode::Clustered, None)?;
            b.user_rows(p);
        }
        b.group_rows();
        b.finish(Architecture::Ucs, catalog.users)
    }

    /// Cellular-only problem: `Σ_k x_kj <= S_j(1)`, `Σ_j x_kj <= 1`.
    pub fn cellular(catalog: &ClusterCatalog, budgets: &Budgets) -> Result<Self> {
        let mut b = Builder::new(budgets);
        b.group_budgets.push(1.0);
        let p = b.partition(1, 0, Some(1.0));
        b.activities(catalog, p, |c| c.size() == 1);
        b.load_rows(p, 1, Mode::Cellular, None)?;
        b.user_rows(p);
        b.finish(Architecture::Cellular, catalog.users)
    }

    /// Mixed cluster-size architecture with per-BS mode shares `y_jL`.
    pub fn mcs(catalog: &ClusterCatalog, budgets: &Budgets, shares: ShareMode) -> Result<Self> {
        if catalog.l_max < 2 {
            return Err(Error::Config("mixed cluster sizes need l_max >= 2".into()));
        }
        let mut b = Builder::new(budgets);
        b.group_budgets.push(1.0);
        for size in 2..=catalog.l_max {
            let p = b.partition(size, 0, None);
            if shares != ShareMode::Cellular {
                b.activities(catalog, p, |c| c.size() == size);
            }
            if shares != ShareMode::Clustered {
                b.activities(catalog, p, |c| c.size() == 1);
            }
            let y: Option<Vec<Option<usize>>> = (shares == ShareMode::Free).then(|| {
                (0..budgets.bss())
                    .map(|j| {
                        b.vars.push(Var::CellularShare { bs: j, partition: p });
                        Some(b.vars.len() - 1)
                    })
                    .collect()
            });
            if let Some(y) = &y {
                for (j, v) in y.iter().enumerate() {
                    let v = v.expect("share var");
                    b.row_with_lambda(RowKind::ShareCap { bs: j, partition: p }, vec![(v, 1.0)], p, -1.0);
                }
            }
            b.load_rows(p, size, Mode::Clustered, y.as_deref())?;
            b.load_rows(p, 1, Mode::Cellular, y.as_deref())?;
            b.user_rows(p);
        }
        b.group_rows();
        b.finish(Architecture::Mcs { shares }, catalog.users)
    }

    /// Macros serve cellular users on `rho` of the RBs; picos run the
    /// uniform-size architecture on the remaining `1 - rho`. Each catalog
    /// must already exclude the other tier's interference.
    pub fn orthogonal_split(macro_catalog: &ClusterCatalog, pico_catalog: &ClusterCatalog, budgets: &Budgets, rho: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&rho) {
            return Err(Error::Config(format!("rho must lie in [0, 1], got {rho}")));
        }
        if macro_catalog.users != pico_catalog.users {
            return Err(Error::Config("tier catalogs cover different user sets".into()));
        }
        let mut b = Builder::new(budgets);
        b.group_budgets = vec![rho, 1.0 - rho];
        if rho > 0.0 {
            let p = b.partition(1, 0, None);
            b.activities(macro_catalog, p, |c| c.size() == 1);
            b.load_rows(p, 1, Mode::Clustered, None)?;
            b.user_rows(p);
        }
        if rho < 1.0 {
            for size in 1..=pico_catalog.l_max {
                let p = b.partition(size, 1, None);
                b.activities(pico_catalog, p, |c| c.size() == size);
                b.load_rows(p, size, Mode::Clustered, None)?;
                b.user_rows(p);
            }
        }
        b.group_rows();
        b.finish(Architecture::OrthogonalSplit { rho }, macro_catalog.users)
    }

    pub fn n_vars(&self) -> usize {
        self.vars.len()
    }

    /// Per-user throughputs `R_k` (zero for users outside the objective).
    pub fn throughputs(&self, z: &[f64]) -> Vec<f64> {
        let mut r = vec![0.0; self.users];
        for (k, terms) in &self.objective {
            r[*k] = terms.iter().map(|&(i, rate)| rate * z[i]).sum();
        }
        r
    }

    /// `Σ_k log R_k` over the users in the objective.
    pub fn utility(&self, z: &[f64]) -> f64 {
        self.objective
            .iter()
            .map(|(_, terms)| terms.iter().map(|&(i, rate)| rate * z[i]).sum::<f64>().ln())
            .sum()
    }

    /// Largest violation of any row or nonnegativity bound.
    pub fn max_violation(&self, z: &[f64]) -> f64 {
        let rows = self.rows.iter().map(|r| -r.slack(z)).fold(0.0, f64::max);
        let bounds = z.iter().map(|&v| -v).fold(0.0, f64::max);
        rows.max(bounds)
    }

    /// Strictly feasible starting point.
    pub fn interior_point(&self) -> Vec<f64> {
        let mut z = vec![0.0; self.n_vars()];
        let mut per_group = vec![0usize; self.group_budgets.len()];
        for (p, part) in self.partitions.iter().enumerate() {
            if part.fixed.is_none() && self.vars.iter().any(|v| matches!(v, Var::Lambda { partition } if *partition == p)) {
                per_group[part.group] += 1;
            }
        }
        for (i, v) in self.vars.iter().enumerate() {
            if let Var::Lambda { partition } = v {
                let g = self.partitions[*partition].group;
                z[i] = self.group_budgets[g] / (per_group[g] + 1) as f64;
            }
        }
        let lambda_of = |p: usize, z: &[f64]| -> f64 {
            self.partitions[p].fixed.unwrap_or_else(|| {
                self.vars.iter().position(|v| matches!(v, Var::Lambda { partition } if *partition == p)).map_or(0.0, |i| z[i])
            })
        };
        for i in 0..self.n_vars() {
            if let Var::CellularShare { partition, .. } = self.vars[i] {
                z[i] = 0.5 * lambda_of(partition, &z);
            }
        }
        // activities at a common level theta, half of the tightest row allows
        let is_act = |i: usize| matches!(self.vars[i], Var::Activity { .. });
        let mut theta = f64::INFINITY;
        for r in &self.rows {
            let act: f64 = r.coeffs.iter().filter(|(i, _)| is_act(*i)).map(|(_, c)| c).sum();
            if act > 0.0 {
                let rest: f64 = r.coeffs.iter().filter(|(i, _)| !is_act(*i)).map(|&(i, c)| c * z[i]).sum();
                theta = theta.min((r.rhs - rest) / act);
            }
        }
        let theta = if theta.is_finite() { 0.5 * theta } else { 0.5 };
        for i in 0..self.n_vars() {
            if is_act(i) {
                z[i] = theta;
            }
        }
        z
    }

    pub fn lambda_value(&self, p: usize, z: &[f64]) -> f64 {
        self.partitions[p].fixed.unwrap_or_else(|| {
            self.vars
                .iter()
                .position(|v| matches!(v, Var::Lambda { partition } if *partition == p))
                .map_or(0.0, |i| z[i])
        })
    }
}
