use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::problem::{Architecture, NumProblem, Var};
use crate::error::{Error, Result};
use crate::rates::Cluster;
use crate::topology::{BsId, UserId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityValue {
    pub user: UserId,
    pub cluster: Cluster,
    pub partition: usize,
    pub rate: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionValue {
    pub size: usize,
    pub group: usize,
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShareValue {
    pub bs: BsId,
    pub partition: usize,
    pub value: f64,
}

/// Activity fractions and RB-partition fractions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub architecture: Architecture,
    pub users: usize,
    pub partitions: Vec<PartitionValue>,
    /// One entry per activity variable of the problem, in problem order.
    pub x: Vec<ActivityValue>,
    pub shares: Vec<ShareValue>,
    pub objective: f64,
    pub feasibility_residual: f64,
    pub duality_gap: Option<f64>,
    pub orphans: Vec<UserId>,
}

impl Allocation {
    pub fn from_problem(problem: &NumProblem, z: &[f64], duality_gap: Option<f64>) -> Self {
        let mut x = Vec::new();
        let mut shares = Vec::new();
        for (v, &value) in problem.vars.iter().zip(z) {
            match v {
                Var::Activity { user, cluster, partition, rate } => x.push(ActivityValue {
                    user: *user,
                    cluster: cluster.clone(),
                    partition: *partition,
                    rate: *rate,
                    value,
                }),
                Var::CellularShare { bs, partition } => shares.push(ShareValue { bs: *bs, partition: *partition, value }),
                Var::Lambda { .. } => {}
            }
        }
        let partitions = problem
            .partitions
            .iter()
            .enumerate()
            .map(|(p, part)| PartitionValue { size: part.size, group: part.group, lambda: problem.lambda_value(p, z) })
            .collect();
        Self {
            architecture: problem.architecture,
            users: problem.users,
            partitions,
            x,
            shares,
            objective: problem.utility(z),
            feasibility_residual: problem.max_violation(z),
            duality_gap,
            orphans: problem.orphans.clone(),
        }
    }

    /// Lays the allocation back out as the problem's variable vector.
    pub fn to_vector(&self, problem: &NumProblem) -> Result<Vec<f64>> {
        let mut acts = self.x.iter();
        let mut shares = self.shares.iter();
        problem
            .vars
            .iter()
            .map(|v| match v {
                Var::Activity { user, cluster, partition, .. } => match acts.next() {
                    Some(a) if a.user == *user && &a.cluster == cluster && a.partition == *partition => Ok(a.value),
                    _ => Err(Error::Mismatch(format!("activity for user {user} on {cluster}"))),
                },
                Var::CellularShare { bs, partition } => match shares.next() {
                    Some(s) if s.bs == *bs && s.partition == *partition => Ok(s.value),
                    _ => Err(Error::Mismatch(format!("share for BS {bs}"))),
                },
                Var::Lambda { partition } => {
                    self.partitions.get(*partition).map(|p| p.lambda).ok_or_else(|| Error::Mismatch(format!("partition {partition}")))
                }
            })
            .collect()
    }

    /// `R_k = Σ_C x_kC r_kC` for every user.
    pub fn throughputs(&self) -> Vec<f64> {
        let mut r = vec![0.0; self.users];
        for a in &self.x {
            r[a.user] += a.value * a.rate;
        }
        r
    }

    /// `Σ log R_k` over users outside the orphan list.
    pub fn utility(&self) -> f64 {
        let r = self.throughputs();
        (0..self.users).filter(|k| !self.orphans.contains(k)).map(|k| r[k].ln()).sum()
    }

    /// Users with no activity at all.
    pub fn unserved(&self, tol: f64) -> Vec<UserId> {
        let mut served = vec![false; self.users];
        for a in &self.x {
            if a.value > tol {
                served[a.user] = true;
            }
        }
        (0..self.users).filter(|&k| !served[k]).collect()
    }

    fn partition_key(&self, p: usize) -> String {
        let part = &self.partitions[p];
        let multi_group = self.partitions.iter().any(|q| q.group != 0);
        if multi_group {
            format!("{}:{}", part.group, part.size)
        } else {
            part.size.to_string()
        }
    }

    /// JSON export: `{lambda: {L: value}, x: [{user, cluster, value}], objective, residuals}`.
    pub fn to_json(&self) -> serde_json::Value {
        let lambda: BTreeMap<String, f64> =
            (0..self.partitions.len()).map(|p| (self.partition_key(p), self.partitions[p].lambda)).collect();
        let x: Vec<_> = self
            .x
            .iter()
            .map(|a| {
                serde_json::json!({
                    "user": a.user,
                    "cluster": a.cluster.members(),
                    "partition": self.partition_key(a.partition),
                    "rate": a.rate,
                    "value": a.value,
                })
            })
            .collect();
        serde_json::json!({
            "architecture": self.architecture,
            "lambda": lambda,
            "x": x,
            "shares": self.shares,
            "objective": self.objective,
            "residuals": {
                "feasibility": self.feasibility_residual,
                "duality_gap": self.duality_gap,
            },
            "orphans": self.orphans,
        })
    }
}
