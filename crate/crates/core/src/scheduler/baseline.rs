//! Comparison schedulers.

use std::collections::BTreeMap;

use super::{run_schedule, Rb, Schedule, ServiceSet, VqParams};
use crate::error::Result;
use crate::num::{solve_cellular, unique_association, Allocation, SolverOptions};
use crate::rates::{Cluster, ClusterCatalog};
use crate::topology::{Budgets, BsId, UserId};

/// Every user attaches to its best single BS and each BS cycles through its
/// users, `S_j(1)` per RB.
pub fn max_sinr_round_robin(catalog: &ClusterCatalog, budgets: &Budgets, horizon: usize) -> Result<Schedule> {
    let mut attached: BTreeMap<BsId, Vec<UserId>> = BTreeMap::new();
    for k in 0..catalog.users {
        let best = catalog
            .for_user(k)
            .filter(|e| e.cluster.size() == 1 && e.rate > 0.0)
            .max_by(|a, b| a.rate.total_cmp(&b.rate).then(b.cluster.cmp(&a.cluster)));
        if let Some(e) = best {
            attached.entry(e.cluster.members()[0]).or_default().push(k);
        }
    }
    let mut cursor: BTreeMap<BsId, usize> = BTreeMap::new();
    let mut rbs = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let mut sets = Vec::new();
        for (&j, users) in &attached {
            let n = budgets.get(j, 1)?.min(users.len());
            let c = cursor.entry(j).or_default();
            let mut served: Vec<UserId> = (0..n).map(|i| users[(*c + i) % users.len()]).collect();
            *c = (*c + n) % users.len();
            served.sort_unstable();
            sets.push(ServiceSet { cluster: Cluster::single(j), users: served });
        }
        rbs.push(Rb { size: 1, sets });
    }
    Ok(Schedule::from_rbs(catalog.users, rbs, |k, c| catalog.rate(k, c).unwrap_or(0.0)))
}

/// Cellular-only utility maximization realized by the virtual-queue scheduler.
pub fn cellular_vq_baseline(
    catalog: &ClusterCatalog,
    budgets: &Budgets,
    horizon: usize,
    solver: &SolverOptions,
    params: &VqParams,
) -> Result<(Allocation, Schedule)> {
    let (_, alloc) = solve_cellular(catalog, budgets, solver)?;
    let schedule = run_schedule(&unique_association(&alloc), budgets, horizon, params)?;
    Ok((alloc, schedule))
}
