//! Unique association and the fractional-user count.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::allocation::Allocation;
use super::kkt::TOL_SUPPORT;
use crate::rates::Cluster;
use crate::topology::UserId;

/// Keeps, for every user and cluster size within each partition, only the
/// cluster with the largest activity. Ties go to the lexicographically
/// smallest member list.
pub fn unique_association(alloc: &Allocation) -> Allocation {
    let mut best: BTreeMap<(UserId, usize, usize), (f64, Cluster)> = BTreeMap::new();
    for a in &alloc.x {
        let key = (a.user, a.partition, a.cluster.size());
        match best.get(&key) {
            Some((v, c)) if *v > a.value || (*v == a.value && *c <= a.cluster) => {}
            _ => {
                best.insert(key, (a.value, a.cluster.clone()));
            }
        }
    }
    let mut out = alloc.clone();
    for a in &mut out.x {
        let (_, keep) = &best[&(a.user, a.partition, a.cluster.size())];
        if &a.cluster != keep {
            a.value = 0.0;
        }
    }
    out.objective = out.utility();
    out.duality_gap = None;
    let unserved = out.unserved(0.0);
    if !unserved.is_empty() {
        log::info!("unique association leaves {} user(s) unserved: {unserved:?}", unserved.len());
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum FractionalCount {
    /// Users with two or more supported clusters, and the number of clusters
    /// carrying any support.
    Applicable { users: usize, clusters: usize },
    /// Some per-user cap of this partition is active.
    NotApplicable,
}

/// Per-partition count of users split across more than one cluster.
///
/// Only meaningful when every per-user cap `Σ_C x_kC <= λ_L` of the
/// partition is strictly slack; otherwise the partition reports
/// `NotApplicable`.
pub fn fractional_user_count(alloc: &Allocation) -> BTreeMap<usize, FractionalCount> {
    let mut out = BTreeMap::new();
    for (p, part) in alloc.partitions.iter().enumerate() {
        let mut per_user: BTreeMap<UserId, (f64, usize)> = BTreeMap::new();
        let mut clusters = BTreeSet::new();
        for a in alloc.x.iter().filter(|a| a.partition == p && a.cluster.size() == part.size) {
            let e = per_user.entry(a.user).or_default();
            e.0 += a.value;
            if a.value > TOL_SUPPORT {
                e.1 += 1;
                clusters.insert(a.cluster.clone());
            }
        }
        let slack = per_user.values().all(|&(total, _)| total < part.lambda - TOL_SUPPORT);
        let count = if slack {
            FractionalCount::Applicable {
                users: per_user.values().filter(|&&(_, n)| n >= 2).count(),
                clusters: clusters.len(),
            }
        } else {
            FractionalCount::NotApplicable
        };
        out.insert(p, count);
    }
    out
}
