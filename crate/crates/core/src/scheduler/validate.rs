use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{Rb, Schedule};
use crate::topology::{Budgets, BsId, UserId};

/// Per-RB rule set to check against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    /// One cluster size per RB, at most `S_j(L)` users per BS.
    Ucs,
    /// Each BS either serves at most `S_j(1)` users in cellular mode or at
    /// most `S_j(L)` users in size-`L` clusters.
    Mcs,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    SizeMismatch { t: usize, cluster: String, size: usize },
    DuplicateUser { t: usize, user: UserId },
    OverBudget { t: usize, bs: BsId, load: usize, budget: usize },
    MixedModes { t: usize, bs: BsId },
    MissingBudget { t: usize, bs: BsId, size: usize },
}

fn check_rb(t: usize, rb: &Rb, budgets: &Budgets, rule: Rule, out: &mut Vec<Violation>) {
    let mut seen = BTreeSet::new();
    // per BS: (cellular load, clustered load)
    let mut load: BTreeMap<BsId, (usize, usize)> = BTreeMap::new();
    for s in &rb.sets {
        let size = s.cluster.size();
        let cellular = rule == Rule::Mcs && size == 1 && rb.size > 1;
        if size != rb.size && !cellular {
            out.push(Violation::SizeMismatch { t, cluster: s.cluster.to_string(), size: rb.size });
            continue;
        }
        for &k in &s.users {
            if !seen.insert(k) {
                out.push(Violation::DuplicateUser { t, user: k });
            }
        }
        for &j in s.cluster.members() {
            let e = load.entry(j).or_default();
            if cellular {
                e.0 += s.users.len();
            } else {
                e.1 += s.users.len();
            }
        }
    }
    for (j, (cell, clus)) in load {
        if cell > 0 && clus > 0 {
            out.push(Violation::MixedModes { t, bs: j });
        }
        for (n, size) in [(cell, 1), (clus, rb.size)] {
            if n == 0 {
                continue;
            }
            match budgets.get(j, size) {
                Ok(b) if n > b => out.push(Violation::OverBudget { t, bs: j, load: n, budget: b }),
                Ok(_) => {}
                Err(_) => out.push(Violation::MissingBudget { t, bs: j, size }),
            }
        }
    }
}

/// Every rule violation in the schedule; empty iff it is feasible.
pub fn validate_schedule(schedule: &Schedule, budgets: &Budgets, rule: Rule) -> Vec<Violation> {
    validate_rbs(&schedule.rbs, budgets, rule)
}

pub fn validate_rbs(rbs: &[Rb], budgets: &Budgets, rule: Rule) -> Vec<Violation> {
    let mut out = Vec::new();
    for (t, rb) in rbs.iter().enumerate() {
        check_rb(t, rb, budgets, rule, &mut out);
    }
    out
}

/// Uplink pilot dimensions: distinct users scheduled on the RB.
pub fn pilot_dimensions(rb: &Rb) -> usize {
    rb.sets.iter().flat_map(|s| s.users.iter()).collect::<BTreeSet<_>>().len()
}
