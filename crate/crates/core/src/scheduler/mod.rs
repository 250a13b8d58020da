//! Resource-block scheduling that realizes an allocation.
//!
//! RBs are split among the allocation's partitions, then each partition runs
//! its own virtual-queue scheduler: every RB, a greedy pass admits users in
//! decreasing `Q_k R̃_k` order while the per-BS budgets allow.

mod baseline;
mod export;
mod validate;

pub use baseline::{cellular_vq_baseline, max_sinr_round_robin};
pub use validate::{pilot_dimensions, validate_rbs, validate_schedule, Rule, Violation};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::kkt::TOL_SUPPORT;
use crate::num::{Allocation, Architecture, ShareMode};
use crate::rates::Cluster;
use crate::topology::{Budgets, BsId, UserId};

/// Users served by one cluster on one RB.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceSet {
    pub cluster: Cluster,
    pub users: Vec<UserId>,
}

/// One RB: its cluster size `L(t)` and the sets scheduled on it. In a
/// mixed-size partition, single-BS sets are cellular-mode service.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Rb {
    pub size: usize,
    pub sets: Vec<ServiceSet>,
}

impl Rb {
    pub fn new(size: usize, sets: &[(&[BsId], &[UserId])]) -> Result<Self> {
        let sets = sets
            .iter()
            .map(|(c, u)| Ok(ServiceSet { cluster: Cluster::new(c.to_vec())?, users: u.to_vec() }))
            .collect::<Result<_>>()?;
        Ok(Self { size, sets })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Realized {
    pub user: UserId,
    pub cluster: Cluster,
    pub fraction: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub horizon: usize,
    pub users: usize,
    pub rbs: Vec<Rb>,
    /// Sorted by user, then cluster.
    pub realized: Vec<Realized>,
    /// `R̂_k = Σ_C fraction_kC r_kC`.
    pub throughputs: Vec<f64>,
    /// Largest queue seen per partition.
    pub queue_peaks: Vec<f64>,
    /// `max_k Q_k` after every RB, when requested.
    pub queue_trace: Option<Vec<f64>>,
}

impl Schedule {
    /// Tallies per-(user, cluster) service counts over the RBs.
    pub fn from_rbs(users: usize, rbs: Vec<Rb>, rate: impl Fn(UserId, &Cluster) -> f64) -> Self {
        let horizon = rbs.len();
        let mut counts: BTreeMap<(UserId, Cluster), usize> = BTreeMap::new();
        for rb in &rbs {
            for s in &rb.sets {
                for &k in &s.users {
                    *counts.entry((k, s.cluster.clone())).or_default() += 1;
                }
            }
        }
        let realized: Vec<Realized> = counts
            .into_iter()
            .map(|((user, cluster), n)| {
                let rate = rate(user, &cluster);
                Realized { user, cluster, fraction: n as f64 / horizon as f64, rate }
            })
            .collect();
        let mut throughputs = vec![0.0; users];
        for r in &realized {
            throughputs[r.user] += r.fraction * r.rate;
        }
        Self { horizon, users, rbs, realized, throughputs, queue_peaks: vec![], queue_trace: None }
    }

    /// `Σ log R̂_k` over the listed users.
    pub fn utility(&self, users: impl IntoIterator<Item = UserId>) -> f64 {
        users.into_iter().map(|k| self.throughputs[k].ln()).sum()
    }
}

/// Largest-remainder split of `horizon` RBs by `lambda`, interleaved by
/// smooth weighted round robin. RBs left over when `Σ λ < 1` go to the
/// largest fraction. Returns the partition index of every RB.
pub fn apportion_partitions(lambda: &[f64], horizon: usize) -> Vec<usize> {
    let counts = apportion_counts(lambda, horizon);
    let mut current = vec![0i64; counts.len()];
    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        for (c, &n) in current.iter_mut().zip(&counts) {
            *c += n as i64;
        }
        let pick = (0..counts.len()).filter(|&p| counts[p] > 0).max_by(|&a, &b| current[a].cmp(&current[b]).then(b.cmp(&a)));
        let Some(pick) = pick else { break };
        current[pick] -= horizon as i64;
        out.push(pick);
    }
    out
}

/// RB counts per partition; see [`apportion_partitions`].
pub fn apportion_counts(lambda: &[f64], horizon: usize) -> Vec<usize> {
    if lambda.is_empty() || horizon == 0 {
        return vec![0; lambda.len()];
    }
    let total: f64 = lambda.iter().map(|l| l.max(0.0)).sum::<f64>().min(1.0);
    let seats = ((total * horizon as f64).round() as usize).min(horizon);
    let quotas: Vec<f64> = lambda.iter().map(|l| l.max(0.0) * horizon as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..lambda.len()).collect();
    order.sort_by(|&a, &b| (quotas[b] - quotas[b].floor()).total_cmp(&(quotas[a] - quotas[a].floor())).then(a.cmp(&b)));
    let mut given: usize = counts.iter().sum();
    for &p in &order {
        if given >= seats {
            break;
        }
        if quotas[p] > counts[p] as f64 {
            counts[p] += 1;
            given += 1;
        }
    }
    let largest = (0..lambda.len()).max_by(|&a, &b| lambda[a].total_cmp(&lambda[b]).then(b.cmp(&a))).unwrap();
    counts[largest] += horizon - given.min(horizon);
    counts
}

/// One scheduled (user, cluster) pair with its peak rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flow {
    pub user: UserId,
    pub cluster: Cluster,
    pub rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VqParams {
    /// Arrival size; defaults to one unit per RB.
    pub a_max: Option<f64>,
    /// Arrival gate; defaults to `v_factor · flows · max(R̃, A_max)`.
    pub v: Option<f64>,
    pub v_factor: f64,
    /// Only flows with `Q_k >= R̃_k` are offered to the greedy pass.
    pub backlog_gate: bool,
    pub record_queues: bool,
}

impl Default for VqParams {
    fn default() -> Self {
        Self { a_max: None, v: None, v_factor: 10.0, backlog_gate: true, record_queues: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualQueueState {
    pub flows: Vec<Flow>,
    pub q: Vec<f64>,
    /// `R̃_k = 1 / α_k`.
    pub target: Vec<f64>,
    pub a_max: f64,
    pub v: f64,
}

impl VirtualQueueState {
    /// `alphas[i]` is the RB fraction flow `i` should receive.
    pub fn new(flows: Vec<Flow>, alphas: &[f64], params: &VqParams) -> Result<Self> {
        if alphas.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
            return Err(Error::Config("virtual-queue targets need positive fractions".into()));
        }
        if params.a_max.is_some_and(|a| !(a > 0.0 && a.is_finite())) || !(params.v_factor > 0.0 && params.v_factor.is_finite()) {
            return Err(Error::Config("arrival size and v_factor must be positive".into()));
        }
        let target: Vec<f64> = alphas.iter().map(|a| 1.0 / a.min(1.0)).collect();
        let a_max = params.a_max.unwrap_or(1.0);
        let top = target.iter().cloned().fold(a_max, f64::max);
        let v = params.v.unwrap_or(params.v_factor * flows.len().max(1) as f64 * top);
        Ok(Self { q: vec![a_max; flows.len()], flows, target, a_max, v })
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.q[i] * self.target[i]
    }

    /// Flows worth offering to the greedy pass.
    pub fn eligible(&self, backlog_gate: bool) -> Vec<usize> {
        (0..self.flows.len())
            .filter(|&i| if backlog_gate { self.q[i] >= self.target[i] * (1.0 - 1e-9) } else { self.q[i] > 0.0 })
            .collect()
    }
}

/// `Q_k ← max(0, Q_k − R̃_k 1[k scheduled]) + A_max 1[V > Σ Q]`, with the
/// gate evaluated on the queues before the update.
pub fn vq_step(state: &mut VirtualQueueState, scheduled: &[usize]) {
    let arrivals = state.v > state.q.iter().sum::<f64>();
    for &i in scheduled {
        state.q[i] = (state.q[i] - state.target[i]).max(0.0);
    }
    if arrivals {
        for q in &mut state.q {
            *q += state.a_max;
        }
    }
}

/// Greedy weighted-sum-rate pass: candidates in decreasing `Q R̃` order
/// (ties by user id), each admitted if its user is not yet served on this
/// RB and every BS of its cluster stays within `cap(j)`.
pub fn greedy_wsrm(state: &VirtualQueueState, candidates: &[usize], cap: impl Fn(BsId) -> usize) -> Vec<usize> {
    let mut order = candidates.to_vec();
    order.sort_by(|&a, &b| {
        state
            .weight(b)
            .total_cmp(&state.weight(a))
            .then(state.flows[a].user.cmp(&state.flows[b].user))
            .then(state.flows[a].cluster.cmp(&state.flows[b].cluster))
    });
    let mut load: BTreeMap<BsId, usize> = BTreeMap::new();
    let mut served = std::collections::BTreeSet::new();
    let mut out = Vec::new();
    for i in order {
        let f = &state.flows[i];
        if served.contains(&f.user) {
            continue;
        }
        if f.cluster.members().iter().all(|&j| load.get(&j).copied().unwrap_or(0) < cap(j)) {
            for &j in f.cluster.members() {
                *load.entry(j).or_default() += 1;
            }
            served.insert(f.user);
            out.push(i);
        }
    }
    out.sort_unstable();
    out
}

/// Ranks `0..n` in a spread-out order so that thresholds on the rank pick
/// evenly spaced, nested subsets.
fn spread_rank(n: usize) -> Vec<usize> {
    if n <= 1 {
        return vec![0; n];
    }
    let gcd = |mut a: usize, mut b: usize| {
        while b != 0 {
            (a, b) = (b, a % b);
        }
        a
    };
    let mut g = ((n as f64) * 0.618_033_988_75).round().max(1.0) as usize;
    while gcd(g, n) != 1 {
        g += 1;
    }
    (0..n).map(|i| (i * g) % n).collect()
}

/// Runs the per-partition virtual-queue schedulers over `horizon` RBs.
///
/// `alloc` should be a unique-association allocation; each remaining
/// activity above the support tolerance becomes a flow with target fraction
/// `x / λ_L`. For mixed-size allocations every BS's cellular RBs within a
/// partition are fixed up front by rounding its share `y_jL / λ_L`.
pub fn run_schedule(alloc: &Allocation, budgets: &Budgets, horizon: usize, params: &VqParams) -> Result<Schedule> {
    if horizon == 0 {
        return Err(Error::Config("horizon must be positive".into()));
    }
    let lambda: Vec<f64> = alloc.partitions.iter().map(|p| p.lambda).collect();
    let labels = apportion_partitions(&lambda, horizon);
    let mut rbs = vec![Rb::default(); labels.len()];
    let mut queue_peaks = vec![0.0; lambda.len()];
    let mut trace = params.record_queues.then(|| vec![0.0; labels.len()]);

    for (p, part) in alloc.partitions.iter().enumerate() {
        let slots: Vec<usize> = (0..labels.len()).filter(|&t| labels[t] == p).collect();
        for &t in &slots {
            rbs[t].size = part.size;
        }
        if slots.is_empty() || part.lambda <= 0.0 {
            continue;
        }
        let acts: Vec<_> = alloc.x.iter().filter(|a| a.partition == p && a.value > TOL_SUPPORT).collect();
        if acts.is_empty() {
            continue;
        }
        let flows: Vec<Flow> = acts.iter().map(|a| Flow { user: a.user, cluster: a.cluster.clone(), rate: a.rate }).collect();
        let alphas: Vec<f64> = acts.iter().map(|a| a.value / part.lambda).collect();
        let mut state = VirtualQueueState::new(flows, &alphas, params)?;

        // per-BS cellular RB ranks for mixed sizes
        let cellular_share: Option<BTreeMap<BsId, f64>> = match alloc.architecture {
            Architecture::Mcs { shares } => Some(
                (0..budgets.bss())
                    .map(|j| {
                        let f = match shares {
                            ShareMode::Clustered => 0.0,
                            ShareMode::Cellular => 1.0,
                            ShareMode::Free => alloc
                                .shares
                                .iter()
                                .find(|s| s.bs == j && s.partition == p)
                                .map_or(0.0, |s| (s.value / part.lambda).clamp(0.0, 1.0)),
                        };
                        (j, (f * slots.len() as f64).round())
                    })
                    .collect(),
            ),
            _ => None,
        };
        let rank = spread_rank(slots.len());

        for (i, &t) in slots.iter().enumerate() {
            let is_cellular = |j: BsId| cellular_share.as_ref().is_some_and(|c| (rank[i] as f64) < c[&j]);
            let candidates: Vec<usize> = state
                .eligible(params.backlog_gate)
                .into_iter()
                .filter(|&f| {
                    let c = &state.flows[f].cluster;
                    match &cellular_share {
                        None => true,
                        Some(_) if c.size() == 1 => is_cellular(c.members()[0]),
                        Some(_) => c.members().iter().all(|&j| !is_cellular(j)),
                    }
                })
                .collect();
            let cap = |j: BsId| {
                let size = if is_cellular(j) { 1 } else { part.size };
                budgets.get(j, size).unwrap_or(0)
            };
            let picked = greedy_wsrm(&state, &candidates, cap);
            let mut sets: BTreeMap<Cluster, Vec<UserId>> = BTreeMap::new();
            for &f in &picked {
                sets.entry(state.flows[f].cluster.clone()).or_default().push(state.flows[f].user);
            }
            rbs[t].sets = sets.into_iter().map(|(cluster, mut users)| {
                users.sort_unstable();
                ServiceSet { cluster, users }
            }).collect();
            vq_step(&mut state, &picked);
            let peak = state.q.iter().cloned().fold(0.0, f64::max);
            queue_peaks[p] = f64::max(queue_peaks[p], peak);
            if let Some(tr) = trace.as_mut() {
                tr[t] = peak;
            }
        }
    }

    let rates: BTreeMap<(UserId, &Cluster), f64> = alloc.x.iter().map(|a| ((a.user, &a.cluster), a.rate)).collect();
    let mut schedule = Schedule::from_rbs(alloc.users, rbs, |k, c| rates.get(&(k, c)).copied().unwrap_or(0.0));
    schedule.queue_peaks = queue_peaks;
    schedule.queue_trace = trace;
    Ok(schedule)
}
