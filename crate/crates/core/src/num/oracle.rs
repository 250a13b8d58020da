//! Exhaustive grid search for tiny uniform-cluster-size instances.
//!
//! Every activity fraction and partition fraction is restricted to multiples
//! of `step`; the best grid point is found exactly by dynamic programming
//! over users, carrying the per-BS loads as state. Since the objective is
//! increasing in every activity and loosening `λ` only relaxes constraints,
//! partition fractions are enumerated on `Σ λ_L = 1`. A local refinement on
//! successively finer grids follows, starting from the coarse optimum.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::problem::{NumProblem, RowKind, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridOracleOptions {
    pub step: f64,
    /// Number of step halvings in the local refinement (0 disables it).
    pub refine_levels: usize,
    pub max_activity_vars: usize,
}

impl Default for GridOracleOptions {
    fn default() -> Self {
        Self { step: 0.02, refine_levels: 5, max_activity_vars: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridOracleReport {
    pub coarse_utility: f64,
    pub coarse_point: Vec<f64>,
    pub refined_utility: f64,
    pub refined_point: Vec<f64>,
    pub grid_points: u64,
}

struct Ctx {
    /// Free partitions, each owning a lambda variable.
    lambda_vars: Vec<usize>,
    /// Partition of every variable (lambda vars map to their own partition).
    var_partition: Vec<usize>,
    /// Users in processing order with their activity variables.
    users: Vec<Vec<usize>>,
    rates: Vec<f64>,
    /// BS-load rows: (partition, budget multiplier S, member vars).
    resources: Vec<(usize, i64, Vec<usize>)>,
    /// Resources each variable loads.
    var_resources: Vec<Vec<usize>>,
    /// Index into `users` after which each resource is no longer touched.
    last_user: Vec<usize>,
}

impl Ctx {
    fn new(problem: &NumProblem, opts: &GridOracleOptions) -> Result<Self> {
        if problem.group_budgets.len() != 1 || (problem.group_budgets[0] - 1.0).abs() > 1e-12 {
            return Err(Error::Config("grid oracle needs a single unit RB budget".into()));
        }
        let n_act = problem.vars.iter().filter(|v| matches!(v, Var::Activity { .. })).count();
        if n_act > opts.max_activity_vars {
            return Err(Error::OracleTooLarge(format!("{n_act} activity variables > {}", opts.max_activity_vars)));
        }
        let mut lambda_vars = vec![usize::MAX; problem.partitions.len()];
        let mut var_partition = vec![0; problem.n_vars()];
        let mut rates = vec![0.0; problem.n_vars()];
        for (i, v) in problem.vars.iter().enumerate() {
            match v {
                Var::Lambda { partition } => {
                    lambda_vars[*partition] = i;
                    var_partition[i] = *partition;
                }
                Var::Activity { partition, rate, .. } => {
                    var_partition[i] = *partition;
                    rates[i] = *rate;
                }
                Var::CellularShare { .. } => return Err(Error::Config("grid oracle does not handle mode shares".into())),
            }
        }
        if lambda_vars.iter().any(|&v| v == usize::MAX) {
            return Err(Error::Config("grid oracle needs every partition fraction free".into()));
        }
        let mut resources = Vec::new();
        let mut var_resources = vec![vec![]; problem.n_vars()];
        for row in &problem.rows {
            if let RowKind::BsLoad { partition, .. } = row.kind {
                let mut members = Vec::new();
                let mut s = 0.0;
                for &(i, c) in &row.coeffs {
                    if i == lambda_vars[partition] {
                        s = -c;
                    } else if (c - 1.0).abs() < 1e-12 {
                        members.push(i);
                    } else {
                        return Err(Error::Config("unexpected load coefficient".into()));
                    }
                }
                for &i in &members {
                    var_resources[i].push(resources.len());
                }
                resources.push((partition, s.round() as i64, members));
            }
        }
        let mut users: Vec<Vec<usize>> = problem.objective.iter().map(|(_, t)| t.iter().map(|&(i, _)| i).collect()).collect();
        users.sort_by_key(|vars| {
            let mut r: Vec<usize> = vars.iter().flat_map(|&i| var_resources[i].iter().copied()).collect();
            r.sort_unstable();
            r
        });
        let mut last_user = vec![0; resources.len()];
        for (u, vars) in users.iter().enumerate() {
            for &i in vars {
                for &r in &var_resources[i] {
                    last_user[r] = u;
                }
            }
        }
        Ok(Self { lambda_vars, var_partition, users, rates, resources, var_resources, last_user })
    }
}

#[derive(Clone)]
struct Entry {
    value: f64,
    parent: usize,
    choice: usize,
}

/// Best grid point for fixed partition fractions. All quantities are in
/// integer multiples of `unit`.
fn dp(ctx: &Ctx, lambda: &[i64], ranges: &[(i64, i64)], unit: f64, points: &mut u64) -> Option<(f64, Vec<i64>)> {
    let n_res = ctx.resources.len();
    let caps: Vec<i64> = ctx.resources.iter().map(|(p, s, _)| s * lambda[*p]).collect();
    let mut layers: Vec<(Vec<Vec<i64>>, Vec<Entry>)> = Vec::with_capacity(ctx.users.len() + 1);
    layers.push((vec![vec![0; n_res]], vec![Entry { value: 0.0, parent: 0, choice: 0 }]));
    let mut choices_per_user = Vec::with_capacity(ctx.users.len());

    for (u, vars) in ctx.users.iter().enumerate() {
        // enumerate this user's grid choices
        let mut choices: Vec<(Vec<i64>, f64)> = Vec::new();
        let mut cur: Vec<i64> = vars.iter().map(|&i| ranges[i].0).collect();
        'outer: loop {
            let mut per_part: HashMap<usize, i64> = HashMap::new();
            let mut ok = true;
            for (slot, &i) in vars.iter().enumerate() {
                let e = per_part.entry(ctx.var_partition[i]).or_default();
                *e += cur[slot];
                if *e > lambda[ctx.var_partition[i]] {
                    ok = false;
                }
            }
            if ok {
                let r: f64 = vars.iter().zip(&cur).map(|(&i, &n)| ctx.rates[i] * n as f64 * unit).sum();
                if r > 0.0 {
                    choices.push((cur.clone(), r.ln()));
                }
            }
            for slot in 0..vars.len() {
                if cur[slot] < ranges[vars[slot]].1 {
                    cur[slot] += 1;
                    continue 'outer;
                }
                cur[slot] = ranges[vars[slot]].0;
            }
            break;
        }
        if choices.is_empty() {
            return None;
        }

        let (keys, entries) = layers.last().unwrap();
        let mut index: HashMap<Vec<i64>, usize> = HashMap::new();
        let mut next_keys: Vec<Vec<i64>> = Vec::new();
        let mut next: Vec<Entry> = Vec::new();
        for (si, (key, entry)) in keys.iter().zip(entries).enumerate() {
            'choice: for (ci, (vals, value)) in choices.iter().enumerate() {
                let mut k2 = key.clone();
                for (slot, &i) in vars.iter().enumerate() {
                    for &r in &ctx.var_resources[i] {
                        k2[r] += vals[slot];
                        if k2[r] > caps[r] {
                            continue 'choice;
                        }
                    }
                }
                *points += 1;
                for r in 0..n_res {
                    if ctx.last_user[r] <= u {
                        k2[r] = 0;
                    }
                }
                let v = entry.value + value;
                match index.get(&k2) {
                    Some(&at) if next[at].value >= v => {}
                    Some(&at) => next[at] = Entry { value: v, parent: si, choice: ci },
                    None => {
                        index.insert(k2.clone(), next.len());
                        next_keys.push(k2);
                        next.push(Entry { value: v, parent: si, choice: ci });
                    }
                }
            }
        }
        if next.is_empty() {
            return None;
        }
        choices_per_user.push(choices);
        layers.push((next_keys, next));
    }

    let (_, last) = layers.last().unwrap();
    let (mut at, best) = last.iter().enumerate().max_by(|a, b| a.1.value.total_cmp(&b.1.value))?;
    let value = best.value;
    let mut x = vec![0i64; ranges.len()];
    for u in (0..ctx.users.len()).rev() {
        let e = &layers[u + 1].1[at];
        for (slot, &i) in ctx.users[u].iter().enumerate() {
            x[i] = choices_per_user[u][e.choice].0[slot];
        }
        at = e.parent;
    }
    Some((value, x))
}

/// All integer vectors in `ranges` summing to `total`.
fn compositions(ranges: &[(i64, i64)], total: i64) -> Vec<Vec<i64>> {
    fn rec(ranges: &[(i64, i64)], left: i64, cur: &mut Vec<i64>, out: &mut Vec<Vec<i64>>) {
        if cur.len() + 1 == ranges.len() {
            let (lo, hi) = ranges[cur.len()];
            if (lo..=hi).contains(&left) {
                cur.push(left);
                out.push(cur.clone());
                cur.pop();
            }
            return;
        }
        let (lo, hi) = ranges[cur.len()];
        for v in lo..=hi.min(left) {
            cur.push(v);
            rec(ranges, left - v, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if !ranges.is_empty() {
        rec(ranges, total, &mut Vec::new(), &mut out);
    }
    out
}

/// Best grid point with every coordinate within `radius` units of `center`
/// (or unrestricted when `center` is `None`).
fn search(ctx: &Ctx, n_vars: usize, unit: f64, center: Option<&[f64]>, radius: i64, points: &mut u64) -> Option<(f64, Vec<f64>)> {
    let total = (1.0 / unit).round() as i64;
    let window = |v: usize| -> (i64, i64) {
        match center {
            None => (0, total),
            Some(c) => {
                let mid = (c[v] / unit).round() as i64;
                ((mid - radius).max(0), (mid + radius).min(total))
            }
        }
    };
    let lambda_ranges: Vec<(i64, i64)> = ctx.lambda_vars.iter().map(|&v| window(v)).collect();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for lam in compositions(&lambda_ranges, total) {
        let ranges: Vec<(i64, i64)> = (0..n_vars)
            .map(|i| {
                let cap = lam[ctx.var_partition[i]];
                let (lo, hi) = window(i);
                (lo.min(cap), hi.min(cap))
            })
            .collect();
        if let Some((v, x)) = dp(ctx, &lam, &ranges, unit, points) {
            if best.as_ref().is_none_or(|b| v > b.0) {
                let mut z: Vec<f64> = x.iter().map(|&n| n as f64 * unit).collect();
                for (p, &lv) in ctx.lambda_vars.iter().enumerate() {
                    z[lv] = lam[p] as f64 * unit;
                }
                best = Some((v, z));
            }
        }
    }
    best
}

/// Grid optimum at `opts.step`, then a local refinement around it.
pub fn grid_oracle(problem: &NumProblem, opts: &GridOracleOptions) -> Result<GridOracleReport> {
    let ctx = Ctx::new(problem, opts)?;
    let steps = 1.0 / opts.step;
    if (steps - steps.round()).abs() > 1e-9 {
        return Err(Error::Config(format!("grid step {} must divide 1", opts.step)));
    }
    let n = problem.n_vars();
    let mut points = 0;
    let (coarse_utility, coarse_point) =
        search(&ctx, n, opts.step, None, 0, &mut points).ok_or_else(|| Error::Solver("no grid point with finite utility".into()))?;

    let (mut best_u, mut best_z) = (coarse_utility, coarse_point.clone());
    let mut unit = opts.step;
    for _ in 0..opts.refine_levels {
        unit /= 2.0;
        for _ in 0..50 {
            match search(&ctx, n, unit, Some(&best_z), 2, &mut points) {
                Some((u, z)) if u > best_u + 1e-13 => {
                    best_u = u;
                    best_z = z;
                }
                _ => break,
            }
        }
    }
    Ok(GridOracleReport { coarse_utility, coarse_point, refined_utility: best_u, refined_point: best_z, grid_points: points })
}
