//! KKT residuals for a candidate allocation.
//!
//! Multipliers are not taken from the solver. They are refit from scratch on
//! the rows that are active at the given point, so any allocation (solver
//! output, oracle point, hand-perturbed point) can be checked the same way.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::allocation::Allocation;
use super::problem::{Mode, NumProblem, RowKind};
use crate::error::Result;
use crate::topology::{BsId, UserId};

/// Activity below this counts as zero.
pub const TOL_SUPPORT: f64 = 1e-6;
/// Rows with slack below this count as active.
pub const TOL_ACTIVE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BsMultiplier {
    pub bs: BsId,
    pub size: usize,
    pub partition: usize,
    pub mode: Mode,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserMultiplier {
    pub user: UserId,
    pub size: usize,
    pub partition: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    /// Per-BS load multipliers `nu_jL`.
    pub nu: Vec<BsMultiplier>,
    /// Per-user cap multipliers `mu_kL`.
    pub mu: Vec<UserMultiplier>,
    /// Remaining multipliers (RB budgets, share caps), by row index.
    pub other: Vec<(usize, f64)>,
    /// Largest stationarity violation relative to `max(1, max_i |∂U/∂z_i|)`.
    pub stationarity_residual: f64,
    /// Largest `multiplier * slack` over all rows.
    pub complementarity_residual: f64,
}

/// Lawson–Hanson nonnegative least squares: `min ‖A w - b‖, w >= 0`.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.ncols();
    let mut w = DVector::zeros(n);
    if n == 0 {
        return w;
    }
    let mut passive = vec![false; n];
    let tol = 1e-12 * a.amax().max(1.0) * b.amax().max(1.0);
    let solve_passive = |passive: &[bool]| -> DVector<f64> {
        let idx: Vec<usize> = (0..n).filter(|&i| passive[i]).collect();
        let mut out = DVector::zeros(n);
        if idx.is_empty() {
            return out;
        }
        let sub = a.select_columns(&idx);
        let sol = sub.svd(true, true).solve(b, 1e-12).expect("svd solve");
        for (p, &i) in idx.iter().enumerate() {
            out[i] = sol[p];
        }
        out
    };
    for _ in 0..(3 * n + 10) {
        let grad = a.transpose() * (b - a * &w);
        let cand = (0..n).filter(|&i| !passive[i] && grad[i] > tol).max_by(|&i, &j| grad[i].total_cmp(&grad[j]));
        let Some(enter) = cand else { break };
        passive[enter] = true;
        loop {
            let s = solve_passive(&passive);
            if (0..n).filter(|&i| passive[i]).all(|i| s[i] > 0.0) {
                w = s;
                break;
            }
            let mut alpha = f64::INFINITY;
            for i in (0..n).filter(|&i| passive[i] && s[i] <= 0.0) {
                alpha = alpha.min(w[i] / (w[i] - s[i]));
            }
            w += (s - &w) * alpha;
            for i in 0..n {
                if passive[i] && w[i] <= 1e-15 {
                    passive[i] = false;
                    w[i] = 0.0;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    w
}

/// Refits multipliers on the active rows and reports KKT violations.
pub fn kkt_residuals(problem: &NumProblem, alloc: &Allocation) -> Result<KktReport> {
    let z = alloc.to_vector(problem)?;
    let n = z.len();
    let r = problem.throughputs(&z);
    let mut grad = vec![0.0; n];
    for (k, terms) in &problem.objective {
        for &(i, rate) in terms {
            grad[i] = rate / r[*k];
        }
    }
    let scale = grad.iter().fold(1.0f64, |m, g| m.max(g.abs()));

    let active: Vec<usize> = (0..problem.rows.len()).filter(|&i| problem.rows[i].slack(&z) <= TOL_ACTIVE).collect();
    // Σ_active pi_r g_ri = grad_i on the support and >= grad_i off it; the
    // off-support inequalities get a nonnegative surplus column each
    let off: Vec<usize> = (0..n).filter(|&i| z[i] <= TOL_SUPPORT).collect();
    let mut a = DMatrix::zeros(n, active.len() + off.len());
    for (c, &ri) in active.iter().enumerate() {
        for &(i, coef) in &problem.rows[ri].coeffs {
            a[(i, c)] = coef;
        }
    }
    for (c, &i) in off.iter().enumerate() {
        a[(i, active.len() + c)] = -1.0;
    }
    let b = DVector::from_column_slice(&grad);
    let fit = nnls(&a, &b);
    let mut pi = vec![0.0; problem.rows.len()];
    for (c, &ri) in active.iter().enumerate() {
        pi[ri] = fit[c];
    }

    let mut reduced = grad.clone();
    for (row, &p) in problem.rows.iter().zip(&pi) {
        if p != 0.0 {
            for &(i, coef) in &row.coeffs {
                reduced[i] -= p * coef;
            }
        }
    }
    let stationarity = (0..n)
        .map(|i| if z[i] > TOL_SUPPORT { reduced[i].abs() } else { reduced[i].max(0.0) })
        .fold(0.0, f64::max)
        / scale;
    let complementarity = problem.rows.iter().zip(&pi).map(|(row, p)| (p * row.slack(&z)).abs()).fold(0.0, f64::max);

    let mut report = KktReport {
        nu: vec![],
        mu: vec![],
        other: vec![],
        stationarity_residual: stationarity,
        complementarity_residual: complementarity,
    };
    for (ri, row) in problem.rows.iter().enumerate() {
        match row.kind {
            RowKind::BsLoad { bs, partition, mode } => {
                let size = match mode {
                    Mode::Clustered => problem.partitions[partition].size,
                    Mode::Cellular => 1,
                };
                report.nu.push(BsMultiplier { bs, size, partition, mode, value: pi[ri] })
            }
            RowKind::UserCap { user, partition } => report.mu.push(UserMultiplier {
                user,
                size: problem.partitions[partition].size,
                partition,
                value: pi[ri],
            }),
            _ => report.other.push((ri, pi[ri])),
        }
    }
    Ok(report)
}
