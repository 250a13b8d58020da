//! Log-barrier interior-point method for the proportional-fair problem.
//!
//! Minimizes `-t Σ_k log R_k(z) - Σ_rows log(h - g·z) - Σ_i log z_i` with
//! damped Newton steps for an increasing sequence of `t`. On the central path
//! the duality gap equals `(rows + vars) / t`, which is the stopping test.

use serde::{Deserialize, Serialize};

use super::newton::{dense_solve, structured_solve, Point, Structure};
use super::problem::NumProblem;
use crate::error::{Error, Result};

const MAX_CENTERING: usize = 60;

/// How Newton systems are solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearSolve {
    /// Dense below [`DENSE_LIMIT`] variables, structured above.
    #[default]
    Auto,
    Dense,
    /// Per-user blocks with the per-BS rows added as rank-one updates.
    Structured,
}

pub const DENSE_LIMIT: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Target duality gap on the utility.
    pub tol: f64,
    /// Barrier growth factor between centering steps.
    pub growth: f64,
    pub max_newton: usize,
    pub linear: LinearSolve,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-9, growth: 16.0, max_newton: 2000, linear: LinearSolve::Auto }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOutput {
    pub z: Vec<f64>,
    pub utility: f64,
    pub duality_gap: f64,
    pub newton_steps: usize,
    /// Row multipliers `1 / (t s_i)` at the final center.
    pub row_duals: Vec<f64>,
}

fn slacks(p: &NumProblem, z: &[f64]) -> Option<Vec<f64>> {
    if z.iter().any(|&v| v <= 0.0) {
        return None;
    }
    let s: Vec<f64> = p.rows.iter().map(|r| r.slack(z)).collect();
    if s.iter().any(|&v| v <= 0.0) {
        return None;
    }
    for (_, terms) in &p.objective {
        if terms.iter().map(|&(i, r)| r * z[i]).sum::<f64>() <= 0.0 {
            return None;
        }
    }
    Some(s)
}

fn barrier_value(p: &NumProblem, z: &[f64], t: f64) -> Option<f64> {
    let s = slacks(p, z)?;
    Some(-t * p.utility(z) - s.iter().map(|v| v.ln()).sum::<f64>() - z.iter().map(|v| v.ln()).sum::<f64>())
}

struct Eval {
    value: f64,
    grad: Vec<f64>,
    s: Vec<f64>,
    r: Vec<f64>,
}

fn evaluate(p: &NumProblem, z: &[f64], t: f64) -> Option<Eval> {
    let s = slacks(p, z)?;
    let mut grad = vec![0.0; z.len()];
    let mut value = 0.0;
    let mut rs = Vec::with_capacity(p.objective.len());
    for (_, terms) in &p.objective {
        let r: f64 = terms.iter().map(|&(i, rate)| rate * z[i]).sum();
        value -= t * r.ln();
        for &(a, ra) in terms {
            grad[a] -= t * ra / r;
        }
        rs.push(r);
    }
    for (row, &sv) in p.rows.iter().zip(&s) {
        value -= sv.ln();
        for &(a, ca) in &row.coeffs {
            grad[a] += ca / sv;
        }
    }
    for (i, &v) in z.iter().enumerate() {
        value -= v.ln();
        grad[i] -= 1.0 / v;
    }
    Some(Eval { value, grad, s, r: rs })
}

/// Newton direction `-H⁻¹ ∇` at `z`.
fn newton_direction(p: &NumProblem, st: Option<&Structure>, z: &[f64], t: f64, e: &Eval) -> Result<Vec<f64>> {
    let pt = Point { z, s: &e.s, r: &e.r, t };
    let rhs: Vec<f64> = e.grad.iter().map(|g| -g).collect();
    match st {
        Some(st) => structured_solve(st, p, &pt, &rhs),
        None => dense_solve(p, &pt, &rhs),
    }
}

/// Solves the problem to duality gap `opts.tol`.
pub fn solve(problem: &NumProblem, opts: &SolverOptions) -> Result<SolverOutput> {
    if problem.n_vars() == 0 {
        return Err(Error::EmptyProblem);
    }
    let mut z = problem.interior_point();
    if slacks(problem, &z).is_none() {
        return Err(Error::Solver("could not construct a strictly feasible start".into()));
    }
    let m = (problem.rows.len() + problem.n_vars()) as f64;
    let structured = match opts.linear {
        LinearSolve::Auto => problem.n_vars() > DENSE_LIMIT,
        LinearSolve::Dense => false,
        LinearSolve::Structured => true,
    };
    let structure = structured.then(|| Structure::new(problem));
    let mut t = 1.0;
    let mut steps = 0;
    loop {
        // centering; a cap on inner steps keeps badly scaled centers from stalling the path
        let mut centered = false;
        for _ in 0..MAX_CENTERING {
            let e = evaluate(problem, &z, t).expect("iterate stays interior");
            let dz = newton_direction(problem, structure.as_ref(), &z, t, &e)?;
            let decrement: f64 = -e.grad.iter().zip(&dz).map(|(g, d)| g * d).sum::<f64>();
            if decrement / 2.0 <= 1e-10 {
                centered = true;
                break;
            }
            steps += 1;
            if steps > opts.max_newton {
                return Err(Error::Solver(format!("no convergence after {} Newton steps", opts.max_newton)));
            }
            // below this, value differences are rounding noise
            let noise = 8.0 * f64::EPSILON * (1.0 + e.value.abs());
            let mut step = 1.0;
            let mut accepted = false;
            for _ in 0..80 {
                let trial: Vec<f64> = z.iter().zip(&dz).map(|(a, d)| a + step * d).collect();
                if let Some(v) = barrier_value(problem, &trial, t) {
                    if v <= e.value - 0.25 * step * decrement + noise {
                        z = trial;
                        accepted = true;
                        break;
                    }
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if m / t <= opts.tol {
            if !centered {
                log::warn!("final centering stopped early; the reported gap is approximate");
            }
            break;
        }
        t = (t * opts.growth).min(m / opts.tol);
    }
    let row_duals = problem.rows.iter().map(|r| 1.0 / (t * r.slack(&z))).collect();
    Ok(SolverOutput { utility: problem.utility(&z), duality_gap: m / t, newton_steps: steps, row_duals, z })
}
