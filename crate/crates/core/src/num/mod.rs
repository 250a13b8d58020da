//! Proportional-fair network utility maximization over cluster activities.
//!
//! A [`NumProblem`] is built from a [`ClusterCatalog`] for one of the
//! architectures, solved with [`solve`], and read back as an [`Allocation`].

pub mod allocation;
pub mod association;
pub mod kkt;
mod newton;
pub mod oracle;
pub mod problem;
pub mod solver;

pub use allocation::{ActivityValue, Allocation, PartitionValue, ShareValue};
pub use association::{fractional_user_count, unique_association, FractionalCount};
pub use kkt::{kkt_residuals, KktReport};
pub use oracle::{grid_oracle, GridOracleOptions, GridOracleReport};
pub use problem::{Architecture, Mode, NumProblem, Partition, Row, RowKind, ShareMode, Var};
pub use solver::{solve, LinearSolve, SolverOptions, SolverOutput};

use crate::error::Result;
use crate::rates::ClusterCatalog;
use crate::topology::Budgets;

/// Solves `problem` and packages the optimum.
pub fn solve_problem(problem: &NumProblem, opts: &SolverOptions) -> Result<Allocation> {
    let out = solve(problem, opts)?;
    Ok(Allocation::from_problem(problem, &out.z, Some(out.duality_gap)))
}

pub fn solve_ucs(catalog: &ClusterCatalog, budgets: &Budgets, opts: &SolverOptions) -> Result<(NumProblem, Allocation)> {
    let p = NumProblem::ucs(catalog, budgets)?;
    let a = solve_problem(&p, opts)?;
    Ok((p, a))
}

pub fn solve_cellular(catalog: &ClusterCatalog, budgets: &Budgets, opts: &SolverOptions) -> Result<(NumProblem, Allocation)> {
    let p = NumProblem::cellular(catalog, budgets)?;
    let a = solve_problem(&p, opts)?;
    Ok((p, a))
}

pub fn solve_mcs(catalog: &ClusterCatalog, budgets: &Budgets, shares: ShareMode, opts: &SolverOptions) -> Result<(NumProblem, Allocation)> {
    let p = NumProblem::mcs(catalog, budgets, shares)?;
    let a = solve_problem(&p, opts)?;
    Ok((p, a))
}

pub fn solve_orthogonal_split(
    macro_catalog: &ClusterCatalog,
    pico_catalog: &ClusterCatalog,
    budgets: &Budgets,
    rho: f64,
    opts: &SolverOptions,
) -> Result<(NumProblem, Allocation)> {
    let p = NumProblem::orthogonal_split(macro_catalog, pico_catalog, budgets, rho)?;
    let a = solve_problem(&p, opts)?;
    Ok((p, a))
}

#[cfg(test)]
mod tests;
