//! Newton systems of the barrier problem.
//!
//! The barrier Hessian is a diagonal plus one rank-one term per user plus
//! one rank-one term per row. Grouping activity variables by user makes most
//! of it block diagonal: per-user blocks, a small block of global variables
//! (partition fractions and mode shares) and couplings between each user
//! block and the globals. Rows that touch several users (per-BS loads) are
//! few and are added to the factor as rank-one updates, which stays stable
//! when those rows are nearly active.

use nalgebra::{DMatrix, DVector};

use super::problem::{NumProblem, Var};
use crate::error::{Error, Result};

/// Everything the Hessian depends on at one iterate.
pub(crate) struct Point<'a> {
    pub z: &'a [f64],
    /// Row slacks `h - g·z`.
    pub s: &'a [f64],
    /// Throughput of every objective entry, in objective order.
    pub r: &'a [f64],
    pub t: f64,
}

/// `H v` without forming `H`.
pub(crate) fn hess_mul(p: &NumProblem, pt: &Point, v: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = v.iter().zip(pt.z).map(|(vi, zi)| vi / (zi * zi)).collect();
    for ((_, terms), &r) in p.objective.iter().zip(pt.r) {
        let dot: f64 = terms.iter().map(|&(i, a)| a * v[i]).sum();
        let f = pt.t * dot / (r * r);
        for &(i, a) in terms {
            out[i] += f * a;
        }
    }
    for (row, &s) in p.rows.iter().zip(pt.s) {
        let dot: f64 = row.coeffs.iter().map(|&(i, c)| c * v[i]).sum();
        let f = dot / (s * s);
        for &(i, c) in &row.coeffs {
            out[i] += f * c;
        }
    }
    out
}

pub(crate) fn dense_hessian(p: &NumProblem, pt: &Point) -> DMatrix<f64> {
    let n = pt.z.len();
    let mut h = DMatrix::zeros(n, n);
    for ((_, terms), &r) in p.objective.iter().zip(pt.r) {
        for &(a, ra) in terms {
            for &(b, rb) in terms {
                h[(a, b)] += pt.t * ra * rb / (r * r);
            }
        }
    }
    for (row, &s) in p.rows.iter().zip(pt.s) {
        let w = 1.0 / (s * s);
        for &(a, ca) in &row.coeffs {
            for &(b, cb) in &row.coeffs {
                h[(a, b)] += ca * cb * w;
            }
        }
    }
    for (i, &v) in pt.z.iter().enumerate() {
        h[(i, i)] += 1.0 / (v * v);
    }
    h
}

/// Cholesky with a growing diagonal shift on breakdown.
fn robust_cholesky(m: DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    if let Some(ch) = m.clone().cholesky() {
        return Ok(ch);
    }
    let scale = m.diagonal().amax().max(1.0);
    let mut shift = 1e-14 * scale;
    for _ in 0..8 {
        let mut h = m.clone();
        for i in 0..h.nrows() {
            h[(i, i)] += shift;
        }
        if let Some(ch) = h.cholesky() {
            return Ok(ch);
        }
        shift *= 100.0;
    }
    Err(Error::Solver("barrier Hessian not positive definite".into()))
}

pub(crate) fn dense_solve(p: &NumProblem, pt: &Point, rhs: &[f64]) -> Result<Vec<f64>> {
    let ch = robust_cholesky(dense_hessian(p, pt))?;
    Ok(ch.solve(&DVector::from_column_slice(rhs)).as_slice().to_vec())
}

/// Variable grouping, fixed for a problem.
pub(crate) struct Structure {
    /// Per-user blocks of activity variables.
    blocks: Vec<Vec<usize>>,
    globals: Vec<usize>,
    /// `(block or usize::MAX for globals, position)` of every variable.
    place: Vec<(usize, usize)>,
    /// Block of every objective entry.
    objective_block: Vec<usize>,
    /// Rows inside one block (plus globals): `(row, block or usize::MAX)`.
    local: Vec<(usize, usize)>,
    coupling: Vec<usize>,
}

const GLOBAL: usize = usize::MAX;

impl Structure {
    pub(crate) fn new(p: &NumProblem) -> Self {
        let mut block_of_user = std::collections::BTreeMap::new();
        let mut blocks: Vec<Vec<usize>> = Vec::new();
        let mut globals = Vec::new();
        let mut place = vec![(GLOBAL, 0); p.n_vars()];
        for (i, v) in p.vars.iter().enumerate() {
            match v {
                Var::Activity { user, .. } => {
                    let b = *block_of_user.entry(*user).or_insert_with(|| {
                        blocks.push(Vec::new());
                        blocks.len() - 1
                    });
                    place[i] = (b, blocks[b].len());
                    blocks[b].push(i);
                }
                _ => {
                    place[i] = (GLOBAL, globals.len());
                    globals.push(i);
                }
            }
        }
        let objective_block = p.objective.iter().map(|(k, _)| block_of_user[k]).collect();
        let mut local = Vec::new();
        let mut coupling = Vec::new();
        for (ri, row) in p.rows.iter().enumerate() {
            let mut seen = GLOBAL;
            let mut multi = false;
            for &(i, _) in &row.coeffs {
                let b = place[i].0;
                if b != GLOBAL {
                    if seen == GLOBAL {
                        seen = b;
                    } else if seen != b {
                        multi = true;
                    }
                }
            }
            if multi {
                coupling.push(ri);
            } else {
                local.push((ri, seen));
            }
        }
        Self { blocks, globals, place, objective_block, local, coupling }
    }
}

/// Dense Cholesky factor of the scaled Hessian `D H D`, `D = diag(z)`, with
/// variables ordered block by block and the globals last.
///
/// The block-arrow part (everything except the coupling rows) is factorized
/// blockwise, which fills nothing outside the arrow. Each coupling row is
/// then added as a rank-one update of the factor. Scaling turns the barrier
/// diagonal into the identity, so every pivot is at least one.
struct Factor {
    /// Variable at every factor position.
    order: Vec<usize>,
    l: DMatrix<f64>,
}

impl Factor {
    fn new(st: &Structure, p: &NumProblem, pt: &Point) -> Result<Self> {
        let g = st.globals.len();
        let z = pt.z;
        let mut b: Vec<DMatrix<f64>> = st.blocks.iter().map(|vars| DMatrix::identity(vars.len(), vars.len())).collect();
        let mut e: Vec<DMatrix<f64>> = st.blocks.iter().map(|vars| DMatrix::zeros(vars.len(), g)).collect();
        let mut gm = DMatrix::identity(g, g);

        for (((_, terms), &r), &k) in p.objective.iter().zip(pt.r).zip(&st.objective_block) {
            let w = pt.t / (r * r);
            for &(a, ra) in terms {
                for &(c, rc) in terms {
                    b[k][(st.place[a].1, st.place[c].1)] += w * ra * z[a] * rc * z[c];
                }
            }
        }
        for &(ri, k) in &st.local {
            let row = &p.rows[ri];
            let w = 1.0 / (pt.s[ri] * pt.s[ri]);
            for &(a, ca) in &row.coeffs {
                let (ba, pa) = st.place[a];
                for &(c, cc) in &row.coeffs {
                    let (bc, pc) = st.place[c];
                    let v = w * ca * z[a] * cc * z[c];
                    match (ba == GLOBAL, bc == GLOBAL) {
                        (false, false) => b[k][(pa, pc)] += v,
                        (false, true) => e[k][(pa, pc)] += v,
                        (true, true) => gm[(pa, pc)] += v,
                        (true, false) => {}
                    }
                }
            }
        }

        let order: Vec<usize> = st.blocks.iter().flatten().chain(&st.globals).copied().collect();
        let n = order.len();
        let mut l = DMatrix::zeros(n, n);
        let mut off = 0;
        for (bk, ek) in b.into_iter().zip(&e) {
            let nk = bk.nrows();
            let lk = robust_cholesky(bk)?.l();
            l.view_mut((off, off), (nk, nk)).copy_from(&lk);
            if g > 0 {
                // rows of the globals against this block: (L_k⁻¹ E_k)ᵀ
                let w = lk.solve_lower_triangular(ek).expect("pivots are at least one");
                gm -= w.transpose() * &w;
                l.view_mut((n - g, off), (g, nk)).copy_from(&w.transpose());
            }
            off += nk;
        }
        if g > 0 {
            let lg = robust_cholesky(gm)?.l();
            l.view_mut((n - g, n - g), (g, g)).copy_from(&lg);
        }
        Ok(Self { order, l })
    }

    /// `L Lᵀ += x xᵀ`; `x` is given in factor order and consumed.
    fn rank_one_update(&mut self, mut x: Vec<f64>) {
        let n = x.len();
        let Some(first) = x.iter().position(|&v| v != 0.0) else { return };
        for k in first..n {
            let lkk = self.l[(k, k)];
            let r = lkk.hypot(x[k]);
            let c = r / lkk;
            let sn = x[k] / lkk;
            self.l[(k, k)] = r;
            let mut col = self.l.column_mut(k);
            for i in k + 1..n {
                col[i] = (col[i] + sn * x[i]) / c;
                x[i] = c * x[i] - sn * col[i];
            }
        }
    }

    /// Solves `L Lᵀ y = b` with `b` and `y` in variable order.
    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut v = DVector::from_iterator(b.len(), self.order.iter().map(|&i| b[i]));
        self.l.solve_lower_triangular_mut(&mut v);
        self.l.tr_solve_lower_triangular_mut(&mut v);
        let mut out = vec![0.0; b.len()];
        for (&i, y) in self.order.iter().zip(v.iter()) {
            out[i] = *y;
        }
        out
    }
}

/// Solves `H x = rhs` using the block structure.
///
/// Works on `D H D y = D rhs`, `x = D y`, with the factor above, followed
/// by a few conjugate-gradient steps on the exact scaled Hessian to clean
/// up rounding.
pub(crate) fn structured_solve(st: &Structure, p: &NumProblem, pt: &Point, rhs: &[f64]) -> Result<Vec<f64>> {
    let z = pt.z;
    let mut factor = Factor::new(st, p, pt)?;
    let mut position = vec![0; z.len()];
    for (k, &i) in factor.order.iter().enumerate() {
        position[i] = k;
    }
    for &ri in &st.coupling {
        let mut x = vec![0.0; z.len()];
        for &(i, c) in &p.rows[ri].coeffs {
            x[position[i]] += c * z[i] / pt.s[ri];
        }
        factor.rank_one_update(x);
    }
    let scaled_mul = |v: &[f64]| -> Vec<f64> {
        let dv: Vec<f64> = v.iter().zip(z).map(|(a, b)| a * b).collect();
        hess_mul(p, pt, &dv).iter().zip(z).map(|(a, b)| a * b).collect()
    };
    let b: Vec<f64> = rhs.iter().zip(z).map(|(a, b)| a * b).collect();
    let y = pcg(scaled_mul, |r| factor.solve(r), &b, 1e-14, 4);
    Ok(y.iter().zip(z).map(|(a, b)| a * b).collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Preconditioned conjugate gradients from the preconditioned right-hand
/// side; stops once `‖r‖ <= tol ‖b‖` or when progress stalls, returning the
/// iterate with the smallest residual.
fn pcg(h: impl Fn(&[f64]) -> Vec<f64>, m: impl Fn(&[f64]) -> Vec<f64>, b: &[f64], tol: f64, max_iter: usize) -> Vec<f64> {
    let norm = |v: &[f64]| dot(v, v).sqrt();
    let target = tol * norm(b);
    let mut x = m(b);
    let hx = h(&x);
    let mut r: Vec<f64> = b.iter().zip(&hx).map(|(bi, hi)| bi - hi).collect();
    let mut best = (norm(&r), x.clone());
    if best.0 <= target {
        return x;
    }
    let mut zv = m(&r);
    let mut d = zv.clone();
    let mut rz = dot(&r, &zv);
    for _ in 0..max_iter {
        let hd = h(&d);
        let dhd = dot(&d, &hd);
        if !(dhd > 0.0) || !(rz > 0.0) {
            break;
        }
        let alpha = rz / dhd;
        for i in 0..x.len() {
            x[i] += alpha * d[i];
            r[i] -= alpha * hd[i];
        }
        let rn = norm(&r);
        if rn < best.0 {
            best = (rn, x.clone());
        }
        if rn <= target {
            break;
        }
        zv = m(&r);
        let rz_new = dot(&r, &zv);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..d.len() {
            d[i] = zv[i] + beta * d[i];
        }
    }
    best.1
}
