//! Operator-splitting (ADMM) QP solver used to cross-check the interior-point
//! method. It shares no linear algebra with the main solver and is tuned for
//! robustness rather than accuracy.
//!
//! Constraints are stacked as `l <= Cx <= u` with `C = [A; G]`,
//! `l = [b; -inf]` and `u = [b; h]`.

use alloc::vec;
use alloc::vec::Vec;

use crate::program::ConvexProgram;
use crate::qp::QuadraticProgram;

const SIGMA: f64 = 1e-6;
const RELAX: f64 = 1.6;
const RHO_INIT: f64 = 0.1;
const EQ_RHO_SCALE: f64 = 1e3;
const ADAPT_EVERY: usize = 50;
const EPS_ABS: f64 = 1e-9;
const EPS_REL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Max-norm constraint violation of the iterate after each iteration.
    pub residual_history: Vec<f64>,
    pub iters: usize,
    pub converged: bool,
}

impl OracleResult {
    pub fn final_residual(&self) -> f64 {
        self.residual_history.last().copied().unwrap_or(f64::INFINITY)
    }
}

/// Dense Cholesky factor of a symmetric positive-definite matrix.
struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    fn new(a: &[f64], n: usize) -> Self {
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut d = a[j * n + j];
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            let d = libm::sqrt(d.max(1e-300));
            l[j * n + j] = d;
            for i in j + 1..n {
                let mut v = a[i * n + j];
                for k in 0..j {
                    v -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = v / d;
            }
        }
        Self { n, l }
    }

    fn solve(&self, b: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let mut v = b[i];
            for k in 0..i {
                v -= self.l[i * n + k] * b[k];
            }
            b[i] = v / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut v = b[i];
            for k in i + 1..n {
                v -= self.l[k * n + i] * b[k];
            }
            b[i] = v / self.l[i * n + i];
        }
    }
}

struct Stacked {
    rows: Vec<Vec<(usize, f64)>>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    is_eq: Vec<bool>,
}

impl Stacked {
    fn new(qp: &QuadraticProgram) -> Self {
        let mut s = Stacked {
            rows: Vec::new(),
            lo: Vec::new(),
            hi: Vec::new(),
            is_eq: Vec::new(),
        };
        for i in 0..qp.n_eq() {
            s.rows.push(qp.eq.row(i).collect());
            s.lo.push(qp.eq_rhs[i]);
            s.hi.push(qp.eq_rhs[i]);
            s.is_eq.push(true);
        }
        for i in 0..qp.n_ineq() {
            s.rows.push(qp.ineq.row(i).collect());
            s.lo.push(f64::NEG_INFINITY);
            s.hi.push(qp.ineq_rhs[i]);
            s.is_eq.push(false);
        }
        s
    }

    fn mul(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.iter().map(|&(c, v)| v * x[c]).sum())
            .collect()
    }

    fn mul_t(&self, y: &[f64], n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for (r, &yi) in self.rows.iter().zip(y) {
            for &(c, v) in r {
                out[c] += v * yi;
            }
        }
        out
    }
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn factor(qp: &QuadraticProgram, st: &Stacked, rho: &[f64]) -> Cholesky {
    let n = qp.nvars();
    let mut k = vec![0.0; n * n];
    for j in 0..n {
        k[j * n + j] = qp.q_diag[j] + SIGMA;
    }
    for (r, &rh) in st.rows.iter().zip(rho) {
        for &(a, va) in r {
            for &(b, vb) in r {
                k[a * n + b] += rh * va * vb;
            }
        }
    }
    Cholesky::new(&k, n)
}

/// Runs at most `iters` ADMM iterations, stopping early once primal and dual
/// residuals fall below 1e-9.
pub fn oracle_solve_qp(qp: &QuadraticProgram, iters: usize) -> OracleResult {
    let n = qp.nvars();
    let st = Stacked::new(qp);
    let mrows = st.rows.len();
    let mut rho_base = RHO_INIT;
    let rho_of = |base: f64| -> Vec<f64> {
        st.is_eq
            .iter()
            .map(|&e| if e { base * EQ_RHO_SCALE } else { base })
            .collect()
    };
    let mut rho = rho_of(rho_base);
    let mut chol = factor(qp, &st, &rho);
    let mut x = vec![0.0; n];
    let mut z = vec![0.0; mrows];
    let mut y = vec![0.0; mrows];
    let mut history = Vec::with_capacity(iters);
    let mut converged = false;
    let mut done = 0;

    for k in 0..iters {
        let ry: Vec<f64> = (0..mrows).map(|i| rho[i] * z[i] - y[i]).collect();
        let mut rhs = st.mul_t(&ry, n);
        for j in 0..n {
            rhs[j] += SIGMA * x[j] - qp.c[j];
        }
        chol.solve(&mut rhs);
        let xt = rhs;
        let zt = st.mul(&xt);
        for j in 0..n {
            x[j] = RELAX * xt[j] + (1.0 - RELAX) * x[j];
        }
        for i in 0..mrows {
            let zr = RELAX * zt[i] + (1.0 - RELAX) * z[i];
            let znew = (zr + y[i] / rho[i]).clamp(st.lo[i], st.hi[i]);
            y[i] += rho[i] * (zr - znew);
            z[i] = znew;
        }
        done = k + 1;

        let cx = st.mul(&x);
        let viol = (0..mrows)
            .map(|i| (st.lo[i] - cx[i]).max(cx[i] - st.hi[i]).max(0.0))
            .fold(0.0, f64::max);
        history.push(viol);

        if done % 10 == 0 || done == iters {
            let prim = cx.iter().zip(&z).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let cty = st.mul_t(&y, n);
            let qx: Vec<f64> = (0..n).map(|j| qp.q_diag[j] * x[j]).collect();
            let dual = (0..n).map(|j| (qx[j] + qp.c[j] + cty[j]).abs()).fold(0.0, f64::max);
            let prim_scale = norm_inf(&cx).max(norm_inf(&z));
            let dual_scale = norm_inf(&qx).max(norm_inf(&cty)).max(norm_inf(&qp.c));
            if prim <= EPS_ABS + EPS_REL * prim_scale && dual <= EPS_ABS + EPS_REL * dual_scale {
                converged = true;
                break;
            }
            if done % ADAPT_EVERY == 0 {
                let ratio = (prim / (prim_scale + 1e-30)) / (dual / (dual_scale + 1e-30) + 1e-30);
                let new_base = (rho_base * libm::sqrt(ratio)).clamp(1e-6, 1e6);
                if new_base > 5.0 * rho_base || new_base < 0.2 * rho_base {
                    rho_base = new_base;
                    rho = rho_of(rho_base);
                    chol = factor(qp, &st, &rho);
                }
            }
        }
    }
    OracleResult {
        objective: qp.objective(&x),
        x,
        residual_history: history,
        iters: done,
        converged,
    }
}

pub fn oracle_solve(prog: &ConvexProgram, iters: usize) -> OracleResult {
    oracle_solve_qp(&prog.qp, iters)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_variable_projection() {
        // min (x - 1)^2 = x^2 - 2x + 1 over x >= 0.
        let mut qp = QuadraticProgram::new(1);
        qp.q_diag[0] = 2.0;
        qp.c[0] = -2.0;
        qp.constant = 1.0;
        qp.add_ineq(&[(0, -1.0)], 0.0);
        let r = oracle_solve_qp(&qp, 10_000);
        assert!((r.x[0] - 1.0).abs() < 1e-6, "{:?}", r.x);
        assert!(r.objective.abs() < 1e-9);
    }

    #[test]
    fn active_bound() {
        // min (x + 1)^2 over x >= 0 has its minimizer on the bound.
        let mut qp = QuadraticProgram::new(1);
        qp.q_diag[0] = 2.0;
        qp.c[0] = 2.0;
        qp.constant = 1.0;
        qp.add_ineq(&[(0, -1.0)], 0.0);
        let r = oracle_solve_qp(&qp, 10_000);
        assert!(r.x[0].abs() < 1e-6);
        assert!((r.objective - 1.0).abs() < 1e-5);
    }
}
