//! Augmented Newton system of the interior-point method:
//!
//! ```text
//! [ Q + εI   Aᵀ    Gᵀ       ] [dx]   [r1]
//! [ A       -εI    0        ] [dy] = [r2]
//! [ G        0    -W - εI   ] [dz]   [r3]
//! ```
//!
//! with `W = diag(s ./ z)`. Solves are refined against the unregularized
//! matrix.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use super::linalg::{minimum_degree, DenseLdl, PivotRegularization, SparseLdl, UpperCsc};
use super::LinearSolver;
use crate::qp::QuadraticProgram;

/// Dense factorization is used below this KKT dimension in `Auto` mode.
pub const DENSE_KKT_LIMIT: usize = 500;

const STATIC_REG: f64 = 1e-8;
/// Static regularization is raised by this factor while pivots need bumping.
const REG_GROWTH: f64 = 100.0;
const MAX_STATIC_REG: f64 = 1e-4;
const REFINE_STEPS: usize = 6;
const REFINE_TOL: f64 = 1e-14;

enum Factor {
    /// Dense factor of the matrix permuted by `perm[new] = old`.
    Dense {
        ldl: DenseLdl,
        perm: Vec<usize>,
    },
    Sparse(Box<SparseLdl>),
}

pub(crate) struct KktSystem {
    n: usize,
    dim: usize,
    signs: Vec<f64>,
    /// Unregularized matrix values; the diagonal is refilled each iteration.
    mat: UpperCsc,
    /// Regularized copy handed to the factorization.
    work: UpperCsc,
    diag_slots: Vec<usize>,
    factor: Factor,
    pub bumped_pivots: usize,
    /// Static regularization used by the current factorization.
    pub static_reg: f64,
}

impl KktSystem {
    pub fn new(qp: &QuadraticProgram, choice: LinearSolver) -> Self {
        let n = qp.nvars();
        let p = qp.n_eq();
        let dim = n + p + qp.n_ineq();
        let mut pattern: Vec<(usize, usize)> = Vec::new();
        let mut values: Vec<f64> = Vec::new();
        for i in 0..p {
            for (c, v) in qp.eq.row(i) {
                pattern.push((c, n + i));
                values.push(v);
            }
        }
        for r in 0..qp.n_ineq() {
            for (c, v) in qp.ineq.row(r) {
                pattern.push((c, n + p + r));
                values.push(v);
            }
        }
        let (mut mat, slots) = UpperCsc::from_pattern(dim, &pattern);
        for (k, &v) in values.iter().enumerate() {
            mat.val[slots[k]] += v;
        }
        let diag_slots = (0..dim).map(|j| mat.diag_slot(j)).collect();
        let signs = (0..dim).map(|i| if i < n { 1.0 } else { -1.0 }).collect();
        let use_dense = match choice {
            LinearSolver::Dense => true,
            LinearSolver::Sparse => false,
            LinearSolver::Auto => dim < DENSE_KKT_LIMIT,
        };
        let factor = if use_dense {
            Factor::Dense {
                ldl: DenseLdl::new(dim),
                perm: minimum_degree(&mat),
            }
        } else {
            Factor::Sparse(Box::new(SparseLdl::analyze(&mat)))
        };
        Self {
            n,
            dim,
            signs,
            work: mat.clone(),
            mat,
            diag_slots,
            factor,
            bumped_pivots: 0,
            static_reg: STATIC_REG,
        }
    }

    /// Assembles the matrix for scaling `w = s ./ z` and factors it.
    pub fn update(&mut self, qp: &QuadraticProgram, w: &[f64]) {
        let off = self.dim - w.len();
        for (j, &s) in self.diag_slots.iter().enumerate() {
            self.mat.val[s] = if j < self.n {
                qp.q_diag[j]
            } else if j >= off {
                -w[j - off]
            } else {
                0.0
            };
        }
        let mut delta = STATIC_REG;
        loop {
            self.bumped_pivots = self.factor_with(delta);
            if self.bumped_pivots == 0 || delta >= MAX_STATIC_REG {
                break;
            }
            delta *= REG_GROWTH;
        }
        self.static_reg = delta;
    }

    fn factor_with(&mut self, delta: f64) -> usize {
        self.work.val.copy_from_slice(&self.mat.val);
        for (j, &s) in self.diag_slots.iter().enumerate() {
            self.work.val[s] += self.signs[j] * delta;
        }
        let reg = PivotRegularization::default();
        match &mut self.factor {
            Factor::Dense { ldl, perm } => {
                let full = self.work.to_dense();
                let n = self.dim;
                let mut permuted = vec![0.0; n * n];
                for (i, &oi) in perm.iter().enumerate() {
                    for (j, &oj) in perm.iter().enumerate() {
                        permuted[i * n + j] = full[oi * n + oj];
                    }
                }
                let signs: Vec<f64> = perm.iter().map(|&o| self.signs[o]).collect();
                ldl.factor(&permuted, &signs, reg)
            }
            Factor::Sparse(f) => f.factor(&self.work, &self.signs, reg),
        }
    }

    fn raw_solve(&self, x: &mut [f64]) {
        match &self.factor {
            Factor::Dense { ldl, perm } => {
                let mut px: Vec<f64> = perm.iter().map(|&o| x[o]).collect();
                ldl.solve(&mut px);
                for (&o, v) in perm.iter().zip(px) {
                    x[o] = v;
                }
            }
            Factor::Sparse(f) => f.solve(x),
        }
    }

    /// Solves with iterative refinement; `rhs` is overwritten by the solution.
    pub fn solve(&self, rhs: &mut [f64]) {
        let b = rhs.to_vec();
        self.raw_solve(rhs);
        let mut r = vec![0.0; self.dim];
        let mut prev = rhs.to_vec();
        let bnorm = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut last = f64::INFINITY;
        for _ in 0..REFINE_STEPS {
            self.mat.sym_mul(rhs, &mut r);
            let mut rnorm: f64 = 0.0;
            for (ri, bi) in r.iter_mut().zip(&b) {
                *ri = bi - *ri;
                rnorm = rnorm.max(ri.abs());
            }
            if rnorm >= last {
                rhs.copy_from_slice(&prev);
                break;
            }
            if rnorm <= REFINE_TOL * (1.0 + bnorm) {
                break;
            }
            last = rnorm;
            prev.copy_from_slice(rhs);
            self.raw_solve(&mut r);
            for (x, dx) in rhs.iter_mut().zip(&r) {
                *x += dx;
            }
        }
    }
}
