//! Standard-form convex QP with a diagonal Hessian:
//!
//! ```text
//! minimize    ½ xᵀ diag(q) x + cᵀx + constant
//! subject to  A x  = b
//!             G x <= h
//! ```

use alloc::vec;
use alloc::vec::Vec;

/// Compressed sparse rows.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseRows {
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub col: Vec<usize>,
    pub val: Vec<f64>,
}

impl SparseRows {
    pub fn new(ncols: usize) -> Self {
        Self {
            ncols,
            row_ptr: vec![0],
            col: Vec::new(),
            val: Vec::new(),
        }
    }

    pub fn nrows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.val.len()
    }

    /// Appends a row; duplicate columns are summed, zeros dropped.
    pub fn push_row(&mut self, entries: &[(usize, f64)]) {
        let mut sorted: Vec<(usize, f64)> = entries.to_vec();
        sorted.sort_by_key(|e| e.0);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(sorted.len());
        for (c, v) in sorted {
            assert!(c < self.ncols, "column {c} out of range");
            match merged.last_mut() {
                Some(last) if last.0 == c => last.1 += v,
                _ => merged.push((c, v)),
            }
        }
        for (c, v) in merged {
            if v != 0.0 {
                self.col.push(c);
                self.val.push(v);
            }
        }
        self.row_ptr.push(self.col.len());
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.col[lo..hi].iter().copied().zip(self.val[lo..hi].iter().copied())
    }

    pub fn row_dot(&self, i: usize, x: &[f64]) -> f64 {
        self.row(i).map(|(c, v)| v * x[c]).sum()
    }

    /// `out = M x`
    pub fn mul(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.row_dot(i, x);
        }
    }

    /// `out += Mᵀ y`
    pub fn mul_t_add(&self, y: &[f64], out: &mut [f64]) {
        for (i, &yi) in y.iter().enumerate() {
            if yi != 0.0 {
                for (c, v) in self.row(i) {
                    out[c] += v * yi;
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProgram {
    pub q_diag: Vec<f64>,
    pub c: Vec<f64>,
    pub constant: f64,
    pub eq: SparseRows,
    pub eq_rhs: Vec<f64>,
    pub ineq: SparseRows,
    pub ineq_rhs: Vec<f64>,
}

impl QuadraticProgram {
    pub fn new(nvars: usize) -> Self {
        Self {
            q_diag: vec![0.0; nvars],
            c: vec![0.0; nvars],
            constant: 0.0,
            eq: SparseRows::new(nvars),
            eq_rhs: Vec::new(),
            ineq: SparseRows::new(nvars),
            ineq_rhs: Vec::new(),
        }
    }

    pub fn nvars(&self) -> usize {
        self.c.len()
    }

    pub fn n_eq(&self) -> usize {
        self.eq_rhs.len()
    }

    pub fn n_ineq(&self) -> usize {
        self.ineq_rhs.len()
    }

    pub fn add_eq(&mut self, entries: &[(usize, f64)], rhs: f64) -> usize {
        self.eq.push_row(entries);
        self.eq_rhs.push(rhs);
        self.eq_rhs.len() - 1
    }

    pub fn add_ineq(&mut self, entries: &[(usize, f64)], rhs: f64) -> usize {
        self.ineq.push_row(entries);
        self.ineq_rhs.push(rhs);
        self.ineq_rhs.len() - 1
    }

    /// `½xᵀQx + cᵀx + constant`
    pub fn objective(&self, x: &[f64]) -> f64 {
        let mut acc = self.constant;
        for ((&q, &c), &xi) in self.q_diag.iter().zip(&self.c).zip(x) {
            acc += (0.5 * q * xi + c) * xi;
        }
        acc
    }

    /// Signed equality residuals `Ax - b`.
    pub fn eq_residuals(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n_eq())
            .map(|i| self.eq.row_dot(i, x) - self.eq_rhs[i])
            .collect()
    }

    /// Signed inequality values `Gx - h`; positive entries are violations.
    pub fn ineq_residuals(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n_ineq())
            .map(|i| self.ineq.row_dot(i, x) - self.ineq_rhs[i])
            .collect()
    }

    /// Largest constraint violation in the max norm.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let eq = self.eq_residuals(x).into_iter().map(f64::abs);
        let ineq = self.ineq_residuals(x).into_iter().map(|v| v.max(0.0));
        eq.chain(ineq).fold(0.0, f64::max)
    }
}
