//! Symmetric quasi-definite LDLᵀ factorizations.
//!
//! Both factorizations take the upper triangle of a symmetric matrix and an
//! expected pivot sign per column. A pivot with the wrong sign or a magnitude
//! below `threshold` is replaced by `sign * delta`; the number of such
//! replacements is reported so the caller can judge the factor.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

/// Pivot regularization applied during numeric factorization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PivotRegularization {
    pub threshold: f64,
    pub delta: f64,
}

impl Default for PivotRegularization {
    fn default() -> Self {
        Self {
            threshold: 1e-13,
            delta: 2e-7,
        }
    }
}

fn regularize(d: f64, sign: f64, reg: PivotRegularization, count: &mut usize) -> f64 {
    if !(d * sign > reg.threshold) {
        *count += 1;
        sign * reg.delta
    } else {
        d
    }
}

/// Upper-triangular compressed sparse column matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct UpperCsc {
    pub n: usize,
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<usize>,
    pub val: Vec<f64>,
}

impl UpperCsc {
    /// Builds the pattern from `(row, col)` pairs, which may be given in either
    /// triangle and may repeat. Returns the matrix (zero values) and, for each
    /// input pair, the slot it maps to. The diagonal is always present.
    pub fn from_pattern(n: usize, entries: &[(usize, usize)]) -> (Self, Vec<usize>) {
        let mut cols: Vec<BTreeSet<usize>> = (0..n).map(|j| BTreeSet::from([j])).collect();
        for &(i, j) in entries {
            let (r, c) = if i <= j { (i, j) } else { (j, i) };
            cols[c].insert(r);
        }
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut row_idx = Vec::new();
        col_ptr.push(0);
        for set in &cols {
            row_idx.extend(set.iter().copied());
            col_ptr.push(row_idx.len());
        }
        let m = Self {
            n,
            col_ptr,
            val: vec![0.0; row_idx.len()],
            row_idx,
        };
        let slots = entries
            .iter()
            .map(|&(i, j)| {
                let (r, c) = if i <= j { (i, j) } else { (j, i) };
                m.slot(r, c).expect("entry is in the pattern")
            })
            .collect();
        (m, slots)
    }

    pub fn slot(&self, row: usize, col: usize) -> Option<usize> {
        let (lo, hi) = (self.col_ptr[col], self.col_ptr[col + 1]);
        self.row_idx[lo..hi].binary_search(&row).ok().map(|k| lo + k)
    }

    pub fn diag_slot(&self, j: usize) -> usize {
        self.col_ptr[j + 1] - 1
    }

    /// `y = K x` for the full symmetric matrix.
    pub fn sym_mul(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..self.n {
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                let i = self.row_idx[p];
                let v = self.val[p];
                y[i] += v * x[j];
                if i != j {
                    y[j] += v * x[i];
                }
            }
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.n;
        let mut a = vec![0.0; n * n];
        for j in 0..n {
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                let i = self.row_idx[p];
                a[i * n + j] = self.val[p];
                a[j * n + i] = self.val[p];
            }
        }
        a
    }
}

/// Dense LDLᵀ without pivoting, row-major storage.
#[derive(Debug, Clone)]
pub struct DenseLdl {
    n: usize,
    l: Vec<f64>,
    d: Vec<f64>,
}

impl DenseLdl {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            l: vec![0.0; n * n],
            d: vec![0.0; n],
        }
    }

    /// Factors the dense symmetric matrix `a` (row-major). Returns the number
    /// of regularized pivots.
    pub fn factor(&mut self, a: &[f64], signs: &[f64], reg: PivotRegularization) -> usize {
        let n = self.n;
        let mut bumped = 0;
        self.l.copy_from_slice(a);
        for j in 0..n {
            let mut dj = self.l[j * n + j];
            for k in 0..j {
                let ljk = self.l[j * n + k];
                dj -= ljk * ljk * self.d[k];
            }
            dj = regularize(dj, signs[j], reg, &mut bumped);
            self.d[j] = dj;
            self.l[j * n + j] = 1.0;
            for i in j + 1..n {
                let mut v = self.l[i * n + j];
                let (ri, rj) = (i * n, j * n);
                for k in 0..j {
                    v -= self.l[ri + k] * self.l[rj + k] * self.d[k];
                }
                self.l[ri + j] = v / dj;
            }
        }
        bumped
    }

    pub fn solve(&self, x: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let row = &self.l[i * n..i * n + i];
            let s: f64 = row.iter().zip(&x[..i]).map(|(a, b)| a * b).sum();
            x[i] -= s;
        }
        for i in 0..n {
            x[i] /= self.d[i];
        }
        for i in (0..n).rev() {
            let mut s = 0.0;
            for k in i + 1..n {
                s += self.l[k * n + i] * x[k];
            }
            x[i] -= s;
        }
    }

    pub fn diag(&self) -> &[f64] {
        &self.d
    }
}

/// Greedy minimum-degree ordering on the graph of an upper-triangular
/// pattern. Ties go to the lowest index. Returns `perm` with
/// `perm[new] = old`.
pub fn minimum_degree(m: &UpperCsc) -> Vec<usize> {
    let n = m.n;
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for j in 0..n {
        for p in m.col_ptr[j]..m.col_ptr[j + 1] {
            let i = m.row_idx[p];
            if i != j {
                adj[i].insert(j);
                adj[j].insert(i);
            }
        }
    }
    let mut by_degree: BTreeSet<(usize, usize)> = (0..n).map(|v| (adj[v].len(), v)).collect();
    let mut perm = Vec::with_capacity(n);
    while let Some((_, v)) = by_degree.pop_first() {
        perm.push(v);
        let nbrs: Vec<usize> = adj[v].iter().copied().collect();
        for &u in &nbrs {
            by_degree.remove(&(adj[u].len(), u));
            adj[u].remove(&v);
        }
        for (a, &u) in nbrs.iter().enumerate() {
            for &w in &nbrs[a + 1..] {
                adj[u].insert(w);
                adj[w].insert(u);
            }
        }
        for &u in &nbrs {
            by_degree.insert((adj[u].len(), u));
        }
        adj[v].clear();
    }
    perm
}

/// Sparse up-looking LDLᵀ with a fill-reducing symmetric permutation.
#[derive(Debug, Clone)]
pub struct SparseLdl {
    n: usize,
    /// `perm[new] = old`
    perm: Vec<usize>,
    /// Permuted upper-triangular matrix and the map from original slots.
    pa: UpperCsc,
    slot_map: Vec<usize>,
    etree: Vec<Option<usize>>,
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
    d: Vec<f64>,
    dinv: Vec<f64>,
    signs: Vec<f64>,
}

impl SparseLdl {
    /// Symbolic analysis of the pattern of `a`.
    pub fn analyze(a: &UpperCsc) -> Self {
        let n = a.n;
        let perm = minimum_degree(a);
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut pairs = Vec::with_capacity(a.val.len());
        for j in 0..n {
            for p in a.col_ptr[j]..a.col_ptr[j + 1] {
                pairs.push((inv[a.row_idx[p]], inv[j]));
            }
        }
        let (pa, slot_map) = UpperCsc::from_pattern(n, &pairs);

        let mut etree = vec![None; n];
        let mut lnz = vec![0usize; n];
        let mut mark = vec![usize::MAX; n];
        for j in 0..n {
            mark[j] = j;
            for p in pa.col_ptr[j]..pa.col_ptr[j + 1] {
                let mut i = pa.row_idx[p];
                while mark[i] != j {
                    if etree[i].is_none() {
                        etree[i] = Some(j);
                    }
                    lnz[i] += 1;
                    mark[i] = j;
                    i = etree[i].unwrap();
                }
            }
        }
        let mut lp = vec![0; n + 1];
        for i in 0..n {
            lp[i + 1] = lp[i] + lnz[i];
        }
        let nnz = lp[n];
        Self {
            n,
            perm,
            pa,
            slot_map,
            etree,
            lp,
            li: vec![0; nnz],
            lx: vec![0.0; nnz],
            d: vec![0.0; n],
            dinv: vec![0.0; n],
            signs: vec![1.0; n],
        }
    }

    pub fn nnz_l(&self) -> usize {
        self.lp[self.n]
    }

    /// Numeric factorization of `a`, which must share the analyzed pattern.
    /// `signs` is indexed by original position.
    pub fn factor(&mut self, a: &UpperCsc, signs: &[f64], reg: PivotRegularization) -> usize {
        let n = self.n;
        for (src, &dst) in self.slot_map.iter().enumerate() {
            self.pa.val[dst] = a.val[src];
        }
        for (new, &old) in self.perm.iter().enumerate() {
            self.signs[new] = signs[old];
        }
        let pa = &self.pa;
        let mut bumped = 0;
        let mut y_vals = vec![0.0; n];
        let mut y_used = vec![false; n];
        let mut y_idx = vec![0usize; n];
        let mut elim = vec![0usize; n];
        let mut next_space: Vec<usize> = self.lp[..n].to_vec();

        for k in 0..n {
            let mut nnz_y = 0;
            self.d[k] = 0.0;
            for p in pa.col_ptr[k]..pa.col_ptr[k + 1] {
                let b = pa.row_idx[p];
                if b == k {
                    self.d[k] = pa.val[p];
                    continue;
                }
                y_vals[b] = pa.val[p];
                if !y_used[b] {
                    y_used[b] = true;
                    elim[0] = b;
                    let mut ne = 1;
                    let mut next = self.etree[b];
                    while let Some(nx) = next {
                        if nx >= k || y_used[nx] {
                            break;
                        }
                        y_used[nx] = true;
                        elim[ne] = nx;
                        ne += 1;
                        next = self.etree[nx];
                    }
                    while ne > 0 {
                        ne -= 1;
                        y_idx[nnz_y] = elim[ne];
                        nnz_y += 1;
                    }
                }
            }
            for i in (0..nnz_y).rev() {
                let c = y_idx[i];
                let slot = next_space[c];
                let yc = y_vals[c];
                for q in self.lp[c]..slot {
                    y_vals[self.li[q]] -= self.lx[q] * yc;
                }
                self.li[slot] = k;
                let lv = yc * self.dinv[c];
                self.lx[slot] = lv;
                self.d[k] -= yc * lv;
                next_space[c] += 1;
                y_vals[c] = 0.0;
                y_used[c] = false;
            }
            self.d[k] = regularize(self.d[k], self.signs[k], reg, &mut bumped);
            self.dinv[k] = 1.0 / self.d[k];
        }
        bumped
    }

    pub fn solve(&self, x: &mut [f64]) {
        let n = self.n;
        let mut w: Vec<f64> = self.perm.iter().map(|&old| x[old]).collect();
        for i in 0..n {
            let wi = w[i];
            for q in self.lp[i]..self.lp[i + 1] {
                w[self.li[q]] -= self.lx[q] * wi;
            }
        }
        for i in 0..n {
            w[i] *= self.dinv[i];
        }
        for i in (0..n).rev() {
            let mut s = 0.0;
            for q in self.lp[i]..self.lp[i + 1] {
                s += self.lx[q] * w[self.li[q]];
            }
            w[i] -= s;
        }
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = w[new];
        }
    }
}
