//! Convex QP solver with certified infeasibility detection.
//!
//! The main solver is a primal-dual interior-point method on the homogeneous
//! self-dual embedding with Mehrotra predictor-corrector steps. An ADMM
//! solver with independent linear algebra is provided as a low-accuracy
//! cross-check.

mod ipm;
mod kkt;
pub mod linalg;
pub mod oracle;

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::program::{ConvexProgram, RowLabel};
use crate::qp::QuadraticProgram;

pub use kkt::DENSE_KKT_LIMIT;
pub use oracle::{oracle_solve, oracle_solve_qp, OracleResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LinearSolver {
    /// Dense below a KKT dimension of [`DENSE_KKT_LIMIT`], sparse otherwise.
    #[default]
    Auto,
    Dense,
    Sparse,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// Relative duality-gap tolerance.
    pub tol_gap: f64,
    /// Absolute primal feasibility tolerance.
    pub tol_feas: f64,
    /// Certificate acceptance threshold for infeasibility and unboundedness.
    pub infeasibility_threshold: f64,
    pub linear_solver: LinearSolver,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 200,
            tol_gap: 1e-8,
            tol_feas: 1e-8,
            infeasibility_threshold: 1e-6,
            linear_solver: LinearSolver::Auto,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), &'static str> {
        if self.max_iters == 0 {
            return Err("max_iters must be at least 1");
        }
        if !(self.tol_gap > 0.0 && self.tol_feas > 0.0 && self.infeasibility_threshold > 0.0) {
            return Err("tolerances must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
    IterLimit,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Optimal => "optimal",
            Status::Infeasible => "infeasible",
            Status::Unbounded => "unbounded",
            Status::IterLimit => "iter_limit",
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Evidence attached to a non-optimal status.
#[derive(Debug, Clone, PartialEq)]
pub enum Certificate {
    /// `Aᵀy + Gᵀz ≈ 0`, `z >= 0`, `bᵀy + hᵀz = -1`.
    PrimalInfeasible { y: Vec<f64>, z: Vec<f64> },
    /// `Qx ≈ 0`, `Ax ≈ 0`, `Gx <= 0`, `cᵀx = -1`.
    DualInfeasible { x: Vec<f64> },
}

/// Per-iteration diagnostics on the normalized iterate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationLog {
    pub iter: usize,
    pub pobj: f64,
    pub dobj: f64,
    pub pres: f64,
    pub dres: f64,
    pub gap: f64,
    pub mu: f64,
    pub tau: f64,
    pub kappa: f64,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub status: Status,
    pub x: Vec<f64>,
    /// Multipliers of the equality rows.
    pub y: Vec<f64>,
    /// Multipliers of the inequality rows, nonnegative.
    pub z: Vec<f64>,
    /// Inequality slacks `h - Gx`.
    pub s: Vec<f64>,
    pub objective: f64,
    pub dual_objective: f64,
    /// Relative duality gap.
    pub gap: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iters: usize,
    pub certificate: Option<Certificate>,
    pub history: Vec<IterationLog>,
}

impl Solution {
    pub fn is_optimal(&self) -> bool {
        self.status == Status::Optimal
    }
}

/// Solves a standard-form QP.
pub fn solve_qp(qp: &QuadraticProgram, cfg: &SolverConfig) -> Solution {
    ipm::solve(qp, cfg)
}

/// Solves the program built for a placement instance.
pub fn solve(prog: &ConvexProgram, cfg: &SolverConfig) -> Solution {
    ipm::solve(&prog.qp, cfg)
}

/// Optimality certificate of a solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktReport {
    /// `‖Qx + c + Aᵀy + Gᵀz‖∞`
    pub stationarity: f64,
    /// `‖Ax - b‖∞`
    pub primal_equality: f64,
    /// `max(Gx - h, 0)`
    pub primal_inequality: f64,
    /// `max |z_i (h - Gx)_i|`
    pub complementarity: f64,
    /// `min z_i`; nonnegative when dual feasible.
    pub min_dual: f64,
}

impl KktReport {
    /// Largest residual, counting negative multipliers as violations.
    pub fn max_residual(&self) -> f64 {
        self.stationarity
            .max(self.primal_equality)
            .max(self.primal_inequality)
            .max(self.complementarity)
            .max(-self.min_dual)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_residual() <= tol
    }
}

pub fn kkt_report_qp(qp: &QuadraticProgram, sol: &Solution) -> KktReport {
    let x = &sol.x;
    let mut grad: Vec<f64> = qp
        .q_diag
        .iter()
        .zip(&qp.c)
        .zip(x)
        .map(|((q, c), xi)| q * xi + c)
        .collect();
    qp.eq.mul_t_add(&sol.y, &mut grad);
    qp.ineq.mul_t_add(&sol.z, &mut grad);
    let slack: Vec<f64> = qp.ineq_residuals(x).into_iter().map(|v| -v).collect();
    KktReport {
        stationarity: grad.iter().fold(0.0, |m, v| m.max(v.abs())),
        primal_equality: qp.eq_residuals(x).iter().fold(0.0, |m, v| m.max(v.abs())),
        primal_inequality: slack.iter().fold(0.0, |m, v| m.max(-v)),
        complementarity: slack.iter().zip(&sol.z).fold(0.0, |m, (s, z)| m.max((s * z).abs())),
        min_dual: sol.z.iter().copied().fold(f64::INFINITY, f64::min),
    }
}

pub fn kkt_report(prog: &ConvexProgram, sol: &Solution) -> KktReport {
    kkt_report_qp(&prog.qp, sol)
}

/// Violation of the conditions a certificate must satisfy, normalized so
/// that its defining product is `-1`. Zero for an exact certificate.
pub fn certificate_residual(qp: &QuadraticProgram, cert: &Certificate) -> f64 {
    match cert {
        Certificate::PrimalInfeasible { y, z } => {
            let mut r = vec![0.0; qp.nvars()];
            qp.eq.mul_t_add(y, &mut r);
            qp.ineq.mul_t_add(z, &mut r);
            let dot: f64 = y
                .iter()
                .zip(&qp.eq_rhs)
                .chain(z.iter().zip(&qp.ineq_rhs))
                .map(|(a, b)| a * b)
                .sum();
            if dot >= 0.0 {
                return f64::INFINITY;
            }
            let stationarity = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let sign = z.iter().fold(0.0f64, |m, v| m.max(-v));
            stationarity.max(sign) / -dot
        }
        Certificate::DualInfeasible { x } => {
            let dot: f64 = qp.c.iter().zip(x).map(|(a, b)| a * b).sum();
            if dot >= 0.0 {
                return f64::INFINITY;
            }
            let qx = qp.q_diag.iter().zip(x).fold(0.0f64, |m, (q, v)| m.max((q * v).abs()));
            let mut eq = vec![0.0; qp.n_eq()];
            qp.eq.mul(x, &mut eq);
            let mut gx = vec![0.0; qp.n_ineq()];
            qp.ineq.mul(x, &mut gx);
            let worst = eq
                .iter()
                .fold(qx, |m, v| m.max(v.abs()))
                .max(gx.iter().fold(0.0f64, |m, v| m.max(*v)));
            worst / -dot
        }
    }
}

/// Multiplier of every labelled row: equalities first, then inequalities.
pub fn labelled_duals<'a>(prog: &'a ConvexProgram, sol: &'a Solution) -> impl Iterator<Item = (RowLabel, f64)> + 'a {
    prog.eq_labels
        .iter()
        .copied()
        .zip(sol.y.iter().copied())
        .chain(prog.ineq_labels.iter().copied().zip(sol.z.iter().copied()))
}
