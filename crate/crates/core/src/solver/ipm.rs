//! Homogeneous self-dual embedding:
//!
//! ```text
//! Qx + Aᵀy + Gᵀz + cτ        = 0
//! Ax - bτ                     = 0
//! Gx + s - hτ                 = 0
//! κ + cᵀx + bᵀy + hᵀz + xᵀQx/τ = 0
//! s, z, τ, κ >= 0
//! ```

use alloc::vec;
use alloc::vec::Vec;

use super::kkt::KktSystem;
use super::{Certificate, IterationLog, Solution, SolverConfig, Status};
use crate::qp::QuadraticProgram;

const STEP_FRACTION: f64 = 0.99;
const MIN_STEP: f64 = 1e-10;
const MAX_STALLS: usize = 5;

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Largest `α <= 1` keeping `v + α dv >= 0`.
fn max_step(v: &[f64], dv: &[f64]) -> f64 {
    v.iter()
        .zip(dv)
        .filter(|(_, d)| **d < 0.0)
        .fold(1.0, |a, (x, d)| a.min(-x / d))
}

fn finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

struct Iterate {
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    s: Vec<f64>,
    tau: f64,
    kappa: f64,
}

struct Direction {
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    s: Vec<f64>,
    tau: f64,
    kappa: f64,
}

struct Residuals {
    rx: Vec<f64>,
    ry: Vec<f64>,
    rz: Vec<f64>,
    rtau: f64,
}

struct Snapshot {
    merit: f64,
    sol: Solution,
}

struct Ipm<'a> {
    qp: &'a QuadraticProgram,
    cfg: &'a SolverConfig,
    kkt: KktSystem,
    n: usize,
    p: usize,
    m: usize,
}

impl<'a> Ipm<'a> {
    fn g_mul(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        self.qp.ineq.mul(x, &mut out);
        out
    }

    fn residuals(&self, it: &Iterate) -> (Residuals, f64) {
        let qp = self.qp;
        let mut rx: Vec<f64> = (0..self.n).map(|j| qp.q_diag[j] * it.x[j] + qp.c[j] * it.tau).collect();
        qp.eq.mul_t_add(&it.y, &mut rx);
        qp.ineq.mul_t_add(&it.z, &mut rx);
        let mut ry = vec![0.0; self.p];
        qp.eq.mul(&it.x, &mut ry);
        for (r, b) in ry.iter_mut().zip(&qp.eq_rhs) {
            *r -= b * it.tau;
        }
        let mut rz = self.g_mul(&it.x);
        for i in 0..self.m {
            rz[i] += it.s[i] - qp.ineq_rhs[i] * it.tau;
        }
        let xqx: f64 = qp.q_diag.iter().zip(&it.x).map(|(q, x)| q * x * x).sum();
        let rtau = it.kappa + dot(&qp.c, &it.x) + dot(&qp.eq_rhs, &it.y) + dot(&qp.ineq_rhs, &it.z) + xqx / it.tau;
        (Residuals { rx, ry, rz, rtau }, xqx)
    }

    /// Solves the augmented system for `[r1; r2; r3]`.
    fn kkt_solve(&self, r1: Vec<f64>, r2: &[f64], r3: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut rhs = r1;
        rhs.extend_from_slice(r2);
        rhs.extend_from_slice(r3);
        self.kkt.solve(&mut rhs);
        let z = rhs.split_off(self.n + self.p);
        let y = rhs.split_off(self.n);
        (rhs, y, z)
    }

    #[allow(clippy::too_many_arguments)]
    fn direction(
        &self,
        it: &Iterate,
        res: &Residuals,
        u1: &(Vec<f64>, Vec<f64>, Vec<f64>),
        eta: f64,
        rc: &[f64],
        rc_tau: f64,
        xi_q: &[f64],
        xqx_norm: f64,
    ) -> Direction {
        let (m, qp) = (self.m, self.qp);
        let r3: Vec<f64> = (0..m).map(|i| -eta * res.rz[i] - rc[i] / it.z[i]).collect();
        let r1: Vec<f64> = res.rx.iter().map(|v| -eta * v).collect();
        let r2: Vec<f64> = res.ry.iter().map(|v| -eta * v).collect();
        let u2 = self.kkt_solve(r1, &r2, &r3);

        let coef =
            |u: &(Vec<f64>, Vec<f64>, Vec<f64>)| dot(xi_q, &u.0) + dot(&qp.eq_rhs, &u.1) + dot(&qp.ineq_rhs, &u.2);
        let num = -eta * res.rtau - rc_tau / it.tau - coef(&u2);
        let den = coef(u1) - xqx_norm - it.kappa / it.tau;
        let dtau = num / den;
        let dx: Vec<f64> = u2.0.iter().zip(&u1.0).map(|(a, b)| a + dtau * b).collect();
        let dy: Vec<f64> = u2.1.iter().zip(&u1.1).map(|(a, b)| a + dtau * b).collect();
        let dz: Vec<f64> = u2.2.iter().zip(&u1.2).map(|(a, b)| a + dtau * b).collect();
        let ds: Vec<f64> = (0..m).map(|i| (rc[i] - it.s[i] * dz[i]) / it.z[i]).collect();
        let dkappa = (rc_tau - it.kappa * dtau) / it.tau;
        Direction {
            x: dx,
            y: dy,
            z: dz,
            s: ds,
            tau: dtau,
            kappa: dkappa,
        }
    }

    fn step_length(&self, it: &Iterate, dir: &Direction) -> f64 {
        let mut a = max_step(&it.s, &dir.s).min(max_step(&it.z, &dir.z));
        if dir.tau < 0.0 {
            a = a.min(-it.tau / dir.tau);
        }
        if dir.kappa < 0.0 {
            a = a.min(-it.kappa / dir.kappa);
        }
        a
    }

    fn initial_point(&mut self) -> Iterate {
        let (m, qp) = (self.m, self.qp);
        let ones = vec![1.0; m];
        self.kkt.update(qp, &ones);
        let r1: Vec<f64> = qp.c.iter().map(|c| -c).collect();
        let (x, y, _) = self.kkt_solve(r1, &qp.eq_rhs, &qp.ineq_rhs);
        let gx = self.g_mul(&x);
        let zt: Vec<f64> = (0..m).map(|i| gx[i] - qp.ineq_rhs[i]).collect();
        let mut s: Vec<f64> = zt.iter().map(|v| -v).collect();
        let mut z = zt;
        for v in [&mut s, &mut z] {
            let shift = -v.iter().copied().fold(f64::INFINITY, f64::min);
            if shift >= 0.0 {
                v.iter_mut().for_each(|e| *e += 1.0 + shift);
            }
        }
        Iterate {
            x,
            y,
            z,
            s,
            tau: 1.0,
            kappa: 1.0,
        }
    }

    fn snapshot(&self, it: &Iterate, status: Status, log: &IterationLog, iters: usize) -> Solution {
        let t = it.tau;
        Solution {
            status,
            x: it.x.iter().map(|v| v / t).collect(),
            y: it.y.iter().map(|v| v / t).collect(),
            z: it.z.iter().map(|v| v / t).collect(),
            s: it.s.iter().map(|v| v / t).collect(),
            objective: log.pobj,
            dual_objective: log.dobj,
            gap: log.gap,
            primal_residual: log.pres,
            dual_residual: log.dres,
            iters,
            certificate: None,
            history: Vec::new(),
        }
    }

    fn infeasibility(&self, it: &Iterate) -> Option<Certificate> {
        let qp = self.qp;
        let thr = self.cfg.infeasibility_threshold;
        if it.tau > it.kappa {
            return None;
        }
        let by_hz = dot(&qp.eq_rhs, &it.y) + dot(&qp.ineq_rhs, &it.z);
        if by_hz < 0.0 {
            let scale = -by_hz;
            let mut aty = vec![0.0; self.n];
            qp.eq.mul_t_add(&it.y, &mut aty);
            qp.ineq.mul_t_add(&it.z, &mut aty);
            if inf_norm(&aty) / scale <= thr {
                return Some(Certificate::PrimalInfeasible {
                    y: it.y.iter().map(|v| v / scale).collect(),
                    z: it.z.iter().map(|v| v / scale).collect(),
                });
            }
        }
        let cx = dot(&qp.c, &it.x);
        if cx < 0.0 {
            let scale = -cx;
            let qx: Vec<f64> = qp.q_diag.iter().zip(&it.x).map(|(q, x)| q * x).collect();
            let mut ax = vec![0.0; self.p];
            qp.eq.mul(&it.x, &mut ax);
            let gxs: Vec<f64> = self.g_mul(&it.x).iter().zip(&it.s).map(|(g, s)| g + s).collect();
            if inf_norm(&qx).max(inf_norm(&ax)).max(inf_norm(&gxs)) / scale <= thr {
                return Some(Certificate::DualInfeasible {
                    x: it.x.iter().map(|v| v / scale).collect(),
                });
            }
        }
        None
    }
}

pub(crate) fn solve(qp: &QuadraticProgram, cfg: &SolverConfig) -> Solution {
    let (n, p, m) = (qp.nvars(), qp.n_eq(), qp.n_ineq());
    let mut ipm = Ipm {
        qp,
        cfg,
        kkt: KktSystem::new(qp, cfg.linear_solver),
        n,
        p,
        m,
    };
    let mut it = ipm.initial_point();
    let mut history: Vec<IterationLog> = Vec::new();
    let mut best: Option<Snapshot> = None;
    let mut stalls = 0;
    let mut last_step = 0.0;
    let data_norm = inf_norm(&qp.c);

    let finish = |mut sol: Solution, history: Vec<IterationLog>| {
        sol.history = history;
        sol
    };

    for iter in 0..=cfg.max_iters {
        let (res, xqx) = ipm.residuals(&it);
        let t = it.tau;
        let pobj = 0.5 * xqx / (t * t) + dot(&qp.c, &it.x) / t + qp.constant;
        let dobj = -0.5 * xqx / (t * t) - (dot(&qp.eq_rhs, &it.y) + dot(&qp.ineq_rhs, &it.z)) / t + qp.constant;
        let pres = inf_norm(&res.ry).max(inf_norm(&res.rz)) / t;
        let dres = inf_norm(&res.rx) / t;
        let gap = (pobj - dobj).abs() / 1.0f64.max(pobj.abs().min(dobj.abs()));
        let mu = (dot(&it.s, &it.z) + it.tau * it.kappa) / (m + 1) as f64;
        let compl = it.s.iter().zip(&it.z).fold(0.0f64, |a, (s, z)| a.max(s * z)) / (t * t);
        let log = IterationLog {
            iter,
            pobj,
            dobj,
            pres,
            dres,
            gap,
            mu,
            tau: it.tau,
            kappa: it.kappa,
            step: last_step,
        };
        history.push(log);

        let healthy = pobj.is_finite() && dobj.is_finite() && pres.is_finite() && dres.is_finite();
        if healthy {
            let merit = (pres / cfg.tol_feas)
                .max(dres / (cfg.tol_feas * (1.0 + data_norm)))
                .max(gap / cfg.tol_gap)
                .max(compl / cfg.tol_gap);
            if best.as_ref().is_none_or(|b| merit < b.merit) {
                best = Some(Snapshot {
                    merit,
                    sol: ipm.snapshot(&it, Status::IterLimit, &log, iter),
                });
            }
            let converged = pres <= cfg.tol_feas
                && dres <= cfg.tol_feas * (1.0 + data_norm)
                && gap <= cfg.tol_gap
                && compl <= cfg.tol_gap;
            if converged {
                return finish(ipm.snapshot(&it, Status::Optimal, &log, iter), history);
            }
            if let Some(cert) = ipm.infeasibility(&it) {
                let status = match cert {
                    Certificate::PrimalInfeasible { .. } => Status::Infeasible,
                    Certificate::DualInfeasible { .. } => Status::Unbounded,
                };
                let mut sol = ipm.snapshot(&it, status, &log, iter);
                sol.certificate = Some(cert);
                return finish(sol, history);
            }
        }
        if !healthy || iter == cfg.max_iters || stalls >= MAX_STALLS {
            break;
        }

        let w: Vec<f64> = (0..m).map(|i| it.s[i] / it.z[i]).collect();
        ipm.kkt.update(qp, &w);
        let xi_q: Vec<f64> = (0..n).map(|j| 2.0 * qp.q_diag[j] * it.x[j] / t + qp.c[j]).collect();
        let xqx_norm = xqx / (t * t);

        let r1: Vec<f64> = qp.c.iter().map(|c| -c).collect();
        let u1 = ipm.kkt_solve(r1, &qp.eq_rhs, &qp.ineq_rhs);

        let rc_aff: Vec<f64> = (0..m).map(|i| -it.s[i] * it.z[i]).collect();
        let aff = ipm.direction(&it, &res, &u1, 1.0, &rc_aff, -it.tau * it.kappa, &xi_q, xqx_norm);
        let alpha_aff = ipm.step_length(&it, &aff).min(1.0);
        let sigma = (1.0 - alpha_aff) * (1.0 - alpha_aff) * (1.0 - alpha_aff);

        let rc: Vec<f64> = (0..m)
            .map(|i| -it.s[i] * it.z[i] + sigma * mu - aff.s[i] * aff.z[i])
            .collect();
        let rc_tau = -it.tau * it.kappa + sigma * mu - aff.tau * aff.kappa;
        let dir = ipm.direction(&it, &res, &u1, 1.0 - sigma, &rc, rc_tau, &xi_q, xqx_norm);
        if !(finite(&dir.x) && finite(&dir.y) && finite(&dir.z) && finite(&dir.s)) || !dir.tau.is_finite() {
            break;
        }
        let alpha = (STEP_FRACTION * ipm.step_length(&it, &dir)).min(1.0);
        if alpha < MIN_STEP {
            stalls += 1;
        } else {
            stalls = 0;
        }
        last_step = alpha;
        for (v, dv) in it.x.iter_mut().zip(&dir.x) {
            *v += alpha * dv;
        }
        for (v, dv) in it.y.iter_mut().zip(&dir.y) {
            *v += alpha * dv;
        }
        for (v, dv) in it.z.iter_mut().zip(&dir.z) {
            *v += alpha * dv;
        }
        for (v, dv) in it.s.iter_mut().zip(&dir.s) {
            *v += alpha * dv;
        }
        it.tau += alpha * dir.tau;
        it.kappa += alpha * dir.kappa;
    }

    let mut sol = match best {
        Some(b) => b.sol,
        None => Solution {
            status: Status::IterLimit,
            x: vec![0.0; n],
            y: vec![0.0; p],
            z: vec![0.0; m],
            s: vec![0.0; m],
            objective: f64::NAN,
            dual_objective: f64::NAN,
            gap: f64::NAN,
            primal_residual: f64::NAN,
            dual_residual: f64::NAN,
            iters: 0,
            certificate: None,
            history: Vec::new(),
        },
    };
    sol.iters = history.len().saturating_sub(1);
    finish(sol, history)
}
