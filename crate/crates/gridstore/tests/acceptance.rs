//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Derived thresholds are recomputed here by independent oracles: a greedy
//! storage simulation with bisection for the minimum caps and budgets, and
//! the upper concave hull of cumulative demand for the unconstrained
//! dispatch.

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use gridstore::campaign::{
    verify_counterexample, verify_theorem1, CampaignBounds, COUNTEREXAMPLE_P, COUNTEREXAMPLE_PI,
};
use gridstore::io::Model;
use gridstore::sweep::{linspace, run_sweep, SweepParam, SweepPlan, SweepPoint};
use gridstore_core::analytic::unconstrained_dispatch;
use gridstore_core::instances::{counterexample, pair_with, SQUARE_COST};
use gridstore_core::program::ConvexProgram;
use gridstore_core::{build, kkt_report, solve, BusId, Cap, CostPoly, ProblemSpec, Solution, SolverConfig, Status};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PROFILE: [f64; 4] = [9.0, 10.0, 0.0, 10.0];
const KKT_TOL: f64 = 1e-6;
const WEAK_DUALITY_TOL: f64 = 1e-9;
const CAMPAIGN_SEED: u64 = 1;

// ---- oracles -------------------------------------------------------------

/// Greedy periodic operation of a store of size `b` behind a link of
/// capacity `cap`, starting and ending empty: charge whatever the link has
/// spare, discharge whatever the load lacks.
fn greedy_feasible(d: &[f64], cap: f64, b: f64) -> bool {
    let mut level = 0.0f64;
    for &x in d {
        level += cap - x;
        if level < -1e-12 {
            return false;
        }
        level = level.min(b);
    }
    true
}

fn bisect(mut lo: f64, mut hi: f64, ok: impl Fn(f64) -> bool) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Smallest link capacity that serves `d` with storage budget `h`.
fn f_min_oracle(d: &[f64], h: f64) -> f64 {
    let top = d.iter().copied().fold(0.0, f64::max);
    bisect(0.0, top, |c| greedy_feasible(d, c, h))
}

/// Smallest budget that serves `d` through a link of capacity `cap`.
fn h_min_oracle(d: &[f64], cap: f64) -> Option<f64> {
    let total: f64 = d.iter().sum();
    greedy_feasible(d, cap, f64::INFINITY).then(|| bisect(0.0, total, |b| greedy_feasible(d, cap, b)))
}

/// Upper concave hull of `(t, D(t))`, evaluated at every integer `t`.
fn concave_hull(d: &[f64]) -> Vec<f64> {
    let mut pts = vec![(0.0, 0.0)];
    let mut acc = 0.0;
    for (t, &x) in d.iter().enumerate() {
        acc += x;
        pts.push(((t + 1) as f64, acc));
    }
    let mut hull: Vec<(f64, f64)> = Vec::new();
    for p in pts {
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            if (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0) >= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    (0..=d.len())
        .map(|t| {
            let t = t as f64;
            let w = hull.windows(2).find(|w| t <= w[1].0).unwrap();
            w[0].1 + (w[1].1 - w[0].1) * (t - w[0].0) / (w[1].0 - w[0].0)
        })
        .collect()
}

fn h_sat_oracle(d: &[f64]) -> f64 {
    let hull = concave_hull(d);
    let mut acc = 0.0;
    let mut best = 0.0f64;
    for (t, &x) in d.iter().enumerate() {
        acc += x;
        best = best.max(hull[t + 1] - acc);
    }
    best
}

fn max_prefix_average_oracle(d: &[f64]) -> f64 {
    let mut acc = 0.0;
    let mut best = f64::NEG_INFINITY;
    for (t, &x) in d.iter().enumerate() {
        acc += x;
        best = best.max(acc / (t + 1) as f64);
    }
    best
}

// ---- bookkeeping ---------------------------------------------------------

#[derive(Default)]
struct Hygiene {
    solves: usize,
    worst_kkt: f64,
    weak_duality_violations: usize,
}

impl Hygiene {
    fn record(&mut self, status: Status, objective: Option<f64>, dual: f64, residual: f64) {
        self.solves += 1;
        self.worst_kkt = self.worst_kkt.max(residual);
        if status == Status::Optimal {
            let p = objective.unwrap();
            if dual > p + WEAK_DUALITY_TOL * (1.0 + p.abs()) {
                self.weak_duality_violations += 1;
            }
        }
    }

    fn solution(&mut self, prog: &ConvexProgram, sol: &Solution) {
        let residual = match &sol.certificate {
            Some(cert) => gridstore_core::solver::certificate_residual(&prog.qp, cert),
            None => kkt_report(prog, sol).max_residual(),
        };
        self.record(
            sol.status,
            sol.is_optimal().then_some(sol.objective),
            sol.dual_objective,
            residual,
        );
    }

    fn point(&mut self, p: &SweepPoint) {
        self.record(p.status, p.objective, p.dual_objective, p.max_residual);
    }

    fn solve(&mut self, prog: &ConvexProgram) -> Solution {
        let sol = solve(prog, &SolverConfig::default());
        self.solution(prog, &sol);
        sol
    }
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

// ---- criteria ------------------------------------------------------------

fn counterexample_values(hy: &mut Hygiene) -> Outcome {
    let start = Instant::now();
    let r = verify_counterexample();
    let elapsed = start.elapsed();
    hy.point(&r.p);
    hy.point(&r.pi);
    let (p, pi) = (r.p.objective.unwrap_or(f64::NAN), r.pi.objective.unwrap_or(f64::NAN));
    let pass = (p - COUNTEREXAMPLE_P).abs() <= 1e-3
        && (pi - COUNTEREXAMPLE_PI).abs() <= 1e-3
        && elapsed < Duration::from_secs(1);
    Outcome {
        pass,
        detail: format!("p = {p:.6}, pi = {pi:.6}, {:.3} s", elapsed.as_secs_f64()),
    }
}

fn theorem_campaign(hy: &mut Hygiene) -> (Outcome, Outcome) {
    let start = Instant::now();
    let report = verify_theorem1(CAMPAIGN_SEED, 200, &CampaignBounds::default());
    let elapsed = start.elapsed();
    for (_, c) in report.checked() {
        hy.solves += 2;
        hy.worst_kkt = hy.worst_kkt.max(c.kkt);
        if !c.weak_duality {
            hy.weak_duality_violations += 1;
        }
    }
    let checked = report.checked().count();
    let campaign = Outcome {
        pass: report.failures() == 0 && elapsed < Duration::from_secs(120) && checked > 0,
        detail: format!(
            "seed {CAMPAIGN_SEED}: {checked} compared, {} skipped as infeasible, {} violations, {:.1} s",
            report.skipped(),
            report.failures(),
            elapsed.as_secs_f64()
        ),
    };
    let mut worst_violation = 0.0f64;
    let mut worst_delta = 0.0f64;
    let mut errors = 0;
    for (_, c) in report.checked() {
        match &c.transfer {
            Ok(t) => {
                worst_violation = worst_violation.max(t.max_violation);
                worst_delta = worst_delta.max(t.objective_delta);
            }
            Err(_) => errors += 1,
        }
    }
    let transfer = Outcome {
        pass: errors == 0 && worst_violation <= 1e-8 && worst_delta <= 1e-9 && checked > 0,
        detail: format!(
            "{checked} instances, worst violation {worst_violation:.2e}, worst objective delta {worst_delta:.2e}, {errors} errors"
        ),
    };
    (campaign, transfer)
}

fn pair_program(gen_cap: f64, line_cap: f64, h: f64) -> ConvexProgram {
    let (net, demand) = pair_with(
        PROFILE.to_vec(),
        Cap::Finite(gen_cap),
        Cap::Finite(line_cap),
        SQUARE_COST,
    );
    build(&net, &demand, &ProblemSpec::with_budget(h)).unwrap()
}

fn cap_threshold(hy: &mut Hygiene) -> Outcome {
    let mut pass = true;
    let mut notes = Vec::new();
    for h in [0.0, 5.0] {
        let f = f_min_oracle(&PROFILE, h);
        let below = hy.solve(&pair_program(f, f * (1.0 - 1e-4), h));
        let at = hy.solve(&pair_program(f, f, h));
        let flips = below.status == Status::Infeasible && at.status == Status::Optimal;
        let mut objectives = Vec::new();
        for (g, l) in [(1.0, 1.0), (1.5, 1.5), (10.0, 10.0), (10.0, 1.0), (1.0, 10.0)] {
            let sol = hy.solve(&pair_program(g * f, l * f, h));
            objectives.push(if sol.is_optimal() { sol.objective } else { f64::NAN });
        }
        let flat = objectives.iter().all(|&o| rel_close(o, objectives[0], 1e-6));
        pass &= flips && flat;
        notes.push(format!(
            "h={h}: f_min={f:.6} flip {} objectives {:.6}..{:.6}",
            if flips { "ok" } else { "missing" },
            objectives.iter().copied().fold(f64::INFINITY, f64::min),
            objectives.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        ));
    }
    let expected =
        rel_close(f_min_oracle(&PROFILE, 0.0), 10.0, 1e-9) && rel_close(f_min_oracle(&PROFILE, 5.0), 9.5, 1e-9);
    Outcome {
        pass: pass && expected,
        detail: notes.join("; "),
    }
}

fn budget_curve(hy: &mut Hygiene) -> Outcome {
    let (net, demand) = pair_with(PROFILE.to_vec(), Cap::Unbounded, Cap::Finite(9.5), SQUARE_COST);
    let plan = SweepPlan::new(Model::new(net, demand), SweepParam::Budget, linspace(0.0, 8.0, 40));
    let res = run_sweep(&plan).unwrap();
    res.points.iter().for_each(|p| hy.point(p));
    let h_min = h_min_oracle(&PROFILE, 9.5).unwrap();
    let h_sat = h_sat_oracle(&PROFILE);
    let threshold = res
        .points
        .iter()
        .all(|p| (p.status == Status::Infeasible) == (p.param < h_min));
    let flags = res.flags[0];
    let last = res.points.last().and_then(|p| p.objective).unwrap_or(f64::NAN);
    let constant = res
        .points
        .iter()
        .filter(|p| p.param >= h_sat)
        .all(|p| p.objective.is_some_and(|o| rel_close(o, last, 1e-6)));
    let pass = threshold
        && flags.monotonicity_violations == 0
        && flags.convexity_violations == 0
        && constant
        && (h_min - 0.5).abs() < 1e-9
        && (h_sat - 5.0).abs() < 1e-9;
    Outcome {
        pass,
        detail: format!(
            "h_min={h_min:.6}, h_sat={h_sat:.6}, threshold {}, {} monotonicity / {} convexity violations, constant beyond h_sat {}",
            if threshold { "ok" } else { "wrong" },
            flags.monotonicity_violations,
            flags.convexity_violations,
            if constant { "ok" } else { "no" }
        ),
    }
}

fn unconstrained(hy: &mut Hygiene) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    let mut peak_mismatch = 0;
    let mut hull_mismatch = 0;
    for _ in 0..100 {
        let t = rng.gen_range(1..=12);
        let d: Vec<f64> = (0..t).map(|_| rng.gen_range(0.0..10.0)).collect();
        let cost = CostPoly::new(rng.gen_range(0.5..2.0), rng.gen_range(0.0..2.0), 0.0);
        let (net, demand) = pair_with(d.clone(), Cap::Unbounded, Cap::Unbounded, cost);
        let prog = build(&net, &demand, &ProblemSpec::new(Cap::Unbounded)).unwrap();
        let sol = hy.solve(&prog);
        let g = unconstrained_dispatch(&d, &cost).unwrap();
        let analytic: f64 = g.iter().map(|&v| cost.eval(v)).sum();
        let solved = if sol.is_optimal() { sol.objective } else { f64::NAN };
        let rel = (solved - analytic).abs() / analytic.abs().max(1.0);
        worst = worst.max(if rel.is_nan() { f64::INFINITY } else { rel });
        if g.iter().copied().fold(f64::NEG_INFINITY, f64::max) != max_prefix_average_oracle(&d) {
            peak_mismatch += 1;
        }
        let hull = concave_hull(&d);
        if g.iter()
            .enumerate()
            .any(|(k, &v)| (v - (hull[k + 1] - hull[k])).abs() > 1e-9)
        {
            hull_mismatch += 1;
        }
    }
    Outcome {
        pass: worst <= 1e-7 && peak_mismatch == 0 && hull_mismatch == 0,
        detail: format!(
            "100 profiles, worst relative gap {worst:.2e}, {peak_mismatch} peak mismatches, {hull_mismatch} hull mismatches"
        ),
    }
}

fn star_budget(hy: &mut Hygiene) -> Outcome {
    let (net, demand) = counterexample();
    let branches: Vec<Vec<f64>> = [2, 3]
        .iter()
        .map(|&b| (0..4).map(|t| demand.at(BusId(b), t)).collect())
        .collect();
    let h_min: f64 = branches.iter().map(|d| h_min_oracle(d, 9.5).unwrap()).sum();
    let model = Model::new(net.clone(), demand.clone());
    let variants = vec![BTreeSet::new(), BTreeSet::from([BusId(1)])];

    let flip_plan = SweepPlan::new(
        model.clone(),
        SweepParam::Budget,
        vec![h_min - 0.01, h_min, h_min + 0.01],
    )
    .with_variants(variants.clone());
    let flip = run_sweep(&flip_plan).unwrap();
    flip.points.iter().for_each(|p| hy.point(p));
    let status = |h: f64, v: usize| flip.points.iter().find(|p| p.param == h && p.variant == v).unwrap();
    let flips = (0..2).all(|v| {
        status(h_min - 0.01, v).status == Status::Infeasible
            && status(h_min, v).status == Status::Optimal
            && status(h_min + 0.01, v).status == Status::Optimal
    });
    let (p2, pi2) = (status(h_min, 0).objective, status(h_min, 1).objective);
    let equal_at_min = matches!((p2, pi2), (Some(a), Some(b)) if rel_close(a, b, 1e-6));

    let curve_plan = SweepPlan::new(model, SweepParam::Budget, linspace(h_min, 12.0, 41)).with_variants(variants);
    let curves = run_sweep(&curve_plan).unwrap();
    curves.points.iter().for_each(|p| hy.point(p));
    let pairs: Vec<(f64, Option<f64>, Option<f64>)> = curves
        .curve(0)
        .zip(curves.curve(1))
        .map(|(a, b)| (a.param, a.objective, b.objective))
        .collect();
    let same = |&(_, a, b): &(f64, Option<f64>, Option<f64>)| matches!((a, b), (Some(a), Some(b)) if (a - b).abs() <= 1e-6 * (1.0 + a.abs()));
    let mut h0 = None;
    for k in (0..pairs.len()).rev() {
        if same(&pairs[k]) {
            h0 = Some(pairs[k].0);
        } else {
            break;
        }
    }
    let dominance = pairs.iter().all(|&(_, a, b)| match (a, b) {
        (Some(a), Some(b)) => b >= a - 1e-9 * (1.0 + a.abs()),
        _ => false,
    });
    let pass = (h_min - 2.0).abs() < 1e-9 && flips && equal_at_min && h0.is_some_and(|h| h <= 12.0) && dominance;
    Outcome {
        pass,
        detail: format!(
            "h_min={h_min:.6}, flip {}, p(h_min)={} pi(h_min)={}, curves coincide from h0={}",
            if flips { "ok" } else { "missing" },
            p2.map_or("-".into(), |v| format!("{v:.6}")),
            pi2.map_or("-".into(), |v| format!("{v:.6}")),
            h0.map_or("none".into(), |v| format!("{v:.2}"))
        ),
    }
}

fn main() -> ExitCode {
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return ExitCode::SUCCESS;
    }
    let mut hy = Hygiene::default();
    let c1 = counterexample_values(&mut hy);
    let (c2, c3) = theorem_campaign(&mut hy);
    let c4 = cap_threshold(&mut hy);
    let c5 = budget_curve(&mut hy);
    let c6 = unconstrained(&mut hy);
    let c7 = star_budget(&mut hy);
    let c8 = Outcome {
        pass: hy.worst_kkt <= KKT_TOL && hy.weak_duality_violations == 0,
        detail: format!(
            "{} solves, worst KKT or certificate residual {:.2e}, {} weak-duality violations",
            hy.solves, hy.worst_kkt, hy.weak_duality_violations
        ),
    };
    let rows = [
        ("1 counterexample reproduction", c1),
        ("2 single-connection campaign", c2),
        ("3 purify and transfer", c3),
        ("4 cap threshold and flatness", c4),
        ("5 budget curve shape", c5),
        ("6 unconstrained dispatch", c6),
        ("7 star minimum budget", c7),
        ("8 solver hygiene", c8),
    ];
    let mut failed = 0;
    for (name, o) in &rows {
        println!(
            "{} criterion {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} passed, {failed} failed", rows.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
