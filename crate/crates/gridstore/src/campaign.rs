//! Randomized verification of zero storage at single-connection generators,
//! and the three-bus counterexample run.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use gridstore_core::analytic::{f_min_sgsl, purify, transfer_storage};
use gridstore_core::instances::counterexample;
use gridstore_core::program::ConvexProgram;
use gridstore_core::{
    build, classify_buses, kkt_report, solve, Bus, BusId, Cap, CostPoly, DemandSeries, Line, Network, ProblemSpec,
    Solution, SolverConfig, Status, StorageTech,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::io::Model;
use crate::sweep::{fmt_sig, variant_label, work_pool, SweepPoint};

/// `|p - π| <= THEOREM_TOL (1 + |p|)`
pub const THEOREM_TOL: f64 = 1e-6;
/// Feasibility tolerance for the transferred point.
pub const TRANSFER_FEAS_TOL: f64 = 1e-8;
/// Relative objective change allowed by purification and transfer.
pub const TRANSFER_OBJ_TOL: f64 = 1e-9;
/// Relative slack for `dual objective <= primal objective`.
pub const WEAK_DUALITY_TOL: f64 = 1e-9;

/// Parameters of the random instance generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CampaignBounds {
    pub max_buses: usize,
    pub max_period: usize,
    pub demand_max: f64,
    pub c2_range: (f64, f64),
    pub c1_max: f64,
    pub budget_max: f64,
    /// Probability that a bus other than the guaranteed one hosts a generator.
    pub generator_prob: f64,
    /// Maximum number of lines added on top of the spanning tree.
    pub max_extra_lines: usize,
}

impl Default for CampaignBounds {
    fn default() -> Self {
        Self {
            max_buses: 8,
            max_period: 8,
            demand_max: 10.0,
            c2_range: (0.5, 2.0),
            c1_max: 2.0,
            budget_max: 10.0,
            generator_prob: 0.3,
            max_extra_lines: 2,
        }
    }
}

/// A generated trial instance.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomInstance {
    pub model: Model,
    pub budget: f64,
    /// Every single-connection generator; the pinned set of the restricted
    /// problem.
    pub pinned: BTreeSet<BusId>,
}

/// Deterministic generator for trial `index` of the campaign seeded by `seed`.
pub fn random_instance(seed: u64, index: usize, bounds: &CampaignBounds) -> RandomInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let n = rng.gen_range(2..=bounds.max_buses.max(2));
    let period = rng.gen_range(1..=bounds.max_period.max(1));

    let mut edges: Vec<(usize, usize)> = (1..n).map(|k| (rng.gen_range(0..k), k)).collect();
    let mut degree = vec![0usize; n];
    for &(a, b) in &edges {
        degree[a] += 1;
        degree[b] += 1;
    }
    let leaves: Vec<usize> = (0..n).filter(|&k| degree[k] == 1).collect();
    let anchor = *leaves.choose(&mut rng).expect("a tree has leaves");
    let mut is_gen: Vec<bool> = (0..n)
        .map(|k| k == anchor || rng.gen_bool(bounds.generator_prob))
        .collect();
    if is_gen.iter().all(|&g| g) {
        let others: Vec<usize> = (0..n).filter(|&k| k != anchor).collect();
        is_gen[*others.choose(&mut rng).unwrap()] = false;
    }
    let inner: Vec<usize> = (0..n).filter(|&k| k != anchor).collect();
    for _ in 0..rng.gen_range(0..=bounds.max_extra_lines) {
        if inner.len() < 2 {
            break;
        }
        let a = *inner.choose(&mut rng).unwrap();
        let b = *inner.choose(&mut rng).unwrap();
        if a != b && !edges.iter().any(|&(x, y)| (x, y) == (a, b) || (x, y) == (b, a)) {
            edges.push((a.min(b), a.max(b)));
        }
    }

    let budget = rng.gen_range(0.0..=bounds.budget_max);
    let demand: Vec<Vec<f64>> = (0..n)
        .map(|k| {
            if is_gen[k] {
                vec![0.0; period]
            } else {
                (0..period).map(|_| rng.gen_range(0.0..=bounds.demand_max)).collect()
            }
        })
        .collect();
    let total: Vec<f64> = (0..period).map(|t| demand.iter().map(|d| d[t]).sum()).collect();
    let peak = total.iter().copied().fold(0.0f64, f64::max).max(1.0);

    let buses: Vec<Bus> = (0..n)
        .map(|k| {
            let id = k as u32 + 1;
            if is_gen[k] {
                let c2 = rng.gen_range(bounds.c2_range.0..=bounds.c2_range.1);
                let c1 = rng.gen_range(0.0..=bounds.c1_max);
                let cap = if rng.gen_bool(0.5) {
                    Cap::Unbounded
                } else {
                    Cap::Finite(rng.gen_range(0.6..=1.2) * peak)
                };
                Bus::generator(id, cap, CostPoly::new(c2, c1, 0.0))
            } else {
                Bus::load(id)
            }
        })
        .collect();

    let lines: Vec<Line> = edges
        .iter()
        .enumerate()
        .map(|(e, &(a, b))| {
            let y = rng.gen_range(0.5..=2.0);
            let cap = match load_side(n, &edges, e, &is_gen) {
                Some(side) => {
                    let d: Vec<f64> = (0..period).map(|t| side.iter().map(|&k| demand[k][t]).sum()).collect();
                    let f = f_min_sgsl(&d, Cap::Finite(budget));
                    Cap::Finite(rng.gen_range(f..=2.0 * f))
                }
                None if rng.gen_bool(0.3) => Cap::Unbounded,
                None => Cap::Finite(rng.gen_range(0.3..=1.0) * peak),
            };
            Line::new(a as u32 + 1, b as u32 + 1, y, cap)
        })
        .collect();

    let network = Network::new(buses, lines, StorageTech::IDEAL);
    let mut series = DemandSeries::new(period);
    for k in (0..n).filter(|&k| !is_gen[k]) {
        series = series.with_column(k as u32 + 1, demand[k].clone());
    }
    let pinned = classify_buses(&network)
        .expect("generated networks are valid")
        .single_connection
        .into_iter()
        .collect();
    RandomInstance {
        model: Model::new(network, series),
        budget,
        pinned,
    }
}

/// Buses cut off by removing line `e` when that side holds no generator.
fn load_side(n: usize, edges: &[(usize, usize)], e: usize, is_gen: &[bool]) -> Option<Vec<usize>> {
    let (a, b) = edges[e];
    let reach = |start: usize| {
        let mut seen = vec![false; n];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(u) = stack.pop() {
            for (i, &(x, y)) in edges.iter().enumerate() {
                if i == e {
                    continue;
                }
                let v = if x == u {
                    y
                } else if y == u {
                    x
                } else {
                    continue;
                };
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen
    };
    let from_a = reach(a);
    if from_a[b] {
        return None;
    }
    let from_b = reach(b);
    [from_a, from_b]
        .into_iter()
        .map(|seen| (0..n).filter(|&k| seen[k]).collect::<Vec<_>>())
        .find(|side| side.iter().all(|&k| !is_gen[k]))
}

/// Feasibility and objective of the point obtained by purifying and
/// transferring the storage of every pinned bus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferCheck {
    /// Largest constraint violation in the restricted program.
    pub max_violation: f64,
    /// `|objective change| / (1 + |p|)`
    pub objective_delta: f64,
}

impl TransferCheck {
    pub fn passed(&self) -> bool {
        self.max_violation <= TRANSFER_FEAS_TOL && self.objective_delta <= TRANSFER_OBJ_TOL
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialCheck {
    /// Optimal value of the unrestricted problem.
    pub p: f64,
    /// Optimal value with the pinned buses held at zero storage.
    pub pi: f64,
    /// Largest KKT residual over both solves.
    pub kkt: f64,
    pub weak_duality: bool,
    pub transfer: Result<TransferCheck, String>,
}

impl TrialCheck {
    pub fn holds(&self) -> bool {
        (self.p - self.pi).abs() <= THEOREM_TOL * (1.0 + self.p.abs())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrialOutcome {
    /// The unrestricted problem is infeasible; nothing to compare.
    Skipped(String),
    /// A solve failed to reach a definite answer.
    SolverFailure(String),
    Checked(TrialCheck),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub index: usize,
    pub buses: usize,
    pub lines: usize,
    pub period: usize,
    pub budget: f64,
    pub pinned: BTreeSet<BusId>,
    pub outcome: TrialOutcome,
}

impl TrialRecord {
    pub fn passed(&self) -> bool {
        match &self.outcome {
            TrialOutcome::Skipped(_) => true,
            TrialOutcome::SolverFailure(_) => false,
            TrialOutcome::Checked(c) => c.holds(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignReport {
    pub seed: u64,
    pub bounds: CampaignBounds,
    pub records: Vec<TrialRecord>,
}

impl CampaignReport {
    pub fn checked(&self) -> impl Iterator<Item = (&TrialRecord, &TrialCheck)> {
        self.records.iter().filter_map(|r| match &r.outcome {
            TrialOutcome::Checked(c) => Some((r, c)),
            _ => None,
        })
    }

    pub fn skipped(&self) -> usize {
        self.records
            .iter()
            .filter(|r| matches!(r.outcome, TrialOutcome::Skipped(_)))
            .count()
    }

    pub fn failures(&self) -> usize {
        self.records.iter().filter(|r| !r.passed()).count()
    }

    pub fn transfer_failures(&self) -> usize {
        self.checked()
            .filter(|(_, c)| !matches!(&c.transfer, Ok(t) if t.passed()))
            .count()
    }

    pub fn is_clean(&self) -> bool {
        self.failures() == 0
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            let head = format!(
                "trial {:>4}  n={} lines={} T={} h={} K={}",
                r.index,
                r.buses,
                r.lines,
                r.period,
                fmt_sig(r.budget),
                variant_label(&r.pinned)
            );
            let tail = match &r.outcome {
                TrialOutcome::Skipped(why) => format!("skipped: {why}"),
                TrialOutcome::SolverFailure(why) => format!("FAIL: {why}"),
                TrialOutcome::Checked(c) => format!(
                    "{}  p={} pi={} transfer={}",
                    if c.holds() { "pass" } else { "FAIL" },
                    fmt_sig(c.p),
                    fmt_sig(c.pi),
                    match &c.transfer {
                        Ok(t) if t.passed() => "ok".to_string(),
                        Ok(t) => format!("violation {:.2e} delta {:.2e}", t.max_violation, t.objective_delta),
                        Err(e) => e.clone(),
                    }
                ),
            };
            writeln!(out, "{head}  {tail}").unwrap();
        }
        writeln!(
            out,
            "seed {}: {} trials, {} checked, {} skipped, {} failed, {} transfer failures",
            self.seed,
            self.records.len(),
            self.checked().count(),
            self.skipped(),
            self.failures(),
            self.transfer_failures()
        )
        .unwrap();
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("trial,buses,lines,period,budget,pinned,outcome,p,pi,transfer_violation,transfer_delta\n");
        for r in &self.records {
            let (outcome, p, pi, tv, td) = match &r.outcome {
                TrialOutcome::Skipped(_) => ("skipped", None, None, None, None),
                TrialOutcome::SolverFailure(_) => ("solver_failure", None, None, None, None),
                TrialOutcome::Checked(c) => {
                    let t = c.transfer.as_ref().ok();
                    (
                        if c.holds() { "pass" } else { "fail" },
                        Some(c.p),
                        Some(c.pi),
                        t.map(|t| t.max_violation),
                        t.map(|t| t.objective_delta),
                    )
                }
            };
            let f = |v: Option<f64>| v.map(fmt_sig).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.index,
                r.buses,
                r.lines,
                r.period,
                fmt_sig(r.budget),
                variant_label(&r.pinned),
                outcome,
                f(p),
                f(pi),
                f(tv),
                f(td)
            )
            .unwrap();
        }
        out
    }
}

/// Solver settings used by the campaign: tighter than the defaults so that
/// objective comparisons are not dominated by the stopping tolerance.
pub fn campaign_solver() -> SolverConfig {
    SolverConfig {
        tol_gap: 1e-10,
        tol_feas: 1e-10,
        ..SolverConfig::default()
    }
}

fn weak_duality(sol: &Solution) -> bool {
    sol.dual_objective <= sol.objective + WEAK_DUALITY_TOL * (1.0 + sol.objective.abs())
}

/// Purifies and transfers the storage of every pinned bus, then checks the
/// result against the restricted program.
pub fn check_transfer(
    full: &ConvexProgram,
    restricted: &ConvexProgram,
    sol: &Solution,
    pinned: &BTreeSet<BusId>,
) -> Result<TransferCheck, String> {
    let mut cur = sol.clone();
    for &k in pinned {
        cur = purify(full, &cur, k).map_err(|e| format!("purify at bus {k}: {e}"))?;
        cur = transfer_storage(full, &cur, k).map_err(|e| format!("transfer at bus {k}: {e}"))?;
    }
    let report = restricted.residuals(&cur.x, TRANSFER_FEAS_TOL);
    let objective = restricted.eval_objective(&cur.x).map_err(|e| e.to_string())?;
    Ok(TransferCheck {
        max_violation: report.max_violation,
        objective_delta: (objective - sol.objective).abs() / (1.0 + sol.objective.abs()),
    })
}

/// Runs one trial of the campaign.
pub fn run_trial(seed: u64, index: usize, bounds: &CampaignBounds, cfg: &SolverConfig) -> TrialRecord {
    let inst = random_instance(seed, index, bounds);
    let net = &inst.model.network;
    let mut record = TrialRecord {
        index,
        buses: net.buses.len(),
        lines: net.lines.len(),
        period: inst.model.demand.period,
        budget: inst.budget,
        pinned: inst.pinned.clone(),
        outcome: TrialOutcome::Skipped(String::new()),
    };
    let base = ProblemSpec::with_budget(inst.budget);
    let built = build(net, &inst.model.demand, &base).and_then(|full| {
        Ok((
            full,
            build(net, &inst.model.demand, &base.clone().pin(inst.pinned.iter().copied()))?,
        ))
    });
    let (full, restricted) = match built {
        Ok(pair) => pair,
        Err(e) => {
            record.outcome = TrialOutcome::SolverFailure(format!("build: {e}"));
            return record;
        }
    };
    let p = solve(&full, cfg);
    record.outcome = match p.status {
        Status::Infeasible => TrialOutcome::Skipped("unrestricted problem infeasible".into()),
        Status::Optimal => {
            let pi = solve(&restricted, cfg);
            if pi.status != Status::Optimal {
                TrialOutcome::SolverFailure(format!("restricted problem {}", pi.status))
            } else {
                TrialOutcome::Checked(TrialCheck {
                    p: p.objective,
                    pi: pi.objective,
                    kkt: kkt_report(&full, &p)
                        .max_residual()
                        .max(kkt_report(&restricted, &pi).max_residual()),
                    weak_duality: weak_duality(&p) && weak_duality(&pi),
                    transfer: check_transfer(&full, &restricted, &p, &inst.pinned),
                })
            }
        }
        other => TrialOutcome::SolverFailure(format!("unrestricted problem {other}")),
    };
    record
}

/// Generates `trials` random instances and compares the unrestricted optimum
/// with the optimum that forbids storage at every single-connection
/// generator.
pub fn verify_theorem1(seed: u64, trials: usize, bounds: &CampaignBounds) -> CampaignReport {
    let cfg = campaign_solver();
    let records = work_pool().install(|| {
        (0..trials)
            .into_par_iter()
            .map(|i| run_trial(seed, i, bounds, &cfg))
            .collect()
    });
    CampaignReport {
        seed,
        bounds: *bounds,
        records,
    }
}

/// Published optimum of the three-bus counterexample with storage anywhere.
pub const COUNTEREXAMPLE_P: f64 = 877.0;
/// Published optimum with no storage at the generator.
pub const COUNTEREXAMPLE_PI: f64 = 900.75;
pub const COUNTEREXAMPLE_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct CounterexampleReport {
    pub flow_cap: Cap,
    pub budget: f64,
    /// Unrestricted solve.
    pub p: SweepPoint,
    /// Solve with storage at the generator forbidden.
    pub pi: SweepPoint,
}

impl CounterexampleReport {
    /// `π - p` when both solves are optimal.
    pub fn gap(&self) -> Option<f64> {
        Some(self.pi.objective? - self.p.objective?)
    }

    /// Whether the published values are reproduced.
    pub fn matches_published(&self) -> bool {
        match (self.p.objective, self.pi.objective) {
            (Some(p), Some(pi)) => {
                (p - COUNTEREXAMPLE_P).abs() <= COUNTEREXAMPLE_TOL
                    && (pi - COUNTEREXAMPLE_PI).abs() <= COUNTEREXAMPLE_TOL
                    && pi > p
            }
            _ => false,
        }
    }

    pub fn to_text(&self) -> String {
        let obj = |s: &SweepPoint| {
            s.objective
                .map(|v| format!("{v:.6}"))
                .unwrap_or_else(|| s.status.to_string())
        };
        let mut out = String::new();
        writeln!(out, "three-bus star, f={}, h={}", self.flow_cap, fmt_sig(self.budget)).unwrap();
        writeln!(out, "p  (storage anywhere)      = {}", obj(&self.p)).unwrap();
        writeln!(out, "pi (no storage at bus 1)   = {}", obj(&self.pi)).unwrap();
        if let Some(gap) = self.gap() {
            writeln!(out, "gap                        = {gap:.6}").unwrap();
        }
        out
    }

    pub fn csv_rows(&self) -> [String; 2] {
        let row = |s: &SweepPoint, label: &str| {
            crate::sweep::csv_row(self.budget, label, s.status, s.objective, s.iters, s.max_residual)
        };
        [row(&self.p, "none"), row(&self.pi, "1")]
    }
}

/// Solves the counterexample star with the given line caps and budget, with
/// and without storage at the generator.
pub fn run_counterexample(flow_cap: Cap, budget: f64) -> CounterexampleReport {
    let (mut net, demand) = counterexample();
    for l in &mut net.lines {
        l.flow_cap = flow_cap;
    }
    let cfg = SolverConfig::default();
    let run = |pinned: &[u32]| {
        let spec = ProblemSpec::with_budget(budget).pin(pinned.iter().map(|&b| BusId(b)));
        let prog = build(&net, &demand, &spec).expect("counterexample builds");
        let sol = solve(&prog, &cfg);
        SweepPoint {
            param: budget,
            variant: pinned.len(),
            status: sol.status,
            objective: sol.is_optimal().then_some(sol.objective),
            dual_objective: sol.dual_objective,
            iters: sol.iters,
            max_residual: kkt_report(&prog, &sol).max_residual(),
            certificate: sol.certificate,
        }
    };
    let p = run(&[]);
    let pi = run(&[1]);
    CounterexampleReport {
        flow_cap,
        budget,
        p,
        pi,
    }
}

/// The published instance: lines capped at 9.5 and a budget of 5.
pub fn verify_counterexample() -> CounterexampleReport {
    run_counterexample(Cap::Finite(9.5), 5.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use gridstore_core::validate;

    #[test]
    fn instances_are_reproducible_and_valid() {
        let bounds = CampaignBounds::default();
        for i in 0..50 {
            let a = random_instance(7, i, &bounds);
            assert_eq!(a, random_instance(7, i, &bounds));
            let net = &a.model.network;
            assert!(validate(net, &a.model.demand).is_empty(), "trial {i}");
            assert!(!a.pinned.is_empty());
            assert!(net.buses.len() <= 8 && a.model.demand.period <= 8);
            assert!(net.buses.iter().any(|b| !b.is_generator()));
        }
        assert_ne!(random_instance(7, 0, &bounds), random_instance(8, 0, &bounds));
    }

    #[test]
    fn counterexample_reproduces_published_values() {
        let r = verify_counterexample();
        assert!(r.matches_published(), "{}", r.to_text());
        assert!((r.gap().unwrap() - 23.75).abs() <= 2e-3);
    }

    #[test]
    fn slack_lines_or_no_budget_close_the_gap() {
        let r = run_counterexample(Cap::Finite(20.0), 5.0);
        assert!(r.gap().unwrap().abs() <= 1e-6 * (1.0 + r.p.objective.unwrap()));
        let r = run_counterexample(Cap::Finite(9.5), 0.0);
        assert_eq!(r.p.status, Status::Infeasible);
        assert_eq!(r.pi.status, Status::Infeasible);
        let r = run_counterexample(Cap::Finite(20.0), 0.0);
        assert!(r.gap().unwrap().abs() <= 1e-6 * (1.0 + r.p.objective.unwrap()));
    }

    #[test]
    fn small_campaign_is_clean() {
        let report = verify_theorem1(11, 20, &CampaignBounds::default());
        assert_eq!(report.records.len(), 20);
        assert!(report.is_clean(), "{}", report.to_text());
        assert!(report.checked().count() > 0);
    }
}
