use gridstore_core::analytic::{h_min_sgsl, max_prefix_average, purify, tau_sequence, transfer_storage, MinBudget};
use gridstore_core::instances::{counterexample, pair};
use gridstore_core::program::{BuildOptions, Site, StorageForm};
use gridstore_core::solver::{certificate_residual, oracle_solve, Certificate, LinearSolver};
use gridstore_core::*;
use proptest::prelude::*;

/// Random connected network with `n` buses and horizon `period`, decoded from
/// a vector of unit-interval draws.
fn random_instance(n: usize, period: usize, u: &[f64]) -> (Network, DemandSeries, f64) {
    let mut draws = u.iter().copied().cycle();
    let mut next = move || draws.next().unwrap();
    let mut buses = Vec::new();
    for k in 0..n {
        let id = k as u32 + 1;
        if k == 0 || (k + 1 < n && next() < 0.35) {
            let cost = CostPoly::new(0.5 + 1.5 * next(), 2.0 * next(), 0.0);
            let cap = if next() < 0.5 {
                Cap::Unbounded
            } else {
                Cap::Finite(20.0 + 20.0 * next())
            };
            buses.push(Bus::generator(id, cap, cost));
        } else {
            buses.push(Bus::load(id));
        }
    }
    let mut lines = Vec::new();
    for k in 1..n {
        let parent = ((next() * k as f64) as usize).min(k - 1);
        let cap = if next() < 0.3 {
            Cap::Unbounded
        } else {
            Cap::Finite(12.0 + 20.0 * next())
        };
        lines.push(Line::new(parent as u32 + 1, k as u32 + 1, 0.5 + next(), cap));
    }
    if n >= 3 && next() < 0.5 && !lines.iter().any(|l| l.connects(BusId(1), BusId(n as u32))) {
        lines.push(Line::new(1, n as u32, 0.5 + next(), Cap::Finite(12.0 + 20.0 * next())));
    }
    let mut demand = DemandSeries::new(period);
    for b in &buses {
        if !b.is_generator() {
            demand = demand.with_column(b.id.0, (0..period).map(|_| 10.0 * next()).collect());
        }
    }
    let budget = 10.0 * next();
    (Network::new(buses, lines, StorageTech::IDEAL), demand, budget)
}

fn instance_strategy() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
    (2usize..=4, 1usize..=6, prop::collection::vec(0.0f64..1.0, 96))
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn solver_agrees_with_oracle((n, period, u) in instance_strategy()) {
        let (net, demand, h) = random_instance(n, period, &u);
        let prog = build(&net, &demand, &ProblemSpec::with_budget(h)).unwrap();
        let sol = solve(&prog, &SolverConfig::default());
        prop_assume!(sol.status == Status::Optimal);
        let oracle = oracle_solve(&prog, 40_000);
        prop_assert!(
            (sol.objective - oracle.objective).abs() <= 1e-3 * (1.0 + sol.objective.abs()),
            "solver {} oracle {}", sol.objective, oracle.objective
        );
        prop_assert!(kkt_report(&prog, &sol).passes(1e-6));
        prop_assert!(sol.dual_objective <= sol.objective + 1e-9 * (1.0 + sol.objective.abs()));
    }

    #[test]
    fn net_charge_form_has_same_optimum((n, period, u) in instance_strategy()) {
        let (net, demand, h) = random_instance(n, period, &u);
        let spec = ProblemSpec::with_budget(h);
        let split = solve(&build(&net, &demand, &spec).unwrap(), &SolverConfig::default());
        let opts = BuildOptions { storage_form: StorageForm::NetCharge, ..Default::default() };
        let net_form = solve(&build_with(&net, &demand, &spec, &opts).unwrap(), &SolverConfig::default());
        prop_assert_eq!(split.status, net_form.status);
        if split.status == Status::Optimal {
            prop_assert!(rel(split.objective, net_form.objective) <= 1e-6);
        }
    }

    #[test]
    fn sparse_and_dense_factorizations_agree((n, period, u) in instance_strategy()) {
        let (net, demand, h) = random_instance(n, period, &u);
        let prog = build(&net, &demand, &ProblemSpec::with_budget(h)).unwrap();
        let dense = solve(&prog, &SolverConfig { linear_solver: LinearSolver::Dense, ..Default::default() });
        let sparse = solve(&prog, &SolverConfig { linear_solver: LinearSolver::Sparse, ..Default::default() });
        prop_assert_eq!(dense.status, sparse.status);
        if dense.status == Status::Optimal {
            prop_assert!(rel(dense.objective, sparse.objective) <= 1e-7);
        }
    }

    #[test]
    fn feasibility_is_monotone_in_budget(
        d in prop::collection::vec(0.0f64..10.0, 1..7),
        slack in 0.0f64..1.0,
    ) {
        let peak = d.iter().copied().fold(0.0, f64::max);
        let avg = max_prefix_average(&d);
        let cap = avg + slack * (peak - avg);
        let (net, demand) = pair(d.clone(), Cap::Finite(cap));
        let MinBudget::Value(h_min) = h_min_sgsl(&d, cap) else { unreachable!() };
        let mut seen_feasible = false;
        for k in 0..=12 {
            let h = 0.5 * k as f64;
            let sol = solve(&build(&net, &demand, &ProblemSpec::with_budget(h)).unwrap(), &SolverConfig::default());
            match sol.status {
                Status::Optimal => seen_feasible = true,
                Status::Infeasible => prop_assert!(!seen_feasible, "infeasible at h={} after a feasible budget", h),
                s => prop_assert!(false, "unexpected status {}", s),
            }
            if (h - h_min).abs() > 1e-6 {
                prop_assert_eq!(sol.status == Status::Optimal, h > h_min);
            }
        }
    }
}

/// Candidates are random convex combinations of optima of tighter variants
/// (smaller budgets, pinned generator), perturbed by simultaneous charging and
/// discharging, and kept only if they pass the residual check.
#[test]
fn sampled_feasible_points_never_beat_the_optimum() {
    let (net, demand) = counterexample();
    let prog = build(&net, &demand, &ProblemSpec::with_budget(5.0)).unwrap();
    let best = solve(&prog, &SolverConfig::default()).objective;
    let mut anchors = Vec::new();
    for h in [2.0, 2.5, 3.0, 4.0, 5.0] {
        for pin in [false, true] {
            let mut spec = ProblemSpec::with_budget(h);
            if pin {
                spec = spec.pin([BusId(1)]);
            }
            let sol = solve(&build(&net, &demand, &spec).unwrap(), &SolverConfig::default());
            assert_eq!(sol.status, Status::Optimal);
            anchors.push(sol.x);
        }
    }
    let layout = &prog.layout;
    let mut state: u64 = 0x2545_f491_4f6c_dd1d;
    let mut unit = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    let mut accepted = 0;
    for _ in 0..5_000 {
        let weights: Vec<f64> = anchors.iter().map(|_| unit()).collect();
        let total: f64 = weights.iter().sum();
        let mut x = vec![0.0; layout.len()];
        for (w, a) in weights.iter().zip(&anchors) {
            for (xi, ai) in x.iter_mut().zip(a) {
                *xi += w / total * ai;
            }
        }
        for k in 0..3 {
            for t in 0..4 {
                let used = x[layout.charge(k, t)].max(x[layout.discharge(k, t)]);
                let extra = 0.5 * unit() * (x[layout.capacity(k)] - used).max(0.0);
                x[layout.charge(k, t)] += extra;
                x[layout.discharge(k, t)] += extra;
            }
        }
        if prog.residuals(&x, 1e-7).passed {
            accepted += 1;
            assert!(prog.eval_objective(&x).unwrap() >= best - 1e-6);
        }
    }
    assert!(accepted > 100, "only {accepted} samples were feasible");
}

#[test]
fn restricted_and_full_programs_share_feasible_points() {
    let (net, demand) = counterexample();
    let full = build(&net, &demand, &ProblemSpec::with_budget(5.0)).unwrap();
    let restricted = build(&net, &demand, &ProblemSpec::with_budget(5.0).pin([BusId(1)])).unwrap();
    let sol = solve(&restricted, &SolverConfig::default());
    assert!(full.residuals(&sol.x, 1e-8).passed);

    let (net, demand) = pair(vec![0.0, 10.0, 10.0, 10.0], Cap::Finite(9.5));
    let full = build(&net, &demand, &ProblemSpec::with_budget(5.0)).unwrap();
    let restricted = build(&net, &demand, &ProblemSpec::with_budget(5.0).pin([BusId(1)])).unwrap();
    let sol = solve(&full, &SolverConfig::default());
    let moved = transfer_storage(&full, &purify(&full, &sol, BusId(1)).unwrap(), BusId(1)).unwrap();
    assert!(restricted.residuals(&moved.x, 1e-8).passed);
}

#[test]
fn infeasible_pair_carries_farkas_certificate() {
    let (net, demand) = pair(vec![9.0, 10.0, 0.0, 10.0], Cap::Finite(9.0));
    let prog = build(&net, &demand, &ProblemSpec::new(Cap::Unbounded)).unwrap();
    let sol = solve(&prog, &SolverConfig::default());
    assert_eq!(sol.status, Status::Infeasible);
    let Some(Certificate::PrimalInfeasible { y, z }) = &sol.certificate else {
        panic!("missing certificate");
    };
    let mut aty = vec![0.0; prog.nvars()];
    prog.qp.eq.mul_t_add(y, &mut aty);
    prog.qp.ineq.mul_t_add(z, &mut aty);
    assert!(aty.iter().all(|v| v.abs() <= 1e-6));
    assert!(z.iter().all(|&v| v >= -1e-9));
    let by: f64 = prog.qp.eq_rhs.iter().zip(y).map(|(a, b)| a * b).sum();
    let hz: f64 = prog.qp.ineq_rhs.iter().zip(z).map(|(a, b)| a * b).sum();
    assert!((by + hz + 1.0).abs() <= 1e-9);
    assert!(certificate_residual(&prog.qp, sol.certificate.as_ref().unwrap()) <= 1e-6);
}

/// Lower storage-level rows are active with a zero gradient when nothing is
/// stored, so their multipliers are not unique; every other storage row is
/// slack and must carry a zero multiplier.
#[test]
fn zero_demand_leaves_storage_rows_unpriced() {
    let (net, demand) = pair(vec![0.0; 5], Cap::Finite(3.0));
    let prog = build(&net, &demand, &ProblemSpec::with_budget(2.0)).unwrap();
    let sol = solve(&prog, &SolverConfig::default());
    assert_eq!(sol.status, Status::Optimal);
    assert!(sol.objective.abs() <= 1e-8);
    let storage_tags = [
        ConstraintTag::StorageLevel,
        ConstraintTag::CapacitySign,
        ConstraintTag::Ramp,
        ConstraintTag::Budget,
    ];
    for (i, label) in prog.ineq_labels.iter().enumerate() {
        if storage_tags.contains(&label.tag) && !is_level_lower(&prog, i) {
            assert!(sol.z[i].abs() <= 1e-6, "{label}: {}", sol.z[i]);
        }
    }
}

fn is_level_lower(prog: &ConvexProgram, row: usize) -> bool {
    let label = prog.ineq_labels[row];
    let Site::Bus(bus) = label.site else { return false };
    let k = prog.instance.bus_position(bus).unwrap();
    label.tag == ConstraintTag::StorageLevel && prog.qp.ineq.row(row).all(|(j, _)| j != prog.layout.capacity(k))
}

#[test]
fn unconstrained_level_duals_sit_on_segment_boundaries() {
    let d = vec![9.0, 10.0, 0.0, 10.0, 2.0, 1.0];
    let (net, demand) = pair(d.clone(), Cap::Unbounded);
    let prog = build(&net, &demand, &ProblemSpec::new(Cap::Unbounded)).unwrap();
    let sol = solve(&prog, &SolverConfig::default());
    assert_eq!(sol.status, Status::Optimal);
    let seg = tau_sequence(&d).unwrap();
    let g = seg.profile();
    let period = d.len();
    let mut ell = vec![0.0; period];
    for (i, label) in prog.ineq_labels.iter().enumerate() {
        let t = label.t.unwrap_or(0);
        if label.site == Site::Bus(BusId(2)) && is_level_lower(&prog, i) && t + 1 < period {
            ell[t] += sol.z[i];
        }
    }
    for t in 0..period - 1 {
        let expected = if seg.breakpoints.contains(&(t + 1)) {
            2.0 * g[t] - 2.0 * g[t + 1]
        } else {
            0.0
        };
        assert!(
            (ell[t] - expected).abs() <= 1e-6,
            "t={}: {} vs {}",
            t + 1,
            ell[t],
            expected
        );
    }
}

#[test]
fn oracle_reaches_counterexample_value() {
    let (net, demand) = counterexample();
    let prog = build(&net, &demand, &ProblemSpec::with_budget(5.0)).unwrap();
    let res = oracle_solve(&prog, 100_000);
    assert!((res.objective - 877.0).abs() <= 0.5, "{}", res.objective);
}

#[test]
fn oracle_residual_stays_away_from_zero_when_infeasible() {
    let (net, demand) = pair(vec![9.0, 10.0, 0.0, 10.0], Cap::Finite(9.0));
    let prog = build(&net, &demand, &ProblemSpec::with_budget(5.0)).unwrap();
    let res = oracle_solve(&prog, 5_000);
    let tail = &res.residual_history[res.residual_history.len() / 2..];
    assert!(tail.iter().all(|&v| v > 1e-3));
}
