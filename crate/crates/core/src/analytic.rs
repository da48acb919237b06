//! Closed-form results for special topologies and constructive rewrites of
//! optimal points.
//!
//! The threshold formulas cover a single generator feeding a single load
//! (SGSL) and star networks with a generator at the center. [`purify`] and
//! [`transfer_storage`] rewrite an optimum so that a single-connection
//! generator bus holds no storage, without changing the cost.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::model::{BusId, Cap, CostPoly, DemandSeries, Network, StorageTech};
use crate::program::{ConvexProgram, StorageForm};
use crate::solver::{Solution, Status};

/// Relative tolerance used when comparing running averages.
pub const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum AnalyticError {
    EmptySeries,
    NonFiniteDemand,
    NegativeDemand {
        t: usize,
        value: f64,
    },
    NotStrictlyConvex,
    NonIdealStorage(StorageTech),
    /// A branch cap is below the largest prefix average of its demand.
    HypothesisNotMet {
        branch: usize,
        cap: f64,
        required: f64,
    },
    LengthMismatch,
    Topology(String),
    NotOptimal(Status),
    UnknownBus(BusId),
    NotSingleConnection(BusId),
    UnsupportedForm,
    PurifyStalled {
        bus: BusId,
        excess: f64,
    },
    TransferPrecondition {
        bus: BusId,
        t: usize,
        generation: f64,
        cap: f64,
    },
}

impl fmt::Display for AnalyticError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnalyticError::EmptySeries => f.write_str("demand series is empty"),
            AnalyticError::NonFiniteDemand => f.write_str("demand contains a non-finite value"),
            AnalyticError::NegativeDemand { t, value } => {
                write!(f, "negative demand {value} at t={}", t + 1)
            }
            AnalyticError::NotStrictlyConvex => f.write_str("cost must be strictly convex (c2 > 0)"),
            AnalyticError::NonIdealStorage(s) => write!(
                f,
                "closed forms need lossless storage with unit ramps (got eff {}/{}, ramp {}/{})",
                s.eff_charge, s.eff_discharge, s.ramp_charge, s.ramp_discharge
            ),
            AnalyticError::HypothesisNotMet { branch, cap, required } => write!(
                f,
                "branch {branch}: cap {cap} is below the largest prefix average {required}"
            ),
            AnalyticError::LengthMismatch => f.write_str("branch demands and caps differ in length"),
            AnalyticError::Topology(msg) => f.write_str(msg),
            AnalyticError::NotOptimal(s) => write!(f, "solution status is {s}, not optimal"),
            AnalyticError::UnknownBus(b) => write!(f, "unknown bus {b}"),
            AnalyticError::NotSingleConnection(b) => {
                write!(f, "bus {b} is not a generator with a single connection")
            }
            AnalyticError::UnsupportedForm => f.write_str("only the split charge/discharge form is supported"),
            AnalyticError::PurifyStalled { bus, excess } => write!(
                f,
                "purification at bus {bus} stopped making progress with generation {excess} above the line cap"
            ),
            AnalyticError::TransferPrecondition {
                bus,
                t,
                generation,
                cap,
            } => write!(
                f,
                "bus {bus}: generation {generation} at t={} exceeds line cap {cap}; purify first",
                t + 1
            ),
        }
    }
}

impl core::error::Error for AnalyticError {}

fn check_series(d: &[f64]) -> Result<(), AnalyticError> {
    if d.is_empty() {
        return Err(AnalyticError::EmptySeries);
    }
    if d.iter().any(|v| !v.is_finite()) {
        return Err(AnalyticError::NonFiniteDemand);
    }
    Ok(())
}

fn check_nonnegative(d: &[f64]) -> Result<(), AnalyticError> {
    check_series(d)?;
    match d.iter().position(|&v| v < 0.0) {
        Some(t) => Err(AnalyticError::NegativeDemand { t, value: d[t] }),
        None => Ok(()),
    }
}

fn prefix_sums(d: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(d.len() + 1);
    out.push(0.0);
    let mut acc = 0.0;
    for &v in d {
        acc += v;
        out.push(acc);
    }
    out
}

/// `max_t (Σ_{τ<=t} d(τ)) / t`
pub fn max_prefix_average(d: &[f64]) -> f64 {
    let cum = prefix_sums(d);
    (1..=d.len())
        .map(|t| cum[t] / t as f64)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Partition of the horizon into maximal-prefix-average segments.
#[derive(Debug, Clone, PartialEq)]
pub struct TauSegmentation {
    /// `0 = τ_0 < τ_1 < … < τ_M = T`
    pub breakpoints: Vec<usize>,
    /// Average demand of each segment; nonincreasing.
    pub averages: Vec<f64>,
}

impl TauSegmentation {
    pub fn segments(&self) -> usize {
        self.averages.len()
    }

    pub fn period(&self) -> usize {
        *self.breakpoints.last().unwrap_or(&0)
    }

    /// Segment average at each step.
    pub fn profile(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.period());
        for (m, w) in self.breakpoints.windows(2).enumerate() {
            out.extend(core::iter::repeat_n(self.averages[m], w[1] - w[0]));
        }
        out
    }
}

/// Iterated maximal-prefix-average segmentation. Ties within a relative
/// tolerance of [`TIE_TOL`] resolve to the largest `t`.
pub fn tau_sequence(d: &[f64]) -> Result<TauSegmentation, AnalyticError> {
    check_series(d)?;
    let t_len = d.len();
    let cum = prefix_sums(d);
    let mut breakpoints = vec![0];
    let mut averages = Vec::new();
    let mut start = 0;
    while start < t_len {
        let avg = |t: usize| (cum[t] - cum[start]) / (t - start) as f64;
        let best = (start + 1..=t_len).map(avg).fold(f64::NEG_INFINITY, f64::max);
        let tol = TIE_TOL * best.abs().max(1.0);
        let tau = (start + 1..=t_len).rev().find(|&t| avg(t) >= best - tol).unwrap();
        averages.push(avg(tau));
        breakpoints.push(tau);
        start = tau;
    }
    Ok(TauSegmentation { breakpoints, averages })
}

/// Optimal generation of a single generator serving `d` with unlimited line,
/// generation and storage capacity: the segment averages of the
/// τ-segmentation.
pub fn unconstrained_dispatch(d: &[f64], cost: &CostPoly) -> Result<Vec<f64>, AnalyticError> {
    if !cost.is_strictly_convex() {
        return Err(AnalyticError::NotStrictlyConvex);
    }
    check_nonnegative(d)?;
    Ok(tau_sequence(d)?.profile())
}

/// Smallest `min{ḡ, f}` for which a generator/load pair with budget `h` is
/// feasible.
pub fn f_min_sgsl(d: &[f64], h: Cap) -> f64 {
    let t_len = d.len();
    let cum = prefix_sums(d);
    let mut best = max_prefix_average(d);
    if let Cap::Finite(h) = h {
        for t1 in 1..t_len {
            for t2 in t1 + 1..=t_len {
                best = best.max((cum[t2] - cum[t1] - h) / (t2 - t1) as f64);
            }
        }
    }
    best.max(0.0)
}

/// Minimum storage budget for a generator/load pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MinBudget {
    Value(f64),
    /// The cap is below the largest prefix average: no budget suffices.
    Infeasible,
}

impl MinBudget {
    pub fn value(self) -> Option<f64> {
        match self {
            MinBudget::Value(v) => Some(v),
            MinBudget::Infeasible => None,
        }
    }
}

/// `max_{0<=t1<=t2<=T} [Σ_{t1<τ<=t2} (d(τ) - cap)]⁺`
fn window_excess(d: &[f64], cap: f64) -> f64 {
    // Maximum subarray sum of d - cap, clamped at zero.
    let mut best: f64 = 0.0;
    let mut run: f64 = 0.0;
    for &v in d {
        run = (run + v - cap).max(0.0);
        best = best.max(run);
    }
    best
}

/// Minimum budget for a generator/load pair whose binding capacity is
/// `cap = min{ḡ, f}`.
pub fn h_min_sgsl(d: &[f64], cap: f64) -> MinBudget {
    if d.is_empty() {
        return MinBudget::Value(0.0);
    }
    let required = max_prefix_average(d);
    if cap < required - TIE_TOL * required.abs().max(1.0) {
        return MinBudget::Infeasible;
    }
    MinBudget::Value(window_excess(d, cap))
}

/// Budget beyond which extra storage no longer lowers the cost of a
/// generator/load pair.
pub fn h_sat(d: &[f64]) -> Result<f64, AnalyticError> {
    let seg = tau_sequence(d)?;
    let cum = prefix_sums(d);
    let mut best: f64 = 0.0;
    for w in seg.breakpoints.windows(2) {
        let (a, b) = (w[0], w[1]);
        let total = cum[b] - cum[a];
        for t in a + 1..=b {
            let v = total * (t - a) as f64 / (b - a) as f64 - (cum[t] - cum[a]);
            best = best.max(v);
        }
    }
    Ok(best)
}

/// Minimum budget for a star network with the generator at the center.
pub fn h_min_star(branch_demands: &[Vec<f64>], branch_caps: &[f64]) -> Result<f64, AnalyticError> {
    if branch_demands.len() != branch_caps.len() {
        return Err(AnalyticError::LengthMismatch);
    }
    let mut total = 0.0;
    for (k, (d, &cap)) in branch_demands.iter().zip(branch_caps).enumerate() {
        check_series(d)?;
        let required = max_prefix_average(d);
        if cap < required - TIE_TOL * required.abs().max(1.0) {
            return Err(AnalyticError::HypothesisNotMet {
                branch: k,
                cap,
                required,
            });
        }
        total += window_excess(d, cap);
    }
    Ok(total)
}

fn require_ideal(storage: &StorageTech) -> Result<(), AnalyticError> {
    if storage.is_ideal() {
        Ok(())
    } else {
        Err(AnalyticError::NonIdealStorage(*storage))
    }
}

/// Closed-form quantities for a generator/load pair.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticReport {
    pub generator: BusId,
    pub load: BusId,
    /// `min{ḡ, f}`
    pub cap: Cap,
    pub f_min: f64,
    pub h_min: MinBudget,
    pub h_sat: f64,
    pub tau: TauSegmentation,
    pub g_unconstrained: Vec<f64>,
}

/// Evaluates every closed form on a two-bus generator/load network with
/// storage budget `h`.
pub fn sgsl_report(net: &Network, demand: &DemandSeries, h: Cap) -> Result<AnalyticReport, AnalyticError> {
    if net.buses.len() != 2 || net.lines.len() != 1 {
        return Err(AnalyticError::Topology(String::from(
            "a generator/load pair needs exactly two buses and one line",
        )));
    }
    let gen = net
        .buses
        .iter()
        .find(|b| b.is_generator())
        .ok_or_else(|| AnalyticError::Topology(String::from("no generator bus")))?;
    let load = net
        .buses
        .iter()
        .find(|b| !b.is_generator())
        .ok_or_else(|| AnalyticError::Topology(String::from("no load bus")))?;
    require_ideal(&net.storage)?;
    let cost = gen.cost.ok_or(AnalyticError::NotStrictlyConvex)?;
    let d: Vec<f64> = (0..demand.period).map(|t| demand.at(load.id, t)).collect();
    let g_unconstrained = unconstrained_dispatch(&d, &cost)?;
    let cap = gen.gen_cap.unwrap_or(Cap::Unbounded).min(net.lines[0].flow_cap);
    let h_min = match cap {
        Cap::Finite(c) => h_min_sgsl(&d, c),
        Cap::Unbounded => MinBudget::Value(0.0),
    };
    Ok(AnalyticReport {
        generator: gen.id,
        load: load.id,
        cap,
        f_min: f_min_sgsl(&d, h),
        h_min,
        h_sat: h_sat(&d)?,
        tau: tau_sequence(&d)?,
        g_unconstrained,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StarReport {
    pub center: BusId,
    /// `(load bus, branch minimum budget)` in line order.
    pub branches: Vec<(BusId, f64)>,
    pub h_min: f64,
}

/// Minimum budget of a star network whose center is the only generator.
pub fn star_report(net: &Network, demand: &DemandSeries) -> Result<StarReport, AnalyticError> {
    let gens: Vec<_> = net.buses.iter().filter(|b| b.is_generator()).collect();
    if gens.len() != 1 {
        return Err(AnalyticError::Topology(String::from(
            "a star needs exactly one generator",
        )));
    }
    let center = gens[0];
    require_ideal(&net.storage)?;
    let cost = center.cost.ok_or(AnalyticError::NotStrictlyConvex)?;
    if !cost.is_strictly_convex() {
        return Err(AnalyticError::NotStrictlyConvex);
    }
    if center.gen_cap.is_some_and(|c| !c.is_unbounded()) {
        return Err(AnalyticError::Topology(String::from(
            "the star formula assumes unbounded generation at the center",
        )));
    }
    let mut loads = Vec::new();
    let mut demands = Vec::new();
    let mut caps = Vec::new();
    for line in &net.lines {
        let other = line
            .other_end(center.id)
            .ok_or_else(|| AnalyticError::Topology(String::from("a line does not touch the center")))?;
        let cap = line.flow_cap.finite().unwrap_or(f64::INFINITY);
        loads.push(other);
        demands.push((0..demand.period).map(|t| demand.at(other, t)).collect::<Vec<f64>>());
        caps.push(cap);
    }
    if loads.len() + 1 != net.buses.len() {
        return Err(AnalyticError::Topology(String::from(
            "every load must hang off the center",
        )));
    }
    let h_min = h_min_star(&demands, &caps)?;
    let branches = loads
        .into_iter()
        .zip(demands.iter().zip(&caps))
        .map(|(id, (d, &c))| (id, window_excess(d, c)))
        .collect();
    Ok(StarReport {
        center: center.id,
        branches,
        h_min,
    })
}

/// Position of bus `bus`, its unique neighbour's line, and the line's cap.
fn single_connection(prog: &ConvexProgram, bus: BusId) -> Result<(usize, usize), AnalyticError> {
    let inst = &prog.instance;
    let k = inst.bus_position(bus).ok_or(AnalyticError::UnknownBus(bus))?;
    let lines = inst.incident_lines(k);
    if !inst.is_generator(k) || lines.len() != 1 {
        return Err(AnalyticError::NotSingleConnection(bus));
    }
    if prog.layout.form != StorageForm::Split {
        return Err(AnalyticError::UnsupportedForm);
    }
    Ok((k, lines[0]))
}

fn require_optimal(sol: &Solution) -> Result<(), AnalyticError> {
    if sol.status == Status::Optimal {
        Ok(())
    } else {
        Err(AnalyticError::NotOptimal(sol.status))
    }
}

fn with_point(prog: &ConvexProgram, sol: &Solution, x: Vec<f64>) -> Solution {
    let mut out = sol.clone();
    out.s = prog.qp.ineq_residuals(&x).into_iter().map(|v| -v).collect();
    out.objective = prog.qp.objective(&x);
    out.x = x;
    out.certificate = None;
    out.history.clear();
    out
}

/// Generation above the line cap treated as a violation by [`purify`].
const PURIFY_TOL: f64 = 1e-10;
/// Minimum decrease of `Σ(γ + δ)` per modification step.
const PURIFY_PROGRESS: f64 = 1e-12;

/// Rewrites an optimum so that, at bus `bus`, generation, charging and
/// discharging are never all positive at once and generation never exceeds
/// the cap of the bus's only line.
pub fn purify(prog: &ConvexProgram, sol: &Solution, bus: BusId) -> Result<Solution, AnalyticError> {
    require_optimal(sol)?;
    let (k, line) = single_connection(prog, bus)?;
    let x = purify_point(prog, &sol.x, k, line, bus)?;
    Ok(with_point(prog, sol, x))
}

fn purify_point(
    prog: &ConvexProgram,
    x0: &[f64],
    k: usize,
    line: usize,
    bus: BusId,
) -> Result<Vec<f64>, AnalyticError> {
    let l = &prog.layout;
    let st = prog.instance.storage;
    let alpha = st.roundtrip();
    let period = l.period;
    let cap = prog.instance.lines[line].cap;
    let mut x = x0.to_vec();
    let gi = |t: usize| l.generation(k, t).unwrap();
    let ci = |t: usize| l.charge(k, t);
    let di = |t: usize| l.discharge(k, t);

    let cancel_simultaneous = |x: &mut Vec<f64>| {
        for t in 0..period {
            let (g, c, d) = (x[gi(t)], x[ci(t)], x[di(t)]);
            if g <= 0.0 || c <= 0.0 || d <= 0.0 {
                continue;
            }
            if alpha < 1.0 {
                let dg = ((1.0 - alpha) * c).min((1.0 - alpha) * d / alpha).min(g);
                x[gi(t)] = g - dg;
                x[ci(t)] = c - dg / (1.0 - alpha);
                x[di(t)] = d - alpha * dg / (1.0 - alpha);
            } else {
                let m = c.min(d);
                x[ci(t)] = c - m;
                x[di(t)] = d - m;
            }
        }
    };

    cancel_simultaneous(&mut x);
    let Cap::Finite(f) = cap else {
        return Ok(x);
    };
    let net_flow = |x: &[f64], t: usize| st.eff_charge * x[ci(t)] - x[di(t)] / st.eff_discharge;
    for _ in 0..period * period * period {
        let (t0, g0) = (0..period)
            .map(|t| (t, x[gi(t)]))
            .fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
        if g0 <= f + PURIFY_TOL {
            return Ok(x);
        }
        let t1 = (t0 + 1..period).find(|&t| net_flow(&x, t) < 0.0);
        let dg = t1.map_or(0.0, |t1| x[ci(t0)].min(x[di(t1)] / alpha).min(g0));
        if (1.0 + alpha) * dg < PURIFY_PROGRESS {
            break;
        }
        let t1 = t1.unwrap();
        x[gi(t0)] -= dg;
        x[ci(t0)] -= dg;
        x[gi(t1)] += alpha * dg;
        x[di(t1)] -= alpha * dg;
        cancel_simultaneous(&mut x);
    }
    let excess = (0..period).map(|t| x[gi(t)]).fold(f64::NEG_INFINITY, f64::max) - f;
    if excess <= 1e-9 {
        Ok(x)
    } else {
        Err(AnalyticError::PurifyStalled { bus, excess })
    }
}

/// Moves all storage of single-connection generator bus `bus` to its unique
/// neighbour, rerouting the charging and discharging power over the line.
/// Generation is unchanged. The input must satisfy `g(t) <= f` at the bus;
/// run [`purify`] first.
pub fn transfer_storage(prog: &ConvexProgram, sol: &Solution, bus: BusId) -> Result<Solution, AnalyticError> {
    let (k, line) = single_connection(prog, bus)?;
    let x = transfer_point(prog, &sol.x, k, line, bus)?;
    Ok(with_point(prog, sol, x))
}

fn transfer_point(
    prog: &ConvexProgram,
    x0: &[f64],
    k: usize,
    line: usize,
    bus: BusId,
) -> Result<Vec<f64>, AnalyticError> {
    let l = &prog.layout;
    let inst = &prog.instance;
    let ld = inst.lines[line];
    let j = if ld.from == k { ld.to } else { ld.from };
    let period = l.period;
    if let Cap::Finite(f) = ld.cap {
        for t in 0..period {
            let g = x0[l.generation(k, t).unwrap()];
            if g > f + 1e-9 {
                return Err(AnalyticError::TransferPrecondition {
                    bus,
                    t,
                    generation: g,
                    cap: f,
                });
            }
        }
    }
    let mut x = x0.to_vec();
    let orient = if ld.from == k { 1.0 } else { -1.0 };
    for t in 0..period {
        let (ci, di) = (l.charge(k, t), l.discharge(k, t));
        let r = x[ci] - x[di];
        x[l.flow(line, t)] += orient * r;
        if inst.slack == k {
            for other in (0..l.n_bus).filter(|&o| o != k) {
                x[l.angle(other, t)] -= r / ld.admittance;
            }
        } else {
            x[l.angle(k, t)] += r / ld.admittance;
        }
        x[l.charge(j, t)] += x[ci];
        x[l.discharge(j, t)] += x[di];
        x[ci] = 0.0;
        x[di] = 0.0;
    }
    x[l.capacity(j)] += x[l.capacity(k)];
    x[l.capacity(k)] = 0.0;
    Ok(x)
}
