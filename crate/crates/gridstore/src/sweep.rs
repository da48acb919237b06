//! Parameter sweeps over budget, line capacity or generation capacity.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io;

use gridstore_core::program::ConvexProgram;
use gridstore_core::solver::{certificate_residual, Certificate};
use gridstore_core::{build, kkt_report, solve, BuildError, BusId, Cap, ProblemSpec, SolverConfig, Status};
use rayon::prelude::*;

use crate::io::Model;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "GRIDSTORE_THREADS";

/// Slack used for the plateau, monotonicity and convexity checks.
pub const SHAPE_TOL: f64 = 1e-6;

/// Work pool sized by [`THREADS_ENV`] when set, otherwise by rayon's default.
pub fn work_pool() -> rayon::ThreadPool {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
    {
        builder = builder.num_threads(n.max(1));
    }
    builder.build().expect("thread pool")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Budget,
    /// Capacity of the line between two buses.
    FlowCap(BusId, BusId),
    /// Generation capacity of a generator bus.
    GenCap(BusId),
}

impl std::fmt::Display for SweepParam {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SweepParam::Budget => f.write_str("h"),
            SweepParam::FlowCap(a, b) => write!(f, "f_{a}-{b}"),
            SweepParam::GenCap(k) => write!(f, "g_{k}"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SweepError {
    #[error("grid must be strictly increasing and finite (index {0})")]
    Grid(usize),
    #[error("budget grid values must be nonnegative")]
    NegativeBudget,
    #[error("model has no line between buses {0} and {1}")]
    UnknownLine(BusId, BusId),
    #[error("bus {0} is not a generator in the model")]
    NotAGenerator(BusId),
    #[error(transparent)]
    Build(#[from] BuildError),
}

/// One sweep: a swept parameter, its grid, and the pinned-zero sets to
/// compare at every grid point.
#[derive(Debug, Clone)]
pub struct SweepPlan {
    pub model: Model,
    /// Budget, pins and overrides shared by every point. The swept parameter
    /// and the variant's pinned set replace the corresponding fields.
    pub base: ProblemSpec,
    pub param: SweepParam,
    pub grid: Vec<f64>,
    pub variants: Vec<BTreeSet<BusId>>,
    pub solver: SolverConfig,
}

impl SweepPlan {
    pub fn new(model: Model, param: SweepParam, grid: Vec<f64>) -> Self {
        Self {
            model,
            base: ProblemSpec::new(Cap::Finite(0.0)),
            param,
            grid,
            variants: vec![BTreeSet::new()],
            solver: SolverConfig::default(),
        }
    }

    pub fn with_base(mut self, base: ProblemSpec) -> Self {
        self.base = base;
        self
    }

    pub fn with_variants(mut self, variants: Vec<BTreeSet<BusId>>) -> Self {
        self.variants = variants;
        self
    }

    pub fn validate(&self) -> Result<(), SweepError> {
        for (i, v) in self.grid.iter().enumerate() {
            if !v.is_finite() || (i > 0 && *v <= self.grid[i - 1]) {
                return Err(SweepError::Grid(i));
            }
        }
        let net = &self.model.network;
        match self.param {
            SweepParam::Budget => {
                if self.grid.first().is_some_and(|&v| v < 0.0) {
                    return Err(SweepError::NegativeBudget);
                }
            }
            SweepParam::FlowCap(a, b) => {
                if net.line_index(a, b).is_none() {
                    return Err(SweepError::UnknownLine(a, b));
                }
            }
            SweepParam::GenCap(k) => {
                if !net.bus(k).is_some_and(|b| b.is_generator()) {
                    return Err(SweepError::NotAGenerator(k));
                }
            }
        }
        for v in 0..self.variants.len() {
            if let Some(&x) = self.grid.first() {
                build(&self.model.network, &self.model.demand, &self.spec(x, v))?;
            }
        }
        Ok(())
    }

    /// Problem specification at grid value `x` for variant `v`.
    pub fn spec(&self, x: f64, v: usize) -> ProblemSpec {
        let mut spec = self.base.clone();
        spec.pinned_zero = self.variants[v].clone();
        match self.param {
            SweepParam::Budget => spec.budget = Cap::Finite(x),
            SweepParam::FlowCap(a, b) => spec = spec.override_flow_cap(a, b, Cap::Finite(x)),
            SweepParam::GenCap(k) => spec = spec.override_gen_cap(k, Cap::Finite(x)),
        }
        spec
    }

    /// Builds the program of one grid point.
    pub fn program(&self, x: f64, v: usize) -> Result<ConvexProgram, BuildError> {
        build(&self.model.network, &self.model.demand, &self.spec(x, v))
    }
}

/// Outcome of one solve in a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub param: f64,
    pub variant: usize,
    pub status: Status,
    /// Primal objective; `None` unless optimal.
    pub objective: Option<f64>,
    pub dual_objective: f64,
    pub iters: usize,
    /// Largest KKT residual when optimal, certificate residual otherwise.
    pub max_residual: f64,
    pub certificate: Option<Certificate>,
}

/// Shape of one variant's curve along the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CurveFlags {
    pub first_feasible: Option<usize>,
    /// First index from which every point is feasible and equal to the last
    /// objective within [`SHAPE_TOL`] relative.
    pub plateau: Option<usize>,
    /// Triples of consecutive feasible points lying above their chord.
    pub convexity_violations: usize,
    /// Consecutive feasible pairs where the objective increases.
    pub monotonicity_violations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub param: SweepParam,
    pub variants: Vec<BTreeSet<BusId>>,
    /// Grid-major, one entry per (grid point, variant).
    pub points: Vec<SweepPoint>,
    pub flags: Vec<CurveFlags>,
}

fn solve_point(prog: &ConvexProgram, cfg: &SolverConfig, param: f64, variant: usize) -> SweepPoint {
    let sol = solve(prog, cfg);
    let max_residual = match (&sol.status, &sol.certificate) {
        (Status::Optimal, _) | (_, None) => kkt_report(prog, &sol).max_residual(),
        (_, Some(cert)) => certificate_residual(&prog.qp, cert),
    };
    SweepPoint {
        param,
        variant,
        status: sol.status,
        objective: sol.is_optimal().then_some(sol.objective),
        dual_objective: sol.dual_objective,
        iters: sol.iters,
        max_residual,
        certificate: sol.certificate,
    }
}

/// Solves every (grid point, variant) pair from a cold start.
pub fn run_sweep(plan: &SweepPlan) -> Result<SweepResult, SweepError> {
    plan.validate()?;
    let jobs: Vec<(f64, usize)> = plan
        .grid
        .iter()
        .flat_map(|&x| (0..plan.variants.len()).map(move |v| (x, v)))
        .collect();
    let points = work_pool().install(|| {
        jobs.par_iter()
            .map(|&(x, v)| plan.program(x, v).map(|prog| solve_point(&prog, &plan.solver, x, v)))
            .collect::<Result<Vec<_>, _>>()
    })?;
    let nv = plan.variants.len();
    let flags = (0..nv)
        .map(|v| {
            let curve: Vec<(f64, Option<f64>)> = points
                .iter()
                .filter(|p| p.variant == v)
                .map(|p| (p.param, p.objective))
                .collect();
            curve_flags(&curve)
        })
        .collect();
    Ok(SweepResult {
        param: plan.param,
        variants: plan.variants.clone(),
        points,
        flags,
    })
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= SHAPE_TOL * (1.0 + a.abs().max(b.abs()))
}

/// Derives the curve flags from `(grid value, objective)` pairs.
pub fn curve_flags(curve: &[(f64, Option<f64>)]) -> CurveFlags {
    let mut flags = CurveFlags {
        first_feasible: curve.iter().position(|(_, o)| o.is_some()),
        ..CurveFlags::default()
    };
    if let Some(Some(last)) = curve.last().map(|(_, o)| *o) {
        let mut start = curve.len() - 1;
        while start > 0 && curve[start - 1].1.is_some_and(|o| close(o, last)) {
            start -= 1;
        }
        flags.plateau = Some(start);
    }
    for w in curve.windows(2) {
        if let (Some(a), Some(b)) = (w[0].1, w[1].1) {
            if b > a + SHAPE_TOL * (1.0 + a.abs()) {
                flags.monotonicity_violations += 1;
            }
        }
    }
    for w in curve.windows(3) {
        if let ((x0, Some(f0)), (x1, Some(f1)), (x2, Some(f2))) = (w[0], w[1], w[2]) {
            let chord = f0 + (f2 - f0) * (x1 - x0) / (x2 - x0);
            if f1 > chord + SHAPE_TOL * (1.0 + chord.abs()) {
                flags.convexity_violations += 1;
            }
        }
    }
    flags
}

/// Formats `v` with 12 significant digits, `%g` style.
pub fn fmt_sig(v: f64) -> String {
    const DIGITS: i32 = 12;
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return if v.is_nan() {
            "nan".into()
        } else if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let sci = format!("{:.*e}", (DIGITS - 1) as usize, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("exponent");
    if !(-5..DIGITS).contains(&exp) {
        let m = trim_zeros(mantissa);
        format!("{m}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs())
    } else {
        let decimals = (DIGITS - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{v:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Label of a pinned-zero set in CSV output: `none` or ids joined by `;`.
pub fn variant_label(set: &BTreeSet<BusId>) -> String {
    if set.is_empty() {
        "none".to_string()
    } else {
        set.iter().map(|b| b.to_string()).collect::<Vec<_>>().join(";")
    }
}

pub const CSV_HEADER: &str = "param,variant,status,objective,iters,max_residual";

/// One CSV row; the objective column is empty unless optimal.
pub fn csv_row(
    param: f64,
    variant: &str,
    status: Status,
    objective: Option<f64>,
    iters: usize,
    residual: f64,
) -> String {
    format!(
        "{},{},{},{},{},{}",
        fmt_sig(param),
        variant,
        status,
        objective.map(fmt_sig).unwrap_or_default(),
        iters,
        fmt_sig(residual)
    )
}

impl SweepResult {
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Points of one variant in grid order.
    pub fn curve(&self, variant: usize) -> impl Iterator<Item = &SweepPoint> {
        self.points.iter().filter(move |p| p.variant == variant)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{CSV_HEADER}").unwrap();
        for p in &self.points {
            let label = variant_label(&self.variants[p.variant]);
            writeln!(
                out,
                "{}",
                csv_row(p.param, &label, p.status, p.objective, p.iters, p.max_residual)
            )
            .unwrap();
        }
        out
    }

    pub fn write_csv<W: io::Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(self.to_csv().as_bytes())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "sweep over {} ({} points)", self.param, self.points.len()).unwrap();
        for (v, set) in self.variants.iter().enumerate() {
            writeln!(out, "\nvariant K={}", variant_label(set)).unwrap();
            writeln!(
                out,
                "{:>14}  {:<10}  {:>18}  {:>5}  {:>10}",
                self.param, "status", "objective", "iters", "residual"
            )
            .unwrap();
            for p in self.curve(v) {
                writeln!(
                    out,
                    "{:>14}  {:<10}  {:>18}  {:>5}  {:>10.2e}",
                    fmt_sig(p.param),
                    p.status.as_str(),
                    p.objective.map(fmt_sig).unwrap_or_else(|| "-".into()),
                    p.iters,
                    p.max_residual
                )
                .unwrap();
            }
            let f = &self.flags[v];
            let at = |i: Option<usize>| match i {
                Some(i) => format!("{} (index {i})", fmt_sig(self.curve(v).nth(i).unwrap().param)),
                None => "none".to_string(),
            };
            writeln!(out, "first feasible: {}", at(f.first_feasible)).unwrap();
            writeln!(out, "plateau from: {}", at(f.plateau)).unwrap();
            writeln!(
                out,
                "convexity violations: {}, monotonicity violations: {}",
                f.convexity_violations, f.monotonicity_violations
            )
            .unwrap();
        }
        out
    }
}

/// `n` evenly spaced values from `a` to `b` inclusive.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
    }
}
