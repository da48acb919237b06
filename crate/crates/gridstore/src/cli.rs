//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 on usage, parse, model or verification
//! errors, 2 when the model is infeasible.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use gridstore_core::analytic::{f_min_sgsl, h_min_sgsl, sgsl_report, star_report, MinBudget};
use gridstore_core::solver::LinearSolver;
use gridstore_core::{build, kkt_report, solve, validate, BusId, Cap, ProblemSpec, SolverConfig, Status};

use crate::campaign::{run_counterexample, verify_theorem1, CampaignBounds};
use crate::io::{read_model, FormatError, Model};
use crate::sweep::{csv_row, fmt_sig, linspace, run_sweep, variant_label, SweepParam, SweepPlan, CSV_HEADER};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "gridstore",
    version,
    about = "Optimal storage placement on DC power-flow networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the placement problem for a model file.
    Solve(SolveArgs),
    /// Closed-form thresholds for generator/load pairs and stars.
    Analytic(AnalyticArgs),
    /// Solve over a grid of budgets, line caps or generation caps.
    Sweep(SweepArgs),
    /// Randomized check that single-connection generators need no storage.
    #[command(name = "verify-theorem1")]
    VerifyTheorem1(CampaignArgs),
    /// Solve the three-bus star counterexample with and without storage at
    /// the generator.
    Counterexample(CounterexampleArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Factorization {
    Auto,
    Dense,
    Sparse,
}

#[derive(Debug, Args)]
struct OutputArgs {
    /// Output format.
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Write the report to a file instead of standard output.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SolverArgs {
    #[arg(long, default_value_t = 200)]
    max_iters: usize,
    /// Gap and feasibility tolerance.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, value_enum, default_value_t = Factorization::Auto)]
    linear_solver: Factorization,
}

impl SolverArgs {
    fn config(&self) -> Result<SolverConfig, String> {
        let cfg = SolverConfig {
            max_iters: self.max_iters,
            tol_gap: self.tol,
            tol_feas: self.tol,
            linear_solver: match self.linear_solver {
                Factorization::Auto => LinearSolver::Auto,
                Factorization::Dense => LinearSolver::Dense,
                Factorization::Sparse => LinearSolver::Sparse,
            },
            ..SolverConfig::default()
        };
        cfg.validate().map_err(str::to_string)?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct SpecArgs {
    /// Storage budget, a nonnegative number or `inf`.
    #[arg(long, value_parser = parse_budget, allow_negative_numbers = true)]
    budget: Option<Cap>,
    /// Generator buses that may not host storage, comma separated.
    #[arg(long = "pin-zero", value_delimiter = ',')]
    pin_zero: Vec<u32>,
    /// Parameter override: `f_<a>-<b>=<cap>` for a line, `g_<k>=<cap>` for a generator.
    #[arg(long = "override", value_parser = parse_override)]
    overrides: Vec<Override>,
}

impl SpecArgs {
    fn spec(&self, default_budget: Option<Cap>) -> Result<ProblemSpec, String> {
        let budget = self
            .budget
            .or(default_budget)
            .ok_or_else(|| "--budget is required".to_string())?;
        let mut spec = ProblemSpec::new(budget).pin(self.pin_zero.iter().map(|&b| BusId(b)));
        for o in &self.overrides {
            spec = match o.param {
                SweepParam::FlowCap(a, b) => spec.override_flow_cap(a, b, o.value),
                SweepParam::GenCap(k) => spec.override_gen_cap(k, o.value),
                SweepParam::Budget => unreachable!("overrides never target the budget"),
            };
        }
        Ok(spec)
    }
}

#[derive(Debug, Args)]
struct SolveArgs {
    /// Network file.
    model: PathBuf,
    #[command(flatten)]
    spec: SpecArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    out: OutputArgs,
    /// Print the iteration log to standard error.
    #[arg(short, long)]
    verbose: bool,
    /// Write the program as `row col value` triplets.
    #[arg(long)]
    dump_program: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AnalyticArgs {
    model: PathBuf,
    /// Storage budget used for f_min.
    #[arg(long, value_parser = parse_budget, allow_negative_numbers = true, default_value = "0")]
    budget: Cap,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Debug, Args)]
struct SweepArgs {
    model: PathBuf,
    /// Swept parameter: `budget`, `f_<a>-<b>` or `g_<k>`.
    #[arg(long, value_parser = parse_param, default_value = "budget")]
    param: SweepParam,
    /// Grid as `start:stop:count` or a comma-separated list.
    #[arg(long, value_parser = parse_grid, allow_negative_numbers = true)]
    grid: Grid,
    /// Pinned-zero set to compare, `none` or comma-separated buses. Repeatable.
    #[arg(long = "variant", value_parser = parse_variant)]
    variants: Vec<Variant>,
    #[command(flatten)]
    spec: SpecArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Debug, Args)]
struct CampaignArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    trials: usize,
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u16).range(2..))]
    max_buses: u16,
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u16).range(1..))]
    max_period: u16,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Debug, Args)]
struct CounterexampleArgs {
    /// Capacity of both lines.
    #[arg(long, value_parser = parse_budget, default_value = "9.5")]
    flow_cap: Cap,
    #[arg(long, value_parser = parse_nonnegative, allow_negative_numbers = true, default_value_t = 5.0)]
    budget: f64,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Debug, Clone, Copy)]
struct Override {
    param: SweepParam,
    value: Cap,
}

#[derive(Debug, Clone)]
struct Grid(Vec<f64>);

#[derive(Debug, Clone)]
struct Variant(BTreeSet<BusId>);

fn parse_nonnegative(s: &str) -> Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("`{s}` is not a number"))?;
    if !v.is_finite() || v < 0.0 {
        return Err(format!("`{s}` must be a finite nonnegative number"));
    }
    Ok(v)
}

fn parse_budget(s: &str) -> Result<Cap, String> {
    if s.trim() == "inf" {
        return Ok(Cap::Unbounded);
    }
    parse_nonnegative(s).map(Cap::Finite)
}

fn parse_bus(s: &str) -> Result<BusId, String> {
    s.trim()
        .parse()
        .map(BusId)
        .map_err(|_| format!("`{s}` is not a bus id"))
}

fn parse_param(s: &str) -> Result<SweepParam, String> {
    let s = s.trim();
    if s == "budget" || s == "h" {
        Ok(SweepParam::Budget)
    } else if let Some(rest) = s.strip_prefix("f_") {
        let (a, b) = rest
            .split_once('-')
            .ok_or_else(|| format!("`{s}`: expected f_<a>-<b>"))?;
        Ok(SweepParam::FlowCap(parse_bus(a)?, parse_bus(b)?))
    } else if let Some(k) = s.strip_prefix("g_") {
        Ok(SweepParam::GenCap(parse_bus(k)?))
    } else {
        Err(format!("`{s}`: expected budget, f_<a>-<b> or g_<k>"))
    }
}

fn parse_override(s: &str) -> Result<Override, String> {
    let (name, value) = s
        .split_once('=')
        .ok_or_else(|| format!("`{s}`: expected <param>=<value>"))?;
    let param = parse_param(name)?;
    if param == SweepParam::Budget {
        return Err("use --budget to set the budget".into());
    }
    Ok(Override {
        param,
        value: parse_budget(value)?,
    })
}

fn parse_grid(s: &str) -> Result<Grid, String> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() == 3 {
        let num = |p: &str| p.trim().parse::<f64>().map_err(|_| format!("`{p}` is not a number"));
        let count: usize = parts[2]
            .trim()
            .parse()
            .map_err(|_| format!("`{}` is not a point count", parts[2]))?;
        return Ok(Grid(linspace(num(parts[0])?, num(parts[1])?, count)));
    }
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| p.trim().parse::<f64>().map_err(|_| format!("`{p}` is not a number")))
        .collect::<Result<Vec<_>, _>>()
        .map(Grid)
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    if s.trim() == "none" || s.trim().is_empty() {
        return Ok(Variant(BTreeSet::new()));
    }
    s.split(',').map(parse_bus).collect::<Result<_, _>>().map(Variant)
}

/// Failure of a command, reported as one line on standard error.
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn error(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_ERROR,
            message: message.into(),
        }
    }
}

type CmdResult = Result<i32, Failure>;

/// Parses `argv` (program name first), runs the command, and returns the
/// exit code.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let parts: Vec<&str> = text
                    .lines()
                    .take_while(|l| !l.starts_with("Usage:") && !l.starts_with("For more information"))
                    .map(str::trim)
                    .filter(|l| !l.is_empty())
                    .collect();
                let _ = writeln!(err, "{}", parts.join(" "));
                EXIT_ERROR
            } else {
                let _ = write!(out, "{text}");
                EXIT_OK
            };
        }
    };
    let result = match &cli.command {
        Command::Solve(a) => cmd_solve(a, out, err),
        Command::Analytic(a) => cmd_analytic(a, out),
        Command::Sweep(a) => cmd_sweep(a, out),
        Command::VerifyTheorem1(a) => cmd_campaign(a, out),
        Command::Counterexample(a) => cmd_counterexample(a, out),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn emit(out: &mut dyn Write, args: &OutputArgs, text: &str) -> Result<(), Failure> {
    match &args.output {
        Some(path) => fs::write(path, text).map_err(|e| Failure::error(format!("{}: {e}", path.display()))),
        None => out
            .write_all(text.as_bytes())
            .map_err(|e| Failure::error(format!("writing output: {e}"))),
    }
}

fn load(path: &Path) -> Result<Model, Failure> {
    let model = read_model(path).map_err(|e| match e {
        FormatError::Io { .. } => Failure::error(e.to_string()),
        FormatError::Syntax { .. } => Failure::error(format!("{}: {e}", path.display())),
    })?;
    let report = validate(&model.network, &model.demand);
    if !report.is_empty() {
        let issues: Vec<String> = report.issues.iter().map(|i| i.to_string()).collect();
        return Err(Failure::error(format!(
            "{}: invalid model: {}",
            path.display(),
            issues.join("; ")
        )));
    }
    Ok(model)
}

enum Topology {
    Pair,
    Star,
}

/// Generator/load pair iff two buses; star iff one generator touches every
/// load and no line joins two loads.
fn detect_topology(model: &Model) -> Option<Topology> {
    let net = &model.network;
    if net.buses.len() == 2 {
        return Some(Topology::Pair);
    }
    let gens: Vec<BusId> = net.buses.iter().filter(|b| b.is_generator()).map(|b| b.id).collect();
    let is_gen = |id: BusId| gens.contains(&id);
    let load_load = net.lines.iter().any(|l| !is_gen(l.from) && !is_gen(l.to));
    if load_load {
        return None;
    }
    gens.iter()
        .any(|&g| {
            let nb = net.neighbors(g);
            net.buses
                .iter()
                .filter(|b| !b.is_generator())
                .all(|b| nb.contains(&b.id))
        })
        .then_some(Topology::Star)
}

fn infeasibility_hints(model: &Model, spec: &ProblemSpec) -> Vec<String> {
    let mut hints = Vec::new();
    match detect_topology(model) {
        Some(Topology::Pair) => {
            if let Ok(r) = sgsl_report(&model.network, &model.demand, spec.budget) {
                let d: Vec<f64> = (0..model.demand.period).map(|t| model.demand.at(r.load, t)).collect();
                let f = f_min_sgsl(&d, spec.budget);
                hints.push(format!("f_min = {} for budget {}", fmt_sig(f), spec.budget));
                if let Cap::Finite(c) = r.cap {
                    match h_min_sgsl(&d, c) {
                        MinBudget::Value(h) => hints.push(format!("h_min = {} for cap {}", fmt_sig(h), fmt_sig(c))),
                        MinBudget::Infeasible => hints.push(format!("no budget is enough for cap {}", fmt_sig(c))),
                    }
                }
            }
        }
        Some(Topology::Star) => match star_report(&model.network, &model.demand) {
            Ok(r) => hints.push(format!("h_min = {}", fmt_sig(r.h_min))),
            Err(e) => hints.push(e.to_string()),
        },
        None => {}
    }
    hints
}

fn cmd_solve(a: &SolveArgs, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let cfg = a.solver.config().map_err(Failure::error)?;
    let model = load(&a.model)?;
    let spec = a.spec.spec(None).map_err(Failure::error)?;
    let prog = build(&model.network, &model.demand, &spec).map_err(|e| Failure::error(e.to_string()))?;
    if let Some(path) = &a.dump_program {
        fs::write(path, prog.triplets()).map_err(|e| Failure::error(format!("{}: {e}", path.display())))?;
    }
    let sol = solve(&prog, &cfg);
    if a.verbose {
        let _ = writeln!(
            err,
            "iter  pobj                dobj                pres      dres      gap       mu        step"
        );
        for h in &sol.history {
            let _ = writeln!(
                err,
                "{:>4}  {:<18.10e}  {:<18.10e}  {:<8.2e}  {:<8.2e}  {:<8.2e}  {:<8.2e}  {:.3}",
                h.iter, h.pobj, h.dobj, h.pres, h.dres, h.gap, h.mu, h.step
            );
        }
    }
    let residual = kkt_report(&prog, &sol).max_residual();
    let mut text = String::new();
    match a.out.format {
        Format::Csv => {
            writeln!(text, "{CSV_HEADER}").unwrap();
            let objective = sol.is_optimal().then_some(sol.objective);
            let budget = spec.budget.as_f64();
            writeln!(
                text,
                "{}",
                csv_row(
                    budget,
                    &variant_label(&spec.pinned_zero),
                    sol.status,
                    objective,
                    sol.iters,
                    residual
                )
            )
            .unwrap();
        }
        Format::Text => {
            writeln!(text, "status: {}", sol.status).unwrap();
            writeln!(text, "iterations: {}", sol.iters).unwrap();
            if sol.is_optimal() {
                writeln!(text, "objective: {:.6}", sol.objective).unwrap();
                writeln!(text, "max KKT residual: {residual:.2e}").unwrap();
                let prof = prog.extract(&sol.x);
                writeln!(text, "storage capacity:").unwrap();
                for (k, id) in prog.instance.bus_ids.iter().enumerate() {
                    writeln!(text, "  bus {id}: {:.6}", prof.capacity[k]).unwrap();
                }
                writeln!(text, "generation:").unwrap();
                for (k, id) in prog.instance.bus_ids.iter().enumerate() {
                    if prog.instance.is_generator(k) {
                        let g: Vec<String> = prof.generation[k].iter().map(|v| format!("{v:.6}")).collect();
                        writeln!(text, "  bus {id}: {}", g.join(" ")).unwrap();
                    }
                }
            }
        }
    }
    emit(out, &a.out, &text)?;
    match sol.status {
        Status::Optimal => Ok(EXIT_OK),
        Status::Infeasible => {
            let hints = infeasibility_hints(&model, &spec);
            if hints.is_empty() {
                let _ = writeln!(err, "model is infeasible");
            } else {
                let _ = writeln!(err, "model is infeasible; {}", hints.join("; "));
            }
            Ok(EXIT_INFEASIBLE)
        }
        other => Err(Failure::error(format!("solver stopped without a solution: {other}"))),
    }
}

fn cmd_analytic(a: &AnalyticArgs, out: &mut dyn Write) -> CmdResult {
    let model = load(&a.model)?;
    let mut rows: Vec<(String, f64)> = Vec::new();
    let mut text = String::new();
    match detect_topology(&model) {
        Some(Topology::Pair) => {
            let r = sgsl_report(&model.network, &model.demand, a.budget).map_err(|e| Failure::error(e.to_string()))?;
            writeln!(text, "generator/load pair: generator {}, load {}", r.generator, r.load).unwrap();
            writeln!(text, "cap = min(gen cap, line cap) = {}", r.cap).unwrap();
            writeln!(text, "f_min (budget {}) = {}", a.budget, fmt_sig(r.f_min)).unwrap();
            rows.push(("f_min".into(), r.f_min));
            match r.h_min {
                MinBudget::Value(h) => {
                    writeln!(text, "h_min (cap {}) = {}", r.cap, fmt_sig(h)).unwrap();
                    rows.push(("h_min".into(), h));
                }
                MinBudget::Infeasible => {
                    writeln!(text, "h_min (cap {}) = none: cap below the largest prefix average", r.cap).unwrap();
                    rows.push(("h_min".into(), f64::INFINITY));
                }
            }
            writeln!(text, "h_sat = {}", fmt_sig(r.h_sat)).unwrap();
            rows.push(("h_sat".into(), r.h_sat));
            let bps: Vec<String> = r.tau.breakpoints.iter().map(|b| b.to_string()).collect();
            writeln!(text, "segment breakpoints: {}", bps.join(" ")).unwrap();
            let g: Vec<String> = r.g_unconstrained.iter().map(|v| fmt_sig(*v)).collect();
            writeln!(text, "unconstrained dispatch: {}", g.join(" ")).unwrap();
            for (t, v) in r.g_unconstrained.iter().enumerate() {
                rows.push((format!("g_{}", t + 1), *v));
            }
        }
        Some(Topology::Star) => {
            let r = star_report(&model.network, &model.demand).map_err(|e| Failure::error(e.to_string()))?;
            writeln!(text, "star centred at generator {}", r.center).unwrap();
            for (bus, h) in &r.branches {
                writeln!(text, "branch to bus {bus}: h_min = {}", fmt_sig(*h)).unwrap();
                rows.push((format!("h_min_{bus}"), *h));
            }
            writeln!(text, "h_min = {}", fmt_sig(r.h_min)).unwrap();
            rows.push(("h_min".into(), r.h_min));
        }
        None => {
            return Err(Failure::error(
                "closed forms need a two-bus generator/load pair or a star whose generator touches every load; use `solve` or `sweep`",
            ))
        }
    }
    if a.out.format == Format::Csv {
        text = String::from("quantity,value\n");
        for (k, v) in &rows {
            writeln!(text, "{k},{}", fmt_sig(*v)).unwrap();
        }
    }
    emit(out, &a.out, &text)?;
    Ok(EXIT_OK)
}

fn cmd_sweep(a: &SweepArgs, out: &mut dyn Write) -> CmdResult {
    let cfg = a.solver.config().map_err(Failure::error)?;
    let model = load(&a.model)?;
    let default_budget = (a.param == SweepParam::Budget).then_some(Cap::Finite(0.0));
    let base = a.spec.spec(default_budget).map_err(Failure::error)?;
    let variants = if a.variants.is_empty() {
        vec![BTreeSet::new()]
    } else {
        a.variants.iter().map(|v| v.0.clone()).collect()
    };
    let mut plan = SweepPlan::new(model, a.param, a.grid.0.clone())
        .with_base(base)
        .with_variants(variants);
    plan.solver = cfg;
    let result = run_sweep(&plan).map_err(|e| Failure::error(e.to_string()))?;
    let text = match a.out.format {
        Format::Csv => result.to_csv(),
        Format::Text => result.to_text(),
    };
    emit(out, &a.out, &text)?;
    Ok(EXIT_OK)
}

fn cmd_campaign(a: &CampaignArgs, out: &mut dyn Write) -> CmdResult {
    let bounds = CampaignBounds {
        max_buses: a.max_buses as usize,
        max_period: a.max_period as usize,
        ..CampaignBounds::default()
    };
    let report = verify_theorem1(a.seed, a.trials, &bounds);
    let text = match a.out.format {
        Format::Csv => report.to_csv(),
        Format::Text => report.to_text(),
    };
    emit(out, &a.out, &text)?;
    if report.is_clean() {
        Ok(EXIT_OK)
    } else {
        Err(Failure::error(format!(
            "{} of {} trials failed",
            report.failures(),
            a.trials
        )))
    }
}

fn cmd_counterexample(a: &CounterexampleArgs, out: &mut dyn Write) -> CmdResult {
    let report = run_counterexample(a.flow_cap, a.budget);
    let text = match a.out.format {
        Format::Csv => format!("{CSV_HEADER}\n{}\n", report.csv_rows().join("\n")),
        Format::Text => report.to_text(),
    };
    emit(out, &a.out, &text)?;
    let published = a.flow_cap == Cap::Finite(9.5) && a.budget == 5.0;
    if published && !report.matches_published() {
        return Err(Failure::error(format!(
            "published values not reproduced: p = {:?}, pi = {:?}",
            report.p.objective, report.pi.objective
        )));
    }
    if report.p.status == Status::Infeasible {
        return Ok(EXIT_INFEASIBLE);
    }
    Ok(EXIT_OK)
}
