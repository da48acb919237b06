//! Network, demand and storage-technology types.
//!
//! Everything is per-unit. Stored energy is measured in power units (energy
//! per time step), so no step length appears anywhere in the model.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

/// Identifier of a bus as it appears in model files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BusId(pub u32);

impl fmt::Display for BusId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A capacity that is either a finite per-unit value or explicitly unbounded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cap {
    Finite(f64),
    Unbounded,
}

impl Cap {
    pub fn finite(self) -> Option<f64> {
        match self {
            Cap::Finite(v) => Some(v),
            Cap::Unbounded => None,
        }
    }

    pub fn is_unbounded(self) -> bool {
        matches!(self, Cap::Unbounded)
    }

    /// Pointwise minimum; `Unbounded` is the identity.
    pub fn min(self, other: Cap) -> Cap {
        match (self, other) {
            (Cap::Finite(a), Cap::Finite(b)) => Cap::Finite(a.min(b)),
            (Cap::Finite(a), Cap::Unbounded) | (Cap::Unbounded, Cap::Finite(a)) => Cap::Finite(a),
            (Cap::Unbounded, Cap::Unbounded) => Cap::Unbounded,
        }
    }

    /// The value as an extended real, `+inf` when unbounded.
    pub fn as_f64(self) -> f64 {
        self.finite().unwrap_or(f64::INFINITY)
    }
}

impl fmt::Display for Cap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cap::Finite(v) => write!(f, "{v}"),
            Cap::Unbounded => f.write_str("inf"),
        }
    }
}

/// Quadratic generation cost `c2 g^2 + c1 g + c0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostPoly {
    pub c2: f64,
    pub c1: f64,
    pub c0: f64,
}

impl CostPoly {
    pub const fn new(c2: f64, c1: f64, c0: f64) -> Self {
        Self { c2, c1, c0 }
    }

    pub fn eval(&self, g: f64) -> f64 {
        (self.c2 * g + self.c1) * g + self.c0
    }

    pub fn derivative(&self, g: f64) -> f64 {
        2.0 * self.c2 * g + self.c1
    }

    pub fn is_strictly_convex(&self) -> bool {
        self.c2 > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BusKind {
    Generator,
    Load,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: BusId,
    pub kind: BusKind,
    /// Generation capacity; only meaningful on generator buses.
    pub gen_cap: Option<Cap>,
    pub cost: Option<CostPoly>,
    /// Load buses hosting renewables may carry negative demand.
    pub renewable: bool,
}

impl Bus {
    pub fn generator(id: u32, gen_cap: Cap, cost: CostPoly) -> Self {
        Self {
            id: BusId(id),
            kind: BusKind::Generator,
            gen_cap: Some(gen_cap),
            cost: Some(cost),
            renewable: false,
        }
    }

    pub fn load(id: u32) -> Self {
        Self {
            id: BusId(id),
            kind: BusKind::Load,
            gen_cap: None,
            cost: None,
            renewable: false,
        }
    }

    pub fn is_generator(&self) -> bool {
        self.kind == BusKind::Generator
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub from: BusId,
    pub to: BusId,
    pub admittance: f64,
    pub flow_cap: Cap,
}

impl Line {
    pub fn new(from: u32, to: u32, admittance: f64, flow_cap: Cap) -> Self {
        Self {
            from: BusId(from),
            to: BusId(to),
            admittance,
            flow_cap,
        }
    }

    pub fn connects(&self, a: BusId, b: BusId) -> bool {
        (self.from == a && self.to == b) || (self.from == b && self.to == a)
    }

    pub fn other_end(&self, bus: BusId) -> Option<BusId> {
        if self.from == bus {
            Some(self.to)
        } else if self.to == bus {
            Some(self.from)
        } else {
            None
        }
    }
}

/// Periodic demand, one column of `period` values per load bus.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandSeries {
    pub period: usize,
    pub columns: BTreeMap<BusId, Vec<f64>>,
}

impl DemandSeries {
    pub fn new(period: usize) -> Self {
        Self {
            period,
            columns: BTreeMap::new(),
        }
    }

    pub fn with_column(mut self, bus: u32, values: Vec<f64>) -> Self {
        self.columns.insert(BusId(bus), values);
        self
    }

    pub fn column(&self, bus: BusId) -> Option<&[f64]> {
        self.columns.get(&bus).map(Vec::as_slice)
    }

    /// Demand at `bus` for any time index, wrapping periodically. Buses
    /// without a column draw nothing.
    pub fn at(&self, bus: BusId, t: usize) -> f64 {
        match self.columns.get(&bus) {
            Some(col) if !col.is_empty() => col[t % col.len()],
            _ => 0.0,
        }
    }
}

/// Storage technology shared by every bus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StorageTech {
    pub eff_charge: f64,
    pub eff_discharge: f64,
    pub ramp_charge: f64,
    pub ramp_discharge: f64,
}

impl StorageTech {
    /// Lossless storage with unit ramp fractions.
    pub const IDEAL: StorageTech = StorageTech {
        eff_charge: 1.0,
        eff_discharge: 1.0,
        ramp_charge: 1.0,
        ramp_discharge: 1.0,
    };

    pub fn roundtrip(&self) -> f64 {
        self.eff_charge * self.eff_discharge
    }

    /// Storage level at installation; always empty.
    pub const fn initial_level(&self) -> f64 {
        0.0
    }

    pub fn is_ideal(&self) -> bool {
        self.roundtrip() == 1.0 && self.ramp_charge == 1.0 && self.ramp_discharge == 1.0
    }
}

impl Default for StorageTech {
    fn default() -> Self {
        Self::IDEAL
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub storage: StorageTech,
    /// Reference bus; `None` selects the lowest-id generator.
    pub slack_bus: Option<BusId>,
}

impl Network {
    pub fn new(buses: Vec<Bus>, lines: Vec<Line>, storage: StorageTech) -> Self {
        Self {
            buses,
            lines,
            storage,
            slack_bus: None,
        }
    }

    pub fn bus_index(&self, id: BusId) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn bus(&self, id: BusId) -> Option<&Bus> {
        self.buses.iter().find(|b| b.id == id)
    }

    pub fn line_index(&self, a: BusId, b: BusId) -> Option<usize> {
        self.lines.iter().position(|l| l.connects(a, b))
    }

    pub fn slack(&self) -> Option<BusId> {
        self.slack_bus
            .or_else(|| self.buses.iter().filter(|b| b.is_generator()).map(|b| b.id).min())
    }

    /// Distinct neighbours of `bus`, in line order.
    pub fn neighbors(&self, bus: BusId) -> Vec<BusId> {
        let mut out: Vec<BusId> = Vec::new();
        for l in &self.lines {
            if let Some(o) = l.other_end(bus) {
                if o != bus && !out.contains(&o) {
                    out.push(o);
                }
            }
        }
        out
    }

    pub fn degree(&self, bus: BusId) -> usize {
        self.neighbors(bus).len()
    }

    fn is_connected(&self) -> bool {
        let n = self.buses.len();
        if n == 0 {
            return true;
        }
        let mut adj = vec![Vec::new(); n];
        for l in &self.lines {
            if let (Some(a), Some(b)) = (self.bus_index(l.from), self.bus_index(l.to)) {
                adj[a].push(b);
                adj[b].push(a);
            }
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// What a validation issue is about.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subject {
    Model,
    Bus(BusId),
    Line(BusId, BusId),
    Storage,
    Demand,
}

impl fmt::Display for Subject {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Subject::Model => f.write_str("model"),
            Subject::Bus(id) => write!(f, "bus {id}"),
            Subject::Line(a, b) => write!(f, "line {a}-{b}"),
            Subject::Storage => f.write_str("storage"),
            Subject::Demand => f.write_str("demand"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Issue {
    pub subject: Subject,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.subject, self.message)
    }
}

/// Every violated model invariant; empty iff the model is well formed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn contains(&self, needle: &str) -> bool {
        self.issues.iter().any(|i| i.message.contains(needle))
    }

    fn push(&mut self, subject: Subject, message: impl Into<String>) {
        self.issues.push(Issue {
            subject,
            message: message.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, issue) in self.issues.iter().enumerate() {
            if k > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{issue}")?;
        }
        Ok(())
    }
}

fn positive_finite(v: f64) -> bool {
    v.is_finite() && v > 0.0
}

fn check_network(net: &Network, report: &mut ValidationReport) {
    let mut ids = BTreeSet::new();
    for b in &net.buses {
        if !ids.insert(b.id) {
            report.push(Subject::Bus(b.id), "duplicate bus id");
        }
        match b.kind {
            BusKind::Generator => {
                if b.gen_cap.is_none() || b.cost.is_none() || b.renewable {
                    report.push(
                        Subject::Bus(b.id),
                        "bus kind violation: generator needs gen_cap and cost and cannot be renewable",
                    );
                }
            }
            BusKind::Load => {
                if b.gen_cap.is_some() || b.cost.is_some() {
                    report.push(
                        Subject::Bus(b.id),
                        "bus kind violation: load bus carries generation data",
                    );
                }
            }
        }
        if let Some(Cap::Finite(g)) = b.gen_cap {
            if !(g.is_finite() && g >= 0.0) {
                report.push(Subject::Bus(b.id), format!("generation cap {g} must be nonnegative"));
            }
        }
        if let Some(c) = b.cost {
            let ok = [c.c2, c.c1, c.c0].iter().all(|v| v.is_finite() && *v >= 0.0);
            if !ok {
                report.push(Subject::Bus(b.id), "cost coefficients must be nonnegative");
            }
        }
    }
    if !net.buses.iter().any(Bus::is_generator) {
        report.push(Subject::Model, "no generator buses");
    }
    if !net.buses.iter().any(|b| b.kind == BusKind::Load) {
        report.push(Subject::Model, "no load buses");
    }

    let mut pairs = BTreeSet::new();
    let mut endpoints_ok = true;
    for l in &net.lines {
        let subj = Subject::Line(l.from, l.to);
        for end in [l.from, l.to] {
            if net.bus(end).is_none() {
                report.push(subj, format!("endpoint {end} does not resolve to a bus"));
                endpoints_ok = false;
            }
        }
        if l.from == l.to {
            report.push(subj, "line connects a bus to itself");
        }
        let key = (l.from.min(l.to), l.from.max(l.to));
        if !pairs.insert(key) {
            report.push(subj, "more than one line between the same buses");
        }
        if !positive_finite(l.admittance) {
            report.push(subj, format!("admittance {} must be positive", l.admittance));
        }
        if let Cap::Finite(f) = l.flow_cap {
            if !positive_finite(f) {
                report.push(subj, format!("flow cap {f} must be positive"));
            }
        }
    }
    if endpoints_ok && !net.is_connected() {
        report.push(Subject::Model, "graph not connected");
    }

    if let Some(slack) = net.slack_bus {
        if net.bus(slack).is_none() {
            report.push(Subject::Model, format!("slack bus {slack} does not exist"));
        }
    }

    let s = &net.storage;
    if !(s.eff_charge > 0.0 && s.eff_charge <= 1.0) {
        report.push(Subject::Storage, "charging efficiency must lie in (0, 1]");
    }
    if !(s.eff_discharge > 0.0 && s.eff_discharge <= 1.0) {
        report.push(Subject::Storage, "discharging efficiency must lie in (0, 1]");
    }
    if !(s.ramp_charge > 0.0 && s.ramp_charge <= 1.0 / s.eff_charge) {
        report.push(Subject::Storage, "charging ramp must lie in (0, 1/eff_charge]");
    }
    if !(s.ramp_discharge > 0.0 && s.ramp_discharge <= s.eff_discharge) {
        report.push(Subject::Storage, "discharging ramp must lie in (0, eff_discharge]");
    }
}

fn check_demand(net: &Network, demand: &DemandSeries, report: &mut ValidationReport) {
    if demand.period == 0 {
        report.push(Subject::Demand, "period must be at least 1");
    }
    for (&id, col) in &demand.columns {
        let Some(bus) = net.bus(id) else {
            report.push(Subject::Bus(id), "demand column for unknown bus");
            continue;
        };
        if bus.is_generator() {
            report.push(Subject::Bus(id), "bus kind violation: generator bus carries demand");
        }
        if col.len() != demand.period {
            report.push(
                Subject::Bus(id),
                format!("demand column has {} entries, period is {}", col.len(), demand.period),
            );
        }
        if col.iter().any(|v| !v.is_finite()) {
            report.push(Subject::Bus(id), "demand entries must be finite");
        }
        if !bus.renewable && col.iter().any(|v| *v < 0.0) {
            report.push(Subject::Bus(id), "negative demand on a bus not flagged renewable");
        }
    }
    for b in net.buses.iter().filter(|b| b.kind == BusKind::Load) {
        if !demand.columns.contains_key(&b.id) {
            report.push(Subject::Bus(b.id), "bus kind violation: load bus without demand column");
        }
    }
}

/// Checks every model invariant and lists each violation.
pub fn validate(net: &Network, demand: &DemandSeries) -> ValidationReport {
    let mut report = ValidationReport::default();
    check_network(net, &mut report);
    check_demand(net, demand, &mut report);
    report
}

/// Network-only validation (no demand attached).
pub fn validate_network(net: &Network) -> ValidationReport {
    let mut report = ValidationReport::default();
    check_network(net, &mut report);
    report
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BusPartition {
    pub generators: Vec<BusId>,
    pub loads: Vec<BusId>,
    /// Generator buses with exactly one neighbour.
    pub single_connection: Vec<BusId>,
}

/// Splits buses into generators and loads and finds the single-connection
/// generators.
pub fn classify_buses(net: &Network) -> Result<BusPartition, ValidationReport> {
    let report = validate_network(net);
    if !report.is_empty() {
        return Err(report);
    }
    let mut part = BusPartition {
        generators: Vec::new(),
        loads: Vec::new(),
        single_connection: Vec::new(),
    };
    let mut degree: BTreeMap<BusId, usize> = net.buses.iter().map(|b| (b.id, 0)).collect();
    for l in &net.lines {
        *degree.entry(l.from).or_default() += 1;
        *degree.entry(l.to).or_default() += 1;
    }
    for b in &net.buses {
        match b.kind {
            BusKind::Generator => {
                part.generators.push(b.id);
                if degree[&b.id] == 1 {
                    part.single_connection.push(b.id);
                }
            }
            BusKind::Load => part.loads.push(b.id),
        }
    }
    Ok(part)
}
