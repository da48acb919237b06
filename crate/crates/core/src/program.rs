//! Translation of a placement instance into a standard-form convex QP.
//!
//! Variables are laid out in blocks: generation (generator buses only),
//! charging and discharging (or net charging), voltage angles, line flows,
//! and finally one storage capacity per bus. Storage levels are not
//! variables; each level row is the running sum of charge minus discharge.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::model::{validate, BusId, Cap, CostPoly, DemandSeries, Network, StorageTech, ValidationReport};
use crate::qp::QuadraticProgram;

/// Where a constraint row comes from in the placement model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ConstraintTag {
    /// `0 <= g <= gbar`
    GenerationLimit,
    /// `p_kl = y_kl (theta_k - theta_l)`
    FlowDefinition,
    /// `|p_kl| <= f_kl`
    FlowLimit,
    /// `0 <= s_k(t) <= b_k`, with `s_k` expanded as a running sum.
    StorageLevel,
    /// `b_k >= 0`
    CapacitySign,
    /// `sum b_k <= h`
    Budget,
    /// `0 <= gamma <= eps_g b`, `0 <= delta <= eps_d b`
    Ramp,
    /// Nodal power balance.
    PowerBalance,
    /// Storage returns to its initial level at the end of the cycle.
    Periodicity,
    /// Reference angle pinned to zero.
    SlackAngle,
    /// `b_i = 0` for pinned buses.
    PinnedZero,
}

impl ConstraintTag {
    pub const ALL: [ConstraintTag; 11] = [
        ConstraintTag::GenerationLimit,
        ConstraintTag::FlowDefinition,
        ConstraintTag::FlowLimit,
        ConstraintTag::StorageLevel,
        ConstraintTag::CapacitySign,
        ConstraintTag::Budget,
        ConstraintTag::Ramp,
        ConstraintTag::PowerBalance,
        ConstraintTag::Periodicity,
        ConstraintTag::SlackAngle,
        ConstraintTag::PinnedZero,
    ];

    /// Number of the model equation the row realizes, if it has one.
    pub fn equation(self) -> Option<u8> {
        match self {
            ConstraintTag::GenerationLimit => Some(1),
            ConstraintTag::FlowDefinition => Some(2),
            ConstraintTag::FlowLimit => Some(3),
            ConstraintTag::StorageLevel | ConstraintTag::CapacitySign => Some(5),
            ConstraintTag::Budget => Some(6),
            ConstraintTag::Ramp => Some(7),
            ConstraintTag::PowerBalance => Some(8),
            ConstraintTag::Periodicity => Some(10),
            ConstraintTag::SlackAngle | ConstraintTag::PinnedZero => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ConstraintTag::GenerationLimit => "generation-limit",
            ConstraintTag::FlowDefinition => "flow-definition",
            ConstraintTag::FlowLimit => "flow-limit",
            ConstraintTag::StorageLevel => "storage-level",
            ConstraintTag::CapacitySign => "capacity-sign",
            ConstraintTag::Budget => "budget",
            ConstraintTag::Ramp => "ramp",
            ConstraintTag::PowerBalance => "power-balance",
            ConstraintTag::Periodicity => "periodicity",
            ConstraintTag::SlackAngle => "slack-angle",
            ConstraintTag::PinnedZero => "pinned-zero",
        }
    }
}

impl fmt::Display for ConstraintTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.equation() {
            Some(eq) => write!(f, "{} (eq. {eq})", self.name()),
            None => f.write_str(self.name()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Site {
    Network,
    Bus(BusId),
    Line(BusId, BusId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowLabel {
    pub tag: ConstraintTag,
    pub site: Site,
    /// Zero-based time step, when the row belongs to one.
    pub t: Option<usize>,
}

impl fmt::Display for RowLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.tag)?;
        match self.site {
            Site::Network => {}
            Site::Bus(b) => write!(f, " at bus {b}")?,
            Site::Line(a, b) => write!(f, " on line {a}-{b}")?,
        }
        if let Some(t) = self.t {
            write!(f, " t={}", t + 1)?;
        }
        Ok(())
    }
}

/// How storage operation is parameterized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StorageForm {
    /// Separate nonnegative charging and discharging powers.
    #[default]
    Split,
    /// A single signed net charging power per bus and step. Lossless only.
    NetCharge,
}

/// Budget, pinned buses and parameter overrides for one problem instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub budget: Cap,
    pub pinned_zero: BTreeSet<BusId>,
    /// Flow-cap replacements keyed by unordered bus pair.
    pub flow_caps: Vec<(BusId, BusId, Cap)>,
    pub gen_caps: Vec<(BusId, Cap)>,
}

impl ProblemSpec {
    pub fn new(budget: Cap) -> Self {
        Self {
            budget,
            pinned_zero: BTreeSet::new(),
            flow_caps: Vec::new(),
            gen_caps: Vec::new(),
        }
    }

    pub fn with_budget(budget: f64) -> Self {
        Self::new(Cap::Finite(budget))
    }

    pub fn pin(mut self, buses: impl IntoIterator<Item = BusId>) -> Self {
        self.pinned_zero.extend(buses);
        self
    }

    pub fn override_flow_cap(mut self, a: BusId, b: BusId, cap: Cap) -> Self {
        self.flow_caps
            .retain(|(x, y, _)| !((*x == a && *y == b) || (*x == b && *y == a)));
        self.flow_caps.push((a, b, cap));
        self
    }

    pub fn override_gen_cap(mut self, bus: BusId, cap: Cap) -> Self {
        self.gen_caps.retain(|(x, _)| *x != bus);
        self.gen_caps.push((bus, cap));
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BuildOptions {
    pub storage_form: StorageForm,
    /// Constraint families to leave out entirely.
    pub drop_tags: Vec<ConstraintTag>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BuildError {
    InvalidModel(ValidationReport),
    UnknownBus(BusId),
    PinnedNotGenerator(BusId),
    UnknownLine(BusId, BusId),
    NotAGenerator(BusId),
    NegativeBudget(f64),
    NetChargeNeedsLossless,
}

impl fmt::Display for BuildError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BuildError::InvalidModel(r) => write!(f, "invalid model: {r}"),
            BuildError::UnknownBus(b) => write!(f, "unknown bus {b}"),
            BuildError::PinnedNotGenerator(b) => write!(f, "pinned bus {b} is not a generator"),
            BuildError::UnknownLine(a, b) => write!(f, "no line between {a} and {b}"),
            BuildError::NotAGenerator(b) => write!(f, "bus {b} is not a generator"),
            BuildError::NegativeBudget(h) => write!(f, "budget {h} is negative"),
            BuildError::NetChargeNeedsLossless => {
                f.write_str("net-charge form requires unit charging and discharging efficiency")
            }
        }
    }
}

impl core::error::Error for BuildError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Generation,
    Charge,
    Discharge,
    NetCharge,
    Angle,
    Flow,
    Capacity,
}

/// Meaning of one program variable; `index` is a bus or line position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarRef {
    pub kind: VarKind,
    pub index: usize,
    pub t: Option<usize>,
}

/// Variable index map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VarLayout {
    pub period: usize,
    pub n_bus: usize,
    pub n_line: usize,
    pub form: StorageForm,
    /// Generator slot of each bus.
    pub gen_slot: Vec<Option<usize>>,
    n_gen: usize,
    off_storage: usize,
    off_theta: usize,
    off_flow: usize,
    off_cap: usize,
    len: usize,
}

impl VarLayout {
    fn new(period: usize, gen_slot: Vec<Option<usize>>, n_line: usize, form: StorageForm) -> Self {
        let n_bus = gen_slot.len();
        let n_gen = gen_slot.iter().filter(|s| s.is_some()).count();
        let storage_blocks = match form {
            StorageForm::Split => 2,
            StorageForm::NetCharge => 1,
        };
        let off_storage = n_gen * period;
        let off_theta = off_storage + storage_blocks * n_bus * period;
        let off_flow = off_theta + n_bus * period;
        let off_cap = off_flow + n_line * period;
        Self {
            period,
            n_bus,
            n_line,
            form,
            gen_slot,
            n_gen,
            off_storage,
            off_theta,
            off_flow,
            off_cap,
            len: off_cap + n_bus,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn n_gen(&self) -> usize {
        self.n_gen
    }

    pub fn generation(&self, bus: usize, t: usize) -> Option<usize> {
        self.gen_slot[bus].map(|s| s * self.period + t)
    }

    pub fn charge(&self, bus: usize, t: usize) -> usize {
        assert_eq!(self.form, StorageForm::Split);
        self.off_storage + bus * self.period + t
    }

    pub fn discharge(&self, bus: usize, t: usize) -> usize {
        assert_eq!(self.form, StorageForm::Split);
        self.off_storage + (self.n_bus + bus) * self.period + t
    }

    pub fn net_charge(&self, bus: usize, t: usize) -> usize {
        assert_eq!(self.form, StorageForm::NetCharge);
        self.off_storage + bus * self.period + t
    }

    pub fn angle(&self, bus: usize, t: usize) -> usize {
        self.off_theta + bus * self.period + t
    }

    pub fn flow(&self, line: usize, t: usize) -> usize {
        self.off_flow + line * self.period + t
    }

    pub fn capacity(&self, bus: usize) -> usize {
        self.off_cap + bus
    }

    /// Inverse of the accessors above.
    pub fn describe(&self, j: usize) -> Option<VarRef> {
        let p = self.period;
        let r = |kind, rel: usize| VarRef {
            kind,
            index: rel / p,
            t: Some(rel % p),
        };
        if j < self.off_storage {
            let slot = j / p;
            let bus = self.gen_slot.iter().position(|s| *s == Some(slot))?;
            return Some(VarRef {
                kind: VarKind::Generation,
                index: bus,
                t: Some(j % p),
            });
        }
        if j < self.off_theta {
            let rel = j - self.off_storage;
            return Some(match self.form {
                StorageForm::NetCharge => r(VarKind::NetCharge, rel),
                StorageForm::Split if rel < self.n_bus * p => r(VarKind::Charge, rel),
                StorageForm::Split => r(VarKind::Discharge, rel - self.n_bus * p),
            });
        }
        if j < self.off_flow {
            return Some(r(VarKind::Angle, j - self.off_theta));
        }
        if j < self.off_cap {
            return Some(r(VarKind::Flow, j - self.off_flow));
        }
        if j < self.len {
            return Some(VarRef {
                kind: VarKind::Capacity,
                index: j - self.off_cap,
                t: None,
            });
        }
        None
    }
}

/// Line data after overrides, with endpoints resolved to bus positions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineData {
    pub from: usize,
    pub to: usize,
    pub admittance: f64,
    pub cap: Cap,
}

/// The resolved instance a program was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceData {
    pub bus_ids: Vec<BusId>,
    pub costs: Vec<Option<CostPoly>>,
    pub gen_caps: Vec<Cap>,
    pub lines: Vec<LineData>,
    pub storage: StorageTech,
    pub budget: Cap,
    pub pinned: BTreeSet<BusId>,
    pub slack: usize,
    /// Demand per bus and step; zero on generator buses.
    pub demand: Vec<Vec<f64>>,
}

impl InstanceData {
    pub fn bus_position(&self, id: BusId) -> Option<usize> {
        self.bus_ids.iter().position(|b| *b == id)
    }

    pub fn is_generator(&self, bus: usize) -> bool {
        self.costs[bus].is_some()
    }

    /// Line positions incident to `bus`.
    pub fn incident_lines(&self, bus: usize) -> Vec<usize> {
        (0..self.lines.len())
            .filter(|&l| self.lines[l].from == bus || self.lines[l].to == bus)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvexProgram {
    pub qp: QuadraticProgram,
    pub layout: VarLayout,
    pub eq_labels: Vec<RowLabel>,
    pub ineq_labels: Vec<RowLabel>,
    pub instance: InstanceData,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DimensionMismatch {
    pub expected: usize,
    pub found: usize,
}

impl fmt::Display for DimensionMismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "point has {} entries, program has {} variables",
            self.found, self.expected
        )
    }
}

impl core::error::Error for DimensionMismatch {}

struct Builder<'a> {
    qp: QuadraticProgram,
    eq_labels: Vec<RowLabel>,
    ineq_labels: Vec<RowLabel>,
    drop: &'a [ConstraintTag],
}

impl Builder<'_> {
    fn eq(&mut self, label: RowLabel, entries: &[(usize, f64)], rhs: f64) {
        if !self.drop.contains(&label.tag) {
            self.qp.add_eq(entries, rhs);
            self.eq_labels.push(label);
        }
    }

    fn ineq(&mut self, label: RowLabel, entries: &[(usize, f64)], rhs: f64) {
        if !self.drop.contains(&label.tag) {
            self.qp.add_ineq(entries, rhs);
            self.ineq_labels.push(label);
        }
    }
}

fn resolve(net: &Network, demand: &DemandSeries, spec: &ProblemSpec) -> Result<InstanceData, BuildError> {
    let report = validate(net, demand);
    if !report.is_empty() {
        return Err(BuildError::InvalidModel(report));
    }
    if let Cap::Finite(h) = spec.budget {
        if !(h >= 0.0) {
            return Err(BuildError::NegativeBudget(h));
        }
    }
    for &b in &spec.pinned_zero {
        let bus = net.bus(b).ok_or(BuildError::UnknownBus(b))?;
        if !bus.is_generator() {
            return Err(BuildError::PinnedNotGenerator(b));
        }
    }
    let mut gen_caps: Vec<Cap> = net
        .buses
        .iter()
        .map(|b| b.gen_cap.unwrap_or(Cap::Finite(0.0)))
        .collect();
    for &(b, cap) in &spec.gen_caps {
        let k = net.bus_index(b).ok_or(BuildError::UnknownBus(b))?;
        if !net.buses[k].is_generator() {
            return Err(BuildError::NotAGenerator(b));
        }
        gen_caps[k] = cap;
    }
    let mut lines: Vec<LineData> = Vec::with_capacity(net.lines.len());
    for l in &net.lines {
        lines.push(LineData {
            from: net.bus_index(l.from).ok_or(BuildError::UnknownBus(l.from))?,
            to: net.bus_index(l.to).ok_or(BuildError::UnknownBus(l.to))?,
            admittance: l.admittance,
            cap: l.flow_cap,
        });
    }
    for &(a, b, cap) in &spec.flow_caps {
        let li = net.line_index(a, b).ok_or(BuildError::UnknownLine(a, b))?;
        lines[li].cap = cap;
    }
    let slack_id = net.slack().ok_or(BuildError::InvalidModel(report.clone()))?;
    let period = demand.period;
    Ok(InstanceData {
        bus_ids: net.buses.iter().map(|b| b.id).collect(),
        costs: net
            .buses
            .iter()
            .map(|b| if b.is_generator() { b.cost } else { None })
            .collect(),
        gen_caps,
        lines,
        storage: net.storage,
        budget: spec.budget,
        pinned: spec.pinned_zero.clone(),
        slack: net.bus_index(slack_id).ok_or(BuildError::UnknownBus(slack_id))?,
        demand: net
            .buses
            .iter()
            .map(|b| (0..period).map(|t| demand.at(b.id, t)).collect())
            .collect(),
    })
}

/// Builds the placement program (or its restriction, when `spec` pins buses).
pub fn build(net: &Network, demand: &DemandSeries, spec: &ProblemSpec) -> Result<ConvexProgram, BuildError> {
    build_with(net, demand, spec, &BuildOptions::default())
}

pub fn build_with(
    net: &Network,
    demand: &DemandSeries,
    spec: &ProblemSpec,
    opts: &BuildOptions,
) -> Result<ConvexProgram, BuildError> {
    let inst = resolve(net, demand, spec)?;
    let st = inst.storage;
    if opts.storage_form == StorageForm::NetCharge && st.roundtrip() != 1.0 {
        return Err(BuildError::NetChargeNeedsLossless);
    }
    let period = demand.period;
    let n_bus = inst.bus_ids.len();
    let mut next_gen = 0;
    let gen_slot: Vec<Option<usize>> = (0..n_bus)
        .map(|k| {
            inst.is_generator(k).then(|| {
                next_gen += 1;
                next_gen - 1
            })
        })
        .collect();
    let layout = VarLayout::new(period, gen_slot, inst.lines.len(), opts.storage_form);

    let mut b = Builder {
        qp: QuadraticProgram::new(layout.len()),
        eq_labels: Vec::new(),
        ineq_labels: Vec::new(),
        drop: &opts.drop_tags,
    };

    for k in 0..n_bus {
        if let Some(cost) = inst.costs[k] {
            for t in 0..period {
                let j = layout.generation(k, t).unwrap();
                b.qp.q_diag[j] = 2.0 * cost.c2;
                b.qp.c[j] = cost.c1;
            }
            b.qp.constant += period as f64 * cost.c0;
        }
    }

    let bus_site = |k: usize| Site::Bus(inst.bus_ids[k]);
    let line_site = |l: &LineData| Site::Line(inst.bus_ids[l.from], inst.bus_ids[l.to]);
    let lab = |tag, site, t| RowLabel { tag, site, t };

    // Net storage inflow terms (variable, coefficient) at (k, t).
    let inflow = |k: usize, t: usize| -> Vec<(usize, f64)> {
        match layout.form {
            StorageForm::Split => vec![
                (layout.charge(k, t), st.eff_charge),
                (layout.discharge(k, t), -1.0 / st.eff_discharge),
            ],
            StorageForm::NetCharge => vec![(layout.net_charge(k, t), 1.0)],
        }
    };

    // Equalities.
    for t in 0..period {
        for k in 0..n_bus {
            let mut row: Vec<(usize, f64)> = Vec::new();
            if let Some(j) = layout.generation(k, t) {
                row.push((j, 1.0));
            }
            match layout.form {
                StorageForm::Split => {
                    row.push((layout.charge(k, t), -1.0));
                    row.push((layout.discharge(k, t), 1.0));
                }
                StorageForm::NetCharge => row.push((layout.net_charge(k, t), -1.0)),
            }
            for (li, l) in inst.lines.iter().enumerate() {
                if l.from == k {
                    row.push((layout.flow(li, t), -1.0));
                } else if l.to == k {
                    row.push((layout.flow(li, t), 1.0));
                }
            }
            b.eq(
                lab(ConstraintTag::PowerBalance, bus_site(k), Some(t)),
                &row,
                inst.demand[k][t],
            );
        }
        for (li, l) in inst.lines.iter().enumerate() {
            let row = [
                (layout.flow(li, t), 1.0),
                (layout.angle(l.from, t), -l.admittance),
                (layout.angle(l.to, t), l.admittance),
            ];
            b.eq(lab(ConstraintTag::FlowDefinition, line_site(l), Some(t)), &row, 0.0);
        }
        b.eq(
            lab(ConstraintTag::SlackAngle, bus_site(inst.slack), Some(t)),
            &[(layout.angle(inst.slack, t), 1.0)],
            0.0,
        );
    }
    for k in 0..n_bus {
        let row: Vec<(usize, f64)> = (0..period).flat_map(|t| inflow(k, t)).collect();
        b.eq(lab(ConstraintTag::Periodicity, bus_site(k), None), &row, 0.0);
    }
    for &pinned in &inst.pinned {
        let k = inst.bus_position(pinned).unwrap();
        b.eq(
            lab(ConstraintTag::PinnedZero, Site::Bus(pinned), None),
            &[(layout.capacity(k), 1.0)],
            0.0,
        );
    }

    // Inequalities.
    for k in 0..n_bus {
        for t in 0..period {
            if let Some(j) = layout.generation(k, t) {
                b.ineq(
                    lab(ConstraintTag::GenerationLimit, bus_site(k), Some(t)),
                    &[(j, -1.0)],
                    0.0,
                );
                if let Cap::Finite(gbar) = inst.gen_caps[k] {
                    b.ineq(
                        lab(ConstraintTag::GenerationLimit, bus_site(k), Some(t)),
                        &[(j, 1.0)],
                        gbar,
                    );
                }
            }
        }
    }
    for (li, l) in inst.lines.iter().enumerate() {
        if let Cap::Finite(f) = l.cap {
            for t in 0..period {
                let j = layout.flow(li, t);
                b.ineq(lab(ConstraintTag::FlowLimit, line_site(l), Some(t)), &[(j, 1.0)], f);
                b.ineq(lab(ConstraintTag::FlowLimit, line_site(l), Some(t)), &[(j, -1.0)], f);
            }
        }
    }
    for k in 0..n_bus {
        let cap = layout.capacity(k);
        let mut level: Vec<(usize, f64)> = Vec::new();
        for t in 0..period {
            level.extend(inflow(k, t));
            let neg: Vec<(usize, f64)> = level.iter().map(|&(j, v)| (j, -v)).collect();
            b.ineq(lab(ConstraintTag::StorageLevel, bus_site(k), Some(t)), &neg, 0.0);
            let mut upper = level.clone();
            upper.push((cap, -1.0));
            b.ineq(lab(ConstraintTag::StorageLevel, bus_site(k), Some(t)), &upper, 0.0);
        }
        b.ineq(lab(ConstraintTag::CapacitySign, bus_site(k), None), &[(cap, -1.0)], 0.0);
        for t in 0..period {
            let ramp = lab(ConstraintTag::Ramp, bus_site(k), Some(t));
            match layout.form {
                StorageForm::Split => {
                    let (g, d) = (layout.charge(k, t), layout.discharge(k, t));
                    b.ineq(ramp, &[(g, -1.0)], 0.0);
                    b.ineq(ramp, &[(g, 1.0), (cap, -st.ramp_charge)], 0.0);
                    b.ineq(ramp, &[(d, -1.0)], 0.0);
                    b.ineq(ramp, &[(d, 1.0), (cap, -st.ramp_discharge)], 0.0);
                }
                StorageForm::NetCharge => {
                    let r = layout.net_charge(k, t);
                    b.ineq(ramp, &[(r, 1.0), (cap, -st.ramp_charge)], 0.0);
                    b.ineq(ramp, &[(r, -1.0), (cap, -st.ramp_discharge)], 0.0);
                }
            }
        }
    }
    if let Cap::Finite(h) = inst.budget {
        let row: Vec<(usize, f64)> = (0..n_bus).map(|k| (layout.capacity(k), 1.0)).collect();
        b.ineq(lab(ConstraintTag::Budget, Site::Network, None), &row, h);
    }

    Ok(ConvexProgram {
        qp: b.qp,
        layout,
        eq_labels: b.eq_labels,
        ineq_labels: b.ineq_labels,
        instance: inst,
    })
}

/// A labelled constraint violation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Violation {
    pub label: RowLabel,
    pub equality: bool,
    /// Signed residual: `Ax - b` for equalities, `Gx - h` for inequalities.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityReport {
    pub eq_residuals: Vec<f64>,
    pub ineq_residuals: Vec<f64>,
    pub max_violation: f64,
    pub tol: f64,
    pub passed: bool,
    /// Rows violated by more than `tol`, in row order.
    pub flagged: Vec<Violation>,
}

impl FeasibilityReport {
    pub fn flagged_tags(&self) -> BTreeSet<ConstraintTag> {
        self.flagged.iter().map(|v| v.label.tag).collect()
    }
}

/// Per-operation profiles recovered from a program point. Generation is zero
/// on load buses.
#[derive(Debug, Clone, PartialEq)]
pub struct Profiles {
    pub generation: Vec<Vec<f64>>,
    pub charge: Vec<Vec<f64>>,
    pub discharge: Vec<Vec<f64>>,
    pub angle: Vec<Vec<f64>>,
    pub flow: Vec<Vec<f64>>,
    pub capacity: Vec<f64>,
}

impl Profiles {
    /// Storage level trajectory at a bus.
    pub fn level(&self, storage: &StorageTech, bus: usize) -> Vec<f64> {
        let mut s = storage.initial_level();
        self.charge[bus]
            .iter()
            .zip(&self.discharge[bus])
            .map(|(&g, &d)| {
                s += storage.eff_charge * g - d / storage.eff_discharge;
                s
            })
            .collect()
    }

    /// Total generation cost summed directly over buses and steps.
    pub fn cost(&self, inst: &InstanceData) -> f64 {
        let mut total = 0.0;
        for (k, cost) in inst.costs.iter().enumerate() {
            if let Some(c) = cost {
                total += self.generation[k].iter().map(|&g| c.eval(g)).sum::<f64>();
            }
        }
        total
    }
}

impl ConvexProgram {
    pub fn nvars(&self) -> usize {
        self.qp.nvars()
    }

    pub fn period(&self) -> usize {
        self.layout.period
    }

    /// `½xᵀQx + cᵀx + constant`
    pub fn eval_objective(&self, x: &[f64]) -> Result<f64, DimensionMismatch> {
        self.check_dim(x)?;
        Ok(self.qp.objective(x))
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), DimensionMismatch> {
        if x.len() == self.nvars() {
            Ok(())
        } else {
            Err(DimensionMismatch {
                expected: self.nvars(),
                found: x.len(),
            })
        }
    }

    /// Signed residual of every row, with rows beyond `tol` flagged.
    ///
    /// Panics if `x` does not match the variable count.
    pub fn residuals(&self, x: &[f64], tol: f64) -> FeasibilityReport {
        self.check_dim(x).expect("residuals: dimension mismatch");
        let eq = self.qp.eq_residuals(x);
        let ineq = self.qp.ineq_residuals(x);
        let mut flagged = Vec::new();
        let mut max_violation: f64 = 0.0;
        for (i, &r) in eq.iter().enumerate() {
            max_violation = max_violation.max(r.abs());
            if r.abs() > tol {
                flagged.push(Violation {
                    label: self.eq_labels[i],
                    equality: true,
                    value: r,
                });
            }
        }
        for (i, &r) in ineq.iter().enumerate() {
            max_violation = max_violation.max(r);
            if r > tol {
                flagged.push(Violation {
                    label: self.ineq_labels[i],
                    equality: false,
                    value: r,
                });
            }
        }
        FeasibilityReport {
            eq_residuals: eq,
            ineq_residuals: ineq,
            max_violation,
            tol,
            passed: flagged.is_empty(),
            flagged,
        }
    }

    pub fn extract(&self, x: &[f64]) -> Profiles {
        let l = &self.layout;
        let p = l.period;
        let per_bus = |f: &dyn Fn(usize, usize) -> f64| -> Vec<Vec<f64>> {
            (0..l.n_bus).map(|k| (0..p).map(|t| f(k, t)).collect()).collect()
        };
        let generation = per_bus(&|k, t| l.generation(k, t).map_or(0.0, |j| x[j]));
        let (charge, discharge) = match l.form {
            StorageForm::Split => (
                per_bus(&|k, t| x[l.charge(k, t)]),
                per_bus(&|k, t| x[l.discharge(k, t)]),
            ),
            StorageForm::NetCharge => (
                per_bus(&|k, t| x[l.net_charge(k, t)].max(0.0)),
                per_bus(&|k, t| (-x[l.net_charge(k, t)]).max(0.0)),
            ),
        };
        Profiles {
            generation,
            charge,
            discharge,
            angle: per_bus(&|k, t| x[l.angle(k, t)]),
            flow: (0..l.n_line)
                .map(|li| (0..p).map(|t| x[l.flow(li, t)]).collect())
                .collect(),
            capacity: (0..l.n_bus).map(|k| x[l.capacity(k)]).collect(),
        }
    }

    /// Inverse of [`ConvexProgram::extract`].
    pub fn pack(&self, prof: &Profiles) -> Vec<f64> {
        let l = &self.layout;
        let mut x = vec![0.0; l.len()];
        for k in 0..l.n_bus {
            for t in 0..l.period {
                if let Some(j) = l.generation(k, t) {
                    x[j] = prof.generation[k][t];
                }
                match l.form {
                    StorageForm::Split => {
                        x[l.charge(k, t)] = prof.charge[k][t];
                        x[l.discharge(k, t)] = prof.discharge[k][t];
                    }
                    StorageForm::NetCharge => {
                        x[l.net_charge(k, t)] = prof.charge[k][t] - prof.discharge[k][t];
                    }
                }
                x[l.angle(k, t)] = prof.angle[k][t];
            }
            x[l.capacity(k)] = prof.capacity[k];
        }
        for li in 0..l.n_line {
            for t in 0..l.period {
                x[l.flow(li, t)] = prof.flow[li][t];
            }
        }
        x
    }

    /// Writes `(Q, A_eq, b_eq, A_in, b_in)` as `row col value` triplets, one
    /// section per matrix. Vectors use column 0.
    pub fn write_triplets<W: fmt::Write>(&self, w: &mut W) -> fmt::Result {
        writeln!(w, "# Q {} {}", self.nvars(), self.nvars())?;
        for (j, &q) in self.qp.q_diag.iter().enumerate() {
            if q != 0.0 {
                writeln!(w, "{j} {j} {q:e}")?;
            }
        }
        for (name, m, rhs) in [
            ("A_eq", &self.qp.eq, &self.qp.eq_rhs),
            ("A_in", &self.qp.ineq, &self.qp.ineq_rhs),
        ] {
            writeln!(w, "# {name} {} {}", m.nrows(), m.ncols)?;
            for i in 0..m.nrows() {
                for (c, v) in m.row(i) {
                    writeln!(w, "{i} {c} {v:e}")?;
                }
            }
            let bname = if name == "A_eq" { "b_eq" } else { "b_in" };
            writeln!(w, "# {bname} {} 1", rhs.len())?;
            for (i, &v) in rhs.iter().enumerate() {
                if v != 0.0 {
                    writeln!(w, "{i} 0 {v:e}")?;
                }
            }
        }
        Ok(())
    }

    pub fn triplets(&self) -> String {
        let mut s = String::new();
        self.write_triplets(&mut s).expect("writing to a String cannot fail");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances as fixtures;

    #[test]
    fn star_variable_count() {
        let (net, demand) = fixtures::counterexample();
        let prog = build(&net, &demand, &ProblemSpec::with_budget(5.0)).unwrap();
        // T (|N_G| + 3n + |lines|) + n with angles for every bus.
        assert_eq!(prog.nvars(), 4 * (1 + 9 + 2) + 3);
        assert_eq!(prog.nvars(), 51);
    }

    #[test]
    fn pinning_adds_one_row() {
        let (net, demand) = fixtures::counterexample();
        let p = build(&net, &demand, &ProblemSpec::with_budget(5.0)).unwrap();
        let r = build(&net, &demand, &ProblemSpec::with_budget(5.0).pin([BusId(1)])).unwrap();
        assert_eq!(r.layout, p.layout);
        assert_eq!(r.qp.n_eq(), p.qp.n_eq() + 1);
        assert_eq!(r.qp.n_ineq(), p.qp.n_ineq());
        assert_eq!(r.eq_labels.last().unwrap().tag, ConstraintTag::PinnedZero);
    }

    #[test]
    fn pin_errors() {
        let (net, demand) = fixtures::counterexample();
        let err = build(&net, &demand, &ProblemSpec::with_budget(5.0).pin([BusId(2)])).unwrap_err();
        assert_eq!(err, BuildError::PinnedNotGenerator(BusId(2)));
        let err = build(&net, &demand, &ProblemSpec::with_budget(5.0).pin([BusId(9)])).unwrap_err();
        assert_eq!(err, BuildError::UnknownBus(BusId(9)));
    }

    #[test]
    fn storage_rows_two_per_step_per_bus() {
        let (net, demand) = fixtures::counterexample();
        let prog = build(&net, &demand, &ProblemSpec::with_budget(5.0)).unwrap();
        let level_rows = prog
            .ineq_labels
            .iter()
            .filter(|l| l.tag == ConstraintTag::StorageLevel)
            .count();
        assert_eq!(level_rows, 2 * 4 * 3);
    }

    #[test]
    fn unbounded_caps_produce_no_rows() {
        let (net, demand) = fixtures::counterexample();
        let spec = ProblemSpec::new(Cap::Unbounded)
            .override_flow_cap(BusId(1), BusId(2), Cap::Unbounded)
            .override_flow_cap(BusId(1), BusId(3), Cap::Unbounded);
        let prog = build(&net, &demand, &spec).unwrap();
        assert!(!prog
            .ineq_labels
            .iter()
            .any(|l| matches!(l.tag, ConstraintTag::FlowLimit | ConstraintTag::Budget)));
        // gbar is unbounded in the fixture: only g >= 0 rows remain.
        let gen_rows = prog
            .ineq_labels
            .iter()
            .filter(|l| l.tag == ConstraintTag::GenerationLimit)
            .count();
        assert_eq!(gen_rows, 4);
    }

    #[test]
    fn objective_on_profile() {
        let (net, demand) = fixtures::counterexample();
        let prog = build(&net, &demand, &ProblemSpec::with_budget(5.0)).unwrap();
        let mut x = vec![0.0; prog.nvars()];
        assert_eq!(prog.eval_objective(&x).unwrap(), 0.0);
        for (t, g) in [9.5, 9.5, 5.0, 5.0].into_iter().enumerate() {
            x[prog.layout.generation(0, t).unwrap()] = g;
        }
        assert_eq!(prog.eval_objective(&x).unwrap(), 230.5);
        assert_eq!(prog.extract(&x).cost(&prog.instance), 230.5);
        assert!(prog.eval_objective(&x[1..]).is_err());
    }

    #[test]
    fn pair_without_storage_is_feasible_and_cap_is_flagged() {
        let (net, demand) = fixtures::pair(vec![3.0, 1.0, 4.0, 2.0], Cap::Finite(5.0));
        let prog = build(&net, &demand, &ProblemSpec::with_budget(0.0)).unwrap();
        let mut prof = prog.extract(&vec![0.0; prog.nvars()]);
        prof.generation[0] = vec![3.0, 1.0, 4.0, 2.0];
        prof.flow[0] = prof.generation[0].clone();
        prof.angle[1] = prof.flow[0].iter().map(|p| -p).collect();
        let x = prog.pack(&prof);
        assert!(prog.residuals(&x, 1e-12).passed);

        let tight = build(
            &net,
            &demand,
            &ProblemSpec::with_budget(0.0).override_flow_cap(BusId(1), BusId(2), Cap::Finite(3.5)),
        )
        .unwrap();
        let report = tight.residuals(&x, 1e-9);
        assert!(!report.passed);
        assert_eq!(report.flagged.len(), 1);
        assert_eq!(report.flagged[0].label.tag, ConstraintTag::FlowLimit);
        assert_eq!(report.flagged[0].label.tag.equation(), Some(3));
        assert!((report.flagged[0].value - 0.5).abs() < 1e-12);
    }

    #[test]
    fn layout_is_a_bijection() {
        let net = fixtures::sample_network();
        let mut demand = DemandSeries::new(3);
        for id in 3..=6 {
            demand = demand.with_column(id, vec![1.0, 2.0, 3.0]);
        }
        for form in [StorageForm::Split, StorageForm::NetCharge] {
            let opts = BuildOptions {
                storage_form: form,
                drop_tags: Vec::new(),
            };
            let prog = build_with(&net, &demand, &ProblemSpec::with_budget(1.0), &opts).unwrap();
            let l = &prog.layout;
            let mut seen = vec![0u8; l.len()];
            for k in 0..l.n_bus {
                for t in 0..l.period {
                    if let Some(j) = l.generation(k, t) {
                        seen[j] += 1;
                    }
                    match form {
                        StorageForm::Split => {
                            seen[l.charge(k, t)] += 1;
                            seen[l.discharge(k, t)] += 1;
                        }
                        StorageForm::NetCharge => seen[l.net_charge(k, t)] += 1,
                    }
                    seen[l.angle(k, t)] += 1;
                }
                seen[l.capacity(k)] += 1;
            }
            for li in 0..l.n_line {
                for t in 0..l.period {
                    seen[l.flow(li, t)] += 1;
                }
            }
            assert!(seen.iter().all(|&c| c == 1));
            for j in 0..l.len() {
                assert!(l.describe(j).is_some());
            }
            assert!(l.describe(l.len()).is_none());
        }
    }

    #[test]
    fn dropping_tags_keeps_layout() {
        let (net, demand) = fixtures::counterexample();
        let spec = ProblemSpec::with_budget(5.0);
        let full = build(&net, &demand, &spec).unwrap();
        for tag in ConstraintTag::ALL {
            let opts = BuildOptions {
                storage_form: StorageForm::Split,
                drop_tags: vec![tag],
            };
            let prog = build_with(&net, &demand, &spec, &opts).unwrap();
            assert_eq!(prog.layout, full.layout);
            assert!(!prog.eq_labels.iter().chain(&prog.ineq_labels).any(|l| l.tag == tag));
        }
    }

    #[test]
    fn net_charge_requires_lossless() {
        let (mut net, demand) = fixtures::counterexample();
        net.storage.eff_charge = 0.9;
        let opts = BuildOptions {
            storage_form: StorageForm::NetCharge,
            drop_tags: Vec::new(),
        };
        let err = build_with(&net, &demand, &ProblemSpec::with_budget(1.0), &opts).unwrap_err();
        assert_eq!(err, BuildError::NetChargeNeedsLossless);
    }

    #[test]
    fn triplet_dump_sections() {
        let (net, demand) = fixtures::pair(vec![1.0], Cap::Finite(2.0));
        let prog = build(&net, &demand, &ProblemSpec::with_budget(0.0)).unwrap();
        let dump = prog.triplets();
        for header in ["# Q", "# A_eq", "# b_eq", "# A_in", "# b_in"] {
            assert!(dump.contains(header), "{dump}");
        }
        let entries = dump.lines().filter(|l| !l.starts_with('#')).count();
        let expected = 1
            + prog.qp.eq.nnz()
            + prog.qp.eq_rhs.iter().filter(|v| **v != 0.0).count()
            + prog.qp.ineq.nnz()
            + prog.qp.ineq_rhs.iter().filter(|v| **v != 0.0).count();
        assert_eq!(entries, expected);
    }
}
