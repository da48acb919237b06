//! Optimal storage placement on DC power-flow networks.
//!
//! The crate builds the placement problem as a convex quadratic program,
//! solves it with a homogeneous self-dual interior-point method, and offers
//! closed-form results for generator/load pairs and star networks together
//! with the constructive rewrites that move storage off single-connection
//! generator buses.

#![no_std]

extern crate alloc;

pub mod analytic;
pub mod instances;
pub mod model;
pub mod program;
pub mod qp;
pub mod solver;

pub use model::{
    classify_buses, validate, Bus, BusId, BusKind, BusPartition, Cap, CostPoly, DemandSeries, Line, Network,
    StorageTech, ValidationReport,
};
pub use program::{build, build_with, BuildError, BuildOptions, ConstraintTag, ConvexProgram, ProblemSpec};
pub use solver::{kkt_report, solve, KktReport, Solution, SolverConfig, Status};
