//! Small reference instances used by tests, examples and the CLI.

use alloc::vec;
use alloc::vec::Vec;

use crate::model::{Bus, Cap, CostPoly, DemandSeries, Line, Network, StorageTech};

/// `c(g) = g²`
pub const SQUARE_COST: CostPoly = CostPoly {
    c2: 1.0,
    c1: 0.0,
    c0: 0.0,
};

/// Three-bus star: generator 1 feeding loads 2 and 3 over lines capped at
/// 9.5, with `T = 4`, ideal storage and `c(g) = g²`.
pub fn counterexample() -> (Network, DemandSeries) {
    let net = Network::new(
        vec![
            Bus::generator(1, Cap::Unbounded, SQUARE_COST),
            Bus::load(2),
            Bus::load(3),
        ],
        vec![
            Line::new(1, 2, 1.0, Cap::Finite(9.5)),
            Line::new(1, 3, 1.0, Cap::Finite(9.5)),
        ],
        StorageTech::IDEAL,
    );
    let demand = DemandSeries::new(4)
        .with_column(2, vec![9.0, 10.0, 0.0, 10.0])
        .with_column(3, vec![0.0, 10.0, 10.0, 10.0]);
    (net, demand)
}

/// Single generator (bus 1, unbounded output, `c(g) = g²`) feeding a single
/// load (bus 2) over one line with capacity `line_cap`.
pub fn pair(demand: Vec<f64>, line_cap: Cap) -> (Network, DemandSeries) {
    pair_with(demand, Cap::Unbounded, line_cap, SQUARE_COST)
}

pub fn pair_with(demand: Vec<f64>, gen_cap: Cap, line_cap: Cap, cost: CostPoly) -> (Network, DemandSeries) {
    let net = Network::new(
        vec![Bus::generator(1, gen_cap, cost), Bus::load(2)],
        vec![Line::new(1, 2, 1.0, line_cap)],
        StorageTech::IDEAL,
    );
    let series = DemandSeries::new(demand.len()).with_column(2, demand);
    (net, series)
}

/// The seven-bus sample network: generators 1, 2, 7 and loads 3..6, with
/// buses 1 and 2 hanging off the mesh by single lines.
pub fn sample_network() -> Network {
    let cost = SQUARE_COST;
    Network::new(
        vec![
            Bus::generator(1, Cap::Unbounded, cost),
            Bus::generator(2, Cap::Unbounded, cost),
            Bus::load(3),
            Bus::load(4),
            Bus::load(5),
            Bus::load(6),
            Bus::generator(7, Cap::Unbounded, cost),
        ],
        vec![
            Line::new(1, 3, 1.0, Cap::Unbounded),
            Line::new(2, 4, 1.0, Cap::Unbounded),
            Line::new(3, 4, 1.0, Cap::Unbounded),
            Line::new(3, 5, 1.0, Cap::Unbounded),
            Line::new(4, 6, 1.0, Cap::Unbounded),
            Line::new(5, 6, 1.0, Cap::Unbounded),
            Line::new(5, 7, 1.0, Cap::Unbounded),
            Line::new(6, 7, 1.0, Cap::Unbounded),
        ],
        StorageTech::IDEAL,
    )
}
