//! JSON network files.
//!
//! ```json
//! {
//!   "period": 4,
//!   "buses": [
//!     { "id": 1, "kind": "generator", "gen_cap": "inf", "cost": { "c2": 1.0, "c1": 0.0, "c0": 0.0 } },
//!     { "id": 2, "kind": "load" }
//!   ],
//!   "lines": [ { "from": 1, "to": 2, "admittance": 1.0, "flow_cap": 9.5 } ],
//!   "storage": { "eff_charge": 1.0, "eff_discharge": 1.0, "ramp_charge": 1.0, "ramp_discharge": 1.0 },
//!   "demand": { "2": [9.0, 10.0, 0.0, 10.0] },
//!   "slack_bus": 1
//! }
//! ```
//!
//! Capacities are numbers or the string `"inf"`. `storage` defaults to ideal
//! storage, `renewable` to `false` and `slack_bus` to the lowest-id
//! generator. Unknown keys are rejected. Parsing checks syntax and shape
//! only; use [`gridstore_core::validate`] for model invariants.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use gridstore_core::{Bus, BusId, BusKind, Cap, CostPoly, DemandSeries, Line, Network, StorageTech};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl From<serde_json::Error> for FormatError {
    fn from(e: serde_json::Error) -> Self {
        let full = e.to_string();
        // serde_json appends " at line L column C"; keep only the message.
        let message = match full.rfind(" at line ") {
            Some(i) => full[..i].to_string(),
            None => full,
        };
        FormatError::Syntax {
            line: e.line(),
            column: e.column(),
            message,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCap", into = "RawCap")]
struct FileCap(Cap);

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RawCap {
    Value(f64),
    Word(String),
}

impl TryFrom<RawCap> for FileCap {
    type Error = String;

    fn try_from(raw: RawCap) -> Result<Self, Self::Error> {
        match raw {
            RawCap::Value(v) => Ok(FileCap(Cap::Finite(v))),
            RawCap::Word(w) if w == "inf" => Ok(FileCap(Cap::Unbounded)),
            RawCap::Word(w) => Err(format!("invalid capacity \"{w}\", expected a number or \"inf\"")),
        }
    }
}

impl From<FileCap> for RawCap {
    fn from(cap: FileCap) -> Self {
        match cap.0 {
            Cap::Finite(v) => RawCap::Value(v),
            Cap::Unbounded => RawCap::Word("inf".to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum FileKind {
    Generator,
    Load,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileCost {
    c2: f64,
    #[serde(default)]
    c1: f64,
    #[serde(default)]
    c0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileBus {
    id: u32,
    kind: FileKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gen_cap: Option<FileCap>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cost: Option<FileCost>,
    #[serde(default, skip_serializing_if = "is_false")]
    renewable: bool,
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileLine {
    from: u32,
    to: u32,
    admittance: f64,
    flow_cap: FileCap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileStorage {
    eff_charge: f64,
    eff_discharge: f64,
    ramp_charge: f64,
    ramp_discharge: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileModel {
    period: usize,
    buses: Vec<FileBus>,
    lines: Vec<FileLine>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    storage: Option<FileStorage>,
    demand: BTreeMap<u32, Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    slack_bus: Option<u32>,
}

/// A network together with its demand series.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub network: Network,
    pub demand: DemandSeries,
}

impl Model {
    pub fn new(network: Network, demand: DemandSeries) -> Self {
        Self { network, demand }
    }

    fn from_file(f: FileModel) -> Self {
        let buses = f
            .buses
            .into_iter()
            .map(|b| Bus {
                id: BusId(b.id),
                kind: match b.kind {
                    FileKind::Generator => BusKind::Generator,
                    FileKind::Load => BusKind::Load,
                },
                gen_cap: b.gen_cap.map(|c| c.0),
                cost: b.cost.map(|c| CostPoly::new(c.c2, c.c1, c.c0)),
                renewable: b.renewable,
            })
            .collect();
        let lines = f
            .lines
            .into_iter()
            .map(|l| Line {
                from: BusId(l.from),
                to: BusId(l.to),
                admittance: l.admittance,
                flow_cap: l.flow_cap.0,
            })
            .collect();
        let storage = f.storage.map_or(StorageTech::IDEAL, |s| StorageTech {
            eff_charge: s.eff_charge,
            eff_discharge: s.eff_discharge,
            ramp_charge: s.ramp_charge,
            ramp_discharge: s.ramp_discharge,
        });
        let mut network = Network::new(buses, lines, storage);
        network.slack_bus = f.slack_bus.map(BusId);
        let mut demand = DemandSeries::new(f.period);
        for (id, col) in f.demand {
            demand = demand.with_column(id, col);
        }
        Self { network, demand }
    }

    fn to_file(&self) -> FileModel {
        let net = &self.network;
        let s = net.storage;
        FileModel {
            period: self.demand.period,
            buses: net
                .buses
                .iter()
                .map(|b| FileBus {
                    id: b.id.0,
                    kind: match b.kind {
                        BusKind::Generator => FileKind::Generator,
                        BusKind::Load => FileKind::Load,
                    },
                    gen_cap: b.gen_cap.map(FileCap),
                    cost: b.cost.map(|c| FileCost {
                        c2: c.c2,
                        c1: c.c1,
                        c0: c.c0,
                    }),
                    renewable: b.renewable,
                })
                .collect(),
            lines: net
                .lines
                .iter()
                .map(|l| FileLine {
                    from: l.from.0,
                    to: l.to.0,
                    admittance: l.admittance,
                    flow_cap: FileCap(l.flow_cap),
                })
                .collect(),
            storage: Some(FileStorage {
                eff_charge: s.eff_charge,
                eff_discharge: s.eff_discharge,
                ramp_charge: s.ramp_charge,
                ramp_discharge: s.ramp_discharge,
            }),
            demand: self
                .demand
                .columns
                .iter()
                .map(|(id, col)| (id.0, col.clone()))
                .collect(),
            slack_bus: net.slack_bus.map(|b| b.0),
        }
    }
}

/// Parses a network file.
pub fn parse_network(text: &[u8]) -> Result<Model, FormatError> {
    let file: FileModel = serde_json::from_slice(text)?;
    Ok(Model::from_file(file))
}

/// Serializes a model; the output parses back to an identical model.
pub fn serialize_network(model: &Model) -> String {
    let mut out = serde_json::to_string_pretty(&model.to_file()).expect("model serializes to JSON");
    out.push('\n');
    out
}

pub fn read_model(path: &Path) -> Result<Model, FormatError> {
    let bytes = fs::read(path).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_network(&bytes)
}

pub fn write_model(path: &Path, model: &Model) -> Result<(), FormatError> {
    fs::write(path, serialize_network(model)).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use gridstore_core::instances::{counterexample, sample_network};
    use gridstore_core::validate;

    const COUNTEREXAMPLE: &str = r#"{
  "period": 4,
  "buses": [
    { "id": 1, "kind": "generator", "gen_cap": "inf", "cost": { "c2": 1.0 } },
    { "id": 2, "kind": "load" },
    { "id": 3, "kind": "load" }
  ],
  "lines": [
    { "from": 1, "to": 2, "admittance": 1.0, "flow_cap": 9.5 },
    { "from": 1, "to": 3, "admittance": 1.0, "flow_cap": 9.5 }
  ],
  "demand": { "2": [9, 10, 0, 10], "3": [0, 10, 10, 10] }
}"#;

    #[test]
    fn counterexample_file_matches_builtin() {
        let model = parse_network(COUNTEREXAMPLE.as_bytes()).unwrap();
        let (net, demand) = counterexample();
        assert_eq!(model, Model::new(net, demand));
        assert!(validate(&model.network, &model.demand).is_empty());
    }

    #[test]
    fn empty_input_is_a_syntax_error() {
        match parse_network(b"") {
            Err(FormatError::Syntax { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn inf_maps_to_unbounded() {
        let model = parse_network(COUNTEREXAMPLE.replace("9.5 }", "\"inf\" }").as_bytes()).unwrap();
        assert!(model.network.lines.iter().all(|l| l.flow_cap == Cap::Unbounded));
    }

    #[test]
    fn unknown_keys_are_rejected_with_position() {
        let text = COUNTEREXAMPLE.replace("\"kind\": \"load\" }", "\"kind\": \"load\", \"colour\": 3 }");
        match parse_network(text.as_bytes()) {
            Err(FormatError::Syntax { line, message, .. }) => {
                assert_eq!(line, 5);
                assert!(message.contains("colour"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_cap_word_is_rejected() {
        let text = COUNTEREXAMPLE.replace("\"gen_cap\": \"inf\"", "\"gen_cap\": \"infinite\"");
        let err = parse_network(text.as_bytes()).unwrap_err();
        assert!(matches!(err, FormatError::Syntax { line: 4, .. }), "{err}");
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut net = sample_network();
        net.lines[2].flow_cap = Cap::Finite(0.1 + 0.2);
        net.buses[0].gen_cap = Some(Cap::Finite(1.0 / 3.0));
        net.buses[2].renewable = true;
        net.slack_bus = Some(BusId(7));
        net.storage.eff_charge = 0.9;
        let demand = DemandSeries::new(3)
            .with_column(3, vec![-0.0, 1e-300, -2.5])
            .with_column(5, vec![f64::MAX, 5e-324, 7.0]);
        let model = Model::new(net, demand);
        let back = parse_network(serialize_network(&model).as_bytes()).unwrap();
        assert_eq!(back, model);
        let bits = |m: &Model| -> Vec<u64> { m.demand.columns.values().flatten().map(|v| v.to_bits()).collect() };
        assert_eq!(bits(&back), bits(&model));
    }
}
