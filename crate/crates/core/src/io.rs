//! JSON file formats and the canonical result writer.
//!
//! Every file carries `"version": "eics/1"`. Matrices are row-major arrays
//! with explicit `rows`/`cols`. Output is canonical: keys sorted, two-space
//! indentation, floats with 17 significant digits, trailing newline, so
//! identical results produce identical bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::baselines::ActivationBatch;
use crate::circuit::{ActivationState, Circuit, EdgeSpec, NodeSpec, NodeVectors, Partition};
use crate::error::{EicsError, Result};
use crate::linear_map::LinearMap;

pub const FORMAT_VERSION: &str = "eics/1";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeFile {
    pub src: String,
    pub dst: String,
    pub rows: usize,
    pub cols: usize,
    pub matrix: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircuitFile {
    pub version: String,
    pub nodes: Vec<NodeSpec>,
    pub edges: Vec<EdgeFile>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition: Option<Partition>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActivationFile {
    pub version: String,
    pub activations: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchFile {
    pub version: String,
    pub samples: Vec<BTreeMap<String, Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionFile {
    pub version: String,
    #[serde(flatten)]
    pub partition: Partition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultFile {
    pub version: String,
    pub tool_version: String,
    /// Null unless explicitly requested, to keep outputs reproducible.
    pub timestamp: Option<String>,
    pub config: Value,
    pub result: Value,
}

/// A circuit loaded from disk with its optional embedded partition.
#[derive(Debug, Clone)]
pub struct LoadedCircuit {
    pub circuit: Circuit,
    pub partition: Option<Partition>,
}

fn parse<T: DeserializeOwned>(text: &str, what: &str) -> Result<T> {
    // a document that is not even JSON goes straight to the typed pass,
    // which reports the deepest field reached
    if let Ok(probe) = serde_json::from_str::<Value>(text) {
        match probe.get("version").and_then(Value::as_str) {
            Some(FORMAT_VERSION) => {}
            Some(v) => {
                return Err(EicsError::Format(format!(
                    "{what}: unsupported version `{v}` (expected `{FORMAT_VERSION}`)"
                )))
            }
            None => {
                return Err(EicsError::Format(format!(
                    "{what}: missing string field `version`"
                )))
            }
        }
    }
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        EicsError::Format(format!("{what}: at `{path}`: {}", e.into_inner()))
    })
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| EicsError::Format(format!("{}: {e}", path.display())))
}

pub fn circuit_from_str(text: &str) -> Result<LoadedCircuit> {
    let file: CircuitFile = parse(text, "circuit")?;
    let mut edges = Vec::with_capacity(file.edges.len());
    for (k, e) in file.edges.into_iter().enumerate() {
        if e.matrix.len() != e.rows * e.cols {
            return Err(EicsError::Format(format!(
                "circuit: at `edges[{k}].matrix`: expected {} entries ({}x{}), found {}",
                e.rows * e.cols,
                e.rows,
                e.cols,
                e.matrix.len()
            )));
        }
        let m = DMatrix::from_row_slice(e.rows, e.cols, &e.matrix);
        edges.push(EdgeSpec::new(e.src, e.dst, m));
    }
    Ok(LoadedCircuit {
        circuit: Circuit::new(file.nodes, edges, file.inputs, file.outputs),
        partition: file.partition,
    })
}

pub fn load_circuit(path: impl AsRef<Path>) -> Result<LoadedCircuit> {
    circuit_from_str(&read(path.as_ref())?)
}

fn to_state(map: BTreeMap<String, Vec<f64>>) -> ActivationState {
    NodeVectors::from_pairs(map.into_iter().map(|(k, v)| (k, DVector::from_vec(v))))
}

pub fn activations_from_str(text: &str) -> Result<ActivationState> {
    let file: ActivationFile = parse(text, "activations")?;
    Ok(to_state(file.activations))
}

pub fn load_activations(path: impl AsRef<Path>) -> Result<ActivationState> {
    activations_from_str(&read(path.as_ref())?)
}

pub fn batch_from_str(text: &str) -> Result<ActivationBatch> {
    let file: BatchFile = parse(text, "batch")?;
    Ok(ActivationBatch::new(
        file.samples.into_iter().map(to_state).collect(),
    ))
}

pub fn load_batch(path: impl AsRef<Path>) -> Result<ActivationBatch> {
    batch_from_str(&read(path.as_ref())?)
}

pub fn partition_from_str(text: &str) -> Result<Partition> {
    let file: PartitionFile = parse(text, "partition")?;
    Ok(file.partition)
}

pub fn load_partition(path: impl AsRef<Path>) -> Result<Partition> {
    partition_from_str(&read(path.as_ref())?)
}

/// Serializes a circuit with dense edge maps. Operator maps have no file
/// representation.
pub fn circuit_to_string(circuit: &Circuit, partition: Option<&Partition>) -> Result<String> {
    let mut edges = Vec::with_capacity(circuit.edges().len());
    for (k, e) in circuit.edges().iter().enumerate() {
        let m = match &e.map {
            LinearMap::Dense(m) => m,
            LinearMap::Operator(_) => {
                return Err(EicsError::Format(format!(
                    "edge {k} is matrix-free and cannot be written"
                )))
            }
        };
        edges.push(EdgeFile {
            src: e.src.clone(),
            dst: e.dst.clone(),
            rows: m.nrows(),
            cols: m.ncols(),
            matrix: m.transpose().iter().copied().collect(),
        });
    }
    let file = CircuitFile {
        version: FORMAT_VERSION.into(),
        nodes: circuit.nodes().to_vec(),
        edges,
        inputs: circuit.inputs().to_vec(),
        outputs: circuit.outputs().to_vec(),
        partition: partition.cloned(),
    };
    to_canonical_string(&file)
}

pub fn activations_to_string(a: &ActivationState) -> Result<String> {
    let file = ActivationFile {
        version: FORMAT_VERSION.into(),
        activations: a
            .iter()
            .map(|(k, v)| (k.clone(), v.iter().copied().collect()))
            .collect(),
    };
    to_canonical_string(&file)
}

pub fn batch_to_string(batch: &ActivationBatch) -> Result<String> {
    let file = BatchFile {
        version: FORMAT_VERSION.into(),
        samples: batch
            .samples
            .iter()
            .map(|s| {
                s.iter()
                    .map(|(k, v)| (k.clone(), v.iter().copied().collect()))
                    .collect()
            })
            .collect(),
    };
    to_canonical_string(&file)
}

pub fn result_from_str(text: &str) -> Result<ResultFile> {
    parse(text, "result")
}

/// Builds the canonical text of a result file.
pub fn result_to_string<C: Serialize, R: Serialize>(
    config: &C,
    result: &R,
    timestamp: Option<String>,
) -> Result<String> {
    let file = ResultFile {
        version: FORMAT_VERSION.into(),
        tool_version: TOOL_VERSION.into(),
        timestamp,
        config: to_value(config)?,
        result: to_value(result)?,
    };
    to_canonical_string(&file)
}

pub fn save_result<C: Serialize, R: Serialize>(
    path: impl AsRef<Path>,
    config: &C,
    result: &R,
    timestamp: Option<String>,
) -> Result<()> {
    let text = result_to_string(config, result, timestamp)?;
    std::fs::write(path, text)?;
    Ok(())
}

fn to_value<T: Serialize>(x: &T) -> Result<Value> {
    serde_json::to_value(x).map_err(|e| EicsError::Format(format!("serialization failed: {e}")))
}

/// Canonical JSON text of any serializable value.
///
/// serde_json maps non-finite floats to `null`; callers that must reject
/// them check before writing.
pub fn to_canonical_string<T: Serialize>(x: &T) -> Result<String> {
    let v = to_value(x)?;
    let mut out = String::new();
    write_value(&mut out, &v, 0);
    out.push('\n');
    Ok(out)
}

/// Formats a float with 17 significant digits; both zeros print as `0`.
pub fn format_f64(x: f64) -> String {
    if x == 0.0 {
        "0".into()
    } else {
        format!("{x:.16e}")
    }
}

fn write_value(out: &mut String, v: &Value, depth: usize) {
    let pad = |out: &mut String, d: usize| {
        for _ in 0..d {
            out.push_str("  ");
        }
    };
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(i) = n.as_u64() {
                write!(out, "{i}").unwrap();
            } else if let Some(i) = n.as_i64() {
                write!(out, "{i}").unwrap();
            } else {
                out.push_str(&format_f64(n.as_f64().unwrap_or(f64::NAN)));
            }
        }
        Value::String(s) => out.push_str(&Value::String(s.clone()).to_string()),
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return;
            }
            out.push_str("[\n");
            for (i, item) in items.iter().enumerate() {
                pad(out, depth + 1);
                write_value(out, item, depth + 1);
                out.push_str(if i + 1 < items.len() { ",\n" } else { "\n" });
            }
            pad(out, depth);
            out.push(']');
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push_str("{\n");
            for (i, k) in keys.iter().enumerate() {
                pad(out, depth + 1);
                out.push_str(&Value::String((*k).clone()).to_string());
                out.push_str(": ");
                write_value(out, &map[*k], depth + 1);
                out.push_str(if i + 1 < keys.len() { ",\n" } else { "\n" });
            }
            pad(out, depth);
            out.push('}');
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::Part;

    const SMALL: &str = r#"{
      "version": "eics/1",
      "nodes": [{"id": "u", "dim": 2}, {"id": "v", "dim": 1}],
      "edges": [{"src": "u", "dst": "v", "rows": 1, "cols": 2, "matrix": [1.0, -2.0]}],
      "inputs": ["u"],
      "outputs": ["v"]
    }"#;

    #[test]
    fn circuit_round_trip() {
        let loaded = circuit_from_str(SMALL).unwrap();
        assert!(loaded.circuit.validate().is_valid());
        assert!(loaded.partition.is_none());
        let m = loaded.circuit.edges()[0].map.to_dense();
        assert_eq!(m[(0, 1)], -2.0);
        let text = circuit_to_string(&loaded.circuit, None).unwrap();
        let again = circuit_from_str(&text).unwrap();
        assert_eq!(again.circuit.edges()[0].map.to_dense(), m);
        assert_eq!(circuit_to_string(&again.circuit, None).unwrap(), text);
    }

    #[test]
    fn row_major_layout() {
        let text = SMALL.replace(r#""rows": 1, "cols": 2"#, r#""rows": 2, "cols": 1"#);
        let text = text.replace(
            r#"{"id": "u", "dim": 2}, {"id": "v", "dim": 1}"#,
            r#"{"id": "u", "dim": 1}, {"id": "v", "dim": 2}"#,
        );
        let c = circuit_from_str(&text).unwrap().circuit;
        let m = c.edges()[0].map.to_dense();
        assert_eq!((m[(0, 0)], m[(1, 0)]), (1.0, -2.0));
    }

    #[test]
    fn wrong_version_is_rejected() {
        let err = circuit_from_str(&SMALL.replace("eics/1", "eics/9")).unwrap_err();
        assert!(err.to_string().contains("unsupported version"));
    }

    #[test]
    fn errors_name_the_path() {
        let bad = SMALL.replace(r#""dim": 1"#, r#""dim": "one""#);
        let msg = circuit_from_str(&bad).unwrap_err().to_string();
        assert!(msg.contains("nodes[1].dim"), "{msg}");
        assert!(msg.contains("line"), "{msg}");

        let short = SMALL.replace("[1.0, -2.0]", "[1.0]");
        let msg = circuit_from_str(&short).unwrap_err().to_string();
        assert!(msg.contains("edges[0].matrix"), "{msg}");
    }

    #[test]
    fn truncated_file_names_the_field() {
        let cut = &SMALL[..SMALL.find("-2.0").unwrap()];
        let msg = circuit_from_str(cut).unwrap_err().to_string();
        assert!(msg.contains("edges[0].matrix"), "{msg}");
        assert!(msg.contains("EOF"), "{msg}");
    }

    #[test]
    fn shape_mismatch_reaches_validation() {
        let bad = SMALL.replace(
            r#""rows": 1, "cols": 2, "matrix": [1.0, -2.0]"#,
            r#""rows": 2, "cols": 2, "matrix": [1, 2, 3, 4]"#,
        );
        let c = circuit_from_str(&bad).unwrap().circuit;
        assert!(!c.validate().is_valid());
    }

    #[test]
    fn embedded_partition() {
        let with = SMALL.replace(
            r#""outputs": ["v"]"#,
            r#""outputs": ["v"], "partition": {"parts": [{"nodes": ["u", "v"], "inputs": ["u"], "outputs": ["v"]}]}"#,
        );
        let p = circuit_from_str(&with).unwrap().partition.unwrap();
        assert_eq!(p.parts[0].nodes, vec!["u", "v"]);
        let standalone = r#"{"version": "eics/1", "parts": [{"nodes": ["u"], "inputs": ["u"], "outputs": ["u"]}]}"#;
        assert_eq!(
            partition_from_str(standalone).unwrap().parts[0],
            Part::single("u")
        );
    }

    #[test]
    fn activations_and_batches() {
        let a = activations_from_str(
            r#"{"version": "eics/1", "activations": {"u": [1, 2], "v": [3]}}"#,
        )
        .unwrap();
        assert_eq!(a.get("u").unwrap().as_slice(), &[1.0, 2.0]);
        let again = activations_from_str(&activations_to_string(&a).unwrap()).unwrap();
        assert_eq!(a, again);
        let b = batch_from_str(r#"{"version": "eics/1", "samples": [{"u": [1, 2], "v": [3]}, {"u": [0, 0], "v": [1]}]}"#).unwrap();
        assert_eq!(b.samples.len(), 2);
        assert_eq!(batch_from_str(&batch_to_string(&b).unwrap()).unwrap(), b);
    }

    #[test]
    fn canonical_formatting() {
        let v: Value = serde_json::from_str(
            r#"{"b": [1, 0.5, -0.0], "a": {"z": null, "y": "q\"x"}, "c": []}"#,
        )
        .unwrap();
        let s = to_canonical_string(&v).unwrap();
        let expected = "{\n  \"a\": {\n    \"y\": \"q\\\"x\",\n    \"z\": null\n  },\n  \"b\": [\n    1,\n    5.0000000000000000e-1,\n    0\n  ],\n  \"c\": []\n}\n";
        assert_eq!(s, expected);
        let back: Value = serde_json::from_str(&s).unwrap();
        assert_eq!(back["b"][1].as_f64(), Some(0.5));
    }

    #[test]
    fn floats_round_trip_exactly() {
        for x in [0.1, 1.0 / 3.0, 1e-300, -2.5e17, std::f64::consts::PI] {
            assert_eq!(format_f64(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn result_file_has_null_timestamp() {
        let s = result_to_string(
            &serde_json::json!({"alpha": 1.0}),
            &serde_json::json!({"score": 0.25}),
            None,
        )
        .unwrap();
        let r = result_from_str(&s).unwrap();
        assert!(r.timestamp.is_none());
        assert_eq!(r.result["score"].as_f64(), Some(0.25));
        assert_eq!(r.tool_version, TOOL_VERSION);
    }
}
