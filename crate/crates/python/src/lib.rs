//! Python bindings. Results come back as plain dicts and lists.

use std::collections::HashMap;

use eics::baselines::{self, ActivationBatch};
use eics::circuit::{self, Circuit, EdgeSpec, NodeSpec, NodeVectors, Partition};
use eics::ei::{self, EiConfig, EiMode, Evaluation, MacroMap};
use eics::error::EicsError;
use eics::score::{self, CshSource, EicsConfig, Lambda2Config};
use eics::sheaf::{self, EdgeWeighting};
use eics::toy::{self, ToyConfig};
use eics::{io, LinearMap};
use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

fn err(e: EicsError) -> PyErr {
    if e.is_numeric() {
        PyArithmeticError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: serde::de::DeserializeOwned>(obj: &Bound<'_, PyAny>, what: &str) -> PyResult<T> {
    let text: String = obj
        .py()
        .import("json")?
        .call_method1("dumps", (obj,))?
        .extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(format!("invalid {what}: {e}")))
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(PyValueError::new_err("matrix rows must have equal length"));
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(DMatrix::from_row_slice(r, c, &flat))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn state(values: HashMap<String, Vec<f64>>) -> NodeVectors {
    NodeVectors::from_pairs(values.into_iter().map(|(k, v)| (k, DVector::from_vec(v))))
}

/// A DAG circuit with dense edge maps.
#[pyclass(name = "Circuit", module = "eics_py", frozen)]
struct PyCircuit {
    inner: Circuit,
    partition: Option<Partition>,
}

impl PyCircuit {
    fn partition(&self, choice: Option<&Bound<'_, PyAny>>) -> PyResult<Partition> {
        let Some(obj) = choice else {
            return Ok(Partition::per_node(&self.inner));
        };
        if obj.is_none() {
            return Ok(Partition::per_node(&self.inner));
        }
        if let Ok(s) = obj.extract::<String>() {
            return match s.as_str() {
                "per-node" => Ok(Partition::per_node(&self.inner)),
                "embedded" => self
                    .partition
                    .clone()
                    .ok_or_else(|| PyValueError::new_err("circuit has no embedded partition")),
                other => Err(PyValueError::new_err(format!(
                    "unknown partition `{other}`"
                ))),
            };
        }
        let parts = if obj.is_instance_of::<pyo3::types::PyList>() {
            Partition {
                parts: from_py(obj, "partition")?,
            }
        } else {
            from_py(obj, "partition")?
        };
        Ok(parts)
    }
}

#[pymethods]
impl PyCircuit {
    /// `nodes`: `[(id, dim)]`; `edges`: `[(src, dst, matrix)]` with the
    /// matrix as a list of rows (`dim(dst) x dim(src)`).
    #[new]
    #[pyo3(signature = (nodes, edges, inputs, outputs, partition=None))]
    fn new(
        nodes: Vec<(String, usize)>,
        edges: Vec<(String, String, Vec<Vec<f64>>)>,
        inputs: Vec<String>,
        outputs: Vec<String>,
        partition: Option<&Bound<'_, PyAny>>,
    ) -> PyResult<Self> {
        let nodes = nodes
            .into_iter()
            .map(|(id, d)| NodeSpec::new(id, d))
            .collect();
        let edges = edges
            .into_iter()
            .map(|(s, d, m)| Ok(EdgeSpec::new(s, d, matrix(m)?)))
            .collect::<PyResult<Vec<_>>>()?;
        let inner = Circuit::new(nodes, edges, inputs, outputs);
        let mut c = Self {
            inner,
            partition: None,
        };
        if let Some(p) = partition {
            if !p.is_none() {
                c.partition = Some(c.partition(Some(p))?);
            }
        }
        Ok(c)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let l = io::load_circuit(path).map_err(err)?;
        Ok(Self {
            inner: l.circuit,
            partition: l.partition,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let l = io::circuit_from_str(text).map_err(err)?;
        Ok(Self {
            inner: l.circuit,
            partition: l.partition,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        io::circuit_to_string(&self.inner, self.partition.as_ref()).map_err(err)
    }

    /// Violation messages; empty when the circuit is valid.
    fn validate(&self) -> Vec<String> {
        self.inner
            .validate()
            .violations
            .iter()
            .map(|v| v.to_string())
            .collect()
    }

    fn topological_order(&self) -> PyResult<Vec<String>> {
        circuit::topological_order(&self.inner).map_err(err)
    }

    fn macro_jacobian(
        &self,
        from_nodes: Vec<String>,
        to_nodes: Vec<String>,
    ) -> PyResult<Vec<Vec<f64>>> {
        let j = circuit::macro_jacobian(&self.inner, &from_nodes, &to_nodes).map_err(err)?;
        Ok(rows(&j.map.to_dense()))
    }

    #[getter]
    fn node_ids(&self) -> Vec<String> {
        self.inner.nodes().iter().map(|n| n.id.clone()).collect()
    }

    #[getter]
    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }

    fn __repr__(&self) -> String {
        format!(
            "Circuit({} nodes, {} edges)",
            self.inner.nodes().len(),
            self.inner.edges().len()
        )
    }
}

#[pyfunction]
#[pyo3(signature = (circuit, activations, epsilon=1e-8))]
fn sheaf_inconsistency<'py>(
    py: Python<'py>,
    circuit: &PyCircuit,
    activations: HashMap<String, Vec<f64>>,
    epsilon: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let r =
        sheaf::sheaf_inconsistency(&circuit.inner, &state(activations), epsilon).map_err(err)?;
    to_py(py, &r)
}

#[pyfunction]
#[pyo3(signature = (circuit, activations))]
fn least_squares_section(
    circuit: &PyCircuit,
    activations: HashMap<String, Vec<f64>>,
) -> PyResult<(HashMap<String, Vec<f64>>, f64)> {
    let (s, residual) =
        sheaf::least_squares_section(&circuit.inner, &state(activations)).map_err(err)?;
    Ok((
        s.iter()
            .map(|(k, v)| (k.clone(), v.iter().copied().collect()))
            .collect(),
        residual,
    ))
}

/// `½ log det(I + α JᵀJ)` in nats.
#[pyfunction]
#[pyo3(signature = (j, alpha=1.0, mode="exact", probes=10, lanczos_steps=32, seed=0))]
fn ei_gaussian<'py>(
    py: Python<'py>,
    j: Vec<Vec<f64>>,
    alpha: f64,
    mode: &str,
    probes: usize,
    lanczos_steps: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let how = match mode {
        "exact" => Evaluation::Exact,
        "fast" => Evaluation::Fast {
            probes,
            lanczos_steps,
            seed,
            stream: 0,
        },
        other => return Err(PyValueError::new_err(format!("unknown mode `{other}`"))),
    };
    let v = ei::ei_gaussian(&LinearMap::dense(matrix(j)?), alpha, how).map_err(err)?;
    to_py(py, &v)
}

#[allow(clippy::too_many_arguments)]
fn ei_config(
    alpha: f64,
    epsilon: f64,
    mode: &str,
    probes_part: usize,
    probes_macro: usize,
    lanczos_steps: usize,
    seed: u64,
    macro_map: &str,
) -> PyResult<EiConfig> {
    Ok(EiConfig {
        alpha,
        epsilon,
        mode: match mode {
            "exact" => EiMode::Exact,
            "fast" => EiMode::Fast,
            other => return Err(PyValueError::new_err(format!("unknown mode `{other}`"))),
        },
        probes_part,
        probes_macro,
        lanczos_steps,
        seed,
        macro_map: match macro_map {
            "circuit-io" => MacroMap::CircuitIo,
            "part-sum" => MacroMap::PartSum,
            other => {
                return Err(PyValueError::new_err(format!(
                    "unknown macro map `{other}`"
                )))
            }
        },
    })
}

fn weighting(name: &str) -> PyResult<EdgeWeighting> {
    match name {
        "unit" => Ok(EdgeWeighting::unit()),
        "inverse-op-norm" => Ok(EdgeWeighting::inverse_operator_norm()),
        other => Err(PyValueError::new_err(format!(
            "unknown weighting `{other}`"
        ))),
    }
}

#[pyfunction]
#[pyo3(signature = (circuit, partition=None, alpha=1.0, epsilon=1e-8, mode="exact", probes_part=6,
                    probes_macro=10, lanczos_steps=32, seed=0, macro_map="circuit-io"))]
#[allow(clippy::too_many_arguments)]
fn delta_ei<'py>(
    py: Python<'py>,
    circuit: &PyCircuit,
    partition: Option<&Bound<'py, PyAny>>,
    alpha: f64,
    epsilon: f64,
    mode: &str,
    probes_part: usize,
    probes_macro: usize,
    lanczos_steps: usize,
    seed: u64,
    macro_map: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = ei_config(
        alpha,
        epsilon,
        mode,
        probes_part,
        probes_macro,
        lanczos_steps,
        seed,
        macro_map,
    )?;
    let p = circuit.partition(partition)?;
    to_py(py, &ei::delta_ei(&circuit.inner, &p, &cfg).map_err(err)?)
}

#[pyfunction]
#[pyo3(signature = (circuit, activations, partition=None, alpha=1.0, epsilon=1e-8, mode="exact",
                    probes_part=6, probes_macro=10, lanczos_steps=32, seed=0, macro_map="circuit-io",
                    csh_on="raw", with_lambda2=false, weighting="inverse-op-norm", beta=0.0))]
#[allow(clippy::too_many_arguments)]
fn eics_score<'py>(
    py: Python<'py>,
    circuit: &PyCircuit,
    activations: HashMap<String, Vec<f64>>,
    partition: Option<&Bound<'py, PyAny>>,
    alpha: f64,
    epsilon: f64,
    mode: &str,
    probes_part: usize,
    probes_macro: usize,
    lanczos_steps: usize,
    seed: u64,
    macro_map: &str,
    csh_on: &str,
    with_lambda2: bool,
    weighting: &str,
    beta: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let config = EicsConfig {
        ei: ei_config(
            alpha,
            epsilon,
            mode,
            probes_part,
            probes_macro,
            lanczos_steps,
            seed,
            macro_map,
        )?,
        csh_source: match csh_on {
            "raw" => CshSource::Raw,
            "projected" => CshSource::Projected,
            other => {
                return Err(PyValueError::new_err(format!(
                    "unknown csh source `{other}`"
                )))
            }
        },
        lambda2: if with_lambda2 {
            Some(Lambda2Config {
                weighting: self::weighting(weighting)?,
                beta,
            })
        } else {
            None
        },
    };
    let p = circuit.partition(partition)?;
    to_py(
        py,
        &score::eics_score(&circuit.inner, &state(activations), &p, &config).map_err(err)?,
    )
}

#[pyfunction]
#[pyo3(signature = (circuit, weighting="inverse-op-norm", beta=0.0))]
fn lambda2<'py>(
    py: Python<'py>,
    circuit: &PyCircuit,
    weighting: &str,
    beta: f64,
) -> PyResult<Bound<'py, PyAny>> {
    to_py(
        py,
        &sheaf::lambda2(&circuit.inner, &self::weighting(weighting)?, beta).map_err(err)?,
    )
}

#[pyfunction]
fn eac<'py>(
    py: Python<'py>,
    circuit: &PyCircuit,
    activations: HashMap<String, Vec<f64>>,
) -> PyResult<Bound<'py, PyAny>> {
    to_py(
        py,
        &baselines::eac(&circuit.inner, &state(activations)).map_err(err)?,
    )
}

#[pyfunction]
#[pyo3(signature = (circuit, samples, ridge=None))]
fn ear<'py>(
    py: Python<'py>,
    circuit: &PyCircuit,
    samples: Vec<HashMap<String, Vec<f64>>>,
    ridge: Option<f64>,
) -> PyResult<Bound<'py, PyAny>> {
    let batch = ActivationBatch::new(samples.into_iter().map(state).collect());
    to_py(
        py,
        &baselines::ear(&circuit.inner, &batch, ridge).map_err(err)?,
    )
}

#[pyfunction]
fn threshold_select<'py>(
    py: Python<'py>,
    scores: Vec<f64>,
    labels: Vec<bool>,
) -> PyResult<Bound<'py, PyAny>> {
    if scores.len() != labels.len() {
        return Err(PyValueError::new_err("scores and labels differ in length"));
    }
    let pairs: Vec<(f64, bool)> = scores.into_iter().zip(labels).collect();
    to_py(py, &score::threshold_select(&pairs).map_err(err)?)
}

/// Runs the toy sweep; rows are dicts with mean/se per curve.
#[pyfunction]
#[pyo3(signature = (taus=None, n_seeds=100, base_seed=1000, dim=32, align=0.9, alpha=1.0, epsilon=1e-8, jobs=1))]
#[allow(clippy::too_many_arguments)]
fn toy_sweep<'py>(
    py: Python<'py>,
    taus: Option<Vec<f64>>,
    n_seeds: usize,
    base_seed: u64,
    dim: usize,
    align: f64,
    alpha: f64,
    epsilon: f64,
    jobs: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = ToyConfig {
        dim,
        align,
        alpha,
        taus: taus.unwrap_or_else(toy::default_taus),
        n_seeds,
        base_seed,
        epsilon,
    };
    let rows = py
        .detach(|| toy::sweep_with_jobs(&cfg, jobs))
        .map_err(err)?;
    to_py(py, &rows)
}

/// Base toy circuit for one seed, with its branch partition embedded.
#[pyfunction]
#[pyo3(signature = (seed=1000, dim=32, align=0.9))]
fn toy_circuit(seed: u64, dim: usize, align: f64) -> PyCircuit {
    let cfg = ToyConfig {
        dim,
        align,
        ..ToyConfig::default()
    };
    let (c, p) = toy::build_toy_circuit(&cfg, seed);
    PyCircuit {
        inner: c,
        partition: Some(p),
    }
}

#[pymodule]
fn eics_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCircuit>()?;
    m.add_function(wrap_pyfunction!(sheaf_inconsistency, m)?)?;
    m.add_function(wrap_pyfunction!(least_squares_section, m)?)?;
    m.add_function(wrap_pyfunction!(ei_gaussian, m)?)?;
    m.add_function(wrap_pyfunction!(delta_ei, m)?)?;
    m.add_function(wrap_pyfunction!(eics_score, m)?)?;
    m.add_function(wrap_pyfunction!(lambda2, m)?)?;
    m.add_function(wrap_pyfunction!(eac, m)?)?;
    m.add_function(wrap_pyfunction!(ear, m)?)?;
    m.add_function(wrap_pyfunction!(threshold_select, m)?)?;
    m.add_function(wrap_pyfunction!(toy_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(toy_circuit, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_is_row_major() {
        let m = matrix(vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        assert_eq!(m.shape(), (2, 3));
        assert_eq!(m[(1, 0)], 4.0);
        assert_eq!(rows(&m), vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]);
    }

    #[test]
    fn ragged_matrix_is_rejected() {
        assert!(matrix(vec![vec![1.0], vec![1.0, 2.0]]).is_err());
    }
}
