//! Circuits as DAGs of typed nodes joined by linearized edge maps.
//!
//! A [`Circuit`] is immutable once built. Construction never fails; instead
//! the structural checks are run once and stored, so [`Circuit::validate`]
//! can report every violation at once and operations that need a valid
//! circuit can refuse early with [`EicsError::InvalidCircuit`].

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{EicsError, Result};
use crate::linear_map::{LinearMap, LinearOperator};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: String,
    pub dim: usize,
}

impl NodeSpec {
    pub fn new(id: impl Into<String>, dim: usize) -> Self {
        Self { id: id.into(), dim }
    }
}

#[derive(Debug, Clone)]
pub struct EdgeSpec {
    pub src: String,
    pub dst: String,
    pub map: LinearMap,
}

impl EdgeSpec {
    pub fn new(src: impl Into<String>, dst: impl Into<String>, map: impl Into<LinearMap>) -> Self {
        Self {
            src: src.into(),
            dst: dst.into(),
            map: map.into(),
        }
    }
}

/// A single structural problem found by validation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Violation {
    DuplicateNode {
        id: String,
    },
    ZeroDimension {
        id: String,
    },
    DanglingEdge {
        edge: usize,
        id: String,
    },
    ShapeMismatch {
        edge: usize,
        expected: (usize, usize),
        found: (usize, usize),
    },
    Cycle {
        edge: usize,
        src: String,
        dst: String,
    },
    NoInputs,
    NoOutputs,
    UnknownInput {
        id: String,
    },
    UnknownOutput {
        id: String,
    },
    UnreachableOutput {
        id: String,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateNode { id } => write!(f, "duplicate node id `{id}`"),
            Violation::ZeroDimension { id } => write!(f, "node `{id}` has dimension 0"),
            Violation::DanglingEdge { edge, id } => {
                write!(f, "edge {edge} references missing node `{id}`")
            }
            Violation::ShapeMismatch {
                edge,
                expected,
                found,
            } => write!(
                f,
                "edge {edge} map is {}x{}, expected {}x{}",
                found.0, found.1, expected.0, expected.1
            ),
            Violation::Cycle { edge, src, dst } => {
                write!(f, "cycle through edge {edge} ({src} -> {dst})")
            }
            Violation::NoInputs => write!(f, "circuit declares no inputs"),
            Violation::NoOutputs => write!(f, "circuit declares no outputs"),
            Violation::UnknownInput { id } => write!(f, "input `{id}` is not a node"),
            Violation::UnknownOutput { id } => write!(f, "output `{id}` is not a node"),
            Violation::UnreachableOutput { id } => {
                write!(f, "output `{id}` is not reachable from any input")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Circuit {
    nodes: Vec<NodeSpec>,
    edges: Vec<EdgeSpec>,
    inputs: Vec<String>,
    outputs: Vec<String>,
    index: HashMap<String, usize>,
    // resolved (src, dst) node indices; None when an endpoint is dangling
    endpoints: Vec<Option<(usize, usize)>>,
    report: ValidationReport,
    order: Option<Vec<usize>>,
}

impl Circuit {
    pub fn new(
        nodes: Vec<NodeSpec>,
        edges: Vec<EdgeSpec>,
        inputs: Vec<String>,
        outputs: Vec<String>,
    ) -> Self {
        let mut index = HashMap::new();
        let mut violations = Vec::new();
        for (i, n) in nodes.iter().enumerate() {
            if index.contains_key(&n.id) {
                violations.push(Violation::DuplicateNode { id: n.id.clone() });
            } else {
                index.insert(n.id.clone(), i);
            }
            if n.dim == 0 {
                violations.push(Violation::ZeroDimension { id: n.id.clone() });
            }
        }
        let mut endpoints = Vec::with_capacity(edges.len());
        for (k, e) in edges.iter().enumerate() {
            let s = index.get(&e.src).copied();
            let d = index.get(&e.dst).copied();
            if s.is_none() {
                violations.push(Violation::DanglingEdge {
                    edge: k,
                    id: e.src.clone(),
                });
            }
            if d.is_none() {
                violations.push(Violation::DanglingEdge {
                    edge: k,
                    id: e.dst.clone(),
                });
            }
            match (s, d) {
                (Some(s), Some(d)) => {
                    let expected = (nodes[d].dim, nodes[s].dim);
                    if e.map.shape() != expected {
                        violations.push(Violation::ShapeMismatch {
                            edge: k,
                            expected,
                            found: e.map.shape(),
                        });
                    }
                    endpoints.push(Some((s, d)));
                }
                _ => endpoints.push(None),
            }
        }
        if inputs.is_empty() {
            violations.push(Violation::NoInputs);
        }
        if outputs.is_empty() {
            violations.push(Violation::NoOutputs);
        }
        for id in &inputs {
            if !index.contains_key(id) {
                violations.push(Violation::UnknownInput { id: id.clone() });
            }
        }
        for id in &outputs {
            if !index.contains_key(id) {
                violations.push(Violation::UnknownOutput { id: id.clone() });
            }
        }

        let mut circuit = Circuit {
            nodes,
            edges,
            inputs,
            outputs,
            index,
            endpoints,
            report: ValidationReport::default(),
            order: None,
        };

        match circuit.compute_order() {
            Ok(order) => circuit.order = Some(order),
            Err((edge, src, dst)) => violations.push(Violation::Cycle { edge, src, dst }),
        }
        if circuit.order.is_some() {
            let reach = circuit.reachable_from(
                &circuit
                    .inputs
                    .iter()
                    .filter_map(|id| circuit.index.get(id).copied())
                    .collect::<Vec<_>>(),
            );
            for id in &circuit.outputs {
                if let Some(&i) = circuit.index.get(id) {
                    if !reach[i] {
                        violations.push(Violation::UnreachableOutput { id: id.clone() });
                    }
                }
            }
        }
        circuit.report = ValidationReport { violations };
        circuit
    }

    /// Builds and validates, returning an error listing every violation.
    pub fn validated(
        nodes: Vec<NodeSpec>,
        edges: Vec<EdgeSpec>,
        inputs: Vec<String>,
        outputs: Vec<String>,
    ) -> Result<Self> {
        let c = Self::new(nodes, edges, inputs, outputs);
        c.ensure_valid()?;
        Ok(c)
    }

    pub fn validate(&self) -> ValidationReport {
        self.report.clone()
    }

    pub fn ensure_valid(&self) -> Result<()> {
        if self.report.is_valid() {
            Ok(())
        } else {
            Err(EicsError::InvalidCircuit(self.report.violations.clone()))
        }
    }

    pub fn nodes(&self) -> &[NodeSpec] {
        &self.nodes
    }

    pub fn edges(&self) -> &[EdgeSpec] {
        &self.edges
    }

    pub fn inputs(&self) -> &[String] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[String] {
        &self.outputs
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub(crate) fn require_node(&self, id: &str) -> Result<usize> {
        self.node_index(id)
            .ok_or_else(|| EicsError::UnknownNode(id.to_string()))
    }

    pub fn dim(&self, node: usize) -> usize {
        self.nodes[node].dim
    }

    /// `(src, dst)` node indices of edge `k`. Only meaningful on valid circuits.
    pub fn endpoints(&self, k: usize) -> (usize, usize) {
        self.endpoints[k].expect("endpoints queried on a dangling edge")
    }

    /// Total state dimension `sum_v d_v`.
    pub fn state_dim(&self) -> usize {
        self.nodes.iter().map(|n| n.dim).sum()
    }

    /// Offsets of each node block inside the stacked state vector (node order).
    pub fn node_offsets(&self) -> Vec<usize> {
        let mut off = Vec::with_capacity(self.nodes.len());
        let mut acc = 0;
        for n in &self.nodes {
            off.push(acc);
            acc += n.dim;
        }
        off
    }

    pub fn in_edges(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.edges.len())
            .filter(move |&k| matches!(self.endpoints[k], Some((_, d)) if d == node))
    }

    pub fn out_edges(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.edges.len())
            .filter(move |&k| matches!(self.endpoints[k], Some((s, _)) if s == node))
    }

    /// Whether the underlying undirected graph is connected.
    pub fn is_weakly_connected(&self) -> bool {
        let all: Vec<usize> = (0..self.nodes.len()).collect();
        self.is_connected_subset(&all, |_| true)
    }

    pub(crate) fn is_connected_subset(
        &self,
        members: &[usize],
        edge_ok: impl Fn(usize) -> bool,
    ) -> bool {
        if members.len() <= 1 {
            return true;
        }
        let set: HashSet<usize> = members.iter().copied().collect();
        let mut adj: HashMap<usize, Vec<usize>> = HashMap::new();
        for k in 0..self.edges.len() {
            if let Some((s, d)) = self.endpoints[k] {
                if set.contains(&s) && set.contains(&d) && edge_ok(k) {
                    adj.entry(s).or_default().push(d);
                    adj.entry(d).or_default().push(s);
                }
            }
        }
        let mut seen = HashSet::new();
        let mut stack = vec![members[0]];
        while let Some(v) = stack.pop() {
            if seen.insert(v) {
                if let Some(ns) = adj.get(&v) {
                    stack.extend(ns.iter().copied());
                }
            }
        }
        seen.len() == set.len()
    }

    fn reachable_from(&self, seeds: &[usize]) -> Vec<bool> {
        let mut reach = vec![false; self.nodes.len()];
        let mut stack: Vec<usize> = seeds.to_vec();
        while let Some(v) = stack.pop() {
            if reach[v] {
                continue;
            }
            reach[v] = true;
            for k in self.out_edges(v) {
                stack.push(self.endpoints(k).1);
            }
        }
        reach
    }

    /// Kahn's algorithm with a lexicographic min-heap on node ids.
    fn compute_order(&self) -> std::result::Result<Vec<usize>, (usize, String, String)> {
        let n = self.nodes.len();
        let mut indeg = vec![0usize; n];
        let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (s, d) in self.endpoints.iter().flatten() {
            indeg[*d] += 1;
            succ[*s].push(*d);
        }
        let mut heap: BinaryHeap<Reverse<(&str, usize)>> = BinaryHeap::new();
        for (v, _) in indeg.iter().enumerate().filter(|(_, d)| **d == 0) {
            heap.push(Reverse((self.nodes[v].id.as_str(), v)));
        }
        let mut order = Vec::with_capacity(n);
        while let Some(Reverse((_, v))) = heap.pop() {
            order.push(v);
            for &w in &succ[v] {
                indeg[w] -= 1;
                if indeg[w] == 0 {
                    heap.push(Reverse((self.nodes[w].id.as_str(), w)));
                }
            }
        }
        if order.len() == n {
            return Ok(order);
        }
        // Every remaining node has a remaining predecessor; walking
        // predecessors must revisit a node, which closes a cycle.
        let done: HashSet<usize> = order.iter().copied().collect();
        let mut v = (0..n).find(|v| !done.contains(v)).expect("remaining node");
        let mut visited = HashSet::new();
        loop {
            let k = (0..self.edges.len())
                .find(
                    |&k| matches!(self.endpoints[k], Some((s, d)) if d == v && !done.contains(&s)),
                )
                .expect("remaining node has a remaining predecessor");
            let (s, d) = self.endpoints(k);
            if !visited.insert(v) {
                return Err((k, self.nodes[s].id.clone(), self.nodes[d].id.clone()));
            }
            v = s;
        }
    }

    pub(crate) fn order_indices(&self) -> Result<&[usize]> {
        match &self.order {
            Some(o) => Ok(o),
            None => {
                let cycle = self.report.violations.iter().find_map(|v| match v {
                    Violation::Cycle { src, dst, .. } => Some((src.clone(), dst.clone())),
                    _ => None,
                });
                let (src, dst) = cycle.unwrap_or_default();
                Err(EicsError::Cycle { src, dst })
            }
        }
    }
}

/// Topological order of node ids, ties broken lexicographically.
pub fn topological_order(circuit: &Circuit) -> Result<Vec<String>> {
    let order = circuit.order_indices()?;
    Ok(order.iter().map(|&i| circuit.nodes[i].id.clone()).collect())
}

pub fn validate_circuit(circuit: &Circuit) -> ValidationReport {
    circuit.validate()
}

/// One vector per node, keyed by node id.
///
/// Used both for observed activations and for general 0-cochains.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NodeVectors {
    values: BTreeMap<String, DVector<f64>>,
}

pub type ActivationState = NodeVectors;

impl NodeVectors {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs<I, S>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, DVector<f64>)>,
        S: Into<String>,
    {
        Self {
            values: pairs.into_iter().map(|(k, v)| (k.into(), v)).collect(),
        }
    }

    pub fn insert(&mut self, id: impl Into<String>, v: DVector<f64>) {
        self.values.insert(id.into(), v);
    }

    pub fn get(&self, id: &str) -> Option<&DVector<f64>> {
        self.values.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &DVector<f64>)> {
        self.values.iter()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Checks that node set, lengths and finiteness match the circuit.
    pub fn check_against(&self, circuit: &Circuit) -> Result<()> {
        if self.values.len() != circuit.nodes().len() {
            let extra: Vec<&String> = self
                .values
                .keys()
                .filter(|k| circuit.node_index(k).is_none())
                .collect();
            if let Some(k) = extra.first() {
                return Err(EicsError::Activations(format!("unknown node `{k}`")));
            }
        }
        for n in circuit.nodes() {
            let v = self
                .values
                .get(&n.id)
                .ok_or_else(|| EicsError::Activations(format!("missing node `{}`", n.id)))?;
            if v.len() != n.dim {
                return Err(EicsError::Activations(format!(
                    "node `{}` has length {}, expected {}",
                    n.id,
                    v.len(),
                    n.dim
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(EicsError::Activations(format!(
                    "node `{}` has non-finite entries",
                    n.id
                )));
            }
        }
        Ok(())
    }

    /// Values aligned with the circuit's node order.
    pub(crate) fn aligned<'a>(&'a self, circuit: &Circuit) -> Result<Vec<&'a DVector<f64>>> {
        self.check_against(circuit)?;
        Ok(circuit
            .nodes()
            .iter()
            .map(|n| &self.values[&n.id])
            .collect())
    }

    /// Stacked state vector in node order.
    pub fn stacked(&self, circuit: &Circuit) -> Result<DVector<f64>> {
        let parts: Vec<DVector<f64>> = self.aligned(circuit)?.into_iter().cloned().collect();
        Ok(crate::linear_map::concat(&parts))
    }

    pub fn from_stacked(circuit: &Circuit, x: &DVector<f64>) -> Self {
        let mut out = Self::new();
        let mut off = 0;
        for n in circuit.nodes() {
            out.insert(n.id.clone(), x.rows(off, n.dim).into_owned());
            off += n.dim;
        }
        out
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            values: self
                .values
                .iter()
                .map(|(k, v)| (k.clone(), v * c))
                .collect(),
        }
    }
}

/// One part of a partition: a connected node set with declared boundary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Part {
    pub nodes: Vec<String>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

impl Part {
    pub fn single(id: impl Into<String>) -> Self {
        let id = id.into();
        Self {
            nodes: vec![id.clone()],
            inputs: vec![id.clone()],
            outputs: vec![id],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub parts: Vec<Part>,
}

impl Partition {
    /// One part per node, in circuit node order.
    pub fn per_node(circuit: &Circuit) -> Self {
        Self {
            parts: circuit
                .nodes()
                .iter()
                .map(|n| Part::single(n.id.clone()))
                .collect(),
        }
    }

    pub fn is_disjoint(&self) -> bool {
        let mut seen = HashSet::new();
        self.parts
            .iter()
            .flat_map(|p| p.nodes.iter())
            .all(|id| seen.insert(id))
    }

    /// Checks ids, coverage, boundary membership and connectivity.
    ///
    /// Overlapping parts are accepted (branch decompositions share joints).
    pub fn validate(&self, circuit: &Circuit) -> Result<()> {
        if self.parts.is_empty() {
            return Err(EicsError::Partition("partition has no parts".into()));
        }
        let mut covered = HashSet::new();
        for (i, p) in self.parts.iter().enumerate() {
            if p.nodes.is_empty() {
                return Err(EicsError::Partition(format!("part {i} is empty")));
            }
            let members: HashSet<&String> = p.nodes.iter().collect();
            for id in &p.nodes {
                circuit.require_node(id)?;
                covered.insert(id.clone());
            }
            for id in p.inputs.iter().chain(&p.outputs) {
                if !members.contains(id) {
                    return Err(EicsError::Partition(format!(
                        "part {i} boundary node `{id}` is not a member"
                    )));
                }
            }
            if p.inputs.is_empty() || p.outputs.is_empty() {
                return Err(EicsError::Partition(format!(
                    "part {i} needs inputs and outputs"
                )));
            }
            let idx: Vec<usize> = p
                .nodes
                .iter()
                .map(|id| circuit.node_index(id).unwrap())
                .collect();
            if !circuit.is_connected_subset(&idx, |_| true) {
                return Err(EicsError::Partition(format!("part {i} is not connected")));
            }
        }
        for n in circuit.nodes() {
            if !covered.contains(&n.id) {
                return Err(EicsError::Partition(format!("node `{}` not covered", n.id)));
            }
        }
        Ok(())
    }
}

/// Result of composing Jacobians between two node sets.
#[derive(Debug, Clone)]
pub struct MacroJacobian {
    pub map: LinearMap,
    /// False when no `to` node is reachable from any `from` node.
    pub reachable: bool,
}

/// Forward accumulation of the total derivative of stacked `to` activations
/// with respect to stacked `from` activations.
///
/// `from` nodes are the independent variables: their own in-edges are cut.
/// Contributions from multiple in-edges sum at the destination.
fn accumulate(
    circuit: &Circuit,
    from: &[usize],
    to: &[usize],
    edge_ok: impl Fn(usize) -> bool,
) -> Result<MacroJacobian> {
    let order = circuit.order_indices()?;
    let n_in: usize = from.iter().map(|&v| circuit.dim(v)).sum();
    let n_out: usize = to.iter().map(|&v| circuit.dim(v)).sum();
    let mut tangent: Vec<Option<DMatrix<f64>>> = vec![None; circuit.nodes().len()];
    let mut col = 0;
    let mut seeded = vec![false; circuit.nodes().len()];
    for &v in from {
        let d = circuit.dim(v);
        let mut t = tangent[v].take().unwrap_or_else(|| DMatrix::zeros(d, n_in));
        for i in 0..d {
            t[(i, col + i)] += 1.0;
        }
        tangent[v] = Some(t);
        seeded[v] = true;
        col += d;
    }
    for &v in order {
        if seeded[v] {
            continue;
        }
        let mut acc: Option<DMatrix<f64>> = None;
        for k in circuit.in_edges(v) {
            if !edge_ok(k) {
                continue;
            }
            let (u, _) = circuit.endpoints(k);
            if let Some(tu) = &tangent[u] {
                let contrib = circuit.edges()[k].map.apply_matrix(tu);
                acc = Some(match acc {
                    Some(a) => a + contrib,
                    None => contrib,
                });
            }
        }
        tangent[v] = acc;
    }
    let mut out = DMatrix::zeros(n_out, n_in);
    let mut row = 0;
    let mut reachable = false;
    for &v in to {
        let d = circuit.dim(v);
        if let Some(t) = &tangent[v] {
            out.view_mut((row, 0), (d, n_in)).copy_from(t);
            reachable = true;
        }
        row += d;
    }
    Ok(MacroJacobian {
        map: LinearMap::Dense(out),
        reachable,
    })
}

fn resolve(circuit: &Circuit, ids: &[String]) -> Result<Vec<usize>> {
    ids.iter().map(|id| circuit.require_node(id)).collect()
}

/// Dense macro-Jacobian from `from` to `to` (block-structured by node order
/// of the argument lists).
pub fn macro_jacobian(circuit: &Circuit, from: &[String], to: &[String]) -> Result<MacroJacobian> {
    circuit.ensure_valid()?;
    let f = resolve(circuit, from)?;
    let t = resolve(circuit, to)?;
    accumulate(circuit, &f, &t, |_| true)
}

/// Macro-Jacobian from the circuit's declared inputs to outputs.
pub fn circuit_jacobian(circuit: &Circuit) -> Result<MacroJacobian> {
    macro_jacobian(circuit, circuit.inputs(), circuit.outputs())
}

/// Jacobian of one part of a partition.
///
/// Single-node parts use the node's incoming maps, concatenated in edge
/// order (identity for sources). Larger parts accumulate forward along the
/// edges internal to the part, from its inputs to its outputs.
pub fn part_jacobian(circuit: &Circuit, part: &Part) -> Result<LinearMap> {
    circuit.ensure_valid()?;
    let members = resolve(circuit, &part.nodes)?;
    if members.is_empty() {
        return Err(EicsError::Partition("empty part".into()));
    }
    if members.len() == 1 {
        let v = members[0];
        let maps: Vec<LinearMap> = circuit
            .in_edges(v)
            .map(|k| circuit.edges()[k].map.clone())
            .collect();
        return Ok(if maps.is_empty() {
            LinearMap::identity(circuit.dim(v))
        } else {
            LinearMap::hstack(&maps)
        });
    }
    let set: HashSet<usize> = members.iter().copied().collect();
    let internal = |k: usize| {
        let (s, d) = circuit.endpoints(k);
        set.contains(&s) && set.contains(&d)
    };
    if !circuit.is_connected_subset(&members, internal) {
        return Err(EicsError::Partition("part is not connected".into()));
    }
    let f = resolve(circuit, &part.inputs)?;
    let t = resolve(circuit, &part.outputs)?;
    Ok(accumulate(circuit, &f, &t, internal)?.map)
}

/// Matrix-free macro-Jacobian: each application is one forward sweep
/// (JVP), each adjoint one reverse sweep (VJP).
pub fn macro_operator(circuit: &Circuit, from: &[String], to: &[String]) -> Result<LinearMap> {
    circuit.ensure_valid()?;
    let from = resolve(circuit, from)?;
    let to = resolve(circuit, to)?;
    let op = SweepOperator::new(circuit, from, to)?;
    Ok(LinearMap::operator(op))
}

struct SweepOperator {
    dims: Vec<usize>,
    order: Vec<usize>,
    // (src, dst, map) for every edge not entering a clamped node
    edges: Vec<(usize, usize, LinearMap)>,
    from: Vec<usize>,
    to: Vec<usize>,
    clamped: Vec<bool>,
}

impl SweepOperator {
    fn new(circuit: &Circuit, from: Vec<usize>, to: Vec<usize>) -> Result<Self> {
        let n = circuit.nodes().len();
        let mut clamped = vec![false; n];
        for &v in &from {
            clamped[v] = true;
        }
        let edges = (0..circuit.edges().len())
            .filter_map(|k| {
                let (s, d) = circuit.endpoints(k);
                (!clamped[d]).then(|| (s, d, circuit.edges()[k].map.clone()))
            })
            .collect();
        Ok(Self {
            dims: circuit.nodes().iter().map(|n| n.dim).collect(),
            order: circuit.order_indices()?.to_vec(),
            edges,
            from,
            to,
            clamped,
        })
    }
}

impl LinearOperator for SweepOperator {
    fn nrows(&self) -> usize {
        self.to.iter().map(|&v| self.dims[v]).sum()
    }

    fn ncols(&self) -> usize {
        self.from.iter().map(|&v| self.dims[v]).sum()
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut state: Vec<DVector<f64>> = self.dims.iter().map(|&d| DVector::zeros(d)).collect();
        let mut off = 0;
        for &v in &self.from {
            state[v] += x.rows(off, self.dims[v]);
            off += self.dims[v];
        }
        for &v in &self.order {
            if self.clamped[v] {
                continue;
            }
            for (s, d, m) in &self.edges {
                if *d == v {
                    let c = m.apply(&state[*s]);
                    state[v] += c;
                }
            }
        }
        let parts: Vec<DVector<f64>> = self.to.iter().map(|&v| state[v].clone()).collect();
        crate::linear_map::concat(&parts)
    }

    fn apply_adjoint(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut grad: Vec<DVector<f64>> = self.dims.iter().map(|&d| DVector::zeros(d)).collect();
        let mut off = 0;
        for &v in &self.to {
            grad[v] += y.rows(off, self.dims[v]);
            off += self.dims[v];
        }
        for &v in self.order.iter().rev() {
            if self.clamped[v] {
                continue;
            }
            for (s, d, m) in &self.edges {
                if *d == v {
                    let c = m.apply_adjoint(&grad[v]);
                    grad[*s] += c;
                }
            }
        }
        let parts: Vec<DVector<f64>> = self.from.iter().map(|&v| grad[v].clone()).collect();
        crate::linear_map::concat(&parts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn chain(a: DMatrix<f64>, b: DMatrix<f64>) -> Circuit {
        Circuit::new(
            vec![
                NodeSpec::new("u", a.ncols()),
                NodeSpec::new("v", a.nrows()),
                NodeSpec::new("w", b.nrows()),
            ],
            vec![EdgeSpec::new("u", "v", a), EdgeSpec::new("v", "w", b)],
            ids(&["u"]),
            ids(&["w"]),
        )
    }

    fn diamond(maps: [DMatrix<f64>; 4]) -> Circuit {
        let [a, b, c, d] = maps;
        Circuit::new(
            vec![
                NodeSpec::new("u", 2),
                NodeSpec::new("v1", 2),
                NodeSpec::new("v2", 2),
                NodeSpec::new("w", 2),
            ],
            vec![
                EdgeSpec::new("u", "v1", a),
                EdgeSpec::new("u", "v2", b),
                EdgeSpec::new("v1", "w", c),
                EdgeSpec::new("v2", "w", d),
            ],
            ids(&["u"]),
            ids(&["w"]),
        )
    }

    #[test]
    fn single_node_circuit_is_valid() {
        let c = Circuit::new(
            vec![NodeSpec::new("x", 3)],
            vec![],
            ids(&["x"]),
            ids(&["x"]),
        );
        assert!(c.validate().is_valid());
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let c = Circuit::new(
            vec![NodeSpec::new("a", 4), NodeSpec::new("b", 3)],
            vec![EdgeSpec::new("a", "b", DMatrix::<f64>::zeros(3, 2))],
            ids(&["a"]),
            ids(&["b"]),
        );
        assert_eq!(
            c.validate().violations,
            vec![Violation::ShapeMismatch {
                edge: 0,
                expected: (3, 4),
                found: (3, 2)
            }]
        );
    }

    #[test]
    fn collects_all_violations() {
        let c = Circuit::new(
            vec![
                NodeSpec::new("a", 1),
                NodeSpec::new("a", 0),
                NodeSpec::new("z", 1),
            ],
            vec![EdgeSpec::new("a", "ghost", DMatrix::<f64>::zeros(1, 1))],
            ids(&["a"]),
            ids(&["z", "nope"]),
        );
        let v = c.validate().violations;
        assert!(v.contains(&Violation::DuplicateNode { id: "a".into() }));
        assert!(v.contains(&Violation::ZeroDimension { id: "a".into() }));
        assert!(v.contains(&Violation::DanglingEdge {
            edge: 0,
            id: "ghost".into()
        }));
        assert!(v.contains(&Violation::UnknownOutput { id: "nope".into() }));
        assert!(v.contains(&Violation::UnreachableOutput { id: "z".into() }));
    }

    #[test]
    fn chain_order_and_composite() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = DMatrix::from_row_slice(1, 2, &[0.5, -1.0]);
        let c = chain(a.clone(), b.clone());
        assert_eq!(topological_order(&c).unwrap(), ids(&["u", "v", "w"]));
        let j = circuit_jacobian(&c).unwrap();
        assert!(j.reachable);
        assert_relative_eq!(j.map.to_dense(), &b * &a, epsilon = 1e-14);
    }

    #[test]
    fn two_cycle_is_an_error() {
        let i = DMatrix::<f64>::identity(1, 1);
        let c = Circuit::new(
            vec![NodeSpec::new("u", 1), NodeSpec::new("v", 1)],
            vec![
                EdgeSpec::new("u", "v", i.clone()),
                EdgeSpec::new("v", "u", i),
            ],
            ids(&["u"]),
            ids(&["v"]),
        );
        assert!(matches!(
            topological_order(&c),
            Err(EicsError::Cycle { .. })
        ));
        assert!(c
            .validate()
            .violations
            .iter()
            .any(|v| matches!(v, Violation::Cycle { .. })));
    }

    #[test]
    fn diamond_of_identities_gives_two_identity() {
        let i = DMatrix::<f64>::identity(2, 2);
        let c = diamond([i.clone(), i.clone(), i.clone(), i.clone()]);
        let j = circuit_jacobian(&c).unwrap().map.to_dense();
        assert_relative_eq!(j, DMatrix::identity(2, 2) * 2.0, epsilon = 1e-15);
    }

    #[test]
    fn scaling_one_edge_scales_its_paths() {
        let m = |s: u64| crate::rng::normal_matrix(&mut crate::rng::stream(s, 0), 2, 2);
        let (a, b, c, d) = (m(1), m(2), m(3), m(4));
        let base = diamond([a.clone(), b.clone(), c.clone(), d.clone()]);
        let scaled = diamond([a.clone() * 3.0, b.clone(), c.clone(), d.clone()]);
        let j0 = circuit_jacobian(&base).unwrap().map.to_dense();
        let j1 = circuit_jacobian(&scaled).unwrap().map.to_dense();
        let path_a = &c * &a;
        assert_relative_eq!(j1 - j0, path_a * 2.0, epsilon = 1e-12);
    }

    #[test]
    fn no_path_gives_flagged_zero_map() {
        let c = Circuit::new(
            vec![NodeSpec::new("a", 2), NodeSpec::new("b", 3)],
            vec![],
            ids(&["a", "b"]),
            ids(&["a", "b"]),
        );
        let j = macro_jacobian(&c, &ids(&["a"]), &ids(&["b"])).unwrap();
        assert!(!j.reachable);
        assert_eq!(j.map.shape(), (3, 2));
        assert_eq!(j.map.to_dense().norm(), 0.0);
    }

    #[test]
    fn single_node_part_concatenates_in_edges() {
        let a = DMatrix::from_element(2, 1, 1.0);
        let b = DMatrix::from_element(2, 3, 2.0);
        let c = Circuit::new(
            vec![
                NodeSpec::new("p", 1),
                NodeSpec::new("q", 3),
                NodeSpec::new("v", 2),
            ],
            vec![
                EdgeSpec::new("p", "v", a.clone()),
                EdgeSpec::new("q", "v", b.clone()),
            ],
            ids(&["p", "q"]),
            ids(&["v"]),
        );
        let j = part_jacobian(&c, &Part::single("v")).unwrap().to_dense();
        assert_eq!(j.shape(), (2, 4));
        assert_eq!(j.columns(0, 1), a);
        assert_eq!(j.columns(1, 3), b);
        let src = part_jacobian(&c, &Part::single("q")).unwrap().to_dense();
        assert_eq!(src, DMatrix::identity(3, 3));
    }

    #[test]
    fn disconnected_part_is_rejected() {
        let i = DMatrix::<f64>::identity(1, 1);
        let c = chain(i.clone(), i);
        let part = Part {
            nodes: ids(&["u", "w"]),
            inputs: ids(&["u"]),
            outputs: ids(&["w"]),
        };
        assert!(matches!(
            part_jacobian(&c, &part),
            Err(EicsError::Partition(_))
        ));
    }

    #[test]
    fn sweep_operator_matches_dense_accumulation() {
        let m = |s: u64| crate::rng::normal_matrix(&mut crate::rng::stream(s, 0), 2, 2);
        let c = diamond([m(1), m(2), m(3), m(4)]);
        let op = macro_operator(&c, c.inputs(), c.outputs()).unwrap();
        let dense = circuit_jacobian(&c).unwrap().map.to_dense();
        assert_relative_eq!(op.to_dense(), dense, epsilon = 1e-13);
        assert!(op.adjoint_mismatch(8, 1) < 1e-12);
    }

    #[test]
    fn activations_are_checked() {
        let c = Circuit::new(
            vec![NodeSpec::new("x", 2)],
            vec![],
            ids(&["x"]),
            ids(&["x"]),
        );
        let good = NodeVectors::from_pairs([("x", DVector::from_vec(vec![1.0, 2.0]))]);
        assert!(good.check_against(&c).is_ok());
        let short = NodeVectors::from_pairs([("x", DVector::from_vec(vec![1.0]))]);
        assert!(short.check_against(&c).is_err());
        let nan = NodeVectors::from_pairs([("x", DVector::from_vec(vec![1.0, f64::NAN]))]);
        assert!(nan.check_against(&c).is_err());
        let mut extra = good.clone();
        extra.insert("y", DVector::zeros(1));
        assert!(extra.check_against(&c).is_err());
    }
}
