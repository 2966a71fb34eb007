#![allow(dead_code)]

use eics::circuit::{Circuit, EdgeSpec, NodeSpec, NodeVectors};
use eics::rng::{self, StreamRng};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Random DAG and its dense edge maps, kept for oracle computations.
pub struct RandomCircuit {
    pub circuit: Circuit,
    pub dims: Vec<usize>,
    pub edges: Vec<(usize, usize, DMatrix<f64>)>,
}

pub fn id(i: usize) -> String {
    format!("n{i}")
}

/// Every node after the first gets one earlier parent, so the circuit is
/// weakly connected. With `extra > 0` further forward edges are added with
/// that probability.
pub fn random_circuit(
    g: &mut StreamRng,
    max_nodes: usize,
    max_dim: usize,
    extra: f64,
) -> RandomCircuit {
    let n = g.random_range(1..=max_nodes);
    let dims: Vec<usize> = (0..n).map(|_| g.random_range(1..=max_dim)).collect();
    let mut pairs = Vec::new();
    for j in 1..n {
        let p = g.random_range(0..j);
        pairs.push((p, j));
        for i in 0..j {
            if i != p && g.random_bool(extra) {
                pairs.push((i, j));
            }
        }
    }
    let edges: Vec<(usize, usize, DMatrix<f64>)> = pairs
        .into_iter()
        .map(|(u, v)| {
            let m = rng::normal_matrix(g, dims[v], dims[u]) / (dims[u] as f64).sqrt();
            (u, v, m)
        })
        .collect();
    build(dims, edges)
}

pub fn build(dims: Vec<usize>, edges: Vec<(usize, usize, DMatrix<f64>)>) -> RandomCircuit {
    let n = dims.len();
    let has_in = |j: usize| edges.iter().any(|e| e.1 == j);
    let has_out = |j: usize| edges.iter().any(|e| e.0 == j);
    let inputs: Vec<String> = (0..n).filter(|&j| !has_in(j)).map(id).collect();
    let outputs: Vec<String> = (0..n).filter(|&j| !has_out(j)).map(id).collect();
    let circuit = Circuit::new(
        dims.iter()
            .enumerate()
            .map(|(i, &d)| NodeSpec::new(id(i), d))
            .collect(),
        edges
            .iter()
            .map(|(u, v, m)| EdgeSpec::new(id(*u), id(*v), m.clone()))
            .collect(),
        inputs,
        outputs,
    );
    RandomCircuit {
        circuit,
        dims,
        edges,
    }
}

impl RandomCircuit {
    pub fn random_state(&self, g: &mut StreamRng) -> NodeVectors {
        NodeVectors::from_pairs(
            self.dims
                .iter()
                .enumerate()
                .map(|(i, &d)| (id(i), rng::normal_vec(g, d))),
        )
    }

    /// Forward propagation from random sources. Consistent on every edge
    /// when each node has at most one in-edge.
    pub fn forward_state(&self, g: &mut StreamRng) -> NodeVectors {
        let mut vals: Vec<Option<DVector<f64>>> = vec![None; self.dims.len()];
        for j in 0..self.dims.len() {
            let mut acc: Option<DVector<f64>> = None;
            for (u, v, m) in &self.edges {
                if *v == j {
                    let y = m * vals[*u].as_ref().unwrap();
                    acc = Some(match acc {
                        Some(a) => a + y,
                        None => y,
                    });
                }
            }
            vals[j] = Some(acc.unwrap_or_else(|| rng::normal_vec(g, self.dims[j])));
        }
        NodeVectors::from_pairs(
            vals.into_iter()
                .enumerate()
                .map(|(i, v)| (id(i), v.unwrap())),
        )
    }

    pub fn max_in_degree(&self) -> usize {
        (0..self.dims.len())
            .map(|j| self.edges.iter().filter(|e| e.1 == j).count())
            .max()
            .unwrap_or(0)
    }

    pub fn sources_with_out_edges(&self) -> usize {
        (0..self.dims.len())
            .filter(|&j| self.edges.iter().any(|e| e.0 == j))
            .count()
    }

    /// Inconsistency evaluated edge by edge from the dense maps.
    pub fn dense_csh(&self, a: &NodeVectors, eps: f64) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (u, v, m) in &self.edges {
            let au = a.get(&id(*u)).unwrap();
            let av = a.get(&id(*v)).unwrap();
            num += (m * au - av).norm_squared();
            den += au.norm_squared() + av.norm_squared();
        }
        if self.edges.is_empty() {
            0.0
        } else {
            num.sqrt() / (eps + den.sqrt())
        }
    }

    /// Dense `L = δᵀ W δ` assembled block by block.
    pub fn dense_laplacian(&self, weights: &[f64]) -> DMatrix<f64> {
        let mut off = vec![0; self.dims.len()];
        for i in 1..self.dims.len() {
            off[i] = off[i - 1] + self.dims[i - 1];
        }
        let n: usize = self.dims.iter().sum();
        let mut l = DMatrix::zeros(n, n);
        for ((u, v, m), w) in self.edges.iter().zip(weights) {
            let (du, dv) = (self.dims[*u], self.dims[*v]);
            let mtm = m.transpose() * m * *w;
            let mut blk = l.view_mut((off[*u], off[*u]), (du, du));
            blk += &mtm;
            let mut blk = l.view_mut((off[*v], off[*v]), (dv, dv));
            blk += DMatrix::<f64>::identity(dv, dv) * *w;
            let neg = m * (-*w);
            let mut blk = l.view_mut((off[*v], off[*u]), (dv, du));
            blk += &neg;
            let mut blk = l.view_mut((off[*u], off[*v]), (du, dv));
            blk += neg.transpose();
        }
        l
    }
}

/// `log det(M)` for SPD `M` by Cholesky.
pub fn logdet_chol(m: DMatrix<f64>) -> f64 {
    let c = nalgebra::Cholesky::new(m).expect("SPD");
    2.0 * c.l().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// `½ log det(I + α JᵀJ)` by Cholesky.
pub fn ei_oracle(j: &DMatrix<f64>, alpha: f64) -> f64 {
    let n = j.ncols();
    0.5 * logdet_chol(DMatrix::identity(n, n) + j.transpose() * j * alpha)
}

pub fn random_orthogonal(g: &mut StreamRng, n: usize) -> DMatrix<f64> {
    rng::normal_matrix(g, n, n).qr().q()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}
