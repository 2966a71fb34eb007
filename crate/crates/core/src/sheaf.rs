//! Sheaf coboundary, normalized inconsistency energy, least-squares
//! sections and the weighted sheaf Laplacian.
//!
//! Stalks are the node activation spaces and restriction maps are the edge
//! maps, so for an oriented edge `u -> v` the coboundary reads
//! `(δ s)_e = ρ_e s_u - s_v`. The sheaf lives on the undirected 1-skeleton:
//! edge direction only fixes which stalk the map starts from.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::circuit::{ActivationState, Circuit, NodeVectors};
use crate::error::{EicsError, Result};
use crate::lanczos;
use crate::linear_map::{LinearMap, POWER_ITERATIONS, POWER_TOLERANCE};
use crate::rng;

pub type Cochain0 = NodeVectors;

/// Largest total state dimension assembled densely.
pub const DENSE_GUARD: usize = 4096;
/// Eigenvalues with magnitude at or below this count as kernel.
pub const KERNEL_FLOOR: f64 = 1e-10;
const WEIGHT_FLOOR: f64 = 1e-12;

/// One vector per oriented edge, in edge order.
#[derive(Debug, Clone, PartialEq)]
pub struct Cochain1 {
    pub values: Vec<DVector<f64>>,
}

impl Cochain1 {
    pub fn energy(&self) -> f64 {
        self.values.iter().map(|v| v.norm_squared()).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|&x| x == 0.0))
    }
}

/// Coboundary grouped by source node: every source applies one stacked map
/// to its own state to produce all outgoing `ρ_e s_u` terms.
// (source node, stacked map, [(edge index, row offset, rows)])
type Seed = (usize, LinearMap, Vec<(usize, usize, usize)>);

struct NodeSeeded {
    seeds: Vec<Seed>,
}

impl NodeSeeded {
    fn new(circuit: &Circuit) -> Self {
        let mut seeds = Vec::new();
        for u in 0..circuit.nodes().len() {
            let out: Vec<usize> = circuit.out_edges(u).collect();
            if out.is_empty() {
                continue;
            }
            let maps: Vec<LinearMap> = out
                .iter()
                .map(|&k| circuit.edges()[k].map.clone())
                .collect();
            let mut layout = Vec::with_capacity(out.len());
            let mut off = 0;
            for (&k, m) in out.iter().zip(&maps) {
                layout.push((k, off, m.nrows()));
                off += m.nrows();
            }
            seeds.push((u, LinearMap::vstack(&maps), layout));
        }
        Self { seeds }
    }

    fn apply(&self, circuit: &Circuit, s: &[&DVector<f64>]) -> (Cochain1, usize) {
        let mut values: Vec<DVector<f64>> = circuit
            .edges()
            .iter()
            .map(|e| DVector::zeros(e.map.nrows()))
            .collect();
        let mut applications = 0;
        for (u, stacked, layout) in &self.seeds {
            let pushed = stacked.apply(s[*u]);
            applications += 1;
            for &(k, off, rows) in layout {
                let (_, v) = circuit.endpoints(k);
                values[k] = pushed.rows(off, rows) - s[v];
            }
        }
        (Cochain1 { values }, applications)
    }
}

/// Applies the coboundary node-seeded. Returns the 1-cochain and the number
/// of map applications spent (one per node with out-edges).
pub fn coboundary_apply(circuit: &Circuit, s: &Cochain0) -> Result<(Cochain1, usize)> {
    circuit.ensure_valid()?;
    let aligned = s.aligned(circuit)?;
    Ok(NodeSeeded::new(circuit).apply(circuit, &aligned))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SheafReport {
    pub edge_residuals: Vec<f64>,
    /// `Σ_e ‖ρ_e a_u − a_v‖²`
    pub numerator_energy: f64,
    /// `Σ_e (‖a_u‖² + ‖a_v‖²)`, endpoints counted once per incident edge
    pub denominator_energy: f64,
    pub c_sh: f64,
    pub epsilon: f64,
    /// Set when the circuit has no edges and `c_sh` is 0 by convention.
    pub degenerate: bool,
    pub map_applications: usize,
    pub lambda2: Option<f64>,
    pub beta: Option<f64>,
}

/// Normalized inconsistency energy of the node assignment `a`.
pub fn sheaf_inconsistency(
    circuit: &Circuit,
    a: &ActivationState,
    epsilon: f64,
) -> Result<SheafReport> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(EicsError::InvalidArgument(format!(
            "epsilon must be > 0, got {epsilon}"
        )));
    }
    circuit.ensure_valid()?;
    let aligned = a.aligned(circuit)?;
    let (residuals, applications) = NodeSeeded::new(circuit).apply(circuit, &aligned);
    let mut edge_residuals = Vec::with_capacity(residuals.values.len());
    let mut num = 0.0;
    let mut den = 0.0;
    for (k, r) in residuals.values.iter().enumerate() {
        let (u, v) = circuit.endpoints(k);
        let e = r.norm_squared();
        edge_residuals.push(e.sqrt());
        num += e;
        den += aligned[u].norm_squared() + aligned[v].norm_squared();
    }
    let degenerate = circuit.edges().is_empty();
    let c_sh = if degenerate {
        0.0
    } else {
        num.sqrt() / (epsilon + den.sqrt())
    };
    Ok(SheafReport {
        edge_residuals,
        numerator_energy: num,
        denominator_energy: den,
        c_sh,
        epsilon,
        degenerate,
        map_applications: applications,
        lambda2: None,
        beta: None,
    })
}

/// Stacked coboundary matrix: rows are edge blocks (edge order), columns
/// node blocks (node order).
pub fn coboundary_matrix(circuit: &Circuit) -> Result<DMatrix<f64>> {
    circuit.ensure_valid()?;
    let cols = circuit.state_dim();
    guard(cols)?;
    let rows: usize = circuit.edges().iter().map(|e| e.map.nrows()).sum();
    let offsets = circuit.node_offsets();
    let mut d = DMatrix::zeros(rows, cols);
    let mut row = 0;
    for (k, e) in circuit.edges().iter().enumerate() {
        let (u, v) = circuit.endpoints(k);
        let m = e.map.to_dense();
        d.view_mut((row, offsets[u]), m.shape()).copy_from(&m);
        for i in 0..m.nrows() {
            d[(row + i, offsets[v] + i)] -= 1.0;
        }
        row += m.nrows();
    }
    Ok(d)
}

fn guard(dim: usize) -> Result<()> {
    if dim > DENSE_GUARD {
        Err(EicsError::DimensionGuard {
            dim,
            guard: DENSE_GUARD,
        })
    } else {
        Ok(())
    }
}

/// Orthogonal projection of `a` onto the global sections `ker δ`.
///
/// Returns `(ŝ, ‖δ a‖²)`. Small circuits use an SVD of the stacked
/// coboundary; larger ones solve the normal equations by conjugate gradients
/// on the operator form (CGNR from zero yields the minimum-norm correction).
pub fn least_squares_section(circuit: &Circuit, a: &ActivationState) -> Result<(Cochain0, f64)> {
    circuit.ensure_valid()?;
    let x = a.stacked(circuit)?;
    if circuit.edges().is_empty() {
        return Ok((a.clone(), 0.0));
    }
    let correction = if circuit.state_dim() <= DENSE_GUARD {
        let d = coboundary_matrix(circuit)?;
        row_space_projection(&d, &x)?
    } else {
        let op = coboundary_operator(circuit);
        cgnr_min_norm(&op, &op.apply(&x), 10 * circuit.state_dim(), 1e-14)
    };
    let residual = {
        let aligned = a.aligned(circuit)?;
        NodeSeeded::new(circuit).apply(circuit, &aligned).0.energy()
    };
    let s = &x - correction;
    Ok((NodeVectors::from_stacked(circuit, &s), residual))
}

fn row_space_projection(d: &DMatrix<f64>, x: &DVector<f64>) -> Result<DVector<f64>> {
    let svd = d.clone().svd(false, true);
    let vt = svd
        .v_t
        .as_ref()
        .ok_or_else(|| EicsError::Numeric("SVD failed to produce right singular vectors".into()))?;
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let tol = smax * (d.nrows().max(d.ncols()) as f64) * f64::EPSILON;
    let mut out = DVector::zeros(x.len());
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > tol {
            let v = vt.row(i).transpose();
            out.axpy(v.dot(x), &v, 1.0);
        }
    }
    Ok(out)
}

fn cgnr_min_norm(op: &LinearMap, b: &DVector<f64>, max_iter: usize, tol: f64) -> DVector<f64> {
    let mut x = DVector::zeros(op.ncols());
    let mut r = op.apply_adjoint(b);
    let mut p = r.clone();
    let mut rr = r.norm_squared();
    let r0 = rr.sqrt().max(f64::MIN_POSITIVE);
    for _ in 0..max_iter {
        if rr.sqrt() <= tol * r0 {
            break;
        }
        let ap = op.apply_adjoint(&op.apply(&p));
        let alpha = rr / p.dot(&ap);
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        let next = r.norm_squared();
        p = &r + &p * (next / rr);
        rr = next;
    }
    x
}

/// Matrix-free stacked coboundary on the node-ordered state vector.
pub fn coboundary_operator(circuit: &Circuit) -> LinearMap {
    let offsets = circuit.node_offsets();
    let dims: Vec<usize> = circuit.nodes().iter().map(|n| n.dim).collect();
    let edges: Vec<(usize, usize, LinearMap)> = circuit
        .edges()
        .iter()
        .enumerate()
        .map(|(k, e)| {
            let (u, v) = circuit.endpoints(k);
            (u, v, e.map.clone())
        })
        .collect();
    let rows: usize = edges.iter().map(|e| e.2.nrows()).sum();
    let cols = circuit.state_dim();
    let (fo, fd, fe) = (offsets.clone(), dims.clone(), edges.clone());
    LinearMap::from_fn(
        rows,
        cols,
        move |x| {
            let mut out = DVector::zeros(rows);
            let mut row = 0;
            for (u, v, m) in &fe {
                let su = x.rows(fo[*u], fd[*u]).into_owned();
                let r = m.apply(&su) - x.rows(fo[*v], fd[*v]);
                out.rows_mut(row, m.nrows()).copy_from(&r);
                row += m.nrows();
            }
            out
        },
        move |y| {
            let mut out = DVector::zeros(cols);
            let mut row = 0;
            for (u, v, m) in &edges {
                let seg = y.rows(row, m.nrows()).into_owned();
                let back = m.apply_adjoint(&seg);
                let mut bu = out.rows_mut(offsets[*u], dims[*u]);
                bu += back;
                let mut bv = out.rows_mut(offsets[*v], dims[*v]);
                bv -= &seg;
                row += m.nrows();
            }
            out
        },
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightScheme {
    Unit,
    #[default]
    InverseOperatorNorm,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EdgeWeighting {
    pub scheme: WeightScheme,
    /// Explicit per-edge weights; override the scheme when present.
    pub weights: Option<Vec<f64>>,
}

impl EdgeWeighting {
    pub fn unit() -> Self {
        Self {
            scheme: WeightScheme::Unit,
            weights: None,
        }
    }

    pub fn inverse_operator_norm() -> Self {
        Self {
            scheme: WeightScheme::InverseOperatorNorm,
            weights: None,
        }
    }
}

/// Power-iteration spectral norms of every edge map (seeded by edge index).
pub fn edge_operator_norms(circuit: &Circuit) -> Vec<f64> {
    circuit
        .edges()
        .iter()
        .enumerate()
        .map(|(k, e)| {
            e.map
                .operator_norm(POWER_ITERATIONS, POWER_TOLERANCE, k as u64)
        })
        .collect()
}

pub fn edge_weights(circuit: &Circuit, weighting: &EdgeWeighting) -> Result<Vec<f64>> {
    let w = match (&weighting.weights, weighting.scheme) {
        (Some(w), _) => {
            if w.len() != circuit.edges().len() {
                return Err(EicsError::InvalidArgument(format!(
                    "{} explicit weights for {} edges",
                    w.len(),
                    circuit.edges().len()
                )));
            }
            w.clone()
        }
        (None, WeightScheme::Unit) => vec![1.0; circuit.edges().len()],
        (None, WeightScheme::InverseOperatorNorm) => edge_operator_norms(circuit)
            .into_iter()
            .map(|s| 1.0 / (s * s).max(WEIGHT_FLOOR))
            .collect(),
    };
    if let Some(bad) = w.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
        return Err(EicsError::InvalidArgument(format!(
            "edge weight {bad} is not positive and finite"
        )));
    }
    Ok(w)
}

/// Dense weighted Laplacian `L = δᵀ W δ`.
pub fn sheaf_laplacian(circuit: &Circuit, weighting: &EdgeWeighting) -> Result<DMatrix<f64>> {
    circuit.ensure_valid()?;
    guard(circuit.state_dim())?;
    let w = edge_weights(circuit, weighting)?;
    let mut d = coboundary_matrix(circuit)?;
    let mut row = 0;
    for (k, e) in circuit.edges().iter().enumerate() {
        let rows = e.map.nrows();
        d.rows_mut(row, rows).scale_mut(w[k].sqrt());
        row += rows;
    }
    let l = d.tr_mul(&d);
    // symmetrize away rounding
    Ok((&l + l.transpose()) * 0.5)
}

/// Matrix-free weighted Laplacian.
pub fn laplacian_operator(circuit: &Circuit, weighting: &EdgeWeighting) -> Result<LinearMap> {
    circuit.ensure_valid()?;
    let w = edge_weights(circuit, weighting)?;
    let d = coboundary_operator(circuit);
    let rows: Vec<usize> = circuit.edges().iter().map(|e| e.map.nrows()).collect();
    let n = circuit.state_dim();
    let (d2, w2, r2) = (d.clone(), w.clone(), rows.clone());
    let weigh = |y: &mut DVector<f64>, w: &[f64], rows: &[usize]| {
        let mut off = 0;
        for (k, &r) in rows.iter().enumerate() {
            y.rows_mut(off, r).scale_mut(w[k]);
            off += r;
        }
    };
    Ok(LinearMap::from_fn(
        n,
        n,
        move |x| {
            let mut y = d.apply(x);
            weigh(&mut y, &w, &rows);
            d.apply_adjoint(&y)
        },
        move |x| {
            let mut y = d2.apply(x);
            weigh(&mut y, &w2, &r2);
            d2.apply_adjoint(&y)
        },
    ))
}

fn asymmetry(l: &DMatrix<f64>) -> f64 {
    let norm = l.norm().max(f64::MIN_POSITIVE);
    (l - l.transpose()).norm() / norm
}

/// Smallest eigenvalue of `L` outside the kernel floor, plus `beta`.
///
/// Eigenvalues within [`KERNEL_FLOOR`] of zero are the kernel. A matrix that
/// is all kernel returns `beta`.
pub fn spectral_gap(l: &DMatrix<f64>, beta: f64) -> Result<f64> {
    if !l.is_square() {
        return Err(EicsError::InvalidArgument(
            "Laplacian must be square".into(),
        ));
    }
    if beta < 0.0 || !beta.is_finite() {
        return Err(EicsError::InvalidArgument(format!(
            "beta must be >= 0, got {beta}"
        )));
    }
    let a = asymmetry(l);
    if a > 1e-8 {
        return Err(EicsError::NotSymmetric(a));
    }
    if l.nrows() == 0 {
        return Ok(beta);
    }
    let eig = SymmetricEigen::new(l.clone());
    Ok(first_above_floor(eig.eigenvalues.iter().copied()) + beta)
}

fn first_above_floor(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.into_iter().find(|x| *x > KERNEL_FLOOR).unwrap_or(0.0)
}

/// Lanczos variant of [`spectral_gap`] for operator-form Laplacians.
///
/// Runs `steps` iterations with full reorthogonalization and restarts, so
/// with `steps >= n` every distinct eigenvalue is found.
pub fn spectral_gap_operator(l: &LinearMap, beta: f64, steps: usize, seed: u64) -> Result<f64> {
    if l.nrows() != l.ncols() {
        return Err(EicsError::InvalidArgument(
            "Laplacian must be square".into(),
        ));
    }
    if beta < 0.0 || !beta.is_finite() {
        return Err(EicsError::InvalidArgument(format!(
            "beta must be >= 0, got {beta}"
        )));
    }
    let n = l.ncols();
    if n == 0 {
        return Ok(beta);
    }
    let mut r = rng::stream(seed, 0x1a_9c);
    let start = rng::normal_vec(&mut r, n);
    let probe = rng::normal_vec(&mut r, n);
    let lp = l.apply(&probe);
    let lt = l.apply_adjoint(&probe);
    let a = (&lp - &lt).norm() / lp.norm().max(f64::MIN_POSITIVE);
    if a > 1e-8 {
        return Err(EicsError::NotSymmetric(a));
    }
    let t = lanczos::lanczos(|x| l.apply(x), &start, steps, Some(&mut r));
    let (values, _) = t.eigen();
    Ok(first_above_floor(values.into_iter()) + beta)
}

/// λ2 diagnostic for a circuit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lambda2Report {
    pub lambda2: f64,
    pub beta: f64,
    pub connected: bool,
    pub weighting: WeightScheme,
    pub edge_operator_norms: Vec<f64>,
    pub edge_weights: Vec<f64>,
}

/// λ2 of the weighted Laplacian. A disconnected 1-skeleton has no gap
/// between components, so it reports `beta` (zero when unregularized).
pub fn lambda2(circuit: &Circuit, weighting: &EdgeWeighting, beta: f64) -> Result<Lambda2Report> {
    circuit.ensure_valid()?;
    let connected = circuit.is_weakly_connected();
    let weights = edge_weights(circuit, weighting)?;
    let value = if !connected {
        if beta < 0.0 {
            return Err(EicsError::InvalidArgument(format!(
                "beta must be >= 0, got {beta}"
            )));
        }
        beta
    } else if circuit.state_dim() <= DENSE_GUARD {
        spectral_gap(&sheaf_laplacian(circuit, weighting)?, beta)?
    } else {
        let op = laplacian_operator(circuit, weighting)?;
        spectral_gap_operator(&op, beta, circuit.state_dim(), 0)?
    };
    Ok(Lambda2Report {
        lambda2: value,
        beta,
        connected,
        weighting: weighting.scheme,
        edge_operator_norms: edge_operator_norms(circuit),
        edge_weights: weights,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    /// `‖ŝ(a, Cη) − ŝ(a)‖`
    pub deviation: f64,
    /// `γ ‖η‖ / λ2`
    pub bound: f64,
    /// `deviation / bound`, 0 when the bound is 0
    pub ratio: f64,
    pub gamma: f64,
    pub lambda2: f64,
    pub perturbed_section: Cochain0,
}

/// Empirical check of the first stability inequality.
///
/// The perturbation `η` enters the circuit through `coupling` as a node
/// load `f = Cη`. The loaded section is the equilibrium
/// `ŝ(a, f) = P_ker a + (L + β)⁺ f`, with the pseudoinverse taken on the
/// complement of `ker L`, so `ŝ(a, 0)` is the least-squares section.
/// `gamma` defaults to the spectral norm of the coupling.
pub fn stability_bound_check(
    circuit: &Circuit,
    a: &ActivationState,
    coupling: &LinearMap,
    eta: &DVector<f64>,
    gamma: Option<f64>,
    weighting: &EdgeWeighting,
    beta: f64,
) -> Result<StabilityReport> {
    circuit.ensure_valid()?;
    let n = circuit.state_dim();
    if coupling.shape() != (n, eta.len()) {
        return Err(EicsError::Shape {
            context: "coupling".into(),
            expected: (n, eta.len()),
            found: coupling.shape(),
        });
    }
    let gap = lambda2(circuit, weighting, beta)?.lambda2;
    if gap <= 0.0 {
        return Err(EicsError::ZeroSpectralGap);
    }
    let gamma = match gamma {
        Some(g) => g,
        None => coupling
            .to_dense()
            .singular_values()
            .iter()
            .copied()
            .fold(0.0, f64::max),
    };
    let (base, _) = least_squares_section(circuit, a)?;
    let l = sheaf_laplacian(circuit, weighting)?;
    let eig = SymmetricEigen::new(l);
    let f = coupling.apply(eta);
    let mut delta = DVector::zeros(n);
    for (i, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam > KERNEL_FLOOR {
            let v = eig.eigenvectors.column(i);
            delta.axpy(v.dot(&f) / (lam + beta), &v, 1.0);
        }
    }
    let deviation = delta.norm();
    let bound = gamma * eta.norm() / gap;
    let ratio = if bound == 0.0 { 0.0 } else { deviation / bound };
    let perturbed = base.stacked(circuit)? + delta;
    Ok(StabilityReport {
        deviation,
        bound,
        ratio,
        gamma,
        lambda2: gap,
        perturbed_section: NodeVectors::from_stacked(circuit, &perturbed),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{EdgeSpec, NodeSpec};
    use approx::assert_relative_eq;

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn single_identity_edge() -> Circuit {
        Circuit::new(
            vec![NodeSpec::new("u", 2), NodeSpec::new("v", 2)],
            vec![EdgeSpec::new("u", "v", DMatrix::<f64>::identity(2, 2))],
            ids(&["u"]),
            ids(&["v"]),
        )
    }

    fn path3() -> Circuit {
        let i = DMatrix::<f64>::identity(1, 1);
        Circuit::new(
            vec![
                NodeSpec::new("a", 1),
                NodeSpec::new("b", 1),
                NodeSpec::new("c", 1),
            ],
            vec![
                EdgeSpec::new("a", "b", i.clone()),
                EdgeSpec::new("b", "c", i),
            ],
            ids(&["a"]),
            ids(&["c"]),
        )
    }

    fn vecs(pairs: &[(&str, &[f64])]) -> NodeVectors {
        NodeVectors::from_pairs(pairs.iter().map(|(k, v)| (*k, DVector::from_row_slice(v))))
    }

    #[test]
    fn constant_assignment_is_a_global_section() {
        let c = path3();
        let s = vecs(&[("a", &[2.5]), ("b", &[2.5]), ("c", &[2.5])]);
        let (d, apps) = coboundary_apply(&c, &s).unwrap();
        assert!(d.is_zero());
        assert_eq!(apps, 2);
    }

    #[test]
    fn single_edge_residual() {
        let c = single_identity_edge();
        let s = vecs(&[("u", &[1.0, 0.0]), ("v", &[0.0, 0.0])]);
        let (d, _) = coboundary_apply(&c, &s).unwrap();
        assert_eq!(d.values[0], DVector::from_vec(vec![1.0, 0.0]));
        let rep = sheaf_inconsistency(&c, &s, 1e-8).unwrap();
        assert_eq!(rep.numerator_energy, 1.0);
        assert_eq!(rep.denominator_energy, 1.0);
        assert_relative_eq!(rep.c_sh, 1.0 / (1.0 + 1e-8), epsilon = 1e-15);
    }

    #[test]
    fn edgeless_circuit_is_degenerate() {
        let c = Circuit::new(
            vec![NodeSpec::new("x", 2)],
            vec![],
            ids(&["x"]),
            ids(&["x"]),
        );
        let rep = sheaf_inconsistency(&c, &vecs(&[("x", &[1.0, 1.0])]), 1e-8).unwrap();
        assert!(rep.degenerate);
        assert_eq!(rep.c_sh, 0.0);
    }

    #[test]
    fn nonpositive_epsilon_is_rejected() {
        let c = single_identity_edge();
        let s = vecs(&[("u", &[1.0, 0.0]), ("v", &[0.0, 0.0])]);
        assert!(sheaf_inconsistency(&c, &s, 0.0).is_err());
    }

    #[test]
    fn least_squares_on_single_edge_averages() {
        // oracle: I - D⁺D applied to the stacked state, with D = [I, -I]
        let c = single_identity_edge();
        let d = coboundary_matrix(&c).unwrap();
        let pinv = d.clone().pseudo_inverse(1e-12).unwrap();
        let x = DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0]);
        let oracle = &x - &pinv * (&d * &x);
        assert_relative_eq!(
            oracle,
            DVector::from_vec(vec![0.5, 0.0, 0.5, 0.0]),
            epsilon = 1e-12
        );

        let s = vecs(&[("u", &[1.0, 0.0]), ("v", &[0.0, 0.0])]);
        let (hat, residual) = least_squares_section(&c, &s).unwrap();
        assert_relative_eq!(hat.stacked(&c).unwrap(), oracle, epsilon = 1e-12);
        assert_relative_eq!(residual, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn least_squares_keeps_consistent_and_edgeless_states() {
        let c = path3();
        let s = vecs(&[("a", &[1.0]), ("b", &[1.0]), ("c", &[1.0])]);
        let (hat, r) = least_squares_section(&c, &s).unwrap();
        assert_relative_eq!(
            hat.stacked(&c).unwrap(),
            s.stacked(&c).unwrap(),
            epsilon = 1e-12
        );
        assert_eq!(r, 0.0);

        let c = Circuit::new(
            vec![NodeSpec::new("p", 1), NodeSpec::new("q", 1)],
            vec![],
            ids(&["p", "q"]),
            ids(&["p", "q"]),
        );
        let s = vecs(&[("p", &[3.0]), ("q", &[-1.0])]);
        assert_eq!(least_squares_section(&c, &s).unwrap().0, s);
    }

    #[test]
    fn cgnr_agrees_with_svd_projection() {
        let c = path3();
        let d = coboundary_matrix(&c).unwrap();
        let x = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let dense = row_space_projection(&d, &x).unwrap();
        let op = coboundary_operator(&c);
        let it = cgnr_min_norm(&op, &op.apply(&x), 100, 1e-15);
        assert_relative_eq!(dense, it, epsilon = 1e-10);
    }

    #[test]
    fn path_laplacian_spectrum() {
        let l = sheaf_laplacian(&path3(), &EdgeWeighting::unit()).unwrap();
        let mut ev: Vec<f64> = SymmetricEigen::new(l.clone())
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(f64::total_cmp);
        assert_relative_eq!(ev[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(ev[1], 1.0, epsilon = 1e-12);
        assert_relative_eq!(ev[2], 3.0, epsilon = 1e-12);
        assert_relative_eq!(spectral_gap(&l, 0.0).unwrap(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(spectral_gap(&l, 0.5).unwrap(), 1.5, epsilon = 1e-12);
    }

    #[test]
    fn spectral_gap_edge_cases() {
        assert_eq!(spectral_gap(&DMatrix::zeros(1, 1), 0.0).unwrap(), 0.0);
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(matches!(
            spectral_gap(&asym, 0.0),
            Err(EicsError::NotSymmetric(_))
        ));
    }

    #[test]
    fn lanczos_gap_matches_dense() {
        let c = path3();
        let l = sheaf_laplacian(&c, &EdgeWeighting::unit()).unwrap();
        let op = laplacian_operator(&c, &EdgeWeighting::unit()).unwrap();
        assert_relative_eq!(op.to_dense(), l, epsilon = 1e-12);
        let gap = spectral_gap_operator(&op, 0.25, 3, 7).unwrap();
        assert_relative_eq!(gap, 1.25, epsilon = 1e-9);
    }

    #[test]
    fn disconnected_circuit_reports_zero_gap() {
        let i = DMatrix::<f64>::identity(1, 1);
        let c = Circuit::new(
            vec![
                NodeSpec::new("a", 1),
                NodeSpec::new("b", 1),
                NodeSpec::new("c", 1),
            ],
            vec![EdgeSpec::new("a", "b", i)],
            ids(&["a", "c"]),
            ids(&["b", "c"]),
        );
        let rep = lambda2(&c, &EdgeWeighting::unit(), 0.0).unwrap();
        assert!(!rep.connected);
        assert_eq!(rep.lambda2, 0.0);
    }

    #[test]
    fn inverse_norm_weights_normalize_maps() {
        let m = crate::rng::normal_matrix(&mut crate::rng::stream(4, 0), 3, 3) * 5.0;
        let c = Circuit::new(
            vec![NodeSpec::new("u", 3), NodeSpec::new("v", 3)],
            vec![EdgeSpec::new("u", "v", m.clone())],
            ids(&["u"]),
            ids(&["v"]),
        );
        let w = edge_weights(&c, &EdgeWeighting::inverse_operator_norm()).unwrap();
        let smax = m.singular_values().max();
        assert_relative_eq!(w[0] * smax * smax, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn stability_with_zero_perturbation() {
        let c = path3();
        let s = vecs(&[("a", &[1.0]), ("b", &[0.0]), ("c", &[2.0])]);
        let coupling = LinearMap::identity(3);
        let rep = stability_bound_check(
            &c,
            &s,
            &coupling,
            &DVector::zeros(3),
            None,
            &EdgeWeighting::unit(),
            0.0,
        )
        .unwrap();
        assert_eq!(rep.deviation, 0.0);
        assert_eq!(rep.ratio, 0.0);
    }

    #[test]
    fn stability_deviation_is_linear_in_eta() {
        let c = path3();
        let s = vecs(&[("a", &[1.0]), ("b", &[0.0]), ("c", &[2.0])]);
        let coupling = LinearMap::dense(DMatrix::from_row_slice(
            3,
            2,
            &[1.0, 0.0, 0.5, 1.0, 0.0, -1.0],
        ));
        let eta = DVector::from_vec(vec![0.3, -0.2]);
        let w = EdgeWeighting::unit();
        let one = stability_bound_check(&c, &s, &coupling, &eta, None, &w, 0.0).unwrap();
        let two = stability_bound_check(&c, &s, &coupling, &(&eta * 2.0), None, &w, 0.0).unwrap();
        assert_relative_eq!(two.deviation, 2.0 * one.deviation, epsilon = 1e-14);
        assert!(one.ratio <= 1.0 + 1e-8);
    }

    #[test]
    fn stability_requires_a_gap() {
        let c = Circuit::new(
            vec![NodeSpec::new("p", 1), NodeSpec::new("q", 1)],
            vec![],
            ids(&["p", "q"]),
            ids(&["p", "q"]),
        );
        let s = vecs(&[("p", &[1.0]), ("q", &[1.0])]);
        let r = stability_bound_check(
            &c,
            &s,
            &LinearMap::identity(2),
            &DVector::from_vec(vec![1.0, 0.0]),
            None,
            &EdgeWeighting::unit(),
            0.0,
        );
        assert!(matches!(r, Err(EicsError::ZeroSpectralGap)));
    }
}
