//! Comparison baselines that ignore sheaf coupling.
//!
//! * EAC: mean Pearson correlation between the entries of `a_u` and `a_v`.
//! * EAR: mean residual of per-edge ridge least-squares maps fitted on a batch.

use nalgebra::{Cholesky, DMatrix};
use serde::{Deserialize, Serialize};

use crate::circuit::{ActivationState, Circuit};
use crate::error::{EicsError, Result};

/// Activation states for the same circuit over several samples.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ActivationBatch {
    pub samples: Vec<ActivationState>,
}

impl ActivationBatch {
    pub fn new(samples: Vec<ActivationState>) -> Self {
        Self { samples }
    }

    pub fn check_against(&self, circuit: &Circuit) -> Result<()> {
        if self.samples.is_empty() {
            return Err(EicsError::InvalidArgument("batch is empty".into()));
        }
        for (i, s) in self.samples.iter().enumerate() {
            s.check_against(circuit)
                .map_err(|e| EicsError::Activations(format!("sample {i}: {e}")))?;
        }
        Ok(())
    }

    /// Columns are samples: `dim(node) x N`.
    fn node_matrix(&self, id: &str, dim: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(dim, self.samples.len());
        for (j, s) in self.samples.iter().enumerate() {
            m.set_column(j, s.get(id).expect("checked batch"));
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EacReport {
    pub value: f64,
    pub per_edge: Vec<Option<f64>>,
    /// Edges with unequal or unit dimensions.
    pub skipped: Vec<usize>,
    /// Edges where one side has zero variance (counted as 0).
    pub zero_variance: Vec<usize>,
}

pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        None
    } else {
        Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
    }
}

/// Edge Activation Correlation.
pub fn eac(circuit: &Circuit, a: &ActivationState) -> Result<EacReport> {
    circuit.ensure_valid()?;
    a.check_against(circuit)?;
    let mut per_edge = Vec::with_capacity(circuit.edges().len());
    let mut skipped = Vec::new();
    let mut zero_variance = Vec::new();
    let mut total = 0.0;
    let mut used = 0usize;
    for (k, e) in circuit.edges().iter().enumerate() {
        let (u, v) = circuit.endpoints(k);
        let (du, dv) = (circuit.dim(u), circuit.dim(v));
        if du != dv || du < 2 {
            skipped.push(k);
            per_edge.push(None);
            continue;
        }
        let au = a.get(&e.src).expect("checked state");
        let av = a.get(&e.dst).expect("checked state");
        let r = match pearson(au.as_slice(), av.as_slice()) {
            Some(r) => r,
            None => {
                zero_variance.push(k);
                0.0
            }
        };
        per_edge.push(Some(r));
        total += r;
        used += 1;
    }
    if used == 0 {
        return Err(EicsError::InvalidArgument(
            "EAC undefined: every edge has unequal or unit dimensions".into(),
        ));
    }
    Ok(EacReport {
        value: total / used as f64,
        per_edge,
        skipped,
        zero_variance,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EarReport {
    pub value: f64,
    pub per_edge: Vec<f64>,
    pub ridge: Vec<f64>,
}

/// Default ridge `1e-8 · tr(A_u A_uᵀ) / dim`.
pub fn default_ridge(gram: &DMatrix<f64>) -> f64 {
    1e-8 * gram.trace() / gram.nrows() as f64
}

/// Edge Alignment Residual with in-sample ridge fits.
///
/// `ridge = None` uses [`default_ridge`] per edge; `Some(0.0)` demands
/// well-posed normal equations.
pub fn ear(circuit: &Circuit, batch: &ActivationBatch, ridge: Option<f64>) -> Result<EarReport> {
    circuit.ensure_valid()?;
    batch.check_against(circuit)?;
    if let Some(r) = ridge {
        if r < 0.0 || !r.is_finite() {
            return Err(EicsError::InvalidArgument(format!(
                "ridge must be >= 0, got {r}"
            )));
        }
    }
    let n = batch.samples.len() as f64;
    let mut per_edge = Vec::with_capacity(circuit.edges().len());
    let mut ridges = Vec::with_capacity(circuit.edges().len());
    for (k, e) in circuit.edges().iter().enumerate() {
        let (u, v) = circuit.endpoints(k);
        let au = batch.node_matrix(&e.src, circuit.dim(u));
        let av = batch.node_matrix(&e.dst, circuit.dim(v));
        let fitted = fit_edge(&au, &av, ridge).map_err(|msg| {
            EicsError::Numeric(format!("edge {k} ({} -> {}): {msg}", e.src, e.dst))
        })?;
        let residual = &fitted.0 * &au - &av;
        let mean_norm = residual.column_iter().map(|c| c.norm()).sum::<f64>() / n;
        per_edge.push(mean_norm);
        ridges.push(fitted.1);
    }
    let value = if per_edge.is_empty() {
        0.0
    } else {
        per_edge.iter().sum::<f64>() / per_edge.len() as f64
    };
    Ok(EarReport {
        value,
        per_edge,
        ridge: ridges,
    })
}

/// `ρ̂ = A_v A_uᵀ (A_u A_uᵀ + λ I)⁻¹` via Cholesky.
fn fit_edge(
    au: &DMatrix<f64>,
    av: &DMatrix<f64>,
    ridge: Option<f64>,
) -> std::result::Result<(DMatrix<f64>, f64), String> {
    let gram = au * au.transpose();
    let lambda = ridge.unwrap_or_else(|| default_ridge(&gram));
    let mut reg = gram;
    for i in 0..reg.nrows() {
        reg[(i, i)] += lambda;
    }
    let chol = Cholesky::new(reg)
        .ok_or_else(|| "normal equations are singular; use a ridge > 0".to_string())?;
    // solve (A_u A_uᵀ + λ) X = A_u A_vᵀ, then ρ̂ = Xᵀ
    let rhs = au * av.transpose();
    let x = chol.solve(&rhs);
    if x.iter().any(|v| !v.is_finite()) {
        return Err("normal equations are singular; use a ridge > 0".into());
    }
    Ok((x.transpose(), lambda))
}
