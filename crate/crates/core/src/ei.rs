//! Gaussian effective-information proxy.
//!
//! For a linearized map `J` driven by isotropic Gaussian interventions with
//! signal-to-noise scale `alpha`, the mutual information between input and
//! output is `½ log det(I + α JᵀJ)` nats. Emergence compares the macro map
//! against the sum over parts.
//!
//! Two evaluation modes are available:
//!
//! * **exact**: singular values (dense) or a symmetric eigensolve of the
//!   Gram matrix (operators), with a Cholesky fallback.
//! * **fast**: stochastic Lanczos quadrature using Rademacher probes. Only
//!   forward and adjoint products of `J` are needed.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::circuit::{circuit_jacobian, part_jacobian, Circuit, Partition};
use crate::error::{EicsError, Result};
use crate::lanczos;
use crate::linear_map::{LinearMap, POWER_ITERATIONS, POWER_TOLERANCE};
use crate::rng;

const EIGEN_LIMIT: usize = 512;
const LOW_CONFIDENCE: f64 = 0.25;
const SMALL_ALPHA_GUARD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EiMode {
    #[default]
    Exact,
    Fast,
}

/// Which map stands for the whole circuit in the emergence difference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MacroMap {
    /// Macro-Jacobian from the declared circuit inputs to its outputs.
    #[default]
    CircuitIo,
    /// Sum of the part Jacobians (parallel branches with shared endpoints).
    PartSum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EiConfig {
    pub alpha: f64,
    pub epsilon: f64,
    pub mode: EiMode,
    pub probes_part: usize,
    pub probes_macro: usize,
    pub lanczos_steps: usize,
    pub seed: u64,
    #[serde(default)]
    pub macro_map: MacroMap,
}

impl Default for EiConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            epsilon: 1e-8,
            mode: EiMode::Exact,
            probes_part: 6,
            probes_macro: 10,
            lanczos_steps: 32,
            seed: 0,
            macro_map: MacroMap::CircuitIo,
        }
    }
}

impl EiConfig {
    pub fn check(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(EicsError::InvalidArgument(format!(
                "alpha must be > 0, got {}",
                self.alpha
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(EicsError::InvalidArgument(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        if self.probes_part == 0 || self.probes_macro == 0 || self.lanczos_steps == 0 {
            return Err(EicsError::InvalidArgument(
                "probe counts and lanczos steps must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// How a single log-det term is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Evaluation {
    Exact,
    Fast {
        probes: usize,
        lanczos_steps: usize,
        seed: u64,
        stream: u64,
    },
}

/// One EI value in nats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EiValue {
    pub nats: f64,
    /// Standard error of a stochastic estimate; `None` in exact mode or with
    /// a single probe.
    pub std_error: Option<f64>,
    pub probes: usize,
    /// Standard error above 25% of the estimate (or undefined).
    pub low_confidence: bool,
}

impl EiValue {
    fn exact(nats: f64) -> Self {
        Self {
            nats,
            std_error: None,
            probes: 0,
            low_confidence: false,
        }
    }
}

/// `½ Σ log(1 + α σ_i²)` from singular values.
fn from_singular_values(sv: impl Iterator<Item = f64>, alpha: f64) -> Result<f64> {
    let mut total = 0.0;
    for s in sv {
        if !s.is_finite() {
            return Err(EicsError::Numeric("non-finite singular value".into()));
        }
        total += (alpha * s * s).ln_1p();
    }
    Ok(0.5 * total)
}

fn singular_values(j: &LinearMap) -> Result<DVector<f64>> {
    let m = j.to_dense();
    if m.iter().any(|x| !x.is_finite()) {
        return Err(EicsError::Numeric("map has non-finite entries".into()));
    }
    if m.nrows() == 0 || m.ncols() == 0 {
        return Ok(DVector::zeros(0));
    }
    Ok(m.singular_values())
}

/// `I + α JᵀJ` or `I + α JJᵀ`, whichever is smaller, built from products.
fn gram(j: &LinearMap, alpha: f64) -> DMatrix<f64> {
    let (r, c) = j.shape();
    if c <= r {
        let basis = DMatrix::identity(c, c);
        let jm = j.apply_matrix(&basis);
        DMatrix::identity(c, c) + jm.tr_mul(&jm) * alpha
    } else {
        let mut jt = DMatrix::zeros(c, r);
        for i in 0..r {
            let mut e = DVector::zeros(r);
            e[i] = 1.0;
            jt.set_column(i, &j.apply_adjoint(&e));
        }
        DMatrix::identity(r, r) + jt.tr_mul(&jt) * alpha
    }
}

fn logdet_spd(g: DMatrix<f64>) -> Result<f64> {
    if g.iter().any(|x| !x.is_finite()) {
        return Err(EicsError::Numeric(
            "Gram matrix has non-finite entries".into(),
        ));
    }
    if g.nrows() < EIGEN_LIMIT {
        let eig = SymmetricEigen::new(g.clone());
        if eig.eigenvalues.iter().all(|&l| l.is_finite() && l > 0.0) {
            return Ok(eig.eigenvalues.iter().map(|l| l.ln()).sum());
        }
    }
    let chol =
        Cholesky::new(g).ok_or_else(|| EicsError::Numeric("Cholesky of I + αJᵀJ failed".into()))?;
    Ok(2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

fn exact_ei(j: &LinearMap, alpha: f64) -> Result<f64> {
    match j {
        LinearMap::Dense(_) => from_singular_values(singular_values(j)?.iter().copied(), alpha),
        LinearMap::Operator(_) => {
            if j.nrows() == 0 || j.ncols() == 0 {
                return Ok(0.0);
            }
            Ok(0.5 * logdet_spd(gram(j, alpha))?)
        }
    }
}

/// Stochastic Lanczos quadrature estimate of `½ log det(I + α JᵀJ)`.
fn fast_ei(
    j: &LinearMap,
    alpha: f64,
    probes: usize,
    steps: usize,
    seed: u64,
    stream: u64,
) -> Result<EiValue> {
    let (r, c) = j.shape();
    if r == 0 || c == 0 {
        return Ok(EiValue {
            nats: 0.0,
            std_error: Some(0.0),
            probes,
            low_confidence: false,
        });
    }
    let wide = c > r;
    let n = if wide { r } else { c };
    let op = |x: &DVector<f64>| -> DVector<f64> {
        if wide {
            x + j.apply(&j.apply_adjoint(x)) * alpha
        } else {
            x + j.apply_adjoint(&j.apply(x)) * alpha
        }
    };
    let mut g = rng::stream(seed, stream);
    let mut samples = Vec::with_capacity(probes);
    for _ in 0..probes {
        let z = rng::rademacher_vec(&mut g, n);
        let t = lanczos::lanczos(op, &z, steps, None);
        let (theta, first) = t.eigen();
        let mut q = 0.0;
        for (th, w) in theta.iter().zip(&first) {
            if !th.is_finite() {
                return Err(EicsError::Numeric("non-finite Ritz value".into()));
            }
            // Ritz values of an SPD operator >= I; clamp rounding below 1
            q += w * w * th.max(1.0).ln();
        }
        samples.push(0.5 * z.norm_squared() * q);
    }
    let p = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / p;
    let std_error = if probes > 1 {
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (p - 1.0);
        Some((var / p).sqrt())
    } else {
        None
    };
    let low_confidence = match std_error {
        Some(se) => se > LOW_CONFIDENCE * mean.abs(),
        None => true,
    };
    Ok(EiValue {
        nats: mean,
        std_error,
        probes,
        low_confidence,
    })
}

/// `½ log det(I + α JᵀJ)` in nats.
pub fn ei_gaussian(j: &LinearMap, alpha: f64, how: Evaluation) -> Result<EiValue> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(EicsError::InvalidArgument(format!(
            "alpha must be > 0, got {alpha}"
        )));
    }
    match how {
        Evaluation::Exact => Ok(EiValue::exact(exact_ei(j, alpha)?)),
        Evaluation::Fast {
            probes,
            lanczos_steps,
            seed,
            stream,
        } => {
            if probes == 0 || lanczos_steps == 0 {
                return Err(EicsError::InvalidArgument(
                    "fast mode needs probes >= 1 and steps >= 1".into(),
                ));
            }
            fast_ei(j, alpha, probes, lanczos_steps, seed, stream)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmallAlpha {
    pub nats: f64,
    pub sigma_max: f64,
    /// False when `α σ_max² >= 0.1`; the value is still returned.
    pub guard_ok: bool,
}

/// First-order approximation `(α/2) ‖J‖_F²`.
///
/// Operators use a Hutchinson estimate of `tr(JᵀJ)` with `probes`
/// Rademacher vectors.
pub fn ei_small_alpha(j: &LinearMap, alpha: f64, probes: usize, seed: u64) -> Result<SmallAlpha> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(EicsError::InvalidArgument(format!(
            "alpha must be > 0, got {alpha}"
        )));
    }
    let frob = match j {
        LinearMap::Dense(m) => m.norm_squared(),
        LinearMap::Operator(_) => {
            let probes = probes.max(1);
            let mut g = rng::stream(seed, 0x5a_11);
            let total: f64 = (0..probes)
                .map(|_| {
                    j.apply(&rng::rademacher_vec(&mut g, j.ncols()))
                        .norm_squared()
                })
                .sum();
            total / probes as f64
        }
    };
    let sigma_max = j.operator_norm(POWER_ITERATIONS, POWER_TOLERANCE, seed);
    Ok(SmallAlpha {
        nats: 0.5 * alpha * frob,
        sigma_max,
        guard_ok: alpha * sigma_max * sigma_max < SMALL_ALPHA_GUARD,
    })
}

/// `d/dα ½ log det(I + α JᵀJ) = ½ tr[(I + α JᵀJ)⁻¹ JᵀJ]`.
pub fn ei_alpha_sensitivity(j: &LinearMap, alpha: f64) -> Result<f64> {
    if alpha < 0.0 || !alpha.is_finite() {
        return Err(EicsError::InvalidArgument(format!(
            "alpha must be >= 0, got {alpha}"
        )));
    }
    let sv = singular_values(j)?;
    Ok(0.5
        * sv.iter()
            .map(|s| s * s / (1.0 + alpha * s * s))
            .sum::<f64>())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaSelection {
    pub alpha: f64,
    pub ei: f64,
    pub iterations: usize,
}

/// Finds `α` with `ei_gaussian(J, α)` inside `[low, high]` by bisection on
/// `log α`.
pub fn select_alpha(j: &LinearMap, low: f64, high: f64) -> Result<AlphaSelection> {
    if !(low > 0.0 && low <= high && high.is_finite()) {
        return Err(EicsError::InvalidArgument(format!(
            "target range must satisfy 0 < low <= high, got [{low}, {high}]"
        )));
    }
    let sv: Vec<f64> = singular_values(j)?.iter().copied().collect();
    if sv.iter().all(|&s| s == 0.0) {
        return Err(EicsError::Numeric(
            "EI is identically zero for a zero map; no alpha reaches the target".into(),
        ));
    }
    let ei = |a: f64| 0.5 * sv.iter().map(|s| (a * s * s).ln_1p()).sum::<f64>();

    let mut lo = 0.0f64; // log alpha
    let mut hi = 0.0f64;
    while ei(hi.exp()) < low {
        hi += 2.0;
        if hi > 690.0 {
            return Err(EicsError::Numeric(format!(
                "target {low} not reached before alpha overflow (EI = {})",
                ei(hi.exp())
            )));
        }
    }
    while ei(lo.exp()) > high {
        lo -= 2.0;
        if lo < -690.0 {
            return Err(EicsError::Numeric(format!(
                "target {high} below EI at alpha underflow"
            )));
        }
    }
    let mut mid = 0.5 * (lo + hi);
    let mut value = ei(mid.exp());
    let mut iterations = 0;
    for it in 0..100 {
        iterations = it + 1;
        mid = 0.5 * (lo + hi);
        value = ei(mid.exp());
        if low < high && value >= low && value <= high {
            break;
        }
        if value < low {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(AlphaSelection {
        alpha: mid.exp(),
        ei: value,
        iterations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EiReport {
    pub ei_macro: f64,
    pub ei_parts: Vec<f64>,
    pub delta_ei: f64,
    pub delta_ei_plus: f64,
    pub normalized: f64,
    pub alpha: f64,
    pub epsilon: f64,
    pub mode: EiMode,
    pub macro_map: MacroMap,
    pub macro_reachable: bool,
    pub probes_part: Option<usize>,
    pub probes_macro: Option<usize>,
    pub macro_std_error: Option<f64>,
    pub parts_std_error: Option<Vec<f64>>,
    /// Standard errors of the macro and part terms summed in quadrature.
    pub delta_std_error: Option<f64>,
    pub low_confidence: bool,
}

/// Emergence of the whole over its parts, with positive part and
/// normalization `ΔEI⁺ / (ε + EI_macro)`.
pub fn delta_ei(circuit: &Circuit, partition: &Partition, config: &EiConfig) -> Result<EiReport> {
    config.check()?;
    circuit.ensure_valid()?;
    partition.validate(circuit)?;

    let part_maps = partition
        .parts
        .iter()
        .map(|p| part_jacobian(circuit, p))
        .collect::<Result<Vec<_>>>()?;
    let (macro_map, reachable) = match config.macro_map {
        MacroMap::CircuitIo => {
            let m = circuit_jacobian(circuit)?;
            (m.map, m.reachable)
        }
        MacroMap::PartSum => {
            let shape = part_maps[0].shape();
            if let Some(bad) = part_maps.iter().position(|m| m.shape() != shape) {
                return Err(EicsError::Shape {
                    context: format!("part {bad} in part-sum macro map"),
                    expected: shape,
                    found: part_maps[bad].shape(),
                });
            }
            (LinearMap::sum(&part_maps), true)
        }
    };

    let how = |probes: usize, stream: u64| match config.mode {
        EiMode::Exact => Evaluation::Exact,
        EiMode::Fast => Evaluation::Fast {
            probes,
            lanczos_steps: config.lanczos_steps,
            seed: config.seed,
            stream,
        },
    };
    let macro_val = ei_gaussian(&macro_map, config.alpha, how(config.probes_macro, 0))?;
    let part_vals = part_maps
        .iter()
        .enumerate()
        .map(|(i, m)| ei_gaussian(m, config.alpha, how(config.probes_part, i as u64 + 1)))
        .collect::<Result<Vec<_>>>()?;

    let ei_parts: Vec<f64> = part_vals.iter().map(|v| v.nats).collect();
    let delta = macro_val.nats - ei_parts.iter().sum::<f64>();
    let plus = delta.max(0.0);
    let normalized = plus / (config.epsilon + macro_val.nats);

    let fast = config.mode == EiMode::Fast;
    let se = |v: &EiValue| v.std_error.unwrap_or(f64::NAN);
    let parts_std_error = fast.then(|| part_vals.iter().map(se).collect::<Vec<_>>());
    let delta_std_error = fast.then(|| {
        (se(&macro_val).powi(2) + part_vals.iter().map(|v| se(v).powi(2)).sum::<f64>()).sqrt()
    });
    Ok(EiReport {
        ei_macro: macro_val.nats,
        ei_parts,
        delta_ei: delta,
        delta_ei_plus: plus,
        normalized,
        alpha: config.alpha,
        epsilon: config.epsilon,
        mode: config.mode,
        macro_map: config.macro_map,
        macro_reachable: reachable,
        probes_part: fast.then_some(config.probes_part),
        probes_macro: fast.then_some(config.probes_macro),
        macro_std_error: if fast { macro_val.std_error } else { None },
        parts_std_error,
        delta_std_error,
        low_confidence: macro_val.low_confidence || part_vals.iter().any(|v| v.low_confidence),
    })
}
