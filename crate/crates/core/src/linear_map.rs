//! Dense and matrix-free linear maps.
//!
//! Edge restriction maps and composed Jacobians are carried as
//! [`LinearMap`]s. A map is either an explicit dense matrix or an operator
//! that only exposes forward (`apply`, a JVP) and adjoint (`apply_adjoint`,
//! a VJP) products. Every routine in the crate accepts both forms.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::rng;

/// A matrix-free linear operator `R^ncols -> R^nrows`.
pub trait LinearOperator: Send + Sync {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    fn apply(&self, x: &DVector<f64>) -> DVector<f64>;
    fn apply_adjoint(&self, y: &DVector<f64>) -> DVector<f64>;
}

type VecFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;

/// Operator built from a pair of closures.
pub struct FnOperator {
    rows: usize,
    cols: usize,
    apply: Box<VecFn>,
    adjoint: Box<VecFn>,
}

impl FnOperator {
    pub fn new<F, G>(rows: usize, cols: usize, apply: F, adjoint: G) -> Self
    where
        F: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        G: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        Self {
            rows,
            cols,
            apply: Box::new(apply),
            adjoint: Box::new(adjoint),
        }
    }
}

impl LinearOperator for FnOperator {
    fn nrows(&self) -> usize {
        self.rows
    }
    fn ncols(&self) -> usize {
        self.cols
    }
    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.apply)(x)
    }
    fn apply_adjoint(&self, y: &DVector<f64>) -> DVector<f64> {
        (self.adjoint)(y)
    }
}

#[derive(Clone)]
pub enum LinearMap {
    Dense(DMatrix<f64>),
    Operator(Arc<dyn LinearOperator>),
}

impl fmt::Debug for LinearMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LinearMap::Dense(m) => write!(f, "Dense({}x{})", m.nrows(), m.ncols()),
            LinearMap::Operator(op) => write!(f, "Operator({}x{})", op.nrows(), op.ncols()),
        }
    }
}

impl From<DMatrix<f64>> for LinearMap {
    fn from(m: DMatrix<f64>) -> Self {
        LinearMap::Dense(m)
    }
}

impl LinearMap {
    pub fn dense(m: DMatrix<f64>) -> Self {
        LinearMap::Dense(m)
    }

    pub fn operator<O: LinearOperator + 'static>(op: O) -> Self {
        LinearMap::Operator(Arc::new(op))
    }

    pub fn from_fn<F, G>(rows: usize, cols: usize, apply: F, adjoint: G) -> Self
    where
        F: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        G: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        Self::operator(FnOperator::new(rows, cols, apply, adjoint))
    }

    /// Wraps a dense matrix as an opaque operator. Mostly useful for testing
    /// that the matrix-free code paths agree with the dense ones.
    pub fn dense_as_operator(m: DMatrix<f64>) -> Self {
        let mt = m.transpose();
        let (r, c) = m.shape();
        Self::from_fn(r, c, move |x| &m * x, move |y| &mt * y)
    }

    pub fn identity(n: usize) -> Self {
        LinearMap::Dense(DMatrix::identity(n, n))
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        LinearMap::Dense(DMatrix::zeros(rows, cols))
    }

    pub fn nrows(&self) -> usize {
        match self {
            LinearMap::Dense(m) => m.nrows(),
            LinearMap::Operator(op) => op.nrows(),
        }
    }

    pub fn ncols(&self) -> usize {
        match self {
            LinearMap::Dense(m) => m.ncols(),
            LinearMap::Operator(op) => op.ncols(),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nrows(), self.ncols())
    }

    pub fn is_dense(&self) -> bool {
        matches!(self, LinearMap::Dense(_))
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.ncols(), "apply: input length mismatch");
        match self {
            LinearMap::Dense(m) => m * x,
            LinearMap::Operator(op) => op.apply(x),
        }
    }

    pub fn apply_adjoint(&self, y: &DVector<f64>) -> DVector<f64> {
        assert_eq!(
            y.len(),
            self.nrows(),
            "apply_adjoint: input length mismatch"
        );
        match self {
            LinearMap::Dense(m) => m.tr_mul(y),
            LinearMap::Operator(op) => op.apply_adjoint(y),
        }
    }

    /// `self * x` for a matrix `x`, column by column for operators.
    pub fn apply_matrix(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(x.nrows(), self.ncols(), "apply_matrix: shape mismatch");
        match self {
            LinearMap::Dense(m) => m * x,
            LinearMap::Operator(op) => {
                let mut out = DMatrix::zeros(op.nrows(), x.ncols());
                for j in 0..x.ncols() {
                    let col: DVector<f64> = x.column(j).into_owned();
                    out.set_column(j, &op.apply(&col));
                }
                out
            }
        }
    }

    /// Materializes the map, applying operators to the unit basis.
    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            LinearMap::Dense(m) => m.clone(),
            LinearMap::Operator(_) => {
                self.apply_matrix(&DMatrix::identity(self.ncols(), self.ncols()))
            }
        }
    }

    pub fn frobenius_sq(&self) -> f64 {
        match self {
            LinearMap::Dense(m) => m.norm_squared(),
            LinearMap::Operator(_) => self.to_dense().norm_squared(),
        }
    }

    pub fn scaled(&self, c: f64) -> LinearMap {
        match self {
            LinearMap::Dense(m) => LinearMap::Dense(m * c),
            LinearMap::Operator(op) => {
                let a = Arc::clone(op);
                let b = Arc::clone(op);
                LinearMap::from_fn(
                    op.nrows(),
                    op.ncols(),
                    move |x| a.apply(x) * c,
                    move |y| b.apply_adjoint(y) * c,
                )
            }
        }
    }

    /// Vertical stack `[A; B; ...]` of maps sharing a domain.
    pub fn vstack(maps: &[LinearMap]) -> LinearMap {
        assert!(!maps.is_empty(), "vstack of zero maps");
        let cols = maps[0].ncols();
        assert!(
            maps.iter().all(|m| m.ncols() == cols),
            "vstack: domain mismatch"
        );
        let rows: usize = maps.iter().map(|m| m.nrows()).sum();
        if maps.iter().all(|m| m.is_dense()) {
            let mut out = DMatrix::zeros(rows, cols);
            let mut off = 0;
            for m in maps {
                if let LinearMap::Dense(d) = m {
                    out.view_mut((off, 0), d.shape()).copy_from(d);
                    off += d.nrows();
                }
            }
            return LinearMap::Dense(out);
        }
        let fwd = maps.to_vec();
        let adj = maps.to_vec();
        LinearMap::from_fn(
            rows,
            cols,
            move |x| {
                let parts: Vec<DVector<f64>> = fwd.iter().map(|m| m.apply(x)).collect();
                concat(&parts)
            },
            move |y| {
                let mut out = DVector::zeros(cols);
                let mut off = 0;
                for m in &adj {
                    let seg = y.rows(off, m.nrows()).into_owned();
                    out += m.apply_adjoint(&seg);
                    off += m.nrows();
                }
                out
            },
        )
    }

    /// Horizontal concatenation `[A | B | ...]` of maps sharing a codomain.
    pub fn hstack(maps: &[LinearMap]) -> LinearMap {
        assert!(!maps.is_empty(), "hstack of zero maps");
        let rows = maps[0].nrows();
        assert!(
            maps.iter().all(|m| m.nrows() == rows),
            "hstack: codomain mismatch"
        );
        let cols: usize = maps.iter().map(|m| m.ncols()).sum();
        if maps.iter().all(|m| m.is_dense()) {
            let mut out = DMatrix::zeros(rows, cols);
            let mut off = 0;
            for m in maps {
                if let LinearMap::Dense(d) = m {
                    out.view_mut((0, off), d.shape()).copy_from(d);
                    off += d.ncols();
                }
            }
            return LinearMap::Dense(out);
        }
        let fwd = maps.to_vec();
        let adj = maps.to_vec();
        LinearMap::from_fn(
            rows,
            cols,
            move |x| {
                let mut out = DVector::zeros(rows);
                let mut off = 0;
                for m in &fwd {
                    let seg = x.rows(off, m.ncols()).into_owned();
                    out += m.apply(&seg);
                    off += m.ncols();
                }
                out
            },
            move |y| {
                let parts: Vec<DVector<f64>> = adj.iter().map(|m| m.apply_adjoint(y)).collect();
                concat(&parts)
            },
        )
    }

    /// Sum of maps with identical shapes.
    pub fn sum(maps: &[LinearMap]) -> LinearMap {
        assert!(!maps.is_empty(), "sum of zero maps");
        let shape = maps[0].shape();
        assert!(
            maps.iter().all(|m| m.shape() == shape),
            "sum: shape mismatch"
        );
        if maps.iter().all(|m| m.is_dense()) {
            let mut out = DMatrix::zeros(shape.0, shape.1);
            for m in maps {
                if let LinearMap::Dense(d) = m {
                    out += d;
                }
            }
            return LinearMap::Dense(out);
        }
        let fwd = maps.to_vec();
        let adj = maps.to_vec();
        LinearMap::from_fn(
            shape.0,
            shape.1,
            move |x| {
                fwd.iter()
                    .fold(DVector::zeros(shape.0), |acc, m| acc + m.apply(x))
            },
            move |y| {
                adj.iter()
                    .fold(DVector::zeros(shape.1), |acc, m| acc + m.apply_adjoint(y))
            },
        )
    }

    /// Largest relative violation of `<Ax, y> = <x, A^T y>` over random probes.
    pub fn adjoint_mismatch(&self, probes: usize, seed: u64) -> f64 {
        let mut rng = rng::stream(seed, 0xad70);
        let mut worst: f64 = 0.0;
        for _ in 0..probes {
            let x = rng::normal_vec(&mut rng, self.ncols());
            let y = rng::normal_vec(&mut rng, self.nrows());
            let ax = self.apply(&x);
            let aty = self.apply_adjoint(&y);
            let lhs = ax.dot(&y);
            let rhs = x.dot(&aty);
            let scale = (ax.norm() * y.norm())
                .max(x.norm() * aty.norm())
                .max(f64::MIN_POSITIVE);
            worst = worst.max((lhs - rhs).abs() / scale);
        }
        worst
    }

    /// Largest singular value. Dense maps up to `EXACT_NORM_DIM` on the
    /// smaller side use an SVD; everything else uses power iteration on
    /// `A^T A`, stopping after `max_iter` steps or when the estimate changes
    /// by less than `tol` relative.
    pub fn operator_norm(&self, max_iter: usize, tol: f64, seed: u64) -> f64 {
        let n = self.ncols();
        if n == 0 || self.nrows() == 0 {
            return 0.0;
        }
        if let LinearMap::Dense(m) = self {
            if m.nrows().min(n) <= EXACT_NORM_DIM {
                return m.singular_values().max();
            }
        }
        let mut rng = rng::stream(seed, 0x0b70);
        let mut v = rng::normal_vec(&mut rng, n);
        let nv = v.norm();
        if nv == 0.0 {
            return 0.0;
        }
        v /= nv;
        let mut sigma = 0.0;
        for _ in 0..max_iter {
            let w = self.apply_adjoint(&self.apply(&v));
            let nw = w.norm();
            if nw == 0.0 {
                return 0.0;
            }
            let next = nw.sqrt();
            v = w / nw;
            if sigma > 0.0 && ((next - sigma) / next).abs() < tol {
                return next;
            }
            sigma = next;
        }
        // one more Rayleigh step for the final estimate
        self.apply(&v).norm().max(sigma)
    }
}

/// Power-iteration settings used for edge operator norms.
pub const POWER_ITERATIONS: usize = 50;
pub const POWER_TOLERANCE: f64 = 1e-10;
/// Largest smaller-side dimension for which dense norms are exact.
pub const EXACT_NORM_DIM: usize = 256;

pub(crate) fn concat(parts: &[DVector<f64>]) -> DVector<f64> {
    let n: usize = parts.iter().map(|p| p.len()).sum();
    let mut out = DVector::zeros(n);
    let mut off = 0;
    for p in parts {
        out.rows_mut(off, p.len()).copy_from(p);
        off += p.len();
    }
    out
}
