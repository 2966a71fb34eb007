//! Symmetric Lanczos tridiagonalization with full reorthogonalization.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::rng::{self, StreamRng};

/// Output of `k` Lanczos steps started from a unit vector `q0`.
pub(crate) struct Tridiagonal {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

impl Tridiagonal {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    /// Ritz values and the first component of each Ritz vector.
    pub fn eigen(&self) -> (Vec<f64>, Vec<f64>) {
        let k = self.len();
        let mut t = DMatrix::zeros(k, k);
        for i in 0..k {
            t[(i, i)] = self.diag[i];
            if i + 1 < k {
                t[(i, i + 1)] = self.off[i];
                t[(i + 1, i)] = self.off[i];
            }
        }
        let eig = SymmetricEigen::new(t);
        let values = eig.eigenvalues.iter().copied().collect();
        let first = (0..k).map(|j| eig.eigenvectors[(0, j)]).collect();
        (values, first)
    }
}

/// Runs up to `steps` Lanczos iterations of the symmetric operator `op`.
///
/// Stops early on breakdown (an invariant subspace was found) unless
/// `restart` is set, in which case a fresh random direction orthogonal to the
/// current basis is drawn so the spectrum is explored further.
pub(crate) fn lanczos<F>(
    op: F,
    start: &DVector<f64>,
    steps: usize,
    restart: Option<&mut StreamRng>,
) -> Tridiagonal
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = start.len();
    let steps = steps.min(n);
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(steps);
    let mut diag = Vec::with_capacity(steps);
    let mut off: Vec<f64> = Vec::with_capacity(steps);
    let mut q = start / start.norm();
    let mut restart = restart;
    let breakdown = 1e-12;

    for j in 0..steps {
        let mut w = op(&q);
        let a = q.dot(&w);
        w.axpy(-a, &q, 1.0);
        if let Some(prev) = basis.last() {
            w.axpy(-off[j - 1], prev, 1.0);
        }
        basis.push(q.clone());
        diag.push(a);
        // two passes of classical Gram-Schmidt against the whole basis
        for _ in 0..2 {
            for b in &basis {
                let c = b.dot(&w);
                w.axpy(-c, b, 1.0);
            }
        }
        if j + 1 == steps {
            break;
        }
        let beta = w.norm();
        let scale = diag.iter().map(|d: &f64| d.abs()).fold(1e-300, f64::max);
        if beta <= breakdown * scale {
            match restart.as_deref_mut() {
                Some(rng) => {
                    let mut fresh = rng::normal_vec(rng, n);
                    for _ in 0..2 {
                        for b in &basis {
                            let c = b.dot(&fresh);
                            fresh.axpy(-c, b, 1.0);
                        }
                    }
                    let nf = fresh.norm();
                    if nf <= 1e-10 {
                        break;
                    }
                    off.push(0.0);
                    q = fresh / nf;
                }
                None => break,
            }
        } else {
            off.push(beta);
            q = w / beta;
        }
    }
    off.truncate(diag.len().saturating_sub(1));
    Tridiagonal { diag, off }
}
