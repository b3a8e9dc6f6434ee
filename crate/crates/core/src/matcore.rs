//! Dense linear algebra helpers over `nalgebra`, Haar sampling and
//! reproducible random streams.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// ChaCha stream keyed by `(seed, stream)`. Streams with different ids are
/// independent, so parallel work can be split without sharing state.
#[derive(Clone, Debug)]
pub struct SeededRng {
    inner: ChaCha8Rng,
    seed: u64,
}

impl SeededRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        SeededRng { inner, seed }
    }

    /// Fresh stream derived from the same seed.
    pub fn fork(&self, stream: u64) -> Self {
        SeededRng::new(self.seed, stream)
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(self)
    }

    pub fn gaussian(&mut self, rows: usize, cols: usize) -> Mat {
        Mat::from_fn(rows, cols, |_, _| self.normal())
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }
    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the
/// column signs fixed by `sign(diag R)`.
pub fn haar_orthogonal(n: usize, rng: &mut SeededRng) -> Mat {
    let qr = rng.gaussian(n, n).qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

pub fn row_normalize(m: &Mat) -> Result<Mat> {
    let mut out = m.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        let norm = row.norm();
        if !(norm > 1e-300) {
            return Err(Error::DegenerateRow { row: i, norm });
        }
        row /= norm;
    }
    Ok(out)
}

pub fn check_unit_rows(b: &Mat, tol: f64) -> Result<()> {
    for (i, row) in b.row_iter().enumerate() {
        let norm = row.norm();
        if (norm - 1.0).abs() > tol {
            return Err(Error::NotUnitRow { row: i, norm });
        }
    }
    Ok(())
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues descending.
pub fn sym_eig(m: &Mat) -> (Vector, Mat) {
    let eig = SymmetricEigen::new(m.clone());
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals = Vector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let vecs = Mat::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (vals, vecs)
}

/// Spectral norm of a symmetric matrix.
pub fn sym_opnorm(m: &Mat) -> f64 {
    let vals = SymmetricEigen::new(m.clone()).eigenvalues;
    vals.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

pub fn frobenius(m: &Mat) -> f64 {
    m.norm()
}

pub fn gram(b: &Mat) -> Mat {
    b * b.transpose()
}

/// `B B^T - I`.
pub fn gram_defect(b: &Mat) -> Mat {
    let mut g = gram(b);
    for i in 0..g.nrows() {
        g[(i, i)] -= 1.0;
    }
    g
}

pub fn cholesky(m: &Mat) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    Cholesky::new(m.clone()).ok_or(Error::NotPositiveDefinite)
}

/// `log det` of a positive definite matrix via Cholesky.
pub fn logdet_pd(m: &Mat) -> Result<f64> {
    let c = cholesky(m)?;
    Ok(2.0 * c.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

/// `X` with `M X = R` for positive definite `M`.
pub fn spd_solve(m: &Mat, rhs: &Mat) -> Result<Mat> {
    Ok(cholesky(m)?.solve(rhs))
}

pub fn min_singular_value(m: &Mat) -> f64 {
    m.clone().singular_values().iter().fold(f64::INFINITY, |a, &v| a.min(v))
}

/// Least-squares line `y = a + b x`; returns `(a, b, r2)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (my - slope * mx, slope, r2)
}
