//! Weight-tied autoencoders that attain (or approach) the lower bounds.

use crate::activation::ActivationSeries;
use crate::bounds::{self, WaterFill};
use crate::matcore::{self, Mat, SeededRng};
use crate::risk::{Autoencoder, CovarianceModel};
use crate::{Error, Result};

/// `beta` minimizing the closed-form risk of `A = beta B^T`:
/// `c1 tr(B D B^T) / tr(B B^T f(B B^T))`.
pub fn beta_star_tied(b: &Mat, act: &ActivationSeries, cov: &CovarianceModel) -> Result<f64> {
    let gram = matcore::gram(b);
    let k = act.kernel_matrix(&gram)?;
    let denom = gram.component_mul(&k).sum();
    let dd = cov.diag();
    let num: f64 = b.row_iter().map(|r| r.iter().zip(dd.iter()).map(|(v, d)| v * v * d).sum::<f64>()).sum();
    Ok(act.c1() * num / denom)
}

/// `B` = first `n` rows of a Haar matrix, `A = (c1 / f(1)) B^T`. Exact
/// minimizer for `n <= d`.
pub fn orthogonal_minimizer(d: usize, n: usize, act: &ActivationSeries, rng: &mut SeededRng) -> Result<Autoencoder> {
    check_low_rate(d, n)?;
    orthogonal_minimizer_with_basis(d, n, act, &matcore::haar_orthogonal(d, rng))
}

pub fn orthogonal_minimizer_with_basis(d: usize, n: usize, act: &ActivationSeries, q: &Mat) -> Result<Autoencoder> {
    check_low_rate(d, n)?;
    if q.nrows() != d || q.ncols() != d {
        return Err(Error::Dimension(format!("basis must be {d}x{d}")));
    }
    let b = q.rows(0, n).into_owned();
    Ok(Autoencoder::weight_tied(b, act.c1() / act.f_at_one()))
}

fn check_low_rate(d: usize, n: usize) -> Result<()> {
    if n == 0 || n > d {
        return Err(Error::Regime(format!("orthogonal construction needs 1 <= n <= d (n = {n}, d = {d})")));
    }
    Ok(())
}

/// For `n > d`: the first `d` columns of a Haar `n x n` matrix, scaled by
/// `sqrt(n/d)`, row-normalized, with the optimal tied decoder.
pub fn highrate_construction(d: usize, n: usize, act: &ActivationSeries, rng: &mut SeededRng) -> Result<Autoencoder> {
    if n <= d {
        return Err(Error::Regime(format!("high-rate construction needs n > d (n = {n}, d = {d})")));
    }
    highrate_construction_with_basis(d, n, act, &matcore::haar_orthogonal(n, rng))
}

pub fn highrate_construction_with_basis(d: usize, n: usize, act: &ActivationSeries, u: &Mat) -> Result<Autoencoder> {
    if u.nrows() != n || u.ncols() != n {
        return Err(Error::Dimension(format!("basis must be {n}x{n}")));
    }
    let r = n as f64 / d as f64;
    let b_hat = u.columns(0, d) * r.sqrt();
    let b = matcore::row_normalize(&b_hat)?;
    let beta = beta_star_tied(&b, act, &CovarianceModel::identity(d))?;
    Ok(Autoencoder::weight_tied(b, beta))
}

#[derive(Clone, Debug)]
pub struct BlockConstruction {
    /// In the closed-form frame (`B` acts on whitened input).
    pub ae: Autoencoder,
    pub waterfill: WaterFill,
    /// Every block weight vanished (all variance sits in `D = 0` blocks); the
    /// decoder is zero and the encoder an arbitrary unit-row placeholder.
    pub trivial: bool,
}

/// Block `i` gets `s_i` fresh orthonormal directions of a shared Haar
/// matrix, its rows weighted by `sqrt(gamma_i / n)` with
/// `gamma_i = n beta_i / sum beta`; the decoder is the optimal tied one.
pub fn block_construction(n: usize, cov: &CovarianceModel, act: &ActivationSeries, rng: &mut SeededRng) -> Result<BlockConstruction> {
    block_construction_with_basis(n, cov, act, &matcore::haar_orthogonal(n, rng))
}

pub fn block_construction_with_basis(n: usize, cov: &CovarianceModel, act: &ActivationSeries, u: &Mat) -> Result<BlockConstruction> {
    if n == 0 {
        return Err(Error::Regime("need at least one neuron".into()));
    }
    if u.nrows() != n || u.ncols() != n {
        return Err(Error::Dimension(format!("basis must be {n}x{n}")));
    }
    let d = cov.dim();
    let wf = bounds::lb_general(n, cov, act)?;
    let total: f64 = wf.betas.beta.iter().sum();
    if !(total > 0.0) {
        let b = Mat::from_fn(n, d, |i, j| if j == i % d { 1.0 } else { 0.0 });
        return Ok(BlockConstruction { ae: Autoencoder { a: Mat::zeros(d, n), b }, waterfill: wf, trivial: true });
    }
    let mut b = Mat::zeros(n, d);
    let (mut col, mut used) = (0, 0);
    for (i, blk) in cov.blocks().iter().enumerate() {
        let s = wf.ranks[i];
        let beta = wf.betas.beta[i];
        if s > 0 && beta > 0.0 {
            let piece = u.columns(used, s) * (n as f64 / s as f64).sqrt();
            let piece = matcore::row_normalize(&piece)?;
            let gamma = beta / total; // gamma_i / n
            b.view_mut((0, col), (n, s)).copy_from(&(piece * gamma.sqrt()));
        }
        used += s;
        col += blk.k;
    }
    let b = matcore::row_normalize(&b)?;
    let beta = beta_star_tied(&b, act, cov)?;
    Ok(BlockConstruction { ae: Autoencoder::weight_tied(b, beta), waterfill: wf, trivial: false })
}
