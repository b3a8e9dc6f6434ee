//! Population risk `d^{-1} E||x - A sigma(B x)||^2`, in closed form and by
//! Monte Carlo, for `x ~ N(0, Sigma)`.
//!
//! Two frames are in play. The *raw* frame is the network as it acts on `x`.
//! The *closed-form* frame writes `x = U D z` with `z ~ N(0, I)` and absorbs
//! `U D` into the encoder, so the encoder rows are unit vectors and the kernel
//! identity `E[sigma(<b_i,z>) sigma(<b_j,z>)] = f(<b_i,b_j>)` applies.

use std::path::Path;

use rayon::prelude::*;
use serde::Deserialize;

use crate::activation::ActivationSeries;
use crate::matcore::{self, Mat, SeededRng, Vector};
use crate::{Error, Result};

const UNIT_TOL: f64 = 1e-9;
const MC_CHUNK: usize = 4096;

/// Decoder `A` (d x n) and encoder `B` (n x d).
#[derive(Clone, Debug)]
pub struct Autoencoder {
    pub a: Mat,
    pub b: Mat,
}

impl Autoencoder {
    pub fn new(a: Mat, b: Mat) -> Result<Self> {
        if a.nrows() != b.ncols() || a.ncols() != b.nrows() {
            return Err(Error::Dimension(format!(
                "A is {}x{}, B is {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols()
            )));
        }
        Ok(Autoencoder { a, b })
    }

    /// `A = beta B^T`.
    pub fn weight_tied(b: Mat, beta: f64) -> Self {
        let a = b.transpose() * beta;
        Autoencoder { a, b }
    }

    pub fn d(&self) -> usize {
        self.b.ncols()
    }

    pub fn n(&self) -> usize {
        self.b.nrows()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Block {
    pub k: usize,
    pub d: f64,
}

/// `Sigma = U diag(D)^2 U^T` with `D` constant on blocks, strictly
/// decreasing from block to block.
#[derive(Clone, Debug)]
pub struct CovarianceModel {
    blocks: Vec<Block>,
    basis: Option<Mat>,
}

#[derive(Deserialize)]
struct BlocksFile {
    blocks: Vec<(usize, f64)>,
}

impl CovarianceModel {
    pub fn identity(d: usize) -> Self {
        CovarianceModel { blocks: vec![Block { k: d, d: 1.0 }], basis: None }
    }

    /// Blocks `(k_i, D_i)` in any order; equal `D` are merged.
    pub fn from_blocks(spec: &[(usize, f64)]) -> Result<Self> {
        if spec.is_empty() {
            return Err(Error::Invalid("covariance needs at least one block".into()));
        }
        let mut blocks = Vec::with_capacity(spec.len());
        for &(k, d) in spec {
            if k == 0 || !d.is_finite() || d < 0.0 {
                return Err(Error::Invalid(format!("bad block (k = {k}, D = {d})")));
            }
            blocks.push(Block { k, d });
        }
        blocks.sort_by(|a, b| b.d.total_cmp(&a.d));
        let mut merged: Vec<Block> = Vec::new();
        for b in blocks {
            match merged.last_mut() {
                Some(last) if last.d == b.d => last.k += b.k,
                _ => merged.push(b),
            }
        }
        Ok(CovarianceModel { blocks: merged, basis: None })
    }

    /// Eigen-decomposes a dense symmetric covariance. Eigenvalues within a
    /// relative gap of 1e-9 share a block; eigenvalues below -1e-8 ||Sigma||
    /// are rejected, the remaining near-zero ones form a `D = 0` block.
    pub fn from_dense(sigma: &Mat) -> Result<Self> {
        let d = sigma.nrows();
        if d == 0 || sigma.ncols() != d {
            return Err(Error::Dimension("covariance must be square and non-empty".into()));
        }
        if (sigma - sigma.transpose()).amax() > 1e-10 * sigma.amax().max(1e-300) {
            return Err(Error::Invalid("covariance is not symmetric".into()));
        }
        let (vals, vecs) = matcore::sym_eig(sigma);
        let scale = vals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if let Some(&neg) = vals.iter().find(|v| **v < -1e-8 * scale) {
            return Err(Error::NotPsd(neg));
        }
        let mut clusters: Vec<(usize, f64, f64)> = Vec::new(); // (count, sum, last)
        for &v in vals.iter() {
            let v = if v <= 1e-8 * scale { 0.0 } else { v };
            match clusters.last_mut() {
                Some(c) if c.2 - v <= 1e-9 * scale => {
                    c.0 += 1;
                    c.1 += v;
                    c.2 = v;
                }
                _ => clusters.push((1, v, v)),
            }
        }
        let blocks = clusters
            .into_iter()
            .map(|(k, sum, _)| Block { k, d: (sum / k as f64).sqrt() })
            .collect();
        Ok(CovarianceModel { blocks, basis: Some(vecs) })
    }

    /// `.json` holds `{"blocks": [[k, D], ...]}`; anything else is read as a
    /// dense matrix, one comma- or space-separated row per line.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            let parsed: BlocksFile =
                serde_json::from_str(&text).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
            return Self::from_blocks(&parsed.blocks);
        }
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let row: std::result::Result<Vec<f64>, _> = line
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .map(str::parse::<f64>)
                .collect();
            rows.push(row.map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?);
        }
        let d = rows.len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Dimension(format!("{}: covariance must be square", path.display())));
        }
        Self::from_dense(&Mat::from_fn(d, d, |i, j| rows[i][j]))
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn dim(&self) -> usize {
        self.blocks.iter().map(|b| b.k).sum()
    }

    /// Eigenbasis `U`; identity when built from blocks.
    pub fn basis(&self) -> Mat {
        self.basis.clone().unwrap_or_else(|| Mat::identity(self.dim(), self.dim()))
    }

    /// `D` expanded to length `d`.
    pub fn diag(&self) -> Vector {
        Vector::from_iterator(self.dim(), self.blocks.iter().flat_map(|b| std::iter::repeat_n(b.d, b.k)))
    }

    pub fn trace_d2(&self) -> f64 {
        self.blocks.iter().map(|b| b.k as f64 * b.d * b.d).sum()
    }

    pub fn is_isotropic(&self) -> bool {
        self.blocks.len() == 1 && self.blocks[0].d == 1.0
    }
}

/// `1 + d^{-1} (tr(A^T A f(BB^T)) - 2 c1 tr(BA))` for unit-row `B`.
pub fn population_risk_iso(ae: &Autoencoder, act: &ActivationSeries) -> Result<f64> {
    let d = ae.d() as f64;
    let (quad, lin) = risk_terms(ae, act)?;
    Ok(1.0 + (quad - 2.0 * act.c1() * lin) / d)
}

/// `d^{-1} (tr(A^T A f(BB^T)) - 2 c1 tr(B D A) + tr D^2)` with `(A, B)` in the
/// closed-form frame.
///
/// This is the exact risk of the raw pair returned by [`to_raw`] for any
/// odd activation. When the activation is not homogeneous the unit-row
/// requirement is a genuine constraint, so this is then the risk over
/// encoders with `||(B U D)_i|| = 1` rather than over all encoders.
pub fn population_risk_cov(ae: &Autoencoder, act: &ActivationSeries, cov: &CovarianceModel) -> Result<f64> {
    if cov.dim() != ae.d() {
        return Err(Error::Dimension(format!("covariance has d = {}, autoencoder d = {}", cov.dim(), ae.d())));
    }
    let (quad, _) = risk_terms(ae, act)?;
    let lin = (&ae.b * Mat::from_diagonal(&cov.diag()) * &ae.a).trace();
    Ok((quad - 2.0 * act.c1() * lin + cov.trace_d2()) / ae.d() as f64)
}

// (tr(A^T A f(BB^T)), tr(BA)) after checking unit rows.
fn risk_terms(ae: &Autoencoder, act: &ActivationSeries) -> Result<(f64, f64)> {
    matcore::check_unit_rows(&ae.b, UNIT_TOL)?;
    let k = act.kernel_matrix(&matcore::gram(&ae.b))?;
    let ata = ae.a.transpose() * &ae.a;
    let quad = ata.component_mul(&k).sum();
    let lin = (&ae.b * &ae.a).trace();
    Ok((quad, lin))
}

/// Raw-frame pair to closed-form frame: `B <- rownorm(B U D)` and, for an
/// activation homogeneous of degree `k`, `A <- U^T A diag(rho^k)` with `rho`
/// the row norms of `B U D`. A row with `rho = 0` only sees zero-variance
/// directions, outputs `sigma(0) = 0`, and gets a zero decoder column.
pub fn to_closed_form(raw: &Autoencoder, act: &ActivationSeries, cov: &CovarianceModel) -> Result<Autoencoder> {
    if cov.dim() != raw.d() {
        return Err(Error::Dimension(format!("covariance has d = {}, autoencoder d = {}", cov.dim(), raw.d())));
    }
    let u = cov.basis();
    let m = &raw.b * &u * Mat::from_diagonal(&cov.diag());
    let mut a = u.transpose() * &raw.a;
    let mut b = m.clone();
    for i in 0..raw.n() {
        let rho = m.row(i).norm();
        if rho <= 1e-300 {
            a.column_mut(i).fill(0.0);
            b.row_mut(i).fill(0.0);
            b[(i, 0)] = 1.0;
            continue;
        }
        b.row_mut(i).scale_mut(1.0 / rho);
        match act.homogeneity_degree() {
            Some(k) => a.column_mut(i).scale_mut(rho.powi(k as i32)),
            None if (rho - 1.0).abs() <= UNIT_TOL => {}
            None => {
                return Err(Error::Regime(format!(
                    "activation is not homogeneous and row {i} of B U D has norm {rho}; \
                     the closed form only covers unit rows"
                )))
            }
        }
    }
    Ok(Autoencoder { a, b })
}

/// Closed-form frame to raw frame: `A <- U A`, `B <- B D^{-1} U^T`. Encoder
/// weight on `D = 0` directions has no raw counterpart and is rejected.
pub fn to_raw(ae: &Autoencoder, cov: &CovarianceModel) -> Result<Autoencoder> {
    if cov.dim() != ae.d() {
        return Err(Error::Dimension(format!("covariance has d = {}, autoencoder d = {}", cov.dim(), ae.d())));
    }
    let u = cov.basis();
    let dd = cov.diag();
    let mut b = ae.b.clone();
    for (j, &dj) in dd.iter().enumerate() {
        if dj == 0.0 {
            if b.column(j).amax() > 0.0 {
                return Err(Error::Invalid("encoder loads a zero-variance direction".into()));
            }
        } else {
            b.column_mut(j).scale_mut(1.0 / dj);
        }
    }
    Ok(Autoencoder { a: &u * &ae.a, b: b * u.transpose() })
}

#[derive(Clone, Copy, Debug)]
pub struct MonteCarlo {
    pub mean: f64,
    pub stderr: f64,
    pub samples: usize,
}

/// Monte Carlo risk of a raw-frame pair. Chunks draw from independent
/// streams `(seed, chunk)` and are reduced in order, so the result does not
/// depend on the thread count.
pub fn monte_carlo_risk(
    raw: &Autoencoder,
    act: &ActivationSeries,
    cov: &CovarianceModel,
    samples: usize,
    seed: u64,
) -> Result<MonteCarlo> {
    if samples < 2 {
        return Err(Error::Invalid("Monte Carlo needs at least two samples".into()));
    }
    if cov.dim() != raw.d() {
        return Err(Error::Dimension(format!("covariance has d = {}, autoencoder d = {}", cov.dim(), raw.d())));
    }
    let d = raw.d();
    let mix = cov.basis() * Mat::from_diagonal(&cov.diag());
    let chunks = samples.div_ceil(MC_CHUNK);
    let partial: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let m = MC_CHUNK.min(samples - c * MC_CHUNK);
            let mut rng = SeededRng::new(seed, c as u64);
            let z = rng.gaussian(d, m);
            let x = &mix * z;
            let mut pre = &raw.b * &x;
            pre.iter_mut().for_each(|v| *v = act.eval(*v));
            let err = &x - &raw.a * pre;
            let mut s = 0.0;
            let mut s2 = 0.0;
            for col in err.column_iter() {
                let l = col.norm_squared() / d as f64;
                s += l;
                s2 += l * l;
            }
            (s, s2)
        })
        .collect();
    let (s, s2) = partial.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let nf = samples as f64;
    let mean = s / nf;
    let var = ((s2 - nf * mean * mean) / (nf - 1.0)).max(0.0);
    Ok(MonteCarlo { mean, stderr: (var / nf).sqrt(), samples })
}

/// What the CLI and sweeps report for one configuration.
#[derive(Clone, Debug)]
pub struct RiskReport {
    pub lower_bound: f64,
    pub closed_form: Option<f64>,
    pub monte_carlo: Option<MonteCarlo>,
    pub gap: Option<f64>,
}

impl RiskReport {
    pub fn new(lower_bound: f64, closed_form: Option<f64>, monte_carlo: Option<MonteCarlo>) -> Self {
        let achieved = closed_form.or(monte_carlo.map(|m| m.mean));
        RiskReport { lower_bound, closed_form, monte_carlo, gap: achieved.map(|r| r - lower_bound) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::DEFAULT_TRUNCATION;

    fn sign() -> ActivationSeries {
        ActivationSeries::sign(DEFAULT_TRUNCATION).unwrap()
    }

    #[test]
    fn zero_decoder_has_unit_risk() {
        let mut rng = SeededRng::new(0, 0);
        let b = matcore::row_normalize(&rng.gaussian(5, 10)).unwrap();
        let ae = Autoencoder::new(Mat::zeros(10, 5), b).unwrap();
        assert!((population_risk_iso(&ae, &sign()).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn single_neuron_oracle() {
        // n = 1, b = e1, A = beta e1: risk = 1 + (beta^2 - 2 c1 beta) / d
        let d = 4;
        let mut b = Mat::zeros(1, d);
        b[(0, 0)] = 1.0;
        let beta = 0.7;
        let ae = Autoencoder::weight_tied(b, beta);
        let c1 = (2.0 / std::f64::consts::PI).sqrt();
        let want = 1.0 + (beta * beta - 2.0 * c1 * beta) / d as f64;
        assert!((population_risk_iso(&ae, &sign()).unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn non_unit_rows_rejected() {
        let b = Mat::from_row_slice(1, 2, &[1.0, 1.0]);
        let ae = Autoencoder::weight_tied(b, 1.0);
        assert!(matches!(population_risk_iso(&ae, &sign()), Err(Error::NotUnitRow { .. })));
    }

    #[test]
    fn cov_identity_matches_iso() {
        let mut rng = SeededRng::new(3, 0);
        let b = matcore::row_normalize(&rng.gaussian(6, 9)).unwrap();
        let a = rng.gaussian(9, 6) * 0.2;
        let ae = Autoencoder::new(a, b).unwrap();
        let s = sign();
        let iso = population_risk_iso(&ae, &s).unwrap();
        let cov = population_risk_cov(&ae, &s, &CovarianceModel::identity(9)).unwrap();
        assert!((iso - cov).abs() < 1e-14);
    }

    #[test]
    fn raw_roundtrip_preserves_risk() {
        let mut rng = SeededRng::new(4, 0);
        let sigma = {
            let g = rng.gaussian(6, 6);
            &g * g.transpose() + Mat::identity(6, 6) * 0.1
        };
        let cov = CovarianceModel::from_dense(&sigma).unwrap();
        let s = sign();
        let raw = Autoencoder::new(rng.gaussian(6, 3), rng.gaussian(3, 6)).unwrap();
        let cf = to_closed_form(&raw, &s, &cov).unwrap();
        let back = to_raw(&cf, &cov).unwrap();
        let cf2 = to_closed_form(&back, &s, &cov).unwrap();
        assert!((cf.a.clone() - cf2.a).amax() < 1e-10);
        assert!((cf.b.clone() - cf2.b).amax() < 1e-10);
    }

    #[test]
    fn tabulated_requires_unit_rows() {
        use crate::activation::OddTable;
        let t = OddTable::new(vec![0.0, 1.0, 8.0], vec![0.0, 0.8, 1.0]).unwrap();
        let act = ActivationSeries::tabulated(t, 3).unwrap();
        let cov = CovarianceModel::identity(2);
        let raw = Autoencoder::new(Mat::identity(2, 1), Mat::from_row_slice(1, 2, &[2.0, 0.0])).unwrap();
        assert!(matches!(to_closed_form(&raw, &act, &cov), Err(Error::Regime(_))));
    }

    #[test]
    fn dense_ingestion_clusters() {
        let sigma = Mat::from_diagonal(&Vector::from_vec(vec![4.0, 1.0, 4.0]));
        let cov = CovarianceModel::from_dense(&sigma).unwrap();
        assert_eq!(cov.blocks(), &[Block { k: 2, d: 2.0 }, Block { k: 1, d: 1.0 }]);
        let psd_fail = Mat::from_diagonal(&Vector::from_vec(vec![1.0, -0.5]));
        assert!(matches!(CovarianceModel::from_dense(&psd_fail), Err(Error::NotPsd(_))));
        let singular = Mat::from_diagonal(&Vector::from_vec(vec![2.0, 0.0, 0.0]));
        let cov = CovarianceModel::from_dense(&singular).unwrap();
        assert_eq!(cov.blocks().last().unwrap(), &Block { k: 2, d: 0.0 });
    }

    #[test]
    fn block_file_formats() {
        let dir = tempfile::tempdir().unwrap();
        let j = dir.path().join("c.json");
        std::fs::write(&j, r#"{"blocks": [[30, 2.0], [40, 1.0], [30, 0.7]]}"#).unwrap();
        let cov = CovarianceModel::from_file(&j).unwrap();
        assert_eq!(cov.dim(), 100);
        assert_eq!(cov.blocks()[1], Block { k: 40, d: 1.0 });
        let c = dir.path().join("c.csv");
        std::fs::write(&c, "4,0\n0,1\n").unwrap();
        let cov = CovarianceModel::from_file(&c).unwrap();
        assert_eq!(cov.blocks(), &[Block { k: 1, d: 2.0 }, Block { k: 1, d: 1.0 }]);
    }

    #[test]
    fn monte_carlo_deterministic() {
        let mut rng = SeededRng::new(8, 0);
        let b = matcore::row_normalize(&rng.gaussian(3, 5)).unwrap();
        let ae = Autoencoder::weight_tied(b, 0.4);
        let cov = CovarianceModel::identity(5);
        let m1 = monte_carlo_risk(&ae, &sign(), &cov, 10_000, 1).unwrap();
        let m2 = monte_carlo_risk(&ae, &sign(), &cov, 10_000, 1).unwrap();
        assert_eq!(m1.mean, m2.mean);
        let cf = population_risk_iso(&ae, &sign()).unwrap();
        assert!((m1.mean - cf).abs() < 5.0 * m1.stderr);
    }
}
