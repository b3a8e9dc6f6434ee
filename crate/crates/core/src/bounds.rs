//! Lower bounds on the population risk and the water-filling solution for
//! block-structured covariances.

use crate::activation::ActivationSeries;
use crate::risk::CovarianceModel;
use crate::{Error, Result};

/// Isotropic bound at rate `r = n / d`:
/// `1 - (c1^2 / f(1)) r` up to `r = 1`, `1 - r / (r + f(1)/c1^2 - 1)` beyond.
pub fn lb_iso(r: f64, act: &ActivationSeries) -> Result<f64> {
    if !(r >= 0.0) || !r.is_finite() {
        return Err(Error::Invalid(format!("rate must be a finite non-negative number, got {r}")));
    }
    let c1sq = act.c1() * act.c1();
    if c1sq == 0.0 {
        return Err(Error::DegenerateSeries);
    }
    let f1 = act.f_at_one();
    Ok(if r <= 1.0 { 1.0 - c1sq / f1 * r } else { 1.0 - r / (r + f1 / c1sq - 1.0) })
}

/// Gaussian rate-distortion function at `r` bits per coordinate.
pub fn rd_reference(r: f64) -> f64 {
    (-2.0 * r).exp2()
}

/// Ranks `s_i`: fill the blocks in order of decreasing variance until the
/// budget `min(n, d)` is spent.
pub fn waterfill_ranks(n: usize, cov: &CovarianceModel) -> Vec<usize> {
    let mut left = n.min(cov.dim());
    cov.blocks()
        .iter()
        .map(|b| {
            let s = b.k.min(left);
            left -= s;
            s
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct BetaSolution {
    /// Block weights in the objective's own units.
    pub beta: Vec<f64>,
    /// `c1 * beta`, the units in which the optimality conditions are stated.
    pub beta_rescaled: Vec<f64>,
    /// Number of active (leading) blocks.
    pub active: usize,
}

/// Minimizes the water-filling objective over `beta >= 0` for fixed ranks.
///
/// The active set is a prefix of the blocks. With `G = (f(1) - c1^2) / (c1^2 n)`
/// block `m` is inactive as soon as
/// `h(m) = D_m + G sum_{j<=m} s_j (D_m - D_j) <= 0`; `h` is decreasing, so the
/// cut is found by bisection.
pub fn optimal_betas(s: &[usize], cov: &CovarianceModel, act: &ActivationSeries, n: f64) -> Result<BetaSolution> {
    let blocks = cov.blocks();
    if s.len() != blocks.len() {
        return Err(Error::Dimension(format!("{} ranks for {} blocks", s.len(), blocks.len())));
    }
    let c1 = act.c1();
    if c1 == 0.0 {
        return Err(Error::DegenerateSeries);
    }
    let g = act.alpha() / (c1 * c1 * n);
    let dv: Vec<f64> = blocks.iter().map(|b| b.d).collect();
    let sv: Vec<f64> = s.iter().map(|&v| v as f64).collect();
    let k_eff = s.iter().take_while(|&&v| v > 0).count();
    let h = |m: usize| dv[m] + g * (0..=m).map(|j| sv[j] * (dv[m] - dv[j])).sum::<f64>();

    let (mut lo, mut hi) = (0, k_eff);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if h(mid) <= 0.0 {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let active = lo;

    let mut beta_rescaled = vec![0.0; s.len()];
    if active > 0 {
        let d1 = dv[0];
        let num: f64 = (0..active).map(|j| sv[j] * (d1 - dv[j])).sum();
        let den: f64 = (0..active).map(|j| sv[j]).sum();
        let x = (g * num + d1) / (g * den + 1.0);
        for i in 0..active {
            beta_rescaled[i] = (sv[i] * (x - (d1 - dv[i]))).max(0.0);
        }
    }
    let beta = beta_rescaled.iter().map(|b| b / c1).collect();
    Ok(BetaSolution { beta, beta_rescaled, active })
}

/// `d^{-1} [ (alpha/n) (sum beta)^2 + sum_i (c1^2 beta_i^2 / s_i - 2 c1 D_i beta_i) + tr D^2 ]`
/// with `0^2/0 = 0` and `c/0 = +inf` for `c > 0`.
pub fn waterfill_objective(beta: &[f64], s: &[usize], cov: &CovarianceModel, act: &ActivationSeries, n: f64) -> f64 {
    let c1 = act.c1();
    let mut acc = act.alpha() / n * beta.iter().sum::<f64>().powi(2);
    for ((b, &si), blk) in beta.iter().zip(s).zip(cov.blocks()) {
        if si == 0 {
            if *b != 0.0 {
                return f64::INFINITY;
            }
        } else {
            acc += c1 * c1 * b * b / si as f64;
        }
        acc -= 2.0 * c1 * blk.d * b;
    }
    (acc + cov.trace_d2()) / cov.dim() as f64
}

#[derive(Clone, Debug)]
pub struct WaterFill {
    pub ranks: Vec<usize>,
    pub betas: BetaSolution,
    pub value: f64,
}

/// Water-filling bound for `n` neurons: the minimum of the risk over
/// weight-tied encoders built block by block. For the isotropic model it
/// coincides with [`lb_iso`].
pub fn lb_general(n: usize, cov: &CovarianceModel, act: &ActivationSeries) -> Result<WaterFill> {
    lb_general_at(n as f64, cov, act)
}

/// As [`lb_general`] with a real-valued `n` in the `(sum beta)^2 / n` term;
/// the ranks use `floor(n)`.
pub fn lb_general_at(n: f64, cov: &CovarianceModel, act: &ActivationSeries) -> Result<WaterFill> {
    if !(n >= 1.0) {
        return Err(Error::Regime(format!("need at least one neuron, got n = {n}")));
    }
    let ranks = waterfill_ranks(n.floor() as usize, cov);
    let betas = optimal_betas(&ranks, cov, act, n)?;
    let value = waterfill_objective(&betas.beta, &ranks, cov, act, n);
    Ok(WaterFill { ranks, betas, value })
}

/// Central difference of the bound in `n`, ranks recomputed at each point.
pub fn lb_derivative(n: f64, cov: &CovarianceModel, act: &ActivationSeries, h: f64) -> Result<f64> {
    let hi = lb_general_at(n + h, cov, act)?.value;
    let lo = lb_general_at(n - h, cov, act)?.value;
    Ok((hi - lo) / (2.0 * h))
}
