//! Unconstrained (not weight-tied) training of the sign autoencoder with a
//! straight-through estimator: `sign` on the forward pass, the derivative of
//! `tanh(z / tau)` on the backward pass.

use crate::activation::{sign, ActivationSeries};
use crate::bounds;
use crate::matcore::{self, Mat, SeededRng};
use crate::risk::{self, Autoencoder, CovarianceModel, MonteCarlo};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Forward {
    /// `sign(Bx)`; gradients in `B` are straight-through.
    Sign,
    /// `tanh(Bx / tau)`; gradients are exact for this smooth loss.
    Surrogate,
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub n: usize,
    pub lr: f64,
    /// Fraction of the run after which the rate is multiplied by `lr_decay`.
    pub decay_at: f64,
    pub lr_decay: f64,
    pub tau: f64,
    pub steps: usize,
    pub batch: usize,
    /// Train `B = rownorm(Bhat)` instead of `B` directly.
    pub normalize_rows: bool,
    pub eval_every: usize,
    pub eval_samples: usize,
    pub final_samples: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(n: usize) -> Self {
        TrainConfig {
            n,
            lr: 0.2,
            decay_at: 0.8,
            lr_decay: 0.1,
            tau: 0.05,
            steps: 4000,
            batch: 256,
            normalize_rows: true,
            eval_every: 200,
            eval_samples: 20_000,
            final_samples: 200_000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Grads {
    pub loss: f64,
    pub grad_a: Mat,
    pub grad_bhat: Mat,
}

/// Mean of `d^{-1} ||x - A y||^2` over the columns of `x` and its gradients.
pub fn ste_loss_and_grads(a: &Mat, bhat: &Mat, x: &Mat, tau: f64, normalize_rows: bool, forward: Forward) -> Result<Grads> {
    let (d, m) = (x.nrows() as f64, x.ncols() as f64);
    let b = if normalize_rows { matcore::row_normalize(bhat)? } else { bhat.clone() };
    let z = &b * x;
    let t = z.map(|v| (v / tau).tanh());
    let y = match forward {
        Forward::Sign => z.map(sign),
        Forward::Surrogate => t.clone(),
    };
    let r = x - a * &y;
    let loss = r.norm_squared() / (d * m);
    let scale = -2.0 / (d * m);
    let grad_a = &r * y.transpose() * scale;
    let dz = (a.transpose() * &r * scale).component_mul(&t.map(|v| (1.0 - v * v) / tau));
    let grad_b = dz * x.transpose();
    let grad_bhat = if normalize_rows {
        let mut g = grad_b;
        for k in 0..g.nrows() {
            let norm = bhat.row(k).norm();
            let bk = b.row(k).into_owned();
            let dot = g.row(k).dot(&bk);
            { let mut row = g.row_mut(k); row -= &bk * dot; }
            g.row_mut(k).scale_mut(1.0 / norm);
        }
        g
    } else {
        grad_b
    };
    Ok(Grads { loss, grad_a, grad_bhat })
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub steps_run: usize,
    /// `(step, Monte Carlo risk)` at each evaluation.
    pub risk_trace: Vec<(usize, MonteCarlo)>,
    pub final_risk: Option<MonteCarlo>,
    /// `lb_iso(n/d)` for an isotropic source, the water-filling bound otherwise.
    pub lower_bound: f64,
    pub final_gap_to_bound: Option<f64>,
    /// Trained pair in the raw frame, `B` row-normalized.
    pub ae: Autoencoder,
}

fn eval_seed(seed: u64, k: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k + 1)
}

/// Minibatch SGD on fresh Gaussian samples `x = U D z`. Initialization:
/// `A ~ N(0, 1/n)`, `Bhat ~ N(0, 1/d)`.
pub fn train_sgd(cfg: &TrainConfig, cov: &CovarianceModel) -> Result<TrainReport> {
    if cfg.n == 0 || cfg.batch == 0 || cfg.steps == 0 || !(cfg.tau > 0.0) {
        return Err(Error::Invalid("n, batch, steps and tau must be positive".into()));
    }
    let d = cov.dim();
    let act = ActivationSeries::sign(1)?;
    let lower_bound = if cov.is_isotropic() {
        bounds::lb_iso(cfg.n as f64 / d as f64, &act)?
    } else {
        bounds::lb_general(cfg.n, cov, &act)?.value
    };
    let mix = cov.basis() * Mat::from_diagonal(&cov.diag());
    let mut init = SeededRng::new(cfg.seed, 0);
    let mut data = SeededRng::new(cfg.seed, 1);
    let mut a = init.gaussian(d, cfg.n) / (cfg.n as f64).sqrt();
    let mut bhat = init.gaussian(cfg.n, d) / (d as f64).sqrt();
    let decay_step = (cfg.decay_at * cfg.steps as f64).round() as usize;
    let mut trace = Vec::new();

    let snapshot = |a: &Mat, bhat: &Mat| -> Result<Autoencoder> {
        Autoencoder::new(a.clone(), matcore::row_normalize(bhat)?)
    };
    for step in 0..cfg.steps {
        if cfg.eval_every > 0 && step % cfg.eval_every == 0 {
            let ae = snapshot(&a, &bhat)?;
            let mc = risk::monte_carlo_risk(&ae, &act, cov, cfg.eval_samples, eval_seed(cfg.seed, step as u64))?;
            trace.push((step, mc));
        }
        let lr = if step >= decay_step { cfg.lr * cfg.lr_decay } else { cfg.lr };
        let x = &mix * data.gaussian(d, cfg.batch);
        let g = ste_loss_and_grads(&a, &bhat, &x, cfg.tau, cfg.normalize_rows, Forward::Sign)?;
        let next_a = &a - g.grad_a * lr;
        let next_b = &bhat - g.grad_bhat * lr;
        let finite = |m: &Mat| m.iter().all(|v| v.is_finite());
        if !g.loss.is_finite() || !finite(&next_a) || !finite(&next_b) || next_b.row_iter().any(|r| !(r.norm() > 0.0 && r.norm().is_finite())) {
            let ae = Autoencoder { a: a.clone(), b: bhat.clone() };
            return Err(Error::TrainingDiverged(Box::new(TrainReport {
                steps_run: step,
                risk_trace: trace,
                final_risk: None,
                lower_bound,
                final_gap_to_bound: None,
                ae,
            })));
        }
        a = next_a;
        bhat = next_b;
        if cfg.normalize_rows {
            // keep the scale of Bhat fixed; the loss does not see it
            bhat = matcore::row_normalize(&bhat)?;
        }
    }
    let ae = snapshot(&a, &bhat)?;
    let final_risk = risk::monte_carlo_risk(&ae, &act, cov, cfg.final_samples, eval_seed(cfg.seed, u64::MAX - 1))?;
    trace.push((cfg.steps, final_risk));
    Ok(TrainReport {
        steps_run: cfg.steps,
        risk_trace: trace,
        final_risk: Some(final_risk),
        lower_bound,
        final_gap_to_bound: Some(final_risk.mean - lower_bound),
        ae,
    })
}
