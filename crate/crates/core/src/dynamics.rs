//! Gradient dynamics on the product of spheres: the weight-tied gradient
//! flow, projected gradient descent with the optimal decoder, and the scalar
//! recursion followed by the spectrum of `B B^T`.

use crate::activation::ActivationSeries;
use crate::matcore::{self, Mat};
use crate::{Error, Result};

/// `phi = tr((BB^T - I) f(BB^T)) = sum_{i != j} x_ij f(x_ij)`.
pub fn residual_phi(b: &Mat, act: &ActivationSeries) -> Result<f64> {
    let gram = matcore::gram(b);
    let k = act.kernel_matrix(&gram)?;
    let mut phi = 0.0;
    for j in 0..gram.ncols() {
        for i in 0..gram.nrows() {
            if i != j {
                phi += gram[(i, j)] * k[(i, j)];
            }
        }
    }
    Ok(phi)
}

/// Optimal tied decoder scale `n / (n f(1) + phi)`.
pub fn beta_opt(b: &Mat, act: &ActivationSeries) -> Result<f64> {
    let n = b.nrows() as f64;
    Ok(n / (n * act.f_at_one() + residual_phi(b, act)?))
}

// Removes the radial part of each row: row_k <- (I - b_k b_k^T) row_k.
fn project_rows(g: &mut Mat, b: &Mat) {
    for k in 0..b.nrows() {
        let dot = g.row(k).dot(&b.row(k));
        let bk = b.row(k).into_owned();
        { let mut row = g.row_mut(k); row -= &bk * dot; }
    }
}

/// Velocity of the flow: `-beta^2 J_k sum_{j != k} b_j g(<b_k, b_j>)`.
pub fn flow_rhs(b: &Mat, act: &ActivationSeries) -> Result<Mat> {
    let beta = beta_opt(b, act)?;
    let gmat = act.g_offdiag(&matcore::gram(b))?;
    let mut v = gmat * b;
    project_rows(&mut v, b);
    v *= -beta * beta;
    Ok(v)
}

#[derive(Clone, Copy, Debug)]
pub struct TrajectoryPoint {
    /// Flow time, or iteration count for discrete dynamics.
    pub t: f64,
    pub phi: f64,
    /// `beta_opt` of the current encoder.
    pub beta: f64,
    /// Isotropic risk of the current encoder with its optimal decoder
    /// (weight-tied for the flow, unconstrained for PGD).
    pub risk: f64,
    /// `log det(BB^T)`; NaN once `BB^T` is singular.
    pub logdet: f64,
    pub frob_err: f64,
    pub op_err: f64,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub points: Vec<TrajectoryPoint>,
    pub final_b: Mat,
    pub iterations: usize,
    pub converged: bool,
    pub rejected_steps: usize,
    /// PGD was run at `n >= d`, outside the regime where convergence to
    /// orthonormal rows is guaranteed.
    pub regime_warning: bool,
}

#[derive(Clone, Copy)]
enum Decoder {
    Tied,
    Optimal,
}

fn snapshot(t: f64, b: &Mat, act: &ActivationSeries, dec: Decoder) -> Result<TrajectoryPoint> {
    let defect = matcore::gram_defect(b);
    let (n, d) = (b.nrows() as f64, b.ncols() as f64);
    let phi = residual_phi(b, act)?;
    let c1sq = act.c1() * act.c1();
    let risk = match dec {
        // 1 + c1^2 Psi(beta*) / d with Psi(beta*) = -n / (f(1) + phi/n)
        Decoder::Tied => 1.0 - c1sq * n / (d * (act.f_at_one() + phi / n)),
        Decoder::Optimal => match reduced_objective(b, act) {
            Ok(v) => 1.0 + c1sq * v / d,
            Err(_) => f64::NAN,
        },
    };
    Ok(TrajectoryPoint {
        t,
        phi,
        beta: n / (n * act.f_at_one() + phi),
        risk,
        logdet: matcore::logdet_pd(&matcore::gram(b)).unwrap_or(f64::NAN),
        frob_err: matcore::frobenius(&defect),
        op_err: matcore::sym_opnorm(&defect),
    })
}

impl Trajectory {
    /// First recorded time with `phi <= delta`.
    pub fn hitting_time(&self, delta: f64) -> Option<f64> {
        self.points.iter().find(|p| p.phi <= delta).map(|p| p.t)
    }

    pub fn last(&self) -> &TrajectoryPoint {
        self.points.last().expect("trajectory has at least the initial point")
    }
}

#[derive(Clone, Debug)]
pub struct FlowConfig {
    pub dt: f64,
    pub max_dt: f64,
    /// Stop once `phi <= delta`.
    pub delta: f64,
    pub max_time: f64,
    pub max_steps: usize,
    /// Halve the step when `phi` would increase (or `log det` decrease);
    /// regrow it by 10% after each accepted step.
    pub adaptive: bool,
    /// Keep every k-th accepted step in the trajectory (the last one always).
    pub record_every: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            dt: 0.05,
            max_dt: 0.1,
            delta: 1e-12,
            max_time: 1e6,
            max_steps: 200_000,
            adaptive: true,
            record_every: 1,
        }
    }
}

/// Explicit Euler on the flow, rows re-normalized after every step.
/// Requires `B0` of full row rank (the flow never leaves the span of its
/// rows, so a deficient start cannot reach orthonormal rows). Running out of
/// time or steps returns the trajectory with `converged = false`.
pub fn run_gradient_flow(b0: &Mat, act: &ActivationSeries, cfg: &FlowConfig) -> Result<Trajectory> {
    let smin = matcore::min_singular_value(b0);
    if b0.nrows() > b0.ncols() || smin <= 1e-8 {
        return Err(Error::RankDeficient(smin));
    }
    let mut b = matcore::row_normalize(b0)?;
    let mut cur = snapshot(0.0, &b, act, Decoder::Tied)?;
    let mut points = vec![cur];
    let (mut t, mut dt, mut steps, mut rejected, mut accepted) = (0.0, cfg.dt, 0, 0, 0usize);
    while cur.phi > cfg.delta && t < cfg.max_time && steps < cfg.max_steps {
        let v = flow_rhs(&b, act)?;
        let cand = matcore::row_normalize(&(&b + &v * dt))?;
        let next = snapshot(t + dt, &cand, act, Decoder::Tied)?;
        steps += 1;
        let worse = next.phi > cur.phi || !(next.logdet >= cur.logdet);
        if cfg.adaptive && worse {
            rejected += 1;
            dt *= 0.5;
            if dt < 1e-14 {
                break;
            }
            continue;
        }
        t += dt;
        b = cand;
        cur = next;
        accepted += 1;
        if accepted % cfg.record_every.max(1) == 0 || cur.phi <= cfg.delta {
            points.push(cur);
        }
        if cfg.adaptive {
            dt = (dt * 1.1).min(cfg.max_dt);
        }
    }
    if points.last().is_some_and(|p| p.t != cur.t) {
        points.push(cur);
    }
    Ok(Trajectory {
        converged: cur.phi <= cfg.delta,
        points,
        final_b: b,
        iterations: steps,
        rejected_steps: rejected,
        regime_warning: false,
    })
}

/// Upper bound on the time for `phi` to reach `delta`:
/// `-1{phi0 > n f(1)} f(1) logdet0 - 1{delta <= n f(1)} (2 f(1)^2 / delta) logdet0`.
pub fn hitting_time_bound(b0: &Mat, act: &ActivationSeries, delta: f64) -> Result<f64> {
    let b = matcore::row_normalize(b0)?;
    let logdet0 = matcore::logdet_pd(&matcore::gram(&b)).map_err(|_| Error::RankDeficient(0.0))?;
    let n = b.nrows() as f64;
    let f1 = act.f_at_one();
    let phi0 = residual_phi(&b, act)?;
    let mut bound = 0.0;
    if phi0 > n * f1 {
        bound -= f1 * logdet0;
    }
    if delta <= n * f1 {
        bound -= 2.0 * f1 * f1 / delta * logdet0;
    }
    Ok(bound)
}

// Kernel divided by c1^2 so the linear coefficient is one.
fn rescaled_kernel(act: &ActivationSeries, gram: &Mat) -> Result<Mat> {
    let c1sq = act.c1() * act.c1();
    if c1sq == 0.0 {
        return Err(Error::DegenerateSeries);
    }
    Ok(act.kernel_matrix(gram)? / c1sq)
}

/// Decoder minimizing the rescaled objective for fixed `B`:
/// `A = B^T ftilde(BB^T)^{-1}`, via a Cholesky solve.
pub fn pgd_decoder(b: &Mat, act: &ActivationSeries) -> Result<Mat> {
    let k = rescaled_kernel(act, &matcore::gram(b))?;
    Ok(matcore::spd_solve(&k, b)?.transpose())
}

/// Rescaled objective `tr(A^T A ftilde(BB^T)) - 2 tr(BA)` with unit-row `B`.
pub fn pgd_objective(a: &Mat, b: &Mat, act: &ActivationSeries) -> Result<f64> {
    let k = rescaled_kernel(act, &matcore::gram(b))?;
    let ata = a.transpose() * a;
    Ok(ata.component_mul(&k).sum() - 2.0 * (b * a).trace())
}

/// `min_A` of [`pgd_objective`]: `-tr(ftilde(BB^T)^{-1} BB^T)`.
pub fn reduced_objective(b: &Mat, act: &ActivationSeries) -> Result<f64> {
    let gram = matcore::gram(b);
    let k = rescaled_kernel(act, &gram)?;
    Ok(-matcore::spd_solve(&k, &gram)?.trace())
}

/// Row-wise Riemannian gradient of [`pgd_objective`] in `B`:
/// `-2 J_k a_k + 2 sum_{j != k} <a_k, a_j> ftilde'(<b_k, b_j>) J_k b_j`.
/// At the optimal decoder this is also the gradient of the reduced objective.
pub fn pgd_gradient(a: &Mat, b: &Mat, act: &ActivationSeries) -> Result<Mat> {
    let c1sq = act.c1() * act.c1();
    if c1sq == 0.0 {
        return Err(Error::DegenerateSeries);
    }
    let kp = act.f_prime_offdiag(&matcore::gram(b))? / c1sq;
    let w = (a.transpose() * a).component_mul(&kp);
    let mut g = (w * b - a.transpose()) * 2.0;
    project_rows(&mut g, b);
    Ok(g)
}

#[derive(Clone, Debug)]
pub struct PgdConfig {
    /// Defaults to `0.5 / sqrt(d)`.
    pub eta: Option<f64>,
    /// Stop once `||BB^T - I||_op <= tol`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PgdConfig {
    fn default() -> Self {
        PgdConfig { eta: None, tol: 1e-6, max_iter: 5000 }
    }
}

/// `B <- rownorm(B - eta grad)` with the decoder re-solved each step. Fails
/// with the trajectory attached if the error grows tenfold past its start.
pub fn run_pgd(b0: &Mat, act: &ActivationSeries, cfg: &PgdConfig) -> Result<Trajectory> {
    let eta = cfg.eta.unwrap_or(0.5 / (b0.ncols() as f64).sqrt());
    let mut b = matcore::row_normalize(b0)?;
    let regime_warning = b.nrows() >= b.ncols();
    let mut cur = snapshot(0.0, &b, act, Decoder::Optimal)?;
    let err0 = cur.op_err;
    let mut points = vec![cur];
    let mut it = 0;
    while cur.op_err > cfg.tol && it < cfg.max_iter {
        let a = pgd_decoder(&b, act)?;
        let g = pgd_gradient(&a, &b, act)?;
        b = matcore::row_normalize(&(&b - g * eta))?;
        it += 1;
        cur = snapshot(it as f64, &b, act, Decoder::Optimal)?;
        points.push(cur);
        if !cur.op_err.is_finite() || cur.op_err > 10.0 * err0.max(1e-12) {
            return Err(Error::Diverged(Box::new(Trajectory {
                points,
                final_b: b,
                iterations: it,
                converged: false,
                rejected_steps: 0,
                regime_warning,
            })));
        }
    }
    Ok(Trajectory {
        converged: cur.op_err <= cfg.tol,
        points,
        final_b: b,
        iterations: it,
        rejected_steps: 0,
        regime_warning,
    })
}

#[derive(Clone, Debug)]
pub struct SpectrumTrace {
    pub sums: Vec<f64>,
    pub max_dev: Vec<f64>,
    pub final_lambda: Vec<f64>,
}

/// `lambda_i <- lambda_i + eta (F(lambda_i) - lambda_i mean_j F(lambda_j))`
/// with `F(l) = l / (alpha + l)^2`. Preserves `sum lambda`; all-ones is the
/// fixed point.
pub fn spectrum_recursion(lambda0: &[f64], alpha: f64, eta: f64, steps: usize) -> Result<SpectrumTrace> {
    if lambda0.is_empty() || lambda0.iter().any(|l| !(*l >= 0.0)) {
        return Err(Error::Invalid("spectrum must be non-empty and non-negative".into()));
    }
    let n = lambda0.len() as f64;
    let f = |l: f64| l / ((alpha + l) * (alpha + l));
    let mut lam = lambda0.to_vec();
    let stats = |l: &[f64]| (neumaier_sum(l.iter().copied()), l.iter().fold(0.0f64, |a, v| a.max((v - 1.0).abs())));
    let (s0, m0) = stats(&lam);
    let (mut sums, mut max_dev) = (vec![s0], vec![m0]);
    for _ in 0..steps {
        let fl: Vec<f64> = lam.iter().map(|&l| f(l)).collect();
        let mean = neumaier_sum(fl.iter().copied()) / n;
        for (l, fv) in lam.iter_mut().zip(&fl) {
            *l += eta * (fv - *l * mean);
        }
        let (s, m) = stats(&lam);
        sums.push(s);
        max_dev.push(m);
    }
    Ok(SpectrumTrace { sums, max_dev, final_lambda: lam })
}

fn neumaier_sum(it: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for v in it {
        let t = s + v;
        c += if s.abs() >= v.abs() { (s - t) + v } else { (v - t) + s };
        s = t;
    }
    s + c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::DEFAULT_TRUNCATION;
    use crate::matcore::SeededRng;

    fn sign() -> ActivationSeries {
        ActivationSeries::sign(DEFAULT_TRUNCATION).unwrap()
    }

    #[test]
    fn phi_and_beta_at_orthonormal_rows() {
        let s = sign();
        let b = Mat::identity(3, 5);
        assert_eq!(residual_phi(&b, &s).unwrap(), 0.0);
        assert_eq!(beta_opt(&b, &s).unwrap(), 1.0);
        assert!(flow_rhs(&b, &s).unwrap().amax() == 0.0);
    }

    #[test]
    fn phi_two_rows_by_hand() {
        let s = sign();
        let c: f64 = 0.6;
        let b = Mat::from_row_slice(2, 2, &[1.0, 0.0, c, (1.0 - c * c).sqrt()]);
        let want = 2.0 * c * (2.0 / std::f64::consts::PI) * c.asin();
        assert!((residual_phi(&b, &s).unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn flow_velocity_is_tangent() {
        let s = sign();
        let mut rng = SeededRng::new(6, 0);
        let b = matcore::row_normalize(&rng.gaussian(4, 9)).unwrap();
        let v = flow_rhs(&b, &s).unwrap();
        for k in 0..4 {
            assert!(v.row(k).dot(&b.row(k)).abs() < 1e-14);
        }
    }

    #[test]
    fn flow_rejects_rank_deficient_start() {
        let s = sign();
        let b = Mat::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert!(matches!(run_gradient_flow(&b, &s, &FlowConfig::default()), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn decoder_solves_normal_equations() {
        let s = sign();
        let mut rng = SeededRng::new(7, 0);
        let b = matcore::row_normalize(&rng.gaussian(5, 10)).unwrap();
        let a = pgd_decoder(&b, &s).unwrap();
        // A ftilde(BB^T) = B^T
        let k = act_rescaled(&s, &b);
        assert!((&a * k - b.transpose()).amax() < 1e-12);
    }

    fn act_rescaled(s: &ActivationSeries, b: &Mat) -> Mat {
        // unit rows: the diagonal is (2/pi) asin(1) = 1 exactly
        let mut k = s.f_matrix(&matcore::gram(b)).unwrap();
        k.fill_diagonal(1.0);
        k / (s.c1() * s.c1())
    }

    #[test]
    fn spectrum_fixed_point() {
        let t = spectrum_recursion(&[1.0; 7], 0.5, 0.1, 10).unwrap();
        assert!(t.final_lambda.iter().all(|l| (*l - 1.0).abs() < 1e-15));
        assert!(spectrum_recursion(&[1.0, -1.0], 0.5, 0.1, 1).is_err());
    }

    #[test]
    fn neumaier_is_exact_on_cancellation() {
        assert_eq!(neumaier_sum([1e16, 1.0, -1e16].into_iter()), 1.0);
    }
}
