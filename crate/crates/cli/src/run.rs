use std::sync::Arc;
use std::time::Instant;

use aelimits::activation::{ActivationKind, ActivationSeries};
use aelimits::bounds::{lb_general, lb_iso, rd_reference};
use aelimits::construct::{beta_star_tied, block_construction, highrate_construction, orthogonal_minimizer};
use aelimits::dynamics::{pgd_decoder, run_gradient_flow, run_pgd, FlowConfig, PgdConfig};
use aelimits::matcore::{row_normalize, SeededRng};
use aelimits::risk::{monte_carlo_risk, population_risk_cov, to_closed_form, to_raw, Autoencoder, CovarianceModel};
use aelimits::trainer::{train_sgd, TrainConfig};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Bound,
    Risk,
    Construct,
    Flow,
    Pgd,
    Train,
    Rd,
}

impl Method {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "bound" => Method::Bound,
            "risk" => Method::Risk,
            "construct" => Method::Construct,
            "flow" => Method::Flow,
            "pgd" => Method::Pgd,
            "train" => Method::Train,
            "rd" => Method::Rd,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Method::Bound => "bound",
            Method::Risk => "risk",
            Method::Construct => "construct",
            Method::Flow => "flow",
            Method::Pgd => "pgd",
            Method::Train => "train",
            Method::Rd => "rd",
        }
    }
}

pub struct Setup {
    pub act: Arc<ActivationSeries>,
    pub cov: Arc<CovarianceModel>,
    pub mc_samples: usize,
    pub timing: bool,
}

pub struct Cell {
    pub method: Method,
    pub n: usize,
    pub seed: u64,
    pub eta: Option<f64>,
    pub beta: Option<f64>,
    pub steps: Option<usize>,
    pub tau: Option<f64>,
    pub lr: Option<f64>,
    pub batch: Option<usize>,
    pub rate_override: Option<f64>,
}

impl Cell {
    pub fn new(method: Method, n: usize, seed: u64) -> Self {
        Cell { method, n, seed, eta: None, beta: None, steps: None, tau: None, lr: None, batch: None, rate_override: None }
    }
}

#[derive(Default)]
pub struct Row {
    method: &'static str,
    d: usize,
    n: usize,
    rate: f64,
    seed: u64,
    lower_bound: Option<f64>,
    risk_closed_form: Option<f64>,
    risk_mc: Option<f64>,
    mc_stderr: Option<f64>,
    pub gap: Option<f64>,
    iterations: Option<usize>,
    wall_time_s: Option<f64>,
    pub ranks: Option<Vec<usize>>,
    pub notes: Vec<String>,
}

fn opt<T: std::fmt::Debug>(v: Option<T>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

/// Seven significant digits.
pub fn sig7(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let digits = (6 - x.abs().log10().floor() as i32).max(0) as usize;
    if digits > 12 {
        format!("{x:.6e}")
    } else {
        format!("{x:.digits$}")
    }
}

impl Row {
    pub const HEADER: [&'static str; 12] = [
        "method",
        "d",
        "n",
        "rate",
        "seed",
        "lower_bound",
        "risk_closed_form",
        "risk_mc",
        "mc_stderr",
        "gap",
        "iterations",
        "wall_time_s",
    ];

    // f64 Debug is the shortest string that round-trips, switching to
    // exponent form for tiny and huge values
    pub fn fields(&self) -> [String; 12] {
        [
            self.method.to_string(),
            self.d.to_string(),
            self.n.to_string(),
            format!("{:?}", self.rate),
            self.seed.to_string(),
            opt(self.lower_bound),
            opt(self.risk_closed_form),
            opt(self.risk_mc),
            opt(self.mc_stderr),
            opt(self.gap),
            opt(self.iterations),
            opt(self.wall_time_s),
        ]
    }

    pub fn summary(&self) -> String {
        let mut s = format!("{} d={} n={} rate={}", self.method, self.d, self.n, self.rate);
        let label = if self.method == "rd" { "rd" } else { "bound" };
        if let Some(b) = self.lower_bound {
            s += &format!(" {label}={}", sig7(b));
        }
        if let Some(r) = self.risk_closed_form {
            s += &format!(" risk={}", sig7(r));
        }
        if let (Some(m), Some(e)) = (self.risk_mc, self.mc_stderr) {
            s += &format!(" risk_mc={} (+- {})", sig7(m), sig7(e));
        }
        if let Some(g) = self.gap {
            s += &format!(" gap={g:.3e}");
        }
        s
    }
}

/// Rejects method/regime combinations up front, before any work is spent.
pub fn check_regime(s: &Setup, cell: &Cell) -> Result<(), CliError> {
    let d = s.cov.dim();
    let iso = s.cov.is_isotropic();
    if cell.n == 0 {
        return Err(CliError::Usage("n must be positive".into()));
    }
    match cell.method {
        Method::Flow if cell.n > d => Err(CliError::Usage(format!("flow needs r <= 1 (n = {}, d = {d})", cell.n))),
        Method::Flow | Method::Pgd if !iso => Err(CliError::Usage("flow and pgd run on the isotropic source only".into())),
        Method::Train if !matches!(s.act.kind(), ActivationKind::Sign) => {
            Err(CliError::Usage("training supports the sign activation only".into()))
        }
        _ => Ok(()),
    }
}

fn bound_for(s: &Setup, n: usize, rate: f64, row: &mut Row) -> Result<f64, CliError> {
    if s.cov.is_isotropic() {
        return Ok(lb_iso(rate, &s.act)?);
    }
    let wf = lb_general(n, &s.cov, &s.act)?;
    row.ranks = Some(wf.ranks);
    Ok(wf.value)
}

// Closed-form risk of a closed-frame pair, plus Monte Carlo on its raw form.
fn evaluate(s: &Setup, ae: &Autoencoder, seed: u64, row: &mut Row) -> Result<(), CliError> {
    row.risk_closed_form = Some(population_risk_cov(ae, &s.act, &s.cov)?);
    if s.mc_samples > 0 {
        let raw = to_raw(ae, &s.cov)?;
        let mc = monte_carlo_risk(&raw, &s.act, &s.cov, s.mc_samples, seed)?;
        row.risk_mc = Some(mc.mean);
        row.mc_stderr = Some(mc.stderr);
    }
    Ok(())
}

pub fn run_cell(s: &Setup, cell: &Cell) -> Result<Row, CliError> {
    check_regime(s, cell)?;
    let start = Instant::now();
    let (d, n) = (s.cov.dim(), cell.n);
    let rate = cell.rate_override.unwrap_or(n as f64 / d as f64);
    let mut row = Row { method: cell.method.name(), d, n, rate, seed: cell.seed, ..Row::default() };
    let mut rng = SeededRng::new(cell.seed, 0);
    // MC draws use their own stream so they never overlap the construction's
    let mc_seed = cell.seed.wrapping_add(1 << 32);

    match cell.method {
        Method::Rd => {
            row.lower_bound = Some(rd_reference(rate));
        }
        Method::Bound => {
            row.lower_bound = Some(bound_for(s, n, rate, &mut row)?);
        }
        Method::Risk => {
            row.lower_bound = Some(bound_for(s, n, rate, &mut row)?);
            let b = row_normalize(&rng.gaussian(n, d))?;
            let beta = match cell.beta {
                Some(v) => v,
                None => beta_star_tied(&b, &s.act, &s.cov)?,
            };
            evaluate(s, &Autoencoder::weight_tied(b, beta), mc_seed, &mut row)?;
        }
        Method::Construct => {
            row.lower_bound = Some(bound_for(s, n, rate, &mut row)?);
            let ae = if !s.cov.is_isotropic() {
                let bc = block_construction(n, &s.cov, &s.act, &mut rng)?;
                if bc.trivial {
                    row.notes.push("all variance in zero blocks: trivial zero decoder".into());
                }
                bc.ae
            } else if n <= d {
                orthogonal_minimizer(d, n, &s.act, &mut rng)?
            } else {
                highrate_construction(d, n, &s.act, &mut rng)?
            };
            evaluate(s, &ae, mc_seed, &mut row)?;
        }
        Method::Flow => {
            row.lower_bound = Some(bound_for(s, n, rate, &mut row)?);
            let tr = run_gradient_flow(&rng.gaussian(n, d), &s.act, &FlowConfig::default())?;
            if !tr.converged {
                row.notes.push(format!("flow stopped at phi = {:e} before reaching tolerance", tr.last().phi));
            }
            let beta = tr.last().beta * s.act.c1();
            evaluate(s, &Autoencoder::weight_tied(tr.final_b, beta), mc_seed, &mut row)?;
            row.iterations = Some(tr.iterations);
        }
        Method::Pgd => {
            row.lower_bound = Some(bound_for(s, n, rate, &mut row)?);
            let cfg = PgdConfig { eta: cell.eta, ..PgdConfig::default() };
            let tr = run_pgd(&rng.gaussian(n, d), &s.act, &cfg)?;
            if tr.regime_warning {
                row.notes.push("n >= d: convergence to orthonormal rows is not expected".into());
            }
            if !tr.converged {
                row.notes.push(format!("pgd stopped at ||BB^T - I||_op = {:e}", tr.last().op_err));
            }
            let a = pgd_decoder(&tr.final_b, &s.act)? / s.act.c1();
            evaluate(s, &Autoencoder::new(a, tr.final_b)?, mc_seed, &mut row)?;
            row.iterations = Some(tr.iterations);
        }
        Method::Train => {
            let mut cfg = TrainConfig::new(n);
            cfg.seed = cell.seed;
            cfg.steps = cell.steps.unwrap_or(cfg.steps);
            cfg.tau = cell.tau.unwrap_or(cfg.tau);
            cfg.lr = cell.lr.unwrap_or(cfg.lr);
            cfg.batch = cell.batch.unwrap_or(cfg.batch);
            if s.mc_samples > 0 {
                cfg.final_samples = s.mc_samples;
            }
            let rep = train_sgd(&cfg, &s.cov)?;
            if !s.cov.is_isotropic() {
                row.ranks = Some(lb_general(n, &s.cov, &s.act)?.ranks);
            }
            row.lower_bound = Some(rep.lower_bound);
            let closed = to_closed_form(&rep.ae, &s.act, &s.cov)?;
            row.risk_closed_form = Some(population_risk_cov(&closed, &s.act, &s.cov)?);
            if let Some(mc) = rep.final_risk {
                row.risk_mc = Some(mc.mean);
                row.mc_stderr = Some(mc.stderr);
            }
            row.iterations = Some(rep.steps_run);
        }
    }
    if let (Some(lb), Some(r)) = (row.lower_bound, row.risk_closed_form.or(row.risk_mc)) {
        row.gap = Some(r - lb);
    }
    if s.timing {
        row.wall_time_s = Some(start.elapsed().as_secs_f64());
    }
    Ok(row)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seven_significant_digits() {
        assert_eq!(sig7(0.6816901138162093), "0.6816901");
        assert_eq!(sig7(12.345678), "12.34568");
        assert_eq!(sig7(0.25), "0.2500000");
        assert_eq!(sig7(0.0), "0");
    }

    #[test]
    fn empty_fields_for_missing_values() {
        let row = Row { method: "bound", d: 4, n: 2, rate: 0.5, lower_bound: Some(0.5), ..Row::default() };
        let f = row.fields();
        assert_eq!(f[5], "0.5");
        assert!(f[6..].iter().all(|s| s.is_empty()));
    }
}
