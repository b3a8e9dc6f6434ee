use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use aelimits::activation::{ActivationSeries, OddTable, DEFAULT_TRUNCATION};
use aelimits::risk::CovarianceModel;
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

mod run;

use run::{Cell, Method, Row, Setup};

#[derive(Parser)]
#[command(name = "aelimits", version, about = "Risk bounds, constructions and training runs for sign autoencoders")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Lower bound on the risk at one rate
    Bound(Common),
    /// Risk of a random unit-row encoder with a weight-tied decoder
    Risk {
        #[command(flatten)]
        common: Common,
        /// Decoder scale; defaults to the optimal one for the sampled encoder
        #[arg(long)]
        beta: Option<f64>,
    },
    /// Explicit encoder/decoder pair attaining or approaching the bound
    Construct(Common),
    /// Weight-tied gradient flow from a Gaussian initialization (r <= 1)
    Flow(Common),
    /// Projected gradient descent with the optimal decoder
    Pgd {
        #[command(flatten)]
        common: Common,
        /// Step size; defaults to 0.5 / sqrt(d)
        #[arg(long)]
        eta: Option<f64>,
    },
    /// Minibatch SGD with a straight-through sign estimator
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Grid over rates and seeds for one method
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_method)]
        method: Method,
        /// Inclusive rate grid `start:stop:step`, or a comma-separated list
        #[arg(long, value_parser = parse_grid)]
        rates: RateGrid,
        /// Inclusive seed range `a..b`
        #[arg(long, value_parser = parse_seeds, default_value = "0..0")]
        seeds: Seeds,
        #[arg(long)]
        eta: Option<f64>,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Gaussian rate-distortion reference 2^(-2r)
    Rd(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// Source dimension; taken from --cov when a file is given
    #[arg(long)]
    d: Option<usize>,
    /// Number of neurons (bits)
    #[arg(long, conflicts_with = "rate")]
    n: Option<usize>,
    /// Rate n/d; n is rounded to the nearest integer
    #[arg(long)]
    rate: Option<f64>,
    /// `sign` or `tabulated:<path>`
    #[arg(long, default_value = "sign")]
    activation: String,
    /// `identity` or a covariance file (.json blocks or dense rows)
    #[arg(long, default_value = "identity")]
    cov: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Monte Carlo samples for the risk_mc column (0 = skip)
    #[arg(long, default_value_t = 0)]
    mc_samples: usize,
    /// CSV destination; stdout when absent
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fill the wall_time_s column (makes output run-dependent)
    #[arg(long)]
    timing: bool,
}

#[derive(Args, Clone)]
struct TrainArgs {
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
}

#[derive(Clone, Copy)]
struct Seeds(u64, u64);

#[derive(Clone)]
struct RateGrid(Vec<f64>);

fn parse_method(s: &str) -> Result<Method, String> {
    Method::parse(s).ok_or_else(|| format!("unknown method `{s}` (bound, construct, flow, pgd, train, rd)"))
}

fn parse_seeds(s: &str) -> Result<Seeds, String> {
    let (a, b) = s.split_once("..").ok_or("expected a..b")?;
    let a: u64 = a.parse().map_err(|e: std::num::ParseIntError| e.to_string())?;
    let b: u64 = b.trim_start_matches('=').parse().map_err(|e: std::num::ParseIntError| e.to_string())?;
    if b < a {
        return Err(format!("empty seed range {s}"));
    }
    Ok(Seeds(a, b))
}

/// `start:stop:step`, inclusive of `stop` up to rounding.
fn parse_grid(s: &str) -> Result<RateGrid, String> {
    if !s.contains(':') {
        let v: Vec<f64> = s.split(',').map(|p| p.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
        return Ok(RateGrid(v));
    }
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(format!("rate grid `{s}` is not start:stop:step"));
    }
    let v: Vec<f64> = parts.iter().map(|p| p.parse::<f64>()).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    let (a, b, h) = (v[0], v[1], v[2]);
    if !(h > 0.0) || !(b >= a) || !(a > 0.0) {
        return Err(format!("rate grid `{s}` needs 0 < start <= stop and step > 0"));
    }
    let count = ((b - a) / h + 1e-9).floor() as usize + 1;
    Ok(RateGrid((0..count).map(|i| a + i as f64 * h).collect()))
}

pub enum CliError {
    Usage(String),
    Numeric(aelimits::Error),
}

impl From<aelimits::Error> for CliError {
    fn from(e: aelimits::Error) -> Self {
        match e {
            aelimits::Error::Regime(m) => CliError::Usage(m),
            e => CliError::Numeric(e),
        }
    }
}

fn load_activation(spec: &str) -> Result<ActivationSeries, CliError> {
    if spec == "sign" {
        return Ok(ActivationSeries::sign(DEFAULT_TRUNCATION)?);
    }
    match spec.strip_prefix("tabulated:") {
        Some(path) => {
            let table = OddTable::from_file(path.as_ref()).map_err(|e| CliError::Usage(format!("activation table: {e}")))?;
            Ok(ActivationSeries::tabulated(table, DEFAULT_TRUNCATION)?)
        }
        None => Err(CliError::Usage(format!("unknown activation `{spec}` (sign or tabulated:<path>)"))),
    }
}

fn setup(c: &Common) -> Result<Setup, CliError> {
    let act = load_activation(&c.activation)?;
    let cov = if c.cov == "identity" {
        CovarianceModel::identity(c.d.unwrap_or(64))
    } else {
        let cov = CovarianceModel::from_file(c.cov.as_ref()).map_err(|e| CliError::Usage(format!("covariance: {e}")))?;
        if let Some(d) = c.d.filter(|&d| d != cov.dim()) {
            return Err(CliError::Usage(format!("--d {d} disagrees with the covariance dimension {}", cov.dim())));
        }
        cov
    };
    if cov.dim() == 0 {
        return Err(CliError::Usage("d must be positive".into()));
    }
    Ok(Setup { act: Arc::new(act), cov: Arc::new(cov), mc_samples: c.mc_samples, timing: c.timing })
}

fn neurons(c: &Common, d: usize) -> Result<usize, CliError> {
    match (c.n, c.rate) {
        (Some(n), _) => Ok(n),
        (None, Some(r)) => n_for_rate(r, d),
        (None, None) => Err(CliError::Usage("give --n or --rate".into())),
    }
}

fn n_for_rate(r: f64, d: usize) -> Result<usize, CliError> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(CliError::Usage(format!("rate must be positive, got {r}")));
    }
    let n = (r * d as f64).round() as usize;
    if n == 0 {
        return Err(CliError::Usage(format!("rate {r} gives no neurons at d = {d}")));
    }
    Ok(n)
}

fn write_rows(rows: &[Row], out: Option<&PathBuf>) -> Result<(), CliError> {
    let sink: Box<dyn std::io::Write> = match out {
        Some(p) => Box::new(std::fs::File::create(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    let io = |e: csv::Error| CliError::Numeric(aelimits::Error::Io(std::io::Error::other(e)));
    w.write_record(Row::HEADER).map_err(io)?;
    for r in rows {
        w.write_record(r.fields()).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Numeric(e.into()))?;
    Ok(())
}

fn single(c: &Common, method: Method, cell_extra: impl FnOnce(&mut Cell)) -> Result<(), CliError> {
    let s = setup(c)?;
    let d = s.cov.dim();
    let n = neurons(c, d)?;
    let mut cell = Cell::new(method, n, c.seed);
    cell_extra(&mut cell);
    // the isotropic bound is evaluated at the requested rate, not the rounded n
    if method == Method::Bound && c.n.is_none() && s.cov.is_isotropic() {
        cell.rate_override = c.rate;
    }
    let row = run::run_cell(&s, &cell)?;
    write_rows(std::slice::from_ref(&row), c.out.as_ref())?;
    eprintln!("{}", row.summary());
    if let Some(ranks) = &row.ranks {
        eprintln!("water-fill ranks {ranks:?}");
    }
    for note in &row.notes {
        eprintln!("note: {note}");
    }
    Ok(())
}

fn sweep(c: &Common, method: Method, rates: &[f64], seeds: Seeds, eta: Option<f64>, train: &TrainArgs) -> Result<(), CliError> {
    let s = setup(c)?;
    let d = s.cov.dim();
    if rates.is_empty() {
        return Err(CliError::Usage("empty rate grid".into()));
    }
    let mut cells = Vec::new();
    for &r in rates {
        let n = n_for_rate(r, d)?;
        for seed in seeds.0..=seeds.1 {
            let mut cell = Cell::new(method, n, seed);
            cell.eta = eta;
            apply_train(&mut cell, train);
            run::check_regime(&s, &cell)?;
            cells.push(cell);
        }
    }
    let results: Vec<Result<Row, CliError>> = cells.par_iter().map(|cell| run::run_cell(&s, cell)).collect();
    let rows: Vec<Row> = results.into_iter().collect::<Result<_, _>>()?;
    write_rows(&rows, c.out.as_ref())?;
    let gaps: Vec<f64> = rows.iter().filter_map(|r| r.gap).collect();
    let worst = gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if gaps.is_empty() {
        eprintln!("{} rows", rows.len());
    } else {
        eprintln!("{} rows, largest gap {}", rows.len(), run::sig7(worst));
    }
    Ok(())
}

fn apply_train(cell: &mut Cell, t: &TrainArgs) {
    cell.steps = t.steps;
    cell.tau = t.tau;
    cell.lr = t.lr;
    cell.batch = t.batch;
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Bound(c) => single(&c, Method::Bound, |_| {}),
        Cmd::Risk { common, beta } => single(&common, Method::Risk, |cell| cell.beta = beta),
        Cmd::Construct(c) => single(&c, Method::Construct, |_| {}),
        Cmd::Flow(c) => single(&c, Method::Flow, |_| {}),
        Cmd::Pgd { common, eta } => single(&common, Method::Pgd, |cell| cell.eta = eta),
        Cmd::Train { common, train } => single(&common, Method::Train, |cell| apply_train(cell, &train)),
        Cmd::Rd(c) => single(&c, Method::Rd, |_| {}),
        Cmd::Sweep { common, method, rates, seeds, eta, train } => sweep(&common, method, &rates.0, seeds, eta, &train),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Numeric(e)) => {
            eprintln!("numerical failure: {e}");
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_is_inclusive() {
        let g = parse_grid("0.1:2.0:0.1").unwrap().0;
        assert_eq!(g.len(), 20);
        assert!((g[19] - 2.0).abs() < 1e-12);
        assert_eq!(parse_grid("0.5,1").unwrap().0, vec![0.5, 1.0]);
        assert!(parse_grid("1:0.5:0.1").is_err());
        assert!(parse_grid("0.1:1").is_err());
    }

    #[test]
    fn seed_ranges() {
        let s = parse_seeds("0..9").unwrap();
        assert_eq!((s.0, s.1), (0, 9));
        let s = parse_seeds("2..=4").unwrap();
        assert_eq!((s.0, s.1), (2, 4));
        assert!(parse_seeds("5..1").is_err());
        assert!(parse_seeds("7").is_err());
    }

    #[test]
    fn rate_rounding() {
        assert_eq!(n_for_rate(0.5, 64).ok(), Some(32));
        assert_eq!(n_for_rate(0.1, 64).ok(), Some(6));
        assert!(n_for_rate(0.001, 64).is_err());
    }
}
