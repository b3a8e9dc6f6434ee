//! Hermite expansion of an odd activation and the kernel it induces.
//!
//! For `g ~ N(0,1)` and orthonormal Hermite polynomials `h_k`, the
//! coefficients are `c_k = E[sigma(g) h_k(g)]`. The kernel
//! `f(x) = sum_k c_k^2 x^k` is what `E[sigma(<b_i,x>) sigma(<b_j,x>)]`
//! reduces to for unit-norm rows, which is all the closed-form risk needs.

use std::f64::consts::{FRAC_2_PI, PI};
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::quad;
use crate::{Error, Result};

pub const DEFAULT_TRUNCATION: usize = 32;

// Sign is integrated on the half-line in t = x^2 / 2, where its Hermite
// integrands are polynomials; n Laguerre nodes there resolve as much as 2n
// Gauss-Hermite nodes would without the kink at 0. Monomials use Gauss-Hermite.
const LAGUERRE_NODES: (usize, usize) = (100, 200);
const HERMITE_NODES: (usize, usize) = (200, 400);
// Legendre nodes per sub-interval for tabulated activations.
const LEGENDRE_NODES: (usize, usize) = (8, 16);
const MAX_PANEL: f64 = 0.25;
const QUAD_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub enum ActivationKind {
    Sign,
    OddMonomial(u32),
    Tabulated,
}

/// Orthonormal Hermite polynomials `h_0..=h_kmax` at `x`.
pub fn hermite_all(x: f64, kmax: usize) -> Vec<f64> {
    let mut h = vec![0.0; kmax + 1];
    h[0] = 1.0;
    if kmax >= 1 {
        h[1] = x;
    }
    for k in 1..kmax {
        h[k + 1] = (x * h[k] - (k as f64).sqrt() * h[k - 1]) / ((k + 1) as f64).sqrt();
    }
    h
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// An odd function given by samples on `x >= 0`; monotone cubic (PCHIP)
/// interpolation in between, held constant past the last knot, extended by
/// oddness.
#[derive(Clone, Debug)]
pub struct OddTable {
    xs: Vec<f64>,
    ys: Vec<f64>,
    slopes: Vec<f64>,
}

impl OddTable {
    pub fn new(mut xs: Vec<f64>, mut ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() || xs.is_empty() {
            return Err(Error::Invalid("table needs matching, non-empty x and y columns".into()));
        }
        if xs.iter().chain(&ys).any(|v| !v.is_finite()) {
            return Err(Error::Invalid("table contains non-finite values".into()));
        }
        if xs[0] < 0.0 {
            return Err(Error::Invalid("table abscissae must be >= 0".into()));
        }
        if xs[0] > 0.0 {
            xs.insert(0, 0.0);
            ys.insert(0, 0.0);
        } else if ys[0] != 0.0 {
            return Err(Error::Invalid("an odd activation must vanish at 0".into()));
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Invalid("table abscissae must be strictly increasing".into()));
        }
        if xs.len() < 2 {
            return Err(Error::Invalid("table needs at least one positive knot".into()));
        }
        let slopes = pchip_slopes(&xs, &ys);
        Ok(OddTable { xs, ys, slopes })
    }

    /// Two numeric columns `x, sigma(x)`; blank lines, `#` comments and a
    /// non-numeric header line are skipped.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut it = line.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty());
            let (a, b) = match (it.next(), it.next()) {
                (Some(a), Some(b)) => (a, b),
                _ => return Err(Error::Invalid(format!("line {}: expected two columns", lineno + 1))),
            };
            match (a.parse::<f64>(), b.parse::<f64>()) {
                (Ok(x), Ok(y)) => {
                    xs.push(x);
                    ys.push(y);
                }
                _ if xs.is_empty() => continue, // header
                _ => return Err(Error::Invalid(format!("line {}: not numeric", lineno + 1))),
            }
        }
        OddTable::new(xs, ys)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let s = if x < 0.0 { -1.0 } else { 1.0 };
        s * self.eval_pos(x.abs())
    }

    fn eval_pos(&self, x: f64) -> f64 {
        let last = self.xs.len() - 1;
        if x >= self.xs[last] {
            return self.ys[last];
        }
        let i = match self.xs.binary_search_by(|p| p.total_cmp(&x)) {
            Ok(i) => return self.ys[i],
            Err(i) => i - 1,
        };
        let h = self.xs[i + 1] - self.xs[i];
        let s = (x - self.xs[i]) / h;
        let (s2, s3) = (s * s, s * s * s);
        (2.0 * s3 - 3.0 * s2 + 1.0) * self.ys[i]
            + (s3 - 2.0 * s2 + s) * h * self.slopes[i]
            + (-2.0 * s3 + 3.0 * s2) * self.ys[i + 1]
            + (s3 - s2) * h * self.slopes[i + 1]
    }

    fn end(&self) -> (f64, f64) {
        (*self.xs.last().unwrap(), *self.ys.last().unwrap())
    }
}

// Fritsch-Carlson slopes: no overshoot on monotone data.
fn pchip_slopes(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
    let delta: Vec<f64> = (0..n - 1).map(|i| (ys[i + 1] - ys[i]) / h[i]).collect();
    let mut m = vec![0.0; n];
    if n == 2 {
        return vec![delta[0]; 2];
    }
    for i in 1..n - 1 {
        if delta[i - 1] * delta[i] > 0.0 {
            let w1 = 2.0 * h[i] + h[i - 1];
            let w2 = h[i] + 2.0 * h[i - 1];
            m[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
        }
    }
    let end = |h0: f64, h1: f64, d0: f64, d1: f64| {
        let v = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
        if v * d0 <= 0.0 {
            0.0
        } else if d0 * d1 <= 0.0 && v.abs() > 3.0 * d0.abs() {
            3.0 * d0
        } else {
            v
        }
    };
    m[0] = end(h[0], h[1], delta[0], delta[1]);
    m[n - 1] = end(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
    m
}

/// Hermite series of an odd activation, truncated at order `2L + 1`.
#[derive(Clone, Debug)]
pub struct ActivationSeries {
    kind: ActivationKind,
    truncation: usize,
    coeffs: Vec<f64>,
    f1: f64,
    second_moment: f64,
    table: Option<Arc<OddTable>>,
}

impl ActivationSeries {
    pub fn sign(truncation: usize) -> Result<Self> {
        Self::build(ActivationKind::Sign, truncation, None)
    }

    pub fn odd_monomial(p: u32, truncation: usize) -> Result<Self> {
        if p % 2 == 0 {
            return Err(Error::Invalid(format!("x^{p} is not odd")));
        }
        Self::build(ActivationKind::OddMonomial(p), truncation, None)
    }

    pub fn tabulated(table: OddTable, truncation: usize) -> Result<Self> {
        Self::build(ActivationKind::Tabulated, truncation, Some(Arc::new(table)))
    }

    fn build(kind: ActivationKind, truncation: usize, table: Option<Arc<OddTable>>) -> Result<Self> {
        if truncation == 0 {
            return Err(Error::Invalid("truncation L must be positive".into()));
        }
        let kmax = 2 * truncation + 1;
        let (lo, hi) = match &table {
            None => match kind {
                ActivationKind::Sign => {
                    (sign_coeffs(kmax, LAGUERRE_NODES.0), sign_coeffs(kmax, LAGUERRE_NODES.1))
                }
                ActivationKind::OddMonomial(p) => {
                    let sigma = |x: f64| x.powi(p as i32);
                    (gauss_hermite_coeffs(&sigma, kmax, HERMITE_NODES.0), gauss_hermite_coeffs(&sigma, kmax, HERMITE_NODES.1))
                }
                ActivationKind::Tabulated => unreachable!(),
            },
            Some(t) => (table_coeffs(t, kmax, LEGENDRE_NODES.0), table_coeffs(t, kmax, LEGENDRE_NODES.1)),
        };
        let mut coeffs = vec![0.0; kmax + 1];
        for k in (1..=kmax).step_by(2) {
            let diff = (lo[k] - hi[k]).abs();
            if diff > QUAD_TOL * hi[k].abs().max(1.0) {
                return Err(Error::QuadratureNonConvergence { k, diff });
            }
            coeffs[k] = hi[k];
        }
        let second_moment = match (&kind, &table) {
            (ActivationKind::Sign, _) => {
                coeffs[1] = FRAC_2_PI.sqrt();
                1.0
            }
            (ActivationKind::OddMonomial(p), _) => (1..2 * *p as u64).step_by(2).map(|v| v as f64).product(),
            (_, Some(t)) => table_second_moment(t, LEGENDRE_NODES.1),
            _ => unreachable!(),
        };
        let mut series = ActivationSeries { kind, truncation, coeffs, f1: 0.0, second_moment, table };
        series.f1 = match series.kind {
            ActivationKind::Sign => 1.0,
            _ => series.series(1.0),
        };
        Ok(series)
    }

    pub fn kind(&self) -> &ActivationKind {
        &self.kind
    }

    pub fn truncation(&self) -> usize {
        self.truncation
    }

    /// `c_0..=c_{2L+1}`; even entries are exactly zero.
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeff(&self, k: usize) -> Result<f64> {
        self.coeffs.get(k).copied().ok_or(Error::UnsupportedOrder(k))
    }

    pub fn c1(&self) -> f64 {
        self.coeffs[1]
    }

    /// `f(1)`, the diagonal of the kernel matrix.
    pub fn f_at_one(&self) -> f64 {
        self.f1
    }

    /// `f(1) - c1^2`: the energy in the nonlinear part of the activation.
    pub fn alpha(&self) -> f64 {
        self.f1 - self.c1() * self.c1()
    }

    /// `E[sigma(g)^2]`. Bounds the truncated series by Parseval.
    pub fn second_moment(&self) -> f64 {
        self.second_moment
    }

    /// `k` with `sigma(t x) = t^k sigma(x)` for `t > 0`, if there is one.
    pub fn homogeneity_degree(&self) -> Option<u32> {
        match self.kind {
            ActivationKind::Sign => Some(0),
            ActivationKind::OddMonomial(p) => Some(p),
            ActivationKind::Tabulated => None,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match (&self.kind, &self.table) {
            (ActivationKind::Sign, _) => sign(x),
            (ActivationKind::OddMonomial(p), _) => x.powi(*p as i32),
            (_, Some(t)) => t.eval(x),
            _ => unreachable!(),
        }
    }

    // x * P(x^2) with P built from the odd coefficients.
    fn series(&self, x: f64) -> f64 {
        let y = x * x;
        let mut acc = 0.0;
        for k in (1..self.coeffs.len()).step_by(2).rev() {
            acc = acc * y + self.coeffs[k] * self.coeffs[k];
        }
        acc * x
    }

    fn series_prime(&self, x: f64) -> f64 {
        let y = x * x;
        let mut acc = 0.0;
        for k in (1..self.coeffs.len()).step_by(2).rev() {
            acc = acc * y + k as f64 * self.coeffs[k] * self.coeffs[k];
        }
        acc
    }

    fn check_domain(x: f64) -> Result<f64> {
        if !(x.abs() <= 1.0 + 1e-12) {
            return Err(Error::Domain(x));
        }
        Ok(x.clamp(-1.0, 1.0))
    }

    pub fn f(&self, x: f64) -> Result<f64> {
        let x = Self::check_domain(x)?;
        Ok(match self.kind {
            ActivationKind::Sign => FRAC_2_PI * x.asin(),
            _ => self.series(x),
        })
    }

    pub fn f_prime(&self, x: f64) -> Result<f64> {
        let x = Self::check_domain(x)?;
        match self.kind {
            ActivationKind::Sign => {
                let s = 1.0 - x * x;
                if s <= 0.0 {
                    return Err(Error::Singularity(x));
                }
                Ok(FRAC_2_PI / s.sqrt())
            }
            _ => Ok(self.series_prime(x)),
        }
    }

    /// `g(x) = x f'(x) + f(x)`, the interaction kernel of the gradient flow.
    pub fn g(&self, x: f64) -> Result<f64> {
        Ok(x * self.f_prime(x)? + self.f(x)?)
    }

    pub fn f_matrix(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut out = m.clone();
        for v in out.iter_mut() {
            *v = self.f(*v)?;
        }
        Ok(out)
    }

    /// `f` of the Gram matrix of unit vectors, with the diagonal pinned to
    /// `f(1)`. Rounding leaves `||b||^2 = 1 - 2^-52`, and for sign `f` has a
    /// square-root singularity at 1, which would turn that into a 1e-8 error.
    pub fn kernel_matrix(&self, gram: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut out = self.f_matrix(gram)?;
        out.fill_diagonal(self.f1);
        Ok(out)
    }

    /// `f'` entrywise off the diagonal, zero on it (where `f'` may blow up).
    pub fn f_prime_offdiag(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.offdiag_map(m, |x| self.f_prime(x))
    }

    pub fn g_offdiag(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.offdiag_map(m, |x| self.g(x))
    }

    fn offdiag_map(&self, m: &DMatrix<f64>, op: impl Fn(f64) -> Result<f64>) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(m.nrows(), m.ncols());
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                if i != j {
                    out[(i, j)] = op(m[(i, j)])?;
                }
            }
        }
        Ok(out)
    }
}

/// Sign with `sign(0) = 0` (unlike `f64::signum`).
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

// c_k = 2 int_0^inf h_k phi dx. With t = x^2/2 this is
// sqrt(2/pi) int_0^inf (h_k(x) / x) e^{-t} dt, a polynomial integrand in t.
fn sign_coeffs(kmax: usize, nodes: usize) -> Vec<f64> {
    let (ts, ws) = quad::gauss_laguerre(nodes);
    let mut c = vec![0.0; kmax + 1];
    for (t, w) in ts.iter().zip(&ws) {
        if *w == 0.0 {
            continue;
        }
        let x = (2.0 * t).sqrt();
        let h = hermite_all(x, kmax);
        for k in (1..=kmax).step_by(2) {
            c[k] += w * h[k] / x;
        }
    }
    let scale = FRAC_2_PI.sqrt();
    c.iter_mut().for_each(|v| *v *= scale);
    c
}

fn gauss_hermite_coeffs(sigma: &dyn Fn(f64) -> f64, kmax: usize, nodes: usize) -> Vec<f64> {
    let (xs, ws) = quad::gauss_hermite(nodes);
    let mut c = vec![0.0; kmax + 1];
    for (x, w) in xs.iter().zip(&ws) {
        if *w == 0.0 {
            continue;
        }
        let h = hermite_all(*x, kmax);
        let s = sigma(*x) * w;
        for k in (1..=kmax).step_by(2) {
            c[k] += s * h[k];
        }
    }
    c
}

fn panels(t: &OddTable) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for w in t.xs.windows(2) {
        let pieces = ((w[1] - w[0]) / MAX_PANEL).ceil().max(1.0) as usize;
        let h = (w[1] - w[0]) / pieces as f64;
        for p in 0..pieces {
            out.push((w[0] + p as f64 * h, w[0] + (p + 1) as f64 * h));
        }
    }
    out
}

fn table_coeffs(t: &OddTable, kmax: usize, nodes: usize) -> Vec<f64> {
    let (xs, ws) = quad::gauss_legendre(nodes);
    let mut c = vec![0.0; kmax + 1];
    for (a, b) in panels(t) {
        let (mid, half) = ((a + b) / 2.0, (b - a) / 2.0);
        for (u, w) in xs.iter().zip(&ws) {
            let x = mid + half * u;
            let h = hermite_all(x, kmax);
            let s = t.eval_pos(x) * std_normal_pdf(x) * w * half;
            for k in (1..=kmax).step_by(2) {
                c[k] += s * h[k];
            }
        }
    }
    // constant tail: int_a^inf h_k phi = h_{k-1}(a) phi(a) / sqrt(k)
    let (a, ya) = t.end();
    let h = hermite_all(a, kmax);
    for k in (1..=kmax).step_by(2) {
        c[k] += ya * h[k - 1] * std_normal_pdf(a) / (k as f64).sqrt();
        c[k] *= 2.0;
    }
    c
}

fn table_second_moment(t: &OddTable, nodes: usize) -> f64 {
    let (xs, ws) = quad::gauss_legendre(nodes);
    let mut s = 0.0;
    for (a, b) in panels(t) {
        let (mid, half) = ((a + b) / 2.0, (b - a) / 2.0);
        for (u, w) in xs.iter().zip(&ws) {
            let x = mid + half * u;
            let y = t.eval_pos(x);
            s += y * y * std_normal_pdf(x) * w * half;
        }
    }
    let (a, ya) = t.end();
    let tail = 0.5 * statrs::function::erf::erfc(a / std::f64::consts::SQRT_2);
    2.0 * (s + ya * ya * tail)
}

#[cfg(test)]
mod tests {
    use super::*;

    // Independent closed form for sign: c_{2l+1} = 2 h_{2l}(0) phi(0) / sqrt(2l+1),
    // h_{2l}(0) = (-1)^l sqrt((2l)!) / (2^l l!).
    fn sign_coeff_oracle(k: usize) -> f64 {
        let l = (k - 1) / 2;
        let mut h = 1.0f64; // h_{2l}(0), built from the ratio h_{2l}/h_{2l-2}
        for j in 1..=l {
            let j = j as f64;
            h *= -((2.0 * j - 1.0) / (2.0 * j)).sqrt();
        }
        2.0 * h * std_normal_pdf(0.0) / (k as f64).sqrt()
    }

    #[test]
    fn hermite_values() {
        let h = hermite_all(1.0, 3);
        assert!((h[3] + 2.0 / 6f64.sqrt()).abs() < 1e-15);
        let h = hermite_all(0.7, 4);
        // h_4 = (x^4 - 6x^2 + 3) / sqrt(24)
        let x: f64 = 0.7;
        assert!((h[4] - (x.powi(4) - 6.0 * x * x + 3.0) / 24f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn sign_coefficients() {
        let s = ActivationSeries::sign(8).unwrap();
        assert!((s.c1() - FRAC_2_PI.sqrt()).abs() < 1e-15);
        assert_eq!(s.coeffs().len(), 18);
        for k in (1..=17).step_by(2) {
            let want = sign_coeff_oracle(k);
            assert!((s.coeff(k).unwrap() - want).abs() < 1e-10, "k={k}");
        }
        assert!((s.coeff(3).unwrap() + 1.0 / (3.0 * PI).sqrt()).abs() < 1e-10);
        for k in (0..=16).step_by(2) {
            assert_eq!(s.coeff(k).unwrap(), 0.0);
        }
        assert!(matches!(s.coeff(18), Err(Error::UnsupportedOrder(18))));
    }

    #[test]
    fn sign_kernel_closed_form() {
        let s = ActivationSeries::sign(DEFAULT_TRUNCATION).unwrap();
        assert_eq!(s.f(1.0).unwrap(), 1.0);
        assert_eq!(s.f(0.0).unwrap(), 0.0);
        assert!((s.f(0.5).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((s.alpha() - (1.0 - FRAC_2_PI)).abs() < 1e-15);
        assert!(matches!(s.f(1.5), Err(Error::Domain(_))));
        assert!(matches!(s.f_prime(1.0), Err(Error::Singularity(_))));
        // truncated series approaches arcsin away from the endpoints
        let x: f64 = 0.4;
        let tail_free = s.series(x);
        assert!((tail_free - FRAC_2_PI * x.asin()).abs() < 1e-12);
    }

    #[test]
    fn cubic_is_exact() {
        // x^3 = sqrt(6) h_3 + 3 h_1  ->  f(x) = 9x + 6x^3, f(1) = 15
        let s = ActivationSeries::odd_monomial(3, 4).unwrap();
        assert!((s.c1() - 3.0).abs() < 1e-12);
        assert!((s.coeff(3).unwrap() - 6f64.sqrt()).abs() < 1e-12);
        assert!(s.coeff(5).unwrap().abs() < 1e-12);
        assert!((s.f_at_one() - 15.0).abs() < 1e-11);
        assert!((s.second_moment() - 15.0).abs() < 1e-15);
        assert!((s.f(0.5).unwrap() - (4.5 + 0.75)).abs() < 1e-12);
        assert!((s.f_prime(0.5).unwrap() - (9.0 + 4.5)).abs() < 1e-12);
    }

    #[test]
    fn even_monomial_rejected() {
        assert!(ActivationSeries::odd_monomial(2, 4).is_err());
        assert!(ActivationSeries::sign(0).is_err());
    }

    #[test]
    fn tabulated_linear_matches_identity() {
        let table = OddTable::new(vec![0.0, 3.0, 40.0], vec![0.0, 3.0, 40.0]).unwrap();
        let s = ActivationSeries::tabulated(table, 4).unwrap();
        assert!((s.c1() - 1.0).abs() < 1e-10);
        assert!(s.coeff(3).unwrap().abs() < 1e-10);
        assert!((s.second_moment() - 1.0).abs() < 1e-10);
        assert_eq!(s.homogeneity_degree(), None);
    }

    #[test]
    fn tabulated_step_close_to_sign() {
        // a very steep ramp behaves like sign at low order
        let table = OddTable::new(vec![0.0, 1e-3, 1.0], vec![0.0, 1.0, 1.0]).unwrap();
        let s = ActivationSeries::tabulated(table, 2).unwrap();
        assert!((s.c1() - FRAC_2_PI.sqrt()).abs() < 1e-3);
        assert!(s.coeffs().iter().map(|c| c * c).sum::<f64>() <= s.second_moment() + 1e-12);
    }

    #[test]
    fn table_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("tanh.csv");
        let mut body = String::from("x,sigma\n");
        for i in 0..=80 {
            let x = i as f64 * 0.1;
            body.push_str(&format!("{x},{}\n", x.tanh()));
        }
        std::fs::write(&p, body).unwrap();
        let t = OddTable::from_file(&p).unwrap();
        assert!((t.eval(-0.55) + 0.55f64.tanh()).abs() < 1e-4);
        let s = ActivationSeries::tabulated(t, 6).unwrap();
        assert!(s.alpha() > 0.0 && s.c1() > 0.5);
    }

    #[test]
    fn sign_of_zero_is_zero() {
        assert_eq!(sign(0.0), 0.0);
        assert_eq!(sign(-0.0), 0.0);
        assert_eq!(sign(-2.0), -1.0);
    }
}
