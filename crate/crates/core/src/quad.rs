// Gauss rules from the Jacobi matrix (Golub-Welsch).

use nalgebra::{DMatrix, SymmetricEigen};

fn golub_welsch(diag: &[f64], off: &[f64], mu0: f64) -> (Vec<f64>, Vec<f64>) {
    let n = diag.len();
    let mut j = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        j[(i, i)] = diag[i];
        if i + 1 < n {
            j[(i, i + 1)] = off[i];
            j[(i + 1, i)] = off[i];
        }
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], mu0 * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

// (L_n(t), L_{n+1}(t)) by the three-term recurrence.
fn laguerre_pair(n: usize, t: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, 1.0 - t);
    for k in 1..=n {
        let k = k as f64;
        let p2 = ((2.0 * k + 1.0 - t) * p1 - k * p0) / (k + 1.0);
        p0 = p1;
        p1 = p2;
    }
    (p0, p1)
}

/// Nodes/weights for `int_0^inf F(t) e^{-t} dt`. Golub-Welsch nodes are
/// polished by Newton on `L_n`; weights use `t / ((n+1) L_{n+1}(t))^2`, which
/// keeps full relative accuracy where the eigenvector route does not.
pub(crate) fn gauss_laguerre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let diag: Vec<f64> = (0..n).map(|i| 2.0 * i as f64 + 1.0).collect();
    let off: Vec<f64> = (1..n).map(|i| i as f64).collect();
    let (mut ts, _) = golub_welsch(&diag, &off, 1.0);
    let nf = n as f64;
    let mut ws = vec![0.0; n];
    for (t, w) in ts.iter_mut().zip(ws.iter_mut()) {
        for _ in 0..4 {
            let (ln1, ln) = laguerre_pair(n - 1, *t);
            let dln = nf * (ln - ln1) / *t;
            let step = ln / dln;
            if !step.is_finite() {
                break;
            }
            *t -= step;
        }
        let (_, lnp1) = laguerre_pair(n, *t);
        let v = *t / ((nf + 1.0) * lnp1).powi(2);
        *w = if v.is_finite() { v } else { 0.0 };
    }
    (ts, ws)
}

/// Nodes/weights for `E[F(g)]`, `g ~ N(0, 1)`. Newton-polished like the
/// Laguerre rule, with Christoffel weights `1 / (n h_{n-1}(x)^2)`.
pub(crate) fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let diag = vec![0.0; n];
    let off: Vec<f64> = (1..n).map(|k| (k as f64).sqrt()).collect();
    let (mut xs, _) = golub_welsch(&diag, &off, 1.0);
    let nf = n as f64;
    let mut ws = vec![0.0; n];
    for (x, w) in xs.iter_mut().zip(ws.iter_mut()) {
        for _ in 0..4 {
            let h = crate::activation::hermite_all(*x, n);
            let step = h[n] / (nf.sqrt() * h[n - 1]);
            if !step.is_finite() {
                break;
            }
            *x -= step;
        }
        let h = crate::activation::hermite_all(*x, n);
        let v = 1.0 / (nf * h[n - 1] * h[n - 1]);
        *w = if v.is_finite() { v } else { 0.0 };
    }
    (xs, ws)
}

/// Nodes/weights on [-1, 1].
pub(crate) fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let diag = vec![0.0; n];
    let off: Vec<f64> = (1..n)
        .map(|k| {
            let k = k as f64;
            k / (4.0 * k * k - 1.0).sqrt()
        })
        .collect();
    golub_welsch(&diag, &off, 2.0)
}
