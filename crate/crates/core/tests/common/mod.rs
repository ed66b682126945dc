//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::function::gamma::ln_gamma;
use trec::Hierarchy;

pub fn rng(seed: u64) -> ChaCha8Rng {
    trec::rng::stream_rng(seed, 0)
}

pub fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

pub fn normal_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

/// `X X^T / k + ridge I` with `X` of size `n x k`.
pub fn random_spd(rng: &mut ChaCha8Rng, n: usize, ridge: f64) -> DMatrix<f64> {
    let x = normal_matrix(rng, n, n + 2);
    let mut m = &x * x.transpose() / (n + 2) as f64;
    for i in 0..n {
        m[(i, i)] += ridge;
    }
    (&m + m.transpose()) * 0.5
}

/// Random aggregation matrix with no empty rows.
pub fn random_hierarchy(rng: &mut ChaCha8Rng, n_u: usize, n_b: usize) -> Hierarchy {
    let rows: Vec<Vec<i64>> = (0..n_u)
        .map(|_| loop {
            let row: Vec<i64> = (0..n_b).map(|_| rng.random_bool(0.5) as i64).collect();
            if row.contains(&1) {
                break row;
            }
        })
        .collect();
    Hierarchy::new(
        (0..n_u).map(|i| format!("U{i}")).collect(),
        (0..n_b).map(|i| format!("B{i}")).collect(),
        &rows,
    )
    .unwrap()
}

/// Total, one aggregate per group, and the bottom series of each group.
pub fn grouped_hierarchy(group_sizes: &[usize]) -> Hierarchy {
    let n_b: usize = group_sizes.iter().sum();
    let group_of: Vec<usize> = group_sizes
        .iter()
        .enumerate()
        .flat_map(|(g, &k)| std::iter::repeat_n(g, k))
        .collect();
    let mut rows = vec![vec![1i64; n_b]];
    let mut upper = vec!["Total".to_string()];
    if group_sizes.len() > 1 {
        for g in 0..group_sizes.len() {
            rows.push(group_of.iter().map(|&x| (x == g) as i64).collect());
            upper.push(format!("G{g}"));
        }
    }
    let bottom = (0..n_b).map(|j| format!("G{}_{j}", group_of[j])).collect();
    Hierarchy::new(upper, bottom, &rows).unwrap()
}

/// Positive seasonal random-walk bottom series aggregated through `h`, as a
/// `t_obs x n` matrix in canonical order.
pub fn simulate_dataset(h: &Hierarchy, t_obs: usize, season: usize, seed: u64) -> DMatrix<f64> {
    let mut g = rng(seed);
    let n_b = h.n_bottom();
    let mut level: Vec<f64> = (0..n_b).map(|_| g.random_range(50.0..150.0)).collect();
    let amp: Vec<f64> = (0..n_b).map(|_| g.random_range(0.0..20.0)).collect();
    let phase: Vec<f64> = (0..n_b).map(|_| g.random_range(0.0..6.3)).collect();
    let mut out = DMatrix::zeros(t_obs, h.n());
    for t in 0..t_obs {
        let b = DVector::from_fn(n_b, |j, _| {
            let z: f64 = StandardNormal.sample(&mut g);
            level[j] += 0.5 * z;
            let e: f64 = StandardNormal.sample(&mut g);
            let angle = 2.0 * std::f64::consts::PI * t as f64 / season as f64 + phase[j];
            level[j] + amp[j] * angle.sin() + 2.0 * e
        });
        let y = h.aggregate(&b).unwrap();
        out.row_mut(t).copy_from(&y.transpose());
    }
    out
}

/// Multivariate-t log density written out from the textbook formula.
pub fn mvt_logpdf(x: &DVector<f64>, loc: &DVector<f64>, scale: &DMatrix<f64>, df: f64) -> f64 {
    let p = x.len() as f64;
    let chol = scale.clone().cholesky().expect("SPD scale");
    let d = x - loc;
    let maha = d.dot(&chol.solve(&d));
    let logdet = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum::<f64>();
    ln_gamma((df + p) / 2.0)
        - ln_gamma(df / 2.0)
        - 0.5 * p * (df * std::f64::consts::PI).ln()
        - 0.5 * logdet
        - 0.5 * (df + p) * (1.0 + maha / df).ln()
}

/// LOO objective terms computed with one dense factorization per left-out column.
pub fn naive_loo_terms(psi_mean: &DMatrix<f64>, r: &DMatrix<f64>, nu: f64) -> Vec<f64> {
    let n = r.nrows();
    let t = r.ncols();
    let psi0 = psi_mean * (nu - n as f64 - 1.0);
    let df = nu + t as f64 - n as f64;
    (0..t)
        .map(|i| {
            let mut m = psi0.clone();
            for j in 0..t {
                if j != i {
                    let c = r.column(j);
                    m += c * c.transpose();
                }
            }
            mvt_logpdf(&r.column(i).into_owned(), &DVector::zeros(n), &(m / df), df)
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
        + simpson_rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

/// Adaptive Simpson quadrature on a finite interval.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    // Start from a few panels so narrow features are not missed.
    let panels = 16;
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|k| {
            let (x0, x1) = (a + k as f64 * h, a + (k + 1) as f64 * h);
            let (f0, f1, fm) = (f(x0), f(x1), f(0.5 * (x0 + x1)));
            let whole = (x1 - x0) / 6.0 * (f0 + 4.0 * fm + f1);
            simpson_rec(f, x0, x1, f0, fm, f1, whole, tol / panels as f64, 40)
        })
        .sum()
}

/// `int_0^inf g(x) dx` via `x = s t / (1 - t)`.
pub fn integrate_half_line(g: &dyn Fn(f64) -> f64, s: f64, tol: f64) -> f64 {
    let h = |t: f64| {
        if t >= 1.0 {
            return 0.0;
        }
        let x = s * t / (1.0 - t);
        g(x) * s / ((1.0 - t) * (1.0 - t))
    };
    integrate(&h, 0.0, 1.0, tol)
}

/// `int (F(x) - 1{x >= y})^2 dx` by quadrature.
pub fn crps_by_quadrature(cdf: &dyn Fn(f64) -> f64, y: f64, scale: f64) -> f64 {
    let below = integrate_half_line(&|x| cdf(y - x).powi(2), scale, 1e-11);
    let above = integrate_half_line(&|x| (1.0 - cdf(y + x)).powi(2), scale, 1e-11);
    below + above
}
