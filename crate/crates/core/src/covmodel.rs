//! Covariance modelling of base-forecast errors: the shrinkage estimator,
//! the Inverse-Wishart prior/posterior and rank-one inverse downdates.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::linalg::{chol_logdet, cholesky, relative_asymmetry, symmetrize};

/// In-sample residuals `r_j = y_hat_j - y_j`, one column per time step
/// (`n x T`), rows in canonical `[upper; bottom]` order.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualMatrix {
    data: DMatrix<f64>,
    labels: Vec<String>,
}

impl ResidualMatrix {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        let labels = (0..data.nrows()).map(|i| format!("series_{i}")).collect();
        Self::with_labels(data, labels)
    }

    pub fn with_labels(data: DMatrix<f64>, labels: Vec<String>) -> Result<Self> {
        if labels.len() != data.nrows() {
            return Err(Error::Dimension(format!(
                "{} labels for {} residual rows",
                labels.len(),
                data.nrows()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            let (row, col) = (pos % data.nrows(), pos / data.nrows());
            return Err(Error::InvalidArgument(format!(
                "non-finite residual for series '{}' at column {col}",
                labels[row]
            )));
        }
        Ok(Self { data, labels })
    }

    /// No observations yet.
    pub fn empty(n: usize) -> Self {
        Self::new(DMatrix::zeros(n, 0)).expect("empty matrix is finite")
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    /// Number of residual vectors `T`.
    pub fn len(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn column(&self, j: usize) -> DVector<f64> {
        self.data.column(j).into_owned()
    }

    /// `[self other]`.
    pub fn hstack(&self, other: &ResidualMatrix) -> Result<ResidualMatrix> {
        if self.n() != other.n() {
            return Err(Error::Dimension(format!(
                "cannot join residuals with {} and {} rows",
                self.n(),
                other.n()
            )));
        }
        let mut data = DMatrix::zeros(self.n(), self.len() + other.len());
        data.columns_mut(0, self.len()).copy_from(&self.data);
        data.columns_mut(self.len(), other.len()).copy_from(&other.data);
        Ok(ResidualMatrix {
            data,
            labels: self.labels.clone(),
        })
    }

    /// Residuals restricted to columns `[start, start + len)`.
    pub fn window(&self, start: usize, len: usize) -> ResidualMatrix {
        ResidualMatrix {
            data: self.data.columns(start, len).into_owned(),
            labels: self.labels.clone(),
        }
    }

    /// Adds `sum_j r_j r_j^T` to `acc` one column at a time, in column order.
    /// Keeping the order fixed makes batched accumulation bit-identical to
    /// one-shot accumulation.
    fn accumulate_outer(&self, acc: &mut DMatrix<f64>) {
        let n = self.n();
        for col in self.data.column_iter() {
            for a in 0..n {
                for b in 0..n {
                    acc[(a, b)] += col[a] * col[b];
                }
            }
        }
    }

    /// `R R^T`.
    pub fn scatter(&self) -> DMatrix<f64> {
        let mut acc = DMatrix::zeros(self.n(), self.n());
        self.accumulate_outer(&mut acc);
        symmetrize(&acc)
    }
}

/// Parameters of an Inverse-Wishart distribution `IW(psi, nu)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IwParams {
    psi: DMatrix<f64>,
    nu: f64,
}

impl IwParams {
    pub fn new(psi: DMatrix<f64>, nu: f64) -> Result<Self> {
        let n = psi.nrows();
        if !psi.is_square() {
            return Err(Error::Dimension("IW scale matrix must be square".into()));
        }
        if relative_asymmetry(&psi) > 1e-12 {
            return Err(Error::NotSpd("IW scale matrix is not symmetric".into()));
        }
        cholesky(&psi, "IW scale matrix")?;
        if !(nu > n as f64 - 1.0) || !nu.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "IW degrees of freedom {nu} must exceed n - 1 = {}",
                n as f64 - 1.0
            )));
        }
        Ok(Self { psi, nu })
    }

    pub fn psi(&self) -> &DMatrix<f64> {
        &self.psi
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn dim(&self) -> usize {
        self.psi.nrows()
    }

    /// `psi / (nu - n - 1)`, defined for `nu > n + 1`.
    pub fn mean(&self) -> Option<DMatrix<f64>> {
        let denom = self.nu - self.dim() as f64 - 1.0;
        (denom > 0.0).then(|| &self.psi / denom)
    }

    /// Log density of `IW(psi, nu)` at `w`.
    pub fn log_density(&self, w: &DMatrix<f64>) -> Result<f64> {
        let n = self.dim();
        if w.shape() != (n, n) {
            return Err(Error::Dimension("IW argument has the wrong shape".into()));
        }
        let w_chol = cholesky(w, "IW argument")?;
        let psi_chol = cholesky(&self.psi, "IW scale matrix")?;
        let nf = n as f64;
        let trace = w_chol.solve(&self.psi).trace();
        let ln_mvgamma = nf * (nf - 1.0) / 4.0 * std::f64::consts::PI.ln()
            + (0..n)
                .map(|j| ln_gamma(0.5 * (self.nu - j as f64)))
                .sum::<f64>();
        Ok(0.5 * self.nu * chol_logdet(&psi_chol)
            - 0.5 * self.nu * nf * std::f64::consts::LN_2
            - ln_mvgamma
            - 0.5 * (self.nu + nf + 1.0) * chol_logdet(&w_chol)
            - 0.5 * trace)
    }
}

/// Result of [`shrinkage_covariance`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShrinkageEstimate {
    pub covariance: DMatrix<f64>,
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ShrinkageOptions {
    /// Use this intensity instead of estimating it.
    pub lambda: Option<f64>,
    /// Subtract per-series means first. Diagnostics only: the likelihood
    /// assumes zero-mean residuals.
    pub center: bool,
}

/// Sample second-moment matrix shrunk toward its diagonal, with the
/// intensity estimated from the variance of the sample correlations.
pub fn shrinkage_covariance(r: &ResidualMatrix) -> Result<ShrinkageEstimate> {
    shrinkage_covariance_with(r, ShrinkageOptions::default())
}

pub fn shrinkage_covariance_with(
    r: &ResidualMatrix,
    opts: ShrinkageOptions,
) -> Result<ShrinkageEstimate> {
    let t = r.len();
    let n = r.n();
    if t < 2 {
        return Err(Error::InsufficientData(format!(
            "shrinkage covariance needs at least 2 residual vectors, got {t}"
        )));
    }
    let mut x = r.matrix().clone();
    if opts.center {
        for mut row in x.row_iter_mut() {
            let mean = row.mean();
            row.add_scalar_mut(-mean);
        }
    }
    let tf = t as f64;
    let sample = symmetrize(&(&x * x.transpose() / tf));
    let var = sample.diagonal();
    for i in 0..n {
        if !(var[i] > 0.0) {
            return Err(Error::DegenerateSeries(r.labels()[i].clone()));
        }
    }
    let sd = var.map(f64::sqrt);

    let lambda = match opts.lambda {
        Some(l) if (0.0..=1.0).contains(&l) => l,
        Some(l) => {
            return Err(Error::InvalidArgument(format!(
                "shrinkage intensity {l} outside [0, 1]"
            )))
        }
        None => {
            // Standardized residuals w_ki = x_ki / sd_i; the sample correlation
            // is mean_k(w_ki w_kj) and its variance is estimated from the
            // spread of the products w_ki w_kj.
            let mut w = x.clone();
            for i in 0..n {
                w.row_mut(i).scale_mut(1.0 / sd[i]);
            }
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let mut sum = 0.0;
                    let mut sum_sq = 0.0;
                    for k in 0..t {
                        let p = w[(i, k)] * w[(j, k)];
                        sum += p;
                        sum_sq += p * p;
                    }
                    num += (sum_sq - sum * sum / tf) / (tf * (tf - 1.0));
                    let corr = sample[(i, j)] / (sd[i] * sd[j]);
                    den += corr * corr;
                }
            }
            if den > 0.0 {
                (num / den).clamp(0.0, 1.0)
            } else {
                1.0
            }
        }
    };

    let mut covariance = sample * (1.0 - lambda);
    for i in 0..n {
        covariance[(i, i)] += lambda * var[i];
    }
    Ok(ShrinkageEstimate { covariance, lambda })
}

/// Conjugate update `(psi_0 + R R^T, nu_0 + T)`.
pub fn iw_posterior(prior: &IwParams, r: &ResidualMatrix) -> Result<IwParams> {
    if r.n() != prior.dim() {
        return Err(Error::Dimension(format!(
            "residuals have {} series, prior has dimension {}",
            r.n(),
            prior.dim()
        )));
    }
    let mut psi = prior.psi.clone();
    r.accumulate_outer(&mut psi);
    Ok(IwParams {
        psi: symmetrize(&psi),
        nu: prior.nu + r.len() as f64,
    })
}

/// Mode of `IW(psi, nu)`: `psi / (nu + n + 1)`.
pub fn iw_map(post: &IwParams) -> DMatrix<f64> {
    &post.psi / (post.nu + post.dim() as f64 + 1.0)
}

/// Tolerance on `1 - r^T M^{-1} r` below which a downdate is refused.
pub const DOWNDATE_TOL: f64 = 1e-12;

/// Given `M^{-1}` and `log det M`, returns the inverse and log-determinant of
/// `M - r r^T`.
pub fn sherman_morrison_downdate(
    m_inv: &DMatrix<f64>,
    logdet: f64,
    r: &DVector<f64>,
) -> Result<(DMatrix<f64>, f64)> {
    if m_inv.nrows() != r.len() || !m_inv.is_square() {
        return Err(Error::Dimension(format!(
            "downdate vector has length {}, matrix is {}x{}",
            r.len(),
            m_inv.nrows(),
            m_inv.ncols()
        )));
    }
    let v = m_inv * r;
    let denom = 1.0 - r.dot(&v);
    if !(denom > DOWNDATE_TOL) {
        return Err(Error::DowndateSingular(denom));
    }
    let inv = symmetrize(&(m_inv + &v * v.transpose() / denom));
    Ok((inv, logdet + denom.ln()))
}
