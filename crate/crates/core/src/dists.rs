//! Gaussian and multivariate-t forecast distributions.
//!
//! Both families are stored as a location, a scale matrix and a factor `F`
//! with `scale = F F^T`. For full-rank distributions `F` is the Cholesky
//! factor. Coherent reconciled distributions live on the subspace `y = S b`
//! and are represented by the image of the bottom-level distribution under
//! `S` (a rank-deficient scale with factor `S L_B`); they can be sampled and
//! marginalized but have no density on the full space.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal, StudentsT};
use statrs::function::beta::ln_beta;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::linalg::{chol_logdet, chol_quad_form, cholesky, symmetrize};
use crate::rng::stream_rng;

#[derive(Debug, Clone)]
struct Elliptical {
    loc: DVector<f64>,
    scale: DMatrix<f64>,
    factor: DMatrix<f64>,
    chol: Option<Cholesky<f64, Dyn>>,
}

impl Elliptical {
    fn new(loc: DVector<f64>, scale: DMatrix<f64>, what: &str) -> Result<Self> {
        if scale.shape() != (loc.len(), loc.len()) {
            return Err(Error::Dimension(format!(
                "{what}: location has length {}, scale is {}x{}",
                loc.len(),
                scale.nrows(),
                scale.ncols()
            )));
        }
        if loc.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("{what}: non-finite location")));
        }
        let scale = symmetrize(&scale);
        let chol = cholesky(&scale, what)?;
        Ok(Self {
            loc,
            factor: chol.l(),
            scale,
            chol: Some(chol),
        })
    }

    fn map_affine(&self, m: &DMatrix<f64>, shift: Option<&DVector<f64>>) -> Result<Self> {
        if m.ncols() != self.loc.len() {
            return Err(Error::Dimension(format!(
                "affine map has {} columns, distribution has dimension {}",
                m.ncols(),
                self.loc.len()
            )));
        }
        let mut loc = m * &self.loc;
        if let Some(s) = shift {
            loc += s;
        }
        let scale = symmetrize(&(m * &self.scale * m.transpose()));
        let factor = m * &self.factor;
        let chol = if m.nrows() <= self.factor.ncols() {
            Cholesky::new(scale.clone())
        } else {
            None
        };
        Ok(Self {
            loc,
            scale,
            factor,
            chol,
        })
    }

    fn dim(&self) -> usize {
        self.loc.len()
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.dim() {
            return Err(Error::Dimension(format!(
                "series index {i} out of range for dimension {}",
                self.dim()
            )));
        }
        Ok(())
    }

    fn chol(&self) -> Result<&Cholesky<f64, Dyn>> {
        self.chol
            .as_ref()
            .ok_or_else(|| Error::NotSpd("distribution is degenerate (rank-deficient scale)".into()))
    }
}

/// `N(mean, cov)`.
#[derive(Debug, Clone)]
pub struct MultivariateGaussian(Elliptical);

impl MultivariateGaussian {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        Ok(Self(Elliptical::new(mean, cov, "Gaussian covariance")?))
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.0.loc
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.0.scale
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    /// Whether the covariance is positive definite.
    pub fn is_full_rank(&self) -> bool {
        self.0.chol.is_some()
    }

    /// Distribution of `M X`.
    pub fn map_affine(&self, m: &DMatrix<f64>) -> Result<Self> {
        Ok(Self(self.0.map_affine(m, None)?))
    }

    pub fn logpdf(&self, x: &DVector<f64>) -> Result<f64> {
        check_point(self.dim(), x)?;
        let chol = self.0.chol()?;
        let n = self.dim() as f64;
        let maha = chol_quad_form(chol, &(x - &self.0.loc));
        Ok(-0.5 * (n * (2.0 * PI).ln() + chol_logdet(chol) + maha))
    }

    pub fn marginal(&self, i: usize) -> Result<UnivariateForecast> {
        self.0.check_index(i)?;
        Ok(UnivariateForecast::Gaussian {
            loc: self.0.loc[i],
            scale: self.0.scale[(i, i)].sqrt(),
        })
    }

    /// `k x n` matrix of draws.
    pub fn sample(&self, k: usize, seed: u64) -> DMatrix<f64> {
        self.sample_with(k, &mut stream_rng(seed, 0))
    }

    pub fn sample_with<R: Rng>(&self, k: usize, rng: &mut R) -> DMatrix<f64> {
        sample_elliptical(&self.0, k, None, rng)
    }
}

/// Location-scale multivariate t, `mt(loc, scale, df)`.
#[derive(Debug, Clone)]
pub struct MultivariateT {
    inner: Elliptical,
    df: f64,
}

impl MultivariateT {
    pub fn new(loc: DVector<f64>, scale: DMatrix<f64>, df: f64) -> Result<Self> {
        if !(df > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "degrees of freedom must be positive, got {df}"
            )));
        }
        Ok(Self {
            inner: Elliptical::new(loc, scale, "multivariate-t scale")?,
            df,
        })
    }

    pub fn loc(&self) -> &DVector<f64> {
        &self.inner.loc
    }

    pub fn scale(&self) -> &DMatrix<f64> {
        &self.inner.scale
    }

    pub fn df(&self) -> f64 {
        self.df
    }

    pub fn dim(&self) -> usize {
        self.inner.dim()
    }

    pub fn is_full_rank(&self) -> bool {
        self.inner.chol.is_some()
    }

    /// `scale * df / (df - 2)`; undefined for `df <= 2`.
    pub fn covariance(&self) -> Option<DMatrix<f64>> {
        (self.df > 2.0).then(|| &self.inner.scale * (self.df / (self.df - 2.0)))
    }

    /// Distribution of `M X` (closure of the family under linear maps).
    pub fn map_affine(&self, m: &DMatrix<f64>) -> Result<Self> {
        Ok(Self {
            inner: self.inner.map_affine(m, None)?,
            df: self.df,
        })
    }

    pub fn logpdf(&self, x: &DVector<f64>) -> Result<f64> {
        check_point(self.dim(), x)?;
        let chol = self.inner.chol()?;
        let n = self.dim() as f64;
        let nu = self.df;
        let maha = chol_quad_form(chol, &(x - &self.inner.loc));
        Ok(ln_gamma(0.5 * (nu + n)) - ln_gamma(0.5 * nu)
            - 0.5 * n * (nu * PI).ln()
            - 0.5 * chol_logdet(chol)
            - 0.5 * (nu + n) * (maha / nu).ln_1p())
    }

    pub fn marginal(&self, i: usize) -> Result<UnivariateForecast> {
        self.inner.check_index(i)?;
        Ok(UnivariateForecast::StudentT {
            loc: self.inner.loc[i],
            scale: self.inner.scale[(i, i)].sqrt(),
            df: self.df,
        })
    }

    pub fn sample(&self, k: usize, seed: u64) -> DMatrix<f64> {
        self.sample_with(k, &mut stream_rng(seed, 0))
    }

    pub fn sample_with<R: Rng>(&self, k: usize, rng: &mut R) -> DMatrix<f64> {
        sample_elliptical(&self.inner, k, Some(self.df), rng)
    }
}

fn check_point(n: usize, x: &DVector<f64>) -> Result<()> {
    if x.len() != n {
        return Err(Error::Dimension(format!(
            "point has length {}, distribution has dimension {n}",
            x.len()
        )));
    }
    Ok(())
}

/// Each draw uses `factor.ncols()` standard normals followed, for the t
/// family, by one chi-square variate.
fn sample_elliptical<R: Rng>(e: &Elliptical, k: usize, df: Option<f64>, rng: &mut R) -> DMatrix<f64> {
    let n = e.dim();
    let m = e.factor.ncols();
    let chi = df.map(|d| ChiSquared::new(d).expect("df is positive"));
    let mut out = DMatrix::zeros(k, n);
    let mut z = DVector::zeros(m);
    for row in 0..k {
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        let mut x = &e.factor * &z;
        if let (Some(chi), Some(d)) = (&chi, df) {
            let w: f64 = chi.sample(rng);
            x *= (d / w).sqrt();
        }
        for c in 0..n {
            out[(row, c)] = e.loc[c] + x[c];
        }
    }
    out
}

/// Either family, as produced by reconciliation.
#[derive(Debug, Clone)]
pub enum JointDistribution {
    Gaussian(MultivariateGaussian),
    StudentT(MultivariateT),
}

impl JointDistribution {
    pub fn dim(&self) -> usize {
        match self {
            Self::Gaussian(g) => g.dim(),
            Self::StudentT(t) => t.dim(),
        }
    }

    pub fn location(&self) -> &DVector<f64> {
        match self {
            Self::Gaussian(g) => g.mean(),
            Self::StudentT(t) => t.loc(),
        }
    }

    pub fn scale_matrix(&self) -> &DMatrix<f64> {
        match self {
            Self::Gaussian(g) => g.cov(),
            Self::StudentT(t) => t.scale(),
        }
    }

    pub fn df(&self) -> Option<f64> {
        match self {
            Self::Gaussian(_) => None,
            Self::StudentT(t) => Some(t.df()),
        }
    }

    pub fn marginal(&self, i: usize) -> Result<UnivariateForecast> {
        match self {
            Self::Gaussian(g) => g.marginal(i),
            Self::StudentT(t) => t.marginal(i),
        }
    }

    pub fn marginals(&self) -> Vec<UnivariateForecast> {
        (0..self.dim())
            .map(|i| self.marginal(i).expect("index in range"))
            .collect()
    }

    pub fn sample_with<R: Rng>(&self, k: usize, rng: &mut R) -> DMatrix<f64> {
        match self {
            Self::Gaussian(g) => g.sample_with(k, rng),
            Self::StudentT(t) => t.sample_with(k, rng),
        }
    }

    pub fn sample(&self, k: usize, seed: u64) -> DMatrix<f64> {
        self.sample_with(k, &mut stream_rng(seed, 0))
    }

    pub fn to_file(&self) -> DistributionFile {
        let scale = self.scale_matrix();
        DistributionFile {
            kind: match self {
                Self::Gaussian(_) => DistributionKind::Gaussian,
                Self::StudentT(_) => DistributionKind::Mvt,
            },
            loc: self.location().iter().copied().collect(),
            scale: scale.row_iter().map(|r| r.iter().copied().collect()).collect(),
            df: self.df(),
        }
    }

    /// Parses a serialized full-rank distribution.
    pub fn from_file(file: &DistributionFile) -> Result<Self> {
        let n = file.loc.len();
        if file.scale.len() != n || file.scale.iter().any(|r| r.len() != n) {
            return Err(Error::Dimension("scale matrix does not match location".into()));
        }
        let loc = DVector::from_vec(file.loc.clone());
        let scale = DMatrix::from_fn(n, n, |i, j| file.scale[i][j]);
        match file.kind {
            DistributionKind::Gaussian => Ok(Self::Gaussian(MultivariateGaussian::new(loc, scale)?)),
            DistributionKind::Mvt => {
                let df = file
                    .df
                    .ok_or_else(|| Error::Parse("mvt distribution requires 'df'".into()))?;
                Ok(Self::StudentT(MultivariateT::new(loc, scale, df)?))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistributionKind {
    Gaussian,
    Mvt,
}

/// Serialized form: `{"kind", "loc", "scale", "df"?}`. For the Gaussian
/// family `scale` holds the covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionFile {
    pub kind: DistributionKind,
    pub loc: Vec<f64>,
    pub scale: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub df: Option<f64>,
}

/// A univariate marginal forecast.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UnivariateForecast {
    Gaussian { loc: f64, scale: f64 },
    StudentT { loc: f64, scale: f64, df: f64 },
}

impl UnivariateForecast {
    pub fn loc(&self) -> f64 {
        match *self {
            Self::Gaussian { loc, .. } | Self::StudentT { loc, .. } => loc,
        }
    }

    pub fn scale(&self) -> f64 {
        match *self {
            Self::Gaussian { scale, .. } | Self::StudentT { scale, .. } => scale,
        }
    }

    fn standardize(&self, y: f64) -> f64 {
        (y - self.loc()) / self.scale()
    }

    pub fn cdf(&self, y: f64) -> f64 {
        let z = self.standardize(y);
        match *self {
            Self::Gaussian { .. } => std_normal().cdf(z),
            Self::StudentT { df, .. } => std_t(df).cdf(z),
        }
    }

    pub fn pdf(&self, y: f64) -> f64 {
        let z = self.standardize(y);
        let std_pdf = match *self {
            Self::Gaussian { .. } => std_normal().pdf(z),
            Self::StudentT { df, .. } => std_t(df).pdf(z),
        };
        std_pdf / self.scale()
    }

    /// Quantile function of the forecast.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidArgument(format!("probability {p} outside (0, 1)")));
        }
        let q = match *self {
            Self::Gaussian { .. } => std_normal().inverse_cdf(p),
            Self::StudentT { df, .. } => t_quantile(p, df),
        };
        Ok(self.loc() + self.scale() * q)
    }

    /// Equal-tailed central interval with coverage `level`.
    pub fn prediction_interval(&self, level: f64) -> Result<(f64, f64)> {
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::InvalidArgument(format!("level {level} outside (0, 1)")));
        }
        let half = self.quantile(0.5 * (1.0 + level))? - self.loc();
        Ok((self.loc() - half, self.loc() + half))
    }

    /// Closed-form continuous ranked probability score at `y`. Infinite for
    /// Student-t forecasts with `df <= 1`.
    pub fn crps(&self, y: f64) -> f64 {
        let z = self.standardize(y);
        let s = self.scale();
        match *self {
            Self::Gaussian { .. } => {
                let n = std_normal();
                s * (z * (2.0 * n.cdf(z) - 1.0) + 2.0 * n.pdf(z) - 1.0 / PI.sqrt())
            }
            Self::StudentT { df, .. } => {
                if df <= 1.0 {
                    return f64::INFINITY;
                }
                let t = std_t(df);
                let c1 = 2.0 * t.pdf(z) * (df + z * z) / (df - 1.0);
                let c2 = 2.0 * df.sqrt() * (ln_beta(0.5, df - 0.5) - 2.0 * ln_beta(0.5, 0.5 * df)).exp()
                    / (df - 1.0);
                s * (z * (2.0 * t.cdf(z) - 1.0) + c1 - c2)
            }
        }
    }
}

fn std_normal() -> Normal {
    Normal::standard()
}

fn std_t(df: f64) -> StudentsT {
    StudentsT::new(0.0, 1.0, df).expect("df is positive")
}

/// Quantile of the standard t distribution: incomplete-beta inversion
/// followed by Newton polishing on the CDF.
pub fn t_quantile(p: f64, df: f64) -> f64 {
    if df.is_infinite() {
        return std_normal().inverse_cdf(p);
    }
    let t = std_t(df);
    let mut x = t.inverse_cdf(p);
    if !x.is_finite() {
        x = std_normal().inverse_cdf(p);
    }
    for _ in 0..4 {
        let f = t.pdf(x);
        if !(f > 0.0) {
            break;
        }
        let step = (t.cdf(x) - p) / f;
        x -= step;
        if step.abs() <= 1e-14 * x.abs().max(1.0) {
            break;
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn t_logpdf_limits() {
        let cauchy = MultivariateT::new(DVector::zeros(1), DMatrix::identity(1, 1), 1.0).unwrap();
        assert_relative_eq!(cauchy.logpdf(&DVector::zeros(1)).unwrap(), -PI.ln(), epsilon = 1e-12);
        let near_gauss = MultivariateT::new(DVector::zeros(1), DMatrix::identity(1, 1), 1e6).unwrap();
        assert!((near_gauss.logpdf(&DVector::zeros(1)).unwrap() + 0.5 * (2.0 * PI).ln()).abs() < 1e-4);
    }

    #[test]
    fn marginal_keeps_df() {
        let d = MultivariateT::new(DVector::from_vec(vec![1.0, 2.0]), DMatrix::identity(2, 2), 5.0).unwrap();
        assert_eq!(
            d.marginal(1).unwrap(),
            UnivariateForecast::StudentT { loc: 2.0, scale: 1.0, df: 5.0 }
        );
        assert!(d.marginal(2).is_err());
    }

    #[test]
    fn gaussian_interval() {
        let f = UnivariateForecast::Gaussian { loc: 0.0, scale: 1.0 };
        let (l, u) = f.prediction_interval(0.95).unwrap();
        assert_relative_eq!(u, 1.959963984540054, epsilon = 1e-9);
        assert_relative_eq!(l, -u, epsilon = 1e-15);
        assert!(f.prediction_interval(1.0).is_err());
        assert!(f.prediction_interval(0.0).is_err());
    }

    #[test]
    fn t_interval_limits_and_ordering() {
        let g = UnivariateForecast::Gaussian { loc: 0.0, scale: 1.0 }.prediction_interval(0.95).unwrap();
        let t = UnivariateForecast::StudentT { loc: 0.0, scale: 1.0, df: 1e5 }
            .prediction_interval(0.95)
            .unwrap();
        assert!((t.1 - g.1).abs() < 1e-3);
        for df in [1.0, 2.5, 5.0, 30.0, 1000.0] {
            let t = UnivariateForecast::StudentT { loc: 0.0, scale: 1.0, df }
                .prediction_interval(0.95)
                .unwrap();
            assert!(t.1 - t.0 > g.1 - g.0, "df {df}");
        }
    }

    #[test]
    fn t_quantile_known_values() {
        // Tabulated two-sided 95% critical values.
        assert_relative_eq!(t_quantile(0.975, 1.0), 12.706204736174705, epsilon = 1e-9);
        assert_relative_eq!(t_quantile(0.975, 5.0), 2.570581835636314, epsilon = 1e-10);
        assert_relative_eq!(t_quantile(0.975, 30.0), 2.042272456301238, epsilon = 1e-10);
        assert_relative_eq!(t_quantile(0.9, 10.0), 1.372183641110336, epsilon = 1e-10);
    }

    #[test]
    fn crps_gaussian_at_center_and_scaling() {
        let f = UnivariateForecast::Gaussian { loc: 0.0, scale: 1.0 };
        assert_relative_eq!(f.crps(0.0), (2.0 / PI).sqrt() - 1.0 / PI.sqrt(), epsilon = 1e-14);
        let sigma = 3.7;
        let g = UnivariateForecast::Gaussian { loc: 0.0, scale: sigma };
        assert_relative_eq!(g.crps(sigma * 0.8), sigma * f.crps(0.8), epsilon = 1e-12);
    }

    #[test]
    fn crps_nonnegative() {
        for y in [-10.0, -1.0, 0.0, 0.3, 4.0] {
            assert!(UnivariateForecast::Gaussian { loc: 0.2, scale: 0.5 }.crps(y) >= 0.0);
            assert!(UnivariateForecast::StudentT { loc: 0.2, scale: 0.5, df: 3.0 }.crps(y) >= 0.0);
        }
        assert!(UnivariateForecast::StudentT { loc: 0.0, scale: 1.0, df: 1.0 }.crps(0.0).is_infinite());
    }

    #[test]
    fn sampling_is_deterministic() {
        let d = MultivariateT::new(
            DVector::from_vec(vec![1.0, -1.0]),
            DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
            4.0,
        )
        .unwrap();
        assert_eq!(d.sample(100, 11), d.sample(100, 11));
        assert_ne!(d.sample(100, 11), d.sample(100, 12));
    }

    #[test]
    fn degenerate_image_has_no_density() {
        let b = MultivariateGaussian::new(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        let s = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 1.0, 0.0, 0.0, 1.0]);
        let y = b.map_affine(&s).unwrap();
        assert!(!y.is_full_rank());
        assert!(y.logpdf(&DVector::zeros(3)).is_err());
        assert_eq!(y.cov()[(0, 0)], 2.0);
        let draws = y.sample(50, 3);
        for r in 0..50 {
            assert_relative_eq!(draws[(r, 0)], draws[(r, 1)] + draws[(r, 2)], epsilon = 1e-12);
        }
    }

    #[test]
    fn file_round_trip() {
        let d = JointDistribution::StudentT(
            MultivariateT::new(DVector::from_vec(vec![1.0, 2.0]), DMatrix::identity(2, 2) * 2.0, 7.5).unwrap(),
        );
        let json = serde_json::to_string(&d.to_file()).unwrap();
        assert!(json.contains("\"kind\":\"mvt\""));
        let back = JointDistribution::from_file(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back.df(), Some(7.5));
        assert_eq!(back.location(), d.location());
        let g = JointDistribution::Gaussian(
            MultivariateGaussian::new(DVector::zeros(1), DMatrix::identity(1, 1)).unwrap(),
        );
        let json = serde_json::to_string(&g.to_file()).unwrap();
        assert!(!json.contains("df"));
    }
}
