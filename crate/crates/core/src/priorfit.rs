//! Eliciting the Inverse-Wishart prior.
//!
//! The prior mean `Psi` is the shrinkage covariance of residuals from simple
//! per-series baselines (naive or seasonal naive). The degrees of freedom
//! `nu_0` maximize the leave-one-out log predictive density of the model
//! residuals over `[n + 2, 5n]`.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::covmodel::{shrinkage_covariance, IwParams, ResidualMatrix, DOWNDATE_TOL};
use crate::error::{Error, Result};
use crate::linalg::{chol_logdet, chol_quad_form, cholesky, symmetrize};
use crate::par::{map_indexed, Execution};

/// 5% critical value of the KPSS level-stationarity statistic.
pub const KPSS_CRITICAL_5PCT: f64 = 0.463;
/// Minimum lag-`m` autocorrelation of the differenced series for a series to
/// be considered seasonal at all.
pub const SEASONAL_ACF_THRESHOLD: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaselineForecaster {
    Naive,
    SeasonalNaive { season: usize },
}

impl BaselineForecaster {
    pub fn seasonal(season: usize) -> Result<Self> {
        if season < 2 {
            return Err(Error::InvalidArgument(format!(
                "seasonal naive needs a season length of at least 2, got {season}"
            )));
        }
        Ok(Self::SeasonalNaive { season })
    }

    /// Observations consumed before the first one-step forecast.
    pub fn warmup(self) -> usize {
        match self {
            Self::Naive => 1,
            Self::SeasonalNaive { season } => season,
        }
    }

    /// One-step in-sample residuals `forecast - actual` for `t >= warmup`.
    pub fn residuals(self, series: &[f64]) -> Vec<f64> {
        let lag = self.warmup();
        (lag..series.len()).map(|t| series[t - lag] - series[t]).collect()
    }

    /// One-step-ahead forecast after the last observation.
    pub fn forecast(self, series: &[f64]) -> Option<f64> {
        let lag = self.warmup();
        (series.len() >= lag).then(|| series[series.len() - lag])
    }
}

/// Sample autocorrelation at `lag` (zero for a constant series).
fn autocorrelation(x: &[f64], lag: usize) -> f64 {
    if x.len() <= lag {
        return 0.0;
    }
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let denom: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
    if denom <= f64::EPSILON * mean.abs().max(1.0) * x.len() as f64 {
        return 0.0;
    }
    let num: f64 = (lag..x.len()).map(|t| (x[t] - mean) * (x[t - lag] - mean)).sum();
    num / denom
}

/// KPSS statistic for level stationarity with a Bartlett long-run variance
/// using `floor(4 (N/100)^{1/4})` lags.
pub fn kpss_level_statistic(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 2 {
        return 0.0;
    }
    let nf = n as f64;
    let mean = x.iter().sum::<f64>() / nf;
    let e: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let lags = (4.0 * (nf / 100.0).powf(0.25)).floor() as usize;
    let mut lrv = e.iter().map(|v| v * v).sum::<f64>() / nf;
    for s in 1..=lags.min(n - 1) {
        let w = 1.0 - s as f64 / (lags as f64 + 1.0);
        let gamma: f64 = (s..n).map(|t| e[t] * e[t - s]).sum::<f64>() / nf;
        lrv += 2.0 * w * gamma;
    }
    let scale = x.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
    if !(lrv > 1e-24 * scale * scale) {
        return 0.0;
    }
    let mut partial = 0.0;
    let mut sum_sq = 0.0;
    for v in &e {
        partial += v;
        sum_sq += partial * partial;
    }
    sum_sq / (nf * nf * lrv)
}

/// Chooses seasonal naive when the differenced series shows a lag-`m`
/// autocorrelation of at least 0.3 and seasonal differencing leaves a
/// level-stationary series according to KPSS at 5%; otherwise naive.
pub fn select_baseline(series: &[f64], m: usize) -> BaselineForecaster {
    if m < 2 {
        return BaselineForecaster::Naive;
    }
    if series.len() < 3 * m {
        warn!(
            "series of length {} is shorter than three seasons (m = {m}); using naive baseline",
            series.len()
        );
        return BaselineForecaster::Naive;
    }
    let diff: Vec<f64> = series.windows(2).map(|w| w[1] - w[0]).collect();
    if autocorrelation(&diff, m) < SEASONAL_ACF_THRESHOLD {
        return BaselineForecaster::Naive;
    }
    let seasonal_diff: Vec<f64> = (m..series.len()).map(|t| series[t] - series[t - m]).collect();
    if kpss_level_statistic(&seasonal_diff) <= KPSS_CRITICAL_5PCT {
        BaselineForecaster::SeasonalNaive { season: m }
    } else {
        BaselineForecaster::Naive
    }
}

/// Residuals of the per-series baselines, truncated to the common window
/// where every series has a residual. `series` is `T_obs x n` (time in rows).
pub fn baseline_residuals(series: &DMatrix<f64>, labels: &[String], m: usize) -> Result<ResidualMatrix> {
    let kinds: Vec<BaselineForecaster> = series
        .column_iter()
        .map(|c| select_baseline(c.as_slice(), m))
        .collect();
    baseline_residuals_with(series, labels, &kinds)
}

/// As [`baseline_residuals`] with the baseline of each series given.
pub fn baseline_residuals_with(
    series: &DMatrix<f64>,
    labels: &[String],
    kinds: &[BaselineForecaster],
) -> Result<ResidualMatrix> {
    let (t_obs, n) = series.shape();
    if labels.len() != n || kinds.len() != n {
        return Err(Error::Dimension(format!(
            "{n} series but {} labels and {} baselines",
            labels.len(),
            kinds.len()
        )));
    }
    for (j, kind) in kinds.iter().enumerate() {
        if t_obs < kind.warmup() + 1 {
            return Err(Error::InsufficientHistory(labels[j].clone()));
        }
    }
    let start = kinds.iter().map(|k| k.warmup()).max().unwrap_or(1);
    let len = t_obs - start;
    let mut out = DMatrix::zeros(n, len);
    for (j, kind) in kinds.iter().enumerate() {
        let res = kind.residuals(series.column(j).as_slice());
        let skip = start - kind.warmup();
        for (k, r) in res[skip..].iter().enumerate() {
            out[(j, k)] = *r;
        }
    }
    ResidualMatrix::with_labels(out, labels.to_vec())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorStructure {
    #[default]
    Full,
    /// Off-diagonal entries of the prior mean set to zero.
    Diagonal,
}

/// Prior mean from baseline residuals.
pub fn build_psi_mean(r_base: &ResidualMatrix, structure: PriorStructure) -> Result<DMatrix<f64>> {
    let est = shrinkage_covariance(r_base)?;
    Ok(restrict(est.covariance, structure))
}

fn restrict(m: DMatrix<f64>, structure: PriorStructure) -> DMatrix<f64> {
    match structure {
        PriorStructure::Full => m,
        PriorStructure::Diagonal => DMatrix::from_diagonal(&m.diagonal()),
    }
}

/// Admissible interval for `nu_0` in dimension `n`.
pub fn nu0_bounds(n: usize) -> (f64, f64) {
    (n as f64 + 2.0, 5.0 * n as f64)
}

/// `IW(Psi_0, nu_0)` with `Psi_0 = (nu_0 - n - 1) Psi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    psi_mean: DMatrix<f64>,
    nu0: f64,
}

impl PriorSpec {
    pub fn new(psi_mean: DMatrix<f64>, nu0: f64) -> Result<Self> {
        let n = psi_mean.nrows();
        let (lo, hi) = nu0_bounds(n);
        if !(nu0 >= lo && nu0 <= hi) {
            return Err(Error::InvalidArgument(format!(
                "nu0 = {nu0} outside the admissible interval [{lo}, {hi}]"
            )));
        }
        cholesky(&psi_mean, "prior mean Psi")?;
        Ok(Self { psi_mean, nu0 })
    }

    pub fn psi_mean(&self) -> &DMatrix<f64> {
        &self.psi_mean
    }

    pub fn nu0(&self) -> f64 {
        self.nu0
    }

    pub fn psi0(&self) -> DMatrix<f64> {
        &self.psi_mean * (self.nu0 - self.psi_mean.nrows() as f64 - 1.0)
    }

    pub fn to_iw(&self) -> Result<IwParams> {
        IwParams::new(symmetrize(&self.psi0()), self.nu0)
    }
}

/// Leave-one-out log predictive score of the residuals as a function of
/// `nu`:
///
/// `sum_i log mt(r_i; 0, (Psi_0 + R_{-i} R_{-i}^T) / (nu + T - n), nu + T - n)`.
///
/// Each candidate `nu` needs one Cholesky factorization of
/// `M = Psi_0 + R R^T`; the leave-one-out matrices are rank-one downdates
/// `M - r_i r_i^T`, whose log-determinant and quadratic form follow from
/// `q_i = r_i^T M^{-1} r_i` (Sherman-Morrison and the matrix determinant
/// lemma).
#[derive(Debug, Clone)]
pub struct LooObjective {
    psi_mean: DMatrix<f64>,
    residuals: ResidualMatrix,
    scatter: DMatrix<f64>,
    execution: Execution,
}

impl LooObjective {
    pub fn new(psi_mean: &DMatrix<f64>, residuals: &ResidualMatrix) -> Result<Self> {
        let n = psi_mean.nrows();
        if residuals.n() != n {
            return Err(Error::Dimension(format!(
                "residuals have {} series, prior mean is {n}x{n}",
                residuals.n()
            )));
        }
        if residuals.is_empty() {
            return Err(Error::InsufficientData("LOO objective needs at least one residual".into()));
        }
        cholesky(psi_mean, "prior mean Psi")?;
        Ok(Self {
            psi_mean: psi_mean.clone(),
            scatter: residuals.scatter(),
            residuals: residuals.clone(),
            execution: Execution::Sequential,
        })
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    fn dims(&self) -> (usize, usize) {
        (self.residuals.n(), self.residuals.len())
    }

    /// Per-residual LOO log densities at `nu`.
    pub fn terms(&self, nu: f64) -> Result<Vec<f64>> {
        let (n, t) = self.dims();
        let nf = n as f64;
        let m = symmetrize(&(&self.psi_mean * (nu - nf - 1.0) + &self.scatter));
        let chol = cholesky(&m, "Psi_0 + R R^T")?;
        let logdet = chol_logdet(&chol);
        let delta = nu + t as f64 - nf;
        let norm = ln_gamma(0.5 * (delta + nf)) - ln_gamma(0.5 * delta) - 0.5 * nf * std::f64::consts::PI.ln();

        let term = |i: usize| -> Result<f64> {
            let r = self.residuals.column(i);
            let q = chol_quad_form(&chol, &r);
            let one_minus_q = 1.0 - q;
            if one_minus_q > DOWNDATE_TOL {
                // log det(M - r r^T) = logdet + ln(1 - q);
                // r^T (M - r r^T)^{-1} r = q / (1 - q).
                let ln1q = one_minus_q.ln();
                Ok(norm - 0.5 * (logdet + ln1q) + 0.5 * (delta + nf) * ln1q)
            } else {
                direct_term(&m, &r, delta, norm)
            }
        };
        let heavy = n * n * t >= 1 << 15;
        let exec = if heavy { self.execution } else { Execution::Sequential };
        map_indexed(exec, t, term).into_iter().collect()
    }

    pub fn value(&self, nu: f64) -> Result<f64> {
        Ok(self.terms(nu)?.iter().sum())
    }
}

/// Fallback for a downdate too close to singular: factorize `M - r r^T`.
fn direct_term(m: &DMatrix<f64>, r: &DVector<f64>, delta: f64, norm: f64) -> Result<f64> {
    let nf = r.len() as f64;
    let m_i = symmetrize(&(m - r * r.transpose()));
    let chol = cholesky(&m_i, "leave-one-out scale")?;
    let quad = chol_quad_form(&chol, r);
    Ok(norm - 0.5 * chol_logdet(&chol) - 0.5 * (delta + nf) * quad.ln_1p())
}

/// Outcome of [`optimize_nu0`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Nu0Fit {
    pub nu0: f64,
    pub loo_score: f64,
    pub at_lower_bound: bool,
    pub at_upper_bound: bool,
    pub evaluations: usize,
}

/// Tolerance on the bracket width of the golden-section search.
pub const NU0_TOL: f64 = 1e-3;

/// Maximizes the LOO score over `[n + 2, 5n]` by golden-section search.
pub fn optimize_nu0(psi_mean: &DMatrix<f64>, r: &ResidualMatrix, execution: Execution) -> Result<Nu0Fit> {
    let objective = LooObjective::new(psi_mean, r)?.with_execution(execution);
    let (lo, hi) = nu0_bounds(r.n());
    let mut evaluations = 0;
    let mut eval = |nu: f64| -> f64 {
        evaluations += 1;
        match objective.value(nu) {
            Ok(v) if v.is_finite() => v,
            _ => f64::NEG_INFINITY,
        }
    };

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = eval(c);
    let mut fd = eval(d);
    let mut best = if fc >= fd { (c, fc) } else { (d, fd) };
    while b - a > NU0_TOL {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = eval(c);
            if fc > best.1 {
                best = (c, fc);
            }
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = eval(d);
            if fd > best.1 {
                best = (d, fd);
            }
        }
    }
    // The optimum often sits on a boundary; check both ends explicitly.
    for edge in [lo, hi] {
        let f = eval(edge);
        if f > best.1 {
            best = (edge, f);
        }
    }
    if !best.1.is_finite() {
        return Err(Error::PriorMisfit(
            "LOO objective is not finite anywhere on the admissible interval".into(),
        ));
    }
    Ok(Nu0Fit {
        nu0: best.0,
        loo_score: best.1,
        at_lower_bound: (best.0 - lo).abs() <= NU0_TOL,
        at_upper_bound: (hi - best.0).abs() <= NU0_TOL,
        evaluations,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PriorOptions {
    pub structure: PriorStructure,
    /// Skip the optimization and use this `nu_0`.
    pub nu0: Option<f64>,
    pub execution: Execution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedPrior {
    pub spec: PriorSpec,
    /// Shrinkage intensity used for the prior mean.
    pub lambda_shrink: f64,
    /// `None` when `nu_0` was fixed by the caller.
    pub loo_score: Option<f64>,
    pub fit: Option<Nu0Fit>,
}

/// Prior mean from the baseline residuals, `nu_0` from the model residuals.
pub fn fit_prior(
    baseline: &ResidualMatrix,
    residuals: &ResidualMatrix,
    opts: &PriorOptions,
) -> Result<FittedPrior> {
    let est = shrinkage_covariance(baseline)?;
    let psi_mean = restrict(est.covariance, opts.structure);
    let (nu0, fit) = match opts.nu0 {
        Some(nu0) => (nu0, None),
        None => {
            let fit = optimize_nu0(&psi_mean, residuals, opts.execution)?;
            (fit.nu0, Some(fit))
        }
    };
    Ok(FittedPrior {
        spec: PriorSpec::new(psi_mean, nu0)?,
        lambda_shrink: est.lambda,
        loo_score: fit.as_ref().map(|f| f.loo_score),
        fit,
    })
}
