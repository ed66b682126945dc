//! Additive exponential smoothing (error, trend and season all additive or
//! absent) used as the base forecaster of the simulation study.
//!
//! For fixed smoothing parameters the one-step errors are affine in the
//! initial states, so the states minimizing the in-sample sum of squares are
//! a linear least-squares solution. Smoothing parameters come from a grid;
//! the model form is chosen by AICc.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EtsForm {
    pub trend: bool,
    /// Season length, `None` for no seasonal component.
    pub season: Option<usize>,
}

impl EtsForm {
    pub fn n_smoothing(self) -> usize {
        1 + self.trend as usize + self.season.is_some() as usize
    }

    /// Free initial states; the seasonal states sum to zero.
    pub fn n_initial(self) -> usize {
        1 + self.trend as usize + self.season.map_or(0, |m| m - 1)
    }

    /// Parameter count for the information criterion, variance included.
    pub fn n_params(self) -> usize {
        self.n_smoothing() + self.n_initial() + 1
    }

    pub fn name(self) -> String {
        format!(
            "ETS(A,{},{})",
            if self.trend { "A" } else { "N" },
            if self.season.is_some() { "A" } else { "N" }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtsParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtsFit {
    pub form: EtsForm,
    pub params: EtsParams,
    pub initial: Vec<f64>,
    /// In-sample one-step residuals `forecast - actual`, one per observation.
    pub residuals: Vec<f64>,
    /// One-step-ahead forecast after the last observation.
    pub forecast: f64,
    pub aicc: f64,
}

/// Runs the recursion from initial states `x0` and returns the one-step
/// errors `y_t - f_t` and the next forecast.
fn filter(form: EtsForm, p: EtsParams, y: &[f64], x0: &[f64]) -> (Vec<f64>, f64) {
    let mut level = x0[0];
    let mut trend = if form.trend { x0[1] } else { 0.0 };
    let first_seas = 1 + form.trend as usize;
    let m = form.season.unwrap_or(1);
    let mut seas = vec![0.0; m];
    if form.season.is_some() {
        seas[..m - 1].copy_from_slice(&x0[first_seas..first_seas + m - 1]);
        seas[m - 1] = -seas[..m - 1].iter().sum::<f64>();
    }
    let mut errors = Vec::with_capacity(y.len());
    for (t, &obs) in y.iter().enumerate() {
        let k = t % m;
        let e = obs - (level + trend + seas[k]);
        errors.push(e);
        level += trend + p.alpha * e;
        if form.trend {
            trend += p.beta * e;
        }
        if form.season.is_some() {
            seas[k] += p.gamma * e;
        }
    }
    (errors, level + trend + seas[y.len() % m])
}

/// Least-squares initial states for fixed smoothing parameters.
fn fit_fixed(form: EtsForm, p: EtsParams, y: &[f64]) -> Result<EtsFit> {
    let k = form.n_initial();
    let zeros = vec![0.0; k];
    let (a, _) = filter(form, p, y, &zeros);
    let silent = vec![0.0; y.len()];
    let mut c = DMatrix::zeros(y.len(), k);
    for i in 0..k {
        let mut unit = zeros.clone();
        unit[i] = 1.0;
        let (col, _) = filter(form, p, &silent, &unit);
        c.set_column(i, &DVector::from_vec(col));
    }
    // errors(x0) = a + C x0; normal equations, SVD if they are singular.
    let a = DVector::from_vec(a);
    let ctc = c.tr_mul(&c);
    let rhs = -c.tr_mul(&a);
    let x0 = match ctc.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => ctc
            .svd(true, true)
            .solve(&rhs, 1e-12)
            .map_err(|e| Error::InvalidArgument(format!("initial-state solve failed: {e}")))?,
    };
    let initial: Vec<f64> = x0.iter().copied().collect();
    let (errors, forecast) = filter(form, p, y, &initial);
    let n = y.len() as f64;
    let sse: f64 = errors.iter().map(|e| e * e).sum();
    let np = form.n_params() as f64;
    let aic = n * (sse / n).max(f64::MIN_POSITIVE).ln() + 2.0 * np;
    Ok(EtsFit {
        form,
        params: p,
        initial,
        residuals: errors.iter().map(|e| -e).collect(),
        forecast,
        aicc: aic + 2.0 * np * (np + 1.0) / (n - np - 1.0),
    })
}

const ALPHA_GRID: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];
/// `beta` as a fraction of `alpha`.
const BETA_FRACTIONS: [f64; 4] = [0.01, 0.05, 0.1, 0.2];
const GAMMA_GRID: [f64; 6] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5];

/// Best parameters of one model form by in-sample sum of squares.
pub fn fit_form(form: EtsForm, y: &[f64]) -> Result<EtsFit> {
    if y.len() <= form.n_params() + 1 {
        return Err(Error::InsufficientData(format!(
            "{} needs more than {} observations, got {}",
            form.name(),
            form.n_params() + 1,
            y.len()
        )));
    }
    let mut best: Option<(f64, EtsFit)> = None;
    for &alpha in &ALPHA_GRID {
        let betas: &[f64] = if form.trend { &BETA_FRACTIONS } else { &[0.0] };
        let gammas: &[f64] = if form.season.is_some() { &GAMMA_GRID } else { &[0.0] };
        for &bf in betas {
            for &gamma in gammas.iter().filter(|&&g| g <= 1.0 - alpha + 1e-12) {
                let p = EtsParams {
                    alpha,
                    beta: bf * alpha,
                    gamma,
                };
                let fit = fit_fixed(form, p, y)?;
                let sse: f64 = fit.residuals.iter().map(|e| e * e).sum();
                if best.as_ref().is_none_or(|(b, _)| sse < *b) {
                    best = Some((sse, fit));
                }
            }
        }
    }
    Ok(best.expect("grid is non-empty").1)
}

/// Fits every additive form the series is long enough for and keeps the
/// lowest AICc. Seasonal forms need at least two full seasons.
pub fn fit_auto(y: &[f64], season: usize) -> Result<EtsFit> {
    let mut forms = vec![
        EtsForm { trend: false, season: None },
        EtsForm { trend: true, season: None },
    ];
    if season >= 2 && y.len() >= 2 * season {
        forms.push(EtsForm { trend: false, season: Some(season) });
        forms.push(EtsForm { trend: true, season: Some(season) });
    }
    let mut best: Option<EtsFit> = None;
    for form in forms {
        if y.len() <= form.n_params() + 1 {
            continue;
        }
        let fit = fit_form(form, y)?;
        if best.as_ref().is_none_or(|b| fit.aicc < b.aicc) {
            best = Some(fit);
        }
    }
    best.ok_or_else(|| {
        Error::InsufficientData(format!("{} observations are too few for exponential smoothing", y.len()))
    })
}
