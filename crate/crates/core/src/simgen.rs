//! Synthetic data for the minimal hierarchy (one total, two bottom series)
//! and the replication study built on it.
//!
//! Each bottom series is a basic structural model: local linear trend plus a
//! dummy seasonal with `s` seasons plus ARMA(1,1) noise whose innovations are
//! correlated across the two series.

use log::debug;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::covmodel::ResidualMatrix;
use crate::error::{Error, Result};
use crate::hierarchy::Hierarchy;
use crate::linalg::cholesky;
use crate::par::{map_indexed, Execution};
use crate::priorfit::{baseline_residuals, PriorStructure};
use crate::reconcile::{reconcile_variant, Method, ReconcileInputs};
use crate::rng::{derive_seed, stream_rng};
use crate::smoothing::fit_auto;
use crate::scoring::{score_forecast, EnergyOptions, EvaluationRun, OriginRecord, SkippedOrigin};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub t_obs: usize,
    pub season: usize,
    /// Variance of the level disturbance.
    pub level_var: f64,
    /// Variance of the slope disturbance.
    pub slope_var: f64,
    pub seasonal_var: f64,
    pub phi: f64,
    pub theta: f64,
    /// Contemporaneous covariance of the ARMA innovations.
    pub error_cov: DMatrix<f64>,
    /// ARMA steps discarded before the first recorded observation.
    pub burn_in: usize,
    /// Standard deviation of the initial level, slope and seasonal states.
    pub init_sd: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            t_obs: 17,
            season: 4,
            level_var: 2.0,
            slope_var: 0.007,
            seasonal_var: 7.0,
            phi: 0.3,
            theta: 0.5,
            error_cov: DMatrix::from_row_slice(2, 2, &[5.0, 3.0, 3.0, 4.0]),
            burn_in: 200,
            init_sd: 1.0,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.season < 2 {
            return Err(Error::InvalidArgument(format!("season must be at least 2, got {}", self.season)));
        }
        if self.t_obs < 2 * self.season {
            return Err(Error::InvalidArgument(format!(
                "t_obs = {} is shorter than two seasons",
                self.t_obs
            )));
        }
        for (name, v) in [
            ("level_var", self.level_var),
            ("slope_var", self.slope_var),
            ("seasonal_var", self.seasonal_var),
            ("init_sd", self.init_sd),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be non-negative, got {v}")));
            }
        }
        if !(self.phi.abs() < 1.0) {
            return Err(Error::InvalidArgument(format!("ARMA phi = {} is not stationary", self.phi)));
        }
        if self.error_cov.shape() != (2, 2) {
            return Err(Error::Dimension("error covariance must be 2x2".into()));
        }
        self.innovation_factor().map(|_| ())
    }

    /// Cholesky factor of the innovation covariance (zero matrix allowed).
    fn innovation_factor(&self) -> Result<DMatrix<f64>> {
        if self.error_cov.iter().all(|&v| v == 0.0) {
            return Ok(DMatrix::zeros(2, 2));
        }
        Ok(cholesky(&self.error_cov, "ARMA innovation covariance")?.l())
    }
}

/// Stream ids of the independent noise sources.
mod stream {
    pub const INIT: u64 = 0;
    pub const LEVEL: u64 = 1;
    pub const SLOPE: u64 = 2;
    pub const SEASONAL: u64 = 3;
    pub const ARMA: u64 = 4;
}

/// The additive components of the bottom series, each `t_obs x 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Components {
    pub level: DMatrix<f64>,
    /// Trend slope (the second state of the local linear trend).
    pub slope: DMatrix<f64>,
    pub seasonal: DMatrix<f64>,
    pub arma: DMatrix<f64>,
}

impl Components {
    pub fn bottom(&self) -> DMatrix<f64> {
        &self.level + &self.seasonal + &self.arma
    }
}

fn normals<R: Rng>(rng: &mut R, sd: f64) -> [f64; 2] {
    [rng.sample::<f64, _>(StandardNormal) * sd, rng.sample::<f64, _>(StandardNormal) * sd]
}

/// ARMA(1,1) noise `eta_t = phi eta_{t-1} + e_t + theta e_{t-1}` after
/// `cfg.burn_in` discarded steps, `len x 2`.
pub fn simulate_arma(cfg: &SimConfig, len: usize) -> Result<DMatrix<f64>> {
    cfg.validate()?;
    let l = cfg.innovation_factor()?;
    let mut rng = stream_rng(cfg.seed, stream::ARMA);
    let mut out = DMatrix::zeros(len, 2);
    let mut eta = DVector::zeros(2);
    let mut e_prev = DVector::zeros(2);
    for t in 0..cfg.burn_in + len {
        let z = normals(&mut rng, 1.0);
        let e = &l * DVector::from_row_slice(&z);
        eta = &eta * cfg.phi + &e + &e_prev * cfg.theta;
        e_prev = e;
        if t >= cfg.burn_in {
            out.row_mut(t - cfg.burn_in).copy_from(&eta.transpose());
        }
    }
    Ok(out)
}

pub fn simulate_components(cfg: &SimConfig) -> Result<Components> {
    cfg.validate()?;
    let (n, s) = (cfg.t_obs, cfg.season);
    let mut init = stream_rng(cfg.seed, stream::INIT);
    let mut level_rng = stream_rng(cfg.seed, stream::LEVEL);
    let mut slope_rng = stream_rng(cfg.seed, stream::SLOPE);
    let mut seas_rng = stream_rng(cfg.seed, stream::SEASONAL);

    let mut mu = normals(&mut init, cfg.init_sd);
    let mut nu = normals(&mut init, cfg.init_sd);
    // The last s - 1 seasonal states, oldest first.
    let mut past: Vec<[f64; 2]> = (0..s - 1).map(|_| normals(&mut init, cfg.init_sd)).collect();

    let mut level = DMatrix::zeros(n, 2);
    let mut slope = DMatrix::zeros(n, 2);
    let mut seasonal = DMatrix::zeros(n, 2);
    let (sd_l, sd_s, sd_w) = (cfg.level_var.sqrt(), cfg.slope_var.sqrt(), cfg.seasonal_var.sqrt());
    for t in 0..n {
        let eps = normals(&mut level_rng, sd_l);
        let zeta = normals(&mut slope_rng, sd_s);
        let omega = normals(&mut seas_rng, sd_w);
        for j in 0..2 {
            mu[j] += nu[j] + eps[j];
            nu[j] += zeta[j];
        }
        let gamma = [
            -past.iter().map(|g| g[0]).sum::<f64>() + omega[0],
            -past.iter().map(|g| g[1]).sum::<f64>() + omega[1],
        ];
        past.remove(0);
        past.push(gamma);
        for j in 0..2 {
            level[(t, j)] = mu[j];
            slope[(t, j)] = nu[j];
            seasonal[(t, j)] = gamma[j];
        }
    }
    Ok(Components {
        level,
        slope,
        seasonal,
        arma: simulate_arma(cfg, n)?,
    })
}

/// Bottom series, `t_obs x 2`.
pub fn simulate_bottom(cfg: &SimConfig) -> Result<DMatrix<f64>> {
    Ok(simulate_components(cfg)?.bottom())
}

/// `[u, b1, b2]` with `u = b1 + b2`, `t_obs x 3`.
pub fn simulate_hierarchy(cfg: &SimConfig) -> Result<DMatrix<f64>> {
    let b = simulate_bottom(cfg)?;
    let mut y = DMatrix::zeros(b.nrows(), 3);
    for t in 0..b.nrows() {
        y[(t, 0)] = b[(t, 0)] + b[(t, 1)];
        y[(t, 1)] = b[(t, 0)];
        y[(t, 2)] = b[(t, 1)];
    }
    Ok(y)
}

/// Configuration of a replication study on the minimal hierarchy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    /// Generator settings; `t_obs` and `seed` are set per replication.
    pub sim: SimConfig,
    /// Number of in-sample residuals per replication.
    pub train_length: usize,
    pub replications: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    /// Energy-score draws per replication (0 disables the energy score).
    pub es_samples: usize,
    pub execution: Execution,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            train_length: 12,
            replications: 1000,
            seed: 0,
            methods: vec![Method::Mint, Method::Trec, Method::TrecMap],
            es_samples: 0,
            execution: Execution::default(),
        }
    }
}

/// Per-replication quantities besides the scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    /// `sqrt(d^T Q^-1 d)` reported by t-Rec.
    pub scaled_incoherence: Option<f64>,
    pub nu0: Option<f64>,
    pub scores: OriginRecord,
}

impl ReplicationRecord {
    /// Reconciled over base interval width, per series.
    pub fn relative_widths(&self, method: Method, level95: bool) -> Option<Vec<f64>> {
        let m = self.scores.get(method)?;
        let b = self.scores.get(Method::Base)?;
        Some(
            m.series
                .iter()
                .zip(&b.series)
                .map(|(x, y)| if level95 { x.width95 / y.width95 } else { x.width80 / y.width80 })
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub records: Vec<ReplicationRecord>,
    pub run: EvaluationRun,
}

impl StudyResult {
    /// Relative widths of `method` over replications for series `j`.
    pub fn relative_widths(&self, method: Method, series: usize, level95: bool) -> Vec<f64> {
        self.records
            .iter()
            .filter_map(|r| r.relative_widths(method, level95).map(|w| w[series]))
            .collect()
    }
}

/// Inputs of one replication: base forecasts, residuals and the actual.
#[derive(Debug, Clone)]
pub struct ReplicationData {
    pub y_hat: DVector<f64>,
    pub residuals: ResidualMatrix,
    pub prior_residuals: ResidualMatrix,
    pub actual: DVector<f64>,
}

const LABELS: [&str; 3] = ["U", "B0", "B1"];

/// Simulates `train_length + 1` observations, fits exponential smoothing to
/// each series on all but the last one and forecasts the last.
pub fn replication_data(cfg: &StudyConfig, replication: usize) -> Result<ReplicationData> {
    let m = cfg.sim.season;
    let sim = SimConfig {
        t_obs: (cfg.train_length + 1).max(2 * m),
        seed: derive_seed(cfg.seed, replication as u64),
        ..cfg.sim.clone()
    };
    let y = simulate_hierarchy(&sim)?;
    let start = sim.t_obs - cfg.train_length - 1;
    let train = y.rows(start, cfg.train_length).into_owned();
    let labels: Vec<String> = LABELS.iter().map(|s| s.to_string()).collect();

    let mut y_hat = DVector::zeros(3);
    let mut res = DMatrix::zeros(3, cfg.train_length);
    for j in 0..3 {
        let fit = fit_auto(train.column(j).as_slice(), m)?;
        y_hat[j] = fit.forecast;
        for (t, r) in fit.residuals.iter().enumerate() {
            res[(j, t)] = *r;
        }
    }
    Ok(ReplicationData {
        y_hat,
        residuals: ResidualMatrix::with_labels(res, labels.clone())?,
        prior_residuals: baseline_residuals(&train, &labels, m)?,
        actual: y.row(sim.t_obs - 1).transpose(),
    })
}

fn run_replication(cfg: &StudyConfig, h: &Hierarchy, i: usize) -> Result<ReplicationRecord> {
    let data = replication_data(cfg, i)?;
    let inputs = ReconcileInputs {
        hierarchy: h,
        y_hat: &data.y_hat,
        residuals: &data.residuals,
        prior_residuals: &data.prior_residuals,
        nu0: None,
        prior: PriorStructure::Full,
    };
    let energy = EnergyOptions {
        samples: cfg.es_samples,
        seed: cfg.seed,
    };
    let mut scores = Vec::with_capacity(cfg.methods.len() + 1);
    let mut scaled_incoherence = None;
    let mut nu0 = None;
    let mut methods = vec![Method::Base];
    methods.extend(cfg.methods.iter().copied().filter(|m| *m != Method::Base));
    for method in methods {
        let rec = reconcile_variant(method, &inputs)?;
        if method == Method::Trec {
            scaled_incoherence = rec.diagnostics.scaled_incoherence;
            nu0 = rec.diagnostics.nu0;
        }
        scores.push(score_forecast(method, &rec.full, &data.actual, i as u64, energy)?);
    }
    Ok(ReplicationRecord {
        replication: i,
        scaled_incoherence,
        nu0,
        scores: OriginRecord { origin: i, scores },
    })
}

/// Runs independent replications (in parallel when enabled). Replications
/// that fail numerically are recorded as skipped.
pub fn run_study(cfg: &StudyConfig) -> Result<StudyResult> {
    if cfg.replications == 0 {
        return Err(Error::InvalidArgument("at least one replication is required".into()));
    }
    if cfg.train_length == 0 {
        return Err(Error::InvalidArgument("train_length must be positive".into()));
    }
    cfg.sim.validate()?;
    let h = Hierarchy::minimal();
    let outcomes = map_indexed(cfg.execution, cfg.replications, |i| run_replication(cfg, &h, i));
    let mut records = Vec::with_capacity(cfg.replications);
    let mut skipped = Vec::new();
    for (i, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(r) => records.push(r),
            Err(e) if !matches!(e, Error::InvalidArgument(_) | Error::Dimension(_)) => {
                debug!("replication {i} skipped: {e}");
                skipped.push(SkippedOrigin {
                    origin: i,
                    reason: e.to_string(),
                });
            }
            Err(e) => return Err(e),
        }
    }
    let run = EvaluationRun {
        labels: LABELS.iter().map(|s| s.to_string()).collect(),
        origins: records.iter().map(|r| r.scores.clone()).collect(),
        skipped,
    };
    Ok(StudyResult { records, run })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_gives_zero_series() {
        let cfg = SimConfig {
            level_var: 0.0,
            slope_var: 0.0,
            seasonal_var: 0.0,
            init_sd: 0.0,
            error_cov: DMatrix::zeros(2, 2),
            t_obs: 40,
            ..Default::default()
        };
        assert!(simulate_bottom(&cfg).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hierarchy_is_coherent_and_replayable() {
        let cfg = SimConfig {
            t_obs: 60,
            seed: 11,
            ..Default::default()
        };
        let y = simulate_hierarchy(&cfg).unwrap();
        for t in 0..y.nrows() {
            assert_eq!(y[(t, 0)], y[(t, 1)] + y[(t, 2)]);
        }
        assert_eq!(y, simulate_hierarchy(&cfg).unwrap());
        let other = simulate_hierarchy(&SimConfig { seed: 12, ..cfg }).unwrap();
        assert_ne!(y, other);
    }

    #[test]
    fn seasonal_sums_are_the_disturbance() {
        let cfg = SimConfig {
            t_obs: 50,
            seed: 2,
            ..Default::default()
        };
        let c = simulate_components(&cfg).unwrap();
        let mut rng = stream_rng(2, stream::SEASONAL);
        for t in 0..cfg.t_obs {
            let omega = normals(&mut rng, cfg.seasonal_var.sqrt());
            if t >= 3 {
                for (j, w) in omega.iter().enumerate() {
                    let s: f64 = (0..4).map(|i| c.seasonal[(t - i, j)]).sum();
                    assert!((s - w).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn rejects_short_config() {
        let cfg = SimConfig {
            t_obs: 7,
            ..Default::default()
        };
        assert!(simulate_bottom(&cfg).is_err());
    }

    #[test]
    fn small_study_runs() {
        let cfg = StudyConfig {
            replications: 8,
            seed: 5,
            ..Default::default()
        };
        let res = run_study(&cfg).unwrap();
        assert_eq!(res.records.len() + res.run.skipped.len(), 8);
        for r in &res.records {
            assert!(r.relative_widths(Method::Mint, true).unwrap().iter().all(|&w| w < 1.0));
        }
    }
}
