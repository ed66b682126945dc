//! Point and probabilistic scores, and their aggregation into relative
//! metrics against the base forecasts.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dists::{JointDistribution, UnivariateForecast};
use crate::error::{Error, Result};
use crate::reconcile::Method;
use crate::rng::stream_rng;
use crate::stats::geometric_mean;

/// Mean over origins of the squared Euclidean forecast error.
pub fn mse(forecasts: &[DVector<f64>], actuals: &[DVector<f64>]) -> Result<f64> {
    if forecasts.is_empty() {
        return Err(Error::InsufficientData("mse of an empty set of forecasts".into()));
    }
    if forecasts.len() != actuals.len() {
        return Err(Error::Dimension(format!(
            "{} forecasts but {} actuals",
            forecasts.len(),
            actuals.len()
        )));
    }
    let mut total = 0.0;
    for (f, y) in forecasts.iter().zip(actuals) {
        if f.len() != y.len() {
            return Err(Error::Dimension(format!(
                "forecast of length {} against actual of length {}",
                f.len(),
                y.len()
            )));
        }
        total += (f - y).norm_squared();
    }
    Ok(total / forecasts.len() as f64)
}

/// Interval score of `[lower, upper]` at miscoverage `alpha`.
pub fn interval_score(lower: f64, upper: f64, y: f64, alpha: f64) -> f64 {
    let penalty = (lower - y).max(0.0) + (y - upper).max(0.0);
    (upper - lower) + 2.0 / alpha * penalty
}

/// Interval score of the equal-tailed `1 - alpha` interval of `f`.
pub fn mis(f: &UnivariateForecast, y: f64, alpha: f64) -> Result<f64> {
    let (l, u) = f.prediction_interval(1.0 - alpha)?;
    Ok(interval_score(l, u, y, alpha))
}

/// Monte Carlo energy score (exponent 1): the mean distance of `k` draws to
/// `y` minus half the mean distance within `k/2` disjoint pairs of draws.
pub fn energy_score(d: &JointDistribution, y: &DVector<f64>, k: usize, seed: u64) -> Result<f64> {
    energy_score_stream(d, y, k, seed, 0)
}

pub(crate) fn energy_score_stream(
    d: &JointDistribution,
    y: &DVector<f64>,
    k: usize,
    seed: u64,
    stream: u64,
) -> Result<f64> {
    if k < 2 || !k.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "energy score needs an even sample count of at least 2, got {k}"
        )));
    }
    if y.len() != d.dim() {
        return Err(Error::Dimension(format!(
            "actual has length {}, distribution has dimension {}",
            y.len(),
            d.dim()
        )));
    }
    let x = d.sample_with(k, &mut stream_rng(seed, stream));
    let yt = y.transpose();
    let to_y: f64 = (0..k).map(|m| (x.row(m) - &yt).norm()).sum::<f64>() / k as f64;
    let pairs: f64 = (0..k / 2)
        .map(|m| (x.row(2 * m) - x.row(2 * m + 1)).norm())
        .sum::<f64>()
        / (k / 2) as f64;
    Ok(to_y - 0.5 * pairs)
}

/// Nominal coverage levels of the reported prediction intervals.
pub const LEVELS: [f64; 2] = [0.8, 0.95];

/// Scores of one forecast for one series at one origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesScore {
    pub squared_error: f64,
    pub crps: f64,
    pub mis80: f64,
    pub mis95: f64,
    pub width80: f64,
    pub width95: f64,
    pub covered80: bool,
    pub covered95: bool,
}

impl SeriesScore {
    pub fn new(f: &UnivariateForecast, y: f64) -> Result<Self> {
        let (l80, u80) = f.prediction_interval(LEVELS[0])?;
        let (l95, u95) = f.prediction_interval(LEVELS[1])?;
        Ok(Self {
            squared_error: (f.loc() - y).powi(2),
            crps: f.crps(y),
            mis80: interval_score(l80, u80, y, 1.0 - LEVELS[0]),
            mis95: interval_score(l95, u95, y, 1.0 - LEVELS[1]),
            width80: u80 - l80,
            width95: u95 - l95,
            covered80: l80 <= y && y <= u80,
            covered95: l95 <= y && y <= u95,
        })
    }
}

/// Scores of one method at one origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodScores {
    pub method: Method,
    pub squared_error: f64,
    pub energy: Option<f64>,
    pub series: Vec<SeriesScore>,
}

/// How the energy score is estimated; `samples == 0` disables it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnergyOptions {
    pub samples: usize,
    pub seed: u64,
}

impl Default for EnergyOptions {
    fn default() -> Self {
        Self { samples: 2000, seed: 0 }
    }
}

/// Scores a joint forecast against the actual `y`. The energy-score draws
/// come from a stream keyed by `origin` only, so every method at one origin
/// sees the same random numbers.
pub fn score_forecast(
    method: Method,
    d: &JointDistribution,
    y: &DVector<f64>,
    origin: u64,
    energy: EnergyOptions,
) -> Result<MethodScores> {
    if y.len() != d.dim() {
        return Err(Error::Dimension(format!(
            "actual has length {}, forecast has dimension {}",
            y.len(),
            d.dim()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite actual at origin {origin}")));
    }
    let series = d
        .marginals()
        .iter()
        .zip(y.iter())
        .map(|(f, &yi)| SeriesScore::new(f, yi))
        .collect::<Result<Vec<_>>>()?;
    let energy = if energy.samples > 0 {
        Some(energy_score_stream(d, y, energy.samples, energy.seed, origin)?)
    } else {
        None
    };
    Ok(MethodScores {
        method,
        squared_error: (d.location() - y).norm_squared(),
        energy,
        series,
    })
}

/// All methods scored at one rolling origin (or simulation replication).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OriginRecord {
    pub origin: usize,
    pub scores: Vec<MethodScores>,
}

impl OriginRecord {
    pub fn get(&self, method: Method) -> Option<&MethodScores> {
        self.scores.iter().find(|s| s.method == method)
    }
}

/// An origin left out of the evaluation and the reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedOrigin {
    pub origin: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRun {
    pub labels: Vec<String>,
    pub origins: Vec<OriginRecord>,
    #[serde(default)]
    pub skipped: Vec<SkippedOrigin>,
}

/// Per-series relative metrics of one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesReport {
    pub series: String,
    pub rel_mse: f64,
    pub rel_crps: f64,
    pub rel_mis80: f64,
    pub rel_mis95: f64,
    pub coverage80: f64,
    pub coverage95: f64,
    pub rel_width80: f64,
    pub rel_width95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: Method,
    pub rel_mse: f64,
    pub rel_crps: f64,
    pub rel_mis80: f64,
    pub rel_mis95: f64,
    pub rel_es: Option<f64>,
    pub coverage80: f64,
    pub coverage95: f64,
    pub rel_width80: f64,
    pub rel_width95: f64,
    pub series: Vec<SeriesReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub n_origins: usize,
    pub methods: Vec<MethodReport>,
    pub skipped: Vec<SkippedOrigin>,
}

/// One line of the long-format report table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub metric: String,
    pub series: String,
    pub train_length: Option<usize>,
    pub value: f64,
}

impl ScoreReport {
    pub fn method(&self, method: Method) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.method == method)
    }

    /// Long format: one row per method, metric and series (`all` for the
    /// aggregate over series).
    pub fn rows(&self, train_length: Option<usize>) -> Vec<ReportRow> {
        let mut rows = Vec::new();
        let mut push = |method: Method, series: &str, metric: &str, value: f64| {
            rows.push(ReportRow {
                method: method.to_string(),
                metric: metric.to_string(),
                series: series.to_string(),
                train_length,
                value,
            })
        };
        for m in &self.methods {
            let overall = [
                ("rel_mse", m.rel_mse),
                ("rel_crps", m.rel_crps),
                ("rel_mis80", m.rel_mis80),
                ("rel_mis95", m.rel_mis95),
                ("coverage80", m.coverage80),
                ("coverage95", m.coverage95),
                ("rel_width80", m.rel_width80),
                ("rel_width95", m.rel_width95),
            ];
            for (name, v) in overall {
                push(m.method, "all", name, v);
            }
            if let Some(es) = m.rel_es {
                push(m.method, "all", "rel_es", es);
            }
            for s in &m.series {
                for (name, v) in [
                    ("rel_mse", s.rel_mse),
                    ("rel_crps", s.rel_crps),
                    ("rel_mis80", s.rel_mis80),
                    ("rel_mis95", s.rel_mis95),
                    ("coverage80", s.coverage80),
                    ("coverage95", s.coverage95),
                    ("rel_width80", s.rel_width80),
                    ("rel_width95", s.rel_width95),
                ] {
                    push(m.method, &s.series, name, v);
                }
            }
        }
        rows
    }
}

fn ratio(num: f64, den: f64, what: &str) -> Result<f64> {
    if den == 0.0 {
        return Err(Error::UndefinedRatio(what.to_string()));
    }
    Ok(num / den)
}

/// Relative metrics of every method against `Base`.
///
/// * RelMSE: ratio of the mean squared error norms.
/// * RelCRPS, RelMIS: per-series ratio of origin-averaged scores, then the
///   geometric mean over series.
/// * RelES: ratio of summed energy scores.
/// * Coverage: fraction of origins inside the interval, averaged over series.
/// * Relative width: geometric mean over origins and series of the
///   per-origin width ratios.
pub fn aggregate_report(run: &EvaluationRun) -> Result<ScoreReport> {
    let r = run.origins.len();
    if r == 0 {
        return Err(Error::InsufficientData("no origins to aggregate".into()));
    }
    let n = run.labels.len();
    let base: Vec<&MethodScores> = run
        .origins
        .iter()
        .map(|o| {
            o.get(Method::Base).ok_or_else(|| {
                Error::InvalidArgument(format!("origin {} has no base forecast scores", o.origin))
            })
        })
        .collect::<Result<_>>()?;
    for b in &base {
        if b.series.len() != n {
            return Err(Error::Dimension(format!(
                "{} series scored, {n} labels",
                b.series.len()
            )));
        }
    }

    let mut methods: Vec<Method> = Vec::new();
    for o in &run.origins {
        for s in &o.scores {
            if !methods.contains(&s.method) {
                methods.push(s.method);
            }
        }
    }
    methods.sort();

    let series_mean = |scores: &[&MethodScores], j: usize, f: fn(&SeriesScore) -> f64| -> f64 {
        scores.iter().map(|s| f(&s.series[j])).sum::<f64>() / r as f64
    };

    let mut reports = Vec::with_capacity(methods.len());
    for method in methods {
        let scores: Vec<&MethodScores> = run
            .origins
            .iter()
            .map(|o| {
                o.get(method).ok_or_else(|| {
                    Error::InvalidArgument(format!("origin {} has no scores for {method}", o.origin))
                })
            })
            .collect::<Result<_>>()?;

        let mse_m = scores.iter().map(|s| s.squared_error).sum::<f64>() / r as f64;
        let mse_b = base.iter().map(|s| s.squared_error).sum::<f64>() / r as f64;
        let rel_mse = ratio(mse_m, mse_b, "all series (MSE)")?;

        let rel_es = match (
            scores.iter().map(|s| s.energy).sum::<Option<f64>>(),
            base.iter().map(|s| s.energy).sum::<Option<f64>>(),
        ) {
            (Some(m), Some(b)) => Some(ratio(m, b, "all series (energy score)")?),
            _ => None,
        };

        let mut series = Vec::with_capacity(n);
        for (j, label) in run.labels.iter().enumerate() {
            let rel = |f: fn(&SeriesScore) -> f64, metric: &str| -> Result<f64> {
                ratio(
                    series_mean(&scores, j, f),
                    series_mean(&base, j, f),
                    &format!("{label} ({metric})"),
                )
            };
            let width_ratio = |f: fn(&SeriesScore) -> f64, metric: &str| -> Result<f64> {
                let ratios = scores
                    .iter()
                    .zip(&base)
                    .map(|(s, b)| ratio(f(&s.series[j]), f(&b.series[j]), &format!("{label} ({metric})")))
                    .collect::<Result<Vec<_>>>()?;
                Ok(geometric_mean(&ratios))
            };
            let coverage = |f: fn(&SeriesScore) -> bool| -> f64 {
                scores.iter().filter(|s| f(&s.series[j])).count() as f64 / r as f64
            };
            series.push(SeriesReport {
                series: label.clone(),
                rel_mse: rel(|s| s.squared_error, "squared error")?,
                rel_crps: rel(|s| s.crps, "CRPS")?,
                rel_mis80: rel(|s| s.mis80, "MIS80")?,
                rel_mis95: rel(|s| s.mis95, "MIS95")?,
                coverage80: coverage(|s| s.covered80),
                coverage95: coverage(|s| s.covered95),
                rel_width80: width_ratio(|s| s.width80, "width80")?,
                rel_width95: width_ratio(|s| s.width95, "width95")?,
            });
        }
        let gm = |f: fn(&SeriesReport) -> f64| geometric_mean(&series.iter().map(f).collect::<Vec<_>>());
        let am = |f: fn(&SeriesReport) -> f64| series.iter().map(f).sum::<f64>() / n as f64;
        reports.push(MethodReport {
            method,
            rel_mse,
            rel_crps: gm(|s| s.rel_crps),
            rel_mis80: gm(|s| s.rel_mis80),
            rel_mis95: gm(|s| s.rel_mis95),
            rel_es,
            coverage80: am(|s| s.coverage80),
            coverage95: am(|s| s.coverage95),
            rel_width80: gm(|s| s.rel_width80),
            rel_width95: gm(|s| s.rel_width95),
            series,
        });
    }
    Ok(ScoreReport {
        n_origins: r,
        methods: reports,
        skipped: run.skipped.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dists::MultivariateGaussian;
    use nalgebra::DMatrix;

    fn gaussian(loc: f64, scale: f64) -> UnivariateForecast {
        UnivariateForecast::Gaussian { loc, scale }
    }

    #[test]
    fn mse_basic() {
        let f = vec![DVector::from_vec(vec![3.0, 4.0])];
        let y = vec![DVector::zeros(2)];
        assert_eq!(mse(&f, &y).unwrap(), 25.0);
        assert_eq!(mse(&y, &y).unwrap(), 0.0);
        assert!(mse(&[], &[]).is_err());
    }

    #[test]
    fn mis_inside_and_outside() {
        let f = gaussian(0.0, 1.0);
        let (l, u) = f.prediction_interval(0.8).unwrap();
        assert!((mis(&f, 0.3, 0.2).unwrap() - (u - l)).abs() < 1e-12);
        let above = mis(&f, u + 0.5, 0.2).unwrap();
        assert!((above - (u - l) - 10.0 * 0.5).abs() < 1e-12);
        let v = mis(&f, 3.0, 0.05).unwrap();
        assert!((v - 45.521).abs() < 1e-3, "{v}");
    }

    #[test]
    fn energy_score_is_replayable_and_checks_k() {
        let d = JointDistribution::Gaussian(
            MultivariateGaussian::new(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap(),
        );
        let y = DVector::from_vec(vec![0.5, -1.0]);
        assert_eq!(energy_score(&d, &y, 100, 3).unwrap(), energy_score(&d, &y, 100, 3).unwrap());
        assert!(energy_score(&d, &y, 3, 3).is_err());
        assert!(energy_score(&d, &y, 0, 3).is_err());
    }

    #[test]
    fn point_mass_limit() {
        let d = JointDistribution::Gaussian(
            MultivariateGaussian::new(DVector::from_vec(vec![1.0, 2.0]), DMatrix::identity(2, 2) * 1e-20).unwrap(),
        );
        let y = DVector::from_vec(vec![4.0, 6.0]);
        assert!((energy_score(&d, &y, 50, 1).unwrap() - 5.0).abs() < 1e-8);
    }

    fn record(origin: usize, method: Method, crps: [f64; 2]) -> MethodScores {
        let s = |c: f64| SeriesScore {
            squared_error: 1.0,
            crps: c,
            mis80: 1.0,
            mis95: 1.0,
            width80: 1.0,
            width95: 1.0,
            covered80: origin.is_multiple_of(2),
            covered95: true,
        };
        MethodScores {
            method,
            squared_error: 2.0,
            energy: Some(1.0),
            series: vec![s(crps[0]), s(crps[1])],
        }
    }

    #[test]
    fn relative_crps_is_geometric() {
        let run = EvaluationRun {
            labels: vec!["a".into(), "b".into()],
            origins: (0..4)
                .map(|o| OriginRecord {
                    origin: o,
                    scores: vec![record(o, Method::Base, [2.0, 1.0]), record(o, Method::Mint, [1.0, 2.0])],
                })
                .collect(),
            skipped: vec![],
        };
        let rep = aggregate_report(&run).unwrap();
        let base = rep.method(Method::Base).unwrap();
        assert_eq!(base.rel_crps, 1.0);
        assert_eq!(base.coverage80, 0.5);
        let mint = rep.method(Method::Mint).unwrap();
        assert!((mint.rel_crps - 1.0).abs() < 1e-15);
        assert_eq!(mint.series[0].rel_crps, 0.5);
        assert_eq!(mint.series[1].rel_crps, 2.0);
    }

    #[test]
    fn zero_base_score_names_series() {
        let run = EvaluationRun {
            labels: vec!["a".into(), "b".into()],
            origins: vec![OriginRecord {
                origin: 0,
                scores: vec![record(0, Method::Base, [1.0, 0.0]), record(0, Method::Mint, [1.0, 1.0])],
            }],
            skipped: vec![],
        };
        match aggregate_report(&run) {
            Err(Error::UndefinedRatio(s)) => assert!(s.starts_with("b "), "{s}"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
