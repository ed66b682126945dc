//! Dataset ingestion and rolling-origin evaluation.

use std::collections::HashMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::covmodel::ResidualMatrix;
use crate::error::{Error, Result};
use crate::hierarchy::Hierarchy;
use crate::par::{map_indexed, Execution};
use crate::priorfit::{baseline_residuals, select_baseline, PriorStructure};
use crate::reconcile::{reconcile_variant, Method, ReconcileInputs};
use crate::scoring::{aggregate_report, score_forecast, EnergyOptions, EvaluationRun, OriginRecord, ScoreReport, SkippedOrigin};
use crate::smoothing::fit_auto;

/// A hierarchy with its observations in canonical `[upper; bottom]` column
/// order, time in rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub hierarchy: Hierarchy,
    pub data: DMatrix<f64>,
    /// Time stamps as they appeared in the file.
    pub time: Vec<String>,
}

impl Dataset {
    pub fn t_obs(&self) -> usize {
        self.data.nrows()
    }

    /// Observation at time `t` as a column vector.
    pub fn observation(&self, t: usize) -> DVector<f64> {
        self.data.row(t).transpose()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum TimeKey {
    Int(i64),
    Date(i32, u32, u32),
}

fn parse_time(s: &str) -> Option<TimeKey> {
    let s = s.trim();
    if let Ok(v) = s.parse::<i64>() {
        return Some(TimeKey::Int(v));
    }
    let parts: Vec<&str> = s.split('-').collect();
    let num = |p: &str| p.parse::<u32>().ok();
    match parts.as_slice() {
        [y, m] if y.len() == 4 => {
            let (y, m) = (y.parse().ok()?, num(m)?);
            (1..=12).contains(&m).then_some(TimeKey::Date(y, m, 1))
        }
        [y, m, d] if y.len() == 4 => {
            let (y, m, d) = (y.parse().ok()?, num(m)?, num(d)?);
            ((1..=12).contains(&m) && (1..=31).contains(&d)).then_some(TimeKey::Date(y, m, d))
        }
        _ => None,
    }
}

fn open_csv(path: &Path) -> Result<csv::Reader<File>> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

fn parse_value(s: &str, path: &Path, row: usize, col: &str) -> Result<f64> {
    let v: f64 = s
        .parse()
        .map_err(|_| Error::Parse(format!("{}: row {row}, column '{col}': '{s}' is not a number", path.display())))?;
    if !v.is_finite() {
        return Err(Error::Parse(format!(
            "{}: row {row}, column '{col}': non-finite value",
            path.display()
        )));
    }
    Ok(v)
}

/// Maps each hierarchy label to its column in `header`, checking for
/// duplicated and missing labels.
fn column_map(header: &[String], labels: &[String], path: &Path, skip: usize) -> Result<Vec<usize>> {
    let mut index: HashMap<&str, usize> = HashMap::new();
    for (j, name) in header.iter().enumerate().skip(skip) {
        if index.insert(name.as_str(), j).is_some() {
            return Err(Error::Parse(format!("{}: duplicate column '{name}'", path.display())));
        }
    }
    let cols = labels
        .iter()
        .map(|l| {
            index
                .get(l.as_str())
                .copied()
                .ok_or_else(|| Error::Parse(format!("{}: missing series '{l}'", path.display())))
        })
        .collect::<Result<Vec<_>>>()?;
    for name in header.iter().skip(skip) {
        if !labels.contains(name) {
            warn!("{}: ignoring column '{name}' not in the hierarchy", path.display());
        }
    }
    Ok(cols)
}

/// Reads a wide CSV: the first column is the time index (integers or ISO
/// dates, strictly increasing), the others are series named by label.
pub fn read_series_csv(path: impl AsRef<Path>, hierarchy: &Hierarchy) -> Result<(DMatrix<f64>, Vec<String>)> {
    let path = path.as_ref();
    let mut rdr = open_csv(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.len() < 2 {
        return Err(Error::Parse(format!("{}: expected a time column and series columns", path.display())));
    }
    let labels = hierarchy.labels();
    let cols = column_map(&header, &labels, path, 1)?;
    let mut time = Vec::new();
    let mut values = Vec::new();
    let mut last: Option<TimeKey> = None;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let stamp = rec.get(0).unwrap_or("").to_string();
        let key = parse_time(&stamp)
            .ok_or_else(|| Error::Parse(format!("{}: row {row}: bad time index '{stamp}'", path.display())))?;
        if let Some(prev) = last {
            let same_kind = matches!((prev, key), (TimeKey::Int(_), TimeKey::Int(_)) | (TimeKey::Date(..), TimeKey::Date(..)));
            if !same_kind || key <= prev {
                return Err(Error::Parse(format!(
                    "{}: time index is not strictly increasing at row {row} ('{stamp}')",
                    path.display()
                )));
            }
        }
        last = Some(key);
        time.push(stamp);
        for (&c, label) in cols.iter().zip(&labels) {
            values.push(parse_value(rec.get(c).unwrap_or(""), path, row, label)?);
        }
    }
    if time.is_empty() {
        return Err(Error::Parse(format!("{}: no observations", path.display())));
    }
    Ok((DMatrix::from_row_slice(time.len(), labels.len(), &values), time))
}

/// Writes observations in the layout [`read_series_csv`] accepts.
pub fn write_series_csv(path: impl AsRef<Path>, hierarchy: &Hierarchy, data: &DMatrix<f64>, time: Option<&[String]>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["time".to_string()];
    header.extend(hierarchy.labels());
    w.write_record(&header)?;
    for t in 0..data.nrows() {
        let mut rec = vec![time.map_or_else(|| t.to_string(), |ts| ts[t].clone())];
        rec.extend(data.row(t).iter().map(|v| format!("{v:?}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn ingest_dataset(hierarchy_path: impl AsRef<Path>, series_path: impl AsRef<Path>) -> Result<Dataset> {
    let hierarchy = Hierarchy::load(hierarchy_path)?;
    let (data, time) = read_series_csv(series_path, &hierarchy)?;
    Ok(Dataset { hierarchy, data, time })
}

/// One rolling origin: train on `[train_start, test)` and forecast `test`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Origin {
    pub train_start: usize,
    pub test: usize,
}

impl Origin {
    /// Exclusive end of the training window.
    pub fn train_end(&self) -> usize {
        self.test
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RollingOriginPlan {
    pub train_length: usize,
    pub step: usize,
    pub origins: Vec<Origin>,
}

impl RollingOriginPlan {
    /// The last `n_origins` origins of a series of length `t_obs`, `step`
    /// apart, the final one forecasting the last observation.
    pub fn new(t_obs: usize, train_length: usize, n_origins: usize, step: usize) -> Result<Self> {
        if train_length == 0 || n_origins == 0 || step == 0 {
            return Err(Error::InvalidArgument(
                "train length, number of origins and step must be positive".into(),
            ));
        }
        let needed = train_length + 1 + (n_origins - 1) * step;
        if needed > t_obs {
            return Err(Error::InsufficientData(format!(
                "{n_origins} origins with training length {train_length} and step {step} need {needed} observations, have {t_obs}"
            )));
        }
        let first_test = t_obs - 1 - (n_origins - 1) * step;
        let origins = (0..n_origins)
            .map(|k| {
                let test = first_test + k * step;
                Origin {
                    train_start: test - train_length,
                    test,
                }
            })
            .collect();
        let plan = Self {
            train_length,
            step,
            origins,
        };
        plan.check();
        Ok(plan)
    }

    /// Leakage guard: no training window contains its own test point and
    /// test points are distinct.
    fn check(&self) {
        for (k, o) in self.origins.iter().enumerate() {
            assert!(o.train_end() <= o.test, "origin {k} trains on its test point");
            assert_eq!(o.test - o.train_start, self.train_length);
            if k > 0 {
                assert!(self.origins[k - 1].test < o.test, "overlapping test points");
            }
        }
    }
}

/// Where base forecasts and their residuals come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "path")]
pub enum BaseSource {
    /// Per-series naive or seasonal naive.
    Baseline,
    /// Per-series additive exponential smoothing.
    Smoothing,
    /// `mean_<k>.csv` and `residuals_<k>.csv` for origin `k` in a directory.
    Bundle(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationOptions {
    pub methods: Vec<Method>,
    pub season: usize,
    pub nu0: Option<f64>,
    pub prior: PriorStructure,
    pub es_samples: usize,
    pub seed: u64,
    pub execution: Execution,
}

impl Default for EvaluationOptions {
    fn default() -> Self {
        Self {
            methods: vec![Method::Mint, Method::Trec],
            season: 12,
            nu0: None,
            prior: PriorStructure::Full,
            es_samples: 2000,
            seed: 0,
            execution: Execution::default(),
        }
    }
}

/// Reads a `series,mean` file into canonical order.
pub fn read_mean_csv(path: impl AsRef<Path>, labels: &[String]) -> Result<DVector<f64>> {
    let path = path.as_ref();
    let mut rdr = open_csv(path)?;
    let mut values: HashMap<String, f64> = HashMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let name = rec.get(0).unwrap_or("").to_string();
        let v = parse_value(rec.get(1).unwrap_or(""), path, i + 1, "mean")?;
        if values.insert(name.clone(), v).is_some() {
            return Err(Error::Parse(format!("{}: duplicate series '{name}'", path.display())));
        }
    }
    labels
        .iter()
        .map(|l| {
            values
                .get(l)
                .copied()
                .ok_or_else(|| Error::Parse(format!("{}: missing series '{l}'", path.display())))
        })
        .collect::<Result<Vec<_>>>()
        .map(DVector::from_vec)
}

/// Reads residuals stored with one column per series and one row per time
/// step into an `n x T` matrix in canonical order.
pub fn read_residual_csv(path: impl AsRef<Path>, labels: &[String]) -> Result<ResidualMatrix> {
    let path = path.as_ref();
    let mut rdr = open_csv(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let cols = column_map(&header, labels, path, 0)?;
    let mut columns: Vec<f64> = Vec::new();
    let mut t = 0;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        for (&c, label) in cols.iter().zip(labels) {
            columns.push(parse_value(rec.get(c).unwrap_or(""), path, i + 1, label)?);
        }
        t += 1;
    }
    ResidualMatrix::with_labels(DMatrix::from_column_slice(labels.len(), t, &columns), labels.to_vec())
}

pub fn write_mean_csv(path: impl AsRef<Path>, labels: &[String], mean: &DVector<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["series", "mean"])?;
    for (l, v) in labels.iter().zip(mean.iter()) {
        w.write_record([l.clone(), format!("{v:?}")])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_residual_csv(path: impl AsRef<Path>, r: &ResidualMatrix) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(r.labels())?;
    for t in 0..r.len() {
        w.write_record(r.matrix().column(t).iter().map(|v| format!("{v:?}")))?;
    }
    w.flush()?;
    Ok(())
}

struct OriginInputs {
    y_hat: DVector<f64>,
    residuals: ResidualMatrix,
    prior_residuals: ResidualMatrix,
}

fn origin_inputs(ds: &Dataset, origin: &Origin, k: usize, source: &BaseSource, season: usize) -> Result<OriginInputs> {
    let labels = ds.hierarchy.labels();
    let train = ds
        .data
        .rows(origin.train_start, origin.test - origin.train_start)
        .into_owned();
    let prior_residuals = baseline_residuals(&train, &labels, season)?;
    let (y_hat, residuals) = match source {
        BaseSource::Baseline => {
            let y_hat = train
                .column_iter()
                .enumerate()
                .map(|(j, c)| {
                    select_baseline(c.as_slice(), season)
                        .forecast(c.as_slice())
                        .ok_or_else(|| Error::InsufficientHistory(labels[j].clone()))
                })
                .collect::<Result<Vec<_>>>()?;
            (DVector::from_vec(y_hat), prior_residuals.clone())
        }
        BaseSource::Smoothing => {
            let mut y_hat = DVector::zeros(labels.len());
            let mut res = DMatrix::zeros(labels.len(), train.nrows());
            for (j, c) in train.column_iter().enumerate() {
                let fit = fit_auto(c.as_slice(), season).map_err(|_| Error::InsufficientHistory(labels[j].clone()))?;
                y_hat[j] = fit.forecast;
                res.row_mut(j).copy_from_slice(&fit.residuals);
            }
            (y_hat, ResidualMatrix::with_labels(res, labels.clone())?)
        }
        BaseSource::Bundle(dir) => {
            let mean = dir.join(format!("mean_{k}.csv"));
            let res = dir.join(format!("residuals_{k}.csv"));
            if !res.exists() {
                return Err(Error::InsufficientData(format!("no residual file {}", res.display())));
            }
            (read_mean_csv(mean, &labels)?, read_residual_csv(res, &labels)?)
        }
    };
    if residuals.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} residuals in the training window",
            residuals.len()
        )));
    }
    Ok(OriginInputs {
        y_hat,
        residuals,
        prior_residuals,
    })
}

fn evaluate_origin(ds: &Dataset, k: usize, origin: &Origin, source: &BaseSource, opts: &EvaluationOptions) -> Result<OriginRecord> {
    let inputs = origin_inputs(ds, origin, k, source, opts.season)?;
    let actual = ds.observation(origin.test);
    let rin = ReconcileInputs {
        hierarchy: &ds.hierarchy,
        y_hat: &inputs.y_hat,
        residuals: &inputs.residuals,
        prior_residuals: &inputs.prior_residuals,
        nu0: opts.nu0,
        prior: opts.prior,
    };
    let energy = EnergyOptions {
        samples: opts.es_samples,
        seed: opts.seed,
    };
    let mut methods = vec![Method::Base];
    methods.extend(opts.methods.iter().copied().filter(|m| *m != Method::Base));
    let scores = methods
        .into_iter()
        .map(|m| {
            let rec = reconcile_variant(m, &rin)?;
            score_forecast(m, &rec.full, &actual, origin.test as u64, energy)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(OriginRecord { origin: origin.test, scores })
}

/// Whether a failure at one origin skips that origin rather than aborting.
fn skippable(e: &Error) -> bool {
    matches!(e, Error::InsufficientData(_) | Error::InsufficientHistory(_)) || e.is_numerical()
}

/// Evaluates every origin of `plan` and aggregates the scores. Origins
/// without enough history (or with a numerical failure) are skipped and
/// listed in the report.
pub fn run_rolling_evaluation(
    ds: &Dataset,
    plan: &RollingOriginPlan,
    source: &BaseSource,
    opts: &EvaluationOptions,
) -> Result<(EvaluationRun, ScoreReport)> {
    if let Some(last) = plan.origins.last() {
        if last.test >= ds.t_obs() {
            return Err(Error::InvalidArgument(format!(
                "origin tests time {} but the data has {} observations",
                last.test,
                ds.t_obs()
            )));
        }
    }
    let outcomes = map_indexed(opts.execution, plan.origins.len(), |k| {
        evaluate_origin(ds, k, &plan.origins[k], source, opts)
    });
    let mut origins = Vec::new();
    let mut skipped = Vec::new();
    for (k, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(rec) => origins.push(rec),
            Err(e) if skippable(&e) => {
                warn!("skipping origin {} (test time {}): {e}", k, plan.origins[k].test);
                skipped.push(SkippedOrigin {
                    origin: plan.origins[k].test,
                    reason: e.to_string(),
                });
            }
            Err(e) => return Err(e),
        }
    }
    let run = EvaluationRun {
        labels: ds.hierarchy.labels(),
        origins,
        skipped,
    };
    let report = aggregate_report(&run)?;
    Ok((run, report))
}
