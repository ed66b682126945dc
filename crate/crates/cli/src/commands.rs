use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use trec::dists::{DistributionFile, UnivariateForecast};
use trec::evaluate::{
    ingest_dataset, read_mean_csv, read_residual_csv, read_series_csv, run_rolling_evaluation, BaseSource,
    EvaluationOptions, RollingOriginPlan,
};
use trec::priorfit::{baseline_residuals, fit_prior as fit, nu0_bounds, select_baseline, BaselineForecaster, PriorOptions};
use trec::reconcile::{Diagnostics, Method};
use trec::scoring::{aggregate_report, ReportRow, ScoreReport, SkippedOrigin};
use trec::simgen::{run_study, StudyConfig, StudyResult};
use trec::stats::{geometric_mean, spearman};
use trec::{reconcile_variant, Execution, Hierarchy, ReconcileInputs};

use crate::config::merge;
use crate::output::{write_csv, write_json};
use crate::{EvaluateArgs, FitPriorArgs, Format, PlotArgs, ReconcileArgs, SimulateArgs, SourceArg};

const DEFAULT_SEASON: usize = 12;
const DEFAULT_ES_SAMPLES: usize = 2000;
const DEFAULT_ORIGINS: usize = 100;

fn need<'a, T>(v: &'a Option<T>, flag: &str) -> Result<&'a T> {
    v.as_ref()
        .ok_or_else(|| trec::Error::InvalidArgument(format!("--{flag} is required")).into())
}

fn execution(sequential: Option<bool>) -> Execution {
    if sequential.unwrap_or(false) {
        Execution::Sequential
    } else {
        Execution::default()
    }
}

#[derive(Serialize)]
struct SeriesOutput {
    series: String,
    forecast: UnivariateForecast,
    lower80: f64,
    upper80: f64,
    lower95: f64,
    upper95: f64,
}

#[derive(Serialize)]
struct MethodOutput {
    method: Method,
    distribution: DistributionFile,
    marginals: Vec<SeriesOutput>,
    diagnostics: Diagnostics,
}

#[derive(Serialize)]
struct ReconcileRow<'a> {
    method: Method,
    series: &'a str,
    kind: &'static str,
    loc: f64,
    scale: f64,
    df: Option<f64>,
    lower80: f64,
    upper80: f64,
    lower95: f64,
    upper95: f64,
}

pub fn reconcile(args: &ReconcileArgs) -> Result<()> {
    let mut a = merge(args, args.config.as_deref())?;
    a.season_length.get_or_insert(DEFAULT_SEASON);
    a.methods.get_or_insert_with(|| vec![Method::Mint, Method::Trec]);
    a.prior.get_or_insert_default();
    a.format.get_or_insert_default();
    let h = Hierarchy::load(need(&a.hierarchy, "hierarchy")?)?;
    let labels = h.labels();
    let y_hat = read_mean_csv(need(&a.base, "base")?, &labels)?;
    let residuals = read_residual_csv(need(&a.residuals, "residuals")?, &labels)?;
    let season = a.season_length.unwrap_or(DEFAULT_SEASON);
    let prior_residuals = match (&a.prior_residuals, &a.series) {
        (Some(p), _) => read_residual_csv(p, &labels)?,
        (None, Some(s)) => {
            let (data, _) = read_series_csv(s, &h)?;
            baseline_residuals(&data, &labels, season)?
        }
        (None, None) => {
            warn!("no history given; the prior mean is built from the base residuals");
            residuals.clone()
        }
    };
    let inputs = ReconcileInputs {
        hierarchy: &h,
        y_hat: &y_hat,
        residuals: &residuals,
        prior_residuals: &prior_residuals,
        nu0: a.nu0,
        prior: a.prior.unwrap_or_default().into(),
    };
    let methods = a.methods.clone().unwrap_or_else(|| vec![Method::Mint, Method::Trec]);
    let mut results = Vec::with_capacity(methods.len());
    for &m in &methods {
        let rec = reconcile_variant(m, &inputs)?;
        let marginals = rec
            .full
            .marginals()
            .into_iter()
            .zip(&labels)
            .map(|(f, l)| {
                let (lower80, upper80) = f.prediction_interval(0.8)?;
                let (lower95, upper95) = f.prediction_interval(0.95)?;
                Ok(SeriesOutput {
                    series: l.clone(),
                    forecast: f,
                    lower80,
                    upper80,
                    lower95,
                    upper95,
                })
            })
            .collect::<trec::Result<Vec<_>>>()?;
        results.push(MethodOutput {
            method: m,
            distribution: rec.full.to_file(),
            marginals,
            diagnostics: rec.diagnostics,
        });
    }
    match a.format.unwrap_or_default() {
        Format::Json => write_json(
            a.out.as_deref(),
            &serde_json::json!({ "config": &a, "labels": labels, "results": results }),
        ),
        Format::Csv => {
            let rows: Vec<ReconcileRow> = results
                .iter()
                .flat_map(|r| {
                    r.marginals.iter().map(move |s| ReconcileRow {
                        method: r.method,
                        series: &s.series,
                        kind: match s.forecast {
                            UnivariateForecast::Gaussian { .. } => "gaussian",
                            UnivariateForecast::StudentT { .. } => "student_t",
                        },
                        loc: s.forecast.loc(),
                        scale: s.forecast.scale(),
                        df: match s.forecast {
                            UnivariateForecast::StudentT { df, .. } => Some(df),
                            UnivariateForecast::Gaussian { .. } => None,
                        },
                        lower80: s.lower80,
                        upper80: s.upper80,
                        lower95: s.lower95,
                        upper95: s.upper95,
                    })
                })
                .collect();
            write_csv(a.out.as_deref(), &rows)
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Evaluation {
    train_length: usize,
    report: ScoreReport,
}

pub fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let mut a = merge(args, args.config.as_deref())?;
    a.origins.get_or_insert(DEFAULT_ORIGINS);
    a.step.get_or_insert(1);
    a.methods.get_or_insert_with(|| vec![Method::Mint, Method::Trec]);
    if a.bundle.is_none() {
        a.base_source.get_or_insert_default();
    }
    a.prior.get_or_insert_default();
    a.es_samples.get_or_insert(DEFAULT_ES_SAMPLES);
    a.seed.get_or_insert(0);
    a.season_length.get_or_insert(DEFAULT_SEASON);
    a.sequential.get_or_insert(false);
    a.format.get_or_insert_default();
    let ds = ingest_dataset(need(&a.hierarchy, "hierarchy")?, need(&a.series, "series")?)?;
    let lengths = need(&a.train_length, "train-length")?;
    let source = match (&a.bundle, a.base_source.unwrap_or_default()) {
        (Some(dir), _) => BaseSource::Bundle(dir.clone()),
        (None, SourceArg::Baseline) => BaseSource::Baseline,
        (None, SourceArg::Smoothing) => BaseSource::Smoothing,
    };
    let opts = EvaluationOptions {
        methods: a.methods.clone().unwrap_or_else(|| vec![Method::Mint, Method::Trec]),
        season: a.season_length.unwrap_or(DEFAULT_SEASON),
        nu0: a.nu0,
        prior: a.prior.unwrap_or_default().into(),
        es_samples: a.es_samples.unwrap_or(DEFAULT_ES_SAMPLES),
        seed: a.seed.unwrap_or(0),
        execution: execution(a.sequential),
    };
    let mut evaluations = Vec::with_capacity(lengths.len());
    for &t in lengths {
        let plan = RollingOriginPlan::new(ds.t_obs(), t, a.origins.unwrap_or(DEFAULT_ORIGINS), a.step.unwrap_or(1))?;
        let (_, report) = run_rolling_evaluation(&ds, &plan, &source, &opts)?;
        for s in &report.skipped {
            warn!("train length {t}: origin {} skipped: {}", s.origin, s.reason);
        }
        evaluations.push(Evaluation { train_length: t, report });
    }
    match a.format.unwrap_or_default() {
        Format::Json => write_json(
            a.out.as_deref(),
            &serde_json::json!({ "config": &a, "evaluations": evaluations }),
        ),
        Format::Csv => {
            let rows: Vec<ReportRow> = evaluations
                .iter()
                .flat_map(|e| e.report.rows(Some(e.train_length)))
                .collect();
            write_csv(a.out.as_deref(), &rows)
        }
    }
}

/// One method, series and replication of a simulation study.
#[derive(Debug, Serialize, Deserialize)]
struct ReplicationRow {
    train_length: usize,
    replication: usize,
    method: Method,
    series: String,
    width80: f64,
    width95: f64,
    rel_width80: f64,
    rel_width95: f64,
    crps: f64,
    mis80: f64,
    mis95: f64,
    squared_error: f64,
    covered80: bool,
    covered95: bool,
    scaled_incoherence: Option<f64>,
    nu0: Option<f64>,
}

fn replication_rows(t: usize, res: &StudyResult) -> Vec<ReplicationRow> {
    let mut rows = Vec::new();
    for rec in &res.records {
        let Some(base) = rec.scores.get(Method::Base) else { continue };
        for ms in &rec.scores.scores {
            for (j, (s, b)) in ms.series.iter().zip(&base.series).enumerate() {
                rows.push(ReplicationRow {
                    train_length: t,
                    replication: rec.replication,
                    method: ms.method,
                    series: res.run.labels[j].clone(),
                    width80: s.width80,
                    width95: s.width95,
                    rel_width80: s.width80 / b.width80,
                    rel_width95: s.width95 / b.width95,
                    crps: s.crps,
                    mis80: s.mis80,
                    mis95: s.mis95,
                    squared_error: s.squared_error,
                    covered80: s.covered80,
                    covered95: s.covered95,
                    scaled_incoherence: rec.scaled_incoherence,
                    nu0: rec.nu0,
                });
            }
        }
    }
    rows
}

/// Headline numbers of a study, computed on the upper series.
#[derive(Debug, Serialize, Deserialize)]
struct StudySummary {
    train_length: usize,
    replications: usize,
    report: ScoreReport,
    skipped: Vec<SkippedOrigin>,
    /// Share of (replication, series) pairs where MinT narrows the 95% interval.
    mint_narrowing_rate: Option<f64>,
    /// Spearman correlation of the 95% relative width with the scaled incoherence.
    spearman_trec: Option<f64>,
    spearman_mint: Option<f64>,
    /// Geometric mean of the t-Rec over t-Rec-MAP 95% width.
    trec_over_map_width95: Option<f64>,
}

fn summarize(t: usize, res: &StudyResult, report: ScoreReport) -> StudySummary {
    let incoherence: Vec<f64> = res.records.iter().filter_map(|r| r.scaled_incoherence).collect();
    let has = |m: Method| res.records.first().and_then(|r| r.scores.get(m)).is_some();
    let corr = |m: Method| {
        (has(m) && has(Method::Trec)).then(|| spearman(&res.relative_widths(m, 0, true), &incoherence))
    };
    let mint_narrowing_rate = has(Method::Mint).then(|| {
        let w: Vec<f64> = (0..3).flat_map(|j| res.relative_widths(Method::Mint, j, true)).collect();
        w.iter().filter(|&&x| x < 1.0).count() as f64 / w.len() as f64
    });
    let trec_over_map_width95 = (has(Method::Trec) && has(Method::TrecMap)).then(|| {
        let r: Vec<f64> = res
            .records
            .iter()
            .filter_map(|r| Some(r.scores.get(Method::Trec)?.series[0].width95 / r.scores.get(Method::TrecMap)?.series[0].width95))
            .collect();
        geometric_mean(&r)
    });
    StudySummary {
        train_length: t,
        replications: res.records.len(),
        skipped: res.run.skipped.clone(),
        report,
        mint_narrowing_rate,
        spearman_trec: corr(Method::Trec),
        spearman_mint: corr(Method::Mint),
        trec_over_map_width95,
    }
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    let mut a = merge(args, args.config.as_deref())?;
    a.replications.get_or_insert(1000);
    a.train_length.get_or_insert_with(|| vec![12]);
    a.methods.get_or_insert_with(|| vec![Method::Mint, Method::Trec, Method::TrecMap]);
    a.es_samples.get_or_insert(DEFAULT_ES_SAMPLES);
    a.seed.get_or_insert(0);
    a.sequential.get_or_insert(false);
    a.format.get_or_insert_default();
    let lengths = a.train_length.clone().unwrap_or_else(|| vec![12]);
    let mut summaries = Vec::with_capacity(lengths.len());
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    for &t in &lengths {
        let cfg = StudyConfig {
            train_length: t,
            replications: a.replications.unwrap_or(1000),
            seed: a.seed.unwrap_or(0),
            methods: a
                .methods
                .clone()
                .unwrap_or_else(|| vec![Method::Mint, Method::Trec, Method::TrecMap]),
            es_samples: a.es_samples.unwrap_or(DEFAULT_ES_SAMPLES),
            execution: execution(a.sequential),
            ..Default::default()
        };
        let res = run_study(&cfg)?;
        let report = aggregate_report(&res.run)?;
        if let Some(dir) = &a.out {
            write_csv(Some(&dir.join(format!("replications_T{t}.csv"))), &replication_rows(t, &res))?;
        }
        summaries.push(summarize(t, &res, report));
    }
    let summary = serde_json::json!({ "config": &a, "studies": summaries });
    let rows: Vec<ReportRow> = summaries
        .iter()
        .flat_map(|s| s.report.rows(Some(s.train_length)))
        .collect();
    match &a.out {
        Some(dir) => {
            write_json(Some(&dir.join("summary.json")), &summary)?;
            write_csv(Some(&dir.join("summary.csv")), &rows)
        }
        None => match a.format.unwrap_or_default() {
            Format::Json => write_json(None, &summary),
            Format::Csv => write_csv(None, &rows),
        },
    }
}

#[derive(Serialize)]
struct PriorOutput {
    labels: Vec<String>,
    baselines: Vec<BaselineForecaster>,
    nu0: f64,
    nu0_bounds: (f64, f64),
    at_lower_bound: Option<bool>,
    at_upper_bound: Option<bool>,
    lambda_shrink: f64,
    loo_score: Option<f64>,
    psi_mean: Vec<Vec<f64>>,
    psi0: Vec<Vec<f64>>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn fit_prior(args: &FitPriorArgs) -> Result<()> {
    let mut a = merge(args, args.config.as_deref())?;
    a.season_length.get_or_insert(DEFAULT_SEASON);
    a.prior.get_or_insert_default();
    a.format.get_or_insert_default();
    let h = Hierarchy::load(need(&a.hierarchy, "hierarchy")?)?;
    let labels = h.labels();
    let (data, _) = read_series_csv(need(&a.series, "series")?, &h)?;
    let season = a.season_length.unwrap_or(DEFAULT_SEASON);
    let base = baseline_residuals(&data, &labels, season)?;
    let residuals = match &a.residuals {
        Some(p) => read_residual_csv(p, &labels)?,
        None => base.clone(),
    };
    let opts = PriorOptions {
        structure: a.prior.unwrap_or_default().into(),
        nu0: a.nu0,
        ..Default::default()
    };
    let prior = fit(&base, &residuals, &opts)?;
    let out = PriorOutput {
        baselines: data.column_iter().map(|c| select_baseline(c.as_slice(), season)).collect(),
        nu0: prior.spec.nu0(),
        nu0_bounds: nu0_bounds(h.n()),
        at_lower_bound: prior.fit.as_ref().map(|f| f.at_lower_bound),
        at_upper_bound: prior.fit.as_ref().map(|f| f.at_upper_bound),
        lambda_shrink: prior.lambda_shrink,
        loo_score: prior.loo_score,
        psi_mean: rows_of(prior.spec.psi_mean()),
        psi0: rows_of(&prior.spec.psi0()),
        labels: labels.clone(),
    };
    match a.format.unwrap_or_default() {
        Format::Json => write_json(a.out.as_deref(), &out),
        Format::Csv => {
            let mut w: csv::Writer<Box<dyn std::io::Write>> = csv::Writer::from_writer(match &a.out {
                Some(p) => Box::new(std::fs::File::create(p)?),
                None => Box::new(std::io::stdout().lock()),
            });
            let mut header = vec!["series".to_string()];
            header.extend(labels.iter().cloned());
            w.write_record(&header)?;
            for (l, row) in labels.iter().zip(&out.psi_mean) {
                let mut rec = vec![l.clone()];
                rec.extend(row.iter().map(|v| format!("{v:?}")));
                w.write_record(&rec)?;
            }
            w.flush()?;
            Ok(())
        }
    }
}

/// Tidy row for plotting relative widths against scaled incoherence.
#[derive(Serialize)]
struct WidthPoint {
    train_length: usize,
    replication: usize,
    method: Method,
    series: String,
    level: f64,
    rel_width: f64,
    scaled_incoherence: Option<f64>,
}

fn simulation_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("replications_T") && n.ends_with(".csv"))
        })
        .collect();
    files.sort();
    Ok(files)
}

pub fn emit_plotdata(args: &PlotArgs) -> Result<()> {
    let a = merge(args, args.config.as_deref())?;
    let input = need(&a.input, "input")?;
    if input.is_dir() {
        let files = simulation_files(input)?;
        if files.is_empty() {
            return Err(trec::Error::InvalidArgument(format!(
                "{} holds no simulation output",
                input.display()
            ))
            .into());
        }
        let mut points = Vec::new();
        for f in files {
            let mut rdr = csv::Reader::from_path(&f)?;
            for row in rdr.deserialize::<ReplicationRow>() {
                let r = row.map_err(|e| trec::Error::Parse(format!("{}: {e}", f.display())))?;
                for (level, w) in [(0.8, r.rel_width80), (0.95, r.rel_width95)] {
                    points.push(WidthPoint {
                        train_length: r.train_length,
                        replication: r.replication,
                        method: r.method,
                        series: r.series.clone(),
                        level,
                        rel_width: w,
                        scaled_incoherence: r.scaled_incoherence,
                    });
                }
            }
        }
        return write_csv(a.out.as_deref(), &points);
    }
    let text = std::fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let v: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| trec::Error::Parse(format!("{}: {e}", input.display())))?;
    let key = ["evaluations", "studies"]
        .into_iter()
        .find(|k| v.get(k).is_some())
        .ok_or_else(|| trec::Error::Parse(format!("{}: not an evaluation or simulation report", input.display())))?;
    let mut rows = Vec::new();
    for e in v[key].as_array().into_iter().flatten() {
        let t = e["train_length"].as_u64().map(|t| t as usize);
        let report: ScoreReport = serde_json::from_value(e["report"].clone())
            .map_err(|err| trec::Error::Parse(format!("{}: {err}", input.display())))?;
        rows.extend(report.rows(t));
    }
    write_csv(a.out.as_deref(), &rows)
}
