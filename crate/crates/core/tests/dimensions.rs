//! The property suite on simulated hierarchies of realistic size.

mod common;

use trec::evaluate::{run_rolling_evaluation, BaseSource, Dataset, EvaluationOptions, RollingOriginPlan};
use trec::priorfit::{baseline_residuals, nu0_bounds, PriorStructure};
use trec::{reconcile_variant, Execution, Hierarchy, Method, ReconcileInputs};

use common::*;

fn check_dimension(h: Hierarchy, seed: u64) {
    let n = h.n();
    let t_obs = 96;
    let train = 60;
    let data = simulate_dataset(&h, t_obs, 12, seed);
    let labels = h.labels();

    // One origin by hand: every method coherent, MinT narrows, nu_0 in range.
    let window = data.rows(t_obs - 1 - train, train).into_owned();
    let residuals = baseline_residuals(&window, &labels, 12).unwrap();
    let y_hat = data.row(t_obs - 2).transpose();
    let inputs = ReconcileInputs {
        hierarchy: &h,
        y_hat: &y_hat,
        residuals: &residuals,
        prior_residuals: &residuals,
        nu0: None,
        prior: PriorStructure::Full,
    };
    let base = reconcile_variant(Method::Base, &inputs).unwrap();
    let base_sd: Vec<f64> = base.full.marginals().iter().map(|m| m.scale()).collect();
    let n_u = h.n_upper();
    for method in Method::RECONCILED {
        let rec = reconcile_variant(method, &inputs).unwrap();
        let loc = rec.full.location();
        let bottom = loc.rows(n_u, h.n_bottom()).into_owned();
        let gap = (loc.rows(0, n_u) - h.aggregation() * bottom).amax();
        assert!(gap <= 1e-12 * loc.amax(), "{method}: incoherence {gap}");
        if let Some(nu0) = rec.diagnostics.nu0 {
            let (lo, hi) = nu0_bounds(n);
            assert!(nu0 >= lo && nu0 <= hi);
        }
        if method == Method::Mint {
            for (m, s) in rec.full.marginals().iter().zip(&base_sd) {
                assert!(m.scale() < *s);
            }
        }
    }

    // A short rolling evaluation through the driver.
    let ds = Dataset { hierarchy: h, data, time: (0..t_obs).map(|t| t.to_string()).collect() };
    let plan = RollingOriginPlan::new(t_obs, train, 4, 3).unwrap();
    let opts = EvaluationOptions {
        methods: Method::RECONCILED.to_vec(),
        season: 12,
        es_samples: 200,
        seed,
        execution: Execution::default(),
        ..Default::default()
    };
    let (run, report) = run_rolling_evaluation(&ds, &plan, &BaseSource::Baseline, &opts).unwrap();
    assert_eq!(run.origins.len(), 4);
    for m in &report.methods {
        assert_eq!(m.series.len(), n);
        for v in [m.rel_mse, m.rel_crps, m.rel_mis80, m.rel_mis95, m.rel_es.unwrap(), m.rel_width80, m.rel_width95] {
            assert!(v.is_finite() && v > 0.0, "{}: {v}", m.method);
        }
        assert!((0.0..=1.0).contains(&m.coverage80) && (0.0..=1.0).contains(&m.coverage95));
    }
    assert!(report.method(Method::Mint).unwrap().rel_width95 < 1.0);
}

#[test]
fn n27() {
    check_dimension(grouped_hierarchy(&[26]), 27);
}

#[test]
fn n84() {
    let h = grouped_hierarchy(&[11, 11, 11, 11, 11, 11, 10]);
    assert_eq!(h.n(), 84);
    check_dimension(h, 84);
}

#[test]
fn n105() {
    let h = grouped_hierarchy(&[12; 8]);
    assert_eq!(h.n(), 105);
    check_dimension(h, 105);
}
