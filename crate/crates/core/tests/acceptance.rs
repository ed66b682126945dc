//! Acceptance criteria. Runs as a plain binary so each criterion prints one
//! PASS/FAIL line; exits non-zero if any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use trec::covmodel::iw_posterior;
use trec::dists::UnivariateForecast;
use trec::priorfit::{optimize_nu0, LooObjective};
use trec::reconcile::trec_minimal_oracle;
use trec::scoring::{aggregate_report, energy_score};
use trec::simgen::{run_study, StudyConfig, StudyResult};
use trec::stats::{geometric_mean, spearman};
use trec::{
    gaussian_conditioning, mint, trec, Execution, Hierarchy, IwParams, JointDistribution, Method,
    MultivariateGaussian, ResidualMatrix,
};

use common::*;

/// Outcome of one criterion: pass flag plus a one-line summary of the numbers.
struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn rel_err(a: f64, b: f64, scale: f64) -> f64 {
    (a - b).abs() / scale.max(f64::MIN_POSITIVE)
}

fn study(train_length: usize, replications: usize, seed: u64, methods: Vec<Method>) -> StudyResult {
    run_study(&StudyConfig {
        train_length,
        replications,
        seed,
        methods,
        ..Default::default()
    })
    .expect("study runs")
}

fn criterion_1() -> Outcome {
    let h = Hierarchy::minimal();
    let mut g = rng(101);
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let scale = 10f64.powf(g.random_range(-2.0..2.0));
        let psi = random_spd(&mut g, 3, 0.05) * scale;
        let nu = g.random_range(5.0..100.0);
        let y = normal_vector(&mut g, 3) * (3.0 * scale.sqrt());
        let post = IwParams::new(psi.clone(), nu).unwrap();
        let res = trec(&h, &y, &post).unwrap();
        let o = trec_minimal_oracle([y[0], y[1], y[2]], &psi, nu).unwrap();

        let loc_scale = y.amax().max(1.0);
        let bottom = res.bottom.loc();
        let sigma = res.bottom.scale();
        let sigma_scale = sigma.amax();
        let errs = [
            rel_err(bottom[0], o.b_tilde[0], loc_scale),
            rel_err(bottom[1], o.b_tilde[1], loc_scale),
            rel_err(res.full.loc()[0], o.u_tilde, loc_scale),
            rel_err(sigma[(0, 0)], o.sigma_b[0][0], sigma_scale),
            rel_err(sigma[(0, 1)], o.sigma_b[0][1], sigma_scale),
            rel_err(sigma[(1, 1)], o.sigma_b[1][1], sigma_scale),
            rel_err(res.full.scale()[(0, 0)].sqrt(), o.sigma_u, o.sigma_u),
            rel_err(res.df(), o.nu_tilde, o.nu_tilde),
            rel_err(res.c, o.c, o.c),
            rel_err(res.q[(0, 0)], o.q, o.q),
        ];
        worst = errs.iter().fold(worst, |w, &e| w.max(e));
    }
    let elapsed = start.elapsed();
    outcome(
        worst < 1e-10 && elapsed < Duration::from_secs(1),
        format!("max relative error {worst:.2e} (< 1e-10), {:.3} s (< 1 s)", elapsed.as_secs_f64()),
    )
}

fn criterion_2() -> Outcome {
    let h = Hierarchy::minimal();
    let s = h.summing_matrix();
    let mut g = rng(202);
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let angles = 64;
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    for _ in 0..20 {
        let psi = random_spd(&mut g, 3, 0.05) * 10f64.powf(g.random_range(-1.0..1.0));
        let nu = g.random_range(5.0..100.0);
        let y = normal_vector(&mut g, 3) * 2.0;
        let res = trec(&h, &y, &IwParams::new(psi.clone(), nu).unwrap()).unwrap();

        let df_inc = nu - 3.0 + 1.0;
        let scale_inc = &psi / df_inc;
        let incoherent = |b: &DVector<f64>| mvt_logpdf(&(&s * b), &y, &scale_inc, df_inc).exp();

        let loc = res.bottom.loc().clone();
        let sigma = res.bottom.scale().clone();
        let l = sigma.clone().cholesky().unwrap().l();
        let jac = l[(0, 0)] * l[(1, 1)];
        let point = |rho: f64, theta: f64| &loc + &l * DVector::from_vec(vec![rho * theta.cos(), rho * theta.sin()]);

        // Normalizing constant of the restriction, in polar coordinates
        // around the reconciled location.
        let z: f64 = (0..angles)
            .map(|k| {
                let theta = 2.0 * std::f64::consts::PI * k as f64 / angles as f64;
                integrate_half_line(&|rho| jac * rho * incoherent(&point(rho, theta)), 1.0, 1e-13)
            })
            .sum::<f64>()
            * 2.0
            * std::f64::consts::PI
            / angles as f64;

        for k in 0..200 {
            let rho = -6.0 + 12.0 * k as f64 / 199.0;
            let b = point(rho, golden * k as f64);
            let restricted = incoherent(&b) / z;
            let reconciled = mvt_logpdf(&b, &loc, &sigma, res.df()).exp();
            worst = worst.max((restricted - reconciled).abs() / reconciled);
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst < 1e-5 && elapsed < Duration::from_secs(10),
        format!("max pointwise relative error {worst:.2e} (< 1e-5), {:.2} s (< 10 s)", elapsed.as_secs_f64()),
    )
}

fn criterion_3() -> Outcome {
    let mut g = rng(303);
    let shapes = [(1, 2), (1, 4), (3, 2), (3, 4)];
    let mut worst: f64 = 0.0;
    for k in 0..1000 {
        let (n_u, n_b) = shapes[k % shapes.len()];
        let h = random_hierarchy(&mut g, n_u, n_b);
        let w = random_spd(&mut g, h.n(), 0.05) * 10f64.powf(g.random_range(-2.0..2.0));
        let y = normal_vector(&mut g, h.n()) * 5.0;
        let a = mint(&h, &y, &w).unwrap().full;
        let b = gaussian_conditioning(&h, &y, &w).unwrap().full;
        let mean_err = (a.mean() - b.mean()).amax() / y.amax().max(1.0);
        let cov_err = (a.cov() - b.cov()).amax() / a.cov().amax();
        worst = worst.max(mean_err).max(cov_err);
    }
    outcome(worst < 1e-10, format!("max relative difference {worst:.2e} (< 1e-10) over 1000 instances"))
}

fn criterion_4() -> Outcome {
    // Per-term agreement at the optimized nu_0.
    let mut g = rng(404);
    let (n, t) = (10, 50);
    let psi_mean = random_spd(&mut g, n, 0.2);
    let chol = psi_mean.clone().cholesky().unwrap().l();
    let r = &chol * normal_matrix(&mut g, n, t) * 1.3;
    let rm = ResidualMatrix::new(r.clone()).unwrap();
    let fit = optimize_nu0(&psi_mean, &rm, Execution::Sequential).unwrap();
    let objective = LooObjective::new(&psi_mean, &rm).unwrap();
    let mut worst: f64 = 0.0;
    for nu in [fit.nu0, n as f64 + 2.0, 3.0 * n as f64, 5.0 * n as f64] {
        let fast = objective.terms(nu).unwrap();
        let naive = naive_loo_terms(&psi_mean, &r, nu);
        worst = fast.iter().zip(&naive).fold(worst, |w, (a, b)| w.max((a - b).abs()));
    }

    // Timing at the larger size, single-threaded.
    let mut g = rng(405);
    let (n, t) = (111, 60);
    let psi_mean = random_spd(&mut g, n, 0.5);
    let chol = psi_mean.clone().cholesky().unwrap().l();
    let big = ResidualMatrix::new(&chol * normal_matrix(&mut g, n, t)).unwrap();
    let start = Instant::now();
    let big_fit = optimize_nu0(&psi_mean, &big, Execution::Sequential).unwrap();
    let elapsed = start.elapsed();

    outcome(
        worst < 1e-8 && elapsed < Duration::from_secs(2),
        format!(
            "max per-term |fast - naive| {worst:.2e} (< 1e-8); n=111 T=60 optimization {:.3} s (< 2 s), nu0 = {:.2}",
            elapsed.as_secs_f64(),
            big_fit.nu0
        ),
    )
}

fn criterion_5(st: &StudyResult, replications: usize) -> Outcome {
    let mint: Vec<Vec<f64>> = st
        .records
        .iter()
        .filter_map(|r| r.relative_widths(Method::Mint, true))
        .collect();
    let trec: Vec<Vec<f64>> = st
        .records
        .iter()
        .filter_map(|r| r.relative_widths(Method::Trec, true))
        .collect();
    let complete = mint.len() == replications && trec.len() == replications;
    let mint_narrow = mint.iter().filter(|w| w.iter().all(|&x| x < 1.0)).count();
    let trec_wider = trec.iter().filter(|w| w.iter().any(|&x| x > 1.0)).count();
    outcome(
        complete && mint_narrow == replications && trec_wider > 0,
        format!(
            "{} of {replications} replications scored; MinT narrower in {mint_narrow} (all required); \
             t-Rec wider than base in {trec_wider} (> 0 required)",
            st.records.len()
        ),
    )
}

fn criterion_6(st: &StudyResult) -> Outcome {
    let incoherence: Vec<f64> = st.records.iter().map(|r| r.scaled_incoherence.unwrap()).collect();
    let upper = 0;
    let trec95 = st.relative_widths(Method::Trec, upper, true);
    let mint95 = st.relative_widths(Method::Mint, upper, true);
    let trec80 = st.relative_widths(Method::Trec, upper, false);
    let mint80 = st.relative_widths(Method::Mint, upper, false);
    let rho_trec = spearman(&trec95, &incoherence);
    let rho_mint = spearman(&mint95, &incoherence);
    let (gt95, gm95) = (geometric_mean(&trec95), geometric_mean(&mint95));
    let (gt80, gm80) = (geometric_mean(&trec80), geometric_mean(&mint80));
    let ordering = gt95 > gm95 && gt80 > gm80 && gt95 > gt80;
    outcome(
        rho_trec > 0.5 && rho_mint.abs() < 0.2 && ordering,
        format!(
            "Spearman t-Rec {rho_trec:.3} (> 0.5), MinT {rho_mint:.3} (|.| < 0.2); \
             geometric-mean width U t-Rec {gt80:.4}/{gt95:.4} vs MinT {gm80:.4}/{gm95:.4} at 80/95% (ordering {})",
            if ordering { "holds" } else { "violated" }
        ),
    )
}

fn criterion_7() -> Outcome {
    let lengths = [5, 12, 30, 55, 200];
    let ratios: Vec<f64> = lengths
        .iter()
        .map(|&t| {
            let st = study(t, 2000, 7, vec![Method::Trec, Method::TrecMap]);
            let r: Vec<f64> = st
                .records
                .iter()
                .flat_map(|rec| {
                    let a = rec.scores.get(Method::Trec).unwrap();
                    let b = rec.scores.get(Method::TrecMap).unwrap();
                    a.series.iter().zip(&b.series).map(|(x, y)| x.width95 / y.width95).collect::<Vec<_>>()
                })
                .collect();
            geometric_mean(&r)
        })
        .collect();
    let decreasing = ratios.windows(2).all(|w| w[1] < w[0]);
    let last = *ratios.last().unwrap();
    let shown: Vec<String> = lengths
        .iter()
        .zip(&ratios)
        .map(|(t, r)| format!("T={t}: {r:.4}"))
        .collect();
    outcome(
        decreasing && (1.0..=1.02).contains(&last),
        format!(
            "{} (strictly decreasing: {decreasing}; T=200 in [1.00, 1.02])",
            shown.join(", ")
        ),
    )
}

fn criterion_8() -> Outcome {
    let replications = 10_000;
    let st = study(5, replications, 8, vec![Method::Mint, Method::Trec]);
    let report = aggregate_report(&st.run).unwrap();
    let m = report.method(Method::Mint).unwrap();
    let t = report.method(Method::Trec).unwrap();
    let pass = st.records.len() == replications
        && t.rel_mis95 < 1.0
        && 1.0 < m.rel_mis95
        && (0.85..=1.0).contains(&t.rel_mis95)
        && (1.0..=1.25).contains(&m.rel_mis95)
        && (m.rel_mse - 1.0).abs() <= 0.02
        && (t.rel_mse - 1.0).abs() <= 0.02;
    outcome(
        pass,
        format!(
            "RelMIS95 t-Rec {:.4} (in [0.85, 1.00]) < 1 < MinT {:.4} (in [1.00, 1.25]); \
             RelMSE t-Rec {:.4}, MinT {:.4} (within 0.02 of 1); {} of {replications} scored",
            t.rel_mis95,
            m.rel_mis95,
            t.rel_mse,
            m.rel_mse,
            st.records.len()
        ),
    )
}

fn criterion_9() -> Outcome {
    let locs = [-3.0, 0.0, 1.5, 12.0, -0.4];
    let scales = [0.2, 1.0, 3.0, 7.5, 0.6];
    let offsets = [-2.5, 0.0, 0.3, 1.7, 4.0];
    let dfs = [None, Some(2.5), Some(4.0), Some(10.0), Some(60.0)];
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for i in 0..5 {
        for j in 0..5 {
            for df in [dfs[(i + j) % 5], dfs[(i + 2 * j + 1) % 5]] {
                let (loc, scale) = (locs[i], scales[(i + j) % 5]);
                let y = loc + offsets[j] * scale;
                let f = match df {
                    None => UnivariateForecast::Gaussian { loc, scale },
                    Some(df) => UnivariateForecast::StudentT { loc, scale, df },
                };
                let quad = crps_by_quadrature(&|x| f.cdf(x), y, scale);
                worst = worst.max((f.crps(y) - quad).abs());
                cases += 1;
            }
        }
    }

    let d = JointDistribution::Gaussian(
        MultivariateGaussian::new(DVector::from_vec(vec![0.5]), DMatrix::from_element(1, 1, 4.0)).unwrap(),
    );
    let y = DVector::from_vec(vec![1.9]);
    let es = energy_score(&d, &y, 100_000, 9).unwrap();
    let crps = UnivariateForecast::Gaussian { loc: 0.5, scale: 2.0 }.crps(1.9);
    let es_rel = (es - crps).abs() / crps;
    outcome(
        cases == 50 && worst < 1e-6 && es_rel < 0.02,
        format!(
            "{cases} cases, max |closed form - quadrature| {worst:.2e} (< 1e-6); \
             energy score {es:.5} vs CRPS {crps:.5}, relative gap {es_rel:.4} (< 0.02)"
        ),
    )
}

fn criterion_10() -> Outcome {
    let mut g = rng(1010);
    let mut exact = true;
    for trial in 0..200 {
        let n = 1 + trial % 6;
        let (t1, t2) = (g.random_range(0..15), g.random_range(0..15));
        let prior = IwParams::new(random_spd(&mut g, n, 0.1), n as f64 + 3.0 + trial as f64).unwrap();
        let r1 = ResidualMatrix::new(normal_matrix(&mut g, n, t1) * 3.0).unwrap();
        let r2 = ResidualMatrix::new(normal_matrix(&mut g, n, t2) * 3.0).unwrap();
        let two = iw_posterior(&iw_posterior(&prior, &r1).unwrap(), &r2).unwrap();
        let one = iw_posterior(&prior, &r1.hstack(&r2).unwrap()).unwrap();
        exact &= two.psi() == one.psi()
            && two.nu() == one.nu()
            && one.nu() == prior.nu() + (t1 + t2) as f64;
    }
    outcome(exact, "two-batch posterior bitwise equal to one-batch over 200 random splits".into())
}

fn main() {
    let mut failures = 0;
    let mut run = |n: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f));
        let secs = start.elapsed().as_secs_f64();
        let (pass, detail) = match result {
            Ok(o) => (o.pass, o.detail),
            Err(_) => (false, "panicked".to_string()),
        };
        if !pass {
            failures += 1;
        }
        println!(
            "criterion {n:>2} {} {name}: {detail} [{secs:.1} s]",
            if pass { "PASS" } else { "FAIL" }
        );
    };

    run(1, "trec matches minimal-hierarchy closed forms", &mut criterion_1);
    run(2, "trec bottom density equals normalized slice", &mut criterion_2);
    run(3, "gaussian conditioning equals mint", &mut criterion_3);
    run(4, "fast LOO objective and timing", &mut criterion_4);

    let replications = 10_000;
    let shared = study(12, replications, 5, vec![Method::Mint, Method::Trec]);
    run(5, "MinT always narrows, t-Rec sometimes widens", &mut || criterion_5(&shared, replications));
    run(6, "relative width tracks scaled incoherence", &mut || criterion_6(&shared));
    drop(shared);

    run(7, "t-Rec/t-Rec-MAP width ratio converges in T", &mut criterion_7);
    run(8, "interval-score direction at T = 5", &mut criterion_8);
    run(9, "CRPS closed forms and 1-D energy score", &mut criterion_9);
    run(10, "posterior composition is exact", &mut criterion_10);

    println!("acceptance: {} of 10 criteria passed", 10 - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
