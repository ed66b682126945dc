//! Reconciliation methods: MinT, Gaussian conditioning, the closed-form
//! multivariate-t reconciliation (t-Rec) and its ablation variants.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::covmodel::{iw_map, iw_posterior, shrinkage_covariance, IwParams, ResidualMatrix};
use crate::dists::{JointDistribution, MultivariateGaussian, MultivariateT};
use crate::error::{Error, Result};
use crate::hierarchy::Hierarchy;
use crate::linalg::{cholesky, symmetrize};
use crate::priorfit::{fit_prior, PriorOptions, PriorStructure};

/// Output of [`mint`].
#[derive(Debug, Clone)]
pub struct MintResult {
    /// Reconciled bottom-level distribution `N(P y_hat, P W P^T)`.
    pub bottom: MultivariateGaussian,
    /// Reconciled distribution over all series, `N(S P y_hat, S P W P^T S^T)`.
    pub full: MultivariateGaussian,
    /// `P = (S^T W^-1 S)^-1 S^T W^-1`, `n_b x n`.
    pub projection: DMatrix<f64>,
}

/// Minimum-trace projection of `y_hat` onto the coherent subspace.
pub fn mint(h: &Hierarchy, y_hat: &DVector<f64>, w: &DMatrix<f64>) -> Result<MintResult> {
    h.check_len(y_hat.len())?;
    check_square(w, h.n(), "W")?;
    let s = h.summing_matrix();
    let w_chol = cholesky(&symmetrize(w), "base error covariance W")?;
    let w_inv_s = w_chol.solve(&s);
    let gram = symmetrize(&(s.transpose() * &w_inv_s));
    let gram_chol = cholesky(&gram, "S^T W^-1 S")?;
    let projection = gram_chol.solve(&w_inv_s.transpose());

    let bottom_mean = &projection * y_hat;
    let bottom_cov = symmetrize(&(&projection * w * projection.transpose()));
    let bottom = MultivariateGaussian::new(bottom_mean, bottom_cov)?;
    let full = bottom.map_affine(&s)?;
    Ok(MintResult {
        bottom,
        full,
        projection,
    })
}

/// Pieces of the block partition of a joint scale matrix along the
/// constraint `u - A b = 0`.
struct ConstraintBlocks {
    /// `Psi_UB^T - Psi_B A^T`, `n_b x n_u`.
    cross: DMatrix<f64>,
    /// Scale of the incoherence `U - A B`, `n_u x n_u`.
    q: DMatrix<f64>,
    psi_b: DMatrix<f64>,
    /// `A b_hat - u_hat`.
    incoherence: DVector<f64>,
    b_hat: DVector<f64>,
}

impl ConstraintBlocks {
    fn new(h: &Hierarchy, y_hat: &DVector<f64>, psi: &DMatrix<f64>) -> Self {
        let (n_u, n_b) = (h.n_upper(), h.n_bottom());
        let a = h.aggregation();
        let psi_u = psi.view((0, 0), (n_u, n_u));
        let psi_ub = psi.view((0, n_u), (n_u, n_b));
        let psi_b = psi.view((n_u, n_u), (n_b, n_b)).into_owned();
        let cross = psi_ub.transpose() - &psi_b * a.transpose();
        let q = psi_u - psi_ub * a.transpose() - a * psi_ub.transpose() + a * &psi_b * a.transpose();
        let u_hat = y_hat.rows(0, n_u);
        let b_hat = y_hat.rows(n_u, n_b).into_owned();
        let incoherence = a * &b_hat - u_hat;
        Self {
            cross,
            q: symmetrize(&q),
            psi_b,
            incoherence,
            b_hat,
        }
    }

    /// Returns `(conditional mean, unscaled conditional scale, d^T Q^-1 d)`.
    fn condition(&self) -> Result<(DVector<f64>, DMatrix<f64>, f64)> {
        let q_chol = cholesky(&self.q, "constraint scale Q").map_err(|_| {
            Error::DegenerateConstraint(
                "the joint scale is singular along the aggregation constraints".into(),
            )
        })?;
        let q_inv_d = q_chol.solve(&self.incoherence);
        let mean = &self.b_hat + &self.cross * &q_inv_d;
        let q_inv_cross_t = q_chol.solve(&self.cross.transpose());
        let scale = symmetrize(&(&self.psi_b - &self.cross * q_inv_cross_t));
        let maha = self.incoherence.dot(&q_inv_d);
        Ok((mean, scale, maha))
    }
}

/// Output of [`gaussian_conditioning`].
#[derive(Debug, Clone)]
pub struct GaussianReconciliation {
    pub bottom: MultivariateGaussian,
    pub full: MultivariateGaussian,
}

/// Conditions `N(y_hat, W)` on `U - A B = 0`.
pub fn gaussian_conditioning(
    h: &Hierarchy,
    y_hat: &DVector<f64>,
    w: &DMatrix<f64>,
) -> Result<GaussianReconciliation> {
    h.check_len(y_hat.len())?;
    check_square(w, h.n(), "W")?;
    let blocks = ConstraintBlocks::new(h, y_hat, &symmetrize(w));
    let (mean, cov, _) = blocks.condition()?;
    let bottom = MultivariateGaussian::new(mean, cov)?;
    let full = bottom.map_affine(&h.summing_matrix())?;
    Ok(GaussianReconciliation { bottom, full })
}

/// Output of [`trec`].
#[derive(Debug, Clone)]
pub struct TrecResult {
    /// `mt(b_tilde, Sigma_B, nu_tilde)`.
    pub bottom: MultivariateT,
    /// `mt(S b_tilde, S Sigma_B S^T, nu_tilde)`.
    pub full: MultivariateT,
    /// Scale inflation factor `(1 + d^T Q^-1 d) / nu_tilde`.
    pub c: f64,
    /// Constraint scale built from the posterior `Psi'`.
    pub q: DMatrix<f64>,
    /// `sqrt(d^T Q^-1 d)` with `d = A b_hat - u_hat`.
    pub scaled_incoherence: f64,
}

impl TrecResult {
    pub fn df(&self) -> f64 {
        self.bottom.df()
    }
}

/// Reconciles the posterior-predictive multivariate t of the base forecasts
/// by conditioning on the aggregation constraints.
///
/// With posterior `IW(Psi', nu')` the incoherent predictive is
/// `mt(y_hat, Psi' / (nu' - n + 1), nu' - n + 1)`; conditioning on the `n_u`
/// constraints adds `n_u` degrees of freedom, giving `nu' - n_b + 1`.
pub fn trec(h: &Hierarchy, y_hat: &DVector<f64>, post: &IwParams) -> Result<TrecResult> {
    h.check_len(y_hat.len())?;
    if post.dim() != h.n() {
        return Err(Error::Dimension(format!(
            "posterior has dimension {}, hierarchy has {} series",
            post.dim(),
            h.n()
        )));
    }
    let blocks = ConstraintBlocks::new(h, y_hat, post.psi());
    let (mean, scale, maha) = blocks.condition()?;
    let nu_tilde = post.nu() - h.n_bottom() as f64 + 1.0;
    let c = (1.0 + maha) / nu_tilde;
    let bottom = MultivariateT::new(mean, scale * c, nu_tilde)?;
    let full = bottom.map_affine(&h.summing_matrix())?;
    Ok(TrecResult {
        bottom,
        full,
        c,
        q: blocks.q,
        scaled_incoherence: maha.max(0.0).sqrt(),
    })
}

/// Scalar closed forms for the one-upper/two-bottom hierarchy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinimalTrec {
    pub b_tilde: [f64; 2],
    pub u_tilde: f64,
    pub sigma_b: [[f64; 2]; 2],
    /// Scale (not variance) of the reconciled upper series.
    pub sigma_u: f64,
    pub nu_tilde: f64,
    pub c: f64,
    pub q: f64,
    pub g1: f64,
    pub g2: f64,
    pub gu: f64,
}

/// Direct transcription of the minimal-hierarchy formulas, written
/// independently of [`trec`] so the two can be cross-checked.
pub fn trec_minimal_oracle(y_hat: [f64; 3], psi: &DMatrix<f64>, nu_prime: f64) -> Result<MinimalTrec> {
    if psi.shape() != (3, 3) {
        return Err(Error::Dimension("minimal hierarchy needs a 3x3 scale".into()));
    }
    let [u, b1, b2] = y_hat;
    let (pu, pu1, pu2) = (psi[(0, 0)], psi[(0, 1)], psi[(0, 2)]);
    let (p1, p12, p2) = (psi[(1, 1)], psi[(1, 2)], psi[(2, 2)]);
    let g1 = (p1 + p12) - pu1;
    let g2 = (p2 + p12) - pu2;
    let gu = pu - pu1 - pu2;
    let q = g1 + g2 + gu;
    if !(q > 0.0) {
        return Err(Error::DegenerateConstraint(format!("Q = {q}")));
    }
    let nu_tilde = nu_prime - 1.0;
    let inc = b1 + b2 - u;
    let c = (1.0 + inc * inc / q) / nu_tilde;
    Ok(MinimalTrec {
        b_tilde: [
            (1.0 - g1 / q) * b1 + g1 / q * (u - b2),
            (1.0 - g2 / q) * b2 + g2 / q * (u - b1),
        ],
        u_tilde: (1.0 - gu / q) * u + gu / q * (b1 + b2),
        sigma_b: [
            [c * (p1 - g1 * g1 / q), c * (p12 - g1 * g2 / q)],
            [c * (p12 - g1 * g2 / q), c * (p2 - g2 * g2 / q)],
        ],
        sigma_u: (c * (pu - gu * gu / q)).sqrt(),
        nu_tilde,
        c,
        q,
        g1,
        g2,
        gu,
    })
}

fn check_square(m: &DMatrix<f64>, n: usize, what: &str) -> Result<()> {
    if m.shape() != (n, n) {
        return Err(Error::Dimension(format!(
            "{what} is {}x{}, expected {n}x{n}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

/// Reconciliation methods. `Base` leaves the (incoherent) Gaussian base
/// forecast untouched and is the reference for relative scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Base,
    Mint,
    Trec,
    TrecDiag,
    TrecMap,
    TrecMinNu0,
}

impl Method {
    pub const RECONCILED: [Method; 5] = [
        Method::Mint,
        Method::Trec,
        Method::TrecDiag,
        Method::TrecMap,
        Method::TrecMinNu0,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Base => "base",
            Method::Mint => "mint",
            Method::Trec => "trec",
            Method::TrecDiag => "trec-diag",
            Method::TrecMap => "trec-map",
            Method::TrecMinNu0 => "trec-min-nu0",
        }
    }

    /// Whether the method needs the Inverse-Wishart prior.
    pub fn uses_prior(self) -> bool {
        matches!(
            self,
            Method::Trec | Method::TrecDiag | Method::TrecMap | Method::TrecMinNu0
        )
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "base" => Ok(Method::Base),
            "mint" => Ok(Method::Mint),
            "trec" | "t-rec" => Ok(Method::Trec),
            "trec-diag" | "t-rec-diag" => Ok(Method::TrecDiag),
            "trec-map" | "t-rec-map" => Ok(Method::TrecMap),
            "trec-min-nu0" | "t-rec-min-nu0" => Ok(Method::TrecMinNu0),
            other => Err(Error::InvalidArgument(format!("unknown method '{other}'"))),
        }
    }
}

/// Everything a reconciliation at one origin may need.
#[derive(Debug, Clone)]
pub struct ReconcileInputs<'a> {
    pub hierarchy: &'a Hierarchy,
    /// Base point forecasts `[u_hat; b_hat]`.
    pub y_hat: &'a DVector<f64>,
    /// In-sample residuals of the base forecasting models.
    pub residuals: &'a ResidualMatrix,
    /// Residuals of the naive/seasonal-naive baselines, used for the prior mean.
    pub prior_residuals: &'a ResidualMatrix,
    /// Fixes `nu_0` instead of optimizing it (ignored by `trec-min-nu0`).
    pub nu0: Option<f64>,
    /// Prior-mean structure for `trec`, `trec-map` and `trec-min-nu0`;
    /// `trec-diag` is always diagonal.
    pub prior: PriorStructure,
}

/// Quantities reported alongside a reconciled distribution.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_shrink: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prior_lambda_shrink: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nu0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nu_post: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loo_score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scaled_incoherence: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub df: Option<f64>,
}

/// A reconciled forecast tagged with the method that produced it.
#[derive(Debug, Clone)]
pub struct Reconciled {
    pub method: Method,
    /// Distribution over all `n` series.
    pub full: JointDistribution,
    /// Distribution over the `n_b` bottom series.
    pub bottom: JointDistribution,
    pub diagnostics: Diagnostics,
}

/// Runs one reconciliation method end to end. `Base` returns the Gaussian
/// base forecast `N(y_hat, W_hat)`.
pub fn reconcile_variant(method: Method, inputs: &ReconcileInputs<'_>) -> Result<Reconciled> {
    let h = inputs.hierarchy;
    if inputs.residuals.n() != h.n() || inputs.prior_residuals.n() != h.n() {
        return Err(Error::Dimension(
            "residual matrices must have one row per series".into(),
        ));
    }
    match method {
        Method::Base | Method::Mint => {
            let est = shrinkage_covariance(inputs.residuals)?;
            let diagnostics = Diagnostics {
                lambda_shrink: Some(est.lambda),
                ..Default::default()
            };
            if method == Method::Base {
                let base = MultivariateGaussian::new(inputs.y_hat.clone(), est.covariance)?;
                let n_u = h.n_upper();
                let sel = DMatrix::from_fn(h.n_bottom(), h.n(), |i, j| (j == i + n_u) as u8 as f64);
                return Ok(Reconciled {
                    method,
                    bottom: JointDistribution::Gaussian(base.map_affine(&sel)?),
                    full: JointDistribution::Gaussian(base),
                    diagnostics,
                });
            }
            let res = mint(h, inputs.y_hat, &est.covariance)?;
            Ok(Reconciled {
                method,
                full: JointDistribution::Gaussian(res.full),
                bottom: JointDistribution::Gaussian(res.bottom),
                diagnostics,
            })
        }
        Method::Trec | Method::TrecDiag | Method::TrecMap | Method::TrecMinNu0 => {
            let opts = PriorOptions {
                structure: if method == Method::TrecDiag {
                    PriorStructure::Diagonal
                } else {
                    inputs.prior
                },
                nu0: if method == Method::TrecMinNu0 {
                    Some(h.n() as f64 + 2.0)
                } else {
                    inputs.nu0
                },
                ..Default::default()
            };
            let prior = fit_prior(inputs.prior_residuals, inputs.residuals, &opts)?;
            let post = iw_posterior(&prior.spec.to_iw()?, inputs.residuals)?;
            let mut diagnostics = Diagnostics {
                prior_lambda_shrink: Some(prior.lambda_shrink),
                nu0: Some(prior.spec.nu0()),
                nu_post: Some(post.nu()),
                loo_score: prior.loo_score,
                ..Default::default()
            };
            if method == Method::TrecMap {
                let res = gaussian_conditioning(h, inputs.y_hat, &iw_map(&post))?;
                return Ok(Reconciled {
                    method,
                    full: JointDistribution::Gaussian(res.full),
                    bottom: JointDistribution::Gaussian(res.bottom),
                    diagnostics,
                });
            }
            let res = trec(h, inputs.y_hat, &post)?;
            diagnostics.c = Some(res.c);
            diagnostics.scaled_incoherence = Some(res.scaled_incoherence);
            diagnostics.df = Some(res.df());
            Ok(Reconciled {
                method,
                full: JointDistribution::StudentT(res.full),
                bottom: JointDistribution::StudentT(res.bottom),
                diagnostics,
            })
        }
    }
}
