//! Influence-function plugins.
//!
//! Each supported functional is fitted on internal data and returns its
//! efficient estimate together with the per-observation efficient influence
//! values evaluated at that estimate.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{check_binary, FunctionalFit, InternalDataset};

/// Columns whose singular values fall below this fraction of the largest are
/// treated as rank deficient.
pub const RANK_TOL: f64 = 1e-10;
/// Fitted propensities are clamped into `[PROPENSITY_TRIM, 1 - PROPENSITY_TRIM]`.
pub const PROPENSITY_TRIM: f64 = 0.01;
pub const LOGISTIC_SCORE_TOL: f64 = 1e-10;
pub const LOGISTIC_MAX_ITER: usize = 100;
/// Linear predictors beyond this magnitude pin probabilities at 0 or 1.
const LOGISTIC_PINNED_ETA: f64 = 30.0;

/// A functional of the internal distribution, referenced by column names.
///
/// JSON form: `{"functional": "<kind>", "args": {...}}` where the args are
/// - `mean`: `{"column": "X"}`
/// - `joint_ols`: `{"outcome": "Y", "regressors": ["X", "T"], "intercept": true}`
/// - `marginal_ols`: `{"outcome": "Y", "regressor": "X1"}`
/// - `aipw_ate`: `{"outcome": "Y", "treatment": "T", "covariates": ["X"],
///   "outcome_covariates": ["X", "X2"]}` (the last key optional)
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "functional", content = "args", rename_all = "snake_case")]
pub enum FunctionalDescriptor {
    Mean {
        column: String,
    },
    JointOls {
        outcome: String,
        regressors: Vec<String>,
        #[serde(default = "default_true")]
        intercept: bool,
    },
    MarginalOls {
        outcome: String,
        regressor: String,
    },
    AipwAte {
        outcome: String,
        treatment: String,
        covariates: Vec<String>,
        /// Regressors for the per-arm outcome models; defaults to `covariates`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        outcome_covariates: Option<Vec<String>>,
    },
}

fn default_true() -> bool {
    true
}

impl FunctionalDescriptor {
    pub fn mean(column: impl Into<String>) -> Self {
        Self::Mean {
            column: column.into(),
        }
    }

    pub fn joint_ols<S: Into<String>>(
        outcome: impl Into<String>,
        regressors: impl IntoIterator<Item = S>,
        intercept: bool,
    ) -> Self {
        Self::JointOls {
            outcome: outcome.into(),
            regressors: regressors.into_iter().map(Into::into).collect(),
            intercept,
        }
    }

    pub fn marginal_ols(outcome: impl Into<String>, regressor: impl Into<String>) -> Self {
        Self::MarginalOls {
            outcome: outcome.into(),
            regressor: regressor.into(),
        }
    }

    /// Number of scalar components the functional produces.
    pub fn dim(&self) -> usize {
        match self {
            Self::JointOls {
                regressors,
                intercept,
                ..
            } => regressors.len() + usize::from(*intercept),
            _ => 1,
        }
    }

    pub fn component_labels(&self) -> Vec<String> {
        match self {
            Self::Mean { column } => vec![format!("mean({column})")],
            Self::JointOls {
                outcome,
                regressors,
                intercept,
            } => {
                let model = format!("ols({outcome}~{})", regressors.join("+"));
                let mut out = Vec::new();
                if *intercept {
                    out.push(format!("{model}[(intercept)]"));
                }
                out.extend(regressors.iter().map(|r| format!("{model}[{r}]")));
                out
            }
            Self::MarginalOls { outcome, regressor } => {
                vec![format!("ols({outcome}~0+{regressor})[{regressor}]")]
            }
            Self::AipwAte {
                outcome, treatment, ..
            } => vec![format!("ate({outcome};{treatment})")],
        }
    }

    /// Fits the functional on the internal data.
    pub fn fit(&self, data: &InternalDataset) -> Result<FunctionalFit> {
        match self {
            Self::Mean { column } => fit_mean(data, column),
            Self::JointOls {
                outcome,
                regressors,
                intercept,
            } => fit_joint_ols(data, outcome, regressors, *intercept),
            Self::MarginalOls { outcome, regressor } => fit_marginal_ols(data, outcome, regressor),
            Self::AipwAte {
                outcome,
                treatment,
                covariates,
                outcome_covariates,
            } => fit_aipw_ate(
                data,
                outcome,
                treatment,
                covariates,
                outcome_covariates.as_deref(),
            ),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("functional spec: {e}")))
    }
}

fn column_vector(data: &InternalDataset, name: &str) -> Result<DVector<f64>> {
    Ok(DVector::from_column_slice(data.column(name)?))
}

fn design_matrix(data: &InternalDataset, columns: &[String], intercept: bool) -> Result<DMatrix<f64>> {
    let n = data.n();
    let offset = usize::from(intercept);
    let mut x = DMatrix::zeros(n, columns.len() + offset);
    if intercept {
        x.column_mut(0).fill(1.0);
    }
    for (j, name) in columns.iter().enumerate() {
        x.column_mut(j + offset).copy_from_slice(data.column(name)?);
    }
    Ok(x)
}

/// Sample mean with influence `x_i - mean`.
pub fn fit_mean(data: &InternalDataset, col: &str) -> Result<FunctionalFit> {
    let x = column_vector(data, col)?;
    let mean = x.mean();
    let influence = DMatrix::from_iterator(x.len(), 1, x.iter().map(|v| v - mean));
    FunctionalFit::new(
        DVector::from_element(1, mean),
        influence,
        FunctionalDescriptor::mean(col).component_labels(),
    )
}

/// Least-squares fit with its estimating-equation influence.
#[derive(Debug, Clone)]
pub struct OlsFit {
    pub coefficients: DVector<f64>,
    pub residuals: DVector<f64>,
    /// Rows `{E(VV')}^{-1} V_i e_i`.
    pub influence: DMatrix<f64>,
    pub warnings: Vec<String>,
}

/// Ordinary least squares of `y` on the columns of `design`.
pub fn ols(design: &DMatrix<f64>, y: &DVector<f64>) -> Result<OlsFit> {
    let n = design.nrows();
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "design has {n} rows, response {}",
            y.len()
        )));
    }
    if design.ncols() == 0 {
        return Err(Error::RankDeficientDesign("no regressors".into()));
    }
    if n < design.ncols() {
        return Err(Error::RankDeficientDesign(format!(
            "{n} rows for {} regressors",
            design.ncols()
        )));
    }
    let ratio = linalg::singular_value_ratio(design);
    if ratio <= RANK_TOL {
        return Err(Error::RankDeficientDesign(format!(
            "singular value ratio {ratio:e}"
        )));
    }
    let nf = n as f64;
    let gram = design.transpose() * design / nf;
    let moment = design.transpose() * y / nf;
    let mut warnings = Vec::new();
    let solved = linalg::solve_spd(&gram, &DMatrix::from_column_slice(moment.len(), 1, moment.as_slice()))
        .map_err(Error::RankDeficientDesign)?;
    warnings.extend(solved.warning);
    let coefficients = solved.solution.column(0).into_owned();
    let residuals = y - design * &coefficients;
    // V' diag(e), k x n
    let mut scores = design.transpose();
    for (i, mut col) in scores.column_iter_mut().enumerate() {
        col *= residuals[i];
    }
    let infl = linalg::solve_spd(&gram, &scores).map_err(Error::RankDeficientDesign)?;
    warnings.extend(infl.warning);
    Ok(OlsFit {
        coefficients,
        residuals,
        influence: infl.solution.transpose(),
        warnings,
    })
}

/// Joint least-squares regression; influence rows `{Ê(VV')}^{-1} V_i e_i`.
pub fn fit_joint_ols(
    data: &InternalDataset,
    outcome: &str,
    regressors: &[String],
    intercept: bool,
) -> Result<FunctionalFit> {
    let y = column_vector(data, outcome)?;
    let v = design_matrix(data, regressors, intercept)?;
    let fit = ols(&v, &y)?;
    let desc = FunctionalDescriptor::joint_ols(outcome, regressors.iter().cloned(), intercept);
    let mut out = FunctionalFit::new(fit.coefficients, fit.influence, desc.component_labels())?;
    out.warnings = fit.warnings;
    Ok(out)
}

/// No-intercept univariate regression of `outcome` on `regressor`.
pub fn fit_marginal_ols(data: &InternalDataset, outcome: &str, regressor: &str) -> Result<FunctionalFit> {
    let y = data.column(outcome)?;
    let x = data.column(regressor)?;
    let n = x.len() as f64;
    let second = x.iter().map(|v| v * v).sum::<f64>() / n;
    if !(second > 0.0) || !second.is_finite() {
        return Err(Error::DegenerateRegressor(regressor.to_string()));
    }
    let slope = x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / n / second;
    let influence = DMatrix::from_iterator(
        x.len(),
        1,
        x.iter().zip(y).map(|(a, b)| a * (b - a * slope) / second),
    );
    FunctionalFit::new(
        DVector::from_element(1, slope),
        influence,
        FunctionalDescriptor::marginal_ols(outcome, regressor).component_labels(),
    )
}

/// Several marginal regressions on the same outcome, influence columns stacked.
pub fn fit_marginal_ols_batch(
    data: &InternalDataset,
    outcome: &str,
    regressors: &[String],
) -> Result<FunctionalFit> {
    let fits = regressors
        .iter()
        .map(|r| fit_marginal_ols(data, outcome, r))
        .collect::<Result<Vec<_>>>()?;
    FunctionalFit::stack(fits)
}

/// Logistic regression coefficients (intercept first) and diagnostics.
#[derive(Debug, Clone)]
pub struct LogisticFit {
    pub coefficients: DVector<f64>,
    pub iterations: usize,
    pub warnings: Vec<String>,
}

impl LogisticFit {
    pub fn predict(&self, design: &DMatrix<f64>) -> DVector<f64> {
        (design * &self.coefficients).map(expit)
    }
}

pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Bernoulli log-likelihood with logit link, averaged over rows.
pub fn logistic_loglik(design: &DMatrix<f64>, y: &DVector<f64>, coef: &DVector<f64>) -> f64 {
    let eta = design * coef;
    eta.iter()
        .zip(y.iter())
        .map(|(e, yi)| yi * e - softplus(*e))
        .sum::<f64>()
        / y.len() as f64
}

/// Gradient of [`logistic_loglik`].
pub fn logistic_score(design: &DMatrix<f64>, y: &DVector<f64>, coef: &DVector<f64>) -> DVector<f64> {
    let resid = y - (design * coef).map(expit);
    design.transpose() * resid / y.len() as f64
}

/// Damped Newton maximisation of the logistic log-likelihood.
///
/// Converges when the max-norm of the averaged score drops below
/// [`LOGISTIC_SCORE_TOL`]; gives up after [`LOGISTIC_MAX_ITER`] iterations.
pub fn logistic_newton(design: &DMatrix<f64>, y: &DVector<f64>) -> Result<LogisticFit> {
    let (n, k) = design.shape();
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "design has {n} rows, response {}",
            y.len()
        )));
    }
    if let Some(row) = y.iter().position(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::NonBinaryTreatment {
            column: "response".into(),
            row,
            value: y[row],
        });
    }
    let ratio = linalg::singular_value_ratio(design);
    if n < k || ratio <= RANK_TOL {
        return Err(Error::RankDeficientDesign(format!(
            "logistic design singular value ratio {ratio:e}"
        )));
    }
    let nf = n as f64;
    let mut coef = DVector::zeros(k);
    let mut ll = logistic_loglik(design, y, &coef);
    let mut warnings = Vec::new();
    for iter in 0..=LOGISTIC_MAX_ITER {
        let score = logistic_score(design, y, &coef);
        if score.amax() < LOGISTIC_SCORE_TOL {
            let eta_max = (design * &coef).amax();
            if eta_max > LOGISTIC_PINNED_ETA {
                return Err(Error::Separation(format!(
                    "fitted probabilities pinned at 0/1 (|linear predictor| up to {eta_max:.1})"
                )));
            }
            return Ok(LogisticFit {
                coefficients: coef,
                iterations: iter,
                warnings,
            });
        }
        if iter == LOGISTIC_MAX_ITER {
            break;
        }
        let probs = (design * &coef).map(expit);
        let mut weighted = design.clone();
        for (i, mut row) in weighted.row_iter_mut().enumerate() {
            row *= probs[i] * (1.0 - probs[i]);
        }
        let hessian = design.transpose() * weighted / nf;
        let solved = linalg::solve_spd(&hessian, &DMatrix::from_column_slice(k, 1, score.as_slice()))
            .map_err(|e| Error::Separation(format!("information matrix degenerate: {e}")))?;
        if let Some(w) = solved.warning {
            warnings.push(w);
        }
        let step = solved.solution.column(0).into_owned();
        if !step.iter().all(|v| v.is_finite()) || step.norm() > 1e8 {
            return Err(Error::Separation("Newton step diverged".into()));
        }
        let mut t = 1.0;
        loop {
            let trial = &coef + &step * t;
            let trial_ll = logistic_loglik(design, y, &trial);
            if trial_ll >= ll - 1e-14 * ll.abs() || t < 1e-10 {
                coef = trial;
                ll = trial_ll;
                break;
            }
            t *= 0.5;
        }
    }
    let eta_max = (design * &coef).amax();
    Err(Error::Separation(format!(
        "no convergence in {LOGISTIC_MAX_ITER} Newton iterations (|linear predictor| up to {eta_max:.1})"
    )))
}

/// Logistic regression of a binary `response` on an intercept plus `covariates`.
pub fn fit_logistic(data: &InternalDataset, response: &str, covariates: &[String]) -> Result<LogisticFit> {
    let y = column_vector(data, response)?;
    check_binary(response, y.as_slice())?;
    let x = design_matrix(data, covariates, true)?;
    logistic_newton(&x, &y)
}

/// Augmented inverse-probability-weighted average treatment effect.
///
/// The propensity is a logistic model on `covariates` (clamped into
/// `[0.01, 0.99]`); the outcome regressions are per-arm least squares on
/// `outcome_covariates` (defaulting to `covariates`), each with an intercept.
pub fn fit_aipw_ate(
    data: &InternalDataset,
    outcome: &str,
    treatment: &str,
    covariates: &[String],
    outcome_covariates: Option<&[String]>,
) -> Result<FunctionalFit> {
    let y = data.column(outcome)?;
    let t = data.column(treatment)?;
    check_binary(treatment, t)?;
    let treated: Vec<usize> = (0..t.len()).filter(|&i| t[i] == 1.0).collect();
    let control: Vec<usize> = (0..t.len()).filter(|&i| t[i] == 0.0).collect();
    if treated.is_empty() {
        return Err(Error::EmptyArm { arm: 1 });
    }
    if control.is_empty() {
        return Err(Error::EmptyArm { arm: 0 });
    }

    let ps_design = design_matrix(data, covariates, true)?;
    let t_vec = DVector::from_column_slice(t);
    let ps_fit = logistic_newton(&ps_design, &t_vec).map_err(|e| match e {
        Error::Separation(d) => Error::PropensityDegenerate(d),
        other => other,
    })?;
    let raw_ps = ps_fit.predict(&ps_design);
    let trimmed = raw_ps
        .iter()
        .filter(|&&p| !(PROPENSITY_TRIM..=1.0 - PROPENSITY_TRIM).contains(&p))
        .count();
    let ps = raw_ps.map(|p| p.clamp(PROPENSITY_TRIM, 1.0 - PROPENSITY_TRIM));

    let out_cov = outcome_covariates.unwrap_or(covariates);
    let out_design = design_matrix(data, out_cov, true)?;
    let y_vec = DVector::from_column_slice(y);
    let arm_fit = |rows: &[usize]| -> Result<OlsFit> {
        ols(
            &linalg::select_rows(&out_design, rows),
            &linalg::select_entries(&y_vec, rows),
        )
    };
    let fit1 = arm_fit(&treated)?;
    let fit0 = arm_fit(&control)?;
    let mu1 = &out_design * &fit1.coefficients;
    let mu0 = &out_design * &fit0.coefficients;

    let transform: Vec<f64> = (0..y.len())
        .map(|i| {
            t[i] / ps[i] * (y[i] - mu1[i]) - (1.0 - t[i]) / (1.0 - ps[i]) * (y[i] - mu0[i])
                + mu1[i]
                - mu0[i]
        })
        .collect();
    let n = transform.len() as f64;
    let tau = transform.iter().sum::<f64>() / n;
    let influence = DMatrix::from_iterator(transform.len(), 1, transform.iter().map(|a| a - tau));
    let desc = FunctionalDescriptor::AipwAte {
        outcome: outcome.into(),
        treatment: treatment.into(),
        covariates: covariates.to_vec(),
        outcome_covariates: outcome_covariates.map(<[String]>::to_vec),
    };
    let mut fit = FunctionalFit::new(DVector::from_element(1, tau), influence, desc.component_labels())?;
    fit.warnings.extend(ps_fit.warnings);
    fit.warnings.extend(fit1.warnings);
    fit.warnings.extend(fit0.warnings);
    if trimmed > 0 {
        fit.warnings
            .push(format!("{trimmed} propensities clamped into [0.01, 0.99]"));
    }
    Ok(fit)
}

/// Fits every bound functional and stacks influence columns in binding order.
pub fn evaluate_binding(data: &InternalDataset, binding: &[FunctionalDescriptor]) -> Result<FunctionalFit> {
    let fits = binding
        .iter()
        .map(|d| d.fit(data))
        .collect::<Result<Vec<_>>>()?;
    FunctionalFit::stack(fits)
}


#[cfg(test)]
mod properties {
    use super::*;
    use crate::model::{validate_dataset, Roles};
    use proptest::prelude::*;

    fn data(cols: Vec<(&str, Vec<f64>)>) -> InternalDataset {
        validate_dataset(
            cols.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            Roles::default(),
        )
        .unwrap()
    }

    fn xy() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
        (8usize..60).prop_flat_map(|n| {
            (
                proptest::collection::vec(-3.0f64..3.0, n),
                proptest::collection::vec(-3.0f64..3.0, n),
                proptest::collection::vec(-5.0f64..5.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn ols_solves_normal_equations((x1, x2, y) in xy()) {
            let design = DMatrix::from_fn(y.len(), 3, |i, j| match j {
                0 => 1.0,
                1 => x1[i],
                _ => x2[i],
            });
            prop_assume!(linalg::singular_value_ratio(&design) > 1e-6);
            let fit = ols(&design, &DVector::from_vec(y.clone())).unwrap();
            let normal_eq = design.transpose() * &fit.residuals;
            prop_assert!(normal_eq.amax() < 1e-8 * (1.0 + y.iter().map(|v| v.abs()).sum::<f64>()));
        }

        #[test]
        fn marginal_ols_closed_form((x, _unused, y) in xy()) {
            let sxx: f64 = x.iter().map(|v| v * v).sum();
            prop_assume!(sxx > 1e-6);
            let sxy: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
            let ds = data(vec![("X", x), ("Y", y)]);
            let fit = fit_marginal_ols(&ds, "Y", "X").unwrap();
            prop_assert!((fit.estimate[0] - sxy / sxx).abs() < 1e-10 * (1.0 + (sxy / sxx).abs()));
        }

        #[test]
        fn joint_ols_scales_with_outcome((x1, x2, y) in xy(), c in 0.1f64..10.0) {
            let scaled: Vec<f64> = y.iter().map(|v| v * c).collect();
            let a = data(vec![("X1", x1.clone()), ("X2", x2.clone()), ("Y", y)]);
            let b = data(vec![("X1", x1), ("X2", x2), ("Y", scaled)]);
            let regs = vec!["X1".to_string(), "X2".to_string()];
            let (Ok(fa), Ok(fb)) = (fit_joint_ols(&a, "Y", &regs, true), fit_joint_ols(&b, "Y", &regs, true)) else {
                return Ok(());
            };
            prop_assert!((fa.estimate * c - fb.estimate).amax() < 1e-8 * c);
        }

        #[test]
        fn logistic_score_vanishes_at_fit(n in 40usize..120, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let y: Vec<f64> = x
                .iter()
                .map(|xi| if rng.random::<f64>() < expit(0.5 * xi) { 1.0 } else { 0.0 })
                .collect();
            let design = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { x[i] });
            let yv = DVector::from_vec(y);
            if let Ok(fit) = logistic_newton(&design, &yv) {
                prop_assert!(logistic_score(&design, &yv, &fit.coefficients).amax() < LOGISTIC_SCORE_TOL);
            }
        }

        #[test]
        fn aipw_is_shift_invariant(n in 40usize..120, seed in any::<u64>(), shift in -10.0f64..10.0) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.5..1.5)).collect();
            let t: Vec<f64> = x
                .iter()
                .map(|xi| if rng.random::<f64>() < expit(0.3 - xi) { 1.0 } else { 0.0 })
                .collect();
            let y: Vec<f64> = x.iter().zip(&t).map(|(xi, ti)| xi + ti * 2.0 + rng.random_range(-1.0..1.0)).collect();
            let y2: Vec<f64> = y.iter().map(|v| v + shift).collect();
            let a = data(vec![("X", x.clone()), ("T", t.clone()), ("Y", y)]);
            let b = data(vec![("X", x), ("T", t), ("Y", y2)]);
            let cov = vec!["X".to_string()];
            if let (Ok(fa), Ok(fb)) = (
                fit_aipw_ate(&a, "Y", "T", &cov, None),
                fit_aipw_ate(&b, "Y", "T", &cov, None),
            ) {
                prop_assert!((fa.estimate[0] - fb.estimate[0]).abs() < 1e-8 * (1.0 + shift.abs()));
            }
        }
    }
}
