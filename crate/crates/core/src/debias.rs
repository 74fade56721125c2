//! Screening of biased external summary coordinates.
//!
//! The discrepancy `beta_tilde - beta_int` is regressed on the whitening
//! matrix with an adaptive-lasso penalty. Coordinates whose estimated bias is
//! thresholded to exactly zero are treated as unbiased and retained for
//! fusion; the rest are dropped.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{estimate_eff, estimate_int, FusionInputs, FusionProblem};
use crate::linalg;
use crate::model::{FusionResult, Method, SelectionResult};

pub const LASSO_TOL: f64 = 1e-10;
pub const LASSO_MAX_SWEEPS: usize = 10_000;

/// Tuning of the debiasing step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DebiasConfig {
    /// Exponent of the adaptive weights `|d_j|^-alpha`.
    pub alpha: f64,
    /// Rate exponent in `lambda = C n^-w`.
    pub w: f64,
    #[serde(rename = "grid_C", alias = "grid_c")]
    pub grid_c: Vec<f64>,
    #[serde(rename = "K", alias = "k")]
    pub k: usize,
    /// Seed of the fold shuffle.
    pub seed: u64,
    /// Skips cross-validation when set.
    pub lambda_fixed: Option<f64>,
}

impl Default for DebiasConfig {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            w: 1.0,
            grid_c: default_grid(),
            k: 3,
            seed: 0,
            lambda_fixed: None,
        }
    }
}

/// Ten log-spaced points from 1e-2 to 1e2.
pub fn default_grid() -> Vec<f64> {
    (0..10).map(|i| 10f64.powf(-2.0 + 4.0 * i as f64 / 9.0)).collect()
}

impl DebiasConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidConfig(format!("alpha must be positive, got {}", self.alpha)));
        }
        if let Some(l) = self.lambda_fixed {
            if !(l >= 0.0) {
                return Err(Error::InvalidConfig(format!("lambda_fixed must be non-negative, got {l}")));
            }
            return Ok(());
        }
        let upper = (self.alpha + 1.0) / 2.0;
        if !(self.w > 0.5 && self.w < upper) {
            return Err(Error::InvalidConfig(format!(
                "w must lie in (1/2, {upper}), got {}",
                self.w
            )));
        }
        if self.k < 2 {
            return Err(Error::InvalidConfig(format!("K must be at least 2, got {}", self.k)));
        }
        if self.grid_c.is_empty() || self.grid_c.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
            return Err(Error::InvalidConfig("grid_C must be a non-empty list of positive reals".into()));
        }
        Ok(())
    }

    pub fn lambda_for(&self, c: f64, n: usize) -> f64 {
        c * (n as f64).powf(-self.w)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a JSON or TOML file (TOML when the extension is `.toml`).
    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml")) {
            let cfg: Self = toml::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
            cfg.validate()?;
            Ok(cfg)
        } else {
            Self::from_json(&text)
        }
    }
}

/// Whitened regression: `x = H^{-1/2}`, `y = x (beta_tilde - beta_int)`.
#[derive(Debug, Clone)]
pub struct Whitened {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
}

pub fn whiten(inputs: &FusionInputs) -> Result<Whitened> {
    whiten_parts(&inputs.calibration_matrix(), &(-inputs.discrepancy()))
}

/// Whitens the residual `resid` (`beta_tilde - beta_int`) by `h^{-1/2}`.
pub fn whiten_parts(h: &DMatrix<f64>, resid: &DVector<f64>) -> Result<Whitened> {
    let x = linalg::inv_sqrt_spd(h).map_err(Error::NotPositiveDefinite)?;
    let y = &x * resid;
    Ok(Whitened { x, y })
}

/// `|d_j|^-alpha`, infinite where `d_j == 0`.
pub fn adaptive_weights(discrepancy: &DVector<f64>, alpha: f64) -> DVector<f64> {
    discrepancy.map(|d| if d == 0.0 { f64::INFINITY } else { d.abs().powf(-alpha) })
}

/// `||y - x b||^2 + lambda sum_j w_j |b_j|`, with `inf * 0` read as 0.
pub fn lasso_objective(x: &DMatrix<f64>, y: &DVector<f64>, weights: &DVector<f64>, lambda: f64, b: &DVector<f64>) -> f64 {
    let penalty: f64 = b
        .iter()
        .zip(weights.iter())
        .filter(|(bj, _)| **bj != 0.0)
        .map(|(bj, wj)| lambda * wj * bj.abs())
        .sum();
    (y - x * b).norm_squared() + penalty
}

#[derive(Debug, Clone)]
pub struct LassoFit {
    pub b: DVector<f64>,
    /// Coordinates held at zero because their weight is infinite.
    pub pinned: Vec<usize>,
    pub sweeps: usize,
    /// Objective after each sweep.
    pub objective_trace: Vec<f64>,
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Cyclic coordinate descent for the weighted lasso without intercept.
pub fn adaptive_lasso(x: &DMatrix<f64>, y: &DVector<f64>, weights: &DVector<f64>, lambda: f64) -> Result<LassoFit> {
    let q = x.ncols();
    if x.nrows() != y.len() || weights.len() != q {
        return Err(Error::DimensionMismatch(format!(
            "lasso design {}x{}, response {}, weights {}",
            x.nrows(),
            q,
            y.len(),
            weights.len()
        )));
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidConfig(format!("lambda must be non-negative, got {lambda}")));
    }
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::InvalidConfig("adaptive weights must be non-negative".into()));
    }
    let pinned: Vec<usize> = (0..q).filter(|&j| weights[j].is_infinite()).collect();
    let mut b = DVector::zeros(q);
    if lambda.is_infinite() {
        let obj = lasso_objective(x, y, weights, lambda, &b);
        return Ok(LassoFit {
            b,
            pinned,
            sweeps: 0,
            objective_trace: vec![obj],
        });
    }
    let col_sq: Vec<f64> = (0..q).map(|j| x.column(j).norm_squared()).collect();
    let mut resid = y.clone();
    let mut trace = Vec::new();
    for sweep in 1..=LASSO_MAX_SWEEPS {
        let mut max_change = 0.0_f64;
        for j in 0..q {
            if weights[j].is_infinite() || col_sq[j] == 0.0 {
                continue;
            }
            let xj = x.column(j);
            let old = b[j];
            let z = xj.dot(&resid) + col_sq[j] * old;
            let new = soft_threshold(z, lambda * weights[j] / 2.0) / col_sq[j];
            if new != old {
                resid.axpy(old - new, &xj, 1.0);
                b[j] = new;
                max_change = max_change.max((new - old).abs());
            }
        }
        trace.push(lasso_objective(x, y, weights, lambda, &b));
        if max_change < LASSO_TOL {
            return Ok(LassoFit {
                b,
                pinned,
                sweeps: sweep,
                objective_trace: trace,
            });
        }
        if sweep == LASSO_MAX_SWEEPS {
            return Err(Error::NoConvergence {
                sweeps: sweep,
                last_change: max_change,
            });
        }
    }
    unreachable!("loop returns on its last sweep")
}

/// Estimates the external bias at penalty `lambda` and reads off the
/// coordinates estimated to be unbiased.
pub fn select_unbiased(inputs: &FusionInputs, lambda: f64, alpha: f64) -> Result<SelectionResult> {
    let wh = whiten(inputs)?;
    let resid = -inputs.discrepancy();
    let weights = adaptive_weights(&resid, alpha);
    let fit = adaptive_lasso(&wh.x, &wh.y, &weights, lambda)?;
    Ok(SelectionResult::from_b_hat(
        fit.b.iter().copied().collect(),
        lambda,
        alpha,
        fit.pinned,
    ))
}

/// Efficient estimator using only the summary coordinates in `set`.
pub fn estimate_orc(inputs: &FusionInputs, set: &[usize]) -> Result<FusionResult> {
    restricted_eff(inputs, set, Method::Orc)
}

fn restricted_eff(inputs: &FusionInputs, set: &[usize], method: Method) -> Result<FusionResult> {
    if let Some(&j) = set.iter().find(|&&j| j >= inputs.q()) {
        return Err(Error::DimensionMismatch(format!(
            "coordinate {j} out of range for {} summary entries",
            inputs.q()
        )));
    }
    if set.is_empty() {
        let mut r = estimate_int(inputs);
        r.method = method;
        r.warnings
            .push("no summary coordinates retained: internal-only estimate".into());
        return Ok(r);
    }
    let mut r = estimate_eff(&inputs.restrict(set))?;
    r.method = method;
    Ok(r)
}

/// Debiased estimator at a fixed penalty.
pub fn estimate_dbs_fixed(inputs: &FusionInputs, lambda: f64, alpha: f64) -> Result<(FusionResult, SelectionResult)> {
    let selection = select_unbiased(inputs, lambda, alpha)?;
    let mut result = restricted_eff(inputs, &selection.selected, Method::Dbs)?;
    if !selection.pinned.is_empty() {
        result.warnings.push(format!(
            "InfiniteWeight: coordinates {:?} have zero discrepancy and were pinned",
            selection.pinned
        ));
    }
    Ok((result, selection))
}

/// Debiased estimator with the penalty fixed or chosen by cross-validation.
///
/// `problem` supplies the data and recipe needed to refit on folds; `inputs`
/// must be its full-data inputs.
pub fn estimate_dbs(
    inputs: &FusionInputs,
    problem: &FusionProblem,
    config: &DebiasConfig,
) -> Result<(FusionResult, SelectionResult)> {
    config.validate()?;
    let n = inputs.n();
    let (lambda, trace) = match config.lambda_fixed {
        Some(l) => (l, Vec::new()),
        None => {
            let (c, trace) = cv_tune(problem, config)?;
            (config.lambda_for(c, n), trace)
        }
    };
    let (result, mut selection) = estimate_dbs_fixed(inputs, lambda, config.alpha)?;
    selection.cv_trace = trace;
    Ok((result, selection))
}

/// `K` folds of nearly equal size from a seeded shuffle of `0..n`.
pub fn balanced_folds(n: usize, k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = n / k + usize::from(f < n % k);
        let mut fold = idx[start..start + size].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        start += size;
    }
    folds
}

/// Cross-validated choice of `C`; returns `(C_star, [(C, error), ...])`.
pub fn cv_tune(problem: &FusionProblem, config: &DebiasConfig) -> Result<(f64, Vec<(f64, f64)>)> {
    config.validate()?;
    let folds = balanced_folds(problem.data.n(), config.k, config.seed);
    let (c, trace, _) = cv_tune_with_folds(problem, config, &folds)?;
    Ok((c, trace))
}

/// Cross-validation over explicit folds. Also returns the per-fold errors
/// (`errors[fold][grid index]`).
pub fn cv_tune_with_folds(
    problem: &FusionProblem,
    config: &DebiasConfig,
    folds: &[Vec<usize>],
) -> Result<(f64, Vec<(f64, f64)>, Vec<Vec<f64>>)> {
    if config.grid_c.is_empty() {
        return Err(Error::InvalidConfig("empty grid".into()));
    }
    let n = problem.data.n();
    let mut per_fold = Vec::with_capacity(folds.len());
    for (f, test) in folds.iter().enumerate() {
        let mut in_test = vec![false; n];
        for &i in test {
            in_test[i] = true;
        }
        let train: Vec<usize> = (0..n).filter(|&i| !in_test[i]).collect();
        let too_small = |e: Error| Error::FoldTooSmall {
            fold: f,
            detail: e.to_string(),
        };
        let tau_test = problem
            .data
            .subset(test)
            .and_then(|d| problem.tau.fit(&d))
            .map_err(too_small)?
            .estimate;
        let train_inputs = problem.inputs_on(&train).map_err(too_small)?;
        let n_train = train_inputs.n();
        let errors = config
            .grid_c
            .iter()
            .map(|&c| {
                let lambda = config.lambda_for(c, n_train);
                let (r, _) = estimate_dbs_fixed(&train_inputs, lambda, config.alpha)?;
                Ok((&tau_test - &r.estimate).norm_squared())
            })
            .collect::<Result<Vec<f64>>>()?;
        per_fold.push(errors);
    }
    let k = folds.len() as f64;
    let trace: Vec<(f64, f64)> = config
        .grid_c
        .iter()
        .enumerate()
        .map(|(g, &c)| (c, per_fold.iter().map(|e| e[g]).sum::<f64>() / k))
        .collect();
    // Smallest C among the minimisers.
    let mut best = trace[0];
    for &(c, err) in &trace[1..] {
        if err < best.1 || (err == best.1 && c < best.0) {
            best = (c, err);
        }
    }
    Ok((best.0, trace, per_fold))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixed_problem() -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
        let x = DMatrix::from_row_slice(2, 2, &[1.2, 0.3, 0.3, 0.8]);
        let y = DVector::from_vec(vec![0.9, -0.05]);
        let w = DVector::from_vec(vec![1.0, 25.0]);
        (x, y, w)
    }

    #[test]
    fn identity_whitening() {
        let resid = DVector::from_vec(vec![0.2, -0.1]);
        let wh = whiten_parts(&DMatrix::identity(2, 2), &resid).unwrap();
        assert_eq!(wh.x, DMatrix::identity(2, 2));
        assert_eq!(wh.y, resid);
    }

    #[test]
    fn whitening_multiplies_back_to_inverse() {
        let h = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let wh = whiten_parts(&h, &DVector::zeros(3)).unwrap();
        let inv = h.clone().try_inverse().unwrap();
        assert!((&wh.x * &wh.x - inv).amax() < 1e-10);
        assert!(matches!(
            whiten_parts(&(-h), &DVector::zeros(3)),
            Err(Error::NotPositiveDefinite(_))
        ));
    }

    #[test]
    fn lambda_zero_is_least_squares() {
        let (x, _, w) = fixed_problem();
        let target = DVector::from_vec(vec![0.4, -0.7]);
        let y = &x * &target;
        let fit = adaptive_lasso(&x, &y, &w, 0.0).unwrap();
        assert!((fit.b - target).amax() < 1e-9);
    }

    #[test]
    fn huge_lambda_zeroes_everything() {
        let (x, y, w) = fixed_problem();
        let fit = adaptive_lasso(&x, &y, &w, 1e6).unwrap();
        assert!(fit.b.iter().all(|&b| b == 0.0));
        let fit = adaptive_lasso(&x, &y, &w, f64::INFINITY).unwrap();
        assert!(fit.b.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn objective_never_increases() {
        let (x, y, w) = fixed_problem();
        let fit = adaptive_lasso(&x, &y, &w, 0.05).unwrap();
        for pair in fit.objective_trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-15);
        }
    }

    #[test]
    fn subgradient_conditions() {
        let (x, y, w) = fixed_problem();
        let lambda = 0.05;
        let fit = adaptive_lasso(&x, &y, &w, lambda).unwrap();
        let grad = 2.0 * x.transpose() * (&y - &x * &fit.b);
        for j in 0..2 {
            if fit.b[j] == 0.0 {
                assert!(grad[j].abs() <= lambda * w[j] + 1e-8);
            } else {
                assert!((grad[j] - lambda * w[j] * fit.b[j].signum()).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn zero_discrepancy_is_pinned() {
        let d = DVector::from_vec(vec![0.0, 0.5]);
        let w = adaptive_weights(&d, 2.0);
        assert!(w[0].is_infinite());
        assert_eq!(w[1], 4.0);
        let x = DMatrix::identity(2, 2);
        let y = DVector::from_vec(vec![1.0, 0.5]);
        let fit = adaptive_lasso(&x, &y, &w, 0.0).unwrap();
        assert_eq!(fit.b[0], 0.0);
        assert_eq!(fit.pinned, vec![0]);
    }

    #[test]
    fn folds_are_balanced_and_partition() {
        let folds = balanced_folds(10, 3, 7);
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![4, 3, 3]);
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(folds, balanced_folds(10, 3, 7));
    }

    #[test]
    fn config_validation() {
        assert!(DebiasConfig::default().validate().is_ok());
        let bad_w = DebiasConfig {
            w: 1.5,
            ..Default::default()
        };
        assert!(matches!(bad_w.validate(), Err(Error::InvalidConfig(_))));
        let one_fold = DebiasConfig {
            k: 1,
            ..Default::default()
        };
        assert!(one_fold.validate().is_err());
        let grid = default_grid();
        assert_eq!(grid.len(), 10);
        assert!((grid[0] - 0.01).abs() < 1e-15 && (grid[9] - 100.0).abs() < 1e-12);
        let parsed = DebiasConfig::from_json(r#"{"alpha": 1, "w": 0.75, "K": 5, "grid_C": [1.0]}"#).unwrap();
        assert_eq!(parsed.k, 5);
        assert_eq!(parsed.grid_c, vec![1.0]);
    }
}
