//! The estimator family: internal-only, crude plug-in, known-β, the
//! data-fused efficient estimator and its efficiency bound, multi-source
//! fusion, and Wald inference on any of them.
//!
//! All variance quantities are on the root-n scale: `avar` is the asymptotic
//! variance of `sqrt(n) (estimate - tau)`, and an external covariance enters as
//! `sigma1 / rho` with `rho = m / n`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::functionals::{evaluate_binding, FunctionalDescriptor};
use crate::linalg;
use crate::model::{FunctionalFit, FusionResult, InternalDataset, Method, SummaryStatistic};
use crate::normal;

/// Internal fits and external summaries, aligned and ready to combine.
#[derive(Debug, Clone)]
pub struct FusionInputs {
    /// Fit of the functional of interest (`tau_int`, `phi`).
    pub tau: FunctionalFit,
    /// Internal fit of the externally reported functionals (`beta_int`, `eta`).
    pub beta: FunctionalFit,
    /// Concatenated external estimates.
    pub beta_tilde: DVector<f64>,
    /// `diag(sigma_s / rho_s)`, or the scaled working matrix.
    pub ext_cov: DMatrix<f64>,
    pub rho: Vec<f64>,
    /// External source of each summary coordinate.
    pub source: Vec<usize>,
    pub working_covariance: bool,
}

impl FusionInputs {
    /// Aligns the fits with one or more summaries.
    ///
    /// `omega_override`, when given, replaces the stacked external covariance
    /// by a q x q working matrix; it is scaled by `1/sqrt(rho_s rho_t)` in the
    /// same way the reported covariances are.
    pub fn new(
        tau: FunctionalFit,
        beta: FunctionalFit,
        summaries: &[SummaryStatistic],
        omega_override: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        let n = tau.n();
        if beta.n() != n {
            return Err(Error::DimensionMismatch(format!(
                "tau influence has {n} rows, beta influence {}",
                beta.n()
            )));
        }
        let q: usize = summaries.iter().map(SummaryStatistic::q).sum();
        if q != beta.dim() {
            return Err(Error::DimensionMismatch(format!(
                "summaries report {q} entries but the internal beta fit has {}",
                beta.dim()
            )));
        }
        let nf = n as f64;
        let rho: Vec<f64> = summaries.iter().map(|s| s.m() as f64 / nf).collect();
        let mut beta_tilde = DVector::zeros(q);
        let mut source = Vec::with_capacity(q);
        let mut offset = 0;
        for (s, summary) in summaries.iter().enumerate() {
            beta_tilde.rows_mut(offset, summary.q()).copy_from(summary.beta());
            source.extend(std::iter::repeat_n(s, summary.q()));
            offset += summary.q();
        }
        let (ext_cov, working_covariance) = match omega_override {
            Some(omega) => {
                if omega.nrows() != q || omega.ncols() != q {
                    return Err(Error::DimensionMismatch(format!(
                        "working matrix is {}x{}, expected {q}x{q}",
                        omega.nrows(),
                        omega.ncols()
                    )));
                }
                let scaled = DMatrix::from_fn(q, q, |i, j| {
                    omega[(i, j)] / (rho[source[i]] * rho[source[j]]).sqrt()
                });
                (scaled, true)
            }
            None => {
                let blocks: Vec<DMatrix<f64>> = summaries
                    .iter()
                    .zip(&rho)
                    .map(|(s, r)| s.sigma1() / *r)
                    .collect();
                (linalg::block_diagonal(&blocks), false)
            }
        };
        Ok(Self {
            tau,
            beta,
            beta_tilde,
            ext_cov,
            rho,
            source,
            working_covariance,
        })
    }

    pub fn n(&self) -> usize {
        self.tau.n()
    }

    pub fn p(&self) -> usize {
        self.tau.dim()
    }

    pub fn q(&self) -> usize {
        self.beta.dim()
    }

    /// `beta_int - beta_tilde`.
    pub fn discrepancy(&self) -> DVector<f64> {
        &self.beta.estimate - &self.beta_tilde
    }

    /// `ext_cov + Ê(eta eta')`.
    pub fn calibration_matrix(&self) -> DMatrix<f64> {
        &self.ext_cov + self.beta.gram()
    }

    /// Keeps only the summary coordinates in `idx`.
    pub fn restrict(&self, idx: &[usize]) -> Self {
        Self {
            tau: self.tau.clone(),
            beta: self.beta.select(idx),
            beta_tilde: linalg::select_entries(&self.beta_tilde, idx),
            ext_cov: linalg::select_square(&self.ext_cov, idx),
            rho: self.rho.clone(),
            source: idx.iter().map(|&i| self.source[i]).collect(),
            working_covariance: self.working_covariance,
        }
    }

    fn rho_used(&self) -> Vec<f64> {
        let mut used: Vec<usize> = self.source.clone();
        used.dedup();
        used.into_iter().map(|s| self.rho[s]).collect()
    }
}

/// Internal data plus the recipe for re-deriving [`FusionInputs`] on any
/// subset of rows (needed by cross-validation).
#[derive(Debug, Clone)]
pub struct FusionProblem {
    pub data: InternalDataset,
    pub tau: FunctionalDescriptor,
    pub summaries: Vec<SummaryStatistic>,
    pub omega_override: Option<DMatrix<f64>>,
}

impl FusionProblem {
    pub fn new(data: InternalDataset, tau: FunctionalDescriptor, summaries: Vec<SummaryStatistic>) -> Self {
        Self {
            data,
            tau,
            summaries,
            omega_override: None,
        }
    }

    pub fn binding(&self) -> Vec<FunctionalDescriptor> {
        self.summaries
            .iter()
            .flat_map(|s| s.binding().iter().cloned())
            .collect()
    }

    pub fn inputs(&self) -> Result<FusionInputs> {
        self.inputs_for(&self.data)
    }

    pub fn inputs_on(&self, rows: &[usize]) -> Result<FusionInputs> {
        self.inputs_for(&self.data.subset(rows)?)
    }

    fn inputs_for(&self, data: &InternalDataset) -> Result<FusionInputs> {
        let tau_fit = self.tau.fit(data)?;
        let beta_fit = evaluate_binding(data, &self.binding())?;
        FusionInputs::new(tau_fit, beta_fit, &self.summaries, self.omega_override.clone())
    }
}

/// `(Ê(phi eta'), Ê(eta eta'))`.
pub fn empirical_moments(tau: &FunctionalFit, beta: &FunctionalFit) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if tau.n() != beta.n() {
        return Err(Error::DimensionMismatch(format!(
            "influence row counts differ: {} vs {}",
            tau.n(),
            beta.n()
        )));
    }
    Ok((
        linalg::cross_moment(&tau.influence, &beta.influence),
        beta.gram(),
    ))
}

/// Internal-only efficient estimator.
pub fn estimate_int(inputs: &FusionInputs) -> FusionResult {
    let (p, q) = (inputs.p(), inputs.q());
    let cross = linalg::cross_moment(&inputs.tau.influence, &inputs.beta.influence);
    let mut result = FusionResult::assemble(
        Method::Int,
        inputs.tau.estimate.clone(),
        inputs.tau.gram(),
        DMatrix::zeros(p, q),
        cross,
        inputs.beta.gram(),
        inputs.rho_used(),
        inputs.n(),
        inputs.tau.labels.clone(),
    );
    result.warnings.extend(inputs.tau.warnings.iter().cloned());
    result
}

/// Efficiency bound for given moments and stacked external covariance
/// (`Σ_ext`, which is `Σ₁/ρ` for a single source).
pub fn bound_from_ext(
    phi_gram: &DMatrix<f64>,
    cross: &DMatrix<f64>,
    gram: &DMatrix<f64>,
    ext_cov: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let solved = linalg::solve_spd(&(ext_cov + gram), &cross.transpose()).map_err(Error::SingularCalibration)?;
    Ok(linalg::symmetrize(&(phi_gram - cross * solved.solution)))
}

/// `B = Ê(φφ') − Ê(φη'){Σ₁/ρ + Ê(ηη')}⁻¹Ê(φη')'`.
pub fn efficiency_bound(
    phi_gram: &DMatrix<f64>,
    cross: &DMatrix<f64>,
    gram: &DMatrix<f64>,
    sigma1: &DMatrix<f64>,
    rho: f64,
) -> Result<DMatrix<f64>> {
    if !(rho > 0.0) {
        return Err(Error::InvalidConfig(format!("rho must be positive, got {rho}")));
    }
    bound_from_ext(phi_gram, cross, gram, &(sigma1 / rho))
}

/// Data-fused efficient estimator.
///
/// `tau_int - Ê(φη'){Σ_ext + Ê(ηη')}⁻¹(beta_int - beta_tilde)`, with the
/// efficiency bound as its asymptotic variance. With no summary coordinates
/// this is the internal estimator.
pub fn estimate_eff(inputs: &FusionInputs) -> Result<FusionResult> {
    if inputs.q() == 0 {
        let mut r = estimate_int(inputs);
        r.method = Method::Eff;
        r.warnings.push("no summary coordinates: internal-only estimate".into());
        return Ok(r);
    }
    let (cross, gram) = empirical_moments(&inputs.tau, &inputs.beta)?;
    let p = inputs.p();
    let q = inputs.q();
    let resid = inputs.discrepancy();
    // Solve H [X | y] = [cross' | resid] in one factorisation.
    let mut rhs = DMatrix::zeros(q, p + 1);
    rhs.columns_mut(0, p).copy_from(&cross.transpose());
    rhs.column_mut(p).copy_from(&resid);
    let solved = linalg::solve_spd(&(&inputs.ext_cov + &gram), &rhs).map_err(Error::SingularCalibration)?;
    let h_inv_cross_t = solved.solution.columns(0, p).into_owned();
    let h_inv_resid = solved.solution.column(p).into_owned();
    let gain = h_inv_cross_t.transpose();
    let estimate = &inputs.tau.estimate - &cross * h_inv_resid;
    let avar = inputs.tau.gram() - &cross * &h_inv_cross_t;
    let mut result = FusionResult::assemble(
        Method::Eff,
        estimate,
        avar,
        gain,
        cross,
        gram,
        inputs.rho_used(),
        inputs.n(),
        inputs.tau.labels.clone(),
    );
    result.working_covariance = inputs.working_covariance;
    result.warnings.extend(inputs.tau.warnings.iter().cloned());
    result.warnings.extend(inputs.beta.warnings.iter().cloned());
    result.warnings.extend(solved.warning);
    Ok(result)
}

/// Efficient fusion of several independent external sources.
pub fn estimate_multi_source(
    tau: FunctionalFit,
    beta: FunctionalFit,
    summaries: &[SummaryStatistic],
) -> Result<FusionResult> {
    estimate_eff(&FusionInputs::new(tau, beta, summaries, None)?)
}

fn known_beta_gain(inputs: &FusionInputs) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, Option<String>)> {
    let (cross, gram) = empirical_moments(&inputs.tau, &inputs.beta)?;
    let solved = linalg::solve_spd(&gram, &cross.transpose()).map_err(Error::SingularGram)?;
    Ok((solved.solution.transpose(), cross, gram, solved.warning))
}

/// Plug-in estimator that treats `beta_tilde` as exact.
///
/// Its variance `Ê(φφ') + A{Σ_ext − Ê(ηη')}A'` can exceed the internal one.
pub fn estimate_crude(inputs: &FusionInputs) -> Result<FusionResult> {
    let (a, cross, gram, warning) = known_beta_gain(inputs)?;
    let estimate = &inputs.tau.estimate - &a * inputs.discrepancy();
    let avar = inputs.tau.gram() + &a * (&inputs.ext_cov - &gram) * a.transpose();
    let mut result = FusionResult::assemble(
        Method::Crd,
        estimate,
        avar,
        a,
        cross,
        gram,
        inputs.rho_used(),
        inputs.n(),
        inputs.tau.labels.clone(),
    );
    result.warnings.extend(warning);
    Ok(result)
}

/// Efficient estimator when the true `beta` is known.
pub fn estimate_knw(inputs: &FusionInputs, beta_true: &DVector<f64>) -> Result<FusionResult> {
    if beta_true.len() != inputs.q() {
        return Err(Error::DimensionMismatch(format!(
            "beta_true has length {}, expected {}",
            beta_true.len(),
            inputs.q()
        )));
    }
    let (a, cross, gram, warning) = known_beta_gain(inputs)?;
    let estimate = &inputs.tau.estimate - &a * (&inputs.beta.estimate - beta_true);
    let avar = inputs.tau.gram() - &a * &gram * a.transpose();
    let mut result = FusionResult::assemble(
        Method::Knw,
        estimate,
        avar,
        a,
        cross,
        gram,
        inputs.rho_used(),
        inputs.n(),
        inputs.tau.labels.clone(),
    );
    result.warnings.extend(warning);
    Ok(result)
}

/// Inverse-variance weighted combination of two estimates of one quantity.
pub fn ivw_reduce(tau_int: f64, var_int: f64, beta_tilde: f64, var_ext: f64) -> Result<f64> {
    for v in [var_int, var_ext] {
        if !(v > 0.0) {
            return Err(Error::NonPositiveVariance(v));
        }
    }
    let (w_int, w_ext) = (1.0 / var_int, 1.0 / var_ext);
    if w_ext.is_infinite() {
        return Ok(beta_tilde);
    }
    Ok((tau_int * w_int + beta_tilde * w_ext) / (w_int + w_ext))
}

/// Minimiser of the confidence-density objective
///
/// `(u − θ)' Σ̂⁻¹ (u − θ) + (β̃ − β)' Σ_ext⁻¹ (β̃ − β)`, `u = (τ̂_int, β̂_int)`,
///
/// solved in closed form as a stacked weighted least-squares problem. Returns
/// `(tau, beta)`. When `Σ̂` is singular because a scalar `tau` and `beta`
/// share their influence function, falls back to [`ivw_reduce`].
pub fn cd_minimize_check(inputs: &FusionInputs) -> Result<(DVector<f64>, DVector<f64>)> {
    let (p, q) = (inputs.p(), inputs.q());
    let n = inputs.n() as f64;
    let mut joint = DMatrix::zeros(inputs.n(), p + q);
    joint.columns_mut(0, p).copy_from(&inputs.tau.influence);
    joint.columns_mut(p, q).copy_from(&inputs.beta.influence);
    let sigma = linalg::cross_moment(&joint, &joint);
    let eig = linalg::sym_eigenvalues(&sigma);
    if !(eig.min() > 1e-12 * eig.max().max(f64::MIN_POSITIVE)) {
        let same = p == 1
            && q == 1
            && (&inputs.tau.influence - &inputs.beta.influence).amax()
                <= 1e-12 * inputs.tau.influence.amax().max(1.0);
        if same {
            let var_int = sigma[(0, 0)] / n;
            let var_ext = inputs.ext_cov[(0, 0)] / n;
            let t = ivw_reduce(inputs.tau.estimate[0], var_int, inputs.beta_tilde[0], var_ext)?;
            return Ok((DVector::from_element(1, t), DVector::from_element(1, t)));
        }
        return Err(Error::SingularJointCovariance(format!(
            "smallest eigenvalue {:e}",
            eig.min()
        )));
    }
    let w_int = linalg::inverse_spd(&sigma).map_err(Error::SingularJointCovariance)?.solution;
    let w_ext = linalg::inverse_spd(&inputs.ext_cov)
        .map_err(Error::SingularJointCovariance)?
        .solution;
    let mut u = DVector::zeros(p + q);
    u.rows_mut(0, p).copy_from(&inputs.tau.estimate);
    u.rows_mut(p, q).copy_from(&inputs.beta.estimate);
    let mut lhs = w_int.clone();
    let mut block = lhs.view_mut((p, p), (q, q));
    block += &w_ext;
    let mut rhs = &w_int * u;
    let mut tail = rhs.rows_mut(p, q);
    tail += &w_ext * &inputs.beta_tilde;
    let theta = linalg::solve_spd(&lhs, &DMatrix::from_column_slice(p + q, 1, rhs.as_slice()))
        .map_err(Error::SingularJointCovariance)?
        .solution;
    let theta = theta.column(0);
    Ok((theta.rows(0, p).into_owned(), theta.rows(p, q).into_owned()))
}

/// Alternative hypothesis direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Side {
    /// `H1: tau > null`.
    #[default]
    Upper,
    /// `H1: tau < null`.
    Lower,
    TwoSided,
}

impl std::str::FromStr for Side {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "upper" | "greater" => Ok(Side::Upper),
            "lower" | "less" => Ok(Side::Lower),
            "two-sided" | "two" | "both" => Ok(Side::TwoSided),
            other => Err(Error::InvalidConfig(format!("unknown side `{other}`"))),
        }
    }
}

/// z-statistics, p-values and two-sided confidence intervals.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Inference {
    pub z: Vec<f64>,
    /// p-value for the requested side (upper tail when two-sided was asked).
    pub p_one_sided: Vec<f64>,
    pub p_two_sided: Vec<f64>,
    pub ci: Vec<(f64, f64)>,
    pub level: f64,
    pub side: Side,
}

pub const DEFAULT_LEVEL: f64 = 0.95;

pub fn wald_inference(result: &FusionResult, null: &DVector<f64>, side: Side, level: f64) -> Result<Inference> {
    let p = result.estimate.len();
    if null.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "null has length {}, estimate {p}",
            null.len()
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidConfig(format!("level must be in (0,1), got {level}")));
    }
    if let Some(j) = result.se.iter().position(|&s| !(s > 0.0)) {
        return Err(Error::ZeroStandardError(j));
    }
    let crit = normal::quantile(0.5 + level / 2.0);
    let z: Vec<f64> = (0..p)
        .map(|j| (result.estimate[j] - null[j]) / result.se[j])
        .collect();
    let p_one_sided = z
        .iter()
        .map(|&zj| match side {
            Side::Lower => normal::cdf(zj),
            _ => normal::sf(zj),
        })
        .collect();
    let p_two_sided = z.iter().map(|&zj| 2.0 * normal::sf(zj.abs())).collect();
    let ci = (0..p)
        .map(|j| {
            let half = crit * result.se[j];
            (result.estimate[j] - half, result.estimate[j] + half)
        })
        .collect();
    Ok(Inference {
        z,
        p_one_sided,
        p_two_sided,
        ci,
        level,
        side,
    })
}

/// Machine-readable report of a fused estimate.
pub fn result_json(result: &FusionResult, inference: &Inference) -> serde_json::Value {
    json!({
        "method": result.method,
        "labels": result.labels,
        "estimate": result.estimate.as_slice(),
        "se": result.se.as_slice(),
        "ci": inference.ci.iter().map(|(a, b)| [*a, *b]).collect::<Vec<_>>(),
        "z": inference.z,
        "p_one_sided": inference.p_one_sided,
        "p_two_sided": inference.p_two_sided,
        "level": inference.level,
        "side": inference.side,
        "avar": linalg::matrix_to_rows(&result.avar),
        "gain": linalg::matrix_to_rows(&result.gain),
        "rho": result.rho,
        "n": result.n,
        "working_covariance": result.working_covariance,
        "warnings": result.warnings,
    })
}


#[cfg(test)]
mod properties {
    use super::*;
    use crate::functionals::FunctionalDescriptor as FD;
    use crate::model::validate_summary;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn instance(seed: u64, p: usize, q: usize) -> (FunctionalFit, FunctionalFit, SummaryStatistic) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = || -> f64 { rng.sample(StandardNormal) };
        let n = 50;
        let k = p + q;
        let mix = DMatrix::from_fn(k, k, |_, _| g());
        let mut z = DMatrix::from_fn(n, k, |_, _| g()) * mix;
        for j in 0..k {
            let m = z.column(j).mean();
            z.column_mut(j).add_scalar_mut(-m);
        }
        let tau = FunctionalFit::new(
            DVector::from_fn(p, |_, _| g()),
            z.columns(0, p).into_owned(),
            (0..p).map(|j| format!("t{j}")).collect(),
        )
        .unwrap();
        let beta = FunctionalFit::new(
            DVector::from_fn(q, |_, _| g()),
            z.columns(p, q).into_owned(),
            (0..q).map(|j| format!("b{j}")).collect(),
        )
        .unwrap();
        let a = DMatrix::from_fn(q, q, |_, _| g());
        let summary = validate_summary(
            DVector::from_fn(q, |_, _| g()),
            &a * a.transpose() + DMatrix::identity(q, q),
            80,
            (0..q).map(|j| FD::mean(format!("b{j}"))).collect(),
            "",
        )
        .unwrap();
        (tau, beta, summary)
    }

    fn permuted(s: &SummaryStatistic, perm: &[usize]) -> SummaryStatistic {
        validate_summary(
            linalg::select_entries(s.beta(), perm),
            linalg::select_square(s.sigma1(), perm),
            s.m(),
            perm.iter().map(|&j| s.binding()[j].clone()).collect(),
            s.source_id(),
        )
        .unwrap()
    }

    proptest! {
        #[test]
        fn eff_never_worse_than_int(seed in any::<u64>(), p in 1usize..4, q in 1usize..4) {
            let (tau, beta, s) = instance(seed, p, q);
            let inputs = FusionInputs::new(tau, beta, &[s], None).unwrap();
            let eff = estimate_eff(&inputs).unwrap();
            let int = estimate_int(&inputs);
            prop_assert!(linalg::min_eigenvalue(&(int.avar - eff.avar)) >= -1e-10);
        }

        #[test]
        fn eff_invariant_to_summary_order(seed in any::<u64>(), q in 2usize..4) {
            let (tau, beta, s) = instance(seed, 2, q);
            let perm: Vec<usize> = (0..q).rev().collect();
            let base = estimate_eff(&FusionInputs::new(tau.clone(), beta.clone(), &[s.clone()], None).unwrap()).unwrap();
            let inputs = FusionInputs::new(tau, beta.select(&perm), &[permuted(&s, &perm)], None).unwrap();
            let other = estimate_eff(&inputs).unwrap();
            prop_assert!((base.estimate - other.estimate).amax() < 1e-10);
            prop_assert!((base.avar - other.avar).amax() < 1e-10);
        }

        #[test]
        fn multi_source_matches_block_diagonal_single_source(seed in any::<u64>()) {
            let (tau, beta, s) = instance(seed, 1, 3);
            let blocks = [vec![0usize], vec![1, 2]];
            let parts: Vec<SummaryStatistic> = blocks.iter().map(|idx| permuted(&s, idx)).collect();
            let multi = estimate_multi_source(tau.clone(), beta.clone(), &parts).unwrap();
            // The same thing as one summary with a block-diagonal covariance.
            let mut sigma = linalg::select_square(s.sigma1(), &[0, 1, 2]);
            sigma[(0, 1)] = 0.0;
            sigma[(1, 0)] = 0.0;
            sigma[(0, 2)] = 0.0;
            sigma[(2, 0)] = 0.0;
            let single = validate_summary(s.beta().clone(), sigma, s.m(), s.binding().to_vec(), "").unwrap();
            let one = estimate_eff(&FusionInputs::new(tau, beta, &[single], None).unwrap()).unwrap();
            prop_assert!((multi.estimate - one.estimate).amax() < 1e-10);
        }

        #[test]
        fn zero_discrepancy_leaves_int(seed in any::<u64>(), p in 1usize..4, q in 1usize..4) {
            let (tau, beta, s) = instance(seed, p, q);
            let mut inputs = FusionInputs::new(tau, beta, &[s], None).unwrap();
            inputs.beta_tilde = inputs.beta.estimate.clone();
            let eff = estimate_eff(&inputs).unwrap();
            prop_assert!((eff.estimate - &inputs.tau.estimate).amax() < 1e-12);
        }

        #[test]
        fn confidence_density_agrees_with_eff(seed in any::<u64>(), p in 1usize..4, q in 1usize..4) {
            let (tau, beta, s) = instance(seed, p, q);
            let inputs = FusionInputs::new(tau, beta, &[s], None).unwrap();
            let (t, _) = cd_minimize_check(&inputs).unwrap();
            prop_assert!((estimate_eff(&inputs).unwrap().estimate - t).amax() < 1e-8);
        }
    }
}
