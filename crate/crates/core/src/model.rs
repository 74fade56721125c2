//! Core records shared by every estimator: the internal dataset, external
//! summary statistics, per-functional fits, and estimator outputs.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use indexmap::IndexMap;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functionals::FunctionalDescriptor;
use crate::linalg;

/// Symmetry tolerance (absolute) for reported covariance matrices.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Smallest eigenvalue accepted for a covariance matrix.
pub const PSD_TOL: f64 = 1e-10;

/// A named-column numeric table as read from disk, before validation.
pub type RawTable = IndexMap<String, Vec<f64>>;

/// Which columns play which part in the analysis.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Roles {
    pub outcome: Option<String>,
    pub treatment: Option<String>,
    pub covariates: Vec<String>,
}

impl Roles {
    pub fn new(outcome: impl Into<String>) -> Self {
        Self {
            outcome: Some(outcome.into()),
            ..Self::default()
        }
    }

    pub fn with_treatment(mut self, treatment: impl Into<String>) -> Self {
        self.treatment = Some(treatment.into());
        self
    }

    pub fn with_covariates<S: Into<String>>(mut self, covariates: impl IntoIterator<Item = S>) -> Self {
        self.covariates = covariates.into_iter().map(Into::into).collect();
        self
    }

    /// Role bindings implied by the functional of interest.
    pub fn from_descriptor(desc: &FunctionalDescriptor) -> Self {
        match desc {
            FunctionalDescriptor::Mean { column } => Roles::new(column.clone()),
            FunctionalDescriptor::JointOls {
                outcome, regressors, ..
            } => Roles::new(outcome.clone()).with_covariates(regressors.iter().cloned()),
            FunctionalDescriptor::MarginalOls { outcome, regressor } => {
                Roles::new(outcome.clone()).with_covariates([regressor.clone()])
            }
            FunctionalDescriptor::AipwAte {
                outcome,
                treatment,
                covariates,
                ..
            } => Roles::new(outcome.clone())
                .with_treatment(treatment.clone())
                .with_covariates(covariates.iter().cloned()),
        }
    }
}

/// Individual-level internal data: n rows of named numeric columns.
#[derive(Debug, Clone, PartialEq)]
pub struct InternalDataset {
    columns: RawTable,
    roles: Roles,
    n: usize,
}

/// Checks a raw table against the dataset invariants.
pub fn validate_dataset(raw: RawTable, roles: Roles) -> Result<InternalDataset> {
    let Some((_, first)) = raw.first() else {
        return Err(Error::DimensionMismatch("table has no columns".into()));
    };
    let n = first.len();
    for (name, col) in &raw {
        if col.len() != n {
            return Err(Error::RaggedColumns {
                column: name.clone(),
                len: col.len(),
                expected: n,
            });
        }
    }
    if n < 2 {
        return Err(Error::DimensionMismatch(format!(
            "dataset needs at least 2 rows, got {n}"
        )));
    }
    for (name, col) in &raw {
        if let Some(row) = col.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue {
                column: name.clone(),
                row,
            });
        }
    }
    let bound = roles
        .outcome
        .iter()
        .chain(roles.treatment.iter())
        .chain(roles.covariates.iter());
    for name in bound {
        if !raw.contains_key(name) {
            return Err(Error::MissingColumn(name.clone()));
        }
    }
    if let Some(t) = &roles.treatment {
        check_binary(t, &raw[t])?;
    }
    Ok(InternalDataset {
        columns: raw,
        roles,
        n,
    })
}

pub(crate) fn check_binary(name: &str, col: &[f64]) -> Result<()> {
    match col.iter().position(|&v| v != 0.0 && v != 1.0) {
        Some(row) => Err(Error::NonBinaryTreatment {
            column: name.to_string(),
            row,
            value: col[row],
        }),
        None => Ok(()),
    }
}

impl InternalDataset {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn roles(&self) -> &Roles {
        &self.roles
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.columns.keys().map(String::as_str)
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.columns
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    pub fn columns(&self) -> &RawTable {
        &self.columns
    }

    /// Replaces the role bindings, re-checking the treatment column.
    pub fn with_roles(self, roles: Roles) -> Result<Self> {
        validate_dataset(self.columns, roles)
    }

    /// Dataset restricted to the given rows (in the given order).
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        if let Some(&bad) = rows.iter().find(|&&r| r >= self.n) {
            return Err(Error::DimensionMismatch(format!(
                "row index {bad} out of range for {} rows",
                self.n
            )));
        }
        let columns = self
            .columns
            .iter()
            .map(|(k, v)| (k.clone(), rows.iter().map(|&r| v[r]).collect()))
            .collect();
        validate_dataset(columns, self.roles.clone())
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_table_csv(&self.columns, writer)
    }

    pub fn from_csv<R: Read>(reader: R, roles: Roles) -> Result<Self> {
        validate_dataset(read_table_csv(reader)?, roles)
    }
}

/// Reads a header-row CSV of numeric columns.
pub fn read_table_csv<R: Read>(reader: R) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Parse(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if headers.is_empty() {
        return Err(Error::Parse("CSV header is empty".into()));
    }
    let mut table: RawTable = headers.iter().map(|h| (h.clone(), Vec::new())).collect();
    if table.len() != headers.len() {
        return Err(Error::Parse("duplicate column names in CSV header".into()));
    }
    for (line, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::Parse(e.to_string()))?;
        for (j, field) in record.iter().enumerate() {
            let value: f64 = field.parse().map_err(|_| {
                Error::Parse(format!(
                    "row {}: column `{}` has non-numeric value `{field}`",
                    line + 1,
                    headers[j]
                ))
            })?;
            table[j].push(value);
        }
    }
    Ok(table)
}

pub fn write_table_csv<W: Write>(table: &RawTable, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let map_err = |e: csv::Error| Error::Parse(e.to_string());
    wtr.write_record(table.keys()).map_err(map_err)?;
    let n = table.first().map_or(0, |(_, c)| c.len());
    for i in 0..n {
        wtr.write_record(table.values().map(|c| c[i].to_string()))
            .map_err(map_err)?;
    }
    wtr.flush()?;
    Ok(())
}

/// An external study's reported estimate and its uncertainty.
///
/// `sigma1` is the covariance of the root-m scaled estimator, so the
/// covariance of `beta` itself is `sigma1 / m`.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryStatistic {
    beta: DVector<f64>,
    sigma1: DMatrix<f64>,
    m: usize,
    binding: Vec<FunctionalDescriptor>,
    source_id: String,
}

pub fn validate_summary(
    beta: DVector<f64>,
    sigma1: DMatrix<f64>,
    m: usize,
    binding: Vec<FunctionalDescriptor>,
    source_id: impl Into<String>,
) -> Result<SummaryStatistic> {
    let q = beta.len();
    if q == 0 {
        return Err(Error::DimensionMismatch("summary has an empty beta".into()));
    }
    if sigma1.nrows() != q || sigma1.ncols() != q {
        return Err(Error::DimensionMismatch(format!(
            "sigma1 is {}x{} but beta has length {q}",
            sigma1.nrows(),
            sigma1.ncols()
        )));
    }
    let bound: usize = binding.iter().map(FunctionalDescriptor::dim).sum();
    if bound != q {
        return Err(Error::DimensionMismatch(format!(
            "binding covers {bound} entries but beta has length {q}"
        )));
    }
    if m == 0 {
        return Err(Error::DimensionMismatch("external sample size m must be positive".into()));
    }
    if let Some(i) = beta.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue {
            column: "beta".into(),
            row: i,
        });
    }
    if let Some(i) = sigma1.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue {
            column: "sigma1".into(),
            row: i % q,
        });
    }
    let asym = linalg::max_asymmetry(&sigma1);
    if asym > SYMMETRY_TOL {
        return Err(Error::AsymmetricCovariance { max_asymmetry: asym });
    }
    let lo = linalg::min_eigenvalue(&sigma1);
    if lo < -PSD_TOL {
        return Err(Error::NotPsd { min_eigenvalue: lo });
    }
    Ok(SummaryStatistic {
        beta,
        sigma1,
        m,
        binding,
        source_id: source_id.into(),
    })
}

#[derive(Serialize, Deserialize)]
struct SummaryJson {
    beta: Vec<f64>,
    sigma1: Vec<Vec<f64>>,
    m: usize,
    binding: Vec<FunctionalDescriptor>,
    #[serde(default)]
    source_id: String,
}

impl SummaryStatistic {
    pub fn beta(&self) -> &DVector<f64> {
        &self.beta
    }
    pub fn sigma1(&self) -> &DMatrix<f64> {
        &self.sigma1
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn q(&self) -> usize {
        self.beta.len()
    }
    pub fn binding(&self) -> &[FunctionalDescriptor] {
        &self.binding
    }
    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    /// Same statistic with a different binding of equal total dimension.
    pub fn rebind(self, binding: Vec<FunctionalDescriptor>) -> Result<Self> {
        validate_summary(self.beta, self.sigma1, self.m, binding, self.source_id)
    }

    pub fn to_json(&self) -> String {
        let doc = SummaryJson {
            beta: self.beta.iter().copied().collect(),
            sigma1: linalg::matrix_to_rows(&self.sigma1),
            m: self.m,
            binding: self.binding.clone(),
            source_id: self.source_id.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("summary serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: SummaryJson =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let sigma1 = linalg::rows_to_matrix(&doc.sigma1).map_err(Error::DimensionMismatch)?;
        validate_summary(
            DVector::from_vec(doc.beta),
            sigma1,
            doc.m,
            doc.binding,
            doc.source_id,
        )
    }
}

/// Output of an influence-function plugin on internal data.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalFit {
    pub estimate: DVector<f64>,
    /// n x p matrix of per-observation influence values.
    pub influence: DMatrix<f64>,
    pub labels: Vec<String>,
    pub warnings: Vec<String>,
}

impl FunctionalFit {
    pub fn new(
        estimate: DVector<f64>,
        influence: DMatrix<f64>,
        labels: Vec<String>,
    ) -> Result<Self> {
        let p = estimate.len();
        if influence.ncols() != p || labels.len() != p {
            return Err(Error::DimensionMismatch(format!(
                "estimate has {p} entries, influence {} columns, {} labels",
                influence.ncols(),
                labels.len()
            )));
        }
        let n = influence.nrows() as f64;
        for (j, col) in influence.column_iter().enumerate() {
            let mean = col.sum() / n;
            let sd = (col.map(|v| (v - mean).powi(2)).sum() / n).sqrt();
            if !mean.is_finite() || mean.abs() > 1e-8 * (sd + 1.0) {
                return Err(Error::DimensionMismatch(format!(
                    "influence column {j} ({}) has mean {mean:e}, expected zero",
                    labels[j]
                )));
            }
        }
        Ok(Self {
            estimate,
            influence,
            labels,
            warnings: Vec::new(),
        })
    }

    pub fn n(&self) -> usize {
        self.influence.nrows()
    }

    pub fn dim(&self) -> usize {
        self.estimate.len()
    }

    /// Empirical second moment of the influence, divide-by-n.
    pub fn gram(&self) -> DMatrix<f64> {
        linalg::cross_moment(&self.influence, &self.influence)
    }

    /// Horizontally stacks several fits on the same rows.
    pub fn stack(fits: Vec<FunctionalFit>) -> Result<Self> {
        let Some(n) = fits.first().map(FunctionalFit::n) else {
            return Err(Error::DimensionMismatch("nothing to stack".into()));
        };
        if fits.iter().any(|f| f.n() != n) {
            return Err(Error::DimensionMismatch(
                "stacked fits have different row counts".into(),
            ));
        }
        let p: usize = fits.iter().map(FunctionalFit::dim).sum();
        let mut estimate = DVector::zeros(p);
        let mut influence = DMatrix::zeros(n, p);
        let mut labels = Vec::with_capacity(p);
        let mut warnings = Vec::new();
        let mut offset = 0;
        for fit in fits {
            let k = fit.dim();
            estimate.rows_mut(offset, k).copy_from(&fit.estimate);
            influence.columns_mut(offset, k).copy_from(&fit.influence);
            labels.extend(fit.labels);
            warnings.extend(fit.warnings);
            offset += k;
        }
        Ok(Self {
            estimate,
            influence,
            labels,
            warnings,
        })
    }

    /// Fit restricted to a subset of its components.
    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            estimate: linalg::select_entries(&self.estimate, idx),
            influence: linalg::select_columns(&self.influence, idx),
            labels: idx.iter().map(|&i| self.labels[i].clone()).collect(),
            warnings: self.warnings.clone(),
        }
    }
}

/// The estimator that produced a result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Int,
    Crd,
    Eff,
    Knw,
    Dbs,
    Orc,
    Ivw,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Int => "INT",
            Method::Crd => "CRD",
            Method::Eff => "EFF",
            Method::Knw => "KNW",
            Method::Dbs => "DBS",
            Method::Orc => "ORC",
            Method::Ivw => "IVW",
        }
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
        match s.trim().to_ascii_uppercase().as_str() {
            "INT" => Ok(Method::Int),
            "CRD" => Ok(Method::Crd),
            "EFF" => Ok(Method::Eff),
            "KNW" => Ok(Method::Knw),
            "DBS" => Ok(Method::Dbs),
            "ORC" => Ok(Method::Orc),
            "IVW" => Ok(Method::Ivw),
            other => Err(Error::InvalidConfig(format!("unknown method `{other}`"))),
        }
    }
}

/// A fused (or internal-only) estimate of the functional of interest.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionResult {
    pub method: Method,
    pub estimate: DVector<f64>,
    /// Asymptotic variance of the root-n scaled estimator.
    pub avar: DMatrix<f64>,
    /// `sqrt(avar_jj / n)`.
    pub se: DVector<f64>,
    /// Calibration gain applied to the internal/external discrepancy (p x q).
    pub gain: DMatrix<f64>,
    /// Empirical `E(phi eta')`, p x q.
    pub cross: DMatrix<f64>,
    /// Empirical `E(eta eta')`, q x q.
    pub gram: DMatrix<f64>,
    /// `m_s / n` for each external source used.
    pub rho: Vec<f64>,
    pub n: usize,
    pub labels: Vec<String>,
    pub working_covariance: bool,
    pub warnings: Vec<String>,
}

impl FusionResult {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn assemble(
        method: Method,
        estimate: DVector<f64>,
        avar: DMatrix<f64>,
        gain: DMatrix<f64>,
        cross: DMatrix<f64>,
        gram: DMatrix<f64>,
        rho: Vec<f64>,
        n: usize,
        labels: Vec<String>,
    ) -> Self {
        let avar = linalg::symmetrize(&avar);
        let se = avar.diagonal().map(|v| (v.max(0.0) / n as f64).sqrt());
        Self {
            method,
            estimate,
            avar,
            se,
            gain,
            cross,
            gram,
            rho,
            n,
            labels,
            working_covariance: false,
            warnings: Vec::new(),
        }
    }
}

/// Outcome of the bias-screening step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub b_hat: Vec<f64>,
    /// Indices with `b_hat == 0` exactly.
    pub selected: Vec<usize>,
    pub lambda: f64,
    pub alpha: f64,
    /// `(C, cv_error)` pairs from cross-validation; empty for a fixed lambda.
    pub cv_trace: Vec<(f64, f64)>,
    /// Coordinates whose internal and external estimates coincide exactly and
    /// were therefore pinned at zero bias.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pinned: Vec<usize>,
}

impl SelectionResult {
    pub(crate) fn from_b_hat(
        b_hat: Vec<f64>,
        lambda: f64,
        alpha: f64,
        pinned: Vec<usize>,
    ) -> Self {
        let selected = b_hat
            .iter()
            .enumerate()
            .filter(|(_, &b)| b == 0.0)
            .map(|(j, _)| j)
            .collect();
        Self {
            b_hat,
            selected,
            lambda,
            alpha,
            cv_trace: Vec::new(),
            pinned,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("selection serialises")
    }
}
