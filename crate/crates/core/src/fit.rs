//! Penalized likelihood fitting of areal GLMs with fixed, random-effect and
//! MRF terms: design assembly, penalized IRLS, REML smoothing-parameter
//! selection and per-term predictions.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::formula::{format_formula, Family, ModelSpec};
use crate::geom::AreaCollection;
use crate::linalg::{dot, Matrix};
use crate::mrf::{icar_precision, MrfError};
use crate::nbgraph::NbStructure;
use crate::scalar::Scalar;

pub const LOG10_LAMBDA_MIN: f64 = -4.0;
pub const LOG10_LAMBDA_MAX: f64 = 8.0;
pub const SEARCH_SWEEPS: usize = 3;
pub const SEARCH_TOL: f64 = 1e-3;
pub const IRLS_TOL: f64 = 1e-8;
pub const IRLS_MAX_ITER: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("empty data table")]
    Empty,
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("variable `{var}` row {row}: expected a number, found {value}")]
    NonNumeric { var: String, row: usize, value: String },
    #[error("variable `{var}` row {row}: missing value")]
    MissingValue { var: String, row: usize },
    #[error("response row {row}: {reason}")]
    InvalidResponse { row: usize, reason: String },
    #[error("offset(log({var})) row {row}: value {value} is not positive")]
    NonPositiveOffset { var: String, row: usize, value: f64 },
    #[error("MRF term on `{group}` needs a neighbourhood structure")]
    MissingNb { group: String },
    #[error("MRF levels of `{group}` do not match the neighbourhood names; extra in data: [{}]; missing from data: [{}]", extra.join(", "), missing.join(", "))]
    MrfLevels {
        group: String,
        extra: Vec<String>,
        missing: Vec<String>,
    },
    #[error("MRF term on `{group}`: {source}")]
    Mrf { group: String, source: MrfError },
    #[error("penalized system is singular in block `{block}`")]
    Singular { block: String },
    #[error("expected {expected} smoothing parameters, got {got}")]
    LambdaCount { expected: usize, got: usize },
    #[error("smoothing parameter {0} is negative or not finite")]
    BadLambda(f64),
    #[error("model has no penalized terms")]
    NoPenalizedBlocks,
    #[error("REML criterion is non-finite across the whole grid for block `{block}`")]
    NonFiniteCriterion { block: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TermKind {
    Fixed,
    ReIntercept,
    ReSlope,
    MrfIntercept,
    MrfSlope,
}

impl TermKind {
    pub fn is_mrf(self) -> bool {
        matches!(self, TermKind::MrfIntercept | TermKind::MrfSlope)
    }

    /// Effect family used as the column prefix and map subtitle.
    pub fn prefix(self) -> &'static str {
        match self {
            TermKind::Fixed => "fixed",
            TermKind::ReIntercept | TermKind::ReSlope => "random.effect",
            TermKind::MrfIntercept | TermKind::MrfSlope => "mrf.smooth",
        }
    }
}

impl fmt::Display for TermKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TermKind::Fixed => "fixed",
            TermKind::ReIntercept => "re_intercept",
            TermKind::ReSlope => "re_slope",
            TermKind::MrfIntercept => "mrf_intercept",
            TermKind::MrfSlope => "mrf_slope",
        })
    }
}

/// Prediction column name for a term.
pub fn term_label(kind: TermKind, group: &str, covariate: Option<&str>) -> String {
    match (kind, covariate) {
        (TermKind::Fixed, _) => "fixed".to_string(),
        (_, Some(c)) => format!("{}.{c}|{group}", kind.prefix()),
        (_, None) => format!("{}.{group}", kind.prefix()),
    }
}

#[derive(Debug, Clone)]
pub struct TermBlock<T> {
    pub kind: TermKind,
    pub label: String,
    pub group: Option<String>,
    pub covariate: Option<String>,
    pub columns: Matrix<T>,
    /// `None` for the fixed block.
    pub penalty: Option<Matrix<T>>,
    pub lambda: T,
    pub col_labels: Vec<String>,
    pub levels: Vec<String>,
    /// Per-level effect = `level_map · β_block`.
    pub level_map: Matrix<T>,
    penalty_logdet: T,
}

impl<T: Scalar> TermBlock<T> {
    pub fn ncols(&self) -> usize {
        self.columns.ncols()
    }

    pub fn is_penalized(&self) -> bool {
        self.penalty.is_some()
    }
}

#[derive(Debug, Clone)]
pub struct Design<T> {
    pub spec: ModelSpec,
    pub y: Vec<T>,
    pub offset: Vec<T>,
    pub blocks: Vec<TermBlock<T>>,
    pub warnings: Vec<String>,
    x: Matrix<T>,
    starts: Vec<usize>,
    aliased: Vec<usize>,
}

impl<T: Scalar> Design<T> {
    pub fn nobs(&self) -> usize {
        self.y.len()
    }

    pub fn ncols(&self) -> usize {
        self.x.ncols()
    }

    /// Full model matrix, blocks side by side.
    pub fn x(&self) -> &Matrix<T> {
        &self.x
    }

    pub fn block_start(&self, b: usize) -> usize {
        self.starts[b]
    }

    /// Fixed-effect columns found to be linearly dependent on earlier ones;
    /// their coefficients are held at zero.
    pub fn aliased(&self) -> &[usize] {
        &self.aliased
    }

    pub fn penalized_blocks(&self) -> Vec<usize> {
        (0..self.blocks.len())
            .filter(|&b| self.blocks[b].is_penalized())
            .collect()
    }

    /// Current smoothing parameters of the penalized blocks, in block order.
    pub fn lambdas(&self) -> Vec<T> {
        self.blocks
            .iter()
            .filter(|b| b.is_penalized())
            .map(|b| b.lambda)
            .collect()
    }

    fn block_of_column(&self, j: usize) -> usize {
        self.starts.iter().rposition(|&s| s <= j).unwrap_or(0)
    }

    /// `Σ λ_b S_b` embedded in the full coefficient space.
    pub fn total_penalty(&self, lambdas: &[T]) -> Matrix<T> {
        let p = self.ncols();
        let mut s = Matrix::zeros(p, p);
        for (l, b) in lambdas.iter().zip(self.penalized_blocks()) {
            let blk = &self.blocks[b];
            if let Some(pen) = &blk.penalty {
                s.set_block(self.starts[b], self.starts[b], &pen.scaled(*l));
            }
        }
        s
    }
}

fn numeric_column<T: Scalar>(coll: &AreaCollection<T>, var: &str) -> Result<Vec<T>, FitError> {
    if !coll.has_column(var) {
        return Err(FitError::UnknownVariable(var.to_string()));
    }
    coll.column(var)
        .into_iter()
        .enumerate()
        .map(|(i, v)| match v {
            Value::Number(n) => n
                .as_f64()
                .and_then(T::from_f64)
                .ok_or_else(|| FitError::NonNumeric {
                    var: var.to_string(),
                    row: i + 1,
                    value: n.to_string(),
                }),
            Value::Null => Err(FitError::MissingValue {
                var: var.to_string(),
                row: i + 1,
            }),
            other => Err(FitError::NonNumeric {
                var: var.to_string(),
                row: i + 1,
                value: other.to_string(),
            }),
        })
        .collect()
}

pub(crate) fn group_column<T: Scalar>(coll: &AreaCollection<T>, var: &str) -> Result<Vec<String>, FitError> {
    if !coll.has_column(var) {
        if var == coll.name_field() {
            return Ok(coll.names());
        }
        return Err(FitError::UnknownVariable(var.to_string()));
    }
    coll.column(var)
        .into_iter()
        .enumerate()
        .map(|(i, v)| match v {
            Value::String(s) => Ok(s),
            Value::Null => Err(FitError::MissingValue {
                var: var.to_string(),
                row: i + 1,
            }),
            other => Ok(other.to_string()),
        })
        .collect()
}

fn first_appearance(values: &[String]) -> (Vec<String>, Vec<usize>) {
    let mut levels: indexmap::IndexSet<String> = indexmap::IndexSet::new();
    let idx = values
        .iter()
        .map(|v| levels.insert_full(v.clone()).0)
        .collect();
    (levels.into_iter().collect(), idx)
}

/// Columns of `xf` that are linear combinations of earlier columns.
fn aliased_columns<T: Scalar>(xf: &Matrix<T>) -> Vec<usize> {
    let tol = T::lit(1e-10);
    let mut basis: Vec<Vec<T>> = Vec::new();
    let mut out = Vec::new();
    for j in 0..xf.ncols() {
        let col = xf.col(j);
        let norm2 = dot(&col, &col);
        let mut r = col;
        for _ in 0..2 {
            for q in &basis {
                let c = dot(q, &r);
                for (ri, &qi) in r.iter_mut().zip(q) {
                    *ri -= c * qi;
                }
            }
        }
        let rr = dot(&r, &r);
        if norm2 == T::zero() || rr <= tol * norm2 {
            out.push(j);
        } else {
            let s = rr.sqrt();
            basis.push(r.into_iter().map(|v| v / s).collect());
        }
    }
    out
}

fn identity_block<T: Scalar>(q: usize) -> Matrix<T> {
    Matrix::identity(q)
}

/// Assembles response, offset and term blocks. Random-effect blocks are
/// grouped by grouping variable (intercept then slopes), followed by the
/// MRF blocks grouped the same way.
pub fn build_design<T: Scalar>(
    spec: &ModelSpec,
    coll: &AreaCollection<T>,
    nb: Option<&NbStructure>,
) -> Result<Design<T>, FitError> {
    let n = coll.len();
    if n == 0 {
        return Err(FitError::Empty);
    }
    let y = numeric_column(coll, &spec.response)?;
    for (i, &v) in y.iter().enumerate() {
        let bad = match spec.family {
            _ if !v.is_finite() => Some("not finite"),
            Family::Poisson if v < T::zero() => Some("negative count"),
            Family::Poisson if (v - v.round()).abs() > T::lit(1e-9) => Some("count is not an integer"),
            _ => None,
        };
        if let Some(reason) = bad {
            return Err(FitError::InvalidResponse {
                row: i + 1,
                reason: format!("{reason} ({v})"),
            });
        }
    }
    let offset = match &spec.offset {
        None => vec![T::zero(); n],
        Some(o) => {
            let raw = numeric_column(coll, &o.var)?;
            if o.log {
                raw.iter()
                    .enumerate()
                    .map(|(i, &v)| {
                        if v > T::zero() {
                            Ok(v.ln())
                        } else {
                            Err(FitError::NonPositiveOffset {
                                var: o.var.clone(),
                                row: i + 1,
                                value: v.to_f64_lossy(),
                            })
                        }
                    })
                    .collect::<Result<_, _>>()?
            } else {
                raw
            }
        }
    };

    let mut blocks = Vec::new();
    let mut warnings = Vec::new();

    // fixed
    let mut fixed_cols = vec![vec![T::one(); n]];
    let mut fixed_labels = vec!["(Intercept)".to_string()];
    for v in &spec.fixed {
        fixed_cols.push(numeric_column(coll, v)?);
        fixed_labels.push(v.clone());
    }
    let xf = Matrix::from_fn(n, fixed_cols.len(), |i, j| fixed_cols[j][i]);
    let aliased = aliased_columns(&xf);
    if !aliased.is_empty() {
        let names: Vec<&str> = aliased.iter().map(|&j| fixed_labels[j].as_str()).collect();
        warnings.push(format!(
            "fixed columns aliased with earlier columns, coefficients held at 0: {}",
            names.join(", ")
        ));
    }
    blocks.push(TermBlock {
        kind: TermKind::Fixed,
        label: "fixed".into(),
        group: None,
        covariate: None,
        level_map: Matrix::zeros(0, xf.ncols()),
        columns: xf,
        penalty: None,
        lambda: T::zero(),
        col_labels: fixed_labels,
        levels: Vec::new(),
        penalty_logdet: T::zero(),
    });

    // random effects
    let mut re_groups: Vec<&String> = Vec::new();
    for g in spec.re_intercepts.iter().chain(spec.re_slopes.iter().map(|s| &s.group)) {
        if !re_groups.contains(&g) {
            re_groups.push(g);
        }
    }
    for g in re_groups {
        let values = group_column(coll, g)?;
        let (levels, idx) = first_appearance(&values);
        let q = levels.len();
        let mut terms: Vec<Option<&String>> = Vec::new();
        if spec.re_intercepts.contains(g) {
            terms.push(None);
        }
        terms.extend(spec.re_slopes.iter().filter(|s| &s.group == g).map(|s| Some(&s.covariate)));
        for cov in terms {
            let xv = match cov {
                Some(c) => numeric_column(coll, c)?,
                None => vec![T::one(); n],
            };
            let label = term_label(
                if cov.is_some() { TermKind::ReSlope } else { TermKind::ReIntercept },
                g,
                cov.map(String::as_str),
            );
            let columns = Matrix::from_fn(n, q, |i, j| if idx[i] == j { xv[i] } else { T::zero() });
            blocks.push(TermBlock {
                kind: if cov.is_some() { TermKind::ReSlope } else { TermKind::ReIntercept },
                col_labels: levels.iter().map(|l| format!("{label}[{l}]")).collect(),
                label,
                group: Some(g.clone()),
                covariate: cov.cloned(),
                columns,
                penalty: Some(identity_block(q)),
                lambda: T::one(),
                levels: levels.clone(),
                level_map: Matrix::identity(q),
                penalty_logdet: T::zero(),
            });
        }
    }

    // MRF smooths
    let mut mrf_terms: Vec<(&String, Option<&String>, Option<usize>)> = Vec::new();
    let mut mrf_groups: Vec<&String> = Vec::new();
    for g in spec
        .mrf_intercepts
        .iter()
        .map(|m| &m.group)
        .chain(spec.mrf_slopes.iter().map(|m| &m.group))
    {
        if !mrf_groups.contains(&g) {
            mrf_groups.push(g);
        }
    }
    for g in &mrf_groups {
        for m in spec.mrf_intercepts.iter().filter(|m| &&m.group == g) {
            mrf_terms.push((&m.group, None, m.k));
        }
        for m in spec.mrf_slopes.iter().filter(|m| &&m.group == g) {
            mrf_terms.push((&m.group, Some(&m.by), m.k));
        }
    }
    let mut warned_components = false;
    for (g, by, k) in mrf_terms {
        let nb = nb.ok_or_else(|| FitError::MissingNb { group: g.clone() })?;
        let values = group_column(coll, g)?;
        let names = nb.names();
        let pos: Vec<Option<usize>> = values.iter().map(|v| names.iter().position(|n| n == v)).collect();
        let mut extra: Vec<String> = Vec::new();
        for (v, p) in values.iter().zip(&pos) {
            if p.is_none() && !extra.contains(v) {
                extra.push(v.clone());
            }
        }
        let missing: Vec<String> = names
            .iter()
            .filter(|n| !values.contains(n))
            .cloned()
            .collect();
        if !extra.is_empty() || !missing.is_empty() {
            return Err(FitError::MrfLevels {
                group: g.clone(),
                extra,
                missing,
            });
        }
        let mrf_err = |source| FitError::Mrf {
            group: g.clone(),
            source,
        };
        let mut prec = icar_precision::<T>(nb).map_err(mrf_err)?;
        if let Some(k) = k {
            prec = prec.rank_reduce(k).map_err(mrf_err)?;
        }
        let comps = prec.components();
        if comps.len() > 1 && !warned_components {
            warned_components = true;
            let listing: Vec<String> = comps
                .iter()
                .map(|c| {
                    let members: Vec<&str> = c.iter().map(|&i| names[i].as_str()).collect();
                    format!("{{{}}}", members.join(", "))
                })
                .collect();
            warnings.push(format!(
                "neighbourhood structure has {} components; MRF effects are centred within each: {}",
                comps.len(),
                listing.join(" ")
            ));
        }
        let basis = prec.basis().clone();
        let q = basis.ncols();
        let xv = match by {
            Some(c) => numeric_column(coll, c)?,
            None => vec![T::one(); n],
        };
        let columns = Matrix::from_fn(n, q, |i, j| basis[(pos[i].unwrap_or(0), j)] * xv[i]);
        let penalty = prec.penalty().clone();
        let penalty_logdet = if q == 0 {
            T::zero()
        } else {
            penalty
                .cholesky()
                .map(|c| c.log_det())
                .map_err(|_| FitError::Singular { block: g.clone() })?
        };
        let kind = if by.is_some() { TermKind::MrfSlope } else { TermKind::MrfIntercept };
        let label = term_label(kind, g, by.map(String::as_str));
        blocks.push(TermBlock {
            kind,
            col_labels: (1..=q).map(|j| format!("{label}[{j}]")).collect(),
            label,
            group: Some(g.clone()),
            covariate: by.cloned(),
            columns,
            penalty: Some(penalty),
            lambda: T::one(),
            levels: names.to_vec(),
            level_map: basis,
            penalty_logdet,
        });
    }

    for w in &warnings {
        log::warn!("{w}");
    }
    let mut starts = Vec::with_capacity(blocks.len());
    let mut p = 0;
    for b in &blocks {
        starts.push(p);
        p += b.ncols();
    }
    let mut x = Matrix::zeros(n, p);
    for (b, s) in blocks.iter().zip(&starts) {
        x.set_block(0, *s, &b.columns);
    }
    Ok(Design {
        spec: spec.clone(),
        y,
        offset,
        blocks,
        warnings,
        x,
        starts,
        aliased,
    })
}

/// Poisson or Gaussian deviance of `mu` against `y`.
pub fn deviance<T: Scalar>(family: Family, y: &[T], mu: &[T]) -> T {
    match family {
        Family::Gaussian => y.iter().zip(mu).map(|(&a, &m)| (a - m) * (a - m)).sum(),
        Family::Poisson => {
            let two = T::lit(2.0);
            y.iter()
                .zip(mu)
                .map(|(&a, &m)| {
                    let t = if a > T::zero() { a * (a / m).ln() } else { T::zero() };
                    two * (t - (a - m))
                })
                .sum()
        }
    }
}

fn inverse_link<T: Scalar>(family: Family, eta: T) -> T {
    match family {
        Family::Gaussian => eta,
        Family::Poisson => eta.exp(),
    }
}

fn linear_predictor<T: Scalar>(d: &Design<T>, beta: &[T]) -> Vec<T> {
    d.x.mul_vec(beta)
        .into_iter()
        .zip(&d.offset)
        .map(|(e, &o)| e + o)
        .collect()
}

/// Penalized objective `D(β)/2 + βᵀSβ/2` at the given smoothing parameters;
/// penalized IRLS minimizes this over `β`.
pub fn penalized_objective<T: Scalar>(d: &Design<T>, lambdas: &[T], beta: &[T]) -> T {
    let s = d.total_penalty(lambdas);
    let eta = linear_predictor(d, beta);
    let mu: Vec<T> = eta.iter().map(|&e| inverse_link(d.spec.family, e)).collect();
    let half = T::lit(0.5);
    half * (deviance(d.spec.family, &d.y, &mu) + s.quad_form(beta))
}

#[derive(Debug, Clone)]
struct Core<T> {
    beta: Vec<T>,
    eta: Vec<T>,
    mu: Vec<T>,
    /// `(XᵀWX + S)⁻¹`, unscaled.
    h_inv: Matrix<T>,
    h_logdet: T,
    gram: Matrix<T>,
    deviance: T,
    penalty_value: T,
    pdev_trace: Vec<T>,
    iterations: usize,
    converged: bool,
}

fn check_lambdas<T: Scalar>(d: &Design<T>, lambdas: &[T]) -> Result<(), FitError> {
    let expected = d.penalized_blocks().len();
    if lambdas.len() != expected {
        return Err(FitError::LambdaCount {
            expected,
            got: lambdas.len(),
        });
    }
    if let Some(l) = lambdas.iter().find(|l| !(l.is_finite() && **l >= T::zero())) {
        return Err(FitError::BadLambda(l.to_f64_lossy()));
    }
    Ok(())
}

/// Solves `(G + S) β = r` with aliased columns pinned at zero.
fn penalized_solve<T: Scalar>(
    d: &Design<T>,
    gram: &mut Matrix<T>,
    s: &Matrix<T>,
    rhs: &mut [T],
) -> Result<(Matrix<T>, crate::linalg::Cholesky<T>), FitError> {
    let p = d.ncols();
    for &j in &d.aliased {
        for k in 0..p {
            gram[(j, k)] = T::zero();
            gram[(k, j)] = T::zero();
        }
        rhs[j] = T::zero();
    }
    let mut h = gram.clone();
    h.add_assign(s);
    for &j in &d.aliased {
        h[(j, j)] = T::one();
    }
    let chol = h.cholesky().map_err(|col| FitError::Singular {
        block: d.blocks[d.block_of_column(col)].label.clone(),
    })?;
    Ok((h, chol))
}

fn fit_core<T: Scalar>(d: &Design<T>, lambdas: &[T]) -> Result<Core<T>, FitError> {
    let n = d.nobs();
    let s = d.total_penalty(lambdas);
    let family = d.spec.family;
    let tol = T::lit(IRLS_TOL).max(T::epsilon() * T::lit(100.0));
    let small = T::lit(0.1);

    let mut mu: Vec<T> = match family {
        Family::Gaussian => d.y.clone(),
        Family::Poisson => d.y.iter().map(|&v| v + small).collect(),
    };
    let mut eta: Vec<T> = match family {
        Family::Gaussian => mu.clone(),
        Family::Poisson => mu.iter().map(|m| m.ln()).collect(),
    };
    let mut beta: Vec<T> = Vec::new();
    let mut pdev_old = T::infinity();
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < IRLS_MAX_ITER {
        iterations += 1;
        let (w, z): (Vec<T>, Vec<T>) = match family {
            Family::Gaussian => (vec![T::one(); n], (0..n).map(|i| d.y[i] - d.offset[i]).collect()),
            Family::Poisson => (
                mu.clone(),
                (0..n)
                    .map(|i| eta[i] - d.offset[i] + (d.y[i] - mu[i]) / mu[i])
                    .collect(),
            ),
        };
        let mut gram = d.x.weighted_gram(&w);
        let wz: Vec<T> = w.iter().zip(&z).map(|(&a, &b)| a * b).collect();
        let mut rhs = d.x.tr_mul_vec(&wz);
        let (_, chol) = penalized_solve(d, &mut gram, &s, &mut rhs)?;
        let mut cand = chol.solve(&rhs);

        let evaluate = |b: &[T]| {
            let e = linear_predictor(d, b);
            let m: Vec<T> = e.iter().map(|&v| inverse_link(family, v)).collect();
            let pd = deviance(family, &d.y, &m) + s.quad_form(b);
            (e, m, if pd.is_finite() { pd } else { T::infinity() })
        };
        let (mut e, mut m, mut pdev) = evaluate(&cand);
        if !beta.is_empty() {
            let mut halvings = 0;
            while pdev > pdev_old && halvings < 40 {
                halvings += 1;
                for (c, &b) in cand.iter_mut().zip(&beta) {
                    *c = (*c + b) * T::lit(0.5);
                }
                (e, m, pdev) = evaluate(&cand);
            }
            if pdev > pdev_old {
                cand = beta.clone();
                (e, m, pdev) = evaluate(&cand);
            }
        }
        beta = cand;
        eta = e;
        mu = m;
        trace.push(pdev);
        if family == Family::Gaussian {
            converged = true;
            break;
        }
        if pdev_old.is_finite() && (pdev_old - pdev).abs() < tol * (pdev.abs() + small) {
            converged = true;
            break;
        }
        pdev_old = pdev;
    }

    let w: Vec<T> = match family {
        Family::Gaussian => vec![T::one(); n],
        Family::Poisson => mu.clone(),
    };
    let mut gram = d.x.weighted_gram(&w);
    let mut dummy = vec![T::zero(); d.ncols()];
    let (_, chol) = penalized_solve(d, &mut gram, &s, &mut dummy)?;
    let mut h_inv = chol.inverse();
    for &j in &d.aliased {
        h_inv[(j, j)] = T::zero();
    }
    Ok(Core {
        deviance: deviance(family, &d.y, &mu),
        penalty_value: s.quad_form(&beta),
        h_logdet: chol.log_det(),
        beta,
        eta,
        mu,
        h_inv,
        gram,
        pdev_trace: trace,
        iterations,
        converged,
    })
}

fn null_deviance<T: Scalar>(d: &Design<T>) -> T {
    let n = T::from_usize_lossy(d.nobs());
    let mu: Vec<T> = match d.spec.family {
        Family::Gaussian => {
            let shift = d.y.iter().zip(&d.offset).map(|(&y, &o)| y - o).sum::<T>() / n;
            d.offset.iter().map(|&o| o + shift).collect()
        }
        Family::Poisson => {
            let sy: T = d.y.iter().copied().sum();
            let se: T = d.offset.iter().map(|o| o.exp()).sum();
            d.offset.iter().map(|&o| o.exp() * sy / se).collect()
        }
    };
    deviance(d.spec.family, &d.y, &mu)
}

/// Restricted likelihood criterion (negated, to be minimized). Exact for
/// Gaussian with the scale profiled out, Laplace-approximate for Poisson.
fn reml_criterion<T: Scalar>(d: &Design<T>, lambdas: &[T], core: &Core<T>) -> T {
    let half = T::lit(0.5);
    let mut log_s = T::zero();
    for (l, b) in lambdas.iter().zip(d.penalized_blocks()) {
        let blk = &d.blocks[b];
        let q = blk.ncols();
        if q > 0 {
            log_s += T::from_usize_lossy(q) * l.ln() + blk.penalty_logdet;
        }
    }
    match d.spec.family {
        Family::Gaussian => {
            let mp = d.blocks[0].ncols() - d.aliased.len();
            let dof = T::from_usize_lossy(d.nobs()) - T::from_usize_lossy(mp);
            let phi = (core.deviance + core.penalty_value) / dof;
            let two_pi = T::lit(std::f64::consts::TAU);
            half * dof * (T::one() + (two_pi * phi).ln()) + half * core.h_logdet - half * log_s
        }
        Family::Poisson => half * (core.deviance + core.penalty_value) + half * core.h_logdet - half * log_s,
    }
}

#[derive(Debug, Clone)]
pub struct TermPrediction<T> {
    pub label: String,
    pub kind: TermKind,
    pub group: String,
    pub covariate: Option<String>,
    pub levels: Vec<String>,
    pub estimate: Vec<T>,
    pub se: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct FitResult<T> {
    pub spec: ModelSpec,
    pub coef_names: Vec<String>,
    pub beta: Vec<T>,
    /// Posterior covariance `(XᵀWX + Σλ_b S_b)⁻¹ φ`.
    pub cov: Matrix<T>,
    /// Smoothing parameters of the penalized blocks, in block order.
    pub lambda: Vec<T>,
    /// Per-block edf, fixed block first.
    pub edf: Vec<T>,
    pub edf_total: T,
    pub deviance: T,
    pub null_deviance: T,
    pub deviance_explained: T,
    pub aic: T,
    pub scale: T,
    pub iterations: usize,
    pub converged: bool,
    /// Penalized deviance after each IRLS iteration.
    pub pdev_trace: Vec<T>,
    pub fitted: Vec<T>,
    pub linear_predictor: Vec<T>,
    pub reml: Option<T>,
    pub warnings: Vec<String>,
    pub terms: Vec<TermPrediction<T>>,
    block_ranges: Vec<(usize, usize)>,
}

impl<T: Scalar> FitResult<T> {
    /// Coefficients of block `b` (0 = fixed).
    pub fn block_beta(&self, b: usize) -> &[T] {
        let (s, q) = self.block_ranges[b];
        &self.beta[s..s + q]
    }

    pub fn term(&self, label: &str) -> Option<&TermPrediction<T>> {
        self.terms.iter().find(|t| t.label == label)
    }
}

fn finish<T: Scalar>(d: &Design<T>, lambdas: &[T], core: Core<T>, reml: Option<T>) -> FitResult<T> {
    let n = d.nobs();
    let p = d.ncols();
    let influence = core.h_inv.matmul(&core.gram);
    let ranges: Vec<(usize, usize)> = d
        .blocks
        .iter()
        .enumerate()
        .map(|(b, blk)| (d.starts[b], blk.ncols()))
        .collect();
    let edf: Vec<T> = ranges
        .iter()
        .map(|&(s, q)| (s..s + q).map(|j| influence[(j, j)]).sum())
        .collect();
    let edf_total = influence.trace();
    let nf = T::from_usize_lossy(n);
    let scale = match d.spec.family {
        Family::Gaussian => {
            let dof = nf - edf_total;
            if dof > T::zero() {
                core.deviance / dof
            } else {
                core.deviance / nf
            }
        }
        Family::Poisson => T::one(),
    };
    let two = T::lit(2.0);
    let aic = match d.spec.family {
        Family::Poisson => core.deviance + two * edf_total,
        Family::Gaussian => {
            let two_pi = T::lit(std::f64::consts::TAU);
            nf * (two_pi * core.deviance / nf).ln() + nf + two * (edf_total + T::one())
        }
    };
    let null_dev = null_deviance(d);
    let deviance_explained = if null_dev > T::zero() {
        T::one() - core.deviance / null_dev
    } else if core.deviance <= T::zero() {
        T::one()
    } else {
        T::zero()
    };
    let cov = core.h_inv.scaled(scale);

    let mut terms = Vec::new();
    for (b, blk) in d.blocks.iter().enumerate() {
        if !blk.is_penalized() {
            continue;
        }
        let (s, q) = ranges[b];
        let bb = &core.beta[s..s + q];
        let cb = cov.block(s, s, q, q);
        let estimate = blk.level_map.mul_vec(bb);
        let se = (0..blk.level_map.nrows())
            .map(|i| {
                let m = blk.level_map.row(i);
                cb.quad_form(m).max(T::zero()).sqrt()
            })
            .collect();
        terms.push(TermPrediction {
            label: blk.label.clone(),
            kind: blk.kind,
            group: blk.group.clone().unwrap_or_default(),
            covariate: blk.covariate.clone(),
            levels: blk.levels.clone(),
            estimate,
            se,
        });
    }
    let coef_names = d
        .blocks
        .iter()
        .flat_map(|b| b.col_labels.iter().cloned())
        .collect::<Vec<_>>();
    debug_assert_eq!(coef_names.len(), p);

    let mut warnings = d.warnings.clone();
    if !core.converged {
        warnings.push(format!("IRLS did not converge in {} iterations", core.iterations));
    }
    FitResult {
        spec: d.spec.clone(),
        coef_names,
        beta: core.beta,
        cov,
        lambda: lambdas.to_vec(),
        edf,
        edf_total,
        deviance: core.deviance,
        null_deviance: null_dev,
        deviance_explained,
        aic,
        scale,
        iterations: core.iterations,
        converged: core.converged,
        pdev_trace: core.pdev_trace,
        fitted: core.mu,
        linear_predictor: core.eta,
        reml,
        warnings,
        terms,
        block_ranges: ranges,
    }
}

/// Fits with the smoothing parameters held fixed (one per penalized block).
pub fn pirls_fit<T: Scalar>(d: &Design<T>, lambdas: &[T]) -> Result<FitResult<T>, FitError> {
    check_lambdas(d, lambdas)?;
    let core = fit_core(d, lambdas)?;
    Ok(finish(d, lambdas, core, None))
}

/// REML criterion at the given smoothing parameters.
pub fn reml_score<T: Scalar>(d: &Design<T>, lambdas: &[T]) -> Result<T, FitError> {
    check_lambdas(d, lambdas)?;
    let core = fit_core(d, lambdas)?;
    Ok(reml_criterion(d, lambdas, &core))
}

/// Chooses one smoothing parameter per penalized block by coordinate-wise
/// search on `log10 λ`: a unit-step grid over the whole range locates the
/// basin, golden-section search refines it.
pub fn select_lambdas<T: Scalar>(d: &Design<T>) -> Result<FitResult<T>, FitError> {
    let pen = d.penalized_blocks();
    if pen.is_empty() {
        return Err(FitError::NoPenalizedBlocks);
    }
    let mut rho: Vec<f64> = vec![0.0; pen.len()];
    let score = |rho: &[f64]| -> f64 {
        let l: Vec<T> = rho.iter().map(|r| T::lit(10f64.powf(*r))).collect();
        match fit_core(d, &l) {
            Ok(core) => {
                let v = reml_criterion(d, &l, &core).to_f64_lossy();
                if v.is_finite() {
                    v
                } else {
                    f64::INFINITY
                }
            }
            Err(_) => f64::INFINITY,
        }
    };
    let gr = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..SEARCH_SWEEPS {
        for (c, &b) in pen.iter().enumerate() {
            if d.blocks[b].ncols() == 0 {
                continue;
            }
            let mut trial = rho.clone();
            let mut f_at = |r: f64| {
                trial[c] = r;
                score(&trial)
            };
            let grid: Vec<f64> = (0..=12).map(|i| LOG10_LAMBDA_MIN + i as f64).collect();
            let vals: Vec<f64> = grid.iter().map(|&r| f_at(r)).collect();
            let (bi, bv) = vals
                .iter()
                .enumerate()
                .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
            if !bv.is_finite() {
                return Err(FitError::NonFiniteCriterion {
                    block: d.blocks[b].label.clone(),
                });
            }
            let (mut lo, mut hi) = (
                (grid[bi] - 1.0).max(LOG10_LAMBDA_MIN),
                (grid[bi] + 1.0).min(LOG10_LAMBDA_MAX),
            );
            let mut x1 = hi - gr * (hi - lo);
            let mut x2 = lo + gr * (hi - lo);
            let mut f1 = f_at(x1);
            let mut f2 = f_at(x2);
            while hi - lo > SEARCH_TOL {
                if f1 <= f2 {
                    hi = x2;
                    x2 = x1;
                    f2 = f1;
                    x1 = hi - gr * (hi - lo);
                    f1 = f_at(x1);
                } else {
                    lo = x1;
                    x1 = x2;
                    f1 = f2;
                    x2 = lo + gr * (hi - lo);
                    f2 = f_at(x2);
                }
            }
            let mid = 0.5 * (lo + hi);
            let fm = f_at(mid);
            rho[c] = if fm <= bv { mid } else { grid[bi] };
        }
    }
    let lambdas: Vec<T> = rho.iter().map(|r| T::lit(10f64.powf(*r))).collect();
    let core = fit_core(d, &lambdas)?;
    let reml = reml_criterion(d, &lambdas, &core);
    Ok(finish(d, &lambdas, core, Some(reml)))
}

/// Builds the design and fits it: REML selection when penalized terms are
/// present, a plain GLM fit otherwise.
pub fn fit_model<T: Scalar>(
    spec: &ModelSpec,
    coll: &AreaCollection<T>,
    nb: Option<&NbStructure>,
) -> Result<FitResult<T>, FitError> {
    let d = build_design(spec, coll, nb)?;
    if d.penalized_blocks().is_empty() {
        pirls_fit(&d, &[])
    } else {
        select_lambdas(&d)
    }
}

/// Per-term estimates and standard errors by level.
pub fn term_predictions<T: Scalar>(fit: &FitResult<T>) -> &[TermPrediction<T>] {
    &fit.terms
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefSummary {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermSummary {
    pub label: String,
    pub kind: TermKind,
    pub group: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariate: Option<String>,
    pub columns: usize,
    pub edf: f64,
    pub lambda: f64,
    /// `φ / λ`.
    pub variance: f64,
    pub levels: Vec<String>,
    pub estimate: Vec<f64>,
    pub se: Vec<f64>,
}

/// Serializable fit report, also the input of augmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub family: Family,
    pub formula: String,
    pub coefficients: Vec<CoefSummary>,
    pub terms: Vec<TermSummary>,
    pub deviance: f64,
    pub null_deviance: f64,
    pub deviance_explained: f64,
    pub aic: f64,
    pub converged: bool,
    pub scale: f64,
    pub edf_total: f64,
    pub iterations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reml: Option<f64>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl<T: Scalar> FitResult<T> {
    pub fn summary(&self) -> FitSummary {
        let f = |v: T| v.to_f64_lossy();
        let (_, q0) = self.block_ranges[0];
        let coefficients = (0..q0)
            .map(|j| CoefSummary {
                name: self.coef_names[j].clone(),
                estimate: f(self.beta[j]),
                se: f(self.cov[(j, j)].max(T::zero()).sqrt()),
            })
            .collect();
        let terms = self
            .terms
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let b = i + 1;
                let lambda = f(self.lambda[i]);
                TermSummary {
                    label: t.label.clone(),
                    kind: t.kind,
                    group: t.group.clone(),
                    covariate: t.covariate.clone(),
                    columns: self.block_ranges[b].1,
                    edf: f(self.edf[b]),
                    lambda,
                    variance: f(self.scale) / lambda,
                    levels: t.levels.clone(),
                    estimate: t.estimate.iter().map(|&v| f(v)).collect(),
                    se: t.se.iter().map(|&v| f(v)).collect(),
                }
            })
            .collect();
        FitSummary {
            family: self.spec.family,
            formula: format_formula(&self.spec),
            coefficients,
            terms,
            deviance: f(self.deviance),
            null_deviance: f(self.null_deviance),
            deviance_explained: f(self.deviance_explained),
            aic: f(self.aic),
            converged: self.converged,
            scale: f(self.scale),
            edf_total: f(self.edf_total),
            iterations: self.iterations,
            reml: self.reml.map(f),
            warnings: self.warnings.clone(),
        }
    }
}
