//! Weighted logistic regression.
//!
//! [`fit_logistic`] maximises the weighted log-likelihood by IRLS (Newton
//! steps with step-halving). [`fit_lasso_logistic`] adds an L1 penalty on the
//! non-intercept coefficients and is solved by proximal Newton: an outer
//! quadratic approximation of the mean log-likelihood, minimised by cyclic
//! coordinate descent with soft-thresholding.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Centering and scaling applied to one feature column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: f64,
    pub scale: f64,
}

impl Standardization {
    pub const IDENTITY: Self = Self { mean: 0.0, scale: 1.0 };

    fn apply(&self, x: f64) -> f64 {
        (x - self.mean) / self.scale
    }
}

/// Model matrix with a leading intercept column.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    feature_names: Vec<String>,
    standardization: Vec<Standardization>,
}

impl DesignMatrix {
    /// Builds a design from row-major raw features (without intercept).
    /// With `standardize`, every non-constant column is centred and scaled to
    /// unit variance; the transform is kept so predictions can repeat it.
    pub fn new(rows: usize, features: &[f64], feature_names: Vec<String>, standardize: bool) -> Result<Self> {
        let p = feature_names.len();
        if rows == 0 {
            return Err(Error::EmptyInput("design has no rows"));
        }
        if features.len() != rows * p {
            return Err(Error::LengthMismatch { expected: rows * p, found: features.len() });
        }
        let mut seen = std::collections::BTreeSet::new();
        for name in &feature_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::InvalidSpec(format!("duplicate design column `{name}`")));
            }
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::MissingValue { row: pos / p.max(1), column: feature_names[pos % p].clone() });
        }
        let standardization: Vec<Standardization> = if standardize {
            (0..p)
                .map(|j| {
                    let (mean, sd) = column_moments((0..rows).map(|i| features[i * p + j]), None);
                    Standardization { mean, scale: if sd > 0.0 { sd } else { 1.0 } }
                })
                .collect()
        } else {
            vec![Standardization::IDENTITY; p]
        };
        let cols = p + 1;
        let mut values = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            values.push(1.0);
            for j in 0..p {
                values.push(standardization[j].apply(features[i * p + j]));
            }
        }
        Ok(Self { rows, cols, values, feature_names, standardization })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Column count including the intercept.
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn standardization(&self) -> &[Standardization] {
        &self.standardization
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    /// Rows in the order given (duplicates allowed).
    pub fn subset(&self, rows: &[usize]) -> Self {
        let mut values = Vec::with_capacity(rows.len() * self.cols);
        for &r in rows {
            values.extend_from_slice(self.row(r));
        }
        Self {
            rows: rows.len(),
            cols: self.cols,
            values,
            feature_names: self.feature_names.clone(),
            standardization: self.standardization.clone(),
        }
    }

    fn column_name(&self, j: usize) -> String {
        if j == 0 {
            "(intercept)".to_string()
        } else {
            self.feature_names[j - 1].clone()
        }
    }
}

fn column_moments(values: impl Iterator<Item = f64>, weights: Option<&[f64]>) -> (f64, f64) {
    let values: Vec<f64> = values.collect();
    let (sw, mean) = match weights {
        Some(w) => {
            let sw: f64 = w.iter().sum();
            (sw, values.iter().zip(w).map(|(x, w)| x * w).sum::<f64>() / sw)
        }
        None => (values.len() as f64, values.iter().sum::<f64>() / values.len() as f64),
    };
    let var = match weights {
        Some(w) => values.iter().zip(w).map(|(x, w)| w * (x - mean).powi(2)).sum::<f64>() / sw,
        None => values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / sw,
    };
    (mean, var.sqrt())
}

/// How a model was trained; carried into reports.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub variant: String,
    pub weights: String,
    pub penalty: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    /// Intercept first, then one coefficient per design feature.
    pub coefficients: Vec<f64>,
    pub feature_names: Vec<String>,
    pub standardization: Vec<Standardization>,
    pub converged: bool,
    pub iterations: usize,
    /// Final weighted deviance, `-2 · log-likelihood`.
    pub deviance: f64,
    /// Euclidean norm of the weighted score vector at the solution.
    pub gradient_norm: f64,
    pub training_meta: TrainingMeta,
    #[serde(skip)]
    pub deviance_trace: Vec<f64>,
}

impl FittedModel {
    /// Model with given coefficients on unstandardized features.
    pub fn from_coefficients(coefficients: Vec<f64>, feature_names: Vec<String>) -> Result<Self> {
        if coefficients.len() != feature_names.len() + 1 {
            return Err(Error::LengthMismatch { expected: feature_names.len() + 1, found: coefficients.len() });
        }
        let p = feature_names.len();
        Ok(Self {
            coefficients,
            feature_names,
            standardization: vec![Standardization::IDENTITY; p],
            converged: true,
            iterations: 0,
            deviance: f64::NAN,
            gradient_norm: f64::NAN,
            training_meta: TrainingMeta::default(),
            deviance_trace: Vec::new(),
        })
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Intercept plus coefficients times (standardized) features.
    pub fn linear_predictor(&self, features: &[f64]) -> Result<f64> {
        if features.len() != self.n_features() {
            return Err(Error::LengthMismatch { expected: self.n_features(), found: features.len() });
        }
        Ok(self.linear_predictor_unchecked(features))
    }

    fn linear_predictor_unchecked(&self, features: &[f64]) -> f64 {
        let mut eta = self.coefficients[0];
        for ((x, b), s) in features.iter().zip(&self.coefficients[1..]).zip(&self.standardization) {
            eta += b * s.apply(*x);
        }
        eta
    }

    pub fn predict_prob(&self, features: &[f64]) -> Result<f64> {
        Ok(expit(self.linear_predictor(features)?))
    }

    /// Linear predictors for every row of a row-major feature matrix.
    pub fn linear_predictors(&self, features: &[f64]) -> Result<Vec<f64>> {
        let p = self.n_features();
        if p == 0 {
            return Err(Error::InvalidSpec("use linear_predictors_n for intercept-only models".into()));
        }
        if !features.len().is_multiple_of(p) {
            return Err(Error::LengthMismatch { expected: p, found: features.len() % p });
        }
        Ok(features.chunks_exact(p).map(|row| self.linear_predictor_unchecked(row)).collect())
    }
}

/// Free function forms of the prediction methods.
pub fn predict_prob(model: &FittedModel, features: &[f64]) -> Result<f64> {
    model.predict_prob(features)
}

pub fn linear_predictor(model: &FittedModel, features: &[f64]) -> Result<f64> {
    model.linear_predictor(features)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IrlsOptions {
    pub max_iterations: usize,
    /// Convergence when the largest coefficient change falls below this.
    pub tolerance: f64,
    pub max_halvings: usize,
    /// Separation is declared once a standardized coefficient exceeds this.
    pub separation_bound: f64,
}

impl Default for IrlsOptions {
    fn default() -> Self {
        Self { max_iterations: 100, tolerance: 1e-8, max_halvings: 20, separation_bound: 30.0 }
    }
}

fn check_inputs(
    design: &DesignMatrix,
    y: &[bool],
    weights: Option<&[f64]>,
    offset: Option<&[f64]>,
) -> Result<Vec<f64>> {
    let n = design.rows();
    if y.len() != n {
        return Err(Error::LengthMismatch { expected: n, found: y.len() });
    }
    if let Some(o) = offset {
        if o.len() != n {
            return Err(Error::LengthMismatch { expected: n, found: o.len() });
        }
        if let Some(&v) = o.iter().find(|v| !v.is_finite()) {
            return Err(Error::OutOfRange { what: "offset", value: v });
        }
    }
    let w = match weights {
        Some(w) => {
            if w.len() != n {
                return Err(Error::LengthMismatch { expected: n, found: w.len() });
            }
            if let Some(&bad) = w.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                return Err(Error::OutOfRange { what: "weight", value: bad });
            }
            w.to_vec()
        }
        None => vec![1.0; n],
    };
    if !(w.iter().sum::<f64>() > 0.0) {
        return Err(Error::InvalidSpec("weights sum to zero".into()));
    }
    Ok(w)
}

/// Weighted log-likelihood pieces at one coefficient vector.
struct Evaluation {
    deviance: f64,
    gradient: Vec<f64>,
    /// Upper triangle stored densely, `cols × cols`.
    hessian: Vec<f64>,
}

fn linear_predictors(design: &DesignMatrix, beta: &[f64], offset: Option<&[f64]>) -> Vec<f64> {
    (0..design.rows())
        .map(|i| {
            let row = design.row(i);
            let mut eta: f64 = row.iter().zip(beta).map(|(x, b)| x * b).sum();
            if let Some(o) = offset {
                eta += o[i];
            }
            eta
        })
        .collect()
}

fn deviance(eta: &[f64], y: &[bool], w: &[f64]) -> f64 {
    let ll: f64 = eta
        .iter()
        .zip(y)
        .zip(w)
        .filter(|(_, &w)| w > 0.0)
        .map(|((&e, &y), &w)| w * (if y { e } else { 0.0 } - softplus(e)))
        .sum();
    -2.0 * ll
}

fn evaluate(design: &DesignMatrix, y: &[bool], w: &[f64], eta: &[f64], with_hessian: bool) -> Evaluation {
    let k = design.cols();
    let mut gradient = vec![0.0; k];
    let mut hessian = if with_hessian { vec![0.0; k * k] } else { Vec::new() };
    let mut ll = 0.0;
    for i in 0..design.rows() {
        if w[i] == 0.0 {
            continue;
        }
        let row = design.row(i);
        let e = eta[i];
        let p = expit(e);
        let yi = if y[i] { 1.0 } else { 0.0 };
        ll += w[i] * (yi * e - softplus(e));
        let r = w[i] * (yi - p);
        for (g, x) in gradient.iter_mut().zip(row) {
            *g += r * x;
        }
        if with_hessian {
            let v = w[i] * p * (1.0 - p);
            for a in 0..k {
                let va = v * row[a];
                let h = &mut hessian[a * k..(a + 1) * k];
                for b in a..k {
                    h[b] += va * row[b];
                }
            }
        }
    }
    if with_hessian {
        for a in 0..k {
            for b in 0..a {
                hessian[a * k + b] = hessian[b * k + a];
            }
        }
    }
    Evaluation { deviance: -2.0 * ll, gradient, hessian }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn solve_spd(matrix: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let k = rhs.len();
    let m = DMatrix::from_row_slice(k, k, matrix);
    let chol = m.cholesky().ok_or(Error::Singular)?;
    let x = chol.solve(&DVector::from_column_slice(rhs));
    if x.iter().all(|v| v.is_finite()) {
        Ok(x.iter().copied().collect())
    } else {
        Err(Error::Singular)
    }
}

/// Column means and standard deviations of the design (intercept excluded),
/// used to put coefficients on a common scale for the separation check.
fn design_moments(design: &DesignMatrix, w: Option<&[f64]>) -> Vec<(f64, f64)> {
    (1..design.cols()).map(|j| column_moments((0..design.rows()).map(|i| design.value(i, j)), w)).collect()
}

fn separation_check(design: &DesignMatrix, beta: &[f64], moments: &[(f64, f64)], bound: f64) -> Result<()> {
    let mut centred_intercept = beta[0];
    for (j, &(mean, sd)) in moments.iter().enumerate() {
        let b = beta[j + 1];
        centred_intercept += b * mean;
        let magnitude = (b * sd).abs();
        if magnitude > bound {
            return Err(Error::Separation { column: design.column_name(j + 1), magnitude });
        }
    }
    if centred_intercept.abs() > bound {
        return Err(Error::Separation { column: design.column_name(0), magnitude: centred_intercept.abs() });
    }
    Ok(())
}

/// Weighted maximum-likelihood logistic regression.
pub fn fit_logistic(design: &DesignMatrix, outcome: &[bool], weights: Option<&[f64]>) -> Result<FittedModel> {
    fit_logistic_with(design, outcome, weights, None, &IrlsOptions::default())
}

/// IRLS with an optional fixed offset added to the linear predictor.
pub fn fit_logistic_with(
    design: &DesignMatrix,
    outcome: &[bool],
    weights: Option<&[f64]>,
    offset: Option<&[f64]>,
    opts: &IrlsOptions,
) -> Result<FittedModel> {
    let w = check_inputs(design, outcome, weights, offset)?;
    let k = design.cols();
    let moments = design_moments(design, None);

    let mut beta = vec![0.0; k];
    // start the intercept at the (weighted) log-odds when no offset is present
    if offset.is_none() {
        let sw: f64 = w.iter().sum();
        let sy: f64 = w.iter().zip(outcome).filter(|(_, &y)| y).map(|(w, _)| w).sum();
        let ybar = (sy / sw).clamp(1e-6, 1.0 - 1e-6);
        beta[0] = logit(ybar);
    }
    let mut eta = linear_predictors(design, &beta, offset);
    let mut current = evaluate(design, outcome, &w, &eta, true);
    let mut trace = vec![current.deviance];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iterations {
        iterations += 1;
        let step = solve_spd(&current.hessian, &current.gradient)?;
        let step_size = max_abs(&step);
        if step_size < opts.tolerance {
            for (b, s) in beta.iter_mut().zip(&step) {
                *b += s;
            }
            eta = linear_predictors(design, &beta, offset);
            current = evaluate(design, outcome, &w, &eta, true);
            trace.push(current.deviance);
            converged = true;
            break;
        }
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let candidate: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + scale * s).collect();
            let cand_eta = linear_predictors(design, &candidate, offset);
            let dev = deviance(&cand_eta, outcome, &w);
            // allow rounding-level increases so the final Newton steps are taken
            if dev.is_finite() && dev <= current.deviance + 1e-12 * (1.0 + current.deviance.abs()) {
                accepted = Some((candidate, cand_eta));
                break;
            }
            scale *= 0.5;
        }
        let Some((candidate, cand_eta)) = accepted else {
            // no descent possible along the Newton direction: at the numerical optimum
            // only if the score is negligible
            if norm(&current.gradient) < 1e-6 * (1.0 + current.deviance.abs()) {
                converged = true;
                break;
            }
            return Err(Error::NonConvergence { iterations });
        };
        separation_check(design, &candidate, &moments, opts.separation_bound)?;
        let moved = scale * step_size;
        beta = candidate;
        eta = cand_eta;
        current = evaluate(design, outcome, &w, &eta, true);
        trace.push(current.deviance);
        if moved < opts.tolerance && scale == 1.0 {
            converged = true;
            break;
        }
    }
    if !converged {
        separation_check(design, &beta, &moments, opts.separation_bound)?;
        return Err(Error::NonConvergence { iterations });
    }
    separation_check(design, &beta, &moments, opts.separation_bound)?;
    Ok(FittedModel {
        coefficients: beta,
        feature_names: design.feature_names().to_vec(),
        standardization: design.standardization().to_vec(),
        converged,
        iterations,
        deviance: current.deviance,
        gradient_norm: norm(&current.gradient),
        training_meta: TrainingMeta {
            variant: String::new(),
            weights: if weights.is_some() { "weighted".into() } else { "unweighted".into() },
            penalty: None,
        },
        deviance_trace: trace,
    })
}

/// Weighted score vector `X'W(y - p)` of a model on a design.
pub fn score_vector(
    model: &FittedModel,
    design: &DesignMatrix,
    outcome: &[bool],
    weights: Option<&[f64]>,
) -> Result<Vec<f64>> {
    let w = check_inputs(design, outcome, weights, None)?;
    if model.coefficients.len() != design.cols() {
        return Err(Error::LengthMismatch { expected: design.cols(), found: model.coefficients.len() });
    }
    let eta = linear_predictors(design, &model.coefficients, None);
    Ok(evaluate(design, outcome, &w, &eta, false).gradient)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoOptions {
    pub max_outer: usize,
    pub max_sweeps: usize,
    pub tolerance: f64,
    pub separation_bound: f64,
}

impl Default for LassoOptions {
    fn default() -> Self {
        Self { max_outer: 200, max_sweeps: 10_000, tolerance: 1e-10, separation_bound: 30.0 }
    }
}

/// Internal standardized view of a design for penalized fitting.
struct Standardized {
    /// `(mean, sd)` per non-intercept design column; sd 0 marks a constant column.
    moments: Vec<(f64, f64)>,
    values: Vec<f64>,
    cols: usize,
}

impl Standardized {
    fn new(design: &DesignMatrix, w: &[f64]) -> Self {
        let moments = design_moments(design, Some(w));
        let cols = design.cols();
        let mut values = Vec::with_capacity(design.rows() * cols);
        for i in 0..design.rows() {
            values.push(1.0);
            for (j, &(mean, sd)) in moments.iter().enumerate() {
                values.push(if sd > 0.0 { (design.value(i, j + 1) - mean) / sd } else { 0.0 });
            }
        }
        Self { moments, values, cols }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    fn to_design_scale(&self, beta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; beta.len()];
        out[0] = beta[0];
        for (j, &(mean, sd)) in self.moments.iter().enumerate() {
            if sd > 0.0 {
                out[j + 1] = beta[j + 1] / sd;
                out[0] -= beta[j + 1] * mean / sd;
            }
        }
        out
    }

    fn to_raw_scale(&self, beta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; beta.len()];
        out[0] = beta[0];
        for (j, &(mean, sd)) in self.moments.iter().enumerate() {
            out[j + 1] = beta[j + 1] * sd;
            out[0] += beta[j + 1] * mean;
        }
        out
    }
}

/// Mean log-likelihood terms on the standardized scale: `(loss, score, hessian)`
/// where `loss = -(1/W) Σ w ℓ`, `score = (1/W) Σ w z (y - p)` and
/// `hessian = (1/W) Σ w p(1-p) z z'`.
fn penalized_pieces(
    std: &Standardized,
    y: &[bool],
    w: &[f64],
    sw: f64,
    beta: &[f64],
    with_hessian: bool,
) -> (f64, Vec<f64>, Vec<f64>) {
    let k = std.cols;
    let mut score = vec![0.0; k];
    let mut hessian = if with_hessian { vec![0.0; k * k] } else { Vec::new() };
    let mut ll = 0.0;
    for (i, &wi) in w.iter().enumerate() {
        if wi == 0.0 {
            continue;
        }
        let row = std.row(i);
        let eta: f64 = row.iter().zip(beta).map(|(x, b)| x * b).sum();
        let p = expit(eta);
        let yi = if y[i] { 1.0 } else { 0.0 };
        ll += wi * (yi * eta - softplus(eta));
        let r = wi * (yi - p);
        for (s, x) in score.iter_mut().zip(row) {
            *s += r * x;
        }
        if with_hessian {
            let v = wi * p * (1.0 - p);
            for a in 0..k {
                let va = v * row[a];
                for b in a..k {
                    hessian[a * k + b] += va * row[b];
                }
            }
        }
    }
    for s in &mut score {
        *s /= sw;
    }
    if with_hessian {
        for a in 0..k {
            for b in a..k {
                hessian[a * k + b] /= sw;
                hessian[b * k + a] = hessian[a * k + b];
            }
        }
    }
    (-ll / sw, score, hessian)
}

fn soft_threshold(x: f64, lambda: f64) -> f64 {
    if x > lambda {
        x - lambda
    } else if x < -lambda {
        x + lambda
    } else {
        0.0
    }
}

fn l1(beta: &[f64]) -> f64 {
    beta[1..].iter().map(|b| b.abs()).sum()
}

/// Smallest penalty at which every non-intercept coefficient is zero.
pub fn lasso_penalty_max(design: &DesignMatrix, outcome: &[bool], weights: Option<&[f64]>) -> Result<f64> {
    let w = check_inputs(design, outcome, weights, None)?;
    let sw: f64 = w.iter().sum();
    let std = Standardized::new(design, &w);
    let sy: f64 = w.iter().zip(outcome).filter(|(_, &y)| y).map(|(w, _)| w).sum();
    let ybar = sy / sw;
    if ybar <= 0.0 || ybar >= 1.0 {
        return Err(Error::SingleClass("outcome".into()));
    }
    let mut beta = vec![0.0; design.cols()];
    beta[0] = logit(ybar);
    let (_, score, _) = penalized_pieces(&std, outcome, &w, sw, &beta, false);
    Ok(max_abs(&score[1..]))
}

/// L1-penalized logistic regression.
///
/// The objective is `-(1/W) Σ w_i ℓ_i + penalty · Σ_j |β_j|` with features
/// standardized internally (weighted mean 0, variance 1) and the intercept
/// unpenalized. Returned coefficients are on the design's own scale.
pub fn fit_lasso_logistic(
    design: &DesignMatrix,
    outcome: &[bool],
    penalty: f64,
    weights: Option<&[f64]>,
) -> Result<FittedModel> {
    fit_lasso_logistic_with(design, outcome, penalty, weights, &LassoOptions::default())
}

pub fn fit_lasso_logistic_with(
    design: &DesignMatrix,
    outcome: &[bool],
    penalty: f64,
    weights: Option<&[f64]>,
    opts: &LassoOptions,
) -> Result<FittedModel> {
    if !(penalty.is_finite() && penalty >= 0.0) {
        return Err(Error::OutOfRange { what: "penalty", value: penalty });
    }
    let w = check_inputs(design, outcome, weights, None)?;
    let sw: f64 = w.iter().sum();
    let k = design.cols();
    let std = Standardized::new(design, &w);
    let active_cols: Vec<bool> = std::iter::once(true).chain(std.moments.iter().map(|&(_, sd)| sd > 0.0)).collect();

    let sy: f64 = w.iter().zip(outcome).filter(|(_, &y)| y).map(|(w, _)| w).sum();
    let ybar = (sy / sw).clamp(1e-6, 1.0 - 1e-6);
    let mut beta = vec![0.0; k];
    beta[0] = logit(ybar);
    let unit_moments: Vec<(f64, f64)> = vec![(0.0, 1.0); k - 1];

    let (mut loss, mut score, mut hessian) = penalized_pieces(&std, outcome, &w, sw, &beta, true);
    let mut objective = loss + penalty * l1(&beta);
    let mut trace = vec![2.0 * sw * loss];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_outer {
        iterations += 1;
        // coordinate descent on the local quadratic model; `grad` tracks the
        // gradient of the quadratic (loss part) at `b`
        let mut b = beta.clone();
        let mut grad: Vec<f64> = score.iter().map(|s| -s).collect();
        let mut sweeps = 0;
        loop {
            sweeps += 1;
            let mut largest = 0.0f64;
            for j in 0..k {
                if !active_cols[j] {
                    continue;
                }
                let hjj = hessian[j * k + j];
                if hjj <= 0.0 {
                    continue;
                }
                let u = hjj * b[j] - grad[j];
                let new = if j == 0 { u / hjj } else { soft_threshold(u, penalty) / hjj };
                let delta = new - b[j];
                if delta != 0.0 {
                    b[j] = new;
                    for (g, h) in grad.iter_mut().zip(&hessian[j * k..(j + 1) * k]) {
                        *g += h * delta;
                    }
                    largest = largest.max(delta.abs());
                }
            }
            if largest < opts.tolerance * 1e-3 || sweeps >= opts.max_sweeps {
                break;
            }
        }
        let direction: Vec<f64> = b.iter().zip(&beta).map(|(n, o)| n - o).collect();
        let step_size = max_abs(&direction);
        if step_size == 0.0 {
            converged = true;
            break;
        }
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let candidate: Vec<f64> = beta.iter().zip(&direction).map(|(o, d)| o + scale * d).collect();
            let (cand_loss, _, _) = penalized_pieces(&std, outcome, &w, sw, &candidate, false);
            let cand_obj = cand_loss + penalty * l1(&candidate);
            if cand_obj.is_finite() && cand_obj <= objective + 1e-15 * objective.abs().max(1.0) {
                beta = candidate;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            // the quadratic step cannot improve the objective: treat as optimal
            converged = true;
            break;
        }
        separation_check(design, &beta, &unit_moments, opts.separation_bound)?;
        let pieces = penalized_pieces(&std, outcome, &w, sw, &beta, true);
        loss = pieces.0;
        score = pieces.1;
        hessian = pieces.2;
        objective = loss + penalty * l1(&beta);
        trace.push(2.0 * sw * loss);
        if scale * step_size < opts.tolerance {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence { iterations });
    }
    Ok(FittedModel {
        coefficients: std.to_design_scale(&beta),
        feature_names: design.feature_names().to_vec(),
        standardization: design.standardization().to_vec(),
        converged,
        iterations,
        deviance: 2.0 * sw * loss,
        gradient_norm: norm(&score) * sw,
        training_meta: TrainingMeta {
            variant: "lasso".into(),
            weights: if weights.is_some() { "weighted".into() } else { "unweighted".into() },
            penalty: Some(penalty),
        },
        deviance_trace: trace,
    })
}

/// Largest violation of the LASSO optimality conditions on the standardized
/// scale. Zero coefficients need `|score_j| ≤ penalty`; active ones need
/// `score_j = penalty · sign(β_j)`; the intercept needs `score_0 = 0`. Here
/// `score` is the gradient of the mean weighted log-likelihood.
pub fn lasso_kkt_residual(
    model: &FittedModel,
    design: &DesignMatrix,
    outcome: &[bool],
    weights: Option<&[f64]>,
    penalty: f64,
) -> Result<f64> {
    let w = check_inputs(design, outcome, weights, None)?;
    if model.coefficients.len() != design.cols() {
        return Err(Error::LengthMismatch { expected: design.cols(), found: model.coefficients.len() });
    }
    let sw: f64 = w.iter().sum();
    let std = Standardized::new(design, &w);
    let beta = std.to_raw_scale(&model.coefficients);
    let (_, score, _) = penalized_pieces(&std, outcome, &w, sw, &beta, false);
    let mut worst = score[0].abs();
    for j in 1..beta.len() {
        if std.moments[j - 1].1 == 0.0 {
            continue;
        }
        let r = if beta[j] == 0.0 {
            (score[j].abs() - penalty).max(0.0)
        } else {
            (score[j] - penalty * beta[j].signum()).abs()
        };
        worst = worst.max(r);
    }
    Ok(worst)
}

/// Result of k-fold penalty selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltySelection {
    pub penalty: f64,
    /// `(penalty, mean held-out deviance per weight unit)` for each grid value.
    pub curve: Vec<(f64, f64)>,
}

/// Chooses the penalty minimising mean held-out weighted deviance over
/// `folds` deterministic folds.
pub fn select_penalty_cv(
    design: &DesignMatrix,
    outcome: &[bool],
    weights: Option<&[f64]>,
    grid: &[f64],
    folds: usize,
    seed: u64,
) -> Result<PenaltySelection> {
    let w = check_inputs(design, outcome, weights, None)?;
    if grid.is_empty() {
        return Err(Error::EmptyInput("penalty grid"));
    }
    if folds < 2 || folds > design.rows() {
        return Err(Error::InvalidSpec(format!("cannot split {} rows into {folds} folds", design.rows())));
    }
    let mut order: Vec<usize> = (0..design.rows()).collect();
    order.shuffle(&mut rng::stream(seed, 0));
    let fold_of: Vec<usize> = {
        let mut f = vec![0; design.rows()];
        for (pos, &row) in order.iter().enumerate() {
            f[row] = pos % folds;
        }
        f
    };
    let mut curve = Vec::with_capacity(grid.len());
    for &penalty in grid {
        let mut total_dev = 0.0;
        let mut total_w = 0.0;
        for fold in 0..folds {
            let train: Vec<usize> = (0..design.rows()).filter(|&i| fold_of[i] != fold).collect();
            let test: Vec<usize> = (0..design.rows()).filter(|&i| fold_of[i] == fold).collect();
            let train_design = design.subset(&train);
            let train_y: Vec<bool> = train.iter().map(|&i| outcome[i]).collect();
            let train_w: Vec<f64> = train.iter().map(|&i| w[i]).collect();
            let model = fit_lasso_logistic(&train_design, &train_y, penalty, Some(&train_w))?;
            for &i in &test {
                let eta: f64 = design.row(i).iter().zip(&model.coefficients).map(|(x, b)| x * b).sum();
                let yi = if outcome[i] { eta } else { 0.0 };
                total_dev += -2.0 * w[i] * (yi - softplus(eta));
                total_w += w[i];
            }
        }
        curve.push((penalty, total_dev / total_w));
    }
    let best = curve.iter().min_by(|a, b| a.1.total_cmp(&b.1)).map(|c| c.0).expect("non-empty grid");
    Ok(PenaltySelection { penalty: best, curve })
}
