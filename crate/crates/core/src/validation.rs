//! Discrimination, calibration and bootstrap machinery.
//!
//! Bootstrap replicates run as a parallel map over replicate indices. Each
//! replicate draws from its own random stream derived from `(seed, index)`
//! and results are reduced in index order, so output does not depend on the
//! number of worker threads.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::Cohort;
use crate::error::{Error, Result};
use crate::glm::{self, expit, DesignMatrix};
use crate::policy::{self, BenefitParams, GroupThresholds, PolicySpec};
use crate::rng;

/// Anything that produces a linear predictor (log-odds) per cohort row.
pub trait Predictor: Send + Sync {
    fn linear_predictors(&self, cohort: &Cohort) -> Result<Vec<f64>>;

    fn probabilities(&self, cohort: &Cohort) -> Result<Vec<f64>> {
        Ok(self.linear_predictors(cohort)?.into_iter().map(expit).collect())
    }
}

/// A deterministic model-building recipe.
pub trait Trainer: Sync {
    type Model: Predictor;

    fn train(&self, cohort: &Cohort) -> Result<Self::Model>;
}

impl<F, M> Trainer for F
where
    F: Fn(&Cohort) -> Result<M> + Sync,
    M: Predictor,
{
    type Model = M;

    fn train(&self, cohort: &Cohort) -> Result<M> {
        self(cohort)
    }
}

fn check_binary(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("scores"));
    }
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch { expected: scores.len(), found: labels.len() });
    }
    if let Some(&s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::OutOfRange { what: "score", value: s });
    }
    let pos = labels.iter().filter(|&&y| y).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::SingleClass("outcome".into()));
    }
    Ok((pos, labels.len() - pos))
}

/// Probability that a random case scores above a random non-case, ties
/// counting one half. Computed from mid-ranks in `O(n log n)`.
pub fn c_statistic(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check_binary(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // ranks start+1..=end share their mean
        let mid_rank = (start + 1 + end) as f64 / 2.0;
        let block_pos = order[start..end].iter().filter(|&&i| labels[i]).count();
        rank_sum += mid_rank * block_pos as f64;
        start = end;
    }
    let u = rank_sum - (pos as f64) * (pos as f64 + 1.0) / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

/// Recalibration of outcomes on a model's linear predictor: the slope from
/// `logit P(y) = a + b·lp` and the intercept from `logit P(y) = a + lp`.
pub fn calibration_slope_intercept(lp: &[f64], labels: &[bool]) -> Result<(f64, f64)> {
    check_binary(lp, labels)?;
    let n = lp.len();
    let design = DesignMatrix::new(n, lp, vec!["lp".into()], false)?;
    let slope = glm::fit_logistic(&design, labels, None)?.coefficients[1];
    let intercept_only = DesignMatrix::new(n, &[], vec![], false)?;
    let intercept =
        glm::fit_logistic_with(&intercept_only, labels, None, Some(lp), &glm::IrlsOptions::default())?.coefficients[0];
    Ok((slope, intercept))
}

/// How bootstrap samples are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resampling {
    /// Rows drawn with replacement from the whole cohort.
    #[default]
    Nonparametric,
    /// Rows drawn with replacement within each subgroup, keeping group sizes.
    StratifiedByGroup,
    /// The original rows, unchanged (degenerate; for checks).
    Identity,
}

impl Resampling {
    pub fn draw<R: Rng>(&self, cohort: &Cohort, rng: &mut R) -> Vec<usize> {
        let n = cohort.len();
        match self {
            Resampling::Identity => (0..n).collect(),
            Resampling::Nonparametric => (0..n).map(|_| rng.random_range(0..n)).collect(),
            Resampling::StratifiedByGroup => {
                let mut members: Vec<Vec<usize>> = vec![Vec::new(); cohort.groups().levels().len()];
                for (i, &g) in cohort.groups().index().iter().enumerate() {
                    members[g].push(i);
                }
                let mut rows = Vec::with_capacity(n);
                for group in members.iter().filter(|m| !m.is_empty()) {
                    rows.extend((0..group.len()).map(|_| group[rng.random_range(0..group.len())]));
                }
                rows
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOptions {
    pub replicates: usize,
    pub seed: u64,
    pub resampling: Resampling,
    /// Worker threads; `None` uses the global rayon pool.
    pub workers: Option<usize>,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        Self { replicates: 500, seed: 20240601, resampling: Resampling::Nonparametric, workers: None }
    }
}

/// Replicates evaluated between reductions in [`optimism_engine`].
const REDUCTION_CHUNK: usize = 64;

/// Fewer replicates than this give intervals flagged as unreliable.
pub const MIN_REPORTING_REPLICATES: usize = 100;

fn run_parallel<T: Send>(workers: Option<usize>, job: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(job()),
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w.max(1))
                .build()
                .map_err(|e| Error::InvalidSpec(format!("thread pool: {e}")))?;
            Ok(pool.install(job))
        }
    }
}

fn check_skips(skipped: usize, total: usize) -> Result<()> {
    if skipped * 10 > total {
        Err(Error::TooManySkips { skipped, total })
    } else {
        Ok(())
    }
}

/// Result of bootstrap optimism correction for a vector of metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimismOutcome {
    pub apparent: Vec<Option<f64>>,
    /// Mean over usable replicates of (metric on bootstrap sample − metric on original data).
    pub optimism: Vec<Option<f64>>,
    pub corrected: Vec<Option<f64>>,
    /// Replicates contributing to each metric.
    pub used: Vec<usize>,
    pub replicates: usize,
    pub skipped: usize,
}

/// Bootstrap optimism correction for arbitrary metrics.
///
/// `evaluate` maps a trained model and a cohort to a fixed-length metric
/// vector; `None` marks a metric that is undefined on that cohort (for
/// example a subgroup missing from a resample), which drops only that metric
/// from the replicate. A replicate whose training or evaluation fails is
/// skipped entirely; more than 10% skipped replicates is an error.
pub fn optimism_engine<T, E>(
    cohort: &Cohort,
    trainer: &T,
    evaluate: E,
    opts: &BootstrapOptions,
) -> Result<OptimismOutcome>
where
    T: Trainer,
    E: Fn(&T::Model, &Cohort) -> Result<Vec<Option<f64>>> + Sync,
{
    if opts.replicates == 0 {
        return Err(Error::InvalidSpec("at least one bootstrap replicate is required".into()));
    }
    let model = trainer.train(cohort)?;
    let apparent = evaluate(&model, cohort)?;
    let k = apparent.len();

    let replicate = |b: usize| -> Option<Vec<Option<f64>>> {
        let mut rng = rng::stream(opts.seed, b as u64);
        let rows = opts.resampling.draw(cohort, &mut rng);
        let sample = cohort.subset(&rows);
        let model = trainer.train(&sample).ok()?;
        let on_sample = evaluate(&model, &sample).ok()?;
        let on_original = evaluate(&model, cohort).ok()?;
        if on_sample.len() != k || on_original.len() != k {
            return None;
        }
        Some(on_sample.iter().zip(&on_original).map(|(s, o)| Some(s.as_ref()? - o.as_ref()?)).collect())
    };
    // replicates are reduced chunk by chunk in index order: bounded memory, same sums
    let mut sums = vec![0.0; k];
    let mut used = vec![0usize; k];
    let mut skipped = 0;
    run_parallel(opts.workers, || {
        let mut start = 0;
        while start < opts.replicates {
            let end = (start + REDUCTION_CHUNK).min(opts.replicates);
            let chunk: Vec<Option<Vec<Option<f64>>>> = (start..end).into_par_iter().map(replicate).collect();
            for r in chunk {
                let Some(r) = r else {
                    skipped += 1;
                    continue;
                };
                for (j, v) in r.iter().enumerate() {
                    if let Some(v) = v {
                        sums[j] += v;
                        used[j] += 1;
                    }
                }
            }
            start = end;
        }
    })?;
    check_skips(skipped, opts.replicates)?;
    let optimism: Vec<Option<f64>> = sums.iter().zip(&used).map(|(&s, &u)| (u > 0).then(|| s / u as f64)).collect();
    let corrected = apparent
        .iter()
        .zip(&optimism)
        .map(|(a, o)| match (a, o) {
            (Some(a), Some(o)) => Some(a - o),
            _ => None,
        })
        .collect();
    Ok(OptimismOutcome { apparent, optimism, corrected, used, replicates: opts.replicates, skipped })
}

/// Bootstrap percentile interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub replicates_used: usize,
    /// False when fewer than [`MIN_REPORTING_REPLICATES`] replicates were used.
    pub reliable: bool,
    pub method: String,
}

pub const PERCENTILE_METHOD: &str = "percentile bootstrap (nonparametric row resampling)";

/// Linear-interpolation quantile of sorted data (R type 7).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn percentile_interval(mut values: Vec<f64>, level: f64, method: &str) -> Result<Interval> {
    if values.is_empty() {
        return Err(Error::EmptyInput("no bootstrap values for interval"));
    }
    values.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    Ok(Interval {
        lower: quantile_sorted(&values, alpha),
        upper: quantile_sorted(&values, 1.0 - alpha),
        level,
        replicates_used: values.len(),
        reliable: values.len() >= MIN_REPORTING_REPLICATES,
        method: method.to_string(),
    })
}

/// Percentile intervals for several statistics from a shared set of resamples.
pub fn bootstrap_intervals<S>(
    statistic: S,
    cohort: &Cohort,
    opts: &BootstrapOptions,
    level: f64,
) -> Result<Vec<Option<Interval>>>
where
    S: Fn(&Cohort) -> Result<Vec<Option<f64>>> + Sync,
{
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::OutOfRange { what: "confidence level", value: level });
    }
    if opts.replicates == 0 {
        return Err(Error::InvalidSpec("at least one bootstrap replicate is required".into()));
    }
    let replicate = |b: usize| -> Option<Vec<Option<f64>>> {
        let mut rng = rng::stream(opts.seed, b as u64);
        let rows = opts.resampling.draw(cohort, &mut rng);
        statistic(&cohort.subset(&rows)).ok()
    };
    let results: Vec<Option<Vec<Option<f64>>>> =
        run_parallel(opts.workers, || (0..opts.replicates).into_par_iter().map(replicate).collect())?;
    let skipped = results.iter().filter(|r| r.is_none()).count();
    check_skips(skipped, opts.replicates)?;
    let k = results.iter().flatten().map(|r| r.len()).max().unwrap_or(0);
    let method = match opts.resampling {
        Resampling::StratifiedByGroup => "percentile bootstrap (resampling stratified by group)",
        _ => PERCENTILE_METHOD,
    };
    (0..k)
        .map(|j| {
            let values: Vec<f64> = results.iter().flatten().filter_map(|r| r.get(j).copied().flatten()).collect();
            if values.is_empty() {
                Ok(None)
            } else {
                percentile_interval(values, level, method).map(Some)
            }
        })
        .collect()
}

/// Percentile interval of a scalar statistic over row resamples.
pub fn bootstrap_ci<S>(statistic: S, cohort: &Cohort, opts: &BootstrapOptions, level: f64) -> Result<Interval>
where
    S: Fn(&Cohort) -> Result<f64> + Sync,
{
    bootstrap_intervals(|c| Ok(vec![Some(statistic(c)?)]), cohort, opts, level)?
        .pop()
        .flatten()
        .ok_or(Error::EmptyInput("no bootstrap values for interval"))
}

/// Discrimination and calibration within one subgroup (undefined values are
/// `None`, e.g. a group with a single outcome class).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupPerformance {
    pub c_statistic: Option<f64>,
    pub calibration_slope: Option<f64>,
    pub calibration_intercept: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub c_statistic: f64,
    pub calibration_slope: f64,
    pub calibration_intercept: f64,
    pub snb_by_group: BTreeMap<String, f64>,
    pub overall_snb: f64,
    pub by_group: BTreeMap<String, GroupPerformance>,
}

/// Settings for the sNB part of a [`MetricSet`]: the model is applied as a
/// threshold policy with the given per-group cutoffs.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricContext {
    pub params: BenefitParams,
    pub thresholds: GroupThresholds,
    pub groups: Vec<String>,
}

impl MetricContext {
    pub fn new(params: BenefitParams, thresholds: GroupThresholds, cohort: &Cohort) -> Self {
        Self { params, thresholds, groups: cohort.groups().levels().to_vec() }
    }

    /// Flat metric names in the order of [`MetricContext::flatten`].
    pub fn names(&self) -> Vec<String> {
        let mut names = vec![
            "c_statistic".into(),
            "calibration_slope".into(),
            "calibration_intercept".into(),
            "overall_snb".into(),
        ];
        for g in &self.groups {
            names.push(format!("snb[{g}]"));
            names.push(format!("c_statistic[{g}]"));
            names.push(format!("calibration_slope[{g}]"));
            names.push(format!("calibration_intercept[{g}]"));
        }
        names
    }

    /// Metric vector of model linear predictors `lp` on `cohort`.
    pub fn flatten(&self, lp: &[f64], cohort: &Cohort) -> Result<Vec<Option<f64>>> {
        let labels = cohort.outcome();
        let scores: Vec<f64> = lp.iter().map(|&v| expit(v)).collect();
        let (slope, intercept) = calibration_slope_intercept(lp, labels)?;
        let policy = PolicySpec::Threshold { thresholds: self.thresholds.clone() };
        let report = policy::evaluate_policy(&policy, &scores, labels, cohort.groups(), &self.params)?;
        let mut out = vec![Some(c_statistic(&scores, labels)?), Some(slope), Some(intercept), Some(report.overall_snb)];

        let mut members: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for i in 0..cohort.len() {
            members.entry(cohort.group_label(i)).or_default().push(i);
        }
        for g in &self.groups {
            let snb = report.per_group.iter().find(|s| &s.group_id == g).map(|s| s.snb);
            out.push(snb);
            match members.get(g.as_str()) {
                Some(rows) => {
                    let glp: Vec<f64> = rows.iter().map(|&i| lp[i]).collect();
                    let gy: Vec<bool> = rows.iter().map(|&i| labels[i]).collect();
                    out.push(c_statistic(&glp, &gy).ok());
                    match calibration_slope_intercept(&glp, &gy) {
                        Ok((s, i)) => {
                            out.push(Some(s));
                            out.push(Some(i));
                        }
                        Err(_) => {
                            out.push(None);
                            out.push(None);
                        }
                    }
                }
                None => out.extend([None, None, None]),
            }
        }
        Ok(out)
    }

    /// Inverse of [`MetricContext::flatten`]; missing overall values become NaN.
    pub fn unflatten(&self, values: &[Option<f64>]) -> MetricSet {
        let get = |j: usize| values.get(j).copied().flatten();
        let mut snb_by_group = BTreeMap::new();
        let mut by_group = BTreeMap::new();
        for (k, g) in self.groups.iter().enumerate() {
            let base = 4 + 4 * k;
            if let Some(v) = get(base) {
                snb_by_group.insert(g.clone(), v);
            }
            by_group.insert(
                g.clone(),
                GroupPerformance {
                    c_statistic: get(base + 1),
                    calibration_slope: get(base + 2),
                    calibration_intercept: get(base + 3),
                },
            );
        }
        MetricSet {
            c_statistic: get(0).unwrap_or(f64::NAN),
            calibration_slope: get(1).unwrap_or(f64::NAN),
            calibration_intercept: get(2).unwrap_or(f64::NAN),
            overall_snb: get(3).unwrap_or(f64::NAN),
            snb_by_group,
            by_group,
        }
    }
}

/// Apparent, optimism and optimism-corrected metric sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimismReport {
    pub apparent: MetricSet,
    pub optimism: MetricSet,
    pub corrected: MetricSet,
    pub replicates: usize,
    pub skipped: usize,
    pub names: Vec<String>,
    pub used: Vec<usize>,
}

/// Optimism-corrected discrimination, calibration and sNB of a trained recipe.
pub fn optimism_corrected<T: Trainer>(
    cohort: &Cohort,
    trainer: &T,
    context: &MetricContext,
    opts: &BootstrapOptions,
) -> Result<OptimismReport> {
    let outcome = optimism_engine(
        cohort,
        trainer,
        |model: &T::Model, data: &Cohort| {
            let lp = model.linear_predictors(data)?;
            context.flatten(&lp, data)
        },
        opts,
    )?;
    Ok(OptimismReport {
        apparent: context.unflatten(&outcome.apparent),
        optimism: context.unflatten(&outcome.optimism),
        corrected: context.unflatten(&outcome.corrected),
        replicates: outcome.replicates,
        skipped: outcome.skipped,
        names: context.names(),
        used: outcome.used,
    })
}
