//! Treatment policies, their subgroup evaluation, and Pareto search over
//! group-specific thresholds under a capacity limit.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, GroupLabels};
use crate::error::{Error, Result};
use crate::glm::expit;
use crate::metrics::{aggregate_snb, ConfusionCounts, GroupSummary, ScoreIndex};
use crate::rng;
use crate::validation::{optimism_engine, BootstrapOptions, Predictor, Trainer};

/// Upper bound on candidates produced by [`enumerate_full_grid`].
pub const MAX_CANDIDATES: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RandomMode {
    /// Deterministic expected counts: a fraction `p` of each cell is flagged.
    #[default]
    Expected,
    /// Each individual flagged independently with probability `p`.
    Sampled { seed: u64 },
}

/// Classification cutoffs, either shared or keyed by group label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GroupThresholds {
    Uniform(f64),
    PerGroup(BTreeMap<String, f64>),
}

impl GroupThresholds {
    pub fn for_group(&self, group: &str) -> Result<f64> {
        match self {
            GroupThresholds::Uniform(t) => Ok(*t),
            GroupThresholds::PerGroup(map) => {
                map.get(group).copied().ok_or_else(|| Error::UnknownGroup(group.to_string()))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicySpec {
    TreatNone,
    TreatAll,
    RandomFraction {
        p: f64,
        #[serde(default)]
        mode: RandomMode,
    },
    /// Flag individuals whose score is strictly above their group's cutoff.
    Threshold {
        thresholds: GroupThresholds,
    },
}

fn pct(x: f64) -> String {
    format!("{}%", (x * 100.0 * 1e6).round() / 1e6)
}

impl PolicySpec {
    pub fn label(&self) -> String {
        match self {
            PolicySpec::TreatNone => "Treat.No.One".into(),
            PolicySpec::TreatAll => "Treat.All".into(),
            PolicySpec::RandomFraction { p, .. } => format!("Random {}", pct(*p)),
            PolicySpec::Threshold { thresholds: GroupThresholds::Uniform(t) } => format!("Threshold {}", pct(*t)),
            PolicySpec::Threshold { thresholds: GroupThresholds::PerGroup(map) } => {
                let parts: Vec<String> = map.iter().map(|(g, t)| format!("{g}={}", pct(*t))).collect();
                format!("Thresholds {}", parts.join(", "))
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |what, t: f64| {
            if (0.0..=1.0).contains(&t) {
                Ok(())
            } else {
                Err(Error::OutOfRange { what, value: t })
            }
        };
        match self {
            PolicySpec::RandomFraction { p, .. } => check("random fraction", *p),
            PolicySpec::Threshold { thresholds: GroupThresholds::Uniform(t) } => check("policy threshold", *t),
            PolicySpec::Threshold { thresholds: GroupThresholds::PerGroup(map) } => {
                map.values().try_for_each(|&t| check("policy threshold", t))
            }
            _ => Ok(()),
        }
    }
}

/// Which threshold's odds weigh false positives in sNB.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HarmWeight {
    /// The group's clinically optimal threshold `t*`.
    #[default]
    ClinicalOptimum,
    /// The policy's own cutoff (falls back to `t*` for non-threshold policies).
    PolicyThreshold,
}

/// Per-group benefit scale `λ` and clinically optimal threshold `t*`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenefitParams {
    pub lambda: BTreeMap<String, f64>,
    pub t_star: BTreeMap<String, f64>,
    #[serde(default)]
    pub harm_weight: HarmWeight,
}

impl BenefitParams {
    pub fn uniform<S: AsRef<str>>(groups: &[S], lambda: f64, t_star: f64) -> Self {
        Self {
            lambda: groups.iter().map(|g| (g.as_ref().to_string(), lambda)).collect(),
            t_star: groups.iter().map(|g| (g.as_ref().to_string(), t_star)).collect(),
            harm_weight: HarmWeight::ClinicalOptimum,
        }
    }

    pub fn with_harm_weight(mut self, harm_weight: HarmWeight) -> Self {
        self.harm_weight = harm_weight;
        self
    }

    /// `(λ, t*)` for a group.
    pub fn lookup(&self, group: &str) -> Result<(f64, f64)> {
        let lambda = *self.lambda.get(group).ok_or_else(|| Error::UnknownGroup(group.to_string()))?;
        let t_star = *self.t_star.get(group).ok_or_else(|| Error::UnknownGroup(group.to_string()))?;
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::OutOfRange { what: "lambda", value: lambda });
        }
        Ok((lambda, t_star))
    }

    fn summarize(&self, group: &str, counts: ConfusionCounts, policy_threshold: Option<f64>) -> Result<GroupSummary> {
        let (lambda, t_star) = self.lookup(group)?;
        let harm = match (self.harm_weight, policy_threshold) {
            (HarmWeight::PolicyThreshold, Some(t)) => t,
            _ => t_star,
        };
        GroupSummary::evaluate_with_harm(group, counts, lambda, t_star, policy_threshold, harm)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub policy: String,
    pub per_group: Vec<GroupSummary>,
    pub overall_snb: f64,
    pub flagged_fraction: f64,
    pub overall_counts: ConfusionCounts,
}

impl EvaluationReport {
    pub fn snb_by_group(&self) -> BTreeMap<String, f64> {
        self.per_group.iter().map(|g| (g.group_id.clone(), g.snb)).collect()
    }

    pub fn group(&self, id: &str) -> Option<&GroupSummary> {
        self.per_group.iter().find(|g| g.group_id == id)
    }
}

fn check_inputs(scores: &[f64], labels: &[bool], groups: &GroupLabels) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("scores"));
    }
    for len in [labels.len(), groups.len()] {
        if len != scores.len() {
            return Err(Error::LengthMismatch { expected: scores.len(), found: len });
        }
    }
    if let Some(&s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(Error::OutOfRange { what: "score", value: s });
    }
    Ok(())
}

/// Expected confusion counts when a fraction `p` of a group is flagged at random.
pub fn expected_random_counts(positives: f64, negatives: f64, p: f64) -> Result<ConfusionCounts> {
    ConfusionCounts::new(p * positives, p * negatives, (1.0 - p) * positives, (1.0 - p) * negatives)
}

/// Per-row flag decisions of a policy.
fn flags(policy: &PolicySpec, scores: &[f64], groups: &GroupLabels) -> Result<Vec<bool>> {
    Ok(match policy {
        PolicySpec::TreatNone => vec![false; scores.len()],
        PolicySpec::TreatAll => vec![true; scores.len()],
        PolicySpec::RandomFraction { p, mode: RandomMode::Sampled { seed } } => {
            let mut rng = rng::stream(*seed, 0);
            (0..scores.len()).map(|_| rng.random_bool(*p)).collect()
        }
        PolicySpec::RandomFraction { mode: RandomMode::Expected, .. } => {
            return Err(Error::InvalidSpec("expected-mode random policy has no row-level flags".into()))
        }
        PolicySpec::Threshold { thresholds } => {
            let counts = groups.counts();
            let cut: Vec<f64> = groups
                .levels()
                .iter()
                .zip(&counts)
                .map(|(g, &c)| match thresholds.for_group(g) {
                    Err(_) if c == 0 => Ok(1.0),
                    other => other,
                })
                .collect::<Result<_>>()?;
            scores.iter().zip(groups.index()).map(|(&s, &g)| s > cut[g]).collect()
        }
    })
}

/// Fraction of the population a policy flags for intervention.
pub fn flagged_fraction(policy: &PolicySpec, scores: &[f64], groups: &GroupLabels) -> Result<f64> {
    policy.validate()?;
    if let PolicySpec::RandomFraction { p, mode: RandomMode::Expected } = policy {
        return Ok(*p);
    }
    let f = flags(policy, scores, groups)?;
    Ok(f.iter().filter(|&&x| x).count() as f64 / f.len() as f64)
}

/// Applies a policy and scores it per group and overall with sNB.
pub fn evaluate_policy(
    policy: &PolicySpec,
    scores: &[f64],
    labels: &[bool],
    groups: &GroupLabels,
    params: &BenefitParams,
) -> Result<EvaluationReport> {
    check_inputs(scores, labels, groups)?;
    policy.validate()?;
    let levels = groups.levels();
    let k = levels.len();
    let mut pos = vec![0u64; k];
    let mut neg = vec![0u64; k];
    for (&g, &y) in groups.index().iter().zip(labels) {
        if y {
            pos[g] += 1;
        } else {
            neg[g] += 1;
        }
    }
    let present: Vec<usize> = (0..k).filter(|&g| pos[g] + neg[g] > 0).collect();

    let per_group: Vec<GroupSummary> = match policy {
        PolicySpec::RandomFraction { p, mode: RandomMode::Expected } => present
            .iter()
            .map(|&g| params.summarize(&levels[g], expected_random_counts(pos[g] as f64, neg[g] as f64, *p)?, None))
            .collect::<Result<_>>()?,
        _ => {
            let f = flags(policy, scores, groups)?;
            let mut cells = vec![[0u64; 4]; k];
            for i in 0..scores.len() {
                let cell = match (f[i], labels[i]) {
                    (true, true) => 0,
                    (true, false) => 1,
                    (false, true) => 2,
                    (false, false) => 3,
                };
                cells[groups.index()[i]][cell] += 1;
            }
            present
                .iter()
                .map(|&g| {
                    let [tp, fp, fn_, tn] = cells[g];
                    let cutoff = match policy {
                        PolicySpec::Threshold { thresholds } => Some(thresholds.for_group(&levels[g])?),
                        _ => None,
                    };
                    params.summarize(&levels[g], ConfusionCounts::from_integers(tp, fp, fn_, tn)?, cutoff)
                })
                .collect::<Result<_>>()?
        }
    };
    let overall_counts = per_group.iter().skip(1).fold(per_group[0].counts, |acc, g| acc.merge(&g.counts));
    Ok(EvaluationReport {
        policy: policy.label(),
        overall_snb: aggregate_snb(&per_group)?,
        flagged_fraction: overall_counts.flagged() / overall_counts.n(),
        overall_counts,
        per_group,
    })
}

/// Limit on the fraction of the population that may be flagged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapacityConstraint {
    pub max_flagged_fraction: f64,
}

impl CapacityConstraint {
    pub fn new(max_flagged_fraction: f64) -> Result<Self> {
        if !(max_flagged_fraction > 0.0 && max_flagged_fraction <= 1.0) {
            return Err(Error::OutOfRange { what: "capacity", value: max_flagged_fraction });
        }
        Ok(Self { max_flagged_fraction })
    }

    pub fn admits(&self, flagged_fraction: f64) -> bool {
        flagged_fraction <= self.max_flagged_fraction
    }
}

/// Quantity traded off against overall sNB in the Pareto search.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// sNB of one group.
    TargetGroup(String),
    /// The smallest group sNB.
    Maximin,
}

impl Objective {
    fn value(&self, per_group: &[GroupSummary]) -> Option<f64> {
        match self {
            Objective::TargetGroup(g) => per_group.iter().find(|s| &s.group_id == g).map(|s| s.snb),
            Objective::Maximin => per_group.iter().map(|s| s.snb).min_by(f64::total_cmp),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub policy: String,
    pub thresholds: BTreeMap<String, f64>,
    pub overall_snb: f64,
    pub target_snb: f64,
    pub flagged_fraction: f64,
}

/// Score indexes per present group for fast repeated threshold evaluation.
#[derive(Debug, Clone)]
pub struct GroupedIndex {
    levels: Vec<String>,
    indexes: Vec<ScoreIndex>,
    n: usize,
}

impl GroupedIndex {
    pub fn new(scores: &[f64], labels: &[bool], groups: &GroupLabels) -> Result<Self> {
        check_inputs(scores, labels, groups)?;
        let k = groups.levels().len();
        let mut buckets: Vec<Vec<(f64, bool)>> = vec![Vec::new(); k];
        for i in 0..scores.len() {
            buckets[groups.index()[i]].push((scores[i], labels[i]));
        }
        let mut levels = Vec::new();
        let mut indexes = Vec::new();
        for (g, bucket) in buckets.into_iter().enumerate() {
            if !bucket.is_empty() {
                levels.push(groups.levels()[g].clone());
                indexes.push(ScoreIndex::build(bucket.into_iter()));
            }
        }
        Ok(Self { levels, indexes, n: scores.len() })
    }

    /// Groups with at least one member.
    pub fn levels(&self) -> &[String] {
        &self.levels
    }

    /// Per-group summaries of a threshold policy.
    pub fn evaluate(&self, thresholds: &GroupThresholds, params: &BenefitParams) -> Result<(Vec<GroupSummary>, f64)> {
        let mut flagged = 0usize;
        let summaries = self
            .levels
            .iter()
            .zip(&self.indexes)
            .map(|(g, index)| {
                let t = thresholds.for_group(g)?;
                if !(0.0..=1.0).contains(&t) {
                    return Err(Error::OutOfRange { what: "policy threshold", value: t });
                }
                flagged += index.flagged_above(t);
                params.summarize(g, index.confusion_above(t)?, Some(t))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((summaries, flagged as f64 / self.n as f64))
    }

    /// Evaluates one threshold policy as a Pareto candidate.
    pub fn candidate(&self, policy: &PolicySpec, params: &BenefitParams, objective: &Objective) -> Result<ParetoPoint> {
        let PolicySpec::Threshold { thresholds } = policy else {
            return Err(Error::InvalidSpec(format!(
                "Pareto candidates must be threshold policies, got {}",
                policy.label()
            )));
        };
        let (summaries, flagged_fraction) = self.evaluate(thresholds, params)?;
        let target_snb = objective.value(&summaries).ok_or_else(|| match objective {
            Objective::TargetGroup(g) => Error::UnknownGroup(g.clone()),
            Objective::Maximin => Error::EmptyInput("no groups"),
        })?;
        Ok(ParetoPoint {
            policy: policy.label(),
            thresholds: self.levels.iter().map(|g| Ok((g.clone(), thresholds.for_group(g)?))).collect::<Result<_>>()?,
            overall_snb: aggregate_snb(&summaries)?,
            target_snb,
            flagged_fraction,
        })
    }
}

/// Evaluates candidates in parallel, preserving input order.
pub fn evaluate_candidates(
    policies: &[PolicySpec],
    index: &GroupedIndex,
    params: &BenefitParams,
    objective: &Objective,
) -> Result<Vec<ParetoPoint>> {
    policies.par_iter().map(|p| index.candidate(p, params, objective)).collect()
}

fn check_candidate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::EmptyInput("candidate threshold grid"));
    }
    match grid.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        Some(&t) => Err(Error::OutOfRange { what: "candidate threshold", value: t }),
        None => Ok(()),
    }
}

/// Every pair (cutoff for `target`, shared cutoff for all other groups).
pub fn enumerate_two_tier<S: AsRef<str>>(grid: &[f64], target: &str, groups: &[S]) -> Result<Vec<PolicySpec>> {
    check_candidate_grid(grid)?;
    if !groups.iter().any(|g| g.as_ref() == target) {
        return Err(Error::UnknownGroup(target.to_string()));
    }
    let mut out = Vec::with_capacity(grid.len() * grid.len());
    for &t_target in grid {
        for &t_other in grid {
            let map = groups
                .iter()
                .map(|g| {
                    let g = g.as_ref();
                    (g.to_string(), if g == target { t_target } else { t_other })
                })
                .collect();
            out.push(PolicySpec::Threshold { thresholds: GroupThresholds::PerGroup(map) });
        }
    }
    Ok(out)
}

/// Every assignment of grid values to groups (`|grid|^|groups|` candidates).
pub fn enumerate_full_grid<S: AsRef<str>>(grid: &[f64], groups: &[S]) -> Result<Vec<PolicySpec>> {
    check_candidate_grid(grid)?;
    if groups.is_empty() {
        return Err(Error::EmptyInput("groups"));
    }
    let total = (grid.len() as f64).powi(groups.len() as i32);
    if total > MAX_CANDIDATES as f64 {
        return Err(Error::TooManyCandidates(total.min(usize::MAX as f64) as usize));
    }
    let total = total as usize;
    let mut out = Vec::with_capacity(total);
    let mut digits = vec![0usize; groups.len()];
    for _ in 0..total {
        let map = groups.iter().zip(&digits).map(|(g, &d)| (g.as_ref().to_string(), grid[d])).collect();
        out.push(PolicySpec::Threshold { thresholds: GroupThresholds::PerGroup(map) });
        for d in digits.iter_mut().rev() {
            *d += 1;
            if *d < grid.len() {
                break;
            }
            *d = 0;
        }
    }
    Ok(out)
}

fn compare_thresholds(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> Ordering {
    a.iter()
        .zip(b.iter())
        .map(|((ga, ta), (gb, tb))| ga.cmp(gb).then(ta.total_cmp(tb)))
        .find(|o| o.is_ne())
        .unwrap_or(a.len().cmp(&b.len()))
}

/// Capacity-feasible candidates not dominated in (overall sNB, target sNB).
///
/// Returned in decreasing overall sNB. Candidates identical in both
/// objectives are represented by the one with lexicographically smallest
/// thresholds.
pub fn pareto_front(candidates: &[ParetoPoint], cap: CapacityConstraint) -> Result<Vec<ParetoPoint>> {
    if let Some(p) = candidates.iter().find(|p| p.overall_snb.is_nan() || p.target_snb.is_nan()) {
        return Err(Error::InvalidSpec(format!("candidate {} has an undefined objective", p.policy)));
    }
    let mut feasible: Vec<&ParetoPoint> = candidates.iter().filter(|p| cap.admits(p.flagged_fraction)).collect();
    if feasible.is_empty() {
        return Err(Error::Infeasible { cap: cap.max_flagged_fraction });
    }
    feasible.sort_by(|a, b| {
        b.overall_snb
            .total_cmp(&a.overall_snb)
            .then(b.target_snb.total_cmp(&a.target_snb))
            .then_with(|| compare_thresholds(&a.thresholds, &b.thresholds))
    });
    let mut best_target = f64::NEG_INFINITY;
    let mut front = Vec::new();
    for p in feasible {
        if p.target_snb > best_target {
            best_target = p.target_snb;
            front.push(p.clone());
        }
    }
    Ok(front)
}

/// Candidates re-scored with bootstrap optimism correction of overall and
/// target sNB. The flagged fraction is the apparent one.
pub fn corrected_candidates<T: Trainer>(
    cohort: &Cohort,
    trainer: &T,
    policies: &[PolicySpec],
    params: &BenefitParams,
    objective: &Objective,
    opts: &BootstrapOptions,
) -> Result<Vec<ParetoPoint>> {
    let outcome = optimism_engine(
        cohort,
        trainer,
        |model: &T::Model, data: &Cohort| {
            let scores: Vec<f64> = model.linear_predictors(data)?.into_iter().map(expit).collect();
            let index = GroupedIndex::new(&scores, data.outcome(), data.groups())?;
            let mut out = Vec::with_capacity(policies.len() * 3);
            for p in policies {
                match index.candidate(p, params, objective) {
                    Ok(pt) => out.extend([Some(pt.overall_snb), Some(pt.target_snb), Some(pt.flagged_fraction)]),
                    Err(Error::UnknownGroup(_)) => out.extend([None, None, None]),
                    Err(e) => return Err(e),
                }
            }
            Ok(out)
        },
        opts,
    )?;
    let model = trainer.train(cohort)?;
    let scores: Vec<f64> = model.linear_predictors(cohort)?.into_iter().map(expit).collect();
    let index = GroupedIndex::new(&scores, cohort.outcome(), cohort.groups())?;
    policies
        .iter()
        .enumerate()
        .map(|(j, p)| {
            let mut point = index.candidate(p, params, objective)?;
            point.overall_snb = outcome.corrected[3 * j].unwrap_or(f64::NAN);
            point.target_snb = outcome.corrected[3 * j + 1].unwrap_or(f64::NAN);
            Ok(point)
        })
        .collect()
}
