//! Utility, net benefit and subgroup net benefit.
//!
//! Everything here is a pure function of its inputs. Fractions are kept as
//! fractions; [`per_10k`] renders the "per 10,000 patients" unit used in
//! reports.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Confusion matrix at one operating point.
///
/// Counts are real-valued so that expected allocations (for example a random
/// 5% policy in expectation) can be represented exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: f64,
    pub fp: f64,
    #[serde(rename = "fn")]
    pub fn_: f64,
    pub tn: f64,
}

impl ConfusionCounts {
    pub fn new(tp: f64, fp: f64, fn_: f64, tn: f64) -> Result<Self> {
        for (what, v) in [("tp", tp), ("fp", fp), ("fn", fn_), ("tn", tn)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::OutOfRange { what, value: v });
            }
        }
        if tp + fp + fn_ + tn <= 0.0 {
            return Err(Error::EmptyInput("confusion counts sum to zero"));
        }
        Ok(Self { tp, fp, fn_, tn })
    }

    pub fn from_integers(tp: u64, fp: u64, fn_: u64, tn: u64) -> Result<Self> {
        Self::new(tp as f64, fp as f64, fn_ as f64, tn as f64)
    }

    pub fn n(&self) -> f64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn positives(&self) -> f64 {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> f64 {
        self.fp + self.tn
    }

    pub fn flagged(&self) -> f64 {
        self.tp + self.fp
    }

    pub fn prevalence(&self) -> f64 {
        self.positives() / self.n()
    }

    /// Cell-wise sum; used to pool groups.
    pub fn merge(&self, other: &Self) -> Self {
        Self { tp: self.tp + other.tp, fp: self.fp + other.fp, fn_: self.fn_ + other.fn_, tn: self.tn + other.tn }
    }
}

fn check_threshold(what: &'static str, t: f64) -> Result<f64> {
    if t > 0.0 && t < 1.0 {
        Ok(t)
    } else {
        Err(Error::OutOfRange { what, value: t })
    }
}

/// Odds `t/(1-t)` used to weigh false positives against true positives.
pub fn harm_weight(t: f64) -> Result<f64> {
    check_threshold("harm-weight threshold", t)?;
    Ok(t / (1.0 - t))
}

fn check_scores(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("scores"));
    }
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch { expected: scores.len(), found: labels.len() });
    }
    if let Some(&s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(Error::OutOfRange { what: "score", value: s });
    }
    Ok(())
}

/// Confusion counts when everyone scoring strictly above `t` is flagged.
pub fn confusion_at_threshold(scores: &[f64], labels: &[bool], t: f64) -> Result<ConfusionCounts> {
    check_scores(scores, labels)?;
    check_threshold("threshold", t)?;
    let (mut tp, mut fp, mut fn_, mut tn) = (0u64, 0u64, 0u64, 0u64);
    for (&s, &y) in scores.iter().zip(labels) {
        match (s > t, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    ConfusionCounts::from_integers(tp, fp, fn_, tn)
}

/// Conventional net benefit, `(TP - t/(1-t)·FP) / N`.
pub fn net_benefit(counts: &ConfusionCounts, t_weight: f64) -> Result<f64> {
    let w = harm_weight(t_weight)?;
    Ok((counts.tp - w * counts.fp) / counts.n())
}

/// Subgroup net benefit, `1 - π + λ·NB`.
///
/// With nobody flagged this is exactly `1 - π`.
pub fn subgroup_net_benefit(counts: &ConfusionCounts, lambda: f64, t_weight: f64) -> Result<f64> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::OutOfRange { what: "lambda", value: lambda });
    }
    let n = counts.n();
    if n <= 0.0 {
        return Err(Error::EmptyInput("group has no individuals"));
    }
    let w = harm_weight(t_weight)?;
    let prevalence = counts.positives() / n;
    if counts.tp == 0.0 && counts.fp == 0.0 {
        return Ok(1.0 - prevalence);
    }
    Ok(1.0 - prevalence + lambda / n * (counts.tp - w * counts.fp))
}

/// Utilities of the four confusion cells: true positive `a`, false positive
/// `b`, false negative `c` and true negative `d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilitySpec {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl UtilitySpec {
    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Result<Self> {
        let u = Self { a, b, c, d };
        u.validate()?;
        Ok(u)
    }

    pub fn validate(&self) -> Result<()> {
        if ![self.a, self.b, self.c, self.d].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidUtility("non-finite utility".into()));
        }
        if self.a <= self.c {
            return Err(Error::InvalidUtility(format!("a ({}) must exceed c ({})", self.a, self.c)));
        }
        if self.d <= self.b {
            return Err(Error::InvalidUtility(format!("d ({}) must exceed b ({})", self.d, self.b)));
        }
        Ok(())
    }

    /// Utilities implied by a proxy adverse event with `d = 1`, `a = 1 - P(R|TP)`,
    /// `c = 1 - P(R|FN)` and `b` chosen so that `t_star` is the optimal threshold.
    pub fn from_proxy(proxy: &ProxyRisk, t_star: f64) -> Result<Self> {
        proxy.validate()?;
        let w = harm_weight(t_star)?;
        let d = 1.0;
        let a = 1.0 - proxy.p_tp;
        let c = 1.0 - proxy.p_fn;
        let b = d - (a - c) * w;
        Self::new(a, b, c, d)
    }

    /// Mean utility per individual for a confusion matrix.
    pub fn expected_utility(&self, counts: &ConfusionCounts) -> f64 {
        (self.a * counts.tp + self.b * counts.fp + self.c * counts.fn_ + self.d * counts.tn) / counts.n()
    }
}

/// `λ = (a - c)/(d - c)`: benefit of a treated case relative to being outcome-free.
pub fn lambda_from_utilities(u: &UtilitySpec) -> Result<f64> {
    if !(u.d > u.c) {
        return Err(Error::InvalidUtility(format!("d ({}) must exceed c ({})", u.d, u.c)));
    }
    Ok((u.a - u.c) / (u.d - u.c))
}

/// Risk of a proxy adverse event among untreated (false negative) and treated
/// (true positive) cases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProxyRisk {
    pub p_fn: f64,
    pub p_tp: f64,
}

impl ProxyRisk {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_fn) {
            return Err(Error::OutOfRange { what: "P(R|FN)", value: self.p_fn });
        }
        if !(0.0..=self.p_fn).contains(&self.p_tp) {
            return Err(Error::OutOfRange { what: "P(R|TP)", value: self.p_tp });
        }
        if self.p_fn == 0.0 {
            return Err(Error::UndefinedLambda);
        }
        Ok(())
    }
}

/// `λ` as the relative risk reduction of the proxy event, `(p_fn - p_tp)/p_fn`.
pub fn lambda_from_rrr(proxy: &ProxyRisk) -> Result<f64> {
    proxy.validate()?;
    Ok((proxy.p_fn - proxy.p_tp) / proxy.p_fn)
}

/// Threshold at which treating and not treating have equal expected utility:
/// `t* = (d - b)/((d - b) + (a - c))`.
pub fn optimal_threshold(u: &UtilitySpec) -> Result<f64> {
    u.validate()?;
    let harm = u.d - u.b;
    let benefit = u.a - u.c;
    Ok(harm / (harm + benefit))
}

/// Per-group evaluation of a policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group_id: String,
    pub counts: ConfusionCounts,
    pub lambda: f64,
    pub t_star: f64,
    /// Classification cutoff, `None` for policies that do not threshold scores.
    pub policy_threshold: Option<f64>,
    /// Threshold whose odds weigh false positives in `snb`.
    pub harm_threshold: f64,
    pub snb: f64,
}

impl GroupSummary {
    /// Scores a group with the clinically optimal threshold as harm weight.
    pub fn evaluate(
        group_id: impl Into<String>,
        counts: ConfusionCounts,
        lambda: f64,
        t_star: f64,
        policy_threshold: Option<f64>,
    ) -> Result<Self> {
        Self::evaluate_with_harm(group_id, counts, lambda, t_star, policy_threshold, t_star)
    }

    pub fn evaluate_with_harm(
        group_id: impl Into<String>,
        counts: ConfusionCounts,
        lambda: f64,
        t_star: f64,
        policy_threshold: Option<f64>,
        harm_threshold: f64,
    ) -> Result<Self> {
        check_threshold("t*", t_star)?;
        let snb = subgroup_net_benefit(&counts, lambda, harm_threshold)?;
        Ok(Self { group_id: group_id.into(), counts, lambda, t_star, policy_threshold, harm_threshold, snb })
    }

    pub fn n(&self) -> f64 {
        self.counts.n()
    }
}

/// Population sNB as the size-weighted mean of group values.
pub fn aggregate_snb(groups: &[GroupSummary]) -> Result<f64> {
    if groups.is_empty() {
        return Err(Error::EmptyInput("no groups to aggregate"));
    }
    let mut total = 0.0;
    let mut weighted = 0.0;
    for g in groups {
        let n = g.n();
        if n <= 0.0 {
            return Err(Error::EmptyInput("group has no individuals"));
        }
        total += n;
        weighted += n * g.snb;
    }
    Ok(weighted / total)
}

/// Net benefit of the model, treat-all and treat-none over a threshold grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionCurve {
    pub thresholds: Vec<f64>,
    pub nb_model: Vec<f64>,
    pub nb_treat_all: Vec<f64>,
    pub nb_treat_none: Vec<f64>,
}

/// 0.001, 0.002, ..., 0.300.
pub fn default_grid() -> Vec<f64> {
    (1..=300).map(|i| i as f64 / 1000.0).collect()
}

/// Evenly spaced grid `from..=to` with `step`, computed by index and snapped
/// to 12 decimals so values print cleanly.
pub fn threshold_grid(from: f64, to: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(to >= from) {
        return Err(Error::InvalidSpec(format!("bad grid {from}..{to} step {step}")));
    }
    let k = ((to - from) / step + 1e-9).floor() as usize;
    let grid: Vec<f64> = (0..=k).map(|i| ((from + i as f64 * step) * 1e12).round() / 1e12).collect();
    validate_grid(&grid)?;
    Ok(grid)
}

pub fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::EmptyInput("threshold grid"));
    }
    for &t in grid {
        check_threshold("grid threshold", t)?;
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidSpec("threshold grid must be strictly increasing".into()));
    }
    Ok(())
}

/// Scores sorted ascending with cumulative positive counts, so confusion
/// counts at any threshold cost one binary search.
#[derive(Debug, Clone)]
pub struct ScoreIndex {
    sorted: Vec<f64>,
    /// `cum_pos[i]` = positives among the `i` lowest scores.
    cum_pos: Vec<u64>,
}

impl ScoreIndex {
    pub fn new(scores: &[f64], labels: &[bool]) -> Result<Self> {
        check_scores(scores, labels)?;
        Ok(Self::build(scores.iter().copied().zip(labels.iter().copied())))
    }

    pub(crate) fn build(pairs: impl Iterator<Item = (f64, bool)>) -> Self {
        let mut pairs: Vec<(f64, bool)> = pairs.collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut cum_pos = Vec::with_capacity(pairs.len() + 1);
        cum_pos.push(0);
        let mut acc = 0;
        for &(_, y) in &pairs {
            acc += y as u64;
            cum_pos.push(acc);
        }
        Self { sorted: pairs.into_iter().map(|p| p.0).collect(), cum_pos }
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn positives(&self) -> u64 {
        *self.cum_pos.last().unwrap()
    }

    /// Number of scores strictly above `t`.
    pub fn flagged_above(&self, t: f64) -> usize {
        self.sorted.len() - self.sorted.partition_point(|&s| s <= t)
    }

    /// Raw (tp, fp, fn, tn) for the strict-above rule.
    pub fn counts_above(&self, t: f64) -> (u64, u64, u64, u64) {
        let n = self.sorted.len() as u64;
        let below = self.sorted.partition_point(|&s| s <= t);
        let pos = self.positives();
        let pos_below = self.cum_pos[below];
        let tp = pos - pos_below;
        let fp = (n - below as u64) - tp;
        let fn_ = pos_below;
        let tn = below as u64 - pos_below;
        (tp, fp, fn_, tn)
    }

    pub fn confusion_above(&self, t: f64) -> Result<ConfusionCounts> {
        let (tp, fp, fn_, tn) = self.counts_above(t);
        ConfusionCounts::from_integers(tp, fp, fn_, tn)
    }
}

/// Decision curve over `grid`. When `lambda` is given every series (model and
/// treat-all) is multiplied by it, giving the policy-dependent part of sNB.
pub fn decision_curve(scores: &[f64], labels: &[bool], grid: &[f64], lambda: Option<f64>) -> Result<DecisionCurve> {
    validate_grid(grid)?;
    let index = ScoreIndex::new(scores, labels)?;
    let scale = match lambda {
        Some(l) if !(l.is_finite() && l >= 0.0) => return Err(Error::OutOfRange { what: "lambda", value: l }),
        Some(l) => l,
        None => 1.0,
    };
    let n = scores.len() as f64;
    let prevalence = index.positives() as f64 / n;
    let mut nb_model = Vec::with_capacity(grid.len());
    let mut nb_treat_all = Vec::with_capacity(grid.len());
    for &t in grid {
        let counts = index.confusion_above(t)?;
        nb_model.push(scale * net_benefit(&counts, t)?);
        let w = harm_weight(t)?;
        nb_treat_all.push(scale * (prevalence - w * (1.0 - prevalence)));
    }
    Ok(DecisionCurve { thresholds: grid.to_vec(), nb_model, nb_treat_all, nb_treat_none: vec![0.0; grid.len()] })
}

/// Fraction rendered in "per 10,000 patients" units.
pub fn per_10k(fraction: f64) -> i64 {
    (fraction * 10_000.0).round() as i64
}

/// Between-group gaps in sNB for one policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub reference: String,
    pub most_benefitted: String,
    pub least_benefitted: String,
    /// Highest minus lowest group sNB.
    pub max_minus_min: f64,
    /// Reference sNB minus each group's sNB (reference included, at 0).
    pub gaps_vs_reference: BTreeMap<String, f64>,
    /// Mean of the gaps over the non-reference groups.
    pub mean_gap_vs_reference: f64,
}

/// Change in gaps between a baseline and a new policy; positive values mean
/// the gap narrowed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReduction {
    pub max_minus_min: f64,
    pub mean_gap_vs_reference: f64,
    pub per_group: BTreeMap<String, f64>,
}

pub fn gap_report(per_group_snb: &BTreeMap<String, f64>, reference: &str) -> Result<GapReport> {
    if per_group_snb.len() < 2 {
        return Err(Error::InvalidSpec("gap report needs at least two groups".into()));
    }
    let reference_snb = *per_group_snb.get(reference).ok_or_else(|| Error::UnknownGroup(reference.to_string()))?;
    let (mut max_label, mut max_value) = (String::new(), f64::NEG_INFINITY);
    let (mut min_label, mut min_value) = (String::new(), f64::INFINITY);
    for (label, &v) in per_group_snb {
        if v > max_value {
            max_value = v;
            max_label = label.clone();
        }
        if v < min_value {
            min_value = v;
            min_label = label.clone();
        }
    }
    let gaps: BTreeMap<String, f64> = per_group_snb.iter().map(|(l, &v)| (l.clone(), reference_snb - v)).collect();
    let others: Vec<f64> = gaps.iter().filter(|(l, _)| l.as_str() != reference).map(|(_, &g)| g).collect();
    let mean_gap = others.iter().sum::<f64>() / others.len() as f64;
    Ok(GapReport {
        reference: reference.to_string(),
        most_benefitted: max_label,
        least_benefitted: min_label,
        max_minus_min: max_value - min_value,
        gaps_vs_reference: gaps,
        mean_gap_vs_reference: mean_gap,
    })
}

impl GapReport {
    /// Gap reduction of `self` relative to `baseline` (baseline gap minus this gap).
    pub fn reduction_from(&self, baseline: &GapReport) -> GapReduction {
        let per_group = self
            .gaps_vs_reference
            .iter()
            .filter_map(|(l, g)| baseline.gaps_vs_reference.get(l).map(|b| (l.clone(), b - g)))
            .collect();
        GapReduction {
            max_minus_min: baseline.max_minus_min - self.max_minus_min,
            mean_gap_vs_reference: baseline.mean_gap_vs_reference - self.mean_gap_vs_reference,
            per_group,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn confusion_examples() {
        let c = confusion_at_threshold(&[0.2, 0.8], &[false, true], 0.5).unwrap();
        assert_eq!(c, ConfusionCounts::new(1.0, 0.0, 0.0, 1.0).unwrap());

        let c = confusion_at_threshold(&[0.1, 0.2, 0.3], &[true, false, true], 0.5).unwrap();
        assert_eq!((c.tp, c.fp, c.fn_, c.tn), (0.0, 0.0, 2.0, 1.0));

        // a score equal to the threshold is not flagged
        let c = confusion_at_threshold(&[0.3, 0.3, 0.6], &[true, false, false], 0.3).unwrap();
        assert_eq!((c.tp, c.fp, c.fn_, c.tn), (0.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn confusion_errors() {
        assert!(matches!(confusion_at_threshold(&[], &[], 0.5), Err(Error::EmptyInput(_))));
        assert!(matches!(confusion_at_threshold(&[1.2], &[true], 0.5), Err(Error::OutOfRange { .. })));
        assert!(matches!(confusion_at_threshold(&[0.2], &[true], 1.0), Err(Error::OutOfRange { .. })));
        assert!(matches!(confusion_at_threshold(&[0.2], &[true], 0.0), Err(Error::OutOfRange { .. })));
        assert!(matches!(confusion_at_threshold(&[0.2, 0.1], &[true], 0.5), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn net_benefit_examples() {
        let none = ConfusionCounts::new(0.0, 0.0, 40.0, 60.0).unwrap();
        assert_eq!(net_benefit(&none, 0.3).unwrap(), 0.0);

        let c = ConfusionCounts::new(30.0, 70.0, 70.0, 830.0).unwrap();
        let expected = 0.03 - (0.15 / 0.85) * 0.07;
        assert!(close(net_benefit(&c, 0.15).unwrap(), expected, 1e-15));
        assert!(close(expected, 0.017647, 1e-6));

        // treat-all at t = π vanishes
        let all = ConfusionCounts::new(10.0, 90.0, 0.0, 0.0).unwrap();
        assert!(close(net_benefit(&all, 0.1).unwrap(), 0.0, 1e-15));

        assert!(net_benefit(&c, 1.0).is_err());
    }

    #[test]
    fn snb_examples() {
        // treat-no-one keeps 1 - π for any λ
        for lambda in [0.0, 0.2, 0.58, 1.0] {
            let c = ConfusionCounts::new(0.0, 0.0, 62.0, 938.0).unwrap();
            assert_eq!(per_10k(subgroup_net_benefit(&c, lambda, 0.15).unwrap()), 9380);
            let c = ConfusionCounts::new(0.0, 0.0, 67.0, 9933.0).unwrap();
            assert!(close(subgroup_net_benefit(&c, lambda, 0.015).unwrap(), 0.9933, 1e-12));
        }
        // everyone with the outcome caught, fully effective treatment
        let c = ConfusionCounts::new(50.0, 0.0, 0.0, 950.0).unwrap();
        assert!(close(subgroup_net_benefit(&c, 1.0, 0.2).unwrap(), 1.0, 1e-15));
        assert!(subgroup_net_benefit(&c, -0.1, 0.2).is_err());
    }

    #[test]
    fn lambda_examples() {
        let u = UtilitySpec { a: 1.0, b: 0.5, c: 0.0, d: 1.0 };
        assert_eq!(lambda_from_utilities(&u).unwrap(), 1.0);
        let u = UtilitySpec { a: 0.4, b: 0.5, c: 0.4, d: 1.0 };
        assert_eq!(lambda_from_utilities(&u).unwrap(), 0.0);
        let u = UtilitySpec { a: 0.79, b: 0.9, c: 0.5, d: 1.0 };
        assert!(close(lambda_from_utilities(&u).unwrap(), 0.58, 1e-12));
        let u = UtilitySpec { a: 0.79, b: 0.9, c: 1.0, d: 1.0 };
        assert!(lambda_from_utilities(&u).is_err());

        let p = ProxyRisk { p_fn: 0.5, p_tp: 0.21 };
        assert!(close(lambda_from_rrr(&p).unwrap(), 0.58, 1e-12));
        assert_eq!(lambda_from_rrr(&ProxyRisk { p_fn: 0.3, p_tp: 0.3 }).unwrap(), 0.0);
        assert_eq!(lambda_from_rrr(&ProxyRisk { p_fn: 0.3, p_tp: 0.0 }).unwrap(), 1.0);
        assert_eq!(lambda_from_rrr(&ProxyRisk { p_fn: 0.0, p_tp: 0.0 }), Err(Error::UndefinedLambda));
    }

    #[test]
    fn proxy_utilities_agree_with_rrr() {
        let proxy = ProxyRisk { p_fn: 0.5, p_tp: 0.21 };
        let u = UtilitySpec::from_proxy(&proxy, 0.15).unwrap();
        assert!(close(lambda_from_utilities(&u).unwrap(), lambda_from_rrr(&proxy).unwrap(), 1e-12));
        assert!(close(optimal_threshold(&u).unwrap(), 0.15, 1e-12));
    }

    #[test]
    fn optimal_threshold_examples() {
        let u = UtilitySpec { a: 2.0, b: 0.0, c: 1.0, d: 1.0 };
        assert_eq!(optimal_threshold(&u).unwrap(), 0.5);
        let u = UtilitySpec { a: 9.0, b: 0.0, c: 0.0, d: 1.0 };
        assert!(close(optimal_threshold(&u).unwrap(), 0.1, 1e-15));
        // (d-b)/(a-c) = 3/17 gives 15%
        let u = UtilitySpec { a: 17.0, b: 0.0, c: 0.0, d: 3.0 };
        let t = optimal_threshold(&u).unwrap();
        assert!(close(t, 0.15, 1e-15));
        let lhs = u.a * t + u.b * (1.0 - t);
        let rhs = u.c * t + u.d * (1.0 - t);
        assert!(close(lhs, rhs, 1e-12));
        assert!(optimal_threshold(&UtilitySpec { a: 0.0, b: 0.0, c: 0.0, d: 1.0 }).is_err());
        assert!(optimal_threshold(&UtilitySpec { a: 1.0, b: 1.0, c: 0.0, d: 1.0 }).is_err());
    }

    fn summary(n: f64, snb_target: f64) -> GroupSummary {
        // construct a group whose treat-none sNB equals the target
        let pos = (1.0 - snb_target) * n;
        let counts = ConfusionCounts::new(0.0, 0.0, pos, n - pos).unwrap();
        GroupSummary::evaluate("g", counts, 1.0, 0.1, None).unwrap()
    }

    #[test]
    fn aggregate_examples() {
        let one = summary(500.0, 0.9);
        assert_eq!(aggregate_snb(std::slice::from_ref(&one)).unwrap(), one.snb);
        let two = [summary(1000.0, 0.9), summary(1000.0, 1.0)];
        assert!(close(aggregate_snb(&two).unwrap(), 0.95, 1e-12));
        let uneven = [summary(1000.0, 0.8), summary(3000.0, 1.0)];
        assert!(close(aggregate_snb(&uneven).unwrap(), 0.95, 1e-12));
        assert!(aggregate_snb(&[]).is_err());
    }

    #[test]
    fn decision_curve_examples() {
        let labels = [true, false, false, true, false, false, false, false, false, false];
        let perfect: Vec<f64> = labels.iter().map(|&y| if y { 1.0 } else { 0.0 }).collect();
        let grid = [0.01, 0.1, 0.5, 0.9];
        let dc = decision_curve(&perfect, &labels, &grid, None).unwrap();
        assert!(dc.nb_treat_none.iter().all(|&v| v == 0.0));
        assert!(dc.nb_model.iter().all(|&v| close(v, 0.2, 1e-15)));
        let tiny = decision_curve(&perfect, &labels, &[1e-9], None).unwrap();
        assert!(close(tiny.nb_treat_all[0], 0.2, 1e-8));

        let scaled = decision_curve(&perfect, &labels, &grid, Some(0.5)).unwrap();
        assert!(scaled.nb_model.iter().all(|&v| close(v, 0.1, 1e-15)));
        assert!(decision_curve(&perfect, &labels, &[0.5, 0.2], None).is_err());
    }

    #[test]
    fn score_index_matches_direct_counting() {
        let scores = [0.3, 0.3, 0.6, 0.1, 0.9, 0.3];
        let labels = [true, false, false, true, true, false];
        let index = ScoreIndex::new(&scores, &labels).unwrap();
        for t in [0.05, 0.1, 0.2, 0.3, 0.31, 0.6, 0.95] {
            assert_eq!(index.confusion_above(t).unwrap(), confusion_at_threshold(&scores, &labels, t).unwrap());
        }
    }

    #[test]
    fn gap_examples() {
        let baseline: BTreeMap<String, f64> =
            [("white", 0.9801), ("asian", 0.9380)].into_iter().map(|(l, v)| (l.to_string(), v)).collect();
        let model: BTreeMap<String, f64> =
            [("white", 0.9808), ("asian", 0.9435)].into_iter().map(|(l, v)| (l.to_string(), v)).collect();
        let b = gap_report(&baseline, "white").unwrap();
        let m = gap_report(&model, "white").unwrap();
        assert_eq!(b.most_benefitted, "white");
        assert_eq!(b.least_benefitted, "asian");
        let r = m.reduction_from(&b);
        assert_eq!(per_10k(r.max_minus_min), 48);

        let same: BTreeMap<String, f64> =
            [("a", 0.9), ("b", 0.9)].into_iter().map(|(l, v)| (l.to_string(), v)).collect();
        let g = gap_report(&same, "a").unwrap();
        assert_eq!(g.max_minus_min, 0.0);
        assert!(g.gaps_vs_reference.values().all(|&v| v == 0.0));

        let three: BTreeMap<String, f64> =
            [("r", 1.0), ("x", 0.9), ("y", 0.8)].into_iter().map(|(l, v)| (l.to_string(), v)).collect();
        assert!(close(gap_report(&three, "r").unwrap().mean_gap_vs_reference, 0.15, 1e-12));
        assert!(matches!(gap_report(&three, "nope"), Err(Error::UnknownGroup(_))));
    }
}
