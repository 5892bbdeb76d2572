//! Fit, validate, evaluate and Pareto stages for every configured model variant.

use std::collections::BTreeMap;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use snb_core::ensemble::{ModelRecipe, RiskModel, Variant};
use snb_core::glm::expit;
use snb_core::metrics::{decision_curve, gap_report, GapReduction};
use snb_core::policy::{
    corrected_candidates, enumerate_full_grid, enumerate_two_tier, evaluate_candidates, evaluate_policy, pareto_front,
    BenefitParams, GroupThresholds, GroupedIndex, Objective,
};
use snb_core::synth::{generate_cohort, preset_diabetes, preset_lung};
use snb_core::validation::{
    bootstrap_intervals, optimism_corrected, BootstrapOptions, MetricContext, OptimismReport, Predictor,
};
use snb_core::{
    CapacityConstraint, Cohort, DecisionCurve, EvaluationReport, GapReport, Interval, ParetoPoint, PolicySpec,
};

use crate::cohort_io::load_cohort;
use crate::config::{ParetoConfig, Preset, RunConfig};

/// Label of the Pareto point that flags nobody.
pub const TREAT_NO_ONE_POINT: &str = "Treat No One";

/// Which stages after fitting to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stages {
    pub validate: bool,
    pub evaluate: bool,
    pub pareto: bool,
}

impl Stages {
    pub const ALL: Stages = Stages { validate: true, evaluate: true, pareto: true };
    pub const FIT: Stages = Stages { validate: false, evaluate: false, pareto: false };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupInfo {
    pub n: usize,
    pub events: usize,
    pub prevalence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub source: String,
    pub n: usize,
    pub features: Vec<String>,
    pub groups: BTreeMap<String, GroupInfo>,
}

impl CohortSummary {
    fn of(cohort: &Cohort, source: String) -> Self {
        let mut groups: BTreeMap<String, GroupInfo> = BTreeMap::new();
        for i in 0..cohort.len() {
            let info = groups.entry(cohort.group_label(i).to_string()).or_insert(GroupInfo {
                n: 0,
                events: 0,
                prevalence: 0.0,
            });
            info.n += 1;
            info.events += cohort.outcome()[i] as usize;
        }
        for info in groups.values_mut() {
            info.prevalence = info.events as f64 / info.n as f64;
        }
        Self { source, n: cohort.len(), features: cohort.feature_names().to_vec(), groups }
    }
}

/// Settings the artifacts were produced with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub seed: u64,
    pub bootstrap: BootstrapOptions,
    pub ci_level: f64,
    pub retrain_propensity: bool,
    pub reference_group: String,
    pub reference_policy: String,
    /// Labels of the configured policies, before the per-model ones are added.
    pub policies: Vec<String>,
    pub params: BenefitParams,
    pub decision_grid: Vec<f64>,
    pub pareto: Option<ParetoConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Validation {
    pub report: OptimismReport,
    /// Percentile intervals of the fixed model's metrics, shifted by the optimism
    /// estimate so they bracket the corrected values. Keyed by metric name.
    pub intervals: BTreeMap<String, Interval>,
    /// Intervals for the corrected per-group gap reduction of the model at t*
    /// relative to the reference policy, keyed by group.
    pub gap_reduction_intervals: BTreeMap<String, Interval>,
    /// Corrected per-group gap reduction, keyed by group.
    pub gap_reduction: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupCurve {
    /// Group label, or `overall` for the whole cohort.
    pub group: String,
    /// Weight applied to the curve, `None` for the unweighted overall curve.
    pub lambda: Option<f64>,
    pub t_star: Option<f64>,
    pub curve: DecisionCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyGap {
    pub policy: String,
    pub report: GapReport,
    /// Narrowing relative to the reference policy (positive is narrower).
    pub reduction: GapReduction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub decision_curves: Vec<GroupCurve>,
    pub policies: Vec<EvaluationReport>,
    pub gaps: Vec<PolicyGap>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoFront {
    pub cap: f64,
    pub objective: Objective,
    pub optimism_corrected: bool,
    pub candidates: usize,
    pub points: Vec<ParetoPoint>,
    pub treat_no_one: ParetoPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifacts {
    pub variant: Variant,
    pub model: RiskModel,
    pub validation: Option<Validation>,
    pub evaluation: Option<Evaluation>,
    pub pareto: Vec<ParetoFront>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifacts {
    pub cohort: CohortSummary,
    pub settings: RunSettings,
    pub models: Vec<ModelArtifacts>,
}

/// Loads the configured cohort file, or generates the preset with the run seed.
pub fn resolve_cohort(config: &RunConfig) -> Result<(Cohort, String)> {
    match (&config.cohort, config.preset) {
        (Some(path), _) => Ok((load_cohort(path, config.group_column())?, path.display().to_string())),
        (None, Some(preset)) => {
            let scale = config.scale.unwrap_or(1.0);
            let mut spec = match preset {
                Preset::Diabetes => preset_diabetes(scale)?,
                Preset::Lung => preset_lung(scale)?,
            };
            spec.seed = config.seed();
            let name = serde_json::to_value(preset)?.as_str().unwrap_or_default().to_string();
            Ok((generate_cohort(&spec)?, format!("preset {name} (scale {scale}, seed {})", spec.seed)))
        }
        (None, None) => bail!("no cohort: give a cohort CSV path or a preset"),
    }
}

/// Runs the pipeline, bounded to `config.workers` threads when set.
pub fn run_pipeline(config: &RunConfig, stages: Stages) -> Result<Artifacts> {
    config.validate().context("stage `configure`")?;
    match config.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .context("stage `configure`: cannot build worker pool")?
            .install(|| run_stages(config, stages)),
        None => run_stages(config, stages),
    }
}

fn model_policy_label(variant: Variant) -> String {
    format!("{} at t*", variant.label())
}

fn run_stages(config: &RunConfig, stages: Stages) -> Result<Artifacts> {
    let (cohort, source) = resolve_cohort(config).context("stage `load cohort`")?;
    let params = config.benefit_params(&cohort).context("stage `configure`")?;
    let reference_group = config.reference_group(&cohort).context("stage `configure`")?;
    let policies = config.policies();
    let settings = RunSettings {
        seed: config.seed(),
        bootstrap: BootstrapOptions {
            replicates: config.bootstrap.replicates,
            seed: config.seed(),
            resampling: config.bootstrap.resampling,
            workers: None,
        },
        ci_level: config.bootstrap.ci_level,
        retrain_propensity: config.bootstrap.retrain_propensity,
        reference_group,
        reference_policy: config.reference_policy().to_string(),
        policies: policies.iter().map(PolicySpec::label).collect(),
        params,
        decision_grid: config.decision_grid()?,
        pareto: if stages.pareto { config.pareto() } else { None },
    };
    let mut models = Vec::new();
    for variant in config.variants() {
        let stage = |name: &str| format!("stage `{name}` ({})", variant.label());
        let mut recipe = ModelRecipe::new(variant).with_multi(config.multi_sa.clone());
        if variant == Variant::MultiSA && !settings.retrain_propensity {
            recipe = recipe.freeze_propensity(&cohort).with_context(|| stage("fit"))?;
        }
        let model = recipe.fit(&cohort).with_context(|| stage("fit"))?;
        let validation = if stages.validate {
            Some(validate(&cohort, &recipe, &model, &policies, &settings).with_context(|| stage("validate"))?)
        } else {
            None
        };
        let evaluation = if stages.evaluate {
            Some(evaluate(&cohort, &model, variant, &policies, &settings).with_context(|| stage("evaluate"))?)
        } else {
            None
        };
        let pareto = match &settings.pareto {
            Some(p) => pareto(&cohort, &recipe, &model, p, &settings).with_context(|| stage("pareto"))?,
            None => Vec::new(),
        };
        models.push(ModelArtifacts { variant, model, validation, evaluation, pareto });
    }
    Ok(Artifacts { cohort: CohortSummary::of(&cohort, source), settings, models })
}

fn t_star_thresholds(params: &BenefitParams) -> GroupThresholds {
    GroupThresholds::PerGroup(params.t_star.clone())
}

fn model_policy(params: &BenefitParams) -> PolicySpec {
    PolicySpec::Threshold { thresholds: t_star_thresholds(params) }
}

/// The reference policy among the configured ones and the model's own.
fn find_reference_policy(
    policies: &[PolicySpec],
    variant: Option<Variant>,
    settings: &RunSettings,
) -> Result<PolicySpec> {
    let wanted = settings.reference_policy.as_str();
    if let Some(p) = policies.iter().find(|p| p.label() == wanted) {
        return Ok(p.clone());
    }
    if variant.is_some_and(|v| model_policy_label(v) == wanted) {
        return Ok(model_policy(&settings.params));
    }
    match wanted {
        "Treat.No.One" => Ok(PolicySpec::TreatNone),
        "Treat.All" => Ok(PolicySpec::TreatAll),
        _ => bail!("reference policy `{wanted}` is not among the evaluated policies"),
    }
}

/// Per-group `(baseline gap) - (model gap)` against the reference group.
fn gap_reductions(
    baseline: &BTreeMap<String, f64>,
    model: &BTreeMap<String, f64>,
    reference: &str,
) -> BTreeMap<String, f64> {
    let (Some(b_ref), Some(m_ref)) = (baseline.get(reference), model.get(reference)) else {
        return BTreeMap::new();
    };
    model
        .iter()
        .filter(|(g, _)| g.as_str() != reference)
        .filter_map(|(g, m)| baseline.get(g).map(|b| (g.clone(), (b_ref - b) - (m_ref - m))))
        .collect()
}

fn validate(
    cohort: &Cohort,
    recipe: &ModelRecipe,
    model: &RiskModel,
    policies: &[PolicySpec],
    settings: &RunSettings,
) -> Result<Validation> {
    let context = MetricContext::new(settings.params.clone(), t_star_thresholds(&settings.params), cohort);
    let report = optimism_corrected(cohort, recipe, &context, &settings.bootstrap)?;
    let names = context.names();
    let groups = context.groups.clone();
    let reference = settings.reference_group.as_str();
    let baseline_policy = find_reference_policy(policies, Some(model.variant()), settings)?;

    let statistic = |data: &Cohort| -> snb_core::Result<Vec<Option<f64>>> {
        let lp = model.linear_predictors(data)?;
        let mut values = context.flatten(&lp, data)?;
        let scores: Vec<f64> = lp.iter().map(|&v| expit(v)).collect();
        let baseline = evaluate_policy(&baseline_policy, &scores, data.outcome(), data.groups(), &settings.params)
            .map(|r| r.snb_by_group())
            .unwrap_or_default();
        let model_snb: BTreeMap<String, f64> =
            groups.iter().enumerate().filter_map(|(k, g)| values[4 + 4 * k].map(|v| (g.clone(), v))).collect();
        let reductions = gap_reductions(&baseline, &model_snb, reference);
        values.extend(groups.iter().filter(|g| g.as_str() != reference).map(|g| reductions.get(g).copied()));
        Ok(values)
    };
    let raw = bootstrap_intervals(statistic, cohort, &settings.bootstrap, settings.ci_level)?;

    let optimism = flatten_optimism(&context, &report);
    let shift = |interval: &Interval, by: f64| Interval {
        lower: interval.lower - by,
        upper: interval.upper - by,
        method: format!("{}, shifted by bootstrap optimism", interval.method),
        ..interval.clone()
    };
    let mut intervals = BTreeMap::new();
    for (j, name) in names.iter().enumerate() {
        if let (Some(Some(iv)), Some(by)) = (raw.get(j), optimism[j]) {
            intervals.insert(name.clone(), shift(iv, by));
        }
    }

    // The baseline policy does not use the model, so only the model's
    // optimism moves the reduction: corrected = apparent + opt[ref] - opt[g].
    let opt_snb = &report.optimism.snb_by_group;
    let baseline_apparent = {
        let scores = model.probabilities(cohort)?;
        evaluate_policy(&baseline_policy, &scores, cohort.outcome(), cohort.groups(), &settings.params)?.snb_by_group()
    };
    let gap_reduction = gap_reductions(&baseline_apparent, &report.corrected.snb_by_group, reference);
    let mut gap_reduction_intervals = BTreeMap::new();
    for (k, g) in groups.iter().filter(|g| g.as_str() != reference).enumerate() {
        let j = names.len() + k;
        if let (Some(Some(iv)), Some(o_ref), Some(o_g)) = (raw.get(j), opt_snb.get(reference), opt_snb.get(g)) {
            gap_reduction_intervals.insert(g.clone(), shift(iv, o_g - o_ref));
        }
    }
    Ok(Validation { report, intervals, gap_reduction_intervals, gap_reduction })
}

/// Optimism estimates in the order of [`MetricContext::names`].
fn flatten_optimism(context: &MetricContext, report: &OptimismReport) -> Vec<Option<f64>> {
    let o = &report.optimism;
    let finite = |v: f64| v.is_finite().then_some(v);
    let mut out = vec![
        finite(o.c_statistic),
        finite(o.calibration_slope),
        finite(o.calibration_intercept),
        finite(o.overall_snb),
    ];
    for g in &context.groups {
        out.push(o.snb_by_group.get(g).copied());
        let perf = o.by_group.get(g);
        out.push(perf.and_then(|p| p.c_statistic));
        out.push(perf.and_then(|p| p.calibration_slope));
        out.push(perf.and_then(|p| p.calibration_intercept));
    }
    out
}

fn evaluate(
    cohort: &Cohort,
    model: &RiskModel,
    variant: Variant,
    policies: &[PolicySpec],
    settings: &RunSettings,
) -> Result<Evaluation> {
    let scores = model.probabilities(cohort)?;
    let labels = cohort.outcome();
    let params = &settings.params;

    let mut members: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for i in 0..cohort.len() {
        members.entry(cohort.group_label(i)).or_default().push(i);
    }
    let mut decision_curves = vec![GroupCurve {
        group: "overall".into(),
        lambda: None,
        t_star: None,
        curve: decision_curve(&scores, labels, &settings.decision_grid, None)?,
    }];
    for (g, rows) in &members {
        let (lambda, t_star) = params.lookup(g)?;
        let s: Vec<f64> = rows.iter().map(|&i| scores[i]).collect();
        let y: Vec<bool> = rows.iter().map(|&i| labels[i]).collect();
        decision_curves.push(GroupCurve {
            group: g.to_string(),
            lambda: Some(lambda),
            t_star: Some(t_star),
            curve: decision_curve(&s, &y, &settings.decision_grid, Some(lambda))?,
        });
    }

    let mut reports = Vec::new();
    for policy in policies {
        reports.push(evaluate_policy(policy, &scores, labels, cohort.groups(), params)?);
    }
    let mut own = evaluate_policy(&model_policy(params), &scores, labels, cohort.groups(), params)?;
    own.policy = model_policy_label(variant);
    reports.push(own);

    let mut gaps = Vec::new();
    if members.len() >= 2 {
        let baseline_policy = find_reference_policy(policies, Some(variant), settings)?;
        let baseline = match reports.iter().find(|r| r.policy == settings.reference_policy) {
            Some(r) => r.clone(),
            None => evaluate_policy(&baseline_policy, &scores, labels, cohort.groups(), params)?,
        };
        let baseline_gap = gap_report(&baseline.snb_by_group(), &settings.reference_group)?;
        for r in &reports {
            let report = gap_report(&r.snb_by_group(), &settings.reference_group)?;
            let reduction = report.reduction_from(&baseline_gap);
            gaps.push(PolicyGap { policy: r.policy.clone(), report, reduction });
        }
    }
    Ok(Evaluation { decision_curves, policies: reports, gaps })
}

fn pareto(
    cohort: &Cohort,
    recipe: &ModelRecipe,
    model: &RiskModel,
    config: &ParetoConfig,
    settings: &RunSettings,
) -> Result<Vec<ParetoFront>> {
    let grid = config.grid.values()?;
    let levels = cohort.groups().levels();
    let objective = config.objective();
    let candidates = match &config.target {
        Some(target) => {
            if !levels.contains(target) {
                bail!("Pareto target group `{target}` is not in the cohort");
            }
            enumerate_two_tier(&grid, target, levels)?
        }
        None => enumerate_full_grid(&grid, levels)?,
    };
    let scores = model.probabilities(cohort)?;
    let index = GroupedIndex::new(&scores, cohort.outcome(), cohort.groups())?;
    let params = &settings.params;
    let points = if config.optimism_corrected {
        corrected_candidates(cohort, recipe, &candidates, params, &objective, &settings.bootstrap)?
    } else {
        evaluate_candidates(&candidates, &index, params, &objective)?
    };
    let nobody = PolicySpec::Threshold { thresholds: GroupThresholds::Uniform(1.0) };
    let mut treat_no_one = index.candidate(&nobody, params, &objective)?;
    treat_no_one.policy = TREAT_NO_ONE_POINT.into();
    config
        .caps
        .iter()
        .map(|&cap| {
            let front = pareto_front(&points, CapacityConstraint::new(cap)?).with_context(|| format!("cap {cap}"))?;
            Ok(ParetoFront {
                cap,
                objective: objective.clone(),
                optimism_corrected: config.optimism_corrected,
                candidates: points.len(),
                points: front,
                treat_no_one: treat_no_one.clone(),
            })
        })
        .collect()
}
