//! Model variants over a protected attribute.
//!
//! - **NoSA**: logistic regression on the features only.
//! - **SingleSA**: the same plus one-hot indicators of the subgroup, with the
//!   largest subgroup as reference level.
//! - **MultiSA**: one outcome model per subgroup, fitted on the whole cohort
//!   with propensity weights that borrow strength from individuals outside
//!   the subgroup who resemble its members.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::Cohort;
use crate::error::{Error, Result};
use crate::glm::{self, expit, DesignMatrix, FittedModel};
use crate::validation::{Predictor, Trainer};

/// Propensities are clamped to this distance from 0 and 1 before taking odds.
pub const PROPENSITY_CLAMP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    #[serde(alias = "LogNoSA")]
    NoSA,
    #[serde(alias = "LogSingleSA")]
    SingleSA,
    #[serde(alias = "LogMultiSA")]
    MultiSA,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::NoSA, Variant::SingleSA, Variant::MultiSA];

    pub fn label(&self) -> &'static str {
        match self {
            Variant::NoSA => "LogNoSA",
            Variant::SingleSA => "LogSingleSA",
            Variant::MultiSA => "LogMultiSA",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nosa" | "lognosa" => Ok(Variant::NoSA),
            "singlesa" | "logsinglesa" => Ok(Variant::SingleSA),
            "multisa" | "logmultisa" => Ok(Variant::MultiSA),
            other => Err(Error::InvalidSpec(format!("unknown model variant `{other}`"))),
        }
    }
}

/// Column recipe of a design, fixed at training time so that any cohort
/// with the same features can be encoded identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub feature_names: Vec<String>,
    /// Subgroup levels that get an indicator column (empty for NoSA).
    pub indicator_levels: Vec<String>,
    pub reference_level: Option<String>,
}

impl DesignSpec {
    pub fn for_cohort(cohort: &Cohort, variant: Variant) -> Self {
        let feature_names = cohort.feature_names().to_vec();
        match variant {
            Variant::NoSA | Variant::MultiSA => Self { feature_names, indicator_levels: vec![], reference_level: None },
            Variant::SingleSA => {
                let counts = cohort.groups().counts();
                let levels = cohort.groups().levels();
                // largest group; ties go to the first level in sort order
                let reference = (0..levels.len()).fold(0, |best, g| if counts[g] > counts[best] { g } else { best });
                Self {
                    feature_names,
                    indicator_levels: levels
                        .iter()
                        .enumerate()
                        .filter(|(g, _)| *g != reference)
                        .map(|(_, l)| l.clone())
                        .collect(),
                    reference_level: Some(levels[reference].clone()),
                }
            }
        }
    }

    pub fn column_names(&self) -> Vec<String> {
        self.feature_names.iter().cloned().chain(self.indicator_levels.iter().map(|l| format!("group={l}"))).collect()
    }

    fn check_cohort(&self, cohort: &Cohort) -> Result<()> {
        if cohort.feature_names() != self.feature_names.as_slice() {
            return Err(Error::InvalidSpec("cohort features differ from the training design".into()));
        }
        if let Some(reference) = &self.reference_level {
            for (g, level) in cohort.groups().levels().iter().enumerate() {
                let present = cohort.groups().index().contains(&g);
                if present && level != reference && !self.indicator_levels.contains(level) {
                    return Err(Error::UnknownGroup(level.clone()));
                }
            }
        }
        Ok(())
    }

    /// Raw (unstandardized) design values for every row, intercept excluded.
    pub fn encode(&self, cohort: &Cohort) -> Result<Vec<f64>> {
        self.check_cohort(cohort)?;
        let p = self.feature_names.len() + self.indicator_levels.len();
        let mut values = Vec::with_capacity(cohort.len() * p);
        for i in 0..cohort.len() {
            values.extend_from_slice(cohort.row(i));
            let label = cohort.group_label(i);
            values.extend(self.indicator_levels.iter().map(|l| if l == label { 1.0 } else { 0.0 }));
        }
        Ok(values)
    }

    pub fn design(&self, cohort: &Cohort) -> Result<DesignMatrix> {
        DesignMatrix::new(cohort.len(), &self.encode(cohort)?, self.column_names(), false)
    }
}

/// Design for the NoSA or SingleSA variant (MultiSA members use the NoSA design).
pub fn build_design(cohort: &Cohort, variant: Variant) -> Result<DesignMatrix> {
    DesignSpec::for_cohort(cohort, variant).design(cohort)
}

/// Weights for training a model tailored to a target subgroup.
///
/// Target members get 1. Others get `min(f · prior_ratio · p/(1-p), 1)`,
/// where `p` is their estimated probability of belonging to the target and
/// `prior_ratio = Pr(not target)/Pr(target)`.
pub fn propensity_weights(
    propensity: &[f64],
    is_target: &[bool],
    prior_ratio: f64,
    forgetting_factor: f64,
) -> Result<Vec<f64>> {
    if propensity.len() != is_target.len() {
        return Err(Error::LengthMismatch { expected: propensity.len(), found: is_target.len() });
    }
    if !(prior_ratio.is_finite() && prior_ratio > 0.0) {
        return Err(Error::OutOfRange { what: "prior ratio", value: prior_ratio });
    }
    if !(forgetting_factor > 0.0 && forgetting_factor <= 1.0) {
        return Err(Error::OutOfRange { what: "forgetting factor", value: forgetting_factor });
    }
    propensity
        .iter()
        .zip(is_target)
        .map(|(&p, &target)| {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::OutOfRange { what: "propensity", value: p });
            }
            if target {
                Ok(1.0)
            } else {
                Ok((forgetting_factor * prior_ratio * p / (1.0 - p)).min(1.0))
            }
        })
        .collect()
}

/// How the propensity LASSO penalty is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyChoice {
    Fixed(f64),
    CrossValidated { grid: Vec<f64>, folds: usize, seed: u64 },
}

impl Default for PenaltyChoice {
    fn default() -> Self {
        PenaltyChoice::Fixed(1e-3)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiSaOptions {
    pub penalty: PenaltyChoice,
    pub forgetting_factor: f64,
}

impl Default for MultiSaOptions {
    fn default() -> Self {
        Self { penalty: PenaltyChoice::default(), forgetting_factor: 1.0 }
    }
}

/// Per-subgroup outcome models with the propensity models that weighted them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub design: DesignSpec,
    pub members: BTreeMap<String, FittedModel>,
    /// `None` when the subgroup is the whole cohort (nothing to reweight).
    pub propensity: BTreeMap<String, Option<FittedModel>>,
    pub forgetting_factor: f64,
    pub prior_ratio: BTreeMap<String, f64>,
}

impl EnsembleModel {
    pub fn groups(&self) -> impl Iterator<Item = &String> {
        self.members.keys()
    }

    pub fn member(&self, group: &str) -> Result<&FittedModel> {
        self.members.get(group).ok_or_else(|| Error::UnknownGroup(group.to_string()))
    }
}

/// Routes a feature vector to the member model of `group`.
pub fn predict_ensemble(model: &EnsembleModel, features: &[f64], group: &str) -> Result<f64> {
    model.member(group)?.predict_prob(features)
}

fn check_groups(cohort: &Cohort) -> Result<()> {
    let levels = cohort.groups().levels();
    let mut pos = vec![0usize; levels.len()];
    let mut n = vec![0usize; levels.len()];
    for (&g, &y) in cohort.groups().index().iter().zip(cohort.outcome()) {
        n[g] += 1;
        pos[g] += y as usize;
    }
    for (g, level) in levels.iter().enumerate() {
        if n[g] > 0 && (pos[g] == 0 || pos[g] == n[g]) {
            return Err(Error::SingleClass(level.clone()));
        }
    }
    Ok(())
}

fn present_groups(cohort: &Cohort) -> Vec<(usize, String)> {
    let counts = cohort.groups().counts();
    cohort.groups().levels().iter().enumerate().filter(|(g, _)| counts[*g] > 0).map(|(g, l)| (g, l.clone())).collect()
}

fn fit_propensity(
    design_values: &[f64],
    rows: usize,
    names: Vec<String>,
    membership: &[bool],
    penalty: &PenaltyChoice,
) -> Result<FittedModel> {
    let design = DesignMatrix::new(rows, design_values, names, false)?;
    let penalty = match penalty {
        PenaltyChoice::Fixed(p) => *p,
        PenaltyChoice::CrossValidated { grid, folds, seed } => {
            glm::select_penalty_cv(&design, membership, None, grid, *folds, *seed)?.penalty
        }
    };
    let mut model = glm::fit_lasso_logistic(&design, membership, penalty, None)?;
    model.training_meta.variant = "propensity".into();
    Ok(model)
}

fn clamp_propensity(p: f64) -> f64 {
    p.clamp(PROPENSITY_CLAMP, 1.0 - PROPENSITY_CLAMP)
}

/// Fits one member per subgroup given (possibly pre-trained) propensity models.
fn fit_members(
    cohort: &Cohort,
    spec: &DesignSpec,
    propensity: &BTreeMap<String, Option<FittedModel>>,
    forgetting_factor: f64,
) -> Result<(BTreeMap<String, FittedModel>, BTreeMap<String, f64>)> {
    let design = spec.design(cohort)?;
    let n = cohort.len();
    let counts = cohort.groups().counts();
    let groups = present_groups(cohort);
    let fitted: Vec<Result<(String, FittedModel, f64)>> = groups
        .par_iter()
        .map(|(g, label)| {
            let n_g = counts[*g];
            let is_target: Vec<bool> = cohort.groups().index().iter().map(|&i| i == *g).collect();
            let (weights, prior_ratio) = if n_g == n {
                (None, 0.0)
            } else {
                let model =
                    propensity.get(label).and_then(|m| m.as_ref()).ok_or_else(|| Error::UnknownGroup(label.clone()))?;
                let prior_ratio = (n - n_g) as f64 / n_g as f64;
                let scores: Vec<f64> = model
                    .linear_predictors(cohort.features())?
                    .into_iter()
                    .map(|eta| clamp_propensity(expit(eta)))
                    .collect();
                (Some(propensity_weights(&scores, &is_target, prior_ratio, forgetting_factor)?), prior_ratio)
            };
            let mut member = glm::fit_logistic(&design, cohort.outcome(), weights.as_deref())?;
            member.training_meta = glm::TrainingMeta {
                variant: format!("{} member `{label}`", Variant::MultiSA),
                weights: if weights.is_some() {
                    format!("propensity-weighted, f = {forgetting_factor}")
                } else {
                    "unweighted (group is the whole cohort)".into()
                },
                penalty: None,
            };
            Ok((label.clone(), member, prior_ratio))
        })
        .collect();
    let mut members = BTreeMap::new();
    let mut ratios = BTreeMap::new();
    for r in fitted {
        let (label, member, ratio) = r?;
        members.insert(label.clone(), member);
        ratios.insert(label, ratio);
    }
    Ok((members, ratios))
}

/// Trains the propensity model for every subgroup (one-vs-rest LASSO on the
/// features, outcome and attribute excluded).
pub fn fit_propensity_models(
    cohort: &Cohort,
    penalty: &PenaltyChoice,
) -> Result<BTreeMap<String, Option<FittedModel>>> {
    let n = cohort.len();
    let counts = cohort.groups().counts();
    let groups = present_groups(cohort);
    let fitted: Vec<Result<(String, Option<FittedModel>)>> = groups
        .par_iter()
        .map(|(g, label)| {
            if counts[*g] == n {
                return Ok((label.clone(), None));
            }
            let membership: Vec<bool> = cohort.groups().index().iter().map(|&i| i == *g).collect();
            let model = fit_propensity(cohort.features(), n, cohort.feature_names().to_vec(), &membership, penalty)?;
            Ok((label.clone(), Some(model)))
        })
        .collect();
    fitted.into_iter().collect()
}

/// Propensity-weighted ensemble with one member model per subgroup.
pub fn fit_multi_sa(cohort: &Cohort, opts: &MultiSaOptions) -> Result<EnsembleModel> {
    check_groups(cohort)?;
    if present_groups(cohort).is_empty() {
        return Err(Error::EmptyInput("no subgroups"));
    }
    if cohort.n_features() == 0 {
        return Err(Error::InvalidSpec("MultiSA needs at least one feature".into()));
    }
    let propensity = fit_propensity_models(cohort, &opts.penalty)?;
    fit_multi_sa_with_propensity(cohort, propensity, opts.forgetting_factor)
}

/// Ensemble built from already-trained propensity models (used to reuse the
/// original-data propensity models inside bootstrap replicates).
pub fn fit_multi_sa_with_propensity(
    cohort: &Cohort,
    propensity: BTreeMap<String, Option<FittedModel>>,
    forgetting_factor: f64,
) -> Result<EnsembleModel> {
    check_groups(cohort)?;
    if !(forgetting_factor > 0.0 && forgetting_factor <= 1.0) {
        return Err(Error::OutOfRange { what: "forgetting factor", value: forgetting_factor });
    }
    let spec = DesignSpec::for_cohort(cohort, Variant::NoSA);
    let (members, prior_ratio) = fit_members(cohort, &spec, &propensity, forgetting_factor)?;
    Ok(EnsembleModel { design: spec, members, propensity, forgetting_factor, prior_ratio })
}

/// A trained model of any variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RiskModel {
    Single { variant: Variant, design: DesignSpec, model: FittedModel },
    Ensemble(EnsembleModel),
}

impl RiskModel {
    pub fn variant(&self) -> Variant {
        match self {
            RiskModel::Single { variant, .. } => *variant,
            RiskModel::Ensemble(_) => Variant::MultiSA,
        }
    }
}

impl Predictor for RiskModel {
    fn linear_predictors(&self, cohort: &Cohort) -> Result<Vec<f64>> {
        match self {
            RiskModel::Single { design, model, .. } => {
                let values = design.encode(cohort)?;
                let p = design.feature_names.len() + design.indicator_levels.len();
                if p == 0 {
                    return Ok(vec![model.coefficients[0]; cohort.len()]);
                }
                model.linear_predictors(&values)
            }
            RiskModel::Ensemble(ensemble) => {
                ensemble.design.check_cohort(cohort)?;
                let levels = cohort.groups().levels();
                let routed: Vec<Option<&FittedModel>> = levels.iter().map(|l| ensemble.members.get(l)).collect();
                let index = cohort.groups().index();
                (0..cohort.len())
                    .map(|i| {
                        let member = routed[index[i]].ok_or_else(|| Error::UnknownGroup(levels[index[i]].clone()))?;
                        member.linear_predictor(cohort.row(i))
                    })
                    .collect()
            }
        }
    }
}

/// Everything needed to (re)train a model variant on any cohort.
#[derive(Debug, Clone, Default)]
pub struct ModelRecipe {
    pub variant: Option<Variant>,
    pub multi: MultiSaOptions,
    /// Pre-trained propensity models reused by every MultiSA training call.
    pub fixed_propensity: Option<Arc<BTreeMap<String, Option<FittedModel>>>>,
}

impl ModelRecipe {
    pub fn new(variant: Variant) -> Self {
        Self { variant: Some(variant), ..Self::default() }
    }

    pub fn with_multi(mut self, multi: MultiSaOptions) -> Self {
        self.multi = multi;
        self
    }

    /// Reuses propensity models trained on `cohort` in every later fit.
    pub fn freeze_propensity(mut self, cohort: &Cohort) -> Result<Self> {
        self.fixed_propensity = Some(Arc::new(fit_propensity_models(cohort, &self.multi.penalty)?));
        Ok(self)
    }

    pub fn fit(&self, cohort: &Cohort) -> Result<RiskModel> {
        let variant = self.variant.unwrap_or(Variant::NoSA);
        match variant {
            Variant::NoSA | Variant::SingleSA => {
                let design = DesignSpec::for_cohort(cohort, variant);
                let mut model = glm::fit_logistic(&design.design(cohort)?, cohort.outcome(), None)?;
                model.training_meta.variant = variant.label().into();
                Ok(RiskModel::Single { variant, design, model })
            }
            Variant::MultiSA => {
                let ensemble = match &self.fixed_propensity {
                    Some(p) => fit_multi_sa_with_propensity(cohort, (**p).clone(), self.multi.forgetting_factor)?,
                    None => fit_multi_sa(cohort, &self.multi)?,
                };
                Ok(RiskModel::Ensemble(ensemble))
            }
        }
    }
}

impl Trainer for ModelRecipe {
    type Model = RiskModel;

    fn train(&self, cohort: &Cohort) -> Result<RiskModel> {
        self.fit(cohort)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cohort() -> Cohort {
        let groups = ["a", "b", "b", "c", "b", "a", "c", "b"];
        let outcome = [true, false, true, false, false, true, true, false];
        let x: Vec<f64> = (0..8).map(|i| i as f64 * 0.5 - 1.0).collect();
        Cohort::new(
            (0..8).map(|i| i.to_string()).collect(),
            groups.iter().map(|s| s.to_string()).collect(),
            outcome.to_vec(),
            vec!["x".into()],
            x,
        )
        .unwrap()
    }

    #[test]
    fn weight_examples() {
        let w = propensity_weights(&[0.3, 0.2, 0.9], &[true, false, false], 1.0, 1.0).unwrap();
        assert_eq!(w[0], 1.0);
        assert!((w[1] - 0.25).abs() < 1e-15);
        assert_eq!(w[2], 1.0);
        assert!(propensity_weights(&[0.0], &[false], 1.0, 1.0).is_err());
        assert!(propensity_weights(&[1.0], &[false], 1.0, 1.0).is_err());
        assert!(propensity_weights(&[0.5], &[false], 1.0, 0.0).is_err());
        assert!(propensity_weights(&[0.5], &[false], 0.0, 1.0).is_err());
    }

    #[test]
    fn single_sa_adds_indicators_for_non_reference_levels() {
        let c = cohort();
        let nosa = build_design(&c, Variant::NoSA).unwrap();
        let single = build_design(&c, Variant::SingleSA).unwrap();
        assert_eq!(single.cols(), nosa.cols() + 2);
        let spec = DesignSpec::for_cohort(&c, Variant::SingleSA);
        assert_eq!(spec.reference_level.as_deref(), Some("b"));
        assert_eq!(spec.column_names(), vec!["x", "group=a", "group=c"]);
    }

    #[test]
    fn nosa_design_ignores_labels() {
        let c = cohort();
        let relabelled = c.with_groups(vec!["z".into(); 8]).unwrap();
        assert_eq!(build_design(&c, Variant::NoSA).unwrap(), build_design(&relabelled, Variant::NoSA).unwrap());
    }

    #[test]
    fn single_class_group_is_rejected() {
        let c = cohort()
            .with_groups(["a", "b", "b", "c", "b", "a", "c", "b"].iter().map(|s| s.to_string()).collect())
            .unwrap();
        // group "a" only has positives
        assert_eq!(fit_multi_sa(&c, &MultiSaOptions::default()).unwrap_err(), Error::SingleClass("a".into()));
    }

    #[test]
    fn routing_uses_member_models() {
        let mut members = BTreeMap::new();
        members.insert("a".to_string(), FittedModel::from_coefficients(vec![-1.0, 0.5], vec!["x".into()]).unwrap());
        members.insert("b".to_string(), FittedModel::from_coefficients(vec![1.0, 0.5], vec!["x".into()]).unwrap());
        let ensemble = EnsembleModel {
            design: DesignSpec { feature_names: vec!["x".into()], indicator_levels: vec![], reference_level: None },
            members,
            propensity: BTreeMap::new(),
            forgetting_factor: 1.0,
            prior_ratio: BTreeMap::new(),
        };
        let a = predict_ensemble(&ensemble, &[0.3], "a").unwrap();
        let b = predict_ensemble(&ensemble, &[0.3], "b").unwrap();
        assert_eq!(a, ensemble.members["a"].predict_prob(&[0.3]).unwrap());
        assert!(a < b);
        assert_eq!(predict_ensemble(&ensemble, &[0.3], "c").unwrap_err(), Error::UnknownGroup("c".into()));
    }

    #[test]
    fn variant_names_parse() {
        assert_eq!("LogSingleSA".parse::<Variant>().unwrap(), Variant::SingleSA);
        assert_eq!("multisa".parse::<Variant>().unwrap(), Variant::MultiSA);
        assert!("xgb".parse::<Variant>().is_err());
    }
}
