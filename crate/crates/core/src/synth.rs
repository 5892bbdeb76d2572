//! Seeded synthetic cohorts with per-group sizes, prevalences and covariate
//! shift, plus presets shaped like the diabetes and lung cancer use cases.
//!
//! Each group is generated from its own [`rng::stream`] (stream id = group
//! position in the spec), so output is fixed by the seed and the spec.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cohort::Cohort;
use crate::error::{Error, Result};
use crate::glm::{expit, logit};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Distribution {
    StandardNormal,
    Binary { rate: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub distribution: Distribution,
    /// Outcome log-odds per unit of the feature.
    pub coefficient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub label: String,
    pub size: usize,
    pub prevalence: f64,
}

/// How outcomes are drawn once each group's intercept is solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeSampling {
    /// Independent Bernoulli draws from each individual's risk.
    #[default]
    Bernoulli,
    /// Exactly `round(prevalence · size)` events per group, given to the
    /// largest values of linear predictor plus standard logistic noise.
    FixedCount,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub groups: Vec<GroupSpec>,
    pub features: Vec<FeatureSpec>,
    /// Group label → feature name → shift. Normal features move their mean;
    /// binary features move the log-odds of their rate.
    #[serde(default)]
    pub covariate_shift: BTreeMap<String, BTreeMap<String, f64>>,
    pub seed: u64,
    #[serde(default)]
    pub outcome_sampling: OutcomeSampling,
}

impl CohortSpec {
    pub fn validate(&self) -> Result<()> {
        if self.groups.is_empty() {
            return Err(Error::InvalidSpec("no groups".into()));
        }
        let mut labels = std::collections::BTreeSet::new();
        for g in &self.groups {
            if g.size == 0 {
                return Err(Error::InvalidSpec(format!("group `{}` has size 0", g.label)));
            }
            if !(g.prevalence > 0.0 && g.prevalence < 1.0) {
                return Err(Error::OutOfRange { what: "prevalence", value: g.prevalence });
            }
            if !labels.insert(g.label.as_str()) {
                return Err(Error::InvalidSpec(format!("duplicate group `{}`", g.label)));
            }
        }
        let mut names = std::collections::BTreeSet::new();
        for f in &self.features {
            if !f.coefficient.is_finite() {
                return Err(Error::OutOfRange { what: "coefficient", value: f.coefficient });
            }
            if let Distribution::Binary { rate } = f.distribution {
                if !(rate > 0.0 && rate < 1.0) {
                    return Err(Error::OutOfRange { what: "binary rate", value: rate });
                }
            }
            if !names.insert(f.name.as_str()) {
                return Err(Error::InvalidSpec(format!("duplicate feature `{}`", f.name)));
            }
        }
        for (group, shifts) in &self.covariate_shift {
            if !labels.contains(group.as_str()) {
                return Err(Error::UnknownGroup(group.clone()));
            }
            for (feature, shift) in shifts {
                if !names.contains(feature.as_str()) {
                    return Err(Error::InvalidSpec(format!("shift for unknown feature `{feature}`")));
                }
                if !shift.is_finite() {
                    return Err(Error::OutOfRange { what: "covariate shift", value: *shift });
                }
            }
        }
        Ok(())
    }

    pub fn total_size(&self) -> usize {
        self.groups.iter().map(|g| g.size).sum()
    }
}

/// A generated cohort with the per-group intercepts that calibrate it.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCohort {
    pub cohort: Cohort,
    pub intercepts: BTreeMap<String, f64>,
    /// Mean risk per group under the solved intercept, before outcome sampling.
    pub expected_prevalence: BTreeMap<String, f64>,
}

fn mean_risk(alpha: f64, eta: &[f64]) -> f64 {
    eta.iter().map(|&e| expit(alpha + e)).sum::<f64>() / eta.len() as f64
}

/// Intercept `α` with `mean(expit(α + η)) = target`, by safeguarded Newton.
pub fn solve_intercept(eta: &[f64], target: f64) -> Option<f64> {
    let spread = eta.iter().fold(0.0f64, |m, e| m.max(e.abs()));
    let mut lo = logit(target) - spread - 1.0;
    let mut hi = logit(target) + spread + 1.0;
    let mut alpha = logit(target) - eta.iter().sum::<f64>() / eta.len() as f64;
    alpha = alpha.clamp(lo, hi);
    for _ in 0..200 {
        let (mut m, mut slope) = (0.0, 0.0);
        for &e in eta {
            let p = expit(alpha + e);
            m += p;
            slope += p * (1.0 - p);
        }
        let n = eta.len() as f64;
        let f = m / n - target;
        if f.abs() < 1e-13 {
            break;
        }
        if f > 0.0 {
            hi = alpha;
        } else {
            lo = alpha;
        }
        let newton = alpha - f / (slope / n);
        alpha = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if hi - lo < 1e-15 {
            break;
        }
    }
    ((mean_risk(alpha, eta) - target).abs() <= 1e-6).then_some(alpha)
}

fn standard_logistic(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return (u / (1.0 - u)).ln();
        }
    }
}

/// Generates a cohort and reports the solved intercepts.
pub fn generate(spec: &CohortSpec) -> Result<SyntheticCohort> {
    spec.validate()?;
    let p = spec.features.len();
    let total = spec.total_size();
    let mut ids = Vec::with_capacity(total);
    let mut labels = Vec::with_capacity(total);
    let mut outcome = Vec::with_capacity(total);
    let mut features = Vec::with_capacity(total * p);
    let mut intercepts = BTreeMap::new();
    let mut expected_prevalence = BTreeMap::new();
    let no_shift = BTreeMap::new();

    for (g_pos, group) in spec.groups.iter().enumerate() {
        let mut rng = rng::stream(spec.seed, g_pos as u64);
        let shifts = spec.covariate_shift.get(&group.label).unwrap_or(&no_shift);
        let params: Vec<(Distribution, f64)> = spec
            .features
            .iter()
            .map(|f| {
                let shift = shifts.get(&f.name).copied().unwrap_or(0.0);
                let d = match f.distribution {
                    Distribution::StandardNormal => Distribution::StandardNormal,
                    Distribution::Binary { rate } => Distribution::Binary { rate: expit(logit(rate) + shift) },
                };
                (d, shift)
            })
            .collect();

        let start = features.len();
        let mut eta = Vec::with_capacity(group.size);
        for _ in 0..group.size {
            let mut lp = 0.0;
            for (f, &(d, shift)) in spec.features.iter().zip(&params) {
                let x = match d {
                    Distribution::StandardNormal => rng.sample::<f64, _>(StandardNormal) + shift,
                    Distribution::Binary { rate } => f64::from(rng.random_bool(rate) as u8),
                };
                lp += f.coefficient * x;
                features.push(x);
            }
            eta.push(lp);
        }
        debug_assert_eq!(features.len() - start, group.size * p);

        let alpha = solve_intercept(&eta, group.prevalence)
            .ok_or_else(|| Error::InterceptSolve { group: group.label.clone(), prevalence: group.prevalence })?;
        intercepts.insert(group.label.clone(), alpha);
        expected_prevalence.insert(group.label.clone(), mean_risk(alpha, &eta));

        match spec.outcome_sampling {
            OutcomeSampling::Bernoulli => {
                outcome.extend(eta.iter().map(|&e| rng.random::<f64>() < expit(alpha + e)));
            }
            OutcomeSampling::FixedCount => {
                let k = (group.prevalence * group.size as f64).round() as usize;
                let latent: Vec<f64> = eta.iter().map(|&e| alpha + e + standard_logistic(&mut rng)).collect();
                let mut order: Vec<usize> = (0..group.size).collect();
                order.sort_by(|&a, &b| latent[b].total_cmp(&latent[a]).then(a.cmp(&b)));
                let mut y = vec![false; group.size];
                for &i in &order[..k] {
                    y[i] = true;
                }
                outcome.extend(y);
            }
        }
        for i in 0..group.size {
            ids.push(format!("{}-{}", group.label, i + 1));
            labels.push(group.label.clone());
        }
    }

    let names = spec.features.iter().map(|f| f.name.clone()).collect();
    let cohort = Cohort::new(ids, labels, outcome, names, features)?;
    Ok(SyntheticCohort { cohort, intercepts, expected_prevalence })
}

pub fn generate_cohort(spec: &CohortSpec) -> Result<Cohort> {
    generate(spec).map(|s| s.cohort)
}

fn scaled(size: usize, scale: f64) -> usize {
    ((size as f64 * scale).round() as usize).max(1)
}

fn check_scale(scale: f64) -> Result<()> {
    if scale > 0.0 && scale.is_finite() {
        Ok(())
    } else {
        Err(Error::OutOfRange { what: "scale", value: scale })
    }
}

fn normal(name: &str, coefficient: f64) -> FeatureSpec {
    FeatureSpec { name: name.into(), distribution: Distribution::StandardNormal, coefficient }
}

fn binary(name: &str, rate: f64, coefficient: f64) -> FeatureSpec {
    FeatureSpec { name: name.into(), distribution: Distribution::Binary { rate }, coefficient }
}

fn shift_table(labels: &[&str], rows: &[(&str, [f64; 5])]) -> BTreeMap<String, BTreeMap<String, f64>> {
    labels
        .iter()
        .enumerate()
        .map(|(g, label)| {
            let shifts = rows.iter().filter(|(_, s)| s[g] != 0.0).map(|(f, s)| (f.to_string(), s[g])).collect();
            (label.to_string(), shifts)
        })
        .collect()
}

/// Group label, cohort size and event count behind the diabetes preset.
pub const DIABETES_GROUPS: [(&str, usize, usize); 4] =
    [("Asian", 10_303, 640), ("Black", 7_476, 320), ("Other", 8_363, 270), ("White", 450_214, 8_933)];

/// Group label, cohort size and event count behind the lung cancer preset.
pub const LUNG_GROUPS: [(&str, usize, usize); 5] =
    [("Q1", 95_394, 236), ("Q2", 96_366, 289), ("Q3", 95_720, 299), ("Q4", 96_411, 393), ("Q5", 95_998, 644)];

pub const PRESET_SEED: u64 = 20240601;

fn groups_from(table: &[(&str, usize, usize)], scale: f64) -> Vec<GroupSpec> {
    table
        .iter()
        .map(|&(label, size, events)| GroupSpec {
            label: label.into(),
            size: scaled(size, scale),
            prevalence: events as f64 / size as f64,
        })
        .collect()
}

/// Four ethnic groups with 5-year diabetes incidence 6.2/4.3/3.2/2.0%.
pub fn preset_diabetes(scale: f64) -> Result<CohortSpec> {
    check_scale(scale)?;
    let features = vec![
        normal("age", 0.40),
        normal("bmi", 0.60),
        normal("waist", 0.50),
        normal("sbp", 0.18),
        normal("townsend", 0.16),
        normal("hdl", -0.32),
        normal("activity", -0.22),
        binary("family_history_diabetes", 0.13, 0.55),
        binary("hypertension", 0.25, 0.45),
        binary("statins", 0.15, 0.32),
    ];
    let labels = ["Asian", "Black", "Other", "White"];
    let covariate_shift = shift_table(
        &labels,
        &[
            ("age", [-0.75, -1.0, -0.75, 0.0, 0.0]),
            ("bmi", [-0.13, 0.44, 0.04, 0.0, 0.0]),
            ("townsend", [0.67, 1.4, 0.8, 0.0, 0.0]),
            ("family_history_diabetes", [-0.94, -1.575, -0.58, 0.0, 0.0]),
            ("hypertension", [0.0, 0.436, -0.11, 0.0, 0.0]),
            ("statins", [0.35, -0.166, -0.166, 0.0, 0.0]),
        ],
    );
    Ok(CohortSpec {
        groups: groups_from(&DIABETES_GROUPS, scale),
        features,
        covariate_shift,
        seed: PRESET_SEED,
        outcome_sampling: OutcomeSampling::FixedCount,
    })
}

/// Five deprivation quintiles with 6-year lung cancer incidence rising from
/// 0.25% (Q1) to 0.67% (Q5).
pub fn preset_lung(scale: f64) -> Result<CohortSpec> {
    check_scale(scale)?;
    let features = vec![
        normal("age", 0.75),
        normal("pack_years", 0.6),
        binary("current_smoker", 0.062, 1.2),
        binary("previous_smoker", 0.33, 0.45),
        binary("family_lung_cancer", 0.12, 0.4),
        binary("emphysema", 0.011, 1.1),
        normal("bmi", -0.2),
        binary("statins", 0.15, 0.12),
        binary("previous_cancer", 0.046, 0.4),
        normal("fev", -0.4),
    ];
    let labels = ["Q1", "Q2", "Q3", "Q4", "Q5"];
    let covariate_shift = shift_table(
        &labels,
        &[
            ("age", [0.0, 0.12, 0.0, -0.12, -0.25]),
            ("pack_years", [0.0, 0.05, 0.1, 0.25, 0.5]),
            ("current_smoker", [0.0, 0.146, 0.353, 0.725, 1.267]),
            ("previous_smoker", [0.0, 0.04, 0.09, 0.09, 0.04]),
            ("family_lung_cancer", [0.0, 0.0, 0.091, 0.257, 0.606]),
            ("emphysema", [0.0, 0.088, 0.38, 0.555, 1.121]),
            ("bmi", [0.0, 0.0, 0.05, 0.1, 0.15]),
            ("statins", [0.0, 0.08, 0.15, 0.15, 0.35]),
            ("previous_cancer", [0.0, -0.023, -0.071, -0.2, -0.315]),
            ("fev", [0.0, 0.0, -0.05, -0.1, -0.2]),
        ],
    );
    Ok(CohortSpec {
        groups: groups_from(&LUNG_GROUPS, scale),
        features,
        covariate_shift,
        seed: PRESET_SEED,
        outcome_sampling: OutcomeSampling::FixedCount,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(n: usize, prevalence: f64, seed: u64) -> CohortSpec {
        CohortSpec {
            groups: vec![GroupSpec { label: "g".into(), size: n, prevalence }],
            features: vec![normal("x", 0.0), binary("b", 0.3, 0.0)],
            covariate_shift: BTreeMap::new(),
            seed,
            outcome_sampling: OutcomeSampling::Bernoulli,
        }
    }

    #[test]
    fn zero_effects_hit_prevalence() {
        let n = 100_000;
        let c = generate_cohort(&flat(n, 0.25, 7)).unwrap();
        let bound = 3.0 * (0.25f64 * 0.75 / n as f64).sqrt();
        assert!((c.prevalence() - 0.25).abs() < bound);
    }

    #[test]
    fn same_seed_same_cohort() {
        let spec = preset_lung(0.01).unwrap();
        assert_eq!(generate_cohort(&spec).unwrap(), generate_cohort(&spec).unwrap());
        let mut other = spec.clone();
        other.seed += 1;
        assert_ne!(generate_cohort(&spec).unwrap(), generate_cohort(&other).unwrap());
    }

    #[test]
    fn intercepts_calibrate_to_target() {
        let spec = preset_diabetes(0.05).unwrap();
        let s = generate(&spec).unwrap();
        for g in &spec.groups {
            assert!((s.expected_prevalence[&g.label] - g.prevalence).abs() < 1e-6, "{}", g.label);
        }
    }

    #[test]
    fn fixed_count_is_exact() {
        let spec = preset_diabetes(1.0).unwrap();
        let mut small = spec.clone();
        small.groups.truncate(2);
        small.covariate_shift.retain(|g, _| g == "Asian" || g == "Black");
        let c = generate_cohort(&small).unwrap();
        let prev = c.prevalence_by_group();
        assert_eq!(prev["Asian"], 640.0 / 10_303.0);
        assert_eq!(prev["Black"], 320.0 / 7_476.0);
    }

    #[test]
    fn preset_shapes() {
        let d = preset_diabetes(1.0).unwrap();
        assert_eq!(d.groups.iter().map(|g| g.size).collect::<Vec<_>>(), vec![10_303, 7_476, 8_363, 450_214]);
        assert!((d.groups[0].prevalence - 0.062).abs() < 5e-4);
        assert!((d.groups[3].prevalence - 0.020).abs() < 5e-4);
        let l = preset_lung(1.0).unwrap();
        assert_eq!(l.groups[4].prevalence, 644.0 / 95_998.0);
        assert_eq!(l.groups[0].prevalence, 236.0 / 95_394.0);
        assert_eq!(preset_lung(0.1).unwrap().groups[0].size, 9_539);
        assert!(preset_lung(0.0).is_err());
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(generate(&flat(10, 1.0, 1)).is_err());
        let mut s = flat(10, 0.5, 1);
        s.covariate_shift.insert("zz".into(), BTreeMap::new());
        assert_eq!(generate(&s).unwrap_err(), Error::UnknownGroup("zz".into()));
    }
}
