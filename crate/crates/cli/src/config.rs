//! Run configuration: a JSON document, defaults per preset, and flag overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use snb_core::ensemble::{MultiSaOptions, Variant};
use snb_core::metrics::{lambda_from_rrr, threshold_grid};
use snb_core::policy::{BenefitParams, GroupThresholds, HarmWeight, Objective, PolicySpec};
use snb_core::validation::Resampling;
use snb_core::{Cohort, ProxyRisk};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Diabetes,
    Lung,
}

impl Preset {
    pub fn t_star(self) -> f64 {
        match self {
            Preset::Diabetes => 0.15,
            Preset::Lung => 0.015,
        }
    }

    pub fn lambda(self) -> f64 {
        match self {
            Preset::Diabetes => 0.58,
            Preset::Lung => 0.20,
        }
    }

    pub fn reference_group(self) -> &'static str {
        match self {
            Preset::Diabetes => "White",
            Preset::Lung => "Q1",
        }
    }

    pub fn pareto(self) -> Option<ParetoConfig> {
        match self {
            Preset::Diabetes => None,
            Preset::Lung => Some(ParetoConfig {
                grid: GridConfig { from: 0.015, to: 0.10, step: 0.0005 },
                target: Some("Q5".into()),
                caps: vec![0.03, 0.01],
                optimism_corrected: true,
            }),
        }
    }
}

/// Evenly spaced thresholds `from..=to`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub from: f64,
    pub to: f64,
    pub step: f64,
}

impl GridConfig {
    pub fn values(&self) -> Result<Vec<f64>> {
        Ok(threshold_grid(self.from, self.to, self.step)?)
    }
}

/// Treatment-effect weight: one value, one per group, or derived from a proxy
/// adverse event as its relative risk reduction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaSetting {
    Uniform(f64),
    Proxy(ProxyRisk),
    PerGroup(BTreeMap<String, f64>),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UtilityConfig {
    pub t_star: Option<GroupThresholds>,
    pub lambda: Option<LambdaSetting>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub ci_level: f64,
    pub resampling: Resampling,
    /// Refit MultiSA propensity models in every replicate instead of once.
    pub retrain_propensity: bool,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self { replicates: 500, ci_level: 0.95, resampling: Resampling::Nonparametric, retrain_propensity: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParetoConfig {
    pub grid: GridConfig,
    /// Group traded off against overall sNB; absent means maximin.
    #[serde(default)]
    pub target: Option<String>,
    pub caps: Vec<f64>,
    #[serde(default = "yes")]
    pub optimism_corrected: bool,
}

fn yes() -> bool {
    true
}

impl ParetoConfig {
    pub fn objective(&self) -> Objective {
        match &self.target {
            Some(g) => Objective::TargetGroup(g.clone()),
            None => Objective::Maximin,
        }
    }
}

/// Configuration file contents. Every field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub cohort: Option<PathBuf>,
    pub preset: Option<Preset>,
    pub scale: Option<f64>,
    pub group_column: Option<String>,
    pub variants: Option<Vec<Variant>>,
    pub utility: UtilityConfig,
    pub policies: Option<Vec<PolicySpec>>,
    pub bootstrap: BootstrapConfig,
    pub pareto: Option<ParetoConfig>,
    pub reference_policy: Option<String>,
    pub reference_group: Option<String>,
    pub decision_curve_grid: Option<GridConfig>,
    pub harm_weight: HarmWeight,
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub multi_sa: MultiSaOptions,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub cohort: Option<PathBuf>,
    pub preset: Option<Preset>,
    pub scale: Option<f64>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub output_dir: Option<PathBuf>,
    pub replicates: Option<usize>,
}

pub const DEFAULT_SEED: u64 = 20240601;
pub const DEFAULT_REFERENCE_POLICY: &str = "Treat.No.One";

pub fn default_policies() -> Vec<PolicySpec> {
    vec![PolicySpec::TreatNone, PolicySpec::RandomFraction { p: 0.05, mode: Default::default() }]
}

pub fn default_decision_grid() -> GridConfig {
    GridConfig { from: 0.001, to: 0.300, step: 0.001 }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if o.cohort.is_some() {
            self.cohort = o.cohort.clone();
            self.preset = None;
        }
        if o.preset.is_some() {
            self.preset = o.preset;
            self.cohort = None;
        }
        macro_rules! set {
            ($($field:ident),*) => { $(if o.$field.is_some() { self.$field = o.$field.clone(); })* };
        }
        set!(scale, seed, workers, output_dir);
        if let Some(b) = o.replicates {
            self.bootstrap.replicates = b;
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| PathBuf::from("snb-output"))
    }

    pub fn group_column(&self) -> &str {
        self.group_column.as_deref().unwrap_or(crate::cohort_io::DEFAULT_GROUP_COLUMN)
    }

    pub fn variants(&self) -> Vec<Variant> {
        self.variants.clone().unwrap_or_else(|| Variant::ALL.to_vec())
    }

    pub fn policies(&self) -> Vec<PolicySpec> {
        self.policies.clone().unwrap_or_else(default_policies)
    }

    pub fn pareto(&self) -> Option<ParetoConfig> {
        self.pareto.clone().or_else(|| self.preset.and_then(Preset::pareto))
    }

    pub fn reference_policy(&self) -> &str {
        self.reference_policy.as_deref().unwrap_or(DEFAULT_REFERENCE_POLICY)
    }

    pub fn decision_grid(&self) -> Result<Vec<f64>> {
        self.decision_curve_grid.unwrap_or_else(default_decision_grid).values()
    }

    /// Checks everything that does not need the cohort.
    pub fn validate(&self) -> Result<()> {
        if self.cohort.is_none() && self.preset.is_none() {
            bail!("no cohort: give a cohort CSV path or a preset");
        }
        if let Some(s) = self.scale {
            if !(s > 0.0 && s.is_finite()) {
                bail!("scale must be positive, got {s}");
            }
        }
        if self.bootstrap.replicates < 1 {
            bail!("bootstrap replicates must be at least 1");
        }
        if !(self.bootstrap.ci_level > 0.0 && self.bootstrap.ci_level < 1.0) {
            bail!("ci_level must be in (0, 1), got {}", self.bootstrap.ci_level);
        }
        if self.workers == Some(0) {
            bail!("workers must be at least 1");
        }
        if self.variants().is_empty() {
            bail!("no model variants selected");
        }
        if let Some(t) = &self.utility.t_star {
            let values: Vec<f64> = match t {
                GroupThresholds::Uniform(v) => vec![*v],
                GroupThresholds::PerGroup(m) => m.values().copied().collect(),
            };
            if let Some(v) = values.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
                bail!("t* must be in (0, 1), got {v}");
            }
        } else if self.preset.is_none() {
            bail!("utility.t_star is required when no preset is used");
        }
        for p in self.policies() {
            p.validate().with_context(|| format!("policy {}", p.label()))?;
        }
        if let Some(p) = self.pareto() {
            if p.caps.is_empty() {
                bail!("pareto.caps is empty");
            }
            if let Some(c) = p.caps.iter().find(|c| !(**c > 0.0 && **c <= 1.0)) {
                bail!("pareto cap must be in (0, 1], got {c}");
            }
            p.grid.values().context("pareto.grid")?;
        }
        self.decision_grid().context("decision_curve_grid")?;
        Ok(())
    }

    /// Per-group λ and t* for a loaded cohort.
    pub fn benefit_params(&self, cohort: &Cohort) -> Result<BenefitParams> {
        let groups = cohort.groups().levels();
        let t_star = match &self.utility.t_star {
            Some(t) => t.clone(),
            None => GroupThresholds::Uniform(self.preset.map(Preset::t_star).context("t* missing")?),
        };
        let lambda = match &self.utility.lambda {
            Some(LambdaSetting::Proxy(proxy)) => LambdaSetting::Uniform(lambda_from_rrr(proxy)?),
            Some(l) => l.clone(),
            None => LambdaSetting::Uniform(self.preset.map(Preset::lambda).unwrap_or(1.0)),
        };
        let mut params = BenefitParams::uniform(groups, 1.0, 0.5).with_harm_weight(self.harm_weight);
        for g in groups {
            let t = t_star.for_group(g).with_context(|| format!("utility.t_star has no value for group `{g}`"))?;
            if !(t > 0.0 && t < 1.0) {
                bail!("t* for group `{g}` must be in (0, 1), got {t}");
            }
            let l = match &lambda {
                LambdaSetting::Uniform(v) => *v,
                LambdaSetting::PerGroup(m) => {
                    *m.get(g).with_context(|| format!("utility.lambda has no value for group `{g}`"))?
                }
                LambdaSetting::Proxy(_) => unreachable!(),
            };
            params.t_star.insert(g.clone(), t);
            params.lambda.insert(g.clone(), l);
        }
        Ok(params)
    }

    /// Reference group for gap reports: configured, else the preset's, else
    /// the largest group (first in sort order on ties).
    pub fn reference_group(&self, cohort: &Cohort) -> Result<String> {
        let levels = cohort.groups().levels();
        let chosen = match (&self.reference_group, self.preset) {
            (Some(g), _) => g.clone(),
            (None, Some(p)) if levels.iter().any(|l| l == p.reference_group()) => p.reference_group().to_string(),
            _ => {
                let counts = cohort.groups().counts();
                let best = (0..levels.len()).max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a))).unwrap();
                levels[best].clone()
            }
        };
        if !levels.contains(&chosen) {
            bail!("reference group `{chosen}` is not in the cohort");
        }
        Ok(chosen)
    }
}
