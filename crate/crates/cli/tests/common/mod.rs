#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use snb_cli::config::{BootstrapConfig, RunConfig, UtilityConfig};
use snb_core::ensemble::Variant;
use snb_core::policy::GroupThresholds;
use snb_core::synth::{generate_cohort, CohortSpec, Distribution, FeatureSpec, GroupSpec, OutcomeSampling};
use snb_core::Cohort;

pub fn small_spec(seed: u64) -> CohortSpec {
    let groups = [("A", 500, 0.12), ("B", 300, 0.20), ("C", 250, 0.08)]
        .into_iter()
        .map(|(label, size, prevalence)| GroupSpec { label: label.into(), size, prevalence })
        .collect();
    let features = vec![
        FeatureSpec { name: "x1".into(), distribution: Distribution::StandardNormal, coefficient: 0.9 },
        FeatureSpec { name: "x2".into(), distribution: Distribution::StandardNormal, coefficient: -0.5 },
        FeatureSpec { name: "flag".into(), distribution: Distribution::Binary { rate: 0.3 }, coefficient: 0.6 },
    ];
    let mut shift = BTreeMap::new();
    shift.insert("B".to_string(), BTreeMap::from([("x1".to_string(), 0.4)]));
    CohortSpec { groups, features, covariate_shift: shift, seed, outcome_sampling: OutcomeSampling::Bernoulli }
}

pub fn small_cohort(seed: u64) -> Cohort {
    generate_cohort(&small_spec(seed)).unwrap()
}

/// Writes the small cohort as CSV in `dir` and returns its path.
pub fn small_cohort_csv(dir: &Path, seed: u64) -> PathBuf {
    let path = dir.join("cohort.csv");
    snb_cli::write_cohort(&small_cohort(seed), &path).unwrap();
    path
}

pub fn small_config(cohort: PathBuf, output_dir: PathBuf, replicates: usize) -> RunConfig {
    RunConfig {
        cohort: Some(cohort),
        variants: Some(vec![Variant::NoSA, Variant::SingleSA]),
        utility: UtilityConfig { t_star: Some(GroupThresholds::Uniform(0.15)), lambda: None },
        bootstrap: BootstrapConfig { replicates, ..BootstrapConfig::default() },
        output_dir: Some(output_dir),
        seed: Some(7),
        ..RunConfig::default()
    }
}

/// Sorted relative paths and contents of every file under `dir`.
pub fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}
