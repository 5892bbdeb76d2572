mod common;

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use snb_cli::config::{GridConfig, ParetoConfig, Preset, RunConfig};
use snb_cli::pipeline::{run_pipeline, Stages};
use snb_cli::report::{num, SNB_COLUMNS, SNB_TABLE};
use snb_cli::{emit_report, load_cohort};
use snb_core::ensemble::{ModelRecipe, Variant};
use snb_core::glm::expit;
use snb_core::metrics::per_10k;
use snb_core::policy::{evaluate_policy, GroupThresholds};
use snb_core::validation::Predictor;
use snb_core::PolicySpec;

fn read_table(path: &std::path::Path) -> Vec<BTreeMap<String, String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let headers = r.headers().unwrap().clone();
    r.records()
        .map(|rec| headers.iter().zip(rec.unwrap().iter()).map(|(h, v)| (h.to_string(), v.to_string())).collect())
        .collect()
}

#[test]
fn same_seed_gives_byte_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cohort = common::small_cohort_csv(dir.path(), 11);
    let mut snaps = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let mut config = common::small_config(cohort.clone(), out.clone(), 20);
        config.variants = Some(Variant::ALL.to_vec());
        config.pareto = Some(ParetoConfig {
            grid: GridConfig { from: 0.05, to: 0.3, step: 0.05 },
            target: Some("B".into()),
            caps: vec![0.3, 0.1],
            optimism_corrected: true,
        });
        let artifacts = run_pipeline(&config, Stages::ALL).unwrap();
        snb_cli::write_artifacts(&artifacts, &out).unwrap();
        emit_report(&artifacts, &out).unwrap();
        snaps.push(common::snapshot(&out));
    }
    assert!(snaps[0].len() > 10);
    assert_eq!(snaps[0], snaps[1]);
}

#[test]
fn worker_count_does_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cohort = common::small_cohort_csv(dir.path(), 12);
    let mut snaps = Vec::new();
    for workers in [1, 3] {
        let out = dir.path().join(format!("w{workers}"));
        let mut config = common::small_config(cohort.clone(), out.clone(), 30);
        config.workers = Some(workers);
        let artifacts = run_pipeline(&config, Stages::ALL).unwrap();
        emit_report(&artifacts, &out).unwrap();
        snaps.push(common::snapshot(&out));
    }
    assert_eq!(snaps[0], snaps[1]);
}

#[test]
fn single_replicate_runs_and_labels_intervals_unreliable() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let config = common::small_config(common::small_cohort_csv(dir.path(), 5), out.clone(), 1);
    let artifacts = run_pipeline(&config, Stages::ALL).unwrap();
    emit_report(&artifacts, &out).unwrap();
    for m in &artifacts.models {
        let v = m.validation.as_ref().unwrap();
        assert!(!v.intervals.is_empty());
        assert!(v.intervals.values().all(|iv| !iv.reliable && iv.replicates_used == 1));
        assert!(v.intervals.values().all(|iv| iv.method.contains("percentile bootstrap")));
    }
    let rows = read_table(&out.join(SNB_TABLE));
    let corrected: Vec<_> = rows.iter().filter(|r| r["estimate"] == "optimism_corrected").collect();
    assert!(!corrected.is_empty());
    assert!(corrected.iter().all(|r| r["ci_reliable"] == "false" && !r["ci_method"].is_empty()));
}

#[test]
fn table_cells_recompute_from_core_operations() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cohort_path = common::small_cohort_csv(dir.path(), 21);
    let mut config = common::small_config(cohort_path.clone(), out.clone(), 10);
    config.policies = Some(vec![
        PolicySpec::TreatNone,
        PolicySpec::TreatAll,
        PolicySpec::RandomFraction { p: 0.05, mode: Default::default() },
        PolicySpec::Threshold { thresholds: GroupThresholds::Uniform(0.1) },
    ]);
    let artifacts = run_pipeline(&config, Stages { validate: false, evaluate: true, pareto: false }).unwrap();
    emit_report(&artifacts, &out).unwrap();

    let cohort = load_cohort(&cohort_path, "group").unwrap();
    let params = config.benefit_params(&cohort).unwrap();
    let mut reports = BTreeMap::new();
    for variant in [Variant::NoSA, Variant::SingleSA] {
        let model = ModelRecipe::new(variant).fit(&cohort).unwrap();
        let scores: Vec<f64> = model.linear_predictors(&cohort).unwrap().into_iter().map(expit).collect();
        let mut policies: Vec<(String, PolicySpec)> = config.policies().into_iter().map(|p| (p.label(), p)).collect();
        let own = PolicySpec::Threshold { thresholds: GroupThresholds::PerGroup(params.t_star.clone()) };
        policies.push((format!("{variant} at t*"), own));
        for (label, p) in policies {
            let r = evaluate_policy(&p, &scores, cohort.outcome(), cohort.groups(), &params).unwrap();
            reports.insert((variant.label().to_string(), label), r);
        }
    }

    let rows = read_table(&out.join(SNB_TABLE));
    let mut rng = cell_rng();
    let numeric = ["tp", "fp", "fn", "tn", "flagged_fraction", "snb", "snb_per_10k", "gap_vs_reference"];
    for _ in 0..20 {
        let row = rows.choose(&mut rng).unwrap();
        let column = *numeric.choose(&mut rng).unwrap();
        let r = &reports[&(row["variant"].clone(), row["policy"].clone())];
        let group = row["group"].as_str();
        let expected = if group == "overall" {
            let c = &r.overall_counts;
            match column {
                "tp" => num(c.tp),
                "fp" => num(c.fp),
                "fn" => num(c.fn_),
                "tn" => num(c.tn),
                "flagged_fraction" => num(r.flagged_fraction),
                "snb" => num(r.overall_snb),
                "snb_per_10k" => per_10k(r.overall_snb).to_string(),
                _ => String::new(),
            }
        } else {
            let s = r.group(group).unwrap();
            let c = &s.counts;
            match column {
                "tp" => num(c.tp),
                "fp" => num(c.fp),
                "fn" => num(c.fn_),
                "tn" => num(c.tn),
                "flagged_fraction" => num(c.flagged() / c.n()),
                "snb" => num(s.snb),
                "snb_per_10k" => per_10k(s.snb).to_string(),
                _ => num(r.group(&artifacts.settings.reference_group).unwrap().snb - s.snb),
            }
        };
        assert_eq!(row[column], expected, "{} / {} / {group} / {column}", row["variant"], row["policy"]);
    }
    assert_eq!(rows[0].len(), SNB_COLUMNS.len());
}

fn cell_rng() -> rand::rngs::StdRng {
    rand::rngs::StdRng::seed_from_u64(2024)
}

#[test]
fn empty_policy_list_skips_bar_plot_with_notice() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let mut config = common::small_config(common::small_cohort_csv(dir.path(), 8), out.clone(), 5);
    config.policies = Some(Vec::new());
    let artifacts = run_pipeline(&config, Stages::ALL).unwrap();
    let emitted = emit_report(&artifacts, &out).unwrap();
    assert!(emitted.notices.iter().any(|n| n.contains("bar plot") && n.contains("skipped")));
    for table in ["metrics.json", "snb_by_group.csv", "decision_curves.csv"] {
        assert!(out.join(table).exists(), "{table}");
    }
    assert!(!emitted.files.iter().any(|f| f.to_string_lossy().contains("snb_bars")));
    // the model's own policy is still evaluated
    let e = artifacts.models[0].evaluation.as_ref().unwrap();
    assert_eq!(e.policies.len(), 1);
}

#[test]
fn plots_mark_reference_policies_and_t_star() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let mut config = common::small_config(common::small_cohort_csv(dir.path(), 9), out.clone(), 5);
    config.pareto = Some(ParetoConfig {
        grid: GridConfig { from: 0.05, to: 0.5, step: 0.05 },
        target: None,
        caps: vec![0.2],
        optimism_corrected: false,
    });
    let artifacts = run_pipeline(&config, Stages::ALL).unwrap();
    emit_report(&artifacts, &out).unwrap();
    let curve = std::fs::read_to_string(out.join("decision_curve_LogNoSA_A.svg")).unwrap();
    assert!(curve.contains("Treat.All") && curve.contains("Treat.No.One"));
    assert!(curve.contains("t* = 0.15") && curve.contains("#FF8C00"));
    let pareto = std::fs::read_to_string(out.join("pareto_LogNoSA_cap20.svg")).unwrap();
    assert!(pareto.contains("Treat No One"));
    let table = read_table(&out.join("pareto.csv"));
    assert!(table.iter().any(|r| r["point"] == "treat_no_one" && r["objective"] == "maximin"));
    assert!(table
        .iter()
        .filter(|r| r["point"] == "front")
        .all(|r| r["flagged_fraction"].parse::<f64>().unwrap() <= 0.2));
}

#[test]
fn gap_report_uses_reference_group_and_policy() {
    let dir = tempfile::tempdir().unwrap();
    let config = common::small_config(common::small_cohort_csv(dir.path(), 4), dir.path().join("o"), 5);
    let artifacts = run_pipeline(&config, Stages { validate: false, evaluate: true, pareto: false }).unwrap();
    // largest group is the default reference
    assert_eq!(artifacts.settings.reference_group, "A");
    let e = artifacts.models[0].evaluation.as_ref().unwrap();
    let baseline = e.gaps.iter().find(|g| g.policy == "Treat.No.One").unwrap();
    assert!(baseline.reduction.per_group.values().all(|&r| r == 0.0));
    assert_eq!(baseline.report.gaps_vs_reference["A"], 0.0);
}

#[test]
fn diabetes_preset_treat_no_one_matches_prevalences() {
    let config =
        RunConfig { preset: Some(Preset::Diabetes), variants: Some(vec![Variant::NoSA]), ..RunConfig::default() };
    let artifacts = run_pipeline(&config, Stages { validate: false, evaluate: true, pareto: false }).unwrap();
    assert_eq!(artifacts.settings.reference_group, "White");
    let e = artifacts.models[0].evaluation.as_ref().unwrap();
    let none = e.policies.iter().find(|r| r.policy == "Treat.No.One").unwrap();
    for (g, want) in [("Asian", 9380), ("Black", 9572), ("Other", 9679), ("White", 9801)] {
        let got = per_10k(none.group(g).unwrap().snb);
        assert!((got - want).abs() <= 3, "{g}: {got} vs {want}");
    }
}

#[test]
fn errors_name_the_failing_stage() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = common::small_config(dir.path().join("missing.csv"), dir.path().join("o"), 5);
    let err = format!("{:#}", run_pipeline(&config, Stages::ALL).unwrap_err());
    assert!(err.contains("stage `load cohort`"), "{err}");

    config.cohort = Some(common::small_cohort_csv(dir.path(), 1));
    config.pareto = Some(ParetoConfig {
        grid: GridConfig { from: 0.05, to: 0.3, step: 0.05 },
        target: Some("Z".into()),
        caps: vec![0.1],
        optimism_corrected: false,
    });
    let err = format!("{:#}", run_pipeline(&config, Stages::ALL).unwrap_err());
    assert!(err.contains("stage `pareto`") && err.contains("`Z`"), "{err}");

    config.pareto = None;
    config.bootstrap.replicates = 0;
    let err = format!("{:#}", run_pipeline(&config, Stages::ALL).unwrap_err());
    assert!(err.contains("stage `configure`"), "{err}");
}
