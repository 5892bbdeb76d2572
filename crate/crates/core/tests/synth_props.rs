use proptest::prelude::*;
use snb_core::ensemble::{self, MultiSaOptions, Variant};
use snb_core::glm;
use snb_core::synth::{self, CohortSpec, Distribution, FeatureSpec, GroupSpec, OutcomeSampling};

fn spec(seed: u64, prevalences: &[f64], coef: f64) -> CohortSpec {
    CohortSpec {
        groups: prevalences
            .iter()
            .enumerate()
            .map(|(i, &p)| GroupSpec { label: format!("g{i}"), size: 400 + 100 * i, prevalence: p })
            .collect(),
        features: vec![
            FeatureSpec { name: "z".into(), distribution: Distribution::StandardNormal, coefficient: coef },
            FeatureSpec {
                name: "b".into(),
                distribution: Distribution::Binary { rate: 0.2 },
                coefficient: -coef / 2.0,
            },
        ],
        covariate_shift: Default::default(),
        seed,
        outcome_sampling: OutcomeSampling::Bernoulli,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn solved_intercepts_hit_target(seed in any::<u64>(), p in prop::collection::vec(0.005..0.6f64, 1..4), coef in -2.0..2.0f64) {
        let s = spec(seed, &p, coef);
        let generated = synth::generate(&s).unwrap();
        for g in &s.groups {
            prop_assert!((generated.expected_prevalence[&g.label] - g.prevalence).abs() < 1e-6);
        }
        prop_assert_eq!(generated.cohort.len(), s.total_size());
    }

    #[test]
    fn generation_is_deterministic(seed in any::<u64>()) {
        let s = spec(seed, &[0.1, 0.3], 1.0);
        prop_assert_eq!(synth::generate_cohort(&s).unwrap(), synth::generate_cohort(&s).unwrap());
    }

    #[test]
    fn fixed_count_events_are_exact(seed in any::<u64>(), p in 0.01..0.5f64) {
        let mut s = spec(seed, &[p, p / 2.0], 1.5);
        s.outcome_sampling = OutcomeSampling::FixedCount;
        let c = synth::generate_cohort(&s).unwrap();
        for g in &s.groups {
            let rows = (0..c.len()).filter(|&i| c.group_label(i) == g.label);
            let events = rows.filter(|&i| c.outcome()[i]).count();
            prop_assert_eq!(events, (g.prevalence * g.size as f64).round() as usize);
        }
    }
}

#[test]
fn equal_groups_fit_like_the_pooled_model() {
    let mut s = spec(3, &[0.2, 0.2], 1.0);
    for g in &mut s.groups {
        g.size = 25_000;
    }
    let cohort = synth::generate_cohort(&s).unwrap();
    let pooled =
        glm::fit_logistic(&ensemble::build_design(&cohort, Variant::NoSA).unwrap(), cohort.outcome(), None).unwrap();
    let model = ensemble::fit_multi_sa(&cohort, &MultiSaOptions::default()).unwrap();
    for g in ["g0", "g1"] {
        for (a, b) in pooled.coefficients.iter().zip(&model.member(g).unwrap().coefficients) {
            assert!((a - b).abs() < 0.1, "{g}: {a} vs {b}");
        }
    }
}

#[test]
fn preset_groups_are_all_present() {
    for s in [synth::preset_diabetes(0.02).unwrap(), synth::preset_lung(0.01).unwrap()] {
        let c = synth::generate_cohort(&s).unwrap();
        let levels: Vec<&str> = c.groups().levels().iter().map(String::as_str).collect();
        let expected: Vec<&str> = s.groups.iter().map(|g| g.label.as_str()).collect();
        assert_eq!(levels, expected);
        assert_eq!(c.n_features(), 10);
    }
}

#[test]
fn empty_spec_is_rejected() {
    let mut s = spec(1, &[0.2], 1.0);
    s.groups.clear();
    assert!(synth::generate(&s).is_err());
}
