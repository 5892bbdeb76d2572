use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use snb_core::ensemble::{ModelRecipe, Variant};
use snb_core::glm::fit_logistic;
use snb_core::metrics::{decision_curve, default_grid, threshold_grid};
use snb_core::policy::{enumerate_two_tier, evaluate_candidates, pareto_front, BenefitParams, GroupedIndex, Objective};
use snb_core::synth::{generate_cohort, preset_lung};
use snb_core::validation::{c_statistic, optimism_corrected, BootstrapOptions, MetricContext};
use snb_core::{CapacityConstraint, Cohort, DesignMatrix, GroupLabels};

fn scores_and_labels(n: usize, seed: u64) -> (Vec<f64>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scores: Vec<f64> = (0..n).map(|_| rng.random::<f64>().powi(4)).collect();
    let labels = scores.iter().map(|&s| rng.random::<f64>() < s).collect();
    (scores, labels)
}

fn lung(scale: f64) -> Cohort {
    generate_cohort(&preset_lung(scale).unwrap()).unwrap()
}

fn bench_c_statistic(c: &mut Criterion) {
    let mut group = c.benchmark_group("c_statistic");
    for n in [10_000, 100_000] {
        let (scores, labels) = scores_and_labels(n, 1);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| c_statistic(&scores, &labels).unwrap())
        });
    }
    group.finish();
}

fn bench_irls(c: &mut Criterion) {
    let cohort = lung(0.1);
    let design = DesignMatrix::new(cohort.len(), cohort.features(), cohort.feature_names().to_vec(), true).unwrap();
    c.bench_function("irls_lung_48k", |b| b.iter(|| fit_logistic(&design, cohort.outcome(), None).unwrap()));
}

fn bench_decision_curve(c: &mut Criterion) {
    let (scores, labels) = scores_and_labels(100_000, 2);
    let grid = default_grid();
    c.bench_function("decision_curve_100k_300", |b| {
        b.iter(|| decision_curve(&scores, &labels, &grid, Some(0.2)).unwrap())
    });
}

fn bench_pareto(c: &mut Criterion) {
    let (scores, labels) = scores_and_labels(50_000, 3);
    let names = ["Q1", "Q2", "Q3", "Q4", "Q5"];
    let groups = GroupLabels::from_labels(&(0..scores.len()).map(|i| names[i % 5]).collect::<Vec<_>>());
    let params = BenefitParams::uniform(&names, 0.2, 0.015);
    let grid = threshold_grid(0.015, 0.10, 0.0005).unwrap();
    let policies = enumerate_two_tier(&grid, "Q5", &names).unwrap();
    let index = GroupedIndex::new(&scores, &labels, &groups).unwrap();
    let objective = Objective::TargetGroup("Q5".into());
    c.bench_function("pareto_two_tier_evaluate", |b| {
        b.iter(|| evaluate_candidates(&policies, &index, &params, &objective).unwrap())
    });
    let points = evaluate_candidates(&policies, &index, &params, &objective).unwrap();
    let cap = CapacityConstraint::new(0.5).unwrap();
    c.bench_function("pareto_front_filter", |b| b.iter(|| pareto_front(&points, cap).unwrap()));
}

fn bench_bootstrap(c: &mut Criterion) {
    let cohort = lung(0.1);
    let params = BenefitParams::uniform(cohort.groups().levels(), 0.2, 0.015);
    let context = MetricContext::new(params, snb_core::policy::GroupThresholds::Uniform(0.015), &cohort);
    let recipe = ModelRecipe::new(Variant::SingleSA);
    let opts = BootstrapOptions { replicates: 20, ..BootstrapOptions::default() };
    let mut group = c.benchmark_group("bootstrap");
    group.sample_size(10);
    group.bench_function("optimism_singlesa_20", |b| {
        b.iter(|| optimism_corrected(&cohort, &recipe, &context, &opts).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench_c_statistic, bench_irls, bench_decision_curve, bench_pareto, bench_bootstrap);
criterion_main!(benches);
