#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use snb_core::glm::expit;
use snb_core::Cohort;

/// Random logistic data: `n` rows, `p` features, labels from `groups`
/// assigned round-robin with per-group intercept shifts.
pub fn random_cohort(n: usize, p: usize, groups: &[&str], seed: u64) -> Cohort {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beta: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut features = Vec::with_capacity(n * p);
    let mut outcome = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let g = i % groups.len();
        let row: Vec<f64> = (0..p).map(|_| rng.random_range(-2.0..2.0) + 0.3 * g as f64).collect();
        let eta = row.iter().zip(&beta).map(|(x, b)| x * b).sum::<f64>() - 1.0 + 0.4 * g as f64;
        outcome.push(rng.random_bool(expit(eta)));
        features.extend(row);
        labels.push(groups[g].to_string());
    }
    let ids = (0..n).map(|i| i.to_string()).collect();
    let names = (0..p).map(|j| format!("x{j}")).collect();
    Cohort::new(ids, labels, outcome, names, features).unwrap()
}
