mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use snb_core::glm::{self, DesignMatrix};

fn data(seed: u64, n: usize, p: usize) -> (Vec<f64>, Vec<bool>, Vec<String>) {
    let c = common::random_cohort(n, p, &["a"], seed);
    (c.features().to_vec(), c.outcome().to_vec(), c.feature_names().to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn converged_fits_solve_score_equations(seed in any::<u64>(), n in 80usize..600, p in 1usize..5, standardize in any::<bool>()) {
        let (x, y, names) = data(seed, n, p);
        let design = DesignMatrix::new(n, &x, names, standardize).unwrap();
        if let Ok(fit) = glm::fit_logistic(&design, &y, None) {
            prop_assert!(fit.converged);
            prop_assert!(fit.gradient_norm < 1e-8, "gradient {}", fit.gradient_norm);
            let score = glm::score_vector(&fit, &design, &y, None).unwrap();
            prop_assert!(score.iter().all(|s| s.abs() < 1e-8));
        }
    }

    #[test]
    fn deviance_never_increases(seed in any::<u64>(), n in 50usize..400, p in 1usize..5) {
        let (x, y, names) = data(seed, n, p);
        let design = DesignMatrix::new(n, &x, names, false).unwrap();
        if let Ok(fit) = glm::fit_logistic(&design, &y, None) {
            for w in fit.deviance_trace.windows(2) {
                // accepted steps may differ from the previous iterate only by rounding
                prop_assert!(w[1] <= w[0] + 1e-12 * (1.0 + w[0].abs()), "{} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn row_order_does_not_matter(seed in any::<u64>(), n in 60usize..400, p in 1usize..4) {
        let (x, y, names) = data(seed, n, p);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let xp: Vec<f64> = order.iter().flat_map(|&i| x[i * p..(i + 1) * p].to_vec()).collect();
        let yp: Vec<bool> = order.iter().map(|&i| y[i]).collect();
        let a = glm::fit_logistic(&DesignMatrix::new(n, &x, names.clone(), false).unwrap(), &y, None);
        let b = glm::fit_logistic(&DesignMatrix::new(n, &xp, names, false).unwrap(), &yp, None);
        if let (Ok(a), Ok(b)) = (a, b) {
            for (u, v) in a.coefficients.iter().zip(&b.coefficients) {
                prop_assert!((u - v).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn weight_two_equals_duplicated_row(seed in any::<u64>(), n in 40usize..300, p in 1usize..4) {
        let (x, y, names) = data(seed, n, p);
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
        let doubled: Vec<bool> = (0..n).map(|_| rng.random_bool(0.25)).collect();
        let weights: Vec<f64> = doubled.iter().map(|&d| if d { 2.0 } else { 1.0 }).collect();
        let mut xd = x.clone();
        let mut yd = y.clone();
        for i in (0..n).filter(|&i| doubled[i]) {
            xd.extend_from_slice(&x[i * p..(i + 1) * p]);
            yd.push(y[i]);
        }
        let a = glm::fit_logistic(&DesignMatrix::new(n, &x, names.clone(), false).unwrap(), &y, Some(&weights));
        let b = glm::fit_logistic(&DesignMatrix::new(yd.len(), &xd, names, false).unwrap(), &yd, None);
        if let (Ok(a), Ok(b)) = (a, b) {
            for (u, v) in a.coefficients.iter().zip(&b.coefficients) {
                prop_assert!((u - v).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn lasso_satisfies_kkt(seed in any::<u64>(), n in 100usize..500, p in 2usize..8, frac in 0.01..0.9f64) {
        let (x, y, names) = data(seed, n, p);
        let design = DesignMatrix::new(n, &x, names, true).unwrap();
        let penalty = frac * glm::lasso_penalty_max(&design, &y, None).unwrap();
        let fit = glm::fit_lasso_logistic(&design, &y, penalty, None).unwrap();
        prop_assert!(glm::lasso_kkt_residual(&fit, &design, &y, None, penalty).unwrap() < 1e-6);
    }
}

#[test]
fn weighted_intercept_only_is_weighted_log_odds() {
    let y = [true, false, false, true, false];
    let w = [2.0, 1.0, 0.5, 1.0, 3.0];
    let design = DesignMatrix::new(5, &[], vec![], false).unwrap();
    let fit = glm::fit_logistic(&design, &y, Some(&w)).unwrap();
    let ybar = 3.0 / 7.5;
    assert!((fit.coefficients[0] - glm::logit(ybar)).abs() < 1e-10);
}
