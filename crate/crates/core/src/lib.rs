//! Fairness-aware decision-curve analysis.
//!
//! The crate measures how a risk-prediction model distributes clinical benefit
//! across subgroups of a population. The central quantity is the *subgroup net
//! benefit* (sNB):
//!
//! ```text
//! sNB = 1 - π + (λ / N) · (TP - t/(1-t) · FP)
//! ```
//!
//! where `π` is the outcome prevalence of the group, `λ` the relative benefit of
//! treating a true positive and `t` the clinically optimal threshold that fixes
//! the false-positive harm weight. Unlike the conventional net benefit, the
//! prevalence term is kept, so values are comparable between groups and
//! collapse to the population value as an `N`-weighted mean.
//!
//! Modules:
//!
//! - [`metrics`]: confusion counts, net benefit, sNB, λ derivations, decision curves, gaps
//! - [`glm`]: weighted IRLS logistic regression and LASSO logistic regression
//! - [`ensemble`]: the NoSA / SingleSA / MultiSA model variants
//! - [`validation`]: C-statistic, calibration, bootstrap optimism correction and CIs
//! - [`policy`]: treat-none / treat-all / random / threshold policies, capacity caps, Pareto fronts
//! - [`synth`]: deterministic synthetic cohorts and use-case presets
//!
//! ```
//! use snb_core::metrics::{ConfusionCounts, subgroup_net_benefit};
//!
//! // Nobody treated: the group keeps its outcome-free share.
//! let counts = ConfusionCounts::new(0.0, 0.0, 62.0, 938.0).unwrap();
//! let snb = subgroup_net_benefit(&counts, 0.58, 0.15).unwrap();
//! assert!((snb - 0.938).abs() < 1e-12);
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cohort;
pub mod ensemble;
pub mod error;
pub mod glm;
pub mod metrics;
pub mod policy;
pub mod rng;
pub mod synth;
pub mod validation;

pub use cohort::{Cohort, GroupLabels};
pub use error::{Error, Result};
pub use glm::{DesignMatrix, FittedModel};
pub use metrics::{ConfusionCounts, DecisionCurve, GapReport, GroupSummary, ProxyRisk, UtilitySpec};
pub use policy::{CapacityConstraint, EvaluationReport, ParetoPoint, PolicySpec};
pub use validation::{Interval, MetricSet};
