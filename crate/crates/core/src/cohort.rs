//! In-memory cohort: one row per individual with numeric features, a binary
//! outcome and a subgroup label.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Subgroup labels stored as indices into a sorted level list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupLabels {
    levels: Vec<String>,
    index: Vec<usize>,
}

impl GroupLabels {
    pub fn from_labels<S: AsRef<str>>(labels: &[S]) -> Self {
        let mut levels: Vec<String> = labels.iter().map(|s| s.as_ref().to_string()).collect();
        levels.sort();
        levels.dedup();
        let index = labels.iter().map(|s| levels.binary_search_by(|l| l.as_str().cmp(s.as_ref())).unwrap()).collect();
        Self { levels, index }
    }

    /// Builds labels from explicit levels; every index must be in range.
    pub fn from_parts(levels: Vec<String>, index: Vec<usize>) -> Result<Self> {
        if let Some(&bad) = index.iter().find(|&&i| i >= levels.len()) {
            return Err(Error::InvalidSpec(format!("group index {bad} out of range")));
        }
        Ok(Self { levels, index })
    }

    pub fn levels(&self) -> &[String] {
        &self.levels
    }

    pub fn index(&self) -> &[usize] {
        &self.index
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn label_of(&self, row: usize) -> &str {
        &self.levels[self.index[row]]
    }

    pub fn level_position(&self, label: &str) -> Option<usize> {
        self.levels.iter().position(|l| l == label)
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.levels.len()];
        for &g in &self.index {
            counts[g] += 1;
        }
        counts
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        Self { levels: self.levels.clone(), index: rows.iter().map(|&r| self.index[r]).collect() }
    }
}

/// A population under analysis.
///
/// Features are stored row-major. Every value is finite; rows with missing
/// values are rejected at construction since imputation is not provided.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    ids: Vec<String>,
    groups: GroupLabels,
    outcome: Vec<bool>,
    feature_names: Vec<String>,
    features: Vec<f64>,
}

impl Cohort {
    pub fn new(
        ids: Vec<String>,
        groups: Vec<String>,
        outcome: Vec<bool>,
        feature_names: Vec<String>,
        features: Vec<f64>,
    ) -> Result<Self> {
        let n = ids.len();
        if n == 0 {
            return Err(Error::EmptyInput("cohort has no rows"));
        }
        if groups.len() != n {
            return Err(Error::LengthMismatch { expected: n, found: groups.len() });
        }
        if outcome.len() != n {
            return Err(Error::LengthMismatch { expected: n, found: outcome.len() });
        }
        let p = feature_names.len();
        if features.len() != n * p {
            return Err(Error::LengthMismatch { expected: n * p, found: features.len() });
        }
        let mut seen = std::collections::BTreeSet::new();
        for name in &feature_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::InvalidSpec(format!("duplicate feature name `{name}`")));
            }
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::MissingValue { row: pos / p, column: feature_names[pos % p].clone() });
        }
        Ok(Self { ids, groups: GroupLabels::from_labels(&groups), outcome, feature_names, features })
    }

    pub fn len(&self) -> usize {
        self.outcome.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcome.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn groups(&self) -> &GroupLabels {
        &self.groups
    }

    pub fn outcome(&self) -> &[bool] {
        &self.outcome
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.n_features();
        &self.features[i * p..(i + 1) * p]
    }

    pub fn group_label(&self, i: usize) -> &str {
        self.groups.label_of(i)
    }

    /// Rows in the order given, duplicates allowed (bootstrap resamples).
    pub fn subset(&self, rows: &[usize]) -> Self {
        let p = self.n_features();
        let mut features = Vec::with_capacity(rows.len() * p);
        for &r in rows {
            features.extend_from_slice(self.row(r));
        }
        Self {
            ids: rows.iter().map(|&r| self.ids[r].clone()).collect(),
            groups: self.groups.subset(rows),
            outcome: rows.iter().map(|&r| self.outcome[r]).collect(),
            feature_names: self.feature_names.clone(),
            features,
        }
    }

    /// Same rows with different group labels.
    pub fn with_groups(&self, groups: Vec<String>) -> Result<Self> {
        Self::new(self.ids.clone(), groups, self.outcome.clone(), self.feature_names.clone(), self.features.clone())
    }

    pub fn prevalence(&self) -> f64 {
        self.outcome.iter().filter(|&&y| y).count() as f64 / self.len() as f64
    }

    /// Outcome prevalence per group label.
    pub fn prevalence_by_group(&self) -> BTreeMap<String, f64> {
        let levels = self.groups.levels();
        let mut pos = vec![0usize; levels.len()];
        let mut n = vec![0usize; levels.len()];
        for (&g, &y) in self.groups.index().iter().zip(&self.outcome) {
            n[g] += 1;
            pos[g] += y as usize;
        }
        levels
            .iter()
            .enumerate()
            .filter(|(g, _)| n[*g] > 0)
            .map(|(g, l)| (l.clone(), pos[g] as f64 / n[g] as f64))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Cohort {
        Cohort::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec!["y".into(), "x".into(), "y".into()],
            vec![true, false, false],
            vec!["f1".into(), "f2".into()],
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
        )
        .unwrap()
    }

    #[test]
    fn levels_are_sorted() {
        let c = small();
        assert_eq!(c.groups().levels(), &["x".to_string(), "y".to_string()]);
        assert_eq!(c.groups().index(), &[1, 0, 1]);
        assert_eq!(c.row(1), &[3.0, 4.0]);
    }

    #[test]
    fn rejects_non_finite() {
        let err =
            Cohort::new(vec!["a".into()], vec!["g".into()], vec![true], vec!["f".into()], vec![f64::NAN]).unwrap_err();
        assert_eq!(err, Error::MissingValue { row: 0, column: "f".into() });
    }

    #[test]
    fn subset_keeps_levels() {
        let c = small();
        let s = c.subset(&[2, 2]);
        assert_eq!(s.len(), 2);
        assert_eq!(s.groups().levels().len(), 2);
        assert_eq!(s.groups().counts(), vec![0, 2]);
        assert_eq!(s.prevalence_by_group().len(), 1);
    }
}
