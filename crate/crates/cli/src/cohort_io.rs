//! Cohort CSV reading and writing.
//!
//! Schema: a header row with `id`, the protected-attribute column (default
//! `group`), `outcome` (0 or 1), then feature columns. A feature column whose
//! values all parse as numbers is numeric; otherwise it is categorical and
//! one-hot encoded as `column=level`, omitting the most frequent level.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use anyhow::{bail, Context, Result};
use snb_core::Cohort;

pub const DEFAULT_GROUP_COLUMN: &str = "group";

/// Data rows start on line 2 of the file.
fn line_of(row: usize) -> usize {
    row + 2
}

enum Column {
    Numeric(Vec<f64>),
    Categorical { name: String, levels: Vec<String>, values: Vec<String> },
}

pub fn load_cohort(path: &Path, group_column: &str) -> Result<Cohort> {
    let file = std::fs::File::open(path).with_context(|| format!("cannot open cohort file {}", path.display()))?;
    read_cohort(file, group_column).with_context(|| format!("invalid cohort file {}", path.display()))
}

pub fn read_cohort<R: std::io::Read>(reader: R, group_column: &str) -> Result<Cohort> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let position = |name: &str| headers.iter().position(|h| h == name);
    let id_col = position("id").context("missing `id` column")?;
    let group_col =
        position(group_column).with_context(|| format!("missing protected attribute column `{group_column}`"))?;
    let outcome_col = position("outcome").context("missing `outcome` column")?;
    let feature_cols: Vec<usize> =
        (0..headers.len()).filter(|c| ![id_col, group_col, outcome_col].contains(c)).collect();

    let mut ids = Vec::new();
    let mut groups = Vec::new();
    let mut outcome = Vec::new();
    let mut raw: Vec<Vec<String>> = vec![Vec::new(); feature_cols.len()];
    let mut seen = BTreeSet::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record.with_context(|| format!("line {}: malformed record", line_of(row)))?;
        let cell = |c: usize| record.get(c).map(str::trim).unwrap_or("");
        let id = cell(id_col);
        if id.is_empty() {
            bail!("line {}: missing value in column `id`", line_of(row));
        }
        if !seen.insert(id.to_string()) {
            bail!("line {}: duplicate id `{id}`", line_of(row));
        }
        let group = cell(group_col);
        if group.is_empty() {
            bail!("line {}: empty group in column `{group_column}`", line_of(row));
        }
        let y = match cell(outcome_col) {
            "0" => false,
            "1" => true,
            other => bail!("line {}: outcome must be 0 or 1, got `{other}`", line_of(row)),
        };
        for (k, &c) in feature_cols.iter().enumerate() {
            let v = cell(c);
            if v.is_empty() {
                bail!("line {}: missing value in column `{}`", line_of(row), headers[c]);
            }
            raw[k].push(v.to_string());
        }
        ids.push(id.to_string());
        groups.push(group.to_string());
        outcome.push(y);
    }
    if ids.is_empty() {
        bail!("cohort has no rows");
    }

    let columns: Vec<Column> = feature_cols
        .iter()
        .zip(raw)
        .map(|(&c, values)| match values.iter().map(|v| v.parse::<f64>()).collect::<Result<Vec<f64>, _>>() {
            Ok(numbers) => {
                if let Some(row) = numbers.iter().position(|v| !v.is_finite()) {
                    bail!("line {}: non-finite value in column `{}`", line_of(row), headers[c]);
                }
                Ok(Column::Numeric(numbers))
            }
            Err(_) => {
                let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
                for v in &values {
                    *counts.entry(v).or_default() += 1;
                }
                // most frequent level is the reference; ties go to the first in sort order
                let reference =
                    counts.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map(|(l, _)| l.to_string()).unwrap();
                let levels = counts.keys().filter(|l| **l != reference).map(|l| l.to_string()).collect();
                Ok(Column::Categorical { name: headers[c].clone(), levels, values })
            }
        })
        .collect::<Result<_>>()?;

    let mut names = Vec::new();
    for (col, &c) in columns.iter().zip(&feature_cols) {
        match col {
            Column::Numeric(_) => names.push(headers[c].clone()),
            Column::Categorical { name, levels, .. } => names.extend(levels.iter().map(|l| format!("{name}={l}"))),
        }
    }
    let n = ids.len();
    let mut features = Vec::with_capacity(n * names.len());
    for i in 0..n {
        for col in &columns {
            match col {
                Column::Numeric(v) => features.push(v[i]),
                Column::Categorical { levels, values, .. } => {
                    features.extend(levels.iter().map(|l| if &values[i] == l { 1.0 } else { 0.0 }))
                }
            }
        }
    }
    Ok(Cohort::new(ids, groups, outcome, names, features)?)
}

/// Writes a cohort in the schema read by [`load_cohort`]. Numbers are written
/// in shortest round-trip form so reading back gives identical values.
pub fn write_cohort(cohort: &Cohort, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    let mut header = vec!["id".to_string(), DEFAULT_GROUP_COLUMN.to_string(), "outcome".to_string()];
    header.extend(cohort.feature_names().iter().cloned());
    w.write_record(&header)?;
    for i in 0..cohort.len() {
        let mut record =
            vec![cohort.ids()[i].clone(), cohort.group_label(i).to_string(), (cohort.outcome()[i] as u8).to_string()];
        record.extend(cohort.row(i).iter().map(|v| v.to_string()));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}
