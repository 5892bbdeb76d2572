//! Tables, JSON summaries and plots written from pipeline artifacts.
//!
//! Every number in `metrics.json` and the CSV tables carries 12 significant
//! digits; sNB columns also have a per-10,000 integer rendering.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde_json::{json, Map, Value};
use snb_core::metrics::per_10k;
use snb_core::{EvaluationReport, Interval, ParetoPoint};

use crate::pipeline::{Artifacts, ModelArtifacts};
use crate::plots;

pub const ARTIFACTS_FILE: &str = "artifacts.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const SNB_TABLE: &str = "snb_by_group.csv";
pub const CURVES_TABLE: &str = "decision_curves.csv";
pub const PARETO_TABLE: &str = "pareto.csv";

pub const APPARENT: &str = "apparent";
pub const CORRECTED: &str = "optimism_corrected";

/// `x` rounded to 12 significant digits.
pub fn round12(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.11e}").parse().unwrap_or(x)
}

/// Table cell for a float: 12 significant digits, `NA` when undefined.
pub fn num(x: f64) -> String {
    if x.is_finite() {
        round12(x).to_string()
    } else {
        "NA".into()
    }
}

fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn round_json(value: &mut Value) {
    match value {
        Value::Number(n) if n.is_f64() => {
            if let Some(r) = n.as_f64().map(round12).and_then(serde_json::Number::from_f64) {
                *n = r;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_json),
        Value::Object(map) => map.values_mut().for_each(round_json),
        _ => {}
    }
}

/// Files written and notices about skipped outputs.
#[derive(Debug, Default)]
pub struct Emitted {
    pub files: Vec<PathBuf>,
    pub notices: Vec<String>,
}

pub fn write_artifacts(artifacts: &Artifacts, dir: &Path) -> Result<PathBuf> {
    create_dir(dir)?;
    let path = dir.join(ARTIFACTS_FILE);
    let text = serde_json::to_string_pretty(artifacts)?;
    std::fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(path)
}

pub fn read_artifacts(path: &Path) -> Result<Artifacts> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("invalid artifacts file {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("output directory {} is not writable", dir.display()))
}

/// Writes tables and plots for whatever stages the artifacts contain.
pub fn emit_report(artifacts: &Artifacts, dir: &Path) -> Result<Emitted> {
    create_dir(dir)?;
    let mut out = Emitted::default();

    let path = dir.join(METRICS_FILE);
    let mut doc = metrics_document(artifacts);
    round_json(&mut doc);
    std::fs::write(&path, serde_json::to_string_pretty(&doc)? + "\n")
        .with_context(|| format!("cannot write {}", path.display()))?;
    out.files.push(path);

    let evaluated = artifacts.models.iter().any(|m| m.evaluation.is_some() || m.validation.is_some());
    if evaluated {
        out.files.push(write_snb_table(artifacts, &dir.join(SNB_TABLE))?);
    }
    if artifacts.models.iter().any(|m| m.evaluation.is_some()) {
        out.files.push(write_curves_table(artifacts, &dir.join(CURVES_TABLE))?);
    }
    if artifacts.models.iter().any(|m| !m.pareto.is_empty()) {
        out.files.push(write_pareto_table(artifacts, &dir.join(PARETO_TABLE))?);
    }
    plots::emit_plots(artifacts, dir, &mut out)?;
    Ok(out)
}

fn interval_json(iv: &Interval) -> Value {
    json!({
        "lower": iv.lower,
        "upper": iv.upper,
        "level": iv.level,
        "replicates_used": iv.replicates_used,
        "reliable": iv.reliable,
        "method": iv.method,
    })
}

fn policy_json(r: &EvaluationReport) -> Value {
    let per_group: Map<String, Value> = r
        .per_group
        .iter()
        .map(|s| (s.group_id.clone(), json!({ "snb": s.snb, "snb_per_10k": per_10k(s.snb) })))
        .collect();
    json!({
        "policy": r.policy,
        "overall_snb": r.overall_snb,
        "overall_snb_per_10k": per_10k(r.overall_snb),
        "flagged_fraction": r.flagged_fraction,
        "per_group": per_group,
    })
}

fn model_json(m: &ModelArtifacts) -> Value {
    let mut entry = Map::new();
    entry.insert("variant".into(), json!(m.variant.label()));
    if let Some(v) = &m.validation {
        let r = &v.report;
        let intervals: Map<String, Value> = v.intervals.iter().map(|(k, iv)| (k.clone(), interval_json(iv))).collect();
        let gaps: Map<String, Value> = v
            .gap_reduction
            .iter()
            .map(|(g, x)| {
                let ci = v.gap_reduction_intervals.get(g).map(interval_json).unwrap_or(Value::Null);
                (g.clone(), json!({ "reduction": x, "reduction_per_10k": per_10k(*x), "ci": ci }))
            })
            .collect();
        entry.insert(
            "validation".into(),
            json!({
                "replicates": r.replicates,
                "skipped": r.skipped,
                "apparent": r.apparent,
                "optimism": r.optimism,
                "corrected": r.corrected,
                "corrected_snb_per_10k": r.corrected.snb_by_group.iter().map(|(g, x)| (g.clone(), json!(per_10k(*x)))).collect::<Map<_, _>>(),
                "intervals": intervals,
                "gap_reduction_vs_reference_policy": gaps,
            }),
        );
    }
    if let Some(e) = &m.evaluation {
        entry.insert("policies".into(), Value::Array(e.policies.iter().map(policy_json).collect()));
        entry.insert("gaps".into(), serde_json::to_value(&e.gaps).unwrap_or(Value::Null));
    }
    if !m.pareto.is_empty() {
        let fronts: Vec<Value> = m
            .pareto
            .iter()
            .map(|f| {
                json!({
                    "cap": f.cap,
                    "objective": f.objective,
                    "optimism_corrected": f.optimism_corrected,
                    "candidates": f.candidates,
                    "points": f.points.len(),
                    "overall_snb_spread": spread(&f.points, |p| p.overall_snb),
                    "target_snb_spread": spread(&f.points, |p| p.target_snb),
                    "treat_no_one": f.treat_no_one,
                })
            })
            .collect();
        entry.insert("pareto".into(), Value::Array(fronts));
    }
    Value::Object(entry)
}

fn spread(points: &[ParetoPoint], f: impl Fn(&ParetoPoint) -> f64) -> f64 {
    let max = points.iter().map(&f).fold(f64::NEG_INFINITY, f64::max);
    let min = points.iter().map(&f).fold(f64::INFINITY, f64::min);
    if points.is_empty() {
        0.0
    } else {
        max - min
    }
}

fn metrics_document(a: &Artifacts) -> Value {
    let s = &a.settings;
    json!({
        "cohort": a.cohort,
        "settings": {
            "seed": s.seed,
            "bootstrap_replicates": s.bootstrap.replicates,
            "resampling": s.bootstrap.resampling,
            "ci_level": s.ci_level,
            "retrain_propensity": s.retrain_propensity,
            "reference_group": s.reference_group,
            "reference_policy": s.reference_policy,
            "policies": s.policies,
            "lambda": s.params.lambda,
            "t_star": s.params.t_star,
            "harm_weight": s.params.harm_weight,
        },
        "models": a.models.iter().map(model_json).collect::<Vec<_>>(),
    })
}

pub const SNB_COLUMNS: [&str; 25] = [
    "variant",
    "policy",
    "estimate",
    "group",
    "n",
    "events",
    "lambda",
    "t_star",
    "policy_threshold",
    "harm_threshold",
    "tp",
    "fp",
    "fn",
    "tn",
    "flagged_fraction",
    "snb",
    "snb_per_10k",
    "gap_vs_reference",
    "gap_vs_reference_per_10k",
    "ci_lower",
    "ci_upper",
    "ci_level",
    "ci_replicates",
    "ci_reliable",
    "ci_method",
];

fn ci_cells(iv: Option<&Interval>) -> [String; 6] {
    match iv {
        Some(iv) => [
            num(iv.lower),
            num(iv.upper),
            num(iv.level),
            iv.replicates_used.to_string(),
            iv.reliable.to_string(),
            iv.method.clone(),
        ],
        None => Default::default(),
    }
}

fn write_snb_table(a: &Artifacts, path: &Path) -> Result<PathBuf> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    w.write_record(SNB_COLUMNS)?;
    let reference = &a.settings.reference_group;
    for m in &a.models {
        let variant = m.variant.label();
        if let Some(e) = &m.evaluation {
            for r in &e.policies {
                let ref_snb = r.group(reference).map(|s| s.snb);
                for s in &r.per_group {
                    let gap = ref_snb.map(|x| x - s.snb);
                    let c = &s.counts;
                    let mut row = vec![
                        variant.to_string(),
                        r.policy.clone(),
                        APPARENT.into(),
                        s.group_id.clone(),
                        num(c.n()),
                        num(c.positives()),
                        num(s.lambda),
                        num(s.t_star),
                        opt_num(s.policy_threshold),
                        num(s.harm_threshold),
                        num(c.tp),
                        num(c.fp),
                        num(c.fn_),
                        num(c.tn),
                        num(c.flagged() / c.n()),
                        num(s.snb),
                        per_10k(s.snb).to_string(),
                        opt_num(gap),
                        gap.map(|g| per_10k(g).to_string()).unwrap_or_default(),
                    ];
                    row.extend(ci_cells(None));
                    w.write_record(&row)?;
                }
                let c = &r.overall_counts;
                let mut row = vec![
                    variant.to_string(),
                    r.policy.clone(),
                    APPARENT.into(),
                    "overall".into(),
                    num(c.n()),
                    num(c.positives()),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    num(c.tp),
                    num(c.fp),
                    num(c.fn_),
                    num(c.tn),
                    num(r.flagged_fraction),
                    num(r.overall_snb),
                    per_10k(r.overall_snb).to_string(),
                    String::new(),
                    String::new(),
                ];
                row.extend(ci_cells(None));
                w.write_record(&row)?;
            }
        }
        if let Some(v) = &m.validation {
            let corrected = &v.report.corrected;
            let policy = format!("{} at t*", variant);
            let ref_snb = corrected.snb_by_group.get(reference).copied();
            let params = &a.settings.params;
            for (g, &snb) in &corrected.snb_by_group {
                let info = a.cohort.groups.get(g);
                let gap = ref_snb.map(|x| x - snb);
                let mut row = vec![
                    variant.to_string(),
                    policy.clone(),
                    CORRECTED.into(),
                    g.clone(),
                    info.map(|i| i.n.to_string()).unwrap_or_default(),
                    info.map(|i| i.events.to_string()).unwrap_or_default(),
                    opt_num(params.lambda.get(g).copied()),
                    opt_num(params.t_star.get(g).copied()),
                    opt_num(params.t_star.get(g).copied()),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    num(snb),
                    per_10k(snb).to_string(),
                    opt_num(gap),
                    gap.map(|g| per_10k(g).to_string()).unwrap_or_default(),
                ];
                row.extend(ci_cells(v.intervals.get(&format!("snb[{g}]"))));
                w.write_record(&row)?;
            }
            let mut row = vec![
                variant.to_string(),
                policy,
                CORRECTED.into(),
                "overall".into(),
                a.cohort.n.to_string(),
                a.cohort.groups.values().map(|i| i.events).sum::<usize>().to_string(),
            ];
            row.extend(std::iter::repeat_n(String::new(), 9));
            row.extend([
                num(corrected.overall_snb),
                per_10k(corrected.overall_snb).to_string(),
                String::new(),
                String::new(),
            ]);
            row.extend(ci_cells(v.intervals.get("overall_snb")));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(path.to_path_buf())
}

pub const CURVE_COLUMNS: [&str; 8] =
    ["variant", "group", "lambda", "t_star", "threshold", "nb_model", "nb_treat_all", "nb_treat_none"];

fn write_curves_table(a: &Artifacts, path: &Path) -> Result<PathBuf> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    w.write_record(CURVE_COLUMNS)?;
    for m in &a.models {
        let Some(e) = &m.evaluation else { continue };
        for gc in &e.decision_curves {
            let c = &gc.curve;
            for k in 0..c.thresholds.len() {
                w.write_record([
                    m.variant.label().to_string(),
                    gc.group.clone(),
                    opt_num(gc.lambda),
                    opt_num(gc.t_star),
                    num(c.thresholds[k]),
                    num(c.nb_model[k]),
                    num(c.nb_treat_all[k]),
                    num(c.nb_treat_none[k]),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(path.to_path_buf())
}

pub const PARETO_COLUMNS: [&str; 12] = [
    "variant",
    "cap",
    "objective",
    "optimism_corrected",
    "point",
    "policy",
    "thresholds",
    "overall_snb",
    "overall_snb_per_10k",
    "target_snb",
    "target_snb_per_10k",
    "flagged_fraction",
];

fn thresholds_cell(p: &ParetoPoint) -> String {
    p.thresholds.iter().map(|(g, t)| format!("{g}={}", num(*t))).collect::<Vec<_>>().join(";")
}

fn write_pareto_table(a: &Artifacts, path: &Path) -> Result<PathBuf> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    w.write_record(PARETO_COLUMNS)?;
    for m in &a.models {
        for f in &m.pareto {
            let objective = match &f.objective {
                snb_core::policy::Objective::TargetGroup(g) => g.clone(),
                snb_core::policy::Objective::Maximin => "maximin".into(),
            };
            let rows = f.points.iter().map(|p| ("front", p)).chain(std::iter::once(("treat_no_one", &f.treat_no_one)));
            for (kind, p) in rows {
                w.write_record([
                    m.variant.label().to_string(),
                    num(f.cap),
                    objective.clone(),
                    f.optimism_corrected.to_string(),
                    kind.to_string(),
                    p.policy.clone(),
                    thresholds_cell(p),
                    num(p.overall_snb),
                    per_10k(p.overall_snb).to_string(),
                    num(p.target_snb),
                    per_10k(p.target_snb).to_string(),
                    num(p.flagged_fraction),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(path.to_path_buf())
}
