//! SVG plots: decision curves per group, sNB bars per policy and Pareto fronts.

use std::path::Path;

use anyhow::{anyhow, Result};
use plotters::prelude::*;
use snb_core::metrics::per_10k;

use crate::pipeline::{Artifacts, GroupCurve, ParetoFront};
use crate::report::Emitted;

const SIZE: (u32, u32) = (800, 560);
const ORANGE: RGBColor = RGBColor(255, 140, 0);
const PALETTE: [RGBColor; 8] = [
    RGBColor(31, 119, 180),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
    RGBColor(227, 119, 194),
    RGBColor(127, 127, 127),
    RGBColor(23, 190, 207),
];

/// File-name-safe rendering of a label.
pub fn slug(label: &str) -> String {
    label.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect()
}

fn plot_err<E: std::fmt::Debug>(e: E) -> anyhow::Error {
    anyhow!("plot rendering failed: {e:?}")
}

pub fn emit_plots(artifacts: &Artifacts, dir: &Path, out: &mut Emitted) -> Result<()> {
    for m in &artifacts.models {
        let variant = m.variant.label();
        if let Some(e) = &m.evaluation {
            for gc in e.decision_curves.iter().filter(|c| c.t_star.is_some()) {
                let path = dir.join(format!("decision_curve_{}_{}.svg", slug(variant), slug(&gc.group)));
                decision_curve_plot(gc, variant, &path)?;
                out.files.push(path);
            }
            if artifacts.settings.policies.is_empty() {
                out.notices.push(format!("no policies configured; sNB bar plot for {variant} skipped"));
            } else {
                let path = dir.join(format!("snb_bars_{}.svg", slug(variant)));
                snb_bars_plot(e, variant, &path)?;
                out.files.push(path);
            }
        }
        for f in &m.pareto {
            let path = dir.join(format!("pareto_{}_cap{}.svg", slug(variant), slug(&format!("{}", f.cap * 100.0))));
            pareto_plot(f, variant, &path)?;
            out.files.push(path);
        }
    }
    Ok(())
}

fn decision_curve_plot(gc: &GroupCurve, variant: &str, path: &Path) -> Result<()> {
    let c = &gc.curve;
    let x_max = c.thresholds.last().copied().unwrap_or(1.0);
    let top = c.nb_model.iter().chain(&c.nb_treat_all).fold(0.0f64, |a, &b| a.max(b));
    let top = if top > 0.0 { top * 1.1 } else { 0.01 };
    let bottom = -top * 0.5;
    let clip = |v: f64| v.clamp(bottom, top);

    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let caption = format!("{variant}: decision curve, group {}", gc.group);
    let mut chart = ChartBuilder::on(&root)
        .caption(caption, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(70)
        .build_cartesian_2d(0.0..x_max, bottom..top)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("Threshold probability")
        .y_desc(if gc.lambda.is_some() { "Net benefit (scaled by lambda)" } else { "Net benefit" })
        .draw()
        .map_err(plot_err)?;
    let series = [
        (&c.nb_model, PALETTE[0], variant.to_string()),
        (&c.nb_treat_all, PALETTE[2], "Treat.All".to_string()),
        (&c.nb_treat_none, BLACK, "Treat.No.One".to_string()),
    ];
    for (values, color, label) in series {
        chart
            .draw_series(LineSeries::new(
                c.thresholds.iter().zip(values).map(|(&t, &v)| (t, clip(v))),
                color.stroke_width(2),
            ))
            .map_err(plot_err)?
            .label(label)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
    }
    if let Some(t) = gc.t_star {
        chart
            .draw_series(LineSeries::new([(t, bottom), (t, top)], ORANGE.stroke_width(2)))
            .map_err(plot_err)?
            .label(format!("t* = {t}"))
            .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], ORANGE.stroke_width(2)));
    }
    chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw().map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

fn snb_bars_plot(e: &crate::pipeline::Evaluation, variant: &str, path: &Path) -> Result<()> {
    let groups: Vec<String> =
        e.decision_curves.iter().filter(|c| c.t_star.is_some()).map(|c| c.group.clone()).collect();
    let values: Vec<Vec<Option<i64>>> =
        e.policies.iter().map(|r| groups.iter().map(|g| r.group(g).map(|s| per_10k(s.snb))).collect()).collect();
    let all: Vec<i64> = values.iter().flatten().flatten().copied().collect();
    let (lo, hi) = (all.iter().copied().min().unwrap_or(0), all.iter().copied().max().unwrap_or(1));
    let pad = ((hi - lo) as f64 * 0.15).max(5.0);
    let (y0, y1) = (lo as f64 - pad, hi as f64 + pad);

    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(format!("{variant}: sNB per 10,000 by group and policy"), ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(70)
        .build_cartesian_2d(0.0..groups.len() as f64, y0..y1)
        .map_err(plot_err)?;
    let labels = groups.clone();
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(groups.len() * 2 + 1)
        .x_label_formatter(&move |x| {
            let k = x.floor() as usize;
            if (x - x.floor() - 0.5).abs() < 1e-6 && k < labels.len() {
                labels[k].clone()
            } else {
                String::new()
            }
        })
        .y_desc("sNB per 10,000")
        .draw()
        .map_err(plot_err)?;
    let width = 0.8 / values.len().max(1) as f64;
    for (p, (report, row)) in e.policies.iter().zip(&values).enumerate() {
        let color = PALETTE[p % PALETTE.len()];
        let bars = row.iter().enumerate().filter_map(|(g, v)| {
            v.map(|v| {
                let x = g as f64 + 0.1 + p as f64 * width;
                Rectangle::new([(x, y0), (x + width, v as f64)], color.filled())
            })
        });
        chart
            .draw_series(bars)
            .map_err(plot_err)?
            .label(report.policy.clone())
            .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 12, y + 5)], color.filled()));
    }
    chart
        .configure_series_labels()
        .position(SeriesLabelPosition::UpperLeft)
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

fn pareto_plot(f: &ParetoFront, variant: &str, path: &Path) -> Result<()> {
    let to10k = |v: f64| v * 10_000.0;
    let mut xs: Vec<f64> = f.points.iter().map(|p| to10k(p.overall_snb)).collect();
    let mut ys: Vec<f64> = f.points.iter().map(|p| to10k(p.target_snb)).collect();
    xs.push(to10k(f.treat_no_one.overall_snb));
    ys.push(to10k(f.treat_no_one.target_snb));
    let range = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let pad = ((hi - lo) * 0.1).max(0.05);
        (lo - pad)..(hi + pad)
    };
    let target = match &f.objective {
        snb_core::policy::Objective::TargetGroup(g) => format!("sNB of {g} per 10,000"),
        snb_core::policy::Objective::Maximin => "Minimum group sNB per 10,000".into(),
    };

    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(format!("{variant}: Pareto front, at most {}% flagged", f.cap * 100.0), ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(80)
        .build_cartesian_2d(range(&xs), range(&ys))
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc("Overall sNB per 10,000").y_desc(target).draw().map_err(plot_err)?;
    let front: Vec<(f64, f64)> = f.points.iter().map(|p| (to10k(p.overall_snb), to10k(p.target_snb))).collect();
    let color = PALETTE[0];
    chart.draw_series(LineSeries::new(front.clone(), color.stroke_width(1))).map_err(plot_err)?;
    chart
        .draw_series(front.iter().map(|&p| Circle::new(p, 4, color.filled())))
        .map_err(plot_err)?
        .label("Pareto-optimal thresholds")
        .legend(move |(x, y)| Circle::new((x + 10, y), 4, color.filled()));
    let nobody = (to10k(f.treat_no_one.overall_snb), to10k(f.treat_no_one.target_snb));
    chart
        .draw_series(std::iter::once(TriangleMarker::new(nobody, 7, BLACK.filled())))
        .map_err(plot_err)?
        .label(f.treat_no_one.policy.clone())
        .legend(|(x, y)| TriangleMarker::new((x + 10, y), 6, BLACK.filled()));
    chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw().map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}
