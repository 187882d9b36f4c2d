//! CSV/JSON report files and their charts.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::Result;
use icl_consistency::metrics::{DiversityReport, KappaReport};
use icl_consistency::stats::{InteractionReport, MainEffect, TemplateRanking, TemplateScore};
use icl_consistency::{EvalTable, FactorSet, SetupId};
use serde::Serialize;

use crate::commands::{ScoreSummary, BIAS_WARNING};
use crate::store::write_atomic;
use crate::svg::bar_chart;

/// Formats a real for CSV: shortest round-trip digits, `inf`/`nan` spelled out.
fn real(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        v.to_string()
    }
}

fn opt_real(v: Option<f64>) -> String {
    v.map(real).unwrap_or_default()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn write_csv(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    write_atomic(path, &w.into_inner().map_err(|e| anyhow::anyhow!(e.to_string()))?)
}

/// One row per setup with its factor levels spelled out.
pub fn write_accuracy(
    path: &Path,
    table: &EvalTable,
    factors: &FactorSet,
    accuracy: &BTreeMap<SetupId, f64>,
) -> Result<()> {
    let names = factors.names();
    let mut header = vec!["setup_id", "accuracy", "masked"];
    header.extend(names.iter().copied());
    let rows = accuracy
        .iter()
        .map(|(id, acc)| {
            let masked = table
                .row(id)
                .map_or(0, |row| row.iter().filter(|c| c.is_none()).count());
            let mut row = vec![id.to_string(), real(*acc), masked.to_string()];
            row.extend(id.as_str().chars().map(String::from));
            row
        })
        .collect();
    write_csv(path, &header, rows)
}

pub fn write_kappa(dir: &Path, kappa: &KappaReport) -> Result<()> {
    write_json(&dir.join("kappa.json"), kappa)?;
    let rows = kappa
        .per_factor
        .iter()
        .map(|f| {
            vec![
                f.factor.clone(),
                real(f.kappa),
                f.setup_pairs.to_string(),
                f.used_pairs.to_string(),
                f.masked_pairs.to_string(),
            ]
        })
        .collect();
    write_csv(
        &dir.join("kappa.csv"),
        &["factor", "kappa", "setup_pairs", "used_pairs", "masked_pairs"],
        rows,
    )?;
    let bars: Vec<(String, f64)> = kappa
        .per_factor
        .iter()
        .map(|f| (f.factor.clone(), f.kappa))
        .chain(std::iter::once(("κ_avg".to_string(), kappa.kappa_avg)))
        .collect();
    write_atomic(
        &dir.join("kappa.svg"),
        bar_chart("Cohen's κ per factor", &bars, Some((0.0, 1.0))).as_bytes(),
    )
}

#[derive(Serialize)]
struct DiversityJson<'a> {
    #[serde(flatten)]
    report: &'a DiversityReport,
    warning: Option<&'static str>,
}

pub fn write_diversity(path: &Path, report: &DiversityReport) -> Result<()> {
    write_json(
        path,
        &DiversityJson {
            report,
            warning: report.single_label_bias.then_some(BIAS_WARNING),
        },
    )
}

pub fn write_main_effects(dir: &Path, effects: &[MainEffect]) -> Result<()> {
    let rows = effects
        .iter()
        .map(|e| {
            vec![
                e.factor.clone(),
                real(e.beta1),
                real(e.beta0),
                real(e.stderr),
                real(e.p),
                e.n_obs.to_string(),
            ]
        })
        .collect();
    write_csv(
        &dir.join("main_effects.csv"),
        &["factor", "beta1", "beta0", "stderr", "p", "n_obs"],
        rows,
    )?;
    let bars: Vec<(String, f64)> = effects.iter().map(|e| (e.factor.clone(), e.beta1)).collect();
    write_atomic(
        &dir.join("main_effects.svg"),
        bar_chart("Main effect on accuracy (β1)", &bars, None).as_bytes(),
    )
}

pub fn write_interactions(path: &Path, report: &InteractionReport) -> Result<()> {
    let rows = report
        .per_pair
        .iter()
        .map(|e| {
            vec![
                e.factor_i.clone(),
                e.factor_j.clone(),
                opt_real(e.beta_ij),
                opt_real(e.p),
                e.significant.to_string(),
                e.estimable.to_string(),
                e.n_obs.to_string(),
            ]
        })
        .collect();
    write_csv(
        path,
        &["factor_i", "factor_j", "beta_ij", "p", "significant", "estimable", "n_obs"],
        rows,
    )
}

pub fn write_ranking(dir: &Path, ranking: &TemplateRanking, scores: &[TemplateScore]) -> Result<()> {
    write_json(&dir.join("ranking.json"), ranking)?;
    let role = |id: u32| {
        if ranking.high.contains(&id) {
            "high"
        } else if ranking.low.contains(&id) {
            "low"
        } else {
            ""
        }
    };
    let rows = ranking
        .ranking
        .iter()
        .enumerate()
        .map(|(i, s)| {
            vec![
                (i + 1).to_string(),
                s.template_id.to_string(),
                s.name.clone(),
                real(s.accuracy),
                real(s.c_lambda),
                role(s.template_id).to_string(),
            ]
        })
        .collect();
    write_csv(
        &dir.join("ranking.csv"),
        &["rank", "template_id", "name", "accuracy", "c_lambda", "selected"],
        rows,
    )?;
    let rows = scores
        .iter()
        .map(|s| vec![s.template_id.to_string(), s.name.clone(), real(s.c_lambda)])
        .collect();
    write_csv(&dir.join("template_consistency.csv"), &["template_id", "name", "c_lambda"], rows)?;
    let bars: Vec<(String, f64)> = ranking
        .ranking
        .iter()
        .map(|s| (format!("{:02} {}", s.template_id, s.name), s.accuracy))
        .collect();
    write_atomic(
        &dir.join("accuracy.svg"),
        bar_chart("Accuracy per template", &bars, Some((0.0, 1.0))).as_bytes(),
    )
}

#[derive(Serialize)]
pub struct SummaryJson {
    setups: usize,
    data_points: usize,
    missing: usize,
    masked: usize,
    #[serde(serialize_with = "icl_consistency::metrics::serialize_real")]
    kappa_avg: f64,
    #[serde(serialize_with = "icl_consistency::metrics::serialize_real")]
    c_pi: f64,
    mean_accuracy: f64,
    warning: Option<&'static str>,
}

impl From<&ScoreSummary> for SummaryJson {
    fn from(s: &ScoreSummary) -> Self {
        Self {
            setups: s.setups,
            data_points: s.data_points,
            missing: s.missing,
            masked: s.masked,
            kappa_avg: s.kappa_avg,
            c_pi: s.c_pi,
            mean_accuracy: s.mean_accuracy,
            warning: s.single_label_bias.then_some(BIAS_WARNING),
        }
    }
}
