//! Report rendering: plot-ready CSV, JSON and a markdown table grouped by
//! algorithm family.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::eval::EvaluationReport;
use crate::recommend::Family;

pub const CSV_HEADER: [&str; 5] = ["algorithm", "k", "ndcg", "semantic_similarity", "diversity"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(format!("unknown report format `{other}`")),
        }
    }
}

/// One row per algorithm and cutoff. The beyond-accuracy columns are
/// measured at `k_max` only and left empty on the other rows.
pub fn to_csv(report: &EvaluationReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    let k_max = report.metadata.k_max;
    for row in &report.rows {
        for k in 1..=k_max {
            let (sem, div) = if k == k_max {
                (row.semantic_similarity.mean.to_string(), row.diversity.mean.to_string())
            } else {
                (String::new(), String::new())
            };
            w.write_record([row.algorithm.to_string(), k.to_string(), row.ndcg_at(k).to_string(), sem, div])
                .expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

pub fn to_markdown(report: &EvaluationReport) -> String {
    let k = report.metadata.k_max;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# Evaluation report\n\n{} test cases, {} validation cases, embedding model `{}`.",
        report.metadata.n_test_cases,
        report.metadata.n_validation_cases,
        &report.metadata.model_hash[..report.metadata.model_hash.len().min(16)]
    );
    for family in [Family::Mp, Family::Sim, Family::Hyb] {
        let rows: Vec<_> = report.rows.iter().filter(|r| r.family == family).collect();
        if rows.is_empty() {
            continue;
        }
        let _ = writeln!(out, "\n## {}\n", family.label());
        let _ = writeln!(
            out,
            "| algorithm | nDCG@1 | nDCG@5 | nDCG@{k} | semantic similarity | diversity | cases |"
        );
        let _ = writeln!(out, "|---|---:|---:|---:|---:|---:|---:|");
        for r in rows {
            let _ = writeln!(
                out,
                "| {} | {:.4} | {:.4} | {:.4} | {:.4} (median {:.4}) | {:.4} (median {:.4}) | {} |",
                r.algorithm,
                r.ndcg_at(1),
                r.ndcg_at(5.min(k)),
                r.ndcg_at(k),
                r.semantic_similarity.mean,
                r.semantic_similarity.median,
                r.diversity.mean,
                r.diversity.median,
                r.n_cases
            );
        }
    }
    out
}

pub fn render(report: &EvaluationReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => to_csv(report),
        ReportFormat::Json => report.to_json(),
        ReportFormat::Markdown => to_markdown(report),
    }
}

pub fn load(path: &Path) -> std::io::Result<EvaluationReport> {
    let s = std::fs::read_to_string(path)?;
    EvaluationReport::from_json(&s).map_err(std::io::Error::other)
}
