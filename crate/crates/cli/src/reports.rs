//! CSV report writers. Schemas are fixed: `metrics.csv` is one row per
//! trained model with per-group columns, `summary.csv` is one row per
//! method and metric, `diagnostics.csv` is one row per training step, and
//! `explain.csv` is one row per example and block.
//!
//! Values use the shortest round-trip decimal form, so identical runs
//! produce byte-identical files.

use std::fmt::Write as _;
use std::path::Path;

use softlabel_core::baselines::Method;
use softlabel_core::bilevel::DiagnosticsReport;
use softlabel_core::eval::{ExperimentSummary, GroupMetrics};

use crate::formats::{self, FormatError};

/// Quotes a CSV field only when it needs it.
fn escape(field: &str) -> String {
    if field.contains(',') || field.contains('"') || field.contains('\n') {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        String::from(field)
    }
}

/// One `metrics.csv` row.
#[derive(Debug, Clone)]
pub struct MetricsRow {
    pub method: Method,
    pub seed: u64,
    pub metrics: GroupMetrics,
}

pub fn render_metrics(rows: &[MetricsRow], group_count: usize) -> String {
    let mut out = String::from("method,seed,average,worst_group,overall");
    for g in 0..group_count {
        let _ = write!(out, ",group_{g}");
    }
    out.push('\n');
    for row in rows {
        let _ = write!(
            out,
            "{},{},{},{},{}",
            escape(row.method.id()),
            row.seed,
            row.metrics.average,
            row.metrics.worst_group,
            row.metrics.overall
        );
        for g in 0..group_count {
            match row.metrics.per_group.get(g).copied().flatten() {
                Some(accuracy) => {
                    let _ = write!(out, ",{accuracy}");
                }
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

pub fn write_metrics(
    path: &Path,
    rows: &[MetricsRow],
    group_count: usize,
) -> Result<(), FormatError> {
    formats::write_text(path, &render_metrics(rows, group_count))
}

pub fn render_summary(summaries: &[ExperimentSummary]) -> String {
    let mut out = String::from("method,metric,mean,std\n");
    for summary in summaries {
        for metric in &summary.summaries {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                escape(summary.method.id()),
                escape(&metric.metric),
                metric.mean,
                metric.std
            );
        }
    }
    out
}

pub fn write_summary(path: &Path, summaries: &[ExperimentSummary]) -> Result<(), FormatError> {
    formats::write_text(path, &render_summary(summaries))
}

/// Renders the per-step traces. `first_step` is 1 for a fresh run and
/// one past the checkpoint for a resumed one.
pub fn render_diagnostics(report: &DiagnosticsReport, first_step: usize) -> String {
    let mut out = String::from("step,risk,grad_w_sq_norm,inner_loss,argmax_group\n");
    for (i, risk) in report.risk_trace.iter().enumerate() {
        let _ = write!(
            out,
            "{},{},{},{}",
            first_step + i,
            risk,
            report.grad_w_sq_norms[i],
            report.inner_loss_trace[i]
        );
        match report.argmax_group_trace[i] {
            Some(group) => {
                let _ = writeln!(out, ",{group}");
            }
            None => out.push_str(",\n"),
        }
    }
    out
}

pub fn write_diagnostics(
    path: &Path,
    report: &DiagnosticsReport,
    first_step: usize,
) -> Result<(), FormatError> {
    formats::write_text(path, &render_diagnostics(report, first_step))
}

/// One `explain.csv` row: one block of one example.
#[derive(Debug, Clone)]
pub struct ExplainRow {
    pub id: String,
    pub block: String,
    pub importance: f64,
    /// 1 is the most important block of the example.
    pub rank: usize,
}

pub fn render_explain(rows: &[ExplainRow]) -> String {
    let mut out = String::from("id,block,importance,rank\n");
    for row in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            escape(&row.id),
            escape(&row.block),
            row.importance,
            row.rank
        );
    }
    out
}

pub fn write_explain(path: &Path, rows: &[ExplainRow]) -> Result<(), FormatError> {
    formats::write_text(path, &render_explain(rows))
}
