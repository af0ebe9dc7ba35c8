use std::fmt::Write;

use crate::metrics::{EvalReport, TaskMetrics};

pub const ABSENT: &str = "-";

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| ABSENT.to_string(), |x| format!("{x:.3}"))
}

/// Aligned text table, one row per evaluated task.
pub fn render_table(report: &EvalReport) -> String {
    let mut out = format!("{:<14}", "task");
    for name in TaskMetrics::NAMES {
        write!(out, "{name:>7}").unwrap();
    }
    out.push('\n');
    let rows = [("detection", report.detection), ("segmentation", report.segmentation)];
    for (label, metrics) in rows {
        let Some(m) = metrics else { continue };
        write!(out, "{label:<14}").unwrap();
        for v in m.values() {
            write!(out, "{:>7}", cell(v)).unwrap();
        }
        out.push('\n');
    }
    out
}
