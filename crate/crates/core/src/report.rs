//! Result tables: one row per system, one column per metric and subset.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{MetricReport, SubsetMetrics};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemReport {
    pub system: String,
    pub report: MetricReport,
}

type Cell = fn(&SubsetMetrics) -> Option<String>;

const COLUMNS: [(&str, Cell); 4] = [
    ("BLEU", |m| m.bleu.as_ref().map(|b| format!("{:.1}", b.score))),
    ("METEOR", |m| m.meteor_lite.map(|v| format!("{v:.2}"))),
    ("PARENT", |m| m.parent.map(|p| format!("{:.1}", 100.0 * p.f1))),
    ("SER%", |m| m.ser.map(|v| format!("{:.2}", 100.0 * v))),
];

fn subset_title(name: &str) -> String {
    match name {
        "overall" => "Overall".into(),
        "seen" => "Seen".into(),
        "unseen" => "Unseen".into(),
        "overlap" => "Overlap".into(),
        "nonoverlap" => "Non-Overlap".into(),
        "unsplit" => "Unsplit".into(),
        other => other.into(),
    }
}

fn shape(r: &MetricReport) -> (Vec<&str>, Vec<bool>) {
    let subsets = r.subsets.iter().map(|s| s.subset.as_str()).collect();
    let present = COLUMNS.iter().map(|(_, f)| r.subsets.first().and_then(|s| f(s)).is_some()).collect();
    (subsets, present)
}

fn check_consistent(reports: &[SystemReport]) -> Result<()> {
    let Some(first) = reports.first() else {
        return Err(Error::Invalid("no reports to format".into()));
    };
    let expected = shape(&first.report);
    for r in reports {
        if shape(&r.report) != expected {
            return Err(Error::Invalid(format!(
                "report for '{}' has a different subset or metric structure than '{}'",
                r.system, first.system
            )));
        }
        for s in &r.report.subsets {
            for (present, (name, f)) in expected.1.iter().zip(COLUMNS.iter()) {
                if f(s).is_some() != *present {
                    return Err(Error::Invalid(format!("'{}' lacks {name} for subset {}", r.system, s.subset)));
                }
            }
        }
    }
    Ok(())
}

/// Aligned plain-text table. BLEU and PARENT (F, x100) use one decimal,
/// METEOR and SER (percent) two.
pub fn format_report(reports: &[SystemReport]) -> Result<String> {
    check_consistent(reports)?;
    let (subsets, present) = shape(&reports[0].report);
    let mut header = vec!["System".to_string()];
    let mut rows: Vec<Vec<String>> = reports.iter().map(|r| vec![r.system.clone()]).collect();
    for ((name, f), on) in COLUMNS.iter().zip(&present) {
        if !on {
            continue;
        }
        for (k, subset) in subsets.iter().enumerate() {
            header.push(format!("{name} {}", subset_title(subset)));
            for (row, r) in rows.iter_mut().zip(reports) {
                row.push(f(&r.report.subsets[k]).unwrap_or_default());
            }
        }
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|c| rows.iter().map(|r| r[c].chars().count()).chain([header[c].chars().count()]).max().unwrap_or(0))
        .collect();
    let line = |cells: &[String]| {
        cells
            .iter()
            .enumerate()
            .map(|(c, s)| if c == 0 { format!("{s:<w$}", w = widths[c]) } else { format!("{s:>w$}", w = widths[c]) })
            .collect::<Vec<_>>()
            .join(" | ")
    };
    let mut out = line(&header);
    out.push('\n');
    out.push_str(&widths.iter().map(|&w| "-".repeat(w)).collect::<Vec<_>>().join("-+-"));
    out.push('\n');
    for r in &rows {
        out.push_str(&line(r));
        out.push('\n');
    }
    Ok(out)
}

pub fn report_to_json(reports: &[SystemReport]) -> Result<String> {
    check_consistent(reports)?;
    Ok(serde_json::to_string_pretty(reports).expect("report serialization cannot fail"))
}

pub fn report_from_json(text: &str) -> Result<Vec<SystemReport>> {
    serde_json::from_str(text).map_err(|e| Error::Invalid(format!("report json: {e}")))
}
