//! Text tables and CSV for evaluation reports.

use super::EvalReport;
use crate::catalog::Language;
use crate::taskgen::TaskKind;

/// One line of the model-level table: English scores per task plus the
/// non-English average, all in percent.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub label: String,
    pub english: [Option<f64>; 5],
    pub non_en_avg: Option<f64>,
}

impl SummaryRow {
    pub fn from_report(label: impl Into<String>, report: &EvalReport) -> Self {
        SummaryRow {
            label: label.into(),
            english: TaskKind::ALL.map(|t| report.row(t, Language::En).and_then(|r| r.accuracy).map(|a| a * 100.0)),
            non_en_avg: report.non_en_overall().map(|a| a * 100.0),
        }
    }
}

fn cell(value: Option<f64>) -> String {
    value.map(|v| format!("{v:.1}")).unwrap_or_else(|| "-".to_string())
}

/// Pipe table; the first column is left-aligned, the rest right-aligned.
fn grid(header: &[String], rows: &[Vec<String>]) -> String {
    let widths: Vec<usize> = (0..header.len())
        .map(|c| {
            rows.iter()
                .map(|r| r[c].chars().count())
                .chain([header[c].chars().count()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let line = |cells: &[String]| {
        let parts: Vec<String> = cells
            .iter()
            .enumerate()
            .map(|(c, text)| {
                if c == 0 {
                    format!(" {text:<w$} ", w = widths[c])
                } else {
                    format!(" {text:>w$} ", w = widths[c])
                }
            })
            .collect();
        format!("|{}|\n", parts.join("|"))
    };
    let mut out = line(header);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(w + 2)).collect();
    out.push_str(&format!("|{}|\n", rule.join("|")));
    for row in rows {
        out.push_str(&line(row));
    }
    out
}

fn task_header(first: &str) -> Vec<String> {
    std::iter::once(first.to_string())
        .chain(TaskKind::ALL.iter().map(|t| t.label().to_string()))
        .collect()
}

pub fn render_summary_table(rows: &[SummaryRow]) -> String {
    let mut header = task_header("Model");
    header.push("non-En avg.".to_string());
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            std::iter::once(r.label.clone())
                .chain(r.english.iter().map(|v| cell(*v)))
                .chain([cell(r.non_en_avg)])
                .collect()
        })
        .collect();
    grid(&header, &body)
}

/// Accuracy in percent per language, plus the non-English average per task.
pub fn render_language_table(report: &EvalReport) -> String {
    let mut languages: Vec<Language> = report.rows.iter().map(|r| r.language).collect();
    languages.sort();
    languages.dedup();
    let mut body: Vec<Vec<String>> = languages
        .iter()
        .map(|&lang| {
            std::iter::once(lang.code().to_string())
                .chain(TaskKind::ALL.iter().map(|&t| {
                    cell(report.row(t, lang).and_then(|r| r.accuracy).map(|a| a * 100.0))
                }))
                .collect()
        })
        .collect();
    if !report.non_en_average.is_empty() {
        body.push(
            std::iter::once("non-En avg.".to_string())
                .chain(TaskKind::ALL.iter().map(|&t| {
                    cell(
                        report
                            .non_en_average
                            .iter()
                            .find(|a| a.task == t)
                            .map(|a| a.accuracy * 100.0),
                    )
                }))
                .collect(),
        );
    }
    grid(&task_header("Language"), &body)
}

/// `task,language,shots,count,accuracy`, with a trailing `failed` column
/// when the run tolerated errors.
pub fn report_csv(report: &EvalReport) -> String {
    let with_failed = report.metadata.options.skip_errors;
    let mut out = String::from("task,language,shots,count,accuracy");
    out.push_str(if with_failed { ",failed\n" } else { "\n" });
    for row in &report.rows {
        let accuracy = row.accuracy.map(|a| format!("{a}")).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{}",
            row.task.name(),
            row.language,
            row.shots,
            row.count,
            accuracy
        ));
        if with_failed {
            out.push_str(&format!(",{}", row.failed));
        }
        out.push('\n');
    }
    out
}
