use std::fmt::Write as _;
use std::path::Path;

use super::Protocol;
use crate::error::{Error, Result};

pub const REPORT_HEADER: &str = "protocol seed kappa prop_acc |S| |Lc| |Li| |T|";

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub protocol: Protocol,
    pub seed: u64,
    pub kappa: f64,
    /// Absent when nothing was propagated or U has no ground truth.
    pub propagation_accuracy: Option<f64>,
    pub n_s: usize,
    pub n_u: usize,
    pub n_lc: usize,
    pub n_li: usize,
    pub n_t: usize,
}

impl EvaluationReport {
    /// One line of the machine-readable report.
    pub fn line(&self) -> String {
        let acc = self.propagation_accuracy.map_or_else(|| "-".to_string(), |a| format!("{a:.6}"));
        format!(
            "{} {} {:.6} {} {} {} {} {}",
            self.protocol, self.seed, self.kappa, acc, self.n_s, self.n_lc, self.n_li, self.n_t
        )
    }
}

/// A report file read back: the dataset fingerprint and one row per run.
/// Rows parsed from text do not know `|U|`, so `n_u` is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportFile {
    pub dataset: String,
    pub reports: Vec<EvaluationReport>,
}

pub fn render_lines(reports: &[EvaluationReport]) -> String {
    let mut out = format!("{REPORT_HEADER}\n");
    for r in reports {
        writeln!(out, "{}", r.line()).unwrap();
    }
    out
}

pub fn render_report(dataset_fingerprint: &str, reports: &[EvaluationReport]) -> String {
    format!("# salp-report v1 dataset={dataset_fingerprint}\n{}", render_lines(reports))
}

pub fn parse_report(path: &Path, text: &str) -> Result<ReportFile> {
    let mut lines = text.lines().enumerate();
    let dataset = lines
        .next()
        .and_then(|(_, l)| l.strip_prefix("# salp-report v1 dataset="))
        .ok_or_else(|| Error::format(path, 1, "missing `# salp-report v1` header"))?
        .trim()
        .to_string();
    match lines.next() {
        Some((_, l)) if l.trim() == REPORT_HEADER => {}
        _ => return Err(Error::format(path, 2, "missing column header")),
    }
    let mut reports = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::format(path, idx + 1, format!("malformed report line `{line}`"));
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 8 {
            return Err(bad());
        }
        let count = |s: &str| s.parse::<usize>().map_err(|_| bad());
        reports.push(EvaluationReport {
            protocol: f[0].parse().map_err(|_| bad())?,
            seed: f[1].parse().map_err(|_| bad())?,
            kappa: f[2].parse().map_err(|_| bad())?,
            propagation_accuracy: match f[3] {
                "-" => None,
                a => Some(a.parse().map_err(|_| bad())?),
            },
            n_s: count(f[4])?,
            n_u: 0,
            n_lc: count(f[5])?,
            n_li: count(f[6])?,
            n_t: count(f[7])?,
        });
    }
    Ok(ReportFile { dataset, reports })
}

/// Per-protocol aggregate over seeds. Standard deviations are population ones.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub protocol: Protocol,
    pub runs: usize,
    pub mean_s: f64,
    pub mean_labeled: f64,
    pub accuracy: Option<(f64, f64)>,
    pub kappa: (f64, f64),
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    // Shifted by the first value so identical inputs give that value and zero spread.
    let shift = values[0];
    let mean = shift + values.iter().map(|v| v - shift).sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Groups reports by protocol, in order of first appearance.
pub fn summarize(reports: &[EvaluationReport]) -> Vec<Summary> {
    let mut order: Vec<Protocol> = Vec::new();
    for r in reports {
        if !order.contains(&r.protocol) {
            order.push(r.protocol);
        }
    }
    order
        .into_iter()
        .map(|protocol| {
            let group: Vec<&EvaluationReport> = reports.iter().filter(|r| r.protocol == protocol).collect();
            let col = |f: &dyn Fn(&EvaluationReport) -> f64| group.iter().map(|r| f(r)).collect::<Vec<_>>();
            let acc: Option<Vec<f64>> = group.iter().map(|r| r.propagation_accuracy).collect();
            Summary {
                protocol,
                runs: group.len(),
                mean_s: mean_std(&col(&|r| r.n_s as f64)).0,
                mean_labeled: mean_std(&col(&|r| (r.n_lc + r.n_li) as f64)).0,
                accuracy: acc.map(|a| mean_std(&a)),
                kappa: mean_std(&col(&|r| r.kappa)),
            }
        })
        .collect()
}

/// Aligned comparison table, one row per protocol.
pub fn render_table(summaries: &[Summary]) -> String {
    let header = ["protocol", "runs", "|S|", "|Lc u Li|", "prop. acc.", "kappa"];
    let rows: Vec<[String; 6]> = summaries
        .iter()
        .map(|s| {
            [
                s.protocol.to_string(),
                s.runs.to_string(),
                format!("{:.1}", s.mean_s),
                format!("{:.1}", s.mean_labeled),
                s.accuracy.map_or_else(|| "-".into(), |(m, sd)| format!("{m:.4} ± {sd:.4}")),
                format!("{:.4} ± {:.4}", s.kappa.0, s.kappa.1),
            ]
        })
        .collect();
    let mut widths = header.map(|h| h.chars().count());
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let mut push_row = |cells: &[&str]| {
        let line: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| {
                let pad = w - c.chars().count();
                if i == 0 { format!("{c}{}", " ".repeat(pad)) } else { format!("{}{c}", " ".repeat(pad)) }
            })
            .collect();
        writeln!(out, "{}", line.join("  ").trim_end()).unwrap();
    };
    push_row(&header);
    for row in &rows {
        push_row(&row.iter().map(String::as_str).collect::<Vec<_>>());
    }
    out
}
