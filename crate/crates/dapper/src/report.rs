//! Result-table rendering and persistence.
//!
//! A sensitivity run produces one [`ResultRow`] per experiment cell.
//! This module pivots those rows into per-metric tables (treatments as
//! rows, label rates as columns, the best value per column marked) and
//! reads and writes the row CSVs the command line works with. All
//! output is byte-stable for fixed input: fixed orderings, fixed
//! number formatting, no timestamps.

use crate::metrics::MetricReport;
use crate::pipeline::{Learner, ProbeRow, ResultRow, Treatment};
use std::path::Path;
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("csv: {0}")]
    Csv(String),
    #[error("row {row}: {problem}")]
    BadRow { row: usize, problem: String },
    #[error("no result rows")]
    Empty,
}

pub type Result<T> = std::result::Result<T, ReportError>;

/// The six reported measures, all on the 0-100 scale except AUC.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Recall,
    Pf,
    GMeasure,
    Precision,
    FMeasure,
    Auc,
}

impl Metric {
    pub fn all() -> [Metric; 6] {
        [
            Metric::Recall,
            Metric::Pf,
            Metric::GMeasure,
            Metric::Precision,
            Metric::FMeasure,
            Metric::Auc,
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            Metric::Recall => "recall",
            Metric::Pf => "pf",
            Metric::GMeasure => "g_measure",
            Metric::Precision => "precision",
            Metric::FMeasure => "f_measure",
            Metric::Auc => "auc",
        }
    }

    pub fn extract(&self, report: &MetricReport) -> Option<f64> {
        match self {
            Metric::Recall => report.recall,
            Metric::Pf => report.pf,
            Metric::GMeasure => report.g_measure,
            Metric::Precision => report.precision,
            Metric::FMeasure => report.f_measure,
            Metric::Auc => report.auc,
        }
    }

    /// False positive rate is the one measure where smaller wins.
    pub fn lower_is_better(&self) -> bool {
        matches!(self, Metric::Pf)
    }

    fn decimals(&self) -> usize {
        match self {
            Metric::Auc => 3,
            _ => 1,
        }
    }
}

/// One metric pivoted over (treatment row, label-rate column).
#[derive(Debug, Clone, PartialEq)]
pub struct MetricTable {
    pub metric: Metric,
    /// Column order: rates descending.
    pub rates: Vec<f64>,
    /// Row labels in first-seen input order.
    pub labels: Vec<String>,
    /// `cells[row][col]`; `None` for undefined or absent values.
    pub cells: Vec<Vec<Option<f64>>>,
    /// `best[row][col]`: cell ties the best defined value of its
    /// column (minimum for pf, maximum otherwise).
    pub best: Vec<Vec<bool>>,
}

/// Pivots result rows into one metric's table.
pub fn metric_table(rows: &[ResultRow], metric: Metric) -> Result<MetricTable> {
    if rows.is_empty() {
        return Err(ReportError::Empty);
    }
    let mut labels: Vec<String> = Vec::new();
    for row in rows {
        if !labels.contains(&row.label()) {
            labels.push(row.label());
        }
    }
    let mut rates: Vec<f64> = Vec::new();
    for row in rows {
        if !rates.iter().any(|r| r == &row.label_rate) {
            rates.push(row.label_rate);
        }
    }
    rates.sort_by(|a, b| b.partial_cmp(a).unwrap());

    let mut cells = vec![vec![None; rates.len()]; labels.len()];
    for row in rows {
        let i = labels.iter().position(|l| *l == row.label()).unwrap();
        let j = rates.iter().position(|r| r == &row.label_rate).unwrap();
        if cells[i][j].is_none() {
            cells[i][j] = metric.extract(&row.metrics);
        }
    }

    let mut best = vec![vec![false; rates.len()]; labels.len()];
    for j in 0..rates.len() {
        let column: Vec<f64> = cells.iter().filter_map(|r| r[j]).collect();
        let Some(target) = (if metric.lower_is_better() {
            column.iter().cloned().min_by(|a, b| a.partial_cmp(b).unwrap())
        } else {
            column.iter().cloned().max_by(|a, b| a.partial_cmp(b).unwrap())
        }) else {
            continue;
        };
        for i in 0..labels.len() {
            if let Some(v) = cells[i][j] {
                best[i][j] = (v - target).abs() < 1e-12;
            }
        }
    }
    Ok(MetricTable { metric, rates, labels, cells, best })
}

impl MetricTable {
    /// Aligned text rendering; the best value per column carries a
    /// trailing `*`.
    pub fn render_text(&self) -> String {
        let decimals = self.metric.decimals();
        let cell_strings: Vec<Vec<String>> = self
            .cells
            .iter()
            .zip(&self.best)
            .map(|(row, marks)| {
                row.iter()
                    .zip(marks)
                    .map(|(cell, marked)| match cell {
                        Some(v) => format!("{v:.decimals$}{}", if *marked { "*" } else { " " }),
                        None => "- ".to_string(),
                    })
                    .collect()
            })
            .collect();
        let headers: Vec<String> = self.rates.iter().map(|r| r.to_string()).collect();
        let label_width =
            self.labels.iter().map(|l| l.len()).chain(["treatment".len()]).max().unwrap();
        let col_widths: Vec<usize> = headers
            .iter()
            .enumerate()
            .map(|(j, h)| {
                cell_strings.iter().map(|row| row[j].len()).chain([h.len()]).max().unwrap()
            })
            .collect();

        let mut out = String::new();
        out.push_str(self.metric.name());
        out.push('\n');
        let mut header = format!("{:<label_width$}", "treatment");
        for (h, w) in headers.iter().zip(&col_widths) {
            header.push_str(&format!("  {h:>w$}"));
        }
        out.push_str(header.trim_end());
        out.push('\n');
        for (label, row) in self.labels.iter().zip(&cell_strings) {
            let mut line = format!("{label:<label_width$}");
            for (cell, w) in row.iter().zip(&col_widths) {
                line.push_str(&format!("  {cell:>w$}"));
            }
            out.push_str(line.trim_end());
            out.push('\n');
        }
        out
    }

    /// Plain CSV rendering: full-precision values, no markers.
    pub fn render_csv(&self) -> String {
        let mut out = String::from("treatment");
        for rate in &self.rates {
            out.push(',');
            out.push_str(&rate.to_string());
        }
        out.push('\n');
        for (label, row) in self.labels.iter().zip(&self.cells) {
            out.push_str(label);
            for cell in row {
                out.push(',');
                match cell {
                    Some(v) => out.push_str(&v.to_string()),
                    None => out.push_str("NA"),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// All six metric tables as one text report.
pub fn render_report(rows: &[ResultRow]) -> Result<String> {
    let mut out = String::new();
    for (i, metric) in Metric::all().into_iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&metric_table(rows, metric)?.render_text());
    }
    Ok(out)
}

const ROW_HEADER: [&str; 11] = [
    "treatment",
    "learner",
    "label_rate",
    "labeled_size",
    "trial_count",
    "recall",
    "pf",
    "g_measure",
    "precision",
    "f_measure",
    "auc",
];

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "NA".to_string())
}

fn parse_opt(s: &str, row: usize) -> Result<Option<f64>> {
    if s == "NA" {
        return Ok(None);
    }
    s.parse::<f64>()
        .map(Some)
        .map_err(|e| ReportError::BadRow { row, problem: format!("bad number {s:?}: {e}") })
}

/// Writes result rows as CSV. Wall times are omitted so identical runs
/// write identical bytes; they belong in the run manifest.
pub fn write_rows_csv(rows: &[ResultRow], path: impl AsRef<Path>) -> Result<()> {
    let mut writer =
        csv::Writer::from_path(path.as_ref()).map_err(|e| ReportError::Csv(e.to_string()))?;
    writer.write_record(ROW_HEADER).map_err(|e| ReportError::Csv(e.to_string()))?;
    for row in rows {
        writer
            .write_record(&[
                row.treatment.to_string(),
                row.learner.to_string(),
                row.label_rate.to_string(),
                row.labeled_size.to_string(),
                row.trial_count.to_string(),
                fmt_opt(row.metrics.recall),
                fmt_opt(row.metrics.pf),
                fmt_opt(row.metrics.g_measure),
                fmt_opt(row.metrics.precision),
                fmt_opt(row.metrics.f_measure),
                fmt_opt(row.metrics.auc),
            ])
            .map_err(|e| ReportError::Csv(e.to_string()))?;
    }
    writer.flush().map_err(|e| ReportError::Csv(e.to_string()))?;
    Ok(())
}

/// Reads rows written by [`write_rows_csv`]. Wall times come back
/// zero.
pub fn read_rows_csv(path: impl AsRef<Path>) -> Result<Vec<ResultRow>> {
    let mut reader =
        csv::Reader::from_path(path.as_ref()).map_err(|e| ReportError::Csv(e.to_string()))?;
    let headers = reader.headers().map_err(|e| ReportError::Csv(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ROW_HEADER {
        return Err(ReportError::Csv(format!("unexpected header {headers:?}")));
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| ReportError::Csv(e.to_string()))?;
        let field = |k: usize| record.get(k).unwrap_or_default();
        let bad = |problem: String| ReportError::BadRow { row: i, problem };
        let treatment: Treatment = field(0).parse().map_err(bad)?;
        let learner: Learner = field(1).parse().map_err(bad)?;
        let label_rate: f64 = field(2)
            .parse()
            .map_err(|e| ReportError::BadRow { row: i, problem: format!("bad rate: {e}") })?;
        let labeled_size: usize = field(3)
            .parse()
            .map_err(|e| ReportError::BadRow { row: i, problem: format!("bad size: {e}") })?;
        let trial_count: usize = field(4)
            .parse()
            .map_err(|e| ReportError::BadRow { row: i, problem: format!("bad count: {e}") })?;
        rows.push(ResultRow {
            treatment,
            learner,
            label_rate,
            metrics: MetricReport {
                recall: parse_opt(field(5), i)?,
                pf: parse_opt(field(6), i)?,
                g_measure: parse_opt(field(7), i)?,
                precision: parse_opt(field(8), i)?,
                f_measure: parse_opt(field(9), i)?,
                auc: parse_opt(field(10), i)?,
            },
            labeled_size,
            trial_count,
            wall_time: Duration::ZERO,
        });
    }
    if rows.is_empty() {
        return Err(ReportError::Empty);
    }
    Ok(rows)
}

/// Writes imbalance-probe rows: label_rate, learner, minority_fraction.
pub fn write_probe_csv(rows: &[ProbeRow], path: impl AsRef<Path>) -> Result<()> {
    let mut writer =
        csv::Writer::from_path(path.as_ref()).map_err(|e| ReportError::Csv(e.to_string()))?;
    writer
        .write_record(["label_rate", "learner", "minority_fraction"])
        .map_err(|e| ReportError::Csv(e.to_string()))?;
    for row in rows {
        writer
            .write_record(&[
                row.label_rate.to_string(),
                row.learner.to_string(),
                row.minority_fraction.to_string(),
            ])
            .map_err(|e| ReportError::Csv(e.to_string()))?;
    }
    writer.flush().map_err(|e| ReportError::Csv(e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(treatment: Treatment, learner: Learner, rate: f64, g: f64, pf: f64) -> ResultRow {
        ResultRow {
            treatment,
            learner,
            label_rate: rate,
            metrics: MetricReport {
                recall: Some(80.0),
                pf: Some(pf),
                g_measure: Some(g),
                precision: Some(70.0),
                f_measure: Some(75.0),
                auc: Some(0.9),
            },
            labeled_size: 100,
            trial_count: 0,
            wall_time: Duration::ZERO,
        }
    }

    fn sample_rows() -> Vec<ResultRow> {
        vec![
            row(Treatment::Default, Learner::Propagation, 0.9, 61.0, 10.0),
            row(Treatment::Default, Learner::Propagation, 0.5, 55.5, 12.5),
            row(Treatment::Dapper, Learner::Spreading, 0.9, 97.6, 4.5),
            row(Treatment::Dapper, Learner::Spreading, 0.5, 96.0, 20.0),
        ]
    }

    #[test]
    fn marks_the_best_cell_per_column() {
        let g = metric_table(&sample_rows(), Metric::GMeasure).unwrap();
        assert_eq!(g.labels, vec!["Default LP", "Dapper LS"]);
        assert_eq!(g.rates, vec![0.9, 0.5]);
        assert_eq!(g.best, vec![vec![false, false], vec![true, true]]);

        // pf marks the minimum instead, and the winner flips by column.
        let pf = metric_table(&sample_rows(), Metric::Pf).unwrap();
        assert_eq!(pf.best, vec![vec![false, true], vec![true, false]]);
    }

    #[test]
    fn single_row_gives_a_single_marked_cell() {
        let rows = vec![row(Treatment::Dapper, Learner::Spreading, 0.1, 88.0, 5.0)];
        let table = metric_table(&rows, Metric::GMeasure).unwrap();
        assert_eq!(table.cells, vec![vec![Some(88.0)]]);
        assert_eq!(table.best, vec![vec![true]]);
    }

    #[test]
    fn text_rendering_is_stable_and_exact() {
        let table = metric_table(&sample_rows(), Metric::GMeasure).unwrap();
        let expected = "\
g_measure
treatment     0.9    0.5
Default LP  61.0   55.5
Dapper LS   97.6*  96.0*
";
        assert_eq!(table.render_text(), expected);
        assert_eq!(table.render_text(), table.render_text());

        let csv = table.render_csv();
        assert_eq!(csv, "treatment,0.9,0.5\nDefault LP,61,55.5\nDapper LS,97.6,96\n");
    }

    #[test]
    fn undefined_cells_render_as_dashes_and_are_never_best() {
        let mut rows = sample_rows();
        rows[2].metrics.g_measure = None;
        rows[3].metrics.g_measure = None;
        let table = metric_table(&rows, Metric::GMeasure).unwrap();
        assert_eq!(table.best[0], vec![true, true]);
        assert_eq!(table.best[1], vec![false, false]);
        assert!(table.render_text().contains('-'));
    }

    #[test]
    fn full_report_contains_all_six_tables() {
        let text = render_report(&sample_rows()).unwrap();
        for metric in Metric::all() {
            assert!(text.contains(metric.name()), "missing {}", metric.name());
        }
    }

    #[test]
    fn rows_csv_round_trips() {
        let mut rows = sample_rows();
        rows[0].metrics.auc = None;
        rows[1].trial_count = 100;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rows.csv");
        write_rows_csv(&rows, &path).unwrap();
        let back = read_rows_csv(&path).unwrap();
        assert_eq!(rows, back);

        // Same input, same bytes.
        let again = dir.path().join("rows2.csv");
        write_rows_csv(&rows, &again).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    }

    #[test]
    fn probe_csv_has_expected_shape() {
        let rows = vec![
            ProbeRow { label_rate: 0.9, learner: Learner::Propagation, minority_fraction: 0.048 },
            ProbeRow { label_rate: 0.9, learner: Learner::Spreading, minority_fraction: 0.031 },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("probe.csv");
        write_probe_csv(&rows, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "label_rate,learner,minority_fraction\n0.9,propagation,0.048\n0.9,spreading,0.031\n"
        );
    }

    #[test]
    fn empty_input_is_rejected() {
        assert!(matches!(metric_table(&[], Metric::GMeasure), Err(ReportError::Empty)));
        assert!(matches!(render_report(&[]), Err(ReportError::Empty)));
    }
}
