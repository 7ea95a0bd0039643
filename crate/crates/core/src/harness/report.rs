//! Report CSV and comparison tables.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::ledger::bytes_to_gb;
use crate::model::Metrics;

use super::experiment::{INITIAL_LABEL, REFERENCE_LABEL};

pub const CSV_COLUMNS: [&str; 9] = [
    "round",
    "participants",
    "initial_loss",
    "initial_acc",
    "federated_loss",
    "federated_acc",
    "unseen_loss",
    "unseen_acc",
    "cumulative_bytes",
];

/// Value written in the `round` column of the summary row.
pub const SUMMARY_ROUND: &str = "final";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportRow {
    pub round: usize,
    pub participants: usize,
    /// Initial, federated and unseen splits.
    pub metrics: [Metrics; 3],
    pub cumulative_bytes: u64,
}

/// Per-round rows plus a summary. In the summary, `participants` counts all
/// uplink transfers of the run and `cumulative_bytes` is the ledger total.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub label: String,
    pub rows: Vec<ReportRow>,
    pub summary: ReportRow,
    pub config_echo: String,
    /// Identifies the evaluation splits; `None` when read back from CSV.
    pub eval_signature: Option<String>,
}

impl RunReport {
    pub fn cost_gb(&self) -> f64 {
        bytes_to_gb(self.summary.cumulative_bytes)
    }
}

/// Six significant digits, shortest form.
pub fn format_sig6(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{x:.5e}").parse().expect("formatted float parses");
    rounded.to_string()
}

fn row_fields(round: String, r: &ReportRow) -> Vec<String> {
    let mut f = vec![round, r.participants.to_string()];
    for m in &r.metrics {
        f.push(format_sig6(m.loss));
        f.push(format_sig6(m.accuracy));
    }
    f.push(r.cumulative_bytes.to_string());
    f
}

pub fn export_csv<W: Write>(report: &RunReport, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(CSV_COLUMNS)?;
    for r in &report.rows {
        w.write_record(row_fields(r.round.to_string(), r))?;
    }
    w.write_record(row_fields(SUMMARY_ROUND.to_owned(), &report.summary))?;
    w.flush()?;
    Ok(())
}

/// Inverse of [`export_csv`] up to float rounding. The summary row's round
/// is taken from the last round row.
pub fn read_report_csv<R: Read>(source: R, label: &str) -> Result<RunReport> {
    let mut rd = csv::Reader::from_reader(source);
    if rd.headers()?.iter().ne(CSV_COLUMNS) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected columns {}", CSV_COLUMNS.join(",")),
        });
    }
    let mut rows = Vec::new();
    let mut summary = None;
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let bad = |what: &str| Error::Parse {
            line,
            message: format!("invalid {what}"),
        };
        if summary.is_some() {
            return Err(bad("row after summary"));
        }
        let num = |k: usize| -> Result<f64> { rec[k].parse().map_err(|_| bad(CSV_COLUMNS[k])) };
        let metric = |k: usize| -> Result<Metrics> {
            Ok(Metrics {
                loss: num(k)?,
                accuracy: num(k + 1)?,
            })
        };
        let mut row = ReportRow {
            round: 0,
            participants: rec[1].parse().map_err(|_| bad("participants"))?,
            metrics: [metric(2)?, metric(4)?, metric(6)?],
            cumulative_bytes: rec[8].parse().map_err(|_| bad("cumulative_bytes"))?,
        };
        if &rec[0] == SUMMARY_ROUND {
            row.round = rows.last().map_or(0, |r: &ReportRow| r.round);
            summary = Some(row);
        } else {
            row.round = rec[0].parse().map_err(|_| bad("round"))?;
            rows.push(row);
        }
    }
    let summary = summary.ok_or_else(|| Error::Parse {
        line: rows.len() + 2,
        message: "missing summary row".into(),
    })?;
    Ok(RunReport {
        label: label.to_owned(),
        rows,
        summary,
        config_echo: String::new(),
        eval_signature: None,
    })
}

fn label_rank(label: &str) -> u8 {
    match label {
        INITIAL_LABEL => 0,
        REFERENCE_LABEL => 2,
        _ => 1,
    }
}

fn by_table_order(a: &&RunReport, b: &&RunReport) -> Ordering {
    label_rank(&a.label)
        .cmp(&label_rank(&b.label))
        .then_with(|| a.label.cmp(&b.label))
}

/// One row per report: `Initial` first, `Ref` last, the rest by label.
/// Columns: unseen, federated and initial
/// accuracy (%), then cost in GB.
pub fn compare_runs(reports: &[&RunReport]) -> Result<String> {
    let mut signature: Option<&str> = None;
    for r in reports {
        if let Some(s) = r.eval_signature.as_deref() {
            match signature {
                Some(prev) if prev != s => {
                    return Err(Error::Integrity(format!(
                        "report `{}` was evaluated on different splits",
                        r.label
                    )))
                }
                _ => signature = Some(s),
            }
        }
    }
    let mut sorted: Vec<&RunReport> = reports.to_vec();
    sorted.sort_by(by_table_order);
    let width = sorted.iter().map(|r| r.label.len()).max().unwrap_or(0).max(3);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>9}  {:>9}  {:>9}  {:>10}",
        "run", "unseen", "federated", "initial", "cost[GB]"
    );
    for r in sorted {
        let [init, fed, unseen] = r.summary.metrics;
        let cost = if r.summary.cumulative_bytes == 0 {
            "-".to_owned()
        } else {
            format!("{:.6}", r.cost_gb())
        };
        let _ = writeln!(
            out,
            "{:<width$}  {:>9.2}  {:>9.2}  {:>9.2}  {:>10}",
            r.label,
            100.0 * unseen.accuracy,
            100.0 * fed.accuracy,
            100.0 * init.accuracy,
            cost
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(loss: f64, accuracy: f64) -> Metrics {
        Metrics { loss, accuracy }
    }

    fn report(label: &str, rounds: usize) -> RunReport {
        let rows: Vec<ReportRow> = (0..rounds)
            .map(|i| ReportRow {
                round: i,
                participants: 3,
                metrics: [m(1.0 / (i + 3) as f64, 0.5), m(0.25, 2.0 / 3.0), m(1e-7, 0.1)],
                cumulative_bytes: 100 * i as u64,
            })
            .collect();
        let summary = rows.last().copied().unwrap_or(ReportRow {
            round: 0,
            participants: 0,
            metrics: [m(0.5, 0.5); 3],
            cumulative_bytes: 0,
        });
        RunReport {
            label: label.into(),
            rows,
            summary,
            config_echo: String::new(),
            eval_signature: Some("s".into()),
        }
    }

    #[test]
    fn sig6_formatting() {
        assert_eq!(format_sig6(2.0 / 3.0), "0.666667");
        assert_eq!(format_sig6(0.5), "0.5");
        assert_eq!(format_sig6(123456789.0), "123457000");
        assert_eq!(format_sig6(1.234567e-7), "0.000000123457");
        assert_eq!(format_sig6(0.0), "0");
    }

    #[test]
    fn empty_report_is_header_and_summary() {
        let mut buf = Vec::new();
        export_csv(&report("Ref", 0), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], CSV_COLUMNS.join(","));
        assert!(lines[1].starts_with("final,0,"));
    }

    #[test]
    fn csv_roundtrip() {
        let r = report("E(1)-M", 4);
        let mut a = Vec::new();
        export_csv(&r, &mut a).unwrap();
        let back = read_report_csv(a.as_slice(), "E(1)-M").unwrap();
        assert_eq!(back.rows.len(), 4);
        assert_eq!(back.rows[3].cumulative_bytes, 300);
        assert_eq!(back.rows[0].metrics[1].accuracy, 0.666667);
        let mut b = Vec::new();
        export_csv(&back, &mut b).unwrap();
        assert_eq!(a, b);
        assert!(read_report_csv("round\n1\n".as_bytes(), "x").is_err());
    }

    #[test]
    fn table_order_and_split_check() {
        let reports = [report("Ref", 0), report("C-W", 2), report(INITIAL_LABEL, 0), report("C-M", 2), report("E-all-W", 2)];
        let table = compare_runs(&reports.iter().collect::<Vec<_>>()).unwrap();
        let labels: Vec<&str> = table.lines().skip(1).map(|l| l.split_whitespace().next().unwrap()).collect();
        assert_eq!(labels, ["Initial", "C-M", "C-W", "E-all-W", "Ref"]);

        let one = report("C-M", 2);
        assert_eq!(compare_runs(&[&one]).unwrap().lines().count(), 2);
        let twice = compare_runs(&[&one, &one]).unwrap();
        let rows: Vec<&str> = twice.lines().skip(1).collect();
        assert_eq!(rows[0], rows[1]);

        let mut other = report("C-W", 2);
        other.eval_signature = Some("t".into());
        assert!(compare_runs(&[&one, &other]).is_err());
    }
}
