use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::privacy::Epsilon;

/// Metrics of the global model after `round` completed rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub round: u64,
    /// Mean cross-entropy on the training split.
    pub train_loss: f64,
    pub train_accuracy: f64,
    /// Mean cross-entropy on the held-out split.
    pub loss: f64,
    pub accuracy: f64,
    /// Macro F1 on the held-out split.
    pub f1: f64,
    /// Cumulative scalars uploaded by clients so far.
    pub scalars_up: u64,
    pub scalars_down: u64,
    pub epsilon: Option<Epsilon>,
}

/// Unweighted mean of per-class F1 over every class that occurs in either
/// `predictions` or `labels`.
pub fn f1_macro(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(invalid(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Empty("f1 input"));
    }
    let classes = predictions.iter().chain(labels).max().copied().unwrap_or(0) + 1;
    let mut tp = vec![0usize; classes];
    let mut fp = vec![0usize; classes];
    let mut fn_ = vec![0usize; classes];
    for (&p, &y) in predictions.iter().zip(labels) {
        if p == y {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn_[y] += 1;
        }
    }
    let scores: Vec<f64> = (0..classes)
        .filter(|&c| tp[c] + fp[c] + fn_[c] > 0)
        .map(|c| 2.0 * tp[c] as f64 / (2 * tp[c] + fp[c] + fn_[c]) as f64)
        .collect();
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Jsonl,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "jsonl" => Ok(Self::Jsonl),
            other => Err(invalid(format!("unknown report format {other:?}"))),
        }
    }
}

pub const CSV_HEADER: [&str; 7] = ["round", "loss", "acc", "f1", "up", "down", "eps"];

/// Renders `records` in `format`. Output depends only on the records.
pub fn render_report(records: &[MetricRecord], format: ReportFormat) -> Result<String> {
    if records.is_empty() {
        return Err(Error::Empty("metric records"));
    }
    match format {
        ReportFormat::Jsonl => {
            let mut out = String::new();
            for r in records {
                out.push_str(&serde_json::to_string(r)?);
                out.push('\n');
            }
            Ok(out)
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(CSV_HEADER)?;
            for r in records {
                w.write_record([
                    r.round.to_string(),
                    r.loss.to_string(),
                    r.accuracy.to_string(),
                    r.f1.to_string(),
                    r.scalars_up.to_string(),
                    r.scalars_down.to_string(),
                    r.epsilon.map(|e| e.to_string()).unwrap_or_default(),
                ])?;
            }
            let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
            Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
        }
    }
}

pub fn emit_report(
    records: &[MetricRecord],
    format: ReportFormat,
    path: impl AsRef<Path>,
) -> Result<()> {
    let text = render_report(records, format)?;
    let mut f = fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

/// Reads records written in the `jsonl` format.
pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<MetricRecord>> {
    let f = fs::File::open(path)?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(round: u64, eps: Option<Epsilon>) -> MetricRecord {
        MetricRecord {
            round,
            train_loss: 0.5,
            train_accuracy: 0.8,
            loss: 0.25 + round as f64,
            accuracy: 0.75,
            f1: 0.7,
            scalars_up: 10 * round,
            scalars_down: 20 * round,
            epsilon: eps,
        }
    }

    #[test]
    fn f1_examples() {
        assert_eq!(f1_macro(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
        assert_eq!(f1_macro(&[1, 0, 1], &[0, 1, 0]).unwrap(), 0.0);
        assert!((f1_macro(&[0, 0, 1], &[0, 1, 1]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        // Class 1 never appears and is excluded.
        assert_eq!(f1_macro(&[0, 2], &[0, 2]).unwrap(), 1.0);
        assert!(f1_macro(&[], &[]).is_err());
        assert!(f1_macro(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn csv_layout() {
        let recs = [
            record(0, None),
            record(5, Some(Epsilon::Bounded(1.5))),
            record(10, Some(Epsilon::Unbounded)),
        ];
        let text = render_report(&recs, ReportFormat::Csv).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "round,loss,acc,f1,up,down,eps");
        assert_eq!(lines[1], "0,0.25,0.75,0.7,0,0,");
        assert_eq!(lines[2], "5,5.25,0.75,0.7,50,100,1.5");
        assert_eq!(lines[3], "10,10.25,0.75,0.7,100,200,unbounded");
        assert!(render_report(&[], ReportFormat::Csv).is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let recs = vec![
            record(0, None),
            record(1, Some(Epsilon::Bounded(0.1 + 0.2))),
        ];
        emit_report(&recs, ReportFormat::Jsonl, &path).unwrap();
        assert_eq!(read_records(&path).unwrap(), recs);
        assert!(emit_report(
            &recs,
            ReportFormat::Jsonl,
            dir.path().join("missing/m.jsonl")
        )
        .is_err());
    }
}
