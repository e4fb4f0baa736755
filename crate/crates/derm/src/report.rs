use std::path::Path;

use derm_core::metrics::{ClassMetrics, MetricsReport};
use derm_core::train::EpochRecord;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::files::atomic_write;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionJson {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassJson {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

impl From<&ClassMetrics> for ClassJson {
    fn from(c: &ClassMetrics) -> Self {
        ClassJson {
            precision: c.precision,
            recall: c.recall,
            f1: c.f1,
            support: c.support,
        }
    }
}

/// `metrics.json`. Top-level precision/recall/f1 treat malignant as the
/// positive class; the `weighted_` fields average both classes by support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsJson {
    pub samples: u64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
    pub auc_roc: Option<f64>,
    pub non_malignant: ClassJson,
    pub malignant: ClassJson,
    pub confusion: ConfusionJson,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub loss: Option<f64>,
}

impl MetricsJson {
    pub fn new(r: &MetricsReport, loss: Option<f64>) -> Self {
        let c = r.confusion;
        MetricsJson {
            samples: c.total(),
            accuracy: r.accuracy,
            precision: r.precision,
            recall: r.recall,
            f1: r.f1,
            weighted_precision: r.weighted_precision,
            weighted_recall: r.weighted_recall,
            weighted_f1: r.weighted_f1,
            auc_roc: r.auc_roc,
            non_malignant: (&r.non_malignant).into(),
            malignant: (&r.malignant).into(),
            confusion: ConfusionJson {
                tp: c.tp,
                tn: c.tn,
                fp: c.fp,
                fn_: c.fn_,
            },
            loss,
        }
    }
}

fn json_bytes<T: Serialize>(v: &T) -> CliResult<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(v).map_err(|e| CliError::Internal(e.to_string()))?;
    out.push(b'\n');
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, v: &T) -> CliResult<()> {
    atomic_write(path, &json_bytes(v)?)
}

/// Rows are the actual class, columns the predicted one.
pub fn confusion_csv(r: &MetricsReport) -> String {
    let [[tn, fp], [fn_, tp]] = r.confusion.as_rows();
    format!("actual,non-malignant,malignant\nnon-malignant,{tn},{fp}\nmalignant,{fn_},{tp}\n")
}

/// Writes `metrics.json` and `confusion.csv` into `dir`.
pub fn write_report(dir: &Path, r: &MetricsReport, loss: Option<f64>) -> CliResult<()> {
    write_json(&dir.join("metrics.json"), &MetricsJson::new(r, loss))?;
    atomic_write(&dir.join("confusion.csv"), confusion_csv(r).as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLine {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub val_precision: f64,
    pub val_recall: f64,
    pub val_f1: f64,
}

impl From<&EpochRecord> for LogLine {
    fn from(r: &EpochRecord) -> Self {
        LogLine {
            epoch: r.epoch,
            lr: r.lr,
            train_loss: r.train_loss,
            val_loss: r.val_loss,
            val_accuracy: r.val_accuracy,
            val_precision: r.val_precision,
            val_recall: r.val_recall,
            val_f1: r.val_f1,
        }
    }
}

pub fn log_jsonl(records: &[EpochRecord]) -> CliResult<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(&LogLine::from(r)).map_err(|e| CliError::Internal(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confusion_layout() {
        let r = MetricsReport::new(&[0.9, 0.2, 0.7, 0.4], &[1, 0, 1, 0], &[1, 0, 0, 1]).unwrap();
        assert_eq!(confusion_csv(&r), "actual,non-malignant,malignant\nnon-malignant,1,1\nmalignant,1,1\n");
        let v: serde_json::Value = serde_json::from_slice(&json_bytes(&MetricsJson::new(&r, None)).unwrap()).unwrap();
        assert_eq!(v["confusion"]["fn"], 1);
        assert_eq!(v["auc_roc"], 0.75);
        assert!(v.get("loss").is_none());
    }
}
