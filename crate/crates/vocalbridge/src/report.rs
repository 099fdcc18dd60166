//! Line-delimited run reports.
//!
//! The training log carries one record per optimizer step; the metrics
//! report carries the evaluation numbers. Both are plain `key=value` /
//! tab-separated text with fixed float formatting so identical runs
//! produce identical bytes.

use std::path::Path;

use vocalbridge_core::trainer::StepRecord;

use crate::error::{CliError, Result};
use crate::files::atomic_write;

pub fn write_train_log(path: &Path, steps: &[StepRecord]) -> Result<()> {
    let mut text = String::new();
    for s in steps {
        text.push_str(&format!(
            "{}\t{:.9e}\t{:.9e}\t{:.9e}\t{:.9e}\n",
            s.step, s.lr, s.bridge_loss, s.z0_l1, s.total
        ));
    }
    atomic_write(path, text.as_bytes())
}

/// Evaluation metrics; `arr` is `None` when no protected trial fell below
/// the threshold (the restoration rate is undefined there).
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub trials: usize,
    pub rejected_protected: usize,
    pub restored: usize,
    pub eer: f64,
    pub tau: f64,
    pub arr: Option<f64>,
    pub mean_latent_l2_protected: Option<f64>,
    pub mean_latent_l2_purified: Option<f64>,
}

fn opt(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.6}"),
        None => "undefined".to_string(),
    }
}

impl MetricsReport {
    pub fn to_text(&self) -> String {
        format!(
            "trials={}\nrejected_protected={}\nrestored={}\neer={:.6}\ntau={:.6}\narr={}\nmean_latent_l2_protected={}\nmean_latent_l2_purified={}\n",
            self.trials,
            self.rejected_protected,
            self.restored,
            self.eer,
            self.tau,
            opt(self.arr),
            opt(self.mean_latent_l2_protected),
            opt(self.mean_latent_l2_purified),
        )
    }

    /// Human-readable one-paragraph summary.
    pub fn summary(&self) -> String {
        format!(
            "EER={:.4}, τ={:.3} | trials={} rejected={} restored={} | ARR={} | latent L2 protected={} purified={}",
            self.eer,
            self.tau,
            self.trials,
            self.rejected_protected,
            self.restored,
            opt(self.arr),
            opt(self.mean_latent_l2_protected),
            opt(self.mean_latent_l2_purified),
        )
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        atomic_write(path, self.to_text().as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::from_io(path, e))?;
        let mut map = std::collections::BTreeMap::new();
        for line in text.lines() {
            if let Some((k, v)) = line.split_once('=') {
                map.insert(k.to_string(), v.to_string());
            }
        }
        let get = |k: &str| -> Result<String> {
            map.get(k).cloned().ok_or_else(|| CliError::Format {
                path: path.to_path_buf(),
                message: format!("missing field {k}"),
            })
        };
        let parse_f64 = |k: &str| -> Result<f64> {
            get(k)?.parse().map_err(|_| CliError::Format {
                path: path.to_path_buf(),
                message: format!("field {k} is not a number"),
            })
        };
        let parse_opt = |k: &str| -> Result<Option<f64>> {
            let v = get(k)?;
            if v == "undefined" {
                Ok(None)
            } else {
                v.parse().map(Some).map_err(|_| CliError::Format {
                    path: path.to_path_buf(),
                    message: format!("field {k} is not a number"),
                })
            }
        };
        Ok(Self {
            trials: parse_f64("trials")? as usize,
            rejected_protected: parse_f64("rejected_protected")? as usize,
            restored: parse_f64("restored")? as usize,
            eer: parse_f64("eer")?,
            tau: parse_f64("tau")?,
            arr: parse_opt("arr")?,
            mean_latent_l2_protected: parse_opt("mean_latent_l2_protected")?,
            mean_latent_l2_purified: parse_opt("mean_latent_l2_purified")?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_report_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.txt");
        // Values chosen to be exactly representable at the report's six
        // decimal places.
        let report = MetricsReport {
            trials: 100,
            rejected_protected: 87,
            restored: 61,
            eer: 0.02,
            tau: 0.912345,
            arr: Some(0.701149),
            mean_latent_l2_protected: Some(3.25),
            mean_latent_l2_purified: Some(1.5),
        };
        report.write(&path).unwrap();
        assert_eq!(MetricsReport::read(&path).unwrap(), report);
        // Same content twice produces identical bytes.
        let bytes = std::fs::read(&path).unwrap();
        report.write(&path).unwrap();
        assert_eq!(bytes, std::fs::read(&path).unwrap());
    }

    #[test]
    fn undefined_arr_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.txt");
        let report = MetricsReport {
            trials: 3,
            rejected_protected: 0,
            restored: 0,
            eer: 0.0,
            tau: 0.9,
            arr: None,
            mean_latent_l2_protected: None,
            mean_latent_l2_purified: None,
        };
        report.write(&path).unwrap();
        let back = MetricsReport::read(&path).unwrap();
        assert_eq!(back.arr, None);
        assert!(back.to_text().contains("arr=undefined"));
    }
}
