use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Accuracies of one trained classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageMetrics {
    pub schema_version: u32,
    pub stage: String,
    /// Best validation accuracy (the selection criterion).
    pub val_accuracy: f64,
    /// Test accuracy of the selected snapshot; never used for selection.
    pub test_accuracy: f64,
    pub steps: usize,
    pub num_labeled: usize,
    pub num_unlabeled: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    pub gamma: Option<f64>,
    pub num_low_confidence: usize,
    pub fallback_used: bool,
    pub metrics: StageMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub raw_ref: StageMetrics,
    pub generated: StageMetrics,
    /// SHA-256 of the baseline checkpoint both arms started from.
    pub baseline_digest: String,
    /// SHA-256 over the split manifests both arms used.
    pub split_digest: String,
}

/// Everything one seed produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub seed: u64,
    pub baseline: StageMetrics,
    pub iterations: Vec<IterationReport>,
    pub ablation: Option<AblationReport>,
}

/// Summary of one metric across seeds. `range = max - min`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    /// Sample standard deviation (0 for a single value).
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub range: f64,
    pub values: Vec<f64>,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Some(Aggregate {
            mean,
            std: var.sqrt(),
            min,
            max,
            range: max - min,
            values: values.to_vec(),
        })
    }
}

/// Test-accuracy summaries across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub baseline: Aggregate,
    pub iterations: Vec<Aggregate>,
    pub ablation_raw_ref: Option<Aggregate>,
    pub ablation_generated: Option<Aggregate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub schema_version: u32,
    pub seeds: Vec<u64>,
    pub runs: Vec<RunReport>,
    pub summary: Summary,
}

impl PipelineReport {
    pub fn from_runs(runs: Vec<RunReport>) -> Result<Self> {
        let test = |f: &dyn Fn(&RunReport) -> Option<f64>| -> Option<Aggregate> {
            let v: Option<Vec<f64>> = runs.iter().map(f).collect();
            v.and_then(|v| Aggregate::of(&v))
        };
        let baseline = test(&|r| Some(r.baseline.test_accuracy))
            .ok_or_else(|| Error::invalid("report needs at least one run"))?;
        let n_iter = runs.iter().map(|r| r.iterations.len()).min().unwrap_or(0);
        let iterations = (0..n_iter)
            .filter_map(|k| test(&|r| Some(r.iterations[k].metrics.test_accuracy)))
            .collect();
        let summary = Summary {
            baseline,
            iterations,
            ablation_raw_ref: test(&|r| r.ablation.as_ref().map(|a| a.raw_ref.test_accuracy)),
            ablation_generated: test(&|r| r.ablation.as_ref().map(|a| a.generated.test_accuracy)),
        };
        Ok(PipelineReport {
            schema_version: REPORT_SCHEMA_VERSION,
            seeds: runs.iter().map(|r| r.seed).collect(),
            runs,
            summary,
        })
    }

    /// Plain-text table of test accuracies in percent.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let pct = |v: f64| format!("{:6.2}", 100.0 * v);
        out.push_str(&format!("{:<22} {:>8} {:>8} {:>8}", "stage", "mean", "std", "range"));
        for s in &self.seeds {
            out.push_str(&format!(" {:>8}", format!("seed {s}")));
        }
        out.push('\n');
        let mut row = |name: String, a: &Aggregate| {
            out.push_str(&format!(
                "{:<22} {:>8} {:>8} {:>8}",
                name,
                pct(a.mean),
                pct(a.std),
                pct(a.range)
            ));
            for v in &a.values {
                out.push_str(&format!(" {:>8}", pct(*v)));
            }
            out.push('\n');
        };
        row("supervised".into(), &self.summary.baseline);
        for (k, a) in self.summary.iterations.iter().enumerate() {
            row(format!("mixmatch (iter. {})", k + 1), a);
        }
        if let Some(a) = &self.summary.ablation_raw_ref {
            row("ablation raw D_REF".into(), a);
        }
        if let Some(a) = &self.summary.ablation_generated {
            row("ablation generated".into(), a);
        }
        out
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path, hint: &str) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingArtifact {
            path: path.to_path_buf(),
            hint: hint.to_string(),
        });
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregate_statistics() {
        let a = Aggregate::of(&[0.8, 0.9, 1.0]).unwrap();
        assert!((a.mean - 0.9).abs() < 1e-12);
        assert!((a.std - 0.1).abs() < 1e-12);
        assert!((a.range - 0.2).abs() < 1e-12);
        assert_eq!(Aggregate::of(&[0.5]).unwrap().std, 0.0);
        assert!(Aggregate::of(&[]).is_none());
    }
}
