//! Softmax scoring of the reference split and the interquartile-range
//! threshold that selects its low-confidence outliers.

use serde::{Deserialize, Serialize};

use crate::datasets::{to_tensor, LabeledSet};
use crate::error::{Error, Result};
use crate::models::Classifier;

pub const FILTER_REPORT_SCHEMA_VERSION: u32 = 1;

/// Fallback selection size when no score falls at or below the threshold.
pub const FALLBACK_FRACTION: f64 = 0.05;

const SCORE_BATCH: usize = 256;

/// Numerically stable softmax (the maximum is subtracted before exponentiating).
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::invalid("softmax of an empty vector"));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("softmax input contains non-finite values"));
    }
    Ok(softmax_unchecked(logits))
}

pub(crate) fn softmax_unchecked(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    out
}

/// Which probability counts as a sample's confidence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceMode {
    /// Softmax probability of the sample's true class.
    #[default]
    TrueClass,
    /// Largest softmax probability, regardless of the label.
    MaxProbability,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub id: u64,
    pub true_label: usize,
    pub predicted_label: usize,
    pub confidence: f64,
}

/// Lower quartile, upper quartile, their range and the outlier boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdStats {
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub schema_version: u32,
    pub mode: ConfidenceMode,
    pub records: Vec<SampleScore>,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
    pub gamma: f64,
    /// Exactly the ids whose confidence is `<= gamma`.
    pub selected_ids: Vec<u64>,
    /// Lowest-confidence ids used instead when `selected_ids` is empty.
    #[serde(default)]
    pub fallback_ids: Vec<u64>,
}

impl FilterReport {
    /// The ids that seed the VAE: the selection, or the fallback when it is empty.
    pub fn effective_ids(&self) -> &[u64] {
        if self.selected_ids.is_empty() {
            &self.fallback_ids
        } else {
            &self.selected_ids
        }
    }

    pub fn fallback_used(&self) -> bool {
        self.selected_ids.is_empty() && !self.fallback_ids.is_empty()
    }

    pub fn confidences(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.confidence).collect()
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Score every reference sample with the model (evaluation mode), in order.
pub fn score_reference(
    model: &Classifier,
    d_ref: &LabeledSet,
    mode: ConfidenceMode,
) -> Result<Vec<SampleScore>> {
    let shape = d_ref
        .shape()
        .ok_or_else(|| Error::invalid("reference set is empty"))?;
    let mut out = Vec::with_capacity(d_ref.len());
    let samples = d_ref.samples();
    for start in (0..d_ref.len()).step_by(SCORE_BATCH) {
        let end = (start + SCORE_BATCH).min(d_ref.len());
        let logits = model.logits(&to_tensor(&samples[start..end], shape))?;
        for i in start..end {
            let p = softmax(logits.row(i - start))?;
            let label = d_ref.labels()[i];
            let predicted = argmax(&p);
            let confidence = match mode {
                ConfidenceMode::TrueClass => p[label],
                ConfidenceMode::MaxProbability => p[predicted],
            };
            out.push(SampleScore {
                id: samples[i].id,
                true_label: label,
                predicted_label: predicted,
                confidence,
            });
        }
    }
    Ok(out)
}

/// `softmax(model(x_i))[y_i]` for every reference sample, in order.
pub fn true_class_confidences(model: &Classifier, d_ref: &LabeledSet) -> Result<Vec<f64>> {
    Ok(score_reference(model, d_ref, ConfidenceMode::TrueClass)?
        .into_iter()
        .map(|s| s.confidence)
        .collect())
}

/// Quantile of sorted data by linear interpolation at position `p * (n - 1)`.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `gamma = Q1 - 1.5 * IQR` of the scores.
pub fn compute_threshold(scores: &[f64]) -> Result<ThresholdStats> {
    if scores.is_empty() {
        return Err(Error::invalid("cannot threshold an empty score vector"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("scores must be finite"));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&sorted, 0.25);
    let q3 = quantile_sorted(&sorted, 0.75);
    let iqr = q3 - q1;
    Ok(ThresholdStats {
        q1,
        q3,
        iqr,
        gamma: q1 - 1.5 * iqr,
    })
}

/// The samples with `score <= gamma`, labels and order preserved.
pub fn select_low_confidence(d_ref: &LabeledSet, scores: &[f64], gamma: f64) -> Result<LabeledSet> {
    if scores.len() != d_ref.len() {
        return Err(Error::invalid(format!(
            "{} scores for {} reference samples",
            scores.len(),
            d_ref.len()
        )));
    }
    let idx: Vec<usize> = scores
        .iter()
        .enumerate()
        .filter(|(_, s)| **s <= gamma)
        .map(|(i, _)| i)
        .collect();
    Ok(d_ref.subset(&idx))
}

/// Ids of the `ceil(fraction * n)` (at least one) lowest-confidence records;
/// ties resolved by position.
pub fn lowest_confidence_ids(records: &[SampleScore], fraction: f64) -> Vec<u64> {
    if records.is_empty() {
        return Vec::new();
    }
    let k = ((fraction * records.len() as f64).ceil() as usize).clamp(1, records.len());
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|a, b| {
        records[*a]
            .confidence
            .total_cmp(&records[*b].confidence)
            .then(a.cmp(b))
    });
    let mut chosen: Vec<usize> = order[..k].to_vec();
    chosen.sort_unstable();
    chosen.into_iter().map(|i| records[i].id).collect()
}

/// Score `d_ref`, threshold it and select its low-confidence subset.
pub fn filter_reference(
    model: &Classifier,
    d_ref: &LabeledSet,
    mode: ConfidenceMode,
) -> Result<FilterReport> {
    let records = score_reference(model, d_ref, mode)?;
    let scores: Vec<f64> = records.iter().map(|r| r.confidence).collect();
    let stats = compute_threshold(&scores)?;
    let selected_ids: Vec<u64> = records
        .iter()
        .filter(|r| r.confidence <= stats.gamma)
        .map(|r| r.id)
        .collect();
    let fallback_ids = if selected_ids.is_empty() {
        let ids = lowest_confidence_ids(&records, FALLBACK_FRACTION);
        log::warn!(
            "no reference sample at or below gamma = {:.6}; falling back to the {} lowest-confidence samples",
            stats.gamma,
            ids.len()
        );
        ids
    } else {
        Vec::new()
    };
    Ok(FilterReport {
        schema_version: FILTER_REPORT_SCHEMA_VERSION,
        mode,
        records,
        q1: stats.q1,
        q3: stats.q3,
        iqr: stats.iqr,
        gamma: stats.gamma,
        selected_ids,
        fallback_ids,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{ImageSample, ImageShape};
    use proptest::prelude::*;

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0; 4]).unwrap(), vec![0.25; 4]);
        let p = softmax(&[1000.0, 0.0]).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-12 && p[1].abs() < 1e-12);
        let p = softmax(&[1.0, 2.0, 3.0]).unwrap();
        // reference values from a 50-digit evaluation
        let want = [0.09003057317038046, 0.24472847105479767, 0.6652409557748219];
        for (a, b) in p.iter().zip(want) {
            assert!((a - b).abs() < 1e-8);
        }
        assert!(softmax(&[]).is_err());
        assert!(softmax(&[f64::NAN, 1.0]).is_err());
        assert!(softmax(&[f64::INFINITY]).is_err());
    }

    #[test]
    fn threshold_examples() {
        let s = compute_threshold(&[0.5; 7]).unwrap();
        assert_eq!((s.q1, s.iqr, s.gamma), (0.5, 0.0, 0.5));
        let s = compute_threshold(&[0.7]).unwrap();
        assert_eq!((s.q1, s.q3, s.gamma), (0.7, 0.7, 0.7));
        assert!(compute_threshold(&[]).is_err());
    }

    fn ref_set(n: usize) -> LabeledSet {
        let shape = ImageShape::new(1, 1, 1);
        let samples = (0..n)
            .map(|i| ImageSample::new(i as u64 + 1, shape, vec![0.0]).unwrap())
            .collect();
        LabeledSet::new(samples, (0..n).map(|i| i % 2).collect(), 2).unwrap()
    }

    #[test]
    fn selection_examples() {
        let d = ref_set(3);
        let scores = [0.9, 0.2, 0.5];
        assert_eq!(select_low_confidence(&d, &scores, 0.5).unwrap().ids(), vec![2, 3]);
        assert!(select_low_confidence(&d, &scores, 0.1).unwrap().is_empty());
        assert_eq!(select_low_confidence(&d, &scores, 0.9).unwrap().len(), 3);
        assert!(select_low_confidence(&d, &scores[..2], 0.5).is_err());
    }

    #[test]
    fn fallback_takes_ceil_five_percent() {
        let records: Vec<SampleScore> = (0..30)
            .map(|i| SampleScore {
                id: i,
                true_label: 0,
                predicted_label: 0,
                confidence: 1.0 - i as f64 * 0.001,
            })
            .collect();
        // ceil(0.05 * 30) = 2, the two lowest are the last two
        assert_eq!(lowest_confidence_ids(&records, FALLBACK_FRACTION), vec![28, 29]);
    }

    proptest! {
        #[test]
        fn softmax_shift_invariance_and_argmax(
            z in prop::collection::vec(-50.0f64..50.0, 1..12),
            c in -500.0f64..500.0,
        ) {
            let p = softmax(&z).unwrap();
            let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
            let q = softmax(&shifted).unwrap();
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-9);
            }
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert_eq!(argmax(&p), argmax(&z));
        }

        #[test]
        fn threshold_is_permutation_invariant(
            mut s in prop::collection::vec(0.0f64..1.0, 1..60),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            let a = compute_threshold(&s).unwrap();
            s.shuffle(&mut crate::rng::rng_from(seed));
            prop_assert_eq!(a, compute_threshold(&s).unwrap());
        }

        #[test]
        fn selection_is_monotone_in_gamma(
            s in prop::collection::vec(0.0f64..1.0, 1..40),
            g1 in 0.0f64..1.0,
            dg in 0.0f64..0.5,
        ) {
            let d = ref_set(s.len());
            let low = select_low_confidence(&d, &s, g1).unwrap().ids();
            let high = select_low_confidence(&d, &s, g1 + dg).unwrap().ids();
            prop_assert!(low.iter().all(|id| high.contains(id)));
            for (id, score) in d.ids().iter().zip(&s) {
                prop_assert_eq!(low.contains(id), *score <= g1);
            }
        }
    }
}
