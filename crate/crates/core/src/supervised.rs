//! Fully supervised reference training with model selection on the validation split.

use serde::{Deserialize, Serialize};

use crate::datasets::{augment_with, to_tensor, AugmentOptions, ImageSample, LabeledSet};
use crate::error::{Error, Result};
use crate::losses::{one_hot, soft_cross_entropy};
use crate::models::{build_classifier, Classifier, ClassifierSpec};
use crate::nn::Sgd;
use crate::rng::{derive_index, derive_seed, rng_from};
use crate::training::{BatchSampler, EvalRecord, PlateauEvent, PlateauSchedule, TrainHistory};

const EVAL_BATCH: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub max_steps: usize,
    pub plateau_decay_factor: f64,
    /// Evaluations without validation-loss improvement before a decay.
    pub plateau_patience: usize,
    /// Training stops when a decay would push the rate below this floor.
    pub min_learning_rate: f64,
    pub batch_size: usize,
    pub eval_interval: usize,
    /// Apply flip + crop augmentation to training inputs.
    pub augment: bool,
    /// Set by the caller (derived from the global seed); not part of the JSON form.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 3e-2,
            momentum: 0.9,
            max_steps: 10_000,
            plateau_decay_factor: 1e-2,
            plateau_patience: 5,
            min_learning_rate: 1e-6,
            batch_size: 64,
            eval_interval: 100,
            augment: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be a finite non-negative number");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.plateau_decay_factor > 0.0 && self.plateau_decay_factor < 1.0) {
            return bad("plateau_decay_factor must lie in (0, 1)");
        }
        if self.batch_size == 0 || self.eval_interval == 0 {
            return bad("batch_size and eval_interval must be positive");
        }
        Ok(())
    }
}

/// Accuracy (fraction of argmax-correct predictions) and mean cross-entropy.
pub fn evaluate(model: &Classifier, data: &LabeledSet) -> Result<(f64, f64)> {
    let shape = data
        .shape()
        .ok_or_else(|| Error::invalid("cannot evaluate on an empty set"))?;
    let mut correct = 0usize;
    let mut loss_sum = 0.0;
    let samples = data.samples();
    for start in (0..data.len()).step_by(EVAL_BATCH) {
        let end = (start + EVAL_BATCH).min(data.len());
        let labels = &data.labels()[start..end];
        let logits = model.logits(&to_tensor(&samples[start..end], shape))?;
        let (loss, _) = soft_cross_entropy(&logits, &one_hot(labels, model.num_classes()))?;
        loss_sum += loss * (end - start) as f64;
        for (i, &y) in labels.iter().enumerate() {
            let row = logits.row(i);
            let pred = (0..row.len())
                .fold(0, |best, j| if row[j] > row[best] { j } else { best });
            correct += usize::from(pred == y);
        }
    }
    Ok((
        correct as f64 / data.len() as f64,
        loss_sum / data.len() as f64,
    ))
}

/// Augmented copies of `samples`; sample `k` of step `step` always gets the same draw.
pub(crate) fn augment_batch(
    samples: &[&ImageSample],
    enabled: bool,
    seed: u64,
    step: usize,
) -> Vec<ImageSample> {
    let step_seed = derive_index(seed, step as u64);
    let opts = if enabled {
        AugmentOptions::default()
    } else {
        AugmentOptions {
            flip: false,
            crop: false,
        }
    };
    samples
        .iter()
        .enumerate()
        .map(|(k, s)| augment_with(s, opts, &mut rng_from(derive_index(step_seed, k as u64))))
        .collect()
}

/// Evaluation bookkeeping shared by the training loops: plateau schedule,
/// history and the best-validation-accuracy snapshot.
pub(crate) struct Selection {
    pub schedule: PlateauSchedule,
    pub history: TrainHistory,
    pub best: Option<(f64, Classifier)>,
    loss_sum: f64,
    loss_count: usize,
}

impl Selection {
    pub fn new(cfg: &TrainConfig) -> Self {
        Selection {
            schedule: PlateauSchedule::new(
                cfg.learning_rate,
                cfg.plateau_decay_factor,
                cfg.plateau_patience,
                cfg.min_learning_rate,
            ),
            history: TrainHistory::default(),
            best: None,
            loss_sum: 0.0,
            loss_count: 0,
        }
    }

    pub fn add_loss(&mut self, loss: f64) {
        self.loss_sum += loss;
        self.loss_count += 1;
    }

    /// Evaluate, record, update the snapshot and the schedule. Returns `false`
    /// when training should stop.
    pub fn evaluate(&mut self, step: usize, model: &Classifier, d_v: &LabeledSet) -> Result<bool> {
        let (acc, val_loss) = evaluate(model, d_v)?;
        let train_loss = (self.loss_count > 0).then(|| self.loss_sum / self.loss_count as f64);
        self.loss_sum = 0.0;
        self.loss_count = 0;
        self.history.records.push(EvalRecord {
            step,
            train_loss,
            val_loss,
            val_accuracy: acc,
            learning_rate: self.schedule.learning_rate,
        });
        if self.best.as_ref().is_none_or(|(b, _)| acc > *b) {
            self.best = Some((acc, model.clone()));
        }
        if step == 0 {
            return Ok(true);
        }
        let event = self.schedule.observe(val_loss);
        if event == PlateauEvent::Decayed {
            log::info!(
                "step {step}: validation loss plateaued, learning rate -> {:e}",
                self.schedule.learning_rate
            );
        }
        Ok(event != PlateauEvent::Exhausted)
    }

    pub fn finish(self) -> (Classifier, TrainHistory) {
        let (_, model) = self.best.expect("at least one evaluation");
        (model, self.history)
    }
}

pub(crate) fn check_sets(d_l: &LabeledSet, d_v: &LabeledSet, spec: &ClassifierSpec) -> Result<()> {
    if d_l.is_empty() || d_v.is_empty() {
        return Err(Error::invalid("training and validation sets must be non-empty"));
    }
    if d_l.num_classes() != d_v.num_classes() || d_l.num_classes() != spec.num_classes {
        return Err(Error::invalid(format!(
            "class counts differ: train {}, validation {}, model {}",
            d_l.num_classes(),
            d_v.num_classes(),
            spec.num_classes
        )));
    }
    if d_l.shape() != Some(spec.image) || d_v.shape() != Some(spec.image) {
        return Err(Error::invalid("image shape does not match the architecture"));
    }
    Ok(())
}

/// Train the reference classifier by softmax cross-entropy with SGD + momentum.
/// Returns the snapshot with the best validation accuracy.
pub fn train_supervised(
    d_l: &LabeledSet,
    d_v: &LabeledSet,
    spec: &ClassifierSpec,
    config: &TrainConfig,
) -> Result<(Classifier, TrainHistory)> {
    let model = build_classifier(spec, derive_seed(config.seed, "init"))?;
    train_supervised_from(model, d_l, d_v, config)
}

/// Same as [`train_supervised`] starting from an existing model.
pub fn train_supervised_from(
    mut model: Classifier,
    d_l: &LabeledSet,
    d_v: &LabeledSet,
    config: &TrainConfig,
) -> Result<(Classifier, TrainHistory)> {
    config.validate()?;
    check_sets(d_l, d_v, model.spec())?;
    let shape = model.spec().image;
    let num_classes = model.num_classes();
    let mut sampler = BatchSampler::new(d_l.len(), config.batch_size, derive_seed(config.seed, "batches"));
    let aug_seed = derive_seed(config.seed, "augment");
    let mut opt = Sgd::new(config.learning_rate, config.momentum);
    let mut sel = Selection::new(config);
    sel.evaluate(0, &model, d_v)?;

    for step in 1..=config.max_steps {
        let idx = sampler.next_batch();
        let chosen: Vec<&ImageSample> = idx.iter().map(|&i| &d_l.samples()[i]).collect();
        let inputs = augment_batch(&chosen, config.augment, aug_seed, step);
        let labels: Vec<usize> = idx.iter().map(|&i| d_l.labels()[i]).collect();

        let logits = model.forward_train(&to_tensor(&inputs, shape))?;
        let (loss, grad) = soft_cross_entropy(&logits, &one_hot(&labels, num_classes))?;
        if !loss.is_finite() {
            return Err(Error::Divergence { step, loss });
        }
        model.backward(&grad);
        opt.learning_rate = sel.schedule.learning_rate;
        opt.step(&mut model);
        sel.add_loss(loss);

        if step % config.eval_interval == 0 || step == config.max_steps {
            if !sel.evaluate(step, &model, d_v)? {
                break;
            }
        }
    }
    Ok(sel.finish())
}
