//! Pieces shared by the supervised, MixMatch and VAE loops: the evaluation
//! history, the plateau learning-rate schedule and epoch-wise batch sampling.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_index, rng_from};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: usize,
    /// Mean training loss since the previous record (`null` at step 0).
    pub train_loss: Option<f64>,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EvalRecord>,
}

impl TrainHistory {
    pub fn best_accuracy(&self) -> Option<f64> {
        self.records
            .iter()
            .map(|r| r.val_accuracy)
            .fold(None, |acc, v| Some(acc.map_or(v, |a: f64| a.max(v))))
    }

    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl().as_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| Error::json(path, e)))
            .collect::<Result<Vec<_>>>()?;
        Ok(TrainHistory { records })
    }
}

/// Multiplies the learning rate by `factor` once the validation loss has not
/// improved for `patience` consecutive evaluations.
#[derive(Debug, Clone)]
pub struct PlateauSchedule {
    pub learning_rate: f64,
    factor: f64,
    patience: usize,
    min_learning_rate: f64,
    best: f64,
    bad_evals: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlateauEvent {
    Improved,
    Waiting,
    Decayed,
    /// A decay would take the rate below the floor: training should stop.
    Exhausted,
}

impl PlateauSchedule {
    pub fn new(learning_rate: f64, factor: f64, patience: usize, min_learning_rate: f64) -> Self {
        PlateauSchedule {
            learning_rate,
            factor,
            patience: patience.max(1),
            min_learning_rate,
            best: f64::INFINITY,
            bad_evals: 0,
        }
    }

    pub fn observe(&mut self, val_loss: f64) -> PlateauEvent {
        if val_loss < self.best {
            self.best = val_loss;
            self.bad_evals = 0;
            return PlateauEvent::Improved;
        }
        self.bad_evals += 1;
        if self.bad_evals < self.patience {
            return PlateauEvent::Waiting;
        }
        self.bad_evals = 0;
        let next = self.learning_rate * self.factor;
        if self.learning_rate > 0.0 && next < self.min_learning_rate {
            return PlateauEvent::Exhausted;
        }
        self.learning_rate = next;
        PlateauEvent::Decayed
    }
}

/// Draws minibatches from reshuffled passes over `0..n`.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    n: usize,
    batch: usize,
    seed: u64,
    epoch: u64,
    order: Vec<usize>,
    pos: usize,
}

impl BatchSampler {
    pub fn new(n: usize, batch: usize, seed: u64) -> Self {
        let mut s = BatchSampler {
            n,
            batch: batch.clamp(1, n.max(1)),
            seed,
            epoch: 0,
            order: Vec::new(),
            pos: 0,
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        self.order = (0..self.n).collect();
        self.order
            .shuffle(&mut rng_from(derive_index(self.seed, self.epoch)));
        self.epoch += 1;
        self.pos = 0;
    }

    /// Next batch of indices; a pass that cannot fill a whole batch is
    /// completed from the next reshuffled pass.
    pub fn next_batch(&mut self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.batch);
        while out.len() < self.batch {
            if self.pos == self.n {
                self.reshuffle();
            }
            let take = (self.batch - out.len()).min(self.n - self.pos);
            out.extend_from_slice(&self.order[self.pos..self.pos + take]);
            self.pos += take;
        }
        out
    }
}
