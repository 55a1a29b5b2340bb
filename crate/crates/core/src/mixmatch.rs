//! MixMatch: augmentation-averaged label guessing, temperature sharpening,
//! MixUp over the shuffled labeled/unlabeled pool and the two-term loss.

use rand::seq::SliceRandom;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::datasets::{to_tensor, ImageSample, ImageShape, LabeledSet, UnlabeledSet};
use crate::error::{Error, Result};
use crate::losses::{one_hot, soft_cross_entropy, softmax_mse, softmax_rows};
use crate::models::{build_classifier, Classifier, ClassifierSpec};
use crate::nn::Sgd;
use crate::rng::{derive_index, derive_seed, rng_from};
use crate::supervised::{augment_batch, check_sets, Selection, TrainConfig};
use crate::tensor::Tensor;
use crate::training::{BatchSampler, TrainHistory};

const SIMPLEX_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixMatchConfig {
    /// Beta(alpha, alpha) parameter of MixUp.
    pub alpha: f64,
    pub temperature: f64,
    /// Weight of the unlabeled loss.
    pub beta: f64,
    /// Augmentations per unlabeled sample for label guessing.
    pub k_aug: usize,
    /// Linear ramp of the unlabeled weight from 0; 0 keeps it constant.
    pub ramp_up_steps: usize,
    pub augment: bool,
    /// Start from the current reference model instead of a fresh initialization.
    pub warm_start: bool,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub max_steps: usize,
    pub eval_interval: usize,
    pub plateau_decay_factor: f64,
    pub plateau_patience: usize,
    pub min_learning_rate: f64,
    /// Set by the caller (derived from the global seed); not part of the JSON form.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for MixMatchConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        MixMatchConfig {
            alpha: 0.5,
            temperature: 0.5,
            beta: 100.0,
            k_aug: 2,
            ramp_up_steps: 0,
            augment: true,
            warm_start: true,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            momentum: t.momentum,
            max_steps: t.max_steps,
            eval_interval: t.eval_interval,
            plateau_decay_factor: t.plateau_decay_factor,
            plateau_patience: t.plateau_patience,
            min_learning_rate: t.min_learning_rate,
            seed: 0,
        }
    }
}

impl MixMatchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be positive");
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be positive");
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad("beta must be a finite non-negative number");
        }
        if self.k_aug == 0 {
            return bad("k_aug must be at least 1");
        }
        if self.max_steps == 0 {
            return bad("max_steps must be at least 1");
        }
        self.schedule().validate()
    }

    /// The optimizer/schedule part, shared with supervised training.
    pub fn schedule(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            max_steps: self.max_steps,
            plateau_decay_factor: self.plateau_decay_factor,
            plateau_patience: self.plateau_patience,
            min_learning_rate: self.min_learning_rate,
            batch_size: self.batch_size,
            eval_interval: self.eval_interval,
            augment: self.augment,
            seed: self.seed,
        }
    }

    /// Unlabeled weight at `step` (1-based).
    pub fn beta_at(&self, step: usize) -> f64 {
        if self.ramp_up_steps == 0 {
            self.beta
        } else {
            self.beta * (step as f64 / self.ramp_up_steps as f64).min(1.0)
        }
    }
}

/// Mixed inputs `(N, C, H, W)` with probability-vector targets `(N, classes)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedBatch {
    pub inputs: Tensor,
    pub targets: Tensor,
    /// The weight `λ' = max(λ, 1 − λ)` applied to each primary row.
    pub lambdas: Vec<f64>,
}

fn check_simplex(p: &[f64]) -> Result<()> {
    let sum: f64 = p.iter().sum();
    if p.is_empty()
        || p.iter().any(|v| !v.is_finite() || *v < -SIMPLEX_TOL)
        || (sum - 1.0).abs() > SIMPLEX_TOL
    {
        return Err(Error::invalid("vector is not a probability distribution"));
    }
    Ok(())
}

/// `p_i^(1/T) / Σ_j p_j^(1/T)`, computed in log space.
pub fn sharpen(p: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::invalid("temperature must be positive"));
    }
    check_simplex(p)?;
    if temperature == 1.0 {
        return Ok(p.to_vec());
    }
    let logs: Vec<f64> = p.iter().map(|v| v.max(0.0).ln() / temperature).collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    Ok(out)
}

/// Label guesses plus the augmented views they were computed from.
#[derive(Debug, Clone)]
pub struct GuessedLabels {
    /// `views[k][i]`: augmentation `k` of unlabeled sample `i`.
    pub views: Vec<Vec<ImageSample>>,
    /// Sharpened mean prediction per unlabeled sample, `(N, classes)`.
    pub targets: Tensor,
}

/// Average the evaluation-mode softmax over `k_aug` augmentations, then sharpen.
pub fn guess_labels(
    model: &Classifier,
    x_u: &[&ImageSample],
    k_aug: usize,
    temperature: f64,
    augment: bool,
    seed: u64,
) -> Result<GuessedLabels> {
    if x_u.is_empty() || k_aug == 0 {
        return Err(Error::invalid("label guessing needs samples and k_aug >= 1"));
    }
    let shape = x_u[0].shape();
    let c = model.num_classes();
    let mut mean = Tensor::zeros(&[x_u.len(), c]);
    let mut views = Vec::with_capacity(k_aug);
    for k in 0..k_aug {
        let view = augment_batch(x_u, augment, seed, k);
        let p = softmax_rows(&model.logits(&to_tensor(&view, shape))?);
        for (m, v) in mean.data_mut().iter_mut().zip(p.data()) {
            *m += v / k_aug as f64;
        }
        views.push(view);
    }
    let mut targets = mean.clone();
    for i in 0..x_u.len() {
        let s = sharpen(mean.row(i), temperature)?;
        targets.row_mut(i).copy_from_slice(&s);
    }
    Ok(GuessedLabels { views, targets })
}

/// Row-wise MixUp with given raw weights `λ`; each row uses `max(λ, 1 − λ)`
/// on the primary side.
pub fn mix_pairs(x1: &Tensor, t1: &Tensor, x2: &Tensor, t2: &Tensor, lambdas: &[f64]) -> Result<MixedBatch> {
    if x1.shape() != x2.shape() || t1.shape() != t2.shape() || x1.batch() != t1.batch() {
        return Err(Error::invalid(format!(
            "mixup shape mismatch: inputs {:?}/{:?}, targets {:?}/{:?}",
            x1.shape(),
            x2.shape(),
            t1.shape(),
            t2.shape()
        )));
    }
    if lambdas.len() != x1.batch() {
        return Err(Error::invalid("one mixing weight per row required"));
    }
    let lams: Vec<f64> = lambdas.iter().map(|l| l.max(1.0 - l)).collect();
    let mix = |a: &Tensor, b: &Tensor| {
        let mut out = a.clone();
        for (i, l) in lams.iter().enumerate() {
            let rb = b.row(i);
            for (o, v) in out.row_mut(i).iter_mut().zip(rb) {
                *o = l * *o + (1.0 - l) * v;
            }
        }
        out
    };
    Ok(MixedBatch {
        inputs: mix(x1, x2),
        targets: mix(t1, t2),
        lambdas: lams,
    })
}

/// MixUp with one `λ ~ Beta(alpha, alpha)` per row.
pub fn mixup(x1: &Tensor, t1: &Tensor, x2: &Tensor, t2: &Tensor, alpha: f64, seed: u64) -> Result<MixedBatch> {
    let beta = Beta::new(alpha, alpha).map_err(|e| Error::invalid(format!("alpha {alpha}: {e}")))?;
    let mut rng = rng_from(seed);
    let lambdas: Vec<f64> = (0..x1.batch()).map(|_| beta.sample(&mut rng)).collect();
    mix_pairs(x1, t1, x2, t2, &lambdas)
}

/// One fully worked MixMatch batch, serializable for auditing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixMatchTrace {
    pub labeled_ids: Vec<u64>,
    pub labels: Vec<usize>,
    pub unlabeled_ids: Vec<u64>,
    pub guessed_labels: Vec<Vec<f64>>,
    /// Pool positions (labeled views first, then unlabeled views in
    /// augmentation-major order) after shuffling.
    pub pool_order: Vec<usize>,
    pub lambdas_x: Vec<f64>,
    pub lambdas_u: Vec<f64>,
    pub mixed_targets_x: Vec<Vec<f64>>,
    pub mixed_targets_u: Vec<Vec<f64>>,
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.batch()).map(|i| t.row(i).to_vec()).collect()
}

/// Output of [`mixmatch_batch`]. `u` is `None` when the unlabeled branch is disabled.
#[derive(Debug, Clone)]
pub struct MixMatchOutput {
    pub x: MixedBatch,
    pub u: Option<MixedBatch>,
    pub trace: MixMatchTrace,
}

/// Build X' and U'. With `unlabeled` empty the pool holds only the augmented
/// labeled batch. `force_lambda` replaces the Beta draws.
pub fn mixmatch_batch(
    model: &Classifier,
    labeled: &[&ImageSample],
    labels: &[usize],
    unlabeled: &[&ImageSample],
    config: &MixMatchConfig,
    seed: u64,
    force_lambda: Option<f64>,
) -> Result<MixMatchOutput> {
    if labeled.is_empty() || labeled.len() != labels.len() {
        return Err(Error::invalid("labeled batch must be non-empty with one label per sample"));
    }
    let shape: ImageShape = labeled[0].shape();
    let c = model.num_classes();
    let x_hat = augment_batch(labeled, config.augment, derive_seed(seed, "labeled"), 0);
    let t_x = one_hot(labels, c);

    let guess = if unlabeled.is_empty() {
        None
    } else {
        Some(guess_labels(
            model,
            unlabeled,
            config.k_aug,
            config.temperature,
            config.augment,
            derive_seed(seed, "guess"),
        )?)
    };
    let mut pool: Vec<&ImageSample> = x_hat.iter().collect();
    let mut pool_targets = vec![t_x.clone()];
    let mut u_hat: Vec<&ImageSample> = Vec::new();
    if let Some(g) = &guess {
        for view in &g.views {
            u_hat.extend(view.iter());
            pool_targets.push(g.targets.clone());
        }
        pool.extend(u_hat.iter().copied());
    }
    let pool_t = Tensor::concat(&pool_targets.iter().collect::<Vec<_>>())?;
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(&mut rng_from(derive_seed(seed, "shuffle")));

    let nx = x_hat.len();
    let w_inputs = to_tensor(order.iter().map(|&i| pool[i]), shape);
    let mut w_targets = Tensor::zeros(&[pool.len(), c]);
    for (r, &i) in order.iter().enumerate() {
        w_targets.row_mut(r).copy_from_slice(pool_t.row(i));
    }
    let beta = Beta::new(config.alpha, config.alpha)
        .map_err(|e| Error::invalid(format!("alpha {}: {e}", config.alpha)))?;
    let mut lam_rng = rng_from(derive_seed(seed, "lambda"));
    let mut draw = |n: usize| -> Vec<f64> {
        (0..n)
            .map(|_| {
                let l = beta.sample(&mut lam_rng);
                force_lambda.unwrap_or(l)
            })
            .collect()
    };

    let x = mix_pairs(
        &to_tensor(&x_hat, shape),
        &t_x,
        &w_inputs.slice_rows(0, nx),
        &w_targets.slice_rows(0, nx),
        &draw(nx),
    )?;
    let u = match &guess {
        None => None,
        Some(g) => {
            let nu = u_hat.len();
            let t_u = Tensor::concat(&vec![&g.targets; config.k_aug])?;
            Some(mix_pairs(
                &to_tensor(u_hat.iter().copied(), shape),
                &t_u,
                &w_inputs.slice_rows(nx, nx + nu),
                &w_targets.slice_rows(nx, nx + nu),
                &draw(nu),
            )?)
        }
    };
    let trace = MixMatchTrace {
        labeled_ids: labeled.iter().map(|s| s.id).collect(),
        labels: labels.to_vec(),
        unlabeled_ids: unlabeled.iter().map(|s| s.id).collect(),
        guessed_labels: guess.as_ref().map(|g| rows(&g.targets)).unwrap_or_default(),
        pool_order: order,
        lambdas_x: x.lambdas.clone(),
        lambdas_u: u.as_ref().map(|u| u.lambdas.clone()).unwrap_or_default(),
        mixed_targets_x: rows(&x.targets),
        mixed_targets_u: u.as_ref().map(|u| rows(&u.targets)).unwrap_or_default(),
    };
    Ok(MixMatchOutput { x, u, trace })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixMatchLoss {
    pub total: f64,
    pub l_x: f64,
    pub l_u: f64,
}

/// Cross-entropy on X' plus `beta_effective` times the softmax/target squared
/// error on U' (averaged over classes and batch).
pub fn mixmatch_loss(
    pred_x: &Tensor,
    targets_x: &Tensor,
    pred_u: &Tensor,
    targets_u: &Tensor,
    beta_effective: f64,
) -> Result<MixMatchLoss> {
    Ok(mixmatch_loss_grad(pred_x, targets_x, pred_u, targets_u, beta_effective)?.0)
}

fn mixmatch_loss_grad(
    pred_x: &Tensor,
    targets_x: &Tensor,
    pred_u: &Tensor,
    targets_u: &Tensor,
    beta_effective: f64,
) -> Result<(MixMatchLoss, Tensor, Tensor)> {
    let (l_x, g_x) = soft_cross_entropy(pred_x, targets_x)?;
    let (l_u, mut g_u) = softmax_mse(pred_u, targets_u)?;
    g_u.data_mut().iter_mut().for_each(|g| *g *= beta_effective);
    let loss = MixMatchLoss {
        total: l_x + beta_effective * l_u,
        l_x,
        l_u,
    };
    Ok((loss, g_x, g_u))
}

struct Batches<'a> {
    d_l: &'a LabeledSet,
    d_u: &'a UnlabeledSet,
    labeled: BatchSampler,
    unlabeled: BatchSampler,
    seed: u64,
}

impl<'a> Batches<'a> {
    fn new(d_l: &'a LabeledSet, d_u: &'a UnlabeledSet, config: &MixMatchConfig) -> Self {
        Batches {
            d_l,
            d_u,
            labeled: BatchSampler::new(d_l.len(), config.batch_size, derive_seed(config.seed, "mm.labeled")),
            unlabeled: BatchSampler::new(d_u.len(), config.batch_size, derive_seed(config.seed, "mm.unlabeled")),
            seed: derive_seed(config.seed, "mm.step"),
        }
    }

    /// Both samplers advance every step, so the batch sequence does not
    /// depend on whether the unlabeled branch is active.
    fn build(&mut self, model: &Classifier, config: &MixMatchConfig, step: usize, with_u: bool) -> Result<MixMatchOutput> {
        let li = self.labeled.next_batch();
        let ui = self.unlabeled.next_batch();
        let xs: Vec<&ImageSample> = li.iter().map(|&i| &self.d_l.samples()[i]).collect();
        let ys: Vec<usize> = li.iter().map(|&i| self.d_l.labels()[i]).collect();
        let us: Vec<&ImageSample> = if with_u {
            ui.iter().map(|&i| &self.d_u.samples()[i]).collect()
        } else {
            Vec::new()
        };
        mixmatch_batch(model, &xs, &ys, &us, config, derive_index(self.seed, step as u64), None)
    }
}

fn initial_model(spec: &ClassifierSpec, config: &MixMatchConfig, init: Option<&Classifier>) -> Result<Classifier> {
    match init {
        Some(m) if config.warm_start => {
            if m.spec() != spec {
                return Err(Error::invalid("warm-start model does not match the architecture"));
            }
            Ok(m.clone())
        }
        _ => build_classifier(spec, derive_seed(config.seed, "init")),
    }
}

/// The trace of the first training step, exactly as [`train_mixmatch`] builds it.
pub fn trace_first_batch(
    d_l_aug: &LabeledSet,
    d_u: &UnlabeledSet,
    spec: &ClassifierSpec,
    config: &MixMatchConfig,
    init: Option<&Classifier>,
) -> Result<MixMatchTrace> {
    config.validate()?;
    let model = initial_model(spec, config, init)?;
    let mut batches = Batches::new(d_l_aug, d_u, config);
    Ok(batches.build(&model, config, 1, config.beta_at(1) > 0.0)?.trace)
}

/// Train on labeled `d_l_aug` and unlabeled `d_u`, selecting the trained
/// snapshot with the best accuracy on `d_v`. `init` is used when `warm_start` is set.
/// Steps whose unlabeled weight is zero skip label guessing, so the labeled
/// pool is mixed only with itself.
pub fn train_mixmatch(
    d_l_aug: &LabeledSet,
    d_u: &UnlabeledSet,
    d_v: &LabeledSet,
    spec: &ClassifierSpec,
    config: &MixMatchConfig,
    init: Option<&Classifier>,
) -> Result<(Classifier, TrainHistory)> {
    config.validate()?;
    check_sets(d_l_aug, d_v, spec)?;
    if d_u.is_empty() {
        return Err(Error::invalid("unlabeled set is empty"));
    }
    if d_u.shape() != Some(spec.image) {
        return Err(Error::invalid("unlabeled images do not match the architecture"));
    }
    let mut model = initial_model(spec, config, init)?;
    let schedule = config.schedule();
    let mut batches = Batches::new(d_l_aug, d_u, config);
    let mut opt = Sgd::new(config.learning_rate, config.momentum);
    // No step-0 evaluation: the returned model is always one trained here,
    // never the untouched initialization.
    let mut sel = Selection::new(&schedule);

    for step in 1..=config.max_steps {
        let beta = config.beta_at(step);
        let out = batches.build(&model, config, step, beta > 0.0)?;
        let nx = out.x.inputs.batch();
        let inputs = match &out.u {
            Some(u) => Tensor::concat(&[&out.x.inputs, &u.inputs])?,
            None => out.x.inputs.clone(),
        };
        let logits = model.forward_train(&inputs)?;
        let pred_x = logits.slice_rows(0, nx);
        let pred_u = logits.slice_rows(nx, logits.batch());
        let targets_u = match &out.u {
            Some(u) => u.targets.clone(),
            None => Tensor::zeros(&[0, model.num_classes()]),
        };
        let (loss, g_x, g_u) = mixmatch_loss_grad(&pred_x, &out.x.targets, &pred_u, &targets_u, beta)?;
        if !loss.total.is_finite() {
            return Err(Error::Divergence {
                step,
                loss: loss.total,
            });
        }
        model.backward(&Tensor::concat(&[&g_x, &g_u])?);
        opt.learning_rate = sel.schedule.learning_rate;
        opt.step(&mut model);
        sel.add_loss(loss.total);

        if (step % config.eval_interval == 0 || step == config.max_steps) && !sel.evaluate(step, &model, d_v)? {
            break;
        }
    }
    Ok(sel.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{generate_toy_dataset, ImageShape};
    use crate::nn::Parameterized;

    fn toy_model(seed: u64) -> Classifier {
        let mut spec = ClassifierSpec::toy(3, ImageShape::new(8, 8, 3));
        spec.base_channels = 4;
        build_classifier(&spec, seed).unwrap()
    }

    /// All weights zero, so the logits equal the head bias for every input.
    fn constant_model(bias: &[f64]) -> Classifier {
        let mut m = toy_model(0);
        m.visit_params_mut(&mut |p| {
            if p.trainable {
                p.value.iter_mut().for_each(|v| *v = 0.0);
            }
        });
        m.head_bias_mut().copy_from_slice(bias);
        m
    }

    fn plain() -> MixMatchConfig {
        MixMatchConfig {
            augment: false,
            k_aug: 1,
            temperature: 1.0,
            ..MixMatchConfig::default()
        }
    }

    #[test]
    fn sharpen_examples() {
        let p = [0.6, 0.4];
        assert_eq!(sharpen(&p, 1.0).unwrap(), p.to_vec());
        let s = sharpen(&p, 0.5).unwrap();
        assert!((s[0] - 0.36 / 0.52).abs() < 1e-9 && (s[1] - 0.16 / 0.52).abs() < 1e-9);
        let u = sharpen(&[0.25; 4], 0.3).unwrap();
        assert!(u.iter().all(|v| (v - 0.25).abs() < 1e-12));
        assert!(sharpen(&p, 0.0).is_err());
        assert!(sharpen(&[0.6, 0.3], 0.5).is_err());
    }

    #[test]
    fn mixup_uses_the_larger_weight() {
        let x1 = Tensor::from_vec(&[1, 2], vec![1.0, 1.0]).unwrap();
        let x2 = Tensor::from_vec(&[1, 2], vec![0.0, 0.0]).unwrap();
        let t1 = Tensor::from_vec(&[1, 2], vec![1.0, 0.0]).unwrap();
        let t2 = Tensor::from_vec(&[1, 2], vec![0.0, 1.0]).unwrap();
        let m = mix_pairs(&x1, &t1, &x2, &t2, &[0.3]).unwrap();
        assert!((m.targets.data()[0] - 0.7).abs() < 1e-15);
        assert!((m.targets.data()[1] - 0.3).abs() < 1e-15);
        assert_eq!(m.lambdas, vec![0.7]);

        let same = mixup(&x1, &t1, &x1, &t1, 0.5, 3).unwrap();
        assert_eq!(same.inputs, x1);
        assert_eq!(same.targets, t1);
        assert!(mix_pairs(&x1, &t1, &t1.slice_rows(0, 0), &t2, &[0.5]).is_err());
    }

    #[test]
    fn loss_examples() {
        let px = Tensor::from_vec(&[1, 2], vec![0.3, -0.2]).unwrap();
        let tx = Tensor::from_vec(&[1, 2], vec![1.0, 0.0]).unwrap();
        let pu = Tensor::from_vec(&[1, 2], vec![0.0, 0.0]).unwrap();
        let tu = Tensor::from_vec(&[1, 2], vec![1.0, 0.0]).unwrap();
        let l = mixmatch_loss(&px, &tx, &pu, &tu, 100.0).unwrap();
        assert!((l.l_u - 0.25).abs() < 1e-15);
        assert!((l.total - (l.l_x + 25.0)).abs() < 1e-12);
        let zero = mixmatch_loss(&px, &tx, &pu, &tu, 0.0).unwrap();
        assert_eq!(zero.total, zero.l_x);
        let half = Tensor::from_vec(&[1, 2], vec![0.5, 0.5]).unwrap();
        assert_eq!(mixmatch_loss(&px, &tx, &pu, &half, 1.0).unwrap().l_u, 0.0);
        assert!(mixmatch_loss(&px, &tx, &pu, &half.slice_rows(0, 0), 1.0).is_err());
    }

    #[test]
    fn degenerate_guess_is_the_softmax() {
        let m = toy_model(1);
        let d = generate_toy_dataset(3, 2, 8, 0).unwrap();
        let xs: Vec<&ImageSample> = d.samples().iter().collect();
        let g = guess_labels(&m, &xs, 1, 1.0, false, 9).unwrap();
        let expect = softmax_rows(&m.logits(&to_tensor(d.samples(), d.shape().unwrap())).unwrap());
        assert_eq!(g.targets, expect);
    }

    #[test]
    fn constant_model_guess_is_the_sharpened_constant() {
        let bias = [0.4, -0.1, 1.3];
        let m = constant_model(&bias);
        let d = generate_toy_dataset(3, 2, 8, 0).unwrap();
        let xs: Vec<&ImageSample> = d.samples().iter().collect();
        let g = guess_labels(&m, &xs, 2, 0.5, true, 4).unwrap();
        let p = crate::confidence::softmax(&bias).unwrap();
        let want = sharpen(&p, 0.5).unwrap();
        for i in 0..xs.len() {
            for (a, b) in g.targets.row(i).iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn batch_sizes_and_degenerate_trace() {
        let m = toy_model(2);
        let d = generate_toy_dataset(3, 4, 8, 1).unwrap();
        let xs: Vec<&ImageSample> = d.samples()[..5].iter().collect();
        let ys = &d.labels()[..5];
        let us: Vec<&ImageSample> = d.samples()[5..9].iter().collect();

        let cfg = MixMatchConfig::default();
        let out = mixmatch_batch(&m, &xs, ys, &us, &cfg, 7, None).unwrap();
        assert_eq!(out.x.inputs.batch(), 5);
        assert_eq!(out.u.as_ref().unwrap().inputs.batch(), 2 * 4);
        for t in [&out.x.targets, &out.u.as_ref().unwrap().targets] {
            for i in 0..t.batch() {
                let s: f64 = t.row(i).iter().sum();
                assert!((s - 1.0).abs() < 1e-6 && t.row(i).iter().all(|v| *v >= 0.0));
            }
        }
        assert!(out.x.lambdas.iter().all(|l| (0.5..=1.0).contains(l)));

        let out = mixmatch_batch(&m, &xs, ys, &us, &plain(), 7, Some(1.0)).unwrap();
        assert_eq!(out.x.inputs, to_tensor(xs.iter().copied(), d.shape().unwrap()));
        assert_eq!(out.x.targets, one_hot(ys, 3));
    }

    fn tiny_sets() -> (LabeledSet, LabeledSet, UnlabeledSet, UnlabeledSet) {
        let d = generate_toy_dataset(3, 8, 8, 3).unwrap();
        let train = d.subset(&(0..24).step_by(2).collect::<Vec<_>>());
        let val = d.subset(&(1..24).step_by(2).collect::<Vec<_>>());
        let u1 = generate_toy_dataset(3, 3, 8, 11).unwrap().unlabeled();
        let u2 = generate_toy_dataset(3, 3, 8, 12).unwrap().unlabeled();
        (train, val, u1, u2)
    }

    fn short(beta: f64) -> MixMatchConfig {
        MixMatchConfig {
            beta,
            batch_size: 4,
            max_steps: 6,
            eval_interval: 3,
            seed: 5,
            ..MixMatchConfig::default()
        }
    }

    #[test]
    fn zero_beta_ignores_the_unlabeled_set() {
        let (train, val, u1, u2) = tiny_sets();
        let spec = toy_model(0).spec().clone();
        let (_, h1) = train_mixmatch(&train, &u1, &val, &spec, &short(0.0), None).unwrap();
        let (_, h2) = train_mixmatch(&train, &u2, &val, &spec, &short(0.0), None).unwrap();
        assert_eq!(h1, h2);
        let (_, h3) = train_mixmatch(&train, &u2, &val, &spec, &short(100.0), None).unwrap();
        assert_ne!(h1, h3);
    }

    #[test]
    fn training_is_deterministic() {
        let (train, val, u1, _) = tiny_sets();
        let spec = toy_model(0).spec().clone();
        let a = train_mixmatch(&train, &u1, &val, &spec, &short(100.0), None).unwrap();
        let b = train_mixmatch(&train, &u1, &val, &spec, &short(100.0), None).unwrap();
        assert_eq!(a.1, b.1);
        assert_eq!(a.0.named_arrays(), b.0.named_arrays());
        let t1 = trace_first_batch(&train, &u1, &spec, &short(100.0), None).unwrap();
        assert_eq!(t1, trace_first_batch(&train, &u1, &spec, &short(100.0), None).unwrap());
        assert_eq!(t1.unlabeled_ids.len(), 4);
    }
}
