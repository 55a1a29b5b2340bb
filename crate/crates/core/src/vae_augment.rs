//! VAE fine-tuning on the low-confidence reference samples and generation of
//! labeled reconstructions and unlabeled synthetic samples.

use std::path::{Path, PathBuf};

use rand::seq::index::sample as sample_indices;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::datasets::{sample_from_tensor, split_dataset, to_tensor, LabeledSet, SplitSpec, UnlabeledSet};
use crate::error::{Error, Result};
use crate::models::{build_vae, Classifier, ClassifierSpec, Vae, VaeSpec};
use crate::nn::{Adam, Parameterized};
use crate::rng::{derive_index, derive_seed, rng_from};
use crate::supervised::{train_supervised, TrainConfig};
use crate::tensor::Tensor;
use crate::training::BatchSampler;

/// Reconstructions get ids `REC_ID_BASE + seed id`.
pub const REC_ID_BASE: u64 = 1 << 40;
/// Synthetic sample `k` gets id `SYNTH_ID_BASE + k`.
pub const SYNTH_ID_BASE: u64 = 1 << 41;

const GEN_BATCH: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VaeTrainConfig {
    pub latent_dim: usize,
    pub decoder_channels: usize,
    pub epochs: usize,
    pub batch_size: usize,
    /// Adam step size.
    pub learning_rate: f64,
    pub kl_weight: f64,
    /// D_L samples added to the training set; `None` pads with as many
    /// samples as the low-confidence set holds (capped at |D_L|).
    pub pad_count: Option<usize>,
    pub freeze_trunk: bool,
    /// Set by the caller (derived from the global seed); not part of the JSON form.
    #[serde(skip)]
    pub seed: u64,
    /// Encoder checkpoint stem (see [`pretrain_encoder`]).
    pub pretrained_encoder: Option<PathBuf>,
}

impl Default for VaeTrainConfig {
    fn default() -> Self {
        VaeTrainConfig {
            latent_dim: 32,
            decoder_channels: 64,
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            kl_weight: 1.0,
            pad_count: None,
            freeze_trunk: false,
            seed: 0,
            pretrained_encoder: None,
        }
    }
}

impl VaeTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.kl_weight >= 0.0 && self.kl_weight.is_finite()) {
            return bad("kl_weight must be a finite non-negative number");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("vae learning_rate must be a finite non-negative number");
        }
        if self.latent_dim == 0 || self.decoder_channels == 0 || self.batch_size == 0 {
            return bad("latent_dim, decoder_channels and batch_size must be positive");
        }
        Ok(())
    }

    pub fn vae_spec(&self, encoder: &ClassifierSpec) -> VaeSpec {
        VaeSpec {
            encoder: encoder.clone(),
            latent_dim: self.latent_dim,
            decoder_channels: self.decoder_channels,
        }
    }
}

/// D_Rec (labels copied from the seeds, order-aligned) and D_Synth.
#[derive(Debug, Clone)]
pub struct AugmentedSets {
    pub d_rec: LabeledSet,
    /// Id of the seed image behind each reconstruction.
    pub seed_ids: Vec<u64>,
    pub d_synth: UnlabeledSet,
}

/// Train a classifier on auxiliary data and save its trunk (head stripped) at
/// `stem` as an encoder initialization. A tenth of `aux_data` is held out for
/// model selection.
pub fn pretrain_encoder(
    aux_data: &LabeledSet,
    spec: &ClassifierSpec,
    config: &TrainConfig,
    stem: &Path,
) -> Result<Classifier> {
    if aux_data.len() < 2 {
        return Err(Error::invalid("auxiliary data needs at least two samples"));
    }
    let split = SplitSpec {
        fractions: [0.9, 0.1, 0.0],
        seed: derive_seed(config.seed, "pretrain.split"),
        stratified: false,
    };
    let (train, val, _) = split_dataset(aux_data, &split)?;
    let mut spec = spec.clone();
    spec.num_classes = aux_data.num_classes();
    let (model, history) = train_supervised(&train, &val, &spec, config)?;
    let step = history.records.last().map_or(0, |r| r.step);
    model.save_trunk(stem, config.seed, step)?;
    Ok(model)
}

/// `d_ref_low` plus `pad_count` distinct samples of `d_l` drawn uniformly.
pub fn assemble_vae_train_set(
    d_ref_low: &LabeledSet,
    d_l: &LabeledSet,
    pad_count: usize,
    seed: u64,
) -> Result<LabeledSet> {
    if pad_count > d_l.len() {
        return Err(Error::invalid(format!(
            "pad_count {pad_count} exceeds |D_L| = {}",
            d_l.len()
        )));
    }
    let mut rng = rng_from(derive_seed(seed, "vae.pad"));
    let mut picked = sample_indices(&mut rng, d_l.len(), pad_count).into_vec();
    picked.sort_unstable();
    d_ref_low.union(&d_l.subset(&picked))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElboTerms {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
}

fn check_noise(vae: &Vae, batch: &Tensor, noise: &Tensor) -> Result<()> {
    if noise.shape() != [batch.batch(), vae.latent_dim()] {
        return Err(Error::invalid(format!(
            "noise shape {:?} does not match (batch {}, latent {})",
            noise.shape(),
            batch.batch(),
            vae.latent_dim()
        )));
    }
    if batch.batch() == 0 {
        return Err(Error::invalid("empty batch"));
    }
    Ok(())
}

fn reparametrize(mu: &Tensor, logvar: &Tensor, noise: &Tensor) -> Tensor {
    let mut z = mu.clone();
    for ((zi, lv), e) in z.data_mut().iter_mut().zip(logvar.data()).zip(noise.data()) {
        *zi += (0.5 * lv).exp() * e;
    }
    z
}

/// Batch mean of `KL(N(mu, exp(logvar)) || N(0, I))`
/// `= 0.5 * sum(mu^2 + exp(logvar) - 1 - logvar)`.
pub fn gaussian_kl(mu: &Tensor, logvar: &Tensor) -> f64 {
    let n = mu.batch().max(1) as f64;
    0.5 * mu
        .data()
        .iter()
        .zip(logvar.data())
        .map(|(m, lv)| m * m + lv.exp() - 1.0 - lv)
        .sum::<f64>()
        / n
}

fn terms(
    batch: &Tensor,
    recon_img: &Tensor,
    mu: &Tensor,
    logvar: &Tensor,
    kl_weight: f64,
) -> ElboTerms {
    let n = batch.batch() as f64;
    let recon: f64 = recon_img
        .data()
        .iter()
        .zip(batch.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    let kl = gaussian_kl(mu, logvar);
    ElboTerms {
        total: recon + kl_weight * kl,
        recon,
        kl,
    }
}

/// Negative ELBO in evaluation mode: squared error summed over pixels and
/// averaged over the batch, plus `kl_weight` times the batch-mean Gaussian KL.
/// `noise` holds the standard-normal draws of the reparametrization.
pub fn elbo_loss(vae: &Vae, batch: &Tensor, noise: &Tensor, kl_weight: f64) -> Result<ElboTerms> {
    check_noise(vae, batch, noise)?;
    let (mu, logvar) = vae.encode(batch)?;
    let out = vae.decode(&reparametrize(&mu, &logvar, noise))?;
    Ok(terms(batch, &out, &mu, &logvar, kl_weight))
}

/// Training-mode negative ELBO; accumulates parameter gradients.
pub fn elbo_backward(
    vae: &mut Vae,
    batch: &Tensor,
    noise: &Tensor,
    kl_weight: f64,
) -> Result<ElboTerms> {
    check_noise(vae, batch, noise)?;
    let (mu, logvar) = vae.encode_train(batch)?;
    let out = vae.decode_train(&reparametrize(&mu, &logvar, noise))?;
    let t = terms(batch, &out, &mu, &logvar, kl_weight);
    let n = batch.batch() as f64;

    let mut g_out = out.clone();
    for (g, x) in g_out.data_mut().iter_mut().zip(batch.data()) {
        *g = 2.0 * (*g - x) / n;
    }
    let g_z = vae.backward_decoder(&g_out);
    let mut g_mu = g_z.clone();
    let mut g_lv = Tensor::zeros(logvar.shape());
    for i in 0..g_mu.len() {
        let (m, lv, e) = (mu.data()[i], logvar.data()[i], noise.data()[i]);
        g_mu.data_mut()[i] += kl_weight * m / n;
        g_lv.data_mut()[i] =
            g_z.data()[i] * e * 0.5 * (0.5 * lv).exp() + kl_weight * 0.5 * (lv.exp() - 1.0) / n;
    }
    vae.backward_encoder(&g_mu, &g_lv);
    Ok(t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeEpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub recon: f64,
    pub kl: f64,
}

fn standard_normal(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut t = Tensor::zeros(&[rows, cols]);
    let mut rng = rng_from(seed);
    t.data_mut()
        .iter_mut()
        .for_each(|v| *v = StandardNormal.sample(&mut rng));
    t
}

/// Build a VAE (loading the pretrained encoder trunk when configured) and
/// minimize the negative ELBO with Adam. Returns the final model and the
/// per-epoch mean losses.
pub fn train_vae(
    train_set: &LabeledSet,
    encoder: &ClassifierSpec,
    config: &VaeTrainConfig,
) -> Result<(Vae, Vec<VaeEpochRecord>)> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::invalid("VAE training set is empty"));
    }
    let shape = encoder.image;
    if train_set.shape() != Some(shape) {
        return Err(Error::invalid("VAE training images do not match the encoder shape"));
    }
    let mut vae = build_vae(&config.vae_spec(encoder), derive_seed(config.seed, "vae.init"))?;
    if let Some(stem) = &config.pretrained_encoder {
        vae.load_encoder(stem)?;
    }
    vae.set_trunk_frozen(config.freeze_trunk);

    let n = train_set.len();
    let batch = config.batch_size.min(n);
    let steps_per_epoch = n.div_ceil(batch);
    let mut sampler = BatchSampler::new(n, batch, derive_seed(config.seed, "vae.batches"));
    let noise_seed = derive_seed(config.seed, "vae.noise");
    let mut opt = Adam::new(config.learning_rate);
    let mut log = Vec::with_capacity(config.epochs);
    let mut step = 0u64;
    for epoch in 1..=config.epochs {
        let mut sum = ElboTerms {
            total: 0.0,
            recon: 0.0,
            kl: 0.0,
        };
        for _ in 0..steps_per_epoch {
            step += 1;
            let idx = sampler.next_batch();
            let x = to_tensor(idx.iter().map(|&i| &train_set.samples()[i]), shape);
            let noise = standard_normal(idx.len(), config.latent_dim, derive_index(noise_seed, step));
            let t = elbo_backward(&mut vae, &x, &noise, config.kl_weight)?;
            if !t.total.is_finite() {
                return Err(Error::Divergence {
                    step: step as usize,
                    loss: t.total,
                });
            }
            opt.step(&mut vae);
            sum.total += t.total;
            sum.recon += t.recon;
            sum.kl += t.kl;
        }
        let k = steps_per_epoch as f64;
        log.push(VaeEpochRecord {
            epoch,
            loss: sum.total / k,
            recon: sum.recon / k,
            kl: sum.kl / k,
        });
    }
    if !vae.all_finite() {
        return Err(Error::Divergence {
            step: step as usize,
            loss: f64::NAN,
        });
    }
    Ok((vae, log))
}

/// Posterior-mean reconstructions of `samples`, quantized to 8 bits.
fn reconstruct(vae: &Vae, set: &LabeledSet) -> Result<Tensor> {
    let shape = vae.spec().encoder.image;
    let mut parts = Vec::new();
    for chunk in set.samples().chunks(GEN_BATCH) {
        let (mu, _) = vae.encode(&to_tensor(chunk, shape))?;
        parts.push(vae.decode(&mu)?);
    }
    Tensor::concat(&parts.iter().collect::<Vec<_>>())
}

/// Mean per-pixel squared error of posterior-mean reconstructions.
pub fn reconstruction_mse(vae: &Vae, set: &LabeledSet) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::invalid("cannot measure reconstruction error on an empty set"));
    }
    let shape = vae.spec().encoder.image;
    let out = reconstruct(vae, set)?;
    let target = to_tensor(set.samples(), shape);
    let se: f64 = out
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(se / out.len() as f64)
}

/// D_Rec: decode the posterior mean of every seed. Labels and order follow
/// `d_ref_low`; ids are `REC_ID_BASE + seed id`.
pub fn generate_reconstructions(vae: &Vae, d_ref_low: &LabeledSet) -> Result<LabeledSet> {
    if d_ref_low.is_empty() {
        return Err(Error::invalid("no seed images to reconstruct"));
    }
    if d_ref_low.shape() != Some(vae.spec().encoder.image) {
        return Err(Error::invalid("seed images do not match the VAE input shape"));
    }
    let out = reconstruct(vae, d_ref_low)?;
    let samples = d_ref_low
        .samples()
        .iter()
        .enumerate()
        .map(|(i, s)| sample_from_tensor(&out, i, REC_ID_BASE + s.id).quantized())
        .collect();
    LabeledSet::new(samples, d_ref_low.labels().to_vec(), d_ref_low.num_classes())
}

/// D_Synth: decode `k` latents drawn from the standard-normal prior. Latent
/// `i` depends only on `(seed, i)`.
pub fn generate_synthetic(vae: &Vae, k: usize, seed: u64) -> Result<UnlabeledSet> {
    let d = vae.latent_dim();
    let mut samples = Vec::with_capacity(k);
    for start in (0..k).step_by(GEN_BATCH) {
        let end = (start + GEN_BATCH).min(k);
        let mut z = Tensor::zeros(&[end - start, d]);
        for (r, i) in (start..end).enumerate() {
            let mut rng = rng_from(derive_index(seed, i as u64));
            z.row_mut(r)
                .iter_mut()
                .for_each(|v| *v = StandardNormal.sample(&mut rng));
        }
        let out = vae.decode(&z)?;
        for (r, i) in (start..end).enumerate() {
            samples.push(sample_from_tensor(&out, r, SYNTH_ID_BASE + i as u64).quantized());
        }
    }
    UnlabeledSet::new(samples)
}

/// Reconstructions of `d_ref_low` together with `k` synthetic samples.
pub fn augment(vae: &Vae, d_ref_low: &LabeledSet, k: usize, seed: u64) -> Result<AugmentedSets> {
    let d_rec = generate_reconstructions(vae, d_ref_low)?;
    Ok(AugmentedSets {
        seed_ids: d_ref_low.ids(),
        d_rec,
        d_synth: generate_synthetic(vae, k, derive_seed(seed, "vae.synth"))?,
    })
}
