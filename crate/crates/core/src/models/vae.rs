use serde::{Deserialize, Serialize};

use super::check_batch;
use super::classifier::ClassifierSpec;
use super::trunk::Trunk;
use crate::error::{Error, Result};
use crate::nn::{Conv2d, Layer, Linear, Param, Parameterized, Relu, Sigmoid, Upsample2x};
use crate::rng::{derive_seed, rng_from};
use crate::tensor::Tensor;

/// VAE architecture. The encoder is a classifier trunk (its `num_classes` is
/// unused) with two linear heads producing the posterior mean and log-variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VaeSpec {
    pub encoder: ClassifierSpec,
    pub latent_dim: usize,
    /// Channels of the first decoder feature map; halved at every upsampling.
    pub decoder_channels: usize,
}

#[derive(Debug, Clone)]
struct Decoder {
    fc: Linear,
    fc_relu: Relu,
    seed_hw: (usize, usize),
    seed_channels: usize,
    stages: Vec<(Upsample2x, Conv2d, Relu)>,
    out_conv: Conv2d,
    out_act: Sigmoid,
}

impl Decoder {
    fn infer(&self, z: &Tensor) -> Tensor {
        let n = z.batch();
        let (h0, w0) = self.seed_hw;
        let h = self.fc_relu.infer(&self.fc.infer(z));
        let mut h = h.reshape(&[n, self.seed_channels, h0, w0]).unwrap();
        for (up, conv, relu) in &self.stages {
            h = relu.infer(&conv.infer(&up.infer(&h)));
        }
        self.out_act.infer(&self.out_conv.infer(&h))
    }

    fn forward(&mut self, z: &Tensor) -> Tensor {
        let n = z.batch();
        let (h0, w0) = self.seed_hw;
        let h = self.fc.forward(z);
        let h = self.fc_relu.forward(&h);
        let mut h = h.reshape(&[n, self.seed_channels, h0, w0]).unwrap();
        for (up, conv, relu) in &mut self.stages {
            h = relu.forward(&conv.forward(&up.forward(&h)));
        }
        let h = self.out_conv.forward(&h);
        self.out_act.forward(&h)
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let mut g = self.out_conv.backward(&self.out_act.backward(grad));
        for (up, conv, relu) in self.stages.iter_mut().rev() {
            g = up.backward(&conv.backward(&relu.backward(&g)));
        }
        let n = g.batch();
        let g = g.reshape(&[n, self.fc.out_features()]).unwrap();
        self.fc.backward(&self.fc_relu.backward(&g))
    }

    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.fc.visit(f);
        for (_, conv, _) in &self.stages {
            conv.visit(f);
        }
        self.out_conv.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.fc.visit_mut(f);
        for (_, conv, _) in &mut self.stages {
            conv.visit_mut(f);
        }
        self.out_conv.visit_mut(f);
    }
}

#[derive(Debug, Clone)]
pub struct Vae {
    spec: VaeSpec,
    pub(crate) trunk: Trunk,
    mu_head: Linear,
    logvar_head: Linear,
    decoder: Decoder,
    trunk_frozen: bool,
}

pub fn build_vae(spec: &VaeSpec, seed: u64) -> Result<Vae> {
    spec.encoder.validate()?;
    if spec.latent_dim == 0 || spec.decoder_channels == 0 {
        return Err(Error::InvalidArchitecture(
            "latent_dim and decoder_channels must be positive".into(),
        ));
    }
    let image = &spec.encoder.image;
    let mut rng = rng_from(derive_seed(seed, "vae.encoder"));
    let trunk = Trunk::new(&spec.encoder, &mut rng)?;
    let mu_head = Linear::new("mu", trunk.feature_dim(), spec.latent_dim, &mut rng);
    let logvar_head = Linear::new("logvar", trunk.feature_dim(), spec.latent_dim, &mut rng);

    let ups = trunk.downsamples();
    let factor = 1usize << ups;
    if image.height % factor != 0 || image.width % factor != 0 {
        return Err(Error::InvalidArchitecture(format!(
            "image {}x{} is not divisible by the decoder upsampling factor {factor}",
            image.height, image.width
        )));
    }
    let seed_hw = (image.height / factor, image.width / factor);
    let mut rng = rng_from(derive_seed(seed, "vae.decoder"));
    let seed_channels = spec.decoder_channels;
    let fc = Linear::new(
        "decoder.fc",
        spec.latent_dim,
        seed_channels * seed_hw.0 * seed_hw.1,
        &mut rng,
    );
    let mut stages = Vec::new();
    let mut c = seed_channels;
    for i in 0..ups {
        let next = (c / 2).max(4);
        let conv = Conv2d::new(&format!("decoder.up{i}"), c, next, 3, 1, 1, true, &mut rng);
        stages.push((Upsample2x, conv, Relu::default()));
        c = next;
    }
    let out_conv = Conv2d::new("decoder.out", c, image.channels, 3, 1, 1, true, &mut rng);
    Ok(Vae {
        spec: spec.clone(),
        trunk,
        mu_head,
        logvar_head,
        decoder: Decoder {
            fc,
            fc_relu: Relu::default(),
            seed_hw,
            seed_channels,
            stages,
            out_conv,
            out_act: Sigmoid::default(),
        },
        trunk_frozen: false,
    })
}

/// Posterior mean and log-variance, each `(N, latent_dim)`, in evaluation mode.
pub fn encode(vae: &Vae, x: &Tensor) -> Result<(Tensor, Tensor)> {
    vae.encode(x)
}

/// Decode `(N, latent_dim)` latents into `(N, C, H, W)` images in `[0, 1]`.
pub fn decode(vae: &Vae, z: &Tensor) -> Result<Tensor> {
    vae.decode(z)
}

impl Vae {
    pub fn spec(&self) -> &VaeSpec {
        &self.spec
    }

    pub fn latent_dim(&self) -> usize {
        self.spec.latent_dim
    }

    pub fn encode(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        check_batch(x, &self.spec.encoder.image)?;
        let d = self.spec.latent_dim;
        if x.batch() == 0 {
            return Ok((Tensor::zeros(&[0, d]), Tensor::zeros(&[0, d])));
        }
        let h = self.trunk.infer(x);
        Ok((self.mu_head.infer(&h), self.logvar_head.infer(&h)))
    }

    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        self.check_latent(z)?;
        let img = &self.spec.encoder.image;
        if z.batch() == 0 {
            return Ok(Tensor::zeros(&[0, img.channels, img.height, img.width]));
        }
        Ok(self.decoder.infer(z))
    }

    fn check_latent(&self, z: &Tensor) -> Result<()> {
        if z.shape().len() != 2 || z.shape()[1] != self.spec.latent_dim {
            return Err(Error::invalid(format!(
                "latent batch shape {:?} does not match (N, {})",
                z.shape(),
                self.spec.latent_dim
            )));
        }
        Ok(())
    }

    /// Freeze the encoder trunk: it then runs in evaluation mode during training
    /// and receives no updates.
    pub fn set_trunk_frozen(&mut self, frozen: bool) {
        self.trunk_frozen = frozen;
        self.trunk.visit_mut(&mut |p| {
            if !p.name.contains("running_") {
                p.trainable = !frozen
            }
        });
    }

    /// Training-mode encoder pass.
    pub(crate) fn encode_train(&mut self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        check_batch(x, &self.spec.encoder.image)?;
        let h = if self.trunk_frozen {
            self.trunk.infer(x)
        } else {
            self.trunk.forward(x)
        };
        Ok((self.mu_head.forward(&h), self.logvar_head.forward(&h)))
    }

    pub(crate) fn decode_train(&mut self, z: &Tensor) -> Result<Tensor> {
        self.check_latent(z)?;
        Ok(self.decoder.forward(z))
    }

    /// Returns `d loss / d z` for the most recent `decode_train`.
    pub(crate) fn backward_decoder(&mut self, grad_images: &Tensor) -> Tensor {
        self.decoder.backward(grad_images)
    }

    pub(crate) fn backward_encoder(&mut self, grad_mu: &Tensor, grad_logvar: &Tensor) {
        let mut g = self.mu_head.backward(grad_mu);
        let g2 = self.logvar_head.backward(grad_logvar);
        g.data_mut()
            .iter_mut()
            .zip(g2.data())
            .for_each(|(a, b)| *a += b);
        if !self.trunk_frozen {
            self.trunk.backward(&g);
        }
    }
}

impl Parameterized for Vae {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        self.trunk.visit(f);
        self.mu_head.visit(f);
        self.logvar_head.visit(f);
        self.decoder.visit(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.trunk.visit_mut(f);
        self.mu_head.visit_mut(f);
        self.logvar_head.visit_mut(f);
        self.decoder.visit_mut(f);
    }
}
