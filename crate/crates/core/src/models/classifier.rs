use serde::{Deserialize, Serialize};

use super::check_batch;
use super::trunk::{bottleneck_layout, Trunk};
use crate::datasets::ImageShape;
use crate::error::{Error, Result};
use crate::nn::{Layer, Linear, Param, Parameterized};
use crate::rng::rng_from;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    /// Two 3x3 convolutions per block, three stages; depth = 6n + 4.
    Basic,
    /// 1x1-3x3-1x1 blocks, four stages, output 4x the stage planes.
    Bottleneck,
}

/// Backbone architecture. `width` multiplies the channel count of every
/// residual stage (the "widening factor"); `base_channels` is the stem width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierSpec {
    pub block: BlockKind,
    pub depth: usize,
    pub width: usize,
    pub base_channels: usize,
    pub num_classes: usize,
    pub image: ImageShape,
}

impl ClassifierSpec {
    /// WideResNet depth-10 width-1 sized for 16x16 toy images.
    pub fn toy(num_classes: usize, image: ImageShape) -> Self {
        ClassifierSpec {
            block: BlockKind::Basic,
            depth: 10,
            width: 1,
            base_channels: 8,
            num_classes,
            image,
        }
    }

    /// Named backbones:
    /// - `toy`: see [`ClassifierSpec::toy`];
    /// - `wrn-D-W`: basic-block WideResNet of depth `D` and widening factor `W`;
    /// - `wrn-50`: bottleneck depth 50 (stages 3-4-6-3) with widening factor 2.
    pub fn named(name: &str, num_classes: usize, image: ImageShape) -> Result<Self> {
        let unknown = || Error::InvalidArchitecture(format!("unknown backbone name `{name}`"));
        if name == "toy" {
            return Ok(Self::toy(num_classes, image));
        }
        let rest = name.strip_prefix("wrn-").ok_or_else(unknown)?;
        let parts: Vec<&str> = rest.split('-').collect();
        let spec = match parts.as_slice() {
            [d] => ClassifierSpec {
                block: BlockKind::Bottleneck,
                depth: d.parse().map_err(|_| unknown())?,
                width: 2,
                base_channels: 64,
                num_classes,
                image,
            },
            [d, w] => ClassifierSpec {
                block: BlockKind::Basic,
                depth: d.parse().map_err(|_| unknown())?,
                width: w.parse().map_err(|_| unknown())?,
                base_channels: 16,
                num_classes,
                image,
            },
            _ => return Err(unknown()),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArchitecture(m));
        if self.num_classes < 2 {
            return bad(format!("num_classes must be >= 2, got {}", self.num_classes));
        }
        if self.width == 0 || self.base_channels == 0 {
            return bad("width and base_channels must be positive".into());
        }
        if self.image.height == 0 || self.image.width == 0 || self.image.channels == 0 {
            return bad(format!("empty image shape {:?}", self.image));
        }
        match self.block {
            BlockKind::Basic if self.depth < 10 || (self.depth - 4) % 6 != 0 => {
                bad(format!("basic-block depth must be 6n+4 (n >= 1), got {}", self.depth))
            }
            BlockKind::Bottleneck if bottleneck_layout(self.depth).is_none() => bad(format!(
                "bottleneck depth must be one of 26, 50, 101, 152, got {}",
                self.depth
            )),
            _ => Ok(()),
        }
    }

    /// Trainable parameter count, computed from the layer shapes without
    /// allocating the model.
    pub fn parameter_count(&self) -> usize {
        let conv = |cin: usize, cout: usize, k: usize| cin * cout * k * k;
        let bn = |c: usize| 2 * c;
        let mut total = conv(self.image.channels, self.base_channels, 3);
        let mut cin = self.base_channels;
        match self.block {
            BlockKind::Basic => {
                let per_stage = (self.depth - 4) / 6;
                for stage in 0..3 {
                    let cout = self.base_channels * self.width << stage;
                    for b in 0..per_stage {
                        let stride = if stage > 0 && b == 0 { 2 } else { 1 };
                        total += bn(cin) + conv(cin, cout, 3) + bn(cout) + conv(cout, cout, 3);
                        if cin != cout || stride != 1 {
                            total += conv(cin, cout, 1);
                        }
                        cin = cout;
                    }
                }
            }
            BlockKind::Bottleneck => {
                for (stage, &count) in bottleneck_layout(self.depth).unwrap().iter().enumerate() {
                    let planes = self.base_channels << stage;
                    let (mid, cout) = (planes * self.width, planes * 4);
                    for b in 0..count {
                        let stride = if stage > 0 && b == 0 { 2 } else { 1 };
                        total += bn(cin) + conv(cin, mid, 1);
                        total += bn(mid) + conv(mid, mid, 3);
                        total += bn(mid) + conv(mid, cout, 1);
                        if cin != cout || stride != 1 {
                            total += conv(cin, cout, 1);
                        }
                        cin = cout;
                    }
                }
            }
        }
        total + bn(cin) + cin * self.num_classes + self.num_classes
    }
}

/// Trunk plus a linear classification head.
#[derive(Debug, Clone)]
pub struct Classifier {
    spec: ClassifierSpec,
    pub(crate) trunk: Trunk,
    pub(crate) head: Linear,
}

pub fn build_classifier(spec: &ClassifierSpec, seed: u64) -> Result<Classifier> {
    spec.validate()?;
    let mut rng = rng_from(seed);
    let trunk = Trunk::new(spec, &mut rng)?;
    let head = Linear::new("head", trunk.feature_dim(), spec.num_classes, &mut rng);
    Ok(Classifier {
        spec: spec.clone(),
        trunk,
        head,
    })
}

/// Evaluation-mode logits for an `(N, C, H, W)` batch.
pub fn forward_logits(model: &Classifier, batch: &Tensor) -> Result<Tensor> {
    model.logits(batch)
}

impl Classifier {
    pub fn spec(&self) -> &ClassifierSpec {
        &self.spec
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    pub fn logits(&self, batch: &Tensor) -> Result<Tensor> {
        check_batch(batch, &self.spec.image)?;
        if batch.batch() == 0 {
            return Ok(Tensor::zeros(&[0, self.spec.num_classes]));
        }
        Ok(self.head.infer(&self.trunk.infer(batch)))
    }

    /// Training-mode forward pass (batch statistics, caches kept for `backward`).
    pub fn forward_train(&mut self, batch: &Tensor) -> Result<Tensor> {
        check_batch(batch, &self.spec.image)?;
        if batch.batch() == 0 {
            return Err(Error::invalid("training forward on an empty batch"));
        }
        let features = self.trunk.forward(batch);
        Ok(self.head.forward(&features))
    }

    /// Backpropagate `d loss / d logits` through the most recent `forward_train`,
    /// accumulating parameter gradients.
    pub fn backward(&mut self, grad_logits: &Tensor) {
        let g = self.head.backward(grad_logits);
        self.trunk.backward(&g);
    }

    /// Head bias, exposed for linearity checks.
    pub fn head_bias_mut(&mut self) -> &mut [f64] {
        &mut self.head.bias.value
    }

    pub fn trunk(&self) -> &Trunk {
        &self.trunk
    }
}

impl Parameterized for Classifier {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        self.trunk.visit(f);
        self.head.visit(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.trunk.visit_mut(f);
        self.head.visit_mut(f);
    }
}
