use super::classifier::{BlockKind, ClassifierSpec};
use crate::error::{Error, Result};
use crate::nn::{BatchNorm2d, Conv2d, GlobalAvgPool, Layer, Param, Relu};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Pre-activation residual block: `out = branch(relu(bn(x))) + shortcut`.
/// The shortcut is the identity, or a strided 1x1 projection of the
/// pre-activated input when the shape changes.
#[derive(Debug, Clone)]
struct ResidualBlock {
    pre_bn: BatchNorm2d,
    pre_relu: Relu,
    /// Convolutions of the branch; every convolution after the first is
    /// preceded by its own batch norm and ReLU.
    convs: Vec<Conv2d>,
    inner: Vec<(BatchNorm2d, Relu)>,
    projection: Option<Conv2d>,
}

impl ResidualBlock {
    fn basic(name: &str, cin: usize, cout: usize, stride: usize, rng: &mut Rng) -> Self {
        ResidualBlock {
            pre_bn: BatchNorm2d::new(&format!("{name}.bn1"), cin),
            pre_relu: Relu::default(),
            convs: vec![
                Conv2d::new(&format!("{name}.conv1"), cin, cout, 3, stride, 1, false, rng),
                Conv2d::new(&format!("{name}.conv2"), cout, cout, 3, 1, 1, false, rng),
            ],
            inner: vec![(BatchNorm2d::new(&format!("{name}.bn2"), cout), Relu::default())],
            projection: (cin != cout || stride != 1).then(|| {
                Conv2d::new(&format!("{name}.shortcut"), cin, cout, 1, stride, 0, false, rng)
            }),
        }
    }

    fn bottleneck(
        name: &str,
        cin: usize,
        mid: usize,
        cout: usize,
        stride: usize,
        rng: &mut Rng,
    ) -> Self {
        ResidualBlock {
            pre_bn: BatchNorm2d::new(&format!("{name}.bn1"), cin),
            pre_relu: Relu::default(),
            convs: vec![
                Conv2d::new(&format!("{name}.conv1"), cin, mid, 1, 1, 0, false, rng),
                Conv2d::new(&format!("{name}.conv2"), mid, mid, 3, stride, 1, false, rng),
                Conv2d::new(&format!("{name}.conv3"), mid, cout, 1, 1, 0, false, rng),
            ],
            inner: vec![
                (BatchNorm2d::new(&format!("{name}.bn2"), mid), Relu::default()),
                (BatchNorm2d::new(&format!("{name}.bn3"), mid), Relu::default()),
            ],
            projection: (cin != cout || stride != 1).then(|| {
                Conv2d::new(&format!("{name}.shortcut"), cin, cout, 1, stride, 0, false, rng)
            }),
        }
    }
}

impl Layer for ResidualBlock {
    fn infer(&self, x: &Tensor) -> Tensor {
        let a = self.pre_relu.infer(&self.pre_bn.infer(x));
        let mut h = self.convs[0].infer(&a);
        for (conv, (bn, relu)) in self.convs[1..].iter().zip(&self.inner) {
            h = conv.infer(&relu.infer(&bn.infer(&h)));
        }
        let shortcut = match &self.projection {
            Some(p) => p.infer(&a),
            None => x.clone(),
        };
        add_into(h, &shortcut)
    }

    fn forward(&mut self, x: &Tensor) -> Tensor {
        let a = self.pre_relu.forward(&self.pre_bn.forward(x));
        let mut h = self.convs[0].forward(&a);
        for (conv, (bn, relu)) in self.convs[1..].iter_mut().zip(&mut self.inner) {
            h = conv.forward(&relu.forward(&bn.forward(&h)));
        }
        let shortcut = match &mut self.projection {
            Some(p) => p.forward(&a),
            None => x.clone(),
        };
        add_into(h, &shortcut)
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let mut g = grad.clone();
        for (conv, (bn, relu)) in self.convs[1..].iter_mut().zip(&mut self.inner).rev() {
            g = bn.backward(&relu.backward(&conv.backward(&g)));
        }
        let mut grad_a = self.convs[0].backward(&g);
        if let Some(p) = &mut self.projection {
            grad_a = add_into(grad_a, &p.backward(grad));
        }
        let grad_x = self.pre_bn.backward(&self.pre_relu.backward(&grad_a));
        if self.projection.is_none() {
            add_into(grad_x, grad)
        } else {
            grad_x
        }
    }

    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.pre_bn.visit(f);
        for c in &self.convs {
            c.visit(f);
        }
        for (bn, _) in &self.inner {
            bn.visit(f);
        }
        if let Some(p) = &self.projection {
            p.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.pre_bn.visit_mut(f);
        for c in &mut self.convs {
            c.visit_mut(f);
        }
        for (bn, _) in &mut self.inner {
            bn.visit_mut(f);
        }
        if let Some(p) = &mut self.projection {
            p.visit_mut(f);
        }
    }
}

fn add_into(mut a: Tensor, b: &Tensor) -> Tensor {
    for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
        *x += y;
    }
    a
}

/// Convolutional feature extractor shared by the classifier and the VAE
/// encoder: stem, residual stages, final BN-ReLU and global average pooling.
/// Produces `(N, feature_dim)`.
#[derive(Debug, Clone)]
pub struct Trunk {
    stem: Conv2d,
    blocks: Vec<ResidualBlock>,
    final_bn: BatchNorm2d,
    final_relu: Relu,
    pool: GlobalAvgPool,
    feature_dim: usize,
    downsamples: usize,
}

/// Blocks per stage for the bottleneck family.
pub(crate) fn bottleneck_layout(depth: usize) -> Option<&'static [usize]> {
    match depth {
        26 => Some(&[2, 2, 2, 2]),
        50 => Some(&[3, 4, 6, 3]),
        101 => Some(&[3, 4, 23, 3]),
        152 => Some(&[3, 8, 36, 3]),
        _ => None,
    }
}

impl Trunk {
    pub(crate) fn new(spec: &ClassifierSpec, rng: &mut Rng) -> Result<Self> {
        let base = spec.base_channels;
        let stem = Conv2d::new(
            "trunk.stem",
            spec.image.channels,
            base,
            3,
            1,
            1,
            false,
            rng,
        );
        let mut blocks = Vec::new();
        let mut cin = base;
        let mut downsamples = 0;
        match spec.block {
            BlockKind::Basic => {
                if spec.depth < 10 || (spec.depth - 4) % 6 != 0 {
                    return Err(Error::InvalidArchitecture(format!(
                        "basic-block depth must be 6n+4 with n >= 1, got {}",
                        spec.depth
                    )));
                }
                let per_stage = (spec.depth - 4) / 6;
                for stage in 0..3 {
                    let cout = base * spec.width << stage;
                    for b in 0..per_stage {
                        let stride = if stage > 0 && b == 0 { 2 } else { 1 };
                        downsamples += usize::from(stride == 2);
                        let name = format!("trunk.stage{stage}.block{b}");
                        blocks.push(ResidualBlock::basic(&name, cin, cout, stride, rng));
                        cin = cout;
                    }
                }
            }
            BlockKind::Bottleneck => {
                let layout = bottleneck_layout(spec.depth).ok_or_else(|| {
                    Error::InvalidArchitecture(format!(
                        "bottleneck depth must be one of 26, 50, 101, 152, got {}",
                        spec.depth
                    ))
                })?;
                for (stage, &count) in layout.iter().enumerate() {
                    let planes = base << stage;
                    let mid = planes * spec.width;
                    let cout = planes * 4;
                    for b in 0..count {
                        let stride = if stage > 0 && b == 0 { 2 } else { 1 };
                        downsamples += usize::from(stride == 2);
                        let name = format!("trunk.stage{stage}.block{b}");
                        blocks.push(ResidualBlock::bottleneck(&name, cin, mid, cout, stride, rng));
                        cin = cout;
                    }
                }
            }
        }
        Ok(Trunk {
            stem,
            blocks,
            final_bn: BatchNorm2d::new("trunk.final_bn", cin),
            final_relu: Relu::default(),
            pool: GlobalAvgPool::default(),
            feature_dim: cin,
            downsamples,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Number of stride-2 stages (spatial size shrinks by `2^downsamples`).
    pub fn downsamples(&self) -> usize {
        self.downsamples
    }
}

impl Layer for Trunk {
    fn infer(&self, x: &Tensor) -> Tensor {
        let mut h = self.stem.infer(x);
        for b in &self.blocks {
            h = b.infer(&h);
        }
        self.pool
            .infer(&self.final_relu.infer(&self.final_bn.infer(&h)))
    }

    fn forward(&mut self, x: &Tensor) -> Tensor {
        let mut h = self.stem.forward(x);
        for b in &mut self.blocks {
            h = b.forward(&h);
        }
        let h = self.final_bn.forward(&h);
        self.pool.forward(&self.final_relu.forward(&h))
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let g = self.pool.backward(grad);
        let mut g = self.final_bn.backward(&self.final_relu.backward(&g));
        for b in self.blocks.iter_mut().rev() {
            g = b.backward(&g);
        }
        self.stem.backward(&g)
    }

    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.stem.visit(f);
        for b in &self.blocks {
            b.visit(f);
        }
        self.final_bn.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.stem.visit_mut(f);
        for b in &mut self.blocks {
            b.visit_mut(f);
        }
        self.final_bn.visit_mut(f);
    }
}
