//! Layers with explicit forward/backward passes, an SGD optimizer and the
//! named-array checkpoint archive.
//!
//! Every layer exposes two forward paths: [`Layer::infer`] is evaluation mode
//! (pure, takes `&self`, batch statistics frozen) and [`Layer::forward`] is
//! training mode, which caches what [`Layer::backward`] needs.

mod archive;
mod layers;
mod optim;

pub use archive::{read_archive, write_archive, NamedArray};
pub use layers::{BatchNorm2d, Conv2d, GlobalAvgPool, Linear, Relu, Sigmoid, Upsample2x};
pub use optim::{Adam, Sgd};

use crate::tensor::Tensor;

/// A named parameter or buffer. Buffers (e.g. batch-norm running statistics)
/// are persisted in checkpoints but never receive gradients.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    pub trainable: bool,
}

impl Param {
    pub fn new(name: impl Into<String>, shape: &[usize], value: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let grad = vec![0.0; value.len()];
        Param {
            name: name.into(),
            shape: shape.to_vec(),
            value,
            grad,
            trainable: true,
        }
    }

    pub fn buffer(name: impl Into<String>, shape: &[usize], value: Vec<f64>) -> Self {
        Param {
            name: name.into(),
            shape: shape.to_vec(),
            value,
            grad: Vec::new(),
            trainable: false,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

pub trait Layer {
    /// Evaluation-mode forward pass.
    fn infer(&self, x: &Tensor) -> Tensor;
    /// Training-mode forward pass; caches activations for `backward`.
    fn forward(&mut self, x: &Tensor) -> Tensor;
    /// Accumulates parameter gradients and returns the gradient w.r.t. the input
    /// of the most recent `forward`.
    fn backward(&mut self, grad: &Tensor) -> Tensor;
    fn visit(&self, _f: &mut dyn FnMut(&Param)) {}
    fn visit_mut(&mut self, _f: &mut dyn FnMut(&mut Param)) {}
}

/// Anything owning parameters: layers, blocks and whole models.
pub trait Parameterized {
    fn visit_params(&self, f: &mut dyn FnMut(&Param));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param));

    fn zero_grad(&mut self) {
        self.visit_params_mut(&mut |p| p.zero_grad());
    }

    fn num_trainable(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| {
            if p.trainable {
                n += p.value.len()
            }
        });
        n
    }

    /// All parameters and buffers as named arrays, in visitation order.
    fn named_arrays(&self) -> Vec<NamedArray> {
        let mut out = Vec::new();
        self.visit_params(&mut |p| {
            out.push(NamedArray {
                name: p.name.clone(),
                shape: p.shape.clone(),
                values: p.value.clone(),
            })
        });
        out
    }

    /// Overwrite parameters from named arrays. Every parameter must be present
    /// with a matching shape; extra arrays are ignored when `allow_extra`.
    fn load_named_arrays(&mut self, arrays: &[NamedArray], allow_extra: bool) -> Result<(), String> {
        let by_name: std::collections::HashMap<&str, &NamedArray> =
            arrays.iter().map(|a| (a.name.as_str(), a)).collect();
        let mut err = None;
        let mut used = 0;
        self.visit_params_mut(&mut |p| {
            if err.is_some() {
                return;
            }
            match by_name.get(p.name.as_str()) {
                Some(a) if a.shape == p.shape => {
                    p.value.copy_from_slice(&a.values);
                    used += 1;
                }
                Some(a) => {
                    err = Some(format!(
                        "array `{}` has shape {:?}, expected {:?}",
                        p.name, a.shape, p.shape
                    ))
                }
                None => err = Some(format!("array `{}` missing", p.name)),
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        if !allow_extra && used != arrays.len() {
            return Err(format!(
                "archive holds {} arrays but the model uses {used}",
                arrays.len()
            ));
        }
        Ok(())
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit_params(&mut |p| ok &= p.value.iter().all(|v| v.is_finite()));
        ok
    }
}

impl<L: Layer + ?Sized> Parameterized for L {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        self.visit(f)
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.visit_mut(f)
    }
}
