use super::Parameterized;

/// SGD with classical (heavy-ball) momentum: `v = mu * v + g; p -= lr * v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(learning_rate: f64, momentum: f64) -> Self {
        Sgd {
            learning_rate,
            momentum,
            velocity: Vec::new(),
        }
    }

    /// Apply one update from the accumulated gradients, then clear them.
    pub fn step<M: Parameterized + ?Sized>(&mut self, model: &mut M) {
        let (lr, mu) = (self.learning_rate, self.momentum);
        let velocity = &mut self.velocity;
        let mut idx = 0;
        model.visit_params_mut(&mut |p| {
            if !p.trainable {
                return;
            }
            if velocity.len() <= idx {
                velocity.push(vec![0.0; p.value.len()]);
            }
            let v = &mut velocity[idx];
            for ((w, g), vi) in p.value.iter_mut().zip(&p.grad).zip(v.iter_mut()) {
                *vi = mu * *vi + g;
                *w -= lr * *vi;
            }
            p.zero_grad();
            idx += 1;
        });
    }
}

/// Adam with bias correction (beta1 0.9, beta2 0.999, eps 1e-8).
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    step: i32,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub fn new(learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn step<M: Parameterized + ?Sized>(&mut self, model: &mut M) {
        self.step += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.step);
        let c2 = 1.0 - Self::BETA2.powi(self.step);
        let lr = self.learning_rate;
        let moments = &mut self.moments;
        let mut idx = 0;
        model.visit_params_mut(&mut |p| {
            if !p.trainable {
                return;
            }
            if moments.len() <= idx {
                moments.push((vec![0.0; p.value.len()], vec![0.0; p.value.len()]));
            }
            let (m, v) = &mut moments[idx];
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = Self::BETA1 * m[i] + (1.0 - Self::BETA1) * g;
                v[i] = Self::BETA2 * v[i] + (1.0 - Self::BETA2) * g * g;
                p.value[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + Self::EPS);
            }
            p.zero_grad();
            idx += 1;
        });
    }
}
