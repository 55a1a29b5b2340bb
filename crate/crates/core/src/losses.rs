//! Loss functions returning the loss value together with `d loss / d logits`.

use crate::confidence::softmax_unchecked;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn one_hot(labels: &[usize], num_classes: usize) -> Tensor {
    let mut t = Tensor::zeros(&[labels.len(), num_classes]);
    for (i, l) in labels.iter().enumerate() {
        t.row_mut(i)[*l] = 1.0;
    }
    t
}

fn check_pair(logits: &Tensor, targets: &Tensor) -> Result<()> {
    if logits.shape() != targets.shape() || logits.shape().len() != 2 {
        return Err(Error::invalid(format!(
            "logits {:?} and targets {:?} must both be (N, classes)",
            logits.shape(),
            targets.shape()
        )));
    }
    Ok(())
}

/// Row-wise softmax of a `(N, classes)` tensor.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let mut p = logits.clone();
    for i in 0..p.batch() {
        let row = softmax_unchecked(logits.row(i));
        p.row_mut(i).copy_from_slice(&row);
    }
    p
}

/// Mean over the batch of `-sum_c t_c log softmax(z)_c`. An empty batch has zero loss.
pub fn soft_cross_entropy(logits: &Tensor, targets: &Tensor) -> Result<(f64, Tensor)> {
    check_pair(logits, targets)?;
    let n = logits.batch();
    let mut grad = Tensor::zeros(logits.shape());
    if n == 0 {
        return Ok((0.0, grad));
    }
    let mut total = 0.0;
    for i in 0..n {
        let z = logits.row(i);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let t = targets.row(i);
        total += t.iter().zip(z).map(|(t, z)| -t * (z - lse)).sum::<f64>();
        let t_sum: f64 = t.iter().sum();
        for ((g, z), t) in grad.row_mut(i).iter_mut().zip(z).zip(t) {
            *g = ((z - lse).exp() * t_sum - t) / n as f64;
        }
    }
    Ok((total / n as f64, grad))
}

/// Mean over batch and classes of `(softmax(z) - t)^2`.
pub fn softmax_mse(logits: &Tensor, targets: &Tensor) -> Result<(f64, Tensor)> {
    check_pair(logits, targets)?;
    let (n, c) = (logits.batch(), logits.row_len());
    let mut grad = Tensor::zeros(logits.shape());
    if n == 0 {
        return Ok((0.0, grad));
    }
    let scale = 1.0 / (n * c) as f64;
    let p = softmax_rows(logits);
    let mut total = 0.0;
    for i in 0..n {
        let (pi, ti) = (p.row(i), targets.row(i));
        // d/dp, then through the softmax Jacobian: g_z = p * (g_p - <g_p, p>)
        let gp: Vec<f64> = pi.iter().zip(ti).map(|(p, t)| 2.0 * (p - t) * scale).collect();
        total += pi.iter().zip(ti).map(|(p, t)| (p - t).powi(2)).sum::<f64>();
        let dot: f64 = gp.iter().zip(pi).map(|(g, p)| g * p).sum();
        for ((g, p), gpj) in grad.row_mut(i).iter_mut().zip(pi).zip(&gp) {
            *g = p * (gpj - dot);
        }
    }
    Ok((total * scale, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn finite_diff(f: &dyn Fn(&Tensor) -> f64, x: &Tensor) -> Vec<f64> {
        let eps = 1e-6;
        (0..x.len())
            .map(|i| {
                let mut a = x.clone();
                let mut b = x.clone();
                a.data_mut()[i] += eps;
                b.data_mut()[i] -= eps;
                (f(&a) - f(&b)) / (2.0 * eps)
            })
            .collect()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let z = Tensor::from_vec(&[2, 3], vec![0.3, -1.2, 2.0, 0.0, 0.5, -0.7]).unwrap();
        let t = Tensor::from_vec(&[2, 3], vec![0.2, 0.3, 0.5, 1.0, 0.0, 0.0]).unwrap();
        let (_, g) = soft_cross_entropy(&z, &t).unwrap();
        let fd = finite_diff(&|z| soft_cross_entropy(z, &t).unwrap().0, &z);
        for (a, b) in g.data().iter().zip(&fd) {
            assert!((a - b).abs() < 1e-7, "{a} vs {b}");
        }
        let (_, g) = softmax_mse(&z, &t).unwrap();
        let fd = finite_diff(&|z| softmax_mse(z, &t).unwrap().0, &z);
        for (a, b) in g.data().iter().zip(&fd) {
            assert!((a - b).abs() < 1e-7, "{a} vs {b}");
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let z = Tensor::zeros(&[2, 3]);
        assert!(soft_cross_entropy(&z, &Tensor::zeros(&[2, 2])).is_err());
        assert!(softmax_mse(&z, &Tensor::zeros(&[3, 3])).is_err());
    }
}
