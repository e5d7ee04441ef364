//! Generalized Dice loss.
//!
//! `1 − 2·Σ_l w_l Σ_n r_ln p_ln / (Σ_l w_l Σ_n (r_ln + p_ln) + eps)` with
//! `w_l = 1 / (Σ_n r_ln + eps)²`. Class weights depend on the target only, so
//! they are constants for differentiation.

use crate::diffcore::{Scalar, Tensor};
use crate::error::{Error, Result};

pub const DEFAULT_EPS: f64 = 1e-5;

/// Per-voxel one-hot ground truth, `[classes, ...spatial]`.
#[derive(Debug, Clone, PartialEq)]
pub struct OneHotTarget<T>(Tensor<T>);

impl<T: Scalar> OneHotTarget<T> {
    pub fn new(tensor: Tensor<T>) -> Result<Self> {
        let shape = tensor.shape();
        if shape.len() < 2 {
            return Err(Error::shape("one_hot", format!("expected [classes, ...], got {shape:?}")));
        }
        let c = shape[0];
        let s = tensor.numel() / c;
        let d = tensor.data();
        for p in 0..s {
            let mut total = 0.0;
            for k in 0..c {
                let v = d[k * s + p].re();
                if v != 0.0 && v != 1.0 {
                    return Err(Error::Contract(format!("target value {v} is not 0 or 1")));
                }
                total += v;
            }
            if total != 1.0 {
                return Err(Error::Contract(format!(
                    "target voxel {p} has channel sum {total}, expected 1"
                )));
            }
        }
        Ok(OneHotTarget(tensor))
    }

    /// Two-class target from a binary label buffer.
    pub fn from_binary(spatial: &[usize], labels: &[u8]) -> Result<Self> {
        let n: usize = spatial.iter().product();
        if labels.len() != n {
            return Err(Error::shape(
                "one_hot",
                format!("{} labels for spatial shape {spatial:?}", labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::Contract(format!("label value {bad} is not binary")));
        }
        let mut shape = vec![2];
        shape.extend_from_slice(spatial);
        let data = (0..2 * n)
            .map(|i| {
                let (k, p) = (i / n, i % n);
                if labels[p] as usize == k {
                    T::one()
                } else {
                    T::zero()
                }
            })
            .collect();
        Ok(OneHotTarget(Tensor::new(shape, data)?))
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.0
    }
}

struct Terms<T> {
    weights: Vec<T>,
    num: T,
    den: T,
}

fn terms<T: Scalar>(classes: usize, probs: &[T], target: &[T], eps: f64) -> Terms<T> {
    let n = probs.len() / classes;
    let eps_t = T::from_f64(eps);
    let mut weights = Vec::with_capacity(classes);
    let mut num = T::zero();
    let mut den = T::zero();
    for l in 0..classes {
        let r = &target[l * n..(l + 1) * n];
        let p = &probs[l * n..(l + 1) * n];
        let vol: T = r.iter().copied().sum();
        let base = vol + eps_t;
        let w = T::one() / (base * base);
        let inter = crate::diffcore::kernels::dot(r, p);
        let psum: T = p.iter().copied().sum();
        num += w * inter;
        den += w * (vol + psum);
        weights.push(w);
    }
    Terms {
        weights,
        num,
        den: den + eps_t,
    }
}

pub(crate) fn gdl_value<T: Scalar>(classes: usize, probs: &[T], target: &[T], eps: f64) -> T {
    let t = terms(classes, probs, target, eps);
    T::one() - T::from_f64(2.0) * t.num / t.den
}

/// Vector-Jacobian product of the loss w.r.t. `probs`.
pub(crate) fn gdl_backward<T: Scalar>(
    classes: usize,
    probs: &[T],
    target: &[T],
    eps: f64,
    upstream: T,
) -> Vec<T> {
    let t = terms(classes, probs, target, eps);
    let n = probs.len() / classes;
    let two = T::from_f64(2.0);
    // dL/dp_ln = -2 w_l (r_ln·den - num) / den²
    let scale = -two * upstream / (t.den * t.den);
    let mut grad = vec![T::zero(); probs.len()];
    for l in 0..classes {
        let w = t.weights[l];
        for i in 0..n {
            grad[l * n + i] = scale * w * (target[l * n + i] * t.den - t.num);
        }
    }
    grad
}

/// Generalized Dice loss of class probabilities against a one-hot target.
pub fn generalized_dice_loss<T: Scalar>(
    probs: &Tensor<T>,
    target: &OneHotTarget<T>,
    eps: f64,
) -> Result<T> {
    let tt = target.tensor();
    if probs.shape() != tt.shape() {
        return Err(Error::shape(
            "generalized_dice_loss",
            format!("probs {:?} vs target {:?}", probs.shape(), tt.shape()),
        ));
    }
    let c = probs.shape()[0];
    let s = probs.numel() / c;
    let d = probs.data();
    for p in 0..s {
        let total: f64 = (0..c).map(|k| d[k * s + p].re()).sum();
        if (total - 1.0).abs() > 1e-4 {
            return Err(Error::Contract(format!(
                "probabilities at voxel {p} sum to {total}"
            )));
        }
    }
    Ok(gdl_value(c, probs.data(), tt.data(), eps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_class(fg: &[f64], labels: &[u8]) -> (Tensor<f64>, OneHotTarget<f64>) {
        let n = fg.len();
        let mut data: Vec<f64> = fg.iter().map(|p| 1.0 - p).collect();
        data.extend_from_slice(fg);
        (
            Tensor::new(vec![2, n], data).unwrap(),
            OneHotTarget::from_binary(&[n], labels).unwrap(),
        )
    }

    #[test]
    fn perfect_prediction_is_near_zero() {
        let labels = [1u8, 0, 0, 1, 1, 0, 0, 0];
        let fg: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
        let (p, t) = two_class(&fg, &labels);
        let loss = generalized_dice_loss(&p, &t, DEFAULT_EPS).unwrap();
        assert!((0.0..=1e-4).contains(&loss), "{loss}");
    }

    #[test]
    fn fully_wrong_prediction_is_near_one() {
        let labels = [1u8, 0, 0, 1, 1, 0, 0, 0];
        let fg: Vec<f64> = labels.iter().map(|&l| 1.0 - l as f64).collect();
        let (p, t) = two_class(&fg, &labels);
        let loss = generalized_dice_loss(&p, &t, DEFAULT_EPS).unwrap();
        assert!(loss >= 1.0 - 1e-4 && loss <= 1.0, "{loss}");
    }

    #[test]
    fn two_voxel_hand_evaluation() {
        // target = (fg, bg); fg probabilities (0.8, 0.4)
        let (p, t) = two_class(&[0.8, 0.4], &[1, 0]);
        let eps = DEFAULT_EPS;
        let w = 1.0 / ((1.0 + eps) * (1.0 + eps)); // both classes have volume 1
        // background: r=(0,1), p=(0.2,0.6); foreground: r=(1,0), p=(0.8,0.4)
        let num = w * 0.6 + w * 0.8;
        let den = w * (1.0 + 0.8) + w * (1.0 + 1.2) + eps;
        let expected = 1.0 - 2.0 * num / den;
        let loss = generalized_dice_loss(&p, &t, eps).unwrap();
        assert!((loss - expected).abs() < 1e-15, "{loss} vs {expected}");
    }

    #[test]
    fn rejects_bad_inputs() {
        let (p, _) = two_class(&[0.8, 0.4], &[1, 0]);
        let t3 = OneHotTarget::from_binary(&[3], &[1, 0, 0]).unwrap();
        assert!(matches!(
            generalized_dice_loss(&p, &t3, DEFAULT_EPS),
            Err(Error::Shape { .. })
        ));
        let bad = Tensor::new(vec![2, 2], vec![0.5, 0.5, 0.9, 0.5]).unwrap();
        let t = OneHotTarget::from_binary(&[2], &[1, 0]).unwrap();
        assert!(matches!(
            generalized_dice_loss(&bad, &t, DEFAULT_EPS),
            Err(Error::Contract(_))
        ));
        assert!(OneHotTarget::<f64>::from_binary(&[2], &[2, 0]).is_err());
    }

    #[test]
    fn backward_matches_central_differences() {
        let labels = [1u8, 0, 1, 0, 0];
        let fg = [0.7, 0.2, 0.4, 0.9, 0.1];
        let (p, t) = two_class(&fg, &labels);
        let g = gdl_backward(2, p.data(), t.tensor().data(), DEFAULT_EPS, 1.0);
        let h = 1e-6;
        for i in 0..p.numel() {
            let mut a = p.data().to_vec();
            let mut b = p.data().to_vec();
            a[i] += h;
            b[i] -= h;
            let fd = (gdl_value(2, &a, t.tensor().data(), DEFAULT_EPS)
                - gdl_value(2, &b, t.tensor().data(), DEFAULT_EPS))
                / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-7, "{i}: {fd} vs {}", g[i]);
        }
    }

    proptest! {
        #[test]
        fn loss_stays_in_unit_interval_and_ignores_voxel_order(
            cells in prop::collection::vec((0.0f64..=1.0, 0u8..2), 1..40),
            rot in 0usize..40,
        ) {
            let fg: Vec<f64> = cells.iter().map(|c| c.0).collect();
            let labels: Vec<u8> = cells.iter().map(|c| c.1).collect();
            let (p, t) = two_class(&fg, &labels);
            let loss = generalized_dice_loss(&p, &t, DEFAULT_EPS).unwrap();
            prop_assert!((0.0..=1.0).contains(&loss));

            let k = rot % fg.len();
            let mut fg2 = fg.clone();
            let mut l2 = labels.clone();
            fg2.rotate_left(k);
            l2.rotate_left(k);
            let (p2, t2) = two_class(&fg2, &l2);
            let loss2 = generalized_dice_loss(&p2, &t2, DEFAULT_EPS).unwrap();
            prop_assert!((loss - loss2).abs() <= 1e-12 * loss.abs().max(1.0));
        }
    }
}
