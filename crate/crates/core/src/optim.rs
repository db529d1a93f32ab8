//! Training objective, class balancing and the Adam update.

use crate::error::{shape_err, Error, Result};
use crate::nn::{Gradients, Parameters};
use crate::tensor::{Scalar, Tensor};

/// Label value excluded from loss and metrics.
pub const IGNORE: u8 = 255;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Per-class multipliers of the data term.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassWeights {
    weights: Vec<f64>,
}

impl ClassWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!(
                "class weights must be finite and nonnegative: {weights:?}"
            )));
        }
        Ok(Self { weights })
    }

    pub fn uniform(classes: usize) -> Self {
        Self {
            weights: vec![1.0; classes],
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Median frequency balancing from per-image label histograms.
///
/// `freq(c)` is the pixel count of class `c` divided by the labeled pixel count
/// of the images in which `c` occurs; the weight is the median frequency over
/// present classes divided by `freq(c)`. Absent classes get weight 0.
pub fn median_frequency_weights(histograms: &[Vec<u64>], classes: usize) -> Result<ClassWeights> {
    let mut class_pixels = vec![0u64; classes];
    let mut present_pixels = vec![0u64; classes];
    for h in histograms {
        if h.len() != classes {
            return shape_err(format!("histogram of {} bins for {classes} classes", h.len()));
        }
        let total: u64 = h.iter().sum();
        for c in 0..classes {
            if h[c] > 0 {
                class_pixels[c] += h[c];
                present_pixels[c] += total;
            }
        }
    }
    let freq: Vec<Option<f64>> = (0..classes)
        .map(|c| (class_pixels[c] > 0).then(|| class_pixels[c] as f64 / present_pixels[c] as f64))
        .collect();
    let mut present: Vec<f64> = freq.iter().flatten().copied().collect();
    if present.is_empty() {
        return ClassWeights::new(vec![0.0; classes.max(1)]);
    }
    present.sort_by(f64::total_cmp);
    let n = present.len();
    let median = if n % 2 == 1 {
        present[n / 2]
    } else {
        0.5 * (present[n / 2 - 1] + present[n / 2])
    };
    ClassWeights::new(freq.iter().map(|f| f.map_or(0.0, |f| median / f)).collect())
}

/// Labeled-pixel histogram of one label map.
pub fn label_histogram(labels: &[u8], classes: usize) -> Vec<u64> {
    let mut h = vec![0u64; classes];
    for &l in labels {
        if (l as usize) < classes {
            h[l as usize] += 1;
        }
    }
    h
}

/// Loss value of a batch and its gradient with respect to every image's logits.
#[derive(Clone, Debug)]
pub struct LossOutput<T> {
    /// Data term plus weight decay.
    pub loss: f64,
    pub data_loss: f64,
    pub labeled: usize,
    pub grad_logits: Vec<Tensor<T>>,
}

/// Weighted cross-entropy over a batch plus `λ·Σ‖W‖²`.
///
/// The data term is `-Σ w[y]·ln p[y]` over labeled pixels of every image,
/// divided by the number of labeled pixels in the batch. `probs` are softmax
/// outputs; the returned gradient is taken with respect to the logits that
/// produced them, i.e. `w[y]·(p − onehot(y)) / N`. The weight-decay gradient
/// is applied by the optimizer, not here.
pub fn batch_cross_entropy<T: Scalar>(
    probs: &[Tensor<T>],
    labels: &[&[u8]],
    weights: &ClassWeights,
    lambda: f64,
    weight_sq_norm: f64,
) -> Result<LossOutput<T>> {
    if probs.len() != labels.len() {
        return shape_err("one label map per probability map is required");
    }
    let k = weights.len();
    let mut labeled = 0usize;
    for (p, y) in probs.iter().zip(labels) {
        if p.channels() != k {
            return shape_err(format!("{} class weights for {} classes", k, p.channels()));
        }
        if p.len() / k != y.len() {
            return shape_err("label map does not match probability map");
        }
        for &l in y.iter() {
            if l == IGNORE {
                continue;
            }
            if l as usize >= k {
                return Err(Error::Data(format!("label {l} outside {k} classes")));
            }
            labeled += 1;
        }
    }
    let decay = lambda * weight_sq_norm;
    let mut grads: Vec<Tensor<T>> = probs.iter().map(|p| Tensor::zeros(p.shape())).collect();
    if labeled == 0 {
        log::warn!("mini-batch has no labeled pixels; loss reduces to weight decay");
        return Ok(LossOutput {
            loss: decay,
            data_loss: 0.0,
            labeled,
            grad_logits: grads,
        });
    }
    let norm = 1.0 / labeled as f64;
    let w = weights.as_slice();
    let mut data_loss = 0.0f64;
    for ((p, y), g) in probs.iter().zip(labels).zip(grads.iter_mut()) {
        let pd = p.data();
        let gd = g.data_mut();
        for (px, &l) in y.iter().enumerate() {
            if l == IGNORE {
                continue;
            }
            let c = l as usize;
            let row = &pd[px * k..][..k];
            let wc = w[c];
            data_loss -= wc * row[c].to_f64_lossy().ln();
            let scale = wc * norm;
            for (j, (gv, &pv)) in gd[px * k..][..k].iter_mut().zip(row).enumerate() {
                let target = if j == c { 1.0 } else { 0.0 };
                *gv = T::of(scale * (pv.to_f64_lossy() - target));
            }
        }
    }
    data_loss *= norm;
    Ok(LossOutput {
        loss: data_loss + decay,
        data_loss,
        labeled,
        grad_logits: grads,
    })
}

/// Single-image form of [`batch_cross_entropy`]; returns `(loss, grad)`.
pub fn weighted_cross_entropy<T: Scalar>(
    probs: &Tensor<T>,
    labels: &[u8],
    weights: &ClassWeights,
    lambda: f64,
    weight_sq_norm: f64,
) -> Result<(f64, Tensor<T>)> {
    let out = batch_cross_entropy(std::slice::from_ref(probs), &[labels], weights, lambda, weight_sq_norm)?;
    Ok((out.loss, out.grad_logits.into_iter().next().expect("one image")))
}

/// First and second moment estimates for every trainable array.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new<T: Scalar>(params: &Parameters<T>) -> Self {
        let lens = params.trainable_lens();
        Self {
            m: lens.iter().map(|&n| vec![0.0; n]).collect(),
            v: lens.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of a single array at step `t` (1-based).
/// `decay` adds `2·decay·w` to the gradient.
pub fn adam_update<T: Scalar>(
    w: &mut [T],
    g: &[T],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    lr: f64,
    decay: f64,
) {
    let c1 = 1.0 - ADAM_BETA1.powi(t as i32);
    let c2 = 1.0 - ADAM_BETA2.powi(t as i32);
    for i in 0..w.len() {
        let wi = w[i].to_f64_lossy();
        let gi = g[i].to_f64_lossy() + 2.0 * decay * wi;
        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * gi;
        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * gi * gi;
        let mhat = m[i] / c1;
        let vhat = v[i] / c2;
        w[i] = T::of(wi - lr * mhat / (vhat.sqrt() + ADAM_EPS));
    }
}

/// Apply one Adam step to every trainable array. Weight decay `λ` acts on
/// conv and FCL weights only.
pub fn adam_step<T: Scalar>(
    params: &mut Parameters<T>,
    grads: &Gradients<T>,
    state: &mut AdamState,
    lr: f64,
    lambda: f64,
) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
    }
    let slots = grads.slots();
    let mut arrays = params.trainable_mut();
    if slots.len() != arrays.len() || state.m.len() != arrays.len() {
        return shape_err("gradients, optimizer state and parameters disagree");
    }
    state.t += 1;
    for (i, ((role, w), g)) in arrays.iter_mut().zip(&slots).enumerate() {
        if w.len() != g.len() || state.m[i].len() != w.len() {
            return shape_err("gradient array length mismatch");
        }
        let decay = if role.decayed() { lambda } else { 0.0 };
        adam_update(w, g, &mut state.m[i], &mut state.v[i], state.t, lr, decay);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::softmax_channels;

    #[test]
    fn uniform_prediction_costs_ln_k() {
        let p = Tensor::<f64>::full(&[2, 3, 10], 0.1);
        let labels = [0, 1, 2, 3, 4, 9];
        let (loss, _) = weighted_cross_entropy(&p, &labels, &ClassWeights::uniform(10), 0.0, 0.0).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn perfect_prediction_costs_nothing() {
        let p = Tensor::<f64>::new(&[1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let (loss, _) = weighted_cross_entropy(&p, &[0, 1], &ClassWeights::uniform(2), 0.0, 0.0).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn fully_masked_batch_is_pure_decay() {
        let p = Tensor::<f64>::full(&[2, 2, 3], 1.0 / 3.0);
        let (loss, g) =
            weighted_cross_entropy(&p, &[IGNORE; 4], &ClassWeights::uniform(3), 1e-4, 37.5).unwrap();
        assert!((loss - 1e-4 * 37.5).abs() < 1e-15);
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn out_of_range_label_is_rejected() {
        let p = Tensor::<f64>::full(&[1, 1, 3], 1.0 / 3.0);
        assert!(weighted_cross_entropy(&p, &[3], &ClassWeights::uniform(3), 0.0, 0.0).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let logits = Tensor::<f64>::from_fn(&[3, 2, 4], |i| ((i * 37) % 11) as f64 / 5.0 - 1.0);
        let labels = [0, 3, IGNORE, 2, 1, 1];
        let weights = ClassWeights::new(vec![0.5, 1.0, 2.0, 1.5]).unwrap();
        let loss = |l: &Tensor<f64>| {
            weighted_cross_entropy(&softmax_channels(l), &labels, &weights, 0.0, 0.0).unwrap().0
        };
        let (_, g) = weighted_cross_entropy(&softmax_channels(&logits), &labels, &weights, 0.0, 0.0).unwrap();
        let h = 1e-6;
        for i in 0..logits.len() {
            let mut a = logits.clone();
            a.data_mut()[i] += h;
            let mut b = logits.clone();
            b.data_mut()[i] -= h;
            let fd = (loss(&a) - loss(&b)) / (2.0 * h);
            assert!((fd - g.data()[i]).abs() <= 1e-6 * (1.0 + fd.abs()), "{i}: {fd} vs {}", g.data()[i]);
        }
    }

    #[test]
    fn scaling_weights_scales_loss_and_gradient() {
        let p = softmax_channels(&Tensor::<f64>::from_fn(&[2, 2, 3], |i| i as f64 * 0.3));
        let labels = [0, 1, 2, 1];
        let w1 = ClassWeights::new(vec![1.0, 2.0, 0.5]).unwrap();
        let w3 = ClassWeights::new(vec![3.0, 6.0, 1.5]).unwrap();
        let (l1, g1) = weighted_cross_entropy(&p, &labels, &w1, 0.0, 0.0).unwrap();
        let (l3, g3) = weighted_cross_entropy(&p, &labels, &w3, 0.0, 0.0).unwrap();
        assert!((l3 - 3.0 * l1).abs() < 1e-12);
        for (a, b) in g1.data().iter().zip(g3.data()) {
            assert!((b - 3.0 * a).abs() < 1e-12);
        }
    }

    #[test]
    fn median_frequency_hand_values() {
        let w = median_frequency_weights(&[vec![50, 50], vec![30, 30]], 2).unwrap();
        assert_eq!(w.as_slice(), &[1.0, 1.0]);
        // freq = (0.8, 0.2), median 0.5
        let w = median_frequency_weights(&[vec![80, 20]], 2).unwrap();
        assert!((w.as_slice()[0] - 0.625).abs() < 1e-12);
        assert!((w.as_slice()[1] - 2.5).abs() < 1e-12);
        let w = median_frequency_weights(&[vec![0, 7, 0]], 3).unwrap();
        assert_eq!(w.as_slice(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut w = [1.0f64];
        let (mut m, mut v) = ([0.0], [0.0]);
        adam_update(&mut w, &[0.1], &mut m, &mut v, 1, 1e-4, 0.0);
        assert!((w[0] - (1.0 - 1e-4 * 0.1 / (0.1 + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn adam_two_steps_match_hand_computation() {
        let mut w = [0.5f64];
        let (mut m, mut v) = ([0.0], [0.0]);
        let (g1, g2, lr) = (0.2, -0.05, 0.01);
        adam_update(&mut w, &[g1], &mut m, &mut v, 1, lr, 0.0);
        adam_update(&mut w, &[g2], &mut m, &mut v, 2, lr, 0.0);
        let m1 = 0.1 * g1;
        let v1 = 0.001 * g1 * g1;
        let w1 = 0.5 - lr * (m1 / 0.1) / ((v1 / 0.001f64).sqrt() + 1e-8);
        let m2 = 0.9 * m1 + 0.1 * g2;
        let v2 = 0.999 * v1 + 0.001 * g2 * g2;
        let w2 = w1 - lr * (m2 / (1.0 - 0.81)) / ((v2 / (1.0 - 0.999f64 * 0.999)).sqrt() + 1e-8);
        assert!((w[0] - w2).abs() < 1e-12);
    }

    #[test]
    fn adam_solves_a_quadratic() {
        let mut w = vec![0.0f64; 4];
        let (mut m, mut v) = (vec![0.0; 4], vec![0.0; 4]);
        for t in 1..=200 {
            let g: Vec<f64> = w.iter().map(|x| 2.0 * (x - 3.0)).collect();
            adam_update(&mut w, &g, &mut m, &mut v, t, 0.1, 0.0);
        }
        assert!(w.iter().all(|x| (x - 3.0).abs() < 0.1), "{w:?}");
    }

    #[test]
    fn decay_alone_shrinks_weights() {
        let mut w = vec![1.0f64, -2.0, 0.5];
        let (mut m, mut v) = (vec![0.0; 3], vec![0.0; 3]);
        let mut prev = w.iter().map(|x| x * x).sum::<f64>();
        for t in 1..=20 {
            adam_update(&mut w, &[0.0; 3], &mut m, &mut v, t, 1e-3, 1e-2);
            let now = w.iter().map(|x| x * x).sum::<f64>();
            assert!(now < prev);
            prev = now;
        }
    }
}
