//! Elementwise and normalization layers.

use rand::Rng;

use crate::error::{shape_err, Result};
use crate::tensor::{all_finite, debug_check_finite, Scalar, Tensor};

/// Variance floor inside batch normalization.
pub const BN_EPS: f64 = 1e-5;
/// Fraction of the running statistics kept at each training step.
pub const BN_MOMENTUM: f64 = 0.9;

/// Whether stochastic and batch-dependent layers behave as in training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut y = x.clone();
    relu_in_place(&mut y);
    y
}

pub(crate) fn relu_in_place<T: Scalar>(x: &mut Tensor<T>) {
    for v in x.data_mut() {
        if !(*v > T::zero()) {
            *v = T::zero();
        }
    }
}

/// Gradient of [`relu`]. `reference` may be either the forward input or its
/// output since both are positive exactly where the unit is active; the
/// subgradient at zero is zero.
pub fn relu_backward<T: Scalar>(grad: &Tensor<T>, reference: &Tensor<T>) -> Result<Tensor<T>> {
    if grad.shape() != reference.shape() {
        return shape_err("relu gradient shape mismatch");
    }
    let data = grad
        .data()
        .iter()
        .zip(reference.data())
        .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(grad.shape(), data)
}

/// Softmax over the last axis with per-row max subtraction. Entries are kept
/// strictly positive.
pub fn softmax_channels<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let k = logits.channels();
    let mut out = logits.data().to_vec();
    for row in out.chunks_mut(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        let tiny = T::min_positive_value();
        for v in row.iter_mut() {
            *v = (*v / sum).max(tiny);
        }
    }
    debug_check_finite("softmax", all_finite(logits.data()), &out);
    Tensor::new(logits.shape(), out).expect("shape unchanged")
}

/// Learned affine transform and running statistics of one batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormParams<T> {
    pub scale: Vec<T>,
    pub shift: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

impl<T: Scalar> BatchNormParams<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            scale: vec![T::one(); channels],
            shift: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }

    /// Blend one training batch's statistics into the running estimates.
    pub fn update_running(&mut self, stats: &BatchStats<T>) {
        let keep = T::of(BN_MOMENTUM);
        let take = T::one() - keep;
        for c in 0..self.channels() {
            self.running_mean[c] = keep * self.running_mean[c] + take * stats.mean[c];
            self.running_var[c] = keep * self.running_var[c] + take * stats.var[c];
        }
    }

    pub fn cast<U: Scalar>(&self) -> BatchNormParams<U> {
        let c = |v: &[T]| v.iter().map(|&x| U::of(x.to_f64_lossy())).collect();
        BatchNormParams {
            scale: c(&self.scale),
            shift: c(&self.shift),
            running_mean: c(&self.running_mean),
            running_var: c(&self.running_var),
        }
    }
}

/// Per-channel mean and (biased) variance of one training batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub count: usize,
}

/// State kept by [`batchnorm`] for the backward pass.
#[derive(Clone, Debug)]
pub struct BnCache<T> {
    pub xhat: Vec<Tensor<T>>,
    pub inv_std: Vec<T>,
    pub mode: Mode,
    /// Present in train mode.
    pub stats: Option<BatchStats<T>>,
}

fn check_channels<T: Scalar>(xs: &[Tensor<T>], c: usize) -> Result<()> {
    if xs.is_empty() {
        return shape_err("batch norm over an empty batch");
    }
    if let Some(x) = xs.iter().find(|x| x.channels() != c) {
        return shape_err(format!(
            "batch norm has {c} channels, input has {}",
            x.channels()
        ));
    }
    Ok(())
}

/// Per-channel normalization over every element of every map in `xs`.
///
/// Train mode normalizes with the batch statistics and reports them in the
/// cache (the caller folds them into the running estimates); eval mode uses the
/// running estimates.
pub fn batchnorm<T: Scalar>(
    xs: &[Tensor<T>],
    bn: &BatchNormParams<T>,
    mode: Mode,
) -> Result<(Vec<Tensor<T>>, BnCache<T>)> {
    let c = bn.channels();
    check_channels(xs, c)?;
    let (mean, var, stats) = match mode {
        Mode::Train => {
            let count: usize = xs.iter().map(|x| x.len() / c).sum();
            let mut sum = vec![0.0f64; c];
            for x in xs {
                for row in x.data().chunks(c) {
                    for (s, &v) in sum.iter_mut().zip(row) {
                        *s += v.to_f64_lossy();
                    }
                }
            }
            let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
            let mut sq = vec![0.0f64; c];
            for x in xs {
                for row in x.data().chunks(c) {
                    for ((s, &v), m) in sq.iter_mut().zip(row).zip(&mean) {
                        let d = v.to_f64_lossy() - m;
                        *s += d * d;
                    }
                }
            }
            let var: Vec<f64> = sq.iter().map(|s| s / count as f64).collect();
            let stats = BatchStats {
                mean: mean.iter().map(|&m| T::of(m)).collect(),
                var: var.iter().map(|&v| T::of(v)).collect(),
                count,
            };
            (mean, var, Some(stats))
        }
        Mode::Eval => (
            bn.running_mean.iter().map(|m| m.to_f64_lossy()).collect(),
            bn.running_var.iter().map(|v| v.to_f64_lossy()).collect(),
            None,
        ),
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::of(1.0 / (v + BN_EPS).sqrt())).collect();
    let mean: Vec<T> = mean.into_iter().map(T::of).collect();

    let mut outs = Vec::with_capacity(xs.len());
    let mut xhats = Vec::with_capacity(xs.len());
    for x in xs {
        let mut xhat = x.data().to_vec();
        for row in xhat.chunks_mut(c) {
            for ch in 0..c {
                row[ch] = (row[ch] - mean[ch]) * inv_std[ch];
            }
        }
        let mut y = xhat.clone();
        for row in y.chunks_mut(c) {
            for ch in 0..c {
                row[ch] = bn.scale[ch] * row[ch] + bn.shift[ch];
            }
        }
        debug_check_finite("batchnorm", all_finite(x.data()), &y);
        outs.push(Tensor::new(x.shape(), y)?);
        xhats.push(Tensor::new(x.shape(), xhat)?);
    }
    Ok((
        outs,
        BnCache {
            xhat: xhats,
            inv_std,
            mode,
            stats,
        },
    ))
}

/// Returns `(input gradients, scale gradient, shift gradient)`.
pub fn batchnorm_backward<T: Scalar>(
    grads: &[Tensor<T>],
    cache: &BnCache<T>,
    bn: &BatchNormParams<T>,
) -> Result<(Vec<Tensor<T>>, Vec<T>, Vec<T>)> {
    let c = bn.channels();
    check_channels(grads, c)?;
    if grads.len() != cache.xhat.len() {
        return shape_err("batch norm gradient batch size mismatch");
    }
    let mut dscale = vec![0.0f64; c];
    let mut dshift = vec![0.0f64; c];
    for (g, xh) in grads.iter().zip(&cache.xhat) {
        if g.shape() != xh.shape() {
            return shape_err("batch norm gradient shape mismatch");
        }
        for (grow, xrow) in g.data().chunks(c).zip(xh.data().chunks(c)) {
            for ch in 0..c {
                let gv = grow[ch].to_f64_lossy();
                dshift[ch] += gv;
                dscale[ch] += gv * xrow[ch].to_f64_lossy();
            }
        }
    }
    let mut out = Vec::with_capacity(grads.len());
    match cache.mode {
        Mode::Train => {
            // dx = γ·inv_std·(dy − mean(dy) − x̂·mean(dy·x̂))
            let n = grads.iter().map(|g| g.len() / c).sum::<usize>() as f64;
            let mean_dy: Vec<T> = dshift.iter().map(|&s| T::of(s / n)).collect();
            let mean_dyx: Vec<T> = dscale.iter().map(|&s| T::of(s / n)).collect();
            for (g, xh) in grads.iter().zip(&cache.xhat) {
                let mut dx = g.data().to_vec();
                for (row, xrow) in dx.chunks_mut(c).zip(xh.data().chunks(c)) {
                    for ch in 0..c {
                        row[ch] = bn.scale[ch]
                            * cache.inv_std[ch]
                            * (row[ch] - mean_dy[ch] - xrow[ch] * mean_dyx[ch]);
                    }
                }
                out.push(Tensor::new(g.shape(), dx)?);
            }
        }
        Mode::Eval => {
            for g in grads {
                let mut dx = g.data().to_vec();
                for row in dx.chunks_mut(c) {
                    for ch in 0..c {
                        row[ch] *= bn.scale[ch] * cache.inv_std[ch];
                    }
                }
                out.push(Tensor::new(g.shape(), dx)?);
            }
        }
    }
    Ok((
        out,
        dscale.into_iter().map(T::of).collect(),
        dshift.into_iter().map(T::of).collect(),
    ))
}

/// Inverted dropout: in train mode each unit survives with probability
/// `keep_prob` and survivors are scaled by `1 / keep_prob`. Eval mode (or
/// `keep_prob == 1`) is the identity and returns no mask.
pub fn dropout<T: Scalar, R: Rng + ?Sized>(
    x: &Tensor<T>,
    keep_prob: f64,
    mode: Mode,
    rng: &mut R,
) -> (Tensor<T>, Option<Vec<bool>>) {
    if mode == Mode::Eval || keep_prob >= 1.0 {
        return (x.clone(), None);
    }
    let mut y = x.clone();
    let mask = dropout_in_place(&mut y, keep_prob, rng);
    (y, Some(mask))
}

pub(crate) fn dropout_in_place<T: Scalar, R: Rng + ?Sized>(
    x: &mut Tensor<T>,
    keep_prob: f64,
    rng: &mut R,
) -> Vec<bool> {
    let scale = T::of(1.0 / keep_prob);
    x.data_mut()
        .iter_mut()
        .map(|v| {
            let keep = rng.random::<f64>() < keep_prob;
            *v = if keep { *v * scale } else { T::zero() };
            keep
        })
        .collect()
}

pub fn dropout_backward<T: Scalar>(grad: &Tensor<T>, mask: &[bool], keep_prob: f64) -> Result<Tensor<T>> {
    if mask.len() != grad.len() {
        return shape_err("dropout mask does not match gradient");
    }
    let scale = T::of(1.0 / keep_prob);
    let data = grad
        .data()
        .iter()
        .zip(mask)
        .map(|(&g, &m)| if m { g * scale } else { T::zero() })
        .collect();
    Tensor::new(grad.shape(), data)
}

/// Shortcut connection: `current + source`, with `source` zero-padded on its
/// trailing channels when it is narrower than `current`.
pub fn residual_add<T: Scalar>(current: &Tensor<T>, source: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w, c2) = current.hwc()?;
    let (sh, sw, c1) = source.hwc()?;
    if (h, w) != (sh, sw) {
        return shape_err(format!("shortcut joins {sh}x{sw} onto {h}x{w}"));
    }
    if c1 > c2 {
        return shape_err(format!("shortcut source has {c1} channels, target only {c2}"));
    }
    let mut out = current.data().to_vec();
    for (row, srow) in out.chunks_mut(c2).zip(source.data().chunks(c1)) {
        for (o, &s) in row.iter_mut().zip(srow) {
            *o += s;
        }
    }
    Tensor::new(current.shape(), out)
}

/// Gradient flowing into the shortcut source of [`residual_add`].
pub fn residual_add_backward<T: Scalar>(grad: &Tensor<T>, source_channels: usize) -> Result<Tensor<T>> {
    if source_channels == grad.channels() {
        return Ok(grad.clone());
    }
    grad.slice_channels(0, source_channels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn relu_clamps_negatives() {
        let neg = Tensor::<f64>::from_fn(&[2, 2, 2], |i| -(i as f64) - 0.5);
        assert!(relu(&neg).data().iter().all(|&v| v == 0.0));
        let pos = Tensor::<f64>::from_fn(&[2, 2, 2], |i| i as f64 + 0.5);
        assert_eq!(relu(&pos), pos);
        let zero = Tensor::<f64>::zeros(&[1, 1, 1]);
        let g = relu_backward(&Tensor::full(&[1, 1, 1], 1.0), &zero).unwrap();
        assert_eq!(g.data(), &[0.0]);
    }

    #[test]
    fn softmax_uniform_and_hand_values() {
        let u = softmax_channels(&Tensor::<f64>::full(&[2, 2, 10], 0.3));
        assert!(u.data().iter().all(|&p| (p - 0.1).abs() < 1e-12));
        let t = Tensor::<f64>::new(&[1, 1, 2], vec![0.0, 3f64.ln()]).unwrap();
        let p = softmax_channels(&t);
        assert!((p.data()[0] - 0.25).abs() < 1e-12);
        assert!((p.data()[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let t = Tensor::<f64>::from_fn(&[3, 3, 5], |i| ((i * 7) % 11) as f64 - 4.0);
        let shifted = t.map(|v| v + 123.0);
        let (a, b) = (softmax_channels(&t), softmax_channels(&shifted));
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= 1e-6);
        }
    }

    #[test]
    fn softmax_extreme_logits_stay_positive() {
        let t = Tensor::<f32>::new(&[1, 1, 3], vec![0.0, -500.0, 500.0]).unwrap();
        let p = softmax_channels(&t);
        assert!(p.data().iter().all(|&v| v > 0.0 && v <= 1.0));
    }

    #[test]
    fn batchnorm_standardized_batch_passes_through() {
        // Two maps whose single channel is already zero-mean and unit-variance.
        let a = Tensor::<f64>::new(&[1, 2, 1], vec![1.0, -1.0]).unwrap();
        let b = Tensor::<f64>::new(&[1, 2, 1], vec![-1.0, 1.0]).unwrap();
        let (y, cache) = batchnorm(&[a.clone(), b.clone()], &BatchNormParams::new(1), Mode::Train).unwrap();
        for (out, inp) in y.iter().zip([&a, &b]) {
            for (o, i) in out.data().iter().zip(inp.data()) {
                assert!((o - i).abs() < 1e-4);
            }
        }
        let stats = cache.stats.unwrap();
        assert_eq!(stats.count, 4);
        assert!((stats.var[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn batchnorm_constant_channel_emits_shift() {
        let x = Tensor::<f64>::full(&[3, 3, 2], 4.0);
        let mut bn = BatchNormParams::new(2);
        bn.shift = vec![0.5, -2.0];
        bn.scale = vec![3.0, 3.0];
        let (y, _) = batchnorm(&[x], &bn, Mode::Train).unwrap();
        for row in y[0].data().chunks(2) {
            assert!((row[0] - 0.5).abs() < 1e-6);
            assert!((row[1] + 2.0).abs() < 1e-6);
        }
    }

    #[test]
    fn batchnorm_eval_uses_initial_running_stats() {
        let x = Tensor::<f64>::from_fn(&[2, 2, 1], |i| i as f64);
        let (y, _) = batchnorm(std::slice::from_ref(&x), &BatchNormParams::new(1), Mode::Eval).unwrap();
        let s = 1.0 / (1.0 + BN_EPS).sqrt();
        for (o, i) in y[0].data().iter().zip(x.data()) {
            assert!((o - i * s).abs() < 1e-12);
        }
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut bn = BatchNormParams::<f64>::new(1);
        bn.update_running(&BatchStats {
            mean: vec![10.0],
            var: vec![3.0],
            count: 4,
        });
        assert!((bn.running_mean[0] - 1.0).abs() < 1e-12);
        assert!((bn.running_var[0] - 1.2).abs() < 1e-12);
    }

    #[test]
    fn dropout_identity_cases() {
        let x = Tensor::<f64>::from_fn(&[4, 4, 3], |i| i as f64);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(dropout(&x, 1.0, Mode::Train, &mut rng).0, x);
        assert_eq!(dropout(&x, 0.3, Mode::Eval, &mut rng).0, x);
    }

    #[test]
    fn dropout_survivor_fraction() {
        let x = Tensor::<f32>::full(&[1000, 1000, 1], 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (y, mask) = dropout(&x, 0.8, Mode::Train, &mut rng);
        let kept = mask.unwrap().iter().filter(|&&m| m).count() as f64 / 1e6;
        assert!((kept - 0.8).abs() < 0.01, "kept {kept}");
        assert!(y.data().iter().all(|&v| v == 0.0 || (v - 1.25).abs() < 1e-6));
    }

    #[test]
    fn residual_add_pads_narrow_source() {
        let cur = Tensor::<f64>::from_fn(&[1, 1, 32], |i| i as f64);
        let src = Tensor::<f64>::from_fn(&[1, 1, 16], |i| 100.0 + i as f64);
        let y = residual_add(&cur, &src).unwrap();
        for c in 0..16 {
            assert_eq!(y.data()[c], c as f64 + 100.0 + c as f64);
        }
        for c in 16..32 {
            assert_eq!(y.data()[c], c as f64);
        }
        assert_eq!(residual_add(&cur, &Tensor::zeros(&[1, 1, 32])).unwrap(), cur);
        let g = residual_add_backward(&Tensor::full(&[1, 1, 32], 2.0), 16).unwrap();
        assert_eq!(g.shape(), &[1, 1, 16]);
    }

    #[test]
    fn residual_add_rejects_spatial_mismatch() {
        let cur = Tensor::<f64>::zeros(&[2, 2, 4]);
        assert!(residual_add(&cur, &Tensor::zeros(&[1, 2, 4])).is_err());
        assert!(residual_add(&cur, &Tensor::zeros(&[2, 2, 8])).is_err());
    }
}
