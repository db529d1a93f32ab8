//! Analytic-versus-finite-difference gradient checks.
//!
//! Each check reduces a primitive's output to a scalar through a random
//! linear functional `L = Σ r·out`, so the analytic input gradient is the
//! backward pass applied to `r`, and compares it with central differences of
//! `L` in double precision.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::multiscale::{backward_model, forward_model};
use crate::nn::layers::{
    batchnorm, batchnorm_backward, dropout, dropout_backward, relu, relu_backward, residual_add,
    residual_add_backward, softmax_channels, BatchNormParams, Mode,
};
use crate::nn::network::{pointwise_linear, pointwise_linear_backward};
use crate::nn::{ArchitectureSpec, LayerSpec, Parameters};
use crate::optim::{batch_cross_entropy, ClassWeights, IGNORE};
use crate::tensor::{
    conv2d, conv2d_backward, matmul, matmul_backward, maxpool2d, maxpool2d_backward,
    upsample_nearest, upsample_nearest_backward, Tensor,
};

/// Largest accepted relative error.
pub const GRAD_TOL: f64 = 1e-4;
/// Central-difference step.
const STEP: f64 = 1e-5;
/// Coordinates whose central differences at `STEP` and `STEP / 4` disagree by
/// more than this (relative) sit within a step of a ReLU or max-pool kink and
/// are skipped.
const KINK_TOL: f64 = 5e-5;
/// Denominator floor of the relative error, so that gradients that are zero up
/// to rounding (such as biases feeding batch norm) compare by absolute
/// difference.
const FLOOR: f64 = 1e-5;
/// Coordinates sampled per array in the end-to-end check.
const COORDS_PER_ARRAY: usize = 12;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub name: String,
    pub seed: u64,
    pub max_rel_err: f64,
    pub coords: usize,
    /// Coordinates skipped as non-differentiable at the step size.
    pub skipped: usize,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_err < GRAD_TOL
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FLOOR)
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

#[derive(Clone, Copy, Debug)]
struct Outcome {
    max_rel_err: f64,
    coords: usize,
    skipped: usize,
}

/// Max relative error between `analytic` and central differences of `f`
/// around `x`, over the coordinates in `indices` (all when `None`).
fn compare(
    x: &[f64],
    analytic: &[f64],
    indices: Option<&[usize]>,
    mut f: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<Outcome> {
    let all: Vec<usize>;
    let idx = match indices {
        Some(i) => i,
        None => {
            all = (0..x.len()).collect();
            &all
        }
    };
    let mut buf = x.to_vec();
    let mut central = |i: usize, h: f64| -> Result<f64> {
        buf[i] = x[i] + h;
        let up = f(&buf)?;
        buf[i] = x[i] - h;
        let down = f(&buf)?;
        buf[i] = x[i];
        Ok((up - down) / (2.0 * h))
    };
    let mut out = Outcome {
        max_rel_err: 0.0,
        coords: 0,
        skipped: 0,
    };
    for &i in idx {
        let coarse = central(i, STEP)?;
        let fine = central(i, STEP / 4.0)?;
        if rel_err(coarse, fine) > KINK_TOL {
            out.skipped += 1;
            continue;
        }
        out.coords += 1;
        out.max_rel_err = out.max_rel_err.max(rel_err(coarse, analytic[i]));
    }
    Ok(out)
}

fn with_data(like: &Tensor<f64>, data: &[f64]) -> Tensor<f64> {
    Tensor::new(like.shape(), data.to_vec()).expect("same length")
}

struct Report {
    seed: u64,
    out: Vec<GradCheck>,
}

impl Report {
    fn push(&mut self, name: &str, o: Outcome) {
        self.out.push(GradCheck {
            name: name.into(),
            seed: self.seed,
            max_rel_err: o.max_rel_err,
            coords: o.coords,
            skipped: o.skipped,
        });
    }
}

/// Checks of every layer primitive for one seed.
pub fn check_primitives(seed: u64) -> Result<Vec<GradCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = Report { seed, out: Vec::new() };

    // Convolution: input, filters, bias.
    let (h, w, cin, cout, k) = (
        rng.random_range(3..7),
        rng.random_range(3..7),
        rng.random_range(1..4),
        rng.random_range(1..4),
        [1, 3, 5][rng.random_range(0..3)],
    );
    let x = random(&[h, w, cin], &mut rng);
    let f = random(&[k, k, cin, cout], &mut rng);
    let b: Vec<f64> = (0..cout).map(|_| rng.random_range(-1.0..1.0)).collect();
    let r = random(&[h, w, cout], &mut rng);
    let g = conv2d_backward(&r, &x, &f)?;
    rep.push(
        "conv2d/input",
        compare(x.data(), g.input.data(), None, |d| Ok(dot(&conv2d(&with_data(&x, d), &f, &b)?, &r)))?,
    );
    rep.push(
        "conv2d/filters",
        compare(f.data(), g.filters.data(), None, |d| Ok(dot(&conv2d(&x, &with_data(&f, d), &b)?, &r)))?,
    );
    rep.push(
        "conv2d/bias",
        compare(&b, &g.bias, None, |d| Ok(dot(&conv2d(&x, &f, d)?, &r)))?,
    );

    // Max pooling with a ragged border.
    let x = random(&[rng.random_range(3..8), rng.random_range(3..8), 2], &mut rng);
    let (y, idx) = maxpool2d(&x, 2)?;
    let r = random(y.shape(), &mut rng);
    let g = maxpool2d_backward(&r, &idx)?;
    rep.push(
        "maxpool2d",
        compare(x.data(), g.data(), None, |d| Ok(dot(&maxpool2d(&with_data(&x, d), 2)?.0, &r)))?,
    );

    // Nearest upsampling to a non-integer ratio.
    let x = random(&[3, 4, 2], &mut rng);
    let target = (rng.random_range(4..10), rng.random_range(5..11));
    let r = random(&[target.0, target.1, 2], &mut rng);
    let g = upsample_nearest_backward(&r, (3, 4))?;
    rep.push(
        "upsample_nearest",
        compare(x.data(), g.data(), None, |d| Ok(dot(&upsample_nearest(&with_data(&x, d), target)?, &r)))?,
    );

    // Matrix product.
    let a = random(&[3, 4], &mut rng);
    let bm = random(&[4, 2], &mut rng);
    let r = random(&[3, 2], &mut rng);
    let (ga, gb) = matmul_backward(&r, &a, &bm)?;
    rep.push("matmul/a", compare(a.data(), ga.data(), None, |d| Ok(dot(&matmul(&with_data(&a, d), &bm)?, &r)))?);
    rep.push("matmul/b", compare(bm.data(), gb.data(), None, |d| Ok(dot(&matmul(&a, &with_data(&bm, d))?, &r)))?);

    // Per-pixel fully-connected layer.
    let x = random(&[3, 3, 4], &mut rng);
    let wm = random(&[4, 5], &mut rng);
    let bias: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
    let r = random(&[3, 3, 5], &mut rng);
    let mut gw = vec![0.0; 20];
    let gx = pointwise_linear_backward(&r, &x, wm.data(), &mut gw, true)?.expect("requested");
    rep.push(
        "fcl/input",
        compare(x.data(), gx.data(), None, |d| Ok(dot(&pointwise_linear(&with_data(&x, d), wm.data(), 5, Some(&bias))?, &r)))?,
    );
    rep.push(
        "fcl/weight",
        compare(wm.data(), &gw, None, |d| Ok(dot(&pointwise_linear(&x, d, 5, Some(&bias))?, &r)))?,
    );

    // ReLU, away from the kink.
    let x = Tensor::from_fn(&[4, 4, 2], |_| {
        let v: f64 = rng.random_range(0.05..1.0);
        if rng.random_bool(0.5) { v } else { -v }
    });
    let r = random(x.shape(), &mut rng);
    let g = relu_backward(&r, &x)?;
    rep.push("relu", compare(x.data(), g.data(), None, |d| Ok(dot(&relu(&with_data(&x, d)), &r)))?);

    // Dropout with a fixed mask (re-seeded draw on every evaluation).
    let x = random(&[3, 3, 2], &mut rng);
    let mask_seed = rng.random::<u64>();
    let (_, mask) = dropout(&x, 0.8, Mode::Train, &mut ChaCha8Rng::seed_from_u64(mask_seed));
    let r = random(x.shape(), &mut rng);
    let g = dropout_backward(&r, &mask.expect("train mode"), 0.8)?;
    rep.push(
        "dropout",
        compare(x.data(), g.data(), None, |d| {
            let (y, _) = dropout(&with_data(&x, d), 0.8, Mode::Train, &mut ChaCha8Rng::seed_from_u64(mask_seed));
            Ok(dot(&y, &r))
        })?,
    );

    // Shortcut addition with a narrower source.
    let cur = random(&[3, 3, 4], &mut rng);
    let src = random(&[3, 3, 2], &mut rng);
    let r = random(cur.shape(), &mut rng);
    let g = residual_add_backward(&r, 2)?;
    rep.push(
        "residual_add/source",
        compare(src.data(), g.data(), None, |d| Ok(dot(&residual_add(&cur, &with_data(&src, d))?, &r)))?,
    );
    rep.push(
        "residual_add/current",
        compare(cur.data(), r.data(), None, |d| Ok(dot(&residual_add(&with_data(&cur, d), &src)?, &r)))?,
    );

    // Batch norm over a batch of differently sized maps.
    let c = 3;
    let xs = vec![random(&[3, 4, c], &mut rng), random(&[2, 2, c], &mut rng)];
    let mut bn = BatchNormParams::<f64>::new(c);
    for ch in 0..c {
        bn.scale[ch] = rng.random_range(0.5..1.5);
        bn.shift[ch] = rng.random_range(-0.5..0.5);
    }
    let rs: Vec<Tensor<f64>> = xs.iter().map(|x| random(x.shape(), &mut rng)).collect();
    let bn_loss = |xs: &[Tensor<f64>], bn: &BatchNormParams<f64>| -> Result<f64> {
        let (ys, _) = batchnorm(xs, bn, Mode::Train)?;
        Ok(ys.iter().zip(&rs).map(|(y, r)| dot(y, r)).sum())
    };
    let (_, cache) = batchnorm(&xs, &bn, Mode::Train)?;
    let (gx, gscale, gshift) = batchnorm_backward(&rs, &cache, &bn)?;
    for (m, name) in [(0usize, "batchnorm/input0"), (1, "batchnorm/input1")] {
        rep.push(
            name,
            compare(xs[m].data(), gx[m].data(), None, |d| {
                let mut xs2 = xs.clone();
                xs2[m] = with_data(&xs[m], d);
                bn_loss(&xs2, &bn)
            })?,
        );
    }
    rep.push(
        "batchnorm/scale",
        compare(&bn.scale, &gscale, None, |d| {
            let mut b2 = bn.clone();
            b2.scale = d.to_vec();
            bn_loss(&xs, &b2)
        })?,
    );
    rep.push(
        "batchnorm/shift",
        compare(&bn.shift, &gshift, None, |d| {
            let mut b2 = bn.clone();
            b2.shift = d.to_vec();
            bn_loss(&xs, &b2)
        })?,
    );

    // Softmax folded into weighted cross-entropy, with ignored pixels.
    let k = 4;
    let logits = random(&[3, 3, k], &mut rng);
    let labels: Vec<u8> = (0..9)
        .map(|_| if rng.random_bool(0.2) { IGNORE } else { rng.random_range(0..k as u8) })
        .collect();
    let weights = ClassWeights::new((0..k).map(|_| rng.random_range(0.2..2.0)).collect())?;
    let ce = |l: &Tensor<f64>| -> Result<f64> {
        Ok(batch_cross_entropy(&[softmax_channels(l)], &[&labels], &weights, 0.0, 0.0)?.loss)
    };
    let g = batch_cross_entropy(&[softmax_channels(&logits)], &[&labels], &weights, 0.0, 0.0)?;
    rep.push(
        "softmax_cross_entropy",
        compare(logits.data(), g.grad_logits[0].data(), None, |d| ce(&with_data(&logits, d)))?,
    );

    Ok(rep.out)
}

/// The small multi-scale network used by the end-to-end check: two shared
/// convolutions (the second with a shortcut), a pooling layer, three pyramid
/// levels and a two-layer head.
pub fn end_to_end_spec() -> ArchitectureSpec {
    ArchitectureSpec {
        name: "gradcheck".into(),
        in_channels: 3,
        n_classes: 4,
        batch_size: 2,
        weight_decay: 1e-3,
        pyramid_levels: 3,
        shared: vec![
            LayerSpec::conv("Conv0", 3, 4),
            LayerSpec::maxpool("Maxpool0", 2),
            LayerSpec::conv("Conv1", 3, 4).with_shortcut("Maxpool0"),
        ],
        head: vec![LayerSpec::fcl("FCL0", 6), LayerSpec::logits("FCL1", 4)],
    }
}

/// Full model check on 16×16 inputs: pyramid, shared trunk in train mode with
/// batch norm, fused head, softmax cross-entropy and weight decay.
pub fn check_end_to_end(seed: u64) -> Result<GradCheck> {
    let spec = end_to_end_spec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let params = Parameters::<f64>::init(&spec, seed)?;
    let images: Vec<Tensor<f64>> = (0..2).map(|_| random(&[16, 16, 3], &mut rng)).collect();
    let labels: Vec<Vec<u8>> = (0..2)
        .map(|_| {
            (0..256)
                .map(|_| if rng.random_bool(0.1) { IGNORE } else { rng.random_range(0..4) })
                .collect()
        })
        .collect();
    let label_refs: Vec<&[u8]> = labels.iter().map(|l| l.as_slice()).collect();
    let weights = ClassWeights::new(vec![0.5, 1.0, 1.5, 2.0])?;
    let lambda = spec.weight_decay;

    let loss_of = |p: &Parameters<f64>| -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pass = forward_model(&spec, p, &images, Mode::Train, &mut rng)?;
        Ok(batch_cross_entropy(&pass.probabilities(), &label_refs, &weights, lambda, p.weight_sq_norm())?.loss)
    };

    let mut fwd_rng = ChaCha8Rng::seed_from_u64(0);
    let pass = forward_model(&spec, &params, &images, Mode::Train, &mut fwd_rng)?;
    let loss = batch_cross_entropy(&pass.probabilities(), &label_refs, &weights, lambda, params.weight_sq_norm())?;
    let grads = backward_model(&spec, &params, &pass, loss.grad_logits)?;

    let mut base = params.clone();
    let roles: Vec<bool> = base.trainable_mut().iter().map(|(r, _)| r.decayed()).collect();
    let values: Vec<Vec<f64>> = base.trainable_mut().iter().map(|(_, s)| s.to_vec()).collect();
    let mut total = Outcome {
        max_rel_err: 0.0,
        coords: 0,
        skipped: 0,
    };
    for (a, (x, g)) in values.iter().zip(grads.slots()).enumerate() {
        let analytic: Vec<f64> = x
            .iter()
            .zip(g)
            .map(|(w, g)| if roles[a] { g + 2.0 * lambda * w } else { *g })
            .collect();
        let n = COORDS_PER_ARRAY.min(x.len());
        let picks: Vec<usize> = if n == x.len() {
            (0..n).collect()
        } else {
            rand::seq::index::sample(&mut rng, x.len(), n).into_vec()
        };
        let o = compare(x, &analytic, Some(&picks), |d| {
            let mut p = params.clone();
            p.trainable_mut()[a].1.copy_from_slice(d);
            loss_of(&p)
        })?;
        total.max_rel_err = total.max_rel_err.max(o.max_rel_err);
        total.coords += o.coords;
        total.skipped += o.skipped;
    }
    Ok(GradCheck {
        name: "end_to_end/16x16".into(),
        seed,
        max_rel_err: total.max_rel_err,
        coords: total.coords,
        skipped: total.skipped,
    })
}

/// Primitive and end-to-end checks over `seeds`.
pub fn run_suite(seeds: impl IntoIterator<Item = u64>) -> Result<Vec<GradCheck>> {
    let mut out = Vec::new();
    for seed in seeds {
        out.extend(check_primitives(seed)?);
        out.push(check_end_to_end(seed)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(rel_err(1.0, 1.0), 0.0);
        assert!((rel_err(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!(rel_err(1e-11, 0.0) < 1e-5);
    }

    #[test]
    fn primitives_pass_for_one_seed() {
        for c in check_primitives(7).unwrap() {
            assert!(c.passed(), "{c:?}");
        }
    }

    #[test]
    fn end_to_end_passes() {
        for seed in 0..3 {
            let c = check_end_to_end(seed).unwrap();
            assert!(c.passed() && c.coords > 80, "{c:?}");
        }
    }
}
