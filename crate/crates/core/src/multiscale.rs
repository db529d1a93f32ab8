//! Gaussian pyramid, shared-weight feature extraction and the per-pixel head.
//!
//! Training runs the first head layer in a fused form: instead of upsampling
//! every scale's features and concatenating them, each scale is projected by
//! its block of the first head weight matrix at low resolution and the
//! projections are upsampled and summed. Nearest upsampling commutes with a
//! per-pixel linear map, so this is the same function as
//! [`extract_features`] followed by [`classify_pixels`] at a fraction of the
//! memory.

use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::nn::network::{
    pointwise_linear, pointwise_linear_backward, stack_backward, stack_forward, StackCache,
    StackInput,
};
use crate::nn::{softmax_channels, ArchitectureSpec, Gradients, LayerParams, Mode, Parameters};
use crate::tensor::{source_index, upsample_nearest, upsample_nearest_backward, Scalar, Tensor};

/// Number of pyramid levels used by the zoo networks.
pub const DEFAULT_LEVELS: usize = 3;
/// Smallest extent accepted by [`gaussian_pyramid`].
pub const MIN_EXTENT: usize = 4;

const BINOMIAL: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// Progressively blurred and halved copies of one image, finest first.
#[derive(Clone, Debug, PartialEq)]
pub struct Pyramid<T> {
    pub levels: Vec<Tensor<T>>,
}

impl<T> Pyramid<T> {
    /// Downsampling factor of each level relative to the first.
    pub fn scale_factors(&self) -> Vec<usize> {
        (0..self.levels.len()).map(|k| 1 << k).collect()
    }
}

/// Three-level pyramid with scale factors 1, 2 and 4.
pub fn gaussian_pyramid<T: Scalar>(image: &Tensor<T>) -> Result<Pyramid<T>> {
    gaussian_pyramid_levels(image, DEFAULT_LEVELS)
}

/// Pyramid with `levels` levels. Each level is the previous one blurred with a
/// separable (1,4,6,4,1)/16 kernel under edge replication, keeping every
/// second row and column (extents round up).
pub fn gaussian_pyramid_levels<T: Scalar>(image: &Tensor<T>, levels: usize) -> Result<Pyramid<T>> {
    let (h, w, _) = image.hwc()?;
    if h < MIN_EXTENT || w < MIN_EXTENT {
        return Err(Error::Size(format!(
            "image is {h}x{w}, the pyramid needs at least {MIN_EXTENT}x{MIN_EXTENT}"
        )));
    }
    if levels == 0 {
        return shape_err("a pyramid needs at least one level");
    }
    let mut out = vec![image.clone()];
    for _ in 1..levels {
        let next = blur_subsample(out.last().expect("non-empty"));
        out.push(next);
    }
    Ok(Pyramid { levels: out })
}

fn blur_subsample<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (h, w, c) = x.hwc().expect("pyramid levels are 3-d");
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let k: Vec<T> = BINOMIAL.iter().map(|&v| T::of(v)).collect();
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let src = x.data();

    // Horizontal pass, evaluated only at the kept columns.
    let mut horiz = vec![T::zero(); h * ow * c];
    for i in 0..h {
        for oj in 0..ow {
            let dst = &mut horiz[(i * ow + oj) * c..][..c];
            for (t, &kt) in k.iter().enumerate() {
                let j = clamp(2 * oj as isize + t as isize - 2, w);
                for (d, &s) in dst.iter_mut().zip(&src[(i * w + j) * c..][..c]) {
                    *d += kt * s;
                }
            }
        }
    }
    let mut out = vec![T::zero(); oh * ow * c];
    for oi in 0..oh {
        let dst = &mut out[oi * ow * c..][..ow * c];
        for (t, &kt) in k.iter().enumerate() {
            let i = clamp(2 * oi as isize + t as isize - 2, h);
            for (d, &s) in dst.iter_mut().zip(&horiz[i * ow * c..][..ow * c]) {
                *d += kt * s;
            }
        }
    }
    Tensor::new(&[oh, ow, c], out).expect("computed extents")
}

/// Concatenated per-scale features at input resolution, `[H, W, L·C]`.
/// Channel block `s` holds the features of pyramid level `s`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap<T> {
    pub features: Tensor<T>,
    pub trunk_channels: usize,
}

fn check_levels<T>(spec: &ArchitectureSpec, pyramid: &Pyramid<T>) -> Result<()> {
    if pyramid.levels.len() != spec.pyramid_levels {
        return shape_err(format!(
            "{} expects {} pyramid levels, got {}",
            spec.name,
            spec.pyramid_levels,
            pyramid.levels.len()
        ));
    }
    Ok(())
}

/// Run the shared trunk on every pyramid level with the same parameters,
/// upsample each result to the finest level's extents and concatenate.
pub fn extract_features<T: Scalar, R: Rng + ?Sized>(
    spec: &ArchitectureSpec,
    params: &Parameters<T>,
    pyramid: &Pyramid<T>,
    mode: Mode,
    rng: &mut R,
) -> Result<FeatureMap<T>> {
    check_levels(spec, pyramid)?;
    check_input_channels(spec, &pyramid.levels[0])?;
    let (h, w, _) = pyramid.levels[0].hwc()?;
    let trunk = stack_forward(
        &spec.shared,
        params.shared(spec),
        StackInput::Maps(pyramid.levels.clone()),
        mode,
        rng,
        false,
    )?;
    let ups = trunk
        .into_output()
        .iter()
        .map(|f| upsample_nearest(f, (h, w)))
        .collect::<Result<Vec<_>>>()?;
    Ok(FeatureMap {
        trunk_channels: ups[0].channels(),
        features: Tensor::concat_channels(&ups)?,
    })
}

/// Apply the head at every pixel; returns `(logits, softmax)`.
pub fn classify_pixels<T: Scalar, R: Rng + ?Sized>(
    spec: &ArchitectureSpec,
    params: &Parameters<T>,
    features: &FeatureMap<T>,
    mode: Mode,
    rng: &mut R,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let width = features.features.channels();
    if width != spec.feature_channels() {
        return shape_err(format!(
            "head expects {} feature channels, map has {width}",
            spec.feature_channels()
        ));
    }
    let head = stack_forward(
        &spec.head,
        params.head(spec),
        StackInput::Maps(vec![features.features.clone()]),
        mode,
        rng,
        false,
    )?;
    let logits = head.into_output().pop().expect("one map in, one map out");
    let probs = softmax_channels(&logits);
    Ok((logits, probs))
}

fn check_input_channels<T: Scalar>(spec: &ArchitectureSpec, image: &Tensor<T>) -> Result<()> {
    let (_, _, c) = image.hwc()?;
    if c != spec.in_channels {
        return shape_err(format!(
            "{} takes {} input channels, image has {c}",
            spec.name, spec.in_channels
        ));
    }
    Ok(())
}

/// Everything a training step keeps from a forward pass.
#[derive(Debug)]
pub struct ForwardPass<T> {
    levels: usize,
    /// Trunk outputs in image-major order: map `b·levels + s`.
    trunk: StackCache<T>,
    head: Option<StackCache<T>>,
    /// Logits when the head is empty (the features themselves).
    direct: Vec<Tensor<T>>,
}

impl<T: Scalar> ForwardPass<T> {
    /// Per-image logits at input resolution.
    pub fn logits(&self) -> &[Tensor<T>] {
        match &self.head {
            Some(h) => h.output(),
            None => &self.direct,
        }
    }

    pub fn probabilities(&self) -> Vec<Tensor<T>> {
        self.logits().iter().map(softmax_channels).collect()
    }

    /// Fold the batch statistics of a train-mode pass into the running
    /// batch-norm estimates.
    pub fn update_running_stats(&self, spec: &ArchitectureSpec, params: &mut Parameters<T>) {
        let offset = spec.shared.len();
        let trunk = self.trunk.batch_stats();
        let head = self
            .head
            .iter()
            .flat_map(|h| h.batch_stats())
            .map(|(i, s)| (i + offset, s));
        for (i, stats) in trunk.chain(head) {
            if let Some(bn) = params.layers[i].as_mut().and_then(|p| p.bn.as_mut()) {
                bn.update_running(stats);
            }
        }
    }
}

fn pyramid_maps<T: Scalar>(spec: &ArchitectureSpec, images: &[Tensor<T>]) -> Result<Vec<Tensor<T>>> {
    let mut maps = Vec::with_capacity(images.len() * spec.pyramid_levels);
    for img in images {
        check_input_channels(spec, img)?;
        maps.extend(gaussian_pyramid_levels(img, spec.pyramid_levels)?.levels);
    }
    Ok(maps)
}

/// Split the first head weight matrix into per-scale blocks of rows.
fn fcl0_blocks<T>(w0: &LayerParams<T>, levels: usize, trunk: usize) -> Vec<&[T]>
where
    T: Scalar,
{
    let out = w0.weight.shape()[1];
    w0.weight.data().chunks(trunk * out).take(levels).collect()
}

/// `z += upsample(low)` without materializing the upsampled map.
fn add_upsampled<T: Scalar>(z: &mut Tensor<T>, low: &Tensor<T>) {
    let (h, w, c) = z.hwc().expect("3-d");
    let (lh, lw, _) = low.hwc().expect("3-d");
    let cols: Vec<usize> = (0..w).map(|j| source_index(j, lw, w)).collect();
    let zd = z.data_mut();
    let ld = low.data();
    for i in 0..h {
        let si = source_index(i, lh, h);
        for (j, &sj) in cols.iter().enumerate() {
            let dst = &mut zd[(i * w + j) * c..][..c];
            for (d, &s) in dst.iter_mut().zip(&ld[(si * lw + sj) * c..][..c]) {
                *d += s;
            }
        }
    }
}

/// Per-scale projections of the trunk outputs by the first head layer, at
/// trunk resolution.
fn project_scales<T: Scalar>(
    spec: &ArchitectureSpec,
    params: &Parameters<T>,
    trunk_out: &[Tensor<T>],
) -> Result<Vec<Tensor<T>>> {
    let w0 = params.head(spec)[0]
        .as_ref()
        .ok_or_else(|| Error::Shape("first head layer has no parameters".into()))?;
    let out = w0.weight.shape()[1];
    let blocks = fcl0_blocks(w0, spec.pyramid_levels, spec.trunk_channels());
    trunk_out
        .iter()
        .enumerate()
        .map(|(i, f)| pointwise_linear(f, blocks[i % spec.pyramid_levels], out, None))
        .collect()
}

fn sum_upsampled<T: Scalar>(
    lows: &[Tensor<T>],
    levels: usize,
    dims: (usize, usize),
) -> Vec<Tensor<T>> {
    lows.chunks(levels)
        .map(|scales| {
            let mut z = Tensor::zeros(&[dims.0, dims.1, scales[0].channels()]);
            for low in scales {
                add_upsampled(&mut z, low);
            }
            z
        })
        .collect()
}

fn check_model<T: Scalar>(
    spec: &ArchitectureSpec,
    params: &Parameters<T>,
    images: &[Tensor<T>],
) -> Result<()> {
    spec.validate()?;
    params.check(spec)?;
    if images.is_empty() {
        return shape_err("empty image batch");
    }
    if spec.head.first().is_some_and(|l| !l.has_params()) {
        return shape_err("the head must start with a per-pixel layer");
    }
    Ok(())
}

/// Forward a batch through pyramid, shared trunk and head, keeping the caches
/// a backward pass needs. All maps of the batch (every image at every level)
/// share batch-norm statistics in train mode.
pub(crate) fn forward_model<T: Scalar, R: Rng + ?Sized>(
    spec: &ArchitectureSpec,
    params: &Parameters<T>,
    images: &[Tensor<T>],
    mode: Mode,
    rng: &mut R,
) -> Result<ForwardPass<T>> {
    check_model(spec, params, images)?;
    let levels = spec.pyramid_levels;
    let maps = pyramid_maps(spec, images)?;
    let trunk = stack_forward(&spec.shared, params.shared(spec), StackInput::Maps(maps), mode, rng, true)?;
    let f = trunk.output();

    if spec.head.is_empty() {
        let mut direct = Vec::with_capacity(images.len());
        for (b, img) in images.iter().enumerate() {
            let (h, w, _) = img.hwc()?;
            let ups = f[b * levels..(b + 1) * levels]
                .iter()
                .map(|m| upsample_nearest(m, (h, w)))
                .collect::<Result<Vec<_>>>()?;
            direct.push(Tensor::concat_channels(&ups)?);
        }
        return Ok(ForwardPass { levels, trunk, head: None, direct });
    }

    let lows = project_scales(spec, params, f)?;
    let mut z = Vec::with_capacity(images.len());
    for (b, img) in images.iter().enumerate() {
        let (h, w, _) = img.hwc()?;
        z.extend(sum_upsampled(&lows[b * levels..(b + 1) * levels], levels, (h, w)));
    }
    drop(lows);
    let head = stack_forward(&spec.head, params.head(spec), StackInput::Linear(z), mode, rng, true)?;
    Ok(ForwardPass {
        levels,
        trunk,
        head: Some(head),
        direct: Vec::new(),
    })
}

/// Gradients of every trainable array given the loss gradient with respect to
/// each image's logits.
pub fn backward_model<T: Scalar>(
    spec: &ArchitectureSpec,
    params: &Parameters<T>,
    pass: &ForwardPass<T>,
    grad_logits: Vec<Tensor<T>>,
) -> Result<Gradients<T>> {
    let levels = pass.levels;
    if grad_logits.len() != pass.logits().len() {
        return shape_err("one logit gradient per image is required");
    }
    let mut grads = Gradients::zeros_like(params);
    let (g_shared, g_head) = grads.layers.split_at_mut(spec.shared.len());
    let f = pass.trunk.output();
    let mut grad_f = Vec::with_capacity(f.len());

    match &pass.head {
        None => {
            let c = spec.trunk_channels();
            for (b, g) in grad_logits.iter().enumerate() {
                for s in 0..levels {
                    let (h, w, _) = f[b * levels + s].hwc()?;
                    let part = g.slice_channels(s * c, (s + 1) * c)?;
                    grad_f.push(upsample_nearest_backward(&part, (h, w))?);
                }
            }
        }
        Some(head) => {
            let gz = stack_backward(&spec.head, params.head(spec), head, grad_logits, g_head, true)?
                .expect("input gradient requested");
            let w0 = params.head(spec)[0].as_ref().expect("checked in forward");
            let blocks = fcl0_blocks(w0, levels, spec.trunk_channels());
            let gw0 = g_head[0].as_mut().expect("gradient slot for the first head layer");
            let block_len = blocks[0].len();
            for (b, g) in gz.iter().enumerate() {
                for s in 0..levels {
                    let fm = &f[b * levels + s];
                    let (h, w, _) = fm.hwc()?;
                    let g_low = upsample_nearest_backward(g, (h, w))?;
                    let gw = &mut gw0.weight.data_mut()[s * block_len..(s + 1) * block_len];
                    let gi = pointwise_linear_backward(&g_low, fm, blocks[s], gw, true)?;
                    grad_f.push(gi.expect("input gradient requested"));
                }
            }
        }
    }
    stack_backward(&spec.shared, params.shared(spec), &pass.trunk, grad_f, g_shared, false)?;
    Ok(grads)
}

/// Rows of the full-resolution head evaluated at once during inference.
const INFER_ROWS: usize = 32;

/// Eval-mode logits for one image, evaluating the head in row bands so the
/// full-resolution activations never exist at once.
pub fn predict_logits<T: Scalar>(
    spec: &ArchitectureSpec,
    params: &Parameters<T>,
    image: &Tensor<T>,
) -> Result<Tensor<T>> {
    check_model(spec, params, std::slice::from_ref(image))?;
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let (h, w, _) = image.hwc()?;
    let levels = spec.pyramid_levels;
    let maps = pyramid_maps(spec, std::slice::from_ref(image))?;
    let f = stack_forward(&spec.shared, params.shared(spec), StackInput::Maps(maps), Mode::Eval, &mut rng, false)?
        .into_output();
    if spec.head.is_empty() {
        let ups = f
            .iter()
            .map(|m| upsample_nearest(m, (h, w)))
            .collect::<Result<Vec<_>>>()?;
        return Tensor::concat_channels(&ups);
    }
    let lows = project_scales(spec, params, &f)?;
    drop(f);
    let d = lows[0].channels();
    let mut out: Vec<T> = Vec::with_capacity(h * w * spec.n_classes);
    let mut row = 0;
    while row < h {
        let rows = INFER_ROWS.min(h - row);
        let mut z = Tensor::zeros(&[rows, w, d]);
        {
            let zd = z.data_mut();
            for low in &lows {
                let (lh, lw, _) = low.hwc()?;
                let ld = low.data();
                for r in 0..rows {
                    let si = source_index(row + r, lh, h);
                    for j in 0..w {
                        let sj = source_index(j, lw, w);
                        let dst = &mut zd[(r * w + j) * d..][..d];
                        for (a, &b) in dst.iter_mut().zip(&ld[(si * lw + sj) * d..][..d]) {
                            *a += b;
                        }
                    }
                }
            }
        }
        let band = stack_forward(
            &spec.head,
            params.head(spec),
            StackInput::Linear(vec![z]),
            Mode::Eval,
            &mut rng,
            false,
        )?
        .into_output()
        .pop()
        .expect("one band");
        out.extend_from_slice(band.data());
        row += rows;
    }
    let k = out.len() / (h * w);
    debug_assert_eq!(levels, lows.len());
    Tensor::new(&[h, w, k], out)
}
