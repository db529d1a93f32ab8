//! Layer-major execution of a layer list over a batch of feature maps.
//!
//! Every layer runs as: linear map (conv / pool / FCL) → optional shortcut add
//! → optional batch norm → activation → optional dropout. Batch norm pools its
//! statistics over every map in the batch, so the maps of one batch advance
//! through the list together.

use rand::Rng;

use super::layers::{
    batchnorm, batchnorm_backward, dropout_in_place, relu_in_place, residual_add,
    residual_add_backward, BatchStats, BnCache, Mode,
};
use super::params::{LayerGrads, LayerParams};
use super::spec::{Activation, ArchitectureSpec, LayerKind, LayerSpec};
use crate::error::{shape_err, Error, Result};
use crate::multiscale::{forward_model, ForwardPass};
use crate::tensor::{
    conv2d, conv2d_backward_select, gemm, maxpool2d, maxpool2d_backward, Layout, PoolIndices, Scalar,
    Tensor,
};

/// Entry point of a layer stack.
pub(crate) enum StackInput<T> {
    /// Feature maps fed to the first layer.
    Maps(Vec<Tensor<T>>),
    /// Precomputed `W·x` of the first layer (its bias is still added here).
    Linear(Vec<Tensor<T>>),
}

#[derive(Debug)]
pub(crate) struct LayerCache<T> {
    pub(crate) output: Vec<Tensor<T>>,
    pool: Option<Vec<PoolIndices>>,
    bn: Option<BnCache<T>>,
    drop: Option<Vec<Vec<bool>>>,
}

#[derive(Debug)]
pub(crate) struct StackCache<T> {
    input: Option<Vec<Tensor<T>>>,
    pub(crate) layers: Vec<LayerCache<T>>,
    retained: bool,
}

impl<T: Scalar> StackCache<T> {
    pub(crate) fn output(&self) -> &[Tensor<T>] {
        match self.layers.last() {
            Some(l) => &l.output,
            None => self.input.as_deref().unwrap_or(&[]),
        }
    }

    pub(crate) fn into_output(mut self) -> Vec<Tensor<T>> {
        match self.layers.pop() {
            Some(l) => l.output,
            None => self.input.unwrap_or_default(),
        }
    }

    /// Train-mode batch statistics, by layer index within the stack.
    pub(crate) fn batch_stats(&self) -> impl Iterator<Item = (usize, &BatchStats<T>)> {
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.bn.as_ref().and_then(|b| b.stats.as_ref()).map(|s| (i, s)))
    }
}

/// `x·W + b` at every pixel of a `[.., C]` map; `W` is `[C, out]` row-major.
pub(crate) fn pointwise_linear<T: Scalar>(
    x: &Tensor<T>,
    weight: &[T],
    out: usize,
    bias: Option<&[T]>,
) -> Result<Tensor<T>> {
    let cin = x.channels();
    if weight.len() != cin * out {
        return shape_err(format!(
            "per-pixel layer expects {} inputs, map has {cin} channels",
            weight.len() / out.max(1)
        ));
    }
    let rows = x.len() / cin;
    let mut data = match bias {
        Some(b) => {
            let mut d = Vec::with_capacity(rows * out);
            for _ in 0..rows {
                d.extend_from_slice(b);
            }
            d
        }
        None => vec![T::zero(); rows * out],
    };
    gemm(rows, cin, out, x.data(), Layout::Normal, weight, Layout::Normal, &mut data, true);
    let mut shape = x.shape().to_vec();
    *shape.last_mut().expect("non-empty") = out;
    Tensor::new(&shape, data)
}

/// Accumulates `xᵀ·g` into `grad_weight` and returns `g·Wᵀ` when requested.
pub(crate) fn pointwise_linear_backward<T: Scalar>(
    grad: &Tensor<T>,
    x: &Tensor<T>,
    weight: &[T],
    grad_weight: &mut [T],
    need_input: bool,
) -> Result<Option<Tensor<T>>> {
    let cin = x.channels();
    let out = grad.channels();
    let rows = x.len() / cin;
    if grad.len() / out != rows || weight.len() != cin * out || grad_weight.len() != cin * out {
        return shape_err("per-pixel layer gradient shape mismatch");
    }
    gemm(cin, rows, out, x.data(), Layout::Transposed, grad.data(), Layout::Normal, grad_weight, true);
    if !need_input {
        return Ok(None);
    }
    let mut gx = vec![T::zero(); rows * cin];
    gemm(rows, out, cin, grad.data(), Layout::Normal, weight, Layout::Transposed, &mut gx, false);
    Ok(Some(Tensor::new(x.shape(), gx)?))
}

fn add_bias<T: Scalar>(z: &mut Tensor<T>, bias: &[T]) -> Result<()> {
    let c = z.channels();
    if c != bias.len() {
        return shape_err(format!("bias of {} entries for {c} channels", bias.len()));
    }
    for row in z.data_mut().chunks_mut(c) {
        for (v, &b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
    Ok(())
}

fn params_of<'a, T>(spec: &LayerSpec, p: &'a Option<LayerParams<T>>) -> Result<&'a LayerParams<T>> {
    p.as_ref()
        .ok_or_else(|| Error::Shape(format!("{} has no parameters", spec.name)))
}

/// Last layer index that reads each layer's output.
fn last_uses(specs: &[LayerSpec], shortcuts: &[Option<usize>]) -> Vec<usize> {
    let mut last: Vec<usize> = (0..specs.len()).map(|i| i + 1).collect();
    for (i, s) in shortcuts.iter().enumerate() {
        if let Some(j) = *s {
            last[j] = last[j].max(i);
        }
    }
    last
}

/// Run `specs` over a batch. With `retain` unset, intermediate outputs are
/// dropped as soon as nothing downstream reads them and the result supports
/// no backward pass.
pub(crate) fn stack_forward<T: Scalar, R: Rng + ?Sized>(
    specs: &[LayerSpec],
    params: &[Option<LayerParams<T>>],
    input: StackInput<T>,
    mode: Mode,
    rng: &mut R,
    retain: bool,
) -> Result<StackCache<T>> {
    if specs.len() != params.len() {
        return shape_err("parameter list does not match layer list");
    }
    let shortcuts = ArchitectureSpec::shortcut_indices(specs);
    let last = last_uses(specs, &shortcuts);
    let (mut stack_input, mut linear) = match input {
        StackInput::Maps(m) => (Some(m), None),
        StackInput::Linear(z) => {
            if specs.is_empty() || !specs[0].has_params() {
                return shape_err("a precomputed linear input needs a leading parametric layer");
            }
            (None, Some(z))
        }
    };
    let mut layers: Vec<LayerCache<T>> = Vec::with_capacity(specs.len());

    for (l, spec) in specs.iter().enumerate() {
        let inputs: &[Tensor<T>] = if l == 0 {
            stack_input.as_deref().unwrap_or(&[])
        } else {
            &layers[l - 1].output
        };
        let mut pool = None;
        let mut pre: Vec<Tensor<T>> = match (spec.kind, linear.take()) {
            (_, Some(mut z)) => {
                let p = params_of(spec, &params[l])?;
                for m in &mut z {
                    add_bias(m, &p.bias)?;
                }
                z
            }
            (LayerKind::Conv { .. }, None) => {
                let p = params_of(spec, &params[l])?;
                inputs
                    .iter()
                    .map(|x| conv2d(x, &p.weight, &p.bias))
                    .collect::<Result<_>>()?
            }
            (LayerKind::Fcl { width }, None) => {
                let p = params_of(spec, &params[l])?;
                inputs
                    .iter()
                    .map(|x| pointwise_linear(x, p.weight.data(), width, Some(&p.bias)))
                    .collect::<Result<_>>()?
            }
            (LayerKind::MaxPool { size }, None) => {
                let (outs, idx): (Vec<_>, Vec<_>) = inputs
                    .iter()
                    .map(|x| maxpool2d(x, size))
                    .collect::<Result<Vec<_>>>()?
                    .into_iter()
                    .unzip();
                pool = Some(idx);
                outs
            }
        };

        if let Some(src) = shortcuts[l] {
            let source = &layers[src].output;
            pre = pre
                .iter()
                .zip(source)
                .map(|(c, s)| residual_add(c, s))
                .collect::<Result<_>>()?;
        }

        let mut bn_cache = None;
        if spec.batch_norm {
            let bn = params_of(spec, &params[l])?
                .bn
                .as_ref()
                .ok_or_else(|| Error::Shape(format!("{} lacks batch-norm parameters", spec.name)))?;
            let (y, cache) = batchnorm(&pre, bn, mode)?;
            pre = y;
            bn_cache = Some(cache);
        }

        if spec.activation == Activation::Relu {
            pre.iter_mut().for_each(relu_in_place);
        }

        let mut drop = None;
        if mode == Mode::Train && spec.keep_prob < 1.0 {
            drop = Some(
                pre.iter_mut()
                    .map(|x| dropout_in_place(x, spec.keep_prob, rng))
                    .collect(),
            );
        }

        if !retain {
            bn_cache = None;
            pool = None;
            drop = None;
            if l == 0 {
                stack_input = None;
            }
            for j in 0..l {
                if last[j] <= l {
                    layers[j].output = Vec::new();
                }
            }
        }
        layers.push(LayerCache {
            output: pre,
            pool,
            bn: bn_cache,
            drop,
        });
    }
    Ok(StackCache {
        input: stack_input,
        layers,
        retained: retain,
    })
}

/// Backpropagate `grad_out` through a retained stack, accumulating parameter
/// gradients into `grads`. Returns the gradient with respect to the stack
/// input (or to the supplied linear term) when `need_input` is set.
pub(crate) fn stack_backward<T: Scalar>(
    specs: &[LayerSpec],
    params: &[Option<LayerParams<T>>],
    cache: &StackCache<T>,
    grad_out: Vec<Tensor<T>>,
    grads: &mut [Option<LayerGrads<T>>],
    need_input: bool,
) -> Result<Option<Vec<Tensor<T>>>> {
    if !cache.retained {
        return shape_err("backward pass over a stack run without retained caches");
    }
    if specs.is_empty() {
        return Ok(need_input.then_some(grad_out));
    }
    let shortcuts = ArchitectureSpec::shortcut_indices(specs);
    let n = specs.len();
    let mut acc: Vec<Option<Vec<Tensor<T>>>> = (0..n).map(|_| None).collect();
    acc[n - 1] = Some(grad_out);

    for l in (0..n).rev() {
        let spec = &specs[l];
        let lc = &cache.layers[l];
        let mut g = match acc[l].take() {
            Some(g) => g,
            None => lc.output.iter().map(|o| Tensor::zeros(o.shape())).collect(),
        };

        if let Some(masks) = &lc.drop {
            let scale = T::of(1.0 / spec.keep_prob);
            for (g, m) in g.iter_mut().zip(masks) {
                if g.len() != m.len() {
                    return shape_err("dropout mask does not match gradient");
                }
                for (v, &keep) in g.data_mut().iter_mut().zip(m) {
                    *v = if keep { *v * scale } else { T::zero() };
                }
            }
        }
        if spec.activation == Activation::Relu {
            // The stored output is positive exactly where the unit was active and kept.
            for (g, o) in g.iter_mut().zip(&lc.output) {
                if g.shape() != o.shape() {
                    return shape_err("relu gradient shape mismatch");
                }
                for (v, &y) in g.data_mut().iter_mut().zip(o.data()) {
                    if y <= T::zero() {
                        *v = T::zero();
                    }
                }
            }
        }
        if let Some(bc) = &lc.bn {
            let p = params_of(spec, &params[l])?;
            let bn = p.bn.as_ref().expect("batch norm cached only with parameters");
            let (gx, dscale, dshift) = batchnorm_backward(&g, bc, bn)?;
            let lg = grads[l].as_mut().expect("gradient slot for parametric layer");
            for (a, b) in lg.bn_scale.iter_mut().zip(dscale) {
                *a += b;
            }
            for (a, b) in lg.bn_shift.iter_mut().zip(dshift) {
                *a += b;
            }
            g = gx;
        }
        if let Some(src) = shortcuts[l] {
            let c1 = cache.layers[src].output[0].channels();
            let gs: Vec<Tensor<T>> = g
                .iter()
                .map(|g| residual_add_backward(g, c1))
                .collect::<Result<_>>()?;
            accumulate(&mut acc[src], gs)?;
        }

        let want = l > 0 || need_input;
        let inputs: Option<&[Tensor<T>]> = if l == 0 {
            cache.input.as_deref()
        } else {
            Some(&cache.layers[l - 1].output)
        };
        let grad_in: Option<Vec<Tensor<T>>> = match (spec.kind, inputs) {
            (_, None) => {
                // Linear term supplied by the caller: only the bias is ours.
                let lg = grads[l].as_mut().expect("gradient slot for parametric layer");
                for m in &g {
                    let c = m.channels();
                    for row in m.data().chunks(c) {
                        for (b, &v) in lg.bias.iter_mut().zip(row) {
                            *b += v;
                        }
                    }
                }
                Some(g)
            }
            (LayerKind::Conv { .. }, Some(xs)) => {
                let p = params_of(spec, &params[l])?;
                let lg = grads[l].as_mut().expect("gradient slot for parametric layer");
                let mut out = Vec::with_capacity(xs.len());
                for (gm, x) in g.iter().zip(xs) {
                    let gi = conv2d_backward_select(
                        gm,
                        x,
                        &p.weight,
                        lg.weight.data_mut(),
                        &mut lg.bias,
                        want,
                    )?;
                    out.extend(gi);
                }
                want.then_some(out)
            }
            (LayerKind::Fcl { .. }, Some(xs)) => {
                let p = params_of(spec, &params[l])?;
                let lg = grads[l].as_mut().expect("gradient slot for parametric layer");
                let mut out = Vec::with_capacity(xs.len());
                for (gm, x) in g.iter().zip(xs) {
                    let c = gm.channels();
                    for row in gm.data().chunks(c) {
                        for (b, &v) in lg.bias.iter_mut().zip(row) {
                            *b += v;
                        }
                    }
                    let gi = pointwise_linear_backward(gm, x, p.weight.data(), lg.weight.data_mut(), want)?;
                    out.extend(gi);
                }
                want.then_some(out)
            }
            (LayerKind::MaxPool { .. }, Some(_)) => {
                let idx = lc.pool.as_ref().expect("pool indices retained");
                if want {
                    Some(
                        g.iter()
                            .zip(idx)
                            .map(|(g, i)| maxpool2d_backward(g, i))
                            .collect::<Result<_>>()?,
                    )
                } else {
                    None
                }
            }
        };
        if l == 0 {
            return Ok(if need_input { grad_in } else { None });
        }
        if let Some(gi) = grad_in {
            accumulate(&mut acc[l - 1], gi)?;
        }
    }
    unreachable!("loop returns at layer 0")
}

fn accumulate<T: Scalar>(slot: &mut Option<Vec<Tensor<T>>>, add: Vec<Tensor<T>>) -> Result<()> {
    match slot {
        None => *slot = Some(add),
        Some(cur) => {
            for (c, a) in cur.iter_mut().zip(&add) {
                c.add_assign(a)?;
            }
        }
    }
    Ok(())
}

/// Full forward pass of a network on a batch of `[H, W, Cin]` images:
/// pyramid construction, shared trunk at every level, feature upsampling and
/// the per-pixel head. Returns logits at input resolution plus everything the
/// backward pass needs.
pub fn run_network<T: Scalar, R: Rng + ?Sized>(
    spec: &ArchitectureSpec,
    params: &super::params::Parameters<T>,
    images: &[Tensor<T>],
    mode: Mode,
    rng: &mut R,
) -> Result<ForwardPass<T>> {
    forward_model(spec, params, images, mode, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::Parameters;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_conv_without_head_returns_input() {
        let spec = ArchitectureSpec {
            name: "id".into(),
            in_channels: 2,
            n_classes: 2,
            batch_size: 1,
            weight_decay: 0.0,
            pyramid_levels: 1,
            shared: vec![LayerSpec::conv("C0", 1, 2)
                .with_batch_norm(false)
                .with_activation(Activation::None)],
            head: vec![],
        };
        let mut params = Parameters::<f64>::init(&spec, 0).unwrap();
        let p = params.layers[0].as_mut().unwrap();
        p.weight = Tensor::new(&[1, 1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let x = Tensor::from_fn(&[5, 4, 2], |i| (i as f64 * 0.37).sin());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pass = run_network(&spec, &params, std::slice::from_ref(&x), Mode::Eval, &mut rng).unwrap();
        assert_eq!(pass.logits()[0], x);
    }

    #[test]
    fn non_retained_stack_frees_intermediates() {
        let specs = vec![
            LayerSpec::conv("A", 3, 2),
            LayerSpec::conv("B", 3, 2),
            LayerSpec::conv("C", 3, 2).with_shortcut("A"),
        ];
        let spec = ArchitectureSpec {
            name: "s".into(),
            in_channels: 1,
            n_classes: 2,
            batch_size: 1,
            weight_decay: 0.0,
            pyramid_levels: 1,
            shared: specs.clone(),
            head: vec![],
        };
        let params = Parameters::<f32>::init(&spec, 3).unwrap();
        let x = Tensor::<f32>::full(&[4, 4, 1], 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let kept = stack_forward(&specs, &params.layers, StackInput::Maps(vec![x.clone()]), Mode::Eval, &mut rng, true).unwrap();
        let lean = stack_forward(&specs, &params.layers, StackInput::Maps(vec![x]), Mode::Eval, &mut rng, false).unwrap();
        assert_eq!(kept.output(), lean.output());
        assert!(lean.layers[0].output.is_empty() && lean.layers[1].output.is_empty());
    }
}
