//! Same-padded, stride-1 2-D convolution lowered to GEMM via im2col.

use super::{all_finite, debug_check_finite, gemm, Layout, Scalar, Tensor};
use crate::error::{shape_err, Result};

/// Gradients of [`conv2d`] with respect to its three operands.
#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub filters: Tensor<T>,
    pub bias: Vec<T>,
}

struct Geometry {
    h: usize,
    w: usize,
    cin: usize,
    k: usize,
    cout: usize,
}

fn geometry<T: Scalar>(input: &Tensor<T>, filters: &Tensor<T>) -> Result<Geometry> {
    let (h, w, cin) = input.hwc()?;
    let [k, k2, fcin, cout] = *filters.shape() else {
        return shape_err(format!("filters must be [K, K, Cin, Cout], got {:?}", filters.shape()));
    };
    if k != k2 || k % 2 == 0 {
        return shape_err(format!("filter window must be square and odd, got {k}x{k2}"));
    }
    if fcin != cin {
        return shape_err(format!(
            "input has {cin} channels but filters expect {fcin}"
        ));
    }
    Ok(Geometry { h, w, cin, k, cout })
}

/// Unfold every K×K×Cin window (zero outside the image) into one row.
fn im2col<T: Scalar>(input: &[T], g: &Geometry) -> Vec<T> {
    let row = g.k * g.k * g.cin;
    let pad = (g.k / 2) as isize;
    let mut cols = vec![T::zero(); g.h * g.w * row];
    for i in 0..g.h {
        for j in 0..g.w {
            let base = (i * g.w + j) * row;
            for di in 0..g.k {
                let si = i as isize + di as isize - pad;
                if si < 0 || si >= g.h as isize {
                    continue;
                }
                for dj in 0..g.k {
                    let sj = j as isize + dj as isize - pad;
                    if sj < 0 || sj >= g.w as isize {
                        continue;
                    }
                    let src = (si as usize * g.w + sj as usize) * g.cin;
                    let dst = base + (di * g.k + dj) * g.cin;
                    cols[dst..dst + g.cin].copy_from_slice(&input[src..src + g.cin]);
                }
            }
        }
    }
    cols
}

/// Scatter-add window rows back onto the image grid (adjoint of [`im2col`]).
fn col2im<T: Scalar>(cols: &[T], g: &Geometry) -> Vec<T> {
    let row = g.k * g.k * g.cin;
    let pad = (g.k / 2) as isize;
    let mut out = vec![T::zero(); g.h * g.w * g.cin];
    for i in 0..g.h {
        for j in 0..g.w {
            let base = (i * g.w + j) * row;
            for di in 0..g.k {
                let si = i as isize + di as isize - pad;
                if si < 0 || si >= g.h as isize {
                    continue;
                }
                for dj in 0..g.k {
                    let sj = j as isize + dj as isize - pad;
                    if sj < 0 || sj >= g.w as isize {
                        continue;
                    }
                    let dst = (si as usize * g.w + sj as usize) * g.cin;
                    let src = base + (di * g.k + dj) * g.cin;
                    for c in 0..g.cin {
                        out[dst + c] += cols[src + c];
                    }
                }
            }
        }
    }
    out
}

/// `out[i,j,c] = bias[c] + Σ input·filter` over the K×K×Cin window centred on
/// `(i, j)`, zero-padded so spatial extents are preserved.
pub fn conv2d<T: Scalar>(input: &Tensor<T>, filters: &Tensor<T>, bias: &[T]) -> Result<Tensor<T>> {
    let g = geometry(input, filters)?;
    if bias.len() != g.cout {
        return shape_err(format!("bias has {} entries, filters have {} outputs", bias.len(), g.cout));
    }
    let pixels = g.h * g.w;
    let mut out = Vec::with_capacity(pixels * g.cout);
    for _ in 0..pixels {
        out.extend_from_slice(bias);
    }
    let row = g.k * g.k * g.cin;
    let owned;
    let cols: &[T] = if g.k == 1 {
        input.data()
    } else {
        owned = im2col(input.data(), &g);
        &owned
    };
    gemm(pixels, row, g.cout, cols, Layout::Normal, filters.data(), Layout::Normal, &mut out, true);
    debug_check_finite(
        "conv2d",
        all_finite(input.data()) && all_finite(filters.data()) && all_finite(bias),
        &out,
    );
    Tensor::new(&[g.h, g.w, g.cout], out)
}

/// Exact gradients of [`conv2d`] given the upstream gradient and the forward operands.
pub fn conv2d_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    filters: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let mut gw = vec![T::zero(); filters.len()];
    let (_, _, _, cout) = filter_dims(filters)?;
    let mut gb = vec![T::zero(); cout];
    let gi = conv2d_backward_select(grad_out, input, filters, &mut gw, &mut gb, true)?
        .expect("input gradient requested");
    Ok(ConvGrads {
        input: gi,
        filters: Tensor::new(filters.shape(), gw)?,
        bias: gb,
    })
}

fn filter_dims<T: Scalar>(filters: &Tensor<T>) -> Result<(usize, usize, usize, usize)> {
    match *filters.shape() {
        [a, b, c, d] => Ok((a, b, c, d)),
        _ => shape_err(format!("filters must be [K, K, Cin, Cout], got {:?}", filters.shape())),
    }
}

/// Accumulates filter and bias gradients into `grad_filters` / `grad_bias`
/// and returns the input gradient when `need_input` is set.
pub(crate) fn conv2d_backward_select<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    filters: &Tensor<T>,
    grad_filters: &mut [T],
    grad_bias: &mut [T],
    need_input: bool,
) -> Result<Option<Tensor<T>>> {
    let g = geometry(input, filters)?;
    if grad_out.shape() != [g.h, g.w, g.cout] {
        return shape_err(format!(
            "output gradient {:?} does not match forward output [{}, {}, {}]",
            grad_out.shape(),
            g.h,
            g.w,
            g.cout
        ));
    }
    if grad_filters.len() != filters.len() || grad_bias.len() != g.cout {
        return shape_err("gradient accumulators do not match the filter bank");
    }
    let pixels = g.h * g.w;
    let row = g.k * g.k * g.cin;
    let go = grad_out.data();

    for px in 0..pixels {
        for (b, &v) in grad_bias.iter_mut().zip(&go[px * g.cout..(px + 1) * g.cout]) {
            *b += v;
        }
    }

    let owned;
    let cols: &[T] = if g.k == 1 {
        input.data()
    } else {
        owned = im2col(input.data(), &g);
        &owned
    };
    gemm(row, pixels, g.cout, cols, Layout::Transposed, go, Layout::Normal, grad_filters, true);

    if !need_input {
        return Ok(None);
    }
    let mut grad_cols = vec![T::zero(); pixels * row];
    gemm(pixels, g.cout, row, go, Layout::Normal, filters.data(), Layout::Transposed, &mut grad_cols, false);
    let gi = if g.k == 1 { grad_cols } else { col2im(&grad_cols, &g) };
    Ok(Some(Tensor::new(&[g.h, g.w, g.cin], gi)?))
}
