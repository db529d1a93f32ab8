use super::{Scalar, Tensor};
use crate::error::{shape_err, Result};

#[inline]
pub(crate) fn source_index(dst: usize, src_len: usize, dst_len: usize) -> usize {
    dst * src_len / dst_len
}

/// Nearest-neighbour enlargement: `out[i, j] = input[⌊i·h/H⌋, ⌊j·w/W⌋]`.
pub fn upsample_nearest<T: Scalar>(input: &Tensor<T>, target: (usize, usize)) -> Result<Tensor<T>> {
    let (h, w, c) = input.hwc()?;
    let (th, tw) = target;
    if th < h || tw < w {
        return shape_err(format!("cannot upsample {h}x{w} to smaller {th}x{tw}"));
    }
    if (th, tw) == (h, w) {
        return Ok(input.clone());
    }
    let x = input.data();
    let mut out = Vec::with_capacity(th * tw * c);
    for i in 0..th {
        let si = source_index(i, h, th);
        for j in 0..tw {
            let sj = source_index(j, w, tw);
            let src = (si * w + sj) * c;
            out.extend_from_slice(&x[src..src + c]);
        }
    }
    Tensor::new(&[th, tw, c], out)
}

/// Adjoint of [`upsample_nearest`]: sums the gradient of every replicated cell
/// back onto its source pixel.
pub fn upsample_nearest_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    source: (usize, usize),
) -> Result<Tensor<T>> {
    let (th, tw, c) = grad_out.hwc()?;
    let (h, w) = source;
    if th < h || tw < w || h == 0 || w == 0 {
        return shape_err(format!("{h}x{w} is not a valid upsampling source for {th}x{tw}"));
    }
    if (th, tw) == (h, w) {
        return Ok(grad_out.clone());
    }
    let g = grad_out.data();
    let mut out = vec![T::zero(); h * w * c];
    for i in 0..th {
        let si = source_index(i, h, th);
        for j in 0..tw {
            let sj = source_index(j, w, tw);
            let src = (i * tw + j) * c;
            let dst = (si * w + sj) * c;
            for (o, &v) in out[dst..dst + c].iter_mut().zip(&g[src..src + c]) {
                *o += v;
            }
        }
    }
    Tensor::new(&[h, w, c], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_extent_is_identity() {
        let x = Tensor::<f64>::from_fn(&[3, 5, 2], |i| i as f64);
        assert_eq!(upsample_nearest(&x, (3, 5)).unwrap(), x);
    }

    #[test]
    fn single_pixel_fills_target() {
        let x = Tensor::<f64>::new(&[1, 1, 1], vec![7.0]).unwrap();
        let y = upsample_nearest(&x, (4, 4)).unwrap();
        assert!(y.data().iter().all(|&v| v == 7.0));
        let g = upsample_nearest_backward(&Tensor::full(&[4, 4, 1], 1.0), (1, 1)).unwrap();
        assert_eq!(g.data(), &[16.0]);
    }

    #[test]
    fn two_to_four_replicates_blocks() {
        let x = Tensor::<f64>::new(&[2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = upsample_nearest(&x, (4, 4)).unwrap();
        #[rustfmt::skip]
        let expect = [
            1.0, 1.0, 2.0, 2.0,
            1.0, 1.0, 2.0, 2.0,
            3.0, 3.0, 4.0, 4.0,
            3.0, 3.0, 4.0, 4.0,
        ];
        assert_eq!(y.data(), &expect);
    }

    #[test]
    fn shrinking_is_rejected() {
        let x = Tensor::<f32>::zeros(&[4, 4, 1]);
        assert!(upsample_nearest(&x, (2, 4)).is_err());
    }
}
