use super::{Scalar, Tensor};
use crate::error::{shape_err, Result};

/// Winning input position of every pooled output, kept for the backward pass.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolIndices {
    input_shape: [usize; 3],
    argmax: Vec<u32>,
}

impl PoolIndices {
    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    /// Flat input offset chosen for each output element.
    pub fn argmax(&self) -> &[u32] {
        &self.argmax
    }
}

/// Non-overlapping N×N max pooling with stride N. Border windows may be
/// partial, so the output is `ceil(H/N) × ceil(W/N)`. Ties resolve to the first
/// position in row-major window order.
pub fn maxpool2d<T: Scalar>(input: &Tensor<T>, n: usize) -> Result<(Tensor<T>, PoolIndices)> {
    let (h, w, c) = input.hwc()?;
    if n == 0 {
        return shape_err("pool size must be at least 1");
    }
    if input.len() > u32::MAX as usize {
        return shape_err("tensor too large to pool");
    }
    let (oh, ow) = (h.div_ceil(n), w.div_ceil(n));
    let x = input.data();
    let mut out = vec![T::zero(); oh * ow * c];
    let mut argmax = vec![0u32; oh * ow * c];
    for oi in 0..oh {
        let rows = oi * n..((oi + 1) * n).min(h);
        for oj in 0..ow {
            let cols = oj * n..((oj + 1) * n).min(w);
            for ch in 0..c {
                let mut best = (rows.start * w + cols.start) * c + ch;
                for i in rows.clone() {
                    for j in cols.clone() {
                        let idx = (i * w + j) * c + ch;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                let o = (oi * ow + oj) * c + ch;
                out[o] = x[best];
                argmax[o] = best as u32;
            }
        }
    }
    Ok((
        Tensor::new(&[oh, ow, c], out)?,
        PoolIndices {
            input_shape: [h, w, c],
            argmax,
        },
    ))
}

/// Route each output gradient to the input position that won the forward max.
pub fn maxpool2d_backward<T: Scalar>(grad_out: &Tensor<T>, indices: &PoolIndices) -> Result<Tensor<T>> {
    if grad_out.len() != indices.argmax.len() {
        return shape_err(format!(
            "pool gradient has {} elements, forward produced {}",
            grad_out.len(),
            indices.argmax.len()
        ));
    }
    let mut gi = Tensor::zeros(&indices.input_shape);
    let buf = gi.data_mut();
    for (&g, &idx) in grad_out.data().iter().zip(&indices.argmax) {
        buf[idx as usize] += g;
    }
    Ok(gi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_window_takes_the_max() {
        let x = Tensor::<f64>::new(&[2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, idx) = maxpool2d(&x, 2).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.data(), &[4.0]);
        let g = maxpool2d_backward(&Tensor::full(&[1, 1, 1], 2.5), &idx).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 0.0, 2.5]);
    }

    #[test]
    fn partial_windows_use_ceil_sizing() {
        let x = Tensor::<f32>::from_fn(&[5, 3, 2], |i| i as f32);
        let (y, _) = maxpool2d(&x, 2).unwrap();
        assert_eq!(y.shape(), &[3, 2, 2]);
        // Bottom-right partial window holds only input (4, 2).
        assert_eq!(y.at3(2, 1, 1), x.at3(4, 2, 1));
    }

    #[test]
    fn pool_of_one_is_identity() {
        let x = Tensor::<f64>::from_fn(&[3, 4, 2], |i| (i as f64).sin());
        let (y, _) = maxpool2d(&x, 1).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn constant_input_stays_constant() {
        let x = Tensor::<f64>::full(&[6, 7, 3], -1.25);
        let (y, idx) = maxpool2d(&x, 3).unwrap();
        assert!(y.data().iter().all(|&v| v == -1.25));
        // Ties go to the first element of each window.
        assert_eq!(idx.argmax()[0], 0);
    }

    #[test]
    fn zero_cotangent_routes_nothing() {
        let x = Tensor::<f64>::from_fn(&[4, 4, 1], |i| i as f64);
        let (y, idx) = maxpool2d(&x, 2).unwrap();
        let g = maxpool2d_backward(&Tensor::<f64>::zeros(y.shape()), &idx).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }
}
