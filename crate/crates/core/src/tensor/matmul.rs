use super::{gemm, Layout, Scalar, Tensor};
use crate::error::{shape_err, Result};

fn dims2<T: Scalar>(t: &Tensor<T>) -> Result<(usize, usize)> {
    match *t.shape() {
        [r, c] => Ok((r, c)),
        _ => shape_err(format!("expected a matrix, got {:?}", t.shape())),
    }
}

/// Matrix product of `[m, k]` and `[k, n]`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = dims2(a)?;
    let (k2, n) = dims2(b)?;
    if k != k2 {
        return shape_err(format!("cannot multiply [{m}, {k}] by [{k2}, {n}]"));
    }
    let mut out = vec![T::zero(); m * n];
    gemm(m, k, n, a.data(), Layout::Normal, b.data(), Layout::Normal, &mut out, false);
    Tensor::new(&[m, n], out)
}

/// `(grad_out·Bᵀ, Aᵀ·grad_out)`.
pub fn matmul_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    a: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (m, k) = dims2(a)?;
    let (_, n) = dims2(b)?;
    if grad_out.shape() != [m, n] {
        return shape_err(format!("gradient {:?} does not match [{m}, {n}]", grad_out.shape()));
    }
    let mut ga = vec![T::zero(); m * k];
    gemm(m, n, k, grad_out.data(), Layout::Normal, b.data(), Layout::Transposed, &mut ga, false);
    let mut gb = vec![T::zero(); k * n];
    gemm(k, m, n, a.data(), Layout::Transposed, grad_out.data(), Layout::Normal, &mut gb, false);
    Ok((Tensor::new(&[m, k], ga)?, Tensor::new(&[k, n], gb)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_product() {
        let a = Tensor::<f64>::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::new(&[2, 1], vec![1.0, 1.0]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[3.0, 7.0]);
    }

    #[test]
    fn identity_leaves_operand() {
        let a = Tensor::<f64>::from_fn(&[3, 3], |i| i as f64 - 4.0);
        let eye = Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        assert_eq!(matmul(&a, &eye).unwrap(), a);
        assert_eq!(matmul(&eye, &a).unwrap(), a);
    }

    #[test]
    fn inner_mismatch_is_rejected() {
        let a = Tensor::<f32>::zeros(&[2, 3]);
        assert!(matmul(&a, &a).is_err());
    }
}
