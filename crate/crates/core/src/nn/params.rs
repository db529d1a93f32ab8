use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::layers::BatchNormParams;
use super::spec::{ArchitectureSpec, LayerKind};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Learned state of one conv or FCL layer.
///
/// Conv weights are `[K, K, Cin, Cout]`, FCL weights `[in, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T> {
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
    pub bn: Option<BatchNormParams<T>>,
}

/// Parameters of every layer in [`ArchitectureSpec::layers`] order; pooling
/// layers hold `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters<T> {
    pub layers: Vec<Option<LayerParams<T>>>,
}

/// Whether a trainable array is subject to weight decay.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamRole {
    Weight,
    Bias,
    BnScale,
    BnShift,
}

impl ParamRole {
    pub fn decayed(self) -> bool {
        self == ParamRole::Weight
    }
}

fn weight_shape(kind: LayerKind, cin: usize) -> Option<Vec<usize>> {
    match kind {
        LayerKind::Conv { filter, channels } => Some(vec![filter, filter, cin, channels]),
        LayerKind::Fcl { width } => Some(vec![cin, width]),
        LayerKind::MaxPool { .. } => None,
    }
}

impl<T: Scalar> Parameters<T> {
    /// He-normal weights (σ = √(2 / fan_in)), zero biases, identity batch norm.
    pub fn init(spec: &ArchitectureSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = spec
            .layers()
            .zip(spec.layer_inputs())
            .map(|(l, cin)| {
                weight_shape(l.kind, cin).map(|shape| {
                    let fan_in: usize = shape[..shape.len() - 1].iter().product();
                    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive σ");
                    let weight = Tensor::from_fn(&shape, |_| T::of(normal.sample(&mut rng)));
                    let out = *shape.last().expect("non-empty");
                    LayerParams {
                        weight,
                        bias: vec![T::zero(); out],
                        bn: l.batch_norm.then(|| BatchNormParams::new(out)),
                    }
                })
            })
            .collect();
        Ok(Self { layers })
    }

    /// Check that every array has the shape `spec` implies.
    pub fn check(&self, spec: &ArchitectureSpec) -> Result<()> {
        if self.layers.len() != spec.layer_count() {
            return Err(Error::Shape(format!(
                "{} parameter slots for {} layers",
                self.layers.len(),
                spec.layer_count()
            )));
        }
        for ((l, cin), p) in spec.layers().zip(spec.layer_inputs()).zip(&self.layers) {
            match (weight_shape(l.kind, cin), p) {
                (None, None) => {}
                (Some(shape), Some(p)) => {
                    let out = *shape.last().expect("non-empty");
                    let bn_ok = match &p.bn {
                        Some(bn) => {
                            l.batch_norm
                                && [&bn.scale, &bn.shift, &bn.running_mean, &bn.running_var]
                                    .iter()
                                    .all(|v| v.len() == out)
                        }
                        None => !l.batch_norm,
                    };
                    if p.weight.shape() != shape.as_slice() || p.bias.len() != out || !bn_ok {
                        return Err(Error::Shape(format!("{}: parameter shapes do not match", l.name)));
                    }
                }
                _ => return Err(Error::Shape(format!("{}: parameter slot mismatch", l.name))),
            }
        }
        Ok(())
    }

    pub fn shared<'a>(&'a self, spec: &ArchitectureSpec) -> &'a [Option<LayerParams<T>>] {
        &self.layers[..spec.shared.len()]
    }

    pub fn head<'a>(&'a self, spec: &ArchitectureSpec) -> &'a [Option<LayerParams<T>>] {
        &self.layers[spec.shared.len()..]
    }

    /// `Σ‖W‖²` over conv filters and FCL matrices.
    pub fn weight_sq_norm(&self) -> f64 {
        self.layers
            .iter()
            .flatten()
            .map(|p| p.weight.data().iter().map(|w| w.to_f64_lossy().powi(2)).sum::<f64>())
            .sum()
    }

    /// Trainable arrays in a fixed order: per layer weight, bias, bn scale, bn shift.
    pub fn trainable_mut(&mut self) -> Vec<(ParamRole, &mut [T])> {
        let mut out = Vec::new();
        for p in self.layers.iter_mut().flatten() {
            out.push((ParamRole::Weight, p.weight.data_mut()));
            out.push((ParamRole::Bias, p.bias.as_mut_slice()));
            if let Some(bn) = &mut p.bn {
                out.push((ParamRole::BnScale, bn.scale.as_mut_slice()));
                out.push((ParamRole::BnShift, bn.shift.as_mut_slice()));
            }
        }
        out
    }

    /// Lengths of the arrays returned by [`Self::trainable_mut`], in order.
    pub fn trainable_lens(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for p in self.layers.iter().flatten() {
            out.push(p.weight.len());
            out.push(p.bias.len());
            if let Some(bn) = &p.bn {
                out.push(bn.channels());
                out.push(bn.channels());
            }
        }
        out
    }

    pub fn cast<U: Scalar>(&self) -> Parameters<U> {
        Parameters {
            layers: self
                .layers
                .iter()
                .map(|p| {
                    p.as_ref().map(|p| LayerParams {
                        weight: p.weight.cast(),
                        bias: p.bias.iter().map(|&b| U::of(b.to_f64_lossy())).collect(),
                        bn: p.bn.as_ref().map(|bn| bn.cast()),
                    })
                })
                .collect(),
        }
    }
}

/// Gradient of the loss with respect to one layer's trainable arrays.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads<T> {
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
    pub bn_scale: Vec<T>,
    pub bn_shift: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<Option<LayerGrads<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(params: &Parameters<T>) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|p| {
                    p.as_ref().map(|p| LayerGrads {
                        weight: Tensor::zeros(p.weight.shape()),
                        bias: vec![T::zero(); p.bias.len()],
                        bn_scale: p.bn.as_ref().map_or(Vec::new(), |b| vec![T::zero(); b.channels()]),
                        bn_shift: p.bn.as_ref().map_or(Vec::new(), |b| vec![T::zero(); b.channels()]),
                    })
                })
                .collect(),
        }
    }

    /// Same order as [`Parameters::trainable_mut`].
    pub fn slots(&self) -> Vec<&[T]> {
        let mut out = Vec::new();
        for g in self.layers.iter().flatten() {
            out.push(g.weight.data());
            out.push(g.bias.as_slice());
            if !g.bn_scale.is_empty() {
                out.push(g.bn_scale.as_slice());
                out.push(g.bn_shift.as_slice());
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::spec::LayerSpec;

    fn spec() -> ArchitectureSpec {
        ArchitectureSpec {
            name: "t".into(),
            in_channels: 2,
            n_classes: 3,
            batch_size: 1,
            weight_decay: 0.0,
            pyramid_levels: 2,
            shared: vec![LayerSpec::conv("C0", 3, 4), LayerSpec::maxpool("P0", 2)],
            head: vec![LayerSpec::fcl("F0", 5), LayerSpec::logits("F1", 3)],
        }
    }

    #[test]
    fn shapes_follow_the_spec() {
        let p = Parameters::<f32>::init(&spec(), 1).unwrap();
        p.check(&spec()).unwrap();
        assert_eq!(p.layers[0].as_ref().unwrap().weight.shape(), &[3, 3, 2, 4]);
        assert!(p.layers[1].is_none());
        assert_eq!(p.layers[2].as_ref().unwrap().weight.shape(), &[8, 5]);
        assert!(p.layers[3].as_ref().unwrap().bn.is_none());
    }

    #[test]
    fn init_is_seeded() {
        let a = Parameters::<f32>::init(&spec(), 9).unwrap();
        let b = Parameters::<f32>::init(&spec(), 9).unwrap();
        let c = Parameters::<f32>::init(&spec(), 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn gradient_slots_align_with_parameters() {
        let mut p = Parameters::<f64>::init(&spec(), 1).unwrap();
        let g = Gradients::zeros_like(&p);
        let lens: Vec<usize> = g.slots().iter().map(|s| s.len()).collect();
        let plens: Vec<usize> = p.trainable_mut().iter().map(|(_, s)| s.len()).collect();
        assert_eq!(lens, plens);
    }
}
