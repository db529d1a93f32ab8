//! Layers, network descriptions, parameters and stack execution.

pub mod layers;
pub(crate) mod network;
pub mod params;
pub mod spec;

pub use layers::{
    batchnorm, batchnorm_backward, dropout, dropout_backward, relu, relu_backward, residual_add,
    residual_add_backward, softmax_channels, BatchNormParams, BatchStats, BnCache, Mode, BN_EPS,
    BN_MOMENTUM,
};
pub use network::run_network;
pub use params::{Gradients, LayerGrads, LayerParams, ParamRole, Parameters};
pub use spec::{count_parameters, Activation, ArchitectureSpec, LayerKind, LayerSpec};
