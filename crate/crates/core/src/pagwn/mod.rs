//! The pre-abstraction group-wise window-normalization block and the
//! shared-MLP baselines it is compared against.
//!
//! Per center the block computes
//!
//! ```text
//! rows = LB2([ LB1(GWN([c_j, x_j])) , x_center ])      K x 2n
//! out  = ReLU(max over rows)                             2n
//! ```
//!
//! where each LB is a linear layer followed by batch normalization and GWN
//! is the grouped window normalization from [`crate::norm`].

mod baseline;
mod block;
mod checkpoint;
mod layers;

pub use baseline::{
    aggregate_bq_at, aggregate_bq_baseline, aggregate_knn_baseline, mlp_maxpool_backward, mlp_maxpool_forward,
    BaselineOutput, MlpGradients, MlpLayer, MlpLayerGradient, MlpParams, MlpPoolCache,
};
pub use block::{
    pagwn_backward, pagwn_forward, pagwn_forward_batch, pre_abstract, InputGradient, PagwnCache, PagwnConfig,
    PagwnGradients, PagwnInput, PagwnOutput,
};
pub use checkpoint::{
    inputs_from_tensors, inputs_to_tensors, mlp_params_from_tensors, mlp_params_to_tensors, pagwn_params_from_tensors,
    pagwn_params_to_tensors,
};
