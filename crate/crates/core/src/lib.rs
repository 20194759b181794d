//! Point cloud downsampling with group-wise window normalization.
//!
//! The crate covers the full downsampling stage of a hierarchical point
//! network: farthest point sampling, exact KNN and ball-query grouping,
//! window normalization of each neighborhood, and the pre-abstraction
//! aggregation block with forward and backward passes. A small synthetic
//! segmentation harness and the usual mIoU / mAcc / OA metrics sit on top.

// `!(x > 0.0)` style checks reject NaN on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod eval;
pub mod io;
pub mod norm;
pub mod pagwn;
pub mod sampling;
pub mod spatial;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    validate_cloud, BatchNormState, BnMode, MetricsReport, Neighborhood, PagwnParams, Point3, PointCloud, WindowStats,
};
