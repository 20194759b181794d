//! Synthetic scenes, the toy segmentation pipeline and segmentation metrics.

mod metrics;
mod pipeline;
mod scene;

pub use metrics::{compute_metrics, report_csv, report_text};
pub use pipeline::{
    ablate_m, ablation_csv, compare_aggregators, comparison_csv, run_toy_pipeline, seeded_scenes, AblationRow, AggregatorKind,
    ComparisonRow, StageConfig, ToyPipelineConfig, ToyRunResult,
};
pub use scene::{
    class_color, density_imbalanced_spec, edge_scene, generate_scene, mean_knn_distance_by_label, Primitive,
    RegionSpec, SyntheticSceneSpec,
};
