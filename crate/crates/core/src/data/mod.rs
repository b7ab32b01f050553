//! Schemas, datasets, encoding and synthetic generators.

mod dataset;
mod encode;
mod schema;
mod synth;

pub use dataset::{split_indices, Dataset, Label};
pub use encode::{lower_median, median_absolute_deviation, positive_point, ColumnStats, Encoder, SCALE_FLOOR};
pub use schema::{Attribute, AttributeKind, Schema};
pub use synth::{
    solve_uplift, synth_aux_confounded, synth_causal, synth_classification, synth_mixed, CausalConfig,
    ClassificationConfig, GroundTruth,
};
