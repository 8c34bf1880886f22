//! Unified evaluation of classification, detection and segmentation models:
//! matching, an empirical distribution over evaluation records, confusion
//! style matrices, problematic-subset mining and grid layouts.

pub mod data;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod matcher;
pub mod matrix;
pub mod metrics;
pub mod ordering;
pub mod prob;
pub mod record;
pub mod subsets;
pub mod synth;

pub use data::{ingest_bytes, ingest_dataset, ClassHierarchy, ClassId, Dataset, FeatureTable, IngestOptions, Task};
pub use error::{Error, Result};
pub use geometry::{BBox, Rle};
pub use matcher::{match_dataset, MatchingConfig};
pub use matrix::{build_matrix, Matrix, MatrixMode, MatrixSpec, Normalization};
pub use prob::{DistributionQuery, RecordStore};
pub use record::{EvaluationRecord, RecordSet, RecordsMeta};
