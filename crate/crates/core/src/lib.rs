//! Part-based weighting aggregation (PWA) of convolutional feature maps
//! for image retrieval.
//!
//! The pipeline, module by module:
//!
//! 1. [`store`]: binary tensor and descriptor files.
//! 2. [`detector`]: pick the channels whose sum-pooled responses vary most
//!    across the database; these are the part detectors.
//! 3. [`aggregation`]: each detector's normalized activation map weights a
//!    sum pooling of all channels; the `N` regional vectors are concatenated.
//! 4. [`postprocess`]: l2-normalization, PCA and whitening.
//! 5. [`retrieval`]: exhaustive cosine ranking and average query expansion.
//! 6. [`evaluation`]: Oxford-protocol average precision and mAP.
//!
//! Batch kernels take an [`Execution`]; build without the default
//! `parallel` feature for a rayon-free sequential library.

pub mod aggregation;
pub mod detector;
pub mod error;
pub mod evaluation;
pub mod exec;
pub mod pipeline;
pub mod postprocess;
pub mod retrieval;
pub mod store;
pub mod synthetic;
pub mod tensor;

pub use aggregation::{
    aggregate_pwa, aggregate_region, compute_weights, PwaParams, RawDescriptor, WeightMap,
};
pub use detector::{fit_channel_stats, select_detectors, sum_pool, ChannelStats, DetectorSet};
pub use error::{Error, ErrorClass, Result};
pub use evaluation::{
    average_precision, mean_average_precision, ApOptions, ApVariant, GroundTruthEntry,
};
pub use exec::Execution;
pub use postprocess::{apply_postprocess, fit_whitening, WhiteningModel};
pub use retrieval::{build_index, search, DescriptorIndex, QueryExpansion, RankedList};
pub use store::DescriptorRecord;
pub use tensor::FeatureMapTensor;
