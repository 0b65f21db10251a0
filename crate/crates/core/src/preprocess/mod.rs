//! From raw object samples to normalized, padded, masked network input.
//! Also owns the dataset file format and the track-wise split.

mod features;
mod io;
mod split;
mod types;

pub use features::{
    build_feature_vector, compute_norm_stats, pad_and_mask, sample_feature_rows, to_object_frame, truncation_warnings,
    NormStats, PaddedInput, FEATURE_NAMES, N_FEATURES, STD_FLOOR,
};
pub use io::{read_dataset, read_dataset_from, write_dataset, write_dataset_to, DatasetError};
pub use split::{trackwise_split, SplitRatios, Splits};
pub use types::{apply_range_cutoff, ObjectClass, ObjectPose, ObjectSample, Reflection, MAX_RANGE_M};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PreprocessError {
    #[error("no reflections to compute normalization statistics from")]
    EmptyTrainingSet,
    #[error("cannot pad an empty reflection list")]
    NoRows,
    #[error("class {class} has {found} tracks, at least {needed} are required for a three-way split")]
    TooFewTracks {
        class: ObjectClass,
        found: usize,
        needed: usize,
    },
}
