//! Handcrafted-feature random forest baseline.

mod features;
mod tree;

pub use features::{extract_handcrafted, FeatureConfig, HandcraftedFeatures, HANDCRAFTED_NAMES, N_HANDCRAFTED};
pub use tree::{
    bootstrap_sample, fit_forest, DecisionTree, ForestConfig, ForestError, ForestModel, Node, Split, FOREST_MAGIC,
    FOREST_VERSION,
};
