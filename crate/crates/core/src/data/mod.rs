//! Expression and network ingestion, binning, labeled splits and synthetic
//! data.

mod binning;
mod expression;
mod network;
mod splits;
mod synth;
mod vocab;

pub use binning::{bin_expression, BinnedMatrix};
pub use expression::{load_expression, parse_expression, ExpressionMatrix, Orientation};
pub use network::{
    load_network, network_density, node_types, parse_network, Edge, NetworkLoadReport, NodeType, PriorNetwork, Relation,
};
pub use splits::{
    make_splits, parse_splits, LabeledPair, LabeledSplits, SamplingPlan, Split, TRAIN_FRACTION,
    VALIDATION_FRACTION,
};
pub use synth::{synth_generate, SynthConfig};
pub use vocab::{parse_tf_list, GeneVocabulary};

pub(crate) use expression::csv_error;
