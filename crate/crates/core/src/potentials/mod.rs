//! Neural potential functions.

mod mlp;
mod seq;

pub use mlp::{classifier_logits, mlp_hidden, mlp_potential, Activation, ClassifierNet, MlpBody, MlpPotential};
pub use seq::{
    for_length_groups, group_by_length, seq_features, seq_potential_pretrain, Encoded, SeqEncoder, SeqEncoderConfig,
    SeqFeatures,
};
