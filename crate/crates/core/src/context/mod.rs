//! Context modules, model profiles and seeded weights.

mod modules;
mod profile;
mod weights;

pub use modules::*;
pub use profile::Profile;
pub use weights::{
    ChannelContextWeights, DepthRbWeights, EmbeddingWeights, EntropyParamWeights, GlobalContextWeights,
    HyperWeights, LocalContextWeights, LrpWeights, ModelWeights, TransformWeights,
};
