//! Training loop, prompted policy execution, and episode rollout.

mod policy;
mod train;

pub use policy::{
    rollout, rollout_fn, temporal_ensemble, EpisodeResult, PolicyState, ENSEMBLE_M,
    RECEDING_HORIZON,
};
pub use train::{build_seq_item, recipe_preset, train, TrainRecipe, TrainSummary};
