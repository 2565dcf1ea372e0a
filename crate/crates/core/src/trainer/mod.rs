//! Pair policies and the two-phase training loop.
//!
//! Each iteration draws a minibatch of target views, records every view on
//! its own tape (all of its pairs, fusion and the L1 loss), sums the
//! gradients in minibatch order and takes one Adam step. A configurable
//! share of each minibatch repeats views of the previous one with depth
//! levels resampled from their fused pdfs.

mod pairs;
mod toy;
mod train;

pub use pairs::{build_pairs, PairPolicy};
pub use toy::ToyRecipe;
pub use train::{
    forward_backward, phase_two_from, schedule_defaults, train_phase, FullScaleSchedule, IterationRecord, ItemResult,
    Phase, SampleList, SampleSource, SceneStream, TrainConfig, TrainItem, TrainReport, FULL_SCALE,
};
