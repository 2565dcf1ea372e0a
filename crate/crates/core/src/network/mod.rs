//! Feature extraction, feature correlation and depth-pdf estimation.
//!
//! A pair of plane-sweep volumes `[D, 3, S, S]` flows through three stacks:
//! every plane is mapped to features by the shared extractor, the two
//! feature maps of each plane are concatenated and scored by the correlator,
//! and the head reads the scores of all planes at once to produce the depth
//! pdf, the two confidence maps and the occlusion logit.

mod arch;
mod layers;
mod net;

pub use arch::{ArchConfig, LayerSpec, CORRELATOR_PADDING, EXTRACTOR_PADDING, HEAD_PADDING};
pub use layers::{ConvLayer, ConvStack, StackVars};
pub use net::{DepthInference, DepthNet, INPUT_CENTER, INPUT_SCALE, NetManifest, NetVars, TapeInference, Trainable};
