//! Numerical core for evaluating precision-spraying systems from
//! segmentation-model outputs.
//!
//! Everything in this crate is `no_std` (with `alloc`) and free of IO: the
//! tensor kernels, the inference contract and a built-in toy network, output
//! fusion, gradient-free class activation maps, Deletion/Insertion
//! faithfulness, segmentation metrics and the deposition-estimation chain.
//! File formats, the external model protocol and the command line live in the
//! `sprayeval` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod cam;
pub mod engine;
pub mod error;
pub mod faithfulness;
pub mod fusion;
pub mod segmetrics;
pub mod tensor;
pub mod toy;
pub mod wsde;

mod rng;

pub use cam::{ablation_cam, score_cam, target_score, Cam, CamMethod, TargetRegion};
pub use engine::{AblationRequest, EngineDescriptor, EngineError, InferenceEngine, ModelOutput};
pub use error::{Error, Result};
pub use faithfulness::{
    auc, class_averaged_scores, deletion_curve, insertion_curve, morf_order, ClassAverage,
    CurveKind, FaithfulnessCurve, MorfOrder,
};
pub use fusion::{fuse, Fusion, FusionMode, FusionSpace};
pub use rng::SplitMix64;
pub use segmetrics::ConfusionTally;
pub use tensor::{
    argmax_mask, bilinear_resize, minmax_normalize, percentile, softmax_channels, ClassTable,
    LabelMask, Tensor, NUM_CLASSES,
};
pub use toy::{toy_fcn_forward, ToyFcn, ToyWeights};
