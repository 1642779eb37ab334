//! The inference contract every pipeline stage is written against.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One forward pass: main logits at input resolution, auxiliary logits at any
/// resolution and the final backbone activations the CAMs are built from.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    pub main: Tensor,
    pub aux: Tensor,
    pub activations: Tensor,
}

impl ModelOutput {
    pub fn new(main: Tensor, aux: Tensor, activations: Tensor) -> Result<Self> {
        if main.rank() != 3 || aux.rank() != 3 || activations.rank() != 3 {
            return Err(Error::Contract("model outputs must be rank 3".into()));
        }
        if main.dims().0 != aux.dims().0 {
            return Err(Error::Contract(format!(
                "main has {} classes, aux has {}",
                main.dims().0,
                aux.dims().0
            )));
        }
        Ok(Self { main, aux, activations })
    }

    /// Checks the output against a descriptor and the image it came from.
    pub fn check(&self, descriptor: &EngineDescriptor, image: &Tensor) -> Result<(), EngineError> {
        let (c, h, w) = self.main.dims();
        let (_, ih, iw) = image.dims();
        let (ca, _, _) = self.aux.dims();
        let (k, _, _) = self.activations.dims();
        if c != descriptor.classes || ca != descriptor.classes {
            return Err(EngineError::Contract(format!(
                "expected {} classes, got main {c} aux {ca}",
                descriptor.classes
            )));
        }
        if k != descriptor.channels {
            return Err(EngineError::Contract(format!(
                "expected {} activation channels, got {k}",
                descriptor.channels
            )));
        }
        if (h, w) != (ih, iw) {
            return Err(EngineError::Contract(format!(
                "main logits are {h}x{w}, image is {ih}x{iw}"
            )));
        }
        Ok(())
    }
}

/// Activation channels to zero before the classification head.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct AblationRequest {
    channels: Vec<usize>,
}

impl AblationRequest {
    /// Validates ids against `channel_count`; the stored order is ascending.
    pub fn new(ids: impl IntoIterator<Item = usize>, channel_count: usize) -> Result<Self> {
        let mut channels: Vec<usize> = ids.into_iter().collect();
        channels.sort_unstable();
        if channels.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Argument("duplicate channel in ablation request".into()));
        }
        if let Some(&c) = channels.iter().find(|&&c| c >= channel_count) {
            return Err(Error::Argument(format!(
                "channel {c} out of range for {channel_count} channels"
            )));
        }
        Ok(Self { channels })
    }

    pub fn single(channel: usize) -> Self {
        Self { channels: alloc::vec![channel] }
    }

    pub fn none() -> Self {
        Self::default()
    }

    pub fn channels(&self) -> &[usize] {
        &self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn contains(&self, channel: usize) -> bool {
        self.channels.binary_search(&channel).is_ok()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EngineDescriptor {
    pub classes: usize,
    pub channels: usize,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EngineError {
    /// Malformed bytes on the wire.
    Transport(String),
    /// The engine process went away.
    Lost(String),
    /// Output inconsistent with the engine descriptor or the request.
    Contract(String),
    /// The engine reported a failure for this request.
    Remote(String),
}

impl fmt::Display for EngineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EngineError::Transport(m) => write!(f, "transport error: {m}"),
            EngineError::Lost(m) => write!(f, "engine lost: {m}"),
            EngineError::Contract(m) => write!(f, "contract violation: {m}"),
            EngineError::Remote(m) => write!(f, "engine failure: {m}"),
        }
    }
}

impl core::error::Error for EngineError {}

/// A segmentation model that can run plain and channel-ablated forward passes.
///
/// `forward` must be deterministic, and `forward_ablated` with an empty
/// request must equal `forward`. Implementations only need to support
/// serialized calls.
pub trait InferenceEngine {
    fn descriptor(&self) -> EngineDescriptor;

    fn forward_ablated(
        &self,
        image: &Tensor,
        ablation: &AblationRequest,
    ) -> Result<ModelOutput, EngineError>;

    fn forward(&self, image: &Tensor) -> Result<ModelOutput, EngineError> {
        self.forward_ablated(image, &AblationRequest::none())
    }
}

macro_rules! forward_impl {
    ($($ptr:ty),*) => {$(
        impl<E: InferenceEngine + ?Sized> InferenceEngine for $ptr {
            fn descriptor(&self) -> EngineDescriptor {
                (**self).descriptor()
            }
            fn forward_ablated(
                &self,
                image: &Tensor,
                ablation: &AblationRequest,
            ) -> Result<ModelOutput, EngineError> {
                (**self).forward_ablated(image, ablation)
            }
            fn forward(&self, image: &Tensor) -> Result<ModelOutput, EngineError> {
                (**self).forward(image)
            }
        }
    )*};
}

forward_impl!(&E, Box<E>, Arc<E>);
