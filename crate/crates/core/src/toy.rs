//! A small bias-free fully-convolutional network with seeded weights.
//!
//! Layout:
//!
//! ```text
//! image (3,H,W)
//!   conv3x3 3→8, stride 2, pad 1, ReLU        → features (8, ⌈H/2⌉, ⌈W/2⌉)
//!     ├─ conv1x1 8→C                          → aux logits
//!     └─ conv3x3 8→K, stride 2, pad 1, ReLU   → activations (K, ⌈H/4⌉, ⌈W/4⌉)
//!          conv1x1 K→C, bilinear to (H,W)     → main logits
//! ```
//!
//! Weights are drawn from splitmix64 in the order conv1, aux head, conv2,
//! main head, each stored `[out][in][ky][kx]`, mapped to `[-0.5, 0.5)`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::engine::{AblationRequest, EngineDescriptor, EngineError, InferenceEngine, ModelOutput};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::{bilinear_resize, Tensor, NUM_CLASSES};

pub const HIDDEN: usize = 8;
pub const DEFAULT_CHANNELS: usize = 8;
pub const MIN_EXTENT: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyWeights {
    pub classes: usize,
    pub channels: usize,
    /// `[HIDDEN][3][3][3]`
    pub conv1: Vec<f32>,
    /// `[classes][HIDDEN]`
    pub aux_head: Vec<f32>,
    /// `[channels][HIDDEN][3][3]`
    pub conv2: Vec<f32>,
    /// `[classes][channels]`
    pub head: Vec<f32>,
}

impl ToyWeights {
    pub fn from_seed(seed: u64, classes: usize, channels: usize) -> Self {
        let mut rng = SplitMix64::new(seed);
        let mut draw = |n: usize| (0..n).map(|_| rng.next_centered_f32()).collect::<Vec<_>>();
        let conv1 = draw(HIDDEN * 3 * 9);
        let aux_head = draw(classes * HIDDEN);
        let conv2 = draw(channels * HIDDEN * 9);
        let head = draw(classes * channels);
        Self { classes, channels, conv1, aux_head, conv2, head }
    }

    fn validate(&self) -> Result<()> {
        let expect = [
            ("conv1", self.conv1.len(), HIDDEN * 27),
            ("aux_head", self.aux_head.len(), self.classes * HIDDEN),
            ("conv2", self.conv2.len(), self.channels * HIDDEN * 9),
            ("head", self.head.len(), self.classes * self.channels),
        ];
        if self.classes == 0 || self.channels == 0 {
            return Err(Error::Argument("toy model needs at least one class and channel".into()));
        }
        for (name, got, want) in expect {
            if got != want {
                return Err(Error::Shape(format!("{name} has {got} weights, expected {want}")));
            }
        }
        let all = self.conv1.iter().chain(&self.aux_head).chain(&self.conv2).chain(&self.head);
        if all.clone().any(|v| !v.is_finite()) {
            return Err(Error::Argument("toy weights must be finite".into()));
        }
        Ok(())
    }
}

/// The toy network as an [`InferenceEngine`].
#[derive(Debug, Clone)]
pub struct ToyFcn {
    weights: ToyWeights,
    name: String,
}

impl ToyFcn {
    /// Seven classes, eight activation channels.
    pub fn from_seed(seed: u64) -> Self {
        Self::with_shape(seed, NUM_CLASSES, DEFAULT_CHANNELS)
    }

    pub fn with_shape(seed: u64, classes: usize, channels: usize) -> Self {
        let weights = ToyWeights::from_seed(seed, classes, channels);
        Self { weights, name: format!("toy:{seed}") }
    }

    pub fn from_weights(weights: ToyWeights) -> Result<Self> {
        weights.validate()?;
        Ok(Self { weights, name: String::from("toy:custom") })
    }

    pub fn weights(&self) -> &ToyWeights {
        &self.weights
    }

    fn run(&self, image: &Tensor, ablation: &AblationRequest) -> Result<ModelOutput, EngineError> {
        let (c, h, w) = image.dims();
        if image.rank() != 3 || c != 3 {
            return Err(EngineError::Contract(format!("expected a 3xHxW image, got {:?}", image.shape())));
        }
        if h < MIN_EXTENT || w < MIN_EXTENT {
            return Err(EngineError::Contract(format!("toy model needs H,W >= {MIN_EXTENT}")));
        }
        if let Some(&k) = ablation.channels().iter().find(|&&k| k >= self.weights.channels) {
            return Err(EngineError::Contract(format!("ablated channel {k} out of range")));
        }
        let wt = &self.weights;
        let (features, h1, w1) = conv3x3_s2_relu(image.data(), 3, h, w, &wt.conv1, HIDDEN);
        let aux = conv1x1(&features, HIDDEN, h1 * w1, &wt.aux_head, wt.classes, |_| false);
        let (acts, h2, w2) = conv3x3_s2_relu(&features, HIDDEN, h1, w1, &wt.conv2, wt.channels);
        let head = conv1x1(&acts, wt.channels, h2 * w2, &wt.head, wt.classes, |k| ablation.contains(k));

        let wrap = |data, ch, hh, ww| {
            Tensor::new(vec![ch, hh, ww], data).map_err(|e| EngineError::Remote(format!("{e}")))
        };
        let head = wrap(head, wt.classes, h2, w2)?;
        let main = bilinear_resize(&head, h, w).map_err(|e| EngineError::Remote(format!("{e}")))?;
        let output = ModelOutput {
            main,
            aux: wrap(aux, wt.classes, h1, w1)?,
            activations: wrap(acts, wt.channels, h2, w2)?,
        };
        Ok(output)
    }
}

impl InferenceEngine for ToyFcn {
    fn descriptor(&self) -> EngineDescriptor {
        EngineDescriptor {
            classes: self.weights.classes,
            channels: self.weights.channels,
            name: self.name.clone(),
        }
    }

    fn forward_ablated(
        &self,
        image: &Tensor,
        ablation: &AblationRequest,
    ) -> Result<ModelOutput, EngineError> {
        self.run(image, ablation)
    }
}

/// One forward pass of the seeded seven-class toy network.
pub fn toy_fcn_forward(image: &Tensor, seed: u64) -> Result<ModelOutput, EngineError> {
    ToyFcn::from_seed(seed).forward(image)
}

fn conv3x3_s2_relu(
    input: &[f32],
    in_ch: usize,
    h: usize,
    w: usize,
    weights: &[f32],
    out_ch: usize,
) -> (Vec<f32>, usize, usize) {
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = vec![0.0f32; out_ch * oh * ow];
    for o in 0..out_ch {
        for y in 0..oh {
            for x in 0..ow {
                let mut acc = 0.0f32;
                for i in 0..in_ch {
                    for ky in 0..3 {
                        let sy = (2 * y + ky) as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for kx in 0..3 {
                            let sx = (2 * x + kx) as isize - 1;
                            if sx < 0 || sx >= w as isize {
                                continue;
                            }
                            let v = input[(i * h + sy as usize) * w + sx as usize];
                            acc += weights[((o * in_ch + i) * 3 + ky) * 3 + kx] * v;
                        }
                    }
                }
                out[(o * oh + y) * ow + x] = acc.max(0.0);
            }
        }
    }
    (out, oh, ow)
}

fn conv1x1(
    input: &[f32],
    in_ch: usize,
    hw: usize,
    weights: &[f32],
    out_ch: usize,
    skip: impl Fn(usize) -> bool,
) -> Vec<f32> {
    let mut out = vec![0.0f32; out_ch * hw];
    for o in 0..out_ch {
        for p in 0..hw {
            let mut acc = 0.0f32;
            for i in 0..in_ch {
                if !skip(i) {
                    acc += weights[o * in_ch + i] * input[i * hw + p];
                }
            }
            out[o * hw + p] = acc;
        }
    }
    out
}
