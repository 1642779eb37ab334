//! Inference-only fusion of the main and auxiliary class-score maps.

use alloc::format;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{bilinear_resize, softmax_channels, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FusionMode {
    /// Main head only (baseline).
    Out,
    /// Auxiliary head only.
    Aux,
    /// Class-wise sum of main and auxiliary scores.
    Add,
    /// Class-wise product of main and auxiliary scores.
    Multi,
}

/// Whether fusion combines raw logits or per-pixel class probabilities.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub enum FusionSpace {
    #[default]
    Logit,
    Prob,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Fusion {
    pub mode: FusionMode,
    pub space: FusionSpace,
}

impl From<FusionMode> for Fusion {
    fn from(mode: FusionMode) -> Self {
        Fusion { mode, space: FusionSpace::Logit }
    }
}

impl FusionMode {
    pub const ALL: [FusionMode; 4] = [FusionMode::Out, FusionMode::Aux, FusionMode::Add, FusionMode::Multi];

    pub fn as_str(self) -> &'static str {
        match self {
            FusionMode::Out => "out",
            FusionMode::Aux => "aux",
            FusionMode::Add => "add",
            FusionMode::Multi => "multi",
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "out" => Ok(FusionMode::Out),
            "aux" => Ok(FusionMode::Aux),
            "add" => Ok(FusionMode::Add),
            "multi" => Ok(FusionMode::Multi),
            other => Err(Error::Argument(format!("unknown fusion mode {other:?}"))),
        }
    }
}

impl FusionSpace {
    pub fn as_str(self) -> &'static str {
        match self {
            FusionSpace::Logit => "logit",
            FusionSpace::Prob => "prob",
        }
    }
}

impl fmt::Display for FusionSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionSpace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logit" => Ok(FusionSpace::Logit),
            "prob" => Ok(FusionSpace::Prob),
            other => Err(Error::Argument(format!("unknown fusion space {other:?}"))),
        }
    }
}

/// Fuses `main (C,H,W)` with `aux (C,Ha,Wa)`; aux is resized to `(H,W)` first.
///
/// In probability space both maps are softmaxed first and the fused
/// probabilities are returned as log-scores, so a downstream softmax recovers
/// the normalized fused distribution and argmax is unaffected.
pub fn fuse(main: &Tensor, aux: &Tensor, fusion: impl Into<Fusion>) -> Result<Tensor> {
    let Fusion { mode, space } = fusion.into();
    if main.rank() != 3 || aux.rank() != 3 {
        return Err(Error::Contract("fusion inputs must be rank 3".into()));
    }
    let (c, h, w) = main.dims();
    if aux.dims().0 != c {
        return Err(Error::Contract(format!(
            "main has {c} classes, aux has {}",
            aux.dims().0
        )));
    }
    if mode == FusionMode::Out && space == FusionSpace::Logit {
        return Ok(main.clone());
    }
    let aux = bilinear_resize(aux, h, w)?;
    match space {
        FusionSpace::Logit => match mode {
            FusionMode::Out => unreachable!(),
            FusionMode::Aux => Ok(aux),
            FusionMode::Add => main.zip_with(&aux, |a, b| a + b),
            FusionMode::Multi => main.zip_with(&aux, |a, b| a * b),
        },
        FusionSpace::Prob => {
            let pm = softmax_channels(main);
            let pa = softmax_channels(&aux);
            let fused = match mode {
                FusionMode::Out => pm,
                FusionMode::Aux => pa,
                FusionMode::Add => pm.zip_with(&pa, |a, b| a + b)?,
                FusionMode::Multi => pm.zip_with(&pa, |a, b| a * b)?,
            };
            fused.map(|p| libm::logf(p.max(f32::MIN_POSITIVE)))
        }
    }
}
