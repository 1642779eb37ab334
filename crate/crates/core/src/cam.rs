//! Gradient-free class activation maps for segmentation models.
//!
//! Both methods score a class by the mean softmax probability of that class
//! over the pixels predicted as the class on the unperturbed image
//! ([`TargetRegion`]). The region is frozen for every perturbed forward so a
//! shrinking prediction cannot raise the score.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::engine::{AblationRequest, InferenceEngine, ModelOutput};
use crate::error::{Error, Result};
use crate::fusion::{fuse, Fusion};
use crate::tensor::{argmax_mask, bilinear_resize, minmax_normalize, LabelMask, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CamMethod {
    Ablation,
    Score,
}

impl CamMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            CamMethod::Ablation => "ablation",
            CamMethod::Score => "score",
        }
    }
}

impl fmt::Display for CamMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CamMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ablation" => Ok(CamMethod::Ablation),
            "score" => Ok(CamMethod::Score),
            other => Err(Error::Argument(format!("unknown CAM method {other:?}"))),
        }
    }
}

/// A class activation map at image resolution with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cam {
    map: Tensor,
    class_id: usize,
    method: CamMethod,
    /// Per-channel weights: relative score drops for AblationCAM, softmaxed
    /// masked scores for ScoreCAM. Empty when loaded from disk.
    channel_weights: Vec<f64>,
}

impl Cam {
    /// Wraps an existing `H×W` map; values must lie in `[0, 1]`.
    pub fn from_map(map: Tensor, class_id: usize, method: CamMethod) -> Result<Self> {
        if map.rank() != 2 {
            return Err(Error::Shape(format!("CAM must be rank 2, got {:?}", map.shape())));
        }
        if map.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Argument("CAM values must lie in [0, 1]".into()));
        }
        Ok(Self { map, class_id, method, channel_weights: Vec::new() })
    }

    pub fn map(&self) -> &Tensor {
        &self.map
    }

    pub fn class_id(&self) -> usize {
        self.class_id
    }

    pub fn method(&self) -> CamMethod {
        self.method
    }

    pub fn channel_weights(&self) -> &[f64] {
        &self.channel_weights
    }

    pub fn height(&self) -> usize {
        self.map.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.map.shape()[1]
    }
}

/// Pixels (row-major indices) predicted as `class_id` on the unperturbed image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetRegion {
    pub class_id: usize,
    pub pixels: Vec<usize>,
}

impl TargetRegion {
    pub fn from_mask(mask: &LabelMask, class_id: usize) -> Self {
        let pixels = mask
            .labels()
            .iter()
            .enumerate()
            .filter(|&(_, &l)| usize::from(l) == class_id)
            .map(|(i, _)| i)
            .collect();
        Self { class_id, pixels }
    }

    pub fn from_logits(logits: &Tensor, class_id: usize) -> Self {
        Self::from_mask(&argmax_mask(logits), class_id)
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

/// Mean softmax probability of the region's class over its pixels; 0 for an
/// empty region.
pub fn target_score(logits: &Tensor, region: &TargetRegion) -> f64 {
    if region.pixels.is_empty() {
        return 0.0;
    }
    let (c, h, w) = logits.dims();
    let hw = h * w;
    let data = logits.data();
    let mut total = 0.0f64;
    for &p in &region.pixels {
        let max = (0..c).map(|k| data[k * hw + p]).fold(f32::NEG_INFINITY, f32::max);
        let mut denom = 0.0f64;
        let mut numer = 0.0f64;
        for k in 0..c {
            let e = libm::exp(f64::from(data[k * hw + p]) - f64::from(max));
            denom += e;
            if k == region.class_id {
                numer = e;
            }
        }
        total += numer / denom;
    }
    total / region.pixels.len() as f64
}

/// Unperturbed forward pass, its fused logits and the frozen class region.
#[derive(Debug, Clone)]
pub struct Baseline {
    pub output: ModelOutput,
    pub fused: Tensor,
    pub region: TargetRegion,
    pub score: f64,
}

impl Baseline {
    /// Runs the unperturbed pass; fails with `ClassAbsent` when the class is
    /// not predicted anywhere.
    pub fn compute<E: InferenceEngine + ?Sized>(
        engine: &E,
        image: &Tensor,
        class_id: usize,
        fusion: Fusion,
    ) -> Result<Self> {
        let output = engine.forward(image)?;
        let fused = fuse(&output.main, &output.aux, fusion)?;
        if class_id >= fused.dims().0 {
            return Err(Error::Argument(format!("class {class_id} out of range")));
        }
        let region = TargetRegion::from_logits(&fused, class_id);
        let score = target_score(&fused, &region);
        if region.is_empty() || score == 0.0 {
            return Err(Error::ClassAbsent { class_id });
        }
        Ok(Self { output, fused, region, score })
    }
}

/// Target score of a (possibly perturbed) image against a frozen region.
pub fn fused_score<E: InferenceEngine + ?Sized>(
    engine: &E,
    image: &Tensor,
    ablation: &AblationRequest,
    region: &TargetRegion,
    fusion: Fusion,
) -> Result<f64> {
    let out = engine.forward_ablated(image, ablation)?;
    let fused = fuse(&out.main, &out.aux, fusion)?;
    Ok(target_score(&fused, region))
}

/// AblationCAM: each channel is weighted by the relative score drop when it is
/// zeroed; negative weights are clamped before summation.
pub fn ablation_cam<E: InferenceEngine + ?Sized>(
    engine: &E,
    image: &Tensor,
    class_id: usize,
    fusion: impl Into<Fusion>,
) -> Result<Cam> {
    let fusion = fusion.into();
    let base = Baseline::compute(engine, image, class_id, fusion)?;
    let (_, h, w) = image.dims();
    let acts = &base.output.activations;
    let channels = acts.dims().0;
    let up = bilinear_resize(acts, h, w)?;

    let mut weights = Vec::with_capacity(channels);
    for k in 0..channels {
        let s_k = fused_score(engine, image, &AblationRequest::single(k), &base.region, fusion)?;
        weights.push((base.score - s_k) / base.score);
    }
    let raw = weighted_sum(&up, &weights, |w| w.max(0.0));
    Ok(Cam {
        map: normalize_relu(raw, h, w),
        class_id,
        method: CamMethod::Ablation,
        channel_weights: weights,
    })
}

/// ScoreCAM: each channel's normalized upsampled map masks the image; the
/// masked scores, softmaxed over channels, weight the activation maps.
pub fn score_cam<E: InferenceEngine + ?Sized>(
    engine: &E,
    image: &Tensor,
    class_id: usize,
    fusion: impl Into<Fusion>,
) -> Result<Cam> {
    let fusion = fusion.into();
    let base = Baseline::compute(engine, image, class_id, fusion)?;
    let (colors, h, w) = image.dims();
    let hw = h * w;
    let up = bilinear_resize(&base.output.activations, h, w)?;
    let channels = up.dims().0;

    let mut scores = Vec::with_capacity(channels);
    for k in 0..channels {
        let plane = Tensor::from_parts(vec![h, w], up.channel(k).to_vec());
        let mask = minmax_normalize(&plane);
        let mut masked = image.data().to_vec();
        for c in 0..colors {
            for (v, m) in masked[c * hw..(c + 1) * hw].iter_mut().zip(mask.data()) {
                *v *= m;
            }
        }
        let masked = Tensor::from_parts(image.shape().to_vec(), masked);
        scores.push(fused_score(engine, &masked, &AblationRequest::none(), &base.region, fusion)?);
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| libm::exp(s - max)).collect();
    let sum: f64 = exps.iter().sum();
    let alphas: Vec<f64> = exps.iter().map(|e| e / sum).collect();

    let raw = weighted_sum(&up, &alphas, |a| a);
    Ok(Cam {
        map: normalize_relu(raw, h, w),
        class_id,
        method: CamMethod::Score,
        channel_weights: alphas,
    })
}

fn weighted_sum(up: &Tensor, weights: &[f64], f: impl Fn(f64) -> f64) -> Vec<f64> {
    let (_, h, w) = up.dims();
    let mut raw = vec![0.0f64; h * w];
    for (k, &wk) in weights.iter().enumerate() {
        let wk = f(wk);
        if wk == 0.0 {
            continue;
        }
        for (r, &a) in raw.iter_mut().zip(up.channel(k)) {
            *r += wk * f64::from(a);
        }
    }
    raw
}

fn normalize_relu(raw: Vec<f64>, h: usize, w: usize) -> Tensor {
    let clipped: Vec<f64> = raw.into_iter().map(|v| v.max(0.0)).collect();
    let min = clipped.iter().copied().fold(f64::INFINITY, f64::min);
    let max = clipped.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let data = if max > min {
        clipped.iter().map(|&v| ((v - min) / (max - min)) as f32).collect()
    } else {
        vec![0.0; h * w]
    };
    Tensor::from_parts(vec![h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::FusionMode;
    use crate::rng::SplitMix64;
    use crate::toy::{ToyFcn, ToyWeights};

    fn image(seed: u64, h: usize, w: usize) -> Tensor {
        let mut rng = SplitMix64::new(seed);
        let data = (0..3 * h * w).map(|_| rng.next_centered_f32() + 0.5).collect();
        Tensor::new(vec![3, h, w], data).unwrap()
    }

    #[test]
    fn target_score_limits() {
        // class 2 wins by a logit gap of 20 everywhere
        let mut data = vec![0.0f32; 3 * 4];
        for p in 0..4 {
            data[2 * 4 + p] = 20.0;
        }
        let logits = Tensor::new(vec![3, 2, 2], data).unwrap();
        let region = TargetRegion::from_logits(&logits, 2);
        assert_eq!(region.pixels.len(), 4);
        assert!(target_score(&logits, &region) >= 0.999);
        let empty = TargetRegion { class_id: 1, pixels: vec![] };
        assert_eq!(target_score(&logits, &empty), 0.0);
    }

    #[test]
    fn target_score_matches_loop() {
        let mut rng = SplitMix64::new(3);
        let logits =
            Tensor::new(vec![7, 4, 5], (0..140).map(|_| rng.next_centered_f32() * 6.0).collect()).unwrap();
        let pixels: Vec<usize> = (0..10).map(|i| i * 2).collect();
        let region = TargetRegion { class_id: 3, pixels: pixels.clone() };
        let mut want = 0.0;
        for p in pixels {
            let xs: Vec<f64> = (0..7).map(|k| f64::from(logits.data()[k * 20 + p])).collect();
            let denom: f64 = xs.iter().map(|x| x.exp()).sum();
            want += xs[3].exp() / denom;
        }
        want /= 10.0;
        let got = target_score(&logits, &region);
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }

    /// Only class `c` has head weight, on channel 3.
    fn single_channel_model(seed: u64, class: usize) -> ToyFcn {
        let mut w = ToyWeights::from_seed(seed, 7, 8);
        w.head.iter_mut().for_each(|v| *v = 0.0);
        w.head[class * 8 + 3] = 2.0;
        ToyFcn::from_weights(w).unwrap()
    }

    #[test]
    fn ablation_single_channel_driver() {
        let model = single_channel_model(7, 4);
        let img = image(1, 16, 16);
        let out = model.forward(&img).unwrap();
        let cam = ablation_cam(&model, &img, 4, FusionMode::Out).unwrap();
        let weights = cam.channel_weights();
        for (k, &wk) in weights.iter().enumerate() {
            if k == 3 {
                assert!(wk > 0.0);
            } else {
                assert_eq!(wk, 0.0);
            }
        }
        let up = bilinear_resize(&out.activations, 16, 16).unwrap();
        let a3 = minmax_normalize(&Tensor::new(vec![16, 16], up.channel(3).to_vec()).unwrap());
        for (a, b) in cam.map().data().iter().zip(a3.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn class_absent() {
        let model = single_channel_model(7, 4);
        let img = image(1, 16, 16);
        assert_eq!(
            ablation_cam(&model, &img, 5, FusionMode::Out).unwrap_err(),
            Error::ClassAbsent { class_id: 5 }
        );
        assert!(matches!(
            score_cam(&model, &img, 5, FusionMode::Out),
            Err(Error::ClassAbsent { class_id: 5 })
        ));
    }

    #[test]
    fn maps_are_normalized() {
        let model = ToyFcn::from_seed(21);
        let img = image(4, 24, 24);
        let out = model.forward(&img).unwrap();
        let mask = argmax_mask(&out.main);
        let class = usize::from(mask.labels()[0]);
        for cam in [
            ablation_cam(&model, &img, class, FusionMode::Out).unwrap(),
            score_cam(&model, &img, class, FusionMode::Out).unwrap(),
        ] {
            assert_eq!(cam.map().shape(), &[24, 24]);
            let max = cam.map().max();
            assert!(cam.map().min() >= 0.0);
            assert!(max == 1.0 || cam.map().data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn score_cam_single_channel() {
        let mut w = ToyWeights::from_seed(5, 7, 1);
        w.head = vec![0.0, 0.0, 0.0, 0.0, 1.5, -0.5, 0.0];
        let model = ToyFcn::from_weights(w).unwrap();
        let img = image(9, 16, 16);
        let out = model.forward(&img).unwrap();
        let class = usize::from(argmax_mask(&out.main).labels().iter().copied().max().unwrap());
        let cam = score_cam(&model, &img, class, FusionMode::Out).unwrap();
        assert_eq!(cam.channel_weights(), &[1.0]);
        let up = bilinear_resize(&out.activations, 16, 16).unwrap();
        let want = minmax_normalize(&up.reshape(vec![16, 16]).unwrap());
        for (a, b) in cam.map().data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn cam_from_map_validates() {
        assert!(Cam::from_map(Tensor::filled(&[2, 2], 1.5).unwrap(), 4, CamMethod::Score).is_err());
        assert!(Cam::from_map(Tensor::zeros(&[1, 2, 2]).unwrap(), 4, CamMethod::Score).is_err());
        let cam = Cam::from_map(Tensor::filled(&[2, 3], 0.5).unwrap(), 4, CamMethod::Score).unwrap();
        assert_eq!((cam.height(), cam.width()), (2, 3));
    }
}
