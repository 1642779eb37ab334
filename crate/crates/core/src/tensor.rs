//! Dense tensors, label masks and the numeric kernels shared by every stage.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Number of classes in the greenhouse dataset, background included.
pub const NUM_CLASSES: usize = 7;

/// Dense row-major `f32` array of rank 2 (`H×W`) or 3 (`C×H×W`).
///
/// Extents are positive and every value is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if !(2..=3).contains(&shape.len()) {
            return Err(Error::Shape(format!("rank must be 2 or 3, got {}", shape.len())));
        }
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("zero extent in {shape:?}")));
        }
        let len = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Shape(format!("extent product overflows: {shape:?}")))?;
        if len != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Shape(format!("non-finite value at index {i}")));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f32) -> Result<Self> {
        let len: usize = shape.iter().product();
        Self::new(shape.to_vec(), vec![value; len])
    }

    /// Builds a `C×H×W` tensor from per-channel planes.
    pub fn from_channels(height: usize, width: usize, channels: &[Vec<f32>]) -> Result<Self> {
        let mut data = Vec::with_capacity(channels.len() * height * width);
        for ch in channels {
            if ch.len() != height * width {
                return Err(Error::Shape("channel plane has wrong length".to_string()));
            }
            data.extend_from_slice(ch);
        }
        Self::new(vec![channels.len(), height, width], data)
    }

    /// Internal constructor for kernels whose outputs are finite by construction.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f32>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// `(channels, height, width)`; a rank-2 tensor reports one channel.
    pub fn dims(&self) -> (usize, usize, usize) {
        match self.shape.as_slice() {
            [h, w] => (1, *h, *w),
            [c, h, w] => (*c, *h, *w),
            _ => unreachable!("rank is validated on construction"),
        }
    }

    pub fn channel(&self, k: usize) -> &[f32] {
        let (_, h, w) = self.dims();
        &self.data[k * h * w..(k + 1) * h * w]
    }

    pub fn min(&self) -> f32 {
        self.data.iter().copied().fold(f32::INFINITY, f32::min)
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    /// Same data viewed with a different shape of equal size.
    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    /// Applies `f` element-wise; fails if the result is not finite.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<Self> {
        Self::new(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    /// Element-wise combination of two same-shaped tensors.
    pub fn zip_with(&self, other: &Tensor, f: impl Fn(f32, f32) -> f32) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::Contract(format!(
                "shape mismatch: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Self::new(self.shape.clone(), data)
    }
}

/// `H×W` grid of class ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    height: usize,
    width: usize,
    labels: Vec<u8>,
}

impl LabelMask {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape("label mask extents must be positive".to_string()));
        }
        if height.checked_mul(width) != Some(labels.len()) {
            return Err(Error::Shape(format!(
                "{height}x{width} mask needs {} labels, got {}",
                height * width,
                labels.len()
            )));
        }
        Ok(Self { height, width, labels })
    }

    pub fn filled(height: usize, width: usize, label: u8) -> Result<Self> {
        Self::new(height, width, vec![label; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.labels[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, label: u8) {
        self.labels[row * self.width + col] = label;
    }

    /// Index and value of the first label `>= num_classes`, if any.
    pub fn first_invalid(&self, num_classes: usize) -> Option<(usize, u8)> {
        self.labels
            .iter()
            .position(|&l| usize::from(l) >= num_classes)
            .map(|i| (i, self.labels[i]))
    }

    pub fn count(&self, class_id: u8) -> usize {
        self.labels.iter().filter(|&&l| l == class_id).count()
    }
}

/// Class names and the sprayed-class to base-class pairing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassTable {
    names: Vec<String>,
    sprayed_pairs: Vec<(usize, usize)>,
}

impl ClassTable {
    pub fn new(names: Vec<String>, sprayed_pairs: Vec<(usize, usize)>) -> Result<Self> {
        for (i, a) in names.iter().enumerate() {
            if names[..i].contains(a) {
                return Err(Error::Argument(format!("duplicate class name {a:?}")));
            }
        }
        for (i, &(sprayed, base)) in sprayed_pairs.iter().enumerate() {
            if sprayed >= names.len() || base >= names.len() {
                return Err(Error::Argument(format!("pair ({sprayed}, {base}) out of range")));
            }
            if base == 0 {
                return Err(Error::Argument("sprayed classes never map to background".to_string()));
            }
            let clash = sprayed_pairs[..i].iter().any(|&(s, b)| s == sprayed || b == base);
            if clash {
                return Err(Error::Argument("sprayed pairing must be injective".to_string()));
            }
        }
        Ok(Self { names, sprayed_pairs })
    }

    /// The seven greenhouse classes.
    pub fn greenhouse() -> Self {
        let names = [
            "background",
            "lettuce",
            "chickweed",
            "meadowgrass",
            "sprayed lettuce",
            "sprayed chickweed",
            "sprayed meadowgrass",
        ];
        Self::new(names.iter().map(|s| s.to_string()).collect(), vec![(4, 1), (5, 2), (6, 3)])
            .expect("static table is valid")
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn sprayed_classes(&self) -> impl Iterator<Item = usize> + '_ {
        self.sprayed_pairs.iter().map(|&(s, _)| s)
    }

    pub fn base_of(&self, sprayed: usize) -> Option<usize> {
        self.sprayed_pairs.iter().find(|&&(s, _)| s == sprayed).map(|&(_, b)| b)
    }

    pub fn is_sprayed(&self, id: usize) -> bool {
        self.base_of(id).is_some()
    }
}

/// Bilinear resize of every channel with the align-corners=false convention.
pub fn bilinear_resize(t: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::Argument("resize target extents must be positive".to_string()));
    }
    let (c, h, w) = t.dims();
    let rows = sample_axis(h, out_h);
    let cols = sample_axis(w, out_w);
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for k in 0..c {
        let plane = t.channel(k);
        for &(y0, y1, fy) in &rows {
            for &(x0, x1, fx) in &cols {
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    let shape = if t.rank() == 2 { vec![out_h, out_w] } else { vec![c, out_h, out_w] };
    Ok(Tensor::from_parts(shape, out))
}

/// Source index pair and interpolation weight for each output coordinate.
fn sample_axis(input: usize, output: usize) -> Vec<(usize, usize, f32)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
            let i0 = libm::floor(src) as usize;
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, (src - i0 as f64) as f32)
        })
        .collect()
}

/// Per-pixel softmax across channels.
pub fn softmax_channels(t: &Tensor) -> Tensor {
    let (c, h, w) = t.dims();
    let hw = h * w;
    let data = t.data();
    let mut out = vec![0.0f32; data.len()];
    for p in 0..hw {
        let max = (0..c).map(|k| data[k * hw + p]).fold(f32::NEG_INFINITY, f32::max);
        let exps: Vec<f64> = (0..c).map(|k| libm::exp(f64::from(data[k * hw + p]) - f64::from(max))).collect();
        let sum: f64 = exps.iter().sum();
        for (k, e) in exps.iter().enumerate() {
            out[k * hw + p] = (e / sum) as f32;
        }
    }
    Tensor::from_parts(t.shape().to_vec(), out)
}

/// Per-pixel index of the largest channel; ties go to the lowest index.
pub fn argmax_mask(t: &Tensor) -> LabelMask {
    let (c, h, w) = t.dims();
    let hw = h * w;
    let data = t.data();
    let labels = (0..hw)
        .map(|p| {
            let mut best = 0;
            for k in 1..c {
                if data[k * hw + p] > data[best * hw + p] {
                    best = k;
                }
            }
            best as u8
        })
        .collect();
    LabelMask { height: h, width: w, labels }
}

/// Linear-interpolation percentile: rank `p/100 × (n−1)` over the sorted values.
pub fn percentile(values: &[f32], p: f64) -> Result<f32> {
    if values.is_empty() {
        return Err(Error::Argument("percentile of an empty sequence".to_string()));
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::Argument(format!("percentile {p} outside [0, 100]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f32::total_cmp);
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = libm::floor(rank) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = rank - lo as f64;
    let (a, b) = (f64::from(sorted[lo]), f64::from(sorted[hi]));
    Ok((a + (b - a) * frac) as f32)
}

/// Rescales to `[0, 1]`; a constant tensor maps to all zeros.
pub fn minmax_normalize(t: &Tensor) -> Tensor {
    let (min, max) = (t.min(), t.max());
    let range = f64::from(max) - f64::from(min);
    let data = if range > 0.0 {
        t.data()
            .iter()
            .map(|&v| ((f64::from(v) - f64::from(min)) / range) as f32)
            .collect()
    } else {
        vec![0.0; t.data().len()]
    };
    Tensor::from_parts(t.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    fn random_tensor(shape: &[usize], seed: u64, scale: f32) -> Tensor {
        let mut rng = SplitMix64::new(seed);
        let len = shape.iter().product();
        let data = (0..len).map(|_| rng.next_centered_f32() * scale).collect();
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::new(vec![4], vec![0.0; 4]).is_err());
        assert!(Tensor::new(vec![0, 2], vec![]).is_err());
        assert!(Tensor::new(vec![1, 1], vec![f32::NAN]).is_err());
    }

    #[test]
    fn resize_identity() {
        let t = random_tensor(&[3, 5, 7], 1, 4.0);
        let r = bilinear_resize(&t, 5, 7).unwrap();
        for (a, b) in t.data().iter().zip(r.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn resize_constant() {
        let t = Tensor::filled(&[2, 3, 3], 3.5).unwrap();
        let r = bilinear_resize(&t, 11, 4).unwrap();
        assert!(r.data().iter().all(|&v| v == 3.5));
    }

    #[test]
    fn resize_matches_hand_grid() {
        let t = Tensor::new(vec![1, 2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let r = bilinear_resize(&t, 4, 4).unwrap();
        // Sample coordinates (i + 0.5) / 2 - 0.5 clamped to [0, 1] are
        // {0, .25, .75, 1}; the input is the plane 2y + x.
        let expected = [
            0.0, 0.25, 0.75, 1.0, //
            0.5, 0.75, 1.25, 1.5, //
            1.5, 1.75, 2.25, 2.5, //
            2.0, 2.25, 2.75, 3.0,
        ];
        assert_eq!(r.shape(), &[1, 4, 4]);
        for (a, b) in r.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn resize_matches_direct_formula() {
        let t = random_tensor(&[2, 3, 5], 9, 10.0);
        let (oh, ow) = (7, 4);
        let r = bilinear_resize(&t, oh, ow).unwrap();
        for k in 0..2 {
            for i in 0..oh {
                for j in 0..ow {
                    let sy = ((i as f64 + 0.5) * 3.0 / oh as f64 - 0.5).max(0.0).min(2.0);
                    let sx = ((j as f64 + 0.5) * 5.0 / ow as f64 - 0.5).max(0.0).min(4.0);
                    let mut acc = 0.0f64;
                    for y in 0..3 {
                        for x in 0..5 {
                            let wy = (1.0 - (sy - y as f64).abs()).max(0.0);
                            let wx = (1.0 - (sx - x as f64).abs()).max(0.0);
                            acc += wy * wx * f64::from(t.channel(k)[y * 5 + x]);
                        }
                    }
                    let got = f64::from(r.channel(k)[i * ow + j]);
                    assert!((got - acc).abs() < 1e-5, "{got} vs {acc}");
                }
            }
        }
    }

    #[test]
    fn softmax_uniform_and_stable() {
        let t = Tensor::zeros(&[7, 2, 3]).unwrap();
        let s = softmax_channels(&t);
        assert!(s.data().iter().all(|&v| (v - 1.0 / 7.0).abs() < 1e-7));

        let t = Tensor::new(vec![2, 1, 1], vec![1000.0, 0.0]).unwrap();
        let s = softmax_channels(&t);
        assert_eq!(s.data(), &[1.0, 0.0]);
    }

    #[test]
    fn softmax_matches_f64_reference() {
        let t = random_tensor(&[3, 2, 2], 77, 8.0);
        let s = softmax_channels(&t);
        for p in 0..4 {
            let xs: Vec<f64> = (0..3).map(|k| f64::from(t.data()[k * 4 + p])).collect();
            let denom: f64 = xs.iter().map(|x| x.exp()).sum();
            for k in 0..3 {
                let want = xs[k].exp() / denom;
                assert!((f64::from(s.data()[k * 4 + p]) - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn argmax_cases() {
        let mut data = vec![0.0; 3 * 4];
        // pixel p is hot in channel p % 3
        for p in 0..4 {
            data[(p % 3) * 4 + p] = 1.0;
        }
        let t = Tensor::new(vec![3, 2, 2], data).unwrap();
        assert_eq!(argmax_mask(&t).labels(), &[0, 1, 2, 0]);

        let t = Tensor::filled(&[7, 3, 3], 0.25).unwrap();
        assert!(argmax_mask(&t).labels().iter().all(|&l| l == 0));
    }

    #[test]
    fn argmax_matches_scan() {
        for seed in 0..1000 {
            let t = random_tensor(&[7, 8, 8], seed, 2.0);
            let m = argmax_mask(&t);
            for p in 0..64 {
                let mut best = 0;
                let mut best_v = f32::NEG_INFINITY;
                for k in 0..7 {
                    let v = t.data()[k * 64 + p];
                    if v > best_v {
                        best_v = v;
                        best = k;
                    }
                }
                assert_eq!(usize::from(m.labels()[p]), best);
            }
        }
    }

    #[test]
    fn percentile_cases() {
        assert_eq!(percentile(&[1.0, 2.0, 3.0, 4.0, 5.0], 50.0).unwrap(), 3.0);
        assert!((percentile(&[0.0, 10.0], 90.0).unwrap() - 9.0).abs() < 1e-6);
        for p in [0.0, 37.5, 100.0] {
            assert_eq!(percentile(&[4.25], p).unwrap(), 4.25);
        }
        assert!(matches!(percentile(&[], 10.0), Err(Error::Argument(_))));
        assert!(percentile(&[1.0], 101.0).is_err());
    }

    #[test]
    fn minmax_cases() {
        let t = Tensor::new(vec![1, 3], vec![2.0, 4.0, 6.0]).unwrap();
        assert_eq!(minmax_normalize(&t).data(), &[0.0, 0.5, 1.0]);
        let t = Tensor::filled(&[2, 2], 7.0).unwrap();
        assert!(minmax_normalize(&t).data().iter().all(|&v| v == 0.0));

        let t = random_tensor(&[4, 6], 5, 100.0);
        let n = minmax_normalize(&t);
        let (min, max) = (f64::from(t.min()), f64::from(t.max()));
        for (a, b) in t.data().iter().zip(n.data()) {
            let want = (f64::from(*a) - min) / (max - min);
            assert!((f64::from(*b) - want).abs() < 1e-6);
        }
    }

    #[test]
    fn class_table_pairs() {
        let table = ClassTable::greenhouse();
        assert_eq!(table.len(), 7);
        assert_eq!(table.base_of(5), Some(2));
        assert_eq!(table.id("sprayed meadowgrass"), Some(6));
        assert!(!table.is_sprayed(1));
        let names = ["a", "b", "c"].iter().map(|s| s.to_string()).collect::<Vec<_>>();
        assert!(ClassTable::new(names.clone(), vec![(2, 0)]).is_err());
        assert!(ClassTable::new(names, vec![(2, 1), (2, 1)]).is_err());
    }

    proptest! {
        #[test]
        fn resize_stays_within_bounds(seed in any::<u64>(), oh in 1usize..20, ow in 1usize..20) {
            let t = random_tensor(&[2, 5, 6], seed, 50.0);
            let r = bilinear_resize(&t, oh, ow).unwrap();
            prop_assert!(r.min() >= t.min() - 1e-6);
            prop_assert!(r.max() <= t.max() + 1e-6);
        }

        #[test]
        fn softmax_sums_to_one(seed in any::<u64>()) {
            let t = random_tensor(&[5, 3, 3], seed, 2.0e4);
            let s = softmax_channels(&t);
            for p in 0..9 {
                let sum: f32 = (0..5).map(|k| s.data()[k * 9 + p]).sum();
                prop_assert!((sum - 1.0).abs() < 1e-5);
            }
        }
    }
}
