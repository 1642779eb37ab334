//! Dataset layout, ingestion and validation.
//!
//! ```text
//! root/
//!   splits.txt          "<id> <train|test>" per line, '#' comments
//!   images/<id>.tnsr    3×H×W in [0, 1], or <id>.png (RGB)
//!   masks/<id>.lmsk     H×W class ids, or <id>.png (8-bit gray)
//!   keypoints/<id>.csv  image_id,class_id,row,col (optional)
//!   dataset.map         optional "key = value" overrides of the four names above
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sprayeval_core::wsde::{hit_miss_rate, label_components, Connectivity, KeyPoint};
use sprayeval_core::{ClassTable, LabelMask, Tensor, NUM_CLASSES};

use crate::error::{Error, Result};
use crate::format::{read_mask, read_tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Data(format!("unknown split {other:?}"))),
        }
    }
}

/// Directory and file names inside a dataset root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub images: String,
    pub masks: String,
    pub keypoints: String,
    pub splits: String,
}

impl Default for Layout {
    fn default() -> Self {
        Self {
            images: "images".into(),
            masks: "masks".into(),
            keypoints: "keypoints".into(),
            splits: "splits.txt".into(),
        }
    }
}

impl Layout {
    pub const MAP_FILE: &'static str = "dataset.map";

    /// Applies `key = value` lines; unknown keys are data errors.
    pub fn parse_map(text: &str) -> Result<Self> {
        let mut layout = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Data(format!("{}:{}: expected key = value", Self::MAP_FILE, n + 1)))?;
            let value = value.trim().to_string();
            match key.trim() {
                "images" => layout.images = value,
                "masks" => layout.masks = value,
                "keypoints" => layout.keypoints = value,
                "splits" => layout.splits = value,
                other => {
                    return Err(Error::Data(format!("{}:{}: unknown key {other:?}", Self::MAP_FILE, n + 1)))
                }
            }
        }
        Ok(layout)
    }

    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join(Self::MAP_FILE);
        match fs::read_to_string(&path) {
            Ok(text) => Self::parse_map(&text),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(Error::io(path, e)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub id: String,
    pub image: PathBuf,
    pub mask: PathBuf,
    pub keypoints: Option<PathBuf>,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub entries: Vec<ImageEntry>,
}

impl DatasetIndex {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ImageEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn get(&self, id: &str) -> Option<&ImageEntry> {
        self.entries.iter().find(|e| e.id == id)
    }
}

/// One row of a keypoint CSV.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct KeypointRow {
    pub image_id: String,
    pub class_id: usize,
    pub row: usize,
    pub col: usize,
}

impl KeypointRow {
    pub fn point(&self) -> KeyPoint {
        KeyPoint::new(self.row, self.col)
    }
}

pub fn read_keypoints(path: impl AsRef<Path>) -> Result<Vec<KeypointRow>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for row in reader.deserialize() {
        rows.push(row.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?);
    }
    Ok(rows)
}

pub fn write_keypoints(path: impl AsRef<Path>, rows: &[KeypointRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(["image_id", "class_id", "row", "col"])?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn has_extension(path: &Path, ext: &str) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case(ext))
}

/// RGB image as a `3×H×W` tensor with values in `[0, 1]`.
pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    if has_extension(path, "png") {
        let img = image::open(path)?.to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut data = vec![0.0f32; 3 * h * w];
        for (i, px) in img.pixels().enumerate() {
            for c in 0..3 {
                data[c * h * w + i] = f32::from(px.0[c]) / 255.0;
            }
        }
        return Ok(Tensor::new(vec![3, h, w], data)?);
    }
    let t = read_tensor(path)?;
    if t.rank() != 3 || t.dims().0 != 3 {
        return Err(Error::Data(format!("{}: expected a 3xHxW image, got {:?}", path.display(), t.shape())));
    }
    Ok(t)
}

/// Ground-truth mask whose labels are all valid class ids.
pub fn load_mask(path: impl AsRef<Path>) -> Result<LabelMask> {
    let path = path.as_ref();
    let mask = if has_extension(path, "png") {
        let img = image::open(path)?.to_luma8();
        LabelMask::new(img.height() as usize, img.width() as usize, img.into_raw())?
    } else {
        read_mask(path)?
    };
    if let Some((i, label)) = mask.first_invalid(NUM_CLASSES) {
        return Err(Error::Data(format!(
            "{}: label {label} at row {}, col {} is not a class id (0..{NUM_CLASSES})",
            path.display(),
            i / mask.width(),
            i % mask.width()
        )));
    }
    Ok(mask)
}

fn find_file(dir: &Path, id: &str, extensions: &[&str]) -> Option<PathBuf> {
    extensions.iter().map(|ext| dir.join(format!("{id}.{ext}"))).find(|p| p.is_file())
}

fn parse_splits(path: &Path) -> Result<Vec<(String, Split)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Data(format!("split manifest {}: {e}", path.display())))?;
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(id), Some(split), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::Data(format!("{}:{}: expected \"<id> <split>\"", path.display(), n + 1)));
        };
        if id.contains(',') {
            return Err(Error::Data(format!("{}:{}: image id {id:?} contains a comma", path.display(), n + 1)));
        }
        if !seen.insert(id.to_string()) {
            return Err(Error::Data(format!("{}:{}: duplicate image id {id:?}", path.display(), n + 1)));
        }
        out.push((id.to_string(), split.parse()?));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub class_id: usize,
    pub name: String,
    pub pixels: u64,
    /// 8-connected components of the class over all masks.
    pub instances: u64,
    pub keypoints: u64,
}

/// Instance-based hit and miss percentages of one base class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitMiss {
    pub class_id: usize,
    pub name: String,
    pub sprayed_instances: u64,
    pub unsprayed_instances: u64,
    pub hit_pct: Option<f64>,
    pub miss_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub images: usize,
    pub train: usize,
    pub test: usize,
    pub classes: Vec<ClassStats>,
    pub hit_miss: Vec<HitMiss>,
}

/// Which images count towards instance hit and miss rates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum HitPopulation {
    #[default]
    All,
    /// Only images containing at least one sprayed instance.
    PostSpray,
}

impl FromStr for HitPopulation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(HitPopulation::All),
            "post-spray" => Ok(HitPopulation::PostSpray),
            other => Err(Error::Config(format!("unknown hit population {other:?}"))),
        }
    }
}

/// Per-class pixel and instance counts of one mask. Background has no
/// instances.
pub fn mask_counts(mask: &LabelMask) -> (Vec<u64>, Vec<u64>) {
    let mut pixels = vec![0u64; NUM_CLASSES];
    let mut instances = vec![0u64; NUM_CLASSES];
    for class in 0..NUM_CLASSES {
        let binary: Vec<bool> = mask.labels().iter().map(|&l| usize::from(l) == class).collect();
        pixels[class] = binary.iter().filter(|&&b| b).count() as u64;
        if class == 0 {
            continue;
        }
        instances[class] = label_components(&binary, mask.height(), mask.width(), Connectivity::Eight).len() as u64;
    }
    (pixels, instances)
}

/// Builds [`DatasetStats`] from per-image pixel, instance and keypoint counts.
pub fn assemble_stats(
    splits: &[Split],
    per_image: &[(Vec<u64>, Vec<u64>, Vec<u64>)],
    population: HitPopulation,
) -> DatasetStats {
    let table = ClassTable::greenhouse();
    let mut pixels = vec![0u64; NUM_CLASSES];
    let mut instances = vec![0u64; NUM_CLASSES];
    let mut keypoints = vec![0u64; NUM_CLASSES];
    let mut pop_instances = vec![0u64; NUM_CLASSES];
    for (px, inst, kp) in per_image {
        for c in 0..NUM_CLASSES {
            pixels[c] += px[c];
            instances[c] += inst[c];
            keypoints[c] += kp[c];
        }
        let post_spray = table.sprayed_classes().any(|s| inst[s] > 0);
        if population == HitPopulation::All || post_spray {
            for c in 0..NUM_CLASSES {
                pop_instances[c] += inst[c];
            }
        }
    }
    let classes = (0..NUM_CLASSES)
        .map(|c| ClassStats {
            class_id: c,
            name: table.name(c).unwrap_or_default().to_string(),
            pixels: pixels[c],
            instances: instances[c],
            keypoints: keypoints[c],
        })
        .collect();
    let hit_miss = table
        .sprayed_classes()
        .map(|s| {
            let base = table.base_of(s).expect("sprayed classes have a base");
            let rate = hit_miss_rate(pop_instances[s], pop_instances[base]);
            HitMiss {
                class_id: base,
                name: table.name(base).unwrap_or_default().to_string(),
                sprayed_instances: pop_instances[s],
                unsprayed_instances: pop_instances[base],
                hit_pct: rate.map(|r| r.0),
                miss_pct: rate.map(|r| r.1),
            }
        })
        .collect();
    DatasetStats {
        images: splits.len(),
        train: splits.iter().filter(|&&s| s == Split::Train).count(),
        test: splits.iter().filter(|&&s| s == Split::Test).count(),
        classes,
        hit_miss,
    }
}

/// Validates a dataset root and computes its statistics.
pub fn ingest(root: impl AsRef<Path>, population: HitPopulation) -> Result<(DatasetIndex, DatasetStats)> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(Error::Config(format!("dataset root {} is not a directory", root.display())));
    }
    let layout = Layout::load(root)?;
    let splits = parse_splits(&root.join(&layout.splits))?;
    let (images_dir, masks_dir, kp_dir) =
        (root.join(&layout.images), root.join(&layout.masks), root.join(&layout.keypoints));

    let mut missing_images = Vec::new();
    let mut missing_masks = Vec::new();
    let mut entries = Vec::new();
    for (id, split) in &splits {
        let image = find_file(&images_dir, id, &["tnsr", "png"]);
        let mask = find_file(&masks_dir, id, &["lmsk", "png"]);
        if image.is_none() {
            missing_images.push(id.clone());
        }
        if mask.is_none() {
            missing_masks.push(id.clone());
        }
        if let (Some(image), Some(mask)) = (image, mask) {
            let keypoints = find_file(&kp_dir, id, &["csv"]);
            entries.push(ImageEntry { id: id.clone(), image, mask, keypoints, split: *split });
        }
    }
    if !missing_images.is_empty() {
        return Err(Error::Data(format!("no image file for: {}", missing_images.join(", "))));
    }
    if !missing_masks.is_empty() {
        return Err(Error::Data(format!("no mask for: {}", missing_masks.join(", "))));
    }

    let mut per_image = Vec::with_capacity(entries.len());
    for e in &entries {
        let image = load_image(&e.image)?;
        let mask = load_mask(&e.mask)?;
        let (_, h, w) = image.dims();
        if (mask.height(), mask.width()) != (h, w) {
            return Err(Error::Data(format!(
                "{}: mask is {}x{}, image is {h}x{w}",
                e.mask.display(),
                mask.height(),
                mask.width()
            )));
        }
        let mut kp = vec![0u64; NUM_CLASSES];
        if let Some(path) = &e.keypoints {
            for row in read_keypoints(path)? {
                validate_keypoint(&row, e, h, w, path)?;
                kp[row.class_id] += 1;
            }
        }
        let (px, inst) = mask_counts(&mask);
        per_image.push((px, inst, kp));
    }
    let split_tags: Vec<Split> = entries.iter().map(|e| e.split).collect();
    let stats = assemble_stats(&split_tags, &per_image, population);
    Ok((DatasetIndex { root: root.to_path_buf(), entries }, stats))
}

fn validate_keypoint(row: &KeypointRow, entry: &ImageEntry, h: usize, w: usize, path: &Path) -> Result<()> {
    if row.image_id != entry.id {
        return Err(Error::Data(format!(
            "{}: keypoint for image {:?} in the file of {:?}",
            path.display(),
            row.image_id,
            entry.id
        )));
    }
    if row.class_id >= NUM_CLASSES {
        return Err(Error::Data(format!("{}: class id {} is not a class", path.display(), row.class_id)));
    }
    if row.row >= h || row.col >= w {
        return Err(Error::Data(format!(
            "{}: keypoint ({}, {}) outside the {h}x{w} image",
            path.display(),
            row.row,
            row.col
        )));
    }
    Ok(())
}

/// Ground-truth keypoints of an image grouped by class; empty without a file.
pub fn keypoints_by_class(entry: &ImageEntry) -> Result<BTreeMap<usize, Vec<KeyPoint>>> {
    let mut out: BTreeMap<usize, Vec<KeyPoint>> = BTreeMap::new();
    if let Some(path) = &entry.keypoints {
        for row in read_keypoints(path)? {
            out.entry(row.class_id).or_default().push(row.point());
        }
    }
    Ok(out)
}

pub fn render_stats(stats: &DatasetStats) -> String {
    let mut s = format!("images: {} (train {}, test {})\n", stats.images, stats.train, stats.test);
    s.push_str(&format!("{:<20} {:>10} {:>10} {:>10}\n", "class", "pixels", "instances", "keypoints"));
    for c in &stats.classes {
        s.push_str(&format!("{:<20} {:>10} {:>10} {:>10}\n", c.name, c.pixels, c.instances, c.keypoints));
    }
    let total: u64 = stats.classes.iter().filter(|c| c.class_id != 0).map(|c| c.instances).sum();
    s.push_str(&format!("foreground instances: {total}\n"));
    for h in &stats.hit_miss {
        match (h.hit_pct, h.miss_pct) {
            (Some(hit), Some(miss)) => s.push_str(&format!("{:<20} hit {hit:.1}% miss {miss:.1}%\n", h.name)),
            _ => s.push_str(&format!("{:<20} hit n/a\n", h.name)),
        }
    }
    s
}
