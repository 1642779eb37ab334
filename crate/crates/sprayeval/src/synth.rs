//! Seeded synthetic datasets: non-touching disc-shaped plants per class with
//! a keypoint planted at the centre of every sprayed plant.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sprayeval_core::{ClassTable, LabelMask, Tensor, NUM_CLASSES};

use crate::dataset::{assemble_stats, write_keypoints, DatasetStats, HitPopulation, KeypointRow, Split};
use crate::error::{Error, Result};
use crate::format::{write_mask, write_tensor};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub images: usize,
    /// The last `test` images form the test split.
    pub test: usize,
    pub height: usize,
    pub width: usize,
    pub max_plants_per_class: usize,
    pub min_radius: usize,
    pub max_radius: usize,
    /// Empty pixels kept between any two plants.
    pub gap: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            images: 8,
            test: 4,
            height: 64,
            width: 64,
            max_plants_per_class: 2,
            min_radius: 2,
            max_radius: 4,
            gap: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub config: SynthConfig,
    pub stats: DatasetStats,
}

const COLOURS: [[f32; 3]; NUM_CLASSES] = [
    [0.36, 0.25, 0.16],
    [0.25, 0.65, 0.20],
    [0.45, 0.75, 0.30],
    [0.55, 0.70, 0.25],
    [0.20, 0.45, 0.75],
    [0.35, 0.55, 0.85],
    [0.45, 0.50, 0.80],
];

/// A single synthetic scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub image: Tensor,
    pub mask: LabelMask,
    /// `(class_id, row, col)` at the centre of each sprayed plant.
    pub keypoints: Vec<(usize, usize, usize)>,
    pub pixels: Vec<u64>,
    pub plants: Vec<u64>,
}

fn disc(r: usize) -> Vec<(isize, isize)> {
    let r = r as isize;
    let mut cells = Vec::new();
    for dr in -r..=r {
        for dc in -r..=r {
            if dr * dr + dc * dc <= r * r {
                cells.push((dr, dc));
            }
        }
    }
    cells
}

pub fn generate_scene(cfg: &SynthConfig, rng: &mut ChaCha8Rng, require_sprayed: bool) -> Scene {
    let (h, w) = (cfg.height, cfg.width);
    let table = ClassTable::greenhouse();
    let mut mask = LabelMask::filled(h, w, 0).expect("positive extents");
    // cells within `gap` of a plant
    let mut blocked = vec![false; h * w];
    let mut keypoints = Vec::new();
    let mut pixels = vec![0u64; NUM_CLASSES];
    let mut plants = vec![0u64; NUM_CLASSES];

    for class in 1..NUM_CLASSES {
        let mut count = rng.gen_range(0..=cfg.max_plants_per_class);
        if require_sprayed && table.is_sprayed(class) {
            count = count.max(1);
        }
        for _ in 0..count {
            for _attempt in 0..200 {
                let r = rng.gen_range(cfg.min_radius..=cfg.max_radius);
                if h < 2 * r + 1 || w < 2 * r + 1 {
                    break;
                }
                let (cr, cc) = (rng.gen_range(r..h - r), rng.gen_range(r..w - r));
                let cells: Vec<(usize, usize)> = disc(r)
                    .into_iter()
                    .map(|(dr, dc)| ((cr as isize + dr) as usize, (cc as isize + dc) as usize))
                    .collect();
                if cells.iter().any(|&(y, x)| blocked[y * w + x]) {
                    continue;
                }
                for &(y, x) in &cells {
                    mask.set(y, x, class as u8);
                }
                let g = (r + cfg.gap) as isize;
                for y in (cr as isize - g).max(0)..(cr as isize + g + 1).min(h as isize) {
                    for x in (cc as isize - g).max(0)..(cc as isize + g + 1).min(w as isize) {
                        blocked[y as usize * w + x as usize] = true;
                    }
                }
                pixels[class] += cells.len() as u64;
                plants[class] += 1;
                if table.is_sprayed(class) {
                    keypoints.push((class, cr, cc));
                }
                break;
            }
        }
    }
    pixels[0] = (h * w) as u64 - pixels[1..].iter().sum::<u64>();

    let mut data = vec![0.0f32; 3 * h * w];
    for (p, &label) in mask.labels().iter().enumerate() {
        for c in 0..3 {
            let noise: f32 = rng.gen_range(-0.05..0.05);
            data[c * h * w + p] = (COLOURS[usize::from(label)][c] + noise).clamp(0.0, 1.0);
        }
    }
    let image = Tensor::new(vec![3, h, w], data).expect("finite colours");
    Scene { image, mask, keypoints, pixels, plants }
}

pub fn image_id(i: usize) -> String {
    format!("img{i:03}")
}

/// Writes a dataset under `root` and returns the manifest it also stores as
/// `manifest.json`.
pub fn generate(root: impl AsRef<Path>, cfg: &SynthConfig) -> Result<SynthManifest> {
    let root = root.as_ref();
    if cfg.test > cfg.images {
        return Err(Error::Config(format!("{} test images out of {}", cfg.test, cfg.images)));
    }
    if cfg.min_radius == 0 || cfg.min_radius > cfg.max_radius {
        return Err(Error::Config("radii must satisfy 1 <= min <= max".into()));
    }
    for dir in ["images", "masks", "keypoints"] {
        fs::create_dir_all(root.join(dir)).map_err(|e| Error::io(root.join(dir), e))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut splits = Vec::with_capacity(cfg.images);
    let mut manifest_lines = String::new();
    let mut per_image = Vec::with_capacity(cfg.images);
    for i in 0..cfg.images {
        let id = image_id(i);
        let split = if i >= cfg.images - cfg.test { Split::Test } else { Split::Train };
        let scene = generate_scene(cfg, &mut rng, split == Split::Test);
        write_tensor(&scene.image, root.join("images").join(format!("{id}.tnsr")))?;
        write_mask(&scene.mask, root.join("masks").join(format!("{id}.lmsk")))?;
        let rows: Vec<KeypointRow> = scene
            .keypoints
            .iter()
            .map(|&(class_id, row, col)| KeypointRow { image_id: id.clone(), class_id, row, col })
            .collect();
        write_keypoints(root.join("keypoints").join(format!("{id}.csv")), &rows)?;

        let mut kp = vec![0u64; NUM_CLASSES];
        for &(c, _, _) in &scene.keypoints {
            kp[c] += 1;
        }
        per_image.push((scene.pixels, scene.plants, kp));
        manifest_lines.push_str(&format!("{id} {split}\n"));
        splits.push(split);
    }
    let splits_path = root.join("splits.txt");
    fs::write(&splits_path, manifest_lines).map_err(|e| Error::io(splits_path, e))?;

    let manifest = SynthManifest { config: *cfg, stats: assemble_stats(&splits, &per_image, HitPopulation::All) };
    let path = root.join(MANIFEST);
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, json).map_err(|e| Error::io(path, e))?;
    Ok(manifest)
}
