//! Orchestration: forward → fuse → predict → tally, then per sprayed class
//! CAM → Deletion/Insertion → islands → keypoints → pointing game.
//!
//! Images are processed by a pool of workers, each with its own engine.
//! The reducer assembles tables in image order and performs every write.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use sprayeval_core::cam::{ablation_cam, score_cam, Cam, CamMethod};
use sprayeval_core::faithfulness::{auc, deletion_curve, insertion_curve, FaithfulnessCurve};
use sprayeval_core::segmetrics::tally;
use sprayeval_core::wsde::{
    cluster, extract_islands, island_mask, pointing_game, ClassCounts, ClusterMethod, HitRateMode, Island, KeyPoint,
    SprayerSpec, TopMode,
};
use sprayeval_core::{
    argmax_mask, fuse, ClassTable, ConfusionTally, EngineError, Fusion, FusionMode, FusionSpace, InferenceEngine,
    LabelMask, Tensor, ToyFcn, NUM_CLASSES,
};

use crate::bundle::{
    coverage_row, deposition_table, faithfulness_summary, segmentation_table, Bundle, BundleConfig, CoverageRow,
    FaithfulnessEntry, BUNDLE_FILE,
};
use crate::cache::CachedEngine;
use crate::dataset::{
    ingest, keypoints_by_class, load_image, load_mask, write_keypoints, HitPopulation, ImageEntry, KeypointRow, Split,
};
use crate::error::{Error, Result};
use crate::format::{write_mask, write_tensor};
use crate::protocol::ExternalEngine;

pub type BoxedEngine = Box<dyn InferenceEngine + Send + Sync>;

/// Builds one engine per worker.
pub trait EngineFactory: Sync {
    fn build(&self) -> Result<BoxedEngine, EngineError>;
}

impl<F> EngineFactory for F
where
    F: Fn() -> Result<BoxedEngine, EngineError> + Sync,
{
    fn build(&self) -> Result<BoxedEngine, EngineError> {
        self()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EngineSpec {
    Toy(u64),
    /// Command line run through `sh -c`.
    Exec(String),
}

impl FromStr for EngineSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(seed) = s.strip_prefix("toy:") {
            let seed = seed.parse().map_err(|_| Error::Config(format!("bad toy seed {seed:?}")))?;
            Ok(EngineSpec::Toy(seed))
        } else if let Some(cmd) = s.strip_prefix("exec:") {
            if cmd.trim().is_empty() {
                return Err(Error::Config("empty engine command line".into()));
            }
            Ok(EngineSpec::Exec(cmd.to_string()))
        } else {
            Err(Error::Config(format!("engine must be toy:<seed> or exec:<cmdline>, got {s:?}")))
        }
    }
}

impl fmt::Display for EngineSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EngineSpec::Toy(seed) => write!(f, "toy:{seed}"),
            EngineSpec::Exec(cmd) => write!(f, "exec:{cmd}"),
        }
    }
}

impl EngineFactory for EngineSpec {
    fn build(&self) -> Result<BoxedEngine, EngineError> {
        match self {
            EngineSpec::Toy(seed) => Ok(Box::new(ToyFcn::from_seed(*seed))),
            EngineSpec::Exec(cmd) => Ok(Box::new(ExternalEngine::spawn(cmd)?)),
        }
    }
}

/// How far the per-class chain runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Segmentation,
    Cam,
    Wsde,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Segmentation => "seg",
            Stage::Cam => "cam",
            Stage::Wsde => "wsde",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub engine: EngineSpec,
    pub fusions: Vec<FusionMode>,
    pub fusion_space: FusionSpace,
    pub cam: CamMethod,
    pub cluster: ClusterMethod,
    pub top_mode: TopMode,
    pub sprayer: SprayerSpec,
    pub min_island_px: usize,
    pub include_background: bool,
    pub hit_rate_mode: HitRateMode,
    pub stage: Stage,
    pub jobs: usize,
    /// Forward results memoized per worker; 0 disables the cache.
    pub cache_capacity: usize,
    pub out: PathBuf,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.dataset.is_dir() {
            return Err(Error::Config(format!("dataset root {} is not a directory", self.dataset.display())));
        }
        if self.fusions.is_empty() {
            return Err(Error::Config("at least one fusion mode is required".into()));
        }
        if self.jobs == 0 {
            return Err(Error::Config("--jobs must be at least 1".into()));
        }
        self.sprayer.validated().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    fn bundle_config(&self, model: &str) -> BundleConfig {
        BundleConfig {
            model: model.to_string(),
            engine: self.engine.to_string(),
            dataset: self.dataset.display().to_string(),
            stage: self.stage.as_str().to_string(),
            fusions: self.fusions.iter().map(|f| f.as_str().to_string()).collect(),
            fusion_space: self.fusion_space.as_str().to_string(),
            cam: self.cam.as_str().to_string(),
            cluster: self.cluster.as_str().to_string(),
            top_mode: self.top_mode.as_str().to_string(),
            unit_deposit_ul: self.sprayer.unit_deposit_ul,
            deposit_std_ul: self.sprayer.deposit_std_ul,
            min_point_distance_px: self.sprayer.min_point_distance_px,
            box_halfwidth_px: self.sprayer.box_halfwidth_px,
            cm2_per_pixel: self.sprayer.cm2_per_pixel,
            min_island_px: self.min_island_px,
            include_background: self.include_background,
            hit_rate_mode: match self.hit_rate_mode {
                HitRateMode::Pooled => "pooled",
                HitRateMode::PerImage => "per-image",
            }
            .to_string(),
        }
    }
}

/// Where intermediates of one image under one fusion mode live.
pub fn image_dir(out: &Path, fusion: &str, image_id: &str) -> PathBuf {
    out.join("intermediates").join(fusion).join(image_id)
}

pub fn keypoints_file(out: &Path, fusion: &str) -> PathBuf {
    out.join("intermediates").join(fusion).join("keypoints.csv")
}

pub fn curves_file(dir: &Path, class_id: usize) -> PathBuf {
    dir.join(format!("curves_{class_id}.csv"))
}

#[derive(Debug, Clone)]
struct WsdeOutcome {
    islands: Vec<Island>,
    keypoints: Vec<KeyPoint>,
    converged: bool,
    hits: usize,
    misses: usize,
}

#[derive(Debug, Clone)]
struct CamOutcome {
    cam: Cam,
    deletion: FaithfulnessCurve,
    insertion: FaithfulnessCurve,
    wsde: Option<WsdeOutcome>,
}

#[derive(Debug, Clone)]
struct ClassOutcome {
    class_id: usize,
    gt_points: usize,
    cam: Option<CamOutcome>,
}

#[derive(Debug, Clone)]
struct FusionOutcome {
    fused: Tensor,
    pred: LabelMask,
    tally: ConfusionTally,
    classes: Vec<ClassOutcome>,
}

#[derive(Debug, Clone)]
struct ImageOutcome {
    gt: LabelMask,
    fusions: Vec<FusionOutcome>,
}

fn engine_error(image: &str, e: sprayeval_core::Error) -> Error {
    match e {
        sprayeval_core::Error::Engine(source) => Error::Engine { image: image.to_string(), source },
        other => Error::Core(other),
    }
}

fn process_image<E: InferenceEngine + ?Sized>(engine: &E, entry: &ImageEntry, cfg: &RunConfig) -> Result<ImageOutcome> {
    let id = entry.id.as_str();
    let image = load_image(&entry.image)?;
    let gt = load_mask(&entry.mask)?;
    let gt_points = if cfg.stage == Stage::Wsde {
        if entry.keypoints.is_none() {
            return Err(Error::Data(format!("test image {id} has no keypoint file")));
        }
        keypoints_by_class(entry)?
    } else {
        BTreeMap::new()
    };
    let output = engine.forward(&image).map_err(|source| Error::Engine { image: id.to_string(), source })?;
    let table = ClassTable::greenhouse();

    let mut fusions = Vec::with_capacity(cfg.fusions.len());
    for &mode in &cfg.fusions {
        let fusion = Fusion { mode, space: cfg.fusion_space };
        let fused = fuse(&output.main, &output.aux, fusion)?;
        let pred = argmax_mask(&fused);
        let tally = tally(&pred, &gt, NUM_CLASSES)
            .map_err(|e| Error::Data(format!("image {id}: {e}")))?;
        let mut classes = Vec::new();
        if cfg.stage >= Stage::Cam {
            for class_id in table.sprayed_classes() {
                let gt_here: &[KeyPoint] = gt_points.get(&class_id).map(Vec::as_slice).unwrap_or(&[]);
                let cam = match cfg.cam {
                    CamMethod::Ablation => ablation_cam(engine, &image, class_id, fusion),
                    CamMethod::Score => score_cam(engine, &image, class_id, fusion),
                };
                let cam = match cam {
                    Ok(cam) => cam,
                    Err(sprayeval_core::Error::ClassAbsent { .. }) => {
                        classes.push(ClassOutcome { class_id, gt_points: gt_here.len(), cam: None });
                        continue;
                    }
                    Err(e) => return Err(engine_error(id, e)),
                };
                let deletion = deletion_curve(engine, &image, &cam, class_id, fusion).map_err(|e| engine_error(id, e))?;
                let insertion = insertion_curve(engine, &image, &cam, class_id, fusion).map_err(|e| engine_error(id, e))?;
                let wsde = if cfg.stage == Stage::Wsde {
                    let islands = extract_islands(&cam, &pred, class_id, cfg.top_mode, cfg.min_island_px)?;
                    let clustering = cluster(&islands, class_id, cfg.cluster, &cfg.sprayer);
                    let keypoints = clustering.keypoints.points;
                    let pg = pointing_game(&keypoints, gt_here, cfg.sprayer.box_halfwidth_px);
                    Some(WsdeOutcome { islands, keypoints, converged: clustering.converged, hits: pg.hits, misses: pg.misses })
                } else {
                    None
                };
                classes.push(ClassOutcome {
                    class_id,
                    gt_points: gt_here.len(),
                    cam: Some(CamOutcome { cam, deletion, insertion, wsde }),
                });
            }
        }
        fusions.push(FusionOutcome { fused, pred, tally, classes });
    }
    Ok(ImageOutcome { gt, fusions })
}

/// Runs `cfg.jobs` workers over the test images with engines from `factory`.
/// Returns the model name and the outcomes in image order.
fn run_workers(
    factory: &dyn EngineFactory,
    entries: &[ImageEntry],
    cfg: &RunConfig,
) -> Result<(String, Vec<ImageOutcome>)> {
    let probe = factory.build().map_err(Error::EngineSetup)?;
    let model = probe.descriptor().name;
    let workers = cfg.jobs.min(entries.len()).max(1);
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let slots: Mutex<Vec<Option<Result<ImageOutcome>>>> = Mutex::new((0..entries.len()).map(|_| None).collect());
    let setup_error: Mutex<Option<EngineError>> = Mutex::new(None);

    let work = |engine: BoxedEngine| {
        let engine = CachedEngine::new(engine, cfg.cache_capacity);
        loop {
            if stop.load(Ordering::Relaxed) {
                break;
            }
            let i = next.fetch_add(1, Ordering::Relaxed);
            if i >= entries.len() {
                break;
            }
            let result = process_image(&engine, &entries[i], cfg);
            if result.is_err() {
                stop.store(true, Ordering::Relaxed);
            }
            slots.lock().unwrap_or_else(|p| p.into_inner())[i] = Some(result);
        }
    };

    let work = &work;
    thread::scope(|scope| {
        let mut probe = Some(probe);
        for _ in 0..workers {
            let engine = match probe.take() {
                Some(e) => Ok(e),
                None => factory.build(),
            };
            match engine {
                Ok(engine) => {
                    scope.spawn(move || work(engine));
                }
                Err(e) => {
                    *setup_error.lock().unwrap_or_else(|p| p.into_inner()) = Some(e);
                    stop.store(true, Ordering::Relaxed);
                    break;
                }
            }
        }
    });

    if let Some(e) = setup_error.into_inner().unwrap_or_else(|p| p.into_inner()) {
        return Err(Error::EngineSetup(e));
    }
    let mut outcomes = Vec::with_capacity(entries.len());
    for slot in slots.into_inner().unwrap_or_else(|p| p.into_inner()) {
        match slot {
            Some(Ok(o)) => outcomes.push(o),
            Some(Err(e)) => return Err(e),
            None => return Err(Error::Data("worker pool stopped before finishing".into())),
        }
    }
    Ok((model, outcomes))
}

fn write_curves(path: &Path, deletion: &[f64], insertion: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "fraction", "deletion", "insertion"])?;
    let n = deletion.len();
    for i in 0..n {
        let fraction = i as f64 / (n - 1) as f64;
        w.write_record([i.to_string(), fraction.to_string(), deletion[i].to_string(), insertion[i].to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_curves(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut r = csv::Reader::from_path(path)?;
    let (mut del, mut ins) = (Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec?;
        let parse = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Data(format!("{}: bad curve row", path.display())))
        };
        del.push(parse(2)?);
        ins.push(parse(3)?);
    }
    Ok((del, ins))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Runs the pipeline with the engine named in the config.
pub fn run_pipeline(cfg: &RunConfig) -> Result<Bundle> {
    run_pipeline_with(cfg, &cfg.engine)
}

/// Runs the pipeline over the test split, persists intermediates and
/// `bundle.json` under `cfg.out`, and returns the bundle.
pub fn run_pipeline_with(cfg: &RunConfig, factory: &dyn EngineFactory) -> Result<Bundle> {
    cfg.validate()?;
    let (index, _) = ingest(&cfg.dataset, HitPopulation::All)?;
    let entries: Vec<ImageEntry> = index.split(Split::Test).cloned().collect();
    let (model, outcomes) = run_workers(factory, &entries, cfg)?;

    create_dir(&cfg.out)?;
    let mut bundle = Bundle::empty(cfg.bundle_config(&model));
    bundle.images = entries.iter().map(|e| e.id.clone()).collect();
    let table = ClassTable::greenhouse();

    for (f, &mode) in cfg.fusions.iter().enumerate() {
        let fusion = mode.as_str();
        let mut total = ConfusionTally::zeros(NUM_CLASSES);
        let mut entries_here = Vec::new();
        let mut curves_here = Vec::new();
        let mut counts_per_image = Vec::new();
        let mut coverage_here: Vec<CoverageRow> = Vec::new();
        let mut predicted_rows = Vec::new();
        let mut unconverged = 0;

        for (entry, outcome) in entries.iter().zip(&outcomes) {
            let fo = &outcome.fusions[f];
            total += &fo.tally;
            let dir = image_dir(&cfg.out, fusion, &entry.id);
            create_dir(&dir)?;
            write_tensor(&fo.fused, dir.join("fused.tnsr"))?;
            write_mask(&fo.pred, dir.join("pred.lmsk"))?;

            let mut counts = Vec::new();
            for co in &fo.classes {
                let name = table.name(co.class_id).unwrap_or_default().to_string();
                let mut cc = ClassCounts { class_id: co.class_id, predicted: 0, ground_truth: co.gt_points, hits: 0, misses: 0 };
                match &co.cam {
                    None => bundle.notes.push(format!(
                        "{}: class {} ({name}) not predicted under {fusion}; CAM skipped",
                        entry.id, co.class_id
                    )),
                    Some(c) => {
                        write_tensor(c.cam.map(), dir.join(format!("cam_{}.tnsr", co.class_id)))?;
                        write_curves(&curves_file(&dir, co.class_id), c.deletion.confidences(), c.insertion.confidences())?;
                        entries_here.push(FaithfulnessEntry {
                            image_id: entry.id.clone(),
                            fusion: fusion.to_string(),
                            class_id: co.class_id,
                            name: name.clone(),
                            deletion_auc: auc(&c.deletion),
                            insertion_auc: auc(&c.insertion),
                        });
                        curves_here.push((c.deletion.confidences().to_vec(), c.insertion.confidences().to_vec()));
                        if let Some(w) = &c.wsde {
                            let mask = island_mask(&w.islands, fo.pred.height(), fo.pred.width());
                            write_mask(&mask, dir.join(format!("islands_{}.lmsk", co.class_id)))?;
                            if !w.converged {
                                unconverged += 1;
                                bundle.notes.push(format!(
                                    "{}: affinity propagation did not converge for class {} under {fusion}",
                                    entry.id, co.class_id
                                ));
                            }
                            cc.predicted = w.keypoints.len();
                            cc.hits = w.hits;
                            cc.misses = w.misses;
                            predicted_rows.extend(w.keypoints.iter().map(|p| KeypointRow {
                                image_id: entry.id.clone(),
                                class_id: co.class_id,
                                row: p.row,
                                col: p.col,
                            }));
                        }
                    }
                }
                counts.push(cc);
            }
            if cfg.stage == Stage::Wsde {
                for cc in &counts {
                    coverage_here.push(coverage_row(&entry.id, fusion, &outcome.gt, &fo.pred, cc, &cfg.sprayer));
                }
                counts_per_image.push(counts);
            }
        }

        bundle.segmentation.push(segmentation_table(&model, fusion, &total, cfg.include_background));
        if cfg.stage >= Stage::Cam {
            bundle.faithfulness_summary.push(faithfulness_summary(
                &model,
                fusion,
                cfg.cam.as_str(),
                &entries_here,
                &curves_here,
            ));
            bundle.faithfulness.extend(entries_here);
        }
        if cfg.stage == Stage::Wsde {
            write_keypoints(keypoints_file(&cfg.out, fusion), &predicted_rows)?;
            bundle.deposition.push(deposition_table(
                &model,
                fusion,
                cfg.cluster.as_str(),
                &counts_per_image,
                &cfg.sprayer,
                cfg.hit_rate_mode,
                unconverged,
            ));
            bundle.coverage.extend(coverage_here);
        }
    }

    let path = cfg.out.join(BUNDLE_FILE);
    let json = serde_json::to_string_pretty(&bundle)?;
    fs::write(&path, json).map_err(|e| Error::io(path, e))?;
    Ok(bundle)
}

pub fn read_bundle(dir: &Path) -> Result<Bundle> {
    let path = dir.join(BUNDLE_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}
