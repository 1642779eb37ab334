//! Recomputes every number of a bundle from the persisted intermediates and
//! the dataset, calling the owning modules directly.

use std::collections::BTreeMap;
use std::fmt::Debug;
use std::path::Path;

use sprayeval_core::cam::{Cam, CamMethod};
use sprayeval_core::faithfulness::{auc, CurveKind, FaithfulnessCurve};
use sprayeval_core::segmetrics::tally;
use sprayeval_core::wsde::{cluster, extract_islands, island_mask, pointing_game, ClassCounts, ClusterMethod, KeyPoint, TopMode};
use sprayeval_core::{argmax_mask, ClassTable, ConfusionTally, NUM_CLASSES};

use crate::bundle::{
    coverage_row, deposition_table, faithfulness_summary, segmentation_table, Bundle, DepositionTable,
    FaithfulnessEntry, FaithfulnessSummary, SegmentationTable,
};
use crate::dataset::{ingest, keypoints_by_class, load_mask, read_keypoints, HitPopulation, Split};
use crate::error::{Error, Result};
use crate::format::{read_mask, read_tensor};
use crate::pipeline::{curves_file, image_dir, keypoints_file, read_bundle};

pub const TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReplayReport {
    pub checked: usize,
    pub mismatches: Vec<String>,
}

impl ReplayReport {
    pub fn is_clean(&self) -> bool {
        self.mismatches.is_empty()
    }

    fn num(&mut self, what: &str, stored: f64, recomputed: f64) {
        self.checked += 1;
        if (stored - recomputed).abs() > TOLERANCE {
            self.mismatches.push(format!("{what}: stored {stored}, recomputed {recomputed}"));
        }
    }

    fn opt(&mut self, what: &str, stored: Option<f64>, recomputed: Option<f64>) {
        match (stored, recomputed) {
            (Some(a), Some(b)) => self.num(what, a, b),
            (a, b) => self.same(what, &a, &b),
        }
    }

    fn same<T: PartialEq + Debug>(&mut self, what: &str, stored: &T, recomputed: &T) {
        self.checked += 1;
        if stored != recomputed {
            self.mismatches.push(format!("{what}: stored {stored:?}, recomputed {recomputed:?}"));
        }
    }

    fn seg(&mut self, stored: &SegmentationTable, fresh: &SegmentationTable) {
        let at = format!("segmentation[{}]", fresh.fusion);
        self.same(&format!("{at}.classes"), &stored.classes.len(), &fresh.classes.len());
        for (a, b) in stored.classes.iter().zip(&fresh.classes) {
            let at = format!("{at}.class {}", b.class_id);
            self.same(&format!("{at}.id"), &a.class_id, &b.class_id);
            self.same(&format!("{at}.counts"), &(a.tp, a.fp, a.fn_), &(b.tp, b.fp, b.fn_));
            self.opt(&format!("{at}.pixel_accuracy"), a.pixel_accuracy, b.pixel_accuracy);
            self.opt(&format!("{at}.dice"), a.dice, b.dice);
            self.opt(&format!("{at}.iou"), a.iou, b.iou);
        }
        self.opt(&format!("{at}.miou"), stored.miou, fresh.miou);
        self.opt(&format!("{at}.miou_with_background"), stored.miou_with_background, fresh.miou_with_background);
        self.num(&format!("{at}.micro_f1"), stored.micro_f1, fresh.micro_f1);
        self.same(&format!("{at}.excluded"), &stored.excluded_classes, &fresh.excluded_classes);
    }

    fn faith(&mut self, stored: &[&FaithfulnessEntry], fresh: &[FaithfulnessEntry]) {
        self.same("faithfulness.len", &stored.len(), &fresh.len());
        for (a, b) in stored.iter().zip(fresh) {
            let at = format!("faithfulness[{} {} {}]", b.fusion, b.image_id, b.class_id);
            self.same(&format!("{at}.key"), &(&a.image_id, a.class_id), &(&b.image_id, b.class_id));
            self.num(&format!("{at}.deletion_auc"), a.deletion_auc, b.deletion_auc);
            self.num(&format!("{at}.insertion_auc"), a.insertion_auc, b.insertion_auc);
        }
    }

    fn summary(&mut self, stored: &FaithfulnessSummary, fresh: &FaithfulnessSummary) {
        let at = format!("faithfulness_summary[{}]", fresh.fusion);
        self.opt(&format!("{at}.mean_deletion"), stored.mean_deletion, fresh.mean_deletion);
        self.opt(&format!("{at}.mean_insertion"), stored.mean_insertion, fresh.mean_insertion);
        self.opt(&format!("{at}.difference"), stored.difference, fresh.difference);
        self.same(&format!("{at}.interpretable"), &stored.interpretable, &fresh.interpretable);
        self.same(&format!("{at}.classes"), &(stored.classes, stored.skipped_classes), &(fresh.classes, fresh.skipped_classes));
        for (name, a, b) in [
            ("deletion", &stored.mean_deletion_curve, &fresh.mean_deletion_curve),
            ("insertion", &stored.mean_insertion_curve, &fresh.mean_insertion_curve),
        ] {
            self.same(&format!("{at}.{name}_curve.len"), &a.len(), &b.len());
            for (i, (x, y)) in a.iter().zip(b).enumerate() {
                self.num(&format!("{at}.{name}_curve[{i}]"), *x, *y);
            }
        }
    }

    fn deposition(&mut self, stored: &DepositionTable, fresh: &DepositionTable) {
        let at = format!("deposition[{}]", fresh.fusion);
        self.same(&format!("{at}.classes"), &stored.classes.len(), &fresh.classes.len());
        for (a, b) in stored.classes.iter().zip(&fresh.classes) {
            let at = format!("{at}.class {}", b.class_id);
            self.same(&format!("{at}.ids"), &(a.class_id, a.sprayed_class_id), &(b.class_id, b.sprayed_class_id));
            self.num(&format!("{at}.gt_ul"), a.gt_ul, b.gt_ul);
            self.num(&format!("{at}.predicted_ul"), a.predicted_ul, b.predicted_ul);
            self.num(&format!("{at}.absolute_difference_ul"), a.absolute_difference_ul, b.absolute_difference_ul);
            self.num(&format!("{at}.hit_rate"), a.hit_rate, b.hit_rate);
            self.same(&format!("{at}.points"), &(a.predicted_points, a.gt_points), &(b.predicted_points, b.gt_points));
        }
        self.num(&format!("{at}.total_gt_ul"), stored.total_gt_ul, fresh.total_gt_ul);
        self.num(&format!("{at}.total_predicted_ul"), stored.total_predicted_ul, fresh.total_predicted_ul);
        self.num(
            &format!("{at}.total_absolute_difference_ul"),
            stored.total_absolute_difference_ul,
            fresh.total_absolute_difference_ul,
        );
        self.num(&format!("{at}.mean_hit_rate"), stored.mean_hit_rate, fresh.mean_hit_rate);
        self.same(&format!("{at}.unconverged"), &stored.unconverged, &fresh.unconverged);
    }
}

fn parse<T: std::str::FromStr<Err = sprayeval_core::Error>>(what: &str, s: &str) -> Result<T> {
    s.parse().map_err(|e| Error::Data(format!("bundle {what}: {e}")))
}

/// Replays the run stored in `out` (the directory holding `bundle.json`).
pub fn replay(out: &Path) -> Result<ReplayReport> {
    let bundle: Bundle = read_bundle(out)?;
    let cfg = &bundle.config;
    let calib = cfg.sprayer();
    let cam_method: CamMethod = parse("cam", &cfg.cam)?;
    let cluster_method: ClusterMethod = parse("cluster", &cfg.cluster)?;
    let top_mode: TopMode = parse("top_mode", &cfg.top_mode)?;
    let with_cam = cfg.stage != "seg";
    let with_wsde = cfg.stage == "wsde";
    let table = ClassTable::greenhouse();

    let (index, _) = ingest(&cfg.dataset, HitPopulation::All)?;
    let entries: Vec<_> = index.split(Split::Test).cloned().collect();
    let mut report = ReplayReport::default();
    report.same("images", &bundle.images, &entries.iter().map(|e| e.id.clone()).collect());

    for fusion in &cfg.fusions {
        let mut total = ConfusionTally::zeros(NUM_CLASSES);
        let mut faith = Vec::new();
        let mut curves = Vec::new();
        let mut per_image = Vec::new();
        let mut coverage = Vec::new();
        let mut unconverged = 0;
        let mut stored_points: BTreeMap<(String, usize), Vec<KeyPoint>> = BTreeMap::new();
        if with_wsde {
            for row in read_keypoints(keypoints_file(out, fusion))? {
                stored_points.entry((row.image_id.clone(), row.class_id)).or_default().push(row.point());
            }
        }

        for entry in &entries {
            let dir = image_dir(out, fusion, &entry.id);
            let pred = read_mask(dir.join("pred.lmsk"))?;
            let fused = read_tensor(dir.join("fused.tnsr"))?;
            report.same(&format!("{fusion}/{}/pred", entry.id), &pred, &argmax_mask(&fused));
            let gt = load_mask(&entry.mask)?;
            total += &tally(&pred, &gt, NUM_CLASSES)?;
            if !with_cam {
                continue;
            }
            let gt_points = if with_wsde { keypoints_by_class(entry)? } else { BTreeMap::new() };
            let mut counts = Vec::new();
            for class_id in table.sprayed_classes() {
                let gt_here: &[KeyPoint] = gt_points.get(&class_id).map(Vec::as_slice).unwrap_or(&[]);
                let mut cc = ClassCounts { class_id, predicted: 0, ground_truth: gt_here.len(), hits: 0, misses: 0 };
                let cam_path = dir.join(format!("cam_{class_id}.tnsr"));
                if cam_path.is_file() {
                    let (del, ins) = crate::pipeline::read_curves(&curves_file(&dir, class_id))?;
                    let deletion = FaithfulnessCurve::new(CurveKind::Deletion, del.clone())?;
                    let insertion = FaithfulnessCurve::new(CurveKind::Insertion, ins.clone())?;
                    faith.push(FaithfulnessEntry {
                        image_id: entry.id.clone(),
                        fusion: fusion.clone(),
                        class_id,
                        name: table.name(class_id).unwrap_or_default().to_string(),
                        deletion_auc: auc(&deletion),
                        insertion_auc: auc(&insertion),
                    });
                    curves.push((del, ins));
                    if with_wsde {
                        let cam = Cam::from_map(read_tensor(&cam_path)?, class_id, cam_method)?;
                        let islands = extract_islands(&cam, &pred, class_id, top_mode, cfg.min_island_px)?;
                        let stored_islands = read_mask(dir.join(format!("islands_{class_id}.lmsk")))?;
                        report.same(
                            &format!("{fusion}/{}/islands_{class_id}", entry.id),
                            &stored_islands,
                            &island_mask(&islands, pred.height(), pred.width()),
                        );
                        let clustering = cluster(&islands, class_id, cluster_method, &calib);
                        if !clustering.converged {
                            unconverged += 1;
                        }
                        let points = clustering.keypoints.points;
                        let stored = stored_points.remove(&(entry.id.clone(), class_id)).unwrap_or_default();
                        report.same(&format!("{fusion}/{}/keypoints_{class_id}", entry.id), &stored, &points);
                        let pg = pointing_game(&points, gt_here, calib.box_halfwidth_px);
                        cc.predicted = points.len();
                        cc.hits = pg.hits;
                        cc.misses = pg.misses;
                    }
                }
                counts.push(cc);
            }
            if with_wsde {
                for cc in &counts {
                    coverage.push(coverage_row(&entry.id, fusion, &gt, &pred, cc, &calib));
                }
                per_image.push(counts);
            }
        }

        let stored_seg = bundle.segmentation.iter().find(|t| &t.fusion == fusion);
        let fresh_seg = segmentation_table(&cfg.model, fusion, &total, cfg.include_background);
        match stored_seg {
            Some(s) => report.seg(s, &fresh_seg),
            None => report.mismatches.push(format!("segmentation table for {fusion} missing")),
        }
        if with_cam {
            let stored: Vec<&FaithfulnessEntry> = bundle.faithfulness.iter().filter(|e| &e.fusion == fusion).collect();
            report.faith(&stored, &faith);
            let fresh = faithfulness_summary(&cfg.model, fusion, &cfg.cam, &faith, &curves);
            match bundle.faithfulness_summary.iter().find(|s| &s.fusion == fusion) {
                Some(s) => report.summary(s, &fresh),
                None => report.mismatches.push(format!("faithfulness summary for {fusion} missing")),
            }
        }
        if with_wsde {
            report.same(&format!("{fusion}/keypoints.csv leftovers"), &stored_points.len(), &0);
            let fresh = deposition_table(&cfg.model, fusion, &cfg.cluster, &per_image, &calib, cfg.hit_mode(), unconverged);
            match bundle.deposition.iter().find(|d| &d.fusion == fusion) {
                Some(d) => report.deposition(d, &fresh),
                None => report.mismatches.push(format!("deposition table for {fusion} missing")),
            }
            let stored: Vec<_> = bundle.coverage.iter().filter(|r| &r.fusion == fusion).collect();
            report.same(&format!("coverage[{fusion}].len"), &stored.len(), &coverage.len());
            for (a, b) in stored.iter().zip(&coverage) {
                let at = format!("coverage[{fusion} {} {}]", b.image_id, b.class_id);
                report.same(&format!("{at}.key"), &(&a.image_id, a.class_id), &(&b.image_id, b.class_id));
                report.num(&format!("{at}.gt_cm2"), a.gt_cm2, b.gt_cm2);
                report.num(&format!("{at}.predicted_cm2"), a.predicted_cm2, b.predicted_cm2);
                report.num(&format!("{at}.gt_ul"), a.gt_ul, b.gt_ul);
                report.num(&format!("{at}.predicted_ul"), a.predicted_ul, b.predicted_ul);
                report.num(&format!("{at}.hit_rate"), a.hit_rate, b.hit_rate);
                report.same(
                    &format!("{at}.counts"),
                    &(a.gt_points, a.predicted_points, a.hits, a.misses),
                    &(b.gt_points, b.predicted_points, b.hits, b.misses),
                );
            }
        }
    }
    Ok(report)
}
