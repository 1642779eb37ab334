//! CSV, JSON, SVG and PNG emission for a report bundle.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma, Rgb, RgbImage};
use serde::Serialize;
use sprayeval_core::{ClassTable, LabelMask, Tensor};

use crate::bundle::Bundle;
use crate::dataset::{ingest, keypoints_by_class, HitPopulation};
use crate::error::{Error, Result};
use crate::format::{read_mask, read_tensor};
use crate::pipeline::{image_dir, keypoints_file};

const PALETTE: [[u8; 3]; 7] = [
    [40, 30, 20],
    [60, 170, 60],
    [170, 210, 80],
    [120, 150, 40],
    [50, 110, 230],
    [150, 90, 230],
    [230, 90, 170],
];

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value)?;
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Grouped bars of mean Deletion and Insertion AUC per fusion mode.
pub fn faithfulness_bars_svg(bundle: &Bundle) -> String {
    let groups = &bundle.faithfulness_summary;
    let (left, top, plot_h, group_w) = (60.0, 30.0, 200.0, 110.0);
    let width = left + group_w * groups.len().max(1) as f64 + 40.0;
    let height = top + plot_h + 60.0;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n"
    );
    svg.push_str(&format!(
        "<text x=\"{left}\" y=\"18\" font-family=\"sans-serif\" font-size=\"13\">Mean Deletion vs Insertion AUC ({})</text>\n",
        escape(&bundle.config.cam)
    ));
    let base = top + plot_h;
    svg.push_str(&format!(
        "<line x1=\"{left}\" y1=\"{base}\" x2=\"{}\" y2=\"{base}\" stroke=\"black\"/>\n",
        width - 20.0
    ));
    svg.push_str(&format!("<line x1=\"{left}\" y1=\"{top}\" x2=\"{left}\" y2=\"{base}\" stroke=\"black\"/>\n"));
    for tick in 0..=4 {
        let v = tick as f64 / 4.0;
        let y = base - v * plot_h;
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">{v:.2}</text>\n",
            left - 6.0,
            y + 3.0
        ));
    }
    for (i, g) in groups.iter().enumerate() {
        let x0 = left + 15.0 + group_w * i as f64;
        for (j, (value, colour, label)) in [
            (g.mean_deletion, "#d9534f", "deletion"),
            (g.mean_insertion, "#5b9bd5", "insertion"),
        ]
        .into_iter()
        .enumerate()
        {
            let v = value.unwrap_or(0.0).clamp(0.0, 1.0);
            let x = x0 + 40.0 * j as f64;
            svg.push_str(&format!(
                "<rect x=\"{x}\" y=\"{}\" width=\"36\" height=\"{}\" fill=\"{colour}\"><title>{label} {}</title></rect>\n",
                base - v * plot_h,
                v * plot_h,
                opt(value)
            ));
        }
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{}</text>\n",
            x0 + 38.0,
            base + 18.0,
            escape(&g.fusion.to_uppercase())
        ));
    }
    svg.push_str(&format!(
        "<rect x=\"{left}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"#d9534f\"/><text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">Deletion</text>\n",
        base + 32.0,
        left + 14.0,
        base + 41.0
    ));
    svg.push_str(&format!(
        "<rect x=\"{}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"#5b9bd5\"/><text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">Insertion</text>\n",
        left + 80.0,
        base + 32.0,
        left + 94.0,
        base + 41.0
    ));
    svg.push_str("</svg>\n");
    svg
}

/// Mean Deletion and Insertion curves of one fusion mode.
pub fn curves_svg(title: &str, deletion: &[f64], insertion: &[f64]) -> String {
    let (left, top, w, h) = (50.0, 30.0, 300.0, 200.0);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\">\n",
        left + w + 20.0,
        top + h + 40.0
    );
    svg.push_str(&format!(
        "<text x=\"{left}\" y=\"18\" font-family=\"sans-serif\" font-size=\"13\">{}</text>\n",
        escape(title)
    ));
    svg.push_str(&format!(
        "<rect x=\"{left}\" y=\"{top}\" width=\"{w}\" height=\"{h}\" fill=\"none\" stroke=\"black\"/>\n"
    ));
    for (ys, colour) in [(deletion, "#d9534f"), (insertion, "#5b9bd5")] {
        if ys.len() < 2 {
            continue;
        }
        let points: Vec<String> = ys
            .iter()
            .enumerate()
            .map(|(i, y)| {
                let x = left + w * i as f64 / (ys.len() - 1) as f64;
                let y = top + h * (1.0 - y.clamp(0.0, 1.0));
                format!("{x:.2},{y:.2}")
            })
            .collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{colour}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            points.join(" ")
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">fraction of pixels</text>\n",
        left + w / 2.0,
        top + h + 25.0
    ));
    svg.push_str("</svg>\n");
    svg
}

fn heat(v: f32) -> [u8; 3] {
    let v = v.clamp(0.0, 1.0);
    let r = (255.0 * (1.5 - (4.0 * v - 3.0).abs()).clamp(0.0, 1.0)) as u8;
    let g = (255.0 * (1.5 - (4.0 * v - 2.0).abs()).clamp(0.0, 1.0)) as u8;
    let b = (255.0 * (1.5 - (4.0 * v - 1.0).abs()).clamp(0.0, 1.0)) as u8;
    [r, g, b]
}

pub fn prediction_png(pred: &LabelMask) -> RgbImage {
    RgbImage::from_fn(pred.width() as u32, pred.height() as u32, |x, y| {
        Rgb(PALETTE[usize::from(pred.get(y as usize, x as usize)).min(6)])
    })
}

/// CAM as an 8-bit grayscale image.
pub fn cam_png(cam: &Tensor) -> GrayImage {
    let (_, h, w) = cam.dims();
    let data = cam.data();
    GrayImage::from_fn(w as u32, h as u32, |x, y| {
        Luma([(data[y as usize * w + x as usize].clamp(0.0, 1.0) * 255.0).round() as u8])
    })
}

fn cross(img: &mut RgbImage, row: usize, col: usize, colour: [u8; 3]) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    for d in -2i64..=2 {
        for (y, x) in [(row as i64 + d, col as i64), (row as i64, col as i64 + d)] {
            if (0..h).contains(&y) && (0..w).contains(&x) {
                img.put_pixel(x as u32, y as u32, Rgb(colour));
            }
        }
    }
}

/// Prediction blended with the CAM heat map, islands outlined in white,
/// predicted keypoints in red and ground-truth keypoints in green.
pub fn wsde_png(
    pred: &LabelMask,
    cam: &Tensor,
    islands: Option<&LabelMask>,
    predicted: &[(usize, usize)],
    ground_truth: &[(usize, usize)],
) -> RgbImage {
    let w = pred.width();
    let data = cam.data();
    let mut img = RgbImage::from_fn(w as u32, pred.height() as u32, |x, y| {
        let p = y as usize * w + x as usize;
        let base = PALETTE[usize::from(pred.labels()[p]).min(6)];
        let hot = heat(data[p]);
        let mut px = [0u8; 3];
        for c in 0..3 {
            px[c] = ((u16::from(base[c]) + u16::from(hot[c])) / 2) as u8;
        }
        if islands.is_some_and(|m| m.labels()[p] != 0) {
            px = [255, 255, 255];
        }
        Rgb(px)
    });
    for &(r, c) in ground_truth {
        cross(&mut img, r, c, [0, 255, 0]);
    }
    for &(r, c) in predicted {
        cross(&mut img, r, c, [255, 0, 0]);
    }
    img
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn table_files(bundle: &Bundle, outdir: &Path) -> Result<()> {
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for t in &bundle.segmentation {
        for c in &t.classes {
            rows.push(vec![
                t.model.clone(),
                t.fusion.clone(),
                c.class_id.to_string(),
                c.name.clone(),
                opt(c.pixel_accuracy),
                opt(c.dice),
                opt(c.iou),
                c.tp.to_string(),
                c.fp.to_string(),
                c.fn_.to_string(),
            ]);
        }
        summary.push(vec![
            t.model.clone(),
            t.fusion.clone(),
            opt(t.miou),
            opt(t.miou_with_background),
            t.micro_f1.to_string(),
            t.excluded_classes.to_string(),
        ]);
    }
    write_csv(
        &outdir.join("segmentation.csv"),
        &["model", "fusion", "class_id", "class", "pixel_accuracy", "dice", "iou", "tp", "fp", "fn"],
        &rows,
    )?;
    write_csv(
        &outdir.join("segmentation_summary.csv"),
        &["model", "fusion", "miou", "miou_with_background", "micro_f1", "excluded_classes"],
        &summary,
    )?;
    write_json(&outdir.join("segmentation.json"), &bundle.segmentation)?;

    let rows: Vec<Vec<String>> = bundle
        .faithfulness
        .iter()
        .map(|e| {
            vec![
                e.image_id.clone(),
                e.fusion.clone(),
                e.class_id.to_string(),
                e.name.clone(),
                e.deletion_auc.to_string(),
                e.insertion_auc.to_string(),
            ]
        })
        .collect();
    write_csv(
        &outdir.join("faithfulness.csv"),
        &["image_id", "fusion", "class_id", "class", "deletion_auc", "insertion_auc"],
        &rows,
    )?;
    let rows: Vec<Vec<String>> = bundle
        .faithfulness_summary
        .iter()
        .map(|s| {
            vec![
                s.model.clone(),
                s.fusion.clone(),
                s.cam.clone(),
                opt(s.mean_deletion),
                opt(s.mean_insertion),
                opt(s.difference),
                s.interpretable.to_string(),
                s.classes.to_string(),
                s.skipped_classes.to_string(),
            ]
        })
        .collect();
    write_csv(
        &outdir.join("faithfulness_summary.csv"),
        &[
            "model",
            "fusion",
            "cam",
            "mean_deletion",
            "mean_insertion",
            "difference",
            "interpretable",
            "classes",
            "skipped_classes",
        ],
        &rows,
    )?;
    #[derive(Serialize)]
    struct Faithfulness<'a> {
        entries: &'a [crate::bundle::FaithfulnessEntry],
        summary: &'a [crate::bundle::FaithfulnessSummary],
    }
    write_json(
        &outdir.join("faithfulness.json"),
        &Faithfulness { entries: &bundle.faithfulness, summary: &bundle.faithfulness_summary },
    )?;

    let table = ClassTable::greenhouse();
    let bases: Vec<usize> = table.sprayed_classes().filter_map(|s| table.base_of(s)).collect();
    let mut header: Vec<String> = vec!["model".into(), "fusion".into(), "method".into()];
    header.extend(bases.iter().map(|&b| table.name(b).unwrap_or_default().to_string()));
    header.extend(["total".to_string(), "mean_hit_rate".to_string()]);
    let mut wide = Vec::new();
    let mut long = Vec::new();
    for d in &bundle.deposition {
        let mut row = vec![d.model.clone(), d.fusion.clone(), d.method.clone()];
        for &b in &bases {
            row.push(d.classes.iter().find(|c| c.class_id == b).map(|c| c.absolute_difference_ul.to_string()).unwrap_or_default());
        }
        row.push(d.total_absolute_difference_ul.to_string());
        row.push(d.mean_hit_rate.to_string());
        wide.push(row);
        for c in &d.classes {
            long.push(vec![
                d.model.clone(),
                d.fusion.clone(),
                d.method.clone(),
                c.class_id.to_string(),
                c.name.clone(),
                c.gt_ul.to_string(),
                c.predicted_ul.to_string(),
                c.absolute_difference_ul.to_string(),
                c.hit_rate.to_string(),
                c.gt_points.to_string(),
                c.predicted_points.to_string(),
            ]);
        }
    }
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(&outdir.join("deposition.csv"), &header_refs, &wide)?;
    write_csv(
        &outdir.join("deposition_classes.csv"),
        &[
            "model",
            "fusion",
            "method",
            "class_id",
            "class",
            "gt_ul",
            "predicted_ul",
            "absolute_difference_ul",
            "hit_rate",
            "gt_points",
            "predicted_points",
        ],
        &long,
    )?;
    write_json(&outdir.join("deposition.json"), &bundle.deposition)?;

    let rows: Vec<Vec<String>> = bundle
        .coverage
        .iter()
        .map(|r| {
            vec![
                r.image_id.clone(),
                r.fusion.clone(),
                r.class_id.to_string(),
                r.name.clone(),
                r.gt_cm2.to_string(),
                r.predicted_cm2.to_string(),
                r.gt_ul.to_string(),
                r.predicted_ul.to_string(),
                r.gt_points.to_string(),
                r.predicted_points.to_string(),
                r.hits.to_string(),
                r.misses.to_string(),
                r.hit_rate.to_string(),
            ]
        })
        .collect();
    write_csv(
        &outdir.join("coverage.csv"),
        &[
            "image_id",
            "fusion",
            "class_id",
            "class",
            "gt_cm2",
            "predicted_cm2",
            "gt_ul",
            "predicted_ul",
            "gt_points",
            "predicted_points",
            "hits",
            "misses",
            "hit_rate",
        ],
        &rows,
    )?;
    write_json(&outdir.join("coverage.json"), &bundle.coverage)?;
    Ok(())
}

fn save_png<P, C>(img: &image::ImageBuffer<P, C>, path: PathBuf) -> Result<()>
where
    P: image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
    C: std::ops::Deref<Target = [P::Subpixel]>,
{
    img.save_with_format(&path, image::ImageFormat::Png)?;
    Ok(())
}

fn overlays(bundle: &Bundle, run_dir: &Path, outdir: &Path) -> Result<()> {
    let table = ClassTable::greenhouse();
    let gt_points = ingest(&bundle.config.dataset, HitPopulation::All).ok().map(|(index, _)| index);
    for fusion in &bundle.config.fusions {
        let dir = outdir.join("overlays").join(fusion);
        create_dir(&dir)?;
        let predicted = crate::dataset::read_keypoints(keypoints_file(run_dir, fusion)).unwrap_or_default();
        for id in &bundle.images {
            let src = image_dir(run_dir, fusion, id);
            let pred_path = src.join("pred.lmsk");
            if !pred_path.is_file() {
                continue;
            }
            let pred = read_mask(&pred_path)?;
            save_png(&prediction_png(&pred), dir.join(format!("{id}_pred.png")))?;
            let gt = gt_points
                .as_ref()
                .and_then(|index| index.get(id))
                .and_then(|entry| keypoints_by_class(entry).ok())
                .unwrap_or_default();
            for class_id in table.sprayed_classes() {
                let cam_path = src.join(format!("cam_{class_id}.tnsr"));
                if !cam_path.is_file() {
                    continue;
                }
                let cam = read_tensor(&cam_path)?;
                save_png(&cam_png(&cam), dir.join(format!("{id}_cam_{class_id}.png")))?;
                let islands_path = src.join(format!("islands_{class_id}.lmsk"));
                let islands = if islands_path.is_file() { Some(read_mask(&islands_path)?) } else { None };
                let pred_pts: Vec<(usize, usize)> = predicted
                    .iter()
                    .filter(|r| &r.image_id == id && r.class_id == class_id)
                    .map(|r| (r.row, r.col))
                    .collect();
                let gt_pts: Vec<(usize, usize)> =
                    gt.get(&class_id).map(|v| v.iter().map(|p| (p.row, p.col)).collect()).unwrap_or_default();
                save_png(
                    &wsde_png(&pred, &cam, islands.as_ref(), &pred_pts, &gt_pts),
                    dir.join(format!("{id}_wsde_{class_id}.png")),
                )?;
            }
        }
    }
    Ok(())
}

/// Writes every table as CSV and JSON plus the SVG charts into `outdir`.
/// With `run_dir` set, PNG overlays are drawn from its intermediates.
pub fn render_reports(bundle: &Bundle, run_dir: Option<&Path>, outdir: &Path) -> Result<()> {
    create_dir(outdir)?;
    table_files(bundle, outdir)?;
    let path = outdir.join("faithfulness_bars.svg");
    fs::write(&path, faithfulness_bars_svg(bundle)).map_err(|e| Error::io(&path, e))?;
    for s in &bundle.faithfulness_summary {
        let path = outdir.join(format!("curves_{}.svg", s.fusion));
        let title = format!("{} {} {}", s.model, s.fusion.to_uppercase(), s.cam);
        fs::write(&path, curves_svg(&title, &s.mean_deletion_curve, &s.mean_insertion_curve))
            .map_err(|e| Error::io(&path, e))?;
    }
    if let Some(run_dir) = run_dir {
        overlays(bundle, run_dir, outdir)?;
    }
    Ok(())
}
