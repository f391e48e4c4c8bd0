//! Raster, weight, stain-model, annotation and report files.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nuclei_core::fcn::{decode_weights, encode_weights, EpochRecord, Model, UNetSpec};
use nuclei_core::groundtruth::{Instance, InstanceSet};
use nuclei_core::metrics::RunReport;
use nuclei_core::stainsep::StainModel;
use nuclei_core::{Mask, Plane, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Context, Error, Result};

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "tif", "tiff"];

pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).at(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    let data = img.pixels().map(|p| p.0).collect();
    Ok(RgbImage::new(h as usize, w as usize, data)?)
}

pub fn write_rgb_png(path: &Path, img: &RgbImage) -> Result<()> {
    let flat: Vec<u8> = img.data.iter().flatten().copied().collect();
    image::save_buffer(path, &flat, img.width as u32, img.height as u32, image::ExtendedColorType::Rgb8).at(path)
}

pub fn write_gray_png(path: &Path, height: usize, width: usize, gray: &[u8]) -> Result<()> {
    image::save_buffer(path, gray, width as u32, height as u32, image::ExtendedColorType::L8).at(path)
}

/// Density in `[0, 1]` to 8-bit gray, dark where dense.
pub fn density_to_gray(plane: &Plane) -> Vec<u8> {
    plane
        .data
        .iter()
        .map(|&d| (255.0 * (1.0 - d.clamp(0.0, 1.0))).round() as u8)
        .collect()
}

/// Grayscale RGB rendering of a density plane.
pub fn density_to_rgb(plane: &Plane) -> RgbImage {
    let gray = density_to_gray(plane);
    RgbImage::from_gray(plane.height, plane.width, &gray).unwrap_or_else(|_| unreachable!())
}

pub fn write_mask_png(path: &Path, mask: &Mask) -> Result<()> {
    let gray: Vec<u8> = mask.data.iter().map(|&m| if m { 255 } else { 0 }).collect();
    write_gray_png(path, mask.height, mask.width, &gray)
}

pub fn read_mask_png(path: &Path) -> Result<Mask> {
    let img = image::open(path).at(path)?.to_luma8();
    let (w, h) = img.dimensions();
    Ok(Mask::new(h as usize, w as usize, img.pixels().map(|p| p.0[0] > 127).collect())?)
}

/// Layout file of a tile directory. Tiles are `{row}_{col}.png` where row
/// and col count tiles from the top-left; edge tiles may be smaller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TileManifest {
    pub height: usize,
    pub width: usize,
    pub tile_size: usize,
}

pub const MANIFEST: &str = "manifest.json";

pub fn is_tile_dir(path: &Path) -> bool {
    path.is_dir() && path.join(MANIFEST).is_file()
}

pub fn write_tile_dir(dir: &Path, img: &RgbImage, tile_size: usize) -> Result<()> {
    if tile_size == 0 {
        return Err(Error::Usage("tile size must be positive".into()));
    }
    fs::create_dir_all(dir).at(dir)?;
    let manifest = TileManifest {
        height: img.height,
        width: img.width,
        tile_size,
    };
    write_json(&dir.join(MANIFEST), &manifest)?;
    for (ti, r) in (0..img.height).step_by(tile_size).enumerate() {
        for (tj, c) in (0..img.width).step_by(tile_size).enumerate() {
            let h = tile_size.min(img.height - r);
            let w = tile_size.min(img.width - c);
            write_rgb_png(&dir.join(format!("{ti}_{tj}.png")), &img.window(r, c, h, w, [255; 3]))?;
        }
    }
    Ok(())
}

pub fn read_tile_dir(dir: &Path) -> Result<RgbImage> {
    let manifest: TileManifest = read_json(&dir.join(MANIFEST))?;
    if manifest.tile_size == 0 {
        return Err(Error::Data(format!("{}: tile_size must be positive", dir.display())));
    }
    let mut img = RgbImage::filled(manifest.height, manifest.width, [255; 3]);
    for (ti, r) in (0..manifest.height).step_by(manifest.tile_size).enumerate() {
        for (tj, c) in (0..manifest.width).step_by(manifest.tile_size).enumerate() {
            let path = dir.join(format!("{ti}_{tj}.png"));
            let tile = read_rgb(&path)?;
            let h = manifest.tile_size.min(manifest.height - r);
            let w = manifest.tile_size.min(manifest.width - c);
            if (tile.height, tile.width) != (h, w) {
                return Err(Error::Data(format!(
                    "{}: expected a {h}x{w} tile, found {}x{}",
                    path.display(),
                    tile.height,
                    tile.width
                )));
            }
            for rr in 0..h {
                let dst = (r + rr) * manifest.width + c;
                img.data[dst..dst + w].copy_from_slice(&tile.data[rr * w..(rr + 1) * w]);
            }
        }
    }
    Ok(img)
}

/// Reads a single raster or a tile directory.
pub fn read_input(path: &Path) -> Result<RgbImage> {
    if is_tile_dir(path) {
        read_tile_dir(path)
    } else {
        read_rgb(path)
    }
}

/// Image files directly inside `dir`, sorted, as `(stem, path)`.
pub fn list_images(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).at(dir)? {
        let path = entry.at(dir)?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if path.is_file() && ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            // mask and probability outputs live next to inputs in some layouts
            if !stem.ends_with(".mask") && !stem.ends_with(".prob") {
                out.push((stem, path));
            }
        }
    }
    out.sort();
    Ok(out)
}

pub fn write_weights(path: &Path, model: &Model) -> Result<()> {
    fs::write(path, encode_weights(model)).at(path)
}

pub fn read_weights(path: &Path, spec: Option<&UNetSpec>) -> Result<Model> {
    let bytes = fs::read(path).at(path)?;
    decode_weights(&bytes, spec).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

pub fn write_stain_model(path: &Path, model: &StainModel) -> Result<()> {
    fs::write(path, model.to_text()).at(path)
}

pub fn read_stain_model(path: &Path) -> Result<StainModel> {
    let text = fs::read_to_string(path).at(path)?;
    StainModel::from_text(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// One line of an instance annotation file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceRecord {
    pub id: u32,
    pub height: usize,
    pub width: usize,
    /// Row-major `[start, length, ...]` runs of the instance mask.
    pub rle: Vec<u64>,
    /// Informational; recomputed from the mask on read.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centroid: Option<[f64; 2]>,
}

pub fn write_instances(path: &Path, set: &InstanceSet) -> Result<()> {
    let file = fs::File::create(path).at(path)?;
    let mut out = BufWriter::new(file);
    for inst in &set.instances {
        let (r, c) = inst.centroid();
        let rec = InstanceRecord {
            id: inst.id,
            height: set.height,
            width: set.width,
            rle: inst.to_runs(set.width),
            centroid: Some([r, c]),
        };
        serde_json::to_writer(&mut out, &rec).at(path)?;
        out.write_all(b"\n").at(path)?;
    }
    out.flush().at(path)
}

/// Reads an annotation file. An empty file has no canvas size of its own,
/// so `canvas` must then be supplied.
pub fn read_instances(path: &Path, canvas: Option<(usize, usize)>) -> Result<InstanceSet> {
    let file = fs::File::open(path).at(path)?;
    let mut dims = canvas;
    let mut instances = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.at(path)?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: InstanceRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), n + 1)))?;
        match dims {
            None => dims = Some((rec.height, rec.width)),
            Some(d) if d != (rec.height, rec.width) => {
                return Err(Error::Data(format!(
                    "{}:{}: canvas {}x{} differs from {}x{}",
                    path.display(),
                    n + 1,
                    rec.height,
                    rec.width,
                    d.0,
                    d.1
                )))
            }
            _ => {}
        }
        let inst = Instance::from_runs(rec.id, rec.height, rec.width, &rec.rle)
            .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), n + 1)))?;
        instances.push(inst);
    }
    let (h, w) = dims.ok_or_else(|| {
        Error::Data(format!("{}: no instances and no image to take the canvas size from", path.display()))
    })?;
    Ok(InstanceSet::new(h, w, instances)?)
}

pub fn write_centroids(path: &Path, centroids: &[(f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).at(path)?;
    w.write_record(["id", "row", "col"]).at(path)?;
    for (i, (r, c)) in centroids.iter().enumerate() {
        w.write_record([(i + 1).to_string(), format!("{r:.3}"), format!("{c:.3}")]).at(path)?;
    }
    w.flush().at(path)
}

pub fn read_centroids(path: &Path) -> Result<Vec<(f64, f64)>> {
    let mut rdr = csv::Reader::from_path(path).at(path)?;
    let headers = rdr.headers().at(path)?.clone();
    if headers.iter().collect::<Vec<_>>() != ["id", "row", "col"] {
        return Err(Error::Data(format!("{}: header must be id,row,col", path.display())));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.at(path)?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| Error::Data(format!("{}: bad number in row {:?}", path.display(), rec)))
        };
        out.push((num(1)?, num(2)?));
    }
    Ok(out)
}

pub fn write_loss_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).at(path)?;
    w.write_record(["epoch", "lr", "loss", "branch_fraction"]).at(path)?;
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            format!("{:e}", r.lr),
            format!("{:.6}", r.loss),
            r.branch_fraction.map(|f| format!("{f:.4}")).unwrap_or_default(),
        ])
        .at(path)?;
    }
    w.flush().at(path)
}

/// Writes `metrics.csv` (one row per image, then a pooled `ALL` row) and
/// `metrics.json` into `dir`.
pub fn write_metrics(dir: &Path, report: &RunReport) -> Result<()> {
    let path = dir.join("metrics.csv");
    let mut w = csv::Writer::from_path(&path).at(&path)?;
    w.write_record(["image_id", "tp", "fp", "fn", "precision", "recall", "f1", "dice"]).at(&path)?;
    let row = |id: &str, s: &nuclei_core::metrics::DetectionScores, dice: f64| {
        [
            id.to_string(),
            s.tp.to_string(),
            s.fp.to_string(),
            s.fn_.to_string(),
            format!("{:.6}", s.precision),
            format!("{:.6}", s.recall),
            format!("{:.6}", s.f1),
            format!("{dice:.6}"),
        ]
    };
    for img in &report.images {
        w.write_record(row(&img.image_id, &img.scores, img.dice)).at(&path)?;
    }
    w.write_record(row("ALL", &report.pooled, report.mean_dice)).at(&path)?;
    w.flush().at(&path)?;
    write_json(&dir.join("metrics.json"), report)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::io(path, e))?;
    text.push('\n');
    fs::write(path, text).at(path)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).at(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}
