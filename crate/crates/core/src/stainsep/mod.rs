//! Stain separation by sparse non-negative matrix factorization of
//! Beer-Lambert optical densities, plus H-channel extraction, basis swap
//! for IHC, and structure-preserving colour normalization.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::raster::{Plane, RgbImage};
use crate::stats;

/// Incident light intensity.
pub const I0: f64 = 255.0;
/// Guard added to intensities so black pixels keep a finite density.
pub const OD_GUARD: f64 = 1.0;
/// Pixels whose summed OD is below this are background.
pub const BACKGROUND_OD: f64 = 0.15;
/// Percentile used for per-stain density scaling.
pub const SCALE_PERCENTILE: f64 = 99.0;

/// Reference H&E stain vectors (R, G, B optical density), unit norm.
pub const RUIFROK_HEMATOXYLIN: [f64; 3] = [0.650, 0.704, 0.286];
pub const RUIFROK_EOSIN: [f64; 3] = [0.072, 0.990, 0.105];

/// Per-pixel optical densities.
#[derive(Debug, Clone, PartialEq)]
pub struct OdImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<[f64; 3]>,
}

impl OdImage {
    pub fn new(height: usize, width: usize, data: Vec<[f64; 3]>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape("od image", &[height, width], &[data.len()]));
        }
        Ok(OdImage {
            height,
            width,
            data,
        })
    }

    /// Scales every density by `factor`.
    pub fn scaled(&self, factor: f64) -> OdImage {
        OdImage {
            data: self.data.iter().map(|p| p.map(|v| v * factor)).collect(),
            ..*self
        }
    }
}

pub fn intensity_to_od(intensity: u8) -> f64 {
    -libm::log((intensity as f64 + OD_GUARD) / (I0 + OD_GUARD))
}

pub fn od_to_intensity(od: f64) -> u8 {
    let v = (I0 + OD_GUARD) * libm::exp(-od) - OD_GUARD;
    libm::round(v).clamp(0.0, 255.0) as u8
}

fn od_lut() -> [f64; 256] {
    let mut lut = [0.0; 256];
    for (i, v) in lut.iter_mut().enumerate() {
        *v = intensity_to_od(i as u8);
    }
    lut
}

pub fn rgb_to_od(image: &RgbImage) -> OdImage {
    let lut = od_lut();
    OdImage {
        height: image.height,
        width: image.width,
        data: image.data.iter().map(|p| p.map(|c| lut[c as usize])).collect(),
    }
}

pub fn od_to_rgb(od: &OdImage) -> RgbImage {
    RgbImage {
        height: od.height,
        width: od.width,
        data: od.data.iter().map(|p| p.map(od_to_intensity)).collect(),
    }
}

/// Two-stain model. `basis[0]` is the stain read by [`h_channel`];
/// after fitting that is hematoxylin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StainModel {
    /// Unit-norm non-negative OD vectors, one per stain.
    pub basis: [[f64; 3]; 2],
    /// 99th-percentile density of each stain over the fitting pixels.
    pub reference_density: [f64; 2],
    /// True while `basis[0]` is the stain identified as hematoxylin.
    pub hematoxylin_first: bool,
}

impl StainModel {
    /// Model from two stain vectors, hematoxylin first. Vectors are
    /// normalized; reference densities default to 1.
    pub fn from_vectors(hematoxylin: [f64; 3], other: [f64; 3]) -> Result<Self> {
        Ok(StainModel {
            basis: [unit(hematoxylin)?, unit(other)?],
            reference_density: [1.0, 1.0],
            hematoxylin_first: true,
        })
    }

    pub fn ruifrok() -> Self {
        StainModel {
            basis: [unit_unchecked(RUIFROK_HEMATOXYLIN), unit_unchecked(RUIFROK_EOSIN)],
            reference_density: [1.0, 1.0],
            hematoxylin_first: true,
        }
    }

    /// Non-negative least-squares densities of one OD pixel.
    pub fn densities(&self, od: [f64; 3]) -> [f64; 2] {
        nnls2(&self.basis, od)
    }

    /// Serializes as a small line-oriented text file.
    pub fn to_text(&self) -> String {
        let [a, b] = self.basis;
        format!(
            "stain-model v1\nstain0 {:e} {:e} {:e}\nstain1 {:e} {:e} {:e}\nreference {:e} {:e}\nhematoxylin_first {}\n",
            a[0], a[1], a[2], b[0], b[1], b[2],
            self.reference_density[0], self.reference_density[1], self.hematoxylin_first
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |why: &str| Error::invalid("stain model file", why);
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        if lines.next() != Some("stain-model v1") {
            return Err(bad("missing 'stain-model v1' header"));
        }
        let mut basis = [[0.0; 3]; 2];
        let mut reference = None;
        let mut first = None;
        let mut seen = [false; 2];
        for line in lines {
            let mut parts = line.split_whitespace();
            let key = parts.next().unwrap_or_default();
            let values: Vec<&str> = parts.collect();
            let nums = |n: usize| -> Result<Vec<f64>> {
                if values.len() != n {
                    return Err(bad(&format!("'{key}' needs {n} values")));
                }
                values
                    .iter()
                    .map(|v| v.parse::<f64>().map_err(|_| bad(&format!("bad number '{v}'"))))
                    .collect()
            };
            match key {
                "stain0" | "stain1" => {
                    let k = usize::from(key == "stain1");
                    let v = nums(3)?;
                    basis[k] = [v[0], v[1], v[2]];
                    seen[k] = true;
                }
                "reference" => {
                    let v = nums(2)?;
                    reference = Some([v[0], v[1]]);
                }
                "hematoxylin_first" => {
                    first = Some(match values.as_slice() {
                        ["true"] => true,
                        ["false"] => false,
                        _ => return Err(bad("hematoxylin_first must be true or false")),
                    });
                }
                other => return Err(bad(&format!("unknown key '{other}'"))),
            }
        }
        let (Some(reference_density), Some(hematoxylin_first), [true, true]) = (reference, first, seen)
        else {
            return Err(bad("missing stain0, stain1, reference or hematoxylin_first"));
        };
        for v in basis.iter().flatten().chain(reference_density.iter()) {
            if !v.is_finite() || *v < 0.0 {
                return Err(bad("values must be finite and non-negative"));
            }
        }
        Ok(StainModel {
            basis,
            reference_density,
            hematoxylin_first,
        })
    }
}

/// NMF fitting parameters.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct StainFitConfig {
    /// Weight of the L1 penalty on densities.
    pub sparsity_weight: f64,
    pub max_iters: usize,
    /// Stop once the relative objective change falls below this.
    pub tol: f64,
    /// Pixels are subsampled to at most this many before fitting.
    pub max_pixels: usize,
    pub min_pixels: usize,
    pub seed: u64,
}

impl Default for StainFitConfig {
    fn default() -> Self {
        StainFitConfig {
            sparsity_weight: 0.1,
            max_iters: 300,
            tol: 1e-7,
            max_pixels: 100_000,
            min_pixels: 1000,
            seed: 0,
        }
    }
}

impl StainFitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sparsity_weight >= 0.0 && self.sparsity_weight.is_finite()) {
            return Err(Error::invalid("stain fit", "sparsity_weight must be finite and >= 0"));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::invalid("stain fit", "tol must be >= 0"));
        }
        if self.max_pixels == 0 || self.min_pixels > self.max_pixels {
            return Err(Error::invalid("stain fit", "need 0 < min_pixels <= max_pixels"));
        }
        Ok(())
    }
}

/// Result of [`fit_stain_model`].
#[derive(Debug, Clone)]
pub struct StainFit {
    pub model: StainModel,
    /// Objective after initialization and after every iteration.
    pub objective: Vec<f64>,
    /// Final Frobenius residual `||OD - WH||_F` over the fitting pixels.
    pub residual: f64,
    /// Number of pixels used.
    pub pixels: usize,
}

/// Fits a two-stain basis to the foreground pixels of `od`.
///
/// Minimizes `||V - WH||_F^2 + s * sum(H)` over `W, H >= 0` by alternating
/// updates: a multiplicative step on `H`, then a backtracked step of `W`
/// toward its renormalized multiplicative update. Columns of `W` stay unit
/// norm and the objective never increases.
pub fn fit_stain_model(od: &OdImage, cfg: &StainFitConfig) -> Result<StainFit> {
    fit_pixels(od.data.len(), |i| od.data[i], cfg)
}

/// As [`fit_stain_model`], reading optical densities straight from 8-bit
/// pixels so large images never hold a full OD copy.
pub fn fit_stain_model_rgb(image: &RgbImage, cfg: &StainFitConfig) -> Result<StainFit> {
    let lut = od_lut();
    fit_pixels(image.data.len(), |i| image.data[i].map(|c| lut[c as usize]), cfg)
}

fn fit_pixels(n: usize, pixel: impl Fn(usize) -> [f64; 3], cfg: &StainFitConfig) -> Result<StainFit> {
    cfg.validate()?;
    let foreground = |p: &[f64; 3]| p.iter().sum::<f64>() >= BACKGROUND_OD;
    let fg_index: Vec<u32> = (0..n).filter(|&i| foreground(&pixel(i))).map(|i| i as u32).collect();
    if fg_index.len() < cfg.min_pixels {
        return Err(Error::InsufficientPixels {
            found: fg_index.len(),
            required: cfg.min_pixels,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let v: Vec<[f64; 3]> = if fg_index.len() > cfg.max_pixels {
        let mut picked = index::sample(&mut rng, fg_index.len(), cfg.max_pixels).into_vec();
        picked.sort_unstable();
        picked.into_iter().map(|k| pixel(fg_index[k] as usize)).collect()
    } else {
        fg_index.iter().map(|&i| pixel(i as usize)).collect()
    };
    drop(fg_index);
    let s = cfg.sparsity_weight;

    let mut w = [RUIFROK_HEMATOXYLIN, RUIFROK_EOSIN];
    for col in w.iter_mut() {
        for x in col.iter_mut() {
            *x = (*x + rng.random_range(0.0..0.05)).max(1e-3);
        }
        *col = unit_unchecked(*col);
    }
    let mut h: Vec<[f64; 2]> = v
        .iter()
        .map(|&p| nnls2(&w, p).map(|x| x.max(1e-3)))
        .collect();

    let mut objective = Vec::with_capacity(cfg.max_iters + 1);
    let mut f = nmf_objective(&v, &w, &h, s);
    objective.push(f);
    for _ in 0..cfg.max_iters {
        update_h(&v, &w, &mut h, s);
        let f_h = nmf_objective(&v, &w, &h, s);

        // The multiplicative W step ignores the unit-norm constraint, so only
        // its direction is used: backtrack along the normalized step until
        // the objective (with H held fixed) does not increase.
        let target = update_w(&v, &w, &h).map(unit_or_zero);
        if target.iter().all(|c| norm3(*c) > 0.0) {
            let mut t = 1.0;
            for _ in 0..12 {
                let cand = [0, 1].map(|k| unit_or_zero([0, 1, 2].map(|c| w[k][c] + t * (target[k][c] - w[k][c]))));
                if cand.iter().all(|c| norm3(*c) > 0.0) && nmf_objective(&v, &cand, &h, s) <= f_h {
                    w = cand;
                    break;
                }
                t *= 0.5;
            }
        }
        let f_next = nmf_objective(&v, &w, &h, s);
        objective.push(f_next);
        let change = (f - f_next).abs() / f.max(f64::MIN_POSITIVE);
        f = f_next;
        if change < cfg.tol {
            break;
        }
    }
    if !f.is_finite() {
        return Err(Error::Internal(String::from("stain fit diverged")));
    }

    let mut residual = 0.0;
    for (p, x) in v.iter().zip(&h) {
        for c in 0..3 {
            let d = p[c] - w[0][c] * x[0] - w[1][c] * x[1];
            residual += d * d;
        }
    }

    // Label the columns by the pairing closest to the reference H&E vectors.
    let (h_ref, e_ref) = (unit_unchecked(RUIFROK_HEMATOXYLIN), unit_unchecked(RUIFROK_EOSIN));
    if dot3(w[1], h_ref) + dot3(w[0], e_ref) > dot3(w[0], h_ref) + dot3(w[1], e_ref) {
        w.swap(0, 1);
    }
    let mut model = StainModel {
        basis: w,
        reference_density: [1.0, 1.0],
        hematoxylin_first: true,
    };
    let dens: Vec<[f64; 2]> = v.iter().map(|&p| model.densities(p)).collect();
    for k in 0..2 {
        let col: Vec<f64> = dens.iter().map(|d| d[k]).collect();
        let r = stats::percentile(&col, SCALE_PERCENTILE);
        model.reference_density[k] = if r > 0.0 { r } else { 1.0 };
    }
    Ok(StainFit {
        model,
        objective,
        residual: libm::sqrt(residual),
        pixels: v.len(),
    })
}

/// Exchanges the two stains so [`h_channel`] reads the second one.
pub fn swap_basis(model: &StainModel) -> StainModel {
    StainModel {
        basis: [model.basis[1], model.basis[0]],
        reference_density: [model.reference_density[1], model.reference_density[0]],
        hematoxylin_first: !model.hematoxylin_first,
    }
}

/// Raw per-pixel densities of both stains.
pub fn stain_densities(od: &OdImage, model: &StainModel) -> [Plane; 2] {
    let mut out = [
        Plane::filled(od.height, od.width, 0.0),
        Plane::filled(od.height, od.width, 0.0),
    ];
    for (i, &p) in od.data.iter().enumerate() {
        let d = model.densities(p);
        out[0].data[i] = d[0];
        out[1].data[i] = d[1];
    }
    out
}

/// Density of the first stain of `model` divided by its reference density
/// and clipped to `[0, 1]`.
pub fn h_channel(image: &RgbImage, model: &StainModel) -> Plane {
    let lut = od_lut();
    let scale = model.reference_density[0];
    let data = image
        .data
        .iter()
        .map(|p| (model.densities(p.map(|c| lut[c as usize]))[0] / scale).clamp(0.0, 1.0))
        .collect();
    Plane {
        height: image.height,
        width: image.width,
        data,
    }
}

/// Darkness `1 - gray / 255` of the channel mean, for inputs that are
/// already a single stain or grayscale.
pub fn gray_density(image: &RgbImage) -> Plane {
    let data = image
        .data
        .iter()
        .map(|p| 1.0 - (p[0] as f64 + p[1] as f64 + p[2] as f64) / (3.0 * 255.0))
        .collect();
    Plane {
        height: image.height,
        width: image.width,
        data,
    }
}

pub fn h_channel_od(od: &OdImage, model: &StainModel) -> Plane {
    let scale = model.reference_density[0];
    let data = od
        .data
        .iter()
        .map(|&p| (model.densities(p)[0] / scale).clamp(0.0, 1.0))
        .collect();
    Plane {
        height: od.height,
        width: od.width,
        data,
    }
}

/// Re-renders `source` through `target`'s basis after matching each stain's
/// reference density. `source_model` describes the source image. The part
/// of each pixel's OD that the source model does not explain is carried over
/// unchanged, so normalizing an image to its own model is the identity.
pub fn normalize_with_models(source: &RgbImage, source_model: &StainModel, target: &StainModel) -> RgbImage {
    let lut = od_lut();
    let ratio = [
        target.reference_density[0] / source_model.reference_density[0],
        target.reference_density[1] / source_model.reference_density[1],
    ];
    let data = source
        .data
        .iter()
        .map(|px| {
            let p = px.map(|c| lut[c as usize]);
            let d = source_model.densities(p);
            let (a, b) = (d[0] * ratio[0], d[1] * ratio[1]);
            let src = source_model.basis;
            let tgt = target.basis;
            [0, 1, 2].map(|c| {
                let residual = p[c] - src[0][c] * d[0] - src[1][c] * d[1];
                od_to_intensity((tgt[0][c] * a + tgt[1][c] * b + residual).max(0.0))
            })
        })
        .collect();
    RgbImage {
        height: source.height,
        width: source.width,
        data,
    }
}

/// Fits a model to `source` and normalizes it to `target`.
pub fn normalize_to_target(source: &RgbImage, target: &StainModel, cfg: &StainFitConfig) -> Result<RgbImage> {
    let fit = fit_stain_model_rgb(source, cfg)?;
    Ok(normalize_with_models(source, &fit.model, target))
}

/// `||V - WH||_F^2 + s * sum(H)`.
pub fn nmf_objective(v: &[[f64; 3]], w: &[[f64; 3]; 2], h: &[[f64; 2]], s: f64) -> f64 {
    let mut total = 0.0;
    for (p, x) in v.iter().zip(h) {
        for c in 0..3 {
            let d = p[c] - w[0][c] * x[0] - w[1][c] * x[1];
            total += d * d;
        }
        total += s * (x[0] + x[1]);
    }
    total
}

fn update_h(v: &[[f64; 3]], w: &[[f64; 3]; 2], h: &mut [[f64; 2]], s: f64) {
    let wtw = [
        [dot3(w[0], w[0]), dot3(w[0], w[1])],
        [dot3(w[1], w[0]), dot3(w[1], w[1])],
    ];
    for (p, x) in v.iter().zip(h.iter_mut()) {
        let num = [dot3(w[0], *p), dot3(w[1], *p)];
        let den = [
            wtw[0][0] * x[0] + wtw[0][1] * x[1] + s / 2.0,
            wtw[1][0] * x[0] + wtw[1][1] * x[1] + s / 2.0,
        ];
        for k in 0..2 {
            x[k] = if den[k] > 0.0 { x[k] * num[k] / den[k] } else { 0.0 };
        }
    }
}

fn update_w(v: &[[f64; 3]], w: &[[f64; 3]; 2], h: &[[f64; 2]]) -> [[f64; 3]; 2] {
    let mut vht = [[0.0; 3]; 2];
    let mut hht = [[0.0; 2]; 2];
    for (p, x) in v.iter().zip(h) {
        for k in 0..2 {
            for c in 0..3 {
                vht[k][c] += p[c] * x[k];
            }
            hht[k][0] += x[k] * x[0];
            hht[k][1] += x[k] * x[1];
        }
    }
    let mut out = *w;
    for k in 0..2 {
        for c in 0..3 {
            let den = w[0][c] * hht[0][k] + w[1][c] * hht[1][k];
            out[k][c] = if den > 0.0 { w[k][c] * vht[k][c] / den } else { 0.0 };
        }
    }
    out
}

/// Two-column non-negative least squares by enumerating active sets.
fn nnls2(w: &[[f64; 3]; 2], p: [f64; 3]) -> [f64; 2] {
    let a = dot3(w[0], w[0]);
    let b = dot3(w[0], w[1]);
    let c = dot3(w[1], w[1]);
    let r0 = dot3(w[0], p);
    let r1 = dot3(w[1], p);
    let det = a * c - b * b;
    if det > 1e-12 * a * c {
        let x0 = (c * r0 - b * r1) / det;
        let x1 = (a * r1 - b * r0) / det;
        if x0 >= 0.0 && x1 >= 0.0 {
            return [x0, x1];
        }
    }
    // One stain active: pick whichever leaves the smaller residual, i.e.
    // explains more of the projection energy.
    let x0 = if a > 0.0 { (r0 / a).max(0.0) } else { 0.0 };
    let x1 = if c > 0.0 { (r1 / c).max(0.0) } else { 0.0 };
    if x0 * r0 >= x1 * r1 {
        [x0, 0.0]
    } else {
        [0.0, x1]
    }
}

fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm3(a: [f64; 3]) -> f64 {
    libm::sqrt(dot3(a, a))
}

fn unit(v: [f64; 3]) -> Result<[f64; 3]> {
    let n = norm3(v);
    if v.iter().any(|x| *x < 0.0 || !x.is_finite()) || n == 0.0 {
        return Err(Error::invalid("stain model", "stain vectors must be non-negative, finite and non-zero"));
    }
    Ok(v.map(|x| x / n))
}

fn unit_or_zero(v: [f64; 3]) -> [f64; 3] {
    let n = norm3(v);
    if n > 0.0 && n.is_finite() {
        v.map(|x| x / n)
    } else {
        [0.0; 3]
    }
}

fn unit_unchecked(v: [f64; 3]) -> [f64; 3] {
    let n = norm3(v);
    v.map(|x| x / n)
}

impl fmt::Display for StainModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}
