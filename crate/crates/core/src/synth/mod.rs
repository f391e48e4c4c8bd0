//! Seeded synthetic nucleus scenes with exact instance ground truth, and
//! two-stain colour renderings with known stain factors.

use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::groundtruth::{Instance, InstanceSet};
use crate::raster::{Plane, RgbImage};
use crate::stainsep::od_to_intensity;

/// Scene generator parameters.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    /// Inclusive bounds on the number of nuclei.
    pub count: (usize, usize),
    /// Bounds on the major semi-axis in pixels.
    pub radius: (f64, f64),
    /// Minimum centre distance in units of the minimum radius. At 2 or
    /// more, nuclei drawn at the minimum radius cannot overlap.
    pub min_separation: f64,
    /// When set, the count is chosen so the expected nuclear area covers
    /// this fraction of the canvas (still clamped to `count`).
    pub foreground_fraction: Option<f64>,
    /// Mean background density.
    pub background: f64,
    /// Standard deviation of per-pixel Gaussian noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            height: 64,
            width: 64,
            count: (0, 64),
            radius: (3.0, 5.0),
            min_separation: 2.5,
            foreground_fraction: Some(0.03),
            background: 0.12,
            noise: 0.03,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |why: &str| Err(Error::invalid("scene spec", why));
        if self.height == 0 || self.width == 0 {
            return bad("canvas must be non-empty");
        }
        if self.count.0 > self.count.1 {
            return bad("count range is reversed");
        }
        if !(self.radius.0 > 0.0 && self.radius.0 <= self.radius.1 && self.radius.1.is_finite()) {
            return bad("need 0 < min radius <= max radius");
        }
        if !(self.min_separation >= 0.0 && self.min_separation.is_finite()) {
            return bad("min_separation must be >= 0");
        }
        if let Some(f) = self.foreground_fraction {
            if !(f > 0.0 && f < 1.0) {
                return bad("foreground_fraction must lie in (0, 1)");
            }
        }
        if !(0.0..=1.0).contains(&self.background) || !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad("background must lie in [0, 1] and noise must be >= 0");
        }
        Ok(())
    }
}

/// A generated scene. `image` is the sum of the nuclear and background
/// densities plus noise, clipped to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub image: Plane,
    pub instances: InstanceSet,
    /// Noise-free nuclear density (the first stain factor).
    pub nuclear: Plane,
    /// Noise-free background texture (the second stain factor).
    pub background: Plane,
}

struct Ellipse {
    centre: (f64, f64),
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
    peak: f64,
}

impl Ellipse {
    /// Squared normalized radius of a pixel; <= 1 inside.
    fn rho2(&self, r: f64, c: f64) -> f64 {
        let (dy, dx) = (r - self.centre.0, c - self.centre.1);
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        (u / self.a) * (u / self.a) + (v / self.b) * (v / self.b)
    }
}

/// Generates a scene; the same spec always gives the same scene.
pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let target = match spec.foreground_fraction {
        Some(f) => {
            // mean ellipse area with eccentricity ratio uniform in [1, 2]
            let mean_r2 = (spec.radius.0 * spec.radius.0 + spec.radius.0 * spec.radius.1 + spec.radius.1 * spec.radius.1) / 3.0;
            let area = PI * mean_r2 * core::f64::consts::LN_2;
            libm::round(f * (h * w) as f64 / area) as usize
        }
        None => rng.random_range(spec.count.0..=spec.count.1),
    }
    .clamp(spec.count.0, spec.count.1);

    let min_dist = spec.min_separation * spec.radius.0;
    let mut nuclei: Vec<Ellipse> = Vec::new();
    let mut attempts = 0;
    while nuclei.len() < target && attempts < 200 * target.max(1) {
        attempts += 1;
        let a = rng.random_range(spec.radius.0..=spec.radius.1);
        let ratio = rng.random_range(1.0..=2.0);
        let b = (a / ratio).max(spec.radius.0.min(a) * 0.5).max(0.5);
        let margin = a.min((h.min(w) as f64 - 1.0) / 2.0);
        let centre = (
            rng.random_range(margin..=(h as f64 - 1.0 - margin).max(margin)),
            rng.random_range(margin..=(w as f64 - 1.0 - margin).max(margin)),
        );
        let theta = rng.random_range(0.0..PI);
        let peak = rng.random_range(0.6..0.9);
        if nuclei
            .iter()
            .any(|n| libm::hypot(n.centre.0 - centre.0, n.centre.1 - centre.1) < min_dist)
        {
            continue;
        }
        nuclei.push(Ellipse {
            centre,
            a,
            b,
            cos: libm::cos(theta),
            sin: libm::sin(theta),
            peak,
        });
    }

    let mut nuclear = Plane::filled(h, w, 0.0);
    let mut instances = Vec::with_capacity(nuclei.len());
    for (k, n) in nuclei.iter().enumerate() {
        let r0 = libm::floor(n.centre.0 - n.a).max(0.0) as usize;
        let r1 = (libm::ceil(n.centre.0 + n.a) as usize).min(h - 1);
        let c0 = libm::floor(n.centre.1 - n.a).max(0.0) as usize;
        let c1 = (libm::ceil(n.centre.1 + n.a) as usize).min(w - 1);
        let mut px = Vec::new();
        for r in r0..=r1 {
            for c in c0..=c1 {
                let rho2 = n.rho2(r as f64, c as f64);
                if rho2 <= 1.0 {
                    px.push((r, c));
                    let v = n.peak * (1.0 - 0.5 * rho2);
                    let i = r * w + c;
                    nuclear.data[i] = nuclear.data[i].max(v);
                }
            }
        }
        if px.is_empty() {
            let p = (libm::round(n.centre.0) as usize, libm::round(n.centre.1) as usize);
            nuclear.data[p.0 * w + p.1] = nuclear.data[p.0 * w + p.1].max(n.peak);
            px.push(p);
        }
        instances.push(Instance::new(k as u32 + 1, px)?);
    }

    // smooth texture from a few random plane waves, rescaled to [0.5, 1.5]
    // times the background level
    let waves: Vec<(f64, f64, f64)> = (0..4)
        .map(|_| {
            let freq = rng.random_range(0.02..0.12);
            let dir = rng.random_range(0.0..2.0 * PI);
            (freq * libm::cos(dir), freq * libm::sin(dir), rng.random_range(0.0..2.0 * PI))
        })
        .collect();
    let mut background = Plane::filled(h, w, 0.0);
    for r in 0..h {
        for c in 0..w {
            let s: f64 = waves
                .iter()
                .map(|&(fy, fx, ph)| libm::cos(2.0 * PI * (fy * r as f64 + fx * c as f64) + ph))
                .sum::<f64>()
                / waves.len() as f64;
            let nuc = nuclear.data[r * w + c];
            background.data[r * w + c] = spec.background * (1.0 + 0.5 * s) * (1.0 - nuc);
        }
    }

    let noise = Normal::new(0.0, spec.noise).map_err(|_| Error::invalid("scene spec", "bad noise level"))?;
    let image = Plane {
        height: h,
        width: w,
        data: nuclear
            .data
            .iter()
            .zip(&background.data)
            .map(|(&n, &b)| (n + b + noise.sample(&mut rng)).clamp(0.0, 1.0))
            .collect(),
    };
    Ok(Scene {
        image,
        instances: InstanceSet::new(h, w, instances)?,
        nuclear,
        background,
    })
}

/// Colour rendering of a scene with its known factors.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoStainImage {
    pub rgb: RgbImage,
    /// Unit-norm stain OD vectors; `basis[0]` is the nuclear stain.
    pub basis: [[f64; 3]; 2],
    /// Per-pixel stain densities `H*`.
    pub densities: Vec<[f64; 2]>,
}

/// Renders `rgb = od_to_rgb(W* H*)` with `H* = (scale[0] * nuclear,
/// scale[1] * background)`.
pub fn colorize_two_stain(scene: &Scene, basis: [[f64; 3]; 2], scale: [f64; 2]) -> Result<TwoStainImage> {
    let mut unit = basis;
    for v in unit.iter_mut() {
        let n = libm::sqrt(v.iter().map(|x| x * x).sum());
        if v.iter().any(|x| *x < 0.0 || !x.is_finite()) || n == 0.0 {
            return Err(Error::invalid("colorize", "stain vectors must be non-negative and non-zero"));
        }
        *v = v.map(|x| x / n);
    }
    if scale.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
        return Err(Error::invalid("colorize", "density scales must be >= 0"));
    }
    let densities: Vec<[f64; 2]> = scene
        .nuclear
        .data
        .iter()
        .zip(&scene.background.data)
        .map(|(&n, &b)| [n * scale[0], b * scale[1]])
        .collect();
    let data = densities
        .iter()
        .map(|d| [0, 1, 2].map(|c| od_to_intensity(unit[0][c] * d[0] + unit[1][c] * d[1])))
        .collect();
    Ok(TwoStainImage {
        rgb: RgbImage {
            height: scene.image.height,
            width: scene.image.width,
            data,
        },
        basis: unit,
        densities,
    })
}

/// Random stain pair near the reference H&E vectors, for building test
/// sets with varied colour.
pub fn jittered_he_basis(seed: u64, amount: f64) -> [[f64; 3]; 2] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    [crate::stainsep::RUIFROK_HEMATOXYLIN, crate::stainsep::RUIFROK_EOSIN]
        .map(|v| v.map(|x| (x + rng.random_range(-amount..=amount)).max(0.02)))
}
