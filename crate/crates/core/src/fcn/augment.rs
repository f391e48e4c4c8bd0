//! Paired image/label augmentation: right-angle rotations, flips and
//! integer-factor downscaling.

use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::raster::Plane;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flip {
    Horizontal,
    Vertical,
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct AugmentationConfig {
    /// Allowed rotations in degrees, each one of 0, 90, 180, 270.
    pub rotations: Vec<u16>,
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
    /// Largest downscale factor; 1 disables scale augmentation.
    pub max_downscale: usize,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            rotations: alloc::vec![0, 90, 180, 270],
            flip_horizontal: true,
            flip_vertical: true,
            max_downscale: 4,
        }
    }
}

impl AugmentationConfig {
    /// No augmentation at all.
    pub fn none() -> Self {
        AugmentationConfig {
            rotations: alloc::vec![0],
            flip_horizontal: false,
            flip_vertical: false,
            max_downscale: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rotations.is_empty() || self.rotations.iter().any(|r| ![0, 90, 180, 270].contains(r)) {
            return Err(Error::invalid(
                "augmentation",
                alloc::format!("rotations {:?} must be a non-empty subset of 0/90/180/270", self.rotations),
            ));
        }
        if self.max_downscale == 0 {
            return Err(Error::invalid("augmentation", "max_downscale must be >= 1"));
        }
        Ok(())
    }
}

/// Box-averages the image and max-pools the label by `factor`, then tiles
/// the reduced pair back to the original size.
pub fn downscale_mosaic(image: &Plane, label: &Plane, factor: usize) -> (Plane, Plane) {
    if factor <= 1 || image.height < factor || image.width < factor {
        return (image.clone(), label.clone());
    }
    let (h, w) = (image.height / factor, image.width / factor);
    let mut small_img = Vec::with_capacity(h * w);
    let mut small_lab = Vec::with_capacity(h * w);
    let area = (factor * factor) as f64;
    for r in 0..h {
        for c in 0..w {
            let (mut acc, mut mx) = (0.0, f64::NEG_INFINITY);
            for dr in 0..factor {
                for dc in 0..factor {
                    let (rr, cc) = (r * factor + dr, c * factor + dc);
                    acc += image.get(rr, cc);
                    mx = mx.max(label.get(rr, cc));
                }
            }
            small_img.push(acc / area);
            small_lab.push(mx);
        }
    }
    let tile = |small: &[f64], like: &Plane| {
        let mut out = Plane::filled(like.height, like.width, 0.0);
        for r in 0..like.height {
            for c in 0..like.width {
                out.set(r, c, small[(r % h) * w + c % w]);
            }
        }
        out
    };
    (tile(&small_img, image), tile(&small_lab, label))
}

fn rotate(p: &Plane, degrees: u16) -> Plane {
    let mut out = p.clone();
    for _ in 0..degrees / 90 {
        out = out.rot90();
    }
    out
}

/// Draws one random transform from `cfg` and applies it to both planes.
/// Quarter-turns are skipped for non-square inputs so batch shapes stay
/// uniform.
pub fn augment_pair<R: Rng>(image: &Plane, label: &Plane, cfg: &AugmentationConfig, rng: &mut R) -> (Plane, Plane) {
    let mut degrees = cfg.rotations[rng.random_range(0..cfg.rotations.len())];
    if image.height != image.width && degrees % 180 != 0 {
        degrees = 0;
    }
    let mut img = rotate(image, degrees);
    let mut lab = rotate(label, degrees);
    if cfg.flip_horizontal && rng.random_bool(0.5) {
        img = img.flip_horizontal();
        lab = lab.flip_horizontal();
    }
    if cfg.flip_vertical && rng.random_bool(0.5) {
        img = img.flip_vertical();
        lab = lab.flip_vertical();
    }
    let factor = rng.random_range(1..=cfg.max_downscale);
    downscale_mosaic(&img, &lab, factor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn binary_plane(seed: u64) -> Plane {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..64).map(|_| if rng.random_bool(0.3) { 1.0 } else { 0.0 }).collect();
        Plane::new(8, 8, data).unwrap()
    }

    #[test]
    fn label_transforms_with_image() {
        let cfg = AugmentationConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for seed in 0..50 {
            // a binary image is its own box-average only at factor 1, so
            // compare the label against a max-pooled copy of the image path
            let p = binary_plane(seed);
            let (img, lab) = augment_pair(&p, &p, &AugmentationConfig { max_downscale: 1, ..cfg.clone() }, &mut rng);
            assert_eq!(img, lab);
            let (img, lab) = augment_pair(&p, &p, &cfg, &mut rng);
            assert_eq!((img.height, img.width), (lab.height, lab.width));
            // max-pooling dominates box-averaging pixelwise
            assert!(img.data.iter().zip(&lab.data).all(|(a, b)| a <= b));
        }
    }

    #[test]
    fn downscale_keeps_single_pixel_labels() {
        let img = Plane::filled(8, 8, 0.5);
        let mut lab = Plane::filled(8, 8, 0.0);
        lab.set(5, 6, 1.0);
        let (di, dl) = downscale_mosaic(&img, &lab, 4);
        assert_eq!((dl.height, dl.width), (8, 8));
        // the 2x2 reduced label is tiled 4x4 times
        assert_eq!(dl.get(1, 1), 1.0);
        assert_eq!(dl.data.iter().filter(|&&v| v == 1.0).count(), 16);
        assert!(di.data.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn validation() {
        assert!(AugmentationConfig::default().validate().is_ok());
        let bad = AugmentationConfig { rotations: alloc::vec![45], ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
