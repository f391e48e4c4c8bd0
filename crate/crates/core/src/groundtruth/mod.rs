//! Nucleus instance annotations and the shrunken weak labels trained on.
//!
//! Each instance is shrunk to a central fraction of its area by ranking its
//! pixels on a fixed key (interior distance descending, then squared
//! distance to the centroid, then row, then column) and keeping a prefix.
//! Because the ranking never depends on the fraction, smaller fractions
//! always give subsets of larger ones.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::morph::{chebyshev_distance, connected_components};
use crate::raster::Mask;

/// Default retained area fraction.
pub const DEFAULT_FRACTION: f64 = 0.25;

/// One annotated nucleus.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: u32,
    /// Raster-ordered `(row, col)` pixels.
    pixels: Vec<(usize, usize)>,
    centroid: (f64, f64),
}

impl Instance {
    pub fn new(id: u32, mut pixels: Vec<(usize, usize)>) -> Result<Self> {
        if pixels.is_empty() {
            return Err(Error::Empty("instance mask"));
        }
        pixels.sort_unstable();
        pixels.dedup();
        let centroid = centroid_of(&pixels);
        Ok(Instance { id, pixels, centroid })
    }

    pub fn pixels(&self) -> &[(usize, usize)] {
        &self.pixels
    }

    pub fn area(&self) -> usize {
        self.pixels.len()
    }

    /// Pixel-mean `(row, col)`.
    pub fn centroid(&self) -> (f64, f64) {
        self.centroid
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.pixels.binary_search(&(row, col)).is_ok()
    }

    /// Row-major runs `[start, length, start, length, ...]` over a canvas of
    /// the given width.
    pub fn to_runs(&self, width: usize) -> Vec<u64> {
        let mut runs: Vec<u64> = Vec::new();
        for &(r, c) in &self.pixels {
            let i = (r * width + c) as u64;
            let n = runs.len();
            if n >= 2 && runs[n - 2] + runs[n - 1] == i {
                runs[n - 1] += 1;
            } else {
                runs.push(i);
                runs.push(1);
            }
        }
        runs
    }

    pub fn from_runs(id: u32, height: usize, width: usize, runs: &[u64]) -> Result<Self> {
        if runs.len() % 2 != 0 {
            return Err(Error::invalid("run-length mask", "odd number of run values"));
        }
        let total = (height * width) as u64;
        let mut pixels = Vec::new();
        for pair in runs.chunks(2) {
            let (start, len) = (pair[0], pair[1]);
            if start.checked_add(len).map_or(true, |end| end > total) {
                return Err(Error::invalid("run-length mask", "run extends past the canvas"));
            }
            for i in start..start + len {
                let i = i as usize;
                pixels.push((i / width, i % width));
            }
        }
        Instance::new(id, pixels)
    }
}

/// Instances on a shared canvas.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InstanceSet {
    pub height: usize,
    pub width: usize,
    pub instances: Vec<Instance>,
}

impl InstanceSet {
    pub fn new(height: usize, width: usize, instances: Vec<Instance>) -> Result<Self> {
        for inst in &instances {
            if inst.pixels.iter().any(|&(r, c)| r >= height || c >= width) {
                return Err(Error::invalid(
                    "instance set",
                    alloc::format!("instance {} lies outside the {height}x{width} canvas", inst.id),
                ));
            }
        }
        Ok(InstanceSet {
            height,
            width,
            instances,
        })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// One instance per distinct non-zero label; ids are the labels, in
    /// ascending order.
    pub fn from_label_raster(height: usize, width: usize, labels: &[u32]) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::shape("label raster", &[height, width], &[labels.len()]));
        }
        let mut order: Vec<u32> = labels.iter().copied().filter(|&l| l > 0).collect();
        order.sort_unstable();
        order.dedup();
        let mut buckets: Vec<Vec<(usize, usize)>> = vec![Vec::new(); order.len()];
        for (i, &l) in labels.iter().enumerate() {
            if l > 0 {
                let k = order.binary_search(&l).unwrap_or_else(|_| unreachable!());
                buckets[k].push((i / width, i % width));
            }
        }
        let instances = order
            .into_iter()
            .zip(buckets)
            .map(|(id, px)| Instance::new(id, px))
            .collect::<Result<Vec<_>>>()?;
        Ok(InstanceSet {
            height,
            width,
            instances,
        })
    }

    /// Labelled raster (0 = background). Later instances overwrite earlier
    /// ones where they overlap.
    pub fn to_label_raster(&self) -> Vec<u32> {
        let mut out = vec![0; self.height * self.width];
        for inst in &self.instances {
            for &(r, c) in &inst.pixels {
                out[r * self.width + c] = inst.id;
            }
        }
        out
    }

    /// Union of all full instance masks.
    pub fn union_mask(&self) -> Mask {
        let mut m = Mask::empty(self.height, self.width);
        for inst in &self.instances {
            for &(r, c) in &inst.pixels {
                m.set(r, c, true);
            }
        }
        m
    }

    pub fn instance_mask(&self, index: usize) -> Mask {
        let mut m = Mask::empty(self.height, self.width);
        for &(r, c) in &self.instances[index].pixels {
            m.set(r, c, true);
        }
        m
    }
}

fn centroid_of(pixels: &[(usize, usize)]) -> (f64, f64) {
    let n = pixels.len() as f64;
    let (sr, sc) = pixels
        .iter()
        .fold((0.0, 0.0), |(a, b), &(r, c)| (a + r as f64, b + c as f64));
    (sr / n, sc / n)
}

/// Pixels of one instance ranked by the shrink order, with their interior
/// distances.
struct Ranked {
    pixels: Vec<(usize, usize)>,
    distance: Vec<u32>,
}

fn rank_pixels(pixels: &[(usize, usize)]) -> Ranked {
    let r0 = pixels.iter().map(|p| p.0).min().unwrap_or(0);
    let r1 = pixels.iter().map(|p| p.0).max().unwrap_or(0);
    let c0 = pixels.iter().map(|p| p.1).min().unwrap_or(0);
    let c1 = pixels.iter().map(|p| p.1).max().unwrap_or(0);
    let (h, w) = (r1 - r0 + 1, c1 - c0 + 1);
    let mut local = Mask::empty(h, w);
    for &(r, c) in pixels {
        local.set(r - r0, c - c0, true);
    }
    let dist = chebyshev_distance(&local);
    let (cr, cc) = centroid_of(pixels);
    let mut keyed: Vec<(u32, f64, usize, usize)> = pixels
        .iter()
        .map(|&(r, c)| {
            let d2 = (r as f64 - cr) * (r as f64 - cr) + (c as f64 - cc) * (c as f64 - cc);
            (dist[(r - r0) * w + (c - c0)], d2, r, c)
        })
        .collect();
    keyed.sort_by(|a, b| {
        b.0.cmp(&a.0)
            .then(a.1.total_cmp(&b.1))
            .then(a.2.cmp(&b.2))
            .then(a.3.cmp(&b.3))
    });
    Ranked {
        pixels: keyed.iter().map(|k| (k.2, k.3)).collect(),
        distance: keyed.iter().map(|k| k.0).collect(),
    }
}

fn check_fraction(fraction: f64) -> Result<()> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid("shrink", "fraction must lie in (0, 1]"));
    }
    Ok(())
}

fn target_area(area: usize, fraction: f64) -> usize {
    (libm::round(fraction * area as f64) as usize).clamp(1, area)
}

/// Keeps the 8-connected part of `prefix` that contains its first pixel.
fn connected_prefix(prefix: &[(usize, usize)]) -> Vec<(usize, usize)> {
    if prefix.len() <= 1 {
        return prefix.to_vec();
    }
    let r0 = prefix.iter().map(|p| p.0).min().unwrap_or(0);
    let c0 = prefix.iter().map(|p| p.1).min().unwrap_or(0);
    let h = prefix.iter().map(|p| p.0).max().unwrap_or(0) - r0 + 1;
    let w = prefix.iter().map(|p| p.1).max().unwrap_or(0) - c0 + 1;
    let mut local = Mask::empty(h, w);
    for &(r, c) in prefix {
        local.set(r - r0, c - c0, true);
    }
    let cc = connected_components(&local);
    if cc.count == 1 {
        let mut out = prefix.to_vec();
        out.sort_unstable();
        return out;
    }
    let keep = cc.labels[(prefix[0].0 - r0) * w + (prefix[0].1 - c0)];
    let mut out: Vec<(usize, usize)> = prefix
        .iter()
        .copied()
        .filter(|&(r, c)| cc.labels[(r - r0) * w + (c - c0)] == keep)
        .collect();
    out.sort_unstable();
    out
}

/// Shrinks an instance's pixels to `round(fraction * area)` of its most
/// central pixels (at least one), keeping the result 8-connected.
pub fn shrink_pixels(pixels: &[(usize, usize)], fraction: f64) -> Result<Vec<(usize, usize)>> {
    check_fraction(fraction)?;
    if pixels.is_empty() {
        return Err(Error::Empty("shrink"));
    }
    let ranked = rank_pixels(pixels);
    let k = target_area(pixels.len(), fraction);
    Ok(connected_prefix(&ranked.pixels[..k]))
}

/// Shrinks a binary mask; see [`shrink_pixels`].
pub fn shrink_instance(mask: &Mask, fraction: f64) -> Result<Mask> {
    let kept = shrink_pixels(&mask.pixels(), fraction)?;
    let mut out = Mask::empty(mask.height, mask.width);
    for (r, c) in kept {
        out.set(r, c, true);
    }
    Ok(out)
}

/// Union of shrunken instances. Any shrunken instance that overlaps or
/// 8-touches another loses its outermost remaining distance level, repeated
/// until no contacts remain or the touching instances are single pixels.
pub fn build_label_map(set: &InstanceSet, fraction: f64) -> Result<Mask> {
    check_fraction(fraction)?;
    let (h, w) = (set.height, set.width);
    let ranked: Vec<Ranked> = set.instances.iter().map(|i| rank_pixels(&i.pixels)).collect();
    let mut keep: Vec<usize> = set
        .instances
        .iter()
        .map(|i| target_area(i.area(), fraction))
        .collect();
    let mut shrunk: Vec<Vec<(usize, usize)>> = ranked
        .iter()
        .zip(&keep)
        .map(|(r, &k)| connected_prefix(&r.pixels[..k]))
        .collect();

    loop {
        // owner map: index+1 of the instance covering a pixel, u32::MAX if
        // more than one does
        let mut owner = vec![0u32; h * w];
        for (k, px) in shrunk.iter().enumerate() {
            for &(r, c) in px {
                let o = &mut owner[r * w + c];
                *o = if *o == 0 { k as u32 + 1 } else { u32::MAX };
            }
        }
        let mut touching = vec![false; shrunk.len()];
        for (k, px) in shrunk.iter().enumerate() {
            let me = k as u32 + 1;
            'pixels: for &(r, c) in px {
                for dr in -1isize..=1 {
                    for dc in -1isize..=1 {
                        let (rr, cc) = (r as isize + dr, c as isize + dc);
                        if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                            continue;
                        }
                        let o = owner[rr as usize * w + cc as usize];
                        if o != 0 && o != me {
                            touching[k] = true;
                            break 'pixels;
                        }
                    }
                }
            }
        }
        let mut changed = false;
        for k in 0..shrunk.len() {
            if !touching[k] || keep[k] <= 1 {
                continue;
            }
            let level = ranked[k].distance[keep[k] - 1];
            let above = ranked[k].distance[..keep[k]].iter().take_while(|&&d| d > level).count();
            keep[k] = above.max(1);
            shrunk[k] = connected_prefix(&ranked[k].pixels[..keep[k]]);
            changed = true;
        }
        if !changed {
            break;
        }
    }

    let mut out = Mask::empty(h, w);
    for px in &shrunk {
        for &(r, c) in px {
            out.set(r, c, true);
        }
    }
    Ok(out)
}
