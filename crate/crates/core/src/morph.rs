//! Binary morphology helpers: 8-connected component labelling and the
//! Chebyshev distance transform.

use alloc::vec;
use alloc::vec::Vec;

use crate::raster::Mask;

/// Component labels in raster order of first appearance; 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Components {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u32>,
    pub count: usize,
}

impl Components {
    /// Pixels of each component, raster ordered; index `k` is label `k + 1`.
    pub fn pixels(&self) -> Vec<Vec<(usize, usize)>> {
        let mut out = vec![Vec::new(); self.count];
        for (i, &l) in self.labels.iter().enumerate() {
            if l > 0 {
                out[l as usize - 1].push((i / self.width, i % self.width));
            }
        }
        out
    }
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        let up = parent[parent[x as usize] as usize];
        parent[x as usize] = up;
        x = up;
    }
    x
}

/// Two-pass union-find labelling with 8-connectivity.
pub fn connected_components(mask: &Mask) -> Components {
    let (h, w) = (mask.height, mask.width);
    let mut provisional = vec![0u32; h * w];
    let mut parent: Vec<u32> = vec![0];
    for r in 0..h {
        for c in 0..w {
            if !mask.data[r * w + c] {
                continue;
            }
            let mut label = 0u32;
            let mut neighbours = [0u32; 4];
            let mut n = 0;
            if r > 0 {
                let lo = c.saturating_sub(1);
                let hi = (c + 1).min(w - 1);
                for cc in lo..=hi {
                    let l = provisional[(r - 1) * w + cc];
                    if l > 0 {
                        neighbours[n] = l;
                        n += 1;
                    }
                }
            }
            if c > 0 && provisional[r * w + c - 1] > 0 {
                neighbours[n] = provisional[r * w + c - 1];
                n += 1;
            }
            for &l in &neighbours[..n] {
                let root = find(&mut parent, l);
                if label == 0 {
                    label = root;
                } else if root != label {
                    let (a, b) = (label.min(root), label.max(root));
                    parent[b as usize] = a;
                    label = a;
                }
            }
            if label == 0 {
                label = parent.len() as u32;
                parent.push(label);
            }
            provisional[r * w + c] = label;
        }
    }
    let mut relabel = vec![0u32; parent.len()];
    let mut count = 0u32;
    let mut labels = provisional;
    for l in labels.iter_mut() {
        if *l == 0 {
            continue;
        }
        let root = find(&mut parent, *l) as usize;
        if relabel[root] == 0 {
            count += 1;
            relabel[root] = count;
        }
        *l = relabel[root];
    }
    Components {
        height: h,
        width: w,
        labels,
        count: count as usize,
    }
}

/// Chessboard distance from each foreground pixel to the nearest
/// background pixel, counting everything outside the raster as background.
/// Boundary pixels get 1, background 0.
pub fn chebyshev_distance(mask: &Mask) -> Vec<u32> {
    let (h, w) = (mask.height, mask.width);
    let big = (h + w) as u32 + 1;
    let mut d: Vec<u32> = mask.data.iter().map(|&m| if m { big } else { 0 }).collect();
    let at = |d: &[u32], r: isize, c: isize| -> u32 {
        if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
            0
        } else {
            d[r as usize * w + c as usize]
        }
    };
    for r in 0..h as isize {
        for c in 0..w as isize {
            let i = r as usize * w + c as usize;
            if d[i] == 0 {
                continue;
            }
            let m = at(&d, r - 1, c - 1)
                .min(at(&d, r - 1, c))
                .min(at(&d, r - 1, c + 1))
                .min(at(&d, r, c - 1));
            d[i] = d[i].min(m + 1);
        }
    }
    for r in (0..h as isize).rev() {
        for c in (0..w as isize).rev() {
            let i = r as usize * w + c as usize;
            if d[i] == 0 {
                continue;
            }
            let m = at(&d, r + 1, c + 1)
                .min(at(&d, r + 1, c))
                .min(at(&d, r + 1, c - 1))
                .min(at(&d, r, c + 1));
            d[i] = d[i].min(m + 1);
        }
    }
    d
}
