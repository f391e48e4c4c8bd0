//! Row-major 2-D rasters: real-valued planes, binary masks and 8-bit RGB.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Single-channel real-valued image (probability map, stain density, ...).
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape("plane", &[height, width], &[data.len()]));
        }
        Ok(Plane {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Plane {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.width + col] = value;
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Copies a `height x width` window starting at `(row, col)`; pixels
    /// outside the plane read as `fill`.
    pub fn window(&self, row: usize, col: usize, height: usize, width: usize, fill: f64) -> Plane {
        let mut out = Plane::filled(height, width, fill);
        for r in 0..height {
            let src_r = row + r;
            if src_r >= self.height {
                break;
            }
            for c in 0..width {
                let src_c = col + c;
                if src_c >= self.width {
                    break;
                }
                out.data[r * width + c] = self.data[src_r * self.width + src_c];
            }
        }
        out
    }

    /// `[1, 1, H, W]` tensor for network input.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new([1, 1, self.height, self.width], self.data.clone())
            .expect("plane dims are positive")
    }

    pub fn threshold(&self, level: f64) -> Mask {
        Mask {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| v > level).collect(),
        }
    }

    pub fn rot90(&self) -> Plane {
        Plane {
            height: self.width,
            width: self.height,
            data: rot90_data(&self.data, self.height, self.width),
        }
    }

    pub fn flip_horizontal(&self) -> Plane {
        Plane {
            data: flip_h_data(&self.data, self.height, self.width),
            ..*self
        }
    }

    pub fn flip_vertical(&self) -> Plane {
        Plane {
            data: flip_v_data(&self.data, self.height, self.width),
            ..*self
        }
    }
}

/// Binary raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape("mask", &[height, width], &[data.len()]));
        }
        Ok(Mask {
            height,
            width,
            data,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Mask {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.data[row * self.width + col] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    /// Foreground pixels as `(row, col)` in raster order.
    pub fn pixels(&self) -> Vec<(usize, usize)> {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &v)| v)
            .map(|(i, _)| (i / self.width, i % self.width))
            .collect()
    }

    pub fn to_plane(&self) -> Plane {
        Plane {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect(),
        }
    }

    /// True if every foreground pixel of `self` is foreground in `other`.
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }

    pub fn rot90(&self) -> Mask {
        Mask {
            height: self.width,
            width: self.height,
            data: rot90_data(&self.data, self.height, self.width),
        }
    }

    pub fn flip_horizontal(&self) -> Mask {
        Mask {
            data: flip_h_data(&self.data, self.height, self.width),
            ..*self
        }
    }

    pub fn flip_vertical(&self) -> Mask {
        Mask {
            data: flip_v_data(&self.data, self.height, self.width),
            ..*self
        }
    }
}

/// 8-bit RGB image, pixels in row-major order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<[u8; 3]>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<[u8; 3]>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape("rgb image", &[height, width], &[data.len()]));
        }
        Ok(RgbImage {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [u8; 3]) -> Self {
        RgbImage {
            height,
            width,
            data: vec![rgb; height * width],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> [u8; 3] {
        self.data[row * self.width + col]
    }

    /// Grayscale replicated to three channels.
    pub fn from_gray(height: usize, width: usize, gray: &[u8]) -> Result<Self> {
        Self::new(height, width, gray.iter().map(|&g| [g, g, g]).collect())
    }

    /// Window copy with out-of-bounds pixels set to `fill`.
    pub fn window(&self, row: usize, col: usize, height: usize, width: usize, fill: [u8; 3]) -> RgbImage {
        let mut out = RgbImage::filled(height, width, fill);
        for r in 0..height.min(self.height.saturating_sub(row)) {
            for c in 0..width.min(self.width.saturating_sub(col)) {
                out.data[r * width + c] = self.data[(row + r) * self.width + col + c];
            }
        }
        out
    }
}

fn rot90_data<T: Copy>(data: &[T], height: usize, width: usize) -> Vec<T> {
    // Counter-clockwise: new (r, c) = old (c, width - 1 - r).
    let mut out = Vec::with_capacity(data.len());
    for r in 0..width {
        for c in 0..height {
            out.push(data[c * width + (width - 1 - r)]);
        }
    }
    out
}

fn flip_h_data<T: Copy>(data: &[T], height: usize, width: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(data.len());
    for r in 0..height {
        for c in (0..width).rev() {
            out.push(data[r * width + c]);
        }
    }
    out
}

fn flip_v_data<T: Copy>(data: &[T], height: usize, width: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(data.len());
    for r in (0..height).rev() {
        out.extend_from_slice(&data[r * width..(r + 1) * width]);
    }
    out
}
