//! Toy U-Net: an encoder/decoder of 3x3 convolutions with skip connections
//! and a sigmoid head producing a per-pixel probability map.
//!
//! Parameter order (also the weight-file order), with `c_l = base * 2^l`:
//!
//! 1. for each level `l` in `0..depth`: `enc{l}.conv1` weight `[c_l, c_in, 3, 3]`
//!    and bias `[c_l]`, then `enc{l}.conv2` `[c_l, c_l, 3, 3]` and bias;
//!    `c_in` is the input channel count at level 0 and `c_{l-1}` afterwards;
//! 2. `bottleneck.conv1` `[c_d, c_{d-1}, 3, 3]` + bias, `bottleneck.conv2` + bias;
//! 3. for each level `l` from `depth - 1` down to 0: `up{l}` transposed
//!    kernel `[c_{l+1}, c_l, 2, 2]` + bias `[c_l]`, `dec{l}.conv1`
//!    `[c_l, 2 c_l, 3, 3]` + bias, `dec{l}.conv2` `[c_l, c_l, 3, 3]` + bias;
//! 4. `head` `[1, c_0, 1, 1]` + bias `[1]`.

mod augment;
mod train;
mod weights;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use augment::{augment_pair, downscale_mosaic, AugmentationConfig, Flip};
pub use train::{
    learning_rate, train, EpochRecord, OptimizerKind, Sample, TrainConfig, TrainOutcome,
};
pub use weights::{decode_weights, encode_weights, WEIGHT_MAGIC};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::raster::Plane;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct UNetSpec {
    pub depth: usize,
    pub base_channels: usize,
    pub input_channels: usize,
}

impl Default for UNetSpec {
    fn default() -> Self {
        UNetSpec {
            depth: 3,
            base_channels: 8,
            input_channels: 1,
        }
    }
}

impl core::fmt::Display for UNetSpec {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(
            f,
            "depth {} / base channels {} / input channels {}",
            self.depth, self.base_channels, self.input_channels
        )
    }
}

impl UNetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.depth > 8 {
            return Err(Error::invalid("unet spec", format!("depth {} outside 1..=8", self.depth)));
        }
        if self.base_channels == 0 || self.input_channels == 0 {
            return Err(Error::invalid("unet spec", "channel counts must be positive"));
        }
        Ok(())
    }

    /// Spatial dims must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        1 << self.depth
    }

    pub fn check_input_dims(&self, height: usize, width: usize) -> Result<()> {
        let m = self.size_multiple();
        if height == 0 || width == 0 || height % m != 0 || width % m != 0 {
            return Err(Error::invalid(
                "unet input",
                format!("spatial dims {height}x{width} must be positive multiples of {m}"),
            ));
        }
        Ok(())
    }

    fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// `(name, shape)` of every parameter in weight-file order.
    pub fn param_layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut push = |name: String, weight: [usize; 4], bias: usize| {
            out.push((format!("{name}.weight"), weight.to_vec()));
            out.push((format!("{name}.bias"), alloc::vec![bias]));
        };
        let mut prev = self.input_channels;
        for l in 0..self.depth {
            let c = self.channels(l);
            push(format!("enc{l}.conv1"), [c, prev, 3, 3], c);
            push(format!("enc{l}.conv2"), [c, c, 3, 3], c);
            prev = c;
        }
        let cb = self.channels(self.depth);
        push("bottleneck.conv1".into(), [cb, prev, 3, 3], cb);
        push("bottleneck.conv2".into(), [cb, cb, 3, 3], cb);
        for l in (0..self.depth).rev() {
            let c = self.channels(l);
            // transposed kernels are [in, out, k, k]
            push(format!("up{l}"), [self.channels(l + 1), c, 2, 2], c);
            push(format!("dec{l}.conv1"), [c, 2 * c, 3, 3], c);
            push(format!("dec{l}.conv2"), [c, c, 3, 3], c);
        }
        push("head".into(), [1, self.channels(0), 1, 1], 1);
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_layout()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}

/// A U-Net and its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: UNetSpec,
    params: Vec<Tensor>,
}

impl Model {
    pub fn spec(&self) -> &UNetSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn from_params(spec: UNetSpec, params: Vec<Tensor>) -> Result<Self> {
        spec.validate()?;
        let layout = spec.param_layout();
        if layout.len() != params.len() {
            return Err(Error::invalid(
                "model",
                format!("expected {} parameter arrays, got {}", layout.len(), params.len()),
            ));
        }
        for ((name, shape), p) in layout.iter().zip(&params) {
            if p.shape() != shape.as_slice() {
                return Err(Error::invalid(
                    "model",
                    format!("parameter {name} has shape {:?}, expected {shape:?}", p.shape()),
                ));
            }
        }
        Ok(Model { spec, params })
    }

    /// Builds the network for `[N, C, H, W]` input `x`, adding every
    /// parameter to `graph` as a leaf. Returns `(probabilities, params)`.
    pub fn forward(&self, graph: &mut Graph, x: Var) -> Result<(Var, Vec<Var>)> {
        let vars: Vec<Var> = self.params.iter().map(|p| graph.input(p.clone())).collect();
        let out = unet_forward(graph, &self.spec, &vars, x)?;
        Ok((out, vars))
    }

    /// Probability map for a single-channel image.
    pub fn predict(&self, image: &Plane) -> Result<Plane> {
        let out = self.predict_tensor(&image.to_tensor())?;
        Plane::new(image.height, image.width, out.into_data())
    }

    /// Probability maps for a `[N, C, H, W]` batch.
    pub fn predict_tensor(&self, input: &Tensor) -> Result<Tensor> {
        let [_, c, h, w] = input.dims4("predict")?;
        if c != self.spec.input_channels {
            return Err(Error::invalid(
                "predict",
                format!("model expects {} input channels, got {c}", self.spec.input_channels),
            ));
        }
        self.spec.check_input_dims(h, w)?;
        let mut graph = Graph::new();
        let x = graph.input(input.clone());
        let (out, _) = self.forward(&mut graph, x)?;
        Ok(graph.value(out).clone())
    }
}

/// Fan-in scaled uniform initialisation, `U(-sqrt(6 / fan_in), +sqrt(6 / fan_in))`
/// for weights and zero biases, rounded to `f32` precision.
pub fn build(spec: UNetSpec, seed: u64) -> Result<Model> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = spec
        .param_layout()
        .into_iter()
        .map(|(name, shape)| {
            let len: usize = shape.iter().product();
            let data = if name.ends_with(".bias") {
                alloc::vec![0.0; len]
            } else {
                let fan_in = if name.starts_with("up") {
                    shape[0] * shape[2] * shape[3]
                } else {
                    shape[1] * shape[2] * shape[3]
                };
                let bound = libm::sqrt(6.0 / fan_in as f64);
                (0..len)
                    .map(|_| round_f32(rng.random_range(-bound..bound)))
                    .collect()
            };
            Tensor::new(shape, data)
        })
        .collect::<Result<Vec<_>>>()?;
    Model::from_params(spec, params)
}

pub(crate) fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

fn conv_block(graph: &mut Graph, x: Var, p: &[Var]) -> Result<Var> {
    let a = graph.conv2d(x, p[0], 1, 1)?;
    let a = graph.add_bias(a, p[1])?;
    let a = graph.relu(a)?;
    let b = graph.conv2d(a, p[2], 1, 1)?;
    let b = graph.add_bias(b, p[3])?;
    graph.relu(b)
}

/// U-Net forward pass over explicit parameter nodes (see module docs for
/// their order).
pub fn unet_forward(graph: &mut Graph, spec: &UNetSpec, params: &[Var], x: Var) -> Result<Var> {
    let [_, c, h, w] = graph.value(x).dims4("unet")?;
    if c != spec.input_channels {
        return Err(Error::invalid(
            "unet",
            format!("expected {} input channels, got {c}", spec.input_channels),
        ));
    }
    spec.check_input_dims(h, w)?;
    let d = spec.depth;
    let mut cursor = 0;
    let mut take = |n: usize| {
        let s = &params[cursor..cursor + n];
        cursor += n;
        s
    };

    let mut skips = Vec::with_capacity(d);
    let mut h_var = x;
    for _ in 0..d {
        let feat = conv_block(graph, h_var, take(4))?;
        skips.push(feat);
        h_var = graph.maxpool2d(feat, 2, 2)?;
    }
    h_var = conv_block(graph, h_var, take(4))?;
    for skip in skips.into_iter().rev() {
        let p = take(2);
        let up = graph.conv_transpose2d(h_var, p[0], 2)?;
        let up = graph.add_bias(up, p[1])?;
        let cat = graph.concat_channels(skip, up)?;
        h_var = conv_block(graph, cat, take(4))?;
    }
    let p = take(2);
    let logits = graph.conv2d(h_var, p[0], 1, 0)?;
    let logits = graph.add_bias(logits, p[1])?;
    graph.sigmoid(logits)
}
