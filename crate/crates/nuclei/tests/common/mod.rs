#![allow(dead_code)]

use nuclei_core::fcn::{Model, UNetSpec};
use nuclei_core::Tensor;

/// Depth-1, one-channel U-Net whose output is `sigmoid(gain * (x - level))`
/// for non-negative input density `x`: the encoder and decoder pass the
/// skip path through unchanged and the bottleneck is zeroed.
pub fn threshold_model(gain: f64, level: f64) -> Model {
    let spec = UNetSpec {
        depth: 1,
        base_channels: 1,
        input_channels: 1,
    };
    let params = spec
        .param_layout()
        .into_iter()
        .map(|(name, shape)| {
            let n: usize = shape.iter().product();
            let mut data = vec![0.0; n];
            match name.as_str() {
                // centre tap of channel 0
                "enc0.conv1.weight" | "enc0.conv2.weight" | "dec0.conv1.weight" | "dec0.conv2.weight" => data[4] = 1.0,
                "head.weight" => data[0] = gain,
                "head.bias" => data[0] = -gain * level,
                _ => {}
            }
            Tensor::new(shape, data).unwrap()
        })
        .collect();
    Model::from_params(spec, params).unwrap()
}
