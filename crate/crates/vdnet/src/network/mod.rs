//! Model definition and execution: a small CNN described as a list of
//! layer specs, with parameters initialized and stored in declaration
//! order. Composition is validated once at build time; `forward` then
//! runs the layers on a tape and can hand back intermediate activations
//! by layer index (the saliency path needs the raw output of the last
//! conv layer).

mod checkpoint;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use train::{
    classification_accuracy, train_classifier, ClassifierReport, SgdMomentum, TrainSchedule,
};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::{Tape, Tensor};
use serde::{Deserialize, Serialize};

/// One layer of a model, as configuration rather than code.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv { out_channels: usize, kernel: usize, stride: usize, padding: usize },
    Relu,
    MaxPool { window: usize, stride: usize },
    /// Global average pool: `[C,H,W]` down to `[C]`.
    Gap,
    Flatten,
    Dense { out_features: usize },
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::Relu => "relu",
            LayerSpec::MaxPool { .. } => "max_pool",
            LayerSpec::Gap => "gap",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Dense { .. } => "dense",
        }
    }
}

/// A named parameter tensor. The name encodes the owning layer index
/// (`conv0.weight`, `dense5.bias`, ...) and the order of the vector is
/// the canonical parameter order everywhere: optimizer state, gradient
/// application, and checkpoint payload layout all follow it.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
}

/// A layer stack bound to an input shape, with initialized parameters.
#[derive(Debug, Clone)]
pub struct Model {
    layers: Vec<LayerSpec>,
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    class_names: Vec<String>,
    params: Vec<Param>,
    /// Free-form metadata carried through checkpoints (e.g. the anchor
    /// layout a detection head was trained against).
    pub extra: Option<serde_json::Value>,
}

/// Expected parameter layout and output shape for a layer stack on a
/// given input: used both to initialize a model and to validate a
/// checkpoint against its own header.
fn plan(
    input_shape: &[usize],
    layers: &[LayerSpec],
) -> Result<(Vec<(String, Vec<usize>)>, Vec<usize>)> {
    if input_shape.len() != 3 {
        return Err(Error::Rank { expected: 3, shape: input_shape.to_vec() });
    }
    if input_shape.iter().any(|&d| d == 0) {
        return Err(Error::Config(format!("input shape {input_shape:?} has a zero dimension")));
    }
    let mut shape = input_shape.to_vec();
    let mut params = Vec::new();
    for (i, layer) in layers.iter().enumerate() {
        let fail = |message: String| Error::Layer { layer: i, kind: layer.kind(), message };
        match *layer {
            LayerSpec::Conv { out_channels, kernel, stride, padding } => {
                if shape.len() != 3 {
                    return Err(fail(format!("needs a [C,H,W] input, got {shape:?}")));
                }
                if out_channels == 0 || kernel == 0 || stride == 0 {
                    return Err(fail("out_channels, kernel, and stride must be positive".into()));
                }
                let (c, h, w) = (shape[0], shape[1], shape[2]);
                let span = |extent: usize| -> Result<usize> {
                    let padded = extent + 2 * padding;
                    if kernel > padded || (padded - kernel) % stride != 0 {
                        return Err(fail(format!(
                            "kernel {kernel} stride {stride} padding {padding} does not tile {h}x{w}"
                        )));
                    }
                    Ok((padded - kernel) / stride + 1)
                };
                let (oh, ow) = (span(h)?, span(w)?);
                params.push((format!("conv{i}.weight"), vec![out_channels, c, kernel, kernel]));
                params.push((format!("conv{i}.bias"), vec![out_channels]));
                shape = vec![out_channels, oh, ow];
            }
            LayerSpec::Relu => {}
            LayerSpec::MaxPool { window, stride } => {
                if shape.len() != 3 {
                    return Err(fail(format!("needs a [C,H,W] input, got {shape:?}")));
                }
                let (h, w) = (shape[1], shape[2]);
                let span = |extent: usize| -> Result<usize> {
                    if window == 0 || stride == 0 || window > extent || (extent - window) % stride != 0
                    {
                        return Err(fail(format!(
                            "window {window} stride {stride} does not tile {h}x{w}"
                        )));
                    }
                    Ok((extent - window) / stride + 1)
                };
                shape = vec![shape[0], span(h)?, span(w)?];
            }
            LayerSpec::Gap => {
                if shape.len() != 3 {
                    return Err(fail(format!("needs a [C,H,W] input, got {shape:?}")));
                }
                shape = vec![shape[0]];
            }
            LayerSpec::Flatten => {
                shape = vec![shape.iter().product()];
            }
            LayerSpec::Dense { out_features } => {
                if shape.len() != 1 {
                    return Err(fail(format!(
                        "needs a flat input, got {shape:?}; add gap or flatten first"
                    )));
                }
                if out_features == 0 {
                    return Err(fail("out_features must be positive".into()));
                }
                params.push((format!("dense{i}.weight"), vec![out_features, shape[0]]));
                params.push((format!("dense{i}.bias"), vec![out_features]));
                shape = vec![out_features];
            }
        }
    }
    Ok((params, shape))
}

impl Model {
    /// Validate the layer stack against `input_shape` and initialize
    /// parameters: He-normal weights (`std = sqrt(2 / fan_in)`), zero
    /// biases. The same RNG state always produces the same model.
    pub fn new(
        input_shape: Vec<usize>,
        layers: Vec<LayerSpec>,
        class_names: Vec<String>,
        rng: &mut SplitMix64,
    ) -> Result<Model> {
        let (param_plan, output_shape) = plan(&input_shape, &layers)?;
        let params = param_plan
            .into_iter()
            .map(|(name, shape)| {
                let tensor = if name.ends_with(".bias") {
                    Tensor::zeros(shape)
                } else {
                    // fan_in is everything a single output value reads
                    let fan_in: usize = shape[1..].iter().product();
                    let std = (2.0 / fan_in as f64).sqrt();
                    let data = (0..shape.iter().product())
                        .map(|_| rng.next_normal() * std)
                        .collect();
                    Tensor::new(shape, data)
                }
                .requires_grad();
                Param { name, tensor }
            })
            .collect();
        Ok(Model { layers, input_shape, output_shape, class_names, params, extra: None })
    }

    /// Rebuild a model from explicit parameter tensors (the checkpoint
    /// path). Names and shapes must match what `new` would have created.
    pub(crate) fn from_parts(
        input_shape: Vec<usize>,
        layers: Vec<LayerSpec>,
        class_names: Vec<String>,
        params: Vec<Param>,
        extra: Option<serde_json::Value>,
    ) -> Result<Model> {
        let (param_plan, output_shape) = plan(&input_shape, &layers)?;
        if param_plan.len() != params.len() {
            return Err(Error::KeyMismatch {
                message: format!(
                    "layer stack declares {} parameters, got {}",
                    param_plan.len(),
                    params.len()
                ),
            });
        }
        for ((name, shape), param) in param_plan.iter().zip(&params) {
            if *name != param.name || shape != param.tensor.shape() {
                return Err(Error::KeyMismatch {
                    message: format!(
                        "expected parameter '{}' with shape {:?}, got '{}' with shape {:?}",
                        name,
                        shape,
                        param.name,
                        param.tensor.shape()
                    ),
                });
            }
        }
        Ok(Model { layers, input_shape, output_shape, class_names, params, extra })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    /// Replace one parameter tensor (the optimizer update path). The new
    /// tensor keeps the old shape and stays gradient-tracked.
    pub fn set_param(&mut self, index: usize, data: Vec<f64>) {
        let shape = self.params[index].tensor.shape().to_vec();
        self.params[index].tensor = Tensor::new(shape, data).requires_grad();
    }

    fn param_named(&self, name: &str) -> &Tensor {
        &self
            .params
            .iter()
            .find(|p| p.name == name)
            .unwrap_or_else(|| panic!("model is missing parameter '{name}'"))
            .tensor
    }

    /// Index of the deepest conv layer, if any.
    pub fn last_conv_layer(&self) -> Option<usize> {
        self.layers
            .iter()
            .rposition(|l| matches!(l, LayerSpec::Conv { .. }))
    }

    /// Run the model. The input must be `[C,H,W]` with the declared
    /// channel count; height and width may differ from the build-time
    /// shape as long as every layer's geometry still works out, which
    /// lets a classifier trained on patches run on whole scenes.
    pub fn forward(&self, tape: &mut Tape, input: &Tensor) -> Result<Tensor> {
        Ok(self.forward_capturing(tape, input, &[])?.0)
    }

    /// Run the model and also return `(layer index, output)` for each
    /// requested layer, in layer order. Captured tensors are the raw
    /// layer outputs — for a conv layer that is its pre-activation map.
    pub fn forward_capturing(
        &self,
        tape: &mut Tape,
        input: &Tensor,
        capture: &[usize],
    ) -> Result<(Tensor, Vec<(usize, Tensor)>)> {
        input.check_rank(3)?;
        if input.shape()[0] != self.input_shape[0] {
            return Err(Error::ShapeMismatch {
                op: "forward",
                left: self.input_shape.clone(),
                right: input.shape().to_vec(),
            });
        }
        if let Some(&bad) = capture.iter().find(|&&i| i >= self.layers.len()) {
            return Err(Error::Config(format!(
                "capture index {bad} out of range for {} layers",
                self.layers.len()
            )));
        }

        let mut captured = Vec::new();
        let mut cur = input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let wrap = |e: Error| Error::Layer {
                layer: i,
                kind: layer.kind(),
                message: e.to_string(),
            };
            cur = match *layer {
                LayerSpec::Conv { stride, padding, .. } => {
                    let weights = self.param_named(&format!("conv{i}.weight"));
                    let bias = self.param_named(&format!("conv{i}.bias"));
                    tape.conv2d(&cur, weights, bias, stride, padding).map_err(wrap)?
                }
                LayerSpec::Relu => tape.relu(&cur),
                LayerSpec::MaxPool { window, stride } => {
                    tape.maxpool2d(&cur, window, stride).map_err(wrap)?
                }
                LayerSpec::Gap => tape.spatial_mean(&cur).map_err(wrap)?,
                LayerSpec::Flatten => tape.flatten(&cur).map_err(wrap)?,
                LayerSpec::Dense { .. } => {
                    let weights = self.param_named(&format!("dense{i}.weight"));
                    let bias = self.param_named(&format!("dense{i}.bias"));
                    tape.dense(&cur, weights, bias).map_err(wrap)?
                }
            };
            if capture.contains(&i) {
                captured.push((i, cur.clone()));
            }
        }
        Ok((cur, captured))
    }
}

/// The patch classifier architecture used throughout: two conv blocks,
/// global average pooling, one dense head.
pub fn classifier_spec(patch_size: usize) -> (Vec<usize>, Vec<LayerSpec>) {
    let input_shape = vec![3, patch_size, patch_size];
    let layers = vec![
        LayerSpec::Conv { out_channels: 32, kernel: 3, stride: 1, padding: 1 },
        LayerSpec::Relu,
        LayerSpec::MaxPool { window: 2, stride: 2 },
        LayerSpec::Conv { out_channels: 64, kernel: 3, stride: 1, padding: 1 },
        LayerSpec::Relu,
        LayerSpec::Gap,
        LayerSpec::Dense { out_features: crate::data::PATCH_CLASSES.len() },
    ];
    (input_shape, layers)
}
