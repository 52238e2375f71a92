//! The ventral pathway: turn a trained classifier into a spatial
//! attention mask.
//!
//! The classifier's deepest conv layer summarizes what the network saw.
//! Summing that raw activation volume — first over space per filter,
//! then over filters — gives a single scalar measure of total feature
//! response. The gradient of that scalar with respect to the *input
//! image* says how much each pixel could move the network's overall
//! response; its absolute value is the sensitivity map. Aggregated
//! across color channels, blurred, and thresholded at its own mean, it
//! becomes a binary mask that keeps the image regions the classifier
//! cares about and blanks the rest.

use crate::error::{Error, Result};
use crate::network::Model;
use crate::tensor::{Tape, Tensor};
use serde::{Deserialize, Serialize};

/// Per-filter spatial sums of a `[K,H,W]` activation volume: one number
/// per filter, `F_k = sum over (x, y)` of the raw activation.
pub fn gap_per_filter(tape: &mut Tape, activation: &Tensor) -> Result<Tensor> {
    tape.channel_sums(activation)
}

/// Collapse per-filter totals `[K]` into the scalar total response.
/// Composing this with [`gap_per_filter`] produces exactly the same
/// floating-point value as summing the activation volume directly —
/// both reduce innermost axes first, so the additions happen in the
/// same order.
pub fn gestalt_total(tape: &mut Tape, per_filter: &Tensor) -> Result<Tensor> {
    per_filter.check_rank(1)?;
    Ok(tape.sum_all(per_filter))
}

/// How pixel-level sensitivity is collapsed across image channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Mean,
    Max,
}

/// Saliency extraction settings.
///
/// `variance` is quoted for a nominal 224x224 input and rescaled by the
/// actual image area, so the blur covers the same *fraction* of the
/// image at any resolution. `kernel_radius: None` picks
/// `ceil(3 * effective sigma)`, clamped to at least 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VentralConfig {
    pub variance: f64,
    pub kernel_radius: Option<usize>,
    pub aggregation: Aggregation,
}

impl Default for VentralConfig {
    fn default() -> Self {
        VentralConfig { variance: 30.0, kernel_radius: None, aggregation: Aggregation::Mean }
    }
}

impl VentralConfig {
    /// The blur variance actually used on an `h` by `w` image.
    pub fn effective_variance(&self, h: usize, w: usize) -> f64 {
        self.variance * (h * w) as f64 / (224.0 * 224.0)
    }

    /// The kernel radius actually used on an `h` by `w` image.
    pub fn effective_radius(&self, h: usize, w: usize) -> usize {
        match self.kernel_radius {
            Some(r) => r,
            None => ((3.0 * self.effective_variance(h, w).sqrt()).ceil() as usize).max(1),
        }
    }
}

/// `|d(total response) / d(input)|`, one forward and one backward pass.
/// The total response is taken from the deepest conv layer's raw
/// (pre-activation) output. Shape matches the input image.
pub fn sensitivity_map(model: &Model, image: &Tensor) -> Result<Tensor> {
    let conv_idx = model.last_conv_layer().ok_or(Error::NoConvLayer)?;
    let mut tape = Tape::new();
    let x = image.clone().requires_grad();
    let (_, captured) = model.forward_capturing(&mut tape, &x, &[conv_idx])?;
    let per_filter = gap_per_filter(&mut tape, &captured[0].1)?;
    let total = gestalt_total(&mut tape, &per_filter)?;
    let grads = tape.backward(&total)?;
    Ok(grads.grad(&x)?.abs())
}

/// Collapse `[C,H,W]` sensitivity to a single `[H,W]` map.
pub fn aggregate_channels(sensitivity: &Tensor, mode: Aggregation) -> Result<Tensor> {
    sensitivity.check_rank(3)?;
    let (c, h, w) = (sensitivity.shape()[0], sensitivity.shape()[1], sensitivity.shape()[2]);
    let data = sensitivity.data();
    let plane = h * w;
    let out = (0..plane)
        .map(|i| match mode {
            Aggregation::Mean => (0..c).map(|ch| data[ch * plane + i]).sum::<f64>() / c as f64,
            Aggregation::Max => (0..c).map(|ch| data[ch * plane + i]).fold(f64::MIN, f64::max),
        })
        .collect();
    Ok(Tensor::new(vec![h, w], out))
}

/// A `(2r+1)` square Gaussian kernel normalized to unit sum.
pub fn gaussian_kernel(variance: f64, radius: usize) -> Result<Tensor> {
    if variance <= 0.0 || !variance.is_finite() {
        return Err(Error::NonPositiveVariance(variance));
    }
    let side = 2 * radius + 1;
    let mut data = Vec::with_capacity(side * side);
    for y in 0..side {
        for x in 0..side {
            let dy = y as f64 - radius as f64;
            let dx = x as f64 - radius as f64;
            data.push((-(dx * dx + dy * dy) / (2.0 * variance)).exp());
        }
    }
    let total: f64 = data.iter().sum();
    Ok(Tensor::new(vec![side, side], data.iter().map(|v| v / total).collect()))
}

/// Convolve a `[H,W]` map with a square kernel under mirror padding
/// (out-of-range indices reflect off the edges without repeating them).
/// The kernel must fit: its radius can be at most `H - 1` and `W - 1`.
pub fn smooth(map: &Tensor, kernel: &Tensor) -> Result<Tensor> {
    map.check_rank(2)?;
    kernel.check_rank(2)?;
    let (h, w) = (map.shape()[0], map.shape()[1]);
    let side = kernel.shape()[0];
    if kernel.shape()[1] != side || side % 2 == 0 {
        return Err(Error::ShapeMismatch {
            op: "smooth",
            left: map.shape().to_vec(),
            right: kernel.shape().to_vec(),
        });
    }
    let radius = side / 2;
    if radius >= h || radius >= w {
        return Err(Error::KernelTooLarge { radius, h, w });
    }
    let reflect = |i: isize, n: usize| -> usize {
        let mut i = i;
        let n = n as isize;
        while i < 0 || i >= n {
            if i < 0 {
                i = -i;
            }
            if i >= n {
                i = 2 * n - 2 - i;
            }
        }
        i as usize
    };
    let src = map.data();
    let k = kernel.data();
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for ky in 0..side {
                let sy = reflect(y as isize + ky as isize - radius as isize, h);
                for kx in 0..side {
                    let sx = reflect(x as isize + kx as isize - radius as isize, w);
                    acc += k[ky * side + kx] * src[sy * w + sx];
                }
            }
            out.push(acc);
        }
    }
    Ok(Tensor::new(vec![h, w], out))
}

/// Threshold a map at its own mean: values at or above the mean become
/// 1, the rest 0. A constant map (ties everywhere) maps to all ones.
/// Scaling the map by any positive factor does not change the result.
pub fn binarize_mean_threshold(map: &Tensor) -> Result<Tensor> {
    map.check_rank(2)?;
    let mean = map.mean_value();
    Ok(map.map(|v| if v >= mean { 1.0 } else { 0.0 }))
}

/// Zero out the masked-away pixels of a `[C,H,W]` image with a `[H,W]`
/// mask of exact zeros and ones, applied identically to every channel.
pub fn apply_mask(image: &Tensor, mask: &Tensor) -> Result<Tensor> {
    image.check_rank(3)?;
    mask.check_rank(2)?;
    if image.shape()[1..] != *mask.shape() {
        return Err(Error::ShapeMismatch {
            op: "apply_mask",
            left: image.shape().to_vec(),
            right: mask.shape().to_vec(),
        });
    }
    if let Some((index, &value)) =
        mask.data().iter().enumerate().find(|(_, &v)| v != 0.0 && v != 1.0)
    {
        return Err(Error::NonBinaryMask { value, index });
    }
    let plane = mask.numel();
    let m = mask.data();
    let data = image.data().iter().enumerate().map(|(i, &v)| v * m[i % plane]).collect();
    Ok(Tensor::new(image.shape().to_vec(), data))
}

/// Fraction of mask pixels that are 1.
pub fn mask_coverage(mask: &Tensor) -> f64 {
    mask.mean_value()
}

/// Every intermediate product of the saliency pipeline, kept around for
/// inspection and for writing out as images.
#[derive(Debug, Clone)]
pub struct SaliencyArtifacts {
    /// `[C,H,W]` absolute input gradient.
    pub raw_sensitivity: Tensor,
    /// `[H,W]` channel-aggregated map.
    pub aggregated: Tensor,
    /// `[H,W]` Gaussian-blurred map.
    pub smoothed: Tensor,
    /// `[H,W]` binary attention mask.
    pub mask: Tensor,
    /// `[C,H,W]` input with masked-away pixels zeroed.
    pub masked_image: Tensor,
}

/// Run the full saliency pipeline on one image: sensitivity, channel
/// aggregation, Gaussian smoothing, mean thresholding, masking.
pub fn ventral_pipeline(
    model: &Model,
    image: &Tensor,
    cfg: &VentralConfig,
) -> Result<SaliencyArtifacts> {
    image.check_rank(3)?;
    let (h, w) = (image.shape()[1], image.shape()[2]);
    let raw_sensitivity = sensitivity_map(model, image)?;
    let aggregated = aggregate_channels(&raw_sensitivity, cfg.aggregation)?;
    let kernel = gaussian_kernel(cfg.effective_variance(h, w), cfg.effective_radius(h, w))?;
    let smoothed = smooth(&aggregated, &kernel)?;
    let mask = binarize_mean_threshold(&smoothed)?;
    let masked_image = apply_mask(image, &mask)?;
    Ok(SaliencyArtifacts { raw_sensitivity, aggregated, smoothed, mask, masked_image })
}
