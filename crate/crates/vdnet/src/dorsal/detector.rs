//! The detector network and its training/inference drivers.
//!
//! The backbone halves the resolution three times (so the lattice
//! stride is 8) and a final 3x3 convolution emits the per-anchor
//! predictions as channels. A trained detector can optionally run
//! behind the ventral pathway: the image is masked to its salient
//! region first and the detector only ever sees the masked pixels.

use super::{
    assign_targets, decode_box, detection_loss, generate_anchors, sample_anchors, split_head,
    Anchor, AnchorConfig, HeadLayout,
};
use crate::boxes::{BBox, Detection};
use crate::data::{LoadedDataset, Split};
use crate::error::{Error, Result};
use crate::eval::nms;
use crate::network::{load_checkpoint, save_checkpoint, LayerSpec, Model, SgdMomentum};
use crate::rng::SplitMix64;
use crate::tensor::{Tape, Tensor};
use crate::ventral::{ventral_pipeline, VentralConfig};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// A detection network plus the anchor lattice it predicts against.
#[derive(Debug, Clone)]
pub struct Detector {
    pub model: Model,
    pub anchors: AnchorConfig,
}

/// Backbone + head layer stack for `(1 + classes + 4) * slots` output
/// channels: three stride-2 pooling stages, then a 3x3 prediction conv.
fn detector_layers(head_channels: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::Conv { out_channels: 16, kernel: 3, stride: 1, padding: 1 },
        LayerSpec::Relu,
        LayerSpec::MaxPool { window: 2, stride: 2 },
        LayerSpec::Conv { out_channels: 32, kernel: 3, stride: 1, padding: 1 },
        LayerSpec::Relu,
        LayerSpec::MaxPool { window: 2, stride: 2 },
        LayerSpec::Conv { out_channels: 48, kernel: 3, stride: 1, padding: 1 },
        LayerSpec::Relu,
        LayerSpec::MaxPool { window: 2, stride: 2 },
        LayerSpec::Conv { out_channels: head_channels, kernel: 3, stride: 1, padding: 1 },
    ]
}

impl Detector {
    /// Build a freshly initialized detector for `height` x `width` RGB
    /// images over the given object classes (background is added as
    /// class 0 internally). The anchor stride must match the backbone's
    /// total downsampling, which is 8.
    pub fn new(
        height: usize,
        width: usize,
        object_classes: &[String],
        anchors: AnchorConfig,
        rng: &mut SplitMix64,
    ) -> Result<Detector> {
        if object_classes.is_empty() {
            return Err(Error::Config("detector needs at least one object class".into()));
        }
        let slots = anchors.scales.len() * anchors.ratios.len();
        let head_channels = slots * (1 + object_classes.len() + 4);
        let mut class_names = vec!["background".to_string()];
        class_names.extend(object_classes.iter().cloned());
        let model = Model::new(
            vec![3, height, width],
            detector_layers(head_channels),
            class_names,
            rng,
        )?;
        let det = Detector { model, anchors };
        det.layout()?; // catches a stride that disagrees with the backbone
        Ok(det)
    }

    /// The head geometry, cross-checked against the anchor settings.
    pub fn layout(&self) -> Result<HeadLayout> {
        let input = self.model.input_shape();
        let output = self.model.output_shape();
        if input.len() != 3 || output.len() != 3 {
            return Err(Error::Config(format!(
                "detector expects image-to-map shapes, got {input:?} -> {output:?}"
            )));
        }
        let (h, w) = (input[1], input[2]);
        let stride = self.anchors.stride;
        if stride == 0 || h % stride != 0 || w % stride != 0 {
            return Err(Error::AnchorGeometry { stride, h, w });
        }
        if h / stride != output[1] || w / stride != output[2] {
            return Err(Error::Config(format!(
                "anchor stride {stride} implies a {}x{} lattice but the head emits {}x{}",
                h / stride,
                w / stride,
                output[1],
                output[2]
            )));
        }
        let classes = self.model.class_names().len() - 1;
        let slots = self.anchors.scales.len() * self.anchors.ratios.len();
        let layout = HeadLayout { classes, slots, rows: output[1], cols: output[2] };
        if output[0] != layout.slots * layout.block() {
            return Err(Error::Config(format!(
                "head emits {} channels but {} slots x {} values need {}",
                output[0],
                layout.slots,
                layout.block(),
                layout.slots * layout.block()
            )));
        }
        Ok(layout)
    }

    /// The full anchor lattice for this detector's input size.
    pub fn image_anchors(&self) -> Result<Vec<Anchor>> {
        let input = self.model.input_shape();
        generate_anchors(
            input[1],
            input[2],
            self.anchors.stride,
            &self.anchors.scales,
            &self.anchors.ratios,
        )
    }

    /// 1-based class index for an object class name (0 is background).
    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.model.class_names().iter().position(|c| c == name).filter(|&i| i > 0)
    }
}

/// Write a detector checkpoint: the model with the anchor settings
/// embedded, so inference always decodes against the training lattice.
pub fn save_detector(det: &Detector, path: &Path) -> Result<()> {
    let mut model = det.model.clone();
    model.extra = Some(serde_json::json!({ "anchors": det.anchors }));
    save_checkpoint(&model, path)
}

/// Load a detector checkpoint saved by [`save_detector`].
pub fn load_detector(path: &Path) -> Result<Detector> {
    let model = load_checkpoint(path)?;
    let anchors = model
        .extra
        .as_ref()
        .and_then(|e| e.get("anchors"))
        .cloned()
        .ok_or_else(|| Error::CorruptCheckpoint("checkpoint carries no anchor settings".into()))?;
    let anchors: AnchorConfig = serde_json::from_value(anchors)
        .map_err(|e| Error::CorruptCheckpoint(format!("bad anchor settings: {e}")))?;
    let det = Detector { model, anchors };
    det.layout()?;
    Ok(det)
}

/// Training settings for the detector loop.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectorSchedule {
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Epoch indices (0-based) at which the learning rate is multiplied
    /// by `decay_factor` before the epoch runs.
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    /// Weight on the box-regression term.
    pub lambda: f64,
    /// Anchors sampled per image for the classification term.
    pub anchor_batch: usize,
    pub seed: u64,
}

impl Default for DetectorSchedule {
    fn default() -> Self {
        DetectorSchedule {
            epochs: 40,
            learning_rate: 0.01,
            momentum: 0.9,
            decay_epochs: vec![30],
            decay_factor: 0.1,
            lambda: 10.0,
            anchor_batch: 32,
            seed: 1,
        }
    }
}

/// Per-epoch loss trace of a detector training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectorReport {
    pub epoch_total: Vec<f64>,
    pub epoch_cls: Vec<f64>,
    pub epoch_reg: Vec<f64>,
    /// Whether images were masked by the ventral pathway first.
    pub masked: bool,
    pub final_learning_rate: f64,
}

/// Train a detector on one split of a dataset, one image per step.
///
/// With `ventral` set, every training image is first run through the
/// saliency pipeline and the detector sees only the masked image; the
/// masks are computed once up front, not per epoch. Anchor targets are
/// likewise assigned once per image. Each step samples an anchor
/// minibatch, takes the two-term loss over it, and applies one SGD
/// momentum update.
pub fn train_detector(
    det: &mut Detector,
    ds: &LoadedDataset,
    split: Split,
    ventral: Option<(&Model, &VentralConfig)>,
    schedule: &DetectorSchedule,
) -> Result<DetectorReport> {
    let layout = det.layout()?;
    let anchors = det.image_anchors()?;
    let cfg = &ds.manifest.config;
    let input = det.model.input_shape();
    if [3, cfg.height, cfg.width] != input[..] {
        return Err(Error::Config(format!(
            "detector expects {input:?} images but the dataset provides [3, {}, {}]",
            cfg.height, cfg.width
        )));
    }

    let records = ds.split(split);
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }

    // one-time work per image: render, optional masking, anchor roles
    let mut images = Vec::with_capacity(records.len());
    let mut targets = Vec::with_capacity(records.len());
    for record in &records {
        let image = ds.render(record);
        let image = match ventral {
            Some((vmodel, vcfg)) => ventral_pipeline(vmodel, &image, vcfg)?.masked_image,
            None => image,
        };
        let gts: Vec<(usize, BBox)> = record
            .objects
            .iter()
            .map(|gt| {
                det.class_index(&gt.class)
                    .map(|c| (c, gt.bbox))
                    .ok_or_else(|| Error::DatasetMismatch {
                        message: format!("class '{}' is not one the detector predicts", gt.class),
                    })
            })
            .collect::<Result<_>>()?;
        images.push(image);
        targets.push(assign_targets(&anchors, &gts, det.anchors.iou_positive, det.anchors.iou_negative)?);
    }

    let mut opt = SgdMomentum::new(&det.model, schedule.learning_rate, schedule.momentum);
    let mut report = DetectorReport {
        epoch_total: Vec::with_capacity(schedule.epochs),
        epoch_cls: Vec::with_capacity(schedule.epochs),
        epoch_reg: Vec::with_capacity(schedule.epochs),
        masked: ventral.is_some(),
        final_learning_rate: schedule.learning_rate,
    };

    let mut order: Vec<usize> = (0..images.len()).collect();
    for epoch in 0..schedule.epochs {
        if schedule.decay_epochs.contains(&epoch) {
            opt.learning_rate *= schedule.decay_factor;
        }
        let mut shuffle_rng =
            SplitMix64::derive(schedule.seed, 0xd0c5_0000_0000_0000 | epoch as u64);
        shuffle_rng.shuffle(&mut order);

        let (mut total_sum, mut cls_sum, mut reg_sum) = (0.0, 0.0, 0.0);
        for (step, &idx) in order.iter().enumerate() {
            let mut sample_rng = SplitMix64::derive(
                schedule.seed,
                0xa5a0_0000_0000_0000 | (epoch * images.len() + step) as u64,
            );
            let sample = sample_anchors(&targets[idx], schedule.anchor_batch, &mut sample_rng);

            let mut tape = Tape::new();
            let head = det.model.forward(&mut tape, &images[idx])?;
            let (cls_scores, box_deltas) = split_head(&mut tape, &head, &layout)?;
            let (loss, parts) = detection_loss(
                &mut tape,
                &cls_scores,
                &box_deltas,
                &targets[idx],
                &sample,
                schedule.lambda,
                sample.len(),
                anchors.len(),
            )?;
            if !parts.total.is_finite() {
                return Err(Error::Divergence { epoch, step });
            }
            total_sum += parts.total;
            cls_sum += parts.cls;
            reg_sum += parts.reg;
            let grads = tape.backward(&loss)?;
            opt.step(&mut det.model, &grads)?;
        }
        let n = images.len() as f64;
        report.epoch_total.push(total_sum / n);
        report.epoch_cls.push(cls_sum / n);
        report.epoch_reg.push(reg_sum / n);
    }
    report.final_learning_rate = opt.learning_rate;
    Ok(report)
}

/// Run the detector on one image and return its surviving detections,
/// highest score first.
///
/// With `ventral` set, the image is masked by the saliency pipeline
/// before the detector sees it; the result is identical to masking the
/// image yourself and calling `detect` without the ventral arguments.
/// Every anchor contributes one candidate per object class whose softmax
/// probability clears `score_thresh`; candidates are decoded, clipped to
/// the image, and reduced by per-class non-maximum suppression at
/// `nms_thresh`.
pub fn detect(
    det: &Detector,
    image: &Tensor,
    ventral: Option<(&Model, &VentralConfig)>,
    score_thresh: f64,
    nms_thresh: f64,
) -> Result<Vec<Detection>> {
    if image.shape() != det.model.input_shape() {
        return Err(Error::ShapeMismatch {
            op: "detect",
            left: det.model.input_shape().to_vec(),
            right: image.shape().to_vec(),
        });
    }
    let image = match ventral {
        Some((vmodel, vcfg)) => ventral_pipeline(vmodel, image, vcfg)?.masked_image,
        None => image.clone(),
    };

    let layout = det.layout()?;
    let anchors = det.image_anchors()?;
    let mut tape = Tape::inactive();
    let head = det.model.forward(&mut tape, &image)?;
    let (cls_scores, box_deltas) = split_head(&mut tape, &head, &layout)?;

    let (img_w, img_h) = (det.model.input_shape()[2] as f64, det.model.input_shape()[1] as f64);
    let names = det.model.class_names();
    let width = 1 + layout.classes;
    let mut candidates = Vec::new();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (a, anchor) in anchors.iter().enumerate() {
        let probs = stable_softmax(&cls_scores.data()[a * width..(a + 1) * width]);
        let d = &box_deltas.data()[a * 4..(a + 1) * 4];
        let delta = super::BoxDelta { dx: d[0], dy: d[1], dw: d[2], dh: d[3] };
        for class in 1..width {
            let score = probs[class];
            lo = lo.min(score);
            hi = hi.max(score);
            if score < score_thresh {
                continue;
            }
            let bbox = decode_box(anchor, &delta).clip(img_w, img_h);
            if bbox.is_degenerate() {
                continue;
            }
            candidates.push(Detection { class: names[class].clone(), score, bbox });
        }
    }
    if anchors.len() > 1 && hi - lo < 1e-12 {
        log::warn!(
            "degenerate score distribution: all {} anchor scores within {:e} of each other",
            anchors.len(),
            hi - lo
        );
    }
    nms(&candidates, nms_thresh)
}

fn stable_softmax(logits: &[f64]) -> Vec<f64> {
    let zmax = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - zmax).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / total).collect()
}

/// Class-indexed outline colors for rendered detections, as RGB in
/// `[0, 1]`.
const PALETTE: [[f64; 3]; 6] = [
    [1.0, 0.1, 0.1],
    [0.1, 1.0, 0.1],
    [0.2, 0.4, 1.0],
    [1.0, 1.0, 0.1],
    [1.0, 0.1, 1.0],
    [0.1, 1.0, 1.0],
];

/// Paint one-pixel box outlines onto a copy of `image`, colored by each
/// detection's position in `class_names` (background first, as the
/// detector stores them).
pub fn draw_detections(image: &Tensor, detections: &[Detection], class_names: &[String]) -> Tensor {
    assert_eq!(image.rank(), 3, "expected a [C,H,W] image");
    let (c, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    let mut data = image.data().to_vec();
    for det in detections {
        let palette_idx = class_names
            .iter()
            .position(|n| *n == det.class)
            .map_or(0, |p| p.saturating_sub(1))
            % PALETTE.len();
        let color = PALETTE[palette_idx];
        let x0 = (det.bbox.x_min.round() as isize).clamp(0, w as isize - 1) as usize;
        let x1 = ((det.bbox.x_max.round() as isize) - 1).clamp(0, w as isize - 1) as usize;
        let y0 = (det.bbox.y_min.round() as isize).clamp(0, h as isize - 1) as usize;
        let y1 = ((det.bbox.y_max.round() as isize) - 1).clamp(0, h as isize - 1) as usize;
        if x1 < x0 || y1 < y0 {
            continue;
        }
        let mut paint = |x: usize, y: usize| {
            for ch in 0..c {
                data[ch * h * w + y * w + x] = color[ch.min(2)];
            }
        };
        for x in x0..=x1 {
            paint(x, y0);
            paint(x, y1);
        }
        for y in y0..=y1 {
            paint(x0, y);
            paint(x1, y);
        }
    }
    Tensor::new(image.shape().to_vec(), data)
}
