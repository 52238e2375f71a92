//! The dorsal pathway: a single-stage anchor-box detector.
//!
//! A fixed lattice of anchor boxes tiles the image — one cell per
//! `stride` pixels, several shapes per cell. The network's head emits,
//! per anchor, class logits (background first) and four box-offset
//! values in the usual center/log-size parameterization. Training
//! assigns each anchor a role by IoU against the ground truth (positive,
//! negative, or ignored, with an argmax fallback so every ground-truth
//! box owns at least one positive anchor) and minimizes a two-term loss:
//! softmax cross-entropy over a sampled anchor minibatch plus a weighted
//! smooth-L1 penalty on the positive anchors' offsets.

mod detector;

pub use detector::{
    detect, draw_detections, load_detector, save_detector, train_detector, Detector,
    DetectorReport, DetectorSchedule,
};

use crate::boxes::BBox;
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor};
use serde::{Deserialize, Serialize};

/// One anchor box: center/size plus its position in the head lattice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub center_x: f64,
    pub center_y: f64,
    pub width: f64,
    pub height: f64,
    /// (row, col, slot) in the head grid.
    pub grid_index: (usize, usize, usize),
}

impl Anchor {
    pub fn to_bbox(&self) -> BBox {
        BBox::new(
            self.center_x - self.width / 2.0,
            self.center_y - self.height / 2.0,
            self.center_x + self.width / 2.0,
            self.center_y + self.height / 2.0,
        )
    }
}

/// Box offsets relative to an anchor: center shifts in units of the
/// anchor's size, width/height as log ratios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxDelta {
    pub dx: f64,
    pub dy: f64,
    pub dw: f64,
    pub dh: f64,
}

/// The anchor lattice settings, stored alongside a trained detector so
/// inference always decodes against the lattice it was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorConfig {
    pub stride: usize,
    pub scales: Vec<f64>,
    pub ratios: Vec<f64>,
    /// IoU at or above which an anchor is a positive example.
    pub iou_positive: f64,
    /// IoU strictly below which an anchor is a negative example;
    /// anchors between the two thresholds are ignored.
    pub iou_negative: f64,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        AnchorConfig {
            stride: 8,
            scales: vec![14.0, 20.0, 28.0],
            ratios: vec![0.7, 1.0, 1.4],
            iou_positive: 0.5,
            iou_negative: 0.3,
        }
    }
}

/// Lay the anchor lattice over an `image_h` by `image_w` image. The
/// stride must divide both extents; every cell gets one anchor per
/// (scale, ratio) pair, centered on the cell. A scale-`s` ratio-`r`
/// anchor has width `s * sqrt(r)` and height `s / sqrt(r)`, so `r` is
/// its aspect ratio and `s^2` its area. Anchors come back in row-major
/// grid order with the slot index varying fastest.
pub fn generate_anchors(
    image_h: usize,
    image_w: usize,
    stride: usize,
    scales: &[f64],
    ratios: &[f64],
) -> Result<Vec<Anchor>> {
    if stride == 0 || image_h % stride != 0 || image_w % stride != 0 {
        return Err(Error::AnchorGeometry { stride, h: image_h, w: image_w });
    }
    if scales.is_empty() || ratios.is_empty() {
        return Err(Error::Config("anchor scales and ratios must be non-empty".into()));
    }
    if scales.iter().any(|&s| s <= 0.0) || ratios.iter().any(|&r| r <= 0.0) {
        return Err(Error::Config("anchor scales and ratios must be positive".into()));
    }
    let (rows, cols) = (image_h / stride, image_w / stride);
    let mut anchors = Vec::with_capacity(rows * cols * scales.len() * ratios.len());
    for row in 0..rows {
        for col in 0..cols {
            let center_x = (col as f64 + 0.5) * stride as f64;
            let center_y = (row as f64 + 0.5) * stride as f64;
            let mut slot = 0;
            for &scale in scales {
                for &ratio in ratios {
                    anchors.push(Anchor {
                        center_x,
                        center_y,
                        width: scale * ratio.sqrt(),
                        height: scale / ratio.sqrt(),
                        grid_index: (row, col, slot),
                    });
                    slot += 1;
                }
            }
        }
    }
    Ok(anchors)
}

/// Express a ground-truth box as offsets from an anchor.
pub fn encode_box(anchor: &Anchor, gt: &BBox) -> Result<BoxDelta> {
    if gt.width() <= 0.0 || gt.height() <= 0.0 {
        return Err(Error::DegenerateBox {
            x_min: gt.x_min,
            y_min: gt.y_min,
            x_max: gt.x_max,
            y_max: gt.y_max,
        });
    }
    let (gx, gy) = gt.center();
    Ok(BoxDelta {
        dx: (gx - anchor.center_x) / anchor.width,
        dy: (gy - anchor.center_y) / anchor.height,
        dw: (gt.width() / anchor.width).ln(),
        dh: (gt.height() / anchor.height).ln(),
    })
}

/// Apply offsets to an anchor, producing an absolute box.
pub fn decode_box(anchor: &Anchor, delta: &BoxDelta) -> BBox {
    let cx = anchor.center_x + delta.dx * anchor.width;
    let cy = anchor.center_y + delta.dy * anchor.height;
    let w = anchor.width * delta.dw.exp();
    let h = anchor.height * delta.dh.exp();
    BBox::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
}

/// The training role of one anchor.
#[derive(Debug, Clone, PartialEq)]
pub enum AnchorTarget {
    /// Matched to a ground-truth box: `class` is 1-based (0 is
    /// background), `delta` encodes that box against this anchor.
    Positive { class: usize, delta: BoxDelta },
    Negative,
    Ignore,
}

/// Assign a training role to every anchor. An anchor is positive when
/// its best IoU against the ground truth reaches `iou_positive`, or when
/// it is the single best-overlapping anchor for some ground-truth box —
/// the latter guarantees every box gets at least one positive anchor
/// regardless of thresholds. A positive anchor always encodes its own
/// best-overlapping box. Non-positive anchors are negative when their
/// best IoU is strictly below `iou_negative` and ignored in between.
/// With no ground truth at all, every anchor is negative.
///
/// Ground truth arrives as `(class, box)` pairs with 1-based class
/// indices; 0 is reserved for background.
pub fn assign_targets(
    anchors: &[Anchor],
    gts: &[(usize, BBox)],
    iou_positive: f64,
    iou_negative: f64,
) -> Result<Vec<AnchorTarget>> {
    if anchors.is_empty() {
        return Err(Error::EmptyAnchors);
    }
    if iou_negative >= iou_positive {
        return Err(Error::Config(format!(
            "negative IoU threshold {iou_negative} must be below positive {iou_positive}"
        )));
    }
    for (class, _) in gts {
        if *class == 0 {
            return Err(Error::Config("ground-truth class index 0 is reserved for background".into()));
        }
    }

    // IoU of every anchor against every gt box
    let mut overlap = vec![vec![0.0f64; gts.len()]; anchors.len()];
    for (a, anchor) in anchors.iter().enumerate() {
        let abox = anchor.to_bbox();
        for (g, (_, gbox)) in gts.iter().enumerate() {
            overlap[a][g] = crate::eval::iou(&abox, gbox)?;
        }
    }

    // each anchor's best-overlapping gt, which is what a positive encodes
    let best: Vec<Option<(usize, f64)>> = (0..anchors.len())
        .map(|a| {
            let mut b: Option<(usize, f64)> = None;
            for g in 0..gts.len() {
                if b.is_none_or(|(_, ov)| overlap[a][g] > ov) {
                    b = Some((g, overlap[a][g]));
                }
            }
            b
        })
        .collect();

    // positivity: clearing the threshold, or being some gt's best anchor
    let mut positive = vec![false; anchors.len()];
    for (a, b) in best.iter().enumerate() {
        if matches!(b, Some((_, ov)) if *ov >= iou_positive) {
            positive[a] = true;
        }
    }
    for g in 0..gts.len() {
        let mut champion = 0usize;
        for a in 1..anchors.len() {
            if overlap[a][g] > overlap[champion][g] {
                champion = a;
            }
        }
        positive[champion] = true;
    }

    anchors
        .iter()
        .enumerate()
        .map(|(a, anchor)| {
            Ok(match best[a] {
                Some((g, _)) if positive[a] => AnchorTarget::Positive {
                    class: gts[g].0,
                    delta: encode_box(anchor, &gts[g].1)?,
                },
                Some((_, ov)) if ov >= iou_negative => AnchorTarget::Ignore,
                _ => AnchorTarget::Negative, // includes the no-ground-truth case
            })
        })
        .collect()
}

/// Geometry of a detection head's output volume.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadLayout {
    /// Object classes, excluding background.
    pub classes: usize,
    /// Anchors per grid cell.
    pub slots: usize,
    pub rows: usize,
    pub cols: usize,
}

impl HeadLayout {
    pub fn anchor_count(&self) -> usize {
        self.rows * self.cols * self.slots
    }

    /// Channels per slot: background + classes + four box offsets.
    pub fn block(&self) -> usize {
        1 + self.classes + 4
    }
}

/// Rearrange a head volume `[slots*(1+classes+4), rows, cols]` into
/// per-anchor matrices: `[A, 1+classes]` class logits and `[A, 4]` box
/// deltas, in the same anchor order [`generate_anchors`] uses. Both stay
/// on the tape, so gradients flow back into the head.
pub fn split_head(
    tape: &mut Tape,
    head: &Tensor,
    layout: &HeadLayout,
) -> Result<(Tensor, Tensor)> {
    head.check_rank(3)?;
    let expected = vec![layout.slots * layout.block(), layout.rows, layout.cols];
    if head.shape() != expected.as_slice() {
        return Err(Error::ShapeMismatch {
            op: "split_head",
            left: expected,
            right: head.shape().to_vec(),
        });
    }
    let plane = layout.rows * layout.cols;
    let n_cls = 1 + layout.classes;
    let mut cls_idx = Vec::with_capacity(layout.anchor_count() * n_cls);
    let mut reg_idx = Vec::with_capacity(layout.anchor_count() * 4);
    for row in 0..layout.rows {
        for col in 0..layout.cols {
            let cell = row * layout.cols + col;
            for slot in 0..layout.slots {
                let base = slot * layout.block();
                for k in 0..n_cls {
                    cls_idx.push((base + k) * plane + cell);
                }
                for k in 0..4 {
                    reg_idx.push((base + n_cls + k) * plane + cell);
                }
            }
        }
    }
    let cls_flat = tape.gather(head, &cls_idx);
    let cls = tape.reshape(&cls_flat, vec![layout.anchor_count(), n_cls])?;
    let reg_flat = tape.gather(head, &reg_idx);
    let reg = tape.reshape(&reg_flat, vec![layout.anchor_count(), 4])?;
    Ok((cls, reg))
}

/// Loss decomposition for one training step.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub cls: f64,
    pub reg: f64,
}

/// The detector's two-term objective:
///
/// ```text
/// L = (1/n_cls) * sum CE(scores_i, class_i)        over sampled anchors
///   + lambda * (1/n_reg) * sum smoothL1(delta_i)   over sampled positives
/// ```
///
/// `sample` picks the anchors contributing to the classification term;
/// positives among them (and only those) contribute regression. With no
/// positives in the sample the regression term is exactly zero. With
/// `lambda` zero the loss is pure classification.
pub fn detection_loss(
    tape: &mut Tape,
    cls_scores: &Tensor,
    box_deltas: &Tensor,
    targets: &[AnchorTarget],
    sample: &[usize],
    lambda: f64,
    n_cls: usize,
    n_reg: usize,
) -> Result<(Tensor, LossParts)> {
    cls_scores.check_rank(2)?;
    box_deltas.check_rank(2)?;
    let anchors = cls_scores.shape()[0];
    if box_deltas.shape()[0] != anchors || targets.len() != anchors || box_deltas.shape()[1] != 4 {
        return Err(Error::MisalignedAnchors {
            scores: cls_scores.shape()[0],
            deltas: box_deltas.shape()[0],
            targets: targets.len(),
        });
    }
    if n_cls == 0 || n_reg == 0 {
        return Err(Error::Config("loss normalizers must be positive".into()));
    }
    if sample.is_empty() {
        return Err(Error::Config("anchor sample must not be empty".into()));
    }
    if let Some(&bad) = sample.iter().find(|&&i| i >= anchors) {
        return Err(Error::Config(format!("sampled anchor {bad} out of range ({anchors})")));
    }

    let width = cls_scores.shape()[1];
    let mut cls_sum: Option<Tensor> = None;
    let mut reg_sum: Option<Tensor> = None;
    for &i in sample {
        let logits_idx: Vec<usize> = (0..width).map(|k| i * width + k).collect();
        let logits = tape.gather(cls_scores, &logits_idx);
        let label = match &targets[i] {
            AnchorTarget::Positive { class, .. } => *class,
            AnchorTarget::Negative => 0,
            AnchorTarget::Ignore => {
                return Err(Error::Config(format!("anchor {i} in the sample is marked ignore")));
            }
        };
        let ce = tape.softmax_cross_entropy(&logits, label)?;
        cls_sum = Some(match cls_sum {
            None => ce,
            Some(t) => tape.add(&t, &ce)?,
        });

        if let AnchorTarget::Positive { delta, .. } = &targets[i] {
            if lambda != 0.0 {
                let delta_idx: Vec<usize> = (0..4).map(|k| i * 4 + k).collect();
                let pred = tape.gather(box_deltas, &delta_idx);
                let want = Tensor::new(vec![4], vec![delta.dx, delta.dy, delta.dw, delta.dh]);
                let l1 = tape.smooth_l1_sum(&pred, &want, 1.0)?;
                reg_sum = Some(match reg_sum {
                    None => l1,
                    Some(t) => tape.add(&t, &l1)?,
                });
            }
        }
    }

    let cls_term = tape.scale(&cls_sum.expect("sample is non-empty"), 1.0 / n_cls as f64);
    let (loss, reg_value) = match reg_sum {
        Some(r) => {
            let reg_term = tape.scale(&r, lambda / n_reg as f64);
            (tape.add(&cls_term, &reg_term)?, reg_term.item())
        }
        None => (cls_term.clone(), 0.0),
    };
    let parts = LossParts { total: loss.item(), cls: cls_term.item(), reg: reg_value };
    Ok((loss, parts))
}

/// Pick the anchor minibatch for one step: up to a quarter positives
/// (randomly thinned if there are more), topped up with negatives to
/// `batch` total. Ignored anchors never enter the sample.
pub fn sample_anchors(
    targets: &[AnchorTarget],
    batch: usize,
    rng: &mut crate::rng::SplitMix64,
) -> Vec<usize> {
    let mut positives: Vec<usize> = Vec::new();
    let mut negatives: Vec<usize> = Vec::new();
    for (i, t) in targets.iter().enumerate() {
        match t {
            AnchorTarget::Positive { .. } => positives.push(i),
            AnchorTarget::Negative => negatives.push(i),
            AnchorTarget::Ignore => {}
        }
    }
    let max_pos = (batch / 4).max(1);
    if positives.len() > max_pos {
        rng.shuffle(&mut positives);
        positives.truncate(max_pos);
        positives.sort_unstable();
    }
    let want_neg = batch.saturating_sub(positives.len()).min(negatives.len());
    if negatives.len() > want_neg {
        rng.shuffle(&mut negatives);
        negatives.truncate(want_neg);
        negatives.sort_unstable();
    }
    positives.extend(negatives);
    positives
}
