//! Detection scoring: IoU, per-class non-maximum suppression, average
//! precision with all-points interpolation, and the side-by-side
//! masked-vs-unmasked comparison report.

use crate::boxes::{BBox, Detection, GroundTruth};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Intersection-over-union of two boxes. Both boxes must have positive
/// extent.
pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    for bx in [a, b] {
        if bx.is_degenerate() {
            return Err(Error::DegenerateBox {
                x_min: bx.x_min,
                y_min: bx.y_min,
                x_max: bx.x_max,
                y_max: bx.y_max,
            });
        }
    }
    let inter = a.intersection_area(b);
    Ok(inter / (a.area() + b.area() - inter))
}

/// Greedy per-class non-maximum suppression: walk each class's boxes in
/// descending score order, keep the current box, and drop any remaining
/// same-class box whose IoU with a kept box exceeds `thresh`. Equal
/// scores are broken by input order. The survivors come back sorted by
/// descending score. Applying the same suppression twice changes
/// nothing: every survivor already cleared every kept box above it.
pub fn nms(detections: &[Detection], thresh: f64) -> Result<Vec<Detection>> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&i, &j| {
        detections[j].score.partial_cmp(&detections[i].score).unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut keep = vec![false; detections.len()];
    for (rank, &i) in order.iter().enumerate() {
        let mut suppressed = false;
        for &j in &order[..rank] {
            if keep[j]
                && detections[j].class == detections[i].class
                && iou(&detections[j].bbox, &detections[i].bbox)? > thresh
            {
                suppressed = true;
                break;
            }
        }
        keep[i] = !suppressed;
    }
    Ok(order.into_iter().filter(|&i| keep[i]).map(|i| detections[i].clone()).collect())
}

/// One point on a precision/recall curve, recorded after each detection
/// in descending-score order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

/// Average precision from a TP/FP sequence already sorted by descending
/// score, using all-points interpolation: the area under the staircase
/// whose height at recall r is the best precision achieved at any
/// recall >= r.
pub fn average_precision(hits: &[bool], gt_count: usize) -> (f64, Vec<PrPoint>) {
    if gt_count == 0 {
        return (0.0, Vec::new());
    }
    let mut curve = Vec::with_capacity(hits.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for &hit in hits {
        if hit {
            tp += 1;
        } else {
            fp += 1;
        }
        curve.push(PrPoint {
            recall: tp as f64 / gt_count as f64,
            precision: tp as f64 / (tp + fp) as f64,
        });
    }
    let mut ap = 0.0;
    let mut best = 0.0f64;
    let mut next_recall = curve.last().map_or(0.0, |p| p.recall);
    for p in curve.iter().rev() {
        best = best.max(p.precision);
        ap += (next_recall - p.recall) * best;
        next_recall = p.recall;
    }
    ap += next_recall * best; // the segment from recall 0 to the first point
    (ap, curve)
}

/// Per-class slice of an evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassEval {
    pub class: String,
    pub gt_count: usize,
    pub detection_count: usize,
    pub ap: f64,
    pub pr_curve: Vec<PrPoint>,
}

/// Full evaluation of a detection run at one IoU threshold. `mean_ap`
/// averages over the classes that have at least one ground-truth box;
/// classes that only appear in detections are ignored entirely.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub iou_threshold: f64,
    pub image_count: usize,
    pub classes: Vec<ClassEval>,
    pub mean_ap: f64,
}

/// Score detections against ground truth over a set of images. Matching
/// is greedy in descending score order: each detection claims the still
/// unmatched ground-truth box it overlaps best, counting as a true
/// positive when that IoU reaches the threshold. A second detection on
/// an already-claimed box is a false positive, as is anything below the
/// threshold.
pub fn evaluate(
    images: &[(Vec<Detection>, Vec<GroundTruth>)],
    iou_threshold: f64,
) -> Result<EvalReport> {
    // class universe: every class with ground truth, alphabetical
    let mut class_names: Vec<String> = Vec::new();
    for (_, gts) in images {
        for gt in gts {
            if !class_names.contains(&gt.class) {
                class_names.push(gt.class.clone());
            }
        }
    }
    class_names.sort();

    let mut classes = Vec::with_capacity(class_names.len());
    for name in &class_names {
        // all detections of this class, tagged with their image
        let mut dets: Vec<(usize, &Detection)> = Vec::new();
        for (img, (ds, _)) in images.iter().enumerate() {
            dets.extend(ds.iter().filter(|d| d.class == *name).map(|d| (img, d)));
        }
        dets.sort_by(|a, b| b.1.score.partial_cmp(&a.1.score).unwrap_or(std::cmp::Ordering::Equal));

        let mut gt_count = 0usize;
        let mut claimed: Vec<Vec<bool>> = Vec::with_capacity(images.len());
        for (_, gts) in images {
            let mine: Vec<bool> = gts.iter().map(|g| g.class != *name).collect();
            gt_count += mine.iter().filter(|&&taken| !taken).count();
            claimed.push(mine); // foreign-class boxes start "claimed"
        }

        let mut hits = Vec::with_capacity(dets.len());
        for (img, det) in &dets {
            let gts = &images[*img].1;
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in gts.iter().enumerate() {
                if claimed[*img][g] {
                    continue;
                }
                let overlap = iou(&det.bbox, &gt.bbox)?;
                if best.is_none_or(|(_, b)| overlap > b) {
                    best = Some((g, overlap));
                }
            }
            match best {
                Some((g, overlap)) if overlap >= iou_threshold => {
                    claimed[*img][g] = true;
                    hits.push(true);
                }
                _ => hits.push(false),
            }
        }
        let (ap, pr_curve) = average_precision(&hits, gt_count);
        classes.push(ClassEval {
            class: name.clone(),
            gt_count,
            detection_count: dets.len(),
            ap,
            pr_curve,
        });
    }

    let mean_ap = if classes.is_empty() {
        0.0
    } else {
        classes.iter().map(|c| c.ap).sum::<f64>() / classes.len() as f64
    };
    Ok(EvalReport { iou_threshold, image_count: images.len(), classes, mean_ap })
}

/// Summary of per-image attention mask coverage (fraction of pixels let
/// through).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoverageStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub per_image: Vec<f64>,
}

impl CoverageStats {
    pub fn from_fractions(per_image: &[f64]) -> Option<CoverageStats> {
        if per_image.is_empty() {
            return None;
        }
        Some(CoverageStats {
            mean: per_image.iter().sum::<f64>() / per_image.len() as f64,
            min: per_image.iter().copied().fold(f64::INFINITY, f64::min),
            max: per_image.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            per_image: per_image.to_vec(),
        })
    }
}

/// One class row of a masked-vs-unmasked comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub class: String,
    pub ap_unmasked: f64,
    pub ap_masked: f64,
    pub delta: f64,
}

/// Paired comparison of two evaluations of the same test set: one with
/// the detector seeing raw images, one with attention-masked images.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Comparison {
    pub iou_threshold: f64,
    pub rows: Vec<ComparisonRow>,
    pub map_unmasked: f64,
    pub map_masked: f64,
    pub map_delta: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mask_coverage: Option<CoverageStats>,
}

/// Pair up two reports class by class. The reports must describe the
/// same dataset — same image count, same classes, same per-class ground
/// truth — otherwise the comparison would be meaningless and an error is
/// returned. Identical detection sets produce deltas of exactly zero.
pub fn compare_masked_unmasked(
    unmasked: &EvalReport,
    masked: &EvalReport,
    coverage: &[f64],
) -> Result<Comparison> {
    let mismatch = |message: String| Err(Error::DatasetMismatch { message });
    if unmasked.iou_threshold != masked.iou_threshold {
        return mismatch(format!(
            "IoU thresholds differ: {} vs {}",
            unmasked.iou_threshold, masked.iou_threshold
        ));
    }
    if unmasked.image_count != masked.image_count {
        return mismatch(format!(
            "image counts differ: {} vs {}",
            unmasked.image_count, masked.image_count
        ));
    }
    if unmasked.classes.len() != masked.classes.len() {
        return mismatch("class lists differ".into());
    }
    let mut rows = Vec::with_capacity(unmasked.classes.len());
    for (u, m) in unmasked.classes.iter().zip(&masked.classes) {
        if u.class != m.class || u.gt_count != m.gt_count {
            return mismatch(format!(
                "class '{}' ({} boxes) vs '{}' ({} boxes)",
                u.class, u.gt_count, m.class, m.gt_count
            ));
        }
        rows.push(ComparisonRow {
            class: u.class.clone(),
            ap_unmasked: u.ap,
            ap_masked: m.ap,
            delta: m.ap - u.ap,
        });
    }
    Ok(Comparison {
        iou_threshold: unmasked.iou_threshold,
        rows,
        map_unmasked: unmasked.mean_ap,
        map_masked: masked.mean_ap,
        map_delta: masked.mean_ap - unmasked.mean_ap,
        mask_coverage: CoverageStats::from_fractions(coverage),
    })
}

impl Comparison {
    /// Plain-text table: one column per class plus mAP, one row per arm
    /// and one for the deltas.
    pub fn to_table(&self) -> String {
        let mut header = format!("{:<12}", "method");
        for row in &self.rows {
            header.push_str(&format!("{:>10}", row.class));
        }
        header.push_str(&format!("{:>10}", "mAP"));

        let line = |label: &str, cells: Vec<f64>, signed: bool| {
            let mut s = format!("{label:<12}");
            for v in cells {
                if signed {
                    s.push_str(&format!("{v:>+10.3}"));
                } else {
                    s.push_str(&format!("{v:>10.3}"));
                }
            }
            s
        };
        let mut cells_u: Vec<f64> = self.rows.iter().map(|r| r.ap_unmasked).collect();
        cells_u.push(self.map_unmasked);
        let mut cells_m: Vec<f64> = self.rows.iter().map(|r| r.ap_masked).collect();
        cells_m.push(self.map_masked);
        let mut cells_d: Vec<f64> = self.rows.iter().map(|r| r.delta).collect();
        cells_d.push(self.map_delta);

        let mut out = String::new();
        out.push_str(&header);
        out.push('\n');
        out.push_str(&line("unmasked", cells_u, false));
        out.push('\n');
        out.push_str(&line("masked", cells_m, false));
        out.push('\n');
        out.push_str(&line("delta", cells_d, true));
        if let Some(cov) = &self.mask_coverage {
            out.push('\n');
            out.push_str(&format!(
                "mask coverage: mean {:.3}, min {:.3}, max {:.3}",
                cov.mean, cov.min, cov.max
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    fn det(class: &str, score: f64, b: [f64; 4]) -> Detection {
        Detection { class: class.into(), score, bbox: BBox::new(b[0], b[1], b[2], b[3]) }
    }

    fn gt(class: &str, b: [f64; 4]) -> GroundTruth {
        GroundTruth { class: class.into(), bbox: BBox::new(b[0], b[1], b[2], b[3]) }
    }

    #[test]
    fn unit_squares_offset_half_a_side_overlap_one_third() {
        let a = BBox::new(0.0, 0.0, 1.0, 1.0);
        let b = BBox::new(0.5, 0.0, 1.5, 1.0);
        assert!((iou(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn iou_basics() {
        let a = BBox::new(2.0, 3.0, 10.0, 8.0);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        let far = BBox::new(100.0, 100.0, 110.0, 105.0);
        assert_eq!(iou(&a, &far).unwrap(), 0.0);
        let flat = BBox::new(0.0, 0.0, 5.0, 0.0);
        assert!(matches!(iou(&a, &flat), Err(Error::DegenerateBox { .. })));
    }

    proptest! {
        #[test]
        fn iou_is_symmetric_and_bounded(
            ax in 0.0..50.0f64, ay in 0.0..50.0f64, aw in 0.5..20.0f64, ah in 0.5..20.0f64,
            bx in 0.0..50.0f64, by in 0.0..50.0f64, bw in 0.5..20.0f64, bh in 0.5..20.0f64,
        ) {
            let a = BBox::new(ax, ay, ax + aw, ay + ah);
            let b = BBox::new(bx, by, bx + bw, by + bh);
            let ab = iou(&a, &b).unwrap();
            let ba = iou(&b, &a).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!((0.0..=1.0).contains(&ab));
        }
    }

    #[test]
    fn staircase_fixture_gives_five_sixths() {
        // TP, FP, TP over two ground-truth boxes:
        //   recall 0.5 @ precision 1, recall 0.5 @ 0.5, recall 1.0 @ 2/3
        // area = 0.5 * 1 + 0.5 * 2/3 = 5/6
        let (ap, curve) = average_precision(&[true, false, true], 2);
        assert!((ap - 5.0 / 6.0).abs() < 1e-12);
        assert_eq!(curve.len(), 3);
        assert_eq!(curve[0], PrPoint { recall: 0.5, precision: 1.0 });
        assert_eq!(curve[2].recall, 1.0);
    }

    #[test]
    fn average_precision_extremes() {
        let (perfect, _) = average_precision(&[true, true], 2);
        assert_eq!(perfect, 1.0);
        let (nothing, _) = average_precision(&[], 2);
        assert_eq!(nothing, 0.0);
        let (misses, _) = average_precision(&[false, false, false], 2);
        assert_eq!(misses, 0.0);
    }

    #[test]
    fn evaluate_matches_greedily_and_each_gt_once() {
        // two detections on the same box: the higher-scoring one is the
        // true positive, the other a false positive
        let images = vec![(
            vec![
                det("circle", 0.9, [0.0, 0.0, 10.0, 10.0]),
                det("circle", 0.8, [1.0, 1.0, 10.0, 10.0]),
            ],
            vec![gt("circle", [0.0, 0.0, 10.0, 10.0])],
        )];
        let report = evaluate(&images, 0.5).unwrap();
        assert_eq!(report.classes.len(), 1);
        assert_eq!(report.classes[0].gt_count, 1);
        assert_eq!(report.classes[0].detection_count, 2);
        assert_eq!(report.classes[0].ap, 1.0); // TP first, FP after full recall
        assert_eq!(report.classes[0].pr_curve[1].precision, 0.5);
    }

    #[test]
    fn classes_without_ground_truth_are_excluded() {
        let images = vec![(
            vec![
                det("circle", 0.9, [0.0, 0.0, 10.0, 10.0]),
                det("ghost", 0.99, [20.0, 20.0, 30.0, 30.0]),
            ],
            vec![gt("circle", [0.0, 0.0, 10.0, 10.0])],
        )];
        let report = evaluate(&images, 0.5).unwrap();
        assert_eq!(report.classes.len(), 1);
        assert_eq!(report.classes[0].class, "circle");
        assert_eq!(report.mean_ap, 1.0);
    }

    #[test]
    fn map_averages_over_present_classes() {
        let images = vec![
            (
                vec![det("circle", 0.9, [0.0, 0.0, 10.0, 10.0])],
                vec![gt("circle", [0.0, 0.0, 10.0, 10.0])],
            ),
            (
                // square detection misses entirely
                vec![det("square", 0.8, [50.0, 50.0, 60.0, 60.0])],
                vec![gt("square", [0.0, 0.0, 10.0, 10.0])],
            ),
        ];
        let report = evaluate(&images, 0.5).unwrap();
        assert_eq!(report.classes.len(), 2);
        assert_eq!(report.mean_ap, 0.5);
        assert_eq!(report.image_count, 2);
    }

    #[test]
    fn matching_never_crosses_images() {
        // a perfect box in the wrong image must not match
        let images = vec![
            (vec![det("circle", 0.9, [0.0, 0.0, 10.0, 10.0])], vec![]),
            (vec![], vec![gt("circle", [0.0, 0.0, 10.0, 10.0])]),
        ];
        let report = evaluate(&images, 0.5).unwrap();
        assert_eq!(report.classes[0].ap, 0.0);
    }

    /// Independent suppression oracle: precompute the full pairwise IoU
    /// matrix, then mark each box suppressed if any kept, same-class,
    /// strictly-earlier box in score order overlaps it too much.
    fn nms_oracle(dets: &[Detection], thresh: f64) -> Vec<usize> {
        let n = dets.len();
        let mut matrix = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                matrix[i][j] = iou(&dets[i].bbox, &dets[j].bbox).unwrap();
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| dets[j].score.partial_cmp(&dets[i].score).unwrap());
        let mut kept: Vec<usize> = Vec::new();
        for &i in &order {
            let ok = kept
                .iter()
                .all(|&k| dets[k].class != dets[i].class || matrix[k][i] <= thresh);
            if ok {
                kept.push(i);
            }
        }
        kept.sort_unstable();
        kept
    }

    #[test]
    fn nms_agrees_with_the_pairwise_oracle() {
        let mut rng = SplitMix64::new(99);
        let classes = ["circle", "square"];
        for _ in 0..300 {
            let n = rng.next_range(1, 10) as usize;
            let dets: Vec<Detection> = (0..n)
                .map(|_| {
                    let x = rng.next_f64() * 20.0;
                    let y = rng.next_f64() * 20.0;
                    let w = 1.0 + rng.next_f64() * 10.0;
                    let h = 1.0 + rng.next_f64() * 10.0;
                    det(
                        classes[rng.next_range(0, 1) as usize],
                        // quantized scores so ties actually happen
                        (rng.next_f64() * 10.0).round() / 10.0,
                        [x, y, x + w, y + h],
                    )
                })
                .collect();
            let thresh = rng.next_f64() * 0.8;
            let kept = nms(&dets, thresh).unwrap();
            // compare as index sets against the oracle
            let mut kept_idx: Vec<usize> = kept
                .iter()
                .map(|k| {
                    dets.iter()
                        .position(|d| {
                            d.score == k.score && d.class == k.class && d.bbox == k.bbox
                        })
                        .unwrap()
                })
                .collect();
            kept_idx.sort_unstable();
            assert_eq!(kept_idx, nms_oracle(&dets, thresh));
        }
    }

    #[test]
    fn nms_is_idempotent() {
        let mut rng = SplitMix64::new(123);
        for _ in 0..100 {
            let n = rng.next_range(0, 12) as usize;
            let dets: Vec<Detection> = (0..n)
                .map(|_| {
                    let x = rng.next_f64() * 15.0;
                    let y = rng.next_f64() * 15.0;
                    det("circle", rng.next_f64(), [x, y, x + 3.0, y + 3.0])
                })
                .collect();
            let once = nms(&dets, 0.4).unwrap();
            let twice = nms(&once, 0.4).unwrap();
            assert_eq!(once, twice);
        }
    }

    #[test]
    fn nms_keeps_other_classes_apart() {
        let dets = vec![
            det("circle", 0.9, [0.0, 0.0, 10.0, 10.0]),
            det("square", 0.8, [0.0, 0.0, 10.0, 10.0]), // same box, other class
            det("circle", 0.7, [1.0, 0.0, 10.0, 10.0]), // heavy overlap, suppressed
        ];
        let kept = nms(&dets, 0.5).unwrap();
        assert_eq!(kept.len(), 2);
        assert_eq!(kept[0].class, "circle");
        assert_eq!(kept[1].class, "square");
    }

    proptest! {
        #[test]
        fn ap_is_invariant_under_score_rescaling(seed in 0u64..500) {
            // evaluation depends on score *order* only: any monotone
            // transform of the scores leaves the report identical
            let mut rng = SplitMix64::new(seed);
            let mut images = Vec::new();
            for _ in 0..3 {
                let mut dets = Vec::new();
                let mut gts = Vec::new();
                for _ in 0..rng.next_range(0, 4) {
                    let x = rng.next_f64() * 30.0;
                    let y = rng.next_f64() * 30.0;
                    gts.push(gt("circle", [x, y, x + 8.0, y + 8.0]));
                }
                for _ in 0..rng.next_range(0, 5) {
                    let x = rng.next_f64() * 30.0;
                    let y = rng.next_f64() * 30.0;
                    dets.push(det("circle", rng.next_f64(), [x, y, x + 8.0, y + 8.0]));
                }
                images.push((dets, gts));
            }
            let base = evaluate(&images, 0.5).unwrap();
            let rescaled: Vec<_> = images
                .iter()
                .map(|(ds, gs)| {
                    let ds = ds
                        .iter()
                        .map(|d| Detection {
                            class: d.class.clone(),
                            score: 0.1 + d.score * 0.5, // strictly monotone
                            bbox: d.bbox,
                        })
                        .collect();
                    (ds, gs.clone())
                })
                .collect();
            let shifted = evaluate(&rescaled, 0.5).unwrap();
            prop_assert_eq!(base.mean_ap, shifted.mean_ap);
            for (a, b) in base.classes.iter().zip(&shifted.classes) {
                prop_assert_eq!(a.ap, b.ap);
            }
        }
    }

    #[test]
    fn identical_runs_compare_with_zero_delta() {
        let images = vec![(
            vec![det("circle", 0.9, [0.0, 0.0, 10.0, 10.0])],
            vec![gt("circle", [0.0, 0.0, 10.0, 10.0]), gt("square", [20.0, 20.0, 30.0, 30.0])],
        )];
        let a = evaluate(&images, 0.5).unwrap();
        let b = evaluate(&images, 0.5).unwrap();
        let cmp = compare_masked_unmasked(&a, &b, &[0.4, 0.6]).unwrap();
        assert_eq!(cmp.map_delta, 0.0);
        assert!(cmp.rows.iter().all(|r| r.delta == 0.0));
        let cov = cmp.mask_coverage.as_ref().unwrap();
        assert_eq!(cov.mean, 0.5);
        assert_eq!(cov.min, 0.4);
        let table = cmp.to_table();
        assert!(table.contains("unmasked"));
        assert!(table.contains("circle"));
        assert!(table.contains("mask coverage"));
    }

    #[test]
    fn comparing_different_datasets_fails() {
        let one = vec![(
            vec![det("circle", 0.9, [0.0, 0.0, 10.0, 10.0])],
            vec![gt("circle", [0.0, 0.0, 10.0, 10.0])],
        )];
        let two = vec![(
            vec![det("square", 0.9, [0.0, 0.0, 10.0, 10.0])],
            vec![gt("square", [0.0, 0.0, 10.0, 10.0])],
        )];
        let a = evaluate(&one, 0.5).unwrap();
        let b = evaluate(&two, 0.5).unwrap();
        assert!(matches!(
            compare_masked_unmasked(&a, &b, &[]),
            Err(Error::DatasetMismatch { .. })
        ));
        // and differing gt counts for the same class also fail
        let three = vec![(
            vec![det("circle", 0.9, [0.0, 0.0, 10.0, 10.0])],
            vec![gt("circle", [0.0, 0.0, 10.0, 10.0]), gt("circle", [30.0, 0.0, 40.0, 10.0])],
        )];
        let c = evaluate(&three, 0.5).unwrap();
        assert!(matches!(
            compare_masked_unmasked(&a, &c, &[]),
            Err(Error::DatasetMismatch { .. })
        ));
    }

    #[test]
    fn comparison_serializes_to_json() {
        let images = vec![(
            vec![det("circle", 0.9, [0.0, 0.0, 10.0, 10.0])],
            vec![gt("circle", [0.0, 0.0, 10.0, 10.0])],
        )];
        let a = evaluate(&images, 0.5).unwrap();
        let cmp = compare_masked_unmasked(&a, &a, &[1.0]).unwrap();
        let json = serde_json::to_value(&cmp).unwrap();
        assert_eq!(json["map_delta"], 0.0);
        assert_eq!(json["rows"][0]["class"], "circle");
    }
}
