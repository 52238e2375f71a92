//! Helpers shared by the integration test binaries: random classifier
//! construction and the finite-difference probe loop.

#![allow(dead_code)]

use vdnet::dorsal::{detection_loss, AnchorTarget, BoxDelta};
use vdnet::network::{LayerSpec, Model};
use vdnet::rng::SplitMix64;
use vdnet::tensor::{Tape, Tensor};

pub const H: f64 = 1e-5;

/// |a - b| within atol + rtol·max(|a|, |b|).
pub fn close(a: f64, b: f64, rtol: f64, atol: f64) -> bool {
    (a - b).abs() <= atol + rtol * a.abs().max(b.abs())
}

pub fn class_names(n: usize) -> Vec<String> {
    (0..n).map(|k| format!("class{k}")).collect()
}

/// Cross-entropy of the model on one image, computed without recording
/// anything — the value the differencing probes.
pub fn loss_value(model: &Model, image: &Tensor, label: usize) -> f64 {
    let mut tape = Tape::inactive();
    let logits = model.forward(&mut tape, image).unwrap();
    tape.softmax_cross_entropy(&logits, label).unwrap().item()
}

/// A small random classifier: architecture drawn from five shapes that
/// between them cover conv (padded, unpadded, 1x1), relu, max-pool,
/// global average pool, flatten, and dense, on a random input size.
pub fn random_classifier(rng: &mut SplitMix64) -> (Model, Tensor, usize) {
    let channels = rng.next_range(1, 3) as usize;
    let side = 2 * rng.next_range(2, 4) as usize;
    let classes = 3usize;
    let layers = match rng.next_range(0, 5) {
        0 => vec![LayerSpec::Flatten, LayerSpec::Dense { out_features: classes }],
        1 => vec![
            LayerSpec::Conv { out_channels: 3, kernel: 3, stride: 1, padding: 1 },
            LayerSpec::Relu,
            LayerSpec::Flatten,
            LayerSpec::Dense { out_features: classes },
        ],
        2 => vec![
            LayerSpec::Conv { out_channels: 4, kernel: 3, stride: 1, padding: 1 },
            LayerSpec::MaxPool { window: 2, stride: 2 },
            LayerSpec::Flatten,
            LayerSpec::Dense { out_features: classes },
        ],
        3 => vec![
            LayerSpec::Conv { out_channels: 2, kernel: 1, stride: 1, padding: 0 },
            LayerSpec::Relu,
            LayerSpec::Gap,
            LayerSpec::Dense { out_features: classes },
        ],
        _ => vec![
            LayerSpec::Conv { out_channels: 3, kernel: 3, stride: 1, padding: 0 },
            LayerSpec::Relu,
            LayerSpec::Flatten,
            LayerSpec::Dense { out_features: classes },
        ],
    };
    let shape = vec![channels, side, side];
    let model = Model::new(shape.clone(), layers, class_names(classes), rng).unwrap();
    let image = Tensor::from_fn(shape, |_| rng.next_normal());
    let label = rng.next_range(0, classes as i64 - 1) as usize;
    (model, image, label)
}

/// Check every parameter coordinate and every input pixel of one
/// classifier against central differences at rtol 1e-4 / atol 1e-7.
/// Returns the number of coordinates probed; panics on any mismatch.
pub fn fd_check_classifier(model: &mut Model, image: &Tensor, label: usize, tag: usize) -> usize {
    let mut tape = Tape::new();
    let input = image.clone().requires_grad();
    let logits = model.forward(&mut tape, &input).unwrap();
    let loss = tape.softmax_cross_entropy(&logits, label).unwrap();
    let grads = tape.backward(&loss).unwrap();
    let input_grad = grads.grad(&input).unwrap();
    let mut checked = 0usize;

    for p in 0..model.params().len() {
        let analytic = grads.grad(&model.params()[p].tensor).unwrap();
        let base = model.params()[p].tensor.data().to_vec();
        for k in 0..base.len() {
            let mut bumped = base.clone();
            bumped[k] = base[k] + H;
            model.set_param(p, bumped);
            let up = loss_value(model, image, label);
            let mut bumped = base.clone();
            bumped[k] = base[k] - H;
            model.set_param(p, bumped);
            let down = loss_value(model, image, label);
            let numeric = (up - down) / (2.0 * H);
            assert!(
                close(analytic.data()[k], numeric, 1e-4, 1e-7),
                "net {tag} param {p}[{k}]: analytic {} vs numeric {}",
                analytic.data()[k],
                numeric
            );
            checked += 1;
        }
        model.set_param(p, base);
    }

    let base = image.data().to_vec();
    for k in 0..base.len() {
        let probe = |delta: f64| {
            let mut bumped = base.clone();
            bumped[k] = base[k] + delta;
            loss_value(model, &Tensor::new(image.shape().to_vec(), bumped), label)
        };
        let numeric = (probe(H) - probe(-H)) / (2.0 * H);
        assert!(
            close(input_grad.data()[k], numeric, 1e-4, 1e-7),
            "net {tag} input pixel {k}: analytic {} vs numeric {}",
            input_grad.data()[k],
            numeric
        );
        checked += 1;
    }
    checked
}

/// Random but kink-free regression targets: each error magnitude stays
/// clear of the quadratic/linear junction at beta = 1.
pub fn offset_clear_of_junction(rng: &mut SplitMix64) -> f64 {
    let sign = if rng.next_f64() < 0.5 { -1.0 } else { 1.0 };
    let magnitude = if rng.next_f64() < 0.5 {
        0.8 * rng.next_f64()
    } else {
        1.2 + 0.8 * rng.next_f64()
    };
    sign * magnitude
}

/// Finite-difference check of the two-term detection loss over
/// `rounds` random target layouts. Panics on any mismatch.
pub fn fd_check_detection_loss(seed: u64, rounds: usize) {
    let mut rng = SplitMix64::new(seed);
    for round in 0..rounds {
        let anchors = 12usize;
        let classes = 3usize;
        let lambda = if round % 3 == 2 { 0.0 } else { 10.0 };

        let mut targets = Vec::with_capacity(anchors);
        let mut sample = Vec::new();
        for a in 0..anchors {
            let target = match rng.next_range(0, 2) {
                0 => AnchorTarget::Positive {
                    class: rng.next_range(1, classes as i64) as usize,
                    delta: BoxDelta {
                        dx: offset_clear_of_junction(&mut rng),
                        dy: offset_clear_of_junction(&mut rng),
                        dw: offset_clear_of_junction(&mut rng),
                        dh: offset_clear_of_junction(&mut rng),
                    },
                },
                1 => AnchorTarget::Negative,
                _ => AnchorTarget::Ignore,
            };
            if !matches!(target, AnchorTarget::Ignore) && rng.next_f64() < 0.7 {
                sample.push(a);
            }
            targets.push(target);
        }
        if sample.is_empty() {
            sample.push(
                targets
                    .iter()
                    .position(|t| !matches!(t, AnchorTarget::Ignore))
                    .expect("some anchor is not ignored"),
            );
        }

        let cls_base: Vec<f64> = (0..anchors * (1 + classes)).map(|_| rng.next_normal()).collect();
        // Predicted deltas near zero: the positives' target offsets were
        // drawn to keep every error term away from the junction.
        let reg_base: Vec<f64> = (0..anchors * 4).map(|_| 0.05 * rng.next_normal()).collect();

        let mut tape = Tape::new();
        let cls = Tensor::new(vec![anchors, 1 + classes], cls_base.clone()).requires_grad();
        let reg = Tensor::new(vec![anchors, 4], reg_base.clone()).requires_grad();
        let (loss, _) =
            detection_loss(&mut tape, &cls, &reg, &targets, &sample, lambda, sample.len(), anchors)
                .unwrap();
        let grads = tape.backward(&loss).unwrap();

        let eval_at = |cls_data: Vec<f64>, reg_data: Vec<f64>| -> f64 {
            let mut tape = Tape::inactive();
            let cls = Tensor::new(vec![anchors, 1 + classes], cls_data);
            let reg = Tensor::new(vec![anchors, 4], reg_data);
            detection_loss(&mut tape, &cls, &reg, &targets, &sample, lambda, sample.len(), anchors)
                .unwrap()
                .0
                .item()
        };

        let cls_grad = grads.grad(&cls).unwrap();
        for k in 0..cls_base.len() {
            let mut up = cls_base.clone();
            up[k] += H;
            let mut down = cls_base.clone();
            down[k] -= H;
            let numeric =
                (eval_at(up, reg_base.clone()) - eval_at(down, reg_base.clone())) / (2.0 * H);
            assert!(
                close(cls_grad.data()[k], numeric, 1e-4, 1e-7),
                "round {round} cls[{k}]: analytic {} vs numeric {}",
                cls_grad.data()[k],
                numeric
            );
        }

        // With lambda 0 or no sampled positive the regression head never
        // enters the graph; its gradient is identically zero.
        let reg_grad = grads
            .get(&reg)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(vec![anchors, 4]));
        for k in 0..reg_base.len() {
            let mut up = reg_base.clone();
            up[k] += H;
            let mut down = reg_base.clone();
            down[k] -= H;
            let numeric =
                (eval_at(cls_base.clone(), up) - eval_at(cls_base.clone(), down)) / (2.0 * H);
            assert!(
                close(reg_grad.data()[k], numeric, 1e-4, 1e-7),
                "round {round} reg[{k}]: analytic {} vs numeric {}",
                reg_grad.data()[k],
                numeric
            );
        }
    }
}
