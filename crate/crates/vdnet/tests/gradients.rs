//! Central finite differences as an independent oracle for every
//! gradient path: randomly built CNN classifiers (each parameter and
//! each input pixel), the saliency sensitivity map, and the two-term
//! detection loss. The differencing never touches the reverse pass, so
//! agreement here means the tape's adjoints are right, not merely
//! self-consistent.

mod common;

use common::{class_names, close, fd_check_classifier, loss_value, random_classifier, H};
use std::time::{Duration, Instant};
use vdnet::dorsal::{detection_loss, AnchorTarget, BoxDelta};
use vdnet::network::{classifier_spec, LayerSpec, Model};
use vdnet::rng::SplitMix64;
use vdnet::tensor::{Tape, Tensor};
use vdnet::ventral::sensitivity_map;

#[test]
fn every_gradient_of_a_hundred_random_networks_matches_differencing() {
    let start = Instant::now();
    let mut rng = SplitMix64::new(0x6Dad);
    let mut checked = 0usize;
    for net in 0..100 {
        let (mut model, image, label) = random_classifier(&mut rng);
        assert!(model.param_count() <= 1000, "net {net} too large");
        checked += fd_check_classifier(&mut model, &image, label, net);
    }
    assert!(checked > 10_000, "suite only probed {checked} coordinates");
    assert!(
        start.elapsed() < Duration::from_secs(120),
        "gradient suite too slow: {:?}",
        start.elapsed()
    );
}

/// The check above drives bespoke tiny nets; this one pins the
/// production patch-classifier stack itself, parameters and input both,
/// on strided spot-checked coordinates.
#[test]
fn the_patch_classifier_architecture_passes_the_same_check() {
    let mut rng = SplitMix64::new(41);
    let (shape, layers) = classifier_spec(16);
    let mut model = Model::new(shape.clone(), layers, class_names(4), &mut rng).unwrap();
    let image = Tensor::from_fn(shape, |_| rng.next_f64());
    let label = 2;

    let mut tape = Tape::new();
    let input = image.clone().requires_grad();
    let logits = model.forward(&mut tape, &input).unwrap();
    let loss = tape.softmax_cross_entropy(&logits, label).unwrap();
    let grads = tape.backward(&loss).unwrap();

    for p in 0..model.params().len() {
        let analytic = grads.grad(&model.params()[p].tensor).unwrap();
        let base = model.params()[p].tensor.data().to_vec();
        for k in (0..base.len()).step_by(97) {
            let mut bumped = base.clone();
            bumped[k] = base[k] + H;
            model.set_param(p, bumped);
            let up = loss_value(&model, &image, label);
            let mut bumped = base.clone();
            bumped[k] = base[k] - H;
            model.set_param(p, bumped);
            let down = loss_value(&model, &image, label);
            let numeric = (up - down) / (2.0 * H);
            assert!(
                close(analytic.data()[k], numeric, 1e-4, 1e-7),
                "param {p}[{k}]: analytic {} vs numeric {}",
                analytic.data()[k],
                numeric
            );
        }
        model.set_param(p, base);
    }
    let input_grad = grads.grad(&input).unwrap();
    let base = image.data().to_vec();
    for k in (0..base.len()).step_by(23) {
        let probe = |delta: f64| {
            let mut bumped = base.clone();
            bumped[k] = base[k] + delta;
            loss_value(&model, &Tensor::new(image.shape().to_vec(), bumped), label)
        };
        let numeric = (probe(H) - probe(-H)) / (2.0 * H);
        assert!(close(input_grad.data()[k], numeric, 1e-4, 1e-7));
    }
}

#[test]
fn sensitivity_map_matches_differencing_of_the_summed_activation() {
    let mut rng = SplitMix64::new(0x5a11);
    for round in 0..6 {
        let shape = vec![2, 6, 6];
        let layers = vec![
            LayerSpec::Conv { out_channels: 3, kernel: 3, stride: 1, padding: 1 },
            LayerSpec::Relu,
            LayerSpec::Conv { out_channels: 2, kernel: 3, stride: 1, padding: 1 },
            LayerSpec::Relu,
            LayerSpec::Flatten,
            LayerSpec::Dense { out_features: 3 },
        ];
        let model = Model::new(shape.clone(), layers, class_names(3), &mut rng).unwrap();
        let image = Tensor::from_fn(shape.clone(), |_| rng.next_normal());
        let sens = sensitivity_map(&model, &image).unwrap();
        let last_conv = model.last_conv_layer().unwrap();

        // The scalar the map differentiates: the sum over the deepest
        // conv layer's raw output.
        let total = |img: &Tensor| -> f64 {
            let mut tape = Tape::inactive();
            let (_, captured) = model.forward_capturing(&mut tape, img, &[last_conv]).unwrap();
            captured[0].1.sum_value()
        };

        let base = image.data().to_vec();
        let mut smooth = 0usize;
        for k in 0..base.len() {
            let probe = |delta: f64| {
                let mut bumped = base.clone();
                bumped[k] = base[k] + delta;
                total(&Tensor::new(shape.clone(), bumped))
            };
            let wide = (probe(1e-4) - probe(-1e-4)) / 2e-4;
            let narrow = (probe(5e-5) - probe(-5e-5)) / 1e-4;
            if !close(wide, narrow, 1e-4, 1e-9) {
                // The probe straddles a relu kink; the derivative is not
                // defined there, so the coordinate is skipped.
                continue;
            }
            smooth += 1;
            assert!(
                close(sens.data()[k], narrow.abs(), 1e-3, 1e-8),
                "round {round} pixel {k}: map {} vs |difference| {}",
                sens.data()[k],
                narrow.abs()
            );
        }
        // Kinks are a measure-zero set; nearly every pixel must have
        // been checked for the pass to mean anything.
        assert!(
            smooth * 10 >= base.len() * 8,
            "round {round}: only {smooth}/{} pixels were smooth",
            base.len()
        );
    }
}

#[test]
fn detection_loss_gradients_match_differencing() {
    common::fd_check_detection_loss(0xdead, 8);
}
