//! SGD with classical momentum and the patch-classifier training loop.

use super::Model;
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::{GradientMap, Tape, Tensor};
use serde::{Deserialize, Serialize};

/// Momentum SGD state: one velocity buffer per model parameter, aligned
/// with the model's parameter order. The update is the classical form
///
/// ```text
/// v <- momentum * v - lr * g
/// p <- p + v
/// ```
#[derive(Debug, Clone)]
pub struct SgdMomentum {
    pub learning_rate: f64,
    pub momentum: f64,
    names: Vec<String>,
    velocity: Vec<Vec<f64>>,
}

impl SgdMomentum {
    pub fn new(model: &Model, learning_rate: f64, momentum: f64) -> Self {
        SgdMomentum {
            learning_rate,
            momentum,
            names: model.params().iter().map(|p| p.name.clone()).collect(),
            velocity: model.params().iter().map(|p| vec![0.0; p.tensor.numel()]).collect(),
        }
    }

    /// Apply one update to every model parameter. A parameter absent from
    /// `grads` (nothing on the tape touched it) is treated as having a
    /// zero gradient: its velocity still decays.
    pub fn step(&mut self, model: &mut Model, grads: &GradientMap) -> Result<()> {
        if self.names.len() != model.params().len()
            || self
                .names
                .iter()
                .zip(model.params())
                .any(|(n, p)| *n != p.name || self.velocity_len(n) != p.tensor.numel())
        {
            return Err(Error::KeyMismatch {
                message: "optimizer state does not match the model's parameters".into(),
            });
        }
        for i in 0..model.params().len() {
            let param = &model.params()[i].tensor;
            let grad = grads.get(param);
            if let Some(g) = grad {
                if g.shape() != param.shape() {
                    return Err(Error::KeyMismatch {
                        message: format!(
                            "gradient shape {:?} does not match parameter '{}' {:?}",
                            g.shape(),
                            model.params()[i].name,
                            param.shape()
                        ),
                    });
                }
            }
            let v = &mut self.velocity[i];
            let mut next = Vec::with_capacity(v.len());
            match grad {
                Some(g) => {
                    let gd = g.data();
                    for j in 0..v.len() {
                        v[j] = self.momentum * v[j] - self.learning_rate * gd[j];
                        next.push(param.data()[j] + v[j]);
                    }
                }
                None => {
                    for j in 0..v.len() {
                        v[j] *= self.momentum;
                        next.push(param.data()[j] + v[j]);
                    }
                }
            }
            model.set_param(i, next);
        }
        Ok(())
    }

    fn velocity_len(&self, name: &str) -> usize {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.velocity[i].len())
            .unwrap_or(0)
    }

    #[cfg(test)]
    pub(crate) fn velocity(&self, index: usize) -> &[f64] {
        &self.velocity[index]
    }
}

/// Everything the training loop needs to know: epoch budget, batching,
/// the optimizer's base settings, stepwise decay points, and a seed for
/// shuffling.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Epoch indices (0-based) at which the learning rate is multiplied
    /// by `decay_factor` before the epoch runs.
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    pub seed: u64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            epochs: 30,
            batch_size: 32,
            learning_rate: 0.05,
            momentum: 0.9,
            decay_epochs: vec![20],
            decay_factor: 0.1,
            seed: 1,
        }
    }
}

/// Per-epoch trace of a classifier training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifierReport {
    /// Mean cross-entropy over the epoch's samples.
    pub epoch_loss: Vec<f64>,
    /// Fraction of training samples whose argmax matched the label, as
    /// measured on the forward passes used for the updates.
    pub epoch_accuracy: Vec<f64>,
    pub batches_per_epoch: usize,
    pub final_learning_rate: f64,
}

/// Train a classifier on `(image, label)` pairs with minibatch SGD,
/// minimizing mean softmax cross-entropy per batch. Samples are shuffled
/// each epoch from the schedule seed. A NaN batch loss aborts with a
/// divergence error rather than continuing on garbage.
pub fn train_classifier(
    model: &mut Model,
    samples: &[(Tensor, usize)],
    schedule: &TrainSchedule,
) -> Result<ClassifierReport> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if schedule.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let n = samples.len();
    let batches_per_epoch = n.div_ceil(schedule.batch_size);
    let mut opt = SgdMomentum::new(model, schedule.learning_rate, schedule.momentum);
    let mut report = ClassifierReport {
        epoch_loss: Vec::with_capacity(schedule.epochs),
        epoch_accuracy: Vec::with_capacity(schedule.epochs),
        batches_per_epoch,
        final_learning_rate: schedule.learning_rate,
    };

    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..schedule.epochs {
        if schedule.decay_epochs.contains(&epoch) {
            opt.learning_rate *= schedule.decay_factor;
        }
        let mut rng = SplitMix64::derive(schedule.seed, 0xe90c_0000_0000_0000 | epoch as u64);
        rng.shuffle(&mut order);

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (step, chunk) in order.chunks(schedule.batch_size).enumerate() {
            let mut tape = Tape::new();
            let mut total: Option<Tensor> = None;
            for &idx in chunk {
                let (image, label) = &samples[idx];
                let logits = model.forward(&mut tape, image)?;
                if argmax(logits.data()) == *label {
                    correct += 1;
                }
                let loss = tape.softmax_cross_entropy(&logits, *label)?;
                total = Some(match total {
                    None => loss,
                    Some(t) => tape.add(&t, &loss)?,
                });
            }
            let batch_loss = tape.scale(&total.expect("chunk is never empty"), 1.0 / chunk.len() as f64);
            let value = batch_loss.item();
            if !value.is_finite() {
                return Err(Error::Divergence { epoch, step });
            }
            loss_sum += value * chunk.len() as f64;
            let grads = tape.backward(&batch_loss)?;
            opt.step(model, &grads)?;
        }
        report.epoch_loss.push(loss_sum / n as f64);
        report.epoch_accuracy.push(correct as f64 / n as f64);
    }
    report.final_learning_rate = opt.learning_rate;
    Ok(report)
}

/// Fraction of `(image, label)` samples whose argmax logit matches the
/// label, without touching any gradients.
pub fn classification_accuracy(model: &Model, samples: &[(Tensor, usize)]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut tape = Tape::inactive();
    let mut correct = 0usize;
    for (image, label) in samples {
        let logits = model.forward(&mut tape, image)?;
        if argmax(logits.data()) == *label {
            correct += 1;
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::LayerSpec;
    use crate::rng::SplitMix64;

    /// w * x summed to a scalar: d(loss)/dw = x exactly, independent of w.
    fn linear_fixture() -> (Model, Tensor) {
        let mut rng = SplitMix64::new(1);
        let mut model = Model::new(
            vec![1, 1, 1],
            vec![LayerSpec::Flatten, LayerSpec::Dense { out_features: 1 }],
            vec![],
            &mut rng,
        )
        .unwrap();
        model.set_param(0, vec![1.0]); // dense1.weight = [[1]]
        model.set_param(1, vec![0.0]); // dense1.bias = [0]
        let input = Tensor::new(vec![1, 1, 1], vec![2.0]);
        (model, input)
    }

    fn one_step(model: &mut Model, input: &Tensor, opt: &mut SgdMomentum) {
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, input).unwrap();
        let loss = tape.sum_all(&out);
        let grads = tape.backward(&loss).unwrap();
        opt.step(model, &grads).unwrap();
    }

    #[test]
    fn plain_sgd_step_moves_against_the_gradient() {
        // momentum 0, lr 0.1, p = 1, g = 2  =>  p = 0.8
        let (mut model, input) = linear_fixture();
        let mut opt = SgdMomentum::new(&model, 0.1, 0.0);
        one_step(&mut model, &input, &mut opt);
        assert_eq!(model.params()[0].tensor.data(), &[0.8]);
        // bias gradient is 1, so it moved by -0.1
        assert_eq!(model.params()[1].tensor.data(), &[-0.1]);
    }

    #[test]
    fn momentum_matches_the_hand_unrolled_recurrence() {
        // constant gradient g = 2, lr 0.1, momentum 0.9:
        //   v1 = -0.2        p1 = 0.8
        //   v2 = 0.9*(-0.2) - 0.2 = -0.38   p2 = 0.42
        let (mut model, input) = linear_fixture();
        let mut opt = SgdMomentum::new(&model, 0.1, 0.9);
        one_step(&mut model, &input, &mut opt);
        assert!((model.params()[0].tensor.data()[0] - 0.8).abs() < 1e-15);
        one_step(&mut model, &input, &mut opt);
        assert!((model.params()[0].tensor.data()[0] - 0.42).abs() < 1e-15);
        assert!((opt.velocity(0)[0] - (-0.38)).abs() < 1e-15);
    }

    #[test]
    fn untouched_params_keep_their_values_and_velocity_decays() {
        let (mut model, input) = linear_fixture();
        let mut opt = SgdMomentum::new(&model, 0.1, 0.9);
        // a loss that never reads the bias: grads contain only the weight
        let mut tape = Tape::new();
        let w = model.params()[0].tensor.clone();
        let x = tape.flatten(&input).unwrap();
        let flat_w = tape.reshape(&w, vec![1]).unwrap();
        let prod = tape.mul(&flat_w, &x).unwrap();
        let loss = tape.sum_all(&prod);
        let grads = tape.backward(&loss).unwrap();
        assert!(grads.get(&model.params()[1].tensor).is_none());

        opt.step(&mut model, &grads).unwrap();
        // fresh optimizer: zero velocity, zero gradient => bias unchanged
        assert_eq!(model.params()[1].tensor.data(), &[0.0]);
        // weight picked up velocity -0.2; a grad-free second step coasts
        // on the decayed velocity
        let before = model.params()[0].tensor.data()[0];
        let empty = {
            let mut t = Tape::new();
            let c = Tensor::scalar(1.0).requires_grad();
            let s = t.scale(&c, 1.0);
            t.backward(&s).unwrap()
        };
        opt.step(&mut model, &empty).unwrap();
        let coast = model.params()[0].tensor.data()[0] - before;
        assert!((coast - 0.9 * -0.2).abs() < 1e-15);
    }

    #[test]
    fn optimizer_rejects_a_different_model() {
        let (model, _) = linear_fixture();
        let mut opt = SgdMomentum::new(&model, 0.1, 0.0);
        let mut rng = SplitMix64::new(3);
        let mut other = Model::new(
            vec![1, 1, 1],
            vec![LayerSpec::Flatten, LayerSpec::Dense { out_features: 3 }],
            vec![],
            &mut rng,
        )
        .unwrap();
        let mut tape = Tape::new();
        let out = other.forward(&mut tape, &Tensor::full(vec![1, 1, 1], 1.0)).unwrap();
        let loss = tape.sum_all(&out);
        let grads = tape.backward(&loss).unwrap();
        assert!(matches!(
            opt.step(&mut other, &grads),
            Err(Error::KeyMismatch { .. })
        ));
    }

    /// Bright patches vs dark patches: linearly separable by mean level.
    fn separable_patches(n_per_class: usize, seed: u64) -> Vec<(Tensor, usize)> {
        let mut rng = SplitMix64::new(seed);
        let mut out = Vec::new();
        for i in 0..2 * n_per_class {
            let label = i % 2;
            let base = if label == 0 { 0.2 } else { 0.8 };
            let image = Tensor::from_fn(vec![1, 8, 8], |_| base + 0.05 * (rng.next_f64() - 0.5));
            out.push((image, label));
        }
        out
    }

    fn separable_model(seed: u64) -> Model {
        let mut rng = SplitMix64::new(seed);
        Model::new(
            vec![1, 8, 8],
            vec![
                LayerSpec::Conv { out_channels: 4, kernel: 3, stride: 1, padding: 1 },
                LayerSpec::Relu,
                LayerSpec::Gap,
                LayerSpec::Dense { out_features: 2 },
            ],
            vec!["dark".into(), "bright".into()],
            &mut rng,
        )
        .unwrap()
    }

    #[test]
    fn separable_patches_reach_full_train_accuracy() {
        let samples = separable_patches(16, 5);
        let mut model = separable_model(6);
        let schedule = TrainSchedule {
            epochs: 50,
            batch_size: 8,
            learning_rate: 0.1,
            momentum: 0.9,
            decay_epochs: vec![],
            decay_factor: 1.0,
            seed: 7,
        };
        let report = train_classifier(&mut model, &samples, &schedule).unwrap();
        assert_eq!(report.batches_per_epoch, 4);
        assert!(
            report.epoch_accuracy.iter().any(|&a| a == 1.0),
            "never hit 100% train accuracy: {:?}",
            report.epoch_accuracy
        );
        // and the final model really classifies every sample
        let mut tape = Tape::inactive();
        for (image, label) in &samples {
            let logits = model.forward(&mut tape, image).unwrap();
            assert_eq!(argmax(logits.data()), *label);
        }
    }

    #[test]
    fn batch_count_rounds_up() {
        let samples = separable_patches(50, 8); // 100 samples
        let mut model = separable_model(9);
        let schedule = TrainSchedule {
            epochs: 1,
            batch_size: 32,
            ..TrainSchedule::default()
        };
        let report = train_classifier(&mut model, &samples, &schedule).unwrap();
        assert_eq!(report.batches_per_epoch, 4);
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let samples = separable_patches(8, 10);
        let mut model = separable_model(11);
        let before: Vec<Vec<f64>> =
            model.params().iter().map(|p| p.tensor.data().to_vec()).collect();
        let schedule = TrainSchedule {
            epochs: 3,
            learning_rate: 0.0,
            momentum: 0.9,
            ..TrainSchedule::default()
        };
        train_classifier(&mut model, &samples, &schedule).unwrap();
        for (p, b) in model.params().iter().zip(&before) {
            assert_eq!(p.tensor.data(), b.as_slice());
        }
    }

    #[test]
    fn learning_rate_decays_at_the_scheduled_epochs() {
        let samples = separable_patches(4, 12);
        let mut model = separable_model(13);
        let schedule = TrainSchedule {
            epochs: 4,
            batch_size: 8,
            learning_rate: 0.08,
            momentum: 0.0,
            decay_epochs: vec![1, 3],
            decay_factor: 0.5,
            seed: 1,
        };
        let report = train_classifier(&mut model, &samples, &schedule).unwrap();
        assert!((report.final_learning_rate - 0.02).abs() < 1e-15);
    }

    #[test]
    fn exploding_loss_reports_divergence() {
        let samples = separable_patches(8, 14);
        // no relu: nothing clamps the blow-up, so an absurd learning rate
        // must overflow within a few steps
        let mut rng = SplitMix64::new(15);
        let mut model = Model::new(
            vec![1, 8, 8],
            vec![
                LayerSpec::Conv { out_channels: 4, kernel: 3, stride: 1, padding: 1 },
                LayerSpec::Gap,
                LayerSpec::Dense { out_features: 2 },
            ],
            vec![],
            &mut rng,
        )
        .unwrap();
        let schedule = TrainSchedule {
            epochs: 40,
            batch_size: 16,
            learning_rate: 1e15,
            momentum: 0.9,
            decay_epochs: vec![],
            decay_factor: 1.0,
            seed: 2,
        };
        assert!(matches!(
            train_classifier(&mut model, &samples, &schedule),
            Err(Error::Divergence { .. })
        ));
    }

    #[test]
    fn empty_sample_list_is_rejected() {
        let mut model = separable_model(16);
        assert!(matches!(
            train_classifier(&mut model, &[], &TrainSchedule::default()),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn accuracy_counts_argmax_matches() {
        // one output logit: the argmax is always class 0
        let (model, _) = linear_fixture();
        let samples = vec![
            (Tensor::full(vec![1, 1, 1], 0.3), 0),
            (Tensor::full(vec![1, 1, 1], -1.0), 0),
            (Tensor::full(vec![1, 1, 1], 2.0), 1),
            (Tensor::full(vec![1, 1, 1], 0.5), 1),
        ];
        assert_eq!(classification_accuracy(&model, &samples).unwrap(), 0.5);
        assert!(matches!(
            classification_accuracy(&model, &[]),
            Err(Error::EmptyDataset)
        ));
    }
}
