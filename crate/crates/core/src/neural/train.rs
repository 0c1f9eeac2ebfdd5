//! Training loops for the separator and the frozen-model evaluation
//! classifier.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mixing::MixedSample;

use super::loss::{cross_entropy_grad, pit_loss, pit_loss_grad, softmax, Assignment};
use super::network::{Activation, DenseNetwork};
use super::optim::{Adam, CosineSchedule};
use super::separator::{SeparatorModel, Standardization};

/// Fixed fan-out for batch gradient reduction; chunk sums are combined
/// in chunk order so results do not depend on thread count.
const REDUCE_CHUNKS: usize = 8;

/// Divergence guard threshold.
const LOSS_CEILING: f64 = 1e6;

/// Two-component mixtures unpacked into training tensors.
#[derive(Debug, Clone)]
pub struct SeparationDataset {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<(Vec<f64>, Vec<f64>)>,
    pub labels: Vec<(u32, u32)>,
    pub dim: usize,
}

impl SeparationDataset {
    pub fn from_samples(samples: &[MixedSample]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::parameter("dataset must be nonempty"))?;
        if first.components.len() != 2 {
            return Err(Error::parameter(format!(
                "separator training needs 2-component mixtures, got {}",
                first.components.len()
            )));
        }
        let dim = first.mixture.len();
        let mut inputs = Vec::with_capacity(samples.len());
        let mut targets = Vec::with_capacity(samples.len());
        let mut labels = Vec::with_capacity(samples.len());
        for s in samples {
            inputs.push(s.mixture.clone());
            targets.push((s.components[0].clone(), s.components[1].clone()));
            labels.push((s.component_labels[0], s.component_labels[1]));
        }
        Ok(SeparationDataset {
            inputs,
            targets,
            labels,
            dim,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Knobs shared by both training loops.
#[derive(Debug, Clone)]
pub struct TrainingSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub shuffle_seed: u64,
}

impl Default for TrainingSettings {
    fn default() -> Self {
        TrainingSettings {
            epochs: 30,
            batch_size: 128,
            base_lr: 3e-4,
            shuffle_seed: 0,
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub wall_ms: u128,
}

/// Loss and parameter gradients of the separator on one standardized
/// input. Exposed for gradient-checking against finite differences.
pub fn separator_sample_gradients(
    model: &SeparatorModel,
    input_std: &[f64],
    targets: (&[f64], &[f64]),
) -> Result<(f64, Vec<f64>, Vec<f64>, Vec<f64>)> {
    let enc_cache = model.encoder.forward_cached(input_std)?;
    let z = enc_cache.output();
    let (z1, z2) = z.split_at(model.latent_dim);
    let d1_cache = model.decoder_1.forward_cached(z1)?;
    let d2_cache = model.decoder_2.forward_cached(z2)?;
    let (loss, _assignment, g1, g2) =
        pit_loss_grad((d1_cache.output(), d2_cache.output()), targets)?;
    let (grad_d1, gz1) = model.decoder_1.backward(&d1_cache, &g1);
    let (grad_d2, gz2) = model.decoder_2.backward(&d2_cache, &g2);
    let mut gz = gz1;
    gz.extend_from_slice(&gz2);
    let (grad_enc, _) = model.encoder.backward(&enc_cache, &gz);
    Ok((loss, grad_enc, grad_d1, grad_d2))
}

fn standardized_inputs(model: &SeparatorModel, dataset: &SeparationDataset) -> Vec<Vec<f64>> {
    match &model.standardization {
        Some(s) => dataset.inputs.iter().map(|x| s.apply(x)).collect(),
        None => dataset.inputs.clone(),
    }
}

/// Mean PIT loss of the model over a dataset.
pub fn separator_validation_loss(
    model: &SeparatorModel,
    dataset: &SeparationDataset,
) -> Result<f64> {
    let inputs = standardized_inputs(model, dataset);
    let total: f64 = inputs
        .par_iter()
        .zip(dataset.targets.par_iter())
        .map(|(x, (t1, t2))| {
            let z = model.encoder.forward(x)?;
            let (z1, z2) = z.split_at(model.latent_dim);
            let o1 = model.decoder_1.forward(z1)?;
            let o2 = model.decoder_2.forward(z2)?;
            Ok(pit_loss((&o1, &o2), (t1, t2))?.0)
        })
        .collect::<Result<Vec<f64>>>()?
        .iter()
        .sum();
    Ok(total / dataset.len() as f64)
}

/// Mini-batch training of the separator with adaptive moments and cosine
/// decay. Standardization statistics are fit from the training inputs and
/// stored on the model. Returns the snapshot with the best validation
/// loss and the per-epoch log.
pub fn train_separator(
    mut model: SeparatorModel,
    train: &SeparationDataset,
    val: &SeparationDataset,
    settings: &TrainingSettings,
) -> Result<(SeparatorModel, Vec<EpochLog>)> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::parameter("train and validation sets must be nonempty"));
    }
    if model.standardization.is_none() {
        model.standardization = Some(Standardization::fit(
            train.inputs.iter().cloned(),
            train.dim,
        ));
    }
    let train_inputs = standardized_inputs(&model, train);

    let batches_per_epoch = train.len().div_ceil(settings.batch_size);
    let schedule = CosineSchedule {
        base_lr: settings.base_lr,
        horizon: (settings.epochs * batches_per_epoch) as u64,
    };
    let mut adam_enc = Adam::new(model.encoder.parameter_count());
    let mut adam_d1 = Adam::new(model.decoder_1.parameter_count());
    let mut adam_d2 = Adam::new(model.decoder_2.parameter_count());
    let mut rng = ChaCha8Rng::seed_from_u64(settings.shuffle_seed);
    let mut step: u64 = 0;
    let mut log = Vec::with_capacity(settings.epochs);
    let mut best: Option<(f64, SeparatorModel)> = None;

    for epoch in 0..settings.epochs {
        let start = Instant::now();
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(settings.batch_size) {
            let lr = schedule.lr(step);
            let chunk_size = batch.len().div_ceil(REDUCE_CHUNKS);
            let partials: Vec<Result<(f64, Vec<f64>, Vec<f64>, Vec<f64>)>> = batch
                .par_chunks(chunk_size)
                .map(|chunk| {
                    let mut loss = 0.0;
                    let mut ge = vec![0.0; model.encoder.parameter_count()];
                    let mut g1 = vec![0.0; model.decoder_1.parameter_count()];
                    let mut g2 = vec![0.0; model.decoder_2.parameter_count()];
                    for &i in chunk {
                        let (t1, t2) = &train.targets[i];
                        let (l, e, d1, d2) = separator_sample_gradients(
                            &model,
                            &train_inputs[i],
                            (t1, t2),
                        )?;
                        loss += l;
                        add_assign(&mut ge, &e);
                        add_assign(&mut g1, &d1);
                        add_assign(&mut g2, &d2);
                    }
                    Ok((loss, ge, g1, g2))
                })
                .collect();
            let mut batch_loss = 0.0;
            let mut ge = vec![0.0; model.encoder.parameter_count()];
            let mut g1 = vec![0.0; model.decoder_1.parameter_count()];
            let mut g2 = vec![0.0; model.decoder_2.parameter_count()];
            for partial in partials {
                let (l, e, d1, d2) = partial?;
                batch_loss += l;
                add_assign(&mut ge, &e);
                add_assign(&mut g1, &d1);
                add_assign(&mut g2, &d2);
            }
            let inv = 1.0 / batch.len() as f64;
            scale(&mut ge, inv);
            scale(&mut g1, inv);
            scale(&mut g2, inv);
            batch_loss *= inv;
            if !batch_loss.is_finite() || batch_loss > LOSS_CEILING {
                return Err(Error::Divergence {
                    step,
                    reason: format!("batch loss {batch_loss}"),
                });
            }
            adam_enc.step(model.encoder.params_mut(), &ge, lr);
            adam_d1.step(model.decoder_1.params_mut(), &g1, lr);
            adam_d2.step(model.decoder_2.params_mut(), &g2, lr);
            epoch_loss += batch_loss * batch.len() as f64;
            step += 1;
        }
        let train_loss = epoch_loss / train.len() as f64;
        let val_loss = separator_validation_loss(&model, val)?;
        if !val_loss.is_finite() {
            return Err(Error::Divergence {
                step,
                reason: format!("validation loss {val_loss}"),
            });
        }
        // Snapshot only on strict improvement.
        if best.as_ref().map_or(true, |(b, _)| val_loss < *b) {
            best = Some((val_loss, model.clone()));
        }
        log.push(EpochLog {
            epoch,
            train_loss,
            val_loss,
            lr: schedule.lr(step.saturating_sub(1)),
            wall_ms: start.elapsed().as_millis(),
        });
    }
    let (_, best_model) = best.expect("at least one epoch ran");
    Ok((best_model, log))
}

fn add_assign(acc: &mut [f64], inc: &[f64]) {
    for (a, b) in acc.iter_mut().zip(inc) {
        *a += b;
    }
}

fn scale(v: &mut [f64], s: f64) {
    for x in v.iter_mut() {
        *x *= s;
    }
}

/// A classifier input: one separated slot with the label assigned by the
/// minimizing PIT permutation against the ground-truth components.
fn labeled_slots(
    separator: &SeparatorModel,
    dataset: &SeparationDataset,
) -> Result<Vec<(Vec<f64>, u32)>> {
    let slots: Vec<Result<[(Vec<f64>, u32); 2]>> = dataset
        .inputs
        .par_iter()
        .zip(dataset.targets.par_iter().zip(dataset.labels.par_iter()))
        .map(|(x, ((t1, t2), &(l1, l2)))| {
            let (o1, o2) = separator.separate(x)?;
            let (_, assignment) = pit_loss((&o1, &o2), (t1, t2))?;
            let (a, b) = match assignment {
                Assignment::Identity => (l1, l2),
                Assignment::Swap => (l2, l1),
            };
            Ok([(o1, a), (o2, b)])
        })
        .collect();
    let mut out = Vec::with_capacity(dataset.len() * 2);
    for pair in slots {
        let [s1, s2] = pair?;
        out.push(s1);
        out.push(s2);
    }
    Ok(out)
}

pub const CLASSIFIER_HIDDEN_WIDTH: usize = 256;
pub const CLASSIFIER_EPOCHS: usize = 20;

/// Build a fresh softmax classifier over separated slots.
pub fn classifier_network(input_dim: usize, class_count: usize, seed: u64) -> DenseNetwork {
    DenseNetwork::seeded(
        vec![
            (input_dim, CLASSIFIER_HIDDEN_WIDTH),
            (CLASSIFIER_HIDDEN_WIDTH, CLASSIFIER_HIDDEN_WIDTH),
            (CLASSIFIER_HIDDEN_WIDTH, class_count),
        ],
        vec![Activation::Relu, Activation::Relu, Activation::Softmax],
        seed,
    )
}

/// Train a classifier on the frozen separator's outputs and report
/// per-slot top-1 accuracy on the held-out set. The separator is never
/// mutated.
pub fn train_classifier(
    separator: &SeparatorModel,
    train: &SeparationDataset,
    test: &SeparationDataset,
    class_count: usize,
    settings: &TrainingSettings,
    init_seed: u64,
) -> Result<(DenseNetwork, f64, Vec<EpochLog>)> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::parameter("train and test sets must be nonempty"));
    }
    let stats = separator
        .standardization
        .as_ref()
        .ok_or_else(|| Error::parameter("separator carries no standardization statistics"))?;
    let train_slots = labeled_slots(separator, train)?;
    let train_xs: Vec<Vec<f64>> = train_slots.iter().map(|(x, _)| stats.apply(x)).collect();
    let train_ys: Vec<u32> = train_slots.iter().map(|&(_, y)| y).collect();
    drop(train_slots);

    let mut net = classifier_network(train.dim, class_count, init_seed);
    let batches_per_epoch = train_xs.len().div_ceil(settings.batch_size);
    let schedule = CosineSchedule {
        base_lr: settings.base_lr,
        horizon: (CLASSIFIER_EPOCHS * batches_per_epoch) as u64,
    };
    let mut adam = Adam::new(net.parameter_count());
    let mut rng = ChaCha8Rng::seed_from_u64(settings.shuffle_seed ^ 0xc1a5);
    let mut step = 0u64;
    let mut log = Vec::with_capacity(CLASSIFIER_EPOCHS);
    for epoch in 0..CLASSIFIER_EPOCHS {
        let start = Instant::now();
        let mut order: Vec<usize> = (0..train_xs.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(settings.batch_size) {
            let lr = schedule.lr(step);
            let chunk_size = batch.len().div_ceil(REDUCE_CHUNKS);
            let partials: Vec<Result<(f64, Vec<f64>)>> = batch
                .par_chunks(chunk_size)
                .map(|chunk| {
                    let mut loss = 0.0;
                    let mut grads = vec![0.0; net.parameter_count()];
                    for &i in chunk {
                        let cache = net.forward_cached(&train_xs[i])?;
                        let (l, g_out) =
                            cross_entropy_grad(cache.output(), train_ys[i] as usize);
                        let (g, _) = net.backward(&cache, &g_out);
                        loss += l;
                        add_assign(&mut grads, &g);
                    }
                    Ok((loss, grads))
                })
                .collect();
            let mut batch_loss = 0.0;
            let mut grads = vec![0.0; net.parameter_count()];
            for partial in partials {
                let (l, g) = partial?;
                batch_loss += l;
                add_assign(&mut grads, &g);
            }
            let inv = 1.0 / batch.len() as f64;
            scale(&mut grads, inv);
            batch_loss *= inv;
            if !batch_loss.is_finite() || batch_loss > LOSS_CEILING {
                return Err(Error::Divergence {
                    step,
                    reason: format!("classifier batch loss {batch_loss}"),
                });
            }
            adam.step(net.params_mut(), &grads, lr);
            epoch_loss += batch_loss * batch.len() as f64;
            step += 1;
        }
        log.push(EpochLog {
            epoch,
            train_loss: epoch_loss / train_xs.len() as f64,
            val_loss: f64::NAN,
            lr: schedule.lr(step.saturating_sub(1)),
            wall_ms: start.elapsed().as_millis(),
        });
    }
    let accuracy = classifier_accuracy(separator, &net, test)?;
    Ok((net, accuracy, log))
}

/// Per-slot top-1 accuracy: two judgments per mixture, slot labels
/// assigned by the minimizing PIT permutation.
pub fn classifier_accuracy(
    separator: &SeparatorModel,
    classifier: &DenseNetwork,
    test: &SeparationDataset,
) -> Result<f64> {
    let stats = separator
        .standardization
        .as_ref()
        .ok_or_else(|| Error::parameter("separator carries no standardization statistics"))?;
    let slots = labeled_slots(separator, test)?;
    let correct: usize = slots
        .par_iter()
        .map(|(x, label)| {
            let logits = classifier.forward(&stats.apply(x))?;
            let probs = softmax(&logits);
            let argmax = probs
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap();
            Ok(usize::from(argmax == *label as usize))
        })
        .collect::<Result<Vec<usize>>>()?
        .iter()
        .sum();
    Ok(correct as f64 / slots.len() as f64)
}
