//! Mini-batch training and split evaluation.

use grounder_autodiff::{Adam, Gradients, ParameterStore};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{Ablation, ModelConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::matching::{evaluate, Metrics, Prediction};
use crate::metrics::MetricsRow;
use crate::model::{forward, predict, PreparedSample};
use crate::parser::Vocabulary;
use crate::synth::Sample;
use crate::weights::ModelParams;

/// Seed streams derived from the run seed.
const INIT_STREAM: u64 = 0x1417_0000_0000_0001;
const SHUFFLE_STREAM: u64 = 0x5417_0000_0000_0002;

pub fn prepare(
    samples: &[Sample],
    vocab: &Vocabulary,
    ablation: &Ablation,
) -> Result<Vec<PreparedSample>> {
    samples
        .iter()
        .map(|s| PreparedSample::new(s, vocab, ablation))
        .collect()
}

/// Mean losses and metrics over one split.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SplitReport {
    pub loss_ce: f64,
    pub loss_reg: f64,
    pub metrics: Metrics,
}

impl SplitReport {
    pub fn row(&self, epoch: usize, split: &str) -> MetricsRow {
        MetricsRow {
            epoch,
            split: split.to_string(),
            loss_ce: self.loss_ce,
            loss_reg: self.loss_reg,
            acc_at_05: self.metrics.acc_at_05,
            acc_raw_box: self.metrics.acc_raw_box,
            mean_iou: self.metrics.mean_iou,
        }
    }
}

fn report(
    losses: (f64, f64),
    predictions: &[Prediction],
    samples: &[PreparedSample],
) -> SplitReport {
    let truths: Vec<_> = samples
        .iter()
        .map(|s| (s.target_box, s.target_id))
        .collect();
    let n = samples.len().max(1) as f64;
    SplitReport {
        loss_ce: losses.0 / n,
        loss_reg: losses.1 / n,
        metrics: evaluate(predictions, &truths),
    }
}

pub fn evaluate_split(
    store: &ParameterStore,
    config: &ModelConfig,
    params: &ModelParams,
    ablation: &Ablation,
    samples: &[PreparedSample],
) -> Result<SplitReport> {
    let mut losses = (0.0, 0.0);
    let mut predictions = Vec::with_capacity(samples.len());
    for s in samples {
        let out = predict(store, config, params, ablation, s)?;
        losses.0 += out.loss_ce;
        losses.1 += out.loss_reg;
        predictions.push(out.prediction);
    }
    Ok(report(losses, &predictions, samples))
}

/// What a finished epoch hands to the caller.
pub struct EpochEnd<'a> {
    pub epoch: usize,
    /// Running means over the epoch's batches, taken before each update.
    pub train: SplitReport,
    pub store: &'a ParameterStore,
    pub params: &'a ModelParams,
}

/// Trains from a seeded initialization. `on_epoch` runs after every epoch
/// and may evaluate, log or checkpoint; its error aborts training.
pub fn train(
    seed: u64,
    model: &ModelConfig,
    train: &TrainConfig,
    ablation: &Ablation,
    samples: &[PreparedSample],
    mut on_epoch: impl FnMut(EpochEnd<'_>) -> Result<()>,
) -> Result<(ParameterStore, ModelParams)> {
    if samples.is_empty() {
        return Err(Error::Usage("training split is empty".into()));
    }
    let (mut store, params) = ModelParams::init(model, seed ^ INIT_STREAM)?;
    let mut adam = Adam::new(train.adam, &store);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..samples.len()).collect();

    for epoch in 1..=train.epochs {
        order.shuffle(&mut rng);
        let mut losses = (0.0, 0.0);
        let mut predictions = vec![None; samples.len()];
        for batch in order.chunks(train.batch_size) {
            let mut grads = Gradients::zeros_like(&store);
            for &i in batch {
                let mut tape = grounder_autodiff::Tape::new(&store);
                let out = forward(&mut tape, model, &params, ablation, &samples[i]);
                tape.check_finite()?;
                let loss = tape.scalar(out.loss);
                if !loss.is_finite() {
                    return Err(Error::Numeric(format!(
                        "loss is {loss} at epoch {epoch}, sample {i}"
                    )));
                }
                tape.backward_into(out.loss, &mut grads);
                losses.0 += out.loss_ce;
                losses.1 += out.loss_reg;
                predictions[i] = Some(out.prediction);
            }
            grads.scale(1.0 / batch.len() as f64);
            adam.step(&mut store, &grads)
                .map_err(|e| Error::Numeric(format!("epoch {epoch}: {e}")))?;
        }
        let predictions: Vec<Prediction> = predictions
            .into_iter()
            .map(|p| p.expect("every sample visited"))
            .collect();
        on_epoch(EpochEnd {
            epoch,
            train: report(losses, &predictions, samples),
            store: &store,
            params: &params,
        })?;
    }
    Ok((store, params))
}
