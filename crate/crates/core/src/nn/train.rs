use super::mlp::{MlpModel, Mode, ParamMut};
use super::optim::Optimizer;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::regularize::{
    gradient_penalty_on_trace, reconstruction_loss, RegularizerConfig, RegularizerKind, ScalarHead,
};
use crate::tensor::special::{log_sum_exp, softmax_into};
use crate::tensor::{Matrix, Rng};

/// Batch loss of a head together with its gradients.
#[derive(Debug, Clone)]
pub struct HeadLoss {
    /// Mean over the batch.
    pub loss: f64,
    /// Gradient with respect to the head input (the model output).
    pub input_grad: Matrix,
    /// Gradients of the head's own parameters, in [`TrainableHead::params_mut`] order.
    pub param_grads: Vec<Vec<f64>>,
}

/// A training objective sitting on top of an [`MlpModel`].
pub trait TrainableHead {
    fn loss_and_grad(&mut self, input: &Matrix, labels: &[usize]) -> Result<HeadLoss>;

    fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        Vec::new()
    }

    /// Hook run after each optimizer step with the batch that produced it.
    fn after_step(&mut self, _input: &Matrix, _labels: &[usize]) -> Result<()> {
        Ok(())
    }

    /// Scalarization used by the gradient penalty, when the head has one.
    fn scalar_head(&self) -> Option<&dyn ScalarHead> {
        None
    }
}

/// Mean softmax cross-entropy on logits.
#[derive(Debug, Clone, Copy, Default)]
pub struct SoftmaxCrossEntropy;

impl TrainableHead for SoftmaxCrossEntropy {
    fn loss_and_grad(&mut self, logits: &Matrix, labels: &[usize]) -> Result<HeadLoss> {
        check_labels(logits, labels)?;
        let n = logits.rows() as f64;
        let mut grad = Matrix::zeros(logits.rows(), logits.cols());
        let mut loss = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            if y >= logits.cols() {
                return Err(Error::arg(format!("label {y} outside {} classes", logits.cols())));
            }
            let row = grad.row_mut(i);
            softmax_into(logits.row(i), row);
            loss += log_sum_exp(logits.row(i)) - logits.get(i, y);
            row[y] -= 1.0;
            row.iter_mut().for_each(|g| *g /= n);
        }
        Ok(HeadLoss { loss: loss / n, input_grad: grad, param_grads: Vec::new() })
    }
}

pub(crate) fn check_labels(input: &Matrix, labels: &[usize]) -> Result<()> {
    if input.rows() != labels.len() {
        return Err(Error::shape(format!("{} rows but {} labels", input.rows(), labels.len())));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// Mean total loss per batch.
    pub loss: f64,
    /// Mean head loss per batch.
    pub task_loss: f64,
    /// Mean regularizer loss per batch.
    pub regularizer_loss: f64,
    pub batches: usize,
}

/// One shuffled minibatch pass over `data`.
///
/// Spectrally normalized layers advance their power iteration by one round
/// before every batch. Reconstruction decoders are optimized jointly with
/// the model and head, in the slot order model, head, decoder.
#[allow(clippy::too_many_arguments)]
pub fn train_epoch(
    model: &mut MlpModel,
    head: &mut dyn TrainableHead,
    data: &Dataset,
    optimizer: &mut Optimizer,
    regularizer: &mut RegularizerConfig,
    epoch: usize,
    batch_size: usize,
    rng: &mut Rng,
) -> Result<EpochStats> {
    if data.is_empty() {
        return Err(Error::arg("cannot train on an empty dataset"));
    }
    if batch_size == 0 {
        return Err(Error::arg("batch size must be at least 1"));
    }
    regularizer.validate()?;
    let lr = optimizer.config().learning_rate_at(epoch);
    let order = rng.permutation(data.len());
    let mut stats = EpochStats { loss: 0.0, task_loss: 0.0, regularizer_loss: 0.0, batches: 0 };
    for chunk in order.chunks(batch_size) {
        let x = data.inputs.select_rows(chunk);
        let y: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
        model.refresh_spectral(1)?;
        let trace = model.forward(&x, Mode::Train, rng)?;
        let head_loss = head.loss_and_grad(trace.output(), &y)?;

        let mut reg_loss = 0.0;
        let mut feature_grad = None;
        let mut decoder_grads = None;
        let mut penalty = None;
        match regularizer.kind {
            RegularizerKind::Reconstruction => {
                let decoder = regularizer.decoder.as_ref().expect("validated");
                let r = reconstruction_loss(decoder, trace.features(), &x, regularizer.strength)?;
                reg_loss = r.loss;
                feature_grad = Some(r.z_grad);
                decoder_grads = Some(r.decoder.flatten());
            }
            RegularizerKind::GradPenalty if regularizer.strength > 0.0 => {
                let scalar = head
                    .scalar_head()
                    .ok_or_else(|| Error::arg("gradient penalty needs a head with a scalarization"))?;
                let p = gradient_penalty_on_trace(
                    model,
                    scalar,
                    &trace,
                    regularizer.strength,
                    regularizer.target_lipschitz,
                )?;
                reg_loss = p.penalty;
                penalty = Some(p);
            }
            _ => {}
        }
        let total = head_loss.loss + reg_loss;
        if !total.is_finite() {
            return Err(Error::Divergence(format!("non-finite loss at epoch {epoch}, batch {}", stats.batches)));
        }

        let mut grads = model.backward(&trace, &head_loss.input_grad, feature_grad.as_ref())?;
        let mut head_grads = head_loss.param_grads;
        if let Some(p) = &penalty {
            grads.accumulate(&p.model)?;
            for (a, b) in head_grads.iter_mut().zip(&p.head) {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
            }
        }
        let mut flat = grads.flatten();
        flat.extend(head_grads);
        if let Some(d) = decoder_grads {
            flat.extend(d);
        }
        let mut params = model.params_mut();
        params.extend(head.params_mut());
        if let Some(decoder) = regularizer.decoder.as_mut() {
            params.extend(decoder.params_mut());
        }
        optimizer.step(params, &flat, lr)?;
        head.after_step(trace.output(), &y)?;

        stats.loss += total;
        stats.task_loss += head_loss.loss;
        stats.regularizer_loss += reg_loss;
        stats.batches += 1;
    }
    let b = stats.batches as f64;
    stats.loss /= b;
    stats.task_loss /= b;
    stats.regularizer_loss /= b;
    Ok(stats)
}
