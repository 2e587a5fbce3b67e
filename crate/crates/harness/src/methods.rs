use std::path::Path;

use dum_core::baselines::{ensemble_predict, mc_dropout_predict, PredictiveSamples};
use dum_core::data::{shift_augment, Dataset};
use dum_core::heads::{
    gmm_fit, GmmHead, GmmTarget, HeadOutput, RadialFlowDirichletHead, RbfCentroidHead, RffGpLaplaceHead,
    SoftmaxEntropyHead, UncertaintyHead,
};
use dum_core::nn::{
    load_checkpoint, save_checkpoint, train_epoch, Checkpoint, MlpModel, MlpSpec, Mode, Optimizer, SoftmaxCrossEntropy,
    TrainableHead,
};
use dum_core::regularize::RegularizerConfig;
use dum_core::{Matrix, Rng};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Method, TrainingConfig};
use crate::error::HarnessResult;

/// The method-specific part of a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MethodHead {
    Softmax,
    McDropout {
        samples: usize,
    },
    /// Members after the first, which is the primary model.
    Ensemble {
        members: Vec<MlpModel>,
    },
    Duq {
        head: RbfCentroidHead,
    },
    Sngp {
        head: RffGpLaplaceHead,
    },
    /// Softmax classifier with a density head on its features.
    Gmm {
        head: GmmHead,
    },
    Postnet {
        head: RadialFlowDirichletHead,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedHead {
    pub method: Method,
    pub strength: f64,
    pub head: MethodHead,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub method: Method,
    pub strength: f64,
    pub model: MlpModel,
    pub head: MethodHead,
}

fn fit(
    model: &mut MlpModel,
    head: &mut dyn TrainableHead,
    data: &Dataset,
    training: &TrainingConfig,
    regularizer: &mut RegularizerConfig,
    rng: &mut Rng,
) -> HarnessResult<()> {
    let mut optimizer = Optimizer::new(training.optimizer.clone())?;
    for epoch in 0..training.epochs {
        train_epoch(model, head, data, &mut optimizer, regularizer, epoch, training.batch_size, rng)?;
    }
    model.converge_spectral()?;
    Ok(())
}

fn class_counts(data: &Dataset) -> Vec<f64> {
    let mut counts = vec![0.0; data.class_count];
    data.labels.iter().for_each(|&y| counts[y] += 1.0);
    counts
}

/// Trains one model of `config.method` at `strength`.
pub fn train_model(
    config: &ExperimentConfig,
    strength: f64,
    data: &Dataset,
    image_side: Option<usize>,
    rng: &mut Rng,
) -> HarnessResult<TrainedModel> {
    let m = &config.model;
    let t = &config.training;
    let k = data.class_count;
    let augmented;
    let data = match image_side {
        Some(side) if t.augment_shift > 0 => {
            augmented = shift_augment(data, side, t.augment_shift)?;
            &augmented
        }
        _ => data,
    };
    let mut spec = MlpSpec::new(data.dim(), &m.hidden, Some(k)).with_dropout(m.dropout);
    if let Some(c) = m.spectral_coeff {
        spec = spec.with_spectral_norm(c);
    }
    let mut none = RegularizerConfig::none();
    let softmax = |spec: &MlpSpec, rng: &mut Rng| -> HarnessResult<MlpModel> {
        let mut model = MlpModel::new(spec, rng)?;
        fit(&mut model, &mut SoftmaxCrossEntropy, data, t, &mut RegularizerConfig::none(), rng)?;
        Ok(model)
    };

    let (model, head) = match config.method {
        Method::Softmax => (softmax(&spec, rng)?, MethodHead::Softmax),
        Method::McDropout => {
            (softmax(&spec.clone().with_dropout(strength), rng)?, MethodHead::McDropout { samples: m.mc_samples })
        }
        Method::Ensemble => {
            let mut members = (0..m.ensemble_size as u64)
                .map(|i| softmax(&spec, &mut rng.fork(i)))
                .collect::<HarnessResult<Vec<_>>>()?;
            let first = members.remove(0);
            (first, MethodHead::Ensemble { members })
        }
        Method::Duq => {
            spec.output_dim = None;
            let mut model = MlpModel::new(&spec, rng)?;
            let mut head = RbfCentroidHead::new(
                model.feature_dim(),
                k,
                m.rbf_embed_dim,
                m.rbf_lengthscale,
                m.centroid_momentum,
                rng,
            )?;
            // start the centroids at the embedded class means
            let z = model.features(&data.inputs)?;
            head.update_centroids(&z, &data.labels, 0.0)?;
            let mut reg = RegularizerConfig::gradient_penalty(strength);
            fit(&mut model, &mut head, data, t, &mut reg, rng)?;
            (model, MethodHead::Duq { head })
        }
        Method::Sngp => {
            spec.output_dim = None;
            spec.spectral_coeff = Some(strength);
            let mut model = MlpModel::new(&spec, rng)?;
            let mut head = RffGpLaplaceHead::new(
                model.feature_dim(),
                m.gp_features,
                k,
                m.gp_lengthscale,
                m.mean_field_factor,
                rng,
            )?;
            fit(&mut model, &mut head, data, t, &mut none, rng)?;
            head.fit_laplace(&model.features(&data.inputs)?)?;
            (model, MethodHead::Sngp { head })
        }
        Method::Ddu | Method::Mir => {
            let mut reg = if config.method == Method::Ddu {
                spec.spectral_coeff = Some(strength);
                RegularizerConfig::none()
            } else {
                let feat = m.hidden[m.hidden.len() - 1];
                let decoder = MlpModel::new(&MlpSpec::new(feat, &m.decoder_hidden, Some(data.dim())), rng)?;
                RegularizerConfig::reconstruction(strength, decoder)
            };
            let mut model = MlpModel::new(&spec, rng)?;
            fit(&mut model, &mut SoftmaxCrossEntropy, data, t, &mut reg, rng)?;
            let z = model.features(&data.inputs)?;
            let target = match m.gmm_components {
                Some(c) => GmmTarget::Em { k: c },
                None => GmmTarget::PerClass { labels: &data.labels, classes: k },
            };
            let gmm = gmm_fit(&z, target, m.pca_dim, rng)?;
            (model, MethodHead::Gmm { head: GmmHead { gmm, score: m.gmm_score } })
        }
        Method::Postnet => {
            spec.output_dim = Some(m.latent_dim);
            let mut model = MlpModel::new(&spec, rng)?;
            let mut head = RadialFlowDirichletHead::new(m.latent_dim, m.flow_depth, class_counts(data), strength, rng)?;
            fit(&mut model, &mut head, data, t, &mut none, rng)?;
            (model, MethodHead::Postnet { head })
        }
    };
    Ok(TrainedModel { method: config.method, strength, model, head })
}

fn softmax_rows(logits: &Matrix) -> HarnessResult<HeadOutput> {
    Ok(SoftmaxEntropyHead.predict(logits)?)
}

fn from_samples(samples: PredictiveSamples) -> HeadOutput {
    let uncertainty = samples.decompose().iter().map(|d| d.epistemic).collect();
    HeadOutput { probs: samples.mean(), uncertainty }
}

impl TrainedModel {
    /// Class probabilities and the method's epistemic uncertainty (larger
    /// means less certain). `rng` drives MC-dropout masks only.
    pub fn predict(&self, x: &Matrix, rng: &mut Rng) -> HarnessResult<HeadOutput> {
        Ok(match &self.head {
            MethodHead::Softmax => softmax_rows(&self.model.predict(x)?)?,
            MethodHead::McDropout { samples } => from_samples(mc_dropout_predict(&self.model, x, *samples, rng)?),
            MethodHead::Ensemble { members } => {
                let mut all = Vec::with_capacity(members.len() + 1);
                all.push(self.model.clone());
                all.extend(members.iter().cloned());
                from_samples(ensemble_predict(&all, x)?)
            }
            MethodHead::Duq { head } => head.predict(&self.model.features(x)?)?,
            MethodHead::Sngp { head } => head.predict(&self.model.features(x)?)?,
            MethodHead::Gmm { head } => {
                let trace = self.model.forward(x, Mode::Eval, rng)?;
                let mut out = softmax_rows(trace.output())?;
                out.uncertainty = head.predict(trace.features())?.uncertainty;
                out
            }
            MethodHead::Postnet { head } => head.predict(&self.model.predict(x)?)?,
        })
    }

    /// Number of full forward passes per prediction.
    pub fn forward_passes(&self) -> usize {
        match &self.head {
            MethodHead::McDropout { samples } => *samples,
            MethodHead::Ensemble { members } => members.len() + 1,
            _ => 1,
        }
    }

    pub fn save(&self, path: &Path) -> HarnessResult<()> {
        let saved = SavedHead { method: self.method, strength: self.strength, head: self.head.clone() };
        save_checkpoint(path, &Checkpoint::new(self.model.clone(), Some(saved)))?;
        Ok(())
    }

    pub fn load(path: &Path) -> HarnessResult<TrainedModel> {
        let c: Checkpoint<SavedHead> = load_checkpoint(path)?;
        let saved = c.head.ok_or_else(|| dum_core::Error::Checkpoint("checkpoint has no method head".into()))?;
        let mut head = saved.head;
        if let MethodHead::Sngp { head } = &mut head {
            head.refactor()?;
        }
        Ok(TrainedModel { method: saved.method, strength: saved.strength, model: c.model, head })
    }
}
