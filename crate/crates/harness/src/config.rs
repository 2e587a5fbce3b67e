use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use dum_core::data::{ShiftKind, ShiftSchedule};
use dum_core::heads::GmmScore;
use dum_core::nn::OptimizerConfig;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, HarnessResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Softmax,
    McDropout,
    Ensemble,
    Duq,
    Sngp,
    Ddu,
    Mir,
    Postnet,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Softmax,
        Method::McDropout,
        Method::Ensemble,
        Method::Duq,
        Method::Sngp,
        Method::Ddu,
        Method::Mir,
        Method::Postnet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Softmax => "softmax",
            Method::McDropout => "mc_dropout",
            Method::Ensemble => "ensemble",
            Method::Duq => "duq",
            Method::Sngp => "sngp",
            Method::Ddu => "ddu",
            Method::Mir => "mir",
            Method::Postnet => "postnet",
        }
    }

    /// What the `strength` axis controls for this method.
    pub fn strength_meaning(self) -> &'static str {
        match self {
            Method::Softmax | Method::Ensemble => "unused",
            Method::McDropout => "dropout rate",
            Method::Duq => "gradient penalty weight",
            Method::Sngp | Method::Ddu => "spectral norm coefficient",
            Method::Mir => "reconstruction weight",
            Method::Postnet => "entropy weight",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Where the train/test data come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    /// A directory with `train-images-idx3-ubyte[.gz]`, `train-labels-idx1-ubyte[.gz]`,
    /// `t10k-images-idx3-ubyte[.gz]` and `t10k-labels-idx1-ubyte[.gz]`.
    Idx {
        dir: PathBuf,
        #[serde(default)]
        train_limit: Option<usize>,
        #[serde(default)]
        test_limit: Option<usize>,
    },
    TwoMoons {
        train: usize,
        test: usize,
        noise: f64,
    },
    /// Isotropic Gaussian blobs; label `i mod K` for `K` centers.
    Blobs {
        train: usize,
        test: usize,
        centers: Vec<Vec<f64>>,
        sigma: f64,
    },
    /// Uniform noise inputs in `[0, 1]`; only meaningful as an OOD set.
    UniformNoise {
        test: usize,
        dim: usize,
    },
}

/// Architecture and method hyperparameters. Unused fields are ignored by
/// methods that do not need them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub dropout: f64,
    /// Spectral-norm coefficient for methods that are not swept over it.
    pub spectral_coeff: Option<f64>,
    pub ensemble_size: usize,
    pub mc_samples: usize,
    pub rbf_lengthscale: f64,
    pub rbf_embed_dim: usize,
    pub centroid_momentum: f64,
    pub gp_features: usize,
    pub gp_lengthscale: f64,
    pub mean_field_factor: f64,
    pub gmm_score: GmmScore,
    /// EM components; `None` fits one Gaussian per class.
    pub gmm_components: Option<usize>,
    pub pca_dim: Option<usize>,
    pub decoder_hidden: Vec<usize>,
    pub latent_dim: usize,
    pub flow_depth: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: vec![100, 100, 100],
            dropout: 0.0,
            spectral_coeff: None,
            ensemble_size: dum_core::baselines::DEFAULT_ENSEMBLE_SIZE,
            mc_samples: dum_core::baselines::DEFAULT_MC_SAMPLES,
            rbf_lengthscale: 0.1,
            rbf_embed_dim: 64,
            centroid_momentum: 0.999,
            gp_features: 1024,
            gp_lengthscale: 2.0,
            mean_field_factor: 30.0,
            gmm_score: GmmScore::Marginal,
            gmm_components: None,
            pca_dim: None,
            decoder_hidden: vec![100],
            latent_dim: 6,
            flow_depth: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    /// Adds copies translated by up to this many pixels (image data only).
    #[serde(default)]
    pub augment_shift: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub method: Method,
    pub dataset: DatasetSpec,
    /// Regularization strengths; see [`Method::strength_meaning`].
    pub strengths: Vec<f64>,
    #[serde(default)]
    pub model: ModelConfig,
    pub training: TrainingConfig,
    #[serde(default)]
    pub shift: Option<ShiftSchedule>,
    #[serde(default)]
    pub ood: Option<DatasetSpec>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

const PRESETS: &[(&str, &str)] = &[
    ("mnist-softmax", include_str!("../presets/mnist-softmax.json")),
    ("mnist-mc-dropout", include_str!("../presets/mnist-mc-dropout.json")),
    ("mnist-ensemble", include_str!("../presets/mnist-ensemble.json")),
    ("mnist-duq", include_str!("../presets/mnist-duq.json")),
    ("mnist-sngp", include_str!("../presets/mnist-sngp.json")),
    ("mnist-ddu", include_str!("../presets/mnist-ddu.json")),
    ("mnist-mir", include_str!("../presets/mnist-mir.json")),
    ("mnist-postnet", include_str!("../presets/mnist-postnet.json")),
    ("mnist-mir-sweep", include_str!("../presets/mnist-mir-sweep.json")),
    ("blobs-ood", include_str!("../presets/blobs-ood.json")),
    ("moons-sngp", include_str!("../presets/moons-sngp.json")),
];

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

/// A shipped preset by name.
pub fn preset(name: &str) -> HarnessResult<ExperimentConfig> {
    let text = PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .ok_or_else(|| HarnessError::Config(format!("no preset named {name:?}")))?;
    parse_config(text)
}

pub fn parse_config(text: &str) -> HarnessResult<ExperimentConfig> {
    let config: ExperimentConfig =
        serde_json::from_str(text).map_err(|e| HarnessError::Config(format!("bad config: {e}")))?;
    config.validate()?;
    Ok(config)
}

/// Loads a config file, or a preset when `path` names one. Relative data
/// directories in a file are resolved against the file's directory.
pub fn load_config(path: &Path) -> HarnessResult<ExperimentConfig> {
    if !path.exists() {
        if let Some(name) = path.to_str().filter(|s| !s.contains(['/', '\\'])) {
            if let Ok(c) = preset(name.trim_end_matches(".json")) {
                return Ok(c);
            }
        }
    }
    let text =
        fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut config = parse_config(&text)?;
    if let Some(base) = path.parent() {
        config.resolve_paths(base);
    }
    Ok(config)
}

fn resolve(dir: &mut PathBuf, base: &Path) {
    if dir.is_relative() && !dir.exists() && base.join(&*dir).exists() {
        *dir = base.join(&*dir);
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> HarnessResult<()> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        match self {
            DatasetSpec::Idx { train_limit, test_limit, .. } => {
                if *train_limit == Some(0) || *test_limit == Some(0) {
                    return bad("dataset limits must be positive");
                }
            }
            DatasetSpec::TwoMoons { train, test, noise } => {
                if *train < 2 || *test < 2 || !(*noise >= 0.0) {
                    return bad("two-moons needs at least 2 points per split and nonnegative noise");
                }
            }
            DatasetSpec::Blobs { train, test, centers, sigma } => {
                let d = centers.first().map_or(0, Vec::len);
                if centers.is_empty() || d == 0 || centers.iter().any(|c| c.len() != d) {
                    return bad("blob centers must be nonempty and share one dimension");
                }
                if *train < 2 || *test < 2 || !(*sigma > 0.0) {
                    return bad("blobs need at least 2 points per split and positive sigma");
                }
            }
            DatasetSpec::UniformNoise { test, dim } => {
                if *test == 0 || *dim == 0 {
                    return bad("noise set needs positive size and dimension");
                }
            }
        }
        Ok(())
    }

    fn resolve_paths(&mut self, base: &Path) {
        if let DatasetSpec::Idx { dir, .. } = self {
            resolve(dir, base);
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> HarnessResult<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.seeds.is_empty() {
            return bad("seed list must be nonempty".into());
        }
        if self.strengths.is_empty() || self.strengths.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return bad("strengths must be a nonempty list of finite nonnegative values".into());
        }
        self.dataset.validate()?;
        if matches!(self.dataset, DatasetSpec::UniformNoise { .. }) {
            return bad("a noise set has no labels and cannot be trained on".into());
        }
        if let Some(ood) = &self.ood {
            ood.validate()?;
        }
        if let Some(s) = &self.shift {
            s.validate().map_err(|e| HarnessError::Config(format!("shift schedule: {e}")))?;
            if s.kind == ShiftKind::Rotation && !matches!(self.dataset, DatasetSpec::Idx { .. }) {
                return bad("rotation shifts need image data".into());
            }
        }
        let t = &self.training;
        if t.epochs == 0 || t.batch_size == 0 {
            return bad("epochs and batch size must be positive".into());
        }
        t.optimizer.validate().map_err(|e| HarnessError::Config(format!("optimizer: {e}")))?;
        let m = &self.model;
        if self.method == Method::Ensemble && m.ensemble_size == 0 {
            return bad("ensemble size must be positive".into());
        }
        if self.method == Method::McDropout {
            if m.mc_samples == 0 {
                return bad("MC dropout needs at least one sample".into());
            }
            if self.strengths.iter().any(|&p| p <= 0.0 || p >= 1.0) {
                return bad("MC dropout strengths are dropout rates in (0, 1)".into());
            }
        }
        if matches!(self.method, Method::Sngp | Method::Ddu) && self.strengths.iter().any(|&c| c <= 0.0) {
            return bad("spectral norm coefficients must be positive".into());
        }
        if m.hidden.is_empty() || m.hidden.contains(&0) {
            return bad("hidden layer widths must be positive".into());
        }
        if self.method == Method::Postnet && !(1..=10).contains(&m.latent_dim) {
            return bad("postnet latent dimension must be in 1..=10".into());
        }
        if self.output_dir.as_os_str().is_empty() {
            return bad("output directory must be set".into());
        }
        Ok(())
    }

    fn resolve_paths(&mut self, base: &Path) {
        self.dataset.resolve_paths(base);
        if let Some(ood) = &mut self.ood {
            ood.resolve_paths(base);
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
