use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{dot, spectral_norm_converged, spectral_norm_power_iter, Matrix, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Linear => x,
        }
    }

    #[inline]
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
        }
    }
}

/// How dropout behaves during a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
    /// Dropout active at inference time (MC dropout).
    McSample,
}

/// Persistent power-iteration state of a spectrally normalized layer.
///
/// The normalizing singular value is read as `uᵀ W v` from the stored
/// vectors, so between refreshes the effective weight is a smooth function
/// of `W` and gradients treat `u`, `v` as constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralState {
    pub coeff: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// `in × out`; a batch row `h` maps to `h · W + b`.
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
    /// Dropout applied to this layer's output.
    pub dropout: f64,
    pub spectral: Option<SpectralState>,
}

/// Effective weight after the soft spectral constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralNormOutcome {
    pub weight: Matrix,
    pub scale: f64,
    /// `sigma ≤ 0` was supplied; the weight was passed through unchanged.
    pub degenerate: bool,
}

/// `W_eff = W · min(1, c / σ)`: the layer is rescaled only when its
/// spectral norm exceeds the coefficient `c`.
pub fn apply_spectral_norm(weight: &Matrix, coeff: f64, sigma: f64) -> Result<SpectralNormOutcome> {
    if !(coeff > 0.0) {
        return Err(Error::arg(format!("spectral coefficient must be positive, got {coeff}")));
    }
    if !(sigma > 0.0) {
        return Ok(SpectralNormOutcome { weight: weight.clone(), scale: 1.0, degenerate: true });
    }
    let scale = (coeff / sigma).min(1.0);
    Ok(SpectralNormOutcome { weight: weight.scale(scale), scale, degenerate: false })
}

impl DenseLayer {
    /// He-uniform (fan-in) initialization, zero bias.
    pub fn new(input: usize, output: usize, activation: Activation, rng: &mut Rng) -> Self {
        let limit = (6.0 / input.max(1) as f64).sqrt();
        DenseLayer {
            weight: rng.uniform_matrix(input, output, -limit, limit),
            bias: vec![0.0; output],
            activation,
            dropout: 0.0,
            spectral: None,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn enable_spectral_norm(&mut self, coeff: f64, rng: &mut Rng) -> Result<()> {
        if !(coeff > 0.0) {
            return Err(Error::arg(format!("spectral coefficient must be positive, got {coeff}")));
        }
        let start = rng.normal_vec(self.input_dim());
        let it = spectral_norm_power_iter(&self.weight, &start, 1)?;
        self.spectral = Some(SpectralState { coeff, u: it.u, v: it.v });
        Ok(())
    }

    /// `uᵀ W v` from the stored power-iteration vectors.
    pub fn sigma_estimate(&self) -> Option<f64> {
        self.spectral.as_ref().map(|s| {
            let wv = self.weight.matvec(&s.v).expect("spectral state matches weight");
            dot(&s.u, &wv)
        })
    }

    /// Multiplier turning `W` into the effective weight.
    pub fn effective_scale(&self) -> f64 {
        match (&self.spectral, self.sigma_estimate()) {
            (Some(s), Some(sigma)) if sigma > s.coeff => s.coeff / sigma,
            _ => 1.0,
        }
    }

    pub fn effective_weight(&self) -> Matrix {
        self.weight.scale(self.effective_scale())
    }

    /// Advances the stored singular vectors by `iters` power-iteration rounds.
    pub fn refresh_spectral(&mut self, iters: usize) -> Result<()> {
        if let Some(state) = self.spectral.as_mut() {
            let it = spectral_norm_power_iter(&self.weight, &state.u, iters)?;
            if it.sigma > 0.0 {
                state.u = it.u;
                state.v = it.v;
            }
        }
        Ok(())
    }

    fn converge_spectral(&mut self) -> Result<()> {
        if let Some(state) = self.spectral.as_mut() {
            let it = spectral_norm_converged(&self.weight, &state.u, 100, 1e-14, 50_000)?;
            if it.sigma > 0.0 {
                state.u = it.u;
                state.v = it.v;
            }
        }
        Ok(())
    }

    /// Maps a gradient with respect to the effective weight to one with
    /// respect to the raw weight, differentiating through `c / (uᵀ W v)`.
    pub fn weight_grad_from_effective(&self, grad_eff: &Matrix) -> Matrix {
        let scale = self.effective_scale();
        match (&self.spectral, scale < 1.0) {
            (Some(s), true) => {
                let sigma = s.coeff / scale;
                let coupling = scale / sigma * grad_eff.inner(&self.weight).expect("same shape");
                let mut g = grad_eff.scale(scale);
                for (i, &ui) in s.u.iter().enumerate() {
                    let row = g.row_mut(i);
                    for (gj, &vj) in row.iter_mut().zip(&s.v) {
                        *gj -= coupling * ui * vj;
                    }
                }
                g
            }
            _ => grad_eff.clone(),
        }
    }
}

/// Architecture description used to build an [`MlpModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    /// Widths of the ReLU hidden layers.
    pub hidden: Vec<usize>,
    /// Width of a final linear layer, if any.
    pub output_dim: Option<usize>,
    /// Dropout after every hidden layer.
    pub dropout: f64,
    /// Spectral-norm coefficient applied to every layer.
    pub spectral_coeff: Option<f64>,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden: &[usize], output_dim: Option<usize>) -> Self {
        MlpSpec { input_dim, hidden: hidden.to_vec(), output_dim, dropout: 0.0, spectral_coeff: None }
    }

    pub fn with_dropout(mut self, p: f64) -> Self {
        self.dropout = p;
        self
    }

    pub fn with_spectral_norm(mut self, coeff: f64) -> Self {
        self.spectral_coeff = Some(coeff);
        self
    }
}

/// Multilayer perceptron with manual backpropagation.
///
/// The feature layer is the representation `z` consumed by uncertainty
/// heads: the last hidden layer when the model ends in a linear classifier,
/// otherwise the final layer itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub layers: Vec<DenseLayer>,
    pub features_at: usize,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub input: Matrix,
    pub pre_activations: Vec<Matrix>,
    /// Layer outputs after activation and dropout.
    pub activations: Vec<Matrix>,
    /// Dropout keep-masks already divided by the keep probability.
    pub masks: Vec<Option<Matrix>>,
    pub scales: Vec<f64>,
    pub features_at: usize,
}

impl ForwardTrace {
    pub fn output(&self) -> &Matrix {
        self.activations.last().unwrap_or(&self.input)
    }

    pub fn logits(&self) -> &Matrix {
        self.output()
    }

    pub fn features(&self) -> &Matrix {
        &self.activations[self.features_at]
    }
}

/// Gradients for every weight and bias plus the input.
#[derive(Debug, Clone)]
pub struct GradientSet {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
    pub input: Matrix,
}

impl GradientSet {
    /// Flattened in the order of [`MlpModel::params_mut`].
    pub fn flatten(self) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(2 * self.weights.len());
        for (w, b) in self.weights.into_iter().zip(self.biases) {
            out.push(w.into_data());
            out.push(b);
        }
        out
    }

    pub fn accumulate(&mut self, other: &GradientSet) -> Result<()> {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.add_scaled(1.0, b)?;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        self.input.add_scaled(1.0, &other.input)
    }
}

/// Mutable view of one parameter tensor for the optimizer.
pub struct ParamMut<'a> {
    pub values: &'a mut [f64],
    /// Whether L2 weight decay applies.
    pub decay: bool,
}

impl MlpModel {
    pub fn new(spec: &MlpSpec, rng: &mut Rng) -> Result<Self> {
        if spec.input_dim == 0 {
            return Err(Error::arg("input dimension must be positive"));
        }
        if !(0.0..1.0).contains(&spec.dropout) {
            return Err(Error::arg(format!("dropout rate {} outside [0, 1)", spec.dropout)));
        }
        let mut layers = Vec::new();
        let mut prev = spec.input_dim;
        for &h in &spec.hidden {
            let mut layer = DenseLayer::new(prev, h, Activation::Relu, rng);
            layer.dropout = spec.dropout;
            layers.push(layer);
            prev = h;
        }
        if let Some(out) = spec.output_dim {
            layers.push(DenseLayer::new(prev, out, Activation::Linear, rng));
        }
        if layers.is_empty() {
            return Err(Error::arg("model needs at least one layer"));
        }
        if let Some(c) = spec.spectral_coeff {
            for layer in &mut layers {
                layer.enable_spectral_norm(c, rng)?;
            }
        }
        let features_at =
            if spec.output_dim.is_some() && !spec.hidden.is_empty() { layers.len() - 2 } else { layers.len() - 1 };
        Ok(MlpModel { layers, features_at })
    }

    /// Wraps explicit layers; features are taken from the last layer.
    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::arg("model needs at least one layer"));
        }
        let model = MlpModel { features_at: layers.len() - 1, layers };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() || self.features_at >= self.layers.len() {
            return Err(Error::arg("feature layer index out of range"));
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::shape(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].output_dim(),
                    i + 1,
                    pair[1].input_dim()
                )));
            }
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.bias.len() != l.output_dim() {
                return Err(Error::shape(format!("layer {i} bias length {}", l.bias.len())));
            }
            if !(0.0..1.0).contains(&l.dropout) {
                return Err(Error::arg(format!("layer {i} dropout {} outside [0, 1)", l.dropout)));
            }
            if let Some(s) = &l.spectral {
                if !(s.coeff > 0.0) || s.u.len() != l.input_dim() || s.v.len() != l.output_dim() {
                    return Err(Error::arg(format!("layer {i} has inconsistent spectral state")));
                }
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, DenseLayer::output_dim)
    }

    pub fn feature_dim(&self) -> usize {
        self.layers[self.features_at].output_dim()
    }

    pub fn has_dropout(&self) -> bool {
        self.layers.iter().any(|l| l.dropout > 0.0)
    }

    pub fn has_spectral_norm(&self) -> bool {
        self.layers.iter().any(|l| l.spectral.is_some())
    }

    pub fn forward(&self, x: &Matrix, mode: Mode, rng: &mut Rng) -> Result<ForwardTrace> {
        self.run(x, |layer, rows| {
            let active = layer.dropout > 0.0 && matches!(mode, Mode::Train | Mode::McSample);
            active.then(|| {
                let keep = 1.0 - layer.dropout;
                Matrix::from_fn(rows, layer.output_dim(), |_, _| if rng.uniform() < keep { 1.0 / keep } else { 0.0 })
            })
        })
    }

    /// Re-runs a forward pass with the dropout masks recorded in `trace`.
    pub fn replay(&self, trace: &ForwardTrace) -> Result<ForwardTrace> {
        let mut masks = trace.masks.iter();
        self.run(&trace.input, |_, _| masks.next().cloned().flatten())
    }

    /// Eval-mode output without keeping intermediates.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        let mut h = x.clone();
        self.check_input(x)?;
        for layer in &self.layers {
            h = affine(&h, layer)?;
            let act = layer.activation;
            h.data_mut().iter_mut().for_each(|v| *v = act.apply(*v));
        }
        Ok(h)
    }

    /// Eval-mode features `z`.
    pub fn features(&self, x: &Matrix) -> Result<Matrix> {
        let mut rng = Rng::new(0);
        let trace = self.forward(x, Mode::Eval, &mut rng)?;
        Ok(trace.features().clone())
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::shape(format!("model expects {} inputs, got {}", self.input_dim(), x.cols())));
        }
        Ok(())
    }

    fn run(&self, x: &Matrix, mut mask_for: impl FnMut(&DenseLayer, usize) -> Option<Matrix>) -> Result<ForwardTrace> {
        self.check_input(x)?;
        let n = self.layers.len();
        let mut pre_activations = Vec::with_capacity(n);
        let mut activations: Vec<Matrix> = Vec::with_capacity(n);
        let mut masks = Vec::with_capacity(n);
        let mut scales = Vec::with_capacity(n);
        for layer in &self.layers {
            let h = activations.last().unwrap_or(x);
            let pre = affine(h, layer)?;
            let mut post = pre.map(|v| layer.activation.apply(v));
            let mask = mask_for(layer, x.rows());
            if let Some(m) = &mask {
                post = post.hadamard(m)?;
            }
            scales.push(layer.effective_scale());
            pre_activations.push(pre);
            activations.push(post);
            masks.push(mask);
        }
        Ok(ForwardTrace {
            input: x.clone(),
            pre_activations,
            activations,
            masks,
            scales,
            features_at: self.features_at,
        })
    }

    /// Backpropagates `output_grad` (and optionally a gradient arriving at
    /// the feature layer) through the trace.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        output_grad: &Matrix,
        feature_grad: Option<&Matrix>,
    ) -> Result<GradientSet> {
        if output_grad.shape() != trace.output().shape() {
            return Err(Error::shape(format!(
                "output gradient {:?} vs output {:?}",
                output_grad.shape(),
                trace.output().shape()
            )));
        }
        let n = self.layers.len();
        let mut weights = vec![Matrix::zeros(0, 0); n];
        let mut biases = vec![Vec::new(); n];
        let mut upstream = output_grad.clone();
        for l in (0..n).rev() {
            let layer = &self.layers[l];
            if l == trace.features_at {
                if let Some(fg) = feature_grad {
                    upstream.add_scaled(1.0, fg)?;
                }
            }
            let mut delta = upstream;
            if let Some(mask) = &trace.masks[l] {
                delta = delta.hadamard(mask)?;
            }
            let act = layer.activation;
            delta
                .data_mut()
                .iter_mut()
                .zip(trace.pre_activations[l].data())
                .for_each(|(d, &p)| *d *= act.derivative(p));
            let h_prev = if l == 0 { &trace.input } else { &trace.activations[l - 1] };
            let grad_eff = h_prev.t_matmul(&delta)?;
            weights[l] = layer.weight_grad_from_effective(&grad_eff);
            biases[l] = delta.column_sums();
            let mut down = delta.matmul_t(&layer.weight)?;
            down.scale_in_place(trace.scales[l]);
            upstream = down;
        }
        Ok(GradientSet { weights, biases, input: upstream })
    }

    pub fn zero_gradients(&self, batch: usize) -> GradientSet {
        GradientSet {
            weights: self.layers.iter().map(|l| Matrix::zeros(l.input_dim(), l.output_dim())).collect(),
            biases: self.layers.iter().map(|l| vec![0.0; l.output_dim()]).collect(),
            input: Matrix::zeros(batch, self.input_dim()),
        }
    }

    /// Parameters in the order `[W0, b0, W1, b1, …]`; biases are not decayed.
    pub fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for layer in &mut self.layers {
            out.push(ParamMut { values: layer.weight.data_mut(), decay: true });
            out.push(ParamMut { values: &mut layer.bias, decay: false });
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.data().len() + l.bias.len()).sum()
    }

    /// One warm-started power-iteration round per normalized layer.
    pub fn refresh_spectral(&mut self, iters: usize) -> Result<()> {
        self.layers.iter_mut().try_for_each(|l| l.refresh_spectral(iters))
    }

    /// Runs power iteration to convergence (at least 100 rounds) so the
    /// effective weights carry exact spectral norms for evaluation.
    pub fn converge_spectral(&mut self) -> Result<()> {
        self.layers.iter_mut().try_for_each(DenseLayer::converge_spectral)
    }

    pub fn effective_weights(&self) -> Vec<Matrix> {
        self.layers.iter().map(DenseLayer::effective_weight).collect()
    }
}

fn affine(h: &Matrix, layer: &DenseLayer) -> Result<Matrix> {
    let mut a = h.matmul(&layer.weight)?;
    let s = layer.effective_scale();
    if s != 1.0 {
        a.scale_in_place(s);
    }
    a.add_row_broadcast(&layer.bias)?;
    Ok(a)
}
