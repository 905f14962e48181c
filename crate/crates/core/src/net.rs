//! Densely connected feedforward networks with an exact input Jacobian and
//! exact parameter gradients of the Jacobian-penalised squared loss.
//!
//! Layers are `η^l = σ(W_l η^{l-1} + b_l)` for the hidden layers and a linear
//! output layer. The input Jacobian is propagated forward as a tangent matrix
//! `T_l = diag(σ'(z_l)) W_l T_{l-1}` with `T_0 = I`, and the penalty
//! `‖J‖²_F` is differentiated by a reverse sweep through that propagation,
//! which needs the activation's second derivative.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::train::NormStats;

pub const DEFAULT_PENALIZED_SLOPE: f64 = 0.25;

/// Deserialises from a bare name (`"swish"`) or from the tagged object form
/// that serialisation produces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", try_from = "ActivationRepr")]
pub enum Activation {
    Tanh,
    Elu,
    /// `z · sigmoid(z)`.
    Swish,
    /// `tanh(z)` for `z > 0`, `slope · tanh(z)` otherwise.
    PenalizedTanh { slope: f64 },
}

impl Activation {
    pub fn penalized_tanh() -> Self {
        Activation::PenalizedTanh {
            slope: DEFAULT_PENALIZED_SLOPE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Activation::PenalizedTanh { slope } if !(slope > 0.0 && slope <= 1.0) => Err(
                Error::Parameter(format!("penalized tanh slope must lie in (0, 1], got {slope}")),
            ),
            _ => Ok(()),
        }
    }

    /// Value, first and second derivative at `z`.
    #[inline]
    pub fn eval(&self, z: f64) -> (f64, f64, f64) {
        match *self {
            Activation::Tanh => tanh_triple(z),
            Activation::Elu => {
                if z > 0.0 {
                    (z, 1.0, 0.0)
                } else {
                    let e = z.exp();
                    (e - 1.0, e, e)
                }
            }
            Activation::Swish => {
                let s = sigmoid(z);
                let ds = s * (1.0 - s);
                (z * s, s + z * ds, ds * (2.0 + z * (1.0 - 2.0 * s)))
            }
            Activation::PenalizedTanh { slope } => {
                let (v, d1, d2) = tanh_triple(z);
                if z > 0.0 {
                    (v, d1, d2)
                } else {
                    (slope * v, slope * d1, slope * d2)
                }
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Elu => "elu",
            Activation::Swish => "swish",
            Activation::PenalizedTanh { .. } => "penalized_tanh",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "tanh" => Ok(Activation::Tanh),
            "elu" => Ok(Activation::Elu),
            "swish" => Ok(Activation::Swish),
            "penalized_tanh" | "ptanh" => Ok(Activation::penalized_tanh()),
            other => Err(Error::Config(format!("unknown activation {other:?}"))),
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ActivationRepr {
    Name(String),
    Tagged(TaggedActivation),
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum TaggedActivation {
    Tanh,
    Elu,
    Swish,
    PenalizedTanh {
        #[serde(default = "default_slope")]
        slope: f64,
    },
}

fn default_slope() -> f64 {
    DEFAULT_PENALIZED_SLOPE
}

impl TryFrom<ActivationRepr> for Activation {
    type Error = Error;

    fn try_from(repr: ActivationRepr) -> Result<Self> {
        let act = match repr {
            ActivationRepr::Name(name) => Activation::parse(&name)?,
            ActivationRepr::Tagged(TaggedActivation::Tanh) => Activation::Tanh,
            ActivationRepr::Tagged(TaggedActivation::Elu) => Activation::Elu,
            ActivationRepr::Tagged(TaggedActivation::Swish) => Activation::Swish,
            ActivationRepr::Tagged(TaggedActivation::PenalizedTanh { slope }) => {
                Activation::PenalizedTanh { slope }
            }
        };
        act.validate()?;
        Ok(act)
    }
}

#[inline]
fn tanh_triple(z: f64) -> (f64, f64, f64) {
    let t = z.tanh();
    let d1 = 1.0 - t * t;
    (t, d1, -2.0 * t * d1)
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Weights are row-major `n_l × n_{l-1}` matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl MlpParams {
    pub fn zeros(layer_sizes: &[usize], activation: Activation) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::Config(format!(
                "layer sizes must list at least an input and an output layer of positive width, got {layer_sizes:?}"
            )));
        }
        activation.validate()?;
        let weights = layer_sizes
            .windows(2)
            .map(|w| vec![0.0; w[0] * w[1]])
            .collect();
        let biases = layer_sizes[1..].iter().map(|&n| vec![0.0; n]).collect();
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            activation,
            weights,
            biases,
        })
    }

    /// Truncated-normal weights with standard deviation `1/sqrt(fan_in)`,
    /// resampled outside two standard deviations; zero biases.
    pub fn init<R: Rng>(layer_sizes: &[usize], activation: Activation, rng: &mut R) -> Result<Self> {
        let mut p = Self::zeros(layer_sizes, activation)?;
        for (l, w) in p.weights.iter_mut().enumerate() {
            let std = 1.0 / (layer_sizes[l] as f64).sqrt();
            for v in w.iter_mut() {
                *v = std * truncated_normal(rng);
            }
        }
        Ok(p)
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().chain(&self.biases).map(Vec::len).sum()
    }

    /// All parameters in a fixed order: every weight matrix, then every bias.
    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(&self.biases).flatten()
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.biases.iter_mut()).flatten()
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.values_mut().for_each(|v| *v = 0.0);
        z
    }

    pub fn validate(&self) -> Result<()> {
        self.activation.validate()?;
        let l = self.layer_sizes.len();
        if l < 2 || self.weights.len() != l - 1 || self.biases.len() != l - 1 {
            return Err(Error::Shape("layer count does not match layer sizes".into()));
        }
        for (i, w) in self.layer_sizes.windows(2).enumerate() {
            if self.weights[i].len() != w[0] * w[1] || self.biases[i].len() != w[1] {
                return Err(Error::Shape(format!(
                    "layer {} has wrong weight or bias shape for {}x{}",
                    i + 1,
                    w[1],
                    w[0]
                )));
            }
        }
        if self.values().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite network parameter".into()));
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "network expects input of length {}, got {}",
                self.input_dim(),
                x.len()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut a = x.to_vec();
        let last = self.n_layers() - 1;
        for l in 0..=last {
            let mut z = affine(&self.weights[l], &self.biases[l], &a);
            if l < last {
                z.iter_mut().for_each(|v| *v = self.activation.eval(*v).0);
            }
            a = z;
        }
        Ok(a)
    }

    /// `∂f/∂x` as a row-major `n_out × n_in` matrix.
    pub fn input_jacobian(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut tape = Tape::new(self);
        tape.record(self, x, true);
        Ok(tape.jacobian)
    }

    /// Mean squared error plus `lambda` times the mean squared Frobenius norm
    /// of the input Jacobian, with its exact gradient.
    pub fn loss_and_gradients(&self, batch: &Batch<'_>, lambda: f64) -> Result<(f64, MlpParams)> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::Parameter(format!("lambda must be non-negative, got {lambda}")));
        }
        if batch.in_dim != self.input_dim() || batch.out_dim != self.output_dim() {
            return Err(Error::Shape(format!(
                "batch is {}→{} but the network is {}→{}",
                batch.in_dim,
                batch.out_dim,
                self.input_dim(),
                self.output_dim()
            )));
        }
        let with_jacobian = lambda > 0.0;
        let scale = 1.0 / batch.len() as f64;
        let mut grads = self.zeros_like();
        let mut tape = Tape::new(self);
        let mut loss = 0.0;
        for (x, y) in batch.pairs() {
            tape.record(self, x, with_jacobian);
            let (sq, fro) = tape.backward(self, y, scale, lambda, &mut grads);
            loss += scale * sq;
            if with_jacobian {
                loss += lambda * scale * fro;
            }
        }
        if !loss.is_finite() || grads.values().any(|g| !g.is_finite()) {
            return Err(Error::TrainingDiverged {
                epoch: 0,
                reason: format!("non-finite loss {loss}"),
                last_finite: None,
            });
        }
        Ok((loss, grads))
    }

    /// Loss only; shares the recording path with [`Self::loss_and_gradients`].
    pub fn loss(&self, batch: &Batch<'_>, lambda: f64) -> Result<f64> {
        let mut tape = Tape::new(self);
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for (x, y) in batch.pairs() {
            self.check_input(x)?;
            tape.record(self, x, lambda > 0.0);
            let sq: f64 = tape.output().iter().zip(y).map(|(f, t)| (f - t).powi(2)).sum();
            loss += scale * sq;
            if lambda > 0.0 {
                loss += lambda * scale * frobenius_sq(&tape.jacobian);
            }
        }
        Ok(loss)
    }
}

/// `Σ J_ij²`; the single definition used by the penalty and diagnostics.
pub fn frobenius_sq(jacobian: &[f64]) -> f64 {
    jacobian.iter().map(|v| v * v).sum()
}

fn truncated_normal<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= 2.0 {
            return z;
        }
    }
}

fn affine(w: &[f64], b: &[f64], a: &[f64]) -> Vec<f64> {
    let n_in = a.len();
    b.iter()
        .enumerate()
        .map(|(i, bi)| {
            let row = &w[i * n_in..(i + 1) * n_in];
            bi + row.iter().zip(a).map(|(wij, aj)| wij * aj).sum::<f64>()
        })
        .collect()
}

/// Per-sample intermediates of one forward (and tangent) pass.
struct Tape {
    /// `acts[0] = x`, `acts[l] = σ(z_l)` for hidden layers.
    acts: Vec<Vec<f64>>,
    /// `(σ', σ'')` at each hidden pre-activation.
    derivs: Vec<Vec<(f64, f64)>>,
    /// Pre-activation tangents `S_l = W_l T_{l-1}`, `n_l × m`.
    pre_tangents: Vec<Vec<f64>>,
    /// `T_l = diag(σ') S_l`; `tangents[0] = I`.
    tangents: Vec<Vec<f64>>,
    output: Vec<f64>,
    jacobian: Vec<f64>,
}

impl Tape {
    fn new(p: &MlpParams) -> Self {
        let hidden = p.n_layers() - 1;
        let m = p.input_dim();
        let mut identity = vec![0.0; m * m];
        for i in 0..m {
            identity[i * m + i] = 1.0;
        }
        let mut tangents = vec![identity];
        tangents.extend((1..=hidden).map(|l| vec![0.0; p.layer_sizes[l] * m]));
        Self {
            acts: vec![Vec::new(); hidden + 1],
            derivs: vec![Vec::new(); hidden + 1],
            pre_tangents: (0..=hidden)
                .map(|l| vec![0.0; if l == 0 { 0 } else { p.layer_sizes[l] * m }])
                .collect(),
            tangents,
            output: Vec::new(),
            jacobian: vec![0.0; p.output_dim() * m],
        }
    }

    fn output(&self) -> &[f64] {
        &self.output
    }

    fn record(&mut self, p: &MlpParams, x: &[f64], with_jacobian: bool) {
        let m = p.input_dim();
        let hidden = p.n_layers() - 1;
        self.acts[0].clear();
        self.acts[0].extend_from_slice(x);
        for l in 1..=hidden {
            let z = affine(&p.weights[l - 1], &p.biases[l - 1], &self.acts[l - 1]);
            let d: Vec<(f64, f64, f64)> = z.iter().map(|&zi| p.activation.eval(zi)).collect();
            self.acts[l] = d.iter().map(|t| t.0).collect();
            self.derivs[l] = d.iter().map(|t| (t.1, t.2)).collect();
            if with_jacobian {
                let (before, after) = self.tangents.split_at_mut(l);
                matmul(
                    &p.weights[l - 1],
                    &before[l - 1],
                    p.layer_sizes[l],
                    p.layer_sizes[l - 1],
                    m,
                    &mut self.pre_tangents[l],
                );
                let t = &mut after[0];
                for i in 0..p.layer_sizes[l] {
                    let s = self.derivs[l][i].0;
                    for j in 0..m {
                        t[i * m + j] = s * self.pre_tangents[l][i * m + j];
                    }
                }
            }
        }
        self.output = affine(&p.weights[hidden], &p.biases[hidden], &self.acts[hidden]);
        if with_jacobian {
            matmul(
                &p.weights[hidden],
                &self.tangents[hidden],
                p.output_dim(),
                p.layer_sizes[hidden],
                m,
                &mut self.jacobian,
            );
        }
    }

    /// Accumulates `scale·∂/∂θ (‖f − y‖² + λ‖J‖²_F)` into `grads` and returns
    /// the unscaled squared error and `‖J‖²_F` (zero when λ = 0).
    fn backward(
        &self,
        p: &MlpParams,
        y: &[f64],
        scale: f64,
        lambda: f64,
        grads: &mut MlpParams,
    ) -> (f64, f64) {
        let m = p.input_dim();
        let hidden = p.n_layers() - 1;
        let with_jacobian = lambda > 0.0;

        let resid: Vec<f64> = self.output.iter().zip(y).map(|(f, t)| f - t).collect();
        let sq: f64 = resid.iter().map(|r| r * r).sum();
        // Adjoint of the output layer pre-activation and of J.
        let mut z_bar: Vec<f64> = resid.iter().map(|r| 2.0 * scale * r).collect();
        let mut t_bar_out: Vec<f64> = if with_jacobian {
            self.jacobian.iter().map(|j| 2.0 * lambda * scale * j).collect()
        } else {
            Vec::new()
        };
        let fro = if with_jacobian { frobenius_sq(&self.jacobian) } else { 0.0 };

        for l in (1..=hidden + 1).rev() {
            // Layer l maps acts[l-1] (n_in) to z_l (n_out).
            let (n_in, n_out) = (p.layer_sizes[l - 1], p.layer_sizes[l]);
            let w = &p.weights[l - 1];
            let gw = &mut grads.weights[l - 1];
            let gb = &mut grads.biases[l - 1];
            let a_prev = &self.acts[l - 1];

            if l <= hidden && with_jacobian {
                // T_l = diag(σ'(z_l)) S_l, so S̄ = diag(σ') T̄ and
                // z̄_i += σ''(z_i) Σ_j T̄_ij S_ij.
                let s = &self.pre_tangents[l];
                for i in 0..n_out {
                    let (d1, d2) = self.derivs[l][i];
                    let mut acc = 0.0;
                    for j in 0..m {
                        let tb = t_bar_out[i * m + j];
                        acc += tb * s[i * m + j];
                        t_bar_out[i * m + j] = d1 * tb;
                    }
                    z_bar[i] += d2 * acc;
                }
            }
            // z_l = W a_{l-1} + b and S_l = W T_{l-1} (or J = W T_hidden).
            let t_prev = &self.tangents[l - 1];
            for i in 0..n_out {
                gb[i] += z_bar[i];
                let row = &mut gw[i * n_in..(i + 1) * n_in];
                for (k, g) in row.iter_mut().enumerate() {
                    *g += z_bar[i] * a_prev[k];
                }
                if with_jacobian {
                    let sb = &t_bar_out[i * m..(i + 1) * m];
                    for (k, g) in row.iter_mut().enumerate() {
                        let tp = &t_prev[k * m..(k + 1) * m];
                        *g += sb.iter().zip(tp).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
            }
            if l == 1 {
                break;
            }
            // Propagate into layer l-1's activation and tangent.
            let mut a_bar = vec![0.0; n_in];
            let mut t_bar_prev = if with_jacobian { vec![0.0; n_in * m] } else { Vec::new() };
            for i in 0..n_out {
                let row = &w[i * n_in..(i + 1) * n_in];
                for k in 0..n_in {
                    a_bar[k] += row[k] * z_bar[i];
                    if with_jacobian {
                        for j in 0..m {
                            t_bar_prev[k * m + j] += row[k] * t_bar_out[i * m + j];
                        }
                    }
                }
            }
            z_bar = a_bar
                .iter()
                .zip(&self.derivs[l - 1])
                .map(|(ab, (d1, _))| ab * d1)
                .collect();
            t_bar_out = t_bar_prev;
        }
        (sq, fro)
    }
}

/// `out (r×c) = a (r×k) · b (k×c)`, all row-major.
fn matmul(a: &[f64], b: &[f64], r: usize, k: usize, c: usize, out: &mut [f64]) {
    for i in 0..r {
        let dst = &mut out[i * c..(i + 1) * c];
        dst.iter_mut().for_each(|v| *v = 0.0);
        for p in 0..k {
            let aip = a[i * k + p];
            let src = &b[p * c..(p + 1) * c];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += aip * s;
            }
        }
    }
}

/// Feature/target pairs, both row-major.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    features: &'a [f64],
    targets: &'a [f64],
    in_dim: usize,
    out_dim: usize,
}

impl<'a> Batch<'a> {
    pub fn new(features: &'a [f64], targets: &'a [f64], in_dim: usize, out_dim: usize) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::Shape("batch dimensions must be positive".into()));
        }
        if features.len() % in_dim != 0 || targets.len() % out_dim != 0 {
            return Err(Error::Shape("batch data is not a whole number of rows".into()));
        }
        let rows = features.len() / in_dim;
        if rows != targets.len() / out_dim {
            return Err(Error::Shape(format!(
                "{rows} feature rows but {} target rows",
                targets.len() / out_dim
            )));
        }
        if rows == 0 {
            return Err(Error::InsufficientData("empty batch".into()));
        }
        Ok(Self {
            features,
            targets,
            in_dim,
            out_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.features.len() / self.in_dim
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&'a [f64], &'a [f64])> {
        self.features
            .chunks_exact(self.in_dim)
            .zip(self.targets.chunks_exact(self.out_dim))
    }
}

/// A trained network together with the normalisation it was trained under.
/// Predictions and Jacobians are in physical (unnormalised) units.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub params: MlpParams,
    pub norm: NormStats,
    pub lambda: f64,
}

pub const MODEL_FORMAT: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format: u32,
    layer_sizes: Vec<usize>,
    activation: Activation,
    lambda: f64,
    normalization: NormStats,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl MlpModel {
    pub fn dim(&self) -> usize {
        self.params.input_dim()
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        let xn = self.norm.normalize_features(x);
        let yn = self.params.forward(&xn)?;
        Ok(self.norm.denormalize_targets(&yn))
    }

    /// Physical-space Jacobian `diag(σ_y) J_net diag(1/σ_x)`.
    pub fn jacobian(&self, x: &[f64]) -> Result<Vec<f64>> {
        let xn = self.norm.normalize_features(x);
        let mut j = self.params.input_jacobian(&xn)?;
        let (n_out, n_in) = (self.params.output_dim(), self.params.input_dim());
        for r in 0..n_out {
            for c in 0..n_in {
                j[r * n_in + c] *= self.norm.target_std[r] / self.norm.feature_std[c];
            }
        }
        Ok(j)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            format: MODEL_FORMAT,
            layer_sizes: self.params.layer_sizes.clone(),
            activation: self.params.activation,
            lambda: self.lambda,
            normalization: self.norm.clone(),
            weights: self.params.weights.clone(),
            biases: self.params.biases.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.format != MODEL_FORMAT {
            return Err(Error::Config(format!(
                "unsupported model format {} (expected {MODEL_FORMAT})",
                file.format
            )));
        }
        let params = MlpParams {
            layer_sizes: file.layer_sizes,
            activation: file.activation,
            weights: file.weights,
            biases: file.biases,
        };
        params.validate()?;
        let n = params.input_dim();
        if params.output_dim() != n {
            return Err(Error::Shape("dynamics models must map R^M to R^M".into()));
        }
        file.normalization.validate(n)?;
        Ok(Self {
            params,
            norm: file.normalization,
            lambda: file.lambda,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
