//! Adam training with minibatches, per-component normalisation, a seeded
//! validation split and early stopping, plus the phase-space sampling and
//! multi-trajectory augmentation used to build datasets.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::r2_score;
use crate::net::{Activation, Batch, MlpModel, MlpParams};
use crate::systems::{targets_from_trajectory, Trajectory};

/// A component whose standard deviation is below `STD_FLOOR·max(1, |mean|)`
/// is treated as constant and left unscaled.
pub const STD_FLOOR: f64 = 1e-12;

/// Feature/target pairs, both row-major `len × dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<f64>,
    pub targets: Vec<f64>,
    pub dim: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, targets: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || features.len() % dim != 0 || features.len() != targets.len() {
            return Err(Error::Shape(format!(
                "{} feature values and {} target values do not form rows of width {dim}",
                features.len(),
                targets.len()
            )));
        }
        Ok(Self {
            features,
            targets,
            dim,
        })
    }

    /// Pairs `(x^k, (x^{k+1} − x^k)/Δt)` of a single trajectory.
    pub fn from_trajectory(traj: &Trajectory) -> Result<Self> {
        let t = targets_from_trajectory(traj)?;
        let features = traj.states()[..t.targets.len()].to_vec();
        Self::new(features, t.targets, traj.dim())
    }

    pub fn len(&self) -> usize {
        self.features.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn target(&self, i: usize) -> &[f64] {
        &self.targets[i * self.dim..(i + 1) * self.dim]
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        let mut features = Vec::with_capacity(idx.len() * self.dim);
        let mut targets = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            features.extend_from_slice(self.feature(i));
            targets.extend_from_slice(self.target(i));
        }
        Self {
            features,
            targets,
            dim: self.dim,
        }
    }
}

impl Dataset {
    /// Stacks datasets of equal dimension.
    pub fn concat(parts: &[Dataset]) -> Result<Self> {
        let dim = parts
            .first()
            .ok_or_else(|| Error::InsufficientData("no datasets to concatenate".into()))?
            .dim;
        let mut out = Dataset::new(Vec::new(), Vec::new(), dim)?;
        for (i, p) in parts.iter().enumerate() {
            if p.dim != dim {
                return Err(Error::Config(format!(
                    "dataset {i} has dimension {} but dataset 0 has {dim}",
                    p.dim
                )));
            }
            out.features.extend_from_slice(&p.features);
            out.targets.extend_from_slice(&p.targets);
        }
        Ok(out)
    }
}

/// Concatenates the pairs of several trajectories without ever pairing the
/// last state of one with the first state of the next.
pub fn assemble_multi_trajectory(trajs: &[Trajectory]) -> Result<Dataset> {
    let first = trajs
        .first()
        .ok_or_else(|| Error::InsufficientData("no trajectories to assemble".into()))?;
    let mut out = Dataset::new(Vec::new(), Vec::new(), first.dim())?;
    for (i, t) in trajs.iter().enumerate() {
        if t.dim() != first.dim() {
            return Err(Error::Config(format!(
                "trajectory {i} has dimension {} but trajectory 0 has {}",
                t.dim(),
                first.dim()
            )));
        }
        if (t.dt() - first.dt()).abs() > 1e-12 * first.dt() {
            return Err(Error::Config(format!(
                "trajectory {i} has dt = {} but trajectory 0 has {}",
                t.dt(),
                first.dt()
            )));
        }
        let d = Dataset::from_trajectory(t)?;
        out.features.extend(d.features);
        out.targets.extend(d.targets);
    }
    Ok(out)
}

/// `n` points drawn i.i.d. uniformly from the box `bounds`, labelled by
/// `target`.
pub fn sample_uniform_phase_space<F>(
    bounds: &[(f64, f64)],
    n: usize,
    seed: u64,
    target: F,
) -> Result<Dataset>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if n == 0 {
        return Err(Error::Parameter("sample count must be at least 1".into()));
    }
    if bounds.is_empty() {
        return Err(Error::Parameter("no sampling intervals given".into()));
    }
    for (j, &(lo, hi)) in bounds.iter().enumerate() {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Parameter(format!(
                "interval {j} [{lo}, {hi}] is empty or not finite"
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = bounds.len();
    let mut features = Vec::with_capacity(n * dim);
    let mut targets = Vec::with_capacity(n * dim);
    for _ in 0..n {
        let x: Vec<f64> = bounds.iter().map(|&(lo, hi)| rng.gen_range(lo..hi)).collect();
        let y = target(&x)?;
        if y.len() != dim {
            return Err(Error::Shape("target dimension differs from the box".into()));
        }
        features.extend(x);
        targets.extend(y);
    }
    Dataset::new(features, targets, dim)
}

/// Per-component mean and standard deviation of features and targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormStats {
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub target_mean: Vec<f64>,
    pub target_std: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Feature,
    Target,
}

/// Mean and population standard deviation of every column. The mean is
/// accumulated as an offset from the first row so a constant column gets
/// exactly its value.
fn column_stats(data: &[f64], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let n = (data.len() / dim) as f64;
    let mut mean = vec![0.0; dim];
    let mut std = vec![0.0; dim];
    for j in 0..dim {
        let base = data[j];
        let offset: f64 = data.iter().skip(j).step_by(dim).map(|v| v - base).sum::<f64>() / n;
        mean[j] = base + offset;
        let var = data
            .iter()
            .skip(j)
            .step_by(dim)
            .map(|v| (v - mean[j]).powi(2))
            .sum::<f64>()
            / n;
        std[j] = var.sqrt();
    }
    (mean, std)
}

impl NormStats {
    /// Returns the statistics and a warning for every constant component.
    pub fn fit(features: &[f64], targets: &[f64], dim: usize) -> Result<(Self, Vec<String>)> {
        if dim == 0 || features.len() / dim.max(1) < 2 || features.len() != targets.len() {
            return Err(Error::InsufficientData(
                "normalisation needs at least 2 aligned samples".into(),
            ));
        }
        let (feature_mean, mut feature_std) = column_stats(features, dim);
        let (target_mean, mut target_std) = column_stats(targets, dim);
        let mut warnings = Vec::new();
        for (label, mean, std) in [
            ("feature", &feature_mean, &mut feature_std),
            ("target", &target_mean, &mut target_std),
        ] {
            for (j, s) in std.iter_mut().enumerate() {
                if *s < STD_FLOOR * mean[j].abs().max(1.0) {
                    warnings.push(format!("{label} component {} is constant; left unscaled", j + 1));
                    *s = 1.0;
                }
            }
        }
        Ok((
            Self {
                feature_mean,
                feature_std,
                target_mean,
                target_std,
            },
            warnings,
        ))
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            feature_mean: vec![0.0; dim],
            feature_std: vec![1.0; dim],
            target_mean: vec![0.0; dim],
            target_std: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.feature_mean.len()
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let all = [
            &self.feature_mean,
            &self.feature_std,
            &self.target_mean,
            &self.target_std,
        ];
        if all.iter().any(|v| v.len() != dim) {
            return Err(Error::Shape(format!("normalisation vectors must have length {dim}")));
        }
        if self.feature_std.iter().chain(&self.target_std).any(|s| !(*s > 0.0)) {
            return Err(Error::Domain("normalisation std entries must be positive".into()));
        }
        Ok(())
    }

    fn moments(&self, role: Role) -> (&[f64], &[f64]) {
        match role {
            Role::Feature => (&self.feature_mean, &self.feature_std),
            Role::Target => (&self.target_mean, &self.target_std),
        }
    }

    /// Normalises row-major data of width `dim` in the given role.
    pub fn normalize(&self, data: &[f64], role: Role) -> Vec<f64> {
        let (mean, std) = self.moments(role);
        let dim = mean.len();
        data.iter()
            .enumerate()
            .map(|(i, v)| (v - mean[i % dim]) / std[i % dim])
            .collect()
    }

    pub fn denormalize(&self, data: &[f64], role: Role) -> Vec<f64> {
        let (mean, std) = self.moments(role);
        let dim = mean.len();
        data.iter()
            .enumerate()
            .map(|(i, v)| v * std[i % dim] + mean[i % dim])
            .collect()
    }

    pub fn normalize_features(&self, x: &[f64]) -> Vec<f64> {
        self.normalize(x, Role::Feature)
    }

    pub fn denormalize_targets(&self, y: &[f64]) -> Vec<f64> {
        self.denormalize(y, Role::Target)
    }
}

/// Seeded disjoint split of `0..n` into `(train, validation)` index lists,
/// each sorted ascending. A positive fraction always yields at least one
/// validation row.
pub fn split_train_val(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Parameter(format!(
            "validation fraction must lie in [0, 1), got {fraction}"
        )));
    }
    if fraction == 0.0 {
        return Ok(((0..n).collect(), Vec::new()));
    }
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "cannot split {n} samples into training and validation sets"
        )));
    }
    let n_val = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok((train, val))
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates for Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: MlpParams,
    pub v: MlpParams,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &MlpParams) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut MlpParams, grads: &MlpParams, lr: f64) -> Result<()> {
        if grads.layer_sizes != params.layer_sizes || self.m.layer_sizes != params.layer_sizes {
            return Err(Error::Shape("gradient shape differs from parameters".into()));
        }
        if grads.values().any(|g| !g.is_finite()) {
            return Err(Error::TrainingDiverged {
                epoch: 0,
                reason: "non-finite gradient".into(),
                last_finite: None,
            });
        }
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for (((p, g), m), v) in params
            .values_mut()
            .zip(grads.values())
            .zip(self.m.values_mut())
            .zip(self.v.values_mut())
        {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
        Ok(())
    }
}

fn default_lr() -> f64 {
    1e-3
}
fn default_batch() -> usize {
    64
}
fn default_epochs() -> usize {
    1000
}
fn default_val() -> f64 {
    0.2
}
fn default_patience() -> usize {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_val")]
    pub val_fraction: f64,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default)]
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(layer_sizes: &[usize], activation: Activation) -> Self {
        Self {
            layer_sizes: layer_sizes.to_vec(),
            activation,
            learning_rate: default_lr(),
            lambda: 0.0,
            batch_size: default_batch(),
            epochs: default_epochs(),
            val_fraction: default_val(),
            patience: default_patience(),
            seed: 0,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let sizes = &self.layer_sizes;
        if sizes.len() < 2 || sizes[0] != dim || sizes[sizes.len() - 1] != dim {
            return Err(Error::Config(format!(
                "layer sizes {sizes:?} must start and end with the state dimension {dim}"
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config("lambda must be non-negative".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be at least 1".into()));
        }
        self.activation.validate()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LearningCurve {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub val_r2: Vec<f64>,
}

impl LearningCurve {
    pub fn epochs(&self) -> usize {
        self.train_loss.len()
    }

    pub fn to_csv(&self) -> Result<String> {
        let header: Vec<String> = ["epoch", "train_loss", "val_loss", "val_r2"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let rows: Vec<[f64; 4]> = (0..self.epochs())
            .map(|e| [(e + 1) as f64, self.train_loss[e], self.val_loss[e], self.val_r2[e]])
            .collect();
        crate::io::csv_string(&header, rows.iter().map(|r| r.as_slice()))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MlpModel,
    pub curve: LearningCurve,
    /// 1-based epoch of the returned checkpoint.
    pub best_epoch: usize,
    pub warnings: Vec<String>,
}

/// Trains a network on `data`. Validation rows are held out of the
/// normalisation statistics and of the gradient updates; the returned model
/// is the checkpoint with the lowest validation MSE (training loss when the
/// validation set is empty).
pub fn train(data: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate(data.dim)?;
    let dim = data.dim;
    let (train_idx, val_idx) = split_train_val(data.len(), config.val_fraction, config.seed)?;
    if train_idx.len() < config.batch_size.min(2).max(1) || train_idx.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} training rows after the split",
            train_idx.len()
        )));
    }
    let train_set = data.subset(&train_idx);
    let val_set = data.subset(&val_idx);

    let (norm, warnings) = NormStats::fit(&train_set.features, &train_set.targets, dim)?;
    for w in &warnings {
        log::warn!("{w}");
    }
    let xt = norm.normalize(&train_set.features, Role::Feature);
    let yt = norm.normalize(&train_set.targets, Role::Target);
    let xv = norm.normalize(&val_set.features, Role::Feature);
    let yv = norm.normalize(&val_set.targets, Role::Target);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = MlpParams::init(&config.layer_sizes, config.activation, &mut rng)?;
    let mut adam = AdamState::new(&params);

    let n_train = train_set.len();
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut bx = Vec::with_capacity(config.batch_size * dim);
    let mut by = Vec::with_capacity(config.batch_size * dim);

    let mut curve = LearningCurve::default();
    let mut best = (f64::INFINITY, params.clone(), 0usize);
    let mut stale = 0usize;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            bx.clear();
            by.clear();
            for &i in chunk {
                bx.extend_from_slice(&xt[i * dim..(i + 1) * dim]);
                by.extend_from_slice(&yt[i * dim..(i + 1) * dim]);
            }
            let batch = Batch::new(&bx, &by, dim, dim)?;
            let (loss, grads) = params
                .loss_and_gradients(&batch, config.lambda)
                .map_err(|e| diverged(e, epoch, &best.1, &norm, config.lambda))?;
            adam.step(&mut params, &grads, config.learning_rate)
                .map_err(|e| diverged(e, epoch, &best.1, &norm, config.lambda))?;
            epoch_loss += loss * chunk.len() as f64;
        }
        let train_loss = epoch_loss / n_train as f64;
        if !train_loss.is_finite() || params.values().any(|p| !p.is_finite()) {
            return Err(diverged_at(epoch, "non-finite training loss", &best.1, &norm, config.lambda));
        }

        let (val_loss, val_r2) = if val_set.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let batch = Batch::new(&xv, &yv, dim, dim)?;
            let loss = params.loss(&batch, 0.0)?;
            let pred: Vec<f64> = xv
                .chunks_exact(dim)
                .map(|x| params.forward(x))
                .collect::<Result<Vec<_>>>()?
                .concat();
            let r2 = r2_score(&yv, &pred, dim).map(|r| r.mean).unwrap_or(f64::NAN);
            (loss, r2)
        };
        curve.train_loss.push(train_loss);
        curve.val_loss.push(val_loss);
        curve.val_r2.push(val_r2);

        let monitored = if val_set.is_empty() { train_loss } else { val_loss };
        if !monitored.is_finite() {
            return Err(diverged_at(epoch, "non-finite validation loss", &best.1, &norm, config.lambda));
        }
        if monitored < best.0 {
            best = (monitored, params.clone(), epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale > config.patience {
                log::info!("early stop at epoch {epoch}, best epoch {}", best.2);
                break;
            }
        }
    }

    Ok(TrainOutcome {
        model: MlpModel {
            params: best.1,
            norm,
            lambda: config.lambda,
        },
        curve,
        best_epoch: best.2,
        warnings,
    })
}

fn diverged(e: Error, epoch: usize, last: &MlpParams, norm: &NormStats, lambda: f64) -> Error {
    match e {
        Error::TrainingDiverged { reason, .. } => diverged_at(epoch, &reason, last, norm, lambda),
        other => other,
    }
}

fn diverged_at(epoch: usize, reason: &str, last: &MlpParams, norm: &NormStats, lambda: f64) -> Error {
    Error::TrainingDiverged {
        epoch,
        reason: reason.to_string(),
        last_finite: Some(Box::new(MlpModel {
            params: last.clone(),
            norm: norm.clone(),
            lambda,
        })),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{generate_trajectory, vdp_target};
    use rand_distr::StandardNormal;

    fn vdp_fn(x: &[f64]) -> Result<Vec<f64>> {
        Ok(vdp_target(x, 2.0)?.to_vec())
    }

    #[test]
    fn normalisation_round_trip_and_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data: Vec<f64> = (0..300).map(|i| rng.gen_range(-5.0..5.0) * (1 + i % 3) as f64).collect();
        let (s, w) = NormStats::fit(&data, &data, 3).unwrap();
        assert!(w.is_empty());
        let z = s.normalize(&data, Role::Feature);
        let (m, sd) = column_stats(&z, 3);
        for j in 0..3 {
            assert!(m[j].abs() <= 1e-10);
            assert!((sd[j] - 1.0).abs() <= 1e-10);
        }
        let back = s.denormalize(&z, Role::Feature);
        let dev = back.iter().zip(&data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(dev < 1e-12, "{dev}");
    }

    #[test]
    fn standard_normal_data_has_unit_stats() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data: Vec<f64> = (0..200_000).map(|_| rng.sample(StandardNormal)).collect();
        let (s, _) = NormStats::fit(&data, &data, 2).unwrap();
        for j in 0..2 {
            assert!(s.feature_mean[j].abs() < 0.01);
            assert!((s.feature_std[j] - 1.0).abs() < 0.01);
        }
    }

    #[test]
    fn constant_component_is_left_unscaled() {
        let data = vec![0.1, 1.0, 0.1, 2.0, 0.1, 3.0];
        let (s, w) = NormStats::fit(&data, &data, 2).unwrap();
        assert_eq!(s.feature_std[0], 1.0);
        assert_eq!(w.len(), 2);
        let z = s.normalize(&data, Role::Feature);
        assert!(z.iter().step_by(2).all(|&v| v == 0.0));
    }

    #[test]
    fn rounding_noise_is_not_amplified() {
        let data = vec![5.0, 1.0, 5.0 + 1e-15, 2.0, 5.0 - 1e-15, 3.0];
        let (s, w) = NormStats::fit(&data, &data, 2).unwrap();
        assert_eq!(w.len(), 2);
        let z = s.normalize(&data, Role::Feature);
        assert!(z.iter().step_by(2).all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn split_counts_and_determinism() {
        let (t, v) = split_train_val(399, 0.2, 7).unwrap();
        assert_eq!(v.len(), 80);
        assert_eq!(t.len(), 319);
        assert!(t.iter().all(|i| !v.contains(i)));
        assert_eq!(split_train_val(399, 0.2, 7).unwrap(), (t, v));
        let (t0, v0) = split_train_val(10, 0.0, 1).unwrap();
        assert_eq!((t0.len(), v0.len()), (10, 0));
        assert_eq!(split_train_val(10, 0.01, 1).unwrap().1.len(), 1);
        assert!(matches!(split_train_val(1, 0.2, 1), Err(Error::InsufficientData(_))));
        assert!(split_train_val(10, 1.0, 1).is_err());
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = MlpParams::init(&[2, 4, 2], Activation::Tanh, &mut rng).unwrap();
        let before = p.clone();
        let mut st = AdamState::new(&p);
        st.step(&mut p, &before.zeros_like(), 1e-2).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn adam_first_step_closed_form() {
        // m̂ = g and v̂ = g² after one step, so Δ = −lr·g/(|g| + ε).
        let mut p = MlpParams::zeros(&[1, 1], Activation::Tanh).unwrap();
        let mut g = p.zeros_like();
        g.weights[0][0] = 3.0;
        g.biases[0][0] = -1e-9;
        let mut st = AdamState::new(&p);
        st.step(&mut p, &g, 0.01).unwrap();
        let expect_w = -0.01 * 3.0 / (3.0 + ADAM_EPS);
        let expect_b = 0.01 * 1e-9 / (1e-9 + ADAM_EPS);
        assert!((p.weights[0][0] - expect_w).abs() < 1e-15);
        assert!((p.biases[0][0] - expect_b).abs() < 1e-15);
        assert!((p.weights[0][0] + 0.01).abs() < 1e-10);

        let mut bad = g.clone();
        bad.weights[0][0] = f64::NAN;
        assert!(matches!(st.step(&mut p, &bad, 0.01), Err(Error::TrainingDiverged { .. })));
    }

    #[test]
    fn uniform_sampling() {
        let bounds = [(-3.0, 3.0), (-5.0, 5.0)];
        let d = sample_uniform_phase_space(&bounds, 399, 3, vdp_fn).unwrap();
        assert_eq!(d.len(), 399);
        for i in 0..d.len() {
            let x = d.feature(i);
            assert!((-3.0..3.0).contains(&x[0]) && (-5.0..5.0).contains(&x[1]));
            assert_eq!(d.target(i), vdp_fn(x).unwrap().as_slice());
        }
        assert_eq!(d, sample_uniform_phase_space(&bounds, 399, 3, vdp_fn).unwrap());
        assert!(sample_uniform_phase_space(&[(1.0, 1.0)], 5, 0, |x| Ok(x.to_vec())).is_err());
    }

    #[test]
    fn multi_trajectory_assembly() {
        let a = generate_trajectory(vdp_fn, &[1.0, 0.0], 0.1, 20, "vdp").unwrap();
        let b = generate_trajectory(vdp_fn, &[-1.0, 2.0], 0.1, 30, "vdp").unwrap();
        let d = assemble_multi_trajectory(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(d.len(), 20 + 30);
        // Row 20 is the first pair of b, not (a.last → b.first).
        assert_eq!(d.feature(20), b.state(0));
        assert_eq!(assemble_multi_trajectory(&[a.clone()]).unwrap(), Dataset::from_trajectory(&a).unwrap());
        let twice = assemble_multi_trajectory(&[a.clone(), a.clone()]).unwrap();
        assert_eq!(&twice.features[..40], &twice.features[40..]);
        let c = generate_trajectory(vdp_fn, &[1.0, 0.0], 0.05, 20, "vdp").unwrap();
        assert!(matches!(assemble_multi_trajectory(&[a, c]), Err(Error::Config(_))));
    }

    fn teacher_dataset(n: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let teacher = MlpParams::init(&[2, 8, 2], Activation::Tanh, &mut rng).unwrap();
        let features: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let targets = features
            .chunks(2)
            .flat_map(|x| teacher.forward(x).unwrap())
            .collect();
        Dataset::new(features, targets, 2).unwrap()
    }

    #[test]
    fn patience_zero_stops_one_epoch_after_last_improvement() {
        let data = teacher_dataset(64);
        let mut cfg = TrainConfig::new(&[2, 8, 2], Activation::Tanh);
        cfg.patience = 0;
        cfg.epochs = 5000;
        cfg.learning_rate = 0.05;
        let out = train(&data, &cfg).unwrap();
        assert_eq!(out.curve.epochs(), out.best_epoch + 1);
        let best_val = out.curve.val_loss[out.best_epoch - 1];
        assert!(out.curve.val_loss.iter().all(|&v| v >= best_val));
    }

    #[test]
    fn training_is_reproducible() {
        let data = teacher_dataset(80);
        let mut cfg = TrainConfig::new(&[2, 8, 2], Activation::Swish);
        cfg.epochs = 30;
        cfg.lambda = 1e-3;
        let a = train(&data, &cfg).unwrap();
        let b = train(&data, &cfg).unwrap();
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn config_mismatch_is_rejected() {
        let data = teacher_dataset(10);
        let cfg = TrainConfig::new(&[3, 8, 3], Activation::Tanh);
        assert!(matches!(train(&data, &cfg), Err(Error::Config(_))));
    }
}
