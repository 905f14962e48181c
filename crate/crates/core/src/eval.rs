//! A-priori and a-posteriori evaluation of learned dynamics.

use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::io;
use crate::net::{frobenius_sq, MlpModel};
use crate::systems::{System, Trajectory};

pub type Complex64 = nalgebra::Complex<f64>;

/// A learned or exact predictor `f: R^M → R^M` of the first-order target.
pub trait DynamicsModel: Send + Sync {
    fn dim(&self) -> usize;

    fn predict(&self, x: &[f64]) -> Result<Vec<f64>>;

    /// Row-major `∂f/∂x`. Defaults to central differences.
    fn jacobian(&self, x: &[f64]) -> Result<Vec<f64>> {
        fd_jacobian(|p| self.predict(p), x)
    }
}

/// Central-difference Jacobian with a per-component step `1e-6·max(1, |x_j|)`.
pub fn fd_jacobian<F>(f: F, x: &[f64]) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let m = x.len();
    let mut jac = vec![0.0; m * m];
    let mut xp = x.to_vec();
    for c in 0..m {
        let h = 1e-6 * x[c].abs().max(1.0);
        xp[c] = x[c] + h;
        let fp = f(&xp)?;
        xp[c] = x[c] - h;
        let fm = f(&xp)?;
        xp[c] = x[c];
        for r in 0..m {
            jac[r * m + c] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
    Ok(jac)
}

impl DynamicsModel for MlpModel {
    fn dim(&self) -> usize {
        MlpModel::dim(self)
    }

    fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        MlpModel::predict(self, x)
    }

    fn jacobian(&self, x: &[f64]) -> Result<Vec<f64>> {
        MlpModel::jacobian(self, x)
    }
}

impl DynamicsModel for System {
    fn dim(&self) -> usize {
        System::dim(self)
    }

    fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.target(x)
    }
}

/// Wraps a closure as a model, e.g. `f ≡ 0` baselines in tests.
pub struct FnModel<F> {
    pub dim: usize,
    pub f: F,
}

impl<F> DynamicsModel for FnModel<F>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        (self.f)(x)
    }
}

/// Per-step error norms and the per-component absolute errors behind them.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ErrorSeries {
    pub norm: Vec<f64>,
    /// Row-major `len × dim`.
    pub components: Vec<f64>,
    pub dim: usize,
}

impl ErrorSeries {
    fn push(&mut self, diff: impl Iterator<Item = f64>) {
        let start = self.components.len();
        self.components.extend(diff.map(f64::abs));
        let sq: f64 = self.components[start..].iter().map(|v| v * v).sum();
        self.norm.push(sq.sqrt());
    }

    pub fn len(&self) -> usize {
        self.norm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.norm.is_empty()
    }

    pub fn component(&self, i: usize) -> &[f64] {
        &self.components[i * self.dim..(i + 1) * self.dim]
    }

    pub fn mean(&self) -> f64 {
        self.norm.iter().sum::<f64>() / self.norm.len().max(1) as f64
    }

    pub fn max(&self) -> f64 {
        self.norm.iter().copied().fold(0.0, f64::max)
    }
}

/// `‖y^i − f(x^i)‖₂` with exact states `x^i` as inputs.
pub fn local_errors(model: &dyn DynamicsModel, features: &[f64], targets: &[f64]) -> Result<ErrorSeries> {
    let dim = model.dim();
    if features.len() != targets.len() || features.len() % dim != 0 {
        return Err(Error::Shape(format!(
            "{} feature values vs {} target values for dimension {dim}",
            features.len(),
            targets.len()
        )));
    }
    let mut out = ErrorSeries {
        dim,
        ..Default::default()
    };
    for (x, y) in features.chunks_exact(dim).zip(targets.chunks_exact(dim)) {
        let f = model.predict(x)?;
        out.push(y.iter().zip(&f).map(|(a, b)| a - b));
    }
    Ok(out)
}

/// Local errors of a trajectory against its forward-difference targets.
pub fn trajectory_local_errors(model: &dyn DynamicsModel, traj: &Trajectory) -> Result<ErrorSeries> {
    let t = crate::systems::targets_from_trajectory(traj)?;
    local_errors(model, &traj.states()[..t.targets.len()], &t.targets)
}

/// Iterates `x̂^{k+1} = x̂^k + dt·f(x̂^k)` for `n` steps from `x0`.
pub fn rollout(model: &dyn DynamicsModel, x0: &[f64], dt: f64, n: usize, tag: &str) -> Result<Trajectory> {
    if x0.len() != model.dim() {
        return Err(Error::Shape(format!(
            "initial state has length {} but the model is {}-dimensional",
            x0.len(),
            model.dim()
        )));
    }
    crate::systems::generate_trajectory(|x| model.predict(x), x0, dt, n, tag)
}

/// `‖x^i − x̂^i‖₂` between aligned trajectories.
pub fn global_errors(reference: &Trajectory, predicted: &Trajectory) -> Result<ErrorSeries> {
    if reference.len() != predicted.len() || reference.dim() != predicted.dim() {
        return Err(Error::Shape(format!(
            "reference is {}x{} but prediction is {}x{}",
            reference.len(),
            reference.dim(),
            predicted.len(),
            predicted.dim()
        )));
    }
    let mut out = ErrorSeries {
        dim: reference.dim(),
        ..Default::default()
    };
    for (a, b) in reference.rows().zip(predicted.rows()) {
        out.push(a.iter().zip(b).map(|(x, y)| x - y));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct R2 {
    pub mean: f64,
    /// `None` for constant components, which are excluded from `mean`.
    pub per_component: Vec<Option<f64>>,
    pub warnings: Vec<String>,
}

/// Uniformly averaged coefficient of determination over components.
pub fn r2_score(targets: &[f64], predictions: &[f64], dim: usize) -> Result<R2> {
    if dim == 0 || targets.len() != predictions.len() || targets.len() % dim != 0 {
        return Err(Error::Shape("targets and predictions must be aligned rows".into()));
    }
    let n = targets.len() / dim;
    if n < 2 {
        return Err(Error::InsufficientData("R² needs at least 2 samples".into()));
    }
    let mut per_component = Vec::with_capacity(dim);
    let mut warnings = Vec::new();
    for j in 0..dim {
        let col = || targets.iter().skip(j).step_by(dim);
        let mean = col().sum::<f64>() / n as f64;
        let ss_tot: f64 = col().map(|y| (y - mean).powi(2)).sum();
        let ss_res: f64 = col()
            .zip(predictions.iter().skip(j).step_by(dim))
            .map(|(y, p)| (y - p).powi(2))
            .sum();
        let floor = crate::train::STD_FLOOR * mean.abs().max(1.0);
        if ss_tot <= n as f64 * floor * floor {
            warnings.push(format!("component {} is constant; excluded from R²", j + 1));
            per_component.push(None);
        } else {
            per_component.push(Some(1.0 - ss_res / ss_tot));
        }
    }
    let valid: Vec<f64> = per_component.iter().flatten().copied().collect();
    if valid.is_empty() {
        return Err(Error::InsufficientData("every target component is constant".into()));
    }
    Ok(R2 {
        mean: valid.iter().sum::<f64>() / valid.len() as f64,
        per_component,
        warnings,
    })
}

/// One node of a stepwise-error grid: position, error, and unit direction
/// vectors of the true and predicted fields.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub x: [f64; 2],
    pub error: f64,
    pub truth_dir: [f64; 2],
    pub pred_dir: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepGrid {
    pub resolution: usize,
    pub points: Vec<GridPoint>,
}

impl StepGrid {
    pub fn mean_error(&self) -> f64 {
        self.points.iter().map(|p| p.error).sum::<f64>() / self.points.len() as f64
    }

    pub fn max_error(&self) -> f64 {
        self.points.iter().map(|p| p.error).fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> Result<String> {
        let header: Vec<String> = ["x1", "x2", "err", "tru_dx", "tru_dy", "prd_dx", "prd_dy"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let rows: Vec<[f64; 7]> = self
            .points
            .iter()
            .map(|p| {
                [
                    p.x[0],
                    p.x[1],
                    p.error,
                    p.truth_dir[0],
                    p.truth_dir[1],
                    p.pred_dir[0],
                    p.pred_dir[1],
                ]
            })
            .collect();
        io::csv_string(&header, rows.iter().map(|r| r.as_slice()))
    }
}

fn unit(v: &[f64]) -> [f64; 2] {
    let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
    if n > 0.0 {
        [v[0] / n, v[1] / n]
    } else {
        [0.0, 0.0]
    }
}

fn check_box(bounds: &[(f64, f64)]) -> Result<()> {
    for &(lo, hi) in bounds {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Parameter(format!("invalid interval [{lo}, {hi}]")));
        }
    }
    Ok(())
}

/// `‖F(x) − f(x)‖₂` on a uniform `resolution × resolution` grid over a 2-D box.
pub fn stepwise_error_grid(
    model: &dyn DynamicsModel,
    truth: &dyn DynamicsModel,
    bounds: [(f64, f64); 2],
    resolution: usize,
) -> Result<StepGrid> {
    if resolution < 2 {
        return Err(Error::Parameter("grid resolution must be at least 2".into()));
    }
    if model.dim() != 2 || truth.dim() != 2 {
        return Err(Error::Shape(
            "grid export needs 2-D dynamics; use stepwise_error_cloud".into(),
        ));
    }
    check_box(&bounds)?;
    let axis = |(lo, hi): (f64, f64), i: usize| lo + (hi - lo) * i as f64 / (resolution - 1) as f64;
    let mut points = Vec::with_capacity(resolution * resolution);
    for i in 0..resolution {
        for j in 0..resolution {
            let x = [axis(bounds[0], j), axis(bounds[1], i)];
            let ft = truth.predict(&x)?;
            let fp = model.predict(&x)?;
            let error = ft.iter().zip(&fp).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            points.push(GridPoint {
                x,
                error,
                truth_dir: unit(&ft),
                pred_dir: unit(&fp),
            });
        }
    }
    Ok(StepGrid { resolution, points })
}

/// Stepwise error at `n` seeded uniform points of an arbitrary-dimension box.
/// Returns the sampled points (row-major) and their errors.
pub fn stepwise_error_cloud(
    model: &dyn DynamicsModel,
    truth: &dyn DynamicsModel,
    bounds: &[(f64, f64)],
    n: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if bounds.len() != model.dim() || truth.dim() != model.dim() {
        return Err(Error::Shape("box, model and truth dimensions differ".into()));
    }
    check_box(bounds)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = Vec::with_capacity(n * bounds.len());
    let mut errs = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = bounds.iter().map(|&(lo, hi)| rng.gen_range(lo..hi)).collect();
        let (ft, fp) = (truth.predict(&x)?, model.predict(&x)?);
        errs.push(ft.iter().zip(&fp).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt());
        xs.extend(x);
    }
    Ok((xs, errs))
}

/// Jacobian norms and spectra at a sequence of points.
#[derive(Debug, Clone, Default)]
pub struct JacobianDiagnostics {
    pub max_singular_value: Vec<f64>,
    pub frobenius: Vec<f64>,
    /// Eigenvalues per point, sorted by descending real part.
    pub eigenvalues: Vec<Vec<Complex64>>,
    pub dt: f64,
    pub warnings: Vec<String>,
}

impl JacobianDiagnostics {
    pub fn scaled_eigenvalues(&self) -> Vec<Vec<Complex64>> {
        self.eigenvalues
            .iter()
            .map(|ev| ev.iter().map(|z| z * self.dt).collect())
            .collect()
    }

    pub fn max_real_part(&self) -> Vec<f64> {
        self.eigenvalues
            .iter()
            .map(|ev| ev.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max))
            .collect()
    }

    pub fn max_imag_part(&self) -> Vec<f64> {
        self.eigenvalues
            .iter()
            .map(|ev| ev.iter().map(|z| z.im).fold(f64::NEG_INFINITY, f64::max))
            .collect()
    }

    /// Rows `step, re, im, re·dt, im·dt` for every eigenvalue.
    pub fn eig_csv(&self) -> Result<String> {
        let header: Vec<String> = ["step", "re", "im", "re_scaled", "im_scaled"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let rows: Vec<[f64; 5]> = self
            .eigenvalues
            .iter()
            .enumerate()
            .flat_map(|(k, ev)| {
                ev.iter()
                    .map(move |z| [k as f64, z.re, z.im, z.re * self.dt, z.im * self.dt])
            })
            .collect();
        io::csv_string(&header, rows.iter().map(|r| r.as_slice()))
    }
}

/// Largest singular value, Frobenius norm and eigenvalues of a square
/// row-major matrix.
pub fn spectrum(jac: &[f64], m: usize) -> (f64, f64, Vec<Complex64>) {
    let mat = DMatrix::from_row_slice(m, m, jac);
    let sv = mat.singular_values().iter().copied().fold(0.0, f64::max);
    let mut eig: Vec<Complex64> = mat.complex_eigenvalues().iter().copied().collect();
    eig.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
    (sv, frobenius_sq(jac).sqrt(), eig)
}

pub fn jacobian_diagnostics(model: &dyn DynamicsModel, points: &[f64], dt: f64) -> Result<JacobianDiagnostics> {
    let m = model.dim();
    if points.len() % m != 0 {
        return Err(Error::Shape("points are not whole rows".into()));
    }
    let mut out = JacobianDiagnostics {
        dt,
        ..Default::default()
    };
    for (k, x) in points.chunks_exact(m).enumerate() {
        let jac = model.jacobian(x)?;
        if jac.iter().any(|v| !v.is_finite()) {
            out.warnings.push(format!("non-finite Jacobian at point {k}"));
            out.max_singular_value.push(f64::NAN);
            out.frobenius.push(f64::NAN);
            out.eigenvalues.push(vec![Complex64::new(f64::NAN, f64::NAN); m]);
            continue;
        }
        let (sv, fro, eig) = spectrum(&jac, m);
        out.max_singular_value.push(sv);
        out.frobenius.push(fro);
        out.eigenvalues.push(eig);
    }
    Ok(out)
}

/// Points `z` with `|Σ_{k=0}^{order} z^k/k!| = 1`, i.e. the stability
/// boundary of an explicit Runge–Kutta scheme whose amplification factor is
/// the truncated exponential. For each of `n_angles` angles θ, every root of
/// `P(z) = e^{iθ}` is returned.
pub fn rk_stability_boundary(order: usize, n_angles: usize) -> Vec<Complex64> {
    let mut fact = 1.0;
    let mut coeffs = vec![Complex64::new(1.0, 0.0)];
    for k in 1..=order {
        fact *= k as f64;
        coeffs.push(Complex64::new(1.0 / fact, 0.0));
    }
    let mut out = Vec::with_capacity(order * n_angles);
    let mut guess: Option<Vec<Complex64>> = None;
    for a in 0..n_angles {
        let theta = 2.0 * std::f64::consts::PI * a as f64 / n_angles as f64;
        let mut c = coeffs.clone();
        c[0] -= Complex64::from_polar(1.0, theta);
        let roots = polynomial_roots(&c, guess.as_deref());
        out.extend_from_slice(&roots);
        guess = Some(roots);
    }
    out
}

/// Roots of `Σ c_k z^k` by Aberth–Ehrlich iteration.
pub fn polynomial_roots(coeffs: &[Complex64], start: Option<&[Complex64]>) -> Vec<Complex64> {
    let deg = coeffs.len() - 1;
    let lead = coeffs[deg];
    let monic: Vec<Complex64> = coeffs.iter().map(|c| c / lead).collect();
    let eval = |z: Complex64| {
        let mut p = Complex64::new(0.0, 0.0);
        let mut dp = Complex64::new(0.0, 0.0);
        for c in monic.iter().rev() {
            dp = dp * z + p;
            p = p * z + c;
        }
        (p, dp)
    };
    let radius = 1.0 + monic[..deg].iter().map(|c| c.norm()).fold(0.0, f64::max);
    let mut z: Vec<Complex64> = match start {
        Some(s) if s.len() == deg => s.to_vec(),
        _ => (0..deg)
            .map(|k| Complex64::from_polar(0.5 * radius, 0.4 + 2.0 * std::f64::consts::PI * k as f64 / deg as f64))
            .collect(),
    };
    for _ in 0..500 {
        let mut moved = 0.0f64;
        for i in 0..deg {
            let (p, dp) = eval(z[i]);
            if p.norm() == 0.0 {
                continue;
            }
            let ratio = p / dp;
            let repulsion: Complex64 = (0..deg)
                .filter(|&j| j != i)
                .map(|j| 1.0 / (z[i] - z[j]))
                .sum();
            let step = ratio / (1.0 - ratio * repulsion);
            z[i] -= step;
            moved = moved.max(step.norm());
        }
        if moved < 1e-15 * radius {
            break;
        }
    }
    z
}

/// Pearson correlation, `NaN` when either series is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    if n < 2 {
        return f64::NAN;
    }
    let (ma, mb) = (
        a[..n].iter().sum::<f64>() / n as f64,
        b[..n].iter().sum::<f64>() / n as f64,
    );
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a[..n].iter().zip(&b[..n]) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub mode: String,
    pub steps: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r2: Option<R2>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub local_error_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub local_error_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub global_error_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub global_error_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stepwise_error_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stepwise_error_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_singular_value_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_real_eig_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub local_error_sv_correlation: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diverged_at: Option<usize>,
    pub warnings: Vec<String>,
}

impl Summary {
    pub fn new(mode: &str) -> Self {
        Self {
            mode: mode.to_string(),
            steps: 0,
            r2: None,
            local_error_mean: None,
            local_error_max: None,
            global_error_mean: None,
            global_error_max: None,
            stepwise_error_mean: None,
            stepwise_error_max: None,
            max_singular_value_mean: None,
            max_real_eig_mean: None,
            local_error_sv_correlation: None,
            diverged_at: None,
            warnings: Vec::new(),
        }
    }
}

/// Everything an evaluation run can export. Absent parts are not written.
#[derive(Debug, Clone, Default)]
pub struct EvalReport {
    pub local: Option<ErrorSeries>,
    pub global: Option<ErrorSeries>,
    pub predicted: Option<Trajectory>,
    pub jacobian: Option<JacobianDiagnostics>,
    pub grid: Option<StepGrid>,
    pub stability_boundary: Option<Vec<Complex64>>,
}

fn series_csv(s: &ErrorSeries) -> Result<String> {
    let mut header = vec!["step".to_string(), "err".to_string()];
    header.extend((1..=s.dim).map(|j| format!("err_x{j}")));
    let rows: Vec<Vec<f64>> = (0..s.len())
        .map(|k| {
            let mut r = vec![k as f64, s.norm[k]];
            r.extend_from_slice(s.component(k));
            r
        })
        .collect();
    io::csv_string(&header, rows.iter().map(Vec::as_slice))
}

impl EvalReport {
    pub fn write_bundle(&self, dir: &Path, summary: &Summary) -> Result<()> {
        if let Some(s) = &self.local {
            io::write_atomic(&dir.join("local_error.csv"), series_csv(s)?.as_bytes())?;
        }
        if let Some(s) = &self.global {
            io::write_atomic(&dir.join("global_error.csv"), series_csv(s)?.as_bytes())?;
        }
        if let Some(t) = &self.predicted {
            io::write_trajectory(&dir.join("rollout.csv"), t)?;
        }
        if let Some(j) = &self.jacobian {
            io::write_atomic(&dir.join("eig.csv"), j.eig_csv()?.as_bytes())?;
            let header: Vec<String> = ["step", "max_sv", "frobenius"].iter().map(|s| s.to_string()).collect();
            let rows: Vec<[f64; 3]> = (0..j.max_singular_value.len())
                .map(|k| [k as f64, j.max_singular_value[k], j.frobenius[k]])
                .collect();
            let text = io::csv_string(&header, rows.iter().map(|r| r.as_slice()))?;
            io::write_atomic(&dir.join("singular_values.csv"), text.as_bytes())?;
        }
        if let Some(b) = &self.stability_boundary {
            let header = vec!["re".to_string(), "im".to_string()];
            let rows: Vec<[f64; 2]> = b.iter().map(|z| [z.re, z.im]).collect();
            let text = io::csv_string(&header, rows.iter().map(|r| r.as_slice()))?;
            io::write_atomic(&dir.join("stability_boundary.csv"), text.as_bytes())?;
        }
        if let Some(g) = &self.grid {
            io::write_atomic(&dir.join("stepgrid.csv"), g.to_csv()?.as_bytes())?;
        }
        io::write_json(&dir.join("summary.json"), summary)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{generate_trajectory, vdp_target};

    const VDP: System = System::Vdp { mu: 2.0 };

    fn zero_model(dim: usize) -> FnModel<impl Fn(&[f64]) -> Result<Vec<f64>> + Send + Sync> {
        FnModel {
            dim,
            f: move |_: &[f64]| Ok(vec![0.0; dim]),
        }
    }

    fn vdp_traj(n: usize) -> Trajectory {
        generate_trajectory(|x| VDP.target(x), &[1.0, -2.0], 0.1, n, "vdp").unwrap()
    }

    #[test]
    fn local_errors_exact_and_zero_models() {
        let traj = vdp_traj(100);
        let e = trajectory_local_errors(&VDP, &traj).unwrap();
        assert_eq!(e.len(), 100);
        assert!(e.norm.iter().all(|&v| v < 1e-12));

        let z = trajectory_local_errors(&zero_model(2), &traj).unwrap();
        for k in 0..z.len() {
            let y = vdp_target(traj.state(k), 2.0).unwrap();
            let norm = (y[0] * y[0] + y[1] * y[1]).sqrt();
            assert!((z.norm[k] - norm).abs() <= 1e-9 * norm.max(1.0));
            let c = z.component(k);
            assert!(z.norm[k] <= c[0] + c[1] + 1e-15);
            assert!(z.norm[k] >= c[0].max(c[1]));
        }
    }

    #[test]
    fn rollout_with_exact_model_reproduces_generation() {
        let truth = vdp_traj(599);
        let pred = rollout(&VDP, truth.state(0), 0.1, 599, "pred").unwrap();
        let g = global_errors(&truth, &pred).unwrap();
        assert_eq!(g.norm[0], 0.0);
        assert!(g.max() <= 1e-9);

        let still = rollout(&zero_model(2), &[0.3, 0.4], 0.1, 10, "z").unwrap();
        assert!(still.rows().all(|r| r == [0.3, 0.4]));

        let one = rollout(&VDP, &[1.0, 1.0], 0.1, 1, "one").unwrap();
        assert_eq!(one.len(), 2);
        assert!((one.state(1)[0] - 1.1).abs() < 1e-15);
    }

    #[test]
    fn global_error_length_mismatch() {
        let a = vdp_traj(10);
        let b = vdp_traj(11);
        assert!(matches!(global_errors(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn r2_identities() {
        let y = [1.0, 10.0, 2.0, 20.0, 4.0, 25.0, 3.0, 11.0];
        assert_eq!(r2_score(&y, &y, 2).unwrap().mean, 1.0);
        let m0 = (1.0 + 2.0 + 4.0 + 3.0) / 4.0;
        let m1 = (10.0 + 20.0 + 25.0 + 11.0) / 4.0;
        let mean_pred = [m0, m1, m0, m1, m0, m1, m0, m1];
        assert_eq!(r2_score(&y, &mean_pred, 2).unwrap().mean, 0.0);

        let p = [1.5, 9.0, 2.5, 21.0, 3.0, 24.0, 3.5, 12.0];
        let r = r2_score(&y, &p, 2).unwrap();
        let comps: Vec<f64> = r.per_component.iter().flatten().copied().collect();
        assert!((r.mean - (comps[0] + comps[1]) / 2.0).abs() < 1e-15);

        let shift = |v: &[f64]| -> Vec<f64> {
            v.iter().enumerate().map(|(i, x)| x + if i % 2 == 0 { 100.0 } else { -7.0 }).collect()
        };
        let shifted = r2_score(&shift(&y), &shift(&p), 2).unwrap();
        assert!((shifted.mean - r.mean).abs() < 1e-12);
    }

    #[test]
    fn r2_excludes_constant_component() {
        let y = [1.0, 5.0, 2.0, 5.0, 3.0, 5.0];
        let r = r2_score(&y, &y, 2).unwrap();
        assert_eq!(r.per_component[1], None);
        assert_eq!(r.warnings.len(), 1);
        assert_eq!(r.mean, 1.0);
        assert!(r2_score(&[1.0, 1.0], &[1.0, 1.0], 1).is_err());
    }

    #[test]
    fn stepwise_grid() {
        let g = stepwise_error_grid(&VDP, &VDP, [(-3.0, 3.0), (-5.0, 5.0)], 11).unwrap();
        assert_eq!(g.points.len(), 121);
        assert_eq!(g.max_error(), 0.0);
        let z = stepwise_error_grid(&zero_model(2), &VDP, [(-3.0, 3.0), (-5.0, 5.0)], 11).unwrap();
        for p in &z.points {
            let y = vdp_target(&p.x, 2.0).unwrap();
            assert!((p.error - (y[0] * y[0] + y[1] * y[1]).sqrt()).abs() < 1e-12);
        }
        assert!(stepwise_error_grid(&VDP, &VDP, [(-3.0, 3.0), (-5.0, 5.0)], 1).is_err());
        assert!(stepwise_error_grid(&VDP, &VDP, [(3.0, 3.0), (-5.0, 5.0)], 5).is_err());
    }

    #[test]
    fn diagonal_spectrum() {
        let (sv, fro, eig) = spectrum(&[3.0, 0.0, 0.0, -5.0], 2);
        assert!((sv - 5.0).abs() < 1e-12);
        assert!((fro - 34f64.sqrt()).abs() < 1e-12);
        assert!((eig[0].re - 3.0).abs() < 1e-12 && (eig[1].re + 5.0).abs() < 1e-12);
    }

    #[test]
    fn norm_ordering_on_vdp_jacobians() {
        let traj = vdp_traj(200);
        let d = jacobian_diagnostics(&VDP, traj.states(), 0.1).unwrap();
        for k in 0..traj.len() {
            let rho = d.eigenvalues[k].iter().map(|z| z.norm()).fold(0.0, f64::max);
            assert!(d.frobenius[k] >= d.max_singular_value[k] - 1e-12);
            assert!(d.max_singular_value[k] >= rho - 1e-9);
            let ev = &d.eigenvalues[k];
            if ev[0].im != 0.0 {
                assert!((ev[0].im + ev[1].im).abs() < 1e-10 && (ev[0].re - ev[1].re).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn stability_boundary_points_have_unit_amplification() {
        let pts = rk_stability_boundary(5, 720);
        assert_eq!(pts.len(), 5 * 720);
        for z in pts {
            let mut p = Complex64::new(0.0, 0.0);
            let mut term = Complex64::new(1.0, 0.0);
            for k in 0..=5 {
                if k > 0 {
                    term = term * z / k as f64;
                }
                p += term;
            }
            assert!((p.norm() - 1.0).abs() < 1e-9, "{z}: {}", p.norm());
        }
    }

    #[test]
    fn pearson_basics() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]) - 1.0).abs() < 1e-15);
        assert!(pearson(&[1.0, 1.0], &[1.0, 2.0]).is_nan());
    }
}
