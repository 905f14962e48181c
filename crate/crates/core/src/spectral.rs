//! Periodic 1-D viscous Burgers DNS and DCT reduction.
//!
//! `u_t + u u_x = ν u_xx` on `[0, 2π)` with Fourier-collocation derivatives
//! and SSP-RK3 time stepping.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::systems::{Trajectory, DIVERGENCE_LIMIT};

/// Random-phase initial condition parameters. Phases `β_k`, `k = 1..=k_c`,
/// are drawn in order from a ChaCha8 stream seeded with `seed`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumConfig {
    pub k_c: usize,
    pub amplitude: f64,
    pub seed: u64,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        Self {
            k_c: 2,
            amplitude: 25.0,
            seed: 0,
        }
    }
}

/// Prescribed energy spectrum: flat `5^{-5/3}` up to `k = 5`, then `k^{-5/3}`.
pub fn energy_spectrum(k: usize) -> f64 {
    if k <= 5 {
        5f64.powf(-5.0 / 3.0)
    } else {
        (k as f64).powf(-5.0 / 3.0)
    }
}

pub fn check_grid(n: usize) -> Result<()> {
    if n < 8 || !n.is_power_of_two() {
        return Err(Error::Parameter(format!(
            "grid size must be a power of two of at least 8, got {n}"
        )));
    }
    Ok(())
}

/// Uniform nodes `x_j = 2πj/n`.
pub fn grid(n: usize) -> Vec<f64> {
    (0..n).map(|j| 2.0 * PI * j as f64 / n as f64).collect()
}

pub fn spectrum_phases(cfg: &SpectrumConfig) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.k_c).map(|_| rng.gen_range(-PI..=PI)).collect()
}

/// `u(x) = Σ_k (1/π)√(2A·E(k)) sin(kx + β_k)` with explicit phases.
pub fn spectrum_field(amplitude: f64, phases: &[f64], n: usize) -> Result<Vec<f64>> {
    check_grid(n)?;
    if phases.is_empty() {
        return Err(Error::Parameter("k_c must be at least 1".into()));
    }
    if 2 * phases.len() >= n {
        return Err(Error::Parameter(format!(
            "k_c = {} aliases on a grid of {n} points",
            phases.len()
        )));
    }
    if !(amplitude > 0.0 && amplitude.is_finite()) {
        return Err(Error::Parameter(format!("amplitude must be positive, got {amplitude}")));
    }
    let xs = grid(n);
    let mut u = vec![0.0; n];
    for (i, &beta) in phases.iter().enumerate() {
        let k = i + 1;
        let c = (2.0 * amplitude * energy_spectrum(k)).sqrt() / PI;
        for (uj, &x) in u.iter_mut().zip(&xs) {
            *uj += c * (k as f64 * x + beta).sin();
        }
    }
    Ok(u)
}

pub fn spectrum_ic(cfg: &SpectrumConfig, n: usize) -> Result<Vec<f64>> {
    if cfg.k_c == 0 {
        return Err(Error::Parameter("k_c must be at least 1".into()));
    }
    spectrum_field(cfg.amplitude, &spectrum_phases(cfg), n)
}

/// Reusable FFT plans and buffers for one grid size.
pub struct BurgersSolver {
    n: usize,
    nu: f64,
    dealias: bool,
    advection: bool,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    spec: Vec<Complex<f64>>,
    work: Vec<Complex<f64>>,
    scratch: Vec<Complex<f64>>,
}

impl BurgersSolver {
    pub fn new(n: usize, nu: f64, dealias: bool) -> Result<Self> {
        check_grid(n)?;
        if !(nu >= 0.0 && nu.is_finite()) {
            return Err(Error::Parameter(format!("viscosity must be non-negative, got {nu}")));
        }
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let scratch_len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        Ok(Self {
            n,
            nu,
            dealias,
            advection: true,
            forward,
            inverse,
            spec: vec![Complex::default(); n],
            work: vec![Complex::default(); n],
            scratch: vec![Complex::default(); scratch_len],
        })
    }

    /// Drops the nonlinear term, leaving the heat equation.
    pub fn without_advection(mut self) -> Self {
        self.advection = false;
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    fn wavenumber(&self, j: usize) -> f64 {
        if j <= self.n / 2 {
            j as f64
        } else {
            j as f64 - self.n as f64
        }
    }

    /// `−u u_x + ν u_xx` at the nodes.
    pub fn rhs(&mut self, u: &[f64], out: &mut [f64]) -> Result<()> {
        let n = self.n;
        if u.len() != n || out.len() != n {
            return Err(Error::Shape(format!("field length must be {n}")));
        }
        for (s, &v) in self.spec.iter_mut().zip(u) {
            *s = Complex::new(v, 0.0);
        }
        self.forward.process_with_scratch(&mut self.spec, &mut self.scratch);
        let scale = 1.0 / n as f64;
        let cutoff = if self.dealias { n as f64 / 3.0 } else { f64::INFINITY };

        // u_x
        for j in 0..n {
            let k = self.wavenumber(j);
            let keep = j != n / 2 && k.abs() < cutoff;
            self.work[j] = if keep {
                self.spec[j] * Complex::new(0.0, k * scale)
            } else {
                Complex::default()
            };
        }
        self.inverse.process_with_scratch(&mut self.work, &mut self.scratch);
        let dealiased_u: Option<Vec<f64>> = if self.dealias {
            let mut w: Vec<Complex<f64>> = (0..n)
                .map(|j| {
                    if self.wavenumber(j).abs() < cutoff {
                        self.spec[j] * scale
                    } else {
                        Complex::default()
                    }
                })
                .collect();
            self.inverse.process_with_scratch(&mut w, &mut self.scratch);
            Some(w.iter().map(|c| c.re).collect())
        } else {
            None
        };
        let uu = dealiased_u.as_deref().unwrap_or(u);
        for j in 0..n {
            out[j] = if self.advection { -uu[j] * self.work[j].re } else { 0.0 };
        }

        if self.nu > 0.0 {
            for j in 0..n {
                let k = self.wavenumber(j);
                self.work[j] = self.spec[j] * (-k * k * scale);
            }
            self.inverse.process_with_scratch(&mut self.work, &mut self.scratch);
            for j in 0..n {
                out[j] += self.nu * self.work[j].re;
            }
        }
        Ok(())
    }

    /// One Shu–Osher SSP-RK3 step.
    pub fn step(&mut self, u: &[f64], dt: f64) -> Result<Vec<f64>> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Parameter(format!("dt must be positive, got {dt}")));
        }
        let n = self.n;
        let mut l = vec![0.0; n];
        self.rhs(u, &mut l)?;
        let u1: Vec<f64> = (0..n).map(|j| u[j] + dt * l[j]).collect();
        self.rhs(&u1, &mut l)?;
        let u2: Vec<f64> = (0..n)
            .map(|j| 0.75 * u[j] + 0.25 * (u1[j] + dt * l[j]))
            .collect();
        self.rhs(&u2, &mut l)?;
        Ok((0..n)
            .map(|j| u[j] / 3.0 + 2.0 / 3.0 * (u2[j] + dt * l[j]))
            .collect())
    }
}

pub fn burgers_rhs(u: &[f64], nu: f64) -> Result<Vec<f64>> {
    let mut solver = BurgersSolver::new(u.len(), nu, false)?;
    let mut out = vec![0.0; u.len()];
    solver.rhs(u, &mut out)?;
    Ok(out)
}

pub fn ssp_rk3_step(u: &[f64], dt: f64, nu: f64) -> Result<Vec<f64>> {
    BurgersSolver::new(u.len(), nu, false)?.step(u, dt)
}

/// `Σ u² Δx` on the periodic grid.
pub fn kinetic_energy(u: &[f64]) -> f64 {
    u.iter().map(|v| v * v).sum::<f64>() * 2.0 * PI / u.len() as f64
}

/// `Σ u Δx`.
pub fn integral(u: &[f64]) -> f64 {
    u.iter().sum::<f64>() * 2.0 * PI / u.len() as f64
}

/// `cos(2πm/(4n))` for `m = 0..4n`, indexed by `k(2j+1) mod 4n`.
fn dct_table(n: usize) -> Vec<f64> {
    (0..4 * n)
        .map(|m| (PI * m as f64 / (2.0 * n as f64)).cos())
        .collect()
}

fn dct_scale(k: usize, n: usize) -> f64 {
    if k == 0 {
        (1.0 / n as f64).sqrt()
    } else {
        (2.0 / n as f64).sqrt()
    }
}

/// Leading `n_modes` coefficients of the orthonormal DCT-II.
pub fn dct_reduce(u: &[f64], n_modes: usize) -> Result<Vec<f64>> {
    let n = u.len();
    if n_modes == 0 || n_modes > n {
        return Err(Error::Shape(format!("cannot keep {n_modes} modes of a length-{n} field")));
    }
    let table = dct_table(n);
    Ok((0..n_modes)
        .map(|k| {
            let s: f64 = u
                .iter()
                .enumerate()
                .map(|(j, &v)| v * table[(k * (2 * j + 1)) % (4 * n)])
                .sum();
            dct_scale(k, n) * s
        })
        .collect())
}

/// Zero-pads `a` to `n` coefficients and applies the inverse transform.
pub fn dct_expand(a: &[f64], n: usize) -> Result<Vec<f64>> {
    if a.is_empty() || a.len() > n {
        return Err(Error::Shape(format!("cannot expand {} modes onto {n} points", a.len())));
    }
    let table = dct_table(n);
    Ok((0..n)
        .map(|j| {
            a.iter()
                .enumerate()
                .map(|(k, &c)| dct_scale(k, n) * c * table[(k * (2 * j + 1)) % (4 * n)])
                .sum()
        })
        .collect())
}

/// Fraction of `Σ u²` carried by the leading `n_modes` DCT coefficients.
pub fn dct_energy_fraction(u: &[f64], n_modes: usize) -> Result<f64> {
    let a = dct_reduce(u, n_modes)?;
    let total: f64 = u.iter().map(|v| v * v).sum();
    if total == 0.0 {
        return Err(Error::Domain("zero field has no energy".into()));
    }
    Ok(a.iter().map(|v| v * v).sum::<f64>() / total)
}

/// Extent of the SSP-RK3 stability region along the negative real axis.
pub const RK3_DIFFUSIVE_LIMIT: f64 = 2.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BurgersConfig {
    pub n_grid: usize,
    pub nu: f64,
    pub dt: f64,
    pub t_end: f64,
    pub snapshots: usize,
    pub n_modes: usize,
    pub dealias: bool,
    pub spectrum: SpectrumConfig,
}

impl Default for BurgersConfig {
    fn default() -> Self {
        Self {
            n_grid: 2048,
            nu: 0.01,
            dt: 2e-4,
            t_end: 20.0,
            snapshots: 1000,
            n_modes: 4,
            dealias: false,
            spectrum: SpectrumConfig::default(),
        }
    }
}

impl BurgersConfig {
    pub fn validate(&self) -> Result<()> {
        check_grid(self.n_grid)?;
        if self.snapshots < 2 {
            return Err(Error::Parameter("need at least 2 snapshots".into()));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::Parameter("t_end must be positive".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Parameter("dt must be positive".into()));
        }
        let kmax = (self.n_grid / 2) as f64;
        if self.nu * kmax * kmax * self.dt > RK3_DIFFUSIVE_LIMIT {
            return Err(Error::Parameter(format!(
                "dt = {} exceeds the explicit diffusive limit {:.3e} for n_grid = {} and nu = {}",
                self.dt,
                RK3_DIFFUSIVE_LIMIT / (self.nu * kmax * kmax),
                self.n_grid,
                self.nu
            )));
        }
        if self.n_modes == 0 || self.n_modes > self.n_grid {
            return Err(Error::Parameter(format!("n_modes must be in 1..={}", self.n_grid)));
        }
        if self.spectrum.k_c == 0 || 2 * self.spectrum.k_c >= self.n_grid {
            return Err(Error::Parameter(format!("k_c = {} is out of range", self.spectrum.k_c)));
        }
        Ok(())
    }

    /// Snapshot spacing; snapshots cover `[0, t_end]` inclusive.
    pub fn snapshot_dt(&self) -> f64 {
        self.t_end / (self.snapshots - 1) as f64
    }
}

/// One DNS run recorded at the snapshot times.
#[derive(Debug, Clone)]
pub struct BurgersRun {
    pub seed: u64,
    pub reduced: Trajectory,
    pub energy: Vec<f64>,
    pub retained_fraction: Vec<f64>,
    pub integral: Vec<f64>,
    /// Row-major `snapshots × n_grid` when requested.
    pub fields: Option<Vec<f64>>,
}

impl BurgersRun {
    pub fn mean_retained_fraction(&self) -> f64 {
        self.retained_fraction.iter().sum::<f64>() / self.retained_fraction.len() as f64
    }
}

/// Runs a single DNS from the spectrum initial condition of `cfg.spectrum`.
/// Between snapshots the step is shortened so that every snapshot lands
/// exactly on its time. A blow-up reports the global DNS step.
pub fn run_burgers(cfg: &BurgersConfig, keep_fields: bool) -> Result<BurgersRun> {
    cfg.validate()?;
    let mut solver = BurgersSolver::new(cfg.n_grid, cfg.nu, cfg.dealias)?;
    let mut u = spectrum_ic(&cfg.spectrum, cfg.n_grid)?;
    let interval = cfg.snapshot_dt();
    let substeps = (interval / cfg.dt - 1e-9).ceil().max(1.0) as usize;
    let h = interval / substeps as f64;

    let mut reduced = Vec::with_capacity(cfg.snapshots * cfg.n_modes);
    let mut energy = Vec::with_capacity(cfg.snapshots);
    let mut fraction = Vec::with_capacity(cfg.snapshots);
    let mut integrals = Vec::with_capacity(cfg.snapshots);
    let mut fields = keep_fields.then(|| Vec::with_capacity(cfg.snapshots * cfg.n_grid));
    let mut step = 0;
    for s in 0..cfg.snapshots {
        if s > 0 {
            for _ in 0..substeps {
                u = solver.step(&u, h)?;
                step += 1;
                if u.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT) {
                    return Err(Error::Divergence { step, partial: None });
                }
            }
        }
        let a = dct_reduce(&u, cfg.n_modes)?;
        let total: f64 = u.iter().map(|v| v * v).sum();
        fraction.push(if total > 0.0 {
            a.iter().map(|v| v * v).sum::<f64>() / total
        } else {
            1.0
        });
        energy.push(kinetic_energy(&u));
        integrals.push(integral(&u));
        reduced.extend(a);
        if let Some(f) = fields.as_mut() {
            f.extend_from_slice(&u);
        }
    }
    Ok(BurgersRun {
        seed: cfg.spectrum.seed,
        reduced: Trajectory::new(reduced, cfg.n_modes, interval, "burgers")?,
        energy,
        retained_fraction: fraction,
        integral: integrals,
        fields,
    })
}

/// `n_traj` independent runs with seeds `base, base+1, …`, in parallel.
pub fn generate_burgers_ensemble(
    cfg: &BurgersConfig,
    n_traj: usize,
    keep_fields: bool,
) -> Result<Vec<BurgersRun>> {
    if n_traj == 0 {
        return Err(Error::Parameter("need at least one trajectory".into()));
    }
    cfg.validate()?;
    crate::with_thread_limit(|| {
        (0..n_traj)
            .into_par_iter()
            .map(|i| {
                let mut c = cfg.clone();
                c.spectrum.seed = cfg.spectrum.seed.wrapping_add(i as u64);
                run_burgers(&c, keep_fields).map_err(|e| match e {
                    Error::Divergence { step, .. } => Error::EnsembleDivergence { trajectory: i, step },
                    other => other,
                })
            })
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sin_field(n: usize, k: f64) -> Vec<f64> {
        grid(n).iter().map(|x| (k * x).sin()).collect()
    }

    fn max_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn rhs_analytic_cases() {
        let n = 64;
        let xs = grid(n);
        let r = burgers_rhs(&sin_field(n, 1.0), 0.01).unwrap();
        let want: Vec<f64> = xs.iter().map(|x| -0.5 * (2.0 * x).sin() - 0.01 * x.sin()).collect();
        assert!(max_diff(&r, &want) < 1e-10);

        let c = burgers_rhs(&vec![1.7; n], 0.3).unwrap();
        assert!(c.iter().all(|v| v.abs() < 1e-12));

        let cosu: Vec<f64> = xs.iter().map(|x| x.cos()).collect();
        let r = burgers_rhs(&cosu, 0.0).unwrap();
        let want: Vec<f64> = xs.iter().map(|x| 0.5 * (2.0 * x).sin()).collect();
        assert!(max_diff(&r, &want) < 1e-10);
    }

    #[test]
    fn spectral_derivative_is_exact() {
        let n = 32;
        let mut solver = BurgersSolver::new(n, 1.0, false).unwrap().without_advection();
        for k in 1..16 {
            let u = sin_field(n, k as f64);
            let mut out = vec![0.0; n];
            solver.rhs(&u, &mut out).unwrap();
            let want: Vec<f64> = u.iter().map(|v| -(k * k) as f64 * v).collect();
            assert!(max_diff(&out, &want) < 1e-10 * (k * k) as f64);
        }
    }

    fn diffusion_error(dt: f64) -> f64 {
        let n = 16;
        let nu = 1.0;
        let mut solver = BurgersSolver::new(n, nu, false).unwrap().without_advection();
        let u = sin_field(n, 1.0);
        let next = solver.step(&u, dt).unwrap();
        let exact: Vec<f64> = u.iter().map(|v| v * (-nu * dt).exp()).collect();
        max_diff(&next, &exact)
    }

    #[test]
    fn ssp_rk3_temporal_order() {
        let dts = [1e-2, 5e-3, 2.5e-3];
        let errs: Vec<f64> = dts.iter().map(|&dt| diffusion_error(dt)).collect();
        for (&dt, &e) in dts.iter().zip(&errs) {
            assert!(e < 1e-3 * dt.powi(3), "dt {dt}: {e}");
        }
        let slope = (errs[0] / errs[2]).ln() / (dts[0] / dts[2]).ln();
        assert!(slope >= 2.9, "observed order {slope}");
    }

    #[test]
    fn step_is_consistent() {
        let n = 64;
        let u = spectrum_ic(&SpectrumConfig::default(), n).unwrap();
        let r = burgers_rhs(&u, 0.01).unwrap();
        let defect = |dt: f64| {
            let s = ssp_rk3_step(&u, dt, 0.01).unwrap();
            (0..n).map(|j| (s[j] - u[j] - dt * r[j]).abs()).fold(0.0, f64::max)
        };
        let ratio = defect(1e-3) / defect(5e-4);
        assert!((3.5..4.5).contains(&ratio), "{ratio}");
    }

    #[test]
    fn initial_condition_amplitudes() {
        let n = 64;
        let c = (50.0 * 5f64.powf(-5.0 / 3.0)).sqrt() / PI;
        let u = spectrum_field(25.0, &[0.0], n).unwrap();
        let want: Vec<f64> = sin_field(n, 1.0).iter().map(|v| c * v).collect();
        assert!(max_diff(&u, &want) < 1e-14);
        assert_eq!(energy_spectrum(1), energy_spectrum(2));

        let cfg = SpectrumConfig { k_c: 2, amplitude: 25.0, seed: 9 };
        assert_eq!(spectrum_ic(&cfg, n).unwrap(), spectrum_ic(&cfg, n).unwrap());
        assert!(spectrum_ic(&SpectrumConfig { k_c: 32, ..cfg }, n).is_err());
        assert!(spectrum_ic(&cfg, 48).is_err());
    }

    #[test]
    fn dct_properties() {
        let n = 64;
        let a = dct_reduce(&vec![2.0; n], 8).unwrap();
        assert!((a[0] - 2.0 * (n as f64).sqrt()).abs() < 1e-12);
        assert!(a[1..].iter().all(|v| v.abs() < 1e-12));

        let u = spectrum_ic(&SpectrumConfig::default(), n).unwrap();
        let back = dct_expand(&dct_reduce(&u, n).unwrap(), n).unwrap();
        assert!(max_diff(&u, &back) < 1e-12);
        assert!(dct_reduce(&u, 0).is_err());
        assert!(dct_reduce(&u, n + 1).is_err());
        let f = dct_energy_fraction(&u, n).unwrap();
        assert!((f - 1.0).abs() < 1e-12);
    }

    #[test]
    fn short_run_dissipates_and_conserves_mass() {
        let cfg = BurgersConfig {
            n_grid: 256,
            t_end: 2.0,
            snapshots: 21,
            ..Default::default()
        };
        let run = run_burgers(&cfg, true).unwrap();
        assert_eq!(run.reduced.len(), 21);
        assert!(run.energy.last().unwrap() < &run.energy[0]);
        let scale = run.energy[0].sqrt();
        for m in &run.integral {
            assert!((m - run.integral[0]).abs() <= 1e-8 * scale);
        }
        assert_eq!(run.fields.as_ref().unwrap().len(), 21 * 256);
    }

    #[test]
    fn ensemble_is_seed_ordered() {
        let cfg = BurgersConfig {
            n_grid: 64,
            t_end: 0.5,
            snapshots: 6,
            ..Default::default()
        };
        let runs = generate_burgers_ensemble(&cfg, 3, false).unwrap();
        assert_eq!(runs.len(), 3);
        let again = run_burgers(
            &BurgersConfig {
                spectrum: SpectrumConfig { seed: 2, ..cfg.spectrum },
                ..cfg.clone()
            },
            false,
        )
        .unwrap();
        assert_eq!(runs[2].reduced, again.reduced);
    }
}
