//! Closed-form testbeds and first-order trajectory generation.
//!
//! Every system here is expressed through its first-order target
//! `F_r(x) = (x⁺ − x) / Δt`, so the discrete map is `x⁺ = x + Δt·F_r(x)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Components above this magnitude are treated as a diverged run.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// Time-ordered snapshots stored row-major, `n_states × dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    states: Vec<f64>,
    dim: usize,
    dt: f64,
    system: String,
}

impl Trajectory {
    pub fn new(states: Vec<f64>, dim: usize, dt: f64, system: impl Into<String>) -> Result<Self> {
        let traj = Self::from_parts(states, dim, dt, system)?;
        if traj.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "a trajectory needs at least 2 snapshots, got {}",
                traj.len()
            )));
        }
        Ok(traj)
    }

    /// Like [`Trajectory::new`] but accepts a single snapshot, for partial
    /// results of diverged runs.
    pub(crate) fn from_parts(
        states: Vec<f64>,
        dim: usize,
        dt: f64,
        system: impl Into<String>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Shape("state dimension must be at least 1".into()));
        }
        if states.len() % dim != 0 {
            return Err(Error::Shape(format!(
                "{} values do not form rows of width {dim}",
                states.len()
            )));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Parameter(format!("dt must be positive, got {dt}")));
        }
        if let Some(i) = states.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "non-finite value in snapshot {}",
                i / dim
            )));
        }
        Ok(Self {
            states,
            dim,
            dt,
            system: system.into(),
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], dt: f64, system: impl Into<String>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Shape("ragged snapshot rows".into()));
        }
        Self::new(rows.concat(), dim, dt, system)
    }

    pub fn len(&self) -> usize {
        self.states.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn system(&self) -> &str {
        &self.system
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn last(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.states.chunks_exact(self.dim)
    }

    /// Snapshots `[start, end)` as a new trajectory with the same Δt.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.len() {
            return Err(Error::Parameter(format!(
                "invalid snapshot range {start}..{end} for length {}",
                self.len()
            )));
        }
        Self::new(
            self.states[start * self.dim..end * self.dim].to_vec(),
            self.dim,
            self.dt,
            self.system.clone(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    /// `(x^{k+1} − x^k) / Δt`, one fewer row than the trajectory.
    FiniteDifference,
    /// Right-hand side evaluated at every snapshot.
    Analytic,
}

/// Learning targets aligned with the leading snapshots of a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSeries {
    pub targets: Vec<f64>,
    pub dim: usize,
    pub kind: TargetKind,
}

impl TargetSeries {
    pub fn len(&self) -> usize {
        self.targets.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.targets[k * self.dim..(k + 1) * self.dim]
    }
}

fn check_state(x: &[f64], dim: usize) -> Result<()> {
    if x.len() != dim {
        return Err(Error::Shape(format!(
            "expected a state of length {dim}, got {}",
            x.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("non-finite state {x:?}")));
    }
    Ok(())
}

/// First-order target of the forward-Euler Van der Pol map.
pub fn vdp_target(x: &[f64], mu: f64) -> Result<[f64; 2]> {
    check_state(x, 2)?;
    if !mu.is_finite() {
        return Err(Error::Domain(format!("non-finite mu {mu}")));
    }
    let (x1, x2) = (x[0], x[1]);
    Ok([x2, mu * (1.0 - x1 * x1) * x2 - x1])
}

/// Non-rational, non-polynomial oscillator.
pub fn yg_target(x: &[f64]) -> Result<[f64; 2]> {
    check_state(x, 2)?;
    let (x1, x2) = (x[0], x[1]);
    let g = x1 * x2 / (1.0 + (x2 / 0.52).powi(4));
    Ok([
        2.5 - 100.0 * g,
        -200.0 * g + 9.2 - 2.3 * x2 - 1.28 * x2.abs().powf(1.5),
    ])
}

/// Coefficients of the three-state mean-field (shift-mode) wake model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeanFieldParams {
    pub growth: f64,
    pub frequency: f64,
    pub coupling: f64,
    pub relaxation: f64,
}

impl Default for MeanFieldParams {
    fn default() -> Self {
        Self {
            growth: 0.1,
            frequency: 1.0,
            coupling: -0.1,
            relaxation: 10.0,
        }
    }
}

/// Two oscillating modes plus a shift mode slaved to their energy; the
/// attractor is a limit cycle of radius `sqrt(-growth / coupling)`.
pub fn mean_field_target(x: &[f64], p: &MeanFieldParams) -> Result<[f64; 3]> {
    check_state(x, 3)?;
    let (a, b, z) = (x[0], x[1], x[2]);
    Ok([
        p.growth * a - p.frequency * b + p.coupling * a * z,
        p.frequency * a + p.growth * b + p.coupling * b * z,
        -p.relaxation * (z - a * a - b * b),
    ])
}

/// The closed-form testbeds behind one type, for the CLI and FFI.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum System {
    Vdp { mu: f64 },
    Yg,
    MeanField(MeanFieldParams),
}

impl System {
    pub fn dim(&self) -> usize {
        match self {
            System::Vdp { .. } | System::Yg => 2,
            System::MeanField(_) => 3,
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            System::Vdp { .. } => "vdp",
            System::Yg => "yg",
            System::MeanField(_) => "mean_field",
        }
    }

    pub fn target(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(match self {
            System::Vdp { mu } => vdp_target(x, *mu)?.to_vec(),
            System::Yg => yg_target(x)?.to_vec(),
            System::MeanField(p) => mean_field_target(x, p)?.to_vec(),
        })
    }
}

/// Iterates `x^{k+1} = x^k + dt·target(x^k)` for `n` steps, returning
/// `n + 1` snapshots including `x0`.
pub fn generate_trajectory<F>(
    target: F,
    x0: &[f64],
    dt: f64,
    n: usize,
    system: &str,
) -> Result<Trajectory>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if n == 0 {
        return Err(Error::Parameter("step count must be at least 1".into()));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Parameter(format!("dt must be positive, got {dt}")));
    }
    let dim = x0.len();
    check_state(x0, dim.max(1))?;

    let mut states = Vec::with_capacity((n + 1) * dim);
    states.extend_from_slice(x0);
    let mut x = x0.to_vec();
    for step in 1..=n {
        let y = target(&x)?;
        if y.len() != dim {
            return Err(Error::Shape(format!(
                "target returned length {} for state of length {dim}",
                y.len()
            )));
        }
        for (xi, yi) in x.iter_mut().zip(&y) {
            *xi += dt * yi;
        }
        if x.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT) {
            let partial = Trajectory::from_parts(states, dim, dt, system).ok();
            return Err(Error::Divergence {
                step,
                partial: partial.map(Box::new),
            });
        }
        states.extend_from_slice(&x);
    }
    Trajectory::new(states, dim, dt, system)
}

/// Forward-difference targets `y^k = (x^{k+1} − x^k)/Δt`, `k = 0..N−2`.
pub fn targets_from_trajectory(traj: &Trajectory) -> Result<TargetSeries> {
    if traj.len() < 2 {
        return Err(Error::InsufficientData(
            "finite-difference targets need at least 2 snapshots".into(),
        ));
    }
    let dim = traj.dim();
    let dt = traj.dt();
    let mut targets = Vec::with_capacity((traj.len() - 1) * dim);
    for k in 0..traj.len() - 1 {
        let (a, b) = (traj.state(k), traj.state(k + 1));
        targets.extend(a.iter().zip(b).map(|(xa, xb)| (xb - xa) / dt));
    }
    Ok(TargetSeries {
        targets,
        dim,
        kind: TargetKind::FiniteDifference,
    })
}

/// Exact right-hand side at every snapshot.
pub fn analytic_targets<F>(traj: &Trajectory, target: F) -> Result<TargetSeries>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let mut targets = Vec::with_capacity(traj.states().len());
    for x in traj.rows() {
        targets.extend(target(x)?);
    }
    Ok(TargetSeries {
        targets,
        dim: traj.dim(),
        kind: TargetKind::Analytic,
    })
}
