//! Snapshot POD and ingestion of externally computed modal coefficients.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::systems::Trajectory;

/// `N × D` snapshots, row-major, with optional positive quadrature weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotMatrix {
    data: Vec<f64>,
    n: usize,
    d: usize,
    weights: Option<Vec<f64>>,
}

impl SnapshotMatrix {
    pub fn new(data: Vec<f64>, n: usize, d: usize, weights: Option<Vec<f64>>) -> Result<Self> {
        if n < 2 || d == 0 {
            return Err(Error::InsufficientData(format!(
                "need at least 2 snapshots of at least 1 value, got {n}x{d}"
            )));
        }
        if data.len() != n * d {
            return Err(Error::Shape(format!("{} values for a {n}x{d} matrix", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite snapshot value".into()));
        }
        if let Some(w) = &weights {
            if w.len() != d {
                return Err(Error::Shape(format!("{} weights for {d} degrees of freedom", w.len())));
            }
            if w.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(Error::Parameter("quadrature weights must be positive".into()));
            }
        }
        Ok(Self { data, n, d, weights })
    }

    pub fn n_snapshots(&self) -> usize {
        self.n
    }

    pub fn n_dof(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// How many modes to keep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Truncation {
    /// Smallest rank whose cumulative squared singular values reach this
    /// fraction of the total.
    Energy(f64),
    Modes(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PodBasis {
    pub mean: Vec<f64>,
    /// Row-major `D × r`.
    pub modes: Vec<f64>,
    pub singular_values: Vec<f64>,
    pub weights: Option<Vec<f64>>,
}

impl PodBasis {
    pub fn n_dof(&self) -> usize {
        self.mean.len()
    }

    pub fn n_modes(&self) -> usize {
        self.singular_values.len()
    }

    fn weight(&self, j: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[j])
    }

    pub fn mode(&self, i: usize) -> Vec<f64> {
        let r = self.n_modes();
        (0..self.n_dof()).map(|j| self.modes[j * r + i]).collect()
    }

    /// Weighted inner products `⟨u − u₀, φ_i⟩`.
    pub fn project(&self, field: &[f64]) -> Result<Vec<f64>> {
        let d = self.n_dof();
        if field.len() != d {
            return Err(Error::Shape(format!("field has {} values, basis has {d}", field.len())));
        }
        let r = self.n_modes();
        let mut a = vec![0.0; r];
        for j in 0..d {
            let v = (field[j] - self.mean[j]) * self.weight(j);
            for (i, ai) in a.iter_mut().enumerate() {
                *ai += v * self.modes[j * r + i];
            }
        }
        Ok(a)
    }

    /// `u₀ + Σ a_i φ_i`.
    pub fn reconstruct(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        let r = self.n_modes();
        if coeffs.len() != r {
            return Err(Error::Shape(format!("{} coefficients for {r} modes", coeffs.len())));
        }
        Ok((0..self.n_dof())
            .map(|j| {
                self.mean[j]
                    + coeffs
                        .iter()
                        .enumerate()
                        .map(|(i, a)| a * self.modes[j * r + i])
                        .sum::<f64>()
            })
            .collect())
    }

    /// Cumulative energy fraction captured by the first `1..=r` modes.
    pub fn cumulative_energy(&self) -> Vec<f64> {
        let total: f64 = self.singular_values.iter().map(|s| s * s).sum();
        let mut acc = 0.0;
        self.singular_values
            .iter()
            .map(|s| {
                acc += s * s;
                acc / total
            })
            .collect()
    }

    /// Writes `mean.csv`, `modes.csv`, `sv.csv` and `basis.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        io::write_matrix(&dir.join("mean.csv"), &self.mean, 1)?;
        io::write_matrix(&dir.join("modes.csv"), &self.modes, self.n_modes())?;
        io::write_matrix(&dir.join("sv.csv"), &self.singular_values, 1)?;
        io::write_json(
            &dir.join("basis.json"),
            &BasisMeta {
                format: 1,
                n_dof: self.n_dof(),
                n_modes: self.n_modes(),
                weights: self.weights.clone(),
            },
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: BasisMeta = io::read_json(&dir.join("basis.json"))?;
        let (mean, _, _) = io::read_matrix(&dir.join("mean.csv"), false)?;
        let (modes, rows, cols) = io::read_matrix(&dir.join("modes.csv"), false)?;
        let (sv, _, _) = io::read_matrix(&dir.join("sv.csv"), false)?;
        if mean.len() != meta.n_dof || rows != meta.n_dof || cols != meta.n_modes || sv.len() != meta.n_modes {
            return Err(Error::Shape("basis files disagree with basis.json".into()));
        }
        Ok(Self {
            mean,
            modes,
            singular_values: sv,
            weights: meta.weights,
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BasisMeta {
    format: u32,
    n_dof: usize,
    n_modes: usize,
    weights: Option<Vec<f64>>,
}

/// Mean-subtracted SVD. Returns the basis and the `N × r` coefficients.
pub fn pod(snaps: &SnapshotMatrix, truncation: Truncation) -> Result<(PodBasis, Vec<f64>)> {
    let (n, d) = (snaps.n, snaps.d);
    match truncation {
        Truncation::Energy(e) if !(e > 0.0 && e <= 1.0) => {
            return Err(Error::Parameter(format!("energy target must be in (0, 1], got {e}")))
        }
        Truncation::Modes(0) => return Err(Error::Parameter("need at least one mode".into())),
        _ => {}
    }
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(snaps.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let sqrt_w: Vec<f64> = (0..d)
        .map(|j| snaps.weights.as_ref().map_or(1.0, |w| w[j].sqrt()))
        .collect();
    let centered = DMatrix::from_fn(n, d, |i, j| (snaps.data[i * d + j] - mean[j]) * sqrt_w[j]);

    let svd = centered.svd(true, true);
    let u = svd.u.as_ref().expect("requested U");
    let v_t = svd.v_t.as_ref().expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));

    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let tol = smax * n.max(d) as f64 * f64::EPSILON;
    let rank = order.iter().filter(|&&k| svd.singular_values[k] > tol).count();
    if rank == 0 {
        return Err(Error::InsufficientData("snapshots do not vary".into()));
    }
    let r = match truncation {
        Truncation::Modes(m) if m > rank => {
            return Err(Error::Parameter(format!(
                "requested {m} modes but the snapshots have rank {rank}"
            )))
        }
        Truncation::Modes(m) => m,
        Truncation::Energy(e) => {
            let total: f64 = order[..rank].iter().map(|&k| svd.singular_values[k].powi(2)).sum();
            let mut acc = 0.0;
            let mut r = rank;
            for (idx, &k) in order[..rank].iter().enumerate() {
                acc += svd.singular_values[k].powi(2);
                if acc / total >= e - 1e-12 {
                    r = idx + 1;
                    break;
                }
            }
            r
        }
    };

    let mut modes = vec![0.0; d * r];
    let mut coeffs = vec![0.0; n * r];
    let mut sv = Vec::with_capacity(r);
    for (i, &k) in order[..r].iter().enumerate() {
        let s = svd.singular_values[k];
        let phi: Vec<f64> = (0..d).map(|j| v_t[(k, j)] / sqrt_w[j]).collect();
        let peak = phi.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        let sign = if peak < 0.0 { -1.0 } else { 1.0 };
        for j in 0..d {
            modes[j * r + i] = sign * phi[j];
        }
        for t in 0..n {
            coeffs[t * r + i] = sign * u[(t, k)] * s;
        }
        sv.push(s);
    }
    Ok((
        PodBasis {
            mean,
            modes,
            singular_values: sv,
            weights: snaps.weights.clone(),
        },
        coeffs,
    ))
}

/// Loads an external modal-coefficient series (trajectory CSV plus sidecar).
pub fn load_coefficient_series(path: &Path) -> Result<Trajectory> {
    io::read_trajectory(path)
}
