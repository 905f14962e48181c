//! Sparse polynomial regression: monomial libraries and sequentially
//! thresholded least squares.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::DynamicsModel;
use crate::io;

pub const SINDY_FORMAT: u32 = 1;

/// All monomials of total degree `0..=order` in `dim` variables, ordered by
/// degree and lexicographically (higher power of `x1` first) within a degree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolyLibrary {
    pub dim: usize,
    pub order: usize,
    pub terms: Vec<Vec<u32>>,
}

fn exponents_of_degree(dim: usize, degree: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if prefix.len() + 1 == dim {
        prefix.push(degree);
        out.push(prefix.clone());
        prefix.pop();
        return;
    }
    for e in (0..=degree).rev() {
        prefix.push(e);
        exponents_of_degree(dim, degree - e, prefix, out);
        prefix.pop();
    }
}

impl PolyLibrary {
    pub fn new(dim: usize, order: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Parameter("library dimension must be positive".into()));
        }
        if order == 0 {
            return Err(Error::Parameter("polynomial order must be at least 1".into()));
        }
        let mut terms = Vec::new();
        for d in 0..=order as u32 {
            exponents_of_degree(dim, d, &mut Vec::with_capacity(dim), &mut terms);
        }
        Ok(Self { dim, order, terms })
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Every monomial evaluated at `x`.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::Shape(format!(
                "state has length {} but the library is {}-dimensional",
                x.len(),
                self.dim
            )));
        }
        let row: Vec<f64> = self
            .terms
            .iter()
            .map(|e| e.iter().zip(x).map(|(&p, &v)| v.powi(p as i32)).product())
            .collect();
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("library overflow at {x:?}")));
        }
        Ok(row)
    }

    /// `∂θ_j/∂x_c` for every term `j`, row-major `len × dim`.
    pub fn eval_gradients(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::Shape("state length does not match the library".into()));
        }
        let mut out = vec![0.0; self.len() * self.dim];
        for (j, e) in self.terms.iter().enumerate() {
            for c in 0..self.dim {
                if e[c] == 0 {
                    continue;
                }
                let mut g = e[c] as f64;
                for (k, (&p, &v)) in e.iter().zip(x).enumerate() {
                    let p = if k == c { p - 1 } else { p };
                    g *= v.powi(p as i32);
                }
                out[j * self.dim + c] = g;
            }
        }
        Ok(out)
    }

    /// `x1^2*x2` style rendering; the constant term is `1`.
    pub fn term_name(&self, j: usize) -> String {
        let parts: Vec<String> = self.terms[j]
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0)
            .map(|(i, &p)| {
                if p == 1 {
                    format!("x{}", i + 1)
                } else {
                    format!("x{}^{p}", i + 1)
                }
            })
            .collect();
        if parts.is_empty() {
            "1".into()
        } else {
            parts.join("*")
        }
    }
}

/// Library matrix Θ (row-major `N × terms`) for the rows of `x`.
pub fn build_library(x: &[f64], dim: usize, order: usize) -> Result<(PolyLibrary, Vec<f64>)> {
    let lib = PolyLibrary::new(dim, order)?;
    if x.len() % dim != 0 {
        return Err(Error::Shape("samples are not whole rows".into()));
    }
    let mut theta = Vec::with_capacity(x.len() / dim * lib.len());
    for row in x.chunks_exact(dim) {
        theta.extend(lib.eval(row)?);
    }
    Ok((lib, theta))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SindyModel {
    pub library: PolyLibrary,
    /// Row-major `terms × dim`: column `i` holds the coefficients of `dx_i/dt`.
    pub xi: Vec<f64>,
    pub threshold: f64,
}

/// Per-component support sizes after each STLS iteration, plus warnings.
#[derive(Debug, Clone, Default)]
pub struct StlsTrace {
    pub support_sizes: Vec<Vec<usize>>,
    pub warnings: Vec<String>,
}

/// Minimum-norm least squares through an SVD with relative rank cutoff.
/// Returns the solution and the numerical rank.
fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<(DVector<f64>, usize)> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let eps = smax * a.nrows().max(a.ncols()) as f64 * f64::EPSILON;
    let rank = svd.singular_values.iter().filter(|&&s| s > eps).count();
    let x = svd
        .solve(b, eps)
        .map_err(|e| Error::Domain(format!("least squares failed: {e}")))?;
    Ok((x, rank))
}

fn stls_component(
    theta: &DMatrix<f64>,
    y: DVector<f64>,
    threshold: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, Vec<usize>, Vec<String>)> {
    let k = theta.ncols();
    let mut active: Vec<usize> = (0..k).collect();
    let mut coef = vec![0.0; k];
    let mut sizes = Vec::new();
    let mut warnings = Vec::new();
    for _ in 0..max_iter.max(1) {
        coef.iter_mut().for_each(|c| *c = 0.0);
        if active.is_empty() {
            sizes.push(0);
            break;
        }
        let sub = theta.select_columns(active.iter());
        let (sol, rank) = least_squares(&sub, &y)?;
        if rank < active.len() {
            warnings.push(format!(
                "rank-deficient active set ({rank} of {} columns); using the minimum-norm solution",
                active.len()
            ));
        }
        for (&j, &v) in active.iter().zip(sol.iter()) {
            coef[j] = if v.abs() < threshold { 0.0 } else { v };
        }
        let next: Vec<usize> = (0..k).filter(|&j| coef[j] != 0.0).collect();
        sizes.push(next.len());
        if next == active {
            break;
        }
        active = next;
    }
    if coef.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("least squares produced non-finite coefficients".into()));
    }
    Ok((coef, sizes, warnings))
}

/// Sequentially thresholded least squares, independently per output
/// component. `theta` is row-major `N × library.len()`, `y` row-major `N × M`.
pub fn stls(
    library: &PolyLibrary,
    theta: &[f64],
    y: &[f64],
    threshold: f64,
    max_iter: usize,
) -> Result<(SindyModel, StlsTrace)> {
    if !(threshold >= 0.0 && threshold.is_finite()) {
        return Err(Error::Parameter(format!("threshold must be finite and non-negative, got {threshold}")));
    }
    let k = library.len();
    let m = library.dim;
    if theta.is_empty() || theta.len() % k != 0 {
        return Err(Error::Shape("library matrix is not whole rows".into()));
    }
    let n = theta.len() / k;
    if y.len() != n * m {
        return Err(Error::Shape(format!("{n} library rows but {} target values", y.len())));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite target values".into()));
    }
    let mut trace = StlsTrace::default();
    if n < k {
        trace.warnings.push(format!(
            "{n} samples for {k} library terms; the fit is underdetermined"
        ));
    }
    let theta_m = DMatrix::from_row_slice(n, k, theta);
    let results: Vec<_> = (0..m)
        .into_par_iter()
        .map(|i| {
            let col = DVector::from_iterator(n, y.iter().skip(i).step_by(m).copied());
            stls_component(&theta_m, col, threshold, max_iter)
        })
        .collect::<Result<_>>()?;
    let mut xi = vec![0.0; k * m];
    for (i, (coef, sizes, warnings)) in results.into_iter().enumerate() {
        for j in 0..k {
            xi[j * m + i] = coef[j];
        }
        trace.support_sizes.push(sizes);
        trace
            .warnings
            .extend(warnings.into_iter().map(|w| format!("dx{}/dt: {w}", i + 1)));
    }
    Ok((
        SindyModel {
            library: library.clone(),
            xi,
            threshold,
        },
        trace,
    ))
}

/// Builds the library from `features` and runs STLS against `targets`.
pub fn fit(
    features: &[f64],
    targets: &[f64],
    dim: usize,
    order: usize,
    threshold: f64,
    max_iter: usize,
) -> Result<(SindyModel, StlsTrace)> {
    let (lib, theta) = build_library(features, dim, order)?;
    stls(&lib, &theta, targets, threshold, max_iter)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SindyFile {
    format: u32,
    dim: usize,
    order: usize,
    threshold: f64,
    terms: Vec<Vec<u32>>,
    /// One row per term.
    coefficients: Vec<Vec<f64>>,
}

/// Significant-digit formatting, e.g. `1.00000` or `-0.000200000`.
fn sig(v: f64, digits: usize) -> String {
    if v == 0.0 {
        return format!("{:.*}", digits - 1, 0.0);
    }
    let sci = format!("{:.*e}", digits - 1, v);
    let exp: i32 = sci.rsplit('e').next().and_then(|e| e.parse().ok()).unwrap_or(0);
    if !(-5..15).contains(&exp) {
        return sci;
    }
    let decimals = (digits as i32 - 1 - exp).max(0) as usize;
    format!("{v:.decimals$}")
}

impl SindyModel {
    pub fn dim(&self) -> usize {
        self.library.dim
    }

    pub fn coefficient(&self, term: usize, component: usize) -> f64 {
        self.xi[term * self.dim() + component]
    }

    /// Indices of terms with a nonzero coefficient in `component`.
    pub fn support(&self, component: usize) -> Vec<usize> {
        (0..self.library.len())
            .filter(|&j| self.coefficient(j, component) != 0.0)
            .collect()
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        let row = self.library.eval(x)?;
        let m = self.dim();
        let mut y = vec![0.0; m];
        for (j, &t) in row.iter().enumerate() {
            for (i, yi) in y.iter_mut().enumerate() {
                *yi += t * self.xi[j * m + i];
            }
        }
        Ok(y)
    }

    /// Exact Jacobian from monomial derivatives, row-major `M × M`.
    pub fn jacobian(&self, x: &[f64]) -> Result<Vec<f64>> {
        let grads = self.library.eval_gradients(x)?;
        let m = self.dim();
        let mut jac = vec![0.0; m * m];
        for j in 0..self.library.len() {
            for r in 0..m {
                let c = self.xi[j * m + r];
                if c == 0.0 {
                    continue;
                }
                for col in 0..m {
                    jac[r * m + col] += c * grads[j * m + col];
                }
            }
        }
        Ok(jac)
    }

    /// One line per component, e.g. `dx1/dt = 1.00000*x2`.
    pub fn equations(&self) -> Vec<String> {
        (0..self.dim())
            .map(|i| {
                let mut rhs = String::new();
                for j in self.support(i) {
                    let c = self.coefficient(j, i);
                    let mag = sig(c.abs(), 6);
                    let term = if self.library.terms[j].iter().all(|&p| p == 0) {
                        mag
                    } else {
                        format!("{mag}*{}", self.library.term_name(j))
                    };
                    if rhs.is_empty() {
                        rhs = if c < 0.0 { format!("-{term}") } else { term };
                    } else {
                        rhs.push_str(if c < 0.0 { " - " } else { " + " });
                        rhs.push_str(&term);
                    }
                }
                if rhs.is_empty() {
                    rhs.push('0');
                }
                format!("dx{}/dt = {rhs}", i + 1)
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let m = self.dim();
        let file = SindyFile {
            format: SINDY_FORMAT,
            dim: m,
            order: self.library.order,
            threshold: self.threshold,
            terms: self.library.terms.clone(),
            coefficients: self.xi.chunks(m).map(<[f64]>::to_vec).collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: SindyFile = serde_json::from_str(text)?;
        if f.format != SINDY_FORMAT {
            return Err(Error::Config(format!("unsupported SINDy model format {}", f.format)));
        }
        let library = PolyLibrary::new(f.dim, f.order)?;
        if library.terms != f.terms {
            return Err(Error::Config("term list does not match the canonical library ordering".into()));
        }
        if f.coefficients.len() != library.len() || f.coefficients.iter().any(|r| r.len() != f.dim) {
            return Err(Error::Shape("coefficient matrix does not match the library".into()));
        }
        let xi: Vec<f64> = f.coefficients.into_iter().flatten().collect();
        if xi.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("non-finite coefficient".into()));
        }
        Ok(Self {
            library,
            xi,
            threshold: f.threshold,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        io::write_atomic(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: e.to_string(),
        })
    }
}

impl DynamicsModel for SindyModel {
    fn dim(&self) -> usize {
        SindyModel::dim(self)
    }

    fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        SindyModel::predict(self, x)
    }

    fn jacobian(&self, x: &[f64]) -> Result<Vec<f64>> {
        SindyModel::jacobian(self, x)
    }
}
