//! Coupled resonant systems `x_j'' + n_j² x_j + h_j(·) = p_j(t)` and the
//! matrix form `x'' + A x + h(x) = p(t)`.

use crate::expr::{BoundedExpr, Interval, RangeReport};
use crate::forcing::TrigPoly;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// `n` counts as an integer when `|n − round(n)| ≤ RESONANCE_TOL`.
pub const RESONANCE_TOL: f64 = 1e-9;
/// Symmetry tolerance for matrix inputs, relative to `max(1, ‖A‖_max)`.
pub const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SystemError {
    #[error("matrix is not square: {rows} rows, row {row} has {len} entries")]
    NotSquare { rows: usize, row: usize, len: usize },
    #[error("matrix is not symmetric: |A[{i}][{j}] - A[{j}][{i}]| = {diff:e}")]
    NotSymmetric { i: usize, j: usize, diff: f64 },
    #[error("Jacobi iteration did not converge after {sweeps} sweeps")]
    NoConvergence { sweeps: usize },
    #[error("eigenvalue {eigenvalue} at index {index} is not the square of a positive integer")]
    NonResonantMode { index: usize, eigenvalue: f64 },
    #[error("mode index {index} out of range for dimension {d}")]
    ModeOutOfRange { index: usize, d: usize },
    #[error("invalid system: {}", .0.join("; "))]
    Invalid(Vec<String>),
}

/// Nonlinear coupling structure.
///
/// JSON: `{"kind": "cyclic", "h": [...]}`, `{"kind": "radial", "h": [...]}`,
/// `{"kind": "general", "terms": [[g_11, .., g_1d], ..]}`,
/// `{"kind": "matrix", "h": [...]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Coupling {
    /// `h_j(x) = Σ_i g_{j,i}(x_i)`.
    General { terms: Vec<Vec<BoundedExpr>> },
    /// `h_j(x) = h_j(x_{j+1})`, indices mod d.
    Cyclic { h: Vec<BoundedExpr> },
    /// `h_j(x) = h_j(|x|)`.
    Radial { h: Vec<BoundedExpr> },
    /// Matrix form; component `j` of `h` acts on `x_j`.
    Matrix { h: Vec<BoundedExpr> },
}

impl Coupling {
    pub fn kind(&self) -> &'static str {
        match self {
            Coupling::General { .. } => "general",
            Coupling::Cyclic { .. } => "cyclic",
            Coupling::Radial { .. } => "radial",
            Coupling::Matrix { .. } => "matrix",
        }
    }

    fn rows(&self) -> usize {
        match self {
            Coupling::General { terms } => terms.len(),
            Coupling::Cyclic { h } | Coupling::Radial { h } | Coupling::Matrix { h } => h.len(),
        }
    }
}

/// Full system description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub d: usize,
    /// Frequencies `n_j`; unused (and may be empty) for the matrix form.
    #[serde(default)]
    pub n: Vec<f64>,
    pub coupling: Coupling,
    pub p: Vec<TrigPoly>,
    /// Stiffness matrix of the matrix form.
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<Vec<f64>>>,
}

/// `x'' + A x + h(x) = p(t)` with `h_j` acting on `x_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixSpec {
    pub a: Vec<Vec<f64>>,
    pub h: Vec<BoundedExpr>,
    pub p: Vec<TrigPoly>,
}

impl MatrixSpec {
    pub fn dim(&self) -> usize {
        self.a.len()
    }

    pub fn into_system(self) -> SystemSpec {
        SystemSpec {
            d: self.a.len(),
            n: Vec::new(),
            coupling: Coupling::Matrix { h: self.h },
            p: self.p,
            a: Some(self.a),
        }
    }

    /// Euclidean combination of the per-component bounds on `|h_j|`.
    pub fn sup_h_bound(&self) -> f64 {
        self.h
            .iter()
            .map(|e| e.global_range().sup_abs().powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Outcome of [`SystemSpec::validate`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<String>,
    /// Per component: `n_j` is an integer within [`RESONANCE_TOL`].
    pub resonant: Vec<bool>,
    /// Matrix form only: modes whose eigenvalue is `n²`.
    pub resonant_modes: Vec<ResonantMode>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn into_result(self) -> Result<ValidationReport, SystemError> {
        if self.is_valid() {
            Ok(self)
        } else {
            Err(SystemError::Invalid(self.issues))
        }
    }
}

/// Integer `n ≥ 1` within [`RESONANCE_TOL`] of `value`, if any.
pub fn as_resonant(value: f64) -> Option<u32> {
    if !value.is_finite() {
        return None;
    }
    let r = value.round();
    if r >= 1.0 && (value - r).abs() <= RESONANCE_TOL && r <= u32::MAX as f64 {
        Some(r as u32)
    } else {
        None
    }
}

impl SystemSpec {
    pub fn new(n: Vec<f64>, coupling: Coupling, p: Vec<TrigPoly>) -> Self {
        SystemSpec { d: n.len(), n, coupling, p, a: None }
    }

    /// Scalar equation `x'' + n² x + h(x) = p(t)`.
    pub fn scalar(n: f64, h: BoundedExpr, p: TrigPoly) -> Self {
        SystemSpec::new(vec![n], Coupling::General { terms: vec![vec![h]] }, vec![p])
    }

    pub fn cyclic(n: Vec<f64>, h: Vec<BoundedExpr>, p: Vec<TrigPoly>) -> Self {
        SystemSpec::new(n, Coupling::Cyclic { h }, p)
    }

    pub fn radial(n: Vec<f64>, h: Vec<BoundedExpr>, p: Vec<TrigPoly>) -> Self {
        SystemSpec::new(n, Coupling::Radial { h }, p)
    }

    pub fn is_matrix(&self) -> bool {
        matches!(self.coupling, Coupling::Matrix { .. })
    }

    pub fn matrix_spec(&self) -> Option<MatrixSpec> {
        match (&self.coupling, &self.a) {
            (Coupling::Matrix { h }, Some(a)) => Some(MatrixSpec {
                a: a.clone(),
                h: h.clone(),
                p: self.p.clone(),
            }),
            _ => None,
        }
    }

    /// Resonant integer frequency of component `j`, if `n_j ∈ ℕ`.
    pub fn resonant_frequency(&self, j: usize) -> Option<u32> {
        self.n.get(j).copied().and_then(as_resonant)
    }

    pub fn validate(&self) -> ValidationReport {
        let mut issues = Vec::new();
        let d = self.d;
        if d == 0 {
            issues.push("dimension d must be at least 1".to_string());
        }
        if self.p.len() != d {
            issues.push(format!("length mismatch: {} forcings for d = {d}", self.p.len()));
        }
        if self.coupling.rows() != d {
            issues.push(format!(
                "length mismatch: {} coupling terms for d = {d}",
                self.coupling.rows()
            ));
        }
        if let Coupling::General { terms } = &self.coupling {
            for (j, row) in terms.iter().enumerate() {
                if row.len() != d {
                    issues.push(format!(
                        "length mismatch: general coupling row {} has {} terms for d = {d}",
                        j + 1,
                        row.len()
                    ));
                }
            }
        }
        let exprs_finite = match &self.coupling {
            Coupling::General { terms } => terms.iter().flatten().all(BoundedExpr::is_finite),
            Coupling::Cyclic { h } | Coupling::Radial { h } | Coupling::Matrix { h } => {
                h.iter().all(BoundedExpr::is_finite)
            }
        };
        if !exprs_finite {
            issues.push("coupling coefficients must be finite".to_string());
        }
        if !self.p.iter().all(TrigPoly::is_finite) {
            issues.push("forcing coefficients must be finite".to_string());
        }

        let mut resonant = Vec::new();
        let mut resonant_modes = Vec::new();
        if self.is_matrix() {
            match &self.a {
                None => issues.push("matrix coupling requires the matrix A".to_string()),
                Some(a) => {
                    if a.len() != d || a.iter().any(|r| r.len() != d) {
                        issues.push(format!("matrix A must be {d}x{d}"));
                    } else if a.iter().flatten().any(|v| !v.is_finite()) {
                        issues.push("matrix A must have finite entries".to_string());
                    } else {
                        match jacobi_eigen(a) {
                            Ok(dec) => {
                                if dec.eigenvalues.iter().any(|&l| l <= 0.0) {
                                    issues.push(format!(
                                        "matrix A is not positive definite (eigenvalues {:?})",
                                        dec.eigenvalues
                                    ));
                                }
                                resonant_modes = dec.resonant_modes;
                            }
                            Err(e) => issues.push(e.to_string()),
                        }
                    }
                }
            }
        } else {
            if self.a.is_some() {
                issues.push(format!("matrix A given for {} coupling", self.coupling.kind()));
            }
            if self.n.len() != d {
                issues.push(format!(
                    "length mismatch: {} frequencies for d = {d}",
                    self.n.len()
                ));
            }
            for (j, &nj) in self.n.iter().enumerate() {
                if !(nj.is_finite() && nj > 0.0) {
                    issues.push(format!("frequency n_{} = {nj} must be positive", j + 1));
                }
                resonant.push(as_resonant(nj).is_some());
            }
        }
        ValidationReport { issues, resonant, resonant_modes }
    }

    /// Value of `h_j` at configuration `x`.
    pub fn coupling_value(&self, j: usize, x: &[f64]) -> f64 {
        match &self.coupling {
            Coupling::General { terms } => terms[j]
                .iter()
                .zip(x)
                .map(|(g, &xi)| g.eval(xi))
                .sum(),
            Coupling::Cyclic { h } => h[j].eval(x[(j + 1) % x.len()]),
            Coupling::Radial { h } => h[j].eval(euclidean_norm(x)),
            Coupling::Matrix { h } => h[j].eval(x[j]),
        }
    }

    /// Sound enclosure of the range of `h_j` over all configurations.
    pub fn coupling_range(&self, j: usize) -> RangeReport {
        match &self.coupling {
            Coupling::General { terms } => {
                // each term sees its own coordinate, so ranges add without correlation loss
                let mut acc = Interval::point(0.0);
                let mut exact = true;
                for g in &terms[j] {
                    let r = g.global_range();
                    acc = acc.add(&r.interval());
                    exact &= r.exact;
                }
                RangeReport { lower: acc.lo, upper: acc.hi, exact }
            }
            Coupling::Cyclic { h } | Coupling::Radial { h } | Coupling::Matrix { h } => {
                h[j].global_range()
            }
        }
    }

    /// `x'' = p(t) − K x − h(x)` where `K` is `diag(n_j²)` or `A`.
    pub fn acceleration(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let d = self.d;
        match &self.a {
            Some(a) if self.is_matrix() => {
                for j in 0..d {
                    let ax: f64 = a[j].iter().zip(x).map(|(aij, xi)| aij * xi).sum();
                    out[j] = self.p[j].eval(t) - ax - self.coupling_value(j, x);
                }
            }
            _ => {
                for j in 0..d {
                    let n = self.n[j];
                    out[j] = self.p[j].eval(t) - n * n * x[j] - self.coupling_value(j, x);
                }
            }
        }
    }
}

pub fn euclidean_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Eigenvalue `n²` with `n ∈ ℕ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResonantMode {
    pub index: usize,
    pub n: u32,
}

/// `Q A Qᵀ = diag(eigenvalues)`, rows of `q` are unit eigenvectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenDecomposition {
    pub q: Vec<Vec<f64>>,
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    pub resonant_modes: Vec<ResonantMode>,
}

impl EigenDecomposition {
    pub fn eigenvector(&self, index: usize) -> &[f64] {
        &self.q[index]
    }
}

/// Cyclic Jacobi diagonalization of a symmetric matrix.
///
/// Sweeps the strict upper triangle in row-major order until the
/// off-diagonal Frobenius mass drops below `1e-14·‖A‖_F`. Eigenvalues are
/// returned ascending; each eigenvector is signed so that its first nonzero
/// entry is positive.
pub fn jacobi_eigen(a: &[Vec<f64>]) -> Result<EigenDecomposition, SystemError> {
    const MAX_SWEEPS: usize = 100;
    let d = a.len();
    for (row, r) in a.iter().enumerate() {
        if r.len() != d {
            return Err(SystemError::NotSquare { rows: d, row, len: r.len() });
        }
    }
    let scale = a.iter().flatten().fold(1.0f64, |m, v| m.max(v.abs()));
    for i in 0..d {
        for j in (i + 1)..d {
            let diff = (a[i][j] - a[j][i]).abs();
            if diff > SYMMETRY_TOL * scale {
                return Err(SystemError::NotSymmetric { i, j, diff });
            }
        }
    }

    let mut m: Vec<Vec<f64>> = (0..d)
        .map(|i| (0..d).map(|j| 0.5 * (a[i][j] + a[j][i])).collect())
        .collect();
    // columns of v accumulate the rotations
    let mut v: Vec<Vec<f64>> = (0..d)
        .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let frob = m.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
    let target = 1e-14 * frob;

    let off = |m: &Vec<Vec<f64>>| -> f64 {
        let mut s = 0.0;
        for i in 0..d {
            for j in 0..d {
                if i != j {
                    s += m[i][j] * m[i][j];
                }
            }
        }
        s.sqrt()
    };

    let mut sweeps = 0;
    while off(&m) > target {
        if sweeps == MAX_SWEEPS {
            return Err(SystemError::NoConvergence { sweeps });
        }
        sweeps += 1;
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = m[p][q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + theta.hypot(1.0));
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / t.hypot(1.0);
                let s = t * c;
                for k in 0..d {
                    let mkp = m[k][p];
                    let mkq = m[k][q];
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..d {
                    let mpk = m[p][k];
                    let mqk = m[q][k];
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                m[p][q] = 0.0;
                m[q][p] = 0.0;
                for row in v.iter_mut() {
                    let vkp = row[p];
                    let vkq = row[q];
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| m[i][i].total_cmp(&m[j][j]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| m[i][i]).collect();
    let q: Vec<Vec<f64>> = order
        .iter()
        .map(|&col| {
            let mut vec: Vec<f64> = (0..d).map(|row| v[row][col]).collect();
            let norm = euclidean_norm(&vec);
            vec.iter_mut().for_each(|x| *x /= norm);
            if let Some(first) = vec.iter().find(|x| x.abs() > 1e-14) {
                if *first < 0.0 {
                    vec.iter_mut().for_each(|x| *x = -*x);
                }
            }
            vec
        })
        .collect();
    let resonant_modes = eigenvalues
        .iter()
        .enumerate()
        .filter(|(_, &l)| l > 0.0)
        .filter_map(|(index, &l)| as_resonant(l.sqrt()).map(|n| ResonantMode { index, n }))
        .collect();
    Ok(EigenDecomposition { q, eigenvalues, resonant_modes })
}

/// `v(t) = c·sin(n t + φ)·q` with `A q = n² q`, `|q| = 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodicMode {
    pub index: usize,
    pub q: Vec<f64>,
    pub n: u32,
    pub phase: f64,
    pub amplitude: f64,
}

impl PeriodicMode {
    fn scaled(&self, factor: f64) -> Vec<f64> {
        self.q.iter().map(|qi| factor * qi).collect()
    }

    pub fn value(&self, t: f64) -> Vec<f64> {
        let n = self.n as f64;
        self.scaled(self.amplitude * (n * t + self.phase).sin())
    }

    pub fn velocity(&self, t: f64) -> Vec<f64> {
        let n = self.n as f64;
        self.scaled(self.amplitude * n * (n * t + self.phase).cos())
    }

    /// `v(0) = c sin φ · q`.
    pub fn initial_value(&self) -> Vec<f64> {
        self.value(0.0)
    }

    /// `v'(0) = c n cos φ · q`.
    pub fn initial_velocity(&self) -> Vec<f64> {
        self.velocity(0.0)
    }

    /// `∫₀^{2π} |v(t)| dt = 4c`.
    pub fn abs_integral(&self) -> f64 {
        4.0 * self.amplitude
    }
}

/// Periodic solution of `x'' + A x = 0` along a resonant eigenvector.
pub fn periodic_mode(
    dec: &EigenDecomposition,
    index: usize,
    phase: f64,
    amplitude: f64,
) -> Result<PeriodicMode, SystemError> {
    let d = dec.eigenvalues.len();
    if index >= d {
        return Err(SystemError::ModeOutOfRange { index, d });
    }
    let mode = dec
        .resonant_modes
        .iter()
        .find(|m| m.index == index)
        .ok_or(SystemError::NonResonantMode { index, eigenvalue: dec.eigenvalues[index] })?;
    Ok(PeriodicMode {
        index,
        q: dec.q[index].clone(),
        n: mode.n,
        phase,
        amplitude,
    })
}
