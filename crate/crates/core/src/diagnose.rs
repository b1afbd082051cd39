//! Checks along computed trajectories: the one-period `ΔV` identity,
//! Lyapunov-section growth `ΔV_k ≥ kΓ`, the energy inequality `|E'| ≤ E`
//! with its Gronwall consequence, and escape classification.

use crate::certify::{CertificateKind, CertificateReport, MatrixWitness};
use crate::forcing::simpson_samples;
use crate::integrate::{integrate_grid, period_grid, section_trace, IntegrateError, SectionTrace, State, Tolerances};
use crate::report::{fmt_g17, CsvTable};
use crate::system::{Coupling, SystemSpec};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use thiserror::Error;

/// Relative tolerance of the growth inequality, scaled by `1 + |kΓ|`.
pub const GROWTH_REL_TOL: f64 = 1e-6;
/// Slack allowed in `|E'| ≤ E`.
pub const ENERGY_DERIVATIVE_TOL: f64 = 1e-9;
/// Slack allowed in the per-period Gronwall bound.
pub const GRONWALL_TOL: f64 = 1e-6;
/// Lower bound on `M` so that energy ratios stay defined.
pub const ENERGY_FLOOR: f64 = 1e-30;
/// Default escape level is this factor times `1 + |s0|²`.
pub const DEFAULT_ESCAPE_FACTOR: f64 = 4.0;
/// Samples per period for the dense checks.
pub const DENSE_SAMPLES: usize = 256;
/// Simpson panels of the one-period identity.
pub const IDENTITY_PANELS: usize = 4096;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiagnoseError {
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
    #[error("component {j} is not resonant")]
    NotResonant { j: usize },
    #[error("component index {j} out of range for d = {d}")]
    ComponentRange { j: usize, d: usize },
    #[error("report carries no certificate")]
    NotCertified,
    #[error("horizon must be at least one period, got {0}")]
    BadHorizon(i64),
    #[error("escape level must be positive, got {0}")]
    BadEscapeLevel(f64),
    #[error("this check needs a matrix-form system")]
    NotMatrix,
    #[error("this check needs a separable (non-matrix) system")]
    MatrixForm,
}

/// Time direction of a growth check.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::Forward => 1.0,
            Direction::Backward => -1.0,
        }
    }
}

/// Both sides of `V(t₀ + 2π) − V(t₀) = ∫ (p_j − h_j) sin(n_j t + φ) dt`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub delta_v: f64,
    pub quadrature: f64,
    pub residual: f64,
}

fn check_component(spec: &SystemSpec, j: usize) -> Result<f64, DiagnoseError> {
    if j >= spec.d {
        return Err(DiagnoseError::ComponentRange { j, d: spec.d });
    }
    if spec.is_matrix() {
        return Err(DiagnoseError::MatrixForm);
    }
    spec.resonant_frequency(j).ok_or(DiagnoseError::NotResonant { j })?;
    Ok(spec.n[j])
}

/// One-period identity along the trajectory from `s0`, with the Lyapunov
/// phase advanced to `n_j t + φ` so any start time works.
pub fn delta_v_identity_check(
    spec: &SystemSpec,
    s0: &State,
    j: usize,
    phase: f64,
    tol: Tolerances,
) -> Result<IdentityCheck, DiagnoseError> {
    let n = check_component(spec, j)?;
    let h = TAU / IDENTITY_PANELS as f64;
    let times: Vec<f64> = (0..=IDENTITY_PANELS).map(|i| s0.t + h * i as f64).collect();
    let states = integrate_grid(spec, s0, &times[1..], tol)?;
    let v_at = |s: &State| {
        let a = n * s.t + phase;
        s.v[j] * a.sin() - n * s.x[j] * a.cos()
    };
    let integrand: Vec<f64> = std::iter::once(s0)
        .chain(states.iter())
        .map(|s| (spec.p[j].eval(s.t) - spec.coupling_value(j, &s.x)) * (n * s.t + phase).sin())
        .collect();
    let quadrature = simpson_samples(&integrand, h);
    let end = states.last().expect("nonempty grid");
    let delta_v = v_at(end) - v_at(s0);
    Ok(IdentityCheck { delta_v, quadrature, residual: (delta_v - quadrature).abs() })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthRow {
    pub k: i64,
    /// `V(2kπ) − V(0)`.
    pub delta_v: f64,
    pub k_gamma: f64,
    /// `ΔV_k − kΓ` forward, `kΓ − ΔV_k` backward; nonnegative when the
    /// inequality holds.
    pub margin: f64,
}

/// Lyapunov growth along one component (or along the matrix mode).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentGrowth {
    /// `None` for the matrix form.
    pub j: Option<usize>,
    pub phase: f64,
    pub gamma: f64,
    pub rows: Vec<GrowthRow>,
    /// Least-squares slope of `ΔV_k` against `k`.
    pub slope: f64,
    pub violations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub kind: CertificateKind,
    pub direction: Direction,
    pub k_max: i64,
    pub components: Vec<ComponentGrowth>,
}

impl GrowthReport {
    pub fn violations(&self) -> usize {
        self.components.iter().map(|c| c.violations).sum()
    }

    /// CSV with columns `j, k, delta_v, k_gamma, margin` (`j` is 0 for the matrix mode).
    pub fn to_csv(&self) -> String {
        let mut t = CsvTable::new(&["j", "k", "delta_v", "k_gamma", "margin"]);
        for c in &self.components {
            let j = c.j.map_or(0, |j| j + 1);
            for r in &c.rows {
                t.row(&[j.to_string(), r.k.to_string(), fmt_g17(r.delta_v), fmt_g17(r.k_gamma), fmt_g17(r.margin)]);
            }
        }
        t.finish()
    }
}

fn least_squares_slope(rows: &[GrowthRow]) -> f64 {
    let m = rows.len() as f64;
    if rows.len() < 2 {
        return rows.first().map_or(0.0, |r| r.delta_v / r.k as f64);
    }
    let kbar = rows.iter().map(|r| r.k as f64).sum::<f64>() / m;
    let vbar = rows.iter().map(|r| r.delta_v).sum::<f64>() / m;
    let (num, den) = rows.iter().fold((0.0, 0.0), |(n, d), r| {
        let dk = r.k as f64 - kbar;
        (n + dk * (r.delta_v - vbar), d + dk * dk)
    });
    num / den
}

/// `ΔV_k` rows along a section trace for a Lyapunov function `v(x, v)`.
pub fn section_growth<F>(
    trace: &SectionTrace,
    lyapunov: F,
    j: Option<usize>,
    phase: f64,
    gamma: f64,
    direction: Direction,
) -> ComponentGrowth
where
    F: Fn(&State) -> f64,
{
    let base = lyapunov(trace.get(0).expect("trace contains k = 0"));
    let sign = direction.sign();
    let ks: Vec<i64> = match direction {
        Direction::Forward => (1..=trace.k_max).collect(),
        Direction::Backward => (trace.k_min..=-1).rev().collect(),
    };
    let rows: Vec<GrowthRow> = ks
        .into_iter()
        .map(|k| {
            let delta_v = lyapunov(trace.get(k).expect("k within trace")) - base;
            let k_gamma = k as f64 * gamma;
            GrowthRow { k, delta_v, k_gamma, margin: sign * (delta_v - k_gamma) }
        })
        .collect();
    let violations = rows
        .iter()
        .filter(|r| r.margin < -GROWTH_REL_TOL * (1.0 + r.k_gamma.abs()))
        .count();
    ComponentGrowth { j, phase, gamma, slope: least_squares_slope(&rows), rows, violations }
}

/// Phase used for component `j` of a certified report: `φ⁰` for the global
/// check; for the asymptotic ones, whichever of `φ¹, φ²` puts `s0` deepest
/// in `C_j^+` (forward) or `C_j^−` (backward).
fn growth_phase(report: &CertificateReport, j: usize, s0: &State, direction: Direction) -> Option<f64> {
    let row = report.row(j)?;
    match report.kind {
        CertificateKind::GlobalScalar | CertificateKind::GlobalMatrix => row.phase,
        CertificateKind::Cyclic | CertificateKind::Radial => {
            let (p1, p2) = row.window?.split_phases();
            let v = |p: f64| crate::certify::lyapunov_value(row.n, p, s0.x[j], s0.v[j]);
            let pick_first = match direction {
                Direction::Forward => v(p1) >= v(p2),
                Direction::Backward => v(p1) <= v(p2),
            };
            Some(if pick_first { p1 } else { p2 })
        }
    }
}

/// `ΔV_k` against `kΓ` for `k = 1..k_max` (forward) or `−1..−k_max`
/// (backward), for every certified component or the matrix mode.
pub fn growth_check(
    spec: &SystemSpec,
    s0: &State,
    report: &CertificateReport,
    k_max: i64,
    direction: Direction,
    tol: Tolerances,
) -> Result<GrowthReport, DiagnoseError> {
    if !report.certified {
        return Err(DiagnoseError::NotCertified);
    }
    if k_max < 1 {
        return Err(DiagnoseError::BadHorizon(k_max));
    }
    let (k_min, k_top) = match direction {
        Direction::Forward => (0, k_max),
        Direction::Backward => (-k_max, 0),
    };
    let trace = section_trace(spec, s0, k_min, k_top, tol)?;
    growth_from_trace(spec, &trace, report, direction)
}

/// [`growth_check`] on a precomputed section trace.
pub fn growth_from_trace(
    spec: &SystemSpec,
    trace: &SectionTrace,
    report: &CertificateReport,
    direction: Direction,
) -> Result<GrowthReport, DiagnoseError> {
    if !report.certified {
        return Err(DiagnoseError::NotCertified);
    }
    let k_max = match direction {
        Direction::Forward => trace.k_max,
        Direction::Backward => -trace.k_min,
    };
    let s0 = trace.get(0).expect("trace contains k = 0");
    let components = if let Some(w) = &report.matrix {
        if !matches!(spec.coupling, Coupling::Matrix { .. }) {
            return Err(DiagnoseError::NotMatrix);
        }
        vec![matrix_growth(trace, w, direction)]
    } else {
        let mut out = Vec::new();
        for row in report.certified_rows() {
            let phase = growth_phase(report, row.j, s0, direction).ok_or(DiagnoseError::NotCertified)?;
            let gamma = row.margin.ok_or(DiagnoseError::NotCertified)?;
            let (j, n) = (row.j, row.n);
            let lyap = |s: &State| crate::certify::lyapunov_value(n, phase, s.x[j], s.v[j]);
            out.push(section_growth(trace, lyap, Some(j), phase, gamma, direction));
        }
        out
    };
    Ok(GrowthReport { kind: report.kind, direction, k_max, components })
}

fn matrix_growth(trace: &SectionTrace, w: &MatrixWitness, direction: Direction) -> ComponentGrowth {
    let gamma = w.margin.unwrap_or(0.0);
    section_growth(trace, |s| w.lyapunov(&s.x, &s.v), None, w.phase, gamma, direction)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyPeriod {
    pub k: i64,
    pub e_start: f64,
    pub e_min: f64,
    /// `e^{2π} e_min / e_start`, at least 1 when the Gronwall bound holds.
    pub ratio: f64,
}

/// Energy inequality along one component (or the whole state for the matrix form).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub j: Option<usize>,
    /// `M = sup|h| + sup|p|`, floored at [`ENERGY_FLOOR`].
    pub m: f64,
    /// `max_t |E'(t)| / E(t)` over the dense grid.
    pub max_derivative_ratio: f64,
    pub derivative_ok: bool,
    pub periods: Vec<EnergyPeriod>,
    pub gronwall_ok: bool,
    pub min_energy: f64,
}

impl EnergyReport {
    pub fn passed(&self) -> bool {
        self.derivative_ok && self.gronwall_ok
    }

    /// CSV with columns `k, e_start, e_min, ratio`.
    pub fn to_csv(&self) -> String {
        let mut t = CsvTable::new(&["k", "e_start", "e_min", "ratio"]);
        for p in &self.periods {
            t.row(&[p.k.to_string(), fmt_g17(p.e_start), fmt_g17(p.e_min), fmt_g17(p.ratio)]);
        }
        t.finish()
    }
}

fn energy_report<E>(
    spec: &SystemSpec,
    s0: &State,
    k_max: i64,
    tol: Tolerances,
    j: Option<usize>,
    m: f64,
    energy: E,
) -> Result<EnergyReport, DiagnoseError>
where
    E: Fn(&State) -> (f64, f64),
{
    if k_max < 1 {
        return Err(DiagnoseError::BadHorizon(k_max));
    }
    if s0.t != 0.0 {
        return Err(IntegrateError::SectionStart { t: s0.t }.into());
    }
    let times = period_grid(0, k_max, DENSE_SAMPLES);
    let states = integrate_grid(spec, s0, &times[1..], tol)?;
    let samples: Vec<(f64, f64)> = std::iter::once(s0).chain(states.iter()).map(&energy).collect();
    let max_derivative_ratio = samples.iter().map(|(e, de)| de.abs() / e).fold(0.0, f64::max);
    let min_energy = samples.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
    let growth = TAU.exp();
    let periods: Vec<EnergyPeriod> = samples
        .chunks(DENSE_SAMPLES)
        .take(k_max as usize)
        .enumerate()
        .map(|(k, chunk)| {
            let e_start = chunk[0].0;
            let e_min = chunk.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
            EnergyPeriod { k: k as i64, e_start, e_min, ratio: growth * e_min / e_start }
        })
        .collect();
    let gronwall_ok = periods
        .iter()
        .all(|p| p.e_min >= (-TAU).exp() * p.e_start * (1.0 - GRONWALL_TOL));
    Ok(EnergyReport {
        j,
        m,
        max_derivative_ratio,
        derivative_ok: max_derivative_ratio <= 1.0 + ENERGY_DERIVATIVE_TOL,
        periods,
        gronwall_ok,
        min_energy,
    })
}

/// `E_j = ½x_j'² + ½n_j²x_j² + ½M_j²` with `E_j' = x_j'(p_j − h_j)` read
/// from the equation, over `k_max` periods from `t = 0`.
pub fn energy_check(
    spec: &SystemSpec,
    s0: &State,
    j: usize,
    k_max: i64,
    tol: Tolerances,
) -> Result<EnergyReport, DiagnoseError> {
    if j >= spec.d {
        return Err(DiagnoseError::ComponentRange { j, d: spec.d });
    }
    if spec.is_matrix() {
        return Err(DiagnoseError::MatrixForm);
    }
    let n = spec.n[j];
    let m = (spec.coupling_range(j).sup_abs() + spec.p[j].sup_abs_bound()).max(ENERGY_FLOOR);
    energy_report(spec, s0, k_max, tol, Some(j), m, |s| {
        let (x, v) = (s.x[j], s.v[j]);
        let e = 0.5 * (v * v + n * n * x * x + m * m);
        let de = v * (spec.p[j].eval(s.t) - spec.coupling_value(j, &s.x));
        (e, de)
    })
}

/// Matrix form: `E = ½|x'|² + ½⟨Ax, x⟩ + ½M²` with `M = sup|h| + sup|p|`
/// in the Euclidean norm and `E' = ⟨x', p − h⟩`.
pub fn energy_check_matrix(
    spec: &SystemSpec,
    s0: &State,
    k_max: i64,
    tol: Tolerances,
) -> Result<EnergyReport, DiagnoseError> {
    let (Coupling::Matrix { h }, Some(a)) = (&spec.coupling, &spec.a) else {
        return Err(DiagnoseError::NotMatrix);
    };
    let sup_h = h.iter().map(|e| e.global_range().sup_abs().powi(2)).sum::<f64>().sqrt();
    let sup_p = spec.p.iter().map(|p| p.sup_abs_bound().powi(2)).sum::<f64>().sqrt();
    let m = (sup_h + sup_p).max(ENERGY_FLOOR);
    energy_report(spec, s0, k_max, tol, None, m, |s| {
        let mut e = 0.5 * m * m;
        let mut de = 0.0;
        for (i, row) in a.iter().enumerate() {
            let ax: f64 = row.iter().zip(&s.x).map(|(a, x)| a * x).sum();
            e += 0.5 * (s.v[i] * s.v[i] + ax * s.x[i]);
            de += s.v[i] * (spec.p[i].eval(s.t) - h[i].eval(s.x[i]));
        }
        (e, de)
    })
}

/// Energy checks for every component, or the single matrix-form check.
pub fn energy_check_all(
    spec: &SystemSpec,
    s0: &State,
    k_max: i64,
    tol: Tolerances,
) -> Result<Vec<EnergyReport>, DiagnoseError> {
    if spec.is_matrix() {
        return Ok(vec![energy_check_matrix(spec, s0, k_max, tol)?]);
    }
    (0..spec.d).map(|j| energy_check(spec, s0, j, k_max, tol)).collect()
}

/// Escape label of a trajectory (or of one component).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Escape {
    UnboundedFuture,
    UnboundedPast,
    Both,
    Undetermined,
}

impl Escape {
    fn from_flags(future: bool, past: bool) -> Self {
        match (future, past) {
            (true, true) => Escape::Both,
            (true, false) => Escape::UnboundedFuture,
            (false, true) => Escape::UnboundedPast,
            (false, false) => Escape::Undetermined,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Escape::UnboundedFuture => "unbounded-future",
            Escape::UnboundedPast => "unbounded-past",
            Escape::Both => "both",
            Escape::Undetermined => "undetermined",
        }
    }

    pub fn includes_future(&self) -> bool {
        matches!(self, Escape::UnboundedFuture | Escape::Both)
    }

    pub fn includes_past(&self) -> bool {
        matches!(self, Escape::UnboundedPast | Escape::Both)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    /// Label from `min_j` of the section radii.
    pub label: Escape,
    /// Per-component labels; components may escape in different directions.
    pub components: Vec<Escape>,
    pub escape_level: f64,
    pub horizon_k: i64,
    /// `min_j r_j²` at `k = ±horizon_k`.
    pub final_future: f64,
    pub final_past: f64,
}

/// `DEFAULT_ESCAPE_FACTOR · (1 + |s0|²)`.
pub fn default_escape_level(s0: &State) -> f64 {
    DEFAULT_ESCAPE_FACTOR * (1.0 + s0.norm_sq())
}

/// First `k` of the last quarter of a horizon.
fn quarter_start(horizon: i64) -> i64 {
    horizon - (horizon / 4).max(1) + 1
}

/// Classify from sections at `k = −H..H`: a direction escapes when the
/// radius `x_j² + x_j'²` exceeds `escape_level` at every section of the
/// last quarter of that horizon.
pub fn classify_sections(trace: &SectionTrace, escape_level: f64) -> Classification {
    let horizon = trace.k_max.min(-trace.k_min);
    let d = trace.get(0).map_or(0, State::dim);
    let k0 = quarter_start(horizon);
    let escapes = |j: usize, sign: i64| {
        (k0..=horizon).all(|k| trace.get(sign * k).is_some_and(|s| s.component_radius_sq(j) > escape_level))
    };
    let components: Vec<Escape> = (0..d).map(|j| Escape::from_flags(escapes(j, 1), escapes(j, -1))).collect();
    let min_escape = |sign: i64| {
        (k0..=horizon).all(|k| {
            trace
                .get(sign * k)
                .is_some_and(|s| (0..d).map(|j| s.component_radius_sq(j)).fold(f64::INFINITY, f64::min) > escape_level)
        })
    };
    let min_radius = |k: i64| {
        trace.get(k).map_or(f64::NAN, |s| (0..d).map(|j| s.component_radius_sq(j)).fold(f64::INFINITY, f64::min))
    };
    Classification {
        label: Escape::from_flags(min_escape(1), min_escape(-1)),
        components,
        escape_level,
        horizon_k: horizon,
        final_future: min_radius(horizon),
        final_past: min_radius(-horizon),
    }
}

/// Integrate `horizon_k` periods both ways from `s0` (at `t = 0`) and classify.
/// `escape_level = None` uses [`default_escape_level`].
pub fn classify_trajectory(
    spec: &SystemSpec,
    s0: &State,
    horizon_k: i64,
    escape_level: Option<f64>,
    tol: Tolerances,
) -> Result<Classification, DiagnoseError> {
    if horizon_k < 1 {
        return Err(DiagnoseError::BadHorizon(horizon_k));
    }
    let level = escape_level.unwrap_or_else(|| default_escape_level(s0));
    if !(level > 0.0 && level.is_finite()) {
        return Err(DiagnoseError::BadEscapeLevel(level));
    }
    let trace = section_trace(spec, s0, -horizon_k, horizon_k, tol)?;
    Ok(classify_sections(&trace, level))
}

/// [`classify_trajectory`] over many initial conditions, in parallel with
/// results in input order.
pub fn classify_batch(
    spec: &SystemSpec,
    states: &[State],
    horizon_k: i64,
    escape_level: Option<f64>,
    tol: Tolerances,
) -> Vec<Result<Classification, DiagnoseError>> {
    states
        .par_iter()
        .map(|s0| classify_trajectory(spec, s0, horizon_k, escape_level, tol))
        .collect()
}
