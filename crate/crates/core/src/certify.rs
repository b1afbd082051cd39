//! Sufficient conditions for unbounded solutions, their margins, and the
//! escape regions `C_j^±` in each phase plane.
//!
//! Four certificates are checked:
//!
//! * global scalar: `2(sup h_j − inf h_j) < |∫ p_j e^{i n_j t}|` for some resonant `j`;
//! * global matrix: `sup|h| ∫|v| < |∫⟨p, v⟩|` for a periodic mode `v` of `x'' + Ax = 0`;
//! * cyclic: `2Δh_j < |∫ p_j e^{i n_j t}|` for every `j`, with `Δh_j` from the
//!   limits of `h_j` at ±∞;
//! * radial: the same inequality for some `j`, with `Δh_j` from `+∞` only.
//!
//! Every inequality is certified only when its slack exceeds [`STRICT_SLACK`],
//! and every span is taken from the sound interval enclosures of `expr`, so a
//! certificate is never issued on an underestimated span.

use crate::expr::{BoundedExpr, Domain};
use crate::forcing::{simpson_integral, ForcingError, PhaseWindow};
use crate::integrate::{sigma_bound, State};
use crate::report::{fmt_g17, CsvTable};
use crate::system::{jacobi_eigen, periodic_mode, Coupling, MatrixSpec, SystemError, SystemSpec};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};
use thiserror::Error;

/// Minimum slack for a strict inequality to count as satisfied.
pub const STRICT_SLACK: f64 = 1e-9;
/// First candidate of the amplitude doubling search.
pub const INITIAL_AMPLITUDE: f64 = 1.0;
/// The amplitude search gives up beyond this value.
pub const MAX_AMPLITUDE: f64 = 1e12;
/// Simpson panels per period in the amplitude search.
pub const SEARCH_PANELS: usize = 4096;
/// Phases `ω` of the test family.
pub const SEARCH_PHASES: usize = 64;
/// Magnitudes `|x_i|, i ≠ j`, tried for radial couplings.
pub const RADIAL_OTHER_AMPLITUDES: [f64; 3] = [0.0, 1.0, 1e3];
/// Smallest usable phase-window half-width.
pub const MIN_HALF_WIDTH: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CertifyError {
    #[error("{check} check does not apply to {kind} coupling")]
    NotApplicable { check: &'static str, kind: &'static str },
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Forcing(#[from] ForcingError),
    #[error("matrix A is not positive definite (smallest eigenvalue {smallest})")]
    NotPositiveDefinite { smallest: f64 },
    #[error("mode amplitude must be positive, got {0}")]
    BadAmplitude(f64),
    #[error("component {j} is not certified")]
    NotCertified { j: usize },
    #[error("amplitude search exceeded {limit:e} for component {j} (worst integral {worst} > {threshold})")]
    SearchFailure { j: usize, limit: f64, worst: f64, threshold: f64 },
    #[error("phase window of component {j} is degenerate (half-width {half_width:e})")]
    DegenerateWindow { j: usize, half_width: f64 },
    #[error("expected {expected} amplitudes, got {got}")]
    AmplitudeCount { expected: usize, got: usize },
}

/// Which sufficient condition a report refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateKind {
    GlobalScalar,
    GlobalMatrix,
    Cyclic,
    Radial,
}

impl CertificateKind {
    pub fn name(&self) -> &'static str {
        match self {
            CertificateKind::GlobalScalar => "global_scalar",
            CertificateKind::GlobalMatrix => "global_matrix",
            CertificateKind::Cyclic => "cyclic",
            CertificateKind::Radial => "radial",
        }
    }
}

/// Per-component line of a certificate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentRow {
    pub j: usize,
    pub n: f64,
    pub resonant: bool,
    /// `|∫₀^{2π} p_j e^{i n_j t} dt|` (0 when not resonant).
    pub gain: f64,
    /// `sup h_j − inf h_j` for the global check, `Δh_j` for the asymptotic ones.
    pub span: f64,
    /// `gain − 2·span`.
    pub slack: f64,
    pub certified: bool,
    /// Maximizing phase `φ_j⁰`.
    pub phase: Option<f64>,
    /// Per-period growth `Γ` of the Lyapunov section function.
    pub margin: Option<f64>,
    pub window: Option<PhaseWindow>,
}

/// Witness data of the matrix certificate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixWitness {
    pub mode_index: usize,
    pub n: u32,
    pub q: Vec<f64>,
    /// Phase of `v(t) = c sin(nt + φ) q`, oriented so that `∫⟨p, v⟩ ≥ 0`.
    pub phase: f64,
    pub amplitude: f64,
    pub sup_h: f64,
    /// `∫₀^{2π} |v| dt = 4c`.
    pub abs_integral: f64,
    /// `sup|h| ∫|v|`.
    pub lhs: f64,
    /// `|∫⟨p, v⟩|`.
    pub rhs: f64,
    /// `Γ' = rhs − lhs` when certified.
    pub margin: Option<f64>,
}

impl MatrixWitness {
    /// `V(ζ, η) = ⟨η, v(0)⟩ − ⟨ζ, v'(0)⟩`.
    pub fn lyapunov(&self, zeta: &[f64], eta: &[f64]) -> f64 {
        let c = self.amplitude;
        let n = self.n as f64;
        let (s, co) = self.phase.sin_cos();
        let qe: f64 = self.q.iter().zip(eta).map(|(a, b)| a * b).sum();
        let qz: f64 = self.q.iter().zip(zeta).map(|(a, b)| a * b).sum();
        c * s * qe - c * n * co * qz
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub kind: CertificateKind,
    pub certified: bool,
    /// Common margin `Γ` (or `Γ'` for the matrix check) when certified.
    pub margin: Option<f64>,
    pub rows: Vec<ComponentRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<MatrixWitness>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl CertificateReport {
    pub fn certified_rows(&self) -> impl Iterator<Item = &ComponentRow> {
        self.rows.iter().filter(|r| r.certified)
    }

    pub fn row(&self, j: usize) -> Option<&ComponentRow> {
        self.rows.iter().find(|r| r.j == j)
    }
}

/// `V_{j,φ}(ζ, η) = η sin φ − n ζ cos φ`.
pub fn lyapunov_value(n: f64, phase: f64, zeta: f64, eta: f64) -> f64 {
    eta * phase.sin() - n * zeta * phase.cos()
}

/// `max{V_φ(ζ, η) : |(ζ, η)| ≤ A, φ ∈ [0, 2π]} = A·max(1, n)`.
pub fn vbar(n: f64, amplitude: f64) -> f64 {
    amplitude * n.max(1.0)
}

fn base_row(spec: &SystemSpec, j: usize, span: f64) -> ComponentRow {
    let n = spec.n[j];
    let resonant = spec.resonant_frequency(j);
    let gain = resonant.map_or(0.0, |m| spec.p[j].fourier_gain(m));
    let slack = gain - 2.0 * span;
    ComponentRow {
        j,
        n,
        resonant: resonant.is_some(),
        gain,
        span,
        slack,
        certified: resonant.is_some() && slack > STRICT_SLACK,
        phase: None,
        margin: None,
        window: None,
    }
}

fn require_valid(spec: &SystemSpec) -> Result<(), CertifyError> {
    spec.validate().into_result()?;
    Ok(())
}

/// Global condition on `sup h_j − inf h_j`, for some resonant `j`.
pub fn check_global_scalar(spec: &SystemSpec) -> Result<CertificateReport, CertifyError> {
    if spec.is_matrix() {
        return Err(CertifyError::NotApplicable { check: "global scalar", kind: "matrix" });
    }
    require_valid(spec)?;
    let mut rows = Vec::with_capacity(spec.d);
    for j in 0..spec.d {
        let range = spec.coupling_range(j);
        let mut row = base_row(spec, j, range.span());
        if row.certified {
            let m = spec.resonant_frequency(j).expect("certified rows are resonant");
            row.phase = Some(spec.p[j].optimal_phase(m)?);
            row.margin = Some(row.slack);
        }
        rows.push(row);
    }
    let margin = rows.iter().filter_map(|r| r.margin).reduce(f64::min);
    Ok(CertificateReport {
        kind: CertificateKind::GlobalScalar,
        certified: margin.is_some(),
        margin,
        rows,
        matrix: None,
        notes: Vec::new(),
    })
}

/// Condition `sup|h| ∫|v| < |∫⟨p, v⟩|` along the periodic mode
/// `v = c sin(nt + φ) q` of eigenvalue index `mode`. With `phase = None`
/// the phase maximizing `|∫⟨p, v⟩|` is used.
pub fn check_global_matrix(
    mspec: &MatrixSpec,
    mode: usize,
    phase: Option<f64>,
    amplitude: f64,
) -> Result<CertificateReport, CertifyError> {
    if !(amplitude > 0.0 && amplitude.is_finite()) {
        return Err(CertifyError::BadAmplitude(amplitude));
    }
    require_valid(&mspec.clone().into_system())?;
    let dec = jacobi_eigen(&mspec.a)?;
    let smallest = dec.eigenvalues[0];
    if smallest <= 0.0 {
        return Err(CertifyError::NotPositiveDefinite { smallest });
    }
    let pm = periodic_mode(&dec, mode, phase.unwrap_or(0.0), amplitude)?;
    let n = pm.n;
    // ⟨q, a_n⟩ and ⟨q, b_n⟩ over the component forcings
    let (qa, qb) = mspec.p.iter().zip(&pm.q).fold((0.0, 0.0), |(qa, qb), (p, qi)| {
        let (a, b) = p.coefficients(n);
        (qa + qi * a, qb + qi * b)
    });
    let mut phi = phase.unwrap_or_else(|| qa.atan2(qb));
    let mut signed = amplitude * PI * (qb * phi.cos() + qa * phi.sin());
    if signed < 0.0 {
        phi += PI;
        signed = -signed;
    }
    let phi = crate::forcing::normalize_angle(phi);
    let sup_h = mspec.sup_h_bound();
    let abs_integral = pm.abs_integral();
    let lhs = sup_h * abs_integral;
    let rhs = signed;
    // slack per unit amplitude keeps the verdict independent of c
    let certified = (rhs - lhs) / amplitude > STRICT_SLACK;
    let margin = certified.then_some(rhs - lhs);
    let witness = MatrixWitness {
        mode_index: mode,
        n,
        q: pm.q,
        phase: phi,
        amplitude,
        sup_h,
        abs_integral,
        lhs,
        rhs,
        margin,
    };
    Ok(CertificateReport {
        kind: CertificateKind::GlobalMatrix,
        certified,
        margin,
        rows: Vec::new(),
        matrix: Some(witness),
        notes: Vec::new(),
    })
}

fn asymptotic_rows(
    spec: &SystemSpec,
    h: &[BoundedExpr],
    domain: Domain,
) -> Vec<ComponentRow> {
    (0..spec.d)
        .map(|j| {
            let a = h[j].asymptotics(domain);
            let dh = match domain {
                Domain::FullLine => a.delta_h_cyclic,
                Domain::HalfLine => a.delta_h_radial,
            };
            base_row(spec, j, dh)
        })
        .collect()
}

/// Attach `Γ`, `φ⁰` and the window `{φ : R(φ) > 2(Δh_j + Γ)}` to certified rows.
fn attach_windows(spec: &SystemSpec, rows: &mut [ComponentRow], gamma: f64) -> Result<(), CertifyError> {
    for row in rows.iter_mut().filter(|r| r.certified) {
        let m = spec.resonant_frequency(row.j).expect("certified rows are resonant");
        let p = &spec.p[row.j];
        row.phase = Some(p.optimal_phase(m)?);
        row.margin = Some(gamma);
        row.window = Some(p.phase_window(m, 2.0 * (row.span + gamma))?);
    }
    Ok(())
}

/// Asymptotic condition for cyclic coupling `h_j(x_{j+1})`, for every `j`.
pub fn check_cyclic(spec: &SystemSpec) -> Result<CertificateReport, CertifyError> {
    let Coupling::Cyclic { h } = &spec.coupling else {
        return Err(CertifyError::NotApplicable { check: "cyclic", kind: spec.coupling.kind() });
    };
    require_valid(spec)?;
    let mut rows = asymptotic_rows(spec, h, Domain::FullLine);
    let certified = rows.iter().all(|r| r.certified);
    let mut notes = Vec::new();
    let margin = if certified {
        let gamma = 0.25 * rows.iter().map(|r| r.slack).fold(f64::INFINITY, f64::min);
        attach_windows(spec, &mut rows, gamma)?;
        Some(gamma)
    } else {
        for r in rows.iter_mut() {
            if !r.resonant {
                notes.push(format!("component {} is not resonant (n = {})", r.j + 1, r.n));
            }
            // the cyclic condition is all-or-nothing
            r.certified = false;
        }
        None
    };
    Ok(CertificateReport {
        kind: CertificateKind::Cyclic,
        certified,
        margin,
        rows,
        matrix: None,
        notes,
    })
}

/// Asymptotic condition for radial coupling `h_j(|x|)`, for some `j`.
pub fn check_radial(spec: &SystemSpec) -> Result<CertificateReport, CertifyError> {
    let Coupling::Radial { h } = &spec.coupling else {
        return Err(CertifyError::NotApplicable { check: "radial", kind: spec.coupling.kind() });
    };
    require_valid(spec)?;
    let mut rows = asymptotic_rows(spec, h, Domain::HalfLine);
    let min_slack = rows.iter().filter(|r| r.certified).map(|r| r.slack).reduce(f64::min);
    let margin = match min_slack {
        Some(s) => {
            let gamma = 0.25 * s;
            attach_windows(spec, &mut rows, gamma)?;
            Some(gamma)
        }
        None => None,
    };
    Ok(CertificateReport {
        kind: CertificateKind::Radial,
        certified: margin.is_some(),
        margin,
        rows,
        matrix: None,
        notes: Vec::new(),
    })
}

/// How the coupling term of component `j` sees the large component.
#[derive(Clone, Debug)]
struct SearchSetup<'a> {
    h: &'a BoundedExpr,
    /// Frequency of `sin(n_j t + φ)`.
    n_test: f64,
    /// Frequency of the large component feeding `h`.
    n_arg: f64,
    sigma_scale: f64,
    /// `None` for cyclic, magnitudes of the other components for radial.
    others: Option<&'static [f64]>,
    threshold: f64,
}

fn search_setup(spec: &SystemSpec, j: usize, gamma: f64) -> Result<SearchSetup<'_>, CertifyError> {
    let (h, arg, domain, others): (&BoundedExpr, usize, Domain, Option<&'static [f64]>) =
        match &spec.coupling {
            Coupling::Cyclic { h } => (&h[j], (j + 1) % spec.d, Domain::FullLine, None),
            Coupling::Radial { h } => (&h[j], j, Domain::HalfLine, Some(&RADIAL_OTHER_AMPLITUDES)),
            other => {
                return Err(CertifyError::NotApplicable {
                    check: "amplitude search",
                    kind: other.kind(),
                })
            }
        };
    let a = h.asymptotics(domain);
    let dh = match domain {
        Domain::FullLine => a.delta_h_cyclic,
        Domain::HalfLine => a.delta_h_radial,
    };
    let c = sigma_bound(spec, arg).unwrap_or(0.0);
    Ok(SearchSetup {
        h,
        n_test: spec.n[j],
        n_arg: spec.n[arg],
        sigma_scale: 0.5 * c,
        others,
        threshold: 2.0 * dh + gamma,
    })
}

/// Worst value of `max_φ ∫₀^{2π} h_j(arg(t)) sin(n_j t + φ) dt` over the test
/// family `arg = A sin(n t + ω) + c₀ + c₁ sin(t + ψ)` (radial: the norm
/// together with a frozen magnitude of the other components).
///
/// The maximum over `φ` is taken in closed form, `hypot(∫ h sin, ∫ h cos)`,
/// which dominates any finite phase grid.
pub fn amplitude_family_max(spec: &SystemSpec, j: usize, gamma: f64, amplitude: f64) -> Result<f64, CertifyError> {
    let setup = search_setup(spec, j, gamma)?;
    Ok(family_max(&setup, amplitude))
}

fn family_max(setup: &SearchSetup<'_>, amplitude: f64) -> f64 {
    let s = setup.sigma_scale;
    let levels = [-s, 0.0, s];
    let psis = [0.0, TAU / 3.0, 2.0 * TAU / 3.0];
    let others: &[f64] = setup.others.unwrap_or(&[0.0]);
    let mut family = Vec::with_capacity(SEARCH_PHASES * 27 * others.len());
    for w in 0..SEARCH_PHASES {
        let omega = TAU * w as f64 / SEARCH_PHASES as f64;
        for &c0 in &levels {
            for &c1 in &levels {
                for &psi in &psis {
                    for &o in others {
                        family.push((omega, c0, c1, psi, o));
                    }
                }
            }
        }
    }
    let radial = setup.others.is_some();
    family
        .par_iter()
        .map(|&(omega, c0, c1, psi, o)| {
            let arg = |t: f64| {
                let xj = amplitude * (setup.n_arg * t + omega).sin() + c0 + c1 * (t + psi).sin();
                if radial {
                    xj.hypot(o)
                } else {
                    xj
                }
            };
            let is = simpson_integral(|t| setup.h.eval(arg(t)) * (setup.n_test * t).sin(), 0.0, TAU, SEARCH_PANELS);
            let ic = simpson_integral(|t| setup.h.eval(arg(t)) * (setup.n_test * t).cos(), 0.0, TAU, SEARCH_PANELS);
            is.hypot(ic)
        })
        .reduce(|| f64::NEG_INFINITY, f64::max)
}

/// Empirical threshold amplitude for component `j`: doubles `A` from
/// [`INITIAL_AMPLITUDE`] until the worst family integral is at most
/// `2Δh_j + Γ`, then returns `2A`.
pub fn threshold_amplitude(spec: &SystemSpec, j: usize, gamma: f64) -> Result<f64, CertifyError> {
    let setup = search_setup(spec, j, gamma)?;
    let mut a = INITIAL_AMPLITUDE;
    let mut worst = f64::INFINITY;
    while a <= MAX_AMPLITUDE {
        worst = family_max(&setup, a);
        if worst <= setup.threshold {
            return Ok(2.0 * a);
        }
        a *= 2.0;
    }
    Err(CertifyError::SearchFailure { j, limit: MAX_AMPLITUDE, worst, threshold: setup.threshold })
}

/// Escape region data of one phase plane `(x_j, x_j')`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionComponent {
    pub j: usize,
    pub n: f64,
    pub phi1: f64,
    pub phi2: f64,
    /// Threshold amplitude `A` of `A sin(n t + ω)`.
    pub amplitude: f64,
    /// Phase-plane radius `A·max(1, n)` that guarantees amplitude `≥ A`.
    pub radius: f64,
    /// `V̄_j = vbar(n, radius)`.
    pub level: f64,
    /// Parallelogram corners for sign pairs (+,+), (+,−), (−,−), (−,+).
    pub vertices: [(f64, f64); 4],
}

impl RegionComponent {
    /// Coefficients `w` of `V_φ(z) = w·z`.
    pub fn normal(&self, phase: f64) -> (f64, f64) {
        (-self.n * phase.cos(), phase.sin())
    }

    pub fn v1(&self, zeta: f64, eta: f64) -> f64 {
        lyapunov_value(self.n, self.phi1, zeta, eta)
    }

    pub fn v2(&self, zeta: f64, eta: f64) -> f64 {
        lyapunov_value(self.n, self.phi2, zeta, eta)
    }

    /// `C_j^+ = {V_{φ¹} > V̄} ∪ {V_{φ²} > V̄}`.
    pub fn in_plus(&self, zeta: f64, eta: f64) -> bool {
        self.v1(zeta, eta) > self.level || self.v2(zeta, eta) > self.level
    }

    /// `C_j^− = {V_{φ¹} < −V̄} ∪ {V_{φ²} < −V̄}`.
    pub fn in_minus(&self, zeta: f64, eta: f64) -> bool {
        self.v1(zeta, eta) < -self.level || self.v2(zeta, eta) < -self.level
    }

    /// Closed parallelogram `ℝ² \ (C_j^+ ∪ C_j^−)`.
    pub fn in_parallelogram(&self, zeta: f64, eta: f64) -> bool {
        self.v1(zeta, eta).abs() <= self.level && self.v2(zeta, eta).abs() <= self.level
    }

    /// Point `z` with `V_{φ¹}(z) = s1` and `V_{φ²}(z) = s2`.
    pub fn solve(&self, s1: f64, s2: f64) -> (f64, f64) {
        let (a, b) = self.normal(self.phi1);
        let (c, d) = self.normal(self.phi2);
        let det = a * d - b * c;
        ((s1 * d - b * s2) / det, (a * s2 - c * s1) / det)
    }

    /// Direction of the sector of `C_j^+ ∩ C_j^−` where `V_{φ¹} > 0 > V_{φ²}`
    /// (`sign = 1`) or the opposite one (`sign = −1`).
    pub fn crossed_direction(&self, sign: f64) -> (f64, f64) {
        self.solve(sign, -sign)
    }

    /// Distance from the origin to the parallelogram boundary along angle `theta`.
    pub fn boundary_distance(&self, theta: f64) -> f64 {
        let u = (theta.cos(), theta.sin());
        let along = |w: (f64, f64)| self.level / (w.0 * u.0 + w.1 * u.1).abs();
        along(self.normal(self.phi1)).min(along(self.normal(self.phi2)))
    }

    pub fn max_vertex_norm(&self) -> f64 {
        self.vertices.iter().map(|(x, y)| x.hypot(*y)).fold(0.0, f64::max)
    }
}

/// Escape regions for the certified components.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RegionSet {
    pub components: Vec<RegionComponent>,
}

/// Region combinations of [`product_membership`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionKind {
    /// `C = Π_j (C_j^− ∪ C_j^+)`.
    Union,
    /// `C^+ = Π_j C_j^+`.
    Plus,
    /// `C^− = Π_j C_j^−`.
    Minus,
    /// `C^+ ∩ C^−`.
    Both,
}

impl RegionSet {
    pub fn component(&self, j: usize) -> Option<&RegionComponent> {
        self.components.iter().find(|c| c.j == j)
    }

    /// CSV with columns `j, n, phi1, phi2, vbar, amplitude`.
    pub fn to_csv(&self) -> String {
        let mut t = CsvTable::new(&["j", "n", "phi1", "phi2", "vbar", "amplitude"]);
        for c in &self.components {
            t.row(&[
                (c.j + 1).to_string(),
                fmt_g17(c.n),
                fmt_g17(c.phi1),
                fmt_g17(c.phi2),
                fmt_g17(c.level),
                fmt_g17(c.amplitude),
            ]);
        }
        t.finish()
    }
}

/// Build `C_j^±` for every certified row, with `φ_j^{1,2}` at
/// `center ∓ half_width/2` and level `V̄_j` from `amplitudes[j]`.
pub fn build_regions(
    spec: &SystemSpec,
    report: &CertificateReport,
    amplitudes: &[f64],
) -> Result<RegionSet, CertifyError> {
    if amplitudes.len() != spec.d {
        return Err(CertifyError::AmplitudeCount { expected: spec.d, got: amplitudes.len() });
    }
    let mut components = Vec::new();
    for row in report.certified_rows() {
        let window = row.window.ok_or(CertifyError::NotCertified { j: row.j })?;
        if window.half_width < MIN_HALF_WIDTH {
            return Err(CertifyError::DegenerateWindow { j: row.j, half_width: window.half_width });
        }
        let (phi1, phi2) = window.split_phases();
        let amplitude = amplitudes[row.j];
        let radius = amplitude * row.n.max(1.0);
        let level = vbar(row.n, radius);
        let mut comp = RegionComponent {
            j: row.j,
            n: row.n,
            phi1,
            phi2,
            amplitude,
            radius,
            level,
            vertices: [(0.0, 0.0); 4],
        };
        comp.vertices = [
            comp.solve(level, level),
            comp.solve(level, -level),
            comp.solve(-level, -level),
            comp.solve(-level, level),
        ];
        components.push(comp);
    }
    Ok(RegionSet { components })
}

/// Membership of the state's phase-plane projections in a product region.
/// Components without region data are unconstrained.
pub fn product_membership(regions: &RegionSet, s: &State, which: RegionKind) -> bool {
    if regions.components.is_empty() {
        return false;
    }
    regions.components.iter().all(|c| {
        let (z, e) = (s.x[c.j], s.v[c.j]);
        match which {
            RegionKind::Union => !c.in_parallelogram(z, e),
            RegionKind::Plus => c.in_plus(z, e),
            RegionKind::Minus => c.in_minus(z, e),
            RegionKind::Both => c.in_plus(z, e) && c.in_minus(z, e),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forcing::TrigPoly;
    use std::f64::consts::FRAC_PI_2;

    fn tanh(c: f64) -> BoundedExpr {
        BoundedExpr::scale(c, BoundedExpr::tanh(1.0, 0.0))
    }

    #[test]
    fn lyapunov_examples() {
        assert!((lyapunov_value(3.0, FRAC_PI_2, 7.0, 4.0) - 4.0).abs() < 1e-14);
        assert_eq!(lyapunov_value(3.0, 0.0, 7.0, 4.0), -21.0);
        assert!((lyapunov_value(2.0, PI / 4.0, 3.0, 4.0) + 1.414_213_562_373_095).abs() < 1e-14);
    }

    #[test]
    fn vbar_examples() {
        assert_eq!(vbar(1.0, 2.5), 2.5);
        assert_eq!(vbar(3.0, 2.0), 6.0);
        assert_eq!(vbar(3.0, 0.0), 0.0);
        assert_eq!(vbar(0.5, 2.0), 2.0);
    }

    #[test]
    fn vbar_matches_grid_maximization() {
        let (n, a) = (3.0, 2.0);
        let k = 2000;
        let mut best = f64::NEG_INFINITY;
        for i in 0..k {
            let phi = TAU * i as f64 / k as f64;
            for m in 0..k {
                let th = TAU * m as f64 / k as f64;
                best = best.max(lyapunov_value(n, phi, a * th.cos(), a * th.sin()));
            }
        }
        assert!((best - vbar(n, a)).abs() < 1e-3);
    }

    #[test]
    fn global_scalar_examples() {
        let s = SystemSpec::scalar(1.0, tanh(0.1), TrigPoly::sine(1, 1.0));
        let r = check_global_scalar(&s).unwrap();
        assert!(r.certified);
        let row = &r.rows[0];
        assert!((row.span - 0.2).abs() < 1e-15);
        assert!((row.gain - PI).abs() < 1e-15);
        assert!((row.margin.unwrap() - 2.741_592_653_589_793).abs() < 1e-14);
        assert_eq!(row.phase, Some(0.0));

        let s = SystemSpec::scalar(1.0, tanh(1.0), TrigPoly::sine(1, 1.0));
        let r = check_global_scalar(&s).unwrap();
        assert!(!r.certified);
        assert!(r.rows[0].slack < 0.0);

        let s = SystemSpec::scalar(2.0, BoundedExpr::zero(), TrigPoly::sine(1, 1.0));
        let r = check_global_scalar(&s).unwrap();
        assert!(!r.certified);
        assert_eq!(r.rows[0].gain, 0.0);
    }

    #[test]
    fn global_scalar_needs_resonance_and_strict_slack() {
        let s = SystemSpec::scalar(1.5, BoundedExpr::zero(), TrigPoly::sine(1, 1.0));
        assert!(!check_global_scalar(&s).unwrap().certified);
        // 2·span equal to the gain is not strict
        let s = SystemSpec::scalar(1.0, BoundedExpr::scale(PI / 4.0, BoundedExpr::sin(1.0, 0.0)), TrigPoly::sine(1, 1.0));
        assert!(!check_global_scalar(&s).unwrap().certified);
    }

    #[test]
    fn global_scalar_existential_and_permutation() {
        let s = SystemSpec::new(
            vec![1.0, 2.0],
            Coupling::General {
                terms: vec![
                    vec![tanh(1.0), BoundedExpr::zero()],
                    vec![tanh(0.1), BoundedExpr::zero()],
                ],
            },
            vec![TrigPoly::sine(1, 1.0), TrigPoly::sine(2, 1.0)],
        );
        let r = check_global_scalar(&s).unwrap();
        assert!(r.certified);
        assert!(!r.rows[0].certified && r.rows[1].certified);
        let swapped = SystemSpec::new(
            vec![2.0, 1.0],
            Coupling::General {
                terms: vec![
                    vec![BoundedExpr::zero(), tanh(0.1)],
                    vec![BoundedExpr::zero(), tanh(1.0)],
                ],
            },
            vec![TrigPoly::sine(2, 1.0), TrigPoly::sine(1, 1.0)],
        );
        let r2 = check_global_scalar(&swapped).unwrap();
        assert_eq!(r2.certified, r.certified);
        assert_eq!(r2.rows[0].slack, r.rows[1].slack);
        assert_eq!(r2.rows[1].slack, r.rows[0].slack);
    }

    fn diag_matrix(p: Vec<TrigPoly>, h: Vec<BoundedExpr>) -> MatrixSpec {
        MatrixSpec { a: vec![vec![1.0, 0.0], vec![0.0, 4.0]], h, p }
    }

    #[test]
    fn global_matrix_examples() {
        let m = diag_matrix(vec![TrigPoly::sine(1, 1.0), TrigPoly::zero()], vec![BoundedExpr::zero(); 2]);
        let r = check_global_matrix(&m, 0, Some(0.0), 1.0).unwrap();
        assert!(r.certified);
        let w = r.matrix.as_ref().unwrap();
        assert_eq!(w.lhs, 0.0);
        assert!((w.rhs - PI).abs() < 1e-15);
        assert!((r.margin.unwrap() - PI).abs() < 1e-15);

        let m = diag_matrix(vec![TrigPoly::sine(2, 1.0), TrigPoly::zero()], vec![BoundedExpr::zero(); 2]);
        let r = check_global_matrix(&m, 0, Some(0.0), 1.0).unwrap();
        assert!(!r.certified);
        assert_eq!(r.matrix.unwrap().rhs, 0.0);
    }

    #[test]
    fn global_matrix_homogeneous_in_amplitude() {
        let m = diag_matrix(
            vec![TrigPoly::new(0.0, vec![0.3], vec![1.0]), TrigPoly::sine(2, 0.5)],
            vec![tanh(0.05), tanh(0.05)],
        );
        let r1 = check_global_matrix(&m, 0, None, 1.0).unwrap();
        let r5 = check_global_matrix(&m, 0, None, 5.0).unwrap();
        assert!(r1.certified && r5.certified);
        assert!((r5.margin.unwrap() - 5.0 * r1.margin.unwrap()).abs() < 1e-12);
        assert!(matches!(check_global_matrix(&m, 0, None, 0.0), Err(CertifyError::BadAmplitude(_))));
    }

    #[test]
    fn global_matrix_diagonal_reduces_to_scalar_comparison() {
        let h = vec![tanh(0.1), tanh(0.2)];
        let m = diag_matrix(vec![TrigPoly::zero(), TrigPoly::new(0.0, vec![1.0], vec![0.0, 1.5])], h.clone());
        let r = check_global_matrix(&m, 1, None, 1.0).unwrap();
        let w = r.matrix.unwrap();
        let sup_h = (0.1f64.powi(2) + 0.2f64.powi(2)).sqrt();
        assert!((w.lhs - 4.0 * sup_h).abs() < 1e-15);
        assert!((w.rhs - m.p[1].fourier_gain(2)).abs() < 1e-14);
    }

    #[test]
    fn global_matrix_rejects_non_resonant_mode() {
        let m = MatrixSpec {
            a: vec![vec![2.0, 1.0], vec![1.0, 2.0]],
            h: vec![BoundedExpr::zero(); 2],
            p: vec![TrigPoly::sine(1, 1.0); 2],
        };
        assert!(matches!(
            check_global_matrix(&m, 1, None, 1.0),
            Err(CertifyError::System(SystemError::NonResonantMode { .. }))
        ));
    }

    #[test]
    fn global_matrix_orients_phase() {
        let m = diag_matrix(vec![TrigPoly::sine(1, -1.0), TrigPoly::zero()], vec![BoundedExpr::zero(); 2]);
        let r = check_global_matrix(&m, 0, Some(0.0), 1.0).unwrap();
        let w = r.matrix.unwrap();
        assert!(r.certified);
        assert!((w.phase - PI).abs() < 1e-15);
        assert!((w.rhs - PI).abs() < 1e-14);
    }

    fn cyclic2(h1: BoundedExpr, h2: BoundedExpr, n: Vec<f64>) -> SystemSpec {
        SystemSpec::cyclic(n, vec![h1, h2], vec![TrigPoly::sine(1, 1.0), TrigPoly::sine(1, 1.0)])
    }

    #[test]
    fn cyclic_examples() {
        let r = check_cyclic(&cyclic2(tanh(0.1), tanh(0.1), vec![1.0, 1.0])).unwrap();
        assert!(r.certified);
        for row in &r.rows {
            assert!((row.span - 0.2).abs() < 1e-15);
            assert!((row.gain - PI).abs() < 1e-15);
        }
        let gamma = r.margin.unwrap();
        assert!((gamma - 0.25 * (PI - 0.4)).abs() < 1e-15);
        let w = r.rows[0].window.unwrap();
        assert!((w.threshold - 2.0 * (0.2 + gamma)).abs() < 1e-15);

        let r = check_cyclic(&cyclic2(BoundedExpr::atan(1.0, 0.0), tanh(0.1), vec![1.0, 1.0])).unwrap();
        assert!(!r.certified);
        assert!((r.rows[0].span - PI).abs() < 1e-15);

        let r = check_cyclic(&cyclic2(BoundedExpr::zero(), BoundedExpr::zero(), vec![1.0, 1.5])).unwrap();
        assert!(!r.certified);
        assert!(r.certified_rows().next().is_none());
        assert!(!r.notes.is_empty());
    }

    #[test]
    fn cyclic_rejects_other_couplings() {
        let s = SystemSpec::scalar(1.0, BoundedExpr::zero(), TrigPoly::sine(1, 1.0));
        assert!(matches!(check_cyclic(&s), Err(CertifyError::NotApplicable { .. })));
        assert!(matches!(check_radial(&s), Err(CertifyError::NotApplicable { .. })));
    }

    #[test]
    fn radial_examples() {
        let th = BoundedExpr::tanh(1.0, 0.0);
        let s = SystemSpec::radial(vec![1.0, 2.0], vec![th.clone(), th.clone()], vec![TrigPoly::sine(1, 1.0), TrigPoly::sine(2, 0.01)]);
        let r = check_radial(&s).unwrap();
        assert!(r.certified);
        assert!(r.rows.iter().all(|row| row.span == 0.0 && row.certified));

        let sn = BoundedExpr::sin(1.0, 0.0);
        let s = SystemSpec::radial(vec![1.0, 1.0], vec![sn.clone(), sn], vec![TrigPoly::sine(1, 1.0); 2]);
        let r = check_radial(&s).unwrap();
        assert!(!r.certified);
        assert_eq!(r.rows[0].span, 2.0);

        let s = SystemSpec::radial(
            vec![1.0, 2f64.sqrt()],
            vec![th.clone(), th],
            vec![TrigPoly::sine(1, 1.0), TrigPoly::sine(1, 1.0)],
        );
        let r = check_radial(&s).unwrap();
        assert!(r.certified);
        let js: Vec<usize> = r.certified_rows().map(|row| row.j).collect();
        assert_eq!(js, vec![0]);
        assert!((r.margin.unwrap() - PI / 4.0).abs() < 1e-15);
    }

    #[test]
    fn amplitude_search_constant_coupling() {
        let c = BoundedExpr::constant(0.7);
        let s = SystemSpec::cyclic(vec![1.0, 1.0], vec![c.clone(), c], vec![TrigPoly::sine(1, 1.0); 2]);
        let r = check_cyclic(&s).unwrap();
        let a = threshold_amplitude(&s, 0, r.margin.unwrap()).unwrap();
        assert_eq!(a, 2.0 * INITIAL_AMPLITUDE);
        assert!(amplitude_family_max(&s, 0, r.margin.unwrap(), 1.0).unwrap() < 1e-9);
    }

    #[test]
    fn amplitude_search_terminates_when_limits_exist() {
        // a bump with equal limits: the family integral only drops below Γ
        // once the large component sweeps through the bump quickly
        let bump = BoundedExpr::sum(vec![
            BoundedExpr::scale(0.5, BoundedExpr::tanh(1.0, 3.0)),
            BoundedExpr::scale(-0.5, BoundedExpr::tanh(1.0, -3.0)),
        ]);
        let s = SystemSpec::cyclic(vec![1.0, 1.0], vec![bump.clone(), bump], vec![TrigPoly::sine(1, 0.1); 2]);
        let r = check_cyclic(&s).unwrap();
        assert!(r.certified);
        let gamma = r.margin.unwrap();
        let a = threshold_amplitude(&s, 0, gamma).unwrap();
        assert!(a > 2.0);
        assert!(amplitude_family_max(&s, 0, gamma, a / 2.0).unwrap() <= gamma);
        assert!(amplitude_family_max(&s, 0, gamma, a / 4.0).unwrap() > gamma);
    }

    #[test]
    fn monotone_coupling_passes_at_first_candidate() {
        // ∫ atan(·) sin ≤ 2π = 2Δh for every argument
        let h = BoundedExpr::atan(1.0, 0.0);
        let s = SystemSpec::cyclic(vec![1.0, 1.0], vec![h.clone(), h], vec![TrigPoly::sine(1, 2.2); 2]);
        let gamma = check_cyclic(&s).unwrap().margin.unwrap();
        assert_eq!(threshold_amplitude(&s, 0, gamma).unwrap(), 2.0 * INITIAL_AMPLITUDE);
    }

    fn regions_fixture() -> (SystemSpec, RegionSet) {
        let s = cyclic2(tanh(0.1), tanh(0.1), vec![1.0, 2.0]);
        let s = SystemSpec { p: vec![TrigPoly::sine(1, 1.0), TrigPoly::sine(2, 1.0)], ..s };
        let r = check_cyclic(&s).unwrap();
        let regions = build_regions(&s, &r, &[2.0, 2.0]).unwrap();
        (s, regions)
    }

    #[test]
    fn regions_basic_geometry() {
        let (_, regions) = regions_fixture();
        assert_eq!(regions.components.len(), 2);
        for c in &regions.components {
            assert!(c.phi1 != c.phi2);
            let gap = crate::forcing::angular_distance(c.phi1, c.phi2);
            assert!(gap > 0.0 && gap < PI);
            assert!(c.in_parallelogram(0.0, 0.0));
            assert!(!c.in_plus(0.0, 0.0) && !c.in_minus(0.0, 0.0));
            for (k, &(z, e)) in c.vertices.iter().enumerate() {
                assert!(z.is_finite() && e.is_finite());
                let (s1, s2) = [(1.0, 1.0), (1.0, -1.0), (-1.0, -1.0), (-1.0, 1.0)][k];
                assert!((c.v1(z, e) - s1 * c.level).abs() < 1e-9 * c.level);
                assert!((c.v2(z, e) - s2 * c.level).abs() < 1e-9 * c.level);
            }
            // |V_φ(z)| ≤ max(1, n)|z| bounds the parallelogram from below
            assert!(c.max_vertex_norm() >= c.level / c.n.max(1.0));
            for i in 0..360 {
                let th = TAU * i as f64 / 360.0;
                let r = c.boundary_distance(th);
                assert!(r <= c.max_vertex_norm() * (1.0 + 1e-12));
                assert!(c.in_parallelogram(0.999 * r * th.cos(), 0.999 * r * th.sin()));
                assert!(!c.in_parallelogram(1.001 * r * th.cos(), 1.001 * r * th.sin()));
            }
        }
    }

    #[test]
    fn regions_illustrative_vertices() {
        let c = RegionComponent {
            j: 0,
            n: 1.0,
            phi1: FRAC_PI_2,
            phi2: 3.0 * PI / 4.0,
            amplitude: 5.0,
            radius: 5.0,
            level: 5.0,
            vertices: [(0.0, 0.0); 4],
        };
        // V_{π/2} = η, V_{3π/4} = (η + ζ)/√2
        let (z, e) = c.solve(5.0, 5.0);
        assert!((e - 5.0).abs() < 1e-12);
        assert!((z - (5.0 * 2f64.sqrt() - 5.0)).abs() < 1e-12);
    }

    #[test]
    fn region_symmetry_and_sectors() {
        let (_, regions) = regions_fixture();
        for c in &regions.components {
            for i in 0..2000 {
                let th = TAU * i as f64 / 2000.0;
                let r = 0.3 * c.level * (1 + i % 7) as f64;
                let (z, e) = (r * th.cos(), r * th.sin());
                assert_eq!(c.in_plus(z, e), c.in_minus(-z, -e));
                assert_eq!(c.in_parallelogram(z, e), !(c.in_plus(z, e) || c.in_minus(z, e)));
            }
            for sign in [1.0, -1.0] {
                let (dz, de) = c.crossed_direction(sign);
                for r in [1e3, 1e6, 1e9] {
                    let scale = r * c.level;
                    assert!(c.in_plus(scale * dz, scale * de) && c.in_minus(scale * dz, scale * de));
                }
            }
        }
    }

    #[test]
    fn product_membership_rules() {
        let (_, regions) = regions_fixture();
        let origin = State::at_origin(2);
        for k in [RegionKind::Union, RegionKind::Plus, RegionKind::Minus, RegionKind::Both] {
            assert!(!product_membership(&regions, &origin, k));
        }
        let deep: Vec<(f64, f64)> = regions
            .components
            .iter()
            .map(|c| {
                let (z, e) = c.solve(1.0, 1.0);
                (1e6 * c.level * z, 1e6 * c.level * e)
            })
            .collect();
        let s = State::new(0.0, vec![deep[0].0, deep[1].0], vec![deep[0].1, deep[1].1]);
        assert!(product_membership(&regions, &s, RegionKind::Union));
        assert!(product_membership(&regions, &s, RegionKind::Plus));
        assert!(!product_membership(&regions, &s, RegionKind::Minus));
        let mixed = State::new(0.0, vec![deep[0].0, 0.0], vec![deep[0].1, 0.0]);
        for k in [RegionKind::Union, RegionKind::Plus, RegionKind::Minus] {
            assert!(!product_membership(&regions, &mixed, k));
        }
    }

    #[test]
    fn regions_require_windows() {
        let s = cyclic2(tanh(0.1), tanh(0.1), vec![1.0, 1.0]);
        let r = check_cyclic(&s).unwrap();
        assert!(matches!(
            build_regions(&s, &r, &[1.0]),
            Err(CertifyError::AmplitudeCount { .. })
        ));
        let mut bad = r.clone();
        bad.rows[0].window.as_mut().unwrap().half_width = 1e-9;
        assert!(matches!(
            build_regions(&s, &bad, &[1.0, 1.0]),
            Err(CertifyError::DegenerateWindow { j: 0, .. })
        ));
        let csv = build_regions(&s, &r, &[1.0, 1.0]).unwrap().to_csv();
        assert!(csv.starts_with("j,n,phi1,phi2,vbar,amplitude\n"));
        assert_eq!(csv.lines().count(), 3);
    }
}
