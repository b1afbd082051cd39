//! Scenario files: a system, a set of initial conditions and run parameters
//! in one JSON document, plus the certification pipeline shared by the
//! command-line tools.

use crate::certify::{
    build_regions, check_cyclic, check_global_matrix, check_global_scalar, check_radial, threshold_amplitude,
    CertificateKind, CertificateReport, CertifyError, RegionKind, RegionSet,
};
use crate::integrate::{State, Tolerances};
use crate::system::{Coupling, SystemSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Largest number of initial conditions a scenario may expand to.
pub const MAX_GRID_POINTS: usize = 1_000_000;
/// Rejection sampling attempts per requested region sample.
const REGION_ATTEMPTS: usize = 10_000;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("invalid system: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("no initial conditions")]
    NoInitialConditions,
    #[error("grid of {0} points exceeds the limit of {MAX_GRID_POINTS}")]
    GridTooLarge(usize),
    #[error("initial condition {index} has dimension {got}, expected {expected}")]
    Dimension { index: usize, expected: usize, got: usize },
    #[error("grid component {j} out of range for d = {d}")]
    GridComponent { j: usize, d: usize },
    #[error("region sampling needs a certificate with escape regions")]
    NoRegions,
    #[error("could not sample a point in the {0:?} region")]
    RegionSampling(RegionKind),
    #[error(transparent)]
    Certify(#[from] CertifyError),
}

/// Initial state at `t = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialState {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
}

impl InitialState {
    pub fn to_state(&self) -> State {
        State::new(0.0, self.x.clone(), self.v.clone())
    }
}

/// `count` evenly spaced values on `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl Axis {
    pub fn values(&self) -> Vec<f64> {
        match self.count {
            0 => Vec::new(),
            1 => vec![0.5 * (self.lo + self.hi)],
            c => (0..c).map(|i| self.lo + (self.hi - self.lo) * i as f64 / (c - 1) as f64).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialConditions {
    Explicit {
        states: Vec<InitialState>,
    },
    /// Grid over the phase plane of one component, others fixed at `base`.
    Grid {
        component: usize,
        x: Axis,
        v: Axis,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        base: Option<InitialState>,
    },
    /// Uniform in the ball `|(x, v)| ≤ radius`.
    Random {
        count: usize,
        radius: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    /// Points of `C^+` or `C^−`: each component with escape regions gets a
    /// random direction inside the region, at `scale` times the distance
    /// from the origin to the parallelogram boundary along that direction;
    /// other components are uniform in the disk of radius `other_radius`.
    Region {
        region: RegionKind,
        count: usize,
        #[serde(default = "default_region_scale")]
        scale: f64,
        #[serde(default = "default_other_radius")]
        other_radius: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
}

fn default_region_scale() -> f64 {
    1.1
}

fn default_other_radius() -> f64 {
    1.0
}

/// Run parameters; all optional in the file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunParams {
    #[serde(default = "default_k_max")]
    pub k_max: i64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub escape_level: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    /// Samples per period in trajectory output.
    #[serde(default = "default_samples")]
    pub samples_per_period: usize,
    /// Matrix form: eigen-index of the test mode (all resonant modes when absent).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<usize>,
    #[serde(default = "default_mode_amplitude")]
    pub mode_amplitude: f64,
}

fn default_k_max() -> i64 {
    50
}

fn default_tol() -> f64 {
    1e-10
}

fn default_samples() -> usize {
    64
}

fn default_mode_amplitude() -> f64 {
    1.0
}

impl Default for RunParams {
    fn default() -> Self {
        RunParams {
            k_max: default_k_max(),
            tol: default_tol(),
            escape_level: None,
            seed: 0,
            samples_per_period: default_samples(),
            mode: None,
            mode_amplitude: default_mode_amplitude(),
        }
    }
}

impl RunParams {
    pub fn tolerances(&self) -> Tolerances {
        Tolerances::uniform(self.tol)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub system: SystemSpec,
    pub initial: InitialConditions,
    #[serde(default)]
    pub run: RunParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl Scenario {
    /// Parse and validate a scenario document.
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let sc: Scenario = serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        let report = sc.system.validate();
        if !report.is_valid() {
            return Err(ScenarioError::Invalid(report.issues));
        }
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ScenarioError::Io { path: path.to_path_buf(), source })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    fn seed_for(&self, own: Option<u64>) -> u64 {
        own.unwrap_or(self.run.seed)
    }

    /// Expand the initial-condition description into states at `t = 0`.
    /// `regions` is only consulted by region sampling.
    pub fn initial_states(&self, regions: Option<&RegionSet>) -> Result<Vec<State>, ScenarioError> {
        let d = self.system.d;
        let states = match &self.initial {
            InitialConditions::Explicit { states } => {
                for (index, s) in states.iter().enumerate() {
                    if s.x.len() != d || s.v.len() != d {
                        return Err(ScenarioError::Dimension { index, expected: d, got: s.x.len().max(s.v.len()) });
                    }
                }
                states.iter().map(InitialState::to_state).collect()
            }
            InitialConditions::Grid { component, x, v, base } => {
                if *component >= d {
                    return Err(ScenarioError::GridComponent { j: *component, d });
                }
                let total = x.count.saturating_mul(v.count);
                if total > MAX_GRID_POINTS {
                    return Err(ScenarioError::GridTooLarge(total));
                }
                let base = match base {
                    Some(b) if b.x.len() != d || b.v.len() != d => {
                        return Err(ScenarioError::Dimension { index: 0, expected: d, got: b.x.len().max(b.v.len()) })
                    }
                    Some(b) => b.to_state(),
                    None => State::at_origin(d),
                };
                let (xs, vs) = (x.values(), v.values());
                let mut out = Vec::with_capacity(total);
                for &vv in &vs {
                    for &xx in &xs {
                        let mut s = base.clone();
                        s.x[*component] = xx;
                        s.v[*component] = vv;
                        out.push(s);
                    }
                }
                out
            }
            InitialConditions::Random { count, radius, seed } => {
                if *count > MAX_GRID_POINTS {
                    return Err(ScenarioError::GridTooLarge(*count));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed_for(*seed));
                (0..*count).map(|_| random_in_ball(&mut rng, d, *radius)).collect()
            }
            InitialConditions::Region { region, count, scale, other_radius, seed } => {
                if *count > MAX_GRID_POINTS {
                    return Err(ScenarioError::GridTooLarge(*count));
                }
                let regions = regions.filter(|r| !r.components.is_empty()).ok_or(ScenarioError::NoRegions)?;
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed_for(*seed));
                (0..*count)
                    .map(|_| sample_region(&mut rng, d, regions, *region, *scale, *other_radius))
                    .collect::<Result<_, _>>()?
            }
        };
        if states.is_empty() {
            return Err(ScenarioError::NoInitialConditions);
        }
        Ok(states)
    }
}

fn random_in_ball(rng: &mut ChaCha8Rng, d: usize, radius: f64) -> State {
    loop {
        let y: Vec<f64> = (0..2 * d).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        if y.iter().map(|v| v * v).sum::<f64>() <= 1.0 {
            let y: Vec<f64> = y.iter().map(|v| v * radius).collect();
            return State::from_slice(0.0, &y, d);
        }
    }
}

fn sample_region(
    rng: &mut ChaCha8Rng,
    d: usize,
    regions: &RegionSet,
    which: RegionKind,
    scale: f64,
    other_radius: f64,
) -> Result<State, ScenarioError> {
    let mut s = State::at_origin(d);
    for j in 0..d {
        match regions.component(j) {
            Some(c) => {
                let inside = |z: f64, e: f64| match which {
                    RegionKind::Plus => c.in_plus(z, e),
                    RegionKind::Minus => c.in_minus(z, e),
                    RegionKind::Both => c.in_plus(z, e) && c.in_minus(z, e),
                    RegionKind::Union => !c.in_parallelogram(z, e),
                };
                let point = (0..REGION_ATTEMPTS)
                    .map(|_| {
                        let th = rng.gen_range(0.0..TAU);
                        let r = scale * c.boundary_distance(th);
                        (r * th.cos(), r * th.sin())
                    })
                    .find(|&(z, e)| inside(z, e))
                    .ok_or(ScenarioError::RegionSampling(which))?;
                s.x[j] = point.0;
                s.v[j] = point.1;
            }
            None => {
                let (z, e) = loop {
                    let z: f64 = rng.gen_range(-1.0..=1.0);
                    let e: f64 = rng.gen_range(-1.0..=1.0);
                    if z * z + e * e <= 1.0 {
                        break (z * other_radius, e * other_radius);
                    }
                };
                s.x[j] = z;
                s.v[j] = e;
            }
        }
    }
    Ok(s)
}

/// All certificate checks that apply to a system, with escape regions when
/// an asymptotic certificate holds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certification {
    pub name: String,
    pub certified: bool,
    /// Kind of the first certified report.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certified_by: Option<CertificateKind>,
    pub reports: Vec<CertificateReport>,
    /// Threshold amplitudes per component used for the regions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitudes: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regions: Option<RegionSet>,
}

impl Certification {
    /// The report that certified the system, if any.
    pub fn primary(&self) -> Option<&CertificateReport> {
        self.reports.iter().find(|r| r.certified)
    }

    /// Run the checks for the coupling kind: global scalar for general
    /// coupling; cyclic or radial followed by global scalar; global matrix
    /// over the requested or all resonant modes.
    pub fn compute(name: &str, spec: &SystemSpec, run: &RunParams) -> Result<Self, CertifyError> {
        let mut reports = Vec::new();
        let mut amplitudes = None;
        let mut regions = None;
        match &spec.coupling {
            Coupling::General { .. } => reports.push(check_global_scalar(spec)?),
            Coupling::Cyclic { .. } | Coupling::Radial { .. } => {
                let asym = if matches!(spec.coupling, Coupling::Cyclic { .. }) {
                    check_cyclic(spec)?
                } else {
                    check_radial(spec)?
                };
                if let Some(gamma) = asym.margin {
                    let mut a = vec![0.0; spec.d];
                    for row in asym.certified_rows() {
                        a[row.j] = threshold_amplitude(spec, row.j, gamma)?;
                    }
                    if matches!(spec.coupling, Coupling::Cyclic { .. }) {
                        // h_j is driven by x_{j+1}: one amplitude for all components
                        let common = a.iter().copied().fold(0.0, f64::max);
                        a.iter_mut().for_each(|v| *v = common);
                    }
                    regions = Some(build_regions(spec, &asym, &a)?);
                    amplitudes = Some(a);
                }
                reports.push(asym);
                reports.push(check_global_scalar(spec)?);
            }
            Coupling::Matrix { .. } => {
                let mspec = spec.matrix_spec().expect("matrix coupling has a matrix spec");
                let modes: Vec<usize> = match run.mode {
                    Some(m) => vec![m],
                    None => spec.validate().resonant_modes.iter().map(|m| m.index).collect(),
                };
                for m in modes {
                    reports.push(check_global_matrix(&mspec, m, None, run.mode_amplitude)?);
                }
                // best certified mode first
                reports.sort_by(|a, b| {
                    let key = |r: &CertificateReport| r.margin.unwrap_or(f64::NEG_INFINITY);
                    key(b).total_cmp(&key(a))
                });
            }
        }
        let certified_by = reports.iter().find(|r| r.certified).map(|r| r.kind);
        Ok(Certification {
            name: name.to_string(),
            certified: certified_by.is_some(),
            certified_by,
            reports,
            amplitudes,
            regions,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("certification serializes")
    }
}
