//! Command implementations behind the `resonance` binary. Each command
//! writes its artifacts into the output directory and returns an
//! [`Outcome`] carrying the exit status and the files written.

use crate::certify::{lyapunov_value, RegionKind, RegionSet, product_membership};
use crate::diagnose::{
    classify_sections, default_escape_level, energy_check_all, growth_from_trace, section_growth, Direction,
    DiagnoseError, EnergyReport, GrowthReport,
};
use crate::integrate::{integrate_grid, period_grid, section_trace, trajectory_csv, IntegrateError, State};
use crate::report::{fmt_g17, CsvTable, Svg};
use crate::scenario::{Certification, InitialConditions, Scenario, ScenarioError};
use rayon::prelude::*;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CommandError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Certify(#[from] crate::certify::CertifyError),
    #[error(transparent)]
    Diagnose(#[from] DiagnoseError),
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Usage(String),
}

/// Exit status contract: 0 success/certified, 2 not certified, 1 error.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Success,
    NotCertified,
    Failure,
}

impl Status {
    pub fn code(self) -> u8 {
        match self {
            Status::Success => 0,
            Status::NotCertified => 2,
            Status::Failure => 1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub status: Status,
    pub files: Vec<PathBuf>,
    /// Human-readable lines for stderr (per-trajectory failures, flags).
    pub messages: Vec<String>,
}

/// Command-line overrides of scenario run parameters.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub tol: Option<f64>,
    pub k_max: Option<i64>,
    pub seed: Option<u64>,
}

impl Overrides {
    pub fn apply(&self, sc: &mut Scenario) {
        if let Some(t) = self.tol {
            sc.run.tol = t;
        }
        if let Some(k) = self.k_max {
            sc.run.k_max = k;
        }
        if let Some(s) = self.seed {
            sc.run.seed = s;
        }
        if let Some(o) = &self.out {
            sc.output_dir = Some(o.clone());
        }
    }
}

struct Writer {
    dir: PathBuf,
    name: String,
    files: Vec<PathBuf>,
}

impl Writer {
    fn new(sc: &Scenario) -> Result<Self, CommandError> {
        let dir = sc.output_dir.clone().unwrap_or_else(|| PathBuf::from("."));
        std::fs::create_dir_all(&dir).map_err(|source| CommandError::Write { path: dir.clone(), source })?;
        Ok(Writer { dir, name: sc.name.clone(), files: Vec::new() })
    }

    fn write(&mut self, suffix: &str, content: &str) -> Result<(), CommandError> {
        let path = self.dir.join(format!("{}.{suffix}", self.name));
        std::fs::write(&path, content).map_err(|source| CommandError::Write { path: path.clone(), source })?;
        self.files.push(path);
        Ok(())
    }
}

fn certification(sc: &Scenario) -> Result<Certification, CommandError> {
    Ok(Certification::compute(&sc.name, &sc.system, &sc.run)?)
}

/// States for commands that need regions only when sampling from them.
fn states_for(sc: &Scenario, cert: Option<&Certification>) -> Result<Vec<State>, CommandError> {
    let regions = cert.and_then(|c| c.regions.as_ref());
    Ok(sc.initial_states(regions)?)
}

fn needs_regions(sc: &Scenario) -> bool {
    matches!(sc.initial, InitialConditions::Region { .. })
}

/// Write `<name>.certificate.json`; exit 0 when certified, 2 otherwise.
pub fn cmd_certify(sc: &Scenario) -> Result<Outcome, CommandError> {
    let cert = certification(sc)?;
    let mut w = Writer::new(sc)?;
    w.write("certificate.json", &(cert.to_json() + "\n"))?;
    let status = if cert.certified { Status::Success } else { Status::NotCertified };
    let messages = vec![match cert.certified_by {
        Some(k) => format!("{}: certified ({})", sc.name, k.name()),
        None => format!("{}: not certified", sc.name),
    }];
    Ok(Outcome { status, files: w.files, messages })
}

/// Per-trajectory CSV and per-component phase portraits.
pub fn cmd_simulate(sc: &Scenario) -> Result<Outcome, CommandError> {
    let cert = if needs_regions(sc) { Some(certification(sc)?) } else { None };
    let states = states_for(sc, cert.as_ref())?;
    if sc.run.k_max < 1 {
        return Err(CommandError::Usage(format!("k_max must be at least 1, got {}", sc.run.k_max)));
    }
    let times = period_grid(0, sc.run.k_max, sc.run.samples_per_period.max(1));
    let tol = sc.run.tolerances();
    let runs: Vec<Result<Vec<State>, IntegrateError>> = states
        .par_iter()
        .map(|s0| {
            let mut out = vec![s0.clone()];
            out.extend(integrate_grid(&sc.system, s0, &times[1..], tol)?);
            Ok(out)
        })
        .collect();

    let mut w = Writer::new(sc)?;
    let mut messages = Vec::new();
    let mut failed = false;
    for (i, run) in runs.iter().enumerate() {
        match run {
            Ok(traj) => w.write(&format!("traj.{i}.csv"), &trajectory_csv(traj))?,
            Err(e) => {
                failed = true;
                messages.push(format!("trajectory {i}: {e}"));
            }
        }
    }
    let per = sc.run.samples_per_period.max(1);
    for j in 0..sc.system.d {
        let ok: Vec<&Vec<State>> = runs.iter().filter_map(|r| r.as_ref().ok()).collect();
        if ok.is_empty() {
            break;
        }
        let svg = phase_portrait(&ok, j, per, &sc.name);
        w.write(&format!("phase.{}.svg", j + 1), &svg)?;
    }
    let status = if failed { Status::Failure } else { Status::Success };
    Ok(Outcome { status, files: w.files, messages })
}

fn phase_portrait(runs: &[&Vec<State>], j: usize, per_period: usize, name: &str) -> String {
    let (mut xr, mut vr) = ((f64::INFINITY, f64::NEG_INFINITY), (f64::INFINITY, f64::NEG_INFINITY));
    for s in runs.iter().flat_map(|r| r.iter()) {
        xr = (xr.0.min(s.x[j]), xr.1.max(s.x[j]));
        vr = (vr.0.min(s.v[j]), vr.1.max(s.v[j]));
    }
    let pad = |r: (f64, f64)| {
        let m = 0.05 * (r.1 - r.0).max(1e-9);
        (r.0 - m, r.1 + m)
    };
    let mut svg = Svg::new(600.0, 600.0, pad(xr), pad(vr));
    for run in runs {
        let pts: Vec<(f64, f64)> = run.iter().map(|s| (s.x[j], s.v[j])).collect();
        svg.polyline(&pts, "steelblue");
        for s in run.iter().step_by(per_period) {
            svg.circle(s.x[j], s.v[j], 2.5, "crimson");
        }
    }
    svg.finish(&format!("{name}: component {} phase plane", j + 1))
}

/// One CSV row per section `k` per component with `ΔV_k`, `kΓ`, margin and
/// the energy data of the period ending at `2kπ`.
pub fn cmd_trace(sc: &Scenario) -> Result<Outcome, CommandError> {
    let cert = certification(sc)?;
    let states = states_for(sc, Some(&cert))?;
    let k_max = sc.run.k_max;
    if k_max < 1 {
        return Err(CommandError::Usage(format!("k_max must be at least 1, got {k_max}")));
    }
    let tol = sc.run.tolerances();
    let primary = cert.primary();
    let traces: Vec<Result<(GrowthReport, Vec<EnergyReport>), CommandError>> = states
        .par_iter()
        .map(|s0| {
            let trace = section_trace(&sc.system, s0, 0, k_max, tol)?;
            let growth = match primary {
                Some(r) => growth_from_trace(&sc.system, &trace, r, Direction::Forward)?,
                None => uncertified_growth(sc, &trace),
            };
            let energy = energy_check_all(&sc.system, s0, k_max, tol)?;
            Ok((growth, energy))
        })
        .collect();

    let mut t = CsvTable::new(&[
        "i", "j", "k", "delta_v", "k_gamma", "margin", "e_start", "e_min", "gronwall_ratio",
    ]);
    let mut messages = Vec::new();
    let mut failed = false;
    if primary.is_none() {
        messages.push(format!("{}: no certificate; k_gamma and margin are nan", sc.name));
    }
    let mut summary = Vec::new();
    for (i, res) in traces.iter().enumerate() {
        let (growth, energy) = match res {
            Ok(v) => v,
            Err(e) => {
                failed = true;
                messages.push(format!("trajectory {i}: {e}"));
                continue;
            }
        };
        for c in &growth.components {
            let e = energy.iter().find(|e| e.j == c.j).or_else(|| energy.first());
            for r in &c.rows {
                let period = e.and_then(|e| e.periods.get((r.k - 1) as usize));
                let cell = |f: fn(&crate::diagnose::EnergyPeriod) -> f64| period.map_or("nan".into(), |p| fmt_g17(f(p)));
                t.row(&[
                    i.to_string(),
                    c.j.map_or(0, |j| j + 1).to_string(),
                    r.k.to_string(),
                    fmt_g17(r.delta_v),
                    fmt_g17(r.k_gamma),
                    fmt_g17(r.margin),
                    cell(|p| p.e_start),
                    cell(|p| p.e_min),
                    cell(|p| p.ratio),
                ]);
            }
        }
        summary.push(serde_json::json!({
            "index": i,
            "violations": growth.violations(),
            "components": growth.components.iter().map(|c| serde_json::json!({
                "j": c.j.map(|j| j + 1),
                "phase": c.phase,
                "gamma": c.gamma,
                "slope": c.slope,
                "violations": c.violations,
            })).collect::<Vec<_>>(),
            "energy": energy.iter().map(|e| serde_json::json!({
                "j": e.j.map(|j| j + 1),
                "m": e.m,
                "max_derivative_ratio": e.max_derivative_ratio,
                "derivative_ok": e.derivative_ok,
                "gronwall_ok": e.gronwall_ok,
            })).collect::<Vec<_>>(),
        }));
    }
    let mut w = Writer::new(sc)?;
    w.write("trace.csv", &t.finish())?;
    let doc = serde_json::json!({
        "name": sc.name,
        "certificate": primary.map(|r| r.kind.name()),
        "k_max": k_max,
        "trajectories": summary,
    });
    w.write("trace.json", &(serde_json::to_string_pretty(&doc).expect("json") + "\n"))?;
    let status = if failed { Status::Failure } else { Status::Success };
    Ok(Outcome { status, files: w.files, messages })
}

/// `ΔV_k` at the optimal phase of each resonant component, with no bound.
fn uncertified_growth(sc: &Scenario, trace: &crate::integrate::SectionTrace) -> GrowthReport {
    let spec = &sc.system;
    let components = (0..spec.d)
        .filter_map(|j| {
            let m = spec.resonant_frequency(j)?;
            let phase = spec.p[j].optimal_phase(m).unwrap_or(0.0);
            let n = spec.n[j];
            let mut g = section_growth(
                trace,
                |s| lyapunov_value(n, phase, s.x[j], s.v[j]),
                Some(j),
                phase,
                f64::NAN,
                Direction::Forward,
            );
            g.violations = 0;
            Some(g)
        })
        .collect();
    GrowthReport {
        kind: crate::certify::CertificateKind::GlobalScalar,
        direction: Direction::Forward,
        k_max: trace.k_max,
        components,
    }
}

/// Classification and region membership over a grid in one phase plane.
pub fn cmd_basin(sc: &Scenario) -> Result<Outcome, CommandError> {
    let InitialConditions::Grid { component, x, v, .. } = &sc.initial else {
        return Err(CommandError::Usage("basin needs grid initial conditions".into()));
    };
    let (j, xs, vs) = (*component, x.values(), v.values());
    let cert = certification(sc)?;
    let states = sc.initial_states(None)?;
    let k = sc.run.k_max;
    if k < 1 {
        return Err(CommandError::Usage(format!("k_max must be at least 1, got {k}")));
    }
    let tol = sc.run.tolerances();
    let level = sc.run.escape_level;
    let results: Vec<Result<crate::diagnose::Classification, CommandError>> = states
        .par_iter()
        .map(|s0| {
            let trace = section_trace(&sc.system, s0, -k, k, tol)?;
            let lvl = level.unwrap_or_else(|| default_escape_level(s0));
            Ok(classify_sections(&trace, lvl))
        })
        .collect();

    let empty = RegionSet::default();
    let regions = cert.regions.as_ref().unwrap_or(&empty);
    let mut t = CsvTable::new(&[
        "index", "x", "v", "label", "component_label", "in_c", "in_plus", "in_minus", "in_parallelogram",
    ]);
    let mut labels = Vec::with_capacity(states.len());
    let mut messages = Vec::new();
    let mut failed = false;
    for (i, (s0, res)) in states.iter().zip(&results).enumerate() {
        let flag = |b: bool| if b { "1" } else { "0" }.to_string();
        let in_par = regions.component(j).map(|c| c.in_parallelogram(s0.x[j], s0.v[j]));
        let (label, comp) = match res {
            Ok(c) => (c.label.name().to_string(), c.components[j].name().to_string()),
            Err(e) => {
                failed = true;
                messages.push(format!("grid point {i}: {e}"));
                ("error".to_string(), "error".to_string())
            }
        };
        labels.push(label.clone());
        t.row(&[
            i.to_string(),
            fmt_g17(s0.x[j]),
            fmt_g17(s0.v[j]),
            label,
            comp,
            flag(product_membership(regions, s0, RegionKind::Union)),
            flag(product_membership(regions, s0, RegionKind::Plus)),
            flag(product_membership(regions, s0, RegionKind::Minus)),
            in_par.map_or("nan".to_string(), flag),
        ]);
    }
    if regions.components.is_empty() {
        messages.push(format!("{}: no escape regions; membership columns are 0", sc.name));
    }
    let mut w = Writer::new(sc)?;
    w.write("basin.csv", &t.finish())?;
    w.write("basin.svg", &basin_svg(sc, regions, j, &xs, &vs, &labels))?;
    let status = if failed { Status::Failure } else { Status::Success };
    Ok(Outcome { status, files: w.files, messages })
}

fn label_color(label: &str) -> &'static str {
    match label {
        "both" => "#7b3294",
        "unbounded-future" => "#d7191c",
        "unbounded-past" => "#2c7bb6",
        "undetermined" => "#e0e0e0",
        _ => "#000000",
    }
}

fn basin_svg(sc: &Scenario, regions: &RegionSet, j: usize, xs: &[f64], vs: &[f64], labels: &[String]) -> String {
    let cell = |vals: &[f64]| if vals.len() > 1 { (vals[1] - vals[0]).abs() } else { 1.0 };
    let (dx, dv) = (cell(xs), cell(vs));
    let xr = (xs[0] - 0.5 * dx, xs[xs.len() - 1] + 0.5 * dx);
    let vr = (vs[0] - 0.5 * dv, vs[vs.len() - 1] + 0.5 * dv);
    let mut svg = Svg::new(600.0, 600.0, xr, vr);
    for (iv, &vv) in vs.iter().enumerate() {
        for (ix, &xx) in xs.iter().enumerate() {
            let label = &labels[iv * xs.len() + ix];
            svg.rect(xx - 0.5 * dx, vv - 0.5 * dv, xx + 0.5 * dx, vv + 0.5 * dv, label_color(label));
        }
    }
    if let Some(c) = regions.component(j) {
        for phase in [c.phi1, c.phi2] {
            for level in [c.level, -c.level] {
                if let Some((a, b)) = svg.clipped_line(c.normal(phase), level) {
                    svg.line(a, b, "black");
                }
            }
        }
    }
    svg.finish(&format!("{}: component {} basin", sc.name, j + 1))
}

/// `<name>.regions.csv` for an asymptotic certificate.
pub fn cmd_regions(sc: &Scenario) -> Result<Outcome, CommandError> {
    let cert = certification(sc)?;
    let mut w = Writer::new(sc)?;
    match &cert.regions {
        Some(r) => {
            w.write("regions.csv", &r.to_csv())?;
            Ok(Outcome { status: Status::Success, files: w.files, messages: Vec::new() })
        }
        None => Ok(Outcome {
            status: Status::NotCertified,
            files: w.files,
            messages: vec![format!("{}: no asymptotic certificate, no regions", sc.name)],
        }),
    }
}

/// Which command to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Certify,
    Simulate,
    Trace,
    Basin,
    Regions,
}

/// Load a scenario, apply overrides and run a command.
pub fn run(command: Command, path: &Path, overrides: &Overrides) -> Result<Outcome, CommandError> {
    let mut sc = Scenario::load(path)?;
    overrides.apply(&mut sc);
    sc.run.tolerances().check().map_err(CommandError::Integrate)?;
    match command {
        Command::Certify => cmd_certify(&sc),
        Command::Simulate => cmd_simulate(&sc),
        Command::Trace => cmd_trace(&sc),
        Command::Basin => cmd_basin(&sc),
        Command::Regions => cmd_regions(&sc),
    }
}
