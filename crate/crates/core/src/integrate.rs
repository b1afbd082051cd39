//! Adaptive Dormand–Prince 5(4) integration, Poincaré sections at `t = 2kπ`,
//! and the variation-of-constants split `x_j = A_j sin(n_j t + ω_j) + σ_j`.

use crate::forcing::normalize_angle;
use crate::report::fmt_g17;
use crate::system::SystemSpec;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use thiserror::Error;

/// Smallest step the controller may propose before giving up.
pub const MIN_STEP: f64 = 1e-14;
/// Grid size used by [`voc_decompose`].
pub const VOC_GRID_POINTS: usize = 2048;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IntegrateError {
    #[error("tolerances must lie in [1e-13, 1e-3], got rel = {rel:e}, abs = {abs:e}")]
    InvalidTolerance { rel: f64, abs: f64 },
    #[error("step size underflow (h = {h:e}) at t = {t}")]
    StepUnderflow { t: f64, h: f64 },
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
    #[error("step budget of {max_steps} exhausted at t = {t}")]
    TooManySteps { t: f64, max_steps: usize },
    #[error("output times must be monotone in the integration direction")]
    UnorderedStops,
    #[error("state dimension {got} does not match system dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("section traces start at t = 0, got t = {t}")]
    SectionStart { t: f64 },
    #[error("section range must satisfy k_min <= 0 <= k_max, got {k_min}..{k_max}")]
    SectionRange { k_min: i64, k_max: i64 },
}

/// Right-hand side of a first-order system `y' = f(t, y)`.
pub trait VectorField {
    fn dim(&self) -> usize;
    fn eval(&self, t: f64, y: &[f64], dy: &mut [f64]);
}

impl VectorField for SystemSpec {
    fn dim(&self) -> usize {
        2 * self.d
    }

    /// `y = (x, v)`, `dx = v`, `dv = p(t) − K x − h(x)`.
    fn eval(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        let d = self.d;
        let (x, v) = y.split_at(d);
        let (dx, dv) = dy.split_at_mut(d);
        dx.copy_from_slice(v);
        self.acceleration(t, x, dv);
    }
}

/// `s ↦ −f(−s, y)`: running this forward in `s` runs `f` backward in `t`.
struct Reversed<'a, F: ?Sized>(&'a F);

impl<F: VectorField + ?Sized> VectorField for Reversed<'_, F> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn eval(&self, s: f64, y: &[f64], dy: &mut [f64]) {
        self.0.eval(-s, y, dy);
        dy.iter_mut().for_each(|v| *v = -*v);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub rel: f64,
    pub abs: f64,
}

impl Tolerances {
    pub fn new(rel: f64, abs: f64) -> Self {
        Tolerances { rel, abs }
    }

    pub fn uniform(tol: f64) -> Self {
        Tolerances { rel: tol, abs: tol }
    }

    pub fn check(&self) -> Result<(), IntegrateError> {
        let ok = |v: f64| (1e-13..=1e-3).contains(&v);
        if ok(self.rel) && ok(self.abs) {
            Ok(())
        } else {
            Err(IntegrateError::InvalidTolerance { rel: self.rel, abs: self.abs })
        }
    }
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances::uniform(1e-10)
    }
}

/// Phase-space point `(t, x, x')`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub t: f64,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
}

impl State {
    pub fn new(t: f64, x: Vec<f64>, v: Vec<f64>) -> Self {
        State { t, x, v }
    }

    pub fn at_origin(d: usize) -> Self {
        State { t: 0.0, x: vec![0.0; d], v: vec![0.0; d] }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut y = self.x.clone();
        y.extend_from_slice(&self.v);
        y
    }

    pub fn from_slice(t: f64, y: &[f64], d: usize) -> Self {
        State { t, x: y[..d].to_vec(), v: y[d..2 * d].to_vec() }
    }

    /// `x_j² + x_j'²`.
    pub fn component_radius_sq(&self, j: usize) -> f64 {
        self.x[j] * self.x[j] + self.v[j] * self.v[j]
    }

    /// `|x|² + |x'|²`.
    pub fn norm_sq(&self) -> f64 {
        self.x.iter().chain(&self.v).map(|c| c * c).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.x.iter().chain(&self.v).all(|c| c.is_finite())
    }
}

// Dormand–Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

// PI controller constants (Hairer–Nørsett–Wanner, DOPRI5).
const SAFETY: f64 = 0.9;
const BETA: f64 = 0.04;
const EXPO1: f64 = 0.2 - BETA * 0.75;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;

/// Embedded 5(4) Runge–Kutta solver with PI step control.
#[derive(Clone, Copy, Debug)]
pub struct Dopri5 {
    pub tol: Tolerances,
    pub max_steps: usize,
}

impl Dopri5 {
    pub fn new(tol: Tolerances) -> Self {
        Dopri5 { tol, max_steps: 20_000_000 }
    }

    /// Integrate from `(t0, y0)` through the monotone sequence `stops`,
    /// calling `on_stop(i, t, y)` with the state landed exactly at each
    /// stop. Stops before `t0` run the negated field forward in `−t`.
    pub fn solve<F, C>(
        &self,
        f: &F,
        t0: f64,
        y0: &[f64],
        stops: &[f64],
        mut on_stop: C,
    ) -> Result<Vec<f64>, IntegrateError>
    where
        F: VectorField + ?Sized,
        C: FnMut(usize, f64, &[f64]),
    {
        self.tol.check()?;
        if y0.len() != f.dim() {
            return Err(IntegrateError::DimensionMismatch { expected: f.dim(), got: y0.len() });
        }
        let backward = stops.iter().any(|&s| s < t0);
        if backward {
            if stops.windows(2).any(|w| w[1] > w[0]) || stops.iter().any(|&s| s > t0) {
                return Err(IntegrateError::UnorderedStops);
            }
            let rev: Vec<f64> = stops.iter().map(|s| -s).collect();
            self.forward(&Reversed(f), -t0, y0, &rev, |i, s, y| on_stop(i, -s, y))
        } else {
            if stops.windows(2).any(|w| w[1] < w[0]) {
                return Err(IntegrateError::UnorderedStops);
            }
            self.forward(f, t0, y0, stops, on_stop)
        }
    }

    fn forward<F, C>(
        &self,
        f: &F,
        t0: f64,
        y0: &[f64],
        stops: &[f64],
        mut on_stop: C,
    ) -> Result<Vec<f64>, IntegrateError>
    where
        F: VectorField + ?Sized,
        C: FnMut(usize, f64, &[f64]),
    {
        let n = y0.len();
        let mut t = t0;
        let mut y = y0.to_vec();
        if y.iter().any(|v| !v.is_finite()) {
            return Err(IntegrateError::NonFinite { t });
        }
        let mut k1 = vec![0.0; n];
        let mut k2 = vec![0.0; n];
        let mut k3 = vec![0.0; n];
        let mut k4 = vec![0.0; n];
        let mut k5 = vec![0.0; n];
        let mut k6 = vec![0.0; n];
        let mut k7 = vec![0.0; n];
        let mut tmp = vec![0.0; n];
        let mut y_new = vec![0.0; n];
        f.eval(t, &y, &mut k1);

        let mut h = self.initial_step(f, t, &y, &k1);
        let mut fac_old: f64 = 1e-4;
        let mut steps = 0usize;

        for (i, &target) in stops.iter().enumerate() {
            while t < target {
                if steps >= self.max_steps {
                    return Err(IntegrateError::TooManySteps { t, max_steps: self.max_steps });
                }
                steps += 1;
                let remaining = target - t;
                let clipped = h >= remaining;
                let hs = if clipped { remaining } else { h };

                for m in 0..n {
                    tmp[m] = y[m] + hs * A21 * k1[m];
                }
                f.eval(t + C2 * hs, &tmp, &mut k2);
                for m in 0..n {
                    tmp[m] = y[m] + hs * (A31 * k1[m] + A32 * k2[m]);
                }
                f.eval(t + C3 * hs, &tmp, &mut k3);
                for m in 0..n {
                    tmp[m] = y[m] + hs * (A41 * k1[m] + A42 * k2[m] + A43 * k3[m]);
                }
                f.eval(t + C4 * hs, &tmp, &mut k4);
                for m in 0..n {
                    tmp[m] =
                        y[m] + hs * (A51 * k1[m] + A52 * k2[m] + A53 * k3[m] + A54 * k4[m]);
                }
                f.eval(t + C5 * hs, &tmp, &mut k5);
                for m in 0..n {
                    tmp[m] = y[m]
                        + hs * (A61 * k1[m] + A62 * k2[m] + A63 * k3[m] + A64 * k4[m] + A65 * k5[m]);
                }
                let t_end = if clipped { target } else { t + hs };
                f.eval(t + hs, &tmp, &mut k6);
                for m in 0..n {
                    y_new[m] = y[m]
                        + hs * (A71 * k1[m] + A73 * k3[m] + A74 * k4[m] + A75 * k5[m] + A76 * k6[m]);
                }
                f.eval(t_end, &y_new, &mut k7);

                let mut err = 0.0;
                for m in 0..n {
                    let e = hs
                        * (E1 * k1[m] + E3 * k3[m] + E4 * k4[m] + E5 * k5[m] + E6 * k6[m]
                            + E7 * k7[m]);
                    let sk = self.tol.abs + self.tol.rel * y[m].abs().max(y_new[m].abs());
                    err += (e / sk) * (e / sk);
                }
                let err = (err / n as f64).sqrt();

                if !err.is_finite() {
                    if hs < MIN_STEP {
                        return Err(IntegrateError::NonFinite { t });
                    }
                    h = 0.1 * hs;
                    continue;
                }

                let fac11 = err.powf(EXPO1);
                if err <= 1.0 {
                    let fac = (fac11 / fac_old.powf(BETA) / SAFETY).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
                    let proposal = hs / fac;
                    fac_old = err.max(1e-4);
                    t = t_end;
                    std::mem::swap(&mut y, &mut y_new);
                    std::mem::swap(&mut k1, &mut k7);
                    if y.iter().any(|v| !v.is_finite()) {
                        return Err(IntegrateError::NonFinite { t });
                    }
                    // a clipped step says nothing about the unclipped proposal
                    h = if clipped { proposal.max(h) } else { proposal };
                } else {
                    h = hs / (fac11 / SAFETY).min(1.0 / FAC_MIN);
                    if h < MIN_STEP {
                        return Err(IntegrateError::StepUnderflow { t, h });
                    }
                }
            }
            on_stop(i, t, &y);
        }
        Ok(y)
    }

    fn initial_step<F: VectorField + ?Sized>(&self, f: &F, t: f64, y: &[f64], f0: &[f64]) -> f64 {
        let n = y.len();
        let sk: Vec<f64> = y.iter().map(|v| self.tol.abs + self.tol.rel * v.abs()).collect();
        let dnf: f64 = f0.iter().zip(&sk).map(|(a, s)| (a / s).powi(2)).sum();
        let dny: f64 = y.iter().zip(&sk).map(|(a, s)| (a / s).powi(2)).sum();
        let mut h = if dnf <= 1e-10 || dny <= 1e-10 { 1e-6 } else { 0.01 * (dny / dnf).sqrt() };
        h = h.min(1.0);
        let y1: Vec<f64> = y.iter().zip(f0).map(|(a, b)| a + h * b).collect();
        let mut f1 = vec![0.0; n];
        f.eval(t + h, &y1, &mut f1);
        let der2 = f1
            .iter()
            .zip(f0)
            .zip(&sk)
            .map(|((a, b), s)| ((a - b) / s).powi(2))
            .sum::<f64>()
            .sqrt()
            / h;
        let der12 = der2.max(dnf.sqrt());
        let h1 = if der12 <= 1e-15 { (h * 1e-3).max(1e-6) } else { (0.01 / der12).powf(0.2) };
        (100.0 * h).min(h1)
    }
}

/// Integrate the system from `s0` to time `t1` (either direction).
pub fn integrate(spec: &SystemSpec, s0: &State, t1: f64, tol: Tolerances) -> Result<State, IntegrateError> {
    let mut states = integrate_grid(spec, s0, &[t1], tol)?;
    Ok(states.pop().expect("one stop requested"))
}

/// States of the trajectory through `s0` at each of the monotone `times`.
pub fn integrate_grid(
    spec: &SystemSpec,
    s0: &State,
    times: &[f64],
    tol: Tolerances,
) -> Result<Vec<State>, IntegrateError> {
    check_dim(spec, s0)?;
    let d = spec.d;
    let mut out = Vec::with_capacity(times.len());
    Dopri5::new(tol).solve(spec, s0.t, &s0.to_vec(), times, |_, t, y| {
        out.push(State::from_slice(t, y, d))
    })?;
    Ok(out)
}

fn check_dim(spec: &SystemSpec, s0: &State) -> Result<(), IntegrateError> {
    if s0.x.len() != spec.d || s0.v.len() != spec.d {
        return Err(IntegrateError::DimensionMismatch {
            expected: spec.d,
            got: s0.x.len().max(s0.v.len()),
        });
    }
    if !s0.is_finite() {
        return Err(IntegrateError::NonFinite { t: s0.t });
    }
    Ok(())
}

/// `t_k = 2kπ`.
pub fn section_time(k: i64) -> f64 {
    TAU * k as f64
}

/// Uniform grid over the periods `k_start..k_end` (forward or backward),
/// `per_period` points per period, every section time included exactly.
pub fn period_grid(k_start: i64, k_end: i64, per_period: usize) -> Vec<f64> {
    let step = TAU / per_period as f64;
    let dir: i64 = if k_end >= k_start { 1 } else { -1 };
    let mut times = Vec::with_capacity((k_end - k_start).unsigned_abs() as usize * per_period + 1);
    let mut k = k_start;
    while k != k_end {
        let base = section_time(k);
        times.push(base);
        for i in 1..per_period {
            times.push(base + dir as f64 * i as f64 * step);
        }
        k += dir;
    }
    times.push(section_time(k_end));
    times
}

/// States at `t = 2kπ` for `k_min ≤ k ≤ k_max`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SectionTrace {
    pub k_min: i64,
    pub k_max: i64,
    pub tol: Tolerances,
    /// Indexed by `k − k_min`.
    pub states: Vec<State>,
}

impl SectionTrace {
    pub fn get(&self, k: i64) -> Option<&State> {
        if k < self.k_min || k > self.k_max {
            return None;
        }
        self.states.get((k - self.k_min) as usize)
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, &State)> {
        (self.k_min..=self.k_max).zip(self.states.iter())
    }
}

/// Poincaré sections of the trajectory starting from `s0` at `t = 0`.
pub fn section_trace(
    spec: &SystemSpec,
    s0: &State,
    k_min: i64,
    k_max: i64,
    tol: Tolerances,
) -> Result<SectionTrace, IntegrateError> {
    if s0.t != 0.0 {
        return Err(IntegrateError::SectionStart { t: s0.t });
    }
    if k_min > 0 || k_max < 0 {
        return Err(IntegrateError::SectionRange { k_min, k_max });
    }
    let back_times: Vec<f64> = (1..=-k_min).map(|k| section_time(-k)).collect();
    let fwd_times: Vec<f64> = (1..=k_max).map(section_time).collect();
    let mut back = integrate_grid(spec, s0, &back_times, tol)?;
    let fwd = integrate_grid(spec, s0, &fwd_times, tol)?;
    back.reverse();
    let mut states = back;
    states.push(s0.clone());
    states.extend(fwd);
    Ok(SectionTrace { k_min, k_max, tol, states })
}

/// CSV with columns `t, x_1..x_d, v_1..v_d`.
pub fn trajectory_csv(states: &[State]) -> String {
    let d = states.first().map_or(0, State::dim);
    let mut out = String::from("t");
    for j in 1..=d {
        out.push_str(&format!(",x_{j}"));
    }
    for j in 1..=d {
        out.push_str(&format!(",v_{j}"));
    }
    out.push('\n');
    for s in states {
        out.push_str(&fmt_g17(s.t));
        for c in s.x.iter().chain(&s.v) {
            out.push(',');
            out.push_str(&fmt_g17(*c));
        }
        out.push('\n');
    }
    out
}

/// `x_j(t) = A_j sin(n_j t + ω_j) + σ_j(t)` on one period, for one component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VocComponent {
    pub j: usize,
    pub n: f64,
    pub amplitude: f64,
    pub omega: f64,
    pub times: Vec<f64>,
    pub sigma: Vec<f64>,
    pub sigma_dot: Vec<f64>,
    pub sigma_ddot: Vec<f64>,
    pub sup_sigma: f64,
    pub sup_sigma_dot: f64,
    pub sup_sigma_ddot: f64,
    /// `max_t |x_j(t) − A_j sin(n_j t + ω_j) − σ_j(t)|` along the run.
    pub split_residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VocDecomposition {
    pub components: Vec<VocComponent>,
}

impl VocDecomposition {
    pub fn component(&self, j: usize) -> Option<&VocComponent> {
        self.components.iter().find(|c| c.j == j)
    }
}

/// The system augmented with `σ_j'' + n_j² σ_j = p_j(t) − h_j(x)`,
/// `σ_j(0) = σ_j'(0) = 0`, for the selected components.
struct SigmaAugmented<'a> {
    spec: &'a SystemSpec,
    comps: &'a [usize],
}

impl VectorField for SigmaAugmented<'_> {
    fn dim(&self) -> usize {
        2 * self.spec.d + 2 * self.comps.len()
    }

    fn eval(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        let d = self.spec.d;
        let m = self.comps.len();
        self.spec.eval(t, &y[..2 * d], &mut dy[..2 * d]);
        let x = &y[..d];
        for (r, &j) in self.comps.iter().enumerate() {
            let s = y[2 * d + r];
            let sd = y[2 * d + m + r];
            let n = self.spec.n[j];
            dy[2 * d + r] = sd;
            dy[2 * d + m + r] =
                self.spec.p[j].eval(t) - self.spec.coupling_value(j, x) - n * n * s;
        }
    }
}

/// Variation-of-constants split over `[0, 2π]` for every resonant component.
///
/// `σ_j` is integrated alongside the system rather than recovered as
/// `x_j − A_j sin(·)`, which would lose all digits of `σ_j` once `A_j` is
/// large. `σ_j''` is read off its equation.
pub fn voc_decompose(
    spec: &SystemSpec,
    s0: &State,
    tol: Tolerances,
) -> Result<VocDecomposition, IntegrateError> {
    check_dim(spec, s0)?;
    let d = spec.d;
    let comps: Vec<usize> = (0..d).filter(|&j| spec.resonant_frequency(j).is_some()).collect();
    let m = comps.len();
    let field = SigmaAugmented { spec, comps: &comps };
    let mut y0 = s0.to_vec();
    y0.extend(std::iter::repeat_n(0.0, 2 * m));
    let times: Vec<f64> = (0..VOC_GRID_POINTS)
        .map(|i| s0.t + TAU * i as f64 / (VOC_GRID_POINTS - 1) as f64)
        .collect();

    let mut out: Vec<VocComponent> = comps
        .iter()
        .map(|&j| {
            let n = spec.n[j];
            let (x0, v0) = (s0.x[j], s0.v[j]);
            VocComponent {
                j,
                n,
                amplitude: (x0 * x0 + v0 * v0 / (n * n)).sqrt(),
                omega: normalize_angle((n * x0).atan2(v0)),
                times: Vec::with_capacity(VOC_GRID_POINTS),
                sigma: Vec::with_capacity(VOC_GRID_POINTS),
                sigma_dot: Vec::with_capacity(VOC_GRID_POINTS),
                sigma_ddot: Vec::with_capacity(VOC_GRID_POINTS),
                sup_sigma: 0.0,
                sup_sigma_dot: 0.0,
                sup_sigma_ddot: 0.0,
                split_residual: 0.0,
            }
        })
        .collect();

    Dopri5::new(tol).solve(&field, s0.t, &y0, &times, |_, t, y| {
        let x = &y[..d];
        for (r, c) in out.iter_mut().enumerate() {
            let s = y[2 * d + r];
            let sd = y[2 * d + m + r];
            let sdd = spec.p[c.j].eval(t) - spec.coupling_value(c.j, x) - c.n * c.n * s;
            let tau = t - s0.t;
            let free = c.amplitude * (c.n * tau + c.omega).sin();
            c.times.push(t);
            c.sigma.push(s);
            c.sigma_dot.push(sd);
            c.sigma_ddot.push(sdd);
            c.sup_sigma = c.sup_sigma.max(s.abs());
            c.sup_sigma_dot = c.sup_sigma_dot.max(sd.abs());
            c.sup_sigma_ddot = c.sup_sigma_ddot.max(sdd.abs());
            c.split_residual = c.split_residual.max((x[c.j] - free - s).abs());
        }
    })?;
    Ok(VocDecomposition { components: out })
}

/// `M_j = sup|h_j| + sup|p_j|`, from the sound range enclosures.
pub fn forcing_plus_coupling_bound(spec: &SystemSpec, j: usize) -> f64 {
    spec.coupling_range(j).sup_abs() + spec.p[j].sup_abs_bound()
}

/// Closed-form bound `C_j = M_j·max(2π/n_j, 2π, 1 + 2π n_j)` on
/// `|σ_j|`, `|σ_j'|` and `|σ_j''|` over one period, independent of the
/// amplitudes. `None` when component `j` has no frequency (matrix form).
pub fn sigma_bound(spec: &SystemSpec, j: usize) -> Option<f64> {
    let n = *spec.n.get(j)?;
    let m = forcing_plus_coupling_bound(spec, j);
    Some(m * (TAU / n).max(TAU).max(1.0 + TAU * n))
}

/// `C = max_j C_j`.
pub fn sigma_bound_all(spec: &SystemSpec) -> Option<f64> {
    (0..spec.d).map(|j| sigma_bound(spec, j)).try_fold(0.0f64, |acc, c| c.map(|c| acc.max(c)))
}
