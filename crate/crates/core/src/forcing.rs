//! 2π-periodic forcings as finite trigonometric polynomials.

use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI, TAU};
use thiserror::Error;

/// Window half-widths are kept strictly inside `(0, π/2)`.
pub const MAX_HALF_WIDTH: f64 = FRAC_PI_2 - 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ForcingError {
    #[error("harmonic {n} of the forcing vanishes; the optimal phase is undefined")]
    GainZero { n: u32 },
    #[error("threshold {threshold} is not below the Fourier gain {gain}")]
    InfeasibleWindow { threshold: f64, gain: f64 },
}

/// `p(t) = a0 + Σ_k (a_k cos kt + b_k sin kt)`.
///
/// `cos[k-1]` holds `a_k` and `sin[k-1]` holds `b_k`; the two lists may have
/// different lengths, missing coefficients are zero.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrigPoly {
    #[serde(default)]
    pub a0: f64,
    #[serde(default)]
    pub cos: Vec<f64>,
    #[serde(default)]
    pub sin: Vec<f64>,
}

impl TrigPoly {
    pub fn new(a0: f64, cos: Vec<f64>, sin: Vec<f64>) -> Self {
        TrigPoly { a0, cos, sin }
    }

    pub fn zero() -> Self {
        TrigPoly::default()
    }

    /// `amplitude · sin(n t)`.
    pub fn sine(n: usize, amplitude: f64) -> Self {
        let mut sin = vec![0.0; n];
        sin[n - 1] = amplitude;
        TrigPoly { a0: 0.0, cos: Vec::new(), sin }
    }

    /// `amplitude · cos(n t)`.
    pub fn cosine(n: usize, amplitude: f64) -> Self {
        let mut cos = vec![0.0; n];
        cos[n - 1] = amplitude;
        TrigPoly { a0: 0.0, cos, sin: Vec::new() }
    }

    /// Highest harmonic present.
    pub fn max_harmonic(&self) -> usize {
        self.cos.len().max(self.sin.len())
    }

    /// `(a_n, b_n)`, zero beyond the stored harmonics.
    pub fn coefficients(&self, n: u32) -> (f64, f64) {
        if n == 0 {
            return (self.a0, 0.0);
        }
        let k = n as usize - 1;
        (
            self.cos.get(k).copied().unwrap_or(0.0),
            self.sin.get(k).copied().unwrap_or(0.0),
        )
    }

    pub fn is_finite(&self) -> bool {
        self.a0.is_finite() && self.cos.iter().chain(&self.sin).all(|c| c.is_finite())
    }

    pub fn eval(&self, t: f64) -> f64 {
        let mut acc = self.a0;
        for (k, a) in self.cos.iter().enumerate() {
            acc += a * ((k + 1) as f64 * t).cos();
        }
        for (k, b) in self.sin.iter().enumerate() {
            acc += b * ((k + 1) as f64 * t).sin();
        }
        acc
    }

    /// Upper bound on `sup |p|` from the triangle inequality.
    pub fn sup_abs_bound(&self) -> f64 {
        self.a0.abs() + self.cos.iter().chain(&self.sin).map(|c| c.abs()).sum::<f64>()
    }

    /// `|∫₀^{2π} p(t) e^{int} dt| = π·sqrt(a_n² + b_n²)`.
    pub fn fourier_gain(&self, n: u32) -> f64 {
        let (a, b) = self.coefficients(n);
        PI * a.hypot(b)
    }

    /// `R(φ) = ∫₀^{2π} p(t) sin(nt + φ) dt = π (b_n cos φ + a_n sin φ)`.
    pub fn response(&self, n: u32, phase: f64) -> f64 {
        let (a, b) = self.coefficients(n);
        PI * (b * phase.cos() + a * phase.sin())
    }

    /// Phase in `[0, 2π)` maximizing the response to `sin(nt + φ)`.
    pub fn optimal_phase(&self, n: u32) -> Result<f64, ForcingError> {
        let (a, b) = self.coefficients(n);
        if a == 0.0 && b == 0.0 {
            return Err(ForcingError::GainZero { n });
        }
        Ok(normalize_angle(a.atan2(b)))
    }

    /// Open arc of phases whose response exceeds `threshold`.
    pub fn phase_window(&self, n: u32, threshold: f64) -> Result<PhaseWindow, ForcingError> {
        let gain = self.fourier_gain(n);
        if threshold >= gain {
            return Err(ForcingError::InfeasibleWindow { threshold, gain });
        }
        let center = self.optimal_phase(n)?;
        let ratio = (threshold / gain).clamp(-1.0, 1.0);
        let half_width = ratio.acos().min(MAX_HALF_WIDTH);
        Ok(PhaseWindow { center, half_width, threshold, gain })
    }
}

/// Arc `{φ : |φ − center| < half_width}` (mod 2π) on which the resonant
/// response stays above `threshold`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseWindow {
    pub center: f64,
    pub half_width: f64,
    pub threshold: f64,
    pub gain: f64,
}

impl PhaseWindow {
    pub fn contains(&self, phase: f64) -> bool {
        angular_distance(phase, self.center) < self.half_width
    }

    /// The two phases placed symmetrically at `center ∓ half_width/2`.
    pub fn split_phases(&self) -> (f64, f64) {
        (
            normalize_angle(self.center - 0.5 * self.half_width),
            normalize_angle(self.center + 0.5 * self.half_width),
        )
    }
}

/// Representative of `angle` in `[0, 2π)`.
pub fn normalize_angle(angle: f64) -> f64 {
    let r = angle.rem_euclid(TAU);
    // rem_euclid can round up to exactly 2π for tiny negative inputs
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Distance on the circle, in `[0, π]`.
pub fn angular_distance(a: f64, b: f64) -> f64 {
    let d = normalize_angle(a - b);
    d.min(TAU - d)
}

/// Composite Simpson rule on `[t0, t1]` with an even number of panels.
///
/// # Panics
///
/// Panics if `panels` is odd or smaller than 2.
pub fn simpson_integral<F: Fn(f64) -> f64>(f: F, t0: f64, t1: f64, panels: usize) -> f64 {
    assert!(panels >= 2 && panels % 2 == 0, "Simpson needs an even panel count, got {panels}");
    let h = (t1 - t0) / panels as f64;
    let mut odd = 0.0;
    let mut even = 0.0;
    for i in 1..panels {
        let v = f(t0 + i as f64 * h);
        if i % 2 == 1 {
            odd += v;
        } else {
            even += v;
        }
    }
    h / 3.0 * (f(t0) + f(t1) + 4.0 * odd + 2.0 * even)
}

/// Simpson rule on pre-sampled values over a uniform grid (`values.len()` odd).
pub fn simpson_samples(values: &[f64], h: f64) -> f64 {
    let panels = values.len() - 1;
    assert!(panels >= 2 && panels % 2 == 0, "Simpson needs an even panel count, got {panels}");
    let mut acc = values[0] + values[panels];
    for (i, v) in values.iter().enumerate().take(panels).skip(1) {
        acc += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    h / 3.0 * acc
}
