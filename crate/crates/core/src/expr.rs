//! Coupling terms as expression trees over bounded primitives.
//!
//! Every expression built from this grammar is bounded and smooth, so the
//! global range and the behaviour at ±∞ can be enclosed compositionally with
//! interval rules. The enclosures are sound: they always contain the true
//! range (resp. the true `[liminf, limsup]`), but may be wider than necessary
//! when the same variable appears in several summands.

use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;
use std::fmt;

/// Closed real interval `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi, "empty interval [{lo}, {hi}]");
        Interval { lo, hi }
    }

    pub fn point(c: f64) -> Self {
        Interval { lo: c, hi: c }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn contains_interval(&self, other: &Interval) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }

    /// Largest absolute value attained on the interval.
    pub fn mag(&self) -> f64 {
        self.lo.abs().max(self.hi.abs())
    }

    pub fn add(&self, other: &Interval) -> Interval {
        Interval::new(self.lo + other.lo, self.hi + other.hi)
    }

    pub fn scale(&self, c: f64) -> Interval {
        if c >= 0.0 {
            Interval::new(c * self.lo, c * self.hi)
        } else {
            Interval::new(c * self.hi, c * self.lo)
        }
    }

    pub fn hull(&self, other: &Interval) -> Interval {
        Interval::new(self.lo.min(other.lo), self.hi.max(other.hi))
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

/// Domain on which a coupling term is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    /// The whole real line; used by general and cyclic couplings.
    FullLine,
    /// `[0, ∞)`; used by radial couplings, which only see `|x|`.
    HalfLine,
}

/// Which end of the real line an asymptotic enclosure refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum End {
    Plus,
    Minus,
}

/// A bounded, locally Lipschitz scalar function `h: ℝ → ℝ`.
///
/// JSON form: `{"op": "tanh", "a": 1.0, "b": 0.0}`, `{"op": "const", "c": 3.0}`,
/// `{"op": "scale", "c": 0.1, "arg": ...}`, `{"op": "sum", "args": [...]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum BoundedExpr {
    Const {
        c: f64,
    },
    Tanh {
        a: f64,
        #[serde(default)]
        b: f64,
    },
    Atan {
        a: f64,
        #[serde(default)]
        b: f64,
    },
    Sin {
        a: f64,
        #[serde(default)]
        b: f64,
    },
    Cos {
        a: f64,
        #[serde(default)]
        b: f64,
    },
    Scale {
        c: f64,
        arg: Box<BoundedExpr>,
    },
    Sum {
        args: Vec<BoundedExpr>,
    },
}

/// Sound enclosure of the global range of an expression.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RangeReport {
    /// Lower bound for `inf h`.
    pub lower: f64,
    /// Upper bound for `sup h`.
    pub upper: f64,
    /// True when both bounds are attained or are exact limits.
    pub exact: bool,
}

impl RangeReport {
    pub fn interval(&self) -> Interval {
        Interval::new(self.lower, self.upper)
    }

    pub fn span(&self) -> f64 {
        self.upper - self.lower
    }

    /// Bound on `sup |h|`.
    pub fn sup_abs(&self) -> f64 {
        self.lower.abs().max(self.upper.abs())
    }
}

/// Enclosures of `[liminf, limsup]` at the ends of the domain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticReport {
    pub at_plus: Interval,
    /// Absent on the half-line domain.
    pub at_minus: Option<Interval>,
    /// `max(limsup_{±∞}) − min(liminf_{±∞})`.
    pub delta_h_cyclic: f64,
    /// `limsup_{+∞} − liminf_{+∞}`.
    pub delta_h_radial: f64,
}

impl BoundedExpr {
    pub fn constant(c: f64) -> Self {
        BoundedExpr::Const { c }
    }

    pub fn tanh(a: f64, b: f64) -> Self {
        BoundedExpr::Tanh { a, b }
    }

    pub fn atan(a: f64, b: f64) -> Self {
        BoundedExpr::Atan { a, b }
    }

    pub fn sin(a: f64, b: f64) -> Self {
        BoundedExpr::Sin { a, b }
    }

    pub fn cos(a: f64, b: f64) -> Self {
        BoundedExpr::Cos { a, b }
    }

    pub fn scale(c: f64, arg: BoundedExpr) -> Self {
        BoundedExpr::Scale { c, arg: Box::new(arg) }
    }

    pub fn sum(args: Vec<BoundedExpr>) -> Self {
        BoundedExpr::Sum { args }
    }

    pub fn zero() -> Self {
        BoundedExpr::Const { c: 0.0 }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            BoundedExpr::Const { c } => *c,
            BoundedExpr::Tanh { a, b } => (a * x + b).tanh(),
            BoundedExpr::Atan { a, b } => (a * x + b).atan(),
            BoundedExpr::Sin { a, b } => (a * x + b).sin(),
            BoundedExpr::Cos { a, b } => (a * x + b).cos(),
            BoundedExpr::Scale { c, arg } => c * arg.eval(x),
            BoundedExpr::Sum { args } => args.iter().map(|e| e.eval(x)).sum(),
        }
    }

    /// True when the expression does not depend on its argument.
    pub fn is_constant(&self) -> bool {
        match self {
            BoundedExpr::Const { .. } => true,
            BoundedExpr::Tanh { a, .. }
            | BoundedExpr::Atan { a, .. }
            | BoundedExpr::Sin { a, .. }
            | BoundedExpr::Cos { a, .. } => *a == 0.0,
            BoundedExpr::Scale { c, arg } => *c == 0.0 || arg.is_constant(),
            BoundedExpr::Sum { args } => args.iter().all(BoundedExpr::is_constant),
        }
    }

    /// All coefficients finite.
    pub fn is_finite(&self) -> bool {
        match self {
            BoundedExpr::Const { c } => c.is_finite(),
            BoundedExpr::Tanh { a, b }
            | BoundedExpr::Atan { a, b }
            | BoundedExpr::Sin { a, b }
            | BoundedExpr::Cos { a, b } => a.is_finite() && b.is_finite(),
            BoundedExpr::Scale { c, arg } => c.is_finite() && arg.is_finite(),
            BoundedExpr::Sum { args } => args.iter().all(BoundedExpr::is_finite),
        }
    }

    /// Interval propagation of the primitive ranges through the tree.
    pub fn global_range(&self) -> RangeReport {
        let (iv, exact) = self.range_rec();
        RangeReport { lower: iv.lo, upper: iv.hi, exact }
    }

    fn range_rec(&self) -> (Interval, bool) {
        match self {
            BoundedExpr::Const { c } => (Interval::point(*c), true),
            BoundedExpr::Tanh { a, b } if *a == 0.0 => (Interval::point(b.tanh()), true),
            BoundedExpr::Atan { a, b } if *a == 0.0 => (Interval::point(b.atan()), true),
            BoundedExpr::Sin { a, b } if *a == 0.0 => (Interval::point(b.sin()), true),
            BoundedExpr::Cos { a, b } if *a == 0.0 => (Interval::point(b.cos()), true),
            // tanh and atan approach their bounds as limits; sin and cos attain them
            BoundedExpr::Tanh { .. } => (Interval::new(-1.0, 1.0), true),
            BoundedExpr::Atan { .. } => (Interval::new(-FRAC_PI_2, FRAC_PI_2), true),
            BoundedExpr::Sin { .. } | BoundedExpr::Cos { .. } => (Interval::new(-1.0, 1.0), true),
            BoundedExpr::Scale { c, arg } => {
                let (iv, exact) = arg.range_rec();
                (iv.scale(*c), exact)
            }
            BoundedExpr::Sum { args } => {
                let mut acc = Interval::point(0.0);
                let mut exact = true;
                let mut varying = 0;
                for e in args {
                    let (iv, ex) = e.range_rec();
                    acc = acc.add(&iv);
                    exact &= ex;
                    if !e.is_constant() {
                        varying += 1;
                    }
                }
                // two or more varying summands share the argument, so the
                // interval sum may overestimate
                (acc, exact && varying <= 1)
            }
        }
    }

    /// Enclosure of `[liminf, limsup]` as the argument tends to the given end.
    pub fn limit_interval(&self, end: End) -> Interval {
        let sign = match end {
            End::Plus => 1.0,
            End::Minus => -1.0,
        };
        match self {
            BoundedExpr::Const { c } => Interval::point(*c),
            BoundedExpr::Tanh { a, b } => {
                if *a == 0.0 {
                    Interval::point(b.tanh())
                } else {
                    Interval::point((sign * a).signum())
                }
            }
            BoundedExpr::Atan { a, b } => {
                if *a == 0.0 {
                    Interval::point(b.atan())
                } else {
                    Interval::point((sign * a).signum() * FRAC_PI_2)
                }
            }
            BoundedExpr::Sin { a, b } => {
                if *a == 0.0 {
                    Interval::point(b.sin())
                } else {
                    Interval::new(-1.0, 1.0)
                }
            }
            BoundedExpr::Cos { a, b } => {
                if *a == 0.0 {
                    Interval::point(b.cos())
                } else {
                    Interval::new(-1.0, 1.0)
                }
            }
            BoundedExpr::Scale { c, arg } => arg.limit_interval(end).scale(*c),
            BoundedExpr::Sum { args } => args
                .iter()
                .fold(Interval::point(0.0), |acc, e| acc.add(&e.limit_interval(end))),
        }
    }

    pub fn asymptotics(&self, domain: Domain) -> AsymptoticReport {
        let at_plus = self.limit_interval(End::Plus);
        let delta_h_radial = at_plus.width();
        match domain {
            Domain::FullLine => {
                let at_minus = self.limit_interval(End::Minus);
                let hull = at_plus.hull(&at_minus);
                AsymptoticReport {
                    at_plus,
                    at_minus: Some(at_minus),
                    delta_h_cyclic: hull.width(),
                    delta_h_radial,
                }
            }
            Domain::HalfLine => AsymptoticReport {
                at_plus,
                at_minus: None,
                delta_h_cyclic: delta_h_radial,
                delta_h_radial,
            },
        }
    }
}

impl Default for BoundedExpr {
    fn default() -> Self {
        BoundedExpr::zero()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn eval_examples() {
        assert_eq!(BoundedExpr::constant(3.0).eval(17.2), 3.0);
        assert_eq!(BoundedExpr::tanh(1.0, 0.0).eval(0.0), 0.0);
        let e = BoundedExpr::sum(vec![
            BoundedExpr::atan(1.0, 0.0),
            BoundedExpr::scale(0.1, BoundedExpr::sin(1.0, 0.0)),
        ]);
        // 30-digit reference value of atan(1) + 0.1 sin(1)
        assert!((e.eval(1.0) - 0.869_545_261_878_237_96).abs() < 1e-15);
    }

    #[test]
    fn range_examples() {
        let r = BoundedExpr::constant(2.5).global_range();
        assert_eq!((r.lower, r.upper, r.exact), (2.5, 2.5, true));

        let r = BoundedExpr::tanh(2.0, 1.0).global_range();
        assert_eq!((r.lower, r.upper, r.exact), (-1.0, 1.0, true));

        let s = BoundedExpr::sin(1.0, 0.0);
        let r = BoundedExpr::sum(vec![s.clone(), s.clone()]).global_range();
        assert_eq!((r.lower, r.upper), (-2.0, 2.0));

        let r = BoundedExpr::sum(vec![s.clone(), BoundedExpr::scale(-1.0, s)]).global_range();
        assert_eq!((r.lower, r.upper, r.exact), (-2.0, 2.0, false));
    }

    #[test]
    fn degenerate_primitives_are_points() {
        let r = BoundedExpr::tanh(0.0, 0.5).global_range();
        assert_eq!(r.lower, 0.5f64.tanh());
        assert_eq!(r.upper, 0.5f64.tanh());
        let a = BoundedExpr::sin(0.0, 1.0).asymptotics(Domain::FullLine);
        assert_eq!(a.delta_h_cyclic, 0.0);
    }

    #[test]
    fn asymptotic_examples() {
        let a = BoundedExpr::tanh(1.0, 0.0).asymptotics(Domain::FullLine);
        assert_eq!(a.at_plus, Interval::point(1.0));
        assert_eq!(a.at_minus, Some(Interval::point(-1.0)));
        assert_eq!(a.delta_h_cyclic, 2.0);
        assert_eq!(a.delta_h_radial, 0.0);

        let a = BoundedExpr::constant(4.0).asymptotics(Domain::FullLine);
        assert_eq!(a.delta_h_cyclic, 0.0);

        let e = BoundedExpr::sum(vec![
            BoundedExpr::atan(1.0, 0.0),
            BoundedExpr::scale(0.1, BoundedExpr::sin(1.0, 0.0)),
        ]);
        let a = e.asymptotics(Domain::FullLine);
        assert!((a.at_plus.lo - (PI / 2.0 - 0.1)).abs() < 1e-15);
        assert!((a.at_plus.hi - (PI / 2.0 + 0.1)).abs() < 1e-15);
        assert!((a.delta_h_cyclic - (PI + 0.2)).abs() < 1e-14);
    }

    #[test]
    fn negative_slope_flips_limits() {
        let a = BoundedExpr::tanh(-3.0, 0.0).asymptotics(Domain::FullLine);
        assert_eq!(a.at_plus, Interval::point(-1.0));
        assert_eq!(a.at_minus, Some(Interval::point(1.0)));
    }

    #[test]
    fn half_line_ignores_minus_end() {
        let a = BoundedExpr::tanh(1.0, 0.0).asymptotics(Domain::HalfLine);
        assert!(a.at_minus.is_none());
        assert_eq!(a.delta_h_radial, 0.0);
        assert_eq!(a.delta_h_cyclic, 0.0);
        let a = BoundedExpr::sin(1.0, 0.0).asymptotics(Domain::HalfLine);
        assert_eq!(a.delta_h_radial, 2.0);
    }

    #[test]
    fn json_shape() {
        let e = BoundedExpr::sum(vec![
            BoundedExpr::tanh(1.0, 0.0),
            BoundedExpr::scale(0.1, BoundedExpr::constant(3.0)),
        ]);
        let s = serde_json::to_string(&e).unwrap();
        assert_eq!(
            s,
            r#"{"op":"sum","args":[{"op":"tanh","a":1.0,"b":0.0},{"op":"scale","c":0.1,"arg":{"op":"const","c":3.0}}]}"#
        );
        let back: BoundedExpr = serde_json::from_str(&s).unwrap();
        assert_eq!(back, e);
        let short: BoundedExpr = serde_json::from_str(r#"{"op":"atan","a":2}"#).unwrap();
        assert_eq!(short, BoundedExpr::atan(2.0, 0.0));
    }
}
