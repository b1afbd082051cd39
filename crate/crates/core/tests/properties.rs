use proptest::prelude::*;
use resonance::certify::{check_global_scalar, lyapunov_value, vbar};
use resonance::expr::{BoundedExpr, Domain, End};
use resonance::forcing::{angular_distance, simpson_integral, TrigPoly};
use resonance::system::{Coupling, SystemSpec};
use std::f64::consts::TAU;

fn leaf() -> impl Strategy<Value = BoundedExpr> {
    let a = prop_oneof![-5.0..-0.1f64, 0.1..5.0f64];
    let b = -3.0..3.0f64;
    prop_oneof![
        (-3.0..3.0f64).prop_map(BoundedExpr::constant),
        (a.clone(), b.clone()).prop_map(|(a, b)| BoundedExpr::tanh(a, b)),
        (a.clone(), b.clone()).prop_map(|(a, b)| BoundedExpr::atan(a, b)),
        (a.clone(), b.clone()).prop_map(|(a, b)| BoundedExpr::sin(a, b)),
        (a, b).prop_map(|(a, b)| BoundedExpr::cos(a, b)),
    ]
}

fn expr() -> impl Strategy<Value = BoundedExpr> {
    leaf().prop_recursive(3, 12, 4, |inner| {
        prop_oneof![
            (-4.0..4.0f64, inner.clone()).prop_map(|(c, e)| BoundedExpr::scale(c, e)),
            prop::collection::vec(inner, 1..4).prop_map(BoundedExpr::sum),
        ]
    })
}

fn trig_poly() -> impl Strategy<Value = TrigPoly> {
    (
        -2.0..2.0f64,
        prop::collection::vec(-2.0..2.0f64, 0..8),
        prop::collection::vec(-2.0..2.0f64, 0..8),
    )
        .prop_map(|(a0, c, s)| TrigPoly::new(a0, c, s))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn global_range_encloses_samples(e in expr(), xs in prop::collection::vec(-1e3..1e3f64, 64)) {
        let r = e.global_range().interval();
        for x in xs {
            let y = e.eval(x);
            prop_assert!(r.lo - 1e-12 <= y && y <= r.hi + 1e-12, "{y} outside [{}, {}]", r.lo, r.hi);
        }
    }

    #[test]
    fn limit_intervals_enclose_far_values(e in expr()) {
        let plus = e.limit_interval(End::Plus);
        let minus = e.limit_interval(End::Minus);
        // atan approaches its limit like 1/(|a|x) with |a| ≥ 0.1
        let slack = 1e-9 * (1.0 + plus.mag() + minus.mag()) * 100.0;
        for k in 0..32 {
            let x = 1e12 * (1.0 + k as f64 * 0.37);
            let (yp, ym) = (e.eval(x), e.eval(-x));
            prop_assert!(plus.lo - slack <= yp && yp <= plus.hi + slack);
            prop_assert!(minus.lo - slack <= ym && ym <= minus.hi + slack);
        }
    }

    #[test]
    fn asymptotic_spans_are_ordered(e in expr()) {
        let full = e.asymptotics(Domain::FullLine);
        let half = e.asymptotics(Domain::HalfLine);
        prop_assert!(full.delta_h_cyclic >= full.delta_h_radial - 1e-15);
        prop_assert_eq!(half.delta_h_radial, full.delta_h_radial);
        prop_assert!(full.delta_h_cyclic <= e.global_range().span() + 1e-12);
    }

    #[test]
    fn fourier_gain_matches_quadrature(p in trig_poly(), n in 1u32..9) {
        let c = simpson_integral(|t| p.eval(t) * (n as f64 * t).cos(), 0.0, TAU, 2048);
        let s = simpson_integral(|t| p.eval(t) * (n as f64 * t).sin(), 0.0, TAU, 2048);
        prop_assert!((p.fourier_gain(n) - c.hypot(s)).abs() < 1e-8);
    }

    #[test]
    fn optimal_phase_maximizes_response(p in trig_poly(), n in 1u32..9, phi in 0.0..TAU) {
        prop_assume!(p.fourier_gain(n) > 1e-6);
        let best = p.optimal_phase(n).unwrap();
        prop_assert!(p.response(n, phi) <= p.response(n, best) + 1e-12);
        prop_assert!((p.response(n, best) - p.fourier_gain(n)).abs() < 1e-12);
    }

    #[test]
    fn phase_window_is_a_superlevel_set(p in trig_poly(), n in 1u32..9, frac in 0.05..0.95f64, phi in 0.0..TAU) {
        let gain = p.fourier_gain(n);
        prop_assume!(gain > 1e-3);
        let w = p.phase_window(n, frac * gain).unwrap();
        if w.contains(phi) {
            prop_assert!(p.response(n, phi) > w.threshold - 1e-9);
        } else if w.half_width < std::f64::consts::FRAC_PI_2 - 1e-3 {
            prop_assert!(p.response(n, phi) <= w.threshold + 1e-9);
        }
        let (a, b) = w.split_phases();
        prop_assert!(w.contains(a) && w.contains(b));
        prop_assert!((angular_distance(a, b) - w.half_width).abs() < 1e-12);
    }

    #[test]
    fn lyapunov_bounded_by_vbar(n in 0.1..5.0f64, r in 0.0..100.0f64, th in 0.0..TAU, phi in 0.0..TAU) {
        let v = lyapunov_value(n, phi, r * th.cos(), r * th.sin());
        prop_assert!(v.abs() <= vbar(n, r) * (1.0 + 1e-12) + 1e-12);
    }

    #[test]
    fn global_certificate_is_permutation_invariant(
        cs in prop::collection::vec(0.0..1.0f64, 3),
        amps in prop::collection::vec(0.1..2.0f64, 3),
        shift in 1usize..3,
    ) {
        let d = 3;
        let build = |perm: &dyn Fn(usize) -> usize| {
            let mut terms = vec![vec![BoundedExpr::zero(); d]; d];
            let mut n = vec![0.0; d];
            let mut p = vec![TrigPoly::zero(); d];
            for j in 0..d {
                let k = perm(j);
                terms[k][k] = BoundedExpr::scale(cs[j], BoundedExpr::tanh(1.0, 0.0));
                n[k] = (j + 1) as f64;
                p[k] = TrigPoly::sine(j + 1, amps[j]);
            }
            SystemSpec::new(n, Coupling::General { terms }, p)
        };
        let a = check_global_scalar(&build(&|j| j)).unwrap();
        let b = check_global_scalar(&build(&|j| (j + shift) % d)).unwrap();
        prop_assert_eq!(a.certified, b.certified);
        for j in 0..d {
            let (ra, rb) = (&a.rows[j], &b.rows[(j + shift) % d]);
            prop_assert_eq!(ra.certified, rb.certified);
            prop_assert!((ra.slack - rb.slack).abs() < 1e-15);
        }
    }
}
