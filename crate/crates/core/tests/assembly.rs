#[path = "support/bundle_cases.rs"]
mod bundle_cases;

use boiler_core::compensation::CompensationState;
use boiler_core::objective::{build_qp, evaluate_objective};
use bundle_cases::{case, free};

#[test]
fn quadratic_form_equals_direct_evaluation() {
    for seed in 0..100 {
        let c = case(seed);
        let n = c.x.len();
        let p = build_qp(&c.bundle, &c.comp, &c.m_vec, &c.weights, &free(n)).unwrap();
        let v = evaluate_objective(&c.bundle, &c.comp, &c.m_vec, &c.weights, &c.x).unwrap();
        let q = 0.5 * p.h.quad_form(&c.x) + p.f.iter().zip(&c.x).map(|(a, b)| a * b).sum::<f64>() + p.c;
        assert!((q - v).abs() <= 1e-10 * (1.0 + v.abs()), "seed {seed}: qp {q} direct {v}");
        assert!(p.h.max_asymmetry() == 0.0);
    }
}

#[test]
fn finite_difference_gradient_and_hessian() {
    for seed in 0..100 {
        let c = case(seed);
        let n = c.x.len();
        let p = build_qp(&c.bundle, &c.comp, &c.m_vec, &c.weights, &free(n)).unwrap();
        let v = |x: &[f64]| evaluate_objective(&c.bundle, &c.comp, &c.m_vec, &c.weights, x).unwrap();
        let g = p.gradient(&c.x);
        let gscale = g.iter().fold(1.0f64, |m, a| m.max(a.abs()));
        let h = 1e-4;
        for i in 0..n {
            let mut a = c.x.clone();
            let mut b = c.x.clone();
            a[i] += h;
            b[i] -= h;
            let fd = (v(&a) - v(&b)) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-6 * gscale, "seed {seed} g[{i}]: fd {fd} vs {}", g[i]);
        }
        let hscale = p.h.max_abs().max(1.0);
        let h = 1e-2;
        for i in 0..n {
            for j in 0..n {
                let shifted = |si: f64, sj: f64| {
                    let mut y = c.x.clone();
                    y[i] += si * h;
                    y[j] += sj * h;
                    v(&y)
                };
                let fd = (shifted(1.0, 1.0) - shifted(1.0, -1.0) - shifted(-1.0, 1.0) + shifted(-1.0, -1.0))
                    / (4.0 * h * h);
                assert!(
                    (fd - p.h[(i, j)]).abs() <= 1e-5 * hscale,
                    "seed {seed} H[{i},{j}]: fd {fd} vs {}",
                    p.h[(i, j)]
                );
            }
        }
    }
}

#[test]
fn compensation_shifts_only_the_linear_part() {
    let c = case(11);
    let n = c.x.len();
    let fresh = CompensationState::new(3, c.bundle.models.iter().map(|m| m.target.clone()).collect()).unwrap();
    let p0 = build_qp(&c.bundle, &fresh, &c.m_vec, &c.weights, &free(n)).unwrap();
    let p1 = build_qp(&c.bundle, &c.comp, &c.m_vec, &c.weights, &free(n)).unwrap();
    assert_eq!(p0.h, p1.h);
}
