//! Seeded random convex QPs with a known feasible point, for solver
//! cross-checks and optimizer benchmarks. Instances mix equality rows,
//! inequality rows, finite, one-sided, free and fixed bounds, and carry the
//! degenerate rows presolve is meant to remove.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::{dot, Matrix};
use crate::objective::{ControlConstraints, LinearRow, QpProblem};

/// Strictly convex instance of dimension `n` from `seed`.
pub fn random_qp(seed: u64, n: usize) -> QpProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let b: Vec<f64> = (0..n * n).map(|_| normal()).collect();
    let mut h = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v: f64 = (0..n).map(|k| b[k * n + i] * b[k * n + j]).sum::<f64>() / n as f64;
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
        h[(i, i)] += 0.1;
    }
    let f: Vec<f64> = (0..n).map(|_| 3.0 * normal()).collect();
    let c = normal();

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let x0: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut lower = vec![f64::NEG_INFINITY; n];
    let mut upper = vec![f64::INFINITY; n];
    for j in 0..n {
        let kind: f64 = rng.random();
        let lo = x0[j] - rng.random_range(0.1..2.0);
        let hi = x0[j] + rng.random_range(0.1..2.0);
        if kind < 0.6 {
            lower[j] = lo;
            upper[j] = hi;
        } else if kind < 0.7 {
            lower[j] = x0[j];
            upper[j] = x0[j];
        } else if kind < 0.8 {
            lower[j] = lo;
        } else if kind < 0.9 {
            upper[j] = hi;
        }
    }
    let mut cons = ControlConstraints::boxed(lower, upper);

    let sparse_row = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..n)
            .map(|_| {
                if rng.random_bool(0.5) {
                    StandardNormal.sample(rng)
                } else {
                    0.0
                }
            })
            .collect()
    };
    let me = rng.random_range(0..=(n / 3).min(3));
    for _ in 0..me {
        let a = sparse_row(&mut rng);
        let rhs = dot(&a, &x0);
        cons.eq_rows.push(LinearRow::new(a, rhs));
    }
    let mq = rng.random_range(0..=n);
    for _ in 0..mq {
        let a = sparse_row(&mut rng);
        let slack = if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.0..1.0) };
        let rhs = dot(&a, &x0) + slack;
        cons.ineq_rows.push(LinearRow::new(a, rhs));
    }
    if mq > 0 && rng.random_bool(0.3) {
        let k = rng.random_range(0..mq);
        let r = &cons.ineq_rows[k];
        let dup = LinearRow::new(r.coeffs.iter().map(|v| 2.0 * v).collect(), 2.0 * r.rhs + rng.random_range(0.0..0.5));
        cons.ineq_rows.push(dup);
    }
    if rng.random_bool(0.3) {
        let j = rng.random_range(0..n);
        let a = if rng.random_bool(0.5) { 1.5 } else { -0.5 };
        let mut coeffs = vec![0.0; n];
        coeffs[j] = a;
        cons.ineq_rows.push(LinearRow::new(coeffs, a * x0[j] + rng.random_range(0.0..1.0)));
    }
    if rng.random_bool(0.2) {
        cons.ineq_rows.push(LinearRow::new(vec![0.0; n], rng.random_range(0.0..1.0)));
    }
    if rng.random_bool(0.2) {
        let j = rng.random_range(0..n);
        let mut coeffs = vec![0.0; n];
        coeffs[j] = 2.0;
        cons.eq_rows.push(LinearRow::new(coeffs, 2.0 * x0[j]));
    }
    QpProblem::new(h, f, c, cons)
}
