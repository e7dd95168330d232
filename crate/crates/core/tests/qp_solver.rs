#[path = "support/qp_oracle.rs"]
mod qp_oracle;

use boiler_core::objective::{ControlConstraints, LinearRow, QpProblem};
use boiler_core::qpsolver::{
    kkt_residuals, presolve, problem_scale, random_qp, solve, Multipliers, SolverOptions, Status,
};
use boiler_core::linalg::Matrix;

fn dims(seed: u64) -> usize {
    1 + (seed as usize * 7) % 30
}

fn rel_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

#[test]
fn random_instances_match_dual_oracle() {
    let opts = SolverOptions::default();
    for seed in 0..200 {
        let p = random_qp(seed, dims(seed));
        let s = solve(&p, &opts).unwrap();
        assert_eq!(s.status, Status::Optimal, "seed {seed}: {:?}", s.trace.last());
        let o = qp_oracle::dual_oracle(&p);
        assert!(
            rel_gap(s.objective, o.objective) <= 1e-6,
            "seed {seed}: ipm {} oracle {}",
            s.objective,
            o.objective
        );
        let k = s.kkt_residuals;
        assert!(k.primal <= 1e-8 && k.dual <= 1e-8 && k.complementarity <= 1e-8, "seed {seed}: {k:?}");
    }
}

#[test]
fn dual_oracle_agrees_with_enumeration_on_small_instances() {
    let mut checked = 0;
    for seed in 1000..1150 {
        let p = random_qp(seed, 1 + seed as usize % 6);
        let Some(e) = qp_oracle::enumeration_oracle(&p) else { continue };
        let d = qp_oracle::dual_oracle(&p);
        assert!(rel_gap(d.objective, e) <= 1e-8, "seed {seed}: dual {} enum {e}", d.objective);
        let s = solve(&p, &SolverOptions::default()).unwrap();
        assert!(rel_gap(s.objective, e) <= 1e-6, "seed {seed}: ipm {} enum {e}", s.objective);
        checked += 1;
    }
    assert!(checked >= 100, "only {checked} instances small enough to enumerate");
}

#[test]
fn oracle_points_have_small_kkt_residuals() {
    for seed in 0..60 {
        let p = random_qp(seed, dims(seed));
        let o = qp_oracle::dual_oracle(&p);
        let k = kkt_residuals(&p, &o.x, &o.multipliers);
        assert!(k.primal <= 1e-6 && k.dual <= 1e-6 && k.complementarity <= 1e-6, "seed {seed}: {k:?}");
    }
}

#[test]
fn presolve_and_direct_solves_agree() {
    for seed in 0..100 {
        let p = random_qp(500 + seed, dims(seed));
        let with = solve(&p, &SolverOptions::default()).unwrap();
        let without = solve(&p, &SolverOptions { presolve: false, ..Default::default() }).unwrap();
        assert_eq!(with.status, Status::Optimal);
        assert_eq!(without.status, Status::Optimal, "seed {seed}");
        assert!(
            rel_gap(with.objective, without.objective) <= 1e-8,
            "seed {seed}: {} vs {}",
            with.objective,
            without.objective
        );
    }
}

#[test]
fn postsolve_lifts_reduced_solution_exactly() {
    for seed in 0..100 {
        let p = random_qp(900 + seed, dims(seed));
        let (reduced, report, map) = presolve(&p);
        assert!(!report.detected_infeasible);
        let rs = solve(&reduced, &SolverOptions { presolve: false, ..Default::default() }).unwrap();
        let (x, _) = map.postsolve(&p, &rs.x, &rs.multipliers);
        assert_eq!(x.len(), p.n());
        for &(j, v) in &report.fixed_variables {
            assert_eq!(x[j], v);
        }
        assert!((p.objective(&x) - rs.objective).abs() <= 1e-9 * (1.0 + rs.objective.abs()));
    }
}

#[test]
fn solution_invariants() {
    let opts = SolverOptions::default();
    for seed in 0..100 {
        let p = random_qp(300 + seed, dims(seed));
        let s = solve(&p, &opts).unwrap();
        assert_eq!(s.status, Status::Optimal);
        let c = &p.constraints;
        let be = c.eq_rows.iter().map(|r| r.rhs.abs()).fold(0.0, f64::max);
        for r in &c.eq_rows {
            assert!((r.activity(&s.x) - r.rhs).abs() <= 1e-8 * (1.0 + be));
        }
        for r in &c.ineq_rows {
            assert!(r.activity(&s.x) <= r.rhs + 1e-8);
        }
        for j in 0..p.n() {
            assert!(s.x[j] >= c.lower[j] - 1e-9 && s.x[j] <= c.upper[j] + 1e-9);
        }
        // objective recomputed term by term
        let mut v = p.c;
        for i in 0..p.n() {
            v += p.f[i] * s.x[i];
            for j in 0..p.n() {
                v += 0.5 * s.x[i] * p.h[(i, j)] * s.x[j];
            }
        }
        assert!((v - s.objective).abs() <= 1e-12 * (1.0 + v.abs()));
        // complementarity measure never grows by more than 10%
        for w in s.trace.windows(2) {
            assert!(w[1].mu <= 1.1 * w[0].mu, "seed {seed}: {} -> {}", w[0].mu, w[1].mu);
        }
        let k = s.kkt_residuals;
        let tol = opts.tol_kkt * (1.0 + problem_scale(&p));
        assert!(k.primal <= tol && k.dual <= tol && k.complementarity <= tol);
    }
}

#[test]
fn iterates_are_bit_identical_across_runs() {
    for seed in 0..20 {
        let p = random_qp(seed, dims(seed));
        let a = solve(&p, &SolverOptions::default()).unwrap();
        let b = solve(&p, &SolverOptions::default()).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.x, b.x);
        assert_eq!(a.multipliers, b.multipliers);
    }
}

#[test]
fn fixed_variable_is_reinserted() {
    let mut cons = ControlConstraints::boxed(vec![-5.0; 3], vec![5.0; 3]);
    cons.lower[1] = 3.0;
    cons.upper[1] = 3.0;
    cons.ineq_rows.push(LinearRow::new(vec![1.0, 1.0, 1.0], 4.0));
    let p = QpProblem::new(Matrix::identity(3), vec![-1.0, 0.0, -1.0], 0.0, cons);
    let (reduced, report, _) = presolve(&p);
    assert_eq!(reduced.n(), 2);
    assert_eq!(report.fixed_variables, vec![(1, 3.0)]);
    let s = solve(&p, &SolverOptions::default()).unwrap();
    assert_eq!(s.x[1], 3.0);
    assert!((s.x[0] - 0.5).abs() < 1e-7 && (s.x[2] - 0.5).abs() < 1e-7, "{:?}", s.x);
    let k = kkt_residuals(&p, &s.x, &s.multipliers);
    assert!(k.dual <= 1e-8, "{k:?}");
}

#[test]
fn zero_multipliers_expose_stationarity_gap() {
    let p = random_qp(7, 5);
    let s = solve(&p, &SolverOptions::default()).unwrap();
    let k = kkt_residuals(&p, &s.x, &Multipliers::zeros(&p));
    assert!(k.primal <= 1e-8);
    // the unconstrained gradient is almost never zero at a constrained optimum
    assert!(k.dual > 0.0);
}
