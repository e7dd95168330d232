//! Dense convex QP solver: presolve followed by a primal-dual interior-point
//! method with Mehrotra predictor-corrector steps and extra centrality
//! correctors.

mod ipm;
mod presolve;
mod random;

use serde::{Deserialize, Serialize};

use crate::clock::Stopwatch;
use crate::error::{Error, Result};
use crate::linalg::{norm_inf, Matrix};
use crate::objective::QpProblem;

pub use presolve::{presolve, PostsolveMap, PresolveReport, RemovedRows};
pub use random::random_qp;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub tol_kkt: f64,
    pub max_iter: usize,
    pub max_centrality_corrections: usize,
    pub presolve: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol_kkt: 1e-8,
            max_iter: 100,
            max_centrality_corrections: 2,
            presolve: true,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol_kkt > 0.0) {
            return Err(Error::Config("solver.tol_kkt must be > 0".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("solver.max_iter must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Optimal,
    MaxIter,
    Infeasible,
    Unbounded,
}

/// Lagrange multipliers with the sign convention
/// `Hx + f + A_eᵀy + A_qᵀλ − z_lower + z_upper = 0`, `λ, z ≥ 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Multipliers {
    pub eq: Vec<f64>,
    pub ineq: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Multipliers {
    pub fn zeros(p: &QpProblem) -> Self {
        Self {
            eq: vec![0.0; p.constraints.eq_rows.len()],
            ineq: vec![0.0; p.constraints.ineq_rows.len()],
            lower: vec![0.0; p.n()],
            upper: vec![0.0; p.n()],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals {
    /// Largest constraint violation, absolute.
    pub primal: f64,
    /// Stationarity residual and multiplier sign violations, over `1 + ‖f‖∞`.
    pub dual: f64,
    /// Largest `|slack·multiplier|`, over `1 + |V(x)|`.
    pub complementarity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub mu: f64,
    pub primal: f64,
    pub dual: f64,
    pub step: f64,
    pub corrections: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub status: Status,
    pub iterations: usize,
    pub kkt_residuals: KktResiduals,
    pub solve_time_s: f64,
    pub multipliers: Multipliers,
    /// Set when a KKT factorization needed pivot regularization.
    pub kkt_regularized: bool,
    pub presolve: Option<PresolveReport>,
    pub trace: Vec<IterationLog>,
}

/// Magnitude of the right-hand sides and finite bounds.
pub fn problem_scale(p: &QpProblem) -> f64 {
    let c = &p.constraints;
    let mut s = 0.0f64;
    for r in c.eq_rows.iter().chain(&c.ineq_rows) {
        s = s.max(r.rhs.abs());
    }
    for v in c.lower.iter().chain(&c.upper) {
        if v.is_finite() {
            s = s.max(v.abs());
        }
    }
    s
}

pub fn kkt_residuals(p: &QpProblem, x: &[f64], m: &Multipliers) -> KktResiduals {
    let c = &p.constraints;
    let primal = c.max_violation(x);

    let mut r = p.gradient(x);
    let mut sign = 0.0f64;
    for (row, &y) in c.eq_rows.iter().zip(&m.eq) {
        crate::linalg::axpy(y, &row.coeffs, &mut r);
    }
    for (row, &l) in c.ineq_rows.iter().zip(&m.ineq) {
        crate::linalg::axpy(l, &row.coeffs, &mut r);
        sign = sign.max(-l);
    }
    for i in 0..x.len() {
        r[i] += m.upper[i] - m.lower[i];
        sign = sign.max(-m.lower[i]).max(-m.upper[i]);
    }
    let dual = (norm_inf(&r) + sign) / (1.0 + norm_inf(&p.f));

    let mut comp = 0.0f64;
    for (row, &l) in c.ineq_rows.iter().zip(&m.ineq) {
        comp = comp.max(((row.rhs - row.activity(x)) * l).abs());
    }
    for i in 0..x.len() {
        if c.lower[i].is_finite() {
            comp = comp.max(((x[i] - c.lower[i]) * m.lower[i]).abs());
        }
        if c.upper[i].is_finite() {
            comp = comp.max(((c.upper[i] - x[i]) * m.upper[i]).abs());
        }
    }
    let complementarity = comp / (1.0 + p.objective(x).abs());
    KktResiduals {
        primal,
        dual,
        complementarity,
    }
}

/// `x₀`: bound midpoints, pulled strictly inside by `1e-4·range`; one unit
/// inside a lone finite bound; zero when free.
pub fn starting_point(lower: &[f64], upper: &[f64]) -> Vec<f64> {
    lower
        .iter()
        .zip(upper)
        .map(|(&l, &u)| match (l.is_finite(), u.is_finite()) {
            (true, true) => {
                let margin = 1e-4 * (u - l);
                (0.5 * (l + u)).clamp(l + margin, u - margin)
            }
            (true, false) => l + 1.0,
            (false, true) => u - 1.0,
            (false, false) => 0.0,
        })
        .collect()
}

pub fn solve(p: &QpProblem, opts: &SolverOptions) -> Result<Solution> {
    opts.validate()?;
    p.validate()?;
    let asym = p.h.max_asymmetry();
    if asym > 1e-8 {
        return Err(Error::NotSymmetric(asym));
    }
    let clock = Stopwatch::start();
    let (reduced, report, map) = if opts.presolve {
        let (r, rep, map) = presolve(p);
        (r, Some(rep), map)
    } else {
        (p.clone(), None, PostsolveMap::identity(p))
    };

    if report.as_ref().is_some_and(|r| r.detected_infeasible) {
        let x = starting_point(&p.constraints.lower, &p.constraints.upper);
        let multipliers = Multipliers::zeros(p);
        return Ok(Solution {
            objective: p.objective(&x),
            kkt_residuals: kkt_residuals(p, &x, &multipliers),
            x,
            status: Status::Infeasible,
            iterations: 0,
            solve_time_s: clock.elapsed_s(),
            multipliers,
            kkt_regularized: false,
            presolve: report,
            trace: Vec::new(),
        });
    }

    let out = ipm::run(&reduced, opts);
    let (x, multipliers) = map.postsolve(p, &out.x, &out.multipliers);
    Ok(Solution {
        objective: p.objective(&x),
        kkt_residuals: kkt_residuals(p, &x, &multipliers),
        x,
        status: out.status,
        iterations: out.iterations,
        solve_time_s: clock.elapsed_s(),
        multipliers,
        kkt_regularized: out.regularized,
        presolve: report,
        trace: out.trace,
    })
}

/// Convenience for tests and the demo: `min ½xᵀHx + fᵀx` over a box.
pub fn box_qp(h: Matrix, f: Vec<f64>, lower: Vec<f64>, upper: Vec<f64>) -> QpProblem {
    QpProblem::new(
        h,
        f,
        0.0,
        crate::objective::ControlConstraints::boxed(lower, upper),
    )
}
