//! Reference solutions for strictly convex QPs, independent of the
//! interior-point code: dual coordinate ascent followed by an equality-
//! constrained polish on the detected active set, and for small instances
//! brute-force enumeration of every face of the feasible region.

#![allow(dead_code)]

use boiler_core::objective::QpProblem;
use boiler_core::qpsolver::Multipliers;
use nalgebra::{DMatrix, DVector};

pub struct OracleSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub multipliers: Multipliers,
}

#[derive(Clone, Copy, PartialEq)]
enum Origin {
    Eq(usize),
    Ineq(usize),
    Lower(usize),
    Upper(usize),
}

struct Rows {
    c: Vec<DVector<f64>>,
    d: Vec<f64>,
    origin: Vec<Origin>,
}

impl Rows {
    fn of(p: &QpProblem) -> Self {
        let n = p.n();
        let cons = &p.constraints;
        let mut rows = Rows { c: vec![], d: vec![], origin: vec![] };
        for (i, r) in cons.eq_rows.iter().enumerate() {
            rows.c.push(DVector::from_column_slice(&r.coeffs));
            rows.d.push(r.rhs);
            rows.origin.push(Origin::Eq(i));
        }
        for (i, r) in cons.ineq_rows.iter().enumerate() {
            rows.c.push(DVector::from_column_slice(&r.coeffs));
            rows.d.push(r.rhs);
            rows.origin.push(Origin::Ineq(i));
        }
        for j in 0..n {
            if cons.lower[j].is_finite() {
                let mut e = DVector::zeros(n);
                e[j] = -1.0;
                rows.c.push(e);
                rows.d.push(-cons.lower[j]);
                rows.origin.push(Origin::Lower(j));
            }
            if cons.upper[j].is_finite() {
                let mut e = DVector::zeros(n);
                e[j] = 1.0;
                rows.c.push(e);
                rows.d.push(cons.upper[j]);
                rows.origin.push(Origin::Upper(j));
            }
        }
        rows
    }

    fn is_eq(&self, i: usize) -> bool {
        matches!(self.origin[i], Origin::Eq(_))
    }

    fn feasible(&self, x: &DVector<f64>, tol: f64) -> bool {
        (0..self.c.len()).all(|i| {
            let v = self.c[i].dot(x) - self.d[i];
            let t = tol * (1.0 + self.d[i].abs());
            if self.is_eq(i) {
                v.abs() <= t
            } else {
                v <= t
            }
        })
    }
}

fn to_dense(p: &QpProblem) -> (DMatrix<f64>, DVector<f64>) {
    let n = p.n();
    let h = DMatrix::from_fn(n, n, |i, j| p.h[(i, j)]);
    (h, DVector::from_column_slice(&p.f))
}

/// Minimizer of the objective with the rows in `active` held at equality;
/// returns `x` and the multipliers of those rows.
fn face_minimizer(
    hinv: &DMatrix<f64>,
    f: &DVector<f64>,
    rows: &Rows,
    active: &[usize],
) -> (DVector<f64>, DVector<f64>) {
    let x_free = -(hinv * f);
    if active.is_empty() {
        return (x_free, DVector::zeros(0));
    }
    let n = f.len();
    let ca = DMatrix::from_fn(active.len(), n, |r, j| rows.c[active[r]][j]);
    let da = DVector::from_iterator(active.len(), active.iter().map(|&i| rows.d[i]));
    let m = &ca * hinv * ca.transpose();
    let rhs = -(&da) + &ca * &x_free;
    let nu = m.svd(true, true).solve(&rhs, 1e-11).expect("svd solve");
    let x = x_free - hinv * ca.transpose() * &nu;
    (x, nu)
}

fn multipliers_from(p: &QpProblem, rows: &Rows, nu: &[f64]) -> Multipliers {
    let mut m = Multipliers::zeros(p);
    for (i, &v) in nu.iter().enumerate() {
        match rows.origin[i] {
            Origin::Eq(k) => m.eq[k] += v,
            Origin::Ineq(k) => m.ineq[k] += v,
            Origin::Lower(k) => m.lower[k] += v,
            Origin::Upper(k) => m.upper[k] += v,
        }
    }
    m
}

/// Dual coordinate ascent on `max_ν −½(f + Cᵀν)ᵀH⁻¹(f + Cᵀν) − dᵀν`,
/// `ν ≥ 0` on inequality rows, polished by solving the KKT system on the rows
/// with positive multipliers.
pub fn dual_oracle(p: &QpProblem) -> OracleSolution {
    let (h, f) = to_dense(p);
    let hinv = h.clone().cholesky().expect("strictly convex H").inverse();
    let rows = Rows::of(p);
    let m = rows.c.len();
    let u: Vec<DVector<f64>> = rows.c.iter().map(|c| &hinv * c).collect();
    let q: Vec<f64> = rows.c.iter().zip(&u).map(|(c, u)| c.dot(u)).collect();
    let mut nu = vec![0.0; m];
    let mut x = -(&hinv * &f);
    let mut best: Option<(DVector<f64>, Vec<f64>)> = None;

    for round in 0..100 {
        for _ in 0..2000 {
            let mut biggest = 0.0f64;
            for i in 0..m {
                if q[i] <= 1e-14 {
                    continue;
                }
                let g = rows.c[i].dot(&x) - rows.d[i];
                let mut new = nu[i] + g / q[i];
                if !rows.is_eq(i) {
                    new = new.max(0.0);
                }
                let delta = new - nu[i];
                if delta != 0.0 {
                    x.axpy(-delta, &u[i], 1.0);
                    nu[i] = new;
                    biggest = biggest.max(delta.abs() * q[i].sqrt());
                }
            }
            if biggest < 1e-13 {
                break;
            }
        }
        let active: Vec<usize> = (0..m).filter(|&i| rows.is_eq(i) || nu[i] > 1e-10).collect();
        let (xp, nup) = face_minimizer(&hinv, &f, &rows, &active);
        let signs_ok = active
            .iter()
            .zip(nup.iter())
            .all(|(&i, &v)| rows.is_eq(i) || v >= -1e-9);
        if rows.feasible(&xp, 1e-10) && signs_ok {
            let mut full = vec![0.0; m];
            for (&i, &v) in active.iter().zip(nup.iter()) {
                full[i] = if rows.is_eq(i) { v } else { v.max(0.0) };
            }
            best = Some((xp, full));
            break;
        }
        if round == 99 {
            best = Some((x.clone(), nu.clone()));
        }
    }
    let (x, nu) = best.expect("oracle result");
    let xv: Vec<f64> = x.iter().copied().collect();
    OracleSolution {
        objective: p.objective(&xv),
        multipliers: multipliers_from(p, &rows, &nu),
        x: xv,
    }
}

/// Minimum over all faces: each subset of inequality rows (together with the
/// equalities) held tight gives a candidate; the best feasible candidate is
/// the optimum. Only for instances with few inequality rows.
pub fn enumeration_oracle(p: &QpProblem) -> Option<f64> {
    let (h, f) = to_dense(p);
    let hinv = h.cholesky()?.inverse();
    let rows = Rows::of(p);
    let eqs: Vec<usize> = (0..rows.c.len()).filter(|&i| rows.is_eq(i)).collect();
    let ineqs: Vec<usize> = (0..rows.c.len()).filter(|&i| !rows.is_eq(i)).collect();
    if ineqs.len() > 14 {
        return None;
    }
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << ineqs.len()) {
        if mask.count_ones() as usize > p.n() + 2 {
            continue;
        }
        let mut active = eqs.clone();
        active.extend((0..ineqs.len()).filter(|k| mask & (1 << k) != 0).map(|k| ineqs[k]));
        let (x, _) = face_minimizer(&hinv, &f, &rows, &active);
        if rows.feasible(&x, 1e-9) {
            let xv: Vec<f64> = x.iter().copied().collect();
            best = best.min(p.objective(&xv));
        }
    }
    best.is_finite().then_some(best)
}
