//! Problem reductions applied before the interior-point iterations, with the
//! bookkeeping needed to map a reduced primal-dual solution back.
//!
//! Reductions are recorded on an operation stack. Postsolve walks the stack
//! in reverse: a variable removed at some point only interacts with rows
//! removed later, whose multipliers are already restored by then.

use serde::{Deserialize, Serialize};

use crate::linalg::{dot, Matrix};
use crate::objective::{ControlConstraints, LinearRow, QpProblem};

use super::Multipliers;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemovedRows {
    pub empty: usize,
    pub duplicate: usize,
    pub forcing: usize,
    pub redundant: usize,
    pub singleton: usize,
}

impl RemovedRows {
    pub fn total(&self) -> usize {
        self.empty + self.duplicate + self.forcing + self.redundant + self.singleton
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PresolveReport {
    /// `(variable, value)` in the order variables were fixed.
    pub fixed_variables: Vec<(usize, f64)>,
    pub removed_rows: RemovedRows,
    pub tightened_bounds: usize,
    pub detected_infeasible: bool,
    pub certificate: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Eq,
    Ineq,
}

#[derive(Debug, Clone, PartialEq)]
enum Op {
    /// Variable fixed (equal bounds, or pushed to a bound by a forcing row).
    Fix { var: usize },
    /// Variable fixed by a singleton equality row.
    FixByEq { var: usize, row: usize, coef: f64 },
    /// Singleton inequality row turned into a bound on `var`.
    Tighten { var: usize, row: usize, coef: f64 },
    /// Inequality row whose minimum activity meets the right-hand side.
    Forcing { row: usize, vars: Vec<(usize, f64)> },
}

/// Maps a solution of the reduced problem back to the original one.
#[derive(Debug, Clone, PartialEq)]
pub struct PostsolveMap {
    n: usize,
    kept_vars: Vec<usize>,
    kept_eq: Vec<usize>,
    kept_ineq: Vec<usize>,
    fixed: Vec<Option<f64>>,
    ops: Vec<Op>,
}

impl PostsolveMap {
    pub fn identity(p: &QpProblem) -> Self {
        Self {
            n: p.n(),
            kept_vars: (0..p.n()).collect(),
            kept_eq: (0..p.constraints.eq_rows.len()).collect(),
            kept_ineq: (0..p.constraints.ineq_rows.len()).collect(),
            fixed: vec![None; p.n()],
            ops: Vec::new(),
        }
    }

    pub fn postsolve(&self, orig: &QpProblem, x_red: &[f64], m_red: &Multipliers) -> (Vec<f64>, Multipliers) {
        let mut x = vec![0.0; self.n];
        for (i, v) in self.fixed.iter().enumerate() {
            if let Some(v) = v {
                x[i] = *v;
            }
        }
        let mut m = Multipliers::zeros(orig);
        for (k, &j) in self.kept_vars.iter().enumerate() {
            x[j] = x_red[k];
            m.lower[j] = m_red.lower[k];
            m.upper[j] = m_red.upper[k];
        }
        for (k, &r) in self.kept_eq.iter().enumerate() {
            m.eq[r] = m_red.eq[k];
        }
        for (k, &r) in self.kept_ineq.iter().enumerate() {
            m.ineq[r] = m_red.ineq[k];
        }
        let c = &orig.constraints;
        // `Hx + f + A_eᵀy + A_qᵀλ` in coordinate j
        let partial = |m: &Multipliers, j: usize| -> f64 {
            let mut g = dot(orig.h.row(j), &x) + orig.f[j];
            for (r, y) in c.eq_rows.iter().zip(&m.eq) {
                g += r.coeffs[j] * y;
            }
            for (r, l) in c.ineq_rows.iter().zip(&m.ineq) {
                g += r.coeffs[j] * l;
            }
            g
        };
        for op in self.ops.iter().rev() {
            match op {
                Op::Fix { var } => {
                    let g = partial(&m, *var);
                    m.lower[*var] = g.max(0.0);
                    m.upper[*var] = (-g).max(0.0);
                }
                Op::FixByEq { var, row, coef } => {
                    m.lower[*var] = 0.0;
                    m.upper[*var] = 0.0;
                    m.eq[*row] = -partial(&m, *var) / coef;
                }
                Op::Tighten { var, row, coef } => {
                    // the bound came from the row, so its multiplier moves there
                    let z = if *coef > 0.0 { &mut m.upper[*var] } else { &mut m.lower[*var] };
                    if *z > 0.0 {
                        m.ineq[*row] = *z / coef.abs();
                        *z = 0.0;
                    }
                }
                Op::Forcing { row, vars } => {
                    let lam = vars
                        .iter()
                        .map(|&(j, a)| -(m.lower[j] - m.upper[j]) / a)
                        .fold(0.0f64, f64::max);
                    m.ineq[*row] = lam;
                    for &(j, a) in vars {
                        let net = m.lower[j] - m.upper[j] + a * lam;
                        m.lower[j] = net.max(0.0);
                        m.upper[j] = (-net).max(0.0);
                    }
                }
            }
        }
        (x, m)
    }
}

struct Work<'a> {
    p: &'a QpProblem,
    lower: Vec<f64>,
    upper: Vec<f64>,
    fixed: Vec<Option<f64>>,
    eq_alive: Vec<bool>,
    ineq_alive: Vec<bool>,
    ops: Vec<Op>,
    report: PresolveReport,
}

/// Coefficients on free variables and the right-hand side net of fixed ones.
struct Reduced {
    nz: Vec<(usize, f64)>,
    rhs: f64,
}

fn tol(b: f64) -> f64 {
    1e-9 * (1.0 + b.abs())
}

impl<'a> Work<'a> {
    fn row(&self, kind: Kind, r: usize) -> &'a LinearRow {
        match kind {
            Kind::Eq => &self.p.constraints.eq_rows[r],
            Kind::Ineq => &self.p.constraints.ineq_rows[r],
        }
    }

    fn reduced(&self, kind: Kind, r: usize) -> Reduced {
        let row = self.row(kind, r);
        let mut rhs = row.rhs;
        let mut nz = Vec::new();
        for (j, &a) in row.coeffs.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            match self.fixed[j] {
                Some(v) => rhs -= a * v,
                None => nz.push((j, a)),
            }
        }
        Reduced { nz, rhs }
    }

    fn activity_range(&self, nz: &[(usize, f64)]) -> (f64, f64) {
        let (mut lo, mut hi) = (0.0, 0.0);
        for &(j, a) in nz {
            let (l, u) = (self.lower[j], self.upper[j]);
            if a > 0.0 {
                lo += a * l;
                hi += a * u;
            } else {
                lo += a * u;
                hi += a * l;
            }
        }
        (lo, hi)
    }

    fn infeasible(&mut self, why: String) {
        self.report.detected_infeasible = true;
        self.report.certificate = Some(why);
    }

    fn kill(&mut self, kind: Kind, r: usize) {
        match kind {
            Kind::Eq => self.eq_alive[r] = false,
            Kind::Ineq => self.ineq_alive[r] = false,
        }
    }

    fn fix(&mut self, j: usize, v: f64) {
        self.fixed[j] = Some(v);
        self.report.fixed_variables.push((j, v));
    }

    /// One sweep over bounds and rows; returns whether anything changed.
    fn pass(&mut self) -> bool {
        let mut changed = false;
        let n = self.p.n();
        for j in 0..n {
            if self.fixed[j].is_some() {
                continue;
            }
            let (l, u) = (self.lower[j], self.upper[j]);
            if l > u + tol(l.max(u)) {
                self.infeasible(format!("variable {j} has lower bound {l} above upper bound {u}"));
                return false;
            }
            if l.is_finite() && u - l <= 1e-12 * (1.0 + l.abs()) {
                self.fix(j, l);
                self.ops.push(Op::Fix { var: j });
                changed = true;
            }
        }

        for kind in [Kind::Eq, Kind::Ineq] {
            let m = match kind {
                Kind::Eq => self.eq_alive.len(),
                Kind::Ineq => self.ineq_alive.len(),
            };
            for r in 0..m {
                let alive = match kind {
                    Kind::Eq => self.eq_alive[r],
                    Kind::Ineq => self.ineq_alive[r],
                };
                if !alive {
                    continue;
                }
                changed |= self.row_rule(kind, r);
                if self.report.detected_infeasible {
                    return false;
                }
            }
        }

        changed |= self.duplicates(Kind::Eq);
        if self.report.detected_infeasible {
            return false;
        }
        changed |= self.duplicates(Kind::Ineq);
        changed
    }

    fn row_rule(&mut self, kind: Kind, r: usize) -> bool {
        let Reduced { nz, rhs } = self.reduced(kind, r);
        let name = match kind {
            Kind::Eq => "equality",
            Kind::Ineq => "inequality",
        };
        if nz.is_empty() {
            let bad = match kind {
                Kind::Eq => rhs.abs() > tol(rhs),
                Kind::Ineq => rhs < -tol(rhs),
            };
            if bad {
                self.infeasible(format!("{name} row {r} has no free variables but needs 0 vs {rhs}"));
            } else {
                self.kill(kind, r);
                self.report.removed_rows.empty += 1;
            }
            return true;
        }
        if nz.len() == 1 {
            let (j, a) = nz[0];
            let v = rhs / a;
            let (l, u) = (self.lower[j], self.upper[j]);
            match kind {
                Kind::Eq => {
                    if v < l - tol(l) || v > u + tol(u) {
                        self.infeasible(format!(
                            "equality row {r} forces variable {j} to {v}, outside [{l}, {u}]"
                        ));
                        return false;
                    }
                    self.fix(j, v.clamp(l, u));
                    self.ops.push(Op::FixByEq { var: j, row: r, coef: a });
                }
                Kind::Ineq => {
                    if a > 0.0 && v < u {
                        self.upper[j] = v;
                        self.ops.push(Op::Tighten { var: j, row: r, coef: a });
                        self.report.tightened_bounds += 1;
                    } else if a < 0.0 && v > l {
                        self.lower[j] = v;
                        self.ops.push(Op::Tighten { var: j, row: r, coef: a });
                        self.report.tightened_bounds += 1;
                    }
                }
            }
            self.kill(kind, r);
            self.report.removed_rows.singleton += 1;
            return true;
        }

        let (lo, hi) = self.activity_range(&nz);
        match kind {
            Kind::Eq => {
                if lo > rhs + tol(rhs) || hi < rhs - tol(rhs) {
                    self.infeasible(format!(
                        "equality row {r} needs {rhs} but activity lies in [{lo}, {hi}]"
                    ));
                }
                false
            }
            Kind::Ineq => {
                if lo > rhs + tol(rhs) {
                    self.infeasible(format!(
                        "inequality row {r} needs at most {rhs} but activity is at least {lo}"
                    ));
                    false
                } else if hi <= rhs {
                    self.kill(kind, r);
                    self.report.removed_rows.redundant += 1;
                    true
                } else if lo.is_finite() && lo >= rhs - tol(rhs) {
                    self.kill(kind, r);
                    self.report.removed_rows.forcing += 1;
                    self.ops.push(Op::Forcing { row: r, vars: nz.clone() });
                    for &(j, a) in &nz {
                        let v = if a > 0.0 { self.lower[j] } else { self.upper[j] };
                        self.fix(j, v);
                        self.ops.push(Op::Fix { var: j });
                    }
                    true
                } else {
                    false
                }
            }
        }
    }

    /// Rows that coincide after scaling; the looser inequality is dropped.
    fn duplicates(&mut self, kind: Kind) -> bool {
        let alive: Vec<usize> = match kind {
            Kind::Eq => (0..self.eq_alive.len()).filter(|&r| self.eq_alive[r]).collect(),
            Kind::Ineq => (0..self.ineq_alive.len()).filter(|&r| self.ineq_alive[r]).collect(),
        };
        let n = self.p.n();
        let normed: Vec<(Vec<f64>, f64)> = alive
            .iter()
            .map(|&r| {
                let Reduced { nz, rhs } = self.reduced(kind, r);
                let mut s = nz.iter().map(|(_, a)| a.abs()).fold(0.0, f64::max);
                if kind == Kind::Eq && nz.first().is_some_and(|(_, a)| *a < 0.0) {
                    s = -s;
                }
                let mut v = vec![0.0; n];
                for (j, a) in nz {
                    v[j] = a / s;
                }
                (v, rhs / s)
            })
            .collect();
        let mut changed = false;
        let mut gone = vec![false; alive.len()];
        for i in 0..alive.len() {
            if gone[i] {
                continue;
            }
            for k in (i + 1)..alive.len() {
                if gone[k] {
                    continue;
                }
                let same = normed[i]
                    .0
                    .iter()
                    .zip(&normed[k].0)
                    .all(|(a, b)| (a - b).abs() <= 1e-12);
                if !same {
                    continue;
                }
                let (bi, bk) = (normed[i].1, normed[k].1);
                let drop = match kind {
                    Kind::Eq => {
                        if (bi - bk).abs() > tol(bi) {
                            self.infeasible(format!(
                                "equality rows {} and {} are parallel with different right-hand sides",
                                alive[i], alive[k]
                            ));
                            return false;
                        }
                        k
                    }
                    Kind::Ineq => {
                        if bk < bi {
                            i
                        } else {
                            k
                        }
                    }
                };
                gone[drop] = true;
                self.kill(kind, alive[drop]);
                self.report.removed_rows.duplicate += 1;
                changed = true;
                if drop == i {
                    break;
                }
            }
        }
        changed
    }
}

/// Applies reductions until none fires. On detected infeasibility the
/// returned problem is the original one and the report carries a
/// certificate.
pub fn presolve(p: &QpProblem) -> (QpProblem, PresolveReport, PostsolveMap) {
    let c = &p.constraints;
    let mut w = Work {
        p,
        lower: c.lower.clone(),
        upper: c.upper.clone(),
        fixed: vec![None; p.n()],
        eq_alive: vec![true; c.eq_rows.len()],
        ineq_alive: vec![true; c.ineq_rows.len()],
        ops: Vec::new(),
        report: PresolveReport::default(),
    };
    while w.pass() {}
    if w.report.detected_infeasible {
        return (p.clone(), w.report, PostsolveMap::identity(p));
    }

    let kept_vars: Vec<usize> = (0..p.n()).filter(|&j| w.fixed[j].is_none()).collect();
    let fixed_idx: Vec<usize> = (0..p.n()).filter(|&j| w.fixed[j].is_some()).collect();
    let x_fixed: Vec<f64> = fixed_idx.iter().map(|&j| w.fixed[j].unwrap()).collect();

    let h = p.h.select(&kept_vars, &kept_vars);
    let h_kf = p.h.select(&kept_vars, &fixed_idx);
    let hkf_x = h_kf.mul_vec(&x_fixed);
    let f: Vec<f64> = kept_vars.iter().zip(&hkf_x).map(|(&j, v)| p.f[j] + v).collect();
    let h_ff = p.h.select(&fixed_idx, &fixed_idx);
    let f_f: Vec<f64> = fixed_idx.iter().map(|&j| p.f[j]).collect();
    let cst = p.c + dot(&f_f, &x_fixed) + 0.5 * h_ff.quad_form(&x_fixed);

    let kept_eq: Vec<usize> = (0..c.eq_rows.len()).filter(|&r| w.eq_alive[r]).collect();
    let kept_ineq: Vec<usize> = (0..c.ineq_rows.len()).filter(|&r| w.ineq_alive[r]).collect();
    let shrink = |kind: Kind, r: usize| {
        let red = w.reduced(kind, r);
        let row = w.row(kind, r);
        LinearRow::new(kept_vars.iter().map(|&j| row.coeffs[j]).collect(), red.rhs)
    };
    let cons = ControlConstraints {
        lower: kept_vars.iter().map(|&j| w.lower[j]).collect(),
        upper: kept_vars.iter().map(|&j| w.upper[j]).collect(),
        ineq_rows: kept_ineq.iter().map(|&r| shrink(Kind::Ineq, r)).collect(),
        eq_rows: kept_eq.iter().map(|&r| shrink(Kind::Eq, r)).collect(),
    };
    let reduced = QpProblem {
        h: if kept_vars.is_empty() { Matrix::zeros(0, 0) } else { h },
        f,
        c: cst,
        constraints: cons,
        provenance: None,
    };
    let map = PostsolveMap {
        n: p.n(),
        kept_vars,
        kept_eq,
        kept_ineq,
        fixed: w.fixed,
        ops: w.ops,
    };
    (reduced, w.report, map)
}
