//! Infeasible-start primal-dual interior-point iterations on
//! `min ½xᵀHx + fᵀx  s.t.  A_e x = b_e,  Gx + s = h,  s ≥ 0`, where `G`
//! stacks the inequality rows and the finite bounds.

use crate::linalg::{axpy, dot, norm_inf, Ldl, Matrix};
use crate::objective::QpProblem;

use super::{problem_scale, starting_point, IterationLog, Multipliers, SolverOptions, Status};

type Iterate = (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, usize);

const STEP_FRACTION: f64 = 0.99;
/// Step-length gain a centrality corrector aims for, and must deliver.
const GONDZIO_DELTA: f64 = 0.1;
const BETA_MIN: f64 = 0.1;
const BETA_MAX: f64 = 10.0;
const DIVERGED: f64 = 1e10;
const REG_DELTA: f64 = 1e-10;
const PIVOT_TOL: f64 = 1e-12;
/// Largest relative growth of `μ` a step may cause.
const MU_GROWTH: f64 = 1.05;
/// Consecutive iterations of cap-bound steps without residual progress after
/// which the instance is classified as infeasible or unbounded.
const BLOCKED_LIMIT: usize = 10;
/// Neighbourhood width: relative infeasibility may exceed relative `μ` by
/// at most this factor.
const INFEAS_BETA: f64 = 10.0;
/// Iterations are pushed to this fraction of `tol_kkt` before stopping; an
/// iterate already within `tol_kkt` is kept as fallback.
const TIGHTEN: f64 = 0.1;
const EXTRA_ITERS: usize = 5;

pub(super) struct Output {
    pub x: Vec<f64>,
    pub multipliers: Multipliers,
    pub status: Status,
    pub iterations: usize,
    pub regularized: bool,
    pub trace: Vec<IterationLog>,
}

/// Inequality block `G`: rows of `A_q`, then `−e_j` for finite lower bounds,
/// then `e_j` for finite upper bounds.
struct Ineq<'a> {
    p: &'a QpProblem,
    lo: Vec<usize>,
    up: Vec<usize>,
    h: Vec<f64>,
}

impl<'a> Ineq<'a> {
    fn new(p: &'a QpProblem) -> Self {
        let c = &p.constraints;
        let lo: Vec<usize> = (0..p.n()).filter(|&j| c.lower[j].is_finite()).collect();
        let up: Vec<usize> = (0..p.n()).filter(|&j| c.upper[j].is_finite()).collect();
        let mut h: Vec<f64> = c.ineq_rows.iter().map(|r| r.rhs).collect();
        h.extend(lo.iter().map(|&j| -c.lower[j]));
        h.extend(up.iter().map(|&j| c.upper[j]));
        Self { p, lo, up, h }
    }

    fn mq(&self) -> usize {
        self.p.constraints.ineq_rows.len()
    }

    fn m(&self) -> usize {
        self.h.len()
    }

    fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = self.p.constraints.ineq_rows.iter().map(|r| r.activity(x)).collect();
        out.extend(self.lo.iter().map(|&j| -x[j]));
        out.extend(self.up.iter().map(|&j| x[j]));
        out
    }

    fn tr_mul(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.p.n()];
        let mq = self.mq();
        for (r, vi) in self.p.constraints.ineq_rows.iter().zip(&v[..mq]) {
            axpy(*vi, &r.coeffs, &mut out);
        }
        for (k, &j) in self.lo.iter().enumerate() {
            out[j] -= v[mq + k];
        }
        for (k, &j) in self.up.iter().enumerate() {
            out[j] += v[mq + self.lo.len() + k];
        }
        out
    }

    /// Adds `GᵀWG` to the leading `n×n` block of `k`.
    fn add_scaled_gram(&self, w: &[f64], k: &mut Matrix) {
        let mq = self.mq();
        for (r, wi) in self.p.constraints.ineq_rows.iter().zip(&w[..mq]) {
            let a = &r.coeffs;
            for i in 0..a.len() {
                if a[i] == 0.0 {
                    continue;
                }
                let s = wi * a[i];
                for j in 0..a.len() {
                    k[(i, j)] += s * a[j];
                }
            }
        }
        for (k2, &j) in self.lo.iter().enumerate() {
            k[(j, j)] += w[mq + k2];
        }
        for (k2, &j) in self.up.iter().enumerate() {
            k[(j, j)] += w[mq + self.lo.len() + k2];
        }
    }
}

struct Factored {
    k: Matrix,
    ldl: Ldl,
}

impl Factored {
    /// Regularized solve, refined against the exact matrix only while the
    /// residual keeps shrinking.
    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let resid = |x: &[f64]| -> Vec<f64> {
            let kx = self.k.mul_vec(x);
            b.iter().zip(&kx).map(|(bi, ki)| bi - ki).collect()
        };
        let mut x = self.ldl.solve(b);
        let mut r = resid(&x);
        let mut rn = norm_inf(&r);
        let floor = 1e-15 * (1.0 + norm_inf(b));
        for _ in 0..3 {
            if rn <= floor {
                break;
            }
            let mut trial = x.clone();
            axpy(1.0, &self.ldl.solve(&r), &mut trial);
            let tr = resid(&trial);
            let tn = norm_inf(&tr);
            if tn >= rn {
                break;
            }
            x = trial;
            r = tr;
            rn = tn;
        }
        x
    }
}

struct Dir {
    dx: Vec<f64>,
    dy: Vec<f64>,
    ds: Vec<f64>,
    dz: Vec<f64>,
}

fn max_step(v: &[f64], dv: &[f64]) -> f64 {
    v.iter()
        .zip(dv)
        .filter(|(_, d)| **d < 0.0)
        .map(|(v, d)| -v / d)
        .fold(f64::INFINITY, f64::min)
}

pub(super) fn run(p: &QpProblem, opts: &SolverOptions) -> Output {
    let n = p.n();
    let c = &p.constraints;
    let me = c.eq_rows.len();
    let g = Ineq::new(p);
    let m = g.m();
    let b_e: Vec<f64> = c.eq_rows.iter().map(|r| r.rhs).collect();
    let scale = problem_scale(p);
    let f_scale = 1.0 + norm_inf(&p.f);

    let mut x = starting_point(&c.lower, &c.upper);
    let mut y = vec![0.0; me];
    let gx = g.mul(&x);
    let slack: Vec<f64> = g.h.iter().zip(&gx).map(|(h, v)| h - v).collect();
    let (y0, z_est) = multiplier_estimate(p, &g, &x);
    y = y0;
    let (mut s, mut z) = balanced_start(slack, z_est);

    let mut trace = Vec::new();
    let mut regularized = false;
    let mut status = Status::MaxIter;
    let mut iterations = 0;
    let mut stalled = 0;
    let mut start: Option<(f64, f64)> = None;
    let mut last_dx = vec![0.0; n];
    // (x, y, s, z, iteration) of the first iterate within tol_kkt
    let mut fallback: Option<Iterate> = None;

    loop {
        // residuals at the current iterate
        let mut r_d = p.gradient(&x);
        for (row, yi) in c.eq_rows.iter().zip(&y) {
            axpy(*yi, &row.coeffs, &mut r_d);
        }
        axpy(1.0, &g.tr_mul(&z), &mut r_d);
        let r_e: Vec<f64> = c.eq_rows.iter().zip(&b_e).map(|(r, b)| r.activity(&x) - b).collect();
        let gx = g.mul(&x);
        let r_g: Vec<f64> = (0..m).map(|i| gx[i] + s[i] - g.h[i]).collect();
        let mu = if m > 0 { dot(&s, &z) / m as f64 } else { 0.0 };

        let pri = norm_inf(&r_e).max(norm_inf(&r_g)) / (1.0 + scale);
        let dua = norm_inf(&r_d) / f_scale;
        // total gap, so the objective itself is accurate to the tolerance
        let comp = dot(&s, &z) / (1.0 + p.objective(&x).abs());
        let worst = pri.max(dua).max(comp);
        let infeas = pri.max(dua);
        let (inf0, mu0) = *start.get_or_insert((infeas, mu));
        if worst <= TIGHTEN * opts.tol_kkt {
            status = Status::Optimal;
            fallback = None;
            break;
        }
        if worst <= opts.tol_kkt && fallback.is_none() {
            fallback = Some((x.clone(), y.clone(), s.clone(), z.clone(), iterations));
        }
        if fallback.as_ref().is_some_and(|f| iterations >= f.4 + EXTRA_ITERS) {
            break;
        }
        if norm_inf(&x) > DIVERGED {
            status = Status::Unbounded;
            break;
        }
        if norm_inf(&z).max(norm_inf(&y)) > DIVERGED && pri > opts.tol_kkt {
            status = Status::Infeasible;
            break;
        }
        if stalled >= BLOCKED_LIMIT {
            status = classify_stall(p, &g, &y, &z, &last_dx);
            break;
        }
        if iterations == opts.max_iter {
            break;
        }
        iterations += 1;

        // augmented system [[H + GᵀWG, A_eᵀ], [A_e, 0]]
        let w: Vec<f64> = z.iter().zip(&s).map(|(z, s)| z / s).collect();
        let mut k = Matrix::zeros(n + me, n + me);
        for i in 0..n {
            for j in 0..n {
                k[(i, j)] = p.h[(i, j)];
            }
        }
        g.add_scaled_gram(&w, &mut k);
        for (r, row) in c.eq_rows.iter().enumerate() {
            for j in 0..n {
                k[(n + r, j)] = row.coeffs[j];
                k[(j, n + r)] = row.coeffs[j];
            }
        }
        let ldl = Ldl::factor(&k, n, REG_DELTA, PIVOT_TOL);
        regularized |= ldl.regularized_pivots() > 0;
        let fact = Factored { k, ldl };

        // Newton direction for a given complementarity residual `r_c`
        let direction = |r_c: &[f64], r_d: &[f64], r_e: &[f64], r_g: &[f64]| -> Dir {
            let tmp: Vec<f64> = (0..m).map(|i| (-r_c[i] + z[i] * r_g[i]) / s[i]).collect();
            let gt = g.tr_mul(&tmp);
            let mut rhs: Vec<f64> = (0..n).map(|i| -r_d[i] - gt[i]).collect();
            rhs.extend(r_e.iter().map(|v| -v));
            let sol = fact.solve(&rhs);
            let dx = sol[..n].to_vec();
            let dy = sol[n..].to_vec();
            let gdx = g.mul(&dx);
            let ds: Vec<f64> = (0..m).map(|i| -r_g[i] - gdx[i]).collect();
            let dz: Vec<f64> = (0..m).map(|i| tmp[i] + w[i] * gdx[i]).collect();
            Dir { dx, dy, ds, dz }
        };
        let step_of = |d: &Dir| -> f64 {
            let a = max_step(&s, &d.ds).min(max_step(&z, &d.dz));
            (STEP_FRACTION * a).min(1.0)
        };

        // predictor
        let sz: Vec<f64> = s.iter().zip(&z).map(|(a, b)| a * b).collect();
        let aff = direction(&sz, &r_d, &r_e, &r_g);
        let a_aff = max_step(&s, &aff.ds).min(max_step(&z, &aff.dz)).min(1.0);
        let sigma = if m > 0 {
            let mu_aff = (0..m)
                .map(|i| (s[i] + a_aff * aff.ds[i]) * (z[i] + a_aff * aff.dz[i]))
                .sum::<f64>()
                / m as f64;
            (mu_aff / mu).powi(3).min(1.0)
        } else {
            0.0
        };

        // corrector
        let r_c: Vec<f64> = (0..m)
            .map(|i| sz[i] + aff.ds[i] * aff.dz[i] - sigma * mu)
            .collect();
        let mut dir = direction(&r_c, &r_d, &r_e, &r_g);
        let mut alpha = step_of(&dir);

        // centrality correctors
        let mut corrections = 0;
        let zeros_n = vec![0.0; n];
        let zeros_e = vec![0.0; me];
        let zeros_m = vec![0.0; m];
        while corrections < opts.max_centrality_corrections && m > 0 && alpha < 1.0 {
            let target = (alpha + GONDZIO_DELTA).min(1.0);
            let lo = BETA_MIN * sigma * mu;
            let hi = BETA_MAX * sigma * mu;
            let t: Vec<f64> = (0..m)
                .map(|i| {
                    let v = (s[i] + target * dir.ds[i]) * (z[i] + target * dir.dz[i]);
                    (v.max(lo).min(hi) - v).max(-hi)
                })
                .collect();
            let neg_t: Vec<f64> = t.iter().map(|v| -v).collect();
            let corr = direction(&neg_t, &zeros_n, &zeros_e, &zeros_m);
            let trial = Dir {
                dx: add(&dir.dx, &corr.dx),
                dy: add(&dir.dy, &corr.dy),
                ds: add(&dir.ds, &corr.ds),
                dz: add(&dir.dz, &corr.dz),
            };
            let a_new = step_of(&trial);
            if a_new > alpha && a_new >= target {
                dir = trial;
                alpha = a_new;
                corrections += 1;
            } else {
                break;
            }
        }

        // keep μ from collapsing ahead of the residuals, which would force it
        // back up once feasibility is reached
        if m > 0 && infeas > opts.tol_kkt && inf0 > 0.0 && mu0 > 0.0 {
            let floor = alpha * 1e-3;
            while alpha > floor {
                let mu_next = mu_at(&s, &z, &dir, alpha);
                if (1.0 - alpha) * infeas / inf0 <= INFEAS_BETA * mu_next / mu0 {
                    break;
                }
                alpha *= 0.8;
            }
        }
        // μ may not grow by more than MU_GROWTH per step; a step cut below
        // 1% by this cap makes no real progress on the residuals
        let mut blocked = alpha < 1e-8;
        if m > 0 {
            let cap = mu_growth_limit(&s, &z, &dir, mu);
            blocked |= cap < 0.1 * alpha && cap < 0.01;
            alpha = alpha.min(cap);
        }

        last_dx.clone_from(&dir.dx);
        axpy(alpha, &dir.dx, &mut x);
        axpy(alpha, &dir.dy, &mut y);
        axpy(alpha, &dir.ds, &mut s);
        axpy(alpha, &dir.dz, &mut z);
        // residuals shrink by exactly (1 − α) along the Newton direction
        stalled = if blocked && infeas > opts.tol_kkt { stalled + 1 } else { 0 };
        trace.push(IterationLog {
            mu,
            primal: pri,
            dual: dua,
            step: alpha,
            corrections,
        });
    }

    if let Some((fx, fy, fs, fz, _)) = fallback {
        (x, y, s, z) = (fx, fy, fs, fz);
        status = Status::Optimal;
    }
    let _ = &s;

    let mq = g.mq();
    let nlo = g.lo.len();
    let mut mult = Multipliers {
        eq: y,
        ineq: z[..mq].to_vec(),
        lower: vec![0.0; n],
        upper: vec![0.0; n],
    };
    for (k, &j) in g.lo.iter().enumerate() {
        mult.lower[j] = z[mq + k];
    }
    for (k, &j) in g.up.iter().enumerate() {
        mult.upper[j] = z[mq + nlo + k];
    }
    Output {
        x,
        multipliers: mult,
        status,
        iterations,
        regularized,
        trace,
    }
}

/// Decides between the two divergence modes from approximate certificates:
/// a ray `(y, z ≥ 0)` with `A_eᵀy + Gᵀz ≈ 0` and `b_eᵀy + hᵀz < 0` proves
/// primal infeasibility; a direction `d` with `Hd ≈ 0`, `A_e d ≈ 0`,
/// `Gd ≤ 0` and `fᵀd < 0` proves unboundedness.
fn classify_stall(p: &QpProblem, g: &Ineq, y: &[f64], z: &[f64], dx: &[f64]) -> Status {
    let c = &p.constraints;
    let infeasible_score = {
        let scale = norm_inf(y).max(norm_inf(z));
        if scale > 0.0 {
            let mut r = g.tr_mul(z);
            for (row, yi) in c.eq_rows.iter().zip(y) {
                axpy(*yi, &row.coeffs, &mut r);
            }
            let bound = c.eq_rows.iter().zip(y).map(|(r, yi)| r.rhs * yi).sum::<f64>() + dot(&g.h, z);
            if bound < 0.0 {
                norm_inf(&r) / scale
            } else {
                f64::INFINITY
            }
        } else {
            f64::INFINITY
        }
    };
    let unbounded_score = {
        let scale = norm_inf(dx);
        if scale > 0.0 && dot(&p.f, dx) < 0.0 {
            let d: Vec<f64> = dx.iter().map(|v| v / scale).collect();
            let hd = norm_inf(&p.h.mul_vec(&d));
            let ed = c.eq_rows.iter().map(|r| r.activity(&d).abs()).fold(0.0, f64::max);
            let gd = g.mul(&d).into_iter().fold(0.0, f64::max);
            hd.max(ed).max(gd)
        } else {
            f64::INFINITY
        }
    };
    if infeasible_score.is_infinite() && unbounded_score.is_infinite() {
        Status::MaxIter
    } else if infeasible_score <= unbounded_score {
        Status::Infeasible
    } else {
        Status::Unbounded
    }
}

/// Shifts slack and multiplier estimates into the positive orthant with
/// balanced products: first by 1.5× their most negative entry (at least
/// to 1), then by half the weighted mean complementarity.
fn balanced_start(mut s: Vec<f64>, mut z: Vec<f64>) -> (Vec<f64>, Vec<f64>) {
    if s.is_empty() {
        return (s, z);
    }
    let lift = |v: &mut Vec<f64>| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let shift = (-1.5 * lo).max(0.0);
        v.iter_mut().for_each(|x| *x = (*x + shift).max(1.0));
    };
    lift(&mut s);
    lift(&mut z);
    let sz = dot(&s, &z);
    let ds = 0.5 * sz / z.iter().sum::<f64>();
    let dz = 0.5 * sz / s.iter().sum::<f64>();
    s.iter_mut().for_each(|x| *x += ds);
    z.iter_mut().for_each(|x| *x += dz);
    (s, z)
}

/// Least-squares multipliers at `x`: minimizes `‖∇V(x) + A_eᵀy + Gᵀz‖`
/// through the (lightly regularized) normal equations.
fn multiplier_estimate(p: &QpProblem, g: &Ineq, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = p.n();
    let me = p.constraints.eq_rows.len();
    let m = g.m();
    let grad = p.gradient(x);
    // rows of C = [A_e; G] as dense vectors
    let mut rows: Vec<Vec<f64>> = p.constraints.eq_rows.iter().map(|r| r.coeffs.clone()).collect();
    for k in 0..m {
        let mut e = vec![0.0; m];
        e[k] = 1.0;
        rows.push(g.tr_mul(&e));
    }
    let t = me + m;
    let mut cct = Matrix::zeros(t, t);
    for i in 0..t {
        for j in 0..=i {
            let v = dot(&rows[i], &rows[j]);
            cct[(i, j)] = v;
            cct[(j, i)] = v;
        }
        cct[(i, i)] += 1e-8;
    }
    let rhs: Vec<f64> = rows.iter().map(|r| -dot(r, &grad)).collect();
    let v = Ldl::factor(&cct, t, REG_DELTA, PIVOT_TOL).solve(&rhs);
    debug_assert_eq!(grad.len(), n);
    (v[..me].to_vec(), v[me..].to_vec())
}

fn mu_at(s: &[f64], z: &[f64], d: &Dir, alpha: f64) -> f64 {
    (0..s.len())
        .map(|i| (s[i] + alpha * d.ds[i]) * (z[i] + alpha * d.dz[i]))
        .sum::<f64>()
        / s.len() as f64
}

/// Largest `α` with `μ(α) ≤ MU_GROWTH·μ`, where
/// `μ(α) = (s + α ds)ᵀ(z + α dz)/m` is quadratic in `α`.
fn mu_growth_limit(s: &[f64], z: &[f64], d: &Dir, mu: f64) -> f64 {
    let m = s.len() as f64;
    let a = dot(&d.ds, &d.dz) / m;
    let b = (dot(s, &d.dz) + dot(z, &d.ds)) / m;
    let c = -(MU_GROWTH - 1.0) * mu;
    let roots = if a == 0.0 {
        vec![-c / b]
    } else {
        let disc = b * b - 4.0 * a * c;
        if disc < 0.0 {
            vec![]
        } else {
            let sq = disc.sqrt();
            vec![(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)]
        }
    };
    roots
        .into_iter()
        .filter(|r| *r > 0.0)
        .fold(f64::INFINITY, f64::min)
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(u, v)| u + v).collect()
}
