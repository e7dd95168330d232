//! Per-step control objective and its expansion into a quadratic program.
//!
//! With every prediction affine in the current controls `x`, write the
//! (scaled, compensated) zone temperatures as `Tᵢ(x) = wᵢ·x + kᵢ` and the flue
//! O₂ sides as `Oⱼ(x) = uⱼ·x + dⱼ`. The objective
//!
//! ```text
//! V(x) = λ_var·(1/Z)·Σᵢ (Tᵢ − T̄)² + λ_diff·(O₁ − O₂)² − λ_temp·T̄ + λ_o2·Ō
//! ```
//!
//! is then exactly `½xᵀHx + fᵀx + c` with
//!
//! ```text
//! H = (2λ_var/Z)·Σᵢ ΔwᵢΔwᵢᵀ + 2λ_diff·ΔuΔuᵀ
//! f = (2λ_var/Z)·Σᵢ Δkᵢ·Δwᵢ + 2λ_diff·Δd·Δu − λ_temp·w̄ + λ_o2·ū
//! c = (λ_var/Z)·Σᵢ Δkᵢ² + λ_diff·Δd² − λ_temp·k̄ + λ_o2·d̄
//! ```
//!
//! where `Δwᵢ = wᵢ − w̄`, `Δkᵢ = kᵢ − k̄`, `Δu = u₁ − u₂`, `Δd = d₁ − d₂`.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::compensation::CompensationState;
use crate::dataset::hex;
use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::svr::{ModelBundle, TargetScaling};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveWeights {
    /// Temperature spread across zones (population variance).
    pub lambda_var: f64,
    /// Squared O₂ difference between the two flue sides.
    pub lambda_diff: f64,
    /// Reward on the mean zone temperature.
    pub lambda_temp: f64,
    /// Penalty on the mean O₂ content.
    pub lambda_o2: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        Self {
            lambda_var: 1.0,
            lambda_diff: 1.0,
            lambda_temp: 0.05,
            lambda_o2: 0.5,
        }
    }
}

impl ObjectiveWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_var, self.lambda_diff, self.lambda_temp, self.lambda_o2];
        if all.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::Config("objective weights must be finite and >= 0".into()));
        }
        if all.iter().all(|l| *l == 0.0) {
            return Err(Error::Config("at least one objective weight must be positive".into()));
        }
        Ok(())
    }
}

/// `coeffs · x (≤ or =) rhs`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearRow {
    pub coeffs: Vec<f64>,
    pub rhs: f64,
}

impl LinearRow {
    pub fn new(coeffs: Vec<f64>, rhs: f64) -> Self {
        Self { coeffs, rhs }
    }

    pub fn activity(&self, x: &[f64]) -> f64 {
        dot(&self.coeffs, x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlConstraints {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Rows of `A_q x ≤ b_q`.
    pub ineq_rows: Vec<LinearRow>,
    /// Rows of `A_e x = b_e`.
    pub eq_rows: Vec<LinearRow>,
}

impl ControlConstraints {
    pub fn boxed(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        Self {
            lower,
            upper,
            ineq_rows: Vec::new(),
            eq_rows: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.lower.len()
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.lower.len() != n || self.upper.len() != n {
            return Err(Error::Dimension(format!(
                "bounds have {}/{} entries for {n} variables",
                self.lower.len(),
                self.upper.len()
            )));
        }
        for (i, (l, u)) in self.lower.iter().zip(&self.upper).enumerate() {
            if l.is_nan() || u.is_nan() || *l == f64::INFINITY || *u == f64::NEG_INFINITY {
                return Err(Error::Dimension(format!("bound {i} is not usable")));
            }
        }
        for r in self.ineq_rows.iter().chain(&self.eq_rows) {
            if r.coeffs.len() != n {
                return Err(Error::Dimension(format!(
                    "constraint row has {} coefficients for {n} variables",
                    r.coeffs.len()
                )));
            }
            if !r.rhs.is_finite() || r.coeffs.iter().any(|c| !c.is_finite()) {
                return Err(Error::NonFinite("constraint row".into()));
            }
        }
        Ok(())
    }

    /// Largest violation of any bound or row at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut v = 0.0f64;
        for i in 0..x.len() {
            v = v.max(self.lower[i] - x[i]).max(x[i] - self.upper[i]);
        }
        for r in &self.ineq_rows {
            v = v.max(r.activity(x) - r.rhs);
        }
        for r in &self.eq_rows {
            v = v.max((r.activity(x) - r.rhs).abs());
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub measurement_hash: String,
    pub weights: ObjectiveWeights,
    pub bundle_hash: String,
    /// Diagonal shift added to `h` after a singular KKT report, else 0.
    pub ridge: f64,
}

/// `min ½xᵀHx + fᵀx + c` subject to the control constraints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpProblem {
    pub h: Matrix,
    pub f: Vec<f64>,
    pub c: f64,
    pub constraints: ControlConstraints,
    pub provenance: Option<Provenance>,
}

impl QpProblem {
    pub fn new(h: Matrix, f: Vec<f64>, c: f64, constraints: ControlConstraints) -> Self {
        Self {
            h,
            f,
            c,
            constraints,
            provenance: None,
        }
    }

    pub fn n(&self) -> usize {
        self.f.len()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        0.5 * self.h.quad_form(x) + dot(&self.f, x) + self.c
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = self.h.mul_vec(x);
        g.iter_mut().zip(&self.f).for_each(|(g, f)| *g += f);
        g
    }

    /// Checks dimensions and finiteness; symmetry is the solver's concern.
    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if self.h.rows() != n || self.h.cols() != n {
            return Err(Error::Dimension(format!(
                "H is {}x{}, f has {n} entries",
                self.h.rows(),
                self.h.cols()
            )));
        }
        if !self.h.is_finite() || self.f.iter().any(|v| !v.is_finite()) || !self.c.is_finite() {
            return Err(Error::NonFinite("QP data".into()));
        }
        self.constraints.validate(n)
    }

    /// Adds `delta·I` to `h`, recording it in the provenance.
    pub fn add_ridge(&mut self, delta: f64) {
        for i in 0..self.n() {
            self.h[(i, i)] += delta;
        }
        if let Some(p) = &mut self.provenance {
            p.ridge += delta;
        }
    }

    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self.n();
        let cons = &self.constraints;
        let join = |v: &[f64]| {
            let mut s = String::new();
            for (i, x) in v.iter().enumerate() {
                if i > 0 {
                    s.push(' ');
                }
                let _ = write!(s, "{x}");
            }
            s
        };
        writeln!(w, "# boiler QP v1: min 1/2 x'Hx + f'x + c")?;
        writeln!(w, "n {n}")?;
        writeln!(w, "m_ineq {}", cons.ineq_rows.len())?;
        writeln!(w, "m_eq {}", cons.eq_rows.len())?;
        writeln!(w, "H")?;
        for i in 0..n {
            writeln!(w, "{}", join(self.h.row(i)))?;
        }
        writeln!(w, "f {}", join(&self.f))?;
        writeln!(w, "c {}", self.c)?;
        writeln!(w, "lower {}", join(&cons.lower))?;
        writeln!(w, "upper {}", join(&cons.upper))?;
        for r in &cons.ineq_rows {
            writeln!(w, "ineq {} {}", join(&r.coeffs), r.rhs)?;
        }
        for r in &cons.eq_rows {
            writeln!(w, "eq {} {}", join(&r.coeffs), r.rhs)?;
        }
        Ok(())
    }

    /// Parses the format written by [`QpProblem::write_text`]. Blank lines and
    /// `#` comments are ignored.
    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = Vec::new();
        for (i, l) in r.lines().enumerate() {
            let l = l?;
            let body = l.split('#').next().unwrap_or("").trim().to_string();
            if !body.is_empty() {
                lines.push((i + 1, body));
            }
        }
        let mut it = lines.into_iter();
        let mut next = |expect: &str| -> Result<(usize, Vec<String>)> {
            let (ln, body) = it.next().ok_or(Error::Parse {
                line: 0,
                msg: format!("unexpected end of file, expected `{expect}`"),
            })?;
            let toks: Vec<String> = body.split_whitespace().map(str::to_string).collect();
            if !expect.is_empty() && toks[0] != expect {
                return Err(Error::Parse {
                    line: ln,
                    msg: format!("expected `{expect}`, found `{}`", toks[0]),
                });
            }
            Ok((ln, toks))
        };
        let nums = |ln: usize, toks: &[String], want: usize| -> Result<Vec<f64>> {
            if toks.len() != want {
                return Err(Error::Parse {
                    line: ln,
                    msg: format!("expected {want} numbers, found {}", toks.len()),
                });
            }
            toks.iter()
                .map(|t| {
                    t.parse::<f64>().map_err(|_| Error::Parse {
                        line: ln,
                        msg: format!("bad number `{t}`"),
                    })
                })
                .collect()
        };
        let count = |ln: usize, toks: &[String]| -> Result<usize> {
            toks.get(1)
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| Error::Parse {
                    line: ln,
                    msg: "expected a count".into(),
                })
        };
        let (ln, t) = next("n")?;
        let n = count(ln, &t)?;
        let (ln, t) = next("m_ineq")?;
        let m_ineq = count(ln, &t)?;
        let (ln, t) = next("m_eq")?;
        let m_eq = count(ln, &t)?;
        next("H")?;
        let mut h = Matrix::zeros(n, n);
        for i in 0..n {
            let (ln, t) = next("")?;
            h.row_mut(i).copy_from_slice(&nums(ln, &t, n)?);
        }
        let (ln, t) = next("f")?;
        let f = nums(ln, &t[1..], n)?;
        let (ln, t) = next("c")?;
        let c = nums(ln, &t[1..], 1)?[0];
        let (ln, t) = next("lower")?;
        let lower = nums(ln, &t[1..], n)?;
        let (ln, t) = next("upper")?;
        let upper = nums(ln, &t[1..], n)?;
        let mut read_rows = |kind: &str, m: usize| -> Result<Vec<LinearRow>> {
            (0..m)
                .map(|_| {
                    let (ln, t) = next(kind)?;
                    let v = nums(ln, &t[1..], n + 1)?;
                    Ok(LinearRow::new(v[..n].to_vec(), v[n]))
                })
                .collect()
        };
        let ineq_rows = read_rows("ineq", m_ineq)?;
        let eq_rows = read_rows("eq", m_eq)?;
        let p = QpProblem::new(
            h,
            f,
            c,
            ControlConstraints {
                lower,
                upper,
                ineq_rows,
                eq_rows,
            },
        );
        p.validate()?;
        Ok(p)
    }
}

/// The objective evaluated on target values in physical units.
pub fn objective_from_targets(
    temperatures: &[f64],
    o2: &[f64],
    weights: &ObjectiveWeights,
    scaling: &TargetScaling,
) -> f64 {
    let t: Vec<f64> = temperatures
        .iter()
        .map(|v| (v - scaling.temp_center) / scaling.temp_scale)
        .collect();
    let o: Vec<f64> = o2
        .iter()
        .map(|v| (v - scaling.o2_center) / scaling.o2_scale)
        .collect();
    let z = t.len() as f64;
    let t_mean = t.iter().sum::<f64>() / z;
    let var = t.iter().map(|v| (v - t_mean) * (v - t_mean)).sum::<f64>() / z;
    let diff = o[0] - o[1];
    let o_mean = o.iter().sum::<f64>() / o.len() as f64;
    weights.lambda_var * var + weights.lambda_diff * diff * diff - weights.lambda_temp * t_mean
        + weights.lambda_o2 * o_mean
}

fn check_dims(bundle: &ModelBundle, comp: &CompensationState, m_vec: &[f64]) -> Result<()> {
    if bundle.o2_models().len() != 2 {
        return Err(Error::Dimension(format!(
            "objective needs exactly two O2 sides, bundle has {}",
            bundle.o2_models().len()
        )));
    }
    if bundle.n_temperatures == 0 {
        return Err(Error::Dimension("bundle has no temperature models".into()));
    }
    if comp.targets().len() != bundle.models.len() {
        return Err(Error::Dimension("compensation state does not match bundle".into()));
    }
    let want = bundle.models[0].weights_measurements.len();
    if m_vec.len() != want {
        return Err(Error::LengthMismatch {
            what: "measurement vector",
            expected: want,
            got: m_vec.len(),
        });
    }
    Ok(())
}

/// Compensated predictions of every target at controls `x` with all
/// non-control features frozen at `m_vec`.
pub fn predict_targets(
    bundle: &ModelBundle,
    comp: &CompensationState,
    m_vec: &[f64],
    x: &[f64],
) -> Result<Vec<f64>> {
    bundle
        .models
        .iter()
        .enumerate()
        .map(|(i, m)| Ok(comp.compensate(i, m.predict_split(x, m_vec)?)))
        .collect()
}

pub fn evaluate_objective(
    bundle: &ModelBundle,
    comp: &CompensationState,
    m_vec: &[f64],
    weights: &ObjectiveWeights,
    x: &[f64],
) -> Result<f64> {
    check_dims(bundle, comp, m_vec)?;
    let y = predict_targets(bundle, comp, m_vec, x)?;
    let (t, o) = y.split_at(bundle.n_temperatures);
    let v = objective_from_targets(t, o, weights, &bundle.scaling);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite("objective value".into()))
    }
}

pub fn measurement_hash(m_vec: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in m_vec {
        h.update(v.to_le_bytes());
    }
    hex(&h.finalize()[..8])
}

pub fn build_qp(
    bundle: &ModelBundle,
    comp: &CompensationState,
    m_vec: &[f64],
    weights: &ObjectiveWeights,
    cons: &ControlConstraints,
) -> Result<QpProblem> {
    check_dims(bundle, comp, m_vec)?;
    let n = bundle.n_controls();
    cons.validate(n)?;
    let sc = &bundle.scaling;
    let zero = vec![0.0; n];

    // scaled affine forms: slope over x and offset
    let affine = |i: usize, center: f64, scale: f64| -> Result<(Vec<f64>, f64)> {
        let m = &bundle.models[i];
        let k = comp.compensate(i, m.predict_split(&zero, m_vec)?);
        let w = m.weights_controls.iter().map(|v| v / scale).collect();
        Ok((w, (k - center) / scale))
    };
    let nt = bundle.n_temperatures;
    let temps = (0..nt)
        .map(|i| affine(i, sc.temp_center, sc.temp_scale))
        .collect::<Result<Vec<_>>>()?;
    let sides = (nt..nt + 2)
        .map(|i| affine(i, sc.o2_center, sc.o2_scale))
        .collect::<Result<Vec<_>>>()?;

    let mut p = qp_from_affine(&temps, &sides, weights, cons)?;
    p.provenance = Some(Provenance {
        measurement_hash: measurement_hash(m_vec),
        weights: *weights,
        bundle_hash: bundle.hash(),
        ridge: 0.0,
    });
    Ok(p)
}

/// Assembles the QP from targets already written as scaled affine functions
/// `wᵀx + k` of the controls: one per temperature zone, then the two O2
/// sides.
pub fn qp_from_affine(
    temps: &[(Vec<f64>, f64)],
    sides: &[(Vec<f64>, f64)],
    weights: &ObjectiveWeights,
    cons: &ControlConstraints,
) -> Result<QpProblem> {
    if temps.is_empty() || sides.len() != 2 {
        return Err(Error::Dimension(format!(
            "need temperature forms and two O2 sides, got {} and {}",
            temps.len(),
            sides.len()
        )));
    }
    let n = temps[0].0.len();
    if temps.iter().chain(sides).any(|(w, _)| w.len() != n) {
        return Err(Error::Dimension("affine forms differ in length".into()));
    }
    cons.validate(n)?;
    let nt = temps.len();
    let z = nt as f64;
    let mut w_bar = vec![0.0; n];
    let mut k_bar = 0.0;
    for (w, k) in temps {
        w_bar.iter_mut().zip(w).for_each(|(a, b)| *a += b / z);
        k_bar += k / z;
    }
    let u_bar: Vec<f64> = (0..n).map(|j| 0.5 * (sides[0].0[j] + sides[1].0[j])).collect();
    let d_bar = 0.5 * (sides[0].1 + sides[1].1);
    let du: Vec<f64> = (0..n).map(|j| sides[0].0[j] - sides[1].0[j]).collect();
    let dd = sides[0].1 - sides[1].1;

    let (lv, ld, lt, lo) = (
        weights.lambda_var,
        weights.lambda_diff,
        weights.lambda_temp,
        weights.lambda_o2,
    );
    let mut h = Matrix::zeros(n, n);
    let mut f = vec![0.0; n];
    let mut c = 0.0;
    for (w, k) in temps {
        let dw: Vec<f64> = w.iter().zip(&w_bar).map(|(a, b)| a - b).collect();
        let dk = k - k_bar;
        h.add_outer(2.0 * lv / z, &dw, &dw);
        f.iter_mut().zip(&dw).for_each(|(fj, d)| *fj += 2.0 * lv / z * dk * d);
        c += lv / z * dk * dk;
    }
    h.add_outer(2.0 * ld, &du, &du);
    for j in 0..n {
        f[j] += 2.0 * ld * dd * du[j] - lt * w_bar[j] + lo * u_bar[j];
    }
    c += ld * dd * dd - lt * k_bar + lo * d_bar;

    // exact symmetry
    for i in 0..n {
        for j in (i + 1)..n {
            let s = 0.5 * (h[(i, j)] + h[(j, i)]);
            h[(i, j)] = s;
            h[(j, i)] = s;
        }
    }
    Ok(QpProblem::new(h, f, c, cons.clone()))
}
