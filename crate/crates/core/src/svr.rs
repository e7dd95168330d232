//! Linear ε-insensitive support vector regression.
//!
//! Training minimizes `½‖w‖² + ½b² + C·Σ max(0, |w·zᵢ + b − ỹᵢ| − ε)` over
//! standardized features `z` and target `ỹ` by dual coordinate descent, one
//! dual variable `βᵢ ∈ [−C, C]` per sample, visited in sample order with
//! shrinking of variables stuck at a bound. The bias is handled as an extra
//! constant feature, which keeps the dual box-constrained.

use std::fs::File;
use std::path::Path;

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{self, build_features, Dataset, FeatureLayout, Partition};
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm_inf, Ldl, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvrConfig {
    /// Penalty on ε-insensitive loss.
    pub c: f64,
    /// Half-width of the zero-loss tube, in standardized target units.
    pub epsilon: f64,
    /// Convergence threshold on the largest dual optimality violation.
    pub tol: f64,
    pub max_passes: usize,
}

impl Default for SvrConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            epsilon: 0.1,
            tol: 1e-4,
            max_passes: 1000,
        }
    }
}

impl SvrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::Config(format!("svr.c must be > 0, got {}", self.c)));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config("svr.epsilon must be >= 0".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config("svr.tol must be > 0".into()));
        }
        if self.max_passes == 0 {
            return Err(Error::Config("svr.max_passes must be >= 1".into()));
        }
        Ok(())
    }
}

/// Affine predictor for one target, stored both in standardized form (the
/// training coordinates) and unstandardized, split into the weights acting on
/// current-step controls and those acting on everything else.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub target: String,
    pub layout: Option<FeatureLayout>,
    /// The first `n_controls` feature columns are current-step controls.
    pub n_controls: usize,
    pub coef: Vec<f64>,
    pub bias: f64,
    pub feature_means: Vec<f64>,
    pub feature_scales: Vec<f64>,
    pub target_mean: f64,
    pub target_scale: f64,
    pub weights_controls: Vec<f64>,
    pub weights_measurements: Vec<f64>,
    pub intercept: f64,
    pub converged: bool,
    pub passes: usize,
    pub max_violation: f64,
}

impl LinearModel {
    pub fn n_features(&self) -> usize {
        self.coef.len()
    }

    /// A model with the given raw weights and no standardization.
    pub fn from_raw(
        target: &str,
        layout: Option<FeatureLayout>,
        n_controls: usize,
        weights: Vec<f64>,
        intercept: f64,
    ) -> Self {
        let n = weights.len();
        let mut m = Self {
            target: target.to_string(),
            layout,
            n_controls,
            coef: weights,
            bias: intercept,
            feature_means: vec![0.0; n],
            feature_scales: vec![1.0; n],
            target_mean: 0.0,
            target_scale: 1.0,
            weights_controls: Vec::new(),
            weights_measurements: Vec::new(),
            intercept: 0.0,
            converged: true,
            passes: 0,
            max_violation: 0.0,
        };
        m.split_raw_weights();
        m
    }

    /// Re-derives the raw-unit weight partition from the standardized form.
    fn split_raw_weights(&mut self) {
        let raw: Vec<f64> = self
            .coef
            .iter()
            .zip(&self.feature_scales)
            .map(|(c, s)| self.target_scale * c / s)
            .collect();
        self.intercept = self.target_mean + self.target_scale * self.bias
            - dot(&raw, &self.feature_means);
        let k = self.n_controls.min(raw.len());
        self.weights_controls = raw[..k].to_vec();
        self.weights_measurements = raw[k..].to_vec();
    }

    pub fn with_meta(mut self, target: &str, layout: FeatureLayout, n_controls: usize) -> Self {
        self.target = target.to_string();
        self.layout = Some(layout);
        self.n_controls = n_controls;
        self.split_raw_weights();
        self
    }

    pub fn raw_weights(&self) -> Vec<f64> {
        let mut w = self.weights_controls.clone();
        w.extend_from_slice(&self.weights_measurements);
        w
    }

    /// Prediction through the standardized coordinates.
    pub fn predict(&self, features: &[f64]) -> Result<f64> {
        if features.len() != self.n_features() {
            return Err(Error::LengthMismatch {
                what: "feature vector",
                expected: self.n_features(),
                got: features.len(),
            });
        }
        let mut s = self.bias;
        for j in 0..features.len() {
            s += self.coef[j] * (features[j] - self.feature_means[j]) / self.feature_scales[j];
        }
        Ok(self.target_mean + self.target_scale * s)
    }

    /// `weights_controls·x + weights_measurements·m + intercept`.
    pub fn predict_split(&self, controls: &[f64], rest: &[f64]) -> Result<f64> {
        if controls.len() != self.weights_controls.len() {
            return Err(Error::LengthMismatch {
                what: "control vector",
                expected: self.weights_controls.len(),
                got: controls.len(),
            });
        }
        if rest.len() != self.weights_measurements.len() {
            return Err(Error::LengthMismatch {
                what: "measurement vector",
                expected: self.weights_measurements.len(),
                got: rest.len(),
            });
        }
        Ok(dot(&self.weights_controls, controls)
            + dot(&self.weights_measurements, rest)
            + self.intercept)
    }

    /// The training objective evaluated in standardized coordinates.
    pub fn standardized_primal(&self, x: &Matrix, y: &[f64], cfg: &SvrConfig) -> f64 {
        let mut loss = 0.0;
        for (i, &yi) in y.iter().enumerate() {
            let z = self.standardize_row(x.row(i));
            let r = dot(&self.coef, &z) + self.bias - (yi - self.target_mean) / self.target_scale;
            loss += (r.abs() - cfg.epsilon).max(0.0);
        }
        0.5 * (dot(&self.coef, &self.coef) + self.bias * self.bias) + cfg.c * loss
    }

    fn standardize_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.feature_means.iter().zip(&self.feature_scales))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

/// Column mean and population standard deviation; constant columns get
/// scale 1 and are flagged.
fn column_stats(x: &Matrix) -> (Vec<f64>, Vec<f64>, Vec<bool>) {
    let (n, d) = (x.rows(), x.cols());
    let mut means = vec![0.0; d];
    for i in 0..n {
        for (m, v) in means.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    means.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; d];
    for i in 0..n {
        for j in 0..d {
            let e = x[(i, j)] - means[j];
            var[j] += e * e;
        }
    }
    let mut constant = vec![false; d];
    let scales = var
        .iter()
        .enumerate()
        .map(|(j, v)| {
            let s = (v / n as f64).sqrt();
            if s <= 1e-12 * (1.0 + means[j].abs()) {
                constant[j] = true;
                1.0
            } else {
                s
            }
        })
        .collect();
    (means, scales, constant)
}

fn target_stats(y: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let s = var.sqrt();
    if s <= 1e-12 * (1.0 + mean.abs()) {
        (mean, 1.0)
    } else {
        (mean, s)
    }
}

/// Fits a linear ε-SVR. The returned model treats every column as a
/// measurement; [`LinearModel::with_meta`] re-partitions it.
pub fn fit(x: &Matrix, y: &[f64], cfg: &SvrConfig) -> Result<LinearModel> {
    cfg.validate()?;
    let (n, d) = (x.rows(), x.cols());
    if n != y.len() {
        return Err(Error::LengthMismatch {
            what: "training rows vs targets",
            expected: n,
            got: y.len(),
        });
    }
    if n < 2 {
        return Err(Error::Degenerate(format!("{n} training rows, need at least 2")));
    }
    if !x.is_finite() || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("training data".into()));
    }

    let (means, scales, constant) = column_stats(x);
    let (y_mean, y_scale) = target_stats(y);
    let mut z = vec![0.0; n * d];
    for i in 0..n {
        for j in 0..d {
            if !constant[j] {
                z[i * d + j] = (x[(i, j)] - means[j]) / scales[j];
            }
        }
    }
    let yt: Vec<f64> = y.iter().map(|v| (v - y_mean) / y_scale).collect();

    let beta0 = interior_point_start(&z, &yt, d, cfg);
    let out = dual_coordinate_descent(&z, &yt, d, cfg, beta0);
    let mut coef = out.w;
    for (c, &k) in coef.iter_mut().zip(&constant) {
        if k {
            *c = 0.0;
        }
    }
    let mut model = LinearModel {
        target: String::new(),
        layout: None,
        n_controls: 0,
        coef,
        bias: out.b,
        feature_means: means,
        feature_scales: scales,
        target_mean: y_mean,
        target_scale: y_scale,
        weights_controls: Vec::new(),
        weights_measurements: Vec::new(),
        intercept: 0.0,
        converged: out.converged,
        passes: out.passes,
        max_violation: out.max_violation,
    };
    model.split_raw_weights();
    Ok(model)
}

struct DcdOutput {
    w: Vec<f64>,
    b: f64,
    converged: bool,
    passes: usize,
    max_violation: f64,
}

/// Primal-dual interior-point solve of the same problem (bias as a constant
/// feature), returning dual coefficients `β` with `w = Σ βᵢ zᵢ`, `b = Σ βᵢ`.
/// Every Newton step reduces to one `(d + 1)`-square SPD system, so this is
/// cheap when samples far outnumber features and insensitive to the
/// collinearity that stalls coordinate descent on telemetry.
fn interior_point_start(z: &[f64], y: &[f64], d: usize, cfg: &SvrConfig) -> Vec<f64> {
    let n = y.len();
    let m = d + 1;
    let (c, eps) = (cfg.c, cfg.epsilon);
    let row = |i: usize| &z[i * d..(i + 1) * d];
    // Z̄v with the constant column last
    let zmul = |v: &[f64]| -> Vec<f64> { (0..n).map(|i| dot(row(i), &v[..d]) + v[d]).collect() };
    let ztmul = |x: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; m];
        for i in 0..n {
            if x[i] != 0.0 {
                axpy(x[i], row(i), &mut out[..d]);
                out[d] += x[i];
            }
        }
        out
    };

    let mut w = vec![0.0; m];
    let one = vec![1.0; n];
    let half = vec![0.5 * c; n];
    // tube slacks s1 = ε + u − r, s2 = ε + v + r; losses u, v; duals a, b, p, q
    let (mut u, mut v, mut s1, mut s2) = (one.clone(), one.clone(), one.clone(), one);
    let (mut a, mut b, mut p, mut q) = (half.clone(), half.clone(), half.clone(), half);

    for _ in 0..80 {
        let r: Vec<f64> = zmul(&w).iter().zip(y).map(|(f, yi)| f - yi).collect();
        let ab: Vec<f64> = (0..n).map(|i| a[i] - b[i]).collect();
        let zab = ztmul(&ab);
        let rw: Vec<f64> = (0..m).map(|j| w[j] + zab[j]).collect();
        let ru: Vec<f64> = (0..n).map(|i| c - a[i] - p[i]).collect();
        let rv: Vec<f64> = (0..n).map(|i| c - b[i] - q[i]).collect();
        let r1: Vec<f64> = (0..n).map(|i| r[i] - eps - u[i] + s1[i]).collect();
        let r2: Vec<f64> = (0..n).map(|i| -r[i] - eps - v[i] + s2[i]).collect();
        let gap: f64 = (0..n).map(|i| a[i] * s1[i] + b[i] * s2[i] + p[i] * u[i] + q[i] * v[i]).sum();
        let mu = gap / (4 * n) as f64;
        let infeas = norm_inf(&rw).max(norm_inf(&ru)).max(norm_inf(&rv)).max(norm_inf(&r1)).max(norm_inf(&r2));
        if mu < 1e-11 && infeas < 1e-9 {
            break;
        }

        let k1: Vec<f64> = (0..n).map(|i| a[i] / s1[i]).collect();
        let h1: Vec<f64> = (0..n).map(|i| p[i] / u[i]).collect();
        let k2: Vec<f64> = (0..n).map(|i| b[i] / s2[i]).collect();
        let h2: Vec<f64> = (0..n).map(|i| q[i] / v[i]).collect();
        let mut mat = Matrix::identity(m);
        for i in 0..n {
            let di = k1[i] * h1[i] / (k1[i] + h1[i]) + k2[i] * h2[i] / (k2[i] + h2[i]);
            let zi = row(i);
            for j in 0..d {
                let f = di * zi[j];
                let mr = mat.row_mut(j);
                for (mk, zk) in mr[..=j].iter_mut().zip(zi) {
                    *mk += f * zk;
                }
                mr[d] += f;
            }
            mat[(d, d)] += di;
        }
        for j in 0..m {
            for k in 0..j {
                mat[(k, j)] = mat[(j, k)];
            }
            if j < d {
                mat[(d, j)] = mat[(j, d)];
            }
        }
        let fac = Ldl::factor(&mat, m, 1e-12, 1e-14);

        // direction for complementarity targets rc = (a s1, b s2, p u, q v) − shifts
        let direction = |rc: [&[f64]; 4]| -> [Vec<f64>; 9] {
            let mut a1 = vec![0.0; n];
            let mut a2 = vec![0.0; n];
            let mut e = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
            for i in 0..n {
                e[0][i] = (-rc[0][i] + a[i] * r1[i]) / s1[i];
                e[1][i] = -rc[2][i] / u[i] - ru[i];
                e[2][i] = (-rc[1][i] + b[i] * r2[i]) / s2[i];
                e[3][i] = -rc[3][i] / v[i] - rv[i];
                a1[i] = (e[0][i] * h1[i] - k1[i] * e[1][i]) / (h1[i] + k1[i]);
                a2[i] = (e[2][i] * h2[i] - k2[i] * e[3][i]) / (h2[i] + k2[i]);
            }
            let diff: Vec<f64> = (0..n).map(|i| a1[i] - a2[i]).collect();
            let zd = ztmul(&diff);
            let rhs: Vec<f64> = (0..m).map(|j| -rw[j] - zd[j]).collect();
            let dw = fac.solve_refined(&mat, &rhs, 2);
            let g = zmul(&dw);
            let mut out = [dw, vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
            for i in 0..n {
                let du = (e[1][i] + e[0][i] + k1[i] * g[i]) / (h1[i] + k1[i]);
                let da = e[0][i] + k1[i] * g[i] - k1[i] * du;
                let dv = (e[3][i] + e[2][i] - k2[i] * g[i]) / (h2[i] + k2[i]);
                let db = e[2][i] - k2[i] * g[i] - k2[i] * dv;
                out[1][i] = du;
                out[2][i] = dv;
                out[3][i] = -r1[i] - g[i] + du;
                out[4][i] = -r2[i] + g[i] + dv;
                out[5][i] = da;
                out[6][i] = db;
                out[7][i] = ru[i] - da;
                out[8][i] = rv[i] - db;
            }
            out
        };
        let positives = |dir: &[Vec<f64>; 9]| -> f64 {
            let vars = [&u, &v, &s1, &s2, &a, &b, &p, &q];
            let mut alpha = 1.0f64;
            for (x, dx) in vars.iter().zip(&dir[1..]) {
                for i in 0..n {
                    if dx[i] < 0.0 {
                        alpha = alpha.min(-x[i] / dx[i]);
                    }
                }
            }
            alpha
        };

        let prod = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p * q).collect() };
        let (c1, c2, c3, c4) = (prod(&a, &s1), prod(&b, &s2), prod(&p, &u), prod(&q, &v));
        let aff = direction([&c1, &c2, &c3, &c4]);
        let alpha_aff = positives(&aff);
        let mu_aff: f64 = (0..n)
            .map(|i| {
                (a[i] + alpha_aff * aff[5][i]) * (s1[i] + alpha_aff * aff[3][i])
                    + (b[i] + alpha_aff * aff[6][i]) * (s2[i] + alpha_aff * aff[4][i])
                    + (p[i] + alpha_aff * aff[7][i]) * (u[i] + alpha_aff * aff[1][i])
                    + (q[i] + alpha_aff * aff[8][i]) * (v[i] + alpha_aff * aff[2][i])
            })
            .sum::<f64>()
            / (4 * n) as f64;
        let sm = (mu_aff / mu).powi(3) * mu;
        let shift = |base: &[f64], dx: &[f64], dy: &[f64]| -> Vec<f64> {
            (0..n).map(|i| base[i] + dx[i] * dy[i] - sm).collect()
        };
        let cc1 = shift(&c1, &aff[5], &aff[3]);
        let cc2 = shift(&c2, &aff[6], &aff[4]);
        let cc3 = shift(&c3, &aff[7], &aff[1]);
        let cc4 = shift(&c4, &aff[8], &aff[2]);
        let dir = direction([&cc1, &cc2, &cc3, &cc4]);
        let alpha = (0.99 * positives(&dir)).min(1.0);
        axpy(alpha, &dir[0], &mut w);
        for (x, dx) in [&mut u, &mut v, &mut s1, &mut s2, &mut a, &mut b, &mut p, &mut q]
            .into_iter()
            .zip(&dir[1..])
        {
            axpy(alpha, dx, x);
        }
    }
    (0..n).map(|i| (b[i] - a[i]).clamp(-c, c)).collect()
}

fn dual_coordinate_descent(
    z: &[f64],
    y: &[f64],
    d: usize,
    cfg: &SvrConfig,
    beta0: Vec<f64>,
) -> DcdOutput {
    let n = y.len();
    let (c, eps) = (cfg.c, cfg.epsilon);
    let row = |i: usize| &z[i * d..(i + 1) * d];
    let qd: Vec<f64> = (0..n).map(|i| dot(row(i), row(i)) + 1.0).collect();

    let mut beta = beta0;
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    for (i, &bi) in beta.iter().enumerate() {
        if bi != 0.0 {
            axpy(bi, row(i), &mut w);
            b += bi;
        }
    }
    let mut index: Vec<usize> = (0..n).collect();
    let mut active = n;
    let mut gmax_old = f64::INFINITY;
    let mut converged = false;
    let mut passes = 0;
    let mut last_violation = f64::INFINITY;

    while passes < cfg.max_passes {
        passes += 1;
        let mut gmax_new = 0.0f64;
        let mut s = 0;
        while s < active {
            let i = index[s];
            let zi = row(i);
            let g = dot(&w, zi) + b - y[i];
            let gp = g + eps;
            let gn = g - eps;
            let bi = beta[i];
            let violation;
            let mut shrink = false;
            if bi == 0.0 {
                if gp < 0.0 {
                    violation = -gp;
                } else if gn > 0.0 {
                    violation = gn;
                } else {
                    violation = 0.0;
                    shrink = gp > gmax_old && gn < -gmax_old;
                }
            } else if bi >= c {
                violation = gp.max(0.0);
                shrink = gp < -gmax_old;
            } else if bi <= -c {
                violation = (-gn).max(0.0);
                shrink = gn > gmax_old;
            } else if bi > 0.0 {
                violation = gp.abs();
            } else {
                violation = gn.abs();
            }
            if shrink {
                active -= 1;
                index.swap(s, active);
                continue;
            }
            gmax_new = gmax_new.max(violation);

            let h = qd[i];
            let step = if gp < h * bi {
                -gp / h
            } else if gn > h * bi {
                -gn / h
            } else {
                -bi
            };
            let nb = (bi + step).clamp(-c, c);
            let delta = nb - bi;
            if delta != 0.0 {
                beta[i] = nb;
                for (wj, zj) in w.iter_mut().zip(zi) {
                    *wj += delta * zj;
                }
                b += delta;
            }
            s += 1;
        }
        last_violation = gmax_new;
        if gmax_new <= cfg.tol {
            if active == n {
                converged = true;
                break;
            }
            // verify on the full set before declaring convergence
            active = n;
            gmax_old = f64::INFINITY;
            continue;
        }
        gmax_old = gmax_new;
    }
    DcdOutput {
        w,
        b,
        converged,
        passes,
        max_violation: last_violation,
    }
}

/// Affine rescaling of temperatures and O₂ used by the control objective:
/// one center and scale per quantity, pooled over zones (or sides) so the
/// across-zone spread keeps its meaning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetScaling {
    pub temp_center: f64,
    pub temp_scale: f64,
    pub o2_center: f64,
    pub o2_scale: f64,
}

impl Default for TargetScaling {
    fn default() -> Self {
        Self {
            temp_center: 0.0,
            temp_scale: 1.0,
            o2_center: 0.0,
            o2_scale: 1.0,
        }
    }
}

impl TargetScaling {
    pub fn from_frames<'a>(frames: impl Iterator<Item = &'a dataset::TelemetryFrame>) -> Self {
        let (mut t, mut o) = (Vec::new(), Vec::new());
        for fr in frames {
            t.extend_from_slice(&fr.temperatures);
            o.extend_from_slice(&fr.o2);
        }
        let (tc, ts) = target_stats(&t);
        let (oc, os) = target_stats(&o);
        Self {
            temp_center: tc,
            temp_scale: ts,
            o2_center: oc,
            o2_scale: os,
        }
    }
}

/// The eight target models (six zone temperatures, two O₂ sides) trained
/// together on one layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub schema_hash: String,
    pub layout: FeatureLayout,
    pub svr: SvrConfig,
    pub n_temperatures: usize,
    pub scaling: TargetScaling,
    /// Temperature zones first, then O₂ sides, in schema order.
    pub models: Vec<LinearModel>,
}

impl ModelBundle {
    pub fn temperature_models(&self) -> &[LinearModel] {
        &self.models[..self.n_temperatures]
    }

    pub fn o2_models(&self) -> &[LinearModel] {
        &self.models[self.n_temperatures..]
    }

    pub fn n_controls(&self) -> usize {
        self.models.first().map_or(0, |m| m.n_controls)
    }

    pub fn all_converged(&self) -> bool {
        self.models.iter().all(|m| m.converged)
    }

    /// Digest of the serialized bundle.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("bundle serializes");
        dataset::hex(&Sha256::digest(&bytes)[..8])
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        serde_json::to_writer_pretty(std::io::BufWriter::new(File::create(path)?), self)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        Ok(serde_json::from_reader(std::io::BufReader::new(
            File::open(path)?,
        ))?)
    }
}

/// Trains one model per target on the training split.
pub fn fit_all(ds: &Dataset, layout: FeatureLayout, cfg: &SvrConfig) -> Result<ModelBundle> {
    cfg.validate()?;
    let nc = ds.schema.n_controls();
    let targets: Vec<String> = ds.schema.target_names().cloned().collect();
    let one = |t: &String| -> Result<LinearModel> {
        let fs = build_features(ds, layout, t)?;
        let (x, y, _) = fs.subset(ds, Partition::Train);
        Ok(fit(&x, &y, cfg)?.with_meta(t, layout, nc))
    };
    #[cfg(feature = "parallel")]
    let models = targets.par_iter().map(one).collect::<Result<Vec<_>>>()?;
    #[cfg(not(feature = "parallel"))]
    let models = targets.iter().map(one).collect::<Result<Vec<_>>>()?;
    let scaling = TargetScaling::from_frames(ds.frames[..ds.split.train_end].iter());
    Ok(ModelBundle {
        schema_hash: ds.schema.hash(),
        layout,
        svr: *cfg,
        n_temperatures: ds.schema.n_temperatures(),
        scaling,
        models,
    })
}

/// Raw (uncompensated) predictions of one model over a partition, with the
/// frame positions and actual values.
pub fn predict_partition(
    ds: &Dataset,
    model: &LinearModel,
    part: Option<Partition>,
) -> Result<(Vec<usize>, Vec<f64>, Vec<f64>)> {
    let layout = model
        .layout
        .ok_or_else(|| Error::Config("model has no layout".into()))?;
    let fs = build_features(ds, layout, &model.target)?;
    let (mut rows, mut pred, mut actual) = (Vec::new(), Vec::new(), Vec::new());
    for r in 0..fs.rows.len() {
        if part.is_some_and(|p| ds.partition(fs.rows[r]) != p) {
            continue;
        }
        rows.push(fs.rows[r]);
        pred.push(model.predict(fs.x.row(r))?);
        actual.push(fs.y[r]);
    }
    Ok((rows, pred, actual))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetAccuracy {
    pub target: String,
    pub mse: f64,
    pub mape: f64,
}

/// Per-target MSE/MAPE plus their averages over temperature zones and O₂
/// sides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub layout: FeatureLayout,
    pub partition: Partition,
    pub per_target: Vec<TargetAccuracy>,
    pub temperature_mse: f64,
    pub temperature_mape: f64,
    pub o2_mse: f64,
    pub o2_mape: f64,
}

pub fn evaluate(bundle: &ModelBundle, ds: &Dataset, part: Partition) -> Result<AccuracyReport> {
    let mut per_target = Vec::with_capacity(bundle.models.len());
    for m in &bundle.models {
        let (_, pred, actual) = predict_partition(ds, m, Some(part))?;
        per_target.push(TargetAccuracy {
            target: m.target.clone(),
            mse: dataset::mse(&pred, &actual)?,
            mape: dataset::mape(&pred, &actual)?,
        });
    }
    let avg = |xs: &[TargetAccuracy], f: fn(&TargetAccuracy) -> f64| {
        xs.iter().map(f).sum::<f64>() / xs.len() as f64
    };
    let (t, o) = per_target.split_at(bundle.n_temperatures);
    Ok(AccuracyReport {
        layout: bundle.layout,
        partition: part,
        temperature_mse: avg(t, |a| a.mse),
        temperature_mape: avg(t, |a| a.mape),
        o2_mse: avg(o, |a| a.mse),
        o2_mape: avg(o, |a| a.mape),
        per_target,
    })
}

/// `(c, epsilon, temperature_mse, o2_mse)`
pub type GridPoint = (f64, f64, f64, f64);

/// Grid search over `(C, ε)` scoring average validation MSE of the
/// temperature models, then O₂ models as tie-break. Returns the best config
/// and the full table of `(c, epsilon, temperature_mse, o2_mse)`.
pub fn grid_search(
    ds: &Dataset,
    layout: FeatureLayout,
    base: &SvrConfig,
    cs: &[f64],
    epsilons: &[f64],
) -> Result<(SvrConfig, Vec<GridPoint>)> {
    let mut table = Vec::new();
    let mut best: Option<(SvrConfig, f64, f64)> = None;
    for &c in cs {
        for &epsilon in epsilons {
            let cfg = SvrConfig { c, epsilon, ..*base };
            let bundle = fit_all(ds, layout, &cfg)?;
            let rep = evaluate(&bundle, ds, Partition::Validation)?;
            table.push((c, epsilon, rep.temperature_mse, rep.o2_mse));
            let better = match &best {
                None => true,
                Some((_, t, o)) => (rep.temperature_mse, rep.o2_mse) < (*t, *o),
            };
            if better {
                best = Some((cfg, rep.temperature_mse, rep.o2_mse));
            }
        }
    }
    let (cfg, _, _) = best.ok_or_else(|| Error::Config("empty hyperparameter grid".into()))?;
    Ok((cfg, table))
}
