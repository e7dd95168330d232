//! Synthetic furnace with known dynamics.
//!
//! Each target responds linearly to the current and the last `L - 1` control
//! vectors through a decaying lag kernel, to boiler load, and to a hidden coal
//! quality process that the response sensors (NOx, CO, flue gas...) observe
//! with noise. On top come piecewise-constant drift, Gaussian noise and rare
//! Student-t spikes. Disturbances, drift and the logging operator draw from
//! separate seeded streams, so two runs on the same seed see the same weather
//! whatever controls they apply.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, FeatureLayout, SignalSchema, TelemetryFrame};
use crate::error::{Error, Result};
use crate::objective::{qp_from_affine, ControlConstraints, LinearRow, ObjectiveWeights, QpProblem};
use crate::svr::{LinearModel, ModelBundle, SvrConfig, TargetScaling};

const DRIFT_STREAM: u64 = 0x5851_f42d_4c95_7f2d;
const POLICY_STREAM: u64 = 0x1405_7b7e_f767_814f;

/// `x_t = mean + phi (x_{t-1} - mean) + sigma ε_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArProcess {
    pub mean: f64,
    pub phi: f64,
    pub sigma: f64,
}

impl ArProcess {
    fn validate(&self, what: &str) -> Result<()> {
        if !(self.phi.abs() < 1.0) || !(self.sigma >= 0.0) || !self.mean.is_finite() {
            return Err(Error::Config(format!("{what}: need |phi| < 1, sigma >= 0")));
        }
        Ok(())
    }
}

/// One measurement column: `base + load_gain (load - load mean) +
/// quality_gain q + ar + noise`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Channel {
    pub base: f64,
    pub load_gain: f64,
    pub quality_gain: f64,
    /// Private slow wander (phi, sigma) around zero.
    pub ar_phi: f64,
    pub ar_sigma: f64,
    pub noise: f64,
}

impl Channel {
    fn new(base: f64, load_gain: f64, quality_gain: f64, noise: f64) -> Self {
        Self {
            base,
            load_gain,
            quality_gain,
            ar_phi: 0.0,
            ar_sigma: 0.0,
            noise,
        }
    }

    fn wander(mut self, phi: f64, sigma: f64) -> Self {
        self.ar_phi = phi;
        self.ar_sigma = sigma;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftSegment {
    pub start: u64,
    /// One offset per target, temperatures first.
    pub offsets: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftModel {
    None,
    /// Explicit offsets, each active from its start until the next segment.
    Segments(Vec<DriftSegment>),
    /// Fresh Gaussian offsets at random intervals of `mean_segment / 2 ..
    /// 3 mean_segment / 2` steps.
    Random {
        mean_segment: usize,
        temp_sigma: f64,
        o2_sigma: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSpec {
    pub schema: SignalSchema,
    /// Weight of the control vector `l` steps back, `l = 0..L`.
    pub lag_kernel: Vec<f64>,
    /// Per target, response per unit control deviation from nominal before
    /// the kernel is applied.
    pub control_gain: Vec<Vec<f64>>,
    pub nominal_controls: Vec<f64>,
    /// Target level at nominal controls, mean load and average coal.
    pub target_base: Vec<f64>,
    pub load_gain: Vec<f64>,
    pub quality_gain: Vec<f64>,
    pub noise_sigma: Vec<f64>,
    pub outlier_rate: f64,
    /// Spike size in multiples of the target's noise sigma.
    pub outlier_scale: f64,
    /// Spikes are truncated at this many noise sigmas.
    pub outlier_cap: f64,
    pub drift: DriftModel,
    pub load_profile: ArProcess,
    pub quality: ArProcess,
    pub channels: Vec<Channel>,
    /// Measurement that reads the load exactly.
    pub load_channel: usize,
    /// Measurement used to express coal quality in the true model.
    pub quality_probe: usize,
    /// Coal demand per MW of load, t/h.
    pub coal_per_mw: f64,
    /// Minimum ratio of summed throttle openings to summed coal feed.
    pub air_ratio: f64,
    /// Coefficient of a quadratic coal/air interaction in the first zone.
    /// Zero keeps the plant exactly linear.
    pub cross_term: f64,
    pub seed: u64,
}

impl Default for PlantSpec {
    fn default() -> Self {
        Self::with_seed(7)
    }
}

impl PlantSpec {
    /// The default calibration: six zones over twelve feeders (two each) and
    /// sixteen throttles, two flue sides, lag kernel `[4, 2, 1] / 7`.
    pub fn with_seed(seed: u64) -> Self {
        let schema = SignalSchema::default();
        let nz = schema.n_temperatures();
        let n_coal = 12;
        let n_thr = 16;
        let nc = n_coal + n_thr;
        let mut gain = vec![vec![0.0; nc]; nz + 2];
        for j in 0..n_coal {
            let z = j * nz / n_coal;
            gain[z][j] = 4.0;
            if z > 0 {
                gain[z - 1][j] = 1.0;
            }
            if z + 1 < nz {
                gain[z + 1][j] = 1.0;
            }
            let (own, other) = if j < n_coal / 2 { (nz, nz + 1) } else { (nz + 1, nz) };
            gain[own][j] = -0.004;
            gain[other][j] = -0.001;
        }
        for k in 0..n_thr {
            let j = n_coal + k;
            let z = k * nz / n_thr;
            gain[z][j] = -0.25;
            if z > 0 {
                gain[z - 1][j] = -0.05;
            }
            if z + 1 < nz {
                gain[z + 1][j] = -0.05;
            }
            let (own, other) = if k < n_thr / 2 { (nz, nz + 1) } else { (nz + 1, nz) };
            gain[own][j] = 0.004;
            gain[other][j] = 0.001;
        }
        let mut nominal = vec![30.0; n_coal];
        nominal.extend(std::iter::repeat_n(60.0, n_thr));

        let mut target_base: Vec<f64> = [25.0, -10.0, 15.0, -20.0, 5.0, -15.0]
            .iter()
            .map(|d| 1200.0 + d)
            .collect();
        target_base.extend([3.65, 3.35]);
        let mut load_gain = vec![0.03; nz];
        load_gain.extend([-0.0005, -0.0005]);
        let mut quality_gain: Vec<f64> = (0..nz).map(|i| 6.0 * (1.0 + 0.05 * i as f64)).collect();
        quality_gain.extend([-0.04, -0.04]);
        let mut noise_sigma = vec![9.0; nz];
        noise_sigma.extend([0.08, 0.08]);

        let channels = vec![
            Channel::new(600.0, 1.0, 0.0, 0.0),
            Channel::new(20.0, 0.0, 0.0, 0.0).wander(0.99, 0.3),
            Channel::new(250.0, 0.05, 0.0, 0.0).wander(0.9, 0.5),
            Channel::new(16.7, 0.004, 0.0, 0.05),
            Channel::new(1800.0, 3.0, 0.0, 10.0),
            Channel::new(320.0, 0.1, 8.0, 3.0),
            Channel::new(310.0, 0.1, 8.0, 3.0),
            Channel::new(40.0, 0.0, -5.0, 4.0),
            Channel::new(130.0, 0.0, 2.0, 1.5),
            Channel::new(128.0, 0.0, 2.0, 1.5),
            Channel::new(-100.0, 0.0, 3.0, 10.0),
            Channel::new(140.0, 0.02, 1.5, 1.5),
            Channel::new(70.0, 0.0, 3.0, 1.0),
        ];
        Self {
            schema,
            lag_kernel: vec![4.0 / 7.0, 2.0 / 7.0, 1.0 / 7.0],
            control_gain: gain,
            nominal_controls: nominal,
            target_base,
            load_gain,
            quality_gain,
            noise_sigma,
            outlier_rate: 0.01,
            outlier_scale: 3.0,
            outlier_cap: 8.0,
            drift: DriftModel::Random {
                mean_segment: 200,
                temp_sigma: 6.0,
                o2_sigma: 0.05,
            },
            load_profile: ArProcess {
                mean: 600.0,
                phi: 0.98,
                sigma: 8.0,
            },
            quality: ArProcess {
                mean: 0.0,
                phi: 0.95,
                sigma: (1.0f64 - 0.95 * 0.95).sqrt(),
            },
            channels,
            load_channel: 0,
            quality_probe: 12,
            coal_per_mw: 0.6,
            air_ratio: 1.6,
            cross_term: 0.0,
            seed,
        }
    }

    /// No target noise, spikes, drift or sensor noise; load and coal quality
    /// still wander.
    pub fn noise_free(mut self) -> Self {
        self.noise_sigma.iter_mut().for_each(|s| *s = 0.0);
        self.outlier_rate = 0.0;
        self.drift = DriftModel::None;
        for c in &mut self.channels {
            c.noise = 0.0;
            c.ar_sigma = 0.0;
        }
        self
    }

    /// Load and coal quality held at their means.
    pub fn frozen(mut self) -> Self {
        self.load_profile.sigma = 0.0;
        self.quality.sigma = 0.0;
        for c in &mut self.channels {
            c.ar_sigma = 0.0;
        }
        self
    }

    /// Adds a mild coal-by-air interaction to the first zone, outside the
    /// linear model class.
    pub fn nonlinear_stress(mut self) -> Self {
        self.cross_term = 0.02;
        self
    }

    pub fn lag_len(&self) -> usize {
        self.lag_kernel.len()
    }

    /// Total kernel weight on lags of one step or more.
    pub fn lagged_mass(&self) -> f64 {
        self.lag_kernel[1..].iter().sum()
    }

    pub fn n_targets(&self) -> usize {
        self.schema.n_targets()
    }

    pub fn validate(&self) -> Result<()> {
        self.schema.validate()?;
        let nt = self.n_targets();
        let nc = self.schema.n_controls();
        let nm = self.schema.n_measurements();
        if self.lag_kernel.is_empty() || self.lag_kernel.iter().any(|k| !k.is_finite()) {
            return Err(Error::Config("lag kernel must be non-empty and finite".into()));
        }
        let per_target = [
            ("target_base", self.target_base.len()),
            ("load_gain", self.load_gain.len()),
            ("quality_gain", self.quality_gain.len()),
            ("noise_sigma", self.noise_sigma.len()),
            ("control_gain", self.control_gain.len()),
        ];
        for (what, len) in per_target {
            if len != nt {
                return Err(Error::Config(format!("{what}: {len} entries for {nt} targets")));
            }
        }
        if self.control_gain.iter().any(|g| g.len() != nc) || self.nominal_controls.len() != nc {
            return Err(Error::Config(format!("control gains need {nc} columns")));
        }
        if self.noise_sigma.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::Config("noise_sigma must be >= 0".into()));
        }
        if !(0.0..0.2).contains(&self.outlier_rate) {
            return Err(Error::Config("outlier_rate must lie in [0, 0.2)".into()));
        }
        if !(self.outlier_scale >= 0.0) || !(self.outlier_cap >= 0.0) {
            return Err(Error::Config("outlier scale and cap must be >= 0".into()));
        }
        if self.channels.len() != nm {
            return Err(Error::Config(format!("{} channels for {nm} measurements", self.channels.len())));
        }
        for c in &self.channels {
            if !(c.ar_phi.abs() < 1.0) || !(c.ar_sigma >= 0.0) || !(c.noise >= 0.0) {
                return Err(Error::Config("channel needs |ar_phi| < 1 and non-negative noise".into()));
            }
        }
        if self.load_channel >= nm || self.quality_probe >= nm {
            return Err(Error::Config("load_channel / quality_probe out of range".into()));
        }
        if self.channels[self.quality_probe].quality_gain == 0.0 {
            return Err(Error::Config("quality probe does not see coal quality".into()));
        }
        self.load_profile.validate("load_profile")?;
        self.quality.validate("quality")?;
        match &self.drift {
            DriftModel::None => {}
            DriftModel::Segments(segs) => {
                if segs.iter().any(|s| s.offsets.len() != nt) {
                    return Err(Error::Config(format!("drift segments need {nt} offsets")));
                }
                if segs.windows(2).any(|w| w[0].start >= w[1].start) {
                    return Err(Error::Config("drift segment starts must increase".into()));
                }
            }
            DriftModel::Random {
                mean_segment,
                temp_sigma,
                o2_sigma,
            } => {
                if *mean_segment < 2 || !(*temp_sigma >= 0.0) || !(*o2_sigma >= 0.0) {
                    return Err(Error::Config("random drift needs mean_segment >= 2 and sigmas >= 0".into()));
                }
            }
        }
        if !(self.coal_per_mw > 0.0) || !(self.air_ratio >= 0.0) || !self.cross_term.is_finite() {
            return Err(Error::Config("coal_per_mw must be > 0 and air_ratio >= 0".into()));
        }
        Ok(())
    }

    /// Coal demand for a given load.
    pub fn demand(&self, load: f64) -> f64 {
        self.coal_per_mw * load
    }

    fn coal_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.schema
            .controllable_names
            .iter()
            .enumerate()
            .filter(|(_, n)| n.starts_with("coal"))
            .map(|(i, _)| i)
    }

    fn throttle_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.schema
            .controllable_names
            .iter()
            .enumerate()
            .filter(|(_, n)| n.starts_with("throttle"))
            .map(|(i, _)| i)
    }

    /// Schema bounds, summed coal feed equal to the demand of `load`, and
    /// summed throttle opening at least `air_ratio` times summed coal.
    pub fn default_constraints(&self, load: f64) -> ControlConstraints {
        let nc = self.schema.n_controls();
        let (lower, upper) = self.schema.control_bounds.iter().copied().unzip();
        let mut cons = ControlConstraints::boxed(lower, upper);
        let mut coal = vec![0.0; nc];
        self.coal_indices().for_each(|j| coal[j] = 1.0);
        cons.eq_rows.push(LinearRow::new(coal, self.demand(load)));
        let mut air = vec![0.0; nc];
        self.coal_indices().for_each(|j| air[j] = self.air_ratio);
        self.throttle_indices().for_each(|j| air[j] = -1.0);
        cons.ineq_rows.push(LinearRow::new(air, 0.0));
        cons
    }

    /// Ground-truth coefficients of every target over the columns of
    /// [`Self::true_layout`], with the intercept. Exact when the quality probe
    /// is noise-free and the plant has no cross term.
    pub fn true_weights(&self) -> Vec<(Vec<f64>, f64)> {
        let layout = self.true_layout();
        let width = layout.width(&self.schema);
        let nc = self.schema.n_controls();
        let nm = self.schema.n_measurements();
        let frame_width = self.schema.column_count();
        let probe = &self.channels[self.quality_probe];
        let load = &self.channels[self.load_channel];
        (0..self.n_targets())
            .map(|i| {
                let g = &self.control_gain[i];
                let mut w = vec![0.0; width];
                let mut b = self.target_base[i];
                for (l, k) in self.lag_kernel.iter().enumerate() {
                    let off = if l == 0 { 0 } else { nc + nm + (l - 1) * frame_width };
                    for j in 0..nc {
                        w[off + j] += k * g[j];
                        b -= k * g[j] * self.nominal_controls[j];
                    }
                }
                // load deviation = (m_load - base) / load_gain
                let per_load = self.load_gain[i] / load.load_gain;
                // q = (m_probe - base - probe.load_gain (load - mean)) / quality_gain
                let per_q = self.quality_gain[i] / probe.quality_gain;
                let load_total = per_load - per_q * probe.load_gain / load.load_gain;
                w[nc + self.load_channel] += load_total;
                w[nc + self.quality_probe] += per_q;
                b -= load_total * load.base + per_q * probe.base;
                (w, b)
            })
            .collect()
    }

    /// Layout whose columns carry the true model: type C with one lag frame
    /// per kernel entry past the first.
    pub fn true_layout(&self) -> FeatureLayout {
        match self.lag_len() {
            1 => FeatureLayout::B,
            l => FeatureLayout::c(l - 1),
        }
    }

    /// The true model as a bundle, for oracle runs.
    pub fn true_bundle(&self, scaling: TargetScaling) -> Result<ModelBundle> {
        self.validate()?;
        let layout = self.true_layout();
        let nc = self.schema.n_controls();
        let models = self
            .schema
            .target_names()
            .zip(self.true_weights())
            .map(|(name, (w, b))| LinearModel::from_raw(name, Some(layout), nc, w, b))
            .collect();
        Ok(ModelBundle {
            schema_hash: self.schema.hash(),
            layout,
            svr: SvrConfig::default(),
            n_temperatures: self.schema.n_temperatures(),
            scaling,
            models,
        })
    }
}

/// Mutable plant: disturbance states, control history and RNG streams.
#[derive(Debug, Clone)]
pub struct PlantState {
    step: u64,
    /// Most recent control vector first; always `L` entries.
    history: VecDeque<Vec<f64>>,
    load: f64,
    quality: f64,
    channel_ar: Vec<f64>,
    drift: Vec<f64>,
    next_drift: u64,
    rng: ChaCha8Rng,
    drift_rng: ChaCha8Rng,
}

impl PlantState {
    /// Plant at rest: disturbances at their means, the control history filled
    /// with the nominal vector.
    pub fn new(spec: &PlantSpec) -> Result<Self> {
        spec.validate()?;
        let mut st = Self {
            step: 0,
            history: std::iter::repeat_n(spec.nominal_controls.clone(), spec.lag_len()).collect(),
            load: spec.load_profile.mean,
            quality: spec.quality.mean,
            channel_ar: vec![0.0; spec.channels.len()],
            drift: vec![0.0; spec.n_targets()],
            next_drift: 0,
            rng: ChaCha8Rng::seed_from_u64(spec.seed),
            drift_rng: ChaCha8Rng::seed_from_u64(spec.seed ^ DRIFT_STREAM),
        };
        st.update_drift(spec);
        Ok(st)
    }

    pub fn step_index(&self) -> u64 {
        self.step
    }

    /// Load the next step will see if the load process stands still.
    pub fn load(&self) -> f64 {
        self.load
    }

    pub fn quality(&self) -> f64 {
        self.quality
    }

    pub fn drift(&self) -> &[f64] {
        &self.drift
    }

    pub fn control_history(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.history.iter()
    }

    fn update_drift(&mut self, spec: &PlantSpec) {
        match &spec.drift {
            DriftModel::None => {}
            DriftModel::Segments(segs) => {
                if let Some(s) = segs.iter().rev().find(|s| s.start <= self.step) {
                    self.drift.clone_from(&s.offsets);
                }
            }
            DriftModel::Random {
                mean_segment,
                temp_sigma,
                o2_sigma,
            } => {
                if self.step == self.next_drift {
                    let nz = spec.schema.n_temperatures();
                    for (i, d) in self.drift.iter_mut().enumerate() {
                        let s = if i < nz { temp_sigma } else { o2_sigma };
                        let e: f64 = StandardNormal.sample(&mut self.drift_rng);
                        *d = s * e;
                    }
                    let m = *mean_segment as u64;
                    self.next_drift += self.drift_rng.random_range(m / 2..=m + m / 2);
                }
            }
        }
    }

    /// Deterministic part of the targets (no drift, noise or spikes) for
    /// `controls` applied now, at the given load and coal quality.
    pub fn response(&self, spec: &PlantSpec, controls: &[f64], load: f64, quality: f64) -> Vec<f64> {
        let dl = load - spec.load_profile.mean;
        (0..spec.n_targets())
            .map(|i| {
                let g = &spec.control_gain[i];
                let mut v = spec.target_base[i] + spec.load_gain[i] * dl + spec.quality_gain[i] * quality;
                for (l, k) in spec.lag_kernel.iter().enumerate() {
                    let u = if l == 0 { controls } else { &self.history[l - 1][..] };
                    for j in 0..u.len() {
                        v += k * g[j] * (u[j] - spec.nominal_controls[j]);
                    }
                }
                if i == 0 && spec.cross_term != 0.0 {
                    let a = controls[0] - spec.nominal_controls[0];
                    let j = spec.throttle_indices().next().unwrap_or(0);
                    v += spec.cross_term * a * (controls[j] - spec.nominal_controls[j]);
                }
                v
            })
            .collect()
    }

    /// Applies `controls` for one sample period and returns the logged frame.
    pub fn step(&mut self, spec: &PlantSpec, controls: &[f64]) -> Result<TelemetryFrame> {
        let nc = spec.schema.n_controls();
        if controls.len() != nc {
            return Err(Error::LengthMismatch {
                what: "control vector",
                expected: nc,
                got: controls.len(),
            });
        }
        for (j, (&u, &(lo, hi))) in controls.iter().zip(&spec.schema.control_bounds).enumerate() {
            if !(u >= lo && u <= hi) {
                return Err(Error::Config(format!(
                    "control {} = {u} outside [{lo}, {hi}]",
                    spec.schema.controllable_names[j]
                )));
            }
        }
        self.update_drift(spec);
        let rng = &mut self.rng;
        let mut normal = || -> f64 { StandardNormal.sample(rng) };
        let lp = &spec.load_profile;
        self.load = lp.mean + lp.phi * (self.load - lp.mean) + lp.sigma * normal();
        let q = &spec.quality;
        self.quality = q.mean + q.phi * (self.quality - q.mean) + q.sigma * normal();

        let dl = self.load - lp.mean;
        let mut measurements = Vec::with_capacity(spec.channels.len());
        for (c, ar) in spec.channels.iter().zip(&mut self.channel_ar) {
            *ar = c.ar_phi * *ar + c.ar_sigma * normal();
            let e = normal();
            measurements.push(c.base + c.load_gain * dl + c.quality_gain * self.quality + *ar + c.noise * e);
        }

        let mut targets = self.response(spec, controls, self.load, self.quality);
        let t_dist = StudentT::new(2.0).expect("two degrees of freedom");
        for (i, y) in targets.iter_mut().enumerate() {
            let e: f64 = StandardNormal.sample(&mut self.rng);
            let hit = self.rng.random::<f64>() < spec.outlier_rate;
            let spike: f64 = t_dist.sample(&mut self.rng);
            let s = spec.noise_sigma[i];
            *y += self.drift[i] + s * e;
            if hit {
                let cap = spec.outlier_cap * s;
                *y += (spec.outlier_scale * s * spike).max(-cap).min(cap);
            }
        }

        let nz = spec.schema.n_temperatures();
        let o2 = targets.split_off(nz);
        let frame = TelemetryFrame {
            timestamp: self.step,
            controls: controls.to_vec(),
            measurements,
            temperatures: targets,
            o2,
        };
        self.history.pop_back();
        self.history.push_front(controls.to_vec());
        self.step += 1;
        Ok(frame)
    }

    /// The exact optimal-control QP for the next step, with load, coal
    /// quality and drift assumed to hold at their current values. Built from
    /// the plant equations directly, not from a model bundle.
    pub fn oracle_qp(
        &self,
        spec: &PlantSpec,
        weights: &ObjectiveWeights,
        scaling: &TargetScaling,
        cons: &ControlConstraints,
    ) -> Result<QpProblem> {
        if spec.cross_term != 0.0 {
            return Err(Error::Config("oracle needs a linear plant".into()));
        }
        let nc = spec.schema.n_controls();
        let nz = spec.schema.n_temperatures();
        let zero = vec![0.0; nc];
        let base = self.response(spec, &zero, self.load, self.quality);
        let forms: Vec<(Vec<f64>, f64)> = (0..spec.n_targets())
            .map(|i| {
                let (c, s) = if i < nz {
                    (scaling.temp_center, scaling.temp_scale)
                } else {
                    (scaling.o2_center, scaling.o2_scale)
                };
                let k0 = spec.lag_kernel[0];
                let w = spec.control_gain[i].iter().map(|g| k0 * g / s).collect();
                (w, (base[i] + self.drift[i] - c) / s)
            })
            .collect();
        qp_from_affine(&forms[..nz], &forms[nz..], weights, cons)
    }
}

/// Bounded mean-reverting random walk on the controls, standing in for a
/// human operator. Coal feeds always sum to the current demand; throttles are
/// opened further if the air ratio would be violated.
#[derive(Debug, Clone)]
pub struct RandomWalk {
    rng: ChaCha8Rng,
    deviation: Vec<f64>,
    pub phi: f64,
    pub coal_sigma: f64,
    pub throttle_sigma: f64,
}

impl RandomWalk {
    pub fn new(spec: &PlantSpec) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(spec.seed ^ POLICY_STREAM),
            deviation: vec![0.0; spec.schema.n_controls()],
            phi: 0.85,
            coal_sigma: 1.6,
            throttle_sigma: 4.5,
        }
    }

    pub fn next(&mut self, spec: &PlantSpec, load: f64) -> Vec<f64> {
        let coal: Vec<usize> = spec.coal_indices().collect();
        let thr: Vec<usize> = spec.throttle_indices().collect();
        for (j, d) in self.deviation.iter_mut().enumerate() {
            let e: f64 = StandardNormal.sample(&mut self.rng);
            let s = if coal.contains(&j) { self.coal_sigma } else { self.throttle_sigma };
            *d = self.phi * *d + s * e;
        }
        let bounds = &spec.schema.control_bounds;
        let clip = |j: usize, v: f64| v.max(bounds[j].0).min(bounds[j].1);
        let mut u = spec.nominal_controls.clone();
        let mean_dev = coal.iter().map(|&j| self.deviation[j]).sum::<f64>() / coal.len().max(1) as f64;
        let share = spec.demand(load) / coal.len().max(1) as f64;
        for &j in &coal {
            u[j] = clip(j, share + self.deviation[j] - mean_dev);
        }
        for &j in &thr {
            u[j] = clip(j, spec.nominal_controls[j] + self.deviation[j]);
        }
        let need = spec.air_ratio * coal.iter().map(|&j| u[j]).sum::<f64>();
        let have: f64 = thr.iter().map(|&j| u[j]).sum();
        if have < need && have > 0.0 {
            for &j in &thr {
                u[j] = clip(j, u[j] * need / have);
            }
        }
        u
    }
}

/// Control source while logging a dataset.
#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    RandomWalk,
    /// The nominal control vector at every step.
    Constant,
    /// Control rows taken in order from a recorded log.
    Replay(Vec<Vec<f64>>),
}

/// Rolls a fresh plant for `steps` steps under `policy`.
pub fn generate_dataset(spec: &PlantSpec, steps: usize, policy: &Policy) -> Result<Dataset> {
    if steps <= spec.lag_len() {
        return Err(Error::Config(format!(
            "need more than {} steps, got {steps}",
            spec.lag_len()
        )));
    }
    if let Policy::Replay(rows) = policy {
        if rows.len() < steps {
            return Err(Error::Schema(format!("replay log has {} rows, need {steps}", rows.len())));
        }
        if let Some(r) = rows.iter().find(|r| r.len() != spec.schema.n_controls()) {
            return Err(Error::Schema(format!(
                "replay row has {} controls, schema has {}",
                r.len(),
                spec.schema.n_controls()
            )));
        }
    }
    let mut plant = PlantState::new(spec)?;
    let mut walk = RandomWalk::new(spec);
    let mut frames: Vec<TelemetryFrame> = Vec::with_capacity(steps);
    for t in 0..steps {
        let load = frames
            .last()
            .map_or(spec.load_profile.mean, |f| f.measurements[spec.load_channel]);
        let u = match policy {
            Policy::RandomWalk => walk.next(spec, load),
            Policy::Constant => spec.nominal_controls.clone(),
            Policy::Replay(rows) => rows[t].clone(),
        };
        frames.push(plant.step(spec, &u)?);
    }
    Dataset::new(spec.schema.clone(), frames)
}

/// Control QPs of the true plant taken every `stride` steps along a
/// random-walk run, after the lag history has filled. Targets are scaled
/// by the centers and spreads of that run.
pub fn control_qp_suite(
    spec: &PlantSpec,
    count: usize,
    stride: usize,
    weights: &ObjectiveWeights,
) -> Result<Vec<QpProblem>> {
    if count == 0 || stride == 0 {
        return Err(Error::Config("count and stride must be >= 1".into()));
    }
    let steps = spec.lag_len() + count * stride;
    let ds = generate_dataset(spec, steps.max(spec.lag_len() + 2), &Policy::RandomWalk)?;
    let scaling = TargetScaling::from_frames(ds.frames.iter());
    let mut plant = PlantState::new(spec)?;
    let mut walk = RandomWalk::new(spec);
    let mut load = spec.load_profile.mean;
    let mut out = Vec::with_capacity(count);
    for t in 0..steps {
        if t >= spec.lag_len() && (t - spec.lag_len()).is_multiple_of(stride) {
            let cons = spec.default_constraints(load);
            out.push(plant.oracle_qp(spec, weights, &scaling, &cons)?);
        }
        let u = walk.next(spec, load);
        load = plant.step(spec, &u)?.measurements[spec.load_channel];
    }
    Ok(out)
}
