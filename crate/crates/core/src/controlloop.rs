//! Closed-loop operation against the synthetic plant.
//!
//! Each step reads the last logged frame, freezes its measurements (and, for
//! lagged layouts, the frames before it) into the models, applies the
//! residual compensation, solves the control QP and actuates the plant. The
//! compensation buffers are fed the raw model predictions, so the correction
//! tracks model bias alone.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::clock::Stopwatch;
use crate::compensation::CompensationState;
use crate::dataset::{Dataset, TelemetryFrame};
use crate::error::{Error, Result};
use crate::objective::{build_qp, objective_from_targets, ControlConstraints, ObjectiveWeights};
use crate::plantsim::{PlantSpec, PlantState, RandomWalk};
use crate::qpsolver::{solve, SolverOptions, Status};
use crate::svr::ModelBundle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    /// Repeat the previous control vector.
    HoldLast,
    /// Centre of the control box.
    Midpoint,
}

/// Where each step's constraints come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintSource {
    Fixed(ControlConstraints),
    /// The plant's default rows with the coal demand of the last logged load.
    TrackLoad,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    pub bundle: ModelBundle,
    pub weights: ObjectiveWeights,
    pub constraints: ConstraintSource,
    pub solver: SolverOptions,
    pub compensation_window: usize,
    pub fallback: Fallback,
    pub horizon: usize,
    /// Steps run under the logging operator before control starts; they fill
    /// the lag frames and prime the compensation buffers.
    pub warmup: usize,
}

impl LoopConfig {
    pub fn new(bundle: ModelBundle) -> Self {
        Self {
            bundle,
            weights: ObjectiveWeights::default(),
            constraints: ConstraintSource::TrackLoad,
            solver: SolverOptions::default(),
            compensation_window: 50,
            fallback: Fallback::HoldLast,
            horizon: 500,
            warmup: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be >= 1".into()));
        }
        if self.compensation_window == 0 {
            return Err(Error::Config("compensation window must be >= 1".into()));
        }
        if self.warmup < self.bundle.layout.lag_depth + 1 {
            return Err(Error::Config(format!(
                "warmup must cover the {} lag frames plus one",
                self.bundle.layout.lag_depth
            )));
        }
        self.weights.validate()?;
        self.solver.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub controls: Vec<f64>,
    /// Compensated predictions at the applied controls.
    pub predicted: Vec<f64>,
    pub raw_predicted: Vec<f64>,
    pub actual: Vec<f64>,
    /// `actual − raw_predicted`, as pushed into the compensation buffers.
    pub residuals: Vec<f64>,
    pub objective_predicted: f64,
    /// Objective on the targets the plant actually produced.
    pub objective_achieved: f64,
    pub status: Status,
    pub iterations: usize,
    /// QP assembly plus solve.
    pub solve_time_s: f64,
    pub fallback: bool,
    pub max_violation: f64,
}

/// Run-level quality numbers, all recomputable from the step records.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub steps: usize,
    pub mean_temp_std: f64,
    pub mean_o2_diff: f64,
    pub mean_temp: f64,
    pub mean_o2: f64,
    pub mean_objective: f64,
    pub fallback_steps: usize,
    pub max_solve_time_s: f64,
}

/// Improvements of a run over a baseline log: spread and side imbalance as
/// relative reductions in percent, mean temperature as an absolute rise in
/// °C, mean O₂ as a relative reduction in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Deltas {
    pub steps: usize,
    pub temp_std_reduction_pct: f64,
    pub o2_diff_reduction_pct: f64,
    pub temp_rise_c: f64,
    pub o2_reduction_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopReport {
    pub n_temperatures: usize,
    pub target_names: Vec<String>,
    pub weights: ObjectiveWeights,
    pub compensation_window: usize,
    pub bundle_hash: String,
    pub plant_seed: u64,
    /// Controls applied during warm-up, for replay.
    pub warmup_controls: Vec<Vec<f64>>,
    pub records: Vec<StepRecord>,
    pub aggregates: Aggregates,
    pub deltas: Option<Deltas>,
}

/// Per-step quality numbers: zone spread (population std), |O₁ − O₂|, mean
/// temperature, mean O₂.
pub fn quality(temps: &[f64], o2: &[f64]) -> (f64, f64, f64, f64) {
    let z = temps.len() as f64;
    let mean = temps.iter().sum::<f64>() / z;
    let var = temps.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / z;
    let diff = if o2.len() >= 2 { (o2[0] - o2[1]).abs() } else { 0.0 };
    let o_mean = o2.iter().sum::<f64>() / o2.len().max(1) as f64;
    (var.sqrt(), diff, mean, o_mean)
}

fn mean_quality<'a>(rows: impl Iterator<Item = (&'a [f64], &'a [f64])>) -> [f64; 4] {
    let mut acc = [0.0; 4];
    let mut n = 0usize;
    for (t, o) in rows {
        let (a, b, c, d) = quality(t, o);
        acc[0] += a;
        acc[1] += b;
        acc[2] += c;
        acc[3] += d;
        n += 1;
    }
    acc.map(|v| v / n.max(1) as f64)
}

impl Aggregates {
    pub fn from_records(records: &[StepRecord], n_temperatures: usize) -> Self {
        let q = mean_quality(records.iter().map(|r| r.actual.split_at(n_temperatures)));
        let n = records.len().max(1) as f64;
        Self {
            steps: records.len(),
            mean_temp_std: q[0],
            mean_o2_diff: q[1],
            mean_temp: q[2],
            mean_o2: q[3],
            mean_objective: records.iter().map(|r| r.objective_achieved).sum::<f64>() / n,
            fallback_steps: records.iter().filter(|r| r.fallback).count(),
            max_solve_time_s: records.iter().map(|r| r.solve_time_s).fold(0.0, f64::max),
        }
    }
}

impl LoopReport {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        self.write_csv_with(w, true)
    }

    /// Like [`Self::write_csv`]; `timing = false` leaves out the solve
    /// time column so the file depends only on config and seed.
    pub fn write_csv_with<W: Write>(&self, w: W, timing: bool) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let nc = self.records.first().map_or(0, |r| r.controls.len());
        let mut header: Vec<String> = [
            "step",
            "status",
            "fallback",
            "iterations",
            "solve_time_s",
            "objective_predicted",
            "objective_achieved",
            "max_violation",
        ]
        .iter()
        .filter(|c| timing || **c != "solve_time_s")
        .map(|s| s.to_string())
        .collect();
        header.extend((0..nc).map(|j| format!("u{j}")));
        for prefix in ["predicted", "raw", "actual"] {
            header.extend(self.target_names.iter().map(|t| format!("{prefix}_{t}")));
        }
        wr.write_record(&header)?;
        for r in &self.records {
            let mut rec = vec![
                r.step.to_string(),
                format!("{:?}", r.status),
                r.fallback.to_string(),
                r.iterations.to_string(),
            ];
            if timing {
                rec.push(format!("{}", r.solve_time_s));
            }
            rec.extend([
                format!("{}", r.objective_predicted),
                format!("{}", r.objective_achieved),
                format!("{}", r.max_violation),
            ]);
            for v in r.controls.iter().chain(&r.predicted).chain(&r.raw_predicted).chain(&r.actual) {
                rec.push(format!("{v}"));
            }
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Every applied control vector followed by the warm-up ones, in plant
    /// order, for replay through a same-seed plant.
    pub fn applied_controls(&self) -> Vec<Vec<f64>> {
        let mut all = self.warmup_controls.clone();
        all.extend(self.records.iter().map(|r| r.controls.clone()));
        all
    }
}

/// Compares a run with a logged baseline over the steps both cover.
pub fn score_against_log(report: &LoopReport, baseline: &Dataset) -> Result<Deltas> {
    let nz = report.n_temperatures;
    if baseline.schema.n_temperatures() != nz {
        return Err(Error::Schema("baseline has a different zone count".into()));
    }
    let base: std::collections::HashMap<u64, &TelemetryFrame> =
        baseline.frames.iter().map(|f| (f.timestamp, f)).collect();
    let pairs: Vec<(&StepRecord, &TelemetryFrame)> = report
        .records
        .iter()
        .filter_map(|r| base.get(&r.step).map(|f| (r, *f)))
        .collect();
    if pairs.is_empty() {
        return Err(Error::EmptyDataset("run and baseline share no steps".into()));
    }
    let ours = mean_quality(pairs.iter().map(|(r, _)| r.actual.split_at(nz)));
    let theirs = mean_quality(pairs.iter().map(|(_, f)| (&f.temperatures[..], &f.o2[..])));
    let rel = |b: f64, a: f64| if b == 0.0 { 0.0 } else { 100.0 * (b - a) / b };
    Ok(Deltas {
        steps: pairs.len(),
        temp_std_reduction_pct: rel(theirs[0], ours[0]),
        o2_diff_reduction_pct: rel(theirs[1], ours[1]),
        temp_rise_c: ours[2] - theirs[2],
        o2_reduction_pct: rel(theirs[3], ours[3]),
    })
}

fn clip_to_box(x: &mut [f64], cons: &ControlConstraints) {
    for (v, (lo, hi)) in x.iter_mut().zip(cons.lower.iter().zip(&cons.upper)) {
        *v = v.max(*lo).min(*hi);
    }
}

/// Runs `cfg.warmup` operator steps, then `cfg.horizon` controlled steps on a
/// fresh plant built from `spec`.
pub fn run_closed_loop(spec: &PlantSpec, cfg: &LoopConfig) -> Result<LoopReport> {
    cfg.validate()?;
    let bundle = &cfg.bundle;
    if bundle.schema_hash != spec.schema.hash() {
        return Err(Error::Schema("bundle was trained on a different schema".into()));
    }
    let schema = &spec.schema;
    let layout = bundle.layout;
    let nt = schema.n_targets();
    let nz = schema.n_temperatures();
    let mut plant = PlantState::new(spec)?;
    let mut walk = RandomWalk::new(spec);
    let mut comp = CompensationState::for_bundle(cfg.compensation_window, bundle)?;
    let mut frames: Vec<TelemetryFrame> = Vec::with_capacity(cfg.warmup + cfg.horizon);
    let mut warmup_controls = Vec::with_capacity(cfg.warmup);
    let mut records = Vec::with_capacity(cfg.horizon);

    // decision-time features: the last frame's measurements stand in for the
    // current ones, lag l is the frame l steps back
    let features = |frames: &[TelemetryFrame]| -> Vec<f64> {
        let t = frames.len();
        let mut m = Vec::with_capacity(layout.width(schema));
        layout.fill_measurement_part(schema, &frames[t - 1].measurements, |l| &frames[t - l], &mut m);
        m
    };
    let raw_predictions = |m_vec: &[f64], x: &[f64]| -> Result<Vec<f64>> {
        bundle.models.iter().map(|md| md.predict_split(x, m_vec)).collect()
    };
    let last_load = |frames: &[TelemetryFrame]| {
        frames
            .last()
            .map_or(spec.load_profile.mean, |f| f.measurements[spec.load_channel])
    };

    for _ in 0..cfg.warmup {
        let u = walk.next(spec, last_load(&frames));
        let primed = frames.len() > layout.lag_depth;
        let pending = if primed {
            Some(raw_predictions(&features(&frames), &u)?)
        } else {
            None
        };
        let f = plant.step(spec, &u)?;
        if let Some(raw) = pending {
            comp.mark_step(f.timestamp);
            for (i, (a, r)) in f.targets().zip(&raw).enumerate() {
                comp.observe(i, a, *r)?;
            }
        }
        warmup_controls.push(u);
        frames.push(f);
    }

    for _ in 0..cfg.horizon {
        let m_vec = features(&frames);
        let cons = match &cfg.constraints {
            ConstraintSource::Fixed(c) => c.clone(),
            ConstraintSource::TrackLoad => spec.default_constraints(last_load(&frames)),
        };
        let clock = Stopwatch::start();
        let qp = build_qp(bundle, &comp, &m_vec, &cfg.weights, &cons)?;
        let mut sol = solve(&qp, &cfg.solver)?;
        if sol.status != Status::Optimal && sol.kkt_regularized {
            let mut ridged = qp.clone();
            ridged.add_ridge(1e-8 * (1.0 + ridged.h.max_abs()));
            let retry = solve(&ridged, &cfg.solver)?;
            if retry.status == Status::Optimal {
                sol = retry;
            }
        }
        let solve_time_s = clock.elapsed_s();

        let prev = frames.last().expect("warm-up frames");
        let fallback = sol.status != Status::Optimal;
        let mut x = if fallback {
            match cfg.fallback {
                Fallback::HoldLast => prev.controls.clone(),
                Fallback::Midpoint => cons.lower.iter().zip(&cons.upper).map(|(l, u)| 0.5 * (l + u)).collect(),
            }
        } else {
            sol.x.clone()
        };
        clip_to_box(&mut x, &cons);
        let raw = raw_predictions(&m_vec, &x)?;
        let predicted: Vec<f64> = raw.iter().enumerate().map(|(i, r)| comp.compensate(i, *r)).collect();
        let objective_predicted =
            objective_from_targets(&predicted[..nz], &predicted[nz..], &cfg.weights, &bundle.scaling);

        let f = plant.step(spec, &x)?;
        let actual: Vec<f64> = f.targets().collect();
        comp.mark_step(f.timestamp);
        for i in 0..nt {
            comp.observe(i, actual[i], raw[i])?;
        }
        records.push(StepRecord {
            step: f.timestamp,
            max_violation: cons.max_violation(&x),
            residuals: actual.iter().zip(&raw).map(|(a, r)| a - r).collect(),
            objective_achieved: objective_from_targets(&f.temperatures, &f.o2, &cfg.weights, &bundle.scaling),
            controls: x,
            predicted,
            raw_predicted: raw,
            actual,
            objective_predicted,
            status: sol.status,
            iterations: sol.iterations,
            solve_time_s,
            fallback,
        });
        frames.push(f);
    }

    let aggregates = Aggregates::from_records(&records, nz);
    Ok(LoopReport {
        n_temperatures: nz,
        target_names: schema.target_names().cloned().collect(),
        weights: cfg.weights,
        compensation_window: cfg.compensation_window,
        bundle_hash: bundle.hash(),
        plant_seed: spec.seed,
        warmup_controls,
        records,
        aggregates,
        deltas: None,
    })
}
