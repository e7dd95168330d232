//! The run configuration: one TOML file, unknown keys rejected.

use std::path::{Path, PathBuf};

use boiler_core::baselines::{Algorithm, HeuristicConfig};
use boiler_core::controlloop::{ConstraintSource, Fallback};
use boiler_core::dataset::{DataType, FeatureLayout};
use boiler_core::objective::ObjectiveWeights;
use boiler_core::plantsim::{DriftModel, PlantSpec};
use boiler_core::qpsolver::SolverOptions;
use boiler_core::svr::SvrConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const DEFAULT_CONFIG: &str = include_str!("../configs/default.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seed of the plant used for data generation and training.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub plant: PlantSection,
    pub layout: LayoutSection,
    pub svr: SvrConfig,
    pub objective: ObjectiveWeights,
    pub constraints: ConstraintsSection,
    pub solver: SolverOptions,
    pub compensation: CompensationSection,
    #[serde(rename = "loop")]
    pub control: LoopSection,
    pub bench: BenchSection,
    pub heuristics: Vec<HeuristicConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            out_dir: PathBuf::from("run"),
            plant: PlantSection::default(),
            layout: LayoutSection::default(),
            svr: SvrConfig::default(),
            objective: ObjectiveWeights::default(),
            constraints: ConstraintsSection::default(),
            solver: SolverOptions::default(),
            compensation: CompensationSection::default(),
            control: LoopSection::default(),
            bench: BenchSection::default(),
            heuristics: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantSection {
    pub steps: usize,
    pub noise_free: bool,
    /// Constant load, coal quality and drift.
    pub frozen: bool,
    pub cross_term: f64,
    pub drift_mean_segment: usize,
    pub drift_temp_sigma: f64,
    pub drift_o2_sigma: f64,
}

impl Default for PlantSection {
    fn default() -> Self {
        let spec = PlantSpec::default();
        let (m, t, o) = match spec.drift {
            DriftModel::Random { mean_segment, temp_sigma, o2_sigma } => (mean_segment, temp_sigma, o2_sigma),
            _ => (200, 6.0, 0.05),
        };
        Self {
            steps: 13_000,
            noise_free: false,
            frozen: false,
            cross_term: 0.0,
            drift_mean_segment: m,
            drift_temp_sigma: t,
            drift_o2_sigma: o,
        }
    }
}

impl PlantSection {
    pub fn spec(&self, seed: u64) -> PlantSpec {
        let mut s = PlantSpec::with_seed(seed);
        s.drift = DriftModel::Random {
            mean_segment: self.drift_mean_segment,
            temp_sigma: self.drift_temp_sigma,
            o2_sigma: self.drift_o2_sigma,
        };
        s.cross_term = self.cross_term;
        if self.noise_free {
            s = s.noise_free();
        }
        if self.frozen {
            s = s.frozen();
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayoutSection {
    pub data_type: DataType,
    pub lag_depth: usize,
}

impl Default for LayoutSection {
    fn default() -> Self {
        Self {
            data_type: DataType::C,
            lag_depth: 2,
        }
    }
}

impl LayoutSection {
    pub fn layout(&self) -> FeatureLayout {
        FeatureLayout {
            data_type: self.data_type,
            lag_depth: self.lag_depth,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintMode {
    /// Demand and air rows rebuilt from the measured load every step.
    TrackLoad,
    /// Rows built once from `load`.
    Fixed,
    /// Control bounds only.
    BoxOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstraintsSection {
    pub mode: ConstraintMode,
    pub load: f64,
}

impl Default for ConstraintsSection {
    fn default() -> Self {
        Self {
            mode: ConstraintMode::TrackLoad,
            load: 600.0,
        }
    }
}

impl ConstraintsSection {
    pub fn source(&self, spec: &PlantSpec) -> ConstraintSource {
        match self.mode {
            ConstraintMode::TrackLoad => ConstraintSource::TrackLoad,
            ConstraintMode::Fixed => ConstraintSource::Fixed(spec.default_constraints(self.load)),
            ConstraintMode::BoxOnly => {
                let (lo, hi) = spec.schema.control_bounds.iter().copied().unzip();
                ConstraintSource::Fixed(boiler_core::objective::ControlConstraints::boxed(lo, hi))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompensationSection {
    pub window: usize,
    pub sweep_sizes: Vec<usize>,
}

impl Default for CompensationSection {
    fn default() -> Self {
        Self {
            window: 50,
            sweep_sizes: vec![1, 2, 3, 5, 10, 20, 30, 50, 75, 100, 150, 200, 300, 500, 1000, 2000],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopSection {
    pub horizon: usize,
    pub warmup: usize,
    pub fallback: Fallback,
    /// Seed of the plant the controller runs on; the baseline log uses the
    /// same seed.
    pub eval_seed: u64,
}

impl Default for LoopSection {
    fn default() -> Self {
        Self {
            horizon: 500,
            warmup: 100,
            fallback: Fallback::HoldLast,
            eval_seed: 1001,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub problems: usize,
    /// Plant steps between consecutive sampled control problems.
    pub stride: usize,
    pub realtime_interval_s: f64,
    pub target_gap: f64,
    pub stop_at_target: bool,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            problems: 50,
            stride: 20,
            realtime_interval_s: 5.0,
            target_gap: 5e-2,
            stop_at_target: true,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let de = toml::Deserializer::parse(text).map_err(|e| CliError::config(format!("{e}")))?;
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::config(format!("at `{path}`: {}", e.into_inner().message()))
        })?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Self::parse(DEFAULT_CONFIG),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::config(format!("cannot read {}: {e}", p.display())))?;
                Self::parse(&text)
            }
        }
    }

    /// Heuristic configs, filling in the canonical ones when none are given.
    pub fn heuristics_for(&self, n: usize) -> Vec<HeuristicConfig> {
        if !self.heuristics.is_empty() {
            return self.heuristics.clone();
        }
        [Algorithm::De, Algorithm::Pso, Algorithm::Ga]
            .iter()
            .map(|&a| HeuristicConfig::canonical(a, n, self.seed))
            .collect()
    }

    pub fn validate(&self) -> Result<(), CliError> {
        fn at(key: &'static str) -> impl Fn(boiler_core::Error) -> CliError {
            move |e| CliError::config(format!("at `{key}`: {e}"))
        }
        if self.plant.steps <= self.layout.lag_depth + 2 {
            return Err(CliError::config("at `plant.steps`: too few steps for the layout".into()));
        }
        self.plant.spec(self.seed).validate().map_err(at("plant"))?;
        self.layout.layout().validate().map_err(at("layout"))?;
        self.svr.validate().map_err(at("svr"))?;
        self.objective.validate().map_err(at("objective"))?;
        if !(self.solver.tol_kkt > 0.0) || self.solver.max_iter == 0 {
            return Err(CliError::config("at `solver`: need tol_kkt > 0 and max_iter >= 1".into()));
        }
        if self.compensation.window == 0 {
            return Err(CliError::config("at `compensation.window`: must be >= 1".into()));
        }
        if self.compensation.sweep_sizes.is_empty() || self.compensation.sweep_sizes.contains(&0) {
            return Err(CliError::config("at `compensation.sweep_sizes`: need sizes >= 1".into()));
        }
        if self.control.horizon == 0 {
            return Err(CliError::config("at `loop.horizon`: must be >= 1".into()));
        }
        if self.bench.problems == 0 || self.bench.stride == 0 {
            return Err(CliError::config("at `bench`: problems and stride must be >= 1".into()));
        }
        if !(self.bench.realtime_interval_s > 0.0) || !(self.bench.target_gap >= 0.0) {
            return Err(CliError::config("at `bench`: need realtime_interval_s > 0, target_gap >= 0".into()));
        }
        for (i, h) in self.heuristics.iter().enumerate() {
            h.validate().map_err(|e| CliError::config(format!("at `heuristics[{i}]`: {e}")))?;
        }
        Ok(())
    }
}
