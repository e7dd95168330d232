//! Browser front end. A [`Demo`] logs the synthetic plant and trains a C(2)
//! bundle once; the page then sweeps the compensation window and runs the
//! closed loop against it. [`solve_qp`] works on its own.
//!
//! The `session` functions return JSON strings and plain errors so they can
//! be tested natively; the `#[wasm_bindgen]` items only wrap them.

use wasm_bindgen::prelude::*;

pub mod session {
    use boiler_core::compensation::sweep_window;
    use boiler_core::controlloop::{quality, run_closed_loop, score_against_log, LoopConfig};
    use boiler_core::dataset::{Dataset, FeatureLayout, Partition};
    use boiler_core::objective::{ObjectiveWeights, QpProblem};
    use boiler_core::plantsim::{generate_dataset, PlantSpec, Policy};
    use boiler_core::qpsolver::{solve, SolverOptions};
    use boiler_core::svr::{evaluate, fit_all, AccuracyReport, ModelBundle, SvrConfig};
    use serde::Serialize;
    use serde_json::json;

    pub type Result<T> = std::result::Result<T, String>;

    fn text<E: std::fmt::Display>(e: E) -> String {
        e.to_string()
    }

    pub struct Session {
        pub data: Dataset,
        pub bundle: ModelBundle,
        pub accuracy: AccuracyReport,
    }

    impl Session {
        pub fn train(seed: u64, steps: usize) -> Result<Self> {
            let spec = PlantSpec::with_seed(seed);
            let data = generate_dataset(&spec, steps, &Policy::RandomWalk).map_err(text)?;
            let bundle = fit_all(&data, FeatureLayout::c(2), &SvrConfig::default()).map_err(text)?;
            let accuracy = evaluate(&bundle, &data, Partition::Test).map_err(text)?;
            Ok(Self { data, bundle, accuracy })
        }

        pub fn summary(&self) -> Result<String> {
            let s = &self.data.split;
            serde_json::to_string(&json!({
                "rows": self.data.len(),
                "split": [s.train_end, s.val_end - s.train_end, self.data.len() - s.val_end],
                "targets": self.bundle.models.iter().map(|m| &m.target).collect::<Vec<_>>(),
                "accuracy": self.accuracy,
            }))
            .map_err(text)
        }

        /// Mean validation MSE change per window size, temperatures and O2
        /// sides separately; positive means compensation helped.
        pub fn compensation_curve(&self, sizes: &[usize]) -> Result<String> {
            let sw = sweep_window(&self.data, &self.bundle, sizes).map_err(text)?;
            let nt = self.bundle.n_temperatures;
            let temps: Vec<usize> = (0..nt).collect();
            let sides: Vec<usize> = (nt..self.bundle.models.len()).collect();
            let base = |idx: &[usize]| idx.iter().map(|&i| sw.uncompensated_mse[i]).sum::<f64>() / idx.len() as f64;
            serde_json::to_string(&json!({
                "sizes": sw.sizes,
                "temperature": { "base": base(&temps), "delta": sw.mean_delta(&temps) },
                "o2": { "base": base(&sides), "delta": sw.mean_delta(&sides) },
            }))
            .map_err(text)
        }

        pub fn closed_loop(&self, eval_seed: u64, horizon: usize, weights: ObjectiveWeights, window: usize) -> Result<String> {
            let spec = PlantSpec::with_seed(eval_seed);
            let mut cfg = LoopConfig::new(self.bundle.clone());
            cfg.weights = weights;
            cfg.horizon = horizon;
            cfg.compensation_window = window;
            let report = run_closed_loop(&spec, &cfg).map_err(text)?;
            let baseline = generate_dataset(&spec, cfg.warmup + cfg.horizon, &Policy::RandomWalk).map_err(text)?;
            let deltas = score_against_log(&report, &baseline).map_err(text)?;
            let nz = report.n_temperatures;
            let ours: Vec<Quality> = report.records.iter().map(|r| Quality::of(&r.actual[..nz], &r.actual[nz..])).collect();
            let theirs: Vec<Quality> = baseline.frames[cfg.warmup..]
                .iter()
                .map(|f| Quality::of(&f.temperatures, &f.o2))
                .collect();
            serde_json::to_string(&json!({
                "aggregates": report.aggregates,
                "deltas": deltas,
                "controlled": ours,
                "baseline": theirs,
            }))
            .map_err(text)
        }
    }

    #[derive(Serialize)]
    pub struct Quality {
        pub temp_std: f64,
        pub o2_diff: f64,
        pub temp_mean: f64,
        pub o2_mean: f64,
    }

    impl Quality {
        fn of(temps: &[f64], o2: &[f64]) -> Self {
            let (temp_std, o2_diff, temp_mean, o2_mean) = quality(temps, o2);
            Self { temp_std, o2_diff, temp_mean, o2_mean }
        }
    }

    /// Solves a QP given in the text format and returns the solution JSON.
    pub fn solve_qp(problem: &str) -> Result<String> {
        let p = QpProblem::read_text(problem.as_bytes()).map_err(text)?;
        let s = solve(&p, &SolverOptions::default()).map_err(text)?;
        serde_json::to_string(&s).map_err(text)
    }
}

fn js(e: String) -> JsError {
    JsError::new(&e)
}

#[wasm_bindgen]
pub struct Demo(session::Session);

#[wasm_bindgen]
impl Demo {
    /// Logs `steps` random-walk steps of the plant with `seed` and trains
    /// the predictors.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, steps: u32) -> Result<Demo, JsError> {
        session::Session::train(seed.into(), steps as usize).map(Demo).map_err(js)
    }

    pub fn summary(&self) -> Result<String, JsError> {
        self.0.summary().map_err(js)
    }

    #[wasm_bindgen(js_name = compensationCurve)]
    pub fn compensation_curve(&self, sizes: Vec<u32>) -> Result<String, JsError> {
        let sizes: Vec<usize> = sizes.into_iter().map(|s| s as usize).collect();
        self.0.compensation_curve(&sizes).map_err(js)
    }

    #[wasm_bindgen(js_name = closedLoop)]
    #[allow(clippy::too_many_arguments)]
    pub fn closed_loop(
        &self,
        eval_seed: u32,
        horizon: u32,
        lambda_var: f64,
        lambda_diff: f64,
        lambda_temp: f64,
        lambda_o2: f64,
        window: u32,
    ) -> Result<String, JsError> {
        let w = boiler_core::objective::ObjectiveWeights { lambda_var, lambda_diff, lambda_temp, lambda_o2 };
        self.0.closed_loop(eval_seed.into(), horizon as usize, w, window as usize).map_err(js)
    }
}

#[wasm_bindgen(js_name = solveQp)]
pub fn solve_qp(problem: &str) -> Result<String, JsError> {
    session::solve_qp(problem).map_err(js)
}
