use std::path::{Path, PathBuf};

use boiler_core::baselines::{benchmark, BenchmarkOptions};
use boiler_core::compensation::sweep_window;
use boiler_core::controlloop::{run_closed_loop, score_against_log, LoopConfig};
use boiler_core::dataset::{load_csv, Dataset, FeatureLayout, Partition};
use boiler_core::objective::QpProblem;
use boiler_core::plantsim::{control_qp_suite, generate_dataset, Policy};
use boiler_core::qpsolver::{solve, Status};
use boiler_core::svr::{evaluate, fit_all, AccuracyReport, ModelBundle};
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::rundir::RunDir;
use crate::CliError;

fn open(cfg: &RunConfig) -> Result<RunDir, CliError> {
    RunDir::create(&cfg.out_dir)
}

fn load_data(cfg: &RunConfig, data: Option<&Path>) -> Result<(Dataset, PathBuf), CliError> {
    let path = data.map_or_else(|| cfg.out_dir.join("data.csv"), Path::to_path_buf);
    let schema = cfg.plant.spec(cfg.seed).schema;
    let (ds, report) = load_csv(&path, &schema)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    if report.rows_dropped > 0 {
        eprintln!("{}: dropped {} malformed rows", path.display(), report.rows_dropped);
    }
    Ok((ds, path))
}

fn load_bundle(cfg: &RunConfig, bundle: Option<&Path>) -> Result<(ModelBundle, PathBuf), CliError> {
    let path = bundle.map_or_else(|| cfg.out_dir.join("bundle.json"), Path::to_path_buf);
    let b = ModelBundle::load_json(&path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    Ok((b, path))
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> boiler_core::Result<()>) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(|e| CliError::io(e.to_string()))?;
    Ok(buf)
}

pub fn generate(cfg: &RunConfig) -> Result<(), CliError> {
    let spec = cfg.plant.spec(cfg.seed);
    let ds = generate_dataset(&spec, cfg.plant.steps, &Policy::RandomWalk)?;
    let mut dir = open(cfg)?;
    dir.write_bytes("data.csv", &csv_bytes(|b| ds.write_csv(b))?)?;
    dir.write_json(
        "generate.json",
        &json!({
            "rows": ds.len(),
            "schema_hash": ds.schema.hash(),
            "split": ds.split,
            "plant": spec,
        }),
    )?;
    println!("wrote {} rows to {}", ds.len(), dir.path("data.csv").display());
    dir.finish("generate", cfg, json!({ "steps": cfg.plant.steps }))
}

fn accuracy_table(reports: &[AccuracyReport]) -> String {
    let mut s = format!(
        "{:<6} {:>12} {:>10} {:>12} {:>10}\n",
        "Type", "Temp MSE", "Temp MAPE", "O2 MSE", "O2 MAPE"
    );
    for r in reports {
        let name = match r.layout.lag_depth {
            0 => format!("{:?}", r.layout.data_type),
            l => format!("{:?}({l})", r.layout.data_type),
        };
        s += &format!(
            "{:<6} {:>12.4} {:>9.4}% {:>12.6} {:>9.4}%\n",
            name,
            r.temperature_mse,
            r.temperature_mape,
            r.o2_mse,
            r.o2_mape
        );
    }
    s
}

pub fn train(cfg: &RunConfig, data: Option<&Path>, sweep_layouts: bool) -> Result<(), CliError> {
    let (ds, path) = load_data(cfg, data)?;
    let layout = cfg.layout.layout();
    let bundle = fit_all(&ds, layout, &cfg.svr)?;
    if !bundle.all_converged() {
        eprintln!("warning: some models hit max_passes before tol");
    }
    let mut reports = Vec::new();
    if sweep_layouts {
        for l in [FeatureLayout::A, FeatureLayout::B, FeatureLayout::c(cfg.layout.lag_depth.max(1))] {
            if l != layout {
                reports.push(evaluate(&fit_all(&ds, l, &cfg.svr)?, &ds, Partition::Test)?);
            }
        }
    }
    reports.push(evaluate(&bundle, &ds, Partition::Test)?);
    reports.sort_by_key(|r| (r.layout.data_type as u8, r.layout.lag_depth));
    let mut dir = open(cfg)?;
    dir.write_json("bundle.json", &bundle)?;
    dir.write_json("accuracy.json", &json!({ "partition": "test", "reports": reports }))?;
    let table = accuracy_table(&reports);
    dir.write_bytes("accuracy.txt", table.as_bytes())?;
    print!("{table}");
    dir.finish(
        "train",
        cfg,
        json!({ "data": path, "sweep_layouts": sweep_layouts, "bundle_hash": bundle.hash() }),
    )
}

#[derive(Serialize)]
struct CurveSummary {
    sizes: Vec<usize>,
    temperature_uncompensated_mse: f64,
    temperature_delta_mse: Vec<f64>,
    temperature_delta_pct: Vec<f64>,
    o2_uncompensated_mse: f64,
    o2_delta_mse: Vec<f64>,
    o2_delta_pct: Vec<f64>,
}

pub fn sweep_compensation(cfg: &RunConfig, data: Option<&Path>, bundle: Option<&Path>) -> Result<(), CliError> {
    let (ds, dpath) = load_data(cfg, data)?;
    let (b, bpath) = load_bundle(cfg, bundle)?;
    let sw = sweep_window(&ds, &b, &cfg.compensation.sweep_sizes)?;
    let nt = b.n_temperatures;
    let temps: Vec<usize> = (0..nt).collect();
    let sides: Vec<usize> = (nt..b.models.len()).collect();
    let mean = |idx: &[usize]| idx.iter().map(|&i| sw.uncompensated_mse[i]).sum::<f64>() / idx.len() as f64;
    let (tb, ob) = (mean(&temps), mean(&sides));
    let td = sw.mean_delta(&temps);
    let od = sw.mean_delta(&sides);
    let summary = CurveSummary {
        sizes: sw.sizes.clone(),
        temperature_uncompensated_mse: tb,
        temperature_delta_pct: td.iter().map(|d| 100.0 * d / tb).collect(),
        temperature_delta_mse: td,
        o2_uncompensated_mse: ob,
        o2_delta_pct: od.iter().map(|d| 100.0 * d / ob).collect(),
        o2_delta_mse: od,
    };
    let mut dir = open(cfg)?;
    dir.write_bytes("compensation.csv", &csv_bytes(|b| sw.write_csv(b))?)?;
    dir.write_json("compensation.json", &json!({ "summary": summary, "per_target": sw }))?;
    println!("{:>6} {:>12} {:>9} {:>12} {:>9}", "S", "dMSE temp", "%", "dMSE O2", "%");
    for k in 0..summary.sizes.len() {
        println!(
            "{:>6} {:>12.4} {:>8.2}% {:>12.6} {:>8.2}%",
            summary.sizes[k],
            summary.temperature_delta_mse[k],
            summary.temperature_delta_pct[k],
            summary.o2_delta_mse[k],
            summary.o2_delta_pct[k]
        );
    }
    dir.finish("sweep-compensation", cfg, json!({ "data": dpath, "bundle": bpath }))
}

pub fn qp_solve(cfg: &RunConfig, file: &Path) -> Result<(), CliError> {
    let f = std::fs::File::open(file).map_err(|e| CliError::data(format!("{}: {e}", file.display())))?;
    let p = QpProblem::read_text(std::io::BufReader::new(f))
        .map_err(|e| CliError::data(format!("{}: {e}", file.display())))?;
    let s = solve(&p, &cfg.solver)?;
    let mut dir = open(cfg)?;
    dir.write_json("solution.json", &s)?;
    println!("status {:?}, objective {}, {} iterations", s.status, s.objective, s.iterations);
    println!("x = {:?}", s.x);
    dir.finish("qp-solve", cfg, json!({ "file": file }))?;
    if s.status != Status::Optimal {
        return Err(CliError::solver(format!("solver ended with status {:?}", s.status)));
    }
    Ok(())
}

pub fn bench_optimizers(cfg: &RunConfig) -> Result<(), CliError> {
    let spec = cfg.plant.spec(cfg.seed);
    let problems = control_qp_suite(&spec, cfg.bench.problems, cfg.bench.stride, &cfg.objective)?;
    let n = problems.first().map_or(0, QpProblem::n);
    let configs = cfg.heuristics_for(n);
    let opts = BenchmarkOptions {
        solver: cfg.solver,
        realtime_interval_s: cfg.bench.realtime_interval_s,
        target_gap: cfg.bench.target_gap,
        stop_at_target: cfg.bench.stop_at_target,
    };
    let report = benchmark(&problems, &configs, &opts)?;
    let mut dir = open(cfg)?;
    dir.write_json("benchmark.json", &json!({ "configs": configs, "report": report }))?;
    let table = report.table();
    dir.write_bytes("benchmark_table.timing.txt", table.as_bytes())?;
    print!("{table}");
    dir.finish("bench-optimizers", cfg, json!({ "problems": problems.len() }))
}

pub fn simulate(cfg: &RunConfig, bundle: Option<&Path>) -> Result<(), CliError> {
    let (b, bpath) = load_bundle(cfg, bundle)?;
    let spec = cfg.plant.spec(cfg.control.eval_seed);
    let lc = LoopConfig {
        bundle: b,
        weights: cfg.objective,
        constraints: cfg.constraints.source(&spec),
        solver: cfg.solver,
        compensation_window: cfg.compensation.window,
        fallback: cfg.control.fallback,
        horizon: cfg.control.horizon,
        warmup: cfg.control.warmup,
    };
    let mut report = run_closed_loop(&spec, &lc)?;
    let baseline = generate_dataset(&spec, lc.warmup + lc.horizon, &Policy::RandomWalk)?;
    let deltas = score_against_log(&report, &baseline)?;
    report.deltas = Some(deltas);
    let mut dir = open(cfg)?;
    dir.write_bytes("loop.csv", &csv_bytes(|w| report.write_csv_with(w, false))?)?;
    dir.write_bytes("baseline.csv", &csv_bytes(|w| baseline.write_csv(w))?)?;
    dir.write_json("loop_report.json", &report)?;
    let a = &report.aggregates;
    println!(
        "{} steps, {} fallbacks; temp std {:.3} C, |O1-O2| {:.4}, mean temp {:.2} C, mean O2 {:.4}",
        a.steps, a.fallback_steps, a.mean_temp_std, a.mean_o2_diff, a.mean_temp, a.mean_o2
    );
    println!(
        "vs baseline: temp std -{:.1}%, |O1-O2| -{:.1}%, temp {:+.2} C, O2 -{:.1}%",
        deltas.temp_std_reduction_pct, deltas.o2_diff_reduction_pct, deltas.temp_rise_c, deltas.o2_reduction_pct
    );
    dir.finish("simulate", cfg, json!({ "bundle": bpath, "eval_seed": cfg.control.eval_seed }))
}
