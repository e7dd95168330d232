use boiler_core::controlloop::{
    run_closed_loop, score_against_log, Aggregates, ConstraintSource, LoopConfig, LoopReport,
};
use boiler_core::dataset::FeatureLayout;
use boiler_core::objective::ControlConstraints;
use boiler_core::plantsim::{generate_dataset, PlantSpec, PlantState, Policy};
use boiler_core::qpsolver::{solve, SolverOptions, Status};
use boiler_core::svr::{fit_all, LinearModel, ModelBundle, SvrConfig, TargetScaling};

fn fixed_scaling() -> TargetScaling {
    TargetScaling {
        temp_center: 1200.0,
        temp_scale: 20.0,
        o2_center: 3.5,
        o2_scale: 0.3,
    }
}

/// Per-step optimum of the true plant equations, replaying the report's
/// controls through a fresh plant.
fn oracle_objectives(spec: &PlantSpec, rep: &LoopReport) -> Vec<f64> {
    let mut plant = PlantState::new(spec).unwrap();
    let mut last = None;
    for u in &rep.warmup_controls {
        last = Some(plant.step(spec, u).unwrap());
    }
    let mut out = Vec::new();
    for r in &rep.records {
        let load = last.as_ref().unwrap().measurements[spec.load_channel];
        let cons = spec.default_constraints(load);
        let qp = plant.oracle_qp(spec, &rep.weights, &fixed_scaling(), &cons).unwrap();
        let s = solve(&qp, &SolverOptions::default()).unwrap();
        assert_eq!(s.status, Status::Optimal);
        out.push(s.objective);
        last = Some(plant.step(spec, &r.controls).unwrap());
    }
    out
}

#[test]
fn true_model_matches_ground_truth_oracle_each_step() {
    let spec = PlantSpec::default().noise_free().frozen();
    let bundle = spec.true_bundle(fixed_scaling()).unwrap();
    let mut cfg = LoopConfig::new(bundle);
    cfg.horizon = 40;
    cfg.warmup = 10;
    let rep = run_closed_loop(&spec, &cfg).unwrap();
    let oracle = oracle_objectives(&spec, &rep);
    for (r, o) in rep.records.iter().zip(&oracle) {
        assert!(
            (r.objective_achieved - o).abs() <= 1e-6,
            "step {}: achieved {} oracle {o}",
            r.step,
            r.objective_achieved
        );
    }
}

#[test]
fn fitted_model_close_to_oracle_on_average() {
    let train_spec = PlantSpec::default().noise_free();
    let ds = generate_dataset(&train_spec, 3000, &Policy::RandomWalk).unwrap();
    let mut bundle = fit_all(&ds, FeatureLayout::c(2), &SvrConfig { epsilon: 0.01, ..Default::default() }).unwrap();
    assert!(bundle.all_converged());
    bundle.scaling = fixed_scaling();

    let spec = PlantSpec::with_seed(99).noise_free().frozen();
    let mut cfg = LoopConfig::new(bundle);
    cfg.horizon = 60;
    cfg.warmup = 20;
    let rep = run_closed_loop(&spec, &cfg).unwrap();
    let oracle = oracle_objectives(&spec, &rep);
    let achieved: f64 = rep.records.iter().map(|r| r.objective_achieved).sum::<f64>() / oracle.len() as f64;
    let best: f64 = oracle.iter().sum::<f64>() / oracle.len() as f64;
    assert!(achieved >= best - 1e-9, "cannot beat the optimum: {achieved} < {best}");
    assert!(
        (achieved - best).abs() <= 0.05 * best.abs(),
        "achieved {achieved} vs oracle {best}"
    );
}

fn short_run(seed: u64) -> (PlantSpec, LoopReport, LoopConfig) {
    let spec = PlantSpec::with_seed(seed);
    let ds = generate_dataset(&spec, 2000, &Policy::RandomWalk).unwrap();
    let bundle = fit_all(&ds, FeatureLayout::c(2), &SvrConfig::default()).unwrap();
    let run_spec = PlantSpec::with_seed(seed + 500);
    let mut cfg = LoopConfig::new(bundle);
    cfg.horizon = 80;
    cfg.warmup = 30;
    let rep = run_closed_loop(&run_spec, &cfg).unwrap();
    (run_spec, rep, cfg)
}

#[test]
fn replaying_controls_reproduces_targets_bit_exactly() {
    let (spec, rep, cfg) = short_run(3);
    let controls = rep.applied_controls();
    let ds = generate_dataset(&spec, controls.len(), &Policy::Replay(controls)).unwrap();
    for r in &rep.records {
        let f = &ds.frames[r.step as usize];
        let targets: Vec<f64> = f.targets().collect();
        assert_eq!(targets, r.actual, "step {}", r.step);
    }
    assert_eq!(rep.records.len(), cfg.horizon);
}

#[test]
fn logged_residuals_are_raw_model_errors() {
    let (_, rep, cfg) = short_run(4);
    for r in &rep.records {
        for i in 0..r.actual.len() {
            assert_eq!(r.residuals[i], r.actual[i] - r.raw_predicted[i]);
        }
    }
    // with a full window the compensated prediction differs from the raw one
    let late = &rep.records[cfg.compensation_window.min(rep.records.len() - 1)];
    assert!(late.predicted.iter().zip(&late.raw_predicted).any(|(p, r)| p != r));
}

#[test]
fn applied_controls_are_feasible_and_fast() {
    let (_, rep, _) = short_run(5);
    for r in &rep.records {
        assert!(!r.fallback);
        assert_eq!(r.status, Status::Optimal);
        assert!(r.max_violation <= 1e-6, "step {}: {}", r.step, r.max_violation);
        assert!(r.solve_time_s <= 0.05, "step {}: {} s", r.step, r.solve_time_s);
    }
}

#[test]
fn aggregates_recompute_from_records() {
    let (_, rep, _) = short_run(6);
    assert_eq!(Aggregates::from_records(&rep.records, rep.n_temperatures), rep.aggregates);
}

#[test]
fn runs_are_deterministic_apart_from_timing() {
    let (_, mut a, _) = short_run(7);
    let (_, mut b, _) = short_run(7);
    for r in a.records.iter_mut().chain(b.records.iter_mut()) {
        r.solve_time_s = 0.0;
    }
    a.aggregates.max_solve_time_s = 0.0;
    b.aggregates.max_solve_time_s = 0.0;
    assert_eq!(a, b);
}

#[test]
fn zero_weight_models_yield_a_feasible_step() {
    let spec = PlantSpec::default();
    let schema = &spec.schema;
    let layout = FeatureLayout::B;
    let width = layout.width(schema);
    let models = schema
        .target_names()
        .map(|t| LinearModel::from_raw(t, Some(layout), schema.n_controls(), vec![0.0; width], 1.0))
        .collect();
    let bundle = ModelBundle {
        schema_hash: schema.hash(),
        layout,
        svr: SvrConfig::default(),
        n_temperatures: schema.n_temperatures(),
        scaling: fixed_scaling(),
        models,
    };
    let mut cfg = LoopConfig::new(bundle);
    cfg.horizon = 1;
    cfg.warmup = 1;
    let (lo, hi): (Vec<f64>, Vec<f64>) = schema.control_bounds.iter().copied().unzip();
    cfg.constraints = ConstraintSource::Fixed(ControlConstraints::boxed(lo, hi));
    let rep = run_closed_loop(&spec, &cfg).unwrap();
    assert_eq!(rep.records.len(), 1);
    assert!(rep.records[0].max_violation == 0.0);
    assert_eq!(rep.records[0].status, Status::Optimal);
}

#[test]
fn schema_mismatch_aborts() {
    let spec = PlantSpec::default();
    let mut bundle = spec.true_bundle(fixed_scaling()).unwrap();
    bundle.schema_hash = "other".into();
    assert!(run_closed_loop(&spec, &LoopConfig::new(bundle)).is_err());
}

/// Mean of per-row statistics, parsed back from CSV text.
fn csv_quality(text: &str, temp_cols: &[String], o2_cols: &[String]) -> [f64; 4] {
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let header = rd.headers().unwrap().clone();
    let idx = |name: &str| header.iter().position(|h| h == name).unwrap();
    let ti: Vec<usize> = temp_cols.iter().map(|c| idx(c)).collect();
    let oi: Vec<usize> = o2_cols.iter().map(|c| idx(c)).collect();
    let mut sums = [0.0; 4];
    let mut n = 0.0;
    for rec in rd.records() {
        let rec = rec.unwrap();
        let t: Vec<f64> = ti.iter().map(|&i| rec[i].parse().unwrap()).collect();
        let o: Vec<f64> = oi.iter().map(|&i| rec[i].parse().unwrap()).collect();
        let m = t.iter().sum::<f64>() / t.len() as f64;
        let sd = (t.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / t.len() as f64).sqrt();
        sums[0] += sd;
        sums[1] += (o[0] - o[1]).abs();
        sums[2] += m;
        sums[3] += (o[0] + o[1]) / 2.0;
        n += 1.0;
    }
    sums.map(|s| s / n)
}

#[test]
fn deltas_match_recompute_from_csv_logs() {
    let (spec, rep, cfg) = short_run(8);
    let base = generate_dataset(&spec, cfg.warmup + cfg.horizon, &Policy::RandomWalk).unwrap();
    let d = score_against_log(&rep, &base).unwrap();

    let mut run_csv = Vec::new();
    rep.write_csv(&mut run_csv).unwrap();
    let names = &spec.schema;
    let actual = |ns: &[String]| ns.iter().map(|n| format!("actual_{n}")).collect::<Vec<_>>();
    let ours = csv_quality(
        std::str::from_utf8(&run_csv).unwrap(),
        &actual(&names.target_temperature_names),
        &actual(&names.target_o2_names),
    );
    // baseline restricted to the controlled steps
    let mut controlled = base.clone();
    controlled.frames.drain(..cfg.warmup);
    controlled.split = boiler_core::dataset::Split::default_for(controlled.frames.len()).unwrap();
    let mut base_csv = Vec::new();
    controlled.write_csv(&mut base_csv).unwrap();
    let theirs = csv_quality(
        std::str::from_utf8(&base_csv).unwrap(),
        &names.target_temperature_names,
        &names.target_o2_names,
    );
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * (1.0 + b.abs());
    assert!(close(d.temp_std_reduction_pct, 100.0 * (theirs[0] - ours[0]) / theirs[0]));
    assert!(close(d.o2_diff_reduction_pct, 100.0 * (theirs[1] - ours[1]) / theirs[1]));
    assert!(close(d.temp_rise_c, ours[2] - theirs[2]));
    assert!(close(d.o2_reduction_pct, 100.0 * (theirs[3] - ours[3]) / theirs[3]));
}
