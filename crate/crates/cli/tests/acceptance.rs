//! Acceptance suite. Each criterion prints one `criterion N: PASS|FAIL`
//! line (run with `--nocapture` to see them) and then asserts.

#[path = "../../core/tests/support/bundle_cases.rs"]
mod bundle_cases;
#[path = "../../core/tests/support/linear_draws.rs"]
mod linear_draws;
#[path = "../../core/tests/support/qp_oracle.rs"]
mod qp_oracle;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use boiler_core::baselines::{benchmark, Algorithm, BenchmarkOptions, BenchmarkReport, HeuristicConfig};
use boiler_core::compensation::sweep_window;
use boiler_core::controlloop::{run_closed_loop, score_against_log, LoopConfig};
use boiler_core::dataset::{Dataset, FeatureLayout, Partition};
use boiler_core::linalg::Matrix;
use boiler_core::objective::{build_qp, evaluate_objective, ObjectiveWeights};
use boiler_core::plantsim::{control_qp_suite, generate_dataset, DriftModel, PlantSpec, Policy};
use boiler_core::qpsolver::{random_qp, solve, SolverOptions, Status};
use boiler_core::svr::{evaluate, fit, fit_all, ModelBundle, SvrConfig};

const STEPS: usize = 13_000;
const LAYOUT_SEEDS: std::ops::RangeInclusive<u64> = 1..=10;
const CURVE_SEEDS: std::ops::RangeInclusive<u64> = 1..=5;
const TRAIN_SEED: u64 = 7;
const EVAL_SEEDS: [u64; 3] = [1001, 1002, 1003];
const SWEEP_SIZES: [usize; 16] = [1, 2, 3, 5, 10, 20, 30, 50, 75, 100, 150, 200, 300, 500, 1000, 2000];

fn line(n: &str, pass: bool, detail: &str) -> bool {
    println!("criterion {n}: {} {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}

fn rel_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

#[test]
fn criterion_1_qp_solver_matches_oracle() {
    let opts = SolverOptions::default();
    let started = Instant::now();
    let (mut worst_gap, mut worst_kkt, mut not_optimal) = (0.0f64, 0.0f64, 0);
    for seed in 0..200u64 {
        let p = random_qp(seed, 1 + (seed as usize * 7) % 30);
        let s = solve(&p, &opts).unwrap();
        if s.status != Status::Optimal {
            not_optimal += 1;
            continue;
        }
        let o = qp_oracle::dual_oracle(&p);
        worst_gap = worst_gap.max(rel_gap(s.objective, o.objective));
        let k = s.kkt_residuals;
        worst_kkt = worst_kkt.max(k.primal).max(k.dual).max(k.complementarity);
    }
    let secs = started.elapsed().as_secs_f64();
    let pass = not_optimal == 0 && worst_gap <= 1e-6 && worst_kkt <= 1e-8 && secs < 60.0;
    assert!(line(
        "1",
        pass,
        &format!("200 QPs, non-optimal {not_optimal}, max rel gap {worst_gap:.1e}, max KKT {worst_kkt:.1e}, {secs:.1} s")
    ));
}

#[test]
fn criterion_2_qp_assembly_equivalence() {
    let (mut form, mut grad, mut hess) = (0.0f64, 0.0f64, 0.0f64);
    for seed in 0..100 {
        let c = bundle_cases::case(seed);
        let n = c.x.len();
        let p = build_qp(&c.bundle, &c.comp, &c.m_vec, &c.weights, &bundle_cases::free(n)).unwrap();
        let v = |x: &[f64]| evaluate_objective(&c.bundle, &c.comp, &c.m_vec, &c.weights, x).unwrap();
        let direct = v(&c.x);
        let q = 0.5 * p.h.quad_form(&c.x) + p.f.iter().zip(&c.x).map(|(a, b)| a * b).sum::<f64>() + p.c;
        form = form.max((q - direct).abs() / (1.0 + direct.abs()));

        let g = p.gradient(&c.x);
        let gscale = g.iter().fold(1.0f64, |m, a| m.max(a.abs()));
        let h = 1e-4;
        for i in 0..n {
            let (mut a, mut b) = (c.x.clone(), c.x.clone());
            a[i] += h;
            b[i] -= h;
            grad = grad.max(((v(&a) - v(&b)) / (2.0 * h) - g[i]).abs() / gscale);
        }
        let hscale = p.h.max_abs().max(1.0);
        let h = 1e-2;
        for i in 0..n {
            for j in 0..n {
                let at = |si: f64, sj: f64| {
                    let mut y = c.x.clone();
                    y[i] += si * h;
                    y[j] += sj * h;
                    v(&y)
                };
                let fd = (at(1.0, 1.0) - at(1.0, -1.0) - at(-1.0, 1.0) + at(-1.0, -1.0)) / (4.0 * h * h);
                hess = hess.max((fd - p.h[(i, j)]).abs() / hscale);
            }
        }
    }
    let pass = form <= 1e-10 && grad <= 1e-6 && hess <= 1e-5;
    assert!(line(
        "2",
        pass,
        &format!("100 draws, form {form:.1e}, gradient {grad:.1e}, Hessian {hess:.1e}")
    ));
}

#[test]
fn criterion_3_svr_recovery() {
    let mut worst = 0.0f64;
    for seed in 0..5 {
        let dr = linear_draws::draw(seed, 300, 6);
        let cfg = SvrConfig { epsilon: 0.0, tol: 1e-8, max_passes: 20_000, ..Default::default() };
        let m = fit(&Matrix::from_rows(&dr.x), &dr.y, &cfg).unwrap();
        for (got, want) in m.raw_weights().iter().zip(&dr.w) {
            worst = worst.max((got - want).abs() / want.abs());
        }
    }
    let trials = 50u64;
    let wins = (0..trials)
        .filter(|&s| {
            let (svr, ls) = linear_draws::outlier_trial(s);
            svr <= ls
        })
        .count() as u64;
    let pass = worst <= 1e-3 && wins * 10 >= trials * 9;
    assert!(line(
        "3",
        pass,
        &format!("noiseless max rel weight error {worst:.1e}, SVR <= LS holdout MSE in {wins}/{trials}")
    ));
}

struct SeedRun {
    mse: [f64; 3],
    data: Dataset,
    c_bundle: ModelBundle,
}

fn seed_runs() -> &'static BTreeMap<u64, SeedRun> {
    static RUNS: OnceLock<BTreeMap<u64, SeedRun>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let cfg = SvrConfig::default();
        LAYOUT_SEEDS
            .map(|seed| {
                let data = generate_dataset(&PlantSpec::with_seed(seed), STEPS, &Policy::RandomWalk).unwrap();
                let mut mse = [0.0; 3];
                let mut c_bundle = None;
                for (k, layout) in [FeatureLayout::A, FeatureLayout::B, FeatureLayout::c(2)].into_iter().enumerate() {
                    let b = fit_all(&data, layout, &cfg).unwrap();
                    mse[k] = evaluate(&b, &data, Partition::Test).unwrap().temperature_mse;
                    c_bundle = Some(b);
                }
                (seed, SeedRun { mse, data, c_bundle: c_bundle.unwrap() })
            })
            .collect()
    })
}

#[test]
fn criterion_4_data_type_ordering() {
    let mut pass = true;
    let mut worst = (f64::INFINITY, f64::INFINITY);
    for (seed, r) in seed_runs() {
        let [a, b, c] = r.mse;
        let ab = (a - b) / a;
        let bc = (b - c) / b;
        worst = (worst.0.min(ab), worst.1.min(bc));
        if !(ab >= 0.05 && bc >= 0.05) {
            pass = false;
            println!("  seed {seed}: A {a:.2} B {b:.2} C {c:.2}");
        }
    }
    assert!(line(
        "4",
        pass,
        &format!(
            "{} seeds, min gap A>B {:.1}%, B>C {:.1}%",
            LAYOUT_SEEDS.count(),
            100.0 * worst.0,
            100.0 * worst.1
        )
    ));
}

#[test]
fn criterion_5_compensation_curve() {
    let runs = seed_runs();
    let spec = PlantSpec::default();
    let DriftModel::Random { mean_segment, .. } = spec.drift else {
        panic!("default plant has no random drift")
    };
    let tail = SWEEP_SIZES.iter().position(|&s| s == 10 * mean_segment).unwrap();
    let s50 = SWEEP_SIZES.iter().position(|&s| s == 50).unwrap();
    let temps: Vec<usize> = (0..spec.schema.target_temperature_names.len()).collect();
    let mut mean = vec![0.0; SWEEP_SIZES.len()];
    let mut pass = true;
    let mut min_gain = f64::INFINITY;
    for seed in CURVE_SEEDS {
        let r = &runs[&seed];
        let sw = sweep_window(&r.data, &r.c_bundle, &SWEEP_SIZES).unwrap();
        let d = sw.mean_delta(&temps);
        let base = temps.iter().map(|&i| sw.uncompensated_mse[i]).sum::<f64>() / temps.len() as f64;
        let gain = d[s50] / base;
        min_gain = min_gain.min(gain);
        let short_negative = SWEEP_SIZES.iter().zip(&d).filter(|(s, _)| **s <= 3).all(|(_, v)| *v < 0.0);
        if !short_negative || gain < 0.03 {
            pass = false;
            println!("  seed {seed}: S<=3 {:?}, S=50 gain {:.2}%", &d[..3], 100.0 * gain);
        }
        for (m, v) in mean.iter_mut().zip(&d) {
            *m += v / CURVE_SEEDS.count() as f64;
        }
    }
    let (peak_at, peak) = mean
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |b, (i, v)| if v > b.1 { (i, v) } else { b });
    let interior = peak > 0.0 && peak_at > 0 && peak_at + 1 < mean.len();
    let ratio = mean[tail].abs() / peak;
    pass &= interior && ratio <= 0.25;
    assert!(line(
        "5",
        pass,
        &format!(
            "peak at S={} ({peak:.2}), |dMSE| at S={} is {:.1}% of peak, min S=50 gain {:.2}%",
            SWEEP_SIZES[peak_at],
            SWEEP_SIZES[tail],
            100.0 * ratio,
            100.0 * min_gain
        )
    ));
}

/// IPC and DE on 50 plant QPs; PSO and GA on the first 10, since GA uses
/// its whole 5 s budget on every problem.
fn bench_reports() -> &'static (BenchmarkReport, BenchmarkReport) {
    static REPORTS: OnceLock<(BenchmarkReport, BenchmarkReport)> = OnceLock::new();
    REPORTS.get_or_init(|| {
        let problems = control_qp_suite(&PlantSpec::default(), 50, 20, &ObjectiveWeights::default()).unwrap();
        let n = problems[0].n();
        let opts = BenchmarkOptions {
            solver: SolverOptions::default(),
            realtime_interval_s: 5.0,
            target_gap: 5e-2,
            stop_at_target: true,
        };
        let de = benchmark(&problems, &[HeuristicConfig::canonical(Algorithm::De, n, 7)], &opts).unwrap();
        let slow = [Algorithm::Pso, Algorithm::Ga].map(|a| HeuristicConfig::canonical(a, n, 7));
        let rest = benchmark(&problems[..10], &slow, &opts).unwrap();
        (de, rest)
    })
}

#[test]
fn criterion_6_optimizer_benchmark() {
    let (de, rest) = bench_reports();
    print!("{}{}", de.table(), rest.table());
    let ipc = &de.rows[0];
    let de_row = &de.rows[1];
    let ipc10 = &rest.rows[0];
    let objective_ok =
        ipc.objective.mean <= de_row.objective.mean && rest.rows[1..].iter().all(|r| ipc10.objective.mean <= r.objective.mean);
    let de_ttt = de_row.mean_time_to_target_s;
    let time_ok = de_ttt.is_some_and(|t| ipc.time.mean <= t / 100.0);
    let nc = |label: &str| rest.rows.iter().find(|r| r.label == label).unwrap().not_converged;
    let (pso_nc, ga_nc) = (nc("PSO"), nc("GA"));
    let pass = objective_ok && time_ok && pso_nc && ga_nc;
    assert!(line(
        "6",
        pass,
        &format!(
            "IPC mean objective lowest: {objective_ok}; IPC {:.2e} s vs DE time-to-target {:?} s; N/C PSO {pso_nc}, GA {ga_nc}",
            ipc.time.mean, de_ttt
        )
    ));
}

#[test]
fn criterion_7_closed_loop_gains() {
    let bundle = &seed_runs()[&TRAIN_SEED].c_bundle;
    let mut pass = true;
    let mut details = Vec::new();
    for seed in EVAL_SEEDS {
        let spec = PlantSpec::with_seed(seed);
        let cfg = LoopConfig::new(bundle.clone());
        let report = run_closed_loop(&spec, &cfg).unwrap();
        let baseline = generate_dataset(&spec, cfg.warmup + cfg.horizon, &Policy::RandomWalk).unwrap();
        let d = score_against_log(&report, &baseline).unwrap();
        let a = &report.aggregates;
        let ok = a.steps == 500
            && d.temp_std_reduction_pct >= 30.0
            && d.o2_diff_reduction_pct >= 40.0
            && d.temp_rise_c > 0.0
            && d.o2_reduction_pct > 0.0
            && a.max_solve_time_s <= 0.05;
        pass &= ok;
        details.push(format!(
            "seed {seed}: std -{:.1}%, |dO2| -{:.1}%, T {:+.1} C, O2 -{:.1}%, max solve {:.1} ms",
            d.temp_std_reduction_pct,
            d.o2_diff_reduction_pct,
            d.temp_rise_c,
            d.o2_reduction_pct,
            1e3 * a.max_solve_time_s
        ));
    }
    assert!(line("7", pass, &details.join("; ")));
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| !p.file_name().unwrap().to_str().unwrap().contains(".timing."))
        .map(|p| (p.file_name().unwrap().to_str().unwrap().to_string(), std::fs::read(&p).unwrap()))
        .collect()
}

fn run_all(config: &Path, qp: &Path) {
    let commands: [&[&str]; 6] = [
        &["generate"],
        &["train", "--sweep-layouts"],
        &["sweep-compensation"],
        &["simulate"],
        &["bench-optimizers"],
        &["qp-solve", qp.to_str().unwrap()],
    ];
    for args in commands {
        let out = Command::new(env!("CARGO_BIN_EXE_boilerctl"))
            .arg("--config")
            .arg(config)
            .args(args)
            .output()
            .unwrap();
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn criterion_8_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let out: PathBuf = tmp.path().join("run");
    let config = tmp.path().join("run.toml");
    std::fs::write(
        &config,
        format!(
            "seed = 11\nout_dir = {:?}\n[plant]\nsteps = 2500\n[loop]\nhorizon = 60\nwarmup = 20\n\
             [bench]\nproblems = 3\n[[heuristics]]\nalgorithm = \"DE\"\npopulation = 30\n\
             max_evals = 3000\ntime_budget_s = 30.0\nseed = 5\n",
            out.to_str().unwrap()
        ),
    )
    .unwrap();
    let qp = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/identity.qp");
    run_all(&config, &qp);
    let first = snapshot(&out);
    run_all(&config, &qp);
    let second = snapshot(&out);
    let differing: Vec<&String> = first.keys().filter(|k| first.get(*k) != second.get(*k)).collect();
    let pass = first.len() >= 12 && first.keys().eq(second.keys()) && differing.is_empty();
    assert!(line(
        "8",
        pass,
        &format!("6 commands twice, {} non-timing files compared, differing {differing:?}", first.len())
    ));
}
