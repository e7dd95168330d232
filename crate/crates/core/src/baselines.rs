//! Population-based black-box optimizers (DE, PSO, GA) over the same QP,
//! with a quadratic penalty for the linear rows, and a benchmark harness
//! that compares them with the interior-point solver.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::clock::Stopwatch;
use crate::error::{Error, Result};
use crate::objective::QpProblem;
use crate::qpsolver::{kkt_residuals, solve, Multipliers, Solution, SolverOptions, Status};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Algorithm {
    De,
    Pso,
    Ga,
}

impl Algorithm {
    pub fn label(self) -> &'static str {
        match self {
            Algorithm::De => "DE",
            Algorithm::Pso => "PSO",
            Algorithm::Ga => "GA",
        }
    }

    fn parameters(self) -> &'static str {
        match self {
            Algorithm::De => "rand/1/bin F=0.5 CR=0.9",
            Algorithm::Pso => "constriction chi=0.7298 c1=c2=2.05 gbest",
            Algorithm::Ga => "tournament-2 BLX-0.5 gauss-mut sigma=5% rate=1/n elitism=1",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeuristicConfig {
    pub algorithm: Algorithm,
    pub population: usize,
    pub max_evals: usize,
    /// Wall-clock budget in seconds; whichever of this and `max_evals` runs
    /// out first ends the run.
    pub time_budget_s: f64,
    pub seed: u64,
    /// Penalty weight. `None` uses `1e3 * ||H||_F` (or 1e3 when H is zero).
    #[serde(default)]
    pub penalty_coeff: Option<f64>,
    /// Stop as soon as the best penalized value reaches this level.
    #[serde(default)]
    pub stop_at: Option<f64>,
}

impl HeuristicConfig {
    /// Population `10 n`, `1000` generations worth of evaluations and a
    /// five second budget.
    pub fn canonical(algorithm: Algorithm, n: usize, seed: u64) -> Self {
        let population = (10 * n).max(4);
        Self {
            algorithm,
            population,
            max_evals: 1000 * population,
            time_budget_s: 5.0,
            seed,
            penalty_coeff: None,
            stop_at: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.population < 4 {
            return Err(Error::Config(format!("population must be >= 4, got {}", self.population)));
        }
        if self.max_evals < self.population {
            return Err(Error::Config(format!(
                "max_evals ({}) must be >= population ({})",
                self.max_evals, self.population
            )));
        }
        if !(self.time_budget_s > 0.0) {
            return Err(Error::Config("time_budget_s must be > 0".into()));
        }
        if let Some(mu) = self.penalty_coeff {
            if !(mu > 0.0 && mu.is_finite()) {
                return Err(Error::Config(format!("penalty_coeff must be > 0, got {mu}")));
            }
        }
        Ok(())
    }
}

/// Best-so-far state at the end of one generation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationLog {
    pub evaluations: usize,
    pub elapsed_s: f64,
    pub best_penalized: f64,
    pub best_raw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeuristicRun {
    pub algorithm: Algorithm,
    /// `objective` is the raw QP value of `x`, without the penalty.
    /// `status` is always `MaxIter`.
    pub solution: Solution,
    pub best_penalized: f64,
    pub penalty_coeff: f64,
    pub evaluations: usize,
    pub generations: usize,
    pub trace: Vec<GenerationLog>,
}

impl HeuristicRun {
    /// Elapsed time when the best raw value first came within `gap` of
    /// `target`, read off the generation trace.
    pub fn time_to_within(&self, target: f64, gap: f64) -> Option<f64> {
        self.trace
            .iter()
            .find(|g| g.best_raw <= target + gap && g.best_penalized <= target + gap)
            .map(|g| g.elapsed_s)
    }
}

pub fn default_penalty(p: &QpProblem) -> f64 {
    let fro = p.h.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt();
    1e3 * if fro > 0.0 { fro } else { 1.0 }
}

struct Evaluator<'a> {
    p: &'a QpProblem,
    mu: f64,
    lower: Vec<f64>,
    upper: Vec<f64>,
    /// Sampling box: the bounds where finite, otherwise a unit interval
    /// next to the finite side.
    lo: Vec<f64>,
    hi: Vec<f64>,
    evals: usize,
    max_evals: usize,
    budget_s: f64,
    clock: Stopwatch,
    stop_at: Option<f64>,
    best_x: Vec<f64>,
    best_pen: f64,
    best_raw: f64,
}

impl<'a> Evaluator<'a> {
    fn new(p: &'a QpProblem, cfg: &HeuristicConfig) -> Self {
        let c = &p.constraints;
        let (lo, hi) = c
            .lower
            .iter()
            .zip(&c.upper)
            .map(|(&l, &u)| match (l.is_finite(), u.is_finite()) {
                (true, true) => (l, u),
                (true, false) => (l, l + 2.0),
                (false, true) => (u - 2.0, u),
                (false, false) => (-1.0, 1.0),
            })
            .unzip();
        Self {
            p,
            mu: cfg.penalty_coeff.unwrap_or_else(|| default_penalty(p)),
            lower: c.lower.clone(),
            upper: c.upper.clone(),
            lo,
            hi,
            evals: 0,
            max_evals: cfg.max_evals,
            budget_s: cfg.time_budget_s,
            clock: Stopwatch::start(),
            stop_at: cfg.stop_at,
            best_x: Vec::new(),
            best_pen: f64::INFINITY,
            best_raw: f64::INFINITY,
        }
    }

    fn n(&self) -> usize {
        self.lower.len()
    }

    fn range(&self, j: usize) -> f64 {
        self.hi[j] - self.lo[j]
    }

    fn clip(&self, x: &mut [f64]) {
        for (j, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lower[j], self.upper[j]);
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..self.n()).map(|j| rng.random_range(self.lo[j]..=self.hi[j])).collect()
    }

    fn exhausted(&self) -> bool {
        self.evals >= self.max_evals
            || self.clock.elapsed_s() >= self.budget_s
            || self.stop_at.is_some_and(|t| self.best_pen <= t)
    }

    /// Penalized value of an already clipped candidate.
    fn eval(&mut self, x: &[f64]) -> f64 {
        let c = &self.p.constraints;
        let raw = self.p.objective(x);
        let mut viol = 0.0;
        for r in &c.eq_rows {
            let d = r.activity(x) - r.rhs;
            viol += d * d;
        }
        for r in &c.ineq_rows {
            let d = (r.activity(x) - r.rhs).max(0.0);
            viol += d * d;
        }
        let pen = raw + self.mu * viol;
        self.evals += 1;
        if pen < self.best_pen {
            self.best_pen = pen;
            self.best_raw = raw;
            self.best_x = x.to_vec();
        }
        pen
    }

    fn log(&self, trace: &mut Vec<GenerationLog>) {
        trace.push(GenerationLog {
            evaluations: self.evals,
            elapsed_s: self.clock.elapsed_s(),
            best_penalized: self.best_pen,
            best_raw: self.best_raw,
        });
    }

    /// Random initial population, clipped and evaluated. Stops early only if
    /// the evaluation budget is smaller than the population.
    fn initial(&mut self, rng: &mut ChaCha8Rng, size: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut pop = Vec::with_capacity(size);
        let mut fit = Vec::with_capacity(size);
        for _ in 0..size {
            let x = self.sample(rng);
            fit.push(self.eval(&x));
            pop.push(x);
        }
        (pop, fit)
    }
}

/// Three distinct indices in `0..np`, all different from `i`.
fn pick3(rng: &mut ChaCha8Rng, np: usize, i: usize) -> [usize; 3] {
    let mut out = [i; 3];
    for k in 0..3 {
        loop {
            let r = rng.random_range(0..np);
            if r != i && !out[..k].contains(&r) {
                out[k] = r;
                break;
            }
        }
    }
    out
}

fn run_de(ev: &mut Evaluator, rng: &mut ChaCha8Rng, np: usize, trace: &mut Vec<GenerationLog>) -> usize {
    const F: f64 = 0.5;
    const CR: f64 = 0.9;
    let n = ev.n();
    let (mut pop, mut fit) = ev.initial(rng, np);
    ev.log(trace);
    let mut gens = 0;
    while !ev.exhausted() {
        for i in 0..np {
            if ev.exhausted() {
                break;
            }
            let [a, b, c] = pick3(rng, np, i);
            let jrand = rng.random_range(0..n);
            let mut trial = pop[i].clone();
            for j in 0..n {
                if j == jrand || rng.random::<f64>() < CR {
                    trial[j] = pop[a][j] + F * (pop[b][j] - pop[c][j]);
                }
            }
            ev.clip(&mut trial);
            let ft = ev.eval(&trial);
            if ft <= fit[i] {
                pop[i] = trial;
                fit[i] = ft;
            }
        }
        gens += 1;
        ev.log(trace);
    }
    gens
}

fn run_pso(ev: &mut Evaluator, rng: &mut ChaCha8Rng, np: usize, trace: &mut Vec<GenerationLog>) -> usize {
    const CHI: f64 = 0.7298;
    const C1: f64 = 2.05;
    const C2: f64 = 2.05;
    let n = ev.n();
    let (mut pos, fit) = ev.initial(rng, np);
    let vmax: Vec<f64> = (0..n).map(|j| ev.range(j)).collect();
    let mut vel: Vec<Vec<f64>> = (0..np)
        .map(|_| (0..n).map(|j| rng.random_range(-0.5..=0.5) * vmax[j]).collect())
        .collect();
    let mut pbest = pos.clone();
    let mut pfit = fit;
    ev.log(trace);
    let mut gens = 0;
    while !ev.exhausted() {
        let g = ev.best_x.clone();
        for i in 0..np {
            if ev.exhausted() {
                break;
            }
            for j in 0..n {
                let r1: f64 = rng.random();
                let r2: f64 = rng.random();
                let v = CHI * (vel[i][j] + C1 * r1 * (pbest[i][j] - pos[i][j]) + C2 * r2 * (g[j] - pos[i][j]));
                vel[i][j] = v.clamp(-vmax[j], vmax[j]);
                pos[i][j] += vel[i][j];
            }
            ev.clip(&mut pos[i]);
            let f = ev.eval(&pos[i]);
            if f <= pfit[i] {
                pfit[i] = f;
                pbest[i] = pos[i].clone();
            }
        }
        gens += 1;
        ev.log(trace);
    }
    gens
}

fn tournament(rng: &mut ChaCha8Rng, fit: &[f64]) -> usize {
    let a = rng.random_range(0..fit.len());
    let b = rng.random_range(0..fit.len());
    if fit[a] <= fit[b] {
        a
    } else {
        b
    }
}

fn run_ga(ev: &mut Evaluator, rng: &mut ChaCha8Rng, np: usize, trace: &mut Vec<GenerationLog>) -> usize {
    const ALPHA: f64 = 0.5;
    const SIGMA_FRAC: f64 = 0.05;
    let n = ev.n();
    let rate = 1.0 / n as f64;
    let (mut pop, mut fit) = ev.initial(rng, np);
    ev.log(trace);
    let mut gens = 0;
    while !ev.exhausted() {
        let elite = (0..np).min_by(|&a, &b| fit[a].total_cmp(&fit[b])).unwrap_or(0);
        let mut next = vec![pop[elite].clone()];
        let mut next_fit = vec![fit[elite]];
        while next.len() < np && !ev.exhausted() {
            let pa = &pop[tournament(rng, &fit)];
            let pb = &pop[tournament(rng, &fit)];
            let mut child: Vec<f64> = (0..n)
                .map(|j| {
                    let (lo, hi) = if pa[j] <= pb[j] { (pa[j], pb[j]) } else { (pb[j], pa[j]) };
                    let d = hi - lo;
                    let u: f64 = rng.random();
                    lo - ALPHA * d + u * (1.0 + 2.0 * ALPHA) * d
                })
                .collect();
            for (j, c) in child.iter_mut().enumerate() {
                if rng.random::<f64>() < rate {
                    let z: f64 = StandardNormal.sample(rng);
                    *c += SIGMA_FRAC * ev.range(j) * z;
                }
            }
            ev.clip(&mut child);
            next_fit.push(ev.eval(&child));
            next.push(child);
        }
        // a truncated last generation keeps the tail of the old one
        for i in next.len()..np {
            next.push(pop[i].clone());
            next_fit.push(fit[i]);
        }
        pop = next;
        fit = next_fit;
        gens += 1;
        ev.log(trace);
    }
    gens
}

/// Minimizes `V(x) + mu * (sum max(0, A_q x - b_q)^2 + sum (A_e x - b_e)^2)`
/// over the box. The reported objective is the raw `V` of the best
/// penalized candidate.
pub fn optimize_heuristic(p: &QpProblem, cfg: &HeuristicConfig) -> Result<HeuristicRun> {
    p.validate()?;
    cfg.validate()?;
    if cfg.algorithm == Algorithm::De && cfg.population < 4 {
        return Err(Error::Config("DE needs population >= 4".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut ev = Evaluator::new(p, cfg);
    let mut trace = Vec::new();
    let generations = match cfg.algorithm {
        Algorithm::De => run_de(&mut ev, &mut rng, cfg.population, &mut trace),
        Algorithm::Pso => run_pso(&mut ev, &mut rng, cfg.population, &mut trace),
        Algorithm::Ga => run_ga(&mut ev, &mut rng, cfg.population, &mut trace),
    };
    let x = ev.best_x.clone();
    let mult = Multipliers::zeros(p);
    let solution = Solution {
        objective: p.objective(&x),
        status: Status::MaxIter,
        iterations: generations,
        kkt_residuals: kkt_residuals(p, &x, &mult),
        solve_time_s: ev.clock.elapsed_s(),
        multipliers: mult,
        kkt_regularized: false,
        presolve: None,
        trace: Vec::new(),
        x,
    };
    Ok(HeuristicRun {
        algorithm: cfg.algorithm,
        solution,
        best_penalized: ev.best_pen,
        penalty_coeff: ev.mu,
        evaluations: ev.evals,
        generations,
        trace,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl Stats {
    pub fn of(v: &[f64]) -> Self {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        Self {
            mean,
            min: v.iter().copied().fold(f64::INFINITY, f64::min),
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            std: var.sqrt(),
        }
    }
}

/// One algorithm on one problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemLog {
    pub problem: usize,
    pub label: String,
    pub objective: f64,
    pub time_s: f64,
    pub evaluations: usize,
    pub max_violation: f64,
    /// Time to come within the benchmark gap of the interior-point optimum.
    pub time_to_target_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub label: String,
    pub parameters: String,
    pub time: Stats,
    pub objective: Stats,
    /// Mean time to target over problems; `None` when some problem never
    /// got there.
    pub mean_time_to_target_s: Option<f64>,
    /// Not converged within the real-time interval.
    pub not_converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub problems: usize,
    pub realtime_interval_s: f64,
    pub target_gap: f64,
    pub rows: Vec<BenchmarkRow>,
    pub logs: Vec<ProblemLog>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkOptions {
    pub solver: SolverOptions,
    /// A heuristic is marked N/C when it does not come within `target_gap`
    /// of the interior-point optimum within this many seconds.
    pub realtime_interval_s: f64,
    pub target_gap: f64,
    /// End each heuristic run once it is within `target_gap` of the
    /// interior-point optimum, so the time column is a convergence time.
    pub stop_at_target: bool,
}

impl Default for BenchmarkOptions {
    fn default() -> Self {
        Self {
            solver: SolverOptions::default(),
            realtime_interval_s: 5.0,
            target_gap: 5e-2,
            stop_at_target: false,
        }
    }
}

fn row(label: &str, parameters: String, logs: &[ProblemLog], interval: f64) -> BenchmarkRow {
    let times: Vec<f64> = logs.iter().map(|l| l.time_s).collect();
    let objs: Vec<f64> = logs.iter().map(|l| l.objective).collect();
    let ttt: Option<Vec<f64>> = logs.iter().map(|l| l.time_to_target_s).collect();
    let mean_ttt = ttt.map(|v| v.iter().sum::<f64>() / v.len() as f64);
    BenchmarkRow {
        label: label.to_string(),
        parameters,
        time: Stats::of(&times),
        objective: Stats::of(&objs),
        mean_time_to_target_s: mean_ttt,
        not_converged: mean_ttt.is_none_or(|t| t > interval),
    }
}

/// Runs the interior-point solver and every heuristic config on every
/// problem. Problems run one after another so wall times are not shared
/// between concurrent jobs.
pub fn benchmark(
    problems: &[QpProblem],
    configs: &[HeuristicConfig],
    opts: &BenchmarkOptions,
) -> Result<BenchmarkReport> {
    if problems.is_empty() {
        return Err(Error::Config("benchmark needs at least one problem".into()));
    }
    for c in configs {
        c.validate()?;
    }
    let mut optima = Vec::with_capacity(problems.len());
    let mut ipc_logs = Vec::with_capacity(problems.len());
    for (k, p) in problems.iter().enumerate() {
        let s = solve(p, &opts.solver)?;
        if s.status != Status::Optimal {
            return Err(Error::Solver(format!("problem {k}: interior point ended {:?}", s.status)));
        }
        optima.push(s.objective);
        ipc_logs.push(ProblemLog {
            problem: k,
            label: "IPC".into(),
            objective: s.objective,
            time_s: s.solve_time_s,
            evaluations: s.iterations,
            max_violation: p.constraints.max_violation(&s.x),
            time_to_target_s: Some(s.solve_time_s),
        });
    }
    let mut rows = vec![row(
        "IPC",
        format!("mehrotra+gondzio tol_kkt={:e}", opts.solver.tol_kkt),
        &ipc_logs,
        opts.realtime_interval_s,
    )];
    let mut logs = ipc_logs;
    for c in configs {
        let label = c.algorithm.label().to_string();
        let mut these = Vec::with_capacity(problems.len());
        for (k, p) in problems.iter().enumerate() {
            let mut c = c.clone();
            if opts.stop_at_target {
                c.stop_at = Some(optima[k] + opts.target_gap);
            }
            let r = optimize_heuristic(p, &c)?;
            these.push(ProblemLog {
                problem: k,
                label: label.clone(),
                objective: r.solution.objective,
                time_s: r.solution.solve_time_s,
                evaluations: r.evaluations,
                max_violation: p.constraints.max_violation(&r.solution.x),
                time_to_target_s: r.time_to_within(optima[k], opts.target_gap),
            });
        }
        let params = format!(
            "{} pop={} max_evals={} budget={}s",
            c.algorithm.parameters(),
            c.population,
            c.max_evals,
            c.time_budget_s
        );
        rows.push(row(&label, params, &these, opts.realtime_interval_s));
        logs.extend(these);
    }
    Ok(BenchmarkReport {
        problems: problems.len(),
        realtime_interval_s: opts.realtime_interval_s,
        target_gap: opts.target_gap,
        rows,
        logs,
    })
}

impl BenchmarkReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Aligned text table: algorithm, time, objective mean/min/max/std.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<6} {:>12} {:>12} {:>12} {:>12} {:>12}",
            "Algo", "Time (s)", "Mean", "Min", "Max", "Std"
        );
        for r in &self.rows {
            let time = if r.not_converged {
                "N/C".to_string()
            } else {
                format!("{:.6}", r.mean_time_to_target_s.unwrap_or(r.time.mean))
            };
            let _ = writeln!(
                out,
                "{:<6} {:>12} {:>12.6} {:>12.6} {:>12.6} {:>12.6}",
                r.label, time, r.objective.mean, r.objective.min, r.objective.max, r.objective.std
            );
        }
        out
    }
}
