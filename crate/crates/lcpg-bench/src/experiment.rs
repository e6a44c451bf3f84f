//! Experiment specs, the (method × seed) grid runner and CSV output.

use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use lcpg::drivers::{effective_passes, lcpg_run, IterateRecord, Mode, RunConfig, RunResult, StochasticParams, Subsolver, SvrgParams};
use lcpg::problem::{Composite, ConstrainedProblem};
use lcpg::prox::ProxTerm;
use lcpg::{Error, Result, Vector};
use serde::{Deserialize, Serialize};

use crate::data::{load_sparse_dataset, synthetic_logistic, SparseDataset};
use crate::logistic::{scad_constraint, Logistic};
use crate::qcqp::{gen_qcqp, QcqpRecipe};

/// SCAD-constrained logistic regression on synthetic or file data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub struct ScadSpec {
    #[serde(default = "d_samples")]
    pub samples: usize,
    #[serde(default = "d_dim")]
    pub d: usize,
    #[serde(default = "d_beta")]
    pub beta: f64,
    #[serde(default = "d_theta")]
    pub theta: f64,
    #[serde(default = "d_sigma")]
    pub sigma: f64,
    /// svmlight file; when absent, data is drawn with [`synthetic_logistic`].
    #[serde(default)]
    pub data_path: Option<PathBuf>,
    #[serde(default)]
    pub positive_class: Option<String>,
    /// Seed of the synthetic data when built outside a seed grid.
    #[serde(default)]
    pub seed: u64,
}

fn d_samples() -> usize {
    200
}
fn d_dim() -> usize {
    50
}
fn d_beta() -> f64 {
    2.0
}
fn d_theta() -> f64 {
    5.0
}
fn d_sigma() -> f64 {
    0.4
}

impl Default for ScadSpec {
    fn default() -> Self {
        ScadSpec {
            samples: d_samples(),
            d: d_dim(),
            beta: d_beta(),
            theta: d_theta(),
            sigma: d_sigma(),
            data_path: None,
            positive_class: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemSpec {
    Qcqp(QcqpRecipe),
    ScadLogistic(ScadSpec),
}

impl ProblemSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            ProblemSpec::Qcqp(_) => "qcqp",
            ProblemSpec::ScadLogistic(_) => "scad",
        }
    }

    /// Builds the instance for one grid seed. QCQP recipes and synthetic data take the seed;
    /// file data does not depend on it.
    pub fn build(&self, seed: u64) -> Result<ConstrainedProblem> {
        match self {
            ProblemSpec::Qcqp(r) => gen_qcqp(&QcqpRecipe { seed, ..r.clone() })?.to_problem(),
            ProblemSpec::ScadLogistic(s) => {
                let data = match &s.data_path {
                    Some(path) => load_sparse_dataset(path, s.positive_class.as_deref())
                        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
                    None => synthetic_logistic(s.samples, s.d, seed),
                };
                scad_problem(Arc::new(data), s.beta, s.theta, s.sigma)
            }
        }
    }

    /// Builds the instance with the seed stored in the spec.
    pub fn build_own(&self) -> Result<ConstrainedProblem> {
        self.build(match self {
            ProblemSpec::Qcqp(r) => r.seed,
            ProblemSpec::ScadLogistic(s) => s.seed,
        })
    }

    pub fn default_subsolver(&self) -> Subsolver {
        match self {
            ProblemSpec::Qcqp(_) => Subsolver::Auto,
            ProblemSpec::ScadLogistic(_) => Subsolver::ScadSpecial,
        }
    }
}

/// Logistic loss subject to `β‖x‖₁ − Σh(xⱼ) ≤ σd`, started at 0 with `η⁰ = σd/2`.
pub fn scad_problem(data: Arc<SparseDataset>, beta: f64, theta: f64, sigma: f64) -> Result<ConstrainedProblem> {
    let d = data.d;
    let f = Logistic::new(data);
    let l0 = f.lipschitz();
    let obj = Composite::new(Arc::new(f), ProxTerm::Zero, l0);
    let (con, eta) = scad_constraint(beta, theta, d, sigma)?;
    ConstrainedProblem::new(obj, vec![con], Vector::from_element(1, eta), Vector::from_element(1, eta / 2.0), Vector::zeros(d))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Lcpg,
    Lcspg,
    Lcsvrg,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Lcpg => "lcpg",
            Method::Lcspg => "lcspg",
            Method::Lcsvrg => "lcsvrg",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub struct MethodSpec {
    pub method: Method,
    /// Series name in outputs; defaults to the method name.
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub subsolver: Option<Subsolver>,
    /// Overrides the experiment's iteration budget.
    #[serde(default)]
    pub iterations: Option<usize>,
    /// Inexact LCPG with `εₖ = fraction · minᵢ δᵢᵏ`.
    #[serde(default)]
    pub inexact_fraction: Option<f64>,
    #[serde(default)]
    pub stochastic: Option<StochasticParams>,
    #[serde(default)]
    pub svrg: Option<SvrgParams>,
}

impl MethodSpec {
    pub fn new(method: Method) -> Self {
        MethodSpec { method, label: None, subsolver: None, iterations: None, inexact_fraction: None, stochastic: None, svrg: None }
    }

    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.method.name().to_string())
    }

    pub fn mode(&self) -> Mode {
        match self.method {
            Method::Lcpg => match self.inexact_fraction {
                Some(fraction) => Mode::Inexact { fraction },
                None => Mode::Exact,
            },
            Method::Lcspg => Mode::Stochastic(self.stochastic.unwrap_or(StochasticParams { batch: None, gamma: None, beta: None })),
            Method::Lcsvrg => Mode::Svrg(self.svrg.unwrap_or(SvrgParams { epoch: None, batch: None, gamma: None, beta: None })),
        }
    }

    pub fn run_config(&self, problem: &ProblemSpec, iterations: usize, seed: u64) -> RunConfig {
        RunConfig::new(self.mode(), self.iterations.unwrap_or(iterations))
            .with_seed(seed)
            .with_subsolver(self.subsolver.unwrap_or_else(|| problem.default_subsolver()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub struct ExperimentSpec {
    pub id: String,
    pub problem: ProblemSpec,
    pub methods: Vec<MethodSpec>,
    /// Number of seeds, starting at `first_seed`.
    #[serde(default = "d_seeds")]
    pub seeds: u64,
    #[serde(default)]
    pub first_seed: u64,
    #[serde(default = "d_iterations")]
    pub iterations: usize,
    /// Adds wall-clock columns; off keeps outputs byte-reproducible.
    #[serde(default)]
    pub timing: bool,
}

fn d_seeds() -> u64 {
    1
}
fn d_iterations() -> usize {
    300
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Config("experiment has no methods".into()));
        }
        if self.seeds == 0 {
            return Err(Error::Config("experiment has no seeds".into()));
        }
        if let ProblemSpec::Qcqp(r) = &self.problem {
            r.validate()?;
        }
        Ok(())
    }
}

/// One grid cell's summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub seed: u64,
    pub n: usize,
    pub m: usize,
    pub method: String,
    /// `ok`, or the error that stopped the run.
    pub status: String,
    pub final_objective: Option<f64>,
    pub final_dual_norm: Option<f64>,
    pub max_dual_norm: Option<f64>,
    /// Largest `ψᵢ(xᴷ) − ηᵢ` at the final iterate.
    pub final_violation: Option<f64>,
    pub effective_passes: Option<f64>,
    pub invariant_violations: usize,
    pub wall_ms: Option<f64>,
}

pub struct CellOutput {
    pub row: ResultRow,
    pub label: String,
    /// Components of the objective's finite sum, 1 for plain oracles.
    pub n_components: usize,
    pub run: Option<RunResult>,
}

pub struct ExperimentOutput {
    pub cells: Vec<CellOutput>,
}

impl ExperimentOutput {
    pub fn rows(&self) -> Vec<ResultRow> {
        self.cells.iter().map(|c| c.row.clone()).collect()
    }
}

fn run_cell(spec: &ExperimentSpec, method: &MethodSpec, seed: u64) -> CellOutput {
    let label = method.label();
    let mut row = ResultRow {
        experiment: spec.id.clone(),
        seed,
        n: 0,
        m: 0,
        method: label.clone(),
        status: "ok".into(),
        final_objective: None,
        final_dual_norm: None,
        max_dual_norm: None,
        final_violation: None,
        effective_passes: None,
        invariant_violations: 0,
        wall_ms: None,
    };
    let p = match spec.problem.build(seed) {
        Ok(p) => p,
        Err(e) => {
            row.status = format!("problem: {e}");
            return CellOutput { row, label, n_components: 1, run: None };
        }
    };
    row.n = p.dim();
    row.m = p.m();
    let n_components = p.objective.smooth.n_components().max(1);
    let cfg = RunConfig { timing: spec.timing, ..method.run_config(&spec.problem, spec.iterations, seed) };
    let start = Instant::now();
    let run = lcpg_run(&p, &cfg);
    if spec.timing {
        row.wall_ms = Some(start.elapsed().as_secs_f64() * 1e3);
    }
    match run {
        Ok(r) => {
            let x = r.final_x();
            row.final_objective = Some(p.objective.value(x));
            row.final_dual_norm = r.trace.last().map(|t| t.dual_norm);
            row.max_dual_norm = Some(r.max_dual_norm);
            row.final_violation =
                p.constraints.iter().enumerate().map(|(i, c)| c.value(x) - p.eta[i]).reduce(f64::max);
            row.effective_passes = Some(r.effective_passes(n_components));
            row.invariant_violations = r.violations.len();
            CellOutput { row, label, n_components, run: Some(r) }
        }
        Err(e) => {
            row.status = format!("failed: {e}");
            CellOutput { row, label, n_components, run: None }
        }
    }
}

/// Runs every (method, seed) cell on up to `workers` threads. Output order is
/// method-major, then seed, whatever the worker count.
pub fn run_experiment(spec: &ExperimentSpec, workers: usize) -> Result<ExperimentOutput> {
    spec.validate()?;
    let grid: Vec<(usize, u64)> =
        (0..spec.methods.len()).flat_map(|mi| (0..spec.seeds).map(move |s| (mi, spec.first_seed + s))).collect();
    let cell = |&(mi, seed): &(usize, u64)| run_cell(spec, &spec.methods[mi], seed);
    let cells = run_grid(&grid, workers.max(1), cell)?;
    Ok(ExperimentOutput { cells })
}

#[cfg(feature = "parallel")]
fn run_grid<F>(grid: &[(usize, u64)], workers: usize, f: F) -> Result<Vec<CellOutput>>
where
    F: Fn(&(usize, u64)) -> CellOutput + Sync + Send,
{
    use rayon::prelude::*;
    if workers == 1 {
        return Ok(grid.iter().map(f).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    Ok(pool.install(|| grid.par_iter().map(f).collect()))
}

#[cfg(not(feature = "parallel"))]
fn run_grid<F>(grid: &[(usize, u64)], _workers: usize, f: F) -> Result<Vec<CellOutput>>
where
    F: Fn(&(usize, u64)) -> CellOutput,
{
    Ok(grid.iter().map(f).collect())
}

/// Input of `lcpg solve`: a problem and optional run settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub struct SolveFile {
    pub problem: ProblemSpec,
    #[serde(default)]
    pub run: Option<RunConfig>,
}

/// Command-line settings that take precedence over the file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SolveOverrides {
    pub method: Option<Method>,
    pub subsolver: Option<Subsolver>,
    pub iterations: Option<usize>,
    pub seed: Option<u64>,
    pub timing: bool,
}

impl SolveFile {
    pub fn run_config(&self, o: &SolveOverrides) -> RunConfig {
        let mut cfg = self.run.clone().unwrap_or_else(|| {
            RunConfig::new(Mode::Exact, d_iterations()).with_subsolver(self.problem.default_subsolver())
        });
        if let Some(m) = o.method {
            cfg.mode = MethodSpec::new(m).mode();
        }
        if let Some(s) = o.subsolver {
            cfg.subsolver = s;
        }
        if let Some(k) = o.iterations {
            cfg.iterations = k;
        }
        if let Some(seed) = o.seed {
            cfg.seed = seed;
        }
        cfg.timing |= o.timing;
        cfg
    }
}

/// Deterministic text summary of a finished run.
pub fn run_summary(p: &ConstrainedProblem, cfg: &RunConfig, r: &RunResult) -> String {
    let x = r.final_x();
    let violation = p.constraints.iter().enumerate().map(|(i, c)| c.value(x) - p.eta[i]).fold(f64::NEG_INFINITY, f64::max);
    let n = p.objective.smooth.n_components().max(1);
    let rep = &r.report;
    let mut out = String::new();
    let mut line = |k: &str, v: String| out.push_str(&format!("{k:<22}{v}\n"));
    line("mode", format!("{:?}", cfg.mode));
    line("subsolver", format!("{:?}", cfg.subsolver));
    line("iterations", cfg.iterations.to_string());
    line("seed", cfg.seed.to_string());
    line("dimension", format!("{} (m = {})", p.dim(), p.m()));
    line("initial objective", format!("{:?}", r.trace.first().map_or(p.objective.value(&p.x0), |t| t.obj)));
    line("final objective", format!("{:?}", p.objective.value(x)));
    line("final max violation", if p.m() == 0 { "-".into() } else { format!("{violation:?}") });
    line("final dual norm", format!("{:?}", r.trace.last().map_or(0.0, |t| t.dual_norm)));
    line("max dual norm", format!("{:?}", r.max_dual_norm));
    line("effective passes", format!("{:?}", r.effective_passes(n)));
    line("output index", r.k_hat.to_string());
    line("kkt type", format!("{:?}{}", rep.kind, if rep.exact { " (exact residual)" } else { " (surrogate)" }));
    line("kkt stationarity", format!("{:?}", rep.stationarity));
    line("complementarity", format!("{:?}", rep.complementarity));
    if let Some(b) = rep.companion_distance_bound {
        line("companion distance", format!("{b:?}"));
    }
    line("invariant violations", r.violations.len().to_string());
    for v in &r.violations {
        out.push_str(&format!("  {v}\n"));
    }
    out
}

pub const TRACE_HEADER: [&str; 13] = [
    "k",
    "obj",
    "feas_margin_min",
    "step_norm",
    "kkt_surrogate",
    "kkt_exact",
    "dual_norm",
    "eps_k",
    "grad_evals_full",
    "grad_evals_stoch",
    "subsolver_iters",
    "time_ms",
    "effective_passes",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

/// Effective passes spent before iterate `k` was reached.
pub fn passes_before(trace: &[IterateRecord], k: usize, n: usize) -> f64 {
    match k.checked_sub(1).and_then(|j| trace.get(j)) {
        Some(t) => effective_passes(t.grad_evals_full, t.grad_evals_stoch, n),
        None => 0.0,
    }
}

/// Writes a run's trace. The trailing `effective_passes` column is the work spent
/// before row `k`'s iterate was available.
pub fn write_trace_csv<W: Write>(trace: &[IterateRecord], n_components: usize, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Config(format!("csv: {e}"));
    w.write_record(TRACE_HEADER).map_err(csv_err)?;
    for (k, t) in trace.iter().enumerate() {
        w.write_record([
            t.k.to_string(),
            format!("{:?}", t.obj),
            opt(Some(t.feas_margin_min()).filter(|v| v.is_finite())),
            format!("{:?}", t.step_norm),
            format!("{:?}", t.kkt_surrogate),
            opt(t.kkt_exact),
            format!("{:?}", t.dual_norm),
            format!("{:?}", t.eps_k),
            t.grad_evals_full.to_string(),
            t.grad_evals_stoch.to_string(),
            t.subsolver_iters.to_string(),
            opt(t.time_ms),
            format!("{:?}", passes_before(trace, k, n_components)),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Config(format!("csv: {e}")))?;
    Ok(())
}

pub fn write_results_csv<W: Write>(rows: &[ResultRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Config(format!("csv: {e}"));
    w.write_record([
        "experiment",
        "seed",
        "n",
        "m",
        "method",
        "status",
        "final_objective",
        "final_dual_norm",
        "max_dual_norm",
        "final_violation",
        "effective_passes",
        "invariant_violations",
        "wall_ms",
    ])
    .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.experiment.clone(),
            r.seed.to_string(),
            r.n.to_string(),
            r.m.to_string(),
            r.method.clone(),
            r.status.clone(),
            opt(r.final_objective),
            opt(r.final_dual_norm),
            opt(r.max_dual_norm),
            opt(r.final_violation),
            opt(r.effective_passes),
            r.invariant_violations.to_string(),
            opt(r.wall_ms),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Config(format!("csv: {e}")))?;
    Ok(())
}

/// Effective passes until the objective first drops to `target`, if it does.
pub fn passes_to_target(trace: &[IterateRecord], n_components: usize, target: f64) -> Option<f64> {
    trace.iter().position(|t| t.obj <= target).map(|k| passes_before(trace, k, n_components))
}

/// Targets matched across methods: `f* + frac·(ψ₀(x⁰) − f*)` where `f*` is the
/// worst of the per-method best objectives.
pub fn matched_target(traces: &[&[IterateRecord]], frac: f64) -> Option<f64> {
    let f0 = traces.first()?.first()?.obj;
    let worst_best = traces
        .iter()
        .map(|t| t.iter().map(|r| r.obj).fold(f64::INFINITY, f64::min))
        .fold(f64::NEG_INFINITY, f64::max);
    Some(worst_best + frac * (f0 - worst_best))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn qcqp_spec(methods: Vec<MethodSpec>) -> ExperimentSpec {
        let mut r = QcqpRecipe::new(10, 3, crate::qcqp::Convexity::Convex, 0);
        r.alpha = 0.0;
        ExperimentSpec { id: "t".into(), problem: ProblemSpec::Qcqp(r), methods, seeds: 2, first_seed: 0, iterations: 5, timing: false }
    }

    #[test]
    fn empty_method_list_is_rejected() {
        assert!(matches!(run_experiment(&qcqp_spec(vec![]), 1), Err(Error::Config(_))));
    }

    #[test]
    fn grid_order_and_worker_independence() {
        let spec = qcqp_spec(vec![MethodSpec::new(Method::Lcpg), MethodSpec { label: Some("pd".into()), subsolver: Some(Subsolver::Firstorder), ..MethodSpec::new(Method::Lcpg) }]);
        let a = run_experiment(&spec, 1).unwrap().rows();
        let b = run_experiment(&spec, 3).unwrap().rows();
        assert_eq!(a, b);
        let keys: Vec<(String, u64)> = a.iter().map(|r| (r.method.clone(), r.seed)).collect();
        assert_eq!(keys, vec![("lcpg".into(), 0), ("lcpg".into(), 1), ("pd".into(), 0), ("pd".into(), 1)]);
        for r in &a { assert!(r.status == "ok" && r.final_violation.unwrap() <= 1e-9, "{r:?}"); }
    }

    #[test]
    fn problem_spec_json() {
        let s: ProblemSpec = serde_json::from_str(r#"{"kind": "scad_logistic", "samples": 30, "d": 5}"#).unwrap();
        assert_eq!(s, ProblemSpec::ScadLogistic(ScadSpec { samples: 30, d: 5, ..ScadSpec::default() }));
        let q: ProblemSpec = serde_json::from_str(r#"{"kind": "qcqp", "n": 4, "m": 2, "convexity": "dc"}"#).unwrap();
        assert_eq!(q.kind(), "qcqp");
        assert!(serde_json::from_str::<ProblemSpec>(r#"{"kind": "qcqp", "n": 4, "m": 2, "convexity": "dc", "x": 1}"#).is_err());
        assert!(serde_json::from_str::<ProblemSpec>(r#"{"kind": "scad_logistic", "samplez": 3}"#).is_err());
    }

    #[test]
    fn passes_count_work_before_each_iterate() {
        let p = ProblemSpec::ScadLogistic(ScadSpec { samples: 20, d: 4, ..ScadSpec::default() }).build(0).unwrap();
        let cfg = RunConfig::new(Mode::Exact, 3).with_subsolver(Subsolver::ScadSpecial);
        let r = lcpg_run(&p, &cfg).unwrap();
        assert_eq!(passes_before(&r.trace, 0, 20), 0.0);
        assert_eq!(passes_before(&r.trace, 2, 20), 2.0);
        assert_eq!(passes_to_target(&r.trace, 20, f64::INFINITY), Some(0.0));
        assert_eq!(passes_to_target(&r.trace, 20, f64::NEG_INFINITY), None);
        let mut buf = Vec::new();
        write_trace_csv(&r.trace, 20, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert_eq!(text.lines().next().unwrap(), TRACE_HEADER.join(","));
    }
}
