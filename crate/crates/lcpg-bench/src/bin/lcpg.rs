use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use lcpg::drivers::{lcpg_run, Subsolver};
use lcpg_bench::battery::{run_battery, Scale};
use lcpg_bench::experiment::{
    run_experiment, run_summary, write_results_csv, write_trace_csv, ExperimentSpec, Method, SolveFile, SolveOverrides,
};
use lcpg_bench::plot::{emit_plotdata, XAxis};

#[derive(Parser)]
#[command(name = "lcpg", version, about = "Level constrained proximal gradient solvers and benchmarks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum SubsolverArg {
    Auto,
    Ipm,
    Pd,
    Scad,
}

impl From<SubsolverArg> for Subsolver {
    fn from(s: SubsolverArg) -> Self {
        match s {
            SubsolverArg::Auto => Subsolver::Auto,
            SubsolverArg::Ipm => Subsolver::Ipm,
            SubsolverArg::Pd => Subsolver::Firstorder,
            SubsolverArg::Scad => Subsolver::ScadSpecial,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BenchKind {
    Qcqp,
    Scad,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve one problem file and print a summary.
    Solve {
        problem: PathBuf,
        #[arg(long, value_enum)]
        method: Option<Method>,
        #[arg(long, value_enum)]
        subsolver: Option<SubsolverArg>,
        /// Iteration budget.
        #[arg(short = 'K', long = "K", visible_alias = "k")]
        iterations: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Trace CSV destination.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Record wall-clock times in the trace.
        #[arg(long)]
        timing: bool,
    },
    /// Run an experiment grid.
    Bench {
        #[arg(value_enum)]
        kind: BenchKind,
        spec: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Directory for results.csv and traces/.
        #[arg(long, default_value = "bench-out")]
        out: PathBuf,
    },
    /// Run the invariant battery; exits with status 1 on any failure.
    Check {
        #[arg(long)]
        quick: bool,
    },
    /// Convert trace CSVs into long-format plot data.
    Plot {
        #[arg(required = true)]
        traces: Vec<PathBuf>,
        #[arg(long = "x", value_enum, default_value = "iter")]
        x: XAxis,
        #[arg(long)]
        out: PathBuf,
    },
}

type CliResult = Result<ExitCode, String>;

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>, String> {
    File::create(path).map(BufWriter::new).map_err(|e| format!("{}: {e}", path.display()))
}

fn solve(file: &Path, o: SolveOverrides, out: Option<PathBuf>) -> CliResult {
    let sf: SolveFile = read_json(file)?;
    let p = sf.problem.build_own().map_err(|e| e.to_string())?;
    let cfg = sf.run_config(&o);
    let r = lcpg_run(&p, &cfg).map_err(|e| e.to_string())?;
    print!("{}", run_summary(&p, &cfg, &r));
    if let Some(path) = out {
        let n = p.objective.smooth.n_components().max(1);
        write_trace_csv(&r.trace, n, create(&path)?).map_err(|e| e.to_string())?;
    }
    Ok(if r.violations.is_empty() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn bench(kind: BenchKind, spec: &Path, workers: usize, out: &Path) -> CliResult {
    let spec: ExperimentSpec = read_json(spec)?;
    let expected = match kind {
        BenchKind::Qcqp => "qcqp",
        BenchKind::Scad => "scad",
    };
    if spec.problem.kind() != expected {
        return Err(format!("spec describes a {} problem, not {expected}", spec.problem.kind()));
    }
    let output = run_experiment(&spec, workers).map_err(|e| e.to_string())?;
    let traces = out.join("traces");
    fs::create_dir_all(&traces).map_err(|e| format!("{}: {e}", traces.display()))?;
    for cell in &output.cells {
        if let Some(run) = &cell.run {
            let path = traces.join(format!("{}_{}_seed{}.csv", spec.id, cell.label, cell.row.seed));
            write_trace_csv(&run.trace, cell.n_components, create(&path)?).map_err(|e| e.to_string())?;
        }
    }
    let rows = output.rows();
    write_results_csv(&rows, create(&out.join("results.csv"))?).map_err(|e| e.to_string())?;
    let stdout = std::io::stdout();
    write_results_csv(&rows, stdout.lock()).map_err(|e| e.to_string())?;
    let failed = rows.iter().filter(|r| r.status != "ok").count();
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn check(quick: bool) -> CliResult {
    let outcomes = run_battery(if quick { Scale::Quick } else { Scale::Full });
    let stdout = std::io::stdout();
    let mut w = stdout.lock();
    for o in &outcomes {
        writeln!(w, "{o}").map_err(|e| e.to_string())?;
    }
    let failed = outcomes.iter().filter(|o| !o.pass).count();
    writeln!(w, "{} of {} checks passed", outcomes.len() - failed, outcomes.len()).map_err(|e| e.to_string())?;
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn plot(traces: &[PathBuf], x: XAxis, out: &Path) -> CliResult {
    let mut inputs = Vec::with_capacity(traces.len());
    for t in traces {
        let series = t.file_stem().map_or_else(|| t.display().to_string(), |s| s.to_string_lossy().into_owned());
        inputs.push((series, File::open(t).map_err(|e| format!("{}: {e}", t.display()))?));
    }
    let rows = emit_plotdata(inputs, x, create(out)?).map_err(|e| e.to_string())?;
    println!("wrote {rows} rows to {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Solve { problem, method, subsolver, iterations, seed, out, timing } => {
            let o = SolveOverrides { method, subsolver: subsolver.map(Into::into), iterations, seed, timing };
            solve(&problem, o, out)
        }
        Cmd::Bench { kind, spec, workers, out } => bench(kind, &spec, workers, &out),
        Cmd::Check { quick } => check(quick),
        Cmd::Plot { traces, x, out } => plot(&traces, x, &out),
    };
    match result {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
