use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;
use skflow_cli::config::{prepare_out_dir, require_file, resolve_seed, ExperimentConfig};
use skflow_cli::study::{default_out_dir, run_study};
use skflow_cli::{exit_code, round12, sig12, usage, CriterionFailure};
use skflow_core::functional::solve_with;
use skflow_core::malliavin::{derivative, integrability_estimate, ProbeGrid};
use skflow_core::{
    skorokhod_distance_bound, skorokhod_distance_exact, CadlagPath, Error, LevySpec, MalliavinProbe, Registry,
    SolverConfig,
};

#[derive(Parser)]
#[command(name = "skflow", version, about = "Pathwise SDE solving on cadlag paths")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a Levy driver path.
    Simulate(SimulateArgs),
    /// Solve X = H + int g(s, G, X) dY.
    Solve(SolveArgs),
    /// Skorohod distance between two paths.
    Metric(MetricArgs),
    /// Malliavin derivative along one shift, or its integrability estimate.
    Malliavin(MalliavinArgs),
    /// Run a study from a JSON config.
    Study(StudyArgs),
}

#[derive(Args)]
struct SolverFlags {
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long, default_value_t = 40)]
    nmax: u32,
    #[arg(long, default_value_t = 1 << 22)]
    max_breakpoints: usize,
    /// Record Skorohod upper bounds between iterates.
    #[arg(long)]
    skorokhod: bool,
}

impl SolverFlags {
    fn config(&self) -> Result<SolverConfig> {
        let cfg = SolverConfig {
            tol: self.tol,
            n_max: self.nmax,
            max_breakpoints: self.max_breakpoints,
            report_skorokhod: self.skorokhod,
            ..SolverConfig::default()
        };
        cfg.validate().map_err(|e| usage(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Driver specification (JSON).
    #[arg(long)]
    spec: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    horizon: f64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 0)]
    stream: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also write the jump times and sizes.
    #[arg(long)]
    jumps: Option<PathBuf>,
    /// Also write m.csv, a.csv and v.csv (the dominating process) here.
    #[arg(long)]
    decompose: Option<PathBuf>,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    coef: String,
    #[arg(long = "H")]
    h: PathBuf,
    #[arg(long = "G")]
    g: PathBuf,
    #[arg(long = "Y")]
    y: PathBuf,
    #[command(flatten)]
    solver: SolverFlags,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    diag: Option<PathBuf>,
}

#[derive(Args)]
struct MetricArgs {
    #[arg(long)]
    x: PathBuf,
    #[arg(long)]
    y: PathBuf,
    /// Certified bracket instead of the exact value (any paths).
    #[arg(long)]
    bound: bool,
    #[arg(long, default_value_t = 2)]
    kinks: usize,
    #[arg(long, default_value_t = 1e-2)]
    grid: f64,
}

#[derive(Args)]
struct MalliavinArgs {
    #[arg(long)]
    coef: String,
    #[arg(long = "H")]
    h: PathBuf,
    #[arg(long = "G")]
    g: PathBuf,
    /// Driver path for a single probe.
    #[arg(long = "Y")]
    y: Option<PathBuf>,
    #[arg(long)]
    r: Option<f64>,
    #[arg(long)]
    v: Option<f64>,
    /// Derivative path output for a single probe.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Estimate E int int |D X_T|^2 on NR times and NV jump nodes.
    #[arg(long, num_args = 2, value_names = ["NR", "NV"])]
    grid: Option<Vec<usize>>,
    /// Driver specification for the estimate.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    paths: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    solver: SolverFlags,
}

#[derive(Args)]
struct StudyArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn read_path(p: &Path) -> Result<CadlagPath> {
    require_file(p)?;
    let f = File::open(p).with_context(|| p.display().to_string())?;
    CadlagPath::read_csv(f).map_err(|e| usage(format!("{}: {e}", p.display())))
}

fn write_path(p: &Path, path: &CadlagPath) -> Result<()> {
    let f = File::create(p).with_context(|| p.display().to_string())?;
    path.write_csv(BufWriter::new(f))?;
    Ok(())
}

fn coefficient(name: &str) -> Result<Box<dyn skflow_core::Coefficient>> {
    Registry::parse(name).map_err(|e| usage(e.to_string()))
}

fn read_spec(p: &Path) -> Result<LevySpec> {
    require_file(p)?;
    let text = fs::read_to_string(p)?;
    LevySpec::from_json(&text).map_err(|e| usage(format!("{}: {e}", p.display())))
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let spec = read_spec(&a.spec)?;
    let seed = resolve_seed(a.seed)?;
    let sample = spec
        .sample_path_stream(a.horizon, seed, a.stream)
        .map_err(|e| usage(e.to_string()))?;
    write_path(&a.out, &sample.path)?;
    if let Some(p) = a.jumps {
        let mut w = csv::Writer::from_path(&p)?;
        let mut header = vec!["time".to_string()];
        header.extend((0..spec.dim()).map(|i| format!("size{i}")));
        w.write_record(&header)?;
        for (t, size) in &sample.jumps {
            let mut rec = vec![t.to_string()];
            rec.extend(size.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
    }
    if let Some(dir) = a.decompose {
        prepare_out_dir(&dir)?;
        let (m, aa) = sample.decompose()?;
        write_path(&dir.join("m.csv"), &m)?;
        write_path(&dir.join("a.csv"), &aa)?;
        write_path(&dir.join("v.csv"), sample.dominating_process()?.v())?;
    }
    Ok(())
}

fn solve(a: SolveArgs) -> Result<()> {
    let coef = coefficient(&a.coef)?;
    let (h, g, y) = (read_path(&a.h)?, read_path(&a.g)?, read_path(&a.y)?);
    let cfg = a.solver.config()?;
    let sol = solve_with(&h, &g, &y, coef.as_ref(), &cfg, |_| {}).map_err(|e| usage(e.to_string()))?;
    write_path(&a.out, &sol.path)?;
    if let Some(p) = a.diag {
        let mut w = csv::Writer::from_path(&p)?;
        w.write_record(["n", "gap_to_f", "dist_to_prev", "residual", "skorokhod_upper"])?;
        for d in &sol.diagnostics {
            w.write_record([
                d.n.to_string(),
                sig12(d.gap_to_f),
                sig12(d.dist_to_prev),
                sig12(d.residual),
                d.skorokhod_upper.map_or_else(String::new, sig12),
            ])?;
        }
        w.flush()?;
    }
    if !sol.converged {
        return Err(CriterionFailure(format!(
            "not converged after n = {} ({:?}); last iterate written",
            sol.last_n(),
            sol.termination
        ))
        .into());
    }
    Ok(())
}

fn metric(a: MetricArgs) -> Result<()> {
    let (x, y) = (read_path(&a.x)?, read_path(&a.y)?);
    let sup = x.sup_distance(&y).map_err(|e| usage(e.to_string()))?;
    let out = if a.bound {
        let b = skorokhod_distance_bound(&x, &y, a.kinks, a.grid).map_err(|e| usage(e.to_string()))?;
        json!({ "lower": round12(b.lower), "upper": round12(b.upper), "sup_distance": round12(sup) })
    } else {
        let d = skorokhod_distance_exact(&x, &y).map_err(|e| usage(e.to_string()))?;
        json!({ "distance": round12(d), "sup_distance": round12(sup) })
    };
    println!("{out}");
    Ok(())
}

fn malliavin(a: MalliavinArgs) -> Result<()> {
    let coef = coefficient(&a.coef)?;
    let (h, g) = (read_path(&a.h)?, read_path(&a.g)?);
    let cfg = a.solver.config()?;
    if let Some(grid) = a.grid {
        let spec_path = a.spec.ok_or_else(|| usage("--grid needs --spec"))?;
        let spec = read_spec(&spec_path)?;
        let seed = resolve_seed(a.seed)?;
        let grid = ProbeGrid::new(h.horizon(), grid[0], &spec, grid[1]).map_err(|e| usage(e.to_string()))?;
        let est = integrability_estimate(coef.as_ref(), &h, &g, &spec, &grid, a.paths, seed, &cfg)?;
        println!(
            "{}",
            json!({
                "mean": round12(est.mean),
                "stderr": round12(est.stderr),
                "n_paths": est.n_paths,
                "flagged": est.flagged,
            })
        );
        if est.flagged > 0 {
            return Err(CriterionFailure(format!("{} probes did not converge", est.flagged)).into());
        }
        return Ok(());
    }
    let y = read_path(a.y.as_deref().ok_or_else(|| usage("a single probe needs --Y"))?)?;
    let r = a.r.ok_or_else(|| usage("a single probe needs --r"))?;
    let v = a.v.ok_or_else(|| usage("a single probe needs --v"))?;
    let out = a.out.ok_or_else(|| usage("a single probe needs --out"))?;
    match derivative(coef.as_ref(), &h, &g, &y, &MalliavinProbe::new(r, v), &cfg) {
        Ok(d) => write_path(&out, &d.path),
        Err(Error::FlaggedDerivative { derivative, .. }) => {
            write_path(&out, &derivative.path)?;
            Err(CriterionFailure("solver did not converge; derivative written but flagged".into()).into())
        }
        Err(e) => Err(usage(e.to_string())),
    }
}

fn study(a: StudyArgs) -> Result<()> {
    let cfg = ExperimentConfig::load(&a.config)?;
    let seed = resolve_seed(a.seed.or(cfg.seed))?;
    let out = a
        .out
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| default_out_dir(&cfg.study));
    let report = run_study(&cfg, seed, &out)?;
    for c in &report.criteria {
        println!(
            "{} {}: {} (threshold {})",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            sig12(c.value),
            sig12(c.threshold)
        );
    }
    if report.no_op {
        println!("no-op: 0 samples");
    }
    if !report.pass {
        return Err(CriterionFailure(format!("study {} failed", report.study)).into());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Solve(a) => solve(a),
        Command::Metric(a) => metric(a),
        Command::Malliavin(a) => malliavin(a),
        Command::Study(a) => study(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("skflow: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
