use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use skflow_core::functional::solve_with;
use skflow_core::levy::{stochastic_integral, theta, StochasticExponential};
use skflow_core::malliavin::{closed_form_example, derivative};
use skflow_core::{
    skorokhod_distance_bound, skorokhod_distance_exact, CadlagPath, Error, LevySpec, MalliavinProbe, MarkovCoefficient,
    MatrixPath, SolverConfig,
};

use crate::config::{prepare_out_dir, ExperimentConfig};
use crate::{round12, sig12, usage};

pub const STUDIES: &[&str] = &[
    "convergence-vs-n",
    "metric-oracle-agreement",
    "theta-inequality",
    "malliavin-identity",
];

#[derive(Clone, Debug, Serialize)]
pub struct Criterion {
    pub name: String,
    pub pass: bool,
    pub value: f64,
    pub threshold: f64,
}

impl Criterion {
    fn at_most(name: &str, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            pass: value <= threshold,
            value: round12(value),
            threshold,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MeanError {
    pub n: u32,
    pub mean_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct StudyReport {
    pub study: String,
    pub seed: u64,
    pub samples: usize,
    /// Set when there was nothing to run.
    pub no_op: bool,
    pub criteria: Vec<Criterion>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub error_by_n: Vec<MeanError>,
    pub pass: bool,
}

/// Rows for the per-run CSV plus the criteria computed from them.
struct Outcome {
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
    criteria: Vec<Criterion>,
    error_by_n: Vec<MeanError>,
}

fn linear_driver() -> LevySpec {
    LevySpec::fixed_jumps(0.5, 1.0, 0.1)
}

fn unit() -> CadlagPath {
    CadlagPath::constant(1.0, &[1.0]).expect("constant path")
}

/// Runs the study named in `cfg` with `seed` and writes `rows.csv`,
/// `summary.json` and optionally `plot.gp` into `out`.
pub fn run_study(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<StudyReport> {
    if !STUDIES.contains(&cfg.study.as_str()) {
        return Err(usage(format!(
            "unknown study {:?}; known: {}",
            cfg.study,
            STUDIES.join(", ")
        )));
    }
    prepare_out_dir(out)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .context("worker pool")?;
    let n = cfg.samples;
    let outcome = pool.install(|| match cfg.study.as_str() {
        "convergence-vs-n" => convergence(n, seed, &cfg.solver),
        "metric-oracle-agreement" => metric_agreement(n, seed),
        "theta-inequality" => theta_inequality(n, seed),
        _ => malliavin_identity(n, seed, &cfg.solver),
    })?;
    let no_op = n == 0;
    let criteria = if no_op { Vec::new() } else { outcome.criteria };
    let report = StudyReport {
        study: cfg.study.clone(),
        seed,
        samples: n,
        no_op,
        pass: criteria.iter().all(|c| c.pass),
        criteria,
        error_by_n: outcome.error_by_n,
    };
    write_rows(&out.join("rows.csv"), &outcome.header, &outcome.rows)?;
    let json = serde_json::to_string_pretty(&report)?;
    fs::write(out.join("summary.json"), json + "\n")?;
    if cfg.gnuplot {
        fs::write(out.join("plot.gp"), gnuplot_script(&cfg.study, &outcome.header))?;
    }
    Ok(report)
}

pub fn default_out_dir(study: &str) -> PathBuf {
    PathBuf::from(format!("skflow-{study}"))
}

fn write_rows(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| path.display().to_string())?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

fn gnuplot_script(study: &str, header: &[&str]) -> String {
    let (x, y, log) = match study {
        "convergence-vs-n" => ("n", "error", true),
        "metric-oracle-agreement" => ("exact", "upper", false),
        "theta-inequality" => ("sample", "sup_integral_sq", false),
        _ => ("sample", "sup_diff", true),
    };
    let col = |name: &str| header.iter().position(|h| *h == name).map_or(1, |i| i + 1);
    let mut s = String::new();
    s.push_str("set datafile separator ','\n");
    s.push_str(&format!("set title '{study}'\nset xlabel '{x}'\nset ylabel '{y}'\n"));
    if log {
        s.push_str("set logscale y\n");
    }
    s.push_str(&format!(
        "plot 'rows.csv' using {}:{} skip 1 with points title '{y}'\n",
        col(x),
        col(y)
    ));
    s
}

/// `(n, breakpoints, error, dist_to_prev, gap_to_f, residual)`.
type IterRow = (u32, usize, f64, f64, f64, f64);

fn convergence(samples: usize, seed: u64, solver: &SolverConfig) -> Result<Outcome> {
    let lin = MarkovCoefficient::linear();
    let runs: Vec<Vec<IterRow>> = (0..samples as u64)
        .into_par_iter()
        .map(|i| -> Result<_> {
            let y = linear_driver().sample_path_stream(1.0, seed, i)?.path;
            let exact = StochasticExponential::new(&y, 1.0)?;
            let mut per_n = Vec::new();
            solve_with(&unit(), &unit(), &y, &lin, solver, |s| {
                let z = s.s();
                per_n.push((
                    s.n,
                    s.breakpoint_times.len(),
                    exact.sup_error(z.path()),
                    s.dist_to_prev,
                    s.gap_to_f,
                    s.residual,
                ));
            })?;
            Ok(per_n)
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let mut violations = 0usize;
    for (i, run) in runs.iter().enumerate() {
        for &(n, bp, err, dist, gap, res) in run {
            if gap > 2f64.powi(-(n as i32)) + 1e-12 {
                violations += 1;
            }
            rows.push(vec![
                i.to_string(),
                n.to_string(),
                bp.to_string(),
                sig12(err),
                sig12(dist),
                sig12(gap),
                sig12(res),
            ]);
        }
    }
    let common_n = runs.iter().map(|r| r.last().map_or(0, |p| p.0)).min().unwrap_or(0);
    let error_at = |run: &[IterRow], n: u32| run.iter().find(|p| p.0 == n).map_or(f64::NAN, |p| p.2);
    let mut error_by_n = Vec::new();
    for n in 1..=common_n {
        let mean = runs.iter().map(|r| error_at(r, n)).sum::<f64>() / runs.len() as f64;
        error_by_n.push(MeanError {
            n,
            mean_error: round12(mean),
        });
    }
    let mut worst_ratio = 0.0f64;
    for n in 6..common_n {
        let mean = runs.iter().map(|r| error_at(r, n + 1) / error_at(r, n)).sum::<f64>() / runs.len() as f64;
        worst_ratio = worst_ratio.max(mean);
    }
    let final_err = runs
        .iter()
        .map(|r| r.last().map_or(f64::INFINITY, |p| p.2))
        .fold(0.0, f64::max);
    Ok(Outcome {
        header: vec![
            "sample",
            "n",
            "breakpoints",
            "error",
            "dist_to_prev",
            "gap_to_f",
            "residual",
        ],
        rows,
        criteria: vec![
            Criterion::at_most("mean_error_ratio_past_5", worst_ratio, 0.75),
            Criterion::at_most("final_error", final_err, 1e-6),
            Criterion::at_most("gap_violations", violations as f64, 0.0),
        ],
        error_by_n,
    })
}

/// Step path on `[0, 1]` with up to six jumps on the `1e-3` lattice and
/// values in `[-2, 2]`.
pub fn random_step_path(rng: &mut ChaCha8Rng) -> CadlagPath {
    let k = rng.random_range(0..=6);
    let mut ticks: Vec<usize> = rand::seq::index::sample(rng, 999, k)
        .into_iter()
        .map(|i| i + 1)
        .collect();
    ticks.sort_unstable();
    let mut prev: f64 = rng.random_range(-2.0..=2.0);
    let initial = prev;
    let mut steps = Vec::with_capacity(k);
    for t in ticks {
        let mut v = rng.random_range(-2.0..=2.0);
        while v == prev {
            v = rng.random_range(-2.0..=2.0);
        }
        steps.push((t as f64 / 1000.0, v));
        prev = v;
    }
    CadlagPath::scalar_step(1.0, initial, &steps).expect("valid step path")
}

fn metric_agreement(samples: usize, seed: u64) -> Result<Outcome> {
    let results: Vec<[f64; 5]> = (0..samples as u64)
        .into_par_iter()
        .map(|i| -> Result<_> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i);
            let x = random_step_path(&mut rng);
            let y = random_step_path(&mut rng);
            let exact = skorokhod_distance_exact(&x, &y)?;
            let back = skorokhod_distance_exact(&y, &x)?;
            let bound = skorokhod_distance_bound(&x, &y, 2, 1e-2)?;
            Ok([
                exact,
                (exact - back).abs(),
                bound.lower,
                bound.upper,
                x.sup_distance(&y)?,
            ])
        })
        .collect::<Result<_>>()?;
    let mut bracket = 0usize;
    let mut above_sup = 0usize;
    let mut asym = 0.0f64;
    let mut rows = Vec::new();
    for (i, r) in results.iter().enumerate() {
        let [exact, sym, lower, upper, sup] = *r;
        if lower > exact + 1e-12 || exact > upper + 1e-12 {
            bracket += 1;
        }
        if exact > sup {
            above_sup += 1;
        }
        asym = asym.max(sym);
        rows.push(vec![
            i.to_string(),
            sig12(exact),
            sig12(lower),
            sig12(upper),
            sig12(sup),
        ]);
    }
    Ok(Outcome {
        header: vec!["sample", "exact", "lower", "upper", "sup"],
        rows,
        criteria: vec![
            Criterion::at_most("bracket_violations", bracket as f64, 0.0),
            Criterion::at_most("symmetry", asym, 1e-12),
            Criterion::at_most("above_sup_distance", above_sup as f64, 0.0),
        ],
        error_by_n: Vec::new(),
    })
}

fn theta_inequality(samples: usize, seed: u64) -> Result<Outcome> {
    let p = CadlagPath::scalar_step(1.0, 1.0, &[(0.2, -0.5), (0.45, 0.8), (0.7, -1.0), (0.9, 0.3)])?;
    let pm = MatrixPath::scalar(p.clone())?;
    let p_sup2 = p.sup_norm().powi(2);
    let results: Vec<[f64; 3]> = (0..samples as u64)
        .into_par_iter()
        .map(|i| -> Result<_> {
            let sample = linear_driver().sample_path_stream(1.0, seed, i)?;
            let v = sample.dominating_process()?;
            let int = stochastic_integral(&pm, &sample.path)?;
            Ok([
                int.sup_norm_before(1.0)?.powi(2),
                theta(&p, v.v(), 1.0)?.powi(2),
                p_sup2 * v.value_at(1.0)?.powi(2),
            ])
        })
        .collect::<Result<_>>()?;
    let n = results.len().max(1) as f64;
    let mut sums = [0.0; 3];
    let mut rows = Vec::new();
    for (i, r) in results.iter().enumerate() {
        for k in 0..3 {
            sums[k] += r[k];
        }
        rows.push(vec![i.to_string(), sig12(r[0]), sig12(r[1]), sig12(r[2])]);
    }
    let [lhs, th, pv] = sums.map(|s| s / n);
    let ratio = |a: f64, b: f64| {
        if b > 0.0 {
            a / b
        } else if a > 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    };
    Ok(Outcome {
        header: vec!["sample", "sup_integral_sq", "theta_sq", "sup_p_sq_v_sq"],
        rows,
        criteria: vec![
            Criterion::at_most("integral_over_theta", ratio(lhs, th), 1.05),
            Criterion::at_most("integral_over_4_pv", ratio(lhs, 4.0 * pv), 1.05),
        ],
        error_by_n: Vec::new(),
    })
}

fn malliavin_identity(samples: usize, seed: u64, solver: &SolverConfig) -> Result<Outcome> {
    let lin = MarkovCoefficient::linear();
    let results: Vec<(f64, f64, f64, bool, u32)> = (0..samples as u64)
        .into_par_iter()
        .map(|i| -> Result<_> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i);
            let r = rng.random_range(1..=9) as f64 / 10.0;
            let v = [-0.2, -0.05, 0.05, 0.2][rng.random_range(0..4)];
            let y = linear_driver().sample_path_stream(1.0, seed, i)?.path;
            let d = match derivative(&lin, &unit(), &unit(), &y, &MalliavinProbe::new(r, v), solver) {
                Ok(d) => d,
                Err(Error::FlaggedDerivative { derivative, .. }) => *derivative,
                Err(e) => return Err(e.into()),
            };
            let c = closed_form_example(&|x| x, &d.base.path, &d.shifted.path, &y, r, v)?;
            Ok((r, v, d.path.sup_distance(&c)?, d.converged(), d.base.last_n()))
        })
        .collect::<Result<_>>()?;
    let mut worst = 0.0f64;
    let mut flagged = 0usize;
    let mut rows = Vec::new();
    for (i, &(r, v, diff, conv, n)) in results.iter().enumerate() {
        worst = worst.max(diff);
        if !conv {
            flagged += 1;
        }
        rows.push(vec![
            i.to_string(),
            sig12(r),
            sig12(v),
            sig12(diff),
            conv.to_string(),
            n.to_string(),
        ]);
    }
    Ok(Outcome {
        header: vec!["sample", "r", "v", "sup_diff", "converged", "n"],
        rows,
        criteria: vec![
            Criterion::at_most("sup_difference", worst, 1e-8),
            Criterion::at_most("non_converged", flagged as f64, 0.0),
        ],
        error_by_n: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_step_paths_have_bounded_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let p = random_step_path(&mut rng);
            assert!(p.is_step());
            assert!(p.jumps().len() <= 6);
            assert!(p.sup_norm() <= 2.0);
        }
    }

    #[test]
    fn gnuplot_uses_existing_columns() {
        let s = gnuplot_script("convergence-vs-n", &["sample", "n", "breakpoints", "error"]);
        assert!(s.contains("using 2:4"));
    }
}
