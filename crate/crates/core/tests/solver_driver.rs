use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use skflow_core::coefficient::random_path;
use skflow_core::functional::solve_with;
use skflow_core::levy::{is_nondecreasing, stochastic_integral, theta};
use skflow_core::malliavin::derivative;
use skflow_core::{
    reference_integrate, solve, CadlagPath, Error, JumpLaw, LevySpec, MalliavinProbe, MarkovCoefficient, MatrixPath,
    Registry, SolverConfig,
};

fn unit() -> CadlagPath {
    CadlagPath::constant(1.0, &[1.0]).unwrap()
}

fn loose() -> SolverConfig {
    SolverConfig {
        tol: 1e-4,
        ..SolverConfig::default()
    }
}

const LIPSCHITZ: &[&str] = &["linear", "affine(0.5,-1)", "sin", "sin-zeta", "indicator(0.5)"];

fn problem(seed: u64) -> (CadlagPath, CadlagPath, CadlagPath) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = random_path(&mut rng, 1, 1.0);
    let g = random_path(&mut rng, 1, 1.0);
    let spec = LevySpec::new(vec![0.3], 2.0, JumpLaw::Normal { mean: 0.0, std: 0.3 }).unwrap();
    let y = spec.sample_path(1.0, seed).unwrap().path;
    (h, g, y)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn freezing_gap_stays_below_threshold(seed in 0u64..1000, c in 0usize..5) {
        let (h, g, y) = problem(seed);
        let coef = Registry::parse(LIPSCHITZ[c]).unwrap();
        let mut worst = f64::NEG_INFINITY;
        solve_with(&h, &g, &y, coef.as_ref(), &loose(), |s| {
            worst = worst.max(s.gap_to_f - 2f64.powi(-(s.n as i32)));
        }).unwrap();
        prop_assert!(worst <= 1e-12);
    }

    #[test]
    fn solves_are_deterministic(seed in 0u64..1000, c in 0usize..5) {
        let (h, g, y) = problem(seed);
        let coef = Registry::parse(LIPSCHITZ[c]).unwrap();
        let a = solve(&h, &g, &y, coef.as_ref(), &loose()).unwrap();
        let b = solve(&h, &g, &y, coef.as_ref(), &loose()).unwrap();
        prop_assert_eq!(a.path, b.path);
        prop_assert_eq!(a.diagnostics, b.diagnostics);
    }

    #[test]
    fn solutions_are_adapted(seed in 0u64..1000, c in 0usize..5, t in 0.05f64..0.95) {
        let (h, g, y) = problem(seed);
        let coef = Registry::parse(LIPSCHITZ[c]).unwrap();
        let cfg = loose();
        let full = solve(&h, &g, &y, coef.as_ref(), &cfg).unwrap();
        let stopped = solve(&h.stop_at(t).unwrap(), &g.stop_at(t).unwrap(), &y.stop_at(t).unwrap(), coef.as_ref(), &cfg)
            .unwrap();
        let gap = full.path.stop_at(t).unwrap().sup_distance(&stopped.path.stop_at(t).unwrap()).unwrap();
        prop_assert!(gap <= 5.0 * cfg.tol, "gap {}", gap);
    }

    #[test]
    fn markov_solutions_match_the_reference(seed in 0u64..1000, c in 0usize..3) {
        let y = LevySpec::new(vec![0.4], 2.0, JumpLaw::Uniform { low: -0.3, high: 0.3 })
            .unwrap()
            .sample_path(1.0, seed)
            .unwrap()
            .path;
        let coef = Registry::parse(LIPSCHITZ[c]).unwrap();
        let cfg = SolverConfig { tol: 1e-6, ..SolverConfig::default() };
        let sol = solve(&unit(), &unit(), &y, coef.as_ref(), &cfg).unwrap();
        let reference = reference_integrate(coef.as_ref(), &unit(), &unit(), &y, 2000).unwrap();
        prop_assert!(sol.path.sup_distance(&reference).unwrap() <= 1e-5);
    }

    #[test]
    fn derivative_vanishes_before_the_shift(seed in 0u64..1000, r in 0.05f64..0.95, v in -0.3f64..0.3) {
        let y = LevySpec::fixed_jumps(0.5, 1.0, 0.1).sample_path(1.0, seed).unwrap().path;
        let d = match derivative(&MarkovCoefficient::linear(), &unit(), &unit(), &y, &MalliavinProbe::new(r, v), &loose()) {
            Ok(d) => d,
            Err(Error::FlaggedDerivative { derivative, .. }) => *derivative,
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        };
        prop_assert_eq!(d.path.sup_norm_before(r).unwrap(), 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn drivers_split_exactly(seed in any::<u64>(), rate in 0.1f64..5.0, std in 0.01f64..2.0, drift in -1.0f64..1.0) {
        let spec = LevySpec::new(vec![drift], rate, JumpLaw::Normal { mean: 0.1, std }).unwrap();
        let s = spec.sample_path(1.0, seed).unwrap();
        let (m, a) = s.decompose().unwrap();
        let back = CadlagPath::linear_combine(&[(1.0, &m), (1.0, &a)]).unwrap();
        prop_assert_eq!(back.sup_distance(&s.path).unwrap(), 0.0);
        let v = s.dominating_process().unwrap();
        prop_assert!(is_nondecreasing(v.v()));
    }

    #[test]
    fn theta_is_monotone_in_time(seed in any::<u64>(), t in 0.0f64..1.0) {
        let s = LevySpec::fixed_jumps(0.5, 1.0, 0.1).sample_path(1.0, seed).unwrap();
        let v = s.dominating_process().unwrap();
        let p = CadlagPath::scalar_step(1.0, 0.7, &[(0.3, -1.0), (0.8, 0.2)]).unwrap();
        let a = theta(&p, v.v(), t).unwrap();
        prop_assert!(a >= 0.0);
        prop_assert!(a <= theta(&p, v.v(), 1.0).unwrap() + 1e-12);
    }

    #[test]
    fn integral_of_one_is_the_increment(seed in any::<u64>(), t in 0.0f64..1.0) {
        let s = LevySpec::fixed_jumps(0.5, 2.0, 0.1).sample_path(1.0, seed).unwrap();
        let one = MatrixPath::scalar(unit()).unwrap();
        let i = stochastic_integral(&one, &s.path).unwrap();
        let expect = s.path.eval(t).unwrap()[0] - s.path.eval(0.0).unwrap()[0];
        prop_assert!((i.eval(t).unwrap()[0] - expect).abs() <= 1e-12);
    }
}

#[test]
fn jump_counts_have_poisson_moments() {
    let spec = LevySpec::fixed_jumps(0.0, 3.0, 0.2);
    let n = 20_000;
    let counts: Vec<f64> = (0..n)
        .map(|s| spec.sample_path(1.0, s).unwrap().jumps.len() as f64)
        .collect();
    let mean = counts.iter().sum::<f64>() / n as f64;
    let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let z_mean = (mean - 3.0) / (3.0 / n as f64).sqrt();
    let z_var = (var - 3.0) / ((3.0 + 2.0 * 9.0) / n as f64).sqrt();
    assert!(z_mean.abs() < 4.0 && z_var.abs() < 4.0, "{mean} {var}");
}

#[test]
fn cauchy_distances_shrink_geometrically() {
    let cfg = SolverConfig {
        tol: 1e-6,
        ..SolverConfig::default()
    };
    for name in ["linear", "sin"] {
        let coef = Registry::parse(name).unwrap();
        for seed in 0..5 {
            let y = LevySpec::fixed_jumps(0.5, 1.0, 0.1)
                .sample_path(1.0, seed)
                .unwrap()
                .path;
            let sol = solve(&unit(), &unit(), &y, coef.as_ref(), &cfg).unwrap();
            assert!(sol.converged);
            let d: Vec<f64> = sol.diagnostics.iter().map(|d| d.dist_to_prev).collect();
            for n in 5..d.len() - 1 {
                assert!(
                    d[n + 1] <= 0.9 * d[n],
                    "{name} seed {seed} n {}: {:e} -> {:e}",
                    n + 1,
                    d[n],
                    d[n + 1]
                );
            }
        }
    }
}

#[test]
fn shipped_coefficients_converge() {
    let cfg = SolverConfig {
        tol: 1e-6,
        ..SolverConfig::default()
    };
    for name in LIPSCHITZ {
        let coef = Registry::parse(name).unwrap();
        let y = LevySpec::fixed_jumps(0.5, 1.0, 0.1).sample_path(1.0, 3).unwrap().path;
        let sol = solve(&unit(), &unit(), &y, coef.as_ref(), &cfg).unwrap();
        assert!(sol.converged, "{name}");
    }
}
