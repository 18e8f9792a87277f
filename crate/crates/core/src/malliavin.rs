//! Malliavin derivatives `D_{r,v} X = Ψ(H + D H, G + D G, Y + v 1_{[r,T]}) - Ψ(H, G, Y)`
//! of solutions driven by a scalar Lévy path.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::coefficient::Coefficient;
use crate::error::{Error, Result};
use crate::functional::{solve_jointly, Solution, SolverConfig};
use crate::levy::{JumpLaw, LevySpec};
use crate::path::{merge_sorted, CadlagPath, Walker};

/// A shift of the driver by `v` from time `r` on.
#[derive(Clone, Debug)]
pub struct MalliavinProbe {
    pub r: f64,
    pub v: f64,
    /// `D_{r,v} H`; zero if `None`.
    pub shift_h: Option<CadlagPath>,
    /// `D_{r,v} G`; zero if `None`.
    pub shift_g: Option<CadlagPath>,
}

impl MalliavinProbe {
    pub fn new(r: f64, v: f64) -> Self {
        Self {
            r,
            v,
            shift_h: None,
            shift_g: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MalliavinDerivative {
    pub path: CadlagPath,
    pub base: Solution,
    pub shifted: Solution,
}

impl MalliavinDerivative {
    pub fn converged(&self) -> bool {
        self.base.converged && self.shifted.converged
    }
}

fn shifted_input(x: &CadlagPath, shift: Option<&CadlagPath>, what: &str) -> Result<CadlagPath> {
    match shift {
        None => Ok(x.clone()),
        Some(s) => {
            if s.dim() != x.dim() || s.horizon() != x.horizon() {
                return Err(Error::Shape(format!("shift of {what} does not match its path")));
            }
            CadlagPath::linear_combine(&[(1.0, x), (1.0, s)])
        }
    }
}

/// `D_{r,v} X` by solving the base and the shifted problem. Both problems
/// are iterated to the same `n`; without shifts of `H` and `G` the result
/// vanishes identically on `[0, r)`.
pub fn derivative(
    coef: &dyn Coefficient,
    h: &CadlagPath,
    g: &CadlagPath,
    y: &CadlagPath,
    probe: &MalliavinProbe,
    config: &SolverConfig,
) -> Result<MalliavinDerivative> {
    if y.dim() != 1 {
        return Err(Error::Unsupported(
            "derivatives are defined for scalar drivers only".into(),
        ));
    }
    let horizon = y.horizon();
    if !(probe.r >= 0.0 && probe.r <= horizon) {
        return Err(Error::Domain { t: probe.r, horizon });
    }
    if !probe.v.is_finite() {
        return Err(Error::NonFinite(format!("shift size {}", probe.v)));
    }
    // both drivers carry the knot r, so they agree bit for bit before it
    let y_base = y.add_shift(probe.r, &[0.0])?;
    let y_shift = y.add_shift(probe.r, &[probe.v])?;
    let h_shift = shifted_input(h, probe.shift_h.as_ref(), "H")?;
    let g_shift = shifted_input(g, probe.shift_g.as_ref(), "G")?;
    let mut sols = solve_jointly(&[(h, g, &y_base), (&h_shift, &g_shift, &y_shift)], coef, config)?;
    let shifted = sols.pop().expect("two solutions");
    let base = sols.pop().expect("two solutions");
    let path = CadlagPath::linear_combine(&[(1.0, &shifted.path), (-1.0, &base.path)])?;
    let out = MalliavinDerivative { path, base, shifted };
    if out.converged() {
        Ok(out)
    } else {
        Err(Error::FlaggedDerivative {
            base_converged: out.base.converged,
            shifted_converged: out.shifted.converged,
            derivative: Box::new(out),
        })
    }
}

/// Nodes and weights of `n`-point Gauss-Legendre quadrature on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let jacobi = DMatrix::from_fn(n, n, |i, j| {
        let k = i.max(j) as f64;
        if i.abs_diff(j) == 1 {
            k / (4.0 * k * k - 1.0).sqrt()
        } else {
            0.0
        }
    });
    golub_welsch(jacobi, 2.0)
}

/// Nodes and weights of `n`-point Gauss-Hermite quadrature for the standard
/// normal density.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let jacobi = DMatrix::from_fn(n, n, |i, j| {
        if i.abs_diff(j) == 1 {
            (i.max(j) as f64).sqrt()
        } else {
            0.0
        }
    });
    golub_welsch(jacobi, 1.0)
}

fn golub_welsch(jacobi: DMatrix<f64>, mass: f64) -> (Vec<f64>, Vec<f64>) {
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = eig
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(i, &x)| (x, mass * eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

const GL_POINTS: usize = 8;

/// `(∫_r^t (g(X̃_{s-}) - g(X_{s-})) dY_s + g(X_{r-}) v) 1_{t ≥ r}`, with the
/// drift part integrated by Gauss-Legendre quadrature on each piece and
/// jumps of `Y` weighted by left limits. The result is exact at the knots of
/// `X`, `X̃` and `Y` and affine in between.
pub fn closed_form_example(
    g: &dyn Fn(f64) -> f64,
    x: &CadlagPath,
    x_shifted: &CadlagPath,
    y: &CadlagPath,
    r: f64,
    v: f64,
) -> Result<CadlagPath> {
    if x.dim() != 1 || x_shifted.dim() != 1 || y.dim() != 1 {
        return Err(Error::Shape("scalar paths expected".into()));
    }
    let horizon = y.horizon();
    if x.horizon() != horizon || x_shifted.horizon() != horizon {
        return Err(Error::Shape("paths must share the horizon".into()));
    }
    if !(r >= 0.0 && r <= horizon) {
        return Err(Error::Domain { t: r, horizon });
    }
    let (nodes, weights) = gauss_legendre(GL_POINTS);
    let knots = merge_sorted(
        &merge_sorted(&merge_sorted(x.breakpoints(), x_shifted.breakpoints()), y.breakpoints()),
        &[r],
    );
    let n = knots.len() - 1;
    let mut xw = Walker::new(x);
    let mut sw = Walker::new(x_shifted);
    let mut yw = Walker::new(y);
    let (mut xa, mut xb, mut sa, mut sb, mut ya, mut yb) = ([0.0], [0.0], [0.0], [0.0], [0.0], [0.0]);
    let mut y_next = [0.0];
    let mut starts = Vec::with_capacity(n);
    let mut ends = Vec::with_capacity(n);
    let mut acc = g(x.left_limit(r)?[0]) * v;
    for k in 0..n {
        let (u0, u1) = (knots[k], knots[k + 1]);
        if u0 < r {
            starts.push(0.0);
            ends.push(0.0);
            continue;
        }
        xw.segment(u0, u1, &mut xa, &mut xb);
        sw.segment(u0, u1, &mut sa, &mut sb);
        yw.segment(u0, u1, &mut ya, &mut yb);
        starts.push(acc);
        let half = 0.5 * (u1 - u0);
        let slope = (yb[0] - ya[0]) / (u1 - u0);
        let mut integral = 0.0;
        for (z, w) in nodes.iter().zip(&weights) {
            let th = 0.5 * (1.0 + z);
            let xs = xa[0] + th * (xb[0] - xa[0]);
            let ss = sa[0] + th * (sb[0] - sa[0]);
            integral += w * (g(ss) - g(xs));
        }
        acc += integral * half * slope;
        ends.push(acc);
        if k + 1 < n {
            y.eval_into(u1, &mut y_next)?;
        } else {
            y_next[0] = y.terminal()[0];
        }
        let dy = y_next[0] - yb[0];
        if dy != 0.0 {
            acc += (g(sb[0]) - g(xb[0])) * dy;
        }
    }
    CadlagPath::new(1, knots, starts, ends, vec![acc])
}

/// Quadrature over `(r, v) ∈ [0, T] x R` against `dr ν(dv)`.
#[derive(Clone, Debug, Serialize)]
pub struct ProbeGrid {
    /// `(r, weight)`.
    pub r: Vec<(f64, f64)>,
    /// `(v, weight)`, weights summing to the jump intensity.
    pub v: Vec<(f64, f64)>,
}

impl ProbeGrid {
    /// `nr` trapezoid nodes on `[0, T]` and `nv` nodes for the jump law.
    pub fn new(horizon: f64, nr: usize, spec: &LevySpec, nv: usize) -> Result<Self> {
        if nr < 2 || nv < 1 {
            return Err(Error::InvalidSpec("probe grid needs nr ≥ 2 and nv ≥ 1".into()));
        }
        let h = horizon / (nr - 1) as f64;
        let r = (0..nr)
            .map(|i| {
                let w = if i == 0 || i + 1 == nr { 0.5 * h } else { h };
                (horizon * i as f64 / (nr - 1) as f64, w)
            })
            .collect();
        Ok(Self {
            r,
            v: jump_quadrature(spec, nv)?,
        })
    }

    pub fn len(&self) -> usize {
        self.r.len() * self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn probes(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.r
            .iter()
            .flat_map(move |&(r, wr)| self.v.iter().map(move |&(v, wv)| (r, v, wr * wv)))
    }
}

/// Nodes and weights of `ν = λ F` for a scalar driver.
pub fn jump_quadrature(spec: &LevySpec, n: usize) -> Result<Vec<(f64, f64)>> {
    spec.validate()?;
    if spec.dim() != 1 {
        return Err(Error::Unsupported("jump quadrature for scalar drivers only".into()));
    }
    let lambda = spec.intensity;
    Ok(match spec.jump_law {
        JumpLaw::Fixed { size } => vec![(size, lambda)],
        JumpLaw::Uniform { low, high } if low == high => vec![(low, lambda)],
        JumpLaw::Normal { mean, std: 0.0 } => vec![(mean, lambda)],
        JumpLaw::Uniform { low, high } => {
            let (z, w) = gauss_legendre(n);
            z.iter()
                .zip(&w)
                .map(|(z, w)| (low + 0.5 * (1.0 + z) * (high - low), 0.5 * w * lambda))
                .collect()
        }
        JumpLaw::Normal { mean, std } => {
            let (z, w) = gauss_hermite(n);
            z.iter().zip(&w).map(|(z, w)| (mean + std * z, w * lambda)).collect()
        }
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct IntegrabilityEstimate {
    /// Monte Carlo mean of `∬ |D_{r,v} X_T|² ν(dv) dr`.
    pub mean: f64,
    pub stderr: f64,
    pub n_paths: usize,
    /// Probes whose solves stopped before reaching `tol`.
    pub flagged: usize,
}

/// Estimates `E ∬ |D_{r,v} X_T|² ν(dv) dr` over `n_paths` driver samples
/// (streams `0..n_paths` of `seed`) with deterministic H and G.
#[allow(clippy::too_many_arguments)]
pub fn integrability_estimate(
    coef: &dyn Coefficient,
    h: &CadlagPath,
    g: &CadlagPath,
    spec: &LevySpec,
    grid: &ProbeGrid,
    n_paths: usize,
    seed: u64,
    config: &SolverConfig,
) -> Result<IntegrabilityEstimate> {
    let horizon = h.horizon();
    let per_path: Vec<(f64, usize)> = (0..n_paths as u64)
        .into_par_iter()
        .map(|stream| {
            let y = spec.sample_path_stream(horizon, seed, stream)?.path;
            let mut total = 0.0;
            let mut flagged = 0;
            for (r, v, w) in grid.probes() {
                let d = match derivative(coef, h, g, &y, &MalliavinProbe::new(r, v), config) {
                    Ok(d) => d,
                    Err(Error::FlaggedDerivative { derivative, .. }) => {
                        flagged += 1;
                        *derivative
                    }
                    Err(e) => return Err(e),
                };
                let dt = d.path.terminal()[0];
                total += w * dt * dt;
            }
            Ok((total, flagged))
        })
        .collect::<Result<_>>()?;
    let n = per_path.len();
    if n == 0 {
        return Ok(IntegrabilityEstimate {
            mean: 0.0,
            stderr: 0.0,
            n_paths: 0,
            flagged: 0,
        });
    }
    let mean = per_path.iter().map(|p| p.0).sum::<f64>() / n as f64;
    let var = if n > 1 {
        per_path.iter().map(|p| (p.0 - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    Ok(IntegrabilityEstimate {
        mean,
        stderr: (var / n as f64).sqrt(),
        n_paths: n,
        flagged: per_path.iter().map(|p| p.1).sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficient::{ConstantCoefficient, MarkovCoefficient};

    fn unit() -> CadlagPath {
        CadlagPath::constant(1.0, &[1.0]).unwrap()
    }

    fn cfg() -> SolverConfig {
        SolverConfig {
            tol: 1e-6,
            ..SolverConfig::default()
        }
    }

    #[test]
    fn quadrature_rules() {
        let (z, w) = gauss_legendre(5);
        let int: f64 = z.iter().zip(&w).map(|(z, w)| w * z.powi(8)).sum();
        assert!((int - 2.0 / 9.0).abs() < 1e-14);
        let (z, w) = gauss_hermite(6);
        let m4: f64 = z.iter().zip(&w).map(|(z, w)| w * z.powi(4)).sum();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert!((m4 - 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_shift_gives_zero() {
        let y = LevySpec::fixed_jumps(0.5, 1.0, 0.1).sample_path(1.0, 3).unwrap().path;
        let d = derivative(
            &MarkovCoefficient::linear(),
            &unit(),
            &unit(),
            &y,
            &MalliavinProbe::new(0.4, 0.0),
            &cfg(),
        )
        .unwrap();
        assert_eq!(d.path.sup_norm(), 0.0);
    }

    #[test]
    fn zero_coefficient_gives_zero() {
        let y = LevySpec::fixed_jumps(0.5, 1.0, 0.1).sample_path(1.0, 3).unwrap().path;
        let zero = ConstantCoefficient::zero(1, 1, 1);
        let d = derivative(&zero, &unit(), &unit(), &y, &MalliavinProbe::new(0.4, 0.3), &cfg()).unwrap();
        assert_eq!(d.path.sup_norm(), 0.0);
    }

    #[test]
    fn closed_form_trivial_cases() {
        let y = LevySpec::fixed_jumps(0.5, 2.0, 0.1).sample_path(1.0, 5).unwrap().path;
        let x = CadlagPath::affine(1.0, 1.0, 0.3).unwrap();
        let xs = CadlagPath::affine(1.0, 1.5, -0.2).unwrap();
        let c = closed_form_example(&|_| 2.0, &x, &xs, &y, 0.3, 0.25).unwrap();
        assert_eq!(c.eval(0.2).unwrap()[0], 0.0);
        assert_eq!(c.left_limit(0.3).unwrap()[0], 0.0);
        for t in [0.3, 0.5, 1.0] {
            assert!((c.eval(t).unwrap()[0] - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn derivative_vanishes_before_r() {
        let y = LevySpec::fixed_jumps(0.5, 3.0, 0.1).sample_path(1.0, 11).unwrap().path;
        let d = derivative(
            &MarkovCoefficient::sin(),
            &unit(),
            &unit(),
            &y,
            &MalliavinProbe::new(0.55, 0.2),
            &cfg(),
        )
        .unwrap();
        assert_eq!(d.path.sup_norm_before(0.55).unwrap(), 0.0);
        assert!(d.path.terminal()[0] != 0.0);
    }

    #[test]
    fn representations_agree_on_linear_equation() {
        let y = LevySpec::fixed_jumps(0.5, 1.0, 0.1).sample_path(1.0, 17).unwrap().path;
        let probe = MalliavinProbe::new(0.3, 0.2);
        let d = derivative(&MarkovCoefficient::linear(), &unit(), &unit(), &y, &probe, &cfg()).unwrap();
        let c = closed_form_example(&|x| x, &d.base.path, &d.shifted.path, &y, 0.3, 0.2).unwrap();
        assert!(d.path.sup_distance(&c).unwrap() < 1e-5);
    }

    #[test]
    fn estimate_is_zero_without_coefficient() {
        let spec = LevySpec::fixed_jumps(0.5, 1.0, 0.1);
        let grid = ProbeGrid::new(1.0, 3, &spec, 1).unwrap();
        let zero = ConstantCoefficient::zero(1, 1, 1);
        let est = integrability_estimate(&zero, &unit(), &unit(), &spec, &grid, 4, 1, &cfg()).unwrap();
        assert_eq!((est.mean, est.stderr), (0.0, 0.0));
    }
}
