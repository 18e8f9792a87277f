//! Coefficient functionals `f(t, ζ, γ)` with values in `L(R^m, R^d)`, their
//! predictable versions `g(t, ζ, γ) = f(t-, ζ, γ)`, and randomized checks of
//! the growth, Lipschitz, nonanticipativity and càdlàg conditions.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrix::{op_norm, op_norm_diff, Matrix};
use crate::path::CadlagPath;

/// `d`: state dimension, `m`: driver dimension, `r`: auxiliary path dimension.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Dims {
    pub d: usize,
    pub m: usize,
    pub r: usize,
}

impl Dims {
    pub fn scalar() -> Self {
        Self { d: 1, m: 1, r: 1 }
    }

    pub fn entries(&self) -> usize {
        self.d * self.m
    }
}

pub type ScalarMap = dyn Fn(f64) -> f64 + Send + Sync;

pub trait Coefficient: Send + Sync {
    fn dims(&self) -> Dims;

    fn name(&self) -> String;

    /// Writes `f(t, ζ, γ)` (row-major `d x m`) into `out`.
    fn eval_into(&self, t: f64, zeta: &CadlagPath, gamma: &CadlagPath, out: &mut [f64]) -> Result<()>;

    /// The bound `C(t, ζ)` of the growth and Lipschitz conditions.
    fn bound(&self, t: f64, zeta: &CadlagPath) -> Result<f64>;

    /// Writes `f(t-, ζ, γ)` into `out`; `f(0, ζ, γ)` at `t = 0`.
    fn left_into(&self, t: f64, zeta: &CadlagPath, gamma: &CadlagPath, out: &mut [f64]) -> Result<()> {
        probe_left_limit(self, t, zeta, gamma, out)
    }

    /// Evaluates `f(u_k)` into `values` and `f(u_k-)` into `lefts` for each of
    /// the increasing `knots` (each `d * m` entries, row-major).
    fn trace(
        &self,
        knots: &[f64],
        zeta: &CadlagPath,
        gamma: &CadlagPath,
        values: &mut [f64],
        lefts: &mut [f64],
    ) -> Result<()> {
        let e = self.dims().entries();
        for (k, &u) in knots.iter().enumerate() {
            self.eval_into(u, zeta, gamma, &mut values[k * e..(k + 1) * e])?;
            self.left_into(u, zeta, gamma, &mut lefts[k * e..(k + 1) * e])?;
        }
        Ok(())
    }

    /// For coefficients of the form `f(t, ζ, γ) = g(γ(t))` with scalar `g`.
    fn markov(&self) -> Option<&ScalarMap> {
        None
    }
}

impl fmt::Debug for dyn Coefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Coefficient({})", self.name())
    }
}

const PROBE_DEPTH: i32 = 40;
const PROBE_WINDOW: usize = 5;
const PROBE_TOL: f64 = 1e-9;

/// Left limit in `t` by evaluating at `t - 2^{-k} min(1, t)` for `k ≤ 40`.
pub fn probe_left_limit<C: Coefficient + ?Sized>(
    coef: &C,
    t: f64,
    zeta: &CadlagPath,
    gamma: &CadlagPath,
    out: &mut [f64],
) -> Result<()> {
    if t <= 0.0 {
        return coef.eval_into(0.0, zeta, gamma, out);
    }
    let dims = coef.dims();
    let e = dims.entries();
    let scale = t.min(1.0);
    let mut window: Vec<Vec<f64>> = Vec::with_capacity(PROBE_WINDOW);
    let mut cur = vec![0.0; e];
    for k in 1..=PROBE_DEPTH {
        let s = t - scale * 2f64.powi(-k);
        if !(s < t) {
            break;
        }
        coef.eval_into(s, zeta, gamma, &mut cur)?;
        if window.len() == PROBE_WINDOW {
            window.remove(0);
        }
        window.push(cur.clone());
    }
    let mut spread: f64 = 0.0;
    for a in &window {
        for b in &window {
            spread = spread.max(op_norm_diff(dims.d, dims.m, a, b));
        }
    }
    let scale_v = window.last().map(|v| op_norm(dims.d, dims.m, v)).unwrap_or(0.0);
    if window.len() < PROBE_WINDOW || spread > PROBE_TOL * (1.0 + scale_v) {
        return Err(Error::NotCadlag { t, spread });
    }
    out.copy_from_slice(window.last().unwrap());
    Ok(())
}

fn check_inputs(dims: Dims, zeta: &CadlagPath, gamma: &CadlagPath) -> Result<()> {
    if gamma.dim() != dims.d {
        return Err(Error::Shape(format!(
            "state path of dim {} for d = {}",
            gamma.dim(),
            dims.d
        )));
    }
    if zeta.dim() != dims.r {
        return Err(Error::Shape(format!(
            "auxiliary path of dim {} for r = {}",
            zeta.dim(),
            dims.r
        )));
    }
    Ok(())
}

/// `f(t, ζ, γ)` as a matrix.
pub fn eval_f(coef: &dyn Coefficient, t: f64, zeta: &CadlagPath, gamma: &CadlagPath) -> Result<Matrix> {
    let dims = coef.dims();
    check_inputs(dims, zeta, gamma)?;
    domain(t, gamma.horizon())?;
    let mut out = vec![0.0; dims.entries()];
    coef.eval_into(t, zeta, gamma, &mut out)?;
    Ok(Matrix::from_row_major(dims.d, dims.m, out))
}

/// `g(t, ζ, γ) = f(t-, ζ, γ)`.
pub fn eval_g(coef: &dyn Coefficient, t: f64, zeta: &CadlagPath, gamma: &CadlagPath) -> Result<Matrix> {
    let dims = coef.dims();
    check_inputs(dims, zeta, gamma)?;
    domain(t, gamma.horizon())?;
    let mut out = vec![0.0; dims.entries()];
    coef.left_into(t, zeta, gamma, &mut out)?;
    Ok(Matrix::from_row_major(dims.d, dims.m, out))
}

fn domain(t: f64, horizon: f64) -> Result<()> {
    if !(0.0..=horizon).contains(&t) {
        return Err(Error::Domain { t, horizon });
    }
    Ok(())
}

/// The backward grid time `max(0, (⌈nt⌉ - 1) / n)`, with `0` at `t = 0`.
pub fn caglad_time(n: u64, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let nf = n as f64;
    let x = nf * t;
    let r = x.round();
    let c = if (x - r).abs() <= 4.0 * f64::EPSILON * x.max(1.0) {
        r
    } else {
        x.ceil()
    };
    ((c - 1.0) / nf).max(0.0)
}

/// `f((⌈nt⌉ - 1) / n, ζ, γ)`: a càglàd approximant of `f`.
pub fn caglad_approx(coef: &dyn Coefficient, n: u64, t: f64, zeta: &CadlagPath, gamma: &CadlagPath) -> Result<Matrix> {
    if n == 0 {
        return Err(Error::InvalidCoefficient("approximation order must be positive".into()));
    }
    eval_f(coef, caglad_time(n, t), zeta, gamma)
}

/// `f(t, ζ, γ) = g(γ(t))` for a scalar Lipschitz `g`, with
/// `C ≡ lip + |g(0)|`.
#[derive(Clone)]
pub struct MarkovCoefficient {
    name: String,
    g: Arc<ScalarMap>,
    constant: f64,
}

impl MarkovCoefficient {
    pub fn new(name: impl Into<String>, lipschitz: f64, g: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        let g: Arc<ScalarMap> = Arc::new(g);
        let constant = lipschitz + g(0.0).abs();
        Self {
            name: name.into(),
            g,
            constant,
        }
    }

    pub fn linear() -> Self {
        Self::new("linear", 1.0, |x| x)
    }

    pub fn affine(a: f64, b: f64) -> Self {
        Self::new(format!("affine({a},{b})"), b.abs(), move |x| a + b * x)
    }

    pub fn sin() -> Self {
        Self::new("sin", 1.0, f64::sin)
    }

    pub fn g(&self, x: f64) -> f64 {
        (self.g)(x)
    }
}

impl Coefficient for MarkovCoefficient {
    fn dims(&self) -> Dims {
        Dims::scalar()
    }

    fn name(&self) -> String {
        self.name.clone()
    }

    fn eval_into(&self, t: f64, _zeta: &CadlagPath, gamma: &CadlagPath, out: &mut [f64]) -> Result<()> {
        let mut v = [0.0];
        gamma.eval_into(t, &mut v)?;
        out[0] = (self.g)(v[0]);
        Ok(())
    }

    fn bound(&self, _t: f64, _zeta: &CadlagPath) -> Result<f64> {
        Ok(self.constant)
    }

    fn left_into(&self, t: f64, _zeta: &CadlagPath, gamma: &CadlagPath, out: &mut [f64]) -> Result<()> {
        let mut v = [0.0];
        gamma.left_limit_into(t, &mut v)?;
        out[0] = (self.g)(v[0]);
        Ok(())
    }

    fn trace(
        &self,
        knots: &[f64],
        _zeta: &CadlagPath,
        gamma: &CadlagPath,
        values: &mut [f64],
        lefts: &mut [f64],
    ) -> Result<()> {
        trace_state(gamma, knots, values, lefts, |x| (self.g)(x))
    }

    fn markov(&self) -> Option<&ScalarMap> {
        Some(&*self.g)
    }
}

/// Walks a scalar state path along increasing knots, writing `h(γ(u))` and
/// `h(γ(u-))`.
fn trace_state(
    gamma: &CadlagPath,
    knots: &[f64],
    values: &mut [f64],
    lefts: &mut [f64],
    h: impl Fn(f64) -> f64,
) -> Result<()> {
    if gamma.dim() != 1 {
        return Err(Error::Shape("scalar state path expected".into()));
    }
    let times = gamma.breakpoints();
    let n = gamma.segment_count();
    let horizon = gamma.horizon();
    let starts = gamma.starts_raw();
    let ends = gamma.ends_raw();
    let mut k = 0;
    for (i, &u) in knots.iter().enumerate() {
        if !(0.0..=horizon).contains(&u) {
            return Err(Error::Domain { t: u, horizon });
        }
        // left value: segment with s_k < u <= s_{k+1}
        while k + 1 < n && times[k + 1] < u {
            k += 1;
        }
        let left = if u == 0.0 {
            starts[0]
        } else if u == times[k + 1] {
            ends[k]
        } else {
            let th = (u - times[k]) / (times[k + 1] - times[k]);
            if th == 0.0 {
                starts[k]
            } else {
                starts[k] + (ends[k] - starts[k]) * th
            }
        };
        lefts[i] = h(left);
        let value = if u >= horizon {
            gamma.terminal()[0]
        } else if u == times[k + 1] {
            starts[k + 1]
        } else if u == times[k] {
            starts[k]
        } else {
            left
        };
        values[i] = h(value);
    }
    Ok(())
}

/// `f ≡ K` for a fixed matrix `K`.
#[derive(Clone, Debug)]
pub struct ConstantCoefficient {
    dims: Dims,
    value: Vec<f64>,
}

impl ConstantCoefficient {
    pub fn new(value: Matrix, r: usize) -> Self {
        let dims = Dims {
            d: value.rows(),
            m: value.cols(),
            r,
        };
        Self {
            dims,
            value: value.into_vec(),
        }
    }

    pub fn zero(d: usize, m: usize, r: usize) -> Self {
        Self::new(Matrix::zeros(d, m), r)
    }
}

impl Coefficient for ConstantCoefficient {
    fn dims(&self) -> Dims {
        self.dims
    }

    fn name(&self) -> String {
        if self.value.iter().all(|&v| v == 0.0) {
            "zero".into()
        } else {
            format!("constant({:?})", self.value)
        }
    }

    fn eval_into(&self, _t: f64, _zeta: &CadlagPath, _gamma: &CadlagPath, out: &mut [f64]) -> Result<()> {
        out.copy_from_slice(&self.value);
        Ok(())
    }

    fn bound(&self, _t: f64, _zeta: &CadlagPath) -> Result<f64> {
        Ok(op_norm(self.dims.d, self.dims.m, &self.value).max(f64::MIN_POSITIVE))
    }

    fn left_into(&self, _t: f64, _zeta: &CadlagPath, _gamma: &CadlagPath, out: &mut [f64]) -> Result<()> {
        out.copy_from_slice(&self.value);
        Ok(())
    }

    fn trace(
        &self,
        knots: &[f64],
        _zeta: &CadlagPath,
        _gamma: &CadlagPath,
        values: &mut [f64],
        lefts: &mut [f64],
    ) -> Result<()> {
        let e = self.value.len();
        for k in 0..knots.len() {
            values[k * e..(k + 1) * e].copy_from_slice(&self.value);
            lefts[k * e..(k + 1) * e].copy_from_slice(&self.value);
        }
        Ok(())
    }
}

/// Scalar `f(t, ζ, γ) = 1_{t ≥ t0}`.
#[derive(Clone, Debug)]
pub struct IndicatorCoefficient {
    pub t0: f64,
}

impl Coefficient for IndicatorCoefficient {
    fn dims(&self) -> Dims {
        Dims::scalar()
    }

    fn name(&self) -> String {
        format!("indicator({})", self.t0)
    }

    fn eval_into(&self, t: f64, _zeta: &CadlagPath, _gamma: &CadlagPath, out: &mut [f64]) -> Result<()> {
        out[0] = if t >= self.t0 { 1.0 } else { 0.0 };
        Ok(())
    }

    fn bound(&self, _t: f64, _zeta: &CadlagPath) -> Result<f64> {
        Ok(1.0)
    }

    fn left_into(&self, t: f64, _zeta: &CadlagPath, _gamma: &CadlagPath, out: &mut [f64]) -> Result<()> {
        out[0] = if t > self.t0 || (t == 0.0 && self.t0 <= 0.0) {
            1.0
        } else {
            0.0
        };
        Ok(())
    }

    fn trace(
        &self,
        knots: &[f64],
        zeta: &CadlagPath,
        gamma: &CadlagPath,
        values: &mut [f64],
        lefts: &mut [f64],
    ) -> Result<()> {
        for (k, &u) in knots.iter().enumerate() {
            self.eval_into(u, zeta, gamma, &mut values[k..k + 1])?;
            self.left_into(u, zeta, gamma, &mut lefts[k..k + 1])?;
        }
        Ok(())
    }
}

/// Scalar `f(t, ζ, γ) = γ(T)`, which looks into the future. Used only to
/// exercise the nonanticipativity check.
#[derive(Clone, Debug)]
pub struct AnticipatingCoefficient;

impl Coefficient for AnticipatingCoefficient {
    fn dims(&self) -> Dims {
        Dims::scalar()
    }

    fn name(&self) -> String {
        "anticipating-bad".into()
    }

    fn eval_into(&self, _t: f64, _zeta: &CadlagPath, gamma: &CadlagPath, out: &mut [f64]) -> Result<()> {
        out[0] = gamma.terminal()[0];
        Ok(())
    }

    fn bound(&self, _t: f64, _zeta: &CadlagPath) -> Result<f64> {
        Ok(1.0)
    }
}

/// Scalar `f(t, ζ, γ) = sin(γ(t)) (1 + sup_{s≤t} |ζ(s)|)` with
/// `C(t, ζ) = 1 + sup_{s≤t} |ζ(s)|`.
#[derive(Clone, Debug)]
pub struct SinZetaCoefficient;

impl Coefficient for SinZetaCoefficient {
    fn dims(&self) -> Dims {
        Dims::scalar()
    }

    fn name(&self) -> String {
        "sin-zeta".into()
    }

    fn eval_into(&self, t: f64, zeta: &CadlagPath, gamma: &CadlagPath, out: &mut [f64]) -> Result<()> {
        let mut v = [0.0];
        gamma.eval_into(t, &mut v)?;
        out[0] = v[0].sin() * (1.0 + zeta.sup_norm_until(t)?);
        Ok(())
    }

    fn bound(&self, t: f64, zeta: &CadlagPath) -> Result<f64> {
        Ok(1.0 + zeta.sup_norm_until(t)?)
    }

    fn left_into(&self, t: f64, zeta: &CadlagPath, gamma: &CadlagPath, out: &mut [f64]) -> Result<()> {
        let mut v = [0.0];
        gamma.left_limit_into(t, &mut v)?;
        out[0] = v[0].sin() * (1.0 + zeta.sup_norm_before(t)?);
        Ok(())
    }

    fn trace(
        &self,
        knots: &[f64],
        zeta: &CadlagPath,
        gamma: &CadlagPath,
        values: &mut [f64],
        lefts: &mut [f64],
    ) -> Result<()> {
        trace_state(gamma, knots, values, lefts, f64::sin)?;
        let (sup_at, sup_before) = running_sup(zeta, knots)?;
        for k in 0..knots.len() {
            values[k] *= 1.0 + sup_at[k];
            lefts[k] *= 1.0 + sup_before[k];
        }
        Ok(())
    }
}

/// `sup_{s≤u} |ζ(s)|` and `sup_{s<u} |ζ(s)|` along increasing knots.
fn running_sup(zeta: &CadlagPath, knots: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    use crate::matrix::euclid;
    let times = zeta.breakpoints();
    let n = zeta.segment_count();
    let horizon = zeta.horizon();
    let d = zeta.dim();
    let mut at = Vec::with_capacity(knots.len());
    let mut before = Vec::with_capacity(knots.len());
    // sup over completed segments [s_j, s_{j+1}) for s_{j+1} <= u
    let mut done = euclid(zeta.segment_start(0));
    let mut k = 0;
    let mut buf = vec![0.0; d];
    for &u in knots {
        if !(0.0..=horizon).contains(&u) {
            return Err(Error::Domain { t: u, horizon });
        }
        while k < n && times[k + 1] <= u {
            done = done.max(euclid(zeta.segment_start(k))).max(euclid(zeta.segment_end(k)));
            k += 1;
        }
        if k == n {
            before.push(done);
            at.push(done.max(euclid(zeta.terminal())));
            continue;
        }
        // u lies in [s_k, s_{k+1})
        if u == times[k] {
            before.push(done);
            at.push(done.max(euclid(zeta.segment_start(k))));
        } else {
            zeta.segment_value_into(k, u, &mut buf);
            let partial = done.max(euclid(zeta.segment_start(k))).max(euclid(&buf));
            before.push(partial);
            at.push(partial);
        }
    }
    Ok((at, before))
}

pub type CoefFn = dyn Fn(f64, &CadlagPath, &CadlagPath, &mut [f64]) -> Result<()> + Send + Sync;
pub type BoundFn = dyn Fn(f64, &CadlagPath) -> Result<f64> + Send + Sync;

/// A black-box coefficient given by closures; left limits are probed.
#[derive(Clone)]
pub struct FnCoefficient {
    name: String,
    dims: Dims,
    f: Arc<CoefFn>,
    c: Arc<BoundFn>,
}

impl FnCoefficient {
    pub fn new(
        name: impl Into<String>,
        dims: Dims,
        f: impl Fn(f64, &CadlagPath, &CadlagPath, &mut [f64]) -> Result<()> + Send + Sync + 'static,
        c: impl Fn(f64, &CadlagPath) -> Result<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            dims,
            f: Arc::new(f),
            c: Arc::new(c),
        }
    }
}

impl Coefficient for FnCoefficient {
    fn dims(&self) -> Dims {
        self.dims
    }

    fn name(&self) -> String {
        self.name.clone()
    }

    fn eval_into(&self, t: f64, zeta: &CadlagPath, gamma: &CadlagPath, out: &mut [f64]) -> Result<()> {
        (self.f)(t, zeta, gamma, out)
    }

    fn bound(&self, t: f64, zeta: &CadlagPath) -> Result<f64> {
        (self.c)(t, zeta)
    }
}

/// Built-in coefficients addressable by name.
pub struct Registry;

impl Registry {
    pub const NAMES: &'static [&'static str] = &[
        "linear",
        "affine(a,b)",
        "sin",
        "indicator(t0)",
        "sin-zeta",
        "zero",
        "anticipating-bad",
    ];

    pub fn parse(spec: &str) -> Result<Box<dyn Coefficient>> {
        let spec = spec.trim();
        let (head, args) = match spec.find('(') {
            Some(i) => {
                if !spec.ends_with(')') {
                    return Err(Error::InvalidCoefficient(format!("malformed name {spec:?}")));
                }
                let args: Vec<f64> = spec[i + 1..spec.len() - 1]
                    .split(',')
                    .map(|a| {
                        a.trim()
                            .parse::<f64>()
                            .map_err(|_| Error::InvalidCoefficient(format!("bad argument in {spec:?}")))
                    })
                    .collect::<Result<_>>()?;
                (&spec[..i], args)
            }
            None => (spec, Vec::new()),
        };
        let arity = |n: usize| -> Result<()> {
            if args.len() != n {
                return Err(Error::InvalidCoefficient(format!(
                    "{head} takes {n} argument(s), got {}",
                    args.len()
                )));
            }
            if args.iter().any(|a| !a.is_finite()) {
                return Err(Error::InvalidCoefficient(format!("non-finite argument in {spec:?}")));
            }
            Ok(())
        };
        Ok(match head {
            "linear" => {
                arity(0)?;
                Box::new(MarkovCoefficient::linear())
            }
            "affine" => {
                arity(2)?;
                Box::new(MarkovCoefficient::affine(args[0], args[1]))
            }
            "sin" => {
                arity(0)?;
                Box::new(MarkovCoefficient::sin())
            }
            "indicator" => {
                arity(1)?;
                Box::new(IndicatorCoefficient { t0: args[0] })
            }
            "sin-zeta" => {
                arity(0)?;
                Box::new(SinZetaCoefficient)
            }
            "zero" => {
                arity(0)?;
                Box::new(ConstantCoefficient::zero(1, 1, 1))
            }
            "anticipating-bad" => {
                arity(0)?;
                Box::new(AnticipatingCoefficient)
            }
            _ => {
                return Err(Error::InvalidCoefficient(format!(
                    "unknown coefficient {spec:?}; known: {}",
                    Self::NAMES.join(", ")
                )))
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum ViolationKind {
    Nonanticipative,
    Growth,
    Lipschitz,
    NotCadlag,
    NonPositiveBound,
    Evaluation,
}

#[derive(Clone, Debug, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub t: f64,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct AssumptionReport {
    pub coefficient: String,
    pub samples: usize,
    pub violations: Vec<Violation>,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, kind: ViolationKind) -> usize {
        self.violations.iter().filter(|v| v.kind == kind).count()
    }
}

/// A random path on `[0, T]` with a few affine pieces on the grid `T k / 8`
/// and jumps, values of magnitude up to 2 and slopes at most `16 / T`.
pub fn random_path(rng: &mut impl Rng, dim: usize, horizon: f64) -> CadlagPath {
    let pieces = rng.random_range(1..=6);
    let mut times: Vec<f64> = rand::seq::index::sample(rng, 7, pieces - 1)
        .into_iter()
        .map(|k| horizon * (k + 1) as f64 / 8.0)
        .collect();
    times.push(0.0);
    times.sort_by(f64::total_cmp);
    times.push(horizon);
    let n = times.len() - 1;
    let mut starts = Vec::with_capacity(n * dim);
    let mut ends = Vec::with_capacity(n * dim);
    let mut cur: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
    for _ in 0..n {
        if rng.random_bool(0.5) {
            for c in cur.iter_mut() {
                *c = rng.random_range(-2.0..2.0);
            }
        }
        starts.extend_from_slice(&cur);
        let flat = rng.random_bool(0.4);
        for c in cur.iter_mut() {
            if !flat {
                *c = (*c + rng.random_range(-1.0..1.0)).clamp(-2.0, 2.0);
            }
        }
        ends.extend_from_slice(&cur);
    }
    let terminal = if rng.random_bool(0.2) {
        (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()
    } else {
        cur
    };
    CadlagPath::new(dim, times, starts, ends, terminal).expect("random path is valid")
}

const CHECK_TOL: f64 = 1e-12;

/// Randomized check of nonanticipativity, growth, Lipschitz and càdlàg-in-`t`
/// on `samples` random `(t, ζ, γ)` with `T = 1`.
pub fn check_assumptions(coef: &dyn Coefficient, samples: usize, seed: u64) -> AssumptionReport {
    let dims = coef.dims();
    let horizon = 1.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = Vec::new();
    let e = dims.entries();
    let (mut a, mut b, mut c) = (vec![0.0; e], vec![0.0; e], vec![0.0; e]);
    for _ in 0..samples {
        let zeta = random_path(&mut rng, dims.r, horizon);
        let gamma = random_path(&mut rng, dims.d, horizon);
        let gamma2 = if rng.random_bool(0.5) {
            let bump: Vec<f64> = (0..dims.d).map(|_| rng.random_range(-1e-3..1e-3)).collect();
            gamma
                .add_shift(rng.random_range(0.0..horizon), &bump)
                .expect("shift inside horizon")
        } else {
            random_path(&mut rng, dims.d, horizon)
        };
        let t = if rng.random_bool(0.2) {
            *gamma.breakpoints().get(1).unwrap_or(&0.5)
        } else {
            rng.random_range(0.0..horizon)
        };
        let mut record = |kind, detail: String| violations.push(Violation { kind, t, detail });
        let bound = match coef.bound(t, &zeta) {
            Ok(v) => v,
            Err(err) => {
                record(ViolationKind::Evaluation, err.to_string());
                continue;
            }
        };
        if !(bound > 0.0) {
            record(ViolationKind::NonPositiveBound, format!("C = {bound}"));
        }
        let evals = (|| -> Result<()> {
            coef.eval_into(t, &zeta, &gamma, &mut a)?;
            coef.eval_into(t, &zeta.stop_at(t)?, &gamma.stop_at(t)?, &mut b)?;
            coef.eval_into(t, &zeta, &gamma2, &mut c)?;
            Ok(())
        })();
        if let Err(err) = evals {
            record(ViolationKind::Evaluation, err.to_string());
            continue;
        }
        let fa = op_norm(dims.d, dims.m, &a);
        let gap = op_norm_diff(dims.d, dims.m, &a, &b);
        if gap > CHECK_TOL * (1.0 + fa) {
            record(
                ViolationKind::Nonanticipative,
                format!("|f(t,ζ,γ) - f(t,ζ^t,γ^t)| = {gap:e}"),
            );
        }
        let sup = gamma.sup_norm_until(t).expect("t inside horizon");
        if fa > bound * (1.0 + sup) * (1.0 + CHECK_TOL) + CHECK_TOL {
            record(
                ViolationKind::Growth,
                format!("|f| = {fa} > C (1 + sup|γ|) = {}", bound * (1.0 + sup)),
            );
        }
        let diff = CadlagPath::linear_combine(&[(1.0, &gamma), (-1.0, &gamma2)])
            .and_then(|p| p.sup_norm_until(t))
            .expect("same shape");
        let lip = op_norm_diff(dims.d, dims.m, &a, &c);
        if lip > bound * diff * (1.0 + CHECK_TOL) + CHECK_TOL {
            record(
                ViolationKind::Lipschitz,
                format!("|f(γ1) - f(γ2)| = {lip} > C sup|γ1 - γ2| = {}", bound * diff),
            );
        }
        let probe_t = if t > 0.0 { t } else { 0.5 };
        if let Err(err) = probe_left_limit(coef, probe_t, &zeta, &gamma, &mut b) {
            record(ViolationKind::NotCadlag, err.to_string());
        }
    }
    AssumptionReport {
        coefficient: coef.name(),
        samples,
        violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn z() -> CadlagPath {
        CadlagPath::zero(1, 1.0).unwrap()
    }

    #[test]
    fn time_independent_g_equals_f() {
        let c = ConstantCoefficient::new(Matrix::from_row_major(2, 1, vec![1.0, -2.0]), 1);
        let gamma = CadlagPath::zero(2, 1.0).unwrap();
        let f = eval_f(&c, 0.4, &z(), &gamma).unwrap();
        assert_eq!(eval_g(&c, 0.4, &z(), &gamma).unwrap(), f);
    }

    #[test]
    fn indicator_left_limit() {
        let c = IndicatorCoefficient { t0: 0.5 };
        assert_eq!(eval_g(&c, 0.5, &z(), &z()).unwrap().get(0, 0), 0.0);
        assert_eq!(eval_f(&c, 0.5, &z(), &z()).unwrap().get(0, 0), 1.0);
        // probing agrees with the closed form
        let mut out = [0.0];
        probe_left_limit(&c, 0.5, &z(), &z(), &mut out).unwrap();
        assert_eq!(out[0], 0.0);
    }

    #[test]
    fn probing_matches_path_left_limit() {
        let f = FnCoefficient::new(
            "state",
            Dims::scalar(),
            |t, _, g, out| g.eval_into(t, out),
            |_, _| Ok(1.0),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let gamma = random_path(&mut rng, 1, 1.0);
        for _ in 0..100 {
            let t: f64 = rng.random_range(0.0..1.0);
            let g = eval_g(&f, t, &z(), &gamma).unwrap().get(0, 0);
            let want = gamma.left_limit(t).unwrap()[0];
            assert!((g - want).abs() < 1e-9, "{t}: {g} vs {want}");
        }
        for &t in &gamma.breakpoints()[1..] {
            let g = eval_g(&f, t, &z(), &gamma).unwrap().get(0, 0);
            assert!((g - gamma.left_limit(t).unwrap()[0]).abs() < 1e-9);
        }
    }

    #[test]
    fn non_cadlag_coefficient_is_reported() {
        // oscillates ever faster approaching 0.5 from the left
        let f = FnCoefficient::new(
            "wild",
            Dims::scalar(),
            |t, _, _, out| {
                out[0] = if t < 0.5 { (1.0 / (0.5 - t)).sin() } else { 0.0 };
                Ok(())
            },
            |_, _| Ok(1.0),
        );
        assert!(matches!(eval_g(&f, 0.5, &z(), &z()), Err(Error::NotCadlag { .. })));
    }

    #[test]
    fn caglad_time_grid_points() {
        assert_eq!(caglad_time(10, 0.3), 0.2);
        assert_eq!(caglad_time(10, 0.0), 0.0);
        assert_eq!(caglad_time(4, 0.75), 0.5);
        assert_eq!(caglad_time(10, 0.05), 0.0);
        assert!((caglad_time(10, 0.35) - 0.3).abs() < 1e-15);
        for n in 1..60u64 {
            for k in 0..=n {
                let t = k as f64 / n as f64;
                let s = caglad_time(n, t);
                assert!(s <= t);
                if k > 0 {
                    assert!((s - (k - 1) as f64 / n as f64).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn caglad_approx_converges_to_left_limit() {
        // Lipschitz in t: f = t γ(t) on a continuous γ
        let f = FnCoefficient::new(
            "t-state",
            Dims::scalar(),
            |t, _, g, out| {
                g.eval_into(t, out)?;
                out[0] *= t;
                Ok(())
            },
            |_, _| Ok(1.0),
        );
        let gamma = CadlagPath::affine(1.0, 1.0, 2.0).unwrap();
        let t = 0.37;
        let want = eval_g(&f, t, &z(), &gamma).unwrap().get(0, 0);
        let got = caglad_approx(&f, 10_000_000, t, &z(), &gamma).unwrap().get(0, 0);
        assert!((got - want).abs() < 1e-6);
        assert_eq!(
            caglad_approx(&f, 5, 0.0, &z(), &gamma).unwrap(),
            eval_f(&f, 0.0, &z(), &gamma).unwrap()
        );
    }

    #[test]
    fn registry_parses_known_names() {
        for name in [
            "linear",
            "affine(0.5, -2)",
            "sin",
            "indicator(0.3)",
            "sin-zeta",
            "zero",
            "anticipating-bad",
        ] {
            Registry::parse(name).unwrap();
        }
        assert!(Registry::parse("cubic").is_err());
        assert!(Registry::parse("affine(1)").is_err());
        assert!(Registry::parse("affine(1,x)").is_err());
    }

    #[test]
    fn shipped_coefficients_pass() {
        for name in ["linear", "affine(0.5,-2)", "sin", "indicator(0.3)", "sin-zeta", "zero"] {
            let c = Registry::parse(name).unwrap();
            let report = check_assumptions(&*c, 2000, 11);
            assert!(
                report.passed(),
                "{name}: {:?}",
                &report.violations[..report.violations.len().min(3)]
            );
        }
    }

    #[test]
    fn anticipating_coefficient_is_caught() {
        let report = check_assumptions(&AnticipatingCoefficient, 200, 3);
        assert!(report.count(ViolationKind::Nonanticipative) > 0);
        assert!(report
            .violations
            .iter()
            .any(|v| v.kind == ViolationKind::Nonanticipative && v.t < 1.0));
    }

    #[test]
    fn trace_matches_pointwise_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gamma = random_path(&mut rng, 1, 1.0);
        let zeta = random_path(&mut rng, 1, 1.0);
        let mut knots: Vec<f64> = (0..=50).map(|i| i as f64 / 50.0).collect();
        knots = crate::path::merge_sorted(&knots, gamma.breakpoints());
        knots = crate::path::merge_sorted(&knots, zeta.breakpoints());
        for c in [
            Registry::parse("sin-zeta").unwrap(),
            Registry::parse("affine(1,2)").unwrap(),
        ] {
            let mut v = vec![0.0; knots.len()];
            let mut l = vec![0.0; knots.len()];
            c.trace(&knots, &zeta, &gamma, &mut v, &mut l).unwrap();
            for (k, &u) in knots.iter().enumerate() {
                let f = eval_f(&*c, u, &zeta, &gamma).unwrap().get(0, 0);
                let g = eval_g(&*c, u, &zeta, &gamma).unwrap().get(0, 0);
                assert_eq!(v[k], f, "value at {u}");
                assert_eq!(l[k], g, "left at {u}");
            }
        }
    }
}
