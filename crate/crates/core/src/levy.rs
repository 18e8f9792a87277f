//! Finite-activity Lévy drivers `Y_t = b t + Σ_{s≤t} ΔY_s` (optionally with a
//! truncation of small jumps and their compensator), their martingale plus
//! finite-variation decomposition, dominating processes and θ-functionals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::matrix::{euclid, mat_vec_add};
use crate::path::{merge_sorted, CadlagPath, MatrixPath, Walker};

/// Law of each component of a jump (components are i.i.d.).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum JumpLaw {
    Normal { mean: f64, std: f64 },
    Fixed { size: f64 },
    Uniform { low: f64, high: f64 },
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn std_normal_pdf(z: f64) -> f64 {
    if z.is_infinite() {
        return 0.0;
    }
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

impl JumpLaw {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            JumpLaw::Normal { mean, std } => mean.is_finite() && std.is_finite() && std >= 0.0,
            JumpLaw::Fixed { size } => size.is_finite(),
            JumpLaw::Uniform { low, high } => low.is_finite() && high.is_finite() && low <= high,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidSpec(format!("jump law parameters {self:?}")))
        }
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        match *self {
            JumpLaw::Normal { mean, std } => {
                let z: f64 = rand_distr::StandardNormal.sample(rng);
                mean + std * z
            }
            JumpLaw::Fixed { size } => size,
            JumpLaw::Uniform { low, high } => {
                if low == high {
                    low
                } else {
                    rng.random_range(low..high)
                }
            }
        }
    }

    /// `(∫_I dF, ∫_I x dF, ∫_I x² dF)` over `I = [u, v]`.
    fn interval_moments(&self, u: f64, v: f64) -> [f64; 3] {
        if !(u < v) {
            return [0.0; 3];
        }
        match *self {
            JumpLaw::Fixed { size } => {
                if size >= u && size <= v {
                    [1.0, size, size * size]
                } else {
                    [0.0; 3]
                }
            }
            JumpLaw::Uniform { low, high } => {
                if low == high {
                    return JumpLaw::Fixed { size: low }.interval_moments(u, v);
                }
                let (a, b) = (u.max(low), v.min(high));
                if !(a < b) {
                    return [0.0; 3];
                }
                let w = high - low;
                [
                    (b - a) / w,
                    (b * b - a * a) / (2.0 * w),
                    (b * b * b - a * a * a) / (3.0 * w),
                ]
            }
            JumpLaw::Normal { mean, std } => {
                if std == 0.0 {
                    return JumpLaw::Fixed { size: mean }.interval_moments(u, v);
                }
                let (zu, zv) = ((u - mean) / std, (v - mean) / std);
                let p = std_normal_cdf(zv) - std_normal_cdf(zu);
                let (fu, fv) = (std_normal_pdf(zu), std_normal_pdf(zv));
                let zf = |z: f64, f: f64| if z.is_infinite() { 0.0 } else { z * f };
                let m1 = mean * p + std * (fu - fv);
                let m2 = (mean * mean + std * std) * p
                    + 2.0 * mean * std * (fu - fv)
                    + std * std * (zf(zu, fu) - zf(zv, fv));
                [p, m1, m2]
            }
        }
    }

    /// Moments over `{x : lo < |x| ≤ hi}` for a scalar jump.
    fn band_moments(&self, lo: f64, hi: f64) -> [f64; 3] {
        let pos = self.interval_moments(lo, hi);
        let neg = self.interval_moments(-hi, -lo);
        let mut out = [pos[0] + neg[0], pos[1] + neg[1], pos[2] + neg[2]];
        // atoms sitting exactly on the excluded endpoints
        if let JumpLaw::Fixed { size } = *self {
            let a = size.abs();
            out = if a > lo && a <= hi {
                [1.0, size, size * size]
            } else {
                [0.0; 3]
            };
        }
        out
    }
}

/// Specification of a finite-activity Lévy driver on `R^m`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevySpec {
    /// Drift `b` per unit time; its length is the driver dimension `m`.
    pub drift: Vec<f64>,
    /// Jump rate per unit time.
    pub intensity: f64,
    pub jump_law: JumpLaw,
    /// Jumps with `|x| ≤ truncation` are dropped.
    #[serde(default)]
    pub truncation: f64,
    /// Subtract `intensity · E[x 1_{truncation < |x| ≤ 1}]` from the drift.
    #[serde(default)]
    pub compensate: bool,
}

impl LevySpec {
    pub fn new(drift: Vec<f64>, intensity: f64, jump_law: JumpLaw) -> Result<Self> {
        let spec = Self {
            drift,
            intensity,
            jump_law,
            truncation: 0.0,
            compensate: false,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Scalar driver `b t` plus compound Poisson jumps of fixed size.
    pub fn fixed_jumps(drift: f64, intensity: f64, size: f64) -> Self {
        Self::new(vec![drift], intensity, JumpLaw::Fixed { size }).expect("valid parameters")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(s).map_err(|e| Error::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn dim(&self) -> usize {
        self.drift.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.drift.is_empty() || self.drift.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidSpec("drift must be a non-empty finite vector".into()));
        }
        if !(self.intensity >= 0.0 && self.intensity.is_finite()) {
            return Err(Error::InvalidSpec(format!("intensity {}", self.intensity)));
        }
        if !(self.truncation >= 0.0 && self.truncation.is_finite()) {
            return Err(Error::InvalidSpec(format!("truncation {}", self.truncation)));
        }
        self.jump_law.validate()?;
        let vector = self.dim() > 1 && !matches!(self.jump_law, JumpLaw::Fixed { .. });
        if vector && (self.truncation > 0.0 || self.compensate) {
            return Err(Error::InvalidSpec(
                "truncation and compensation of vector jumps need a fixed jump law".into(),
            ));
        }
        Ok(())
    }

    /// Per-component `(P, E[x_i 1_S], E[x_i² 1_S])` for jumps with
    /// `lo < |x| ≤ hi`, `|x|` the Euclidean norm of the jump vector.
    fn norm_band(&self, lo: f64, hi: f64) -> Result<[f64; 3]> {
        let m = self.dim();
        if m == 1 {
            return Ok(self.jump_law.band_moments(lo, hi));
        }
        match self.jump_law {
            JumpLaw::Fixed { size } => {
                let norm = size.abs() * (m as f64).sqrt();
                Ok(if norm > lo && norm <= hi {
                    [1.0, size, size * size]
                } else {
                    [0.0; 3]
                })
            }
            _ if lo == 0.0 && hi.is_infinite() => Ok(self.jump_law.interval_moments(f64::NEG_INFINITY, f64::INFINITY)),
            _ => Err(Error::DecompositionUnavailable(
                "norm-restricted moments of vector jumps need a fixed jump law".into(),
            )),
        }
    }

    /// Rate of jumps that survive truncation.
    pub fn effective_intensity(&self) -> Result<f64> {
        let [p, _, _] = self.norm_band(self.truncation, f64::INFINITY)?;
        Ok(self.intensity * p)
    }

    /// Slope of the driver between jumps.
    pub fn effective_drift(&self) -> Vec<f64> {
        if !self.compensate || self.intensity == 0.0 {
            return self.drift.clone();
        }
        let [_, m1, _] = self.norm_band(self.truncation, 1.0).expect("validated specification");
        self.drift.iter().map(|b| b - self.intensity * m1).collect()
    }

    /// Compensator slope `κ` and predictable quadratic variation rate of the
    /// small-jump martingale, per component.
    pub fn small_jump_rates(&self) -> Result<(f64, f64)> {
        if self.intensity == 0.0 {
            return Ok((0.0, 0.0));
        }
        let [_, m1, m2] = self.norm_band(self.truncation, 1.0)?;
        Ok((self.intensity * m1, self.intensity * m2))
    }

    /// Draws a jump vector, or `None` if it is truncated away.
    fn draw_jump(&self, rng: &mut impl Rng) -> Option<Vec<f64>> {
        let x: Vec<f64> = (0..self.dim()).map(|_| self.jump_law.sample(rng)).collect();
        (euclid(&x) > self.truncation).then_some(x)
    }

    /// Exact sample on `[0, T]` from `(seed, stream 0)`.
    pub fn sample_path(&self, horizon: f64, seed: u64) -> Result<DriverSample> {
        self.sample_path_stream(horizon, seed, 0)
    }

    /// Exact sample on `[0, T]`; all randomness comes from `(seed, stream)`.
    pub fn sample_path_stream(&self, horizon: f64, seed: u64, stream: u64) -> Result<DriverSample> {
        self.validate()?;
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Domain { t: horizon, horizon });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let mean = self.intensity * horizon;
        let count = if mean > 0.0 {
            let pois = Poisson::new(mean).map_err(|e| Error::InvalidSpec(e.to_string()))?;
            pois.sample(&mut rng) as usize
        } else {
            0
        };
        let mut times: Vec<f64> = Vec::with_capacity(count);
        while times.len() < count {
            let u: f64 = rng.random();
            if u > 0.0 {
                times.push(u * horizon);
            }
        }
        times.sort_by(f64::total_cmp);
        let mut jumps: Vec<(f64, Vec<f64>)> = Vec::with_capacity(count);
        for t in times {
            let Some(x) = self.draw_jump(&mut rng) else { continue };
            match jumps.last_mut() {
                Some((s, prev)) if *s == t => {
                    for (p, v) in prev.iter_mut().zip(&x) {
                        *p += v;
                    }
                }
                _ => jumps.push((t, x)),
            }
        }
        let path = match driver_parts(self, horizon, &jumps) {
            Ok((m, a)) => CadlagPath::linear_combine(&[(1.0, &m), (1.0, &a)])?,
            Err(Error::DecompositionUnavailable(_)) => build_driver(&self.effective_drift(), horizon, &jumps),
            Err(e) => return Err(e),
        };
        Ok(DriverSample {
            path,
            spec: self.clone(),
            seed,
            stream,
            jumps,
        })
    }
}

/// `M = Σ_{|x| ≤ 1} x - κ t` and `A = Σ_{|x| > 1} x + (b + κ) t` on the jump
/// grid, `b` the effective drift.
fn driver_parts(spec: &LevySpec, horizon: f64, jumps: &[(f64, Vec<f64>)]) -> Result<(CadlagPath, CadlagPath)> {
    let d = spec.dim();
    let (kappa, _) = spec.small_jump_rates()?;
    let slope: Vec<f64> = spec.effective_drift().iter().map(|b| b + kappa).collect();
    let mut times = vec![0.0];
    times.extend(jumps.iter().map(|j| j.0).filter(|&t| t < horizon));
    times.push(horizon);
    let n = times.len() - 1;
    let (mut ms, mut me) = (Vec::with_capacity(n * d), Vec::with_capacity(n * d));
    let (mut as_, mut ae) = (Vec::with_capacity(n * d), Vec::with_capacity(n * d));
    let mut small = vec![0.0; d];
    let mut large = vec![0.0; d];
    let mut j = 0;
    let absorb = |j: &mut usize, upto: f64, small: &mut Vec<f64>, large: &mut Vec<f64>| {
        while *j < jumps.len() && jumps[*j].0 <= upto {
            let x = &jumps[*j].1;
            let acc = if euclid(x) <= 1.0 { &mut *small } else { &mut *large };
            for (a, v) in acc.iter_mut().zip(x) {
                *a += v;
            }
            *j += 1;
        }
    };
    for k in 0..n {
        absorb(&mut j, times[k], &mut small, &mut large);
        for i in 0..d {
            ms.push(small[i] - kappa * times[k]);
            me.push(small[i] - kappa * times[k + 1]);
            as_.push(large[i] + slope[i] * times[k]);
            ae.push(large[i] + slope[i] * times[k + 1]);
        }
    }
    absorb(&mut j, horizon, &mut small, &mut large);
    let mt: Vec<f64> = (0..d).map(|i| small[i] - kappa * horizon).collect();
    let at: Vec<f64> = (0..d).map(|i| large[i] + slope[i] * horizon).collect();
    Ok((
        CadlagPath::new(d, times.clone(), ms, me, mt)?,
        CadlagPath::new(d, times, as_, ae, at)?,
    ))
}

/// `b t + Σ jumps`, starting at 0.
fn build_driver(slope: &[f64], horizon: f64, jumps: &[(f64, Vec<f64>)]) -> CadlagPath {
    let m = slope.len();
    let mut times = vec![0.0];
    let mut starts = Vec::with_capacity((jumps.len() + 1) * m);
    let mut ends = Vec::with_capacity((jumps.len() + 1) * m);
    let mut cur = vec![0.0; m];
    let mut last = 0.0;
    let push_segment = |cur: &mut Vec<f64>, from: f64, to: f64, starts: &mut Vec<f64>, ends: &mut Vec<f64>| {
        starts.extend_from_slice(cur);
        for (c, b) in cur.iter_mut().zip(slope) {
            *c += b * (to - from);
        }
        ends.extend_from_slice(cur);
    };
    let mut terminal_jump = None;
    for (t, x) in jumps {
        if *t >= horizon {
            terminal_jump = Some(x);
            continue;
        }
        push_segment(&mut cur, last, *t, &mut starts, &mut ends);
        for (c, v) in cur.iter_mut().zip(x) {
            *c += v;
        }
        times.push(*t);
        last = *t;
    }
    push_segment(&mut cur, last, horizon, &mut starts, &mut ends);
    times.push(horizon);
    if let Some(x) = terminal_jump {
        for (c, v) in cur.iter_mut().zip(x) {
            *c += v;
        }
    }
    CadlagPath::new(m, times, starts, ends, cur).expect("driver path is valid")
}

/// A sampled driver path with its jump provenance.
#[derive(Clone, Debug)]
pub struct DriverSample {
    pub path: CadlagPath,
    pub spec: LevySpec,
    pub seed: u64,
    pub stream: u64,
    /// `(time, size)` of every jump that made it into the path.
    pub jumps: Vec<(f64, Vec<f64>)>,
}

impl DriverSample {
    /// `(M, A)` with `M + A` equal to the path bit for bit.
    pub fn decompose(&self) -> Result<(CadlagPath, CadlagPath)> {
        driver_parts(&self.spec, self.path.horizon(), &self.jumps)
    }

    pub fn dominating_process(&self) -> Result<DominatingProcess> {
        let (m, a) = self.decompose()?;
        let (_, rate) = self.spec.small_jump_rates()?;
        DominatingProcess::new(m, a, &vec![rate; self.spec.dim()])
    }
}

/// Decomposes a driver path `Y = M + A` where `M` is the compensated sum of
/// jumps with `|x| ≤ 1`. The path must be consistent with `spec`: it starts
/// at 0, moves with the effective drift between jumps, and every jump
/// survives truncation.
pub fn decompose(path: &CadlagPath, spec: &LevySpec) -> Result<(CadlagPath, CadlagPath)> {
    spec.validate()?;
    if path.dim() != spec.dim() {
        return Err(Error::Shape(format!(
            "path of dim {} for driver of dim {}",
            path.dim(),
            spec.dim()
        )));
    }
    let unavailable = |why: String| Err(Error::DecompositionUnavailable(why));
    if path.segment_start(0).iter().any(|&v| v != 0.0) {
        return unavailable("driver paths start at 0".into());
    }
    let slope = spec.effective_drift();
    for k in 0..path.segment_count() {
        for (c, b) in path.segment_slope(k).iter().zip(&slope) {
            if (c - b).abs() > 1e-9 * (1.0 + b.abs()) {
                return unavailable(format!("segment {k} has slope {c}, expected {b}"));
            }
        }
    }
    let jumps = path.jumps();
    for (t, x) in &jumps {
        if euclid(x) <= spec.truncation {
            return unavailable(format!("jump at {t} is below the truncation level"));
        }
        if spec.intensity == 0.0 {
            return unavailable(format!("jump at {t} for a driver without jumps"));
        }
    }
    decompose_jumps(path, spec, &jumps)
}

/// Splits `y` into `(m', a)` with `m'` within a few ulps of `m` and
/// `m' + a == y` in floating point.
fn exact_split(y: f64, m: f64) -> (f64, f64) {
    for shift in [0i32, 1, -1, 2, -2, 3, -3] {
        // a tie at the rounding boundary is left by moving m
        let mut mm = m;
        for _ in 0..shift.unsigned_abs() {
            mm = if shift > 0 { mm.next_up() } else { mm.next_down() };
        }
        let a = y - mm;
        if mm + a == y {
            return (mm, a);
        }
        let (mut lo, mut hi) = (a, a);
        for _ in 0..4 {
            lo = lo.next_down();
            hi = hi.next_up();
            if mm + lo == y {
                return (mm, lo);
            }
            if mm + hi == y {
                return (mm, hi);
            }
        }
    }
    (m, y - m)
}

fn decompose_jumps(path: &CadlagPath, spec: &LevySpec, jumps: &[(f64, Vec<f64>)]) -> Result<(CadlagPath, CadlagPath)> {
    let d = path.dim();
    let (kappa, _) = spec.small_jump_rates()?;
    let times = path.breakpoints().to_vec();
    let n = times.len() - 1;
    let horizon = path.horizon();
    let mut m_starts = vec![0.0; n * d];
    let mut m_ends = vec![0.0; n * d];
    let mut m_term = vec![0.0; d];
    let mut acc = vec![0.0; d];
    let mut j = 0;
    let small = |x: &[f64]| euclid(x) <= 1.0;
    for k in 0..n {
        while j < jumps.len() && jumps[j].0 <= times[k] {
            if small(&jumps[j].1) {
                for (a, v) in acc.iter_mut().zip(&jumps[j].1) {
                    *a += v;
                }
            }
            j += 1;
        }
        for i in 0..d {
            m_starts[k * d + i] = acc[i] - kappa * times[k];
            m_ends[k * d + i] = acc[i] - kappa * times[k + 1];
        }
    }
    while j < jumps.len() {
        if jumps[j].0 <= horizon && small(&jumps[j].1) {
            for (a, v) in acc.iter_mut().zip(&jumps[j].1) {
                *a += v;
            }
        }
        j += 1;
    }
    for i in 0..d {
        m_term[i] = acc[i] - kappa * horizon;
    }
    let split = |ys: &[f64], ms: &mut [f64]| -> Vec<f64> {
        ys.iter()
            .zip(ms.iter_mut())
            .map(|(&y, m)| {
                let (mm, a) = exact_split(y, *m);
                *m = mm;
                a
            })
            .collect()
    };
    let a_starts = split(path.starts_raw(), &mut m_starts);
    let a_ends = split(path.ends_raw(), &mut m_ends);
    let a_term = split(path.terminal(), &mut m_term);
    let m_path = CadlagPath::new(d, times.clone(), m_starts, m_ends, m_term)?;
    let a_path = CadlagPath::new(d, times, a_starts, a_ends, a_term)?;
    Ok((m_path, a_path))
}

/// `V = Σ_i 2√2 ([M_i]_t + <M_i>_t)^{1/2} + √2 |A_i|_t`, the minimal
/// dominating process (`B ≡ 0`).
#[derive(Clone, Debug)]
pub struct DominatingProcess {
    v: CadlagPath,
    m: CadlagPath,
    a: CadlagPath,
    quadratic_variation: CadlagPath,
    predictable_rate: Vec<f64>,
    total_variation: CadlagPath,
}

const DEFAULT_V_GRID: usize = 256;

/// Running sum of squared jumps, per component.
fn quadratic_variation(m: &CadlagPath) -> Result<CadlagPath> {
    let d = m.dim();
    let mut steps = Vec::new();
    let mut acc = vec![0.0; d];
    for (t, x) in m.jumps() {
        for i in 0..d {
            acc[i] += x[i] * x[i];
        }
        steps.push((t, acc.clone()));
    }
    CadlagPath::step(m.horizon(), &vec![0.0; d], &steps)
}

/// Running total variation, per component.
fn total_variation(a: &CadlagPath) -> Result<CadlagPath> {
    let d = a.dim();
    let n = a.segment_count();
    let mut starts = Vec::with_capacity(n * d);
    let mut ends = Vec::with_capacity(n * d);
    let mut acc = vec![0.0; d];
    for k in 0..n {
        if k > 0 {
            for i in 0..d {
                acc[i] += (a.segment_start(k)[i] - a.segment_end(k - 1)[i]).abs();
            }
        }
        starts.extend_from_slice(&acc);
        for i in 0..d {
            acc[i] += (a.segment_end(k)[i] - a.segment_start(k)[i]).abs();
        }
        ends.extend_from_slice(&acc);
    }
    for i in 0..d {
        acc[i] += (a.terminal()[i] - a.segment_end(n - 1)[i]).abs();
    }
    CadlagPath::new(d, a.breakpoints().to_vec(), starts, ends, acc)
}

impl DominatingProcess {
    /// `predictable_rate[i]` is the slope of `<M_i, M_i>`.
    pub fn new(m: CadlagPath, a: CadlagPath, predictable_rate: &[f64]) -> Result<Self> {
        Self::with_grid(m, a, predictable_rate, DEFAULT_V_GRID)
    }

    /// As [`Self::new`], materializing `V` on the breakpoints of `M` and `A`
    /// plus `grid` uniform points.
    pub fn with_grid(m: CadlagPath, a: CadlagPath, predictable_rate: &[f64], grid: usize) -> Result<Self> {
        crate::path::check_same_shape(&m, &a)?;
        if predictable_rate.len() != m.dim() || predictable_rate.iter().any(|r| !(*r >= 0.0)) {
            return Err(Error::Shape("one nonnegative rate per component".into()));
        }
        let qv = quadratic_variation(&m)?;
        let tv = total_variation(&a)?;
        let horizon = m.horizon();
        let uniform: Vec<f64> = (0..=grid.max(1))
            .map(|i| horizon * i as f64 / grid.max(1) as f64)
            .collect();
        let knots = merge_sorted(&merge_sorted(&uniform, qv.breakpoints()), tv.breakpoints());
        let mut me = Self {
            v: CadlagPath::zero(1, horizon)?,
            m,
            a,
            quadratic_variation: qv,
            predictable_rate: predictable_rate.to_vec(),
            total_variation: tv,
        };
        let n = knots.len() - 1;
        let mut starts = Vec::with_capacity(n);
        let mut ends = Vec::with_capacity(n);
        for k in 0..n {
            starts.push(me.value_at(knots[k])?);
            ends.push(me.left_value_at(knots[k + 1])?);
        }
        let terminal = me.value_at(horizon)?;
        me.v = CadlagPath::new(1, knots, starts, ends, vec![terminal])?;
        Ok(me)
    }

    fn combine(&self, qv: &[f64], t: f64, tv: &[f64]) -> f64 {
        let mut v = 0.0;
        for i in 0..qv.len() {
            let inner = qv[i] + self.predictable_rate[i] * t;
            v += 2.0 * std::f64::consts::SQRT_2 * inner.sqrt() + std::f64::consts::SQRT_2 * tv[i];
        }
        v
    }

    /// Exact `V_t`.
    pub fn value_at(&self, t: f64) -> Result<f64> {
        let qv = self.quadratic_variation.eval(t)?;
        let tv = self.total_variation.eval(t)?;
        Ok(self.combine(&qv, t, &tv))
    }

    /// Exact `V_{t-}`.
    pub fn left_value_at(&self, t: f64) -> Result<f64> {
        let qv = self.quadratic_variation.left_limit(t)?;
        let tv = self.total_variation.left_limit(t)?;
        Ok(self.combine(&qv, t, &tv))
    }

    /// `V` as a path, exact at its breakpoints and affine in between.
    pub fn v(&self) -> &CadlagPath {
        &self.v
    }

    pub fn martingale(&self) -> &CadlagPath {
        &self.m
    }

    pub fn finite_variation(&self) -> &CadlagPath {
        &self.a
    }

    pub fn quadratic_variation(&self) -> &CadlagPath {
        &self.quadratic_variation
    }

    /// `<M, M>_t = rate · t`, per component.
    pub fn predictable_qv(&self) -> Result<CadlagPath> {
        let horizon = self.m.horizon();
        let end: Vec<f64> = self.predictable_rate.iter().map(|r| r * horizon).collect();
        CadlagPath::new(
            self.predictable_rate.len(),
            vec![0.0, horizon],
            vec![0.0; self.predictable_rate.len()],
            end.clone(),
            end,
        )
    }

    pub fn total_variation_a(&self) -> &CadlagPath {
        &self.total_variation
    }
}

/// True if the path never decreases, in every component, including across
/// jumps; comparisons are exact.
pub fn is_nondecreasing(p: &CadlagPath) -> bool {
    let n = p.segment_count();
    let d = p.dim();
    for k in 0..n {
        let (a, b) = (p.segment_start(k), p.segment_end(k));
        if (0..d).any(|i| b[i] < a[i]) {
            return false;
        }
        let next = if k + 1 < n {
            p.segment_start(k + 1)
        } else {
            p.terminal()
        };
        if (0..d).any(|i| next[i] < b[i]) {
            return false;
        }
    }
    true
}

/// `θ_t(P, V) = (∫_0^t |P_s|² dV²_s)^{1/2} + ∫_0^t |P_s| dV_s` for a step
/// integrand `P`, with `P` taken from the left on atoms of `V`.
pub fn theta(p: &CadlagPath, v: &CadlagPath, t: f64) -> Result<f64> {
    if v.dim() != 1 {
        return Err(Error::Shape("V must be scalar".into()));
    }
    if p.horizon() != v.horizon() {
        return Err(Error::Shape("P and V horizons differ".into()));
    }
    if !p.is_step() {
        return Err(Error::Unsupported("θ needs a step integrand".into()));
    }
    if !is_nondecreasing(v) {
        return Err(Error::InvalidPath("V must be nondecreasing".into()));
    }
    let horizon = v.horizon();
    if !(0.0..=horizon).contains(&t) {
        return Err(Error::Domain { t, horizon });
    }
    let knots = merge_sorted(&merge_sorted(p.breakpoints(), v.breakpoints()), &[t]);
    let mut pw = Walker::new(p);
    let d = p.dim();
    let mut pa = vec![0.0; d];
    let mut pb = vec![0.0; d];
    let (mut sq, mut lin) = (0.0, 0.0);
    for w in knots.windows(2) {
        if w[0] >= t {
            break;
        }
        pw.segment(w[0], w[1], &mut pa, &mut pb);
        let size = euclid(&pa);
        let v0 = v.eval(w[0])?[0];
        let v1 = v.eval(w[1])?[0];
        sq += size * size * (v1 * v1 - v0 * v0);
        lin += size * (v1 - v0);
    }
    Ok(sq.max(0.0).sqrt() + lin)
}

/// Pathwise `∫_0^t P_{s-} dY_s` for a step matrix integrand `P` (`d x m`) and
/// a piecewise-affine driver `Y` (dimension `m`).
pub fn stochastic_integral(p: &MatrixPath, y: &CadlagPath) -> Result<CadlagPath> {
    let (d, m) = (p.rows(), p.cols());
    if y.dim() != m {
        return Err(Error::Shape(format!(
            "integrand has {m} columns, driver dim {}",
            y.dim()
        )));
    }
    let pp = p.path();
    if pp.horizon() != y.horizon() {
        return Err(Error::Shape("integrand and driver horizons differ".into()));
    }
    if !pp.is_step() {
        return Err(Error::Unsupported("stochastic integral needs a step integrand".into()));
    }
    let knots = merge_sorted(pp.breakpoints(), y.breakpoints());
    let n = knots.len() - 1;
    let mut pw = Walker::new(pp);
    let mut yw = Walker::new(y);
    let (mut pa, mut pb) = (vec![0.0; d * m], vec![0.0; d * m]);
    let (mut ya, mut yb) = (vec![0.0; m], vec![0.0; m]);
    let mut next_y = vec![0.0; m];
    let mut starts = Vec::with_capacity(n * d);
    let mut ends = Vec::with_capacity(n * d);
    let mut cur = vec![0.0; d];
    let mut dy = vec![0.0; m];
    for k in 0..n {
        pw.segment(knots[k], knots[k + 1], &mut pa, &mut pb);
        yw.segment(knots[k], knots[k + 1], &mut ya, &mut yb);
        starts.extend_from_slice(&cur);
        for i in 0..m {
            dy[i] = yb[i] - ya[i];
        }
        mat_vec_add(d, m, &pa, &dy, &mut cur);
        ends.extend_from_slice(&cur);
        // jump of Y at the right end, integrated against P(u-)
        if k + 1 < n {
            y.eval_into(knots[k + 1], &mut next_y)?;
        } else {
            next_y.copy_from_slice(y.terminal());
        }
        for i in 0..m {
            dy[i] = next_y[i] - yb[i];
        }
        if dy.iter().any(|&v| v != 0.0) {
            mat_vec_add(d, m, &pa, &dy, &mut cur);
        }
    }
    CadlagPath::new(d, knots, starts, ends, cur)
}

/// The Doléans-Dade exponential `X = ξ + ∫ X_{s-} dY_s` of a scalar
/// piecewise-affine driver: `X` grows like `exp(c (t - s))` on a segment of
/// slope `c` and is multiplied by `1 + ΔY` at each jump.
#[derive(Clone, Debug)]
pub struct StochasticExponential {
    times: Vec<f64>,
    slopes: Vec<f64>,
    starts: Vec<f64>,
    ends: Vec<f64>,
    terminal: f64,
}

impl StochasticExponential {
    pub fn new(y: &CadlagPath, xi: f64) -> Result<Self> {
        if y.dim() != 1 {
            return Err(Error::Shape("scalar driver expected".into()));
        }
        let n = y.segment_count();
        let times = y.breakpoints().to_vec();
        let mut slopes = Vec::with_capacity(n);
        let mut starts = Vec::with_capacity(n);
        let mut ends = Vec::with_capacity(n);
        let mut x = xi;
        for k in 0..n {
            let c = (y.segment_end(k)[0] - y.segment_start(k)[0]) / (times[k + 1] - times[k]);
            slopes.push(c);
            starts.push(x);
            x *= (c * (times[k + 1] - times[k])).exp();
            ends.push(x);
            let next = if k + 1 < n {
                y.segment_start(k + 1)[0]
            } else {
                y.terminal()[0]
            };
            x *= 1.0 + (next - y.segment_end(k)[0]);
        }
        Ok(Self {
            times,
            slopes,
            starts,
            ends,
            terminal: x,
        })
    }

    fn on_segment(&self, k: usize, t: f64) -> f64 {
        if t == self.times[k + 1] {
            return self.ends[k];
        }
        self.starts[k] * (self.slopes[k] * (t - self.times[k])).exp()
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.slopes.len();
        if t >= self.times[n] {
            return self.terminal;
        }
        let k = self.times[..n].partition_point(|&s| s <= t).saturating_sub(1);
        self.on_segment(k, t)
    }

    pub fn left_limit(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return self.starts[0];
        }
        let n = self.slopes.len();
        let k = self.times[..n].partition_point(|&s| s < t) - 1;
        self.on_segment(k, t)
    }

    /// `max |Z - X|` over the breakpoints of `z` (values and left limits) and
    /// segment midpoints.
    pub fn sup_error(&self, z: &CadlagPath) -> f64 {
        let times = z.breakpoints();
        let n = z.segment_count();
        let mut err: f64 = (z.terminal()[0] - self.terminal).abs();
        for k in 0..n {
            let (a, b) = (z.segment_start(k)[0], z.segment_end(k)[0]);
            let mid = 0.5 * (times[k] + times[k + 1]);
            err = err
                .max((a - self.eval(times[k])).abs())
                .max((b - self.left_limit(times[k + 1])).abs())
                .max((0.5 * (a + b) - self.eval(mid)).abs());
        }
        err
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_jumps_is_a_line() {
        let spec = LevySpec::new(vec![0.7], 0.0, JumpLaw::Fixed { size: 1.0 }).unwrap();
        let s = spec.sample_path(2.0, 9).unwrap();
        assert_eq!(s.path, CadlagPath::affine(2.0, 0.0, 0.7).unwrap());
    }

    #[test]
    fn sampling_is_deterministic() {
        let spec = LevySpec::new(vec![0.1], 3.0, JumpLaw::Normal { mean: 0.0, std: 1.0 }).unwrap();
        let a = spec.sample_path(1.0, 42).unwrap();
        let b = spec.sample_path(1.0, 42).unwrap();
        assert_eq!(a.path, b.path);
        let c = spec.sample_path_stream(1.0, 42, 1).unwrap();
        assert_ne!(a.path, c.path);
    }

    #[test]
    fn normal_moments_match_quadrature() {
        let law = JumpLaw::Normal { mean: 0.3, std: 0.8 };
        let [p, m1, m2] = law.band_moments(0.2, 1.0);
        let (mut qp, mut q1, mut q2) = (0.0, 0.0, 0.0);
        let n = 200_000;
        let (lo, hi) = (-8.0, 8.0);
        let h = (hi - lo) / n as f64;
        for i in 0..n {
            let x = lo + (i as f64 + 0.5) * h;
            let a = x.abs();
            if a > 0.2 && a <= 1.0 {
                let f = (-0.5 * ((x - 0.3) / 0.8f64).powi(2)).exp() / (0.8 * (2.0 * std::f64::consts::PI).sqrt());
                qp += f * h;
                q1 += x * f * h;
                q2 += x * x * f * h;
            }
        }
        assert!((p - qp).abs() < 1e-6 && (m1 - q1).abs() < 1e-6 && (m2 - q2).abs() < 1e-6);
    }

    #[test]
    fn uniform_moments() {
        let law = JumpLaw::Uniform { low: -1.0, high: 3.0 };
        let [p, m1, m2] = law.band_moments(0.5, 2.0);
        // (0.5, 2] and [-1, -0.5)
        assert!((p - (1.5 + 0.5) / 4.0).abs() < 1e-15);
        assert!((m1 - ((4.0 - 0.25) / 8.0 + (0.25 - 1.0) / 8.0)).abs() < 1e-15);
        assert!((m2 - ((8.0 - 0.125) / 12.0 + (-0.125 + 1.0) / 12.0)).abs() < 1e-15);
    }

    #[test]
    fn decompose_reconstructs_exactly() {
        let spec = LevySpec {
            drift: vec![0.2],
            intensity: 5.0,
            jump_law: JumpLaw::Normal { mean: 0.1, std: 1.5 },
            truncation: 0.05,
            compensate: true,
        };
        for seed in 0..50 {
            let s = spec.sample_path(1.0, seed).unwrap();
            let (m, a) = s.decompose().unwrap();
            let back = CadlagPath::linear_combine(&[(1.0, &m), (1.0, &a)]).unwrap();
            assert_eq!(back.sup_distance(&s.path).unwrap(), 0.0);
            assert_eq!(m.eval(0.0).unwrap(), vec![0.0]);
            let (m2, a2) = decompose(&s.path, &spec).unwrap();
            assert!(m2.sup_distance(&m).unwrap() < 1e-12);
            assert!(a2.sup_distance(&a).unwrap() < 1e-12);
        }
    }

    #[test]
    fn decompose_without_jumps() {
        let spec = LevySpec::new(vec![0.5], 0.0, JumpLaw::Fixed { size: 0.1 }).unwrap();
        let s = spec.sample_path(1.0, 1).unwrap();
        let (m, a) = s.decompose().unwrap();
        assert_eq!(m, CadlagPath::zero(1, 1.0).unwrap());
        assert_eq!(a, CadlagPath::affine(1.0, 0.0, 0.5).unwrap());
    }

    #[test]
    fn decompose_rejects_foreign_paths() {
        let spec = LevySpec::fixed_jumps(0.5, 1.0, 0.1);
        let p = CadlagPath::affine(1.0, 0.0, 0.3).unwrap();
        assert!(matches!(decompose(&p, &spec), Err(Error::DecompositionUnavailable(_))));
    }

    #[test]
    fn dominating_process_of_a_line() {
        let m = CadlagPath::zero(1, 1.0).unwrap();
        let a = CadlagPath::affine(1.0, 0.0, 0.8).unwrap();
        let dp = DominatingProcess::new(m, a, &[0.0]).unwrap();
        for t in [0.0, 0.3, 1.0] {
            assert!((dp.value_at(t).unwrap() - std::f64::consts::SQRT_2 * 0.8 * t).abs() < 1e-15);
        }
        assert!(is_nondecreasing(dp.v()));
    }

    #[test]
    fn dominating_process_identity_holds_at_breakpoints() {
        let spec = LevySpec::fixed_jumps(0.5, 1.0, 0.1);
        let s = spec.sample_path(1.0, 3).unwrap();
        let dp = s.dominating_process().unwrap();
        let (_, rate) = spec.small_jump_rates().unwrap();
        assert!((rate - 0.01).abs() < 1e-17);
        for &t in dp.v().breakpoints() {
            let qv = dp.quadratic_variation().eval(t).unwrap()[0];
            let tv = dp.total_variation_a().eval(t).unwrap()[0];
            let formula = 2.0 * 2f64.sqrt() * (qv + rate * t).sqrt() + 2f64.sqrt() * tv;
            assert_eq!(dp.v().eval(t).unwrap()[0], formula);
        }
    }

    #[test]
    fn theta_examples() {
        let v = CadlagPath::affine(1.0, 0.0, 1.0).unwrap();
        let one = CadlagPath::constant(1.0, &[1.0]).unwrap();
        let zero = CadlagPath::zero(1, 1.0).unwrap();
        assert_eq!(theta(&zero, &v, 1.0).unwrap(), 0.0);
        assert!((theta(&one, &v, 1.0).unwrap() - 2.0).abs() < 1e-15);
        let down = CadlagPath::affine(1.0, 1.0, -1.0).unwrap();
        assert!(theta(&one, &down, 1.0).is_err());
    }

    #[test]
    fn stochastic_integral_examples() {
        let spec = LevySpec::new(vec![0.3], 4.0, JumpLaw::Uniform { low: -1.0, high: 1.0 }).unwrap();
        let y = spec.sample_path(1.0, 5).unwrap().path;
        let ident = MatrixPath::scalar(CadlagPath::constant(1.0, &[1.0]).unwrap()).unwrap();
        let i = stochastic_integral(&ident, &y).unwrap();
        assert!(i.sup_distance(&y).unwrap() < 1e-12);
        let p = MatrixPath::scalar(CadlagPath::indicator(1.0, 0.5).unwrap()).unwrap();
        let t = CadlagPath::affine(1.0, 0.0, 1.0).unwrap();
        let r = stochastic_integral(&p, &t).unwrap();
        assert!((r.eval(1.0).unwrap()[0] - 0.5).abs() < 1e-15);
        assert_eq!(r.eval(0.4).unwrap()[0], 0.0);
    }

    #[test]
    fn spec_json_round_trip() {
        let json = r#"{"drift":[0.5],"intensity":1.0,"jump_law":{"kind":"fixed","size":0.1}}"#;
        let spec = LevySpec::from_json(json).unwrap();
        assert_eq!(spec, LevySpec::fixed_jumps(0.5, 1.0, 0.1));
        assert!(LevySpec::from_json(
            r#"{"drift":[0.5],"intensity":1.0,"jump_law":{"kind":"fixed","size":0.1},"extra":1}"#
        )
        .is_err());
        assert!(
            LevySpec::from_json(r#"{"drift":[0.5],"intensity":-1.0,"jump_law":{"kind":"fixed","size":0.1}}"#).is_err()
        );
        let bad_vector = LevySpec {
            drift: vec![0.0, 0.0],
            intensity: 1.0,
            jump_law: JumpLaw::Normal { mean: 0.0, std: 1.0 },
            truncation: 0.1,
            compensate: false,
        };
        assert!(bad_vector.validate().is_err());
    }

    #[test]
    fn stochastic_exponential_of_drift_and_jump() {
        let y = CadlagPath::new(1, vec![0.0, 0.5, 1.0], vec![0.0, 0.35], vec![0.25, 0.6], vec![0.6]).unwrap();
        let x = StochasticExponential::new(&y, 1.0).unwrap();
        let want = (0.5f64 * 0.5).exp() * 1.1 * (0.5f64 * 0.5).exp();
        assert!((x.eval(1.0) - want).abs() < 1e-14);
        assert!((x.left_limit(0.5) - (0.25f64).exp()).abs() < 1e-15);
    }
}
