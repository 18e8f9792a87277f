//! The adaptive freezing iteration `Ψ^(n)` and the solver `X = Ψ(H, G, Y)`
//! for `X_t = H_t + ∫_0^t g(s, G, X) dY_s`.
//!
//! Iterate `n` freezes the coefficient path `Γ(t) = f(t, ζ, Ψ^(n-1))` at
//! times `t_j` and re-freezes as soon as `Γ` (or its left limit) has moved
//! by `2^{-n}`; the new iterate is
//! `Z(s) = γ(s) + Σ_j Γ(t_j) (η^{t_{j+1}}(s) - η^{t_j}(s))`.

use serde::{Deserialize, Serialize};

use crate::coefficient::{Coefficient, Dims};
use crate::error::{Error, Result};
use crate::matrix::{mat_vec, op_norm_diff};
use crate::metric::skorokhod_distance_bound;
use crate::path::{check_same_shape, merge_sorted, CadlagPath, Cursor, MatrixPath, Walker};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub n_max: u32,
    /// Stop once `sup_t |Ψ^(n) - Ψ^(n-1)| < tol` and the residual is below `tol`.
    pub tol: f64,
    /// Also report a Skorohod upper bound between consecutive iterates.
    pub report_skorokhod: bool,
    /// Threshold crossings on surrogate pieces shorter than this are placed
    /// at the start of the piece instead of being solved for.
    pub gamma_scan_guard: f64,
    /// Uniform points added to the knots at which `Γ` is sampled.
    pub grid: usize,
    /// Upper limit on the number of freezing times of a single iterate.
    pub max_breakpoints: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            n_max: 40,
            tol: 1e-10,
            report_skorokhod: false,
            gamma_scan_guard: 0.0,
            grid: 64,
            max_breakpoints: 1 << 22,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_max < 1 || self.n_max > 60 {
            return Err(Error::InvalidSpec(format!("n_max {} outside 1..=60", self.n_max)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidSpec(format!("tol {}", self.tol)));
        }
        if !(self.gamma_scan_guard >= 0.0) {
            return Err(Error::InvalidSpec("negative scan guard".into()));
        }
        if self.max_breakpoints < 2 {
            return Err(Error::InvalidSpec("breakpoint budget below 2".into()));
        }
        Ok(())
    }
}

/// One iterate `Ψ^(n)` with its freezing times and frozen coefficient.
#[derive(Clone, Debug)]
pub struct IterationState {
    pub n: u32,
    pub z: CadlagPath,
    /// `0 = t_0 < t_1 < ... < t_J = T`.
    pub breakpoint_times: Vec<f64>,
    /// `Γ(t_j)` for `j < J`, row-major `d x m` each.
    pub frozen: Vec<f64>,
    /// Value of the frozen coefficient at `T`.
    pub frozen_terminal: Vec<f64>,
    pub dims: Dims,
    /// `sup_t |S_t - Γ(t)|` on the sampled coefficient path.
    pub gap_to_f: f64,
    pub dist_to_prev: f64,
    /// `sup_t |R_t - Z_t|`, `R` integrating the unfrozen coefficient.
    pub residual: f64,
    /// `gap_to_f` times the total variation of the driver.
    pub residual_bound: f64,
    pub skorokhod_upper: Option<f64>,
}

impl IterationState {
    /// The frozen coefficient `S` as a step path of `d x m` matrices.
    pub fn s(&self) -> MatrixPath {
        let e = self.dims.entries();
        let path = CadlagPath::from_parts(
            e,
            self.breakpoint_times.clone(),
            self.frozen.clone(),
            self.frozen.clone(),
            self.frozen_terminal.clone(),
        );
        MatrixPath::new(self.dims.d, self.dims.m, path).expect("consistent shape")
    }

    pub fn diagnostics(&self) -> IterationDiagnostics {
        IterationDiagnostics {
            n: self.n,
            breakpoints: self.breakpoint_times.len() - 1,
            gap_to_f: self.gap_to_f,
            dist_to_prev: self.dist_to_prev,
            residual: self.residual,
            residual_bound: self.residual_bound,
            skorokhod_upper: self.skorokhod_upper,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterationDiagnostics {
    pub n: u32,
    pub breakpoints: usize,
    pub gap_to_f: f64,
    pub dist_to_prev: f64,
    pub residual: f64,
    pub residual_bound: f64,
    pub skorokhod_upper: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Termination {
    /// Consecutive iterates closer than `tol`, with residual below `tol`.
    Converged,
    /// `n_max` reached first.
    IterationLimit,
    /// The next iterate would need more freezing times than allowed.
    BreakpointBudget,
}

#[derive(Clone, Debug)]
pub struct Solution {
    /// The last iterate; only a solution in the limit sense if `converged`.
    pub path: CadlagPath,
    pub diagnostics: Vec<IterationDiagnostics>,
    pub converged: bool,
    pub termination: Termination,
}

impl Solution {
    pub fn last_n(&self) -> u32 {
        self.diagnostics.last().map_or(0, |d| d.n)
    }
}

/// Samples `Γ(t) = f(t, ζ, z)` at the union of the breakpoints of `ζ`, `z`
/// and `η` plus a uniform grid, interpolating affinely in between; left
/// limits at the knots are taken from `f(t-, ...)`.
pub fn gamma_surrogate(
    coef: &dyn Coefficient,
    zeta: &CadlagPath,
    z: &CadlagPath,
    eta: &CadlagPath,
    grid: usize,
) -> Result<MatrixPath> {
    let dims = coef.dims();
    let e = dims.entries();
    let horizon = z.horizon();
    let uniform: Vec<f64> = (0..=grid.max(1))
        .map(|i| horizon * i as f64 / grid.max(1) as f64)
        .collect();
    let knots = merge_sorted(
        &merge_sorted(&merge_sorted(z.breakpoints(), eta.breakpoints()), zeta.breakpoints()),
        &uniform,
    );
    let nk = knots.len();
    let mut values = vec![0.0; nk * e];
    let mut lefts = vec![0.0; nk * e];
    coef.trace(&knots, zeta, z, &mut values, &mut lefts)?;
    if let Some(bad) = values.iter().chain(&lefts).find(|v| !v.is_finite()) {
        return Err(Error::InvalidCoefficient(format!("coefficient produced {bad}")));
    }
    let terminal = values[(nk - 1) * e..].to_vec();
    values.truncate((nk - 1) * e);
    lefts.drain(..e);
    let path = CadlagPath::from_parts(e, knots, values, lefts, terminal);
    MatrixPath::new(dims.d, dims.m, path)
}

struct Scan {
    times: Vec<f64>,
    frozen: Vec<f64>,
    terminal: Vec<f64>,
    gap: f64,
}

enum ScanError {
    Budget,
}

/// First `θ ∈ (0, 1]` with `|w + θ v| ≥ h`, given `|w| < h`.
fn crossing(rows: usize, cols: usize, w: &[f64], v: &[f64], h: f64) -> f64 {
    if w.len() == 1 {
        let (w, v) = (w[0], v[0]);
        return if v > 0.0 { (h - w) / v } else { (-h - w) / v };
    }
    if rows == 1 || cols == 1 {
        let (mut a, mut b, mut c) = (0.0, 0.0, -h * h);
        for (wi, vi) in w.iter().zip(v) {
            a += vi * vi;
            b += wi * vi;
            c += wi * wi;
        }
        let disc = (b * b - a * c).max(0.0);
        return if b >= 0.0 {
            -c / (b + disc.sqrt())
        } else {
            (-b + disc.sqrt()) / a
        };
    }
    // operator norm: convex along the segment, bisect on the first crossing
    let at = |th: f64| {
        let p: Vec<f64> = w.iter().zip(v).map(|(a, b)| a + th * b).collect();
        crate::matrix::op_norm(rows, cols, &p)
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if at(mid) >= h {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    hi
}

fn scan(gamma: &MatrixPath, n: u32, guard: f64, budget: usize) -> std::result::Result<Scan, ScanError> {
    if gamma.path().dim() == 1 {
        scan_scalar(gamma.path(), n, guard, budget)
    } else {
        scan_matrix(gamma, n, guard, budget)
    }
}

fn scan_matrix(gamma: &MatrixPath, n: u32, guard: f64, budget: usize) -> std::result::Result<Scan, ScanError> {
    let (rows, cols) = (gamma.rows(), gamma.cols());
    let g = gamma.path();
    let e = g.dim();
    let h = 2f64.powi(-(n as i32));
    let dist = |a: &[f64], b: &[f64]| op_norm_diff(rows, cols, a, b);
    let times_g = g.breakpoints();
    let nseg = g.segment_count();
    let mut times = vec![0.0];
    let mut frozen = g.segment_start(0).to_vec();
    let mut k_cur = frozen.clone();
    let mut last_bp = 0.0;
    let mut gap: f64 = 0.0;
    let mut pending = false;
    let mut p = vec![0.0; e];
    let mut w = vec![0.0; e];
    let mut v = vec![0.0; e];
    for k in 0..nseg {
        let s0 = times_g[k];
        let s1 = times_g[k + 1];
        let a = g.segment_start(k);
        let b = g.segment_end(k);
        if k > 0 && (pending || dist(a, &k_cur) >= h) {
            times.push(s0);
            frozen.extend_from_slice(a);
            k_cur.copy_from_slice(a);
            last_bp = s0;
            if times.len() > budget {
                return Err(ScanError::Budget);
            }
        }
        pending = false;
        let mut u = s0;
        p.copy_from_slice(a);
        loop {
            gap = gap.max(dist(&p, &k_cur));
            let end_gap = dist(b, &k_cur);
            if end_gap < h {
                gap = gap.max(end_gap);
                break;
            }
            let c = if s1 - u < guard && u > last_bp {
                u
            } else {
                for i in 0..e {
                    w[i] = p[i] - k_cur[i];
                    v[i] = b[i] - p[i];
                }
                let th = crossing(rows, cols, &w, &v, h);
                if th >= 1.0 {
                    s1
                } else {
                    let c = u + th * (s1 - u);
                    if c <= last_bp {
                        last_bp.next_up()
                    } else {
                        c
                    }
                }
            };
            if c >= s1 {
                // reached only by the left limit at s1
                gap = gap.max(end_gap);
                pending = true;
                break;
            }
            g.segment_value_into(k, c, &mut p);
            gap = gap.max(dist(&p, &k_cur));
            times.push(c);
            frozen.extend_from_slice(&p);
            k_cur.copy_from_slice(&p);
            last_bp = c;
            u = c;
            if times.len() > budget {
                return Err(ScanError::Budget);
            }
        }
    }
    let term = g.terminal();
    let terminal = if pending || dist(term, &k_cur) >= h {
        term.to_vec()
    } else {
        gap = gap.max(dist(term, &k_cur));
        k_cur
    };
    times.push(g.horizon());
    Ok(Scan {
        times,
        frozen,
        terminal,
        gap,
    })
}

fn scan_scalar(g: &CadlagPath, n: u32, guard: f64, budget: usize) -> std::result::Result<Scan, ScanError> {
    let h = 2f64.powi(-(n as i32));
    let tg = g.breakpoints();
    let (sa, sb) = (g.starts_raw(), g.ends_raw());
    let nseg = sa.len();
    let mut times = vec![0.0];
    let mut frozen = vec![sa[0]];
    let mut kc = sa[0];
    let mut last_bp = 0.0;
    let mut gap: f64 = 0.0;
    let mut pending = false;
    for k in 0..nseg {
        let (s0, s1) = (tg[k], tg[k + 1]);
        let (a, b) = (sa[k], sb[k]);
        if k > 0 && (pending || (a - kc).abs() >= h) {
            times.push(s0);
            frozen.push(a);
            kc = a;
            last_bp = s0;
            if times.len() > budget {
                return Err(ScanError::Budget);
            }
        }
        pending = false;
        let mut u = s0;
        let mut p = a;
        loop {
            gap = gap.max((p - kc).abs());
            let end_gap = (b - kc).abs();
            if end_gap < h {
                gap = gap.max(end_gap);
                break;
            }
            let c = if s1 - u < guard && u > last_bp {
                u
            } else {
                let th = crossing(1, 1, &[p - kc], &[b - p], h);
                if th >= 1.0 {
                    s1
                } else {
                    let c = u + th * (s1 - u);
                    if c <= last_bp {
                        last_bp.next_up()
                    } else {
                        c
                    }
                }
            };
            if c >= s1 {
                gap = gap.max(end_gap);
                pending = true;
                break;
            }
            let theta = if c == s0 { 0.0 } else { (c - s0) / (s1 - s0) };
            p = if theta == 0.0 { a } else { a + (b - a) * theta };
            gap = gap.max((p - kc).abs());
            times.push(c);
            frozen.push(p);
            kc = p;
            last_bp = c;
            u = c;
            if times.len() > budget {
                return Err(ScanError::Budget);
            }
        }
    }
    let term = g.terminal()[0];
    let terminal = if pending || (term - kc).abs() >= h {
        term
    } else {
        gap = gap.max((term - kc).abs());
        kc
    };
    times.push(g.horizon());
    Ok(Scan {
        times,
        frozen,
        terminal: vec![terminal],
        gap,
    })
}

/// Freezing times `t_j` of a sampled coefficient path at level `2^{-n}`:
/// `t_{j+1}` is the first `s ≥ t_j` with `|Γ(s) - Γ(t_j)| ≥ 2^{-n}` or
/// `|Γ(s-) - Γ(t_j)| ≥ 2^{-n}`, and `inf ∅ = T`.
pub fn breakpoints(gamma: &MatrixPath, n: u32) -> Result<Vec<f64>> {
    if gamma.path().starts_raw().iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidCoefficient("non-finite coefficient path".into()));
    }
    match scan(gamma, n, 0.0, usize::MAX) {
        Ok(s) => Ok(s.times),
        Err(ScanError::Budget) => unreachable!("unbounded budget"),
    }
}

/// Compensated running sum.
#[derive(Clone, Copy, Default)]
struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    #[inline]
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// `γ(s) + Σ_j K_j (η^{t_{j+1}}(s) - η^{t_j}(s))`.
fn assemble(gamma: &CadlagPath, eta: &CadlagPath, dims: Dims, scan: &Scan) -> CadlagPath {
    let (d, m) = (dims.d, dims.m);
    let e = d * m;
    let times = &scan.times;
    let jn = times.len() - 1;
    let knots = merge_sorted(&merge_sorted(gamma.breakpoints(), eta.breakpoints()), times);
    let nk = knots.len() - 1;
    let mut starts = Vec::with_capacity(nk * d);
    let mut ends = Vec::with_capacity(nk * d);
    let mut gw = Walker::new(gamma);
    let mut ew = Walker::new(eta);
    let mut acc = vec![Neumaier::default(); d];
    let mut j = 0;
    let mut eta_tj = vec![0.0; m];
    eta.eval_unchecked(0.0, &mut eta_tj);
    let (mut ga, mut gb) = (vec![0.0; d], vec![0.0; d]);
    let (mut ea, mut eb) = (vec![0.0; m], vec![0.0; m]);
    let mut de = vec![0.0; m];
    let mut kv = vec![0.0; d];
    let mut eta_next = vec![0.0; m];
    let close = |j: usize,
                 eta_tj: &mut Vec<f64>,
                 eta_next: &mut Vec<f64>,
                 acc: &mut Vec<Neumaier>,
                 de: &mut Vec<f64>,
                 kv: &mut Vec<f64>| {
        eta.eval_unchecked(times[j + 1], eta_next);
        for i in 0..m {
            de[i] = eta_next[i] - eta_tj[i];
        }
        mat_vec(d, m, &scan.frozen[j * e..(j + 1) * e], de, kv);
        for i in 0..d {
            acc[i].add(kv[i]);
        }
        eta_tj.copy_from_slice(eta_next);
    };
    for w in knots.windows(2) {
        let (u0, u1) = (w[0], w[1]);
        while j + 1 < jn && times[j + 1] <= u0 {
            close(j, &mut eta_tj, &mut eta_next, &mut acc, &mut de, &mut kv);
            j += 1;
        }
        gw.segment(u0, u1, &mut ga, &mut gb);
        ew.segment(u0, u1, &mut ea, &mut eb);
        let kj = &scan.frozen[j * e..(j + 1) * e];
        for i in 0..m {
            de[i] = ea[i] - eta_tj[i];
        }
        mat_vec(d, m, kj, &de, &mut kv);
        for i in 0..d {
            starts.push(ga[i] + acc[i].value() + kv[i]);
        }
        for i in 0..m {
            de[i] = eb[i] - eta_tj[i];
        }
        mat_vec(d, m, kj, &de, &mut kv);
        for i in 0..d {
            ends.push(gb[i] + acc[i].value() + kv[i]);
        }
    }
    while j < jn {
        close(j, &mut eta_tj, &mut eta_next, &mut acc, &mut de, &mut kv);
        j += 1;
    }
    let terminal: Vec<f64> = (0..d).map(|i| gamma.terminal()[i] + acc[i].value()).collect();
    CadlagPath::from_parts(d, knots, starts, ends, terminal)
}

fn assemble_scalar(gamma: &CadlagPath, eta: &CadlagPath, scan: &Scan) -> CadlagPath {
    let times = &scan.times;
    let jn = times.len() - 1;
    let knots = merge_sorted(&merge_sorted(gamma.breakpoints(), eta.breakpoints()), times);
    let nk = knots.len() - 1;
    let mut starts = Vec::with_capacity(nk);
    let mut ends = Vec::with_capacity(nk);
    let (mut gc, mut ec) = (Cursor::new(gamma), Cursor::new(eta));
    let mut acc = Neumaier::default();
    let mut j = 0;
    let mut eta_tj = eta.segment_start(0)[0];
    let mut next = [0.0];
    let mut close = |j: usize, eta_tj: &mut f64, acc: &mut Neumaier| {
        eta.eval_unchecked(times[j + 1], &mut next);
        acc.add(scan.frozen[j] * (next[0] - *eta_tj));
        *eta_tj = next[0];
    };
    for w in knots.windows(2) {
        let (u0, u1) = (w[0], w[1]);
        while j + 1 < jn && times[j + 1] <= u0 {
            close(j, &mut eta_tj, &mut acc);
            j += 1;
        }
        let (ga, gb) = gc.segment(u0, u1);
        let (ea, eb) = ec.segment(u0, u1);
        let kj = scan.frozen[j];
        let base = acc.value();
        starts.push(ga + base + kj * (ea - eta_tj));
        ends.push(gb + base + kj * (eb - eta_tj));
    }
    while j < jn {
        close(j, &mut eta_tj, &mut acc);
        j += 1;
    }
    let terminal = vec![gamma.terminal()[0] + acc.value()];
    CadlagPath::from_parts(1, knots, starts, ends, terminal)
}

fn residual_scalar(g: &CadlagPath, eta: &CadlagPath, scan: &Scan) -> f64 {
    let times = &scan.times;
    let jn = times.len() - 1;
    let knots = merge_sorted(&merge_sorted(g.breakpoints(), eta.breakpoints()), times);
    let (mut gc, mut ec) = (Cursor::new(g), Cursor::new(eta));
    let horizon = eta.horizon();
    let mut acc = 0.0f64;
    let mut best = 0.0f64;
    let mut j = 0;
    for w in knots.windows(2) {
        let (u0, u1) = (w[0], w[1]);
        while j + 1 < jn && times[j + 1] <= u0 {
            j += 1;
        }
        let kj = scan.frozen[j];
        let (ga, gb) = gc.segment(u0, u1);
        let (ea, eb) = ec.segment(u0, u1);
        let len = u1 - u0;
        let slope = (eb - ea) / len;
        let (ca, cb) = ((ga - kj) * slope, (gb - kj) * slope);
        if (ca > 0.0) != (cb > 0.0) && ca != cb {
            let th = ca / (ca - cb);
            best = best.max((acc + len * th * (ca + 0.5 * th * (cb - ca))).abs());
        }
        acc += 0.5 * (ca + cb) * len;
        best = best.max(acc.abs());
        let next = if u1 >= horizon {
            eta.terminal()[0]
        } else if let Some(v) = ec.next_start(u1) {
            v
        } else {
            continue;
        };
        if next != eb {
            acc += (gb - kj) * (next - eb);
            best = best.max(acc.abs());
        }
    }
    best
}

/// `sup_t |∫_0^t (Γ(s-) - S_{s-}) dη_s|`, exact for the affine surrogate.
fn residual(gamma: &MatrixPath, eta: &CadlagPath, scan: &Scan) -> f64 {
    let g = gamma.path();
    let (d, m) = (gamma.rows(), gamma.cols());
    let e = d * m;
    let times = &scan.times;
    let jn = times.len() - 1;
    let knots = merge_sorted(&merge_sorted(g.breakpoints(), eta.breakpoints()), times);
    let mut gw = Walker::new(g);
    let mut ew = Walker::new(eta);
    let (mut ga, mut gb) = (vec![0.0; e], vec![0.0; e]);
    let (mut ea, mut eb) = (vec![0.0; m], vec![0.0; m]);
    let mut slope = vec![0.0; m];
    let (mut ca, mut cb) = (vec![0.0; d], vec![0.0; d]);
    let mut diff = vec![0.0; e];
    let mut acc = vec![0.0; d];
    let mut next = vec![0.0; m];
    let mut jumpv = vec![0.0; d];
    let mut at = vec![0.0; d];
    let mut best: f64 = 0.0;
    let norm = |v: &[f64]| crate::matrix::euclid(v);
    let mut j = 0;
    let nk = knots.len() - 1;
    let eta_times = eta.breakpoints();
    let horizon = eta.horizon();
    for k in 0..nk {
        let (u0, u1) = (knots[k], knots[k + 1]);
        while j + 1 < jn && times[j + 1] <= u0 {
            j += 1;
        }
        let kj = &scan.frozen[j * e..(j + 1) * e];
        gw.segment(u0, u1, &mut ga, &mut gb);
        ew.segment(u0, u1, &mut ea, &mut eb);
        let len = u1 - u0;
        for i in 0..m {
            slope[i] = (eb[i] - ea[i]) / len;
        }
        for i in 0..e {
            diff[i] = ga[i] - kj[i];
        }
        mat_vec(d, m, &diff, &slope, &mut ca);
        for i in 0..e {
            diff[i] = gb[i] - kj[i];
        }
        mat_vec(d, m, &diff, &slope, &mut cb);
        // integrand rate moves affinely from ca to cb across the piece
        for i in 0..d {
            let (a, b) = (ca[i], cb[i]);
            if (a > 0.0) != (b > 0.0) && a != b {
                let th = a / (a - b);
                for q in 0..d {
                    at[q] = acc[q] + len * th * (ca[q] + 0.5 * th * (cb[q] - ca[q]));
                }
                best = best.max(norm(&at));
            }
        }
        for i in 0..d {
            acc[i] += 0.5 * (ca[i] + cb[i]) * len;
        }
        best = best.max(norm(&acc));
        // jump of η at u1 against the left value of the integrand
        let ke = ew.index(u0);
        if u1 >= horizon {
            next.copy_from_slice(eta.terminal());
        } else if eta_times[ke + 1] == u1 {
            next.copy_from_slice(eta.segment_start(ke + 1));
        } else {
            continue;
        }
        let mut jumped = false;
        for i in 0..m {
            slope[i] = next[i] - eb[i];
            jumped |= slope[i] != 0.0;
        }
        if jumped {
            for i in 0..e {
                diff[i] = gb[i] - kj[i];
            }
            mat_vec(d, m, &diff, &slope, &mut jumpv);
            for i in 0..d {
                acc[i] += jumpv[i];
            }
            best = best.max(norm(&acc));
        }
    }
    best
}

fn total_variation(eta: &CadlagPath) -> f64 {
    let n = eta.segment_count();
    let mut tv = 0.0;
    let diff = |a: &[f64], b: &[f64]| crate::matrix::euclid_diff(a, b);
    for k in 0..n {
        tv += diff(eta.segment_end(k), eta.segment_start(k));
        let next = if k + 1 < n {
            eta.segment_start(k + 1)
        } else {
            eta.terminal()
        };
        tv += diff(next, eta.segment_end(k));
    }
    tv
}

fn check_problem(gamma: &CadlagPath, zeta: &CadlagPath, eta: &CadlagPath, coef: &dyn Coefficient) -> Result<Dims> {
    let dims = coef.dims();
    if gamma.dim() != dims.d || eta.dim() != dims.m || zeta.dim() != dims.r {
        return Err(Error::Shape(format!(
            "paths of dims ({}, {}, {}) for coefficient with d = {}, m = {}, r = {}",
            gamma.dim(),
            zeta.dim(),
            eta.dim(),
            dims.d,
            dims.m,
            dims.r
        )));
    }
    let horizon = gamma.horizon();
    if zeta.horizon() != horizon || eta.horizon() != horizon {
        return Err(Error::Shape("paths must share the horizon".into()));
    }
    Ok(dims)
}

enum StepError {
    Budget,
    Other(Error),
}

impl From<Error> for StepError {
    fn from(e: Error) -> Self {
        StepError::Other(e)
    }
}

#[allow(clippy::too_many_arguments)]
fn step_inner(
    gamma: &CadlagPath,
    zeta: &CadlagPath,
    eta: &CadlagPath,
    prev: &CadlagPath,
    coef: &dyn Coefficient,
    n: u32,
    config: &SolverConfig,
    eta_tv: f64,
) -> std::result::Result<IterationState, StepError> {
    let dims = coef.dims();
    let surrogate = gamma_surrogate(coef, zeta, prev, eta, config.grid)?;
    let sc = scan(&surrogate, n, config.gamma_scan_guard, config.max_breakpoints).map_err(|e| match e {
        ScanError::Budget => StepError::Budget,
    })?;
    let scalar = dims.d == 1 && dims.m == 1;
    let z = if scalar {
        assemble_scalar(gamma, eta, &sc)
    } else {
        assemble(gamma, eta, dims, &sc)
    };
    if let Some(bad) = z.starts_raw().iter().chain(z.ends_raw()).find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("iterate {n} produced {bad}")).into());
    }
    let res = if scalar {
        residual_scalar(surrogate.path(), eta, &sc)
    } else {
        residual(&surrogate, eta, &sc)
    };
    drop(surrogate);
    let dist_to_prev = z.sup_distance(prev)?;
    let skorokhod_upper = if config.report_skorokhod {
        Some(skorokhod_distance_bound(&z, prev, 1, z.horizon() / 10.0)?.upper)
    } else {
        None
    };
    Ok(IterationState {
        n,
        z,
        breakpoint_times: sc.times,
        frozen: sc.frozen,
        frozen_terminal: sc.terminal,
        dims,
        gap_to_f: sc.gap,
        dist_to_prev,
        residual: res,
        residual_bound: sc.gap * eta_tv,
        skorokhod_upper,
    })
}

/// One step `Ψ^(n-1) ↦ Ψ^(n)`.
pub fn psi_step(
    gamma: &CadlagPath,
    zeta: &CadlagPath,
    eta: &CadlagPath,
    prev: &CadlagPath,
    coef: &dyn Coefficient,
    n: u32,
    config: &SolverConfig,
) -> Result<IterationState> {
    config.validate()?;
    check_problem(gamma, zeta, eta, coef)?;
    check_same_shape(gamma, prev)?;
    match step_inner(gamma, zeta, eta, prev, coef, n, config, total_variation(eta)) {
        Ok(s) => Ok(s),
        Err(StepError::Other(e)) => Err(e),
        Err(StepError::Budget) => Err(Error::Unsupported(format!(
            "iterate {n} needs more than {} freezing times",
            config.max_breakpoints
        ))),
    }
}

/// Checks `f(t, ζ, γ) = f(t, ζ^t, γ^t)` at a few fixed times.
fn spot_check(coef: &dyn Coefficient, zeta: &CadlagPath, gamma: &CadlagPath) -> Result<()> {
    let dims = coef.dims();
    let e = dims.entries();
    let horizon = gamma.horizon();
    let (mut a, mut b) = (vec![0.0; e], vec![0.0; e]);
    for frac in [0.1, 0.3, 0.5, 0.7, 0.9] {
        let t = horizon * frac;
        coef.eval_into(t, zeta, gamma, &mut a)?;
        coef.eval_into(t, &zeta.stop_at(t)?, &gamma.stop_at(t)?, &mut b)?;
        let gap = op_norm_diff(dims.d, dims.m, &a, &b);
        if gap > 1e-12 * (1.0 + crate::matrix::op_norm(dims.d, dims.m, &a)) {
            return Err(Error::AssumptionViolated(format!(
                "{} depends on the future at t = {t} (gap {gap:e})",
                coef.name()
            )));
        }
    }
    Ok(())
}

/// `Ψ(γ, ζ, η)`: iterates from `Ψ^(0) = γ` until consecutive iterates are
/// within `tol` in the sup norm with residual below `tol`, `n_max` is
/// reached, or the breakpoint budget would be exceeded.
pub fn solve(
    gamma: &CadlagPath,
    zeta: &CadlagPath,
    eta: &CadlagPath,
    coef: &dyn Coefficient,
    config: &SolverConfig,
) -> Result<Solution> {
    solve_with(gamma, zeta, eta, coef, config, |_| {})
}

/// As [`solve`], handing every produced iterate to `observe`.
pub fn solve_with(
    gamma: &CadlagPath,
    zeta: &CadlagPath,
    eta: &CadlagPath,
    coef: &dyn Coefficient,
    config: &SolverConfig,
    mut observe: impl FnMut(&IterationState),
) -> Result<Solution> {
    config.validate()?;
    check_problem(gamma, zeta, eta, coef)?;
    spot_check(coef, zeta, gamma)?;
    let eta_tv = total_variation(eta);
    let mut prev = gamma.clone();
    let mut diagnostics = Vec::new();
    let mut termination = Termination::IterationLimit;
    for n in 1..=config.n_max {
        let state = match step_inner(gamma, zeta, eta, &prev, coef, n, config, eta_tv) {
            Ok(s) => s,
            Err(StepError::Budget) => {
                termination = Termination::BreakpointBudget;
                break;
            }
            Err(StepError::Other(e)) => return Err(e),
        };
        observe(&state);
        diagnostics.push(state.diagnostics());
        let done = settled(&state, config.tol);
        prev = state.z;
        if done {
            termination = Termination::Converged;
            break;
        }
    }
    Ok(Solution {
        path: prev,
        diagnostics,
        converged: termination == Termination::Converged,
        termination,
    })
}

/// Two consecutive iterates within `tol` can coincide at coarse thresholds
/// when no new breakpoint appears, so the residual must agree as well.
fn settled(state: &IterationState, tol: f64) -> bool {
    state.dist_to_prev < tol && state.residual < tol
}

/// Solves several problems sharing one coefficient in lockstep: every
/// problem stops at the same `n`, the first at which all of them have
/// settled.
pub fn solve_jointly(
    problems: &[(&CadlagPath, &CadlagPath, &CadlagPath)],
    coef: &dyn Coefficient,
    config: &SolverConfig,
) -> Result<Vec<Solution>> {
    config.validate()?;
    let mut prev = Vec::with_capacity(problems.len());
    let mut tvs = Vec::with_capacity(problems.len());
    for &(gamma, zeta, eta) in problems {
        check_problem(gamma, zeta, eta, coef)?;
        spot_check(coef, zeta, gamma)?;
        tvs.push(total_variation(eta));
        prev.push(gamma.clone());
    }
    let mut diagnostics = vec![Vec::new(); problems.len()];
    let mut last_ok = vec![false; problems.len()];
    let mut termination = Termination::IterationLimit;
    'outer: for n in 1..=config.n_max {
        let mut next = Vec::with_capacity(problems.len());
        for (i, &(gamma, zeta, eta)) in problems.iter().enumerate() {
            match step_inner(gamma, zeta, eta, &prev[i], coef, n, config, tvs[i]) {
                Ok(s) => next.push(s),
                Err(StepError::Budget) => {
                    termination = Termination::BreakpointBudget;
                    break 'outer;
                }
                Err(StepError::Other(e)) => return Err(e),
            }
        }
        for (i, state) in next.into_iter().enumerate() {
            diagnostics[i].push(state.diagnostics());
            last_ok[i] = settled(&state, config.tol);
            prev[i] = state.z;
        }
        if last_ok.iter().all(|&ok| ok) {
            termination = Termination::Converged;
            break;
        }
    }
    Ok(prev
        .into_iter()
        .zip(diagnostics)
        .zip(last_ok)
        .map(|((path, diagnostics), converged)| Solution {
            path,
            diagnostics,
            converged,
            termination: if converged { Termination::Converged } else { termination },
        })
        .collect())
}

/// Event-driven reference solution for coefficients `f = g(γ(t))` with
/// scalar state and driver: classical RK4 with `substeps` steps on each
/// piece between breakpoints of `γ` and `η`, exact updates
/// `X += ΔH + g(X_-) ΔY` at jumps.
pub fn reference_integrate(
    coef: &dyn Coefficient,
    gamma: &CadlagPath,
    zeta: &CadlagPath,
    eta: &CadlagPath,
    substeps: usize,
) -> Result<CadlagPath> {
    let Some(g) = coef.markov() else {
        return Err(Error::OracleUnsupported(coef.name()));
    };
    check_problem(gamma, zeta, eta, coef)?;
    if substeps == 0 {
        return Err(Error::InvalidSpec("substeps must be positive".into()));
    }
    let knots = merge_sorted(gamma.breakpoints(), eta.breakpoints());
    let nk = knots.len() - 1;
    let mut gw = Walker::new(gamma);
    let mut ew = Walker::new(eta);
    let (mut ga, mut gb, mut ea, mut eb) = ([0.0], [0.0], [0.0], [0.0]);
    let mut times = Vec::with_capacity(nk * substeps + 1);
    let mut starts = Vec::with_capacity(nk * substeps);
    let mut ends = Vec::with_capacity(nk * substeps);
    let mut x = gamma.segment_start(0)[0];
    let (mut gn, mut en) = ([0.0], [0.0]);
    for k in 0..nk {
        let (u0, u1) = (knots[k], knots[k + 1]);
        gw.segment(u0, u1, &mut ga, &mut gb);
        ew.segment(u0, u1, &mut ea, &mut eb);
        let len = u1 - u0;
        let (ch, ce) = ((gb[0] - ga[0]) / len, (eb[0] - ea[0]) / len);
        let rhs = |x: f64| ch + g(x) * ce;
        let h = len / substeps as f64;
        for i in 0..substeps {
            let t = if i == 0 { u0 } else { u0 + h * i as f64 };
            times.push(t);
            starts.push(x);
            let k1 = rhs(x);
            let k2 = rhs(x + 0.5 * h * k1);
            let k3 = rhs(x + 0.5 * h * k2);
            let k4 = rhs(x + h * k3);
            x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            ends.push(x);
        }
        if k + 1 < nk {
            gamma.eval_unchecked(u1, &mut gn);
            eta.eval_unchecked(u1, &mut en);
        } else {
            gn[0] = gamma.terminal()[0];
            en[0] = eta.terminal()[0];
        }
        x += (gn[0] - gb[0]) + g(x) * (en[0] - eb[0]);
    }
    times.push(gamma.horizon());
    CadlagPath::new(1, times, starts, ends, vec![x])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficient::{ConstantCoefficient, MarkovCoefficient};
    use crate::levy::{LevySpec, StochasticExponential};
    use crate::matrix::Matrix;

    fn scalar_gamma(values: &[(f64, f64)], end: f64) -> MatrixPath {
        // piecewise affine through (t, value) with a final value at T = 1
        let times: Vec<f64> = values.iter().map(|v| v.0).chain([1.0]).collect();
        let starts: Vec<f64> = values.iter().map(|v| v.1).collect();
        let mut ends: Vec<f64> = values.iter().skip(1).map(|v| v.1).collect();
        ends.push(end);
        MatrixPath::scalar(CadlagPath::new(1, times, starts, ends, vec![end]).unwrap()).unwrap()
    }

    #[test]
    fn constant_gamma_has_no_breakpoints() {
        let g = MatrixPath::scalar(CadlagPath::constant(1.0, &[3.0]).unwrap()).unwrap();
        assert_eq!(breakpoints(&g, 5).unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn unit_ramp_breakpoints() {
        let g = scalar_gamma(&[(0.0, 0.0)], 1.0);
        assert_eq!(breakpoints(&g, 2).unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn jump_breakpoint() {
        let g = MatrixPath::scalar(CadlagPath::indicator(1.0, 0.5).unwrap()).unwrap();
        assert_eq!(breakpoints(&g, 2).unwrap(), vec![0.0, 0.5, 1.0]);
        // an affine piece reaching the threshold only in its left limit
        let g = scalar_gamma(&[(0.0, 0.0), (0.5, 5.0)], 5.0);
        let g = MatrixPath::scalar(
            CadlagPath::new(1, vec![0.0, 0.5, 1.0], vec![0.0, 0.25], vec![0.25, 0.25], vec![0.25]).unwrap(),
        )
        .unwrap_or(g);
        assert_eq!(breakpoints(&g, 2).unwrap(), vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn vector_crossing_is_exact() {
        let w = [0.1, 0.0];
        let v = [0.0, 1.0];
        let th = crossing(2, 1, &w, &v, 0.5);
        assert!(((0.1f64).hypot(th) - 0.5).abs() < 1e-15);
        let thm = crossing(2, 2, &[0.1, 0.0, 0.0, 0.0], &[0.0, 0.0, 0.0, 1.0], 0.5);
        assert!((thm - 0.5).abs() < 1e-13);
    }

    fn unit() -> CadlagPath {
        CadlagPath::constant(1.0, &[1.0]).unwrap()
    }

    #[test]
    fn zero_coefficient_reproduces_h() {
        let spec = LevySpec::fixed_jumps(0.5, 3.0, 0.1);
        let eta = spec.sample_path(1.0, 2).unwrap().path;
        let h = CadlagPath::affine(1.0, 1.0, -0.3).unwrap();
        let zero = ConstantCoefficient::zero(1, 1, 1);
        let sol = solve(&h, &unit(), &eta, &zero, &SolverConfig::default()).unwrap();
        assert!(sol.converged);
        assert_eq!(sol.last_n(), 1);
        assert_eq!(sol.path.sup_distance(&h).unwrap(), 0.0);
        let d = &sol.diagnostics[0];
        assert_eq!((d.gap_to_f, d.dist_to_prev, d.residual), (0.0, 0.0, 0.0));
    }

    #[test]
    fn constant_coefficient_telescopes() {
        let spec = LevySpec::fixed_jumps(0.5, 3.0, 0.1);
        let eta = spec.sample_path(1.0, 4).unwrap().path;
        let k = ConstantCoefficient::new(Matrix::scalar(2.5), 1);
        let h = unit();
        let cfg = SolverConfig::default();
        let s1 = psi_step(&h, &unit(), &eta, &h, &k, 1, &cfg).unwrap();
        let want = CadlagPath::linear_combine(&[(1.0, &h), (2.5, &eta)]).unwrap();
        assert!(s1.z.sup_distance(&want).unwrap() < 1e-15);
        let s2 = psi_step(&h, &unit(), &eta, &s1.z, &k, 2, &cfg).unwrap();
        assert_eq!(s2.z, s1.z);
        assert_eq!(s1.residual, 0.0);
    }

    #[test]
    fn linear_equation_matches_stochastic_exponential() {
        let spec = LevySpec::fixed_jumps(0.5, 1.0, 0.1);
        let eta = spec.sample_path(1.0, 8).unwrap().path;
        let lin = MarkovCoefficient::linear();
        let cfg = SolverConfig {
            tol: 1e-6,
            ..SolverConfig::default()
        };
        let mut gaps_ok = true;
        let sol = solve_with(&unit(), &unit(), &eta, &lin, &cfg, |s| {
            gaps_ok &= s.gap_to_f <= 2f64.powi(-(s.n as i32)) + 1e-12;
        })
        .unwrap();
        assert!(gaps_ok);
        assert!(sol.converged);
        let exact = StochasticExponential::new(&eta, 1.0).unwrap();
        assert!(exact.sup_error(&sol.path) < 1e-6);
    }

    #[test]
    fn reference_matches_exponential_without_jumps() {
        let eta = CadlagPath::affine(1.0, 0.0, 0.7).unwrap();
        let x = reference_integrate(&MarkovCoefficient::linear(), &unit(), &unit(), &eta, 10_000).unwrap();
        for t in [0.0, 0.25, 0.5, 1.0] {
            assert!((x.eval(t).unwrap()[0] - (0.7 * t).exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn reference_is_exact_for_pure_jumps() {
        let spec = LevySpec::fixed_jumps(0.0, 5.0, -0.3);
        let eta = spec.sample_path(1.0, 1).unwrap().path;
        let x = reference_integrate(&MarkovCoefficient::linear(), &unit(), &unit(), &eta, 1).unwrap();
        let exact = StochasticExponential::new(&eta, 1.0).unwrap();
        assert!(exact.sup_error(&x) < 1e-15);
    }

    #[test]
    fn reference_rejects_path_dependent_coefficients() {
        let eta = CadlagPath::affine(1.0, 0.0, 0.7).unwrap();
        let c = crate::coefficient::SinZetaCoefficient;
        assert!(matches!(
            reference_integrate(&c, &unit(), &unit(), &eta, 10),
            Err(Error::OracleUnsupported(_))
        ));
    }

    #[test]
    fn anticipating_coefficient_is_rejected() {
        let eta = CadlagPath::affine(1.0, 0.0, 0.7).unwrap();
        let h = CadlagPath::affine(1.0, 1.0, 1.0).unwrap();
        let c = crate::coefficient::AnticipatingCoefficient;
        assert!(matches!(
            solve(&h, &unit(), &eta, &c, &SolverConfig::default()),
            Err(Error::AssumptionViolated(_))
        ));
    }

    #[test]
    fn scalar_kernels_match_general_ones() {
        let spec = LevySpec::fixed_jumps(0.5, 4.0, 0.3);
        let eta = spec.sample_path(1.0, 21).unwrap().path;
        let h = CadlagPath::affine(1.0, 1.0, 0.4).unwrap();
        let sin = MarkovCoefficient::sin();
        let mut prev = h.clone();
        for n in 1..9 {
            let sur = gamma_surrogate(&sin, &unit(), &prev, &eta, 16).unwrap();
            let (a, b) = match (
                scan_scalar(sur.path(), n, 0.0, usize::MAX),
                scan_matrix(&sur, n, 0.0, usize::MAX),
            ) {
                (Ok(a), Ok(b)) => (a, b),
                _ => unreachable!(),
            };
            assert_eq!((&a.times, &a.frozen, &a.terminal), (&b.times, &b.frozen, &b.terminal));
            assert_eq!(a.gap, b.gap);
            let za = assemble_scalar(&h, &eta, &a);
            assert_eq!(za, assemble(&h, &eta, sin.dims(), &a));
            let (ra, rb) = (residual_scalar(sur.path(), &eta, &a), residual(&sur, &eta, &a));
            assert!((ra - rb).abs() <= 1e-15 * (1.0 + rb), "{ra} {rb}");
            prev = za;
        }
    }

    #[test]
    fn budget_stops_iteration() {
        let spec = LevySpec::fixed_jumps(0.5, 1.0, 0.1);
        let eta = spec.sample_path(1.0, 8).unwrap().path;
        let cfg = SolverConfig {
            max_breakpoints: 1000,
            ..SolverConfig::default()
        };
        let sol = solve(&unit(), &unit(), &eta, &MarkovCoefficient::linear(), &cfg).unwrap();
        assert_eq!(sol.termination, Termination::BreakpointBudget);
        assert!(!sol.converged);
        assert!(sol.diagnostics.last().unwrap().breakpoints <= 1000);
    }
}
