//! Time warps and the Skorohod metric
//! `d^S(x, y) = inf_λ max(‖λ‖, sup_t |x(t) - y(λ(t))|)`
//! with `‖λ‖ = sup_{s<t} |log((λ(t) - λ(s)) / (t - s))|`.

use crate::error::{Error, Result};
use crate::matrix::euclid_diff;
use crate::path::{check_same_shape, merge_sorted, CadlagPath, Walker};

/// Strictly increasing piecewise-linear bijection of `[0, T]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeWarp {
    knots: Vec<f64>,
    images: Vec<f64>,
}

impl TimeWarp {
    pub fn new(knots: Vec<f64>, images: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 || knots.len() != images.len() {
            return Err(Error::InvalidWarp(format!(
                "{} knots and {} images",
                knots.len(),
                images.len()
            )));
        }
        let horizon = *knots.last().unwrap();
        if knots[0] != 0.0 || images[0] != 0.0 {
            return Err(Error::InvalidWarp("warp must fix 0".into()));
        }
        if *images.last().unwrap() != horizon || !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidWarp("warp must fix the horizon".into()));
        }
        for (k, i) in knots.windows(2).zip(images.windows(2)) {
            if !(k[1] > k[0]) || !(i[1] > i[0]) {
                return Err(Error::InvalidWarp(format!(
                    "degenerate segment [{}, {}] -> [{}, {}]",
                    k[0], k[1], i[0], i[1]
                )));
            }
        }
        Ok(Self { knots, images })
    }

    pub fn identity(horizon: f64) -> Self {
        Self {
            knots: vec![0.0, horizon],
            images: vec![0.0, horizon],
        }
    }

    pub fn horizon(&self) -> f64 {
        *self.knots.last().unwrap()
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn images(&self) -> &[f64] {
        &self.images
    }

    fn lookup(from: &[f64], to: &[f64], t: f64) -> f64 {
        let n = from.len() - 1;
        let k = from[..n].partition_point(|&s| s <= t).saturating_sub(1);
        if t == from[k] {
            return to[k];
        }
        if t == from[k + 1] {
            return to[k + 1];
        }
        to[k] + (to[k + 1] - to[k]) * ((t - from[k]) / (from[k + 1] - from[k]))
    }

    pub fn eval(&self, t: f64) -> Result<f64> {
        let horizon = self.horizon();
        if !(0.0..=horizon).contains(&t) {
            return Err(Error::Domain { t, horizon });
        }
        Ok(Self::lookup(&self.knots, &self.images, t))
    }

    pub fn inverse_eval(&self, w: f64) -> Result<f64> {
        let horizon = self.horizon();
        if !(0.0..=horizon).contains(&w) {
            return Err(Error::Domain { t: w, horizon });
        }
        Ok(Self::lookup(&self.images, &self.knots, w))
    }

    pub fn inverse(&self) -> Self {
        Self {
            knots: self.images.clone(),
            images: self.knots.clone(),
        }
    }

    /// `self ∘ inner`, i.e. `t ↦ self(inner(t))`.
    pub fn compose(&self, inner: &TimeWarp) -> Result<Self> {
        if self.horizon() != inner.horizon() {
            return Err(Error::Shape("warp horizons differ".into()));
        }
        let pre: Vec<f64> = self
            .knots
            .iter()
            .map(|&u| Self::lookup(&inner.images, &inner.knots, u))
            .collect();
        let pts = merge_sorted(&inner.knots, &pre);
        let mut knots = Vec::with_capacity(pts.len());
        let mut images = Vec::with_capacity(pts.len());
        for t in pts {
            let w = Self::lookup(&self.knots, &self.images, Self::lookup(&inner.knots, &inner.images, t));
            if let (Some(&lt), Some(&lw)) = (knots.last(), images.last()) {
                if !(t > lt && w > lw) {
                    continue;
                }
            }
            knots.push(t);
            images.push(w);
        }
        let horizon = self.horizon();
        *knots.last_mut().unwrap() = horizon;
        *images.last_mut().unwrap() = horizon;
        Self::new(knots, images)
    }

    /// `max |log slope|` over segments.
    pub fn norm(&self) -> f64 {
        self.knots
            .windows(2)
            .zip(self.images.windows(2))
            .map(|(k, i)| ((i[1] - i[0]) / (k[1] - k[0])).ln().abs())
            .fold(0.0, f64::max)
    }
}

pub fn warp_norm(warp: &TimeWarp) -> f64 {
    warp.norm()
}

/// `t ↦ path(λ(t))`, with preimages of the path's breakpoints inserted.
pub fn apply_warp(path: &CadlagPath, warp: &TimeWarp) -> Result<CadlagPath> {
    if path.horizon() != warp.horizon() {
        return Err(Error::Shape(format!(
            "path horizon {} and warp horizon {}",
            path.horizon(),
            warp.horizon()
        )));
    }
    let ws = merge_sorted(warp.images(), path.breakpoints());
    let d = path.dim();
    let mut ts = Vec::with_capacity(ws.len());
    let mut wk = Vec::with_capacity(ws.len());
    let mut j = 0;
    let (knots, images) = (warp.knots(), warp.images());
    for &w in &ws {
        while j + 1 < images.len() - 1 && images[j + 1] <= w {
            j += 1;
        }
        let t = if w == images[j] {
            knots[j]
        } else if w == images[j + 1] {
            knots[j + 1]
        } else {
            knots[j] + (knots[j + 1] - knots[j]) * ((w - images[j]) / (images[j + 1] - images[j]))
        };
        if let Some(&last) = ts.last() {
            if !(t > last) {
                continue;
            }
        }
        ts.push(t);
        wk.push(w);
    }
    let n = ts.len() - 1;
    let mut starts = vec![0.0; n * d];
    let mut ends = vec![0.0; n * d];
    let mut walker = Walker::new(path);
    for k in 0..n {
        let (a, b) = (&mut starts[k * d..(k + 1) * d], &mut ends[k * d..(k + 1) * d]);
        walker.segment(wk[k], wk[k + 1], a, b);
    }
    CadlagPath::new(d, ts, starts, ends, path.terminal().to_vec())
}

/// `max(‖λ‖, sup_t |x(t) - y(λ(t))|)`.
pub fn warp_objective(x: &CadlagPath, y: &CadlagPath, warp: &TimeWarp) -> Result<f64> {
    let norm = warp.norm();
    let yw = apply_warp(y, warp)?;
    Ok(norm.max(x.sup_distance(&yw)?))
}

pub const DEFAULT_JUMP_CAP: usize = 12;

/// Exact Skorohod distance together with a near-optimal warp.
#[derive(Clone, Debug)]
pub struct ExactSkorokhod {
    pub value: f64,
    /// A warp whose objective is within a tiny margin of `value`.
    pub warp: TimeWarp,
}

struct Steps {
    jumps: Vec<f64>,
    values: Vec<Vec<f64>>,
    terminal: Vec<f64>,
}

fn steps_of(p: &CadlagPath, cap: usize) -> Result<Steps> {
    if !p.is_step() {
        return Err(Error::Unsupported(
            "exact Skorohod distance needs pure step paths".into(),
        ));
    }
    let n = p.segment_count();
    if n - 1 > cap {
        return Err(Error::Unsupported(format!("{} jumps exceed the cap of {cap}", n - 1)));
    }
    Ok(Steps {
        jumps: p.breakpoints()[1..n].to_vec(),
        values: (0..n).map(|k| p.segment_start(k).to_vec()).collect(),
        terminal: p.terminal().to_vec(),
    })
}

/// Placement of one jump time `p` of `x` under the warp: `λ(p) ∈ [lo, hi]`.
#[derive(Clone, Copy, Debug)]
struct Pin {
    p: f64,
    lo: f64,
    hi: f64,
}

/// Smallest `δ` such that some warp with `‖λ‖ ≤ δ` honours both pins.
fn pair_cost(a: Pin, b: Pin) -> f64 {
    let dp = b.p - a.p;
    let widest = b.hi - a.lo;
    if widest <= 0.0 {
        return f64::INFINITY;
    }
    let narrowest = b.lo - a.hi;
    let mut c: f64 = 0.0;
    if narrowest > dp {
        c = (narrowest / dp).ln();
    }
    if widest < dp {
        c = c.max((dp / widest).ln());
    }
    c
}

struct Search<'a> {
    x: &'a Steps,
    y: &'a Steps,
    qs: Vec<f64>,
    horizon: f64,
    floor: f64,
    best: f64,
    best_pins: Option<Vec<Pin>>,
    best_cost: f64,
    pins: Vec<Pin>,
}

impl Search<'_> {
    fn run(&mut self, i: usize, j: usize, value: f64, cost: f64) {
        let value = value.max(euclid_diff(&self.x.values[i], &self.y.values[j]));
        if value.max(cost) >= self.best {
            return;
        }
        let (a, b) = (self.x.jumps.len(), self.y.jumps.len());
        if i == a && j == b {
            let end = Pin {
                p: self.horizon,
                lo: self.horizon,
                hi: self.horizon,
            };
            let cost = self.pins.iter().fold(cost, |c, &pin| c.max(pair_cost(pin, end)));
            let total = value.max(cost);
            if total < self.best {
                self.best = total;
                self.best_cost = cost;
                self.best_pins = Some(self.pins.clone());
            }
            return;
        }
        if i < a && j < b {
            let q = self.qs[j + 1];
            self.place(i, j + 1, value, cost, q, q);
        }
        if i < a {
            let (lo, hi) = (self.qs[j], self.qs[j + 1]);
            self.place(i, j, value, cost, lo, hi);
        }
        if j < b {
            self.run(i, j + 1, value, cost);
        }
    }

    fn place(&mut self, i: usize, j_next: usize, value: f64, cost: f64, lo: f64, hi: f64) {
        let pin = Pin {
            p: self.x.jumps[i],
            lo,
            hi,
        };
        let cost = self.pins.iter().fold(cost, |c, &prev| c.max(pair_cost(prev, pin)));
        if cost >= self.best {
            return;
        }
        self.pins.push(pin);
        self.run(i + 1, j_next, value, cost);
        self.pins.pop();
    }
}

/// Builds a warp with `‖λ‖ ≤ delta` through the given pins, choosing
/// interior images where there is room.
fn realize(pins: &[Pin], horizon: f64, delta: f64) -> Option<TimeWarp> {
    let mut all = vec![Pin {
        p: 0.0,
        lo: 0.0,
        hi: 0.0,
    }];
    all.extend_from_slice(pins);
    all.push(Pin {
        p: horizon,
        lo: horizon,
        hi: horizon,
    });
    let (shrink, grow) = ((-delta).exp(), delta.exp());
    let mut feas = vec![(0.0, 0.0); all.len()];
    for k in 1..all.len() {
        let dp = all[k].p - all[k - 1].p;
        let lo = all[k].lo.max(feas[k - 1].0 + dp * shrink);
        let hi = all[k].hi.min(feas[k - 1].1 + dp * grow);
        if lo > hi {
            return None;
        }
        feas[k] = (lo, hi);
    }
    let mut w = vec![0.0; all.len()];
    *w.last_mut().unwrap() = horizon;
    for k in (1..all.len() - 1).rev() {
        let dp = all[k + 1].p - all[k].p;
        let lo = feas[k].0.max(w[k + 1] - dp * grow);
        let hi = feas[k].1.min(w[k + 1] - dp * shrink);
        w[k] = if lo <= hi { 0.5 * (lo + hi) } else { feas[k].0 };
    }
    let knots: Vec<f64> = all.iter().map(|p| p.p).collect();
    TimeWarp::new(knots, w).ok()
}

/// Exact `d^S` between pure step paths.
pub fn skorokhod_distance_exact(x: &CadlagPath, y: &CadlagPath) -> Result<f64> {
    Ok(skorokhod_exact_with(x, y, DEFAULT_JUMP_CAP)?.value)
}

/// Exact `d^S` between step paths with at most `cap` jumps each.
///
/// Every warp induces an interleaving of the jump times of `x` with the
/// preimages of those of `y` (some of them coinciding). The value term only
/// depends on the interleaving; the smallest warp norm compatible with it is
/// a closed-form maximum over pairs of constrained jump times. The search
/// enumerates interleavings depth first with branch and bound.
pub fn skorokhod_exact_with(x: &CadlagPath, y: &CadlagPath, cap: usize) -> Result<ExactSkorokhod> {
    check_same_shape(x, y)?;
    let sx = steps_of(x, cap)?;
    let sy = steps_of(y, cap)?;
    let horizon = x.horizon();
    let mut qs = vec![0.0];
    qs.extend_from_slice(&sy.jumps);
    qs.push(horizon);
    let floor = euclid_diff(&sx.terminal, &sy.terminal);
    let identity = x.sup_distance(y)?;
    let mut search = Search {
        x: &sx,
        y: &sy,
        qs,
        horizon,
        floor,
        best: identity,
        best_pins: None,
        best_cost: 0.0,
        pins: vec![Pin {
            p: 0.0,
            lo: 0.0,
            hi: 0.0,
        }],
    };
    search.run(0, 0, search.floor, 0.0);
    let warp = match &search.best_pins {
        None => TimeWarp::identity(horizon),
        Some(pins) => {
            let margin = 1e-9 * (1.0 + search.best_cost);
            realize(&pins[1..], horizon, search.best_cost + margin).unwrap_or_else(|| TimeWarp::identity(horizon))
        }
    };
    Ok(ExactSkorokhod {
        value: search.best,
        warp,
    })
}

#[derive(Clone, Debug)]
pub struct SkorokhodBound {
    pub lower: f64,
    pub upper: f64,
    /// The warp attaining `upper`.
    pub warp: TimeWarp,
}

fn grid_points(horizon: f64, grid: f64) -> Vec<f64> {
    let n = (horizon / grid).round().max(1.0) as usize;
    (1..n).map(|i| horizon * i as f64 / n as f64).collect()
}

/// Certified bracket `lower ≤ d^S(x, y) ≤ upper` for general paths.
///
/// `upper` is the best objective over the identity and warps with up to
/// `kinks` interior kinks on a grid of spacing `grid` (exhaustive for one
/// kink, coordinate search beyond). `lower` is the largest `δ` such that
/// some `t` has `x(t)` (or `x(t-)`) at distance at least `δ` from every value
/// `y` takes on the window `{λ(t) : ‖λ‖ ≤ δ}`.
pub fn skorokhod_distance_bound(x: &CadlagPath, y: &CadlagPath, kinks: usize, grid: f64) -> Result<SkorokhodBound> {
    check_same_shape(x, y)?;
    let horizon = x.horizon();
    if !(grid > 0.0 && grid <= horizon) {
        return Err(Error::Unsupported(format!("grid spacing {grid}")));
    }
    let (upper, warp) = upper_search(x, y, kinks, grid)?;
    let lower = lower_bound(x, y, grid, upper).min(upper);
    Ok(SkorokhodBound { lower, upper, warp })
}

fn upper_search(x: &CadlagPath, y: &CadlagPath, kinks: usize, grid: f64) -> Result<(f64, TimeWarp)> {
    let horizon = x.horizon();
    let mut best_warp = TimeWarp::identity(horizon);
    let mut best = warp_objective(x, y, &best_warp)?;
    if kinks == 0 || best == 0.0 {
        return Ok((best, best_warp));
    }
    let pts = grid_points(horizon, grid);
    let build = |ks: &[f64], ws: &[f64]| -> Option<TimeWarp> {
        let mut knots = vec![0.0];
        knots.extend_from_slice(ks);
        knots.push(horizon);
        let mut images = vec![0.0];
        images.extend_from_slice(ws);
        images.push(horizon);
        TimeWarp::new(knots, images).ok()
    };
    // interior knots of the incumbent, plus kinks inserted on its segments
    let mut ks: Vec<f64> = Vec::new();
    let mut ws: Vec<f64> = Vec::new();
    for _ in 0..kinks {
        let mut knots = vec![0.0];
        knots.extend_from_slice(&ks);
        knots.push(horizon);
        let (k, _) = knots
            .windows(2)
            .enumerate()
            .map(|(k, w)| (k, w[1] - w[0]))
            .fold((0, 0.0), |acc, c| if c.1 > acc.1 { c } else { acc });
        let mid = 0.5 * (knots[k] + knots[k + 1]);
        let u = pts
            .iter()
            .copied()
            .filter(|&p| p > knots[k] && p < knots[k + 1])
            .min_by(|a, b| (a - mid).abs().total_cmp(&(b - mid).abs()));
        let Some(u) = u else { break };
        ks.insert(k, u);
        ws.insert(k, best_warp.eval(u)?);
        for _sweep in 0..6 {
            let mut improved = false;
            for idx in 0..ks.len() {
                let (k_lo, w_lo) = if idx == 0 {
                    (0.0, 0.0)
                } else {
                    (ks[idx - 1], ws[idx - 1])
                };
                let (k_hi, w_hi) = if idx + 1 == ks.len() {
                    (horizon, horizon)
                } else {
                    (ks[idx + 1], ws[idx + 1])
                };
                let (keep_k, keep_w) = (ks[idx], ws[idx]);
                let mut found = None;
                for &u in pts.iter().filter(|&&p| p > k_lo && p < k_hi) {
                    for &w in pts.iter().filter(|&&p| p > w_lo && p < w_hi) {
                        ks[idx] = u;
                        ws[idx] = w;
                        let Some(warp) = build(&ks, &ws) else { continue };
                        if warp.norm() >= best {
                            continue;
                        }
                        let v = warp_objective(x, y, &warp)?;
                        if v < best {
                            best = v;
                            best_warp = warp;
                            found = Some((u, w));
                        }
                    }
                }
                match found {
                    Some((u, w)) => {
                        ks[idx] = u;
                        ws[idx] = w;
                        improved = true;
                    }
                    None => {
                        ks[idx] = keep_k;
                        ws[idx] = keep_w;
                    }
                }
            }
            if !improved {
                break;
            }
        }
    }
    Ok((best, best_warp))
}

/// Distance from `v` to the segment between `a` and `b`.
fn point_segment_distance(v: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let mut ab2 = 0.0;
    let mut dot = 0.0;
    for i in 0..v.len() {
        let e = b[i] - a[i];
        ab2 += e * e;
        dot += (v[i] - a[i]) * e;
    }
    let s = if ab2 > 0.0 { (dot / ab2).clamp(0.0, 1.0) } else { 0.0 };
    let mut acc = 0.0;
    for i in 0..v.len() {
        let e = v[i] - (a[i] + s * (b[i] - a[i]));
        acc += e * e;
    }
    acc.sqrt()
}

/// Distance from `v` to the closure of `{y(s) : s ∈ [lo, hi]}`.
fn distance_to_range(y: &CadlagPath, v: &[f64], lo: f64, hi: f64, buf: &mut [f64], buf2: &mut [f64]) -> f64 {
    let times = y.breakpoints();
    let n = y.segment_count();
    let mut best = f64::INFINITY;
    let mut k = times[..n].partition_point(|&s| s <= lo).saturating_sub(1);
    // a segment ending exactly at `lo` contributes its left limit
    if k > 0 && times[k] == lo {
        k -= 1;
    }
    while k < n && times[k] <= hi {
        let a = times[k].max(lo);
        let b = times[k + 1].min(hi);
        y.segment_value_into(k, a, buf);
        y.segment_value_into(k, b, buf2);
        best = best.min(point_segment_distance(v, buf, buf2));
        k += 1;
    }
    if hi >= y.horizon() {
        best = best.min(euclid_diff(v, y.terminal()));
    }
    best
}

fn lower_bound(x: &CadlagPath, y: &CadlagPath, grid: f64, upper: f64) -> f64 {
    let horizon = x.horizon();
    let d = x.dim();
    let mut probes: Vec<(f64, Vec<f64>)> = Vec::new();
    let ts = merge_sorted(&merge_sorted(&[0.0], &grid_points(horizon, grid)), x.breakpoints());
    for &t in &ts {
        let v = x.eval(t).expect("probe inside horizon");
        let l = x.left_limit(t).expect("probe inside horizon");
        if l != v {
            probes.push((t, l));
        }
        probes.push((t, v));
    }
    let floor = euclid_diff(x.terminal(), y.terminal());
    let mut buf = vec![0.0; d];
    let mut buf2 = vec![0.0; d];
    let mut phi_at_least = |delta: f64| -> bool {
        if floor >= delta {
            return true;
        }
        let (g, s) = (delta.exp(), (-delta).exp());
        probes.iter().any(|(t, v)| {
            let lo = (t * s).max(horizon - (horizon - t) * g).max(0.0);
            let hi = (t * g).min(horizon - (horizon - t) * s).min(horizon);
            distance_to_range(y, v, lo, hi, &mut buf, &mut buf2) >= delta
        })
    };
    if phi_at_least(upper) {
        return upper;
    }
    let (mut lo, mut hi) = (0.0, upper);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if phi_at_least(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * (1.0 + hi) {
            break;
        }
    }
    lo
}
