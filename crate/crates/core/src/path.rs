//! Piecewise-affine càdlàg paths on `[0, T]`.
//!
//! A path is stored as breakpoints `0 = s_0 < ... < s_K = T`, and for each
//! segment `[s_k, s_{k+1})` the value at its start and the left limit at its
//! end. Between those two the path is affine. The value at `T` is stored
//! separately so that a jump at the horizon is representable.
//!
//! Storing endpoint values (rather than start value and slope) keeps left
//! limits and CSV round trips exact. Paths are always kept in canonical form:
//! adjacent constant segments with bit-identical values are merged.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::matrix::{euclid, euclid_diff};

#[derive(Clone, Debug, PartialEq)]
pub struct CadlagPath {
    dim: usize,
    times: Vec<f64>,
    starts: Vec<f64>,
    ends: Vec<f64>,
    terminal: Vec<f64>,
}

#[inline]
fn interp(a: f64, b: f64, theta: f64) -> f64 {
    if theta == 0.0 {
        a
    } else if theta == 1.0 {
        b
    } else {
        a + (b - a) * theta
    }
}

impl CadlagPath {
    /// Builds a path from raw parts and canonicalises it.
    ///
    /// `times` holds `s_0 = 0 < ... < s_K = T`; `starts` and `ends` hold
    /// `K * dim` values (row `k` is the value at `s_k` and the left limit at
    /// `s_{k+1}` respectively).
    pub fn new(dim: usize, times: Vec<f64>, starts: Vec<f64>, ends: Vec<f64>, terminal: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidPath("dimension must be positive".into()));
        }
        if times.len() < 2 {
            return Err(Error::InvalidPath("need at least one segment".into()));
        }
        if times[0] != 0.0 {
            return Err(Error::InvalidPath(format!("first breakpoint is {}", times[0])));
        }
        for w in times.windows(2) {
            if !(w[1] > w[0]) || !w[1].is_finite() {
                return Err(Error::InvalidPath(format!(
                    "breakpoints not strictly increasing at {} -> {}",
                    w[0], w[1]
                )));
            }
        }
        let k = times.len() - 1;
        if starts.len() != k * dim || ends.len() != k * dim || terminal.len() != dim {
            return Err(Error::Shape(format!(
                "expected {} segment values of dim {}, got {}/{}/{}",
                k,
                dim,
                starts.len(),
                ends.len(),
                terminal.len()
            )));
        }
        if let Some(bad) = starts.iter().chain(&ends).chain(&terminal).find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("path value {bad}")));
        }
        let mut p = Self {
            dim,
            times,
            starts,
            ends,
            terminal,
        };
        p.canonicalize();
        Ok(p)
    }

    /// Constructor for internal hot loops; inputs must already satisfy the
    /// invariants checked by [`CadlagPath::new`].
    pub(crate) fn from_parts(
        dim: usize,
        times: Vec<f64>,
        starts: Vec<f64>,
        ends: Vec<f64>,
        terminal: Vec<f64>,
    ) -> Self {
        debug_assert!(times.len() >= 2 && times[0] == 0.0);
        debug_assert!(times.windows(2).all(|w| w[1] > w[0]));
        debug_assert_eq!(starts.len(), (times.len() - 1) * dim);
        debug_assert_eq!(ends.len(), starts.len());
        let mut p = Self {
            dim,
            times,
            starts,
            ends,
            terminal,
        };
        p.canonicalize();
        p
    }

    pub fn constant(horizon: f64, value: &[f64]) -> Result<Self> {
        check_horizon(horizon)?;
        Self::new(
            value.len(),
            vec![0.0, horizon],
            value.to_vec(),
            value.to_vec(),
            value.to_vec(),
        )
    }

    pub fn zero(dim: usize, horizon: f64) -> Result<Self> {
        Self::constant(horizon, &vec![0.0; dim])
    }

    /// Scalar path `a + c t`.
    pub fn affine(horizon: f64, a: f64, c: f64) -> Result<Self> {
        check_horizon(horizon)?;
        let end = a + c * horizon;
        Self::new(1, vec![0.0, horizon], vec![a], vec![end], vec![end])
    }

    /// Scalar indicator `1_{[t0, T]}`.
    pub fn indicator(horizon: f64, t0: f64) -> Result<Self> {
        Self::scalar_step(horizon, 0.0, &[(t0, 1.0)])
    }

    /// Scalar step path starting at `initial` that takes value `v` from each
    /// `(t, v)` onwards. Times must be increasing and lie in `(0, T]`.
    pub fn scalar_step(horizon: f64, initial: f64, steps: &[(f64, f64)]) -> Result<Self> {
        let steps: Vec<(f64, Vec<f64>)> = steps.iter().map(|&(t, v)| (t, vec![v])).collect();
        Self::step(horizon, &[initial], &steps)
    }

    /// Vector step path: value `initial` on `[0, t_1)`, then the listed values.
    pub fn step(horizon: f64, initial: &[f64], steps: &[(f64, Vec<f64>)]) -> Result<Self> {
        check_horizon(horizon)?;
        let dim = initial.len();
        let mut times = vec![0.0];
        let mut vals = initial.to_vec();
        let mut terminal = initial.to_vec();
        for (t, v) in steps {
            if v.len() != dim {
                return Err(Error::Shape("step value dimension".into()));
            }
            if *t == 0.0 {
                if times.len() != 1 {
                    return Err(Error::InvalidPath("step at 0 after other steps".into()));
                }
                vals.copy_from_slice(v);
                terminal.copy_from_slice(v);
                continue;
            }
            if *t == horizon {
                terminal.copy_from_slice(v);
                continue;
            }
            if !(*t > 0.0 && *t < horizon) {
                return Err(Error::Domain { t: *t, horizon });
            }
            times.push(*t);
            vals.extend_from_slice(v);
            terminal.copy_from_slice(v);
        }
        times.push(horizon);
        Self::new(dim, times, vals.clone(), vals, terminal)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Breakpoints `s_0 = 0, ..., s_K = T`.
    pub fn breakpoints(&self) -> &[f64] {
        &self.times
    }

    pub fn segment_count(&self) -> usize {
        self.times.len() - 1
    }

    /// Value at the start of segment `k`.
    pub fn segment_start(&self, k: usize) -> &[f64] {
        &self.starts[k * self.dim..(k + 1) * self.dim]
    }

    /// Left limit at the end of segment `k`.
    pub fn segment_end(&self, k: usize) -> &[f64] {
        &self.ends[k * self.dim..(k + 1) * self.dim]
    }

    pub fn segment_slope(&self, k: usize) -> Vec<f64> {
        let len = self.times[k + 1] - self.times[k];
        self.segment_start(k)
            .iter()
            .zip(self.segment_end(k))
            .map(|(a, b)| (b - a) / len)
            .collect()
    }

    pub fn terminal(&self) -> &[f64] {
        &self.terminal
    }

    /// True if every segment is constant.
    pub fn is_step(&self) -> bool {
        self.starts == self.ends
    }

    pub(crate) fn starts_raw(&self) -> &[f64] {
        &self.starts
    }

    pub(crate) fn ends_raw(&self) -> &[f64] {
        &self.ends
    }

    fn check_time(&self, t: f64) -> Result<()> {
        let horizon = self.horizon();
        if !(0.0..=horizon).contains(&t) {
            return Err(Error::Domain { t, horizon });
        }
        Ok(())
    }

    /// Index of the segment `[s_k, s_{k+1})` containing `t < T`.
    #[inline]
    pub(crate) fn segment_at(&self, t: f64) -> usize {
        let n = self.segment_count();
        let k = self.times[..n].partition_point(|&s| s <= t);
        k.saturating_sub(1)
    }

    /// Writes segment `k`'s affine extension evaluated at `t` into `out`.
    #[inline]
    pub(crate) fn segment_value_into(&self, k: usize, t: f64, out: &mut [f64]) {
        let s0 = self.times[k];
        let s1 = self.times[k + 1];
        let theta = if t == s0 {
            0.0
        } else if t == s1 {
            1.0
        } else {
            (t - s0) / (s1 - s0)
        };
        let a = self.segment_start(k);
        let b = self.segment_end(k);
        for i in 0..self.dim {
            out[i] = interp(a[i], b[i], theta);
        }
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        self.check_time(t)?;
        self.eval_unchecked(t, out);
        Ok(())
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, t: f64, out: &mut [f64]) {
        if t >= self.horizon() {
            out.copy_from_slice(&self.terminal);
            return;
        }
        let k = self.segment_at(t);
        self.segment_value_into(k, t, out);
    }

    /// Right-continuous value at `t`.
    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(t, &mut out)?;
        Ok(out)
    }

    pub fn left_limit_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        self.check_time(t)?;
        self.left_limit_unchecked(t, out);
        Ok(())
    }

    #[inline]
    pub(crate) fn left_limit_unchecked(&self, t: f64, out: &mut [f64]) {
        if t <= 0.0 {
            out.copy_from_slice(self.segment_start(0));
            return;
        }
        let n = self.segment_count();
        let k = self.times[..n].partition_point(|&s| s < t) - 1;
        self.segment_value_into(k, t, out);
    }

    /// Left limit at `t`; at `t = 0` this is the value at 0.
    pub fn left_limit(&self, t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        self.left_limit_into(t, &mut out)?;
        Ok(out)
    }

    /// Jumps `(t, x(t) - x(t-))` at breakpoints in `(0, T]`.
    pub fn jumps(&self) -> Vec<(f64, Vec<f64>)> {
        let d = self.dim;
        let n = self.segment_count();
        let mut out = Vec::new();
        for k in 1..n {
            let pre = self.segment_end(k - 1);
            let post = self.segment_start(k);
            if pre != post {
                out.push((self.times[k], post.iter().zip(pre).map(|(a, b)| a - b).collect()));
            }
        }
        let pre = &self.ends[(n - 1) * d..];
        if pre != self.terminal.as_slice() {
            out.push((
                self.horizon(),
                self.terminal.iter().zip(pre).map(|(a, b)| a - b).collect(),
            ));
        }
        out
    }

    /// `x^t(s) = x(min(s, t))`.
    pub fn stop_at(&self, t: f64) -> Result<Self> {
        self.check_time(t)?;
        let horizon = self.horizon();
        if t == horizon {
            return Ok(self.clone());
        }
        let d = self.dim;
        let k = self.segment_at(t);
        let mut v = vec![0.0; d];
        self.segment_value_into(k, t, &mut v);
        let mut times = self.times[..=k].to_vec();
        let mut starts = self.starts[..k * d].to_vec();
        let mut ends = self.ends[..k * d].to_vec();
        if t > self.times[k] {
            starts.extend_from_slice(self.segment_start(k));
            ends.extend_from_slice(&v);
            times.push(t);
        }
        times.push(horizon);
        starts.extend_from_slice(&v);
        ends.extend_from_slice(&v);
        Ok(Self::from_parts(d, times, starts, ends, v))
    }

    /// `x + v 1_{[r, T]}`.
    pub fn add_shift(&self, r: f64, v: &[f64]) -> Result<Self> {
        self.check_time(r)?;
        if v.len() != self.dim {
            return Err(Error::Shape(format!(
                "shift of dim {} on path of dim {}",
                v.len(),
                self.dim
            )));
        }
        let d = self.dim;
        let mut terminal = self.terminal.clone();
        for i in 0..d {
            terminal[i] += v[i];
        }
        if r == self.horizon() {
            return Ok(Self::from_parts(
                d,
                self.times.clone(),
                self.starts.clone(),
                self.ends.clone(),
                terminal,
            ));
        }
        let k = self.segment_at(r);
        let mut times = self.times.clone();
        let mut starts = self.starts.clone();
        let mut ends = self.ends.clone();
        let mut first_shifted = k;
        if r > self.times[k] {
            let mut mid = vec![0.0; d];
            self.segment_value_into(k, r, &mut mid);
            times.insert(k + 1, r);
            // segment k now ends at r; the new segment k+1 runs [r, s_{k+1})
            let old_end: Vec<f64> = self.segment_end(k).to_vec();
            ends.splice(k * d..(k + 1) * d, mid.iter().copied());
            starts.splice((k + 1) * d..(k + 1) * d, mid.iter().copied());
            ends.splice((k + 1) * d..(k + 1) * d, old_end);
            first_shifted = k + 1;
        }
        let n = times.len() - 1;
        for j in first_shifted..n {
            for i in 0..d {
                starts[j * d + i] += v[i];
                ends[j * d + i] += v[i];
            }
        }
        Ok(Self::from_parts(d, times, starts, ends, terminal))
    }

    /// `sup_{s <= t} |x(s)|`.
    pub fn sup_norm_until(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        let mut best: f64 = 0.0;
        let n = self.segment_count();
        let mut buf = vec![0.0; self.dim];
        for k in 0..n {
            if self.times[k] > t {
                break;
            }
            best = best.max(euclid(self.segment_start(k)));
            if self.times[k + 1] <= t {
                best = best.max(euclid(self.segment_end(k)));
            } else {
                self.segment_value_into(k, t, &mut buf);
                best = best.max(euclid(&buf));
            }
        }
        if t == self.horizon() {
            best = best.max(euclid(&self.terminal));
        }
        Ok(best)
    }

    /// `sup_{s < t} |x(s)|` (the left limit of [`Self::sup_norm_until`]);
    /// equals `|x(0)|` at `t = 0`.
    pub fn sup_norm_before(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        let mut best = euclid(self.segment_start(0));
        let n = self.segment_count();
        let mut buf = vec![0.0; self.dim];
        for k in 0..n {
            if self.times[k] >= t {
                break;
            }
            best = best.max(euclid(self.segment_start(k)));
            if self.times[k + 1] < t {
                best = best.max(euclid(self.segment_end(k)));
            } else {
                self.segment_value_into(k, t, &mut buf);
                best = best.max(euclid(&buf));
            }
        }
        Ok(best)
    }

    /// `sup_t |x(t)|` over the whole horizon.
    pub fn sup_norm(&self) -> f64 {
        self.starts
            .chunks(self.dim)
            .chain(self.ends.chunks(self.dim))
            .map(euclid)
            .fold(euclid(&self.terminal), f64::max)
    }

    /// Scalar multiple `c x`.
    pub fn scale(&self, c: f64) -> Self {
        Self::from_parts(
            self.dim,
            self.times.clone(),
            self.starts.iter().map(|v| c * v).collect(),
            self.ends.iter().map(|v| c * v).collect(),
            self.terminal.iter().map(|v| c * v).collect(),
        )
    }

    /// Exact sup-norm distance `sup_t |x(t) - y(t)|`.
    pub fn sup_distance(&self, other: &CadlagPath) -> Result<f64> {
        check_same_shape(self, other)?;
        let knots = union_knots(&[self, other]);
        if self.dim == 1 {
            let (mut ca, mut cb) = (Cursor::new(self), Cursor::new(other));
            let mut best = (self.terminal[0] - other.terminal[0]).abs();
            for w in knots.windows(2) {
                let (a0, a1) = ca.segment(w[0], w[1]);
                let (b0, b1) = cb.segment(w[0], w[1]);
                best = best.max((a0 - b0).abs()).max((a1 - b1).abs());
            }
            return Ok(best);
        }
        let d = self.dim;
        let mut wa = Walker::new(self);
        let mut wb = Walker::new(other);
        let (mut a0, mut a1) = (vec![0.0; d], vec![0.0; d]);
        let (mut b0, mut b1) = (vec![0.0; d], vec![0.0; d]);
        let mut best = euclid_diff(&self.terminal, &other.terminal);
        for w in knots.windows(2) {
            wa.segment(w[0], w[1], &mut a0, &mut a1);
            wb.segment(w[0], w[1], &mut b0, &mut b1);
            best = best.max(euclid_diff(&a0, &b0)).max(euclid_diff(&a1, &b1));
        }
        Ok(best)
    }

    /// Pointwise linear combination `sum_i c_i x_i`.
    pub fn linear_combine(terms: &[(f64, &CadlagPath)]) -> Result<CadlagPath> {
        let Some(&(_, first)) = terms.first() else {
            return Err(Error::Shape("empty linear combination".into()));
        };
        for (_, p) in &terms[1..] {
            check_same_shape(first, p)?;
        }
        let paths: Vec<&CadlagPath> = terms.iter().map(|(_, p)| *p).collect();
        let knots = union_knots(&paths);
        let d = first.dim;
        let n = knots.len() - 1;
        let mut starts = vec![0.0; n * d];
        let mut ends = vec![0.0; n * d];
        let mut terminal = vec![0.0; d];
        let mut walkers: Vec<Walker> = paths.iter().map(|p| Walker::new(p)).collect();
        let (mut s, mut e) = (vec![0.0; d], vec![0.0; d]);
        for (j, w) in knots.windows(2).enumerate() {
            for ((c, _), walker) in terms.iter().zip(walkers.iter_mut()) {
                walker.segment(w[0], w[1], &mut s, &mut e);
                for i in 0..d {
                    starts[j * d + i] += c * s[i];
                    ends[j * d + i] += c * e[i];
                }
            }
        }
        for (c, p) in terms {
            for i in 0..d {
                terminal[i] += c * p.terminal[i];
            }
        }
        CadlagPath::new(d, knots, starts, ends, terminal)
    }

    /// Selects component `i` as a scalar path.
    pub fn component(&self, i: usize) -> Result<CadlagPath> {
        if i >= self.dim {
            return Err(Error::Shape(format!("component {i} of dim {}", self.dim)));
        }
        let d = self.dim;
        Ok(Self::from_parts(
            1,
            self.times.clone(),
            self.starts.iter().skip(i).step_by(d).copied().collect(),
            self.ends.iter().skip(i).step_by(d).copied().collect(),
            vec![self.terminal[i]],
        ))
    }

    fn canonicalize(&mut self) {
        let d = self.dim;
        let n = self.segment_count();
        let mergeable = |p: &Self, k: usize| {
            let a = p.segment_start(k);
            a == p.segment_end(k) && a == p.segment_start(k + 1) && a == p.segment_end(k + 1)
        };
        if !(0..n.saturating_sub(1)).any(|k| mergeable(self, k)) {
            return;
        }
        let mut times = Vec::with_capacity(self.times.len());
        let mut starts = Vec::with_capacity(self.starts.len());
        let mut ends = Vec::with_capacity(self.ends.len());
        times.push(0.0);
        starts.extend_from_slice(self.segment_start(0));
        ends.extend_from_slice(self.segment_end(0));
        for k in 1..n {
            let last = times.len() - 1;
            let prev_a = &starts[(last) * d..(last + 1) * d];
            let prev_b = &ends[(last) * d..(last + 1) * d];
            let a = self.segment_start(k);
            let b = self.segment_end(k);
            if prev_a == prev_b && prev_b == a && a == b {
                continue;
            }
            times.push(self.times[k]);
            starts.extend_from_slice(a);
            ends.extend_from_slice(b);
        }
        times.push(self.horizon());
        self.times = times;
        self.starts = starts;
        self.ends = ends;
    }

    /// Writes the CSV form: header `t,v1,...,vdim,kind`, one `anchor` row per
    /// breakpoint, or a `jump-pre` / `jump-post` pair where the path jumps.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.dim).map(|i| format!("v{i}")));
        header.push("kind".into());
        wr.write_record(&header)?;
        let row = |wr: &mut csv::Writer<W>, t: f64, v: &[f64], kind: &str| -> Result<()> {
            let mut rec = Vec::with_capacity(v.len() + 2);
            rec.push(t.to_string());
            rec.extend(v.iter().map(|x| x.to_string()));
            rec.push(kind.to_string());
            wr.write_record(&rec)?;
            Ok(())
        };
        let n = self.segment_count();
        row(&mut wr, 0.0, self.segment_start(0), "anchor")?;
        for k in 1..=n {
            let t = self.times[k];
            let pre = self.segment_end(k - 1);
            let post = if k == n {
                self.terminal.as_slice()
            } else {
                self.segment_start(k)
            };
            if pre == post {
                row(&mut wr, t, post, "anchor")?;
            } else {
                row(&mut wr, t, pre, "jump-pre")?;
                row(&mut wr, t, post, "jump-post")?;
            }
        }
        wr.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    /// Reads the CSV form written by [`Self::write_csv`].
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let header = rd.headers()?.clone();
        let cols = header.len();
        if cols < 3 || &header[0] != "t" || &header[cols - 1] != "kind" {
            return Err(Error::Csv(format!("unexpected header {header:?}")));
        }
        let dim = cols - 2;
        // (time, pre, post)
        let mut points: Vec<(f64, Vec<f64>, Vec<f64>)> = Vec::new();
        let mut pending_pre: Option<(f64, Vec<f64>)> = None;
        for rec in rd.records() {
            let rec = rec?;
            let t: f64 = parse_num(&rec[0])?;
            let v: Vec<f64> = (1..=dim).map(|i| parse_num(&rec[i])).collect::<Result<_>>()?;
            match &rec[cols - 1] {
                "anchor" => {
                    if pending_pre.is_some() {
                        return Err(Error::Csv(format!("jump-pre at {t} without jump-post")));
                    }
                    points.push((t, v.clone(), v));
                }
                "jump-pre" => {
                    if pending_pre.is_some() {
                        return Err(Error::Csv(format!("repeated jump-pre at {t}")));
                    }
                    pending_pre = Some((t, v));
                }
                "jump-post" => {
                    let Some((tp, pre)) = pending_pre.take() else {
                        return Err(Error::Csv(format!("jump-post at {t} without jump-pre")));
                    };
                    if tp != t {
                        return Err(Error::Csv(format!("jump rows at {tp} and {t}")));
                    }
                    points.push((t, pre, v));
                }
                other => return Err(Error::Csv(format!("unknown row kind {other:?}"))),
            }
        }
        if pending_pre.is_some() || points.len() < 2 {
            return Err(Error::Csv("incomplete path".into()));
        }
        let n = points.len() - 1;
        let mut times = Vec::with_capacity(n + 1);
        let mut starts = Vec::with_capacity(n * dim);
        let mut ends = Vec::with_capacity(n * dim);
        for k in 0..n {
            times.push(points[k].0);
            starts.extend_from_slice(&points[k].2);
            ends.extend_from_slice(&points[k + 1].1);
        }
        times.push(points[n].0);
        CadlagPath::new(dim, times, starts, ends, points[n].2.clone())
    }

    pub fn from_csv_str(s: &str) -> Result<Self> {
        Self::read_csv(s.as_bytes())
    }
}

fn parse_num(s: &str) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::Csv(format!("bad number {s:?}")))
}

fn check_horizon(horizon: f64) -> Result<()> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidPath(format!("horizon {horizon}")));
    }
    Ok(())
}

pub(crate) fn check_same_shape(a: &CadlagPath, b: &CadlagPath) -> Result<()> {
    if a.dim != b.dim {
        return Err(Error::Shape(format!("dims {} and {}", a.dim, b.dim)));
    }
    if a.horizon() != b.horizon() {
        return Err(Error::Shape(format!("horizons {} and {}", a.horizon(), b.horizon())));
    }
    Ok(())
}

/// Sorted union of the breakpoints of all `paths` (exact equality dedup).
pub fn union_knots(paths: &[&CadlagPath]) -> Vec<f64> {
    let mut acc: Vec<f64> = paths.first().map(|p| p.times.clone()).unwrap_or_default();
    for p in &paths[1.min(paths.len())..] {
        acc = merge_sorted(&acc, &p.times);
    }
    acc
}

/// Merges two strictly increasing sequences, dropping exact duplicates.
pub fn merge_sorted(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        let (x, y) = (a[i], b[j]);
        if x < y {
            out.push(x);
            i += 1;
        } else if y < x {
            out.push(y);
            j += 1;
        } else {
            out.push(x);
            i += 1;
            j += 1;
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

/// Monotone segment lookup for a path walked along a refinement of its
/// breakpoints.
pub(crate) struct Walker<'a> {
    path: &'a CadlagPath,
    k: usize,
}

impl<'a> Walker<'a> {
    pub(crate) fn new(path: &'a CadlagPath) -> Self {
        Self { path, k: 0 }
    }

    /// Segment index covering `[u0, u1)`, where `u0 < u1` and no breakpoint of
    /// the path lies strictly inside. Calls must have non-decreasing `u0`.
    #[inline]
    pub(crate) fn index(&mut self, u0: f64) -> usize {
        let times = &self.path.times;
        let n = times.len() - 1;
        while self.k + 1 < n && times[self.k + 1] <= u0 {
            self.k += 1;
        }
        self.k
    }

    /// Start value and left-end limit on the refined segment `[u0, u1)`.
    #[inline]
    pub(crate) fn segment(&mut self, u0: f64, u1: f64, start: &mut [f64], end: &mut [f64]) {
        let k = self.index(u0);
        self.path.segment_value_into(k, u0, start);
        self.path.segment_value_into(k, u1, end);
    }
}

/// [`Walker`] for scalar paths.
pub(crate) struct Cursor<'a> {
    times: &'a [f64],
    starts: &'a [f64],
    ends: &'a [f64],
    k: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(path: &'a CadlagPath) -> Self {
        debug_assert_eq!(path.dim, 1);
        Self {
            times: &path.times,
            starts: &path.starts,
            ends: &path.ends,
            k: 0,
        }
    }

    #[inline]
    pub(crate) fn index(&mut self, u0: f64) -> usize {
        let n = self.starts.len();
        while self.k + 1 < n && self.times[self.k + 1] <= u0 {
            self.k += 1;
        }
        self.k
    }

    /// As [`Walker::segment`].
    #[inline]
    pub(crate) fn segment(&mut self, u0: f64, u1: f64) -> (f64, f64) {
        let k = self.index(u0);
        let (s0, s1) = (self.times[k], self.times[k + 1]);
        let (a, b) = (self.starts[k], self.ends[k]);
        let at = |t: f64| {
            let theta = if t == s0 {
                0.0
            } else if t == s1 {
                1.0
            } else {
                (t - s0) / (s1 - s0)
            };
            interp(a, b, theta)
        };
        (at(u0), at(u1))
    }

    /// Value at the knot `u1` closing the segment last visited, if the path
    /// has a breakpoint there.
    #[inline]
    pub(crate) fn next_start(&self, u1: f64) -> Option<f64> {
        let k = self.k;
        if k + 1 < self.starts.len() && self.times[k + 1] == u1 {
            Some(self.starts[k + 1])
        } else {
            None
        }
    }
}

/// Bundles a path of `rows x cols` matrices, stored row-major as a path of
/// dimension `rows * cols`.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixPath {
    rows: usize,
    cols: usize,
    path: CadlagPath,
}

impl MatrixPath {
    pub fn new(rows: usize, cols: usize, path: CadlagPath) -> Result<Self> {
        if path.dim() != rows * cols {
            return Err(Error::Shape(format!(
                "path of dim {} cannot hold {rows}x{cols} matrices",
                path.dim()
            )));
        }
        Ok(Self { rows, cols, path })
    }

    /// Wraps a scalar path as a path of `1 x 1` matrices.
    pub fn scalar(path: CadlagPath) -> Result<Self> {
        Self::new(1, 1, path)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn path(&self) -> &CadlagPath {
        &self.path
    }

    pub fn into_path(self) -> CadlagPath {
        self.path
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> CadlagPath {
        // a = 1, c = 2 on [0, 1)
        CadlagPath::new(1, vec![0.0, 1.0], vec![1.0], vec![3.0], vec![3.0]).unwrap()
    }

    #[test]
    fn eval_examples() {
        let c = CadlagPath::constant(1.0, &[2.0, -1.0]).unwrap();
        assert_eq!(c.eval(0.5).unwrap(), vec![2.0, -1.0]);
        let ind = CadlagPath::indicator(1.0, 0.3).unwrap();
        assert_eq!(ind.eval(0.3).unwrap(), vec![1.0]);
        assert_eq!(ind.eval(0.2999).unwrap(), vec![0.0]);
        assert_eq!(ramp().eval(0.25).unwrap(), vec![1.5]);
        assert_eq!(ramp().eval(1.0).unwrap(), vec![3.0]);
    }

    #[test]
    fn eval_out_of_domain() {
        assert!(matches!(ramp().eval(-0.1), Err(Error::Domain { .. })));
        assert!(matches!(ramp().eval(1.5), Err(Error::Domain { .. })));
        assert!(ramp().left_limit(1.0 + 1e-9).is_err());
    }

    #[test]
    fn left_limit_examples() {
        let ind = CadlagPath::indicator(1.0, 0.3).unwrap();
        assert_eq!(ind.left_limit(0.3).unwrap(), vec![0.0]);
        let r = ramp();
        for t in [0.1, 0.5, 0.99, 1.0] {
            assert_eq!(r.left_limit(t).unwrap(), r.eval(t).unwrap());
        }
        assert_eq!(r.left_limit(0.0).unwrap(), vec![1.0]);
        // c = 2 on [0, 0.5), a = 1 at 0, jump afterwards
        let p = CadlagPath::new(1, vec![0.0, 0.5, 1.0], vec![1.0, 7.0], vec![2.0, 7.0], vec![7.0]).unwrap();
        assert_eq!(p.left_limit(0.5).unwrap(), vec![2.0]);
        assert_eq!(p.eval(0.5).unwrap(), vec![7.0]);
    }

    #[test]
    fn stop_at_examples() {
        let r = ramp();
        assert_eq!(r.stop_at(1.0).unwrap(), r);
        let z = r.stop_at(0.0).unwrap();
        assert_eq!(z, CadlagPath::constant(1.0, &[1.0]).unwrap());
        let ind = CadlagPath::indicator(1.0, 0.3).unwrap();
        assert_eq!(ind.stop_at(0.2).unwrap(), CadlagPath::zero(1, 1.0).unwrap());
        let s = r.stop_at(0.25).unwrap();
        assert_eq!(s.eval(0.1).unwrap(), r.eval(0.1).unwrap());
        assert_eq!(s.eval(0.9).unwrap(), vec![1.5]);
        assert_eq!(s.terminal(), &[1.5]);
    }

    #[test]
    fn add_shift_examples() {
        let r = ramp();
        let same = r.add_shift(0.4, &[0.0]).unwrap();
        assert_eq!(same.breakpoints(), &[0.0, 0.4, 1.0]);
        assert_eq!(same.sup_distance(&r).unwrap(), 0.0);
        let z = CadlagPath::zero(1, 1.0).unwrap();
        let shifted = z.add_shift(0.5, &[2.0]).unwrap();
        assert_eq!(shifted, CadlagPath::indicator(1.0, 0.5).unwrap().scale(2.0));
        let back = r.add_shift(0.3, &[2.0]).unwrap().add_shift(0.3, &[-2.0]).unwrap();
        assert!(back.sup_distance(&r).unwrap() <= 1e-12);
        assert_eq!(r.add_shift(1.0, &[1.0]).unwrap().terminal(), &[4.0]);
        assert!(matches!(r.add_shift(0.3, &[1.0, 2.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn sup_distance_examples() {
        let r = ramp();
        assert_eq!(r.sup_distance(&r).unwrap(), 0.0);
        let a = CadlagPath::indicator(1.0, 0.3).unwrap();
        let b = CadlagPath::indicator(1.0, 0.4).unwrap();
        assert_eq!(a.sup_distance(&b).unwrap(), 1.0);
        let other = CadlagPath::zero(2, 1.0).unwrap();
        assert!(matches!(r.sup_distance(&other), Err(Error::Shape(_))));
        let longer = CadlagPath::zero(1, 2.0).unwrap();
        assert!(matches!(r.sup_distance(&longer), Err(Error::Shape(_))));
    }

    #[test]
    fn linear_combine_examples() {
        let x = ramp();
        let y = CadlagPath::indicator(1.0, 0.6).unwrap();
        assert_eq!(
            CadlagPath::linear_combine(&[(1.0, &x), (0.0, &y)])
                .unwrap()
                .sup_distance(&x)
                .unwrap(),
            0.0
        );
        let zero = CadlagPath::linear_combine(&[(1.0, &x), (-1.0, &x)]).unwrap();
        assert_eq!(zero, CadlagPath::zero(1, 1.0).unwrap());
        let comb = CadlagPath::linear_combine(&[(2.0, &y), (3.0, &x)]).unwrap();
        for t in [0.0, 0.1, 0.5999, 0.6, 0.75, 1.0] {
            let want = 2.0 * y.eval(t).unwrap()[0] + 3.0 * x.eval(t).unwrap()[0];
            assert!((comb.eval(t).unwrap()[0] - want).abs() < 1e-14);
        }
    }

    #[test]
    fn jumps_and_terminal_jump() {
        let p = CadlagPath::scalar_step(1.0, 0.0, &[(0.3, 1.0), (1.0, 5.0)]).unwrap();
        assert_eq!(p.jumps(), vec![(0.3, vec![1.0]), (1.0, vec![4.0])]);
        assert_eq!(p.left_limit(1.0).unwrap(), vec![1.0]);
        assert_eq!(p.eval(1.0).unwrap(), vec![5.0]);
    }

    #[test]
    fn canonical_merge() {
        let p = CadlagPath::new(
            1,
            vec![0.0, 0.2, 0.4, 1.0],
            vec![1.0, 1.0, 2.0],
            vec![1.0, 1.0, 2.0],
            vec![2.0],
        )
        .unwrap();
        assert_eq!(p.breakpoints(), &[0.0, 0.4, 1.0]);
    }

    #[test]
    fn csv_round_trip_with_jumps() {
        let p = CadlagPath::new(
            2,
            vec![0.0, 0.25, 0.5, 1.0],
            vec![0.1, 1.0, 0.3, -2.0, 7.0, 7.0],
            vec![0.3, 1.0, 0.3, 5.0, 7.5, 7.0],
            vec![1e-300, 3.0],
        )
        .unwrap();
        let s = p.to_csv_string();
        assert!(s.starts_with("t,v1,v2,kind\n"));
        assert!(s.contains("jump-pre"));
        assert_eq!(CadlagPath::from_csv_str(&s).unwrap(), p);
    }

    #[test]
    fn csv_rejects_malformed() {
        assert!(CadlagPath::from_csv_str("t,v1,kind\n0,1,anchor\n1,2,jump-post\n").is_err());
        assert!(CadlagPath::from_csv_str("x,v1,kind\n0,1,anchor\n1,2,anchor\n").is_err());
        assert!(CadlagPath::from_csv_str("t,v1,kind\n0,1,anchor\n").is_err());
    }

    #[test]
    fn invalid_construction() {
        assert!(CadlagPath::new(1, vec![0.0, 0.5, 0.5, 1.0], vec![0.0; 3], vec![0.0; 3], vec![0.0]).is_err());
        assert!(CadlagPath::new(1, vec![0.1, 1.0], vec![0.0], vec![0.0], vec![0.0]).is_err());
        assert!(matches!(
            CadlagPath::new(1, vec![0.0, 1.0], vec![f64::NAN], vec![0.0], vec![0.0]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn running_sup_norms() {
        let p = CadlagPath::scalar_step(1.0, 0.5, &[(0.3, -2.0), (0.6, 1.0)]).unwrap();
        assert_eq!(p.sup_norm_until(0.2).unwrap(), 0.5);
        assert_eq!(p.sup_norm_until(0.3).unwrap(), 2.0);
        assert_eq!(p.sup_norm_before(0.3).unwrap(), 0.5);
        assert_eq!(p.sup_norm(), 2.0);
    }
}
