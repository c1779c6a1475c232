//! Time-dependent planar velocity fields, trajectory integration and curve
//! advection.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use log::warn;
use rayon::prelude::*;
use thiserror::Error;

use crate::mesh::Point;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("trajectory left the finite range at t = {t}")]
    NonFiniteState { t: f64 },
    #[error("invalid time span [{t0}, {t1}] for field on [{lo}, {hi}]")]
    InvalidSpan { t0: f64, t1: f64, lo: f64, hi: f64 },
    #[error("step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("polyline refinement exceeded {0} vertices")]
    RefinementExplosion(usize),
    #[error("invalid polyline: {0}")]
    InvalidPolyline(&'static str),
    #[error("invalid trajectory ensemble: {0}")]
    InvalidEnsemble(String),
    #[error("no seeds supplied")]
    NoSeeds,
}

type Velocity = dyn Fn(f64, Point) -> Point + Send + Sync;

/// A velocity field `F(t, x)` defined on a time span.
#[derive(Clone)]
pub struct FlowField {
    name: String,
    velocity: Arc<Velocity>,
    span: (f64, f64),
}

impl fmt::Debug for FlowField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FlowField")
            .field("name", &self.name)
            .field("span", &self.span)
            .finish()
    }
}

impl FlowField {
    pub fn new<F>(name: impl Into<String>, span: (f64, f64), velocity: F) -> Self
    where
        F: Fn(f64, Point) -> Point + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            velocity: Arc::new(velocity),
            span,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn time_span(&self) -> (f64, f64) {
        self.span
    }

    #[inline]
    pub fn velocity(&self, t: f64, x: Point) -> Point {
        (self.velocity)(t, x)
    }

    /// Central-difference divergence with step `h`.
    pub fn divergence(&self, t: f64, x: Point, h: f64) -> f64 {
        let du = self.velocity(t, [x[0] + h, x[1]])[0] - self.velocity(t, [x[0] - h, x[1]])[0];
        let dv = self.velocity(t, [x[0], x[1] + h])[1] - self.velocity(t, [x[0], x[1] - h])[1];
        (du + dv) / (2.0 * h)
    }
}

/// Smoothstep `t²(3 − 2t)` blending the two gyre patterns.
pub fn gyre_blend(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// The rotating double gyre on `[0,1]²`, `t ∈ [0,1]`.
///
/// Stream function `ψ = (1−s)·sin(2πx)sin(πy) + s·sin(πx)sin(2πy)` with
/// `s = gyre_blend(t)`; velocity `(−∂ψ/∂y, ∂ψ/∂x)`. The boundary of the
/// square is invariant.
pub fn double_gyre_field() -> FlowField {
    FlowField::new("double_gyre", (0.0, 1.0), |t, [x, y]| {
        let s = gyre_blend(t);
        let (sx, cx) = (PI * x).sin_cos();
        let (s2x, c2x) = (2.0 * PI * x).sin_cos();
        let (sy, cy) = (PI * y).sin_cos();
        let (s2y, c2y) = (2.0 * PI * y).sin_cos();
        let psi_y = (1.0 - s) * PI * s2x * cy + s * 2.0 * PI * sx * c2y;
        let psi_x = (1.0 - s) * 2.0 * PI * c2x * sy + s * PI * cx * s2y;
        [-psi_y, psi_x]
    })
}

/// `F ≡ 0` on the given span.
pub fn zero_field(span: (f64, f64)) -> FlowField {
    FlowField::new("identity", span, |_, _| [0.0, 0.0])
}

/// Rigid counterclockwise rotation with unit angular speed about `center`.
pub fn rigid_rotation_field(center: Point, span: (f64, f64)) -> FlowField {
    FlowField::new("rotation", span, move |_, [x, y]| [-(y - center[1]), x - center[0]])
}

fn check_span(field: &FlowField, t0: f64, t1: f64) -> Result<(), FlowError> {
    let (lo, hi) = field.span;
    let slack = 1e-12 * (1.0 + hi.abs().max(lo.abs()));
    if !(t0 <= t1 && t0 >= lo - slack && t1 <= hi + slack) {
        return Err(FlowError::InvalidSpan { t0, t1, lo, hi });
    }
    Ok(())
}

fn rk4_step(field: &FlowField, t: f64, x: Point, h: f64) -> Point {
    let add = |p: Point, k: Point, s: f64| [p[0] + s * k[0], p[1] + s * k[1]];
    let k1 = field.velocity(t, x);
    let k2 = field.velocity(t + 0.5 * h, add(x, k1, 0.5 * h));
    let k3 = field.velocity(t + 0.5 * h, add(x, k2, 0.5 * h));
    let k4 = field.velocity(t + h, add(x, k3, h));
    [
        x[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        x[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
    ]
}

/// Step times `t0, t0+dt, …` ending exactly at `t1`, with the last step
/// shortened. Steps shorter than `1e-12·dt` are absorbed.
fn step_grid(t0: f64, t1: f64, dt: f64) -> impl Iterator<Item = (f64, f64)> {
    let span = t1 - t0;
    let full = (span / dt * (1.0 + 1e-12)).floor() as usize;
    let rest = span - full as f64 * dt;
    let n = if rest > 1e-12 * dt { full + 1 } else { full };
    (0..n).map(move |i| {
        let a = t0 + i as f64 * dt;
        let b = if i + 1 == n { t1 } else { t0 + (i + 1) as f64 * dt };
        (a, b - a)
    })
}

/// Classical fourth-order Runge–Kutta from `t0` to `t1` with fixed step
/// `dt` (the last step is shortened to land on `t1`).
pub fn integrate(field: &FlowField, x0: Point, t0: f64, t1: f64, dt: f64) -> Result<Point, FlowError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(FlowError::InvalidStep(dt));
    }
    check_span(field, t0, t1)?;
    let mut x = x0;
    for (t, h) in step_grid(t0, t1, dt) {
        x = rk4_step(field, t, x, h);
        if !(x[0].is_finite() && x[1].is_finite()) {
            return Err(FlowError::NonFiniteState { t: t + h });
        }
    }
    Ok(x)
}

/// Trajectories sampled at shared times, with a presence mask for missing
/// observations.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryEnsemble {
    times: Vec<f64>,
    /// Row-major `N × T`.
    positions: Vec<Point>,
    present: Vec<bool>,
    ids: Vec<String>,
}

impl TrajectoryEnsemble {
    /// Validates and builds an ensemble. `positions` and `present` are
    /// row-major `N × T`; absent entries may hold any value and are stored
    /// as NaN.
    pub fn new(
        ids: Vec<String>,
        times: Vec<f64>,
        mut positions: Vec<Point>,
        present: Vec<bool>,
    ) -> Result<Self, FlowError> {
        let bad = |m: String| Err(FlowError::InvalidEnsemble(m));
        let (n, nt) = (ids.len(), times.len());
        if nt == 0 {
            return bad("no sample times".into());
        }
        if positions.len() != n * nt || present.len() != n * nt {
            return bad(format!("expected {} entries for {n}x{nt}", n * nt));
        }
        if times.iter().any(|t| !t.is_finite()) || times.windows(2).any(|w| w[0] >= w[1]) {
            return bad("times must be finite and strictly increasing".into());
        }
        let need = nt.min(2);
        for i in 0..n {
            let row = &present[i * nt..(i + 1) * nt];
            let mut best = 0;
            let mut run = 0;
            for &p in row {
                run = if p { run + 1 } else { 0 };
                best = best.max(run);
            }
            if best < need {
                return bad(format!(
                    "trajectory `{}` is not present at {need} consecutive times",
                    ids[i]
                ));
            }
            for (l, &observed) in row.iter().enumerate() {
                let k = i * nt + l;
                if observed {
                    let p = positions[k];
                    if !(p[0].is_finite() && p[1].is_finite()) {
                        return bad(format!("trajectory `{}` has a non-finite position", ids[i]));
                    }
                } else {
                    positions[k] = [f64::NAN, f64::NAN];
                }
            }
        }
        Ok(Self {
            times,
            positions,
            present,
            ids,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn num_times(&self) -> usize {
        self.times.len()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn is_present(&self, i: usize, l: usize) -> bool {
        self.present[i * self.times.len() + l]
    }

    /// Position of trajectory `i` at slice `l`, if observed.
    pub fn position(&self, i: usize, l: usize) -> Option<Point> {
        let k = i * self.times.len() + l;
        self.present[k].then(|| self.positions[k])
    }

    /// Indices and positions of trajectories present at slice `l`.
    pub fn slice(&self, l: usize) -> (Vec<usize>, Vec<Point>) {
        (0..self.len())
            .filter_map(|i| self.position(i, l).map(|p| (i, p)))
            .unzip()
    }

    /// Copy with the observation `(i, l)` removed. The result is validated.
    pub fn without_observations(&self, hidden: &[(usize, usize)]) -> Result<Self, FlowError> {
        let mut present = self.present.clone();
        for &(i, l) in hidden {
            present[i * self.times.len() + l] = false;
        }
        Self::new(self.ids.clone(), self.times.clone(), self.positions.clone(), present)
    }

    /// Ensemble whose every slice equals `points` (identity dynamics).
    pub fn stationary(points: &[Point], times: Vec<f64>) -> Result<Self, FlowError> {
        let nt = times.len();
        let positions = points.iter().flat_map(|&p| std::iter::repeat_n(p, nt)).collect();
        Self::new(
            (0..points.len()).map(|i| i.to_string()).collect(),
            times,
            positions,
            vec![true; points.len() * nt],
        )
    }
}

/// Integrates every seed through the sample times. A trajectory whose
/// integration fails is marked absent from the failing time onward.
pub fn generate_trajectories(
    field: &FlowField,
    seeds: &[Point],
    times: &[f64],
    dt: f64,
) -> Result<TrajectoryEnsemble, FlowError> {
    if seeds.is_empty() {
        return Err(FlowError::NoSeeds);
    }
    if times.is_empty() {
        return Err(FlowError::InvalidEnsemble("no sample times".into()));
    }
    check_span(field, times[0], *times.last().unwrap())?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(FlowError::InvalidStep(dt));
    }
    let nt = times.len();
    let rows: Vec<(Vec<Point>, Vec<bool>)> = seeds
        .par_iter()
        .enumerate()
        .map(|(i, &seed)| {
            let mut pos = vec![[f64::NAN; 2]; nt];
            let mut present = vec![false; nt];
            pos[0] = seed;
            present[0] = true;
            let mut x = seed;
            for l in 1..nt {
                match integrate(field, x, times[l - 1], times[l], dt) {
                    Ok(y) => {
                        x = y;
                        pos[l] = y;
                        present[l] = true;
                    }
                    Err(e) => {
                        warn!("trajectory {i} dropped from t = {}: {e}", times[l]);
                        break;
                    }
                }
            }
            (pos, present)
        })
        .collect();
    let (positions, present): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    TrajectoryEnsemble::new(
        (0..seeds.len()).map(|i| i.to_string()).collect(),
        times.to_vec(),
        positions.concat(),
        present.concat(),
    )
}

/// `n` uniformly spaced times on `[t0, t1]` (`n ≥ 2`), or `[t0]` when `n = 1`.
pub fn uniform_times(t0: f64, t1: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![t0],
        _ => (0..n)
            .map(|l| {
                if l + 1 == n {
                    t1
                } else {
                    t0 + (t1 - t0) * l as f64 / (n - 1) as f64
                }
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    pub vertices: Vec<Point>,
    pub closed: bool,
}

impl Polyline {
    pub fn new(vertices: Vec<Point>, closed: bool) -> Result<Self, FlowError> {
        if vertices.len() < 2 {
            return Err(FlowError::InvalidPolyline("fewer than 2 vertices"));
        }
        if vertices.windows(2).any(|w| w[0] == w[1]) {
            return Err(FlowError::InvalidPolyline("repeated consecutive vertex"));
        }
        Ok(Self { vertices, closed })
    }

    pub fn open(vertices: Vec<Point>) -> Result<Self, FlowError> {
        Self::new(vertices, false)
    }

    pub fn segments(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        let n = self.vertices.len();
        let m = if self.closed { n } else { n - 1 };
        (0..m).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }
}

pub fn polyline_length(curve: &Polyline) -> f64 {
    curve.segments().map(|(a, b)| (b[0] - a[0]).hypot(b[1] - a[1])).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdvectOptions {
    pub dt: f64,
    pub max_seg: f64,
    pub max_vertices: usize,
}

impl Default for AdvectOptions {
    fn default() -> Self {
        Self {
            dt: 1e-2,
            max_seg: 1e-3,
            max_vertices: 1_000_000,
        }
    }
}

/// Advects a curve from `t0` to `t1`. See [`advect_polyline_snapshots`].
pub fn advect_polyline(
    field: &FlowField,
    curve: &Polyline,
    t0: f64,
    t1: f64,
    opts: &AdvectOptions,
) -> Result<Polyline, FlowError> {
    let mut snaps = advect_polyline_snapshots(field, curve, &[t0, t1], opts)?;
    Ok(snaps.pop().unwrap())
}

/// Advects a curve through `times` (the first entry is the start time) and
/// returns its image at each of them.
///
/// Vertices are stepped in macro-steps of `dt`. After each macro-step every
/// segment longer than `max_seg` is split at the midpoint of its
/// preimage, and the new vertex is integrated from the start time, so the
/// output is always the exact image (up to RK4 error) of a refined
/// parameterization of the input curve.
pub fn advect_polyline_snapshots(
    field: &FlowField,
    curve: &Polyline,
    times: &[f64],
    opts: &AdvectOptions,
) -> Result<Vec<Polyline>, FlowError> {
    if !(opts.max_seg > 0.0 && opts.max_seg.is_finite()) {
        return Err(FlowError::InvalidStep(opts.max_seg));
    }
    if !(opts.dt > 0.0 && opts.dt.is_finite()) {
        return Err(FlowError::InvalidStep(opts.dt));
    }
    let Some(&t0) = times.first() else {
        return Ok(Vec::new());
    };
    if times.windows(2).any(|w| w[0] > w[1]) {
        return Err(FlowError::InvalidEnsemble("snapshot times must be sorted".into()));
    }
    check_span(field, t0, *times.last().unwrap())?;
    if curve.vertices.len() > opts.max_vertices {
        return Err(FlowError::RefinementExplosion(opts.max_vertices));
    }

    // preimages at t0 and current images, kept in curve order
    let mut pre: Vec<Point> = curve.vertices.clone();
    let mut cur: Vec<Point> = curve.vertices.clone();
    let mut t = t0;
    let mut out = Vec::with_capacity(times.len());
    for &target in times {
        while t < target {
            let t_next = if target - t <= opts.dt * (1.0 + 1e-12) {
                target
            } else {
                t + opts.dt
            };
            cur = cur
                .par_iter()
                .map(|&x| integrate(field, x, t, t_next, opts.dt))
                .collect::<Result<_, _>>()?;
            t = t_next;
            refine(field, &mut pre, &mut cur, curve.closed, t0, t, opts)?;
        }
        out.push(Polyline {
            vertices: cur.clone(),
            closed: curve.closed,
        });
    }
    Ok(out)
}

fn refine(
    field: &FlowField,
    pre: &mut Vec<Point>,
    cur: &mut Vec<Point>,
    closed: bool,
    t0: f64,
    t: f64,
    opts: &AdvectOptions,
) -> Result<(), FlowError> {
    let too_long = |a: Point, b: Point| (b[0] - a[0]).hypot(b[1] - a[1]) > opts.max_seg;
    loop {
        let n = cur.len();
        let m = if closed { n } else { n - 1 };
        let split: Vec<usize> = (0..m).filter(|&i| too_long(cur[i], cur[(i + 1) % n])).collect();
        if split.is_empty() {
            return Ok(());
        }
        if n + split.len() > opts.max_vertices {
            return Err(FlowError::RefinementExplosion(opts.max_vertices));
        }
        let mids: Vec<Point> = split
            .iter()
            .map(|&i| {
                let (a, b) = (pre[i], pre[(i + 1) % n]);
                [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]
            })
            .collect();
        let images: Vec<Point> = mids
            .par_iter()
            .map(|&x| integrate(field, x, t0, t, opts.dt))
            .collect::<Result<_, _>>()?;
        let mut new_pre = Vec::with_capacity(n + split.len());
        let mut new_cur = Vec::with_capacity(n + split.len());
        let mut k = 0;
        for i in 0..n {
            new_pre.push(pre[i]);
            new_cur.push(cur[i]);
            if k < split.len() && split[k] == i {
                new_pre.push(mids[k]);
                new_cur.push(images[k]);
                k += 1;
            }
        }
        *pre = new_pre;
        *cur = new_cur;
    }
}
