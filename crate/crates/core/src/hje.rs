//! Hamilton-Jacobi evolution `u_t + |Du|^2 + b.Du = eps (Lap u + div b)` on
//! uniform 1-D and 2-D grids, modal (argmin) tracking, and the stationary and
//! characteristic closed forms in one dimension.
//!
//! The spatial operator is the local Lax-Friedrichs numerical Hamiltonian
//! `H(x, (p- + p+)/2) - sum_d alpha_d (p+_d - p-_d)/2` with a global `alpha`
//! per evaluation. One-sided slopes come from a minmod-limited second-order
//! reconstruction and time stepping is two-stage TVD Runge-Kutta. The
//! first-order variant (plain one-sided differences, forward Euler) is kept
//! behind [`Scheme`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{Domain, DriftField};
use crate::numerics::parabola_vertex;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

impl Axis {
    pub fn new(min: f64, max: f64, n: usize) -> Self {
        Axis { min, max, n }
    }

    pub fn dx(&self) -> f64 {
        (self.max - self.min) / (self.n - 1) as f64
    }

    pub fn coord(&self, i: usize) -> f64 {
        if i + 1 == self.n {
            self.max
        } else {
            self.min + self.dx() * i as f64
        }
    }

    pub fn coords(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.coord(i)).collect()
    }
}

/// Minimum number of nodes per axis.
pub const MIN_NODES: usize = 16;

/// Scalar values on a uniform rectangular grid, row-major (last axis fastest).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridFn {
    pub axes: Vec<Axis>,
    pub values: Vec<f64>,
    /// Nodes where the values are defined; `None` means all of them.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mask: Option<Vec<bool>>,
}

impl GridFn {
    pub fn new(axes: Vec<Axis>, values: Vec<f64>) -> Result<Self> {
        let g = GridFn {
            axes,
            values,
            mask: None,
        };
        g.validate()?;
        Ok(g)
    }

    /// Sample `f` at every node.
    pub fn from_fn<F: Fn(&[f64]) -> f64>(axes: Vec<Axis>, f: F) -> Result<Self> {
        let total: usize = axes.iter().map(|a| a.n).product();
        let mut values = Vec::with_capacity(total);
        let mut x = vec![0.0; axes.len()];
        for flat in 0..total {
            let idx = unflatten(&axes, flat);
            for (d, ax) in axes.iter().enumerate() {
                x[d] = ax.coord(idx[d]);
            }
            values.push(f(&x));
        }
        Self::new(axes, values)
    }

    pub fn validate(&self) -> Result<()> {
        if self.axes.is_empty() || self.axes.len() > 2 {
            return Err(Error::config("grid", "dimension must be 1 or 2"));
        }
        for (d, ax) in self.axes.iter().enumerate() {
            if ax.n < MIN_NODES {
                return Err(Error::config(format!("grid[{d}].n"), "need at least 16 nodes"));
            }
            if !(ax.max > ax.min) || !ax.min.is_finite() || !ax.max.is_finite() {
                return Err(Error::config(format!("grid[{d}]"), "need finite min < max"));
            }
        }
        let total: usize = self.axes.iter().map(|a| a.n).product();
        if self.values.len() != total {
            return Err(Error::config("grid.values", "length does not match axes"));
        }
        let defined = |i: usize| self.mask.as_ref().is_none_or(|m| m[i]);
        if self
            .values
            .iter()
            .enumerate()
            .any(|(i, v)| defined(i) && !v.is_finite())
        {
            return Err(Error::config("grid.values", "non-finite value"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        let idx = unflatten(&self.axes, flat);
        idx.iter()
            .zip(&self.axes)
            .map(|(&i, ax)| ax.coord(i))
            .collect()
    }

    pub fn is_defined(&self, flat: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m[flat])
    }

    /// Smallest defined value.
    pub fn min_value(&self) -> f64 {
        self.values
            .iter()
            .enumerate()
            .filter(|(i, _)| self.is_defined(*i))
            .map(|(_, v)| *v)
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest `|self - other|` over nodes defined in both grids.
    pub fn sup_distance(&self, other: &GridFn) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .enumerate()
            .filter(|(i, _)| self.is_defined(*i) && other.is_defined(*i))
            .map(|(_, (a, b))| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Copy shifted so that the minimum is 0.
    pub fn min_shifted(&self) -> GridFn {
        let m = self.min_value();
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v -= m);
        out
    }
}

fn unflatten(axes: &[Axis], flat: usize) -> Vec<usize> {
    match axes.len() {
        1 => vec![flat],
        _ => vec![flat / axes[1].n, flat % axes[1].n],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Order {
    /// One-sided first differences with forward Euler.
    First,
    /// Minmod-limited second-order slopes with two-stage TVD Runge-Kutta.
    #[default]
    Second,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// Ghost values continue the last two nodes linearly.
    Linear,
    /// Ghost values continue the last three nodes quadratically.
    #[default]
    Quadratic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scheme {
    #[serde(default)]
    pub order: Order,
    #[serde(default)]
    pub boundary: Boundary,
    #[serde(default = "default_cfl")]
    pub cfl: f64,
}

fn default_cfl() -> f64 {
    0.4
}

impl Default for Scheme {
    fn default() -> Self {
        Scheme {
            order: Order::Second,
            boundary: Boundary::Quadratic,
            cfl: default_cfl(),
        }
    }
}

/// Output of [`hje_evolve`].
#[derive(Debug, Clone, Serialize)]
pub struct HjeRun {
    pub times: Vec<f64>,
    pub snapshots: Vec<GridFn>,
    pub steps: usize,
    pub dt_min: f64,
    pub dt_max: f64,
    /// Global `alpha` at every step (largest over axes).
    pub alpha_history: Vec<f64>,
    pub scheme: Scheme,
}

const GHOSTS: usize = 3;

/// Static per-grid data for the spatial operator.
struct Operator<'a> {
    axes: &'a [Axis],
    drift: Vec<Vec<f64>>,
    div: Vec<f64>,
    eps: f64,
    periodic: bool,
    scheme: Scheme,
}

impl Operator<'_> {
    fn stride(&self, d: usize) -> usize {
        if d + 1 == self.axes.len() {
            1
        } else {
            self.axes[1].n
        }
    }

    /// Fill `line` (with ghosts) from the values along axis `d` through `start`.
    fn load_line(&self, u: &[f64], d: usize, start: usize, line: &mut Vec<f64>) {
        let n = self.axes[d].n;
        let stride = self.stride(d);
        line.clear();
        line.resize(n + 2 * GHOSTS, 0.0);
        for i in 0..n {
            line[GHOSTS + i] = u[start + i * stride];
        }
        if self.periodic {
            // node n-1 duplicates node 0
            let period = n - 1;
            for g in 0..GHOSTS {
                line[GHOSTS - 1 - g] = line[GHOSTS + period - 1 - g];
                line[GHOSTS + n + g] = line[GHOSTS + 1 + g];
            }
            return;
        }
        let (a, b, c) = (line[GHOSTS], line[GHOSTS + 1], line[GHOSTS + 2]);
        let (z, y, x) = (line[GHOSTS + n - 1], line[GHOSTS + n - 2], line[GHOSTS + n - 3]);
        for g in 1..=GHOSTS {
            let s = g as f64;
            let (left, right) = match self.scheme.boundary {
                Boundary::Linear => (a - s * (b - a), z + s * (z - y)),
                Boundary::Quadratic => (
                    // Newton form through nodes 0, 1, 2 evaluated at -s
                    a - s * (b - a) + 0.5 * s * (s + 1.0) * (a - 2.0 * b + c),
                    z + s * (z - y) + 0.5 * s * (s + 1.0) * (z - 2.0 * y + x),
                ),
            };
            line[GHOSTS - g] = left;
            line[GHOSTS + n - 1 + g] = right;
        }
    }

    /// Time derivative `-H_hat + viscous` at every node. Returns the largest
    /// per-axis alpha and `sum_d alpha_d / dx_d`.
    fn rate(&self, u: &[f64], out: &mut [f64]) -> (f64, f64) {
        let dim = self.axes.len();
        let total = u.len();
        let mut pm = vec![vec![0.0; total]; dim];
        let mut pp = vec![vec![0.0; total]; dim];
        let mut lap = vec![0.0; total];
        let mut line = Vec::new();
        for d in 0..dim {
            let ax = self.axes[d];
            let dx = ax.dx();
            let stride = self.stride(d);
            let starts: Vec<usize> = if dim == 1 {
                vec![0]
            } else if d == 0 {
                (0..self.axes[1].n).collect()
            } else {
                (0..self.axes[0].n).map(|i| i * self.axes[1].n).collect()
            };
            for start in starts {
                self.load_line(u, d, start, &mut line);
                for i in 0..ax.n {
                    let c = GHOSTS + i;
                    let flat = start + i * stride;
                    let mut m = (line[c] - line[c - 1]) / dx;
                    let mut p = (line[c + 1] - line[c]) / dx;
                    if self.scheme.order == Order::Second {
                        let d2 = |k: usize| (line[k + 1] - 2.0 * line[k] + line[k - 1]) / dx;
                        m += 0.5 * minmod(d2(c - 1), d2(c));
                        p -= 0.5 * minmod(d2(c), d2(c + 1));
                    }
                    pm[d][flat] = m;
                    pp[d][flat] = p;
                    if self.eps > 0.0 {
                        lap[flat] += (line[c + 1] - 2.0 * line[c] + line[c - 1]) / (dx * dx);
                    }
                }
            }
        }
        let mut alpha = vec![0.0f64; dim];
        for d in 0..dim {
            for k in 0..total {
                let b = self.drift[k][d];
                let a = (2.0 * pm[d][k] + b).abs().max((2.0 * pp[d][k] + b).abs());
                if a > alpha[d] {
                    alpha[d] = a;
                }
            }
        }
        for k in 0..total {
            let mut h = 0.0;
            for d in 0..dim {
                let pbar = 0.5 * (pm[d][k] + pp[d][k]);
                h += pbar * pbar + self.drift[k][d] * pbar - 0.5 * alpha[d] * (pp[d][k] - pm[d][k]);
            }
            out[k] = -h;
            if self.eps > 0.0 {
                out[k] += self.eps * (lap[k] + self.div[k]);
            }
        }
        // dt bound uses sum_d alpha_d / dx_d
        let speed = alpha
            .iter()
            .zip(self.axes)
            .map(|(a, ax)| a / ax.dx())
            .sum::<f64>();
        (alpha.iter().copied().fold(0.0, f64::max), speed)
    }

    fn max_dt(&self, alpha_rate: f64) -> f64 {
        let mut dt = if alpha_rate > 0.0 {
            self.scheme.cfl / alpha_rate
        } else {
            f64::INFINITY
        };
        if self.eps > 0.0 {
            let inv: f64 = self.axes.iter().map(|a| 1.0 / (a.dx() * a.dx())).sum();
            dt = dt.min(0.2 / (self.eps * inv));
        }
        dt
    }

    fn close_period(&self, u: &mut [f64]) {
        if self.periodic {
            let n = u.len();
            u[n - 1] = u[0];
        }
    }
}

fn minmod(a: f64, b: f64) -> f64 {
    if a * b <= 0.0 {
        0.0
    } else if a.abs() < b.abs() {
        a
    } else {
        b
    }
}

/// Evolve `u0` to time `t_end` and return `snapshots` evenly spaced grids
/// (the first at `t = 0` when more than one is requested, the last at `t_end`).
pub fn hje_evolve(
    field: &DriftField,
    u0: &GridFn,
    t_end: f64,
    eps_viscous: f64,
    snapshots: usize,
    scheme: Scheme,
) -> Result<HjeRun> {
    u0.validate()?;
    if u0.mask.is_some() {
        return Err(Error::precondition("initial grid must be defined everywhere"));
    }
    if u0.dim() != field.dim() {
        return Err(Error::precondition("grid and field dimensions differ"));
    }
    if !(t_end > 0.0) || !(eps_viscous >= 0.0) || snapshots == 0 {
        return Err(Error::precondition("need T > 0, eps >= 0, snapshots >= 1"));
    }
    if !(scheme.cfl > 0.0 && scheme.cfl <= 1.0) {
        return Err(Error::config("hje.scheme.cfl", "must lie in (0, 1]"));
    }
    let periodic = field.domain() == Domain::Circle;
    if periodic && (u0.axes[0].min != 0.0 || u0.axes[0].max != 1.0) {
        return Err(Error::config("grid", "circle grids must span [0, 1]"));
    }
    let total = u0.len();
    let points: Vec<Vec<f64>> = (0..total).map(|k| u0.point(k)).collect();
    let op = Operator {
        axes: &u0.axes,
        drift: points.iter().map(|x| field.eval(x)).collect(),
        div: points.iter().map(|x| field.divergence(x)).collect(),
        eps: eps_viscous,
        periodic,
        scheme,
    };
    let targets: Vec<f64> = if snapshots == 1 {
        vec![t_end]
    } else {
        (0..snapshots)
            .map(|k| {
                if k + 1 == snapshots {
                    t_end
                } else {
                    t_end * k as f64 / (snapshots - 1) as f64
                }
            })
            .collect()
    };

    let mut u = u0.values.clone();
    let mut k1 = vec![0.0; total];
    let mut k2 = vec![0.0; total];
    let mut stage = vec![0.0; total];
    let mut run = HjeRun {
        times: Vec::with_capacity(targets.len()),
        snapshots: Vec::with_capacity(targets.len()),
        steps: 0,
        dt_min: f64::INFINITY,
        dt_max: 0.0,
        alpha_history: Vec::new(),
        scheme,
    };
    let mut t = 0.0;
    for &target in &targets {
        while t < target {
            let (alpha, speed) = op.rate(&u, &mut k1);
            run.alpha_history.push(alpha);
            let mut dt = op.max_dt(speed);
            let last = dt >= target - t;
            if last {
                dt = target - t;
            }
            match scheme.order {
                Order::First => {
                    for i in 0..total {
                        u[i] += dt * k1[i];
                    }
                }
                Order::Second => {
                    for i in 0..total {
                        stage[i] = u[i] + dt * k1[i];
                    }
                    op.close_period(&mut stage);
                    op.rate(&stage, &mut k2);
                    for i in 0..total {
                        u[i] = 0.5 * u[i] + 0.5 * (stage[i] + dt * k2[i]);
                    }
                }
            }
            op.close_period(&mut u);
            run.steps += 1;
            if !u.iter().all(|v| v.is_finite()) {
                return Err(Error::BlowUp { step: run.steps });
            }
            run.dt_min = run.dt_min.min(dt);
            run.dt_max = run.dt_max.max(dt);
            t = if last { target } else { t + dt };
        }
        run.times.push(target);
        run.snapshots.push(GridFn {
            axes: u0.axes.clone(),
            values: u.clone(),
            mask: None,
        });
    }
    Ok(run)
}

fn require_line(field: &DriftField, axis: &Axis) -> Result<()> {
    if field.dim() != 1 {
        return Err(Error::precondition("needs a one-dimensional field"));
    }
    if axis.n < MIN_NODES || !(axis.max > axis.min) {
        return Err(Error::config("grid", "need n >= 16 and min < max"));
    }
    Ok(())
}

/// `u(x) = -integral_{x_ref}^x b`, shifted to minimum 0.
///
/// The cumulative trapezoid carries the endpoint correction
/// `-h^2/12 (f'(x) - f'(x_0))`, which makes it exact for cubic drifts.
pub fn stationary_rate_1d(field: &DriftField, axis: Axis, x_ref: f64) -> Result<GridFn> {
    require_line(field, &axis)?;
    let _ = x_ref; // the min-shift removes any reference offset
    let xs = axis.coords();
    let h = axis.dx();
    let neg_b: Vec<f64> = xs.iter().map(|&x| -field.eval1(x)).collect();
    let neg_db: Vec<f64> = xs.iter().map(|&x| -field.deriv1(x)).collect();
    let mut values = Vec::with_capacity(xs.len());
    let mut acc = 0.0;
    values.push(0.0);
    for i in 1..xs.len() {
        acc += 0.5 * h * (neg_b[i - 1] + neg_b[i]);
        values.push(acc - h * h / 12.0 * (neg_db[i] - neg_db[0]));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    values.iter_mut().for_each(|v| *v -= min);
    GridFn::new(vec![axis], values)
}

/// Which root of `p^2 + b p = E` to integrate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// `(-b + sqrt(b^2 + 4E)) / 2`.
    Plus,
    /// `(-b - sqrt(b^2 + 4E)) / 2`.
    Minus,
    /// The root that reduces to `p = 0` at `E = 0`: `(-b + sgn(b) sqrt(b^2 + 4E)) / 2`.
    Flow,
    /// The root that reduces to `p = -b` at `E = 0`: `(-b - sgn(b) sqrt(b^2 + 4E)) / 2`.
    Counter,
}

impl Branch {
    pub fn momentum(self, b: f64, energy: f64) -> Option<f64> {
        let disc = b * b + 4.0 * energy;
        if disc < 0.0 {
            return None;
        }
        let r = disc.sqrt();
        let s = if b >= 0.0 { 1.0 } else { -1.0 };
        Some(match self {
            Branch::Plus => 0.5 * (-b + r),
            Branch::Minus => 0.5 * (-b - r),
            Branch::Flow => 0.5 * (-b + s * r),
            Branch::Counter => 0.5 * (-b - s * r),
        })
    }
}

/// Traveling solution `u(x, t) = integral_{x0}^x p(q) dq - E t`.
///
/// Nodes where the branch is complex, and nodes cut off from `x0` by such a
/// gap, are masked out.
pub fn characteristic_solution(
    field: &DriftField,
    energy: f64,
    x0: f64,
    branch: Branch,
    t: f64,
    axis: Axis,
) -> Result<GridFn> {
    require_line(field, &axis)?;
    let xs = axis.coords();
    let n = xs.len();
    let p = |x: f64| branch.momentum(field.eval1(x), energy);
    // integral from x0 to the node, piecewise Simpson on each cell
    let simpson = |a: f64, b: f64| -> Option<f64> {
        let (pa, pm, pb) = (p(a)?, p(0.5 * (a + b))?, p(b)?);
        Some((b - a) / 6.0 * (pa + 4.0 * pm + pb))
    };
    let anchor = xs.partition_point(|&x| x < x0).min(n - 1);
    let mut values = vec![0.0; n];
    let mut mask = vec![false; n];
    if let Some(v) = simpson(x0, xs[anchor]) {
        values[anchor] = v;
        mask[anchor] = true;
        for i in anchor + 1..n {
            match simpson(xs[i - 1], xs[i]) {
                Some(v) => {
                    values[i] = values[i - 1] + v;
                    mask[i] = true;
                }
                None => break,
            }
        }
        for i in (0..anchor).rev() {
            match simpson(xs[i + 1], xs[i]) {
                Some(v) => {
                    values[i] = values[i + 1] + v;
                    mask[i] = true;
                }
                None => break,
            }
        }
    }
    for (v, ok) in values.iter_mut().zip(&mask) {
        if *ok {
            *v -= energy * t;
        } else {
            *v = f64::NAN;
        }
    }
    let all = mask.iter().all(|&m| m);
    Ok(GridFn {
        axes: vec![axis],
        values,
        mask: if all { None } else { Some(mask) },
    })
}

/// Argmin trajectory of a snapshot sequence.
#[derive(Debug, Clone, Serialize)]
pub struct ModalTrace {
    pub times: Vec<f64>,
    pub x_star: Vec<Vec<f64>>,
    pub u_star: Vec<f64>,
    /// Second difference at the discrete argmin (1-D only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub curvature: Option<Vec<f64>>,
    /// Set when a minimum reached the boundary; the trace stops before it.
    pub truncated: bool,
}

/// Refined argmin of each snapshot.
pub fn track_minimum(times: &[f64], snapshots: &[GridFn]) -> Result<ModalTrace> {
    if times.len() != snapshots.len() || snapshots.is_empty() {
        return Err(Error::precondition("need one time per snapshot"));
    }
    let one_d = snapshots[0].dim() == 1;
    let mut trace = ModalTrace {
        times: Vec::new(),
        x_star: Vec::new(),
        u_star: Vec::new(),
        curvature: one_d.then(Vec::new),
        truncated: false,
    };
    for (&t, g) in times.iter().zip(snapshots) {
        let (imin, _) = g
            .values
            .iter()
            .enumerate()
            .filter(|(i, _)| g.is_defined(*i))
            .fold((0, f64::INFINITY), |best, (i, &v)| if v < best.1 { (i, v) } else { best });
        let idx = unflatten(&g.axes, imin);
        if idx.iter().zip(&g.axes).any(|(&i, ax)| i == 0 || i + 1 == ax.n) {
            trace.truncated = true;
            break;
        }
        let c = g.values[imin];
        let mut x = Vec::with_capacity(g.dim());
        let mut u = c;
        for (d, ax) in g.axes.iter().enumerate() {
            let stride = if d + 1 == g.dim() { 1 } else { g.axes[1].n };
            let (l, r) = (g.values[imin - stride], g.values[imin + stride]);
            let (off, v) = parabola_vertex(l, c, r, ax.dx());
            x.push(ax.coord(idx[d]) + off);
            u += v - c;
            if let Some(curv) = trace.curvature.as_mut() {
                curv.push((l - 2.0 * c + r) / (ax.dx() * ax.dx()));
            }
        }
        trace.times.push(t);
        trace.x_star.push(x);
        trace.u_star.push(u);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{build_field, FieldSpec};
    use crate::oracle::{ou_rate, OuState};

    fn ou() -> DriftField {
        build_field(&FieldSpec::Ou { b_coef: 1.0 }).unwrap()
    }

    fn double_well() -> DriftField {
        build_field(&FieldSpec::Poly1d {
            coeffs: vec![0.0, 1.0, 0.0, -1.0],
        })
        .unwrap()
    }

    fn gaussian_start(n: usize) -> GridFn {
        GridFn::from_fn(vec![Axis::new(-6.0, 6.0, n)], |x| (x[0] - 3.0).powi(2) / 4.0).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(GridFn::new(vec![Axis::new(0.0, 1.0, 8)], vec![0.0; 8]).is_err());
        assert!(GridFn::new(vec![Axis::new(0.0, 1.0, 16)], vec![0.0; 15]).is_err());
        assert!(GridFn::new(vec![Axis::new(1.0, 0.0, 16)], vec![0.0; 16]).is_err());
        let g = GridFn::new(vec![Axis::new(0.0, 1.0, 16)], vec![0.0; 16]).unwrap();
        assert_eq!(g.point(15), vec![1.0]);
    }

    #[test]
    fn zero_data_stays_zero() {
        let g = GridFn::new(vec![Axis::new(-3.0, 3.0, 61)], vec![0.0; 61]).unwrap();
        let run = hje_evolve(&double_well(), &g, 1.0, 0.0, 3, Scheme::default()).unwrap();
        assert_eq!(run.times, vec![0.0, 0.5, 1.0]);
        assert!(run.snapshots.iter().all(|s| s.values.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn gaussian_matches_oracle() {
        let g = gaussian_start(401);
        let run = hje_evolve(&ou(), &g, 1.0, 0.0, 2, Scheme::default()).unwrap();
        let state = OuState::new(1.0, 3.0, 2.0, 0.0).unwrap();
        let last = run.snapshots.last().unwrap();
        let err = (0..last.len())
            .map(|k| (last.values[k] - ou_rate(&state, last.point(k)[0], 1.0).unwrap()).abs())
            .fold(0.0, f64::max);
        assert!(err <= 5e-3, "{err}");
    }

    #[test]
    fn first_order_scheme_runs() {
        let g = gaussian_start(201);
        let scheme = Scheme {
            order: Order::First,
            boundary: Boundary::Linear,
            cfl: 0.4,
        };
        let run = hje_evolve(&ou(), &g, 0.5, 0.0, 2, scheme).unwrap();
        let trace = track_minimum(&run.times, &run.snapshots).unwrap();
        let mu = 3.0 * (-0.5f64).exp();
        assert!((trace.x_star[1][0] - mu).abs() < 0.05);
    }

    #[test]
    fn viscous_gaussian_keeps_shape() {
        // with eps > 0 the quadratic family is still exact up to the constant a(t)
        let g = gaussian_start(241);
        let eps = 0.1;
        let run = hje_evolve(&ou(), &g, 0.5, eps, 2, Scheme::default()).unwrap();
        let state = OuState::new(1.0, 3.0, 2.0, eps).unwrap();
        let p = crate::oracle::ou_params(&state, 0.5).unwrap();
        let last = run.snapshots.last().unwrap();
        let err = (0..last.len())
            .map(|k| {
                let exact = ou_rate(&state, last.point(k)[0], 0.5).unwrap() + p.a;
                (last.values[k] - exact).abs()
            })
            .fold(0.0, f64::max);
        assert!(err < 5e-3, "{err}");
    }

    #[test]
    fn stationary_examples() {
        let axis = Axis::new(-3.0, 3.0, 601);
        let u = stationary_rate_1d(&ou(), axis, 0.0).unwrap();
        assert!((u.values[500] - 2.0).abs() < 1e-12);
        let u = stationary_rate_1d(&double_well(), axis, 0.0).unwrap();
        assert!((u.values[300] - 0.25).abs() < 1e-12);
        assert_eq!(u.min_value(), 0.0);
        let zero = build_field(&FieldSpec::Poly1d { coeffs: vec![0.0] }).unwrap();
        let u = stationary_rate_1d(&zero, axis, 1.0).unwrap();
        assert!(u.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn characteristic_examples() {
        let axis = Axis::new(-2.0, 2.0, 81);
        let f = double_well();
        let stat = stationary_rate_1d(&f, axis, 0.0).unwrap();
        let u = characteristic_solution(&f, 0.0, 0.0, Branch::Counter, 3.0, axis).unwrap();
        let shifted = u.min_shifted();
        assert!(shifted.sup_distance(&stat) < 1e-6);
        let u = characteristic_solution(&f, 0.0, 0.0, Branch::Flow, 3.0, axis).unwrap();
        assert!(u.values.iter().all(|&v| v.abs() < 1e-15));

        let one = build_field(&FieldSpec::Poly1d { coeffs: vec![1.0] }).unwrap();
        let u = characteristic_solution(&one, 0.75, 0.0, Branch::Plus, 2.0, axis).unwrap();
        for k in 0..u.len() {
            let x = u.point(k)[0];
            assert!((u.values[k] - (0.5 * x - 1.5)).abs() < 1e-12);
        }
    }

    #[test]
    fn characteristic_mask_cuts_gaps() {
        let axis = Axis::new(-2.0, 2.0, 41);
        // b = x: b^2 - 1 < 0 on |x| < 1/2 when E = -1/16
        let f = build_field(&FieldSpec::Poly1d {
            coeffs: vec![0.0, 1.0],
        })
        .unwrap();
        let u = characteristic_solution(&f, -1.0 / 16.0, 1.0, Branch::Plus, 0.0, axis).unwrap();
        let mask = u.mask.as_ref().unwrap();
        assert!(mask[40] && mask[30]);
        assert!(!mask[20] && !mask[0]);
    }

    #[test]
    fn characteristic_data_travels() {
        let axis = Axis::new(-2.0, 2.0, 81);
        let one = build_field(&FieldSpec::Poly1d { coeffs: vec![1.0] }).unwrap();
        let u0 = characteristic_solution(&one, 0.75, 0.0, Branch::Plus, 0.0, axis).unwrap();
        let run = hje_evolve(&one, &u0, 1.0, 0.0, 1, Scheme::default()).unwrap();
        let want = characteristic_solution(&one, 0.75, 0.0, Branch::Plus, 1.0, axis).unwrap();
        assert!(run.snapshots[0].sup_distance(&want) < 1e-10);
    }

    #[test]
    fn track_minimum_of_stationary_grid() {
        let axis = Axis::new(-3.0, 3.0, 301);
        let u = stationary_rate_1d(&ou(), axis, 0.0).unwrap();
        let trace = track_minimum(&[0.0, 1.0], &[u.clone(), u]).unwrap();
        assert_eq!(trace.x_star[0], trace.x_star[1]);
        assert!(trace.x_star[0][0].abs() < 1e-12);
        let curv = trace.curvature.unwrap();
        assert!((curv[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn track_minimum_truncates_at_boundary() {
        let g = GridFn::from_fn(vec![Axis::new(0.0, 1.0, 32)], |x| x[0]).unwrap();
        let trace = track_minimum(&[0.0], &[g]).unwrap();
        assert!(trace.truncated);
        assert!(trace.times.is_empty());
    }

    #[test]
    fn two_dimensional_gaussian() {
        let f = build_field(&FieldSpec::RotOu { omega: 1.0 }).unwrap();
        let axes = vec![Axis::new(-4.0, 4.0, 81), Axis::new(-4.0, 4.0, 81)];
        // stationary quasipotential of rot_ou is |x|^2 / 2
        let u0 = GridFn::from_fn(axes, |x| 0.5 * (x[0] * x[0] + x[1] * x[1])).unwrap();
        let run = hje_evolve(&f, &u0, 0.5, 0.0, 1, Scheme::default()).unwrap();
        let d = run.snapshots[0].sup_distance(&u0);
        assert!(d < 5e-3, "{d}");
        let trace = track_minimum(&run.times, &run.snapshots).unwrap();
        assert!(trace.x_star[0].iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn circle_grid_is_periodic() {
        let f = build_field(&FieldSpec::Circle {
            b0: 0.0,
            a: vec![],
            c: vec![-1.0],
        })
        .unwrap();
        let axis = Axis::new(0.0, 1.0, 129);
        let u0 = GridFn::from_fn(vec![axis], |x| 0.1 * (2.0 * std::f64::consts::PI * x[0]).cos() + 0.1)
            .unwrap();
        let run = hje_evolve(&f, &u0, 0.5, 0.0, 1, Scheme::default()).unwrap();
        let v = &run.snapshots[0].values;
        assert_eq!(v[0], v[128]);
        assert!(v.iter().all(|x| x.is_finite()));
    }
}
