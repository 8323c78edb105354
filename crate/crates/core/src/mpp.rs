//! Most probable paths between fixed endpoints in fixed time.
//!
//! In one dimension the Hamiltonian energy `E = p^2 + b p` is conserved, so a
//! monotone path from `q1` to `q2` moves with `|q'| = sqrt(b^2 + 4E)` and the
//! travel time `tau(E) = integral dq / sqrt(b^2 + 4E)` pins `E` (shooting).
//! In any dimension the discrete action can be minimized directly over the
//! interior knots of the path.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fields::DriftField;
use crate::mechanics::discrete_action;
use crate::numerics::{adaptive_simpson, bisect, scan_roots};
use crate::simulate::PathSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MppMethod {
    Shooting,
    Minimization,
}

#[derive(Debug, Clone, Serialize)]
pub struct MppResult {
    /// Path with momentum and energy channels filled in.
    pub path: PathSample,
    pub action: f64,
    pub energy: f64,
    pub max_energy_deviation: f64,
    pub method: MppMethod,
    pub converged: bool,
    pub grad_norm: f64,
    pub iterations: usize,
}

/// Relative tolerance on the matched travel time.
pub const SHOOT_TIME_RTOL: f64 = 1e-8;
/// Number of samples along a reconstructed shooting path.
pub const SHOOT_PATH_POINTS: usize = 1001;

struct Shooter<'a> {
    field: &'a DriftField,
    lo: f64,
    hi: f64,
}

impl Shooter<'_> {
    fn speed(&self, q: f64, energy: f64) -> f64 {
        let b = self.field.eval1(q);
        (b * b + 4.0 * energy).max(0.0).sqrt()
    }

    fn time_between(&self, a: f64, b: f64, energy: f64, tol: f64) -> f64 {
        adaptive_simpson(&|q: f64| 1.0 / self.speed(q, energy), a, b, tol)
    }

    fn travel_time(&self, energy: f64, t_target: f64) -> f64 {
        self.time_between(self.lo, self.hi, energy, 1e-12 * t_target.max(1e-3))
    }

    /// `-min b^2 / 4` over the segment, by dense scan and golden refinement.
    fn energy_floor(&self) -> f64 {
        let n = 4096;
        let h = (self.hi - self.lo) / n as f64;
        let b2 = |q: f64| {
            let b = self.field.eval1(q);
            b * b
        };
        let (mut best_q, mut best) = (self.lo, b2(self.lo));
        for k in 1..=n {
            let q = self.lo + h * k as f64;
            let v = b2(q);
            if v < best {
                best = v;
                best_q = q;
            }
        }
        let (mut a, mut c) = ((best_q - h).max(self.lo), (best_q + h).min(self.hi));
        let g = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..100 {
            let x1 = c - g * (c - a);
            let x2 = a + g * (c - a);
            if b2(x1) < b2(x2) {
                c = x2;
            } else {
                a = x1;
            }
        }
        best = best.min(b2(0.5 * (a + c)));
        -best / 4.0
    }
}

/// Monotone most probable path from `q1` to `q2` in time `t_end`, by shooting on `E`.
pub fn mpp_shoot_1d(field: &DriftField, q1: f64, q2: f64, t_end: f64) -> Result<MppResult> {
    if field.dim() != 1 {
        return Err(Error::precondition("shooting needs a one-dimensional field"));
    }
    if q1 == q2 || !(t_end > 0.0) || !q1.is_finite() || !q2.is_finite() {
        return Err(Error::precondition("need q1 != q2 and T > 0"));
    }
    let shooter = Shooter {
        field,
        lo: q1.min(q2),
        hi: q1.max(q2),
    };
    let e_min = shooter.energy_floor();
    let tau = |e: f64| shooter.travel_time(e, t_end);

    let mut e_hi = 1f64.max(e_min + 1.0);
    let mut grow = 0;
    while tau(e_hi) >= t_end {
        e_hi *= 2.0;
        grow += 1;
        if grow > 200 {
            return Err(Error::numerical("no monotone path: upper energy bracket not found"));
        }
    }
    // tau is finite and decreasing on (e_min, inf); a NaN or infinite value
    // only shows up when the probe sits on the floor itself.
    let longer = |e: f64| {
        let t = tau(e);
        !t.is_finite() || t > t_end
    };
    let mut gap = e_hi - e_min;
    let mut e_lo = e_min + 0.5 * gap;
    let mut shrink = 0;
    while !longer(e_lo) {
        gap *= 0.5;
        e_lo = e_min + gap;
        shrink += 1;
        if shrink > 200 || e_lo <= e_min {
            return Err(Error::numerical(format!(
                "no monotone path: T = {t_end} exceeds the longest monotone travel time"
            )));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (e_lo + e_hi);
        if mid <= e_lo || mid >= e_hi {
            break;
        }
        if longer(mid) {
            e_lo = mid;
        } else {
            e_hi = mid;
        }
    }
    let energy = 0.5 * (e_lo + e_hi);
    let t_found = tau(energy);
    if (t_found - t_end).abs() > SHOOT_TIME_RTOL * t_end {
        return Err(Error::numerical(format!(
            "shooting did not reach travel-time tolerance (tau = {t_found}, T = {t_end})"
        )));
    }

    let sign = (q2 - q1).signum();
    let action = adaptive_simpson(
        &|q: f64| {
            let s = shooter.speed(q, energy);
            let v = s - sign * field.eval1(q);
            v * v / (4.0 * s)
        },
        shooter.lo,
        shooter.hi,
        1e-13,
    );

    let path = reconstruct_shooting_path(&shooter, q1, q2, energy, t_found, t_end);
    Ok(MppResult {
        path,
        action,
        energy,
        max_energy_deviation: 0.0,
        method: MppMethod::Shooting,
        converged: true,
        grad_norm: 0.0,
        iterations: 0,
    })
}

/// Invert `t(q) = integral_{q1}^{q} dq / |q'|` on uniform time nodes.
fn reconstruct_shooting_path(
    shooter: &Shooter<'_>,
    q1: f64,
    q2: f64,
    energy: f64,
    t_total: f64,
    t_end: f64,
) -> PathSample {
    let field = shooter.field;
    let sign = (q2 - q1).signum();
    let cells = 2048;
    let h = (q2 - q1) / cells as f64;
    let mut nodes = Vec::with_capacity(cells + 1);
    let mut cum = Vec::with_capacity(cells + 1);
    nodes.push(q1);
    cum.push(0.0);
    let mut acc = 0.0;
    for k in 0..cells {
        let a = q1 + h * k as f64;
        let b = if k + 1 == cells { q2 } else { a + h };
        acc += shooter.time_between(a.min(b), a.max(b), energy, 1e-14);
        nodes.push(b);
        cum.push(acc);
    }
    let n = SHOOT_PATH_POINTS - 1;
    let dt = t_end / n as f64;
    let scale = acc / t_total;
    let mut states = Vec::with_capacity(n + 1);
    let mut cell = 0;
    for k in 0..=n {
        let t = (k as f64 * dt * scale).min(acc);
        let q = if k == 0 {
            q1
        } else if k == n {
            q2
        } else {
            while cell + 1 < cells && cum[cell + 1] < t {
                cell += 1;
            }
            let a = nodes[cell];
            let rest = t - cum[cell];
            let f = |q: f64| {
                shooter.time_between(a.min(q), a.max(q), energy, 1e-14) - rest
            };
            bisect(&f, a, nodes[cell + 1], 1e-15 * (1.0 + a.abs()))
        };
        states.push(vec![q]);
    }
    let mut path = PathSample::from_states(states, dt);
    let momentum: Vec<Vec<f64>> = path
        .states
        .iter()
        .map(|q| {
            let b = field.eval1(q[0]);
            vec![0.5 * (sign * shooter.speed(q[0], energy) - b)]
        })
        .collect();
    path.energy = Some(vec![energy; momentum.len()]);
    path.momentum = Some(momentum);
    path
}

/// Options for [`mpp_minimize`].
#[derive(Debug, Clone, Copy)]
pub struct MinimizeOptions {
    pub grad_tol: f64,
    pub max_iter: usize,
    pub armijo_c: f64,
    pub shrink: f64,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        MinimizeOptions {
            grad_tol: 1e-8,
            max_iter: 100_000,
            armijo_c: 1e-4,
            shrink: 0.5,
        }
    }
}

/// Gradient of the discrete action with respect to every knot.
fn action_gradient(field: &DriftField, x: &[Vec<f64>], dt: f64, grad: &mut [Vec<f64>]) {
    let n = field.dim();
    for g in grad.iter_mut() {
        g.iter_mut().for_each(|v| *v = 0.0);
    }
    let bs: Vec<Vec<f64>> = x.iter().map(|p| field.eval(p)).collect();
    let js: Vec<Vec<Vec<f64>>> = x.iter().map(|p| field.jacobian(p)).collect();
    for k in 0..x.len() - 1 {
        let r: Vec<f64> = (0..n)
            .map(|i| (x[k + 1][i] - x[k][i]) / dt - 0.5 * (bs[k][i] + bs[k + 1][i]))
            .collect();
        for j in 0..n {
            let mut jt0 = 0.0;
            let mut jt1 = 0.0;
            for i in 0..n {
                jt0 += js[k][i][j] * r[i];
                jt1 += js[k + 1][i][j] * r[i];
            }
            grad[k][j] += -0.5 * r[j] - 0.25 * dt * jt0;
            grad[k + 1][j] += 0.5 * r[j] - 0.25 * dt * jt1;
        }
    }
}

fn sup_norm_interior(grad: &[Vec<f64>]) -> f64 {
    grad[1..grad.len() - 1]
        .iter()
        .flatten()
        .fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Minimize the discrete action over `knots` interior points with fixed ends.
pub fn mpp_minimize(
    field: &DriftField,
    q1: &[f64],
    q2: &[f64],
    t_end: f64,
    knots: usize,
) -> Result<MppResult> {
    mpp_minimize_with(field, q1, q2, t_end, knots, MinimizeOptions::default())
}

pub fn mpp_minimize_with(
    field: &DriftField,
    q1: &[f64],
    q2: &[f64],
    t_end: f64,
    knots: usize,
    opts: MinimizeOptions,
) -> Result<MppResult> {
    let n = field.dim();
    if q1.len() != n || q2.len() != n {
        return Err(Error::precondition("endpoint dimension mismatch"));
    }
    if knots < 8 {
        return Err(Error::precondition("need at least 8 interior knots"));
    }
    if !(t_end > 0.0) {
        return Err(Error::precondition("T must be positive"));
    }
    let m = knots + 1;
    let dt = t_end / m as f64;
    let mut x: Vec<Vec<f64>> = (0..=m)
        .map(|k| {
            let s = k as f64 / m as f64;
            q1.iter().zip(q2).map(|(a, b)| a + s * (b - a)).collect()
        })
        .collect();
    let mut grad = vec![vec![0.0; n]; m + 1];
    let mut trial = x.clone();
    let mut value = discrete_action(field, &x, dt);
    action_gradient(field, &x, dt, &mut grad);
    let mut gnorm = sup_norm_interior(&grad);
    let mut step = dt;
    let mut iterations = 0;
    while gnorm > opts.grad_tol && iterations < opts.max_iter {
        iterations += 1;
        let g2: f64 = grad[1..m].iter().flatten().map(|v| v * v).sum();
        let mut alpha = step * 2.0;
        loop {
            for k in 1..m {
                for i in 0..n {
                    trial[k][i] = x[k][i] - alpha * grad[k][i];
                }
            }
            let candidate = discrete_action(field, &trial, dt);
            if candidate.is_finite() && candidate <= value - opts.armijo_c * alpha * g2 {
                value = candidate;
                break;
            }
            alpha *= opts.shrink;
            if alpha < 1e-300 {
                return Err(Error::numerical("line search failed"));
            }
        }
        step = alpha;
        std::mem::swap(&mut x, &mut trial);
        trial[0].clone_from(&x[0]);
        trial[m].clone_from(&x[m]);
        action_gradient(field, &x, dt, &mut grad);
        gnorm = sup_norm_interior(&grad);
    }

    let (momentum, energy) = interval_energies(field, &x, dt);
    let mean = energy.iter().sum::<f64>() / energy.len() as f64;
    let dev = energy.iter().fold(0.0f64, |d, e| d.max((e - mean).abs()));
    let mut path = PathSample::from_states(x, dt);
    path.momentum = Some(momentum);
    path.energy = Some(energy);
    Ok(MppResult {
        path,
        action: value,
        energy: mean,
        max_energy_deviation: dev,
        method: MppMethod::Minimization,
        converged: gnorm <= opts.grad_tol,
        grad_norm: gnorm,
        iterations,
    })
}

/// Per-node momentum and energy from `p = (q' - b)/2`; node values average
/// the estimates of the adjacent intervals, each evaluated at the interval
/// midpoint.
fn interval_energies(field: &DriftField, x: &[Vec<f64>], dt: f64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let n = field.dim();
    let mut ps = Vec::with_capacity(x.len() - 1);
    let mut hs = Vec::with_capacity(x.len() - 1);
    for w in x.windows(2) {
        let b0 = field.eval(&w[0]);
        let b1 = field.eval(&w[1]);
        let mut p = vec![0.0; n];
        let mut h = 0.0;
        for i in 0..n {
            let bm = 0.5 * (b0[i] + b1[i]);
            p[i] = 0.5 * ((w[1][i] - w[0][i]) / dt - bm);
            h += p[i] * p[i] + bm * p[i];
        }
        ps.push(p);
        hs.push(h);
    }
    let mut node_p = Vec::with_capacity(x.len());
    let mut node_h = Vec::with_capacity(x.len());
    for k in 0..x.len() {
        let (p, h) = if k == 0 {
            (ps[0].clone(), hs[0])
        } else if k == x.len() - 1 {
            (ps[k - 1].clone(), hs[k - 1])
        } else {
            let p = ps[k - 1].iter().zip(&ps[k]).map(|(a, b)| 0.5 * (a + b)).collect();
            (p, 0.5 * (hs[k - 1] + hs[k]))
        };
        node_p.push(p);
        node_h.push(h);
    }
    (node_p, node_h)
}

/// Quasipotential gap `u(c) - u(a) = integral_a^c -b(x) dx` from a stable zero `a`.
pub fn uphill_action_1d(field: &DriftField, a: f64, c: f64) -> Result<f64> {
    if field.dim() != 1 {
        return Err(Error::precondition("uphill action needs a one-dimensional field"));
    }
    if field.eval1(a).abs() > 1e-8 || field.deriv1(a) >= 0.0 {
        return Err(Error::precondition(format!("{a} is not a stable zero of b")));
    }
    if a == c {
        return Ok(0.0);
    }
    let (lo, hi) = (a.min(c), a.max(c));
    let inner = scan_roots(&|x: f64| field.eval1(x), lo, hi, 1024, 1e-12);
    let span = hi - lo;
    if inner
        .iter()
        .any(|&r| r > lo + 1e-9 * span && r < hi - 1e-9 * span)
    {
        return Err(Error::precondition("b vanishes strictly between a and c"));
    }
    Ok(adaptive_simpson(&|x: f64| -field.eval1(x), a.min(c), a.max(c), 1e-10)
        * (c - a).signum())
}
