//! Minimum/curvature dynamics of the rate function on the circle, limit cycle
//! periods, and fixed points of the torus Hamiltonian
//! `H(theta, omega) = omega^2 + (b0 - U'(theta)) omega`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fields::{Domain, DriftField, Fourier};
use crate::numerics::{adaptive_simpson, rk4_step, scan_roots, step_count};

/// Cells used when scanning `[0, 1)` for sign changes.
pub const SCAN_CELLS: usize = 4096;
/// Bisection tolerance for fixed points.
pub const ROOT_TOL: f64 = 1e-10;
/// Slack allowed in the monotonicity of `v = y e^{2 phi}`.
pub const DECAY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CircleFlowState {
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CircleTrace {
    pub states: Vec<CircleFlowState>,
    /// `ln |b(x(t))| - ln |b(x(0))|`, present when `b` keeps one sign along the trace.
    pub phi: Option<Vec<f64>>,
}

fn require_circle(field: &DriftField) -> Result<&Fourier> {
    match (field.domain(), field.fourier()) {
        (Domain::Circle, Some(f)) => Ok(f),
        _ => Err(Error::precondition("needs a circle field")),
    }
}

/// Integrate `x' = b(x)`, `y' = -2 (b'(x) + y) y` with RK4, `x` mod 1.
pub fn circle_flow(field: &DriftField, x0: f64, y0: f64, dt: f64, t_end: f64) -> Result<CircleTrace> {
    let series = require_circle(field)?;
    if !(y0 >= 0.0) || !x0.is_finite() {
        return Err(Error::precondition("need finite x0 and y0 >= 0"));
    }
    if !(dt > 0.0 && t_end > 0.0) {
        return Err(Error::precondition("need dt > 0 and T > 0"));
    }
    let n = step_count(t_end, dt);
    let h = t_end / n as f64;
    let rhs = |s: &[f64], out: &mut [f64]| {
        out[0] = series.value(s[0]);
        out[1] = -2.0 * (series.derivative(s[0], 1) + s[1]) * s[1];
    };
    let mut state = [x0.rem_euclid(1.0), y0];
    let mut next = [0.0; 2];
    let mut states = Vec::with_capacity(n + 1);
    states.push(CircleFlowState {
        t: 0.0,
        x: state[0],
        y: state[1],
    });
    for k in 1..=n {
        rk4_step(&rhs, &state, h, &mut next);
        if !next[1].is_finite() || !next[0].is_finite() {
            return Err(Error::BlowUp { step: k });
        }
        state = [next[0].rem_euclid(1.0), next[1]];
        states.push(CircleFlowState {
            t: if k == n { t_end } else { h * k as f64 },
            x: state[0],
            y: state[1],
        });
    }
    let b_start = series.value(states[0].x);
    let one_sign = states
        .iter()
        .all(|s| series.value(s.x) * b_start > 0.0);
    let phi = one_sign.then(|| {
        let l0 = b_start.abs().ln();
        states
            .iter()
            .map(|s| series.value(s.x).abs().ln() - l0)
            .collect()
    });
    Ok(CircleTrace { states, phi })
}

/// Period `integral_0^1 dtheta / |b|` when `b` has no zero on the circle.
pub fn limit_cycle_period(field: &DriftField) -> Result<Option<f64>> {
    let series = require_circle(field)?;
    let min_abs = (0..SCAN_CELLS)
        .map(|k| series.value(k as f64 / SCAN_CELLS as f64).abs())
        .fold(f64::INFINITY, f64::min);
    if !(min_abs > 0.0) {
        return Ok(None);
    }
    let f = |t: f64| 1.0 / series.value(t).abs();
    // split so sharp peaks near small |b| are resolved
    let pieces = 16;
    let period = (0..pieces)
        .map(|i| {
            let a = i as f64 / pieces as f64;
            adaptive_simpson(&f, a, a + 1.0 / pieces as f64, 1e-14)
        })
        .sum();
    Ok(Some(period))
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayReport {
    pub v: Vec<f64>,
    /// Largest step-to-step increase of `v` (0 if none).
    pub max_increase: f64,
    pub non_increasing: bool,
    pub final_y: f64,
}

/// Check that `v(t) = y(t) e^{2 phi(t)}` never increases along the trace.
pub fn curvature_decay_check(trace: &CircleTrace) -> Result<DecayReport> {
    let phi = trace
        .phi
        .as_ref()
        .ok_or_else(|| Error::precondition("b changes sign along the trace"))?;
    let v: Vec<f64> = trace
        .states
        .iter()
        .zip(phi)
        .map(|(s, p)| s.y * (2.0 * p).exp())
        .collect();
    let max_increase = v
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(0.0, f64::max);
    Ok(DecayReport {
        non_increasing: max_increase <= DECAY_TOL,
        max_increase,
        final_y: trace.states.last().map_or(0.0, |s| s.y),
        v,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FixedPointType {
    /// `omega = 0`, `U'(theta) = b0`.
    Type1,
    /// `U''(theta) = 0`, `omega = (U'(theta) - b0) / 2`.
    Type2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TorusFixedPoint {
    pub theta: f64,
    pub omega: f64,
    pub kind: FixedPointType,
}

fn roots_on_circle<F: Fn(f64) -> f64>(f: &F) -> Vec<f64> {
    let mut roots: Vec<f64> = scan_roots(f, 0.0, 1.0, SCAN_CELLS, ROOT_TOL)
        .into_iter()
        .map(|r| r.rem_euclid(1.0))
        .collect();
    roots.sort_by(|a, b| a.total_cmp(b));
    // theta = 0 and theta = 1 are the same point
    roots.dedup_by(|a, b| (*a - *b).abs() < 10.0 * ROOT_TOL);
    if roots.len() > 1 && roots[0] + 1.0 - roots[roots.len() - 1] < 10.0 * ROOT_TOL {
        roots.pop();
    }
    roots
}

/// Fixed points of the torus Hamiltonian for drift `b0 - U'(theta)`, sorted by type then angle.
pub fn torus_fixed_points(b0: f64, potential: &Fourier) -> Result<Vec<TorusFixedPoint>> {
    if !b0.is_finite() {
        return Err(Error::config("torus.b0", "must be finite"));
    }
    let du = |t: f64| potential.derivative(t, 1);
    let mut out: Vec<TorusFixedPoint> = roots_on_circle(&|t| du(t) - b0)
        .into_iter()
        .map(|theta| TorusFixedPoint {
            theta,
            omega: 0.0,
            kind: FixedPointType::Type1,
        })
        .collect();
    out.extend(
        roots_on_circle(&|t| potential.derivative(t, 2))
            .into_iter()
            .map(|theta| TorusFixedPoint {
                theta,
                omega: 0.5 * (du(theta) - b0),
                kind: FixedPointType::Type2,
            }),
    );
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{build_field, FieldSpec};
    use std::f64::consts::PI;

    fn circle(b0: f64, a: Vec<f64>, c: Vec<f64>) -> DriftField {
        build_field(&FieldSpec::Circle { b0, a, c }).unwrap()
    }

    #[test]
    fn zero_curvature_is_invariant() {
        let f = circle(0.3, vec![], vec![1.0]);
        let tr = circle_flow(&f, 0.1, 0.0, 1e-3, 5.0).unwrap();
        assert!(tr.states.iter().all(|s| s.y.abs() <= 1e-12));
        let plain = crate::simulate::ode_solve(&f, &[0.1], 1e-3, 5.0).unwrap();
        assert!((plain.last()[0] - tr.states.last().unwrap().x).abs() < 1e-12);
    }

    #[test]
    fn gradient_case_converges() {
        let f = circle(0.0, vec![], vec![-1.0]);
        let tr = circle_flow(&f, 0.1, 0.5, 1e-3, 10.0).unwrap();
        let end = tr.states.last().unwrap();
        assert!(end.x.min(1.0 - end.x) < 1e-6);
        assert!((end.y - 2.0 * PI).abs() < 1e-4);
        assert!(tr.phi.is_some());
    }

    #[test]
    fn curvature_decays_on_cycle() {
        let f = circle(2.0, vec![], vec![3f64.sqrt()]);
        let tr = circle_flow(&f, 0.25, 1.0, 1e-3, 20.0).unwrap();
        let rep = curvature_decay_check(&tr).unwrap();
        assert!(rep.non_increasing, "{}", rep.max_increase);
        assert!(rep.final_y < 1e-3, "{}", rep.final_y);
        let tr0 = circle_flow(&f, 0.25, 0.0, 1e-3, 2.0).unwrap();
        assert!(curvature_decay_check(&tr0).unwrap().v.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn decay_check_needs_one_signed_drift() {
        let f = circle(0.0, vec![], vec![-1.0]);
        let tr = circle_flow(&f, 0.3, 1.0, 1e-2, 3.0).unwrap();
        // b(0.3) < 0 and the trace stays on the negative side
        assert!(curvature_decay_check(&tr).is_ok());
        let g = circle(0.0, vec![], vec![1.0]);
        let tr = circle_flow(&g, 0.0, 1.0, 1e-2, 3.0).unwrap();
        assert!(curvature_decay_check(&tr).is_err());
    }

    #[test]
    fn periods() {
        assert!((limit_cycle_period(&circle(1.0, vec![], vec![])).unwrap().unwrap() - 1.0).abs() < 1e-14);
        let p = limit_cycle_period(&circle(2.0, vec![], vec![3f64.sqrt()])).unwrap().unwrap();
        assert!((p - 1.0).abs() < 1e-8, "{p}");
        assert!(limit_cycle_period(&circle(0.0, vec![], vec![1.0])).unwrap().is_none());
        let p = limit_cycle_period(&circle(-1.0, vec![0.5], vec![])).unwrap().unwrap();
        assert!((p - 1.0 / 0.75f64.sqrt()).abs() < 1e-8);
    }

    #[test]
    fn torus_examples() {
        let a = 0.8;
        // U' = -a sin(2 pi theta)  <=>  U = a / (2 pi) cos(2 pi theta)
        let u = Fourier::new(0.0, vec![a / (2.0 * PI)], vec![]);
        let pts = torus_fixed_points(0.0, &u).unwrap();
        let t1: Vec<_> = pts.iter().filter(|p| p.kind == FixedPointType::Type1).collect();
        let t2: Vec<_> = pts.iter().filter(|p| p.kind == FixedPointType::Type2).collect();
        assert_eq!(t1.len(), 2);
        assert!(t1[0].theta.abs() < 1e-10 && (t1[1].theta - 0.5).abs() < 1e-10);
        assert!(t1.iter().all(|p| p.omega == 0.0));
        assert_eq!(t2.len(), 2);
        assert!((t2[0].theta - 0.25).abs() < 1e-10 && (t2[0].omega + a / 2.0).abs() < 1e-9);
        assert!((t2[1].theta - 0.75).abs() < 1e-10 && (t2[1].omega - a / 2.0).abs() < 1e-9);

        let none = torus_fixed_points(1.0, &u).unwrap();
        assert!(none.iter().all(|p| p.kind == FixedPointType::Type2));
    }

    #[test]
    fn saddle_node_removes_two_points() {
        let a = 0.8;
        let u = Fourier::new(0.0, vec![a / (2.0 * PI)], vec![]);
        let count = |b0: f64| {
            torus_fixed_points(b0, &u)
                .unwrap()
                .iter()
                .filter(|p| p.kind == FixedPointType::Type1)
                .count()
        };
        assert_eq!(count(0.5), 2);
        assert_eq!(count(0.81), 0);
    }

    #[test]
    fn rejects_non_circle_fields() {
        let f = build_field(&FieldSpec::Ou { b_coef: 1.0 }).unwrap();
        assert!(circle_flow(&f, 0.0, 1.0, 0.1, 1.0).is_err());
        assert!(limit_cycle_period(&f).is_err());
    }
}
