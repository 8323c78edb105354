//! The fictitious mechanics attached to a drift field: the Hamiltonian
//! `H(q, p) = |p|^2 + b(q).p`, its Lagrangian `|q' - b(q)|^2 / 4`, the action
//! functional, characteristic integration, phase contours and the equilibria
//! of the one-dimensional `(q, p)` system.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fields::DriftField;
use crate::numerics::{rk4_step, scan_roots, step_count};
use crate::simulate::PathSample;

/// A point `(q, p)` of phase space.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhasePoint {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

impl PhasePoint {
    pub fn new(q: Vec<f64>, p: Vec<f64>) -> Self {
        PhasePoint { q, p }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct HamiltonianTrajectory {
    pub times: Vec<f64>,
    pub q: Vec<Vec<f64>>,
    pub p: Vec<Vec<f64>>,
    pub h: Vec<f64>,
    /// Accumulated `integral (p.q' - H) dt`, starting at 0.
    pub u: Vec<f64>,
    pub max_energy_drift: f64,
    /// Set when the drift exceeds `1e-6 max(1, |H(0)|)`.
    pub energy_warning: bool,
}

impl HamiltonianTrajectory {
    pub fn dt(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    /// Velocities from the first Hamilton equation, `q' = 2p + b(q)`.
    pub fn velocities(&self, field: &DriftField) -> Vec<Vec<f64>> {
        self.q
            .iter()
            .zip(&self.p)
            .map(|(q, p)| {
                let b = field.eval(q);
                p.iter().zip(&b).map(|(pi, bi)| 2.0 * pi + bi).collect()
            })
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_dims(field: &DriftField, a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != field.dim() || b.len() != field.dim() {
        return Err(Error::precondition("dimension mismatch"));
    }
    if !a.iter().chain(b).all(|v| v.is_finite()) {
        return Err(Error::precondition("non-finite input"));
    }
    Ok(())
}

pub fn hamiltonian(field: &DriftField, q: &[f64], p: &[f64]) -> Result<f64> {
    check_dims(field, q, p)?;
    Ok(hamiltonian_unchecked(field, q, p))
}

fn hamiltonian_unchecked(field: &DriftField, q: &[f64], p: &[f64]) -> f64 {
    let b = field.eval(q);
    dot(p, p) + dot(&b, p)
}

pub fn lagrangian(field: &DriftField, q: &[f64], qdot: &[f64]) -> Result<f64> {
    check_dims(field, q, qdot)?;
    let b = field.eval(q);
    Ok(0.25 * qdot.iter().zip(&b).map(|(v, bi)| (v - bi) * (v - bi)).sum::<f64>())
}

/// Discrete action of a sampled path.
///
/// Each interval uses the forward-difference velocity `v_k = dx_k / dt`
/// against the trapezoidal drift average, `dt/4 |v_k - (b(x_k) + b(x_{k+1}))/2|^2`,
/// which vanishes to O(dt^4) per interval on exact flow lines.
pub fn action(field: &DriftField, path: &PathSample) -> Result<f64> {
    if path.len() < 2 {
        return Err(Error::precondition("path needs at least 2 points"));
    }
    Ok(discrete_action(field, &path.states, path.dt))
}

pub(crate) fn discrete_action(field: &DriftField, states: &[Vec<f64>], dt: f64) -> f64 {
    let n = field.dim();
    let mut b0 = vec![0.0; n];
    let mut b1 = vec![0.0; n];
    field.eval_into(&states[0], &mut b0);
    let mut total = 0.0;
    for w in states.windows(2) {
        field.eval_into(&w[1], &mut b1);
        let mut s = 0.0;
        for i in 0..n {
            let v = (w[1][i] - w[0][i]) / dt;
            s += (v - 0.5 * (b0[i] + b1[i])).powi(2);
        }
        total += 0.25 * s * dt;
        std::mem::swap(&mut b0, &mut b1);
    }
    total
}

/// RK4 integration of `q' = 2p + b(q)`, `p' = -J_b(q)^T p`, carrying
/// `u' = p.q' - H` along.
pub fn integrate_hamiltonian(
    field: &DriftField,
    start: &PhasePoint,
    dt: f64,
    t_end: f64,
) -> Result<HamiltonianTrajectory> {
    check_dims(field, &start.q, &start.p)?;
    if !(dt > 0.0) || !(t_end > 0.0) {
        return Err(Error::precondition("dt and T must be positive"));
    }
    let n = field.dim();
    let steps = step_count(t_end, dt);
    let h = t_end / steps as f64;
    let rhs = |y: &[f64], dy: &mut [f64]| {
        let (q, rest) = y.split_at(n);
        let p = &rest[..n];
        let b = field.eval(q);
        let jac = field.jacobian(q);
        let mut energy = 0.0;
        let mut pv = 0.0;
        for i in 0..n {
            let v = 2.0 * p[i] + b[i];
            dy[i] = v;
            dy[n + i] = -(0..n).map(|j| jac[j][i] * p[j]).sum::<f64>();
            energy += p[i] * p[i] + b[i] * p[i];
            pv += p[i] * v;
        }
        dy[2 * n] = pv - energy;
    };
    let mut y: Vec<f64> = start.q.iter().chain(&start.p).copied().collect();
    y.push(0.0);
    let mut next = vec![0.0; y.len()];
    let h0 = hamiltonian_unchecked(field, &start.q, &start.p);
    let mut traj = HamiltonianTrajectory {
        times: Vec::with_capacity(steps + 1),
        q: Vec::with_capacity(steps + 1),
        p: Vec::with_capacity(steps + 1),
        h: Vec::with_capacity(steps + 1),
        u: Vec::with_capacity(steps + 1),
        max_energy_drift: 0.0,
        energy_warning: false,
    };
    let record = |k: usize, y: &[f64], traj: &mut HamiltonianTrajectory| {
        let q = y[..n].to_vec();
        let p = y[n..2 * n].to_vec();
        let e = hamiltonian_unchecked(field, &q, &p);
        traj.max_energy_drift = traj.max_energy_drift.max((e - h0).abs());
        traj.times.push(k as f64 * h);
        traj.q.push(q);
        traj.p.push(p);
        traj.h.push(e);
        traj.u.push(y[2 * n]);
    };
    record(0, &y, &mut traj);
    for k in 1..=steps {
        rk4_step(&rhs, &y, h, &mut next);
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::BlowUp { step: k });
        }
        field.wrap(&mut next[..n]);
        y.copy_from_slice(&next);
        record(k, &y, &mut traj);
    }
    traj.energy_warning = traj.max_energy_drift > 1e-6 * h0.abs().max(1.0);
    Ok(traj)
}

/// Characteristic curves of `y + z^2 + z b(x) = 0` with `y = u_t`, `z = u_x`.
#[derive(Debug, Clone, Serialize)]
pub struct Characteristic {
    pub s: Vec<f64>,
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub u: Vec<f64>,
    /// Constant along the curve, `-(z0^2 + z0 b(x0))`.
    pub y: f64,
    pub t: Vec<f64>,
}

pub fn solve_characteristics(
    field: &DriftField,
    x0: f64,
    z0: f64,
    u0: f64,
    dt: f64,
    t_end: f64,
) -> Result<Characteristic> {
    if field.dim() != 1 {
        return Err(Error::precondition("characteristics need a one-dimensional field"));
    }
    if !(dt > 0.0) || !(t_end > 0.0) {
        return Err(Error::precondition("dt and T must be positive"));
    }
    let y = -(z0 * z0 + z0 * field.eval1(x0));
    let steps = step_count(t_end, dt);
    let h = t_end / steps as f64;
    // state: x, z, u, t
    let rhs = |s: &[f64], ds: &mut [f64]| {
        let (x, z) = (s[0], s[1]);
        let b = field.eval1(x);
        ds[0] = 2.0 * z + b;
        ds[1] = -z * field.deriv1(x);
        ds[2] = y + (2.0 * z + b) * z;
        ds[3] = 1.0;
    };
    let mut state = vec![x0, z0, u0, 0.0];
    let mut next = vec![0.0; 4];
    let mut out = Characteristic {
        s: vec![0.0],
        x: vec![x0],
        z: vec![z0],
        u: vec![u0],
        y,
        t: vec![0.0],
    };
    for k in 1..=steps {
        rk4_step(&rhs, &state, h, &mut next);
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::BlowUp { step: k });
        }
        field.wrap(&mut next[..1]);
        state.copy_from_slice(&next);
        out.s.push(k as f64 * h);
        out.x.push(state[0]);
        out.z.push(state[1]);
        out.u.push(state[2]);
        out.t.push(state[3]);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EquilibriumType {
    Center,
    Saddle,
    Degenerate,
}

/// Which nullcline intersection produced the equilibrium.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EquilibriumFamily {
    /// `p = 0`, `b(q) = 0`.
    ZeroMomentum,
    /// `b'(q) = 0`, `p = -b(q)/2`.
    CriticalDrift,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Equilibrium {
    pub q: f64,
    pub p: f64,
    pub family: EquilibriumFamily,
    pub kind: EquilibriumType,
    /// Square of the eigenvalues `+-lambda` of the linearization.
    pub eigenvalue_sq: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EquilibriumScan {
    pub equilibria: Vec<Equilibrium>,
    /// Subintervals where refinement did not reach tolerance.
    pub unresolved: Vec<(f64, f64)>,
}

/// Number of scan cells used by [`classify_equilibria`].
pub const EQUILIBRIUM_SCAN_CELLS: usize = 1024;

/// Equilibria of the one-dimensional Hamiltonian system on `[lo, hi]`.
///
/// The linearization `[[b', 2], [-p b'', -b']]` has eigenvalues with
/// `lambda^2 = b'^2 - 2 p b''`: positive gives a saddle, negative a center.
pub fn classify_equilibria(field: &DriftField, lo: f64, hi: f64) -> Result<EquilibriumScan> {
    if field.dim() != 1 {
        return Err(Error::precondition("equilibria scan needs a one-dimensional field"));
    }
    if !(hi > lo) {
        return Err(Error::precondition("empty q range"));
    }
    let tol = 1e-12 * (1.0 + lo.abs().max(hi.abs()));
    let b = |q: f64| field.eval1(q);
    let db = |q: f64| field.deriv1(q);
    let mut unresolved = Vec::new();
    let mut refine = |f: &dyn Fn(f64) -> f64, roots: Vec<f64>| -> Vec<f64> {
        roots
            .into_iter()
            .filter(|&r| {
                let scale = 1.0 + db(r).abs() + field.second_deriv1(r).abs();
                let ok = f(r).abs() <= 1e-8 * scale;
                if !ok {
                    unresolved.push((r - (hi - lo) / EQUILIBRIUM_SCAN_CELLS as f64, r));
                }
                ok
            })
            .collect()
    };
    let zeros = scan_roots(&b, lo, hi, EQUILIBRIUM_SCAN_CELLS, tol);
    let zeros = refine(&b, zeros);
    let crit = scan_roots(&db, lo, hi, EQUILIBRIUM_SCAN_CELLS, tol);
    let crit = refine(&db, crit);

    let classify = |q: f64, p: f64, family| {
        let d1 = db(q);
        let d2 = field.second_deriv1(q);
        let lam2 = d1 * d1 - 2.0 * p * d2;
        let scale = 1e-9 * (1.0 + d1 * d1 + (p * d2).abs());
        let kind = if lam2 > scale {
            EquilibriumType::Saddle
        } else if lam2 < -scale {
            EquilibriumType::Center
        } else {
            EquilibriumType::Degenerate
        };
        Equilibrium {
            q,
            p,
            family,
            kind,
            eigenvalue_sq: lam2,
        }
    };
    let mut out: Vec<Equilibrium> = zeros
        .iter()
        .map(|&q| classify(q, 0.0, EquilibriumFamily::ZeroMomentum))
        .collect();
    for &q in &crit {
        let p = -0.5 * b(q);
        // b = b' = 0 coincides with a zero-momentum point already listed
        if out
            .iter()
            .any(|e| (e.q - q).abs() < 1e-9 && (e.p - p).abs() < 1e-9)
        {
            continue;
        }
        out.push(classify(q, p, EquilibriumFamily::CriticalDrift));
    }
    out.sort_by(|a, b| a.q.total_cmp(&b.q).then(a.p.total_cmp(&b.p)));
    Ok(EquilibriumScan {
        equilibria: out,
        unresolved,
    })
}

/// Both branches `p = (-b +- sqrt(b^2 + 4E)) / 2` of the level set `H = E`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContourPoint {
    pub q: f64,
    pub p_plus: Option<f64>,
    pub p_minus: Option<f64>,
}

pub fn phase_contour(field: &DriftField, energy: f64, q_grid: &[f64]) -> Result<Vec<ContourPoint>> {
    if field.dim() != 1 {
        return Err(Error::precondition("phase contour needs a one-dimensional field"));
    }
    Ok(q_grid
        .iter()
        .map(|&q| {
            let b = field.eval1(q);
            let disc = b * b + 4.0 * energy;
            if disc < 0.0 {
                ContourPoint {
                    q,
                    p_plus: None,
                    p_minus: None,
                }
            } else {
                let r = disc.sqrt();
                ContourPoint {
                    q,
                    p_plus: Some(0.5 * (-b + r)),
                    p_minus: Some(0.5 * (-b - r)),
                }
            }
        })
        .collect())
}

/// Largest `|q'' - (J - J^T) q' - J^T b|` over interior points, using central
/// differences of the stored positions for `q'` and `q''`.
pub fn newton_residual(field: &DriftField, q: &[Vec<f64>], dt: f64) -> Result<f64> {
    if q.len() < 3 {
        return Err(Error::precondition("trajectory needs at least 3 points"));
    }
    let n = field.dim();
    let mut worst: f64 = 0.0;
    for k in 1..q.len() - 1 {
        let x = &q[k];
        let b = field.eval(x);
        let jac = field.jacobian(x);
        let mut sq = 0.0;
        for i in 0..n {
            let acc = (q[k + 1][i] - 2.0 * x[i] + q[k - 1][i]) / (dt * dt);
            let mut force = 0.0;
            for j in 0..n {
                let vel = (q[k + 1][j] - q[k - 1][j]) / (2.0 * dt);
                force += (jac[i][j] - jac[j][i]) * vel + jac[j][i] * b[j];
            }
            sq += (acc - force).powi(2);
        }
        worst = worst.max(sq.sqrt());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{build_field, FieldSpec};
    use crate::simulate::ode_solve;

    fn ou() -> DriftField {
        build_field(&FieldSpec::Ou { b_coef: 1.0 }).unwrap()
    }

    fn constant(c: f64) -> DriftField {
        build_field(&FieldSpec::Poly1d { coeffs: vec![c] }).unwrap()
    }

    fn double_well() -> DriftField {
        build_field(&FieldSpec::Poly1d {
            coeffs: vec![0.0, 1.0, 0.0, -1.0],
        })
        .unwrap()
    }

    #[test]
    fn hamiltonian_examples() {
        let f = ou();
        assert_eq!(hamiltonian(&f, &[2.0], &[0.0]).unwrap(), 0.0);
        assert_eq!(hamiltonian(&f, &[2.0], &[2.0]).unwrap(), 0.0);
        assert_eq!(hamiltonian(&f, &[2.0], &[1.0]).unwrap(), -1.0);
        assert!(hamiltonian(&f, &[2.0, 1.0], &[1.0]).is_err());
    }

    #[test]
    fn lagrangian_examples() {
        let f = double_well();
        assert_eq!(lagrangian(&f, &[0.5], &[f.eval1(0.5)]).unwrap(), 0.0);
        assert_eq!(lagrangian(&constant(1.0), &[0.0], &[2.0]).unwrap(), 0.25);
        let v = 0.7;
        let l = lagrangian(&f, &[0.5], &[f.eval1(0.5) + 2.0 * v]).unwrap();
        assert!((l - v * v).abs() < 1e-15);
    }

    #[test]
    fn action_examples() {
        let f = double_well();
        let p = ode_solve(&f, &[0.2], 1e-3, 3.0).unwrap();
        assert!(action(&f, &p).unwrap() <= 1e-4);

        let line: Vec<Vec<f64>> = (0..=20).map(|k| vec![k as f64 / 20.0]).collect();
        let p = PathSample::from_states(line, 0.5 / 20.0);
        assert!((action(&constant(1.0), &p).unwrap() - 0.125).abs() < 1e-12);

        // uphill OU path x(t) = e^{t - T}: action (1 - e^{-2T}) / 2
        let t_end = 6.0;
        let n = 6000;
        let dt = t_end / n as f64;
        let states: Vec<Vec<f64>> = (0..=n)
            .map(|k| vec![((k as f64) * dt - t_end).exp()])
            .collect();
        let p = PathSample::from_states(states, dt);
        let exact = 0.5 * (1.0 - (-2.0 * t_end).exp());
        assert!((action(&ou(), &p).unwrap() - exact).abs() < 1e-6);
    }

    #[test]
    fn zero_momentum_follows_the_flow() {
        let f = double_well();
        let traj = integrate_hamiltonian(&f, &PhasePoint::new(vec![0.3], vec![0.0]), 1e-3, 2.0).unwrap();
        let ode = ode_solve(&f, &[0.3], 1e-3, 2.0).unwrap();
        for (a, b) in traj.q.iter().zip(&ode.states) {
            assert!((a[0] - b[0]).abs() < 1e-12);
        }
        assert!(traj.h.iter().all(|&e| e == 0.0));
    }

    #[test]
    fn constant_drift_straight_line() {
        let traj =
            integrate_hamiltonian(&constant(1.0), &PhasePoint::new(vec![0.0], vec![0.5]), 1e-2, 1.0).unwrap();
        assert!((traj.h[0] - 0.75).abs() < 1e-15);
        assert!((traj.q.last().unwrap()[0] - 2.0).abs() < 1e-12);
        assert!(!traj.energy_warning);
    }

    #[test]
    fn ou_energy_is_conserved() {
        let traj = integrate_hamiltonian(&ou(), &PhasePoint::new(vec![0.7], vec![-0.4]), 1e-3, 5.0).unwrap();
        assert!(traj.max_energy_drift <= 1e-8, "{}", traj.max_energy_drift);
    }

    #[test]
    fn characteristics_examples() {
        let f = double_well();
        let c = solve_characteristics(&f, 0.4, 0.0, 1.5, 1e-3, 2.0).unwrap();
        assert_eq!(c.y, 0.0);
        assert!(c.u.iter().all(|&u| u == 1.5));
        let ode = ode_solve(&f, &[0.4], 1e-3, 2.0).unwrap();
        assert!((c.x.last().unwrap() - ode.last()[0]).abs() < 1e-12);

        let c = solve_characteristics(&f, 0.2, 0.05, 0.0, 1e-3, 1.0).unwrap();
        for (x, z) in c.x.iter().zip(&c.z) {
            let h = z * z + z * f.eval1(*x);
            assert!((c.y + h).abs() < 1e-8);
        }
        assert!((c.t.last().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn characteristic_action_matches_quadrature() {
        let f = ou();
        let dt = 1e-4;
        let c = solve_characteristics(&f, 1.0, 1.0, 0.0, dt, 0.5).unwrap();
        assert_eq!(c.y, 0.0);
        let states: Vec<Vec<f64>> = c.x.iter().map(|&x| vec![x]).collect();
        let s = action(&f, &PathSample::from_states(states, dt)).unwrap();
        assert!((c.u.last().unwrap() - s).abs() < 1e-6);
    }

    #[test]
    fn equilibria_of_ou() {
        let scan = classify_equilibria(&ou(), -2.0, 2.0).unwrap();
        assert_eq!(scan.equilibria.len(), 1);
        let e = &scan.equilibria[0];
        assert!(e.q.abs() < 1e-12 && e.p == 0.0);
        assert_eq!(e.kind, EquilibriumType::Saddle);
        assert!((e.eigenvalue_sq - 1.0).abs() < 1e-12);
    }

    #[test]
    fn equilibria_of_double_well() {
        let scan = classify_equilibria(&double_well(), -2.0, 2.0).unwrap();
        let zero: Vec<_> = scan
            .equilibria
            .iter()
            .filter(|e| e.family == EquilibriumFamily::ZeroMomentum)
            .collect();
        assert_eq!(zero.len(), 3);
        for (e, q) in zero.iter().zip([-1.0, 0.0, 1.0]) {
            assert!((e.q - q).abs() < 1e-10);
            assert_eq!(e.kind, EquilibriumType::Saddle);
        }
        let crit: Vec<_> = scan
            .equilibria
            .iter()
            .filter(|e| e.family == EquilibriumFamily::CriticalDrift)
            .collect();
        assert_eq!(crit.len(), 2);
        let s3 = 3f64.sqrt();
        assert!((crit[0].q + 1.0 / s3).abs() < 1e-10);
        assert!((crit[0].p - 1.0 / (3.0 * s3)).abs() < 1e-10);
        assert!((crit[1].q - 1.0 / s3).abs() < 1e-10);
        assert!((crit[1].p + 1.0 / (3.0 * s3)).abs() < 1e-10);
        assert!(crit.iter().all(|e| e.kind == EquilibriumType::Center));
    }

    #[test]
    fn contour_examples() {
        let f = double_well();
        let grid: Vec<f64> = (0..11).map(|k| -1.5 + 0.3 * k as f64).collect();
        for pt in phase_contour(&f, 0.0, &grid).unwrap() {
            let b = f.eval1(pt.q);
            let mut got = [pt.p_plus.unwrap(), pt.p_minus.unwrap()];
            got.sort_by(f64::total_cmp);
            let mut want = [0.0, -b];
            want.sort_by(f64::total_cmp);
            assert!((got[0] - want[0]).abs() < 1e-12 && (got[1] - want[1]).abs() < 1e-12);
        }
        let pts = phase_contour(&constant(1.0), 0.75, &[0.0, 1.0]).unwrap();
        assert_eq!(pts[0].p_plus, Some(0.5));
        assert_eq!(pts[0].p_minus, Some(-1.5));
        let pts = phase_contour(&constant(1.0), -1.0, &grid).unwrap();
        assert!(pts.iter().all(|p| p.p_plus.is_none() && p.p_minus.is_none()));
    }

    #[test]
    fn newton_form_holds_on_hamiltonian_paths() {
        let f = double_well();
        let traj = integrate_hamiltonian(&f, &PhasePoint::new(vec![-0.5], vec![0.1]), 1e-3, 2.0).unwrap();
        assert!(newton_residual(&f, &traj.q, traj.dt()).unwrap() <= 1e-4);
    }
}
