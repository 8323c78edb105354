//! Nonequilibrium diagnostics for fields with a declared decomposition
//! `b = -grad U + l`, whose stationary law is `pi ~ exp(-U / eps)`.
//!
//! With that law `eps grad log pi = -grad U`, so the stationary current is
//! `b - eps grad log pi = l` and the entropy production is `E_pi |l|^2 / eps`.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{build_field, Domain, DriftField, FieldSpec};
use crate::mechanics::{hamiltonian, newton_residual, HamiltonianTrajectory};
use crate::numerics::{adaptive_simpson, rk4_step, step_count};
use crate::simulate::{em_step, ode_solve, run_rng};

/// Where stationary samples come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PiSource {
    /// Exact Gaussian draws for `ou` and `rot_ou`; for `decomposed2d` the
    /// law is known only up to normalization and is sampled as in `Simulate`.
    Analytic,
    /// Long Euler-Maruyama chains.
    Simulate,
}

/// Settings for simulated stationary samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainSettings {
    pub dt: f64,
    pub burn_in: f64,
    /// Steps between retained samples.
    pub thin: usize,
    /// Independent chains; their means give the standard error.
    pub chains: usize,
}

impl Default for ChainSettings {
    fn default() -> Self {
        ChainSettings {
            dt: 1e-2,
            burn_in: 20.0,
            thin: 10,
            chains: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpEstimate {
    pub eps: f64,
    pub method: PiSource,
    pub value: f64,
    pub std_err: f64,
    pub samples: usize,
}

fn require_decomposition(field: &DriftField) -> Result<()> {
    if field.has_decomposition() {
        Ok(())
    } else {
        Err(Error::precondition(
            "no analytic stationary law: the field declares no decomposition",
        ))
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::precondition("eps must be > 0"))
    }
}

/// `grad log pi(x)` for `pi ~ exp(-U / eps)`.
pub fn grad_log_pi(field: &DriftField, eps: f64, x: &[f64]) -> Result<Vec<f64>> {
    require_decomposition(field)?;
    check_eps(eps)?;
    let g = field.grad_potential(x).expect("declared decomposition");
    Ok(g.iter().map(|v| -v / eps).collect())
}

/// Stationary current `b - eps grad log pi`.
pub fn stationary_current(field: &DriftField, eps: f64, x: &[f64]) -> Result<Vec<f64>> {
    let glp = grad_log_pi(field, eps, x)?;
    Ok(field
        .eval(x)
        .iter()
        .zip(&glp)
        .map(|(b, g)| b - eps * g)
        .collect())
}

fn ep_integrand(field: &DriftField, eps: f64, x: &[f64]) -> f64 {
    let b = field.eval(x);
    let g = field.grad_potential(x).expect("declared decomposition");
    b.iter().zip(&g).map(|(bi, gi)| (bi + gi).powi(2)).sum::<f64>() / eps
}

/// Moments of a block of integrand values.
#[derive(Clone, Copy, Default)]
struct Moments {
    n: usize,
    sum: f64,
    sumsq: f64,
}

impl Moments {
    fn push(&mut self, v: f64) {
        self.n += 1;
        self.sum += v;
        self.sumsq += v * v;
    }

    fn mean(&self) -> f64 {
        self.sum / self.n as f64
    }
}

const CHUNK: usize = 4096;

/// Entropy production `e_p = (1/eps) E_pi |b - eps grad log pi|^2` from `n` samples.
pub fn entropy_production(
    field: &DriftField,
    eps: f64,
    source: PiSource,
    n: usize,
    seed: u64,
    chain: ChainSettings,
) -> Result<EpEstimate> {
    require_decomposition(field)?;
    check_eps(eps)?;
    if n < 2 {
        return Err(Error::precondition("need at least 2 samples"));
    }
    let gaussian_var = match field.spec() {
        FieldSpec::Ou { b_coef } => Some(eps / b_coef),
        FieldSpec::RotOu { .. } => Some(eps),
        _ => None,
    };
    let (value, std_err) = match (source, gaussian_var) {
        (PiSource::Analytic, Some(var)) => {
            let sd = var.sqrt();
            let dim = field.dim();
            let blocks: Vec<Moments> = (0..n.div_ceil(CHUNK))
                .into_par_iter()
                .map(|c| {
                    let mut rng = run_rng(seed, c as u64);
                    let mut m = Moments::default();
                    let mut x = vec![0.0; dim];
                    for _ in 0..CHUNK.min(n - c * CHUNK) {
                        for xi in x.iter_mut() {
                            *xi = sd * rng.sample::<f64, _>(StandardNormal);
                        }
                        m.push(ep_integrand(field, eps, &x));
                    }
                    m
                })
                .collect();
            let total = blocks.iter().fold(Moments::default(), |a, b| Moments {
                n: a.n + b.n,
                sum: a.sum + b.sum,
                sumsq: a.sumsq + b.sumsq,
            });
            let mean = total.mean();
            let var = (total.sumsq / total.n as f64 - mean * mean).max(0.0);
            (mean, (var / (total.n - 1) as f64).sqrt())
        }
        _ => chain_estimate(field, eps, n, seed, chain)?,
    };
    Ok(EpEstimate {
        eps,
        method: source,
        value,
        std_err,
        samples: n,
    })
}

fn chain_estimate(field: &DriftField, eps: f64, n: usize, seed: u64, s: ChainSettings) -> Result<(f64, f64)> {
    if !(s.dt > 0.0) || !(s.burn_in >= 0.0) || s.thin == 0 || s.chains < 2 {
        return Err(Error::config("chain", "need dt > 0, burn_in >= 0, thin >= 1, chains >= 2"));
    }
    let per_chain = n.div_ceil(s.chains);
    let burn = (s.burn_in / s.dt).ceil() as usize;
    let amp = (2.0 * eps * s.dt).sqrt();
    let dim = field.dim();
    let chains: Vec<Result<Moments>> = (0..s.chains)
        .into_par_iter()
        .map(|c| {
            let mut rng = run_rng(seed, c as u64);
            let mut x = vec![0.0; dim];
            let mut b = vec![0.0; dim];
            let mut m = Moments::default();
            let mut step = 0;
            let mut advance = |k: usize, x: &mut Vec<f64>| -> Result<()> {
                for _ in 0..k {
                    em_step(field, x, &mut b, s.dt, amp, &mut rng);
                    step += 1;
                }
                if x.iter().all(|v| v.is_finite()) {
                    Ok(())
                } else {
                    Err(Error::BlowUp { step })
                }
            };
            advance(burn, &mut x)?;
            let count = per_chain.min(n.saturating_sub(c * per_chain));
            for _ in 0..count {
                advance(s.thin, &mut x)?;
                m.push(ep_integrand(field, eps, &x));
            }
            Ok(m)
        })
        .collect();
    let chains: Vec<Moments> = chains
        .into_iter()
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|m| m.n > 0)
        .collect();
    let total: usize = chains.iter().map(|m| m.n).sum();
    let mean = chains.iter().map(|m| m.sum).sum::<f64>() / total as f64;
    // chain means are independent; their spread gives the standard error
    let k = chains.len() as f64;
    let spread = chains.iter().map(|m| (m.mean() - mean).powi(2)).sum::<f64>() / (k - 1.0);
    Ok((mean, (spread / k).sqrt()))
}

/// Drift of the time-reversed process, `2 eps grad log pi - b = -grad U - l`.
pub fn time_reversed_drift(field: &DriftField, eps: f64) -> Result<DriftField> {
    require_decomposition(field)?;
    check_eps(eps)?;
    let spec = field.reversed_spec().expect("declared decomposition");
    build_field(&spec)
}

/// Largest `|b + b_rev - 2 eps grad log pi|` over `points`.
pub fn reversal_residual(field: &DriftField, reversed: &DriftField, eps: f64, points: &[Vec<f64>]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for x in points {
        let glp = grad_log_pi(field, eps, x)?;
        let (b, r) = (field.eval(x), reversed.eval(x));
        let sq: f64 = (0..b.len())
            .map(|i| (b[i] + r[i] - 2.0 * eps * glp[i]).powi(2))
            .sum();
        worst = worst.max(sq.sqrt());
    }
    Ok(worst)
}

#[derive(Debug, Clone, Serialize)]
pub struct LandscapeReport {
    pub steps: usize,
    /// `max |H(q, p)|` with `p = (q' - b) / 2`.
    pub max_h_residual: f64,
    /// `max |p . l|`.
    pub max_orthogonality_residual: f64,
    /// `max |p - grad U|`.
    pub max_momentum_residual: f64,
    /// The start is a critical point of `U`; the flow does not move.
    pub degenerate: bool,
    pub final_state: Vec<f64>,
}

fn uphill_rhs(field: &DriftField, x: &[f64], out: &mut [f64]) {
    let g = field.grad_potential(x).expect("declared decomposition");
    let l = field.rotational(x).expect("declared decomposition");
    for i in 0..out.len() {
        out[i] = g[i] + l[i];
    }
}

/// Integrate the uphill flow `x' = grad U + l` and check that the momentum
/// `p = (x' - b) / 2` equals `grad U`, has zero energy and is orthogonal to `l`.
pub fn momentum_landscape_check(field: &DriftField, x0: &[f64], dt: f64, t_end: f64) -> Result<LandscapeReport> {
    require_decomposition(field)?;
    if x0.len() != field.dim() || !(dt > 0.0 && t_end > 0.0) {
        return Err(Error::precondition("need matching x0, dt > 0, T > 0"));
    }
    let steps = step_count(t_end, dt);
    let h = t_end / steps as f64;
    let rhs = |y: &[f64], dy: &mut [f64]| uphill_rhs(field, y, dy);
    let mut x = x0.to_vec();
    let mut next = vec![0.0; x.len()];
    let mut rep = LandscapeReport {
        steps,
        max_h_residual: 0.0,
        max_orthogonality_residual: 0.0,
        max_momentum_residual: 0.0,
        degenerate: field
            .grad_potential(x0)
            .expect("declared decomposition")
            .iter()
            .all(|&g| g == 0.0),
        final_state: Vec::new(),
    };
    for k in 0..=steps {
        let mut v = vec![0.0; x.len()];
        uphill_rhs(field, &x, &mut v);
        let b = field.eval(&x);
        let p: Vec<f64> = v.iter().zip(&b).map(|(vi, bi)| 0.5 * (vi - bi)).collect();
        let g = field.grad_potential(&x).expect("declared decomposition");
        let l = field.rotational(&x).expect("declared decomposition");
        rep.max_h_residual = rep.max_h_residual.max(hamiltonian(field, &x, &p)?.abs());
        rep.max_orthogonality_residual = rep
            .max_orthogonality_residual
            .max(p.iter().zip(&l).map(|(a, b)| a * b).sum::<f64>().abs());
        rep.max_momentum_residual = rep.max_momentum_residual.max(
            p.iter()
                .zip(&g)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
        );
        if k == steps {
            break;
        }
        rk4_step(&rhs, &x, h, &mut next);
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::BlowUp { step: k + 1 });
        }
        x.copy_from_slice(&next);
    }
    rep.final_state = x;
    Ok(rep)
}

#[derive(Debug, Clone, Serialize)]
pub struct LyapunovReport {
    /// Largest drop of `u^st` along the uphill flow (0 if none).
    pub uphill_max_drop: f64,
    /// Largest rise of `u^st` along the noiseless flow `x' = b` (0 if none).
    pub downhill_max_rise: f64,
    pub holds: bool,
}

/// Landscape `u^st`: the declared `U`, or `-integral_0^x b` on the line.
pub fn landscape(field: &DriftField, x: &[f64]) -> Result<f64> {
    if let Some(u) = field.potential(x) {
        return Ok(u);
    }
    if field.domain() == Domain::Line {
        return Ok(-adaptive_simpson(&|z| field.eval1(z), 0.0, x[0], 1e-13));
    }
    Err(Error::precondition("no landscape: field declares no decomposition"))
}

/// Monotonicity of `u^st` along the uphill and noiseless flows from `x0`.
pub fn lyapunov_check(field: &DriftField, x0: &[f64], dt: f64, t_end: f64) -> Result<LyapunovReport> {
    landscape(field, x0)?;
    let rise = |states: &[Vec<f64>], sign: f64| -> Result<f64> {
        let mut worst: f64 = 0.0;
        let mut prev = landscape(field, &states[0])?;
        for s in &states[1..] {
            let u = landscape(field, s)?;
            worst = worst.max(sign * (u - prev) - 1e-12 * u.abs().max(1.0));
            prev = u;
        }
        Ok(worst.max(0.0))
    };
    let down = ode_solve(field, x0, dt, t_end)?;
    let uphill_field = if field.has_decomposition() {
        None
    } else {
        let FieldSpec::Poly1d { coeffs } = field.spec() else {
            return Err(Error::precondition("uphill flow needs a decomposition or a line field"));
        };
        Some(build_field(&FieldSpec::Poly1d {
            coeffs: coeffs.iter().map(|c| -c).collect(),
        })?)
    };
    let up = match &uphill_field {
        Some(f) => ode_solve(f, x0, dt, t_end)?.states,
        None => {
            let steps = step_count(t_end, dt);
            let h = t_end / steps as f64;
            let rhs = |y: &[f64], dy: &mut [f64]| uphill_rhs(field, y, dy);
            let mut states = vec![x0.to_vec()];
            let mut next = vec![0.0; x0.len()];
            for k in 0..steps {
                rk4_step(&rhs, &states[k], h, &mut next);
                if !next.iter().all(|v| v.is_finite()) {
                    return Err(Error::BlowUp { step: k + 1 });
                }
                states.push(next.clone());
            }
            states
        }
    };
    let uphill_max_drop = rise(&up, -1.0)?;
    let downhill_max_rise = rise(&down.states, 1.0)?;
    Ok(LyapunovReport {
        holds: uphill_max_drop == 0.0 && downhill_max_rise == 0.0,
        uphill_max_drop,
        downhill_max_rise,
    })
}

/// Residual of `q'' = (grad x b) x q' + grad |b|^2 / 2` along a Hamiltonian
/// trajectory, in the form `q''_i = sum_j (d_j b_i - d_i b_j) q'_j + (J^T b)_i`.
pub fn lorentz_residual(field: &DriftField, traj: &HamiltonianTrajectory) -> Result<f64> {
    if traj.q.len() < 3 {
        return Err(Error::precondition("trajectory needs at least 3 points"));
    }
    if field.domain() != Domain::Circle {
        return newton_residual(field, &traj.q, traj.dt());
    }
    // undo the mod-1 wrapping so differences see a continuous path
    let mut q = traj.q.clone();
    let mut shift = 0.0;
    for k in 1..q.len() {
        let jump = traj.q[k][0] - traj.q[k - 1][0];
        shift -= jump.round();
        q[k][0] = traj.q[k][0] + shift;
    }
    newton_residual(field, &q, traj.dt())
}
