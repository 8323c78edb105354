//! Path sampling for `dX = b(X) dt + sqrt(2 eps) dW`, terminal-event
//! probabilities and the discrete path-weight exponent.
//!
//! Noise is drawn from a ChaCha stream keyed by `(seed, run)`; step `k` of a
//! run always consumes the `k`-th normal variate of that stream, so results do
//! not depend on how runs are scheduled across threads.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::DriftField;
use crate::numerics::{rk4_step, step_count};

/// Largest supported number of time steps per path.
pub const MAX_STEPS: f64 = 1e8;

/// Time-stamped trajectory on a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathSample {
    pub dt: f64,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub momentum: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub energy: Option<Vec<f64>>,
}

impl PathSample {
    /// Path from uniformly spaced states starting at `t = 0`.
    pub fn from_states(states: Vec<Vec<f64>>, dt: f64) -> Self {
        let times = (0..states.len()).map(|k| k as f64 * dt).collect();
        PathSample {
            dt,
            times,
            states,
            momentum: None,
            energy: None,
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, |s| s.len())
    }

    pub fn last(&self) -> &[f64] {
        self.states.last().expect("non-empty path")
    }
}

/// Random stream for one Monte Carlo run.
pub fn run_rng(seed: u64, run: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run);
    rng
}

fn check_start(field: &DriftField, x0: &[f64], dt: f64, t_end: f64) -> Result<usize> {
    if x0.len() != field.dim() {
        return Err(Error::precondition(format!(
            "x0 has dimension {}, field has {}",
            x0.len(),
            field.dim()
        )));
    }
    if !x0.iter().all(|v| v.is_finite()) {
        return Err(Error::precondition("x0 has non-finite entries"));
    }
    if !(dt > 0.0 && dt.is_finite()) || !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::precondition("dt and T must be positive and finite"));
    }
    if t_end / dt > MAX_STEPS {
        return Err(Error::precondition("T/dt exceeds 1e8 steps"));
    }
    Ok(step_count(t_end, dt))
}

/// Euler-Maruyama path `X_{k+1} = X_k + b(X_k) dt + sqrt(2 eps dt) xi_k`.
///
/// `eps = 0` gives the deterministic Euler scheme. States are wrapped mod 1
/// on the circle.
pub fn euler_maruyama(
    field: &DriftField,
    x0: &[f64],
    eps: f64,
    dt: f64,
    t_end: f64,
    seed: u64,
) -> Result<PathSample> {
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::precondition("eps must be >= 0"));
    }
    let n = check_start(field, x0, dt, t_end)?;
    let h = t_end / n as f64;
    let mut rng = run_rng(seed, 0);
    let mut states = Vec::with_capacity(n + 1);
    let mut x = x0.to_vec();
    field.wrap(&mut x);
    states.push(x.clone());
    let mut b = vec![0.0; x.len()];
    let amp = (2.0 * eps * h).sqrt();
    for k in 0..n {
        em_step(field, &mut x, &mut b, h, amp, &mut rng);
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::BlowUp { step: k + 1 });
        }
        states.push(x.clone());
    }
    Ok(PathSample::from_states(states, h))
}

#[inline]
pub(crate) fn em_step<R: Rng>(field: &DriftField, x: &mut [f64], b: &mut [f64], h: f64, amp: f64, rng: &mut R) {
    field.eval_into(x, b);
    for i in 0..x.len() {
        let z: f64 = rng.sample(StandardNormal);
        x[i] += b[i] * h + amp * z;
    }
    field.wrap(x);
}

/// Terminal state of one Euler-Maruyama run keyed by `(seed, run)`.
pub fn terminal_state(
    field: &DriftField,
    x0: &[f64],
    eps: f64,
    h: f64,
    steps: usize,
    seed: u64,
    run: u64,
) -> Result<Vec<f64>> {
    let mut rng = run_rng(seed, run);
    let mut x = x0.to_vec();
    field.wrap(&mut x);
    let mut b = vec![0.0; x.len()];
    let amp = (2.0 * eps * h).sqrt();
    for k in 0..steps {
        em_step(field, &mut x, &mut b, h, amp, &mut rng);
        if !x[0].is_finite() {
            return Err(Error::BlowUp { step: k + 1 });
        }
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::BlowUp { step: steps });
    }
    Ok(x)
}

/// Classical RK4 solution of `x' = b(x)`.
pub fn ode_solve(field: &DriftField, x0: &[f64], dt: f64, t_end: f64) -> Result<PathSample> {
    let n = check_start(field, x0, dt, t_end)?;
    let h = t_end / n as f64;
    let rhs = |y: &[f64], dy: &mut [f64]| field.eval_into(y, dy);
    let mut states = Vec::with_capacity(n + 1);
    let mut x = x0.to_vec();
    field.wrap(&mut x);
    states.push(x.clone());
    let mut next = vec![0.0; x.len()];
    for k in 0..n {
        rk4_step(&rhs, &x, h, &mut next);
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::BlowUp { step: k + 1 });
        }
        field.wrap(&mut next);
        x.copy_from_slice(&next);
        states.push(x.clone());
    }
    Ok(PathSample::from_states(states, h))
}

/// Terminal-time event region. Missing bounds (`null`) are unbounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventRegion {
    Box {
        lower: Vec<Option<f64>>,
        upper: Vec<Option<f64>>,
    },
    Ball {
        center: Vec<f64>,
        radius: f64,
    },
}

impl EventRegion {
    /// The whole state space.
    pub fn everywhere(dim: usize) -> Self {
        EventRegion::Box {
            lower: vec![None; dim],
            upper: vec![None; dim],
        }
    }

    /// `{x : x_axis > threshold}`.
    pub fn above(dim: usize, axis: usize, threshold: f64) -> Self {
        let mut lower = vec![None; dim];
        lower[axis] = Some(threshold);
        EventRegion::Box {
            lower,
            upper: vec![None; dim],
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            EventRegion::Box { lower, upper } => x.iter().enumerate().all(|(i, &v)| {
                lower.get(i).copied().flatten().is_none_or(|lo| v > lo)
                    && upper.get(i).copied().flatten().is_none_or(|hi| v < hi)
            }),
            EventRegion::Ball { center, radius } => {
                let d2: f64 = x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum();
                d2 < radius * radius
            }
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        let ok = match self {
            EventRegion::Box { lower, upper } => lower.len() == dim && upper.len() == dim,
            EventRegion::Ball { center, radius } => center.len() == dim && *radius > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config("event", "region does not match field dimension"))
        }
    }

    pub fn describe(&self) -> String {
        match self {
            EventRegion::Box { lower, upper } => {
                let fmt = |b: &Option<f64>, inf: &str| b.map_or(inf.to_string(), |v| v.to_string());
                let axes: Vec<String> = lower
                    .iter()
                    .zip(upper)
                    .map(|(l, u)| format!("({}, {})", fmt(l, "-inf"), fmt(u, "inf")))
                    .collect();
                format!("X_T in {}", axes.join(" x "))
            }
            EventRegion::Ball { center, radius } => {
                format!("|X_T - {center:?}| < {radius}")
            }
        }
    }
}

/// One row of a rare-event estimate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateRow {
    pub eps: f64,
    pub n: u64,
    pub hits: u64,
    pub p_hat: f64,
    pub std_err: f64,
    /// `-eps ln p_hat`; `None` when no run hit the event.
    pub rate: Option<f64>,
    pub underflow: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateReport {
    pub event: String,
    pub rows: Vec<RateRow>,
    pub reference_action: Option<f64>,
}

/// Shared parameters of a terminal-event Monte Carlo estimate.
#[derive(Debug, Clone)]
pub struct EventRun<'a> {
    pub field: &'a DriftField,
    pub x0: &'a [f64],
    pub t_end: f64,
    pub dt: f64,
    pub event: &'a EventRegion,
    pub runs: u64,
    pub seed: u64,
}

/// Fraction of `runs` Euler-Maruyama paths whose terminal state lies in the event.
pub fn rare_event_probability(job: &EventRun<'_>, eps: f64) -> Result<RateRow> {
    if job.runs == 0 {
        return Err(Error::precondition("N must be >= 1"));
    }
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::precondition("eps must be >= 0"));
    }
    job.event.validate(job.field.dim())?;
    let steps = check_start(job.field, job.x0, job.dt, job.t_end)?;
    let h = job.t_end / steps as f64;
    let hits = (0..job.runs)
        .into_par_iter()
        .map(|run| {
            terminal_state(job.field, job.x0, eps, h, steps, job.seed, run)
                .map(|x| u64::from(job.event.contains(&x)))
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    let n = job.runs as f64;
    let p_hat = hits as f64 / n;
    let std_err = (p_hat * (1.0 - p_hat) / n).sqrt();
    let underflow = hits == 0;
    let rate = if underflow {
        None
    } else {
        // -eps ln 1 is -0.0
        Some(-eps * p_hat.ln() + 0.0)
    };
    Ok(RateRow {
        eps,
        n: job.runs,
        hits,
        p_hat,
        std_err,
        rate,
        underflow,
    })
}

/// Rate estimates over a strictly decreasing noise sweep.
pub fn rate_sweep(
    job: &EventRun<'_>,
    eps_list: &[f64],
    reference_action: Option<f64>,
) -> Result<RateReport> {
    if eps_list.is_empty() {
        return Err(Error::config("sim.eps_list", "empty sweep"));
    }
    if eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::config("sim.eps_list", "must be strictly decreasing"));
    }
    let rows = eps_list
        .iter()
        .map(|&eps| rare_event_probability(job, eps))
        .collect::<Result<Vec<_>>>()?;
    Ok(RateReport {
        event: job.event.describe(),
        rows,
        reference_action,
    })
}

/// The two parts of the discrete path-weight exponent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PathWeight {
    /// `sum_k |dx_k/dt - b(x_k)|^2 dt / 4`.
    pub action: f64,
    /// `(eps/2) sum_k div b(x_k) dt`.
    pub correction: f64,
}

impl PathWeight {
    pub fn total(&self) -> f64 {
        self.action + self.correction
    }
}

pub fn path_weight_terms(field: &DriftField, path: &PathSample, eps: f64) -> Result<PathWeight> {
    if path.len() < 2 {
        return Err(Error::precondition("path needs at least 2 points"));
    }
    let dt = path.dt;
    let mut b = vec![0.0; field.dim()];
    let mut action = 0.0;
    let mut div = 0.0;
    for w in path.states.windows(2) {
        field.eval_into(&w[0], &mut b);
        let mut sq = 0.0;
        for i in 0..b.len() {
            let v = (w[1][i] - w[0][i]) / dt - b[i];
            sq += v * v;
        }
        action += 0.25 * sq * dt;
        div += field.divergence(&w[0]) * dt;
    }
    Ok(PathWeight {
        action,
        correction: 0.5 * eps * div,
    })
}

/// Exponent `S_eps` of the small-noise path density `A exp(-S_eps / eps)`.
pub fn path_weight_exponent(field: &DriftField, path: &PathSample, eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::precondition("eps must be > 0"));
    }
    path_weight_terms(field, path, eps).map(|w| w.total())
}
