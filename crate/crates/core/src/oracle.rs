//! Closed-form Gaussian solutions for linear drift `b(x) = -b_coef x`.
//!
//! The WKB exponent stays quadratic, `u = a(t) + (x - mu(t))^2 / (2 sigma2(t))`,
//! with `sigma2' = 2(1 - b sigma2)`, `mu' = -b mu` and `a' = eps(1/sigma2 - b)`.

use serde::Serialize;

use crate::error::{Error, Result};

/// Parameters of the quadratic rate function. `sigma2 = INFINITY` marks the
/// flat initial condition `u(x, 0) = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OuState {
    pub b_coef: f64,
    pub mu: f64,
    pub sigma2: f64,
    pub a: f64,
    pub eps: f64,
}

impl OuState {
    pub fn new(b_coef: f64, mu: f64, sigma2: f64, eps: f64) -> Result<Self> {
        let s = OuState {
            b_coef,
            mu,
            sigma2,
            a: 0.0,
            eps,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn flat(b_coef: f64, eps: f64) -> Result<Self> {
        Self::new(b_coef, 0.0, f64::INFINITY, eps)
    }

    pub fn is_flat(&self) -> bool {
        self.sigma2.is_infinite()
    }

    fn validate(&self) -> Result<()> {
        if !(self.b_coef > 0.0 && self.b_coef.is_finite()) {
            return Err(Error::config("oracle.b_coef", "must be > 0"));
        }
        if !(self.sigma2 > 0.0) || self.sigma2.is_nan() {
            return Err(Error::config("oracle.sigma2", "must be > 0"));
        }
        if !self.mu.is_finite() || !(self.eps >= 0.0) {
            return Err(Error::config("oracle", "mu must be finite and eps >= 0"));
        }
        Ok(())
    }
}

/// Propagate the Gaussian parameters to time `t`.
///
/// For the flat state `sigma2(t) = (1/b) / (1 - e^{-2bt})`; `a` is left at
/// its initial value there since the normalizing shift is infinite.
pub fn ou_params(state0: &OuState, t: f64) -> Result<OuState> {
    if !(t >= 0.0) {
        return Err(Error::precondition("t must be >= 0"));
    }
    state0.validate()?;
    let b = state0.b_coef;
    let decay = (-b * t).exp();
    let decay2 = (-2.0 * b * t).exp();
    let mu = state0.mu * decay;
    if state0.is_flat() {
        let sigma2 = if t == 0.0 {
            f64::INFINITY
        } else {
            (1.0 / b) / -(-2.0 * b * t).exp_m1()
        };
        return Ok(OuState {
            mu,
            sigma2,
            ..*state0
        });
    }
    let sigma2 = 1.0 / b + (state0.sigma2 - 1.0 / b) * decay2;
    let a = state0.a + 0.5 * state0.eps * (sigma2 / state0.sigma2).ln();
    Ok(OuState {
        mu,
        sigma2,
        a,
        ..*state0
    })
}

/// Min-normalized rate `(x - mu(t))^2 / (2 sigma2(t))`.
pub fn ou_rate(state0: &OuState, x: f64, t: f64) -> Result<f64> {
    let s = ou_params(state0, t)?;
    Ok((x - s.mu).powi(2) / (2.0 * s.sigma2))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GaussianKernel {
    pub mean: f64,
    pub variance: f64,
}

/// Transition law of `dX = b_lin X dt + sqrt(2 eps) dW` over `dt`.
pub fn ou_transition_kernel(b_lin: f64, eps: f64, x_prev: f64, dt: f64) -> Result<GaussianKernel> {
    if !(dt > 0.0) {
        return Err(Error::precondition("dt must be > 0"));
    }
    let mean = if dt.is_infinite() && b_lin < 0.0 {
        0.0
    } else {
        x_prev * (b_lin * dt).exp()
    };
    let variance = if b_lin.abs() < 1e-12 {
        2.0 * eps * dt
    } else {
        eps / b_lin * (2.0 * b_lin * dt).exp_m1()
    };
    Ok(GaussianKernel { mean, variance })
}
