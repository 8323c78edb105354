//! Drift fields `b(x)` built from a small declarative catalog.
//!
//! Every catalog kind has a closed-form Jacobian, so evaluation stays exact and
//! differentiable by hand. Kinds with a known orthogonal decomposition
//! `b = -grad U + l` with `l . grad U = 0` also expose `U`, `grad U` and `l`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Declarative drift specification, tagged by `kind` in JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FieldSpec {
    /// `b(x) = -b_coef * x`.
    Ou { b_coef: f64 },
    /// `b(x) = sum_k coeffs[k] x^k`, ascending powers.
    Poly1d { coeffs: Vec<f64> },
    /// `b(theta) = b0 + sum_k a[k-1] cos(2 pi k theta) + c[k-1] sin(2 pi k theta)` on `[0, 1)`.
    Circle {
        b0: f64,
        #[serde(default)]
        a: Vec<f64>,
        #[serde(default)]
        c: Vec<f64>,
    },
    /// `b(x, y) = (-x + omega y, -y - omega x)`.
    RotOu { omega: f64 },
    /// `b = -grad U + gamma R grad U` with `R(u, v) = (v, -u)`, where
    /// `U(x, y) = sum potential[i][j] x^i y^j` over `i + j <= 4`.
    Decomposed2d { potential: Vec<Vec<f64>>, gamma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Line,
    Plane,
    Circle,
}

/// Truncated real Fourier series on the unit circle,
/// `g(theta) = constant + sum_k cos[k-1] cos(2 pi k theta) + sin[k-1] sin(2 pi k theta)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Fourier {
    pub constant: f64,
    pub cos: Vec<f64>,
    pub sin: Vec<f64>,
}

impl Fourier {
    pub fn new(constant: f64, cos: Vec<f64>, sin: Vec<f64>) -> Self {
        Fourier { constant, cos, sin }
    }

    fn modes(&self) -> usize {
        self.cos.len().max(self.sin.len())
    }

    fn coef(v: &[f64], k: usize) -> f64 {
        v.get(k).copied().unwrap_or(0.0)
    }

    /// `d`-th derivative at `theta` (`d = 0` is the value). The argument is
    /// reduced mod 1 first so `g(theta) == g(theta + 1)` whenever `theta + 1`
    /// is exact in floating point.
    pub fn derivative(&self, theta: f64, d: u32) -> f64 {
        let t = theta.rem_euclid(1.0);
        let mut s = if d == 0 { self.constant } else { 0.0 };
        for k in 0..self.modes() {
            let w = 2.0 * PI * (k + 1) as f64;
            let (sn, cs) = (w * t).sin_cos();
            let (a, c) = (Self::coef(&self.cos, k), Self::coef(&self.sin, k));
            // d/dtheta cycles (cos, sin) -> (-sin, cos) with a factor w.
            let (dc, ds) = match d % 4 {
                0 => (cs, sn),
                1 => (-sn, cs),
                2 => (-cs, -sn),
                _ => (sn, -cs),
            };
            s += w.powi(d as i32) * (a * dc + c * ds);
        }
        s
    }

    pub fn value(&self, theta: f64) -> f64 {
        self.derivative(theta, 0)
    }

    /// Mean-free antiderivative; the constant term is dropped.
    pub fn antiderivative(&self) -> Fourier {
        let n = self.modes();
        let mut cos = vec![0.0; n];
        let mut sin = vec![0.0; n];
        for k in 0..n {
            let w = 2.0 * PI * (k + 1) as f64;
            // integral of a cos(w t) + c sin(w t) = (a/w) sin(w t) - (c/w) cos(w t)
            sin[k] = Self::coef(&self.cos, k) / w;
            cos[k] = -Self::coef(&self.sin, k) / w;
        }
        Fourier::new(0.0, cos, sin)
    }

    pub fn scaled(&self, factor: f64) -> Fourier {
        Fourier::new(
            self.constant * factor,
            self.cos.iter().map(|v| v * factor).collect(),
            self.sin.iter().map(|v| v * factor).collect(),
        )
    }
}

/// Bivariate polynomial with triangular coefficient table `coef[i][j]` for `x^i y^j`.
#[derive(Debug, Clone, PartialEq)]
struct Poly2 {
    coef: Vec<Vec<f64>>,
}

impl Poly2 {
    /// `d^(dx+dy) U / dx^dx dy^dy` at `(x, y)`.
    fn partial(&self, x: f64, y: f64, dx: u32, dy: u32) -> f64 {
        let mut s = 0.0;
        for (i, row) in self.coef.iter().enumerate() {
            let i = i as u32;
            if i < dx {
                continue;
            }
            for (j, &c) in row.iter().enumerate() {
                let j = j as u32;
                if j < dy || c == 0.0 {
                    continue;
                }
                let fx = falling(i, dx) * x.powi((i - dx) as i32);
                let fy = falling(j, dy) * y.powi((j - dy) as i32);
                s += c * fx * fy;
            }
        }
        s
    }
}

fn falling(n: u32, k: u32) -> f64 {
    (0..k).map(|m| (n - m) as f64).product()
}

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    Ou { k: f64 },
    Poly { coeffs: Vec<f64> },
    Circle { series: Fourier },
    RotOu { omega: f64 },
    Decomposed { potential: Poly2, gamma: f64 },
}

/// An evaluable drift field. Evaluators are pure and `Sync`.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftField {
    spec: FieldSpec,
    kind: Kind,
    dim: usize,
    domain: Domain,
}

fn finite(path: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::config(path, "non-finite parameter"))
    }
}

fn finite_list(path: &str, v: &[f64]) -> Result<()> {
    for (i, x) in v.iter().enumerate() {
        finite(&format!("{path}[{i}]"), *x)?;
    }
    Ok(())
}

/// Build a drift field from its specification.
pub fn build_field(spec: &FieldSpec) -> Result<DriftField> {
    let (kind, dim, domain) = match spec {
        FieldSpec::Ou { b_coef } => {
            let k = finite("field.b_coef", *b_coef)?;
            if k <= 0.0 {
                return Err(Error::config("field.b_coef", "must be > 0"));
            }
            (Kind::Ou { k }, 1, Domain::Line)
        }
        FieldSpec::Poly1d { coeffs } => {
            if coeffs.is_empty() {
                return Err(Error::config("field.coeffs", "empty coefficient list"));
            }
            finite_list("field.coeffs", coeffs)?;
            (
                Kind::Poly {
                    coeffs: coeffs.clone(),
                },
                1,
                Domain::Line,
            )
        }
        FieldSpec::Circle { b0, a, c } => {
            finite("field.b0", *b0)?;
            finite_list("field.a", a)?;
            finite_list("field.c", c)?;
            (
                Kind::Circle {
                    series: Fourier::new(*b0, a.clone(), c.clone()),
                },
                1,
                Domain::Circle,
            )
        }
        FieldSpec::RotOu { omega } => (
            Kind::RotOu {
                omega: finite("field.omega", *omega)?,
            },
            2,
            Domain::Plane,
        ),
        FieldSpec::Decomposed2d { potential, gamma } => {
            if potential.is_empty() || potential.iter().all(|r| r.is_empty()) {
                return Err(Error::config("field.potential", "empty coefficient table"));
            }
            for (i, row) in potential.iter().enumerate() {
                if i + row.len() > 5 {
                    return Err(Error::config(
                        format!("field.potential[{i}]"),
                        "total degree must not exceed 4",
                    ));
                }
                finite_list(&format!("field.potential[{i}]"), row)?;
            }
            (
                Kind::Decomposed {
                    potential: Poly2 {
                        coef: potential.clone(),
                    },
                    gamma: finite("field.gamma", *gamma)?,
                },
                2,
                Domain::Plane,
            )
        }
    };
    Ok(DriftField {
        spec: spec.clone(),
        kind,
        dim,
        domain,
    })
}

impl DriftField {
    pub fn new(spec: FieldSpec) -> Result<Self> {
        build_field(&spec)
    }

    pub fn spec(&self) -> &FieldSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    /// Evaluate `b(x)` into `out`.
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        match &self.kind {
            Kind::Ou { k } => out[0] = -k * x[0],
            Kind::Poly { coeffs } => out[0] = horner(coeffs, x[0], 0),
            Kind::Circle { series } => out[0] = series.value(x[0]),
            Kind::RotOu { omega } => {
                out[0] = -x[0] + omega * x[1];
                out[1] = -x[1] - omega * x[0];
            }
            Kind::Decomposed { potential, gamma } => {
                let ux = potential.partial(x[0], x[1], 1, 0);
                let uy = potential.partial(x[0], x[1], 0, 1);
                out[0] = -ux + gamma * uy;
                out[1] = -uy - gamma * ux;
            }
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(x, &mut out);
        out
    }

    /// Scalar drift of a one-dimensional field.
    pub fn eval1(&self, x: f64) -> f64 {
        let mut out = [0.0];
        self.eval_into(&[x], &mut out);
        out[0]
    }

    /// Analytic Jacobian `J[i][j] = d b_i / d x_j`.
    pub fn jacobian(&self, x: &[f64]) -> Vec<Vec<f64>> {
        match &self.kind {
            Kind::Ou { k } => vec![vec![-k]],
            Kind::Poly { coeffs } => vec![vec![horner(coeffs, x[0], 1)]],
            Kind::Circle { series } => vec![vec![series.derivative(x[0], 1)]],
            Kind::RotOu { omega } => vec![vec![-1.0, *omega], vec![-omega, -1.0]],
            Kind::Decomposed { potential, gamma } => {
                let uxx = potential.partial(x[0], x[1], 2, 0);
                let uxy = potential.partial(x[0], x[1], 1, 1);
                let uyy = potential.partial(x[0], x[1], 0, 2);
                vec![
                    vec![-uxx + gamma * uxy, -uxy + gamma * uyy],
                    vec![-uxy - gamma * uxx, -uyy - gamma * uxy],
                ]
            }
        }
    }

    /// Central-difference Jacobian with step `max(1e-6, 1e-6 |x|)`.
    pub fn jacobian_fd(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let n = self.dim;
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let h = (1e-6f64).max(1e-6 * norm);
        let mut jac = vec![vec![0.0; n]; n];
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        let mut bp = vec![0.0; n];
        let mut bm = vec![0.0; n];
        for j in 0..n {
            xp[j] = x[j] + h;
            xm[j] = x[j] - h;
            self.eval_into(&xp, &mut bp);
            self.eval_into(&xm, &mut bm);
            for i in 0..n {
                jac[i][j] = (bp[i] - bm[i]) / (2.0 * h);
            }
            xp[j] = x[j];
            xm[j] = x[j];
        }
        jac
    }

    /// Jacobian with a finiteness check.
    pub fn eval_jacobian(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        check_point(self, x)?;
        let jac = self.jacobian(x);
        if jac.iter().flatten().all(|v| v.is_finite()) {
            Ok(jac)
        } else {
            Err(Error::numerical("non-finite Jacobian"))
        }
    }

    /// `b'(x)` for one-dimensional fields.
    pub fn deriv1(&self, x: f64) -> f64 {
        self.jacobian(&[x])[0][0]
    }

    /// `b''(x)` for one-dimensional fields.
    pub fn second_deriv1(&self, x: f64) -> f64 {
        match &self.kind {
            Kind::Ou { .. } => 0.0,
            Kind::Poly { coeffs } => horner(coeffs, x, 2),
            Kind::Circle { series } => series.derivative(x, 2),
            _ => {
                let h = (1e-4f64).max(1e-4 * x.abs());
                (self.deriv1(x + h) - self.deriv1(x - h)) / (2.0 * h)
            }
        }
    }

    pub fn divergence(&self, x: &[f64]) -> f64 {
        let jac = self.jacobian(x);
        (0..self.dim).map(|i| jac[i][i]).sum()
    }

    /// Fourier series of a circle field.
    pub fn fourier(&self) -> Option<&Fourier> {
        match &self.kind {
            Kind::Circle { series } => Some(series),
            _ => None,
        }
    }

    /// Whether `U` and `l` are available.
    pub fn has_decomposition(&self) -> bool {
        matches!(
            self.kind,
            Kind::Ou { .. } | Kind::RotOu { .. } | Kind::Decomposed { .. }
        )
    }

    /// Potential `U(x)`, when declared.
    pub fn potential(&self, x: &[f64]) -> Option<f64> {
        match &self.kind {
            Kind::Ou { k } => Some(0.5 * k * x[0] * x[0]),
            Kind::RotOu { .. } => Some(0.5 * (x[0] * x[0] + x[1] * x[1])),
            Kind::Decomposed { potential, .. } => Some(potential.partial(x[0], x[1], 0, 0)),
            _ => None,
        }
    }

    pub fn grad_potential(&self, x: &[f64]) -> Option<Vec<f64>> {
        match &self.kind {
            Kind::Ou { k } => Some(vec![k * x[0]]),
            Kind::RotOu { .. } => Some(vec![x[0], x[1]]),
            Kind::Decomposed { potential, .. } => Some(vec![
                potential.partial(x[0], x[1], 1, 0),
                potential.partial(x[0], x[1], 0, 1),
            ]),
            _ => None,
        }
    }

    /// Rotational part `l(x)`, when declared.
    pub fn rotational(&self, x: &[f64]) -> Option<Vec<f64>> {
        match &self.kind {
            Kind::Ou { .. } => Some(vec![0.0]),
            Kind::RotOu { omega } => Some(vec![omega * x[1], -omega * x[0]]),
            Kind::Decomposed { potential, gamma } => {
                let ux = potential.partial(x[0], x[1], 1, 0);
                let uy = potential.partial(x[0], x[1], 0, 1);
                Some(vec![gamma * uy, -gamma * ux])
            }
            _ => None,
        }
    }

    /// Specification of the field with the rotational part negated.
    /// `None` when no decomposition is declared.
    pub fn reversed_spec(&self) -> Option<FieldSpec> {
        match &self.spec {
            FieldSpec::Ou { b_coef } => Some(FieldSpec::Ou { b_coef: *b_coef }),
            FieldSpec::RotOu { omega } => Some(FieldSpec::RotOu { omega: -omega }),
            FieldSpec::Decomposed2d { potential, gamma } => Some(FieldSpec::Decomposed2d {
                potential: potential.clone(),
                gamma: -gamma,
            }),
            _ => None,
        }
    }

    /// Map a state back into the domain (mod 1 on the circle).
    pub fn wrap(&self, x: &mut [f64]) {
        if self.domain == Domain::Circle {
            x[0] = x[0].rem_euclid(1.0);
        }
    }

    /// Default sampling box per axis: `[-half_width, half_width]`, or `[0, 1)` on the circle.
    pub fn default_box(&self, half_width: f64) -> (f64, f64) {
        match self.domain {
            Domain::Circle => (0.0, 1.0),
            _ => (-half_width, half_width),
        }
    }
}

/// Default half-width of line and plane domains.
pub const DEFAULT_HALF_WIDTH: f64 = 3.0;

/// `d`-th derivative of an ascending-coefficient polynomial.
fn horner(coeffs: &[f64], x: f64, d: u32) -> f64 {
    let mut acc = 0.0;
    for (k, &c) in coeffs.iter().enumerate().rev() {
        let k = k as u32;
        if k < d {
            break;
        }
        acc = acc * x + c * falling(k, d);
    }
    acc
}

fn check_point(field: &DriftField, x: &[f64]) -> Result<()> {
    if x.len() != field.dim() {
        return Err(Error::precondition(format!(
            "point has dimension {}, field has {}",
            x.len(),
            field.dim()
        )));
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::precondition("point has non-finite entries"));
    }
    Ok(())
}

/// `d b_i / d x_j - d b_j / d x_i`.
pub fn curl_component(field: &DriftField, x: &[f64], i: usize, j: usize) -> Result<f64> {
    let n = field.dim();
    if n < 2 {
        return Err(Error::precondition("curl needs dimension >= 2"));
    }
    if i >= n || j >= n {
        return Err(Error::precondition(format!(
            "curl index ({i}, {j}) out of range for dimension {n}"
        )));
    }
    check_point(field, x)?;
    let jac = field.jacobian(x);
    Ok(jac[i][j] - jac[j][i])
}

#[derive(Debug, Clone, Serialize)]
pub struct DecompositionReport {
    /// max |b + grad U - l|.
    pub max_drift_residual: f64,
    /// max |l . grad U|.
    pub max_orthogonality_residual: f64,
    pub samples: usize,
    pub tol: f64,
    pub passed: bool,
}

/// Verify `b = -grad U + l` and `l . grad U = 0` at each sample.
pub fn check_decomposition(
    field: &DriftField,
    samples: &[Vec<f64>],
    tol: f64,
) -> Result<DecompositionReport> {
    if !field.has_decomposition() {
        return Err(Error::precondition("field declares no decomposition"));
    }
    let mut drift_res: f64 = 0.0;
    let mut orth_res: f64 = 0.0;
    for x in samples {
        check_point(field, x)?;
        let b = field.eval(x);
        let g = field.grad_potential(x).expect("decomposition declared");
        let l = field.rotational(x).expect("decomposition declared");
        for i in 0..field.dim() {
            drift_res = drift_res.max((b[i] + g[i] - l[i]).abs());
        }
        let dot: f64 = l.iter().zip(&g).map(|(a, b)| a * b).sum();
        orth_res = orth_res.max(dot.abs());
    }
    Ok(DecompositionReport {
        max_drift_residual: drift_res,
        max_orthogonality_residual: orth_res,
        samples: samples.len(),
        tol,
        passed: drift_res <= tol && orth_res <= tol,
    })
}

/// Uniform `n x n` (or `n`) sample of the default domain, endpoints included.
pub fn sample_domain(field: &DriftField, half_width: f64, n: usize) -> Vec<Vec<f64>> {
    let (lo, hi) = field.default_box(half_width);
    let axis: Vec<f64> = (0..n)
        .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
        .collect();
    match field.dim() {
        1 => axis.iter().map(|&x| vec![x]).collect(),
        _ => axis
            .iter()
            .flat_map(|&x| axis.iter().map(move |&y| vec![x, y]))
            .collect(),
    }
}
