//! Cumulant generating functions, their Legendre transforms and empirical
//! rate functions of iid sample means.
//!
//! Convention: `lambda(theta) = ln E[e^{theta X}]`, so `lambda'(0) = E[X]` and
//! the Legendre transform `u*(x) = sup_theta {x theta - lambda(theta)}` has its
//! zero at the mean.

use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::parabola_vertex;
use crate::simulate::run_rng;

/// Minimum sample count for an empirical CGF.
pub const MIN_SAMPLES: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Source {
    Gaussian { mean: f64, variance: f64 },
    Bernoulli { p: f64 },
    /// Point mass; only meaningful for sampling.
    Constant { value: f64 },
    Samples { values: Vec<f64> },
}

/// Short description of where a table came from.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceTag {
    Gaussian { mean: f64, variance: f64 },
    Bernoulli { p: f64 },
    Constant { value: f64 },
    Samples { n: usize },
}

impl Source {
    fn validate(&self) -> Result<()> {
        match self {
            Source::Gaussian { mean, variance } => {
                if !mean.is_finite() || !(*variance >= 0.0 && variance.is_finite()) {
                    return Err(Error::config("source", "need finite mean and variance >= 0"));
                }
            }
            Source::Bernoulli { p } => {
                if !(*p >= 0.0 && *p <= 1.0) {
                    return Err(Error::config("source.p", "must lie in [0, 1]"));
                }
            }
            Source::Constant { value } => {
                if !value.is_finite() {
                    return Err(Error::config("source.value", "must be finite"));
                }
            }
            Source::Samples { values } => {
                if values.is_empty() {
                    return Err(Error::precondition("empty sample set"));
                }
                if !values.iter().all(|v| v.is_finite()) {
                    return Err(Error::config("source.values", "non-finite sample"));
                }
            }
        }
        Ok(())
    }

    fn tag(&self) -> SourceTag {
        match self {
            Source::Gaussian { mean, variance } => SourceTag::Gaussian {
                mean: *mean,
                variance: *variance,
            },
            Source::Bernoulli { p } => SourceTag::Bernoulli { p: *p },
            Source::Constant { value } => SourceTag::Constant { value: *value },
            Source::Samples { values } => SourceTag::Samples { n: values.len() },
        }
    }

    /// `lambda(theta)`.
    pub fn cgf_at(&self, theta: f64) -> f64 {
        match self {
            Source::Gaussian { mean, variance } => mean * theta + 0.5 * variance * theta * theta,
            Source::Bernoulli { p } => {
                // ln(1 - p + p e^theta), written to stay accurate near theta = 0
                (p * theta.exp_m1()).ln_1p()
            }
            Source::Constant { value } => value * theta,
            Source::Samples { values } => {
                let m = values
                    .iter()
                    .map(|x| theta * x)
                    .fold(f64::NEG_INFINITY, f64::max);
                let s: f64 = values.iter().map(|x| (theta * x - m).exp()).sum();
                m + s.ln() - (values.len() as f64).ln()
            }
        }
    }

    /// Exponentially tilted source with `lambda'(theta) = x`, and that `theta`.
    fn tilted_towards(&self, x: f64) -> Option<(Source, f64)> {
        match *self {
            Source::Gaussian { mean, variance } if variance > 0.0 => {
                let theta = (x - mean) / variance;
                Some((
                    Source::Gaussian {
                        mean: x,
                        variance,
                    },
                    theta,
                ))
            }
            Source::Bernoulli { p } if p > 0.0 && p < 1.0 && x > 0.0 && x < 1.0 => {
                let theta = (x * (1.0 - p) / (p * (1.0 - x))).ln();
                Some((Source::Bernoulli { p: x }, theta))
            }
            _ => None,
        }
    }

    fn sampler(&self) -> Result<Sampler> {
        Ok(match self {
            Source::Gaussian { mean, variance } => Sampler::Normal(
                Normal::new(*mean, variance.sqrt()).map_err(|e| Error::config("source", e.to_string()))?,
            ),
            Source::Bernoulli { p } => {
                Sampler::Bernoulli(Bernoulli::new(*p).map_err(|e| Error::config("source.p", e.to_string()))?)
            }
            Source::Constant { value } => Sampler::Constant(*value),
            Source::Samples { values } => Sampler::Resample(values.clone()),
        })
    }
}

enum Sampler {
    Normal(Normal<f64>),
    Bernoulli(Bernoulli),
    Constant(f64),
    Resample(Vec<f64>),
}

impl Sampler {
    fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            Sampler::Normal(d) => d.sample(rng),
            Sampler::Bernoulli(d) => {
                if d.sample(rng) {
                    1.0
                } else {
                    0.0
                }
            }
            Sampler::Constant(c) => *c,
            Sampler::Resample(v) => v[rng.gen_range(0..v.len())],
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CgfTable {
    pub theta: Vec<f64>,
    pub lambda: Vec<f64>,
    pub source: SourceTag,
}

impl CgfTable {
    pub fn h(&self) -> f64 {
        self.theta[1] - self.theta[0]
    }

    fn zero_index(&self) -> usize {
        self.theta.len() / 2
    }
}

/// Uniform grid on `[-max, max]` with `n` (odd) points.
pub fn theta_grid(max: f64, n: usize) -> Result<Vec<f64>> {
    if n < 5 || n % 2 == 0 || !(max > 0.0) {
        return Err(Error::config("theta_grid", "need odd n >= 5 and max > 0"));
    }
    let half = (n / 2) as f64;
    Ok((0..n).map(|i| max * (i as f64 - half) / half).collect())
}

fn check_theta_grid(theta: &[f64]) -> Result<()> {
    let n = theta.len();
    if n < 5 || n % 2 == 0 {
        return Err(Error::config("theta", "need an odd number (>= 5) of points"));
    }
    let h = theta[1] - theta[0];
    if !(h > 0.0) {
        return Err(Error::config("theta", "must be increasing"));
    }
    for i in 0..n {
        let step = i.checked_sub(1).map(|j| theta[i] - theta[j]);
        if step.is_some_and(|s| (s - h).abs() > 1e-9 * h) || (theta[i] + theta[n - 1 - i]).abs() > 1e-9 * h {
            return Err(Error::config("theta", "must be uniform and symmetric about 0"));
        }
    }
    Ok(())
}

/// Tabulate `lambda` on `theta_grid`.
pub fn cgf(source: &Source, theta_grid: &[f64]) -> Result<CgfTable> {
    source.validate()?;
    check_theta_grid(theta_grid)?;
    if let Source::Samples { values } = source {
        if values.len() < MIN_SAMPLES {
            return Err(Error::precondition(format!(
                "need at least {MIN_SAMPLES} samples, got {}",
                values.len()
            )));
        }
    }
    let mut lambda: Vec<f64> = theta_grid.iter().map(|&t| source.cgf_at(t)).collect();
    if !lambda.iter().all(|v| v.is_finite()) {
        return Err(Error::numerical("cgf overflow on the theta grid"));
    }
    // symmetric grids put theta = 0 in the middle; snap rounding there
    lambda[theta_grid.len() / 2] = 0.0;
    Ok(CgfTable {
        theta: theta_grid.to_vec(),
        lambda,
        source: source.tag(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LegendreValue {
    pub value: f64,
    /// Maximizing `theta` after refinement.
    pub argmax: f64,
    /// The grid sup sat on the boundary of the table.
    pub unreliable: bool,
}

/// `sup_k {x s_k - f_k}` over a uniform grid `s` with parabolic refinement.
pub fn conjugate(s: &[f64], f: &[f64], x: f64) -> LegendreValue {
    let n = s.len();
    let (k, best) = (0..n)
        .map(|k| (k, x * s[k] - f[k]))
        .fold((0, f64::NEG_INFINITY), |b, (k, v)| if v > b.1 { (k, v) } else { b });
    if k == 0 || k + 1 == n {
        return LegendreValue {
            value: best,
            argmax: s[k],
            unreliable: true,
        };
    }
    let g = |i: usize| -(x * s[i] - f[i]);
    let h = s[1] - s[0];
    let (off, v) = parabola_vertex(g(k - 1), g(k), g(k + 1), h);
    LegendreValue {
        value: -v,
        argmax: s[k] + off,
        unreliable: false,
    }
}

/// `u*(x) = sup_theta {x theta - lambda(theta)}`.
///
/// Flagged unreliable when `x` is not strictly inside the range of `lambda'`
/// at the table ends, where the sup is (or would be) on the boundary.
pub fn legendre(table: &CgfTable, x: f64) -> LegendreValue {
    let mut out = conjugate(&table.theta, &table.lambda, x);
    out.value = out.value.max(0.0);
    let (l, n, h) = (&table.lambda, table.lambda.len(), table.h());
    let slope_lo = (l[1] - l[0]) / h;
    let slope_hi = (l[n - 1] - l[n - 2]) / h;
    let tol = 1e-9 * x.abs().max(1.0);
    if x <= slope_lo + tol || x >= slope_hi - tol {
        out.unreliable = true;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateProperties {
    pub argmin: f64,
    pub min: f64,
    pub curvature: f64,
}

/// Location, value and curvature of the minimum of `u*`, from `lambda` at 0.
pub fn rate_properties(table: &CgfTable) -> Result<RateProperties> {
    let i = table.zero_index();
    let h = table.h();
    let (l, c, r) = (table.lambda[i - 1], table.lambda[i], table.lambda[i + 1]);
    let d2 = (l - 2.0 * c + r) / (h * h);
    if !(d2 > 0.0) {
        return Err(Error::numerical("lambda''(0) <= 0: degenerate source"));
    }
    Ok(RateProperties {
        argmin: (r - l) / (2.0 * h),
        min: -c,
        curvature: 1.0 / d2,
    })
}

/// How sample means are drawn in [`sample_mean_rate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// One histogram of `M` plain sample means per `n`.
    #[default]
    Plain,
    /// Per grid point, `M` sample means from the source tilted to mean `x`,
    /// reweighted by the likelihood ratio `exp(-n (theta z - lambda(theta)))`.
    Tilted,
}

#[derive(Debug, Clone, Serialize)]
pub struct EmpiricalRow {
    pub n: usize,
    /// `-(1/n) ln density` per grid point; `None` where the bin was empty.
    pub rate: Vec<Option<f64>>,
    pub empty_bins: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct EmpiricalRate {
    pub x: Vec<f64>,
    pub bin_width: f64,
    pub sampling: Sampling,
    pub rows: Vec<EmpiricalRow>,
}

pub const MIN_BATCHES: usize = 10_000;
const CHUNK: usize = 1024;

/// Empirical rate function of the sample mean `Z_n` on a uniform `x_grid`
/// (bin centers), `M` sample means per `n`.
pub fn sample_mean_rate(
    source: &Source,
    n_list: &[usize],
    x_grid: &[f64],
    batches: usize,
    seed: u64,
    sampling: Sampling,
) -> Result<EmpiricalRate> {
    source.validate()?;
    if batches < MIN_BATCHES {
        return Err(Error::precondition(format!("need M >= {MIN_BATCHES} sample means")));
    }
    if n_list.is_empty() || n_list.contains(&0) {
        return Err(Error::config("n_list", "need positive sample sizes"));
    }
    if x_grid.len() < 2 {
        return Err(Error::config("x_grid", "need at least two bin centers"));
    }
    let width = x_grid[1] - x_grid[0];
    if !(width > 0.0)
        || x_grid
            .windows(2)
            .any(|w| ((w[1] - w[0]) - width).abs() > 1e-9 * width)
    {
        return Err(Error::config("x_grid", "must be uniform and increasing"));
    }
    let lo = x_grid[0] - 0.5 * width;
    let bins = x_grid.len();
    let bin_of = |z: f64| -> Option<usize> {
        let k = ((z - lo) / width).floor();
        (k >= 0.0 && (k as usize) < bins).then_some(k as usize)
    };

    let mut rows = Vec::with_capacity(n_list.len());
    for (ni, &n) in n_list.iter().enumerate() {
        let mean_of = |sampler: &Sampler, chunk: usize, key: u64| -> Vec<f64> {
            let mut rng = run_rng(seed, key);
            let count = CHUNK.min(batches - chunk * CHUNK);
            (0..count)
                .map(|_| (0..n).map(|_| sampler.draw(&mut rng)).sum::<f64>() / n as f64)
                .collect()
        };
        let chunks = batches.div_ceil(CHUNK);
        let mut density = vec![0.0; bins];
        match sampling {
            Sampling::Plain => {
                let sampler = source.sampler()?;
                let counts = (0..chunks)
                    .into_par_iter()
                    .map(|c| {
                        let mut h = vec![0u64; bins];
                        for z in mean_of(&sampler, c, stream_key(ni, 0, c)) {
                            if let Some(k) = bin_of(z) {
                                h[k] += 1;
                            }
                        }
                        h
                    })
                    .reduce(|| vec![0u64; bins], |a, b| a.iter().zip(&b).map(|(x, y)| x + y).collect());
                for (d, c) in density.iter_mut().zip(&counts) {
                    *d = *c as f64 / (batches as f64 * width);
                }
            }
            Sampling::Tilted => {
                for (xi, &x) in x_grid.iter().enumerate() {
                    let Some((tilted, theta)) = source.tilted_towards(x) else {
                        continue;
                    };
                    let lam = source.cgf_at(theta);
                    let sampler = tilted.sampler()?;
                    // per-chunk sums are combined in chunk order for reproducibility
                    let sums: Vec<f64> = (0..chunks)
                        .into_par_iter()
                        .map(|c| {
                            mean_of(&sampler, c, stream_key(ni, xi + 1, c))
                                .into_iter()
                                .filter(|&z| bin_of(z) == Some(xi))
                                .map(|z| (-(n as f64) * (theta * z - lam)).exp())
                                .sum()
                        })
                        .collect();
                    density[xi] = sums.iter().sum::<f64>() / (batches as f64 * width);
                }
            }
        }
        let rate: Vec<Option<f64>> = density
            .iter()
            .map(|&d| (d > 0.0).then(|| -d.ln() / n as f64))
            .collect();
        let empty_bins = rate.iter().filter(|r| r.is_none()).count();
        rows.push(EmpiricalRow { n, rate, empty_bins });
    }
    Ok(EmpiricalRate {
        x: x_grid.to_vec(),
        bin_width: width,
        sampling,
        rows,
    })
}

/// Disjoint RNG streams per (n index, grid point, chunk).
fn stream_key(n_index: usize, point: usize, chunk: usize) -> u64 {
    ((n_index as u64) << 48) | ((point as u64) << 24) | chunk as u64
}
