//! Shared numerical kernels: RK4 stepping, adaptive Simpson quadrature,
//! bracketed root finding and three-point parabola refinement.

/// One classical Runge-Kutta step for `y' = f(y)`, written into `out`.
pub fn rk4_step<F>(f: &F, y: &[f64], h: f64, out: &mut [f64])
where
    F: Fn(&[f64], &mut [f64]),
{
    let n = y.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];

    f(y, &mut k1);
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * h * k1[i];
    }
    f(&tmp, &mut k2);
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * h * k2[i];
    }
    f(&tmp, &mut k3);
    for i in 0..n {
        tmp[i] = y[i] + h * k3[i];
    }
    f(&tmp, &mut k4);
    for i in 0..n {
        out[i] = y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

/// Number of fixed steps covering `[0, t_end]`; the step is then `t_end / n`.
///
/// A requested `dt` that does not divide `t_end` is shrunk slightly so the
/// grid lands exactly on `t_end`.
pub fn step_count(t_end: f64, dt: f64) -> usize {
    let n = (t_end / dt - 1e-9).ceil();
    (n.max(1.0)) as usize
}

/// Adaptive Simpson quadrature with absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let mut budget = SIMPSON_MAX_EVALS;
    simpson_rec(f, a, b, fa, fm, fb, whole, tol, 50, &mut budget)
}

/// Evaluation budget per integral; near-singular integrands otherwise
/// refine without bound before the depth cap is reached.
const SIMPSON_MAX_EVALS: usize = 1 << 20;

#[allow(clippy::too_many_arguments)]
fn simpson_rec<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    budget: &mut usize,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    *budget = budget.saturating_sub(2);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || *budget == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, budget)
        + simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1, budget)
}

/// Bisection on a bracket with `f(lo)` and `f(hi)` of opposite sign (or zero).
pub fn bisect<F: Fn(f64) -> f64>(f: &F, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let mut flo = f(lo);
    if flo == 0.0 {
        return lo;
    }
    if f(hi) == 0.0 {
        return hi;
    }
    for _ in 0..200 {
        if (hi - lo).abs() <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let fmid = f(mid);
        if fmid == 0.0 {
            return mid;
        }
        if (fmid < 0.0) == (flo < 0.0) {
            lo = mid;
            flo = fmid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Roots of `f` on `[a, b]` found by sign-change scanning over `cells` equal
/// cells followed by bisection to `tol`. Exact zeros on scan nodes are kept.
pub fn scan_roots<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, cells: usize, tol: f64) -> Vec<f64> {
    let h = (b - a) / cells as f64;
    let mut roots: Vec<f64> = Vec::new();
    let mut x0 = a;
    let mut f0 = f(x0);
    for k in 1..=cells {
        let x1 = if k == cells { b } else { a + h * k as f64 };
        let f1 = f(x1);
        if f0 == 0.0 {
            roots.push(x0);
        } else if f1 != 0.0 && (f0 < 0.0) != (f1 < 0.0) {
            roots.push(bisect(f, x0, x1, tol));
        }
        if k == cells && f1 == 0.0 {
            roots.push(x1);
        }
        x0 = x1;
        f0 = f1;
    }
    roots
}

/// Vertex `(offset, value)` of the parabola through `(-h, l), (0, c), (h, r)`.
/// The offset is relative to the middle node; flat or concave triples return
/// the middle node unchanged.
pub fn parabola_vertex(l: f64, c: f64, r: f64, h: f64) -> (f64, f64) {
    let curv = l - 2.0 * c + r;
    if curv <= 0.0 {
        return (0.0, c);
    }
    let slope = 0.5 * (r - l);
    let s = (-slope / curv).clamp(-0.5, 0.5);
    let value = c + slope * s + 0.5 * curv * s * s;
    (s * h, value)
}

/// Cumulative trapezoid of equally spaced samples, starting at 0.
pub fn cumulative_trapezoid(values: &[f64], h: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in values.windows(2) {
        acc += 0.5 * h * (w[0] + w[1]);
        out.push(acc);
    }
    out
}

pub fn all_finite(xs: &[f64]) -> bool {
    xs.iter().all(|v| v.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rk4_exponential_decay() {
        let f = |y: &[f64], dy: &mut [f64]| dy[0] = -y[0];
        let mut y = vec![1.0];
        let mut next = vec![0.0];
        for _ in 0..100 {
            rk4_step(&f, &y, 0.01, &mut next);
            y.copy_from_slice(&next);
        }
        assert!((y[0] - (-1.0f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn simpson_polynomial_and_smooth() {
        let v = adaptive_simpson(&|x: f64| x * x * x - x, -1.0, 0.0, 1e-12);
        assert!((v - 0.25).abs() < 1e-12);
        let v = adaptive_simpson(&|x: f64| x.sin(), 0.0, std::f64::consts::PI, 1e-12);
        assert!((v - 2.0).abs() < 1e-10);
    }

    #[test]
    fn scan_finds_sine_zeros_once() {
        let f = |x: f64| (2.0 * std::f64::consts::PI * x).sin();
        let roots = scan_roots(&f, 0.0, 1.0, 4096, 1e-12);
        // 0, 0.5, 1 (the closing node counts on an open interval scan)
        assert!(roots.iter().any(|r| r.abs() < 1e-10));
        assert!(roots.iter().any(|r| (r - 0.5).abs() < 1e-10));
    }

    #[test]
    fn parabola_vertex_exact_for_quadratic() {
        let g = |x: f64| 2.0 * (x - 0.3).powi(2) + 1.5;
        let (s, v) = parabola_vertex(g(-1.0), g(0.0), g(1.0), 1.0);
        assert!((s - 0.3).abs() < 1e-14);
        assert!((v - 1.5).abs() < 1e-14);
    }

    #[test]
    fn step_count_lands_on_end() {
        assert_eq!(step_count(1.0, 1e-3), 1000);
        assert_eq!(step_count(std::f64::consts::PI, 1e-3), 3142);
        assert_eq!(step_count(0.5, 1.0), 1);
    }
}
