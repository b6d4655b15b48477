//! Paired Student t-test with the p-value obtained by adaptive numerical
//! integration of the t-density (no distribution tables, no special-function
//! crate): `p = 1 - 2 * integral_0^{|t|} pdf`.

use super::EvalError;

/// Result of a two-sided paired t-test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTestResult {
    pub t: f64,
    pub p: f64,
    pub n: usize,
    /// All differences equal and nonzero: t is infinite and p is reported
    /// as 0 by convention.
    pub degenerate_variance: bool,
}

/// ln Gamma(k/2) for positive integer k, by the recurrence
/// Gamma(z+1) = z Gamma(z) from Gamma(1/2) = sqrt(pi) and Gamma(1) = 1.
fn ln_gamma_half(k: usize) -> f64 {
    assert!(k >= 1);
    let (mut z, mut acc) = if k % 2 == 1 {
        (0.5, 0.5 * std::f64::consts::PI.ln())
    } else {
        (1.0, 0.0)
    };
    while z + 1.0 <= k as f64 / 2.0 + 1e-9 {
        acc += z.ln();
        z += 1.0;
    }
    acc
}

/// Student t density with `dof` degrees of freedom.
fn t_density(x: f64, dof: usize) -> f64 {
    let nu = dof as f64;
    let ln_norm =
        ln_gamma_half(dof + 1) - ln_gamma_half(dof) - 0.5 * (nu * std::f64::consts::PI).ln();
    (ln_norm - 0.5 * (nu + 1.0) * (1.0 + x * x / nu).ln()).exp()
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adaptive_step(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        adaptive_step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
            + adaptive_step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
}

/// Adaptive Simpson quadrature of `f` over `[a, b]` to absolute error `tol`.
fn adaptive_simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = simpson(a, b, fa, fm, fb);
    adaptive_step(&f, a, b, fa, fm, fb, whole, tol, 52)
}

/// Two-sided p-value of a t statistic under `dof` degrees of freedom,
/// integrated to absolute error below 1e-9.
pub(crate) fn two_sided_p(t: f64, dof: usize) -> f64 {
    let tail_mass = adaptive_simpson(|x| t_density(x, dof), 0.0, t.abs(), 1e-10);
    (1.0 - 2.0 * tail_mass).clamp(0.0, 1.0)
}

/// Two-sided paired Student t-test of `a` against `b`.
///
/// `t = mean(d) sqrt(n) / sd(d)` over the differences `d = a - b`, with the
/// (n-1)-denominator standard deviation. Zero variance is not an error: all
/// differences zero gives `t = 0, p = 1`; all differences equal and nonzero
/// reports infinite t, `p = 0`, and the degenerate-variance flag.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTestResult, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::TTestInput {
            reason: format!("paired samples differ in length: {} vs {}", a.len(), b.len()),
        });
    }
    let n = a.len();
    if n < 2 {
        return Err(EvalError::TTestInput {
            reason: format!("need at least 2 pairs, got {n}"),
        });
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();

    if sd == 0.0 {
        if mean == 0.0 {
            return Ok(TTestResult { t: 0.0, p: 1.0, n, degenerate_variance: false });
        }
        return Ok(TTestResult {
            t: mean.signum() * f64::INFINITY,
            p: 0.0,
            n,
            degenerate_variance: true,
        });
    }
    let t = mean * (n as f64).sqrt() / sd;
    Ok(TTestResult { t, p: two_sided_p(t, n - 1), n, degenerate_variance: false })
}
