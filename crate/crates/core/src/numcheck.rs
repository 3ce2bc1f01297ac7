//! Numerical checking utilities: central finite differences and small
//! statistics helpers shared by the test suites.

/// Central finite-difference gradient of `f` at `x` with step `h`.
pub fn finite_diff(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut xs = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = xs[i];
        xs[i] = orig + h;
        let fp = f(&xs);
        xs[i] = orig - h;
        let fm = f(&xs);
        xs[i] = orig;
        out.push((fp - fm) / (2.0 * h));
    }
    out
}

/// Central finite difference of `f` along a single coordinate.
pub fn finite_diff_at(x: &[f64], i: usize, h: f64, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let mut xs = x.to_vec();
    let orig = xs[i];
    xs[i] = orig + h;
    let fp = f(&xs);
    xs[i] = orig - h;
    let fm = f(&xs);
    (fp - fm) / (2.0 * h)
}

/// Relative error with an absolute floor of one: `|a - b| / max(1, |a|, |b|)`.
/// Behaves like relative error for large magnitudes and absolute error near
/// zero, which is the usual gradient-check convention.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1.0_f64.max(a.abs()).max(b.abs())
}

/// Sample mean.
pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator). Zero for fewer than two
/// samples.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64;
    var.sqrt()
}

/// Half-width of a 95% normal-approximation confidence interval for the mean.
pub fn ci95_mean(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    1.96 * sample_std(xs) / (xs.len() as f64).sqrt()
}

/// Half-width of a 95% normal-approximation confidence interval for a
/// proportion `p` estimated from `n` trials.
pub fn ci95_proportion(p: f64, n: usize) -> f64 {
    if n == 0 {
        return f64::NAN;
    }
    1.96 * (p * (1.0 - p) / n as f64).sqrt()
}
