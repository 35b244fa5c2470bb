//! Shared numeric helpers: stabilized reductions and standard log densities.

use statrs::function::gamma::ln_gamma;

pub const LN_2PI: f64 = 1.8378770664093453;

/// `log(sum(exp(v)))` with max subtraction. Returns `-inf` for an empty slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Univariate normal log density with variance parameterization.
pub fn normal_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (LN_2PI + var.ln()) - 0.5 * d * d / var
}

/// Inverse-gamma log density, shape `a`, scale `b`.
pub fn inverse_gamma_logpdf(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    a * b.ln() - ln_gamma(a) - (a + 1.0) * x.ln() - b / x
}

/// Log of the multivariate gamma function `Gamma_p(a)`.
pub fn ln_multigamma(p: usize, a: f64) -> f64 {
    let pf = p as f64;
    let mut out = pf * (pf - 1.0) / 4.0 * std::f64::consts::PI.ln();
    for i in 1..=p {
        out += ln_gamma(a + (1.0 - i as f64) / 2.0);
    }
    out
}

pub use statrs::function::gamma::ln_gamma as lgamma;
