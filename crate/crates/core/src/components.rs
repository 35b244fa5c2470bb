//! The mixture atom and its base prior: a joint Gaussian covariate model with
//! a linear-Gaussian response, conjugate throughout.
//!
//! An atom `phi = (mu_x, Sigma_x, beta, sigma_y2)` generates a sample as
//! `x ~ N(mu_x, Sigma_x)`, `y ~ N(x' beta, sigma_y2)`. The base prior factors
//! as NIW on `(mu_x, Sigma_x)`, `beta ~ N(0, sigma_y2 V)`, and
//! `sigma_y2 ~ IG(a_y, b_y)`, so posterior draws are exact conjugate updates.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{inverse_gamma_logpdf, ln_multigamma, normal_logpdf, LN_2PI};

/// Base prior `H` for a regression component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasePrior {
    mu0: Vec<f64>,
    lambda0: f64,
    psi0: Vec<f64>, // row-major P x P
    nu0: f64,
    v: Vec<f64>, // row-major P x P
    a_y: f64,
    b_y: f64,
    dim: usize,
}

impl BasePrior {
    pub fn new(
        mu0: DVector<f64>,
        lambda0: f64,
        psi0: DMatrix<f64>,
        nu0: f64,
        v: DMatrix<f64>,
        a_y: f64,
        b_y: f64,
    ) -> Result<Self> {
        let p = mu0.len();
        if p == 0 {
            return Err(Error::Config("base prior needs at least one feature".into()));
        }
        if psi0.nrows() != p || psi0.ncols() != p || v.nrows() != p || v.ncols() != p {
            return Err(Error::Shape(format!(
                "base prior matrices must be {p}x{p} to match mu0"
            )));
        }
        if !(lambda0 > 0.0) {
            return Err(Error::Config("lambda0 must be positive".into()));
        }
        if !(nu0 > p as f64 - 1.0) {
            return Err(Error::Config(format!(
                "nu0 = {nu0} must exceed P - 1 = {}",
                p - 1
            )));
        }
        if !(a_y > 0.0) || !(b_y > 0.0) {
            return Err(Error::Config("a_y and b_y must be positive".into()));
        }
        if Cholesky::new(psi0.clone()).is_none() {
            return Err(Error::Config(
                "psi0 is not symmetric positive-definite".into(),
            ));
        }
        if Cholesky::new(v.clone()).is_none() {
            return Err(Error::Config("V is not symmetric positive-definite".into()));
        }
        Ok(Self {
            mu0: mu0.as_slice().to_vec(),
            lambda0,
            psi0: psi0.as_slice().to_vec(),
            nu0,
            v: v.as_slice().to_vec(),
            a_y,
            b_y,
            dim: p,
        })
    }

    /// Weakly-informative defaults scaled to a training design matrix
    /// (rows = samples): `mu0` the sample mean, `psi0` the sample covariance,
    /// `lambda0 = 1`, `nu0 = P + 2`, `V = I`, `a_y = b_y = 1`.
    pub fn data_driven(x: &DMatrix<f64>) -> Result<Self> {
        let n = x.nrows();
        let p = x.ncols();
        if n < 2 {
            return Err(Error::Config(
                "need at least two rows to derive a data-driven prior".into(),
            ));
        }
        let mean = x.row_mean().transpose();
        let mut cov = DMatrix::zeros(p, p);
        for r in 0..n {
            let d = x.row(r).transpose() - &mean;
            cov += &d * d.transpose();
        }
        cov /= (n - 1) as f64;
        Self::new(
            mean,
            1.0,
            cov,
            p as f64 + 2.0,
            DMatrix::identity(p, p),
            1.0,
            1.0,
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mu0(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.mu0)
    }

    pub fn lambda0(&self) -> f64 {
        self.lambda0
    }

    pub fn psi0(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.dim, self.dim, &self.psi0)
    }

    pub fn nu0(&self) -> f64 {
        self.nu0
    }

    pub fn v(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.dim, self.dim, &self.v)
    }

    pub fn a_y(&self) -> f64 {
        self.a_y
    }

    pub fn b_y(&self) -> f64 {
        self.b_y
    }
}

/// One mixture atom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionComponent {
    mu_x: Vec<f64>,
    sigma_x: Vec<f64>, // column-major P x P (symmetric, so row-major identical)
    beta: Vec<f64>,
    sigma_y2: f64,
    dim: usize,
}

impl RegressionComponent {
    pub fn new(
        mu_x: DVector<f64>,
        sigma_x: DMatrix<f64>,
        beta: DVector<f64>,
        sigma_y2: f64,
    ) -> Result<Self> {
        let p = mu_x.len();
        if sigma_x.nrows() != p || sigma_x.ncols() != p || beta.len() != p {
            return Err(Error::Shape(
                "component pieces disagree on feature dimension".into(),
            ));
        }
        if !(sigma_y2 > 0.0) || !sigma_y2.is_finite() {
            return Err(Error::Numeric("sigma_y2 must be positive and finite".into()));
        }
        if Cholesky::new(sigma_x.clone()).is_none() {
            return Err(Error::Numeric(
                "Sigma_x is not symmetric positive-definite".into(),
            ));
        }
        Ok(Self {
            mu_x: mu_x.as_slice().to_vec(),
            sigma_x: sigma_x.as_slice().to_vec(),
            beta: beta.as_slice().to_vec(),
            sigma_y2,
            dim: p,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mu_x(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.mu_x)
    }

    pub fn sigma_x(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.dim, self.dim, &self.sigma_x)
    }

    pub fn beta(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.beta)
    }

    pub fn sigma_y2(&self) -> f64 {
        self.sigma_y2
    }

    /// Mean response `x' beta`.
    pub fn predict_mean(&self, x: &DVector<f64>) -> f64 {
        x.dot(&self.beta())
    }

    /// Precomputed Cholesky of `Sigma_x` for repeated density evaluation.
    pub fn likelihood_cache(&self) -> LikelihoodCache {
        let chol = Cholesky::new(self.sigma_x())
            .expect("Sigma_x validated SPD at construction");
        let ln_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        LikelihoodCache { chol, ln_det }
    }
}

/// Cholesky factor and log determinant of a component's `Sigma_x`.
#[derive(Debug, Clone)]
pub struct LikelihoodCache {
    chol: Cholesky<f64, Dyn>,
    ln_det: f64,
}

/// One labeled observation.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub x: DVector<f64>,
    pub y: f64,
}

impl LabeledSample {
    pub fn new(x: DVector<f64>, y: f64) -> Result<Self> {
        if x.iter().any(|v| !v.is_finite()) || !y.is_finite() {
            return Err(Error::Input("sample entries must be finite".into()));
        }
        Ok(Self { x, y })
    }
}

fn check_dim(phi: &RegressionComponent, x: &DVector<f64>) -> Result<()> {
    if x.len() != phi.dim() {
        return Err(Error::Shape(format!(
            "x has length {}, component expects {}",
            x.len(),
            phi.dim()
        )));
    }
    Ok(())
}

/// Log density of the covariate part, `log N(x; mu_x, Sigma_x)`.
pub fn predictive_log_density_x(phi: &RegressionComponent, x: &DVector<f64>) -> Result<f64> {
    check_dim(phi, x)?;
    Ok(log_density_x_cached(phi, &phi.likelihood_cache(), x))
}

/// Covariate log density with a precomputed cache.
pub fn log_density_x_cached(
    phi: &RegressionComponent,
    cache: &LikelihoodCache,
    x: &DVector<f64>,
) -> f64 {
    let diff = x - phi.mu_x();
    let z = cache.chol.l_dirty().solve_lower_triangular(&diff).expect(
        "Cholesky factor has positive diagonal",
    );
    -0.5 * (phi.dim() as f64 * LN_2PI + cache.ln_det + z.dot(&z))
}

/// Joint log likelihood `log N(x; mu_x, Sigma_x) + log N(y; x' beta, sigma_y2)`.
pub fn log_likelihood(phi: &RegressionComponent, s: &LabeledSample) -> Result<f64> {
    check_dim(phi, &s.x)?;
    Ok(log_likelihood_cached(phi, &phi.likelihood_cache(), s))
}

/// Joint log likelihood with a precomputed cache.
pub fn log_likelihood_cached(
    phi: &RegressionComponent,
    cache: &LikelihoodCache,
    s: &LabeledSample,
) -> f64 {
    log_density_x_cached(phi, cache, &s.x)
        + normal_logpdf(s.y, s.x.dot(&phi.beta()), phi.sigma_y2())
}

/// Normal-inverse-Wishart parameters for `(mu_x, Sigma_x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NiwParams {
    pub mu: DVector<f64>,
    pub lambda: f64,
    pub psi: DMatrix<f64>,
    pub nu: f64,
}

/// Normal-inverse-gamma parameters for `(beta, sigma_y2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlrParams {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub a: f64,
    pub b: f64,
}

fn prior_niw(prior: &BasePrior) -> NiwParams {
    NiwParams {
        mu: prior.mu0(),
        lambda: prior.lambda0(),
        psi: prior.psi0(),
        nu: prior.nu0(),
    }
}

fn prior_blr(prior: &BasePrior) -> BlrParams {
    BlrParams {
        mean: DVector::zeros(prior.dim()),
        cov: prior.v(),
        a: prior.a_y(),
        b: prior.b_y(),
    }
}

/// Conjugate NIW update from the covariate vectors.
pub fn niw_posterior(prior: &BasePrior, xs: &[DVector<f64>]) -> NiwParams {
    let n = xs.len();
    if n == 0 {
        return prior_niw(prior);
    }
    let nf = n as f64;
    let p = prior.dim();
    let mut xbar = DVector::zeros(p);
    for x in xs {
        xbar += x;
    }
    xbar /= nf;
    let mut scatter = DMatrix::zeros(p, p);
    for x in xs {
        let d = x - &xbar;
        scatter += &d * d.transpose();
    }
    let lambda0 = prior.lambda0();
    let lambda = lambda0 + nf;
    let mu = (prior.mu0() * lambda0 + &xbar * nf) / lambda;
    let dev = xbar - prior.mu0();
    let psi = prior.psi0() + scatter + (&dev * dev.transpose()) * (lambda0 * nf / lambda);
    NiwParams {
        mu,
        lambda,
        psi,
        nu: prior.nu0() + nf,
    }
}

/// Conjugate normal-inverse-gamma update for the regression of `y` on `x`.
pub fn blr_posterior(prior: &BasePrior, data: &[LabeledSample]) -> Result<BlrParams> {
    if data.is_empty() {
        return Ok(prior_blr(prior));
    }
    let p = prior.dim();
    let v_inv = Cholesky::new(prior.v())
        .ok_or_else(|| Error::Numeric("prior V lost positive-definiteness".into()))?
        .inverse();
    let mut precision = v_inv;
    let mut xty = DVector::zeros(p);
    let mut yty = 0.0;
    for s in data {
        precision += &s.x * s.x.transpose();
        xty += &s.x * s.y;
        yty += s.y * s.y;
    }
    let cov = Cholesky::new(precision)
        .ok_or_else(|| Error::Numeric("regression posterior precision not SPD".into()))?
        .inverse();
    let mean = &cov * &xty;
    let a = prior.a_y() + data.len() as f64 / 2.0;
    let b = prior.b_y() + 0.5 * (yty - mean.dot(&xty));
    if !(b > 0.0) {
        return Err(Error::Numeric(
            "regression posterior scale collapsed to a non-positive value".into(),
        ));
    }
    Ok(BlrParams { mean, cov, a, b })
}

fn bartlett_lower<R: Rng>(p: usize, nu: f64, rng: &mut R) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(p, p);
    for i in 0..p {
        let chi = ChiSquared::new(nu - i as f64).expect("nu > P - 1 validated");
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = StandardNormal.sample(rng);
        }
    }
    a
}

fn sample_inverse_wishart<R: Rng>(
    psi: &DMatrix<f64>,
    nu: f64,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let p = psi.nrows();
    let psi_inv = Cholesky::new(psi.clone())
        .ok_or_else(|| Error::Numeric("NIW scale matrix not SPD".into()))?
        .inverse();
    let l = Cholesky::new(psi_inv)
        .ok_or_else(|| Error::Numeric("inverse of NIW scale not SPD".into()))?
        .l();
    let m = l * bartlett_lower(p, nu, rng);
    let m_inv = m
        .solve_lower_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| Error::Numeric("singular Bartlett factor".into()))?;
    let sigma = m_inv.transpose() * &m_inv;
    // Symmetrize away round-off so downstream Cholesky never sees drift.
    Ok((&sigma + sigma.transpose()) * 0.5)
}

fn standard_normal_vector<R: Rng>(p: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(p, |_, _| StandardNormal.sample(rng))
}

fn draw_component<R: Rng>(
    niw: &NiwParams,
    blr: &BlrParams,
    rng: &mut R,
) -> Result<RegressionComponent> {
    let p = niw.mu.len();
    let sigma_x = sample_inverse_wishart(&niw.psi, niw.nu, rng)?;
    let chol_x = Cholesky::new(sigma_x.clone())
        .ok_or_else(|| Error::Numeric("sampled Sigma_x not SPD".into()))?;
    let mu_x = &niw.mu + chol_x.l() * standard_normal_vector(p, rng) / niw.lambda.sqrt();

    let gamma = Gamma::new(blr.a, 1.0 / blr.b)
        .map_err(|e| Error::Numeric(format!("invalid inverse-gamma parameters: {e}")))?;
    let sigma_y2 = 1.0 / gamma.sample(rng);
    let chol_v = Cholesky::new(blr.cov.clone())
        .ok_or_else(|| Error::Numeric("regression covariance not SPD".into()))?;
    let beta = &blr.mean + chol_v.l() * standard_normal_vector(p, rng) * sigma_y2.sqrt();

    RegressionComponent::new(mu_x, sigma_x, beta, sigma_y2)
}

/// Draw an atom from the base prior.
pub fn sample_prior<R: Rng>(prior: &BasePrior, rng: &mut R) -> Result<RegressionComponent> {
    draw_component(&prior_niw(prior), &prior_blr(prior), rng)
}

/// Draw an atom from the exact conjugate posterior given member samples.
/// With empty data this is a draw from the prior.
pub fn posterior_draw<R: Rng>(
    prior: &BasePrior,
    data: &[LabeledSample],
    rng: &mut R,
) -> Result<RegressionComponent> {
    let xs: Vec<DVector<f64>> = data.iter().map(|s| s.x.clone()).collect();
    let niw = niw_posterior(prior, &xs);
    let blr = blr_posterior(prior, data)?;
    draw_component(&niw, &blr, rng)
}

/// Log density of an atom under the base prior (used by the joint-density
/// diagnostic).
pub fn log_base_density(prior: &BasePrior, phi: &RegressionComponent) -> Result<f64> {
    let p = prior.dim() as f64;
    if phi.dim() != prior.dim() {
        return Err(Error::Shape("component does not match prior dimension".into()));
    }
    let sigma = phi.sigma_x();
    let chol_sigma = Cholesky::new(sigma.clone())
        .ok_or_else(|| Error::Numeric("component Sigma_x not SPD".into()))?;
    let ln_det_sigma = 2.0 * chol_sigma.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let sigma_inv = chol_sigma.inverse();

    let psi = prior.psi0();
    let chol_psi = Cholesky::new(psi.clone())
        .ok_or_else(|| Error::Numeric("prior psi0 not SPD".into()))?;
    let ln_det_psi = 2.0 * chol_psi.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let nu = prior.nu0();

    // Inverse-Wishart term.
    let mut lp = 0.5 * nu * ln_det_psi - 0.5 * nu * p * 2f64.ln() - ln_multigamma(prior.dim(), nu / 2.0)
        - 0.5 * (nu + p + 1.0) * ln_det_sigma
        - 0.5 * (&psi * &sigma_inv).trace();

    // mu_x | Sigma_x ~ N(mu0, Sigma_x / lambda0).
    let d = phi.mu_x() - prior.mu0();
    let quad = (&sigma_inv * &d).dot(&d) * prior.lambda0();
    lp += -0.5 * (p * LN_2PI - p * prior.lambda0().ln() + ln_det_sigma) - 0.5 * quad;

    // sigma_y2 ~ IG(a_y, b_y).
    lp += inverse_gamma_logpdf(phi.sigma_y2(), prior.a_y(), prior.b_y());

    // beta | sigma_y2 ~ N(0, sigma_y2 V).
    let v = prior.v();
    let chol_v = Cholesky::new(v.clone())
        .ok_or_else(|| Error::Numeric("prior V not SPD".into()))?;
    let ln_det_v = 2.0 * chol_v.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let beta = phi.beta();
    let quad_b = chol_v.solve(&beta).dot(&beta) / phi.sigma_y2();
    lp += -0.5 * (p * LN_2PI + p * phi.sigma_y2().ln() + ln_det_v) - 0.5 * quad_b;

    Ok(lp)
}
