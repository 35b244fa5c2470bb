//! The multilinear dependent-DP prior: per-factor latent vectors, the softmax
//! weight tensor they induce over basis measures, hyperpriors, and a
//! truncated stick-breaking simulator for the implied random measures.
//!
//! Each group's mixing weight over basis `(i_1,...,i_N)` is
//! `softmax` of the multiplicative interaction `prod_n u^{n,j_n}_{i_n}`,
//! computed with max subtraction so finite inputs always yield finite
//! weights.

use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::multiindex::{enumerate_groups, BasisIndex, FactorConfig, GroupIndex};
use crate::stats::log_sum_exp;

/// Per-factor latent vectors `u^{n,j_n}` (length `I_n`) plus the per-group
/// scales `sigma_u^n` they are drawn with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentFactors {
    u: Vec<Vec<Vec<f64>>>,
    sigma_u: Vec<f64>,
}

impl LatentFactors {
    pub fn new(u: Vec<Vec<Vec<f64>>>, sigma_u: Vec<f64>, cfg: &FactorConfig) -> Result<Self> {
        if u.len() != cfg.n_groups() || sigma_u.len() != cfg.n_groups() {
            return Err(Error::Shape(format!(
                "latent factors cover {} groups, config has {}",
                u.len(),
                cfg.n_groups()
            )));
        }
        for (n, vectors) in u.iter().enumerate() {
            if vectors.len() != cfg.factors_per_group()[n] {
                return Err(Error::Shape(format!(
                    "group {} has {} latent vectors, expected {}",
                    n + 1,
                    vectors.len(),
                    cfg.factors_per_group()[n]
                )));
            }
            for v in vectors {
                if v.len() != cfg.bases_per_group()[n] {
                    return Err(Error::Shape(format!(
                        "latent vector in group {} has length {}, expected {}",
                        n + 1,
                        v.len(),
                        cfg.bases_per_group()[n]
                    )));
                }
            }
        }
        if sigma_u.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::Config("sigma_u must be positive and finite".into()));
        }
        Ok(Self { u, sigma_u })
    }

    /// The latent vector for factor `j` (1-based) of group `n` (1-based).
    pub fn vector(&self, n: usize, j: usize) -> &[f64] {
        &self.u[n - 1][j - 1]
    }

    pub fn vector_mut(&mut self, n: usize, j: usize) -> &mut Vec<f64> {
        &mut self.u[n - 1][j - 1]
    }

    pub fn sigma_u(&self, n: usize) -> f64 {
        self.sigma_u[n - 1]
    }

    pub fn set_sigma_u(&mut self, n: usize, sigma: f64) {
        self.sigma_u[n - 1] = sigma;
    }

    pub fn raw(&self) -> &Vec<Vec<Vec<f64>>> {
        &self.u
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigma_u
    }

    /// Sum of squared entries in group `n` (1-based) and their count,
    /// the sufficient statistics for the scale update.
    pub fn group_sq_stats(&self, n: usize) -> (f64, usize) {
        let vs = &self.u[n - 1];
        let ssq = vs.iter().flatten().map(|x| x * x).sum();
        let count = vs.iter().map(|v| v.len()).sum();
        (ssq, count)
    }
}

/// Prior hyperparameters: DP concentration, the scale hyperprior for
/// `log(sigma_u^2)`, and the optional heterogeneous per-basis concentrations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    alpha: f64,
    sigma0: f64,
    heterogeneous: bool,
    per_basis_alpha: Option<Vec<f64>>,
}

impl Hyperparams {
    pub fn new(alpha: f64, sigma0: f64) -> Result<Self> {
        Self::with_heterogeneous(alpha, sigma0, false, None)
    }

    pub fn with_heterogeneous(
        alpha: f64,
        sigma0: f64,
        heterogeneous: bool,
        per_basis_alpha: Option<Vec<f64>>,
    ) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::Config("alpha must be positive and finite".into()));
        }
        if !(sigma0 > 0.0) || !sigma0.is_finite() {
            return Err(Error::Config("sigma0 must be positive and finite".into()));
        }
        if let Some(map) = &per_basis_alpha {
            if map.iter().any(|&a| !(a > 0.0) || !a.is_finite()) {
                return Err(Error::Config(
                    "per-basis alpha entries must be positive and finite".into(),
                ));
            }
        }
        if per_basis_alpha.is_some() && !heterogeneous {
            return Err(Error::Config(
                "per-basis alpha supplied without the heterogeneous flag".into(),
            ));
        }
        Ok(Self {
            alpha,
            sigma0,
            heterogeneous,
            per_basis_alpha,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn sigma0(&self) -> f64 {
        self.sigma0
    }

    pub fn heterogeneous(&self) -> bool {
        self.heterogeneous
    }

    /// Concentration for the basis with the given flat index.
    pub fn alpha_for(&self, basis_flat: usize) -> f64 {
        match (&self.per_basis_alpha, self.heterogeneous) {
            (Some(map), true) => map.get(basis_flat).copied().unwrap_or(self.alpha),
            _ => self.alpha,
        }
    }

    /// Length of the per-basis concentration map, when one is active.
    pub fn per_basis_alpha_len(&self) -> Option<usize> {
        match (&self.per_basis_alpha, self.heterogeneous) {
            (Some(map), true) => Some(map.len()),
            _ => None,
        }
    }
}

/// One group's normalized mixing weights over all basis measures,
/// stored flat in canonical basis order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightTensor {
    group: GroupIndex,
    w: Vec<f64>,
}

impl WeightTensor {
    pub fn group(&self) -> &GroupIndex {
        &self.group
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn weight(&self, basis: &BasisIndex, cfg: &FactorConfig) -> f64 {
        self.w[basis.flat_index(cfg)]
    }
}

/// The multiplicative-interaction logits `t[i_1..i_N] = prod_n u^{n,j_n}_{i_n}`
/// for one group, flat in canonical basis order.
pub fn interaction_logits(
    latents: &LatentFactors,
    group: &GroupIndex,
    cfg: &FactorConfig,
) -> Result<Vec<f64>> {
    let n_groups = cfg.n_groups();
    let selected: Vec<&[f64]> = (1..=n_groups)
        .map(|n| latents.vector(n, group.indices()[n - 1]))
        .collect();
    for v in &selected {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric(
                "latent factor entries must be finite".into(),
            ));
        }
    }
    let dims = cfg.bases_per_group();
    let total = cfg.n_bases();
    let mut logits = Vec::with_capacity(total);
    let mut idx = vec![0usize; n_groups];
    for _ in 0..total {
        let mut t = 1.0;
        for (n, &i) in idx.iter().enumerate() {
            t *= selected[n][i];
        }
        logits.push(t);
        for n in (0..n_groups).rev() {
            idx[n] += 1;
            if idx[n] < dims[n] {
                break;
            }
            idx[n] = 0;
        }
    }
    Ok(logits)
}

/// Log of the softmax weights for one group, log-sum-exp stabilized.
pub fn log_weights(
    latents: &LatentFactors,
    group: &GroupIndex,
    cfg: &FactorConfig,
) -> Result<Vec<f64>> {
    let logits = interaction_logits(latents, group, cfg)?;
    let lse = log_sum_exp(&logits);
    Ok(logits.into_iter().map(|t| t - lse).collect())
}

/// The softmax weight tensor for one group.
pub fn compute_weights(
    latents: &LatentFactors,
    group: &GroupIndex,
    cfg: &FactorConfig,
) -> Result<WeightTensor> {
    let logw = log_weights(latents, group, cfg)?;
    let mut w: Vec<f64> = logw.iter().map(|lw| lw.exp()).collect();
    let sum: f64 = w.iter().sum();
    for v in &mut w {
        *v /= sum;
    }
    Ok(WeightTensor {
        group: group.clone(),
        w,
    })
}

/// `sum_i w_i^2`, the concentration statistic governing how far a group's
/// measure can drift from the shared mean; lies in `[1/I, 1]`.
pub fn weight_concentration(wt: &WeightTensor) -> f64 {
    wt.w.iter().map(|w| w * w).sum()
}

/// Draw latent factors from the hierarchical prior:
/// `log(sigma_u^2) ~ N(0, sigma0^2)`, then entries i.i.d. `N(0, sigma_u^2)`.
pub fn sample_latent_factors<R: Rng>(
    hyper: &Hyperparams,
    cfg: &FactorConfig,
    rng: &mut R,
) -> LatentFactors {
    let sigmas: Vec<f64> = (0..cfg.n_groups())
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            (hyper.sigma0() * z / 2.0).exp()
        })
        .collect();
    sample_latent_factors_with_sigma(&sigmas, cfg, rng)
}

/// Draw latent entries with the per-group scales fixed.
pub fn sample_latent_factors_with_sigma<R: Rng>(
    sigma_u: &[f64],
    cfg: &FactorConfig,
    rng: &mut R,
) -> LatentFactors {
    let u = (0..cfg.n_groups())
        .map(|n| {
            (0..cfg.factors_per_group()[n])
                .map(|_| {
                    (0..cfg.bases_per_group()[n])
                        .map(|_| {
                            let z: f64 = StandardNormal.sample(rng);
                            sigma_u[n] * z
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    LatentFactors {
        u,
        sigma_u: sigma_u.to_vec(),
    }
}

/// A truncated stick-breaking draw: `K` atoms, their weights, and the
/// unallocated residual mass `prod_k (1 - v_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedMeasure<A> {
    pub atoms: Vec<A>,
    pub weights: Vec<f64>,
    pub truncation_level: usize,
    pub residual: f64,
}

/// Stick-breaking weights from given stick fractions:
/// `pi_k = v_k * prod_{l<k} (1 - v_l)`, plus the residual mass.
pub fn stick_weights_from_fractions(fractions: &[f64]) -> (Vec<f64>, f64) {
    let mut remaining = 1.0;
    let mut weights = Vec::with_capacity(fractions.len());
    for &v in fractions {
        weights.push(v * remaining);
        remaining *= 1.0 - v;
    }
    (weights, remaining)
}

/// Truncated stick-breaking draw with `v_k ~ Beta(1, alpha)` and atoms
/// drawn i.i.d. from `base`.
pub fn stick_breaking_draw<A, R: Rng>(
    alpha: f64,
    mut base: impl FnMut(&mut R) -> A,
    truncation: usize,
    rng: &mut R,
) -> Result<TruncatedMeasure<A>> {
    if !(alpha > 0.0) {
        return Err(Error::Config("stick-breaking alpha must be positive".into()));
    }
    if truncation == 0 {
        return Err(Error::Config("truncation level must be at least 1".into()));
    }
    let beta = Beta::new(1.0, alpha)
        .map_err(|e| Error::Config(format!("invalid Beta(1, {alpha}): {e}")))?;
    let fractions: Vec<f64> = (0..truncation).map(|_| beta.sample(rng)).collect();
    let (weights, residual) = stick_weights_from_fractions(&fractions);
    let atoms = (0..truncation).map(|_| base(rng)).collect();
    Ok(TruncatedMeasure {
        atoms,
        weights,
        truncation_level: truncation,
        residual,
    })
}

/// A group-level measure assembled from weighted basis draws: atoms from all
/// bases with weights `w_basis * pi_k`, renormalized to a probability vector.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedMeasure<A> {
    pub atoms: Vec<A>,
    pub weights: Vec<f64>,
}

/// Draw all `I` basis measures by truncated stick-breaking and return, per
/// group in canonical order, the softmax-weighted combination as a single
/// atomic measure over the union of atoms.
///
/// Truncation residual is renormalized away here (and logged); inference
/// never truncates, so this only affects the simulator.
pub fn simulate_dependent_measures<A: Clone, R: Rng>(
    latents: &LatentFactors,
    hyper: &Hyperparams,
    cfg: &FactorConfig,
    mut base: impl FnMut(usize, &mut R) -> A,
    truncation: usize,
    rng: &mut R,
) -> Result<Vec<MixedMeasure<A>>> {
    let n_bases = cfg.n_bases();
    let mut basis_draws = Vec::with_capacity(n_bases);
    for b in 0..n_bases {
        let draw = stick_breaking_draw(hyper.alpha_for(b), |r| base(b, r), truncation, rng)?;
        if draw.residual > 1e-6 {
            log::debug!(
                "basis {b}: renormalizing away residual stick mass {:.3e}",
                draw.residual
            );
        }
        basis_draws.push(draw);
    }

    let mut out = Vec::with_capacity(cfg.n_sample_sets());
    for group in enumerate_groups(cfg) {
        let wt = compute_weights(latents, &group, cfg)?;
        let mut atoms = Vec::new();
        let mut weights = Vec::new();
        for (b, draw) in basis_draws.iter().enumerate() {
            let wb = wt.weights()[b];
            for (atom, &pi) in draw.atoms.iter().zip(&draw.weights) {
                atoms.push(atom.clone());
                weights.push(wb * pi);
            }
        }
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        out.push(MixedMeasure { atoms, weights });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(j: Vec<usize>, i: Vec<usize>) -> FactorConfig {
        FactorConfig::new(j, i).unwrap()
    }

    fn group(ix: Vec<usize>, c: &FactorConfig) -> GroupIndex {
        GroupIndex::new(ix, c).unwrap()
    }

    /// Reference softmax used as an independent oracle: plain exponentials
    /// over optionally shifted logits, no max subtraction.
    fn reference_softmax(logits: &[f64], shift: f64) -> Vec<f64> {
        let exps: Vec<f64> = logits.iter().map(|t| (t + shift).exp()).collect();
        let sum: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / sum).collect()
    }

    #[test]
    fn zero_latents_give_uniform_weights() {
        let c = cfg(vec![1, 1], vec![2, 2]);
        let latents =
            LatentFactors::new(vec![vec![vec![0.0; 2]], vec![vec![0.0; 2]]], vec![1.0, 1.0], &c)
                .unwrap();
        let wt = compute_weights(&latents, &group(vec![1, 1], &c), &c).unwrap();
        for &w in wt.weights() {
            assert!((w - 0.25).abs() < 1e-15);
        }
        for &lw in &log_weights(&latents, &group(vec![1, 1], &c), &c).unwrap() {
            assert!((lw - 0.25f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn degenerate_config_pins_weight_at_one() {
        let c = cfg(vec![3], vec![1]);
        let latents =
            LatentFactors::new(vec![vec![vec![2.5], vec![-1.0], vec![0.3]]], vec![1.0], &c)
                .unwrap();
        for g in enumerate_groups(&c) {
            let wt = compute_weights(&latents, &g, &c).unwrap();
            assert_eq!(wt.weights(), &[1.0]);
            assert_eq!(log_weights(&latents, &g, &c).unwrap(), vec![0.0]);
        }
    }

    #[test]
    fn softmax_oracle_two_by_two() {
        let c = cfg(vec![1, 1], vec![2, 2]);
        let latents = LatentFactors::new(
            vec![vec![vec![1.0, 0.0]], vec![vec![1.0, 0.0]]],
            vec![1.0, 1.0],
            &c,
        )
        .unwrap();
        let wt = compute_weights(&latents, &group(vec![1, 1], &c), &c).unwrap();
        // Direct evaluation oracle: logits are (1, 0, 0, 0).
        let e = 1f64.exp();
        let expected = [e / (e + 3.0), 1.0 / (e + 3.0), 1.0 / (e + 3.0), 1.0 / (e + 3.0)];
        for (got, want) in wt.weights().iter().zip(expected) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!((wt.weights()[0] - 0.47537).abs() < 5e-6);
        assert!((wt.weights()[1] - 0.17488).abs() < 5e-6);

        let logw = log_weights(&latents, &group(vec![1, 1], &c), &c).unwrap();
        for (lw, want) in logw.iter().zip(expected) {
            assert!((lw.exp() - want).abs() < 1e-12);
        }

        let conc = weight_concentration(&wt);
        let expected_conc = expected[0].powi(2) + 3.0 * expected[1].powi(2);
        assert!((conc - expected_conc).abs() < 1e-12);
        assert!((conc - 0.31772).abs() < 5e-5);
    }

    #[test]
    fn weight_concentration_extremes() {
        let c = cfg(vec![1, 1], vec![2, 2]);
        let uniform = WeightTensor {
            group: group(vec![1, 1], &c),
            w: vec![0.25; 4],
        };
        assert!((weight_concentration(&uniform) - 0.25).abs() < 1e-15);
        let onehot = WeightTensor {
            group: group(vec![1, 1], &c),
            w: vec![1.0, 0.0, 0.0, 0.0],
        };
        assert!((weight_concentration(&onehot) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn non_finite_latents_rejected() {
        let c = cfg(vec![1], vec![2]);
        let latents =
            LatentFactors::new(vec![vec![vec![f64::NAN, 0.0]]], vec![1.0], &c).unwrap();
        assert!(matches!(
            compute_weights(&latents, &group(vec![1], &c), &c),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn large_logits_stay_finite() {
        let c = cfg(vec![1, 1], vec![2, 2]);
        let latents = LatentFactors::new(
            vec![vec![vec![40.0, 0.0]], vec![vec![40.0, 0.0]]],
            vec![1.0, 1.0],
            &c,
        )
        .unwrap();
        // Raw formula would need exp(1600).
        let wt = compute_weights(&latents, &group(vec![1, 1], &c), &c).unwrap();
        assert!(wt.weights().iter().all(|w| w.is_finite()));
        assert!((wt.weights()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sigma0_limit_gives_unit_scale() {
        let c = cfg(vec![2], vec![2]);
        let hyper = Hyperparams::new(1.0, 1e-300).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let latents = sample_latent_factors(&hyper, &c, &mut rng);
        assert_eq!(latents.sigma_u(1), 1.0);
    }

    #[test]
    fn latent_sampling_deterministic() {
        let c = cfg(vec![2, 3], vec![2, 2]);
        let hyper = Hyperparams::new(1.0, 1.0).unwrap();
        let a = sample_latent_factors(&hyper, &c, &mut ChaCha8Rng::seed_from_u64(11));
        let b = sample_latent_factors(&hyper, &c, &mut ChaCha8Rng::seed_from_u64(11));
        assert_eq!(a, b);
    }

    #[test]
    fn latent_entries_match_scale_moment() {
        // 1e5 draws with sigma_u fixed at 2: sample variance near 4.
        let c = cfg(vec![1], vec![100_000]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let latents = sample_latent_factors_with_sigma(&[2.0], &c, &mut rng);
        let v = latents.vector(1, 1);
        let n = v.len() as f64;
        let mean: f64 = v.iter().sum::<f64>() / n;
        let var: f64 = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        // SE of the sample variance of a normal: sigma^2 * sqrt(2/(n-1)).
        let se = 4.0 * (2.0 / (n - 1.0)).sqrt();
        assert!(
            (var - 4.0).abs() < 3.0 * se,
            "sample variance {var} not within 3 SE of 4"
        );
    }

    #[test]
    fn stick_weights_single_fraction() {
        let (w, residual) = stick_weights_from_fractions(&[0.3]);
        assert_eq!(w, vec![0.3]);
        assert!((residual - 0.7).abs() < 1e-15);
    }

    #[test]
    fn stick_breaking_first_weight_mean() {
        // alpha = 1: v_1 ~ Beta(1,1) = Uniform, so E[pi_1] = 0.5.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 10_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let m = stick_breaking_draw(1.0, |r: &mut ChaCha8Rng| r.random::<f64>(), 500, &mut rng)
                .unwrap();
            sum += m.weights[0];
        }
        let mean = sum / n as f64;
        // sd of Uniform(0,1) is 1/sqrt(12).
        let se = (1.0 / 12f64).sqrt() / (n as f64).sqrt();
        assert!((mean - 0.5).abs() < 3.0 * se, "mean pi_1 = {mean}");
    }

    #[test]
    fn stick_weights_decreasing_in_expectation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let k = 8;
        let n = 10_000;
        let mut sums = vec![0.0; k];
        for _ in 0..n {
            let m =
                stick_breaking_draw(1.0, |r: &mut ChaCha8Rng| r.random::<f64>(), k, &mut rng)
                    .unwrap();
            for (s, w) in sums.iter_mut().zip(&m.weights) {
                *s += w;
            }
        }
        for pair in sums.windows(2) {
            assert!(pair[0] > pair[1], "empirical stick means not decreasing");
        }
    }

    #[test]
    fn degenerate_simulation_identical_across_groups() {
        let c = cfg(vec![2, 2], vec![1, 1]);
        let hyper = Hyperparams::new(1.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let latents = sample_latent_factors(&hyper, &c, &mut rng);
        let measures = simulate_dependent_measures(
            &latents,
            &hyper,
            &c,
            |_, r: &mut ChaCha8Rng| {
                let z: f64 = StandardNormal.sample(r);
                z
            },
            50,
            &mut rng,
        )
        .unwrap();
        assert_eq!(measures.len(), 4);
        for m in &measures[1..] {
            assert_eq!(m, &measures[0]);
        }
    }

    #[test]
    fn simulated_measure_weights_sum_to_one() {
        let c = cfg(vec![2, 2], vec![2, 2]);
        let hyper = Hyperparams::new(1.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let latents = sample_latent_factors(&hyper, &c, &mut rng);
        let measures = simulate_dependent_measures(
            &latents,
            &hyper,
            &c,
            |_, r: &mut ChaCha8Rng| {
                let z: f64 = StandardNormal.sample(r);
                z
            },
            60,
            &mut rng,
        )
        .unwrap();
        for m in &measures {
            let total: f64 = m.weights.iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_measure_matches_base_probability() {
        // Moment identity E{G(B)|U} = H(B) on B = (-inf, 0], H standard
        // normal, estimated over 1000 simulations with U fixed.
        let c = cfg(vec![1, 1], vec![2, 2]);
        let hyper = Hyperparams::new(1.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let latents = sample_latent_factors(&hyper, &c, &mut rng);
        let n = 1000;
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            let measures = simulate_dependent_measures(
                &latents,
                &hyper,
                &c,
                |_, r: &mut ChaCha8Rng| {
                    let z: f64 = StandardNormal.sample(r);
                    z
                },
                60,
                &mut rng,
            )
            .unwrap();
            let g = &measures[0];
            let mass: f64 = g
                .atoms
                .iter()
                .zip(&g.weights)
                .filter(|(a, _)| **a <= 0.0)
                .map(|(_, w)| w)
                .sum();
            values.push(mass);
        }
        let mean: f64 = values.iter().sum::<f64>() / n as f64;
        let var: f64 =
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let se = (var / n as f64).sqrt();
        assert!((mean - 0.5).abs() < 3.0 * se, "mean {mean}, se {se}");
    }

    #[test]
    fn heterogeneous_alpha_lookup() {
        let h = Hyperparams::with_heterogeneous(1.0, 1.0, true, Some(vec![0.5, 2.0])).unwrap();
        assert_eq!(h.alpha_for(0), 0.5);
        assert_eq!(h.alpha_for(1), 2.0);
        let hom = Hyperparams::new(1.0, 1.0).unwrap();
        assert_eq!(hom.alpha_for(1), 1.0);
        assert!(Hyperparams::with_heterogeneous(1.0, 1.0, false, Some(vec![0.5])).is_err());
    }

    proptest! {
        #[test]
        fn weights_form_simplex(
            seed in 0u64..1000,
            n_groups in 1usize..4,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dims_j: Vec<usize> = (0..n_groups).map(|_| rng.random_range(1..=4)).collect();
            let dims_i: Vec<usize> = (0..n_groups).map(|_| rng.random_range(1..=4)).collect();
            let c = cfg(dims_j, dims_i);
            let hyper = Hyperparams::new(1.0, 1.0).unwrap();
            let latents = sample_latent_factors(&hyper, &c, &mut rng);
            for g in enumerate_groups(&c) {
                let wt = compute_weights(&latents, &g, &c).unwrap();
                let sum: f64 = wt.weights().iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-12);
                prop_assert!(wt.weights().iter().all(|&w| w >= 0.0));
            }
        }

        #[test]
        fn softmax_shift_invariance(seed in 0u64..1000, shift in -500.0f64..500.0) {
            let c = cfg(vec![2, 2], vec![3, 2]);
            let hyper = Hyperparams::new(1.0, 1.0).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let latents = sample_latent_factors(&hyper, &c, &mut rng);
            for g in enumerate_groups(&c) {
                let logits = interaction_logits(&latents, &g, &c).unwrap();
                let shifted = reference_softmax(&logits, shift);
                let wt = compute_weights(&latents, &g, &c).unwrap();
                for (a, b) in wt.weights().iter().zip(&shifted) {
                    prop_assert!((a - b).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn stick_telescoping_identity(
            fractions in prop::collection::vec(0.0001f64..0.9999, 1..40)
        ) {
            let (weights, residual) = stick_weights_from_fractions(&fractions);
            let total: f64 = weights.iter().sum::<f64>() + residual;
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!(weights.iter().all(|&w| w > 0.0));
        }
    }
}
