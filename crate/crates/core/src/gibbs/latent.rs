//! Latent-factor updates: the log posterior of `U` given assignments, its
//! gradient, Metropolis-Hastings vector updates (random-walk or
//! gradient-informed), and slice sampling for the per-group scales.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::multiindex::{enumerate_groups, FactorConfig, GroupIndex};
use crate::prior::{interaction_logits, LatentFactors};
use crate::stats::{log_sum_exp, normal_logpdf};

use super::{FlatDataset, GibbsSampler, SamplerState};

/// Proposal family for latent-vector updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UProposal {
    RandomWalk,
    GradientInformed,
}

/// Log acceptance ratio of a Metropolis-Hastings move, including proposal
/// asymmetry. Acceptance probability is `min(1, exp(ratio))`.
pub fn mh_log_accept_ratio(
    current_lp: f64,
    proposal_lp: f64,
    log_q_forward: f64,
    log_q_reverse: f64,
) -> f64 {
    proposal_lp - current_lp + log_q_reverse - log_q_forward
}

/// Data and prior parts of the `U` log posterior:
/// `sum_m log w_{b_m}^{g_m} + sum log N(u; 0, sigma_u^2)`.
pub fn logpost_u_parts(state: &SamplerState, data: &FlatDataset) -> Result<(f64, f64)> {
    let cfg = &data.cfg;
    let counts = state.basis_counts(data);
    let mut data_term = 0.0;
    for (g, group) in enumerate_groups(cfg).iter().enumerate() {
        let logits = interaction_logits(&state.latents, group, cfg)?;
        let lse = log_sum_exp(&logits);
        for (b, &z) in counts[g].iter().enumerate() {
            if z > 0.0 {
                data_term += z * (logits[b] - lse);
            }
        }
    }
    let mut prior_term = 0.0;
    for n in 1..=cfg.n_groups() {
        let sigma2 = state.latents.sigma_u(n).powi(2);
        let (ssq, count) = state.latents.group_sq_stats(n);
        prior_term += -0.5 * count as f64 * (crate::stats::LN_2PI + sigma2.ln())
            - 0.5 * ssq / sigma2;
    }
    Ok((data_term, prior_term))
}

/// Full `U` log posterior (up to terms not involving `U`).
pub fn logpost_u(state: &SamplerState, data: &FlatDataset) -> Result<f64> {
    let (d, p) = logpost_u_parts(state, data)?;
    Ok(d + p)
}

/// Gradient of [`logpost_u`] with respect to every latent entry, in the
/// same nesting as [`LatentFactors::raw`].
///
/// For entry `u^{n,j}_i` the data term sums, over groups containing factor
/// `j` in group `n` and over basis cells with `i_n = i`,
/// `(z_b - M_g w_b) * prod_{n' != n} u^{n',j_{n'}}_{i_{n'}}`.
pub fn grad_u(state: &SamplerState, data: &FlatDataset) -> Result<Vec<Vec<Vec<f64>>>> {
    let cfg = &data.cfg;
    let counts = state.basis_counts(data);
    let mut grad: Vec<Vec<Vec<f64>>> = state
        .latents
        .raw()
        .iter()
        .map(|vs| vs.iter().map(|v| vec![0.0; v.len()]).collect())
        .collect();

    let groups = enumerate_groups(cfg);
    let dims = cfg.bases_per_group().to_vec();
    for (g, group) in groups.iter().enumerate() {
        let m_g: f64 = counts[g].iter().sum();
        if m_g == 0.0 {
            continue;
        }
        let logits = interaction_logits(&state.latents, group, cfg)?;
        let lse = log_sum_exp(&logits);
        let selected: Vec<&[f64]> = (1..=cfg.n_groups())
            .map(|n| state.latents.vector(n, group.indices()[n - 1]))
            .collect();

        let mut idx = vec![0usize; cfg.n_groups()];
        for b in 0..logits.len() {
            let w = (logits[b] - lse).exp();
            let coeff = counts[g][b] - m_g * w;
            if coeff != 0.0 {
                for n in 0..cfg.n_groups() {
                    let mut prod_other = 1.0;
                    for (n2, sel) in selected.iter().enumerate() {
                        if n2 != n {
                            prod_other *= sel[idx[n2]];
                        }
                    }
                    let j = group.indices()[n];
                    grad[n][j - 1][idx[n]] += coeff * prod_other;
                }
            }
            for n in (0..cfg.n_groups()).rev() {
                idx[n] += 1;
                if idx[n] < dims[n] {
                    break;
                }
                idx[n] = 0;
            }
        }
    }

    for n in 1..=cfg.n_groups() {
        let sigma2 = state.latents.sigma_u(n).powi(2);
        for j in 1..=cfg.factors_per_group()[n - 1] {
            for (gi, &ui) in grad[n - 1][j - 1]
                .iter_mut()
                .zip(state.latents.vector(n, j))
            {
                *gi -= ui / sigma2;
            }
        }
    }
    Ok(grad)
}

/// Log posterior restricted to the vector `u^{n,j}`: data terms of the
/// groups containing factor `j` of group `n`, plus that vector's prior.
fn restricted_logpost(
    latents: &LatentFactors,
    cfg: &FactorConfig,
    affected: &[(usize, GroupIndex)],
    counts: &[Vec<f64>],
    n: usize,
    j: usize,
) -> Result<f64> {
    let mut lp = 0.0;
    for (g, group) in affected {
        let logits = interaction_logits(latents, group, cfg)?;
        let lse = log_sum_exp(&logits);
        for (b, &z) in counts[*g].iter().enumerate() {
            if z > 0.0 {
                lp += z * (logits[b] - lse);
            }
        }
    }
    let sigma2 = latents.sigma_u(n).powi(2);
    for &ui in latents.vector(n, j) {
        lp += normal_logpdf(ui, 0.0, sigma2);
    }
    Ok(lp)
}

/// Gradient of [`restricted_logpost`] with respect to `u^{n,j}`.
fn restricted_grad(
    latents: &LatentFactors,
    cfg: &FactorConfig,
    affected: &[(usize, GroupIndex)],
    counts: &[Vec<f64>],
    n: usize,
    j: usize,
) -> Result<Vec<f64>> {
    let dims = cfg.bases_per_group().to_vec();
    let mut grad = vec![0.0; dims[n - 1]];
    for (g, group) in affected {
        let m_g: f64 = counts[*g].iter().sum();
        if m_g == 0.0 {
            continue;
        }
        let logits = interaction_logits(latents, group, cfg)?;
        let lse = log_sum_exp(&logits);
        let selected: Vec<&[f64]> = (1..=cfg.n_groups())
            .map(|n2| latents.vector(n2, group.indices()[n2 - 1]))
            .collect();
        let mut idx = vec![0usize; cfg.n_groups()];
        for b in 0..logits.len() {
            let w = (logits[b] - lse).exp();
            let coeff = counts[*g][b] - m_g * w;
            if coeff != 0.0 {
                let mut prod_other = 1.0;
                for (n2, sel) in selected.iter().enumerate() {
                    if n2 != n - 1 {
                        prod_other *= sel[idx[n2]];
                    }
                }
                grad[idx[n - 1]] += coeff * prod_other;
            }
            for d in (0..cfg.n_groups()).rev() {
                idx[d] += 1;
                if idx[d] < dims[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
    }
    let sigma2 = latents.sigma_u(n).powi(2);
    for (gi, &ui) in grad.iter_mut().zip(latents.vector(n, j)) {
        *gi -= ui / sigma2;
    }
    Ok(grad)
}

impl GibbsSampler<'_> {
    /// One Metropolis-Hastings update of every latent vector, in group/factor
    /// order. Each vector's move targets its own full conditional, so the
    /// sweep leaves the joint `U` posterior invariant.
    pub fn update_u(&mut self, state: &mut SamplerState) -> Result<()> {
        let cfg = &self.model.cfg;
        let counts = state.basis_counts(self.data);
        let groups = enumerate_groups(cfg);
        let step = self.config.u_step;
        let style = self.config.u_sampler;

        for n in 1..=cfg.n_groups() {
            for j in 1..=cfg.factors_per_group()[n - 1] {
                let affected: Vec<(usize, GroupIndex)> = groups
                    .iter()
                    .enumerate()
                    .filter(|(_, g)| g.indices()[n - 1] == j)
                    .map(|(gi, g)| (gi, g.clone()))
                    .collect();

                let current = state.latents.vector(n, j).to_vec();
                let lp_current =
                    restricted_logpost(&state.latents, cfg, &affected, &counts, n, j)?;

                let (proposal, log_q_fwd): (Vec<f64>, f64) = match style {
                    UProposal::RandomWalk => {
                        let prop: Vec<f64> = current
                            .iter()
                            .map(|&u| {
                                let z: f64 = StandardNormal.sample(&mut self.rng_u);
                                u + step * z
                            })
                            .collect();
                        (prop, 0.0)
                    }
                    UProposal::GradientInformed => {
                        let g_cur =
                            restricted_grad(&state.latents, cfg, &affected, &counts, n, j)?;
                        let mean_fwd: Vec<f64> = current
                            .iter()
                            .zip(&g_cur)
                            .map(|(&u, &g)| u + 0.5 * step * step * g)
                            .collect();
                        let prop: Vec<f64> = mean_fwd
                            .iter()
                            .map(|&m| {
                                let z: f64 = StandardNormal.sample(&mut self.rng_u);
                                m + step * z
                            })
                            .collect();
                        let log_q_fwd: f64 = prop
                            .iter()
                            .zip(&mean_fwd)
                            .map(|(&x, &m)| normal_logpdf(x, m, step * step))
                            .sum();
                        (prop, log_q_fwd)
                    }
                };

                *state.latents.vector_mut(n, j) = proposal.clone();
                let lp_proposal =
                    restricted_logpost(&state.latents, cfg, &affected, &counts, n, j)?;

                let log_q_rev = match style {
                    UProposal::RandomWalk => 0.0,
                    UProposal::GradientInformed => {
                        let g_prop =
                            restricted_grad(&state.latents, cfg, &affected, &counts, n, j)?;
                        let mean_rev: Vec<f64> = proposal
                            .iter()
                            .zip(&g_prop)
                            .map(|(&u, &g)| u + 0.5 * step * step * g)
                            .collect();
                        current
                            .iter()
                            .zip(&mean_rev)
                            .map(|(&x, &m)| normal_logpdf(x, m, step * step))
                            .sum()
                    }
                };

                let ratio = mh_log_accept_ratio(lp_current, lp_proposal, log_q_fwd, log_q_rev);
                let accepted = ratio >= 0.0 || self.rng_u.random::<f64>() < ratio.exp();
                if !accepted {
                    *state.latents.vector_mut(n, j) = current;
                }
                self.count_u_attempt(accepted);
            }
        }
        Ok(())
    }

    /// Slice-sample each group's `log(sigma_u^2)` from its full conditional
    /// `prod N(u; 0, sigma_u^2) * N(log sigma_u^2; 0, sigma0^2)`.
    pub fn update_sigma_u(&mut self, state: &mut SamplerState) {
        let sigma0_sq = state.hyper.sigma0().powi(2);
        let width = self.config.slice_width;
        for n in 1..=self.model.cfg.n_groups() {
            let (ssq, count) = state.latents.group_sq_stats(n);
            let logpdf = move |x: f64| {
                -0.5 * count as f64 * x - 0.5 * ssq * (-x).exp() - x * x / (2.0 * sigma0_sq)
            };
            let x0 = 2.0 * state.latents.sigma_u(n).ln();
            let x1 = slice_sample_1d(&logpdf, x0, width, &mut self.rng_sigma);
            state.latents.set_sigma_u(n, (0.5 * x1).exp());
        }
    }
}

/// Univariate slice sampler with interval doubling and shrinkage, including
/// the doubling acceptance check, so the update leaves `exp(logpdf)`
/// invariant.
pub fn slice_sample_1d<R: Rng>(
    logpdf: &dyn Fn(f64) -> f64,
    x0: f64,
    width: f64,
    rng: &mut R,
) -> f64 {
    let f0 = logpdf(x0);
    // u in (0, 1] keeps the level below f0.
    let level = f0 + (1.0 - rng.random::<f64>()).ln();

    // Doubling.
    let mut left = x0 - width * rng.random::<f64>();
    let mut right = left + width;
    while level < logpdf(left) || level < logpdf(right) {
        if rng.random::<f64>() < 0.5 {
            left -= right - left;
        } else {
            right += right - left;
        }
    }

    // Shrinkage with the doubling acceptance test.
    let (mut lo, mut hi) = (left, right);
    loop {
        let x1 = lo + rng.random::<f64>() * (hi - lo);
        if level < logpdf(x1) && doubling_acceptable(logpdf, x0, x1, left, right, width, level) {
            return x1;
        }
        if x1 < x0 {
            lo = x1;
        } else {
            hi = x1;
        }
    }
}

/// Neal's acceptance test for points found under a doubled interval: reject
/// candidates that the doubling procedure started from `x1` could not have
/// reached.
fn doubling_acceptable(
    logpdf: &dyn Fn(f64) -> f64,
    x0: f64,
    x1: f64,
    mut left: f64,
    mut right: f64,
    width: f64,
    level: f64,
) -> bool {
    let mut differ = false;
    while right - left > 1.1 * width {
        let mid = 0.5 * (left + right);
        if (x0 < mid && x1 >= mid) || (x0 >= mid && x1 < mid) {
            differ = true;
        }
        if x1 < mid {
            right = mid;
        } else {
            left = mid;
        }
        if differ && level >= logpdf(left) && level >= logpdf(right) {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gibbs::{GibbsSampler, SamplerConfig};
    use crate::testkit;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mh_ratio_identities() {
        // Proposal equal to the current point: ratio 0, acceptance 1.
        assert_eq!(mh_log_accept_ratio(-3.2, -3.2, -1.0, -1.0), 0.0);
        // Adding a constant to both log posteriors changes nothing.
        let a = mh_log_accept_ratio(-3.2, -1.7, -0.4, -0.9);
        let b = mh_log_accept_ratio(-3.2 + 100.0, -1.7 + 100.0, -0.4, -0.9);
        assert!((a - b).abs() < 1e-12);
    }

    fn fixture(seed: u64) -> (crate::gibbs::MldpModel, FlatDataset) {
        let spec = testkit::grid2x2_spec(testkit::Grid2x2Variant::SeparatedMeans, 6, seed);
        let synth = testkit::generate_synthetic(&spec).unwrap();
        let data = FlatDataset::from_grouped(&synth.dataset).unwrap();
        let model = testkit::grid2x2_model(&spec, 1.0).unwrap();
        (model, data)
    }

    #[test]
    fn grad_matches_finite_differences() {
        let (model, data) = fixture(3);
        let mut sampler = GibbsSampler::new(&model, &data, SamplerConfig::default()).unwrap();
        let mut state = sampler.init_state().unwrap();
        for _ in 0..3 {
            sampler.sweep(&mut state).unwrap();
        }
        let rel_err = testkit::max_grad_rel_error(&state, &data, 1e-5);
        assert!(rel_err < 1e-5, "max relative error {rel_err}");
    }

    #[test]
    fn grad_at_zero_latents_matches_finite_differences() {
        // All u = 0: uniform softmax, prior gradient identically 0, and the
        // data-term gradient collapses to the finite-difference oracle.
        let (model, data) = fixture(8);
        let mut sampler = GibbsSampler::new(&model, &data, SamplerConfig::default()).unwrap();
        let mut state = sampler.init_state().unwrap();
        for _ in 0..2 {
            sampler.sweep(&mut state).unwrap();
        }
        for n in 1..=2 {
            for j in 1..=2 {
                for v in state.latents.vector_mut(n, j).iter_mut() {
                    *v = 0.0;
                }
            }
        }
        let rel_err = crate::testkit::max_grad_rel_error(&state, &data, 1e-5);
        assert!(rel_err < 1e-5, "relative error {rel_err}");
        // With N = 2 every product of "other" coordinates vanishes at 0, so
        // the whole gradient is exactly 0 there.
        let grad = grad_u(&state, &data).unwrap();
        assert!(grad.iter().flatten().flatten().all(|&g| g == 0.0));
    }

    #[test]
    fn degenerate_config_has_zero_data_gradient() {
        let hyper = crate::prior::Hyperparams::new(1.0, 1.0).unwrap();
        let cfg = crate::multiindex::FactorConfig::new(vec![2, 2], vec![1, 1]).unwrap();
        let spec = testkit::SyntheticSpec {
            cfg: cfg.clone(),
            weights: testkit::WeightSource::Explicit(vec![vec![1.0]; 4]),
            components: vec![vec![testkit::SyntheticComponent {
                weight: 1.0,
                phi: testkit::standard_component(2, &[1.0, 1.0]),
            }]],
            samples_per_group: 5,
            seed: 1,
        };
        let synth = testkit::generate_synthetic(&spec).unwrap();
        let data = FlatDataset::from_grouped(&synth.dataset).unwrap();
        let base = crate::components::BasePrior::data_driven(&testkit::stack_features(
            &synth.dataset,
        ))
        .unwrap();
        let model = crate::gibbs::MldpModel::new(cfg, hyper, base);
        let mut sampler = GibbsSampler::new(&model, &data, SamplerConfig::default()).unwrap();
        let state = sampler.init_state().unwrap();
        let grad = grad_u(&state, &data).unwrap();
        // Weights are pinned at 1, so only the prior term remains.
        for n in 1..=2 {
            for j in 1..=2 {
                let sigma2 = state.latents.sigma_u(n).powi(2);
                let u = state.latents.vector(n, j)[0];
                assert!((grad[n - 1][j - 1][0] - (-u / sigma2)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn data_term_additive_in_counts() {
        let (model, data) = fixture(5);
        let mut sampler = GibbsSampler::new(&model, &data, SamplerConfig::default()).unwrap();
        let mut state = sampler.init_state().unwrap();
        for _ in 0..2 {
            sampler.sweep(&mut state).unwrap();
        }
        let (data_term, _) = logpost_u_parts(&state, &data).unwrap();

        // Duplicate every sample with identical assignments.
        let mut doubled_data = data.clone();
        let n = data.len();
        let mut doubled_state = state.clone();
        for m in 0..n {
            doubled_data.samples.push(data.samples[m].clone());
            doubled_data.group_of.push(data.group_of[m]);
            let a = state.assignments[m];
            doubled_state.assignments.push(a);
            doubled_state.registry.per_basis[a.basis][a.cluster]
                .members
                .push(n + m);
        }
        let (doubled_term, _) = logpost_u_parts(&doubled_state, &doubled_data).unwrap();
        assert!(
            ((doubled_term - 2.0 * data_term) / data_term.abs()) < 1e-12,
            "{doubled_term} vs {}",
            2.0 * data_term
        );
    }

    #[test]
    fn slice_sampler_recovers_standard_normal() {
        let logpdf = |x: f64| -0.5 * x * x;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut x = 0.3;
        let n = 20_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            x = slice_sample_1d(&logpdf, x, 1.0, &mut rng);
            sum += x;
            sumsq += x * x;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((var - 1.0).abs() < 0.1, "var {var}");
    }

    #[test]
    fn acceptance_rate_tracks_step_size() {
        let (model, data) = fixture(7);
        let rate = |step: f64| {
            let cfg = SamplerConfig {
                u_step: step,
                seed: 9,
                ..SamplerConfig::default()
            };
            let mut sampler = GibbsSampler::new(&model, &data, cfg).unwrap();
            let mut state = sampler.init_state().unwrap();
            for _ in 0..3 {
                sampler.sweep(&mut state).unwrap();
            }
            for _ in 0..200 {
                sampler.update_u(&mut state).unwrap();
            }
            sampler.u_acceptance_rate()
        };
        assert!(rate(0.01) > 0.9, "tiny steps should almost always accept");
        assert!(rate(10.0) < 0.2, "huge steps should mostly reject");
    }
}
