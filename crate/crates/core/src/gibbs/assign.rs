//! Joint (basis, cluster) assignment with auxiliary clusters.
//!
//! For a detached sample, every basis contributes its live clusters plus
//! `s` fresh auxiliary clusters drawn from that basis's base prior. The
//! candidate scores are, up to the shared normalizer,
//! `w_b * l_k / (L_b + alpha_b) * f(x | phi_k)` for live clusters and
//! `w_b * (alpha_b / s) / (L_b + alpha_b) * f(x | phi_aux)` for auxiliaries,
//! all computed in log space.

use rand::Rng;

use crate::components::sample_prior;
use crate::error::{Error, Result};
use crate::stats::log_sum_exp;

use super::{Assignment, Cluster, GibbsSampler, SamplerState};

/// Candidate log scores for one basis, before joint normalization.
///
/// `log_f_existing[k]` is the data log likelihood under live cluster `k`
/// (with size `cluster_sizes[k]`), `log_f_aux[j]` under the `j`-th auxiliary
/// draw. `l_total` counts the samples on this basis with the updated sample
/// removed.
pub fn candidate_log_scores(
    log_w: f64,
    cluster_sizes: &[usize],
    l_total: usize,
    alpha: f64,
    log_f_existing: &[f64],
    log_f_aux: &[f64],
) -> Vec<f64> {
    let s = log_f_aux.len() as f64;
    let log_denom = (l_total as f64 + alpha).ln();
    let mut scores = Vec::with_capacity(cluster_sizes.len() + log_f_aux.len());
    for (&size, &lf) in cluster_sizes.iter().zip(log_f_existing) {
        scores.push(log_w + (size as f64).ln() - log_denom + lf);
    }
    for &lf in log_f_aux {
        scores.push(log_w + (alpha / s).ln() - log_denom + lf);
    }
    scores
}

impl GibbsSampler<'_> {
    /// Resample the (basis, cluster) assignment of sample `m`.
    ///
    /// Detaches the sample (deleting its cluster if emptied), scores every
    /// live cluster and `s` fresh auxiliary clusters per basis, normalizes
    /// jointly, draws, and reattaches. A chosen auxiliary becomes a live
    /// cluster; unused auxiliaries are discarded.
    pub fn assignment_step(&mut self, state: &mut SamplerState, m: usize) -> Result<()> {
        let log_w = self.group_log_weights(state)?;
        self.assignment_step_with(state, m, &log_w)
    }

    pub(crate) fn assignment_step_with(
        &mut self,
        state: &mut SamplerState,
        m: usize,
        log_w: &[Vec<f64>],
    ) -> Result<()> {
        detach(state, m);

        let n_bases = state.registry.per_basis.len();
        let s = self.config.aux_clusters;
        let sample = &self.data.samples[m];
        let log_w_g = &log_w[self.data.group_of[m]];

        // Fresh auxiliary parameters for every basis, in basis order. The
        // draw order is part of the reproducibility contract.
        let mut aux: Vec<Vec<Cluster>> = Vec::with_capacity(n_bases);
        for b in 0..n_bases {
            let mut basis_aux = Vec::with_capacity(s);
            for _ in 0..s {
                let phi = sample_prior(self.model.base_for(b), &mut self.rng_assign)?;
                basis_aux.push(Cluster::new(phi, Vec::new()));
            }
            aux.push(basis_aux);
        }

        // (basis, candidate) in scan order: per basis, live clusters then
        // auxiliaries.
        let mut scores = Vec::new();
        let mut candidates = Vec::new();
        for b in 0..n_bases {
            let clusters = &state.registry.per_basis[b];
            let sizes: Vec<usize> = clusters.iter().map(Cluster::size).collect();
            let l_total: usize = sizes.iter().sum();
            let log_f_existing: Vec<f64> =
                clusters.iter().map(|c| c.log_likelihood(sample)).collect();
            let log_f_aux: Vec<f64> = aux[b].iter().map(|c| c.log_likelihood(sample)).collect();
            let basis_scores = candidate_log_scores(
                log_w_g[b],
                &sizes,
                l_total,
                state.hyper.alpha_for(b),
                &log_f_existing,
                &log_f_aux,
            );
            scores.extend(basis_scores);
            candidates.extend((0..sizes.len()).map(|c| (b, CandidateKind::Existing(c))));
            candidates.extend((0..s).map(|k| (b, CandidateKind::Auxiliary(k))));
        }

        let lse = log_sum_exp(&scores);
        if !lse.is_finite() {
            return Err(Error::Numeric(
                "all assignment candidates underflowed to zero probability".into(),
            ));
        }

        let u: f64 = self.rng_assign.random();
        let mut cumulative = 0.0;
        let mut chosen = candidates.len() - 1;
        for (i, score) in scores.iter().enumerate() {
            cumulative += (score - lse).exp();
            if u < cumulative {
                chosen = i;
                break;
            }
        }

        let (basis, kind) = candidates[chosen];
        match kind {
            CandidateKind::Existing(c) => {
                state.registry.per_basis[basis][c].members.push(m);
                state.assignments[m] = Assignment { basis, cluster: c };
            }
            CandidateKind::Auxiliary(k) => {
                let mut cluster = aux.swap_remove(basis).swap_remove(k);
                cluster.members.push(m);
                let c = state.registry.per_basis[basis].len();
                state.registry.per_basis[basis].push(cluster);
                state.assignments[m] = Assignment { basis, cluster: c };
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
enum CandidateKind {
    Existing(usize),
    Auxiliary(usize),
}

/// Remove sample `m` from its cluster; delete the cluster if it empties.
/// Cluster deletion swaps the last cluster of the basis into the freed slot.
fn detach(state: &mut SamplerState, m: usize) {
    let Assignment { basis, cluster } = state.assignments[m];
    let members = &mut state.registry.per_basis[basis][cluster].members;
    let pos = members
        .iter()
        .position(|&x| x == m)
        .expect("assignment table and registry agree");
    members.remove(pos);
    if members.is_empty() {
        state.registry.per_basis[basis].swap_remove(cluster);
        if cluster < state.registry.per_basis[basis].len() {
            // The moved cluster's members now live at index `cluster`.
            for &moved in &state.registry.per_basis[basis][cluster].members {
                state.assignments[moved].cluster = cluster;
            }
        }
    }
}
