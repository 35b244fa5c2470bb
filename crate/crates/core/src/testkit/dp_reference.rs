//! Standalone classical-DP auxiliary-cluster sampler used as the
//! degeneration oracle.
//!
//! This shares no bookkeeping or scoring code with the production sampler:
//! candidate probabilities are formed in plain linear space from the
//! textbook expressions `l_k/(L + alpha) f(x|phi_k)` and
//! `(alpha/s)/(L + alpha) f(x|phi_aux)`. It does draw auxiliary and posterior
//! parameters through the shared component module and mirrors the production
//! RNG stream layout, so that on a degenerate single-basis configuration the
//! two chains consume identical randomness and can be compared draw by draw.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::components::{log_likelihood, posterior_draw, sample_prior, BasePrior, LabeledSample};
use crate::error::{Error, Result};
use crate::gibbs::{stream_rng, FlatDataset, STREAM_ASSIGN, STREAM_INIT, STREAM_PHI};

/// A cluster of the reference chain.
#[derive(Debug, Clone)]
pub struct DpCluster {
    pub phi: crate::components::RegressionComponent,
    pub members: Vec<usize>,
}

/// Classical auxiliary-cluster DP sampler over a flat dataset (grouping is
/// ignored: a single shared measure).
pub struct DpReferenceSampler<'a> {
    base: &'a BasePrior,
    data: &'a FlatDataset,
    alpha: f64,
    aux_clusters: usize,
    rng_assign: ChaCha8Rng,
    rng_phi: ChaCha8Rng,
    rng_init: ChaCha8Rng,
    pub assignments: Vec<usize>,
    pub clusters: Vec<DpCluster>,
}

impl<'a> DpReferenceSampler<'a> {
    pub fn new(
        base: &'a BasePrior,
        data: &'a FlatDataset,
        alpha: f64,
        aux_clusters: usize,
        seed: u64,
    ) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Input("dataset has no samples".into()));
        }
        if aux_clusters == 0 || !(alpha > 0.0) {
            return Err(Error::Config("need alpha > 0 and at least one auxiliary".into()));
        }
        Ok(Self {
            base,
            data,
            alpha,
            aux_clusters,
            rng_assign: stream_rng(seed, STREAM_ASSIGN),
            rng_phi: stream_rng(seed, STREAM_PHI),
            rng_init: stream_rng(seed, STREAM_INIT),
            assignments: Vec::new(),
            clusters: Vec::new(),
        })
    }

    /// Single shared cluster with prior-drawn parameters.
    pub fn init(&mut self) -> Result<()> {
        let phi = sample_prior(self.base, &mut self.rng_init)?;
        self.clusters = vec![DpCluster {
            phi,
            members: (0..self.data.len()).collect(),
        }];
        self.assignments = vec![0; self.data.len()];
        Ok(())
    }

    /// Candidate probabilities for a detached sample: live clusters first,
    /// then the auxiliaries, normalized in linear space.
    pub fn candidate_probabilities(
        &self,
        sample: &LabeledSample,
        aux_phis: &[crate::components::RegressionComponent],
    ) -> Result<Vec<f64>> {
        let l_total: usize = self.clusters.iter().map(|c| c.members.len()).sum();
        let denom = l_total as f64 + self.alpha;
        let s = aux_phis.len() as f64;
        let mut probs = Vec::with_capacity(self.clusters.len() + aux_phis.len());
        for cluster in &self.clusters {
            let f = log_likelihood(&cluster.phi, sample)?.exp();
            probs.push(cluster.members.len() as f64 / denom * f);
        }
        for phi in aux_phis {
            let f = log_likelihood(phi, sample)?.exp();
            probs.push(self.alpha / s / denom * f);
        }
        let total: f64 = probs.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::Numeric("candidate probabilities degenerate".into()));
        }
        for p in &mut probs {
            *p /= total;
        }
        Ok(probs)
    }

    /// One classical Algorithm-8 assignment draw for sample `m`.
    pub fn assignment_step(&mut self, m: usize) -> Result<()> {
        self.detach(m);
        let mut aux = Vec::with_capacity(self.aux_clusters);
        for _ in 0..self.aux_clusters {
            aux.push(sample_prior(self.base, &mut self.rng_assign)?);
        }
        let probs = self.candidate_probabilities(&self.data.samples[m], &aux)?;
        let u: f64 = self.rng_assign.random();
        let mut cumulative = 0.0;
        let mut chosen = probs.len() - 1;
        for (i, p) in probs.iter().enumerate() {
            cumulative += p;
            if u < cumulative {
                chosen = i;
                break;
            }
        }
        if chosen < self.clusters.len() {
            self.clusters[chosen].members.push(m);
            self.assignments[m] = chosen;
        } else {
            let phi = aux.swap_remove(chosen - self.clusters.len());
            self.clusters.push(DpCluster {
                phi,
                members: vec![m],
            });
            self.assignments[m] = self.clusters.len() - 1;
        }
        Ok(())
    }

    fn detach(&mut self, m: usize) {
        let c = self.assignments[m];
        let members = &mut self.clusters[c].members;
        let pos = members.iter().position(|&x| x == m).expect("consistent");
        members.remove(pos);
        if members.is_empty() {
            self.clusters.swap_remove(c);
            if c < self.clusters.len() {
                for &moved in &self.clusters[c].members {
                    self.assignments[moved] = c;
                }
            }
        }
    }

    /// One sweep: every assignment in scan order, then conjugate redraws of
    /// every cluster.
    pub fn sweep(&mut self) -> Result<()> {
        for m in 0..self.data.len() {
            self.assignment_step(m)?;
        }
        for cluster in &mut self.clusters {
            let member_samples: Vec<LabeledSample> = cluster
                .members
                .iter()
                .map(|&m| self.data.samples[m].clone())
                .collect();
            cluster.phi = posterior_draw(self.base, &member_samples, &mut self.rng_phi)?;
        }
        Ok(())
    }
}
