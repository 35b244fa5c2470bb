//! Auxiliary-cluster Gibbs sampler for the multilinear DP mixture of
//! regressions.
//!
//! Each sweep updates, in order: every sample's joint (basis, cluster)
//! assignment via auxiliary clusters, every live cluster's parameters from
//! the conjugate posterior, the latent factor vectors by Metropolis-Hastings,
//! and the per-group latent scales by slice sampling.
//!
//! One chain is a single logical thread; independent chains use independent
//! seeds. All randomness flows through per-update-kind ChaCha streams derived
//! from the configured seed, so runs are bit-reproducible and the classical-DP
//! reference in [`crate::testkit`] can consume identical streams.

mod assign;
mod latent;
mod trace;

pub use assign::candidate_log_scores;
pub use latent::{
    grad_u, logpost_u, logpost_u_parts, mh_log_accept_ratio, slice_sample_1d, UProposal,
};
pub use trace::{ClusterSnapshot, PhiSnapshot, Snapshot, SweepStat, Trace, TraceHeader};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::components::{
    log_base_density, log_likelihood_cached, sample_prior, BasePrior, LabeledSample,
    LikelihoodCache, RegressionComponent,
};
use crate::data::GroupedDataset;
use crate::error::{Error, Result};
use crate::multiindex::FactorConfig;
use crate::prior::{log_weights, sample_latent_factors, Hyperparams, LatentFactors};
use crate::stats::{lgamma, normal_logpdf};

/// RNG stream ids, one per update kind. The classical-DP reference sampler
/// mirrors the assignment, phi, and init streams to stay in lockstep.
pub const STREAM_ASSIGN: u64 = 1;
pub const STREAM_PHI: u64 = 2;
pub const STREAM_U: u64 = 3;
pub const STREAM_SIGMA: u64 = 4;
pub const STREAM_INIT: u64 = 5;

/// Seed a stream-`k` generator for a chain seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// The model context held fixed during a run: factor layout, prior
/// hyperparameters, and the base prior (possibly per basis).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MldpModel {
    pub cfg: FactorConfig,
    pub hyper: Hyperparams,
    pub base: BasePrior,
    pub per_basis_base: Option<Vec<BasePrior>>,
}

impl MldpModel {
    pub fn new(cfg: FactorConfig, hyper: Hyperparams, base: BasePrior) -> Self {
        Self {
            cfg,
            hyper,
            base,
            per_basis_base: None,
        }
    }

    /// Per-basis concentrations, when configured, must cover every basis.
    pub fn validate_hyper(&self) -> Result<()> {
        if let Some(len) = self.hyper.per_basis_alpha_len() {
            if len != self.cfg.n_bases() {
                return Err(Error::Config(format!(
                    "per-basis alpha map has {len} entries, config has {} bases",
                    self.cfg.n_bases()
                )));
            }
        }
        Ok(())
    }

    /// Heterogeneous variant: a distinct base prior per basis measure.
    pub fn with_per_basis_base(mut self, bases: Vec<BasePrior>) -> Result<Self> {
        if bases.len() != self.cfg.n_bases() {
            return Err(Error::Config(format!(
                "{} per-basis priors supplied, config has {} bases",
                bases.len(),
                self.cfg.n_bases()
            )));
        }
        if bases.iter().any(|b| b.dim() != self.base.dim()) {
            return Err(Error::Config(
                "per-basis priors disagree on feature dimension".into(),
            ));
        }
        self.per_basis_base = Some(bases);
        Ok(self)
    }

    pub fn base_for(&self, basis_flat: usize) -> &BasePrior {
        match &self.per_basis_base {
            Some(bases) => &bases[basis_flat],
            None => &self.base,
        }
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }
}

/// A grouped dataset flattened to the canonical scan order: groups in
/// enumeration order, rows within a group in their stored order.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatDataset {
    pub samples: Vec<LabeledSample>,
    /// Flat group index of each sample.
    pub group_of: Vec<usize>,
    pub cfg: FactorConfig,
}

impl FlatDataset {
    pub fn from_grouped(data: &GroupedDataset) -> Result<Self> {
        let mut samples = Vec::with_capacity(data.n_samples());
        let mut group_of = Vec::with_capacity(data.n_samples());
        for g in 0..data.cfg.n_sample_sets() {
            let x = &data.x[g];
            for r in 0..x.nrows() {
                samples.push(LabeledSample::new(x.row(r).transpose(), data.y[g][r])?);
                group_of.push(g);
            }
        }
        Ok(Self {
            samples,
            group_of,
            cfg: data.cfg.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.first().map_or(0, |s| s.x.len())
    }

    /// Sample count per flat group index.
    pub fn group_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.cfg.n_sample_sets()];
        for &g in &self.group_of {
            sizes[g] += 1;
        }
        sizes
    }
}

/// Sampler knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Auxiliary clusters per basis in each assignment step.
    pub aux_clusters: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Proposal scale for latent-vector updates.
    pub u_step: f64,
    pub u_sampler: UProposal,
    /// Initial width for the latent-scale slice sampler.
    pub slice_width: f64,
    /// Randomly permute the sample scan order each sweep (off by default).
    pub shuffle_scan: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            aux_clusters: 3,
            iterations: 2000,
            burn_in: 1000,
            thin: 5,
            seed: 0,
            u_step: 0.3,
            u_sampler: UProposal::RandomWalk,
            slice_width: 1.0,
            shuffle_scan: false,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.aux_clusters == 0 {
            return Err(Error::Config("need at least one auxiliary cluster".into()));
        }
        if self.thin == 0 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::Config(format!(
                "burn_in {} must be below iterations {}",
                self.burn_in, self.iterations
            )));
        }
        if !(self.u_step > 0.0) || !(self.slice_width > 0.0) {
            return Err(Error::Config("proposal scales must be positive".into()));
        }
        Ok(())
    }
}

/// A live cluster: its parameters, cached covariate Cholesky, and member
/// sample ids (never empty).
#[derive(Debug, Clone)]
pub struct Cluster {
    phi: RegressionComponent,
    cache: LikelihoodCache,
    pub members: Vec<usize>,
}

impl Cluster {
    pub fn new(phi: RegressionComponent, members: Vec<usize>) -> Self {
        let cache = phi.likelihood_cache();
        Self {
            phi,
            cache,
            members,
        }
    }

    pub fn phi(&self) -> &RegressionComponent {
        &self.phi
    }

    pub fn set_phi(&mut self, phi: RegressionComponent) {
        self.cache = phi.likelihood_cache();
        self.phi = phi;
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn log_likelihood(&self, s: &LabeledSample) -> f64 {
        log_likelihood_cached(&self.phi, &self.cache, s)
    }
}

impl PartialEq for Cluster {
    fn eq(&self, other: &Self) -> bool {
        self.phi == other.phi && self.members == other.members
    }
}

/// Clusters of every basis measure, indexed by flat basis index.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterRegistry {
    pub per_basis: Vec<Vec<Cluster>>,
}

impl ClusterRegistry {
    pub fn empty(n_bases: usize) -> Self {
        Self {
            per_basis: vec![Vec::new(); n_bases],
        }
    }

    /// Samples assigned to one basis (its `L`).
    pub fn basis_total(&self, basis: usize) -> usize {
        self.per_basis[basis].iter().map(Cluster::size).sum()
    }

    pub fn n_live_clusters(&self) -> usize {
        self.per_basis.iter().map(Vec::len).sum()
    }
}

/// Where one sample currently sits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub basis: usize,
    pub cluster: usize,
}

/// Full Markov-chain state.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerState {
    pub assignments: Vec<Assignment>,
    pub registry: ClusterRegistry,
    pub latents: LatentFactors,
    pub hyper: Hyperparams,
}

impl SamplerState {
    /// Check the bookkeeping invariants: count conservation, no empty
    /// clusters, and assignment/registry cross-consistency.
    pub fn validate(&self, data: &FlatDataset) -> Result<()> {
        let total: usize = (0..self.registry.per_basis.len())
            .map(|b| self.registry.basis_total(b))
            .sum();
        if total != data.len() {
            return Err(Error::State(format!(
                "registry holds {total} samples, dataset has {}",
                data.len()
            )));
        }
        for (b, clusters) in self.registry.per_basis.iter().enumerate() {
            for (c, cluster) in clusters.iter().enumerate() {
                if cluster.members.is_empty() {
                    return Err(Error::State(format!(
                        "basis {b} cluster {c} is empty"
                    )));
                }
                for &m in &cluster.members {
                    let a = self.assignments[m];
                    if a.basis != b || a.cluster != c {
                        return Err(Error::State(format!(
                            "sample {m} assigned to ({}, {}) but registered in ({b}, {c})",
                            a.basis, a.cluster
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Assignment counts per (group, flat basis), the sufficient statistics
    /// for latent-vector updates.
    pub fn basis_counts(&self, data: &FlatDataset) -> Vec<Vec<f64>> {
        let n_bases = self.registry.per_basis.len();
        let mut counts = vec![vec![0.0; n_bases]; data.cfg.n_sample_sets()];
        for (m, a) in self.assignments.iter().enumerate() {
            counts[data.group_of[m]][a.basis] += 1.0;
        }
        counts
    }
}

/// The sampler: model + data + config + per-update-kind RNG streams.
pub struct GibbsSampler<'a> {
    pub model: &'a MldpModel,
    pub data: &'a FlatDataset,
    pub config: SamplerConfig,
    rng_assign: ChaCha8Rng,
    rng_phi: ChaCha8Rng,
    rng_u: ChaCha8Rng,
    rng_sigma: ChaCha8Rng,
    rng_init: ChaCha8Rng,
    u_accepted: u64,
    u_attempted: u64,
}

impl<'a> GibbsSampler<'a> {
    pub fn new(
        model: &'a MldpModel,
        data: &'a FlatDataset,
        config: SamplerConfig,
    ) -> Result<Self> {
        config.validate()?;
        if data.is_empty() {
            return Err(Error::Input("dataset has no samples".into()));
        }
        if data.dim() != model.dim() {
            return Err(Error::Shape(format!(
                "data has {} features, base prior expects {}",
                data.dim(),
                model.dim()
            )));
        }
        if data.cfg != model.cfg {
            return Err(Error::Shape(
                "dataset and model disagree on the factor configuration".into(),
            ));
        }
        model.validate_hyper()?;
        let seed = config.seed;
        Ok(Self {
            model,
            data,
            config,
            rng_assign: stream_rng(seed, STREAM_ASSIGN),
            rng_phi: stream_rng(seed, STREAM_PHI),
            rng_u: stream_rng(seed, STREAM_U),
            rng_sigma: stream_rng(seed, STREAM_SIGMA),
            rng_init: stream_rng(seed, STREAM_INIT),
            u_accepted: 0,
            u_attempted: 0,
        })
    }

    /// Fraction of accepted latent-vector proposals so far.
    pub fn u_acceptance_rate(&self) -> f64 {
        if self.u_attempted == 0 {
            return f64::NAN;
        }
        self.u_accepted as f64 / self.u_attempted as f64
    }

    /// Cold start: every sample in one cluster on basis `(1,...,1)` with
    /// parameters drawn from the base prior, latent factors from their
    /// prior. The cluster draw comes first on the init stream so the
    /// classical-DP reference can mirror it.
    pub fn init_state(&mut self) -> Result<SamplerState> {
        let phi = sample_prior(self.model.base_for(0), &mut self.rng_init)?;
        let latents = sample_latent_factors(&self.model.hyper, &self.model.cfg, &mut self.rng_init);
        let members: Vec<usize> = (0..self.data.len()).collect();
        let mut registry = ClusterRegistry::empty(self.model.cfg.n_bases());
        registry.per_basis[0].push(Cluster::new(phi, members));
        Ok(SamplerState {
            assignments: vec![
                Assignment {
                    basis: 0,
                    cluster: 0
                };
                self.data.len()
            ],
            registry,
            latents,
            hyper: self.model.hyper.clone(),
        })
    }

    /// Redraw every live cluster's parameters from the conjugate posterior
    /// over its members. Scan order: bases in flat order, clusters in
    /// registry order.
    pub fn update_phi(&mut self, state: &mut SamplerState) -> Result<()> {
        for b in 0..state.registry.per_basis.len() {
            let base = self.model.base_for(b);
            for c in 0..state.registry.per_basis[b].len() {
                let members = &state.registry.per_basis[b][c].members;
                if members.is_empty() {
                    return Err(Error::State(format!(
                        "update_phi hit an empty cluster at basis {b}, cluster {c}"
                    )));
                }
                let member_samples: Vec<LabeledSample> = members
                    .iter()
                    .map(|&m| self.data.samples[m].clone())
                    .collect();
                let phi =
                    crate::components::posterior_draw(base, &member_samples, &mut self.rng_phi)?;
                state.registry.per_basis[b][c].set_phi(phi);
            }
        }
        Ok(())
    }

    /// One full Gibbs sweep: assignments, cluster parameters, latent
    /// vectors, latent scales.
    pub fn sweep(&mut self, state: &mut SamplerState) -> Result<()> {
        let log_w = self.group_log_weights(state)?;
        let mut order: Vec<usize> = (0..self.data.len()).collect();
        if self.config.shuffle_scan {
            use rand::seq::SliceRandom;
            order.shuffle(&mut self.rng_assign);
        }
        for m in order {
            self.assignment_step_with(state, m, &log_w)?;
        }
        self.update_phi(state)?;
        self.update_u(state)?;
        self.update_sigma_u(state);
        Ok(())
    }

    /// Log weights for every group under the current latent factors.
    pub(crate) fn group_log_weights(&self, state: &SamplerState) -> Result<Vec<Vec<f64>>> {
        crate::multiindex::enumerate_groups(&self.model.cfg)
            .iter()
            .map(|g| log_weights(&state.latents, g, &self.model.cfg))
            .collect()
    }

    /// Run the chain: initialize, sweep, validate bookkeeping after every
    /// sweep, and record thinned post-burn-in snapshots plus per-sweep
    /// diagnostics.
    pub fn run(&mut self) -> Result<Trace> {
        let mut state = self.init_state()?;
        let mut snapshots = Vec::new();
        let mut sweep_stats = Vec::with_capacity(self.config.iterations);
        for sweep in 1..=self.config.iterations {
            self.sweep(&mut state)?;
            state.validate(self.data)?;
            let lj = log_joint(&state, self.data, self.model)?;
            if !lj.is_finite() {
                return Err(Error::Numeric(format!(
                    "log joint became non-finite at sweep {sweep}"
                )));
            }
            sweep_stats.push(SweepStat {
                sweep,
                log_joint: lj,
                n_live_clusters: state.registry.n_live_clusters(),
            });
            if sweep > self.config.burn_in
                && (sweep - self.config.burn_in).is_multiple_of(self.config.thin)
            {
                snapshots.push(Snapshot::from_state(sweep, lj, &state));
            }
        }
        Ok(Trace {
            header: TraceHeader {
                cfg: self.model.cfg.clone(),
                hyper: self.model.hyper.clone(),
                base: self.model.base.clone(),
                per_basis_base: self.model.per_basis_base.clone(),
                dim: self.model.dim(),
                n_samples: self.data.len(),
                sampler: self.config.clone(),
            },
            snapshots,
            sweep_stats,
        })
    }

    pub(crate) fn count_u_attempt(&mut self, accepted: bool) {
        self.u_attempted += 1;
        if accepted {
            self.u_accepted += 1;
        }
    }
}

/// Full joint log density of the current state: assignment weights, data
/// likelihood, the partition mass of every basis, cluster parameters under
/// the base prior, and the latent-factor prior terms.
pub fn log_joint(state: &SamplerState, data: &FlatDataset, model: &MldpModel) -> Result<f64> {
    let mut lp = 0.0;

    let groups = crate::multiindex::enumerate_groups(&model.cfg);
    let log_w: Vec<Vec<f64>> = groups
        .iter()
        .map(|g| log_weights(&state.latents, g, &model.cfg))
        .collect::<Result<_>>()?;
    for (m, a) in state.assignments.iter().enumerate() {
        lp += log_w[data.group_of[m]][a.basis];
        lp += state.registry.per_basis[a.basis][a.cluster].log_likelihood(&data.samples[m]);
    }

    // Exchangeable partition mass per basis under its concentration.
    for (b, clusters) in state.registry.per_basis.iter().enumerate() {
        let alpha = state.hyper.alpha_for(b);
        let l_total = state.registry.basis_total(b) as f64;
        lp += clusters.len() as f64 * alpha.ln() + lgamma(alpha) - lgamma(alpha + l_total);
        for cluster in clusters {
            lp += lgamma(cluster.size() as f64);
            lp += log_base_density(model.base_for(b), cluster.phi())?;
        }
    }

    // Latent factors and their scales.
    for n in 1..=model.cfg.n_groups() {
        let sigma2 = state.latents.sigma_u(n).powi(2);
        let (ssq, count) = state.latents.group_sq_stats(n);
        lp += -0.5 * count as f64 * (crate::stats::LN_2PI + sigma2.ln()) - 0.5 * ssq / sigma2;
        lp += normal_logpdf(sigma2.ln(), 0.0, state.hyper.sigma0().powi(2));
    }
    Ok(lp)
}
