//! Forward simulation of the generative model with known truths, plus the
//! fixtures and Monte-Carlo moment checks built on it.

use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::components::{BasePrior, RegressionComponent};
use crate::data::GroupedDataset;
use crate::error::{Error, Result};
use crate::gibbs::MldpModel;
use crate::multiindex::{enumerate_groups, FactorConfig, GroupIndex};
use crate::prior::{
    compute_weights, stick_breaking_draw, Hyperparams, LatentFactors, WeightTensor,
};

/// One true mixture component of a basis, with its within-basis weight.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticComponent {
    pub weight: f64,
    pub phi: RegressionComponent,
}

/// Where the group weight tensors come from.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightSource {
    /// Per flat group index, a weight vector over flat basis indices.
    Explicit(Vec<Vec<f64>>),
    /// Softmax weights induced by latent factors.
    Latents(LatentFactors),
}

/// Ground-truth description of a synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub cfg: FactorConfig,
    pub weights: WeightSource,
    /// Per flat basis index, the true components of that basis.
    pub components: Vec<Vec<SyntheticComponent>>,
    pub samples_per_group: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Resolved weight vector of one group.
    pub fn group_weights(&self, group: &GroupIndex) -> Result<Vec<f64>> {
        match &self.weights {
            WeightSource::Explicit(w) => Ok(w[group.flat_index(&self.cfg)].clone()),
            WeightSource::Latents(latents) => {
                Ok(compute_weights(latents, group, &self.cfg)?.weights().to_vec())
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if self.components.len() != self.cfg.n_bases() {
            return Err(Error::Config(format!(
                "{} component sets for {} bases",
                self.components.len(),
                self.cfg.n_bases()
            )));
        }
        for (b, comps) in self.components.iter().enumerate() {
            if comps.is_empty() {
                return Err(Error::Config(format!("basis {b} has no components")));
            }
            let total: f64 = comps.iter().map(|c| c.weight).sum();
            if (total - 1.0).abs() > 1e-9 || comps.iter().any(|c| c.weight < 0.0) {
                return Err(Error::Config(format!(
                    "basis {b} component weights do not form a simplex"
                )));
            }
        }
        if let WeightSource::Explicit(w) = &self.weights {
            if w.len() != self.cfg.n_sample_sets() {
                return Err(Error::Config("one weight vector per group required".into()));
            }
            for (g, wg) in w.iter().enumerate() {
                let total: f64 = wg.iter().sum();
                if wg.len() != self.cfg.n_bases()
                    || (total - 1.0).abs() > 1e-9
                    || wg.iter().any(|&x| x < 0.0)
                {
                    return Err(Error::Config(format!(
                        "group {g} weights do not form a simplex over the bases"
                    )));
                }
            }
        }
        if self.samples_per_group == 0 {
            return Err(Error::Config("need at least one sample per group".into()));
        }
        Ok(())
    }

    /// Global component id of (flat basis, within-basis component).
    pub fn global_component_id(&self, basis: usize, k: usize) -> usize {
        self.components[..basis].iter().map(Vec::len).sum::<usize>() + k
    }
}

/// A generated dataset with its generating truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub dataset: GroupedDataset,
    /// True global component id per sample, in canonical scan order.
    pub truth_labels: Vec<usize>,
    /// True flat basis index per sample, in canonical scan order.
    pub truth_basis: Vec<usize>,
    /// Flat group index per sample, in canonical scan order.
    pub group_of: Vec<usize>,
}

fn categorical<R: Rng>(weights: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

/// Draw samples exactly per the generative hierarchy using the spec's
/// truths: basis from the group weights, component within the basis, then
/// `(x, y)` from the component.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let p = spec.components[0][0].phi.dim();
    let groups = enumerate_groups(&spec.cfg);

    let chols: Vec<Vec<Cholesky<f64, nalgebra::Dyn>>> = spec
        .components
        .iter()
        .map(|comps| {
            comps
                .iter()
                .map(|c| Cholesky::new(c.phi.sigma_x()).expect("component Sigma_x is SPD"))
                .collect()
        })
        .collect();

    let mut x_blocks = Vec::with_capacity(groups.len());
    let mut y_blocks = Vec::with_capacity(groups.len());
    let mut rows = Vec::with_capacity(groups.len());
    let mut truth_labels = Vec::new();
    let mut truth_basis = Vec::new();
    let mut group_of = Vec::new();
    let mut next_row = 0usize;

    for (g, group) in groups.iter().enumerate() {
        let w = spec.group_weights(group)?;
        let mut x = DMatrix::zeros(spec.samples_per_group, p);
        let mut y = Vec::with_capacity(spec.samples_per_group);
        let mut row_ids = Vec::with_capacity(spec.samples_per_group);
        for m in 0..spec.samples_per_group {
            let b = categorical(&w, &mut rng);
            let weights: Vec<f64> = spec.components[b].iter().map(|c| c.weight).collect();
            let k = categorical(&weights, &mut rng);
            let phi = &spec.components[b][k].phi;
            let z = DVector::from_fn(p, |_, _| StandardNormal.sample(&mut rng));
            let xv = phi.mu_x() + chols[b][k].l() * z;
            let eps: f64 = StandardNormal.sample(&mut rng);
            let yv = xv.dot(&phi.beta()) + phi.sigma_y2().sqrt() * eps;
            x.set_row(m, &xv.transpose());
            y.push(yv);
            truth_labels.push(spec.global_component_id(b, k));
            truth_basis.push(b);
            group_of.push(g);
            row_ids.push(next_row);
            next_row += 1;
        }
        x_blocks.push(x);
        y_blocks.push(y);
        rows.push(row_ids);
    }

    Ok(SyntheticData {
        dataset: GroupedDataset {
            cfg: spec.cfg.clone(),
            x: x_blocks,
            y: y_blocks,
            rows,
            feature_names: (1..=p).map(|i| format!("x{i}")).collect(),
        },
        truth_labels,
        truth_basis,
        group_of,
    })
}

/// Bayes-optimal point prediction under the generating truth:
/// responsibility-weighted mean response given `x` and the group.
pub fn bayes_optimal_prediction(
    spec: &SyntheticSpec,
    group: &GroupIndex,
    x: &DVector<f64>,
) -> Result<f64> {
    let w = spec.group_weights(group)?;
    let mut total = 0.0;
    let mut weighted = 0.0;
    for (b, comps) in spec.components.iter().enumerate() {
        for c in comps {
            let dens = crate::components::predictive_log_density_x(&c.phi, x)?.exp();
            let resp = w[b] * c.weight * dens;
            total += resp;
            weighted += resp * x.dot(&c.phi.beta());
        }
    }
    Ok(weighted / total)
}

/// Which grid2x2 parameterization to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grid2x2Variant {
    /// Four bases with covariate means at distance >= 6 standard deviations
    /// and distinct regressions: clusters recoverable from `x` alone.
    SeparatedMeans,
    /// Four bases sharing one covariate distribution but with strongly
    /// distinct regression coefficients: group membership, not `x`, carries
    /// the basis information.
    RegressionDistinct,
}

/// The default synthetic fixture: N = 2 factor groups, J = [2, 2],
/// I = [2, 2], P = 2 features, one true component per basis, group
/// `(j1, j2)` putting weight 0.91 on basis `(j1, j2)` and 0.03 elsewhere.
pub fn grid2x2_spec(variant: Grid2x2Variant, samples_per_group: usize, seed: u64) -> SyntheticSpec {
    grid2x2_spec_with_mixing(variant, samples_per_group, seed, 0.91)
}

/// Grid2x2 fixture with a chosen own-basis weight (`1.0` = every group draws
/// purely from its own basis).
pub fn grid2x2_spec_with_mixing(
    variant: Grid2x2Variant,
    samples_per_group: usize,
    seed: u64,
    own_weight: f64,
) -> SyntheticSpec {
    let cfg = FactorConfig::new(vec![2, 2], vec![2, 2]).unwrap();
    let betas = [
        [3.0, 3.0],
        [3.0, -3.0],
        [-3.0, 3.0],
        [-3.0, -3.0],
    ];
    // sigma_y2 = 0.25, so 6 sigma separation in x needs distance 6 with
    // unit covariate scale.
    let means = match variant {
        Grid2x2Variant::SeparatedMeans => [
            [4.0, 4.0],
            [4.0, -4.0],
            [-4.0, 4.0],
            [-4.0, -4.0],
        ],
        Grid2x2Variant::RegressionDistinct => [[0.0; 2]; 4],
    };
    let components = (0..4)
        .map(|b| {
            vec![SyntheticComponent {
                weight: 1.0,
                phi: RegressionComponent::new(
                    DVector::from_column_slice(&means[b]),
                    DMatrix::identity(2, 2),
                    DVector::from_column_slice(&betas[b]),
                    0.25,
                )
                .unwrap(),
            }]
        })
        .collect();
    assert!((0.0..=1.0).contains(&own_weight));
    let off_weight = (1.0 - own_weight) / 3.0;
    let mut weights = Vec::with_capacity(4);
    for g in 0..4 {
        let mut w = vec![off_weight; 4];
        w[g] = own_weight;
        weights.push(w);
    }
    SyntheticSpec {
        cfg,
        weights: WeightSource::Explicit(weights),
        components,
        samples_per_group,
        seed,
    }
}

/// Model for fitting a grid2x2 dataset: data-driven base prior over the
/// spec's own generated features, concentration `alpha`, scale hyperprior 1.
pub fn grid2x2_model(spec: &SyntheticSpec, alpha: f64) -> Result<MldpModel> {
    let synth = generate_synthetic(spec)?;
    let base = BasePrior::data_driven(&super::stack_features(&synth.dataset))?;
    Ok(MldpModel::new(
        spec.cfg.clone(),
        Hyperparams::new(alpha, 1.0)?,
        base,
    ))
}

/// Write a synthetic dataset in the standard CSV schema:
/// `g1..gN, x1..xP, y`.
pub fn write_synthetic_csv<W: Write>(data: &SyntheticData, mut w: W) -> Result<()> {
    let cfg = &data.dataset.cfg;
    let p = data.dataset.dim();
    let mut header: Vec<String> = (1..=cfg.n_groups()).map(|n| format!("g{n}")).collect();
    header.extend((1..=p).map(|i| format!("x{i}")));
    header.push("y".into());
    writeln!(w, "{}", header.join(",")).map_err(|e| Error::Input(format!("write failed: {e}")))?;
    for (g, group) in enumerate_groups(cfg).iter().enumerate() {
        let x = &data.dataset.x[g];
        for r in 0..x.nrows() {
            let mut cells: Vec<String> =
                group.indices().iter().map(|i| i.to_string()).collect();
            cells.extend((0..p).map(|c| format!("{}", x[(r, c)])));
            cells.push(format!("{}", data.dataset.y[g][r]));
            writeln!(w, "{}", cells.join(","))
                .map_err(|e| Error::Input(format!("write failed: {e}")))?;
        }
    }
    Ok(())
}

/// Monte-Carlo check of the conditional moment identities of the simulated
/// measures on the probe set `B = (-inf, 0]` with a standard normal base:
/// `E{G(B)|U} = H(B)` and `V{G(B)|U} = sum_b w_b^2 H(B)(1-H(B))/(1+alpha_b)`.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct MomentCheck {
    pub n_sims: usize,
    pub mean: f64,
    pub expected_mean: f64,
    pub mean_se: f64,
    pub mean_ok: bool,
    pub var: f64,
    pub expected_var: f64,
    pub var_se: f64,
    pub var_ok: bool,
    pub max_residual_mass: f64,
}

pub fn measure_moment_check(
    weights: &WeightTensor,
    hyper: &Hyperparams,
    n_sims: usize,
    truncation: usize,
    seed: u64,
) -> Result<MomentCheck> {
    let h_b = 0.5; // standard normal mass of (-inf, 0]
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = weights.weights();

    let mut values = Vec::with_capacity(n_sims);
    let mut max_residual = 0.0f64;
    for _ in 0..n_sims {
        // One truncated draw per basis; G(B) sums atom mass in B weighted
        // by the group weights (residual renormalized per basis).
        let mut g_b = 0.0;
        for (b, &wb) in w.iter().enumerate() {
            if wb == 0.0 {
                continue;
            }
            let measure = stick_breaking_draw(
                hyper.alpha_for(b),
                |r: &mut ChaCha8Rng| {
                    let z: f64 = StandardNormal.sample(r);
                    z
                },
                truncation,
                &mut rng,
            )?;
            max_residual = max_residual.max(measure.residual);
            let allocated: f64 = measure.weights.iter().sum();
            let mass: f64 = measure
                .atoms
                .iter()
                .zip(&measure.weights)
                .filter(|(a, _)| **a <= 0.0)
                .map(|(_, pi)| pi)
                .sum();
            g_b += wb * mass / allocated;
        }
        values.push(g_b);
    }

    let nf = n_sims as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let mean_se = (var / nf).sqrt();
    // SE of the sample variance from the empirical fourth moment.
    let m4 = values.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / nf;
    let var_se = ((m4 - var * var).max(0.0) / nf).sqrt();

    let expected_mean = h_b;
    let expected_var: f64 = w
        .iter()
        .enumerate()
        .map(|(b, &wb)| wb * wb * h_b * (1.0 - h_b) / (1.0 + hyper.alpha_for(b)))
        .sum();

    Ok(MomentCheck {
        n_sims,
        mean,
        expected_mean,
        mean_se,
        mean_ok: (mean - expected_mean).abs() < 3.0 * mean_se,
        var,
        expected_var,
        var_se,
        var_ok: (var - expected_var).abs() < 3.0 * var_se,
        max_residual_mass: max_residual,
    })
}
