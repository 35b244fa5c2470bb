//! The run configuration file: one JSON document covering data schema,
//! factor layout, model hyperparameters, sampler settings, preprocessing,
//! and the experiment protocol.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use mldp::components::BasePrior;
use mldp::data::TableSchema;
use mldp::error::{Error, Result};
use mldp::gibbs::{MldpModel, SamplerConfig, UProposal};
use mldp::multiindex::FactorConfig;
use mldp::prior::Hyperparams;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub data: DataConfig,
    pub factors: FactorsConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub sampler: SamplerSettings,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    #[serde(default)]
    pub experiment: ExperimentConfig,
    #[serde(default)]
    pub simulate: SimulateConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataConfig {
    pub path: PathBuf,
    pub factor_columns: Vec<String>,
    pub feature_columns: Vec<String>,
    pub response_column: String,
    #[serde(default)]
    pub categorical_features: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FactorsConfig {
    pub factors_per_group: Vec<usize>,
    /// Defaults to 2 basis measures per group when omitted.
    pub bases_per_group: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub alpha: f64,
    pub sigma0: f64,
    pub heterogeneous: bool,
    pub per_basis_alpha: Option<Vec<f64>>,
    pub base_prior: Option<BasePriorConfig>,
    pub per_basis_base_prior: Option<Vec<BasePriorConfig>>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            sigma0: 1.0,
            heterogeneous: false,
            per_basis_alpha: None,
            base_prior: None,
            per_basis_base_prior: None,
        }
    }
}

/// Overrides applied on top of the data-driven base-prior defaults
/// (`mu0` = training mean, `psi0` = training covariance, `lambda0` = 1,
/// `nu0` = P + 2, `V` = I, `a_y` = `b_y` = 1). Matrices are row-major.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct BasePriorConfig {
    pub mu0: Option<Vec<f64>>,
    pub lambda0: Option<f64>,
    pub psi0: Option<Vec<f64>>,
    pub nu0: Option<f64>,
    pub v: Option<Vec<f64>>,
    pub a_y: Option<f64>,
    pub b_y: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerSettings {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub aux_clusters: usize,
    pub seed: u64,
    pub u_step: f64,
    pub u_sampler: UProposal,
    pub slice_width: f64,
    pub shuffle_scan: bool,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        let d = SamplerConfig::default();
        Self {
            iterations: d.iterations,
            burn_in: d.burn_in,
            thin: d.thin,
            aux_clusters: d.aux_clusters,
            seed: d.seed,
            u_step: d.u_step,
            u_sampler: d.u_sampler,
            slice_width: d.slice_width,
            shuffle_scan: d.shuffle_scan,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    /// Keep this many principal components; no PCA when omitted.
    pub pca_components: Option<usize>,
    /// Standardize features to unit train-set variance before PCA.
    pub scale: bool,
    /// Apply log(1 + y) to the response.
    pub log1p_response: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub split_fraction: f64,
    pub repetitions: usize,
    pub metric: Metric,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            split_fraction: 0.5,
            repetitions: 10,
            metric: Metric::Rmse,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Rmse,
    Auc,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateConfig {
    pub n_sims: usize,
    pub truncation: usize,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            n_sims: 10_000,
            truncation: 60,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Input(format!("cannot read config '{}': {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("malformed config '{}': {e}", path.display())))?;
        cfg.sampler_config().validate()?;
        cfg.factor_config()?;
        if !(cfg.experiment.split_fraction > 0.0 && cfg.experiment.split_fraction < 1.0) {
            return Err(Error::Config(
                "experiment.split_fraction must lie strictly between 0 and 1".into(),
            ));
        }
        if cfg.experiment.repetitions == 0 {
            return Err(Error::Config("experiment.repetitions must be positive".into()));
        }
        Ok(cfg)
    }

    pub fn schema(&self) -> TableSchema {
        TableSchema {
            factor_columns: self.data.factor_columns.clone(),
            feature_columns: self.data.feature_columns.clone(),
            response_column: self.data.response_column.clone(),
            categorical_features: self.data.categorical_features.clone(),
        }
    }

    pub fn factor_config(&self) -> Result<FactorConfig> {
        let j = self.factors.factors_per_group.clone();
        let i = self
            .factors
            .bases_per_group
            .clone()
            .unwrap_or_else(|| vec![2; j.len()]);
        FactorConfig::new(j, i)
    }

    /// The DP baseline layout: identical factors, one basis per group.
    pub fn degenerate_factor_config(&self) -> Result<FactorConfig> {
        Ok(self.factor_config()?.degenerate())
    }

    pub fn hyperparams(&self) -> Result<Hyperparams> {
        Hyperparams::with_heterogeneous(
            self.model.alpha,
            self.model.sigma0,
            self.model.heterogeneous,
            self.model.per_basis_alpha.clone(),
        )
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            aux_clusters: self.sampler.aux_clusters,
            iterations: self.sampler.iterations,
            burn_in: self.sampler.burn_in,
            thin: self.sampler.thin,
            seed: self.sampler.seed,
            u_step: self.sampler.u_step,
            u_sampler: self.sampler.u_sampler,
            slice_width: self.sampler.slice_width,
            shuffle_scan: self.sampler.shuffle_scan,
        }
    }

    /// Resolve the base prior: data-driven defaults from the training
    /// features, then any configured overrides.
    pub fn base_prior(&self, train_x: &DMatrix<f64>) -> Result<BasePrior> {
        resolve_base_prior(self.model.base_prior.as_ref(), train_x)
    }

    /// Build the model over a given factor configuration (lets the DP
    /// baseline reuse everything but the basis counts).
    pub fn model(&self, cfg: FactorConfig, train_x: &DMatrix<f64>) -> Result<MldpModel> {
        let model = MldpModel::new(cfg, self.hyperparams()?, self.base_prior(train_x)?);
        match &self.model.per_basis_base_prior {
            Some(configs) => {
                let bases = configs
                    .iter()
                    .map(|c| resolve_base_prior(Some(c), train_x))
                    .collect::<Result<Vec<_>>>()?;
                model.with_per_basis_base(bases)
            }
            None => Ok(model),
        }
    }

    /// The single-basis DP baseline: heterogeneous per-basis settings do not
    /// apply to one shared measure, so it runs with the homogeneous
    /// concentration and base prior.
    pub fn baseline_model(&self, train_x: &DMatrix<f64>) -> Result<MldpModel> {
        Ok(MldpModel::new(
            self.degenerate_factor_config()?,
            Hyperparams::new(self.model.alpha, self.model.sigma0)?,
            self.base_prior(train_x)?,
        ))
    }
}

fn resolve_base_prior(cfg: Option<&BasePriorConfig>, train_x: &DMatrix<f64>) -> Result<BasePrior> {
    let defaults = BasePrior::data_driven(train_x)?;
    let Some(cfg) = cfg else {
        return Ok(defaults);
    };
    let p = defaults.dim();
    let matrix = |flat: &Vec<f64>, name: &str| -> Result<DMatrix<f64>> {
        if flat.len() != p * p {
            return Err(Error::Config(format!(
                "{name} override needs {} entries for P = {p}",
                p * p
            )));
        }
        Ok(DMatrix::from_row_slice(p, p, flat))
    };
    let mu0 = match &cfg.mu0 {
        Some(v) if v.len() == p => DVector::from_column_slice(v),
        Some(v) => {
            return Err(Error::Config(format!(
                "mu0 override has {} entries, P = {p}",
                v.len()
            )))
        }
        None => defaults.mu0(),
    };
    let psi0 = match &cfg.psi0 {
        Some(m) => matrix(m, "psi0")?,
        None => defaults.psi0(),
    };
    let v = match &cfg.v {
        Some(m) => matrix(m, "v")?,
        None => defaults.v(),
    };
    BasePrior::new(
        mu0,
        cfg.lambda0.unwrap_or(defaults.lambda0()),
        psi0,
        cfg.nu0.unwrap_or(defaults.nu0()),
        v,
        cfg.a_y.unwrap_or(defaults.a_y()),
        cfg.b_y.unwrap_or(defaults.b_y()),
    )
}
