//! The shared fit/predict pipeline: ingest, one-hot coding, response
//! transform, train-fitted scaling and PCA, grouping, and sampling.
//!
//! Level maps and indicator columns are learned on the full table so the
//! feature layout is identical across split repetitions; scaling and PCA
//! are fitted on training rows only and applied to test rows with the
//! learned parameters.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use mldp::data::{
    group_by_factors_with, load_csv, pca_fit, pca_transform, BinaryEncoder, FactorCoder,
    GroupedDataset, PcaModel, RawTable, TableSchema,
};
use mldp::error::{Error, Result};
use mldp::gibbs::{FlatDataset, GibbsSampler, MldpModel, Trace};
use mldp::multiindex::{FactorConfig, GroupIndex};
use mldp::predict::PredictionRequest;

use crate::config::RunConfig;

/// Column standardizer with train-set statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl Scaler {
    pub fn fit(x: &DMatrix<f64>) -> Self {
        let n = x.nrows().max(1) as f64;
        let mean: Vec<f64> = (0..x.ncols())
            .map(|c| x.column(c).iter().sum::<f64>() / n)
            .collect();
        let std: Vec<f64> = (0..x.ncols())
            .map(|c| {
                let m = mean[c];
                let var = x.column(c).iter().map(|v| (v - m).powi(2)).sum::<f64>()
                    / (n - 1.0).max(1.0);
                let s = var.sqrt();
                // Constant columns stay centered only.
                if s < 1e-12 {
                    1.0
                } else {
                    s
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn transform(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |r, c| {
            (x[(r, c)] - self.mean[c]) / self.std[c]
        })
    }
}

/// Ingested table with the full-data fitted pieces of the pipeline.
pub struct PreparedTable {
    pub table: RawTable,
    pub schema: TableSchema,
    pub encoder: BinaryEncoder,
    pub coder: FactorCoder,
    pub factor_cfg: FactorConfig,
}

/// Load the configured CSV, one-hot the categorical features, apply the
/// response transform, and fit the factor level maps.
pub fn prepare_table(run: &RunConfig) -> Result<PreparedTable> {
    let schema = run.schema();
    let raw = load_csv(&run.data.path, &schema)?;
    let encoder = BinaryEncoder::fit(&raw, &schema.categorical_features)?;
    let (mut table, schema) = encoder.transform(&raw, &schema)?;
    if run.preprocess.log1p_response {
        apply_log1p(&mut table, &schema.response_column)?;
    }
    let factor_cfg = run.factor_config()?;
    let coder = FactorCoder::fit(&table, &schema, &factor_cfg)?;
    Ok(PreparedTable {
        table,
        schema,
        encoder,
        coder,
        factor_cfg,
    })
}

fn apply_log1p(table: &mut RawTable, response: &str) -> Result<()> {
    let pos = table
        .headers
        .iter()
        .position(|h| h == response)
        .ok_or_else(|| Error::Input(format!("response column '{response}' missing")))?;
    match &mut table.columns[pos] {
        mldp::data::Column::Numeric(vals) => {
            for (r, v) in vals.iter_mut().enumerate() {
                if *v <= -1.0 {
                    return Err(Error::Input(format!(
                        "row {}: response {v} below -1 cannot be log1p-transformed",
                        r + 1
                    )));
                }
                *v = v.ln_1p();
            }
            Ok(())
        }
        _ => Err(Error::Input(format!(
            "response column '{response}' is not numeric"
        ))),
    }
}

/// Scaling + PCA fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTransform {
    pub scaler: Option<Scaler>,
    pub pca: Option<PcaModel>,
}

impl FeatureTransform {
    pub fn fit(run: &RunConfig, train_x: &DMatrix<f64>) -> Result<Self> {
        let scaler = run.preprocess.scale.then(|| Scaler::fit(train_x));
        let scaled = match &scaler {
            Some(s) => s.transform(train_x),
            None => train_x.clone(),
        };
        let pca = match run.preprocess.pca_components {
            Some(k) => Some(pca_fit(&scaled, k)?),
            None => None,
        };
        Ok(Self { scaler, pca })
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let scaled = match &self.scaler {
            Some(s) => s.transform(x),
            None => x.clone(),
        };
        match &self.pca {
            Some(model) => pca_transform(model, &scaled),
            None => Ok(scaled),
        }
    }
}

/// A design ready for the sampler: grouped training data plus the fitted
/// transform for mapping any further rows into the model's feature space.
pub struct Design {
    pub grouped: GroupedDataset,
    pub flat: FlatDataset,
    pub train_x: DMatrix<f64>,
    pub transform: FeatureTransform,
}

/// Build the design from training rows (`None` = all rows).
pub fn build_design(
    run: &RunConfig,
    prepared: &PreparedTable,
    factor_cfg: &FactorConfig,
    train_rows: Option<&[usize]>,
) -> Result<Design> {
    let train_table = match train_rows {
        Some(rows) => prepared.table.select_rows(rows),
        None => prepared.table.clone(),
    };
    let raw_x = train_table.feature_matrix(&prepared.schema)?;
    let transform = FeatureTransform::fit(run, &raw_x)?;
    let x = transform.apply(&raw_x)?;
    let prefix = if transform.pca.is_some() { "pc" } else { "f" };
    let (table, schema) = train_table.with_feature_matrix(&prepared.schema, &x, prefix)?;
    let grouped = group_by_factors_with(&prepared.coder, &table, &schema, factor_cfg)?;
    let flat = FlatDataset::from_grouped(&grouped)?;
    Ok(Design {
        grouped,
        flat,
        train_x: x,
        transform,
    })
}

/// Fit a chain on a design.
pub fn fit_design(
    run: &RunConfig,
    factor_cfg: FactorConfig,
    design: &Design,
    seed: u64,
) -> Result<(MldpModel, Trace)> {
    let model = run.model(factor_cfg, &design.train_x)?;
    let mut sampler_cfg = run.sampler_config();
    sampler_cfg.seed = seed;
    let mut sampler = GibbsSampler::new(&model, &design.flat, sampler_cfg)?;
    let trace = sampler.run()?;
    Ok((model, trace))
}

/// Prediction requests for arbitrary rows of a prepared table, mapped
/// through a fitted transform.
pub fn requests_for_rows(
    prepared: &PreparedTable,
    factor_cfg: &FactorConfig,
    transform: &FeatureTransform,
    table: &RawTable,
) -> Result<Vec<PredictionRequest>> {
    let raw_x = table.feature_matrix(&prepared.schema)?;
    let x = transform.apply(&raw_x)?;
    let groups: Vec<GroupIndex> = prepared.coder.row_groups(table, factor_cfg)?;
    Ok(groups
        .into_iter()
        .enumerate()
        .map(|(r, group)| PredictionRequest {
            x: DVector::from_column_slice(x.row(r).transpose().as_slice()),
            group,
        })
        .collect())
}

/// Responses of a table as a plain vector.
pub fn responses(table: &RawTable, schema: &TableSchema) -> Result<Vec<f64>> {
    Ok(table.numeric_column(&schema.response_column)?.to_vec())
}
