//! Dataset ingestion and preprocessing: CSV loading, one-hot coding of
//! categoricals, PCA fit/transform with train-learned loadings, seeded
//! splits, and grouping of rows by their factor combination.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::multiindex::{FactorConfig, GroupIndex};

/// Column roles for a dataset file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSchema {
    pub factor_columns: Vec<String>,
    pub feature_columns: Vec<String>,
    pub response_column: String,
    /// Feature columns to one-hot encode; the rest must be numeric.
    #[serde(default)]
    pub categorical_features: Vec<String>,
}

/// A typed column.
#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Numeric(Vec<f64>),
    Categorical(Vec<String>),
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Numeric(v) => v.len(),
            Column::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// An in-memory typed table with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub headers: Vec<String>,
    pub columns: Vec<Column>,
    pub n_rows: usize,
}

impl RawTable {
    pub fn column(&self, name: &str) -> Result<&Column> {
        let pos = self
            .headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Input(format!("column '{name}' not found")))?;
        Ok(&self.columns[pos])
    }

    pub fn numeric_column(&self, name: &str) -> Result<&[f64]> {
        match self.column(name)? {
            Column::Numeric(v) => Ok(v),
            Column::Categorical(_) => {
                Err(Error::Input(format!("column '{name}' is not numeric")))
            }
        }
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> RawTable {
        let columns = self
            .columns
            .iter()
            .map(|c| match c {
                Column::Numeric(v) => Column::Numeric(rows.iter().map(|&r| v[r]).collect()),
                Column::Categorical(v) => {
                    Column::Categorical(rows.iter().map(|&r| v[r].clone()).collect())
                }
            })
            .collect();
        RawTable {
            headers: self.headers.clone(),
            columns,
            n_rows: rows.len(),
        }
    }

    /// Matrix of the schema's feature columns (all must be numeric).
    pub fn feature_matrix(&self, schema: &TableSchema) -> Result<DMatrix<f64>> {
        let mut cols = Vec::with_capacity(schema.feature_columns.len());
        for name in &schema.feature_columns {
            cols.push(self.numeric_column(name)?);
        }
        Ok(DMatrix::from_fn(self.n_rows, cols.len(), |r, c| cols[c][r]))
    }

    /// Replace the schema's feature columns with the columns of `x`,
    /// named `name_prefix1..name_prefixK`. Factor and response columns
    /// are preserved.
    pub fn with_feature_matrix(
        &self,
        schema: &TableSchema,
        x: &DMatrix<f64>,
        name_prefix: &str,
    ) -> Result<(RawTable, TableSchema)> {
        if x.nrows() != self.n_rows {
            return Err(Error::Shape(format!(
                "replacement features have {} rows, table has {}",
                x.nrows(),
                self.n_rows
            )));
        }
        let keep: Vec<usize> = self
            .headers
            .iter()
            .enumerate()
            .filter(|(_, h)| !schema.feature_columns.contains(h))
            .map(|(i, _)| i)
            .collect();
        let mut headers: Vec<String> = keep.iter().map(|&i| self.headers[i].clone()).collect();
        let mut columns: Vec<Column> = keep.iter().map(|&i| self.columns[i].clone()).collect();
        let mut feature_columns = Vec::with_capacity(x.ncols());
        for c in 0..x.ncols() {
            let name = format!("{name_prefix}{}", c + 1);
            headers.push(name.clone());
            feature_columns.push(name);
            columns.push(Column::Numeric(x.column(c).iter().copied().collect()));
        }
        Ok((
            RawTable {
                headers,
                columns,
                n_rows: self.n_rows,
            },
            TableSchema {
                factor_columns: schema.factor_columns.clone(),
                feature_columns,
                response_column: schema.response_column.clone(),
                categorical_features: Vec::new(),
            },
        ))
    }
}

/// Load a CSV file and type its columns according to the schema: the
/// response and non-categorical feature columns must parse as numbers,
/// factor columns and categorical features stay as strings (numeric factor
/// columns are kept numeric).
pub fn load_csv(path: &Path, schema: &TableSchema) -> Result<RawTable> {
    load_csv_impl(path, schema, true, false).map(|(t, _)| t)
}

/// Variant for prediction inputs: the response column may be absent (a zero
/// column is appended so the schema still applies) and zero data rows are
/// allowed. Returns whether a response column was present.
pub fn load_csv_optional_response(
    path: &Path,
    schema: &TableSchema,
) -> Result<(RawTable, bool)> {
    load_csv_impl(path, schema, false, true)
}

fn load_csv_impl(
    path: &Path,
    schema: &TableSchema,
    require_response: bool,
    allow_empty: bool,
) -> Result<(RawTable, bool)> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| {
        Error::Input(format!("cannot open '{}': {e}", path.display()))
    })?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Input(format!("cannot read header of '{}': {e}", path.display())))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();

    let has_response = headers.iter().any(|h| h == &schema.response_column);
    let mut required: Vec<&String> = schema
        .factor_columns
        .iter()
        .chain(&schema.feature_columns)
        .collect();
    if require_response {
        required.push(&schema.response_column);
    }
    for name in required {
        if !headers.iter().any(|h| h == name) {
            return Err(Error::Input(format!(
                "required column '{name}' missing from '{}'",
                path.display()
            )));
        }
    }

    let mut raw_cells: Vec<Vec<String>> = vec![Vec::new(); headers.len()];
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            Error::Input(format!("row {}: malformed CSV record: {e}", row_idx + 1))
        })?;
        if record.len() != headers.len() {
            return Err(Error::Input(format!(
                "row {}: has {} cells, header has {}",
                row_idx + 1,
                record.len(),
                headers.len()
            )));
        }
        for (c, cell) in record.iter().enumerate() {
            raw_cells[c].push(cell.trim().to_string());
        }
    }
    let n_rows = raw_cells.first().map_or(0, |c| c.len());
    if n_rows == 0 && !allow_empty {
        return Err(Error::Input(format!(
            "'{}' contains no data rows",
            path.display()
        )));
    }

    let must_be_numeric = |name: &String| {
        name == &schema.response_column
            || (schema.feature_columns.contains(name)
                && !schema.categorical_features.contains(name))
    };

    let mut columns = Vec::with_capacity(headers.len());
    for (name, cells) in headers.iter().zip(raw_cells) {
        if must_be_numeric(name) {
            let mut vals = Vec::with_capacity(cells.len());
            for (r, cell) in cells.iter().enumerate() {
                let v: f64 = cell.parse().map_err(|_| {
                    Error::Input(format!(
                        "row {}, column '{name}': cannot parse '{cell}' as a number",
                        r + 1
                    ))
                })?;
                vals.push(v);
            }
            columns.push(Column::Numeric(vals));
        } else {
            // Keep factor/categorical/unused columns as numbers when they all
            // parse, otherwise as strings.
            let parsed: Option<Vec<f64>> = cells.iter().map(|c| c.parse().ok()).collect();
            match parsed {
                Some(vals) => columns.push(Column::Numeric(vals)),
                None => columns.push(Column::Categorical(cells)),
            }
        }
    }

    let mut headers = headers;
    if !has_response && !require_response {
        headers.push(schema.response_column.clone());
        columns.push(Column::Numeric(vec![0.0; n_rows]));
    }

    Ok((
        RawTable {
            headers,
            columns,
            n_rows,
        },
        has_response,
    ))
}

/// One-hot encoder with lexicographically ordered levels learned at fit time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryEncoder {
    /// Per encoded column: (name, sorted levels).
    levels: Vec<(String, Vec<String>)>,
}

impl BinaryEncoder {
    /// Learn the level sets of the given categorical columns.
    pub fn fit(table: &RawTable, columns: &[String]) -> Result<Self> {
        let mut levels = Vec::with_capacity(columns.len());
        for name in columns {
            let values = column_as_strings(table, name)?;
            let mut set: Vec<String> = values.to_vec();
            set.sort();
            set.dedup();
            levels.push((name.clone(), set));
        }
        Ok(Self { levels })
    }

    /// Expand each fitted column into one indicator column per level;
    /// untouched columns pass through. Errors on a level unseen at fit time.
    pub fn transform(
        &self,
        table: &RawTable,
        schema: &TableSchema,
    ) -> Result<(RawTable, TableSchema)> {
        let mut headers = Vec::new();
        let mut columns = Vec::new();
        let mut feature_columns = Vec::new();

        for (name, col) in table.headers.iter().zip(&table.columns) {
            match self.levels.iter().find(|(n, _)| n == name) {
                Some((_, levels)) => {
                    let values = column_as_strings(table, name)?;
                    for level in levels {
                        let indicator: Vec<f64> = values
                            .iter()
                            .map(|v| if v == level { 1.0 } else { 0.0 })
                            .collect();
                        let new_name = format!("{name}={level}");
                        headers.push(new_name.clone());
                        feature_columns.push(new_name);
                        columns.push(Column::Numeric(indicator));
                    }
                    for (r, v) in values.iter().enumerate() {
                        if !levels.contains(v) {
                            return Err(Error::Input(format!(
                                "row {}, column '{name}': level '{v}' was not seen when the encoder was fitted",
                                r + 1
                            )));
                        }
                    }
                }
                None => {
                    headers.push(name.clone());
                    columns.push(col.clone());
                    if schema.feature_columns.contains(name) {
                        feature_columns.push(name.clone());
                    }
                }
            }
        }

        Ok((
            RawTable {
                headers,
                columns,
                n_rows: table.n_rows,
            },
            TableSchema {
                factor_columns: schema.factor_columns.clone(),
                feature_columns,
                response_column: schema.response_column.clone(),
                categorical_features: Vec::new(),
            },
        ))
    }
}

fn column_as_strings(table: &RawTable, name: &str) -> Result<Vec<String>> {
    match table.column(name)? {
        Column::Categorical(v) => Ok(v.clone()),
        Column::Numeric(v) => Ok(v.iter().map(|x| format!("{x}")).collect()),
    }
}

/// Fit + transform in one step (levels learned from this same table).
pub fn binary_encode(table: &RawTable, schema: &TableSchema) -> Result<(RawTable, TableSchema)> {
    let encoder = BinaryEncoder::fit(table, &schema.categorical_features)?;
    encoder.transform(table, schema)
}

/// PCA model: training mean and top-k orthonormal loadings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub center: Vec<f64>,
    /// Row-major P_raw x K loadings.
    pub loadings: Vec<f64>,
    pub input_dim: usize,
    pub k: usize,
}

impl PcaModel {
    pub fn loadings_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.input_dim, self.k, &self.loadings)
    }
}

/// Fit PCA on training data: center by the training mean, take the top-k
/// principal directions by descending eigenvalue. Sign convention: the
/// largest-magnitude entry of each loading is positive.
pub fn pca_fit(x_train: &DMatrix<f64>, k: usize) -> Result<PcaModel> {
    let n = x_train.nrows();
    let p = x_train.ncols();
    if n < 2 {
        return Err(Error::Config("PCA needs at least two rows".into()));
    }
    if k == 0 || k > p || k > n - 1 {
        return Err(Error::Config(format!(
            "PCA k = {k} must lie in 1..=min(rows - 1, cols) = {}",
            p.min(n - 1)
        )));
    }
    let mean = x_train.row_mean();
    let mut centered = x_train.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    let svd = centered.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Numeric("SVD failed to produce right singular vectors".into()))?;

    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .expect("singular values are finite")
    });

    let mut loadings = DMatrix::zeros(p, k);
    for (col, &si) in order.iter().take(k).enumerate() {
        let mut direction: DVector<f64> = v_t.row(si).transpose();
        // Fix the sign so results do not depend on SVD internals.
        let dominant = direction
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        if direction[dominant] < 0.0 {
            direction = -direction;
        }
        loadings.set_column(col, &direction);
    }

    Ok(PcaModel {
        center: mean.iter().copied().collect(),
        loadings: loadings.transpose().as_slice().to_vec(),
        input_dim: p,
        k,
    })
}

/// Apply a fitted PCA: subtract the training center, project onto loadings.
pub fn pca_transform(model: &PcaModel, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.ncols() != model.input_dim {
        return Err(Error::Shape(format!(
            "PCA input has {} columns, model expects {}",
            x.ncols(),
            model.input_dim
        )));
    }
    let mut centered = x.clone();
    let center = DVector::from_column_slice(&model.center).transpose();
    for mut row in centered.row_iter_mut() {
        row -= &center;
    }
    Ok(centered * model.loadings_matrix())
}

/// Deterministic disjoint split: `ceil(fraction * n)` training rows, the
/// rest test, shuffled by the seed.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!(
            "split fraction {fraction} must lie strictly between 0 and 1"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let n_train = (fraction * n as f64).ceil() as usize;
    let test = order.split_off(n_train.min(n));
    Ok((order, test))
}

/// Split a table into disjoint, exhaustive train/test tables.
pub fn split(table: &RawTable, fraction: f64, seed: u64) -> Result<(RawTable, RawTable)> {
    let (train_rows, test_rows) = split_indices(table.n_rows, fraction, seed)?;
    Ok((table.select_rows(&train_rows), table.select_rows(&test_rows)))
}

/// Samples for every factor combination: design matrix, responses, and the
/// originating table rows. Empty groups are allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedDataset {
    pub cfg: FactorConfig,
    /// Indexed by flat group index.
    pub x: Vec<DMatrix<f64>>,
    pub y: Vec<Vec<f64>>,
    pub rows: Vec<Vec<usize>>,
    pub feature_names: Vec<String>,
}

impl GroupedDataset {
    pub fn n_samples(&self) -> usize {
        self.y.iter().map(|v| v.len()).sum()
    }

    pub fn dim(&self) -> usize {
        self.x.first().map_or(0, |m| m.ncols())
    }
}

/// Factor-column coder: numeric columns pass through as 1-based integers,
/// string columns get lexicographically sorted levels learned at fit time.
/// Fitting once and reusing it keeps level numbering consistent across
/// train/test splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorCoder {
    columns: Vec<String>,
    /// `None` for numeric passthrough columns.
    levels: Vec<Option<Vec<String>>>,
}

impl FactorCoder {
    pub fn fit(table: &RawTable, schema: &TableSchema, cfg: &FactorConfig) -> Result<Self> {
        if schema.factor_columns.len() != cfg.n_groups() {
            return Err(Error::Config(format!(
                "{} factor columns declared but config has {} groups",
                schema.factor_columns.len(),
                cfg.n_groups()
            )));
        }
        let mut levels = Vec::with_capacity(schema.factor_columns.len());
        for (n, name) in schema.factor_columns.iter().enumerate() {
            match table.column(name)? {
                Column::Numeric(_) => levels.push(None),
                Column::Categorical(vals) => {
                    let mut set: Vec<String> = vals.to_vec();
                    set.sort();
                    set.dedup();
                    let j_n = cfg.factors_per_group()[n];
                    if set.len() > j_n {
                        return Err(Error::Input(format!(
                            "factor column '{name}' has {} levels, config declares {j_n}",
                            set.len()
                        )));
                    }
                    levels.push(Some(set));
                }
            }
        }
        Ok(Self {
            columns: schema.factor_columns.clone(),
            levels,
        })
    }

    /// 1-based levels of one factor column.
    fn column_levels(
        &self,
        table: &RawTable,
        n: usize,
        j_n: usize,
    ) -> Result<Vec<usize>> {
        let name = &self.columns[n];
        match (table.column(name)?, &self.levels[n]) {
            (Column::Numeric(vals), _) => {
                let mut out = Vec::with_capacity(vals.len());
                for (r, &v) in vals.iter().enumerate() {
                    let as_int = v.round();
                    if (v - as_int).abs() > 1e-9 || as_int < 1.0 || as_int > j_n as f64 {
                        return Err(Error::Input(format!(
                            "row {}, factor column '{name}': value {v} not an integer in 1..={j_n}",
                            r + 1
                        )));
                    }
                    out.push(as_int as usize);
                }
                Ok(out)
            }
            (Column::Categorical(vals), Some(levels)) => {
                let index: BTreeMap<&String, usize> = levels
                    .iter()
                    .enumerate()
                    .map(|(i, l)| (l, i + 1))
                    .collect();
                vals.iter()
                    .enumerate()
                    .map(|(r, v)| {
                        index.get(v).copied().ok_or_else(|| {
                            Error::Input(format!(
                                "row {}, factor column '{name}': level '{v}' unseen at fit time",
                                r + 1
                            ))
                        })
                    })
                    .collect()
            }
            (Column::Categorical(_), None) => Err(Error::Input(format!(
                "factor column '{name}' was numeric at fit time but is categorical now"
            ))),
        }
    }

    /// The group index of every row.
    pub fn row_groups(&self, table: &RawTable, cfg: &FactorConfig) -> Result<Vec<GroupIndex>> {
        let mut per_column = Vec::with_capacity(cfg.n_groups());
        for n in 0..cfg.n_groups() {
            per_column.push(self.column_levels(table, n, cfg.factors_per_group()[n])?);
        }
        (0..table.n_rows)
            .map(|r| {
                let indices: Vec<usize> = per_column.iter().map(|c| c[r]).collect();
                GroupIndex::new(indices, cfg)
            })
            .collect()
    }
}

/// The group index of every row, with level maps learned from this table.
pub fn row_groups(
    table: &RawTable,
    schema: &TableSchema,
    cfg: &FactorConfig,
) -> Result<Vec<GroupIndex>> {
    FactorCoder::fit(table, schema, cfg)?.row_groups(table, cfg)
}

/// Partition rows by their factor combination, conserving every row.
/// Level maps are learned from this table; use
/// [`group_by_factors_with`] to reuse maps fitted elsewhere.
pub fn group_by_factors(
    table: &RawTable,
    schema: &TableSchema,
    cfg: &FactorConfig,
) -> Result<GroupedDataset> {
    let coder = FactorCoder::fit(table, schema, cfg)?;
    group_by_factors_with(&coder, table, schema, cfg)
}

/// Partition rows using an already-fitted factor coder.
pub fn group_by_factors_with(
    coder: &FactorCoder,
    table: &RawTable,
    schema: &TableSchema,
    cfg: &FactorConfig,
) -> Result<GroupedDataset> {
    let groups = coder.row_groups(table, cfg)?;
    let features = table.feature_matrix(schema)?;
    let response = table.numeric_column(&schema.response_column)?;

    let s = cfg.n_sample_sets();
    let mut member_rows: Vec<Vec<usize>> = vec![Vec::new(); s];
    for (r, g) in groups.iter().enumerate() {
        member_rows[g.flat_index(cfg)].push(r);
    }

    let p = features.ncols();
    let mut x = Vec::with_capacity(s);
    let mut y = Vec::with_capacity(s);
    for rows in &member_rows {
        let mut m = DMatrix::zeros(rows.len(), p);
        let mut resp = Vec::with_capacity(rows.len());
        for (i, &r) in rows.iter().enumerate() {
            m.set_row(i, &features.row(r));
            resp.push(response[r]);
        }
        x.push(m);
        y.push(resp);
    }

    Ok(GroupedDataset {
        cfg: cfg.clone(),
        x,
        y,
        rows: member_rows,
        feature_names: schema.feature_columns.clone(),
    })
}
