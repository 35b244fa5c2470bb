//! Factor-group combinatorics: the `(N, J_n, I_n)` skeleton, enumeration of
//! group indices, and row-major flat addressing of group and basis indices.
//!
//! Domain indices are 1-based (matching the usual statistical notation for
//! factor levels); flat offsets are 0-based. Canonical order is row-major
//! with the last index varying fastest.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The combinatorial skeleton of a multilinear model: `N` factor groups,
/// `J_n` observed factors and `I_n` basis measures per group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorConfig {
    factors_per_group: Vec<usize>,
    bases_per_group: Vec<usize>,
}

impl FactorConfig {
    pub fn new(factors_per_group: Vec<usize>, bases_per_group: Vec<usize>) -> Result<Self> {
        if factors_per_group.is_empty() {
            return Err(Error::Config("need at least one factor group".into()));
        }
        if factors_per_group.len() != bases_per_group.len() {
            return Err(Error::Config(format!(
                "factors_per_group has {} groups but bases_per_group has {}",
                factors_per_group.len(),
                bases_per_group.len()
            )));
        }
        if factors_per_group.contains(&0) {
            return Err(Error::Config("every group needs at least one factor".into()));
        }
        if bases_per_group.contains(&0) {
            return Err(Error::Config(
                "every group needs at least one basis measure".into(),
            ));
        }
        let cfg = Self {
            factors_per_group,
            bases_per_group,
        };
        if checked_product(&cfg.factors_per_group).is_none()
            || checked_product(&cfg.bases_per_group).is_none()
        {
            return Err(Error::Config("index space overflows usize".into()));
        }
        Ok(cfg)
    }

    /// Number of factor groups `N`.
    pub fn n_groups(&self) -> usize {
        self.factors_per_group.len()
    }

    /// Factors per group, `[J_1, ..., J_N]`.
    pub fn factors_per_group(&self) -> &[usize] {
        &self.factors_per_group
    }

    /// Basis measures per group, `[I_1, ..., I_N]`.
    pub fn bases_per_group(&self) -> &[usize] {
        &self.bases_per_group
    }

    /// Total number of sample sets, `S = prod J_n`.
    pub fn n_sample_sets(&self) -> usize {
        self.factors_per_group.iter().product()
    }

    /// Total number of basis measures, `I = prod I_n`.
    pub fn n_bases(&self) -> usize {
        self.bases_per_group.iter().product()
    }

    /// The DP degeneration: every `I_n == 1`.
    pub fn is_degenerate(&self) -> bool {
        self.bases_per_group.iter().all(|&i| i == 1)
    }

    /// Same factor layout with all `I_n = 1` (the classical-DP baseline).
    pub fn degenerate(&self) -> Self {
        Self {
            factors_per_group: self.factors_per_group.clone(),
            bases_per_group: vec![1; self.n_groups()],
        }
    }
}

fn checked_product(dims: &[usize]) -> Option<usize> {
    dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}

/// A combination of factors, one per group: `(j_1, ..., j_N)`, 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroupIndex(Vec<usize>);

/// A basis-measure index `(i_1, ..., i_N)`, 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BasisIndex(Vec<usize>);

macro_rules! impl_multi_index {
    ($ty:ident, $dims:ident, $what:literal) => {
        impl $ty {
            pub fn new(indices: Vec<usize>, cfg: &FactorConfig) -> Result<Self> {
                let dims = cfg.$dims();
                if indices.len() != dims.len() {
                    return Err(Error::Shape(format!(
                        concat!($what, " index has {} entries, config has {} groups"),
                        indices.len(),
                        dims.len()
                    )));
                }
                for (n, (&ix, &dim)) in indices.iter().zip(dims).enumerate() {
                    if ix < 1 || ix > dim {
                        return Err(Error::Range(format!(
                            concat!($what, " index {} in group {} outside 1..={}"),
                            ix,
                            n + 1,
                            dim
                        )));
                    }
                }
                Ok(Self(indices))
            }

            /// The 1-based indices `(x_1, ..., x_N)`.
            pub fn indices(&self) -> &[usize] {
                &self.0
            }

            /// Row-major flat offset in `[0, prod dims)`.
            pub fn flat_index(&self, cfg: &FactorConfig) -> usize {
                flatten(&self.0, cfg.$dims())
            }

            /// Inverse of [`Self::flat_index`].
            pub fn from_flat(flat: usize, cfg: &FactorConfig) -> Result<Self> {
                let dims = cfg.$dims();
                let total: usize = dims.iter().product();
                if flat >= total {
                    return Err(Error::Range(format!(
                        concat!("flat ", $what, " index {} outside 0..{}"),
                        flat, total
                    )));
                }
                Ok(Self(unflatten(flat, dims)))
            }
        }
    };
}

impl_multi_index!(GroupIndex, factors_per_group, "group");
impl_multi_index!(BasisIndex, bases_per_group, "basis");

fn flatten(indices: &[usize], dims: &[usize]) -> usize {
    let mut flat = 0;
    for (&ix, &dim) in indices.iter().zip(dims) {
        flat = flat * dim + (ix - 1);
    }
    flat
}

fn unflatten(mut flat: usize, dims: &[usize]) -> Vec<usize> {
    let mut out = vec![1; dims.len()];
    for n in (0..dims.len()).rev() {
        out[n] = flat % dims[n] + 1;
        flat /= dims[n];
    }
    out
}

/// All `S` group indices in canonical row-major order (last group fastest).
pub fn enumerate_groups(cfg: &FactorConfig) -> Vec<GroupIndex> {
    enumerate_dims(cfg.factors_per_group())
        .into_iter()
        .map(GroupIndex)
        .collect()
}

/// All `I` basis indices in canonical row-major order.
pub fn enumerate_bases(cfg: &FactorConfig) -> Vec<BasisIndex> {
    enumerate_dims(cfg.bases_per_group())
        .into_iter()
        .map(BasisIndex)
        .collect()
}

fn enumerate_dims(dims: &[usize]) -> Vec<Vec<usize>> {
    let total: usize = dims.iter().product();
    let mut out = Vec::with_capacity(total);
    let mut current = vec![1; dims.len()];
    for _ in 0..total {
        out.push(current.clone());
        for n in (0..dims.len()).rev() {
            if current[n] < dims[n] {
                current[n] += 1;
                break;
            }
            current[n] = 1;
        }
    }
    out
}
