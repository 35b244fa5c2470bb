//! Independent oracles and synthetic generators for verification: a
//! standalone classical-DP reference sampler, finite-difference gradients,
//! grid-density integrators, two-sample tests, clustering agreement, and a
//! forward simulator of the generative model.
//!
//! Oracle numerics here are deliberately separate from the implementation
//! paths they check: probabilities in linear space where the sampler works
//! in log space, explicit quadrature where the model integrates analytically.

mod dp_reference;
mod grid;
mod synthetic;

pub use dp_reference::DpReferenceSampler;
pub use grid::{grid_density, GridDensity};
pub use synthetic::{
    bayes_optimal_prediction, generate_synthetic, grid2x2_model, grid2x2_spec,
    grid2x2_spec_with_mixing, measure_moment_check, write_synthetic_csv, Grid2x2Variant,
    MomentCheck, SyntheticComponent, SyntheticData, SyntheticSpec, WeightSource,
};

use nalgebra::{DMatrix, DVector};

use crate::components::RegressionComponent;
use crate::data::GroupedDataset;
use crate::error::Result;
use crate::gibbs::{logpost_u, FlatDataset, SamplerState};

/// Central finite differences, error `O(h^2)`.
pub fn finite_diff(f: impl Fn(&[f64]) -> f64, point: &[f64], h: f64) -> Vec<f64> {
    let mut grad = Vec::with_capacity(point.len());
    let mut work = point.to_vec();
    for i in 0..point.len() {
        let orig = work[i];
        work[i] = orig + h;
        let fp = f(&work);
        work[i] = orig - h;
        let fm = f(&work);
        work[i] = orig;
        grad.push((fp - fm) / (2.0 * h));
    }
    grad
}

/// Max per-coordinate relative error between the analytic gradient of the
/// latent-factor log posterior and central finite differences
/// (denominator `max(1, |g_i|)`).
pub fn max_grad_rel_error(state: &SamplerState, data: &FlatDataset, h: f64) -> f64 {
    let flat: Vec<f64> = state
        .latents
        .raw()
        .iter()
        .flatten()
        .flatten()
        .copied()
        .collect();
    let objective = |point: &[f64]| {
        let mut s = state.clone();
        let mut k = 0;
        for n in 1..=data.cfg.n_groups() {
            for j in 1..=data.cfg.factors_per_group()[n - 1] {
                for v in s.latents.vector_mut(n, j).iter_mut() {
                    *v = point[k];
                    k += 1;
                }
            }
        }
        logpost_u(&s, data).expect("finite latents")
    };
    let numeric = finite_diff(objective, &flat, h);
    let analytic: Vec<f64> = crate::gibbs::grad_u(state, data)
        .expect("finite latents")
        .into_iter()
        .flatten()
        .flatten()
        .collect();
    analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(1.0))
        .fold(0.0, f64::max)
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings must cover the same items");
    let n = a.len();
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0u64; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let choose2 = |x: u64| (x * x.saturating_sub(1)) as f64 / 2.0;
    let sum_cells: f64 = table.iter().flatten().map(|&c| choose2(c)).sum();
    let row_sums: Vec<u64> = table.iter().map(|r| r.iter().sum()).collect();
    let col_sums: Vec<u64> = (0..kb).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    let sum_rows: f64 = row_sums.iter().map(|&c| choose2(c)).sum();
    let sum_cols: f64 = col_sums.iter().map(|&c| choose2(c)).sum();
    let total = choose2(n as u64);
    let expected = sum_rows * sum_cols / total;
    let max_index = 0.5 * (sum_rows + sum_cols);
    if (max_index - expected).abs() < 1e-12 {
        return 1.0;
    }
    (sum_cells - expected) / (max_index - expected)
}

/// Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.
pub fn two_sample_ks(a: &[f64], b: &[f64]) -> (f64, f64) {
    assert!(!a.is_empty() && !b.is_empty());
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(|p, q| p.partial_cmp(q).unwrap());
    ys.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let (n, m) = (xs.len(), ys.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let t = xs[i].min(ys[j]);
        while i < n && xs[i] <= t {
            i += 1;
        }
        while j < m && ys[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n as f64 * m as f64) / (n as f64 + m as f64);
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    (d, ks_tail(lambda))
}

fn ks_tail(lambda: f64) -> f64 {
    if lambda < 1e-8 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let term = (-2.0 * (k as f64).powi(2) * lambda * lambda).exp();
        sum += sign * term;
        sign = -sign;
        if term < 1e-12 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// All group design matrices stacked in canonical scan order.
pub fn stack_features(data: &GroupedDataset) -> DMatrix<f64> {
    let n = data.n_samples();
    let p = data.dim();
    let mut out = DMatrix::zeros(n, p);
    let mut row = 0;
    for x in &data.x {
        for r in 0..x.nrows() {
            out.set_row(row, &x.row(r));
            row += 1;
        }
    }
    out
}

/// Standard-covariate component: `mu_x = 0`, `Sigma_x = I`, `sigma_y2 = 0.25`.
pub fn standard_component(p: usize, beta: &[f64]) -> RegressionComponent {
    RegressionComponent::new(
        DVector::zeros(p),
        DMatrix::identity(p, p),
        DVector::from_column_slice(beta),
        0.25,
    )
    .expect("valid component")
}

/// Convenience: modal cluster label per sample across snapshots, as a
/// partition usable for agreement scores.
pub fn modal_labels(trace: &crate::gibbs::Trace) -> Result<Vec<usize>> {
    use std::collections::HashMap;
    if trace.snapshots.is_empty() {
        return Err(crate::error::Error::State(
            "trace has no snapshots to summarize".into(),
        ));
    }
    let n = trace.snapshots[0].basis.len();
    let mut label_ids: HashMap<(usize, usize), usize> = HashMap::new();
    let mut out = Vec::with_capacity(n);
    for m in 0..n {
        let mut counts: HashMap<(usize, usize), usize> = HashMap::new();
        for snap in &trace.snapshots {
            *counts.entry(snap.flat_label(m)).or_insert(0) += 1;
        }
        let modal = counts
            .into_iter()
            .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
            .map(|(label, _)| label)
            .expect("snapshots exist");
        let next = label_ids.len();
        out.push(*label_ids.entry(modal).or_insert(next));
    }
    Ok(out)
}
