//! Posterior-predictive point prediction from a fitted trace.
//!
//! Per snapshot, a new covariate vector is softly assigned over every
//! (basis, cluster) candidate with responsibility proportional to
//! `w_b * l_k/(L_b + alpha_b) * N(x; mu_k, Sigma_k)`, plus one prior-mass
//! candidate per basis proportional to
//! `w_b * alpha_b/(L_b + alpha_b) * q(x)`, where `q` is a fixed-seed
//! Monte-Carlo estimate of the prior predictive covariate density. The
//! prediction is the responsibility-weighted mean response (the prior-mass
//! candidate contributes the zero prior-mean response), averaged over
//! snapshots.

use nalgebra::DVector;
use rand_chacha::ChaCha8Rng;

use crate::components::{log_density_x_cached, sample_prior, LikelihoodCache, RegressionComponent};
use crate::error::{Error, Result};
use crate::gibbs::{stream_rng, Snapshot, Trace, TraceHeader};
use crate::multiindex::GroupIndex;
use crate::prior::{compute_weights, LatentFactors};

/// Monte-Carlo draws behind the prior-predictive covariate density.
pub const PRIOR_PREDICTIVE_DRAWS: usize = 64;

/// RNG stream id for the snapshot-derived prior-predictive draws.
pub const STREAM_PRIOR_PREDICTIVE: u64 = 6;

/// A point to predict: features plus the factor combination they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRequest {
    pub x: DVector<f64>,
    pub group: GroupIndex,
}

/// Point prediction with its per-snapshot values.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub per_snapshot: Vec<f64>,
}

/// One snapshot's soft assignment for a request, exposed for verification.
#[derive(Debug, Clone)]
pub struct SnapshotPrediction {
    pub y_hat: f64,
    /// Per basis: cluster responsibilities then the prior-mass candidate.
    pub responsibilities: Vec<f64>,
}

struct PreparedCluster {
    size: f64,
    phi: RegressionComponent,
    cache: LikelihoodCache,
}

/// A snapshot converted once for repeated prediction.
pub struct PreparedSnapshot {
    latents: LatentFactors,
    clusters: Vec<Vec<PreparedCluster>>,
    prior_draws: Vec<Vec<(RegressionComponent, LikelihoodCache)>>,
}

impl PreparedSnapshot {
    fn build(header: &TraceHeader, snapshot: &Snapshot) -> Result<Self> {
        let latents = LatentFactors::new(
            snapshot.u.clone(),
            snapshot.sigma_u.clone(),
            &header.cfg,
        )?;
        let clusters = snapshot
            .clusters
            .iter()
            .map(|basis| {
                basis
                    .iter()
                    .map(|c| {
                        let phi = c.phi.to_component()?;
                        let cache = phi.likelihood_cache();
                        Ok(PreparedCluster {
                            size: c.size as f64,
                            phi,
                            cache,
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;

        // Fixed-seed prior draws: deterministic given the trace. One shared
        // set under a homogeneous base, one per basis otherwise.
        let n_bases = header.cfg.n_bases();
        let mut rng: ChaCha8Rng = stream_rng(snapshot.sweep as u64, STREAM_PRIOR_PREDICTIVE);
        let draw_set = |rng: &mut ChaCha8Rng, basis: usize| -> Result<Vec<_>> {
            (0..PRIOR_PREDICTIVE_DRAWS)
                .map(|_| {
                    let phi = sample_prior(header.base_for(basis), rng)?;
                    let cache = phi.likelihood_cache();
                    Ok((phi, cache))
                })
                .collect()
        };
        let prior_draws = if header.per_basis_base.is_some() {
            (0..n_bases)
                .map(|b| draw_set(&mut rng, b))
                .collect::<Result<Vec<_>>>()?
        } else {
            let shared = draw_set(&mut rng, 0)?;
            vec![shared; n_bases]
        };

        Ok(Self {
            latents,
            clusters,
            prior_draws,
        })
    }

    /// Responsibilities and the predicted mean for one request.
    pub fn predict(&self, header: &TraceHeader, req: &PredictionRequest) -> Result<SnapshotPrediction> {
        let w = compute_weights(&self.latents, &req.group, &header.cfg)?;
        let mut terms: Vec<(f64, f64)> = Vec::new(); // (unnormalized resp, response)
        for (b, clusters) in self.clusters.iter().enumerate() {
            let alpha = header.hyper.alpha_for(b);
            let l_total: f64 = clusters.iter().map(|c| c.size).sum();
            let wb = w.weights()[b];
            for c in clusters {
                let density = log_density_x_cached(&c.phi, &c.cache, &req.x).exp();
                let resp = wb * c.size / (l_total + alpha) * density;
                terms.push((resp, c.phi.predict_mean(&req.x)));
            }
            let prior_density = self.prior_draws[b]
                .iter()
                .map(|(phi, cache)| log_density_x_cached(phi, cache, &req.x).exp())
                .sum::<f64>()
                / PRIOR_PREDICTIVE_DRAWS as f64;
            // The fresh-component candidate carries the prior-mean response 0.
            terms.push((wb * alpha / (l_total + alpha) * prior_density, 0.0));
        }
        let total: f64 = terms.iter().map(|(r, _)| r).sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::Numeric(
                "prediction responsibilities degenerate".into(),
            ));
        }
        let responsibilities: Vec<f64> = terms.iter().map(|(r, _)| r / total).collect();
        let y_hat = terms
            .iter()
            .map(|(r, y)| r / total * y)
            .sum();
        Ok(SnapshotPrediction {
            y_hat,
            responsibilities,
        })
    }
}

fn check_request(header: &TraceHeader, req: &PredictionRequest) -> Result<()> {
    if req.x.len() != header.dim {
        return Err(Error::Shape(format!(
            "request has {} features, trace was fitted with {}",
            req.x.len(),
            header.dim
        )));
    }
    GroupIndex::new(req.group.indices().to_vec(), &header.cfg)?;
    Ok(())
}

/// Prepare every snapshot of a trace for repeated prediction.
pub fn prepare_trace(trace: &Trace) -> Result<Vec<PreparedSnapshot>> {
    if trace.snapshots.is_empty() {
        return Err(Error::State("trace has no snapshots".into()));
    }
    trace
        .snapshots
        .iter()
        .map(|s| PreparedSnapshot::build(&trace.header, s))
        .collect()
}

/// Predict the response for one request: per-snapshot responsibility-weighted
/// means, averaged over snapshots.
pub fn predict_y(trace: &Trace, req: &PredictionRequest) -> Result<Prediction> {
    let prepared = prepare_trace(trace)?;
    check_request(&trace.header, req)?;
    let per_snapshot: Vec<f64> = prepared
        .iter()
        .map(|p| p.predict(&trace.header, req).map(|s| s.y_hat))
        .collect::<Result<_>>()?;
    let mean = per_snapshot.iter().sum::<f64>() / per_snapshot.len() as f64;
    Ok(Prediction { mean, per_snapshot })
}

/// Batch prediction with snapshots prepared once.
pub fn predict_batch(trace: &Trace, requests: &[PredictionRequest]) -> Result<Vec<f64>> {
    let prepared = prepare_trace(trace)?;
    requests
        .iter()
        .map(|req| {
            check_request(&trace.header, req)?;
            let mut acc = 0.0;
            for p in &prepared {
                acc += p.predict(&trace.header, req)?.y_hat;
            }
            Ok(acc / prepared.len() as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::components::BasePrior;
    use crate::gibbs::{ClusterSnapshot, PhiSnapshot, SamplerConfig, SweepStat};
    use crate::multiindex::FactorConfig;
    use crate::prior::Hyperparams;
    use crate::stats::LN_2PI;
    use nalgebra::{DMatrix, DVector};

    /// Hand-built single-basis trace with the given clusters.
    fn hand_trace(alpha: f64, clusters: Vec<ClusterSnapshot>) -> Trace {
        let cfg = FactorConfig::new(vec![1], vec![1]).unwrap();
        let base = BasePrior::new(
            DVector::zeros(1),
            1.0,
            DMatrix::identity(1, 1),
            3.0,
            DMatrix::identity(1, 1),
            1.0,
            1.0,
        )
        .unwrap();
        let n: usize = clusters.iter().map(|c| c.size).sum();
        let snapshot = Snapshot {
            sweep: 1,
            log_joint: 0.0,
            basis: vec![0; n],
            cluster: vec![0; n],
            u: vec![vec![vec![0.0]]],
            sigma_u: vec![1.0],
            clusters: vec![clusters],
        };
        Trace {
            header: TraceHeader {
                cfg,
                hyper: Hyperparams::new(alpha, 1.0).unwrap(),
                base,
                per_basis_base: None,
                dim: 1,
                n_samples: n,
                sampler: SamplerConfig::default(),
            },
            snapshots: vec![snapshot],
            sweep_stats: vec![SweepStat {
                sweep: 1,
                log_joint: 0.0,
                n_live_clusters: 1,
            }],
        }
    }

    fn cluster_1d(size: usize, mu: f64, beta: f64) -> ClusterSnapshot {
        ClusterSnapshot {
            size,
            phi: PhiSnapshot {
                mu_x: vec![mu],
                sigma_x: vec![1.0],
                beta: vec![beta],
                sigma_y2: 1.0,
            },
        }
    }

    fn request_1d(trace: &Trace, x: f64) -> PredictionRequest {
        PredictionRequest {
            x: DVector::from_vec(vec![x]),
            group: GroupIndex::new(vec![1], &trace.header.cfg).unwrap(),
        }
    }

    #[test]
    fn single_cluster_predicts_its_regression() {
        // Vanishing concentration: the prior-mass candidate carries no
        // weight and the lone cluster's regression comes through exactly.
        let trace = hand_trace(1e-300, vec![cluster_1d(4, 0.0, 2.5)]);
        let req = request_1d(&trace, 1.2);
        let pred = predict_y(&trace, &req).unwrap();
        assert!((pred.mean - 2.5 * 1.2).abs() < 1e-12);
        assert_eq!(pred.per_snapshot.len(), 1);
    }

    #[test]
    fn opposite_regressions_cancel() {
        let trace = hand_trace(
            1e-300,
            vec![cluster_1d(3, 0.0, 4.0), cluster_1d(3, 0.0, -4.0)],
        );
        let req = request_1d(&trace, 0.7);
        let pred = predict_y(&trace, &req).unwrap();
        assert!(pred.mean.abs() < 1e-12);
    }

    #[test]
    fn responsibilities_match_hand_computation() {
        // Two clusters with different covariate densities at x = 1:
        // N(1; 0, 1) and N(1; 2, 1), sizes 3 and 1, alpha -> 0.
        let trace = hand_trace(
            1e-300,
            vec![cluster_1d(3, 0.0, 1.0), cluster_1d(1, 2.0, -1.0)],
        );
        let req = request_1d(&trace, 1.0);
        let prepared = prepare_trace(&trace).unwrap();
        let snap = prepared[0].predict(&trace.header, &req).unwrap();

        // Hand arithmetic with the closed-form 1-D normal density.
        let density = |x: f64, mu: f64| (-0.5 * (x - mu) * (x - mu)).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let r1 = 3.0 / 4.0 * density(1.0, 0.0);
        let r2 = 1.0 / 4.0 * density(1.0, 2.0);
        let total = r1 + r2;
        assert!((snap.responsibilities[0] - r1 / total).abs() < 1e-12);
        assert!((snap.responsibilities[1] - r2 / total).abs() < 1e-12);
        let want = r1 / total * 1.0 + -(r2 / total);
        assert!((snap.y_hat - want).abs() < 1e-12);
        // Also pin the frozen numeric value of the x-density used above.
        assert!((density(1.0, 0.0).ln() - (-0.5 - 0.5 * LN_2PI)).abs() < 1e-12);
    }

    #[test]
    fn responsibilities_sum_to_one() {
        let trace = hand_trace(
            0.8,
            vec![cluster_1d(5, -1.0, 1.0), cluster_1d(2, 1.5, 0.3)],
        );
        let req = request_1d(&trace, 0.4);
        let prepared = prepare_trace(&trace).unwrap();
        let snap = prepared[0].predict(&trace.header, &req).unwrap();
        let total: f64 = snap.responsibilities.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        // Clusters + one prior-mass candidate on the single basis.
        assert_eq!(snap.responsibilities.len(), 3);
    }

    #[test]
    fn duplicating_snapshots_preserves_the_mean() {
        let mut trace = hand_trace(
            0.5,
            vec![cluster_1d(4, 0.0, 2.0), cluster_1d(2, 1.0, -0.5)],
        );
        let req = request_1d(&trace, 0.9);
        let single = predict_y(&trace, &req).unwrap();
        let snap = trace.snapshots[0].clone();
        trace.snapshots.push(snap.clone());
        trace.snapshots.push(snap);
        let tripled = predict_y(&trace, &req).unwrap();
        assert!((single.mean - tripled.mean).abs() < 1e-12);
    }

    #[test]
    fn empty_trace_and_bad_dimension_are_errors() {
        let mut trace = hand_trace(1.0, vec![cluster_1d(1, 0.0, 1.0)]);
        let req = request_1d(&trace, 0.0);
        let bad_req = PredictionRequest {
            x: DVector::from_vec(vec![0.0, 1.0]),
            group: req.group.clone(),
        };
        assert!(matches!(predict_y(&trace, &bad_req), Err(Error::Shape(_))));
        trace.snapshots.clear();
        assert!(matches!(predict_y(&trace, &req), Err(Error::State(_))));
    }
}
