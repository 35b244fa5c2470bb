//! Sampler-level oracle checks: degeneration to the classical DP, collapse
//! on single-component data, and log-joint stabilization.

use mldp::components::BasePrior;
use mldp::gibbs::{FlatDataset, GibbsSampler, MldpModel, SamplerConfig};
use mldp::prior::Hyperparams;
use mldp::testkit::{
    self, generate_synthetic, grid2x2_spec, stack_features, DpReferenceSampler, Grid2x2Variant,
    SyntheticComponent, SyntheticSpec, WeightSource,
};

fn degenerate_fixture(
    samples_per_group: usize,
    seed: u64,
) -> (MldpModel, FlatDataset, BasePrior) {
    let spec = grid2x2_spec(Grid2x2Variant::SeparatedMeans, samples_per_group, seed);
    let synth = generate_synthetic(&spec).unwrap();
    let base = BasePrior::data_driven(&stack_features(&synth.dataset)).unwrap();
    let degenerate = spec.cfg.degenerate();
    let mut grouped = synth.dataset.clone();
    grouped.cfg = degenerate.clone();
    let data = FlatDataset::from_grouped(&grouped).unwrap();
    let model = MldpModel::new(
        degenerate,
        Hyperparams::new(1.0, 1.0).unwrap(),
        base.clone(),
    );
    (model, data, base)
}

/// On a single-basis configuration the full sampler must reproduce the
/// independent classical Algorithm-8 chain assignment for assignment under a
/// shared seed.
#[test]
fn degenerate_sampler_tracks_dp_reference() {
    let (model, data, base) = degenerate_fixture(8, 21);
    let seed = 4242;
    let cfg = SamplerConfig {
        seed,
        aux_clusters: 3,
        ..SamplerConfig::default()
    };
    let mut mldp = GibbsSampler::new(&model, &data, cfg).unwrap();
    let mut state = mldp.init_state().unwrap();

    let mut reference = DpReferenceSampler::new(&base, &data, 1.0, 3, seed).unwrap();
    reference.init().unwrap();

    for sweep in 0..30 {
        mldp.sweep(&mut state).unwrap();
        reference.sweep().unwrap();
        assert!(
            state.assignments.iter().all(|a| a.basis == 0),
            "degenerate run must stay on the single basis"
        );
        let mldp_clusters: Vec<usize> =
            state.assignments.iter().map(|a| a.cluster).collect();
        assert_eq!(
            mldp_clusters, reference.assignments,
            "assignment sequences diverged at sweep {sweep}"
        );
    }
}

/// Data from one component with a small concentration: the chain should
/// settle on a single cluster.
#[test]
fn single_component_data_collapses_to_one_cluster() {
    let cfg = mldp::multiindex::FactorConfig::new(vec![2], vec![1]).unwrap();
    let spec = SyntheticSpec {
        cfg: cfg.clone(),
        weights: WeightSource::Explicit(vec![vec![1.0], vec![1.0]]),
        components: vec![vec![SyntheticComponent {
            weight: 1.0,
            phi: testkit::standard_component(2, &[1.5, -0.5]),
        }]],
        samples_per_group: 20,
        seed: 33,
    };
    let synth = generate_synthetic(&spec).unwrap();
    let data = FlatDataset::from_grouped(&synth.dataset).unwrap();
    let base = BasePrior::data_driven(&stack_features(&synth.dataset)).unwrap();
    let model = MldpModel::new(cfg, Hyperparams::new(0.1, 1.0).unwrap(), base);

    let sampler_cfg = SamplerConfig {
        iterations: 50,
        burn_in: 0,
        thin: 1,
        seed: 7,
        ..SamplerConfig::default()
    };
    let mut sampler = GibbsSampler::new(&model, &data, sampler_cfg).unwrap();
    let trace = sampler.run().unwrap();

    let mut counts = std::collections::HashMap::new();
    for s in &trace.sweep_stats {
        *counts.entry(s.n_live_clusters).or_insert(0usize) += 1;
    }
    let modal = counts.into_iter().max_by_key(|(_, c)| *c).unwrap().0;
    assert_eq!(modal, 1, "modal live-cluster count should be 1");
}

/// The log joint should stabilize: over seeded runs, the mean of the last
/// 20% of sweeps must reach at least the mean of the first 10% in 9 of 10.
#[test]
fn log_joint_reaches_plateau() {
    let spec = grid2x2_spec(Grid2x2Variant::SeparatedMeans, 10, 5);
    let synth = generate_synthetic(&spec).unwrap();
    let data = FlatDataset::from_grouped(&synth.dataset).unwrap();
    let model = testkit::grid2x2_model(&spec, 1.0).unwrap();

    let mut passes = 0;
    for seed in 0..10 {
        let cfg = SamplerConfig {
            iterations: 120,
            burn_in: 0,
            thin: 1,
            seed,
            ..SamplerConfig::default()
        };
        let mut sampler = GibbsSampler::new(&model, &data, cfg).unwrap();
        let trace = sampler.run().unwrap();
        let lj: Vec<f64> = trace.sweep_stats.iter().map(|s| s.log_joint).collect();
        let head = &lj[..lj.len() / 10];
        let tail = &lj[lj.len() - lj.len() / 5..];
        let head_mean: f64 = head.iter().sum::<f64>() / head.len() as f64;
        let tail_mean: f64 = tail.iter().sum::<f64>() / tail.len() as f64;
        if tail_mean >= head_mean {
            passes += 1;
        }
    }
    assert!(passes >= 9, "log joint plateaued in only {passes}/10 runs");
}

/// The heterogeneous variant end to end: per-basis concentrations and
/// per-basis base priors feed the assignment scores and auxiliary draws.
#[test]
fn heterogeneous_variant_runs_and_differs_from_homogeneous() {
    let spec = grid2x2_spec(Grid2x2Variant::SeparatedMeans, 8, 61);
    let synth = generate_synthetic(&spec).unwrap();
    let data = FlatDataset::from_grouped(&synth.dataset).unwrap();
    let base = BasePrior::data_driven(&stack_features(&synth.dataset)).unwrap();

    let hyper_het = Hyperparams::with_heterogeneous(
        1.0,
        1.0,
        true,
        Some(vec![0.2, 2.0, 0.5, 1.5]),
    )
    .unwrap();
    let per_basis: Vec<BasePrior> = (0..4).map(|_| base.clone()).collect();
    let model_het = MldpModel::new(spec.cfg.clone(), hyper_het, base.clone())
        .with_per_basis_base(per_basis)
        .unwrap();
    let model_hom = MldpModel::new(
        spec.cfg.clone(),
        Hyperparams::new(1.0, 1.0).unwrap(),
        base.clone(),
    );

    let cfg = SamplerConfig {
        iterations: 30,
        burn_in: 10,
        thin: 2,
        seed: 14,
        ..SamplerConfig::default()
    };
    let mut het = GibbsSampler::new(&model_het, &data, cfg.clone()).unwrap();
    let trace_het = het.run().unwrap();
    let mut hom = GibbsSampler::new(&model_hom, &data, cfg).unwrap();
    let trace_hom = hom.run().unwrap();

    assert_eq!(trace_het.snapshots.len(), 10);
    assert!(trace_het.sweep_stats.iter().all(|s| s.log_joint.is_finite()));
    // Different concentrations must actually enter the scores.
    assert_ne!(
        trace_het.snapshots.last().unwrap().basis,
        trace_hom.snapshots.last().unwrap().basis,
    );

    // A per-basis alpha map that does not cover the bases is rejected.
    let bad = MldpModel::new(
        spec.cfg.clone(),
        Hyperparams::with_heterogeneous(1.0, 1.0, true, Some(vec![0.2, 2.0])).unwrap(),
        base,
    );
    assert!(GibbsSampler::new(&bad, &data, SamplerConfig::default()).is_err());
}

/// Short synthetic-recovery run; the acceptance suite runs the full-scale
/// version.
#[test]
fn recovery_on_separated_fixture() {
    let spec = grid2x2_spec(Grid2x2Variant::SeparatedMeans, 20, 99);
    let synth = generate_synthetic(&spec).unwrap();
    let data = FlatDataset::from_grouped(&synth.dataset).unwrap();
    let model = testkit::grid2x2_model(&spec, 1.0).unwrap();
    let cfg = SamplerConfig {
        iterations: 300,
        burn_in: 150,
        thin: 5,
        seed: 13,
        ..SamplerConfig::default()
    };
    let mut sampler = GibbsSampler::new(&model, &data, cfg).unwrap();
    let trace = sampler.run().unwrap();
    let labels = testkit::modal_labels(&trace).unwrap();
    let ari = testkit::adjusted_rand_index(&labels, &synth.truth_labels);
    assert!(ari >= 0.8, "ARI {ari} below 0.8");
}
