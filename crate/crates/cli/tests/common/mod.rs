//! Shared fixtures for the CLI integration and acceptance tests.
#![allow(dead_code)] // not every test target uses every helper

use std::path::{Path, PathBuf};

use mldp_cli::config::{
    DataConfig, ExperimentConfig, FactorsConfig, Metric, ModelConfig, PreprocessConfig, RunConfig,
    SamplerSettings, SimulateConfig,
};

use mldp::testkit::{generate_synthetic, grid2x2_spec, write_synthetic_csv, Grid2x2Variant};

pub fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("mldp_cli_{tag}_{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

/// Write the grid2x2 fixture in the standard CSV schema and return its path.
pub fn write_fixture_csv(
    dir: &Path,
    variant: Grid2x2Variant,
    samples_per_group: usize,
    seed: u64,
) -> PathBuf {
    let spec = grid2x2_spec(variant, samples_per_group, seed);
    write_spec_csv(dir, &spec, seed)
}

pub fn write_spec_csv(dir: &Path, spec: &mldp::testkit::SyntheticSpec, seed: u64) -> PathBuf {
    let synth = generate_synthetic(spec).unwrap();
    let path = dir.join(format!("grid2x2_{seed}.csv"));
    let mut buf = Vec::new();
    write_synthetic_csv(&synth, &mut buf).unwrap();
    std::fs::write(&path, buf).unwrap();
    path
}

/// A config matching the fixture CSV, sized for fast tests.
pub fn fixture_config(csv: &Path) -> RunConfig {
    RunConfig {
        data: DataConfig {
            path: csv.to_path_buf(),
            factor_columns: vec!["g1".into(), "g2".into()],
            feature_columns: vec!["x1".into(), "x2".into()],
            response_column: "y".into(),
            categorical_features: vec![],
        },
        factors: FactorsConfig {
            factors_per_group: vec![2, 2],
            bases_per_group: Some(vec![2, 2]),
        },
        model: ModelConfig::default(),
        sampler: SamplerSettings {
            iterations: 60,
            burn_in: 20,
            thin: 4,
            seed: 11,
            ..SamplerSettings::default()
        },
        preprocess: PreprocessConfig::default(),
        experiment: ExperimentConfig {
            split_fraction: 0.5,
            repetitions: 3,
            metric: Metric::Rmse,
        },
        simulate: SimulateConfig {
            n_sims: 400,
            truncation: 40,
        },
    }
}

pub fn write_config(dir: &Path, name: &str, run: &RunConfig) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(run).unwrap()).unwrap();
    path
}

pub fn binary() -> &'static str {
    env!("CARGO_BIN_EXE_mldp")
}
