//! The four-row ablation (baseline, +individual, +cohort, full) plus a small
//! λ_ind sweep, written as one consolidated CSV.

use cura::dataset::SynthConfig;
use cura::multihead::TrainConfig;
use cura::pipeline::{self, DataSource, ExperimentGrid, FoldConfig, RunConfig};

fn main() -> cura::Result<()> {
    let out = std::env::temp_dir().join("cura-grid");
    let grid = ExperimentGrid {
        base: RunConfig {
            data: DataSource::Synthetic(SynthConfig {
                n_samples: 3_000,
                target_positive_rate: 0.08,
                ambiguity: 0.3,
                ..SynthConfig::default()
            }),
            folds: FoldConfig {
                n_folds: 3,
                ..FoldConfig::default()
            },
            n_heads: 4,
            train: TrainConfig {
                max_epochs: 20,
                ..TrainConfig::default()
            },
            out: out.clone(),
            ..RunConfig::default()
        },
        lambda_ind: vec![0.1, 1.0],
        ..ExperimentGrid::default()
    };
    let rows = pipeline::run_grid(&grid)?;
    println!("{} rows", rows.len());
    print!("{}", std::fs::read_to_string(out.join("results.csv")).map_err(|e| cura::Error::Io {
        path: out.join("results.csv"),
        source: e,
    })?);
    Ok(())
}
