//! Generate a synthetic cohort, write it as CSV, read it back and split it
//! into stratified folds.

use cura::dataset::{self, SampleOrigin, SynthConfig};

fn main() -> cura::Result<()> {
    let cfg = SynthConfig {
        n_samples: 5_000,
        ambiguity: 0.3,
        ..SynthConfig::default()
    };
    let cohort = dataset::generate_synthetic_cohort(&cfg)?;
    let ds = &cohort.dataset;
    let ambiguous = cohort
        .origins
        .iter()
        .filter(|o| matches!(o, SampleOrigin::Ambiguous { .. }))
        .count();
    println!(
        "n={} dim={} positive rate {:.4}, {} ambiguous samples",
        ds.len(),
        ds.dim(),
        ds.positive_rate(),
        ambiguous
    );

    let dir = std::env::temp_dir().join("cura-synth-example");
    let path = dir.join("cohort.csv");
    dataset::write_csv(ds, &path)?;
    let back = dataset::load_csv(&path)?;
    assert_eq!(back.labels(), ds.labels());
    println!("round-tripped {}", path.display());

    let split = dataset::split_folds(&back, 5, dataset::DEFAULT_VAL_FRACTION, 1)?;
    for (f, fold) in split.folds().iter().enumerate() {
        let pos = fold.test.iter().filter(|&&i| back.labels()[i] == 1).count();
        println!(
            "fold {f}: train {} / val {} / test {} ({pos} positives)",
            fold.train.len(),
            fold.validation.len(),
            fold.test.len()
        );
    }
    Ok(())
}
