//! Neighborhood risk and cohort entropy: clean clusters get q near 0 or 1,
//! boundary samples get mixed neighborhoods and the largest weights.

use cura::dataset::{self, SampleOrigin, SynthConfig};
use cura::neighbors;

fn main() -> cura::Result<()> {
    let cohort = dataset::generate_synthetic_cohort(&SynthConfig {
        n_samples: 4_000,
        target_positive_rate: 0.1,
        ambiguity: 0.5,
        ..SynthConfig::default()
    })?;
    let ds = &cohort.dataset;
    let k = neighbors::default_k(ds.len());
    let stats = neighbors::cohorts_for(ds, k, 0.01)?;

    let mut groups = [(0usize, 0.0f64, 0.0f64); 2];
    for (i, origin) in cohort.origins.iter().enumerate() {
        let g = usize::from(matches!(origin, SampleOrigin::Ambiguous { .. }));
        groups[g].0 += 1;
        groups[g].1 += stats.cohort_entropy[i];
        groups[g].2 += stats.weight[i];
    }
    println!("k = {k}");
    for (name, (n, h, w)) in ["cluster", "ambiguous"].iter().zip(groups) {
        println!(
            "{name:>9}: {n:>5} samples, mean cohort entropy {:.3}, mean weight {:.5}",
            h / n as f64,
            w / n as f64
        );
    }

    let path = std::env::temp_dir().join("cura-cohorts.csv");
    stats.write_csv(ds.ids(), &path)?;
    println!("wrote {}", path.display());
    Ok(())
}
