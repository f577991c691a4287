//! All four methods on the same fold, architecture and seeds; only the
//! uncertainty mechanism differs.

use cura::baselines::{MethodKind, MethodSpec};
use cura::dataset::SynthConfig;
use cura::metrics;
use cura::pipeline::{self, CohortCache, DataSource, RunConfig};

fn main() -> cura::Result<()> {
    let base = RunConfig {
        seed: 4,
        data: DataSource::Synthetic(SynthConfig {
            n_samples: 4_000,
            target_positive_rate: 0.08,
            ambiguity: 0.3,
            ..SynthConfig::default()
        }),
        n_heads: 4,
        ..RunConfig::default()
    };
    let ds = base.data.load()?;
    let split = base.split(&ds)?;
    let mut cache = CohortCache::default();

    let mut rows = Vec::new();
    for kind in MethodKind::ALL {
        let run = RunConfig {
            method: MethodSpec::of(kind),
            ..base.clone()
        };
        let out = pipeline::fit_and_score(&run, &ds, &split, 0, &mut cache)?;
        rows.push(metrics::aggregate(&[metrics::evaluate(&out.scored)?]));
    }
    print!("{}", metrics::format_table(&rows));
    Ok(())
}
