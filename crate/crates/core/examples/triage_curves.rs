//! Uncertainty-driven triage on pooled test folds: risk by uncertainty bin,
//! retained-cohort AUPRC, the workload-safety trade-off and false
//! reassurance.

use cura::baselines::{MethodKind, MethodSpec};
use cura::dataset::SynthConfig;
use cura::metrics::{self, ScoredSet};
use cura::pipeline::{self, CohortCache, DataSource, FoldConfig, RunConfig};

fn main() -> cura::Result<()> {
    let run = RunConfig {
        seed: 2,
        data: DataSource::Synthetic(SynthConfig {
            n_samples: 5_000,
            target_positive_rate: 0.05,
            ambiguity: 0.3,
            ..SynthConfig::default()
        }),
        folds: FoldConfig {
            n_folds: 3,
            ..FoldConfig::default()
        },
        method: MethodSpec::of(MethodKind::Cura),
        n_heads: 8,
        ..RunConfig::default()
    };
    let ds = run.data.load()?;
    let split = run.split(&ds)?;
    let folds = pipeline::cross_validate(&run, &ds, &split, &mut CohortCache::default())?;
    let scored: Vec<ScoredSet> = folds.into_iter().map(|o| o.scored).collect();
    let pooled = ScoredSet::pooled(&scored, "cura");

    println!("uncertainty bins");
    for b in metrics::uncertainty_bins(&pooled, 5) {
        let rate = b.positive_rate.map_or("NA".into(), |r| format!("{r:.3}"));
        println!("  [{:.1}, {:.1}) n={:>5} positive rate {rate}", b.lo, b.hi, b.count);
    }
    println!("retained AUPRC");
    for (f, v) in metrics::retained_auprc_curve(&pooled, &[0.25, 0.5, 0.75, 1.0]) {
        println!("  {f:.2}: {}", v.map_or("NA".into(), |v| format!("{v:.4}")));
    }
    println!("missed positives per 1000 when automating");
    for (f, v) in metrics::workload_safety_curve(&pooled, &[0.25, 0.5, 0.75, 0.9]) {
        println!("  {f:.2}: {v:.2}");
    }
    for (tau, frr) in metrics::frr_sweep(&pooled)? {
        println!("FRR at tau {tau}: {frr:.4}");
    }

    let dir = std::env::temp_dir().join("cura-triage");
    metrics::evaluate(&pooled)?.write_curves(&dir)?;
    println!("curves in {}", dir.display());
    Ok(())
}
