//! Train the calibrated classifier and the CE-only baseline on one fold and
//! compare their test metrics.

use cura::baselines::{self, FitConfig, MethodKind, MethodSpec};
use cura::dataset::{self, SynthConfig};
use cura::metrics::{self, ScoredSet};

fn main() -> cura::Result<()> {
    let ds = dataset::generate_synthetic(&SynthConfig {
        n_samples: 6_000,
        target_positive_rate: 0.05,
        ambiguity: 0.3,
        ..SynthConfig::default()
    })?;
    let split = dataset::split_folds(&ds, 5, dataset::DEFAULT_VAL_FRACTION, 3)?;
    let fold = split.fold(0);
    let test = ds.subset(&fold.test);
    let cfg = FitConfig {
        n_heads: 8,
        ..FitConfig::default()
    };

    let mut rows = Vec::new();
    for kind in [MethodKind::InternalBaseline, MethodKind::Cura] {
        let fit = baselines::fit_fold(&ds, fold, &MethodSpec::of(kind), &cfg)?;
        let log = &fit.logs[0];
        let last = log.records.last().expect("at least one epoch");
        println!(
            "{kind}: {} epochs, best {}, final l_base {:.4} l_ind {:.4} l_coh {:.5}",
            log.epochs_run(),
            log.best_epoch,
            last.l_base,
            last.l_ind,
            last.l_coh
        );
        let (p, _) = fit.method.predict(test.embeddings().view())?;
        let scored = ScoredSet::from_probs(p, test.labels().to_vec(), kind.as_str(), Some(0))?;
        rows.push(metrics::aggregate(&[metrics::evaluate(&scored)?]));
    }
    print!("{}", metrics::format_table(&rows));
    Ok(())
}
