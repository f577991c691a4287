//! The four compared methods over one shared classifier and training loop:
//! the internal baseline (class-weighted CE only), the full calibration
//! objective, MC Dropout inference, and Deep Ensembles of multi-head
//! classifiers. Every method reports the normalized entropy of its final
//! probability as its uncertainty.

use std::fmt;
use std::str::FromStr;

use ndarray::{s, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{EmbeddingDataset, Fold};
use crate::error::{Error, Result};
use crate::multihead::{self, HeadSpec, ModelFile, TrainConfig, TrainedModel, TrainingLog};
use crate::neighbors::{self, CohortStats};
use crate::objective::{normalized_entropy, ObjectiveConfig};
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    InternalBaseline,
    Cura,
    McDropout,
    DeepEnsemble,
}

impl MethodKind {
    pub const ALL: [MethodKind; 4] = [
        MethodKind::InternalBaseline,
        MethodKind::Cura,
        MethodKind::McDropout,
        MethodKind::DeepEnsemble,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MethodKind::InternalBaseline => "internal_baseline",
            MethodKind::Cura => "cura",
            MethodKind::McDropout => "mc_dropout",
            MethodKind::DeepEnsemble => "deep_ensemble",
        }
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MethodKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MethodKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown method `{s}` (expected internal_baseline, cura, mc_dropout or deep_ensemble)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodSpec {
    pub kind: MethodKind,
    pub mc_passes: usize,
    pub mc_dropout_rate: f64,
    pub ensemble_size: usize,
    /// Per-member seeds for Deep Ensembles; empty derives them from the
    /// run seed, with member 0 using the run seed itself.
    pub seeds: Vec<u64>,
}

impl Default for MethodSpec {
    fn default() -> Self {
        Self {
            kind: MethodKind::Cura,
            mc_passes: 10,
            mc_dropout_rate: 0.5,
            ensemble_size: 5,
            seeds: Vec::new(),
        }
    }
}

impl MethodSpec {
    pub fn of(kind: MethodKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mc_passes < 1 {
            return Err(Error::Config("mc_passes must be at least 1".into()));
        }
        if self.ensemble_size < 1 {
            return Err(Error::Config("ensemble_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.mc_dropout_rate) {
            return Err(Error::Config("mc_dropout_rate must lie in [0, 1)".into()));
        }
        if !self.seeds.is_empty() && self.seeds.len() != self.ensemble_size {
            return Err(Error::Config(format!(
                "{} member seeds given for an ensemble of {}",
                self.seeds.len(),
                self.ensemble_size
            )));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::Config("ensemble member seeds must be distinct".into()));
        }
        Ok(())
    }

    /// The objective a method actually trains on: only the calibration
    /// method keeps the calibration weights.
    pub fn effective_objective(&self, objective: &ObjectiveConfig) -> ObjectiveConfig {
        match self.kind {
            MethodKind::Cura => objective.clone(),
            _ => ObjectiveConfig {
                lambda_ind: 0.0,
                lambda_coh: 0.0,
                ..objective.clone()
            },
        }
    }
}

/// Everything shared by all methods for one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub n_heads: usize,
    pub head: HeadSpec,
    pub objective: ObjectiveConfig,
    pub train: TrainConfig,
    /// Neighborhood size; `None` picks the size-dependent default.
    pub k: Option<usize>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            n_heads: 32,
            head: HeadSpec::default(),
            objective: ObjectiveConfig::default(),
            train: TrainConfig::default(),
            k: None,
        }
    }
}

/// A trained method ready for prediction.
#[derive(Debug, Clone, PartialEq)]
pub enum FittedMethod {
    /// Internal baseline or calibration objective: one multi-head model.
    Single { kind: MethodKind, model: TrainedModel },
    McDropout {
        model: TrainedModel,
        passes: usize,
        seed: u64,
    },
    Ensemble { members: Vec<TrainedModel> },
}

/// Result of fitting one method on one fold.
#[derive(Debug, Clone)]
pub struct FoldFit {
    pub method: FittedMethod,
    /// One log per trained classifier (several for ensembles).
    pub logs: Vec<TrainingLog>,
    pub cohorts: Option<CohortStats>,
}

/// Trains `spec.kind` on `fold.train`, early-stopping on `fold.validation`.
pub fn fit_fold(
    ds: &EmbeddingDataset,
    fold: &Fold,
    spec: &MethodSpec,
    cfg: &FitConfig,
) -> Result<FoldFit> {
    fit_fold_with_cohorts(ds, fold, spec, cfg, None)
}

/// As [`fit_fold`], reusing neighborhood risks already computed for
/// `fold.train` (rows aligned with `fold.train`). Weights are rescaled to
/// the configured `lambda_coh`.
pub fn fit_fold_with_cohorts(
    ds: &EmbeddingDataset,
    fold: &Fold,
    spec: &MethodSpec,
    cfg: &FitConfig,
    cached_q: Option<&[f64]>,
) -> Result<FoldFit> {
    spec.validate()?;
    let train_set = ds.subset(&fold.train);
    let val_set = ds.subset(&fold.validation);
    let objective = spec.effective_objective(&cfg.objective);

    match spec.kind {
        MethodKind::InternalBaseline | MethodKind::Cura => {
            let cohorts = if objective.lambda_coh > 0.0 {
                match cached_q {
                    Some(q) if q.len() == train_set.len() => {
                        Some(CohortStats::from_q(q.to_vec(), objective.lambda_coh))
                    }
                    Some(q) => {
                        return Err(Error::DimMismatch {
                            expected: train_set.len(),
                            actual: q.len(),
                        })
                    }
                    None => {
                        let k = resolve_k(cfg, train_set.len());
                        Some(neighbors::cohorts_for(&train_set, k, objective.lambda_coh)?)
                    }
                }
            } else {
                None
            };
            let clf = multihead::init_classifier(ds.dim(), cfg.n_heads, &cfg.head)?;
            let (model, log) = multihead::train(
                clf,
                &train_set,
                &val_set,
                &objective,
                cohorts.as_ref(),
                &cfg.train,
            )?;
            Ok(FoldFit {
                method: FittedMethod::Single {
                    kind: spec.kind,
                    model,
                },
                logs: vec![log],
                cohorts,
            })
        }
        MethodKind::McDropout => {
            let head = HeadSpec {
                dropout_rate: spec.mc_dropout_rate,
                ..cfg.head.clone()
            };
            let clf = multihead::init_classifier(ds.dim(), cfg.n_heads, &head)?;
            let (model, log) =
                multihead::train(clf, &train_set, &val_set, &objective, None, &cfg.train)?;
            Ok(FoldFit {
                method: FittedMethod::McDropout {
                    model,
                    passes: spec.mc_passes,
                    seed: derive_seed(cfg.train.seed, 0xD50),
                },
                logs: vec![log],
                cohorts: None,
            })
        }
        MethodKind::DeepEnsemble => {
            let (members, logs) =
                run_deep_ensemble(&train_set, &val_set, spec, cfg, &objective)?;
            Ok(FoldFit {
                method: FittedMethod::Ensemble { members },
                logs,
                cohorts: None,
            })
        }
    }
}

/// The neighborhood size used for a training set of `n_train` samples.
pub fn resolve_k(cfg: &FitConfig, n_train: usize) -> usize {
    cfg.k.unwrap_or_else(|| neighbors::default_k(n_train))
}

/// Member `i`'s (init seed, training seed).
pub fn member_seeds(spec: &MethodSpec, cfg: &FitConfig, i: usize) -> (u64, u64) {
    if let Some(&s) = spec.seeds.get(i) {
        (s, s)
    } else if i == 0 {
        (cfg.head.init_seed, cfg.train.seed)
    } else {
        (
            derive_seed(cfg.head.init_seed, 0xE0 + i as u64),
            derive_seed(cfg.train.seed, 0xE0 + i as u64),
        )
    }
}

/// Trains `ensemble_size` independently seeded multi-head classifiers on
/// the base objective.
pub fn run_deep_ensemble(
    train_set: &EmbeddingDataset,
    val_set: &EmbeddingDataset,
    spec: &MethodSpec,
    cfg: &FitConfig,
    objective: &ObjectiveConfig,
) -> Result<(Vec<TrainedModel>, Vec<TrainingLog>)> {
    let mut members = Vec::with_capacity(spec.ensemble_size);
    let mut logs = Vec::with_capacity(spec.ensemble_size);
    for i in 0..spec.ensemble_size {
        let (init_seed, train_seed) = member_seeds(spec, cfg, i);
        let head = HeadSpec {
            init_seed,
            ..cfg.head.clone()
        };
        let train_cfg = TrainConfig {
            seed: train_seed,
            ..cfg.train.clone()
        };
        let clf = multihead::init_classifier(train_set.dim(), cfg.n_heads, &head)?;
        let (model, log) = multihead::train(clf, train_set, val_set, objective, None, &train_cfg)?;
        members.push(model);
        logs.push(log);
    }
    Ok((members, logs))
}

/// Arithmetic mean of member probabilities, sample by sample.
pub fn average_member_probs(members: &[Vec<f64>]) -> Vec<f64> {
    let n = members.first().map_or(0, Vec::len);
    let inv = 1.0 / members.len().max(1) as f64;
    (0..n)
        .map(|i| members.iter().map(|m| m[i]).sum::<f64>() * inv)
        .collect()
}

fn with_uncertainty(p: Vec<f64>) -> (Vec<f64>, Vec<f64>) {
    let u = p.iter().map(|&v| normalized_entropy(v)).collect();
    (p, u)
}

/// `passes` stochastic forward passes with dropout active, averaged.
pub fn predict_mc_dropout(
    model: &TrainedModel,
    batch: ArrayView2<'_, f64>,
    passes: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if passes < 1 {
        return Err(Error::Config("MC Dropout needs at least one pass".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut runs = Vec::with_capacity(passes);
    for _ in 0..passes {
        let mut probs = Vec::with_capacity(batch.nrows());
        for start in (0..batch.nrows()).step_by(1024) {
            let end = (start + 1024).min(batch.nrows());
            let out = model
                .classifier
                .forward(batch.slice(s![start..end, ..]), Some(&mut rng))?;
            probs.extend(out.mean_prob.iter());
        }
        runs.push(probs);
    }
    Ok(with_uncertainty(average_member_probs(&runs)))
}

impl FittedMethod {
    pub fn kind(&self) -> MethodKind {
        match self {
            FittedMethod::Single { kind, .. } => *kind,
            FittedMethod::McDropout { .. } => MethodKind::McDropout,
            FittedMethod::Ensemble { .. } => MethodKind::DeepEnsemble,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            FittedMethod::Single { model, .. } | FittedMethod::McDropout { model, .. } => {
                model.classifier.input_dim()
            }
            FittedMethod::Ensemble { members } => {
                members.first().map_or(0, |m| m.classifier.input_dim())
            }
        }
    }

    /// Final probability and its normalized-entropy uncertainty.
    pub fn predict(&self, batch: ArrayView2<'_, f64>) -> Result<(Vec<f64>, Vec<f64>)> {
        match self {
            FittedMethod::Single { model, .. } => multihead::predict(model, batch),
            FittedMethod::McDropout {
                model,
                passes,
                seed,
            } => predict_mc_dropout(model, batch, *passes, *seed),
            FittedMethod::Ensemble { members } => {
                let probs = members
                    .iter()
                    .map(|m| m.classifier.mean_prob(batch))
                    .collect::<Result<Vec<_>>>()?;
                Ok(with_uncertainty(average_member_probs(&probs)))
            }
        }
    }

    pub fn to_file(&self) -> MethodModelFile {
        let (members, mc_passes, mc_seed) = match self {
            FittedMethod::Single { model, .. } => (vec![model.to_file()], None, None),
            FittedMethod::McDropout {
                model,
                passes,
                seed,
            } => (vec![model.to_file()], Some(*passes), Some(*seed)),
            FittedMethod::Ensemble { members } => {
                (members.iter().map(TrainedModel::to_file).collect(), None, None)
            }
        };
        MethodModelFile {
            method: self.kind(),
            mc_passes,
            mc_seed,
            members,
        }
    }

    pub fn from_file(f: &MethodModelFile) -> Result<Self> {
        let mut members = f
            .members
            .iter()
            .map(TrainedModel::from_file)
            .collect::<Result<Vec<_>>>()?;
        let single = |members: &mut Vec<TrainedModel>| {
            if members.len() != 1 {
                return Err(Error::Format(format!(
                    "method {} expects one model, found {}",
                    f.method,
                    members.len()
                )));
            }
            Ok(members.remove(0))
        };
        Ok(match f.method {
            MethodKind::InternalBaseline | MethodKind::Cura => FittedMethod::Single {
                kind: f.method,
                model: single(&mut members)?,
            },
            MethodKind::McDropout => FittedMethod::McDropout {
                model: single(&mut members)?,
                passes: f.mc_passes.ok_or_else(|| Error::Format("missing mc_passes".into()))?,
                seed: f.mc_seed.ok_or_else(|| Error::Format("missing mc_seed".into()))?,
            },
            MethodKind::DeepEnsemble => {
                if members.is_empty() {
                    return Err(Error::Format("ensemble without members".into()));
                }
                FittedMethod::Ensemble { members }
            }
        })
    }
}

/// JSON form of a fitted method, tagged with its method name.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodModelFile {
    pub method: MethodKind,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mc_passes: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mc_seed: Option<u64>,
    pub members: Vec<ModelFile>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{split_folds, SynthConfig};

    fn tiny() -> (EmbeddingDataset, Fold) {
        let cfg = SynthConfig {
            n_samples: 400,
            dim: 4,
            n_clusters: 4,
            target_positive_rate: 0.25,
            ambiguity: 0.2,
            seed: 2,
        };
        let ds = crate::dataset::generate_synthetic(&cfg).unwrap();
        let split = split_folds(&ds, 4, 0.125, 2).unwrap();
        let fold = split.fold(0).clone();
        (ds, fold)
    }

    fn small_fit() -> FitConfig {
        FitConfig {
            n_heads: 3,
            head: HeadSpec {
                hidden_units: 8,
                ..HeadSpec::default()
            },
            train: TrainConfig {
                learning_rate: 1e-2,
                max_epochs: 4,
                patience: 2,
                batch_size: 64,
                ..TrainConfig::default()
            },
            k: Some(20),
            ..FitConfig::default()
        }
    }

    #[test]
    fn method_names_round_trip() {
        for k in MethodKind::ALL {
            assert_eq!(k.as_str().parse::<MethodKind>().unwrap(), k);
        }
        assert!("svm".parse::<MethodKind>().is_err());
    }

    #[test]
    fn ensemble_average_of_members() {
        let members: Vec<Vec<f64>> = [0.2, 0.4, 0.6, 0.8, 0.5].iter().map(|&p| vec![p]).collect();
        let (p, u) = with_uncertainty(average_member_probs(&members));
        assert_eq!(p[0], 0.5);
        assert_eq!(u[0], 1.0);
    }

    #[test]
    fn baseline_has_no_calibration_terms() {
        let (ds, fold) = tiny();
        let fit = fit_fold(&ds, &fold, &MethodSpec::of(MethodKind::InternalBaseline), &small_fit())
            .unwrap();
        for r in &fit.logs[0].records {
            assert_eq!(r.l_ind, 0.0);
            assert_eq!(r.l_coh, 0.0);
        }
        assert!(fit.cohorts.is_none());
    }

    #[test]
    fn mc_dropout_degenerate_cases() {
        let (ds, fold) = tiny();
        let fit = fit_fold(&ds, &fold, &MethodSpec::of(MethodKind::McDropout), &small_fit()).unwrap();
        let FittedMethod::McDropout { model, .. } = &fit.method else {
            panic!("wrong variant")
        };
        let x = ds.embeddings().slice(s![..50, ..]);
        let (a, _) = predict_mc_dropout(model, x, 10, 3).unwrap();
        let (b, _) = predict_mc_dropout(model, x, 10, 3).unwrap();
        assert_eq!(a, b);
        assert!(predict_mc_dropout(model, x, 0, 3).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let one = model.classifier.forward(x, Some(&mut rng)).unwrap();
        let (t1, _) = predict_mc_dropout(model, x, 1, 8).unwrap();
        assert_eq!(t1, one.mean_prob.to_vec());

        let mut no_noise = model.clone();
        no_noise.classifier.set_dropout_rate(0.0).unwrap();
        let (p, _) = predict_mc_dropout(&no_noise, x, 10, 3).unwrap();
        let det = no_noise.classifier.mean_prob(x).unwrap();
        for (a, b) in p.iter().zip(&det) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn single_member_ensemble_is_the_baseline() {
        let (ds, fold) = tiny();
        let cfg = small_fit();
        let base = fit_fold(&ds, &fold, &MethodSpec::of(MethodKind::InternalBaseline), &cfg).unwrap();
        let spec = MethodSpec {
            kind: MethodKind::DeepEnsemble,
            ensemble_size: 1,
            ..MethodSpec::default()
        };
        let ens = fit_fold(&ds, &fold, &spec, &cfg).unwrap();
        let x = ds.embeddings().view();
        assert_eq!(base.method.predict(x).unwrap(), ens.method.predict(x).unwrap());
    }

    #[test]
    fn ensemble_is_reproducible_and_members_differ() {
        let (ds, fold) = tiny();
        let spec = MethodSpec {
            kind: MethodKind::DeepEnsemble,
            ensemble_size: 2,
            seeds: vec![10, 11],
            ..MethodSpec::default()
        };
        let a = fit_fold(&ds, &fold, &spec, &small_fit()).unwrap();
        let b = fit_fold(&ds, &fold, &spec, &small_fit()).unwrap();
        assert_eq!(a.method, b.method);
        let FittedMethod::Ensemble { members } = &a.method else {
            panic!("wrong variant")
        };
        assert_ne!(members[0].classifier, members[1].classifier);
        let dup = MethodSpec {
            seeds: vec![4, 4],
            ..spec
        };
        assert!(dup.validate().is_err());
    }

    #[test]
    fn model_file_round_trip() {
        let (ds, fold) = tiny();
        for kind in MethodKind::ALL {
            let spec = MethodSpec {
                kind,
                ensemble_size: 2,
                ..MethodSpec::default()
            };
            let fit = fit_fold(&ds, &fold, &spec, &small_fit()).unwrap();
            let json = serde_json::to_string(&fit.method.to_file()).unwrap();
            let back = FittedMethod::from_file(&serde_json::from_str(&json).unwrap()).unwrap();
            assert_eq!(back, fit.method);
            assert!(json.contains(&format!("\"method\":\"{kind}\"")));
        }
    }
}
