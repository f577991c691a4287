//! Run configuration, cross-validated training and evaluation, and the
//! on-disk artifact layout shared by the command-line front end.
//!
//! A run directory holds:
//!
//! ```text
//! config.json            resolved run configuration
//! folds.json             fold assignments
//! models/<method>_fold<f>.json
//! logs/<method>_fold<f>.csv            (ensembles: _m<i> per member)
//! logs/<method>_fold<f>_cohorts.csv    (when the cohort term is active)
//! reports/<method>_fold<f>.json, reports/<method>_summary.{json,txt}
//! curves/<method>/fold<f>/*.csv, curves/<method>/pooled/*.csv
//! ```
//!
//! Elapsed times are logged rather than written, so repeated runs with the
//! same configuration produce byte-identical artifacts.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{self, FitConfig, FittedMethod, FoldFit, MethodKind, MethodModelFile, MethodSpec};
use crate::dataset::{self, EmbeddingDataset, FoldSplit, FoldSplitFile, SynthConfig};
use crate::error::{Error, Result};
use crate::io::{read_json, write_atomic, write_json};
use crate::metrics::{self, AggregateReport, EvalReport, ScoredSet};
use crate::multihead::{self, HeadSpec, TrainConfig};
use crate::neighbors;
use crate::objective::{self, ObjectiveConfig};
use crate::seed::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic(SynthConfig),
    Csv(PathBuf),
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SynthConfig::default())
    }
}

impl DataSource {
    pub fn load(&self) -> Result<EmbeddingDataset> {
        match self {
            DataSource::Synthetic(cfg) => dataset::generate_synthetic(cfg),
            DataSource::Csv(path) => dataset::load_csv(path),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FoldConfig {
    pub n_folds: usize,
    pub val_fraction: f64,
}

impl Default for FoldConfig {
    fn default() -> Self {
        Self {
            n_folds: 5,
            val_fraction: dataset::DEFAULT_VAL_FRACTION,
        }
    }
}

/// Neighborhood settings; the cohort weight itself is `objective.lambda_coh`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NeighborConfig {
    /// `None` uses 100, or 200 from 100k training samples, capped at n - 1.
    pub k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Drives fold assignment and every model seed.
    pub seed: u64,
    pub data: DataSource,
    pub folds: FoldConfig,
    pub method: MethodSpec,
    pub n_heads: usize,
    /// `init_seed` acts as a salt on top of `seed`.
    pub head: HeadSpec,
    pub objective: ObjectiveConfig,
    /// `seed` acts as a salt on top of the run seed.
    pub train: TrainConfig,
    pub neighbors: NeighborConfig,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataSource::default(),
            folds: FoldConfig::default(),
            method: MethodSpec::default(),
            n_heads: 32,
            head: HeadSpec::default(),
            objective: ObjectiveConfig::default(),
            train: TrainConfig::default(),
            neighbors: NeighborConfig::default(),
            out: PathBuf::from("runs/default"),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn validate(&self) -> Result<()> {
        if let DataSource::Synthetic(cfg) = &self.data {
            cfg.validate()?;
        }
        if self.folds.n_folds < 2 {
            return Err(Error::Config("n_folds must be at least 2".into()));
        }
        if !(self.folds.val_fraction > 0.0 && self.folds.val_fraction < 1.0) {
            return Err(Error::Config("val_fraction must lie in (0, 1)".into()));
        }
        if self.n_heads == 0 {
            return Err(Error::Config("n_heads must be at least 1".into()));
        }
        if self.neighbors.k == Some(0) {
            return Err(Error::Config("k must be at least 1".into()));
        }
        self.method.validate()?;
        self.head.validate()?;
        self.objective.validate()?;
        self.train.validate()
    }

    pub fn split_seed(&self) -> u64 {
        derive_seed(self.seed, 0xF01D)
    }

    /// Model settings for fold `f`. Every method gets the same seeds for the
    /// same fold, so differences between methods come from the method alone.
    pub fn fit_config(&self, f: usize) -> FitConfig {
        let fold_seed = derive_seed(self.seed, f as u64);
        FitConfig {
            n_heads: self.n_heads,
            head: HeadSpec {
                init_seed: derive_seed(fold_seed ^ self.head.init_seed, 0x1417),
                ..self.head.clone()
            },
            objective: self.objective.clone(),
            train: TrainConfig {
                seed: derive_seed(fold_seed ^ self.train.seed, 0x7EA1),
                ..self.train.clone()
            },
            k: self.neighbors.k,
        }
    }

    pub fn split(&self, ds: &EmbeddingDataset) -> Result<FoldSplit> {
        dataset::split_folds(ds, self.folds.n_folds, self.folds.val_fraction, self.split_seed())
    }
}

/// Neighborhood risks per (fold, k), reused across methods and grid cells.
#[derive(Debug, Default)]
pub struct CohortCache {
    q: HashMap<(usize, usize), Vec<f64>>,
}

impl CohortCache {
    pub fn get_or_compute(
        &mut self,
        ds: &EmbeddingDataset,
        split: &FoldSplit,
        f: usize,
        k: usize,
    ) -> Result<&[f64]> {
        if !self.q.contains_key(&(f, k)) {
            let t = Instant::now();
            let train_set = ds.subset(&split.fold(f).train);
            let stats = neighbors::cohorts_for(&train_set, k, 1.0)?;
            info!("fold {f}: neighborhoods (k={k}) in {:.2?}", t.elapsed());
            self.q.insert((f, k), stats.q);
        }
        Ok(&self.q[&(f, k)])
    }
}

/// One fold's fitted method and its test-set predictions.
#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub fold: usize,
    pub fit: FoldFit,
    pub scored: ScoredSet,
}

/// Predictions of `method` on the test samples of fold `f`.
pub fn score_fold(
    method: &FittedMethod,
    ds: &EmbeddingDataset,
    split: &FoldSplit,
    f: usize,
) -> Result<ScoredSet> {
    let test = &split.fold(f).test;
    let x = ds.subset(test);
    let (p, _) = method.predict(x.embeddings().view())?;
    ScoredSet::from_probs(p, x.labels().to_vec(), method.kind().as_str(), Some(f))
}

/// Trains and scores `run.method` on every fold of `split`.
pub fn cross_validate(
    run: &RunConfig,
    ds: &EmbeddingDataset,
    split: &FoldSplit,
    cache: &mut CohortCache,
) -> Result<Vec<FoldOutcome>> {
    run.validate()?;
    let mut out = Vec::with_capacity(split.n_folds());
    for f in 0..split.n_folds() {
        out.push(fit_and_score(run, ds, split, f, cache)?);
    }
    Ok(out)
}

pub fn fit_and_score(
    run: &RunConfig,
    ds: &EmbeddingDataset,
    split: &FoldSplit,
    f: usize,
    cache: &mut CohortCache,
) -> Result<FoldOutcome> {
    let fit_cfg = run.fit_config(f);
    let uses_cohorts =
        run.method.kind == MethodKind::Cura && run.method.effective_objective(&run.objective).lambda_coh > 0.0;
    let q = if uses_cohorts {
        let k = baselines::resolve_k(&fit_cfg, split.fold(f).train.len());
        Some(cache.get_or_compute(ds, split, f, k)?.to_vec())
    } else {
        None
    };
    let t = Instant::now();
    let fit = baselines::fit_fold_with_cohorts(ds, split.fold(f), &run.method, &fit_cfg, q.as_deref())?;
    info!(
        "fold {f}: trained {} in {:.2?} (best epoch {})",
        run.method.kind,
        t.elapsed(),
        fit.logs.iter().map(|l| l.best_epoch.to_string()).collect::<Vec<_>>().join("/")
    );
    let scored = score_fold(&fit.method, ds, split, f)?;
    Ok(FoldOutcome { fold: f, fit, scored })
}

/// A JSON artifact tagged with the resolved configuration that produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub config: RunConfig,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fold: Option<usize>,
    pub body: T,
}

pub fn model_path(dir: &Path, method: MethodKind, f: usize) -> PathBuf {
    dir.join("models").join(format!("{method}_fold{f}.json"))
}

fn create_layout(dir: &Path) -> Result<()> {
    for sub in ["models", "logs", "reports", "curves"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

fn write_fold_artifacts(run: &RunConfig, ds: &EmbeddingDataset, split: &FoldSplit, o: &FoldOutcome) -> Result<()> {
    let dir = &run.out;
    let method = run.method.kind;
    let f = o.fold;
    write_json(
        &model_path(dir, method, f),
        &Artifact {
            config: run.clone(),
            fold: Some(f),
            body: o.fit.method.to_file(),
        },
    )?;
    if o.fit.logs.len() == 1 {
        o.fit.logs[0].write_csv(&dir.join("logs").join(format!("{method}_fold{f}.csv")))?;
    } else {
        for (i, log) in o.fit.logs.iter().enumerate() {
            log.write_csv(&dir.join("logs").join(format!("{method}_fold{f}_m{i}.csv")))?;
        }
    }
    if let Some(c) = &o.fit.cohorts {
        let ids: Vec<String> = split.fold(f).train.iter().map(|&i| ds.ids()[i].clone()).collect();
        c.write_csv(&ids, &dir.join("logs").join(format!("{method}_fold{f}_cohorts.csv")))?;
    }
    Ok(())
}

/// Loads data, splits it, trains every fold and writes config, folds,
/// models and logs under `run.out`.
pub fn train_run(run: &RunConfig) -> Result<Vec<FoldOutcome>> {
    run.validate()?;
    let t = Instant::now();
    let ds = run.data.load()?;
    let split = run.split(&ds)?;
    info!("loaded {} samples (dim {}) in {:.2?}", ds.len(), ds.dim(), t.elapsed());
    create_layout(&run.out)?;
    write_json(&run.out.join("config.json"), run)?;
    write_json(&run.out.join("folds.json"), &split.to_file())?;
    let mut cache = CohortCache::default();
    let mut outcomes = Vec::with_capacity(split.n_folds());
    for f in 0..split.n_folds() {
        let o = fit_and_score(run, &ds, &split, f, &mut cache)?;
        write_fold_artifacts(run, &ds, &split, &o)?;
        outcomes.push(o);
    }
    info!("train finished in {:.2?}", t.elapsed());
    Ok(outcomes)
}

/// A trained run reloaded from its directory.
#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub dir: PathBuf,
    pub config: RunConfig,
    pub data: EmbeddingDataset,
    pub split: FoldSplit,
    pub models: Vec<FittedMethod>,
}

pub fn load_run(dir: &Path) -> Result<LoadedRun> {
    let config: RunConfig = read_json(&dir.join("config.json"))?;
    let data = config.data.load()?;
    let file: FoldSplitFile = read_json(&dir.join("folds.json"))?;
    let split = FoldSplit::from_assignments(
        data.labels(),
        file.n_folds,
        file.assignments,
        config.folds.val_fraction,
        config.split_seed(),
    )?;
    let mut models = Vec::with_capacity(split.n_folds());
    for f in 0..split.n_folds() {
        let art: Artifact<MethodModelFile> = read_json(&model_path(dir, config.method.kind, f))?;
        if art.fold != Some(f) || art.body.method != config.method.kind {
            return Err(Error::Format(format!(
                "model file for fold {f} holds fold {:?} of method {}",
                art.fold, art.body.method
            )));
        }
        let model = FittedMethod::from_file(&art.body)?;
        if model.input_dim() != data.dim() {
            return Err(Error::DimMismatch {
                expected: data.dim(),
                actual: model.input_dim(),
            });
        }
        models.push(model);
    }
    Ok(LoadedRun {
        dir: dir.to_path_buf(),
        config,
        data,
        split,
        models,
    })
}

impl LoadedRun {
    pub fn scored_folds(&self) -> Result<Vec<ScoredSet>> {
        (0..self.split.n_folds())
            .map(|f| score_fold(&self.models[f], &self.data, &self.split, f))
            .collect()
    }

    pub fn method(&self) -> MethodKind {
        self.config.method.kind
    }
}

/// Per-fold reports and their mean/sd aggregate.
#[derive(Debug, Clone)]
pub struct EvalOutput {
    pub folds: Vec<EvalReport>,
    pub aggregate: AggregateReport,
}

/// Evaluates every fold of a trained run and writes reports and curves.
pub fn eval_run(dir: &Path) -> Result<EvalOutput> {
    let t = Instant::now();
    let run = load_run(dir)?;
    let method = run.method();
    let mut folds = Vec::new();
    for s in run.scored_folds()? {
        let f = s.fold.unwrap_or(0);
        let report = metrics::evaluate(&s)?;
        write_json(
            &dir.join("reports").join(format!("{method}_fold{f}.json")),
            &Artifact {
                config: run.config.clone(),
                fold: Some(f),
                body: &report,
            },
        )?;
        report.write_curves(&dir.join("curves").join(method.as_str()).join(format!("fold{f}")))?;
        folds.push(report);
    }
    let aggregate = metrics::aggregate(&folds);
    write_json(
        &dir.join("reports").join(format!("{method}_summary.json")),
        &Artifact {
            config: run.config.clone(),
            fold: None,
            body: &aggregate,
        },
    )?;
    write_atomic(
        &dir.join("reports").join(format!("{method}_summary.txt")),
        metrics::format_table(std::slice::from_ref(&aggregate)).as_bytes(),
    )?;
    info!("eval of {} finished in {:.2?}", dir.display(), t.elapsed());
    Ok(EvalOutput { folds, aggregate })
}

/// Pools the test predictions of all folds and writes the triage curves.
pub fn triage_run(dir: &Path) -> Result<EvalReport> {
    let run = load_run(dir)?;
    let method = run.method();
    let pooled = ScoredSet::pooled(&run.scored_folds()?, method.as_str());
    let report = metrics::evaluate(&pooled)?;
    report.write_curves(&dir.join("curves").join(method.as_str()).join("pooled"))?;
    write_json(
        &dir.join("reports").join(format!("{method}_pooled.json")),
        &Artifact {
            config: run.config.clone(),
            fold: None,
            body: &report,
        },
    )?;
    Ok(report)
}

/// Rows of the ablation table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    BaseOnly,
    Ind,
    Coh,
    Full,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::BaseOnly, Ablation::Ind, Ablation::Coh, Ablation::Full];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentGrid {
    pub base: RunConfig,
    pub lambda_ind: Vec<f64>,
    pub lambda_coh: Vec<f64>,
    pub methods: Vec<MethodKind>,
    pub ablation: Vec<Ablation>,
}

impl Default for ExperimentGrid {
    fn default() -> Self {
        Self {
            base: RunConfig::default(),
            lambda_ind: Vec::new(),
            lambda_coh: Vec::new(),
            methods: Vec::new(),
            ablation: Ablation::ALL.to_vec(),
        }
    }
}

/// One cell of a grid: a method with its calibration weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridCell {
    pub method: MethodKind,
    pub lambda_ind: f64,
    pub lambda_coh: f64,
}

impl GridCell {
    pub fn label(&self) -> String {
        match self.method {
            MethodKind::Cura => format!("cura_ind{}_coh{}", self.lambda_ind, self.lambda_coh),
            m => m.to_string(),
        }
    }
}

impl ExperimentGrid {
    /// Ablation rows first, then the weight sweep, then the other methods;
    /// duplicates are dropped.
    pub fn cells(&self) -> Vec<GridCell> {
        let (li, lc) = (self.base.objective.lambda_ind, self.base.objective.lambda_coh);
        let cura = |lambda_ind, lambda_coh| GridCell {
            method: MethodKind::Cura,
            lambda_ind,
            lambda_coh,
        };
        let mut cells = Vec::new();
        for a in &self.ablation {
            cells.push(match a {
                Ablation::BaseOnly => GridCell {
                    method: MethodKind::InternalBaseline,
                    lambda_ind: 0.0,
                    lambda_coh: 0.0,
                },
                Ablation::Ind => cura(li, 0.0),
                Ablation::Coh => cura(0.0, lc),
                Ablation::Full => cura(li, lc),
            });
        }
        if !self.lambda_ind.is_empty() || !self.lambda_coh.is_empty() {
            let inds = if self.lambda_ind.is_empty() { vec![li] } else { self.lambda_ind.clone() };
            let cohs = if self.lambda_coh.is_empty() { vec![lc] } else { self.lambda_coh.clone() };
            for &i in &inds {
                for &c in &cohs {
                    cells.push(cura(i, c));
                }
            }
        }
        for &m in &self.methods {
            cells.push(match m {
                MethodKind::Cura => cura(li, lc),
                m => GridCell {
                    method: m,
                    lambda_ind: 0.0,
                    lambda_coh: 0.0,
                },
            });
        }
        let mut unique: Vec<GridCell> = Vec::new();
        for c in cells {
            if !unique.contains(&c) {
                unique.push(c);
            }
        }
        unique
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if self.cells().is_empty() {
            return Err(Error::Config("grid has no cells".into()));
        }
        for &v in self.lambda_ind.iter().chain(&self.lambda_coh) {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("grid weight {v} must be finite and >= 0")));
            }
        }
        Ok(())
    }

    pub fn cell_config(&self, cell: &GridCell) -> RunConfig {
        let mut run = self.base.clone();
        run.method.kind = cell.method;
        run.objective.lambda_ind = cell.lambda_ind;
        run.objective.lambda_coh = cell.lambda_coh;
        run.out = self.base.out.join("cells").join(cell.label());
        run
    }
}

/// One line of the consolidated grid table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridRow {
    pub method: String,
    pub lambda_ind: f64,
    pub lambda_coh: f64,
    pub fold: usize,
    pub auroc: Option<f64>,
    pub auprc: Option<f64>,
    pub brier: Option<f64>,
    pub nll: Option<f64>,
    pub aurc: Option<f64>,
    pub status: String,
}

pub const GRID_HEADER: &str = "method,lambda_ind,lambda_coh,fold,auroc,auprc,brier,nll,aurc,status";

pub fn grid_csv(rows: &[GridRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(GRID_HEADER.split(','))
        .map_err(|e| Error::Format(e.to_string()))?;
    let cell = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x}"));
    for r in rows {
        w.write_record([
            r.method.clone(),
            format!("{}", r.lambda_ind),
            format!("{}", r.lambda_coh),
            r.fold.to_string(),
            cell(r.auroc),
            cell(r.auprc),
            cell(r.brier),
            cell(r.nll),
            cell(r.aurc),
            r.status.clone(),
        ])
        .map_err(|e| Error::Format(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

fn cell_rows(
    run: &RunConfig,
    cell: &GridCell,
    ds: &EmbeddingDataset,
    split: &FoldSplit,
    cache: &mut CohortCache,
) -> Vec<GridRow> {
    let row = |f: usize, r: Option<&EvalReport>, status: String| GridRow {
        method: cell.method.to_string(),
        lambda_ind: cell.lambda_ind,
        lambda_coh: cell.lambda_coh,
        fold: f,
        auroc: r.map(|r| r.auroc),
        auprc: r.map(|r| r.auprc),
        brier: r.map(|r| r.brier),
        nll: r.map(|r| r.nll),
        aurc: r.map(|r| r.aurc),
        status,
    };
    let result = (|| -> Result<Vec<EvalReport>> {
        run.validate()?;
        create_layout(&run.out)?;
        write_json(&run.out.join("config.json"), run)?;
        write_json(&run.out.join("folds.json"), &split.to_file())?;
        let mut reports = Vec::new();
        for f in 0..split.n_folds() {
            let o = fit_and_score(run, ds, split, f, cache)?;
            write_fold_artifacts(run, ds, split, &o)?;
            reports.push(metrics::evaluate(&o.scored)?);
        }
        Ok(reports)
    })();
    match result {
        Ok(reports) => reports
            .iter()
            .enumerate()
            .map(|(f, r)| row(f, Some(r), "ok".into()))
            .collect(),
        Err(e) => {
            log::warn!("grid cell {} failed: {e}", cell.label());
            (0..split.n_folds())
                .map(|f| row(f, None, format!("error: {e}")))
                .collect()
        }
    }
}

/// Runs every cell on shared data and folds. A failing cell is recorded in
/// the `status` column and the remaining cells still run.
pub fn run_grid(grid: &ExperimentGrid) -> Result<Vec<GridRow>> {
    grid.validate()?;
    let ds = grid.base.data.load()?;
    let split = grid.base.split(&ds)?;
    let out = &grid.base.out;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_json(&out.join("grid.json"), grid)?;
    let mut cache = CohortCache::default();
    let mut rows = Vec::new();
    for cell in grid.cells() {
        let t = Instant::now();
        rows.extend(cell_rows(&grid.cell_config(&cell), &cell, &ds, &split, &mut cache));
        info!("grid cell {} in {:.2?}", cell.label(), t.elapsed());
    }
    write_atomic(&out.join("results.csv"), grid_csv(&rows)?.as_bytes())?;
    Ok(rows)
}

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
pub const IDENTITY_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckOutcome {
    pub n_params: usize,
    pub max_grad_rel_error: f64,
    pub identity_tuples: usize,
    pub max_identity_residual: f64,
    pub passed: bool,
}

/// Finite-difference check of the full objective on the first `batch`
/// samples at a fresh initialization, plus the soft-label identity over
/// `tuples` random draws.
pub fn run_gradcheck(run: &RunConfig, batch: usize, tuples: usize) -> Result<GradcheckOutcome> {
    run.validate()?;
    let ds = run.data.load()?;
    let rows: Vec<usize> = (0..batch.min(ds.len())).collect();
    let sub = ds.subset(&rows);
    let fit = run.fit_config(0);
    let clf = multihead::init_classifier(ds.dim(), run.n_heads, &fit.head)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(run.seed, 0x6C));
    let q: Vec<f64> = (0..sub.len()).map(|_| rng.random_range(0.05..0.95)).collect();
    let w: Vec<f64> = q
        .iter()
        .map(|&v| run.objective.lambda_coh * neighbors::cohort_entropy(v))
        .collect();
    let grad = multihead::gradient_check(&clf, sub.embeddings().view(), sub.labels(), &q, &w, &run.objective, 1e-5)?;

    let mut worst = 0.0f64;
    for _ in 0..tuples {
        let p = rng.random_range(1e-6..1.0 - 1e-6);
        let y = u8::from(rng.random_bool(0.5));
        let q = rng.random_range(0.0..=1.0);
        let w = rng.random_range(0.0..=1.0);
        worst = worst.max(objective::verify_soft_label_identity(p, y, q, w));
    }
    Ok(GradcheckOutcome {
        n_params: grad.n_params,
        max_grad_rel_error: grad.max_rel_error,
        identity_tuples: tuples,
        max_identity_residual: worst,
        passed: grad.max_rel_error < GRADCHECK_TOLERANCE && worst < IDENTITY_TOLERANCE,
    })
}
