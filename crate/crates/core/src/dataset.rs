//! Embedding datasets: the in-memory model, a synthetic cohort generator,
//! CSV interchange and stratified cross-validation folds.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::seed::derive_seed;

/// Frozen per-sample embeddings with binary outcome labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDataset {
    ids: Vec<String>,
    embeddings: Array2<f64>,
    labels: Vec<u8>,
}

impl EmbeddingDataset {
    pub fn new(ids: Vec<String>, embeddings: Array2<f64>, labels: Vec<u8>) -> Result<Self> {
        let n = embeddings.nrows();
        if ids.len() != n || labels.len() != n {
            return Err(Error::Dataset(format!(
                "row counts disagree: {} ids, {} embedding rows, {} labels",
                ids.len(),
                n,
                labels.len()
            )));
        }
        if embeddings.ncols() == 0 {
            return Err(Error::Dataset("embedding dimension must be at least 1".into()));
        }
        if let Some(i) = labels.iter().position(|&y| y > 1) {
            return Err(Error::Dataset(format!("label at row {i} is not 0 or 1")));
        }
        if let Some((i, _)) = embeddings
            .indexed_iter()
            .find(|(_, v)| !v.is_finite())
        {
            return Err(Error::Dataset(format!(
                "non-finite embedding value at row {}, column {}",
                i.0, i.1
            )));
        }
        Ok(Self {
            ids,
            embeddings,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.ncols()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn embeddings(&self) -> &Array2<f64> {
        &self.embeddings
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.embeddings.row(i)
    }

    pub fn n_positive(&self) -> usize {
        self.labels.iter().filter(|&&y| y == 1).count()
    }

    pub fn positive_rate(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.n_positive() as f64 / self.len() as f64
        }
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> EmbeddingDataset {
        EmbeddingDataset {
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            embeddings: self.embeddings.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// Parameters of the synthetic cohort generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub dim: usize,
    pub n_clusters: usize,
    pub target_positive_rate: f64,
    pub ambiguity: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_samples: 10_000,
            dim: 16,
            n_clusters: 4,
            target_positive_rate: 0.03,
            ambiguity: 0.2,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 1 {
            return Err(Error::Config("dim must be at least 1".into()));
        }
        if self.n_clusters < 2 {
            return Err(Error::Config(
                "n_clusters must be at least 2 (one per class)".into(),
            ));
        }
        if self.n_samples < 2 * self.n_clusters {
            return Err(Error::Config(format!(
                "n_samples = {} is below 2 * n_clusters = {}",
                self.n_samples,
                2 * self.n_clusters
            )));
        }
        if !(self.target_positive_rate > 0.0 && self.target_positive_rate < 1.0) {
            return Err(Error::Config(
                "target_positive_rate must lie strictly between 0 and 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.ambiguity) {
            return Err(Error::Config("ambiguity must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Number of positive-class clusters.
    pub fn n_positive_clusters(&self) -> usize {
        let k = (self.n_clusters as f64 * self.target_positive_rate).round() as usize;
        k.clamp(1, self.n_clusters - 1)
    }

    /// Size of the ambiguous boundary cohort. Its labels are fair coin flips,
    /// so it is sized against the minority class to keep the overall rate on
    /// target: `ambiguity = 1` turns the whole minority mass into boundary cases.
    pub fn n_ambiguous(&self) -> usize {
        let minority = self.target_positive_rate.min(1.0 - self.target_positive_rate);
        (self.n_samples as f64 * self.ambiguity * 2.0 * minority).round() as usize
    }
}

/// Where a synthetic sample came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleOrigin {
    /// Drawn around a cluster center; label is the cluster's class.
    Cluster { cluster: usize, class: u8 },
    /// Drawn between a positive and a negative center; coin-flip label.
    Ambiguous {
        positive_cluster: usize,
        negative_cluster: usize,
    },
}

/// A generated dataset together with the generator's ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticCohort {
    pub dataset: EmbeddingDataset,
    pub origins: Vec<SampleOrigin>,
    pub centers: Array2<f64>,
    pub cluster_class: Vec<u8>,
}

const CENTER_RADIUS: f64 = 4.0;

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<EmbeddingDataset> {
    generate_synthetic_cohort(cfg).map(|c| c.dataset)
}

/// Gaussian clusters on a sphere of radius 4 with unit noise, plus an
/// ambiguous cohort interpolated between opposite-class centers.
pub fn generate_synthetic_cohort(cfg: &SynthConfig) -> Result<SyntheticCohort> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.n_samples;
    let dim = cfg.dim;

    let mut centers = Array2::<f64>::zeros((cfg.n_clusters, dim));
    for mut c in centers.rows_mut() {
        loop {
            for v in c.iter_mut() {
                *v = StandardNormal.sample(&mut rng);
            }
            let norm = c.dot(&c).sqrt();
            if norm > 1e-12 {
                c.mapv_inplace(|v| v / norm * CENTER_RADIUS);
                break;
            }
        }
    }
    let n_pos_clusters = cfg.n_positive_clusters();
    let cluster_class: Vec<u8> = (0..cfg.n_clusters)
        .map(|c| u8::from(c < n_pos_clusters))
        .collect();
    let positive_clusters: Vec<usize> = (0..n_pos_clusters).collect();
    let negative_clusters: Vec<usize> = (n_pos_clusters..cfg.n_clusters).collect();

    let n_amb = cfg.n_ambiguous().min(n);
    let n_clean = n - n_amb;
    let n_clean_pos = (n as f64 * cfg.target_positive_rate - n_amb as f64 / 2.0)
        .round()
        .clamp(0.0, n_clean as f64) as usize;

    let mut embeddings = Array2::<f64>::zeros((n, dim));
    let mut labels = Vec::with_capacity(n);
    let mut origins = Vec::with_capacity(n);
    for (i, mut row) in embeddings.rows_mut().into_iter().enumerate() {
        let origin = if i < n_clean {
            let class = u8::from(i < n_clean_pos);
            let pool = if class == 1 {
                &positive_clusters
            } else {
                &negative_clusters
            };
            let cluster = pool[rng.random_range(0..pool.len())];
            row.assign(&centers.row(cluster));
            labels.push(class);
            SampleOrigin::Cluster { cluster, class }
        } else {
            let p = positive_clusters[rng.random_range(0..positive_clusters.len())];
            let q = negative_clusters[rng.random_range(0..negative_clusters.len())];
            let t: f64 = rng.random_range(0.4..0.6);
            for ((v, &cp), &cn) in row
                .iter_mut()
                .zip(centers.row(p).iter())
                .zip(centers.row(q).iter())
            {
                *v = cn + t * (cp - cn);
            }
            labels.push(u8::from(rng.random_bool(0.5)));
            SampleOrigin::Ambiguous {
                positive_cluster: p,
                negative_cluster: q,
            }
        };
        for v in row.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += z;
        }
        origins.push(origin);
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let embeddings = embeddings.select(Axis(0), &order);
    let labels: Vec<u8> = order.iter().map(|&i| labels[i]).collect();
    let origins: Vec<SampleOrigin> = order.iter().map(|&i| origins[i]).collect();
    let ids = (0..n).map(|i| format!("s{i:06}")).collect();

    Ok(SyntheticCohort {
        dataset: EmbeddingDataset::new(ids, embeddings, labels)?,
        origins,
        centers,
        cluster_class,
    })
}

/// Reads the `id,label,e0,...,e{dim-1}` CSV format.
pub fn load_csv(path: &Path) -> Result<EmbeddingDataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, path)
}

pub(crate) fn read_csv<R: std::io::Read>(reader: R, path: &Path) -> Result<EmbeddingDataset> {
    let err = |line: u64, message: String| Error::Csv {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = rdr.records();

    let header = match records.next() {
        Some(rec) => rec.map_err(|e| err(1, e.to_string()))?,
        None => return Err(err(1, "empty file, expected header".into())),
    };
    if header.len() < 3 || &header[0] != "id" || &header[1] != "label" {
        return Err(err(
            1,
            "malformed header: expected `id,label,e0,...`".into(),
        ));
    }
    let dim = header.len() - 2;
    for (j, name) in header.iter().skip(2).enumerate() {
        if name != format!("e{j}") {
            return Err(err(
                1,
                format!("malformed header: column {} is `{name}`, expected `e{j}`", j + 2),
            ));
        }
    }

    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut values = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if rec.len() != dim + 2 {
            return Err(err(
                line,
                format!(
                    "expected {} columns ({dim} embedding cells), found {}",
                    dim + 2,
                    rec.len()
                ),
            ));
        }
        ids.push(rec[0].to_string());
        let label = match &rec[1] {
            "0" => 0,
            "1" => 1,
            other => return Err(err(line, format!("label `{other}` is not 0 or 1"))),
        };
        labels.push(label);
        for (j, cell) in rec.iter().skip(2).enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| err(line, format!("embedding cell e{j} = `{cell}` is not a number")))?;
            if !v.is_finite() {
                return Err(err(line, format!("embedding cell e{j} is not finite")));
            }
            values.push(v);
        }
    }
    if ids.is_empty() {
        return Err(err(2, "no data rows".into()));
    }
    let embeddings = Array2::from_shape_vec((ids.len(), dim), values)
        .map_err(|e| Error::Dataset(e.to_string()))?;
    EmbeddingDataset::new(ids, embeddings, labels)
}

pub fn to_csv_string(ds: &EmbeddingDataset) -> String {
    let mut out = String::with_capacity(ds.len() * (ds.dim() * 20 + 16));
    out.push_str("id,label");
    for j in 0..ds.dim() {
        let _ = write!(out, ",e{j}");
    }
    out.push('\n');
    for (i, row) in ds.embeddings.rows().into_iter().enumerate() {
        let _ = write!(out, "{},{}", ds.ids[i], ds.labels[i]);
        for v in row {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

pub fn write_csv(ds: &EmbeddingDataset, path: &Path) -> Result<()> {
    write_atomic(path, to_csv_string(ds).as_bytes())
}

/// Index sets for one cross-validation fold, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// A stratified k-fold assignment plus the derived per-fold index sets.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldSplit {
    n_folds: usize,
    assignments: Vec<usize>,
    folds: Vec<Fold>,
}

/// On-disk form of a [`FoldSplit`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldSplitFile {
    pub n_folds: usize,
    pub assignments: Vec<usize>,
}

pub const DEFAULT_VAL_FRACTION: f64 = 0.125;

/// Stratified assignment: each class is shuffled and dealt round-robin over
/// folds, so per-fold class counts differ by at most one.
pub fn split_folds(
    ds: &EmbeddingDataset,
    n_folds: usize,
    val_fraction: f64,
    seed: u64,
) -> Result<FoldSplit> {
    if n_folds < 2 {
        return Err(Error::Config("n_folds must be at least 2".into()));
    }
    let positives: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == 1).collect();
    let negatives: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == 0).collect();
    if positives.len() < n_folds || negatives.len() < n_folds {
        return Err(Error::Stratification {
            needed: n_folds,
            positives: positives.len(),
            negatives: negatives.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignments = vec![0usize; ds.len()];
    let mut offset = 0;
    for mut class in [positives, negatives] {
        class.shuffle(&mut rng);
        for (pos, &i) in class.iter().enumerate() {
            assignments[i] = (pos + offset) % n_folds;
        }
        offset = (offset + class.len()) % n_folds;
    }
    FoldSplit::from_assignments(ds.labels(), n_folds, assignments, val_fraction, seed)
}

impl FoldSplit {
    /// Rebuilds the per-fold train/validation/test sets from a fold
    /// assignment. Validation is a stratified `val_fraction` of each fold's
    /// non-test samples.
    pub fn from_assignments(
        labels: &[u8],
        n_folds: usize,
        assignments: Vec<usize>,
        val_fraction: f64,
        seed: u64,
    ) -> Result<Self> {
        if n_folds < 2 {
            return Err(Error::Config("n_folds must be at least 2".into()));
        }
        if !(val_fraction > 0.0 && val_fraction < 1.0) {
            return Err(Error::Config("val_fraction must lie in (0, 1)".into()));
        }
        if assignments.len() != labels.len() {
            return Err(Error::Config(format!(
                "fold assignment covers {} samples, dataset has {}",
                assignments.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = assignments.iter().find(|&&f| f >= n_folds) {
            return Err(Error::Config(format!(
                "fold index {bad} out of range for {n_folds} folds"
            )));
        }
        let has_pos = labels.contains(&1);
        let has_neg = labels.contains(&0);

        let mut folds = Vec::with_capacity(n_folds);
        for f in 0..n_folds {
            let test: Vec<usize> = (0..labels.len()).filter(|&i| assignments[i] == f).collect();
            if test.is_empty() {
                return Err(Error::Config(format!("fold {f} has an empty test set")));
            }
            let test_pos = test.iter().any(|&i| labels[i] == 1);
            let test_neg = test.iter().any(|&i| labels[i] == 0);
            if (has_pos && !test_pos) || (has_neg && !test_neg) {
                return Err(Error::Config(format!(
                    "fold {f} test set is missing a class present in the dataset"
                )));
            }

            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x5EED_0000 + f as u64));
            let mut train = Vec::new();
            let mut validation = Vec::new();
            for class in [1u8, 0u8] {
                let mut pool: Vec<usize> = (0..labels.len())
                    .filter(|&i| assignments[i] != f && labels[i] == class)
                    .collect();
                pool.shuffle(&mut rng);
                let max_val = pool.len().saturating_sub(1);
                let n_val = ((pool.len() as f64 * val_fraction).round() as usize).min(max_val);
                validation.extend_from_slice(&pool[..n_val]);
                train.extend_from_slice(&pool[n_val..]);
            }
            train.sort_unstable();
            validation.sort_unstable();
            folds.push(Fold {
                train,
                validation,
                test,
            });
        }
        Ok(Self {
            n_folds,
            assignments,
            folds,
        })
    }

    pub fn n_folds(&self) -> usize {
        self.n_folds
    }

    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    pub fn fold(&self, f: usize) -> &Fold {
        &self.folds[f]
    }

    pub fn folds(&self) -> &[Fold] {
        &self.folds
    }

    pub fn to_file(&self) -> FoldSplitFile {
        FoldSplitFile {
            n_folds: self.n_folds,
            assignments: self.assignments.clone(),
        }
    }
}
