//! Exact cosine k-nearest-neighbor search over the labeled training set and
//! the per-sample cohort statistics derived from it.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{s, Array2, ArrayView2, Axis};

use crate::dataset::EmbeddingDataset;
use crate::error::{Error, Result};
use crate::io::write_atomic;

const QUERY_BLOCK: usize = 256;

/// Immutable exact kNN index. Reference rows are stored unit-normalized so
/// cosine distance reduces to `1 - <a, b>`.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    reference: Array2<f64>,
    labels: Vec<u8>,
    k: usize,
}

/// Per-sample neighborhood risk `q`, its normalized entropy, and the cohort
/// loss weight `lambda_coh * entropy`.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortStats {
    pub q: Vec<f64>,
    pub cohort_entropy: Vec<f64>,
    pub weight: Vec<f64>,
}

/// Default neighborhood size: 200 for large training sets, 100 otherwise,
/// capped at `n_train - 1`.
pub fn default_k(n_train: usize) -> usize {
    let k = if n_train >= 100_000 { 200 } else { 100 };
    k.min(n_train.saturating_sub(1)).max(1)
}

fn normalized_rows(rows: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let mut out = rows.to_owned();
    for (i, mut r) in out.rows_mut().into_iter().enumerate() {
        let norm = r.dot(&r).sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::ZeroNorm { row: i });
        }
        r.mapv_inplace(|v| v / norm);
    }
    Ok(out)
}

pub fn build_index(embeddings: ArrayView2<'_, f64>, labels: &[u8], k: usize) -> Result<NeighborIndex> {
    if embeddings.nrows() != labels.len() {
        return Err(Error::Dataset(format!(
            "{} reference rows but {} labels",
            embeddings.nrows(),
            labels.len()
        )));
    }
    if k == 0 || k + 1 > embeddings.nrows() {
        return Err(Error::KTooLarge {
            k,
            n_reference: embeddings.nrows(),
        });
    }
    Ok(NeighborIndex {
        reference: normalized_rows(embeddings)?,
        labels: labels.to_vec(),
        k,
    })
}

impl NeighborIndex {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.reference.ncols()
    }

    /// The `k` nearest reference rows for every query, nearest first, ties
    /// broken by ascending reference index. `exclude_self[i] = Some(j)` drops
    /// reference row `j` from query `i`'s candidates.
    pub fn query(
        &self,
        queries: ArrayView2<'_, f64>,
        exclude_self: &[Option<usize>],
    ) -> Result<Vec<Vec<usize>>> {
        if queries.ncols() != self.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                actual: queries.ncols(),
            });
        }
        if exclude_self.len() != queries.nrows() {
            return Err(Error::Config(format!(
                "exclude_self has {} entries for {} queries",
                exclude_self.len(),
                queries.nrows()
            )));
        }
        let queries = normalized_rows(queries)?;
        let mut out = Vec::with_capacity(queries.nrows());
        let mut dist: Vec<f64> = Vec::with_capacity(self.len());
        let mut scratch: Vec<f64> = Vec::with_capacity(self.len());
        let mut candidates: Vec<(f64, usize)> = Vec::new();
        for start in (0..queries.nrows()).step_by(QUERY_BLOCK) {
            let end = (start + QUERY_BLOCK).min(queries.nrows());
            let sims = queries.slice(s![start..end, ..]).dot(&self.reference.t());
            for (offset, row) in sims.axis_iter(Axis(0)).enumerate() {
                let skip = exclude_self[start + offset];
                dist.clear();
                dist.extend(row.iter().map(|&sim| 1.0 - sim));
                if let Some(j) = skip {
                    if j < dist.len() {
                        dist[j] = f64::INFINITY;
                    }
                }
                out.push(self.select_k(&dist, skip, &mut scratch, &mut candidates));
            }
        }
        Ok(out)
    }

    /// Indices of the `k` smallest entries of `dist`, ties by index. A
    /// threshold pass on bare distances keeps the ordered sort small.
    fn select_k(
        &self,
        dist: &[f64],
        skip: Option<usize>,
        scratch: &mut Vec<f64>,
        candidates: &mut Vec<(f64, usize)>,
    ) -> Vec<usize> {
        let available = dist.len() - usize::from(skip.is_some_and(|j| j < dist.len()));
        let k = self.k.min(available);
        if k == 0 {
            return Vec::new();
        }
        scratch.clear();
        scratch.extend_from_slice(dist);
        let (_, &mut threshold, _) = scratch.select_nth_unstable_by(k - 1, f64::total_cmp);
        candidates.clear();
        candidates.extend(
            dist.iter()
                .enumerate()
                .filter(|&(j, &d)| d <= threshold && Some(j) != skip)
                .map(|(j, &d)| (d, j)),
        );
        candidates.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        candidates[..k].iter().map(|&(_, j)| j).collect()
    }

    /// Mean label of each query's `k` neighbors.
    pub fn neighborhood_risk(
        &self,
        queries: ArrayView2<'_, f64>,
        exclude_self: &[Option<usize>],
    ) -> Result<Vec<f64>> {
        let neighbors = self.query(queries, exclude_self)?;
        Ok(neighbors
            .iter()
            .map(|nbrs| {
                let hits = nbrs.iter().filter(|&&j| self.labels[j] == 1).count();
                hits as f64 / self.k as f64
            })
            .collect())
    }
}

/// Binary entropy of `q` normalized by `ln 2`, with `0 ln 0 = 0`.
pub fn cohort_entropy(q: f64) -> f64 {
    if q <= 0.0 || q >= 1.0 {
        return 0.0;
    }
    if q == 0.5 {
        return 1.0;
    }
    let h = -(q * q.ln() + (1.0 - q) * (1.0 - q).ln());
    (h / std::f64::consts::LN_2).clamp(0.0, 1.0)
}

impl CohortStats {
    pub fn from_q(q: Vec<f64>, lambda_coh: f64) -> Self {
        let cohort_entropy: Vec<f64> = q.iter().map(|&v| cohort_entropy(v)).collect();
        let weight = cohort_entropy.iter().map(|&h| lambda_coh * h).collect();
        Self {
            q,
            cohort_entropy,
            weight,
        }
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    /// Restricts the statistics to `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> CohortStats {
        CohortStats {
            q: indices.iter().map(|&i| self.q[i]).collect(),
            cohort_entropy: indices.iter().map(|&i| self.cohort_entropy[i]).collect(),
            weight: indices.iter().map(|&i| self.weight[i]).collect(),
        }
    }

    pub fn to_csv_string(&self, ids: &[String]) -> String {
        let mut out = String::from("id,q,cohort_entropy,weight\n");
        for i in 0..self.len() {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                ids[i], self.q[i], self.cohort_entropy[i], self.weight[i]
            );
        }
        out
    }

    pub fn write_csv(&self, ids: &[String], path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv_string(ids).as_bytes())
    }
}

/// Cohort statistics for every row of `train_set`, which must be the set the
/// index was built from. Each sample is excluded from its own neighborhood.
pub fn precompute_cohorts(
    idx: &NeighborIndex,
    train_set: &EmbeddingDataset,
    lambda_coh: f64,
) -> Result<CohortStats> {
    if train_set.len() != idx.len() {
        return Err(Error::Dataset(format!(
            "index holds {} samples but the training set has {}",
            idx.len(),
            train_set.len()
        )));
    }
    let exclude: Vec<Option<usize>> = (0..train_set.len()).map(Some).collect();
    let q = idx.neighborhood_risk(train_set.embeddings().view(), &exclude)?;
    Ok(CohortStats::from_q(q, lambda_coh))
}

/// Builds the index over `train_set` and precomputes its cohorts in one go.
pub fn cohorts_for(train_set: &EmbeddingDataset, k: usize, lambda_coh: f64) -> Result<CohortStats> {
    let idx = build_index(train_set.embeddings().view(), train_set.labels(), k)?;
    precompute_cohorts(&idx, train_set, lambda_coh)
}
