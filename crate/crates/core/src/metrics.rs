//! Evaluation metrics: discrimination (AUROC, AUPRC), calibration (Brier,
//! NLL), selective prediction (AURC and risk-coverage), and the triage views
//! (uncertainty bins, retained-cohort AUPRC, workload vs. missed positives,
//! false reassurance rate).
//!
//! Hard decisions use a fixed 0.5 threshold: `prob >= 0.5` predicts positive.
//! Retention orders samples by ascending uncertainty, ties by ascending index.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{opt_cell, write_atomic, write_json};
use crate::objective::{self, normalized_entropy};

pub const DECISION_THRESHOLD: f64 = 0.5;
/// Thresholds of the false-reassurance sweep.
pub const FRR_TAUS: [f64; 3] = [0.05, 0.10, 0.15];
pub const DEFAULT_N_BINS: usize = 10;
const METRIC_EPSILON: f64 = 1e-7;

/// Final probabilities, their normalized-entropy uncertainty and labels for
/// one method on one fold (or on pooled folds).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSet {
    prob: Vec<f64>,
    uncertainty: Vec<f64>,
    label: Vec<u8>,
    pub method: String,
    pub fold: Option<usize>,
}

impl ScoredSet {
    /// Derives uncertainty from `prob`.
    pub fn from_probs(
        prob: Vec<f64>,
        label: Vec<u8>,
        method: impl Into<String>,
        fold: Option<usize>,
    ) -> Result<Self> {
        let uncertainty = prob.iter().map(|&p| normalized_entropy(p)).collect();
        Self::new(prob, uncertainty, label, method, fold)
    }

    pub fn new(
        prob: Vec<f64>,
        uncertainty: Vec<f64>,
        label: Vec<u8>,
        method: impl Into<String>,
        fold: Option<usize>,
    ) -> Result<Self> {
        if prob.len() != label.len() || uncertainty.len() != label.len() {
            return Err(Error::Config(format!(
                "scored set lengths differ: {} probs, {} uncertainties, {} labels",
                prob.len(),
                uncertainty.len(),
                label.len()
            )));
        }
        for (i, (&p, &u)) in prob.iter().zip(&uncertainty).enumerate() {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("probability {p} at {i} outside [0, 1]")));
            }
            if (normalized_entropy(p) - u).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "uncertainty {u} at {i} is not the normalized entropy of {p}"
                )));
            }
        }
        if let Some(i) = label.iter().position(|&y| y > 1) {
            return Err(Error::Config(format!("label at {i} is not binary")));
        }
        Ok(Self {
            prob,
            uncertainty,
            label,
            method: method.into(),
            fold,
        })
    }

    /// Concatenation of several sets (e.g. all test folds of one method).
    pub fn pooled(sets: &[ScoredSet], method: impl Into<String>) -> ScoredSet {
        let mut out = ScoredSet {
            prob: Vec::new(),
            uncertainty: Vec::new(),
            label: Vec::new(),
            method: method.into(),
            fold: None,
        };
        for s in sets {
            out.prob.extend_from_slice(&s.prob);
            out.uncertainty.extend_from_slice(&s.uncertainty);
            out.label.extend_from_slice(&s.label);
        }
        out
    }

    pub fn len(&self) -> usize {
        self.label.len()
    }

    pub fn is_empty(&self) -> bool {
        self.label.is_empty()
    }

    pub fn prob(&self) -> &[f64] {
        &self.prob
    }

    pub fn uncertainty(&self) -> &[f64] {
        &self.uncertainty
    }

    pub fn label(&self) -> &[u8] {
        &self.label
    }

    pub fn n_positive(&self) -> usize {
        self.label.iter().filter(|&&y| y == 1).count()
    }

    fn subset(&self, idx: &[usize]) -> ScoredSet {
        ScoredSet {
            prob: idx.iter().map(|&i| self.prob[i]).collect(),
            uncertainty: idx.iter().map(|&i| self.uncertainty[i]).collect(),
            label: idx.iter().map(|&i| self.label[i]).collect(),
            method: self.method.clone(),
            fold: self.fold,
        }
    }

    fn is_error(&self, i: usize) -> bool {
        u8::from(self.prob[i] >= DECISION_THRESHOLD) != self.label[i]
    }

    /// Indices from most to least certain.
    fn confidence_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| {
            self.uncertainty[a]
                .total_cmp(&self.uncertainty[b])
                .then(a.cmp(&b))
        });
        idx
    }
}

/// Number of samples kept at fraction `f` of `n`: `ceil(f n)`, guarded
/// against representation error in `f n`.
fn retained_count(f: f64, n: usize) -> usize {
    let raw = f * n as f64;
    let c = (raw - 1e-9).ceil().max(0.0) as usize;
    c.min(n)
}

/// Mann-Whitney AUROC with ties counted one half.
pub fn auroc(s: &ScoredSet) -> Result<f64> {
    let n_pos = s.n_positive();
    let n_neg = s.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Undefined("AUROC needs both classes".into()));
    }
    let mut idx: Vec<usize> = (0..s.len()).collect();
    idx.sort_by(|&a, &b| s.prob[a].total_cmp(&s.prob[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && s.prob[idx[j + 1]] == s.prob[idx[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j+1 share their average.
        let avg_rank = (i + j + 2) as f64 / 2.0;
        let pos_in_group = idx[i..=j].iter().filter(|&&k| s.label[k] == 1).count();
        rank_sum_pos += avg_rank * pos_in_group as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// Average precision: mean over positives of the precision at their rank,
/// ranking by descending probability then ascending index.
pub fn auprc(s: &ScoredSet) -> Result<f64> {
    let n_pos = s.n_positive();
    if n_pos == 0 {
        return Err(Error::Undefined("AUPRC needs at least one positive".into()));
    }
    let mut idx: Vec<usize> = (0..s.len()).collect();
    idx.sort_by(|&a, &b| s.prob[b].total_cmp(&s.prob[a]).then(a.cmp(&b)));
    let mut tp = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in idx.iter().enumerate() {
        if s.label[i] == 1 {
            tp += 1;
            sum += tp as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / n_pos as f64)
}

pub fn brier(s: &ScoredSet) -> f64 {
    let sum: f64 = s
        .prob
        .iter()
        .zip(&s.label)
        .map(|(&p, &y)| (p - f64::from(y)).powi(2))
        .sum();
    sum / s.len().max(1) as f64
}

/// Unweighted mean negative log-likelihood.
pub fn nll(s: &ScoredSet) -> f64 {
    let sum: f64 = s
        .prob
        .iter()
        .zip(&s.label)
        .map(|(&p, &y)| objective::ce(objective::clamp_prob(p, METRIC_EPSILON), f64::from(y)))
        .sum();
    sum / s.len().max(1) as f64
}

/// Selective risk at each coverage `k / n`, most certain samples first.
pub fn risk_coverage(s: &ScoredSet) -> Vec<(f64, f64)> {
    let n = s.len();
    let mut errors = 0usize;
    s.confidence_order()
        .into_iter()
        .enumerate()
        .map(|(pos, i)| {
            errors += usize::from(s.is_error(i));
            let k = pos + 1;
            (k as f64 / n as f64, errors as f64 / k as f64)
        })
        .collect()
}

/// Mean selective risk over all `n` coverage levels.
pub fn aurc(s: &ScoredSet) -> f64 {
    let curve = risk_coverage(s);
    if curve.is_empty() {
        return 0.0;
    }
    curve.iter().map(|&(_, r)| r).sum::<f64>() / curve.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinRow {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub accuracy: Option<f64>,
    pub positive_rate: Option<f64>,
}

/// Equal-width uncertainty bins on [0, 1]; the last bin is right-closed.
pub fn uncertainty_bins(s: &ScoredSet, n_bins: usize) -> Vec<BinRow> {
    let n_bins = n_bins.max(1);
    let mut count = vec![0usize; n_bins];
    let mut correct = vec![0usize; n_bins];
    let mut positive = vec![0usize; n_bins];
    for i in 0..s.len() {
        let b = ((s.uncertainty[i] * n_bins as f64).floor() as usize).min(n_bins - 1);
        count[b] += 1;
        correct[b] += usize::from(!s.is_error(i));
        positive[b] += usize::from(s.label[i] == 1);
    }
    (0..n_bins)
        .map(|b| {
            let ratio = |k: usize| (count[b] > 0).then(|| k as f64 / count[b] as f64);
            BinRow {
                lo: b as f64 / n_bins as f64,
                hi: (b + 1) as f64 / n_bins as f64,
                count: count[b],
                accuracy: ratio(correct[b]),
                positive_rate: ratio(positive[b]),
            }
        })
        .collect()
}

/// AUPRC on the `ceil(f n)` lowest-uncertainty samples; `None` when the
/// retained set has no positives.
pub fn retained_auprc_curve(s: &ScoredSet, fractions: &[f64]) -> Vec<(f64, Option<f64>)> {
    let order = s.confidence_order();
    fractions
        .iter()
        .map(|&f| {
            let k = retained_count(f, s.len());
            let kept = s.subset(&order[..k]);
            (f, auprc(&kept).ok())
        })
        .collect()
}

/// Missed positives per 1000 samples when the `ceil(f n)` most certain
/// samples are handled automatically. A miss is an automated positive with
/// `prob < 0.5`.
pub fn workload_safety_curve(s: &ScoredSet, fractions: &[f64]) -> Vec<(f64, f64)> {
    let order = s.confidence_order();
    let n = s.len();
    let mut missed_prefix = Vec::with_capacity(n + 1);
    missed_prefix.push(0usize);
    for &i in &order {
        let miss = usize::from(s.label[i] == 1 && s.prob[i] < DECISION_THRESHOLD);
        missed_prefix.push(missed_prefix.last().copied().unwrap_or(0) + miss);
    }
    fractions
        .iter()
        .map(|&f| {
            let k = retained_count(f, n);
            let v = if n == 0 {
                0.0
            } else {
                1000.0 * missed_prefix[k] as f64 / n as f64
            };
            (f, v)
        })
        .collect()
}

/// Share of positives with both `u < tau` and `prob < tau`.
pub fn false_reassurance_rate(s: &ScoredSet, tau: f64) -> Result<f64> {
    let n_pos = s.n_positive();
    if n_pos == 0 {
        return Err(Error::Undefined("FRR needs at least one positive".into()));
    }
    let reassured = (0..s.len())
        .filter(|&i| s.label[i] == 1 && s.uncertainty[i] < tau && s.prob[i] < tau)
        .count();
    Ok(reassured as f64 / n_pos as f64)
}

pub fn frr_sweep(s: &ScoredSet) -> Result<Vec<(f64, f64)>> {
    FRR_TAUS
        .iter()
        .map(|&t| false_reassurance_rate(s, t).map(|v| (t, v)))
        .collect()
}

/// Fractions 0.1, 0.2, ..., 1.0.
pub fn default_retained_fractions() -> Vec<f64> {
    (1..=10).map(|i| i as f64 / 10.0).collect()
}

/// Fractions 0, 0.05, ..., 1.0.
pub fn default_workload_fractions() -> Vec<f64> {
    (0..=20).map(|i| i as f64 / 20.0).collect()
}

/// Curve tables of an [`EvalReport`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Curves {
    pub risk_coverage: Vec<(f64, f64)>,
    pub bins: Vec<BinRow>,
    pub workload_safety: Vec<(f64, f64)>,
    pub retained_auprc: Vec<(f64, Option<f64>)>,
}

/// Scalar metrics of one method on one fold; curves are written as CSVs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub fold: Option<usize>,
    pub n: usize,
    pub n_positive: usize,
    pub auroc: f64,
    pub auprc: f64,
    pub brier: f64,
    pub nll: f64,
    pub aurc: f64,
    /// Keyed by the threshold formatted as a decimal string.
    pub frr: BTreeMap<String, f64>,
    #[serde(skip)]
    pub curves: Curves,
}

pub fn evaluate(s: &ScoredSet) -> Result<EvalReport> {
    Ok(EvalReport {
        method: s.method.clone(),
        fold: s.fold,
        n: s.len(),
        n_positive: s.n_positive(),
        auroc: auroc(s)?,
        auprc: auprc(s)?,
        brier: brier(s),
        nll: nll(s),
        aurc: aurc(s),
        frr: frr_sweep(s)?
            .into_iter()
            .map(|(t, v)| (format!("{t}"), v))
            .collect(),
        curves: Curves {
            risk_coverage: risk_coverage(s),
            bins: uncertainty_bins(s, DEFAULT_N_BINS),
            workload_safety: workload_safety_curve(s, &default_workload_fractions()),
            retained_auprc: retained_auprc_curve(s, &default_retained_fractions()),
        },
    })
}

pub fn risk_coverage_csv(rows: &[(f64, f64)]) -> String {
    let mut out = String::from("coverage,risk\n");
    for (c, r) in rows {
        let _ = writeln!(out, "{c},{r}");
    }
    out
}

pub fn bins_csv(rows: &[BinRow]) -> String {
    let mut out = String::from("lo,hi,count,accuracy,positive_rate\n");
    for b in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            b.lo,
            b.hi,
            b.count,
            opt_cell(b.accuracy),
            opt_cell(b.positive_rate)
        );
    }
    out
}

pub fn workload_safety_csv(rows: &[(f64, f64)]) -> String {
    let mut out = String::from("fraction,missed_per_1000\n");
    for (f, v) in rows {
        let _ = writeln!(out, "{f},{v}");
    }
    out
}

pub fn retained_auprc_csv(rows: &[(f64, Option<f64>)]) -> String {
    let mut out = String::from("fraction,auprc\n");
    for (f, v) in rows {
        let _ = writeln!(out, "{f},{}", opt_cell(*v));
    }
    out
}

pub fn frr_csv(rows: &[(f64, f64)]) -> String {
    let mut out = String::from("tau,frr\n");
    for (t, v) in rows {
        let _ = writeln!(out, "{t},{v}");
    }
    out
}

impl EvalReport {
    pub fn frr_rows(&self) -> Vec<(f64, f64)> {
        let mut rows: Vec<(f64, f64)> = self
            .frr
            .iter()
            .filter_map(|(k, v)| k.parse::<f64>().ok().map(|t| (t, *v)))
            .collect();
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));
        rows
    }

    /// Writes the five curve CSVs into `dir`.
    pub fn write_curves(&self, dir: &Path) -> Result<()> {
        write_atomic(
            &dir.join("risk_coverage.csv"),
            risk_coverage_csv(&self.curves.risk_coverage).as_bytes(),
        )?;
        write_atomic(&dir.join("bins.csv"), bins_csv(&self.curves.bins).as_bytes())?;
        write_atomic(
            &dir.join("workload_safety.csv"),
            workload_safety_csv(&self.curves.workload_safety).as_bytes(),
        )?;
        write_atomic(
            &dir.join("retained_auprc.csv"),
            retained_auprc_csv(&self.curves.retained_auprc).as_bytes(),
        )?;
        write_atomic(&dir.join("frr.csv"), frr_csv(&self.frr_rows()).as_bytes())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

/// Mean and population standard deviation across folds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            sd: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub method: String,
    pub n_folds: usize,
    pub auroc: MeanSd,
    pub auprc: MeanSd,
    pub brier: MeanSd,
    pub nll: MeanSd,
    pub aurc: MeanSd,
    pub frr: BTreeMap<String, MeanSd>,
}

pub fn aggregate(reports: &[EvalReport]) -> AggregateReport {
    let col = |f: fn(&EvalReport) -> f64| MeanSd::of(&reports.iter().map(f).collect::<Vec<_>>());
    let mut frr = BTreeMap::new();
    if let Some(first) = reports.first() {
        for key in first.frr.keys() {
            let vals: Vec<f64> = reports.iter().filter_map(|r| r.frr.get(key).copied()).collect();
            frr.insert(key.clone(), MeanSd::of(&vals));
        }
    }
    AggregateReport {
        method: reports.first().map(|r| r.method.clone()).unwrap_or_default(),
        n_folds: reports.len(),
        auroc: col(|r| r.auroc),
        auprc: col(|r| r.auprc),
        brier: col(|r| r.brier),
        nll: col(|r| r.nll),
        aurc: col(|r| r.aurc),
        frr,
    }
}

/// Human-readable `mean (sd)` table, one row per method.
pub fn format_table(rows: &[AggregateReport]) -> String {
    let mut out = format!(
        "{:<18} {:>17} {:>17} {:>17} {:>17} {:>17}\n",
        "method", "AUROC", "AUPRC", "Brier", "NLL", "AURC"
    );
    let cell = |m: MeanSd| format!("{:.4} ({:.4})", m.mean, m.sd);
    for r in rows {
        let _ = writeln!(
            out,
            "{:<18} {:>17} {:>17} {:>17} {:>17} {:>17}",
            r.method,
            cell(r.auroc),
            cell(r.auprc),
            cell(r.brier),
            cell(r.nll),
            cell(r.aurc)
        );
    }
    out
}
