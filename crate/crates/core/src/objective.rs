//! The bi-level training objective: class-weighted base cross-entropy, the
//! individual entropy/correctness alignment term, and the cohort-aware term,
//! with exact derivatives with respect to the ensemble-mean probability.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 1e-7;
/// Clamp applied to the normalized entropy before the logs of the
/// individual term.
pub const UNCERTAINTY_EPSILON: f64 = 1e-7;

/// Per-class multipliers of the base cross-entropy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub pos: f64,
    pub neg: f64,
}

impl ClassWeights {
    pub const UNIT: ClassWeights = ClassWeights { pos: 1.0, neg: 1.0 };

    /// Inverse-prevalence weights `n / (2 n_c)`.
    pub fn balanced(labels: &[u8]) -> Result<Self> {
        let n = labels.len() as f64;
        let n_pos = labels.iter().filter(|&&y| y == 1).count() as f64;
        let n_neg = n - n_pos;
        if n_pos == 0.0 || n_neg == 0.0 {
            return Err(Error::Dataset(
                "balanced class weights need both classes in the training set".into(),
            ));
        }
        Ok(Self {
            pos: n / (2.0 * n_pos),
            neg: n / (2.0 * n_neg),
        })
    }
}

impl Default for ClassWeights {
    fn default() -> Self {
        Self::UNIT
    }
}

/// Which cross-entropy the cohort term uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CohortCe {
    #[default]
    Unweighted,
    ClassWeighted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveConfig {
    pub lambda_ind: f64,
    pub lambda_coh: f64,
    pub class_weights: ClassWeights,
    pub epsilon: f64,
    pub cohort_ce: CohortCe,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            lambda_ind: 0.5,
            lambda_coh: 0.01,
            class_weights: ClassWeights::UNIT,
            epsilon: DEFAULT_EPSILON,
            cohort_ce: CohortCe::Unweighted,
        }
    }
}

impl ObjectiveConfig {
    /// Class-weighted cross-entropy only.
    pub fn base_only() -> Self {
        Self {
            lambda_ind: 0.0,
            lambda_coh: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_ind >= 0.0 && self.lambda_ind.is_finite()) {
            return Err(Error::Config("lambda_ind must be a finite value >= 0".into()));
        }
        if !(self.lambda_coh >= 0.0 && self.lambda_coh.is_finite()) {
            return Err(Error::Config("lambda_coh must be a finite value >= 0".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return Err(Error::Config("epsilon must lie in (0, 0.5)".into()));
        }
        if !(self.class_weights.pos > 0.0 && self.class_weights.neg > 0.0) {
            return Err(Error::Config("class weights must be positive".into()));
        }
        Ok(())
    }
}

/// Batch-mean loss terms and the derivative of `l_total` with respect to
/// each sample's mean probability.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub l_base: f64,
    pub l_ind: f64,
    pub l_coh: f64,
    pub l_total: f64,
    pub grad_wrt_mean_prob: Vec<f64>,
}

/// Cohort-aware soft-label view of `CE(p, y) + w CE(p, q)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftLabelForm {
    pub gamma: f64,
    pub target: f64,
    pub scale: f64,
}

pub fn clamp_prob(p: f64, eps: f64) -> f64 {
    p.clamp(eps, 1.0 - eps)
}

/// `-(w_pos y ln p + w_neg (1 - y) ln(1 - p))` for a hard or soft target `y`.
pub fn weighted_ce(p: f64, y: f64, weights: ClassWeights) -> f64 {
    -(weights.pos * y * p.ln() + weights.neg * (1.0 - y) * (1.0 - p).ln())
}

/// Unweighted binary cross-entropy.
pub fn ce(p: f64, y: f64) -> f64 {
    weighted_ce(p, y, ClassWeights::UNIT)
}

fn weighted_ce_grad(p: f64, y: f64, weights: ClassWeights) -> f64 {
    -weights.pos * y / p + weights.neg * (1.0 - y) / (1.0 - p)
}

/// Probability mass assigned to the true label.
pub fn correctness(p_mean: f64, y: u8) -> f64 {
    if y == 1 {
        p_mean
    } else {
        1.0 - p_mean
    }
}

/// Binary entropy of `p` (natural log) divided by its maximum `ln 2`.
pub fn normalized_entropy(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        return 0.0;
    }
    if p == 0.5 {
        return 1.0;
    }
    let h = -(p * p.ln() + (1.0 - p) * (1.0 - p).ln());
    (h / LN_2).clamp(0.0, 1.0)
}

/// `1 - normalized_entropy(p)`, computed without cancellation near 1/2 as
/// the divergence from the uniform Bernoulli in bits.
pub fn entropy_gap(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        return 1.0;
    }
    let d = 2.0 * (p - 0.5);
    let kl = p * d.ln_1p() + (1.0 - p) * (-d).ln_1p();
    (kl / LN_2).clamp(0.0, 1.0)
}

/// Per-sample individual term (before `lambda_ind`) and its derivative in `p`.
fn individual_term(p: f64, y: u8) -> (f64, f64) {
    let a = correctness(p, y);
    let gap_raw = entropy_gap(p);
    let gap = gap_raw.clamp(UNCERTAINTY_EPSILON, 1.0 - UNCERTAINTY_EPSILON);
    let u = 1.0 - gap;
    let (ln_u, ln_gap) = ((-gap).ln_1p(), gap.ln());
    let value = -(1.0 - a) * ln_u - a * ln_gap;

    let da_dp = if y == 1 { 1.0 } else { -1.0 };
    let du_dp = if gap_raw == gap {
        let d = 2.0 * (p - 0.5);
        ((-d).ln_1p() - d.ln_1p()) / LN_2
    } else {
        0.0
    };
    let dl_da = ln_u - ln_gap;
    let dl_du = -(1.0 - a) / u + a / gap;
    (value, dl_da * da_dp + dl_du * du_dp)
}

/// `lambda_ind * mean(-(1 - a) ln u - a ln(1 - u))`.
pub fn loss_ind(p_mean: &[f64], y: &[u8], lambda_ind: f64) -> f64 {
    if lambda_ind == 0.0 || p_mean.is_empty() {
        return 0.0;
    }
    let sum: f64 = p_mean
        .iter()
        .zip(y)
        .map(|(&p, &y)| individual_term(p, y).0)
        .sum();
    lambda_ind * sum / p_mean.len() as f64
}

/// `mean(w * CE(p, q))` with unweighted cross-entropy.
pub fn loss_coh(p_mean: &[f64], q: &[f64], w: &[f64]) -> f64 {
    if p_mean.is_empty() {
        return 0.0;
    }
    let sum: f64 = p_mean
        .iter()
        .zip(q.iter().zip(w))
        .map(|(&p, (&q, &w))| if w == 0.0 { 0.0 } else { w * ce(p, q) })
        .sum();
    sum / p_mean.len() as f64
}

/// All three terms, their sum and the exact gradient of the batch mean with
/// respect to every `p_mean[i]`. The individual term is differentiated
/// through both the correctness probability and the normalized entropy.
pub fn loss_total(
    p_mean: &[f64],
    y: &[u8],
    q: &[f64],
    w: &[f64],
    cfg: &ObjectiveConfig,
) -> Result<LossBreakdown> {
    let n = p_mean.len();
    if y.len() != n || q.len() != n || w.len() != n {
        return Err(Error::Config(format!(
            "loss inputs disagree in length: p {n}, y {}, q {}, w {}",
            y.len(),
            q.len(),
            w.len()
        )));
    }
    if n == 0 {
        return Err(Error::Config("empty batch".into()));
    }
    let inv_n = 1.0 / n as f64;
    let coh_weights = match cfg.cohort_ce {
        CohortCe::Unweighted => ClassWeights::UNIT,
        CohortCe::ClassWeighted => cfg.class_weights,
    };

    let mut base_sum = 0.0;
    let mut ind_sum = 0.0;
    let mut coh_sum = 0.0;
    let mut grad = Vec::with_capacity(n);
    for i in 0..n {
        let p = clamp_prob(p_mean[i], cfg.epsilon);
        let yi = f64::from(y[i]);
        base_sum += weighted_ce(p, yi, cfg.class_weights);
        let mut g = weighted_ce_grad(p, yi, cfg.class_weights);
        if cfg.lambda_ind != 0.0 {
            let (v, dv) = individual_term(p, y[i]);
            ind_sum += v;
            g += cfg.lambda_ind * dv;
        }
        if w[i] != 0.0 {
            coh_sum += w[i] * weighted_ce(p, q[i], coh_weights);
            g += w[i] * weighted_ce_grad(p, q[i], coh_weights);
        }
        // The clamp is flat outside [eps, 1 - eps].
        let inside = p == p_mean[i];
        grad.push(if inside { g * inv_n } else { 0.0 });
    }
    let l_base = base_sum * inv_n;
    let l_ind = cfg.lambda_ind * ind_sum * inv_n;
    let l_coh = coh_sum * inv_n;
    let l_total = l_base + l_ind + l_coh;
    if !l_total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("loss".into()));
    }
    Ok(LossBreakdown {
        l_base,
        l_ind,
        l_coh,
        l_total,
        grad_wrt_mean_prob: grad,
    })
}

/// `gamma = w / (1 + w)`, `t = (y + w q) / (1 + w)`, `scale = 1 + w`.
pub fn soft_label_form(y: u8, q: f64, w: f64) -> SoftLabelForm {
    let gamma = w / (1.0 + w);
    let target = if w.is_infinite() {
        q
    } else {
        (f64::from(y) + w * q) / (1.0 + w)
    };
    SoftLabelForm {
        gamma,
        target,
        scale: 1.0 + w,
    }
}

/// `|CE(p, y) + w CE(p, q) - (1 + w) CE(p, t)|` with unweighted CE.
pub fn verify_soft_label_identity(p: f64, y: u8, q: f64, w: f64) -> f64 {
    let form = soft_label_form(y, q, w);
    let lhs = ce(p, f64::from(y)) + w * ce(p, q);
    let rhs = form.scale * ce(p, form.target);
    (lhs - rhs).abs()
}
