//! Multi-head MLP classifier over frozen embeddings: M independent
//! one-hidden-layer heads whose sigmoid outputs are averaged. Forward and
//! exact backward passes, Adam updates and early-stopped training.
//!
//! Parameters of all heads are stored side by side (head `m` owns hidden
//! columns `m*H .. (m+1)*H`) so that the first layer of every head is a
//! single matrix product. No parameter is shared between heads.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::EmbeddingDataset;
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::neighbors::CohortStats;
use crate::objective::{self, ClassWeights, LossBreakdown, ObjectiveConfig};
use crate::seed::derive_seed;

/// Per-head probability clamp.
pub const PROB_EPSILON: f64 = 1e-7;
pub const MODEL_FORMAT: &str = "cura-multihead-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadSpec {
    pub hidden_units: usize,
    pub activation: Activation,
    pub dropout_rate: f64,
    pub init_seed: u64,
}

impl Default for HeadSpec {
    fn default() -> Self {
        Self {
            hidden_units: 64,
            activation: Activation::Relu,
            dropout_rate: 0.0,
            init_seed: 0,
        }
    }
}

impl HeadSpec {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_units == 0 {
            return Err(Error::Config("hidden_units must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config("dropout_rate must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadClassifier {
    input_dim: usize,
    n_heads: usize,
    hidden: usize,
    activation: Activation,
    dropout_rate: f64,
    /// input_dim x (n_heads * hidden)
    w1: Array2<f64>,
    b1: Array1<f64>,
    w2: Array1<f64>,
    b2: Array1<f64>,
}

/// Gradients with the classifier's parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array1<f64>,
    pub b2: Array1<f64>,
}

/// Output of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// n_heads x batch, each entry clamped to `[PROB_EPSILON, 1 - PROB_EPSILON]`.
    pub per_head_probs: Array2<f64>,
    pub mean_prob: Array1<f64>,
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    z1: Array2<f64>,
    a1: Array2<f64>,
    mask_scale: Option<Array2<f64>>,
    /// batch x n_heads raw sigmoid outputs
    sig: Array2<f64>,
    pub output: ForwardOutput,
}

/// Dot product with four independent accumulators.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4 * 4;
    for (ca, cb) in a[..chunks].chunks_exact(4).zip(b[..chunks].chunks_exact(4)) {
        for l in 0..4 {
            acc[l] += ca[l] * cb[l];
        }
    }
    let tail: f64 = a[chunks..].iter().zip(&b[chunks..]).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn init_classifier(input_dim: usize, n_heads: usize, spec: &HeadSpec) -> Result<MultiHeadClassifier> {
    if input_dim == 0 {
        return Err(Error::Config("input_dim must be at least 1".into()));
    }
    if n_heads == 0 {
        return Err(Error::Config("n_heads must be at least 1".into()));
    }
    spec.validate()?;
    let h = spec.hidden_units;
    let mut w1 = Array2::zeros((input_dim, n_heads * h));
    let mut b1 = Array1::zeros(n_heads * h);
    let mut w2 = Array1::zeros(n_heads * h);
    let mut b2 = Array1::zeros(n_heads);
    let bound1 = 1.0 / (input_dim as f64).sqrt();
    let bound2 = 1.0 / (h as f64).sqrt();
    for m in 0..n_heads {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.init_seed.wrapping_add(m as u64));
        let cols = m * h..(m + 1) * h;
        for v in w1.slice_mut(s![.., cols.clone()]).iter_mut() {
            *v = rng.random_range(-bound1..bound1);
        }
        for v in b1.slice_mut(s![cols.clone()]).iter_mut() {
            *v = rng.random_range(-bound1..bound1);
        }
        for v in w2.slice_mut(s![cols]).iter_mut() {
            *v = rng.random_range(-bound2..bound2);
        }
        b2[m] = rng.random_range(-bound2..bound2);
    }
    Ok(MultiHeadClassifier {
        input_dim,
        n_heads,
        hidden: h,
        activation: spec.activation,
        dropout_rate: spec.dropout_rate,
        w1,
        b1,
        w2,
        b2,
    })
}

impl MultiHeadClassifier {
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn n_heads(&self) -> usize {
        self.n_heads
    }

    pub fn hidden_units(&self) -> usize {
        self.hidden
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn set_dropout_rate(&mut self, rate: f64) -> Result<()> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config("dropout_rate must lie in [0, 1)".into()));
        }
        self.dropout_rate = rate;
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    /// Parameter blocks in a fixed order: w1, b1, w2, b2.
    pub fn param_slices_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w1.as_slice_mut().expect("standard layout"),
            self.b1.as_slice_mut().expect("standard layout"),
            self.w2.as_slice_mut().expect("standard layout"),
            self.b2.as_slice_mut().expect("standard layout"),
        ]
    }

    pub fn all_finite(&self) -> bool {
        self.w1.iter().all(|v| v.is_finite())
            && self.b1.iter().all(|v| v.is_finite())
            && self.w2.iter().all(|v| v.is_finite())
            && self.b2.iter().all(|v| v.is_finite())
    }

    /// Zeroes every parameter (all heads then output 0.5).
    pub fn zero_params(&mut self) {
        for block in self.param_slices_mut() {
            block.fill(0.0);
        }
    }

    /// One head's parameters as (w1 row-major input x hidden, b1, w2, b2).
    pub fn head_params(&self, m: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>, f64) {
        let cols = m * self.hidden..(m + 1) * self.hidden;
        let w1 = self.w1.slice(s![.., cols.clone()]).iter().copied().collect();
        let b1 = self.b1.slice(s![cols.clone()]).to_vec();
        let w2 = self.w2.slice(s![cols]).to_vec();
        (w1, b1, w2, self.b2[m])
    }

    fn check_dim(&self, batch: &ArrayView2<'_, f64>) -> Result<()> {
        if batch.ncols() != self.input_dim {
            return Err(Error::DimMismatch {
                expected: self.input_dim,
                actual: batch.ncols(),
            });
        }
        Ok(())
    }

    /// Forward pass. Dropout (inverted, on hidden units) is applied only when
    /// `dropout_rng` is given and the rate is positive.
    pub fn forward_cached<R: Rng>(
        &self,
        batch: ArrayView2<'_, f64>,
        dropout_rng: Option<&mut R>,
    ) -> Result<ForwardCache> {
        self.check_dim(&batch)?;
        let n = batch.nrows();
        let mut z1 = batch.dot(&self.w1);
        z1 += &self.b1;
        let mut a1 = z1.mapv(|v| v.max(0.0));
        let mask_scale = match dropout_rng {
            Some(rng) if self.dropout_rate > 0.0 => {
                let keep = 1.0 - self.dropout_rate;
                let scale = 1.0 / keep;
                let mask = Array2::from_shape_simple_fn(a1.raw_dim(), || {
                    if rng.random::<f64>() < keep {
                        scale
                    } else {
                        0.0
                    }
                });
                a1 *= &mask;
                Some(mask)
            }
            _ => None,
        };

        let h = self.hidden;
        let mut sig = Array2::zeros((n, self.n_heads));
        let mut per_head = Array2::zeros((self.n_heads, n));
        let mut mean = Array1::zeros(n);
        let inv_m = 1.0 / self.n_heads as f64;
        let w2 = self.w2.as_slice().expect("standard layout");
        for (b, a_row) in a1.axis_iter(Axis(0)).enumerate() {
            let a_row = a_row.as_slice().expect("standard layout");
            let mut acc = 0.0;
            for m in 0..self.n_heads {
                let lo = m * h;
                let logit = dot(&a_row[lo..lo + h], &w2[lo..lo + h]) + self.b2[m];
                let p = sigmoid(logit);
                if !p.is_finite() {
                    return Err(Error::NonFinite(format!("head {m} activation")));
                }
                sig[[b, m]] = p;
                let pc = objective::clamp_prob(p, PROB_EPSILON);
                per_head[[m, b]] = pc;
                acc += pc;
            }
            mean[b] = acc * inv_m;
        }
        Ok(ForwardCache {
            z1,
            a1,
            mask_scale,
            sig,
            output: ForwardOutput {
                per_head_probs: per_head,
                mean_prob: mean,
            },
        })
    }

    pub fn forward<R: Rng>(
        &self,
        batch: ArrayView2<'_, f64>,
        dropout_rng: Option<&mut R>,
    ) -> Result<ForwardOutput> {
        self.forward_cached(batch, dropout_rng).map(|c| c.output)
    }

    /// Deterministic forward pass with dropout off.
    pub fn forward_eval(&self, batch: ArrayView2<'_, f64>) -> Result<ForwardOutput> {
        self.forward::<ChaCha8Rng>(batch, None)
    }

    /// Mean probability over heads, evaluated in row blocks.
    pub fn mean_prob(&self, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        self.check_dim(&x)?;
        let mut out = Vec::with_capacity(x.nrows());
        for start in (0..x.nrows()).step_by(1024) {
            let end = (start + 1024).min(x.nrows());
            let f = self.forward_eval(x.slice(s![start..end, ..]))?;
            out.extend(f.mean_prob.iter());
        }
        Ok(out)
    }

    /// Backpropagates `dL/d mean_prob` through the cached forward pass.
    pub fn backward(
        &self,
        batch: ArrayView2<'_, f64>,
        cache: &ForwardCache,
        grad_mean: &[f64],
    ) -> Gradients {
        let n = batch.nrows();
        let h = self.hidden;
        let inv_m = 1.0 / self.n_heads as f64;
        let mut dlogit = Array2::<f64>::zeros((n, self.n_heads));
        for b in 0..n {
            for m in 0..self.n_heads {
                let p = cache.sig[[b, m]];
                // Clamped outputs are flat in the logit.
                if p > PROB_EPSILON && p < 1.0 - PROB_EPSILON {
                    dlogit[[b, m]] = grad_mean[b] * inv_m * p * (1.0 - p);
                }
            }
        }
        let grad_b2 = dlogit.sum_axis(Axis(0));

        let mh = self.n_heads * h;
        let mut grad_w2 = Array1::<f64>::zeros(mh);
        let mut dz1 = Array2::<f64>::zeros((n, mh));
        let w2 = self.w2.as_slice().expect("standard layout");
        let dl = dlogit.as_slice().expect("standard layout");
        let z1 = cache.z1.as_slice().expect("standard layout");
        let a1 = cache.a1.as_slice().expect("standard layout");
        let mask = cache.mask_scale.as_ref().map(|mk| mk.as_slice().expect("standard layout"));
        {
            let gw2 = grad_w2.as_slice_mut().expect("standard layout");
            let dz_all = dz1.as_slice_mut().expect("standard layout");
            for b in 0..n {
                for m in 0..self.n_heads {
                    let g = dl[b * self.n_heads + m];
                    if g == 0.0 {
                        continue;
                    }
                    let lo = m * h;
                    let row = b * mh + lo;
                    let a = &a1[row..row + h];
                    let z = &z1[row..row + h];
                    let w = &w2[lo..lo + h];
                    let gw = &mut gw2[lo..lo + h];
                    let dz = &mut dz_all[row..row + h];
                    for j in 0..h {
                        gw[j] += g * a[j];
                        dz[j] = if z[j] > 0.0 { g * w[j] } else { 0.0 };
                    }
                    if let Some(mk) = mask {
                        for (d, k) in dz.iter_mut().zip(&mk[row..row + h]) {
                            *d *= k;
                        }
                    }
                }
            }
        }
        let grad_w1 = batch.t().dot(&dz1);
        let grad_b1 = dz1.sum_axis(Axis(0));
        Gradients {
            w1: grad_w1,
            b1: grad_b1,
            w2: grad_w2,
            b2: grad_b2,
        }
    }
}

impl Gradients {
    pub fn all_finite(&self) -> bool {
        self.w1.iter().all(|v| v.is_finite())
            && self.b1.iter().all(|v| v.is_finite())
            && self.w2.iter().all(|v| v.is_finite())
            && self.b2.iter().all(|v| v.is_finite())
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.w1
            .iter()
            .chain(self.b1.iter())
            .chain(self.w2.iter())
            .chain(self.b2.iter())
            .copied()
            .collect()
    }
}

/// Adam with the usual defaults (beta1 0.9, beta2 0.999, eps 1e-8).
#[derive(Debug, Clone)]
struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Gradients,
    v: Gradients,
}

impl Adam {
    fn new(clf: &MultiHeadClassifier, lr: f64) -> Self {
        let zeros = Gradients {
            w1: Array2::zeros(clf.w1.raw_dim()),
            b1: Array1::zeros(clf.b1.raw_dim()),
            w2: Array1::zeros(clf.w2.raw_dim()),
            b2: Array1::zeros(clf.b2.raw_dim()),
        };
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    fn step(&mut self, clf: &mut MultiHeadClassifier, g: &Gradients) {
        self.t += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let step = self.lr;
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: &f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let mh = *m / c1;
            let vh = *v / c2;
            *p -= step * mh / (vh.sqrt() + eps);
        };
        Zip::from(&mut clf.w1)
            .and(&mut self.m.w1)
            .and(&mut self.v.w1)
            .and(&g.w1)
            .for_each(update);
        Zip::from(&mut clf.b1)
            .and(&mut self.m.b1)
            .and(&mut self.v.b1)
            .and(&g.b1)
            .for_each(update);
        Zip::from(&mut clf.w2)
            .and(&mut self.m.w2)
            .and(&mut self.v.w2)
            .and(&g.w2)
            .for_each(update);
        Zip::from(&mut clf.b2)
            .and(&mut self.m.b2)
            .and(&mut self.v.b2)
            .and(&g.b2)
            .for_each(update);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeightMode {
    #[default]
    Balanced,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub class_weight_mode: ClassWeightMode,
    /// Epochs over which the calibration weights ramp linearly from 0 to
    /// their configured values; 0 applies them from the first step.
    pub warmup_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            max_epochs: 50,
            batch_size: 256,
            patience: 5,
            class_weight_mode: ClassWeightMode::Balanced,
            warmup_epochs: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Multiplier on `lambda_ind` and the cohort weights during `epoch` (1-based).
    pub fn calibration_ramp(&self, epoch: usize) -> f64 {
        if self.warmup_epochs == 0 {
            1.0
        } else {
            ((epoch - 1) as f64 / self.warmup_epochs as f64).min(1.0)
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.max_epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return Err(Error::Config(
                "max_epochs, batch_size and patience must be positive".into(),
            ));
        }
        if self.patience > self.max_epochs {
            return Err(Error::Config("patience must not exceed max_epochs".into()));
        }
        Ok(())
    }
}

/// Per-epoch training record; loss columns are sample-weighted means over
/// the epoch's mini-batches, evaluated before each update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_base: f64,
    pub l_ind: f64,
    pub l_coh: f64,
    pub l_total: f64,
    pub val_nll: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingLog {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainingLog {
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("epoch,l_base,l_ind,l_coh,l_total,val_nll\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.epoch, r.l_base, r.l_ind, r.l_coh, r.l_total, r.val_nll
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv_string().as_bytes())
    }

    pub fn epochs_run(&self) -> usize {
        self.records.len()
    }
}

/// A classifier restored to its best validation epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub classifier: MultiHeadClassifier,
    pub best_epoch: usize,
    pub best_val_nll: f64,
}

/// Mean unweighted negative log-likelihood of clamped probabilities.
pub fn mean_nll(probs: &[f64], labels: &[u8]) -> f64 {
    let sum: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| objective::ce(objective::clamp_prob(p, PROB_EPSILON), f64::from(y)))
        .sum();
    sum / probs.len().max(1) as f64
}

/// Mini-batch training of `clf` on `L_total` with early stopping on the
/// validation NLL of the mean prediction. Returns the best-epoch parameters.
pub fn train(
    clf: MultiHeadClassifier,
    train_data: &EmbeddingDataset,
    val_data: &EmbeddingDataset,
    objective: &ObjectiveConfig,
    cohorts: Option<&CohortStats>,
    cfg: &TrainConfig,
) -> Result<(TrainedModel, TrainingLog)> {
    cfg.validate()?;
    objective.validate()?;
    if train_data.dim() != clf.input_dim || val_data.dim() != clf.input_dim {
        return Err(Error::DimMismatch {
            expected: clf.input_dim,
            actual: if train_data.dim() != clf.input_dim {
                train_data.dim()
            } else {
                val_data.dim()
            },
        });
    }
    if train_data.is_empty() || val_data.is_empty() {
        return Err(Error::Dataset("training and validation sets must be non-empty".into()));
    }
    let n = train_data.len();
    let zeros = vec![0.0; n];
    let (q_all, w_all): (&[f64], &[f64]) = match cohorts {
        Some(c) if objective.lambda_coh > 0.0 => {
            if c.len() != n {
                return Err(Error::Config(format!(
                    "cohort statistics cover {} samples, training set has {n}",
                    c.len()
                )));
            }
            (&c.q, &c.weight)
        }
        None if objective.lambda_coh > 0.0 => {
            return Err(Error::Config(
                "lambda_coh > 0 requires precomputed cohort statistics".into(),
            ))
        }
        _ => (&zeros, &zeros),
    };
    let mut objective = objective.clone();
    objective.class_weights = match cfg.class_weight_mode {
        ClassWeightMode::Balanced => ClassWeights::balanced(train_data.labels())?,
        ClassWeightMode::None => ClassWeights::UNIT,
    };

    let mut clf = clf;
    let mut adam = Adam::new(&clf, cfg.learning_rate);
    let mut order_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 2));
    let x_all = train_data.embeddings();
    let y_all = train_data.labels();

    let mut log = TrainingLog::default();
    let mut best: Option<(MultiHeadClassifier, usize, f64)> = None;
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..n).collect();
    let mut y_b = Vec::with_capacity(cfg.batch_size);
    let mut q_b = Vec::with_capacity(cfg.batch_size);
    let mut w_b = Vec::with_capacity(cfg.batch_size);

    let full_lambda_ind = objective.lambda_ind;
    let calibrating = full_lambda_ind > 0.0 || w_all.iter().any(|&w| w > 0.0);
    for epoch in 1..=cfg.max_epochs {
        let ramp = cfg.calibration_ramp(epoch);
        objective.lambda_ind = full_lambda_ind * ramp;
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut order_rng);
        let mut sums = [0.0f64; 4];
        for (batch_no, idx) in order.chunks(cfg.batch_size).enumerate() {
            let diverged = |what: String| Error::Divergence {
                epoch,
                batch: batch_no,
                what,
            };
            let x_b = x_all.select(Axis(0), idx);
            y_b.clear();
            q_b.clear();
            w_b.clear();
            y_b.extend(idx.iter().map(|&i| y_all[i]));
            q_b.extend(idx.iter().map(|&i| q_all[i]));
            w_b.extend(idx.iter().map(|&i| w_all[i] * ramp));

            let cache = clf
                .forward_cached(x_b.view(), Some(&mut dropout_rng))
                .map_err(|e| diverged(e.to_string()))?;
            let p = cache.output.mean_prob.as_slice().expect("standard layout");
            let loss: LossBreakdown = objective::loss_total(p, &y_b, &q_b, &w_b, &objective)
                .map_err(|e| diverged(e.to_string()))?;
            let bn = idx.len() as f64;
            sums[0] += loss.l_base * bn;
            sums[1] += loss.l_ind * bn;
            sums[2] += loss.l_coh * bn;
            sums[3] += loss.l_total * bn;

            let grads = clf.backward(x_b.view(), &cache, &loss.grad_wrt_mean_prob);
            if !grads.all_finite() {
                return Err(diverged("non-finite gradient".into()));
            }
            adam.step(&mut clf, &grads);
            if !clf.all_finite() {
                return Err(diverged("non-finite parameter after update".into()));
            }
        }

        let val_probs = clf.mean_prob(val_data.embeddings().view())?;
        let val_nll = mean_nll(&val_probs, val_data.labels());
        if !val_nll.is_finite() {
            return Err(Error::Divergence {
                epoch,
                batch: 0,
                what: "non-finite validation NLL".into(),
            });
        }
        let nf = n as f64;
        log.records.push(EpochRecord {
            epoch,
            l_base: sums[0] / nf,
            l_ind: sums[1] / nf,
            l_coh: sums[2] / nf,
            l_total: sums[3] / nf,
            val_nll,
        });
        log::debug!("epoch {epoch}: l_total {:.6} val_nll {val_nll:.6}", sums[3] / nf);

        // While the calibration terms are still ramping up, the latest epoch
        // is kept and patience does not run.
        let warming = calibrating && ramp < 1.0;
        if warming || best.as_ref().is_none_or(|b| val_nll < b.2) {
            best = Some((clf.clone(), epoch, val_nll));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    let (classifier, best_epoch, best_val_nll) = best.expect("at least one epoch");
    log.best_epoch = best_epoch;
    Ok((
        TrainedModel {
            classifier,
            best_epoch,
            best_val_nll,
        },
        log,
    ))
}

/// Mean probability and normalized-entropy uncertainty, dropout off.
pub fn predict(model: &TrainedModel, batch: ArrayView2<'_, f64>) -> Result<(Vec<f64>, Vec<f64>)> {
    let p = model.classifier.mean_prob(batch)?;
    let u = p.iter().map(|&v| objective::normalized_entropy(v)).collect();
    Ok((p, u))
}

/// Central-difference check of every parameter gradient of `L_total`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub n_params: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst_param: usize,
}

/// Denominator floor of the relative error, so parameters whose true
/// gradient is ~0 are judged on absolute error.
pub const GRADCHECK_REL_FLOOR: f64 = 1e-6;

pub fn gradient_check(
    clf: &MultiHeadClassifier,
    x: ArrayView2<'_, f64>,
    y: &[u8],
    q: &[f64],
    w: &[f64],
    objective: &ObjectiveConfig,
    step: f64,
) -> Result<GradCheckReport> {
    let loss_at = |c: &MultiHeadClassifier| -> Result<f64> {
        let f = c.forward_eval(x)?;
        Ok(objective::loss_total(f.mean_prob.as_slice().expect("standard layout"), y, q, w, objective)?.l_total)
    };
    let cache = clf.forward_cached::<ChaCha8Rng>(x, None)?;
    let loss = objective::loss_total(
        cache.output.mean_prob.as_slice().expect("standard layout"),
        y,
        q,
        w,
        objective,
    )?;
    let analytic = clf.backward(x, &cache, &loss.grad_wrt_mean_prob).flatten();

    let mut probe = clf.clone();
    let mut report = GradCheckReport {
        n_params: analytic.len(),
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst_param: 0,
    };
    let mut flat = 0;
    for block in 0..4 {
        let len = probe.param_slices_mut()[block].len();
        for i in 0..len {
            let orig = probe.param_slices_mut()[block][i];
            probe.param_slices_mut()[block][i] = orig + step;
            let up = loss_at(&probe)?;
            probe.param_slices_mut()[block][i] = orig - step;
            let down = loss_at(&probe)?;
            probe.param_slices_mut()[block][i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic[flat];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(GRADCHECK_REL_FLOOR);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = flat;
            }
            report.max_abs_error = report.max_abs_error.max(abs);
            flat += 1;
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct HeadFile {
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: f64,
}

/// Versioned JSON form of a trained classifier.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub input_dim: usize,
    pub n_heads: usize,
    pub hidden_units: usize,
    pub activation: Activation,
    pub dropout_rate: f64,
    pub best_epoch: usize,
    pub best_val_nll: f64,
    heads: Vec<HeadFile>,
}

impl TrainedModel {
    pub fn to_file(&self) -> ModelFile {
        let c = &self.classifier;
        ModelFile {
            format: MODEL_FORMAT.to_string(),
            input_dim: c.input_dim,
            n_heads: c.n_heads,
            hidden_units: c.hidden,
            activation: c.activation,
            dropout_rate: c.dropout_rate,
            best_epoch: self.best_epoch,
            best_val_nll: self.best_val_nll,
            heads: (0..c.n_heads)
                .map(|m| {
                    let (w1, b1, w2, b2) = c.head_params(m);
                    HeadFile { w1, b1, w2, b2 }
                })
                .collect(),
        }
    }

    pub fn from_file(f: &ModelFile) -> Result<Self> {
        if f.format != MODEL_FORMAT {
            return Err(Error::Format(format!(
                "unsupported model format `{}` (expected `{MODEL_FORMAT}`)",
                f.format
            )));
        }
        let (d, mh, h) = (f.input_dim, f.n_heads * f.hidden_units, f.hidden_units);
        if f.heads.len() != f.n_heads || d == 0 || h == 0 {
            return Err(Error::Format("head count or shape mismatch".into()));
        }
        let mut w1 = Array2::zeros((d, mh));
        let mut b1 = Array1::zeros(mh);
        let mut w2 = Array1::zeros(mh);
        let mut b2 = Array1::zeros(f.n_heads);
        for (m, head) in f.heads.iter().enumerate() {
            if head.w1.len() != d * h || head.b1.len() != h || head.w2.len() != h {
                return Err(Error::Format(format!("head {m} has wrong parameter counts")));
            }
            let block = ArrayView2::from_shape((d, h), &head.w1)
                .map_err(|e| Error::Format(e.to_string()))?;
            w1.slice_mut(s![.., m * h..(m + 1) * h]).assign(&block);
            b1.slice_mut(s![m * h..(m + 1) * h])
                .assign(&ArrayView1::from(&head.b1));
            w2.slice_mut(s![m * h..(m + 1) * h])
                .assign(&ArrayView1::from(&head.w2));
            b2[m] = head.b2;
        }
        let classifier = MultiHeadClassifier {
            input_dim: d,
            n_heads: f.n_heads,
            hidden: h,
            activation: f.activation,
            dropout_rate: f.dropout_rate,
            w1,
            b1,
            w2,
            b2,
        };
        if !classifier.all_finite() {
            return Err(Error::Format("non-finite parameter".into()));
        }
        Ok(Self {
            classifier,
            best_epoch: f.best_epoch,
            best_val_nll: f.best_val_nll,
        })
    }
}
