//! Cost-sensitive detection losses with analytic gradients.
//!
//! Per mini-batch, every category present gets a hardness score
//! `l_i = (1−λ)·m_i/Σm + λ·n_i/Σn + α_i` from its box count `m_i` and mean
//! box size `n_i` (height + width). The weights are `softmax(−l)`, so rare
//! and small categories get the larger share. Those weights scale the
//! per-category smooth-L1 regression loss and the classification
//! cross-entropy.
//!
//! Batch statistics are treated as constants: gradients are taken with
//! respect to regression residuals and classification logits only.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossError {
    #[error("beta must be finite and > 0, got {0}")]
    BadBeta(f64),
    #[error("lambda must lie in [0, 1], got {0}")]
    BadLambda(f64),
    #[error("alpha[{0}] is not finite")]
    BadAlpha(usize),
    #[error("no category is present in the batch")]
    EmptyBatch,
    #[error("category {category}: {what} is invalid ({value})")]
    BadStat {
        category: usize,
        what: &'static str,
        value: f64,
    },
    #[error("category index {index} out of range for {categories} categories")]
    CategoryOutOfRange { index: usize, categories: usize },
    #[error("length mismatch: {what} has {got}, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("category {0} has residuals but no weight in this batch")]
    UnweightedCategory(usize),
    #[error("hardness for category {0} is not finite")]
    NonFiniteHardness(usize),
    #[error("sample {0}: logits are not finite")]
    NonFiniteLogits(usize),
    #[error("weights must be non-negative and sum to 1 (sum = {0})")]
    BadWeights(f64),
}

pub const DEFAULT_LAMBDA: f64 = 0.5;
pub const DEFAULT_BETA: f64 = 1.0;

/// Hyperparameters of the hardness score and the smooth-L1 transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardnessParams {
    pub lambda: f64,
    /// Per-category offsets; missing entries count as 0.
    #[serde(default)]
    pub alpha: Vec<f64>,
    pub beta: f64,
}

impl Default for HardnessParams {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            alpha: Vec::new(),
            beta: DEFAULT_BETA,
        }
    }
}

impl HardnessParams {
    pub fn new(lambda: f64, alpha: Vec<f64>, beta: f64) -> Result<Self, LossError> {
        let p = Self {
            lambda,
            alpha,
            beta,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), LossError> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(LossError::BadLambda(self.lambda));
        }
        check_beta(self.beta)?;
        if let Some(i) = self.alpha.iter().position(|a| !a.is_finite()) {
            return Err(LossError::BadAlpha(i));
        }
        Ok(())
    }

    pub fn alpha(&self, category: usize) -> f64 {
        self.alpha.get(category).copied().unwrap_or(0.0)
    }
}

/// Per-category box count and mean box size within one mini-batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchClassStats {
    counts: Vec<usize>,
    mean_sizes: Vec<f64>,
}

impl BatchClassStats {
    pub fn new(counts: Vec<usize>, mean_sizes: Vec<f64>) -> Result<Self, LossError> {
        if counts.len() != mean_sizes.len() {
            return Err(LossError::LengthMismatch {
                what: "mean_sizes",
                got: mean_sizes.len(),
                expected: counts.len(),
            });
        }
        for (i, &n) in mean_sizes.iter().enumerate() {
            if !(n.is_finite() && n >= 0.0) {
                return Err(LossError::BadStat {
                    category: i,
                    what: "mean size",
                    value: n,
                });
            }
        }
        Ok(Self { counts, mean_sizes })
    }

    /// Accumulates `(category, width, height)` triples in the given order.
    pub fn from_boxes<I>(num_categories: usize, boxes: I) -> Result<Self, LossError>
    where
        I: IntoIterator<Item = (usize, f64, f64)>,
    {
        let mut counts = vec![0usize; num_categories];
        let mut sums = vec![0.0f64; num_categories];
        for (category, w, h) in boxes {
            if category >= num_categories {
                return Err(LossError::CategoryOutOfRange {
                    index: category,
                    categories: num_categories,
                });
            }
            for (what, v) in [("width", w), ("height", h)] {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(LossError::BadStat {
                        category,
                        what,
                        value: v,
                    });
                }
            }
            counts[category] += 1;
            sums[category] += w + h;
        }
        let mean_sizes = counts
            .iter()
            .zip(&sums)
            .map(|(&c, &s)| if c == 0 { 0.0 } else { s / c as f64 })
            .collect();
        Self::new(counts, mean_sizes)
    }

    pub fn num_categories(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn mean_sizes(&self) -> &[f64] {
        &self.mean_sizes
    }

    pub fn is_present(&self, category: usize) -> bool {
        self.counts.get(category).is_some_and(|&c| c > 0)
    }
}

/// Hardness per category; `None` for categories absent from the batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Hardness(pub Vec<Option<f64>>);

/// Normalized per-category weights. Absent categories carry weight 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassWeights(Vec<f64>);

impl ClassWeights {
    /// Validates non-negativity and `Σw = 1` within 1e-12.
    pub fn new(weights: Vec<f64>) -> Result<Self, LossError> {
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || (sum - 1.0).abs() > 1e-12 {
            return Err(LossError::BadWeights(sum));
        }
        Ok(Self(weights))
    }

    /// Equal weights over the first `n` categories.
    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn check_beta(beta: f64) -> Result<(), LossError> {
    if beta.is_finite() && beta > 0.0 {
        Ok(())
    } else {
        Err(LossError::BadBeta(beta))
    }
}

/// `x²/(2β)` for `|x| < β`, else `|x| − β/2`.
pub fn smooth_l1(x: f64, beta: f64) -> Result<f64, LossError> {
    check_beta(beta)?;
    Ok(smooth_l1_unchecked(x, beta))
}

fn smooth_l1_unchecked(x: f64, beta: f64) -> f64 {
    let a = x.abs();
    if a < beta {
        x * x / (2.0 * beta)
    } else {
        a - 0.5 * beta
    }
}

/// Derivative of [`smooth_l1`]. At `|x| = β` the quadratic branch is used.
pub fn smooth_l1_grad(x: f64, beta: f64) -> Result<f64, LossError> {
    check_beta(beta)?;
    Ok(smooth_l1_grad_unchecked(x, beta))
}

fn smooth_l1_grad_unchecked(x: f64, beta: f64) -> f64 {
    if x.abs() <= beta {
        x / beta
    } else {
        x.signum()
    }
}

/// Hardness of every category present in the batch.
///
/// When every present category has mean size 0 the size share falls back to
/// the uniform `1/|present|`.
pub fn class_hardness(
    stats: &BatchClassStats,
    params: &HardnessParams,
) -> Result<Hardness, LossError> {
    params.validate()?;
    let present: Vec<usize> = (0..stats.num_categories())
        .filter(|&i| stats.is_present(i))
        .collect();
    if present.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let total_count: usize = present.iter().map(|&i| stats.counts[i]).sum();
    let total_size: f64 = present.iter().map(|&i| stats.mean_sizes[i]).sum();
    let lambda = params.lambda;
    let mut out = vec![None; stats.num_categories()];
    for &i in &present {
        let count_share = stats.counts[i] as f64 / total_count as f64;
        let size_share = if total_size > 0.0 {
            stats.mean_sizes[i] / total_size
        } else {
            1.0 / present.len() as f64
        };
        out[i] = Some((1.0 - lambda) * count_share + lambda * size_share + params.alpha(i));
    }
    Ok(Hardness(out))
}

/// `w_i = exp(−l_i) / Σ_j exp(−l_j)` over present categories.
pub fn class_weights(hardness: &Hardness) -> Result<ClassWeights, LossError> {
    let mut max_neg = f64::NEG_INFINITY;
    for (i, l) in hardness.0.iter().enumerate() {
        if let Some(l) = *l {
            if !l.is_finite() {
                return Err(LossError::NonFiniteHardness(i));
            }
            max_neg = max_neg.max(-l);
        }
    }
    if max_neg == f64::NEG_INFINITY {
        return Err(LossError::EmptyBatch);
    }
    let exps: Vec<f64> = hardness
        .0
        .iter()
        .map(|l| l.map_or(0.0, |l| (-l - max_neg).exp()))
        .collect();
    let total: f64 = exps.iter().sum();
    Ok(ClassWeights(exps.iter().map(|e| e / total).collect()))
}

/// Convenience: hardness then weights.
pub fn batch_weights(
    stats: &BatchClassStats,
    params: &HardnessParams,
) -> Result<(Hardness, ClassWeights), LossError> {
    let l = class_hardness(stats, params)?;
    let w = class_weights(&l)?;
    Ok((l, w))
}

fn check_residuals(residuals: &[Vec<f64>], weights: &ClassWeights) -> Result<(), LossError> {
    if residuals.len() > weights.len() {
        return Err(LossError::LengthMismatch {
            what: "residual categories",
            got: residuals.len(),
            expected: weights.len(),
        });
    }
    for (i, r) in residuals.iter().enumerate() {
        if !r.is_empty() && weights.0[i] == 0.0 {
            return Err(LossError::UnweightedCategory(i));
        }
    }
    Ok(())
}

/// `Σ_i w_i · mean_k smoothL1(r_ik)`.
///
/// `residuals[i]` holds every regression residual component of category `i`
/// in the batch; categories without residuals contribute nothing.
pub fn cost_sensitive_l1(
    residuals: &[Vec<f64>],
    weights: &ClassWeights,
    beta: f64,
) -> Result<f64, LossError> {
    check_beta(beta)?;
    check_residuals(residuals, weights)?;
    let mut total = 0.0;
    for (r, &w) in residuals.iter().zip(&weights.0) {
        if r.is_empty() {
            continue;
        }
        let sum: f64 = r.iter().map(|&x| smooth_l1_unchecked(x, beta)).sum();
        total += w * sum / r.len() as f64;
    }
    Ok(total)
}

/// `∂L/∂r_ik = w_i · smoothL1'(r_ik) / |r_i|`, shaped like `residuals`.
pub fn cost_sensitive_l1_gradient(
    residuals: &[Vec<f64>],
    weights: &ClassWeights,
    beta: f64,
) -> Result<Vec<Vec<f64>>, LossError> {
    check_beta(beta)?;
    check_residuals(residuals, weights)?;
    Ok(residuals
        .iter()
        .zip(&weights.0)
        .map(|(r, &w)| {
            let scale = w / r.len().max(1) as f64;
            r.iter()
                .map(|&x| scale * smooth_l1_grad_unchecked(x, beta))
                .collect()
        })
        .collect())
}

fn check_ce_inputs(
    logits: &[Vec<f64>],
    labels: &[usize],
    weights: &ClassWeights,
) -> Result<(), LossError> {
    if logits.len() != labels.len() {
        return Err(LossError::LengthMismatch {
            what: "labels",
            got: labels.len(),
            expected: logits.len(),
        });
    }
    for (s, (row, &label)) in logits.iter().zip(labels).enumerate() {
        if row.len() != weights.len() {
            return Err(LossError::LengthMismatch {
                what: "logit row",
                got: row.len(),
                expected: weights.len(),
            });
        }
        if label >= row.len() {
            return Err(LossError::CategoryOutOfRange {
                index: label,
                categories: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(LossError::NonFiniteLogits(s));
        }
    }
    Ok(())
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Mean over samples of `w_label · (−log softmax(logits)_label)`.
/// Zero samples give 0.
pub fn weighted_cross_entropy(
    logits: &[Vec<f64>],
    labels: &[usize],
    weights: &ClassWeights,
) -> Result<f64, LossError> {
    check_ce_inputs(logits, labels, weights)?;
    if logits.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = logits
        .iter()
        .zip(labels)
        .map(|(row, &y)| weights.0[y] * (log_sum_exp(row) - row[y]))
        .sum();
    Ok(total / logits.len() as f64)
}

/// `∂CE/∂z_sj = w_{y_s} · (softmax(z_s)_j − [j = y_s]) / N`.
pub fn weighted_cross_entropy_gradient(
    logits: &[Vec<f64>],
    labels: &[usize],
    weights: &ClassWeights,
) -> Result<Vec<Vec<f64>>, LossError> {
    check_ce_inputs(logits, labels, weights)?;
    let n = logits.len() as f64;
    Ok(logits
        .iter()
        .zip(labels)
        .map(|(row, &y)| {
            let lse = log_sum_exp(row);
            let scale = weights.0[y] / n;
            row.iter()
                .enumerate()
                .map(|(j, &z)| {
                    let p = (z - lse).exp();
                    scale * (p - if j == y { 1.0 } else { 0.0 })
                })
                .collect()
        })
        .collect())
}
