//! Per-sample classification losses with exact gradients w.r.t. the logits.
//!
//! Every loss here is a function of one logit vector `z` and a target class
//! `t`. Besides the loss value each function returns `∂loss/∂z`, so the
//! network only has to backpropagate a plain vector.
//!
//! The losses of the form `-w(p_t) · log p_t` (cross-entropy, focal, revised
//! focal) share one derivation: with `s = p_t · ∂loss/∂p_t`, the softmax
//! Jacobian `∂p_t/∂z_k = p_t (δ_tk − p_k)` gives
//!
//! ```text
//! ∂loss/∂z_t = s · (1 − p_t)      ∂loss/∂z_k = −s · p_k   (k ≠ t)
//! ```
//!
//! Distillation-style losses compare tempered softmax distributions and are
//! differentiated directly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower clamp applied to probabilities before taking logarithms.
pub const MIN_PROB: f64 = 1e-12;

/// All loss hyperparameters of the AFS objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Scale α shared by the focal and revised focal losses.
    pub alpha: f64,
    /// Focusing exponent γ of the focal loss.
    pub gamma: f64,
    /// Center μ of the revised focal weight.
    pub mu: f64,
    /// Width σ of the revised focal weight.
    pub sigma: f64,
    /// Strength β of the distillation term.
    pub beta: f64,
    /// Distillation temperature T.
    pub temperature: f64,
    /// Smoothing ε of the virtual teacher.
    pub epsilon: f64,
    /// Number of classes C.
    pub num_classes: usize,
}

impl LossConfig {
    /// Defaults used in every experiment of the method: α=0.25, γ=2, μ=0.3,
    /// σ=0.5, β=0.1, T=20, ε=0.01.
    pub fn new(num_classes: usize) -> Self {
        Self {
            alpha: 0.25,
            gamma: 2.0,
            mu: 0.3,
            sigma: 0.5,
            beta: 0.1,
            temperature: 20.0,
            epsilon: 0.01,
            num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("alpha", self.alpha),
            ("gamma", self.gamma),
            ("mu", self.mu),
            ("sigma", self.sigma),
            ("beta", self.beta),
            ("temperature", self.temperature),
            ("epsilon", self.epsilon),
        ];
        if let Some((name, _)) = finite.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::config(format!("{name} must be finite")));
        }
        if self.alpha < 0.0 {
            return Err(Error::config("alpha must be non-negative"));
        }
        if self.gamma < 0.0 {
            return Err(Error::config("gamma must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.mu) {
            return Err(Error::config("mu must lie in [0, 1]"));
        }
        if self.sigma <= 0.0 {
            return Err(Error::config("sigma must be positive"));
        }
        if self.beta < 0.0 {
            return Err(Error::config("beta must be non-negative"));
        }
        if self.temperature <= 0.0 {
            return Err(Error::config("temperature must be positive"));
        }
        check_teacher_params(self.num_classes, self.epsilon)
    }
}

/// Difficulty of a sample judged by the probability of its true class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DifficultyInterval {
    /// Hard sample interval, `p_t ∈ [0, 0.3)`.
    Hard,
    /// Ambiguous sample interval, `p_t ∈ [0.3, 0.6]`.
    Ambiguous,
    /// Easy sample interval, `p_t ∈ (0.6, 1]`.
    Easy,
}

impl DifficultyInterval {
    pub fn tag(self) -> &'static str {
        match self {
            DifficultyInterval::Hard => "HSI",
            DifficultyInterval::Ambiguous => "ASI",
            DifficultyInterval::Easy => "ESI",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    /// `∂loss/∂z`, one entry per class.
    pub grad_logits: Vec<f64>,
    /// Softmax probability of the target class (untempered).
    pub p_target: f64,
}

/// Softmax with max-subtraction.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    check_logits(logits)?;
    Ok(softmax_unchecked(logits, 1.0))
}

fn softmax_unchecked(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits
        .iter()
        .map(|&z| ((z - max) / temperature).exp())
        .collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    out
}

fn log_softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = logits.iter().map(|&z| (z - max) / temperature).collect();
    let log_sum = shifted.iter().map(|s| s.exp()).sum::<f64>().ln();
    shifted.into_iter().map(|s| s - log_sum).collect()
}

pub fn classify_difficulty(p_target: f64) -> Result<DifficultyInterval> {
    if !(0.0..=1.0).contains(&p_target) {
        return Err(Error::input(format!(
            "target probability {p_target} outside [0, 1]"
        )));
    }
    Ok(if p_target < 0.3 {
        DifficultyInterval::Hard
    } else if p_target <= 0.6 {
        DifficultyInterval::Ambiguous
    } else {
        DifficultyInterval::Easy
    })
}

/// Gaussian re-weighting `α · exp(−(p_t − μ)² / σ)` of the revised focal loss.
pub fn rfl_weight(p_target: f64, alpha: f64, mu: f64, sigma: f64) -> Result<f64> {
    if sigma <= 0.0 || !sigma.is_finite() {
        return Err(Error::config("sigma must be positive"));
    }
    if !(0.0..=1.0).contains(&p_target) {
        return Err(Error::input(format!(
            "target probability {p_target} outside [0, 1]"
        )));
    }
    Ok(gaussian_weight(p_target, alpha, mu, sigma))
}

fn gaussian_weight(p: f64, alpha: f64, mu: f64, sigma: f64) -> f64 {
    alpha * (-(p - mu).powi(2) / sigma).exp()
}

/// Probabilities, target probability and `Q = 1 − p_t` (summed from the
/// non-target entries so it stays accurate when `p_t` is close to 1).
struct TargetProbs {
    probs: Vec<f64>,
    p: f64,
    q: f64,
}

fn target_probs(logits: &[f64], target: usize) -> Result<TargetProbs> {
    check_logits(logits)?;
    check_target(logits.len(), target)?;
    let probs = softmax_unchecked(logits, 1.0);
    let q = probs
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != target)
        .map(|(_, p)| p)
        .sum();
    let p = probs[target];
    Ok(TargetProbs { probs, p, q })
}

/// Turns `s = p_t · ∂loss/∂p_t` into the full logit gradient.
fn chain_through_target(tp: &TargetProbs, target: usize, s: f64) -> Vec<f64> {
    tp.probs
        .iter()
        .enumerate()
        .map(|(k, &pk)| if k == target { s * tp.q } else { -s * pk })
        .collect()
}

pub fn ce_loss(logits: &[f64], target: usize) -> Result<LossOutput> {
    let tp = target_probs(logits, target)?;
    let value = -tp.p.max(MIN_PROB).ln();
    let grad_logits = chain_through_target(&tp, target, -1.0);
    Ok(LossOutput {
        value,
        grad_logits,
        p_target: tp.p,
    })
}

/// `−α (1 − p_t)^γ log p_t`.
pub fn focal_loss(logits: &[f64], target: usize, alpha: f64, gamma: f64) -> Result<LossOutput> {
    if gamma < 0.0 || !gamma.is_finite() {
        return Err(Error::config("gamma must be non-negative"));
    }
    let tp = target_probs(logits, target)?;
    let log_p = tp.p.max(MIN_PROB).ln();
    let value = -alpha * tp.q.powf(gamma) * log_p;
    // s = α [γ p (1−p)^(γ−1) log p − (1−p)^γ]
    let focus = if gamma == 0.0 || tp.q == 0.0 {
        0.0
    } else {
        gamma * tp.p * tp.q.powf(gamma - 1.0) * log_p
    };
    let s = alpha * (focus - tp.q.powf(gamma));
    Ok(LossOutput {
        value,
        grad_logits: chain_through_target(&tp, target, s),
        p_target: tp.p,
    })
}

/// `−α exp(−(p_t − μ)² / σ) log p_t`.
pub fn rfl_loss(
    logits: &[f64],
    target: usize,
    alpha: f64,
    mu: f64,
    sigma: f64,
) -> Result<LossOutput> {
    if sigma <= 0.0 || !sigma.is_finite() {
        return Err(Error::config("sigma must be positive"));
    }
    let tp = target_probs(logits, target)?;
    let log_p = tp.p.max(MIN_PROB).ln();
    let weight = gaussian_weight(tp.p, alpha, mu, sigma);
    let value = -weight * log_p;
    let s = weight * (2.0 * tp.p * (tp.p - mu) * log_p / sigma - 1.0);
    Ok(LossOutput {
        value,
        grad_logits: chain_through_target(&tp, target, s),
        p_target: tp.p,
    })
}

fn check_teacher_params(num_classes: usize, epsilon: f64) -> Result<()> {
    if num_classes < 2 {
        return Err(Error::config("the virtual teacher needs at least 2 classes"));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::config("epsilon must lie in (0, 1)"));
    }
    Ok(())
}

/// Virtual teacher logits: `1 − ε` on the target, `ε / (C − 1)` elsewhere.
pub fn virtual_teacher(target: usize, num_classes: usize, epsilon: f64) -> Result<Vec<f64>> {
    check_teacher_params(num_classes, epsilon)?;
    check_target(num_classes, target)?;
    let off = epsilon / (num_classes - 1) as f64;
    Ok((0..num_classes)
        .map(|i| if i == target { 1.0 - epsilon } else { off })
        .collect())
}

/// Cross-entropy of the tempered student distribution `softmax(z/T)` against
/// a fixed target distribution, without any `T²` factor. The gradient is
/// `(softmax(z/T) − target) / T`.
pub fn soft_target_ce(logits: &[f64], target_dist: &[f64], temperature: f64) -> Result<LossOutput> {
    check_logits(logits)?;
    if target_dist.len() != logits.len() {
        return Err(Error::input(format!(
            "target distribution has {} entries, logits have {}",
            target_dist.len(),
            logits.len()
        )));
    }
    if temperature <= 0.0 || !temperature.is_finite() {
        return Err(Error::config("temperature must be positive"));
    }
    let log_p = log_softmax(logits, temperature);
    let value = -target_dist
        .iter()
        .zip(&log_p)
        .map(|(q, lp)| q * lp)
        .sum::<f64>();
    let grad_logits = log_p
        .iter()
        .zip(target_dist)
        .map(|(lp, q)| (lp.exp() - q) / temperature)
        .collect();
    Ok(LossOutput {
        value,
        grad_logits,
        p_target: f64::NAN,
    })
}

/// Teacher distribution `q^T = softmax(v / T)` for the virtual logits `v`.
pub fn teacher_distribution(
    target: usize,
    num_classes: usize,
    epsilon: f64,
    temperature: f64,
) -> Result<Vec<f64>> {
    if temperature <= 0.0 || !temperature.is_finite() {
        return Err(Error::config("temperature must be positive"));
    }
    let v = virtual_teacher(target, num_classes, epsilon)?;
    Ok(softmax_unchecked(&v, temperature))
}

/// Virtual knowledge distillation `−T² Σ q_i^T log p_i^T`.
///
/// The returned gradient is `T (p^T − q^T)`; the β factor of the combined
/// objective is applied by [`afs_loss`].
pub fn vkd_loss(
    logits: &[f64],
    target: usize,
    temperature: f64,
    epsilon: f64,
    num_classes: usize,
) -> Result<LossOutput> {
    if logits.len() != num_classes {
        return Err(Error::input(format!(
            "expected {num_classes} logits, got {}",
            logits.len()
        )));
    }
    let teacher = teacher_distribution(target, num_classes, epsilon, temperature)?;
    let mut out = soft_target_ce(logits, &teacher, temperature)?;
    let t2 = temperature * temperature;
    out.value *= t2;
    out.grad_logits.iter_mut().for_each(|g| *g *= t2);
    out.p_target = softmax_unchecked(logits, 1.0)[target];
    Ok(out)
}

/// Label smoothing: cross-entropy of `softmax(z)` against the smoothed label
/// vector of the virtual teacher itself (`1 − ε` on the target).
pub fn lsr_loss(logits: &[f64], target: usize, epsilon: f64) -> Result<LossOutput> {
    check_logits(logits)?;
    let label = virtual_teacher(target, logits.len(), epsilon)?;
    let mut out = soft_target_ce(logits, &label, 1.0)?;
    out.p_target = softmax_unchecked(logits, 1.0)[target];
    Ok(out)
}

/// Revised focal loss plus `β ·` virtual distillation.
pub fn afs_loss(logits: &[f64], target: usize, config: &LossConfig) -> Result<LossOutput> {
    Objective::afs(*config).evaluate(logits, target)
}

/// The sample-weighting half of an objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassLoss {
    #[serde(rename = "ce")]
    CrossEntropy,
    #[serde(rename = "fl")]
    Focal,
    #[serde(rename = "rfl")]
    Revised,
}

impl ClassLoss {
    pub fn label(self) -> &'static str {
        match self {
            ClassLoss::CrossEntropy => "ce",
            ClassLoss::Focal => "fl",
            ClassLoss::Revised => "rfl",
        }
    }
}

/// The regularizing half of an objective, added with weight β.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regularizer {
    None,
    #[serde(rename = "lsr")]
    LabelSmoothing,
    #[serde(rename = "vkd")]
    VirtualKd,
}

impl Regularizer {
    pub fn label(self) -> &'static str {
        match self {
            Regularizer::None => "none",
            Regularizer::LabelSmoothing => "lsr",
            Regularizer::VirtualKd => "vkd",
        }
    }
}

/// A per-sample training objective `class_loss + β · regularizer`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub class_loss: ClassLoss,
    pub regularizer: Regularizer,
    pub config: LossConfig,
}

impl Objective {
    pub fn new(class_loss: ClassLoss, regularizer: Regularizer, config: LossConfig) -> Self {
        Self {
            class_loss,
            regularizer,
            config,
        }
    }

    pub fn afs(config: LossConfig) -> Self {
        Self::new(ClassLoss::Revised, Regularizer::VirtualKd, config)
    }

    pub fn cross_entropy(config: LossConfig) -> Self {
        Self::new(ClassLoss::CrossEntropy, Regularizer::None, config)
    }

    /// Same class loss, regularizer removed.
    pub fn without_regularizer(self) -> Self {
        Self {
            regularizer: Regularizer::None,
            ..self
        }
    }

    pub fn evaluate(&self, logits: &[f64], target: usize) -> Result<LossOutput> {
        self.evaluate_with_mu(logits, target, self.config.mu)
    }

    /// As [`Objective::evaluate`] with the revised-focal center overridden,
    /// for per-class μ schedules.
    pub fn evaluate_with_mu(&self, logits: &[f64], target: usize, mu: f64) -> Result<LossOutput> {
        let c = &self.config;
        if logits.len() != c.num_classes {
            return Err(Error::input(format!(
                "expected {} logits, got {}",
                c.num_classes,
                logits.len()
            )));
        }
        let mut out = match self.class_loss {
            ClassLoss::CrossEntropy => ce_loss(logits, target)?,
            ClassLoss::Focal => focal_loss(logits, target, c.alpha, c.gamma)?,
            ClassLoss::Revised => rfl_loss(logits, target, c.alpha, mu, c.sigma)?,
        };
        let extra = match self.regularizer {
            Regularizer::None => None,
            Regularizer::LabelSmoothing => Some(lsr_loss(logits, target, c.epsilon)?),
            Regularizer::VirtualKd => Some(vkd_loss(
                logits,
                target,
                c.temperature,
                c.epsilon,
                c.num_classes,
            )?),
        };
        if let Some(reg) = extra {
            out.value += c.beta * reg.value;
            for (g, r) in out.grad_logits.iter_mut().zip(&reg.grad_logits) {
                *g += c.beta * r;
            }
        }
        Ok(out)
    }
}

fn check_logits(logits: &[f64]) -> Result<()> {
    if logits.is_empty() {
        return Err(Error::input("empty logit vector"));
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::input("non-finite logit"));
    }
    Ok(())
}

fn check_target(num_classes: usize, target: usize) -> Result<()> {
    if target >= num_classes {
        return Err(Error::input(format!(
            "target class {target} out of range for {num_classes} classes"
        )));
    }
    Ok(())
}
