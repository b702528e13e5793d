//! Training-objective terms and their analytic gradients with respect to the
//! network's evidence outputs.
//!
//! Gradient conventions: the scaling factor `r` is a constant during
//! backpropagation (it comes from a non-smooth top-two selection), and the
//! belief argmax inside the conflict term is frozen per forward pass (the
//! usual max subgradient). Both choices leave the gradients exact everywhere
//! off the measure-zero tie set.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evidential::{
    self, breakdown, scaling_factor, to_opinion_scaled, DirichletOpinion, Evidence, ScalingFactor,
    UncertaintyBreakdown,
};
use crate::special::{digamma, trigamma};

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("digamma argument must be positive, got {0}")]
    NonPositiveDigamma(f64),
    #[error("target is not one-hot: {0}")]
    BadTarget(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("probability vector sums to {0}, expected 1 within 1e-6")]
    NotNormalized(f64),
    #[error("cycle {cycle} exceeds num_cycle {num_cycle}")]
    BadCycle { cycle: u32, num_cycle: u32 },
    #[error("ema decay must lie in [0, 1), got {0}")]
    BadDecay(f64),
}

/// Coefficients of the total objective and the EMA teacher decay.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossWeights {
    /// Balance between the supervised term and the unsupervised terms.
    pub lambda: f64,
    /// MSE weight inside the consistency pair.
    pub beta1: f64,
    /// KL weight inside the consistency pair.
    pub beta2: f64,
    /// EMA teacher decay.
    pub omega: f64,
    /// Total number of active-learning cycles.
    pub num_cycle: u32,
    /// Current cycle index, `0..=num_cycle`.
    pub cycle: u32,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda: 0.05,
            beta1: 0.5,
            beta2: 0.5,
            omega: 0.99,
            num_cycle: 7,
            cycle: 0,
        }
    }
}

impl LossWeights {
    /// Supervised-term decay `1 - cycle / num_cycle`.
    pub fn factor(&self) -> f64 {
        1.0 - self.cycle as f64 / self.num_cycle as f64
    }

    pub fn validate(&self) -> Result<(), LossError> {
        if self.cycle > self.num_cycle {
            return Err(LossError::BadCycle {
                cycle: self.cycle,
                num_cycle: self.num_cycle,
            });
        }
        if !(0.0..1.0).contains(&self.omega) {
            return Err(LossError::BadDecay(self.omega));
        }
        Ok(())
    }
}

/// Switches shared by every place that turns evidence into uncertainty.
/// Both default to on; ablations flip them.
#[derive(Debug, Clone, Copy)]
pub struct UncertaintyConfig {
    /// Dynamic scaling factor r; when off, r is pinned to 1.
    pub dynamic_scaling: bool,
    /// Conflict aggregation; when off, u collapses to the ignorance.
    pub use_conflict: bool,
}

impl Default for UncertaintyConfig {
    fn default() -> Self {
        Self {
            dynamic_scaling: true,
            use_conflict: true,
        }
    }
}

impl UncertaintyConfig {
    pub fn opinion(&self, e: &Evidence<f64>) -> DirichletOpinion<f64> {
        let scaling = if self.dynamic_scaling {
            scaling_factor(e)
        } else {
            ScalingFactor::unscaled()
        };
        to_opinion_scaled(e, scaling)
    }

    pub fn uncertainty(&self, e: &Evidence<f64>) -> UncertaintyBreakdown<f64> {
        breakdown(&self.opinion(e), self.use_conflict)
    }
}

/// ψ(x) with a domain check; the evidential cross entropy feeds it `alpha`
/// and `S`, both positive by construction.
pub fn checked_digamma(x: f64) -> Result<f64, LossError> {
    digamma(x).ok_or(LossError::NonPositiveDigamma(x))
}

fn one_hot_index(y: &[f64]) -> Result<usize, LossError> {
    let mut hot = None;
    for (i, &v) in y.iter().enumerate() {
        if v == 1.0 {
            if hot.is_some() {
                return Err(LossError::BadTarget("more than one 1-entry".into()));
            }
            hot = Some(i);
        } else if v != 0.0 {
            return Err(LossError::BadTarget(format!(
                "component {i} is {v}, expected 0 or 1"
            )));
        }
    }
    hot.ok_or_else(|| LossError::BadTarget("no 1-entry".into()))
}

/// Evidential cross entropy `ψ(S) - ψ(alpha_target)` for one sample, with the
/// gradient w.r.t. the evidence vector (`r` frozen).
pub fn edl_cross_entropy(
    op: &DirichletOpinion<f64>,
    y: &[f64],
) -> Result<(f64, Vec<f64>), LossError> {
    if y.len() != op.alpha.len() {
        return Err(LossError::LengthMismatch {
            left: op.alpha.len(),
            right: y.len(),
        });
    }
    let target = one_hot_index(y)?;
    let loss = checked_digamma(op.strength)? - checked_digamma(op.alpha[target])?;
    let psi1_s = trigamma(op.strength).ok_or(LossError::NonPositiveDigamma(op.strength))?;
    let psi1_t =
        trigamma(op.alpha[target]).ok_or(LossError::NonPositiveDigamma(op.alpha[target]))?;
    let grad = (0..op.alpha.len())
        .map(|k| psi1_s - if k == target { psi1_t } else { 0.0 })
        .collect();
    Ok((loss, grad))
}

/// Aggregated uncertainty `u` for one sample together with `du/de` (`r` and
/// the belief argmax frozen).
pub fn uncertainty_with_grad(
    e: &Evidence<f64>,
    cfg: &UncertaintyConfig,
) -> (UncertaintyBreakdown<f64>, Vec<f64>) {
    let op = cfg.opinion(e);
    let bd = breakdown(&op, cfg.use_conflict);
    let k = e.num_classes() as f64;
    let s = op.strength;
    let r = op.scaling.value();
    let d_ignorance = -k * r / (s * s);
    let grad = if cfg.use_conflict {
        let m = e.argmax();
        let alpha_m = op.alpha[m];
        let i = op.ignorance;
        let c = bd.conflict;
        (0..e.num_classes())
            .map(|j| {
                let d_spread =
                    if j == m { k / s } else { 0.0 } - k * alpha_m / (s * s);
                let d_conflict = -d_spread / (k - 1.0);
                (1.0 - c) * d_ignorance + (1.0 - i) * d_conflict
            })
            .collect()
    } else {
        vec![d_ignorance; e.num_classes()]
    };
    (bd, grad)
}

/// Mean aggregated uncertainty over a pool batch, with per-sample `du/de`.
/// The caller owns the `1/|batch|` factor when chaining gradients.
pub fn unsupervised_uncertainty_loss(
    batch: &[Evidence<f64>],
    cfg: &UncertaintyConfig,
) -> Result<(f64, Vec<Vec<f64>>), LossError> {
    if batch.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let mut mean = 0.0;
    let mut grads = Vec::with_capacity(batch.len());
    for e in batch {
        let (bd, g) = uncertainty_with_grad(e, cfg);
        mean += bd.aggregated;
        grads.push(g);
    }
    Ok((mean / batch.len() as f64, grads))
}

/// Floor applied to probabilities inside the KL term.
pub const KL_CLAMP_FLOOR: f64 = 1e-7;

fn clamp_p(x: f64) -> f64 {
    x.clamp(KL_CLAMP_FLOOR, 1.0)
}

fn in_clamp_interior(x: f64) -> bool {
    (KL_CLAMP_FLOOR..=1.0).contains(&x)
}

fn check_prob(p: &[f64], k: usize) -> Result<(), LossError> {
    if p.len() != k {
        return Err(LossError::LengthMismatch {
            left: k,
            right: p.len(),
        });
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(LossError::NotNormalized(sum));
    }
    Ok(())
}

/// `KL(a ‖ b)` with both arguments component-clamped to `[1e-7, 1]`.
pub fn kl_divergence(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let cx = clamp_p(x);
            cx * (cx / clamp_p(y)).ln()
        })
        .sum()
}

/// One consistency pair `CS(a, b) = beta1 · MSE(a, b) + beta2 · KL(a, b)`.
pub fn cs_pair(a: &[f64], b: &[f64], w: &LossWeights) -> f64 {
    let k = a.len() as f64;
    let mse: f64 = a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum::<f64>() / k;
    w.beta1 * mse + w.beta2 * kl_divergence(a, b)
}

fn cs_pair_grads(a: &[f64], b: &[f64], w: &LossWeights, ga: &mut [f64], gb: &mut [f64]) {
    let k = a.len() as f64;
    for i in 0..a.len() {
        let diff = a[i] - b[i];
        let ca = clamp_p(a[i]);
        let cb = clamp_p(b[i]);
        ga[i] += w.beta1 * 2.0 * diff / k;
        gb[i] -= w.beta1 * 2.0 * diff / k;
        if in_clamp_interior(a[i]) {
            ga[i] += w.beta2 * ((ca / cb).ln() + 1.0);
        }
        if in_clamp_interior(b[i]) {
            gb[i] -= w.beta2 * ca / cb;
        }
    }
}

/// `CS(p1, p2) + CS(p2, p_teacher)` with gradients w.r.t. `p1` and `p2`
/// (the teacher is a constant target).
pub fn consistency_loss(
    p1: &[f64],
    p2: &[f64],
    p_teacher: &[f64],
    w: &LossWeights,
) -> Result<(f64, Vec<f64>, Vec<f64>), LossError> {
    let k = p1.len();
    check_prob(p1, k)?;
    check_prob(p2, k)?;
    check_prob(p_teacher, k)?;
    let value = cs_pair(p1, p2, w) + cs_pair(p2, p_teacher, w);
    let mut g1 = vec![0.0; k];
    let mut g2 = vec![0.0; k];
    let mut g_teacher = vec![0.0; k];
    cs_pair_grads(p1, p2, w, &mut g1, &mut g2);
    cs_pair_grads(p2, p_teacher, w, &mut g2, &mut g_teacher);
    Ok((value, g1, g2))
}

/// `L_CE · (1 - cycle/num_cycle) + lambda · (U + CS)`. The uncertainty term
/// is dropped when `include_unsupervised` is off (the learning-strategy
/// ablation).
pub fn total_loss(
    supervised: f64,
    unsupervised: f64,
    consistency: f64,
    w: &LossWeights,
    include_unsupervised: bool,
) -> f64 {
    let u = if include_unsupervised { unsupervised } else { 0.0 };
    supervised * w.factor() + w.lambda * (u + consistency)
}

/// In-place EMA update `teacher = omega · teacher + (1 - omega) · student`.
pub fn ema_update(teacher: &mut [f64], student: &[f64], omega: f64) -> Result<(), LossError> {
    if teacher.len() != student.len() {
        return Err(LossError::LengthMismatch {
            left: teacher.len(),
            right: student.len(),
        });
    }
    if !(0.0..1.0).contains(&omega) {
        return Err(LossError::BadDecay(omega));
    }
    for (t, &s) in teacher.iter_mut().zip(student) {
        *t = omega * *t + (1.0 - omega) * s;
    }
    Ok(())
}

/// Dirichlet mean `p = alpha / S`, the class probabilities fed into the
/// consistency loss.
pub fn dirichlet_mean(op: &DirichletOpinion<f64>) -> Vec<f64> {
    op.alpha.iter().map(|&a| a / op.strength).collect()
}

/// Chain a gradient w.r.t. `p = alpha / S` back to the evidence (`r` frozen):
/// `dL/de_j = g_j / S - (Σ_k g_k alpha_k) / S²`.
pub fn chain_prob_grad_to_evidence(op: &DirichletOpinion<f64>, grad_p: &[f64]) -> Vec<f64> {
    let s = op.strength;
    let weighted: f64 = grad_p.iter().zip(&op.alpha).map(|(&g, &a)| g * a).sum();
    grad_p.iter().map(|&g| g / s - weighted / (s * s)).collect()
}

/// Evidence wrapper for plain slices; convenience for loss call sites.
pub fn evidence_from_slice(values: &[f64]) -> Result<Evidence<f64>, evidential::EvidentialError> {
    Evidence::new(values.to_vec())
}
