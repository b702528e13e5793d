//! Evidence → scaled Dirichlet opinion → decomposed uncertainty.
//!
//! An evidence vector holds one non-negative mass per class. A dynamic
//! scaling factor `r` in `[1/2, 1]`, computed from the top-two evidence
//! values, replaces the unit Dirichlet prior count so that confident
//! predictions in many-class problems do not register spuriously high
//! ignorance. Total uncertainty combines ignorance (lack of evidence) and
//! conflict (evidence spread across competing classes) with the
//! probabilistic-sum T-conorm `a + b - ab`.
//!
//! All functions are pure; nothing here holds mutable state.

use num_traits::Float;
use thiserror::Error;

/// Evidence components below this value count as exactly zero when deciding
/// the all-evidence-zero branch. Network heads emit tiny positive values.
pub const ZERO_EVIDENCE_EPS: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum EvidentialError {
    #[error("evidence component {index} is negative ({value})")]
    NegativeEvidence { index: usize, value: f64 },
    #[error("evidence component {index} is not finite")]
    NonFiniteEvidence { index: usize },
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("t-conorm argument {value} outside [0, 1]")]
    UnitIntervalViolation { value: f64 },
    #[error("probability vector sums to {sum}, expected 1 within 1e-6")]
    NotNormalized { sum: f64 },
    #[error("probability component {index} is negative ({value})")]
    NegativeProbability { index: usize, value: f64 },
}

/// Non-negative per-class evidence mass for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Evidence<F: Float> {
    values: Vec<F>,
}

impl<F: Float> Evidence<F> {
    pub fn new(values: Vec<F>) -> Result<Self, EvidentialError> {
        if values.len() < 2 {
            return Err(EvidentialError::TooFewClasses(values.len()));
        }
        for (index, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(EvidentialError::NonFiniteEvidence { index });
            }
            if v < F::zero() {
                return Err(EvidentialError::NegativeEvidence {
                    index,
                    value: v.to_f64().unwrap_or(f64::NAN),
                });
            }
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }

    pub fn num_classes(&self) -> usize {
        self.values.len()
    }

    /// Largest and second-largest components by value (a tie at the top means
    /// both are the max value). Indices play no role.
    pub fn top_two(&self) -> (F, F) {
        let mut max = F::neg_infinity();
        let mut second = F::neg_infinity();
        for &v in &self.values {
            if v > max {
                second = max;
                max = v;
            } else if v > second {
                second = v;
            }
        }
        (max, second)
    }

    /// Index of the largest component (first occurrence on ties).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        best
    }

    fn is_all_zero(&self) -> bool {
        let eps = F::from(ZERO_EVIDENCE_EPS).unwrap();
        self.values.iter().all(|&v| v <= eps)
    }
}

/// Dirichlet prior scaling in `[1/2, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingFactor<F: Float>(F);

impl<F: Float> ScalingFactor<F> {
    pub fn value(self) -> F {
        self.0
    }

    /// Pinned `r = 1`, the unscaled prior. Used by the no-scaling ablation.
    pub fn unscaled() -> Self {
        Self(F::one())
    }

    /// Wrap a precomputed factor, clamped into `[1/2, 1]`.
    pub fn from_value(r: F) -> Self {
        let half = F::from(0.5).unwrap();
        Self(r.max(half).min(F::one()))
    }
}

/// `r = (e_max + e_second)^2 / (2 (e_max^2 + e_second^2))`, or 1 when the
/// top-two evidence masses are both zero.
pub fn scaling_factor<F: Float>(e: &Evidence<F>) -> ScalingFactor<F> {
    let eps = F::from(ZERO_EVIDENCE_EPS).unwrap();
    let (max, second) = e.top_two();
    let (max, second) = (
        if max <= eps { F::zero() } else { max },
        if second <= eps { F::zero() } else { second },
    );
    let denom = max * max + second * second;
    if denom == F::zero() {
        return ScalingFactor(F::one());
    }
    let sum = max + second;
    let two = F::one() + F::one();
    ScalingFactor(sum * sum / (two * denom))
}

/// Scaled Dirichlet opinion for one sample: parameters `alpha = e + r`,
/// strength `S = sum(alpha)`, beliefs `b = e / S`, ignorance `I = K r / S`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletOpinion<F: Float> {
    pub alpha: Vec<F>,
    pub strength: F,
    pub beliefs: Vec<F>,
    pub ignorance: F,
    pub scaling: ScalingFactor<F>,
}

/// Opinion with the dynamic scaling factor computed from the evidence.
pub fn to_opinion<F: Float>(e: &Evidence<F>) -> DirichletOpinion<F> {
    to_opinion_scaled(e, scaling_factor(e))
}

/// Opinion with an externally fixed scaling factor.
pub fn to_opinion_scaled<F: Float>(
    e: &Evidence<F>,
    scaling: ScalingFactor<F>,
) -> DirichletOpinion<F> {
    let r = scaling.value();
    let k = F::from(e.num_classes()).unwrap();
    let alpha: Vec<F> = e.values().iter().map(|&v| v + r).collect();
    let strength = alpha.iter().fold(F::zero(), |acc, &a| acc + a);
    let beliefs: Vec<F> = e.values().iter().map(|&v| v / strength).collect();
    let ignorance = k * r / strength;
    DirichletOpinion {
        alpha,
        strength,
        beliefs,
        ignorance,
        scaling,
    }
}

/// Conflict `C = 1 - B / (K - 1)` with `B = sum_k (b_max - b_k)`, clamped to
/// `[0, 1]` against floating-point drift.
pub fn conflict<F: Float>(op: &DirichletOpinion<F>) -> F {
    let b_max = op
        .beliefs
        .iter()
        .fold(F::neg_infinity(), |acc, &b| acc.max(b));
    let spread = op
        .beliefs
        .iter()
        .fold(F::zero(), |acc, &b| acc + (b_max - b));
    let k_minus_one = F::from(op.beliefs.len() - 1).unwrap();
    (F::one() - spread / k_minus_one).max(F::zero()).min(F::one())
}

/// Probabilistic-sum T-conorm `a + b - ab` on the unit interval.
pub fn tconorm<F: Float>(a: F, b: F) -> Result<F, EvidentialError> {
    for v in [a, b] {
        if !(v >= F::zero() && v <= F::one()) {
            return Err(EvidentialError::UnitIntervalViolation {
                value: v.to_f64().unwrap_or(f64::NAN),
            });
        }
    }
    Ok(a + b - a * b)
}

/// Ignorance, conflict, and their T-conorm aggregate for one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UncertaintyBreakdown<F: Float> {
    pub ignorance: F,
    pub conflict: F,
    pub aggregated: F,
}

/// Full decomposition with dynamic scaling: `u = T(I, C)`.
pub fn uncertainty<F: Float>(e: &Evidence<F>) -> UncertaintyBreakdown<F> {
    breakdown(&to_opinion(e), true)
}

/// Decomposition of an already-built opinion. With `use_conflict = false`
/// (the conflict ablation) the aggregate collapses to the ignorance alone.
pub fn breakdown<F: Float>(op: &DirichletOpinion<F>, use_conflict: bool) -> UncertaintyBreakdown<F> {
    let ignorance = op.ignorance;
    let c = conflict(op);
    let aggregated = if use_conflict {
        tconorm(ignorance.max(F::zero()).min(F::one()), c).expect("I, C in unit interval")
    } else {
        ignorance
    };
    UncertaintyBreakdown {
        ignorance,
        conflict: c,
        aggregated,
    }
}

/// Shannon entropy of `p` divided by `log K`, so the uniform distribution
/// maps to 1. Requires `p` to sum to 1 within 1e-6.
pub fn normalized_shannon_entropy<F: Float>(p: &[F]) -> Result<F, EvidentialError> {
    if p.len() < 2 {
        return Err(EvidentialError::TooFewClasses(p.len()));
    }
    let mut sum = F::zero();
    for (index, &v) in p.iter().enumerate() {
        if v < F::zero() {
            return Err(EvidentialError::NegativeProbability {
                index,
                value: v.to_f64().unwrap_or(f64::NAN),
            });
        }
        sum = sum + v;
    }
    if (sum - F::one()).abs() > F::from(1e-6).unwrap() {
        return Err(EvidentialError::NotNormalized {
            sum: sum.to_f64().unwrap_or(f64::NAN),
        });
    }
    let mut h = F::zero();
    for &v in p {
        if v > F::zero() {
            h = h - v * v.ln();
        }
    }
    Ok(h / F::from(p.len()).unwrap().ln())
}

/// True when the evidence counts as all-zero under [`ZERO_EVIDENCE_EPS`].
pub fn is_vacuous<F: Float>(e: &Evidence<F>) -> bool {
    e.is_all_zero()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(v: &[f64]) -> Evidence<f64> {
        Evidence::new(v.to_vec()).unwrap()
    }

    #[test]
    fn evidence_rejects_negative_and_short() {
        assert_eq!(
            Evidence::new(vec![1.0, -0.5]),
            Err(EvidentialError::NegativeEvidence {
                index: 1,
                value: -0.5
            })
        );
        assert_eq!(
            Evidence::new(vec![1.0]),
            Err(EvidentialError::TooFewClasses(1))
        );
    }

    #[test]
    fn scaling_all_zero_is_one() {
        let e = ev(&[0.0; 8]);
        assert_eq!(scaling_factor(&e).value(), 1.0);
    }

    #[test]
    fn scaling_equal_top_two_is_one() {
        let mut v = vec![0.0; 6];
        v[2] = 5.0;
        v[4] = 5.0;
        assert!((scaling_factor(&ev(&v)).value() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn scaling_single_spike_is_half() {
        let mut v = vec![0.0; 10];
        v[0] = 100.0;
        assert!((scaling_factor(&ev(&v)).value() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn scaling_three_one() {
        // (3+1)^2 / (2*(9+1)) = 16/20
        assert!((scaling_factor(&ev(&[3.0, 1.0])).value() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn opinion_hundred_class_spike() {
        let mut v = vec![0.0; 100];
        v[0] = 100.0;
        let e = ev(&v);
        // Unscaled prior: I = K / (sum e + K) = 100/200.
        let unscaled = to_opinion_scaled(&e, ScalingFactor::unscaled());
        assert!((unscaled.ignorance - 0.5).abs() < 1e-15);
        // Dynamic r = 1/2: S = 150, I = 50/150 = 1/3, b_0 = 2/3.
        let op = to_opinion(&e);
        assert!((op.scaling.value() - 0.5).abs() < 1e-15);
        assert!((op.strength - 150.0).abs() < 1e-12);
        assert!((op.ignorance - 1.0 / 3.0).abs() < 1e-15);
        assert!((op.beliefs[0] - 2.0 / 3.0).abs() < 1e-15);
        let total: f64 = op.beliefs.iter().sum::<f64>() + op.ignorance;
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn opinion_vacuous_three_class() {
        let op = to_opinion(&ev(&[0.0, 0.0, 0.0]));
        assert_eq!(op.scaling.value(), 1.0);
        assert_eq!(op.alpha, vec![1.0, 1.0, 1.0]);
        assert_eq!(op.strength, 3.0);
        assert_eq!(op.ignorance, 1.0);
        assert_eq!(op.beliefs, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn conflict_concentrated_beliefs_limit() {
        // b = [1, 0, ..., 0] is the infinite-evidence limit; build it directly.
        let op = DirichletOpinion {
            alpha: vec![1.0; 10],
            strength: 1.0,
            beliefs: {
                let mut b = vec![0.0; 10];
                b[0] = 1.0;
                b
            },
            ignorance: 0.0,
            scaling: ScalingFactor::unscaled(),
        };
        assert!(conflict(&op).abs() < 1e-15);
    }

    #[test]
    fn conflict_uniform_beliefs_is_one() {
        let op = to_opinion(&ev(&[2.0, 2.0, 2.0, 2.0]));
        assert!((conflict(&op) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn conflict_hand_example() {
        // K = 10, b = [0.6, 0.2, 0,...]: B = 6 - 0.8 = 5.2, C = 1 - 5.2/9.
        let mut b = vec![0.0; 10];
        b[0] = 0.6;
        b[1] = 0.2;
        let op = DirichletOpinion {
            alpha: vec![1.0; 10],
            strength: 1.0,
            beliefs: b,
            ignorance: 0.2,
            scaling: ScalingFactor::unscaled(),
        };
        assert!((conflict(&op) - (1.0 - 5.2 / 9.0)).abs() < 1e-12);
    }

    #[test]
    fn tconorm_boundaries() {
        for &x in &[0.0, 0.3, 0.77, 1.0] {
            assert_eq!(tconorm(x, 0.0).unwrap(), x);
            assert_eq!(tconorm(x, 1.0).unwrap(), 1.0);
        }
        assert!((tconorm(0.3, 0.5).unwrap() - 0.65).abs() < 1e-15);
        assert!(tconorm(1.2, 0.0).is_err());
        assert!(tconorm(0.5, -0.1).is_err());
        assert!(tconorm(f64::NAN, 0.5).is_err());
    }

    #[test]
    fn uncertainty_vacuous_is_one() {
        let u = uncertainty(&ev(&[0.0; 5]));
        assert_eq!(u.ignorance, 1.0);
        assert_eq!(u.aggregated, 1.0);
    }

    #[test]
    fn uncertainty_two_class_hand_chain() {
        // e = [3,1]: r = 0.8, S = 5.6, I = 1.6/5.6 = 2/7,
        // B = 2/5.6, C = 1 - 2/5.6 = 9/14, u = I + C - IC.
        let u = uncertainty(&ev(&[3.0, 1.0]));
        let i = 2.0 / 7.0;
        let c = 9.0 / 14.0;
        assert!((u.ignorance - i).abs() < 1e-15);
        assert!((u.conflict - c).abs() < 1e-15);
        assert!((u.aggregated - (i + c - i * c)).abs() < 1e-15);
        assert!((u.aggregated - 73.0 / 98.0).abs() < 1e-12);
    }

    #[test]
    fn uncertainty_equal_top_two_binary() {
        let u = uncertainty(&ev(&[4.0, 4.0]));
        assert!((u.conflict - 1.0).abs() < 1e-15);
        assert!((u.aggregated - 1.0).abs() < 1e-15);
    }

    #[test]
    fn entropy_uniform_and_onehot() {
        for k in [2usize, 5, 17] {
            let p = vec![1.0 / k as f64; k];
            assert!((normalized_shannon_entropy(&p).unwrap() - 1.0).abs() < 1e-12);
        }
        let mut p = vec![0.0; 4];
        p[2] = 1.0;
        assert_eq!(normalized_shannon_entropy(&p).unwrap(), 0.0);
        assert!(normalized_shannon_entropy(&[0.5, 0.6]).is_err());
        assert!(normalized_shannon_entropy(&[1.1, -0.1]).is_err());
    }

    #[test]
    fn ignorance_monotone_in_off_top_evidence() {
        let base = ev(&[5.0, 3.0, 1.0, 0.5]);
        let bumped = ev(&[5.0, 3.0, 2.0, 0.5]);
        assert!(to_opinion(&bumped).ignorance < to_opinion(&base).ignorance);
        // Scaling untouched because the top two are unchanged.
        assert_eq!(
            scaling_factor(&base).value(),
            scaling_factor(&bumped).value()
        );
    }
}
