//! Evidential uncertainty estimation and pool-based active learning for
//! semi-supervised classification.
//!
//! The crate is organized around a small pipeline:
//!
//! - [`evidential`] — per-sample uncertainty math: evidence vectors are turned
//!   into scaled Dirichlet opinions, then decomposed into ignorance and
//!   conflict and aggregated with a probabilistic-sum T-conorm. Generic over
//!   the scalar type; `f64` aliases are exported at the crate root.
//! - [`losses`] — the training objective: evidential cross entropy,
//!   uncertainty-mean unsupervised loss, MSE+KL consistency loss, and the
//!   cycle-decayed total, all with analytic gradients w.r.t. the evidence.
//! - [`network`] — a small feedforward classifier with a softplus evidence
//!   head and hand-written backpropagation.
//! - [`data`] — IDX ingestion, synthetic blob generation, and the
//!   labeled/unlabeled pool bookkeeping.
//! - [`engine`] — the active-learning cycle loop, the loss-increase-gated
//!   uncertainty accumulator, selection strategies, and ablation switches.
//! - [`reporting`] — metrics CSV emission, misclassification/uncertainty
//!   breakdowns, and multi-run summary tables.
//! - [`gradcheck`] — central finite-difference verification for every
//!   analytic gradient in the crate.

pub mod config;
pub mod data;
pub mod engine;
pub mod evidential;
pub mod gradcheck;
pub mod losses;
pub mod mat;
pub mod network;
pub mod reporting;
pub mod special;

/// Scalar type used by the concrete training stack.
pub type Real = f64;

/// `f64` evidence vector.
pub type Evidence = evidential::Evidence<Real>;
/// `f64` scaled Dirichlet opinion.
pub type DirichletOpinion = evidential::DirichletOpinion<Real>;
/// `f64` ignorance/conflict breakdown.
pub type UncertaintyBreakdown = evidential::UncertaintyBreakdown<Real>;
