//! Active-learning cycle orchestration: semi-supervised training with the
//! evidential objective, the loss-increase-gated uncertainty accumulator,
//! per-cycle selection, baselines, and ablation switches.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{init_pool, DataError, Dataset, PoolState};
use crate::evidential::normalized_shannon_entropy;
use crate::losses::{
    self, chain_prob_grad_to_evidence, consistency_loss, dirichlet_mean, edl_cross_entropy,
    total_loss, uncertainty_with_grad, LossError, LossWeights, UncertaintyConfig,
};
use crate::mat::Mat;
use crate::network::{
    backward, forward, Gradients, InputNoise, MlpSpec, ModelParams, NetworkError, SgdMomentum,
};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("at most one ablation flag may be set, got {0}")]
    ConflictingAblations(usize),
    #[error("budget {budget} exceeds unlabeled pool size {pool}")]
    BudgetTooLarge { budget: usize, pool: usize },
    #[error("budget fraction {0} selects zero samples per cycle")]
    EmptyBudget(f64),
    #[error("non-finite loss at cycle {cycle}, epoch {epoch}")]
    NonFinite { cycle: u32, epoch: u32 },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Loss(#[from] LossError),
}

/// Sample-selection strategies. Training is identical across strategies;
/// only the per-cycle ranking differs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Loss-increase-gated uncertainty sums.
    Edalssc,
    /// Seeded uniform sampling.
    Random,
    /// Normalized Shannon entropy of the Dirichlet mean.
    MaxEntropy,
    /// Ignorance only, computed after training.
    EdlVanilla,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Edalssc => "edalssc",
            Strategy::Random => "random",
            Strategy::MaxEntropy => "max_entropy",
            Strategy::EdlVanilla => "edl_vanilla",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "edalssc" => Ok(Strategy::Edalssc),
            "random" => Ok(Strategy::Random),
            "max_entropy" => Ok(Strategy::MaxEntropy),
            "edl_vanilla" => Ok(Strategy::EdlVanilla),
            other => Err(format!(
                "unknown strategy {other:?}; expected one of edalssc, random, max_entropy, edl_vanilla"
            )),
        }
    }
}

/// One-hot ablation switches; at most one may be set.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationFlags {
    /// Drop the uncertainty term from the objective.
    pub no_unsup_loss: bool,
    /// Pin the scaling factor r to 1.
    pub no_dynamic_scaling: bool,
    /// Collapse u to the ignorance alone.
    pub no_conflict: bool,
    /// Rank by u computed once after the final epoch instead of gated sums.
    pub select_after_training: bool,
}

impl AblationFlags {
    pub fn parse(name: &str) -> Result<Self, String> {
        let mut f = Self::default();
        match name {
            "no_unsup_loss" => f.no_unsup_loss = true,
            "no_dynamic_scaling" => f.no_dynamic_scaling = true,
            "no_conflict" => f.no_conflict = true,
            "select_after_training" => f.select_after_training = true,
            other => {
                return Err(format!(
                    "unknown ablation {other:?}; expected one of no_unsup_loss, \
                     no_dynamic_scaling, no_conflict, select_after_training"
                ))
            }
        }
        Ok(f)
    }

    fn count(&self) -> usize {
        [
            self.no_unsup_loss,
            self.no_dynamic_scaling,
            self.no_conflict,
            self.select_after_training,
        ]
        .iter()
        .filter(|&&b| b)
        .count()
    }

    pub fn label(&self) -> &'static str {
        if self.no_unsup_loss {
            "ablation_no_unsup_loss"
        } else if self.no_dynamic_scaling {
            "ablation_no_dynamic_scaling"
        } else if self.no_conflict {
            "ablation_no_conflict"
        } else if self.select_after_training {
            "ablation_select_after_training"
        } else {
            "full"
        }
    }
}

/// Resolved engine behavior after ablation validation.
#[derive(Debug, Clone, Copy)]
pub struct EngineMode {
    pub include_unsup: bool,
    pub uncertainty: UncertaintyConfig,
    pub gated_selection: bool,
}

/// Validate the flags and translate them into engine behavior.
pub fn apply_ablation(flags: &AblationFlags) -> Result<EngineMode, EngineError> {
    let set = flags.count();
    if set > 1 {
        return Err(EngineError::ConflictingAblations(set));
    }
    Ok(EngineMode {
        include_unsup: !flags.no_unsup_loss,
        uncertainty: UncertaintyConfig {
            dynamic_scaling: !flags.no_dynamic_scaling,
            use_conflict: !flags.no_conflict,
        },
        gated_selection: !flags.select_after_training,
    })
}

/// Experiment-level configuration for one run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ALConfig {
    pub num_cycle: u32,
    pub labeled_fraction: f64,
    pub budget_fraction: f64,
    pub epochs_per_cycle: u32,
    pub batch_size: usize,
    pub lr: f64,
    /// Per-epoch multiplicative learning-rate decay within a cycle; the
    /// schedule restarts at `lr` when a new cycle begins.
    pub lr_decay: f64,
    pub momentum: f64,
    pub strategy: Strategy,
    pub ablation: AblationFlags,
    pub seed: u64,
    pub stratified_seed: bool,
}

/// Running uncertainty sums over unlabeled indices during gated epochs.
#[derive(Debug, Clone, Default)]
pub struct UncertaintyAccumulator {
    sums: BTreeMap<usize, f64>,
    contributing_epochs: u32,
}

impl UncertaintyAccumulator {
    pub fn add_epoch(&mut self, per_sample: &[(usize, f64)]) {
        for &(idx, u) in per_sample {
            *self.sums.entry(idx).or_insert(0.0) += u;
        }
        self.contributing_epochs += 1;
    }

    pub fn is_empty(&self) -> bool {
        self.sums.is_empty()
    }

    pub fn contributing_epochs(&self) -> u32 {
        self.contributing_epochs
    }

    pub fn scores(&self) -> Vec<(usize, f64)> {
        self.sums.iter().map(|(&i, &s)| (i, s)).collect()
    }
}

/// Top-`budget` indices by descending score, ties broken by ascending index.
pub fn rank_top_k(scores: &[(usize, f64)], budget: usize) -> Vec<usize> {
    let mut order: Vec<(usize, f64)> = scores.to_vec();
    order.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    order.into_iter().take(budget).map(|(i, _)| i).collect()
}

/// Splitmix-style seed mixing so every rng stream in a run has an
/// independent, reproducible seed.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9e37_79b9_7f4a_7c15;
    for &p in parts {
        h ^= p.wrapping_add(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(h << 6)
            .wrapping_add(h >> 2);
        h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h ^= h >> 27;
    }
    h
}

/// Per-cycle record kept by the experiment report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle: u32,
    pub test_accuracy: f64,
    pub labeled_count: usize,
    pub mean_u_misclassified: Option<f64>,
    pub mean_u_correct: Option<f64>,
    pub cv_param_diff: Option<f64>,
    /// Indices acquired at the end of this cycle; empty for the final cycle.
    pub selected: Vec<usize>,
    pub epoch_losses: Vec<f64>,
    /// 1-based epochs whose uncertainty sums entered the accumulator.
    pub gated_epochs: Vec<u32>,
}

/// Full single-run output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub strategy: String,
    pub seed: u64,
    pub cycles: Vec<CycleRecord>,
    /// Range of the scaling factor r over all pool/test uncertainty
    /// evaluations, when any were made.
    pub r_range: Option<(f64, f64)>,
    /// Per-sample rows of the final-cycle test evaluation.
    pub final_test_rows: Vec<TestRow>,
    /// Flattened parameters after the final cycle.
    pub final_params: Vec<f64>,
    pub layer_sizes: Vec<usize>,
}

/// One test sample in the misclassification/uncertainty report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestRow {
    pub index: usize,
    pub correct: bool,
    pub uncertainty: f64,
    pub entropy: f64,
}

struct RRange(Option<(f64, f64)>);

impl RRange {
    fn observe(&mut self, r: f64) {
        self.0 = Some(match self.0 {
            None => (r, r),
            Some((lo, hi)) => (lo.min(r), hi.max(r)),
        });
    }
}

/// Forward the whole `rows` selection in inference mode and return per-sample
/// (uncertainty breakdown, dirichlet mean, scaling r).
fn pool_uncertainties(
    params: &ModelParams,
    features: &Mat,
    rows: &[usize],
    mode: &EngineMode,
) -> Result<Vec<(crate::evidential::UncertaintyBreakdown<f64>, Vec<f64>, f64)>, EngineError> {
    let x = features.gather(rows);
    let cache = forward(params, &x, None)?;
    let ev = cache.evidence();
    let out: Vec<_> = (0..rows.len())
        .into_par_iter()
        .map(|i| {
            let e = losses::evidence_from_slice(ev.row(i)).expect("softplus output is valid");
            let op = mode.uncertainty.opinion(&e);
            let bd = crate::evidential::breakdown(&op, mode.uncertainty.use_conflict);
            let p = dirichlet_mean(&op);
            let r = op.scaling.value();
            (bd, p, r)
        })
        .collect();
    Ok(out)
}

/// One optimization step's objective: value and parameter gradients for the
/// total loss on a labeled batch, an unlabeled batch, and the consistency
/// passes over their union.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_objective(
    student: &ModelParams,
    teacher: &ModelParams,
    lab_x: &Mat,
    lab_y: &[usize],
    unl_x: &Mat,
    mode: &EngineMode,
    weights: &LossWeights,
    noise_std: f64,
    noise_seeds: (u64, u64),
    num_classes: usize,
) -> Result<(f64, Gradients), EngineError> {
    let mut grads = student.zeros_like();

    // Supervised evidential cross entropy on the labeled batch.
    let cache_l = forward(student, lab_x, None)?;
    let n_l = lab_x.rows;
    let per_label: Vec<(f64, Vec<f64>)> = (0..n_l)
        .into_par_iter()
        .map(|i| {
            let e = losses::evidence_from_slice(cache_l.evidence().row(i)).unwrap();
            let op = mode.uncertainty.opinion(&e);
            let mut y = vec![0.0; num_classes];
            y[lab_y[i]] = 1.0;
            edl_cross_entropy(&op, &y).map_err(EngineError::from)
        })
        .collect::<Result<_, _>>()?;
    let supervised = per_label.iter().map(|(l, _)| l).sum::<f64>() / n_l as f64;
    {
        let mut d_ev = Mat::zeros(n_l, num_classes);
        let scale = weights.factor() / n_l as f64;
        for (i, (_, g)) in per_label.iter().enumerate() {
            for (dst, &v) in d_ev.row_mut(i).iter_mut().zip(g) {
                *dst = scale * v;
            }
        }
        let g = backward(student, &cache_l, &d_ev, None)?;
        grads.add_scaled(&g, 1.0);
    }

    // Mean aggregated uncertainty over the unlabeled batch.
    let mut unsupervised = 0.0;
    if mode.include_unsup && unl_x.rows > 0 {
        let cache_u = forward(student, unl_x, None)?;
        let n_u = unl_x.rows;
        let per_unl: Vec<(f64, Vec<f64>)> = (0..n_u)
            .into_par_iter()
            .map(|i| {
                let e = losses::evidence_from_slice(cache_u.evidence().row(i)).unwrap();
                let (bd, g) = uncertainty_with_grad(&e, &mode.uncertainty);
                (bd.aggregated, g)
            })
            .collect();
        unsupervised = per_unl.iter().map(|(u, _)| u).sum::<f64>() / n_u as f64;
        let mut d_ev = Mat::zeros(n_u, num_classes);
        let scale = weights.lambda / n_u as f64;
        for (i, (_, g)) in per_unl.iter().enumerate() {
            for (dst, &v) in d_ev.row_mut(i).iter_mut().zip(g) {
                *dst = scale * v;
            }
        }
        let g = backward(student, &cache_u, &d_ev, None)?;
        grads.add_scaled(&g, 1.0);
    }

    // Consistency over labeled ∪ unlabeled: two noisy student passes against
    // each other and the second against the EMA teacher.
    let mut combined = Mat::zeros(lab_x.rows + unl_x.rows, lab_x.cols);
    combined.data[..lab_x.data.len()].copy_from_slice(&lab_x.data);
    combined.data[lab_x.data.len()..].copy_from_slice(&unl_x.data);
    let n_c = combined.rows;
    let cache1 = forward(
        student,
        &combined,
        Some(InputNoise {
            seed: noise_seeds.0,
            std: noise_std,
        }),
    )?;
    let cache2 = forward(
        student,
        &combined,
        Some(InputNoise {
            seed: noise_seeds.1,
            std: noise_std,
        }),
    )?;
    let cache_t = forward(teacher, &combined, None)?;
    let per_cs: Vec<(f64, Vec<f64>, Vec<f64>)> = (0..n_c)
        .into_par_iter()
        .map(|i| {
            let op1 = mode
                .uncertainty
                .opinion(&losses::evidence_from_slice(cache1.evidence().row(i)).unwrap());
            let op2 = mode
                .uncertainty
                .opinion(&losses::evidence_from_slice(cache2.evidence().row(i)).unwrap());
            let opt = mode
                .uncertainty
                .opinion(&losses::evidence_from_slice(cache_t.evidence().row(i)).unwrap());
            let (p1, p2, pt) = (dirichlet_mean(&op1), dirichlet_mean(&op2), dirichlet_mean(&opt));
            let (v, gp1, gp2) = consistency_loss(&p1, &p2, &pt, weights)?;
            let ge1 = chain_prob_grad_to_evidence(&op1, &gp1);
            let ge2 = chain_prob_grad_to_evidence(&op2, &gp2);
            Ok::<_, EngineError>((v, ge1, ge2))
        })
        .collect::<Result<_, _>>()?;
    let consistency = per_cs.iter().map(|(v, _, _)| v).sum::<f64>() / n_c as f64;
    {
        let scale = weights.lambda / n_c as f64;
        let mut d1 = Mat::zeros(n_c, num_classes);
        let mut d2 = Mat::zeros(n_c, num_classes);
        for (i, (_, g1, g2)) in per_cs.iter().enumerate() {
            for (dst, &v) in d1.row_mut(i).iter_mut().zip(g1) {
                *dst = scale * v;
            }
            for (dst, &v) in d2.row_mut(i).iter_mut().zip(g2) {
                *dst = scale * v;
            }
        }
        let g = backward(student, &cache1, &d1, None)?;
        grads.add_scaled(&g, 1.0);
        let g = backward(student, &cache2, &d2, None)?;
        grads.add_scaled(&g, 1.0);
    }

    let value = total_loss(
        supervised,
        unsupervised,
        consistency,
        weights,
        mode.include_unsup,
    );
    Ok((value, grads))
}

/// Trainer half of the per-cycle state.
pub struct TrainerState {
    pub student: ModelParams,
    pub teacher: ModelParams,
    pub optimizer: SgdMomentum,
}

/// Run `epochs_per_cycle` epochs on the current pool. Returns epoch losses,
/// the uncertainty accumulator filled during gated epochs, and the 1-based
/// gated epoch numbers.
#[allow(clippy::too_many_arguments)]
pub fn train_cycle(
    trainer: &mut TrainerState,
    pool: &PoolState,
    train: &Dataset,
    cfg: &ALConfig,
    mode: &EngineMode,
    weights: &LossWeights,
    noise_std: f64,
    cycle: u32,
    r_tracker: &mut RRangeTracker,
) -> Result<(Vec<f64>, UncertaintyAccumulator, Vec<u32>), EngineError> {
    let epochs = cfg.epochs_per_cycle;
    let half = epochs.div_ceil(2);
    let mut epoch_losses: Vec<f64> = Vec::with_capacity(epochs as usize);
    let mut accumulator = UncertaintyAccumulator::default();
    let mut gated = Vec::new();
    let k = train.num_classes;

    for epoch in 0..epochs {
        trainer.optimizer.lr = cfg.lr * cfg.lr_decay.powi(epoch as i32);
        let mut rng =
            ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, cycle as u64, epoch as u64, 0xE0]));
        let mut lab: Vec<usize> = pool.labeled().to_vec();
        lab.shuffle(&mut rng);
        let mut unl: Vec<usize> = pool.unlabeled().to_vec();
        unl.shuffle(&mut rng);

        let bs = cfg.batch_size.max(1);
        let steps = lab.len().div_ceil(bs);
        let mut unl_cursor = 0usize;
        let mut loss_sum = 0.0;
        for step in 0..steps {
            let lab_batch = &lab[step * bs..((step + 1) * bs).min(lab.len())];
            let mut unl_batch: Vec<usize> = Vec::new();
            if !unl.is_empty() {
                for _ in 0..bs.min(unl.len()) {
                    unl_batch.push(unl[unl_cursor]);
                    unl_cursor = (unl_cursor + 1) % unl.len();
                }
            }
            let lab_x = train.features.gather(lab_batch);
            let lab_y: Vec<usize> = lab_batch.iter().map(|&i| train.labels[i]).collect();
            let unl_x = train.features.gather(&unl_batch);
            let s1 = mix_seed(&[cfg.seed, cycle as u64, epoch as u64, step as u64, 1]);
            let s2 = mix_seed(&[cfg.seed, cycle as u64, epoch as u64, step as u64, 2]);
            let (loss, grads) = evaluate_objective(
                &trainer.student,
                &trainer.teacher,
                &lab_x,
                &lab_y,
                &unl_x,
                mode,
                weights,
                noise_std,
                (s1, s2),
                k,
            )?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(EngineError::NonFinite { cycle, epoch });
            }
            trainer.optimizer.step(&mut trainer.student, &grads)?;
            trainer
                .teacher
                .ema_from(&trainer.student, weights.omega)?;
            loss_sum += loss;
        }
        let epoch_loss = loss_sum / steps as f64;
        epoch_losses.push(epoch_loss);

        // Gate: strictly past the half-way epoch and the mean loss rose.
        let epoch_num = epoch + 1;
        if mode.gated_selection
            && epoch_num > half
            && epoch_losses.len() >= 2
            && epoch_loss > epoch_losses[epoch_losses.len() - 2]
            && !pool.unlabeled().is_empty()
        {
            let evals = pool_uncertainties(&trainer.student, &train.features, pool.unlabeled(), mode)?;
            let pairs: Vec<(usize, f64)> = pool
                .unlabeled()
                .iter()
                .zip(&evals)
                .map(|(&idx, (bd, _, r))| {
                    r_tracker.observe(*r);
                    (idx, bd.aggregated)
                })
                .collect();
            accumulator.add_epoch(&pairs);
            gated.push(epoch_num);
        }
    }
    Ok((epoch_losses, accumulator, gated))
}

/// Running min/max of the scaling factor across uncertainty evaluations.
pub struct RRangeTracker(RRange);

impl Default for RRangeTracker {
    fn default() -> Self {
        Self(RRange(None))
    }
}

impl RRangeTracker {
    fn observe(&mut self, r: f64) {
        self.0.observe(r);
    }

    pub fn range(&self) -> Option<(f64, f64)> {
        self.0 .0
    }
}

/// Rank the unlabeled pool for acquisition under the given strategy.
fn selection_scores(
    strategy: Strategy,
    accumulator: &UncertaintyAccumulator,
    trainer: &TrainerState,
    train: &Dataset,
    pool: &PoolState,
    mode: &EngineMode,
    r_tracker: &mut RRangeTracker,
) -> Result<Vec<(usize, f64)>, EngineError> {
    let final_evals = |trainer: &TrainerState, r_tracker: &mut RRangeTracker| {
        pool_uncertainties(&trainer.student, &train.features, pool.unlabeled(), mode).map(
            |evals| {
                for (_, _, r) in &evals {
                    r_tracker.observe(*r);
                }
                evals
            },
        )
    };
    match strategy {
        Strategy::Edalssc => {
            if accumulator.is_empty() {
                // Gate never fired (or selection was deferred): rank by the
                // final-epoch uncertainty.
                let evals = final_evals(trainer, r_tracker)?;
                Ok(pool
                    .unlabeled()
                    .iter()
                    .zip(&evals)
                    .map(|(&i, (bd, _, _))| (i, bd.aggregated))
                    .collect())
            } else {
                Ok(accumulator.scores())
            }
        }
        Strategy::Random => Ok(Vec::new()),
        Strategy::MaxEntropy => {
            let evals = final_evals(trainer, r_tracker)?;
            Ok(pool
                .unlabeled()
                .iter()
                .zip(&evals)
                .map(|(&i, (_, p, _))| {
                    (i, normalized_shannon_entropy(p).expect("dirichlet mean is normalized"))
                })
                .collect())
        }
        Strategy::EdlVanilla => {
            let evals = final_evals(trainer, r_tracker)?;
            Ok(pool
                .unlabeled()
                .iter()
                .zip(&evals)
                .map(|(&i, (bd, _, _))| (i, bd.ignorance))
                .collect())
        }
    }
}

/// Pick `budget` pool indices per the strategy contract.
pub fn select(
    strategy: Strategy,
    scores: &[(usize, f64)],
    pool: &PoolState,
    budget: usize,
    seed: u64,
) -> Result<Vec<usize>, EngineError> {
    if budget > pool.unlabeled().len() {
        return Err(EngineError::BudgetTooLarge {
            budget,
            pool: pool.unlabeled().len(),
        });
    }
    match strategy {
        Strategy::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut order: Vec<usize> = pool.unlabeled().to_vec();
            order.shuffle(&mut rng);
            order.truncate(budget);
            Ok(order)
        }
        _ => Ok(rank_top_k(scores, budget)),
    }
}

/// Population-CV of the elementwise absolute parameter change:
/// `std(|after - before|) / mean(|after - before|)`, 0 when the mean is 0.
pub fn parameter_space_cv(before: &[f64], after: &[f64]) -> f64 {
    assert_eq!(before.len(), after.len(), "parameter shape mismatch");
    let n = before.len() as f64;
    let deltas: Vec<f64> = before
        .iter()
        .zip(after)
        .map(|(&b, &a)| (a - b).abs())
        .collect();
    let mean = deltas.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return 0.0;
    }
    let var = deltas.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n;
    var.sqrt() / mean
}

/// Run the full active-learning experiment for one seed: seed pool, then for
/// each cycle train → evaluate → select → acquire.
pub fn run_experiment(
    cfg: &ALConfig,
    spec: &MlpSpec,
    base_weights: &LossWeights,
    train: &Dataset,
    test: &Dataset,
) -> Result<ExperimentReport, EngineError> {
    let mode = apply_ablation(&cfg.ablation)?;
    let budget = (cfg.budget_fraction * train.len() as f64).floor() as usize;
    if budget == 0 {
        return Err(EngineError::EmptyBudget(cfg.budget_fraction));
    }
    let mut pool = init_pool(
        train,
        cfg.labeled_fraction,
        mix_seed(&[cfg.seed, 0x9001]),
        cfg.stratified_seed,
    )?;

    let model_spec = MlpSpec {
        rng_seed: mix_seed(&[spec.rng_seed, cfg.seed, 0x1417]),
        ..spec.clone()
    };
    let student = ModelParams::init(&model_spec)?;
    let teacher = student.clone();
    let mut trainer = TrainerState {
        student,
        teacher,
        optimizer: SgdMomentum::new(cfg.lr, cfg.momentum),
    };
    let mut r_tracker = RRangeTracker::default();
    let mut prev_flat: Option<Vec<f64>> = None;
    let mut cycles: Vec<CycleRecord> = Vec::new();
    let mut final_rows: Vec<TestRow> = Vec::new();

    for cycle in 0..cfg.num_cycle {
        let weights = LossWeights {
            cycle,
            num_cycle: cfg.num_cycle,
            ..*base_weights
        };
        weights.validate()?;
        let (epoch_losses, accumulator, gated) = train_cycle(
            &mut trainer,
            &pool,
            train,
            cfg,
            &mode,
            &weights,
            spec.input_noise_std,
            cycle,
            &mut r_tracker,
        )?;

        // Test evaluation in inference mode.
        let evals = pool_uncertainties(
            &trainer.student,
            &test.features,
            &(0..test.len()).collect::<Vec<_>>(),
            &mode,
        )?;
        let mut correct_count = 0usize;
        let rows: Vec<TestRow> = evals
            .iter()
            .enumerate()
            .map(|(i, (bd, p, _))| {
                let pred = p
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(j, _)| j)
                    .unwrap();
                let correct = pred == test.labels[i];
                if correct {
                    correct_count += 1;
                }
                TestRow {
                    index: i,
                    correct,
                    uncertainty: bd.aggregated,
                    entropy: normalized_shannon_entropy(p).expect("normalized"),
                }
            })
            .collect();
        let accuracy = correct_count as f64 / test.len() as f64;
        let (mis_sum, mis_n, cor_sum, cor_n) = rows.iter().fold(
            (0.0, 0usize, 0.0, 0usize),
            |(ms, mn, cs, cn), row| {
                if row.correct {
                    (ms, mn, cs + row.uncertainty, cn + 1)
                } else {
                    (ms + row.uncertainty, mn + 1, cs, cn)
                }
            },
        );
        let mean_u_mis = (mis_n > 0).then(|| mis_sum / mis_n as f64);
        let mean_u_cor = (cor_n > 0).then(|| cor_sum / cor_n as f64);

        let flat = trainer.student.flatten();
        let cv = prev_flat
            .as_ref()
            .map(|prev| parameter_space_cv(prev, &flat));
        prev_flat = Some(flat);

        let selected = if cycle + 1 < cfg.num_cycle {
            let scores = selection_scores(
                cfg.strategy,
                &accumulator,
                &trainer,
                train,
                &pool,
                &mode,
                &mut r_tracker,
            )?;
            let picked = select(
                cfg.strategy,
                &scores,
                &pool,
                budget,
                mix_seed(&[cfg.seed, cycle as u64, 0x5E1E]),
            )?;
            pool.acquire(&picked)?;
            picked
        } else {
            final_rows = rows;
            Vec::new()
        };

        cycles.push(CycleRecord {
            cycle,
            test_accuracy: accuracy,
            labeled_count: pool.labeled().len() - selected.len(),
            mean_u_misclassified: mean_u_mis,
            mean_u_correct: mean_u_cor,
            cv_param_diff: cv,
            selected,
            epoch_losses,
            gated_epochs: gated,
        });
    }

    Ok(ExperimentReport {
        strategy: if cfg.ablation.count() > 0 {
            cfg.ablation.label().to_string()
        } else {
            cfg.strategy.name().to_string()
        },
        seed: cfg.seed,
        cycles,
        r_range: r_tracker.range(),
        final_test_rows: final_rows,
        final_params: trainer.student.flatten(),
        layer_sizes: spec.layer_sizes.clone(),
    })
}
