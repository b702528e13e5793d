//! Central finite-difference verification of every analytic gradient in the
//! crate, plus a straight-from-the-formulas uncertainty oracle.
//!
//! The uncertainty gradients are defined with the scaling factor `r` and the
//! belief argmax frozen per forward pass, so the difference quotients here
//! freeze them at the base point too; the end-to-end network check instead
//! pins `r = 1` so the numeric derivative is exact through the whole
//! objective. Instances near argmax ties are resampled.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::engine::{apply_ablation, evaluate_objective, AblationFlags, EngineMode};
use crate::evidential::{Evidence, ScalingFactor};
use crate::losses::{
    consistency_loss, cs_pair, edl_cross_entropy, uncertainty_with_grad, LossWeights,
    UncertaintyConfig,
};
use crate::mat::Mat;
use crate::network::{backward, forward, InputNoise, MlpSpec, ModelParams};
use crate::special::digamma;

pub const FD_STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;

/// One suite's outcome.
#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub name: &'static str,
    pub trials: usize,
    pub worst_rel_err: f64,
    /// Serialized inputs of the worst instance, for replay.
    pub worst_case: String,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.worst_rel_err < REL_TOL
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Central difference of `f` at `x`, one component at a time.
pub fn central_difference<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], step: f64) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let hi = f(&probe);
        probe[i] = x[i] - step;
        let lo = f(&probe);
        probe[i] = x[i];
        grad[i] = (hi - lo) / (2.0 * step);
    }
    grad
}

/// Independent uncertainty oracle: evaluates `u` directly from the formulas
/// with a given scaling factor and frozen max index. With `max_index = None`
/// the argmax and the dynamic `r` are recomputed from the evidence, which is
/// the fully composed definition.
pub fn oracle_uncertainty(
    values: &[f64],
    frozen: Option<(f64, usize)>,
    use_conflict: bool,
) -> f64 {
    let k = values.len() as f64;
    let (r, m) = match frozen {
        Some((r, m)) => (r, m),
        None => {
            let mut sorted = values.to_vec();
            sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let (e1, e2) = (sorted[0], sorted[1]);
            let r = if e1 * e1 + e2 * e2 <= 0.0 {
                1.0
            } else {
                (e1 + e2) * (e1 + e2) / (2.0 * (e1 * e1 + e2 * e2))
            };
            let m = (0..values.len())
                .max_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap())
                .unwrap();
            (r, m)
        }
    };
    let s: f64 = values.iter().sum::<f64>() + k * r;
    let ignorance = k * r / s;
    if !use_conflict {
        return ignorance;
    }
    let b_m = values[m] / s;
    let spread: f64 = values.iter().map(|&v| b_m - v / s).sum();
    let conflict = (1.0 - spread / (k - 1.0)).clamp(0.0, 1.0);
    ignorance + conflict - ignorance * conflict
}

fn random_evidence(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..k)
            .map(|_| {
                if rng.gen_bool(0.2) {
                    0.0
                } else {
                    rng.gen_range(0.05..6.0)
                }
            })
            .collect();
        // Keep clear of top-two ties so frozen-argmax gradients are exact.
        let mut sorted = v.clone();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        if sorted[0] - sorted[1] > 1e-3 {
            return v;
        }
    }
}

fn sabotage_sign(grad: &mut [f64], sabotage: bool) {
    if sabotage {
        if let Some(g) = grad.iter_mut().find(|g| g.abs() > 1e-3) {
            *g = -*g;
        }
    }
}

/// `edl_cross_entropy` gradient vs difference quotients with `r` frozen.
pub fn check_edl_cross_entropy(trials: usize, seed: u64, sabotage: bool) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0;
    let mut worst_case = String::new();
    for _ in 0..trials {
        let k = *[2usize, 3, 5, 10].iter().nth(rng.gen_range(0..4)).unwrap();
        let values = random_evidence(&mut rng, k);
        let e = Evidence::new(values.clone()).unwrap();
        let cfg = UncertaintyConfig::default();
        let op = cfg.opinion(&e);
        let r = op.scaling.value();
        let target = rng.gen_range(0..k);
        let mut y = vec![0.0; k];
        y[target] = 1.0;
        let (_, mut grad) = edl_cross_entropy(&op, &y).unwrap();
        sabotage_sign(&mut grad, sabotage);
        let fd = central_difference(
            |v| {
                let s: f64 = v.iter().sum::<f64>() + k as f64 * r;
                digamma(s).unwrap() - digamma(v[target] + r).unwrap()
            },
            &values,
            FD_STEP,
        );
        for (g, f) in grad.iter().zip(&fd) {
            let err = rel_err(*g, *f);
            if err > worst {
                worst = err;
                worst_case = json!({"evidence": values, "target": target, "r": r}).to_string();
            }
        }
    }
    SuiteReport {
        name: "edl_cross_entropy",
        trials,
        worst_rel_err: worst,
        worst_case,
    }
}

/// `uncertainty_with_grad` vs the formula oracle with frozen `(r, argmax)`.
pub fn check_uncertainty(trials: usize, seed: u64, sabotage: bool) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x11);
    let mut worst = 0.0;
    let mut worst_case = String::new();
    for trial in 0..trials {
        let k = *[2usize, 3, 10].iter().nth(rng.gen_range(0..3)).unwrap();
        let values = random_evidence(&mut rng, k);
        let e = Evidence::new(values.clone()).unwrap();
        let dynamic = trial % 2 == 0;
        let cfg = UncertaintyConfig {
            dynamic_scaling: dynamic,
            use_conflict: true,
        };
        let op = cfg.opinion(&e);
        let r = op.scaling.value();
        let m = e.argmax();
        let (_, mut grad) = uncertainty_with_grad(&e, &cfg);
        sabotage_sign(&mut grad, sabotage);
        let fd = central_difference(
            |v| oracle_uncertainty(v, Some((r, m)), true),
            &values,
            FD_STEP,
        );
        for (g, f) in grad.iter().zip(&fd) {
            let err = rel_err(*g, *f);
            if err > worst {
                worst = err;
                worst_case = json!({"evidence": values, "dynamic_scaling": dynamic}).to_string();
            }
        }
    }
    SuiteReport {
        name: "unsupervised_uncertainty",
        trials,
        worst_rel_err: worst,
        worst_case,
    }
}

fn random_simplex(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.2..3.0f64)).collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

/// `consistency_loss` gradients w.r.t. both student distributions.
pub fn check_consistency(trials: usize, seed: u64, sabotage: bool) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x22);
    let w = LossWeights::default();
    let mut worst = 0.0;
    let mut worst_case = String::new();
    for _ in 0..trials {
        let k = *[2usize, 4, 8].iter().nth(rng.gen_range(0..3)).unwrap();
        let p1 = random_simplex(&mut rng, k);
        let p2 = random_simplex(&mut rng, k);
        let pt = random_simplex(&mut rng, k);
        let (_, mut g1, mut g2) = consistency_loss(&p1, &p2, &pt, &w).unwrap();
        sabotage_sign(&mut g1, sabotage);
        sabotage_sign(&mut g2, false);
        let value = |a: &[f64], b: &[f64]| cs_pair(a, b, &w) + cs_pair(b, &pt, &w);
        let fd1 = central_difference(|v| value(v, &p2), &p1, FD_STEP);
        let fd2 = central_difference(|v| value(&p1, v), &p2, FD_STEP);
        for (g, f) in g1.iter().zip(&fd1).chain(g2.iter().zip(&fd2)) {
            let err = rel_err(*g, *f);
            if err > worst {
                worst = err;
                worst_case = json!({"p1": p1, "p2": p2, "p_teacher": pt}).to_string();
            }
        }
    }
    SuiteReport {
        name: "consistency_loss",
        trials,
        worst_rel_err: worst,
        worst_case,
    }
}

/// Plain backpropagation on a tiny net against difference quotients of a
/// random linear functional of the evidence.
pub fn check_network_backward(trials: usize, seed: u64, sabotage: bool) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x33);
    let mut worst = 0.0;
    let mut worst_case = String::new();
    for trial in 0..trials {
        let spec = MlpSpec {
            layer_sizes: vec![2, 4, 3],
            input_noise_std: 0.0,
            rng_seed: seed.wrapping_add(trial as u64),
        };
        let params = ModelParams::init(&spec).unwrap();
        let x = Mat::from_rows(vec![
            vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
            vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
        ]);
        let mut upstream = Mat::zeros(2, 3);
        for v in upstream.data.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let cache = forward(&params, &x, None).unwrap();
        let grads = backward(&params, &cache, &upstream, None).unwrap();
        let mut flat_grad: Vec<f64> = Vec::new();
        for l in &grads.layers {
            flat_grad.extend_from_slice(&l.weights.data);
            flat_grad.extend_from_slice(&l.bias);
        }
        sabotage_sign(&mut flat_grad, sabotage);
        let base = params.flatten();
        let fd = central_difference(
            |theta| {
                let mut s = params.clone();
                s.unflatten_into(theta).unwrap();
                let c = forward(&s, &x, None).unwrap();
                c.evidence()
                    .data
                    .iter()
                    .zip(&upstream.data)
                    .map(|(e, u)| e * u)
                    .sum()
            },
            &base,
            FD_STEP,
        );
        for (g, f) in flat_grad.iter().zip(&fd) {
            let err = rel_err(*g, *f);
            if err > worst {
                worst = err;
                worst_case = json!({"trial": trial, "seed": seed}).to_string();
            }
        }
    }
    SuiteReport {
        name: "network_backward",
        trials,
        worst_rel_err: worst,
        worst_case,
    }
}

/// Reject instances whose base point sits inside a kink neighborhood: a ReLU
/// pre-activation near zero or a near-tied evidence pair (the belief argmax
/// is frozen per forward pass, so difference quotients across a tie measure
/// a different branch).
fn instance_is_smooth(params: &ModelParams, inputs: &[(&Mat, Option<InputNoise>)]) -> bool {
    const RELU_MARGIN: f64 = 1e-3;
    const TIE_MARGIN: f64 = 1e-2;
    for &(x, noise) in inputs {
        let Ok(cache) = forward(params, x, noise) else {
            return false;
        };
        for z in cache.hidden_pre_activations() {
            if z.data.iter().any(|v| v.abs() < RELU_MARGIN) {
                return false;
            }
        }
        let ev = cache.evidence();
        for i in 0..ev.rows {
            let mut row = ev.row(i).to_vec();
            row.sort_by(|a, b| b.partial_cmp(a).unwrap());
            if row[0] - row[1] < TIE_MARGIN {
                return false;
            }
        }
    }
    true
}

/// End-to-end: the composite objective differentiated through the network on
/// a 2-class, 8-feature toy problem. Scaling is pinned to 1 so the numeric
/// derivative of the objective is exact (the dynamic-r gradient path is
/// covered by the frozen-r suites above).
pub fn check_end_to_end(trials: usize, seed: u64, sabotage: bool) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x44);
    let mode: EngineMode = apply_ablation(&AblationFlags {
        no_dynamic_scaling: true,
        ..Default::default()
    })
    .unwrap();
    let weights = LossWeights {
        cycle: 2,
        num_cycle: 7,
        ..LossWeights::default()
    };
    let mut worst = 0.0;
    let mut worst_case = String::new();
    let instances = trials.max(1);
    let mut accepted = 0usize;
    let mut trial = 0u64;
    while accepted < instances {
        trial += 1;
        let spec = MlpSpec {
            layer_sizes: vec![8, 6, 2],
            input_noise_std: 0.1,
            rng_seed: seed.wrapping_add(1000 + trial),
        };
        let student = ModelParams::init(&spec).unwrap();
        let teacher_spec = MlpSpec {
            rng_seed: seed.wrapping_add(2000 + trial),
            ..spec.clone()
        };
        let teacher = ModelParams::init(&teacher_spec).unwrap();
        let rand_row = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect()
        };
        let lab_x = Mat::from_rows((0..4).map(|_| rand_row(&mut rng)).collect());
        let lab_y: Vec<usize> = (0..4).map(|_| rng.gen_range(0..2)).collect();
        let unl_x = Mat::from_rows((0..4).map(|_| rand_row(&mut rng)).collect());
        let noise_seeds = (seed ^ 0xA, seed ^ 0xB);
        let mut combined = Mat::zeros(lab_x.rows + unl_x.rows, lab_x.cols);
        combined.data[..lab_x.data.len()].copy_from_slice(&lab_x.data);
        combined.data[lab_x.data.len()..].copy_from_slice(&unl_x.data);
        let noise = |s: u64| {
            Some(InputNoise {
                seed: s,
                std: 0.1,
            })
        };
        let smooth = instance_is_smooth(
            &student,
            &[
                (&lab_x, None),
                (&unl_x, None),
                (&combined, noise(noise_seeds.0)),
                (&combined, noise(noise_seeds.1)),
            ],
        ) && instance_is_smooth(&teacher, &[(&combined, None)]);
        if !smooth {
            continue;
        }
        accepted += 1;
        let (_, grads) = evaluate_objective(
            &student, &teacher, &lab_x, &lab_y, &unl_x, &mode, &weights, 0.1, noise_seeds, 2,
        )
        .unwrap();
        let mut flat_grad: Vec<f64> = Vec::new();
        for l in &grads.layers {
            flat_grad.extend_from_slice(&l.weights.data);
            flat_grad.extend_from_slice(&l.bias);
        }
        sabotage_sign(&mut flat_grad, sabotage);
        let base = student.flatten();
        let fd = central_difference(
            |theta| {
                let mut s = student.clone();
                s.unflatten_into(theta).unwrap();
                evaluate_objective(
                    &s, &teacher, &lab_x, &lab_y, &unl_x, &mode, &weights, 0.1, noise_seeds, 2,
                )
                .unwrap()
                .0
            },
            &base,
            FD_STEP,
        );
        for (g, f) in flat_grad.iter().zip(&fd) {
            let err = rel_err(*g, *f);
            if err > worst {
                worst = err;
                worst_case = json!({"trial": trial, "seed": seed}).to_string();
            }
        }
    }
    SuiteReport {
        name: "end_to_end_objective",
        trials: instances,
        worst_rel_err: worst,
        worst_case,
    }
}

/// Run every suite. `sabotage` injects a wrong-sign gradient into each suite
/// as a negative control of the harness itself.
pub fn run_all(trials: usize, seed: u64, sabotage: bool) -> Vec<SuiteReport> {
    vec![
        check_edl_cross_entropy(trials, seed, sabotage),
        check_uncertainty(trials, seed, sabotage),
        check_consistency(trials, seed, sabotage),
        check_network_backward(trials, seed, sabotage),
        check_end_to_end(trials, seed, sabotage),
    ]
}

/// Evidence with the dynamic scaling baked in, for oracle cross-checks.
pub fn scaled_opinion_r(values: &[f64]) -> f64 {
    let e = Evidence::new(values.to_vec()).unwrap();
    crate::evidential::scaling_factor(&e).value()
}

/// Frozen-scaling opinion helper used by tests.
pub fn opinion_with_r(values: &[f64], r: f64) -> crate::evidential::DirichletOpinion<f64> {
    let e = Evidence::new(values.to_vec()).unwrap();
    crate::evidential::to_opinion_scaled(&e, ScalingFactor::from_value(r))
}
