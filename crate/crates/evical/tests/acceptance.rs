//! End-to-end acceptance gate. Each test prints a single PASS/FAIL line and
//! asserts the corresponding claim:
//!
//! 1. scaling motivating example (K = 100 one-hot evidence)
//! 2. evidential-core randomized property sweep
//! 3. finite-difference gradient oracle
//! 4. Fashion-MNIST desk-scale study: edalssc beats random
//! 5. uncertainty is higher on misclassified test samples
//! 6. edalssc drives larger parameter-space CV than random
//! 7. ablation harness on blobs, including r ≡ 1 under no_dynamic_scaling
//! 8. byte-identical determinism of the desk-scale study
//!
//! The Fashion-MNIST runs are shared by criteria 4, 5, 6, and 8 through a
//! `OnceLock` fixture; the IDX files are found via `EVICAL_FMNIST_DIR` or the
//! repository's `data/fashion-mnist` directory.

use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use evical::config::{DatasetConfig, ExperimentConfig};
use evical::engine::{run_experiment, AblationFlags, ExperimentReport, Strategy};
use evical::evidential::{
    scaling_factor, tconorm, to_opinion, to_opinion_scaled, uncertainty, Evidence, ScalingFactor,
};
use evical::gradcheck;
use evical::reporting::{metrics_from_reports, render_metrics_csv, summary_table};

fn verdict(criterion: u32, pass: bool, detail: &str) {
    let status = if pass { "PASS" } else { "FAIL" };
    println!("{status} criterion {criterion}: {detail}");
    assert!(pass, "criterion {criterion}: {detail}");
}

#[test]
fn criterion_1_scaling_motivating_example() {
    let start = Instant::now();
    let mut values = vec![0.0f64; 100];
    values[0] = 100.0;
    let e = Evidence::new(values).unwrap();
    let unscaled = to_opinion_scaled(&e, ScalingFactor::unscaled()).ignorance;
    let scaled = to_opinion(&e).ignorance;
    let pass = (unscaled - 0.5).abs() < 1e-12
        && (scaled - 1.0 / 3.0).abs() < 1e-12
        && start.elapsed() < Duration::from_secs(1);
    verdict(
        1,
        pass,
        &format!("K=100 one-hot: unscaled I = {unscaled}, scaled I = {scaled} (want 0.5 and 1/3)"),
    );
}

#[test]
fn criterion_2_evidential_property_sweep() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE);
    let ks = [2usize, 3, 10, 100];
    let mut checked = 0usize;
    let mut failures: Vec<String> = Vec::new();
    for i in 0..10_000 {
        let k = ks[i % ks.len()];
        let values: Vec<f64> = (0..k)
            .map(|_| {
                if rng.gen_bool(0.25) {
                    0.0
                } else {
                    rng.gen_range(0.0..100.0)
                }
            })
            .collect();
        let e = Evidence::new(values).unwrap();
        let op = to_opinion(&e);
        let mass: f64 = op.beliefs.iter().sum::<f64>() + op.ignorance;
        let r = scaling_factor(&e).value();
        let bd = uncertainty(&e);
        if (mass - 1.0).abs() >= 1e-9 {
            failures.push(format!("mass {mass}"));
        }
        if !(0.5..=1.0).contains(&r) {
            failures.push(format!("r {r}"));
        }
        for (label, v) in [
            ("I", bd.ignorance),
            ("C", bd.conflict),
            ("u", bd.aggregated),
        ] {
            if !(0.0..=1.0).contains(&v) {
                failures.push(format!("{label} {v}"));
            }
        }
        // T-conorm laws on this sample's own (I, C) pair.
        let (a, b) = (bd.ignorance, bd.conflict);
        let ab = tconorm(a, b).unwrap();
        let ba = tconorm(b, a).unwrap();
        if (ab - ba).abs() >= 1e-12 {
            failures.push(format!("commutativity {ab} vs {ba}"));
        }
        if (tconorm(a, 0.0).unwrap() - a).abs() >= 1e-12 {
            failures.push("boundary T(a,0) != a".into());
        }
        if (tconorm(a, 1.0).unwrap() - 1.0).abs() >= 1e-12 {
            failures.push("boundary T(a,1) != 1".into());
        }
        let c: f64 = rng.gen_range(0.0..=1.0);
        let (lo, hi) = if b <= c { (b, c) } else { (c, b) };
        if tconorm(a, lo).unwrap() > tconorm(a, hi).unwrap() + 1e-12 {
            failures.push("monotonicity".into());
        }
        checked += 1;
        if failures.len() > 5 {
            break;
        }
    }
    let elapsed = start.elapsed();
    let pass = failures.is_empty() && checked == 10_000 && elapsed < Duration::from_secs(10);
    verdict(
        2,
        pass,
        &format!(
            "{checked} evidence vectors over K in {{2,3,10,100}} in {:.2?}; violations: {:?}",
            elapsed, failures
        ),
    );
}

#[test]
fn criterion_3_gradient_oracle() {
    let start = Instant::now();
    let reports = gradcheck::run_all(100, 0x5EED, false);
    let elapsed = start.elapsed();
    let detail: Vec<String> = reports
        .iter()
        .map(|r| format!("{} {:.2e}", r.name, r.worst_rel_err))
        .collect();
    let pass = reports.iter().all(|r| r.passed()) && elapsed < Duration::from_secs(60);
    verdict(
        3,
        pass,
        &format!(
            "worst relative errors [{}] over >=100 instances each in {:.2?} (tolerance 1e-4)",
            detail.join(", "),
            elapsed
        ),
    );
}

// ---------------------------------------------------------------------------
// Fashion-MNIST fixture shared by criteria 4, 5, 6, 8.

const FM_SEEDS: [u64; 3] = [0, 1, 2];

struct DeskStudy {
    edalssc: Vec<ExperimentReport>,
    random: Vec<ExperimentReport>,
    elapsed: Duration,
}

fn fmnist_dir() -> PathBuf {
    if let Ok(dir) = std::env::var("EVICAL_FMNIST_DIR") {
        return PathBuf::from(dir);
    }
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/fashion-mnist")
}

fn desk_config() -> ExperimentConfig {
    let dir = fmnist_dir();
    let mut cfg: ExperimentConfig = serde_json::from_str(
        r#"{"dataset": {"kind": "blobs", "k": 2, "n_per_class": 1}}"#,
    )
    .unwrap();
    cfg.dataset = DatasetConfig::Idx {
        train_images: dir.join("train-images-idx3-ubyte"),
        train_labels: dir.join("train-labels-idx1-ubyte"),
        test_images: dir.join("t10k-images-idx3-ubyte"),
        test_labels: dir.join("t10k-labels-idx1-ubyte"),
        subsample: Some(10_000),
        test_subsample: Some(2_000),
        subsample_seed: 7,
    };
    // Short per-cycle schedules with a high initial learning rate keep the
    // model-update signal (criterion 6) visible: early epochs react strongly
    // to the newly acquired samples while the decayed tail settles accuracy.
    cfg.training.epochs_per_cycle = 8;
    cfg.training.lr = 0.5;
    cfg.training.lr_decay = 0.85;
    cfg.loss.lambda = 0.005;
    cfg.validate().unwrap();
    cfg
}

/// One full pass of the desk-scale study: both strategies, three seeds.
fn run_desk_study() -> (Vec<ExperimentReport>, Vec<ExperimentReport>) {
    let cfg = desk_config();
    let (train, test) = cfg.load_dataset().expect("Fashion-MNIST IDX files");
    assert_eq!(train.len(), 10_000);
    assert_eq!(train.features.cols, 784);
    let mut edalssc = Vec::new();
    let mut random = Vec::new();
    for &seed in &FM_SEEDS {
        for strategy in [Strategy::Edalssc, Strategy::Random] {
            let (mut al, spec, weights) = cfg.build(seed, 784, 10).unwrap();
            al.strategy = strategy;
            assert_eq!(spec.layer_sizes, vec![784, 128, 10]);
            let report = run_experiment(&al, &spec, &weights, &train, &test).unwrap();
            match strategy {
                Strategy::Edalssc => edalssc.push(report),
                _ => random.push(report),
            }
        }
    }
    (edalssc, random)
}

fn desk_study() -> &'static DeskStudy {
    static STUDY: OnceLock<DeskStudy> = OnceLock::new();
    STUDY.get_or_init(|| {
        let start = Instant::now();
        let (edalssc, random) = run_desk_study();
        DeskStudy {
            edalssc,
            random,
            elapsed: start.elapsed(),
        }
    })
}

fn mean_final_accuracy(reports: &[ExperimentReport]) -> f64 {
    reports
        .iter()
        .map(|r| r.cycles.last().unwrap().test_accuracy)
        .sum::<f64>()
        / reports.len() as f64
}

/// Seed-mean accuracy per cycle.
fn mean_curve(reports: &[ExperimentReport]) -> Vec<f64> {
    let n = reports[0].cycles.len();
    (0..n)
        .map(|c| {
            reports
                .iter()
                .map(|r| r.cycles[c].test_accuracy)
                .sum::<f64>()
                / reports.len() as f64
        })
        .collect()
}

#[test]
fn criterion_4_desk_scale_study() {
    let study = desk_study();
    let acc_e = mean_final_accuracy(&study.edalssc);
    let acc_r = mean_final_accuracy(&study.random);
    let curve = mean_curve(&study.edalssc);
    let non_decreasing = curve
        .windows(2)
        .filter(|w| w[1] >= w[0])
        .count();
    let pass = acc_e - acc_r >= 0.005
        && non_decreasing >= 5
        && study.elapsed < Duration::from_secs(30 * 60);
    verdict(
        4,
        pass,
        &format!(
            "mean final accuracy edalssc {acc_e:.4} vs random {acc_r:.4} (need +0.005); \
             non-decreasing transitions {non_decreasing}/6 (need >=5); runtime {:.1?} (< 30 min)",
            study.elapsed
        ),
    );
}

#[test]
fn criterion_5_uncertainty_flags_misclassification() {
    let study = desk_study();
    let mut detail = String::new();
    let mut pass = true;
    for r in &study.edalssc {
        let last = r.cycles.last().unwrap();
        let (mis, cor) = (
            last.mean_u_misclassified.expect("misclassified samples exist"),
            last.mean_u_correct.expect("correct samples exist"),
        );
        detail.push_str(&format!("seed {}: u_mis {mis:.4} vs u_cor {cor:.4}; ", r.seed));
        pass &= mis > cor;
    }
    verdict(5, pass, &format!("{detail}(need u_mis > u_cor in every seed)"));
}

#[test]
fn criterion_6_model_update_direction() {
    let study = desk_study();
    let n = study.edalssc[0].cycles.len();
    let mean_cv = |reports: &[ExperimentReport], c: usize| -> f64 {
        reports
            .iter()
            .map(|r| r.cycles[c].cv_param_diff.expect("transition has a cv"))
            .sum::<f64>()
            / reports.len() as f64
    };
    let mut wins = 0usize;
    let mut detail = String::new();
    for c in 1..n {
        let e = mean_cv(&study.edalssc, c);
        let r = mean_cv(&study.random, c);
        if e > r {
            wins += 1;
        }
        detail.push_str(&format!("t{c}: {e:.4} vs {r:.4}; "));
    }
    verdict(
        6,
        wins >= 4,
        &format!("seed-mean cv edalssc vs random per transition — {detail}wins {wins}/6 (need >=4)"),
    );
}

#[test]
fn criterion_7_ablation_harness() {
    let start = Instant::now();
    let cfg: ExperimentConfig = serde_json::from_str(
        r#"{
            "dataset": {"kind": "blobs", "k": 5, "n_per_class": 400, "spread": 1.2, "seed": 99},
            "model": {"hidden": [32]},
            "training": {"epochs_per_cycle": 10}
        }"#,
    )
    .unwrap();
    cfg.validate().unwrap();
    let (train, test) = cfg.load_dataset().unwrap();
    assert_eq!(train.len(), 2_000);
    let ablations = [
        None,
        Some("no_unsup_loss"),
        Some("no_dynamic_scaling"),
        Some("no_conflict"),
        Some("select_after_training"),
    ];
    let mut reports = Vec::new();
    let mut r_pinned = true;
    for ab in ablations {
        let (mut al, spec, weights) = cfg.build(11, 2, 5).unwrap();
        if let Some(name) = ab {
            al.ablation = AblationFlags::parse(name).unwrap();
        }
        let report = run_experiment(&al, &spec, &weights, &train, &test).unwrap();
        if ab == Some("no_dynamic_scaling") {
            r_pinned = report.r_range == Some((1.0, 1.0));
        }
        reports.push(report);
    }
    let table = summary_table(&reports).unwrap();
    let elapsed = start.elapsed();
    let pass = table.methods.len() == 5
        && table.num_cycle == 7
        && table.cells.iter().all(|row| row.len() == 7)
        && r_pinned
        && elapsed < Duration::from_secs(5 * 60);
    verdict(
        7,
        pass,
        &format!(
            "methods {:?}, {} cycles, r pinned to 1 under no_dynamic_scaling: {r_pinned}, runtime {:.2?}",
            table.methods, table.num_cycle, elapsed
        ),
    );
}

#[test]
fn criterion_8_determinism() {
    let study = desk_study();
    let (edalssc2, random2) = run_desk_study();
    let csv_a = {
        let mut all: Vec<ExperimentReport> = study.edalssc.clone();
        all.extend(study.random.iter().cloned());
        render_metrics_csv(&metrics_from_reports(&all))
    };
    let csv_b = {
        let mut all = edalssc2.clone();
        all.extend(random2.iter().cloned());
        render_metrics_csv(&metrics_from_reports(&all))
    };
    let selections = |reports: &[ExperimentReport]| -> Vec<Vec<Vec<usize>>> {
        reports
            .iter()
            .map(|r| r.cycles.iter().map(|c| c.selected.clone()).collect())
            .collect()
    };
    let same_csv = csv_a == csv_b;
    let same_selection = selections(&study.edalssc) == selections(&edalssc2)
        && selections(&study.random) == selections(&random2);
    verdict(
        8,
        same_csv && same_selection,
        &format!(
            "re-execution: metrics CSV byte-identical: {same_csv}; selected-index lists identical: {same_selection}"
        ),
    );
}
