//! Acceptance criteria. Each test prints one `[PASS]`/`[FAIL]` line; run with
//! `cargo test -p localplda --test acceptance -- --nocapture --test-threads 1`
//! to see them in order.

mod common;

use std::collections::HashMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use localplda::data::{Dataset, UtteranceRecord};
use localplda::eval::{
    generate_trials, run_strategy, run_sweep, BenchConfig, EvalBench, StrategyConfig, SweepCorpora, SweepSpec,
};
use localplda::linalg::relative_frobenius;
use localplda::plda::train_em_classes;
use localplda::synth::{sample_conversations, sample_truth, SynthConfig};
use localplda::{build_global_view, compute_eer, Strategy, TrainConfig};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use common::{dense_llr, eer_midpoint_oracle, random_model, random_orthogonal, random_vector, report};

/// Raw per-speaker classes drawn from `truth`, no preprocessing.
fn speaker_classes(
    truth: &localplda::PldaModel,
    speakers: usize,
    sessions: usize,
    seed: u64,
) -> Vec<Vec<DVector<f64>>> {
    let data = sample_conversations(&SynthConfig::speakers(truth, speakers, sessions, seed, "")).unwrap();
    let view = build_global_view(&data).unwrap();
    let index = data.index();
    view.classes()
        .values()
        .map(|m| {
            m.iter()
                .map(|u| data.records()[index[u.as_str()]].vector.clone())
                .collect()
        })
        .collect()
}

#[test]
fn criterion_1_em_monotonicity() {
    let start = Instant::now();
    let mut worst = f64::INFINITY;
    for seed in 0..20u64 {
        let truth = sample_truth(&SynthConfig::new(16, 4, seed)).unwrap();
        let classes = speaker_classes(&truth, 200, 5, seed + 1000);
        let cfg = TrainConfig {
            iterations: 50,
            seed,
            loglik_tol: f64::NEG_INFINITY,
            ..TrainConfig::new(4)
        };
        let out = train_em_classes(&classes, &cfg).unwrap();
        assert_eq!(out.logliks.len(), 50);
        for w in out.logliks.windows(2) {
            // slack is relative to the likelihood's magnitude
            let margin = (w[1] - w[0]) / w[0].abs();
            worst = worst.min(margin);
        }
    }
    let elapsed = start.elapsed();
    let ok = worst >= -1e-8 && elapsed < Duration::from_secs(60);
    report(
        "1",
        ok,
        &format!("EM monotone on 20 corpora, worst relative step {worst:.3e}, {elapsed:.2?}"),
    );
    assert!(ok);
}

#[test]
fn criterion_2_parameter_recovery() {
    let start = Instant::now();
    let mut lines = Vec::new();
    let mut ok = true;
    for seed in 0..3u64 {
        let truth = sample_truth(&SynthConfig::new(8, 2, seed)).unwrap();
        let classes = speaker_classes(&truth, 1000, 10, seed + 500);
        let cfg = TrainConfig {
            iterations: 50,
            seed,
            ..TrainConfig::new(2)
        };
        let out = train_em_classes(&classes, &cfg).unwrap();
        let ev = relative_frobenius(out.model.between(), truth.between());
        let es = relative_frobenius(out.model.sigma(), truth.sigma());
        ok &= ev < 0.15 && es < 0.10;
        lines.push(format!("seed {seed}: VV^T err {ev:.4}, Sigma err {es:.4}"));
    }
    let elapsed = start.elapsed();
    ok &= elapsed < Duration::from_secs(60);
    report(
        "2",
        ok,
        &format!("parameter recovery ({}), {elapsed:.2?}", lines.join("; ")),
    );
    assert!(ok);
}

#[test]
fn criterion_3_scoring_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let d = rng.random_range(1..=3);
        let q = rng.random_range(0..=d.min(2));
        let m = random_model(&mut rng, d, q);
        let n = rng.random_range(1..=2);
        let enroll: Vec<_> = (0..n).map(|_| random_vector(&mut rng, d, 1.5)).collect();
        let test = random_vector(&mut rng, d, 1.5);
        let fast = m.score_llr(&enroll, &test).unwrap();
        worst = worst.max((fast - dense_llr(&m, &enroll, &test)).abs());
    }
    let elapsed = start.elapsed();
    let ok = worst < 1e-8 && elapsed < Duration::from_secs(10);
    report(
        "3",
        ok,
        &format!("score_llr vs dense oracle, max abs error {worst:.3e}, {elapsed:.2?}"),
    );
    assert!(ok);
}

#[test]
fn criterion_4_rotation_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let d = rng.random_range(2..=12);
        let q = rng.random_range(1..=d);
        let m = random_model(&mut rng, d, q);
        let rotated = m.with_rotated_subspace(&random_orthogonal(&mut rng, q)).unwrap();
        let n = rng.random_range(1..=3);
        let enroll: Vec<_> = (0..n).map(|_| random_vector(&mut rng, d, 1.0)).collect();
        let test = random_vector(&mut rng, d, 1.0);
        let a = m.score_llr(&enroll, &test).unwrap();
        let b = rotated.score_llr(&enroll, &test).unwrap();
        worst = worst.max((a - b).abs());
    }
    let ok = worst <= 1e-9;
    report(
        "4",
        ok,
        &format!("V -> V R leaves scores unchanged, max change {worst:.3e}"),
    );
    assert!(ok);
}

#[test]
fn criterion_5_eer_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let nt = rng.random_range(1..=200);
        let nn = rng.random_range(1..=200);
        let shift = rng.random_range(-1.0..3.0);
        // every third pair uses coarse scores so ties are common
        let coarse = i % 3 == 0;
        let mut draw = |mu: f64| {
            let x: f64 = rng.random_range(-2.0..2.0) + mu;
            if coarse {
                (x * 2.0).round() / 2.0
            } else {
                x
            }
        };
        let tgt: Vec<f64> = (0..nt).map(|_| draw(shift)).collect();
        let non: Vec<f64> = (0..nn).map(|_| draw(0.0)).collect();
        let got = compute_eer(&tgt, &non).unwrap().eer;
        worst = worst.max((got - eer_midpoint_oracle(&tgt, &non)).abs());
    }
    let perfect = compute_eer(&[3.0, 4.0, 5.0], &[-1.0, 0.0, 2.9]).unwrap().eer;
    let same: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
    let identical = compute_eer(&same, &same).unwrap().eer;
    let ok = worst <= 1e-12 && perfect == 0.0 && (identical - 0.5).abs() <= 1e-12;
    report(
        "5",
        ok,
        &format!(
            "EER vs midpoint oracle on 1000 pairs, max error {worst:.3e}; perfect {perfect}, identical {identical}"
        ),
    );
    assert!(ok);
}

fn trial_count(models: usize, tests: usize) -> usize {
    let spk: Vec<String> = (0..models).map(|i| format!("spk{i}")).collect();
    let records = (0..tests)
        .map(|i| {
            UtteranceRecord::new(
                format!("t{i}"),
                format!("c{i}"),
                0,
                Some(spk[i % models].clone()),
                DVector::from_element(1, 0.0),
            )
        })
        .collect();
    let test = Dataset::new(1, records).unwrap();
    let key: HashMap<String, String> = test
        .records()
        .iter()
        .map(|r| (r.utt_id.clone(), r.global_spk.clone().unwrap()))
        .collect();
    let trials = generate_trials(&spk, &test, &key).unwrap();
    assert_eq!(trials.n_target(), tests);
    trials.len()
}

#[test]
fn criterion_6_trial_arithmetic() {
    let c5 = trial_count(1236, 3708);
    let c10 = trial_count(1236, 2472);
    let ok = c5 == 4_583_088 && c10 == 3_055_392;
    report("6", ok, &format!("1236x3708 -> {c5} trials, 1236x2472 -> {c10} trials"));
    assert!(ok);
}

struct StrategyMeans {
    cosine: f64,
    lt: f64,
    gt: f64,
}

fn table_direction_benchmark() -> StrategyMeans {
    let (mut cosine, mut lt, mut gt) = (0.0, 0.0, 0.0);
    let seeds = 5;
    for seed in 0..seeds {
        let truth = sample_truth(&SynthConfig::new(50, 10, seed)).unwrap();
        let global = sample_conversations(&SynthConfig::speakers(&truth, 500, 5, seed + 100, "g-")).unwrap();
        let local = sample_conversations(&SynthConfig {
            n_conversations: 750,
            slots_per_conversation: 2,
            utts_per_slot: 2,
            recurrence: 0.05,
            truth: Some(truth.clone()),
            id_prefix: "l-".into(),
            ..SynthConfig::new(50, 10, seed + 200)
        })
        .unwrap();
        let bench = EvalBench::synthetic(
            &truth,
            &BenchConfig {
                n_speakers: 300,
                n_enroll: 1,
                n_test: 3,
                seed: seed + 300,
            },
        )
        .unwrap();
        let cfg = StrategyConfig {
            train: TrainConfig {
                seed,
                ..TrainConfig::new(10)
            },
            whiten: true,
        };
        let eer = |s| run_strategy(s, Some(&global), Some(&local), &bench, &cfg).unwrap().eer;
        cosine += eer(Strategy::Cosine);
        lt += eer(Strategy::Lt);
        gt += eer(Strategy::Gt);
    }
    let n = seeds as f64;
    StrategyMeans {
        cosine: cosine / n,
        lt: lt / n,
        gt: gt / n,
    }
}

#[test]
fn criterion_7_strategy_ordering() {
    let start = Instant::now();
    let m = table_direction_benchmark();
    let elapsed = start.elapsed();
    let cosine_gap = m.cosine - m.lt;
    let label_gap = m.lt - m.gt;
    let ok = cosine_gap > 0.005 && label_gap > 0.005 && elapsed < Duration::from_secs(300);
    report(
        "7",
        ok,
        &format!(
            "5-seed mean EER cosine {:.4} > LT {:.4} > GT {:.4} (gaps {cosine_gap:.4}, {label_gap:.4}, need > 0.005), {elapsed:.2?}",
            m.cosine, m.lt, m.gt
        ),
    );
    assert!(ok);
}

fn sweep(axis_global: Vec<usize>, axis_local: Vec<usize>, recurrence: f64) -> localplda::SweepGrid {
    let seed = 17;
    let truth = sample_truth(&SynthConfig::new(50, 10, seed)).unwrap();
    let bench = EvalBench::synthetic(
        &truth,
        &BenchConfig {
            n_speakers: 300,
            n_enroll: 1,
            n_test: 3,
            seed: seed + 1,
        },
    )
    .unwrap();
    let spec = SweepSpec {
        axis_global,
        axis_local,
        repeats: 5,
        seed,
    };
    let corpora = SweepCorpora {
        truth,
        global_utts_per_speaker: 5,
        local_slots_per_conversation: 2,
        local_utts_per_slot: 2,
        recurrence,
    };
    let cfg = StrategyConfig {
        train: TrainConfig {
            seed,
            ..TrainConfig::new(10)
        },
        whiten: true,
    };
    run_sweep(&spec, &corpora, &bench, &cfg).unwrap()
}

#[test]
fn criterion_8_sweep_directions() {
    let start = Instant::now();

    let axis = vec![200, 500, 1000, 2000];
    let row = sweep(vec![0], axis.clone(), 0.05);
    let means: Vec<f64> = axis.iter().map(|&l| row.cell(0, l).unwrap().0).collect();
    let ok_a = means.windows(2).all(|w| w[1] <= w[0] + 0.005);
    report("8a", ok_a, &format!("pure local row l={axis:?}: mean EER {means:.4?}"));

    let weak = sweep(vec![20], vec![0, 200], 0.05);
    let (w0, w1) = (weak.cell(20, 0).unwrap().0, weak.cell(20, 200).unwrap().0);
    let ok_b = w0 - w1 > 0.005;
    report("8b", ok_b, &format!("g=20: l=0 EER {w0:.4} -> l=200 EER {w1:.4}"));

    let strong = sweep(vec![1000], vec![0, 2000], 0.3);
    let (s0, s1) = (strong.cell(1000, 0).unwrap().0, strong.cell(1000, 2000).unwrap().0);
    let ok_c = s0 - s1 < 0.005;
    report(
        "8c",
        ok_c,
        &format!("g=1000, rho=0.3: l=0 EER {s0:.4} -> l=2000 EER {s1:.4}"),
    );

    let elapsed = start.elapsed();
    let ok_time = elapsed < Duration::from_secs(600);
    report(
        "8",
        ok_a && ok_b && ok_c && ok_time,
        &format!("sweep directions, {elapsed:.2?}"),
    );
    assert!(ok_a && ok_b && ok_c && ok_time);
}

fn hash_file(path: &Path) -> String {
    let bytes = std::fs::read(path).unwrap();
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn run_cli(dir: &Path, args: &[&str]) {
    let status = Command::new(env!("CARGO_BIN_EXE_localplda"))
        .args(args)
        .args(["--threads", "1"])
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .status()
        .unwrap();
    assert!(status.success(), "{args:?} failed");
}

/// Runs every command once in `dir`; returns the hash of each produced file.
fn cli_pipeline(dir: &Path) -> Vec<(String, String)> {
    let steps: Vec<(Vec<&str>, Vec<&str>)> = vec![
        (
            vec![
                "synth",
                "--dim",
                "12",
                "--latent",
                "3",
                "--conversations",
                "150",
                "--slots",
                "2",
                "--utts",
                "2",
                "--recurrence",
                "0.05",
                "--seed",
                "7",
                "--out",
                "corpus.csv",
                "--enroll",
                "enroll.csv",
                "--test",
                "test.csv",
                "--key",
                "key.csv",
                "--eval-speakers",
                "40",
            ],
            vec![
                "corpus.csv",
                "corpus.csv.truth.plda",
                "enroll.csv",
                "test.csv",
                "key.csv",
            ],
        ),
        (
            vec![
                "synth",
                "--dim",
                "12",
                "--latent",
                "3",
                "--conversations",
                "120",
                "--slots",
                "1",
                "--utts",
                "4",
                "--seed",
                "8",
                "--prefix",
                "g-",
                "--truth",
                "corpus.csv.truth.plda",
                "--out",
                "global.csv",
            ],
            vec!["global.csv", "global.csv.truth.plda"],
        ),
        (
            vec![
                "train",
                "--data",
                "corpus.csv",
                "--labels",
                "local",
                "--q",
                "3",
                "--iters",
                "20",
                "--seed",
                "7",
                "--model",
                "local.plda",
            ],
            vec!["local.plda"],
        ),
        (
            vec![
                "train",
                "--data",
                "global.csv,corpus.csv",
                "--labels",
                "pooled",
                "--q",
                "3",
                "--iters",
                "20",
                "--seed",
                "7",
                "--model",
                "pooled.plda",
            ],
            vec!["pooled.plda"],
        ),
        (
            vec![
                "score",
                "--model",
                "local.plda",
                "--enroll",
                "enroll.csv",
                "--test",
                "test.csv",
                "--scores",
                "scores.csv",
            ],
            vec!["scores.csv"],
        ),
        (
            vec![
                "eval",
                "--model",
                "pooled.plda",
                "--enroll",
                "enroll.csv",
                "--test",
                "test.csv",
                "--key",
                "key.csv",
                "--report",
                "report.csv",
                "--scores",
                "eval_scores.csv",
            ],
            vec!["report.csv", "eval_scores.csv"],
        ),
        (
            vec![
                "sweep",
                "--dim",
                "10",
                "--latent",
                "2",
                "--grid-global",
                "0,10",
                "--grid-local",
                "20,40",
                "--repeats",
                "2",
                "--iters",
                "10",
                "--eval-speakers",
                "20",
                "--seed",
                "3",
                "--out",
                "grid.csv",
            ],
            vec!["grid.csv"],
        ),
    ];
    let mut hashes = Vec::new();
    for (args, outputs) in steps {
        let inputs_before: Vec<(String, String)> = hashes.clone();
        run_cli(dir, &args);
        // earlier outputs are this step's inputs; none may change
        for (name, h) in inputs_before {
            assert_eq!(hash_file(&dir.join(&name)), h, "{name} was modified by {:?}", args[0]);
        }
        for o in outputs {
            hashes.push((o.to_string(), hash_file(&dir.join(o))));
        }
    }
    hashes
}

#[test]
fn criterion_9_cli_determinism() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = cli_pipeline(a.path());
    let second = cli_pipeline(b.path());
    let differing: Vec<&str> = first
        .iter()
        .zip(&second)
        .filter(|(x, y)| x.1 != y.1)
        .map(|(x, _)| x.0.as_str())
        .collect();
    // report.csv records its scores path; it is relative, so it matches too
    let ok = differing.is_empty();
    report(
        "9",
        ok,
        &format!(
            "{} CLI outputs bit-identical across runs (differing: {differing:?})",
            first.len()
        ),
    );
    assert!(ok);
}
