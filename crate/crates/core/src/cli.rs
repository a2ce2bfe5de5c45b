//! Command-line front end: `synth`, `train`, `score`, `eval` and `sweep`.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error.

use std::collections::HashMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::{build_global_view, build_local_view, build_pooled_view, read_dataset, write_dataset, LabelStrategy};
use crate::error::{Error, Result};
use crate::eval::{
    enrollment_models, generate_trials_from_labels, read_key, run_sweep, write_grid, write_key, write_report,
    write_scores, BenchConfig, EvalBench, EvalReport, StrategyConfig, SweepCorpora, SweepSpec, TrialSet,
};
use crate::plda::{load_model, save_model, train_em, TrainConfig};
use crate::preprocess::Preprocessor;
use crate::synth::{sample_conversations, sample_corpus, sample_truth, split_eval, SynthConfig};

#[derive(Debug, Parser)]
#[command(
    name = "localplda",
    about = "PLDA training with global and conversation-local speaker labels"
)]
pub struct Cli {
    /// Worker threads for scoring and sweeps.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic conversation corpus and its ground-truth model.
    Synth(SynthArgs),
    /// Train a PLDA model from a corpus.
    Train(TrainArgs),
    /// Score enrollment models against test utterances.
    Score(ScoreArgs),
    /// Score the trials of a key file and report the EER.
    Eval(EvalArgs),
    /// Sweep global and local training speaker counts.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    dim: usize,
    #[arg(long)]
    latent: usize,
    #[arg(long, default_value_t = 100)]
    conversations: usize,
    #[arg(long, default_value_t = 2)]
    slots: usize,
    #[arg(long, default_value_t = 2)]
    utts: usize,
    #[arg(long, default_value_t = 0.0)]
    recurrence: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Corpus output file.
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth model output; defaults to `<out>.truth.plda`.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Also write an evaluation condition drawn from fresh speakers.
    #[arg(long, requires_all = ["test", "key"])]
    enroll: Option<PathBuf>,
    #[arg(long, requires_all = ["enroll", "key"])]
    test: Option<PathBuf>,
    #[arg(long, requires_all = ["enroll", "test"])]
    key: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    eval_speakers: usize,
    /// Prepended to every utt, conversation and speaker id, so corpora
    /// meant for pooling can be drawn without id collisions.
    #[arg(long, default_value = "")]
    prefix: String,
    /// Draw from an existing ground-truth model instead of sampling one;
    /// `--dim` and `--latent` must match it.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Corpus file; for `--labels pooled` give `global.csv,local.csv`.
    #[arg(long)]
    data: String,
    #[arg(long, default_value = "global")]
    labels: String,
    /// Latent speaker dimension; defaults to dim/2.
    #[arg(long)]
    q: Option<usize>,
    #[arg(long, default_value_t = 50)]
    iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    no_whiten: bool,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    enroll: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// Restrict scoring to the trials of this key file.
    #[arg(long)]
    key: Option<PathBuf>,
    #[arg(long)]
    scores: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    enroll: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    key: PathBuf,
    #[arg(long)]
    report: PathBuf,
    /// Scores output; defaults to `<report>.scores.csv`.
    #[arg(long)]
    scores: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long, default_value_t = 50)]
    dim: usize,
    #[arg(long, default_value_t = 10)]
    latent: usize,
    #[arg(long, default_value_t = 0.05)]
    recurrence: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_delimiter = ',', required = true)]
    grid_global: Vec<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    grid_local: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    /// Utterances per global speaker.
    #[arg(long, default_value_t = 5)]
    utts: usize,
    /// Participants per local conversation.
    #[arg(long, default_value_t = 2)]
    slots: usize,
    /// Utterances per local slot.
    #[arg(long, default_value_t = 2)]
    local_utts: usize,
    #[arg(long)]
    q: Option<usize>,
    #[arg(long, default_value_t = 50)]
    iters: usize,
    #[arg(long, default_value_t = 300)]
    eval_speakers: usize,
    /// Long-form grid CSV output.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    no_whiten: bool,
}

/// Runs the CLI and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .try_init();
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if cli.threads == 0 {
        eprintln!("error: --threads must be at least 1");
        return 1;
    }
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start thread pool: {e}");
            return 2;
        }
    };
    match pool.install(|| dispatch(cli.command)) {
        Ok(()) => 0,
        Err(Error::Config(msg)) => {
            eprintln!("usage error: {msg}");
            1
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Score(a) => score(a),
        Command::Eval(a) => eval(a),
        Command::Sweep(a) => sweep(a),
    }
}

fn distinct_paths(inputs: &[&Path], outputs: &[&Path]) -> Result<()> {
    for (i, o) in outputs.iter().enumerate() {
        if inputs.contains(o) || outputs[..i].contains(o) {
            return Err(Error::Config(format!("path {} is used more than once", o.display())));
        }
    }
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn synth(a: SynthArgs) -> Result<()> {
    let model_path = a.model.clone().unwrap_or_else(|| with_suffix(&a.out, ".truth.plda"));
    let mut outputs = vec![a.out.as_path(), model_path.as_path()];
    outputs.extend(a.enroll.iter().chain(&a.test).chain(&a.key).map(PathBuf::as_path));
    let inputs: Vec<&Path> = a.truth.iter().map(PathBuf::as_path).collect();
    distinct_paths(&inputs, &outputs)?;

    let cfg = SynthConfig {
        dim: a.dim,
        latent_dim: a.latent,
        seed: a.seed,
        n_conversations: a.conversations,
        slots_per_conversation: a.slots,
        utts_per_slot: a.utts,
        recurrence: a.recurrence,
        truth: None,
        id_prefix: a.prefix.clone(),
    };
    cfg.validate()?;
    let truth = match &a.truth {
        Some(path) => {
            let (truth, _) = load_model(path)?;
            if (truth.dim(), truth.latent_dim()) != (a.dim, a.latent) {
                return Err(Error::Config(format!(
                    "{} has dim {} and latent dim {}, but --dim {} --latent {} was given",
                    path.display(),
                    truth.dim(),
                    truth.latent_dim(),
                    a.dim,
                    a.latent
                )));
            }
            truth
        }
        None => sample_truth(&cfg)?,
    };
    let corpus = sample_corpus(&SynthConfig {
        truth: Some(truth.clone()),
        ..cfg.clone()
    })?;
    write_dataset(&corpus.data, &a.out)?;
    save_model(&truth, &Preprocessor::identity(a.dim), &model_path)?;
    log::info!(
        "wrote {} utterances, {} speakers ({} returning slots) to {}",
        corpus.data.len(),
        corpus.n_speakers,
        corpus.returning_slots,
        a.out.display()
    );

    if let (Some(enroll), Some(test), Some(key)) = (a.enroll, a.test, a.key) {
        let eval_cfg = SynthConfig::speakers(&truth, a.eval_speakers, 4, a.seed.wrapping_add(1), "eval-");
        let data = sample_conversations(&eval_cfg)?;
        let split = split_eval(&data, 1, 3, a.seed)?;
        let models: Vec<String> = split.enroll.keys().cloned().collect();
        let trials = generate_trials_from_labels(&models, &split.test)?;
        write_dataset(&split.enroll_dataset()?, &enroll)?;
        write_dataset(&split.test, &test)?;
        write_key(&trials, &key)?;
        log::info!(
            "wrote {} models, {} test utterances, {} trials",
            models.len(),
            split.test.len(),
            trials.len()
        );
    }
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let strategy: LabelStrategy = a.labels.parse()?;
    let paths: Vec<PathBuf> = a.data.split(',').map(PathBuf::from).collect();
    let inputs: Vec<&Path> = paths.iter().map(PathBuf::as_path).collect();
    distinct_paths(&inputs, &[a.model.as_path()])?;

    let (data, view) = match (strategy, paths.as_slice()) {
        (LabelStrategy::Global, [p]) => {
            let d = read_dataset(p)?;
            let v = build_global_view(&d)?;
            (d, v)
        }
        (LabelStrategy::Local, [p]) => {
            let d = read_dataset(p)?;
            let v = build_local_view(&d)?;
            (d, v)
        }
        (LabelStrategy::Pooled, [g, l]) => {
            let g = read_dataset(g)?;
            let l = read_dataset(l)?;
            let v = build_pooled_view(&build_global_view(&g)?, &build_local_view(&l)?)?;
            (g.concat(&l)?, v)
        }
        (LabelStrategy::Pooled, _) => {
            return Err(Error::Config(
                "--labels pooled needs --data global.csv,local.csv".into(),
            ))
        }
        _ => {
            return Err(Error::Config(format!(
                "--labels {strategy} takes exactly one --data file"
            )))
        }
    };

    let q = a.q.unwrap_or(data.dim() / 2);
    let cfg = TrainConfig {
        latent_dim: q,
        iterations: a.iters,
        seed: a.seed,
        ..TrainConfig::new(q)
    };
    let pp = Preprocessor::fit(&data.vectors(), !a.no_whiten)?;
    log::info!(
        "training {strategy} PLDA: {} classes, {} utterances, dim {}, q {q}",
        view.num_classes(),
        data.len(),
        data.dim()
    );
    let out = train_em(&data, &view, &pp, &cfg)?;
    for (i, ll) in out.logliks.iter().enumerate() {
        log::info!("iteration {:>3}: log-likelihood {ll:.10e}", i + 1);
    }
    save_model(&out.model, &pp, &a.model)
}

struct Scored {
    trials: TrialSet,
    scores: Vec<f64>,
}

fn score_files(model: &Path, enroll: &Path, test: &Path, key: Option<&Path>) -> Result<Scored> {
    let (model, pp) = load_model(model)?;
    let enroll = read_dataset(enroll)?;
    let test = read_dataset(test)?;
    let models = enrollment_models(&enroll);
    let trials = match key {
        Some(k) => read_key(k)?,
        None => {
            let ids: Vec<String> = models.keys().cloned().collect();
            let key: HashMap<String, String> = test
                .records()
                .iter()
                .map(|r| (r.utt_id.clone(), r.global_spk.clone().unwrap_or_default()))
                .collect();
            crate::eval::generate_trials(&ids, &test, &key)?
        }
    };

    let mut stats = Vec::with_capacity(trials.models().len());
    for m in trials.models() {
        let vecs = models
            .get(m)
            .ok_or_else(|| Error::Score(format!("unknown enrollment model {m}")))?;
        stats.push(model.enrollment_stats(&pp.apply_all(vecs)?)?);
    }
    let index = test.index();
    let mut tests = Vec::with_capacity(trials.tests().len());
    for t in trials.tests() {
        let pos = index
            .get(t.as_str())
            .ok_or_else(|| Error::Score(format!("unknown test utterance {t}")))?;
        tests.push(pp.length_normalize(&test.records()[*pos].vector)?);
    }
    let scores = model.score_indexed(&stats, &tests, trials.index_pairs());
    Ok(Scored { trials, scores })
}

fn emit_scores(path: &Path, s: &Scored) -> Result<()> {
    write_scores(
        path,
        s.trials.iter().zip(&s.scores).map(|((m, t, _), &score)| (m, t, score)),
    )
}

fn score(a: ScoreArgs) -> Result<()> {
    let mut inputs = vec![a.model.as_path(), a.enroll.as_path(), a.test.as_path()];
    inputs.extend(a.key.as_deref());
    distinct_paths(&inputs, &[a.scores.as_path()])?;
    let s = score_files(&a.model, &a.enroll, &a.test, a.key.as_deref())?;
    emit_scores(&a.scores, &s)?;
    log::info!("scored {} trials", s.trials.len());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let scores_path = a
        .scores
        .clone()
        .unwrap_or_else(|| with_suffix(&a.report, ".scores.csv"));
    distinct_paths(
        &[a.model.as_path(), a.enroll.as_path(), a.test.as_path(), a.key.as_path()],
        &[a.report.as_path(), scores_path.as_path()],
    )?;
    let s = score_files(&a.model, &a.enroll, &a.test, Some(&a.key))?;
    emit_scores(&scores_path, &s)?;
    let mut report = EvalReport::from_scores(&s.trials, &s.scores)?;
    report.scores_path = Some(scores_path);
    write_report(&report, &a.report)?;
    log::info!(
        "EER {:.4}% over {} target / {} nontarget trials",
        100.0 * report.eer,
        report.n_target,
        report.n_nontarget
    );
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<()> {
    let truth = sample_truth(&SynthConfig::new(a.dim, a.latent, a.seed))?;
    let bench = EvalBench::synthetic(
        &truth,
        &BenchConfig {
            n_speakers: a.eval_speakers,
            n_enroll: 1,
            n_test: 3,
            seed: a.seed.wrapping_add(1_000_003),
        },
    )?;
    let spec = SweepSpec {
        axis_global: a.grid_global,
        axis_local: a.grid_local,
        repeats: a.repeats,
        seed: a.seed,
    };
    let corpora = SweepCorpora {
        truth,
        global_utts_per_speaker: a.utts,
        local_slots_per_conversation: a.slots,
        local_utts_per_slot: a.local_utts,
        recurrence: a.recurrence,
    };
    let q = a.q.unwrap_or(a.latent);
    let cfg = StrategyConfig {
        train: TrainConfig {
            iterations: a.iters,
            seed: a.seed,
            ..TrainConfig::new(q)
        },
        whiten: !a.no_whiten,
    };
    let grid = run_sweep(&spec, &corpora, &bench, &cfg)?;
    for &g in &grid.axis_global {
        for &l in &grid.axis_local {
            if let Some((mean, std)) = grid.cell(g, l) {
                log::info!("g={g:>5} l={l:>5}: EER {:.3}% +- {:.3}", 100.0 * mean, 100.0 * std);
            }
        }
    }
    write_grid(&grid, &a.out)
}
