//! Trials, equal error rate, the training-strategy comparison and the
//! global/local speaker-count sweep.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{build_global_view, build_local_view, build_pooled_view, Dataset, LabelView};
use crate::error::{Error, Result};
use crate::plda::{train_em, PldaModel, TrainConfig};
use crate::preprocess::{cosine_score, Preprocessor};
use crate::synth::{sample_conversations, split_eval, EvalSplit, SynthConfig};
use crate::textio::fmt_f64;

/// Enrollment models crossed with test utterances, with target keys.
///
/// Trials are stored as index pairs into `models` and `tests` so that
/// multi-million trial lists stay compact.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSet {
    models: Vec<String>,
    tests: Vec<String>,
    trials: Vec<(u32, u32)>,
    targets: Vec<bool>,
}

impl TrialSet {
    /// Builds a trial set from explicit `(model, test, is_target)` entries.
    pub fn from_entries(entries: &[(String, String, bool)]) -> Result<Self> {
        let mut models = Vec::new();
        let mut tests = Vec::new();
        let mut model_idx: HashMap<&str, u32> = HashMap::new();
        let mut test_idx: HashMap<&str, u32> = HashMap::new();
        let mut seen = HashSet::with_capacity(entries.len());
        let mut trials = Vec::with_capacity(entries.len());
        let mut targets = Vec::with_capacity(entries.len());
        for (m, t, target) in entries {
            let mi = *model_idx.entry(m).or_insert_with(|| {
                models.push(m.clone());
                (models.len() - 1) as u32
            });
            let ti = *test_idx.entry(t).or_insert_with(|| {
                tests.push(t.clone());
                (tests.len() - 1) as u32
            });
            if !seen.insert((mi, ti)) {
                return Err(Error::Eval(format!("duplicate trial ({m}, {t})")));
            }
            trials.push((mi, ti));
            targets.push(*target);
        }
        Ok(Self {
            models,
            tests,
            trials,
            targets,
        })
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn models(&self) -> &[String] {
        &self.models
    }

    pub fn tests(&self) -> &[String] {
        &self.tests
    }

    pub fn index_pairs(&self) -> &[(u32, u32)] {
        &self.trials
    }

    pub fn targets(&self) -> &[bool] {
        &self.targets
    }

    pub fn n_target(&self) -> usize {
        self.targets.iter().filter(|&&t| t).count()
    }

    pub fn n_nontarget(&self) -> usize {
        self.len() - self.n_target()
    }

    /// `(model_id, test_utt_id, is_target)` in trial order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, bool)> + '_ {
        self.trials
            .iter()
            .zip(&self.targets)
            .map(|(&(m, t), &k)| (self.models[m as usize].as_str(), self.tests[t as usize].as_str(), k))
    }

    pub fn key(&self, model: &str, test: &str) -> Option<bool> {
        self.iter()
            .find(|(m, t, _)| *m == model && *t == test)
            .map(|(_, _, k)| k)
    }
}

/// Full cross product of models and test utterances. A trial is a target
/// when the test utterance's speaker (from `key_source`) equals the model id.
pub fn generate_trials(models: &[String], test: &Dataset, key_source: &HashMap<String, String>) -> Result<TrialSet> {
    let mut test_spk = Vec::with_capacity(test.len());
    for rec in test.records() {
        let spk = key_source
            .get(&rec.utt_id)
            .ok_or_else(|| Error::Eval(format!("no true speaker for test utterance {}", rec.utt_id)))?;
        test_spk.push(spk.as_str());
    }
    let distinct: HashSet<&String> = models.iter().collect();
    if distinct.len() != models.len() {
        return Err(Error::Eval("duplicate model id".into()));
    }
    let n = models.len() * test.len();
    let mut trials = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    for (mi, m) in models.iter().enumerate() {
        for (ti, spk) in test_spk.iter().enumerate() {
            trials.push((mi as u32, ti as u32));
            targets.push(m == spk);
        }
    }
    Ok(TrialSet {
        models: models.to_vec(),
        tests: test.records().iter().map(|r| r.utt_id.clone()).collect(),
        trials,
        targets,
    })
}

/// Trials keyed by the test records' own global speaker labels.
pub fn generate_trials_from_labels(models: &[String], test: &Dataset) -> Result<TrialSet> {
    let key: HashMap<String, String> = test
        .records()
        .iter()
        .filter_map(|r| r.global_spk.clone().map(|s| (r.utt_id.clone(), s)))
        .collect();
    generate_trials(models, test, &key)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eer {
    pub eer: f64,
    pub threshold: f64,
}

fn check_scores(name: &str, scores: &[f64]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::Eval(format!("no {name} scores")));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Eval(format!("non-finite {name} score")));
    }
    Ok(())
}

/// Operating points at every distinct score used as threshold, ascending,
/// followed by a final point above the maximum. Returns
/// `(threshold, false alarm rate, miss rate)`; a score equal to the
/// threshold is accepted.
fn operating_points(targets: &[f64], nontargets: &[f64]) -> Vec<(f64, f64, f64)> {
    let mut tgt = targets.to_vec();
    let mut non = nontargets.to_vec();
    tgt.sort_by(f64::total_cmp);
    non.sort_by(f64::total_cmp);
    let (nt, nn) = (tgt.len() as f64, non.len() as f64);

    let mut points = Vec::with_capacity(tgt.len() + non.len() + 1);
    let (mut i, mut j) = (0, 0);
    while i < tgt.len() || j < non.len() {
        let t = match (tgt.get(i), non.get(j)) {
            (Some(&a), Some(&b)) => a.min(b),
            (Some(&a), None) => a,
            (None, Some(&b)) => b,
            (None, None) => unreachable!(),
        };
        // i targets and j nontargets lie strictly below t
        points.push((t, (non.len() - j) as f64 / nn, i as f64 / nt));
        while i < tgt.len() && tgt[i] == t {
            i += 1;
        }
        while j < non.len() && non[j] == t {
            j += 1;
        }
    }
    let top = points.last().map_or(0.0, |p| p.0);
    points.push((top, 0.0, 1.0));
    points
}

/// EER at the crossing of false alarm and miss rates, linearly
/// interpolated between the two adjacent operating points.
pub fn compute_eer(targets: &[f64], nontargets: &[f64]) -> Result<Eer> {
    check_scores("target", targets)?;
    check_scores("nontarget", nontargets)?;
    let points = operating_points(targets, nontargets);
    Ok(crossing(&points))
}

fn crossing(points: &[(f64, f64, f64)]) -> Eer {
    let gap = |p: &(f64, f64, f64)| p.2 - p.1;
    let k = points
        .iter()
        .position(|p| gap(p) >= 0.0)
        .expect("last operating point has miss rate 1");
    let (t1, far1, _) = points[k];
    if gap(&points[k]) == 0.0 || k == 0 {
        return Eer {
            eer: far1,
            threshold: t1,
        };
    }
    let (t0, far0, _) = points[k - 1];
    let (g0, g1) = (gap(&points[k - 1]), gap(&points[k]));
    let alpha = -g0 / (g1 - g0);
    Eer {
        eer: far0 + alpha * (far1 - far0),
        threshold: t0 + alpha * (t1 - t0),
    }
}

/// `(false alarm rate, miss rate)` pairs with thresholds ascending.
pub fn det_points(targets: &[f64], nontargets: &[f64]) -> Result<Vec<(f64, f64)>> {
    check_scores("target", targets)?;
    check_scores("nontarget", nontargets)?;
    Ok(operating_points(targets, nontargets)
        .into_iter()
        .map(|(_, far, frr)| (far, frr))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub eer: f64,
    pub threshold: f64,
    pub det_points: Vec<(f64, f64)>,
    pub n_target: usize,
    pub n_nontarget: usize,
    pub scores_path: Option<PathBuf>,
}

impl EvalReport {
    /// Summarizes scores aligned with `trials`.
    pub fn from_scores(trials: &TrialSet, scores: &[f64]) -> Result<Self> {
        if scores.len() != trials.len() {
            return Err(Error::Eval(format!(
                "{} scores for {} trials",
                scores.len(),
                trials.len()
            )));
        }
        let (mut tgt, mut non) = (Vec::new(), Vec::new());
        for (&s, &k) in scores.iter().zip(trials.targets()) {
            if k {
                tgt.push(s);
            } else {
                non.push(s);
            }
        }
        let e = compute_eer(&tgt, &non)?;
        Ok(Self {
            eer: e.eer,
            threshold: e.threshold,
            det_points: det_points(&tgt, &non)?,
            n_target: tgt.len(),
            n_nontarget: non.len(),
            scores_path: None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    Cosine,
    /// PLDA trained on globally labeled data.
    Gt,
    /// PLDA trained on conversation-local labels.
    Lt,
    /// PLDA trained on the union of both.
    Pool,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Cosine => "cosine",
            Strategy::Gt => "GT",
            Strategy::Lt => "LT",
            Strategy::Pool => "Pool",
        })
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cosine" => Ok(Strategy::Cosine),
            "gt" | "global" => Ok(Strategy::Gt),
            "lt" | "local" => Ok(Strategy::Lt),
            "pool" | "pooled" => Ok(Strategy::Pool),
            other => Err(Error::Config(format!("unknown strategy {other:?}"))),
        }
    }
}

/// A fixed evaluation condition: raw enrollment and test vectors plus trials.
#[derive(Debug, Clone)]
pub struct EvalBench {
    /// enrollment vectors per model, aligned with `trials.models()`
    pub enroll: Vec<Vec<DVector<f64>>>,
    /// test vectors aligned with `trials.tests()`
    pub tests: Vec<DVector<f64>>,
    pub trials: TrialSet,
}

impl EvalBench {
    pub fn from_split(split: &EvalSplit) -> Result<Self> {
        let models: Vec<String> = split.enroll.keys().cloned().collect();
        let trials = generate_trials_from_labels(&models, &split.test)?;
        let enroll = split
            .enroll
            .values()
            .map(|recs| recs.iter().map(|r| r.vector.clone()).collect())
            .collect();
        let tests = split.test.records().iter().map(|r| r.vector.clone()).collect();
        Ok(Self { enroll, tests, trials })
    }

    /// Fresh evaluation speakers drawn from `truth`.
    pub fn synthetic(truth: &PldaModel, cfg: &BenchConfig) -> Result<Self> {
        let per_spk = cfg.n_enroll + cfg.n_test;
        let data = sample_conversations(&SynthConfig::speakers(
            truth,
            cfg.n_speakers,
            per_spk,
            cfg.seed,
            "eval-",
        ))?;
        Self::from_split(&split_eval(&data, cfg.n_enroll, cfg.n_test, cfg.seed)?)
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub n_speakers: usize,
    pub n_enroll: usize,
    pub n_test: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct StrategyConfig {
    pub train: TrainConfig,
    pub whiten: bool,
}

fn views_for(
    strategy: Strategy,
    global: Option<&Dataset>,
    local: Option<&Dataset>,
) -> Result<(Dataset, Option<LabelView>)> {
    let need = |d: Option<&Dataset>, what: &str| {
        d.cloned()
            .ok_or_else(|| Error::Config(format!("strategy {strategy} needs a {what} training set")))
    };
    Ok(match strategy {
        Strategy::Gt => {
            let g = need(global, "global")?;
            let view = build_global_view(&g)?;
            (g, Some(view))
        }
        Strategy::Lt => {
            let l = need(local, "local")?;
            let view = build_local_view(&l)?;
            (l, Some(view))
        }
        Strategy::Pool => {
            let g = need(global, "global")?;
            let l = need(local, "local")?;
            let view = build_pooled_view(&build_global_view(&g)?, &build_local_view(&l)?)?;
            (g.concat(&l)?, Some(view))
        }
        Strategy::Cosine => {
            let data = match (global, local) {
                (Some(g), Some(l)) => g.concat(l)?,
                (Some(g), None) => g.clone(),
                (None, Some(l)) => l.clone(),
                (None, None) => {
                    return Err(Error::Config(
                        "cosine scoring needs training vectors for normalization".into(),
                    ))
                }
            };
            (data, None)
        }
    })
}

/// Trains (unless cosine) and scores the bench; returns per-trial scores.
pub fn score_strategy(
    strategy: Strategy,
    global: Option<&Dataset>,
    local: Option<&Dataset>,
    bench: &EvalBench,
    cfg: &StrategyConfig,
) -> Result<Vec<f64>> {
    let (train_data, view) = views_for(strategy, global, local)?;
    let pp = Preprocessor::fit(&train_data.vectors(), cfg.whiten)?;
    let tests = pp.apply_all(&bench.tests)?;
    let enroll: Vec<Vec<DVector<f64>>> = bench.enroll.iter().map(|e| pp.apply_all(e)).collect::<Result<_>>()?;

    match view {
        None => {
            let centroids: Vec<DVector<f64>> = enroll
                .iter()
                .map(|e| e.iter().fold(DVector::zeros(pp.dim()), |acc, v| acc + v) / e.len() as f64)
                .collect();
            bench
                .trials
                .index_pairs()
                .par_iter()
                .map(|&(m, t)| cosine_score(&centroids[m as usize], &tests[t as usize]))
                .collect()
        }
        Some(view) => {
            let outcome = train_em(&train_data, &view, &pp, &cfg.train)?;
            let stats = enroll
                .iter()
                .map(|e| outcome.model.enrollment_stats(e))
                .collect::<Result<Vec<_>>>()?;
            Ok(outcome.model.score_indexed(&stats, &tests, bench.trials.index_pairs()))
        }
    }
}

pub fn run_strategy(
    strategy: Strategy,
    global: Option<&Dataset>,
    local: Option<&Dataset>,
    bench: &EvalBench,
    cfg: &StrategyConfig,
) -> Result<EvalReport> {
    let scores = score_strategy(strategy, global, local, bench, cfg)?;
    EvalReport::from_scores(&bench.trials, &scores)
}

/// Axes and repeat count of a sweep.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub axis_global: Vec<usize>,
    pub axis_local: Vec<usize>,
    pub repeats: usize,
    pub seed: u64,
}

/// How the training pools are generated for each repeat.
#[derive(Debug, Clone)]
pub struct SweepCorpora {
    pub truth: PldaModel,
    pub global_utts_per_speaker: usize,
    pub local_slots_per_conversation: usize,
    pub local_utts_per_slot: usize,
    pub recurrence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRun {
    pub n_global: usize,
    pub n_local: usize,
    pub seed: u64,
    pub eer: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub axis_global: Vec<usize>,
    pub axis_local: Vec<usize>,
    pub repeats: usize,
    pub runs: Vec<SweepRun>,
}

impl SweepGrid {
    /// Mean and sample standard deviation of the EER in cell `(g, l)`.
    pub fn cell(&self, n_global: usize, n_local: usize) -> Option<(f64, f64)> {
        let eers: Vec<f64> = self
            .runs
            .iter()
            .filter(|r| r.n_global == n_global && r.n_local == n_local)
            .map(|r| r.eer)
            .collect();
        if eers.is_empty() {
            return None;
        }
        let n = eers.len() as f64;
        let mean = eers.iter().sum::<f64>() / n;
        let std = if eers.len() > 1 {
            (eers.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some((mean, std))
    }
}

fn repeat_seed(base: u64, repeat: usize) -> u64 {
    base.wrapping_add(repeat as u64)
}

/// Training pools of one repeat, with speakers and slots in a seeded order.
struct RepeatPools {
    seed: u64,
    global: Dataset,
    global_order: Vec<String>,
    local: Dataset,
    local_order: Vec<String>,
}

impl RepeatPools {
    fn generate(corpora: &SweepCorpora, max_g: usize, max_l: usize, seed: u64) -> Result<Self> {
        let truth = &corpora.truth;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(3);

        let global = if max_g > 0 {
            sample_conversations(&SynthConfig::speakers(
                truth,
                max_g,
                corpora.global_utts_per_speaker,
                seed,
                "g-",
            ))?
        } else {
            Dataset::empty(truth.dim())?
        };
        let mut global_order: Vec<String> = build_global_view(&global)?.classes().keys().cloned().collect();
        global_order.shuffle(&mut rng);

        let local = if max_l > 0 {
            let slots = corpora.local_slots_per_conversation.max(1);
            let cfg = SynthConfig {
                dim: truth.dim(),
                latent_dim: truth.latent_dim(),
                seed,
                n_conversations: max_l.div_ceil(slots),
                slots_per_conversation: slots,
                utts_per_slot: corpora.local_utts_per_slot,
                recurrence: corpora.recurrence,
                truth: Some(truth.clone()),
                id_prefix: "l-".into(),
            };
            sample_conversations(&cfg)?
        } else {
            Dataset::empty(truth.dim())?
        };
        let mut local_order: Vec<String> = build_local_view(&local)?.classes().keys().cloned().collect();
        local_order.shuffle(&mut rng);

        Ok(Self {
            seed,
            global,
            global_order,
            local,
            local_order,
        })
    }

    fn subset(&self, g: usize, l: usize) -> (Dataset, Dataset) {
        let spk: HashSet<&str> = self.global_order[..g].iter().map(String::as_str).collect();
        let slots: HashSet<&str> = self.local_order[..l].iter().map(String::as_str).collect();
        let global = self
            .global
            .filter(|r| r.global_spk.as_deref().is_some_and(|s| spk.contains(s)));
        let local = self.local.filter(|r| slots.contains(r.local_id().as_str()));
        (global, local)
    }
}

/// Trains pooled PLDA on `g` global speakers and `l` local slots for every
/// cell and repeat, scoring one fixed bench throughout.
pub fn run_sweep(
    spec: &SweepSpec,
    corpora: &SweepCorpora,
    bench: &EvalBench,
    cfg: &StrategyConfig,
) -> Result<SweepGrid> {
    if spec.repeats == 0 {
        return Err(Error::Config("repeats must be at least 1".into()));
    }
    if spec.axis_global.is_empty() || spec.axis_local.is_empty() {
        return Err(Error::Config("sweep axes must not be empty".into()));
    }
    if spec.axis_global.iter().all(|&g| g == 0) && spec.axis_local.iter().all(|&l| l == 0) {
        return Err(Error::Config("sweep grid has no cell with training data".into()));
    }
    let max_g = *spec.axis_global.iter().max().unwrap();
    let max_l = *spec.axis_local.iter().max().unwrap();

    let pools: Vec<RepeatPools> = (0..spec.repeats)
        .map(|r| RepeatPools::generate(corpora, max_g, max_l, repeat_seed(spec.seed, r)))
        .collect::<Result<_>>()?;

    let mut jobs = Vec::new();
    for pool in &pools {
        for &g in &spec.axis_global {
            // (0, 0) has no training data and is left out of the grid
            for &l in spec.axis_local.iter().filter(|&&l| g > 0 || l > 0) {
                jobs.push((pool, g, l));
            }
        }
    }
    let runs = jobs
        .par_iter()
        .map(|&(pool, g, l)| {
            let (global, local) = pool.subset(g, l);
            let strategy = match (g, l) {
                (0, _) => Strategy::Lt,
                (_, 0) => Strategy::Gt,
                _ => Strategy::Pool,
            };
            let report = run_strategy(strategy, Some(&global), Some(&local), bench, cfg)
                .map_err(|e| Error::Eval(format!("sweep cell (g={g}, l={l}, seed={}): {e}", pool.seed)))?;
            log::info!("sweep g={g} l={l} seed={} eer={:.5}", pool.seed, report.eer);
            Ok(SweepRun {
                n_global: g,
                n_local: l,
                seed: pool.seed,
                eer: report.eer,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(SweepGrid {
        axis_global: spec.axis_global.clone(),
        axis_local: spec.axis_local.clone(),
        repeats: spec.repeats,
        runs,
    })
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

pub fn write_report(report: &EvalReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    render_report(report, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn render_report(report: &EvalReport, w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "metric,value")?;
    writeln!(w, "eer,{}", fmt_f64(report.eer))?;
    writeln!(w, "threshold,{}", fmt_f64(report.threshold))?;
    writeln!(w, "n_target,{}", report.n_target)?;
    writeln!(w, "n_nontarget,{}", report.n_nontarget)?;
    let scores = report
        .scores_path
        .as_ref()
        .map_or_else(|| "-".to_string(), |p| p.display().to_string());
    writeln!(w, "scores_path,{scores}")?;
    writeln!(w)?;
    writeln!(w, "far,frr")?;
    for (far, frr) in &report.det_points {
        writeln!(w, "{},{}", fmt_f64(*far), fmt_f64(*frr))?;
    }
    Ok(())
}

pub fn read_report(path: impl AsRef<Path>) -> Result<EvalReport> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut metrics = HashMap::new();
    let mut det_points = Vec::new();
    let mut in_det = false;
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() || line == "metric,value" {
            continue;
        }
        if line == "far,frr" {
            in_det = true;
            continue;
        }
        let (a, b) = line
            .split_once(',')
            .ok_or_else(|| Error::parse(&name, i + 1, "expected two fields"))?;
        if in_det {
            let far = a.parse().map_err(|_| Error::parse(&name, i + 1, "bad far"))?;
            let frr = b.parse().map_err(|_| Error::parse(&name, i + 1, "bad frr"))?;
            det_points.push((far, frr));
        } else {
            metrics.insert(a.to_string(), b.to_string());
        }
    }
    let get = |k: &str| {
        metrics
            .get(k)
            .ok_or_else(|| Error::parse(&name, 0, format!("missing metric {k}")))
    };
    let num = |k: &str| -> Result<f64> {
        get(k)?
            .parse()
            .map_err(|_| Error::parse(&name, 0, format!("bad metric {k}")))
    };
    let count = |k: &str| -> Result<usize> {
        get(k)?
            .parse()
            .map_err(|_| Error::parse(&name, 0, format!("bad metric {k}")))
    };
    let scores_path = match get("scores_path")?.as_str() {
        "-" => None,
        p => Some(PathBuf::from(p)),
    };
    Ok(EvalReport {
        eer: num("eer")?,
        threshold: num("threshold")?,
        det_points,
        n_target: count("n_target")?,
        n_nontarget: count("n_nontarget")?,
        scores_path,
    })
}

pub fn write_grid(grid: &SweepGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let body = (|| -> std::io::Result<()> {
        writeln!(w, "n_global,n_local,seed,eer")?;
        for r in &grid.runs {
            writeln!(w, "{},{},{},{}", r.n_global, r.n_local, r.seed, fmt_f64(r.eer))?;
        }
        w.flush()
    })();
    body.map_err(|e| Error::io(path, e))
}

pub fn read_grid_runs(path: impl AsRef<Path>) -> Result<Vec<SweepRun>> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut runs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if i == 0 || line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::parse(&name, i + 1, "expected n_global,n_local,seed,eer");
        if f.len() != 4 {
            return Err(bad());
        }
        runs.push(SweepRun {
            n_global: f[0].parse().map_err(|_| bad())?,
            n_local: f[1].parse().map_err(|_| bad())?,
            seed: f[2].parse().map_err(|_| bad())?,
            eer: f[3].parse().map_err(|_| bad())?,
        });
    }
    Ok(runs)
}

pub fn write_scores(
    path: impl AsRef<Path>,
    rows: impl IntoIterator<Item = (impl AsRef<str>, impl AsRef<str>, f64)>,
) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let body = (|| -> std::io::Result<()> {
        writeln!(w, "model_id,test_utt_id,score")?;
        for (m, t, s) in rows {
            writeln!(w, "{},{},{}", m.as_ref(), t.as_ref(), fmt_f64(s))?;
        }
        w.flush()
    })();
    body.map_err(|e| Error::io(path, e))
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<Vec<(String, String, f64)>> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if i == 0 || line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 3 {
            return Err(Error::parse(&name, i + 1, "expected model_id,test_utt_id,score"));
        }
        let s = f[2]
            .parse()
            .map_err(|_| Error::parse(&name, i + 1, format!("bad score {:?}", f[2])))?;
        out.push((f[0].to_string(), f[1].to_string(), s));
    }
    Ok(out)
}

pub fn write_key(trials: &TrialSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let body = (|| -> std::io::Result<()> {
        writeln!(w, "model_id,test_utt_id,key")?;
        for (m, t, k) in trials.iter() {
            writeln!(w, "{m},{t},{}", if k { "target" } else { "nontarget" })?;
        }
        w.flush()
    })();
    body.map_err(|e| Error::io(path, e))
}

pub fn read_key(path: impl AsRef<Path>) -> Result<TrialSet> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut entries = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 3 {
            return Err(Error::parse(
                &name,
                i + 1,
                "expected model_id,test_utt_id,target|nontarget",
            ));
        }
        let target = match f[2] {
            "target" => true,
            "nontarget" => false,
            _ if i == 0 => continue, // header
            other => return Err(Error::parse(&name, i + 1, format!("bad key {other:?}"))),
        };
        entries.push((f[0].to_string(), f[1].to_string(), target));
    }
    TrialSet::from_entries(&entries)
}

/// Groups enrollment records into models keyed by global_spk, falling back
/// to utt_id for unlabeled records.
pub fn enrollment_models(enroll: &Dataset) -> BTreeMap<String, Vec<DVector<f64>>> {
    let mut models: BTreeMap<String, Vec<DVector<f64>>> = BTreeMap::new();
    for r in enroll.records() {
        let id = r.global_spk.clone().unwrap_or_else(|| r.utt_id.clone());
        models.entry(id).or_default().push(r.vector.clone());
    }
    models
}
