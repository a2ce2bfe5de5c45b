//! Synthetic i-vector corpora drawn from a PLDA model, with a conversation
//! simulator in which speakers may return across conversations.
//!
//! All draws come from ChaCha8 streams derived from the config seed:
//! stream 0 for the ground-truth model, stream 1 for conversations and
//! stream 2 for evaluation splits.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::data::{Dataset, UtteranceRecord};
use crate::error::{Error, Result};
use crate::plda::PldaModel;

const TRUTH_STREAM: u64 = 0;
const CONVERSATION_STREAM: u64 = 1;
const SPLIT_STREAM: u64 = 2;

/// Redraws allowed when a returning speaker is already in the conversation.
const MAX_REDRAWS: usize = 100;

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub dim: usize,
    pub latent_dim: usize,
    pub seed: u64,
    pub n_conversations: usize,
    pub slots_per_conversation: usize,
    pub utts_per_slot: usize,
    /// Probability that a slot is filled by a previously seen speaker.
    pub recurrence: f64,
    /// Ground-truth model; sampled from the seed when absent.
    pub truth: Option<PldaModel>,
    /// Prepended to every generated utt, conversation and speaker id.
    pub id_prefix: String,
}

impl SynthConfig {
    pub fn new(dim: usize, latent_dim: usize, seed: u64) -> Self {
        Self {
            dim,
            latent_dim,
            seed,
            n_conversations: 100,
            slots_per_conversation: 2,
            utts_per_slot: 2,
            recurrence: 0.0,
            truth: None,
            id_prefix: String::new(),
        }
    }

    /// One conversation per speaker and no recurrence: a globally labeled set.
    pub fn speakers(truth: &PldaModel, n_speakers: usize, utts_per_speaker: usize, seed: u64, prefix: &str) -> Self {
        Self {
            dim: truth.dim(),
            latent_dim: truth.latent_dim(),
            seed,
            n_conversations: n_speakers,
            slots_per_conversation: 1,
            utts_per_slot: utts_per_speaker,
            recurrence: 0.0,
            truth: Some(truth.clone()),
            id_prefix: prefix.to_string(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("dim must be positive".into()));
        }
        if self.latent_dim > self.dim {
            return Err(Error::Config("latent_dim exceeds dim".into()));
        }
        if self.n_conversations == 0 || self.slots_per_conversation == 0 || self.utts_per_slot == 0 {
            return Err(Error::Config(
                "conversation, slot and utterance counts must be at least 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.recurrence) {
            return Err(Error::Config(format!("recurrence {} outside [0, 1]", self.recurrence)));
        }
        if let Some(t) = &self.truth {
            if t.dim() != self.dim {
                return Err(Error::Config("truth model dimension does not match dim".into()));
            }
        }
        if self.id_prefix.contains([',', ':', '\n']) {
            return Err(Error::Config("id prefix contains a separator".into()));
        }
        Ok(())
    }
}

fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Ground-truth model with `u = 0`, `Sigma = A^T A / d + 0.5 I` and `V`
/// rescaled so that `tr(V V^T) = tr(Sigma)`.
pub fn sample_truth(cfg: &SynthConfig) -> Result<PldaModel> {
    if cfg.dim == 0 || cfg.latent_dim > cfg.dim {
        return Err(Error::Config("invalid dimensions for truth model".into()));
    }
    let d = cfg.dim;
    let q = cfg.latent_dim;
    let mut rng = stream(cfg.seed, TRUTH_STREAM);

    let a = DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(&mut rng));
    let sigma = a.transpose() * &a / d as f64 + DMatrix::identity(d, d) * 0.5;
    let sigma = (&sigma + sigma.transpose()) * 0.5;

    let v = if q == 0 {
        DMatrix::zeros(d, 0)
    } else {
        let entry = Normal::new(0.0, 1.0 / (q as f64).sqrt()).expect("valid std");
        let raw = DMatrix::from_fn(d, q, |_, _| entry.sample(&mut rng));
        let scale = (sigma.trace() / raw.norm_squared()).sqrt();
        raw * scale
    };
    PldaModel::new(DVector::zeros(d), v, sigma)
}

/// A generated corpus together with what the simulator knows about it.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub truth: PldaModel,
    pub data: Dataset,
    /// Slots filled by a returning speaker.
    pub returning_slots: usize,
    pub n_speakers: usize,
}

pub fn sample_conversations(cfg: &SynthConfig) -> Result<Dataset> {
    Ok(sample_corpus(cfg)?.data)
}

pub fn sample_corpus(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let truth = match &cfg.truth {
        Some(t) => t.clone(),
        None => sample_truth(cfg)?,
    };
    let d = cfg.dim;
    let q = truth.latent_dim();
    let noise = Cholesky::new(truth.sigma().clone())
        .ok_or_else(|| Error::Config("truth Sigma is not positive definite".into()))?
        .unpack();
    let mut rng = stream(cfg.seed, CONVERSATION_STREAM);

    let prefix = &cfg.id_prefix;
    let mut speakers: Vec<DVector<f64>> = Vec::new();
    let mut records = Vec::with_capacity(cfg.n_conversations * cfg.slots_per_conversation * cfg.utts_per_slot);
    let mut returning_slots = 0;

    for conv in 0..cfg.n_conversations {
        let conv_id = format!("{prefix}conv{conv:06}");
        let mut present: Vec<usize> = Vec::with_capacity(cfg.slots_per_conversation);
        for slot in 0..cfg.slots_per_conversation {
            let wants_return = rng.random::<f64>() < cfg.recurrence;
            let mut chosen = None;
            if wants_return && !speakers.is_empty() {
                for _ in 0..MAX_REDRAWS {
                    let idx = rng.random_range(0..speakers.len());
                    if !present.contains(&idx) {
                        chosen = Some(idx);
                        break;
                    }
                }
            }
            let spk = match chosen {
                Some(idx) => {
                    returning_slots += 1;
                    idx
                }
                None => {
                    speakers.push(DVector::from_fn(q, |_, _| StandardNormal.sample(&mut rng)));
                    speakers.len() - 1
                }
            };
            present.push(spk);

            let center = truth.mean() + truth.v() * &speakers[spk];
            for k in 0..cfg.utts_per_slot {
                let z = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
                records.push(UtteranceRecord::new(
                    format!("{prefix}conv{conv:06}-s{slot}-u{k}"),
                    conv_id.clone(),
                    slot as u32,
                    Some(format!("{prefix}spk{spk:06}")),
                    &center + &noise * z,
                ));
            }
        }
    }

    Ok(SynthCorpus {
        truth,
        data: Dataset::new(d, records)?,
        returning_slots,
        n_speakers: speakers.len(),
    })
}

/// Enrollment and test material for one evaluation condition.
#[derive(Debug, Clone)]
pub struct EvalSplit {
    /// model id (the speaker) -> enrollment records
    pub enroll: BTreeMap<String, Vec<UtteranceRecord>>,
    pub test: Dataset,
    /// speakers skipped for lack of utterances
    pub excluded: usize,
}

impl EvalSplit {
    /// Enrollment records as a dataset whose global_spk is the model id.
    pub fn enroll_dataset(&self) -> Result<Dataset> {
        let records = self
            .enroll
            .iter()
            .flat_map(|(model, recs)| {
                recs.iter().map(move |r| {
                    let mut r = r.clone();
                    r.global_spk = Some(model.clone());
                    r
                })
            })
            .collect();
        Dataset::new(self.test.dim(), records)
    }
}

/// Splits each labeled speaker's utterances into disjoint enroll/test sets.
pub fn split_eval(data: &Dataset, n_enroll: usize, n_test: usize, seed: u64) -> Result<EvalSplit> {
    if n_enroll == 0 {
        return Err(Error::Config("need at least one enrollment utterance".into()));
    }
    let mut by_spk: BTreeMap<&str, Vec<&UtteranceRecord>> = BTreeMap::new();
    for rec in data.records() {
        let spk = rec
            .global_spk
            .as_deref()
            .ok_or_else(|| Error::Labeling(format!("utterance {} has no global speaker label", rec.utt_id)))?;
        by_spk.entry(spk).or_default().push(rec);
    }

    let mut rng = stream(seed, SPLIT_STREAM);
    let mut enroll = BTreeMap::new();
    let mut test = Vec::new();
    let mut excluded = 0;
    for (spk, mut recs) in by_spk {
        if recs.len() < n_enroll + n_test {
            excluded += 1;
            continue;
        }
        recs.shuffle(&mut rng);
        enroll.insert(spk.to_string(), recs[..n_enroll].iter().map(|r| (*r).clone()).collect());
        test.extend(recs[n_enroll..n_enroll + n_test].iter().map(|r| (*r).clone()));
    }
    Ok(EvalSplit {
        enroll,
        test: Dataset::new(data.dim(), test)?,
        excluded,
    })
}
