//! Synthetic preference data with a known reward.
//!
//! The default task rewards occurrences of the bigram spelled by the prompt
//! and charges a small per-token length penalty. Responses are sampled from a
//! random bigram generator over content tokens, so every id is below the
//! vocabulary size and no reserved id appears inside a sequence.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::autodiff::sigmoid;
use crate::lm::{LmError, NGramPolicy, Policy, TokenSeq, Vocab};
use crate::rng;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("pair {index}: {reason}")]
    InvalidPair { index: usize, reason: String },
    #[error("{policy_len} token scores for {rejected_len} rejected tokens")]
    ScoreLength { policy_len: usize, rejected_len: usize },
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DataError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreferencePair {
    pub prompt: TokenSeq,
    pub chosen: TokenSeq,
    pub rejected: TokenSeq,
    /// Criticality `s_j ∈ [0, 1]` per rejected token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejected_scores: Option<Vec<f64>>,
}

impl PreferencePair {
    pub fn validate(&self, vocab: Option<&Vocab>) -> std::result::Result<(), String> {
        if self.chosen.is_empty() || self.rejected.is_empty() {
            return Err("chosen and rejected must be non-empty".into());
        }
        if self.chosen == self.rejected {
            return Err("chosen and rejected are identical".into());
        }
        if let Some(s) = &self.rejected_scores {
            if s.len() != self.rejected.len() {
                return Err(format!(
                    "rejected_scores has {} entries for {} rejected tokens",
                    s.len(),
                    self.rejected.len()
                ));
            }
            if let Some((j, v)) = s.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
                return Err(format!("rejected_scores[{j}] = {v} is outside [0, 1]"));
            }
        }
        if let Some(v) = vocab {
            for seq in [&self.prompt, &self.chosen, &self.rejected] {
                v.check(seq).map_err(|e| e.to_string())?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Labeling {
    /// Higher reward wins; ties go to a fair seeded coin.
    #[default]
    Deterministic,
    /// Winner drawn from `Bernoulli(σ(r_a − r_b))`.
    Bt,
}

/// Reward rule of a [`GroundTruthTask`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum RewardRule {
    /// `#occurrences of (x_0, x_1) in y − length_penalty · |y|`.
    PromptBigram { length_penalty: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GroundTruthTask {
    pub vocab_size: usize,
    pub prompt_len: usize,
    pub min_response_len: usize,
    pub max_response_len: usize,
    pub reward: RewardRule,
    /// Generator logits are `N(0, generator_scale²)` per bigram.
    pub generator_scale: f64,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for GroundTruthTask {
    fn default() -> Self {
        Self {
            vocab_size: 12,
            prompt_len: 2,
            min_response_len: 4,
            max_response_len: 24,
            reward: RewardRule::PromptBigram {
                length_penalty: 0.05,
            },
            generator_scale: 2.0,
            temperature: 1.0,
            seed: 0,
        }
    }
}

impl GroundTruthTask {
    pub fn vocab(&self) -> Result<Vocab> {
        Ok(Vocab::new(self.vocab_size)?)
    }

    pub fn validate(&self) -> Result<()> {
        let vocab = self.vocab()?;
        if vocab.content_tokens().len() < 2 {
            return Err(DataError::InvalidTask("need at least two content tokens".into()));
        }
        if self.prompt_len < 2 {
            return Err(DataError::InvalidTask("prompt_len must be at least 2".into()));
        }
        if self.min_response_len == 0 || self.min_response_len > self.max_response_len {
            return Err(DataError::InvalidTask(format!(
                "response lengths {}..={} are empty or start at 0",
                self.min_response_len, self.max_response_len
            )));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(DataError::InvalidTask("temperature must be positive".into()));
        }
        if !(self.generator_scale >= 0.0 && self.generator_scale.is_finite()) {
            return Err(DataError::InvalidTask("generator_scale must be non-negative".into()));
        }
        let RewardRule::PromptBigram { length_penalty } = self.reward;
        if !length_penalty.is_finite() {
            return Err(DataError::InvalidTask("length_penalty must be finite".into()));
        }
        Ok(())
    }

    pub fn reward(&self, prompt: &TokenSeq, response: &TokenSeq) -> f64 {
        match self.reward {
            RewardRule::PromptBigram { length_penalty } => {
                let hits = match prompt.ids() {
                    [a, b, ..] => response.ids().windows(2).filter(|w| w[0] == *a && w[1] == *b).count(),
                    _ => 0,
                };
                hits as f64 - length_penalty * response.len() as f64
            }
        }
    }

    /// Random bigram generator over this task's vocabulary.
    pub fn generator(&self, rng: &mut impl Rng) -> Result<NGramPolicy> {
        Ok(NGramPolicy::random(self.vocab()?, 2, self.generator_scale, rng)?)
    }
}

/// Winner of one comparison; `true` means the first response is preferred.
pub fn label(labeling: Labeling, r_a: f64, r_b: f64, rng: &mut impl Rng) -> bool {
    match labeling {
        Labeling::Deterministic if r_a != r_b => r_a > r_b,
        Labeling::Deterministic => rng.random_bool(0.5),
        Labeling::Bt => rng.random::<f64>() < sigmoid(r_a - r_b),
    }
}

/// Sample `n_pairs` labeled pairs from the task's seeded data stream.
pub fn generate_dataset(
    task: &GroundTruthTask,
    n_pairs: usize,
    labeling: Labeling,
) -> Result<Vec<PreferencePair>> {
    task.validate()?;
    if n_pairs == 0 {
        return Err(DataError::InvalidTask("n_pairs must be at least 1".into()));
    }
    let vocab = task.vocab()?;
    let content = vocab.content_tokens();
    let mut rng = rng::child(task.seed, rng::DATA_STREAM);
    let generator = task.generator(&mut rng)?;
    let mut out = Vec::with_capacity(n_pairs);
    while out.len() < n_pairs {
        let prompt = generator.sample(&TokenSeq::empty(), task.prompt_len, &content, task.temperature, &mut rng);
        let draw = |rng: &mut rng::Rng| {
            let len = rng.random_range(task.min_response_len..=task.max_response_len);
            generator.sample(&prompt, len, &content, task.temperature, rng)
        };
        let a = draw(&mut rng);
        let mut b = draw(&mut rng);
        while b == a {
            b = draw(&mut rng);
        }
        let (ra, rb) = (task.reward(&prompt, &a), task.reward(&prompt, &b));
        let (chosen, rejected) = if label(labeling, ra, rb, &mut rng) { (a, b) } else { (b, a) };
        out.push(PreferencePair {
            prompt,
            chosen,
            rejected,
            rejected_scores: None,
        });
    }
    Ok(out)
}

/// `s_j = σ(log π_neg(y_j|·) − log π_pos(y_j|·))` over the rejected tokens.
pub fn compute_token_scores(
    pos: &impl Policy,
    neg: &impl Policy,
    pair: &PreferencePair,
) -> Result<Vec<f64>> {
    if pos.vocab() != neg.vocab() {
        return Err(DataError::InvalidTask("score models use different vocabularies".into()));
    }
    let lp = pos.token_logprobs(&pair.prompt, &pair.rejected)?;
    let ln = neg.token_logprobs(&pair.prompt, &pair.rejected)?;
    for got in [lp.len(), ln.len()] {
        if got != pair.rejected.len() {
            return Err(DataError::ScoreLength {
                policy_len: got,
                rejected_len: pair.rejected.len(),
            });
        }
    }
    Ok(lp.iter().zip(&ln).map(|(p, n)| sigmoid(n - p)).collect())
}

/// Count-fitted bigram models on the chosen and rejected sides.
pub fn fit_score_models(
    vocab: Vocab,
    data: &[PreferencePair],
    smoothing: f64,
) -> Result<(NGramPolicy, NGramPolicy)> {
    let chosen: Vec<_> = data.iter().map(|p| (p.prompt.clone(), p.chosen.clone())).collect();
    let rejected: Vec<_> = data.iter().map(|p| (p.prompt.clone(), p.rejected.clone())).collect();
    Ok((
        NGramPolicy::fit_counts(vocab, 2, &chosen, smoothing)?,
        NGramPolicy::fit_counts(vocab, 2, &rejected, smoothing)?,
    ))
}

/// Fill `rejected_scores` of every pair from the two score models.
pub fn attach_scores(data: &mut [PreferencePair], pos: &impl Policy, neg: &impl Policy) -> Result<()> {
    for pair in data.iter_mut() {
        pair.rejected_scores = Some(compute_token_scores(pos, neg, pair)?);
    }
    Ok(())
}

pub fn to_jsonl(data: &[PreferencePair]) -> String {
    let mut s = String::new();
    for pair in data {
        s.push_str(&serde_json::to_string(pair).expect("pair serializes"));
        s.push('\n');
    }
    s
}

pub fn save_jsonl(path: &Path, data: &[PreferencePair]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(to_jsonl(data).as_bytes())?;
    Ok(())
}

/// Parse JSONL text. Blank lines are skipped; line numbers start at 1.
pub fn parse_jsonl(text: &str) -> Result<Vec<PreferencePair>> {
    let mut out = Vec::new();
    for (ix, raw) in text.lines().enumerate() {
        let line = ix + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let pair: PreferencePair = serde_json::from_str(raw).map_err(|e| DataError::Parse {
            line,
            message: e.to_string(),
        })?;
        pair.validate(None)
            .map_err(|message| DataError::Parse { line, message })?;
        out.push(pair);
    }
    Ok(out)
}

pub fn load_jsonl(path: &Path) -> Result<Vec<PreferencePair>> {
    parse_jsonl(&std::fs::read_to_string(path)?)
}

/// Check every pair, including token ids against `vocab`.
pub fn validate_dataset(data: &[PreferencePair], vocab: &Vocab) -> Result<()> {
    for (index, pair) in data.iter().enumerate() {
        pair.validate(Some(vocab))
            .map_err(|reason| DataError::InvalidPair { index, reason })?;
    }
    Ok(())
}

/// Record written next to a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub task: GroundTruthTask,
    pub n_pairs: usize,
    pub labeling: Labeling,
    pub scored: bool,
    pub sha256: String,
}

impl Manifest {
    pub fn new(task: &GroundTruthTask, labeling: Labeling, data: &[PreferencePair]) -> Self {
        Self {
            task: task.clone(),
            n_pairs: data.len(),
            labeling,
            scored: data.iter().any(|p| p.rejected_scores.is_some()),
            sha256: hex::encode(Sha256::digest(to_jsonl(data).as_bytes())),
        }
    }

    /// `<dataset>.manifest.json`.
    pub fn path_for(dataset: &Path) -> std::path::PathBuf {
        let mut name = dataset.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        dataset.with_file_name(name)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        std::fs::write(path, s)?;
        Ok(())
    }
}
