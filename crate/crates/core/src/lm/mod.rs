//! Tiny autoregressive token models.
//!
//! Two families share the [`Policy`] interface:
//!
//! - [`NGramPolicy`]: a table of logits per `(n-1)`-token context. Closed
//!   form and small enough to enumerate.
//! - [`NeuralPolicy`]: embedding + one tanh hidden layer over a fixed
//!   BOS-filled context window.
//!
//! Both compute log-probabilities through the autodiff graph, so the value
//! seen by an evaluation call is bit-identical to the value the trainer
//! differentiates.

mod checkpoint;
mod neural;
mod ngram;

pub use checkpoint::{AnyPolicy, Checkpoint, ModelSpec, NamedParam};
pub use neural::NeuralPolicy;
pub use ngram::NGramPolicy;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Graph, Tensor, Var};

pub type TokenId = u32;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LmError {
    #[error("token id {token} is outside the vocabulary of size {size}")]
    TokenOutOfVocab { token: TokenId, size: usize },
    #[error("invalid vocabulary: {0}")]
    InvalidVocab(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

pub type Result<T> = std::result::Result<T, LmError>;

/// Token alphabet with three reserved ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Vocab {
    pub size: usize,
    pub pad: TokenId,
    pub bos: TokenId,
    pub eos: TokenId,
}

impl Vocab {
    /// `PAD = 0`, `BOS = 1`, `EOS = 2`; content tokens are `3..size`.
    pub fn new(size: usize) -> Result<Self> {
        Self::with_reserved(size, 0, 1, 2)
    }

    pub fn with_reserved(size: usize, pad: TokenId, bos: TokenId, eos: TokenId) -> Result<Self> {
        let v = Self { size, pad, bos, eos };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        if self.size < 3 {
            return Err(LmError::InvalidVocab(format!(
                "size must be at least 3, got {}",
                self.size
            )));
        }
        let ids = [self.pad, self.bos, self.eos];
        if ids.iter().any(|&t| t as usize >= self.size) {
            return Err(LmError::InvalidVocab(format!(
                "reserved ids {ids:?} must be below size {}",
                self.size
            )));
        }
        if self.pad == self.bos || self.pad == self.eos || self.bos == self.eos {
            return Err(LmError::InvalidVocab(format!("reserved ids {ids:?} must be distinct")));
        }
        Ok(())
    }

    pub fn is_reserved(&self, t: TokenId) -> bool {
        t == self.pad || t == self.bos || t == self.eos
    }

    /// Ordinary (non-reserved) token ids in increasing order.
    pub fn content_tokens(&self) -> Vec<TokenId> {
        (0..self.size as TokenId).filter(|t| !self.is_reserved(*t)).collect()
    }

    pub fn check(&self, seq: &TokenSeq) -> Result<()> {
        match seq.iter().find(|&&t| t as usize >= self.size) {
            Some(&token) => Err(LmError::TokenOutOfVocab {
                token,
                size: self.size,
            }),
            None => Ok(()),
        }
    }
}

/// A finite token sequence. Its length is the token length measure.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSeq(Vec<TokenId>);

impl TokenSeq {
    pub fn new(ids: Vec<TokenId>) -> Self {
        Self(ids)
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, TokenId> {
        self.0.iter()
    }

    /// Right-pad with `token` up to `len` (no-op when already that long).
    pub fn padded(&self, len: usize, token: TokenId) -> Self {
        let mut ids = self.0.clone();
        if ids.len() < len {
            ids.resize(len, token);
        }
        Self(ids)
    }
}

impl From<Vec<TokenId>> for TokenSeq {
    fn from(ids: Vec<TokenId>) -> Self {
        Self(ids)
    }
}

impl<'a> IntoIterator for &'a TokenSeq {
    type Item = &'a TokenId;
    type IntoIter = std::slice::Iter<'a, TokenId>;
    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

/// Autoregressive conditional distribution `π(y_i | y_<i, x)`.
///
/// Only response tokens are scored; the prompt is context.
pub trait Policy {
    fn vocab(&self) -> &Vocab;

    /// `log π(y_i | x, y_<i)` for every response position.
    fn token_logprobs(&self, prompt: &TokenSeq, response: &TokenSeq) -> Result<Vec<f64>>;

    /// Sum of [`Policy::token_logprobs`], accumulated left to right.
    fn seq_logprob(&self, prompt: &TokenSeq, response: &TokenSeq) -> Result<f64> {
        Ok(self.token_logprobs(prompt, response)?.iter().sum())
    }
}

/// Graph nodes for one binding of a model's parameters.
#[derive(Debug, Clone)]
pub struct Bound {
    pub params: Vec<Var>,
    derived: Vec<Var>,
}

/// A policy whose log-probabilities can be built as autodiff nodes.
pub trait Trainable: Policy + Clone {
    fn params(&self) -> &[Tensor];

    fn params_mut(&mut self) -> &mut [Tensor];

    /// Attach already-created leaf nodes (one per parameter, same order).
    fn bind_vars(&self, g: &mut Graph, params: Vec<Var>) -> Result<Bound>;

    /// Per-token log-probabilities of `response` as a rank-1 node.
    fn token_logprobs_node(
        &self,
        g: &mut Graph,
        bound: &Bound,
        prompt: &TokenSeq,
        response: &TokenSeq,
    ) -> Result<Var>;

    /// Push every parameter as a gradient-receiving leaf and bind it.
    fn bind(&self, g: &mut Graph) -> Result<Bound> {
        let vars = self.params().iter().map(|p| g.param(p.clone())).collect();
        self.bind_vars(g, vars)
    }

    /// Same as [`Trainable::bind`] but with constant leaves (no gradients).
    fn bind_frozen(&self, g: &mut Graph) -> Result<Bound> {
        let vars = self.params().iter().map(|p| g.constant(p.clone())).collect();
        self.bind_vars(g, vars)
    }
}

/// Evaluate a trainable model's token log-probs on a throwaway constant graph.
pub(crate) fn eval_token_logprobs<P: Trainable>(
    policy: &P,
    prompt: &TokenSeq,
    response: &TokenSeq,
) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let bound = policy.bind_frozen(&mut g)?;
    let node = policy.token_logprobs_node(&mut g, &bound, prompt, response)?;
    Ok(g.value(node).data().to_vec())
}

/// Reference copy of a policy. Exposes evaluation only.
#[derive(Debug, Clone, PartialEq)]
pub struct Frozen<P>(P);

impl<P> Frozen<P> {
    pub fn inner(&self) -> &P {
        &self.0
    }
}

impl<P: Policy> Policy for Frozen<P> {
    fn vocab(&self) -> &Vocab {
        self.0.vocab()
    }

    fn token_logprobs(&self, prompt: &TokenSeq, response: &TokenSeq) -> Result<Vec<f64>> {
        self.0.token_logprobs(prompt, response)
    }

    fn seq_logprob(&self, prompt: &TokenSeq, response: &TokenSeq) -> Result<f64> {
        self.0.seq_logprob(prompt, response)
    }
}

/// Deep copy that later training of `policy` cannot reach.
pub fn clone_frozen<P: Policy + Clone>(policy: &P) -> Frozen<P> {
    Frozen(policy.clone())
}

/// Context of `width` tokens ending just before response position `i`,
/// left-filled with BOS.
pub(crate) fn context_window(
    bos: TokenId,
    prompt: &TokenSeq,
    response: &TokenSeq,
    i: usize,
    width: usize,
) -> Vec<TokenId> {
    let history = prompt.len() + i;
    let mut out = Vec::with_capacity(width);
    for back in (1..=width).rev() {
        if back > history {
            out.push(bos);
        } else {
            let pos = history - back;
            let t = if pos < prompt.len() {
                prompt.ids()[pos]
            } else {
                response.ids()[pos - prompt.len()]
            };
            out.push(t);
        }
    }
    out
}
