use rand::Rng;
use rand_distr::StandardNormal;

use super::{
    context_window, eval_token_logprobs, Bound, LmError, Policy, Result, TokenId, TokenSeq,
    Trainable, Vocab,
};
use crate::autodiff::{Graph, Tensor, Var};

/// Tabular n-gram model: one row of logits per `(n-1)`-token context.
///
/// Contexts are indexed as base-`|V|` numbers with the oldest token most
/// significant. Rows are normalized with log-softmax, so every conditional
/// is strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramPolicy {
    vocab: Vocab,
    order: usize,
    logits: [Tensor; 1],
}

impl NGramPolicy {
    pub fn from_logits(vocab: Vocab, order: usize, logits: Tensor) -> Result<Self> {
        vocab.validate()?;
        if order == 0 {
            return Err(LmError::InvalidModel("n-gram order must be at least 1".into()));
        }
        let rows = vocab.size.pow(order as u32 - 1);
        if logits.shape() != [rows, vocab.size] {
            return Err(LmError::InvalidModel(format!(
                "expected logits of shape [{rows}, {}], got {:?}",
                vocab.size,
                logits.shape()
            )));
        }
        if logits.data().iter().any(|v| !v.is_finite()) {
            return Err(LmError::InvalidModel("logits must be finite".into()));
        }
        Ok(Self {
            vocab,
            order,
            logits: [logits],
        })
    }

    pub fn uniform(vocab: Vocab, order: usize) -> Result<Self> {
        let rows = vocab.size.pow(order.saturating_sub(1) as u32);
        Self::from_logits(vocab, order, Tensor::zeros(&[rows, vocab.size]))
    }

    /// Logits drawn i.i.d. from `N(0, scale²)`.
    pub fn random(vocab: Vocab, order: usize, scale: f64, rng: &mut impl Rng) -> Result<Self> {
        let rows = vocab.size.pow(order.saturating_sub(1) as u32);
        let data = (0..rows * vocab.size)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self::from_logits(vocab, order, Tensor::new(vec![rows, vocab.size], data)?)
    }

    /// Build from explicit probability rows (each must be positive).
    pub fn from_probs(vocab: Vocab, order: usize, rows: &[Vec<f64>]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * vocab.size);
        for row in rows {
            if row.len() != vocab.size || row.iter().any(|p| !(*p > 0.0)) {
                return Err(LmError::InvalidModel(
                    "probability rows must have one positive entry per token".into(),
                ));
            }
            data.extend(row.iter().map(|p| p.ln()));
        }
        Self::from_logits(vocab, order, Tensor::new(vec![rows.len(), vocab.size], data)?)
    }

    /// Maximum-likelihood fit from counts with additive smoothing.
    pub fn fit_counts(
        vocab: Vocab,
        order: usize,
        data: &[(TokenSeq, TokenSeq)],
        smoothing: f64,
    ) -> Result<Self> {
        if !(smoothing > 0.0) {
            return Err(LmError::InvalidModel("smoothing must be positive".into()));
        }
        let rows = vocab.size.pow(order.saturating_sub(1) as u32);
        let mut counts = vec![smoothing; rows * vocab.size];
        let probe = Self::uniform(vocab, order)?;
        for (prompt, response) in data {
            vocab.check(prompt)?;
            vocab.check(response)?;
            for (i, &t) in response.iter().enumerate() {
                let ctx = probe.context_index(prompt, response, i);
                counts[ctx * vocab.size + t as usize] += 1.0;
            }
        }
        let probs: Vec<Vec<f64>> = counts
            .chunks(vocab.size)
            .map(|row| {
                let total: f64 = row.iter().sum();
                row.iter().map(|c| c / total).collect()
            })
            .collect();
        Self::from_probs(vocab, order, &probs)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn logits(&self) -> &Tensor {
        &self.logits[0]
    }

    pub fn num_contexts(&self) -> usize {
        self.logits[0].shape()[0]
    }

    pub(crate) fn context_index(&self, prompt: &TokenSeq, response: &TokenSeq, i: usize) -> usize {
        context_window(self.vocab.bos, prompt, response, i, self.order - 1)
            .iter()
            .fold(0usize, |acc, &t| acc * self.vocab.size + t as usize)
    }

    /// Normalized log-probability row for a context given by its index.
    pub fn row_logprobs(&self, context: usize) -> Vec<f64> {
        let v = self.vocab.size;
        let row = &self.logits[0].data()[context * v..(context + 1) * v];
        let lse = crate::autodiff::log_sum_exp(row);
        row.iter().map(|x| x - lse).collect()
    }

    /// Sample a continuation of `prompt` of exactly `len` tokens, drawing only
    /// from `allowed` with logits divided by `temperature`.
    pub fn sample(
        &self,
        prompt: &TokenSeq,
        len: usize,
        allowed: &[TokenId],
        temperature: f64,
        rng: &mut impl Rng,
    ) -> TokenSeq {
        let mut out = TokenSeq::empty();
        for i in 0..len {
            let ctx = self.context_index(prompt, &out, i);
            let row = self.row_logprobs(ctx);
            let scaled: Vec<f64> = allowed.iter().map(|&t| row[t as usize] / temperature).collect();
            let lse = crate::autodiff::log_sum_exp(&scaled);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = *allowed.last().expect("non-empty allowed set");
            for (k, &t) in allowed.iter().enumerate() {
                acc += (scaled[k] - lse).exp();
                if u < acc {
                    pick = t;
                    break;
                }
            }
            out.0.push(pick);
        }
        out
    }
}

impl Policy for NGramPolicy {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn token_logprobs(&self, prompt: &TokenSeq, response: &TokenSeq) -> Result<Vec<f64>> {
        eval_token_logprobs(self, prompt, response)
    }
}

impl Trainable for NGramPolicy {
    fn params(&self) -> &[Tensor] {
        &self.logits
    }

    fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.logits
    }

    fn bind_vars(&self, g: &mut Graph, params: Vec<Var>) -> Result<Bound> {
        let table = params[0];
        let normalized = g.log_softmax(table, 1)?;
        let flat = g.reshape(normalized, &[self.num_contexts() * self.vocab.size])?;
        Ok(Bound {
            params,
            derived: vec![flat],
        })
    }

    fn token_logprobs_node(
        &self,
        g: &mut Graph,
        bound: &Bound,
        prompt: &TokenSeq,
        response: &TokenSeq,
    ) -> Result<Var> {
        self.vocab.check(prompt)?;
        self.vocab.check(response)?;
        let v = self.vocab.size;
        let flat_ix: Vec<usize> = response
            .iter()
            .enumerate()
            .map(|(i, &t)| self.context_index(prompt, response, i) * v + t as usize)
            .collect();
        Ok(g.gather(bound.derived[0], &flat_ix)?)
    }
}
