use rand::Rng;

use super::{context_window, eval_token_logprobs, Bound, LmError, Policy, Result, TokenSeq, Trainable, Vocab};
use crate::autodiff::{Graph, Tensor, Var};

const EMBED: usize = 0;
const HIDDEN_W: usize = 1;
const HIDDEN_B: usize = 2;
const OUT_W: usize = 3;
const OUT_B: usize = 4;

/// Windowed context model: `log_softmax(W2 · tanh(W1 · [e(c_1); …; e(c_w)] + b1) + b2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralPolicy {
    vocab: Vocab,
    context: usize,
    embed_dim: usize,
    hidden_dim: usize,
    params: Vec<Tensor>,
}

pub const PARAM_NAMES: [&str; 5] = ["embed", "hidden_w", "hidden_b", "out_w", "out_b"];

impl NeuralPolicy {
    /// Weights and embeddings uniform in `[-0.1, 0.1]`, biases zero.
    pub fn init(
        vocab: Vocab,
        context: usize,
        embed_dim: usize,
        hidden_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut uniform = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.random_range(-0.1..=0.1)).collect()
        };
        let v = vocab.size;
        let embed = Tensor::new(vec![v, embed_dim], uniform(v * embed_dim))?;
        let w1 = Tensor::new(
            vec![context * embed_dim, hidden_dim],
            uniform(context * embed_dim * hidden_dim),
        )?;
        let w2 = Tensor::new(vec![hidden_dim, v], uniform(hidden_dim * v))?;
        let params = vec![
            embed,
            w1,
            Tensor::zeros(&[hidden_dim]),
            w2,
            Tensor::zeros(&[v]),
        ];
        Self::from_params(vocab, context, embed_dim, hidden_dim, params)
    }

    pub fn from_params(
        vocab: Vocab,
        context: usize,
        embed_dim: usize,
        hidden_dim: usize,
        params: Vec<Tensor>,
    ) -> Result<Self> {
        vocab.validate()?;
        if context == 0 || embed_dim == 0 || hidden_dim == 0 {
            return Err(LmError::InvalidModel(
                "context, embed_dim and hidden_dim must be positive".into(),
            ));
        }
        let v = vocab.size;
        let expected: [Vec<usize>; 5] = [
            vec![v, embed_dim],
            vec![context * embed_dim, hidden_dim],
            vec![hidden_dim],
            vec![hidden_dim, v],
            vec![v],
        ];
        if params.len() != expected.len() {
            return Err(LmError::InvalidModel(format!(
                "expected {} parameter arrays, got {}",
                expected.len(),
                params.len()
            )));
        }
        for (i, (p, shape)) in params.iter().zip(&expected).enumerate() {
            if p.shape() != shape.as_slice() {
                return Err(LmError::InvalidModel(format!(
                    "parameter {} has shape {:?}, expected {shape:?}",
                    PARAM_NAMES[i],
                    p.shape()
                )));
            }
        }
        Ok(Self {
            vocab,
            context,
            embed_dim,
            hidden_dim,
            params,
        })
    }

    pub fn context(&self) -> usize {
        self.context
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }
}

impl Policy for NeuralPolicy {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn token_logprobs(&self, prompt: &TokenSeq, response: &TokenSeq) -> Result<Vec<f64>> {
        eval_token_logprobs(self, prompt, response)
    }
}

impl Trainable for NeuralPolicy {
    fn params(&self) -> &[Tensor] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    fn bind_vars(&self, _g: &mut Graph, params: Vec<Var>) -> Result<Bound> {
        Ok(Bound {
            params,
            derived: Vec::new(),
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
        let t = response.len();
        let mut window_ids = Vec::with_capacity(t * self.context);
        for i in 0..t {
            let w = context_window(self.vocab.bos, prompt, response, i, self.context);
            window_ids.extend(w.into_iter().map(|id| id as usize));
        }
        let p = &bound.params;
        let emb = g.embed_lookup(p[EMBED], &window_ids)?;
        let x = g.reshape(emb, &[t, self.context * self.embed_dim])?;
        let h = g.matmul(x, p[HIDDEN_W])?;
        let h = g.add_bias(h, p[HIDDEN_B])?;
        let h = g.tanh(h);
        let logits = g.matmul(h, p[OUT_W])?;
        let logits = g.add_bias(logits, p[OUT_B])?;
        let logp = g.log_softmax(logits, 1)?;
        let targets: Vec<usize> = response.iter().map(|&id| id as usize).collect();
        Ok(g.gather(logp, &targets)?)
    }
}
