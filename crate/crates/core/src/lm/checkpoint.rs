use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{neural::PARAM_NAMES, Bound, LmError, NGramPolicy, NeuralPolicy, Policy, Result, TokenSeq, Trainable, Vocab};
use crate::autodiff::{Graph, Tensor, Var};

/// Architecture of a model, independent of its weights.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Ngram {
        order: usize,
    },
    Neural {
        context: usize,
        embed_dim: usize,
        hidden_dim: usize,
    },
}

/// Either model family behind one type, for files and the command line.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyPolicy {
    Ngram(NGramPolicy),
    Neural(NeuralPolicy),
}

impl AnyPolicy {
    /// Fresh model. N-gram logits start at zero (uniform rows).
    pub fn init(vocab: Vocab, spec: &ModelSpec, rng: &mut impl Rng) -> Result<Self> {
        Ok(match *spec {
            ModelSpec::Ngram { order } => Self::Ngram(NGramPolicy::uniform(vocab, order)?),
            ModelSpec::Neural {
                context,
                embed_dim,
                hidden_dim,
            } => Self::Neural(NeuralPolicy::init(vocab, context, embed_dim, hidden_dim, rng)?),
        })
    }

    pub fn spec(&self) -> ModelSpec {
        match self {
            Self::Ngram(p) => ModelSpec::Ngram { order: p.order() },
            Self::Neural(p) => ModelSpec::Neural {
                context: p.context(),
                embed_dim: p.embed_dim(),
                hidden_dim: p.hidden_dim(),
            },
        }
    }

    fn param_names(&self) -> Vec<String> {
        match self {
            Self::Ngram(_) => vec!["logits".to_string()],
            Self::Neural(_) => PARAM_NAMES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl Policy for AnyPolicy {
    fn vocab(&self) -> &Vocab {
        match self {
            Self::Ngram(p) => p.vocab(),
            Self::Neural(p) => p.vocab(),
        }
    }

    fn token_logprobs(&self, prompt: &TokenSeq, response: &TokenSeq) -> Result<Vec<f64>> {
        match self {
            Self::Ngram(p) => p.token_logprobs(prompt, response),
            Self::Neural(p) => p.token_logprobs(prompt, response),
        }
    }
}

impl Trainable for AnyPolicy {
    fn params(&self) -> &[Tensor] {
        match self {
            Self::Ngram(p) => p.params(),
            Self::Neural(p) => p.params(),
        }
    }

    fn params_mut(&mut self) -> &mut [Tensor] {
        match self {
            Self::Ngram(p) => p.params_mut(),
            Self::Neural(p) => p.params_mut(),
        }
    }

    fn bind_vars(&self, g: &mut Graph, params: Vec<Var>) -> Result<Bound> {
        match self {
            Self::Ngram(p) => p.bind_vars(g, params),
            Self::Neural(p) => p.bind_vars(g, params),
        }
    }

    fn token_logprobs_node(
        &self,
        g: &mut Graph,
        bound: &Bound,
        prompt: &TokenSeq,
        response: &TokenSeq,
    ) -> Result<Var> {
        match self {
            Self::Ngram(p) => p.token_logprobs_node(g, bound, prompt, response),
            Self::Neural(p) => p.token_logprobs_node(g, bound, prompt, response),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedParam {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// On-disk model: architecture, vocabulary, flattened parameters and the
/// hash of the training configuration that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub model: ModelSpec,
    pub vocab: Vocab,
    pub step: usize,
    pub config_hash: String,
    pub params: Vec<NamedParam>,
}

impl Checkpoint {
    pub fn from_policy(policy: &AnyPolicy, step: usize, config_hash: &str) -> Self {
        let params = policy
            .param_names()
            .into_iter()
            .zip(policy.params())
            .map(|(name, t)| NamedParam {
                name,
                shape: t.shape().to_vec(),
                data: t.data().to_vec(),
            })
            .collect();
        Self {
            model: policy.spec(),
            vocab: *policy.vocab(),
            step,
            config_hash: config_hash.to_string(),
            params,
        }
    }

    pub fn to_policy(&self) -> Result<AnyPolicy> {
        let tensors = self
            .params
            .iter()
            .map(|p| Tensor::new(p.shape.clone(), p.data.clone()).map_err(LmError::from))
            .collect::<Result<Vec<_>>>()?;
        match self.model {
            ModelSpec::Ngram { order } => {
                let [logits]: [Tensor; 1] = tensors.try_into().map_err(|v: Vec<Tensor>| {
                    LmError::InvalidModel(format!("n-gram checkpoint needs 1 parameter, got {}", v.len()))
                })?;
                Ok(AnyPolicy::Ngram(NGramPolicy::from_logits(self.vocab, order, logits)?))
            }
            ModelSpec::Neural {
                context,
                embed_dim,
                hidden_dim,
            } => Ok(AnyPolicy::Neural(NeuralPolicy::from_params(
                self.vocab, context, embed_dim, hidden_dim, tensors,
            )?)),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("checkpoint serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_json())
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn round_trip_is_lossless() {
        let vocab = Vocab::new(7).unwrap();
        let spec = ModelSpec::Neural {
            context: 4,
            embed_dim: 3,
            hidden_dim: 5,
        };
        let p = AnyPolicy::init(vocab, &spec, &mut rng::root(1)).unwrap();
        let ck = Checkpoint::from_policy(&p, 12, "abc");
        let back: Checkpoint = serde_json::from_str(&ck.to_json()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_policy().unwrap(), p);

        let ng = AnyPolicy::Ngram(NGramPolicy::random(vocab, 2, 1.0, &mut rng::root(2)).unwrap());
        let ck = Checkpoint::from_policy(&ng, 0, "");
        assert_eq!(
            serde_json::from_str::<Checkpoint>(&ck.to_json()).unwrap().to_policy().unwrap(),
            ng
        );
    }

    #[test]
    fn spec_json_shape() {
        let s = serde_json::to_string(&ModelSpec::Ngram { order: 2 }).unwrap();
        assert_eq!(s, r#"{"kind":"ngram","order":2}"#);
    }
}
