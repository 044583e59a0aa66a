//! Optimization loop and diagnostics.
//!
//! A run freezes a copy of the initial policy as the reference, then takes
//! `steps` optimizer updates on mini-batches drawn from one seeded
//! permutation per epoch (the last, partial batch of an epoch is kept).
//! Every `eval_every` updates the whole dataset is evaluated into a
//! [`LogRow`]. All reductions run in a fixed order, so two runs with the same
//! inputs produce bit-identical logs and checkpoints.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Graph, Tensor, Var};
use crate::data::PreferencePair;
use crate::lm::{clone_frozen, AnyPolicy, Checkpoint, Frozen, LmError, Policy, TokenSeq, Trainable};
use crate::losses::{dpo_logit, implicit_rewards, preference_loss, LogRatioBatch, LossConfig, LossError, PairLogRatios};
use crate::rng;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("non-finite loss at step {step}; offending pairs {pairs:?}")]
    NonFinite { step: usize, pairs: Vec<usize> },
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Autodiff(#[from] crate::autodiff::AutodiffError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub eval_every: usize,
    /// Explicit checkpoint interval. `None` keeps steps at 10%, 50% and 100%
    /// of the budget.
    pub checkpoint_every: Option<usize>,
    /// Score the reference once up front instead of every step.
    pub cache_reference: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::Adam,
            lr: 1e-2,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            steps: 2000,
            batch_size: 32,
            seed: 0,
            eval_every: 10,
            checkpoint_every: None,
            cache_reference: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be finite and non-negative");
        }
        if self.steps == 0 {
            return bad("steps must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1");
        }
        if self.checkpoint_every == Some(0) {
            return bad("checkpoint_every must be at least 1");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive");
        }
        Ok(())
    }

    /// Steps after which a checkpoint is kept, ascending and unique.
    pub fn checkpoint_steps(&self) -> Vec<usize> {
        let mut out: Vec<usize> = match self.checkpoint_every {
            Some(every) => (every..=self.steps).step_by(every).collect(),
            None => [10, 50, 100]
                .iter()
                .map(|pct| (self.steps * pct).div_ceil(100).max(1))
                .collect(),
        };
        out.push(self.steps);
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Parameter update rule with its running state.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd { lr: f64 },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        t: i32,
        m: Vec<Vec<f64>>,
        v: Vec<Vec<f64>>,
    },
}

impl Optimizer {
    pub fn new(cfg: &TrainConfig, params: &[Tensor]) -> Self {
        match cfg.optimizer {
            OptimizerKind::Sgd => Self::Sgd { lr: cfg.lr },
            OptimizerKind::Adam => Self::Adam {
                lr: cfg.lr,
                beta1: cfg.adam_beta1,
                beta2: cfg.adam_beta2,
                eps: cfg.adam_eps,
                t: 0,
                m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
                v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            },
        }
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) {
        match self {
            Self::Sgd { lr } => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (x, d) in p.data_mut().iter_mut().zip(g.data()) {
                        *x -= *lr * d;
                    }
                }
            }
            Self::Adam {
                lr,
                beta1,
                beta2,
                eps,
                t,
                m,
                v,
            } => {
                *t += 1;
                let c1 = 1.0 - beta1.powi(*t);
                let c2 = 1.0 - beta2.powi(*t);
                for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    for (j, (x, d)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                        m[k][j] = *beta1 * m[k][j] + (1.0 - *beta1) * d;
                        v[k][j] = *beta2 * v[k][j] + (1.0 - *beta2) * d * d;
                        let mh = m[k][j] / c1;
                        let vh = v[k][j] / c2;
                        *x -= *lr * mh / (vh.sqrt() + *eps);
                    }
                }
            }
        }
    }
}

/// One logged evaluation over a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub loss: f64,
    pub chosen_logp: f64,
    pub rejected_logp: f64,
    /// Mean of `β (S^w_total − S^l_total)`.
    pub margin: f64,
    /// Fraction of pairs with positive margin; exact ties count one half.
    pub accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub const HEADER: &'static str = "step,loss,chosen_logp,rejected_logp,margin,accuracy";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::HEADER);
        s.push('\n');
        for r in &self.rows {
            writeln!(
                s,
                "{},{},{},{},{},{}",
                r.step, r.loss, r.chosen_logp, r.rejected_logp, r.margin, r.accuracy
            )
            .expect("write to string");
        }
        s
    }

    pub fn last(&self) -> Option<&LogRow> {
        self.rows.last()
    }
}

/// Sequences as scored by the model: padded with EOS onto the static grid
/// when padding must be scored, unchanged otherwise.
fn scored_sides(pair: &PreferencePair, loss: &LossConfig, eos: u32) -> (TokenSeq, TokenSeq) {
    if loss.scores_padding() {
        let t = pair.chosen.len().max(pair.rejected.len());
        (pair.chosen.padded(t, eos), pair.rejected.padded(t, eos))
    } else {
        (pair.chosen.clone(), pair.rejected.clone())
    }
}

/// Reference token log-probabilities of one pair on the scored grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RefScores {
    pub chosen: Vec<f64>,
    pub rejected: Vec<f64>,
}

fn reference_scores<P: Policy>(
    reference: &P,
    pair: &PreferencePair,
    loss: &LossConfig,
) -> Result<RefScores> {
    let (w, l) = scored_sides(pair, loss, reference.vocab().eos);
    Ok(RefScores {
        chosen: reference.token_logprobs(&pair.prompt, &w)?,
        rejected: reference.token_logprobs(&pair.prompt, &l)?,
    })
}

/// Score a frozen reference on every pair once.
pub fn score_reference<R: Policy>(
    reference: &R,
    data: &[PreferencePair],
    loss: &LossConfig,
) -> Result<Vec<RefScores>> {
    data.iter().map(|p| reference_scores(reference, p, loss)).collect()
}

/// Per-token log-ratios of one pair on the scored grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PairEval {
    pub chosen_logp: f64,
    pub rejected_logp: f64,
    pub chosen_ratio: Vec<f64>,
    pub rejected_ratio: Vec<f64>,
    /// `β (Δ log π^w − Δ log π^l)` from whole-sequence sums.
    pub seq_margin: f64,
}

fn eval_pair<P: Policy>(
    policy: &P,
    rf: &RefScores,
    pair: &PreferencePair,
    loss: &LossConfig,
) -> Result<PairEval> {
    let (w, l) = scored_sides(pair, loss, policy.vocab().eos);
    let pw = policy.token_logprobs(&pair.prompt, &w)?;
    let pl = policy.token_logprobs(&pair.prompt, &l)?;
    let ratio = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<f64>>();
    let (nw, nl) = (pair.chosen.len(), pair.rejected.len());
    let total = |xs: &[f64]| xs.iter().sum::<f64>();
    let chosen_logp = total(&pw[..nw]);
    let rejected_logp = total(&pl[..nl]);
    let seq_margin = loss.beta
        * ((chosen_logp - total(&rf.chosen[..nw])) - (rejected_logp - total(&rf.rejected[..nl])));
    Ok(PairEval {
        chosen_logp,
        rejected_logp,
        chosen_ratio: ratio(&pw, &rf.chosen),
        rejected_ratio: ratio(&pl, &rf.rejected),
        seq_margin,
    })
}

/// Evaluation of `policy` against `reference` on every pair of `data`.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub row: LogRow,
    pub pairs: Vec<PairEval>,
    /// Largest `|Σ_i (r_i^w − r_i^l) − β (Δ log π^w − Δ log π^l)|`, with the
    /// right side taken from whole-sequence log-probability sums.
    pub max_margin_residual: f64,
}

pub fn eval_pairs<P: Policy, R: Policy>(
    policy: &P,
    reference: &R,
    data: &[PreferencePair],
    loss: &LossConfig,
) -> Result<Evaluation> {
    loss.validate()?;
    let refs = score_reference(reference, data, loss)?;
    eval_against(policy, &refs, data, loss)
}

/// [`eval_pairs`] with reference scores from [`score_reference`].
pub fn eval_against<P: Policy>(
    policy: &P,
    refs: &[RefScores],
    data: &[PreferencePair],
    loss: &LossConfig,
) -> Result<Evaluation> {
    loss.validate()?;
    let mut pairs = Vec::with_capacity(data.len());
    let mut sums = [0.0f64; 3];
    let mut correct = 0.0;
    let mut max_margin_residual: f64 = 0.0;
    for (pair, rf) in data.iter().zip(refs) {
        let e = eval_pair(policy, rf, pair, loss)?;
        let rw = &e.chosen_ratio[..pair.chosen.len()];
        let rl = &e.rejected_ratio[..pair.rejected.len()];
        let margin = dpo_logit(rw, rl, loss.beta);
        let rewards = implicit_rewards(rw, rl, loss.beta);
        max_margin_residual = max_margin_residual.max((rewards.total_margin() - e.seq_margin).abs());
        sums[0] += e.chosen_logp;
        sums[1] += e.rejected_logp;
        sums[2] += margin;
        correct += if margin > 0.0 {
            1.0
        } else if margin == 0.0 {
            0.5
        } else {
            0.0
        };
        pairs.push(e);
    }
    let n = data.len().max(1) as f64;
    let loss_value = if data.is_empty() {
        0.0
    } else {
        let mut g = Graph::new();
        let ratios: Vec<(Vec<f64>, Vec<f64>)> =
            pairs.iter().map(|e| (e.chosen_ratio.clone(), e.rejected_ratio.clone())).collect();
        let scores: Option<Vec<Vec<f64>>> = loss
            .weighted
            .then(|| data.iter().map(|p| p.rejected_scores.clone().unwrap_or_default()).collect());
        let batch = LogRatioBatch::constants(&mut g, &ratios, scores.as_deref(), loss.beta);
        let lens: Vec<(usize, usize)> = data.iter().map(|p| (p.chosen.len(), p.rejected.len())).collect();
        let out = preference_loss(&mut g, &batch, loss, &lens)?;
        g.value(out).item()
    };
    Ok(Evaluation {
        row: LogRow {
            step: 0,
            loss: loss_value,
            chosen_logp: sums[0] / n,
            rejected_logp: sums[1] / n,
            margin: sums[2] / n,
            accuracy: correct / n,
        },
        pairs,
        max_margin_residual,
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: AnyPolicy,
    pub reference: Frozen<AnyPolicy>,
    pub log: TrainLog,
    pub checkpoints: Vec<Checkpoint>,
    /// Largest margin-decomposition residual seen across all evaluations.
    pub max_margin_residual: f64,
}

/// Mini-batch order: one seeded permutation per epoch, partial batches kept.
#[derive(Debug)]
pub struct BatchSchedule {
    n: usize,
    batch_size: usize,
    order: Vec<usize>,
    cursor: usize,
    rng: rng::Rng,
}

impl BatchSchedule {
    pub fn new(n: usize, batch_size: usize, seed: u64) -> Self {
        Self {
            n,
            batch_size,
            order: Vec::new(),
            cursor: 0,
            rng: rng::child(seed, rng::SHUFFLE_STREAM),
        }
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.cursor >= self.order.len() {
            self.order = (0..self.n).collect();
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let out = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        out
    }
}

fn batch_loss(
    g: &mut Graph,
    policy: &AnyPolicy,
    data: &[PreferencePair],
    ids: &[usize],
    refs: &[RefScores],
    loss: &LossConfig,
) -> Result<(Var, Vec<Var>)> {
    let bound = policy.bind(g)?;
    let eos = policy.vocab().eos;
    let mut pairs = Vec::with_capacity(ids.len());
    let mut lens = Vec::with_capacity(ids.len());
    for (k, &i) in ids.iter().enumerate() {
        let pair = &data[i];
        let (w, l) = scored_sides(pair, loss, eos);
        let lw = policy.token_logprobs_node(g, &bound, &pair.prompt, &w)?;
        let ll = policy.token_logprobs_node(g, &bound, &pair.prompt, &l)?;
        let rw = g.constant(Tensor::vector(refs[k].chosen.clone()));
        let rl = g.constant(Tensor::vector(refs[k].rejected.clone()));
        pairs.push(PairLogRatios {
            chosen: g.sub(lw, rw)?,
            rejected: g.sub(ll, rl)?,
            rejected_scores: pair.rejected_scores.clone(),
        });
        lens.push((pair.chosen.len(), pair.rejected.len()));
    }
    let batch = LogRatioBatch {
        pairs,
        beta: loss.beta,
    };
    let out = preference_loss(g, &batch, loss, &lens)?;
    Ok((out, bound.params))
}

/// Train `policy` on `data`.
///
/// `config_hash` is stored in every checkpoint.
pub fn train(
    data: &[PreferencePair],
    policy: AnyPolicy,
    loss: &LossConfig,
    cfg: &TrainConfig,
    config_hash: &str,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    loss.validate()?;
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if loss.weighted {
        if let Some(i) = data.iter().position(|p| p.rejected_scores.is_none()) {
            return Err(LossError::MissingScores { pair: i }.into());
        }
    }
    let reference = clone_frozen(&policy);
    let mut policy = policy;
    // Evaluation always reuses one scoring of the frozen reference; the
    // training loss does so only when asked.
    let eval_refs = score_reference(&reference, data, loss)?;
    let cached = cfg.cache_reference.then_some(&eval_refs);
    let mut opt = Optimizer::new(cfg, policy.params());
    let mut schedule = BatchSchedule::new(data.len(), cfg.batch_size, cfg.seed);
    let checkpoint_steps = cfg.checkpoint_steps();
    let mut log = TrainLog::default();
    let mut checkpoints = Vec::new();
    let mut max_margin_residual: f64 = 0.0;

    let mut record = |step: usize, policy: &AnyPolicy, log: &mut TrainLog| -> Result<()> {
        let ev = eval_against(policy, &eval_refs, data, loss)?;
        max_margin_residual = max_margin_residual.max(ev.max_margin_residual);
        log.rows.push(LogRow { step, ..ev.row });
        Ok(())
    };
    record(0, &policy, &mut log)?;

    for step in 1..=cfg.steps {
        let ids = schedule.next_batch();
        let refs: Vec<RefScores> = match &cached {
            Some(c) => ids.iter().map(|&i| c[i].clone()).collect(),
            None => ids
                .iter()
                .map(|&i| reference_scores(&reference, &data[i], loss))
                .collect::<Result<_>>()?,
        };
        let mut g = Graph::new();
        let (out, params) = batch_loss(&mut g, &policy, data, &ids, &refs, loss)?;
        let value = g.value(out).item();
        if !value.is_finite() {
            return Err(TrainError::NonFinite {
                step,
                pairs: non_finite_pairs(&policy, &eval_refs, data, &ids, loss),
            });
        }
        g.backward(out)?;
        let grads: Vec<Tensor> = params.iter().map(|&p| g.grad(p).clone()).collect();
        opt.step(policy.params_mut(), &grads);

        if step % cfg.eval_every == 0 || step == cfg.steps {
            record(step, &policy, &mut log)?;
        }
        if checkpoint_steps.binary_search(&step).is_ok() {
            checkpoints.push(Checkpoint::from_policy(&policy, step, config_hash));
        }
    }
    Ok(TrainOutcome {
        policy,
        reference,
        log,
        checkpoints,
        max_margin_residual,
    })
}

/// Pairs of a batch whose log-ratios are not finite (all of them when the
/// culprit cannot be narrowed down).
fn non_finite_pairs(
    policy: &AnyPolicy,
    refs: &[RefScores],
    data: &[PreferencePair],
    ids: &[usize],
    loss: &LossConfig,
) -> Vec<usize> {
    let bad: Vec<usize> = ids
        .iter()
        .copied()
        .filter(|&i| match eval_pair(policy, &refs[i], &data[i], loss) {
            Ok(e) => e.chosen_ratio.iter().chain(&e.rejected_ratio).any(|v| !v.is_finite()),
            Err(_) => true,
        })
        .collect();
    if bad.is_empty() {
        ids.to_vec()
    } else {
        bad
    }
}

/// One bin of a [`ProfileRow`] series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub checkpoint: String,
    pub bin_lo: f64,
    pub bin_hi: f64,
    /// Population variance of all implicit rewards in the bin; `None` when
    /// the bin holds no positions.
    pub variance: Option<f64>,
    /// Mean over pairs of the bin's chosen minus rejected reward mass.
    pub margin: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PrefixRewardProfile {
    pub rows: Vec<ProfileRow>,
}

impl PrefixRewardProfile {
    pub const HEADER: &'static str = "checkpoint,bin_lo,bin_hi,variance,margin";

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut s = String::from(Self::HEADER);
        s.push('\n');
        for r in &self.rows {
            writeln!(
                s,
                "{},{},{},{},{}",
                r.checkpoint,
                r.bin_lo,
                r.bin_hi,
                opt(r.variance),
                opt(r.margin)
            )
            .expect("write to string");
        }
        s
    }
}

/// Bin of 1-based position `i` in a sequence of length `len`: the bin whose
/// half-open interval `((b)/bins, (b+1)/bins]` contains `i / len`.
pub fn position_bin(i: usize, len: usize, bins: usize) -> usize {
    (i * bins).div_ceil(len) - 1
}

/// Implicit-reward variance and margin per normalized-position bin, for
/// each named checkpoint policy.
pub fn prefix_reward_profile<P: Policy, R: Policy>(
    checkpoints: &[(String, P)],
    reference: &R,
    data: &[PreferencePair],
    beta: f64,
    bins: usize,
) -> Result<PrefixRewardProfile> {
    if checkpoints.is_empty() {
        return Err(TrainError::InvalidConfig("need at least one checkpoint".into()));
    }
    if bins == 0 {
        return Err(TrainError::InvalidConfig("bins must be at least 1".into()));
    }
    let loss = LossConfig::dpo(beta);
    loss.validate()?;
    let mut rows = Vec::with_capacity(checkpoints.len() * bins);
    let n = data.len() as f64;
    let refs = score_reference(reference, data, &loss)?;
    for (name, policy) in checkpoints {
        let mut count = vec![0usize; bins];
        let mut sum = vec![0.0f64; bins];
        let mut sum_sq = vec![0.0f64; bins];
        let mut margin = vec![0.0f64; bins];
        for (pair, rf) in data.iter().zip(&refs) {
            let e = eval_pair(policy, rf, pair, &loss)?;
            let r = implicit_rewards(&e.chosen_ratio, &e.rejected_ratio, beta);
            for (side, sign) in [(&r.chosen, 1.0), (&r.rejected, -1.0)] {
                let len = side.len();
                for (ix, &v) in side.iter().enumerate() {
                    let b = position_bin(ix + 1, len, bins);
                    count[b] += 1;
                    sum[b] += v;
                    sum_sq[b] += v * v;
                    margin[b] += sign * v;
                }
            }
        }
        for b in 0..bins {
            let (variance, m) = if count[b] == 0 {
                (None, None)
            } else {
                let c = count[b] as f64;
                let mean = sum[b] / c;
                let var = (sum_sq[b] / c - mean * mean).max(0.0);
                (Some(var), Some(margin[b] / n))
            };
            rows.push(ProfileRow {
                checkpoint: name.clone(),
                bin_lo: b as f64 / bins as f64,
                bin_hi: (b + 1) as f64 / bins as f64,
                variance,
                margin: m,
            });
        }
    }
    Ok(PrefixRewardProfile { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, GroundTruthTask, Labeling};
    use crate::lm::{ModelSpec, Vocab};
    use crate::composition::Family;

    fn small_data() -> Vec<PreferencePair> {
        let task = GroundTruthTask {
            max_response_len: 8,
            ..GroundTruthTask::default()
        };
        generate_dataset(&task, 24, Labeling::Deterministic).unwrap()
    }

    fn ngram() -> AnyPolicy {
        AnyPolicy::init(Vocab::new(12).unwrap(), &ModelSpec::Ngram { order: 2 }, &mut rng::root(0)).unwrap()
    }

    fn neural() -> AnyPolicy {
        let spec = ModelSpec::Neural {
            context: 4,
            embed_dim: 4,
            hidden_dim: 8,
        };
        AnyPolicy::init(Vocab::new(12).unwrap(), &spec, &mut rng::root(0)).unwrap()
    }

    fn quick(steps: usize) -> TrainConfig {
        TrainConfig {
            steps,
            batch_size: 8,
            eval_every: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn schedule_covers_each_epoch() {
        let mut s = BatchSchedule::new(10, 4, 1);
        let mut epoch: Vec<usize> = (0..3).flat_map(|_| s.next_batch()).collect();
        epoch.sort_unstable();
        assert_eq!(epoch, (0..10).collect::<Vec<_>>());
        assert_eq!(s.next_batch().len(), 4);
    }

    #[test]
    fn checkpoint_defaults() {
        let cfg = TrainConfig {
            steps: 2000,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.checkpoint_steps(), vec![200, 1000, 2000]);
        let cfg = TrainConfig {
            steps: 7,
            checkpoint_every: Some(3),
            ..TrainConfig::default()
        };
        assert_eq!(cfg.checkpoint_steps(), vec![3, 6, 7]);
    }

    #[test]
    fn position_bins() {
        assert_eq!(position_bin(1, 4, 20), 4);
        assert_eq!(position_bin(4, 4, 20), 19);
        assert_eq!(position_bin(1, 1, 20), 19);
        assert_eq!(position_bin(3, 7, 1), 0);
    }

    #[test]
    fn eval_at_reference() {
        let data = small_data();
        let p = neural();
        let reference = clone_frozen(&p);
        let cfg = LossConfig::adpo(Family::TOKEN, 0.5);
        let ev = eval_pairs(&p, &reference, &data, &cfg).unwrap();
        assert_eq!(ev.row.margin, 0.0);
        assert_eq!(ev.row.accuracy, 0.5);
        // T' = max length per pair under token-level segmentation
        let expected: f64 = data
            .iter()
            .map(|d| d.chosen.len().max(d.rejected.len()) as f64 * std::f64::consts::LN_2)
            .sum::<f64>()
            / data.len() as f64;
        assert!((ev.row.loss - expected).abs() < 1e-12);
        let mean_chosen: f64 =
            data.iter().map(|d| p.seq_logprob(&d.prompt, &d.chosen).unwrap()).sum::<f64>() / data.len() as f64;
        assert!((ev.row.chosen_logp - mean_chosen).abs() < 1e-12);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let data = small_data();
        let cfg = quick(12);
        let loss = LossConfig::adpo(Family::TOKEN, 0.5);
        let a = train(&data, neural(), &loss, &cfg, "h").unwrap();
        let b = train(&data, neural(), &loss, &cfg, "h").unwrap();
        assert_eq!(a.log.to_csv(), b.log.to_csv());
        assert_eq!(a.checkpoints, b.checkpoints);
        assert_eq!(a.log.rows.iter().map(|r| r.step).collect::<Vec<_>>(), vec![0, 5, 10, 12]);
    }

    #[test]
    fn zero_lr_keeps_loss() {
        let data = small_data();
        let cfg = TrainConfig {
            lr: 0.0,
            optimizer: OptimizerKind::Sgd,
            ..quick(10)
        };
        let out = train(&data, ngram(), &LossConfig::dpo(0.5), &cfg, "").unwrap();
        let first = out.log.rows[0].loss;
        assert!(out.log.rows.iter().all(|r| r.loss == first));
    }

    #[test]
    fn reference_is_untouched_and_cache_agrees() {
        let data = small_data();
        let loss = LossConfig::adpo(Family::Static { k: 2 }, 0.5);
        let init = ngram();
        let before: Vec<f64> = data.iter().map(|d| init.seq_logprob(&d.prompt, &d.chosen).unwrap()).collect();
        let cfg = TrainConfig {
            optimizer: OptimizerKind::Sgd,
            lr: 0.5,
            ..quick(15)
        };
        let plain = train(&data, init.clone(), &loss, &cfg, "").unwrap();
        let after: Vec<f64> = data
            .iter()
            .map(|d| plain.reference.seq_logprob(&d.prompt, &d.chosen).unwrap())
            .collect();
        assert_eq!(before, after);
        let cached = train(&data, init, &loss, &TrainConfig { cache_reference: true, ..cfg }, "").unwrap();
        assert_eq!(plain.log, cached.log);
        let last = plain.log.last().unwrap();
        assert!(last.loss < plain.log.rows[0].loss);
        assert!(plain.max_margin_residual < 1e-9);
    }

    #[test]
    fn profile_at_reference_is_zero() {
        let data = small_data();
        let p = neural();
        let reference = clone_frozen(&p);
        let prof = prefix_reward_profile(&[("init".to_string(), p)], &reference, &data, 0.5, 20).unwrap();
        assert_eq!(prof.rows.len(), 20);
        for r in &prof.rows {
            assert!(r.variance.is_none_or(|v| v == 0.0));
            assert!(r.margin.is_none_or(|v| v == 0.0));
        }
        assert!(prof.to_csv().starts_with("checkpoint,bin_lo,bin_hi,variance,margin\n"));
    }

    #[test]
    fn profile_margins_sum_to_mean_logit() {
        let data = small_data();
        let init = neural();
        let reference = clone_frozen(&init);
        let trained = train(&data, init, &LossConfig::dpo(0.5), &quick(10), "").unwrap().policy;
        let single = prefix_reward_profile(&[("t".to_string(), trained.clone())], &reference, &data, 0.5, 1).unwrap();
        let binned = prefix_reward_profile(&[("t".to_string(), trained.clone())], &reference, &data, 0.5, 7).unwrap();
        let direct = eval_pairs(&trained, &reference, &data, &LossConfig::dpo(0.5)).unwrap();
        let total: f64 = binned.rows.iter().filter_map(|r| r.margin).sum();
        assert!((total - direct.row.margin).abs() < 1e-9);
        assert!((single.rows[0].margin.unwrap() - direct.row.margin).abs() < 1e-9);
        // single bin: population variance over every position directly
        let mut all = Vec::new();
        for e in &direct.pairs {
            all.extend(e.chosen_ratio.iter().map(|x| 0.5 * x));
            all.extend(e.rejected_ratio.iter().map(|x| 0.5 * x));
        }
        let mean = all.iter().sum::<f64>() / all.len() as f64;
        let var = all.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / all.len() as f64;
        assert!((single.rows[0].variance.unwrap() - var).abs() < 1e-12);
    }

    #[test]
    fn weighted_needs_scores() {
        let data = small_data();
        let err = train(&data, ngram(), &LossConfig::cadpo(Family::TOKEN, 0.5), &quick(2), "").unwrap_err();
        assert!(matches!(err, TrainError::Loss(LossError::MissingScores { pair: 0 })));
    }

    #[test]
    fn invalid_configs() {
        assert!(TrainConfig { steps: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { lr: f64::NAN, ..TrainConfig::default() }.validate().is_err());
        assert!(matches!(
            train(&[], ngram(), &LossConfig::dpo(0.5), &quick(2), ""),
            Err(TrainError::EmptyDataset)
        ));
    }
}
