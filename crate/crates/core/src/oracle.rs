//! Exact checks of the token-level Boltzmann identities on enumerable spaces.
//!
//! An [`EnumSpace`] has `v` content tokens `0..v` and maximum length `L`.
//! In the default variable-length form an extra terminator `EOS = v` may be
//! emitted at any depth below `L`; a sequence that reaches `L` content
//! tokens stops there. So
//!
//! ```text
//! Y  = { c·EOS : c ∈ [v]^t, t < L } ∪ [v]^L,     |Y| = Σ_{t=0..L} v^t
//! ```
//!
//! and the chain rule over `Y` is exactly normalized. In the fixed-length form
//! `Y = [v]^L` and there is no EOS.
//!
//! Everything here is plain `f64` arithmetic over `BTreeMap`s keyed by token
//! prefixes, so results are independent of hash order.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::log_sum_exp;
use crate::rng;

pub const MAX_VOCAB: usize = 6;
pub const MAX_LEN: usize = 5;

pub type Prefix = Vec<u32>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("space exceeds the enumeration caps: v = {vocab} (max {MAX_VOCAB}), L = {max_len} (max {MAX_LEN})")]
    CapExceeded { vocab: usize, max_len: usize },
    #[error("space is empty: v = {vocab}, L = {max_len}")]
    EmptySpace { vocab: usize, max_len: usize },
    #[error("beta must be positive and finite, got {0}")]
    InvalidBeta(f64),
    #[error("distribution sums to {0}, not 1")]
    NotNormalized(f64),
    #[error("table has no entry for {0:?}")]
    MissingEntry(Prefix),
    #[error("unknown check {0:?}")]
    UnknownCheck(String),
}

pub type Result<T> = std::result::Result<T, OracleError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnumSpace {
    pub vocab: usize,
    pub max_len: usize,
    pub fixed_len: bool,
}

impl EnumSpace {
    pub fn new(vocab: usize, max_len: usize) -> Result<Self> {
        Self::build(vocab, max_len, false)
    }

    pub fn fixed(vocab: usize, len: usize) -> Result<Self> {
        Self::build(vocab, len, true)
    }

    fn build(vocab: usize, max_len: usize, fixed_len: bool) -> Result<Self> {
        if vocab > MAX_VOCAB || max_len > MAX_LEN {
            return Err(OracleError::CapExceeded { vocab, max_len });
        }
        if vocab == 0 || max_len == 0 {
            return Err(OracleError::EmptySpace { vocab, max_len });
        }
        Ok(Self {
            vocab,
            max_len,
            fixed_len,
        })
    }

    pub fn eos(&self) -> Option<u32> {
        (!self.fixed_len).then_some(self.vocab as u32)
    }

    /// Tokens that may follow a non-terminal prefix.
    pub fn alphabet(&self) -> Vec<u32> {
        let n = self.vocab + usize::from(!self.fixed_len);
        (0..n as u32).collect()
    }

    /// Prefixes at which a next token is drawn, shortest first.
    pub fn contexts(&self) -> Vec<Prefix> {
        let mut out = vec![Vec::new()];
        let mut frontier = vec![Vec::new()];
        for _ in 1..self.max_len {
            let mut next = Vec::new();
            for p in &frontier {
                for t in 0..self.vocab as u32 {
                    let mut q: Prefix = p.clone();
                    q.push(t);
                    next.push(q);
                }
            }
            out.extend(next.iter().cloned());
            frontier = next;
        }
        out
    }

    /// The output space `Y`.
    pub fn sequences(&self) -> Vec<Prefix> {
        let mut out = Vec::new();
        for c in self.contexts() {
            for a in self.alphabet() {
                let mut y = c.clone();
                y.push(a);
                if self.is_complete(&y) {
                    out.push(y);
                }
            }
        }
        out.sort();
        out
    }

    /// Non-empty prefixes `Y* \ {∅}`: every (context, next token) pair.
    pub fn prefixes(&self) -> Vec<Prefix> {
        let mut out = Vec::new();
        for c in self.contexts() {
            for a in self.alphabet() {
                let mut y = c.clone();
                y.push(a);
                out.push(y);
            }
        }
        out.sort();
        out
    }

    pub fn is_complete(&self, y: &[u32]) -> bool {
        y.len() == self.max_len || self.eos().is_some_and(|e| y.last() == Some(&e))
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta.is_finite() {
        Ok(())
    } else {
        Err(OracleError::InvalidBeta(beta))
    }
}

fn lookup<'a, V>(map: &'a BTreeMap<Prefix, V>, key: &[u32]) -> Result<&'a V> {
    map.get(key).ok_or_else(|| OracleError::MissingEntry(key.to_vec()))
}

/// Autoregressive policy as an explicit table of log-probability rows, one
/// per context, indexed by [`EnumSpace::alphabet`].
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    pub space: EnumSpace,
    pub rows: BTreeMap<Prefix, Vec<f64>>,
}

impl TabularPolicy {
    pub fn uniform(space: EnumSpace) -> Self {
        let n = space.alphabet().len();
        let row = vec![-(n as f64).ln(); n];
        let rows = space.contexts().into_iter().map(|c| (c, row.clone())).collect();
        Self { space, rows }
    }

    /// Rows from `N(0, scale²)` logits; strictly positive.
    pub fn random(space: EnumSpace, scale: f64, rng: &mut impl Rng) -> Self {
        let n = space.alphabet().len();
        let rows = space
            .contexts()
            .into_iter()
            .map(|c| {
                let logits: Vec<f64> = (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
                (c, log_normalize(&logits))
            })
            .collect();
        Self { space, rows }
    }

    pub fn token_logprob(&self, context: &[u32], token: u32) -> Result<f64> {
        Ok(lookup(&self.rows, context)?[token as usize])
    }

    /// `log π(y) = Σ_i log π(y_i | y_<i)`.
    pub fn seq_logprob(&self, y: &[u32]) -> Result<f64> {
        let mut acc = 0.0;
        for i in 0..y.len() {
            acc += self.token_logprob(&y[..i], y[i])?;
        }
        Ok(acc)
    }

    /// Sequence-level distribution over `Y`.
    pub fn distribution(&self) -> Result<Distribution> {
        self.space
            .sequences()
            .into_iter()
            .map(|y| {
                let p = self.seq_logprob(&y)?.exp();
                Ok((y, p))
            })
            .collect()
    }
}

fn log_normalize(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|x| x - lse).collect()
}

/// Probability per complete sequence.
pub type Distribution = BTreeMap<Prefix, f64>;

/// Response-level reward `r(x, y)` over `Y`.
pub type ResponseReward = BTreeMap<Prefix, f64>;

/// Prefix-wise reward `r*(x, y_≤i)` over non-empty prefixes.
pub type PrefixReward = BTreeMap<Prefix, f64>;

pub fn random_response_reward(space: &EnumSpace, scale: f64, rng: &mut impl Rng) -> ResponseReward {
    space
        .sequences()
        .into_iter()
        .map(|y| (y, scale * rng.sample::<f64, _>(StandardNormal)))
        .collect()
}

pub fn random_prefix_reward(space: &EnumSpace, scale: f64, rng: &mut impl Rng) -> PrefixReward {
    space
        .prefixes()
        .into_iter()
        .map(|y| (y, scale * rng.sample::<f64, _>(StandardNormal)))
        .collect()
}

/// `p2(y) ∝ π_ref(y) exp(r(y)/β)` normalized over `Y`.
pub fn boltzmann_p2(
    space: &EnumSpace,
    reward: &ResponseReward,
    reference: &TabularPolicy,
    beta: f64,
) -> Result<Distribution> {
    check_beta(beta)?;
    let ys = space.sequences();
    if ys.is_empty() {
        return Err(OracleError::EmptySpace {
            vocab: space.vocab,
            max_len: space.max_len,
        });
    }
    let neg_energy = ys
        .iter()
        .map(|y| Ok(-posterior_energy(y, reward, reference, beta)?))
        .collect::<Result<Vec<f64>>>()?;
    let lse = log_sum_exp(&neg_energy);
    Ok(ys.into_iter().zip(neg_energy).map(|(y, e)| (y, (e - lse).exp())).collect())
}

/// `log Σ_y π_ref(y) exp(r(y)/β)`.
pub fn log_partition(
    space: &EnumSpace,
    reward: &ResponseReward,
    reference: &TabularPolicy,
    beta: f64,
) -> Result<f64> {
    let neg_energy = space
        .sequences()
        .iter()
        .map(|y| Ok(-posterior_energy(y, reward, reference, beta)?))
        .collect::<Result<Vec<f64>>>()?;
    Ok(log_sum_exp(&neg_energy))
}

/// `E2(y) = −r(y)/β − log π_ref(y)`.
pub fn posterior_energy(
    y: &[u32],
    reward: &ResponseReward,
    reference: &TabularPolicy,
    beta: f64,
) -> Result<f64> {
    Ok(-lookup(reward, y)? / beta - reference.seq_logprob(y)?)
}

/// `E2*(y_≤i) = −r*(y_≤i)/β − log π_ref(y_i | y_<i)`.
pub fn prefix_posterior_energy(
    prefix: &[u32],
    reward: &PrefixReward,
    reference: &TabularPolicy,
    beta: f64,
) -> Result<f64> {
    let (last, ctx) = prefix.split_last().expect("non-empty prefix");
    Ok(-lookup(reward, prefix)? / beta - reference.token_logprob(ctx, *last)?)
}

/// `Ē2*(y) = Σ_i E2*(y_≤i)`.
pub fn summed_prefix_energy(
    y: &[u32],
    reward: &PrefixReward,
    reference: &TabularPolicy,
    beta: f64,
) -> Result<f64> {
    let mut acc = 0.0;
    for i in 1..=y.len() {
        acc += prefix_posterior_energy(&y[..i], reward, reference, beta)?;
    }
    Ok(acc)
}

/// `J(π) = E_π[r] − β KL(π ‖ π_ref)` by enumeration.
pub fn kl_objective(
    space: &EnumSpace,
    policy: &Distribution,
    reward: &ResponseReward,
    reference: &TabularPolicy,
    beta: f64,
) -> Result<f64> {
    check_beta(beta)?;
    let total: f64 = policy.values().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(OracleError::NotNormalized(total));
    }
    let mut j = 0.0;
    for y in space.sequences() {
        let p = *lookup(policy, &y)?;
        if p == 0.0 {
            continue;
        }
        j += p * (lookup(reward, &y)? - beta * (p.ln() - reference.seq_logprob(&y)?));
    }
    Ok(j)
}

/// Canonical decomposition: zero on every proper prefix, the full reward on
/// the complete sequence.
pub fn additive_decompose(space: &EnumSpace, reward: &ResponseReward) -> Result<PrefixReward> {
    let mut out = PrefixReward::new();
    for p in space.prefixes() {
        let v = if space.is_complete(&p) { *lookup(reward, &p)? } else { 0.0 };
        out.insert(p, v);
    }
    Ok(out)
}

/// Soft-value decomposition adapted to `reference`.
///
/// With `V(y) = r(y)` on complete sequences and
/// `V(p) = β log Σ_a π_ref(a|p) exp(V(p·a)/β)` on proper non-empty prefixes,
/// set `r*(p·a) = V(p·a) − V(p)` and `V(∅) = 0`. The sum telescopes to `r(y)`,
/// and every context except the empty one has zero log-partition shift.
pub fn soft_value_decompose(
    space: &EnumSpace,
    reward: &ResponseReward,
    reference: &TabularPolicy,
    beta: f64,
) -> Result<PrefixReward> {
    check_beta(beta)?;
    let values = soft_values(space, reward, reference, beta)?;
    let mut out = PrefixReward::new();
    for p in space.prefixes() {
        let parent = if p.len() == 1 { 0.0 } else { values[&p[..p.len() - 1]] };
        out.insert(p.clone(), values[&p] - parent);
    }
    Ok(out)
}

fn soft_values(
    space: &EnumSpace,
    reward: &ResponseReward,
    reference: &TabularPolicy,
    beta: f64,
) -> Result<BTreeMap<Prefix, f64>> {
    let mut values = BTreeMap::new();
    for y in space.sequences() {
        values.insert(y.clone(), *lookup(reward, &y)?);
    }
    let mut contexts = space.contexts();
    contexts.sort_by_key(|c| std::cmp::Reverse(c.len()));
    for c in contexts {
        if c.is_empty() {
            continue;
        }
        let row = lookup(&reference.rows, &c)?;
        let terms: Vec<f64> = space
            .alphabet()
            .into_iter()
            .map(|a| {
                let mut q = c.clone();
                q.push(a);
                row[a as usize] + values[&q] / beta
            })
            .collect();
        values.insert(c, beta * log_sum_exp(&terms));
    }
    Ok(values)
}

/// Token-level Boltzmann policy induced by a prefix-wise reward, with the
/// per-context shift that makes the log-ratio exact.
#[derive(Debug, Clone)]
pub struct Reparameterization {
    pub policy: TabularPolicy,
    /// `f(y_<i) = β log Σ_a π_ref(a|y_<i) exp(r*(y_<i·a)/β)`.
    pub shift: BTreeMap<Prefix, f64>,
    /// `max |(r* − f)(y_≤i) − β log(π/π_ref)(y_i|y_<i)|` over all prefixes.
    pub max_residual: f64,
}

/// `π(a|c) ∝ π_ref(a|c) exp(r*(c·a)/β)` for every context `c`.
pub fn reparameterize(
    space: &EnumSpace,
    reward: &PrefixReward,
    reference: &TabularPolicy,
    beta: f64,
) -> Result<Reparameterization> {
    check_beta(beta)?;
    let alphabet = space.alphabet();
    let mut rows = BTreeMap::new();
    let mut shift = BTreeMap::new();
    let mut max_residual: f64 = 0.0;
    for c in space.contexts() {
        let ref_row = lookup(&reference.rows, &c)?;
        let scaled = alphabet
            .iter()
            .map(|&a| {
                let mut q = c.clone();
                q.push(a);
                Ok(lookup(reward, &q)? / beta)
            })
            .collect::<Result<Vec<f64>>>()?;
        let logits: Vec<f64> = ref_row.iter().zip(&scaled).map(|(l, s)| l + s).collect();
        let lse = log_sum_exp(&logits);
        let row: Vec<f64> = logits.iter().map(|x| x - lse).collect();
        let f = beta * lse;
        for (ix, &a) in alphabet.iter().enumerate() {
            let representative = beta * scaled[ix] - f;
            let log_ratio = beta * (row[a as usize] - ref_row[a as usize]);
            max_residual = max_residual.max((representative - log_ratio).abs());
        }
        shift.insert(c.clone(), f);
        rows.insert(c, row);
    }
    Ok(Reparameterization {
        policy: TabularPolicy { space: *space, rows },
        shift,
        max_residual,
    })
}

/// Largest absolute difference between two policy tables over the same space.
pub fn max_table_diff(a: &TabularPolicy, b: &TabularPolicy) -> f64 {
    a.rows
        .iter()
        .flat_map(|(c, ra)| {
            let rb = &b.rows[c];
            ra.iter().zip(rb).map(|(x, y)| (x - y).abs())
        })
        .fold(0.0, f64::max)
}

/// `r*(c·a) + g(c)` for an arbitrary per-context function `g`.
pub fn shift_reward(reward: &PrefixReward, g: &BTreeMap<Prefix, f64>) -> PrefixReward {
    reward
        .iter()
        .map(|(p, v)| (p.clone(), v + g[&p[..p.len() - 1]]))
        .collect()
}

/// Offsets `r(y) − β log(π(y)/π_ref(y))` for every complete `y`.
pub fn reconstruction_offsets(
    space: &EnumSpace,
    reward: &ResponseReward,
    policy: &TabularPolicy,
    reference: &TabularPolicy,
    beta: f64,
) -> Result<Vec<f64>> {
    space
        .sequences()
        .iter()
        .map(|y| Ok(lookup(reward, y)? - beta * (policy.seq_logprob(y)? - reference.seq_logprob(y)?)))
        .collect()
}

fn spread(xs: &[f64]) -> f64 {
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    hi - lo
}

/// Random distribution over `Y` from softmaxed Gaussian logits.
pub fn random_distribution(space: &EnumSpace, scale: f64, rng: &mut impl Rng) -> Distribution {
    let ys = space.sequences();
    let logits: Vec<f64> = ys.iter().map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
    let lp = log_normalize(&logits);
    ys.into_iter().zip(lp).map(|(y, l)| (y, l.exp())).collect()
}

// ── certificates ────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    Boltzmann,
    Optimality,
    EnergyAdditivity,
    Decompose,
    Reparam,
    ShiftInvariance,
    Theorem1,
}

impl Check {
    pub fn name(self) -> &'static str {
        match self {
            Self::Boltzmann => "boltzmann",
            Self::Optimality => "optimality",
            Self::EnergyAdditivity => "energy_additivity",
            Self::Decompose => "decompose",
            Self::Reparam => "reparam",
            Self::ShiftInvariance => "shift_invariance",
            Self::Theorem1 => "theorem1",
        }
    }

    pub fn tolerance(self) -> f64 {
        match self {
            Self::Reparam => 1e-10,
            Self::Theorem1 => 1e-9,
            _ => 1e-12,
        }
    }

    /// Checks selected by a command-line name; `all` selects every one.
    pub fn parse_selection(name: &str) -> Result<Vec<Check>> {
        Ok(match name {
            "all" => vec![
                Self::Boltzmann,
                Self::Optimality,
                Self::EnergyAdditivity,
                Self::Decompose,
                Self::Reparam,
                Self::ShiftInvariance,
                Self::Theorem1,
            ],
            "boltzmann" => vec![Self::Boltzmann],
            "optimality" => vec![Self::Optimality, Self::EnergyAdditivity],
            "decompose" => vec![Self::Decompose],
            "reparam" => vec![Self::Reparam, Self::ShiftInvariance],
            "theorem1" => vec![Self::Theorem1],
            other => return Err(OracleError::UnknownCheck(other.to_string())),
        })
    }
}

/// Outcome of one check, serialized as the `oracle-check` output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub check: String,
    pub space: EnumSpace,
    pub seed: u64,
    pub trials: usize,
    pub max_residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct CheckOptions {
    pub trials: usize,
    /// Random policies for the optimality check, spread across trials.
    pub policies: usize,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            trials: 20,
            policies: 10_000,
        }
    }
}

fn random_beta(rng: &mut impl Rng) -> f64 {
    rng.random_range(0.25..2.0)
}

/// Run one check with its own seeded stream.
pub fn run_check(check: Check, space: &EnumSpace, seed: u64, opts: CheckOptions) -> Result<Certificate> {
    let mut rng = rng::child(seed, check.name());
    let mut worst: f64 = 0.0;
    let trials = opts.trials.max(1);
    for _ in 0..trials {
        let beta = random_beta(&mut rng);
        let reference = TabularPolicy::random(*space, 1.0, &mut rng);
        let residual = match check {
            Check::Boltzmann => {
                let r = random_response_reward(space, 1.0, &mut rng);
                let p2 = boltzmann_p2(space, &r, &reference, beta)?;
                let mass: f64 = p2.values().sum();
                let j = kl_objective(space, &p2, &r, &reference, beta)?;
                let closed = beta * log_partition(space, &r, &reference, beta)?;
                (mass - 1.0).abs().max((j - closed).abs())
            }
            Check::Optimality => {
                let r = random_response_reward(space, 1.0, &mut rng);
                let p2 = boltzmann_p2(space, &r, &reference, beta)?;
                let best = kl_objective(space, &p2, &r, &reference, beta)?;
                // Flat views keep the inner loop off the maps.
                let ys = space.sequences();
                let rv: Vec<f64> = ys.iter().map(|y| lookup(&r, y).copied()).collect::<Result<_>>()?;
                let lref: Vec<f64> = ys
                    .iter()
                    .map(|y| reference.seq_logprob(y))
                    .collect::<Result<_>>()?;
                let lp2: Vec<f64> = ys.iter().map(|y| lookup(&p2, y).map(|p| p.ln())).collect::<Result<_>>()?;
                let per_trial = opts.policies.div_ceil(opts.trials.max(1));
                let mut logits = vec![0.0; ys.len()];
                let mut deficit: f64 = 0.0;
                for k in 0..per_trial {
                    // Alternate broad draws with small perturbations of the optimum.
                    if k % 2 == 0 {
                        let scale = rng.random_range(0.1..3.0);
                        for l in logits.iter_mut() {
                            *l = scale * rng.sample::<f64, _>(StandardNormal);
                        }
                    } else {
                        let scale = 10f64.powf(rng.random_range(-6.0..0.0));
                        for (l, base) in logits.iter_mut().zip(&lp2) {
                            *l = base + scale * rng.sample::<f64, _>(StandardNormal);
                        }
                    }
                    let lse = log_sum_exp(&logits);
                    let j: f64 = logits
                        .iter()
                        .zip(rv.iter().zip(&lref))
                        .map(|(l, (rw, lr))| {
                            let lp = l - lse;
                            lp.exp() * (rw - beta * (lp - lr))
                        })
                        .sum();
                    deficit = deficit.max(j - best);
                }
                deficit
            }
            Check::EnergyAdditivity => {
                let r = random_response_reward(space, 1.0, &mut rng);
                let rstar = additive_decompose(space, &r)?;
                let mut worst_e: f64 = 0.0;
                for y in space.sequences() {
                    let summed = summed_prefix_energy(&y, &rstar, &reference, beta)?;
                    let whole = posterior_energy(&y, &r, &reference, beta)?;
                    worst_e = worst_e.max((summed - whole).abs());
                }
                worst_e
            }
            Check::Decompose => {
                let r = random_response_reward(space, 1.0, &mut rng);
                let mut worst_d: f64 = 0.0;
                for rstar in [
                    additive_decompose(space, &r)?,
                    soft_value_decompose(space, &r, &reference, beta)?,
                ] {
                    for y in space.sequences() {
                        let total: f64 = (1..=y.len()).map(|i| rstar[&y[..i]]).sum();
                        worst_d = worst_d.max((total - r[&y]).abs());
                    }
                }
                worst_d
            }
            Check::Reparam => {
                let rstar = random_prefix_reward(space, 1.0, &mut rng);
                reparameterize(space, &rstar, &reference, beta)?.max_residual
            }
            Check::ShiftInvariance => {
                let rstar = random_prefix_reward(space, 1.0, &mut rng);
                let g: BTreeMap<Prefix, f64> = space
                    .contexts()
                    .into_iter()
                    .map(|c| (c, 3.0 * rng.sample::<f64, _>(StandardNormal)))
                    .collect();
                let a = reparameterize(space, &rstar, &reference, beta)?;
                let b = reparameterize(space, &shift_reward(&rstar, &g), &reference, beta)?;
                max_table_diff(&a.policy, &b.policy)
            }
            Check::Theorem1 => {
                let r = random_response_reward(space, 1.0, &mut rng);
                let rstar = soft_value_decompose(space, &r, &reference, beta)?;
                let rep = reparameterize(space, &rstar, &reference, beta)?;
                let offsets = reconstruction_offsets(space, &r, &rep.policy, &reference, beta)?;
                spread(&offsets)
            }
        };
        worst = worst.max(residual);
    }
    let tolerance = check.tolerance();
    Ok(Certificate {
        check: check.name().to_string(),
        space: *space,
        seed,
        trials,
        max_residual: worst,
        tolerance,
        pass: worst <= tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn space_sizes() {
        let s = EnumSpace::new(3, 3).unwrap();
        assert_eq!(s.sequences().len(), 1 + 3 + 9 + 27);
        assert_eq!(s.contexts().len(), 1 + 3 + 9);
        assert!(s.contexts().contains(&Vec::new()));
        let f = EnumSpace::fixed(4, 3).unwrap();
        assert_eq!(f.sequences().len(), 64);
        assert_eq!(
            EnumSpace::new(7, 5).unwrap_err(),
            OracleError::CapExceeded { vocab: 7, max_len: 5 }
        );
        assert!(EnumSpace::new(3, 6).is_err());
    }

    #[test]
    fn reference_is_normalized_over_y() {
        let s = EnumSpace::new(4, 3).unwrap();
        let p = TabularPolicy::random(s, 1.0, &mut rng::root(1));
        let total: f64 = p.distribution().unwrap().values().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn p2_zero_reward_is_reference() {
        let s = EnumSpace::new(3, 2).unwrap();
        let reference = TabularPolicy::random(s, 1.0, &mut rng::root(2));
        let r: ResponseReward = s.sequences().into_iter().map(|y| (y, 0.0)).collect();
        let p2 = boltzmann_p2(&s, &r, &reference, 0.7).unwrap();
        for (y, p) in reference.distribution().unwrap() {
            assert!((p2[&y] - p).abs() < 1e-12);
        }
    }

    #[test]
    fn p2_two_sequences() {
        let s = EnumSpace::fixed(2, 1).unwrap();
        let reference = TabularPolicy::uniform(s);
        let beta = 0.8;
        let r: ResponseReward = [(vec![0], 0.0), (vec![1], beta * 3f64.ln())].into_iter().collect();
        let p2 = boltzmann_p2(&s, &r, &reference, beta).unwrap();
        assert!((p2[&vec![0]] - 0.25).abs() < 1e-12);
        assert!((p2[&vec![1]] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn p2_large_beta_approaches_reference() {
        let s = EnumSpace::new(3, 3).unwrap();
        let mut rng = rng::root(3);
        let reference = TabularPolicy::random(s, 1.0, &mut rng);
        let r = random_response_reward(&s, 1.0, &mut rng);
        let p2 = boltzmann_p2(&s, &r, &reference, 1e6).unwrap();
        for (y, p) in reference.distribution().unwrap() {
            assert!((p2[&y] - p).abs() < 1e-5);
        }
    }

    #[test]
    fn kl_objective_examples() {
        let s = EnumSpace::new(3, 2).unwrap();
        let mut rng = rng::root(4);
        let reference = TabularPolicy::random(s, 1.0, &mut rng);
        let ref_dist = reference.distribution().unwrap();
        let r = random_response_reward(&s, 1.0, &mut rng);
        let j = kl_objective(&s, &ref_dist, &r, &reference, 0.5).unwrap();
        let expected: f64 = ref_dist.iter().map(|(y, p)| p * r[y]).sum();
        assert!((j - expected).abs() < 1e-12);

        let zero: ResponseReward = s.sequences().into_iter().map(|y| (y, 0.0)).collect();
        assert!(kl_objective(&s, &ref_dist, &zero, &reference, 0.5).unwrap().abs() < 1e-12);

        let mut bad = ref_dist.clone();
        *bad.values_mut().next().unwrap() += 0.01;
        assert!(matches!(
            kl_objective(&s, &bad, &r, &reference, 0.5),
            Err(OracleError::NotNormalized(_))
        ));
    }

    #[test]
    fn terminal_mass_round_trip_is_exact() {
        let s = EnumSpace::new(3, 3).unwrap();
        let mut rng = rng::root(5);
        for _ in 0..1000 {
            let r = random_response_reward(&s, 2.0, &mut rng);
            let rstar = additive_decompose(&s, &r).unwrap();
            for y in s.sequences() {
                let total: f64 = (1..=y.len()).map(|i| rstar[&y[..i]]).sum();
                assert_eq!(total, r[&y]);
            }
        }
    }

    #[test]
    fn length_one_decomposition_is_identity() {
        let s = EnumSpace::fixed(4, 1).unwrap();
        let r = random_response_reward(&s, 1.0, &mut rng::root(6));
        assert_eq!(additive_decompose(&s, &r).unwrap(), r);
    }

    #[test]
    fn soft_value_round_trip() {
        let s = EnumSpace::new(3, 3).unwrap();
        let mut rng = rng::root(7);
        let reference = TabularPolicy::random(s, 1.0, &mut rng);
        let r = random_response_reward(&s, 1.0, &mut rng);
        let rstar = soft_value_decompose(&s, &r, &reference, 0.9).unwrap();
        for y in s.sequences() {
            let total: f64 = (1..=y.len()).map(|i| rstar[&y[..i]]).sum();
            assert!((total - r[&y]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_prefix_reward_reparameterizes_to_reference() {
        let s = EnumSpace::new(3, 3).unwrap();
        let reference = TabularPolicy::random(s, 1.0, &mut rng::root(8));
        let zero: PrefixReward = s.prefixes().into_iter().map(|p| (p, 0.0)).collect();
        let rep = reparameterize(&s, &zero, &reference, 1.3).unwrap();
        assert!(max_table_diff(&rep.policy, &reference) < 1e-15);
        assert!(rep.shift.values().all(|f| f.abs() < 1e-15));
    }

    #[test]
    fn terminal_mass_leaves_prefix_dependent_offset() {
        // Reconstruction through the terminal-mass decomposition is off by
        // Σ_i f(y_<i), which varies with the prefix; the soft-value
        // decomposition removes it.
        let s = EnumSpace::new(3, 3).unwrap();
        let mut rng = rng::root(9);
        let reference = TabularPolicy::random(s, 1.0, &mut rng);
        let r = random_response_reward(&s, 1.0, &mut rng);
        let beta = 0.6;
        let terminal = reparameterize(&s, &additive_decompose(&s, &r).unwrap(), &reference, beta).unwrap();
        let off = reconstruction_offsets(&s, &r, &terminal.policy, &reference, beta).unwrap();
        assert!(spread(&off) > 1e-3);
        let soft = reparameterize(&s, &soft_value_decompose(&s, &r, &reference, beta).unwrap(), &reference, beta).unwrap();
        let off = reconstruction_offsets(&s, &r, &soft.policy, &reference, beta).unwrap();
        assert!(spread(&off) < 1e-9);
        // the remaining constant is β log Z, a function of the prompt only
        let z = beta * log_partition(&s, &r, &reference, beta).unwrap();
        assert!((off[0] - z).abs() < 1e-9);
        // and the reconstructed policy is the sequence-level Boltzmann optimum
        let p2 = boltzmann_p2(&s, &r, &reference, beta).unwrap();
        for (y, p) in soft.policy.distribution().unwrap() {
            assert!((p2[&y] - p).abs() < 1e-12);
        }
    }

    #[test]
    fn certificates_pass_on_small_space() {
        let s = EnumSpace::new(3, 3).unwrap();
        let opts = CheckOptions {
            trials: 3,
            policies: 500,
        };
        for check in Check::parse_selection("all").unwrap() {
            let c = run_check(check, &s, 42, opts).unwrap();
            assert!(c.pass, "{c:?}");
        }
        assert!(Check::parse_selection("nope").is_err());
    }
}
