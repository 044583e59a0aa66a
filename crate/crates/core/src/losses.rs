//! Preference losses over per-token log-ratios `log π_θ(y_i|·) − log π_ref(y_i|·)`.
//!
//! For a pair with segments `i = 1..T'` the segment logit is
//! `β (S^w(i) − S^l(i))`, where `S` sums a side's unmasked log-ratios inside
//! the segment. Then
//!
//! - DPO: `−log σ(β (S^w_total − S^l_total))` (one segment per side);
//! - ADPO: `Σ_i −log σ(β (S^w(i) − S^l(i)))`;
//! - cADPO: ADPO with rejected log-ratios weighted by `1 − s_j`.
//!
//! Batches reduce by the mean over pairs; segments within a pair by the sum.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Graph, Tensor, Var};
use crate::composition::{segment_pair, CompositionError, Family, Segment, SegmentedPair};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossError {
    #[error("beta must be positive and finite, got {0}")]
    InvalidBeta(f64),
    #[error("batch has {pairs} pairs but {segmentations} segmentations")]
    BatchMismatch { pairs: usize, segmentations: usize },
    #[error("pair {pair}: {side} side has {got} log-ratios, segmentation expects {expected}")]
    SegmentationMismatch {
        pair: usize,
        side: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("segment position {index} is outside a side of length {len}")]
    SegmentOutOfBounds { index: usize, len: usize },
    #[error("pair {pair}: weighted loss needs rejected token scores")]
    MissingScores { pair: usize },
    #[error("pair {pair}: {got} rejected scores for {expected} rejected tokens")]
    ScoreLength { pair: usize, expected: usize, got: usize },
    #[error("pair {pair}: score {value} at position {index} is outside [0, 1]")]
    ScoreRange { pair: usize, index: usize, value: f64 },
    #[error("invalid loss configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Composition(#[from] CompositionError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

pub type Result<T> = std::result::Result<T, LossError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Dpo,
    #[default]
    Adpo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    #[default]
    Static,
    Adaptive,
}

/// Which loss to build and how to segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub method: Method,
    /// Ignored for `method = dpo`.
    pub family: FamilyKind,
    /// Static window size.
    pub k: usize,
    /// Adaptive segment count.
    pub m: usize,
    pub beta: f64,
    /// Weight rejected log-ratios by `1 − s_j` (cADPO).
    pub weighted: bool,
    pub mask_padding: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            method: Method::Adpo,
            family: FamilyKind::Static,
            k: 1,
            m: 16,
            beta: 0.5,
            weighted: false,
            mask_padding: true,
        }
    }
}

impl LossConfig {
    pub fn dpo(beta: f64) -> Self {
        Self {
            method: Method::Dpo,
            beta,
            ..Self::default()
        }
    }

    pub fn adpo(family: Family, beta: f64) -> Self {
        let mut cfg = Self {
            method: Method::Adpo,
            beta,
            ..Self::default()
        };
        match family {
            Family::Static { k } => {
                cfg.family = FamilyKind::Static;
                cfg.k = k;
            }
            Family::Adaptive { m } => {
                cfg.family = FamilyKind::Adaptive;
                cfg.m = m;
            }
        }
        cfg
    }

    pub fn cadpo(family: Family, beta: f64) -> Self {
        Self {
            weighted: true,
            ..Self::adpo(family, beta)
        }
    }

    /// Segmentation this configuration implies. DPO is adaptive with `m = 1`.
    pub fn segmentation(&self) -> Family {
        match (self.method, self.family) {
            (Method::Dpo, _) => Family::DPO,
            (Method::Adpo, FamilyKind::Static) => Family::Static { k: self.k },
            (Method::Adpo, FamilyKind::Adaptive) => Family::Adaptive { m: self.m },
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_beta(self.beta)?;
        if self.method == Method::Adpo {
            match self.family {
                FamilyKind::Static if self.k == 0 => {
                    return Err(LossError::InvalidConfig("k must be at least 1".into()))
                }
                FamilyKind::Adaptive if self.m == 0 => {
                    return Err(LossError::InvalidConfig("m must be at least 1".into()))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Whether responses must be padded and scored on the padded grid.
    pub fn scores_padding(&self) -> bool {
        !self.mask_padding && matches!(self.segmentation(), Family::Static { .. })
    }

    pub fn segment(&self, len_w: usize, len_l: usize) -> Result<SegmentedPair> {
        Ok(segment_pair(len_w, len_l, self.segmentation(), self.mask_padding)?)
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta.is_finite() {
        Ok(())
    } else {
        Err(LossError::InvalidBeta(beta))
    }
}

/// Per-token log-ratio nodes for one pair.
#[derive(Debug, Clone)]
pub struct PairLogRatios {
    pub chosen: Var,
    pub rejected: Var,
    /// Criticality scores `s_j ∈ [0, 1]`, one per real rejected token.
    pub rejected_scores: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct LogRatioBatch {
    pub pairs: Vec<PairLogRatios>,
    pub beta: f64,
}

impl LogRatioBatch {
    /// Push plain per-token log-ratios as constants.
    pub fn constants(
        g: &mut Graph,
        pairs: &[(Vec<f64>, Vec<f64>)],
        scores: Option<&[Vec<f64>]>,
        beta: f64,
    ) -> Self {
        let pairs = pairs
            .iter()
            .enumerate()
            .map(|(i, (w, l))| PairLogRatios {
                chosen: g.constant(Tensor::vector(w.clone())),
                rejected: g.constant(Tensor::vector(l.clone())),
                rejected_scores: scores.map(|s| s[i].clone()),
            })
            .collect();
        Self { pairs, beta }
    }
}

/// `S(i)`: sum of the unmasked entries of `side` covered by `segment`,
/// optionally weighted per position. Empty segments give a constant 0.
pub fn segment_log_ratio(
    g: &mut Graph,
    side: Var,
    segment: &Segment,
    weights: Option<&[f64]>,
) -> Result<Var> {
    let len = g.value(side).len();
    let active: Vec<usize> = segment.active().collect();
    if let Some(&bad) = active.iter().find(|&&i| i >= len) {
        return Err(LossError::SegmentOutOfBounds { index: bad, len });
    }
    if active.is_empty() {
        return Ok(g.constant(Tensor::scalar(0.0)));
    }
    let picked = g.gather(side, &active)?;
    let picked = match weights {
        Some(w) => {
            let ws: Vec<f64> = active.iter().map(|&i| w[i]).collect();
            g.mul_const(picked, &ws)?
        }
        None => picked,
    };
    Ok(g.sum(picked))
}

fn mean(g: &mut Graph, terms: Vec<Var>) -> Result<Var> {
    let n = terms.len();
    let mut it = terms.into_iter();
    let Some(mut acc) = it.next() else {
        return Ok(g.constant(Tensor::scalar(0.0)));
    };
    for t in it {
        acc = g.add(acc, t)?;
    }
    Ok(g.scale(acc, 1.0 / n as f64))
}

fn neg_log_sigmoid_of_scaled(g: &mut Graph, diff: Var, beta: f64) -> Var {
    let logit = g.scale(diff, beta);
    let ls = g.log_sigmoid(logit);
    g.neg(ls)
}

/// DPO: mean over pairs of `−log σ(β (Σ log-ratio^w − Σ log-ratio^l))`.
pub fn dpo_loss(g: &mut Graph, batch: &LogRatioBatch) -> Result<Var> {
    check_beta(batch.beta)?;
    let mut terms = Vec::with_capacity(batch.pairs.len());
    for pair in &batch.pairs {
        let sw = g.sum(pair.chosen);
        let sl = g.sum(pair.rejected);
        let diff = g.sub(sw, sl)?;
        terms.push(neg_log_sigmoid_of_scaled(g, diff, batch.beta));
    }
    mean(g, terms)
}

fn rejected_weights(pair_ix: usize, pair: &PairLogRatios, real_len: usize) -> Result<Vec<f64>> {
    let scores = pair
        .rejected_scores
        .as_ref()
        .ok_or(LossError::MissingScores { pair: pair_ix })?;
    if scores.len() != real_len {
        return Err(LossError::ScoreLength {
            pair: pair_ix,
            expected: real_len,
            got: scores.len(),
        });
    }
    scores
        .iter()
        .enumerate()
        .map(|(index, &s)| {
            if (0.0..=1.0).contains(&s) {
                Ok(1.0 - s)
            } else {
                Err(LossError::ScoreRange {
                    pair: pair_ix,
                    index,
                    value: s,
                })
            }
        })
        .collect()
}

/// Segment logits `β (S^w(i) − S^l(i))` of one pair, skipping segments that
/// are empty on both sides.
pub fn segment_logits(
    g: &mut Graph,
    pair: &PairLogRatios,
    seg: &SegmentedPair,
    beta: f64,
    weights: Option<&[f64]>,
) -> Result<Vec<Var>> {
    let mut out = Vec::with_capacity(seg.feedback_len());
    for (sw, sl) in seg.chosen.iter().zip(&seg.rejected) {
        if sw.is_empty() && sl.is_empty() {
            continue;
        }
        let a = segment_log_ratio(g, pair.chosen, sw, None)?;
        let b = segment_log_ratio(g, pair.rejected, sl, weights)?;
        let d = g.sub(a, b)?;
        out.push(g.scale(d, beta));
    }
    Ok(out)
}

fn check_lengths(g: &Graph, ix: usize, pair: &PairLogRatios, seg: &SegmentedPair) -> Result<()> {
    let lw = g.value(pair.chosen).len();
    let ll = g.value(pair.rejected).len();
    if lw != seg.scored_len_w {
        return Err(LossError::SegmentationMismatch {
            pair: ix,
            side: "chosen",
            expected: seg.scored_len_w,
            got: lw,
        });
    }
    if ll != seg.scored_len_l {
        return Err(LossError::SegmentationMismatch {
            pair: ix,
            side: "rejected",
            expected: seg.scored_len_l,
            got: ll,
        });
    }
    Ok(())
}

fn segmented_loss(
    g: &mut Graph,
    batch: &LogRatioBatch,
    segs: &[SegmentedPair],
    weighted: bool,
) -> Result<Var> {
    check_beta(batch.beta)?;
    if segs.len() != batch.pairs.len() {
        return Err(LossError::BatchMismatch {
            pairs: batch.pairs.len(),
            segmentations: segs.len(),
        });
    }
    let mut terms = Vec::with_capacity(batch.pairs.len());
    for (ix, (pair, seg)) in batch.pairs.iter().zip(segs).enumerate() {
        check_lengths(g, ix, pair, seg)?;
        let weights = if weighted {
            let mut w = rejected_weights(ix, pair, seg.real_len_l)?;
            // Padded positions scored on an unmasked grid keep unit weight.
            w.resize(seg.scored_len_l, 1.0);
            Some(w)
        } else {
            None
        };
        let logits = segment_logits(g, pair, seg, batch.beta, weights.as_deref())?;
        let mut acc: Option<Var> = None;
        for logit in logits {
            let ls = g.log_sigmoid(logit);
            let term = g.neg(ls);
            acc = Some(match acc {
                Some(a) => g.add(a, term)?,
                None => term,
            });
        }
        terms.push(match acc {
            Some(a) => a,
            None => g.constant(Tensor::scalar(0.0)),
        });
    }
    mean(g, terms)
}

/// ADPO: mean over pairs of `Σ_i −log σ(β (S^w(i) − S^l(i)))`.
pub fn adpo_loss(g: &mut Graph, batch: &LogRatioBatch, segs: &[SegmentedPair]) -> Result<Var> {
    segmented_loss(g, batch, segs, false)
}

/// cADPO: ADPO with each rejected log-ratio scaled by `1 − s_j`.
pub fn cadpo_loss(g: &mut Graph, batch: &LogRatioBatch, segs: &[SegmentedPair]) -> Result<Var> {
    segmented_loss(g, batch, segs, true)
}

/// Loss selected by `cfg`, segmenting each pair from its log-ratio lengths.
///
/// Lengths passed in `real_lens` are the true token counts `(len_w, len_l)`.
pub fn preference_loss(
    g: &mut Graph,
    batch: &LogRatioBatch,
    cfg: &LossConfig,
    real_lens: &[(usize, usize)],
) -> Result<Var> {
    cfg.validate()?;
    if cfg.method == Method::Dpo && !cfg.weighted {
        return dpo_loss(g, batch);
    }
    let segs = real_lens
        .iter()
        .map(|&(w, l)| cfg.segment(w, l))
        .collect::<Result<Vec<_>>>()?;
    if cfg.weighted {
        cadpo_loss(g, batch, &segs)
    } else {
        adpo_loss(g, batch, &segs)
    }
}

/// Implicit rewards `r_i = β · log-ratio_i` for each side of a pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairRewards {
    pub chosen: Vec<f64>,
    pub rejected: Vec<f64>,
}

impl PairRewards {
    /// `Σ_i r_i^w − Σ_i r_i^l`.
    pub fn total_margin(&self) -> f64 {
        self.chosen.iter().sum::<f64>() - self.rejected.iter().sum::<f64>()
    }
}

/// Per-position implicit rewards from real-token log-ratios.
pub fn implicit_rewards(chosen: &[f64], rejected: &[f64], beta: f64) -> PairRewards {
    PairRewards {
        chosen: chosen.iter().map(|x| beta * x).collect(),
        rejected: rejected.iter().map(|x| beta * x).collect(),
    }
}

/// `β (S^w_total − S^l_total)`, the argument of the DPO log-sigmoid.
pub fn dpo_logit(chosen: &[f64], rejected: &[f64], beta: f64) -> f64 {
    beta * (chosen.iter().sum::<f64>() - rejected.iter().sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, sigmoid};
    use proptest::prelude::*;

    const LN2: f64 = std::f64::consts::LN_2;

    fn one_pair(w: Vec<f64>, l: Vec<f64>, beta: f64) -> (Graph, LogRatioBatch) {
        let mut g = Graph::new();
        let b = LogRatioBatch::constants(&mut g, &[(w, l)], None, beta);
        (g, b)
    }

    #[test]
    fn segment_sum_masks_padding() {
        let mut g = Graph::new();
        let side = g.constant(Tensor::vector(vec![0.2, -0.5]));
        let seg = Segment {
            range: 0..3,
            mask: vec![true, true, false],
        };
        let s = segment_log_ratio(&mut g, side, &seg, None).unwrap();
        assert!((g.value(s).item() + 0.3).abs() < 1e-15);

        let single = Segment {
            range: 1..2,
            mask: vec![true],
        };
        let s = segment_log_ratio(&mut g, side, &single, None).unwrap();
        assert_eq!(g.value(s).item(), -0.5);

        let bad = Segment {
            range: 1..3,
            mask: vec![true, true],
        };
        assert_eq!(
            segment_log_ratio(&mut g, side, &bad, None).unwrap_err(),
            LossError::SegmentOutOfBounds { index: 2, len: 2 }
        );
    }

    #[test]
    fn dpo_examples() {
        let (mut g, b) = one_pair(vec![0.0; 3], vec![0.0; 5], 1.0);
        let l = dpo_loss(&mut g, &b).unwrap();
        assert!((g.value(l).item() - LN2).abs() < 1e-15);

        // token differences (+1, −1) cancel inside the log-sigmoid
        let (mut g, b) = one_pair(vec![1.0, 0.0], vec![0.0, 1.0], 1.0);
        let l = dpo_loss(&mut g, &b).unwrap();
        assert!((g.value(l).item() - LN2).abs() < 1e-15);

        let (mut g, b) = one_pair(vec![0.3, -0.1], vec![0.2], 2.0);
        let l2 = dpo_loss(&mut g, &b).unwrap();
        let (mut h, c) = one_pair(vec![0.6, -0.2], vec![0.4], 1.0);
        let l1 = dpo_loss(&mut h, &c).unwrap();
        assert!((g.value(l2).item() - h.value(l1).item()).abs() < 1e-15);
    }

    #[test]
    fn adpo_token_level_moves_sum_outside() {
        let (mut g, b) = one_pair(vec![1.0, 0.0], vec![0.0, 1.0], 1.0);
        let segs = vec![segment_pair(2, 2, Family::Static { k: 1 }, true).unwrap()];
        let l = adpo_loss(&mut g, &b, &segs).unwrap();
        let v = g.value(l).item();
        assert!((v - 1.626_523_375_036_445_6).abs() < 1e-12, "{v}");
        assert!(v > LN2);
    }

    #[test]
    fn adpo_zero_ratios_give_t_prime_ln2() {
        let (mut g, b) = one_pair(vec![0.0; 7], vec![0.0; 4], 0.5);
        let segs = vec![segment_pair(7, 4, Family::Static { k: 3 }, true).unwrap()];
        let l = adpo_loss(&mut g, &b, &segs).unwrap();
        assert!((g.value(l).item() - 3.0 * LN2).abs() < 1e-14);
    }

    #[test]
    fn adpo_skips_segments_empty_on_both_sides() {
        // len 2 with m = 3 gives parts (0, 1, 1) on both sides.
        let (mut g, b) = one_pair(vec![0.0; 2], vec![0.0; 2], 1.0);
        let segs = vec![segment_pair(2, 2, Family::Adaptive { m: 3 }, true).unwrap()];
        let l = adpo_loss(&mut g, &b, &segs).unwrap();
        assert!((g.value(l).item() - 2.0 * LN2).abs() < 1e-15);

        // one-sided empty segment is kept with S = 0 on that side
        let (mut g, b) = one_pair(vec![0.0; 2], vec![0.0; 3], 1.0);
        let segs = vec![segment_pair(2, 3, Family::Adaptive { m: 3 }, true).unwrap()];
        let l = adpo_loss(&mut g, &b, &segs).unwrap();
        assert!((g.value(l).item() - 3.0 * LN2).abs() < 1e-15);
    }

    #[test]
    fn adpo_rejects_mismatched_segmentation() {
        let (mut g, b) = one_pair(vec![0.0; 2], vec![0.0; 3], 1.0);
        let segs = vec![segment_pair(2, 4, Family::Static { k: 1 }, true).unwrap()];
        assert!(matches!(
            adpo_loss(&mut g, &b, &segs),
            Err(LossError::SegmentationMismatch { side: "rejected", .. })
        ));
        assert!(matches!(
            adpo_loss(&mut g, &b, &[]),
            Err(LossError::BatchMismatch { .. })
        ));
    }

    #[test]
    fn cadpo_examples() {
        let mut g = Graph::new();
        let b = LogRatioBatch::constants(
            &mut g,
            &[(vec![0.4], vec![0.6])],
            Some(&[vec![0.5]]),
            1.0,
        );
        let segs = vec![segment_pair(1, 1, Family::Adaptive { m: 1 }, true).unwrap()];
        let l = cadpo_loss(&mut g, &b, &segs).unwrap();
        let expected = -(sigmoid(0.1)).ln();
        assert!((g.value(l).item() - expected).abs() < 1e-15);
        assert!((g.value(l).item() - 0.6444).abs() < 1e-4);
    }

    #[test]
    fn cadpo_score_errors() {
        let segs = vec![segment_pair(1, 2, Family::Adaptive { m: 1 }, true).unwrap()];
        let mut g = Graph::new();
        let b = LogRatioBatch::constants(&mut g, &[(vec![0.4], vec![0.6, 0.1])], Some(&[vec![0.5]]), 1.0);
        assert!(matches!(
            cadpo_loss(&mut g, &b, &segs),
            Err(LossError::ScoreLength { expected: 2, got: 1, .. })
        ));
        let b = LogRatioBatch::constants(&mut g, &[(vec![0.4], vec![0.6, 0.1])], Some(&[vec![0.5, 1.5]]), 1.0);
        assert!(matches!(
            cadpo_loss(&mut g, &b, &segs),
            Err(LossError::ScoreRange { index: 1, .. })
        ));
        let b = LogRatioBatch::constants(&mut g, &[(vec![0.4], vec![0.6, 0.1])], None, 1.0);
        assert!(matches!(cadpo_loss(&mut g, &b, &segs), Err(LossError::MissingScores { pair: 0 })));
    }

    #[test]
    fn invalid_beta() {
        let (mut g, b) = one_pair(vec![0.0], vec![0.0], 0.0);
        assert_eq!(dpo_loss(&mut g, &b).unwrap_err(), LossError::InvalidBeta(0.0));
    }

    #[test]
    fn implicit_reward_examples() {
        let r = implicit_rewards(&[0.0, 0.0], &[0.0], 3.0);
        assert!(r.chosen.iter().chain(&r.rejected).all(|v| *v == 0.0));
        let w = [0.3, -0.2, 0.05];
        let l = [0.1, 0.4];
        let r1 = implicit_rewards(&w, &l, 1.0);
        let r2 = implicit_rewards(&w, &l, 2.0);
        for (a, b) in r1.chosen.iter().zip(&r2.chosen) {
            assert_eq!(2.0 * a, *b);
        }
        assert!((r2.total_margin() - dpo_logit(&w, &l, 2.0)).abs() < 1e-15);
    }

    #[test]
    fn config_segmentation() {
        assert_eq!(LossConfig::dpo(0.1).segmentation(), Family::DPO);
        assert_eq!(
            LossConfig::adpo(Family::Adaptive { m: 4 }, 0.1).segmentation(),
            Family::Adaptive { m: 4 }
        );
        let mut bad = LossConfig::adpo(Family::Static { k: 1 }, 0.1);
        bad.k = 0;
        assert!(bad.validate().is_err());
        let parsed: LossConfig = serde_json::from_str(r#"{"method":"dpo","beta":0.25}"#).unwrap();
        assert_eq!(parsed.method, Method::Dpo);
        assert!(serde_json::from_str::<LossConfig>(r#"{"bogus":1}"#).is_err());
    }

    fn vec_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-2.0f64..2.0, 1..12)
    }

    proptest! {
        #[test]
        fn gradient_signs(w in vec_strategy(), l in vec_strategy(), k in 1usize..4, beta in 0.1f64..2.0) {
            let seg = segment_pair(w.len(), l.len(), Family::Static { k }, true).unwrap();
            let mut g = Graph::new();
            let cw = g.param(Tensor::vector(w.clone()));
            let cl = g.param(Tensor::vector(l.clone()));
            let batch = LogRatioBatch {
                pairs: vec![PairLogRatios { chosen: cw, rejected: cl, rejected_scores: None }],
                beta,
            };
            let loss = adpo_loss(&mut g, &batch, &[seg]).unwrap();
            g.backward(loss).unwrap();
            prop_assert!(g.grad(cw).data().iter().all(|d| *d < 0.0));
            prop_assert!(g.grad(cl).data().iter().all(|d| *d > 0.0));
        }

        #[test]
        fn probability_form_and_swap(w in vec_strategy(), l in vec_strategy(), m in 1usize..6, beta in 0.1f64..2.0) {
            let seg = segment_pair(w.len(), l.len(), Family::Adaptive { m }, true).unwrap();
            let mut g = Graph::new();
            let batch = LogRatioBatch::constants(&mut g, &[(w.clone(), l.clone())], None, beta);
            let loss = adpo_loss(&mut g, &batch, std::slice::from_ref(&seg)).unwrap();
            let logits = segment_logits(&mut g, &batch.pairs[0], &seg, beta, None).unwrap();
            let prob: f64 = logits.iter().map(|x| sigmoid(g.value(*x).item())).product();
            prop_assert!(prob > 0.0 && prob < 1.0);
            prop_assert!(((-g.value(loss).item()).exp() - prob).abs() < 1e-12);

            let swapped_seg = segment_pair(l.len(), w.len(), Family::Adaptive { m }, true).unwrap();
            let swapped = LogRatioBatch::constants(&mut g, &[(l.clone(), w.clone())], None, beta);
            let back = segment_logits(&mut g, &swapped.pairs[0], &swapped_seg, beta, None).unwrap();
            prop_assert_eq!(back.len(), logits.len());
            for (a, b) in logits.iter().zip(&back) {
                prop_assert_eq!(g.value(*a).item(), -g.value(*b).item());
            }
        }
    }

    #[test]
    fn two_pair_adpo_gradient_check() {
        let params = vec![
            Tensor::vector(vec![0.3, -0.7, 0.2]),
            Tensor::vector(vec![0.1, 0.5]),
            Tensor::vector(vec![-0.4, 0.9, 0.0, 0.25]),
            Tensor::vector(vec![0.6, -0.3, 0.8]),
        ];
        let segs = vec![
            segment_pair(3, 2, Family::Static { k: 2 }, true).unwrap(),
            segment_pair(4, 3, Family::Static { k: 2 }, true).unwrap(),
        ];
        let f = |g: &mut Graph, p: &[Var]| {
            let batch = LogRatioBatch {
                pairs: vec![
                    PairLogRatios { chosen: p[0], rejected: p[1], rejected_scores: None },
                    PairLogRatios { chosen: p[2], rejected: p[3], rejected_scores: None },
                ],
                beta: 0.7,
            };
            adpo_loss(g, &batch, &segs).map_err(|e| match e {
                LossError::Autodiff(a) => a,
                other => panic!("{other}"),
            })
        };
        let report = grad_check(f, &params, 1e-5, 1e-6).unwrap();
        assert!(report.passed, "{report:?}");
    }
}
