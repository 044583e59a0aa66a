//! Strong compositions that cut a response into feedback units.
//!
//! A composition `ξ = (ξ(1), …, ξ(m))` with `Σ ξ(i) = n` splits positions
//! `0..n` into contiguous segments starting at `ξ̄(i) = Σ_{j<i} ξ(j)`. Two
//! families decide `ξ` for a chosen/rejected pair:
//!
//! - **static** (window `k`): both sides are padded to `T = max(len_w, len_l)`
//!   and cut into `⌈T/k⌉` windows of the same absolute positions;
//! - **adaptive** (`m` parts): each side is cut independently into `m`
//!   near-equal parts `⌊i·len/m⌋ − ⌊(i−1)·len/m⌋`. Parts may be empty when
//!   `len < m`.
//!
//! Segments pair up by index across sides.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CompositionError {
    #[error("{name} must be at least 1, got {value}")]
    InvalidParameter { name: &'static str, value: usize },
    #[error("static segmentation needs non-empty sides, got lengths {len_w} and {len_l}")]
    EmptySide { len_w: usize, len_l: usize },
}

pub type Result<T> = std::result::Result<T, CompositionError>;

/// Composition family together with its parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Fixed window of `k` tokens over the padded grid.
    Static { k: usize },
    /// Fixed number `m` of segments per side.
    Adaptive { m: usize },
}

impl Family {
    /// Whole-response segmentation: the DPO case.
    pub const DPO: Family = Family::Adaptive { m: 1 };

    /// One token per segment.
    pub const TOKEN: Family = Family::Static { k: 1 };
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StrongComposition {
    parts: Vec<usize>,
}

impl StrongComposition {
    pub fn new(parts: Vec<usize>) -> Self {
        Self { parts }
    }

    pub fn parts(&self) -> &[usize] {
        &self.parts
    }

    pub fn num_parts(&self) -> usize {
        self.parts.len()
    }

    pub fn total(&self) -> usize {
        self.parts.iter().sum()
    }

    /// True when every part is positive.
    pub fn is_strong(&self) -> bool {
        self.parts.iter().all(|&p| p >= 1)
    }

    /// Zero-based segment starts plus the end: `[ξ̄(1)−1, …, ξ̄(m+1)−1]`.
    pub fn boundaries(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.parts.len() + 1);
        let mut at = 0;
        out.push(at);
        for p in &self.parts {
            at += p;
            out.push(at);
        }
        out
    }

    pub fn segments(&self) -> Vec<Range<usize>> {
        self.boundaries().windows(2).map(|w| w[0]..w[1]).collect()
    }
}

/// `ξ_static(i) = min(k, T − k(i−1))` for `i = 1..⌈T/k⌉`.
pub fn static_composition(total: usize, k: usize) -> Result<StrongComposition> {
    if k == 0 {
        return Err(CompositionError::InvalidParameter { name: "k", value: k });
    }
    let count = total.div_ceil(k);
    Ok(StrongComposition::new(
        (1..=count).map(|i| k.min(total - k * (i - 1))).collect(),
    ))
}

/// Static windows over a padded pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StaticSegmentation {
    pub composition: StrongComposition,
    pub padded_len: usize,
    /// `true` marks a real token, `false` padding, per padded position.
    pub mask_w: Vec<bool>,
    pub mask_l: Vec<bool>,
}

pub fn xi_static(len_w: usize, len_l: usize, k: usize) -> Result<StaticSegmentation> {
    if k == 0 {
        return Err(CompositionError::InvalidParameter { name: "k", value: k });
    }
    if len_w == 0 || len_l == 0 {
        return Err(CompositionError::EmptySide { len_w, len_l });
    }
    let padded_len = len_w.max(len_l);
    Ok(StaticSegmentation {
        composition: static_composition(padded_len, k)?,
        padded_len,
        mask_w: (0..padded_len).map(|i| i < len_w).collect(),
        mask_l: (0..padded_len).map(|i| i < len_l).collect(),
    })
}

/// `ξ_adaptive(i) = ⌊i·len/m⌋ − ⌊(i−1)·len/m⌋` for `i = 1..m`.
pub fn xi_adaptive(len: usize, m: usize) -> Result<StrongComposition> {
    if m == 0 {
        return Err(CompositionError::InvalidParameter { name: "m", value: m });
    }
    Ok(StrongComposition::new(
        (1..=m).map(|i| i * len / m - (i - 1) * len / m).collect(),
    ))
}

/// A range into one side's per-token vector with a per-position mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub range: Range<usize>,
    pub mask: Vec<bool>,
}

impl Segment {
    fn unmasked(range: Range<usize>) -> Self {
        let mask = vec![true; range.len()];
        Self { range, mask }
    }

    /// Positions that contribute to sums over this segment.
    pub fn active(&self) -> impl Iterator<Item = usize> + '_ {
        self.range.clone().zip(&self.mask).filter(|(_, m)| **m).map(|(i, _)| i)
    }

    pub fn is_empty(&self) -> bool {
        !self.mask.iter().any(|m| *m)
    }
}

/// Both sides of a preference pair cut into the same number of segments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentedPair {
    pub chosen: Vec<Segment>,
    pub rejected: Vec<Segment>,
    pub family: Family,
    /// Length of the per-token vector each side must supply.
    pub scored_len_w: usize,
    pub scored_len_l: usize,
    /// True token counts before any padding.
    pub real_len_w: usize,
    pub real_len_l: usize,
}

impl SegmentedPair {
    /// `T'`, the number of feedback units.
    pub fn feedback_len(&self) -> usize {
        self.chosen.len()
    }
}

/// Segment a pair of responses with lengths `len_w`, `len_l`.
///
/// With `mask_padding`, padded static positions are masked out and each
/// side supplies its own length of per-token values. Without it, both sides
/// supply the full padded length and padding is scored literally.
pub fn segment_pair(
    len_w: usize,
    len_l: usize,
    family: Family,
    mask_padding: bool,
) -> Result<SegmentedPair> {
    match family {
        Family::Static { k } => {
            let s = xi_static(len_w, len_l, k)?;
            let build = |mask: &[bool]| -> Vec<Segment> {
                s.composition
                    .segments()
                    .into_iter()
                    .map(|r| {
                        if mask_padding {
                            let m = mask[r.clone()].to_vec();
                            Segment { range: r, mask: m }
                        } else {
                            Segment::unmasked(r)
                        }
                    })
                    .collect()
            };
            let (scored_len_w, scored_len_l) = if mask_padding {
                (len_w, len_l)
            } else {
                (s.padded_len, s.padded_len)
            };
            Ok(SegmentedPair {
                chosen: build(&s.mask_w),
                rejected: build(&s.mask_l),
                family,
                scored_len_w,
                scored_len_l,
                real_len_w: len_w,
                real_len_l: len_l,
            })
        }
        Family::Adaptive { m } => {
            let side = |len: usize| -> Result<Vec<Segment>> {
                Ok(xi_adaptive(len, m)?
                    .segments()
                    .into_iter()
                    .map(Segment::unmasked)
                    .collect())
            };
            Ok(SegmentedPair {
                chosen: side(len_w)?,
                rejected: side(len_l)?,
                family,
                scored_len_w: len_w,
                scored_len_l: len_l,
                real_len_w: len_w,
                real_len_l: len_l,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn static_examples() {
        assert_eq!(static_composition(10, 4).unwrap().parts(), &[4, 4, 2]);
        assert_eq!(static_composition(10, 1).unwrap().parts(), &[1; 10]);
        assert_eq!(static_composition(7, 100).unwrap().parts(), &[7]);
        assert_eq!(
            xi_static(3, 0, 2).unwrap_err(),
            CompositionError::EmptySide { len_w: 3, len_l: 0 }
        );
        assert_eq!(
            xi_static(3, 3, 0).unwrap_err(),
            CompositionError::InvalidParameter { name: "k", value: 0 }
        );
    }

    #[test]
    fn adaptive_examples() {
        assert_eq!(xi_adaptive(10, 3).unwrap().parts(), &[3, 3, 4]);
        assert_eq!(xi_adaptive(5, 1).unwrap().parts(), &[5]);
        assert_eq!(xi_adaptive(2, 3).unwrap().parts(), &[0, 1, 1]);
        assert!(!xi_adaptive(2, 3).unwrap().is_strong());
        assert_eq!(
            xi_adaptive(4, 0).unwrap_err(),
            CompositionError::InvalidParameter { name: "m", value: 0 }
        );
    }

    #[test]
    fn boundaries_are_prefix_sums() {
        let c = StrongComposition::new(vec![4, 4, 2]);
        assert_eq!(c.boundaries(), vec![0, 4, 8, 10]);
        assert_eq!(c.segments(), vec![0..4, 4..8, 8..10]);
    }

    #[test]
    fn pair_adaptive_one_part() {
        let s = segment_pair(4, 9, Family::Adaptive { m: 1 }, true).unwrap();
        assert_eq!(s.feedback_len(), 1);
        assert_eq!(s.chosen[0].range, 0..4);
        assert_eq!(s.rejected[0].range, 0..9);
    }

    #[test]
    fn pair_static_token_level_masks_short_side() {
        let s = segment_pair(3, 5, Family::Static { k: 1 }, true).unwrap();
        assert_eq!(s.feedback_len(), 5);
        assert_eq!(s.rejected.len(), 5);
        for (i, seg) in s.chosen.iter().enumerate() {
            assert_eq!(seg.range, i..i + 1);
            assert_eq!(seg.is_empty(), i >= 3);
        }
        assert!(s.rejected.iter().all(|seg| !seg.is_empty()));
        assert_eq!((s.scored_len_w, s.scored_len_l), (3, 5));

        let unmasked = segment_pair(3, 5, Family::Static { k: 1 }, false).unwrap();
        assert!(unmasked.chosen.iter().all(|seg| !seg.is_empty()));
        assert_eq!((unmasked.scored_len_w, unmasked.scored_len_l), (5, 5));
    }

    #[test]
    fn pair_adaptive_sides_independent() {
        let s = segment_pair(4, 6, Family::Adaptive { m: 2 }, true).unwrap();
        let lens = |v: &[Segment]| v.iter().map(|s| s.range.len()).collect::<Vec<_>>();
        assert_eq!(lens(&s.chosen), vec![2, 2]);
        assert_eq!(lens(&s.rejected), vec![3, 3]);
    }

    fn assert_partition(c: &StrongComposition, len: usize) {
        assert_eq!(c.total(), len);
        let mut covered = vec![0usize; len];
        let mut prev_end = 0;
        for seg in c.segments() {
            assert_eq!(seg.start, prev_end);
            prev_end = seg.end;
            for i in seg {
                covered[i] += 1;
            }
        }
        assert_eq!(prev_end, len);
        assert!(covered.iter().all(|&c| c == 1));
    }

    proptest! {
        #[test]
        fn static_partitions(len in 1usize..=512, k in 1usize..=64) {
            let c = static_composition(len, k).unwrap();
            assert_partition(&c, len);
            prop_assert!(c.is_strong());
            prop_assert_eq!(c.num_parts(), len.div_ceil(k));
            if k >= len {
                prop_assert_eq!(c.num_parts(), 1);
            }
        }

        #[test]
        fn adaptive_partitions(len in 0usize..=512, m in 1usize..=512) {
            let c = xi_adaptive(len, m).unwrap();
            assert_partition(&c, len);
            prop_assert_eq!(c.num_parts(), m);
            let lo = len / m;
            let hi = len.div_ceil(m);
            prop_assert!(c.parts().iter().all(|&p| p == lo || p == hi));
            if len >= m {
                prop_assert!(c.is_strong());
            }
        }

        #[test]
        fn static_pair_covers_padded_grid(lw in 1usize..=80, ll in 1usize..=80, k in 1usize..=16) {
            let s = segment_pair(lw, ll, Family::Static { k }, true).unwrap();
            prop_assert_eq!(s.chosen.len(), s.rejected.len());
            let active_w: usize = s.chosen.iter().map(|seg| seg.active().count()).sum();
            let active_l: usize = s.rejected.iter().map(|seg| seg.active().count()).sum();
            prop_assert_eq!(active_w, lw);
            prop_assert_eq!(active_l, ll);
            for (a, b) in s.chosen.iter().zip(&s.rejected) {
                prop_assert_eq!(&a.range, &b.range);
            }
        }
    }
}
