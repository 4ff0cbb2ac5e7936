//! Stage-2 subset selection.
//!
//! Given a window of waiting candidates and a worker with `c` free slots,
//! pick `Q` with `|Q| <= min(c, R_max)` maximising a score that depends on
//! `Q` only through `delta = sum of s_i`. Three solvers, all returning the
//! same tie-broken choice:
//!
//! - [`best_subset_exhaustive`] enumerates all `2^n` subsets;
//! - [`best_subset_bitset`] builds per-cardinality reachable-sum bitmasks
//!   (`dp[j] |= dp[j-1] << s_i`) and scores every reachable sum;
//! - [`best_subset_two_probe`] exploits the single kink of the single-step
//!   score and only scores the reachable sums adjacent to the margin.
//!
//! Ties are broken by smaller cardinality, then smaller `delta`, then the
//! lexicographically smallest ascending id list. The empty subset is always
//! a candidate.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::model::{RequestId, Tokens};
use crate::scoring::fscore_step;

pub const MAX_WINDOW: usize = 16;
pub const DEFAULT_SUM_BOUND: Tokens = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Candidate {
    pub id: RequestId,
    pub size: Tokens,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateWindow {
    candidates: Vec<Candidate>,
    max_cardinality: usize,
}

impl CandidateWindow {
    pub fn new(candidates: Vec<Candidate>, max_cardinality: usize) -> Result<Self> {
        if candidates.len() > MAX_WINDOW {
            return Err(Error::WindowTooLarge {
                size: candidates.len(),
                max: MAX_WINDOW,
            });
        }
        let max_cardinality = max_cardinality.min(candidates.len());
        Ok(Self {
            candidates,
            max_cardinality,
        })
    }

    pub fn candidates(&self) -> &[Candidate] {
        &self.candidates
    }

    pub fn max_cardinality(&self) -> usize {
        self.max_cardinality
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn total(&self) -> Tokens {
        self.candidates.iter().map(|c| c.size).sum()
    }

    /// Candidates in ascending id order, the order reconstruction walks.
    fn by_id(&self) -> Vec<Candidate> {
        let mut items = self.candidates.clone();
        items.sort_by_key(|c| c.id);
        items
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubsetChoice {
    /// Ascending.
    pub ids: Vec<RequestId>,
    pub delta: Tokens,
    pub score: f64,
}

impl SubsetChoice {
    pub fn empty(score: f64) -> Self {
        Self {
            ids: Vec::new(),
            delta: 0,
            score,
        }
    }

    pub fn cardinality(&self) -> usize {
        self.ids.len()
    }
}

/// Orders `(score, cardinality, delta)` keys; `Less` means `a` is preferred.
fn rank(a: (f64, usize, Tokens), b: (f64, usize, Tokens)) -> Ordering {
    b.0.partial_cmp(&a.0)
        .unwrap_or(Ordering::Equal)
        .then(a.1.cmp(&b.1))
        .then(a.2.cmp(&b.2))
}

pub fn best_subset_exhaustive<F>(window: &CandidateWindow, scorer: F) -> SubsetChoice
where
    F: Fn(Tokens) -> f64,
{
    let items = &window.candidates;
    let mut best = SubsetChoice::empty(scorer(0));
    for mask in 1u32..(1u32 << items.len()) {
        let card = mask.count_ones() as usize;
        if card > window.max_cardinality {
            continue;
        }
        let delta: Tokens = items
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, c)| c.size)
            .sum();
        let score = scorer(delta);
        let order = rank(
            (score, card, delta),
            (best.score, best.cardinality(), best.delta),
        );
        if order == Ordering::Greater {
            continue;
        }
        let mut ids: Vec<RequestId> = items
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, c)| c.id)
            .collect();
        ids.sort_unstable();
        if order == Ordering::Less || ids < best.ids {
            best = SubsetChoice { ids, delta, score };
        }
    }
    best
}

/// Fixed-width bitmask over sums `0..len`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bitset {
    words: Vec<u64>,
    len: usize,
}

impl Bitset {
    pub fn new(len: usize) -> Self {
        Self {
            words: vec![0; len.div_ceil(64)],
            len,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn set(&mut self, bit: usize) {
        debug_assert!(bit < self.len);
        self.words[bit / 64] |= 1 << (bit % 64);
    }

    pub fn get(&self, bit: usize) -> bool {
        bit < self.len && self.words[bit / 64] & (1 << (bit % 64)) != 0
    }

    /// `self |= src << shift`, dropping bits past `len`.
    pub fn or_shifted(&mut self, src: &Bitset, shift: usize) {
        let word_shift = shift / 64;
        let bit_shift = shift % 64;
        for w in (word_shift..self.words.len()).rev() {
            let sw = w - word_shift;
            let mut v = src.words.get(sw).copied().unwrap_or(0) << bit_shift;
            if bit_shift > 0 && sw > 0 {
                v |= src.words.get(sw - 1).copied().unwrap_or(0) >> (64 - bit_shift);
            }
            self.words[w] |= v;
        }
        let tail = self.len % 64;
        if tail != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << tail) - 1;
            }
        }
    }

    pub fn iter_ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(w, &word)| {
            let mut rest = word;
            std::iter::from_fn(move || {
                if rest == 0 {
                    return None;
                }
                let b = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                Some(w * 64 + b)
            })
        })
    }

    /// Largest set bit `<= bit`.
    pub fn last_at_or_below(&self, bit: usize) -> Option<usize> {
        if self.len == 0 {
            return None;
        }
        let bit = bit.min(self.len - 1);
        let mut w = bit / 64;
        let mut word = self.words[w] & (u64::MAX >> (63 - bit % 64));
        loop {
            if word != 0 {
                return Some(w * 64 + 63 - word.leading_zeros() as usize);
            }
            if w == 0 {
                return None;
            }
            w -= 1;
            word = self.words[w];
        }
    }

    /// Smallest set bit `> bit`.
    pub fn first_above(&self, bit: usize) -> Option<usize> {
        let start = bit.checked_add(1)?;
        if start >= self.len {
            return None;
        }
        let mut w = start / 64;
        let mut word = self.words[w] & (u64::MAX << (start % 64));
        loop {
            if word != 0 {
                return Some(w * 64 + word.trailing_zeros() as usize);
            }
            w += 1;
            if w == self.words.len() {
                return None;
            }
            word = self.words[w];
        }
    }
}

/// `dp[j]` bit `b` is set iff some `j`-subset of `sizes` sums to `b`, for
/// `j <= max_cardinality`.
pub fn reachable_sums(sizes: &[Tokens], max_cardinality: usize) -> Vec<Bitset> {
    let width = sizes.iter().sum::<Tokens>() as usize + 1;
    let mut dp = vec![Bitset::new(width); max_cardinality + 1];
    dp[0].set(0);
    for &s in sizes {
        for j in (1..=max_cardinality).rev() {
            let (lower, upper) = dp.split_at_mut(j);
            upper[0].or_shifted(&lower[j - 1], s as usize);
        }
    }
    dp
}

/// Reachable sums of every suffix of the id-sorted window, so the
/// lexicographically smallest subset with a given `(j, delta)` can be read
/// back greedily.
struct SuffixTable {
    items: Vec<Candidate>,
    /// `suffix[i][j]`: sums of `j`-subsets of `items[i..]`.
    suffix: Vec<Vec<Bitset>>,
}

impl SuffixTable {
    fn build(window: &CandidateWindow) -> Self {
        let items = window.by_id();
        let max_card = window.max_cardinality;
        let width = window.total() as usize + 1;
        let mut empty = vec![Bitset::new(width); max_card + 1];
        empty[0].set(0);
        let mut suffix = vec![empty];
        for item in items.iter().rev() {
            let mut dp = suffix.last().unwrap().clone();
            for j in (1..=max_card).rev() {
                let (lower, upper) = dp.split_at_mut(j);
                upper[0].or_shifted(&lower[j - 1], item.size as usize);
            }
            suffix.push(dp);
        }
        suffix.reverse();
        Self { items, suffix }
    }

    /// `dp[j]` over the whole window.
    fn full(&self) -> &[Bitset] {
        &self.suffix[0]
    }

    fn reconstruct(&self, mut card: usize, mut delta: Tokens) -> Vec<RequestId> {
        let mut ids = Vec::with_capacity(card);
        for (i, item) in self.items.iter().enumerate() {
            if card == 0 {
                break;
            }
            if item.size <= delta && self.suffix[i + 1][card - 1].get((delta - item.size) as usize)
            {
                ids.push(item.id);
                card -= 1;
                delta -= item.size;
            }
        }
        debug_assert!(card == 0 && delta == 0);
        ids
    }
}

fn pick_best(
    probes: impl Iterator<Item = (usize, Tokens)>,
    scorer: impl Fn(Tokens) -> f64,
) -> (f64, usize, Tokens) {
    let mut best = (scorer(0), 0, 0);
    for (card, delta) in probes {
        let key = (scorer(delta), card, delta);
        if rank(key, best) == Ordering::Less {
            best = key;
        }
    }
    best
}

pub fn best_subset_bitset<F>(
    window: &CandidateWindow,
    scorer: F,
    sum_bound: Tokens,
) -> Result<SubsetChoice>
where
    F: Fn(Tokens) -> f64,
{
    if let Some(c) = window.candidates.iter().find(|c| c.size > sum_bound) {
        return Err(Error::SumBound {
            sum: c.size,
            bound: sum_bound,
        });
    }
    let total = window.total();
    if total > sum_bound {
        return Err(Error::SumBound {
            sum: total,
            bound: sum_bound,
        });
    }
    let table = SuffixTable::build(window);
    let probes = table
        .full()
        .iter()
        .enumerate()
        .skip(1)
        .flat_map(|(j, bits)| bits.iter_ones().map(move |b| (j, b as Tokens)));
    let (score, card, delta) = pick_best(probes, &scorer);
    Ok(SubsetChoice {
        ids: table.reconstruct(card, delta),
        delta,
        score,
    })
}

/// Exact for the single-step score: at each cardinality the score rises
/// with slope 1 up to the margin and is non-increasing past it, so only the
/// largest reachable sum `<= margin` and the smallest `> margin` can win.
pub fn best_subset_two_probe(
    window: &CandidateWindow,
    margin: Tokens,
    workers: usize,
) -> SubsetChoice {
    let scorer = |delta| fscore_step(delta, margin, workers);
    let table = SuffixTable::build(window);
    let m = usize::try_from(margin).unwrap_or(usize::MAX);
    let probes = table
        .full()
        .iter()
        .enumerate()
        .skip(1)
        .flat_map(|(j, bits)| {
            let below = bits.last_at_or_below(m);
            let above = bits.first_above(m);
            below
                .into_iter()
                .chain(above)
                .map(move |b| (j, b as Tokens))
        });
    let (score, card, delta) = pick_best(probes, scorer);
    SubsetChoice {
        ids: table.reconstruct(card, delta),
        delta,
        score,
    }
}
