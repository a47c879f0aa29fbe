//! Pooling triplets over repeated generations and choosing which to keep.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extraction::{RawTriplet, TripletKey};
use crate::generation::bounded_index;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct Entry {
    count: usize,
    /// Pool position of the first occurrence.
    first_seen: usize,
}

/// Triplet counts over `n` samples. Duplicates inside one sample count.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TripletFrequency {
    counts: BTreeMap<TripletKey, Entry>,
    n: usize,
    total: usize,
}

impl TripletFrequency {
    pub fn samples(&self) -> usize {
        self.n
    }

    /// Number of triplets pooled, duplicates included.
    pub fn total(&self) -> usize {
        self.total
    }

    pub fn distinct(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn count(&self, key: &TripletKey) -> usize {
        self.counts.get(key).map_or(0, |e| e.count)
    }

    /// `(key, count)` in key order.
    pub fn iter(&self) -> impl Iterator<Item = (&TripletKey, usize)> {
        self.counts.iter().map(|(k, e)| (k, e.count))
    }

    /// Keys in order of first appearance.
    pub fn in_pool_order(&self) -> Vec<(&TripletKey, usize)> {
        let mut v: Vec<_> = self.counts.iter().collect();
        v.sort_by_key(|(_, e)| e.first_seen);
        v.into_iter().map(|(k, e)| (k, e.count)).collect()
    }

    pub fn score(&self, count: usize) -> f64 {
        (count as f64 / self.n.max(1) as f64).min(1.0)
    }
}

/// Counts canonical triplet keys over the samples. `N` is the number of
/// samples, including empty ones, and at least 1.
pub fn pool(per_sample: &[Vec<RawTriplet>]) -> TripletFrequency {
    let mut freq = TripletFrequency {
        n: per_sample.len().max(1),
        ..TripletFrequency::default()
    };
    for t in per_sample.iter().flatten() {
        let pos = freq.total;
        freq.counts
            .entry(t.key())
            .and_modify(|e| e.count += 1)
            .or_insert(Entry {
                count: 1,
                first_seen: pos,
            });
        freq.total += 1;
    }
    freq
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredTriplet {
    pub subject: String,
    pub verb: String,
    pub object: String,
    pub count: usize,
    pub score: f64,
}

impl ScoredTriplet {
    fn new(key: &TripletKey, count: usize, freq: &TripletFrequency) -> Self {
        Self {
            subject: key.subject.clone(),
            verb: key.verb.clone(),
            object: key.object.clone(),
            count,
            score: freq.score(count),
        }
    }
}

/// The `k` most frequent triplets; ties go to the smaller key.
pub fn select_topk(freq: &TripletFrequency, k: usize) -> Vec<ScoredTriplet> {
    let mut ranked: Vec<(&TripletKey, usize)> = freq.iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked
        .into_iter()
        .take(k)
        .map(|(key, c)| ScoredTriplet::new(key, c, freq))
        .collect()
}

/// Draws up to `k` distinct triplets without replacement, each draw
/// proportional to the remaining counts. Draws use ChaCha8 seeded with
/// `seed` and an exact integer index into the cumulative counts, so output
/// is identical across platforms.
pub fn select_sampling(freq: &TripletFrequency, k: usize, seed: u64) -> Vec<ScoredTriplet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool: Vec<(&TripletKey, usize)> = freq.iter().collect();
    let mut remaining: usize = pool.iter().map(|(_, c)| c).sum();
    let mut out = Vec::with_capacity(k.min(pool.len()));
    while out.len() < k && !pool.is_empty() {
        let mut r = bounded_index(rng.next_u64(), remaining);
        let idx = pool
            .iter()
            .position(|(_, c)| {
                if r < *c {
                    true
                } else {
                    r -= c;
                    false
                }
            })
            .expect("draw falls inside the remaining mass");
        let (key, c) = pool.remove(idx);
        remaining -= c;
        out.push(ScoredTriplet::new(key, c, freq));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    #[default]
    Topk,
    Sampling,
    /// Every distinct triplet, in order of first appearance.
    All,
}

impl SelectionMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            SelectionMode::Topk => "topk",
            SelectionMode::Sampling => "sampling",
            SelectionMode::All => "all",
        }
    }
}

impl fmt::Display for SelectionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SelectionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "topk" | "top-k" | "top_k" => Ok(SelectionMode::Topk),
            "sampling" => Ok(SelectionMode::Sampling),
            "all" => Ok(SelectionMode::All),
            other => Err(Error::Config(format!("unknown selection mode {other:?}"))),
        }
    }
}

pub fn select(
    freq: &TripletFrequency,
    mode: SelectionMode,
    k: usize,
    seed: u64,
) -> Result<Vec<ScoredTriplet>> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    Ok(match mode {
        SelectionMode::Topk => select_topk(freq, k),
        SelectionMode::Sampling => select_sampling(freq, k, seed),
        SelectionMode::All => freq
            .in_pool_order()
            .into_iter()
            .map(|(key, c)| ScoredTriplet::new(key, c, freq))
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extraction::ExtractorKind;
    use proptest::prelude::*;
    use std::collections::HashMap;

    fn t(v: &str) -> RawTriplet {
        RawTriplet::new("person", v, "bike", ExtractorKind::T2g, 0).unwrap()
    }

    fn freq_of(counts: &[(&str, usize)], n: usize) -> TripletFrequency {
        let mut samples: Vec<Vec<RawTriplet>> = vec![Vec::new(); n];
        for (v, c) in counts {
            for i in 0..*c {
                samples[i % n].push(t(v));
            }
        }
        pool(&samples)
    }

    fn verbs(s: &[ScoredTriplet]) -> Vec<&str> {
        s.iter().map(|x| x.verb.as_str()).collect()
    }

    #[test]
    fn pooling_counts() {
        let f = pool(&[vec![t("ride")], vec![t("ride")], vec![t("push")]]);
        assert_eq!(
            (
                f.samples(),
                f.count(&t("ride").key()),
                f.count(&t("push").key())
            ),
            (3, 2, 1)
        );
        let empty = pool(&[vec![], vec![], vec![]]);
        assert!(empty.is_empty());
        assert_eq!(empty.samples(), 3);
        let dup = pool(&[vec![t("ride"), t("ride")]]);
        assert_eq!(dup.count(&t("ride").key()), 2);
        assert_eq!(dup.score(2), 1.0);
    }

    #[test]
    fn topk_ranking_and_ties() {
        let f = freq_of(&[("a1", 5), ("b1", 3), ("c1", 1)], 8);
        let top = select_topk(&f, 2);
        assert_eq!(verbs(&top), vec!["a1", "b1"]);
        assert_eq!(top[0].score, 5.0 / 8.0);
        assert_eq!(top[1].score, 3.0 / 8.0);
        let tie = freq_of(&[("y1", 1), ("x1", 1)], 2);
        assert_eq!(verbs(&select_topk(&tie, 1)), vec!["x1"]);
        assert_eq!(select_topk(&f, 10).len(), 3);
    }

    #[test]
    fn sampling_examples() {
        let single = freq_of(&[("a1", 7)], 7);
        for k in 1..4 {
            assert_eq!(verbs(&select_sampling(&single, k, 3)), vec!["a1"]);
        }
        let two = freq_of(&[("a1", 3), ("b1", 1)], 4);
        for seed in 0..50 {
            let drawn = select_sampling(&two, 2, seed);
            let mut got = verbs(&drawn);
            got.sort();
            assert_eq!(got, vec!["a1", "b1"]);
        }
        assert_eq!(select_sampling(&two, 2, 9), select_sampling(&two, 2, 9));
    }

    #[test]
    fn sampling_follows_counts() {
        let f = freq_of(&[("a1", 3), ("b1", 1)], 4);
        let trials = 10_000;
        let hits = (0..trials)
            .filter(|&s| select_sampling(&f, 1, s)[0].verb == "a1")
            .count();
        let p = hits as f64 / trials as f64;
        assert!((p - 0.75).abs() <= 0.02, "{p}");
    }

    #[test]
    fn all_mode_keeps_pool_order() {
        let f = pool(&[vec![t("zz"), t("aa")], vec![t("zz")]]);
        let all = select(&f, SelectionMode::All, 1, 0).unwrap();
        assert_eq!(verbs(&all), vec!["zz", "aa"]);
        assert!(select(&f, SelectionMode::Topk, 0, 0).is_err());
    }

    proptest! {
        #[test]
        fn topk_properties(counts in prop::collection::vec(1usize..6, 1..8), k in 1usize..10, n in 1usize..6) {
            let names: Vec<String> = (0..counts.len()).map(|i| format!("v{i}")).collect();
            let support_counts: Vec<(&str, usize)> = names.iter().map(String::as_str).zip(counts.iter().copied()).collect();
            let f = freq_of(&support_counts, n);
            prop_assert_eq!(f.total(), counts.iter().sum::<usize>());
            let top = select_topk(&f, k);
            prop_assert_eq!(top.len(), k.min(counts.len()));
            prop_assert!(top.windows(2).all(|w| w[0].count >= w[1].count));
            prop_assert!(top.iter().all(|s| s.score > 0.0 && s.score <= 1.0));
        }

        #[test]
        fn sampling_properties(counts in prop::collection::vec(1usize..6, 1..8), k in 1usize..10, seed in any::<u64>()) {
            let names: Vec<String> = (0..counts.len()).map(|i| format!("v{i}")).collect();
            let support_counts: Vec<(&str, usize)> = names.iter().map(String::as_str).zip(counts.iter().copied()).collect();
            let f = freq_of(&support_counts, 4);
            let got = select_sampling(&f, k, seed);
            prop_assert_eq!(got.len(), k.min(counts.len()));
            let support: HashMap<&str, usize> = support_counts.iter().copied().collect();
            let mut seen = std::collections::HashSet::new();
            for s in &got {
                let expected = support.get(s.verb.as_str()).copied();
                prop_assert_eq!(expected, Some(s.count));
                prop_assert!(seen.insert(s.verb.clone()));
            }
            prop_assert_eq!(select_sampling(&f, k, seed), got);
        }
    }
}
