//! Semantic Recall and threshold-averaged semantic mAP.
//!
//! Predictions carry free-form verb phrases. For every similarity threshold
//! a prediction is expanded to each vocabulary verb it is close enough to,
//! and the expanded set is scored with detection-style AP. Predictions that
//! match no ground truth of their class are ignored rather than counted as
//! false positives; only repeated hits on an already matched ground truth
//! count against precision.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::de::{self, MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::datamodel::{
    GroundTruthInteraction, PredictedInteraction, Protocol, Rarity, RaritySplit,
};
use crate::error::{Error, Result};
use crate::geometry::{pair_overlap, spatial_match, DEFAULT_IOU_THRESHOLD};
use crate::text::fnv1a;
use crate::vocab::{map_to_vocabulary, Similarity, VerbVocabulary};

pub const DEFAULT_THRESHOLDS: [f64; 5] = [0.6, 0.7, 0.8, 0.9, 0.95];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassMode {
    /// One AP class per vocabulary verb.
    #[default]
    Verb,
    /// One AP class per (verb, object label); enables rare/non-rare splits.
    Hoi,
}

impl FromStr for ClassMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "verb" => Ok(ClassMode::Verb),
            "hoi" => Ok(ClassMode::Hoi),
            other => Err(Error::Config(format!("unknown class mode {other:?}"))),
        }
    }
}

impl fmt::Display for ClassMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClassMode::Verb => "verb",
            ClassMode::Hoi => "hoi",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub thresholds: Vec<f64>,
    pub iou_threshold: f64,
    #[serde(default)]
    pub class_mode: ClassMode,
    pub protocol: Protocol,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            class_mode: ClassMode::Verb,
            protocol: Protocol::Annotated,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thresholds.is_empty() {
            return Err(Error::Config("similarity thresholds are empty".into()));
        }
        if let Some(t) = self.thresholds.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
            return Err(Error::Config(format!(
                "similarity threshold {t} outside (0, 1]"
            )));
        }
        if self.thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "similarity thresholds {:?} are not strictly increasing",
                self.thresholds
            )));
        }
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(Error::Config(format!(
                "IoU threshold {} outside (0, 1]",
                self.iou_threshold
            )));
        }
        Ok(())
    }

    /// Human-readable list of fields that differ from `other`.
    pub fn differences(&self, other: &EvalConfig) -> Vec<String> {
        let mut d = Vec::new();
        if self.thresholds != other.thresholds {
            d.push(format!(
                "thresholds {:?} vs {:?}",
                self.thresholds, other.thresholds
            ));
        }
        if self.iou_threshold != other.iou_threshold {
            d.push(format!(
                "iou_threshold {} vs {}",
                self.iou_threshold, other.iou_threshold
            ));
        }
        if self.class_mode != other.class_mode {
            d.push(format!(
                "class_mode {} vs {}",
                self.class_mode, other.class_mode
            ));
        }
        if self.protocol != other.protocol {
            d.push(format!("protocol {} vs {}", self.protocol, other.protocol));
        }
        d
    }
}

/// Values keyed by similarity threshold, serialized as a JSON object with
/// keys like `"0.6"` in threshold order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ThresholdMap(pub Vec<(f64, f64)>);

impl ThresholdMap {
    pub fn get(&self, tau: f64) -> Option<f64> {
        self.0.iter().find(|(t, _)| *t == tau).map(|(_, v)| *v)
    }

    pub fn thresholds(&self) -> Vec<f64> {
        self.0.iter().map(|(t, _)| *t).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.0.iter().map(|(_, v)| *v).collect()
    }

    pub fn mean(&self) -> f64 {
        if self.0.is_empty() {
            return 0.0;
        }
        self.0.iter().map(|(_, v)| v).sum::<f64>() / self.0.len() as f64
    }
}

impl Serialize for ThresholdMap {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(self.0.len()))?;
        for (t, v) in &self.0 {
            m.serialize_entry(&t.to_string(), v)?;
        }
        m.end()
    }
}

impl<'de> Deserialize<'de> for ThresholdMap {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = ThresholdMap;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a map from threshold to value")
            }
            fn visit_map<A: MapAccess<'de>>(
                self,
                mut a: A,
            ) -> std::result::Result<ThresholdMap, A::Error> {
                let mut out = Vec::new();
                while let Some((k, v)) = a.next_entry::<String, f64>()? {
                    let t: f64 = k
                        .parse()
                        .map_err(|_| de::Error::custom(format!("bad threshold key {k:?}")))?;
                    out.push((t, v));
                }
                out.sort_by(|x, y| x.0.total_cmp(&y.0));
                Ok(ThresholdMap(out))
            }
        }
        d.deserialize_map(V)
    }
}

/// Spatial-and-semantic Semantic Recall: each ground truth scores the best
/// similarity among spatially matched predictions (0 when none match; negative
/// similarities count as 0). Returns the mean over ground truths.
pub fn semantic_recall(
    predictions: &[PredictedInteraction],
    ground_truth: &[GroundTruthInteraction],
    sim: &dyn Similarity,
    iou_threshold: f64,
) -> Result<f64> {
    if ground_truth.is_empty() {
        return Err(Error::Undefined(
            "semantic recall over zero ground-truth interactions",
        ));
    }
    Ok(recall_terms(predictions, ground_truth, sim, iou_threshold)?
        .iter()
        .sum::<f64>()
        / ground_truth.len() as f64)
}

fn recall_terms(
    predictions: &[PredictedInteraction],
    ground_truth: &[GroundTruthInteraction],
    sim: &dyn Similarity,
    iou_threshold: f64,
) -> Result<Vec<f64>> {
    ground_truth
        .iter()
        .map(|g| {
            let gt_pair = (g.human_box, g.object_box);
            let mut best = 0.0f64;
            for p in predictions {
                if spatial_match(&(p.human_box, p.object_box), &gt_pair, iou_threshold) {
                    best = best.max(sim.similarity(&p.verb_phrase, &g.verb)?);
                }
            }
            Ok(best)
        })
        .collect()
}

/// AP class: a vocabulary verb, optionally paired with an object label.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClassKey {
    pub verb_id: usize,
    pub verb: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object: Option<String>,
}

impl fmt::Display for ClassKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.object {
            Some(o) => write!(f, "{}|{}", self.verb, o),
            None => f.write_str(&self.verb),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    TruePositive,
    Duplicate,
    Ignored,
}

/// One expanded prediction after matching.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub class: ClassKey,
    pub score: f64,
    pub outcome: Outcome,
    /// Index of the originating prediction within its image.
    pub prediction: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GtClassInfo {
    pub count: usize,
    pub categories: BTreeSet<u32>,
    pub missing_category: bool,
}

/// Matching results for one image; merge with [`aggregate_report`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageReport {
    pub image_id: String,
    pub config: EvalConfig,
    /// Fingerprint of the vocabulary the image was evaluated against.
    pub vocabulary: String,
    pub num_predictions: usize,
    pub gt_classes: BTreeMap<ClassKey, GtClassInfo>,
    /// Entries per threshold, in prediction order.
    pub entries: Vec<Vec<RankedEntry>>,
    pub recall_sum: f64,
    pub num_gt: usize,
}

fn vocabulary_fingerprint(vocab: &VerbVocabulary) -> String {
    format!(
        "{}:{}:{:016x}",
        vocab.source(),
        vocab.len(),
        fnv1a(&vocab.verbs().join("\n"))
    )
}

fn class_of(verb_id: usize, vocab: &VerbVocabulary, object: &str, mode: ClassMode) -> ClassKey {
    ClassKey {
        verb_id,
        verb: vocab.verbs()[verb_id].clone(),
        object: match mode {
            ClassMode::Verb => None,
            ClassMode::Hoi => Some(object.to_string()),
        },
    }
}

/// Matches one image's predictions against its ground truth at every
/// threshold.
pub fn evaluate_image(
    image_id: &str,
    predictions: &[PredictedInteraction],
    ground_truth: &[GroundTruthInteraction],
    vocab: &VerbVocabulary,
    sim: &dyn Similarity,
    config: &EvalConfig,
) -> Result<ImageReport> {
    config.validate()?;
    if let Some((i, p)) = predictions
        .iter()
        .enumerate()
        .find(|(_, p)| !p.score.is_finite())
    {
        return Err(Error::validation(
            format!("image {image_id} prediction {i}"),
            format!("non-finite score {}", p.score),
        ));
    }
    let mut gt_classes: BTreeMap<ClassKey, GtClassInfo> = BTreeMap::new();
    let mut gt_class_of = Vec::with_capacity(ground_truth.len());
    for (gi, g) in ground_truth.iter().enumerate() {
        let id = vocab.index_of(&g.verb).ok_or_else(|| {
            Error::Config(format!(
                "image {image_id} ground truth {gi}: verb {:?} is not in vocabulary {:?}",
                g.verb,
                vocab.source()
            ))
        })?;
        let key = class_of(id, vocab, &g.object_label, config.class_mode);
        let info = gt_classes.entry(key.clone()).or_default();
        info.count += 1;
        match g.hoi_category_id {
            Some(c) => {
                info.categories.insert(c);
            }
            None => info.missing_category = true,
        }
        gt_class_of.push(key);
    }

    let mut phrases: Vec<String> = predictions.iter().map(|p| p.verb_phrase.clone()).collect();
    phrases.extend(ground_truth.iter().map(|g| g.verb.clone()));
    phrases.extend(vocab.verbs().iter().cloned());
    phrases.sort();
    phrases.dedup();
    sim.prefetch(&phrases)?;

    // Expansion at the lowest threshold carries the similarity, so higher
    // thresholds only filter it.
    let lowest = config.thresholds[0];
    let expansions: Vec<Vec<(usize, f64)>> = predictions
        .iter()
        .map(|p| map_to_vocabulary(&p.verb_phrase, vocab, lowest, sim))
        .collect::<Result<_>>()?;

    let mut entries = Vec::with_capacity(config.thresholds.len());
    for &tau in &config.thresholds {
        let mut by_class: BTreeMap<ClassKey, Vec<usize>> = BTreeMap::new();
        for (pi, exp) in expansions.iter().enumerate() {
            for &(vid, s) in exp {
                if s >= tau {
                    by_class
                        .entry(class_of(
                            vid,
                            vocab,
                            &predictions[pi].object_label,
                            config.class_mode,
                        ))
                        .or_default()
                        .push(pi);
                }
            }
        }
        let mut level = Vec::new();
        for (class, mut preds) in by_class {
            preds.sort_by(|&a, &b| predictions[b].score.total_cmp(&predictions[a].score));
            let candidates: Vec<usize> = (0..ground_truth.len())
                .filter(|&g| gt_class_of[g] == class)
                .collect();
            let mut matched = vec![false; ground_truth.len()];
            for pi in preds {
                let p = &predictions[pi];
                let pred_pair = (p.human_box, p.object_box);
                let mut any = false;
                let mut best: Option<(usize, f64)> = None;
                for &g in &candidates {
                    let gt_pair = (ground_truth[g].human_box, ground_truth[g].object_box);
                    if !spatial_match(&pred_pair, &gt_pair, config.iou_threshold) {
                        continue;
                    }
                    any = true;
                    if matched[g] {
                        continue;
                    }
                    let ov = pair_overlap(&pred_pair, &gt_pair);
                    if best.is_none_or(|(_, b)| ov > b) {
                        best = Some((g, ov));
                    }
                }
                let outcome = match (best, any) {
                    (Some((g, _)), _) => {
                        matched[g] = true;
                        Outcome::TruePositive
                    }
                    (None, true) => Outcome::Duplicate,
                    (None, false) => Outcome::Ignored,
                };
                level.push(RankedEntry {
                    class: class.clone(),
                    score: p.score,
                    outcome,
                    prediction: pi,
                });
            }
        }
        level.sort_by_key(|e| e.prediction);
        entries.push(level);
    }

    let recall_sum = recall_terms(predictions, ground_truth, sim, config.iou_threshold)?
        .iter()
        .sum();
    Ok(ImageReport {
        image_id: image_id.to_string(),
        config: config.clone(),
        vocabulary: vocabulary_fingerprint(vocab),
        num_predictions: predictions.len(),
        gt_classes,
        entries,
        recall_sum,
        num_gt: ground_truth.len(),
    })
}

/// Non-interpolated AP: the sum of precision at each true positive divided
/// by the ground-truth count. Entries must already be ranked; ignored
/// entries are skipped.
pub fn average_precision(ranked: &[Outcome], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let (mut seen, mut tp, mut acc) = (0usize, 0usize, 0.0f64);
    for o in ranked {
        match o {
            Outcome::Ignored => continue,
            Outcome::TruePositive => {
                seen += 1;
                tp += 1;
                acc += tp as f64 / seen as f64;
            }
            Outcome::Duplicate => seen += 1,
        }
    }
    acc / num_gt as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerClassAp {
    pub class: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rarity: Option<Rarity>,
    pub num_gt: usize,
    pub ap: ThresholdMap,
    pub true_positives: Vec<usize>,
    pub duplicates: Vec<usize>,
    pub ignored: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub map_per_threshold: ThresholdMap,
    pub map_avg: f64,
    pub num_classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub full: SplitSummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rare: Option<SplitSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nonrare: Option<SplitSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub map_per_threshold: ThresholdMap,
    pub map_avg: f64,
    /// Semantic Recall in [0, 1].
    pub sr: f64,
    pub splits: Splits,
    pub per_class: Vec<PerClassAp>,
    pub config: EvalConfig,
    pub vocabulary: String,
    pub num_images: usize,
    pub num_gt: usize,
    pub num_predictions: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_generations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

fn summarize<'a>(
    thresholds: &[f64],
    classes: impl Iterator<Item = &'a PerClassAp>,
) -> SplitSummary {
    let classes: Vec<&PerClassAp> = classes.collect();
    let map = ThresholdMap(
        thresholds
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let v = if classes.is_empty() {
                    0.0
                } else {
                    classes.iter().map(|c| c.ap.0[i].1).sum::<f64>() / classes.len() as f64
                };
                (t, v)
            })
            .collect(),
    );
    SplitSummary {
        map_avg: map.mean(),
        map_per_threshold: map,
        num_classes: classes.len(),
    }
}

/// Pools per-image results into dataset-level AP per class. Ranking is by
/// score, ties in image then prediction order. Rare/non-rare splits need
/// per-HOI classes and `split`.
pub fn aggregate_report(
    reports: &[ImageReport],
    split: Option<&RaritySplit>,
) -> Result<MetricReport> {
    let first = reports
        .first()
        .ok_or(Error::Undefined("metric report over zero images"))?;
    for r in &reports[1..] {
        let diffs = r.config.differences(&first.config);
        if !diffs.is_empty() {
            return Err(Error::Incompatible(format!(
                "image {} was evaluated with a different config: {}",
                r.image_id,
                diffs.join("; ")
            )));
        }
        if r.vocabulary != first.vocabulary {
            return Err(Error::Incompatible(format!(
                "image {} was evaluated against vocabulary {} instead of {}",
                r.image_id, r.vocabulary, first.vocabulary
            )));
        }
    }
    let config = &first.config;
    let nt = config.thresholds.len();

    let mut gt: BTreeMap<ClassKey, GtClassInfo> = BTreeMap::new();
    for r in reports {
        for (k, info) in &r.gt_classes {
            let acc = gt.entry(k.clone()).or_default();
            acc.count += info.count;
            acc.categories.extend(info.categories.iter().copied());
            acc.missing_category |= info.missing_category;
        }
    }
    let num_gt: usize = reports.iter().map(|r| r.num_gt).sum();
    if num_gt == 0 {
        return Err(Error::Undefined(
            "metric report over zero ground-truth interactions",
        ));
    }

    let mut ranked: BTreeMap<&ClassKey, Vec<Vec<(f64, Outcome)>>> =
        gt.keys().map(|k| (k, vec![Vec::new(); nt])).collect();
    let mut ignored_extra = 0usize;
    for r in reports {
        if r.entries.len() != nt {
            return Err(Error::Incompatible(format!(
                "image {} has {} threshold levels, expected {nt}",
                r.image_id,
                r.entries.len()
            )));
        }
        for (ti, level) in r.entries.iter().enumerate() {
            for e in level {
                match ranked.get_mut(&e.class) {
                    Some(lists) => lists[ti].push((e.score, e.outcome)),
                    None => ignored_extra += 1,
                }
            }
        }
    }
    log::debug!("{ignored_extra} expanded predictions fell in classes without ground truth");

    let use_splits = split.is_some() && config.class_mode == ClassMode::Hoi;
    let mut per_class = Vec::with_capacity(gt.len());
    for (key, mut lists) in ranked {
        let info = &gt[key];
        let rarity = if use_splits {
            let split = split.expect("checked above");
            if info.missing_category || info.categories.len() != 1 {
                return Err(Error::Config(format!(
                    "class {key} maps to HOI categories {:?}{}; splits need exactly one",
                    info.categories,
                    if info.missing_category {
                        " and some unlabeled ground truth"
                    } else {
                        ""
                    }
                )));
            }
            Some(split.rarity(*info.categories.iter().next().expect("one category"))?)
        } else {
            None
        };
        let mut ap = Vec::with_capacity(nt);
        let (mut tps, mut dups, mut igns) = (Vec::new(), Vec::new(), Vec::new());
        for (ti, list) in lists.iter_mut().enumerate() {
            // stable: equal scores keep image and prediction order
            list.sort_by(|a, b| b.0.total_cmp(&a.0));
            let outcomes: Vec<Outcome> = list.iter().map(|(_, o)| *o).collect();
            ap.push((
                config.thresholds[ti],
                average_precision(&outcomes, info.count),
            ));
            let count = |o: Outcome| outcomes.iter().filter(|x| **x == o).count();
            tps.push(count(Outcome::TruePositive));
            dups.push(count(Outcome::Duplicate));
            igns.push(count(Outcome::Ignored));
        }
        per_class.push(PerClassAp {
            class: key.to_string(),
            rarity,
            num_gt: info.count,
            ap: ThresholdMap(ap),
            true_positives: tps,
            duplicates: dups,
            ignored: igns,
        });
    }

    let full = summarize(&config.thresholds, per_class.iter());
    let (rare, nonrare) = if use_splits {
        (
            Some(summarize(
                &config.thresholds,
                per_class.iter().filter(|c| c.rarity == Some(Rarity::Rare)),
            )),
            Some(summarize(
                &config.thresholds,
                per_class
                    .iter()
                    .filter(|c| c.rarity == Some(Rarity::NonRare)),
            )),
        )
    } else {
        (None, None)
    };
    Ok(MetricReport {
        map_per_threshold: full.map_per_threshold.clone(),
        map_avg: full.map_avg,
        sr: reports.iter().map(|r| r.recall_sum).sum::<f64>() / num_gt as f64,
        splits: Splits {
            full,
            rare,
            nonrare,
        },
        per_class,
        config: config.clone(),
        vocabulary: first.vocabulary.clone(),
        num_images: reports.len(),
        num_gt,
        num_predictions: reports.iter().map(|r| r.num_predictions).sum(),
        num_generations: None,
        label: None,
    })
}

/// Single-image convenience over [`evaluate_image`] and [`aggregate_report`].
pub fn semantic_map(
    predictions: &[PredictedInteraction],
    ground_truth: &[GroundTruthInteraction],
    vocab: &VerbVocabulary,
    sim: &dyn Similarity,
    config: &EvalConfig,
) -> Result<MetricReport> {
    let r = evaluate_image("image", predictions, ground_truth, vocab, sim, config)?;
    aggregate_report(&[r], None)
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(json: &str, context: &str) -> Result<Self> {
        serde_json::from_str(json).map_err(|e| Error::parse(context, e))
    }

    /// CSV header matching [`MetricReport::csv_row`].
    pub fn csv_header(&self) -> String {
        let mut h = String::from("label,full,rare,nonrare,sr");
        for t in self.map_per_threshold.thresholds() {
            h.push_str(&format!(",map@{t}"));
        }
        h
    }

    /// mAP values in percent and SR ×100, two decimals. Missing splits are
    /// left empty.
    pub fn csv_row(&self) -> String {
        let pct = |v: f64| format!("{:.2}", v * 100.0);
        let split =
            |s: &Option<SplitSummary>| s.as_ref().map(|s| pct(s.map_avg)).unwrap_or_default();
        let mut row = format!(
            "{},{},{},{},{}",
            self.label.as_deref().unwrap_or(""),
            pct(self.splits.full.map_avg),
            split(&self.splits.rare),
            split(&self.splits.nonrare),
            pct(self.sr)
        );
        for v in self.map_per_threshold.values() {
            row.push(',');
            row.push_str(&pct(v));
        }
        row
    }

    pub fn to_csv(&self) -> String {
        format!("{}\n{}\n", self.csv_header(), self.csv_row())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoundingBox;
    use crate::vocab::{EmbeddingSimilarity, ExactMatch, TsvEmbeddings};

    fn bb(x1: f64, y1: f64, x2: f64, y2: f64) -> BoundingBox {
        BoundingBox::new(x1, y1, x2, y2).unwrap()
    }

    fn gt(h: BoundingBox, o: BoundingBox, verb: &str) -> GroundTruthInteraction {
        GroundTruthInteraction {
            human_box: h,
            object_box: o,
            object_label: "bike".into(),
            verb: verb.into(),
            hoi_category_id: None,
        }
    }

    fn pred(h: BoundingBox, o: BoundingBox, verb: &str, score: f64) -> PredictedInteraction {
        PredictedInteraction::new(h, o, "bike", verb, score).unwrap()
    }

    /// Table similarity: identity is 1, listed pairs are symmetric, others 0.
    struct Table(Vec<(&'static str, &'static str, f64)>);

    impl Similarity for Table {
        fn similarity(&self, a: &str, b: &str) -> Result<f64> {
            if a == b {
                return Ok(1.0);
            }
            Ok(self
                .0
                .iter()
                .find(|(x, y, _)| (*x == a && *y == b) || (*x == b && *y == a))
                .map_or(0.0, |t| t.2))
        }
    }

    fn vocab(v: &[&str]) -> VerbVocabulary {
        VerbVocabulary::new(v.iter().copied(), "test", false).unwrap()
    }

    const H: (f64, f64, f64, f64) = (0.0, 0.0, 10.0, 10.0);
    const O: (f64, f64, f64, f64) = (20.0, 0.0, 30.0, 10.0);

    fn h() -> BoundingBox {
        bb(H.0, H.1, H.2, H.3)
    }
    fn o() -> BoundingBox {
        bb(O.0, O.1, O.2, O.3)
    }

    #[test]
    fn recall_examples() {
        let sim = Table(vec![("cycle", "ride", 0.8), ("pedal", "ride", 0.5)]);
        let g = [gt(h(), o(), "ride")];
        let sr = semantic_recall(&[pred(h(), o(), "cycle", 0.9)], &g, &sim, 0.5).unwrap();
        assert!((sr - 0.8).abs() < 1e-12);
        let far = pred(bb(50.0, 50.0, 60.0, 60.0), o(), "ride", 0.9);
        assert_eq!(semantic_recall(&[far], &g, &sim, 0.5).unwrap(), 0.0);
        let g2 = [
            gt(h(), o(), "ride"),
            gt(
                bb(100.0, 0.0, 110.0, 10.0),
                bb(120.0, 0.0, 130.0, 10.0),
                "ride",
            ),
        ];
        let p2 = [
            pred(h(), o(), "ride", 0.9),
            pred(
                bb(100.0, 0.0, 110.0, 10.0),
                bb(120.0, 0.0, 130.0, 10.0),
                "pedal",
                0.3,
            ),
        ];
        assert!((semantic_recall(&p2, &g2, &sim, 0.5).unwrap() - 0.75).abs() < 1e-12);
        assert!(matches!(
            semantic_recall(&p2, &[], &sim, 0.5),
            Err(Error::Undefined(_))
        ));
    }

    #[test]
    fn negative_similarity_counts_as_zero() {
        let emb =
            EmbeddingSimilarity::new(TsvEmbeddings::parse("ride\t1 0\npush\t-1 0\n").unwrap());
        let g = [gt(h(), o(), "ride")];
        assert_eq!(
            semantic_recall(&[pred(h(), o(), "push", 1.0)], &g, &emb, 0.5).unwrap(),
            0.0
        );
    }

    #[test]
    fn map_examples() {
        let v = vocab(&["ride"]);
        let cfg = EvalConfig::default();
        let g = [gt(h(), o(), "ride")];
        let perfect =
            semantic_map(&[pred(h(), o(), "ride", 0.9)], &g, &v, &ExactMatch, &cfg).unwrap();
        assert_eq!(perfect.map_per_threshold.values(), vec![1.0; 5]);
        assert_eq!(perfect.map_avg, 1.0);
        let sim = Table(vec![("cycle", "ride", 0.75)]);
        let partial = semantic_map(&[pred(h(), o(), "cycle", 0.9)], &g, &v, &sim, &cfg).unwrap();
        assert_eq!(
            partial.map_per_threshold.values(),
            vec![1.0, 1.0, 0.0, 0.0, 0.0]
        );
        assert!((partial.map_avg - 0.4).abs() < 1e-12);
        assert_eq!(
            ThresholdMap(vec![
                (0.6, 0.10),
                (0.7, 0.08),
                (0.8, 0.06),
                (0.9, 0.04),
                (0.95, 0.02)
            ])
            .mean(),
            0.06
        );
    }

    #[test]
    fn ignored_and_duplicate_rules() {
        let v = vocab(&["ride"]);
        let cfg = EvalConfig {
            thresholds: vec![1.0],
            ..EvalConfig::default()
        };
        let g = [gt(h(), o(), "ride")];
        // an unmatched prediction ranked first does not hurt
        let elsewhere = pred(bb(50.0, 50.0, 60.0, 60.0), o(), "ride", 0.99);
        let r = semantic_map(
            &[elsewhere, pred(h(), o(), "ride", 0.5)],
            &g,
            &v,
            &ExactMatch,
            &cfg,
        )
        .unwrap();
        assert_eq!(r.map_avg, 1.0);
        assert_eq!(r.per_class[0].ignored, vec![1]);
        // a repeated hit ranked above the second ground truth does
        let g2 = [
            g[0].clone(),
            gt(
                bb(100.0, 0.0, 110.0, 10.0),
                bb(120.0, 0.0, 130.0, 10.0),
                "ride",
            ),
        ];
        let ps = [
            pred(h(), o(), "ride", 0.9),
            pred(h(), o(), "ride", 0.8),
            pred(
                bb(100.0, 0.0, 110.0, 10.0),
                bb(120.0, 0.0, 130.0, 10.0),
                "ride",
                0.7,
            ),
        ];
        let r = semantic_map(&ps, &g2, &v, &ExactMatch, &cfg).unwrap();
        assert!((r.map_avg - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert_eq!(r.per_class[0].duplicates, vec![1]);
    }

    #[test]
    fn higher_threshold_can_drop_a_duplicate() {
        // The duplicate's verb is only close enough at the lower threshold,
        // so raising the threshold removes a false positive.
        let v = vocab(&["ride"]);
        let sim = Table(vec![("cycle", "ride", 0.65)]);
        let cfg = EvalConfig {
            thresholds: vec![0.6, 0.7],
            ..EvalConfig::default()
        };
        let far_h = bb(100.0, 0.0, 110.0, 10.0);
        let far_o = bb(120.0, 0.0, 130.0, 10.0);
        let g = [gt(h(), o(), "ride"), gt(far_h, far_o, "ride")];
        let ps = [
            pred(h(), o(), "ride", 0.9),
            pred(h(), o(), "cycle", 0.8),
            pred(far_h, far_o, "ride", 0.7),
        ];
        let r = semantic_map(&ps, &g, &v, &sim, &cfg).unwrap();
        assert!((r.map_per_threshold.values()[0] - 5.0 / 6.0).abs() < 1e-12);
        assert_eq!(r.map_per_threshold.values()[1], 1.0);
    }

    #[test]
    fn pooled_images() {
        let v = vocab(&["ride", "push"]);
        let cfg = EvalConfig::default();
        let g = [gt(h(), o(), "ride")];
        let ps = [pred(h(), o(), "ride", 0.9)];
        let a = evaluate_image("a", &ps, &g, &v, &ExactMatch, &cfg).unwrap();
        let b = evaluate_image("b", &ps, &g, &v, &ExactMatch, &cfg).unwrap();
        let both = aggregate_report(&[a.clone(), b], None).unwrap();
        let one = aggregate_report(std::slice::from_ref(&a), None).unwrap();
        assert_eq!(both.map_per_threshold, one.map_per_threshold);
        let empty = evaluate_image(
            "c",
            &[pred(h(), o(), "push", 0.9)],
            &[],
            &v,
            &ExactMatch,
            &cfg,
        )
        .unwrap();
        let r = aggregate_report(&[a, empty], None).unwrap();
        assert_eq!(r.per_class.len(), 1);
        assert_eq!(r.per_class[0].num_gt, 1);
        assert_eq!(r.num_images, 2);
    }

    #[test]
    fn mismatches_are_errors() {
        let v = vocab(&["ride"]);
        let g = [gt(h(), o(), "kick")];
        assert!(matches!(
            evaluate_image("x", &[], &g, &v, &ExactMatch, &EvalConfig::default()),
            Err(Error::Config(_))
        ));
        let g = [gt(h(), o(), "ride")];
        let a = evaluate_image("a", &[], &g, &v, &ExactMatch, &EvalConfig::default()).unwrap();
        let other = EvalConfig {
            thresholds: vec![0.5, 0.9],
            ..EvalConfig::default()
        };
        let b = evaluate_image("b", &[], &g, &v, &ExactMatch, &other).unwrap();
        let err = aggregate_report(&[a, b], None).unwrap_err();
        assert!(err.to_string().contains("thresholds"), "{err}");
        for bad in [vec![], vec![0.7, 0.6], vec![0.0], vec![1.2]] {
            assert!(EvalConfig {
                thresholds: bad,
                ..EvalConfig::default()
            }
            .validate()
            .is_err());
        }
    }

    #[test]
    fn rare_splits_in_hoi_mode() {
        let v = vocab(&["ride", "push"]);
        let cfg = EvalConfig {
            class_mode: ClassMode::Hoi,
            ..EvalConfig::default()
        };
        let mut g1 = gt(h(), o(), "ride");
        g1.hoi_category_id = Some(1);
        let mut g2 = gt(
            bb(100.0, 0.0, 110.0, 10.0),
            bb(120.0, 0.0, 130.0, 10.0),
            "push",
        );
        g2.hoi_category_id = Some(2);
        let split = RaritySplit::new([2], [1]).unwrap();
        let r = evaluate_image(
            "a",
            &[pred(h(), o(), "ride", 0.5)],
            &[g1, g2],
            &v,
            &ExactMatch,
            &cfg,
        )
        .unwrap();
        let rep = aggregate_report(&[r], Some(&split)).unwrap();
        assert_eq!(rep.splits.full.map_avg, 0.5);
        assert_eq!(rep.splits.rare.as_ref().unwrap().map_avg, 0.0);
        assert_eq!(rep.splits.nonrare.as_ref().unwrap().map_avg, 1.0);
        assert_eq!(rep.per_class[0].class, "ride|bike");
    }

    #[test]
    fn report_json_round_trips() {
        let v = vocab(&["ride"]);
        let g = [gt(h(), o(), "ride")];
        let r = semantic_map(
            &[pred(h(), o(), "ride", 0.9)],
            &g,
            &v,
            &ExactMatch,
            &EvalConfig::default(),
        )
        .unwrap();
        let json = r.to_json();
        assert!(json.contains("\"0.95\": 1.0"), "{json}");
        assert_eq!(MetricReport::from_json(&json, "t").unwrap(), r);
        assert_eq!(
            r.to_csv().lines().next().unwrap(),
            "label,full,rare,nonrare,sr,map@0.6,map@0.7,map@0.8,map@0.9,map@0.95"
        );
        assert_eq!(
            r.to_csv().lines().nth(1).unwrap(),
            ",100.00,,,100.00,100.00,100.00,100.00,100.00,100.00"
        );
    }
}
