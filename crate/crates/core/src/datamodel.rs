//! Interaction records, canonical annotation ingestion for the annotated-box
//! and computed-box protocols, detection filtering and rarity splits.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::text::normalize_label;

/// Labels treated as people when collecting human detections.
pub const DEFAULT_HUMAN_LABELS: [&str; 10] = [
    "person", "man", "woman", "boy", "girl", "child", "human", "people", "guy", "lady",
];

/// Label given to human boxes synthesized from ground truth.
pub const HUMAN_LABEL: &str = "person";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HumanLexicon(BTreeSet<String>);

impl HumanLexicon {
    pub fn new<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let set: BTreeSet<String> = words
            .into_iter()
            .map(|w| normalize_label(w.as_ref()))
            .filter(|w| !w.is_empty())
            .collect();
        if set.is_empty() {
            return Err(Error::Config("human lexicon is empty".into()));
        }
        Ok(Self(set))
    }

    /// A label is human when it, or its last word, is in the lexicon.
    pub fn is_human(&self, label: &str) -> bool {
        if self.0.contains(label) {
            return true;
        }
        label
            .rsplit(' ')
            .next()
            .is_some_and(|head| self.0.contains(head))
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }
}

impl Default for HumanLexicon {
    fn default() -> Self {
        Self::new(DEFAULT_HUMAN_LABELS).expect("non-empty default")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub label: String,
    pub score: f64,
}

impl Detection {
    pub fn new(bbox: BoundingBox, label: &str, score: f64) -> Result<Self> {
        let label = normalize_label(label);
        if label.is_empty() {
            return Err(Error::validation("detection", "empty label"));
        }
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::validation(
                "detection",
                format!("score {score} outside [0, 1]"),
            ));
        }
        Ok(Self { bbox, label, score })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthInteraction {
    pub human_box: BoundingBox,
    pub object_box: BoundingBox,
    pub object_label: String,
    /// Normalized verb phrase; resolved to a vocabulary index at evaluation.
    pub verb: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hoi_category_id: Option<u32>,
}

/// Where a prediction came from inside the generation pipeline.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Provenance {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_index: Option<usize>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub rule: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedInteraction {
    pub human_box: BoundingBox,
    pub object_box: BoundingBox,
    pub object_label: String,
    #[serde(rename = "verb")]
    pub verb_phrase: String,
    pub score: f64,
    #[serde(default, skip_serializing_if = "is_default_provenance")]
    pub provenance: Provenance,
}

fn is_default_provenance(p: &Provenance) -> bool {
    *p == Provenance::default()
}

impl PredictedInteraction {
    pub fn new(
        human_box: BoundingBox,
        object_box: BoundingBox,
        object_label: &str,
        verb_phrase: &str,
        score: f64,
    ) -> Result<Self> {
        let verb_phrase = normalize_label(verb_phrase);
        if verb_phrase.is_empty() {
            return Err(Error::validation("prediction", "empty verb phrase"));
        }
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::validation(
                "prediction",
                format!("score {score} outside [0, 1]"),
            ));
        }
        Ok(Self {
            human_box,
            object_box,
            object_label: normalize_label(object_label),
            verb_phrase,
            score,
            provenance: Provenance::default(),
        })
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    /// Boxes are taken from ground truth.
    Annotated,
    /// Boxes come from a detector.
    Computed,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Annotated => "annotated",
            Protocol::Computed => "computed",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSample {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub ground_truth: Vec<GroundTruthInteraction>,
    pub detections: Vec<Detection>,
    /// Detections were derived from ground-truth boxes rather than read.
    pub synthesized: bool,
}

#[derive(Serialize, Deserialize)]
struct RawFile {
    images: Vec<RawImage>,
}

#[derive(Serialize, Deserialize)]
struct RawImage {
    id: String,
    width: u32,
    height: u32,
    gt: Vec<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    detections: Option<Vec<serde_json::Value>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGt {
    human_box: [f64; 4],
    object_box: [f64; 4],
    object_label: String,
    verb: String,
    #[serde(default)]
    hoi_category_id: Option<u32>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDetection {
    #[serde(rename = "box")]
    bbox: [f64; 4],
    label: String,
    score: f64,
}

fn checked_box(coords: [f64; 4], width: u32, height: u32, ctx: &str) -> Result<BoundingBox> {
    let b = BoundingBox::try_from(coords).map_err(|e| Error::validation(ctx, e.to_string()))?;
    if !b.within(f64::from(width), f64::from(height)) {
        return Err(Error::validation(
            ctx,
            format!("box {coords:?} exceeds image bounds {width}x{height}"),
        ));
    }
    Ok(b)
}

fn parse_gt(v: serde_json::Value, img: &RawImage, idx: usize) -> Result<GroundTruthInteraction> {
    let ctx = format!("image {:?} gt[{idx}]", img.id);
    let raw: RawGt = serde_json::from_value(v).map_err(|e| Error::parse(&ctx, e))?;
    let human_box = checked_box(
        raw.human_box,
        img.width,
        img.height,
        &format!("{ctx}.human_box"),
    )?;
    let object_box = checked_box(
        raw.object_box,
        img.width,
        img.height,
        &format!("{ctx}.object_box"),
    )?;
    let object_label = normalize_label(&raw.object_label);
    let verb = normalize_label(&raw.verb);
    if object_label.is_empty() {
        return Err(Error::validation(
            format!("{ctx}.object_label"),
            "empty label",
        ));
    }
    if verb.is_empty() {
        return Err(Error::validation(format!("{ctx}.verb"), "empty verb"));
    }
    Ok(GroundTruthInteraction {
        human_box,
        object_box,
        object_label,
        verb,
        hoi_category_id: raw.hoi_category_id,
    })
}

fn parse_detection(v: serde_json::Value, ctx: &str, width: u32, height: u32) -> Result<Detection> {
    let raw: RawDetection = serde_json::from_value(v).map_err(|e| Error::parse(ctx, e))?;
    let bbox = checked_box(raw.bbox, width, height, &format!("{ctx}.box"))?;
    Detection::new(bbox, &raw.label, raw.score).map_err(|e| match e {
        Error::Validation { message, .. } => Error::validation(ctx, message),
        other => other,
    })
}

/// Unique human and object boxes referenced by the ground truth, in first-seen
/// order, each with score 1.0.
pub fn detections_from_ground_truth(gt: &[GroundTruthInteraction]) -> Vec<Detection> {
    let mut out: Vec<Detection> = Vec::new();
    let mut push = |bbox: BoundingBox, label: &str| {
        if !out.iter().any(|d| d.bbox == bbox && d.label == label) {
            out.push(Detection {
                bbox,
                label: label.to_string(),
                score: 1.0,
            });
        }
    };
    for g in gt {
        push(g.human_box, HUMAN_LABEL);
        push(g.object_box, &g.object_label);
    }
    out
}

/// Parses the canonical annotation document.
pub fn parse_annotations(json: &str, protocol: Protocol) -> Result<Vec<EvalSample>> {
    let raw: RawFile = serde_json::from_str(json).map_err(|e| Error::parse("annotations", e))?;
    let mut ids = BTreeSet::new();
    let mut samples = Vec::with_capacity(raw.images.len());
    for mut img in raw.images {
        if !ids.insert(img.id.clone()) {
            return Err(Error::validation(
                format!("image {:?}", img.id),
                "duplicate image id",
            ));
        }
        if img.width == 0 || img.height == 0 {
            return Err(Error::validation(
                format!("image {:?}", img.id),
                "zero image dimension",
            ));
        }
        let gt_values = std::mem::take(&mut img.gt);
        let ground_truth = gt_values
            .into_iter()
            .enumerate()
            .map(|(i, v)| parse_gt(v, &img, i))
            .collect::<Result<Vec<_>>>()?;
        let (detections, synthesized) = match protocol {
            Protocol::Annotated => (detections_from_ground_truth(&ground_truth), true),
            Protocol::Computed => {
                let dets = img
                    .detections
                    .take()
                    .unwrap_or_default()
                    .into_iter()
                    .enumerate()
                    .map(|(i, v)| {
                        let ctx = format!("image {:?} detections[{i}]", img.id);
                        parse_detection(v, &ctx, img.width, img.height)
                    })
                    .collect::<Result<Vec<_>>>()?;
                (dets, false)
            }
        };
        samples.push(EvalSample {
            image_id: img.id,
            width: img.width,
            height: img.height,
            ground_truth,
            detections,
            synthesized,
        });
    }
    Ok(samples)
}

pub fn load_annotations(path: impl AsRef<Path>, protocol: Protocol) -> Result<Vec<EvalSample>> {
    let path = path.as_ref();
    let json = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(&json, protocol)
}

/// Reads a standalone detections file (`{"images": [{"id", "detections"}]}`)
/// and replaces the detections of matching samples.
pub fn attach_detections(samples: &mut [EvalSample], json: &str) -> Result<()> {
    #[derive(Deserialize)]
    struct File {
        images: Vec<Entry>,
    }
    #[derive(Deserialize)]
    struct Entry {
        id: String,
        detections: Vec<serde_json::Value>,
    }
    let file: File = serde_json::from_str(json).map_err(|e| Error::parse("detections", e))?;
    let mut by_id: BTreeMap<String, Vec<serde_json::Value>> = file
        .images
        .into_iter()
        .map(|e| (e.id, e.detections))
        .collect();
    for s in samples.iter_mut() {
        if let Some(values) = by_id.remove(&s.image_id) {
            s.detections = values
                .into_iter()
                .enumerate()
                .map(|(i, v)| {
                    let ctx = format!("image {:?} detections[{i}]", s.image_id);
                    parse_detection(v, &ctx, s.width, s.height)
                })
                .collect::<Result<_>>()?;
            s.synthesized = false;
        }
    }
    if let Some(id) = by_id.keys().next() {
        return Err(Error::validation(
            "detections",
            format!("image {id:?} is not in the annotation file"),
        ));
    }
    Ok(())
}

/// Canonical serialization; synthesized detections are omitted.
pub fn serialize_annotations(samples: &[EvalSample]) -> String {
    let images = samples
        .iter()
        .map(|s| RawImage {
            id: s.image_id.clone(),
            width: s.width,
            height: s.height,
            gt: s
                .ground_truth
                .iter()
                .map(|g| serde_json::to_value(g).expect("serializable"))
                .collect(),
            detections: (!s.synthesized).then(|| {
                s.detections
                    .iter()
                    .map(|d| serde_json::to_value(d).expect("serializable"))
                    .collect()
            }),
        })
        .collect();
    serde_json::to_string_pretty(&RawFile { images }).expect("serializable")
}

/// Whether the min/max instance counts apply to one pool or to humans and
/// objects separately.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstancePool {
    #[default]
    Joint,
    PerClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionFilter {
    pub conf_threshold: f64,
    pub min_instances: usize,
    pub max_instances: usize,
    #[serde(default)]
    pub pool: InstancePool,
}

impl Default for DetectionFilter {
    fn default() -> Self {
        Self {
            conf_threshold: 0.2,
            min_instances: 3,
            max_instances: 15,
            pool: InstancePool::Joint,
        }
    }
}

/// Keeps detections scoring at least `conf_threshold`; if fewer than `min_n`
/// survive, the best rejected detections are added back until `min_n` is
/// reached. The result is sorted by descending score (stable) and truncated
/// to `max_n`.
pub fn filter_detections(
    detections: &[Detection],
    conf_threshold: f64,
    min_n: usize,
    max_n: usize,
) -> Vec<Detection> {
    debug_assert!(min_n <= max_n);
    let mut ranked: Vec<&Detection> = detections.iter().collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score));
    let passing = ranked.iter().filter(|d| d.score >= conf_threshold).count();
    // sorted descending, so the passing detections form a prefix
    let keep = passing.max(min_n.min(ranked.len())).min(max_n);
    ranked.into_iter().take(keep).cloned().collect()
}

/// [`filter_detections`] with the pool mode of `cfg`.
pub fn filter_detections_with(
    detections: &[Detection],
    cfg: &DetectionFilter,
    humans: &HumanLexicon,
) -> Vec<Detection> {
    match cfg.pool {
        InstancePool::Joint => filter_detections(
            detections,
            cfg.conf_threshold,
            cfg.min_instances,
            cfg.max_instances,
        ),
        InstancePool::PerClass => {
            let (h, o): (Vec<Detection>, Vec<Detection>) = detections
                .iter()
                .cloned()
                .partition(|d| humans.is_human(&d.label));
            let mut out =
                filter_detections(&h, cfg.conf_threshold, cfg.min_instances, cfg.max_instances);
            out.extend(filter_detections(
                &o,
                cfg.conf_threshold,
                cfg.min_instances,
                cfg.max_instances,
            ));
            out.sort_by(|a, b| b.score.total_cmp(&a.score));
            out
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rarity {
    Rare,
    NonRare,
}

/// Disjoint partition of HOI category ids into rare and non-rare.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSplit", into = "RawSplit")]
pub struct RaritySplit {
    rare: BTreeSet<u32>,
    nonrare: BTreeSet<u32>,
}

#[derive(Serialize, Deserialize)]
struct RawSplit {
    rare: Vec<u32>,
    nonrare: Vec<u32>,
}

impl TryFrom<RawSplit> for RaritySplit {
    type Error = Error;
    fn try_from(r: RawSplit) -> Result<Self> {
        RaritySplit::new(r.rare, r.nonrare)
    }
}

impl From<RaritySplit> for RawSplit {
    fn from(s: RaritySplit) -> Self {
        RawSplit {
            rare: s.rare.into_iter().collect(),
            nonrare: s.nonrare.into_iter().collect(),
        }
    }
}

impl RaritySplit {
    pub fn new(
        rare: impl IntoIterator<Item = u32>,
        nonrare: impl IntoIterator<Item = u32>,
    ) -> Result<Self> {
        let rare: BTreeSet<u32> = rare.into_iter().collect();
        let nonrare: BTreeSet<u32> = nonrare.into_iter().collect();
        if let Some(id) = rare.intersection(&nonrare).next() {
            return Err(Error::Config(format!(
                "category {id} is listed as both rare and non-rare"
            )));
        }
        Ok(Self { rare, nonrare })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let json = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&json).map_err(|e| Error::parse(path.display().to_string(), e))
    }

    pub fn len(&self) -> usize {
        self.rare.len() + self.nonrare.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn rare_count(&self) -> usize {
        self.rare.len()
    }

    pub fn rarity(&self, category: u32) -> Result<Rarity> {
        if self.rare.contains(&category) {
            Ok(Rarity::Rare)
        } else if self.nonrare.contains(&category) {
            Ok(Rarity::NonRare)
        } else {
            Err(Error::Config(format!(
                "HOI category {category} is not in the rarity split"
            )))
        }
    }
}

pub fn assign_rarity(gt: &GroundTruthInteraction, split: &RaritySplit) -> Result<Rarity> {
    let id = gt
        .hoi_category_id
        .ok_or_else(|| Error::Config("ground truth has no hoi_category_id".into()))?;
    split.rarity(id)
}
