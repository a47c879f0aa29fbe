//! Brute-force reference implementations and random instance generation
//! shared by the integration tests. Nothing here calls the library's
//! geometry or matching code.
#![allow(dead_code)]

use std::collections::HashMap;
use std::path::PathBuf;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use uhoi::datamodel::{GroundTruthInteraction, PredictedInteraction};
use uhoi::geometry::BoundingBox;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn read_fixture(name: &str) -> String {
    std::fs::read_to_string(fixture(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub const VOCAB: [&str; 8] = [
    "ride", "hold", "push", "carry", "sit on", "eat", "throw", "kick",
];

/// Every phrase in the fixture embedding table.
pub const PHRASES: [&str; 20] = [
    "ride", "pedal", "straddle", "hold", "grab", "grip", "push", "shove", "pull", "carry", "lift",
    "sit on", "lean on", "eat", "bite", "lick", "throw", "toss", "kick", "hit",
];

/// Plain cosine over the raw fixture vectors.
pub struct OracleCosine(HashMap<String, Vec<f64>>);

impl OracleCosine {
    pub fn fixture() -> Self {
        Self::load("embeddings.tsv")
    }

    pub fn load(name: &str) -> Self {
        let mut m = HashMap::new();
        for line in read_fixture(name).lines() {
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let (k, v) = line.split_once('\t').unwrap();
            let v: Vec<f64> = v
                .split_whitespace()
                .map(|x| x.parse::<f32>().unwrap() as f64)
                .collect();
            m.insert(k.to_string(), v);
        }
        Self(m)
    }

    /// Cosine as the dot product of unit vectors; identical phrases are 1.
    pub fn sim(&self, a: &str, b: &str) -> f64 {
        let unit = |v: &Vec<f64>| {
            let n = v.iter().map(|p| p * p).sum::<f64>().sqrt();
            v.iter().map(|p| p / n).collect::<Vec<f64>>()
        };
        let (x, y) = (unit(&self.0[a]), unit(&self.0[b]));
        if a == b {
            return 1.0;
        }
        x.iter().zip(&y).map(|(p, q)| p * q).sum()
    }
}

pub type Rect = [f64; 4];

pub fn rect(b: &BoundingBox) -> Rect {
    b.to_array()
}

pub fn oracle_iou(a: Rect, b: Rect) -> f64 {
    let w = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let h = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = w * h;
    let area = |r: Rect| (r[2] - r[0]) * (r[3] - r[1]);
    inter / (area(a) + area(b) - inter)
}

#[derive(Debug, Clone)]
pub struct OGt {
    pub h: Rect,
    pub o: Rect,
    pub obj: String,
    pub verb: String,
}

#[derive(Debug, Clone)]
pub struct OPred {
    pub h: Rect,
    pub o: Rect,
    pub obj: String,
    pub verb: String,
    pub score: f64,
}

pub fn passes(p: &OPred, g: &OGt, thr: f64) -> bool {
    oracle_iou(p.h, g.h) >= thr && oracle_iou(p.o, g.o) >= thr
}

pub fn oracle_sr<F: Fn(&str, &str) -> f64>(preds: &[OPred], gts: &[OGt], sim: F, thr: f64) -> f64 {
    let mut total = 0.0;
    for g in gts {
        let mut best = 0.0f64;
        for p in preds {
            if passes(p, g, thr) {
                best = best.max(sim(&p.verb, &g.verb));
            }
        }
        total += best;
    }
    total / gts.len() as f64
}

#[derive(Clone, Copy, PartialEq, Debug)]
enum Label {
    Tp,
    Fp,
    Skip,
}

type Assignment = Vec<Option<usize>>;

/// Among all injective assignments of ranked predictions to passing ground
/// truths, the one whose per-prediction (overlap, lower index) sequence is
/// lexicographically largest.
fn best_assignment(ranked: &[&OPred], gts: &[&OGt], thr: f64) -> Vec<Option<usize>> {
    fn key(ranked: &[&OPred], gts: &[&OGt], a: &[Option<usize>]) -> Vec<(f64, i64)> {
        a.iter()
            .zip(ranked)
            .map(|(m, p)| match m {
                Some(g) => (
                    oracle_iou(p.h, gts[*g].h).min(oracle_iou(p.o, gts[*g].o)),
                    -(*g as i64),
                ),
                None => (-1.0, 0),
            })
            .collect()
    }
    fn better(a: &[(f64, i64)], b: &[(f64, i64)]) -> bool {
        for (x, y) in a.iter().zip(b) {
            if x.0 != y.0 {
                return x.0 > y.0;
            }
            if x.1 != y.1 {
                return x.1 > y.1;
            }
        }
        false
    }
    fn walk(
        i: usize,
        ranked: &[&OPred],
        gts: &[&OGt],
        thr: f64,
        used: &mut Vec<bool>,
        cur: &mut Vec<Option<usize>>,
        best: &mut Option<(Vec<(f64, i64)>, Assignment)>,
    ) {
        if i == ranked.len() {
            let k = key(ranked, gts, cur);
            if best.as_ref().is_none_or(|(bk, _)| better(&k, bk)) {
                *best = Some((k, cur.clone()));
            }
            return;
        }
        for g in 0..gts.len() {
            if !used[g] && passes(ranked[i], gts[g], thr) {
                used[g] = true;
                cur.push(Some(g));
                walk(i + 1, ranked, gts, thr, used, cur, best);
                cur.pop();
                used[g] = false;
            }
        }
        cur.push(None);
        walk(i + 1, ranked, gts, thr, used, cur, best);
        cur.pop();
    }
    let mut best = None;
    walk(
        0,
        ranked,
        gts,
        thr,
        &mut vec![false; gts.len()],
        &mut Vec::new(),
        &mut best,
    );
    best.unwrap().1
}

/// Area under the precision/recall step curve.
fn integrate(labels: &[Label], npos: usize) -> f64 {
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    for l in labels {
        match l {
            Label::Skip => continue,
            Label::Tp => tp += 1,
            Label::Fp => fp += 1,
        }
        let recall = tp as f64 / npos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    area
}

/// Dataset-level AP for one class at every threshold, from scratch.
#[derive(Debug, Clone)]
pub struct OracleClass {
    pub verb: String,
    pub obj: Option<String>,
    pub num_gt: usize,
    pub ap: Vec<f64>,
}

/// Pools every image: per class and threshold, each image is labeled with
/// its best assignment, then all labeled predictions are ranked by score
/// (ties in image, then input order) and integrated.
pub fn oracle_classes<F: Fn(&str, &str) -> f64>(
    images: &[Instance],
    hoi: bool,
    sim: F,
    thresholds: &[f64],
    thr: f64,
) -> Vec<OracleClass> {
    let class_of = |verb: &str, obj: &str| (verb.to_string(), hoi.then(|| obj.to_string()));
    let mut classes: Vec<(String, Option<String>)> = images
        .iter()
        .flat_map(|i| i.gts.iter().map(|g| class_of(&g.verb, &g.obj)))
        .collect();
    classes.sort();
    classes.dedup();
    classes
        .into_iter()
        .map(|(c, obj)| {
            let in_class = |verb: &str, o: &str| verb == c && obj.as_deref().is_none_or(|x| x == o);
            let num_gt = images
                .iter()
                .map(|i| i.gts.iter().filter(|g| in_class(&g.verb, &g.obj)).count())
                .sum();
            let ap = thresholds
                .iter()
                .map(|&tau| {
                    let mut pooled: Vec<(f64, Label)> = Vec::new();
                    for img in images {
                        let class_gt: Vec<&OGt> = img
                            .gts
                            .iter()
                            .filter(|g| in_class(&g.verb, &g.obj))
                            .collect();
                        let mut ranked: Vec<&OPred> = img
                            .preds
                            .iter()
                            .filter(|p| {
                                sim(&p.verb, &c) >= tau && obj.as_deref().is_none_or(|x| x == p.obj)
                            })
                            .collect();
                        ranked.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
                        let assignment = best_assignment(&ranked, &class_gt, thr);
                        for (p, m) in ranked.iter().zip(&assignment) {
                            let label = match m {
                                Some(_) => Label::Tp,
                                None if class_gt.iter().any(|g| passes(p, g, thr)) => Label::Fp,
                                None => Label::Skip,
                            };
                            pooled.push((p.score, label));
                        }
                    }
                    pooled.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
                    let labels: Vec<Label> = pooled.into_iter().map(|x| x.1).collect();
                    integrate(&labels, num_gt)
                })
                .collect();
            OracleClass {
                verb: c,
                obj,
                num_gt,
                ap,
            }
        })
        .collect()
}

pub fn mean_ap(classes: &[&OracleClass], n_thresholds: usize) -> Vec<f64> {
    (0..n_thresholds)
        .map(|t| {
            if classes.is_empty() {
                0.0
            } else {
                classes.iter().map(|c| c.ap[t]).sum::<f64>() / classes.len() as f64
            }
        })
        .collect()
}

/// Per-threshold mAP over verb classes for one image.
pub fn oracle_map<F: Fn(&str, &str) -> f64>(
    inst: &Instance,
    sim: F,
    thresholds: &[f64],
    thr: f64,
) -> Vec<f64> {
    let classes = oracle_classes(std::slice::from_ref(inst), false, sim, thresholds, thr);
    mean_ap(&classes.iter().collect::<Vec<_>>(), thresholds.len())
}

/// Semantic Recall over every ground truth of every image.
pub fn oracle_sr_pooled<F: Fn(&str, &str) -> f64>(images: &[Instance], sim: F, thr: f64) -> f64 {
    let n: usize = images.iter().map(|i| i.gts.len()).sum();
    let total: f64 = images
        .iter()
        .map(|i| oracle_sr(&i.preds, &i.gts, &sim, thr) * i.gts.len() as f64)
        .sum();
    total / n as f64
}

pub struct Gen(ChaCha8Rng);

impl Gen {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn unit(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn below(&mut self, n: usize) -> usize {
        ((self.0.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    pub fn rect(&mut self) -> Rect {
        let (x, y) = (self.range(0.0, 80.0), self.range(0.0, 80.0));
        [x, y, x + self.range(5.0, 20.0), y + self.range(5.0, 20.0)]
    }

    /// Shifts every edge by up to `amount` times the box size.
    pub fn jitter(&mut self, r: Rect, amount: f64) -> Rect {
        let (w, h) = (r[2] - r[0], r[3] - r[1]);
        let mut j = |v: f64, s: f64| v + self.range(-amount, amount) * s;
        let out = [
            j(r[0], w).max(0.0),
            j(r[1], h).max(0.0),
            j(r[2], w),
            j(r[3], h),
        ];
        if out[2] - out[0] < 0.5 || out[3] - out[1] < 0.5 {
            r
        } else {
            out
        }
    }
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub gts: Vec<OGt>,
    pub preds: Vec<OPred>,
}

/// Up to 5 ground truths and 10 predictions. Predictions mostly sit near a
/// ground truth with a related verb phrase; scores come from a coarse grid
/// so ties occur.
pub fn random_instance(g: &mut Gen) -> Instance {
    let n_gt = 1 + g.below(5);
    let gts: Vec<OGt> = (0..n_gt)
        .map(|_| OGt {
            h: g.rect(),
            o: g.rect(),
            obj: "thing".into(),
            verb: VOCAB[g.below(VOCAB.len())].to_string(),
        })
        .collect();
    let n_pred = g.below(11);
    let preds = (0..n_pred)
        .map(|_| {
            let (h, o, verb) = if g.unit() < 0.8 {
                let t = &gts[g.below(gts.len())];
                let amount = if g.unit() < 0.7 { 0.08 } else { 0.3 };
                let verb = if g.unit() < 0.5 {
                    t.verb.clone()
                } else {
                    PHRASES[g.below(PHRASES.len())].to_string()
                };
                (g.jitter(t.h, amount), g.jitter(t.o, amount), verb)
            } else {
                (
                    g.rect(),
                    g.rect(),
                    PHRASES[g.below(PHRASES.len())].to_string(),
                )
            };
            OPred {
                h,
                o,
                obj: "thing".into(),
                verb,
                score: (1 + g.below(10)) as f64 / 10.0,
            }
        })
        .collect();
    Instance { gts, preds }
}

pub fn to_library(inst: &Instance) -> (Vec<PredictedInteraction>, Vec<GroundTruthInteraction>) {
    let bb = |r: Rect| BoundingBox::new(r[0], r[1], r[2], r[3]).unwrap();
    let preds = inst
        .preds
        .iter()
        .map(|p| PredictedInteraction::new(bb(p.h), bb(p.o), &p.obj, &p.verb, p.score).unwrap())
        .collect();
    let gts = inst
        .gts
        .iter()
        .map(|t| GroundTruthInteraction {
            human_box: bb(t.h),
            object_box: bb(t.o),
            object_label: t.obj.clone(),
            verb: t.verb.clone(),
            hoi_category_id: None,
        })
        .collect();
    (preds, gts)
}
