//! File-backed pipeline stages: pairs, generation, extraction, evaluation.
//!
//! Every stage reads and writes files inside one run directory and records
//! its input and output hashes in `manifest.json`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aggregation::{pool, select, ScoredTriplet};
use crate::concurrency::{for_each_bounded, map_bounded};
use crate::config::{PipelineConfig, ProviderKind};
use crate::datamodel::{
    attach_detections, filter_detections_with, load_annotations, Detection, PredictedInteraction,
    Protocol, Provenance, RaritySplit,
};
use crate::error::{Error, Result};
use crate::extraction::{
    extract, refine, FileTextToGraph, HttpTextToGraph, RawTriplet, TextToGraph,
};
use crate::generation::{
    render_prompt, ChatCompletionsProvider, GenerationProvider, GenerationRequest, MockProvider,
    PromptKind,
};
use crate::metrics::{aggregate_report, evaluate_image, MetricReport};
use crate::pairing::{build_pairs, open_image, render_visual_prompt, HumanObjectPair};
use crate::text::fnv1a;
use crate::vocab::{
    filter_wordnet_verbs, EmbeddingSimilarity, HttpEmbeddings, Similarity, TsvEmbeddings,
    VerbFilterOutcome, VerbVocabulary,
};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PAIRS_FILE: &str = "pairs.jsonl";
pub const TRANSCRIPT_FILE: &str = "transcript.jsonl";
pub const AGGREGATION_FILE: &str = "aggregation.jsonl";
pub const PREDICTIONS_FILE: &str = "predictions.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const PROMPTS_DIR: &str = "prompts";

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).map_err(|e| Error::io(path, e))?))
}

/// Writes through a temporary sibling and renames, so readers never see a
/// half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut s = String::new();
    for it in items {
        s.push_str(&serde_json::to_string(it).expect("record serializes"));
        s.push('\n');
    }
    s
}

/// Reads a JSON-lines file. A malformed final line (an interrupted write)
/// is dropped with a warning; malformed earlier lines are errors.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(path, e))?;
    let last = lines.iter().rposition(|l| !l.trim().is_empty());
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(v) => out.push(v),
            Err(e) if Some(i) == last => {
                log::warn!(
                    "{}:{}: dropping truncated record ({e})",
                    path.display(),
                    i + 1
                );
            }
            Err(e) => return Err(Error::parse(format!("{}:{}", path.display(), i + 1), e)),
        }
    }
    Ok(out)
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))
}

fn pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputRecord {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StageRecord {
    /// Hash over the effective config and every input file.
    pub inputs_hash: String,
    pub outputs: BTreeMap<String, String>,
    pub complete: bool,
    pub errors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: PipelineConfig,
    pub inputs: BTreeMap<String, InputRecord>,
    pub stages: BTreeMap<String, StageRecord>,
}

impl RunManifest {
    pub fn new(config: &PipelineConfig) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            inputs: BTreeMap::new(),
            stages: BTreeMap::new(),
        }
    }

    /// Opens the manifest in `run_dir`, or starts a new one. The effective
    /// config always replaces the stored snapshot.
    pub fn open(run_dir: &Path, config: &PipelineConfig) -> Result<Self> {
        let path = run_dir.join(MANIFEST_FILE);
        let mut m = if path.exists() {
            read_json::<RunManifest>(&path)?
        } else {
            Self::new(config)
        };
        if m.config != *config {
            log::info!("config differs from the stored manifest; recording the new one");
            m.config = config.clone();
        }
        m.tool_version = env!("CARGO_PKG_VERSION").to_string();
        Ok(m)
    }

    pub fn save(&self, run_dir: &Path) -> Result<()> {
        write_atomic(&run_dir.join(MANIFEST_FILE), pretty(self).as_bytes())
    }

    pub fn record_input(&mut self, name: &str, path: &Path) -> Result<String> {
        let sha = sha256_file(path)?;
        self.inputs.insert(
            name.to_string(),
            InputRecord {
                path: path.to_path_buf(),
                sha256: sha.clone(),
            },
        );
        Ok(sha)
    }

    fn inputs_hash(&self, stage: &str, inputs: &[&str]) -> String {
        let mut h = Sha256::new();
        h.update(stage.as_bytes());
        h.update(self.config.to_toml().as_bytes());
        for name in inputs {
            h.update(name.as_bytes());
            h.update(
                self.inputs
                    .get(*name)
                    .map_or("", |r| r.sha256.as_str())
                    .as_bytes(),
            );
        }
        format!("{:x}", h.finalize())
    }

    fn finish_stage(
        &mut self,
        run_dir: &Path,
        stage: &str,
        inputs: &[&str],
        outputs: &[&str],
        errors: usize,
    ) -> Result<()> {
        let mut rec = StageRecord {
            inputs_hash: self.inputs_hash(stage, inputs),
            complete: errors == 0,
            errors,
            ..StageRecord::default()
        };
        for o in outputs {
            let p = run_dir.join(o);
            let sha = sha256_file(&p)?;
            rec.outputs.insert(o.to_string(), sha.clone());
            // later stages hash this output as their input
            self.inputs.insert(
                o.to_string(),
                InputRecord {
                    path: PathBuf::from(o),
                    sha256: sha,
                },
            );
        }
        self.stages.insert(stage.to_string(), rec);
        self.save(run_dir)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleError {
    pub item: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StageOutcome {
    pub stage: String,
    pub written: usize,
    pub skipped: usize,
    pub errors: Vec<SampleError>,
}

impl StageOutcome {
    fn new(stage: &str) -> Self {
        Self {
            stage: stage.to_string(),
            ..Self::default()
        }
    }

    pub fn is_clean(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "{}: {} written, {} skipped, {} errors",
            self.stage,
            self.written,
            self.skipped,
            self.errors.len()
        );
        for e in self.errors.iter().take(10) {
            s.push_str(&format!("\n  {}: {}", e.item, e.message));
        }
        if self.errors.len() > 10 {
            s.push_str(&format!("\n  ... and {} more", self.errors.len() - 10));
        }
        s
    }

    pub fn resume_hint(&self, run_dir: &Path) -> Option<String> {
        (!self.is_clean()).then(|| {
            format!(
                "{} item(s) failed; rerun `uhoi {} --run-dir {}` to retry only the missing ones",
                self.errors.len(),
                self.stage,
                run_dir.display()
            )
        })
    }
}

/// Where to find image files: a directory holding `<id>.png|jpg|jpeg`, or a
/// JSON object mapping image id to path (relative to the mapping file).
#[derive(Debug, Clone, PartialEq)]
pub enum ImageSource {
    Dir(PathBuf),
    Map(BTreeMap<String, PathBuf>),
}

impl ImageSource {
    pub fn open(path: &Path) -> Result<Self> {
        if path.is_dir() {
            return Ok(ImageSource::Dir(path.to_path_buf()));
        }
        let raw: BTreeMap<String, PathBuf> = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Ok(ImageSource::Map(
            raw.into_iter()
                .map(|(k, v)| {
                    let v = if v.is_relative() { base.join(v) } else { v };
                    (k, v)
                })
                .collect(),
        ))
    }

    pub fn locate(&self, image_id: &str) -> Result<PathBuf> {
        match self {
            ImageSource::Dir(dir) => ["png", "jpg", "jpeg"]
                .iter()
                .map(|ext| dir.join(format!("{image_id}.{ext}")))
                .find(|p| p.is_file())
                .ok_or_else(|| {
                    Error::validation(
                        format!("image {image_id}"),
                        format!("no image file in {}", dir.display()),
                    )
                }),
            ImageSource::Map(m) => {
                let p = m.get(image_id).ok_or_else(|| {
                    Error::validation(format!("image {image_id}"), "not in the image mapping")
                })?;
                if p.is_file() {
                    Ok(p.clone())
                } else {
                    Err(Error::validation(
                        format!("image {image_id}"),
                        format!("missing file {}", p.display()),
                    ))
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub pair_id: String,
    pub image_id: String,
    pub human: Detection,
    pub object: Detection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_path: Option<String>,
}

impl PairRecord {
    pub fn pair(&self) -> HumanObjectPair {
        HumanObjectPair {
            pair_id: self.pair_id.clone(),
            image_id: self.image_id.clone(),
            human: self.human.clone(),
            object: self.object.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub pair_id: String,
    pub prompt_kind: PromptKind,
    pub sample_index: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationRecord {
    pub pair_id: String,
    pub image_id: String,
    pub num_samples: usize,
    pub extracted: usize,
    pub refined: usize,
    pub selected: Vec<ScoredTriplet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImagePredictions {
    pub id: String,
    pub predictions: Vec<PredictedInteraction>,
}

/// Predictions for evaluation, produced by `extract` or by an external model.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PredictionsFile {
    pub images: Vec<ImagePredictions>,
}

impl PredictionsFile {
    pub fn load(path: &Path) -> Result<Self> {
        let file: PredictionsFile = read_json(path)?;
        for img in &file.images {
            for (i, p) in img.predictions.iter().enumerate() {
                if !(0.0..=1.0).contains(&p.score) {
                    return Err(Error::validation(
                        format!("{} image {} prediction {i}", path.display(), img.id),
                        format!("score {} outside [0, 1]", p.score),
                    ));
                }
            }
        }
        Ok(file)
    }
}

fn prompt_file_name(pair_id: &str) -> String {
    let safe: String = pair_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{PROMPTS_DIR}/{safe}.png")
}

fn render_png(
    pair: &HumanObjectPair,
    images: &ImageSource,
    cfg: &PipelineConfig,
) -> Result<Vec<u8>> {
    let img = open_image(images.locate(&pair.image_id)?)?;
    render_visual_prompt(&img, pair, cfg.prompt.visual_mode)?.to_png()
}

/// Builds human-object pairs for every annotated image and writes
/// `pairs.jsonl`. Under the computed-box protocol detections are read from
/// `detections` (or the annotation file) and filtered first.
pub fn run_pairs(
    run_dir: &Path,
    cfg: &PipelineConfig,
    annotations: &Path,
    detections: Option<&Path>,
    images: Option<&ImageSource>,
) -> Result<StageOutcome> {
    let mut manifest = RunManifest::open(run_dir, cfg)?;
    manifest.record_input("annotations", annotations)?;
    let protocol = cfg.evaluation.protocol;
    let mut samples = load_annotations(annotations, protocol)?;
    if let Some(det) = detections {
        if protocol == Protocol::Annotated {
            return Err(Error::Config(
                "a detections file only applies to the computed-box protocol".into(),
            ));
        }
        manifest.record_input("detections", det)?;
        let text = fs::read_to_string(det).map_err(|e| Error::io(det, e))?;
        attach_detections(&mut samples, &text)?;
    }
    let humans = cfg.detection.lexicon()?;
    let filter = cfg.detection.filter();
    let mut outcome = StageOutcome::new("pairs");
    let mut records = Vec::new();
    for s in &samples {
        let dets = match protocol {
            Protocol::Annotated => s.detections.clone(),
            Protocol::Computed => filter_detections_with(&s.detections, &filter, &humans),
        };
        if dets.is_empty() {
            log::warn!("image {}: no detections", s.image_id);
        }
        if let Some(src) = images {
            if let Err(e) = src.locate(&s.image_id) {
                outcome.errors.push(SampleError {
                    item: s.image_id.clone(),
                    message: e.to_string(),
                });
                continue;
            }
        }
        for pair in build_pairs(
            &s.image_id,
            &dets,
            &humans,
            cfg.detection.include_human_human,
        ) {
            let mut prompt_path = None;
            if cfg.prompt.persist {
                let src = images.ok_or_else(|| {
                    Error::Config("persisting prompts needs an image source".into())
                })?;
                match render_png(&pair, src, cfg) {
                    Ok(png) => {
                        let name = prompt_file_name(&pair.pair_id);
                        write_atomic(&run_dir.join(&name), &png)?;
                        prompt_path = Some(name);
                    }
                    Err(e) => {
                        outcome.errors.push(SampleError {
                            item: pair.pair_id.clone(),
                            message: e.to_string(),
                        });
                        continue;
                    }
                }
            }
            records.push(PairRecord {
                pair_id: pair.pair_id,
                image_id: pair.image_id,
                human: pair.human,
                object: pair.object,
                prompt_path,
            });
        }
    }
    outcome.written = records.len();
    write_atomic(&run_dir.join(PAIRS_FILE), to_jsonl(&records).as_bytes())?;
    manifest.finish_stage(
        run_dir,
        "pairs",
        &["annotations", "detections"],
        &[PAIRS_FILE],
        outcome.errors.len(),
    )?;
    Ok(outcome)
}

/// Builds the generation provider named in the config. The chat provider
/// reads its API key from the configured environment variable.
pub fn build_provider(cfg: &PipelineConfig) -> Result<Box<dyn GenerationProvider>> {
    let g = &cfg.generation;
    match g.provider {
        ProviderKind::Mock => {
            let pool = g
                .mock_pool
                .as_ref()
                .ok_or_else(|| Error::Config("mock provider needs generation.mock_pool".into()))?;
            Ok(Box::new(MockProvider::load(pool)?))
        }
        ProviderKind::Chat => {
            let url = g
                .endpoint
                .as_ref()
                .ok_or_else(|| Error::Config("chat provider needs generation.endpoint".into()))?;
            let key = std::env::var(&g.api_key_env).ok();
            Ok(Box::new(
                ChatCompletionsProvider::new(url, &g.model, key, g.retry.clone())
                    .with_n_support(g.supports_n),
            ))
        }
    }
}

pub fn build_text_to_graph(cfg: &PipelineConfig) -> Result<Option<Box<dyn TextToGraph>>> {
    let e = &cfg.extraction;
    if let Some(table) = &e.t2g_table {
        return Ok(Some(Box::new(FileTextToGraph::load(table)?)));
    }
    if let Some(url) = &e.t2g_endpoint {
        let key = std::env::var(&e.t2g_api_key_env).ok();
        return Ok(Some(Box::new(HttpTextToGraph::new(
            url,
            key,
            cfg.generation.retry.clone(),
        ))));
    }
    Ok(None)
}

pub fn build_similarity(cfg: &PipelineConfig) -> Result<Arc<dyn Similarity>> {
    let s = &cfg.similarity;
    if let Some(path) = &s.embeddings {
        return Ok(Arc::new(EmbeddingSimilarity::with_template(
            TsvEmbeddings::load(path)?,
            &s.template,
        )));
    }
    if let Some(url) = &s.endpoint {
        let key = std::env::var(&s.api_key_env).ok();
        let src = HttpEmbeddings::new(url, key, cfg.generation.retry.clone(), s.max_in_flight);
        return Ok(Arc::new(EmbeddingSimilarity::with_template(
            src,
            &s.template,
        )));
    }
    Err(Error::Config(
        "similarity needs an embeddings table or endpoint".into(),
    ))
}

fn complete_pairs(records: &[TranscriptRecord], n: usize, kind: PromptKind) -> HashSet<String> {
    let mut seen: HashMap<&str, HashSet<usize>> = HashMap::new();
    for r in records.iter().filter(|r| r.prompt_kind == kind) {
        seen.entry(&r.pair_id).or_default().insert(r.sample_index);
    }
    seen.into_iter()
        .filter(|(_, s)| (0..n).all(|i| s.contains(&i)))
        .map(|(p, _)| p.to_string())
        .collect()
}

/// Queries the provider for every pair lacking a full transcript and
/// appends to `transcript.jsonl`. Pairs already complete are skipped, so a
/// failed run can simply be repeated. The final file is ordered by pair
/// then sample.
pub fn run_generate(
    run_dir: &Path,
    cfg: &PipelineConfig,
    provider: &dyn GenerationProvider,
    images: Option<&ImageSource>,
) -> Result<StageOutcome> {
    let mut manifest = RunManifest::open(run_dir, cfg)?;
    let pairs: Vec<PairRecord> = read_jsonl(&run_dir.join(PAIRS_FILE))?;
    let sampling = cfg.generation.sampling();
    let kind = cfg.prompt.kind;
    let n = sampling.num_samples;
    let transcript_path = run_dir.join(TRANSCRIPT_FILE);
    let existing: Vec<TranscriptRecord> = if transcript_path.exists() {
        read_jsonl(&transcript_path)?
    } else {
        Vec::new()
    };
    let done = complete_pairs(&existing, n, kind);
    // keep only whole pairs so partial ones are regenerated from scratch
    let kept: Vec<TranscriptRecord> = existing
        .into_iter()
        .filter(|r| r.prompt_kind == kind && r.sample_index < n && done.contains(&r.pair_id))
        .collect();
    write_atomic(&transcript_path, to_jsonl(&kept).as_bytes())?;

    let mut outcome = StageOutcome::new("generate");
    let pending: Vec<&PairRecord> = pairs
        .iter()
        .filter(|p| !done.contains(&p.pair_id))
        .collect();
    outcome.skipped = pairs.len() - pending.len();
    if images.is_none() && cfg.generation.provider == ProviderKind::Chat {
        log::warn!("no image source given; chat requests will be text-only");
    }
    let mut file = OpenOptions::new()
        .append(true)
        .open(&transcript_path)
        .map_err(|e| Error::io(&transcript_path, e))?;
    let mut io_error = None;
    for_each_bounded(
        &pending,
        cfg.generation.max_in_flight,
        |_, rec| -> Result<Vec<TranscriptRecord>> {
            let image = match (&rec.prompt_path, images) {
                (Some(p), _) => {
                    Some(fs::read(run_dir.join(p)).map_err(|e| Error::io(run_dir.join(p), e))?)
                }
                (None, Some(src)) => Some(render_png(&rec.pair(), src, cfg)?),
                (None, None) => None,
            };
            let req = GenerationRequest::new(
                &rec.pair_id,
                image,
                render_prompt(kind, &rec.object.label),
                &sampling,
            )?;
            let resp = provider.generate(&req)?;
            if resp.texts.len() != n {
                return Err(Error::transport(
                    format!("pair {}", rec.pair_id),
                    format!("provider returned {} texts, expected {n}", resp.texts.len()),
                ));
            }
            Ok(resp
                .texts
                .into_iter()
                .enumerate()
                .map(|(i, text)| TranscriptRecord {
                    pair_id: rec.pair_id.clone(),
                    prompt_kind: kind,
                    sample_index: i,
                    text,
                })
                .collect())
        },
        |i, res| match res {
            Ok(records) => {
                if let Err(e) = file
                    .write_all(to_jsonl(&records).as_bytes())
                    .and_then(|_| file.flush())
                {
                    io_error.get_or_insert(e);
                }
                outcome.written += records.len();
            }
            Err(e) => outcome.errors.push(SampleError {
                item: pending[i].pair_id.clone(),
                message: e.to_string(),
            }),
        },
    );
    drop(file);
    if let Some(e) = io_error {
        return Err(Error::io(&transcript_path, e));
    }
    outcome.errors.sort_by(|a, b| a.item.cmp(&b.item));

    let mut all: Vec<TranscriptRecord> = read_jsonl(&transcript_path)?;
    let order: HashMap<&str, usize> = pairs
        .iter()
        .enumerate()
        .map(|(i, p)| (p.pair_id.as_str(), i))
        .collect();
    all.sort_by_key(|r| {
        (
            order.get(r.pair_id.as_str()).copied().unwrap_or(usize::MAX),
            r.sample_index,
        )
    });
    write_atomic(&transcript_path, to_jsonl(&all).as_bytes())?;
    manifest.finish_stage(
        run_dir,
        "generate",
        &[PAIRS_FILE],
        &[TRANSCRIPT_FILE],
        outcome.errors.len(),
    )?;
    Ok(outcome)
}

/// Extracts, refines, pools and selects triplets for every pair, writing
/// `aggregation.jsonl` and `predictions.json`. Uses the first `num_samples`
/// transcript entries of each pair.
pub fn run_extract(
    run_dir: &Path,
    cfg: &PipelineConfig,
    t2g: Option<&dyn TextToGraph>,
    sim: Option<&dyn Similarity>,
) -> Result<StageOutcome> {
    let mut manifest = RunManifest::open(run_dir, cfg)?;
    let pairs: Vec<PairRecord> = read_jsonl(&run_dir.join(PAIRS_FILE))?;
    let transcript: Vec<TranscriptRecord> = read_jsonl(&run_dir.join(TRANSCRIPT_FILE))?;
    let refinement = cfg.extraction.refinement()?;
    let n = cfg.generation.num_samples;
    let kind = cfg.prompt.kind;
    let mut by_pair: HashMap<&str, BTreeMap<usize, &str>> = HashMap::new();
    for r in transcript.iter().filter(|r| r.prompt_kind == kind) {
        by_pair
            .entry(&r.pair_id)
            .or_default()
            .insert(r.sample_index, &r.text);
    }

    let mut outcome = StageOutcome::new("extract");
    let mut jobs: Vec<(usize, usize, &str)> = Vec::new();
    let mut usable = vec![false; pairs.len()];
    for (pi, p) in pairs.iter().enumerate() {
        let texts = by_pair.get(p.pair_id.as_str());
        if (0..n).all(|i| texts.is_some_and(|t| t.contains_key(&i))) {
            usable[pi] = true;
            jobs.extend((0..n).map(|i| (pi, i, texts.expect("checked")[&i])));
        } else {
            outcome.errors.push(SampleError {
                item: p.pair_id.clone(),
                message: format!("transcript has fewer than {n} samples; run generate first"),
            });
        }
    }
    let extracted = map_bounded(&jobs, cfg.extraction.max_in_flight, |_, &(pi, si, text)| {
        let label = &pairs[pi].object.label;
        let raw = extract(cfg.extraction.extractor, text, label, si, t2g).map_err(|e| {
            Error::validation(
                format!("pair {} sample {si}", pairs[pi].pair_id),
                e.to_string(),
            )
        })?;
        let kept = refine(&raw, label, &refinement, sim)?;
        Ok::<_, Error>((raw.len(), kept))
    });

    let mut per_pair: Vec<Vec<Vec<RawTriplet>>> = vec![Vec::new(); pairs.len()];
    let mut raw_counts = vec![0usize; pairs.len()];
    let mut failed = vec![false; pairs.len()];
    for (&(pi, _, _), res) in jobs.iter().zip(extracted) {
        match res {
            Ok((nraw, kept)) => {
                raw_counts[pi] += nraw;
                per_pair[pi].push(kept);
            }
            Err(e) => {
                if !failed[pi] {
                    outcome.errors.push(SampleError {
                        item: pairs[pi].pair_id.clone(),
                        message: e.to_string(),
                    });
                }
                failed[pi] = true;
            }
        }
    }

    let rule = format!("{}/{}", cfg.extraction.extractor, cfg.aggregation.mode);
    let mut aggregation = Vec::new();
    let mut images: Vec<ImagePredictions> = Vec::new();
    for (pi, p) in pairs.iter().enumerate() {
        if images.last().is_none_or(|img| img.id != p.image_id) {
            images.push(ImagePredictions {
                id: p.image_id.clone(),
                predictions: Vec::new(),
            });
        }
        if !usable[pi] || failed[pi] {
            continue;
        }
        let freq = pool(&per_pair[pi]);
        let selected = select(
            &freq,
            cfg.aggregation.mode,
            cfg.aggregation.k,
            cfg.aggregation.seed ^ fnv1a(&p.pair_id),
        )?;
        let img = images.last_mut().expect("pushed above");
        for t in &selected {
            let pred = PredictedInteraction::new(
                p.human.bbox,
                p.object.bbox,
                &p.object.label,
                &t.verb,
                t.score,
            )?
            .with_provenance(Provenance {
                sample_index: None,
                rule: rule.clone(),
            });
            img.predictions.push(pred);
        }
        outcome.written += 1;
        aggregation.push(AggregationRecord {
            pair_id: p.pair_id.clone(),
            image_id: p.image_id.clone(),
            num_samples: n,
            extracted: raw_counts[pi],
            refined: freq.total(),
            selected,
        });
    }
    write_atomic(
        &run_dir.join(AGGREGATION_FILE),
        to_jsonl(&aggregation).as_bytes(),
    )?;
    write_atomic(
        &run_dir.join(PREDICTIONS_FILE),
        pretty(&PredictionsFile { images }).as_bytes(),
    )?;
    manifest.finish_stage(
        run_dir,
        "extract",
        &[PAIRS_FILE, TRANSCRIPT_FILE],
        &[AGGREGATION_FILE, PREDICTIONS_FILE],
        outcome.errors.len(),
    )?;
    Ok(outcome)
}

/// Inputs for [`evaluate_predictions`].
pub struct EvaluationInputs<'a> {
    pub predictions: &'a PredictionsFile,
    pub annotations: &'a Path,
    pub vocabulary: &'a VerbVocabulary,
    pub similarity: &'a dyn Similarity,
    pub rarity: Option<&'a RaritySplit>,
}

/// Scores a predictions file against annotations. Annotated images without
/// predictions count with no predictions; predictions for unknown images
/// are an error.
pub fn evaluate_predictions(
    cfg: &PipelineConfig,
    inputs: &EvaluationInputs,
) -> Result<MetricReport> {
    let eval = cfg.evaluation.eval_config();
    eval.validate()?;
    let samples = load_annotations(inputs.annotations, eval.protocol)?;
    let known: HashSet<&str> = samples.iter().map(|s| s.image_id.as_str()).collect();
    let mut preds: HashMap<&str, &[PredictedInteraction]> = HashMap::new();
    for img in &inputs.predictions.images {
        if !known.contains(img.id.as_str()) {
            return Err(Error::validation(
                "predictions",
                format!("image {:?} is not in the annotations", img.id),
            ));
        }
        if preds.insert(&img.id, &img.predictions).is_some() {
            return Err(Error::validation(
                "predictions",
                format!("image {:?} listed twice", img.id),
            ));
        }
    }
    let mut phrases: Vec<String> = inputs
        .predictions
        .images
        .iter()
        .flat_map(|i| i.predictions.iter().map(|p| p.verb_phrase.clone()))
        .chain(
            samples
                .iter()
                .flat_map(|s| s.ground_truth.iter().map(|g| g.verb.clone())),
        )
        .chain(inputs.vocabulary.verbs().iter().cloned())
        .collect();
    phrases.sort();
    phrases.dedup();
    inputs.similarity.prefetch(&phrases)?;
    let reports = samples
        .iter()
        .map(|s| {
            let p = preds.get(s.image_id.as_str()).copied().unwrap_or(&[]);
            evaluate_image(
                &s.image_id,
                p,
                &s.ground_truth,
                inputs.vocabulary,
                inputs.similarity,
                &eval,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    aggregate_report(&reports, inputs.rarity)
}

/// Evaluates `predictions` (the run's own file by default) and writes
/// `report.json` and `report.csv` into the run directory.
pub fn run_evaluate(
    run_dir: &Path,
    cfg: &PipelineConfig,
    annotations: &Path,
    predictions: Option<&Path>,
    similarity: &dyn Similarity,
    label: Option<&str>,
) -> Result<MetricReport> {
    let mut manifest = RunManifest::open(run_dir, cfg)?;
    manifest.record_input("annotations", annotations)?;
    let own = run_dir.join(PREDICTIONS_FILE);
    let (pred_path, num_generations) = match predictions {
        Some(p) => {
            manifest.record_input("external_predictions", p)?;
            (p.to_path_buf(), None)
        }
        None => (own, Some(cfg.generation.num_samples)),
    };
    let vocab_path = cfg
        .evaluation
        .vocabulary
        .as_ref()
        .ok_or_else(|| Error::Config("evaluation.vocabulary is not set".into()))?;
    manifest.record_input("vocabulary", vocab_path)?;
    let vocabulary = VerbVocabulary::load(vocab_path, cfg.evaluation.lemmatize)?;
    let rarity = match &cfg.evaluation.rarity_split {
        Some(p) => {
            manifest.record_input("rarity_split", p)?;
            Some(RaritySplit::load(p)?)
        }
        None => None,
    };
    let file = PredictionsFile::load(&pred_path)?;
    let mut report = evaluate_predictions(
        cfg,
        &EvaluationInputs {
            predictions: &file,
            annotations,
            vocabulary: &vocabulary,
            similarity,
            rarity: rarity.as_ref(),
        },
    )?;
    report.num_generations = num_generations;
    report.label = label.map(str::to_string);
    write_atomic(&run_dir.join(REPORT_JSON), report.to_json().as_bytes())?;
    write_atomic(&run_dir.join(REPORT_CSV), report.to_csv().as_bytes())?;
    let inputs: &[&str] = if predictions.is_some() {
        &[
            "annotations",
            "external_predictions",
            "vocabulary",
            "rarity_split",
        ]
    } else {
        &[
            "annotations",
            PREDICTIONS_FILE,
            "vocabulary",
            "rarity_split",
        ]
    };
    manifest.finish_stage(run_dir, "evaluate", inputs, &[REPORT_JSON, REPORT_CSV], 0)?;
    Ok(report)
}

/// Runs the verb filter over a newline-separated candidate list and writes
/// the kept verbs as a vocabulary file plus the full outcome as JSON.
pub fn run_filter_verbs(
    candidates: &Path,
    provider: &dyn GenerationProvider,
    max_tokens: u32,
    out_vocab: &Path,
) -> Result<VerbFilterOutcome> {
    let text = fs::read_to_string(candidates).map_err(|e| Error::io(candidates, e))?;
    let list: Vec<&str> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .collect();
    let outcome = filter_wordnet_verbs(&list, provider, max_tokens)?;
    let mut vocab = outcome.kept.join("\n");
    vocab.push('\n');
    write_atomic(out_vocab, vocab.as_bytes())?;
    write_atomic(
        &out_vocab.with_extension("outcome.json"),
        pretty(&outcome).as_bytes(),
    )?;
    Ok(outcome)
}

/// Every stage in order with the configured providers, for offline runs.
pub fn run_all(
    run_dir: &Path,
    cfg: &PipelineConfig,
    annotations: &Path,
    detections: Option<&Path>,
    images: Option<&ImageSource>,
) -> Result<MetricReport> {
    let check = |o: StageOutcome| -> Result<()> {
        if o.is_clean() {
            Ok(())
        } else {
            Err(Error::validation(o.stage.clone(), o.summary()))
        }
    };
    check(run_pairs(run_dir, cfg, annotations, detections, images)?)?;
    let provider = build_provider(cfg)?;
    check(run_generate(run_dir, cfg, provider.as_ref(), images)?)?;
    let t2g = build_text_to_graph(cfg)?;
    let sim = build_similarity(cfg)?;
    check(run_extract(
        run_dir,
        cfg,
        t2g.as_deref(),
        Some(sim.as_ref()),
    )?)?;
    run_evaluate(run_dir, cfg, annotations, None, sim.as_ref(), None)
}
