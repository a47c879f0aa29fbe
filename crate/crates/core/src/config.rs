//! Declarative pipeline configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aggregation::SelectionMode;
use crate::datamodel::{
    DetectionFilter, HumanLexicon, InstancePool, Protocol, DEFAULT_HUMAN_LABELS,
};
use crate::error::{Error, Result};
use crate::extraction::{
    ExtractorKind, ObjectMatch, RefinementConfig, DEFAULT_BLACKLIST, DEFAULT_SUBJECT_WORDS,
};
use crate::generation::{PromptKind, SamplingConfig};
use crate::http::RetryPolicy;
use crate::metrics::{ClassMode, EvalConfig, DEFAULT_THRESHOLDS};
use crate::pairing::VisualMode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionSection {
    pub conf_threshold: f64,
    pub min_instances: usize,
    pub max_instances: usize,
    pub pool: InstancePool,
    pub include_human_human: bool,
    pub human_labels: Vec<String>,
}

impl Default for DetectionSection {
    fn default() -> Self {
        let f = DetectionFilter::default();
        Self {
            conf_threshold: f.conf_threshold,
            min_instances: f.min_instances,
            max_instances: f.max_instances,
            pool: f.pool,
            include_human_human: true,
            human_labels: DEFAULT_HUMAN_LABELS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl DetectionSection {
    pub fn filter(&self) -> DetectionFilter {
        DetectionFilter {
            conf_threshold: self.conf_threshold,
            min_instances: self.min_instances,
            max_instances: self.max_instances,
            pool: self.pool,
        }
    }

    pub fn lexicon(&self) -> Result<HumanLexicon> {
        HumanLexicon::new(&self.human_labels)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptSection {
    pub kind: PromptKind,
    pub visual_mode: VisualMode,
    /// Write each rendered visual prompt as a PNG next to the pair list.
    pub persist: bool,
}

impl Default for PromptSection {
    fn default() -> Self {
        Self {
            kind: PromptKind::Direct,
            visual_mode: VisualMode::Crop,
            persist: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    #[default]
    Mock,
    Chat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationSection {
    pub provider: ProviderKind,
    /// Canned responses for the mock provider.
    pub mock_pool: Option<PathBuf>,
    pub endpoint: Option<String>,
    pub model: String,
    /// Environment variable holding the API key.
    pub api_key_env: String,
    pub supports_n: bool,
    pub temperature: f64,
    pub max_tokens: u32,
    pub num_samples: usize,
    pub seed: u64,
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
}

impl Default for GenerationSection {
    fn default() -> Self {
        let s = SamplingConfig::default();
        Self {
            provider: ProviderKind::Mock,
            mock_pool: None,
            endpoint: None,
            model: String::new(),
            api_key_env: "UHOI_API_KEY".into(),
            supports_n: true,
            temperature: s.temperature,
            max_tokens: s.max_tokens,
            num_samples: s.num_samples,
            seed: s.seed,
            max_in_flight: 8,
            retry: RetryPolicy::default(),
        }
    }
}

impl GenerationSection {
    pub fn sampling(&self) -> SamplingConfig {
        SamplingConfig {
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            num_samples: self.num_samples,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractionSection {
    pub extractor: ExtractorKind,
    pub t2g_endpoint: Option<String>,
    /// Canned text-to-graph output for offline runs.
    pub t2g_table: Option<PathBuf>,
    pub t2g_api_key_env: String,
    pub subject_words: Vec<String>,
    pub blacklist: Vec<String>,
    pub object_match: ObjectMatch,
    pub max_in_flight: usize,
}

impl Default for ExtractionSection {
    fn default() -> Self {
        Self {
            extractor: ExtractorKind::T2g,
            t2g_endpoint: None,
            t2g_table: None,
            t2g_api_key_env: "UHOI_T2G_API_KEY".into(),
            subject_words: DEFAULT_SUBJECT_WORDS
                .iter()
                .map(|s| s.to_string())
                .collect(),
            blacklist: DEFAULT_BLACKLIST.iter().map(|s| s.to_string()).collect(),
            object_match: ObjectMatch::Exact,
            max_in_flight: 8,
        }
    }
}

impl ExtractionSection {
    pub fn refinement(&self) -> Result<RefinementConfig> {
        let cfg = RefinementConfig {
            human_lexicon: HumanLexicon::new(&self.subject_words)?,
            blacklist: self
                .blacklist
                .iter()
                .map(|w| w.trim().to_lowercase())
                .collect(),
            object_match: self.object_match,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AggregationSection {
    pub mode: SelectionMode,
    pub k: usize,
    pub seed: u64,
}

impl Default for AggregationSection {
    fn default() -> Self {
        Self {
            mode: SelectionMode::Topk,
            k: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimilaritySection {
    /// Phrase vector table (TSV).
    pub embeddings: Option<PathBuf>,
    pub endpoint: Option<String>,
    pub api_key_env: String,
    /// Phrase template, `{}` is the verb phrase.
    pub template: String,
    pub max_in_flight: usize,
}

impl Default for SimilaritySection {
    fn default() -> Self {
        Self {
            embeddings: None,
            endpoint: None,
            api_key_env: "UHOI_EMBED_API_KEY".into(),
            template: "{}".into(),
            max_in_flight: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub thresholds: Vec<f64>,
    pub iou_threshold: f64,
    pub class_mode: ClassMode,
    pub protocol: Protocol,
    pub vocabulary: Option<PathBuf>,
    pub lemmatize: bool,
    pub rarity_split: Option<PathBuf>,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            iou_threshold: crate::geometry::DEFAULT_IOU_THRESHOLD,
            class_mode: ClassMode::Verb,
            protocol: Protocol::Annotated,
            vocabulary: None,
            lemmatize: false,
            rarity_split: None,
        }
    }
}

impl EvaluationSection {
    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            thresholds: self.thresholds.clone(),
            iou_threshold: self.iou_threshold,
            class_mode: self.class_mode,
            protocol: self.protocol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub detection: DetectionSection,
    pub prompt: PromptSection,
    pub generation: GenerationSection,
    pub extraction: ExtractionSection,
    pub aggregation: AggregationSection,
    pub similarity: SimilaritySection,
    pub evaluation: EvaluationSection,
}

impl PipelineConfig {
    /// Parses TOML; relative paths are resolved against `base`.
    pub fn from_toml(text: &str, base: Option<&Path>) -> Result<Self> {
        let mut cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        if let Some(base) = base {
            cfg.resolve_paths(base);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path.parent())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.generation.mock_pool,
            &mut self.extraction.t2g_table,
            &mut self.similarity.embeddings,
            &mut self.evaluation.vocabulary,
            &mut self.evaluation.rarity_split,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.detection;
        if !(0.0..=1.0).contains(&d.conf_threshold) {
            return Err(Error::Config(format!(
                "detection confidence {} outside [0, 1]",
                d.conf_threshold
            )));
        }
        if d.min_instances > d.max_instances || d.max_instances == 0 {
            return Err(Error::Config(format!(
                "instance bounds min {} / max {} are inconsistent",
                d.min_instances, d.max_instances
            )));
        }
        d.lexicon()?;
        let g = &self.generation;
        if g.num_samples == 0 || g.max_tokens == 0 || g.max_in_flight == 0 {
            return Err(Error::Config(
                "num_samples, max_tokens and max_in_flight must be positive".into(),
            ));
        }
        if !(g.temperature >= 0.0 && g.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "temperature {} must be >= 0",
                g.temperature
            )));
        }
        if self.aggregation.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if !self.similarity.template.contains("{}") {
            return Err(Error::Config("similarity template must contain {}".into()));
        }
        self.extraction.refinement()?;
        self.evaluation.eval_config().validate()
    }
}
