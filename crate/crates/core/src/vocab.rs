//! Evaluation verb vocabularies, the object-verb co-occurrence table, semantic
//! similarity backends and the yes/no verb pre-filter.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::concurrency::Semaphore;
use crate::error::{Error, Result};
use crate::generation::{GenerationProvider, GenerationRequest};
use crate::http::{JsonClient, RetryPolicy};
use crate::text::{normalize_label, normalize_phrase};

/// Ordered, duplicate-free set of normalized evaluation verbs.
#[derive(Debug, Clone, PartialEq)]
pub struct VerbVocabulary {
    verbs: Vec<String>,
    index: HashMap<String, usize>,
    source: String,
}

impl VerbVocabulary {
    pub fn new<I, S>(phrases: I, source: &str, lemmatize: bool) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut verbs = Vec::new();
        let mut index = HashMap::new();
        for raw in phrases {
            let verb = normalize_phrase(raw.as_ref(), lemmatize);
            if verb.is_empty() {
                continue;
            }
            if let Some(&prev) = index.get(&verb) {
                return Err(Error::Config(format!(
                    "vocabulary {source:?}: {:?} duplicates entry {prev} ({:?}) after normalization",
                    raw.as_ref(),
                    verbs[prev]
                )));
            }
            index.insert(verb.clone(), verbs.len());
            verbs.push(verb);
        }
        if verbs.is_empty() {
            return Err(Error::Config(format!("vocabulary {source:?} is empty")));
        }
        Ok(Self {
            verbs,
            index,
            source: source.to_string(),
        })
    }

    /// Newline-delimited verb phrases; blank lines are skipped.
    pub fn load(path: impl AsRef<Path>, lemmatize: bool) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let source = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::new(text.lines(), &source, lemmatize)
    }

    pub fn len(&self) -> usize {
        self.verbs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.verbs.is_empty()
    }

    pub fn verbs(&self) -> &[String] {
        &self.verbs
    }

    pub fn verb(&self, id: usize) -> Option<&str> {
        self.verbs.get(id).map(String::as_str)
    }

    pub fn index_of(&self, verb: &str) -> Option<usize> {
        self.index.get(verb).copied()
    }

    pub fn source(&self) -> &str {
        &self.source
    }
}

/// Dense object x verb table of interactions occurring in a dataset.
/// Kept as data for closed-vocabulary baselines; evaluation never reads it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoOccurrenceMatrix {
    objects: Vec<String>,
    verbs: Vec<String>,
    cells: Vec<bool>,
}

#[derive(Deserialize)]
struct RawMatrix {
    objects: Vec<String>,
    verbs: Vec<String>,
    pairs: Vec<(String, String)>,
}

impl CoOccurrenceMatrix {
    pub fn from_pairs<'a>(
        objects: Vec<String>,
        verbs: Vec<String>,
        pairs: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Result<Self> {
        let mut m = Self {
            cells: vec![false; objects.len() * verbs.len()],
            objects,
            verbs,
        };
        for (o, v) in pairs {
            let oi = m.object_index(o)?;
            let vi = m.verb_index(v)?;
            let n = m.verbs.len();
            m.cells[oi * n + vi] = true;
        }
        Ok(m)
    }

    /// JSON `{"objects": [..], "verbs": [..], "pairs": [[object, verb], ..]}`.
    pub fn parse(json: &str) -> Result<Self> {
        let raw: RawMatrix =
            serde_json::from_str(json).map_err(|e| Error::parse("co-occurrence matrix", e))?;
        let objects = raw.objects.iter().map(|s| normalize_label(s)).collect();
        let verbs = raw.verbs.iter().map(|s| normalize_label(s)).collect();
        let pairs: Vec<(String, String)> = raw
            .pairs
            .iter()
            .map(|(o, v)| (normalize_label(o), normalize_label(v)))
            .collect();
        Self::from_pairs(
            objects,
            verbs,
            pairs.iter().map(|(o, v)| (o.as_str(), v.as_str())),
        )
    }

    fn object_index(&self, o: &str) -> Result<usize> {
        self.objects
            .iter()
            .position(|x| x == o)
            .ok_or_else(|| Error::Config(format!("unknown object {o:?} in co-occurrence pairs")))
    }

    fn verb_index(&self, v: &str) -> Result<usize> {
        self.verbs
            .iter()
            .position(|x| x == v)
            .ok_or_else(|| Error::Config(format!("unknown verb {v:?} in co-occurrence pairs")))
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.objects.len(), self.verbs.len())
    }

    pub fn allows(&self, object: &str, verb: &str) -> bool {
        match (self.object_index(object), self.verb_index(verb)) {
            (Ok(o), Ok(v)) => self.cells[o * self.verbs.len() + v],
            _ => false,
        }
    }

    pub fn nonzero(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }
}

/// Semantic similarity between two normalized verb phrases, in `[-1, 1]`.
pub trait Similarity: Send + Sync {
    fn similarity(&self, a: &str, b: &str) -> Result<f64>;

    /// Warms any cache for `phrases`; a batching hint, never required.
    fn prefetch(&self, _phrases: &[String]) -> Result<()> {
        Ok(())
    }
}

impl<T: Similarity + ?Sized> Similarity for Arc<T> {
    fn similarity(&self, a: &str, b: &str) -> Result<f64> {
        (**self).similarity(a, b)
    }

    fn prefetch(&self, phrases: &[String]) -> Result<()> {
        (**self).prefetch(phrases)
    }
}

/// 1 when the strings are equal, 0 otherwise. Reduces the semantic metrics
/// to their closed-vocabulary form.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactMatch;

impl Similarity for ExactMatch {
    fn similarity(&self, a: &str, b: &str) -> Result<f64> {
        Ok(if a == b { 1.0 } else { 0.0 })
    }
}

/// Produces raw embedding vectors for phrases.
pub trait EmbeddingSource: Send + Sync {
    fn embed(&self, phrases: &[String]) -> Result<Vec<Vec<f32>>>;
}

/// Phrase-to-vector table read from `phrase<TAB>f f f ...` lines.
#[derive(Debug, Clone, Default)]
pub struct TsvEmbeddings {
    table: HashMap<String, Vec<f32>>,
    dim: usize,
}

impl TsvEmbeddings {
    pub fn parse(text: &str) -> Result<Self> {
        let mut table = HashMap::new();
        let mut dim = 0;
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let ctx = format!("embedding table line {}", n + 1);
            let (phrase, rest) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(&ctx, "expected phrase<TAB>vector"))?;
            let vector = rest
                .split_whitespace()
                .map(|t| t.parse::<f32>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::parse(&ctx, e))?;
            if vector.is_empty() || vector.iter().any(|x| !x.is_finite()) {
                return Err(Error::parse(&ctx, "empty or non-finite vector"));
            }
            if dim == 0 {
                dim = vector.len();
            } else if vector.len() != dim {
                return Err(Error::parse(
                    &ctx,
                    format!("dimension {} differs from {dim}", vector.len()),
                ));
            }
            table.insert(normalize_label(phrase), vector);
        }
        Ok(Self { table, dim })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl EmbeddingSource for TsvEmbeddings {
    fn embed(&self, phrases: &[String]) -> Result<Vec<Vec<f32>>> {
        phrases
            .iter()
            .map(|p| {
                self.table
                    .get(p)
                    .cloned()
                    .ok_or_else(|| Error::MissingPhrase(p.clone()))
            })
            .collect()
    }
}

/// Remote embedding service: `POST {"inputs": [..]}` returning
/// `{"vectors": [[..], ..]}`.
#[derive(Debug)]
pub struct HttpEmbeddings {
    client: JsonClient,
    in_flight: Semaphore,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    inputs: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f32>>,
}

impl HttpEmbeddings {
    pub fn new(
        url: &str,
        api_key: Option<String>,
        retry: RetryPolicy,
        max_in_flight: usize,
    ) -> Self {
        Self {
            client: JsonClient::new(url, api_key, retry),
            in_flight: Semaphore::new(max_in_flight),
        }
    }
}

impl EmbeddingSource for HttpEmbeddings {
    fn embed(&self, phrases: &[String]) -> Result<Vec<Vec<f32>>> {
        let _permit = self.in_flight.acquire();
        let resp: EmbedResponse = self
            .client
            .post(&EmbedRequest { inputs: phrases }, "embedding")?;
        if resp.vectors.len() != phrases.len() {
            return Err(Error::transport(
                "embedding",
                format!(
                    "{} vectors returned for {} inputs",
                    resp.vectors.len(),
                    phrases.len()
                ),
            ));
        }
        Ok(resp.vectors)
    }
}

/// Cosine similarity over unit-normalized embeddings with a shared cache.
///
/// `template` wraps each phrase before embedding; `{}` marks the phrase.
pub struct EmbeddingSimilarity<S> {
    source: S,
    template: String,
    cache: RwLock<HashMap<String, Arc<[f64]>>>,
}

impl<S: EmbeddingSource> EmbeddingSimilarity<S> {
    pub fn new(source: S) -> Self {
        Self::with_template(source, "{}")
    }

    pub fn with_template(source: S, template: &str) -> Self {
        Self {
            source,
            template: template.to_string(),
            cache: RwLock::new(HashMap::new()),
        }
    }

    fn render(&self, phrase: &str) -> String {
        self.template.replace("{}", phrase)
    }

    fn unit(raw: &[f32], phrase: &str) -> Result<Arc<[f64]>> {
        let v: Vec<f64> = raw.iter().map(|&x| f64::from(x)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::validation(
                format!("embedding of {phrase:?}"),
                "zero or non-finite vector",
            ));
        }
        Ok(v.iter().map(|x| x / norm).collect())
    }

    fn fetch(&self, phrases: &[String]) -> Result<()> {
        let missing: Vec<String> = {
            let cache = self.cache.read().expect("cache poisoned");
            let mut m: Vec<String> = phrases
                .iter()
                .filter(|p| !cache.contains_key(p.as_str()))
                .cloned()
                .collect();
            m.sort();
            m.dedup();
            m
        };
        if missing.is_empty() {
            return Ok(());
        }
        let rendered: Vec<String> = missing.iter().map(|p| self.render(p)).collect();
        let vectors = self.source.embed(&rendered).map_err(|e| match e {
            // report the caller's phrase, not the templated one
            Error::MissingPhrase(r) => {
                let i = rendered.iter().position(|x| *x == r).unwrap_or(0);
                Error::MissingPhrase(missing[i].clone())
            }
            other => other,
        })?;
        let units = missing
            .iter()
            .zip(&vectors)
            .map(|(p, v)| Ok((p.clone(), Self::unit(v, p)?)))
            .collect::<Result<Vec<_>>>()?;
        let mut cache = self.cache.write().expect("cache poisoned");
        for (p, u) in units {
            cache.entry(p).or_insert(u);
        }
        Ok(())
    }

    fn vector(&self, phrase: &str) -> Result<Arc<[f64]>> {
        if let Some(v) = self.cache.read().expect("cache poisoned").get(phrase) {
            return Ok(v.clone());
        }
        self.fetch(&[phrase.to_string()])?;
        Ok(self.cache.read().expect("cache poisoned")[phrase].clone())
    }

    pub fn cached(&self) -> usize {
        self.cache.read().expect("cache poisoned").len()
    }
}

impl<S: EmbeddingSource> Similarity for EmbeddingSimilarity<S> {
    fn similarity(&self, a: &str, b: &str) -> Result<f64> {
        let (va, vb) = (self.vector(a)?, self.vector(b)?);
        if va.len() != vb.len() {
            return Err(Error::validation(
                "similarity",
                format!("dimension mismatch between {a:?} and {b:?}"),
            ));
        }
        if a == b {
            // exact 1 so identical phrases pass a threshold of 1
            return Ok(1.0);
        }
        let dot: f64 = va.iter().zip(vb.iter()).map(|(x, y)| x * y).sum();
        Ok(dot.clamp(-1.0, 1.0))
    }

    fn prefetch(&self, phrases: &[String]) -> Result<()> {
        self.fetch(phrases)
    }
}

/// Every vocabulary verb whose similarity to `pred_verb` is at least `tau`,
/// in vocabulary order.
pub fn map_to_vocabulary(
    pred_verb: &str,
    vocab: &VerbVocabulary,
    tau: f64,
    sim: &dyn Similarity,
) -> Result<Vec<(usize, f64)>> {
    let mut out = Vec::new();
    for (i, v) in vocab.verbs().iter().enumerate() {
        let s = sim.similarity(pred_verb, v)?;
        if s >= tau {
            out.push((i, s));
        }
    }
    Ok(out)
}

/// Question asked per candidate verb.
pub fn verb_filter_question(verb: &str) -> String {
    format!("Can a person {verb} an object? Reply with either yes or no")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerbDecision {
    Yes,
    No,
    Undecided,
}

/// Reads the first alphabetic word of a reply as yes or no.
pub fn parse_yes_no(reply: &str) -> VerbDecision {
    let word: String = reply
        .trim_start_matches(|c: char| !c.is_alphabetic())
        .chars()
        .take_while(|c| c.is_alphabetic())
        .collect::<String>()
        .to_lowercase();
    match word.as_str() {
        "yes" => VerbDecision::Yes,
        "no" => VerbDecision::No,
        _ => VerbDecision::Undecided,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VerbFilterOutcome {
    pub kept: Vec<String>,
    pub rejected: Vec<String>,
    pub undecided: Vec<String>,
}

impl VerbFilterOutcome {
    pub fn into_vocabulary(self, source: &str) -> Result<VerbVocabulary> {
        VerbVocabulary::new(self.kept, source, false)
    }
}

/// Asks `provider` whether a person can perform each candidate verb on an
/// object and keeps the verbs answered "yes". Each request is keyed by the
/// normalized verb.
pub fn filter_wordnet_verbs<S: AsRef<str>>(
    candidates: &[S],
    provider: &dyn GenerationProvider,
    max_tokens: u32,
) -> Result<VerbFilterOutcome> {
    let mut out = VerbFilterOutcome::default();
    if candidates.is_empty() {
        log::warn!("verb filter called with no candidates");
        return Ok(out);
    }
    let mut seen = BTreeMap::new();
    for raw in candidates {
        let verb = normalize_label(raw.as_ref());
        if verb.is_empty() || seen.insert(verb.clone(), ()).is_some() {
            continue;
        }
        let req = GenerationRequest::text_only(&verb, verb_filter_question(&verb), 0.0, max_tokens);
        let resp = provider.generate(&req)?;
        let reply = resp.texts.first().map(String::as_str).unwrap_or("");
        match parse_yes_no(reply) {
            VerbDecision::Yes => out.kept.push(verb),
            VerbDecision::No => out.rejected.push(verb),
            VerbDecision::Undecided => {
                log::warn!("verb {verb:?}: undecided reply {reply:?}");
                out.undecided.push(verb);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generation::MockProvider;

    fn fixture() -> EmbeddingSimilarity<TsvEmbeddings> {
        let tsv = "ride\t1 0\nsit\t0 1\nstraddle\t0.8 0.6\nmount\t0.8 -0.6\nlean on\t3 4\n";
        EmbeddingSimilarity::new(TsvEmbeddings::parse(tsv).unwrap())
    }

    #[test]
    fn similarity_examples() {
        let s = fixture();
        assert!((s.similarity("ride", "ride").unwrap() - 1.0).abs() < 1e-6);
        assert_eq!(s.similarity("ride", "sit").unwrap(), 0.0);
        assert_eq!(
            s.similarity("straddle", "sit").unwrap(),
            s.similarity("sit", "straddle").unwrap()
        );
        // (3,4)/5 . (0,1) = 0.8
        assert!((s.similarity("lean on", "sit").unwrap() - 0.8).abs() < 1e-6);
    }

    #[test]
    fn missing_phrase_is_named() {
        let err = fixture().similarity("ride", "juggle").unwrap_err();
        assert!(
            matches!(err, Error::MissingPhrase(ref p) if p == "juggle"),
            "{err}"
        );
    }

    #[test]
    fn cache_is_transparent() {
        let s = fixture();
        let first = s.similarity("straddle", "mount").unwrap();
        assert_eq!(s.cached(), 2);
        let fresh = fixture();
        fresh
            .prefetch(&["straddle".into(), "mount".into()])
            .unwrap();
        assert_eq!(first, s.similarity("straddle", "mount").unwrap());
        assert_eq!(first, fresh.similarity("straddle", "mount").unwrap());
    }

    #[test]
    fn template_wraps_phrases() {
        let tsv = "person ride object\t1 0\nperson sit object\t0 1\n";
        let s = EmbeddingSimilarity::with_template(
            TsvEmbeddings::parse(tsv).unwrap(),
            "person {} object",
        );
        assert_eq!(s.similarity("ride", "sit").unwrap(), 0.0);
        assert!(matches!(
            s.similarity("ride", "hold"),
            Err(Error::MissingPhrase(p)) if p == "hold"
        ));
    }

    #[test]
    fn tsv_rejects_ragged_rows() {
        assert!(TsvEmbeddings::parse("a\t1 2\nb\t1 2 3\n").is_err());
        assert!(TsvEmbeddings::parse("a 1 2\n").is_err());
        assert!(TsvEmbeddings::parse("a\t1 x\n").is_err());
    }

    #[test]
    fn vocabulary_rejects_duplicates() {
        let err = VerbVocabulary::new(["ride", "Sit_on", "sit on"], "t", false).unwrap_err();
        assert!(err.to_string().contains("sit on"), "{err}");
        assert!(VerbVocabulary::new(Vec::<String>::new(), "t", false).is_err());
        let v = VerbVocabulary::new(["ride", "", "sit_on"], "t", false).unwrap();
        assert_eq!(v.verbs(), ["ride", "sit on"]);
        assert_eq!(v.index_of("sit on"), Some(1));
        let lem = VerbVocabulary::new(["riding", "ride"], "t", true);
        assert!(lem.is_err());
    }

    #[test]
    fn vocabulary_mapping() {
        let s = fixture();
        let vocab = VerbVocabulary::new(["ride", "sit", "lean on"], "t", false).unwrap();
        let hits = map_to_vocabulary("ride", &vocab, 0.95, &s).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].0, 0);
        assert!((hits[0].1 - 1.0).abs() < 1e-9);
        assert!(map_to_vocabulary("mount", &vocab, 0.9, &s)
            .unwrap()
            .is_empty());
        // straddle . ride = 0.8, straddle . sit = 0.6 (fixture arithmetic)
        let two = VerbVocabulary::new(["ride", "mount"], "t", false).unwrap();
        let hits = map_to_vocabulary("straddle", &two, 0.2, &s).unwrap();
        assert_eq!(hits.iter().map(|h| h.0).collect::<Vec<_>>(), vec![0, 1]);
        assert!((hits[0].1 - 0.8).abs() < 1e-6 && (hits[1].1 - 0.28).abs() < 1e-6);
    }

    #[test]
    fn equidistant_prediction_expands_to_both() {
        // cos(p, a) = cos(p, b) = 0.8
        let tsv = "p\t1 0\nu\t0.8 0.6\nw\t0.8 -0.6\n";
        let s = EmbeddingSimilarity::new(TsvEmbeddings::parse(tsv).unwrap());
        let vocab = VerbVocabulary::new(["u", "w"], "t", false).unwrap();
        let hits = map_to_vocabulary("p", &vocab, 0.7, &s).unwrap();
        assert_eq!(hits.len(), 2);
        assert!(hits.iter().all(|h| (h.1 - 0.8).abs() < 1e-6));
    }

    #[test]
    fn exact_match_similarity() {
        assert_eq!(ExactMatch.similarity("ride", "ride").unwrap(), 1.0);
        assert_eq!(ExactMatch.similarity("ride", "rides").unwrap(), 0.0);
    }

    #[test]
    fn co_occurrence_lookup() {
        let m = CoOccurrenceMatrix::parse(
            r#"{"objects": ["bed", "bike"], "verbs": ["lie on", "sit on", "ride"],
                "pairs": [["bed", "lie on"], ["bike", "ride"], ["bike", "sit on"]]}"#,
        )
        .unwrap();
        assert_eq!(m.shape(), (2, 3));
        assert!(m.allows("bed", "lie on"));
        assert!(!m.allows("bed", "sit on"));
        assert_eq!(m.nonzero(), 3);
        assert!(CoOccurrenceMatrix::parse(
            r#"{"objects": ["bed"], "verbs": ["ride"], "pairs": [["car", "ride"]]}"#
        )
        .is_err());
    }

    #[test]
    fn yes_no_parsing() {
        assert_eq!(parse_yes_no("Yes."), VerbDecision::Yes);
        assert_eq!(parse_yes_no("  \"no\", because"), VerbDecision::No);
        assert_eq!(parse_yes_no("Nothing to say"), VerbDecision::Undecided);
        assert_eq!(parse_yes_no(""), VerbDecision::Undecided);
    }

    #[test]
    fn verb_filter_keeps_yes_answers() {
        let pool = r#"{"push": ["Yes"], "bordering": ["No."], "be": ["maybe"]}"#;
        let provider = MockProvider::parse(pool).unwrap();
        let out = filter_wordnet_verbs(&["push", "bordering", "be", "Push"], &provider, 8).unwrap();
        assert_eq!(out.kept, vec!["push"]);
        assert_eq!(out.rejected, vec!["bordering"]);
        assert_eq!(out.undecided, vec!["be"]);
        let vocab = out.into_vocabulary("wordnet").unwrap();
        assert_eq!(vocab.verbs(), ["push"]);

        let empty = filter_wordnet_verbs::<&str>(&[], &provider, 8).unwrap();
        assert!(empty.kept.is_empty());
    }

    #[test]
    fn verb_filter_question_text() {
        assert_eq!(
            verb_filter_question("push"),
            "Can a person push an object? Reply with either yes or no"
        );
    }
}
