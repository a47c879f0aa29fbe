//! Turning generated text into interaction triplets and pruning them down to
//! human-object interactions about the prompted object.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::datamodel::HumanLexicon;
use crate::error::{Error, Result};
use crate::http::{JsonClient, RetryPolicy};
use crate::text::{fnv1a, normalize_label};
use crate::vocab::Similarity;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractorKind {
    #[default]
    T2g,
    RuleBased,
    Structured,
}

impl ExtractorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExtractorKind::T2g => "t2g",
            ExtractorKind::RuleBased => "rule_based",
            ExtractorKind::Structured => "structured",
        }
    }
}

impl fmt::Display for ExtractorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExtractorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [
            ExtractorKind::T2g,
            ExtractorKind::RuleBased,
            ExtractorKind::Structured,
        ]
        .into_iter()
        .find(|k| k.as_str() == s)
        .ok_or_else(|| Error::Config(format!("unknown extractor {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RawTriplet {
    pub subject: String,
    pub verb: String,
    pub object: String,
    pub source: ExtractorKind,
    pub sample_index: usize,
}

impl RawTriplet {
    /// Normalizes all fields; `None` when any field ends up empty.
    pub fn new(
        subject: &str,
        verb: &str,
        object: &str,
        source: ExtractorKind,
        sample_index: usize,
    ) -> Option<Self> {
        let (subject, verb, object) = (
            normalize_label(subject),
            normalize_label(verb),
            normalize_label(object),
        );
        if subject.is_empty() || verb.is_empty() || object.is_empty() {
            return None;
        }
        Some(Self {
            subject,
            verb,
            object,
            source,
            sample_index,
        })
    }

    pub fn key(&self) -> TripletKey {
        TripletKey {
            subject: self.subject.clone(),
            verb: self.verb.clone(),
            object: self.object.clone(),
        }
    }
}

/// Canonical identity of a triplet, ordered lexicographically by
/// `subject|verb|object`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TripletKey {
    pub subject: String,
    pub verb: String,
    pub object: String,
}

impl fmt::Display for TripletKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}|{}|{}", self.subject, self.verb, self.object)
    }
}

/// Text-to-graph model returning `(subject, predicate, object)` triplets.
pub trait TextToGraph: Send + Sync {
    fn parse(&self, text: &str) -> Result<Vec<(String, String, String)>>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphTriplet {
    pub subject: String,
    pub predicate: String,
    pub object: String,
}

#[derive(Deserialize)]
struct GraphResponse {
    triplets: Vec<GraphTriplet>,
}

/// Remote text-to-graph service: `POST {"text": ..}` returning
/// `{"triplets": [{"subject", "predicate", "object"}]}`.
#[derive(Debug, Clone)]
pub struct HttpTextToGraph {
    client: JsonClient,
}

impl HttpTextToGraph {
    pub fn new(url: &str, api_key: Option<String>, retry: RetryPolicy) -> Self {
        Self {
            client: JsonClient::new(url, api_key, retry),
        }
    }
}

impl TextToGraph for HttpTextToGraph {
    fn parse(&self, text: &str) -> Result<Vec<(String, String, String)>> {
        let ctx = format!("text-to-graph text#{:016x}", fnv1a(text));
        let resp: GraphResponse = self
            .client
            .post(&serde_json::json!({ "text": text }), &ctx)?;
        Ok(resp
            .triplets
            .into_iter()
            .map(|t| (t.subject, t.predicate, t.object))
            .collect())
    }
}

/// Canned text-to-graph output keyed by the trimmed input text. Unknown texts
/// parse to nothing.
#[derive(Debug, Clone, Default)]
pub struct FileTextToGraph {
    table: BTreeMap<String, Vec<GraphTriplet>>,
}

impl FileTextToGraph {
    pub fn parse_table(json: &str) -> Result<Self> {
        let raw: BTreeMap<String, Vec<GraphTriplet>> =
            serde_json::from_str(json).map_err(|e| Error::parse("text-to-graph table", e))?;
        Ok(Self {
            table: raw
                .into_iter()
                .map(|(k, v)| (k.trim().to_string(), v))
                .collect(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let json = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_table(&json)
    }
}

impl TextToGraph for FileTextToGraph {
    fn parse(&self, text: &str) -> Result<Vec<(String, String, String)>> {
        Ok(self
            .table
            .get(text.trim())
            .map(|ts| {
                ts.iter()
                    .map(|t| (t.subject.clone(), t.predicate.clone(), t.object.clone()))
                    .collect()
            })
            .unwrap_or_default())
    }
}

pub fn extract_t2g(
    text: &str,
    provider: &dyn TextToGraph,
    sample_index: usize,
) -> Result<Vec<RawTriplet>> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    Ok(provider
        .parse(text)?
        .into_iter()
        .filter_map(|(s, p, o)| RawTriplet::new(&s, &p, &o, ExtractorKind::T2g, sample_index))
        .collect())
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StructuredParse {
    pub triplets: Vec<RawTriplet>,
    /// An explicit `(person, none, obj)` answer was found.
    pub no_interaction: bool,
    pub malformed: usize,
}

fn tuple_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\(([^()]*)\)").expect("valid regex"))
}

/// Lenient scan for `(subject, verb, object)` groups. The literal object
/// `obj` is replaced with `object_label`.
pub fn parse_structured_detailed(
    text: &str,
    object_label: &str,
    sample_index: usize,
) -> StructuredParse {
    let mut out = StructuredParse::default();
    for cap in tuple_regex().captures_iter(text) {
        let parts: Vec<&str> = cap[1]
            .split(',')
            .map(|p| {
                p.trim()
                    .trim_matches(|c| c == '"' || c == '\'' || c == '<' || c == '>')
            })
            .collect();
        if parts.len() != 3 || parts.iter().any(|p| p.trim().is_empty()) {
            out.malformed += 1;
            continue;
        }
        if normalize_label(parts[1]) == "none" {
            out.no_interaction = true;
            continue;
        }
        let object = if normalize_label(parts[2]) == "obj" {
            object_label
        } else {
            parts[2]
        };
        match RawTriplet::new(
            parts[0],
            parts[1],
            object,
            ExtractorKind::Structured,
            sample_index,
        ) {
            Some(t) => out.triplets.push(t),
            None => out.malformed += 1,
        }
    }
    out
}

pub fn parse_structured(text: &str, object_label: &str) -> Vec<RawTriplet> {
    parse_structured_detailed(text, object_label, 0).triplets
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Class {
    Det,
    Prep,
    Pron,
    Aux,
    Conj,
    Neg,
    Mod,
    Poss,
    Comma,
    Word,
}

struct WordLists {
    determiners: HashSet<&'static str>,
    prepositions: HashSet<&'static str>,
    pronouns: HashSet<&'static str>,
    auxiliaries: HashSet<&'static str>,
    conjunctions: HashSet<&'static str>,
    modifiers: HashSet<&'static str>,
}

fn word_list(text: &'static str) -> HashSet<&'static str> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .collect()
}

fn lists() -> &'static WordLists {
    static LISTS: OnceLock<WordLists> = OnceLock::new();
    LISTS.get_or_init(|| WordLists {
        determiners: word_list(include_str!("../data/determiners.txt")),
        prepositions: word_list(include_str!("../data/prepositions.txt")),
        pronouns: word_list(include_str!("../data/pronouns.txt")),
        auxiliaries: word_list(include_str!("../data/auxiliaries.txt")),
        conjunctions: word_list(include_str!("../data/conjunctions.txt")),
        modifiers: word_list(include_str!("../data/modifiers.txt")),
    })
}

/// Auxiliary and copular words the rule-based extractor never emits as verbs.
pub fn auxiliary_words() -> impl Iterator<Item = &'static str> {
    lists().auxiliaries.iter().copied()
}

#[derive(Debug, Clone)]
struct Token {
    text: String,
    class: Class,
}

fn classify(word: &str) -> Class {
    let l = lists();
    if word == "'s" {
        Class::Poss
    } else if word == "," {
        Class::Comma
    } else if matches!(word, "not" | "never" | "n't") {
        Class::Neg
    } else if word.chars().all(|c| c.is_ascii_digit()) || l.determiners.contains(word) {
        Class::Det
    } else if l.auxiliaries.contains(word) {
        Class::Aux
    } else if l.prepositions.contains(word) {
        Class::Prep
    } else if l.pronouns.contains(word) {
        Class::Pron
    } else if l.conjunctions.contains(word) {
        Class::Conj
    } else if l.modifiers.contains(word) || (word.len() > 4 && word.ends_with("ly")) {
        Class::Mod
    } else {
        Class::Word
    }
}

fn sentences(text: &str) -> impl Iterator<Item = &str> {
    text.split(['.', '!', '?', ';', ':', '\n'])
        .filter(|s| !s.trim().is_empty())
}

fn tokenize(sentence: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let lowered = sentence.to_lowercase();
    let mut push = |w: &str| {
        if w.is_empty() {
            return;
        }
        if w == "," {
            out.push(Token {
                text: ",".into(),
                class: Class::Comma,
            });
        } else if let Some(stem) = w.strip_suffix("n't") {
            if !stem.is_empty() {
                out.push(Token {
                    text: stem.to_string(),
                    class: classify(stem),
                });
            }
            out.push(Token {
                text: "n't".into(),
                class: Class::Neg,
            });
        } else if let Some(stem) = w.strip_suffix("'s") {
            if !stem.is_empty() {
                out.push(Token {
                    text: stem.to_string(),
                    class: classify(stem),
                });
            }
            out.push(Token {
                text: "'s".into(),
                class: Class::Poss,
            });
        } else {
            let w = w.trim_matches(|c| c == '\'' || c == '-');
            if !w.is_empty() {
                out.push(Token {
                    text: w.to_string(),
                    class: classify(w),
                });
            }
        }
    };
    let mut word = String::new();
    for c in lowered.chars() {
        if c.is_alphanumeric() || c == '\'' || c == '-' {
            word.push(c);
        } else {
            push(&word);
            word.clear();
            if c == ',' {
                push(",");
            }
        }
    }
    push(&word);
    out
}

fn verb_shaped(w: &str) -> bool {
    (w.len() > 4 && w.ends_with("ing"))
        || (w.len() > 3 && w.ends_with("ed"))
        || (w.len() > 2 && w.ends_with('s') && !w.ends_with("ss") && !w.ends_with("us"))
}

fn participle(w: &str) -> bool {
    w.len() > 4 && w.ends_with("ing")
}

struct ClauseParser<'a> {
    toks: &'a [Token],
    pos: usize,
    source_index: usize,
    out: Vec<RawTriplet>,
}

impl<'a> ClauseParser<'a> {
    fn class_at(&self, i: usize) -> Option<Class> {
        self.toks.get(i).map(|t| t.class)
    }

    fn peek(&self) -> Option<Class> {
        self.class_at(self.pos)
    }

    /// A content word at `i` acting as the verb of a clause.
    fn is_verb_at(&self, i: usize, after_aux: bool) -> bool {
        let Some(t) = self.toks.get(i) else {
            return false;
        };
        if t.class != Class::Word {
            return false;
        }
        let next = self.class_at(i + 1);
        after_aux
            || matches!(next, Some(Class::Det | Class::Pron | Class::Poss))
            || (verb_shaped(&t.text)
                && matches!(next, Some(Class::Prep | Class::Word | Class::Mod)))
    }

    /// Determiners and modifiers, then a run of content words. Inside the
    /// run a verb-looking word ends the phrase. Returns the head phrase.
    fn noun_phrase(&mut self, subject: bool) -> Option<String> {
        loop {
            while matches!(self.peek(), Some(Class::Det | Class::Mod)) {
                self.pos += 1;
            }
            if subject && self.peek() == Some(Class::Pron) {
                let t = &self.toks[self.pos];
                if t.text != "there" {
                    self.pos += 1;
                    return Some(t.text.clone());
                }
                return None;
            }
            let start = self.pos;
            while self.peek() == Some(Class::Word) {
                if self.pos > start {
                    let next = self.class_at(self.pos + 1);
                    let t = &self.toks[self.pos].text;
                    let splits = if subject {
                        matches!(next, Some(Class::Det | Class::Pron | Class::Poss))
                            || (verb_shaped(t)
                                && matches!(next, Some(Class::Prep | Class::Word | Class::Mod)))
                    } else {
                        verb_shaped(t)
                            && matches!(next, Some(Class::Det | Class::Pron | Class::Poss))
                    };
                    if splits {
                        break;
                    }
                }
                self.pos += 1;
            }
            if self.pos == start {
                return None;
            }
            if self.peek() == Some(Class::Poss) {
                // "the man's hand": keep the possessed noun
                self.pos += 1;
                continue;
            }
            let words: Vec<&str> = self.toks[start..self.pos]
                .iter()
                .map(|t| t.text.as_str())
                .collect();
            return Some(words.join(" "));
        }
    }

    /// Noun phrases joined by conjunctions or commas, stopping before a
    /// coordinated phrase that starts a new clause.
    fn coordinated(&mut self, subject: bool) -> Vec<String> {
        let mut heads = Vec::new();
        let Some(first) = self.noun_phrase(subject) else {
            return heads;
        };
        heads.push(first);
        while matches!(self.peek(), Some(Class::Conj | Class::Comma)) {
            let save = self.pos;
            self.pos += 1;
            while matches!(self.peek(), Some(Class::Conj | Class::Comma)) {
                self.pos += 1;
            }
            if !matches!(self.peek(), Some(Class::Det | Class::Word | Class::Mod))
                || self.is_verb_at(self.pos, false)
            {
                self.pos = save;
                break;
            }
            match self.noun_phrase(subject) {
                Some(h) if subject || !self.starts_predicate() => heads.push(h),
                _ => {
                    self.pos = save;
                    break;
                }
            }
        }
        heads
    }

    /// Whether the tokens at the cursor begin a verb group.
    fn starts_predicate(&self) -> bool {
        let mut i = self.pos;
        let mut aux = false;
        while matches!(self.class_at(i), Some(Class::Aux | Class::Neg | Class::Mod)) {
            aux |= self.class_at(i) == Some(Class::Aux);
            i += 1;
        }
        aux || self.is_verb_at(i, false)
    }

    fn skip_prepositional_phrases(&mut self) {
        while self.peek() == Some(Class::Prep) {
            let save = self.pos;
            self.pos += 1;
            if self.noun_phrase(false).is_none() {
                self.pos = save;
                return;
            }
        }
    }

    /// Parses one verb group and its objects for `subjects`. Returns false
    /// when no verb group starts at the cursor.
    fn predicate(&mut self, subjects: &[String]) -> bool {
        let mut aux = false;
        let mut negated = false;
        loop {
            match self.peek() {
                Some(Class::Aux) => aux = true,
                Some(Class::Neg) => negated = true,
                Some(Class::Mod) => {}
                Some(Class::Prep)
                    if self.toks[self.pos].text == "to"
                        && self.class_at(self.pos + 1) == Some(Class::Aux) => {}
                _ => break,
            }
            self.pos += 1;
        }
        if !self.is_verb_at(self.pos, aux) {
            return false;
        }
        let mut verb = self.toks[self.pos].text.clone();
        self.pos += 1;
        while matches!(self.peek(), Some(Class::Mod)) {
            self.pos += 1;
        }
        let mut particles = 0;
        while particles < 2
            && self.peek() == Some(Class::Prep)
            && matches!(
                self.class_at(self.pos + 1),
                Some(Class::Det | Class::Word | Class::Mod | Class::Prep | Class::Pron)
            )
        {
            verb.push(' ');
            verb.push_str(&self.toks[self.pos].text);
            self.pos += 1;
            particles += 1;
        }
        let objects = if self.peek() == Some(Class::Pron) {
            // unresolved pronoun object
            self.pos += 1;
            Vec::new()
        } else {
            self.coordinated(false)
        };
        if !negated {
            for s in subjects {
                for o in &objects {
                    if let Some(t) =
                        RawTriplet::new(s, &verb, o, ExtractorKind::RuleBased, self.source_index)
                    {
                        self.out.push(t);
                    }
                }
            }
        }
        self.continuation(subjects, &objects);
        true
    }

    fn continuation(&mut self, subjects: &[String], objects: &[String]) {
        self.skip_prepositional_phrases();
        match self.peek() {
            // participle right after the object describes the object
            Some(Class::Word) if !objects.is_empty() && participle(&self.toks[self.pos].text) => {
                let objs = objects.to_vec();
                self.predicate(&objs);
            }
            Some(Class::Word | Class::Aux) => {
                self.predicate(subjects);
            }
            Some(Class::Conj | Class::Comma) => {
                let save = self.pos;
                while matches!(self.peek(), Some(Class::Conj | Class::Comma)) {
                    self.pos += 1;
                }
                if self.starts_predicate() {
                    if !self.predicate(subjects) {
                        self.pos = save;
                    }
                } else {
                    self.clause();
                }
            }
            _ => {}
        }
    }

    fn clause(&mut self) {
        // "there is a man riding a bike"
        if self.toks.get(self.pos).is_some_and(|t| t.text == "there")
            && self.class_at(self.pos + 1) == Some(Class::Aux)
        {
            self.pos += 2;
            let subjects = self.coordinated(true);
            if subjects.is_empty() {
                return;
            }
            if self.toks.get(self.pos).is_some_and(|t| participle(&t.text)) {
                self.predicate(&subjects);
            }
            return;
        }
        let subjects = self.coordinated(true);
        if subjects.is_empty() {
            return;
        }
        self.skip_prepositional_phrases();
        self.predicate(&subjects);
    }
}

/// Pattern-based subject/verb/object extraction over closed-class word lists.
///
/// Each sentence is read as a subject noun phrase followed by verb groups
/// (auxiliaries, verb, up to two particles) and their object phrases, with
/// coordination of subjects, objects and verb groups. Sentences that do not
/// fit the patterns produce nothing.
pub fn extract_rule_based(text: &str) -> Vec<RawTriplet> {
    extract_rule_based_sample(text, 0)
}

pub fn extract_rule_based_sample(text: &str, sample_index: usize) -> Vec<RawTriplet> {
    let mut out = Vec::new();
    for s in sentences(text) {
        let toks = tokenize(s);
        let mut p = ClauseParser {
            toks: &toks,
            pos: 0,
            source_index: sample_index,
            out: Vec::new(),
        };
        p.clause();
        out.extend(p.out);
    }
    out
}

/// Extracts with the configured extractor. `t2g` is required for
/// [`ExtractorKind::T2g`].
pub fn extract(
    kind: ExtractorKind,
    text: &str,
    object_label: &str,
    sample_index: usize,
    t2g: Option<&dyn TextToGraph>,
) -> Result<Vec<RawTriplet>> {
    match kind {
        ExtractorKind::RuleBased => Ok(extract_rule_based_sample(text, sample_index)),
        ExtractorKind::Structured => {
            Ok(parse_structured_detailed(text, object_label, sample_index).triplets)
        }
        ExtractorKind::T2g => {
            let provider = t2g.ok_or_else(|| {
                Error::Config("text-to-graph extractor selected without a provider".into())
            })?;
            extract_t2g(text, provider, sample_index)
        }
    }
}

/// Subject words accepted as people during refinement.
pub const DEFAULT_SUBJECT_WORDS: [&str; 27] = [
    "person",
    "people",
    "man",
    "men",
    "woman",
    "women",
    "boy",
    "boys",
    "girl",
    "girls",
    "child",
    "children",
    "kid",
    "kids",
    "human",
    "guy",
    "lady",
    "he",
    "she",
    "they",
    "player",
    "rider",
    "skier",
    "surfer",
    "skateboarder",
    "chef",
    "worker",
];

pub const DEFAULT_BLACKLIST: [&str; 14] = [
    "is", "are", "was", "were", "be", "been", "being", "has", "have", "had", "seems", "appears",
    "looks", "remains",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ObjectMatch {
    Exact,
    Similarity { threshold: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementConfig {
    pub human_lexicon: HumanLexicon,
    pub blacklist: BTreeSet<String>,
    pub object_match: ObjectMatch,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        Self {
            human_lexicon: HumanLexicon::new(DEFAULT_SUBJECT_WORDS).expect("non-empty"),
            blacklist: DEFAULT_BLACKLIST.iter().map(|s| s.to_string()).collect(),
            object_match: ObjectMatch::Exact,
        }
    }
}

impl RefinementConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blacklist.is_empty() {
            return Err(Error::Config("refinement blacklist is empty".into()));
        }
        if let ObjectMatch::Similarity { threshold } = self.object_match {
            if !(threshold > 0.0 && threshold <= 1.0) {
                return Err(Error::Config(format!(
                    "object similarity threshold {threshold} outside (0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// Keeps triplets with a human subject, a verb phrase free of blacklisted
/// words and an object matching `prompt_object`. Order and duplicates are
/// preserved. `sim` is required for similarity object matching.
pub fn refine(
    triplets: &[RawTriplet],
    prompt_object: &str,
    config: &RefinementConfig,
    sim: Option<&dyn Similarity>,
) -> Result<Vec<RawTriplet>> {
    let prompt_object = normalize_label(prompt_object);
    let mut out = Vec::new();
    for t in triplets {
        if !config.human_lexicon.is_human(&t.subject) {
            continue;
        }
        if t.verb.split(' ').any(|w| config.blacklist.contains(w)) {
            continue;
        }
        let object_ok = match config.object_match {
            ObjectMatch::Exact => t.object == prompt_object,
            ObjectMatch::Similarity { threshold } => {
                let sim = sim.ok_or_else(|| {
                    Error::Config("similarity object matching needs a similarity provider".into())
                })?;
                t.object == prompt_object || sim.similarity(&t.object, &prompt_object)? >= threshold
            }
        };
        if object_ok {
            out.push(t.clone());
        }
    }
    Ok(out)
}
