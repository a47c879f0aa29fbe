//! String normalization shared by labels, verb phrases and triplet fields.

const ARTICLES: [&str; 3] = ["a", "an", "the"];

/// Lowercases, maps `_` to space, trims, collapses whitespace and drops
/// leading articles.
pub fn normalize_label(raw: &str) -> String {
    let lowered = raw.to_lowercase().replace('_', " ");
    let mut words: Vec<&str> = lowered.split_whitespace().collect();
    while words.len() > 1 && ARTICLES.contains(&words[0]) {
        words.remove(0);
    }
    if words.len() == 1 && ARTICLES.contains(&words[0]) {
        words.clear();
    }
    words.join(" ")
}

/// Verb-phrase normalization; `lemmatize` additionally reduces the head verb
/// to a base form with [`lemmatize_verb`].
pub fn normalize_phrase(raw: &str, lemmatize: bool) -> String {
    let norm = normalize_label(raw);
    if !lemmatize || norm.is_empty() {
        return norm;
    }
    let mut words = norm.split(' ');
    let head = words.next().unwrap_or_default();
    let mut out = lemmatize_verb(head);
    for w in words {
        out.push(' ');
        out.push_str(w);
    }
    out
}

const IRREGULAR: &[(&str, &str)] = &[
    ("is", "be"),
    ("are", "be"),
    ("was", "be"),
    ("were", "be"),
    ("been", "be"),
    ("being", "be"),
    ("has", "have"),
    ("had", "have"),
    ("having", "have"),
    ("does", "do"),
    ("did", "do"),
    ("done", "do"),
    ("goes", "go"),
    ("went", "go"),
    ("gone", "go"),
    ("ate", "eat"),
    ("eaten", "eat"),
    ("sat", "sit"),
    ("rode", "ride"),
    ("ridden", "ride"),
    ("held", "hold"),
    ("threw", "throw"),
    ("thrown", "throw"),
    ("caught", "catch"),
    ("drank", "drink"),
    ("drunk", "drink"),
    ("flew", "fly"),
    ("flown", "fly"),
    ("lay", "lie"),
    ("lying", "lie"),
    ("lies", "lie"),
    ("stood", "stand"),
    ("wore", "wear"),
    ("worn", "wear"),
    ("took", "take"),
    ("taken", "take"),
    ("made", "make"),
    ("cut", "cut"),
    ("put", "put"),
    ("hit", "hit"),
    ("kicked", "kick"),
    ("fed", "feed"),
    ("drove", "drive"),
    ("driven", "drive"),
    ("swung", "swing"),
    ("brought", "bring"),
    ("bought", "buy"),
    ("carried", "carry"),
    ("dying", "die"),
    ("tying", "tie"),
];

fn is_vowel(c: char) -> bool {
    matches!(c, 'a' | 'e' | 'i' | 'o' | 'u')
}

/// Suffix-rule English verb lemmatizer with a small irregular table.
/// Heuristic; unknown shapes are returned unchanged.
pub fn lemmatize_verb(word: &str) -> String {
    if let Some((_, lemma)) = IRREGULAR.iter().find(|(w, _)| *w == word) {
        return (*lemma).to_string();
    }
    let chars: Vec<char> = word.chars().collect();
    let n = chars.len();
    let restore = |stem: &str| -> String {
        let s: Vec<char> = stem.chars().collect();
        let m = s.len();
        if m >= 2 && s[m - 1] == s[m - 2] && !matches!(s[m - 1], 'l' | 's' | 'z' | 'f') {
            return s[..m - 1].iter().collect();
        }
        // consonant-vowel-consonant stems like "rid" -> "ride"
        if m == 3
            && !is_vowel(s[0])
            && is_vowel(s[1])
            && !is_vowel(s[2])
            && !matches!(s[2], 'w' | 'x' | 'y')
        {
            return format!("{stem}e");
        }
        stem.to_string()
    };
    if n > 4 && word.ends_with("ing") {
        return restore(&word[..word.len() - 3]);
    }
    if n > 3 && word.ends_with("ied") {
        return format!("{}y", &word[..word.len() - 3]);
    }
    if n > 3 && word.ends_with("ed") {
        return restore(&word[..word.len() - 2]);
    }
    if n > 3 && word.ends_with("ies") {
        return format!("{}y", &word[..word.len() - 3]);
    }
    if n > 3
        && (word.ends_with("ches")
            || word.ends_with("shes")
            || word.ends_with("sses")
            || word.ends_with("xes"))
    {
        return word[..word.len() - 2].to_string();
    }
    if n > 2 && word.ends_with('s') && !word.ends_with("ss") && !word.ends_with("us") {
        return word[..word.len() - 1].to_string();
    }
    word.to_string()
}

/// 64-bit FNV-1a, used wherever a platform-independent string hash is needed.
pub fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}
