//! Text cleaning, word-level tokenization, sentence splitting and the
//! 512-token input limit.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hard cap on encoder input length, special tokens included.
pub const MAX_TOKENS: usize = 512;

pub const PAD_TOKEN: &str = "[PAD]";
pub const OOV_TOKEN: &str = "[OOV]";
pub const CLS_TOKEN: &str = "[CLS]";

fn default_symbol_run() -> usize {
    5
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleaningConfig {
    pub strip_nontext: bool,
    pub lowercase: bool,
    pub collapse_whitespace: bool,
    /// Symbol runs longer than this are treated as parsing debris.
    #[serde(default = "default_symbol_run")]
    pub symbol_run_threshold: usize,
}

impl Default for CleaningConfig {
    fn default() -> Self {
        Self {
            strip_nontext: true,
            lowercase: false,
            collapse_whitespace: true,
            symbol_run_threshold: default_symbol_run(),
        }
    }
}

fn is_symbol(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace()
}

/// Idempotent cleanup. Control characters always become spaces.
pub fn clean_text(text: &str, config: &CleaningConfig) -> String {
    let mut s: String = text
        .chars()
        .map(|c| if c.is_control() { ' ' } else { c })
        .collect();
    if config.lowercase {
        s = s.to_lowercase();
    }
    if config.strip_nontext {
        s = strip_symbol_runs(&s, config.symbol_run_threshold);
    }
    if config.collapse_whitespace {
        s = s.split_whitespace().collect::<Vec<_>>().join(" ");
    }
    s
}

fn strip_symbol_runs(s: &str, threshold: usize) -> String {
    let mut out = String::with_capacity(s.len());
    let mut run = String::new();
    let mut run_len = 0usize;
    let flush = |out: &mut String, run: &mut String, run_len: &mut usize| {
        if *run_len <= threshold {
            out.push_str(run);
        }
        run.clear();
        *run_len = 0;
    };
    for c in s.chars() {
        if is_symbol(c) {
            run.push(c);
            run_len += 1;
        } else {
            flush(&mut out, &mut run, &mut run_len);
            out.push(c);
        }
    }
    flush(&mut out, &mut run, &mut run_len);
    out
}

/// Splits on anything that is not alphanumeric; punctuation is dropped.
pub fn word_tokens(text: &str, lowercase: bool) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| if lowercase { w.to_lowercase() } else { w.to_string() })
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct VocabularyFile {
    tokens: Vec<String>,
    pad: usize,
    oov: usize,
    cls: usize,
}

/// Dense token ids; the first three are PAD, OOV and CLS.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VocabularyFile", into = "VocabularyFile")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    pad: usize,
    oov: usize,
    cls: usize,
}

impl TryFrom<VocabularyFile> for Vocabulary {
    type Error = Error;

    fn try_from(f: VocabularyFile) -> Result<Self> {
        let n = f.tokens.len();
        if f.pad >= n || f.oov >= n || f.cls >= n {
            return Err(Error::Format("special token id out of range".into()));
        }
        if f.pad == f.oov || f.pad == f.cls || f.oov == f.cls {
            return Err(Error::Format("special token ids must be distinct".into()));
        }
        let mut index = HashMap::with_capacity(n);
        for (i, t) in f.tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Format(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Self {
            tokens: f.tokens,
            index,
            pad: f.pad,
            oov: f.oov,
            cls: f.cls,
        })
    }
}

impl From<Vocabulary> for VocabularyFile {
    fn from(v: Vocabulary) -> Self {
        Self {
            tokens: v.tokens,
            pad: v.pad,
            oov: v.oov,
            cls: v.cls,
        }
    }
}

impl Vocabulary {
    /// Builds a vocabulary from word tokens occurring at least `min_count`
    /// times, most frequent first with lexicographic tie-breaking.
    pub fn fit<'a>(
        texts: impl IntoIterator<Item = &'a str>,
        lowercase: bool,
        min_count: usize,
    ) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in texts {
            for w in word_tokens(text, lowercase) {
                *counts.entry(w).or_insert(0) += 1;
            }
        }
        let mut words: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(_, c)| *c >= min_count.max(1))
            .collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = [PAD_TOKEN, OOV_TOKEN, CLS_TOKEN]
            .into_iter()
            .map(String::from)
            .chain(words.into_iter().map(|(w, _)| w))
            .collect();
        Self::try_from(VocabularyFile {
            tokens,
            pad: 0,
            oov: 1,
            cls: 2,
        })
        .expect("fitted vocabulary is well formed")
    }

    pub fn from_tokens(words: &[&str]) -> Self {
        let tokens = [PAD_TOKEN, OOV_TOKEN, CLS_TOKEN]
            .iter()
            .chain(words)
            .map(|s| s.to_string())
            .collect();
        Self::try_from(VocabularyFile {
            tokens,
            pad: 0,
            oov: 1,
            cls: 2,
        })
        .expect("unique tokens")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn pad(&self) -> usize {
        self.pad
    }

    pub fn oov(&self) -> usize {
        self.oov
    }

    pub fn cls(&self) -> usize {
        self.cls
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&raw)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizeOptions {
    pub lowercase: bool,
    /// Prepend CLS; the encoder always expects it.
    pub prepend_cls: bool,
}

impl Default for TokenizeOptions {
    fn default() -> Self {
        Self {
            lowercase: true,
            prepend_cls: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
}

impl TokenSequence {
    pub fn new(ids: Vec<usize>) -> Self {
        Self { ids }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

pub fn tokenize(text: &str, vocab: &Vocabulary, options: TokenizeOptions) -> TokenSequence {
    let mut ids = Vec::new();
    if options.prepend_cls {
        ids.push(vocab.cls());
    }
    ids.extend(
        word_tokens(text, options.lowercase)
            .iter()
            .map(|w| vocab.id(w).unwrap_or(vocab.oov())),
    );
    TokenSequence { ids }
}

/// Keeps the first `max_len` ids.
pub fn truncate(seq: &TokenSequence, max_len: usize) -> TokenSequence {
    TokenSequence {
        ids: seq.ids[..seq.len().min(max_len)].to_vec(),
    }
}

/// Lowercased forms of common abbreviations that end in a period but do not
/// end a sentence.
const ABBREVIATIONS: &[&str] = &[
    "mr.", "mrs.", "ms.", "dr.", "prof.", "sr.", "jr.", "st.", "vs.", "e.g.", "i.e.", "no.",
    "approx.", "dhr.", "mevr.", "bijv.", "o.a.", "m.b.t.",
];

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

/// Sentence ends at a run of `.`, `!` or `?` followed by whitespace or the end
/// of the text, unless the run is a single period closing a known abbreviation.
pub fn split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut sentences = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < chars.len() {
        if !is_terminator(chars[i].1) {
            i += 1;
            continue;
        }
        let run_start = i;
        while i < chars.len() && is_terminator(chars[i].1) {
            i += 1;
        }
        let at_boundary = i == chars.len() || chars[i].1.is_whitespace();
        if !at_boundary {
            continue;
        }
        let end_byte = chars.get(i).map_or(text.len(), |&(b, _)| b);
        if i - run_start == 1 && chars[run_start].1 == '.' {
            let word_start = text[..chars[run_start].0]
                .rfind(char::is_whitespace)
                .map_or(0, |p| p + 1);
            let word = text[word_start..end_byte]
                .trim_start_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase();
            if ABBREVIATIONS.contains(&word.as_str()) {
                continue;
            }
        }
        let sentence = text[start..end_byte].trim();
        if !sentence.is_empty() {
            sentences.push(sentence.to_string());
        }
        start = end_byte;
    }
    let rest = text[start..].trim();
    if !rest.is_empty() {
        sentences.push(rest.to_string());
    }
    sentences
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn collapse_only() -> CleaningConfig {
        CleaningConfig {
            strip_nontext: false,
            lowercase: false,
            collapse_whitespace: true,
            symbol_run_threshold: 5,
        }
    }

    #[test]
    fn collapses_whitespace() {
        assert_eq!(clean_text("Hello  World", &collapse_only()), "Hello World");
        assert_eq!(clean_text("", &CleaningConfig::default()), "");
    }

    #[test]
    fn strips_symbol_runs() {
        let cfg = CleaningConfig::default();
        assert_eq!(clean_text("skills: ●●●●●●● welding", &cfg), "skills: welding");
        // Five symbols is at the threshold and survives.
        assert_eq!(clean_text("a ***** b", &cfg), "a ***** b");
        assert_eq!(clean_text("a ****** b", &cfg), "a b");
    }

    #[test]
    fn control_characters_removed() {
        let cfg = CleaningConfig {
            collapse_whitespace: false,
            ..CleaningConfig::default()
        };
        let out = clean_text("a\u{0}b\u{7}c\td", &cfg);
        assert!(!out.chars().any(char::is_control));
        assert_eq!(out, "a b c d");
    }

    fn vocab() -> Vocabulary {
        Vocabulary::from_tokens(&["warehouse", "worker"])
    }

    #[test]
    fn tokenize_lookup_oov_and_case() {
        let v = vocab();
        let opts = TokenizeOptions::default();
        let wh = v.id("warehouse").unwrap();
        let wk = v.id("worker").unwrap();
        assert_eq!(tokenize("warehouse worker", &v, opts).ids, vec![v.cls(), wh, wk]);
        assert_eq!(tokenize("zzzunknown", &v, opts).ids, vec![v.cls(), v.oov()]);
        assert_eq!(tokenize("Warehouse", &v, opts).ids[1], wh);
        let no_cls = TokenizeOptions {
            prepend_cls: false,
            ..opts
        };
        assert_eq!(tokenize("worker!", &v, no_cls).ids, vec![wk]);
    }

    #[test]
    fn truncation_cases() {
        let long = TokenSequence::new((0..600).collect());
        let t = truncate(&long, MAX_TOKENS);
        assert_eq!(t.ids, (0..512).collect::<Vec<_>>());
        let short = TokenSequence::new((0..10).collect());
        assert_eq!(truncate(&short, 512), short);
        assert!(truncate(&TokenSequence::default(), 512).is_empty());
    }

    #[test]
    fn sentence_splitting() {
        assert_eq!(split_sentences("I weld. I drive."), vec!["I weld.", "I drive."]);
        assert_eq!(split_sentences("no terminator"), vec!["no terminator"]);
        assert_eq!(
            split_sentences("Mr. Smith welds. He drives."),
            vec!["Mr. Smith welds.", "He drives."]
        );
        assert_eq!(split_sentences("Really?! Yes.  "), vec!["Really?!", "Yes."]);
        assert_eq!(split_sentences("version 1.5 works"), vec!["version 1.5 works"]);
        assert!(split_sentences("   ").is_empty());
        assert!(split_sentences(". . .").iter().all(|s| !s.is_empty()));
    }

    #[test]
    fn vocabulary_json_roundtrip_and_validation() {
        let v = Vocabulary::fit(["b a a", "c a b"], true, 1);
        assert_eq!(v.token(3), Some("a"));
        assert_eq!(v.token(4), Some("b"));
        let json = serde_json::to_string(&v).unwrap();
        assert!(json.starts_with(r#"{"tokens":["[PAD]","[OOV]","[CLS]""#));
        assert!(json.ends_with(r#""pad":0,"oov":1,"cls":2}"#));
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
        let bad = r#"{"tokens":["x","y"],"pad":0,"oov":0,"cls":1}"#;
        assert!(serde_json::from_str::<Vocabulary>(bad).is_err());
    }

    fn any_config() -> impl Strategy<Value = CleaningConfig> {
        (any::<bool>(), any::<bool>(), any::<bool>(), 1usize..8).prop_map(|(s, l, c, t)| {
            CleaningConfig {
                strip_nontext: s,
                lowercase: l,
                collapse_whitespace: c,
                symbol_run_threshold: t,
            }
        })
    }

    proptest! {
        #[test]
        fn clean_is_idempotent(text in "(\\PC|[\\t\\n\\x00-\\x1f ●*!?.]){0,60}", cfg in any_config()) {
            let once = clean_text(&text, &cfg);
            prop_assert_eq!(clean_text(&once, &cfg), once.clone());
            prop_assert!(!once.chars().any(char::is_control));
        }

        #[test]
        fn truncate_is_idempotent(ids in proptest::collection::vec(0usize..50, 0..700), max_len in 1usize..600) {
            let seq = TokenSequence::new(ids);
            let once = truncate(&seq, max_len);
            prop_assert_eq!(truncate(&once, max_len), once.clone());
            prop_assert_eq!(once.len(), seq.len().min(max_len));
            prop_assert_eq!(&seq.ids[..once.len()], &once.ids[..]);
        }

        #[test]
        fn pipeline_respects_budget_and_vocab(text in "[a-z ]{0,3000}") {
            let v = Vocabulary::fit(["a b c d e f g h"], true, 1);
            let seq = truncate(&tokenize(&clean_text(&text, &CleaningConfig::default()), &v, TokenizeOptions::default()), MAX_TOKENS);
            prop_assert!(seq.len() <= MAX_TOKENS);
            prop_assert!(seq.ids.iter().all(|&id| id < v.len()));
        }

        #[test]
        fn sentences_cover_content(text in "[A-Za-z .!?]{0,120}") {
            let sents = split_sentences(&text);
            prop_assert!(sents.iter().all(|s| !s.trim().is_empty()));
            let strip = |s: &str| s.chars().filter(|c| !c.is_whitespace()).collect::<String>();
            prop_assert_eq!(strip(&sents.concat()), strip(&text));
        }
    }
}
