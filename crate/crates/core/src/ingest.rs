//! Raw text to filtered sentence token streams.
//!
//! A document is split into sentences with a rule-based splitter, headings are
//! dropped, and every remaining sentence is cut into units (maximal alphabetic
//! runs and single punctuation marks). A sentence survives only if it has no
//! digits and every alphabetic unit, lowercased, is in the word list.

use std::collections::HashSet;
use std::fmt;
use std::ops::AddAssign;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, ConfigMap};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("word list {0} contains no words")]
    EmptyWordList(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

fn read_text(path: &Path) -> Result<String, IngestError> {
    std::fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Lowercased vocabulary used to filter sentences.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordList {
    entries: HashSet<String>,
}

impl WordList {
    pub fn from_words<I, S>(words: I) -> Result<Self, IngestError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let entries: HashSet<String> = words
            .into_iter()
            .map(|w| w.as_ref().trim().to_lowercase())
            .filter(|w| !w.is_empty())
            .collect();
        if entries.is_empty() {
            return Err(IngestError::EmptyWordList("<memory>".into()));
        }
        Ok(Self { entries })
    }

    /// One word per line, UTF-8. Blank lines are skipped.
    pub fn load(path: &Path) -> Result<Self, IngestError> {
        let text = read_text(path)?;
        Self::from_words(text.lines()).map_err(|err| match err {
            IngestError::EmptyWordList(_) => IngestError::EmptyWordList(path.display().to_string()),
            other => other,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Case-insensitive membership.
    pub fn contains(&self, word: &str) -> bool {
        if word.chars().any(char::is_uppercase) {
            self.entries.contains(&word.to_lowercase())
        } else {
            self.entries.contains(word)
        }
    }
}

/// Abbreviations that do not end a sentence when followed by a period.
/// Stored lowercase and without the trailing period.
pub const DEFAULT_ABBREVIATIONS: &[&str] = &[
    "dr", "mr", "mrs", "ms", "prof", "sr", "jr", "st", "mt", "ft", "gen", "col", "capt", "lt",
    "sgt", "gov", "rev", "hon", "vs", "e.g", "i.e", "approx", "jan", "feb", "aug", "sep", "sept",
    "oct", "nov", "dec", "inc", "ltd", "corp",
];

pub const DEFAULT_HEADING_MAX_UNITS: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestConfig {
    pub abbreviations: HashSet<String>,
    /// Lines without terminal punctuation and at most this many units are
    /// treated as section titles.
    pub heading_max_units: usize,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            abbreviations: DEFAULT_ABBREVIATIONS
                .iter()
                .map(|s| s.to_string())
                .collect(),
            heading_max_units: DEFAULT_HEADING_MAX_UNITS,
        }
    }
}

impl IngestConfig {
    pub const KEYS: &'static [&'static str] = &["abbreviations", "heading_max_units"];

    /// Reads `abbreviations` (path to a one-per-line list, replacing the
    /// default set; relative paths resolve against `base_dir`) and
    /// `heading_max_units`.
    pub fn from_config(cfg: &ConfigMap, base_dir: &Path) -> Result<Self, IngestError> {
        cfg.reject_unknown(Self::KEYS)?;
        let mut out = Self::default();
        if let Some(n) = cfg.parse_value::<usize>("heading_max_units")? {
            out.heading_max_units = n;
        }
        if let Some(path) = cfg.get("abbreviations") {
            let path = base_dir.join(path);
            out.abbreviations = parse_abbreviations(&read_text(&path)?);
        }
        Ok(out)
    }

    fn is_abbreviation(&self, word: &str) -> bool {
        self.abbreviations.contains(&word.to_lowercase())
    }
}

pub fn parse_abbreviations(text: &str) -> HashSet<String> {
    text.lines()
        .map(|l| l.trim().trim_end_matches('.').to_lowercase())
        .filter(|l| !l.is_empty())
        .collect()
}

/// A piece of a document after segmentation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Segment {
    Sentence(String),
    Heading(String),
}

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

fn is_closer(c: char) -> bool {
    matches!(c, '"' | '\'' | ')' | ']' | '}' | '\u{2019}' | '\u{201D}')
}

fn ends_with_terminal(line: &str) -> bool {
    line.trim_end_matches(is_closer).ends_with(is_terminal)
}

/// Splits a paragraph (already joined into one line) at sentence ends.
/// Returns complete sentences and the unterminated remainder.
fn split_paragraph<'a>(text: &'a str, cfg: &IngestConfig) -> (Vec<&'a str>, &'a str) {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if !is_terminal(c) {
            i += 1;
            continue;
        }
        let mut j = i + 1;
        while j < chars.len() && (is_terminal(chars[j].1) || is_closer(chars[j].1)) {
            j += 1;
        }
        let at_boundary = j == chars.len() || chars[j].1.is_whitespace();
        if !at_boundary {
            i = j;
            continue;
        }
        // A lone period after a known abbreviation does not end the sentence.
        if c == '.' && j == i + 1 {
            let word_start = text[start..pos]
                .rfind(char::is_whitespace)
                .map(|k| start + k + 1)
                .unwrap_or(start);
            let word = text[word_start..pos].trim_start_matches(|ch: char| !ch.is_alphanumeric());
            if !word.is_empty() && cfg.is_abbreviation(word) {
                i = j;
                continue;
            }
        }
        let end = if j == chars.len() {
            text.len()
        } else {
            chars[j].0
        };
        let sentence = text[start..end].trim();
        if !sentence.is_empty() {
            out.push(sentence);
        }
        start = end;
        i = j;
    }
    (out, text[start..].trim())
}

/// Segments a document into sentences and headings.
///
/// Lines are joined into paragraphs (blank lines separate paragraphs). A line
/// that does not end in terminal punctuation, has at most `heading_max_units`
/// units and is not followed by a lowercase continuation line is a heading
/// and is kept out of the paragraph. An unterminated paragraph tail is
/// a heading under the same rule, otherwise a sentence.
pub fn segment_document(document: &str, cfg: &IngestConfig) -> Vec<Segment> {
    let mut segments = Vec::new();
    let mut paragraph = String::new();

    let flush = |paragraph: &mut String, segments: &mut Vec<Segment>| {
        if paragraph.is_empty() {
            return;
        }
        let (sentences, rest) = split_paragraph(paragraph, cfg);
        segments.extend(
            sentences
                .into_iter()
                .map(|s| Segment::Sentence(s.to_string())),
        );
        if !rest.is_empty() {
            if units(rest).len() <= cfg.heading_max_units {
                segments.push(Segment::Heading(rest.to_string()));
            } else {
                segments.push(Segment::Sentence(rest.to_string()));
            }
        }
        paragraph.clear();
    };

    let lines: Vec<&str> = document.lines().map(str::trim).collect();
    for (idx, &line) in lines.iter().enumerate() {
        if line.is_empty() {
            flush(&mut paragraph, &mut segments);
            continue;
        }
        let continues = lines
            .get(idx + 1)
            .and_then(|next| next.chars().next())
            .is_some_and(char::is_lowercase);
        if !ends_with_terminal(line) && !continues && units(line).len() <= cfg.heading_max_units {
            flush(&mut paragraph, &mut segments);
            segments.push(Segment::Heading(line.to_string()));
            continue;
        }
        if !paragraph.is_empty() {
            paragraph.push(' ');
        }
        paragraph.push_str(line);
    }
    flush(&mut paragraph, &mut segments);
    segments
}

/// Sentences of `document`, headings dropped.
pub fn split_sentences(document: &str, cfg: &IngestConfig) -> Vec<String> {
    segment_document(document, cfg)
        .into_iter()
        .filter_map(|s| match s {
            Segment::Sentence(s) => Some(s),
            Segment::Heading(_) => None,
        })
        .collect()
}

/// Cuts text into maximal alphabetic runs and single non-alphanumeric,
/// non-whitespace characters. Digits are dropped; see [`tokenize_and_filter`].
pub fn units(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut run_start: Option<usize> = None;
    for (pos, c) in text.char_indices() {
        if c.is_alphabetic() {
            run_start.get_or_insert(pos);
            continue;
        }
        if let Some(s) = run_start.take() {
            out.push(&text[s..pos]);
        }
        if !c.is_whitespace() && !c.is_numeric() {
            out.push(&text[pos..pos + c.len_utf8()]);
        }
    }
    if let Some(s) = run_start {
        out.push(&text[s..]);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rejection {
    UnknownWord,
    Heading,
    Digit,
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rejection::UnknownWord => "unknown_word",
            Rejection::Heading => "heading",
            Rejection::Digit => "digit",
        })
    }
}

/// Units of an accepted sentence, or the reason it was dropped.
pub fn tokenize_and_filter(sentence: &str, wl: &WordList) -> Result<Vec<String>, Rejection> {
    if sentence.chars().any(char::is_numeric) {
        return Err(Rejection::Digit);
    }
    let units = units(sentence);
    if units
        .iter()
        .any(|u| u.chars().all(char::is_alphabetic) && !wl.contains(u))
    {
        return Err(Rejection::UnknownWord);
    }
    Ok(units.into_iter().map(str::to_string).collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceTokens {
    pub words: Vec<String>,
    pub source_id: String,
}

/// Sentence-level counters. `total` always equals the sum of the other four.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub total: usize,
    pub accepted: usize,
    pub unknown_word: usize,
    pub heading: usize,
    pub digit: usize,
}

impl IngestStats {
    fn record(&mut self, outcome: Result<(), &Rejection>) {
        self.total += 1;
        match outcome {
            Ok(()) => self.accepted += 1,
            Err(Rejection::UnknownWord) => self.unknown_word += 1,
            Err(Rejection::Heading) => self.heading += 1,
            Err(Rejection::Digit) => self.digit += 1,
        }
    }
}

impl AddAssign for IngestStats {
    fn add_assign(&mut self, rhs: Self) {
        self.total += rhs.total;
        self.accepted += rhs.accepted;
        self.unknown_word += rhs.unknown_word;
        self.heading += rhs.heading;
        self.digit += rhs.digit;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DocumentIngest {
    pub sentences: Vec<SentenceTokens>,
    pub stats: IngestStats,
}

/// Runs segmentation and filtering over one document.
pub fn ingest_document(
    document: &str,
    source_id: &str,
    cfg: &IngestConfig,
    wl: &WordList,
) -> DocumentIngest {
    let mut out = DocumentIngest::default();
    for segment in segment_document(document, cfg) {
        let sentence = match segment {
            Segment::Heading(_) => {
                out.stats.record(Err(&Rejection::Heading));
                continue;
            }
            Segment::Sentence(s) => s,
        };
        match tokenize_and_filter(&sentence, wl) {
            Ok(words) if !words.is_empty() => {
                out.stats.record(Ok(()));
                out.sentences.push(SentenceTokens {
                    words,
                    source_id: source_id.to_string(),
                });
            }
            // Only reachable for text made of digits and whitespace.
            Ok(_) => out.stats.record(Err(&Rejection::Digit)),
            Err(reason) => out.stats.record(Err(&reason)),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wl(words: &[&str]) -> WordList {
        WordList::from_words(words).unwrap()
    }

    #[test]
    fn word_list_lowercases_and_dedups() {
        let list = wl(&["the", "film", "Film"]);
        assert_eq!(list.len(), 2);
        assert!(list.contains("FILM"));
        assert!(!list.contains("shot"));
    }

    #[test]
    fn empty_word_list_is_an_error() {
        assert!(matches!(
            WordList::from_words(Vec::<String>::new()),
            Err(IngestError::EmptyWordList(_))
        ));
        assert!(matches!(
            WordList::from_words(["", "  "]),
            Err(IngestError::EmptyWordList(_))
        ));
    }

    #[test]
    fn splits_on_terminal_punctuation() {
        let cfg = IngestConfig::default();
        assert_eq!(split_sentences("A b. C d!", &cfg), vec!["A b.", "C d!"]);
        assert_eq!(
            split_sentences("Is it? Yes!! \"Done.\" Next one.", &cfg),
            vec!["Is it?", "Yes!!", "\"Done.\"", "Next one."]
        );
        assert!(split_sentences("", &cfg).is_empty());
    }

    #[test]
    fn period_inside_token_does_not_split() {
        let cfg = IngestConfig::default();
        assert_eq!(
            split_sentences("The value was high.The end came soon.", &cfg),
            vec!["The value was high.The end came soon."]
        );
    }

    #[test]
    fn headings_are_dropped() {
        let cfg = IngestConfig::default();
        assert!(split_sentences("Early life", &cfg).is_empty());
        let doc = "Early life\nHe was born in a town. He grew up there.\n\nCareer\nShe sang.";
        assert_eq!(
            segment_document(doc, &cfg),
            vec![
                Segment::Heading("Early life".into()),
                Segment::Sentence("He was born in a town.".into()),
                Segment::Sentence("He grew up there.".into()),
                Segment::Heading("Career".into()),
                Segment::Sentence("She sang.".into()),
            ]
        );
    }

    #[test]
    fn long_unterminated_line_is_a_sentence() {
        let cfg = IngestConfig::default();
        let line = "the quick brown fox jumps over the lazy sleeping dog";
        assert_eq!(split_sentences(line, &cfg), vec![line.to_string()]);
        let cfg = IngestConfig {
            heading_max_units: 20,
            ..IngestConfig::default()
        };
        assert!(split_sentences(line, &cfg).is_empty());
    }

    #[test]
    fn sentences_join_across_wrapped_lines() {
        let cfg = IngestConfig::default();
        let doc = "The river flows through a wide\ngreen valley. It is old.";
        assert_eq!(
            split_sentences(doc, &cfg),
            vec!["The river flows through a wide green valley.", "It is old."]
        );
    }

    #[test]
    fn abbreviations_do_not_end_sentences() {
        let cfg = IngestConfig::default();
        assert_eq!(
            split_sentences("Dr. Smith ran.", &cfg),
            vec!["Dr. Smith ran."]
        );
        assert_eq!(
            split_sentences("Dr. Smith ran. (Mr. Jones saw.) e.g. cats.", &cfg),
            vec!["Dr. Smith ran.", "(Mr. Jones saw.)", "e.g. cats."]
        );
        let custom = IngestConfig {
            abbreviations: parse_abbreviations("Prof.\n"),
            ..IngestConfig::default()
        };
        assert_eq!(
            split_sentences("Dr. Smith ran.", &custom),
            vec!["Dr.", "Smith ran."]
        );
    }

    #[test]
    fn units_are_letter_runs_and_single_marks() {
        assert_eq!(
            units("The film was shot."),
            vec!["The", "film", "was", "shot", "."]
        );
        assert_eq!(
            units("well-known, \"café\"..."),
            vec!["well", "-", "known", ",", "\"", "café", "\"", ".", ".", "."]
        );
    }

    #[test]
    fn filter_accepts_and_rejects() {
        let list = wl(&["the", "film", "was", "shot", "ran", "well", "known"]);
        assert_eq!(
            tokenize_and_filter("The film was shot.", &list).unwrap(),
            vec!["The", "film", "was", "shot", "."]
        );
        assert_eq!(
            tokenize_and_filter("Zyxzyq ran.", &list),
            Err(Rejection::UnknownWord)
        );
        assert_eq!(
            tokenize_and_filter("The film was shot in 1999.", &list),
            Err(Rejection::Digit)
        );
        assert_eq!(
            tokenize_and_filter("The well-known film.", &list).unwrap(),
            vec!["The", "well", "-", "known", "film", "."]
        );
    }

    #[test]
    fn document_stats_partition() {
        let list = wl(&["he", "was", "born", "in", "a", "town", "she", "sang"]);
        let doc = "Early life\nHe was born in a town. He was born in 1900. Zork sang.\nShe sang.";
        let out = ingest_document(doc, "doc", &IngestConfig::default(), &list);
        assert_eq!(
            out.stats,
            IngestStats {
                total: 5,
                accepted: 2,
                unknown_word: 1,
                heading: 1,
                digit: 1
            }
        );
        assert_eq!(out.sentences.len(), 2);
        assert_eq!(out.sentences[1].words, vec!["She", "sang", "."]);
        assert_eq!(out.sentences[1].source_id, "doc");
    }

    #[test]
    fn config_overrides() {
        let dir = std::env::temp_dir().join(format!("cptrie-ingest-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(dir.join("abbr.txt"), "Fig.\n").unwrap();
        let cfg = ConfigMap::parse("abbreviations = abbr.txt\nheading_max_units = 3\n").unwrap();
        let ingest = IngestConfig::from_config(&cfg, &dir).unwrap();
        assert_eq!(ingest.heading_max_units, 3);
        assert!(ingest.is_abbreviation("FIG"));
        assert!(!ingest.is_abbreviation("dr"));
        let bad = ConfigMap::parse("colour = red\n").unwrap();
        assert!(IngestConfig::from_config(&bad, &dir).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }
}
