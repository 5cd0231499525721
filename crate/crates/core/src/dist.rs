//! Model next-token distributions in the JSONL exchange format, plus a toy
//! language model read straight off the trie.
//!
//! One record per line:
//! `{"prefix_id", "vocab_size", "entropy_nats", "tail_mass", "tokens": [{"rank", "surface", "word_initial", "prob"}]}`.
//! Tokens are the top-N of the vocabulary in descending probability;
//! `entropy_nats` is the entropy of the full distribution and `tail_mass` the
//! probability left outside the listed tokens.

use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::trie::{EvaluationNode, TrieNode};

/// Allowed deviation of `sum(prob) + tail_mass` from 1.
pub const MASS_TOLERANCE: f64 = 1e-6;
/// Negative tail mass down to this value is treated as rounding noise.
pub const TAIL_CLAMP: f64 = 1e-9;
/// Slack on the `[0, ln V]` entropy bound.
pub const ENTROPY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RecordError {
    #[error("record lists no tokens")]
    NoTokens,
    #[error("expected rank {expected}, found {found}")]
    RankGap { expected: usize, found: usize },
    #[error("probabilities not sorted at rank {rank}")]
    NotSorted { rank: usize },
    #[error("probability at rank {rank} is not in (0, 1]")]
    ProbOutOfRange { rank: usize },
    #[error("empty surface at rank {rank}")]
    EmptySurface { rank: usize },
    #[error("listed mass plus tail is {total}, expected 1")]
    MassMismatch { total: f64 },
    #[error("negative tail mass {0}")]
    NegativeTail(f64),
    #[error("{listed} tokens listed for a vocabulary of {vocab_size}")]
    TooManyTokens { listed: usize, vocab_size: usize },
    #[error("{field} is not finite")]
    NonFinite { field: &'static str },
    #[error("entropy {entropy} outside [0, ln {vocab_size}]")]
    EntropyOutOfRange { entropy: f64, vocab_size: usize },
}

#[derive(Debug, Error)]
pub enum DistError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line} ({prefix_id}): {source}")]
    Invalid {
        line: usize,
        prefix_id: String,
        #[source]
        source: RecordError,
    },
    #[error("line {line}: duplicate prefix_id {prefix_id:?}")]
    DuplicatePrefix { line: usize, prefix_id: String },
    #[error("{prefix_id}: {source}")]
    Record {
        prefix_id: String,
        #[source]
        source: RecordError,
    },
    #[error("{0}: node has no support")]
    EmptySupport(String),
    #[error("{0}: prefix does not resolve in the trie")]
    UnresolvedPrefix(String),
    #[error("smoothing {smoothing} would rank padding tokens above support at {prefix_id}")]
    SmoothingTooLarge { prefix_id: String, smoothing: f64 },
    #[error("smoothing must be in [0, 1), got {0}")]
    InvalidSmoothing(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TokenEntry<T> {
    pub rank: usize,
    /// Token text with any word-boundary marker removed.
    pub surface: String,
    /// Whether the token starts a new word in its tokenizer's convention.
    pub word_initial: bool,
    pub prob: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct DistributionRecord<T> {
    pub prefix_id: String,
    pub vocab_size: usize,
    pub entropy_nats: T,
    pub tail_mass: T,
    pub tokens: Vec<TokenEntry<T>>,
}

impl<T: Scalar> DistributionRecord<T> {
    /// Checks every structural invariant and the declared entropy range. A
    /// tail mass within [`TAIL_CLAMP`] below zero is clamped to zero.
    pub fn validate(&mut self) -> Result<(), RecordError> {
        if self.tokens.is_empty() {
            return Err(RecordError::NoTokens);
        }
        if self.tokens.len() > self.vocab_size {
            return Err(RecordError::TooManyTokens {
                listed: self.tokens.len(),
                vocab_size: self.vocab_size,
            });
        }
        if !self.entropy_nats.is_finite() {
            return Err(RecordError::NonFinite {
                field: "entropy_nats",
            });
        }
        if !self.tail_mass.is_finite() {
            return Err(RecordError::NonFinite { field: "tail_mass" });
        }
        let mut previous = T::infinity();
        let mut listed = T::zero();
        for (idx, token) in self.tokens.iter().enumerate() {
            let expected = idx + 1;
            if token.rank != expected {
                return Err(RecordError::RankGap {
                    expected,
                    found: token.rank,
                });
            }
            if token.surface.is_empty() {
                return Err(RecordError::EmptySurface { rank: expected });
            }
            let p = token.prob;
            if !(p > T::zero() && p <= T::one()) {
                return Err(RecordError::ProbOutOfRange { rank: expected });
            }
            if p > previous {
                return Err(RecordError::NotSorted { rank: expected });
            }
            previous = p;
            listed = listed + p;
        }
        if self.tail_mass < T::zero() {
            if self.tail_mass < -T::lit(TAIL_CLAMP) {
                return Err(RecordError::NegativeTail(
                    self.tail_mass.to_f64().unwrap_or(f64::NAN),
                ));
            }
            self.tail_mass = T::zero();
        }
        let total = listed + self.tail_mass;
        if (total - T::one()).abs() > T::lit(MASS_TOLERANCE) {
            return Err(RecordError::MassMismatch {
                total: total.to_f64().unwrap_or(f64::NAN),
            });
        }
        full_entropy_check(self)?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn probs(&self) -> impl ExactSizeIterator<Item = T> + '_ {
        self.tokens.iter().map(|t| t.prob)
    }

    pub fn has_tail(&self) -> bool {
        self.tail_mass > T::lit(TAIL_CLAMP)
    }
}

/// Entropy figures for one record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyDiagnostic<T> {
    pub declared: T,
    /// `-sum(p ln p)` over the listed tokens only.
    pub listed: T,
    /// `ln V`.
    pub upper_bound: T,
}

/// Checks that the declared full-distribution entropy lies in `[0, ln V]`.
///
/// The listed-portion entropy is reported but not compared against the
/// declared value: the tail can contribute in either direction relative to a
/// renormalized or partial sum.
pub fn full_entropy_check<T: Scalar>(
    record: &DistributionRecord<T>,
) -> Result<EntropyDiagnostic<T>, RecordError> {
    let upper_bound = T::from_count(record.vocab_size).ln();
    let listed = -record
        .probs()
        .map(|p| p * p.ln())
        .fold(T::zero(), |a, b| a + b);
    let tol = T::lit(ENTROPY_TOLERANCE);
    let h = record.entropy_nats;
    if h < -tol || h > upper_bound + tol {
        return Err(RecordError::EntropyOutOfRange {
            entropy: h.to_f64().unwrap_or(f64::NAN),
            vocab_size: record.vocab_size,
        });
    }
    Ok(EntropyDiagnostic {
        declared: h,
        listed,
        upper_bound,
    })
}

/// Streams validated records from JSONL, rejecting duplicate prefix ids.
/// Blank lines are skipped.
pub struct RecordReader<R, T> {
    lines: std::io::Lines<R>,
    line: usize,
    seen: HashSet<String>,
    _scalar: std::marker::PhantomData<T>,
}

impl<R: BufRead, T: Scalar> RecordReader<R, T> {
    pub fn new(reader: R) -> Self {
        Self {
            lines: reader.lines(),
            line: 0,
            seen: HashSet::new(),
            _scalar: std::marker::PhantomData,
        }
    }
}

impl<R: BufRead, T: Scalar> Iterator for RecordReader<R, T> {
    type Item = Result<DistributionRecord<T>, DistError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let text = match self.lines.next()? {
                Ok(text) => text,
                Err(source) => {
                    return Some(Err(DistError::Io {
                        path: format!("<line {}>", self.line + 1),
                        source,
                    }))
                }
            };
            self.line += 1;
            if text.trim().is_empty() {
                continue;
            }
            let line = self.line;
            let mut record: DistributionRecord<T> = match serde_json::from_str(&text) {
                Ok(r) => r,
                Err(source) => return Some(Err(DistError::Parse { line, source })),
            };
            if let Err(source) = record.validate() {
                return Some(Err(DistError::Invalid {
                    line,
                    prefix_id: record.prefix_id,
                    source,
                }));
            }
            if !self.seen.insert(record.prefix_id.clone()) {
                return Some(Err(DistError::DuplicatePrefix {
                    line,
                    prefix_id: record.prefix_id,
                }));
            }
            return Some(Ok(record));
        }
    }
}

pub fn parse_records<T: Scalar>(text: &str) -> Result<Vec<DistributionRecord<T>>, DistError> {
    RecordReader::new(text.as_bytes()).collect()
}

pub fn read_records<T: Scalar>(path: &Path) -> Result<Vec<DistributionRecord<T>>, DistError> {
    let file = std::fs::File::open(path).map_err(|source| DistError::Io {
        path: path.display().to_string(),
        source,
    })?;
    RecordReader::new(std::io::BufReader::new(file)).collect()
}

pub fn write_records<T: Scalar, W: Write>(
    out: &mut W,
    records: &[DistributionRecord<T>],
) -> std::io::Result<()> {
    for record in records {
        serde_json::to_writer(&mut *out, record)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ToyLmConfig {
    /// Probability mass spread uniformly over trie units outside the node's
    /// support. Zero gives the plain count-ratio model whose vocabulary is
    /// exactly the support.
    pub smoothing: f64,
}

/// Exports one record per node from trie counts.
///
/// Support units are listed first with probability proportional to their
/// pass counts (ties by surface), all word-initial. With smoothing, every
/// other unit of the trie vocabulary follows with an equal share of the
/// smoothing mass, so allowed sets can grow past the support.
pub fn toy_lm_export<T: Scalar>(
    trie: &TrieNode,
    nodes: &[EvaluationNode],
    cfg: &ToyLmConfig,
) -> Result<Vec<DistributionRecord<T>>, DistError> {
    if !(0.0..1.0).contains(&cfg.smoothing) {
        return Err(DistError::InvalidSmoothing(cfg.smoothing));
    }
    let vocabulary = if cfg.smoothing > 0.0 {
        trie.vocabulary()
    } else {
        Default::default()
    };
    nodes
        .iter()
        .map(|node| {
            let at = trie
                .node_at(&node.prefix_words)
                .ok_or_else(|| DistError::UnresolvedPrefix(node.prefix_id.clone()))?;
            let ranked = at.ranked_children();
            if ranked.is_empty() {
                return Err(DistError::EmptySupport(node.prefix_id.clone()));
            }
            let total: u64 = ranked.iter().map(|(_, c)| c.pass_count()).sum();
            let padding: Vec<&str> = vocabulary
                .iter()
                .copied()
                .filter(|u| at.child(u).is_none())
                .collect();
            let support_mass = if padding.is_empty() {
                T::one()
            } else {
                T::one() - T::lit(cfg.smoothing)
            };
            let total = T::lit(total as f64);
            let mut tokens: Vec<TokenEntry<T>> = ranked
                .iter()
                .map(|(unit, child)| TokenEntry {
                    rank: 0,
                    surface: unit.to_string(),
                    word_initial: true,
                    prob: support_mass * T::lit(child.pass_count() as f64) / total,
                })
                .collect();
            if !padding.is_empty() {
                let share = T::lit(cfg.smoothing) / T::from_count(padding.len());
                let smallest = tokens.last().expect("support is non-empty").prob;
                if share >= smallest {
                    return Err(DistError::SmoothingTooLarge {
                        prefix_id: node.prefix_id.clone(),
                        smoothing: cfg.smoothing,
                    });
                }
                tokens.extend(padding.iter().map(|unit| TokenEntry {
                    rank: 0,
                    surface: unit.to_string(),
                    word_initial: true,
                    prob: share,
                }));
            }
            for (idx, token) in tokens.iter_mut().enumerate() {
                token.rank = idx + 1;
            }
            let entropy = -tokens
                .iter()
                .map(|t| t.prob * t.prob.ln())
                .fold(T::zero(), |a, b| a + b);
            Ok(DistributionRecord {
                prefix_id: node.prefix_id.clone(),
                vocab_size: tokens.len(),
                entropy_nats: entropy,
                tail_mass: T::zero(),
                tokens,
            })
        })
        .collect()
}
