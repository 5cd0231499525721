//! Recall and Risk of an allowed set against the trie's data support, and
//! their averages over an evaluation set.
//!
//! For a node with optimal size `k*` (the shortest rank prefix covering every
//! support unit) and allowed size `a`:
//!
//! - recall = min(a / k*, 1)
//! - risk = max(a / k* - 1, 0)
//!
//! Over N nodes, AR is the mean recall and RSE is
//! `(1/N) * sqrt(sum (risk_i - mean_risk)^2)`.

use std::collections::{BTreeSet, HashMap};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::DistributionRecord;
use crate::samplers::{AllowedSetSize, Method, SamplerConfig, SamplerError, TruncationProfile};
use crate::scalar::Scalar;
use crate::trie::EvaluationNode;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("{0}: empty support")]
    EmptySupport(String),
    #[error("{prefix_id}: support not covered within the exported tokens: {words:?}")]
    UncoveredSupport {
        prefix_id: String,
        words: Vec<String>,
    },
    #[error("{prefix_id}: {source}")]
    Sampler {
        prefix_id: String,
        #[source]
        source: SamplerError,
    },
    #[error("no distribution records for prefix ids {0:?}")]
    MissingRecords(Vec<String>),
    #[error("cannot aggregate an empty node list")]
    NoNodes,
    #[error("correlation needs at least 3 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("{0} has zero variance")]
    ZeroVariance(&'static str),
}

impl MetricsError {
    /// Errors that mean the distribution export cannot support the protocol.
    pub fn is_protocol_failure(&self) -> bool {
        matches!(
            self,
            MetricsError::UncoveredSupport { .. }
                | MetricsError::Sampler {
                    source: SamplerError::RankOverflow { .. },
                    ..
                }
        )
    }
}

fn is_word(unit: &str) -> bool {
    !unit.is_empty() && unit.chars().all(char::is_alphabetic)
}

/// Size of the optimal allowed set.
///
/// A word unit is covered by a word-initial token whose surface is a
/// non-empty prefix of it (so "sec" covers "section" and the continuation
/// "tion" is never needed); any other unit needs an exact word-initial match.
/// Tokens that do not start a word never cover anything.
pub fn k_star<T: Scalar, S: AsRef<str>>(
    record: &DistributionRecord<T>,
    support: &[S],
) -> Result<usize, MetricsError> {
    let support: BTreeSet<&str> = support.iter().map(AsRef::as_ref).collect();
    if support.is_empty() {
        return Err(MetricsError::EmptySupport(record.prefix_id.clone()));
    }
    // Every string that covers some unit, mapped to the units it covers.
    let mut covers: HashMap<&str, Vec<&str>> = HashMap::new();
    for &unit in &support {
        if is_word(unit) {
            for (end, c) in unit.char_indices() {
                covers
                    .entry(&unit[..end + c.len_utf8()])
                    .or_default()
                    .push(unit);
            }
        } else {
            covers.entry(unit).or_default().push(unit);
        }
    }
    let mut uncovered = support.clone();
    for token in record.tokens.iter().filter(|t| t.word_initial) {
        if let Some(units) = covers.remove(token.surface.as_str()) {
            for unit in units {
                uncovered.remove(unit);
            }
            if uncovered.is_empty() {
                return Ok(token.rank);
            }
        }
    }
    Err(MetricsError::UncoveredSupport {
        prefix_id: record.prefix_id.clone(),
        words: uncovered.into_iter().map(str::to_string).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct NodeMetrics<T> {
    pub prefix_id: String,
    pub k_star: usize,
    pub allowed_size: usize,
    pub recall: T,
    pub risk: T,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub uncovered_support: Vec<String>,
}

/// `(recall, risk)` for an allowed size against the optimal size.
pub fn recall_risk<T: Scalar>(allowed_size: usize, k_star: usize) -> (T, T) {
    assert!(k_star >= 1 && allowed_size >= 1, "set sizes are at least 1");
    let ratio = T::from_count(allowed_size) / T::from_count(k_star);
    (ratio.min(T::one()), (ratio - T::one()).max(T::zero()))
}

impl<T: Scalar> NodeMetrics<T> {
    pub fn from_sizes(
        prefix_id: impl Into<String>,
        k_star: usize,
        allowed: AllowedSetSize,
    ) -> Self {
        let (recall, risk) = recall_risk(allowed.get(), k_star);
        Self {
            prefix_id: prefix_id.into(),
            k_star,
            allowed_size: allowed.get(),
            recall,
            risk,
            uncovered_support: Vec::new(),
        }
    }
}

pub fn node_metrics<T: Scalar, S: AsRef<str>>(
    record: &DistributionRecord<T>,
    support: &[S],
    cfg: &SamplerConfig<T>,
) -> Result<NodeMetrics<T>, MetricsError> {
    let k = k_star(record, support)?;
    let allowed =
        crate::samplers::allowed_size(record, cfg).map_err(|source| MetricsError::Sampler {
            prefix_id: record.prefix_id.clone(),
            source,
        })?;
    Ok(NodeMetrics::from_sizes(
        record.prefix_id.clone(),
        k,
        allowed,
    ))
}

/// Averages over a node list.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary<T> {
    pub n_nodes: usize,
    pub average_recall: T,
    pub average_risk: T,
    pub rse: T,
}

pub fn summarize<T: Scalar>(per_node: &[NodeMetrics<T>]) -> Result<Summary<T>, MetricsError> {
    if per_node.is_empty() {
        return Err(MetricsError::NoNodes);
    }
    let n = T::from_count(per_node.len());
    let average_recall = per_node.iter().map(|m| m.recall).sum::<T>() / n;
    let average_risk = per_node.iter().map(|m| m.risk).sum::<T>() / n;
    let spread = per_node
        .iter()
        .map(|m| (m.risk - average_risk).powi(2))
        .sum::<T>();
    Ok(Summary {
        n_nodes: per_node.len(),
        average_recall,
        average_risk,
        rse: spread.sqrt() / n,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExcludedNode {
    pub prefix_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct AggregateReport<T> {
    pub method: Method,
    pub theta: T,
    pub n_nodes: usize,
    pub average_recall: T,
    pub average_risk: T,
    pub rse: T,
    pub excluded_nodes: Vec<ExcludedNode>,
    /// Nodes scored with the full listed size after a degenerate Zipf fit.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub degenerate_fallbacks: Vec<String>,
    pub per_node: Vec<NodeMetrics<T>>,
}

pub fn aggregate<T: Scalar>(
    cfg: &SamplerConfig<T>,
    per_node: Vec<NodeMetrics<T>>,
    excluded_nodes: Vec<ExcludedNode>,
) -> Result<AggregateReport<T>, MetricsError> {
    let s = summarize(&per_node)?;
    Ok(AggregateReport {
        method: cfg.method,
        theta: cfg.theta,
        n_nodes: s.n_nodes,
        average_recall: s.average_recall,
        average_risk: s.average_risk,
        rse: s.rse,
        excluded_nodes,
        degenerate_fallbacks: Vec::new(),
        per_node,
    })
}

/// A node ready for repeated scoring: its record profile and `k*`.
#[derive(Debug, Clone)]
pub struct PreparedNode<'r, T> {
    pub profile: TruncationProfile<'r, T>,
    pub k_star: usize,
}

impl<T: Scalar> PreparedNode<'_, T> {
    pub fn prefix_id(&self) -> &str {
        &self.profile.record().prefix_id
    }

    /// Allowed size, with a degenerate Zipf fit falling back to the full
    /// listed size (flagged by the boolean).
    pub fn allowed_size(
        &self,
        cfg: &SamplerConfig<T>,
    ) -> Result<(AllowedSetSize, bool), MetricsError> {
        match self.profile.allowed_size(cfg) {
            Ok(size) => Ok((size, false)),
            Err(SamplerError::DegenerateZipf { .. }) => {
                Ok((AllowedSetSize::new(self.profile.record().len()), true))
            }
            Err(source) => Err(MetricsError::Sampler {
                prefix_id: self.prefix_id().to_string(),
                source,
            }),
        }
    }
}

/// Pairs nodes with records by prefix id; every node needs a record.
pub fn pair_records<'a, T: Scalar>(
    nodes: &'a [EvaluationNode],
    records: &'a [DistributionRecord<T>],
) -> Result<Vec<(&'a EvaluationNode, &'a DistributionRecord<T>)>, MetricsError> {
    let by_id: HashMap<&str, &DistributionRecord<T>> =
        records.iter().map(|r| (r.prefix_id.as_str(), r)).collect();
    let mut missing = Vec::new();
    let mut pairs = Vec::with_capacity(nodes.len());
    for node in nodes {
        match by_id.get(node.prefix_id.as_str()) {
            Some(record) => pairs.push((node, *record)),
            None => missing.push(node.prefix_id.clone()),
        }
    }
    if missing.is_empty() {
        Ok(pairs)
    } else {
        Err(MetricsError::MissingRecords(missing))
    }
}

/// Computes `k*` for every pair. Nodes whose support is not covered by the
/// exported tokens are returned separately; other errors abort.
pub fn prepare_nodes<'r, T: Scalar>(
    pairs: &[(&EvaluationNode, &'r DistributionRecord<T>)],
) -> Result<(Vec<PreparedNode<'r, T>>, Vec<ExcludedNode>), MetricsError> {
    let results: Vec<Result<PreparedNode<'r, T>, MetricsError>> = pairs
        .par_iter()
        .map(|(node, record)| {
            let support: Vec<&str> = node.support.iter().map(String::as_str).collect();
            let k = k_star(*record, &support)?;
            Ok(PreparedNode {
                profile: TruncationProfile::new(record),
                k_star: k,
            })
        })
        .collect();
    let mut prepared = Vec::with_capacity(results.len());
    let mut excluded = Vec::new();
    for result in results {
        match result {
            Ok(node) => prepared.push(node),
            Err(err @ MetricsError::UncoveredSupport { .. }) => {
                let MetricsError::UncoveredSupport { ref prefix_id, .. } = err else {
                    unreachable!()
                };
                log::warn!("excluding node: {err}");
                excluded.push(ExcludedNode {
                    prefix_id: prefix_id.clone(),
                    reason: err.to_string(),
                });
            }
            Err(err) => return Err(err),
        }
    }
    Ok((prepared, excluded))
}

/// Scores every prepared node under one configuration.
pub fn evaluate_prepared<T: Scalar>(
    nodes: &[PreparedNode<'_, T>],
    cfg: &SamplerConfig<T>,
    excluded_nodes: Vec<ExcludedNode>,
) -> Result<AggregateReport<T>, MetricsError> {
    cfg.method
        .check_theta(cfg.theta)
        .map_err(|source| MetricsError::Sampler {
            prefix_id: String::new(),
            source,
        })?;
    let scored: Vec<(NodeMetrics<T>, bool)> = nodes
        .par_iter()
        .map(|node| {
            let (size, fallback) = node.allowed_size(cfg)?;
            Ok((
                NodeMetrics::from_sizes(node.prefix_id(), node.k_star, size),
                fallback,
            ))
        })
        .collect::<Result<_, MetricsError>>()?;
    let degenerate: Vec<String> = scored
        .iter()
        .filter(|(_, fallback)| *fallback)
        .map(|(m, _)| m.prefix_id.clone())
        .collect();
    if !degenerate.is_empty() {
        log::warn!(
            "{} nodes had a degenerate Zipf fit and were scored at full listed size",
            degenerate.len()
        );
    }
    let mut report = aggregate(
        cfg,
        scored.into_iter().map(|(m, _)| m).collect(),
        excluded_nodes,
    )?;
    report.degenerate_fallbacks = degenerate;
    Ok(report)
}

/// Full evaluation of one configuration over paired nodes and records.
pub fn evaluate<T: Scalar>(
    nodes: &[EvaluationNode],
    records: &[DistributionRecord<T>],
    cfg: &SamplerConfig<T>,
) -> Result<AggregateReport<T>, MetricsError> {
    let pairs = pair_records(nodes, records)?;
    let (prepared, excluded) = prepare_nodes(&pairs)?;
    evaluate_prepared(&prepared, cfg, excluded)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ScatterPoint<T> {
    pub prefix_id: String,
    pub entropy_nats: T,
    pub k_star: usize,
}

pub fn scatter_points<T: Scalar>(nodes: &[PreparedNode<'_, T>]) -> Vec<ScatterPoint<T>> {
    nodes
        .iter()
        .map(|n| ScatterPoint {
            prefix_id: n.prefix_id().to_string(),
            entropy_nats: n.profile.record().entropy_nats,
            k_star: n.k_star,
        })
        .collect()
}

/// Pearson correlation coefficient.
pub fn pearson<T: Scalar>(xs: &[T], ys: &[T]) -> Result<T, MetricsError> {
    assert_eq!(xs.len(), ys.len(), "paired samples");
    if xs.len() < 3 {
        return Err(MetricsError::TooFewNodes(xs.len()));
    }
    let n = T::from_count(xs.len());
    let mx = xs.iter().copied().sum::<T>() / n;
    let my = ys.iter().copied().sum::<T>() / n;
    let (mut sxy, mut sxx, mut syy) = (T::zero(), T::zero(), T::zero());
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy = sxy + dx * dy;
        sxx = sxx + dx * dx;
        syy = syy + dy * dy;
    }
    if !(sxx > T::zero()) {
        return Err(MetricsError::ZeroVariance("entropy"));
    }
    if !(syy > T::zero()) {
        return Err(MetricsError::ZeroVariance("k_star"));
    }
    Ok(sxy / (sxx.sqrt() * syy.sqrt()))
}

/// Correlation between declared entropy and `k*` across nodes.
pub fn entropy_k_star_correlation<T: Scalar>(
    points: &[ScatterPoint<T>],
) -> Result<T, MetricsError> {
    let xs: Vec<T> = points.iter().map(|p| p.entropy_nats).collect();
    let ys: Vec<T> = points.iter().map(|p| T::from_count(p.k_star)).collect();
    pearson(&xs, &ys)
}

/// CSV with header `prefix_id,entropy_nats,k_star`.
pub fn write_scatter_csv<T: Scalar, W: Write>(
    out: W,
    points: &[ScatterPoint<T>],
) -> csv::Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for point in points {
        writer.serialize(point)?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::TokenEntry;

    fn tokens(entries: &[(&str, bool)]) -> DistributionRecord<f64> {
        let n = entries.len();
        DistributionRecord {
            prefix_id: "p".into(),
            vocab_size: n,
            entropy_nats: (n as f64).ln(),
            tail_mass: 0.0,
            tokens: entries
                .iter()
                .enumerate()
                .map(|(i, &(surface, word_initial))| TokenEntry {
                    rank: i + 1,
                    surface: surface.into(),
                    word_initial,
                    prob: 1.0 / n as f64,
                })
                .collect(),
        }
    }

    #[test]
    fn subword_prefix_covers_word() {
        let r = tokens(&[("the", true), ("sec", true), ("tion", false)]);
        assert_eq!(k_star(&r, &["section"]).unwrap(), 2);
    }

    #[test]
    fn non_initial_fragments_never_cover() {
        let r = tokens(&[("tion", false), ("section", false), ("sect", true)]);
        assert_eq!(k_star(&r, &["section"]).unwrap(), 3);
        let r = tokens(&[("a", true), (",", false), (",", true)]);
        assert_eq!(k_star(&r, &[","]).unwrap(), 3);
    }

    #[test]
    fn punctuation_needs_exact_match() {
        let r = tokens(&[(",\"", true), (",", true)]);
        assert_eq!(k_star(&r, &[","]).unwrap(), 2);
        let r = tokens(&[("Th", true), ("the", true), ("The", true)]);
        assert_eq!(k_star(&r, &["The"]).unwrap(), 1);
        assert_eq!(k_star(&r, &["the"]).unwrap(), 2);
    }

    #[test]
    fn uncovered_support_is_reported() {
        let r = tokens(&[("a", true), ("b", true)]);
        let err = k_star(&r, &["a", "zoo", "."]).unwrap_err();
        assert_eq!(
            err,
            MetricsError::UncoveredSupport {
                prefix_id: "p".into(),
                words: vec![".".into(), "zoo".into()]
            }
        );
        assert!(err.is_protocol_failure());
        assert!(matches!(
            k_star::<f64, &str>(&r, &[]),
            Err(MetricsError::EmptySupport(_))
        ));
    }

    #[test]
    fn recall_risk_algebra() {
        assert_eq!(recall_risk::<f64>(4, 4), (1.0, 0.0));
        assert_eq!(recall_risk::<f64>(8, 4), (1.0, 1.0));
        assert_eq!(recall_risk::<f64>(2, 4), (0.5, 0.0));
    }

    fn metric(recall: f64, risk: f64) -> NodeMetrics<f64> {
        NodeMetrics {
            prefix_id: "n".into(),
            k_star: 1,
            allowed_size: 1,
            recall,
            risk,
            uncovered_support: vec![],
        }
    }

    #[test]
    fn rse_uses_one_over_n_outside_the_root() {
        let s = summarize(&[metric(1.0, 0.0), metric(1.0, 2.0)]).unwrap();
        assert_eq!(s.average_risk, 1.0);
        assert_eq!(s.average_recall, 1.0);
        assert!((s.rse - 2f64.sqrt() / 2.0).abs() < 1e-12);
        let same = summarize(&vec![metric(0.5, 3.0); 7]).unwrap();
        assert_eq!(same.rse, 0.0);
        assert_eq!(same.average_recall, 0.5);
        assert_eq!(same.average_risk, 3.0);
        assert_eq!(summarize::<f64>(&[]), Err(MetricsError::NoNodes));
    }

    #[test]
    fn pearson_examples() {
        let xs = [0.1, 0.7, 1.3, 2.0];
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x + 2.0).collect();
        assert!((pearson(&xs, &ys).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert!((pearson(&xs, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(
            pearson(&xs, &[5.0; 4]),
            Err(MetricsError::ZeroVariance("k_star"))
        );
        assert_eq!(
            pearson(&[1.0, 2.0], &[1.0, 2.0]),
            Err(MetricsError::TooFewNodes(2))
        );
    }

    #[test]
    fn scatter_csv_quotes_fields() {
        let points = vec![
            ScatterPoint {
                prefix_id: "The ,".to_string(),
                entropy_nats: 0.5,
                k_star: 2,
            },
            ScatterPoint {
                prefix_id: "A \"".to_string(),
                entropy_nats: 1.25,
                k_star: 3,
            },
        ];
        let mut buf = Vec::new();
        write_scatter_csv(&mut buf, &points).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "prefix_id,entropy_nats,k_star\n\"The ,\",0.5,2\n\"A \"\"\",1.25,3\n"
        );
    }

    #[test]
    fn missing_records_are_listed() {
        let node = |id: &str| EvaluationNode {
            prefix_id: id.into(),
            prefix_words: vec![id.into()],
            support: ["x".to_string()].into(),
            depth: 1,
        };
        let mut r = tokens(&[("x", true)]);
        r.prefix_id = "A".into();
        let nodes = [node("A"), node("B"), node("C")];
        assert_eq!(
            pair_records(&nodes, std::slice::from_ref(&r)).unwrap_err(),
            MetricsError::MissingRecords(vec!["B".into(), "C".into()])
        );
    }

    #[test]
    fn evaluate_excludes_uncovered_and_falls_back_on_degenerate_zipf() {
        let node = |id: &str, support: &[&str]| EvaluationNode {
            prefix_id: id.into(),
            prefix_words: vec![id.into()],
            support: support.iter().map(|s| s.to_string()).collect(),
            depth: 1,
        };
        let mut a = tokens(&[("x", true), ("y", true), ("z", true)]);
        a.prefix_id = "A".into();
        let mut b = tokens(&[("x", true), ("y", true)]);
        b.prefix_id = "B".into();
        let nodes = [node("A", &["x"]), node("B", &["q"])];
        let records = [a, b];
        let cfg = SamplerConfig::new(Method::Mirostat, 3.0).unwrap();
        let report = evaluate(&nodes, &records, &cfg).unwrap();
        assert_eq!(report.n_nodes, 1);
        assert_eq!(report.excluded_nodes.len(), 1);
        assert_eq!(report.excluded_nodes[0].prefix_id, "B");
        assert_eq!(report.degenerate_fallbacks, vec!["A".to_string()]);
        assert_eq!(report.per_node[0].allowed_size, 3);
        assert_eq!(report.average_risk, 2.0);
    }
}
