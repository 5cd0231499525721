//! Context-preserving word trie.
//!
//! Every accepted sentence is inserted from its first unit, so a path from the
//! root is always a sentence prefix and the children of a node are exactly the
//! units observed after that prefix (its data support).
//!
//! Each node keeps a pass count (sentences whose path reaches the node) and an
//! end count (sentences ending at it). The two satisfy
//! `pass = end + sum(child.pass)`, so `pass` is also the number of sentence
//! occurrences (leaves) in the subtree.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::SentenceTokens;

#[derive(Debug, Error)]
pub enum TrieError {
    #[error("malformed trie JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("negative {field} count at {path}")]
    NegativeCount { path: String, field: &'static str },
    #[error("count invariant violated at {path}: pass {pass} != end {end} + children {children}")]
    CountMismatch {
        path: String,
        pass: u64,
        end: u64,
        children: u64,
    },
    #[error("node at {path} has a zero pass count")]
    EmptyNode { path: String },
    #[error("trie is empty")]
    EmptyTrie,
    #[error("invalid selection: {0}")]
    InvalidSelection(String),
    #[error("prefix {0} does not resolve in the trie")]
    UnresolvedPrefix(String),
    #[error("support recorded for {prefix_id} does not match the trie")]
    SupportMismatch { prefix_id: String },
    #[error("node list line {line}: {source}")]
    NodeLine {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("node list line {line}: duplicate prefix_id {prefix_id:?}")]
    DuplicateNode { line: usize, prefix_id: String },
}

fn path_string(path: &[&str]) -> String {
    serde_json::to_string(path).expect("string slice serializes")
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrieNode {
    children: HashMap<String, TrieNode>,
    pass_count: u64,
    end_count: u64,
}

impl TrieNode {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn pass_count(&self) -> u64 {
        self.pass_count
    }

    pub fn end_count(&self) -> u64 {
        self.end_count
    }

    pub fn children(&self) -> &HashMap<String, TrieNode> {
        &self.children
    }

    pub fn child(&self, unit: &str) -> Option<&TrieNode> {
        self.children.get(unit)
    }

    pub fn is_empty(&self) -> bool {
        self.pass_count == 0 && self.children.is_empty()
    }

    /// Data support: child units in lexicographic order.
    pub fn support(&self) -> BTreeSet<String> {
        self.children.keys().cloned().collect()
    }

    /// Children by subtree size (descending), ties by key (ascending).
    pub fn ranked_children(&self) -> Vec<(&str, &TrieNode)> {
        let mut kids: Vec<(&str, &TrieNode)> =
            self.children.iter().map(|(k, v)| (k.as_str(), v)).collect();
        kids.sort_by(|a, b| b.1.pass_count.cmp(&a.1.pass_count).then(a.0.cmp(b.0)));
        kids
    }

    /// Inserts one sentence. Empty sentences are ignored.
    pub fn insert<S: AsRef<str>>(&mut self, words: &[S]) {
        if words.is_empty() {
            return;
        }
        let mut node = self;
        node.pass_count += 1;
        for word in words {
            node = node.children.entry(word.as_ref().to_string()).or_default();
            node.pass_count += 1;
        }
        node.end_count += 1;
    }

    pub fn insert_sentence(&mut self, sentence: &SentenceTokens) {
        self.insert(&sentence.words);
    }

    pub fn node_at<S: AsRef<str>>(&self, prefix: &[S]) -> Option<&TrieNode> {
        prefix
            .iter()
            .try_fold(self, |node, unit| node.children.get(unit.as_ref()))
    }

    /// Adds `other`'s counts into `self` node by node.
    pub fn merge(&mut self, other: TrieNode) {
        self.pass_count += other.pass_count;
        self.end_count += other.end_count;
        for (key, child) in other.children {
            match self.children.get_mut(&key) {
                Some(mine) => mine.merge(child),
                None => {
                    self.children.insert(key, child);
                }
            }
        }
    }

    /// Checks the count invariant at every node below (and including) `self`.
    pub fn check_counts(&self) -> Result<(), TrieError> {
        let mut path = Vec::new();
        self.check_counts_at(&mut path, true)
    }

    fn check_counts_at<'a>(
        &'a self,
        path: &mut Vec<&'a str>,
        is_root: bool,
    ) -> Result<(), TrieError> {
        if !is_root && self.pass_count == 0 {
            return Err(TrieError::EmptyNode {
                path: path_string(path),
            });
        }
        let children: u64 = self.children.values().map(|c| c.pass_count).sum();
        if self.pass_count != self.end_count + children {
            return Err(TrieError::CountMismatch {
                path: path_string(path),
                pass: self.pass_count,
                end: self.end_count,
                children,
            });
        }
        for (key, child) in &self.children {
            path.push(key);
            child.check_counts_at(path, false)?;
            path.pop();
        }
        Ok(())
    }

    /// Distinct units appearing anywhere in the trie.
    pub fn vocabulary(&self) -> BTreeSet<&str> {
        let mut out = BTreeSet::new();
        let mut stack = vec![self];
        while let Some(node) = stack.pop() {
            for (key, child) in &node.children {
                out.insert(key.as_str());
                stack.push(child);
            }
        }
        out
    }

    pub fn stats(&self, articles: Option<u64>) -> TrieStats {
        let mut stats = TrieStats {
            articles,
            leaves: 0,
            distinct_terminals: 0,
            max_depth: 0,
            root_branching: self.children.len() as u64,
        };
        let mut stack = vec![(self, 0u64)];
        while let Some((node, depth)) = stack.pop() {
            stats.leaves += node.end_count;
            if node.end_count > 0 {
                stats.distinct_terminals += 1;
            }
            stats.max_depth = stats.max_depth.max(depth);
            stack.extend(node.children.values().map(|c| (c, depth + 1)));
        }
        stats
    }

    /// Byte-stable JSON: `{"n":pass,"e":end,"c":{unit:node,...}}` with keys in
    /// lexicographic order and `"c"` omitted for childless nodes.
    pub fn write_json<W: Write>(&self, out: &mut W, pretty: bool) -> io::Result<()> {
        self.write_node(out, pretty, 0)?;
        if pretty {
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_json(&self, pretty: bool) -> String {
        let mut buf = Vec::new();
        self.write_json(&mut buf, pretty)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("trie JSON is UTF-8")
    }

    fn write_node<W: Write>(&self, out: &mut W, pretty: bool, indent: usize) -> io::Result<()> {
        if !pretty {
            write!(out, "{{\"n\":{},\"e\":{}", self.pass_count, self.end_count)?;
            if !self.children.is_empty() {
                out.write_all(b",\"c\":{")?;
                for (i, (key, child)) in self.sorted_children().into_iter().enumerate() {
                    if i > 0 {
                        out.write_all(b",")?;
                    }
                    serde_json::to_writer(&mut *out, key)?;
                    out.write_all(b":")?;
                    child.write_node(out, pretty, indent)?;
                }
                out.write_all(b"}")?;
            }
            return out.write_all(b"}");
        }
        let pad = "  ".repeat(indent + 1);
        write!(
            out,
            "{{\n{pad}\"n\": {},\n{pad}\"e\": {}",
            self.pass_count, self.end_count
        )?;
        if !self.children.is_empty() {
            write!(out, ",\n{pad}\"c\": {{")?;
            let inner = "  ".repeat(indent + 2);
            for (i, (key, child)) in self.sorted_children().into_iter().enumerate() {
                out.write_all(if i > 0 { b",\n" } else { b"\n" })?;
                out.write_all(inner.as_bytes())?;
                serde_json::to_writer(&mut *out, key)?;
                out.write_all(b": ")?;
                child.write_node(out, pretty, indent + 2)?;
            }
            write!(out, "\n{pad}}}")?;
        }
        write!(out, "\n{}}}", "  ".repeat(indent))
    }

    fn sorted_children(&self) -> Vec<(&String, &TrieNode)> {
        let mut kids: Vec<_> = self.children.iter().collect();
        kids.sort_unstable_by(|a, b| a.0.cmp(b.0));
        kids
    }

    /// Parses and validates trie JSON. Arbitrarily deep tries are supported.
    pub fn from_json(text: &str) -> Result<Self, TrieError> {
        let mut de = serde_json::Deserializer::from_str(text);
        de.disable_recursion_limit();
        let raw = RawNode::deserialize(serde_stacker::Deserializer::new(&mut de))?;
        de.end()?;
        let mut path = Vec::new();
        let node = raw.into_node(&mut path)?;
        node.check_counts()?;
        Ok(node)
    }
}

/// Wire form of a node before validation.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNode {
    n: i64,
    e: i64,
    #[serde(default)]
    c: BTreeMap<String, RawNode>,
}

impl RawNode {
    fn into_node(self, path: &mut Vec<String>) -> Result<TrieNode, TrieError> {
        let here = || {
            let refs: Vec<&str> = path.iter().map(String::as_str).collect();
            path_string(&refs)
        };
        if self.n < 0 {
            return Err(TrieError::NegativeCount {
                path: here(),
                field: "n",
            });
        }
        if self.e < 0 {
            return Err(TrieError::NegativeCount {
                path: here(),
                field: "e",
            });
        }
        let mut children = HashMap::with_capacity(self.c.len());
        for (key, raw) in self.c {
            path.push(key);
            let child = raw.into_node(path)?;
            let key = path.pop().expect("pushed above");
            children.insert(key, child);
        }
        Ok(TrieNode {
            children,
            pass_count: self.n as u64,
            end_count: self.e as u64,
        })
    }
}

/// Sum of two tries; equal to building from both corpora in one pass.
pub fn merge(mut a: TrieNode, b: TrieNode) -> TrieNode {
    a.merge(b);
    a
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrieStats {
    /// Source documents, when known.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub articles: Option<u64>,
    /// Sentence occurrences: sum of end counts (duplicates counted).
    pub leaves: u64,
    /// Nodes where at least one sentence ends.
    pub distinct_terminals: u64,
    pub max_depth: u64,
    pub root_branching: u64,
}

/// A prefix chosen for evaluation together with its data support.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluationNode {
    pub prefix_id: String,
    pub prefix_words: Vec<String>,
    pub support: BTreeSet<String>,
    pub depth: usize,
}

impl EvaluationNode {
    /// Units never contain whitespace, so joining with a space is injective.
    pub fn prefix_id_for<S: AsRef<str>>(words: &[S]) -> String {
        words
            .iter()
            .map(AsRef::as_ref)
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Checks that the prefix resolves in `trie` with the recorded support.
    pub fn verify<'t>(&self, trie: &'t TrieNode) -> Result<&'t TrieNode, TrieError> {
        let node = trie
            .node_at(&self.prefix_words)
            .ok_or_else(|| TrieError::UnresolvedPrefix(self.prefix_id.clone()))?;
        if node.children.len() != self.support.len()
            || !self.support.iter().all(|w| node.children.contains_key(w))
        {
            return Err(TrieError::SupportMismatch {
                prefix_id: self.prefix_id.clone(),
            });
        }
        Ok(node)
    }
}

/// One JSON object per line, in selection order.
pub fn write_nodes<W: Write>(out: &mut W, nodes: &[EvaluationNode]) -> io::Result<()> {
    for node in nodes {
        serde_json::to_writer(&mut *out, node)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Parses a node list written by [`write_nodes`]; blank lines are skipped.
pub fn parse_nodes(text: &str) -> Result<Vec<EvaluationNode>, TrieError> {
    let mut seen = BTreeSet::new();
    let mut nodes = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let node: EvaluationNode =
            serde_json::from_str(line).map_err(|source| TrieError::NodeLine {
                line: idx + 1,
                source,
            })?;
        if !seen.insert(node.prefix_id.clone()) {
            return Err(TrieError::DuplicateNode {
                line: idx + 1,
                prefix_id: node.prefix_id,
            });
        }
        nodes.push(node);
    }
    Ok(nodes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SelectionConfig {
    /// Sentence-starting subtrees to keep.
    pub roots: usize,
    /// Children kept below every selected node.
    pub children: usize,
    /// Deepest prefix length visited; selected roots are depth 1.
    pub max_depth: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            roots: 10,
            children: 2,
            max_depth: 6,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Selection {
    pub nodes: Vec<EvaluationNode>,
    pub warnings: Vec<String>,
}

/// Picks the largest sentence-starting subtrees, then keeps the largest
/// `children` children at every level down to `max_depth`. Visited nodes with
/// a non-empty support are emitted depth-first; subtree size is the number of
/// sentence occurrences below a node, ties broken by key.
pub fn select_evaluation_nodes(
    trie: &TrieNode,
    cfg: &SelectionConfig,
) -> Result<Selection, TrieError> {
    if cfg.roots == 0 {
        return Err(TrieError::InvalidSelection(
            "roots must be at least 1".into(),
        ));
    }
    if cfg.max_depth == 0 {
        return Err(TrieError::InvalidSelection(
            "max depth must be at least 1".into(),
        ));
    }
    if trie.children.is_empty() {
        return Err(TrieError::EmptyTrie);
    }
    let mut selection = Selection::default();
    let ranked = trie.ranked_children();
    if ranked.len() < cfg.roots {
        let msg = format!(
            "only {} sentence-starting units available, fewer than the {} requested",
            ranked.len(),
            cfg.roots
        );
        log::warn!("{msg}");
        selection.warnings.push(msg);
    }
    let mut prefix = Vec::new();
    for (unit, node) in ranked.into_iter().take(cfg.roots) {
        prefix.push(unit);
        visit(node, &mut prefix, cfg, &mut selection.nodes);
        prefix.pop();
    }
    Ok(selection)
}

fn visit<'a>(
    node: &'a TrieNode,
    prefix: &mut Vec<&'a str>,
    cfg: &SelectionConfig,
    out: &mut Vec<EvaluationNode>,
) {
    if !node.children.is_empty() {
        out.push(EvaluationNode {
            prefix_id: EvaluationNode::prefix_id_for(prefix),
            prefix_words: prefix.iter().map(|s| s.to_string()).collect(),
            support: node.support(),
            depth: prefix.len(),
        });
    }
    if prefix.len() >= cfg.max_depth {
        return;
    }
    for (unit, child) in node.ranked_children().into_iter().take(cfg.children) {
        prefix.push(unit);
        visit(child, prefix, cfg, out);
        prefix.pop();
    }
}
