#![allow(dead_code)]

use std::fs;
use std::path::PathBuf;

use cptrie_core::ingest::{ingest_document, IngestConfig, IngestStats, SentenceTokens, WordList};
use cptrie_core::trie::TrieNode;
use serde_json::Value;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn expected() -> Value {
    serde_json::from_str(&fs::read_to_string(fixtures().join("expected.json")).unwrap()).unwrap()
}

/// Corpus documents sorted by file name, as (source id, text).
pub fn corpus() -> Vec<(String, String)> {
    let mut docs: Vec<_> = fs::read_dir(fixtures().join("corpus"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    docs.sort();
    docs.into_iter()
        .map(|p| {
            let id = p.file_name().unwrap().to_string_lossy().into_owned();
            (id, fs::read_to_string(&p).unwrap())
        })
        .collect()
}

pub fn wordlist() -> WordList {
    WordList::load(&fixtures().join("wordlist.txt")).unwrap()
}

/// Accepted sentences from every fixture document, in corpus order.
pub fn fixture_sentences() -> (Vec<SentenceTokens>, IngestStats) {
    let wl = wordlist();
    let cfg = IngestConfig::default();
    let mut sentences = Vec::new();
    let mut stats = IngestStats::default();
    for (id, text) in corpus() {
        let doc = ingest_document(&text, &id, &cfg, &wl);
        sentences.extend(doc.sentences);
        stats += doc.stats;
    }
    (sentences, stats)
}

pub fn fixture_trie() -> TrieNode {
    let mut trie = TrieNode::new();
    for s in &fixture_sentences().0 {
        trie.insert_sentence(s);
    }
    trie
}
