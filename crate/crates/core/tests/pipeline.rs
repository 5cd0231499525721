mod common;

use cptrie_core::calibrate::{calibrate, CalibrationSpec};
use cptrie_core::dist::{parse_records, toy_lm_export, write_records, ToyLmConfig};
use cptrie_core::metrics::{
    entropy_k_star_correlation, evaluate, pair_records, prepare_nodes, scatter_points,
};
use cptrie_core::samplers::{Method, SamplerConfig};
use cptrie_core::trie::{select_evaluation_nodes, SelectionConfig, TrieNode};
use cptrie_core::DistributionRecord;

#[test]
fn ingest_counts_match_fixture_audit() {
    let expected = common::expected();
    let (sentences, stats) = common::fixture_sentences();
    assert_eq!(
        sentences.len() as u64,
        expected["accepted_sentences"].as_u64().unwrap()
    );
    assert_eq!(stats.accepted, sentences.len());
    assert_eq!(
        stats.unknown_word as u64,
        expected["rejected_unknown_word"].as_u64().unwrap()
    );
    assert_eq!((stats.heading, stats.digit), (0, 0));
    assert_eq!(stats.total, 100);
}

#[test]
fn trie_totals_and_round_trip() {
    let trie = common::fixture_trie();
    assert_eq!(trie.pass_count(), 93);
    trie.check_counts().unwrap();
    let stats = trie.stats(Some(5));
    assert_eq!(stats.leaves, 93);
    let text = trie.to_json(false);
    let back = TrieNode::from_json(&text).unwrap();
    assert_eq!(back, trie);
    assert_eq!(back.to_json(false), text);
}

#[test]
fn small_selection_snapshot() {
    let trie = common::fixture_trie();
    let cfg = SelectionConfig {
        roots: 2,
        children: 2,
        max_depth: 3,
    };
    let sel = select_evaluation_nodes(&trie, &cfg).unwrap();
    let expected = common::expected();
    let snapshot = expected["small_selection"].as_array().unwrap();
    assert_eq!(sel.nodes.len(), snapshot.len());
    for (node, want) in sel.nodes.iter().zip(snapshot) {
        let words: Vec<String> = serde_json::from_value(want["prefix_words"].clone()).unwrap();
        let support: Vec<String> = serde_json::from_value(want["support"].clone()).unwrap();
        assert_eq!(node.prefix_words, words);
        assert_eq!(node.support.iter().cloned().collect::<Vec<_>>(), support);
        assert_eq!(node.depth, words.len());
        node.verify(&trie).unwrap();
    }
}

#[test]
fn max_depth_one_keeps_only_roots() {
    let trie = common::fixture_trie();
    let cfg = SelectionConfig {
        roots: 3,
        children: 2,
        max_depth: 1,
    };
    let sel = select_evaluation_nodes(&trie, &cfg).unwrap();
    assert_eq!(sel.nodes.len(), 3);
    assert!(sel.nodes.iter().all(|n| n.depth == 1));
}

#[test]
fn toy_export_closed_forms() {
    let trie = common::fixture_trie();
    let nodes = select_evaluation_nodes(&trie, &SelectionConfig::default())
        .unwrap()
        .nodes;
    let expected = common::expected();
    let def = &expected["default_selection"];
    assert_eq!(nodes.len() as u64, def["n_nodes"].as_u64().unwrap());
    let sizes: Vec<usize> = serde_json::from_value(def["support_sizes"].clone()).unwrap();
    assert_eq!(
        nodes.iter().map(|n| n.support.len()).collect::<Vec<_>>(),
        sizes
    );

    let records: Vec<DistributionRecord> =
        toy_lm_export(&trie, &nodes, &ToyLmConfig::default()).unwrap();
    let mut buf = Vec::new();
    write_records(&mut buf, &records).unwrap();
    let records: Vec<DistributionRecord> =
        parse_records(std::str::from_utf8(&buf).unwrap()).unwrap();

    let cfg = SamplerConfig::new(Method::TopK, 1.0).unwrap();
    let report = evaluate(&nodes, &records, &cfg).unwrap();
    assert_eq!(report.n_nodes, 152);
    assert!(report.excluded_nodes.is_empty());
    assert!(report.per_node.iter().all(|m| m.risk == 0.0));
    let frac: Vec<f64> =
        serde_json::from_value(def["top_k_1_average_recall_fraction"].clone()).unwrap();
    assert!((report.average_recall - frac[0] / frac[1]).abs() < 1e-12);
    assert!(
        (report.average_recall - def["top_k_1_average_recall"].as_f64().unwrap()).abs() < 1e-12
    );
    // Supports hold no prefix pairs, so k* is the support size.
    for (m, n) in report.per_node.iter().zip(&nodes) {
        assert_eq!(m.k_star, n.support.len());
    }

    let pairs = pair_records(&nodes, &records).unwrap();
    let (prepared, _) = prepare_nodes(&pairs).unwrap();
    let points = scatter_points(&prepared);
    assert_eq!(points.len(), 152);
    let r = entropy_k_star_correlation(&points).unwrap();
    assert!(
        r > 0.5,
        "entropy and k* should correlate on count-ratio records, got {r}"
    );
}

#[test]
fn smoothed_export_calibrates_top_k() {
    let trie = common::fixture_trie();
    let nodes = select_evaluation_nodes(&trie, &SelectionConfig::default())
        .unwrap()
        .nodes;
    let records: Vec<DistributionRecord> =
        toy_lm_export(&trie, &nodes, &ToyLmConfig { smoothing: 0.01 }).unwrap();
    let target = common::expected()["default_selection"]["top_k_4_average_risk"]
        .as_f64()
        .unwrap();

    let report = evaluate(
        &nodes,
        &records,
        &SamplerConfig::new(Method::TopK, 4.0).unwrap(),
    )
    .unwrap();
    assert!((report.average_risk - target).abs() < 1e-12);

    let spec = CalibrationSpec::new(Method::TopK, target);
    let result = calibrate(&spec, &nodes, &records).unwrap();
    assert!(result.feasible);
    assert_eq!(result.theta, 4.0);
    assert!((result.achieved_risk - target).abs() <= spec.tolerance);
    assert_eq!(result.report.theta, 4.0);
}

#[test]
fn calibration_hits_top_p_floor() {
    let trie = common::fixture_trie();
    let nodes = select_evaluation_nodes(&trie, &SelectionConfig::default())
        .unwrap()
        .nodes;
    let records: Vec<DistributionRecord> =
        toy_lm_export(&trie, &nodes, &ToyLmConfig { smoothing: 0.01 }).unwrap();
    let floor = evaluate(
        &nodes,
        &records,
        &SamplerConfig::new(Method::TopP, 0.01).unwrap(),
    )
    .unwrap()
    .average_risk;
    let mut spec = CalibrationSpec::new(Method::TopP, floor);
    spec.tolerance = 0.0;
    spec.grid_points = 200;
    let result = calibrate(&spec, &nodes, &records).unwrap();
    assert!(result.feasible);
    assert_eq!(result.theta, 0.01);
    assert_eq!(result.refinement_depth, 0);
}

#[test]
fn unreachable_target_reports_nearest() {
    let trie = common::fixture_trie();
    let nodes = select_evaluation_nodes(&trie, &SelectionConfig::default())
        .unwrap()
        .nodes;
    let records: Vec<DistributionRecord> =
        toy_lm_export(&trie, &nodes, &ToyLmConfig { smoothing: 0.01 }).unwrap();
    let mut spec = CalibrationSpec::new(Method::TopP, 1e6);
    spec.grid_points = 50;
    let result = calibrate(&spec, &nodes, &records).unwrap();
    assert!(!result.feasible);
    assert!(result.bracket.is_none());
    assert!(result.achieved_risk < 1e6);
}
