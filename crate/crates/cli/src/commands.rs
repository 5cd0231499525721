use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cptrie_core::calibrate::{calibrate_prepared, CalibrationSpec};
use cptrie_core::config::ConfigMap;
use cptrie_core::dist::{parse_records, toy_lm_export, write_records, ToyLmConfig};
use cptrie_core::ingest::{
    ingest_document, DocumentIngest, IngestConfig, IngestError, IngestStats, WordList,
};
use cptrie_core::metrics::{
    entropy_k_star_correlation, evaluate_prepared, pair_records, prepare_nodes, scatter_points,
    write_scatter_csv, ExcludedNode, PreparedNode,
};
use cptrie_core::report::{parse_rows, render, sort_rows, Format, ReportRow};
use cptrie_core::samplers::{Method, SamplerConfig};
use cptrie_core::trie::{
    parse_nodes, select_evaluation_nodes, write_nodes, EvaluationNode, SelectionConfig, TrieNode,
    TrieStats,
};
use cptrie_core::DistributionRecord;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use walkdir::WalkDir;

use crate::manifest::Recorder;
use crate::{
    BuildTrieArgs, CalibrateArgs, EvalInputs, EvaluateArgs, ExportToyArgs, ReportArgs,
    SelectNodesArgs, StatsArgs,
};

/// No sentence survived ingestion.
#[derive(Debug, thiserror::Error)]
#[error("corpus produced no accepted sentences ({0} sentences seen)")]
pub struct EmptyCorpus(pub usize);

/// The exported distributions cannot support the protocol for some nodes.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ProtocolFailure(pub String);

/// Bad flag values that clap cannot check on its own.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn create(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

fn load_trie(rec: &mut Recorder, path: &Path) -> Result<TrieNode> {
    let text = rec.read(path)?;
    TrieNode::from_json(&text).with_context(|| format!("loading trie {}", path.display()))
}

fn load_nodes(rec: &mut Recorder, path: &Path) -> Result<Vec<EvaluationNode>> {
    let text = rec.read(path)?;
    parse_nodes(&text).with_context(|| format!("loading nodes {}", path.display()))
}

fn load_records(rec: &mut Recorder, path: &Path) -> Result<Vec<DistributionRecord>> {
    let text = rec.read(path)?;
    parse_records(&text).with_context(|| format!("loading distributions {}", path.display()))
}

/// Expands directories into their files, sorted by path.
fn corpus_files(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut found = Vec::new();
            for entry in WalkDir::new(input).sort_by_file_name() {
                let entry = entry.with_context(|| format!("walking {}", input.display()))?;
                if entry.file_type().is_file() {
                    found.push(entry.into_path());
                }
            }
            files.extend(found);
        } else {
            files.push(input.clone());
        }
    }
    Ok(files)
}

#[derive(Debug, Serialize)]
struct BuildStats {
    ingest: IngestStats,
    trie: TrieStats,
}

pub fn build_trie(args: &BuildTrieArgs) -> Result<()> {
    let mut rec = Recorder::start("build-trie");
    let wordlist_text = rec.read(&args.wordlist)?;
    let wordlist = WordList::from_words(wordlist_text.lines()).map_err(|err| match err {
        IngestError::EmptyWordList(_) => {
            IngestError::EmptyWordList(args.wordlist.display().to_string())
        }
        other => other,
    })?;
    let (ingest_cfg, config_text) = match &args.config {
        Some(path) => {
            let text = rec.read(path)?;
            let map =
                ConfigMap::parse(&text).with_context(|| format!("parsing {}", path.display()))?;
            let base = path.parent().unwrap_or(Path::new("."));
            (IngestConfig::from_config(&map, base)?, Some(text))
        }
        None => (IngestConfig::default(), None),
    };

    let files = corpus_files(&args.input)?;
    if files.is_empty() {
        bail!(EmptyCorpus(0));
    }
    let mut documents: Vec<(String, String)> = Vec::new();
    for file in &files {
        let text = rec.read(file)?;
        if args.lines {
            documents.extend(
                text.lines()
                    .enumerate()
                    .filter(|(_, line)| !line.trim().is_empty())
                    .map(|(i, line)| (format!("{}:{}", file.display(), i + 1), line.to_string())),
            );
        } else {
            documents.push((file.display().to_string(), text));
        }
    }
    let ingested: Vec<DocumentIngest> = documents
        .par_iter()
        .map(|(id, text)| ingest_document(text, id, &ingest_cfg, &wordlist))
        .collect();
    let mut trie = TrieNode::new();
    let mut stats = IngestStats::default();
    for doc in &ingested {
        for sentence in &doc.sentences {
            trie.insert_sentence(sentence);
        }
        stats += doc.stats;
    }
    if stats.accepted == 0 {
        bail!(EmptyCorpus(stats.total));
    }
    for (reason, count) in [
        ("unknown words", stats.unknown_word),
        ("headings", stats.heading),
        ("digits", stats.digit),
    ] {
        if count > 0 {
            rec.warn(format!("rejected {count} sentences for {reason}"));
        }
    }

    let mut out = create(&args.out)?;
    trie.write_json(&mut out, args.pretty)?;
    out.flush()?;

    let summary = BuildStats {
        ingest: stats,
        trie: trie.stats(Some(documents.len() as u64)),
    };
    println!("{}", serde_json::to_string_pretty(&summary)?);
    if let Some(path) = &args.stats {
        write_json(path, &summary)?;
    }
    rec.finish(
        &args.out,
        json!({
            "lines": args.lines,
            "pretty": args.pretty,
            "heading_max_units": ingest_cfg.heading_max_units,
            "config_file": config_text,
        }),
    )
}

pub fn stats(args: &StatsArgs) -> Result<()> {
    let mut rec = Recorder::start("stats");
    let trie = load_trie(&mut rec, &args.trie)?;
    println!("{}", serde_json::to_string_pretty(&trie.stats(None))?);
    Ok(())
}

pub fn select_nodes(args: &SelectNodesArgs) -> Result<()> {
    let mut rec = Recorder::start("select-nodes");
    if args.roots == 0 {
        bail!(UsageError("--roots must be at least 1".into()));
    }
    if args.max_depth == 0 {
        bail!(UsageError("--max-depth must be at least 1".into()));
    }
    let trie = load_trie(&mut rec, &args.trie)?;
    let cfg = SelectionConfig {
        roots: args.roots,
        children: args.children,
        max_depth: args.max_depth,
    };
    let selection = select_evaluation_nodes(&trie, &cfg)?;
    for warning in selection.warnings {
        rec.warn(warning);
    }
    let mut out = create(&args.out)?;
    write_nodes(&mut out, &selection.nodes)?;
    out.flush()?;
    log::info!("selected {} nodes", selection.nodes.len());
    rec.finish(
        &args.out,
        json!({ "roots": args.roots, "children": args.children, "max_depth": args.max_depth }),
    )
}

pub fn export_toy(args: &ExportToyArgs) -> Result<()> {
    let mut rec = Recorder::start("export-toy");
    let trie = load_trie(&mut rec, &args.trie)?;
    let nodes = load_nodes(&mut rec, &args.nodes)?;
    let cfg = ToyLmConfig {
        smoothing: args.smoothing,
    };
    let records: Vec<DistributionRecord> = toy_lm_export(&trie, &nodes, &cfg)?;
    let mut out = create(&args.out)?;
    write_records(&mut out, &records)?;
    out.flush()?;
    rec.finish(&args.out, json!({ "smoothing": args.smoothing }))
}

struct Loaded {
    nodes: Vec<EvaluationNode>,
    records: Vec<DistributionRecord>,
}

fn load_eval_inputs(rec: &mut Recorder, inputs: &EvalInputs) -> Result<Loaded> {
    let trie = load_trie(rec, &inputs.trie)?;
    let nodes = load_nodes(rec, &inputs.nodes)?;
    for node in &nodes {
        node.verify(&trie)?;
    }
    let records = load_records(rec, &inputs.dists)?;
    Ok(Loaded { nodes, records })
}

fn check_exclusions(rec: &mut Recorder, excluded: &[ExcludedNode], strict: bool) -> Result<()> {
    if excluded.is_empty() {
        return Ok(());
    }
    let ids: Vec<&str> = excluded.iter().map(|e| e.prefix_id.as_str()).collect();
    let message = format!(
        "{} nodes excluded because their support is not covered by the exported tokens: {ids:?}",
        excluded.len()
    );
    if strict {
        bail!(ProtocolFailure(message));
    }
    rec.warn(message);
    Ok(())
}

fn prepare<'r>(
    rec: &mut Recorder,
    loaded: &'r Loaded,
    strict: bool,
) -> Result<(Vec<PreparedNode<'r, f64>>, Vec<ExcludedNode>)> {
    let pairs = pair_records(&loaded.nodes, &loaded.records)?;
    let (prepared, excluded) = prepare_nodes(&pairs)?;
    check_exclusions(rec, &excluded, strict)?;
    Ok((prepared, excluded))
}

pub fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let mut rec = Recorder::start("evaluate");
    let cfg = SamplerConfig::new(args.method, args.param).map_err(|e| UsageError(e.to_string()))?;
    let loaded = load_eval_inputs(&mut rec, &args.inputs)?;
    let (prepared, excluded) = prepare(&mut rec, &loaded, args.strict)?;
    let report = evaluate_prepared(&prepared, &cfg, excluded)?;
    if !report.degenerate_fallbacks.is_empty() {
        rec.warn(format!(
            "{} nodes fell back to their full listed size after a degenerate Zipf fit",
            report.degenerate_fallbacks.len()
        ));
    }
    write_json(&args.out, &report)?;
    if let Some(path) = &args.scatter {
        let points = scatter_points(&prepared);
        let out = create(path)?;
        write_scatter_csv(out, &points)?;
        match entropy_k_star_correlation(&points) {
            Ok(r) => log::info!(
                "Pearson r(entropy, k*) = {r:.4} over {} nodes",
                points.len()
            ),
            Err(err) => rec.warn(format!("no entropy/k* correlation: {err}")),
        }
    }
    println!(
        "{} {}: avg_risk {:.6} RSE {:.6} AR {:.6} over {} nodes",
        report.method,
        report.theta,
        report.average_risk,
        report.rse,
        report.average_recall,
        report.n_nodes
    );
    rec.finish(
        &args.out,
        json!({ "method": args.method, "param": args.param, "strict": args.strict }),
    )
}

fn parse_range(text: &str) -> Result<(f64, f64)> {
    let parsed = text
        .split_once(',')
        .and_then(|(lo, hi)| Some((lo.trim().parse().ok()?, hi.trim().parse().ok()?)));
    match parsed {
        Some(range) => Ok(range),
        None => bail!(UsageError(format!("--range expects lo,hi, got {text:?}"))),
    }
}

pub fn calibrate(args: &CalibrateArgs) -> Result<()> {
    let mut rec = Recorder::start("calibrate");
    let mut spec = CalibrationSpec::new(args.method, args.target_risk);
    spec.tolerance = args.tolerance;
    spec.grid_points = args.grid;
    spec.max_refinements = args.max_refinements;
    if let Some(range) = &args.range {
        spec.range = parse_range(range)?;
    }
    spec.validate().map_err(|e| UsageError(e.to_string()))?;
    let loaded = load_eval_inputs(&mut rec, &args.inputs)?;
    let (prepared, excluded) = prepare(&mut rec, &loaded, args.strict)?;
    let result = calibrate_prepared(&spec, &prepared, excluded)?;
    if result.unachievable_probes > 0 {
        rec.warn(format!(
            "{} probes overflowed the exported ranks; re-export with more tokens to search that region",
            result.unachievable_probes
        ));
    }
    if !result.feasible {
        rec.warn(format!(
            "no parameter within {} of target risk {}; nearest {} gives {}",
            spec.tolerance, spec.target_risk, result.theta, result.achieved_risk
        ));
    }
    write_json(&args.out, &result)?;
    println!(
        "{} {}: avg_risk {:.6} RSE {:.6} AR {:.6} ({}, {} refinements)",
        result.method,
        result.theta,
        result.achieved_risk,
        result.achieved_rse,
        result.achieved_ar,
        if result.feasible {
            "feasible"
        } else {
            "infeasible"
        },
        result.refinement_depth
    );
    rec.finish(&args.out, serde_json::to_value(&spec)?)
}

pub fn report(args: &ReportArgs) -> Result<()> {
    let mut rec = Recorder::start("report");
    let mut rows: Vec<ReportRow<f64>> = Vec::new();
    for path in &args.input {
        let text = rec.read(path)?;
        rows.extend(
            parse_rows(&text).with_context(|| format!("reading report {}", path.display()))?,
        );
    }
    sort_rows(&mut rows);
    let text = render(&rows, args.format)?;
    match &args.out {
        Some(path) => {
            fs::write(path, &text).with_context(|| format!("writing {}", path.display()))?;
            rec.finish(path, json!({ "format": args.format }))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn method_parser(s: &str) -> Result<Method, String> {
    s.parse::<Method>().map_err(|e| e.to_string())
}

pub fn format_parser(s: &str) -> Result<Format, String> {
    s.parse::<Format>()
}
