//! Browser bindings. Each export takes and returns plain strings; the
//! functions behind them are ordinary Rust and tested natively.

use ndarray::Array2;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use termine::apply::label_sentence;
use termine::corpus::{attach_annotations, format_annotations, format_dual_bio, parse_annotations, parse_conllu, to_conllu};
use termine::mining::{filter_candidates, generate_candidates, parse_vocabulary};
use termine::synth::{ReviewSpec, ReviewWorld};
use termine::tagger::crf;
use termine::{ApplyOptions, MiningConfig, ParsedSentence, RuleSet, TermKind};

/// A small generated review corpus to start from.
pub fn sample(seed: u64) -> Value {
    let world = ReviewWorld::generate(&ReviewSpec {
        seed,
        gold_train: 40,
        gold_validation: 0,
        test: 0,
        unlabeled: 10,
        embedding_dim: 2,
        ..ReviewSpec::default()
    });
    let vocabulary: Vec<&str> = world.opinion_vocabulary.iter().map(String::as_str).collect();
    json!({
        "conllu": to_conllu(&world.gold_train),
        "annotations": format_annotations(&world.gold_train),
        "unlabeled": to_conllu(&world.unlabeled),
        "vocabulary": vocabulary.join("\n"),
    })
}

fn annotated(conllu: &str, annotations: &str) -> Result<Vec<ParsedSentence>, String> {
    let mut sentences = parse_conllu(conllu).map_err(|e| format!("CoNLL-U: {e}"))?;
    let ann = parse_annotations(annotations).map_err(|e| format!("annotations: {e}"))?;
    attach_annotations(&mut sentences, &ann).map_err(|e| format!("annotations: {e}"))?;
    Ok(sentences)
}

/// Mines aspect and opinion rules, measuring precision on the same
/// sentences they were mined from.
pub fn mine(
    conllu: &str,
    annotations: &str,
    vocabulary: &str,
    threshold: usize,
    precision: f64,
) -> Result<Value, String> {
    let sentences = annotated(conllu, annotations)?;
    if sentences.is_empty() {
        return Err("no sentences".into());
    }
    let config = MiningConfig {
        frequency_threshold: threshold,
        precision_threshold: precision,
        ..MiningConfig::default()
    }
    .with_vocabulary(parse_vocabulary(vocabulary));
    let mut out = serde_json::Map::new();
    for kind in [TermKind::Aspect, TermKind::Opinion] {
        let candidates = generate_candidates(&sentences, &config, kind).map_err(|e| e.to_string())?;
        let rules = filter_candidates(&candidates, &sentences, &sentences, &config, kind).map_err(|e| e.to_string())?;
        let listed: Vec<Value> = candidates
            .iter()
            .map(|c| json!({"support": c.support, "pattern": c.pattern.to_string()}))
            .collect();
        let kept: Vec<Value> = rules
            .rules
            .iter()
            .map(|r| json!({"support": r.support, "precision": r.precision, "pattern": r.pattern.to_string()}))
            .collect();
        out.insert(
            kind.as_str().into(),
            json!({
                "candidates": listed,
                "rules": kept,
                "dictionary": rules.dictionary,
                "ruleset": rules.to_json(),
            }),
        );
    }
    Ok(Value::Object(out))
}

/// Labels parsed sentences with two rule sets as three-column BIO text.
pub fn label(conllu: &str, aspect_rules: &str, opinion_rules: &str) -> Result<String, String> {
    let sentences = parse_conllu(conllu).map_err(|e| format!("CoNLL-U: {e}"))?;
    let aspect = RuleSet::from_json(aspect_rules).map_err(|e| format!("aspect rules: {e}"))?;
    let opinion = RuleSet::from_json(opinion_rules).map_err(|e| format!("opinion rules: {e}"))?;
    let labeled: Vec<_> = sentences
        .iter()
        .enumerate()
        .map(|(i, s)| label_sentence(i, s, &aspect, &opinion, ApplyOptions::default()).0)
        .collect();
    Ok(format_dual_bio(&labeled))
}

/// Whitespace-separated numbers, one row per line. `-inf` is accepted.
fn parse_matrix(text: &str) -> Result<Array2<f64>, String> {
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            l.split_whitespace()
                .map(|x| x.parse::<f64>().map_err(|_| format!("row {}: bad number {x:?}", i + 1)))
                .collect()
        })
        .collect::<Result<_, _>>()?;
    let cols = rows.first().map_or(0, Vec::len);
    if let Some(i) = rows.iter().position(|r| r.len() != cols) {
        return Err(format!("row {} has {} numbers, expected {cols}", i + 1, rows[i].len()));
    }
    Array2::from_shape_vec((rows.len(), cols), rows.concat()).map_err(|e| e.to_string())
}

/// Viterbi path, its score, the log partition and per-step marginals. An
/// empty transition matrix means all zeros.
pub fn decode(emissions: &str, transitions: &str) -> Result<Value, String> {
    let em = parse_matrix(emissions)?;
    let k = em.ncols();
    let trans = if transitions.trim().is_empty() {
        Array2::zeros((k + 2, k + 2))
    } else {
        parse_matrix(transitions)?
    };
    let (path, score) = crf::viterbi(em.view(), trans.view()).map_err(|e| e.to_string())?;
    let log_z = crf::log_partition(em.view(), trans.view()).map_err(|e| e.to_string())?;
    let m = crf::marginals(em.view(), trans.view()).map_err(|e| e.to_string())?;
    let marginals: Vec<Vec<f64>> = m.rows().into_iter().map(|r| r.to_vec()).collect();
    Ok(json!({
        "path": path,
        "score": score,
        "log_partition": log_z,
        "probability": (score - log_z).exp(),
        "marginals": marginals,
    }))
}

#[wasm_bindgen(js_name = sample)]
pub fn sample_js(seed: u32) -> String {
    sample(seed.into()).to_string()
}

#[wasm_bindgen(js_name = mine)]
pub fn mine_js(conllu: &str, annotations: &str, vocabulary: &str, threshold: u32, precision: f64) -> Result<String, String> {
    mine(conllu, annotations, vocabulary, threshold as usize, precision).map(|v| v.to_string())
}

#[wasm_bindgen(js_name = label)]
pub fn label_js(conllu: &str, aspect_rules: &str, opinion_rules: &str) -> Result<String, String> {
    label(conllu, aspect_rules, opinion_rules)
}

#[wasm_bindgen(js_name = decode)]
pub fn decode_js(emissions: &str, transitions: &str) -> Result<String, String> {
    decode(emissions, transitions).map(|v| v.to_string())
}
