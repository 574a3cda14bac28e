use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use termine::apply::{label_corpus, DictionaryPriority, LabelRecord};
use termine::corpus::{format_annotations, format_dual_bio, split_train_validation, to_conllu};
use termine::eval::evaluate_rules;
use termine::mining::{filter_candidates, generate_candidates, Candidate, WildcardSlots};
use termine::synth::{planted_corpus, PlantedSpec, ReviewSpec, ReviewWorld};
use termine::tagger::{EmbeddingTable, TaggerConfig, TaggerModel, Topology};
use termine::training::{evaluate_gold, evaluate_weak, train, EpochRecord, Method, RunManifest, TrainConfig, TrainData};
use termine::{ApplyOptions, EvalReport, MiningConfig, ParsedSentence, RuleSet, TermKind, WeakLabeledSentence};

use crate::error::{CliError, Code, Context, Result};
use crate::io::{load_labeled, load_parsed, load_rules, load_vocabulary, read, Provenance, Staged};

pub fn parse_kind(s: &str) -> std::result::Result<TermKind, String> {
    s.parse()
}

pub fn parse_wildcard(s: &str) -> std::result::Result<WildcardSlots, String> {
    match s {
        "any" => Ok(WildcardSlots::Any),
        "governor-only" => Ok(WildcardSlots::GovernorOnly),
        _ => Err(format!("unknown wildcard placement {s:?} (expected any or governor-only)")),
    }
}

pub fn parse_priority(s: &str) -> std::result::Result<DictionaryPriority, String> {
    match s {
        "compete" => Ok(DictionaryPriority::Compete),
        "first" => Ok(DictionaryPriority::First),
        _ => Err(format!("unknown dictionary priority {s:?} (expected compete or first)")),
    }
}

fn note(msg: impl AsRef<str>) {
    eprintln!("{}", msg.as_ref());
}

// ---------------------------------------------------------------- mine

#[derive(Debug, Args, Serialize)]
pub struct MineArgs {
    /// Training sentences (CoNLL-U).
    #[arg(long)]
    pub train: PathBuf,
    /// Gold spans for --train (JSON lines).
    #[arg(long)]
    pub ann: PathBuf,
    /// Separate validation sentences; otherwise a split of --train is used.
    #[arg(long, requires = "val_ann")]
    pub val: Option<PathBuf>,
    #[arg(long)]
    pub val_ann: Option<PathBuf>,
    /// Fraction of --train held out for validation. 0 validates on the
    /// training sentences themselves.
    #[arg(long, default_value_t = 0.2)]
    pub val_frac: f64,
    #[arg(long, value_parser = parse_kind)]
    pub kind: TermKind,
    /// Candidates must occur more than this many times.
    #[arg(short = 'T', long = "threshold", default_value_t = 10)]
    pub threshold: usize,
    /// Minimum validation precision.
    #[arg(short = 'p', long = "precision", default_value_t = 0.6)]
    pub precision: f64,
    /// Opinion word vocabulary, one word per line.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub dictionary_min_count: usize,
    #[arg(long, default_value = "any", value_parser = parse_wildcard)]
    pub wildcard_slots: WildcardSlots,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write every frequent candidate as `support<TAB>pattern`.
    #[arg(long)]
    #[serde(skip)]
    pub candidates_out: Option<PathBuf>,
    #[arg(short = 'o', long = "out")]
    #[serde(skip)]
    pub out: PathBuf,
}

pub struct Mined {
    pub rules: RuleSet,
    pub candidates: Vec<Candidate>,
}

pub fn mine_kind(
    train: &[ParsedSentence],
    validation: &[ParsedSentence],
    config: &MiningConfig,
    kind: TermKind,
) -> Result<Mined> {
    let candidates = generate_candidates(train, config, kind).code(Code::Mining)?;
    let rules = filter_candidates(&candidates, validation, train, config, kind).code(Code::Mining)?;
    Ok(Mined { rules, candidates })
}

fn split_or_reuse(
    sentences: Vec<ParsedSentence>,
    fraction: f64,
    seed: u64,
) -> Result<(Vec<ParsedSentence>, Vec<ParsedSentence>)> {
    if fraction == 0.0 {
        return Ok((sentences.clone(), sentences));
    }
    split_train_validation(&sentences, fraction, seed).code(Code::Config)
}

pub fn mine(args: &MineArgs) -> Result<()> {
    let sentences = load_parsed(&args.train, Some(&args.ann))?;
    let (train, validation) = match (&args.val, &args.val_ann) {
        (Some(v), Some(a)) => (sentences, load_parsed(v, Some(a))?),
        _ => split_or_reuse(sentences, args.val_frac, args.seed)?,
    };
    let config = MiningConfig {
        frequency_threshold: args.threshold,
        precision_threshold: args.precision,
        dictionary_min_count: args.dictionary_min_count,
        wildcard_slots: args.wildcard_slots,
        ..MiningConfig::default()
    }
    .with_vocabulary(load_vocabulary(args.vocab.as_deref())?);
    let mined = mine_kind(&train, &validation, &config, args.kind)?;
    let prov = Provenance::new("mine", args);
    let mut staged = Staged::default();
    staged.add(&args.out, &prov.attach(&mined.rules.to_json(), true))?;
    if let Some(path) = &args.candidates_out {
        let mut text = prov.comment();
        for c in &mined.candidates {
            text.push_str(&format!("{}\t{}\n", c.support, c.pattern));
        }
        staged.add(path, &text)?;
    }
    staged.commit()?;
    note(format!(
        "mined {} {} rules from {} candidates ({} train / {} validation sentences)",
        mined.rules.rules.len(),
        args.kind,
        mined.candidates.len(),
        train.len(),
        validation.len()
    ));
    Ok(())
}

// ---------------------------------------------------------------- label

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum LabelFormat {
    /// Three-column BIO.
    Bio,
    /// One JSON record per sentence, with rule provenance.
    Jsonl,
}

#[derive(Debug, Args, Serialize)]
pub struct LabelArgs {
    #[arg(long)]
    pub rules_aspect: PathBuf,
    #[arg(long)]
    pub rules_opinion: PathBuf,
    /// Unlabeled parsed sentences (CoNLL-U).
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "bio")]
    pub format: LabelFormat,
    /// Output does not depend on this, so it is left out of the config hash.
    #[arg(long, default_value_t = 1)]
    #[serde(skip)]
    pub workers: usize,
    #[arg(long, default_value = "compete", value_parser = parse_priority)]
    pub dictionary_priority: DictionaryPriority,
}

pub fn render_jsonl(records: &[LabelRecord], prov: &Provenance) -> String {
    let mut out = serde_json::to_string(&serde_json::json!({ "provenance": prov })).expect("serializes");
    out.push('\n');
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn label(args: &LabelArgs) -> Result<()> {
    let aspect = load_rules(&args.rules_aspect, TermKind::Aspect)?;
    let opinion = load_rules(&args.rules_opinion, TermKind::Opinion)?;
    let corpus = load_parsed(&args.input, None)?;
    let options = ApplyOptions {
        dictionary_priority: args.dictionary_priority,
    };
    let labeled = label_corpus(&corpus, &aspect, &opinion, options, args.workers.max(1));
    let prov = Provenance::new("label", args);
    let text = match args.format {
        LabelFormat::Bio => {
            let sentences: Vec<WeakLabeledSentence> = labeled.iter().map(|x| x.0.clone()).collect();
            prov.comment() + &format_dual_bio(&sentences)
        }
        LabelFormat::Jsonl => {
            let records: Vec<LabelRecord> = labeled.iter().map(|x| x.1.clone()).collect();
            render_jsonl(&records, &prov)
        }
    };
    let mut staged = Staged::default();
    staged.add(&args.out, &text)?;
    staged.commit()?;
    let spans: usize = labeled
        .iter()
        .map(|x| x.1.aspect_spans.len() + x.1.opinion_spans.len())
        .sum();
    note(format!("labeled {} sentences, {spans} spans", labeled.len()));
    Ok(())
}

// ---------------------------------------------------------------- train

#[derive(Debug, Clone, Serialize, Args)]
pub struct ModelOptions {
    #[arg(long, default_value = "double", value_parser = |s: &str| s.parse::<Topology>())]
    pub topology: Topology,
    #[arg(long, default_value_t = 100)]
    pub hidden: usize,
    /// Word vectors in text format; random vectors are drawn when absent.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Dimension of random vectors when --embeddings is absent.
    #[arg(long, default_value_t = 50)]
    pub embedding_dim: usize,
    #[arg(long)]
    pub tune_embeddings: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub model: ModelOptions,
    #[arg(long, default_value = "pre", value_parser = |s: &str| s.parse::<Method>())]
    pub method: Method,
    /// Gold training data: three-column BIO, or CoNLL-U with --gold-ann.
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long)]
    pub gold_ann: Option<PathBuf>,
    /// Gold validation data; otherwise a split of --gold.
    #[arg(long)]
    pub gold_val: Option<PathBuf>,
    #[arg(long)]
    pub gold_val_ann: Option<PathBuf>,
    #[arg(long, default_value_t = 0.2)]
    pub val_frac: f64,
    /// Rule-labeled data in three-column BIO.
    #[arg(long)]
    pub weak: Option<PathBuf>,
    /// Fraction of --weak held out for phase-1 validation.
    #[arg(long, default_value_t = 0.1)]
    pub weak_val_frac: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 100)]
    pub max_epochs: usize,
    #[arg(long, default_value_t = 5)]
    pub patience: usize,
    #[arg(long)]
    pub pretrain_max_epochs: Option<usize>,
    #[arg(long)]
    pub weak_epoch_size: Option<usize>,
    #[arg(long, default_value_t = 0.5)]
    pub dropout: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Checkpoint path. The per-epoch log and the run manifest are written
    /// next to it unless given explicitly.
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub manifest: Option<PathBuf>,
}

pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

pub fn build_embeddings(
    options: &ModelOptions,
    corpora: &[&[WeakLabeledSentence]],
    seed: u64,
) -> Result<EmbeddingTable> {
    match &options.embeddings {
        Some(path) => EmbeddingTable::parse(&read(path)?).code_at(Code::Parse, path),
        None => {
            let words: BTreeSet<String> = corpora
                .iter()
                .flat_map(|c| c.iter())
                .flat_map(|s| s.words.iter().map(|w| w.to_lowercase()))
                .collect();
            let words: Vec<String> = words.into_iter().collect();
            EmbeddingTable::random(&words, options.embedding_dim, seed).code(Code::Config)
        }
    }
}

pub struct TrainedFiles {
    pub model: TaggerModel,
    pub checkpoint: String,
    pub log: String,
    pub manifest: String,
}

/// Runs training and renders its three outputs. The manifest omits wall
/// time so repeated runs produce identical files.
pub fn run_training(
    options: &ModelOptions,
    config: &TrainConfig,
    dropout: f64,
    data: TrainData<'_>,
    prov: &Provenance,
) -> Result<TrainedFiles> {
    let embeddings = build_embeddings(options, &[data.gold, data.weak], config.seed)?;
    let tagger = TaggerConfig {
        topology: options.topology,
        hidden: options.hidden,
        dropout,
        tune_embeddings: options.tune_embeddings,
        seed: config.seed,
    };
    let outcome = train(TaggerModel::new(&tagger, embeddings), data, config, &mut ()).code(Code::Training)?;
    note(format!("trained in {:.1}s", outcome.manifest.wall_time_secs));
    Ok(TrainedFiles {
        checkpoint: prov.attach(&outcome.model.to_json(), false),
        log: render_log(&outcome.manifest.epochs, prov),
        manifest: render_manifest(&outcome.manifest, prov),
        model: outcome.model,
    })
}

fn render_log(epochs: &[EpochRecord], prov: &Provenance) -> String {
    let mut out = prov.comment();
    out.push_str("phase\t");
    out.push_str(EpochRecord::TSV_HEADER);
    out.push('\n');
    for r in epochs {
        out.push_str(&format!("{}\t{}\n", r.phase, r.tsv()));
    }
    out
}

fn render_manifest(manifest: &RunManifest, prov: &Provenance) -> String {
    prov.attach(&manifest.canonical_json(), true)
}

fn gold_split(
    gold: Vec<WeakLabeledSentence>,
    validation: Option<Vec<WeakLabeledSentence>>,
    fraction: f64,
    seed: u64,
) -> Result<(Vec<WeakLabeledSentence>, Vec<WeakLabeledSentence>)> {
    match validation {
        Some(v) => Ok((gold, v)),
        None => split_train_validation(&gold, fraction, seed).code(Code::Config),
    }
}

pub fn weak_split(
    weak: Vec<WeakLabeledSentence>,
    fraction: f64,
    seed: u64,
) -> Result<(Vec<WeakLabeledSentence>, Vec<WeakLabeledSentence>)> {
    if weak.is_empty() {
        return Ok((Vec::new(), Vec::new()));
    }
    split_train_validation(&weak, fraction, seed).code(Code::Config)
}

pub fn train_command(args: &TrainArgs) -> Result<()> {
    let gold = load_labeled(&args.gold, args.gold_ann.as_deref())?;
    let gold_val = match &args.gold_val {
        Some(p) => Some(load_labeled(p, args.gold_val_ann.as_deref())?),
        None => None,
    };
    let (gold, gold_val) = gold_split(gold, gold_val, args.val_frac, args.seed)?;
    let weak = match &args.weak {
        Some(p) => load_labeled(p, None)?,
        None => Vec::new(),
    };
    let (weak, weak_val) = weak_split(weak, args.weak_val_frac, args.seed)?;
    let config = TrainConfig {
        method: args.method,
        batch_size: args.batch_size,
        learning_rate: args.lr,
        max_epochs: args.max_epochs,
        patience: args.patience,
        pretrain_max_epochs: args.pretrain_max_epochs,
        weak_epoch_size: args.weak_epoch_size,
        seed: args.seed,
        dropout: args.dropout,
        ..TrainConfig::default()
    };
    config.validate().code(Code::Config)?;
    let data = TrainData {
        gold: &gold,
        weak: &weak,
        gold_validation: &gold_val,
        weak_validation: &weak_val,
    };
    let prov = Provenance::new("train", args);
    let files = run_training(&args.model, &config, args.dropout, data, &prov)?;
    let log = args.log.clone().unwrap_or_else(|| sibling(&args.out, ".epochs.tsv"));
    let manifest = args.manifest.clone().unwrap_or_else(|| sibling(&args.out, ".manifest.json"));
    let mut staged = Staged::default();
    staged.add(&args.out, &files.checkpoint)?;
    staged.add(&log, &files.log)?;
    staged.add(&manifest, &files.manifest)?;
    staged.commit()
}

// ---------------------------------------------------------------- eval

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Heads {
    /// The head trained on gold labels.
    Joint,
    /// The two heads trained on rule output.
    Separate,
}

#[derive(Debug, Args, Serialize)]
#[command(group(clap::ArgGroup::new("system").required(true).args(["model", "rules_aspect"])))]
pub struct EvalArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, requires = "rules_opinion")]
    pub rules_aspect: Option<PathBuf>,
    #[arg(long, requires = "rules_aspect")]
    pub rules_opinion: Option<PathBuf>,
    /// Test data: CoNLL-U with --test-ann, or three-column BIO (model only).
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub test_ann: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "joint")]
    pub heads: Heads,
    #[arg(long, default_value = "compete", value_parser = parse_priority)]
    pub dictionary_priority: DictionaryPriority,
    /// JSON report path; standard output when absent.
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

pub fn report_json(report: &EvalReport, prov: &Provenance) -> String {
    prov.attach(&serde_json::to_string(report).expect("report serializes"), true)
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let report = if let Some(model_path) = &args.model {
        let model = TaggerModel::from_json(&read(model_path)?).code_at(Code::Parse, model_path)?;
        let test = load_labeled(&args.test, args.test_ann.as_deref())?;
        match args.heads {
            Heads::Joint => evaluate_gold(&model, &test),
            Heads::Separate => evaluate_weak(&model, &test),
        }
        .code(Code::Training)?
    } else {
        let (Some(a), Some(o)) = (&args.rules_aspect, &args.rules_opinion) else {
            return Err(CliError::new(Code::Usage, "--rules-aspect and --rules-opinion go together"));
        };
        let Some(ann) = &args.test_ann else {
            return Err(CliError::new(Code::Usage, "rule evaluation needs CoNLL-U --test with --test-ann"));
        };
        let options = ApplyOptions {
            dictionary_priority: args.dictionary_priority,
        };
        let test = load_parsed(&args.test, Some(ann))?;
        evaluate_rules(&load_rules(a, TermKind::Aspect)?, &load_rules(o, TermKind::Opinion)?, &test, options)
    };
    let json = report_json(&report, &Provenance::new("eval", args));
    match &args.out {
        Some(path) => {
            let mut staged = Staged::default();
            staged.add(path, &json)?;
            staged.commit()?;
        }
        None => print!("{json}"),
    }
    eprint!("{}", report.table());
    Ok(())
}

// ---------------------------------------------------------------- synth

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "lowercase")]
pub enum SynthSpec {
    /// Corpus with planted patterns for mining tests.
    Planted(PlantedSpec),
    /// Review-like domain with gold, test and unlabeled parts.
    Review(ReviewSpec),
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    /// JSON object with `"generator": "planted"` or `"review"` plus that
    /// generator's fields; missing fields take defaults.
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

fn stage_corpus(staged: &mut Staged, dir: &Path, name: &str, sentences: &[ParsedSentence]) -> Result<()> {
    staged.add(&dir.join(format!("{name}.conllu")), &to_conllu(sentences))?;
    staged.add(&dir.join(format!("{name}.jsonl")), &format_annotations(sentences))
}

fn word_list(words: &BTreeSet<String>) -> String {
    words.iter().map(|w| format!("{w}\n")).collect()
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let spec: SynthSpec = serde_json::from_str(&read(&args.spec)?).code_at(Code::Config, &args.spec)?;
    let prov = Provenance::new("synth", &spec);
    let dir = &args.out;
    let mut staged = Staged::default();
    match &spec {
        SynthSpec::Planted(p) => {
            let corpus = planted_corpus(p).code(Code::Config)?;
            stage_corpus(&mut staged, dir, "train", &corpus.train)?;
            stage_corpus(&mut staged, dir, "validation", &corpus.validation)?;
            stage_corpus(&mut staged, dir, "test", &corpus.test)?;
            staged.add(&dir.join("opinion_vocabulary.txt"), &word_list(&corpus.opinion_vocabulary))?;
            let listing = |patterns: &[termine::RulePattern]| -> String {
                prov.comment() + &patterns.iter().map(|p| format!("{p}\n")).collect::<String>()
            };
            staged.add(&dir.join("planted.txt"), &listing(&corpus.planted))?;
            staged.add(&dir.join("noise.txt"), &listing(&corpus.noise))?;
        }
        SynthSpec::Review(r) => {
            let world = ReviewWorld::generate(r);
            stage_corpus(&mut staged, dir, "gold_train", &world.gold_train)?;
            stage_corpus(&mut staged, dir, "gold_validation", &world.gold_validation)?;
            stage_corpus(&mut staged, dir, "test", &world.test)?;
            // Spans of the unlabeled part measure rule precision only.
            stage_corpus(&mut staged, dir, "unlabeled", &world.unlabeled)?;
            staged.add(&dir.join("opinion_vocabulary.txt"), &word_list(&world.opinion_vocabulary))?;
            staged.add(&dir.join("embeddings.txt"), &world.embeddings.to_text())?;
        }
    }
    let spec_json = serde_json::to_string(&spec).expect("spec serializes");
    staged.add(&dir.join("spec.json"), &prov.attach(&spec_json, true))?;
    staged.commit()?;
    note(format!("wrote synthetic corpus to {}", dir.display()));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sibling_paths() {
        assert_eq!(sibling(Path::new("out/model.ckpt"), ".manifest.json"), PathBuf::from("out/model.manifest.json"));
        assert_eq!(sibling(Path::new("m"), ".epochs.tsv"), PathBuf::from("m.epochs.tsv"));
    }

    #[test]
    fn synth_spec_defaults() {
        let s: SynthSpec = serde_json::from_str(r#"{"generator": "planted", "seed": 4}"#).unwrap();
        match s {
            SynthSpec::Planted(p) => {
                assert_eq!(p.seed, 4);
                assert_eq!(p.support, PlantedSpec::default().support);
            }
            _ => panic!("wrong generator"),
        }
        assert!(serde_json::from_str::<SynthSpec>(r#"{"generator": "other"}"#).is_err());
    }
}
