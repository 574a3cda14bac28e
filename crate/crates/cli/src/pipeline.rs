//! One-shot run of mine, label, train and eval from a TOML file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use termine::apply::{label_corpus, DictionaryPriority};
use termine::corpus::format_dual_bio;
use termine::eval::evaluate_rules;
use termine::mining::WildcardSlots;
use termine::tagger::Topology;
use termine::training::{evaluate_gold, TrainConfig, TrainData};
use termine::{ApplyOptions, MiningConfig, TermKind, WeakLabeledSentence};

use crate::commands::{mine_kind, run_training, weak_split, ModelOptions};
use crate::error::{CliError, Code, Context, Result};
use crate::io::{load_parsed, load_vocabulary, read, Provenance, Staged};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Seeds every random choice: splits, initialization, dropout, batches.
    pub seed: u64,
    /// Relative paths are resolved against the config file's directory.
    pub out_dir: PathBuf,
    pub data: DataConfig,
    #[serde(default)]
    pub mining: MiningSection,
    #[serde(default)]
    pub weak: WeakSection,
    #[serde(default)]
    pub tagger: TaggerSection,
    /// Optimizer and schedule; its `seed` is replaced by the top-level one.
    #[serde(default)]
    pub train: TrainConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub gold_train: PathBuf,
    pub gold_train_ann: PathBuf,
    pub gold_validation: PathBuf,
    pub gold_validation_ann: PathBuf,
    pub test: PathBuf,
    pub test_ann: PathBuf,
    /// Parsed sentences for rule labeling.
    pub unlabeled: Option<PathBuf>,
    pub opinion_vocabulary: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    #[serde(default = "default_embedding_dim")]
    pub embedding_dim: usize,
}

fn default_embedding_dim() -> usize {
    50
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiningSection {
    pub frequency_threshold: usize,
    pub precision_threshold: f64,
    pub dictionary_min_count: usize,
    pub wildcard_slots: WildcardSlots,
}

impl Default for MiningSection {
    fn default() -> Self {
        let d = MiningConfig::default();
        Self {
            frequency_threshold: d.frequency_threshold,
            precision_threshold: d.precision_threshold,
            dictionary_min_count: d.dictionary_min_count,
            wildcard_slots: d.wildcard_slots,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeakSection {
    /// With this off, no rules are mined and the tagger sees gold data only.
    pub enabled: bool,
    #[serde(skip_serializing)]
    pub workers: usize,
    pub validation_fraction: f64,
    pub dictionary_priority: DictionaryPriority,
}

impl Default for WeakSection {
    fn default() -> Self {
        Self {
            enabled: true,
            workers: 1,
            validation_fraction: 0.1,
            dictionary_priority: DictionaryPriority::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaggerSection {
    pub topology: Topology,
    pub hidden: usize,
    pub tune_embeddings: bool,
}

impl Default for TaggerSection {
    fn default() -> Self {
        Self {
            topology: Topology::Double,
            hidden: 100,
            tune_embeddings: false,
        }
    }
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut config: Self = toml::from_str(text).code(Code::Config)?;
        config.train.seed = config.seed;
        config.train.validate().code(Code::Config)?;
        if config.weak.enabled && config.data.unlabeled.is_none() {
            return Err(CliError::new(Code::Config, "weak stage enabled but data.unlabeled is not set"));
        }
        Ok(config)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out_dir);
        let d = &mut self.data;
        for p in [
            &mut d.gold_train,
            &mut d.gold_train_ann,
            &mut d.gold_validation,
            &mut d.gold_validation_ann,
            &mut d.test,
            &mut d.test_ann,
        ] {
            fix(p);
        }
        for p in [&mut d.unlabeled, &mut d.opinion_vocabulary, &mut d.embeddings].into_iter().flatten() {
            fix(p);
        }
    }
}

fn gold(sentences: &[termine::ParsedSentence], path: &Path) -> Result<Vec<WeakLabeledSentence>> {
    sentences
        .iter()
        .map(WeakLabeledSentence::from_gold)
        .collect::<std::result::Result<_, _>>()
        .code_at(Code::Parse, path)
}

pub fn run(config_path: &Path) -> Result<()> {
    let mut config = PipelineConfig::parse(&read(config_path)?)?;
    let base = config_path.parent().map(Path::to_path_buf).unwrap_or_default();
    config.resolve(&base);
    // Hash the config as written, not its resolved absolute paths.
    let prov = Provenance::new("pipeline", &PipelineConfig::parse(&read(config_path)?)?);
    let d = &config.data;
    let out = &config.out_dir;
    let mut staged = Staged::default();
    let mut report = serde_json::Map::new();

    let gold_train = load_parsed(&d.gold_train, Some(&d.gold_train_ann))?;
    let gold_val = load_parsed(&d.gold_validation, Some(&d.gold_validation_ann))?;
    let test = load_parsed(&d.test, Some(&d.test_ann))?;

    let mut weak = Vec::new();
    if config.weak.enabled {
        let m = &config.mining;
        let mining = MiningConfig {
            frequency_threshold: m.frequency_threshold,
            precision_threshold: m.precision_threshold,
            dictionary_min_count: m.dictionary_min_count,
            wildcard_slots: m.wildcard_slots,
            ..MiningConfig::default()
        }
        .with_vocabulary(load_vocabulary(d.opinion_vocabulary.as_deref())?);
        let aspect = mine_kind(&gold_train, &gold_val, &mining, TermKind::Aspect)?.rules;
        let opinion = mine_kind(&gold_train, &gold_val, &mining, TermKind::Opinion)?.rules;
        eprintln!("mined {} aspect and {} opinion rules", aspect.rules.len(), opinion.rules.len());
        staged.add(&out.join("rules_aspect.json"), &prov.attach(&aspect.to_json(), true))?;
        staged.add(&out.join("rules_opinion.json"), &prov.attach(&opinion.to_json(), true))?;

        let options = ApplyOptions {
            dictionary_priority: config.weak.dictionary_priority,
        };
        let rules_report = evaluate_rules(&aspect, &opinion, &test, options);
        eprint!("rules on test\n{}", rules_report.table());
        report.insert("rules".into(), serde_json::to_value(rules_report).expect("serializes"));

        let unlabeled_path = d.unlabeled.as_deref().expect("checked in parse");
        let unlabeled = load_parsed(unlabeled_path, None)?;
        weak = label_corpus(&unlabeled, &aspect, &opinion, options, config.weak.workers.max(1))
            .into_iter()
            .map(|x| x.0)
            .collect();
        staged.add(&out.join("weak.bio"), &(prov.comment() + &format_dual_bio(&weak)))?;
    }
    let (weak, weak_val) = weak_split(weak, config.weak.validation_fraction, config.seed)?;

    let gold_train = gold(&gold_train, &d.gold_train)?;
    let gold_val = gold(&gold_val, &d.gold_validation)?;
    let test = gold(&test, &d.test)?;
    let model_options = ModelOptions {
        topology: config.tagger.topology,
        hidden: config.tagger.hidden,
        embeddings: d.embeddings.clone(),
        embedding_dim: d.embedding_dim,
        tune_embeddings: config.tagger.tune_embeddings,
    };
    let data = TrainData {
        gold: &gold_train,
        weak: &weak,
        gold_validation: &gold_val,
        weak_validation: &weak_val,
    };
    let files = run_training(&model_options, &config.train, config.train.dropout, data, &prov)?;
    staged.add(&out.join("model.ckpt"), &files.checkpoint)?;
    staged.add(&out.join("model.epochs.tsv"), &files.log)?;
    staged.add(&out.join("model.manifest.json"), &files.manifest)?;

    let model_report = evaluate_gold(&files.model, &test).code(Code::Training)?;
    eprint!("model on test\n{}", model_report.table());
    report.insert("model".into(), serde_json::to_value(model_report).expect("serializes"));
    let report = serde_json::Value::Object(report).to_string();
    staged.add(&out.join("report.json"), &prov.attach(&report, true))?;
    staged.commit()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 3
out_dir = "run"

[data]
gold_train = "g.conllu"
gold_train_ann = "g.jsonl"
gold_validation = "v.conllu"
gold_validation_ann = "v.jsonl"
test = "t.conllu"
test_ann = "t.jsonl"

[weak]
enabled = false

[train]
max_epochs = 7
"#;

    #[test]
    fn defaults_and_seed_override() {
        let c = PipelineConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.train.seed, 3);
        assert_eq!(c.train.max_epochs, 7);
        assert_eq!(c.train.patience, TrainConfig::default().patience);
        assert_eq!(c.mining.frequency_threshold, 10);
        assert_eq!(c.tagger.topology, Topology::Double);
        assert!(!c.weak.enabled);
    }

    #[test]
    fn rejects_bad_configs() {
        let unknown = MINIMAL.replace("[weak]", "[weak]\nbogus = 1");
        assert!(PipelineConfig::parse(&unknown).is_err());
        let needs_unlabeled = MINIMAL.replace("enabled = false", "enabled = true");
        assert_eq!(PipelineConfig::parse(&needs_unlabeled).unwrap_err().code, Code::Config);
        let bad_patience = MINIMAL.replace("max_epochs = 7", "max_epochs = 3");
        assert!(PipelineConfig::parse(&bad_patience).is_err());
        assert!(PipelineConfig::parse(&MINIMAL.replace("seed = 3\n", "")).is_err());
    }

    #[test]
    fn relative_paths_follow_the_config() {
        let mut c = PipelineConfig::parse(MINIMAL).unwrap();
        c.resolve(Path::new("/cfg"));
        assert_eq!(c.out_dir, PathBuf::from("/cfg/run"));
        assert_eq!(c.data.test_ann, PathBuf::from("/cfg/t.jsonl"));
        assert_eq!(c.data.unlabeled, None);
    }
}
