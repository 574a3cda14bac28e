//! Rule mining over dependency parses, rule-based weak labeling, and a
//! multi-task recurrent CRF tagger for aspect and opinion term extraction.
//!
//! The pipeline has three stages:
//!
//! 1. [`mining`] reads extraction rules off annotated, parsed sentences.
//! 2. [`apply`] runs the rules over unlabeled parsed text, producing two
//!    independent BIO sequences per sentence.
//! 3. [`training`] fits a [`tagger::TaggerModel`] on the gold sentences and
//!    the rule-labeled ones together.
//!
//! [`eval`] scores either rules or models with exact-span P/R/F1.

pub mod apply;
pub mod corpus;
pub mod eval;
pub mod mining;
pub mod tagger;
pub mod synth;
pub mod training;

pub use apply::{apply_ruleset, label_corpus, ApplyOptions};
pub use corpus::{ParsedSentence, TagSequence, TermKind, TermSpan, WeakLabeledSentence};
pub use eval::{span_prf, EvalReport};
pub use mining::{mine_rules, MiningConfig, RulePattern, RuleSet};
