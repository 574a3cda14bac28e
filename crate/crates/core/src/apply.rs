//! Applying mined rules to parsed sentences.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{spans_to_bio, ParsedSentence, TermKind, TermSpan, Token, WeakLabeledSentence};
use crate::mining::{word_class, End, RulePattern, RuleSet, SlotRef, SlotSpec, WordClass};

#[derive(Debug, Error, PartialEq)]
pub enum ApplyError {
    #[error("seed token {0} is not a noun, verb or adjective")]
    BadSeed(usize),
    #[error("seed token {0} is outside the sentence")]
    SeedOutOfRange(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "type", content = "id")]
pub enum Source {
    /// Index into the rule set's rules.
    Rule(usize),
    Dictionary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Extraction {
    pub span: TermSpan,
    pub source: Source,
    /// The token bound by the starred slot; `None` for dictionary hits.
    pub seed: Option<usize>,
}

pub fn slot_matches(slot: &SlotSpec, token: &Token, vocab: &BTreeSet<String>) -> bool {
    matches_parts(slot, &token.surface.to_lowercase(), &token.pos, vocab)
}

fn matches_parts(slot: &SlotSpec, lower: &str, pos: &str, vocab: &BTreeSet<String>) -> bool {
    match slot {
        SlotSpec::Word(w) => w == lower,
        SlotSpec::Pos(p) => p == pos,
        SlotSpec::Class(c) => word_class(pos) == *c,
        SlotSpec::Opinion => vocab.contains(lower),
    }
}

/// Per-sentence lookups shared by every rule applied to it.
pub struct SentenceView<'a> {
    pub sentence: &'a ParsedSentence,
    lower: Vec<String>,
    classes: Vec<WordClass>,
    /// Edge indices incident to each token (index 0 unused).
    incident: Vec<Vec<usize>>,
}

impl<'a> SentenceView<'a> {
    pub fn new(sentence: &'a ParsedSentence) -> Self {
        let n = sentence.len();
        let mut incident = vec![Vec::new(); n + 1];
        for (i, e) in sentence.deps.iter().enumerate() {
            incident[e.governor].push(i);
            incident[e.dependent].push(i);
        }
        Self {
            sentence,
            lower: sentence.tokens.iter().map(|t| t.surface.to_lowercase()).collect(),
            classes: sentence.tokens.iter().map(|t| word_class(&t.pos)).collect(),
            incident,
        }
    }

    fn matches(&self, slot: &SlotSpec, index: usize, vocab: &BTreeSet<String>) -> bool {
        // The root pseudo-token has no surface or tag.
        if index == 0 || index > self.lower.len() {
            return false;
        }
        let i = index - 1;
        match slot {
            SlotSpec::Class(c) => self.classes[i] == *c,
            other => matches_parts(other, &self.lower[i], &self.sentence.tokens[i].pos, vocab),
        }
    }

    fn text(&self, span: &TermSpan) -> String {
        self.lower[span.start - 1..span.end].join(" ")
    }
}

/// Expands a seed word into a term: a verb or adjective stands alone; a
/// noun grows to the maximal run of adjacent nouns.
pub fn term_from(sentence: &ParsedSentence, seed: usize, kind: TermKind) -> Result<TermSpan, ApplyError> {
    let tok = sentence.token(seed).ok_or(ApplyError::SeedOutOfRange(seed))?;
    match word_class(&tok.pos) {
        WordClass::Verb | WordClass::Adjective => Ok(TermSpan::new(seed, seed, kind)),
        WordClass::Noun => {
            let is_noun = |i: usize| sentence.token(i).is_some_and(|t| word_class(&t.pos) == WordClass::Noun);
            let mut start = seed;
            while start > 1 && is_noun(start - 1) {
                start -= 1;
            }
            let mut end = seed;
            while is_noun(end + 1) {
                end += 1;
            }
            Ok(TermSpan::new(start, end, kind))
        }
        WordClass::Other => Err(ApplyError::BadSeed(seed)),
    }
}

fn edge_end(e: &crate::corpus::DependencyEdge, end: End) -> usize {
    match end {
        End::Gov => e.governor,
        End::Dep => e.dependent,
    }
}

fn edge_matches(
    view: &SentenceView<'_>,
    edge: usize,
    template: &crate::mining::EdgeTemplate,
    vocab: &BTreeSet<String>,
) -> bool {
    let e = &view.sentence.deps[edge];
    e.relation == template.rel
        && view.matches(&template.gov, e.governor, vocab)
        && view.matches(&template.dep, e.dependent, vocab)
}

/// All terms `rule` extracts from `sentence`, minus blocklisted texts,
/// one extraction per distinct span.
pub fn extract_with_rule(
    sentence: &ParsedSentence,
    rule: &RulePattern,
    rule_id: usize,
    v_fil: &BTreeSet<String>,
    vocab: &BTreeSet<String>,
) -> Vec<Extraction> {
    extract_with_view(&SentenceView::new(sentence), rule, rule_id, v_fil, vocab)
}

pub fn extract_with_view(
    view: &SentenceView<'_>,
    rule: &RulePattern,
    rule_id: usize,
    v_fil: &BTreeSet<String>,
    vocab: &BTreeSet<String>,
) -> Vec<Extraction> {
    let deps = &view.sentence.deps;
    let mut seeds: Vec<usize> = Vec::new();
    match rule.shared {
        None => {
            for (i, dep) in deps.iter().enumerate() {
                if edge_matches(view, i, &rule.edges[0], vocab) {
                    seeds.push(edge_end(dep, rule.target.end));
                }
            }
        }
        Some((s0, s1)) => {
            for i in 0..deps.len() {
                if !edge_matches(view, i, &rule.edges[0], vocab) {
                    continue;
                }
                let bound = edge_end(&deps[i], s0.end);
                for &j in &view.incident[bound] {
                    if j == i
                        || edge_end(&deps[j], s1.end) != bound
                        || deps[i].shared_token(&deps[j]).is_none()
                        || !edge_matches(view, j, &rule.edges[1], vocab)
                    {
                        continue;
                    }
                    let SlotRef { edge, end } = rule.target;
                    let seed_edge = if edge == 0 { i } else { j };
                    seeds.push(edge_end(&deps[seed_edge], end));
                }
            }
        }
    }

    let mut out: Vec<Extraction> = Vec::new();
    for seed in seeds {
        let Ok(span) = term_from(view.sentence, seed, rule.kind) else {
            continue;
        };
        if out.iter().any(|x| x.span == span) || v_fil.contains(&view.text(&span)) {
            continue;
        }
        out.push(Extraction {
            span,
            source: Source::Rule(rule_id),
            seed: Some(seed),
        });
    }
    out
}

/// Non-overlapping maximal token runs whose text is in the dictionary,
/// longest first.
pub fn dictionary_matches(sentence: &ParsedSentence, dictionary: &BTreeSet<String>, kind: TermKind) -> Vec<Extraction> {
    let view = SentenceView::new(sentence);
    dictionary_matches_view(&view, dictionary, kind)
}

fn dictionary_matches_view(view: &SentenceView<'_>, dictionary: &BTreeSet<String>, kind: TermKind) -> Vec<Extraction> {
    if dictionary.is_empty() {
        return Vec::new();
    }
    let max_len = dictionary.iter().map(|d| d.split(' ').count()).max().unwrap_or(0);
    let n = view.lower.len();
    let mut hits = Vec::new();
    for start in 1..=n {
        for len in (1..=max_len.min(n - start + 1)).rev() {
            let span = TermSpan::new(start, start + len - 1, kind);
            if dictionary.contains(&view.text(&span)) {
                hits.push(span);
            }
        }
    }
    hits.sort_by(|a, b| b.len().cmp(&a.len()).then(a.start.cmp(&b.start)));
    let mut kept: Vec<TermSpan> = Vec::new();
    for h in hits {
        if kept.iter().all(|k| !k.overlaps(&h)) {
            kept.push(h);
        }
    }
    kept.sort();
    kept.into_iter()
        .map(|span| Extraction {
            span,
            source: Source::Dictionary,
            seed: None,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DictionaryPriority {
    /// Dictionary hits compete with rule hits by length, position and
    /// precision (treated as 1.0).
    #[default]
    Compete,
    /// Dictionary hits are placed before all rule hits.
    First,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApplyOptions {
    pub dictionary_priority: DictionaryPriority,
}

/// Every extraction from every rule plus dictionary hits, then greedy
/// overlap resolution. Returns the kept extractions in token order.
pub fn apply_ruleset_detailed(sentence: &ParsedSentence, ruleset: &RuleSet, options: ApplyOptions) -> Vec<Extraction> {
    let view = SentenceView::new(sentence);
    let vocab = &ruleset.opinion_vocabulary;
    let mut all: Vec<(Extraction, f64)> = Vec::new();
    for (id, rule) in ruleset.rules.iter().enumerate() {
        for x in extract_with_view(&view, &rule.pattern, id, &ruleset.v_fil, vocab) {
            all.push((x, rule.precision));
        }
    }
    for x in dictionary_matches_view(&view, &ruleset.dictionary, ruleset.kind) {
        all.push((x, 1.0));
    }
    let first = options.dictionary_priority == DictionaryPriority::First;
    all.sort_by(|(a, pa), (b, pb)| {
        let dict_rank = |x: &Extraction| !(first && x.source == Source::Dictionary);
        dict_rank(a)
            .cmp(&dict_rank(b))
            .then(b.span.len().cmp(&a.span.len()))
            .then(a.span.start.cmp(&b.span.start))
            .then(pb.total_cmp(pa))
            .then(a.source.cmp(&b.source))
    });
    let mut kept: Vec<Extraction> = Vec::new();
    for (x, _) in all {
        if kept.iter().all(|k| !k.span.overlaps(&x.span)) {
            kept.push(x);
        }
    }
    kept.sort_by_key(|x| x.span);
    kept
}

pub fn apply_ruleset(sentence: &ParsedSentence, ruleset: &RuleSet, options: ApplyOptions) -> Vec<TermSpan> {
    apply_ruleset_detailed(sentence, ruleset, options)
        .into_iter()
        .map(|x| x.span)
        .collect()
}

/// Rule output for one sentence, with provenance, for audit dumps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub sentence_id: usize,
    pub aspect_spans: Vec<[usize; 2]>,
    pub opinion_spans: Vec<[usize; 2]>,
    pub sources: Vec<SourceRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceRecord {
    pub kind: TermKind,
    pub span: [usize; 2],
    pub source: Source,
}

/// Labels one sentence with both rule sets.
pub fn label_sentence(
    id: usize,
    sentence: &ParsedSentence,
    aspect_rules: &RuleSet,
    opinion_rules: &RuleSet,
    options: ApplyOptions,
) -> (WeakLabeledSentence, LabelRecord) {
    let a = apply_ruleset_detailed(sentence, aspect_rules, options);
    let o = apply_ruleset_detailed(sentence, opinion_rules, options);
    let spans = |xs: &[Extraction], kind: TermKind| -> Vec<TermSpan> {
        xs.iter().map(|x| TermSpan { kind, ..x.span }).collect()
    };
    let a_spans = spans(&a, TermKind::Aspect);
    let o_spans = spans(&o, TermKind::Opinion);
    let n = sentence.len();
    let weak = WeakLabeledSentence {
        words: sentence.words(),
        aspect: spans_to_bio(n, &a_spans, TermKind::Aspect).expect("resolved spans are disjoint"),
        opinion: spans_to_bio(n, &o_spans, TermKind::Opinion).expect("resolved spans are disjoint"),
    };
    let pairs = |v: &[TermSpan]| v.iter().map(|s| [s.start, s.end]).collect();
    let sources = a
        .iter()
        .map(|x| (TermKind::Aspect, x))
        .chain(o.iter().map(|x| (TermKind::Opinion, x)))
        .map(|(kind, x)| SourceRecord {
            kind,
            span: [x.span.start, x.span.end],
            source: x.source,
        })
        .collect();
    let record = LabelRecord {
        sentence_id: id,
        aspect_spans: pairs(&a_spans),
        opinion_spans: pairs(&o_spans),
        sources,
    };
    (weak, record)
}

/// Labels a corpus with independent aspect and opinion tag sequences.
/// Output order matches input order for any worker count.
pub fn label_corpus(
    corpus: &[ParsedSentence],
    aspect_rules: &RuleSet,
    opinion_rules: &RuleSet,
    options: ApplyOptions,
    workers: usize,
) -> Vec<(WeakLabeledSentence, LabelRecord)> {
    let one = |(i, s): (usize, &ParsedSentence)| label_sentence(i, s, aspect_rules, opinion_rules, options);
    #[cfg(feature = "parallel")]
    if workers > 1 {
        use rayon::prelude::*;
        if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
            return pool.install(|| corpus.par_iter().enumerate().map(one).collect());
        }
    }
    let _ = workers;
    corpus.iter().enumerate().map(one).collect()
}
