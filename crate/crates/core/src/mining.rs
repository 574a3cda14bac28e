//! Mining extraction rules from dependency-parsed, span-annotated sentences.
//!
//! Mining runs in two stages. Candidate generation enumerates, for every
//! gold term, the patterns that can be read off the edges touching it
//! (`S1`) and the pairs of edges sharing one word with such an edge (`S2`),
//! and keeps those seen more than `T` times. Filtering then measures each
//! candidate's precision on held-out annotated sentences and keeps the ones
//! at or above `p`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::apply::{extract_with_view, SentenceView};
use crate::corpus::{ParsedSentence, TermKind, TermSpan, Token};

#[derive(Debug, Error, PartialEq)]
pub enum MiningError {
    #[error("candidate guard tripped: more than {limit} distinct patterns generated")]
    CandidateGuard { limit: usize },
    #[error("validation set is empty; rule precision is undefined")]
    EmptyValidation,
    #[error("invalid pattern: {0}")]
    InvalidPattern(String),
    #[error("rule set JSON: {0}")]
    Json(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WordClass {
    Noun,
    Verb,
    Adjective,
    Other,
}

impl fmt::Display for WordClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WordClass::Noun => "noun",
            WordClass::Verb => "verb",
            WordClass::Adjective => "adjective",
            WordClass::Other => "other",
        })
    }
}

/// Coarse class of a PTB tag.
pub fn word_class(pos: &str) -> WordClass {
    match pos {
        "NN" | "NNS" | "NNP" | "NNPS" => WordClass::Noun,
        "VB" | "VBD" | "VBG" | "VBN" | "VBP" | "VBZ" => WordClass::Verb,
        "JJ" | "JJR" | "JJS" => WordClass::Adjective,
        _ => WordClass::Other,
    }
}

/// Classes a rule of `kind` may extract.
pub fn target_classes(kind: TermKind) -> &'static [WordClass] {
    match kind {
        TermKind::Aspect => &[WordClass::Noun, WordClass::Verb],
        TermKind::Opinion => &[WordClass::Adjective, WordClass::Noun, WordClass::Verb],
    }
}

/// What a pattern slot accepts.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "lowercase")]
pub enum SlotSpec {
    /// Lowercased surface form.
    Word(String),
    /// Exact fine POS tag.
    Pos(String),
    Class(WordClass),
    /// Any word of the opinion vocabulary.
    Opinion,
}

impl fmt::Display for SlotSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SlotSpec::Word(w) => write!(f, "{w:?}"),
            SlotSpec::Pos(p) => f.write_str(p),
            SlotSpec::Class(c) => write!(f, "{c}"),
            SlotSpec::Opinion => f.write_str("O"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum End {
    Gov,
    Dep,
}

/// A slot position: which edge of the pattern and which end of it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SlotRef {
    pub edge: usize,
    pub end: End,
}

impl SlotRef {
    pub fn new(edge: usize, end: End) -> Self {
        Self { edge, end }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EdgeTemplate {
    pub rel: String,
    pub gov: SlotSpec,
    pub dep: SlotSpec,
}

impl EdgeTemplate {
    pub fn slot(&self, end: End) -> &SlotSpec {
        match end {
            End::Gov => &self.gov,
            End::Dep => &self.dep,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Arity {
    S1,
    S2,
}

/// An extraction rule over one edge or over two edges sharing a word.
///
/// S2 patterns are kept in a canonical edge order so that the same rule
/// read off a pair in either order compares equal.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RulePattern {
    pub kind: TermKind,
    pub edges: Vec<EdgeTemplate>,
    /// The starred slot; the word bound here seeds the extracted term.
    pub target: SlotRef,
    /// For S2: the slot in edge 0 and the slot in edge 1 bound to the same
    /// token.
    pub shared: Option<(SlotRef, SlotRef)>,
}

impl RulePattern {
    pub fn s1(kind: TermKind, rel: &str, gov: SlotSpec, dep: SlotSpec, target: End) -> Self {
        Self {
            kind,
            edges: vec![EdgeTemplate {
                rel: rel.to_string(),
                gov,
                dep,
            }],
            target: SlotRef::new(0, target),
            shared: None,
        }
    }

    /// Builds an S2 pattern and puts it in canonical form.
    pub fn s2(
        kind: TermKind,
        edges: [EdgeTemplate; 2],
        target: SlotRef,
        shared: (SlotRef, SlotRef),
    ) -> Self {
        let shared = if shared.0.edge == 0 { shared } else { (shared.1, shared.0) };
        let target = if target == shared.1 { shared.0 } else { target };
        let [a, b] = edges;
        let straight = RulePattern {
            kind,
            edges: vec![a.clone(), b.clone()],
            target,
            shared: Some(shared),
        };
        let swap = |r: SlotRef| SlotRef::new(1 - r.edge, r.end);
        let swapped_shared = (swap(shared.1), swap(shared.0));
        let swapped_target = if target == shared.0 { swapped_shared.0 } else { swap(target) };
        let swapped = RulePattern {
            kind,
            edges: vec![b, a],
            target: swapped_target,
            shared: Some(swapped_shared),
        };
        std::cmp::min(straight, swapped)
    }

    pub fn arity(&self) -> Arity {
        if self.edges.len() == 1 {
            Arity::S1
        } else {
            Arity::S2
        }
    }

    pub fn slot(&self, r: SlotRef) -> &SlotSpec {
        self.edges[r.edge].slot(r.end)
    }

    pub fn target_class(&self) -> Option<WordClass> {
        match self.slot(self.target) {
            SlotSpec::Class(c) => Some(*c),
            _ => None,
        }
    }

    fn is_shared_slot(&self, r: SlotRef) -> bool {
        matches!(self.shared, Some((a, b)) if a == r || b == r)
    }

    pub fn validate(&self) -> Result<(), MiningError> {
        let bad = |m: &str| Err(MiningError::InvalidPattern(format!("{self}: {m}")));
        match (self.edges.len(), self.shared) {
            (1, None) => {}
            (2, Some((a, b))) => {
                if a.edge != 0 || b.edge != 1 {
                    return bad("shared slots must lie in different edges");
                }
                if self.slot(a) != self.slot(b) {
                    return bad("shared slots must carry the same matcher");
                }
            }
            _ => return bad("S1 needs one edge and no shared slot; S2 needs two edges and a shared pair"),
        }
        if self.target.edge >= self.edges.len() {
            return bad("target refers to a missing edge");
        }
        match self.target_class() {
            Some(c) if target_classes(self.kind).contains(&c) => {}
            Some(c) => return bad(&format!("{c} is not a legal {} target", self.kind)),
            None => return bad("target slot must be a word class"),
        }
        let has_wildcard = self
            .edges
            .iter()
            .any(|e| e.gov == SlotSpec::Opinion || e.dep == SlotSpec::Opinion);
        if self.kind == TermKind::Opinion && has_wildcard {
            return bad("opinion rules cannot use the opinion wildcard");
        }
        Ok(())
    }
}

impl fmt::Display for RulePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let slot = |r: SlotRef| {
            let mut s = self.slot(r).to_string();
            if r == self.target || (self.is_shared_slot(r) && self.is_shared_slot(self.target)) {
                s.push('*');
            }
            if self.is_shared_slot(r) {
                s.push('^');
            }
            s
        };
        let edge = |i: usize| {
            format!(
                "({}, {}, {})",
                self.edges[i].rel,
                slot(SlotRef::new(i, End::Gov)),
                slot(SlotRef::new(i, End::Dep))
            )
        };
        match self.edges.len() {
            1 => write!(f, "{}", edge(0)),
            _ => write!(f, "{{{}, {}}}", edge(0), edge(1)),
        }
    }
}

/// Which non-target slots may hold the opinion wildcard.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WildcardSlots {
    #[default]
    Any,
    GovernorOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiningConfig {
    /// Candidates must be generated strictly more than this many times.
    pub frequency_threshold: usize,
    pub precision_threshold: f64,
    pub opinion_vocabulary: BTreeSet<String>,
    pub dictionary_min_count: usize,
    pub max_candidates_guard: usize,
    pub wildcard_slots: WildcardSlots,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self {
            frequency_threshold: 10,
            precision_threshold: 0.6,
            opinion_vocabulary: BTreeSet::new(),
            dictionary_min_count: 3,
            max_candidates_guard: 5_000_000,
            wildcard_slots: WildcardSlots::Any,
        }
    }
}

impl MiningConfig {
    pub fn with_vocabulary<I, S>(mut self, words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        self.opinion_vocabulary = words.into_iter().map(|w| w.as_ref().to_lowercase()).collect();
        self
    }
}

/// Reads a word-per-line vocabulary file; blank lines and `;` comments are
/// ignored.
pub fn parse_vocabulary(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with(';'))
        .map(str::to_lowercase)
        .collect()
}

/// Edges with either end inside `term`.
pub fn related_s1_deps<'a>(term: &TermSpan, sentence: &'a ParsedSentence) -> Vec<&'a crate::corpus::DependencyEdge> {
    related_s1_indices(term, sentence)
        .into_iter()
        .map(|i| &sentence.deps[i])
        .collect()
}

fn related_s1_indices(term: &TermSpan, sentence: &ParsedSentence) -> Vec<usize> {
    sentence
        .deps
        .iter()
        .enumerate()
        .filter(|(_, e)| term.contains(e.governor) || term.contains(e.dependent))
        .map(|(i, _)| i)
        .collect()
}

fn related_s2_indices(term: &TermSpan, sentence: &ParsedSentence) -> Vec<(usize, usize)> {
    let related = related_s1_indices(term, sentence);
    let mut pairs = BTreeSet::new();
    for &i in &related {
        for (j, other) in sentence.deps.iter().enumerate() {
            if i != j && sentence.deps[i].shared_token(other).is_some() {
                pairs.insert((i.min(j), i.max(j)));
            }
        }
    }
    pairs.into_iter().collect()
}

/// Unordered pairs of distinct edges sharing exactly one token, at least
/// one of which touches `term`. Pairs are listed in sentence edge order.
pub fn related_s2_deps<'a>(
    term: &TermSpan,
    sentence: &'a ParsedSentence,
) -> Vec<(&'a crate::corpus::DependencyEdge, &'a crate::corpus::DependencyEdge)> {
    related_s2_indices(term, sentence)
        .into_iter()
        .map(|(i, j)| (&sentence.deps[i], &sentence.deps[j]))
        .collect()
}

/// Matchers a non-target word can generalize to.
fn context_matchers(
    token: &Token,
    wildcard_ok: bool,
    config: &MiningConfig,
    kind: TermKind,
) -> Vec<SlotSpec> {
    let lower = token.surface.to_lowercase();
    let mut out = vec![SlotSpec::Word(lower.clone()), SlotSpec::Pos(token.pos.clone())];
    if kind == TermKind::Aspect && wildcard_ok && config.opinion_vocabulary.contains(&lower) {
        out.push(SlotSpec::Opinion);
    }
    out
}

fn wildcard_allowed(config: &MiningConfig, ends: &[End]) -> bool {
    match config.wildcard_slots {
        WildcardSlots::Any => true,
        WildcardSlots::GovernorOnly => ends.iter().all(|e| *e == End::Gov),
    }
}

fn legal_target(token: &Token, kind: TermKind) -> Option<WordClass> {
    let class = word_class(&token.pos);
    target_classes(kind).contains(&class).then_some(class)
}

/// Patterns read off one edge touching `term`. Each end inside the term is
/// tried as the target.
pub fn patterns_from_s1(
    edge: &crate::corpus::DependencyEdge,
    sentence: &ParsedSentence,
    term: &TermSpan,
    config: &MiningConfig,
    kind: TermKind,
) -> Vec<RulePattern> {
    let mut out = BTreeSet::new();
    for target_end in [End::Gov, End::Dep] {
        let (t_idx, c_idx) = match target_end {
            End::Gov => (edge.governor, edge.dependent),
            End::Dep => (edge.dependent, edge.governor),
        };
        if !term.contains(t_idx) {
            continue;
        }
        let (Some(target), Some(context)) = (sentence.token(t_idx), sentence.token(c_idx)) else {
            continue;
        };
        let Some(class) = legal_target(target, kind) else {
            continue;
        };
        let context_end = match target_end {
            End::Gov => End::Dep,
            End::Dep => End::Gov,
        };
        let wildcard_ok = wildcard_allowed(config, &[context_end]);
        for m in context_matchers(context, wildcard_ok, config, kind) {
            let (gov, dep) = match target_end {
                End::Gov => (SlotSpec::Class(class), m),
                End::Dep => (m, SlotSpec::Class(class)),
            };
            out.insert(RulePattern::s1(kind, &edge.relation, gov, dep, target_end));
        }
    }
    out.into_iter().collect()
}

/// Patterns read off a pair of edges sharing one token. Every token of the
/// pair inside `term` is tried as the target; each of the other two tokens
/// independently takes each matcher it is eligible for.
pub fn patterns_from_s2(
    pair: (&crate::corpus::DependencyEdge, &crate::corpus::DependencyEdge),
    sentence: &ParsedSentence,
    term: &TermSpan,
    config: &MiningConfig,
    kind: TermKind,
) -> Vec<RulePattern> {
    let (e0, e1) = pair;
    let Some(shared_tok) = e0.shared_token(e1) else {
        return Vec::new();
    };
    let slot_token = |r: SlotRef| {
        let e = if r.edge == 0 { e0 } else { e1 };
        match r.end {
            End::Gov => e.governor,
            End::Dep => e.dependent,
        }
    };
    let all_refs = [
        SlotRef::new(0, End::Gov),
        SlotRef::new(0, End::Dep),
        SlotRef::new(1, End::Gov),
        SlotRef::new(1, End::Dep),
    ];
    let shared_ref0 = all_refs[..2].iter().copied().find(|r| slot_token(*r) == shared_tok).unwrap();
    let shared_ref1 = all_refs[2..].iter().copied().find(|r| slot_token(*r) == shared_tok).unwrap();

    let mut tokens: Vec<usize> = all_refs.iter().map(|r| slot_token(*r)).collect();
    tokens.sort_unstable();
    tokens.dedup();

    let mut out = BTreeSet::new();
    for &target_tok in &tokens {
        if !term.contains(target_tok) {
            continue;
        }
        let Some(class) = sentence.token(target_tok).and_then(|t| legal_target(t, kind)) else {
            continue;
        };
        let others: Vec<usize> = tokens.iter().copied().filter(|t| *t != target_tok).collect();
        let mut choices: Vec<Vec<SlotSpec>> = Vec::with_capacity(others.len());
        for &o in &others {
            let Some(tok) = sentence.token(o) else {
                return Vec::new();
            };
            let ends: Vec<End> = all_refs
                .iter()
                .filter(|r| slot_token(**r) == o)
                .map(|r| r.end)
                .collect();
            choices.push(context_matchers(tok, wildcard_allowed(config, &ends), config, kind));
        }
        let target_ref = all_refs.iter().copied().find(|r| slot_token(*r) == target_tok).unwrap();
        for combo in cartesian(&choices) {
            let spec_of = |r: SlotRef| {
                let t = slot_token(r);
                if t == target_tok {
                    SlotSpec::Class(class)
                } else {
                    combo[others.iter().position(|o| *o == t).unwrap()].clone()
                }
            };
            let template = |i: usize, e: &crate::corpus::DependencyEdge| EdgeTemplate {
                rel: e.relation.clone(),
                gov: spec_of(SlotRef::new(i, End::Gov)),
                dep: spec_of(SlotRef::new(i, End::Dep)),
            };
            out.insert(RulePattern::s2(
                kind,
                [template(0, e0), template(1, e1)],
                target_ref,
                (shared_ref0, shared_ref1),
            ));
        }
    }
    out.into_iter().collect()
}

fn cartesian(choices: &[Vec<SlotSpec>]) -> Vec<Vec<SlotSpec>> {
    choices.iter().fold(vec![Vec::new()], |acc, opts| {
        acc.into_iter()
            .flat_map(|prefix| {
                opts.iter().map(move |o| {
                    let mut v = prefix.clone();
                    v.push(o.clone());
                    v
                })
            })
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub pattern: RulePattern,
    pub support: usize,
}

type Counts = HashMap<RulePattern, usize>;

fn count_sentence(sentence: &ParsedSentence, config: &MiningConfig, kind: TermKind) -> (Counts, Counts) {
    let mut s1 = Counts::new();
    let mut s2 = Counts::new();
    for term in sentence.terms(kind) {
        for edge in related_s1_deps(term, sentence) {
            for p in patterns_from_s1(edge, sentence, term, config, kind) {
                *s1.entry(p).or_default() += 1;
            }
        }
        for pair in related_s2_deps(term, sentence) {
            for p in patterns_from_s2(pair, sentence, term, config, kind) {
                *s2.entry(p).or_default() += 1;
            }
        }
    }
    (s1, s2)
}

fn merge_into(total: &mut Counts, part: Counts) {
    for (p, c) in part {
        *total.entry(p).or_default() += c;
    }
}

/// Counts every pattern instantiation over the gold terms of `kind` and
/// returns those seen more than `T` times: S1 candidates first, then S2,
/// each by descending support and then pattern order.
pub fn generate_candidates(
    train: &[ParsedSentence],
    config: &MiningConfig,
    kind: TermKind,
) -> Result<Vec<Candidate>, MiningError> {
    let mut s1 = Counts::new();
    let mut s2 = Counts::new();
    let guard = |s1: &Counts, s2: &Counts| {
        if s1.len() + s2.len() > config.max_candidates_guard {
            Err(MiningError::CandidateGuard {
                limit: config.max_candidates_guard,
            })
        } else {
            Ok(())
        }
    };

    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        for chunk in train.chunks(256) {
            let parts: Vec<(Counts, Counts)> =
                chunk.par_iter().map(|s| count_sentence(s, config, kind)).collect();
            for (a, b) in parts {
                merge_into(&mut s1, a);
                merge_into(&mut s2, b);
            }
            guard(&s1, &s2)?;
        }
    }
    #[cfg(not(feature = "parallel"))]
    for sentence in train {
        let (a, b) = count_sentence(sentence, config, kind);
        merge_into(&mut s1, a);
        merge_into(&mut s2, b);
        guard(&s1, &s2)?;
    }

    let frequent = |counts: Counts| {
        let mut v: Vec<Candidate> = counts
            .into_iter()
            .filter(|(_, c)| *c > config.frequency_threshold)
            .map(|(pattern, support)| Candidate { pattern, support })
            .collect();
        v.sort_by(|a, b| b.support.cmp(&a.support).then_with(|| a.pattern.cmp(&b.pattern)));
        v
    };
    let mut out = frequent(s1);
    out.extend(frequent(s2));
    Ok(out)
}

/// Upper bound on candidate count: `L * N * M^2 / T` scaled by the
/// per-instantiation pattern fan-out (6 for an edge, 27 for a pair).
pub fn candidate_bound(train: &[ParsedSentence], kind: TermKind, threshold: usize) -> f64 {
    let terms: Vec<&TermSpan> = train.iter().flat_map(|s| s.terms(kind)).collect();
    let l = terms.iter().map(|t| t.len()).max().unwrap_or(0) as f64;
    let n = terms.len() as f64;
    let m = train.iter().map(|s| s.len()).max().unwrap_or(0) as f64;
    33.0 * l * n * m * m / (threshold.max(1) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinedRule {
    pub pattern: RulePattern,
    /// Exact-span hits over extractions on the validation set.
    pub precision: f64,
    pub support: usize,
}

/// Filtered patterns plus the term dictionary, the blocklist of terms that
/// candidate rules only ever extracted wrongly, and the opinion vocabulary
/// the patterns' wildcards refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleSet {
    pub kind: TermKind,
    pub rules: Vec<MinedRule>,
    pub dictionary: BTreeSet<String>,
    pub v_fil: BTreeSet<String>,
    pub opinion_vocabulary: BTreeSet<String>,
}

impl RuleSet {
    pub fn empty(kind: TermKind) -> Self {
        Self {
            kind,
            rules: Vec::new(),
            dictionary: BTreeSet::new(),
            v_fil: BTreeSet::new(),
            opinion_vocabulary: BTreeSet::new(),
        }
    }

    pub fn to_json(&self) -> String {
        let file = RuleSetFile {
            kind: self.kind,
            patterns: self.rules.iter().map(PatternRecord::from).collect(),
            dictionary: self.dictionary.iter().cloned().collect(),
            v_fil: self.v_fil.iter().cloned().collect(),
            opinion_vocabulary: self.opinion_vocabulary.iter().cloned().collect(),
        };
        // Going through `Value` sorts object keys.
        let value = serde_json::to_value(&file).expect("rule set serializes");
        let mut s = serde_json::to_string_pretty(&value).expect("rule set serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, MiningError> {
        let file: RuleSetFile = serde_json::from_str(text).map_err(|e| MiningError::Json(e.to_string()))?;
        let rules = file
            .patterns
            .into_iter()
            .map(|r| r.into_rule(file.kind))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            kind: file.kind,
            rules,
            dictionary: file.dictionary.into_iter().collect(),
            v_fil: file.v_fil.into_iter().collect(),
            opinion_vocabulary: file.opinion_vocabulary.into_iter().collect(),
        })
    }
}

#[derive(Serialize, Deserialize)]
struct RuleSetFile {
    kind: TermKind,
    patterns: Vec<PatternRecord>,
    dictionary: Vec<String>,
    v_fil: Vec<String>,
    #[serde(default)]
    opinion_vocabulary: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct EdgeRecord {
    rel: String,
    gov: SlotSpec,
    dep: SlotSpec,
}

#[derive(Serialize, Deserialize)]
struct PatternRecord {
    arity: Arity,
    edges: Vec<EdgeRecord>,
    target: SlotRef,
    #[serde(default)]
    shared: Option<[SlotRef; 2]>,
    precision: f64,
    support: usize,
}

impl From<&MinedRule> for PatternRecord {
    fn from(r: &MinedRule) -> Self {
        Self {
            arity: r.pattern.arity(),
            edges: r
                .pattern
                .edges
                .iter()
                .map(|e| EdgeRecord {
                    rel: e.rel.clone(),
                    gov: e.gov.clone(),
                    dep: e.dep.clone(),
                })
                .collect(),
            target: r.pattern.target,
            shared: r.pattern.shared.map(|(a, b)| [a, b]),
            precision: r.precision,
            support: r.support,
        }
    }
}

impl PatternRecord {
    fn into_rule(self, kind: TermKind) -> Result<MinedRule, MiningError> {
        let edges: Vec<EdgeTemplate> = self
            .edges
            .into_iter()
            .map(|e| EdgeTemplate {
                rel: e.rel,
                gov: e.gov,
                dep: e.dep,
            })
            .collect();
        let expected = match self.arity {
            Arity::S1 => 1,
            Arity::S2 => 2,
        };
        if edges.len() != expected {
            return Err(MiningError::InvalidPattern(format!(
                "{:?} pattern with {} edges",
                self.arity,
                edges.len()
            )));
        }
        let pattern = RulePattern {
            kind,
            edges,
            target: self.target,
            shared: self.shared.map(|[a, b]| (a, b)),
        };
        pattern.validate()?;
        Ok(MinedRule {
            pattern,
            precision: self.precision,
            support: self.support,
        })
    }
}

/// Hits and total extractions of one pattern over annotated sentences.
pub fn rule_hits(
    pattern: &RulePattern,
    sentences: &[ParsedSentence],
    v_fil: &BTreeSet<String>,
    vocab: &BTreeSet<String>,
) -> (usize, usize) {
    let mut hits = 0;
    let mut total = 0;
    for s in sentences {
        let view = SentenceView::new(s);
        for x in extract_with_view(&view, pattern, 0, v_fil, vocab) {
            total += 1;
            if s.terms(pattern.kind).contains(&x.span) {
                hits += 1;
            }
        }
    }
    (hits, total)
}

/// Builds the term dictionary and the blocklist from the training set, then
/// keeps candidates whose validation precision is at least `p`.
pub fn filter_candidates(
    candidates: &[Candidate],
    validation: &[ParsedSentence],
    train: &[ParsedSentence],
    config: &MiningConfig,
    kind: TermKind,
) -> Result<RuleSet, MiningError> {
    if validation.is_empty() {
        return Err(MiningError::EmptyValidation);
    }
    let vocab = &config.opinion_vocabulary;

    let mut gold_counts: BTreeMap<String, usize> = BTreeMap::new();
    for s in train {
        for t in s.terms(kind) {
            *gold_counts.entry(s.span_text(t)).or_default() += 1;
        }
    }
    let dictionary: BTreeSet<String> = gold_counts
        .into_iter()
        .filter(|(_, c)| *c >= config.dictionary_min_count)
        .map(|(t, _)| t)
        .collect();

    // text -> ever matched a gold span
    let no_filter = BTreeSet::new();
    let mut seen: BTreeMap<String, bool> = BTreeMap::new();
    for s in train {
        let view = SentenceView::new(s);
        for c in candidates {
            for x in extract_with_view(&view, &c.pattern, 0, &no_filter, vocab) {
                let correct = s.terms(kind).contains(&x.span);
                *seen.entry(s.span_text(&x.span)).or_insert(false) |= correct;
            }
        }
    }
    let v_fil: BTreeSet<String> = seen
        .into_iter()
        .filter(|(text, ever)| !ever && !dictionary.contains(text))
        .map(|(t, _)| t)
        .collect();

    let evaluate = |c: &Candidate| {
        let (hits, total) = rule_hits(&c.pattern, validation, &v_fil, vocab);
        (total > 0).then(|| hits as f64 / total as f64).and_then(|precision| {
            (precision >= config.precision_threshold).then(|| MinedRule {
                pattern: c.pattern.clone(),
                precision,
                support: c.support,
            })
        })
    };
    #[cfg(feature = "parallel")]
    let rules: Vec<MinedRule> = {
        use rayon::prelude::*;
        candidates.par_iter().filter_map(evaluate).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let rules: Vec<MinedRule> = candidates.iter().filter_map(evaluate).collect();

    Ok(RuleSet {
        kind,
        rules,
        dictionary,
        v_fil,
        opinion_vocabulary: config.opinion_vocabulary.clone(),
    })
}

/// Candidate generation followed by filtering.
pub fn mine_rules(
    train: &[ParsedSentence],
    validation: &[ParsedSentence],
    config: &MiningConfig,
    kind: TermKind,
) -> Result<RuleSet, MiningError> {
    let candidates = generate_candidates(train, config, kind)?;
    filter_candidates(&candidates, validation, train, config, kind)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_conllu, DependencyEdge};

    const A: TermKind = TermKind::Aspect;
    const O: TermKind = TermKind::Opinion;

    fn horrible_system() -> ParsedSentence {
        let mut s = parse_conllu(crate::corpus::tests_support::HORRIBLE_SYSTEM).unwrap().remove(0);
        s.set_terms(A, vec![TermSpan::new(2, 2, A)]).unwrap();
        s.set_terms(O, vec![TermSpan::new(4, 4, O)]).unwrap();
        s
    }

    fn i_like_the_screen() -> ParsedSentence {
        let mut s = ParsedSentence::from_parts(
            &[("I", "PRP"), ("like", "VBP"), ("the", "DT"), ("screen", "NN")],
            &[("nsubj", 2, 1), ("dobj", 2, 4), ("det", 4, 3)],
        );
        s.set_terms(A, vec![TermSpan::new(4, 4, A)]).unwrap();
        s
    }

    fn vocab_config() -> MiningConfig {
        MiningConfig::default().with_vocabulary(["horrible", "long", "great", "like"])
    }

    fn word(w: &str) -> SlotSpec {
        SlotSpec::Word(w.into())
    }
    fn pos(p: &str) -> SlotSpec {
        SlotSpec::Pos(p.into())
    }
    const NOUN: SlotSpec = SlotSpec::Class(WordClass::Noun);

    #[test]
    fn word_classes() {
        assert_eq!(word_class("NN"), WordClass::Noun);
        assert_eq!(word_class("NNPS"), WordClass::Noun);
        assert_eq!(word_class("VBN"), WordClass::Verb);
        assert_eq!(word_class("JJ"), WordClass::Adjective);
        assert_eq!(word_class("JJS"), WordClass::Adjective);
        assert_eq!(word_class("DT"), WordClass::Other);
        assert_eq!(word_class("PRP"), WordClass::Other);
    }

    #[test]
    fn s1_deps_of_horrible_system() {
        let s = horrible_system();
        let deps = related_s1_deps(&TermSpan::new(2, 2, A), &s);
        assert_eq!(
            deps,
            vec![&DependencyEdge::new("det", 2, 1), &DependencyEdge::new("nsubj", 4, 2)]
        );
        let lone = ParsedSentence::from_parts(&[("a", "DT"), ("b", "NN"), ("c", "NN")], &[("x", 1, 2)]);
        assert!(related_s1_deps(&TermSpan::new(3, 3, A), &lone).is_empty());
        let compound = ParsedSentence::from_parts(
            &[("long", "JJ"), ("battery", "NN"), ("life", "NN")],
            &[("amod", 3, 1), ("compound", 3, 2)],
        );
        assert_eq!(related_s1_deps(&TermSpan::new(2, 3, A), &compound).len(), 2);
    }

    #[test]
    fn s2_deps_share_one_word() {
        let s = i_like_the_screen();
        let pairs = related_s2_deps(&TermSpan::new(4, 4, A), &s);
        assert!(pairs.contains(&(&DependencyEdge::new("nsubj", 2, 1), &DependencyEdge::new("dobj", 2, 4))));
        // dobj and det share "screen": both touch the term, listed once.
        assert!(pairs.contains(&(&DependencyEdge::new("dobj", 2, 4), &DependencyEdge::new("det", 4, 3))));
        assert_eq!(pairs.len(), 2);

        let single = ParsedSentence::from_parts(&[("a", "DT"), ("b", "NN")], &[("det", 2, 1)]);
        assert!(related_s2_deps(&TermSpan::new(2, 2, A), &single).is_empty());
    }

    #[test]
    fn s2_pair_touching_term_twice_is_listed_once() {
        // Three edges: amod(3,1), compound(3,2), punct(3,4); term [2,3].
        let s = ParsedSentence::from_parts(
            &[("long", "JJ"), ("battery", "NN"), ("life", "NN"), (".", ".")],
            &[("amod", 3, 1), ("compound", 3, 2), ("punct", 3, 4)],
        );
        let pairs = related_s2_deps(&TermSpan::new(2, 3, A), &s);
        // Enumerated by hand: every pair shares token 3 -> 3 unordered pairs.
        assert_eq!(pairs.len(), 3);
    }

    #[test]
    fn s1_patterns_for_nsubj_horrible_system() {
        let s = horrible_system();
        let e = DependencyEdge::new("nsubj", 4, 2);
        let pats = patterns_from_s1(&e, &s, &TermSpan::new(2, 2, A), &vocab_config(), A);
        let expected: BTreeSet<RulePattern> = [
            RulePattern::s1(A, "nsubj", word("horrible"), NOUN, End::Dep),
            RulePattern::s1(A, "nsubj", pos("JJ"), NOUN, End::Dep),
            RulePattern::s1(A, "nsubj", SlotSpec::Opinion, NOUN, End::Dep),
        ]
        .into();
        assert_eq!(pats.into_iter().collect::<BTreeSet<_>>(), expected);

        let no_vocab = patterns_from_s1(&e, &s, &TermSpan::new(2, 2, A), &MiningConfig::default(), A);
        assert_eq!(no_vocab.len(), 2);
        assert!(!no_vocab.iter().any(|p| p.edges[0].gov == SlotSpec::Opinion));
    }

    #[test]
    fn s1_patterns_with_governor_target() {
        let s = ParsedSentence::from_parts(
            &[("Long", "JJ"), ("battery", "NN"), ("life", "NN")],
            &[("amod", 3, 1), ("compound", 3, 2)],
        );
        let e = DependencyEdge::new("amod", 3, 1);
        let pats = patterns_from_s1(&e, &s, &TermSpan::new(2, 3, A), &vocab_config(), A);
        assert!(pats.contains(&RulePattern::s1(A, "amod", NOUN, word("long"), End::Gov)));
        assert!(pats.contains(&RulePattern::s1(A, "amod", NOUN, SlotSpec::Opinion, End::Gov)));
        let strict = MiningConfig {
            wildcard_slots: WildcardSlots::GovernorOnly,
            ..vocab_config()
        };
        let pats = patterns_from_s1(&e, &s, &TermSpan::new(2, 3, A), &strict, A);
        assert!(!pats.iter().any(|p| p.edges[0].dep == SlotSpec::Opinion));
    }

    #[test]
    fn illegal_target_class_yields_nothing() {
        let s = horrible_system();
        // aspect rule with an adjective target
        let e = DependencyEdge::new("nsubj", 4, 2);
        assert!(patterns_from_s1(&e, &s, &TermSpan::new(4, 4, A), &vocab_config(), A).is_empty());
        // opinion rule with the same target is fine, without wildcards
        let pats = patterns_from_s1(&e, &s, &TermSpan::new(4, 4, O), &vocab_config(), O);
        assert_eq!(pats.len(), 2);
        let det = ParsedSentence::from_parts(&[("the", "DT"), ("x", "NN")], &[("det", 2, 1)]);
        let e = &det.deps[0];
        let pair_s = ParsedSentence::from_parts(
            &[("the", "DT"), ("x", "NN"), ("y", "DT")],
            &[("det", 2, 1), ("dep", 1, 3)],
        );
        assert!(patterns_from_s1(e, &det, &TermSpan::new(1, 1, A), &vocab_config(), A).is_empty());
        let pair = (&pair_s.deps[0], &pair_s.deps[1]);
        assert!(patterns_from_s2(pair, &pair_s, &TermSpan::new(1, 1, A), &vocab_config(), A).is_empty());
    }

    #[test]
    fn s2_patterns_for_i_like_the_screen() {
        let s = i_like_the_screen();
        let pair = (&s.deps[0], &s.deps[1]);
        let pats = patterns_from_s2(pair, &s, &TermSpan::new(4, 4, A), &MiningConfig::default(), A);
        let lit = RulePattern::s2(
            A,
            [
                EdgeTemplate { rel: "nsubj".into(), gov: word("like"), dep: word("i") },
                EdgeTemplate { rel: "dobj".into(), gov: word("like"), dep: NOUN },
            ],
            SlotRef::new(1, End::Dep),
            (SlotRef::new(0, End::Gov), SlotRef::new(1, End::Gov)),
        );
        let all_pos = RulePattern::s2(
            A,
            [
                EdgeTemplate { rel: "nsubj".into(), gov: pos("VBP"), dep: pos("PRP") },
                EdgeTemplate { rel: "dobj".into(), gov: pos("VBP"), dep: NOUN },
            ],
            SlotRef::new(1, End::Dep),
            (SlotRef::new(0, End::Gov), SlotRef::new(1, End::Gov)),
        );
        assert!(pats.contains(&lit));
        assert!(pats.contains(&all_pos));
        assert_eq!(pats.len(), 4);

        // "like" in the vocabulary adds wildcard variants for the shared slot.
        let with_vocab = patterns_from_s2(pair, &s, &TermSpan::new(4, 4, A), &vocab_config(), A);
        assert_eq!(with_vocab.len(), 6);
        for p in &with_vocab {
            p.validate().unwrap();
        }
        let opinion = patterns_from_s2(pair, &s, &TermSpan::new(4, 4, O), &vocab_config(), O);
        assert!(opinion
            .iter()
            .all(|p| p.edges.iter().all(|e| e.gov != SlotSpec::Opinion && e.dep != SlotSpec::Opinion)));
    }

    #[test]
    fn s2_canonical_form_ignores_pair_order() {
        let s = i_like_the_screen();
        let term = TermSpan::new(4, 4, A);
        let ab = patterns_from_s2((&s.deps[0], &s.deps[1]), &s, &term, &vocab_config(), A);
        let ba = patterns_from_s2((&s.deps[1], &s.deps[0]), &s, &term, &vocab_config(), A);
        assert_eq!(ab, ba);
    }

    fn repeated(sentence: &ParsedSentence, n: usize) -> Vec<ParsedSentence> {
        vec![sentence.clone(); n]
    }

    #[test]
    fn frequency_threshold_is_strict() {
        let s = horrible_system();
        let target = RulePattern::s1(A, "nsubj", SlotSpec::Opinion, NOUN, End::Dep);
        let cfg = vocab_config();
        let eleven = generate_candidates(&repeated(&s, 11), &cfg, A).unwrap();
        assert!(eleven.iter().any(|c| c.pattern == target && c.support == 11));
        let ten = generate_candidates(&repeated(&s, 10), &cfg, A).unwrap();
        assert!(!ten.iter().any(|c| c.pattern == target));
        assert!(generate_candidates(&[], &cfg, A).unwrap().is_empty());
    }

    #[test]
    fn t_zero_on_horrible_system_includes_the_classic_rule() {
        let cfg = MiningConfig {
            frequency_threshold: 0,
            ..vocab_config()
        };
        let c = generate_candidates(&[horrible_system()], &cfg, A).unwrap();
        assert!(c
            .iter()
            .any(|c| c.pattern == RulePattern::s1(A, "nsubj", SlotSpec::Opinion, NOUN, End::Dep)));
        // S1 block precedes S2 block.
        let first_s2 = c.iter().position(|c| c.pattern.arity() == Arity::S2).unwrap();
        assert!(c[first_s2..].iter().all(|c| c.pattern.arity() == Arity::S2));
        assert!(c[..first_s2].iter().all(|c| c.pattern.arity() == Arity::S1));
    }

    #[test]
    fn guard_aborts() {
        let cfg = MiningConfig {
            frequency_threshold: 0,
            max_candidates_guard: 3,
            ..vocab_config()
        };
        assert_eq!(
            generate_candidates(&[horrible_system()], &cfg, A),
            Err(MiningError::CandidateGuard { limit: 3 })
        );
    }

    #[test]
    fn filtering_keeps_precise_rules() {
        let cfg = MiningConfig {
            frequency_threshold: 0,
            dictionary_min_count: 1,
            ..vocab_config()
        };
        let train = vec![horrible_system()];
        let candidates = generate_candidates(&train, &cfg, A).unwrap();
        let rs = filter_candidates(&candidates, &train, &train, &cfg, A).unwrap();
        assert!(rs.rules.iter().all(|r| r.precision >= cfg.precision_threshold));
        assert!(rs
            .rules
            .iter()
            .any(|r| r.pattern == RulePattern::s1(A, "nsubj", SlotSpec::Opinion, NOUN, End::Dep)));
        assert!(rs.dictionary.contains("system"));
        assert!(rs.dictionary.is_disjoint(&rs.v_fil));
        assert_eq!(
            filter_candidates(&candidates, &[], &train, &cfg, A),
            Err(MiningError::EmptyValidation)
        );
    }

    #[test]
    fn precision_arithmetic_and_zero_extraction_drop() {
        // 10 validation sentences, 8 with "system" gold.
        let cfg = vocab_config();
        let mut val = Vec::new();
        for i in 0..10 {
            let mut s = horrible_system();
            if i >= 8 {
                s.set_terms(A, vec![]).unwrap();
            }
            val.push(s);
        }
        let c = Candidate {
            pattern: RulePattern::s1(A, "nsubj", SlotSpec::Opinion, NOUN, End::Dep),
            support: 20,
        };
        let never = Candidate {
            pattern: RulePattern::s1(A, "dobj", SlotSpec::Opinion, NOUN, End::Dep),
            support: 20,
        };
        let rs = filter_candidates(&[c, never], &val, &[], &cfg, A).unwrap();
        assert_eq!(rs.rules.len(), 1);
        assert_eq!(rs.rules[0].precision, 0.8);
    }

    #[test]
    fn v_fil_holds_always_wrong_terms() {
        let cfg = MiningConfig {
            frequency_threshold: 0,
            ..vocab_config()
        };
        let good = horrible_system();
        let mut bad = ParsedSentence::from_parts(
            &[("The", "DT"), ("weather", "NN"), ("is", "VBZ"), ("horrible", "JJ")],
            &[("det", 2, 1), ("nsubj", 4, 2), ("cop", 4, 3)],
        );
        bad.set_terms(A, vec![]).unwrap();
        let train = vec![good.clone(), bad];
        let cands = vec![Candidate {
            pattern: RulePattern::s1(A, "nsubj", SlotSpec::Opinion, NOUN, End::Dep),
            support: 2,
        }];
        let rs = filter_candidates(&cands, &[good], &train, &cfg, A).unwrap();
        assert_eq!(rs.v_fil, BTreeSet::from(["weather".to_string()]));
    }

    #[test]
    fn json_round_trip_is_stable() {
        let cfg = MiningConfig {
            frequency_threshold: 0,
            dictionary_min_count: 1,
            ..vocab_config()
        };
        let train = vec![horrible_system(), i_like_the_screen()];
        let rs = mine_rules(&train, &train, &cfg, A).unwrap();
        assert!(rs.rules.iter().any(|r| r.pattern.arity() == Arity::S2));
        let json = rs.to_json();
        let back = RuleSet::from_json(&json).unwrap();
        assert_eq!(back, rs);
        assert_eq!(back.to_json(), json);
        assert!(json.contains("\"type\": \"opinion\""));
    }

    #[test]
    fn invalid_patterns_are_rejected_on_load() {
        let json = r#"{"kind":"opinion","dictionary":[],"v_fil":[],"patterns":[
            {"arity":"S1","edges":[{"rel":"amod","gov":{"type":"class","value":"noun"},"dep":{"type":"opinion"}}],
             "target":{"edge":0,"end":"gov"},"precision":1.0,"support":3}]}"#;
        assert!(matches!(RuleSet::from_json(json), Err(MiningError::InvalidPattern(_))));
    }

    #[test]
    fn display_reads_like_the_notation() {
        let p = RulePattern::s1(A, "nsubj", SlotSpec::Opinion, NOUN, End::Dep);
        assert_eq!(p.to_string(), "(nsubj, O, noun*)");
        let p = RulePattern::s1(A, "dobj", word("has"), NOUN, End::Dep);
        assert_eq!(p.to_string(), "(dobj, \"has\", noun*)");
    }
}
