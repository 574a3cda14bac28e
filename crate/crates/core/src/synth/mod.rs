//! Synthetic corpora: planted-pattern fixtures, random parsed sentences and
//! rules for property tests, and a small review domain for end-to-end runs.

mod planted;
mod review;

use std::collections::{BTreeSet, HashSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{ParsedSentence, TermKind, TermSpan};
use crate::mining::{target_classes, word_class, End, EdgeTemplate, MinedRule, RulePattern, RuleSet, SlotRef, SlotSpec};

pub use planted::{planted_corpus, PlantedCorpus, PlantedSpec, SynthError};
pub use review::{ReviewSpec, ReviewWorld};

const SYLLABLES: &[&str] = &[
    "ba", "ko", "ri", "te", "mu", "sa", "lo", "ne", "pi", "du", "ga", "fe", "zo", "ki", "ma", "vu", "ro", "shi", "ta", "le",
];

/// Pseudo-words that are never handed out twice.
#[derive(Debug, Default)]
pub struct WordFactory {
    used: HashSet<String>,
}

impl WordFactory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Reserves words so they are never generated.
    pub fn reserve<I: IntoIterator<Item = S>, S: Into<String>>(&mut self, words: I) {
        self.used.extend(words.into_iter().map(Into::into));
    }

    pub fn fresh<R: Rng>(&mut self, rng: &mut R) -> String {
        let mut syllables = 2;
        loop {
            for _ in 0..20 {
                let w: String = (0..syllables).map(|_| *SYLLABLES.choose(rng).expect("non-empty")).collect();
                if self.used.insert(w.clone()) {
                    return w;
                }
            }
            syllables += 1;
        }
    }
}

/// Incremental sentence construction with 1-based token indices.
#[derive(Debug, Default, Clone)]
pub(crate) struct Builder {
    words: Vec<(String, String)>,
    deps: Vec<(String, usize, usize)>,
    aspects: Vec<(usize, usize)>,
    opinions: Vec<(usize, usize)>,
}

impl Builder {
    pub fn word(&mut self, surface: &str, pos: &str) -> usize {
        self.words.push((surface.to_string(), pos.to_string()));
        self.words.len()
    }

    pub fn dep(&mut self, rel: &str, gov: usize, dep: usize) {
        self.deps.push((rel.to_string(), gov, dep));
    }

    pub fn term(&mut self, kind: TermKind, start: usize, end: usize) {
        match kind {
            TermKind::Aspect => self.aspects.push((start, end)),
            TermKind::Opinion => self.opinions.push((start, end)),
        }
    }

    pub fn build(self) -> ParsedSentence {
        let words: Vec<(&str, &str)> = self.words.iter().map(|(w, p)| (w.as_str(), p.as_str())).collect();
        let deps: Vec<(&str, usize, usize)> = self.deps.iter().map(|(r, g, d)| (r.as_str(), *g, *d)).collect();
        let mut s = ParsedSentence::from_parts(&words, &deps);
        let spans = |v: &[(usize, usize)], k| v.iter().map(|&(a, b)| TermSpan::new(a, b, k)).collect();
        s.set_terms(TermKind::Aspect, spans(&self.aspects, TermKind::Aspect))
            .expect("builder spans are valid");
        s.set_terms(TermKind::Opinion, spans(&self.opinions, TermKind::Opinion))
            .expect("builder spans are valid");
        s
    }
}

pub const RANDOM_TAGS: &[&str] = &["NN", "NNS", "VB", "VBZ", "JJ", "RB", "DT", "IN"];

/// Shape of [`random_corpus`] output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomCorpusSpec {
    pub sentences: usize,
    pub max_tokens: usize,
    /// Distinct word forms.
    pub vocabulary: usize,
    /// Distinct relation labels.
    pub relations: usize,
    /// Chance that a token starts a gold term.
    pub term_rate: f64,
}

impl Default for RandomCorpusSpec {
    fn default() -> Self {
        Self {
            sentences: 50,
            max_tokens: 12,
            vocabulary: 15,
            relations: 4,
            term_rate: 0.25,
        }
    }
}

/// Random single-head trees over a small vocabulary, with random
/// non-overlapping aspect and opinion spans of length 1 or 2. Small
/// vocabularies make repeated patterns likely.
pub fn random_corpus<R: Rng>(spec: &RandomCorpusSpec, rng: &mut R) -> Vec<ParsedSentence> {
    let vocab: Vec<(String, &str)> = (0..spec.vocabulary.max(1))
        .map(|i| (format!("w{i}"), *RANDOM_TAGS.choose(rng).expect("non-empty")))
        .collect();
    let rels: Vec<String> = (0..spec.relations.max(1)).map(|i| format!("r{i}")).collect();
    (0..spec.sentences)
        .map(|_| {
            let n = rng.random_range(1..=spec.max_tokens.max(1));
            let mut b = Builder::default();
            for _ in 0..n {
                let (w, own) = vocab.choose(rng).expect("non-empty");
                let pos = if rng.random_bool(0.8) {
                    own
                } else {
                    RANDOM_TAGS.choose(rng).expect("non-empty")
                };
                // Vary case so lowercasing matters.
                let surface = if rng.random_bool(0.1) { w.to_uppercase() } else { w.clone() };
                b.word(&surface, pos);
            }
            // Attach tokens in a random order, each to one placed earlier.
            let mut order: Vec<usize> = (1..=n).collect();
            order.shuffle(rng);
            for k in 1..n {
                let gov = order[rng.random_range(0..k)];
                b.dep(rels.choose(rng).expect("non-empty"), gov, order[k]);
            }
            let mut taken = vec![false; n + 2];
            for kind in TermKind::ALL {
                let mut i = 1;
                while i <= n {
                    if !taken[i] && rng.random_bool(spec.term_rate) {
                        let end = if i < n && !taken[i + 1] && rng.random_bool(0.3) { i + 1 } else { i };
                        for t in &mut taken[i..=end] {
                            *t = true;
                        }
                        b.term(kind, i, end);
                        i = end + 1;
                    } else {
                        i += 1;
                    }
                }
            }
            b.build()
        })
        .collect()
}

fn random_slot<R: Rng>(rng: &mut R, sentence: &ParsedSentence, token: usize, kind: TermKind, vocab: &BTreeSet<String>) -> SlotSpec {
    let t = sentence.token(token).expect("edge ends are in range");
    let lower = t.surface.to_lowercase();
    let roll = rng.random_range(0..10);
    match roll {
        0..=3 => SlotSpec::Word(lower),
        4..=7 => SlotSpec::Pos(t.pos.clone()),
        8 if kind == TermKind::Aspect && vocab.contains(&lower) => SlotSpec::Opinion,
        _ => SlotSpec::Pos((*RANDOM_TAGS.choose(rng).expect("non-empty")).to_string()),
    }
}

fn random_target<R: Rng>(rng: &mut R, sentence: &ParsedSentence, token: usize, kind: TermKind) -> SlotSpec {
    let class = word_class(&sentence.token(token).expect("in range").pos);
    if target_classes(kind).contains(&class) && rng.random_bool(0.8) {
        SlotSpec::Class(class)
    } else {
        SlotSpec::Class(*target_classes(kind).choose(rng).expect("non-empty"))
    }
}

/// A rule read off a random edge or edge pair of a random sentence, with
/// each slot generalized at random. Such rules match often enough to make
/// equivalence tests meaningful. Returns `None` when no sentence has edges.
pub fn random_rule<R: Rng>(
    rng: &mut R,
    sentences: &[ParsedSentence],
    kind: TermKind,
    vocab: &BTreeSet<String>,
) -> Option<RulePattern> {
    let with_edges: Vec<&ParsedSentence> = sentences.iter().filter(|s| !s.deps.is_empty()).collect();
    let s = *with_edges.choose(rng)?;
    let i = rng.random_range(0..s.deps.len());
    let e0 = &s.deps[i];
    let pairs: Vec<usize> = (0..s.deps.len())
        .filter(|&j| j != i && e0.shared_token(&s.deps[j]).is_some())
        .collect();
    if pairs.is_empty() || rng.random_bool(0.4) {
        let end = if rng.random_bool(0.5) { End::Gov } else { End::Dep };
        let (gov, dep) = match end {
            End::Gov => (random_target(rng, s, e0.governor, kind), random_slot(rng, s, e0.dependent, kind, vocab)),
            End::Dep => (random_slot(rng, s, e0.governor, kind, vocab), random_target(rng, s, e0.dependent, kind)),
        };
        return Some(RulePattern::s1(kind, &e0.relation, gov, dep, end));
    }
    let e1 = &s.deps[*pairs.choose(rng).expect("non-empty")];
    let shared = e0.shared_token(e1).expect("filtered");
    let end_of = |e: &crate::corpus::DependencyEdge, tok: usize| if e.governor == tok { End::Gov } else { End::Dep };
    let refs = [
        (SlotRef::new(0, End::Gov), e0.governor),
        (SlotRef::new(0, End::Dep), e0.dependent),
        (SlotRef::new(1, End::Gov), e1.governor),
        (SlotRef::new(1, End::Dep), e1.dependent),
    ];
    let (target_ref, target_tok) = *refs.choose(rng).expect("non-empty");
    let shared_spec = if target_tok == shared {
        random_target(rng, s, shared, kind)
    } else {
        random_slot(rng, s, shared, kind, vocab)
    };
    let mut specs = Vec::new();
    for (r, tok) in refs {
        specs.push(if tok == shared {
            shared_spec.clone()
        } else if r == target_ref {
            random_target(rng, s, tok, kind)
        } else {
            random_slot(rng, s, tok, kind, vocab)
        });
    }
    let template = |e: &crate::corpus::DependencyEdge, g: &SlotSpec, d: &SlotSpec| EdgeTemplate {
        rel: e.relation.clone(),
        gov: g.clone(),
        dep: d.clone(),
    };
    Some(RulePattern::s2(
        kind,
        [template(e0, &specs[0], &specs[1]), template(e1, &specs[2], &specs[3])],
        target_ref,
        (SlotRef::new(0, end_of(e0, shared)), SlotRef::new(1, end_of(e1, shared))),
    ))
}

/// `n` distinct random rules wrapped as a rule set with precision 1.
pub fn random_ruleset<R: Rng>(
    rng: &mut R,
    sentences: &[ParsedSentence],
    kind: TermKind,
    vocab: &BTreeSet<String>,
    n: usize,
) -> RuleSet {
    let mut seen = BTreeSet::new();
    let mut rules = Vec::new();
    let mut attempts = 0;
    while rules.len() < n && attempts < n * 100 {
        attempts += 1;
        let Some(p) = random_rule(rng, sentences, kind, vocab) else {
            break;
        };
        if seen.insert(p.clone()) {
            rules.push(MinedRule {
                pattern: p,
                precision: 1.0,
                support: 0,
            });
        }
    }
    RuleSet {
        kind,
        rules,
        dictionary: BTreeSet::new(),
        v_fil: BTreeSet::new(),
        opinion_vocabulary: vocab.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn factory_never_repeats() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut f = WordFactory::new();
        f.reserve(["bako"]);
        let words: HashSet<String> = (0..2000).map(|_| f.fresh(&mut rng)).collect();
        assert_eq!(words.len(), 2000);
        assert!(!words.contains("bako"));
    }

    #[test]
    fn random_corpus_respects_spec() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let spec = RandomCorpusSpec::default();
        let c = random_corpus(&spec, &mut rng);
        assert_eq!(c.len(), 50);
        for s in &c {
            assert!((1..=12).contains(&s.len()));
            assert_eq!(s.deps.len(), s.len() - 1);
            for a in &s.aspect_terms {
                assert!(s.opinion_terms.iter().all(|o| !o.overlaps(a)));
            }
        }
    }

    #[test]
    fn random_rules_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = random_corpus(&RandomCorpusSpec::default(), &mut rng);
        let vocab: BTreeSet<String> = ["w1", "w2"].iter().map(|s| s.to_string()).collect();
        let rs = random_ruleset(&mut rng, &c, TermKind::Aspect, &vocab, 100);
        assert_eq!(rs.rules.len(), 100);
        for r in &rs.rules {
            r.pattern.validate().unwrap();
        }
    }
}
