//! A toy product-review language with parses and gold terms.
//!
//! Aspect phrases are single nouns, noun compounds, or adjective-noun
//! pairs whose adjective belongs to the term. Opinions are adjectives or
//! verbs. Distractor nouns and neutral adjectives sit in the same syntactic
//! positions, so dependency rules make some mistakes.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array1;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Builder;
use crate::corpus::{ParsedSentence, TermKind};
use crate::tagger::EmbeddingTable;

const ASPECT_NOUNS: &[&str] = &[
    "screen", "battery", "keyboard", "trackpad", "speaker", "camera", "processor", "charger", "display", "price",
    "service", "staff", "menu", "pizza", "sushi", "waiter", "waitress", "dessert", "salad", "pasta", "wine", "coffee",
    "atmosphere", "decor", "music", "portion", "bread", "soup", "steak", "burger", "fries", "sauce", "chicken",
    "fish", "rice", "noodles", "appetizer", "bartender", "host", "manager", "table", "patio", "restroom", "parking",
    "memory", "graphics", "fan", "hinge", "case", "port", "webcam", "microphone", "mouse", "touchpad", "software",
    "driver", "warranty", "design", "weight", "size", "resolution", "brightness", "performance", "speed", "storage",
    "build", "finish", "lid", "backlight", "cable", "adapter", "sound", "volume", "interface", "installation",
    "setup", "packaging", "delivery", "support", "tea", "tacos", "curry", "cheese", "bagel", "lobster", "oysters",
];

const COMPOUND_HEADS: &[(&str, &str)] = &[
    ("battery", "life"),
    ("hard", "drive"),
    ("customer", "service"),
    ("wine", "list"),
    ("operating", "system"),
    ("power", "supply"),
    ("sound", "quality"),
    ("delivery", "time"),
    ("screen", "resolution"),
    ("boot", "time"),
    ("dinner", "menu"),
    ("lunch", "special"),
    ("key", "travel"),
    ("fan", "noise"),
    ("tech", "support"),
];

const MODIFIED_ASPECTS: &[(&str, &str)] = &[
    ("external", "microphone"),
    ("optical", "drive"),
    ("wireless", "mouse"),
    ("extended", "warranty"),
    ("integrated", "graphics"),
    ("fried", "rice"),
    ("iced", "tea"),
    ("mashed", "potatoes"),
    ("onboard", "speakers"),
    ("spicy", "tuna"),
];

const OPINION_ADJ: &[&str] = &[
    "great", "terrible", "amazing", "awful", "excellent", "poor", "fantastic", "horrible", "good", "bad", "slow",
    "fast", "delicious", "bland", "friendly", "rude", "superb", "mediocre", "perfect", "disappointing", "lovely",
    "nasty", "wonderful", "crappy", "decent", "outstanding", "sluggish", "responsive", "stunning", "dull",
    "attentive", "overpriced", "reasonable", "tasty", "stale", "crisp", "flimsy", "sturdy", "noisy", "quiet",
    "gorgeous", "ugly", "reliable", "buggy", "smooth", "laggy", "fresh", "greasy", "impressive", "weak",
];

const OPINION_VERBS: &[&str] = &["love", "hate", "like", "enjoy", "dislike", "adore", "recommend", "loved", "hated"];

const NEUTRAL_ADJ: &[&str] = &[
    "new", "black", "small", "large", "old", "red", "white", "big", "first", "second", "other", "whole", "silver",
    "square", "round", "thin", "thick", "same", "usual", "main",
];

const DISTRACTOR_NOUNS: &[&str] = &[
    "day", "friend", "wife", "time", "week", "store", "year", "night", "son", "brother", "husband", "trip",
    "birthday", "weekend", "sister", "mom", "dad", "boss", "morning", "evening",
];

const NEUTRAL_VERBS: &[&str] = &["bought", "got", "ordered", "received", "returned", "used", "tried", "picked"];

const FUNCTION_WORDS: &[(&str, &str)] = &[
    ("the", "DT"),
    ("a", "DT"),
    ("is", "VBZ"),
    ("was", "VBD"),
    ("are", "VBP"),
    ("not", "RB"),
    ("i", "PRP"),
    ("it", "PRP"),
    ("has", "VBZ"),
    ("and", "CC"),
    ("for", "IN"),
    ("my", "PRP$"),
    ("very", "RB"),
    (".", "."),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReviewSpec {
    pub seed: u64,
    pub gold_train: usize,
    pub gold_validation: usize,
    pub test: usize,
    pub unlabeled: usize,
    pub embedding_dim: usize,
    /// Weight of the shared per-class direction in each word vector; the
    /// rest is word-specific noise of unit scale.
    pub class_signal: f64,
}

impl Default for ReviewSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            gold_train: 50,
            gold_validation: 50,
            test: 400,
            unlabeled: 5000,
            embedding_dim: 24,
            class_signal: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReviewWorld {
    pub gold_train: Vec<ParsedSentence>,
    pub gold_validation: Vec<ParsedSentence>,
    pub test: Vec<ParsedSentence>,
    /// Parsed sentences for rule labeling. Gold spans are kept so rule
    /// precision can be measured; training code should not read them.
    pub unlabeled: Vec<ParsedSentence>,
    pub opinion_vocabulary: BTreeSet<String>,
    pub embeddings: EmbeddingTable,
}

struct Gen<'r> {
    rng: &'r mut ChaCha8Rng,
}

impl Gen<'_> {
    fn pick<'a>(&mut self, xs: &'a [&'a str]) -> &'a str {
        xs.choose(self.rng).expect("non-empty")
    }

    /// Adds an aspect phrase; returns its head index and span.
    fn aspect(&mut self, b: &mut Builder) -> (usize, usize, usize) {
        let roll = self.rng.random_range(0..10);
        if roll < 7 {
            let i = b.word(self.pick(ASPECT_NOUNS), "NN");
            (i, i, i)
        } else if roll < 9 {
            let (m, h) = *COMPOUND_HEADS.choose(self.rng).expect("non-empty");
            let mi = b.word(m, "NN");
            let hi = b.word(h, "NN");
            b.dep("compound", hi, mi);
            (hi, mi, hi)
        } else {
            let (m, h) = *MODIFIED_ASPECTS.choose(self.rng).expect("non-empty");
            let mi = b.word(m, "JJ");
            let hi = b.word(h, "NN");
            b.dep("amod", hi, mi);
            (hi, mi, hi)
        }
    }

    fn copula(&mut self) -> (&'static str, &'static str) {
        if self.rng.random_bool(0.5) {
            ("is", "VBZ")
        } else {
            ("was", "VBD")
        }
    }

    fn sentence(&mut self) -> ParsedSentence {
        let mut b = Builder::default();
        let roll = self.rng.random_range(0..100);
        let asp = TermKind::Aspect;
        let op = TermKind::Opinion;
        match roll {
            // the A is (not) (very) O .
            0..=29 => {
                let det = b.word("the", "DT");
                let (a, s, e) = self.aspect(&mut b);
                b.dep("det", a, det);
                let (cw, ct) = self.copula();
                let cop = b.word(cw, ct);
                let neg = self.rng.random_bool(0.2).then(|| b.word("not", "RB"));
                let very = self.rng.random_bool(0.2).then(|| b.word("very", "RB"));
                let o = b.word(self.pick(OPINION_ADJ), "JJ");
                let p = b.word(".", ".");
                b.dep("nsubj", o, a);
                b.dep("cop", o, cop);
                if let Some(n) = neg {
                    b.dep("neg", o, n);
                }
                if let Some(v) = very {
                    b.dep("advmod", o, v);
                }
                b.dep("punct", o, p);
                b.term(asp, s, e);
                b.term(op, o, o);
            }
            // i V_op the A .
            30..=44 => {
                let i = b.word("i", "PRP");
                let v = b.word(self.pick(OPINION_VERBS), "VBP");
                let det = b.word("the", "DT");
                let (a, s, e) = self.aspect(&mut b);
                let p = b.word(".", ".");
                b.dep("nsubj", v, i);
                b.dep("dobj", v, a);
                b.dep("det", a, det);
                b.dep("punct", v, p);
                b.term(asp, s, e);
                b.term(op, v, v);
            }
            // it has a O A .
            45..=59 => {
                let it = b.word("it", "PRP");
                let has = b.word("has", "VBZ");
                let det = b.word("a", "DT");
                let o = b.word(self.pick(OPINION_ADJ), "JJ");
                let (a, s, e) = self.aspect(&mut b);
                let p = b.word(".", ".");
                b.dep("nsubj", has, it);
                b.dep("dobj", has, a);
                b.dep("det", a, det);
                b.dep("amod", a, o);
                b.dep("punct", has, p);
                b.term(asp, s, e);
                b.term(op, o, o);
            }
            // the A is NEU .
            60..=69 => {
                let det = b.word("the", "DT");
                let (a, s, e) = self.aspect(&mut b);
                b.dep("det", a, det);
                let (cw, ct) = self.copula();
                let cop = b.word(cw, ct);
                let o = b.word(self.pick(NEUTRAL_ADJ), "JJ");
                let p = b.word(".", ".");
                b.dep("nsubj", o, a);
                b.dep("cop", o, cop);
                b.dep("punct", o, p);
                b.term(asp, s, e);
            }
            // the N was O .
            70..=79 => {
                let det = b.word("the", "DT");
                let n = b.word(self.pick(DISTRACTOR_NOUNS), "NN");
                let (cw, ct) = self.copula();
                let cop = b.word(cw, ct);
                let o = b.word(self.pick(OPINION_ADJ), "JJ");
                let p = b.word(".", ".");
                b.dep("det", n, det);
                b.dep("nsubj", o, n);
                b.dep("cop", o, cop);
                b.dep("punct", o, p);
                b.term(op, o, o);
            }
            // i V_neu the A for my N .
            80..=89 => {
                let i = b.word("i", "PRP");
                let v = b.word(self.pick(NEUTRAL_VERBS), "VBD");
                let det = b.word("the", "DT");
                let (a, s, e) = self.aspect(&mut b);
                let f = b.word("for", "IN");
                let my = b.word("my", "PRP$");
                let n = b.word(self.pick(DISTRACTOR_NOUNS), "NN");
                let p = b.word(".", ".");
                b.dep("nsubj", v, i);
                b.dep("dobj", v, a);
                b.dep("det", a, det);
                b.dep("case", n, f);
                b.dep("nmod:poss", n, my);
                b.dep("nmod", v, n);
                b.dep("punct", v, p);
                b.term(asp, s, e);
            }
            // the A and the A2 are O .
            _ => {
                let d1 = b.word("the", "DT");
                let (a1, s1, e1) = self.aspect(&mut b);
                let cc = b.word("and", "CC");
                let d2 = b.word("the", "DT");
                let (a2, s2, e2) = self.aspect(&mut b);
                let cop = b.word("are", "VBP");
                let o = b.word(self.pick(OPINION_ADJ), "JJ");
                let p = b.word(".", ".");
                b.dep("det", a1, d1);
                b.dep("det", a2, d2);
                b.dep("cc", a2, cc);
                b.dep("conj", a1, a2);
                b.dep("nsubj", o, a1);
                b.dep("cop", o, cop);
                b.dep("punct", o, p);
                // The same aspect twice gives a legal but odd sentence.
                b.term(asp, s1, e1);
                b.term(asp, s2, e2);
                b.term(op, o, o);
            }
        }
        b.build()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum WordGroup {
    Aspect,
    OpinionAdj,
    OpinionVerb,
    NeutralAdj,
    Distractor,
    NeutralVerb,
    Function(usize),
}

fn lexicon() -> BTreeMap<String, WordGroup> {
    let mut m = BTreeMap::new();
    let mut add = |w: &str, g| {
        m.entry(w.to_string()).or_insert(g);
    };
    for w in ASPECT_NOUNS {
        add(w, WordGroup::Aspect);
    }
    for (a, b) in COMPOUND_HEADS.iter().chain(MODIFIED_ASPECTS) {
        add(a, WordGroup::Aspect);
        add(b, WordGroup::Aspect);
    }
    for w in OPINION_ADJ {
        add(w, WordGroup::OpinionAdj);
    }
    for w in OPINION_VERBS {
        add(w, WordGroup::OpinionVerb);
    }
    for w in NEUTRAL_ADJ {
        add(w, WordGroup::NeutralAdj);
    }
    for w in DISTRACTOR_NOUNS {
        add(w, WordGroup::Distractor);
    }
    for w in NEUTRAL_VERBS {
        add(w, WordGroup::NeutralVerb);
    }
    for (i, (w, _)) in FUNCTION_WORDS.iter().enumerate() {
        add(w, WordGroup::Function(i));
    }
    m
}

impl ReviewWorld {
    pub fn generate(spec: &ReviewSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut gen = Gen { rng: &mut rng };
        let mut take = |n: usize| (0..n).map(|_| gen.sentence()).collect::<Vec<_>>();
        let gold_train = take(spec.gold_train);
        let gold_validation = take(spec.gold_validation);
        let test = take(spec.test);
        let unlabeled = take(spec.unlabeled);

        let d = spec.embedding_dim.max(1);
        let scale = 1.0 / (d as f64).sqrt();
        let normal = |rng: &mut ChaCha8Rng| -> Array1<f64> {
            Array1::from_shape_fn(d, |_| {
                let z: f64 = StandardNormal.sample(rng);
                z * scale
            })
        };
        let lex = lexicon();
        let mut class_dirs: BTreeMap<WordGroup, Array1<f64>> = BTreeMap::new();
        let mut words = Vec::new();
        let mut rows = Vec::new();
        for (w, g) in &lex {
            let dir = class_dirs.entry(*g).or_insert_with(|| normal(&mut rng)).clone();
            let v = normal(&mut rng) + dir * spec.class_signal;
            words.push(w.clone());
            rows.push(v.to_vec());
        }
        let embeddings = EmbeddingTable::from_rows(words, rows, d).expect("positive dimension");
        let opinion_vocabulary = OPINION_ADJ.iter().chain(OPINION_VERBS).map(|s| s.to_string()).collect();
        Self {
            gold_train,
            gold_validation,
            test,
            unlabeled,
            opinion_vocabulary,
            embeddings,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sentences_are_trees_with_known_words() {
        let w = ReviewWorld::generate(&ReviewSpec {
            unlabeled: 300,
            ..Default::default()
        });
        for s in w.gold_train.iter().chain(&w.unlabeled) {
            assert!(!s.malformed, "{:?}", s.words());
            assert_eq!(s.deps.len(), s.len() - 1);
            for t in &s.tokens {
                assert_ne!(w.embeddings.lookup(&t.surface), 0, "{}", t.surface);
            }
        }
        assert_eq!(w.unlabeled.len(), 300);
    }
}
