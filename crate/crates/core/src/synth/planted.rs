//! Corpora with a known set of extraction rules planted at fixed support.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Builder, WordFactory};
use crate::corpus::{ParsedSentence, TermKind};
use crate::mining::{End, EdgeTemplate, RulePattern, SlotRef, SlotSpec, WordClass};

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid synth spec: {0}")]
    Spec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantedSpec {
    pub seed: u64,
    pub kind: TermKind,
    /// Number of planted rules; shapes cycle through five templates.
    pub planted: usize,
    /// Training sentences per planted rule.
    pub support: usize,
    /// Frequency threshold the corpus is designed against.
    pub threshold: usize,
    pub noise_patterns: usize,
    pub noise_support: usize,
    /// Positive sentences per planted rule in validation and test.
    pub validation_support: usize,
    pub test_support: usize,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            kind: TermKind::Aspect,
            planted: 5,
            support: 20,
            threshold: 10,
            noise_patterns: 10,
            noise_support: 5,
            validation_support: 10,
            test_support: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedCorpus {
    pub train: Vec<ParsedSentence>,
    pub validation: Vec<ParsedSentence>,
    pub test: Vec<ParsedSentence>,
    pub planted: Vec<RulePattern>,
    pub noise: Vec<RulePattern>,
    pub opinion_vocabulary: BTreeSet<String>,
}

const RELATIONS: &[&str] = &[
    "nsubj", "dobj", "amod", "nmod", "compound", "advmod", "xcomp", "conj", "obl", "iobj", "acl", "appos", "ccomp",
    "csubj", "det", "case", "mark", "nummod", "parataxis", "cop", "aux", "cc", "expl", "flat", "fixed", "vocative",
    "discourse", "dislocated", "orphan", "list",
];

/// Non-noun, non-adjective tags for context words, so a context word
/// never joins a noun term and never looks like an opinion target.
const CONTEXT_TAGS: &[&str] = &["VB", "VBD", "VBZ", "VBG", "VBN", "VBP", "RB", "IN", "MD", "DT", "PRP", "CD", "RP", "UH"];

struct Relations(usize);

impl Relations {
    fn next(&mut self) -> String {
        let i = self.0;
        self.0 += 1;
        match RELATIONS.get(i) {
            Some(r) => r.to_string(),
            None => format!("dep:{i}"),
        }
    }
}

/// One planted rule plus generators for its positive and negative sentences.
struct Plant {
    pattern: RulePattern,
    shape: usize,
    rels: Vec<String>,
    /// Tags or words cycled through to keep non-planted variants rare.
    pool: Vec<String>,
    fixed_word: Option<String>,
}

fn target_tag(kind: TermKind) -> (&'static str, WordClass) {
    match kind {
        TermKind::Aspect => ("NN", WordClass::Noun),
        TermKind::Opinion => ("JJ", WordClass::Adjective),
    }
}

fn tmpl(rel: &str, gov: SlotSpec, dep: SlotSpec) -> EdgeTemplate {
    EdgeTemplate {
        rel: rel.to_string(),
        gov,
        dep,
    }
}

impl Plant {
    fn positive(&self, i: usize, kind: TermKind, words: &mut WordFactory, rng: &mut ChaCha8Rng) -> ParsedSentence {
        let (tt, _) = target_tag(kind);
        let mut b = Builder::default();
        let cyc = &self.pool[i % self.pool.len()];
        match self.shape {
            0 => {
                let c = b.word(&words.fresh(rng), "VBP");
                let t = b.word(&words.fresh(rng), tt);
                b.dep(&self.rels[0], c, t);
                b.term(kind, t, t);
            }
            1 => {
                // Opinion word from the vocabulary, tag cycled.
                let t = b.word(&words.fresh(rng), tt);
                let o_word = &self.pool[i % self.pool.len()];
                let tag = CONTEXT_TAGS[i % 3];
                let o = b.word(o_word, tag);
                b.dep(&self.rels[0], t, o);
                b.term(kind, t, t);
            }
            2 => {
                let c = b.word(self.fixed_word.as_deref().expect("shape 2 has a word"), cyc);
                let t = b.word(&words.fresh(rng), tt);
                b.dep(&self.rels[0], c, t);
                b.term(kind, t, t);
            }
            3 => {
                let x = b.word(&words.fresh(rng), "PRP");
                let v = b.word(&words.fresh(rng), "VBP");
                let t = b.word(&words.fresh(rng), tt);
                b.dep(&self.rels[0], v, x);
                b.dep(&self.rels[1], v, t);
                b.term(kind, t, t);
            }
            _ => {
                let x = b.word(&words.fresh(rng), "DT");
                let t = b.word(&words.fresh(rng), tt);
                let y = b.word(&words.fresh(rng), "RB");
                b.dep(&self.rels[0], t, x);
                b.dep(&self.rels[1], t, y);
                b.term(kind, t, t);
            }
        }
        b.build()
    }

    /// Sentences with only one edge of an S2 shape and no gold term. They
    /// keep the single-edge sub-pattern below the precision threshold.
    fn negatives(&self, kind: TermKind, words: &mut WordFactory, rng: &mut ChaCha8Rng) -> Vec<ParsedSentence> {
        let (tt, _) = target_tag(kind);
        match self.shape {
            3 => {
                let mut b = Builder::default();
                let v = b.word(&words.fresh(rng), "VBP");
                let t = b.word(&words.fresh(rng), tt);
                b.dep(&self.rels[1], v, t);
                vec![b.build()]
            }
            4 => {
                let mut a = Builder::default();
                let x = a.word(&words.fresh(rng), "DT");
                let t = a.word(&words.fresh(rng), tt);
                a.dep(&self.rels[0], t, x);
                let mut b = Builder::default();
                let t = b.word(&words.fresh(rng), tt);
                let y = b.word(&words.fresh(rng), "RB");
                b.dep(&self.rels[1], t, y);
                vec![a.build(), b.build()]
            }
            _ => Vec::new(),
        }
    }
}

fn make_plant(
    index: usize,
    spec: &PlantedSpec,
    rels: &mut Relations,
    words: &mut WordFactory,
    vocab: &mut BTreeSet<String>,
    rng: &mut ChaCha8Rng,
) -> Plant {
    let kind = spec.kind;
    let (_, class) = target_tag(kind);
    // Enough variants that each stays at or below the threshold.
    let variants = spec.support.div_ceil(spec.threshold.max(1)) + 1;
    let mut shape = index % 5;
    if shape == 1 && kind == TermKind::Opinion {
        // The opinion wildcard only exists for aspect rules.
        shape = 0;
    }
    let target = SlotSpec::Class(class);
    match shape {
        0 => {
            let r = rels.next();
            Plant {
                pattern: RulePattern::s1(kind, &r, SlotSpec::Pos("VBP".into()), target, End::Dep),
                shape,
                rels: vec![r],
                pool: vec![String::new()],
                fixed_word: None,
            }
        }
        1 => {
            let r = rels.next();
            let pool: Vec<String> = (0..variants.max(3)).map(|_| words.fresh(rng)).collect();
            vocab.extend(pool.iter().cloned());
            Plant {
                pattern: RulePattern::s1(kind, &r, target, SlotSpec::Opinion, End::Gov),
                shape,
                rels: vec![r],
                pool,
                fixed_word: None,
            }
        }
        2 => {
            let r = rels.next();
            let w = words.fresh(rng);
            Plant {
                pattern: RulePattern::s1(kind, &r, SlotSpec::Word(w.clone()), target, End::Dep),
                shape,
                rels: vec![r],
                pool: CONTEXT_TAGS[..variants.min(CONTEXT_TAGS.len())]
                    .iter()
                    .map(|s| s.to_string())
                    .collect(),
                fixed_word: Some(w),
            }
        }
        3 => {
            let (r0, r1) = (rels.next(), rels.next());
            let pattern = RulePattern::s2(
                kind,
                [
                    tmpl(&r0, SlotSpec::Pos("VBP".into()), SlotSpec::Pos("PRP".into())),
                    tmpl(&r1, SlotSpec::Pos("VBP".into()), target),
                ],
                SlotRef::new(1, End::Dep),
                (SlotRef::new(0, End::Gov), SlotRef::new(1, End::Gov)),
            );
            Plant {
                pattern,
                shape,
                rels: vec![r0, r1],
                pool: vec![String::new()],
                fixed_word: None,
            }
        }
        _ => {
            let (r0, r1) = (rels.next(), rels.next());
            let pattern = RulePattern::s2(
                kind,
                [
                    tmpl(&r0, target.clone(), SlotSpec::Pos("DT".into())),
                    tmpl(&r1, target, SlotSpec::Pos("RB".into())),
                ],
                SlotRef::new(0, End::Gov),
                (SlotRef::new(0, End::Gov), SlotRef::new(1, End::Gov)),
            );
            Plant {
                pattern,
                shape: 4,
                rels: vec![r0, r1],
                pool: vec![String::new()],
                fixed_word: None,
            }
        }
    }
}

/// Builds train, validation and test sets in which exactly the planted
/// rules clear frequency threshold `T` and precision 0.6.
///
/// Every non-planted generalization a planted sentence produces has
/// support at most `T`, except the single-edge halves of S2 shapes; those
/// are pushed to precision 1/3 by negative sentences in validation. Noise
/// rules are planted with `noise_support` sentences each on relations no
/// other rule uses.
pub fn planted_corpus(spec: &PlantedSpec) -> Result<PlantedCorpus, SynthError> {
    if spec.support <= spec.threshold {
        return Err(SynthError::Spec("support must exceed threshold".into()));
    }
    if spec.planted == 0 || spec.validation_support == 0 {
        return Err(SynthError::Spec("planted and validation_support must be positive".into()));
    }
    if spec.support.div_ceil(spec.threshold.max(1)) + 1 > CONTEXT_TAGS.len() {
        return Err(SynthError::Spec("support too large relative to threshold".into()));
    }
    let kind = spec.kind;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut words = WordFactory::new();
    let mut rels = Relations(0);
    let mut vocab = BTreeSet::new();
    let plants: Vec<Plant> = (0..spec.planted)
        .map(|i| make_plant(i, spec, &mut rels, &mut words, &mut vocab, &mut rng))
        .collect();

    let mut train = Vec::new();
    let mut validation = Vec::new();
    let mut test = Vec::new();
    for p in &plants {
        for i in 0..spec.support {
            train.push(p.positive(i, kind, &mut words, &mut rng));
        }
        for i in 0..spec.validation_support {
            validation.push(p.positive(i, kind, &mut words, &mut rng));
            for _ in 0..2 {
                validation.extend(p.negatives(kind, &mut words, &mut rng));
            }
        }
        for i in 0..spec.test_support {
            test.push(p.positive(i, kind, &mut words, &mut rng));
            test.extend(p.negatives(kind, &mut words, &mut rng));
        }
    }

    let (tt, class) = target_tag(kind);
    let mut noise = Vec::new();
    for j in 0..spec.noise_patterns {
        let r = rels.next();
        let tag = CONTEXT_TAGS[j % CONTEXT_TAGS.len()];
        noise.push(RulePattern::s1(kind, &r, SlotSpec::Pos(tag.into()), SlotSpec::Class(class), End::Dep));
        for _ in 0..spec.noise_support {
            let mut b = Builder::default();
            let c = b.word(&words.fresh(&mut rng), tag);
            let t = b.word(&words.fresh(&mut rng), tt);
            b.dep(&r, c, t);
            b.term(kind, t, t);
            train.push(b.build());
        }
    }
    train.shuffle(&mut rng);
    validation.shuffle(&mut rng);
    test.shuffle(&mut rng);

    Ok(PlantedCorpus {
        train,
        validation,
        test,
        planted: plants.into_iter().map(|p| p.pattern).collect(),
        noise,
        opinion_vocabulary: vocab,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mining::{mine_rules, MiningConfig};

    #[test]
    fn default_spec_recovers_exactly_the_planted_rules() {
        let c = planted_corpus(&PlantedSpec::default()).unwrap();
        assert_eq!(c.train.len(), 5 * 20 + 10 * 5);
        let config = MiningConfig::default().with_vocabulary(c.opinion_vocabulary.iter().cloned());
        let rules = mine_rules(&c.train, &c.validation, &config, TermKind::Aspect).unwrap();
        let got: BTreeSet<RulePattern> = rules.rules.iter().map(|r| r.pattern.clone()).collect();
        let want: BTreeSet<RulePattern> = c.planted.iter().cloned().collect();
        assert_eq!(got, want);
        assert!(rules.rules.iter().all(|r| r.precision == 1.0 && r.support == 20));
    }

    #[test]
    fn opinion_kind_works_too() {
        let spec = PlantedSpec {
            kind: TermKind::Opinion,
            seed: 3,
            ..Default::default()
        };
        let c = planted_corpus(&spec).unwrap();
        let rules = mine_rules(&c.train, &c.validation, &MiningConfig::default(), TermKind::Opinion).unwrap();
        assert_eq!(rules.rules.len(), 5);
    }

    #[test]
    fn rejects_support_below_threshold() {
        let spec = PlantedSpec {
            support: 10,
            ..Default::default()
        };
        assert!(planted_corpus(&spec).is_err());
    }
}
