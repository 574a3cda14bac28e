//! Exact-span precision, recall and F1.

use serde::{Deserialize, Serialize};

use crate::apply::{apply_ruleset, ApplyOptions};
use crate::corpus::{ParsedSentence, TermKind, TermSpan};
use crate::mining::RuleSet;

/// Micro-averaged match counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanCounts {
    pub correct: usize,
    pub predicted: usize,
    pub gold: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl SpanCounts {
    /// Counts for one sentence. A prediction is correct when an identical
    /// (start, end, kind) gold span exists that has not been matched yet.
    pub fn of(predicted: &[TermSpan], gold: &[TermSpan]) -> Self {
        let mut unmatched: Vec<TermSpan> = gold.to_vec();
        let mut correct = 0;
        for p in predicted {
            if let Some(i) = unmatched.iter().position(|g| g == p) {
                unmatched.swap_remove(i);
                correct += 1;
            }
        }
        Self {
            correct,
            predicted: predicted.len(),
            gold: gold.len(),
        }
    }

    pub fn add(&mut self, other: SpanCounts) {
        self.correct += other.correct;
        self.predicted += other.predicted;
        self.gold += other.gold;
    }

    /// P = R = F1 = 1 when nothing is predicted and nothing is gold; a 0/0
    /// ratio is otherwise 0.
    pub fn prf(&self) -> Prf {
        if self.predicted == 0 && self.gold == 0 {
            return Prf {
                precision: 1.0,
                recall: 1.0,
                f1: 1.0,
            };
        }
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(self.correct, self.predicted);
        let recall = ratio(self.correct, self.gold);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Prf { precision, recall, f1 }
    }
}

impl std::iter::Sum for SpanCounts {
    fn sum<I: Iterator<Item = SpanCounts>>(iter: I) -> Self {
        iter.fold(SpanCounts::default(), |mut acc, c| {
            acc.add(c);
            acc
        })
    }
}

pub fn span_prf(predicted: &[TermSpan], gold: &[TermSpan]) -> Prf {
    SpanCounts::of(predicted, gold).prf()
}

/// Corpus-level scores: per-sentence counts summed, then one P/R/F1.
pub fn corpus_prf<'a, I>(pairs: I) -> (Prf, SpanCounts)
where
    I: IntoIterator<Item = (&'a [TermSpan], &'a [TermSpan])>,
{
    let counts: SpanCounts = pairs.into_iter().map(|(p, g)| SpanCounts::of(p, g)).sum();
    (counts.prf(), counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KindReport {
    pub p: f64,
    pub r: f64,
    pub f1: f64,
    pub n_pred: usize,
    pub n_gold: usize,
    pub n_correct: usize,
}

impl KindReport {
    pub fn from_counts(c: SpanCounts) -> Self {
        let prf = c.prf();
        Self {
            p: prf.precision,
            r: prf.recall,
            f1: prf.f1,
            n_pred: c.predicted,
            n_gold: c.gold,
            n_correct: c.correct,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub aspect: KindReport,
    pub opinion: KindReport,
}

impl EvalReport {
    pub fn get(&self, kind: TermKind) -> &KindReport {
        match kind {
            TermKind::Aspect => &self.aspect,
            TermKind::Opinion => &self.opinion,
        }
    }

    pub fn f1_sum(&self) -> f64 {
        self.aspect.f1 + self.opinion.f1
    }

    /// Fixed-width table for terminals.
    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<8} {:>7} {:>7} {:>7} {:>7} {:>7}\n",
            "kind", "P", "R", "F1", "#pred", "#gold"
        );
        for kind in TermKind::ALL {
            let r = self.get(kind);
            s.push_str(&format!(
                "{:<8} {:>7.4} {:>7.4} {:>7.4} {:>7} {:>7}\n",
                kind.as_str(),
                r.p,
                r.r,
                r.f1,
                r.n_pred,
                r.n_gold
            ));
        }
        s
    }

    /// Builds a report from per-sentence predicted and gold spans of both
    /// kinds.
    pub fn from_predictions(predicted: &[(Vec<TermSpan>, Vec<TermSpan>)], gold: &[(Vec<TermSpan>, Vec<TermSpan>)]) -> Self {
        let mut a = SpanCounts::default();
        let mut o = SpanCounts::default();
        for ((pa, po), (ga, go)) in predicted.iter().zip(gold) {
            a.add(SpanCounts::of(pa, ga));
            o.add(SpanCounts::of(po, go));
        }
        Self {
            aspect: KindReport::from_counts(a),
            opinion: KindReport::from_counts(o),
        }
    }
}

/// Scores rule extraction against annotated sentences.
pub fn evaluate_rules(
    aspect_rules: &RuleSet,
    opinion_rules: &RuleSet,
    test: &[ParsedSentence],
    options: ApplyOptions,
) -> EvalReport {
    let predicted: Vec<(Vec<TermSpan>, Vec<TermSpan>)> = test
        .iter()
        .map(|s| {
            let relabel = |v: Vec<TermSpan>, kind| v.into_iter().map(|sp| TermSpan { kind, ..sp }).collect();
            (
                relabel(apply_ruleset(s, aspect_rules, options), TermKind::Aspect),
                relabel(apply_ruleset(s, opinion_rules, options), TermKind::Opinion),
            )
        })
        .collect();
    let gold: Vec<(Vec<TermSpan>, Vec<TermSpan>)> = test
        .iter()
        .map(|s| (s.aspect_terms.clone(), s.opinion_terms.clone()))
        .collect();
    EvalReport::from_predictions(&predicted, &gold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const A: TermKind = TermKind::Aspect;

    fn sp(s: usize, e: usize) -> TermSpan {
        TermSpan::new(s, e, A)
    }

    #[test]
    fn exact_match_examples() {
        let p = span_prf(&[sp(2, 3)], &[sp(2, 3)]);
        assert_eq!((p.precision, p.recall, p.f1), (1.0, 1.0, 1.0));
        let p = span_prf(&[sp(2, 2)], &[sp(2, 3)]);
        assert_eq!((p.precision, p.recall, p.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn corpus_level_arithmetic() {
        let c = SpanCounts {
            correct: 8,
            predicted: 10,
            gold: 16,
        };
        let p = c.prf();
        assert_eq!(p.precision, 0.8);
        assert_eq!(p.recall, 0.5);
        // 2 * 0.8 * 0.5 / 1.3 = 8/13
        assert!((p.f1 - 8.0 / 13.0).abs() < 1e-15);
        assert!((p.f1 - 0.6154).abs() < 5e-5);
    }

    #[test]
    fn empty_side_conventions() {
        let both = span_prf(&[], &[]);
        assert_eq!((both.precision, both.recall, both.f1), (1.0, 1.0, 1.0));
        let no_pred = span_prf(&[], &[sp(1, 1)]);
        assert_eq!((no_pred.precision, no_pred.recall, no_pred.f1), (0.0, 0.0, 0.0));
        let no_gold = span_prf(&[sp(1, 1)], &[]);
        assert_eq!((no_gold.precision, no_gold.recall, no_gold.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn kind_is_part_of_identity() {
        let p = span_prf(&[TermSpan::new(1, 1, TermKind::Opinion)], &[sp(1, 1)]);
        assert_eq!(p.f1, 0.0);
    }

    #[test]
    fn each_gold_matches_once() {
        let c = SpanCounts::of(&[sp(1, 1), sp(1, 1)], &[sp(1, 1)]);
        assert_eq!(c.correct, 1);
    }

    #[test]
    fn empty_rules_have_zero_recall() {
        let mut s = crate::corpus::ParsedSentence::from_parts(&[("screen", "NN")], &[]);
        s.set_terms(A, vec![sp(1, 1)]).unwrap();
        s.set_terms(TermKind::Opinion, vec![TermSpan::new(1, 1, TermKind::Opinion)]).unwrap();
        let r = evaluate_rules(
            &RuleSet::empty(A),
            &RuleSet::empty(TermKind::Opinion),
            &[s],
            ApplyOptions::default(),
        );
        assert_eq!(r.aspect.r, 0.0);
        assert_eq!(r.opinion.r, 0.0);
        assert_eq!(r.aspect.n_gold, 1);
        assert!(r.table().contains("aspect"));
    }

    fn spans() -> impl Strategy<Value = Vec<TermSpan>> {
        prop::collection::btree_set((1usize..8, 0usize..3), 0..6)
            .prop_map(|s| s.into_iter().map(|(a, l)| sp(a, a + l)).collect())
    }

    proptest! {
        #[test]
        fn micro_equals_summed_counts(sents in prop::collection::vec((spans(), spans()), 1..8)) {
            let pairs: Vec<(&[TermSpan], &[TermSpan])> =
                sents.iter().map(|(p, g)| (p.as_slice(), g.as_slice())).collect();
            let (prf, counts) = corpus_prf(pairs.iter().copied());
            let manual: SpanCounts = sents.iter().map(|(p, g)| SpanCounts::of(p, g)).sum();
            prop_assert_eq!(counts, manual);
            prop_assert_eq!(prf, manual.prf());
            // Reordering sentences and permuting span lists changes nothing.
            let rev: Vec<(Vec<TermSpan>, Vec<TermSpan>)> = sents
                .iter()
                .rev()
                .map(|(p, g)| (p.iter().rev().copied().collect(), g.iter().rev().copied().collect()))
                .collect();
            let (prf2, _) = corpus_prf(rev.iter().map(|(p, g)| (p.as_slice(), g.as_slice())));
            prop_assert_eq!(prf, prf2);
        }

        #[test]
        fn f1_monotone_in_predictions(pred in spans(), gold in spans(), extra in (1usize..12, 0usize..3)) {
            let base = span_prf(&pred, &gold).f1;
            if let Some(g) = gold.iter().find(|g| !pred.contains(g)) {
                let mut more = pred.clone();
                more.push(*g);
                prop_assert!(span_prf(&more, &gold).f1 >= base - 1e-12);
            }
            let wrong = sp(20 + extra.0, 20 + extra.0 + extra.1);
            let mut more = pred.clone();
            more.push(wrong);
            prop_assert!(span_prf(&more, &gold).f1 <= base + 1e-12);
        }
    }
}
