//! Parsed sentences, gold term spans and BIO tag sequences.
//!
//! Sentences arrive pre-parsed as CoNLL-U. Gold spans come from a JSON-lines
//! sidecar with one object per sentence, in corpus order.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    Conllu { line: usize, message: String },
    #[error("line {line}: HEAD column {value:?} is not an integer")]
    BadHead { line: usize, value: String },
    #[error("overlapping spans {first} and {second}")]
    Overlap { first: TermSpan, second: TermSpan },
    #[error("span {span} lies outside a sentence of {len} tokens")]
    SpanOutOfRange { span: TermSpan, len: usize },
    #[error("annotation line {line}: {message}")]
    Annotation { line: usize, message: String },
    #[error("{annotations} annotation lines for {sentences} sentences")]
    AnnotationCount { sentences: usize, annotations: usize },
    #[error("BIO line {line}: {message}")]
    Bio { line: usize, message: String },
    #[error("validation fraction {0} is not in (0, 1)")]
    InvalidFraction(f64),
    #[error("cannot split an empty corpus")]
    EmptyCorpus,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Token {
    /// 1-based position in the sentence.
    pub index: usize,
    pub surface: String,
    /// Fine-grained (PTB) tag.
    pub pos: String,
}

/// A labeled arc `relation(governor, dependent)`. Governor 0 is the root.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DependencyEdge {
    pub relation: String,
    pub governor: usize,
    pub dependent: usize,
}

impl DependencyEdge {
    pub fn new(relation: impl Into<String>, governor: usize, dependent: usize) -> Self {
        Self {
            relation: relation.into(),
            governor,
            dependent,
        }
    }

    pub fn touches(&self, index: usize) -> bool {
        self.governor == index || self.dependent == index
    }

    /// The token shared with `other`, if the two edges have exactly one
    /// token in common.
    pub fn shared_token(&self, other: &DependencyEdge) -> Option<usize> {
        let mine = [self.governor, self.dependent];
        let theirs = [other.governor, other.dependent];
        let common: Vec<usize> = mine.iter().copied().filter(|t| theirs.contains(t)).collect();
        match common.as_slice() {
            [only] => Some(*only),
            _ => None,
        }
    }
}

impl fmt::Display for DependencyEdge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({}, {})", self.relation, self.governor, self.dependent)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TermKind {
    Aspect,
    Opinion,
}

impl TermKind {
    pub const ALL: [TermKind; 2] = [TermKind::Aspect, TermKind::Opinion];

    pub fn as_str(self) -> &'static str {
        match self {
            TermKind::Aspect => "aspect",
            TermKind::Opinion => "opinion",
        }
    }
}

impl fmt::Display for TermKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TermKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "aspect" => Ok(TermKind::Aspect),
            "opinion" => Ok(TermKind::Opinion),
            other => Err(format!("unknown term kind {other:?}")),
        }
    }
}

/// Inclusive 1-based token range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TermSpan {
    pub start: usize,
    pub end: usize,
    pub kind: TermKind,
}

impl TermSpan {
    pub fn new(start: usize, end: usize, kind: TermKind) -> Self {
        debug_assert!(start <= end, "span start {start} after end {end}");
        Self { start, end, kind }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, index: usize) -> bool {
        self.start <= index && index <= self.end
    }

    pub fn overlaps(&self, other: &TermSpan) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

impl fmt::Display for TermSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{},{}]", self.kind, self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedSentence {
    pub tokens: Vec<Token>,
    pub deps: Vec<DependencyEdge>,
    #[serde(default)]
    pub aspect_terms: Vec<TermSpan>,
    #[serde(default)]
    pub opinion_terms: Vec<TermSpan>,
    /// Set when the edges do not form a single-head tree (extra heads,
    /// cycles, or arcs that had to be dropped).
    #[serde(default)]
    pub malformed: bool,
}

impl ParsedSentence {
    /// Builds a sentence, dropping arcs that point outside the sentence or
    /// to themselves. Such drops and any non-tree structure set `malformed`.
    pub fn new(tokens: Vec<Token>, deps: Vec<DependencyEdge>) -> Self {
        let n = tokens.len();
        let before = deps.len();
        let deps: Vec<DependencyEdge> = deps
            .into_iter()
            .filter(|e| {
                e.dependent >= 1 && e.dependent <= n && e.governor <= n && e.governor != e.dependent
            })
            .collect();
        let malformed = deps.len() != before || !is_single_head_forest(n, &deps);
        Self {
            tokens,
            deps,
            aspect_terms: Vec::new(),
            opinion_terms: Vec::new(),
            malformed,
        }
    }

    /// Convenience constructor from `(surface, pos)` pairs and
    /// `(relation, governor, dependent)` triples.
    pub fn from_parts(words: &[(&str, &str)], deps: &[(&str, usize, usize)]) -> Self {
        let tokens = words
            .iter()
            .enumerate()
            .map(|(i, (surface, pos))| Token {
                index: i + 1,
                surface: surface.to_string(),
                pos: pos.to_string(),
            })
            .collect();
        let deps = deps
            .iter()
            .map(|(rel, gov, dep)| DependencyEdge::new(*rel, *gov, *dep))
            .collect();
        Self::new(tokens, deps)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// 1-based lookup; index 0 (root) and out-of-range indices give `None`.
    pub fn token(&self, index: usize) -> Option<&Token> {
        index.checked_sub(1).and_then(|i| self.tokens.get(i))
    }

    pub fn words(&self) -> Vec<String> {
        self.tokens.iter().map(|t| t.surface.clone()).collect()
    }

    pub fn terms(&self, kind: TermKind) -> &[TermSpan] {
        match kind {
            TermKind::Aspect => &self.aspect_terms,
            TermKind::Opinion => &self.opinion_terms,
        }
    }

    /// Replaces the gold spans of `kind` after checking range and overlap.
    pub fn set_terms(&mut self, kind: TermKind, mut spans: Vec<TermSpan>) -> Result<(), CorpusError> {
        for span in spans.iter_mut() {
            span.kind = kind;
        }
        check_spans(self.len(), &spans)?;
        spans.sort();
        match kind {
            TermKind::Aspect => self.aspect_terms = spans,
            TermKind::Opinion => self.opinion_terms = spans,
        }
        Ok(())
    }

    /// Lowercased surface text of a span, tokens joined by single spaces.
    pub fn span_text(&self, span: &TermSpan) -> String {
        (span.start..=span.end)
            .filter_map(|i| self.token(i))
            .map(|t| t.surface.to_lowercase())
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn bio(&self, kind: TermKind) -> Result<TagSequence, CorpusError> {
        spans_to_bio(self.len(), self.terms(kind), kind)
    }
}

fn is_single_head_forest(n: usize, deps: &[DependencyEdge]) -> bool {
    let mut head = vec![None; n + 1];
    for e in deps {
        if head[e.dependent].is_some() {
            return false;
        }
        head[e.dependent] = Some(e.governor);
    }
    for start in 1..=n {
        let mut cur = start;
        for _ in 0..=n {
            match head[cur] {
                Some(0) | None => break,
                Some(g) => cur = g,
            }
        }
        if matches!(head[cur], Some(g) if g != 0) {
            return false;
        }
    }
    true
}

fn check_spans(len: usize, spans: &[TermSpan]) -> Result<(), CorpusError> {
    for span in spans {
        if span.start == 0 || span.start > span.end || span.end > len {
            return Err(CorpusError::SpanOutOfRange { span: *span, len });
        }
    }
    let mut sorted: Vec<TermSpan> = spans.to_vec();
    sorted.sort();
    for pair in sorted.windows(2) {
        if pair[0].overlaps(&pair[1]) {
            return Err(CorpusError::Overlap {
                first: pair[0],
                second: pair[1],
            });
        }
    }
    Ok(())
}

/// Reads CoNLL-U. FORM, XPOS, HEAD and DEPREL are used; multiword-token
/// ranges and empty nodes are skipped. Root attachments (HEAD 0) are not
/// stored as edges.
pub fn parse_conllu(text: &str) -> Result<Vec<ParsedSentence>, CorpusError> {
    let mut sentences = Vec::new();
    let mut tokens: Vec<Token> = Vec::new();
    let mut deps: Vec<DependencyEdge> = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            if !tokens.is_empty() {
                sentences.push(ParsedSentence::new(
                    std::mem::take(&mut tokens),
                    std::mem::take(&mut deps),
                ));
            }
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(CorpusError::Conllu {
                line: line_no,
                message: format!("expected 10 tab-separated columns, found {}", cols.len()),
            });
        }
        let id = cols[0];
        if id.contains('-') || id.contains('.') {
            continue;
        }
        let index: usize = id.parse().map_err(|_| CorpusError::Conllu {
            line: line_no,
            message: format!("token ID {id:?} is not an integer"),
        })?;
        if index != tokens.len() + 1 {
            return Err(CorpusError::Conllu {
                line: line_no,
                message: format!("token ID {index} out of sequence (expected {})", tokens.len() + 1),
            });
        }
        let head: usize = cols[6].parse().map_err(|_| CorpusError::BadHead {
            line: line_no,
            value: cols[6].to_string(),
        })?;
        if cols[1].is_empty() {
            return Err(CorpusError::Conllu {
                line: line_no,
                message: "empty FORM".into(),
            });
        }
        tokens.push(Token {
            index,
            surface: cols[1].to_string(),
            pos: cols[4].to_string(),
        });
        if head != 0 {
            deps.push(DependencyEdge::new(cols[7], head, index));
        }
    }
    if !tokens.is_empty() {
        sentences.push(ParsedSentence::new(tokens, deps));
    }
    Ok(sentences)
}

/// Writes sentences as CoNLL-U. Tokens without an incoming edge are
/// attached to the root.
pub fn to_conllu(sentences: &[ParsedSentence]) -> String {
    let mut out = String::new();
    for s in sentences {
        for tok in &s.tokens {
            let (head, rel) = s
                .deps
                .iter()
                .find(|e| e.dependent == tok.index)
                .map(|e| (e.governor, e.relation.as_str()))
                .unwrap_or((0, "root"));
            out.push_str(&format!(
                "{}\t{}\t_\t_\t{}\t_\t{}\t{}\t_\t_\n",
                tok.index, tok.surface, tok.pos, head, rel
            ));
        }
        out.push('\n');
    }
    out
}

/// One line of the annotation sidecar.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    #[serde(default)]
    pub aspect_spans: Vec<[usize; 2]>,
    #[serde(default)]
    pub opinion_spans: Vec<[usize; 2]>,
}

impl Annotation {
    pub fn of(sentence: &ParsedSentence) -> Self {
        let pairs = |spans: &[TermSpan]| spans.iter().map(|s| [s.start, s.end]).collect();
        Self {
            aspect_spans: pairs(&sentence.aspect_terms),
            opinion_spans: pairs(&sentence.opinion_terms),
        }
    }
}

pub fn parse_annotations(text: &str) -> Result<Vec<Annotation>, CorpusError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CorpusError::Annotation {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn format_annotations(sentences: &[ParsedSentence]) -> String {
    let mut out = String::new();
    for s in sentences {
        out.push_str(&serde_json::to_string(&Annotation::of(s)).expect("annotation serializes"));
        out.push('\n');
    }
    out
}

/// Attaches sidecar annotations to sentences by position.
pub fn attach_annotations(
    sentences: &mut [ParsedSentence],
    annotations: &[Annotation],
) -> Result<(), CorpusError> {
    if sentences.len() != annotations.len() {
        return Err(CorpusError::AnnotationCount {
            sentences: sentences.len(),
            annotations: annotations.len(),
        });
    }
    for (sentence, ann) in sentences.iter_mut().zip(annotations) {
        for (kind, raw) in [
            (TermKind::Aspect, &ann.aspect_spans),
            (TermKind::Opinion, &ann.opinion_spans),
        ] {
            let spans = raw
                .iter()
                .map(|[s, e]| {
                    if s > e {
                        Err(CorpusError::SpanOutOfRange {
                            span: TermSpan { start: *s, end: *e, kind },
                            len: sentence.len(),
                        })
                    } else {
                        Ok(TermSpan::new(*s, *e, kind))
                    }
                })
                .collect::<Result<Vec<_>, _>>()?;
            sentence.set_terms(kind, spans)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Tag {
    B,
    I,
    O,
}

impl Tag {
    pub fn as_str(self) -> &'static str {
        match self {
            Tag::B => "B",
            Tag::I => "I",
            Tag::O => "O",
        }
    }

    pub fn parse(s: &str) -> Option<Tag> {
        match s {
            "B" => Some(Tag::B),
            "I" => Some(Tag::I),
            "O" => Some(Tag::O),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagSequence {
    pub kind: TermKind,
    pub tags: Vec<Tag>,
}

impl TagSequence {
    pub fn outside(kind: TermKind, len: usize) -> Self {
        Self {
            kind,
            tags: vec![Tag::O; len],
        }
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    /// No `I` at the start or directly after an `O`.
    pub fn is_well_formed(&self) -> bool {
        let mut prev = Tag::O;
        for &t in &self.tags {
            if t == Tag::I && prev == Tag::O {
                return false;
            }
            prev = t;
        }
        true
    }
}

pub fn spans_to_bio(len: usize, spans: &[TermSpan], kind: TermKind) -> Result<TagSequence, CorpusError> {
    check_spans(len, spans)?;
    let mut seq = TagSequence::outside(kind, len);
    for span in spans {
        seq.tags[span.start - 1] = Tag::B;
        for i in span.start + 1..=span.end {
            seq.tags[i - 1] = Tag::I;
        }
    }
    Ok(seq)
}

/// Decodes `B I*` runs into spans. A stray `I` opens a new span.
pub fn bio_to_spans(seq: &TagSequence) -> Vec<TermSpan> {
    let mut spans = Vec::new();
    let mut open: Option<usize> = None;
    for (i, &tag) in seq.tags.iter().enumerate() {
        let pos = i + 1;
        match tag {
            Tag::B => {
                if let Some(start) = open.take() {
                    spans.push(TermSpan::new(start, pos - 1, seq.kind));
                }
                open = Some(pos);
            }
            Tag::I => {
                if open.is_none() {
                    open = Some(pos);
                }
            }
            Tag::O => {
                if let Some(start) = open.take() {
                    spans.push(TermSpan::new(start, pos - 1, seq.kind));
                }
            }
        }
    }
    if let Some(start) = open {
        spans.push(TermSpan::new(start, seq.tags.len(), seq.kind));
    }
    spans
}

/// A sentence with independent aspect and opinion tag sequences, as
/// produced by rule labeling. The two may disagree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeakLabeledSentence {
    pub words: Vec<String>,
    pub aspect: TagSequence,
    pub opinion: TagSequence,
}

impl WeakLabeledSentence {
    pub fn tags(&self, kind: TermKind) -> &TagSequence {
        match kind {
            TermKind::Aspect => &self.aspect,
            TermKind::Opinion => &self.opinion,
        }
    }

    /// Gold sentences in the same shape, for evaluation and training code
    /// that treats both sources uniformly.
    pub fn from_gold(sentence: &ParsedSentence) -> Result<Self, CorpusError> {
        Ok(Self {
            words: sentence.words(),
            aspect: sentence.bio(TermKind::Aspect)?,
            opinion: sentence.bio(TermKind::Opinion)?,
        })
    }
}

/// Three-column BIO: `surface<TAB>aspect<TAB>opinion`, blank line between
/// sentences.
pub fn format_dual_bio(sentences: &[WeakLabeledSentence]) -> String {
    let mut out = String::new();
    for s in sentences {
        for (i, w) in s.words.iter().enumerate() {
            out.push_str(w);
            out.push('\t');
            out.push_str(s.aspect.tags[i].as_str());
            out.push('\t');
            out.push_str(s.opinion.tags[i].as_str());
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

/// Reads the three-column BIO format. Lines starting with `# ` and holding
/// no tab are treated as header comments.
pub fn parse_dual_bio(text: &str) -> Result<Vec<WeakLabeledSentence>, CorpusError> {
    let mut out = Vec::new();
    let mut cur: Option<WeakLabeledSentence> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.is_empty() {
            if let Some(s) = cur.take() {
                out.push(s);
            }
            continue;
        }
        if line.starts_with("# ") && !line.contains('\t') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let bad = |message: String| CorpusError::Bio { line: i + 1, message };
        if cols.len() != 3 {
            return Err(bad(format!("expected 3 columns, found {}", cols.len())));
        }
        let a = Tag::parse(cols[1]).ok_or_else(|| bad(format!("bad aspect tag {:?}", cols[1])))?;
        let o = Tag::parse(cols[2]).ok_or_else(|| bad(format!("bad opinion tag {:?}", cols[2])))?;
        let s = cur.get_or_insert_with(|| WeakLabeledSentence {
            words: Vec::new(),
            aspect: TagSequence::outside(TermKind::Aspect, 0),
            opinion: TagSequence::outside(TermKind::Opinion, 0),
        });
        s.words.push(cols[0].to_string());
        s.aspect.tags.push(a);
        s.opinion.tags.push(o);
    }
    if let Some(s) = cur {
        out.push(s);
    }
    Ok(out)
}

/// Deterministic shuffled split. The validation part has
/// `round(fraction * n)` items; both parts keep input order.
pub fn split_train_validation<T: Clone>(
    corpus: &[T],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<T>, Vec<T>), CorpusError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(CorpusError::InvalidFraction(fraction));
    }
    if corpus.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let n = corpus.len();
    let n_val = (fraction * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut in_val = vec![false; n];
    for &i in &order[..n_val] {
        in_val[i] = true;
    }
    let mut train = Vec::with_capacity(n - n_val);
    let mut val = Vec::with_capacity(n_val);
    for (item, v) in corpus.iter().zip(in_val) {
        if v {
            val.push(item.clone());
        } else {
            train.push(item.clone());
        }
    }
    Ok((train, val))
}

#[cfg(test)]
pub(crate) mod tests_support {
    pub const HORRIBLE_SYSTEM: &str = "\
# text = The system is horrible.
1\tThe\tthe\tDET\tDT\t_\t2\tdet\t_\t_
2\tsystem\tsystem\tNOUN\tNN\t_\t4\tnsubj\t_\t_
3\tis\tbe\tAUX\tVBZ\t_\t4\tcop\t_\t_
4\thorrible\thorrible\tADJ\tJJ\t_\t0\troot\t_\t_
5\t.\t.\tPUNCT\t.\t_\t4\tpunct\t_\t_
";
}

#[cfg(test)]
mod tests {
    use super::tests_support::HORRIBLE_SYSTEM;
    use super::*;
    use proptest::prelude::*;


    #[test]
    fn parses_horrible_system_sentence() {
        let sents = parse_conllu(HORRIBLE_SYSTEM).unwrap();
        assert_eq!(sents.len(), 1);
        let s = &sents[0];
        assert_eq!(s.len(), 5);
        assert_eq!(s.deps.len(), 4);
        assert!(s.deps.contains(&DependencyEdge::new("nsubj", 4, 2)));
        assert!(s.deps.contains(&DependencyEdge::new("det", 2, 1)));
        assert_eq!(s.token(4).unwrap().pos, "JJ");
        assert!(!s.malformed);
    }

    #[test]
    fn empty_input_gives_no_sentences() {
        assert!(parse_conllu("").unwrap().is_empty());
        assert!(parse_conllu("\n\n# comment\n\n").unwrap().is_empty());
    }

    #[test]
    fn two_sentences_have_independent_indices() {
        let text = format!("{HORRIBLE_SYSTEM}\n1\tIt\tit\tPRON\tPRP\t_\t2\tnsubj\t_\t_\n2\tworks\twork\tVERB\tVBZ\t_\t0\troot\t_\t_\n");
        let sents = parse_conllu(&text).unwrap();
        assert_eq!(sents.len(), 2);
        assert_eq!(sents[1].tokens[0].index, 1);
        assert_eq!(sents[1].deps, vec![DependencyEdge::new("nsubj", 2, 1)]);
    }

    #[test]
    fn skips_multiword_ranges_and_empty_nodes() {
        let text = "1-2\tdon't\t_\t_\t_\t_\t_\t_\t_\t_\n1\tdo\tdo\tAUX\tVBP\t_\t0\troot\t_\t_\n2\tn't\tnot\tPART\tRB\t_\t1\tadvmod\t_\t_\n1.1\tx\t_\t_\t_\t_\t_\t_\t_\t_\n";
        let sents = parse_conllu(text).unwrap();
        assert_eq!(sents[0].len(), 2);
        assert_eq!(sents[0].deps.len(), 1);
    }

    #[test]
    fn column_count_error_names_line() {
        let err = parse_conllu("# c\n1\tThe\tthe\n").unwrap_err();
        assert!(matches!(err, CorpusError::Conllu { line: 2, .. }), "{err:?}");
    }

    #[test]
    fn non_integer_head_is_an_error() {
        let err = parse_conllu("1\tThe\tthe\tDET\tDT\t_\tx\tdet\t_\t_\n").unwrap_err();
        assert_eq!(
            err,
            CorpusError::BadHead {
                line: 1,
                value: "x".into()
            }
        );
    }

    #[test]
    fn out_of_range_head_is_flagged_not_fatal() {
        let s = parse_conllu("1\tA\ta\tDT\tDT\t_\t9\tdet\t_\t_\n").unwrap();
        assert!(s[0].malformed);
        assert!(s[0].deps.is_empty());
    }

    #[test]
    fn cycles_and_double_heads_are_flagged() {
        let cyc = ParsedSentence::from_parts(&[("a", "NN"), ("b", "NN")], &[("x", 1, 2), ("y", 2, 1)]);
        assert!(cyc.malformed);
        assert_eq!(cyc.deps.len(), 2);
        let two = ParsedSentence::from_parts(
            &[("a", "NN"), ("b", "NN"), ("c", "NN")],
            &[("x", 1, 3), ("y", 2, 3)],
        );
        assert!(two.malformed);
    }

    #[test]
    fn bio_examples() {
        let a = TermKind::Aspect;
        let seq = spans_to_bio(5, &[TermSpan::new(2, 2, a)], a).unwrap();
        assert_eq!(seq.tags, vec![Tag::O, Tag::B, Tag::O, Tag::O, Tag::O]);
        let seq = spans_to_bio(5, &[TermSpan::new(2, 3, a), TermSpan::new(5, 5, a)], a).unwrap();
        assert_eq!(seq.tags, vec![Tag::O, Tag::B, Tag::I, Tag::O, Tag::B]);
        assert_eq!(
            bio_to_spans(&seq),
            vec![TermSpan::new(2, 3, a), TermSpan::new(5, 5, a)]
        );
        let none = spans_to_bio(4, &[], a).unwrap();
        assert_eq!(none.tags, vec![Tag::O; 4]);
        assert!(bio_to_spans(&none).is_empty());
    }

    #[test]
    fn lenient_decoding_of_leading_inside() {
        let seq = TagSequence {
            kind: TermKind::Opinion,
            tags: vec![Tag::I, Tag::I, Tag::O],
        };
        assert!(!seq.is_well_formed());
        assert_eq!(bio_to_spans(&seq), vec![TermSpan::new(1, 2, TermKind::Opinion)]);
    }

    #[test]
    fn overlapping_spans_are_rejected() {
        let a = TermKind::Aspect;
        let err = spans_to_bio(5, &[TermSpan::new(2, 3, a), TermSpan::new(3, 4, a)], a).unwrap_err();
        assert_eq!(
            err,
            CorpusError::Overlap {
                first: TermSpan::new(2, 3, a),
                second: TermSpan::new(3, 4, a)
            }
        );
    }

    #[test]
    fn split_sizes_follow_rounding() {
        let ten: Vec<usize> = (0..10).collect();
        let (tr, va) = split_train_validation(&ten, 0.2, 7).unwrap();
        assert_eq!((tr.len(), va.len()), (8, 2));
        assert_eq!(split_train_validation(&ten, 0.2, 7).unwrap(), (tr, va));

        let big: Vec<usize> = (0..3044).collect();
        let (tr, va) = split_train_validation(&big, 0.2, 1).unwrap();
        assert_eq!((tr.len(), va.len()), (2435, 609));
    }

    #[test]
    fn split_rejects_bad_input() {
        let v = vec![1, 2, 3];
        assert_eq!(split_train_validation(&v, 0.0, 1), Err(CorpusError::InvalidFraction(0.0)));
        assert_eq!(split_train_validation(&v, 1.0, 1), Err(CorpusError::InvalidFraction(1.0)));
        let empty: Vec<u8> = vec![];
        assert_eq!(split_train_validation(&empty, 0.5, 1), Err(CorpusError::EmptyCorpus));
    }

    #[test]
    fn annotations_attach_and_validate() {
        let mut sents = parse_conllu(HORRIBLE_SYSTEM).unwrap();
        let anns = parse_annotations("{\"aspect_spans\": [[2,2]], \"opinion_spans\": [[4,4]]}\n").unwrap();
        attach_annotations(&mut sents, &anns).unwrap();
        assert_eq!(sents[0].aspect_terms, vec![TermSpan::new(2, 2, TermKind::Aspect)]);
        assert_eq!(sents[0].span_text(&sents[0].opinion_terms[0]), "horrible");
        assert_eq!(format_annotations(&sents).trim(), r#"{"aspect_spans":[[2,2]],"opinion_spans":[[4,4]]}"#);

        let bad = parse_annotations("{\"aspect_spans\": [[2,9]]}").unwrap();
        assert!(matches!(
            attach_annotations(&mut sents, &bad),
            Err(CorpusError::SpanOutOfRange { .. })
        ));
        assert!(matches!(
            attach_annotations(&mut sents, &[]),
            Err(CorpusError::AnnotationCount { .. })
        ));
    }

    #[test]
    fn conllu_writer_round_trips() {
        let sents = parse_conllu(HORRIBLE_SYSTEM).unwrap();
        let again = parse_conllu(&to_conllu(&sents)).unwrap();
        assert_eq!(sents, again);
    }

    #[test]
    fn dual_bio_round_trips_with_header() {
        let s = WeakLabeledSentence {
            words: vec!["good".into(), "screen".into()],
            aspect: TagSequence {
                kind: TermKind::Aspect,
                tags: vec![Tag::O, Tag::B],
            },
            opinion: TagSequence {
                kind: TermKind::Opinion,
                tags: vec![Tag::B, Tag::B],
            },
        };
        let text = format!("# header v1\n{}", format_dual_bio(&[s.clone(), s.clone()]));
        assert_eq!(parse_dual_bio(&text).unwrap(), vec![s.clone(), s]);
        assert!(parse_dual_bio("a\tB\n").is_err());
    }

    fn well_formed_tags() -> impl Strategy<Value = Vec<Tag>> {
        prop::collection::vec(prop_oneof![Just(Tag::B), Just(Tag::I), Just(Tag::O)], 0..20).prop_map(
            |mut tags| {
                let mut prev = Tag::O;
                for t in tags.iter_mut() {
                    if *t == Tag::I && prev == Tag::O {
                        *t = Tag::B;
                    }
                    prev = *t;
                }
                tags
            },
        )
    }

    proptest! {
        #[test]
        fn bio_codec_is_inverse_on_well_formed(tags in well_formed_tags()) {
            let seq = TagSequence { kind: TermKind::Aspect, tags };
            let spans = bio_to_spans(&seq);
            prop_assert_eq!(spans_to_bio(seq.len(), &spans, TermKind::Aspect).unwrap(), seq);
        }

        #[test]
        fn split_is_a_partition(n in 1usize..200, frac in 0.01f64..0.99, seed in any::<u64>()) {
            let items: Vec<usize> = (0..n).collect();
            let (tr, va) = split_train_validation(&items, frac, seed).unwrap();
            prop_assert_eq!(va.len(), (frac * n as f64).round() as usize);
            let mut all: Vec<usize> = tr.into_iter().chain(va).collect();
            all.sort();
            prop_assert_eq!(all, items);
        }

        #[test]
        fn parsed_indices_stay_in_range(heads in prop::collection::vec(0usize..15, 1..12)) {
            let mut text = String::new();
            for (i, h) in heads.iter().enumerate() {
                text.push_str(&format!("{}\tw{}\t_\t_\tNN\t_\t{}\tdep\t_\t_\n", i + 1, i, h));
            }
            let sents = parse_conllu(&text).unwrap();
            let n = sents[0].len();
            for e in &sents[0].deps {
                prop_assert!(e.dependent >= 1 && e.dependent <= n);
                prop_assert!(e.governor >= 1 && e.governor <= n);
            }
        }
    }
}
