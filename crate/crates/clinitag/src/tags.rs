//! Tag schemes and conversions between span annotations and per-token tag
//! sequences.
//!
//! Two scheme kinds exist: BILOU (span structure encoded in tag prefixes) and
//! un-prefixed (every token inside a span carries the bare label). CRF
//! decoders tag under BILOU; softmax decoders tag attributes un-prefixed.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

/// Canonical name of the negative/absent polarity class.
pub const NEG_CLASS: &str = "NEG";
/// Attribute value for spans whose attribute was never annotated in the
/// source data (e.g. non-problem concepts in selectively annotated corpora).
pub const ABSENT_ANNOTATION: &str = "ABSENT-ANNOTATION";

#[derive(Debug, Error)]
pub enum TagError {
    #[error("unknown tag `{0}` for this scheme")]
    UnknownTag(String),
    #[error("unknown category `{0}` for this scheme")]
    UnknownCategory(String),
    #[error("tag index {index} out of range for scheme of size {size}")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("span ({start},{end}) does not fit a sequence of length {len}")]
    SpanOutOfRange { start: usize, end: usize, len: usize },
    #[error("span ({0},{1}) overlaps span ({2},{3})")]
    Overlap(usize, usize, usize, usize),
    #[error("inverted span: start {0} > end {1}")]
    InvertedSpan(usize, usize),
    #[error("illegal tag at index {index}: `{tag}` cannot follow `{prev}`")]
    IllegalAdjacency {
        index: usize,
        tag: String,
        prev: String,
    },
    #[error("sequence ends inside an entity at index {index} (`{tag}`)")]
    OpenAtEnd { index: usize, tag: String },
    #[error("operation requires a {expected} scheme")]
    KindMismatch { expected: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeKind {
    Bilou,
    Unprefixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BilouPrefix {
    Begin,
    Inside,
    Last,
    Unit,
}

impl fmt::Display for BilouPrefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = match self {
            BilouPrefix::Begin => 'B',
            BilouPrefix::Inside => 'I',
            BilouPrefix::Last => 'L',
            BilouPrefix::Unit => 'U',
        };
        write!(f, "{c}")
    }
}

/// A closed tag vocabulary over an ordered category set. Index 0 is always
/// "O"; BILOU tags follow in B/I/L/U order per category.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagScheme {
    kind: SchemeKind,
    categories: Vec<String>,
    tags: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl TagScheme {
    pub fn bilou<S: AsRef<str>>(categories: &[S]) -> Arc<TagScheme> {
        let categories: Vec<String> = categories.iter().map(|c| c.as_ref().to_string()).collect();
        let mut tags = vec!["O".to_string()];
        for c in &categories {
            for p in ["B", "I", "L", "U"] {
                tags.push(format!("{p}-{c}"));
            }
        }
        Self::build(SchemeKind::Bilou, categories, tags)
    }

    pub fn unprefixed<S: AsRef<str>>(categories: &[S]) -> Arc<TagScheme> {
        let categories: Vec<String> = categories.iter().map(|c| c.as_ref().to_string()).collect();
        let mut tags = vec!["O".to_string()];
        tags.extend(categories.iter().cloned());
        Self::build(SchemeKind::Unprefixed, categories, tags)
    }

    fn build(kind: SchemeKind, categories: Vec<String>, tags: Vec<String>) -> Arc<TagScheme> {
        let index = tags
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Arc::new(TagScheme {
            kind,
            categories,
            tags,
            index,
        })
    }

    pub fn kind(&self) -> SchemeKind {
        self.kind
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    /// Number of distinct tags including "O".
    pub fn size(&self) -> usize {
        self.tags.len()
    }

    pub const OUTSIDE: usize = 0;

    pub fn tag_index(&self, tag: &str) -> Result<usize, TagError> {
        self.index
            .get(tag)
            .copied()
            .ok_or_else(|| TagError::UnknownTag(tag.to_string()))
    }

    pub fn tag_name(&self, index: usize) -> &str {
        &self.tags[index]
    }

    fn category_position(&self, category: &str) -> Result<usize, TagError> {
        self.categories
            .iter()
            .position(|c| c == category)
            .ok_or_else(|| TagError::UnknownCategory(category.to_string()))
    }

    /// Tag index of a BILOU (prefix, category) pair.
    pub fn bilou_tag(&self, prefix: BilouPrefix, category: &str) -> Result<usize, TagError> {
        if self.kind != SchemeKind::Bilou {
            return Err(TagError::KindMismatch { expected: "BILOU" });
        }
        let c = self.category_position(category)?;
        let offset = match prefix {
            BilouPrefix::Begin => 0,
            BilouPrefix::Inside => 1,
            BilouPrefix::Last => 2,
            BilouPrefix::Unit => 3,
        };
        Ok(1 + 4 * c + offset)
    }

    /// Split a BILOU tag index into (prefix, category); None for "O".
    pub fn split_bilou(&self, index: usize) -> Option<(BilouPrefix, &str)> {
        if self.kind != SchemeKind::Bilou || index == Self::OUTSIDE {
            return None;
        }
        let pos = index - 1;
        let prefix = match pos % 4 {
            0 => BilouPrefix::Begin,
            1 => BilouPrefix::Inside,
            2 => BilouPrefix::Last,
            _ => BilouPrefix::Unit,
        };
        Some((prefix, &self.categories[pos / 4]))
    }

    /// Category carried by an un-prefixed tag index; None for "O".
    pub fn unprefixed_category(&self, index: usize) -> Option<&str> {
        if self.kind != SchemeKind::Unprefixed || index == Self::OUTSIDE {
            return None;
        }
        Some(&self.categories[index - 1])
    }

    /// Category of any non-O tag under either kind.
    pub fn category_of(&self, index: usize) -> Option<&str> {
        match self.kind {
            SchemeKind::Bilou => self.split_bilou(index).map(|(_, c)| c),
            SchemeKind::Unprefixed => self.unprefixed_category(index),
        }
    }
}

/// A validated per-token label sequence tied to its scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct TagSequence {
    scheme: Arc<TagScheme>,
    tags: Vec<usize>,
}

impl TagSequence {
    pub fn from_indices(scheme: Arc<TagScheme>, tags: Vec<usize>) -> Result<TagSequence, TagError> {
        let size = scheme.size();
        for &t in &tags {
            if t >= size {
                return Err(TagError::IndexOutOfRange { index: t, size });
            }
        }
        Ok(TagSequence { scheme, tags })
    }

    pub fn from_names<S: AsRef<str>>(
        scheme: Arc<TagScheme>,
        names: &[S],
    ) -> Result<TagSequence, TagError> {
        let tags = names
            .iter()
            .map(|n| scheme.tag_index(n.as_ref()))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(TagSequence { scheme, tags })
    }

    pub fn scheme(&self) -> &Arc<TagScheme> {
        &self.scheme
    }

    pub fn indices(&self) -> &[usize] {
        &self.tags
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        self.tags.iter().map(|&t| self.scheme.tag_name(t)).collect()
    }
}

/// A labeled token span; `end` is inclusive.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub label: String,
}

impl Span {
    pub fn new(start: usize, end: usize, label: impl Into<String>) -> Span {
        Span {
            start,
            end,
            label: label.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    Strict,
    Lenient,
}

fn check_spans(spans: &[Span], length: usize) -> Result<(), TagError> {
    let mut sorted: Vec<&Span> = spans.iter().collect();
    sorted.sort_by_key(|s| (s.start, s.end));
    for s in &sorted {
        if s.start > s.end {
            return Err(TagError::InvertedSpan(s.start, s.end));
        }
        if s.end >= length {
            return Err(TagError::SpanOutOfRange {
                start: s.start,
                end: s.end,
                len: length,
            });
        }
    }
    for pair in sorted.windows(2) {
        if pair[1].start <= pair[0].end {
            return Err(TagError::Overlap(
                pair[0].start,
                pair[0].end,
                pair[1].start,
                pair[1].end,
            ));
        }
    }
    Ok(())
}

/// Encode spans as a BILOU sequence: single-token spans become `U-cat`,
/// longer spans `B-cat I-cat ... L-cat`, every other position "O".
pub fn encode_bilou(
    spans: &[Span],
    length: usize,
    scheme: &Arc<TagScheme>,
) -> Result<TagSequence, TagError> {
    if scheme.kind() != SchemeKind::Bilou {
        return Err(TagError::KindMismatch { expected: "BILOU" });
    }
    check_spans(spans, length)?;
    let mut tags = vec![TagScheme::OUTSIDE; length];
    for s in spans {
        if s.start == s.end {
            tags[s.start] = scheme.bilou_tag(BilouPrefix::Unit, &s.label)?;
        } else {
            tags[s.start] = scheme.bilou_tag(BilouPrefix::Begin, &s.label)?;
            for t in tags.iter_mut().take(s.end).skip(s.start + 1) {
                *t = scheme.bilou_tag(BilouPrefix::Inside, &s.label)?;
            }
            tags[s.end] = scheme.bilou_tag(BilouPrefix::Last, &s.label)?;
        }
    }
    TagSequence::from_indices(scheme.clone(), tags)
}

/// Encode attributed spans un-prefixed: every token inside a span carries the
/// bare label. Boundary information between adjacent same-label spans is
/// lost; the span-aware matcher in the evaluation module exists for exactly
/// this reason.
pub fn encode_unprefixed(
    spans: &[Span],
    length: usize,
    scheme: &Arc<TagScheme>,
) -> Result<TagSequence, TagError> {
    if scheme.kind() != SchemeKind::Unprefixed {
        return Err(TagError::KindMismatch {
            expected: "un-prefixed",
        });
    }
    check_spans(spans, length)?;
    let mut tags = vec![TagScheme::OUTSIDE; length];
    for s in spans {
        let idx = scheme.tag_index(&s.label)?;
        for t in tags.iter_mut().take(s.end + 1).skip(s.start) {
            *t = idx;
        }
    }
    TagSequence::from_indices(scheme.clone(), tags)
}

/// Validate BILOU adjacency. Errors carry the index of the offending tag;
/// an entity left open at the end of the sequence is reported at the final
/// index.
pub fn validate_bilou_strict(seq: &TagSequence) -> Result<(), TagError> {
    let scheme = seq.scheme();
    if scheme.kind() != SchemeKind::Bilou {
        return Err(TagError::KindMismatch { expected: "BILOU" });
    }
    let tags = seq.indices();
    let mut prev: Option<usize> = None;
    for (i, &tag) in tags.iter().enumerate() {
        let cur = scheme.split_bilou(tag);
        let before = prev.and_then(|p| scheme.split_bilou(p));
        let legal = match (before, cur) {
            // after O / L / U / start of sequence: only O, B, U may follow
            (None, None) => true,
            (None, Some((p, _))) => matches!(p, BilouPrefix::Begin | BilouPrefix::Unit),
            (Some((BilouPrefix::Last | BilouPrefix::Unit, _)), None) => true,
            (Some((BilouPrefix::Last | BilouPrefix::Unit, _)), Some((p, _))) => {
                matches!(p, BilouPrefix::Begin | BilouPrefix::Unit)
            }
            // after B / I: only I or L of the same category
            (Some((BilouPrefix::Begin | BilouPrefix::Inside, c0)), Some((p, c1))) => {
                matches!(p, BilouPrefix::Inside | BilouPrefix::Last) && c0 == c1
            }
            (Some((BilouPrefix::Begin | BilouPrefix::Inside, _)), None) => false,
        };
        if !legal {
            let prev_name = prev.map(|p| scheme.tag_name(p)).unwrap_or("<start>");
            return Err(TagError::IllegalAdjacency {
                index: i,
                tag: scheme.tag_name(tag).to_string(),
                prev: prev_name.to_string(),
            });
        }
        prev = Some(tag);
    }
    if let Some(p) = prev {
        if let Some((BilouPrefix::Begin | BilouPrefix::Inside, _)) = scheme.split_bilou(p) {
            return Err(TagError::OpenAtEnd {
                index: tags.len() - 1,
                tag: scheme.tag_name(p).to_string(),
            });
        }
    }
    Ok(())
}

/// Recover spans from a BILOU sequence.
///
/// Strict mode errors on any illegal adjacency. Lenient mode applies a fixed
/// repair: an entity run is closed at the first tag that breaks category or
/// prefix continuity, and a bare I/L run with no B is promoted to a span
/// starting at the run's first token.
pub fn decode_bilou(seq: &TagSequence, mode: DecodeMode) -> Result<Vec<Span>, TagError> {
    let scheme = seq.scheme();
    if scheme.kind() != SchemeKind::Bilou {
        return Err(TagError::KindMismatch { expected: "BILOU" });
    }
    if mode == DecodeMode::Strict {
        validate_bilou_strict(seq)?;
    }
    let tags = seq.indices();
    let n = tags.len();
    let mut spans = Vec::new();
    let mut i = 0;
    while i < n {
        match scheme.split_bilou(tags[i]) {
            None => i += 1,
            Some((BilouPrefix::Unit, c)) | Some((BilouPrefix::Last, c)) => {
                // a bare L with no open run is a single-token span
                spans.push(Span::new(i, i, c));
                i += 1;
            }
            Some((BilouPrefix::Begin, c)) | Some((BilouPrefix::Inside, c)) => {
                let category = c.to_string();
                let start = i;
                let inside = scheme.bilou_tag(BilouPrefix::Inside, &category)?;
                let last = scheme.bilou_tag(BilouPrefix::Last, &category)?;
                let mut j = i + 1;
                while j < n && tags[j] == inside {
                    j += 1;
                }
                if j < n && tags[j] == last {
                    spans.push(Span::new(start, j, category));
                    i = j + 1;
                } else {
                    // continuity broken: close the run before the breaking tag
                    spans.push(Span::new(start, j - 1, category));
                    i = j;
                }
            }
        }
    }
    Ok(spans)
}

/// Keep only tags of the negative/absent class; every other non-O tag becomes
/// "O". The output scheme contains only the negative class. Idempotent.
pub fn filter_neg_only(seq: &TagSequence) -> TagSequence {
    let scheme = seq.scheme();
    let filtered_scheme = match scheme.kind() {
        SchemeKind::Bilou => TagScheme::bilou(&[NEG_CLASS]),
        SchemeKind::Unprefixed => TagScheme::unprefixed(&[NEG_CLASS]),
    };
    let tags = seq
        .indices()
        .iter()
        .map(|&t| match scheme.category_of(t) {
            Some(c) if c == NEG_CLASS => match scheme.kind() {
                SchemeKind::Bilou => {
                    let (prefix, _) = scheme.split_bilou(t).unwrap();
                    filtered_scheme.bilou_tag(prefix, NEG_CLASS).unwrap()
                }
                SchemeKind::Unprefixed => filtered_scheme.tag_index(NEG_CLASS).unwrap(),
            },
            _ => TagScheme::OUTSIDE,
        })
        .collect();
    TagSequence::from_indices(filtered_scheme, tags).unwrap()
}

/// Maximal runs of identical non-O tags in an un-prefixed sequence, as spans
/// labeled with the tag's category.
pub fn unprefixed_runs(seq: &TagSequence) -> Result<Vec<Span>, TagError> {
    let scheme = seq.scheme();
    if scheme.kind() != SchemeKind::Unprefixed {
        return Err(TagError::KindMismatch {
            expected: "un-prefixed",
        });
    }
    let tags = seq.indices();
    let mut runs = Vec::new();
    let mut i = 0;
    while i < tags.len() {
        if tags[i] == TagScheme::OUTSIDE {
            i += 1;
            continue;
        }
        let tag = tags[i];
        let start = i;
        while i < tags.len() && tags[i] == tag {
            i += 1;
        }
        runs.push(Span::new(
            start,
            i - 1,
            scheme.unprefixed_category(tag).unwrap(),
        ));
    }
    Ok(runs)
}
