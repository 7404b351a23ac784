//! Annotated corpora: loading, validation, standoff import, and synthetic
//! generation.
//!
//! The engine consumes pre-tokenized sentences only. Entity spans live on the
//! "ner" column; attributes (polarity, modality) are attached to entity spans
//! and materialized into aligned per-token tag columns.

mod canonical;
mod standoff;
mod synth;

pub use canonical::{load_canonical, parse_canonical, save_canonical, write_canonical};
pub use standoff::import_standoff;
pub use synth::{generate_synthetic, GeneratorConfig};

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use thiserror::Error;

use crate::tags::{encode_bilou, Span, TagError, TagScheme, TagSequence};

/// Name of the span column carrying entity annotations.
pub const NER_COLUMN: &str = "ner";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("document {doc} sentence {sentence}: {source}")]
    InvalidSentence {
        doc: String,
        sentence: usize,
        #[source]
        source: TagError,
    },
    #[error("document {doc} sentence {sentence}: token {token} is malformed ({message})")]
    InvalidToken {
        doc: String,
        sentence: usize,
        token: usize,
        message: String,
    },
    #[error("dangling assertion record: no concept span at {coords}")]
    DanglingAssertion { coords: String },
    #[error("coordinate out of range: {coords} ({message})")]
    CoordinateOutOfRange { coords: String, message: String },
    #[error("unrecognized assertion value `{0}`")]
    UnknownAssertion(String),
    #[error("degenerate generator config: {0}")]
    DegenerateConfig(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A single token with its character extent in the source sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub char_start: usize,
    pub char_end: usize,
}

impl Token {
    pub fn new(text: impl Into<String>, char_start: usize, char_end: usize) -> Token {
        Token {
            text: text.into(),
            char_start,
            char_end,
        }
    }
}

/// An entity span over token indices (inclusive end) with its category and
/// any attached attributes (e.g. polarity → NEG).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpanAnnotation {
    pub start_token: usize,
    pub end_token: usize,
    pub category: String,
    pub attributes: BTreeMap<String, String>,
}

impl SpanAnnotation {
    pub fn new(start_token: usize, end_token: usize, category: impl Into<String>) -> SpanAnnotation {
        SpanAnnotation {
            start_token,
            end_token,
            category: category.into(),
            attributes: BTreeMap::new(),
        }
    }

    pub fn with_attribute(mut self, name: &str, value: &str) -> SpanAnnotation {
        self.attributes.insert(name.to_string(), value.to_string());
        self
    }

    pub fn extent(&self) -> (usize, usize) {
        (self.start_token, self.end_token)
    }
}

/// A tokenized sentence with its entity annotations and derived tag columns.
#[derive(Debug, Clone)]
pub struct Sentence {
    pub tokens: Vec<Token>,
    pub entities: Vec<SpanAnnotation>,
    tag_columns: BTreeMap<String, TagSequence>,
}

impl Sentence {
    pub fn new(tokens: Vec<Token>, entities: Vec<SpanAnnotation>) -> Sentence {
        Sentence {
            tokens,
            entities,
            tag_columns: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Materialized gold tag column, present after corpus construction.
    pub fn tag_column(&self, name: &str) -> Option<&TagSequence> {
        self.tag_columns.get(name)
    }

    pub fn tag_columns(&self) -> &BTreeMap<String, TagSequence> {
        &self.tag_columns
    }

    /// Entity spans as (start, end, category) triples.
    pub fn entity_spans(&self) -> Vec<Span> {
        self.entities
            .iter()
            .map(|e| Span::new(e.start_token, e.end_token, e.category.clone()))
            .collect()
    }

    /// Spans carrying the named attribute, labeled with the attribute value.
    pub fn attribute_spans(&self, attribute: &str) -> Vec<Span> {
        self.entities
            .iter()
            .filter_map(|e| {
                e.attributes
                    .get(attribute)
                    .map(|v| Span::new(e.start_token, e.end_token, v.clone()))
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Document {
    pub id: String,
    pub sentences: Vec<Sentence>,
}

/// A validated corpus. Construction checks every invariant and materializes
/// the canonical (BILOU) gold tag columns, one per annotated column name.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub documents: Vec<Document>,
    pub schemes: BTreeMap<String, Arc<TagScheme>>,
}

impl Corpus {
    pub fn empty() -> Corpus {
        Corpus {
            documents: Vec::new(),
            schemes: BTreeMap::new(),
        }
    }

    /// Validate raw documents and build the per-column schemes and gold tag
    /// columns. Column categories are the sorted set of observed values, so
    /// schemes are deterministic for a given annotation set.
    pub fn from_documents(documents: Vec<Document>) -> Result<Corpus, CorpusError> {
        let mut ner_categories: BTreeSet<String> = BTreeSet::new();
        let mut attribute_values: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();

        for doc in &documents {
            for (s_idx, sentence) in doc.sentences.iter().enumerate() {
                validate_tokens(&doc.id, s_idx, &sentence.tokens)?;
                validate_entities(&doc.id, s_idx, sentence)?;
                for entity in &sentence.entities {
                    ner_categories.insert(entity.category.clone());
                    for (attr, value) in &entity.attributes {
                        attribute_values
                            .entry(attr.clone())
                            .or_default()
                            .insert(value.clone());
                    }
                }
            }
        }

        let mut schemes: BTreeMap<String, Arc<TagScheme>> = BTreeMap::new();
        let has_sentences = documents.iter().any(|d| !d.sentences.is_empty());
        if has_sentences {
            let ner_cats: Vec<String> = ner_categories.into_iter().collect();
            schemes.insert(NER_COLUMN.to_string(), TagScheme::bilou(&ner_cats));
            for (attr, values) in &attribute_values {
                let vals: Vec<String> = values.iter().cloned().collect();
                schemes.insert(attr.clone(), TagScheme::bilou(&vals));
            }
        }

        let mut corpus = Corpus { documents, schemes };
        corpus.materialize_columns()?;
        Ok(corpus)
    }

    fn materialize_columns(&mut self) -> Result<(), CorpusError> {
        let schemes = self.schemes.clone();
        for doc in &mut self.documents {
            let doc_id = doc.id.clone();
            for (s_idx, sentence) in doc.sentences.iter_mut().enumerate() {
                let mut columns = BTreeMap::new();
                for (column, scheme) in &schemes {
                    let spans = if column == NER_COLUMN {
                        sentence.entity_spans()
                    } else {
                        sentence.attribute_spans(column)
                    };
                    let seq = encode_bilou(&spans, sentence.len(), scheme).map_err(|source| {
                        CorpusError::InvalidSentence {
                            doc: doc_id.clone(),
                            sentence: s_idx,
                            source,
                        }
                    })?;
                    columns.insert(column.clone(), seq);
                }
                sentence.tag_columns = columns;
            }
        }
        Ok(())
    }

    pub fn num_documents(&self) -> usize {
        self.documents.len()
    }

    pub fn num_sentences(&self) -> usize {
        self.documents.iter().map(|d| d.sentences.len()).sum()
    }

    /// Column names carrying attribute annotations (everything except "ner").
    pub fn attribute_columns(&self) -> Vec<String> {
        self.schemes
            .keys()
            .filter(|k| k.as_str() != NER_COLUMN)
            .cloned()
            .collect()
    }

    /// Iterate (doc id, sentence index within doc, sentence).
    pub fn sentences(&self) -> impl Iterator<Item = (&str, usize, &Sentence)> {
        self.documents.iter().flat_map(|d| {
            d.sentences
                .iter()
                .enumerate()
                .map(move |(i, s)| (d.id.as_str(), i, s))
        })
    }
}

fn validate_tokens(doc: &str, sentence: usize, tokens: &[Token]) -> Result<(), CorpusError> {
    for (i, tok) in tokens.iter().enumerate() {
        if tok.char_start >= tok.char_end {
            return Err(CorpusError::InvalidToken {
                doc: doc.to_string(),
                sentence,
                token: i,
                message: format!(
                    "char_start {} must be < char_end {}",
                    tok.char_start, tok.char_end
                ),
            });
        }
        if i > 0 && tokens[i - 1].char_end > tok.char_start {
            return Err(CorpusError::InvalidToken {
                doc: doc.to_string(),
                sentence,
                token: i,
                message: "tokens must be ordered and non-overlapping".to_string(),
            });
        }
    }
    Ok(())
}

fn validate_entities(doc: &str, s_idx: usize, sentence: &Sentence) -> Result<(), CorpusError> {
    let len = sentence.len();
    let mut sorted: Vec<&SpanAnnotation> = sentence.entities.iter().collect();
    sorted.sort_by_key(|e| (e.start_token, e.end_token));
    let to_err = |source: TagError| CorpusError::InvalidSentence {
        doc: doc.to_string(),
        sentence: s_idx,
        source,
    };
    for e in &sorted {
        if e.start_token > e.end_token {
            return Err(to_err(TagError::InvertedSpan(e.start_token, e.end_token)));
        }
        if e.end_token >= len {
            return Err(to_err(TagError::SpanOutOfRange {
                start: e.start_token,
                end: e.end_token,
                len,
            }));
        }
    }
    for pair in sorted.windows(2) {
        if pair[1].start_token <= pair[0].end_token {
            return Err(to_err(TagError::Overlap(
                pair[0].start_token,
                pair[0].end_token,
                pair[1].start_token,
                pair[1].end_token,
            )));
        }
    }
    Ok(())
}

/// Whitespace tokenizer with character offsets. Convenience only — the
/// canonical pipeline consumes pre-tokenized input; this is not a clinical
/// tokenizer.
pub fn whitespace_tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut start = None;
    for (i, ch) in text.char_indices() {
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                tokens.push(Token::new(&text[s..i], s, i));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        tokens.push(Token::new(&text[s..], s, text.len()));
    }
    tokens
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simple_doc() -> Document {
        let tokens = vec![Token::new("No", 0, 2), Token::new("orthopnea", 3, 12)];
        let entity = SpanAnnotation::new(1, 1, "problem").with_attribute("polarity", "NEG");
        Document {
            id: "d1".to_string(),
            sentences: vec![Sentence::new(tokens, vec![entity])],
        }
    }

    #[test]
    fn builds_columns_and_schemes() {
        let corpus = Corpus::from_documents(vec![simple_doc()]).unwrap();
        let sentence = &corpus.documents[0].sentences[0];
        assert_eq!(
            sentence.tag_column("ner").unwrap().names(),
            vec!["O", "U-problem"]
        );
        assert_eq!(
            sentence.tag_column("polarity").unwrap().names(),
            vec!["O", "U-NEG"]
        );
        assert_eq!(corpus.attribute_columns(), vec!["polarity".to_string()]);
    }

    #[test]
    fn empty_corpus_is_fine() {
        let corpus = Corpus::from_documents(vec![]).unwrap();
        assert_eq!(corpus.num_documents(), 0);
        assert!(corpus.schemes.is_empty());
    }

    #[test]
    fn rejects_overlapping_entities() {
        let tokens = vec![
            Token::new("a", 0, 1),
            Token::new("b", 2, 3),
            Token::new("c", 4, 5),
        ];
        let doc = Document {
            id: "d".to_string(),
            sentences: vec![Sentence::new(
                tokens,
                vec![
                    SpanAnnotation::new(0, 1, "problem"),
                    SpanAnnotation::new(1, 2, "test"),
                ],
            )],
        };
        assert!(matches!(
            Corpus::from_documents(vec![doc]),
            Err(CorpusError::InvalidSentence { .. })
        ));
    }

    #[test]
    fn rejects_bad_token_offsets() {
        let doc = Document {
            id: "d".to_string(),
            sentences: vec![Sentence::new(vec![Token::new("x", 5, 5)], vec![])],
        };
        assert!(matches!(
            Corpus::from_documents(vec![doc]),
            Err(CorpusError::InvalidToken { .. })
        ));
    }

    #[test]
    fn rejects_out_of_range_span() {
        let doc = Document {
            id: "d".to_string(),
            sentences: vec![Sentence::new(
                vec![Token::new("x", 0, 1)],
                vec![SpanAnnotation::new(0, 3, "problem")],
            )],
        };
        assert!(Corpus::from_documents(vec![doc]).is_err());
    }

    #[test]
    fn whitespace_tokenizer_offsets() {
        let toks = whitespace_tokenize("No  orthopnea ");
        assert_eq!(toks.len(), 2);
        assert_eq!(toks[0], Token::new("No", 0, 2));
        assert_eq!(toks[1], Token::new("orthopnea", 4, 13));
    }
}
