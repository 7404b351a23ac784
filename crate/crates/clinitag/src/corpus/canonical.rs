//! The canonical line-delimited corpus format.
//!
//! UTF-8, one record per line:
//!
//! ```text
//! DOC <id>
//! SENT
//! TOK <char_start> <char_end> <text>
//! SPAN <col> <start_tok> <end_tok> <category>
//! ATTR <col> <start_tok> <end_tok> <name>=<value>
//! ```
//!
//! `SPAN` records are accepted for the "ner" column; `ATTR` records attach an
//! attribute to the span with the same extent. Blank lines and lines starting
//! with `#` are ignored on input and never emitted, so saving a loaded corpus
//! yields a normalized form.

use std::fs;
use std::path::Path;

use super::{Corpus, CorpusError, Document, Sentence, SpanAnnotation, Token, NER_COLUMN};

pub fn load_canonical(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_canonical(&text, &path.display().to_string())
}

struct PendingSentence {
    tokens: Vec<Token>,
    spans: Vec<(usize, String, usize, usize, String)>, // line, col, start, end, category
    attrs: Vec<(usize, String, usize, usize, String, String)>, // line, col, start, end, name, value
}

impl PendingSentence {
    fn new() -> PendingSentence {
        PendingSentence {
            tokens: Vec::new(),
            spans: Vec::new(),
            attrs: Vec::new(),
        }
    }

    fn finalize(self, path: &str) -> Result<Sentence, CorpusError> {
        let parse_err = |line: usize, message: String| CorpusError::Parse {
            path: path.to_string(),
            line,
            message,
        };
        let mut entities: Vec<SpanAnnotation> = Vec::new();
        for (line, col, start, end, category) in self.spans {
            if col != NER_COLUMN {
                return Err(parse_err(
                    line,
                    format!("unsupported span column `{col}` (only `{NER_COLUMN}` spans are accepted)"),
                ));
            }
            if end >= self.tokens.len() || start > end {
                return Err(parse_err(
                    line,
                    format!(
                        "span ({start},{end}) out of range for sentence of {} tokens",
                        self.tokens.len()
                    ),
                ));
            }
            entities.push(SpanAnnotation::new(start, end, category));
        }
        for (line, col, start, end, name, value) in self.attrs {
            if col != NER_COLUMN {
                return Err(parse_err(
                    line,
                    format!("unsupported attribute column `{col}`"),
                ));
            }
            let entity = entities
                .iter_mut()
                .find(|e| e.start_token == start && e.end_token == end)
                .ok_or_else(|| {
                    parse_err(line, format!("ATTR references missing span ({start},{end})"))
                })?;
            entity.attributes.insert(name, value);
        }
        Ok(Sentence::new(self.tokens, entities))
    }
}

pub fn parse_canonical(text: &str, path: &str) -> Result<Corpus, CorpusError> {
    let parse_err = |line: usize, message: String| CorpusError::Parse {
        path: path.to_string(),
        line,
        message,
    };
    let mut documents: Vec<Document> = Vec::new();
    let mut current_doc: Option<Document> = None;
    let mut current_sentence: Option<PendingSentence> = None;

    let flush_sentence = |doc: &mut Option<Document>,
                              sent: &mut Option<PendingSentence>|
     -> Result<(), CorpusError> {
        if let Some(pending) = sent.take() {
            let doc = doc.as_mut().expect("sentence outside document");
            doc.sentences.push(pending.finalize(path)?);
        }
        Ok(())
    };

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (kind, rest) = match line.split_once(' ') {
            Some((k, r)) => (k, r),
            None => (line, ""),
        };
        match kind {
            "DOC" => {
                flush_sentence(&mut current_doc, &mut current_sentence)?;
                if let Some(doc) = current_doc.take() {
                    documents.push(doc);
                }
                if rest.is_empty() || rest.contains(char::is_whitespace) {
                    return Err(parse_err(
                        line_no,
                        "DOC requires a single whitespace-free id".to_string(),
                    ));
                }
                current_doc = Some(Document {
                    id: rest.to_string(),
                    sentences: Vec::new(),
                });
            }
            "SENT" => {
                if current_doc.is_none() {
                    return Err(parse_err(line_no, "SENT before any DOC".to_string()));
                }
                if !rest.is_empty() {
                    return Err(parse_err(line_no, "SENT takes no fields".to_string()));
                }
                flush_sentence(&mut current_doc, &mut current_sentence)?;
                current_sentence = Some(PendingSentence::new());
            }
            "TOK" => {
                let sentence = current_sentence
                    .as_mut()
                    .ok_or_else(|| parse_err(line_no, "TOK before any SENT".to_string()))?;
                let mut parts = rest.splitn(3, ' ');
                let start = parse_usize(parts.next(), path, line_no, "char_start")?;
                let end = parse_usize(parts.next(), path, line_no, "char_end")?;
                let text = parts
                    .next()
                    .filter(|t| !t.is_empty())
                    .ok_or_else(|| parse_err(line_no, "TOK requires token text".to_string()))?;
                sentence.tokens.push(Token::new(text, start, end));
            }
            "SPAN" => {
                let sentence = current_sentence
                    .as_mut()
                    .ok_or_else(|| parse_err(line_no, "SPAN before any SENT".to_string()))?;
                let parts: Vec<&str> = rest.split(' ').collect();
                if parts.len() != 4 {
                    return Err(parse_err(
                        line_no,
                        "SPAN requires <col> <start> <end> <category>".to_string(),
                    ));
                }
                let start = parse_usize(Some(parts[1]), path, line_no, "start_tok")?;
                let end = parse_usize(Some(parts[2]), path, line_no, "end_tok")?;
                sentence.spans.push((
                    line_no,
                    parts[0].to_string(),
                    start,
                    end,
                    parts[3].to_string(),
                ));
            }
            "ATTR" => {
                let sentence = current_sentence
                    .as_mut()
                    .ok_or_else(|| parse_err(line_no, "ATTR before any SENT".to_string()))?;
                let parts: Vec<&str> = rest.split(' ').collect();
                if parts.len() != 4 {
                    return Err(parse_err(
                        line_no,
                        "ATTR requires <col> <start> <end> <name>=<value>".to_string(),
                    ));
                }
                let start = parse_usize(Some(parts[1]), path, line_no, "start_tok")?;
                let end = parse_usize(Some(parts[2]), path, line_no, "end_tok")?;
                let (name, value) = parts[3].split_once('=').ok_or_else(|| {
                    parse_err(line_no, "ATTR payload must be <name>=<value>".to_string())
                })?;
                if name.is_empty() || value.is_empty() {
                    return Err(parse_err(
                        line_no,
                        "ATTR name and value must be non-empty".to_string(),
                    ));
                }
                sentence.attrs.push((
                    line_no,
                    parts[0].to_string(),
                    start,
                    end,
                    name.to_string(),
                    value.to_string(),
                ));
            }
            other => {
                return Err(parse_err(line_no, format!("unknown record kind `{other}`")));
            }
        }
    }
    flush_sentence(&mut current_doc, &mut current_sentence)?;
    if let Some(doc) = current_doc.take() {
        documents.push(doc);
    }
    Corpus::from_documents(documents)
}

fn parse_usize(
    field: Option<&str>,
    path: &str,
    line: usize,
    what: &str,
) -> Result<usize, CorpusError> {
    field
        .and_then(|f| f.parse::<usize>().ok())
        .ok_or_else(|| CorpusError::Parse {
            path: path.to_string(),
            line,
            message: format!("expected non-negative integer for {what}"),
        })
}

/// Render a corpus in normalized canonical form: records in document order,
/// spans sorted by extent, attributes sorted by name.
pub fn save_canonical(corpus: &Corpus) -> String {
    let mut out = String::new();
    for doc in &corpus.documents {
        out.push_str(&format!("DOC {}\n", doc.id));
        for sentence in &doc.sentences {
            out.push_str("SENT\n");
            for tok in &sentence.tokens {
                out.push_str(&format!(
                    "TOK {} {} {}\n",
                    tok.char_start, tok.char_end, tok.text
                ));
            }
            let mut entities: Vec<&SpanAnnotation> = sentence.entities.iter().collect();
            entities.sort_by_key(|e| (e.start_token, e.end_token, e.category.clone()));
            for e in &entities {
                out.push_str(&format!(
                    "SPAN {} {} {} {}\n",
                    NER_COLUMN, e.start_token, e.end_token, e.category
                ));
            }
            for e in &entities {
                for (name, value) in &e.attributes {
                    out.push_str(&format!(
                        "ATTR {} {} {} {}={}\n",
                        NER_COLUMN, e.start_token, e.end_token, name, value
                    ));
                }
            }
        }
    }
    out
}

pub fn write_canonical(corpus: &Corpus, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    fs::write(path, save_canonical(corpus)).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}
