//! Importer for i2b2-style standoff annotations: a text file (one sentence
//! per line, whitespace tokenized), a concept file, and an optional assertion
//! file.
//!
//! Record shapes:
//!
//! ```text
//! c="<text>" <line>:<tok>~<line>:<tok>||t="<category>"
//! c="<text>" <line>:<tok>~<line>:<tok>||t="<category>"||a="<assertion>"
//! ```
//!
//! Line numbers are 1-based, token numbers 0-based. Assertion values are
//! normalized to the canonical polarity codes; concepts lacking an assertion
//! record (when an assertion file is supplied) get the distinct
//! ABSENT-ANNOTATION value. Cross-sentence spans are rejected and logged.

use std::fs;
use std::path::Path;

use super::{whitespace_tokenize, Corpus, CorpusError, Document, Sentence, SpanAnnotation};
use crate::tags::ABSENT_ANNOTATION;

/// Polarity attribute name used for imported assertions.
pub const POLARITY_COLUMN: &str = "polarity";

fn normalize_assertion(raw: &str) -> Result<&'static str, CorpusError> {
    let key: String = raw
        .trim()
        .to_ascii_lowercase()
        .chars()
        .map(|c| if c == ' ' { '_' } else { c })
        .collect();
    match key.as_str() {
        "present" => Ok("POS"),
        "absent" => Ok("NEG"),
        "possible" => Ok("POSS"),
        "conditional" => Ok("COND"),
        "hypothetical" => Ok("HYP"),
        "associated_with_someone_else" => Ok("ASW"),
        _ => Err(CorpusError::UnknownAssertion(raw.to_string())),
    }
}

#[derive(Debug, Clone, PartialEq)]
struct StandoffRecord {
    line: usize,  // 1-based sentence line
    start: usize, // token index
    end: usize,
    category: String,
    assertion: Option<String>,
    coords: String,
}

/// Parse `c="..." l:t~l:t||t="..."[||a="..."]`. Returns None for blank lines.
fn parse_record(raw: &str, path: &str, line_no: usize) -> Result<Option<StandoffRecord>, CorpusError> {
    let line = raw.trim();
    if line.is_empty() {
        return Ok(None);
    }
    let err = |message: String| CorpusError::Parse {
        path: path.to_string(),
        line: line_no,
        message,
    };
    let fields: Vec<&str> = line.split("||").collect();
    if fields.len() < 2 || fields.len() > 3 {
        return Err(err("expected 2 or 3 ||-separated fields".to_string()));
    }
    let concept = fields[0];
    if !concept.starts_with("c=\"") {
        return Err(err("first field must start with c=\"".to_string()));
    }
    let after_text = concept[3..]
        .rfind('"')
        .map(|i| &concept[3 + i + 1..])
        .ok_or_else(|| err("unterminated concept text".to_string()))?;
    let coords = after_text.trim();
    let (from, to) = coords
        .split_once('~')
        .ok_or_else(|| err(format!("bad coordinates `{coords}`")))?;
    let parse_coord = |c: &str| -> Result<(usize, usize), CorpusError> {
        let (l, t) = c
            .split_once(':')
            .ok_or_else(|| err(format!("bad coordinate `{c}`")))?;
        let l = l
            .parse::<usize>()
            .map_err(|_| err(format!("bad line number `{l}`")))?;
        let t = t
            .parse::<usize>()
            .map_err(|_| err(format!("bad token number `{t}`")))?;
        if l == 0 {
            return Err(err("line numbers are 1-based".to_string()));
        }
        Ok((l, t))
    };
    let (l1, t1) = parse_coord(from)?;
    let (l2, t2) = parse_coord(to)?;

    let strip_quoted = |field: &str, prefix: &str| -> Result<String, CorpusError> {
        field
            .strip_prefix(prefix)
            .and_then(|f| f.strip_suffix('"'))
            .map(|s| s.to_string())
            .ok_or_else(|| err(format!("field must look like {prefix}...\"")))
    };
    let category = strip_quoted(fields[1], "t=\"")?;
    let assertion = if fields.len() == 3 {
        Some(strip_quoted(fields[2], "a=\"")?)
    } else {
        None
    };

    if l1 != l2 {
        log::warn!("{path}:{line_no}: skipping cross-sentence span {coords}");
        return Ok(None);
    }
    Ok(Some(StandoffRecord {
        line: l1,
        start: t1,
        end: t2,
        category,
        assertion,
        coords: coords.to_string(),
    }))
}

fn read_records(path: &Path) -> Result<Vec<StandoffRecord>, CorpusError> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let display = path.display().to_string();
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if let Some(r) = parse_record(line, &display, idx + 1)? {
            records.push(r);
        }
    }
    Ok(records)
}

/// Import a standoff-annotated document. The document id is the text file
/// stem.
pub fn import_standoff(
    text_path: impl AsRef<Path>,
    concept_path: impl AsRef<Path>,
    assertion_path: Option<&Path>,
) -> Result<Corpus, CorpusError> {
    let text_path = text_path.as_ref();
    let text = fs::read_to_string(text_path).map_err(|source| CorpusError::Io {
        path: text_path.display().to_string(),
        source,
    })?;
    let doc_id = text_path
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "standoff".to_string());

    let mut sentences: Vec<Sentence> = text
        .lines()
        .map(|line| Sentence::new(whitespace_tokenize(line), Vec::new()))
        .collect();

    let concepts = read_records(concept_path.as_ref())?;
    for record in &concepts {
        let sentence = sentences.get_mut(record.line - 1).ok_or_else(|| {
            CorpusError::CoordinateOutOfRange {
                coords: record.coords.clone(),
                message: format!("text file has {} lines", text.lines().count()),
            }
        })?;
        if record.start > record.end || record.end >= sentence.len() {
            return Err(CorpusError::CoordinateOutOfRange {
                coords: record.coords.clone(),
                message: format!("sentence has {} tokens", sentence.len()),
            });
        }
        sentence.entities.push(SpanAnnotation::new(
            record.start,
            record.end,
            record.category.clone(),
        ));
    }

    if let Some(assertion_path) = assertion_path {
        for record in read_records(assertion_path)? {
            let assertion = record.assertion.as_deref().ok_or_else(|| CorpusError::Parse {
                path: assertion_path.display().to_string(),
                line: 0,
                message: format!("assertion record {} lacks a=\"...\"", record.coords),
            })?;
            let value = normalize_assertion(assertion)?;
            let sentence = sentences.get_mut(record.line - 1).ok_or_else(|| {
                CorpusError::DanglingAssertion {
                    coords: record.coords.clone(),
                }
            })?;
            let entity = sentence
                .entities
                .iter_mut()
                .find(|e| e.start_token == record.start && e.end_token == record.end)
                .ok_or_else(|| CorpusError::DanglingAssertion {
                    coords: record.coords.clone(),
                })?;
            entity
                .attributes
                .insert(POLARITY_COLUMN.to_string(), value.to_string());
        }
        // selective annotation: concepts without an assertion keep a distinct
        // marker value rather than a real polarity
        for sentence in &mut sentences {
            for entity in &mut sentence.entities {
                entity
                    .attributes
                    .entry(POLARITY_COLUMN.to_string())
                    .or_insert_with(|| ABSENT_ANNOTATION.to_string());
            }
        }
    }

    Corpus::from_documents(vec![Document {
        id: doc_id,
        sentences,
    }])
}
