//! Deterministic synthetic corpus generator. Stands in for license-restricted
//! clinical corpora: same annotation structure (entity categories, polarity,
//! optional modality, optional selective annotation), fully seeded.

use std::path::Path;

use super::{Corpus, CorpusError, Document, Sentence, SpanAnnotation, Token};
use crate::numerics::Rng;
use crate::tags::{ABSENT_ANNOTATION, NEG_CLASS};

/// Flat key=value generator configuration.
///
/// ```text
/// sentences=200
/// categories=problem,treatment,test
/// vocab_size=80
/// min_tokens=4
/// max_tokens=10
/// entity_prob=0.35
/// max_entity_tokens=3
/// polarity_values=POS,NEG
/// neg_fraction=0.4
/// modality_values=FACTUAL,POSSIBLE
/// selective_category=problem
/// negation_cue=true
/// ```
///
/// `polarity_values` may be empty (no polarity attributes at all);
/// `selective_category` limits polarity to one entity category, the rest
/// getting the ABSENT-ANNOTATION marker; `negation_cue` inserts a cue token
/// ("no" for NEG, the lowercased value for other non-POS polarities) before
/// the span so polarity is learnable from context.
#[derive(Debug, Clone)]
pub struct GeneratorConfig {
    pub sentences: usize,
    pub categories: Vec<String>,
    pub vocab_size: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub entity_prob: f64,
    pub max_entity_tokens: usize,
    pub polarity_values: Vec<String>,
    pub neg_fraction: f64,
    pub modality_values: Vec<String>,
    pub selective_category: Option<String>,
    pub negation_cue: bool,
}

impl Default for GeneratorConfig {
    fn default() -> GeneratorConfig {
        GeneratorConfig {
            sentences: 100,
            categories: vec!["problem".into(), "treatment".into(), "test".into()],
            vocab_size: 80,
            min_tokens: 4,
            max_tokens: 10,
            entity_prob: 0.35,
            max_entity_tokens: 3,
            polarity_values: vec!["POS".into(), NEG_CLASS.into()],
            neg_fraction: 0.4,
            modality_values: Vec::new(),
            selective_category: None,
            negation_cue: true,
        }
    }
}

impl GeneratorConfig {
    pub fn parse(text: &str) -> Result<GeneratorConfig, CorpusError> {
        let mut cfg = GeneratorConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| CorpusError::Parse {
                path: "<generator-config>".to_string(),
                line: idx + 1,
                message: "expected key=value".to_string(),
            })?;
            let key = key.trim();
            let value = value.trim();
            let bad = |message: String| CorpusError::Parse {
                path: "<generator-config>".to_string(),
                line: idx + 1,
                message,
            };
            let list = |v: &str| -> Vec<String> {
                v.split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect()
            };
            match key {
                "sentences" => cfg.sentences = value.parse().map_err(|_| bad(format!("bad integer `{value}`")))?,
                "categories" => cfg.categories = list(value),
                "vocab_size" => cfg.vocab_size = value.parse().map_err(|_| bad(format!("bad integer `{value}`")))?,
                "min_tokens" => cfg.min_tokens = value.parse().map_err(|_| bad(format!("bad integer `{value}`")))?,
                "max_tokens" => cfg.max_tokens = value.parse().map_err(|_| bad(format!("bad integer `{value}`")))?,
                "entity_prob" => cfg.entity_prob = value.parse().map_err(|_| bad(format!("bad float `{value}`")))?,
                "max_entity_tokens" => cfg.max_entity_tokens = value.parse().map_err(|_| bad(format!("bad integer `{value}`")))?,
                "polarity_values" => cfg.polarity_values = list(value),
                "neg_fraction" => cfg.neg_fraction = value.parse().map_err(|_| bad(format!("bad float `{value}`")))?,
                "modality_values" => cfg.modality_values = list(value),
                "selective_category" => {
                    cfg.selective_category = if value.is_empty() {
                        None
                    } else {
                        Some(value.to_string())
                    }
                }
                "negation_cue" => {
                    cfg.negation_cue = value
                        .parse()
                        .map_err(|_| bad(format!("bad boolean `{value}`")))?
                }
                other => return Err(bad(format!("unknown key `{other}`"))),
            }
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<GeneratorConfig, CorpusError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        GeneratorConfig::parse(&text)
    }

    fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: &str| Err(CorpusError::DegenerateConfig(m.to_string()));
        if self.sentences == 0 {
            return bad("sentences must be >= 1");
        }
        if self.categories.is_empty() {
            return bad("at least one entity category is required");
        }
        if self.vocab_size == 0 {
            return bad("vocab_size must be >= 1");
        }
        if self.min_tokens == 0 || self.max_tokens < self.min_tokens {
            return bad("token length range must satisfy 1 <= min_tokens <= max_tokens");
        }
        if self.max_entity_tokens == 0 {
            return bad("max_entity_tokens must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.entity_prob) {
            return bad("entity_prob must be in [0,1]");
        }
        if !(0.0..=1.0).contains(&self.neg_fraction) {
            return bad("neg_fraction must be in [0,1]");
        }
        if !self.polarity_values.is_empty() {
            let has_other = self.polarity_values.iter().any(|v| v != NEG_CLASS);
            if self.neg_fraction < 1.0 && !has_other {
                return bad("neg_fraction < 1 requires a non-NEG polarity value");
            }
            if self.neg_fraction > 0.0 && !self.polarity_values.iter().any(|v| v == NEG_CLASS) {
                return bad("neg_fraction > 0 requires NEG among polarity_values");
            }
        }
        if let Some(cat) = &self.selective_category {
            if !self.categories.contains(cat) {
                return bad("selective_category must be one of the entity categories");
            }
        }
        Ok(())
    }
}

struct SentenceBuilder {
    texts: Vec<String>,
    entities: Vec<SpanAnnotation>,
}

impl SentenceBuilder {
    fn into_sentence(self) -> Sentence {
        let mut tokens = Vec::with_capacity(self.texts.len());
        let mut cursor = 0;
        for text in self.texts {
            let start = cursor;
            let end = start + text.len();
            tokens.push(Token::new(text, start, end));
            cursor = end + 1;
        }
        Sentence::new(tokens, self.entities)
    }
}

fn sample_polarity(cfg: &GeneratorConfig, rng: &mut Rng) -> Option<String> {
    if cfg.polarity_values.is_empty() {
        return None;
    }
    let others: Vec<&String> = cfg
        .polarity_values
        .iter()
        .filter(|v| v.as_str() != NEG_CLASS)
        .collect();
    if (cfg.neg_fraction > 0.0 && rng.chance(cfg.neg_fraction)) || others.is_empty() {
        Some(NEG_CLASS.to_string())
    } else {
        Some(others[rng.below(others.len())].clone())
    }
}

fn cue_token(polarity: &str) -> Option<String> {
    match polarity {
        NEG_CLASS => Some("no".to_string()),
        "POS" => None,
        other => Some(other.to_ascii_lowercase()),
    }
}

/// Generate a corpus. Deterministic: the same (config, seed) pair yields a
/// byte-identical corpus.
pub fn generate_synthetic(cfg: &GeneratorConfig, seed: u64) -> Result<Corpus, CorpusError> {
    cfg.validate()?;
    let mut rng = Rng::new(seed).derive("synthetic-corpus");
    let entity_vocab = (cfg.vocab_size / 8).max(4);

    let mut sentences = Vec::with_capacity(cfg.sentences);
    for _ in 0..cfg.sentences {
        let target = rng.range(cfg.min_tokens, cfg.max_tokens);
        let mut b = SentenceBuilder {
            texts: Vec::new(),
            entities: Vec::new(),
        };
        let mut need_gap = false;
        while b.texts.len() < target {
            let room = target - b.texts.len();
            let start_entity = !need_gap && rng.chance(cfg.entity_prob);
            if start_entity {
                let category = cfg.categories[rng.below(cfg.categories.len())].clone();
                let polarity = sample_polarity(cfg, &mut rng);
                let annotate = match (&polarity, &cfg.selective_category) {
                    (Some(_), Some(sel)) => *sel == category,
                    (Some(_), None) => true,
                    (None, _) => false,
                };
                let mut room = room;
                if annotate && cfg.negation_cue {
                    if let Some(cue) = polarity.as_deref().and_then(cue_token) {
                        if room >= 2 {
                            b.texts.push(cue);
                            room -= 1;
                        }
                    }
                }
                let span_len = rng.range(1, cfg.max_entity_tokens.min(room));
                let start = b.texts.len();
                for _ in 0..span_len {
                    b.texts
                        .push(format!("{category}{:02}", rng.below(entity_vocab)));
                }
                let mut entity = SpanAnnotation::new(start, start + span_len - 1, &category);
                if !cfg.polarity_values.is_empty() {
                    let value = if annotate {
                        polarity.unwrap()
                    } else {
                        ABSENT_ANNOTATION.to_string()
                    };
                    entity.attributes.insert("polarity".to_string(), value);
                }
                if !cfg.modality_values.is_empty() {
                    let value = cfg.modality_values[rng.below(cfg.modality_values.len())].clone();
                    entity.attributes.insert("modality".to_string(), value);
                }
                b.entities.push(entity);
                need_gap = true;
            } else {
                b.texts.push(format!("w{:03}", rng.below(cfg.vocab_size)));
                need_gap = false;
            }
        }
        sentences.push(b.into_sentence());
    }

    Corpus::from_documents(vec![Document {
        id: "synth".to_string(),
        sentences,
    }])
}
