//! Training loop, corpus preparation per head, evaluation against gold
//! spans, and the loss-coefficient ablation harness.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{load_canonical, Corpus, CorpusError, Token, NER_COLUMN};
use crate::metrics::{
    span_micro_f1, token_accuracy, ConfusionTally, HeadMetrics, MetricsError, MetricsReport, Prf,
};
use crate::model::{
    ForwardOutput, HeadOutput, Mode, Model, ModelConfig, ModelError, NER_HEAD,
};
use crate::numerics::{Adam, NumericsError, ParameterStore};
use crate::tags::{
    encode_bilou, encode_unprefixed, filter_neg_only, SchemeKind, Span, TagError, TagScheme,
    NEG_CLASS,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error("corpus has no `{0}` column required by a configured head")]
    HeadColumnMismatch(String),
    #[error("scheme mismatch for head `{head}`: {detail}")]
    SchemeMismatch { head: String, detail: String },
    #[error("non-finite loss at epoch {epoch}, document `{doc}` sentence {sentence}")]
    NonFiniteLoss {
        epoch: usize,
        doc: String,
        sentence: usize,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tag(#[from] TagError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Which polarity labels participate in training and scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Regime {
    /// All annotated attribute values.
    #[default]
    #[serde(rename = "all")]
    AllPolarity,
    /// Only the negative/absent class; every other polarity tag becomes "O".
    #[serde(rename = "neg-only")]
    NegOnly,
}

fn default_epochs() -> usize {
    50
}
fn default_lr() -> f64 {
    1e-3
}
fn default_accumulation() -> usize {
    16
}
fn default_clip() -> f64 {
    5.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub train: String,
    /// Development corpus; defaults to the training corpus.
    #[serde(default)]
    pub dev: Option<String>,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    /// Gradient-accumulation window in sentences.
    #[serde(default = "default_accumulation")]
    pub accumulation: usize,
    /// Early stopping: epochs without dev entity span-F1 improvement before
    /// training halts. Absent = run all epochs.
    #[serde(default)]
    pub patience: Option<usize>,
    #[serde(default = "default_clip")]
    pub clip_norm: f64,
    #[serde(default)]
    pub regime: Regime,
    /// Master seed; overrides the model section's seed.
    #[serde(default)]
    pub seed: u64,
    pub model: ModelConfig,
}

impl TrainConfig {
    pub fn parse(text: &str) -> Result<TrainConfig, TrainError> {
        let config: TrainConfig =
            toml::from_str(text).map_err(|e| TrainError::BadConfig(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<TrainConfig, TrainError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| TrainError::Io {
            path: path.display().to_string(),
            source,
        })?;
        TrainConfig::parse(&text)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::BadConfig("epochs must be >= 1".to_string()));
        }
        if self.accumulation == 0 {
            return Err(TrainError::BadConfig(
                "accumulation must be >= 1".to_string(),
            ));
        }
        // written as negations so NaN fails validation too
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(self.learning_rate > 0.0) {
            return Err(TrainError::BadConfig(
                "learning_rate must be positive".to_string(),
            ));
        }
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(self.clip_norm > 0.0) {
            return Err(TrainError::BadConfig(
                "clip_norm must be positive".to_string(),
            ));
        }
        Ok(())
    }

    /// The model configuration with the master seed injected.
    pub fn resolved_model(&self) -> ModelConfig {
        let mut model = self.model.clone();
        model.seed = self.seed;
        model
    }
}

/// Derive the per-head tag schemes a model will train against: entity
/// categories for the "ner" head, attribute values for attribute heads, with
/// the scheme kind dictated by the architecture and the NEG-only regime
/// collapsing the polarity vocabulary.
pub fn derive_schemes(
    corpus: &Corpus,
    config: &ModelConfig,
    regime: Regime,
) -> Result<BTreeMap<String, Arc<TagScheme>>, TrainError> {
    let mut schemes = BTreeMap::new();
    for head in &config.heads {
        let kind = config.architecture.scheme_kind(&head.name);
        let categories: Vec<String> = if head.name == NER_HEAD {
            corpus
                .schemes
                .get(NER_COLUMN)
                .ok_or_else(|| TrainError::HeadColumnMismatch(NER_COLUMN.to_string()))?
                .categories()
                .to_vec()
        } else {
            let column = corpus
                .schemes
                .get(&head.name)
                .ok_or_else(|| TrainError::HeadColumnMismatch(head.name.clone()))?;
            if regime == Regime::NegOnly && head.name == "polarity" {
                vec![NEG_CLASS.to_string()]
            } else {
                column.categories().to_vec()
            }
        };
        let scheme = match kind {
            SchemeKind::Bilou => TagScheme::bilou(&categories),
            SchemeKind::Unprefixed => TagScheme::unprefixed(&categories),
        };
        schemes.insert(head.name.clone(), scheme);
    }
    Ok(schemes)
}

/// One sentence with its per-head gold columns and evaluation spans.
#[derive(Debug, Clone)]
pub struct PreparedSentence {
    pub doc: String,
    pub sentence_index: usize,
    pub tokens: Vec<Token>,
    pub gold: BTreeMap<String, Vec<usize>>,
    pub gold_spans: BTreeMap<String, Vec<Span>>,
}

fn neg_only_scheme(scheme: &Arc<TagScheme>) -> bool {
    scheme.categories() == [NEG_CLASS.to_string()]
}

/// Materialize gold columns for every model head. A head scheme containing
/// only the NEG class triggers the NEG-only filter; otherwise every observed
/// value must be in the head's vocabulary.
pub fn prepare(corpus: &Corpus, model: &Model) -> Result<Vec<PreparedSentence>, TrainError> {
    let specs = model.head_specs();
    let mut prepared = Vec::new();
    for (doc, sentence_index, sentence) in corpus.sentences() {
        if sentence.is_empty() {
            log::warn!("skipping empty sentence {sentence_index} in document `{doc}`");
            continue;
        }
        let n = sentence.len();
        let mut gold = BTreeMap::new();
        let mut gold_spans = BTreeMap::new();
        for spec in &specs {
            let spans: Vec<Span> = if spec.name == NER_HEAD {
                sentence.entity_spans()
            } else {
                sentence.attribute_spans(&spec.name)
            };
            let neg_only = spec.name != NER_HEAD && neg_only_scheme(&spec.scheme);
            let (column, eval_spans) = if neg_only {
                // encode against the full observed vocabulary, then apply the
                // NEG-only filter
                let full_values: Vec<String> = corpus
                    .schemes
                    .get(&spec.name)
                    .map(|s| s.categories().to_vec())
                    .unwrap_or_default();
                let full_scheme = match spec.scheme.kind() {
                    SchemeKind::Bilou => TagScheme::bilou(&full_values),
                    SchemeKind::Unprefixed => TagScheme::unprefixed(&full_values),
                };
                let full = match spec.scheme.kind() {
                    SchemeKind::Bilou => encode_bilou(&spans, n, &full_scheme)?,
                    SchemeKind::Unprefixed => encode_unprefixed(&spans, n, &full_scheme)?,
                };
                let filtered = filter_neg_only(&full);
                if filtered.scheme().tags() != spec.scheme.tags() {
                    return Err(TrainError::SchemeMismatch {
                        head: spec.name.clone(),
                        detail: "NEG-only filter produced an unexpected vocabulary".to_string(),
                    });
                }
                let eval_spans: Vec<Span> =
                    spans.into_iter().filter(|s| s.label == NEG_CLASS).collect();
                (filtered.indices().to_vec(), eval_spans)
            } else {
                for span in &spans {
                    if !spec.scheme.categories().contains(&span.label) {
                        return Err(TrainError::SchemeMismatch {
                            head: spec.name.clone(),
                            detail: format!(
                                "corpus value `{}` is not in the model vocabulary {:?}",
                                span.label,
                                spec.scheme.categories()
                            ),
                        });
                    }
                }
                let seq = match spec.scheme.kind() {
                    SchemeKind::Bilou => encode_bilou(&spans, n, &spec.scheme)?,
                    SchemeKind::Unprefixed => encode_unprefixed(&spans, n, &spec.scheme)?,
                };
                (seq.indices().to_vec(), spans)
            };
            gold.insert(spec.name.clone(), column);
            gold_spans.insert(spec.name.clone(), eval_spans);
        }
        prepared.push(PreparedSentence {
            doc: doc.to_string(),
            sentence_index,
            tokens: sentence.tokens.clone(),
            gold,
            gold_spans,
        });
    }
    Ok(prepared)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EvalOptions {
    /// Score the gold columns against themselves (oracle identity check).
    pub inject_gold: bool,
    /// Exclude classes absent from both gold and prediction from the macro
    /// average.
    pub skip_absent_classes: bool,
}

/// Predict every sentence and aggregate span tallies and token accuracy per
/// head.
pub fn evaluate_prepared(
    model: &Model,
    store: &ParameterStore,
    prepared: &[PreparedSentence],
    opts: EvalOptions,
) -> Result<MetricsReport, TrainError> {
    let specs = model.head_specs();
    let mut tallies: BTreeMap<String, ConfusionTally> = BTreeMap::new();
    let mut token_pairs: BTreeMap<String, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for spec in &specs {
        tallies.insert(spec.name.clone(), ConfusionTally::default());
        token_pairs.insert(spec.name.clone(), (Vec::new(), Vec::new()));
    }
    if prepared.is_empty() {
        log::warn!("evaluating an empty corpus: all metrics are zero");
    }

    for sentence in prepared {
        let predictions = if opts.inject_gold {
            let heads: Vec<HeadOutput> = specs
                .iter()
                .map(|spec| HeadOutput {
                    name: spec.name.clone(),
                    loss: 0.0,
                    predicted: sentence.gold[&spec.name].clone(),
                    fused_input: None,
                })
                .collect();
            let output = ForwardOutput {
                mode: Mode::Eval,
                total_loss: 0.0,
                heads,
                forcing_tags: None,
            };
            model.decode_output(&output)?
        } else {
            model.predict(
                store,
                &sentence.doc,
                sentence.sentence_index,
                &sentence.tokens,
            )?
        };
        for spec in &specs {
            let prediction = &predictions[&spec.name];
            let gold_spans = &sentence.gold_spans[&spec.name];
            let (_, tally) = span_micro_f1(gold_spans, &prediction.spans);
            tallies.get_mut(&spec.name).unwrap().merge(&tally);
            let (gold_acc, pred_acc) = token_pairs.get_mut(&spec.name).unwrap();
            gold_acc.extend_from_slice(&sentence.gold[&spec.name]);
            pred_acc.extend_from_slice(prediction.tags.indices());
        }
    }

    let mut report = MetricsReport::default();
    for spec in &specs {
        let tally = tallies.remove(&spec.name).unwrap();
        let micro = Prf::from_counts(tally.pooled());
        let classes: Vec<String> = spec.scheme.categories().to_vec();
        let mut per_class = BTreeMap::new();
        let mut sum = (0.0, 0.0, 0.0);
        let mut counted = 0usize;
        for class in &classes {
            let counts = tally.per_class.get(class).copied().unwrap_or_default();
            let absent = counts.tp + counts.fp + counts.fn_ == 0;
            let prf = Prf::from_counts(counts);
            per_class.insert(class.clone(), prf);
            if absent && opts.skip_absent_classes {
                continue;
            }
            sum = (sum.0 + prf.precision, sum.1 + prf.recall, sum.2 + prf.f1);
            counted += 1;
        }
        let macro_ = if counted == 0 {
            Prf::zero()
        } else {
            Prf {
                precision: sum.0 / counted as f64,
                recall: sum.1 / counted as f64,
                f1: sum.2 / counted as f64,
            }
        };
        let (gold_acc, pred_acc) = &token_pairs[&spec.name];
        let accuracy = if gold_acc.is_empty() {
            0.0
        } else {
            token_accuracy(gold_acc, pred_acc)?
        };
        report.heads.insert(
            spec.name.clone(),
            HeadMetrics {
                token_accuracy: accuracy,
                micro,
                per_class,
                macro_,
                tally,
            },
        );
    }
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    pub total_loss: f64,
    pub head_losses: BTreeMap<String, f64>,
    pub dev_ner_f1: f64,
    pub dev_micro_f1: BTreeMap<String, f64>,
    pub dev_macro_f1: BTreeMap<String, f64>,
}

pub struct TrainOutcome {
    pub model: Model,
    /// Parameters of the best epoch by dev entity span-F1.
    pub store: ParameterStore,
    /// Parameters as of the final training step, before restoring the best
    /// epoch.
    pub final_store: ParameterStore,
    pub schemes: BTreeMap<String, Arc<TagScheme>>,
    pub history: Vec<EpochStats>,
    pub log: String,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainOutcome {
    pub fn final_report(&self, prepared_dev: &[PreparedSentence]) -> Result<MetricsReport, TrainError> {
        evaluate_prepared(&self.model, &self.store, prepared_dev, EvalOptions::default())
    }
}

/// Train from corpus paths named in the config.
pub fn train(config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    let train_corpus = load_canonical(&config.train)?;
    let dev_corpus = match &config.dev {
        Some(path) => load_canonical(path)?,
        None => train_corpus.clone(),
    };
    train_on(config, &train_corpus, &dev_corpus)
}

/// Train on corpora already in memory. Deterministic for a fixed config:
/// sentences are visited in corpus order, and every random initializer is
/// keyed by (seed, parameter name).
pub fn train_on(
    config: &TrainConfig,
    train_corpus: &Corpus,
    dev_corpus: &Corpus,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let model_config = config.resolved_model();
    let schemes = derive_schemes(train_corpus, &model_config, config.regime)?;
    let model = Model::build(model_config, &schemes)?;
    let mut store = model.init_params()?;
    let prepared_train = prepare(train_corpus, &model)?;
    let prepared_dev = prepare(dev_corpus, &model)?;

    let mut optimizer = Adam::new(config.learning_rate);
    let mut log = String::new();
    let mut history = Vec::new();
    // checkpoint selection is anchored on dev entity span-F1; epochs tied on
    // it are resolved by the mean span-F1 over all heads
    let mut best_key = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut best_snapshot = store.snapshot_values();
    let mut best_epoch = 0usize;
    let mut since_improvement = 0usize;
    let mut stopped_early = false;

    for epoch in 1..=config.epochs {
        let mut head_losses: BTreeMap<String, f64> = model
            .head_specs()
            .iter()
            .map(|s| (s.name.clone(), 0.0))
            .collect();
        let mut total_loss = 0.0;

        for window in prepared_train.chunks(config.accumulation) {
            store.zero_grads();
            for sentence in window {
                let output = model.accumulate_gradients(
                    &mut store,
                    &sentence.doc,
                    sentence.sentence_index,
                    &sentence.tokens,
                    &sentence.gold,
                )?;
                if !output.total_loss.is_finite() {
                    return Err(TrainError::NonFiniteLoss {
                        epoch,
                        doc: sentence.doc.clone(),
                        sentence: sentence.sentence_index,
                    });
                }
                total_loss += output.total_loss;
                for head in &output.heads {
                    *head_losses.get_mut(&head.name).unwrap() += head.loss;
                }
            }
            if !store.grads_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    doc: window[0].doc.clone(),
                    sentence: window[0].sentence_index,
                });
            }
            store.scale_grads(1.0 / window.len() as f64);
            store.clip_grad_norm(config.clip_norm);
            optimizer.step(&mut store);
        }

        let dev_report = evaluate_prepared(&model, &store, &prepared_dev, EvalOptions::default())?;
        let dev_ner_f1 = dev_report
            .heads
            .get(NER_HEAD)
            .map(|m| m.micro.f1)
            .unwrap_or(0.0);
        let dev_micro_f1: BTreeMap<String, f64> = dev_report
            .heads
            .iter()
            .map(|(k, v)| (k.clone(), v.micro.f1))
            .collect();
        let dev_macro_f1: BTreeMap<String, f64> = dev_report
            .heads
            .iter()
            .map(|(k, v)| (k.clone(), v.macro_.f1))
            .collect();

        let mut line = format!("epoch {epoch:04} total {total_loss:.9}");
        for (head, loss) in &head_losses {
            line.push_str(&format!(" loss[{head}] {loss:.9}"));
        }
        for (head, f1) in &dev_micro_f1 {
            line.push_str(&format!(" dev_f1[{head}] {f1:.6}"));
        }
        line.push('\n');
        log.push_str(&line);

        history.push(EpochStats {
            epoch,
            total_loss,
            head_losses,
            dev_ner_f1,
            dev_micro_f1,
            dev_macro_f1,
        });

        let mean_f1 = if history.last().unwrap().dev_micro_f1.is_empty() {
            0.0
        } else {
            history.last().unwrap().dev_micro_f1.values().sum::<f64>()
                / history.last().unwrap().dev_micro_f1.len() as f64
        };
        let key = (dev_ner_f1, mean_f1);
        if key > best_key {
            best_key = key;
            best_snapshot = store.snapshot_values();
            best_epoch = epoch;
        }
        // patience counts epochs without improvement of the entity head's
        // dev span-F1 itself
        if dev_ner_f1 > history[..history.len() - 1]
            .iter()
            .map(|e| e.dev_ner_f1)
            .fold(f64::NEG_INFINITY, f64::max)
        {
            since_improvement = 0;
        } else {
            since_improvement += 1;
            if let Some(patience) = config.patience {
                if since_improvement > patience {
                    log.push_str(&format!(
                        "early stop at epoch {epoch:04} (best dev_f1[ner] {:.6} at epoch {best_epoch:04})\n",
                        best_key.0
                    ));
                    stopped_early = true;
                    break;
                }
            }
        }
    }

    let final_store = store.clone();
    store.restore_values(&best_snapshot);
    Ok(TrainOutcome {
        model,
        store,
        final_store,
        schemes,
        history,
        log,
        best_epoch,
        stopped_early,
    })
}

/// Sweep of loss-weight tuples; each tuple assigns weights to the configured
/// heads in order.
#[derive(Debug, Clone)]
pub struct AblationSpec {
    pub tuples: Vec<Vec<f64>>,
}

impl AblationSpec {
    /// Parse `"1,0;0.5,0.5;0,1"`.
    pub fn parse(text: &str) -> Result<AblationSpec, TrainError> {
        let tuples: Vec<Vec<f64>> = text
            .split(';')
            .map(|tuple| {
                tuple
                    .split(',')
                    .map(|v| {
                        v.trim()
                            .parse::<f64>()
                            .map_err(|_| TrainError::BadConfig(format!("bad weight `{v}`")))
                    })
                    .collect::<Result<Vec<f64>, TrainError>>()
            })
            .collect::<Result<_, _>>()?;
        if tuples.is_empty() || tuples.iter().any(|t| t.is_empty()) {
            return Err(TrainError::BadConfig("empty ablation sweep".to_string()));
        }
        Ok(AblationSpec { tuples })
    }
}

#[derive(Debug)]
pub struct AblationRow {
    pub weights: Vec<f64>,
    pub report: MetricsReport,
    pub final_total_loss: f64,
}

/// One full train + evaluate per weight tuple, each from the same seed.
pub fn ablate(
    spec: &AblationSpec,
    base: &TrainConfig,
    train_corpus: &Corpus,
    dev_corpus: &Corpus,
) -> Result<Vec<AblationRow>, TrainError> {
    let head_count = base.model.heads.len();
    for tuple in &spec.tuples {
        if tuple.len() != head_count {
            return Err(TrainError::BadConfig(format!(
                "weight tuple {:?} does not match {head_count} heads",
                tuple
            )));
        }
    }
    let mut rows = Vec::new();
    for tuple in &spec.tuples {
        let mut config = base.clone();
        for (head, weight) in config.model.heads.iter_mut().zip(tuple) {
            head.weight = *weight;
        }
        let outcome = train_on(&config, train_corpus, dev_corpus)?;
        let prepared_dev = prepare(dev_corpus, &outcome.model)?;
        let report =
            evaluate_prepared(&outcome.model, &outcome.store, &prepared_dev, EvalOptions::default())?;
        let final_total_loss = outcome.history.last().map(|e| e.total_loss).unwrap_or(0.0);
        rows.push(AblationRow {
            weights: tuple.clone(),
            report,
            final_total_loss,
        });
    }
    Ok(rows)
}

/// Flat table over the sweep: one row per tuple, micro and macro span F1 per
/// head.
pub fn render_ablation(rows: &[AblationRow]) -> String {
    let mut out = String::new();
    let heads: Vec<String> = rows
        .first()
        .map(|r| r.report.heads.keys().cloned().collect())
        .unwrap_or_default();
    out.push_str("weights");
    for head in &heads {
        out.push_str(&format!("\tmicro_f1[{head}]\tmacro_f1[{head}]"));
    }
    out.push_str("\tfinal_loss\n");
    for row in rows {
        let weights: Vec<String> = row.weights.iter().map(|w| format!("{w}")).collect();
        out.push_str(&weights.join(","));
        for head in &heads {
            let m = &row.report.heads[head];
            out.push_str(&format!("\t{:.6}\t{:.6}", m.micro.f1, m.macro_.f1));
        }
        out.push_str(&format!("\t{:.6}\n", row.final_total_loss));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, GeneratorConfig};
    use crate::encoder::CharCnnConfig;
    use crate::model::{Architecture, HeadWeight, WordVectors};

    fn small_model_config(arch: Architecture, heads: &[(&str, f64)]) -> ModelConfig {
        ModelConfig {
            architecture: arch,
            heads: heads
                .iter()
                .map(|(n, w)| HeadWeight {
                    name: n.to_string(),
                    weight: *w,
                })
                .collect(),
            hidden_size: 6,
            decoder_hidden: Some(6),
            tag_embedding_dim: 4,
            word_vectors: WordVectors::Hashed { dim: 8 },
            char: CharCnnConfig {
                char_emb_dim: 4,
                window: 3,
                out_dim: 4,
            },
            crf_mask: true,
            seed: 0,
        }
    }

    fn small_corpus(seed: u64, sentences: usize) -> Corpus {
        let cfg = GeneratorConfig {
            sentences,
            vocab_size: 30,
            min_tokens: 3,
            max_tokens: 6,
            categories: vec!["problem".into(), "test".into()],
            ..GeneratorConfig::default()
        };
        generate_synthetic(&cfg, seed).unwrap()
    }

    fn small_train_config(arch: Architecture, epochs: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            train: String::new(),
            dev: None,
            epochs,
            learning_rate: 0.01,
            accumulation: 8,
            patience: None,
            clip_norm: 5.0,
            regime: Regime::AllPolarity,
            seed,
            model: small_model_config(arch, &[("ner", 1.0), ("polarity", 0.5)]),
        }
    }

    #[test]
    fn config_parses_from_toml() {
        let text = r#"
train = "train.corpus"
epochs = 3
seed = 9
regime = "neg-only"

[model]
architecture = "crf-smax-tf"
hidden_size = 8

[[model.heads]]
name = "ner"
weight = 0.0002

[[model.heads]]
name = "polarity"
weight = 1.0
"#;
        let config = TrainConfig::parse(text).unwrap();
        assert_eq!(config.epochs, 3);
        assert_eq!(config.regime, Regime::NegOnly);
        assert!(matches!(
            config.model.architecture,
            Architecture::CrfSmaxTf
        ));
        assert_eq!(config.model.heads[1].weight, 1.0);
        assert_eq!(config.resolved_model().seed, 9);
        assert!(TrainConfig::parse("epochs = 0\ntrain=\"x\"\n[model]\narchitecture=\"n-crf\"\nheads=[]").is_err());
    }

    #[test]
    fn derive_schemes_respects_regime_and_architecture() {
        let corpus = small_corpus(1, 30);
        let config = small_model_config(Architecture::CrfSmaxTf, &[("ner", 1.0), ("polarity", 1.0)]);
        let all = derive_schemes(&corpus, &config, Regime::AllPolarity).unwrap();
        assert_eq!(all["ner"].kind(), SchemeKind::Bilou);
        assert_eq!(all["polarity"].kind(), SchemeKind::Unprefixed);
        assert!(all["polarity"].categories().contains(&"POS".to_string()));
        let neg = derive_schemes(&corpus, &config, Regime::NegOnly).unwrap();
        assert_eq!(neg["polarity"].categories(), &[NEG_CLASS.to_string()]);

        let missing = small_model_config(Architecture::NCrf, &[("ner", 1.0), ("modality", 1.0)]);
        assert!(matches!(
            derive_schemes(&corpus, &missing, Regime::AllPolarity),
            Err(TrainError::HeadColumnMismatch(_))
        ));
    }

    #[test]
    fn neg_only_columns_contain_only_neg_tags() {
        let corpus = small_corpus(2, 40);
        let mut config = small_train_config(Architecture::NCrf, 1, 3);
        config.regime = Regime::NegOnly;
        let model_config = config.resolved_model();
        let schemes = derive_schemes(&corpus, &model_config, config.regime).unwrap();
        let model = Model::build(model_config, &schemes).unwrap();
        let prepared = prepare(&corpus, &model).unwrap();
        let scheme = model.scheme("polarity");
        for sentence in &prepared {
            for &tag in &sentence.gold["polarity"] {
                let name = scheme.tag_name(tag);
                assert!(name == "O" || name.ends_with(NEG_CLASS), "{name}");
            }
            for span in &sentence.gold_spans["polarity"] {
                assert_eq!(span.label, NEG_CLASS);
            }
        }
    }

    #[test]
    fn gold_injection_scores_one_everywhere() {
        let corpus = small_corpus(3, 20);
        let config = small_train_config(Architecture::NCrf, 1, 4);
        let model_config = config.resolved_model();
        let schemes = derive_schemes(&corpus, &model_config, config.regime).unwrap();
        let model = Model::build(model_config, &schemes).unwrap();
        let store = model.init_params().unwrap();
        let prepared = prepare(&corpus, &model).unwrap();
        let report = evaluate_prepared(
            &model,
            &store,
            &prepared,
            EvalOptions {
                inject_gold: true,
                skip_absent_classes: true,
            },
        )
        .unwrap();
        for (head, metrics) in &report.heads {
            assert_eq!(metrics.token_accuracy, 1.0, "{head}");
            assert_eq!(metrics.micro.f1, 1.0, "{head}");
            assert_eq!(metrics.macro_.f1, 1.0, "{head}");
        }
    }

    #[test]
    fn empty_corpus_evaluates_to_zero_report() {
        let corpus = small_corpus(4, 10);
        let config = small_train_config(Architecture::NCrf, 1, 5);
        let model_config = config.resolved_model();
        let schemes = derive_schemes(&corpus, &model_config, config.regime).unwrap();
        let model = Model::build(model_config, &schemes).unwrap();
        let store = model.init_params().unwrap();
        let report = evaluate_prepared(&model, &store, &[], EvalOptions::default()).unwrap();
        for metrics in report.heads.values() {
            assert_eq!(metrics.micro.f1, 0.0);
            assert_eq!(metrics.token_accuracy, 0.0);
        }
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let corpus = small_corpus(5, 25);
        let config = small_train_config(Architecture::NCrf, 8, 11);
        let a = train_on(&config, &corpus, &corpus).unwrap();
        let b = train_on(&config, &corpus, &corpus).unwrap();
        assert_eq!(a.log, b.log, "same seed must give identical logs");
        let first = a.history.first().unwrap().total_loss;
        let last = a.history.last().unwrap().total_loss;
        assert!(last < first, "loss should fall: {first} -> {last}");
        for (name, param) in a.store.iter() {
            assert_eq!(param.value.data(), b.store.get(name).data(), "{name}");
        }
        // different seed diverges
        let mut other = config.clone();
        other.seed = 12;
        let c = train_on(&other, &corpus, &corpus).unwrap();
        assert_ne!(a.log, c.log);
    }

    #[test]
    fn single_head_training_works() {
        let corpus = small_corpus(6, 15);
        let mut config = small_train_config(Architecture::NCrf, 3, 13);
        config.model.heads = vec![HeadWeight {
            name: "ner".to_string(),
            weight: 1.0,
        }];
        let outcome = train_on(&config, &corpus, &corpus).unwrap();
        assert_eq!(outcome.history.len(), 3);
        assert!(outcome.history.iter().all(|e| e.total_loss.is_finite()));
    }

    #[test]
    fn metrics_invariant_under_sentence_reordering() {
        let corpus = small_corpus(9, 20);
        let config = small_train_config(Architecture::NCrf, 1, 6);
        let model_config = config.resolved_model();
        let schemes = derive_schemes(&corpus, &model_config, config.regime).unwrap();
        let model = Model::build(model_config, &schemes).unwrap();
        let store = model.init_params().unwrap();
        let prepared = prepare(&corpus, &model).unwrap();
        let mut reversed = prepared.clone();
        reversed.reverse();
        let a = evaluate_prepared(&model, &store, &prepared, EvalOptions::default()).unwrap();
        let b = evaluate_prepared(&model, &store, &reversed, EvalOptions::default()).unwrap();
        for (head, metrics) in &a.heads {
            let other = &b.heads[head];
            assert_eq!(metrics.micro.f1.to_bits(), other.micro.f1.to_bits());
            assert_eq!(metrics.macro_.f1.to_bits(), other.macro_.f1.to_bits());
            assert_eq!(
                metrics.token_accuracy.to_bits(),
                other.token_accuracy.to_bits()
            );
        }
    }

    #[test]
    fn single_sentence_overfit_returns_exact_gold() {
        let cfg = GeneratorConfig {
            sentences: 1,
            min_tokens: 5,
            max_tokens: 7,
            ..GeneratorConfig::default()
        };
        let corpus = generate_synthetic(&cfg, 21).unwrap();
        let mut config = small_train_config(Architecture::NCrf, 120, 16);
        config.learning_rate = 0.02;
        config.accumulation = 1;
        let outcome = train_on(&config, &corpus, &corpus).unwrap();
        let prepared = prepare(&corpus, &outcome.model).unwrap();
        let s = &prepared[0];
        let predictions = outcome
            .model
            .predict(&outcome.store, &s.doc, s.sentence_index, &s.tokens)
            .unwrap();
        for (head, prediction) in &predictions {
            assert_eq!(
                prediction.tags.indices(),
                s.gold[head].as_slice(),
                "head {head} did not memorize the sentence"
            );
        }
    }

    #[test]
    fn early_stopping_halts_training() {
        let corpus = small_corpus(7, 15);
        let mut config = small_train_config(Architecture::NCrf, 50, 14);
        config.patience = Some(1);
        let outcome = train_on(&config, &corpus, &corpus).unwrap();
        assert!(outcome.history.len() < 50 || !outcome.stopped_early);
        if outcome.stopped_early {
            assert!(outcome.log.contains("early stop"));
        }
    }

    #[test]
    fn ablation_rows_cover_sweep() {
        let corpus = small_corpus(8, 12);
        let mut config = small_train_config(Architecture::NCrf, 2, 15);
        config.model.hidden_size = 4;
        let spec = AblationSpec::parse("1,0;0.5,0.5;0,1").unwrap();
        let rows = ablate(&spec, &config, &corpus, &corpus).unwrap();
        assert_eq!(rows.len(), 3);
        for row in &rows {
            for f1 in row.report.heads.values().map(|m| m.micro.f1) {
                assert!(f1.is_finite());
            }
        }
        let table = render_ablation(&rows);
        assert!(table.contains("micro_f1[ner]"));
        assert_eq!(table.lines().count(), 4);
        assert!(AblationSpec::parse("1,0;x,1").is_err());
        // tuple arity must match head count
        let bad = AblationSpec::parse("1;1").unwrap();
        assert!(matches!(
            ablate(&bad, &config, &corpus, &corpus),
            Err(TrainError::BadConfig(_))
        ));
    }
}
