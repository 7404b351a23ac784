//! The four joint tagging architectures over the shared encoder.
//!
//! Every architecture owns one head per label sequence (entities first, then
//! attributes). Attribute heads in the teacher-forced architectures consume
//! the encoder output concatenated with an embedding of the entity tag at the
//! same position: the gold tag while training, the Viterbi output at
//! inference. The conditional softmax baseline replaces the per-head decoders
//! with a unidirectional LSTM fed the previous entity label, a softmax entity
//! head, and attribute heads that also see the entity softmax output.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Token;
use crate::crf::{build_bilou_mask, CrfError, CrfLayer};
use crate::encoder::{
    add_acc, matvec_t_acc, outer_acc, CharCnnConfig, EmbedError, EmbeddingProvider, Encoder,
    EncoderCache, EncoderConfig,
};
use crate::metrics::extract_attributed_spans;
use crate::numerics::{softmax_slice, NumericsError, ParameterStore, Tensor};
use crate::tags::{decode_bilou, DecodeMode, SchemeKind, Span, TagError, TagScheme, TagSequence};

pub const NER_HEAD: &str = "ner";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model must have exactly one head named `ner`, listed first")]
    MissingNerHead,
    #[error("duplicate head `{0}`")]
    DuplicateHead(String),
    #[error("no scheme provided for head `{0}`")]
    MissingScheme(String),
    #[error("head `{head}` requires a {expected} scheme")]
    SchemeKindMismatch { head: String, expected: &'static str },
    #[error("negative loss weight {weight} on head `{head}`")]
    NegativeWeight { head: String, weight: f64 },
    #[error("missing gold column `{0}` (required in training mode)")]
    MissingGold(String),
    #[error("gold column `{head}` has length {got}, expected {expected}")]
    GoldLengthMismatch {
        head: String,
        expected: usize,
        got: usize,
    },
    #[error(transparent)]
    Crf(#[from] CrfError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Tag(#[from] TagError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    /// One CRF decoder per label sequence, weighted sum of the NLLs.
    NCrf,
    /// CRF entities, softmax attributes, entity tags fed to the attributes.
    CrfSmaxTf,
    /// CRFs everywhere plus entity-tag feedback to the attribute heads.
    NCrfTf,
    /// Conditional softmax decoder baseline.
    CondSoftmax,
}

impl Architecture {
    pub fn decoder_kind(&self, head: &str) -> DecoderKind {
        match self {
            Architecture::NCrf | Architecture::NCrfTf => DecoderKind::Crf,
            Architecture::CondSoftmax => DecoderKind::Softmax,
            Architecture::CrfSmaxTf => {
                if head == NER_HEAD {
                    DecoderKind::Crf
                } else {
                    DecoderKind::Softmax
                }
            }
        }
    }

    pub fn forces_attributes(&self) -> bool {
        matches!(self, Architecture::CrfSmaxTf | Architecture::NCrfTf)
    }

    /// Scheme kind each head tags under: CRF decoders use BILOU; softmax
    /// attribute heads use bare labels; the baseline's entity head is a
    /// softmax over BILOU tags.
    pub fn scheme_kind(&self, head: &str) -> SchemeKind {
        if head == NER_HEAD {
            SchemeKind::Bilou
        } else {
            match self.decoder_kind(head) {
                DecoderKind::Crf => SchemeKind::Bilou,
                DecoderKind::Softmax => SchemeKind::Unprefixed,
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecoderKind {
    Crf,
    Softmax,
}

/// Name/weight pair from the configuration file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeadWeight {
    pub name: String,
    pub weight: f64,
}

/// Word-vector source named in configuration and checkpoints.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum WordVectors {
    Hashed { dim: usize },
    StaticTable { path: String },
    Contextual { path: String },
}

impl Default for WordVectors {
    fn default() -> WordVectors {
        WordVectors::Hashed { dim: 64 }
    }
}

fn default_hidden() -> usize {
    512
}
fn default_tag_dim() -> usize {
    25
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub architecture: Architecture,
    /// Heads in order; must start with "ner".
    pub heads: Vec<HeadWeight>,
    /// BiLSTM hidden units per direction.
    #[serde(default = "default_hidden")]
    pub hidden_size: usize,
    /// Hidden units of the baseline's decoder LSTM; defaults to
    /// `hidden_size`.
    #[serde(default)]
    pub decoder_hidden: Option<usize>,
    /// Width of the entity-tag embedding used for teacher forcing (0 disables
    /// fusion) and of the baseline's previous-label embedding.
    #[serde(default = "default_tag_dim")]
    pub tag_embedding_dim: usize,
    #[serde(default)]
    pub word_vectors: WordVectors,
    #[serde(default)]
    pub char: CharCnnConfig,
    /// Apply the BILOU transition mask to CRF heads.
    #[serde(default = "default_true")]
    pub crf_mask: bool,
    #[serde(default)]
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> ModelConfig {
        ModelConfig {
            architecture: Architecture::NCrf,
            heads: vec![HeadWeight {
                name: NER_HEAD.to_string(),
                weight: 1.0,
            }],
            hidden_size: default_hidden(),
            decoder_hidden: None,
            tag_embedding_dim: default_tag_dim(),
            word_vectors: WordVectors::default(),
            char: CharCnnConfig::default(),
            crf_mask: true,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn decoder_dim(&self) -> usize {
        self.decoder_hidden.unwrap_or(self.hidden_size)
    }
}

/// Resolved per-head specification.
#[derive(Debug, Clone)]
pub struct HeadSpec {
    pub name: String,
    pub decoder: DecoderKind,
    pub scheme: Arc<TagScheme>,
    pub loss_weight: f64,
    pub teacher_forced_by: Option<String>,
}

struct Head {
    spec: HeadSpec,
    proj_w: String,
    proj_b: String,
    trans_param: Option<String>,
    mask: Option<Vec<bool>>,
    input_dim: usize,
}

impl Head {
    fn crf_layer(&self, store: &ParameterStore) -> CrfLayer {
        let k = self.spec.scheme.size();
        let mut layer = match &self.mask {
            Some(mask) => CrfLayer::with_mask(k, mask.clone()),
            None => CrfLayer::new(k),
        };
        layer.set_transitions(store.get(self.trans_param.as_ref().unwrap()));
        layer
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ForwardOptions<'a> {
    /// Entity tags injected in place of the architecture's forcing source;
    /// instrumentation hook for the teacher-forcing contract.
    pub forcing_override: Option<&'a [usize]>,
}

#[derive(Debug, Clone)]
pub struct HeadOutput {
    pub name: String,
    /// Unweighted per-head loss (CRF NLL or summed token cross-entropy);
    /// 0 when no gold was supplied.
    pub loss: f64,
    pub predicted: Vec<usize>,
    /// Rows actually consumed by this head (encoder output, possibly fused
    /// with tag embeddings; for the baseline, decoder state fused with the
    /// entity softmax output). Kept for instrumentation.
    pub fused_input: Option<Tensor>,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub mode: Mode,
    /// Weighted total loss; zero-weight heads contribute nothing.
    pub total_loss: f64,
    pub heads: Vec<HeadOutput>,
    /// Entity tags fed to forced attribute heads (if any).
    pub forcing_tags: Option<Vec<usize>>,
}

impl ForwardOutput {
    pub fn head(&self, name: &str) -> &HeadOutput {
        self.heads
            .iter()
            .find(|h| h.name == name)
            .unwrap_or_else(|| panic!("no head `{name}`"))
    }
}

/// One decoded head prediction: the tag sequence plus its span reading.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub tags: TagSequence,
    pub spans: Vec<Span>,
}

pub struct Model {
    pub config: ModelConfig,
    pub encoder: Encoder,
    heads: Vec<Head>,
    decoder: Option<crate::encoder::LstmCell>,
    tag_emb_param: Option<String>,
    label_emb_param: Option<String>,
}

struct SharedCache {
    enc_out: Tensor,
    enc_cache: EncoderCache,
    /// per head: the input rows the projection consumed
    inputs: Vec<Tensor>,
    /// per head: emission/logit rows
    scores: Vec<Tensor>,
    forcing: Option<Vec<usize>>,
}

struct BaselineCache {
    enc_cache: EncoderCache,
    decoder_cache: crate::encoder::LstmCache,
    prev_labels: Vec<usize>,
    states: Vec<Vec<f64>>,
    soft_out: Tensor,
    attr_inputs: Vec<Tensor>,
    attr_logits: Vec<Tensor>,
}

enum Cache {
    Shared(SharedCache),
    Baseline(BaselineCache),
}

impl Model {
    /// Resolve a configuration against per-head schemes and construct the
    /// model (loading embedding files if the config names any).
    pub fn build(
        config: ModelConfig,
        schemes: &BTreeMap<String, Arc<TagScheme>>,
    ) -> Result<Model, ModelError> {
        if config.heads.is_empty() || config.heads[0].name != NER_HEAD {
            return Err(ModelError::MissingNerHead);
        }
        let mut seen = std::collections::BTreeSet::new();
        for hw in &config.heads {
            if !seen.insert(hw.name.clone()) {
                return Err(ModelError::DuplicateHead(hw.name.clone()));
            }
            if hw.weight < 0.0 {
                return Err(ModelError::NegativeWeight {
                    head: hw.name.clone(),
                    weight: hw.weight,
                });
            }
        }
        if seen.iter().filter(|n| n.as_str() == NER_HEAD).count() != 1 {
            return Err(ModelError::MissingNerHead);
        }

        let provider = match &config.word_vectors {
            WordVectors::Hashed { dim } => EmbeddingProvider::hashed(*dim),
            WordVectors::StaticTable { path } => EmbeddingProvider::load_static_table(path)?,
            WordVectors::Contextual { path } => EmbeddingProvider::load_contextual(path)?,
        };
        let encoder = Encoder::new(
            provider,
            &EncoderConfig {
                hidden: config.hidden_size,
                char: config.char.clone(),
            },
        );
        let enc_dim = encoder.output_dim();
        let arch = config.architecture;
        let baseline = arch == Architecture::CondSoftmax;

        let ner_scheme = schemes
            .get(NER_HEAD)
            .ok_or_else(|| ModelError::MissingScheme(NER_HEAD.to_string()))?
            .clone();

        let mut heads = Vec::new();
        for hw in &config.heads {
            let scheme = schemes
                .get(&hw.name)
                .ok_or_else(|| ModelError::MissingScheme(hw.name.clone()))?
                .clone();
            let expected_kind = arch.scheme_kind(&hw.name);
            if scheme.kind() != expected_kind {
                return Err(ModelError::SchemeKindMismatch {
                    head: hw.name.clone(),
                    expected: match expected_kind {
                        SchemeKind::Bilou => "BILOU",
                        SchemeKind::Unprefixed => "un-prefixed",
                    },
                });
            }
            let decoder = arch.decoder_kind(&hw.name);
            let forced = arch.forces_attributes() && hw.name != NER_HEAD;
            let input_dim = if baseline {
                if hw.name == NER_HEAD {
                    config.decoder_dim()
                } else {
                    config.decoder_dim() + ner_scheme.size()
                }
            } else if forced {
                enc_dim + config.tag_embedding_dim
            } else {
                enc_dim
            };
            let mask = if decoder == DecoderKind::Crf && config.crf_mask {
                Some(build_bilou_mask(&scheme)?)
            } else {
                None
            };
            heads.push(Head {
                spec: HeadSpec {
                    name: hw.name.clone(),
                    decoder,
                    scheme,
                    loss_weight: hw.weight,
                    teacher_forced_by: forced.then(|| NER_HEAD.to_string()),
                },
                proj_w: format!("head.{}.proj.w", hw.name),
                proj_b: format!("head.{}.proj.b", hw.name),
                trans_param: (decoder == DecoderKind::Crf)
                    .then(|| format!("head.{}.crf.a", hw.name)),
                mask,
                input_dim,
            });
        }

        let decoder = baseline.then(|| {
            crate::encoder::LstmCell::new(
                "dec.lstm",
                enc_dim + config.tag_embedding_dim,
                config.decoder_dim(),
            )
        });
        let uses_tag_fusion =
            arch.forces_attributes() && config.tag_embedding_dim > 0 && config.heads.len() > 1;
        let tag_emb_param = uses_tag_fusion.then(|| "force.tagemb".to_string());
        let label_emb_param =
            (baseline && config.tag_embedding_dim > 0).then(|| "dec.labemb".to_string());

        Ok(Model {
            config,
            encoder,
            heads,
            decoder,
            tag_emb_param,
            label_emb_param,
        })
    }

    pub fn head_specs(&self) -> Vec<&HeadSpec> {
        self.heads.iter().map(|h| &h.spec).collect()
    }

    pub fn scheme(&self, head: &str) -> &Arc<TagScheme> {
        &self
            .heads
            .iter()
            .find(|h| h.spec.name == head)
            .unwrap_or_else(|| panic!("no head `{head}`"))
            .spec
            .scheme
    }

    fn ner_scheme(&self) -> &Arc<TagScheme> {
        &self.heads[0].spec.scheme
    }

    /// Define every trainable parameter, reproducibly from the config seed.
    pub fn init_params(&self) -> Result<ParameterStore, ModelError> {
        let mut store = ParameterStore::new();
        let seed = self.config.seed;
        self.encoder.define_params(&mut store, seed)?;
        for head in &self.heads {
            let k = head.spec.scheme.size();
            store.define_uniform(&head.proj_w, &[k, head.input_dim], head.input_dim, k, seed)?;
            store.define_zeros(&head.proj_b, &[k])?;
            if let Some(trans) = &head.trans_param {
                let mut a = Tensor::zeros(&[k + 2, k + 2]);
                if let Some(mask) = &head.mask {
                    for (i, &forbidden) in mask.iter().enumerate() {
                        if forbidden {
                            a.data_mut()[i] = crate::crf::MASK_SCORE;
                        }
                    }
                }
                store.define(trans, a, true)?;
            }
        }
        if let Some(cell) = &self.decoder {
            cell.define_params(&mut store, seed)?;
        }
        if let Some(name) = &self.tag_emb_param {
            let rows = self.ner_scheme().size();
            store.define_uniform(
                name,
                &[rows, self.config.tag_embedding_dim],
                rows,
                self.config.tag_embedding_dim,
                seed,
            )?;
        }
        if let Some(name) = &self.label_emb_param {
            let rows = self.ner_scheme().size() + 1; // + BOS
            store.define_uniform(
                name,
                &[rows, self.config.tag_embedding_dim],
                rows,
                self.config.tag_embedding_dim,
                seed,
            )?;
        }
        Ok(store)
    }

    /// Index of the reserved begin-of-sentence row in the baseline's
    /// previous-label table.
    pub fn bos_label(&self) -> usize {
        self.ner_scheme().size()
    }

    fn gold_for<'g>(
        &self,
        head: &str,
        n: usize,
        gold: Option<&'g BTreeMap<String, Vec<usize>>>,
        required: bool,
    ) -> Result<Option<&'g [usize]>, ModelError> {
        match gold.and_then(|g| g.get(head)) {
            Some(column) => {
                if column.len() != n {
                    return Err(ModelError::GoldLengthMismatch {
                        head: head.to_string(),
                        expected: n,
                        got: column.len(),
                    });
                }
                Ok(Some(column.as_slice()))
            }
            None if required => Err(ModelError::MissingGold(head.to_string())),
            None => Ok(None),
        }
    }

    /// Forward pass without gradient accumulation.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        store: &ParameterStore,
        doc: &str,
        sentence_index: usize,
        tokens: &[Token],
        gold: Option<&BTreeMap<String, Vec<usize>>>,
        mode: Mode,
        opts: ForwardOptions,
    ) -> Result<ForwardOutput, ModelError> {
        let (output, _) = self.run(store, doc, sentence_index, tokens, gold, mode, opts)?;
        Ok(output)
    }

    /// Training step for one sentence: forward in TRAIN mode, then accumulate
    /// analytic gradients for every head with a non-zero loss weight.
    pub fn accumulate_gradients(
        &self,
        store: &mut ParameterStore,
        doc: &str,
        sentence_index: usize,
        tokens: &[Token],
        gold: &BTreeMap<String, Vec<usize>>,
    ) -> Result<ForwardOutput, ModelError> {
        let (output, cache) = self.run(
            store,
            doc,
            sentence_index,
            tokens,
            Some(gold),
            Mode::Train,
            ForwardOptions::default(),
        )?;
        match cache {
            Cache::Shared(cache) => self.backward_shared(store, &cache, gold)?,
            Cache::Baseline(cache) => self.backward_baseline(store, &cache, gold)?,
        }
        Ok(output)
    }

    #[allow(clippy::too_many_arguments)]
    fn run(
        &self,
        store: &ParameterStore,
        doc: &str,
        sentence_index: usize,
        tokens: &[Token],
        gold: Option<&BTreeMap<String, Vec<usize>>>,
        mode: Mode,
        opts: ForwardOptions,
    ) -> Result<(ForwardOutput, Cache), ModelError> {
        match self.config.architecture {
            Architecture::CondSoftmax => self.run_baseline(store, doc, sentence_index, tokens, gold, mode, opts),
            _ => self.run_shared(store, doc, sentence_index, tokens, gold, mode, opts),
        }
    }

    fn project(&self, store: &ParameterStore, head: &Head, input: &Tensor) -> Tensor {
        let n = input.shape()[0];
        let k = head.spec.scheme.size();
        let w = store.get(&head.proj_w);
        let b = store.get(&head.proj_b).data();
        let mut out = Tensor::zeros(&[n, k]);
        for t in 0..n {
            let row = out.row_mut(t);
            row.copy_from_slice(b);
            crate::encoder::matvec_acc(w, input.row(t), row);
        }
        out
    }

    /// dW += Σ dlogits ⊗ input; db += Σ dlogits; returns d_input.
    fn project_backward(
        &self,
        store: &mut ParameterStore,
        head: &Head,
        input: &Tensor,
        d_scores: &Tensor,
    ) -> Tensor {
        let n = input.shape()[0];
        let w = store.get(&head.proj_w).clone();
        let mut d_input = Tensor::zeros(input.shape());
        {
            let g_w = store.grad_mut(&head.proj_w);
            for t in 0..n {
                outer_acc(g_w, d_scores.row(t), input.row(t));
            }
        }
        {
            let g_b = store.grad_mut(&head.proj_b);
            for t in 0..n {
                add_acc(g_b, d_scores.row(t));
            }
        }
        for t in 0..n {
            matvec_t_acc(&w, d_scores.row(t), d_input.row_mut(t));
        }
        d_input
    }

    fn fuse_tags(&self, store: &ParameterStore, enc_out: &Tensor, tags: &[usize]) -> Tensor {
        let n = enc_out.shape()[0];
        let enc_dim = enc_out.shape()[1];
        let tag_dim = self.config.tag_embedding_dim;
        if tag_dim == 0 || self.tag_emb_param.is_none() {
            return enc_out.clone();
        }
        let table = store.get(self.tag_emb_param.as_ref().unwrap());
        let mut fused = Tensor::zeros(&[n, enc_dim + tag_dim]);
        for t in 0..n {
            let row = fused.row_mut(t);
            row[..enc_dim].copy_from_slice(enc_out.row(t));
            row[enc_dim..].copy_from_slice(table.row(tags[t]));
        }
        fused
    }

    #[allow(clippy::too_many_arguments)]
    fn run_shared(
        &self,
        store: &ParameterStore,
        doc: &str,
        sentence_index: usize,
        tokens: &[Token],
        gold: Option<&BTreeMap<String, Vec<usize>>>,
        mode: Mode,
        opts: ForwardOptions,
    ) -> Result<(ForwardOutput, Cache), ModelError> {
        let n = tokens.len();
        let (enc_out, enc_cache) = self.encoder.forward(store, doc, sentence_index, tokens)?;
        let train = mode == Mode::Train;

        let mut head_outputs = Vec::with_capacity(self.heads.len());
        let mut inputs = Vec::with_capacity(self.heads.len());
        let mut scores = Vec::with_capacity(self.heads.len());
        let mut total_loss = 0.0;
        let mut forcing: Option<Vec<usize>> = None;

        for head in &self.heads {
            let input = if head.spec.teacher_forced_by.is_some() {
                let tags = forcing
                    .as_ref()
                    .expect("entity head runs before forced heads");
                self.fuse_tags(store, &enc_out, tags)
            } else {
                enc_out.clone()
            };
            let head_scores = self.project(store, head, &input);
            let head_gold = self.gold_for(&head.spec.name, n, gold, train)?;

            let (loss, predicted) = match head.spec.decoder {
                DecoderKind::Crf => {
                    let layer = head.crf_layer(store);
                    let predicted = layer.viterbi(&head_scores)?;
                    let loss = match head_gold {
                        Some(column) => layer.nll(&head_scores, column)?,
                        None => 0.0,
                    };
                    (loss, predicted)
                }
                DecoderKind::Softmax => {
                    let predicted = argmax_rows(&head_scores);
                    let loss = match head_gold {
                        Some(column) => cross_entropy(&head_scores, column),
                        None => 0.0,
                    };
                    (loss, predicted)
                }
            };

            if head.spec.name == NER_HEAD && self.config.architecture.forces_attributes() {
                let source: Vec<usize> = match opts.forcing_override {
                    Some(tags) => tags.to_vec(),
                    None => {
                        if train {
                            head_gold.expect("gold required in TRAIN").to_vec()
                        } else {
                            predicted.clone()
                        }
                    }
                };
                forcing = Some(source);
            }

            if head.spec.loss_weight != 0.0 && head_gold.is_some() {
                total_loss += head.spec.loss_weight * loss;
            }
            head_outputs.push(HeadOutput {
                name: head.spec.name.clone(),
                loss,
                predicted,
                fused_input: Some(input.clone()),
            });
            inputs.push(input);
            scores.push(head_scores);
        }

        Ok((
            ForwardOutput {
                mode,
                total_loss,
                heads: head_outputs,
                forcing_tags: forcing.clone(),
            },
            Cache::Shared(SharedCache {
                enc_out,
                enc_cache,
                inputs,
                scores,
                forcing,
            }),
        ))
    }

    fn backward_shared(
        &self,
        store: &mut ParameterStore,
        cache: &SharedCache,
        gold: &BTreeMap<String, Vec<usize>>,
    ) -> Result<(), ModelError> {
        let n = cache.enc_out.shape()[0];
        let enc_dim = cache.enc_out.shape()[1];
        let mut d_enc = Tensor::zeros(&[n, enc_dim]);

        for (idx, head) in self.heads.iter().enumerate() {
            let weight = head.spec.loss_weight;
            if weight == 0.0 {
                continue;
            }
            let column = &gold[&head.spec.name];
            let mut d_scores = match head.spec.decoder {
                DecoderKind::Crf => {
                    let layer = head.crf_layer(store);
                    let (_, d_emissions, d_trans) =
                        layer.nll_with_grads(&cache.scores[idx], column)?;
                    let mut d_trans = d_trans;
                    d_trans.scale(weight);
                    store
                        .grad_mut(head.trans_param.as_ref().unwrap())
                        .add_assign(&d_trans)?;
                    d_emissions
                }
                DecoderKind::Softmax => cross_entropy_grad(&cache.scores[idx], column),
            };
            d_scores.scale(weight);
            let d_input = self.project_backward(store, head, &cache.inputs[idx], &d_scores);

            if head.spec.teacher_forced_by.is_some() && d_input.shape()[1] > enc_dim {
                // split: encoder part plus tag-embedding rows (gold entity
                // tags in training)
                let tags = cache.forcing.as_ref().unwrap();
                let table = store.grad_mut(self.tag_emb_param.as_ref().unwrap());
                for t in 0..n {
                    let row = d_input.row(t);
                    for (a, b) in d_enc.row_mut(t).iter_mut().zip(&row[..enc_dim]) {
                        *a += b;
                    }
                    let g_row = table.row_mut(tags[t]);
                    for (g, d) in g_row.iter_mut().zip(&row[enc_dim..]) {
                        *g += d;
                    }
                }
            } else {
                d_enc.add_assign(&d_input)?;
            }
        }

        self.encoder.backward(store, &cache.enc_cache, &d_enc);
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn run_baseline(
        &self,
        store: &ParameterStore,
        doc: &str,
        sentence_index: usize,
        tokens: &[Token],
        gold: Option<&BTreeMap<String, Vec<usize>>>,
        mode: Mode,
        opts: ForwardOptions,
    ) -> Result<(ForwardOutput, Cache), ModelError> {
        let n = tokens.len();
        let (enc_out, enc_cache) = self.encoder.forward(store, doc, sentence_index, tokens)?;
        let train = mode == Mode::Train;
        let decoder = self.decoder.as_ref().expect("baseline decoder");
        let ner_head = &self.heads[0];
        let k_ner = ner_head.spec.scheme.size();
        let ner_gold = self.gold_for(NER_HEAD, n, gold, train)?;
        let enc_dim = enc_out.shape()[1];
        let lab_dim = self.config.tag_embedding_dim;

        let label_row = |store: &ParameterStore, label: usize| -> Vec<f64> {
            match &self.label_emb_param {
                Some(name) => store.get(name).row(label).to_vec(),
                None => Vec::new(),
            }
        };

        // previous-label source: override > gold (train) > own greedy output
        let mut prev_labels = Vec::with_capacity(n);
        let mut states: Vec<Vec<f64>> = Vec::with_capacity(n);
        let mut predictions: Vec<usize> = Vec::with_capacity(n);
        let mut ent_logits = Tensor::zeros(&[n, k_ner]);
        let mut soft_out = Tensor::zeros(&[n, k_ner]);

        let w_e = store.get(&ner_head.proj_w);
        let b_e = store.get(&ner_head.proj_b).data().to_vec();

        let mut h = vec![0.0; self.config.decoder_dim()];
        let mut c = vec![0.0; self.config.decoder_dim()];
        let mut decoder_cache_inputs: Vec<Vec<f64>> = Vec::with_capacity(n);
        for t in 0..n {
            let prev = if let Some(injected) = opts.forcing_override {
                if t == 0 {
                    self.bos_label()
                } else {
                    injected[t - 1]
                }
            } else if t == 0 {
                self.bos_label()
            } else if train {
                ner_gold.expect("gold required in TRAIN")[t - 1]
            } else {
                predictions[t - 1]
            };
            prev_labels.push(prev);
            let mut u = Vec::with_capacity(enc_dim + lab_dim);
            u.extend_from_slice(enc_out.row(t));
            u.extend_from_slice(&label_row(store, prev));
            let (h_new, c_new) = decoder.step(store, &u, &h, &c)?;
            decoder_cache_inputs.push(u);
            h = h_new.clone();
            c = c_new;
            states.push(h_new.clone());

            let logits_row = ent_logits.row_mut(t);
            logits_row.copy_from_slice(&b_e);
            crate::encoder::matvec_acc(w_e, &h_new, logits_row);
            let mut probs = logits_row.to_vec();
            softmax_slice(&mut probs);
            soft_out.row_mut(t).copy_from_slice(&probs);
            let pred = argmax_slice(ent_logits.row(t));
            predictions.push(pred);
        }
        // re-run through the cell's cached path for the backward pass
        let (_, decoder_cache) = decoder.run(store, &decoder_cache_inputs);

        let ner_loss = match ner_gold {
            Some(column) => cross_entropy(&ent_logits, column),
            None => 0.0,
        };
        let mut total_loss = 0.0;
        if ner_head.spec.loss_weight != 0.0 && ner_gold.is_some() {
            total_loss += ner_head.spec.loss_weight * ner_loss;
        }
        let mut head_outputs = vec![HeadOutput {
            name: NER_HEAD.to_string(),
            loss: ner_loss,
            predicted: predictions.clone(),
            fused_input: None,
        }];

        let mut attr_inputs = Vec::new();
        let mut attr_logits = Vec::new();
        for head in &self.heads[1..] {
            let k = head.spec.scheme.size();
            let dec_dim = self.config.decoder_dim();
            let mut fused = Tensor::zeros(&[n, dec_dim + k_ner]);
            for t in 0..n {
                let row = fused.row_mut(t);
                row[..dec_dim].copy_from_slice(&states[t]);
                row[dec_dim..].copy_from_slice(soft_out.row(t));
            }
            let logits = self.project(store, head, &fused);
            let head_gold = self.gold_for(&head.spec.name, n, gold, train)?;
            let loss = match head_gold {
                Some(column) => cross_entropy(&logits, column),
                None => 0.0,
            };
            if head.spec.loss_weight != 0.0 && head_gold.is_some() {
                total_loss += head.spec.loss_weight * loss;
            }
            head_outputs.push(HeadOutput {
                name: head.spec.name.clone(),
                loss,
                predicted: argmax_rows(&logits),
                fused_input: Some(fused.clone()),
            });
            attr_inputs.push(fused);
            attr_logits.push(Tensor::from_vec(&[n, k], logits.data().to_vec()).unwrap());
        }

        Ok((
            ForwardOutput {
                mode,
                total_loss,
                heads: head_outputs,
                forcing_tags: Some(prev_labels.clone()),
            },
            Cache::Baseline(BaselineCache {
                enc_cache,
                decoder_cache,
                prev_labels,
                states,
                soft_out,
                attr_inputs,
                attr_logits,
            }),
        ))
    }

    fn backward_baseline(
        &self,
        store: &mut ParameterStore,
        cache: &BaselineCache,
        gold: &BTreeMap<String, Vec<usize>>,
    ) -> Result<(), ModelError> {
        let n = cache.states.len();
        let h_dim = self.config.decoder_dim();
        let ner_head = &self.heads[0];
        let k_ner = ner_head.spec.scheme.size();
        let decoder = self.decoder.as_ref().expect("baseline decoder");

        let mut d_states = vec![vec![0.0; h_dim]; n];
        let mut d_soft_out = Tensor::zeros(&[n, k_ner]);

        // attribute heads: CE on logits over [state ; entity softmax output]
        for (a_idx, head) in self.heads[1..].iter().enumerate() {
            let weight = head.spec.loss_weight;
            if weight == 0.0 {
                continue;
            }
            let column = &gold[&head.spec.name];
            let mut d_logits = cross_entropy_grad(&cache.attr_logits[a_idx], column);
            d_logits.scale(weight);
            let d_fused =
                self.project_backward(store, head, &cache.attr_inputs[a_idx], &d_logits);
            for t in 0..n {
                let row = d_fused.row(t);
                for (a, b) in d_states[t].iter_mut().zip(&row[..h_dim]) {
                    *a += b;
                }
                for (a, b) in d_soft_out.row_mut(t).iter_mut().zip(&row[h_dim..]) {
                    *a += b;
                }
            }
        }

        // entity head: CE gradient plus the chain through the softmax output
        // consumed by the attribute heads
        let ner_weight = ner_head.spec.loss_weight;
        let ner_column = &gold[NER_HEAD];
        let mut d_ent_logits = Tensor::zeros(&[n, k_ner]);
        for t in 0..n {
            let probs = cache.soft_out.row(t);
            let d_row = d_ent_logits.row_mut(t);
            if ner_weight != 0.0 {
                for (j, d) in d_row.iter_mut().enumerate() {
                    *d += ner_weight * (probs[j] - if j == ner_column[t] { 1.0 } else { 0.0 });
                }
            }
            let ds = d_soft_out.row(t);
            let dot: f64 = ds.iter().zip(probs).map(|(a, b)| a * b).sum();
            for (j, d) in d_row.iter_mut().enumerate() {
                *d += probs[j] * (ds[j] - dot);
            }
        }

        // project entity logits back onto the decoder states
        {
            let w_e = store.get(&ner_head.proj_w).clone();
            {
                let g_w = store.grad_mut(&ner_head.proj_w);
                for t in 0..n {
                    outer_acc(g_w, d_ent_logits.row(t), &cache.states[t]);
                }
            }
            {
                let g_b = store.grad_mut(&ner_head.proj_b);
                for t in 0..n {
                    add_acc(g_b, d_ent_logits.row(t));
                }
            }
            for t in 0..n {
                matvec_t_acc(&w_e, d_ent_logits.row(t), &mut d_states[t]);
            }
        }

        // BPTT through the decoder, then split inputs into encoder rows and
        // previous-label embedding rows
        let d_inputs = decoder.backward(store, &cache.decoder_cache, &d_states);
        let enc_dim = self.encoder.output_dim();
        let mut d_enc = Tensor::zeros(&[n, enc_dim]);
        for t in 0..n {
            let row = &d_inputs[t];
            for (a, b) in d_enc.row_mut(t).iter_mut().zip(&row[..enc_dim]) {
                *a += b;
            }
            if let Some(name) = &self.label_emb_param {
                let table = store.grad_mut(name);
                let g_row = table.row_mut(cache.prev_labels[t]);
                for (g, d) in g_row.iter_mut().zip(&row[enc_dim..]) {
                    *g += d;
                }
            }
        }
        self.encoder.backward(store, &cache.enc_cache, &d_enc);
        Ok(())
    }

    /// EVAL-mode decode: per-head tag sequences plus their span reading.
    /// BILOU heads are decoded leniently; un-prefixed attribute heads are
    /// attached to the predicted entity spans on exact extent coverage.
    pub fn predict(
        &self,
        store: &ParameterStore,
        doc: &str,
        sentence_index: usize,
        tokens: &[Token],
    ) -> Result<BTreeMap<String, Prediction>, ModelError> {
        let output = self.forward(
            store,
            doc,
            sentence_index,
            tokens,
            None,
            Mode::Eval,
            ForwardOptions::default(),
        )?;
        self.decode_output(&output)
    }

    /// Turn raw head outputs into tagged spans (shared by predict and the
    /// gold-injection path in evaluation).
    pub fn decode_output(
        &self,
        output: &ForwardOutput,
    ) -> Result<BTreeMap<String, Prediction>, ModelError> {
        let mut result = BTreeMap::new();
        let ner_out = output.head(NER_HEAD);
        let ner_seq = TagSequence::from_indices(
            self.heads[0].spec.scheme.clone(),
            ner_out.predicted.clone(),
        )?;
        let ner_spans = decode_bilou(&ner_seq, DecodeMode::Lenient)?;
        result.insert(
            NER_HEAD.to_string(),
            Prediction {
                tags: ner_seq,
                spans: ner_spans.clone(),
            },
        );
        for head in &self.heads[1..] {
            let out = output.head(&head.spec.name);
            let seq =
                TagSequence::from_indices(head.spec.scheme.clone(), out.predicted.clone())?;
            let spans = match head.spec.scheme.kind() {
                SchemeKind::Bilou => decode_bilou(&seq, DecodeMode::Lenient)?,
                SchemeKind::Unprefixed => {
                    extract_attributed_spans(&ner_spans, &seq).map_err(|e| match e {
                        crate::metrics::MetricsError::Tag(t) => ModelError::Tag(t),
                        other => panic!("unexpected metrics error: {other}"),
                    })?
                }
            };
            result.insert(head.spec.name.clone(), Prediction { tags: seq, spans });
        }
        Ok(result)
    }
}

fn argmax_slice(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn argmax_rows(scores: &Tensor) -> Vec<usize> {
    (0..scores.shape()[0])
        .map(|t| argmax_slice(scores.row(t)))
        .collect()
}

/// Summed per-token cross-entropy: Σ_t −log softmax(logits_t)[gold_t].
fn cross_entropy(logits: &Tensor, gold: &[usize]) -> f64 {
    let n = logits.shape()[0];
    let mut loss = 0.0;
    for t in 0..n {
        let row = logits.row(t);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_z = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += log_z - row[gold[t]];
    }
    loss
}

/// d loss / d logits = softmax − onehot per row.
fn cross_entropy_grad(logits: &Tensor, gold: &[usize]) -> Tensor {
    let n = logits.shape()[0];
    let mut d = Tensor::zeros(logits.shape());
    for t in 0..n {
        let mut probs = logits.row(t).to_vec();
        softmax_slice(&mut probs);
        probs[gold[t]] -= 1.0;
        d.row_mut(t).copy_from_slice(&probs);
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::check_gradients;

    pub(crate) fn tokens(texts: &[&str]) -> Vec<Token> {
        let mut cursor = 0;
        texts
            .iter()
            .map(|t| {
                let start = cursor;
                cursor += t.len() + 1;
                Token::new(*t, start, start + t.len())
            })
            .collect()
    }

    fn tiny_config(arch: Architecture, heads: &[(&str, f64)], seed: u64) -> ModelConfig {
        ModelConfig {
            architecture: arch,
            heads: heads
                .iter()
                .map(|(n, w)| HeadWeight {
                    name: n.to_string(),
                    weight: *w,
                })
                .collect(),
            hidden_size: 4,
            decoder_hidden: Some(4),
            tag_embedding_dim: 3,
            word_vectors: WordVectors::Hashed { dim: 5 },
            char: CharCnnConfig {
                char_emb_dim: 3,
                window: 3,
                out_dim: 4,
            },
            crf_mask: true,
            seed,
        }
    }

    fn tiny_schemes(arch: Architecture) -> BTreeMap<String, Arc<TagScheme>> {
        let mut schemes = BTreeMap::new();
        schemes.insert(NER_HEAD.to_string(), TagScheme::bilou(&["problem"]));
        let polarity = match arch.scheme_kind("polarity") {
            SchemeKind::Bilou => TagScheme::bilou(&["NEG", "POS"]),
            SchemeKind::Unprefixed => TagScheme::unprefixed(&["NEG", "POS"]),
        };
        schemes.insert("polarity".to_string(), polarity);
        schemes
    }

    fn gold_columns(
        model: &Model,
        ner: &[&str],
        polarity: &[&str],
    ) -> BTreeMap<String, Vec<usize>> {
        let mut gold = BTreeMap::new();
        let ner_scheme = model.scheme(NER_HEAD);
        gold.insert(
            NER_HEAD.to_string(),
            ner.iter().map(|t| ner_scheme.tag_index(t).unwrap()).collect(),
        );
        let pol_scheme = model.scheme("polarity");
        gold.insert(
            "polarity".to_string(),
            polarity
                .iter()
                .map(|t| pol_scheme.tag_index(t).unwrap())
                .collect(),
        );
        gold
    }

    fn build_tiny(arch: Architecture, seed: u64) -> (Model, ParameterStore) {
        let config = tiny_config(arch, &[("ner", 0.7), ("polarity", 0.3)], seed);
        let model = Model::build(config, &tiny_schemes(arch)).unwrap();
        let store = model.init_params().unwrap();
        (model, store)
    }

    #[test]
    fn build_rejects_bad_head_lists() {
        let schemes = tiny_schemes(Architecture::NCrf);
        let cfg = tiny_config(Architecture::NCrf, &[("polarity", 1.0)], 0);
        assert!(matches!(
            Model::build(cfg, &schemes),
            Err(ModelError::MissingNerHead)
        ));
        let cfg = tiny_config(Architecture::NCrf, &[("ner", 1.0), ("ner", 1.0)], 0);
        assert!(matches!(
            Model::build(cfg, &schemes),
            Err(ModelError::DuplicateHead(_))
        ));
        let cfg = tiny_config(Architecture::NCrf, &[("ner", 1.0), ("polarity", -0.5)], 0);
        assert!(matches!(
            Model::build(cfg, &schemes),
            Err(ModelError::NegativeWeight { .. })
        ));
    }

    #[test]
    fn build_rejects_scheme_kind_mismatch() {
        // CRF polarity head must not get an un-prefixed scheme
        let mut schemes = tiny_schemes(Architecture::NCrf);
        schemes.insert(
            "polarity".to_string(),
            TagScheme::unprefixed(&["NEG", "POS"]),
        );
        let cfg = tiny_config(Architecture::NCrf, &[("ner", 1.0), ("polarity", 1.0)], 0);
        assert!(matches!(
            Model::build(cfg, &schemes),
            Err(ModelError::SchemeKindMismatch { .. })
        ));
    }

    #[test]
    fn missing_gold_column_fails_in_train_mode() {
        let (model, store) = build_tiny(Architecture::NCrf, 5);
        let toks = tokens(&["no", "pain"]);
        let mut gold = BTreeMap::new();
        gold.insert(NER_HEAD.to_string(), vec![0usize, 0]);
        let result = model.forward(
            &store,
            "d",
            0,
            &toks,
            Some(&gold),
            Mode::Train,
            ForwardOptions::default(),
        );
        assert!(matches!(result, Err(ModelError::MissingGold(_))));
    }

    #[test]
    fn untrained_predict_is_deterministic() {
        for arch in [
            Architecture::NCrf,
            Architecture::CrfSmaxTf,
            Architecture::NCrfTf,
            Architecture::CondSoftmax,
        ] {
            let (model, store) = build_tiny(arch, 9);
            let toks = tokens(&["no", "acute", "pain"]);
            let a = model.predict(&store, "d", 0, &toks).unwrap();
            let b = model.predict(&store, "d", 0, &toks).unwrap();
            for (name, pred) in &a {
                assert_eq!(pred.tags.indices(), b[name].tags.indices());
                assert_eq!(pred.spans, b[name].spans);
            }
        }
    }

    #[test]
    fn total_loss_weights_heads() {
        let arch = Architecture::NCrf;
        let config = tiny_config(arch, &[("ner", 1.0), ("polarity", 0.0)], 3);
        let model = Model::build(config, &tiny_schemes(arch)).unwrap();
        let store = model.init_params().unwrap();
        let toks = tokens(&["no", "pain"]);
        let gold = gold_columns(&model, &["O", "U-problem"], &["O", "U-NEG"]);
        let out = model
            .forward(
                &store,
                "d",
                0,
                &toks,
                Some(&gold),
                Mode::Train,
                ForwardOptions::default(),
            )
            .unwrap();
        // zero-weight polarity head contributes nothing
        assert_eq!(out.total_loss, out.head(NER_HEAD).loss);
        assert!(out.head("polarity").loss > 0.0);
        assert!(out.total_loss >= 0.0);
    }

    fn gradcheck_architecture(arch: Architecture, seed: u64) {
        let (model, mut store) = build_tiny(arch, seed);
        let toks = tokens(&["no", "chest", "pain"]);
        let (ner, polarity): (Vec<&str>, Vec<&str>) = match arch.scheme_kind("polarity") {
            SchemeKind::Bilou => (
                vec!["O", "B-problem", "L-problem"],
                vec!["O", "B-NEG", "L-NEG"],
            ),
            SchemeKind::Unprefixed => (
                vec!["O", "B-problem", "L-problem"],
                vec!["O", "NEG", "NEG"],
            ),
        };
        let gold = gold_columns(&model, &ner, &polarity);
        let out = model.accumulate_gradients(&mut store, "d", 0, &toks, &gold).unwrap();
        assert!(out.total_loss >= 0.0, "{arch:?}: composite loss must be non-negative");
        store.zero_grads();
        let report = check_gradients(
            |s: &mut ParameterStore| {
                model
                    .accumulate_gradients(s, "d", 0, &toks, &gold)
                    .unwrap()
                    .total_loss
            },
            &mut store,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed, "{arch:?}:\n{}", report.render());
    }

    #[test]
    fn n_crf_composite_gradients_pass() {
        gradcheck_architecture(Architecture::NCrf, 21);
    }

    #[test]
    fn crf_smax_tf_composite_gradients_pass() {
        gradcheck_architecture(Architecture::CrfSmaxTf, 22);
    }

    #[test]
    fn n_crf_tf_composite_gradients_pass() {
        gradcheck_architecture(Architecture::NCrfTf, 23);
    }

    #[test]
    fn baseline_composite_gradients_pass() {
        gradcheck_architecture(Architecture::CondSoftmax, 24);
    }

    #[test]
    fn train_mode_attribute_loss_ignores_entity_parameters() {
        // gold forcing means the attribute loss cannot depend on what the
        // entity head would predict
        let (model, mut store) = build_tiny(Architecture::CrfSmaxTf, 31);
        let toks = tokens(&["no", "pain"]);
        let gold = gold_columns(&model, &["O", "U-problem"], &["O", "NEG"]);
        let before = model
            .forward(
                &store,
                "d",
                0,
                &toks,
                Some(&gold),
                Mode::Train,
                ForwardOptions::default(),
            )
            .unwrap();
        // perturb entity-head parameters only
        for name in ["head.ner.proj.w", "head.ner.crf.a"] {
            for v in store.get_mut(name).data_mut() {
                *v += 0.37;
            }
        }
        let after = model
            .forward(
                &store,
                "d",
                0,
                &toks,
                Some(&gold),
                Mode::Train,
                ForwardOptions::default(),
            )
            .unwrap();
        assert_eq!(
            before.head("polarity").loss,
            after.head("polarity").loss,
            "TRAIN-mode attribute loss must not move with entity parameters"
        );
        assert_ne!(before.head(NER_HEAD).loss, after.head(NER_HEAD).loss);
    }

    #[test]
    fn eval_mode_attribute_inputs_follow_viterbi_output() {
        let (model, store) = build_tiny(Architecture::CrfSmaxTf, 33);
        let toks = tokens(&["no", "pain"]);
        let out = model
            .forward(
                &store,
                "d",
                0,
                &toks,
                None,
                Mode::Eval,
                ForwardOptions::default(),
            )
            .unwrap();
        let viterbi = out.head(NER_HEAD).predicted.clone();
        assert_eq!(out.forcing_tags.as_ref().unwrap(), &viterbi);
        // the fused rows must equal [encoder output ; tagemb(viterbi tags)]
        let fused = out.head("polarity").fused_input.clone().unwrap();
        let table = store.get("force.tagemb");
        let enc_dim = model.encoder.output_dim();
        for (t, &tag) in viterbi.iter().enumerate() {
            assert_eq!(&fused.row(t)[enc_dim..], table.row(tag));
        }
        // injecting a different entity sequence must change the fused rows
        let injected: Vec<usize> = viterbi.iter().map(|&t| (t + 1) % 5).collect();
        let forced = model
            .forward(
                &store,
                "d",
                0,
                &toks,
                None,
                Mode::Eval,
                ForwardOptions {
                    forcing_override: Some(&injected),
                },
            )
            .unwrap();
        let fused2 = forced.head("polarity").fused_input.clone().unwrap();
        for (t, &tag) in injected.iter().enumerate() {
            assert_eq!(&fused2.row(t)[enc_dim..], table.row(tag));
        }
    }

    #[test]
    fn train_and_eval_inputs_match_when_gold_equals_prediction() {
        let (model, store) = build_tiny(Architecture::CrfSmaxTf, 35);
        let toks = tokens(&["no", "pain"]);
        // whatever the untrained model predicts becomes the gold column
        let eval_out = model
            .forward(
                &store,
                "d",
                0,
                &toks,
                None,
                Mode::Eval,
                ForwardOptions::default(),
            )
            .unwrap();
        let predicted = eval_out.head(NER_HEAD).predicted.clone();
        let mut gold = BTreeMap::new();
        gold.insert(NER_HEAD.to_string(), predicted);
        gold.insert("polarity".to_string(), vec![0usize, 0]);
        let train_out = model
            .forward(
                &store,
                "d",
                0,
                &toks,
                Some(&gold),
                Mode::Train,
                ForwardOptions::default(),
            )
            .unwrap();
        assert_eq!(
            train_out.head("polarity").fused_input,
            eval_out.head("polarity").fused_input
        );
    }

    #[test]
    fn zero_tag_embedding_degenerates_to_plain_multi_crf() {
        let mut cfg_tf = tiny_config(Architecture::NCrfTf, &[("ner", 0.6), ("polarity", 0.4)], 17);
        cfg_tf.tag_embedding_dim = 0;
        let cfg_plain = ModelConfig {
            architecture: Architecture::NCrf,
            ..cfg_tf.clone()
        };
        let schemes = tiny_schemes(Architecture::NCrfTf);
        let model_tf = Model::build(cfg_tf, &schemes).unwrap();
        let model_plain = Model::build(cfg_plain, &schemes).unwrap();
        let store_tf = model_tf.init_params().unwrap();
        let store_plain = model_plain.init_params().unwrap();
        // identical parameter sets
        let names_tf: Vec<&String> = store_tf.names().collect();
        let names_plain: Vec<&String> = store_plain.names().collect();
        assert_eq!(names_tf, names_plain);
        for name in names_tf {
            assert_eq!(store_tf.get(name).data(), store_plain.get(name).data());
        }
        // identical forward outputs
        let toks = tokens(&["no", "pain"]);
        let gold = gold_columns(&model_tf, &["O", "U-problem"], &["O", "U-NEG"]);
        let out_tf = model_tf
            .forward(&store_tf, "d", 0, &toks, Some(&gold), Mode::Train, ForwardOptions::default())
            .unwrap();
        let out_plain = model_plain
            .forward(&store_plain, "d", 0, &toks, Some(&gold), Mode::Train, ForwardOptions::default())
            .unwrap();
        assert_eq!(out_tf.total_loss, out_plain.total_loss);
        for (a, b) in out_tf.heads.iter().zip(&out_plain.heads) {
            assert_eq!(a.loss, b.loss);
            assert_eq!(a.predicted, b.predicted);
        }
    }

    #[test]
    fn baseline_soft_out_rows_sum_to_one_and_feed_attributes() {
        let (model, store) = build_tiny(Architecture::CondSoftmax, 41);
        let toks = tokens(&["no", "pain", "today"]);
        let out = model
            .forward(
                &store,
                "d",
                0,
                &toks,
                None,
                Mode::Eval,
                ForwardOptions::default(),
            )
            .unwrap();
        let fused = out.head("polarity").fused_input.clone().unwrap();
        let h = model.config.decoder_dim();
        for t in 0..3 {
            let soft: f64 = fused.row(t)[h..].iter().sum();
            assert!((soft - 1.0).abs() < 1e-12, "softmax rows must sum to 1");
            assert!(fused.row(t)[h..].iter().all(|&v| v > 0.0));
        }
        // first decoder step consumes the reserved BOS label
        assert_eq!(out.forcing_tags.as_ref().unwrap()[0], model.bos_label());
    }

    #[test]
    fn softmax_head_illegal_bilou_is_repaired_in_predict() {
        let (model, store) = build_tiny(Architecture::CondSoftmax, 43);
        let toks = tokens(&["a", "b", "c", "d"]);
        // untrained argmax output may be any tag pattern; lenient decoding
        // must never error
        let pred = model.predict(&store, "d", 0, &toks).unwrap();
        assert!(pred.contains_key(NER_HEAD));
        assert!(pred.contains_key("polarity"));
    }
}
