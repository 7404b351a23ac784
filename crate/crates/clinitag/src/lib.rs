//! Joint clinical named-entity and attribute tagging.
//!
//! This crate trains and evaluates sequence taggers that emit several label
//! sequences per sentence at once: one for entity spans (problem, treatment,
//! test, ...) and one per attribute (polarity, modality). Entities are tagged
//! under the BILOU scheme; attributes are tagged either under BILOU or as
//! bare per-token labels depending on the decoder.
//!
//! Four architectures are provided over a shared BiLSTM encoder with
//! character convolution features:
//!
//! * `n-crf` — one linear-chain CRF decoder per label sequence, trained with
//!   a weighted sum of the per-decoder negative log likelihoods.
//! * `crf-smax-tf` — CRF for entities, per-token softmax for attributes, with
//!   the entity tags fed to the attribute heads (gold tags while training,
//!   Viterbi output at inference).
//! * `n-crf-tf` — CRFs everywhere plus the same entity-tag feedback.
//! * `cond-softmax` — a conditional softmax decoder baseline: a unidirectional
//!   LSTM consuming the previous entity label, a softmax entity head, and
//!   attribute heads that also consume the entity softmax output.
//!
//! Everything runs on a small self-contained f64 tensor layer with
//! hand-written backward passes, kept honest by a central finite-difference
//! gradient checker. Evaluation reports token accuracy plus exact-match span
//! micro and macro precision/recall/F1 per tagging head.

// the dynamic programs and backward passes are written with explicit indices
#![allow(clippy::needless_range_loop)]

pub mod checkpoint;
pub mod corpus;
pub mod crf;
pub mod encoder;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod tags;
pub mod train;
