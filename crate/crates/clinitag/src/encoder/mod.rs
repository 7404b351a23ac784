//! Shared sentence encoder: word vectors and char-CNN features concatenated
//! per token, fed to a bidirectional LSTM. Row i of the output is
//! [forward state after x_1..x_i ; backward state after x_n..x_i].

mod chars;
mod embed;
mod lstm;

pub use chars::{CharCnn, CharCnnCache, CharCnnConfig, CHAR_VOCAB};
pub use embed::{write_contextual, EmbedError, EmbeddingProvider, WordSource, UNK_PARAM};
pub use lstm::{LstmCache, LstmCell};

pub(crate) use lstm::{add_acc, matvec_acc, matvec_t_acc, outer_acc};

use crate::corpus::Token;
use crate::numerics::{NumericsError, ParameterStore, Tensor};

/// Token features plus what the backward pass needs to route gradients.
pub struct EmbedCache {
    pub char_caches: Vec<CharCnnCache>,
    pub word_sources: Vec<WordSource>,
    pub word_dim: usize,
}

/// Row i = word vector of token i concatenated with its char-CNN features.
pub fn embed_tokens(
    store: &ParameterStore,
    provider: &EmbeddingProvider,
    char_cnn: &CharCnn,
    doc: &str,
    sentence_index: usize,
    tokens: &[Token],
) -> Result<(Tensor, EmbedCache), EmbedError> {
    let word_dim = provider.dim();
    let char_dim = char_cnn.config.out_dim;
    let n = tokens.len();
    let mut out = Tensor::zeros(&[n, word_dim + char_dim]);
    let mut char_caches = Vec::with_capacity(n);
    let mut word_sources = Vec::with_capacity(n);
    for (i, tok) in tokens.iter().enumerate() {
        let (word, source) = provider.vector(store, doc, sentence_index, i, &tok.text)?;
        let (chars, cache) = char_cnn.forward(store, &tok.text);
        let row = out.row_mut(i);
        row[..word_dim].copy_from_slice(&word);
        row[word_dim..].copy_from_slice(&chars);
        char_caches.push(cache);
        word_sources.push(source);
    }
    Ok((
        out,
        EmbedCache {
            char_caches,
            word_sources,
            word_dim,
        },
    ))
}

#[derive(Debug, Clone)]
pub struct EncoderConfig {
    pub hidden: usize,
    pub char: CharCnnConfig,
}

impl Default for EncoderConfig {
    fn default() -> EncoderConfig {
        EncoderConfig {
            hidden: 512,
            char: CharCnnConfig::default(),
        }
    }
}

/// The shared BiLSTM encoder.
pub struct Encoder {
    pub provider: EmbeddingProvider,
    pub chars: CharCnn,
    pub forward_cell: LstmCell,
    pub backward_cell: LstmCell,
    pub hidden: usize,
}

pub struct EncoderCache {
    embed: EmbedCache,
    fwd: LstmCache,
    bwd: LstmCache,
    n: usize,
}

impl Encoder {
    pub fn new(provider: EmbeddingProvider, config: &EncoderConfig) -> Encoder {
        let input_dim = provider.dim() + config.char.out_dim;
        Encoder {
            provider,
            chars: CharCnn::new("enc.char", config.char.clone()),
            forward_cell: LstmCell::new("enc.fwd", input_dim, config.hidden),
            backward_cell: LstmCell::new("enc.bwd", input_dim, config.hidden),
            hidden: config.hidden,
        }
    }

    /// Output width per token.
    pub fn output_dim(&self) -> usize {
        2 * self.hidden
    }

    pub fn define_params(&self, store: &mut ParameterStore, seed: u64) -> Result<(), NumericsError> {
        self.provider.define_params(store, seed)?;
        self.chars.define_params(store, seed)?;
        self.forward_cell.define_params(store, seed)?;
        self.backward_cell.define_params(store, seed)?;
        Ok(())
    }

    /// Encode one sentence. n must be ≥ 1.
    pub fn forward(
        &self,
        store: &ParameterStore,
        doc: &str,
        sentence_index: usize,
        tokens: &[Token],
    ) -> Result<(Tensor, EncoderCache), EmbedError> {
        assert!(!tokens.is_empty(), "cannot encode an empty sentence");
        let (features, embed) =
            embed_tokens(store, &self.provider, &self.chars, doc, sentence_index, tokens)?;
        let n = tokens.len();
        let rows: Vec<Vec<f64>> = (0..n).map(|i| features.row(i).to_vec()).collect();
        let (fwd_states, fwd_cache) = self.forward_cell.run(store, &rows);
        let reversed: Vec<Vec<f64>> = rows.iter().rev().cloned().collect();
        let (bwd_states, bwd_cache) = self.backward_cell.run(store, &reversed);

        let h = self.hidden;
        let mut out = Tensor::zeros(&[n, 2 * h]);
        for i in 0..n {
            let row = out.row_mut(i);
            row[..h].copy_from_slice(&fwd_states[i]);
            row[h..].copy_from_slice(&bwd_states[n - 1 - i]);
        }
        Ok((
            out,
            EncoderCache {
                embed,
                fwd: fwd_cache,
                bwd: bwd_cache,
                n,
            },
        ))
    }

    /// Backpropagate a gradient on the encoder output, accumulating into the
    /// LSTM, char-CNN, and (for static tables) UNK-row parameters.
    pub fn backward(&self, store: &mut ParameterStore, cache: &EncoderCache, d_out: &Tensor) {
        let n = cache.n;
        let h = self.hidden;
        debug_assert_eq!(d_out.shape(), &[n, 2 * h]);

        let d_fwd: Vec<Vec<f64>> = (0..n).map(|i| d_out.row(i)[..h].to_vec()).collect();
        let d_bwd: Vec<Vec<f64>> = (0..n)
            .map(|i| d_out.row(n - 1 - i)[h..].to_vec())
            .collect();

        let dx_fwd = self.forward_cell.backward(store, &cache.fwd, &d_fwd);
        let dx_bwd = self.backward_cell.backward(store, &cache.bwd, &d_bwd);

        let word_dim = cache.embed.word_dim;
        for i in 0..n {
            let mut dx = dx_fwd[i].clone();
            for (a, b) in dx.iter_mut().zip(&dx_bwd[n - 1 - i]) {
                *a += b;
            }
            if cache.embed.word_sources[i] == WordSource::UnkRow {
                add_acc(store.grad_mut(UNK_PARAM), &dx[..word_dim]);
            }
            self.chars
                .backward(store, &cache.embed.char_caches[i], &dx[word_dim..]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{check_gradients, Rng};

    fn tokens(texts: &[&str]) -> Vec<Token> {
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

    fn small_encoder(seed: u64, hidden: usize) -> (Encoder, ParameterStore) {
        let config = EncoderConfig {
            hidden,
            char: CharCnnConfig {
                char_emb_dim: 4,
                window: 3,
                out_dim: 5,
            },
        };
        let enc = Encoder::new(EmbeddingProvider::hashed(6), &config);
        let mut store = ParameterStore::new();
        enc.define_params(&mut store, seed).unwrap();
        (enc, store)
    }

    #[test]
    fn embed_rows_are_word_concat_char() {
        let (enc, store) = small_encoder(1, 3);
        let toks = tokens(&["no", "edema"]);
        let (features, _) =
            embed_tokens(&store, &enc.provider, &enc.chars, "d", 0, &toks).unwrap();
        assert_eq!(features.shape(), &[2, 11]); // 6 word + 5 char
        let (word, _) = enc.provider.vector(&store, "d", 0, 0, "no").unwrap();
        assert_eq!(&features.row(0)[..6], word.as_slice());
    }

    #[test]
    fn default_char_width_gives_dim_plus_sixteen() {
        let enc = Encoder::new(EmbeddingProvider::hashed(8), &EncoderConfig {
            hidden: 2,
            char: CharCnnConfig::default(),
        });
        let mut store = ParameterStore::new();
        enc.define_params(&mut store, 9).unwrap();
        let toks = tokens(&["no", "orthopnea"]);
        let (features, _) =
            embed_tokens(&store, &enc.provider, &enc.chars, "d", 0, &toks).unwrap();
        assert_eq!(features.shape(), &[2, 24]);
    }

    #[test]
    fn identical_tokens_share_word_subvectors() {
        let (enc, store) = small_encoder(2, 3);
        let toks = tokens(&["pain", "worsening", "pain"]);
        let (features, _) =
            embed_tokens(&store, &enc.provider, &enc.chars, "d", 0, &toks).unwrap();
        assert_eq!(&features.row(0)[..6], &features.row(2)[..6]);
    }

    #[test]
    fn output_width_is_twice_hidden() {
        let (enc, store) = small_encoder(3, 4);
        for n in [1usize, 2, 5] {
            let texts: Vec<String> = (0..n).map(|i| format!("t{i}")).collect();
            let refs: Vec<&str> = texts.iter().map(|s| s.as_str()).collect();
            let (out, _) = enc.forward(&store, "d", 0, &tokens(&refs)).unwrap();
            assert_eq!(out.shape(), &[n, 8]);
        }
    }

    #[test]
    fn reversing_input_swaps_output_halves() {
        let (enc, store) = small_encoder(4, 3);
        let toks = tokens(&["a", "bb", "ccc"]);
        let (out, _) = enc.forward(&store, "d", 0, &toks).unwrap();

        // encoder with forward/backward cells swapped, same parameters
        let swapped = Encoder {
            provider: enc.provider.clone(),
            chars: CharCnn::new("enc.char", enc.chars.config.clone()),
            forward_cell: LstmCell::new("enc.bwd", enc.forward_cell.input_dim, 3),
            backward_cell: LstmCell::new("enc.fwd", enc.forward_cell.input_dim, 3),
            hidden: 3,
        };
        let rev = tokens(&["ccc", "bb", "a"]);
        let (out_rev, _) = swapped.forward(&store, "d", 0, &rev).unwrap();

        let n = 3;
        let h = 3;
        for i in 0..n {
            let orig = out.row(i);
            let mirrored = out_rev.row(n - 1 - i);
            for m in 0..h {
                assert!((orig[m] - mirrored[h + m]).abs() < 1e-12);
                assert!((orig[h + m] - mirrored[m]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn encoder_gradients_pass_finite_differences() {
        let (enc, mut store) = small_encoder(5, 3);
        let toks = tokens(&["no", "acute", "distress"]);
        let mut rng = Rng::new(6);
        let readout: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..6).map(|_| rng.uniform(-1.0, 1.0)).collect())
            .collect();
        let report = check_gradients(
            |s: &mut ParameterStore| {
                let (out, cache) = enc.forward(s, "d", 0, &toks).unwrap();
                let mut loss = 0.0;
                let mut d_out = Tensor::zeros(out.shape());
                for i in 0..3 {
                    for j in 0..6 {
                        loss += out.row(i)[j] * readout[i][j];
                        d_out.row_mut(i)[j] = readout[i][j];
                    }
                }
                enc.backward(s, &cache, &d_out);
                loss
            },
            &mut store,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed, "{}", report.render());
    }

    #[test]
    fn static_table_unk_row_receives_gradient() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vecs.txt");
        std::fs::write(&path, "known 0.1 0.2 0.3\n").unwrap();
        let provider = EmbeddingProvider::load_static_table(&path).unwrap();
        let config = EncoderConfig {
            hidden: 2,
            char: CharCnnConfig {
                char_emb_dim: 3,
                window: 3,
                out_dim: 4,
            },
        };
        let enc = Encoder::new(provider, &config);
        let mut store = ParameterStore::new();
        enc.define_params(&mut store, 7).unwrap();
        let toks = tokens(&["known", "unknownword"]);
        let (out, cache) = enc.forward(&store, "d", 0, &toks).unwrap();
        let mut d_out = Tensor::zeros(out.shape());
        d_out.fill(1.0);
        enc.backward(&mut store, &cache, &d_out);
        let unk_grad = store.grad(UNK_PARAM).data();
        assert!(unk_grad.iter().any(|&g| g != 0.0));
    }
}
