//! Character-level CNN token features: a character embedding table, a single
//! zero-padded convolution, tanh, and max-pooling over positions.

use crate::numerics::{NumericsError, ParameterStore, Tensor};

use super::lstm::add_acc;

/// Printable ASCII plus one unknown bucket at index 0.
pub const CHAR_VOCAB: usize = 96;

pub(crate) fn char_index(c: char) -> usize {
    let code = c as u32;
    if (32..=126).contains(&code) {
        (code - 31) as usize
    } else {
        0
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CharCnnConfig {
    #[serde(default = "default_char_emb_dim")]
    pub char_emb_dim: usize,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_char_out_dim")]
    pub out_dim: usize,
}

fn default_char_emb_dim() -> usize {
    16
}
fn default_window() -> usize {
    3
}
fn default_char_out_dim() -> usize {
    16
}

impl Default for CharCnnConfig {
    fn default() -> CharCnnConfig {
        CharCnnConfig {
            char_emb_dim: 16,
            window: 3,
            out_dim: 16,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CharCnn {
    pub prefix: String,
    pub config: CharCnnConfig,
}

/// Everything needed to backpropagate one token's char features.
#[derive(Debug, Clone)]
pub struct CharCnnCache {
    chars: Vec<usize>,
    /// tanh activations per (position, filter)
    activations: Vec<Vec<f64>>,
    /// winning position per filter
    argmax: Vec<usize>,
}

impl CharCnn {
    pub fn new(prefix: impl Into<String>, config: CharCnnConfig) -> CharCnn {
        CharCnn {
            prefix: prefix.into(),
            config,
        }
    }

    fn name(&self, suffix: &str) -> String {
        format!("{}.{suffix}", self.prefix)
    }

    pub fn define_params(&self, store: &mut ParameterStore, seed: u64) -> Result<(), NumericsError> {
        let c = &self.config;
        store.define_uniform(
            &self.name("emb"),
            &[CHAR_VOCAB, c.char_emb_dim],
            CHAR_VOCAB,
            c.char_emb_dim,
            seed,
        )?;
        store.define_uniform(
            &self.name("kernel"),
            &[c.out_dim, c.window * c.char_emb_dim],
            c.window * c.char_emb_dim,
            c.out_dim,
            seed,
        )?;
        store.define_zeros(&self.name("bias"), &[c.out_dim])?;
        Ok(())
    }

    /// Pooled feature vector for one token. Empty text maps to a single
    /// unknown character.
    pub fn forward(&self, store: &ParameterStore, text: &str) -> (Vec<f64>, CharCnnCache) {
        let mut chars: Vec<usize> = text.chars().map(char_index).collect();
        if chars.is_empty() {
            chars.push(0);
        }
        let c = &self.config;
        let emb = store.get(&self.name("emb"));
        let kernel = store.get(&self.name("kernel"));
        let bias = store.get(&self.name("bias")).data();
        let pad = (c.window - 1) / 2;
        let m = chars.len();

        let mut activations = vec![vec![0.0; c.out_dim]; m];
        for (p, act) in activations.iter_mut().enumerate() {
            for f in 0..c.out_dim {
                let krow = kernel.row(f);
                let mut pre = bias[f];
                for w in 0..c.window {
                    let pos = p as isize + w as isize - pad as isize;
                    if pos < 0 || pos >= m as isize {
                        continue; // zero padding
                    }
                    let erow = emb.row(chars[pos as usize]);
                    let kslice = &krow[w * c.char_emb_dim..(w + 1) * c.char_emb_dim];
                    for (kv, ev) in kslice.iter().zip(erow) {
                        pre += kv * ev;
                    }
                }
                act[f] = pre.tanh();
            }
        }

        let mut out = vec![f64::NEG_INFINITY; c.out_dim];
        let mut argmax = vec![0usize; c.out_dim];
        for (p, act) in activations.iter().enumerate() {
            for f in 0..c.out_dim {
                if act[f] > out[f] {
                    out[f] = act[f];
                    argmax[f] = p;
                }
            }
        }
        (
            out,
            CharCnnCache {
                chars,
                activations,
                argmax,
            },
        )
    }

    /// Accumulate parameter gradients for one token given the gradient on the
    /// pooled output.
    pub fn backward(&self, store: &mut ParameterStore, cache: &CharCnnCache, d_out: &[f64]) {
        let c = &self.config;
        let pad = (c.window - 1) / 2;
        let m = cache.chars.len();
        let kernel = store.get(&self.name("kernel")).clone();

        let mut g_kernel = Tensor::zeros(&[c.out_dim, c.window * c.char_emb_dim]);
        let mut g_bias = vec![0.0; c.out_dim];
        let mut g_emb_rows: Vec<(usize, Vec<f64>)> = Vec::new();
        let emb = store.get(&self.name("emb")).clone();

        for f in 0..c.out_dim {
            let p = cache.argmax[f];
            let act = cache.activations[p][f];
            let d_pre = d_out[f] * (1.0 - act * act);
            g_bias[f] += d_pre;
            for w in 0..c.window {
                let pos = p as isize + w as isize - pad as isize;
                if pos < 0 || pos >= m as isize {
                    continue;
                }
                let ch = cache.chars[pos as usize];
                let erow = emb.row(ch);
                let kslice_start = w * c.char_emb_dim;
                let krow = &mut g_kernel.row_mut(f)[kslice_start..kslice_start + c.char_emb_dim];
                let mut d_erow = vec![0.0; c.char_emb_dim];
                let kvals = &kernel.row(f)[kslice_start..kslice_start + c.char_emb_dim];
                for i in 0..c.char_emb_dim {
                    krow[i] += d_pre * erow[i];
                    d_erow[i] = d_pre * kvals[i];
                }
                g_emb_rows.push((ch, d_erow));
            }
        }

        store
            .grad_mut(&self.name("kernel"))
            .add_assign(&g_kernel)
            .unwrap();
        add_acc(store.grad_mut(&self.name("bias")), &g_bias);
        let g_emb = store.grad_mut(&self.name("emb"));
        for (ch, d_erow) in g_emb_rows {
            let row = g_emb.row_mut(ch);
            for (g, d) in row.iter_mut().zip(&d_erow) {
                *g += d;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{check_gradients, Rng};

    #[test]
    fn char_index_buckets() {
        assert_eq!(char_index('a'), ('a' as usize) - 31);
        assert_eq!(char_index(' '), 1);
        assert_eq!(char_index('~'), 95);
        assert_eq!(char_index('é'), 0);
        assert_eq!(char_index('\n'), 0);
    }

    #[test]
    fn output_width_matches_config_default() {
        let cnn = CharCnn::new("char", CharCnnConfig::default());
        let mut store = ParameterStore::new();
        cnn.define_params(&mut store, 1).unwrap();
        let (out, _) = cnn.forward(&store, "orthopnea");
        assert_eq!(out.len(), 16);
        let (empty, _) = cnn.forward(&store, "");
        assert_eq!(empty.len(), 16);
    }

    #[test]
    fn identical_text_identical_features() {
        let cnn = CharCnn::new("char", CharCnnConfig::default());
        let mut store = ParameterStore::new();
        cnn.define_params(&mut store, 2).unwrap();
        let (a, _) = cnn.forward(&store, "edema");
        let (b, _) = cnn.forward(&store, "edema");
        assert_eq!(a, b);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let cnn = CharCnn::new(
            "char",
            CharCnnConfig {
                char_emb_dim: 4,
                window: 3,
                out_dim: 5,
            },
        );
        let mut store = ParameterStore::new();
        cnn.define_params(&mut store, 3).unwrap();
        let mut rng = Rng::new(4);
        let readout: Vec<f64> = (0..5).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let report = check_gradients(
            |s: &mut ParameterStore| {
                let (out, cache) = cnn.forward(s, "ab");
                cnn.backward(s, &cache, &readout);
                out.iter().zip(&readout).map(|(a, b)| a * b).sum()
            },
            &mut store,
            1e-6,
            1e-5,
        )
        .unwrap();
        assert!(report.passed, "{}", report.render());
    }
}
