//! LSTM cell with a coupled input gate and diagonal cell-to-gate (peephole)
//! weights:
//!
//! ```text
//! i_t = σ(W_xi x_t + W_hi h_{t−1} + w_ci ⊙ c_{t−1} + b_i)
//! c_t = (1 − i_t) ⊙ c_{t−1} + i_t ⊙ tanh(W_xc x_t + W_hc h_{t−1} + b_c)
//! o_t = σ(W_xo x_t + W_ho h_{t−1} + w_co ⊙ c_t + b_o)
//! h_t = o_t ⊙ tanh(c_t)
//! ```
//!
//! The cell update couples the forget path to the input gate, so no forget
//! gate parameters are allocated. Cell-to-gate weights are diagonal: element
//! m of a gate only sees element m of the cell vector.

use crate::numerics::{NumericsError, ParameterStore, Tensor};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// out += W x for a [rows × cols] matrix.
pub(crate) fn matvec_acc(w: &Tensor, x: &[f64], out: &mut [f64]) {
    let cols = w.shape()[1];
    debug_assert_eq!(cols, x.len());
    debug_assert_eq!(w.shape()[0], out.len());
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w.data()[r * cols..(r + 1) * cols];
        let mut acc = 0.0;
        for (wv, xv) in row.iter().zip(x) {
            acc += wv * xv;
        }
        *o += acc;
    }
}

/// out += Wᵀ d for a [rows × cols] matrix.
pub(crate) fn matvec_t_acc(w: &Tensor, d: &[f64], out: &mut [f64]) {
    let cols = w.shape()[1];
    debug_assert_eq!(w.shape()[0], d.len());
    debug_assert_eq!(cols, out.len());
    for (r, dv) in d.iter().enumerate() {
        let row = &w.data()[r * cols..(r + 1) * cols];
        for (o, wv) in out.iter_mut().zip(row) {
            *o += wv * dv;
        }
    }
}

/// grad += d xᵀ.
pub(crate) fn outer_acc(grad: &mut Tensor, d: &[f64], x: &[f64]) {
    let cols = grad.shape()[1];
    debug_assert_eq!(grad.shape()[0], d.len());
    debug_assert_eq!(cols, x.len());
    for (r, dv) in d.iter().enumerate() {
        let row = &mut grad.data_mut()[r * cols..(r + 1) * cols];
        for (g, xv) in row.iter_mut().zip(x) {
            *g += dv * xv;
        }
    }
}

pub(crate) fn add_acc(grad: &mut Tensor, d: &[f64]) {
    for (g, dv) in grad.data_mut().iter_mut().zip(d) {
        *g += dv;
    }
}

#[derive(Debug, Clone)]
pub struct LstmCell {
    pub prefix: String,
    pub input_dim: usize,
    pub hidden: usize,
}

/// Per-step values kept for backpropagation through time.
#[derive(Debug, Clone, Default)]
pub struct LstmCache {
    xs: Vec<Vec<f64>>,
    gates_i: Vec<Vec<f64>>,
    cands: Vec<Vec<f64>>,
    cells: Vec<Vec<f64>>,
    gates_o: Vec<Vec<f64>>,
    hiddens: Vec<Vec<f64>>,
}

impl LstmCell {
    pub fn new(prefix: impl Into<String>, input_dim: usize, hidden: usize) -> LstmCell {
        LstmCell {
            prefix: prefix.into(),
            input_dim,
            hidden,
        }
    }

    fn name(&self, suffix: &str) -> String {
        format!("{}.{suffix}", self.prefix)
    }

    pub fn define_params(&self, store: &mut ParameterStore, seed: u64) -> Result<(), NumericsError> {
        let d = self.input_dim;
        let h = self.hidden;
        for gate in ["w_xi", "w_xc", "w_xo"] {
            store.define_uniform(&self.name(gate), &[h, d], d, h, seed)?;
        }
        for gate in ["w_hi", "w_hc", "w_ho"] {
            store.define_uniform(&self.name(gate), &[h, h], h, h, seed)?;
        }
        for diag in ["w_ci", "w_co"] {
            store.define_uniform(&self.name(diag), &[h], h, h, seed)?;
        }
        for bias in ["b_i", "b_c", "b_o"] {
            store.define_zeros(&self.name(bias), &[h])?;
        }
        Ok(())
    }

    pub fn param_names(&self) -> Vec<String> {
        ["w_xi", "w_hi", "w_ci", "b_i", "w_xc", "w_hc", "b_c", "w_xo", "w_ho", "w_co", "b_o"]
            .iter()
            .map(|s| self.name(s))
            .collect()
    }

    /// One step of the recurrence. Errors on input or state width mismatch.
    pub fn step(
        &self,
        store: &ParameterStore,
        x: &[f64],
        h_prev: &[f64],
        c_prev: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>), NumericsError> {
        if x.len() != self.input_dim {
            return Err(NumericsError::ShapeMismatch {
                expected: vec![self.input_dim],
                got: vec![x.len()],
            });
        }
        if h_prev.len() != self.hidden || c_prev.len() != self.hidden {
            return Err(NumericsError::ShapeMismatch {
                expected: vec![self.hidden],
                got: vec![h_prev.len(), c_prev.len()],
            });
        }
        let (h, c, _, _, _) = self.step_cached(store, x, h_prev, c_prev);
        Ok((h, c))
    }

    #[allow(clippy::type_complexity)]
    fn step_cached(
        &self,
        store: &ParameterStore,
        x: &[f64],
        h_prev: &[f64],
        c_prev: &[f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let h_dim = self.hidden;
        let mut a_i = store.get(&self.name("b_i")).data().to_vec();
        matvec_acc(store.get(&self.name("w_xi")), x, &mut a_i);
        matvec_acc(store.get(&self.name("w_hi")), h_prev, &mut a_i);
        let w_ci = store.get(&self.name("w_ci")).data();
        for m in 0..h_dim {
            a_i[m] += w_ci[m] * c_prev[m];
        }
        let gate_i: Vec<f64> = a_i.iter().map(|&v| sigmoid(v)).collect();

        let mut a_g = store.get(&self.name("b_c")).data().to_vec();
        matvec_acc(store.get(&self.name("w_xc")), x, &mut a_g);
        matvec_acc(store.get(&self.name("w_hc")), h_prev, &mut a_g);
        let cand: Vec<f64> = a_g.iter().map(|&v| v.tanh()).collect();

        let cell: Vec<f64> = (0..h_dim)
            .map(|m| (1.0 - gate_i[m]) * c_prev[m] + gate_i[m] * cand[m])
            .collect();

        let mut a_o = store.get(&self.name("b_o")).data().to_vec();
        matvec_acc(store.get(&self.name("w_xo")), x, &mut a_o);
        matvec_acc(store.get(&self.name("w_ho")), h_prev, &mut a_o);
        let w_co = store.get(&self.name("w_co")).data();
        for m in 0..h_dim {
            a_o[m] += w_co[m] * cell[m];
        }
        let gate_o: Vec<f64> = a_o.iter().map(|&v| sigmoid(v)).collect();

        let hidden: Vec<f64> = (0..h_dim)
            .map(|m| gate_o[m] * cell[m].tanh())
            .collect();
        (hidden, cell, gate_i, cand, gate_o)
    }

    /// Run the cell over a sequence starting from zero states, caching
    /// everything needed for the backward pass.
    pub fn run(&self, store: &ParameterStore, inputs: &[Vec<f64>]) -> (Vec<Vec<f64>>, LstmCache) {
        let mut cache = LstmCache::default();
        let mut h = vec![0.0; self.hidden];
        let mut c = vec![0.0; self.hidden];
        for x in inputs {
            let (h_new, c_new, gate_i, cand, gate_o) = self.step_cached(store, x, &h, &c);
            cache.xs.push(x.clone());
            cache.gates_i.push(gate_i);
            cache.cands.push(cand);
            cache.cells.push(c_new.clone());
            cache.gates_o.push(gate_o);
            cache.hiddens.push(h_new.clone());
            h = h_new;
            c = c_new;
        }
        (cache.hiddens.clone(), cache)
    }

    /// Backpropagate through time. `d_hidden[t]` is the loss gradient on the
    /// hidden state emitted at step t. Parameter gradients are accumulated
    /// into the store; the per-step input gradients are returned.
    pub fn backward(
        &self,
        store: &mut ParameterStore,
        cache: &LstmCache,
        d_hidden: &[Vec<f64>],
    ) -> Vec<Vec<f64>> {
        let n = cache.xs.len();
        debug_assert_eq!(d_hidden.len(), n);
        let h_dim = self.hidden;
        let zero = vec![0.0; h_dim];

        let w_ci = store.get(&self.name("w_ci")).data().to_vec();
        let w_co = store.get(&self.name("w_co")).data().to_vec();

        let mut d_xs = vec![vec![0.0; self.input_dim]; n];
        let mut dh_next = vec![0.0; h_dim];
        let mut dc_next = vec![0.0; h_dim];

        let mut g_w_xi = Tensor::zeros(&[h_dim, self.input_dim]);
        let mut g_w_hi = Tensor::zeros(&[h_dim, h_dim]);
        let mut g_w_ci = vec![0.0; h_dim];
        let mut g_b_i = Tensor::zeros(&[h_dim]);
        let mut g_w_xc = Tensor::zeros(&[h_dim, self.input_dim]);
        let mut g_w_hc = Tensor::zeros(&[h_dim, h_dim]);
        let mut g_b_c = Tensor::zeros(&[h_dim]);
        let mut g_w_xo = Tensor::zeros(&[h_dim, self.input_dim]);
        let mut g_w_ho = Tensor::zeros(&[h_dim, h_dim]);
        let mut g_w_co = vec![0.0; h_dim];
        let mut g_b_o = Tensor::zeros(&[h_dim]);

        for t in (0..n).rev() {
            let c_prev = if t == 0 { &zero } else { &cache.cells[t - 1] };
            let h_prev = if t == 0 { &zero } else { &cache.hiddens[t - 1] };
            let gate_i = &cache.gates_i[t];
            let cand = &cache.cands[t];
            let cell = &cache.cells[t];
            let gate_o = &cache.gates_o[t];

            let mut dh = d_hidden[t].clone();
            for m in 0..h_dim {
                dh[m] += dh_next[m];
            }

            let mut d_a_o = vec![0.0; h_dim];
            let mut d_c = vec![0.0; h_dim];
            for m in 0..h_dim {
                let tanh_c = cell[m].tanh();
                let d_o = dh[m] * tanh_c;
                d_a_o[m] = d_o * gate_o[m] * (1.0 - gate_o[m]);
                // h → c (through tanh) plus the c chain from t+1 and the
                // peephole into the output gate
                d_c[m] = dh[m] * gate_o[m] * (1.0 - tanh_c * tanh_c)
                    + dc_next[m]
                    + w_co[m] * d_a_o[m];
            }

            let mut d_a_g = vec![0.0; h_dim];
            let mut d_a_i = vec![0.0; h_dim];
            let mut dc_prev = vec![0.0; h_dim];
            for m in 0..h_dim {
                let d_g = d_c[m] * gate_i[m];
                d_a_g[m] = d_g * (1.0 - cand[m] * cand[m]);
                let d_i = d_c[m] * (cand[m] - c_prev[m]);
                d_a_i[m] = d_i * gate_i[m] * (1.0 - gate_i[m]);
                dc_prev[m] = d_c[m] * (1.0 - gate_i[m]) + w_ci[m] * d_a_i[m];
            }

            let x = &cache.xs[t];
            outer_acc(&mut g_w_xi, &d_a_i, x);
            outer_acc(&mut g_w_hi, &d_a_i, h_prev);
            outer_acc(&mut g_w_xc, &d_a_g, x);
            outer_acc(&mut g_w_hc, &d_a_g, h_prev);
            outer_acc(&mut g_w_xo, &d_a_o, x);
            outer_acc(&mut g_w_ho, &d_a_o, h_prev);
            add_acc(&mut g_b_i, &d_a_i);
            add_acc(&mut g_b_c, &d_a_g);
            add_acc(&mut g_b_o, &d_a_o);
            for m in 0..h_dim {
                g_w_ci[m] += d_a_i[m] * c_prev[m];
                g_w_co[m] += d_a_o[m] * cell[m];
            }

            let dx = &mut d_xs[t];
            matvec_t_acc(store.get(&self.name("w_xi")), &d_a_i, dx);
            matvec_t_acc(store.get(&self.name("w_xc")), &d_a_g, dx);
            matvec_t_acc(store.get(&self.name("w_xo")), &d_a_o, dx);

            let mut dh_prev = vec![0.0; h_dim];
            matvec_t_acc(store.get(&self.name("w_hi")), &d_a_i, &mut dh_prev);
            matvec_t_acc(store.get(&self.name("w_hc")), &d_a_g, &mut dh_prev);
            matvec_t_acc(store.get(&self.name("w_ho")), &d_a_o, &mut dh_prev);

            dh_next = dh_prev;
            dc_next = dc_prev;
        }

        store.grad_mut(&self.name("w_xi")).add_assign(&g_w_xi).unwrap();
        store.grad_mut(&self.name("w_hi")).add_assign(&g_w_hi).unwrap();
        store.grad_mut(&self.name("w_xc")).add_assign(&g_w_xc).unwrap();
        store.grad_mut(&self.name("w_hc")).add_assign(&g_w_hc).unwrap();
        store.grad_mut(&self.name("w_xo")).add_assign(&g_w_xo).unwrap();
        store.grad_mut(&self.name("w_ho")).add_assign(&g_w_ho).unwrap();
        store.grad_mut(&self.name("b_i")).add_assign(&g_b_i).unwrap();
        store.grad_mut(&self.name("b_c")).add_assign(&g_b_c).unwrap();
        store.grad_mut(&self.name("b_o")).add_assign(&g_b_o).unwrap();
        add_acc(store.grad_mut(&self.name("w_ci")), &g_w_ci);
        add_acc(store.grad_mut(&self.name("w_co")), &g_w_co);

        d_xs
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{check_gradients, Rng};

    fn cell_with_params(seed: u64, input_dim: usize, hidden: usize) -> (LstmCell, ParameterStore) {
        let cell = LstmCell::new("lstm", input_dim, hidden);
        let mut store = ParameterStore::new();
        cell.define_params(&mut store, seed).unwrap();
        (cell, store)
    }

    #[test]
    fn all_zero_everything_gives_zero_states() {
        let cell = LstmCell::new("z", 3, 2);
        let mut store = ParameterStore::new();
        for name in cell.param_names() {
            let shape: Vec<usize> = if name.contains("w_x") {
                vec![2, 3]
            } else if name.contains("w_h") {
                vec![2, 2]
            } else {
                vec![2]
            };
            store.define(&name, Tensor::zeros(&shape), true).unwrap();
        }
        let (h, c) = cell
            .step(&store, &[0.0, 0.0, 0.0], &[0.0, 0.0], &[0.0, 0.0])
            .unwrap();
        assert_eq!(h, vec![0.0, 0.0]);
        assert_eq!(c, vec![0.0, 0.0]);
    }

    #[test]
    fn saturated_input_gate_copies_candidate() {
        // b_i = 50 pins i ≈ 1, so with c_prev = 0 the cell equals the
        // candidate tanh(W_xc x + b_c) (h_prev = 0)
        let (cell, mut store) = cell_with_params(3, 2, 3);
        store.get_mut("lstm.b_i").fill(50.0);
        let x = [0.3, -0.8];
        let zero = [0.0, 0.0, 0.0];
        let (_, c) = cell.step(&store, &x, &zero, &zero).unwrap();
        let mut expected = store.get("lstm.b_c").data().to_vec();
        matvec_acc(store.get("lstm.w_xc"), &x, &mut expected);
        for (got, exp) in c.iter().zip(expected.iter().map(|v| v.tanh())) {
            assert!((got - exp).abs() < 1e-9);
        }
    }

    #[test]
    fn coupled_gate_blocks_cell_when_input_gate_closed() {
        // i ≈ 0 with c_prev = 0 keeps c ≈ 0 regardless of input: the cell
        // update uses (1 − i), not a separate forget gate
        let (cell, mut store) = cell_with_params(5, 4, 3);
        store.get_mut("lstm.b_i").fill(-50.0);
        let x = [2.0, -3.0, 1.5, 0.7];
        let zero = [0.0, 0.0, 0.0];
        let (_, c) = cell.step(&store, &x, &zero, &zero).unwrap();
        for v in c {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn step_is_bitwise_deterministic() {
        let (cell, store) = cell_with_params(7, 3, 4);
        let x = [0.1, 0.2, 0.3];
        let h = [0.5, -0.5, 0.25, 0.0];
        let c = [1.0, -1.0, 0.5, 0.2];
        let (h1, c1) = cell.step(&store, &x, &h, &c).unwrap();
        let (h2, c2) = cell.step(&store, &x, &h, &c).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(c1, c2);
    }

    #[test]
    fn step_rejects_shape_mismatch() {
        let (cell, store) = cell_with_params(1, 3, 2);
        assert!(cell.step(&store, &[0.0], &[0.0, 0.0], &[0.0, 0.0]).is_err());
        assert!(cell
            .step(&store, &[0.0, 0.0, 0.0], &[0.0], &[0.0, 0.0])
            .is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let (cell, mut store) = cell_with_params(11, 3, 4);
        let mut rng = Rng::new(19);
        let inputs: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..3).map(|_| rng.uniform(-1.0, 1.0)).collect())
            .collect();
        // fixed random readout so every hidden unit matters
        let readout: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..4).map(|_| rng.uniform(-1.0, 1.0)).collect())
            .collect();
        let report = check_gradients(
            |s: &mut ParameterStore| {
                let (hs, cache) = cell.run(s, &inputs);
                let loss: f64 = hs
                    .iter()
                    .zip(&readout)
                    .map(|(h, r)| h.iter().zip(r).map(|(a, b)| a * b).sum::<f64>())
                    .sum();
                cell.backward(s, &cache, &readout);
                loss
            },
            &mut store,
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(report.passed, "{}", report.render());
    }
}
