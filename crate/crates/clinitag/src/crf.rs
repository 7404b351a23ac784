//! Linear-chain CRF: sequence scoring, exact log-partition via the forward
//! recursion, negative log-likelihood with analytic gradients, and Viterbi
//! decoding. The transition matrix is (k+2)×(k+2) with reserved START and
//! STOP rows; hard-masked transitions carry a large negative score and
//! receive no gradient.

use thiserror::Error;

use crate::numerics::Tensor;
use crate::tags::{BilouPrefix, SchemeKind, TagError, TagScheme};

/// Additive score applied to forbidden transitions. Large enough that
/// exp(score) underflows to zero in f64, so masked paths contribute nothing
/// to the partition function and are never selected by Viterbi.
pub const MASK_SCORE: f64 = -1.0e4;

#[derive(Debug, Error)]
pub enum CrfError {
    #[error("sequence length {got} does not match emission rows {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("tag index {index} out of range for {num_tags} tags")]
    TagOutOfRange { index: usize, num_tags: usize },
    #[error("emission matrix must have at least one row")]
    EmptySequence,
    #[error(transparent)]
    Tag(#[from] TagError),
}

/// Emission-consuming linear-chain layer. `transitions` is owned here;
/// trainable copies live in the parameter store and are synced by the model
/// layer before scoring.
#[derive(Debug, Clone)]
pub struct CrfLayer {
    num_tags: usize,
    transitions: Tensor,
    mask: Option<Vec<bool>>,
}

impl CrfLayer {
    /// Zero-initialized transitions, no mask.
    pub fn new(num_tags: usize) -> CrfLayer {
        assert!(num_tags >= 1);
        CrfLayer {
            num_tags,
            transitions: Tensor::zeros(&[num_tags + 2, num_tags + 2]),
            mask: None,
        }
    }

    /// Layer with a hard mask; masked cells of the transition matrix are set
    /// to `MASK_SCORE`.
    pub fn with_mask(num_tags: usize, mask: Vec<bool>) -> CrfLayer {
        assert_eq!(mask.len(), (num_tags + 2) * (num_tags + 2));
        let mut layer = CrfLayer::new(num_tags);
        for (i, &forbidden) in mask.iter().enumerate() {
            if forbidden {
                layer.transitions.data_mut()[i] = MASK_SCORE;
            }
        }
        layer.mask = Some(mask);
        layer
    }

    pub fn num_tags(&self) -> usize {
        self.num_tags
    }

    pub fn start_index(&self) -> usize {
        self.num_tags
    }

    pub fn stop_index(&self) -> usize {
        self.num_tags + 1
    }

    pub fn transitions(&self) -> &Tensor {
        &self.transitions
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    /// Overwrite transition scores (e.g. from the parameter store), re-pinning
    /// masked cells to `MASK_SCORE`.
    pub fn set_transitions(&mut self, transitions: &Tensor) {
        debug_assert_eq!(transitions.shape(), self.transitions.shape());
        self.transitions = transitions.clone();
        if let Some(mask) = &self.mask {
            for (i, &forbidden) in mask.iter().enumerate() {
                if forbidden {
                    self.transitions.data_mut()[i] = MASK_SCORE;
                }
            }
        }
    }

    fn trans(&self, from: usize, to: usize) -> f64 {
        self.transitions.at(&[from, to])
    }

    fn check_emissions<'a>(&self, emissions: &'a Tensor) -> Result<&'a Tensor, CrfError> {
        debug_assert_eq!(emissions.rank(), 2);
        debug_assert_eq!(emissions.shape()[1], self.num_tags);
        if emissions.shape()[0] == 0 {
            return Err(CrfError::EmptySequence);
        }
        Ok(emissions)
    }

    /// Path score: transition terms including START→y_1 and y_n→STOP plus the
    /// emission term at every position.
    pub fn sequence_score(&self, emissions: &Tensor, tags: &[usize]) -> Result<f64, CrfError> {
        self.check_emissions(emissions)?;
        let n = emissions.shape()[0];
        if tags.len() != n {
            return Err(CrfError::LengthMismatch {
                expected: n,
                got: tags.len(),
            });
        }
        for &t in tags {
            if t >= self.num_tags {
                return Err(CrfError::TagOutOfRange {
                    index: t,
                    num_tags: self.num_tags,
                });
            }
        }
        let mut score = self.trans(self.start_index(), tags[0]);
        for i in 0..n {
            score += emissions.at(&[i, tags[i]]);
            if i + 1 < n {
                score += self.trans(tags[i], tags[i + 1]);
            }
        }
        score += self.trans(tags[n - 1], self.stop_index());
        Ok(score)
    }

    /// log Σ over all k^n tag sequences of exp(score), via the forward
    /// recursion in log space.
    pub fn log_partition(&self, emissions: &Tensor) -> Result<f64, CrfError> {
        self.check_emissions(emissions)?;
        let (alpha, _) = self.forward_lattice(emissions);
        let n = emissions.shape()[0];
        let finals: Vec<f64> = (0..self.num_tags)
            .map(|j| alpha[n - 1][j] + self.trans(j, self.stop_index()))
            .collect();
        Ok(crate::numerics::log_sum_exp_slice(&finals))
    }

    /// Forward variables alpha[t][j] = log Σ over prefixes ending in tag j.
    fn forward_lattice(&self, emissions: &Tensor) -> (Vec<Vec<f64>>, usize) {
        let n = emissions.shape()[0];
        let k = self.num_tags;
        let mut alpha = vec![vec![0.0; k]; n];
        for j in 0..k {
            alpha[0][j] = self.trans(self.start_index(), j) + emissions.at(&[0, j]);
        }
        let mut scratch = vec![0.0; k];
        for t in 1..n {
            for j in 0..k {
                for (i, s) in scratch.iter_mut().enumerate() {
                    *s = alpha[t - 1][i] + self.trans(i, j);
                }
                alpha[t][j] =
                    crate::numerics::log_sum_exp_slice(&scratch) + emissions.at(&[t, j]);
            }
        }
        (alpha, n)
    }

    /// Backward variables beta[t][i] = log Σ over suffixes starting after tag
    /// i at position t (includes the i→STOP term).
    fn backward_lattice(&self, emissions: &Tensor) -> Vec<Vec<f64>> {
        let n = emissions.shape()[0];
        let k = self.num_tags;
        let mut beta = vec![vec![0.0; k]; n];
        for i in 0..k {
            beta[n - 1][i] = self.trans(i, self.stop_index());
        }
        let mut scratch = vec![0.0; k];
        for t in (0..n - 1).rev() {
            for i in 0..k {
                for (j, s) in scratch.iter_mut().enumerate() {
                    *s = self.trans(i, j) + emissions.at(&[t + 1, j]) + beta[t + 1][j];
                }
                beta[t][i] = crate::numerics::log_sum_exp_slice(&scratch);
            }
        }
        beta
    }

    /// Negative log-likelihood of the gold path: log_partition − gold score.
    /// Non-negative, since the partition dominates every single path score.
    pub fn nll(&self, emissions: &Tensor, tags: &[usize]) -> Result<f64, CrfError> {
        let score = self.sequence_score(emissions, tags)?;
        let log_z = self.log_partition(emissions)?;
        Ok(log_z - score)
    }

    /// NLL plus its analytic gradients w.r.t. the emissions and the
    /// transition matrix (expected counts minus observed counts). Masked
    /// transition cells receive zero gradient.
    pub fn nll_with_grads(
        &self,
        emissions: &Tensor,
        tags: &[usize],
    ) -> Result<(f64, Tensor, Tensor), CrfError> {
        let score = self.sequence_score(emissions, tags)?;
        let n = emissions.shape()[0];
        let k = self.num_tags;
        let (alpha, _) = self.forward_lattice(emissions);
        let beta = self.backward_lattice(emissions);
        let finals: Vec<f64> = (0..k)
            .map(|j| alpha[n - 1][j] + self.trans(j, self.stop_index()))
            .collect();
        let log_z = crate::numerics::log_sum_exp_slice(&finals);

        let mut d_emissions = Tensor::zeros(&[n, k]);
        for t in 0..n {
            for j in 0..k {
                let marginal = (alpha[t][j] + beta[t][j] - log_z).exp();
                *d_emissions.at_mut(&[t, j]) = marginal;
            }
            *d_emissions.at_mut(&[t, tags[t]]) -= 1.0;
        }

        let mut d_trans = Tensor::zeros(&[k + 2, k + 2]);
        // START row: expected minus observed
        for j in 0..k {
            let marginal = (alpha[0][j] + beta[0][j] - log_z).exp();
            *d_trans.at_mut(&[self.start_index(), j]) = marginal;
        }
        *d_trans.at_mut(&[self.start_index(), tags[0]]) -= 1.0;
        // interior transitions
        for t in 0..n.saturating_sub(1) {
            for i in 0..k {
                for j in 0..k {
                    let pair = (alpha[t][i]
                        + self.trans(i, j)
                        + emissions.at(&[t + 1, j])
                        + beta[t + 1][j]
                        - log_z)
                        .exp();
                    *d_trans.at_mut(&[i, j]) += pair;
                }
            }
            *d_trans.at_mut(&[tags[t], tags[t + 1]]) -= 1.0;
        }
        // STOP column
        for i in 0..k {
            let marginal = (alpha[n - 1][i] + self.trans(i, self.stop_index()) - log_z).exp();
            *d_trans.at_mut(&[i, self.stop_index()]) = marginal;
        }
        *d_trans.at_mut(&[tags[n - 1], self.stop_index()]) -= 1.0;

        if let Some(mask) = &self.mask {
            for (i, &forbidden) in mask.iter().enumerate() {
                if forbidden {
                    d_trans.data_mut()[i] = 0.0;
                }
            }
        }
        Ok((log_z - score, d_emissions, d_trans))
    }

    /// Highest-scoring tag sequence. Ties are broken toward the lowest tag
    /// index at the latest differing position, which the dynamic program
    /// realizes by preferring the lowest index in every argmax.
    pub fn viterbi(&self, emissions: &Tensor) -> Result<Vec<usize>, CrfError> {
        self.check_emissions(emissions)?;
        let n = emissions.shape()[0];
        let k = self.num_tags;
        let mut delta = vec![vec![0.0; k]; n];
        let mut back = vec![vec![0usize; k]; n];
        for j in 0..k {
            delta[0][j] = self.trans(self.start_index(), j) + emissions.at(&[0, j]);
        }
        for t in 1..n {
            for j in 0..k {
                let mut best_i = 0;
                let mut best = f64::NEG_INFINITY;
                for i in 0..k {
                    let v = delta[t - 1][i] + self.trans(i, j);
                    if v > best {
                        best = v;
                        best_i = i;
                    }
                }
                delta[t][j] = best + emissions.at(&[t, j]);
                back[t][j] = best_i;
            }
        }
        let mut best_j = 0;
        let mut best = f64::NEG_INFINITY;
        for j in 0..k {
            let v = delta[n - 1][j] + self.trans(j, self.stop_index());
            if v > best {
                best = v;
                best_j = j;
            }
        }
        let mut path = vec![0usize; n];
        path[n - 1] = best_j;
        for t in (1..n).rev() {
            path[t - 1] = back[t][path[t]];
        }
        Ok(path)
    }
}

/// Boolean (k+2)×(k+2) matrix of forbidden transitions for a BILOU scheme,
/// row-major [from][to], true = forbidden.
///
/// Forbidden: START→{I,L}; {B-x,I-x}→anything but {I-x,L-x}; {O,L,U}→{I,L};
/// {B,I}→STOP; plus the structural cells into START and out of STOP.
pub fn build_bilou_mask(scheme: &TagScheme) -> Result<Vec<bool>, TagError> {
    if scheme.kind() != SchemeKind::Bilou {
        return Err(TagError::KindMismatch { expected: "BILOU" });
    }
    let k = scheme.size();
    let start = k;
    let stop = k + 1;
    let dim = k + 2;
    let mut mask = vec![false; dim * dim];
    let mut forbid = |from: usize, to: usize| mask[from * dim + to] = true;

    for to in 0..dim {
        forbid(stop, to);
    }
    for from in 0..dim {
        forbid(from, start);
    }
    forbid(start, stop);

    for to in 0..k {
        if let Some((BilouPrefix::Inside | BilouPrefix::Last, _)) = scheme.split_bilou(to) {
            forbid(start, to);
        }
    }
    for from in 0..k {
        match scheme.split_bilou(from) {
            Some((BilouPrefix::Begin | BilouPrefix::Inside, cat)) => {
                let cat = cat.to_string();
                // only I-cat or L-cat may follow; everything else (including
                // O and STOP) is forbidden
                for to in 0..k {
                    let ok = matches!(
                        scheme.split_bilou(to),
                        Some((BilouPrefix::Inside | BilouPrefix::Last, c)) if c == cat
                    );
                    if !ok {
                        forbid(from, to);
                    }
                }
                forbid(from, stop);
            }
            _ => {
                // O, L-x, U-x: may not be followed by any I or L
                for to in 0..k {
                    if let Some((BilouPrefix::Inside | BilouPrefix::Last, _)) =
                        scheme.split_bilou(to)
                    {
                        forbid(from, to);
                    }
                }
            }
        }
    }
    Ok(mask)
}
