use super::NumericsError;

/// Dense row-major array of f64 values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor, NumericsError> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(NumericsError::ShapeMismatch {
                expected: shape.to_vec(),
                got: vec![data.len()],
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Flat offset of a multi-dimensional index.
    fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        let mut off = 0;
        for (i, &ix) in index.iter().enumerate() {
            debug_assert!(ix < self.shape[i]);
            off = off * self.shape[i] + ix;
        }
        off
    }

    pub fn at(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn at_mut(&mut self, index: &[usize]) -> &mut f64 {
        let off = self.offset(index);
        &mut self.data[off]
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        debug_assert_eq!(self.rank(), 2);
        let cols = self.shape[1];
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        debug_assert_eq!(self.rank(), 2);
        let cols = self.shape[1];
        &mut self.data[i * cols..(i + 1) * cols]
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    /// Elementwise `self += other`, shapes must match.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<(), NumericsError> {
        if self.shape != other.shape {
            return Err(NumericsError::ShapeMismatch {
                expected: self.shape.clone(),
                got: other.shape.clone(),
            });
        }
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Iterate (axis index within its lane, flat offset) lanes for a reduction
    /// along `axis`. Returns (outer, axis_len, inner) strides decomposition.
    fn axis_lanes(&self, axis: usize) -> Result<(usize, usize, usize), NumericsError> {
        if axis >= self.shape.len() {
            return Err(NumericsError::AxisOutOfRange {
                axis,
                rank: self.shape.len(),
            });
        }
        let axis_len = self.shape[axis];
        if axis_len == 0 {
            return Err(NumericsError::EmptyAxis { axis });
        }
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        Ok((outer, axis_len, inner))
    }
}

/// Numerically stable log(sum(exp(v))) along `axis`; the axis is removed
/// from the output shape.
pub fn log_sum_exp(values: &Tensor, axis: usize) -> Result<Tensor, NumericsError> {
    let (outer, axis_len, inner) = values.axis_lanes(axis)?;
    let mut out_shape: Vec<usize> = values.shape().to_vec();
    out_shape.remove(axis);
    let mut out = Tensor::zeros(&out_shape);
    for o in 0..outer {
        for i in 0..inner {
            let base = o * axis_len * inner + i;
            let mut max = f64::NEG_INFINITY;
            for a in 0..axis_len {
                max = max.max(values.data[base + a * inner]);
            }
            let v = if max == f64::NEG_INFINITY {
                // all lanes -inf: sum of zeros
                f64::NEG_INFINITY
            } else {
                let mut acc = 0.0;
                for a in 0..axis_len {
                    acc += (values.data[base + a * inner] - max).exp();
                }
                max + acc.ln()
            };
            out.data[o * inner + i] = v;
        }
    }
    Ok(out)
}

/// Stable logsumexp of a slice (the 1-D case, used heavily in the CRF
/// recursions).
pub(crate) fn log_sum_exp_slice(values: &[f64]) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for &v in values {
        max = max.max(v);
    }
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let mut acc = 0.0;
    for &v in values {
        acc += (v - max).exp();
    }
    max + acc.ln()
}

/// Softmax along `axis`, computed with a max shift. Output shape equals the
/// input shape; values along the axis sum to 1.
pub fn softmax(logits: &Tensor, axis: usize) -> Result<Tensor, NumericsError> {
    let (outer, axis_len, inner) = logits.axis_lanes(axis)?;
    let mut out = Tensor::zeros(logits.shape());
    for o in 0..outer {
        for i in 0..inner {
            let base = o * axis_len * inner + i;
            let mut max = f64::NEG_INFINITY;
            for a in 0..axis_len {
                max = max.max(logits.data[base + a * inner]);
            }
            let mut total = 0.0;
            for a in 0..axis_len {
                let e = (logits.data[base + a * inner] - max).exp();
                out.data[base + a * inner] = e;
                total += e;
            }
            for a in 0..axis_len {
                out.data[base + a * inner] /= total;
            }
        }
    }
    Ok(out)
}

/// Softmax of a slice, in place.
pub(crate) fn softmax_slice(values: &mut [f64]) {
    let mut max = f64::NEG_INFINITY;
    for &v in values.iter() {
        max = max.max(v);
    }
    let mut total = 0.0;
    for v in values.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in values.iter_mut() {
        *v /= total;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_round_trip() {
        let mut t = Tensor::zeros(&[2, 3]);
        *t.at_mut(&[1, 2]) = 7.0;
        assert_eq!(t.at(&[1, 2]), 7.0);
        assert_eq!(t.row(1), &[0.0, 0.0, 7.0]);
    }

    #[test]
    fn from_vec_rejects_bad_length() {
        assert!(Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn log_sum_exp_of_two_zeros_is_ln_two() {
        let t = Tensor::from_vec(&[2], vec![0.0, 0.0]).unwrap();
        let r = log_sum_exp(&t, 0).unwrap();
        assert!((r.at(&[]) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn log_sum_exp_single_value_is_identity() {
        let t = Tensor::from_vec(&[1], vec![-3.25]).unwrap();
        let r = log_sum_exp(&t, 0).unwrap();
        assert_eq!(r.at(&[]), -3.25);
    }

    #[test]
    fn log_sum_exp_large_values_no_overflow() {
        let t = Tensor::from_vec(&[2], vec![1000.0, 1000.1]).unwrap();
        let r = log_sum_exp(&t, 0).unwrap();
        let expected = 1000.1 + (1.0 + (-0.1f64).exp()).ln();
        assert!(r.at(&[]).is_finite());
        assert!((r.at(&[]) - expected).abs() < 1e-9);
    }

    #[test]
    fn log_sum_exp_bounds() {
        let t = Tensor::from_vec(&[4], vec![0.3, -1.0, 2.5, 2.5]).unwrap();
        let r = log_sum_exp(&t, 0).unwrap().at(&[]);
        assert!(r >= 2.5);
        assert!(r <= 2.5 + 4f64.ln());
    }

    #[test]
    fn log_sum_exp_rejects_empty_axis() {
        let t = Tensor::zeros(&[0]);
        assert!(matches!(
            log_sum_exp(&t, 0),
            Err(NumericsError::EmptyAxis { .. })
        ));
    }

    #[test]
    fn softmax_uniform() {
        let t = Tensor::from_vec(&[4], vec![1.5, 1.5, 1.5, 1.5]).unwrap();
        let s = softmax(&t, 0).unwrap();
        for &v in s.data() {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_closed_form_pair() {
        let c = 1.7;
        let t = Tensor::from_vec(&[2], vec![0.4, 0.4 + c]).unwrap();
        let s = softmax(&t, 0).unwrap();
        assert!((s.at(&[1]) - 1.0 / (1.0 + (-c).exp())).abs() < 1e-12);
    }

    #[test]
    fn softmax_shift_invariant() {
        let t = Tensor::from_vec(&[3], vec![0.1, -2.0, 5.0]).unwrap();
        let mut shifted = t.clone();
        shifted.data_mut().iter_mut().for_each(|v| *v += 123.0);
        let a = softmax(&t, 0).unwrap();
        let b = softmax(&shifted, 0).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one_and_preserve_argmax() {
        let t = Tensor::from_vec(&[2, 3], vec![1.0, 3.0, 2.0, -1.0, -5.0, 0.0]).unwrap();
        let s = softmax(&t, 1).unwrap();
        for i in 0..2 {
            let sum: f64 = s.row(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            let argmax_in = t
                .row(i)
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            let argmax_out = s
                .row(i)
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(argmax_in, argmax_out);
            assert!(s.row(i).iter().all(|&v| v > 0.0));
        }
    }
}
