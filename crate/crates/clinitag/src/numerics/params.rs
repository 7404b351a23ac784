use std::collections::BTreeMap;

use super::{NumericsError, Rng, Tensor};

/// A named trainable (or frozen) tensor with an accumulated gradient of the
/// same shape.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
    pub trainable: bool,
}

/// Named parameter storage. Iteration order is the lexicographic name order,
/// which keeps every consumer (optimizer, checkpoints, gradient checks)
/// deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParameterStore {
    entries: BTreeMap<String, Param>,
}

impl ParameterStore {
    pub fn new() -> ParameterStore {
        ParameterStore::default()
    }

    pub fn define(
        &mut self,
        name: &str,
        value: Tensor,
        trainable: bool,
    ) -> Result<(), NumericsError> {
        if self.entries.contains_key(name) {
            return Err(NumericsError::DuplicateParameter(name.to_string()));
        }
        let grad = Tensor::zeros(value.shape());
        self.entries.insert(
            name.to_string(),
            Param {
                value,
                grad,
                trainable,
            },
        );
        Ok(())
    }

    /// Weight matrix initialized uniformly in ±sqrt(6 / (fan_in + fan_out)),
    /// reproducible from (seed, name).
    pub fn define_uniform(
        &mut self,
        name: &str,
        shape: &[usize],
        fan_in: usize,
        fan_out: usize,
        seed: u64,
    ) -> Result<(), NumericsError> {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let mut rng = Rng::new(seed).derive(name);
        let mut t = Tensor::zeros(shape);
        for v in t.data_mut() {
            *v = rng.uniform(-bound, bound);
        }
        self.define(name, t, true)
    }

    pub fn define_zeros(&mut self, name: &str, shape: &[usize]) -> Result<(), NumericsError> {
        self.define(name, Tensor::zeros(shape), true)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn get(&self, name: &str) -> &Tensor {
        &self
            .entries
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
            .value
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        &mut self
            .entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
            .value
    }

    pub fn grad(&self, name: &str) -> &Tensor {
        &self
            .entries
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
            .grad
    }

    pub fn grad_mut(&mut self, name: &str) -> &mut Tensor {
        &mut self
            .entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
            .grad
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.entries.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.entries.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn zero_grads(&mut self) {
        for p in self.entries.values_mut() {
            p.grad.fill(0.0);
        }
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for p in self.entries.values_mut() {
            p.grad.scale(factor);
        }
    }

    /// Global L2 norm over the gradients of trainable entries.
    pub fn grad_norm(&self) -> f64 {
        let mut acc = 0.0;
        for p in self.entries.values() {
            if p.trainable {
                for &g in p.grad.data() {
                    acc += g * g;
                }
            }
        }
        acc.sqrt()
    }

    /// Rescale all gradients so the global norm does not exceed `max_norm`.
    pub fn clip_grad_norm(&mut self, max_norm: f64) {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale_grads(max_norm / norm);
        }
    }

    pub fn grads_finite(&self) -> bool {
        self.entries.values().all(|p| p.grad.all_finite())
    }

    /// Snapshot of all values, used to retain the best checkpoint during
    /// training.
    pub fn snapshot_values(&self) -> BTreeMap<String, Tensor> {
        self.entries
            .iter()
            .map(|(k, v)| (k.clone(), v.value.clone()))
            .collect()
    }

    pub fn restore_values(&mut self, snapshot: &BTreeMap<String, Tensor>) {
        for (name, value) in snapshot {
            if let Some(p) = self.entries.get_mut(name) {
                p.value = value.clone();
            }
        }
    }
}

/// Adam optimizer with per-parameter first and second moments.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    moments: BTreeMap<String, (Tensor, Tensor)>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Adam {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, store: &mut ParameterStore) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, param) in store.entries.iter_mut() {
            if !param.trainable {
                continue;
            }
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (Tensor::zeros(param.value.shape()), Tensor::zeros(param.value.shape())));
            let grads = param.grad.data();
            let values = param.value.data_mut();
            let ms = m.data_mut();
            let vs = v.data_mut();
            for i in 0..values.len() {
                let g = grads[i];
                ms[i] = self.beta1 * ms[i] + (1.0 - self.beta1) * g;
                vs[i] = self.beta2 * vs[i] + (1.0 - self.beta2) * g * g;
                let m_hat = ms[i] / bc1;
                let v_hat = vs[i] / bc2;
                values[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn define_rejects_duplicates() {
        let mut s = ParameterStore::new();
        s.define("w", Tensor::zeros(&[2]), true).unwrap();
        assert!(matches!(
            s.define("w", Tensor::zeros(&[2]), true),
            Err(NumericsError::DuplicateParameter(_))
        ));
    }

    #[test]
    fn uniform_init_reproducible_from_seed_and_name() {
        let mut a = ParameterStore::new();
        let mut b = ParameterStore::new();
        a.define_uniform("w", &[3, 4], 3, 4, 11).unwrap();
        b.define_uniform("w", &[3, 4], 3, 4, 11).unwrap();
        assert_eq!(a.get("w").data(), b.get("w").data());
        let mut c = ParameterStore::new();
        c.define_uniform("w", &[3, 4], 3, 4, 12).unwrap();
        assert_ne!(a.get("w").data(), c.get("w").data());
    }

    #[test]
    fn uniform_init_within_bound() {
        let mut s = ParameterStore::new();
        s.define_uniform("w", &[50, 20], 50, 20, 5).unwrap();
        let bound = (6.0 / 70.0f64).sqrt();
        for &v in s.get("w").data() {
            assert!(v.abs() <= bound);
        }
    }

    #[test]
    fn clip_rescales_to_max_norm() {
        let mut s = ParameterStore::new();
        s.define("w", Tensor::zeros(&[2]), true).unwrap();
        s.grad_mut("w").data_mut().copy_from_slice(&[3.0, 4.0]);
        s.clip_grad_norm(1.0);
        assert!((s.grad_norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut s = ParameterStore::new();
        s.define(
            "x",
            Tensor::from_vec(&[2], vec![3.0, -2.0]).unwrap(),
            true,
        )
        .unwrap();
        let mut opt = Adam::new(0.1);
        for _ in 0..500 {
            s.zero_grads();
            let x = s.get("x").data().to_vec();
            s.grad_mut("x").data_mut().copy_from_slice(&x);
            opt.step(&mut s);
        }
        for &v in s.get("x").data() {
            assert!(v.abs() < 1e-3);
        }
    }

    #[test]
    fn zero_grad_leaves_value_untouched_under_adam() {
        let mut s = ParameterStore::new();
        s.define("x", Tensor::from_vec(&[1], vec![1.5]).unwrap(), true)
            .unwrap();
        let mut opt = Adam::new(0.1);
        s.zero_grads();
        opt.step(&mut s);
        assert_eq!(s.get("x").data()[0], 1.5);
    }
}
