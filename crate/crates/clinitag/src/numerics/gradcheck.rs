use super::{NumericsError, ParameterStore};

/// Per-parameter outcome of a finite-difference check.
#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_error: f64,
    /// Flat index where the worst error occurred.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!(
                "{:<28} max_rel_err {:.3e}  (analytic {:+.6e}, numeric {:+.6e} at flat index {})\n",
                e.name, e.max_rel_error, e.analytic, e.numeric, e.worst_index
            ));
        }
        out.push_str(&format!(
            "gradient check: {} (tolerance {:.1e}, worst {:.3e})\n",
            if self.passed { "PASS" } else { "FAIL" },
            self.tolerance,
            self.max_rel_error()
        ));
        out
    }
}

fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / 1f64.max(a.abs()).max(n.abs())
}

/// Compare the analytic gradients produced by `loss_fn` against central
/// finite differences `(loss(θ+h) − loss(θ−h)) / 2h` for every element of
/// every trainable parameter.
///
/// `loss_fn` must return the scalar loss for the current store contents and
/// accumulate the matching analytic gradients into the store (the checker
/// zeroes gradients before each call). It is evaluated twice up front; any
/// mismatch in the loss or the gradients is reported as non-determinism.
pub fn check_gradients<F>(
    mut loss_fn: F,
    store: &mut ParameterStore,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport, NumericsError>
where
    F: FnMut(&mut ParameterStore) -> f64,
{
    assert!(step > 0.0, "finite-difference step must be positive");

    store.zero_grads();
    let loss_a = loss_fn(store);
    let grads_a: Vec<(String, Vec<f64>)> = store
        .iter()
        .filter(|(_, p)| p.trainable)
        .map(|(k, p)| (k.clone(), p.grad.data().to_vec()))
        .collect();

    store.zero_grads();
    let loss_b = loss_fn(store);
    if loss_a != loss_b {
        return Err(NumericsError::NonDeterministicLoss {
            first: loss_a,
            second: loss_b,
        });
    }
    for (name, grad) in &grads_a {
        if store.grad(name).data() != grad.as_slice() {
            return Err(NumericsError::NonDeterministicLoss {
                first: loss_a,
                second: loss_b,
            });
        }
    }

    let names: Vec<String> = store
        .iter()
        .filter(|(_, p)| p.trainable)
        .map(|(k, _)| k.clone())
        .collect();

    let mut entries = Vec::with_capacity(names.len());
    for name in names {
        let analytic = grads_a
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, g)| g.clone())
            .unwrap();
        let len = store.get(&name).len();
        let mut worst = GradCheckEntry {
            name: name.clone(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for i in 0..len {
            let original = store.get(&name).data()[i];
            store.get_mut(&name).data_mut()[i] = original + step;
            store.zero_grads();
            let plus = loss_fn(store);
            store.get_mut(&name).data_mut()[i] = original - step;
            store.zero_grads();
            let minus = loss_fn(store);
            store.get_mut(&name).data_mut()[i] = original;

            let numeric = (plus - minus) / (2.0 * step);
            let err = relative_error(analytic[i], numeric);
            if err > worst.max_rel_error {
                worst.max_rel_error = err;
                worst.worst_index = i;
                worst.analytic = analytic[i];
                worst.numeric = numeric;
            }
        }
        entries.push(worst);
    }

    // leave the analytic gradients in place for the caller
    store.zero_grads();
    loss_fn(store);

    let passed = entries.iter().all(|e| e.max_rel_error < tolerance);
    Ok(GradCheckReport {
        entries,
        tolerance,
        passed,
    })
}
