use super::{Init, ParamStore, Tape, Tensor, TensorError, Var};

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Largest relative difference between the reverse-mode gradient of a
/// scalar function `f` at `x` and its central-difference estimate.
pub fn grad_check<F>(f: F, x: &Tensor, step: f64) -> Result<f64, TensorError>
where
    F: Fn(&mut Tape, Var) -> Result<Var, TensorError>,
{
    let mut store = ParamStore::new();
    let id = store.insert("x", x.clone(), Init::Explicit);
    grad_check_params(&mut store, |tape, store| {
        let v = tape.param(store, id);
        f(tape, v)
    }, step)
}

/// Same check over every element of every parameter in `store`. The store
/// is perturbed in place and restored before returning.
pub fn grad_check_params<F>(store: &mut ParamStore, f: F, step: f64) -> Result<f64, TensorError>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var, TensorError>,
{
    assert!(step > 0.0, "finite-difference step must be positive");
    let eval = |store: &ParamStore| -> Result<f64, TensorError> {
        let mut tape = Tape::new();
        let loss = f(&mut tape, store)?;
        let v = tape.value(loss);
        if v.numel() != 1 {
            return Err(TensorError::NotScalarLoss(v.shape().to_vec()));
        }
        Ok(v.item())
    };
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    let grads = tape.backward(loss)?;

    let mut worst = 0.0f64;
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let analytic = grads
            .get(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(store.value(id).shape()));
        for k in 0..store.value(id).numel() {
            let original = store.value(id).data()[k];
            store.value_mut(id).data_mut()[k] = original + step;
            let plus = eval(store);
            store.value_mut(id).data_mut()[k] = original - step;
            let minus = eval(store);
            store.value_mut(id).data_mut()[k] = original;
            let numeric = (plus? - minus?) / (2.0 * step);
            worst = worst.max(relative_error(analytic.data()[k], numeric));
        }
    }
    Ok(worst)
}
