//! The tape in isolation: fit a small two-layer network to a smooth target
//! with Adam and compare the reverse-mode gradient with finite differences.
//!
//! cargo run --example autodiff

use dsse_twin::rng;
use dsse_twin::tensor::{grad_check_params, Adam, ParamStore, Tape, Tensor, TensorError, Var};

fn main() -> Result<(), TensorError> {
    let xs: Vec<f64> = (0..32).map(|i| -1.0 + 2.0 * i as f64 / 31.0).collect();
    let x = Tensor::matrix(32, 1, xs.clone())?;
    let y = Tensor::matrix(32, 1, xs.iter().map(|v| (2.0 * v).sin()).collect())?;

    let mut r = rng::rng(5);
    let mut store = ParamStore::new();
    let w1 = store.uniform("w1", &[1, 16], &mut r, 1);
    let b1 = store.zeros("b1", &[16]);
    let w2 = store.uniform("w2", &[16, 1], &mut r, 16);
    let b2 = store.zeros("b2", &[1]);

    let loss = |tape: &mut Tape, store: &ParamStore| -> Result<Var, TensorError> {
        let xv = tape.constant(x.clone());
        let yv = tape.constant(y.clone());
        let (w1, b1, w2, b2) = (tape.param(store, w1), tape.param(store, b1), tape.param(store, w2), tape.param(store, b2));
        let h = tape.affine(xv, w1, b1)?;
        let h = tape.sigmoid(h)?;
        let out = tape.affine(h, w2, b2)?;
        let d = tape.sub(out, yv)?;
        let sq = tape.square(d)?;
        tape.mean_all(sq)
    };

    let check = grad_check_params(&mut store, loss, 1e-6)?;
    println!("largest relative gradient error vs central differences: {check:.2e}");

    let mut adam = Adam::new(&store);
    for epoch in 0..=2000 {
        let mut tape = Tape::new();
        let l = loss(&mut tape, &store)?;
        if epoch % 400 == 0 {
            println!("step {epoch:>4}: mse {:.3e}", tape.value(l).item());
        }
        let mut grads = tape.backward(l)?;
        adam.step(&mut store, &mut grads, 1e-2)?;
    }
    Ok(())
}
