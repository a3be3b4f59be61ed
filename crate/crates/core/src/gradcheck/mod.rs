//! Central finite differences, used to verify every backward rule.

mod suite;

use crate::params::ParamStore;
use crate::tape::{Tape, Var};
use crate::tensor::{Result, Tensor};

pub use suite::{run_suite, OpReport, SUITE_EPS, SUITE_TOLERANCE};

/// Central-difference gradient of a scalar function, one element at a time.
pub fn finite_diff_grad(f: impl Fn(&Tensor<f64>) -> f64, x: &Tensor<f64>, eps: f64) -> Tensor<f64> {
    let mut probe = x.clone();
    let mut out = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (up - down) / (2.0 * eps);
    }
    out
}

/// `||a - b|| / max(||a||, ||b||)`, or 0 when both norms are below `1e-10`.
pub fn relative_error(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let diff: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = a.squared_norm().sqrt().max(b.squared_norm().sqrt());
    if scale < 1e-10 {
        0.0
    } else {
        diff / scale
    }
}

/// Compares tape gradients of `build` against finite differences for every
/// input; returns the largest relative error.
pub fn check_gradients(
    inputs: &[Tensor<f64>],
    eps: f64,
    build: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let mut worst = 0.0f64;
    for (i, x) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[i]).cloned().unwrap_or_else(|| Tensor::zeros(x.shape()));
        let numeric = finite_diff_grad(
            |probe| {
                let mut tape = Tape::new();
                let vars: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, t)| tape.input(if j == i { probe.clone() } else { t.clone() }))
                    .collect();
                let loss = build(&mut tape, &vars).expect("forward succeeded once");
                tape.value(loss).item()
            },
            x,
            eps,
        );
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    Ok(worst)
}

/// Like [`check_gradients`] for a model reading its weights from a parameter store.
pub fn check_param_gradients(
    params: &ParamStore<f64>,
    eps: f64,
    build: impl Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
) -> Result<f64> {
    let mut tape = Tape::new();
    let loss = build(&mut tape, params)?;
    let grads = tape.backward(loss)?;
    let analytic = grads.params();
    let mut worst = 0.0f64;
    for (name, x) in params.iter() {
        let a = analytic.get(name).map(|t| (*t).clone()).unwrap_or_else(|| Tensor::zeros(x.shape()));
        let numeric = finite_diff_grad(
            |probe| {
                let mut p = params.clone();
                p.insert(name.clone(), probe.clone());
                let mut tape = Tape::new();
                let loss = build(&mut tape, &p).expect("forward succeeded once");
                tape.value(loss).item()
            },
            x,
            eps,
        );
        worst = worst.max(relative_error(&a, &numeric));
    }
    Ok(worst)
}
