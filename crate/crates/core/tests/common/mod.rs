//! Finite-difference gradient oracle shared by the gradient tests and the
//! acceptance harness.
//!
//! A graph is built once in `f32` (the production path) to obtain analytic
//! gradients, and re-evaluated in `f64` under central differences
//! (h = 1e-3) for the numeric side. Inputs are drawn as `f32` and widened, so
//! both sides evaluate the same function. The scalar probe is
//! `Σ wᵢ·outᵢ` with fixed random weights, so every output element matters.
//!
//! Coordinates whose two probes fall on different pieces of a piecewise
//! op (max, relu, abs) are skipped and counted: the difference quotient
//! there measures the kink, not the derivative.
//!
//! Agreement is measured norm-wise over the checked coordinates:
//! `‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂, 1e-12)`.

#![allow(dead_code)]

pub mod generator;
pub mod ops;

use tlp_core::rng::Stream;
use tlp_core::{Element, Result, Tape, Tensor, Var};

pub const FD_STEP: f64 = 1e-3;

pub trait Graph {
    fn build<F: Element>(&self, tape: &mut Tape<F>, inputs: &[Var]) -> Result<Var>;
}

/// Random `f32`-representable values in `[lo, hi)`, avoiding `|x| < gap`
/// when `gap > 0` (keeps kinked ops away from their kinks).
pub fn random_tensor(shape: &[usize], s: &mut Stream, lo: f64, hi: f64, gap: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| loop {
        let v = s.uniform_in(lo, hi) as f32 as f64;
        if v.abs() >= gap {
            break v;
        }
    })
}

pub struct Report {
    pub rel_err: f64,
    pub checked: usize,
    /// Sampled coordinates whose ±h probes straddled a kink.
    pub skipped: usize,
    /// Largest disagreements: (input, element, analytic, numeric).
    pub worst: Vec<(usize, usize, f64, f64)>,
}

fn probe<F: Element, G: Graph>(graph: &G, inputs: &[Tensor<F>], weights: &[f64], trainable: bool) -> Result<(Tape<F>, Vec<Var>, Var, f64)> {
    let mut tape = Tape::<F>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), trainable)).collect();
    let out = graph.build(&mut tape, &vars)?;
    let value: f64 = tape
        .value(out)
        .data()
        .iter()
        .zip(weights)
        .map(|(o, w)| o.as_f64() * w)
        .sum();
    Ok((tape, vars, out, value))
}

/// Checks gradients of `graph` w.r.t. the inputs listed in `wrt` (all
/// elements of each), or a random subset of `fraction` of those elements.
pub fn check<G: Graph>(graph: &G, inputs: &[Tensor<f64>], wrt: &[usize], fraction: f64, s: &mut Stream) -> Result<Report> {
    let inputs32: Vec<Tensor<f32>> = inputs.iter().map(|t| t.cast()).collect();
    // output size from a dry run
    let (tape, _, out, _) = probe(graph, &inputs32, &[], false)?;
    let n_out = tape.value(out).numel();
    drop(tape);
    let weights: Vec<f64> = (0..n_out).map(|_| s.uniform_in(-1.0, 1.0) as f32 as f64).collect();

    let mut tape = Tape::<f32>::new();
    let vars: Vec<Var> = inputs32.iter().map(|t| tape.param(t.clone())).collect();
    let out = graph.build(&mut tape, &vars)?;
    let w = tape.constant(Tensor::from_fn(tape.value(out).shape().to_vec(), |i| weights[i] as f32));
    let prod = tape.mul(out, w)?;
    let loss = tape.sum(prod);
    tape.backward(loss)?;

    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let mut at = Vec::new();
    let mut skipped = 0;
    for &which in wrt {
        let grad = tape
            .grad(vars[which])
            .unwrap_or_else(|| Tensor::zeros(inputs[which].shape().to_vec()));
        for idx in 0..inputs[which].numel() {
            if fraction < 1.0 && s.uniform() >= fraction {
                continue;
            }
            let eval = |delta: f64| -> Result<(f64, u64)> {
                let mut perturbed = inputs.to_vec();
                perturbed[which].data_mut()[idx] += delta;
                let (tape, _, _, value) = probe(graph, &perturbed, &weights, false)?;
                Ok((value, tape.branch_fingerprint()))
            };
            let ((up, fp_up), (down, fp_down)) = (eval(FD_STEP)?, eval(-FD_STEP)?);
            if fp_up != fp_down {
                skipped += 1;
                continue;
            }
            let fd = (up - down) / (2.0 * FD_STEP);
            analytic.push(grad.data()[idx] as f64);
            numeric.push(fd);
            at.push((which, idx));
        }
    }
    let diff = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let mut worst: Vec<(usize, usize, f64, f64)> = at
        .iter()
        .zip(analytic.iter().zip(&numeric))
        .map(|(&(w, i), (&a, &n))| (w, i, a, n))
        .collect();
    worst.sort_by(|x, y| (y.2 - y.3).abs().total_cmp(&(x.2 - x.3).abs()));
    worst.truncate(5);
    Ok(Report {
        rel_err: diff / na.max(nn).max(1e-12),
        checked: analytic.len(),
        skipped,
        worst,
    })
}

/// Adapter turning a closure over a generic tape into a [`Graph`] is not
/// possible (closures cannot be generic), so ops are wrapped in small structs.
#[macro_export]
macro_rules! graph {
    ($name:ident, |$tape:ident, $v:ident| $body:expr) => {
        struct $name;
        impl $crate::common::Graph for $name {
            fn build<F: tlp_core::Element>(&self, $tape: &mut tlp_core::Tape<F>, $v: &[tlp_core::Var]) -> tlp_core::Result<tlp_core::Var> {
                $body
            }
        }
    };
}
