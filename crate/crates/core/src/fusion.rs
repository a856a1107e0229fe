//! Fusion of the two modality branches.
//!
//! * Local fusion: `conv1x1(concat(f1, f2, max(f1, f2)))`, channel order
//!   exactly `(f1, f2, max)`, mapping `3C → C`.
//! * Global fusion: each branch projects its features to Q, K, V with its own
//!   projection; the queries are exchanged, so
//!   `g2 = softmax(Q1·K2ᵀ/√d_k)·V2` and `g1 = softmax(Q2·K1ᵀ/√d_k)·V1`.
//!   Tokens are channels within a head (as in the backbone blocks), so `d_k`
//!   is the number of pixels.

use crate::error::{Error, Result};
use crate::nn::{self, split_heads};
use crate::params::{Binder, ParamSpec};
use crate::tensor::{Element, Tape, Var};

pub fn local_fusion_specs(prefix: &str, channels: usize) -> Vec<ParamSpec> {
    nn::conv_specs(prefix, channels, 3 * channels, 1, true)
}

pub fn local_fusion<F: Element>(tape: &mut Tape<F>, b: &mut Binder<'_, F>, prefix: &str, f1: Var, f2: Var) -> Result<Var> {
    if tape.shape(f1) != tape.shape(f2) {
        return Err(Error::ShapeMismatch(format!(
            "local fusion of {:?} and {:?}",
            tape.shape(f1),
            tape.shape(f2)
        )));
    }
    let m = tape.maximum(f1, f2)?;
    let cat = tape.concat(&[f1, f2, m], 1)?;
    nn::conv(tape, b, prefix, cat, 1, 0)
}

/// Parameters `{prefix}.p1.*` and `{prefix}.p2.*`, one projection per branch.
pub fn global_fusion_specs(prefix: &str, channels: usize) -> Vec<ParamSpec> {
    let mut v = nn::qkv_specs(&format!("{prefix}.p1"), channels);
    v.extend(nn::qkv_specs(&format!("{prefix}.p2"), channels));
    v
}

/// `softmax(Q·Kᵀ/√d_k)·V` per head for `[B, C, H, W]` inputs, with channels
/// as tokens and `d_k = H·W`. Returns `[B, C, H, W]`.
pub fn cross_attention<F: Element>(tape: &mut Tape<F>, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
    let shape = tape.shape(q).to_vec();
    if tape.shape(k) != shape.as_slice() || tape.shape(v) != shape.as_slice() {
        return Err(Error::ShapeMismatch(format!(
            "attention operands {:?}, {:?}, {:?}",
            shape,
            tape.shape(k),
            tape.shape(v)
        )));
    }
    let qh = split_heads(tape, q, heads)?;
    let kh = split_heads(tape, k, heads)?;
    let vh = split_heads(tape, v, heads)?;
    let d_k = tape.shape(qh)[3] as f64;
    let logits = tape.matmul_bt(qh, kh)?;
    let logits = tape.mul_scalar(logits, 1.0 / d_k.sqrt());
    let attn = tape.softmax(logits, 3)?;
    let out = tape.matmul(attn, vh)?;
    tape.reshape(out, shape)
}

/// Returns `(g1, g2)`.
pub fn global_fusion<F: Element>(
    tape: &mut Tape<F>,
    b: &mut Binder<'_, F>,
    prefix: &str,
    f1: Var,
    f2: Var,
    heads: usize,
) -> Result<(Var, Var)> {
    if tape.shape(f1) != tape.shape(f2) {
        return Err(Error::ShapeMismatch(format!(
            "global fusion of {:?} and {:?}",
            tape.shape(f1),
            tape.shape(f2)
        )));
    }
    let [q1, k1, v1] = nn::qkv(tape, b, &format!("{prefix}.p1"), f1)?;
    let [q2, k2, v2] = nn::qkv(tape, b, &format!("{prefix}.p2"), f2)?;
    let g2 = cross_attention(tape, q1, k2, v2, heads)?;
    let g1 = cross_attention(tape, q2, k1, v1, heads)?;
    Ok((g1, g2))
}
