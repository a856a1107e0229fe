//! Backbone building blocks: channel-attention Transformer block (the
//! transposed multi-head attention plus gated depthwise feed-forward design),
//! convolutions, and resampling.
//!
//! Blocks are free functions over a tape and a [`Binder`], reading their
//! parameters under a path prefix; `*_specs` functions list the parameters a
//! block expects so models can initialise and validate them.

use crate::error::{Error, Result};
use crate::params::{Binder, Init, ParamSpec};
use crate::tensor::{Element, Tape, Var};

/// Hidden width of the gated feed-forward network.
pub fn ffn_hidden(channels: usize) -> usize {
    (channels as f64 * 2.66) as usize
}

fn join(prefix: &str, leaf: &str) -> String {
    format!("{prefix}.{leaf}")
}

pub fn conv_specs(prefix: &str, cout: usize, cin: usize, k: usize, bias: bool) -> Vec<ParamSpec> {
    let mut v = vec![ParamSpec::new(join(prefix, "w"), [cout, cin, k, k], Init::Normal)];
    if bias {
        v.push(ParamSpec::new(join(prefix, "b"), [cout], Init::Zeros));
    }
    v
}

/// Convolution reading `{prefix}.w` and, if present, `{prefix}.b`.
pub fn conv<F: Element>(tape: &mut Tape<F>, b: &mut Binder<'_, F>, prefix: &str, x: Var, stride: usize, pad: usize) -> Result<Var> {
    let w = b.var(tape, &join(prefix, "w"))?;
    let bias_name = join(prefix, "b");
    let bias = match b.params().get(&bias_name) {
        Some(_) => Some(b.var(tape, &bias_name)?),
        None => None,
    };
    tape.conv2d(x, w, bias, stride, pad)
}

pub fn depthwise_specs(prefix: &str, channels: usize) -> Vec<ParamSpec> {
    vec![ParamSpec::new(join(prefix, "w"), [channels, 1, 3, 3], Init::Normal)]
}

fn depthwise<F: Element>(tape: &mut Tape<F>, b: &mut Binder<'_, F>, prefix: &str, x: Var) -> Result<Var> {
    let w = b.var(tape, &join(prefix, "w"))?;
    tape.depthwise_conv2d(x, w)
}

/// Splits `[B, C, H, W]` into `[B, heads, C/heads, H·W]`.
pub fn split_heads<F: Element>(tape: &mut Tape<F>, x: Var, heads: usize) -> Result<Var> {
    let [b, c, h, w] = tape.value(x).dims4("attention input")?;
    if heads == 0 || c % heads != 0 {
        return Err(Error::ShapeMismatch(format!("{c} channels do not split into {heads} heads")));
    }
    tape.reshape(x, [b, heads, c / heads, h * w])
}

/// Projection to Q, K, V: pointwise conv to 3C then 3×3 depthwise conv, split
/// along channels.
pub fn qkv_specs(prefix: &str, channels: usize) -> Vec<ParamSpec> {
    let mut v = conv_specs(&join(prefix, "qkv"), 3 * channels, channels, 1, false);
    v.extend(depthwise_specs(&join(prefix, "qkv_dw"), 3 * channels));
    v
}

pub fn qkv<F: Element>(tape: &mut Tape<F>, b: &mut Binder<'_, F>, prefix: &str, x: Var) -> Result<[Var; 3]> {
    let c = tape.value(x).dims4("qkv input")?[1];
    let p = conv(tape, b, &join(prefix, "qkv"), x, 1, 0)?;
    let p = depthwise(tape, b, &join(prefix, "qkv_dw"), p)?;
    Ok([
        tape.slice(p, 1, 0, c)?,
        tape.slice(p, 1, c, c)?,
        tape.slice(p, 1, 2 * c, c)?,
    ])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockShape {
    pub channels: usize,
    pub heads: usize,
}

impl BlockShape {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.channels % self.heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "{} channels are not divisible by {} heads",
                self.channels, self.heads
            )));
        }
        Ok(())
    }
}

pub fn transformer_block_specs(prefix: &str, shape: BlockShape) -> Vec<ParamSpec> {
    let c = shape.channels;
    let hidden = ffn_hidden(c);
    let mut v = vec![
        ParamSpec::new(join(prefix, "norm1.w"), [c], Init::Ones),
        ParamSpec::new(join(prefix, "attn.temperature"), [shape.heads], Init::Ones),
    ];
    v.extend(qkv_specs(&join(prefix, "attn"), c));
    v.extend(conv_specs(&join(prefix, "attn.proj"), c, c, 1, false));
    v.push(ParamSpec::new(join(prefix, "norm2.w"), [c], Init::Ones));
    v.extend(conv_specs(&join(prefix, "ffn.in"), 2 * hidden, c, 1, false));
    v.extend(depthwise_specs(&join(prefix, "ffn.dw"), 2 * hidden));
    v.extend(conv_specs(&join(prefix, "ffn.out"), c, hidden, 1, false));
    v
}

/// Residual block `x + Attn(LN(x))` followed by `x + FFN(LN(x))`.
///
/// Attention runs across channels: each head's `d = C/heads` channels are the
/// tokens, L2-normalised along the pixel axis, with a learnable per-head
/// temperature in place of `1/√d_k`. Cost is linear in pixel count.
pub fn transformer_block<F: Element>(tape: &mut Tape<F>, b: &mut Binder<'_, F>, prefix: &str, x: Var, heads: usize) -> Result<Var> {
    let [_, c, h, w] = tape.value(x).dims4("transformer block")?;
    let n1 = b.var(tape, &join(prefix, "norm1.w"))?;
    let y = tape.channel_norm(x, n1)?;
    let [q, k, v] = qkv(tape, b, &join(prefix, "attn"), y)?;
    let (q, k, v) = (split_heads(tape, q, heads)?, split_heads(tape, k, heads)?, split_heads(tape, v, heads)?);
    let q = tape.l2_normalize(q)?;
    let k = tape.l2_normalize(k)?;
    let logits = tape.matmul_bt(q, k)?;
    let temp = b.var(tape, &join(prefix, "attn.temperature"))?;
    let logits = tape.scale_axis(logits, temp, 1)?;
    let attn = tape.softmax(logits, 3)?;
    let out = tape.matmul(attn, v)?;
    let out = tape.reshape(out, [tape.shape(x)[0], c, h, w])?;
    let out = conv(tape, b, &join(prefix, "attn.proj"), out, 1, 0)?;
    let x = tape.add(x, out)?;

    let n2 = b.var(tape, &join(prefix, "norm2.w"))?;
    let y = tape.channel_norm(x, n2)?;
    let hdn = conv(tape, b, &join(prefix, "ffn.in"), y, 1, 0)?;
    let hdn = depthwise(tape, b, &join(prefix, "ffn.dw"), hdn)?;
    let half = tape.shape(hdn)[1] / 2;
    let gate = tape.slice(hdn, 1, 0, half)?;
    let value = tape.slice(hdn, 1, half, half)?;
    let gate = tape.gelu(gate);
    let z = tape.mul(gate, value)?;
    let out = conv(tape, b, &join(prefix, "ffn.out"), z, 1, 0)?;
    tape.add(x, out)
}

/// 3×3 stride-2 convolution, `C → 2C`.
pub fn downsample_specs(prefix: &str, channels: usize) -> Vec<ParamSpec> {
    conv_specs(prefix, 2 * channels, channels, 3, false)
}

pub fn downsample<F: Element>(tape: &mut Tape<F>, b: &mut Binder<'_, F>, prefix: &str, x: Var) -> Result<Var> {
    let [_, _, h, w] = tape.value(x).dims4("downsample")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::OddExtent(h, w));
    }
    conv(tape, b, prefix, x, 2, 1)
}

/// Nearest ×2 upsampling then 3×3 convolution, `C → C/2`.
pub fn upsample_specs(prefix: &str, channels: usize) -> Vec<ParamSpec> {
    conv_specs(prefix, channels / 2, channels, 3, false)
}

pub fn upsample<F: Element>(tape: &mut Tape<F>, b: &mut Binder<'_, F>, prefix: &str, x: Var) -> Result<Var> {
    let up = tape.upsample2(x)?;
    conv(tape, b, prefix, up, 1, 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamSet;
    use crate::tensor::Tensor;

    fn block_params(shape: BlockShape, seed: u64) -> ParamSet {
        ParamSet::init(&transformer_block_specs("blk", shape), seed, 0.2)
    }

    fn input(shape: [usize; 4], seed: u64) -> Tensor {
        let mut s = crate::rng::Stream::new(seed);
        Tensor::from_fn(shape, |_| s.uniform_in(-1.0, 1.0) as f32)
    }

    #[test]
    fn block_preserves_shape() {
        let shape = BlockShape { channels: 8, heads: 2 };
        let p = block_params(shape, 1);
        let mut tape = Tape::new();
        let mut b = Binder::new(&p, false);
        let x = tape.constant(input([1, 8, 16, 16], 2));
        let y = transformer_block(&mut tape, &mut b, "blk", x, 2).unwrap();
        assert_eq!(tape.shape(y), &[1, 8, 16, 16]);
        assert!(tape.value(y).all_finite());
        assert_ne!(tape.value(y), tape.value(x));
    }

    #[test]
    fn zero_branches_make_identity() {
        let shape = BlockShape { channels: 4, heads: 2 };
        let specs = transformer_block_specs("blk", shape);
        let mut p = block_params(shape, 3);
        for s in &specs {
            if s.init == Init::Normal {
                p.insert(s.name.clone(), Tensor::zeros(s.shape.clone()));
            }
        }
        let mut tape = Tape::new();
        let mut b = Binder::new(&p, false);
        let x = tape.constant(input([2, 4, 6, 6], 4));
        let y = transformer_block(&mut tape, &mut b, "blk", x, 2).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
    }

    #[test]
    fn channel_mismatch_is_an_error() {
        let p = block_params(BlockShape { channels: 8, heads: 2 }, 1);
        let mut tape = Tape::new();
        let mut b = Binder::new(&p, false);
        let x = tape.constant(input([1, 4, 8, 8], 2));
        assert!(matches!(
            transformer_block(&mut tape, &mut b, "blk", x, 2),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(BlockShape { channels: 6, heads: 4 }.validate().is_err());
    }

    #[test]
    fn resample_contracts() {
        let mut specs = downsample_specs("down", 8);
        specs.extend(upsample_specs("up", 16));
        let p = ParamSet::init(&specs, 0, 0.1);
        let mut tape = Tape::new();
        let mut b = Binder::new(&p, false);
        let x = tape.constant(input([1, 8, 16, 16], 5));
        let d = downsample(&mut tape, &mut b, "down", x).unwrap();
        assert_eq!(tape.shape(d), &[1, 16, 8, 8]);
        let u = upsample(&mut tape, &mut b, "up", d).unwrap();
        assert_eq!(tape.shape(u), tape.shape(x));

        let odd = tape.constant(input([1, 8, 7, 8], 6));
        assert!(matches!(downsample(&mut tape, &mut b, "down", odd), Err(Error::OddExtent(7, 8))));
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let mut tape = Tape::<f32>::new();
        let q = tape.constant(input([1, 4, 3, 3], 7));
        let k = tape.constant(input([1, 4, 3, 3], 8));
        let q = split_heads(&mut tape, q, 2).unwrap();
        let k = split_heads(&mut tape, k, 2).unwrap();
        let l = tape.matmul_bt(q, k).unwrap();
        let a = tape.softmax(l, 3).unwrap();
        for row in tape.value(a).data().chunks(2) {
            let s: f32 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-5);
            assert!(row.iter().all(|&v| v > 0.0 && v <= 1.0));
        }
    }
}
