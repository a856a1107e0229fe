//! Catalog of per-op gradient checks: each entry builds its own random
//! inputs from the stream and runs the finite-difference oracle.

use tlp_core::rng::Stream;
use tlp_core::tensor::Elementwise;
use tlp_core::{Result, Tensor};

use super::{check, random_tensor, Report};

pub const OP_TOL: f64 = 1e-3;

pub struct OpCase {
    pub name: &'static str,
    pub check: fn(&mut Stream) -> Result<Report>,
}

crate::graph!(AddG, |t, v| t.add(v[0], v[1]));
crate::graph!(SubG, |t, v| t.sub(v[0], v[1]));
crate::graph!(MulG, |t, v| t.mul(v[0], v[1]));
crate::graph!(MaxG, |t, v| t.maximum(v[0], v[1]));
crate::graph!(MulScalarBroadcastG, |t, v| t.mul(v[0], v[1]));
crate::graph!(TanhG, |t, v| Ok(t.tanh(v[0])));
crate::graph!(GeluG, |t, v| Ok(t.gelu(v[0])));
crate::graph!(ReluG, |t, v| Ok(t.relu(v[0])));
crate::graph!(LeakyG, |t, v| Ok(t.leaky_relu(v[0], 0.2)));
crate::graph!(SquareG, |t, v| Ok(t.square(v[0])));
crate::graph!(AbsG, |t, v| Ok(t.abs(v[0])));
crate::graph!(ScalarOpsG, |t, v| {
    let a = t.add_scalar(v[0], 0.3);
    Ok(t.mul_scalar(a, -1.7))
});
crate::graph!(MatMulG, |t, v| t.matmul(v[0], v[1]));
crate::graph!(MatMulBtG, |t, v| t.matmul_bt(v[0], v[1]));
crate::graph!(ConvG, |t, v| t.conv2d(v[0], v[1], Some(v[2]), 1, 1));
crate::graph!(ConvStrideG, |t, v| t.conv2d(v[0], v[1], Some(v[2]), 2, 1));
crate::graph!(PointwiseG, |t, v| t.conv2d(v[0], v[1], None, 1, 0));
crate::graph!(DepthwiseG, |t, v| t.depthwise_conv2d(v[0], v[1]));
crate::graph!(SoftmaxG, |t, v| t.softmax(v[0], 1));
crate::graph!(ConcatG, |t, v| t.concat(&[v[0], v[1]], 1));
crate::graph!(SliceG, |t, v| t.slice(v[0], 2, 1, 2));
crate::graph!(ReshapeTransposeG, |t, v| {
    let r = t.reshape(v[0], [2, 6, 2])?;
    t.transpose(r)
});
crate::graph!(SumG, |t, v| {
    let sq = t.square(v[0]);
    Ok(t.sum(sq))
});
crate::graph!(MeanG, |t, v| {
    let sq = t.tanh(v[0]);
    Ok(t.mean(sq))
});
crate::graph!(ScaleAxisG, |t, v| t.scale_axis(v[0], v[1], 1));
crate::graph!(ChannelNormG, |t, v| t.channel_norm(v[0], v[1]));
crate::graph!(L2NormG, |t, v| t.l2_normalize(v[0]));
crate::graph!(UpsampleG, |t, v| t.upsample2(v[0]));
crate::graph!(PadG, |t, v| t.pad2d(v[0], 1));
crate::graph!(ConvReluSumG, |t, v| {
    let c = t.conv2d(v[0], v[1], None, 1, 1)?;
    let r = t.relu(c);
    Ok(t.sum(r))
});
crate::graph!(ElementwiseDispatchG, |t, v| {
    let m = t.elementwise(Elementwise::Max, v[0], Some(v[1]))?;
    t.elementwise(Elementwise::Gelu, m, None)
});

fn pair(s: &mut Stream, shape: &[usize], gap: f64) -> Vec<Tensor<f64>> {
    vec![random_tensor(shape, s, -1.0, 1.0, gap), random_tensor(shape, s, -1.0, 1.0, gap)]
}

fn one(s: &mut Stream, shape: &[usize], gap: f64) -> Vec<Tensor<f64>> {
    vec![random_tensor(shape, s, -2.0, 2.0, gap)]
}

fn u(s: &mut Stream, shape: &[usize]) -> Tensor<f64> {
    random_tensor(shape, s, -1.0, 1.0, 0.0)
}

/// Pushes `b` at least 0.25 away from `a` so perturbations never cross a tie.
fn apart(s: &mut Stream, n: usize) -> Vec<Tensor<f64>> {
    let a = u(s, &[n]);
    let b = Tensor::from_fn([n], |i| {
        let x = a.data()[i];
        if s.uniform() < 0.5 { x + 0.3 } else { x - 0.3 }
    });
    vec![a, b]
}

macro_rules! op {
    ($name:expr, $g:expr, |$s:ident| $inputs:expr, $wrt:expr) => {
        OpCase {
            name: $name,
            check: |$s| {
                let inputs = $inputs;
                check(&$g, &inputs, $wrt, 1.0, $s)
            },
        }
    };
}

pub fn catalog() -> Vec<OpCase> {
    vec![
        op!("add", AddG, |s| pair(s, &[3, 4], 0.0), &[0, 1]),
        op!("sub", SubG, |s| pair(s, &[3, 4], 0.0), &[0, 1]),
        op!("mul", MulG, |s| pair(s, &[3, 4], 0.0), &[0, 1]),
        op!("max", MaxG, |s| apart(s, 12), &[0, 1]),
        op!("mul-by-scalar", MulScalarBroadcastG, |s| vec![u(s, &[5]), Tensor::scalar(s.uniform_in(-2.0, 2.0) as f32 as f64)], &[0, 1]),
        op!("elementwise-dispatch", ElementwiseDispatchG, |s| apart(s, 6), &[0, 1]),
        op!("tanh", TanhG, |s| one(s, &[2, 5], 0.0), &[0]),
        op!("gelu", GeluG, |s| one(s, &[2, 5], 0.0), &[0]),
        op!("relu", ReluG, |s| one(s, &[2, 5], 0.05), &[0]),
        op!("leaky-relu", LeakyG, |s| one(s, &[2, 5], 0.05), &[0]),
        op!("square", SquareG, |s| one(s, &[2, 5], 0.0), &[0]),
        op!("abs", AbsG, |s| one(s, &[2, 5], 0.05), &[0]),
        op!("scalar-ops", ScalarOpsG, |s| one(s, &[4], 0.0), &[0]),
        op!("matmul", MatMulG, |s| pair(s, &[3, 3], 0.0), &[0, 1]),
        op!("matmul-batched", MatMulG, |s| vec![u(s, &[2, 3, 4]), u(s, &[2, 4, 2])], &[0, 1]),
        op!("matmul-bt", MatMulBtG, |s| vec![u(s, &[2, 3, 4]), u(s, &[2, 5, 4])], &[0, 1]),
        op!("conv", ConvG, |s| vec![u(s, &[1, 2, 5, 5]), u(s, &[3, 2, 3, 3]), u(s, &[3])], &[0, 1, 2]),
        op!("conv-stride2", ConvStrideG, |s| vec![u(s, &[1, 2, 5, 5]), u(s, &[3, 2, 3, 3]), u(s, &[3])], &[0, 1, 2]),
        op!("conv-1x1", PointwiseG, |s| vec![u(s, &[2, 3, 4, 4]), u(s, &[2, 3, 1, 1])], &[0, 1]),
        op!("depthwise", DepthwiseG, |s| vec![u(s, &[2, 3, 5, 4]), u(s, &[3, 1, 3, 3])], &[0, 1]),
        op!("conv-relu-sum", ConvReluSumG, |s| vec![u(s, &[1, 2, 5, 5]), u(s, &[2, 2, 3, 3])], &[0, 1]),
        op!("softmax", SoftmaxG, |s| one(s, &[2, 4, 3], 0.0), &[0]),
        op!("scale-axis", ScaleAxisG, |s| vec![u(s, &[2, 3, 4]), u(s, &[3])], &[0, 1]),
        op!("channel-norm", ChannelNormG, |s| vec![u(s, &[2, 4, 3, 3]), random_tensor(&[4], s, 0.5, 1.5, 0.0)], &[0, 1]),
        op!("l2-normalize", L2NormG, |s| one(s, &[3, 6], 0.0), &[0]),
        op!("concat", ConcatG, |s| vec![u(s, &[2, 2, 3]), u(s, &[2, 3, 3])], &[0, 1]),
        op!("slice", SliceG, |s| one(s, &[2, 3, 4], 0.0), &[0]),
        op!("reshape-transpose", ReshapeTransposeG, |s| one(s, &[4, 6], 0.0), &[0]),
        op!("sum", SumG, |s| one(s, &[3, 3], 0.0), &[0]),
        op!("mean", MeanG, |s| one(s, &[3, 3], 0.0), &[0]),
        op!("upsample", UpsampleG, |s| one(s, &[1, 2, 3, 3], 0.0), &[0]),
        op!("pad", PadG, |s| one(s, &[1, 2, 3, 3], 0.0), &[0]),
    ]
}

/// Stream seed for the `k`-th trial of an op.
pub fn trial_seed(k: u64) -> u64 {
    k * 7919 + 17
}
