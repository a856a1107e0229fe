use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn;
use crate::params::{Binder, ParamSet, ParamSpec};
use crate::tensor::{Element, Tape, Var};

const KERNEL: usize = 4;
const SLOPE: f64 = 0.2;

/// Unconditional PatchGAN: `layers` stride-2 4×4 convolutions, a stride-1
/// convolution, then a stride-1 convolution to one raw score per patch
/// (no sigmoid; the objective is least squares). LeakyReLU(0.2) between
/// convolutions, no normalization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub base_channels: usize,
    pub layers: usize,
    pub init_std: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self { base_channels: 16, layers: 3, init_std: 0.02 }
    }
}

impl DiscriminatorConfig {
    fn widths(&self) -> Vec<usize> {
        // input, then base·2^i capped at 8·base
        let mut w = vec![1];
        for i in 0..=self.layers {
            w.push(self.base_channels << i.min(3));
        }
        w.push(1);
        w
    }

    fn strides(&self) -> Vec<usize> {
        let mut s = vec![2; self.layers];
        s.extend([1, 1]);
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.base_channels == 0 {
            return Err(Error::InvalidConfig("discriminator needs layers ≥ 1 and channels ≥ 1".into()));
        }
        Ok(())
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let w = self.widths();
        (0..w.len() - 1)
            .flat_map(|i| nn::conv_specs(&format!("d.c{i}"), w[i + 1], w[i], KERNEL, true))
            .collect()
    }

    /// Score-map extent for an input extent (padding 1 on every layer).
    pub fn output_extent(&self, extent: usize) -> Option<usize> {
        self.strides().iter().try_fold(extent, |e, &s| {
            let padded = e + 2;
            (padded >= KERNEL).then(|| (padded - KERNEL) / s + 1)
        })
    }
}

pub fn discriminator_forward<F: Element>(tape: &mut Tape<F>, b: &mut Binder<'_, F>, cfg: &DiscriminatorConfig, y: Var) -> Result<Var> {
    let dims = tape.value(y).dims4("discriminator input")?;
    if dims[1] != 1 {
        return Err(Error::ShapeMismatch(format!("discriminator expects one channel, got {dims:?}")));
    }
    let strides = cfg.strides();
    let mut h = y;
    for (i, &s) in strides.iter().enumerate() {
        h = nn::conv(tape, b, &format!("d.c{i}"), h, s, 1)?;
        if i + 1 < strides.len() {
            h = tape.leaky_relu(h, SLOPE);
        }
    }
    Ok(h)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorState {
    pub config: DiscriminatorConfig,
    pub params: ParamSet,
}

impl DiscriminatorState {
    pub fn init(config: DiscriminatorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = ParamSet::init(&config.param_specs(), seed, config.init_std);
        Ok(Self { config, params })
    }

    pub fn from_params(config: DiscriminatorConfig, params: ParamSet) -> Result<Self> {
        config.validate()?;
        params.validate(&config.param_specs())?;
        Ok(Self { config, params })
    }
}
