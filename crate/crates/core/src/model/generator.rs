use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion;
use crate::nn::{self, BlockShape};
use crate::params::{Binder, ParamSet, ParamSpec};
use crate::tensor::{Element, Tape, Tensor, Var};

/// Channels fed to each branch: the image and its prompt mask.
pub const INPUT_CHANNELS_PER_BRANCH: usize = 2;

/// Architecture of the dual-branch encoder–decoder generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub base_channels: usize,
    /// Number of downsampling stages.
    pub levels: usize,
    /// Transformer blocks per encoder level, bottleneck last (`levels + 1`).
    pub encoder_blocks: Vec<usize>,
    /// Transformer blocks per decoder level, finest first (`levels`).
    pub decoder_blocks: Vec<usize>,
    /// Attention heads per level, finest first (`levels + 1`).
    pub heads: Vec<usize>,
    /// Only the first branch exists; both fusions become identities.
    pub single_input: bool,
    pub init_std: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self::with_levels(2)
    }
}

impl GeneratorConfig {
    /// Defaults for a given depth: two blocks everywhere, heads 1, 2, 4, …
    pub fn with_levels(levels: usize) -> Self {
        Self {
            base_channels: 16,
            levels,
            encoder_blocks: vec![2; levels + 1],
            decoder_blocks: vec![2; levels],
            heads: (0..=levels).map(|l| 1 << l.min(3)).collect(),
            single_input: false,
            init_std: 0.02,
        }
    }

    pub fn channels_at(&self, level: usize) -> usize {
        self.base_channels << level
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.levels == 0 {
            return bad("levels must be at least 1".into());
        }
        if self.base_channels == 0 {
            return bad("base_channels must be positive".into());
        }
        if self.encoder_blocks.len() != self.levels + 1 || self.heads.len() != self.levels + 1 {
            return bad(format!("encoder_blocks and heads need {} entries", self.levels + 1));
        }
        if self.decoder_blocks.len() != self.levels {
            return bad(format!("decoder_blocks needs {} entries", self.levels));
        }
        for l in 0..=self.levels {
            BlockShape { channels: self.channels_at(l), heads: self.heads[l] }.validate()?;
        }
        Ok(())
    }

    /// Spatial extents must be divisible by this.
    pub fn divisor(&self) -> usize {
        1 << self.levels
    }

    fn branches(&self) -> &'static [&'static str] {
        if self.single_input {
            &["b1"]
        } else {
            &["b1", "b2"]
        }
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut v = Vec::new();
        let c0 = self.base_channels;
        for br in self.branches() {
            v.extend(nn::conv_specs(&format!("{br}.embed"), c0, INPUT_CHANNELS_PER_BRANCH, 3, true));
            for l in 0..=self.levels {
                let shape = BlockShape { channels: self.channels_at(l), heads: self.heads[l] };
                for j in 0..self.encoder_blocks[l] {
                    v.extend(nn::transformer_block_specs(&format!("{br}.enc{l}.blk{j}"), shape));
                }
                if l < self.levels {
                    v.extend(nn::downsample_specs(&format!("{br}.down{l}"), self.channels_at(l)));
                }
            }
        }
        if !self.single_input {
            for l in 0..self.levels {
                v.extend(fusion::local_fusion_specs(&format!("lf{l}"), self.channels_at(l)));
            }
            let cb = self.channels_at(self.levels);
            v.extend(fusion::global_fusion_specs("gf", cb));
            v.extend(fusion::local_fusion_specs("lf_gf", cb));
        }
        for l in (0..self.levels).rev() {
            let c = self.channels_at(l);
            v.extend(nn::upsample_specs(&format!("dec{l}.up"), 2 * c));
            v.extend(nn::conv_specs(&format!("dec{l}.reduce"), c, 2 * c, 1, false));
            let shape = BlockShape { channels: c, heads: self.heads[l] };
            for j in 0..self.decoder_blocks[l] {
                v.extend(nn::transformer_block_specs(&format!("dec{l}.blk{j}"), shape));
            }
        }
        v.extend(nn::conv_specs("out", 1, c0, 3, true));
        v
    }
}

/// Graph inputs for one generator pass. `prompt2` overrides the second
/// branch's prompt; by default both branches see `prompt`.
#[derive(Clone, Copy, Debug)]
pub struct BranchInputs {
    pub x1: Var,
    pub x2: Option<Var>,
    pub prompt: Var,
    pub prompt2: Option<Var>,
}

fn check_image<F: Element>(tape: &Tape<F>, v: Var, what: &str, cfg: &GeneratorConfig) -> Result<[usize; 4]> {
    let dims = tape.value(v).dims4(what)?;
    if dims[1] != 1 {
        return Err(Error::ShapeMismatch(format!("{what} must have one channel, got {:?}", dims)));
    }
    let d = cfg.divisor();
    if dims[2] % d != 0 || dims[3] % d != 0 {
        return Err(Error::NonDivisibleExtent { height: dims[2], width: dims[3], divisor: d });
    }
    Ok(dims)
}

fn check_prompt<F: Element>(tape: &Tape<F>, v: Var, dims: [usize; 4]) -> Result<()> {
    if tape.shape(v) != dims {
        return Err(Error::ShapeMismatch(format!("prompt {:?} for images {dims:?}", tape.shape(v))));
    }
    if tape.value(v).data().iter().any(|&p| p != F::zero() && p != F::one()) {
        return Err(Error::InvalidConfig("prompt values must be 0 or 1".into()));
    }
    Ok(())
}

/// One branch encoder: embed, then per level Transformer blocks and
/// downsampling. Returns the per-level features, bottleneck last.
fn encode<F: Element>(tape: &mut Tape<F>, b: &mut Binder<'_, F>, cfg: &GeneratorConfig, br: &str, image: Var, prompt: Var) -> Result<Vec<Var>> {
    let x = tape.concat(&[image, prompt], 1)?;
    let mut h = nn::conv(tape, b, &format!("{br}.embed"), x, 1, 1)?;
    let mut feats = Vec::with_capacity(cfg.levels + 1);
    for l in 0..=cfg.levels {
        for j in 0..cfg.encoder_blocks[l] {
            h = nn::transformer_block(tape, b, &format!("{br}.enc{l}.blk{j}"), h, cfg.heads[l])?;
        }
        feats.push(h);
        if l < cfg.levels {
            h = nn::downsample(tape, b, &format!("{br}.down{l}"), h)?;
        }
    }
    Ok(feats)
}

/// Full generator pass; output `[B, 1, H, W]` in (−1, 1).
///
/// Each branch embeds `concat(image, prompt)` and runs its encoder. Skip
/// features are local-fused per level, the bottleneck features are
/// global-fused then local-fused, and a decoder with skip connections
/// upsamples back to full resolution before a tanh head. In single-input
/// mode the fusions are identities over the first branch.
pub fn generator_forward<F: Element>(tape: &mut Tape<F>, b: &mut Binder<'_, F>, cfg: &GeneratorConfig, inputs: BranchInputs) -> Result<Var> {
    let dims = check_image(tape, inputs.x1, "x1", cfg)?;
    check_prompt(tape, inputs.prompt, dims)?;
    let f1 = encode(tape, b, cfg, "b1", inputs.x1, inputs.prompt)?;
    let (skips, mut h) = if cfg.single_input {
        if inputs.x2.is_some() {
            return Err(Error::InvalidConfig("single-input generator given a second image".into()));
        }
        (f1[..cfg.levels].to_vec(), f1[cfg.levels])
    } else {
        let x2 = inputs
            .x2
            .ok_or_else(|| Error::InvalidConfig("dual-input generator needs x2".into()))?;
        if check_image(tape, x2, "x2", cfg)? != dims {
            return Err(Error::ShapeMismatch(format!("x2 {:?} vs x1 {dims:?}", tape.shape(x2))));
        }
        let p2 = inputs.prompt2.unwrap_or(inputs.prompt);
        check_prompt(tape, p2, dims)?;
        let f2 = encode(tape, b, cfg, "b2", x2, p2)?;
        let mut skips = Vec::with_capacity(cfg.levels);
        for l in 0..cfg.levels {
            skips.push(fusion::local_fusion(tape, b, &format!("lf{l}"), f1[l], f2[l])?);
        }
        let (g1, g2) = fusion::global_fusion(tape, b, "gf", f1[cfg.levels], f2[cfg.levels], cfg.heads[cfg.levels])?;
        (skips, fusion::local_fusion(tape, b, "lf_gf", g1, g2)?)
    };
    for l in (0..cfg.levels).rev() {
        let up = nn::upsample(tape, b, &format!("dec{l}.up"), h)?;
        let cat = tape.concat(&[up, skips[l]], 1)?;
        h = nn::conv(tape, b, &format!("dec{l}.reduce"), cat, 1, 0)?;
        for j in 0..cfg.decoder_blocks[l] {
            h = nn::transformer_block(tape, b, &format!("dec{l}.blk{j}"), h, cfg.heads[l])?;
        }
    }
    let out = nn::conv(tape, b, "out", h, 1, 1)?;
    Ok(tape.tanh(out))
}

/// Generator parameters together with the configuration they belong to.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorState {
    pub config: GeneratorConfig,
    pub params: ParamSet,
}

/// Plain-tensor inputs for inference. A missing prompt means "no prompt"
/// (an all-zero prompt channel).
#[derive(Clone, Debug)]
pub struct SynthesisInput {
    pub x1: Tensor,
    pub x2: Option<Tensor>,
    pub prompt: Option<Tensor>,
    pub prompt2: Option<Tensor>,
}

impl GeneratorState {
    pub fn init(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = ParamSet::init(&config.param_specs(), seed, config.init_std);
        Ok(Self { config, params })
    }

    pub fn from_params(config: GeneratorConfig, params: ParamSet) -> Result<Self> {
        config.validate()?;
        params.validate(&config.param_specs())?;
        Ok(Self { config, params })
    }

    /// Runs the generator without recording gradients for the parameters.
    /// For single-input models `x2` is ignored.
    pub fn synthesize(&self, input: &SynthesisInput) -> Result<Tensor> {
        let mut tape = Tape::new();
        let mut b = Binder::new(&self.params, false);
        let x1 = tape.constant(input.x1.clone());
        let zeros = || Tensor::zeros(input.x1.shape().to_vec());
        let prompt = tape.constant(input.prompt.clone().unwrap_or_else(zeros));
        let x2 = match (&input.x2, self.config.single_input) {
            (_, true) => None,
            (Some(x2), false) => Some(tape.constant(x2.clone())),
            (None, false) => return Err(Error::InvalidConfig("dual-input generator needs x2".into())),
        };
        let prompt2 = match (&input.prompt2, self.config.single_input) {
            (Some(p), false) => Some(tape.constant(p.clone())),
            _ => None,
        };
        let out = generator_forward(&mut tape, &mut b, &self.config, BranchInputs { x1, x2, prompt, prompt2 })?;
        Ok(tape.value(out).clone())
    }
}
