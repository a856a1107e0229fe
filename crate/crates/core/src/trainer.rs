//! Adversarial training: Adam, the fixed-then-linear-decay schedule and the
//! alternating discriminator/generator steps.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::fpg::{generate_prompt, Mask, PromptConfig};
use crate::fsutil;
use crate::inference::{evaluate_cases, PromptMode};
use crate::model::{
    discriminator_forward, discriminator_loss, generator_forward, generator_loss, loss, BranchInputs, Checkpoint,
    DiscriminatorConfig, DiscriminatorState, GeneratorConfig, GeneratorState, LossConfig,
};
use crate::params::{Binder, ParamSet};
use crate::phantom::PhantomCase;
use crate::rng::{derive, Stream};
use crate::tensor::{Element, Tape, Tensor, Var};

const TAG_GEN: u64 = 0x67656e;
const TAG_DISC: u64 = 0x6469_7363;
const TAG_ORDER: u64 = 0x6f72_6465;
const TAG_PROMPT: u64 = 0x7072_6f6d;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lambda: f64,
    pub epochs_fixed: usize,
    pub epochs_decay: usize,
    pub batch_size: usize,
    /// FPG parameters; the seed is re-derived per epoch and case.
    pub fpg: PromptConfig,
    /// Both branches see the same prompt draw.
    pub shared_prompt: bool,
    pub seed: u64,
    /// Write `ckpt_<epoch>` every this many epochs (0: final only).
    pub checkpoint_every: usize,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
            lambda: 100.0,
            epochs_fixed: 8,
            epochs_decay: 8,
            batch_size: 1,
            fpg: PromptConfig::default(),
            shared_prompt: true,
            seed: 0,
            checkpoint_every: 4,
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn epochs(&self) -> usize {
        self.epochs_fixed + self.epochs_decay
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig { lambda: self.lambda }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { beta1: self.beta1, beta2: self.beta2, eps: self.eps }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 must be positive, got {}", self.lr0));
        }
        for (n, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{n} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.eps > 0.0) {
            return bad("eps must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        self.loss().validate()?;
        self.fpg.validate()?;
        self.generator.validate()?;
        self.discriminator.validate()
    }
}

/// `lr0` for the fixed epochs, then `lr0·(1 − (e − fixed + 1)/decay)`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    if epoch >= cfg.epochs() {
        return Err(Error::OutOfRange("epoch", format!("{epoch} ≥ {} scheduled epochs", cfg.epochs())));
    }
    if epoch < cfg.epochs_fixed {
        return Ok(cfg.lr0);
    }
    let k = (epoch - cfg.epochs_fixed + 1) as f64;
    Ok(cfg.lr0 * (1.0 - k / cfg.epochs_decay as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// First/second moments per parameter and the update count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: ParamSet,
    pub v: ParamSet,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros = || {
            let mut s = ParamSet::new();
            for (k, t) in params.iter() {
                s.insert(k, Tensor::zeros(t.shape().to_vec()));
            }
            s
        };
        Self { m: zeros(), v: zeros(), step: 0 }
    }
}

/// One bias-corrected Adam update of every parameter in `params`.
pub fn adam_step(params: &mut ParamSet, grads: &ParamSet, state: &mut AdamState, lr: f64, cfg: &AdamConfig) -> Result<()> {
    for (name, p) in params.iter() {
        let g = grads.get(name).ok_or_else(|| Error::ShapeMismatch(format!("no gradient for {name}")))?;
        if g.shape() != p.shape() || state.m.get(name).map(|m| m.shape()) != Some(p.shape()) {
            return Err(Error::ShapeMismatch(format!("adam buffers for {name} do not match {:?}", p.shape())));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
    for (name, p) in params.iter_mut() {
        let g = grads.get(name).expect("checked above").data();
        let m = state.m.get_mut(name).expect("checked above").data_mut();
        let v = state.v.get_mut(name).expect("checked above").data_mut();
        let pd = p.data_mut();
        for i in 0..pd.len() {
            let gi = g[i] as f64;
            let mi = b1 * m[i] as f64 + (1.0 - b1) * gi;
            let vi = b2 * v[i] as f64 + (1.0 - b2) * gi * gi;
            m[i] = mi as f32;
            v[i] = vi as f32;
            let upd = lr * (mi / c1) / ((vi / c2).sqrt() + cfg.eps);
            pd[i] = (pd[i] as f64 - upd) as f32;
        }
    }
    Ok(())
}

/// Mean losses over one epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub g_loss: f64,
    pub d_loss: f64,
    pub l1: f64,
    pub batches: usize,
}

/// One line of `log.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub g_loss: f64,
    pub d_loss: f64,
    pub l1: f64,
    pub val_psnr: Option<f64>,
    pub elapsed_s: f64,
}

/// A training batch: images stacked to `[B, 1, H, W]`.
struct Batch {
    x1: Tensor,
    x2: Tensor,
    y: Tensor,
    p1: Tensor,
    p2: Tensor,
}

fn stack(parts: &[&Tensor]) -> Result<Tensor> {
    let [_, c, h, w] = parts[0].dims4("batch image")?;
    let mut data = Vec::with_capacity(parts.len() * c * h * w);
    for t in parts {
        if t.dims4("batch image")? != [1, c, h, w] {
            return Err(Error::ShapeMismatch(format!("cannot batch {:?} with {:?}", t.shape(), parts[0].shape())));
        }
        data.extend_from_slice(t.data());
    }
    Tensor::new([parts.len(), c, h, w], data)
}

/// D objective on a detached fake: the generated image enters as a constant.
pub fn discriminator_objective<F: Element>(
    tape: &mut Tape<F>,
    db: &mut Binder<'_, F>,
    cfg: &DiscriminatorConfig,
    y_hat: &Tensor<F>,
    y: Var,
) -> Result<Var> {
    let fake = tape.constant(y_hat.clone());
    let d_fake = discriminator_forward(tape, db, cfg, fake)?;
    let d_real = discriminator_forward(tape, db, cfg, y)?;
    discriminator_loss(tape, d_fake, d_real)
}

/// Generator, discriminator and both optimizers.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub gen: GeneratorState,
    pub disc: DiscriminatorState,
    pub g_opt: AdamState,
    pub d_opt: AdamState,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let gen = GeneratorState::init(cfg.generator.clone(), derive(cfg.seed, &[TAG_GEN]))?;
        let disc = DiscriminatorState::init(cfg.discriminator.clone(), derive(cfg.seed, &[TAG_DISC]))?;
        let (g_opt, d_opt) = (AdamState::new(&gen.params), AdamState::new(&disc.params));
        Ok(Self { cfg, gen, disc, g_opt, d_opt })
    }

    /// Prompt pair for a case in an epoch: FPG of its lesion mask, drawn from
    /// a seed derived from (seed, epoch, case index).
    pub fn prompts(&self, epoch: usize, case: &PhantomCase) -> Result<(Mask, Mask)> {
        let base = derive(self.cfg.seed, &[TAG_PROMPT, epoch as u64, case.index as u64]);
        let p1 = generate_prompt(&case.lesion, &self.cfg.fpg.with_seed(derive(base, &[1])))?;
        let p2 = if self.cfg.shared_prompt {
            p1.clone()
        } else {
            generate_prompt(&case.lesion, &self.cfg.fpg.with_seed(derive(base, &[2])))?
        };
        Ok((p1, p2))
    }

    fn batch(&self, epoch: usize, cases: &[&PhantomCase]) -> Result<Batch> {
        let mut p1 = Vec::new();
        let mut p2 = Vec::new();
        for c in cases {
            let (a, b) = self.prompts(epoch, c)?;
            p1.push(a.to_tensor());
            p2.push(b.to_tensor());
        }
        Ok(Batch {
            x1: stack(&cases.iter().map(|c| &c.x1).collect::<Vec<_>>())?,
            x2: stack(&cases.iter().map(|c| &c.x2).collect::<Vec<_>>())?,
            y: stack(&cases.iter().map(|c| &c.y).collect::<Vec<_>>())?,
            p1: stack(&p1.iter().collect::<Vec<_>>())?,
            p2: stack(&p2.iter().collect::<Vec<_>>())?,
        })
    }

    /// Case visiting order for an epoch.
    pub fn order(&self, epoch: usize, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        Stream::new(derive(self.cfg.seed, &[TAG_ORDER, epoch as u64])).shuffle(&mut idx);
        idx
    }

    /// One D step then one G step. Returns (g_loss, d_loss, l1).
    fn step(&mut self, batch: &Batch, lr: f64) -> Result<(f64, f64, f64)> {
        let gcfg = self.gen.config.clone();
        let dcfg = self.disc.config.clone();
        let adam = self.cfg.adam();

        let mut tape = Tape::new();
        let mut gb = Binder::new(&self.gen.params, true);
        let x1 = tape.constant(batch.x1.clone());
        let x2 = (!gcfg.single_input).then(|| tape.constant(batch.x2.clone()));
        let prompt = tape.constant(batch.p1.clone());
        let prompt2 = (!gcfg.single_input && !self.cfg.shared_prompt).then(|| tape.constant(batch.p2.clone()));
        let y = tape.constant(batch.y.clone());
        let y_hat = generator_forward(&mut tape, &mut gb, &gcfg, BranchInputs { x1, x2, prompt, prompt2 })?;

        let d_loss = {
            let mut dtape = Tape::new();
            let mut db = Binder::new(&self.disc.params, true);
            let yv = dtape.constant(batch.y.clone());
            let l = discriminator_objective(&mut dtape, &mut db, &dcfg, tape.value(y_hat), yv)?;
            let lv = dtape.value(l).item()? as f64;
            if !lv.is_finite() {
                return Err(Error::NanDetected(format!("discriminator loss {lv}")));
            }
            dtape.backward(l)?;
            let grads = db.grads(&dtape);
            adam_step(&mut self.disc.params, &grads, &mut self.d_opt, lr, &adam)?;
            lv
        };
        self.disc.params.check_finite()?;

        let mut db = Binder::new(&self.disc.params, false);
        let d_fake = discriminator_forward(&mut tape, &mut db, &dcfg, y_hat)?;
        let g = generator_loss(&mut tape, d_fake, y_hat, y, &self.cfg.loss())?;
        let gv = tape.value(g).item()? as f64;
        if !gv.is_finite() {
            return Err(Error::NanDetected(format!("generator loss {gv}")));
        }
        let l1 = loss::l1(&mut tape, y_hat, y)?;
        let l1v = tape.value(l1).item()? as f64;
        tape.backward(g)?;
        let grads = gb.grads(&tape);
        drop(gb);
        adam_step(&mut self.gen.params, &grads, &mut self.g_opt, lr, &adam)?;
        self.gen.params.check_finite()?;
        Ok((gv, d_loss, l1v))
    }

    pub fn train_epoch(&mut self, epoch: usize, cases: &[PhantomCase]) -> Result<EpochReport> {
        if cases.is_empty() {
            return Err(Error::InvalidConfig("training split is empty".into()));
        }
        let lr = lr_at(epoch, &self.cfg)?;
        let order = self.order(epoch, cases.len());
        let (mut g, mut d, mut l1, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for chunk in order.chunks(self.cfg.batch_size) {
            let picked: Vec<&PhantomCase> = chunk.iter().map(|&i| &cases[i]).collect();
            let batch = self.batch(epoch, &picked)?;
            let (gl, dl, ll) = self
                .step(&batch, lr)
                .map_err(|e| match e {
                    Error::NanDetected(m) => Error::NanDetected(format!(
                        "{m} (epoch {epoch}, batch {batches}, cases {:?})",
                        picked.iter().map(|c| c.id.as_str()).collect::<Vec<_>>()
                    )),
                    other => other,
                })?;
            g += gl;
            d += dl;
            l1 += ll;
            batches += 1;
        }
        let n = batches as f64;
        Ok(EpochReport { g_loss: g / n, d_loss: d / n, l1: l1 / n, batches })
    }

    pub fn checkpoint(&self, epoch: usize) -> Checkpoint {
        Checkpoint {
            generator: self.gen.clone(),
            discriminator: Some(self.disc.clone()),
            meta: serde_json::json!({ "epoch": epoch, "train": self.cfg }),
        }
    }
}

/// Files produced by [`train`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub final_checkpoint: PathBuf,
    pub logs: Vec<EpochLog>,
}

pub const FINAL_CHECKPOINT: &str = "ckpt_final.tlpckpt";

/// Full run into `out`: `config.json`, `log.jsonl`, periodic
/// `ckpt_<epoch>.tlpckpt` (1-based epochs) and `ckpt_final.tlpckpt`.
pub fn train(cfg: &TrainConfig, ds: &Dataset, out: &Path, mut progress: impl FnMut(&EpochLog)) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(cfg.clone())?;
    let train_cases = ds.load_split(Split::Train)?;
    let val_cases = ds.load_split(Split::Val)?;
    let res = ds.manifest.spec.resolution;
    if res % cfg.generator.divisor() != 0 {
        return Err(Error::NonDivisibleExtent { height: res, width: res, divisor: cfg.generator.divisor() });
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    fsutil::write_json(
        &out.join("config.json"),
        &serde_json::json!({ "train": cfg, "data": ds.root, "phantom": ds.manifest.spec }),
    )?;
    let started = std::time::Instant::now();
    let mut logs = Vec::new();
    let mut log_text = String::new();
    for epoch in 0..cfg.epochs() {
        let lr = lr_at(epoch, cfg)?;
        let rep = trainer.train_epoch(epoch, &train_cases)?;
        let val_psnr = if val_cases.is_empty() {
            None
        } else {
            Some(evaluate_cases(&trainer.gen, &val_cases, &PromptMode::None, "val", "val")?.psnr_db.mean)
        };
        let log = EpochLog {
            epoch,
            lr,
            g_loss: rep.g_loss,
            d_loss: rep.d_loss,
            l1: rep.l1,
            val_psnr,
            elapsed_s: started.elapsed().as_secs_f64(),
        };
        log_text.push_str(&serde_json::to_string(&log)?);
        log_text.push('\n');
        fsutil::write_atomic(&out.join("log.jsonl"), log_text.as_bytes())?;
        progress(&log);
        logs.push(log);
        if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 {
            trainer.checkpoint(epoch + 1).save(&out.join(format!("ckpt_{}.tlpckpt", epoch + 1)))?;
        }
    }
    let final_checkpoint = out.join(FINAL_CHECKPOINT);
    trainer.checkpoint(cfg.epochs()).save(&final_checkpoint)?;
    let _ = std::io::stderr().flush();
    Ok(TrainOutcome { final_checkpoint, logs })
}
