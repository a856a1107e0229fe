//! Least-squares adversarial objective with an L1 pixel term, split into the
//! generator and discriminator halves:
//!
//! * generator: `mean((D(ŷ) − 1)²) + λ·mean(|ŷ − y|)`
//! * discriminator: `mean(D(ŷ)²) + mean((D(y) − 1)²)`

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { lambda: 100.0 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!("lambda must be ≥ 0, got {}", self.lambda)));
        }
        Ok(())
    }
}

fn same_shape<F: Element>(tape: &Tape<F>, a: Var, b: Var, what: &str) -> Result<()> {
    if tape.shape(a) != tape.shape(b) {
        return Err(Error::ShapeMismatch(format!(
            "{what}: {:?} vs {:?}",
            tape.shape(a),
            tape.shape(b)
        )));
    }
    Ok(())
}

/// `mean((x − target)²)`.
pub fn mean_squared_from<F: Element>(tape: &mut Tape<F>, x: Var, target: f64) -> Var {
    let d = tape.add_scalar(x, -target);
    let sq = tape.square(d);
    tape.mean(sq)
}

pub fn l1<F: Element>(tape: &mut Tape<F>, y_hat: Var, y: Var) -> Result<Var> {
    same_shape(tape, y_hat, y, "pixel loss")?;
    let d = tape.sub(y_hat, y)?;
    let a = tape.abs(d);
    Ok(tape.mean(a))
}

pub fn generator_loss<F: Element>(tape: &mut Tape<F>, d_fake: Var, y_hat: Var, y: Var, cfg: &LossConfig) -> Result<Var> {
    cfg.validate()?;
    let adv = mean_squared_from(tape, d_fake, 1.0);
    let pix = l1(tape, y_hat, y)?;
    let pix = tape.mul_scalar(pix, cfg.lambda);
    tape.add(adv, pix)
}

pub fn discriminator_loss<F: Element>(tape: &mut Tape<F>, d_fake: Var, d_real: Var) -> Result<Var> {
    same_shape(tape, d_fake, d_real, "discriminator loss")?;
    let fake = mean_squared_from(tape, d_fake, 0.0);
    let real = mean_squared_from(tape, d_real, 1.0);
    tape.add(fake, real)
}

/// Generator loss of plain tensors, evaluated in double precision.
pub fn generator_loss_value(d_fake: &Tensor, y_hat: &Tensor, y: &Tensor, cfg: &LossConfig) -> Result<f64> {
    let mut tape = Tape::<f64>::new();
    let (a, b, c) = (tape.constant(d_fake.cast()), tape.constant(y_hat.cast()), tape.constant(y.cast()));
    let l = generator_loss(&mut tape, a, b, c, cfg)?;
    tape.value(l).item()
}

/// Discriminator loss of plain tensors, evaluated in double precision.
pub fn discriminator_loss_value(d_fake: &Tensor, d_real: &Tensor) -> Result<f64> {
    let mut tape = Tape::<f64>::new();
    let (a, b) = (tape.constant(d_fake.cast()), tape.constant(d_real.cast()));
    let l = discriminator_loss(&mut tape, a, b)?;
    tape.value(l).item()
}
