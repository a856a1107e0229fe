//! Generator, discriminator, objective and checkpoints.

pub mod checkpoint;
mod discriminator;
mod generator;
pub mod loss;

pub use checkpoint::Checkpoint;
pub use discriminator::{discriminator_forward, DiscriminatorConfig, DiscriminatorState};
pub use generator::{generator_forward, BranchInputs, GeneratorConfig, GeneratorState, SynthesisInput, INPUT_CHANNELS_PER_BRANCH};
pub use loss::{discriminator_loss, generator_loss, LossConfig};
