//! Conditional diffusion over item embeddings.

mod embedding;
mod film;
mod process;
mod schedule;

pub use embedding::{timestep_embedding, TimeEmbedding};
pub use film::{Dense, FilmOptimizer, FilmPredictor, Mlp};
pub use process::{
    accumulate_diffusion_grads, diffusion_loss_and_grads, forward_noise, noise_with, reverse_chain,
    reverse_step, ChainOptions, ChainSampler, DiffusionGrads, NoisedSample,
};
pub use schedule::{default_beta_end, DiffusionSchedule, ScheduleKind, DEFAULT_BETA_START};
