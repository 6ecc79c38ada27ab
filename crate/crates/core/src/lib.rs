//! Training-free image conditioning for text-to-video diffusion sampling.
//!
//! Condition images are inverted into the sampler's noise levels, written
//! into the video latent at their target frames, and spread to neighbouring
//! frames by random patch swapping whose strength decays with distance. The
//! noise network sits behind [`estimator::NoiseEstimator`], with in-process
//! oracle and dummy implementations and a remote client speaking a small
//! binary protocol.

pub mod codec;
pub mod conditioning;
pub mod engine;
pub mod error;
pub mod estimator;
pub mod io;
pub mod remote;
pub mod rng;
pub mod schedule;
pub mod tensor;
pub mod wire;

pub use codec::{Codec, CodecKind, Raster};
pub use conditioning::{SwapMask, SwapSchedule, WindowDirection};
pub use engine::{run_flexti2v, ConditionSet, EngineConfig, RunOutput};
pub use error::{Error, Result};
pub use estimator::{DummyEstimator, NoiseEstimator, OracleEstimator, PromptSpec};
pub use remote::{Endpoint, RemoteEstimator};
pub use schedule::{NoiseSchedule, TimestepMap};
pub use tensor::{Dims, LatentFrame, LatentVideo};
