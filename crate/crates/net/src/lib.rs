//! Learning-from-demonstration model core: a convolutional autoencoder for
//! image feature compression, a multiple-timescale recurrent network with an
//! attention gate over its multimodal input, a BPTT trainer, and the
//! closed-loop rollout driver.

pub mod bptt;
pub mod cae;
pub mod checkpoint;
pub mod episode;
pub mod error;
pub mod frame;
pub mod mtrnn;
pub mod rng;
pub mod rollout;

pub use episode::{Dataset, Episode, EpisodeMeta, StepRecord};
pub use error::{NetError, Result};
pub use frame::{FeedbackRates, Modality, SensorimotorFrame, IO_WIDTH};
pub use mtrnn::{GateMode, GroupSpecs, MtrnnParams, MtrnnState};
pub use rollout::{EnvObservation, EnvironmentStream, RolloutConfig};
