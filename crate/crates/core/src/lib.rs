pub mod ablation;
pub mod attacks;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod diffusion;
pub mod error;
pub mod scalar;
pub mod pipeline;
pub mod seed;
pub mod verify;
pub mod spectral;
pub mod watermark;
pub mod wavelet;

pub use error::{Error, Result};
pub use scalar::Real;

pub use attacks::{AttackSpec, Attackable, Chain, CompositeSpec};
pub use pipeline::PipelineConfig;
pub use verify::{binom_tail, solve_threshold, verify, Decision, VerificationReport};
pub use watermark::WatermarkPayload;

pub type Spectrogram = spectral::Spectrogram<f64>;
pub type Waveform = spectral::Waveform<f64>;
pub type SubBands = wavelet::SubBands<f64>;
pub type CorpusItem = corpus::CorpusItem<f64>;
pub type Spectrogram32 = spectral::Spectrogram<f32>;
pub type Waveform32 = spectral::Waveform<f32>;
pub type SubBands32 = wavelet::SubBands<f32>;
