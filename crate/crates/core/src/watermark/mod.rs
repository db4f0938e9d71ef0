//! Payloads, keyed carriers, spread-spectrum embedding/extraction in a DWT
//! sub-band, and the small trainable embedder/extractor.

mod carriers;
mod loss;
mod payload;
mod spread;
pub mod tiny;

pub use carriers::{make_carriers, Carrier, CarrierSet, ChipLayout, MAX_ATTEMPTS, MAX_CROSS_CORRELATION};
pub use loss::{loss_emb, loss_ext, BCE_CLAMP};
pub use payload::WatermarkPayload;
pub use spread::{
    embed_in_spectrogram, embed_matrix, embed_ss, extract_from_spectrogram, extract_matrix, extract_ss,
    spread_pattern, EmbedConfig, Extraction, DEFAULT_ALPHA, DEFAULT_EMBED_STEP,
};
