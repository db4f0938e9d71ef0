//! End-to-end runs: diffusion generation with an embed hook, optional
//! vocoder round-trip, attacks, extraction and scoring.

use crate::attacks::{Attackable, Chain, CompositeSpec};
use crate::corpus::CorpusConfig;
use crate::diffusion::{sample, EmbedHook, GaussianDataModel, Schedule};
use crate::error::{Error, Result};
use crate::seed;
use crate::spectral::{griffin_lim, melspec, Spectrogram, Waveform};
use crate::verify::bit_accuracy;
use crate::watermark::{
    embed_in_spectrogram, embed_matrix, extract_from_spectrogram, extract_matrix, make_carriers, CarrierSet,
    ChipLayout, EmbedConfig, Extraction, WatermarkPayload,
};
use crate::wavelet::SubBand;

pub const DEFAULT_SIGMA_D: f64 = 0.3;
pub const DEFAULT_GL_ITERS: usize = 32;
pub const DEFAULT_BITS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub corpus: CorpusConfig,
    pub n_bits: usize,
    pub embed: EmbedConfig,
    pub layout: ChipLayout,
    /// Embed in a DWT sub-band (true) or directly in the spectrogram.
    pub use_dwt: bool,
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub sigma_d: f64,
    pub gl_iters: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let sched = Schedule::default();
        Self {
            corpus: CorpusConfig::default(),
            n_bits: DEFAULT_BITS,
            embed: EmbedConfig::default(),
            layout: ChipLayout::default(),
            use_dwt: true,
            steps: sched.steps(),
            beta_min: crate::diffusion::DEFAULT_BETA_MIN,
            beta_max: crate::diffusion::DEFAULT_BETA_MAX,
            sigma_d: DEFAULT_SIGMA_D,
            gl_iters: DEFAULT_GL_ITERS,
            seed: 7,
        }
    }
}

impl PipelineConfig {
    pub fn schedule(&self) -> Result<Schedule> {
        Schedule::new(self.steps, self.beta_min, self.beta_max)
    }

    pub fn validate(&self) -> Result<()> {
        self.embed.validate()?;
        self.schedule()?;
        self.corpus.mel.validate(self.corpus.sample_rate)?;
        if self.embed.embed_step > self.steps {
            return Err(Error::InvalidConfig(format!(
                "embed_step {} exceeds T={}",
                self.embed.embed_step, self.steps
            )));
        }
        if !(self.sigma_d >= 0.0 && self.sigma_d.is_finite()) {
            return Err(Error::InvalidConfig(format!("sigma_d must be >= 0, got {}", self.sigma_d)));
        }
        if self.gl_iters == 0 {
            return Err(Error::InvalidConfig("gl_iters must be >= 1".into()));
        }
        Ok(())
    }

    /// Shape of the matrix the carriers live on for a spectrogram of `shape`.
    pub fn target_shape(&self, shape: (usize, usize)) -> (usize, usize) {
        if self.use_dwt {
            (shape.0.div_ceil(2), shape.1.div_ceil(2))
        } else {
            shape
        }
    }

    pub fn carriers(&self, spec_shape: (usize, usize)) -> Result<CarrierSet> {
        make_carriers(self.embed.key, self.n_bits, self.target_shape(spec_shape), self.layout)
    }
}

/// Embeds `m` into `s` directly (no diffusion).
pub fn embed_direct(
    s: &Spectrogram<f64>,
    m: &WatermarkPayload,
    cfg: &PipelineConfig,
    carriers: &CarrierSet,
) -> Result<Spectrogram<f64>> {
    if cfg.use_dwt {
        embed_in_spectrogram(s, m, &cfg.embed, carriers)
    } else {
        cfg.embed.validate()?;
        let mut out = s.clone();
        embed_matrix(&mut out.data, m, cfg.embed.alpha, carriers)?;
        Ok(out)
    }
}

pub fn extract(s: &Spectrogram<f64>, cfg: &PipelineConfig, carriers: &CarrierSet) -> Result<Extraction> {
    let alpha = Some(cfg.embed.alpha);
    if cfg.use_dwt {
        extract_from_spectrogram(s, carriers, cfg.embed.subband, alpha)
    } else {
        extract_matrix(&s.data, carriers, alpha)
    }
}

/// Samples a spectrogram around `mu`, embedding `m` after `embed_step`
/// reverse steps when a payload is given.
pub fn generate(
    mu: &Spectrogram<f64>,
    m: Option<&WatermarkPayload>,
    cfg: &PipelineConfig,
    carriers: &CarrierSet,
    rng_seed: u64,
) -> Result<Spectrogram<f64>> {
    let model = GaussianDataModel {
        mu: mu.clone(),
        sigma_d: cfg.sigma_d,
    };
    let sched = cfg.schedule()?;
    let hook = m.map(|m| EmbedHook::new(cfg.embed.embed_step, move |x: &Spectrogram<f64>| embed_direct(x, m, cfg, carriers)));
    sample(&model, &sched, hook, &mut seed::rng(rng_seed))
}

/// Griffin-Lim resynthesis of a generated mel spectrogram.
pub fn vocode(s: &Spectrogram<f64>, cfg: &PipelineConfig, rng_seed: u64) -> Result<Waveform<f64>> {
    griffin_lim(s, &cfg.corpus.mel, cfg.corpus.sample_rate, cfg.gl_iters, rng_seed)
}

pub fn analyze(w: &Waveform<f64>, cfg: &PipelineConfig) -> Result<Spectrogram<f64>> {
    melspec(w, &cfg.corpus.mel)
}

/// Where attacks are applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    /// Directly on the generated spectrogram.
    Spectrogram,
    /// On the Griffin-Lim waveform, then re-analyzed.
    Waveform,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AttackPlan {
    None,
    Chain(Chain),
    Composite(CompositeSpec),
}

impl AttackPlan {
    pub fn apply<X: Attackable>(&self, x: &X, rng_seed: u64) -> Result<X> {
        match self {
            AttackPlan::None => Ok(x.attack_identity()),
            AttackPlan::Chain(c) => x.apply_chain(c, &mut seed::rng(rng_seed)),
            AttackPlan::Composite(cs) => crate::attacks::compose(x, cs),
        }
    }

    pub fn label(&self) -> String {
        match self {
            AttackPlan::None => "none".into(),
            AttackPlan::Chain(c) => c.to_string(),
            AttackPlan::Composite(cs) => Chain(cs.ordered()).to_string(),
        }
    }
}

/// A generated item ready for attack: the spectrogram, and its vocoded
/// waveform when the waveform channel is used.
#[derive(Debug, Clone)]
pub struct Generated {
    pub spec: Spectrogram<f64>,
    pub wave: Option<Waveform<f64>>,
}

impl Generated {
    pub fn new(spec: Spectrogram<f64>, channel: Channel, cfg: &PipelineConfig, rng_seed: u64) -> Result<Self> {
        let wave = match channel {
            Channel::Spectrogram => None,
            Channel::Waveform => Some(vocode(&spec, cfg, rng_seed)?),
        };
        Ok(Self { spec, wave })
    }

    /// The spectrogram the extractor sees after `plan`.
    pub fn attacked(&self, plan: &AttackPlan, cfg: &PipelineConfig, rng_seed: u64) -> Result<Spectrogram<f64>> {
        match &self.wave {
            None => plan.apply(&self.spec, rng_seed),
            Some(w) => analyze(&plan.apply(w, rng_seed)?, cfg),
        }
    }
}

/// Bit accuracy of one extraction against the embedded payload.
pub fn score(
    s: &Spectrogram<f64>,
    m: &WatermarkPayload,
    cfg: &PipelineConfig,
    carriers: &CarrierSet,
) -> Result<f64> {
    bit_accuracy(m, &extract(s, cfg, carriers)?.payload)
}

/// Per-item seeds derived from the root seed.
#[derive(Debug, Clone, Copy)]
pub struct ItemSeeds {
    pub payload: u64,
    pub diffusion: u64,
    pub vocoder: u64,
    pub attack: u64,
}

impl ItemSeeds {
    pub fn new(root: u64, stream: &str, index: usize) -> Self {
        let base = seed::indexed(seed::subseed(root, stream), index as u64);
        Self {
            payload: seed::indexed(base, 0),
            diffusion: seed::indexed(base, 1),
            vocoder: seed::indexed(base, 2),
            attack: seed::indexed(base, 3),
        }
    }

    pub fn payload(&self, n: usize) -> Result<WatermarkPayload> {
        WatermarkPayload::random(n, &mut seed::rng(self.payload))
    }
}

pub fn subband_config(cfg: &PipelineConfig, band: SubBand) -> PipelineConfig {
    let mut c = cfg.clone();
    c.embed.subband = band;
    c.use_dwt = true;
    c
}
