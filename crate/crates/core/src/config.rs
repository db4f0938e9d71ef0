//! Flat `key = value` run configuration with `#` comments. Command-line flags
//! are applied on top through the same [`RunConfig::set`].

use std::path::{Path, PathBuf};

use crate::attacks::Chain;
use crate::error::{Error, Result};
use crate::pipeline::{Channel, PipelineConfig};
use crate::verify::DEFAULT_FPR;
use crate::watermark::tiny::TrainConfig;

/// How `embed` places the watermark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EmbedMode {
    /// Straight into the input spectrogram.
    #[default]
    Direct,
    /// Inside a diffusion run whose data mean is the input spectrogram.
    Diffusion,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub pipeline: PipelineConfig,
    pub train: TrainConfig,
    pub tiny_alpha: (f64, f64),
    pub chain: Chain,
    pub channel: Channel,
    pub fpr: f64,
    pub mode: EmbedMode,
    pub payload: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    /// Step between timesteps in the timestep ablation (endpoints always kept).
    pub timestep_stride: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            pipeline: PipelineConfig::default(),
            train: TrainConfig::default(),
            tiny_alpha: (0.05, 0.3),
            chain: Chain::default(),
            channel: Channel::Spectrogram,
            fpr: DEFAULT_FPR,
            mode: EmbedMode::Direct,
            payload: None,
            out_dir: None,
            timestep_stride: 5,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("cannot parse {key} = {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::InvalidConfig(format!("{key} expects true/false, got {value:?}"))),
    }
}

fn parse_pair(key: &str, value: &str) -> Result<(f64, f64)> {
    let (a, b) = value
        .split_once(',')
        .ok_or_else(|| Error::InvalidConfig(format!("{key} expects two comma-separated numbers")))?;
    Ok((parse(key, a.trim())?, parse(key, b.trim())?))
}

fn parse_u64(key: &str, value: &str) -> Result<u64> {
    match value.strip_prefix("0x") {
        Some(hex) => u64::from_str_radix(hex, 16).map_err(|_| Error::InvalidConfig(format!("cannot parse {key} = {value:?}"))),
        None => parse(key, value),
    }
}

impl RunConfig {
    pub const KEYS: &'static [&'static str] = &[
        "seed", "key", "bits", "alpha", "subband", "embed_step", "layout", "use_dwt", "steps", "beta_min", "beta_max",
        "sigma_d", "gl_iters", "sample_rate", "n_fft", "hop", "n_mels", "fmin", "fmax", "frames", "items", "chain",
        "channel", "fpr", "mode", "payload", "out_dir", "timestep_stride", "lr", "lambda_tts", "lambda_emb",
        "lambda_ext", "train_steps", "batch_size", "alpha_anneal", "ext_ramp", "tiny_alpha",
    ];

    /// Sets one key. Unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let p = &mut self.pipeline;
        let v = value.trim();
        match key {
            "seed" => {
                p.seed = parse_u64(key, v)?;
                p.corpus.seed = p.seed;
            }
            "key" => p.embed.key = parse_u64(key, v)?,
            "bits" => p.n_bits = parse(key, v)?,
            "alpha" => p.embed.alpha = parse(key, v)?,
            "subband" => p.embed.subband = v.parse()?,
            "embed_step" => p.embed.embed_step = parse(key, v)?,
            "layout" => p.layout = v.parse()?,
            "use_dwt" => p.use_dwt = parse_bool(key, v)?,
            "steps" => p.steps = parse(key, v)?,
            "beta_min" => p.beta_min = parse(key, v)?,
            "beta_max" => p.beta_max = parse(key, v)?,
            "sigma_d" => p.sigma_d = parse(key, v)?,
            "gl_iters" => p.gl_iters = parse(key, v)?,
            "sample_rate" => p.corpus.sample_rate = parse(key, v)?,
            "n_fft" => p.corpus.mel.n_fft = parse(key, v)?,
            "hop" => p.corpus.mel.hop = parse(key, v)?,
            "n_mels" => p.corpus.mel.n_mels = parse(key, v)?,
            "fmin" => p.corpus.mel.fmin = parse(key, v)?,
            "fmax" => p.corpus.mel.fmax = parse(key, v)?,
            "frames" => p.corpus.frames = parse(key, v)?,
            "items" => p.corpus.items = parse(key, v)?,
            "chain" => self.chain = v.parse()?,
            "channel" => {
                self.channel = match v {
                    "spectrogram" => Channel::Spectrogram,
                    "waveform" => Channel::Waveform,
                    _ => return Err(Error::InvalidConfig(format!("channel must be spectrogram or waveform, got {v:?}"))),
                }
            }
            "fpr" => self.fpr = parse(key, v)?,
            "mode" => {
                self.mode = match v {
                    "direct" => EmbedMode::Direct,
                    "diffusion" => EmbedMode::Diffusion,
                    _ => return Err(Error::InvalidConfig(format!("mode must be direct or diffusion, got {v:?}"))),
                }
            }
            "payload" => self.payload = Some(PathBuf::from(v)),
            "out_dir" => self.out_dir = Some(PathBuf::from(v)),
            "timestep_stride" => self.timestep_stride = parse(key, v)?,
            "lr" => self.train.lr = parse(key, v)?,
            "lambda_tts" => self.train.weights.lambda_tts = parse(key, v)?,
            "lambda_emb" => self.train.weights.lambda_emb = parse(key, v)?,
            "lambda_ext" => self.train.weights.lambda_ext = parse(key, v)?,
            "train_steps" => self.train.steps = parse(key, v)?,
            "batch_size" => self.train.batch_size = parse(key, v)?,
            "alpha_anneal" => self.train.alpha_anneal = if v == "none" { None } else { Some(parse_pair(key, v)?) },
            "ext_ramp" => self.train.ext_ramp = parse(key, v)?,
            "tiny_alpha" => self.tiny_alpha = parse_pair(key, v)?,
            _ => return Err(Error::InvalidConfig(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected key = value", lineno + 1)))?;
            self.set(k.trim(), v).map_err(|e| match e {
                Error::InvalidConfig(msg) => Error::InvalidConfig(format!("line {}: {msg}", lineno + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(&std::fs::read_to_string(path)?)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        self.train.validate()?;
        if !(0.0..=1.0).contains(&self.fpr) {
            return Err(Error::InvalidConfig(format!("fpr {} outside [0, 1]", self.fpr)));
        }
        if self.pipeline.n_bits == 0 {
            return Err(Error::InvalidConfig("bits must be >= 1".into()));
        }
        if self.timestep_stride == 0 {
            return Err(Error::InvalidConfig("timestep_stride must be >= 1".into()));
        }
        Ok(())
    }

    /// Every key with its current value, one per line, in a form
    /// [`RunConfig::apply_text`] reads back.
    pub fn to_text(&self) -> String {
        let p = &self.pipeline;
        let m = &p.corpus.mel;
        let t = &self.train;
        let opt = |o: &Option<PathBuf>| o.as_ref().map(|x| x.display().to_string());
        let mut lines = vec![
            format!("seed = {}", p.seed),
            format!("key = {:#x}", p.embed.key),
            format!("bits = {}", p.n_bits),
            format!("alpha = {}", p.embed.alpha),
            format!("subband = {}", p.embed.subband),
            format!("embed_step = {}", p.embed.embed_step),
            format!("layout = {}", p.layout),
            format!("use_dwt = {}", p.use_dwt),
            format!("steps = {}", p.steps),
            format!("beta_min = {}", p.beta_min),
            format!("beta_max = {}", p.beta_max),
            format!("sigma_d = {}", p.sigma_d),
            format!("gl_iters = {}", p.gl_iters),
            format!("sample_rate = {}", p.corpus.sample_rate),
            format!("n_fft = {}", m.n_fft),
            format!("hop = {}", m.hop),
            format!("n_mels = {}", m.n_mels),
            format!("fmin = {}", m.fmin),
            format!("fmax = {}", m.fmax),
            format!("frames = {}", p.corpus.frames),
            format!("items = {}", p.corpus.items),
            format!("chain = {}", self.chain),
            format!(
                "channel = {}",
                match self.channel {
                    Channel::Spectrogram => "spectrogram",
                    Channel::Waveform => "waveform",
                }
            ),
            format!("fpr = {}", self.fpr),
            format!(
                "mode = {}",
                match self.mode {
                    EmbedMode::Direct => "direct",
                    EmbedMode::Diffusion => "diffusion",
                }
            ),
            format!("timestep_stride = {}", self.timestep_stride),
            format!("lr = {}", t.lr),
            format!("lambda_tts = {}", t.weights.lambda_tts),
            format!("lambda_emb = {}", t.weights.lambda_emb),
            format!("lambda_ext = {}", t.weights.lambda_ext),
            format!("train_steps = {}", t.steps),
            format!("batch_size = {}", t.batch_size),
            match t.alpha_anneal {
                None => "alpha_anneal = none".to_string(),
                Some((a, b)) => format!("alpha_anneal = {a},{b}"),
            },
            format!("ext_ramp = {}", t.ext_ramp),
            format!("tiny_alpha = {},{}", self.tiny_alpha.0, self.tiny_alpha.1),
        ];
        if let Some(v) = opt(&self.payload) {
            lines.push(format!("payload = {v}"));
        }
        if let Some(v) = opt(&self.out_dir) {
            lines.push(format!("out_dir = {v}"));
        }
        lines.join("\n") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavelet::SubBand;

    #[test]
    fn parses_comments_and_values() {
        let mut c = RunConfig::default();
        c.apply_text("# header\nalpha = 0.5  # inline\n\nsubband=HH\nkey = 0x10\nchain = clip:0.5+noise:0.2\n")
            .unwrap();
        assert_eq!(c.pipeline.embed.alpha, 0.5);
        assert_eq!(c.pipeline.embed.subband, SubBand::HH);
        assert_eq!(c.pipeline.embed.key, 16);
        assert_eq!(c.chain.to_string(), "clip:0.5+noise:0.2");
    }

    #[test]
    fn errors_name_the_line() {
        let mut c = RunConfig::default();
        let e = c.apply_text("alpha = 0.1\nbogus = 3\n").unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");
        assert!(c.apply_text("alpha 0.1").is_err());
        assert!(c.apply_text("alpha = fast").is_err());
        assert!(c.apply_text("use_dwt = maybe").is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.apply_text("alpha = 0.25\nchannel = waveform\nalpha_anneal = 0.5,0.3\npayload = /tmp/p.hex\n").unwrap();
        let mut back = RunConfig::default();
        back.apply_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(RunConfig::KEYS.len(), c.to_text().lines().count() + 1);
    }

    #[test]
    fn every_listed_key_is_accepted() {
        let text = RunConfig::default().to_text();
        let keys: Vec<&str> = text.lines().map(|l| l.split('=').next().unwrap().trim()).collect();
        for k in RunConfig::KEYS {
            assert!(keys.contains(k) || *k == "payload" || *k == "out_dir", "{k}");
        }
    }

    #[test]
    fn validation() {
        let mut c = RunConfig::default();
        assert!(c.validate().is_ok());
        c.fpr = 2.0;
        assert!(c.validate().is_err());
    }
}
