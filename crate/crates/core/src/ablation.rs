//! Ablation suites: embedding sub-band, embedding timestep, and DWT versus
//! direct spectrogram embedding.

use std::fmt;
use std::str::FromStr;

use crate::config::RunConfig;
use crate::corpus::corpus_item;
use crate::error::{Error, Result};
use crate::pipeline::{generate, score, AttackPlan, Channel, Generated, ItemSeeds, PipelineConfig};
use crate::spectral::Spectrogram;
use crate::verify::{ll_mse, spectral_snr};
use crate::wavelet::SubBand;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Subband,
    Timestep,
    Dwt,
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "subband" => Ok(Suite::Subband),
            "timestep" => Ok(Suite::Timestep),
            "dwt" => Ok(Suite::Dwt),
            _ => Err(Error::InvalidConfig(format!("unknown ablation suite {s:?} (subband, timestep, dwt)"))),
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Suite::Subband => "subband",
            Suite::Timestep => "timestep",
            Suite::Dwt => "dwt",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub condition: String,
    pub accuracy: f64,
    /// LL-MSE and spectral SNR between the watermarked and the unwatermarked
    /// generation from the same diffusion noise.
    pub ll_mse: f64,
    pub snr: f64,
    pub items: usize,
}

/// Mean accuracy and fidelity of one configuration over `mus`.
pub fn run_condition(
    label: &str,
    cfg: &PipelineConfig,
    channel: Channel,
    plan: &AttackPlan,
    mus: &[Spectrogram<f64>],
    stream: &str,
) -> Result<AblationRow> {
    if mus.is_empty() {
        return Err(Error::InvalidConfig("ablation needs at least one corpus item".into()));
    }
    let carriers = cfg.carriers(mus[0].shape())?;
    let (mut acc, mut mse, mut snr) = (0.0, 0.0, 0.0);
    for (i, mu) in mus.iter().enumerate() {
        let seeds = ItemSeeds::new(cfg.seed, stream, i);
        let m = seeds.payload(cfg.n_bits)?;
        let wm = generate(mu, Some(&m), cfg, &carriers, seeds.diffusion)?;
        let clean = generate(mu, None, cfg, &carriers, seeds.diffusion)?;
        mse += ll_mse(&clean, &wm)?;
        snr += spectral_snr(&clean, &wm)?;
        let g = Generated::new(wm, channel, cfg, seeds.vocoder)?;
        acc += score(&g.attacked(plan, cfg, seeds.attack)?, &m, cfg, &carriers)?;
    }
    let n = mus.len() as f64;
    Ok(AblationRow {
        condition: label.to_string(),
        accuracy: acc / n,
        ll_mse: mse / n,
        snr: snr / n,
        items: mus.len(),
    })
}

/// Timesteps `0, stride, 2 stride, ..., T`, always ending at `T`.
pub fn timestep_grid(steps: usize, stride: usize) -> Vec<usize> {
    let mut grid: Vec<usize> = (0..=steps).step_by(stride.max(1)).collect();
    if grid.last() != Some(&steps) {
        grid.push(steps);
    }
    grid
}

pub fn ablate(suite: Suite, run: &RunConfig) -> Result<Vec<AblationRow>> {
    run.validate()?;
    let base = &run.pipeline;
    let mus = (0..base.corpus.items)
        .map(|i| corpus_item::<f64>(&base.corpus, i).map(|c| c.mel))
        .collect::<Result<Vec<_>>>()?;
    let plan = if run.chain.0.is_empty() {
        AttackPlan::None
    } else {
        AttackPlan::Chain(run.chain.clone())
    };
    let stream = format!("ablate-{suite}");
    let mut rows = Vec::new();
    match suite {
        Suite::Subband => {
            for band in SubBand::ALL {
                let mut cfg = base.clone();
                cfg.use_dwt = true;
                cfg.embed.subband = band;
                rows.push(run_condition(&band.to_string(), &cfg, run.channel, &plan, &mus, &stream)?);
            }
        }
        Suite::Timestep => {
            for t in timestep_grid(base.steps, run.timestep_stride) {
                let mut cfg = base.clone();
                cfg.embed.embed_step = t;
                rows.push(run_condition(&format!("t{t}"), &cfg, run.channel, &plan, &mus, &stream)?);
            }
        }
        Suite::Dwt => {
            let mut with = base.clone();
            with.use_dwt = true;
            rows.push(run_condition("with_dwt", &with, run.channel, &plan, &mus, &stream)?);
            // half the per-cell strength on the full grid matches the
            // spectrogram-domain energy of an LL embedding
            let mut without = base.clone();
            without.use_dwt = false;
            without.embed.alpha = base.embed.alpha / 2.0;
            rows.push(run_condition("without_dwt", &without, run.channel, &plan, &mus, &stream)?);
        }
    }
    Ok(rows)
}

/// Aligned `key=value` rows.
pub fn format_table(rows: &[AblationRow]) -> String {
    let width = rows.iter().map(|r| r.condition.len()).max().unwrap_or(0);
    rows.iter()
        .map(|r| {
            format!(
                "condition={:<width$} acc={:.4} ll_mse={:.6} snr={:.2} items={}\n",
                r.condition, r.accuracy, r.ll_mse, r.snr, r.items
            )
        })
        .collect()
}
