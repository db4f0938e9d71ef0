//! A small trainable embedder/extractor pair over the LL band.
//!
//! Embedder: `h = relu(W1 s + b1)` with `s = 2m - 1`, `z = W2 h + b2` reshaped
//! to the LL grid, `p = sigmoid(conv3x3(z) + kb)`, strength
//! `alpha = a_min + (a_max - a_min) sigmoid(ws.h + bs)`; the watermarked band
//! is `LL + alpha (2p - 1)`.
//!
//! Extractor: eight 3x3 conv channels with ReLU, global average pooling, a
//! linear layer to N logits and a sigmoid.
//!
//! All parameters live in one flat vector so optimizers and gradient checks
//! can treat them uniformly.

use std::ops::Range;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use super::loss::BCE_CLAMP;
use super::payload::WatermarkPayload;
use crate::error::{Error, Result};
use crate::spectral::Spectrogram;
use crate::wavelet::dwt2;

pub const HIDDEN: usize = 64;
pub const EXT_CHANNELS: usize = 8;
pub const TNW_MAGIC: &[u8; 4] = b"TNW1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    W1,
    B1,
    W2,
    B2,
    K,
    Kb,
    Ws,
    Bs,
    Ke,
    Be,
    Wf,
    Bf,
}

const SECTIONS: [Section; 12] = [
    Section::W1,
    Section::B1,
    Section::W2,
    Section::B2,
    Section::K,
    Section::Kb,
    Section::Ws,
    Section::Bs,
    Section::Ke,
    Section::Be,
    Section::Wf,
    Section::Bf,
];

#[derive(Debug, Clone, PartialEq)]
pub struct TinyNets {
    pub n_bits: usize,
    pub rows: usize,
    pub cols: usize,
    pub alpha_min: f64,
    pub alpha_max: f64,
    params: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// 3x3 "same" correlation with zero padding.
fn conv3(x: &Array2<f64>, k: &[f64]) -> Array2<f64> {
    let (h, w) = x.dim();
    Array2::from_shape_fn((h, w), |(r, c)| {
        let mut acc = 0.0;
        for dr in 0..3 {
            for dc in 0..3 {
                let (rr, cc) = (r + dr, c + dc);
                if rr >= 1 && rr <= h && cc >= 1 && cc <= w {
                    acc += k[dr * 3 + dc] * x[[rr - 1, cc - 1]];
                }
            }
        }
        acc
    })
}

/// Accumulates `d/dk` and `d/dx` of `sum(g * conv3(x, k))`.
fn conv3_backward(x: &Array2<f64>, k: &[f64], g: &Array2<f64>, dk: &mut [f64], dx: Option<&mut Array2<f64>>) {
    let (h, w) = x.dim();
    let mut dx = dx;
    for r in 0..h {
        for c in 0..w {
            let gv = g[[r, c]];
            if gv == 0.0 {
                continue;
            }
            for dr in 0..3 {
                for dc in 0..3 {
                    let (rr, cc) = (r + dr, c + dc);
                    if rr >= 1 && rr <= h && cc >= 1 && cc <= w {
                        dk[dr * 3 + dc] += gv * x[[rr - 1, cc - 1]];
                        if let Some(d) = dx.as_deref_mut() {
                            d[[rr - 1, cc - 1]] += gv * k[dr * 3 + dc];
                        }
                    }
                }
            }
        }
    }
}

/// Intermediate values of one embedder pass.
#[derive(Debug, Clone)]
pub struct EmbedForward {
    pub pattern: Array2<f64>,
    pub alpha: f64,
    s: Vec<f64>,
    pre_h: Vec<f64>,
    h: Vec<f64>,
    z: Array2<f64>,
    strength: f64,
}

#[derive(Debug, Clone)]
struct ExtractForward {
    pre: Vec<Array2<f64>>,
    pooled: Vec<f64>,
    probs: Vec<f64>,
}

impl TinyNets {
    fn section_len(&self, s: Section) -> usize {
        let p = self.rows * self.cols;
        match s {
            Section::W1 => HIDDEN * self.n_bits,
            Section::B1 => HIDDEN,
            Section::W2 => p * HIDDEN,
            Section::B2 => p,
            Section::K => 9,
            Section::Kb => 1,
            Section::Ws => HIDDEN,
            Section::Bs => 1,
            Section::Ke => EXT_CHANNELS * 9,
            Section::Be => EXT_CHANNELS,
            Section::Wf => self.n_bits * EXT_CHANNELS,
            Section::Bf => self.n_bits,
        }
    }

    fn range(&self, s: Section) -> Range<usize> {
        let mut start = 0;
        for &sec in SECTIONS.iter() {
            let len = self.section_len(sec);
            if sec == s {
                return start..start + len;
            }
            start += len;
        }
        unreachable!("every section is listed")
    }

    fn get(&self, s: Section) -> &[f64] {
        &self.params[self.range(s)]
    }

    fn total_len(n_bits: usize, rows: usize, cols: usize) -> usize {
        let shell = Self {
            n_bits,
            rows,
            cols,
            alpha_min: 0.0,
            alpha_max: 0.0,
            params: Vec::new(),
        };
        SECTIONS.iter().map(|&s| shell.section_len(s)).sum()
    }

    fn check_dims(n_bits: usize, shape: (usize, usize), alpha_min: f64, alpha_max: f64) -> Result<()> {
        if n_bits == 0 || shape.0 == 0 || shape.1 == 0 {
            return Err(Error::InvalidConfig(format!("bad net dimensions N={n_bits} LL={shape:?}")));
        }
        if !(0.0 <= alpha_min && alpha_min <= alpha_max && alpha_max.is_finite()) {
            return Err(Error::InvalidConfig(format!("bad strength range [{alpha_min}, {alpha_max}]")));
        }
        Ok(())
    }

    /// All parameters zero.
    pub fn zeros(n_bits: usize, ll_shape: (usize, usize), alpha_min: f64, alpha_max: f64) -> Result<Self> {
        Self::check_dims(n_bits, ll_shape, alpha_min, alpha_max)?;
        Ok(Self {
            n_bits,
            rows: ll_shape.0,
            cols: ll_shape.1,
            alpha_min,
            alpha_max,
            params: vec![0.0; Self::total_len(n_bits, ll_shape.0, ll_shape.1)],
        })
    }

    /// Scaled Gaussian initialization.
    pub fn init<R: Rng + ?Sized>(
        n_bits: usize,
        ll_shape: (usize, usize),
        alpha_min: f64,
        alpha_max: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut nets = Self::zeros(n_bits, ll_shape, alpha_min, alpha_max)?;
        let scales = [
            (Section::W1, (1.0 / n_bits as f64).sqrt()),
            (Section::W2, (1.0 / HIDDEN as f64).sqrt()),
            (Section::K, 1.0 / 3.0),
            (Section::Ws, 0.1 / (HIDDEN as f64).sqrt()),
            (Section::Ke, 1.0 / 3.0),
            (Section::Wf, (1.0 / EXT_CHANNELS as f64).sqrt()),
        ];
        for (sec, scale) in scales {
            let r = nets.range(sec);
            for v in &mut nets.params[r] {
                *v = scale * rng.sample::<f64, _>(StandardNormal);
            }
        }
        let r = nets.range(Section::Be);
        nets.params[r].fill(0.1);
        Ok(nets)
    }

    pub fn ll_shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Flat index range of the extractor parameters.
    pub fn extractor_range(&self) -> Range<usize> {
        self.range(Section::Ke).start..self.params.len()
    }

    fn check_ll(&self, ll: &Array2<f64>) -> Result<()> {
        if ll.dim() != (self.rows, self.cols) {
            return Err(Error::Shape(format!("LL is {:?}, nets expect {:?}", ll.dim(), self.ll_shape())));
        }
        Ok(())
    }

    fn embed_forward(&self, m: &WatermarkPayload) -> Result<EmbedForward> {
        if m.len() != self.n_bits {
            return Err(Error::Capacity(format!("payload has {} bits, nets expect {}", m.len(), self.n_bits)));
        }
        let s: Vec<f64> = m.signs().map(f64::from).collect();
        let (w1, b1) = (self.get(Section::W1), self.get(Section::B1));
        let pre_h: Vec<f64> = (0..HIDDEN)
            .map(|j| b1[j] + (0..self.n_bits).map(|i| w1[j * self.n_bits + i] * s[i]).sum::<f64>())
            .collect();
        let h: Vec<f64> = pre_h.iter().map(|&v| v.max(0.0)).collect();
        let (w2, b2) = (self.get(Section::W2), self.get(Section::B2));
        let z = Array2::from_shape_fn((self.rows, self.cols), |(r, c)| {
            let q = r * self.cols + c;
            b2[q] + (0..HIDDEN).map(|j| w2[q * HIDDEN + j] * h[j]).sum::<f64>()
        });
        let kb = self.get(Section::Kb)[0];
        let pattern = conv3(&z, self.get(Section::K)).mapv(|u| sigmoid(u + kb));
        let ws = self.get(Section::Ws);
        let strength = sigmoid(self.get(Section::Bs)[0] + ws.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>());
        let alpha = self.alpha_min + (self.alpha_max - self.alpha_min) * strength;
        Ok(EmbedForward {
            pattern,
            alpha,
            s,
            pre_h,
            h,
            z,
            strength,
        })
    }

    fn extract_forward(&self, ll: &Array2<f64>) -> Result<ExtractForward> {
        self.check_ll(ll)?;
        let (ke, be) = (self.get(Section::Ke), self.get(Section::Be));
        let cells = ll.len() as f64;
        let pre: Vec<Array2<f64>> = (0..EXT_CHANNELS)
            .map(|c| conv3(ll, &ke[c * 9..c * 9 + 9]) + be[c])
            .collect();
        let pooled: Vec<f64> = pre.iter().map(|a| a.iter().map(|&v| v.max(0.0)).sum::<f64>() / cells).collect();
        let (wf, bf) = (self.get(Section::Wf), self.get(Section::Bf));
        let probs = (0..self.n_bits)
            .map(|i| {
                sigmoid(bf[i] + (0..EXT_CHANNELS).map(|c| wf[i * EXT_CHANNELS + c] * pooled[c]).sum::<f64>())
            })
            .collect();
        Ok(ExtractForward { pre, pooled, probs })
    }

    /// Serializes to the TNW1 format: magic, u32 section count, then per
    /// section a u32 length and that many f32 values. Section 0 is
    /// `[N, H, W, alpha_min, alpha_max]`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = [
            self.n_bits as f64,
            self.rows as f64,
            self.cols as f64,
            self.alpha_min,
            self.alpha_max,
        ];
        let mut sections: Vec<&[f64]> = vec![&meta];
        sections.extend(SECTIONS.iter().map(|&s| self.get(s)));
        let mut out = Vec::new();
        out.extend_from_slice(TNW_MAGIC);
        out.extend_from_slice(&(sections.len() as u32).to_le_bytes());
        for sec in sections {
            out.extend_from_slice(&(sec.len() as u32).to_le_bytes());
            for &v in sec {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fmt_err = |msg: &str| Error::Format(format!("TNW1: {msg}"));
        if bytes.len() < 8 || &bytes[..4] != TNW_MAGIC {
            return Err(fmt_err("bad magic"));
        }
        let mut pos = 4;
        let read_u32 = |pos: &mut usize| -> Result<u32> {
            let b = bytes.get(*pos..*pos + 4).ok_or_else(|| fmt_err("truncated"))?;
            *pos += 4;
            Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
        };
        let count = read_u32(&mut pos)? as usize;
        if count != SECTIONS.len() + 1 {
            return Err(fmt_err(&format!("expected {} sections, found {count}", SECTIONS.len() + 1)));
        }
        let mut sections = Vec::with_capacity(count);
        for _ in 0..count {
            let len = read_u32(&mut pos)? as usize;
            let raw = bytes.get(pos..pos + 4 * len).ok_or_else(|| fmt_err("truncated"))?;
            pos += 4 * len;
            sections.push(
                raw.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                    .collect::<Vec<f64>>(),
            );
        }
        if pos != bytes.len() {
            return Err(fmt_err("trailing bytes"));
        }
        let meta = &sections[0];
        if meta.len() != 5 {
            return Err(fmt_err("metadata section must hold 5 values"));
        }
        let mut nets = Self::zeros(meta[0] as usize, (meta[1] as usize, meta[2] as usize), meta[3], meta[4])
            .map_err(|e| fmt_err(&e.to_string()))?;
        for (&sec, values) in SECTIONS.iter().zip(&sections[1..]) {
            let r = nets.range(sec);
            if values.len() != r.len() {
                return Err(fmt_err("section length does not match metadata"));
            }
            nets.params[r].copy_from_slice(values);
        }
        Ok(nets)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Pattern in `[0, 1]` on the LL grid and the dynamic strength.
pub fn tiny_forward_embed(nets: &TinyNets, m: &WatermarkPayload) -> Result<(Array2<f64>, f64)> {
    let f = nets.embed_forward(m)?;
    Ok((f.pattern, f.alpha))
}

/// `LL + alpha (2p - 1)`.
pub fn tiny_embed_ll(nets: &TinyNets, ll: &Array2<f64>, m: &WatermarkPayload) -> Result<Array2<f64>> {
    nets.check_ll(ll)?;
    let (p, a) = tiny_forward_embed(nets, m)?;
    Ok(ll + &p.mapv(|v| a * (2.0 * v - 1.0)))
}

/// Per-bit probabilities from an LL band.
pub fn tiny_forward_extract(nets: &TinyNets, ll: &Array2<f64>) -> Result<Vec<f64>> {
    Ok(nets.extract_forward(ll)?.probs)
}

/// Bits decided at probability 1/2.
pub fn tiny_decode(nets: &TinyNets, ll: &Array2<f64>) -> Result<WatermarkPayload> {
    WatermarkPayload::from_bools(tiny_forward_extract(nets, ll)?.into_iter().map(|p| p >= 0.5))
}

/// One training example: an LL band and the payload to hide in it.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub ll: Array2<f64>,
    pub payload: WatermarkPayload,
}

impl TrainExample {
    pub fn from_spectrogram(s: &Spectrogram<f64>, payload: WatermarkPayload) -> Result<Self> {
        Ok(Self {
            ll: dwt2(s)?.ll,
            payload,
        })
    }
}

/// Loss weights. The TTS weight is kept for parity with the full objective;
/// no TTS term exists here so it multiplies zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_tts: f64,
    pub lambda_emb: f64,
    pub lambda_ext: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_tts: 1.0,
            lambda_emb: 2.0,
            lambda_ext: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub emb: f64,
    pub ext: f64,
    pub total: f64,
}

/// Batch-mean losses and, if requested, their gradient w.r.t. all parameters.
pub fn loss_and_grad(
    nets: &TinyNets,
    batch: &[TrainExample],
    weights: &LossWeights,
    want_grad: bool,
) -> Result<(LossParts, Option<Vec<f64>>)> {
    if batch.is_empty() {
        return Err(Error::InvalidConfig("empty training batch".into()));
    }
    let mut grad = want_grad.then(|| vec![0.0; nets.params.len()]);
    let (mut emb_sum, mut ext_sum) = (0.0, 0.0);
    let scale = 1.0 / batch.len() as f64;
    let cells = (nets.rows * nets.cols) as f64;
    for ex in batch {
        nets.check_ll(&ex.ll)?;
        let ef = nets.embed_forward(&ex.payload)?;
        let delta = ef.pattern.mapv(|v| ef.alpha * (2.0 * v - 1.0));
        let wm = &ex.ll + &delta;
        let xf = nets.extract_forward(&wm)?;
        let emb = delta.iter().map(|d| d * d).sum::<f64>() / cells;
        let ext = super::loss::loss_ext(&ex.payload, &xf.probs)?;
        emb_sum += emb;
        ext_sum += ext;
        let Some(g) = grad.as_mut() else { continue };
        backward(nets, ex, &ef, &delta, &wm, &xf, weights, scale, g);
    }
    let emb = emb_sum * scale;
    let ext = ext_sum * scale;
    let total = weights.lambda_emb * emb + weights.lambda_ext * ext + weights.lambda_tts * 0.0;
    Ok((LossParts { emb, ext, total }, grad))
}

#[allow(clippy::too_many_arguments)]
fn backward(
    nets: &TinyNets,
    ex: &TrainExample,
    ef: &EmbedForward,
    delta: &Array2<f64>,
    wm: &Array2<f64>,
    xf: &ExtractForward,
    weights: &LossWeights,
    scale: f64,
    g: &mut [f64],
) {
    let (rows, cols) = nets.ll_shape();
    let cells = (rows * cols) as f64;
    let nb = nets.n_bits;

    // extractor head
    let dlogit: Vec<f64> = ex
        .payload
        .bits()
        .iter()
        .zip(&xf.probs)
        .map(|(&b, &p)| {
            if (BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&p) {
                scale * weights.lambda_ext * (p - b as f64) / nb as f64
            } else {
                0.0
            }
        })
        .collect();
    let wf = nets.get(Section::Wf).to_vec();
    let rwf = nets.range(Section::Wf);
    let rbf = nets.range(Section::Bf);
    let mut dpooled = [0.0; EXT_CHANNELS];
    for i in 0..nb {
        g[rbf.start + i] += dlogit[i];
        for c in 0..EXT_CHANNELS {
            g[rwf.start + i * EXT_CHANNELS + c] += dlogit[i] * xf.pooled[c];
            dpooled[c] += dlogit[i] * wf[i * EXT_CHANNELS + c];
        }
    }

    // extractor conv
    let ke = nets.get(Section::Ke).to_vec();
    let rke = nets.range(Section::Ke);
    let rbe = nets.range(Section::Be);
    let mut dwm = delta.mapv(|d| scale * weights.lambda_emb * 2.0 * d / cells);
    for c in 0..EXT_CHANNELS {
        let da = xf.pre[c].mapv(|v| if v > 0.0 { dpooled[c] / cells } else { 0.0 });
        g[rbe.start + c] += da.sum();
        conv3_backward(wm, &ke[c * 9..c * 9 + 9], &da, &mut g[rke.start + c * 9..rke.start + c * 9 + 9], Some(&mut dwm));
    }

    // embedding rule: wm = ll + alpha (2p - 1); the L_emb term already sits in dwm
    let dalpha: f64 = dwm.iter().zip(ef.pattern.iter()).map(|(d, p)| d * (2.0 * p - 1.0)).sum();
    let du = ndarray::Zip::from(&dwm)
        .and(&ef.pattern)
        .map_collect(|d, &p| d * 2.0 * ef.alpha * p * (1.0 - p));
    let rk = nets.range(Section::K);
    let rkb = nets.range(Section::Kb);
    g[rkb.start] += du.sum();
    let k = nets.get(Section::K).to_vec();
    let mut dz = Array2::zeros((rows, cols));
    conv3_backward(&ef.z, &k, &du, &mut g[rk.clone()], Some(&mut dz));

    // strength head
    let dstrength = dalpha * (nets.alpha_max - nets.alpha_min) * ef.strength * (1.0 - ef.strength);
    let rws = nets.range(Section::Ws);
    let rbs = nets.range(Section::Bs);
    g[rbs.start] += dstrength;
    let ws = nets.get(Section::Ws);
    let mut dh: Vec<f64> = (0..HIDDEN)
        .map(|j| {
            g[rws.start + j] += dstrength * ef.h[j];
            dstrength * ws[j]
        })
        .collect();

    // decoder FC
    let w2 = nets.get(Section::W2);
    let rw2 = nets.range(Section::W2);
    let rb2 = nets.range(Section::B2);
    for (q, &dzq) in dz.iter().enumerate() {
        if dzq == 0.0 {
            continue;
        }
        g[rb2.start + q] += dzq;
        let base = q * HIDDEN;
        for j in 0..HIDDEN {
            g[rw2.start + base + j] += dzq * ef.h[j];
            dh[j] += dzq * w2[base + j];
        }
    }

    // encoder FC
    let rw1 = nets.range(Section::W1);
    let rb1 = nets.range(Section::B1);
    for j in 0..HIDDEN {
        if ef.pre_h[j] <= 0.0 {
            continue;
        }
        g[rb1.start + j] += dh[j];
        for i in 0..nb {
            g[rw1.start + j * nb + i] += dh[j] * ef.s[i];
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub weights: LossWeights,
    pub steps: usize,
    /// Examples per step; `0` or anything above the corpus size means full batch.
    pub batch_size: usize,
    /// Linear schedule for `alpha_max` from start to end, if any.
    pub alpha_anneal: Option<(f64, f64)>,
    /// Fraction of steps over which `lambda_ext` ramps up from zero.
    pub ext_ramp: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weights: LossWeights::default(),
            steps: 200,
            batch_size: 0,
            alpha_anneal: None,
            ext_ramp: 0.25,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let w = &self.weights;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("lr must be positive, got {}", self.lr)));
        }
        if [w.lambda_tts, w.lambda_emb, w.lambda_ext].iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidConfig("loss weights must be finite and >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.ext_ramp) {
            return Err(Error::InvalidConfig(format!("ext_ramp {} outside [0, 1]", self.ext_ramp)));
        }
        Ok(())
    }

    /// Weights in effect at `step` (0-based).
    pub fn weights_at(&self, step: usize) -> LossWeights {
        let ramp_steps = self.ext_ramp * self.steps as f64;
        let f = if ramp_steps <= 0.0 {
            1.0
        } else {
            ((step + 1) as f64 / ramp_steps).min(1.0)
        };
        LossWeights {
            lambda_ext: self.weights.lambda_ext * f,
            ..self.weights
        }
    }

    pub fn alpha_max_at(&self, step: usize, fallback: f64) -> f64 {
        match self.alpha_anneal {
            None => fallback,
            Some((_, b)) if self.steps <= 1 => b,
            Some((a, b)) => a + (b - a) * step as f64 / (self.steps - 1) as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainStep {
    pub step: usize,
    pub emb: f64,
    pub ext: f64,
    pub total: f64,
}

/// Adam on the weighted objective. Returns the trained nets and the
/// per-step losses (measured before each update).
pub fn train_tiny<R: Rng + ?Sized>(
    nets: &TinyNets,
    corpus: &[TrainExample],
    tc: &TrainConfig,
    rng: &mut R,
) -> Result<(TinyNets, Vec<TrainStep>)> {
    tc.validate()?;
    if corpus.is_empty() {
        return Err(Error::InvalidConfig("empty training corpus".into()));
    }
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let mut nets = nets.clone();
    let base_alpha_max = nets.alpha_max;
    let mut m = vec![0.0; nets.params.len()];
    let mut v = vec![0.0; nets.params.len()];
    let mut history = Vec::with_capacity(tc.steps);
    let full = tc.batch_size == 0 || tc.batch_size >= corpus.len();
    for step in 0..tc.steps {
        nets.alpha_max = tc.alpha_max_at(step, base_alpha_max).max(nets.alpha_min);
        let batch: Vec<TrainExample> = if full {
            corpus.to_vec()
        } else {
            rand::seq::index::sample(rng, corpus.len(), tc.batch_size)
                .into_iter()
                .map(|i| corpus[i].clone())
                .collect()
        };
        let weights = tc.weights_at(step);
        let (parts, grad) = loss_and_grad(&nets, &batch, &weights, true)?;
        if !parts.total.is_finite() {
            return Err(Error::Divergence {
                step,
                loss: parts.total,
            });
        }
        history.push(TrainStep {
            step,
            emb: parts.emb,
            ext: parts.ext,
            total: parts.total,
        });
        let grad = grad.expect("gradient requested");
        let t = (step + 1) as i32;
        let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
        for i in 0..nets.params.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
            v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
            nets.params[i] -= tc.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
        }
        if nets.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Divergence {
                step,
                loss: f64::NAN,
            });
        }
    }
    Ok((nets, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng;

    fn nets(s: u64) -> TinyNets {
        TinyNets::init(6, (5, 7), 0.05, 0.4, &mut seed::rng(s)).unwrap()
    }

    fn batch(s: u64, k: usize) -> Vec<TrainExample> {
        let mut rng = seed::rng(s);
        (0..k)
            .map(|_| TrainExample {
                ll: Array2::from_shape_fn((5, 7), |_| rng.random_range(0.0..4.0)),
                payload: WatermarkPayload::random(6, &mut rng).unwrap(),
            })
            .collect()
    }

    /// Straightforward re-implementation of the extractor on nested loops.
    fn extract_reference(n: &TinyNets, ll: &Array2<f64>) -> Vec<f64> {
        let (h, w) = ll.dim();
        let ke = n.get(Section::Ke);
        let be = n.get(Section::Be);
        let mut pooled = [0.0; EXT_CHANNELS];
        for (c, pc) in pooled.iter_mut().enumerate() {
            for r in 0..h as isize {
                for col in 0..w as isize {
                    let mut acc = be[c];
                    for i in -1..=1isize {
                        for j in -1..=1isize {
                            let (rr, cc) = (r + i, col + j);
                            if rr >= 0 && cc >= 0 && rr < h as isize && cc < w as isize {
                                acc += ke[c * 9 + ((i + 1) * 3 + j + 1) as usize] * ll[[rr as usize, cc as usize]];
                            }
                        }
                    }
                    *pc += acc.max(0.0);
                }
            }
            *pc /= (h * w) as f64;
        }
        let wf = n.get(Section::Wf);
        let bf = n.get(Section::Bf);
        (0..n.n_bits)
            .map(|i| {
                let z: f64 = bf[i] + (0..EXT_CHANNELS).map(|c| wf[i * EXT_CHANNELS + c] * pooled[c]).sum::<f64>();
                1.0 / (1.0 + (-z).exp())
            })
            .collect()
    }

    #[test]
    fn zero_params_give_midpoints() {
        let z = TinyNets::zeros(4, (3, 3), 0.1, 0.3).unwrap();
        let m = WatermarkPayload::new(vec![1, 0, 1, 1]).unwrap();
        let (p, a) = tiny_forward_embed(&z, &m).unwrap();
        assert!(p.iter().all(|&v| v == 0.5));
        assert!((a - 0.2).abs() < 1e-15);
        let probs = tiny_forward_extract(&z, &Array2::ones((3, 3))).unwrap();
        assert!(probs.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn forward_ranges_and_reproducibility() {
        let n = nets(1);
        for ex in batch(2, 20) {
            let (p, a) = tiny_forward_embed(&n, &ex.payload).unwrap();
            assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
            assert!((0.05..=0.4).contains(&a));
            let probs = tiny_forward_extract(&n, &ex.ll).unwrap();
            assert!(probs.iter().all(|&v| v > 0.0 && v < 1.0));
            assert_eq!(probs, tiny_forward_extract(&n, &ex.ll).unwrap());
        }
    }

    #[test]
    fn extractor_matches_reference() {
        let n = nets(3);
        let ex = &batch(4, 1)[0];
        let a = tiny_forward_extract(&n, &ex.ll).unwrap();
        let b = extract_reference(&n, &ex.ll);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut n = nets(5);
        let data = batch(6, 3);
        let w = LossWeights::default();
        let (_, g) = loss_and_grad(&n, &data, &w, true).unwrap();
        let g = g.unwrap();
        let mut rng = seed::rng(7);
        let h = 1e-4;
        let mut worst = 0.0f64;
        for _ in 0..50 {
            let i = rng.random_range(0..n.params.len());
            let orig = n.params[i];
            n.params[i] = orig + h;
            let up = loss_and_grad(&n, &data, &w, false).unwrap().0.total;
            n.params[i] = orig - h;
            let down = loss_and_grad(&n, &data, &w, false).unwrap().0.total;
            n.params[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let denom = g[i].abs().max(fd.abs());
            if denom > 0.0 {
                worst = worst.max((g[i] - fd).abs() / denom);
            }
        }
        assert!(worst <= 1e-4, "{worst}");
    }

    #[test]
    fn training_reduces_loss() {
        let n = nets(8);
        let data = batch(9, 4);
        let tc = TrainConfig {
            lr: 1e-3,
            steps: 60,
            ..TrainConfig::default()
        };
        let full = LossWeights::default();
        let before = loss_and_grad(&n, &data, &full, false).unwrap().0.total;
        let (trained, hist) = train_tiny(&n, &data, &tc, &mut seed::rng(1)).unwrap();
        assert_eq!(hist.len(), 60);
        let after = loss_and_grad(&trained, &data, &full, false).unwrap().0.total;
        assert!(after < before, "{after} >= {before}");
    }

    #[test]
    fn extractor_frozen_without_ext_loss() {
        let n = nets(10);
        let data = batch(11, 2);
        let tc = TrainConfig {
            steps: 5,
            weights: LossWeights {
                lambda_ext: 0.0,
                ..LossWeights::default()
            },
            ..TrainConfig::default()
        };
        let (trained, _) = train_tiny(&n, &data, &tc, &mut seed::rng(2)).unwrap();
        let r = n.extractor_range();
        assert_eq!(&trained.params()[r.clone()], &n.params()[r]);
        assert_ne!(trained.params(), n.params());
    }

    #[test]
    fn ext_weight_ramp_and_anneal() {
        let tc = TrainConfig {
            steps: 100,
            alpha_anneal: Some((0.5, 0.3)),
            ..TrainConfig::default()
        };
        assert!((tc.weights_at(0).lambda_ext - 0.4).abs() < 1e-12);
        assert_eq!(tc.weights_at(24).lambda_ext, 10.0);
        assert_eq!(tc.weights_at(99).lambda_ext, 10.0);
        assert_eq!(tc.alpha_max_at(0, 9.0), 0.5);
        assert!((tc.alpha_max_at(99, 9.0) - 0.3).abs() < 1e-12);
        assert_eq!(TrainConfig::default().alpha_max_at(3, 0.25), 0.25);
    }

    #[test]
    fn divergence_is_reported() {
        let mut n = nets(12);
        let r = n.range(Section::W2);
        n.params[r.start] = f64::NAN;
        let err = train_tiny(&n, &batch(13, 1), &TrainConfig::default(), &mut seed::rng(3)).unwrap_err();
        assert!(matches!(err, Error::Divergence { step: 0, .. }));
    }

    #[test]
    fn tnw_round_trip() {
        let n = nets(14);
        let bytes = n.to_bytes();
        assert_eq!(&bytes[..4], b"TNW1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 13);
        let back = TinyNets::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!((back.n_bits, back.ll_shape()), (6, (5, 7)));
        for (a, b) in back.params().iter().zip(n.params()) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1e-3));
        }
        assert!(TinyNets::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(TinyNets::from_bytes(&bad), Err(Error::Format(_))));
    }

    #[test]
    fn shape_and_length_errors() {
        let n = nets(15);
        assert!(tiny_forward_extract(&n, &Array2::zeros((4, 7))).is_err());
        assert!(tiny_forward_embed(&n, &WatermarkPayload::new(vec![1; 5]).unwrap()).is_err());
        assert!(TinyNets::zeros(0, (3, 3), 0.1, 0.2).is_err());
        assert!(TinyNets::zeros(3, (3, 3), 0.3, 0.2).is_err());
    }
}
