//! Toy DDPM reverse diffusion over spectrograms.
//!
//! The denoiser is replaced by the exact score of a Gaussian data model
//! `x0 ~ N(mu, sigma_d^2 I)`, so the sampler is linear in its state and
//! every quantity has a closed form.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::spectral::Spectrogram;

/// Linear beta schedule with cumulative products. Steps are indexed `1..=T`;
/// `alpha_bar(0)` is 1 by convention.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

pub const DEFAULT_STEPS: usize = 50;
pub const DEFAULT_BETA_MIN: f64 = 1e-4;
pub const DEFAULT_BETA_MAX: f64 = 0.05;

impl Schedule {
    pub fn new(steps: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if steps < 2 {
            return Err(Error::InvalidConfig(format!("schedule needs T >= 2, got {steps}")));
        }
        if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "need 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]"
            )));
        }
        let betas: Vec<f64> = (0..steps)
            .map(|i| beta_min + (beta_max - beta_min) * i as f64 / (steps - 1) as f64)
            .collect();
        let mut alpha_bars = Vec::with_capacity(steps);
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bars.push(acc);
        }
        Ok(Self { betas, alpha_bars })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.betas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    fn check(&self, t: usize) -> Result<()> {
        if t > self.steps() {
            return Err(Error::Index(format!("timestep {t} outside 0..={}", self.steps())));
        }
        Ok(())
    }
}

impl Default for Schedule {
    fn default() -> Self {
        Self::new(DEFAULT_STEPS, DEFAULT_BETA_MIN, DEFAULT_BETA_MAX).expect("valid defaults")
    }
}

/// Analytic stand-in for a trained denoiser.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDataModel<T> {
    pub mu: Spectrogram<T>,
    pub sigma_d: f64,
}

fn gaussian_like<T: Real, R: Rng + ?Sized>(shape: (usize, usize), rng: &mut R) -> ndarray::Array2<T> {
    ndarray::Array2::from_shape_simple_fn(shape, || T::lit(rng.sample::<f64, _>(StandardNormal)))
}

/// Samples `q(x_t | x_0) = N(sqrt(abar_t) x0, (1 - abar_t) I)`. `t = 0` returns `x0`.
pub fn forward_noise<T: Real, R: Rng + ?Sized>(
    x0: &Spectrogram<T>,
    t: usize,
    sched: &Schedule,
    rng: &mut R,
) -> Result<Spectrogram<T>> {
    sched.check(t)?;
    if t == 0 {
        return Ok(x0.clone());
    }
    let ab = sched.alpha_bar(t);
    let (a, b) = (T::lit(ab.sqrt()), T::lit((1.0 - ab).sqrt()));
    let eps = gaussian_like::<T, R>(x0.shape(), rng);
    Ok(Spectrogram {
        data: &x0.data * a + eps * b,
        kind: x0.kind,
    })
}

/// Marginal variance of `x_t` under the data model.
pub fn marginal_variance(t: usize, model_sigma_d: f64, sched: &Schedule) -> f64 {
    let ab = sched.alpha_bar(t);
    ab * model_sigma_d * model_sigma_d + 1.0 - ab
}

/// Score of `N(sqrt(abar_t) mu, (abar_t sigma_d^2 + 1 - abar_t) I)` at `x_t`.
pub fn analytic_score<T: Real>(
    x_t: &Spectrogram<T>,
    t: usize,
    model: &GaussianDataModel<T>,
    sched: &Schedule,
) -> Result<Spectrogram<T>> {
    sched.check(t)?;
    if x_t.shape() != model.mu.shape() {
        return Err(Error::Shape(format!(
            "state {:?} vs model {:?}",
            x_t.shape(),
            model.mu.shape()
        )));
    }
    let var = marginal_variance(t, model.sigma_d, sched);
    if var <= 0.0 {
        return Err(Error::InvalidConfig("degenerate marginal at t=0 with sigma_d=0".into()));
    }
    let mean_scale = T::lit(sched.alpha_bar(t).sqrt());
    let inv = T::lit(-1.0 / var);
    Ok(Spectrogram {
        data: (&x_t.data - &(&model.mu.data * mean_scale)) * inv,
        kind: x_t.kind,
    })
}

pub type HookFn<'a, T> = Box<dyn FnMut(&Spectrogram<T>) -> Result<Spectrogram<T>> + 'a>;

/// Callback run once on the state right after `embed_step` reverse steps
/// have completed (0 = the initial noise, T = the final sample).
pub struct EmbedHook<'a, T> {
    pub embed_step: usize,
    pub apply: HookFn<'a, T>,
}

impl<'a, T> EmbedHook<'a, T> {
    pub fn new(
        embed_step: usize,
        apply: impl FnMut(&Spectrogram<T>) -> Result<Spectrogram<T>> + 'a,
    ) -> Self {
        Self {
            embed_step,
            apply: Box::new(apply),
        }
    }
}

/// States after 0, 1, ..., T completed reverse steps; `states[T]` is `x_0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace<T> {
    pub states: Vec<Spectrogram<T>>,
}

impl<T> Trace<T> {
    pub fn final_state(&self) -> &Spectrogram<T> {
        self.states.last().expect("trace is never empty")
    }
}

fn reverse_step<T: Real, R: Rng + ?Sized>(
    x: &Spectrogram<T>,
    t: usize,
    model: &GaussianDataModel<T>,
    sched: &Schedule,
    rng: &mut R,
) -> Result<Spectrogram<T>> {
    let ab_t = sched.alpha_bar(t);
    let ab_prev = sched.alpha_bar(t - 1);
    let beta = sched.beta(t);
    let score = analytic_score(x, t, model, sched)?;
    // x0 estimate via Tweedie, then the DDPM posterior mean
    let x0_hat = (&x.data + &(&score.data * T::lit(1.0 - ab_t))) * T::lit(1.0 / ab_t.sqrt());
    let c_x0 = T::lit(ab_prev.sqrt() * beta / (1.0 - ab_t));
    let c_xt = T::lit(sched.alpha(t).sqrt() * (1.0 - ab_prev) / (1.0 - ab_t));
    let mut next = x0_hat * c_x0 + &x.data * c_xt;
    if t > 1 {
        let z = gaussian_like::<T, R>(x.shape(), rng);
        next = next + z * T::lit(beta.sqrt());
    }
    Ok(Spectrogram {
        data: next,
        kind: x.kind,
    })
}

fn run<T: Real, R: Rng + ?Sized>(
    model: &GaussianDataModel<T>,
    sched: &Schedule,
    mut hook: Option<EmbedHook<'_, T>>,
    rng: &mut R,
    mut observe: impl FnMut(&Spectrogram<T>),
) -> Result<Spectrogram<T>> {
    let steps = sched.steps();
    if let Some(h) = &hook {
        if h.embed_step > steps {
            return Err(Error::Index(format!("embed_step {} outside 0..={steps}", h.embed_step)));
        }
    }
    let shape = model.mu.shape();
    let mut x = Spectrogram {
        data: gaussian_like::<T, R>(shape, rng),
        kind: model.mu.kind,
    };
    for done in 0..=steps {
        if done > 0 {
            let t = steps - done + 1;
            x = reverse_step(&x, t, model, sched, rng)?;
        }
        if let Some(h) = hook.as_mut() {
            if h.embed_step == done {
                let hooked = (h.apply)(&x)?;
                if hooked.shape() != shape {
                    return Err(Error::Shape(format!(
                        "hook changed shape {shape:?} -> {:?}",
                        hooked.shape()
                    )));
                }
                x = hooked;
            }
        }
        observe(&x);
    }
    Ok(x)
}

/// Ancestral sampling from `x_T ~ N(0, I)` to `x_0`, recording every state.
pub fn generate<T: Real, R: Rng + ?Sized>(
    model: &GaussianDataModel<T>,
    sched: &Schedule,
    hook: Option<EmbedHook<'_, T>>,
    rng: &mut R,
) -> Result<Trace<T>> {
    let mut states = Vec::with_capacity(sched.steps() + 1);
    run(model, sched, hook, rng, |x| states.push(x.clone()))?;
    Ok(Trace { states })
}

/// Same as [`generate`] but keeps only `x_0`.
pub fn sample<T: Real, R: Rng + ?Sized>(
    model: &GaussianDataModel<T>,
    sched: &Schedule,
    hook: Option<EmbedHook<'_, T>>,
    rng: &mut R,
) -> Result<Spectrogram<T>> {
    run(model, sched, hook, rng, |_| {})
}

/// Gain applied to a perturbation injected after `embed_step` completed steps
/// by the remaining (linear) reverse steps.
pub fn perturbation_gain(embed_step: usize, sigma_d: f64, sched: &Schedule) -> f64 {
    let steps = sched.steps();
    let mut gain = 1.0;
    for done in embed_step + 1..=steps {
        let t = steps - done + 1;
        let ab_t = sched.alpha_bar(t);
        let ab_prev = sched.alpha_bar(t - 1);
        let var = marginal_variance(t, sigma_d, sched);
        // d x0_hat / d x_t = (1 - (1 - abar_t) / var) / sqrt(abar_t)
        let dx0 = (1.0 - (1.0 - ab_t) / var) / ab_t.sqrt();
        let c_x0 = ab_prev.sqrt() * sched.beta(t) / (1.0 - ab_t);
        let c_xt = sched.alpha(t).sqrt() * (1.0 - ab_prev) / (1.0 - ab_t);
        gain *= c_x0 * dx0 + c_xt;
    }
    gain
}
