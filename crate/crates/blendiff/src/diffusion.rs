//! Denoiser-agnostic diffusion machinery: the noise schedule, forward
//! noising, DDPM/DDIM samplers with classifier-free guidance, and
//! masked editing of reference sequences.

use serde::{Deserialize, Serialize};

use crate::coeffs::EditMask;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Cumulative signal factors alpha_bar_t for t in 0..=T, with
/// alpha_bar_0 = 1 and strictly decreasing values.
#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear beta schedule. The stock configuration is
    /// `linear(1000, 1e-4, 2e-2)`.
    pub fn linear(timesteps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if timesteps == 0 {
            return Err(Error::InvalidSchedule("need at least one timestep".into()));
        }
        let mut alpha_bar = Vec::with_capacity(timesteps + 1);
        alpha_bar.push(1.0);
        let mut acc = 1.0;
        for t in 0..timesteps {
            let beta = if timesteps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * t as f64 / (timesteps - 1) as f64
            };
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::InvalidSchedule(format!("beta {beta} outside (0,1)")));
            }
            acc *= 1.0 - beta;
            alpha_bar.push(acc);
        }
        Self::from_alpha_bar(alpha_bar)
    }

    pub fn from_alpha_bar(alpha_bar: Vec<f64>) -> Result<Self> {
        if alpha_bar.len() < 2 {
            return Err(Error::InvalidSchedule("need at least one timestep".into()));
        }
        if (alpha_bar[0] - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidSchedule("alpha_bar[0] must be 1".into()));
        }
        for w in alpha_bar.windows(2) {
            if !(w[1] > 0.0 && w[1] < w[0] && w[1] <= 1.0) {
                return Err(Error::InvalidSchedule(
                    "alpha_bar must be strictly decreasing in (0, 1]".into(),
                ));
            }
        }
        let last = *alpha_bar.last().unwrap();
        if last >= 0.05 {
            return Err(Error::InvalidSchedule(format!(
                "terminal alpha_bar {last} must be below 0.05"
            )));
        }
        Ok(NoiseSchedule { alpha_bar })
    }

    pub fn timesteps(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }
}

/// Serializable schedule description stored in checkpoints and
/// manifests.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            timesteps: 1000,
            beta_start: 1e-4,
            beta_end: 2e-2,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.timesteps, self.beta_start, self.beta_end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SamplerKind {
    Ddpm,
    Ddim,
}

/// Sampling-time configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GuidanceConfig {
    /// Classifier-free guidance strength; 0 disables the unconditional
    /// pass.
    pub gamma: f64,
    pub sampler: SamplerKind,
    /// Number of sampling steps (at most the schedule's timesteps).
    pub steps: usize,
    /// DDIM stochasticity; 0 is deterministic, 1 matches the DDPM
    /// posterior variance.
    pub eta: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig {
            gamma: 2.0,
            sampler: SamplerKind::Ddim,
            steps: 1000,
            eta: 0.0,
        }
    }
}

/// Forward noising: sqrt(a_bar_t) u0 + sqrt(1 - a_bar_t) eps.
pub fn q_sample(u0: &Tensor, schedule: &NoiseSchedule, t: usize, eps: &Tensor) -> Result<Tensor> {
    u0.same_shape(eps)?;
    if t > schedule.timesteps() {
        return Err(Error::InvalidArgument(format!(
            "timestep {t} beyond schedule length {}",
            schedule.timesteps()
        )));
    }
    let ab = schedule.alpha_bar(t);
    Ok(u0.scale(ab.sqrt()).add(&eps.scale((1.0 - ab).sqrt())))
}

/// Classifier-free guidance: eps_cond + gamma (eps_cond - eps_uncond).
pub fn guided_noise(eps_cond: &Tensor, eps_uncond: &Tensor, gamma: f64) -> Tensor {
    eps_cond.add(&eps_cond.sub(eps_uncond).scale(gamma))
}

/// A noise-prediction network. `cond` rows are frame-aligned audio
/// features; `None` selects the learned null-condition embedding.
pub trait NoisePredictor {
    fn predict(&self, u_t: &Tensor, cond: Option<&Tensor>, t: usize) -> Result<Tensor>;
}

/// Zero predictor, handy for schedule-only checks.
pub struct ZeroPredictor;

impl NoisePredictor for ZeroPredictor {
    fn predict(&self, u_t: &Tensor, _cond: Option<&Tensor>, _t: usize) -> Result<Tensor> {
        Ok(Tensor::zeros(u_t.shape().to_vec()))
    }
}

fn validate_cond(cond: Option<&Tensor>, n: usize) -> Result<()> {
    if let Some(c) = cond {
        if c.rank() != 2 || c.rows() != n {
            return Err(Error::ShapeMismatch {
                expected: vec![n, c.cols()],
                got: c.shape().to_vec(),
            });
        }
    }
    Ok(())
}

/// Evenly spaced descending timesteps for a sub-sampled trajectory:
/// multiples of T/steps down to the first step, which pairs with
/// alpha_bar_0 = 1.
fn plan_timesteps(schedule: &NoiseSchedule, steps: usize) -> Result<Vec<usize>> {
    let t_max = schedule.timesteps();
    if steps == 0 || steps > t_max {
        return Err(Error::InvalidArgument(format!(
            "steps {steps} must be in 1..={t_max}"
        )));
    }
    Ok((1..=steps).rev().map(|i| i * t_max / steps).collect())
}

fn predict_guided(
    denoiser: &dyn NoisePredictor,
    u_t: &Tensor,
    cond: Option<&Tensor>,
    t: usize,
    gamma: f64,
) -> Result<Tensor> {
    match cond {
        Some(c) if gamma > 0.0 => {
            let eps_cond = denoiser.predict(u_t, Some(c), t)?;
            let eps_uncond = denoiser.predict(u_t, None, t)?;
            Ok(guided_noise(&eps_cond, &eps_uncond, gamma))
        }
        other => denoiser.predict(u_t, other, t),
    }
}

fn rand_like(rng: &mut Rng, n: usize, k: usize) -> Tensor {
    Tensor::new(vec![n, k], rng.normal_vec(n * k))
}

enum StepNoise<'a> {
    Sampler(&'a mut Rng),
    None,
}

fn sampler_step(
    u_t: &Tensor,
    eps_hat: &Tensor,
    schedule: &NoiseSchedule,
    t: usize,
    t_prev: usize,
    cfg: &GuidanceConfig,
    noise: &mut StepNoise,
) -> Tensor {
    let ab_t = schedule.alpha_bar(t);
    let ab_prev = schedule.alpha_bar(t_prev);
    match cfg.sampler {
        SamplerKind::Ddim => {
            // x0 prediction, then deterministic direction plus optional
            // eta-scaled noise
            let x0 = u_t
                .sub(&eps_hat.scale((1.0 - ab_t).sqrt()))
                .scale(1.0 / ab_t.sqrt());
            let var = if ab_prev <= ab_t {
                0.0
            } else {
                ((1.0 - ab_prev) / (1.0 - ab_t)) * (1.0 - ab_t / ab_prev)
            };
            let sigma = cfg.eta * var.max(0.0).sqrt();
            let dir_scale = (1.0 - ab_prev - sigma * sigma).max(0.0).sqrt();
            let mut out = x0.scale(ab_prev.sqrt()).add(&eps_hat.scale(dir_scale));
            if sigma > 0.0 {
                if let StepNoise::Sampler(rng) = noise {
                    let z = rand_like(rng, u_t.rows(), u_t.cols());
                    out = out.add(&z.scale(sigma));
                }
            }
            out
        }
        SamplerKind::Ddpm => {
            let alpha_step = ab_t / ab_prev;
            let beta_step = 1.0 - alpha_step;
            let mean = u_t
                .sub(&eps_hat.scale(beta_step / (1.0 - ab_t).sqrt()))
                .scale(1.0 / alpha_step.sqrt());
            // posterior variance
            let var = beta_step * (1.0 - ab_prev) / (1.0 - ab_t);
            if var > 0.0 {
                if let StepNoise::Sampler(rng) = noise {
                    let z = rand_like(rng, u_t.rows(), u_t.cols());
                    return mean.add(&z.scale(var.sqrt()));
                }
            }
            mean
        }
    }
}

fn clamp01(mut t: Tensor) -> Tensor {
    for v in t.data_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    t
}

/// Sample an N x K coefficient sequence from pure Gaussian noise.
/// Deterministic given the RNG state; the output is clamped to [0, 1].
pub fn sample(
    denoiser: &dyn NoisePredictor,
    cond: Option<&Tensor>,
    n: usize,
    k: usize,
    schedule: &NoiseSchedule,
    cfg: &GuidanceConfig,
    rng: &mut Rng,
) -> Result<Tensor> {
    validate_cond(cond, n)?;
    let ts = plan_timesteps(schedule, cfg.steps)?;
    let mut u = rand_like(rng, n, k);
    for (i, &t) in ts.iter().enumerate() {
        let t_prev = ts.get(i + 1).copied().unwrap_or(0);
        let eps_hat = predict_guided(denoiser, &u, cond, t, cfg.gamma)?;
        u = sampler_step(
            &u,
            &eps_hat,
            schedule,
            t,
            t_prev,
            cfg,
            &mut StepNoise::Sampler(rng),
        );
    }
    Ok(clamp01(u))
}

/// Regenerate the unmasked (mask 0) region of `u_ref`, keeping masked
/// (mask 1) entries pinned to the reference. At every sampling step the
/// iterate is overwritten on the masked region by the reference noised
/// to the current level; the final step injects the reference exactly.
pub fn edit(
    denoiser: &dyn NoisePredictor,
    cond: Option<&Tensor>,
    u_ref: &Tensor,
    mask: &EditMask,
    schedule: &NoiseSchedule,
    cfg: &GuidanceConfig,
    rng: &mut Rng,
) -> Result<Tensor> {
    u_ref.same_shape(&mask.mask)?;
    let (n, k) = (u_ref.rows(), u_ref.cols());
    validate_cond(cond, n)?;
    let ts = plan_timesteps(schedule, cfg.steps)?;

    // separate stream for the mask-noising draws so an all-zeros mask
    // reproduces plain sampling draw-for-draw
    let mut mask_rng = rng.derive(0x6d61_736b);

    let blend = |u_t: &Tensor, t: usize, mask_rng: &mut Rng| -> Result<Tensor> {
        let eps = if t == 0 {
            Tensor::zeros(vec![n, k])
        } else {
            rand_like(mask_rng, n, k)
        };
        let noised_ref = q_sample(u_ref, schedule, t, &eps)?;
        let mut out = u_t.clone();
        for i in 0..out.numel() {
            let m = mask.mask.data()[i];
            if m == 1.0 {
                out.data_mut()[i] = noised_ref.data()[i];
            }
        }
        Ok(out)
    };

    let mut u = rand_like(rng, n, k);
    for (i, &t) in ts.iter().enumerate() {
        let t_prev = ts.get(i + 1).copied().unwrap_or(0);
        u = blend(&u, t, &mut mask_rng)?;
        let eps_hat = predict_guided(denoiser, &u, cond, t, cfg.gamma)?;
        u = sampler_step(
            &u,
            &eps_hat,
            schedule,
            t,
            t_prev,
            cfg,
            &mut StepNoise::Sampler(rng),
        );
    }
    Ok(blend(&clamp01(u), 0, &mut mask_rng)?)
}
