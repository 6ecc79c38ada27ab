//! The full conditioned sampling loop.
//!
//! Per DDIM step `k = K..1` (training timestep `tau_k`):
//!
//! 1. invert every condition latent to `tau_k` with fresh keyed noise,
//! 2. overwrite the frames at the condition positions,
//! 3. random patch swapping against the bounding condition images,
//! 4. query the estimator (twice under guidance) and take a DDIM step to
//!    `tau_{k-1}`, with `tau_0 = 0`.
//!
//! The initial latent is the first condition image inverted to `tau_K`,
//! repeated across all frames.

use std::time::Instant;

use crate::conditioning::{
    apply_conditioning, frame_replace, validate_positions, SwapSchedule, WindowDirection,
};
use crate::error::{Error, Result};
use crate::estimator::{cfg_combine, NoiseEstimator, PromptSpec};
use crate::rng::{derive_stream, Purpose, StreamKey};
use crate::schedule::{NoiseSchedule, TimestepMap};
use crate::tensor::{ensure_same, frame_bit_eq, Dims, LatentFrame, LatentVideo};

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub num_frames: usize,
    pub num_steps: usize,
    pub p0: f64,
    pub t0: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub guidance_scale: f64,
    pub sigma: f64,
    pub seed: u64,
    pub enable_frame_replace: bool,
    pub enable_rps: bool,
    /// When off, every frame uses `p0`/`t0` regardless of distance.
    pub enable_dynamic_control: bool,
    /// Overwrite the output frames at the condition positions with the clean
    /// condition latents after the loop.
    pub hard_replace_output: bool,
    pub direction: WindowDirection,
    /// Draw one inversion noise per condition and reuse it at every step.
    pub reuse_inversion_noise: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        let swap = SwapSchedule::default();
        Self {
            num_frames: 16,
            num_steps: 20,
            p0: swap.p0,
            t0: swap.t0,
            delta1: swap.delta1,
            delta2: swap.delta2,
            guidance_scale: 9.0,
            sigma: 0.0,
            seed: 0,
            enable_frame_replace: true,
            enable_rps: true,
            enable_dynamic_control: true,
            hard_replace_output: false,
            direction: WindowDirection::PerAlgorithm,
            reuse_inversion_noise: false,
        }
    }
}

impl EngineConfig {
    pub fn swap_schedule(&self) -> SwapSchedule {
        let s = SwapSchedule {
            p0: self.p0,
            t0: self.t0,
            delta1: self.delta1,
            delta2: self.delta2,
            direction: self.direction,
        };
        if self.enable_dynamic_control {
            s
        } else {
            s.fixed()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_frames == 0 {
            return Err(Error::config("num_frames must be at least 1"));
        }
        if self.num_steps == 0 {
            return Err(Error::config("num_steps must be at least 1"));
        }
        if !(self.guidance_scale >= 0.0 && self.guidance_scale.is_finite()) {
            return Err(Error::config("guidance_scale must be finite and >= 0"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::config("sigma must be finite and >= 0"));
        }
        self.swap_schedule().validate()
    }
}

/// Encoded condition images and their frame positions.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionSet {
    latents: Vec<LatentFrame>,
    positions: Vec<usize>,
}

impl ConditionSet {
    pub fn new(latents: Vec<LatentFrame>, positions: Vec<usize>) -> Result<Self> {
        if latents.is_empty() {
            return Err(Error::config("at least one condition image is required"));
        }
        if latents.len() != positions.len() {
            return Err(Error::config(format!(
                "{} condition latents for {} positions",
                latents.len(),
                positions.len()
            )));
        }
        if positions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("positions strictly increasing"));
        }
        let dims = latents[0].dims();
        for l in &latents {
            ensure_same(dims, l.dims(), "condition latents")?;
        }
        Ok(Self { latents, positions })
    }

    pub fn latents(&self) -> &[LatentFrame] {
        &self.latents
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn dims(&self) -> Dims {
        self.latents[0].dims()
    }

    pub fn len(&self) -> usize {
        self.latents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.latents.is_empty()
    }
}

/// Hooks into the sampling loop. All methods default to no-ops.
pub trait StepObserver {
    /// After frame replacement at DDIM step `step`.
    fn after_frame_replace(
        &mut self,
        _step: usize,
        _z_hat: &LatentVideo,
        _inverted: &[LatentFrame],
        _positions: &[usize],
    ) {
    }

    /// The latent handed to the estimator at `step`.
    fn before_estimate(&mut self, _step: usize, _z: &LatentVideo) {}

    /// The latent after the DDIM update of `step`.
    fn after_step(&mut self, _step: usize, _z: &LatentVideo) {}
}

impl StepObserver for () {}

/// Counts steps at which the frames at the condition positions equal the
/// freshly inverted conditions bit for bit.
#[derive(Debug, Default, Clone)]
pub struct ReplacementCheck {
    pub checked: usize,
    pub consistent: usize,
}

impl StepObserver for ReplacementCheck {
    fn after_frame_replace(
        &mut self,
        _step: usize,
        z_hat: &LatentVideo,
        inverted: &[LatentFrame],
        positions: &[usize],
    ) {
        self.checked += 1;
        let ok = positions
            .iter()
            .zip(inverted)
            .all(|(&p, x)| frame_bit_eq(z_hat.frame(p), x));
        if ok {
            self.consistent += 1;
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub video: LatentVideo,
    pub step_ms: Vec<f64>,
    pub total_ms: f64,
    pub estimator_calls: usize,
}

pub fn init_noise(x_t_first: &LatentFrame, num_frames: usize) -> Result<LatentVideo> {
    LatentVideo::repeat(x_t_first, num_frames)
}

/// Standard-normal frame from one keyed stream.
pub fn gaussian_frame(dims: Dims, key: StreamKey) -> LatentFrame {
    let mut st = derive_stream(key);
    let mut data = vec![0.0f32; dims.len()];
    st.fill_gauss_f32(&mut data);
    LatentFrame::from_vec(dims, data).expect("buffer sized from dims")
}

fn inversion_key(cfg: &EngineConfig, step: usize, n: usize) -> StreamKey {
    let t = if cfg.reuse_inversion_noise {
        0
    } else {
        step as u32
    };
    StreamKey::new(cfg.seed, Purpose::InversionNoise, t, 0, n as u32)
}

/// The noise-initialization latent: the first condition inverted to the last
/// sampling timestep, repeated across frames.
pub fn initial_latent(
    cfg: &EngineConfig,
    conditions: &ConditionSet,
    schedule: &NoiseSchedule,
    tmap: &TimestepMap,
) -> Result<LatentVideo> {
    let k = tmap.steps();
    let first = &conditions.latents()[0];
    let eps = gaussian_frame(
        first.dims(),
        StreamKey::new(cfg.seed, Purpose::InitNoise, k as u32, 0, 0),
    );
    init_noise(&schedule.invert(first, tmap.tau(k), &eps)?, cfg.num_frames)
}

/// Every condition latent inverted to the timestep of DDIM step `step`.
pub fn invert_conditions(
    cfg: &EngineConfig,
    conditions: &ConditionSet,
    schedule: &NoiseSchedule,
    t_train: u32,
    step: usize,
) -> Result<Vec<LatentFrame>> {
    conditions
        .latents()
        .iter()
        .enumerate()
        .map(|(n, x0)| {
            let eps = gaussian_frame(x0.dims(), inversion_key(cfg, step, n));
            schedule.invert(x0, t_train, &eps)
        })
        .collect()
}

/// One guided noise prediction; returns the prediction and the number of
/// estimator calls it took.
pub fn predict_noise(
    estimator: &mut dyn NoiseEstimator,
    z: &LatentVideo,
    t_train: u32,
    prompt: &PromptSpec,
    guidance_scale: f64,
) -> Result<(LatentVideo, usize)> {
    let checked = |out: LatentVideo| -> Result<LatentVideo> {
        z.ensure_same_shape(&out)?;
        if !out.is_finite() {
            return Err(Error::Domain(format!(
                "estimator returned non-finite values at t={t_train}"
            )));
        }
        Ok(out)
    };
    if estimator.uses_guidance() && guidance_scale != 1.0 {
        let uncond = checked(estimator.estimate(z, t_train, prompt, false)?)?;
        let cond = checked(estimator.estimate(z, t_train, prompt, true)?)?;
        Ok((cfg_combine(&uncond, &cond, guidance_scale)?, 2))
    } else {
        Ok((checked(estimator.estimate(z, t_train, prompt, true)?)?, 1))
    }
}

pub fn run_flexti2v(
    cfg: &EngineConfig,
    conditions: &ConditionSet,
    prompt: &PromptSpec,
    estimator: &mut dyn NoiseEstimator,
    schedule: &NoiseSchedule,
    tmap: &TimestepMap,
) -> Result<RunOutput> {
    run_flexti2v_observed(cfg, conditions, prompt, estimator, schedule, tmap, &mut ())
}

pub fn run_flexti2v_observed(
    cfg: &EngineConfig,
    conditions: &ConditionSet,
    prompt: &PromptSpec,
    estimator: &mut dyn NoiseEstimator,
    schedule: &NoiseSchedule,
    tmap: &TimestepMap,
    observer: &mut dyn StepObserver,
) -> Result<RunOutput> {
    cfg.validate()?;
    if tmap.steps() != cfg.num_steps {
        return Err(Error::config(format!(
            "timestep map has {} steps, config asks for {}",
            tmap.steps(),
            cfg.num_steps
        )));
    }
    if *tmap.taus().last().unwrap() > schedule.train_timesteps() {
        return Err(Error::config("timestep map exceeds schedule length"));
    }
    let positions = conditions.positions();
    validate_positions(positions, cfg.num_frames)?;
    let sched = cfg.swap_schedule();
    let num_steps = tmap.steps();

    let started = Instant::now();
    let mut z = initial_latent(cfg, conditions, schedule, tmap)?;
    let mut step_ms = Vec::with_capacity(num_steps);
    let mut calls = 0;

    for k in (1..=num_steps).rev() {
        let step_start = Instant::now();
        let t_train = tmap.tau(k);
        let inverted = invert_conditions(cfg, conditions, schedule, t_train, k)?;
        if cfg.enable_frame_replace {
            z = frame_replace(&z, &inverted, positions)?;
            observer.after_frame_replace(k, &z, &inverted, positions);
        }
        if cfg.enable_rps {
            z = apply_conditioning(&z, &inverted, positions, k, num_steps, &sched, cfg.seed)?;
        }
        observer.before_estimate(k, &z);
        let (eps_hat, used) = predict_noise(estimator, &z, t_train, prompt, cfg.guidance_scale)
            .map_err(|e| Error::Estimator {
                step: k,
                source: Box::new(e),
            })?;
        calls += used;
        let t_prev = tmap.tau(k - 1);
        // the clean level leaves no variance for extra noise
        let sigma = if t_prev == 0 { 0.0 } else { cfg.sigma };
        let eps_prime = (sigma > 0.0)
            .then(|| step_noise(cfg.seed, k, cfg.num_frames, z.dims()))
            .transpose()?;
        z = schedule.ddim_step(&z, &eps_hat, t_train, t_prev, sigma, eps_prime.as_ref())?;
        observer.after_step(k, &z);
        step_ms.push(step_start.elapsed().as_secs_f64() * 1e3);
    }

    if cfg.hard_replace_output {
        z = frame_replace(&z, conditions.latents(), positions)?;
    }
    Ok(RunOutput {
        video: z,
        step_ms,
        total_ms: started.elapsed().as_secs_f64() * 1e3,
        estimator_calls: calls,
    })
}

fn step_noise(seed: u64, step: usize, num_frames: usize, dims: Dims) -> Result<LatentVideo> {
    LatentVideo::new(
        (0..num_frames)
            .map(|m| {
                gaussian_frame(
                    dims,
                    StreamKey::new(seed, Purpose::StepNoise, step as u32, m as u32, 0),
                )
            })
            .collect(),
    )
}
