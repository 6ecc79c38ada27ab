//! Variance schedules, forward-diffusion inversion and the DDIM update.
//!
//! Training timesteps run `1..=T`; index 0 is the clean level with
//! `alpha_bar(0) = 1`, so stepping to `t_prev = 0` yields the clean
//! prediction.

use crate::error::{Error, Result};
use crate::tensor::{ensure_same, LatentFrame, LatentVideo};

pub const DEFAULT_BETA_START: f64 = 8.5e-4;
pub const DEFAULT_BETA_END: f64 = 1.2e-2;
pub const DEFAULT_TRAIN_TIMESTEPS: u32 = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    /// `alpha_bars[t]` for `t = 0..=T`.
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Scaled-linear schedule: `beta` is linear in `sqrt` space.
    pub fn scaled_linear(beta_start: f64, beta_end: f64, train_timesteps: u32) -> Result<Self> {
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::config(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
            )));
        }
        if train_timesteps == 0 {
            return Err(Error::config("train_timesteps must be at least 1"));
        }
        let (lo, hi) = (beta_start.sqrt(), beta_end.sqrt());
        let denom = f64::from(train_timesteps.saturating_sub(1).max(1));
        let betas = (0..train_timesteps)
            .map(|k| {
                let s = lo + f64::from(k) / denom * (hi - lo);
                s * s
            })
            .collect();
        Self::from_betas(betas)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::config("schedule needs at least one beta"));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::config(format!("beta {b} outside (0, 1)")));
        }
        let mut alpha_bars = Vec::with_capacity(betas.len() + 1);
        alpha_bars.push(1.0);
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bars.push(acc);
        }
        Ok(Self { betas, alpha_bars })
    }

    pub fn train_timesteps(&self) -> u32 {
        self.betas.len() as u32
    }

    /// `beta_t` for `t` in `1..=T`.
    pub fn beta(&self, t: u32) -> f64 {
        self.betas[t as usize - 1]
    }

    pub fn alpha(&self, t: u32) -> f64 {
        1.0 - self.beta(t)
    }

    pub fn alpha_bar(&self, t: u32) -> f64 {
        self.alpha_bars[t as usize]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    fn checked_alpha_bar(&self, t: u32) -> Result<f64> {
        self.alpha_bars.get(t as usize).copied().ok_or_else(|| {
            Error::config(format!(
                "timestep {t} beyond schedule length {}",
                self.train_timesteps()
            ))
        })
    }

    /// Forward diffusion `sqrt(ab)·x0 + sqrt(1-ab)·eps`.
    pub fn invert(&self, x0: &LatentFrame, t: u32, eps: &LatentFrame) -> Result<LatentFrame> {
        let ab = self.checked_alpha_bar(t)?;
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        x0.zip_map(eps, |x, e| a * x + b * e)
    }

    pub fn ddim_step(
        &self,
        z_t: &LatentVideo,
        eps_hat: &LatentVideo,
        t: u32,
        t_prev: u32,
        sigma: f64,
        eps_prime: Option<&LatentVideo>,
    ) -> Result<LatentVideo> {
        if t <= t_prev {
            return Err(Error::config(format!(
                "ddim step needs t > t_prev, got {t} -> {t_prev}"
            )));
        }
        let coeffs = DdimCoefficients::new(
            self.checked_alpha_bar(t)?,
            self.checked_alpha_bar(t_prev)?,
            sigma,
        )?;
        coeffs.apply(z_t, eps_hat, eps_prime)
    }
}

/// Scalar weights of one DDIM update from `alpha_bar_t` to `alpha_bar_prev`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DdimCoefficients {
    /// multiplies `z_t`
    pub sample: f64,
    /// multiplies `eps_hat`
    pub eps: f64,
    /// multiplies `eps_prime`
    pub noise: f64,
}

impl DdimCoefficients {
    pub fn new(alpha_bar_t: f64, alpha_bar_prev: f64, sigma: f64) -> Result<Self> {
        if !(alpha_bar_t > 0.0
            && alpha_bar_t <= 1.0
            && alpha_bar_prev > 0.0
            && alpha_bar_prev <= 1.0)
        {
            return Err(Error::Domain(format!(
                "alpha_bar values must lie in (0, 1], got {alpha_bar_t}, {alpha_bar_prev}"
            )));
        }
        if sigma.is_nan() || sigma < 0.0 {
            return Err(Error::config(format!(
                "sigma must be non-negative, got {sigma}"
            )));
        }
        let dir = 1.0 - alpha_bar_prev - sigma * sigma;
        if dir < 0.0 {
            return Err(Error::config(format!(
                "sigma^2 = {} exceeds 1 - alpha_bar_prev = {}",
                sigma * sigma,
                1.0 - alpha_bar_prev
            )));
        }
        // z_prev = r·(z_t - sqrt(1-ab_t)·eps) + sqrt(dir)·eps + sigma·eps'
        let ratio = (alpha_bar_prev / alpha_bar_t).sqrt();
        Ok(Self {
            sample: ratio,
            eps: dir.sqrt() - ratio * (1.0 - alpha_bar_t).sqrt(),
            noise: sigma,
        })
    }

    pub fn apply(
        &self,
        z_t: &LatentVideo,
        eps_hat: &LatentVideo,
        eps_prime: Option<&LatentVideo>,
    ) -> Result<LatentVideo> {
        z_t.ensure_same_shape(eps_hat)?;
        let det = z_t.zip_map(eps_hat, |z, e| self.sample * z + self.eps * e)?;
        match (self.noise > 0.0, eps_prime) {
            (false, _) => Ok(det),
            (true, Some(noise)) => {
                det.ensure_same_shape(noise)?;
                det.zip_map(noise, |d, n| d + self.noise * n)
            }
            (true, None) => Err(Error::config("sigma > 0 requires eps_prime")),
        }
    }
}

/// The increasing training timesteps visited by the sampler.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimestepMap {
    taus: Vec<u32>,
}

impl TimestepMap {
    /// Uniform stride `T div K`, ending at `K·stride`.
    pub fn uniform(train_timesteps: u32, steps: u32) -> Result<Self> {
        if steps == 0 || steps > train_timesteps {
            return Err(Error::config(format!(
                "need 1 <= steps <= train_timesteps, got steps={steps}, train_timesteps={train_timesteps}"
            )));
        }
        let stride = train_timesteps / steps;
        Ok(Self {
            taus: (1..=steps).map(|k| k * stride).collect(),
        })
    }

    pub fn from_taus(taus: Vec<u32>, train_timesteps: u32) -> Result<Self> {
        let ok = !taus.is_empty()
            && taus[0] >= 1
            && *taus.last().unwrap() <= train_timesteps
            && taus.windows(2).all(|w| w[0] < w[1]);
        if !ok {
            return Err(Error::config(format!(
                "timesteps must be strictly increasing within 1..={train_timesteps}"
            )));
        }
        Ok(Self { taus })
    }

    pub fn steps(&self) -> usize {
        self.taus.len()
    }

    /// Training timestep for DDIM step `k` in `0..=K`, with `tau(0) = 0`.
    pub fn tau(&self, k: usize) -> u32 {
        if k == 0 {
            0
        } else {
            self.taus[k - 1]
        }
    }

    pub fn taus(&self) -> &[u32] {
        &self.taus
    }
}

/// Clean-latent estimate implied by a noise prediction.
pub fn predict_x0(
    z_t: &LatentFrame,
    eps_hat: &LatentFrame,
    alpha_bar_t: f64,
) -> Result<LatentFrame> {
    ensure_same(z_t.dims(), eps_hat.dims(), "x0 prediction")?;
    let (a, b) = (alpha_bar_t.sqrt(), (1.0 - alpha_bar_t).sqrt());
    z_t.zip_map(eps_hat, |z, e| (z - b * e) / a)
}
