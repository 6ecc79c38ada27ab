//! Noise estimators: the seam where a pretrained `eps_theta` would plug in.

use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;
use crate::tensor::LatentVideo;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PromptSpec {
    pub text: String,
    /// Prompt for the unconditional branch; empty means truly unconditional.
    pub negative: String,
}

impl PromptSpec {
    pub fn new(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            negative: String::new(),
        }
    }

    /// The string sent for a conditional or unconditional query.
    pub fn for_branch(&self, conditional: bool) -> &str {
        if conditional {
            &self.text
        } else {
            &self.negative
        }
    }
}

pub trait NoiseEstimator {
    fn estimate(
        &mut self,
        z: &LatentVideo,
        t_train: u32,
        prompt: &PromptSpec,
        conditional: bool,
    ) -> Result<LatentVideo>;

    /// Whether classifier-free guidance applies. Estimators that model a
    /// perfectly conditioned network return `false` and get one query per step.
    fn uses_guidance(&self) -> bool {
        true
    }

    fn name(&self) -> &str;
}

impl<E: NoiseEstimator + ?Sized> NoiseEstimator for Box<E> {
    fn estimate(
        &mut self,
        z: &LatentVideo,
        t_train: u32,
        prompt: &PromptSpec,
        conditional: bool,
    ) -> Result<LatentVideo> {
        (**self).estimate(z, t_train, prompt, conditional)
    }

    fn uses_guidance(&self) -> bool {
        (**self).uses_guidance()
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}

/// `eps_uncond + s·(eps_cond - eps_uncond)`.
pub fn cfg_combine(
    eps_uncond: &LatentVideo,
    eps_cond: &LatentVideo,
    scale: f64,
) -> Result<LatentVideo> {
    eps_uncond.zip_map(eps_cond, |u, c| u + scale * (c - u))
}

/// Reference dummy denoiser shared bit-exactly with the out-of-process worker:
///
/// `eps = f32(tanh(f64(z))·(0.5 + 0.5·cond) + 0.01·((t mod 7) − 3))`,
/// evaluated in `f64` and rounded once.
pub fn dummy_denoise(z: &LatentVideo, t_train: u32, conditional: bool) -> LatentVideo {
    let gain = if conditional { 1.0 } else { 0.5 };
    let bias = 0.01 * (f64::from(t_train % 7) - 3.0);
    z.map(|v| v.tanh() * gain + bias)
}

#[derive(Debug, Clone, Default)]
pub struct DummyEstimator;

impl NoiseEstimator for DummyEstimator {
    fn estimate(
        &mut self,
        z: &LatentVideo,
        t_train: u32,
        _prompt: &PromptSpec,
        conditional: bool,
    ) -> Result<LatentVideo> {
        Ok(dummy_denoise(z, t_train, conditional))
    }

    fn name(&self) -> &str {
        "dummy"
    }
}

/// Test oracle: returns the exact noise that maps a known clean target to the
/// current latent under the forward process.
#[derive(Debug, Clone)]
pub struct OracleEstimator {
    target: LatentVideo,
    schedule: NoiseSchedule,
}

impl OracleEstimator {
    pub fn new(target: LatentVideo, schedule: NoiseSchedule) -> Self {
        Self { target, schedule }
    }

    pub fn target(&self) -> &LatentVideo {
        &self.target
    }
}

/// `(z_t - sqrt(ab)·z0) / sqrt(1 - ab)`.
pub fn oracle_estimate(
    z_t: &LatentVideo,
    t_train: u32,
    target: &LatentVideo,
    schedule: &NoiseSchedule,
) -> Result<LatentVideo> {
    if t_train > schedule.train_timesteps() {
        return Err(Error::config(format!("timestep {t_train} beyond schedule")));
    }
    let ab = schedule.alpha_bar(t_train);
    if ab >= 1.0 {
        return Err(Error::Domain(format!(
            "oracle undefined at t={t_train}: alpha_bar = 1"
        )));
    }
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    z_t.zip_map(target, |z, x| (z - a * x) / b)
}

impl NoiseEstimator for OracleEstimator {
    fn estimate(
        &mut self,
        z: &LatentVideo,
        t_train: u32,
        _prompt: &PromptSpec,
        _conditional: bool,
    ) -> Result<LatentVideo> {
        oracle_estimate(z, t_train, &self.target, &self.schedule)
    }

    fn uses_guidance(&self) -> bool {
        false
    }

    fn name(&self) -> &str {
        "oracle"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Dims, LatentFrame};

    fn scalar(v: f32) -> LatentVideo {
        LatentVideo::new(vec![LatentFrame::filled(Dims::new(1, 1, 1), v)]).unwrap()
    }

    #[test]
    fn cfg_endpoints() {
        let (u, c) = (scalar(0.0), scalar(1.0));
        assert_eq!(cfg_combine(&u, &c, 1.0).unwrap(), c);
        assert_eq!(cfg_combine(&u, &c, 0.0).unwrap(), u);
        assert_eq!(cfg_combine(&u, &c, 9.0).unwrap(), scalar(9.0));
        let wrong = LatentVideo::zeros(2, Dims::new(1, 1, 1)).unwrap();
        assert!(cfg_combine(&u, &wrong, 1.0).is_err());
    }

    #[test]
    fn dummy_values() {
        let z = LatentVideo::zeros(2, Dims::new(4, 8, 8)).unwrap();
        let out = dummy_denoise(&z, 3, false);
        assert!(out.to_flat().iter().all(|&v| v == 0.0));
        let out = dummy_denoise(&z, 4, true);
        assert!(out.to_flat().iter().all(|&v| v == 0.01f32));
        let out = dummy_denoise(&scalar(1.0), 10, false);
        let expected = (1f64.tanh() * 0.5 + 0.0) as f32;
        assert_eq!(out.frame(0).data()[0], expected);
    }

    #[test]
    fn oracle_inverts_forward_process() {
        let s = NoiseSchedule::scaled_linear(8.5e-4, 1.2e-2, 1000).unwrap();
        let dims = Dims::new(1, 2, 2);
        let x0 = LatentFrame::from_vec(dims, vec![0.5, -0.25, 0.75, -1.0]).unwrap();
        let eps = LatentFrame::from_vec(dims, vec![1.0, 0.5, -0.5, 2.0]).unwrap();
        let z = s.invert(&x0, 500, &eps).unwrap();
        let target = LatentVideo::new(vec![x0.clone()]).unwrap();
        let got = oracle_estimate(&LatentVideo::new(vec![z]).unwrap(), 500, &target, &s).unwrap();
        assert!(got.frame(0).max_abs_diff(&eps).unwrap() < 1e-5);

        let ab = s.alpha_bar(500);
        let scaled = x0.zip_map(&x0, |x, _| ab.sqrt() * x).unwrap();
        let zero =
            oracle_estimate(&LatentVideo::new(vec![scaled]).unwrap(), 500, &target, &s).unwrap();
        assert!(zero.frame(0).data().iter().all(|v| v.abs() < 1e-6));

        assert!(matches!(
            oracle_estimate(&target, 0, &target, &s),
            Err(Error::Domain(_))
        ));
    }
}
