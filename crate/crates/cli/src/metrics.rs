//! Desk-scale proxy metrics over latent videos.

use flexti2v_core::{ConditionSet, Error, LatentVideo, Result};
use serde_json::{json, Value};

/// Latent values live in [-1, 1].
pub const PSNR_PEAK: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub mse_at_conditions: f64,
    pub psnr_at_conditions: f64,
    pub temporal_energy: f64,
}

impl Metrics {
    /// JSON object; an infinite PSNR is written as the string `"inf"`.
    pub fn to_json(&self) -> Value {
        let psnr = if self.psnr_at_conditions.is_infinite() {
            json!("inf")
        } else {
            json!(self.psnr_at_conditions)
        };
        json!({
            "mse_at_conditions": self.mse_at_conditions,
            "psnr_at_conditions": psnr,
            "temporal_energy": self.temporal_energy,
        })
    }
}

pub fn psnr(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (PSNR_PEAK * PSNR_PEAK / mse).log10()
    }
}

pub fn metrics(video: &LatentVideo, conditions: &ConditionSet) -> Result<Metrics> {
    if video.dims() != conditions.dims() {
        return Err(Error::Dimension(format!(
            "video frames are {}, conditions are {}",
            video.dims(),
            conditions.dims()
        )));
    }
    let mut mse = 0.0;
    for (latent, &p) in conditions.latents().iter().zip(conditions.positions()) {
        if p >= video.num_frames() {
            return Err(Error::Dimension(format!(
                "condition position {p} outside a {}-frame video",
                video.num_frames()
            )));
        }
        mse += video.frame(p).mean_squared_diff(latent)?;
    }
    mse /= conditions.len() as f64;

    let frames = video.frames();
    let temporal_energy = if frames.len() < 2 {
        0.0
    } else {
        let mut sum = 0.0;
        for pair in frames.windows(2) {
            sum += pair[1].mean_squared_diff(&pair[0])?;
        }
        sum / (frames.len() - 1) as f64
    };

    Ok(Metrics {
        mse_at_conditions: mse,
        psnr_at_conditions: psnr(mse),
        temporal_energy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use flexti2v_core::{Dims, LatentFrame};

    const D: Dims = Dims::new(2, 3, 3);

    fn frame(v: f32) -> LatentFrame {
        LatentFrame::filled(D, v)
    }

    #[test]
    fn exact_conditions_give_zero_mse_and_infinite_psnr() {
        let video = LatentVideo::new(vec![frame(0.5), frame(0.1), frame(-0.2)]).unwrap();
        let conds = ConditionSet::new(vec![frame(0.5), frame(-0.2)], vec![0, 2]).unwrap();
        let m = metrics(&video, &conds).unwrap();
        assert_eq!(m.mse_at_conditions, 0.0);
        assert!(m.psnr_at_conditions.is_infinite());
        assert_eq!(m.to_json()["psnr_at_conditions"], "inf");
    }

    #[test]
    fn constant_video_has_no_temporal_energy() {
        let video = LatentVideo::repeat(&frame(0.3), 5).unwrap();
        let conds = ConditionSet::new(vec![frame(0.3)], vec![0]).unwrap();
        assert_eq!(metrics(&video, &conds).unwrap().temporal_energy, 0.0);
    }

    #[test]
    fn zeros_then_ones_has_unit_temporal_energy() {
        let video = LatentVideo::new(vec![frame(0.0), frame(1.0)]).unwrap();
        let conds = ConditionSet::new(vec![frame(0.0)], vec![0]).unwrap();
        assert_eq!(metrics(&video, &conds).unwrap().temporal_energy, 1.0);
    }

    #[test]
    fn mse_and_psnr_values() {
        let video = LatentVideo::new(vec![frame(0.5), frame(0.0)]).unwrap();
        let conds = ConditionSet::new(vec![frame(0.0), frame(0.0)], vec![0, 1]).unwrap();
        let m = metrics(&video, &conds).unwrap();
        assert!((m.mse_at_conditions - 0.125).abs() < 1e-12);
        assert!((m.psnr_at_conditions - 10.0 * 32f64.log10()).abs() < 1e-9);
    }

    #[test]
    fn mse_ignores_condition_order() {
        let video = LatentVideo::new(vec![frame(0.5), frame(0.1), frame(-0.2)]).unwrap();
        let a = ConditionSet::new(vec![frame(0.4), frame(0.0)], vec![0, 2]).unwrap();
        let b = ConditionSet::new(vec![frame(0.0), frame(0.4)], vec![0, 2]).unwrap();
        let swapped = LatentVideo::new(vec![frame(-0.2), frame(0.1), frame(0.5)]).unwrap();
        let ma = metrics(&video, &a).unwrap().mse_at_conditions;
        let mb = metrics(&swapped, &b).unwrap().mse_at_conditions;
        assert_eq!(ma, mb);
    }

    #[test]
    fn dims_must_agree() {
        let video = LatentVideo::repeat(&frame(0.0), 2).unwrap();
        let conds =
            ConditionSet::new(vec![LatentFrame::zeros(Dims::new(1, 3, 3))], vec![0]).unwrap();
        assert!(matches!(metrics(&video, &conds), Err(Error::Dimension(_))));
    }
}
