//! Image conditioning of the video latent: frame replacement, bounded-image
//! lookup, the distance-dependent swap schedule and random patch swapping.

use crate::error::{Error, Result};
use crate::rng::{derive_stream, Purpose, RngState, StreamKey};
use crate::tensor::{ensure_same, LatentFrame, LatentVideo};

/// Which end of the step range the swap window covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WindowDirection {
    /// Active while `t <= t_tilde` (low step indices, late in sampling).
    #[default]
    PerAlgorithm,
    /// Active while `t > K - t_tilde` (high step indices, early in sampling).
    Inverted,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwapSchedule {
    pub p0: f64,
    pub t0: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub direction: WindowDirection,
}

impl Default for SwapSchedule {
    fn default() -> Self {
        Self {
            p0: 0.3,
            t0: 10.0,
            delta1: 5e-3,
            delta2: 0.3,
            direction: WindowDirection::PerAlgorithm,
        }
    }
}

/// Outcome of the swap schedule for one `(m, n, t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwapDecision {
    pub t_tilde: f64,
    pub active: bool,
    pub fraction: f64,
}

impl SwapSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p0) {
            return Err(Error::config(format!("p0 = {} outside [0, 1]", self.p0)));
        }
        for (name, v) in [
            ("t0", self.t0),
            ("delta1", self.delta1),
            ("delta2", self.delta2),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!(
                    "{name} = {v} must be finite and >= 0"
                )));
            }
        }
        Ok(())
    }

    /// Same `p0`/`t0` at every distance (no dynamic control).
    pub fn fixed(&self) -> Self {
        Self {
            delta1: 0.0,
            delta2: 0.0,
            ..*self
        }
    }

    /// Swap fraction at `distance` when the window is open.
    pub fn nominal_fraction(&self, distance: usize) -> f64 {
        (self.p0 - self.delta1 * distance as f64).max(0.0)
    }

    /// Swap window and fraction for a frame at `distance` from a condition
    /// image, at DDIM step `t` of `num_steps`.
    pub fn decide(&self, distance: usize, t: usize, num_steps: usize) -> SwapDecision {
        let d = distance as f64;
        let t_tilde = self.t0 - self.delta2 * d;
        let t = t as f64;
        let active = t_tilde > 0.0
            && match self.direction {
                WindowDirection::PerAlgorithm => t <= t_tilde,
                WindowDirection::Inverted => t > num_steps as f64 - t_tilde,
            };
        let fraction = if active {
            self.nominal_fraction(distance)
        } else {
            0.0
        };
        SwapDecision {
            t_tilde,
            active,
            fraction,
        }
    }
}

/// Swap fraction between frame `m` and condition `n` at step `t`.
pub fn swap_fraction(
    m: usize,
    n: usize,
    t: usize,
    num_steps: usize,
    sched: &SwapSchedule,
    positions: &[usize],
) -> f64 {
    sched
        .decide(m.abs_diff(positions[n]), t, num_steps)
        .fraction
}

/// Indices of the one or two condition images bounding a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bound {
    Single(usize),
    Pair(usize, usize),
}

impl Bound {
    pub fn indices(&self) -> impl Iterator<Item = usize> {
        let (a, b) = match *self {
            Bound::Single(n) => (n, None),
            Bound::Pair(a, b) => (a, Some(b)),
        };
        std::iter::once(a).chain(b)
    }
}

/// Nearest condition image(s) before and after frame `m`. `positions` must be
/// sorted ascending.
pub fn bound_index(m: usize, positions: &[usize]) -> Result<Bound> {
    let (first, last) = match (positions.first(), positions.last()) {
        (Some(&f), Some(&l)) => (f, l),
        _ => return Err(Error::config("bound_index needs at least one position")),
    };
    if m <= first {
        return Ok(Bound::Single(0));
    }
    if m >= last {
        return Ok(Bound::Single(positions.len() - 1));
    }
    match positions.binary_search(&m) {
        Ok(n) => Ok(Bound::Single(n)),
        Err(after) => Ok(Bound::Pair(after - 1, after)),
    }
}

/// Validates condition positions against a video of `num_frames`.
pub fn validate_positions(positions: &[usize], num_frames: usize) -> Result<()> {
    if positions.is_empty() {
        return Err(Error::config("at least one condition image is required"));
    }
    if let Some(&p) = positions.iter().find(|&&p| p >= num_frames) {
        return Err(Error::config(format!(
            "position {p} out of range for {num_frames} frames"
        )));
    }
    if positions.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config("positions must be strictly increasing"));
    }
    Ok(())
}

/// Overwrites the frames at `positions` with the matching condition latents.
pub fn frame_replace(
    z_t: &LatentVideo,
    conditions: &[LatentFrame],
    positions: &[usize],
) -> Result<LatentVideo> {
    if conditions.len() != positions.len() {
        return Err(Error::config(format!(
            "{} condition latents for {} positions",
            conditions.len(),
            positions.len()
        )));
    }
    validate_positions(positions, z_t.num_frames())?;
    for c in conditions {
        ensure_same(z_t.dims(), c.dims(), "condition latent")?;
    }
    let mut out = z_t.clone();
    for (c, &p) in conditions.iter().zip(positions) {
        out.set_frame(p, c.clone())?;
    }
    Ok(out)
}

/// Spatial `H×W` mask shared by every channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SwapMask {
    h: usize,
    w: usize,
    bits: Vec<bool>,
    ones: usize,
}

impl SwapMask {
    pub fn from_bits(h: usize, w: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != h * w {
            return Err(Error::dims(format!(
                "mask {h}×{w} needs {} bits, got {}",
                h * w,
                bits.len()
            )));
        }
        let ones = bits.iter().filter(|&&b| b).count();
        Ok(Self { h, w, bits, ones })
    }

    pub fn ones(&self) -> usize {
        self.ones
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.w + j]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }
}

/// Number of set positions for fraction `p` of an `h×w` grid.
pub fn mask_count(p: f64, h: usize, w: usize) -> usize {
    // f64::round rounds half away from zero
    ((p * (h * w) as f64).round() as usize).min(h * w)
}

/// Uniformly random mask with exactly `mask_count(p, h, w)` ones, chosen by a
/// partial Fisher–Yates shuffle.
pub fn gen_mask(p: f64, h: usize, w: usize, stream: &mut RngState) -> Result<SwapMask> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::config(format!("mask fraction {p} outside [0, 1]")));
    }
    let total = h * w;
    let ones = mask_count(p, h, w);
    let mut order: Vec<usize> = (0..total).collect();
    let mut bits = vec![false; total];
    for i in 0..ones {
        let j = i + stream.below((total - i) as u64) as usize;
        order.swap(i, j);
        bits[order[i]] = true;
    }
    Ok(SwapMask { h, w, bits, ones })
}

/// Copies `image` into `frame` wherever the mask is set.
pub fn patch_swap(
    frame: &LatentFrame,
    image: &LatentFrame,
    mask: &SwapMask,
) -> Result<LatentFrame> {
    let mut out = frame.clone();
    patch_swap_in_place(&mut out, image, mask)?;
    Ok(out)
}

fn patch_swap_in_place(
    frame: &mut LatentFrame,
    image: &LatentFrame,
    mask: &SwapMask,
) -> Result<()> {
    ensure_same(frame.dims(), image.dims(), "patch swap")?;
    let dims = frame.dims();
    if (mask.h, mask.w) != (dims.h, dims.w) {
        return Err(Error::dims(format!(
            "mask {}×{} vs frame {dims}",
            mask.h, mask.w
        )));
    }
    let plane = dims.spatial();
    let src = image.data();
    let dst = frame.data_mut();
    for (s, &on) in mask.bits.iter().enumerate() {
        if on {
            for c in 0..dims.c {
                dst[c * plane + s] = src[c * plane + s];
            }
        }
    }
    Ok(())
}

/// The mask stream for frame `m`, condition `n`, DDIM step `t`.
pub fn mask_stream(seed: u64, t: usize, m: usize, n: usize) -> RngState {
    derive_stream(StreamKey::new(
        seed,
        Purpose::Mask,
        t as u32,
        m as u32,
        n as u32,
    ))
}

/// Random patch swapping over all frames. Frames sitting on a condition
/// position are left alone; other frames swap with each bounding image in
/// ascending index order, later images overwriting earlier ones.
pub fn apply_conditioning(
    z_hat: &LatentVideo,
    conditions: &[LatentFrame],
    positions: &[usize],
    t: usize,
    num_steps: usize,
    sched: &SwapSchedule,
    seed: u64,
) -> Result<LatentVideo> {
    if conditions.len() != positions.len() {
        return Err(Error::config(format!(
            "{} condition latents for {} positions",
            conditions.len(),
            positions.len()
        )));
    }
    validate_positions(positions, z_hat.num_frames())?;
    let dims = z_hat.dims();
    for c in conditions {
        ensure_same(dims, c.dims(), "condition latent")?;
    }
    let mut out = z_hat.clone();
    for (m, frame) in out.frames_mut().iter_mut().enumerate() {
        if positions.binary_search(&m).is_ok() {
            continue;
        }
        for n in bound_index(m, positions)?.indices() {
            let p = swap_fraction(m, n, t, num_steps, sched, positions);
            if p <= 0.0 {
                continue;
            }
            let mask = gen_mask(p, dims.h, dims.w, &mut mask_stream(seed, t, m, n))?;
            patch_swap_in_place(frame, &conditions[n], &mask)?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{frame_bit_eq, Dims};
    use proptest::prelude::*;

    const DIMS: Dims = Dims::new(4, 8, 8);

    fn frame(v: f32) -> LatentFrame {
        LatentFrame::filled(DIMS, v)
    }

    fn ramp(offset: f32) -> LatentFrame {
        LatentFrame::from_vec(DIMS, (0..DIMS.len()).map(|i| i as f32 + offset).collect()).unwrap()
    }

    #[test]
    fn replace_single_position() {
        let z = LatentVideo::new(vec![frame(1.0), frame(2.0), frame(3.0)]).unwrap();
        let out = frame_replace(&z, &[frame(9.0)], &[1]).unwrap();
        assert_eq!(out.frame(0), &frame(1.0));
        assert_eq!(out.frame(1), &frame(9.0));
        assert_eq!(out.frame(2), &frame(3.0));
        let again = frame_replace(&out, &[frame(9.0)], &[1]).unwrap();
        assert!(again.bit_eq(&out));
    }

    #[test]
    fn replace_all_positions() {
        let z = LatentVideo::zeros(2, DIMS).unwrap();
        let conds = [ramp(0.0), ramp(1.0)];
        let out = frame_replace(&z, &conds, &[0, 1]).unwrap();
        assert_eq!(out.frames(), &conds);
    }

    #[test]
    fn replace_rejects_bad_positions() {
        let z = LatentVideo::zeros(3, DIMS).unwrap();
        assert!(frame_replace(&z, &[frame(1.0)], &[3]).is_err());
        assert!(frame_replace(&z, &[frame(1.0), frame(1.0)], &[1, 1]).is_err());
        assert!(frame_replace(&z, &[LatentFrame::zeros(Dims::new(1, 8, 8))], &[0]).is_err());
    }

    #[test]
    fn bounds() {
        assert_eq!(bound_index(7, &[0, 15]).unwrap(), Bound::Pair(0, 1));
        assert_eq!(bound_index(10, &[3]).unwrap(), Bound::Single(0));
        assert_eq!(bound_index(0, &[3]).unwrap(), Bound::Single(0));
        assert_eq!(bound_index(8, &[3, 8, 12]).unwrap(), Bound::Single(1));
        assert_eq!(bound_index(9, &[3, 8, 12]).unwrap(), Bound::Pair(1, 2));
        assert_eq!(bound_index(1, &[3, 8, 12]).unwrap(), Bound::Single(0));
        assert_eq!(bound_index(14, &[3, 8, 12]).unwrap(), Bound::Single(2));
        assert!(bound_index(1, &[]).is_err());
        assert_eq!(Bound::Pair(1, 2).indices().collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn schedule_spot_values() {
        let s = SwapSchedule::default();
        assert_eq!(swap_fraction(4, 0, 5, 20, &s, &[4]), 0.3);
        let d = s.decide(15, 5, 20);
        assert_eq!(d.t_tilde, 5.5);
        assert!(d.active);
        assert!((d.fraction - 0.225).abs() < 1e-15);
        let d = s.decide(15, 6, 20);
        assert!(!d.active);
        assert_eq!(d.fraction, 0.0);
    }

    #[test]
    fn schedule_inverted_window() {
        let s = SwapSchedule {
            direction: WindowDirection::Inverted,
            ..SwapSchedule::default()
        };
        // t_tilde = 10 at d = 0: active for t > 10
        assert!(!s.decide(0, 10, 20).active);
        assert!(s.decide(0, 11, 20).active);
        assert!(s.decide(0, 20, 20).active);
    }

    #[test]
    fn schedule_clamps() {
        let s = SwapSchedule {
            p0: 0.1,
            delta1: 0.05,
            t0: 3.0,
            delta2: 1.0,
            ..SwapSchedule::default()
        };
        let d = s.decide(2, 1, 20);
        assert!(d.active);
        assert_eq!(d.fraction, 0.0);
        // t_tilde <= 0 never activates, in either direction
        assert!(!s.decide(3, 0, 20).active);
        let inv = SwapSchedule {
            direction: WindowDirection::Inverted,
            ..s
        };
        assert!(!inv.decide(5, 20, 20).active);
    }

    #[test]
    fn fixed_schedule_ignores_distance() {
        let s = SwapSchedule::default().fixed();
        assert_eq!(s.decide(15, 10, 20).fraction, 0.3);
        assert_eq!(s.decide(15, 10, 20).t_tilde, 10.0);
    }

    #[test]
    fn mask_counts() {
        let mut st = mask_stream(1, 1, 1, 0);
        assert_eq!(gen_mask(0.0, 8, 8, &mut st).unwrap().ones(), 0);
        let full = gen_mask(1.0, 8, 8, &mut st).unwrap();
        assert_eq!(full.ones(), 64);
        assert!(full.bits().iter().all(|&b| b));
        assert_eq!(mask_count(0.3, 8, 8), 19);
        assert_eq!(mask_count(0.5 / 64.0, 8, 8), 1);
        assert!(gen_mask(1.2, 8, 8, &mut st).is_err());
    }

    #[test]
    fn swap_extremes() {
        let base = ramp(0.0);
        let img = ramp(1000.0);
        let none = SwapMask::from_bits(8, 8, vec![false; 64]).unwrap();
        let all = SwapMask::from_bits(8, 8, vec![true; 64]).unwrap();
        assert!(frame_bit_eq(
            &patch_swap(&base, &img, &none).unwrap(),
            &base
        ));
        assert_eq!(patch_swap(&base, &img, &all).unwrap(), img);
    }

    #[test]
    fn swap_sum_counts_channels() {
        let mask = gen_mask(0.3, 8, 8, &mut mask_stream(5, 3, 2, 0)).unwrap();
        let out = patch_swap(&frame(0.0), &frame(1.0), &mask).unwrap();
        let sum: f32 = out.data().iter().sum();
        assert_eq!(sum, (19 * DIMS.c) as f32);
    }

    #[test]
    fn swap_dims_checked() {
        let mask = SwapMask::from_bits(4, 4, vec![true; 16]).unwrap();
        assert!(patch_swap(&frame(0.0), &frame(1.0), &mask).is_err());
        let mask = SwapMask::from_bits(8, 8, vec![true; 64]).unwrap();
        assert!(patch_swap(&frame(0.0), &LatentFrame::zeros(Dims::new(3, 8, 8)), &mask).is_err());
    }

    #[test]
    fn zero_p0_changes_nothing() {
        let z = LatentVideo::new((0..5).map(|m| ramp(m as f32 * 100.0)).collect()).unwrap();
        let sched = SwapSchedule {
            p0: 0.0,
            ..SwapSchedule::default()
        };
        let out = apply_conditioning(&z, &[frame(-1.0)], &[2], 1, 20, &sched, 7).unwrap();
        assert!(out.bit_eq(&z));
    }

    #[test]
    fn two_bounds_compose_in_order() {
        let sched = SwapSchedule::default();
        let z = LatentVideo::new(vec![frame(0.0); 16]).unwrap();
        let conds = [frame(1.0), frame(2.0)];
        let positions = [0, 15];
        let (t, m, seed) = (3usize, 7usize, 11u64);
        let out = apply_conditioning(&z, &conds, &positions, t, 20, &sched, seed).unwrap();
        // rebuild the two masks independently and compose the swap by hand
        let masks: Vec<SwapMask> = (0..2)
            .map(|n| {
                let p = sched.decide(m.abs_diff(positions[n]), t, 20).fraction;
                gen_mask(p, 8, 8, &mut mask_stream(seed, t, m, n)).unwrap()
            })
            .collect();
        let f = out.frame(m);
        for i in 0..8 {
            for j in 0..8 {
                let expected = if masks[1].get(i, j) {
                    2.0
                } else if masks[0].get(i, j) {
                    1.0
                } else {
                    0.0
                };
                for c in 0..4 {
                    assert_eq!(f.get(c, i, j), expected);
                }
            }
        }
        assert!(masks.iter().all(|mk| mk.ones() > 0));
    }

    #[test]
    fn condition_frames_skipped() {
        let z = LatentVideo::new(vec![frame(0.0); 4]).unwrap();
        let sched = SwapSchedule {
            p0: 1.0,
            ..SwapSchedule::default()
        };
        let out =
            apply_conditioning(&z, &[frame(5.0), frame(6.0)], &[1, 3], 1, 20, &sched, 0).unwrap();
        assert_eq!(out.frame(1), &frame(0.0));
        assert_eq!(out.frame(3), &frame(0.0));
        assert_eq!(out.frame(0), &frame(5.0));
        assert_eq!(out.frame(2), &frame(6.0));
    }

    #[test]
    fn conditioning_deterministic() {
        let z = LatentVideo::new((0..6).map(|m| ramp(m as f32)).collect()).unwrap();
        let conds = [ramp(-50.0), ramp(50.0)];
        let a =
            apply_conditioning(&z, &conds, &[0, 5], 2, 20, &SwapSchedule::default(), 99).unwrap();
        let b =
            apply_conditioning(&z, &conds, &[0, 5], 2, 20, &SwapSchedule::default(), 99).unwrap();
        assert!(a.bit_eq(&b));
        assert!(!a.bit_eq(&z));
    }

    proptest! {
        #[test]
        fn mask_has_exact_count(p in 0.0f64..=1.0, h in 1usize..12, w in 1usize..12, seed in any::<u64>()) {
            let mask = gen_mask(p, h, w, &mut RngState::from_seed(seed)).unwrap();
            prop_assert_eq!(mask.ones(), mask_count(p, h, w));
            prop_assert_eq!(mask.bits().iter().filter(|&&b| b).count(), mask.ones());
        }

        #[test]
        fn swapped_set_is_channel_shared(seed in any::<u64>(), p in 0.0f64..=1.0) {
            let mask = gen_mask(p, 8, 8, &mut RngState::from_seed(seed)).unwrap();
            let out = patch_swap(&ramp(0.0), &ramp(0.5), &mask).unwrap();
            for i in 0..8 {
                for j in 0..8 {
                    let changed: Vec<bool> = (0..4).map(|c| out.get(c, i, j) != ramp(0.0).get(c, i, j)).collect();
                    prop_assert!(changed.iter().all(|&x| x == changed[0]));
                    prop_assert_eq!(changed[0], mask.get(i, j));
                }
            }
        }

        #[test]
        fn strength_non_increasing_with_distance(
            p0 in 0.0f64..=1.0, t0 in 0.0f64..30.0, d1 in 0.0f64..0.1, d2 in 0.0f64..2.0,
            t in 1usize..=20, d in 0usize..15,
        ) {
            let s = SwapSchedule { p0, t0, delta1: d1, delta2: d2, direction: WindowDirection::PerAlgorithm };
            let near = s.decide(d, t, 20);
            let far = s.decide(d + 1, t, 20);
            prop_assert!(far.t_tilde <= near.t_tilde);
            prop_assert!(far.fraction <= near.fraction);
        }

        #[test]
        fn conditioning_leaves_conditions_intact(seed in any::<u64>(), t in 1usize..=20) {
            let conds = vec![ramp(0.25), ramp(-0.25)];
            let before = conds.clone();
            let z = LatentVideo::new(vec![frame(0.0); 16]).unwrap();
            let z_hat = frame_replace(&z, &conds, &[0, 15]).unwrap();
            let out = apply_conditioning(&z_hat, &conds, &[0, 15], t, 20, &SwapSchedule::default(), seed).unwrap();
            prop_assert_eq!(&conds, &before);
            prop_assert!(frame_bit_eq(out.frame(0), &conds[0]));
            prop_assert!(frame_bit_eq(out.frame(15), &conds[1]));
        }
    }
}
