//! Quantization step controller.
//!
//! A single rate knob `d` sets, for every channel slice, a window
//! `[delta_min, delta_max]` of admissible step sizes: below `d = 1` early
//! slices may go finer than unit step, above it late slices may go coarser.
//! Inside that window each element's step is chosen from the hyperprior
//! scale: the largest scale in a channel gets `delta_min`, the smallest gets
//! `delta_max`.
//!
//! All arithmetic is `f32` with a fixed operation order, and the result is
//! snapped to multiples of [`STEP_QUANTUM`], so an encoder and a decoder
//! that see the same scale bits derive the same step bits.

use crate::error::{invalid, Error, Result};
use crate::tensor::{plane_extrema, LatentTensor, SliceLayout};

/// Step lattice spacing, 2^-12.
pub const STEP_QUANTUM: f32 = 1.0 / 4096.0;

/// Guard added to the per-channel scale span, 2^-20.
pub const DEFAULT_EPSILON: f32 = 1.0 / 1_048_576.0;

/// How the normalized scale position is turned into a step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mapping {
    Linear,
    /// Logistic curve with steepness `k`.
    Sigmoid { k: f32 },
}

impl Mapping {
    pub fn sigmoid(k: f32) -> Result<Self> {
        if !(k.is_finite() && k > 0.0) {
            return Err(invalid(format!("sigmoid steepness must be positive, got {k}")));
        }
        Ok(Mapping::Sigmoid { k })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateControl {
    d: f32,
    mapping: Mapping,
    epsilon: f32,
}

impl RateControl {
    pub fn new(d: f32, mapping: Mapping) -> Result<Self> {
        Self::with_epsilon(d, mapping, DEFAULT_EPSILON)
    }

    pub fn linear(d: f32) -> Result<Self> {
        Self::new(d, Mapping::Linear)
    }

    pub fn with_epsilon(d: f32, mapping: Mapping, epsilon: f32) -> Result<Self> {
        if !(d.is_finite() && d > 0.0) {
            return Err(invalid(format!("rate parameter d must be > 0, got {d}")));
        }
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(invalid(format!("epsilon must be > 0, got {epsilon}")));
        }
        if let Mapping::Sigmoid { k } = mapping {
            Mapping::sigmoid(k)?;
        }
        Ok(Self { d, mapping, epsilon })
    }

    pub fn d(&self) -> f32 {
        self.d
    }

    pub fn mapping(&self) -> Mapping {
        self.mapping
    }

    pub fn epsilon(&self) -> f32 {
        self.epsilon
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceBounds {
    pub delta_min: f32,
    pub delta_max: f32,
}

impl SliceBounds {
    pub const UNIT: SliceBounds = SliceBounds {
        delta_min: 1.0,
        delta_max: 1.0,
    };

    pub fn new(delta_min: f32, delta_max: f32) -> Result<Self> {
        if !(delta_min.is_finite() && delta_max.is_finite() && delta_min > 0.0)
            || delta_min > delta_max
        {
            return Err(invalid(format!(
                "step bounds must satisfy 0 < min <= max, got ({delta_min}, {delta_max})"
            )));
        }
        Ok(Self {
            delta_min,
            delta_max,
        })
    }

    pub fn contains(&self, delta: f32) -> bool {
        delta >= self.delta_min && delta <= self.delta_max
    }
}

/// Per-element quantization steps, same shape as the latent they apply to.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTensor(LatentTensor);

impl StepTensor {
    /// Every element set to `step`.
    pub fn uniform(channels: usize, height: usize, width: usize, step: f32) -> Result<Self> {
        if !(step.is_finite() && step > 0.0) {
            return Err(invalid(format!("quantization step must be > 0, got {step}")));
        }
        LatentTensor::filled(channels, height, width, step).map(StepTensor)
    }

    pub fn tensor(&self) -> &LatentTensor {
        &self.0
    }

    pub fn values(&self) -> &[f32] {
        self.0.values()
    }

    pub fn into_tensor(self) -> LatentTensor {
        self.0
    }
}

/// Step window for 1-based slice `n` of `layout`.
pub fn slice_bounds(rc: &RateControl, layout: &SliceLayout, n: usize) -> Result<SliceBounds> {
    let slices = layout.num_slices();
    if n == 0 || n > slices {
        return Err(invalid(format!("slice index {n} outside 1..={slices}")));
    }
    bounds_for(rc.d, n, slices)
}

pub(crate) fn bounds_for(d: f32, n: usize, slices: usize) -> Result<SliceBounds> {
    if !(d.is_finite() && d > 0.0) {
        return Err(invalid(format!("rate parameter d must be > 0, got {d}")));
    }
    let total = slices as f32;
    if d < 1.0 {
        let pos = (n - 1) as f32 / total;
        Ok(SliceBounds {
            delta_min: d + pos * (1.0 - d),
            delta_max: 1.0,
        })
    } else if d > 1.0 {
        let pos = n as f32 / total;
        Ok(SliceBounds {
            delta_min: 1.0,
            delta_max: 1.0 + pos * (d - 1.0),
        })
    } else {
        Ok(SliceBounds::UNIT)
    }
}

/// Snaps to the step lattice, then confines to `bounds`.
pub fn snap_step(delta: f32, bounds: SliceBounds) -> f32 {
    let snapped = ((delta * 4096.0).round() / 4096.0).max(STEP_QUANTUM);
    snapped.max(bounds.delta_min).min(bounds.delta_max)
}

fn fill_channel(plane: &[f32], bounds: SliceBounds, rc: &RateControl, out: &mut Vec<f32>) {
    let (lo, hi) = plane_extrema(plane);
    let span = (hi - lo) + rc.epsilon;
    let width = bounds.delta_max - bounds.delta_min;
    match rc.mapping {
        Mapping::Linear => out.extend(plane.iter().map(|&s| {
            let raw = bounds.delta_max - ((s - lo) * width) / span;
            snap_step(raw, bounds)
        })),
        Mapping::Sigmoid { k } => out.extend(plane.iter().map(|&s| {
            let norm = (s - lo) / span;
            let x = -k * (norm - 0.5);
            let gate = 1.0 / (1.0 + libm::expf(-x));
            snap_step(bounds.delta_min + gate * width, bounds)
        })),
    }
}

/// Spatially adaptive steps for one slice's scale field. Extrema are taken
/// per channel.
pub fn spatial_step_map(
    sigma_slice: &LatentTensor,
    bounds: SliceBounds,
    rc: &RateControl,
) -> Result<StepTensor> {
    let bounds = SliceBounds::new(bounds.delta_min, bounds.delta_max)?;
    let (c, h, w) = sigma_slice.shape();
    let mut out = Vec::with_capacity(sigma_slice.len());
    for ch in 0..c {
        fill_channel(sigma_slice.channel(ch)?, bounds, rc, &mut out);
    }
    Ok(StepTensor(LatentTensor::from_parts_unchecked(c, h, w, out)))
}

/// Steps for every latent channel. The hyper-latent is not covered here; it
/// always uses unit step.
pub fn full_step_tensor(
    sigma: &LatentTensor,
    layout: &SliceLayout,
    rc: &RateControl,
) -> Result<StepTensor> {
    layout.check_partitions(sigma.channels())?;
    let (c, h, w) = sigma.shape();
    let mut out = Vec::with_capacity(sigma.len());
    for (idx, range) in layout.ranges().enumerate() {
        let bounds = slice_bounds(rc, layout, idx + 1)?;
        for ch in range {
            fill_channel(sigma.channel(ch)?, bounds, rc, &mut out);
        }
    }
    if out.len() != sigma.len() {
        return Err(Error::ShapeMismatch("step tensor size".into()));
    }
    Ok(StepTensor(LatentTensor::from_parts_unchecked(c, h, w, out)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::SIGMA_FLOOR;
    use proptest::prelude::*;

    fn layout5() -> SliceLayout {
        SliceLayout::equal(10, 5).unwrap()
    }

    fn close(a: f32, b: f32) -> bool {
        (a - b).abs() <= 1e-6
    }

    #[test]
    fn unit_d_collapses_bounds() {
        let rc = RateControl::linear(1.0).unwrap();
        assert_eq!(slice_bounds(&rc, &layout5(), 3).unwrap(), SliceBounds::UNIT);
    }

    #[test]
    fn fine_side_bounds() {
        let rc = RateControl::linear(0.5).unwrap();
        let b1 = slice_bounds(&rc, &layout5(), 1).unwrap();
        let b5 = slice_bounds(&rc, &layout5(), 5).unwrap();
        assert!(close(b1.delta_min, 0.5) && b1.delta_max == 1.0);
        assert!(close(b5.delta_min, 0.9) && b5.delta_max == 1.0);
    }

    #[test]
    fn coarse_side_bounds() {
        let rc = RateControl::linear(8.0).unwrap();
        let b1 = slice_bounds(&rc, &layout5(), 1).unwrap();
        let b5 = slice_bounds(&rc, &layout5(), 5).unwrap();
        assert!(b1.delta_min == 1.0 && close(b1.delta_max, 2.4));
        assert!(b5.delta_min == 1.0 && close(b5.delta_max, 8.0));
    }

    #[test]
    fn invalid_inputs() {
        assert!(RateControl::linear(0.0).is_err());
        assert!(RateControl::linear(-1.0).is_err());
        assert!(RateControl::linear(f32::NAN).is_err());
        assert!(RateControl::new(2.0, Mapping::Sigmoid { k: 0.0 }).is_err());
        let rc = RateControl::linear(2.0).unwrap();
        assert!(slice_bounds(&rc, &layout5(), 0).is_err());
        assert!(slice_bounds(&rc, &layout5(), 6).is_err());
        let sigma = LatentTensor::filled(1, 2, 2, 1.0).unwrap();
        assert!(spatial_step_map(&sigma, SliceBounds { delta_min: 2.0, delta_max: 1.0 }, &rc).is_err());
        let sigma = LatentTensor::filled(9, 2, 2, 1.0).unwrap();
        assert!(full_step_tensor(&sigma, &layout5(), &rc).is_err());
    }

    #[test]
    fn constant_channel_takes_coarsest_step() {
        let sigma = LatentTensor::filled(2, 4, 4, 0.7).unwrap();
        let bounds = SliceBounds::new(1.0, 2.4).unwrap();
        let steps = spatial_step_map(&sigma, bounds, &RateControl::linear(8.0).unwrap()).unwrap();
        // 2.4 is off the step lattice; the nearest lattice point is 9830/4096
        assert!(steps.values().iter().all(|&d| d == 9830.0 / 4096.0));
        assert!((steps.values()[0] - 2.4).abs() <= STEP_QUANTUM / 2.0);
    }

    #[test]
    fn largest_scale_gets_finest_step() {
        let sigma = LatentTensor::new(1, 1, 4, vec![0.2, 0.9, 3.0, 1.4]).unwrap();
        let bounds = SliceBounds::new(1.0, 8.0).unwrap();
        let steps = spatial_step_map(&sigma, bounds, &RateControl::linear(8.0).unwrap()).unwrap();
        assert!((steps.values()[2] - 1.0).abs() <= STEP_QUANTUM);
        assert_eq!(steps.values()[0], 8.0);
    }

    #[test]
    fn sigmoid_midpoint_is_mean_of_bounds() {
        // sigma = 1.0 sits at normalized position 0.5 (up to epsilon).
        let sigma = LatentTensor::new(1, 1, 3, vec![0.5, 1.0, 1.5]).unwrap();
        let bounds = SliceBounds::new(1.0, 8.0).unwrap();
        let rc = RateControl::new(8.0, Mapping::Sigmoid { k: 5.0 }).unwrap();
        let steps = spatial_step_map(&sigma, bounds, &rc).unwrap();
        assert_eq!(steps.values()[1], 4.5);
    }

    #[test]
    fn unit_d_is_identity() {
        let sigma = LatentTensor::from_fn(10, 3, 3, |c, h, w| SIGMA_FLOOR + (c * 9 + h * 3 + w) as f32 * 0.37).unwrap();
        for mapping in [Mapping::Linear, Mapping::Sigmoid { k: 10.0 }] {
            let rc = RateControl::new(1.0, mapping).unwrap();
            let steps = full_step_tensor(&sigma, &layout5(), &rc).unwrap();
            assert!(steps.values().iter().all(|&d| d == 1.0));
        }
    }

    #[test]
    fn monotone_scale_reverses_step_order() {
        let sigma = LatentTensor::from_fn(5, 1, 8, |_, _, w| 0.2 + w as f32 * 0.5).unwrap();
        let layout = SliceLayout::equal(5, 5).unwrap();
        let steps = full_step_tensor(&sigma, &layout, &RateControl::linear(8.0).unwrap()).unwrap();
        for c in 0..5 {
            let ch = steps.tensor().channel(c).unwrap();
            assert!(ch.windows(2).all(|p| p[0] > p[1]), "channel {c}: {ch:?}");
        }
    }

    #[test]
    fn bounds_increase_with_slice_index() {
        let layout = SliceLayout::equal(20, 7).unwrap();
        for d in [0.1f32, 0.5, 0.99] {
            let rc = RateControl::linear(d).unwrap();
            let mins: Vec<f32> = (1..=7).map(|n| slice_bounds(&rc, &layout, n).unwrap().delta_min).collect();
            assert!(mins.windows(2).all(|p| p[0] < p[1]), "{mins:?}");
        }
        for d in [1.01f32, 2.0, 8.0, 100.0] {
            let rc = RateControl::linear(d).unwrap();
            let maxs: Vec<f32> = (1..=7).map(|n| slice_bounds(&rc, &layout, n).unwrap().delta_max).collect();
            assert!(maxs.windows(2).all(|p| p[0] < p[1]), "{maxs:?}");
        }
    }

    proptest! {
        #[test]
        fn steps_anti_monotone_and_confined(
            vals in proptest::collection::vec(SIGMA_FLOOR..6.0f32, 2..48),
            d in 0.05f32..20.0,
            sigmoid in any::<bool>(),
            k in 1.0f32..20.0,
        ) {
            let mapping = if sigmoid { Mapping::Sigmoid { k } } else { Mapping::Linear };
            let rc = RateControl::new(d, mapping).unwrap();
            let bounds = bounds_for(d, 2, 3).unwrap();
            let sigma = LatentTensor::new(1, 1, vals.len(), vals.clone()).unwrap();
            let steps = spatial_step_map(&sigma, bounds, &rc).unwrap();
            let s = steps.values();
            for i in 0..vals.len() {
                prop_assert!(bounds.contains(s[i]) && s[i] > 0.0);
                for j in 0..vals.len() {
                    if vals[i] > vals[j] {
                        prop_assert!(s[i] <= s[j]);
                    }
                }
            }
        }
    }
}
