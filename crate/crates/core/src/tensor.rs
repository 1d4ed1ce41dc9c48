//! Dense latent tensors, slice layouts and the parameter bundles that travel
//! with them.
//!
//! All tensors are channel-major (`c * H * W + h * W + w`) and hold `f32`.
//! Nothing here mutates after construction.

use std::ops::Range;

use crate::entropy::FactorizedModel;
use crate::error::{invalid, Error, Result};

/// Lower clamp applied to every scale parameter on ingestion.
pub const SIGMA_FLOOR: f32 = 0.11;

/// A `C x H x W` array of finite `f32` values.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTensor {
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl LatentTensor {
    pub fn new(channels: usize, height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(invalid(format!(
                "tensor dimensions must be positive, got {channels}x{height}x{width}"
            )));
        }
        let expected = channels
            .checked_mul(height)
            .and_then(|v| v.checked_mul(width))
            .ok_or_else(|| invalid("tensor dimensions overflow"))?;
        if values.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "{channels}x{height}x{width} tensor needs {expected} values, got {}",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("non-finite value at flat index {pos}")));
        }
        Ok(Self {
            channels,
            height,
            width,
            values,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Result<Self> {
        let len = channels * height * width;
        Self::new(channels, height, width, vec![value; len])
    }

    /// Builds a tensor by evaluating `f(c, h, w)` in channel-major order.
    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for h in 0..height {
                for w in 0..width {
                    values.push(f(c, h, w));
                }
            }
        }
        Self::new(channels, height, width, values)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    /// Number of elements in one channel plane.
    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn flat_index(&self, c: usize, h: usize, w: usize) -> Result<usize> {
        if c >= self.channels || h >= self.height || w >= self.width {
            return Err(Error::OutOfBounds {
                c,
                h,
                w,
                channels: self.channels,
                height: self.height,
                width: self.width,
            });
        }
        Ok(c * self.plane_len() + h * self.width + w)
    }

    /// Inverse of [`flat_index`](Self::flat_index).
    pub fn coords(&self, flat: usize) -> Option<(usize, usize, usize)> {
        if flat >= self.values.len() {
            return None;
        }
        let plane = self.plane_len();
        Some((flat / plane, (flat % plane) / self.width, flat % self.width))
    }

    pub fn index(&self, c: usize, h: usize, w: usize) -> Result<f32> {
        self.flat_index(c, h, w).map(|i| self.values[i])
    }

    /// The `H * W` values of channel `c`.
    pub fn channel(&self, c: usize) -> Result<&[f32]> {
        if c >= self.channels {
            return Err(Error::OutOfBounds {
                c,
                h: 0,
                w: 0,
                channels: self.channels,
                height: self.height,
                width: self.width,
            });
        }
        let plane = self.plane_len();
        Ok(&self.values[c * plane..(c + 1) * plane])
    }

    /// Copies out the contiguous channel range `channels`.
    pub fn channel_range(&self, channels: Range<usize>) -> Result<LatentTensor> {
        if channels.start >= channels.end || channels.end > self.channels {
            return Err(invalid(format!(
                "channel range {channels:?} invalid for {} channels",
                self.channels
            )));
        }
        let plane = self.plane_len();
        Ok(LatentTensor {
            channels: channels.len(),
            height: self.height,
            width: self.width,
            values: self.values[channels.start * plane..channels.end * plane].to_vec(),
        })
    }

    /// Stacks tensors with identical spatial size along the channel axis.
    pub fn concat_channels(parts: &[LatentTensor]) -> Result<LatentTensor> {
        let first = parts
            .first()
            .ok_or_else(|| invalid("cannot concatenate zero tensors"))?;
        let (h, w) = (first.height, first.width);
        let mut values = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
        let mut channels = 0;
        for p in parts {
            if p.height != h || p.width != w {
                return Err(Error::ShapeMismatch(format!(
                    "cannot stack {}x{} plane onto {h}x{w}",
                    p.height, p.width
                )));
            }
            channels += p.channels;
            values.extend_from_slice(&p.values);
        }
        Ok(LatentTensor {
            channels,
            height: h,
            width: w,
            values,
        })
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<LatentTensor> {
        Self::new(
            self.channels,
            self.height,
            self.width,
            self.values.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn same_shape(&self, other: &LatentTensor) -> bool {
        self.shape() == other.shape()
    }

    pub(crate) fn from_parts_unchecked(
        channels: usize,
        height: usize,
        width: usize,
        values: Vec<f32>,
    ) -> Self {
        debug_assert_eq!(values.len(), channels * height * width);
        Self {
            channels,
            height,
            width,
            values,
        }
    }
}

/// Minimum and maximum of channel `c`.
pub fn channel_extrema(sigma: &LatentTensor, c: usize) -> Result<(f32, f32)> {
    Ok(plane_extrema(sigma.channel(c)?))
}

pub(crate) fn plane_extrema(plane: &[f32]) -> (f32, f32) {
    plane
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
}

/// Partition of the latent channels into `N` ordered, contiguous slices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SliceLayout {
    counts: Vec<usize>,
}

impl SliceLayout {
    pub const DEFAULT_SLICES: usize = 5;

    pub fn new(counts: Vec<usize>) -> Result<Self> {
        if counts.is_empty() {
            return Err(invalid("slice layout needs at least one slice"));
        }
        if counts.contains(&0) {
            return Err(invalid("every slice must hold at least one channel"));
        }
        Ok(Self { counts })
    }

    /// `n` equal slices; remainder channels go to the last slice.
    pub fn equal(channels: usize, n: usize) -> Result<Self> {
        if n == 0 || n > channels {
            return Err(invalid(format!(
                "cannot split {channels} channels into {n} slices"
            )));
        }
        let base = channels / n;
        let mut counts = vec![base; n];
        counts[n - 1] += channels - base * n;
        Self::new(counts)
    }

    pub fn num_slices(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn total_channels(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Channel range of 1-based slice `n`.
    pub fn range(&self, n: usize) -> Result<Range<usize>> {
        if n == 0 || n > self.counts.len() {
            return Err(invalid(format!(
                "slice index {n} outside 1..={}",
                self.counts.len()
            )));
        }
        let start: usize = self.counts[..n - 1].iter().sum();
        Ok(start..start + self.counts[n - 1])
    }

    pub fn ranges(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        self.counts.iter().scan(0usize, |start, &c| {
            let r = *start..*start + c;
            *start += c;
            Some(r)
        })
    }

    pub fn check_partitions(&self, channels: usize) -> Result<()> {
        if self.total_channels() != channels {
            return Err(Error::LayoutMismatch(format!(
                "layout covers {} channels, tensor has {channels}",
                self.total_channels()
            )));
        }
        Ok(())
    }
}

/// Mean and scale fields of the Gaussian coding distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyParams {
    mu: LatentTensor,
    sigma: LatentTensor,
}

impl EntropyParams {
    /// Clamps `sigma` to [`SIGMA_FLOOR`].
    pub fn new(mu: LatentTensor, sigma: LatentTensor) -> Result<Self> {
        if !mu.same_shape(&sigma) {
            return Err(Error::ShapeMismatch(format!(
                "mu is {:?}, sigma is {:?}",
                mu.shape(),
                sigma.shape()
            )));
        }
        let sigma = clamp_sigma(sigma);
        Ok(Self { mu, sigma })
    }

    pub fn mu(&self) -> &LatentTensor {
        &self.mu
    }

    pub fn sigma(&self) -> &LatentTensor {
        &self.sigma
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.mu.shape()
    }
}

pub(crate) fn clamp_sigma(mut sigma: LatentTensor) -> LatentTensor {
    for v in &mut sigma.values {
        *v = v.max(SIGMA_FLOOR);
    }
    sigma
}

/// Integer hyper-latent symbols plus the per-channel factorized model used
/// to code them at unit step.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperLatent {
    channels: usize,
    height: usize,
    width: usize,
    symbols: Vec<i32>,
    model: FactorizedModel,
}

impl HyperLatent {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        symbols: Vec<i32>,
        model: FactorizedModel,
    ) -> Result<Self> {
        if symbols.len() != channels * height * width {
            return Err(Error::ShapeMismatch(format!(
                "{channels}x{height}x{width} hyper-latent needs {} symbols, got {}",
                channels * height * width,
                symbols.len()
            )));
        }
        if !symbols.is_empty() && model.channels() != channels {
            return Err(Error::ShapeMismatch(format!(
                "factorized model has {} channels, hyper-latent has {channels}",
                model.channels()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            symbols,
            model,
        })
    }

    /// Converts a float tensor of integer values.
    pub fn from_tensor(z: &LatentTensor, model: FactorizedModel) -> Result<Self> {
        let mut symbols = Vec::with_capacity(z.len());
        for (i, &v) in z.values().iter().enumerate() {
            if v.fract() != 0.0 || v.abs() > i32::MAX as f32 {
                return Err(invalid(format!("hyper-latent value {v} at {i} is not an integer")));
            }
            symbols.push(v as i32);
        }
        Self::new(z.channels(), z.height(), z.width(), symbols, model)
    }

    pub fn to_tensor(&self) -> Result<LatentTensor> {
        LatentTensor::new(
            self.channels,
            self.height,
            self.width,
            self.symbols.iter().map(|&s| s as f32).collect(),
        )
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn symbols(&self) -> &[i32] {
        &self.symbols
    }

    pub fn model(&self) -> &FactorizedModel {
        &self.model
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }
}
