//! Rate accounting, distortion, and Bjøntegaard delta rate.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::tensor::LatentTensor;

/// Estimated and measured bits of one coded image.
///
/// Measured bits count range-coder payload only; the fixed-size header and
/// segment framing are not included.
#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub slice_estimated_bits: Vec<f64>,
    pub slice_actual_bits: Vec<u64>,
    pub z_estimated_bits: f64,
    pub z_actual_bits: u64,
    pub source_pixels: u64,
}

impl RateReport {
    pub fn new(
        slice_estimated_bits: Vec<f64>,
        slice_actual_bits: Vec<u64>,
        z_estimated_bits: f64,
        z_actual_bits: u64,
        source_pixels: u64,
    ) -> Self {
        Self {
            slice_estimated_bits,
            slice_actual_bits,
            z_estimated_bits,
            z_actual_bits,
            source_pixels,
        }
    }

    pub fn total_bits(&self) -> u64 {
        self.z_actual_bits + self.slice_actual_bits.iter().sum::<u64>()
    }

    pub fn total_estimated_bits(&self) -> f64 {
        self.z_estimated_bits + self.slice_estimated_bits.iter().sum::<f64>()
    }

    pub fn bpp(&self) -> f64 {
        self.total_bits() as f64 / self.source_pixels as f64
    }

    pub fn estimated_bpp(&self) -> f64 {
        self.total_estimated_bits() / self.source_pixels as f64
    }
}

/// Mean squared error, optionally restricted to `mask`.
pub fn mse(a: &LatentTensor, b: &LatentTensor, mask: Option<&[bool]>) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut sum = 0.0f64;
    let mut count = 0usize;
    match mask {
        None => {
            for (&x, &y) in a.values().iter().zip(b.values()) {
                let d = x as f64 - y as f64;
                sum += d * d;
            }
            count = a.len();
        }
        Some(mask) => {
            if mask.len() != a.len() {
                return Err(Error::ShapeMismatch(format!(
                    "mask has {} entries, tensors have {}",
                    mask.len(),
                    a.len()
                )));
            }
            for ((&x, &y), &keep) in a.values().iter().zip(b.values()).zip(mask) {
                if keep {
                    let d = x as f64 - y as f64;
                    sum += d * d;
                    count += 1;
                }
            }
        }
    }
    if count == 0 {
        return Err(invalid("mse over an empty mask"));
    }
    Ok(sum / count as f64)
}

/// Marks, in every channel, the `ceil(H*W / 10)` elements with the largest
/// scale. Ties go to the lower spatial index.
pub fn high_sigma_mask(sigma: &LatentTensor) -> Vec<bool> {
    let plane = sigma.plane_len();
    let keep = plane.div_ceil(10);
    let mut mask = vec![false; sigma.len()];
    let mut order: Vec<usize> = Vec::with_capacity(plane);
    for c in 0..sigma.channels() {
        let ch = sigma.channel(c).expect("channel in range");
        order.clear();
        order.extend(0..plane);
        order.sort_by(|&i, &j| ch[j].total_cmp(&ch[i]).then(i.cmp(&j)));
        for &i in &order[..keep] {
            mask[c * plane + i] = true;
        }
    }
    mask
}

/// `-10 log10(mse)`.
pub fn quality_db(mse: f64) -> f64 {
    -10.0 * mse.log10()
}

/// Rate-quality operating points with strictly increasing rate.
#[derive(Debug, Clone, PartialEq)]
pub struct RdCurve {
    points: Vec<(f64, f64)>,
}

impl RdCurve {
    pub const MIN_POINTS: usize = 4;

    /// Sorts by rate; rejects duplicates, non-positive rates and curves
    /// shorter than four points.
    pub fn new(mut points: Vec<(f64, f64)>) -> Result<Self> {
        if points.len() < Self::MIN_POINTS {
            return Err(Error::Curve(format!(
                "need at least {} points, got {}",
                Self::MIN_POINTS,
                points.len()
            )));
        }
        if points
            .iter()
            .any(|&(r, q)| !(r.is_finite() && q.is_finite() && r > 0.0))
        {
            return Err(Error::Curve("rates must be positive and finite".into()));
        }
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        if points.windows(2).any(|p| p[0].0 == p[1].0) {
            return Err(Error::Curve("duplicate rate".into()));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn quality_range(&self) -> (f64, f64) {
        self.points
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, q)| {
                (lo.min(q), hi.max(q))
            })
    }
}

/// Least-squares cubic `ln(rate) = p((q - center) / scale)`.
#[derive(Debug, Clone, Copy)]
struct LogRateFit {
    coeffs: [f64; 4],
    center: f64,
    scale: f64,
}

impl LogRateFit {
    fn new(curve: &RdCurve) -> Result<Self> {
        let pts = curve.points();
        let n = pts.len();
        let center = pts.iter().map(|p| p.1).sum::<f64>() / n as f64;
        let scale = pts
            .iter()
            .map(|p| (p.1 - center).abs())
            .fold(0.0, f64::max);
        let mut distinct: Vec<f64> = pts.iter().map(|p| p.1).collect();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        if distinct.len() < 4 || scale == 0.0 {
            return Err(Error::Curve(
                "need four distinct quality values for a cubic fit".into(),
            ));
        }
        let design = DMatrix::from_fn(n, 4, |i, j| ((pts[i].1 - center) / scale).powi(j as i32));
        let target = DVector::from_iterator(n, pts.iter().map(|p| p.0.ln()));
        let sol = design
            .svd(true, true)
            .solve(&target, 1e-12)
            .map_err(|e| Error::Curve(e.to_string()))?;
        Ok(Self {
            coeffs: [sol[0], sol[1], sol[2], sol[3]],
            center,
            scale,
        })
    }

    /// Exact integral over quality `[lo, hi]`.
    fn integral(&self, lo: f64, hi: f64) -> f64 {
        let anti = |q: f64| {
            let x = (q - self.center) / self.scale;
            self.coeffs
                .iter()
                .enumerate()
                .map(|(j, c)| c * x.powi(j as i32 + 1) / (j as f64 + 1.0))
                .sum::<f64>()
        };
        self.scale * (anti(hi) - anti(lo))
    }
}

/// Average rate difference of `test` against `reference` over their common
/// quality interval, in percent. Negative means `test` is cheaper.
pub fn bd_rate(reference: &RdCurve, test: &RdCurve) -> Result<f64> {
    let (ref_lo, ref_hi) = reference.quality_range();
    let (test_lo, test_hi) = test.quality_range();
    let lo = ref_lo.max(test_lo);
    let hi = ref_hi.min(test_hi);
    if hi <= lo {
        return Err(Error::Curve(format!(
            "quality ranges [{ref_lo}, {ref_hi}] and [{test_lo}, {test_hi}] do not overlap"
        )));
    }
    let fit_ref = LogRateFit::new(reference)?;
    let fit_test = LogRateFit::new(test)?;
    let avg = (fit_test.integral(lo, hi) - fit_ref.integral(lo, hi)) / (hi - lo);
    Ok((avg.exp() - 1.0) * 100.0)
}
