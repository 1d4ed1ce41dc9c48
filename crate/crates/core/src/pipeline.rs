//! Slice-sequential encoder and decoder.
//!
//! The hyper-latent is coded first at unit step. Latent slices follow in
//! order; the entropy parameters of slice `n` come from the context model,
//! which may look at the base parameters and the already reconstructed
//! slices `1..n` but never at slice `n` itself. The encoder feeds its own
//! reconstruction into the context so both sides see identical inputs.

use crate::bitstream::{symbol_checksum, Bitstream, Header, QuantMode, Segment};
use crate::controller::{bounds_for, spatial_step_map, RateControl, SliceBounds};
use crate::entropy::{alphabet_halfwidth, factorized_z_bits, FactorizedModel, SymbolCdf, SymbolModel};
use crate::error::{invalid, Error, Result, Segment as SegmentId};
use crate::metrics::RateReport;
use crate::range_coder::{RangeDecoder, RangeEncoder};
use crate::tensor::{EntropyParams, HyperLatent, LatentTensor, SliceLayout, SIGMA_FLOOR};

/// Weight of the previous slice's mean residual in the toy context.
const TOY_MIX: f32 = 0.1;

/// Predicts each slice's entropy parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ContextModel {
    /// Slice parameters are the hyperprior's, unchanged.
    #[default]
    HyperpriorOnly,
    /// Shifts the mean (and mildly widens the scale) of each channel by the
    /// mean reconstruction residual of a seed-chosen channel of the previous
    /// slice. Exists to make causality errors observable.
    ToyAutoregressive { seed: u64 },
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

impl ContextModel {
    /// `(mu, sigma)` for the channels of slice `n`, given the reconstruction
    /// of every channel before it (`decoded_prefix`, channel-major).
    pub fn slice_params(
        &self,
        base: &EntropyParams,
        layout: &SliceLayout,
        n: usize,
        decoded_prefix: &[f32],
    ) -> Result<(Vec<f32>, Vec<f32>)> {
        let range = layout.range(n)?;
        let plane = base.mu().plane_len();
        if decoded_prefix.len() != range.start * plane {
            return Err(invalid(format!(
                "slice {n} context needs {} decoded values, got {}",
                range.start * plane,
                decoded_prefix.len()
            )));
        }
        let span = range.start * plane..range.end * plane;
        let mut mu = base.mu().values()[span.clone()].to_vec();
        let mut sigma = base.sigma().values()[span].to_vec();
        let seed = match *self {
            ContextModel::HyperpriorOnly => return Ok((mu, sigma)),
            ContextModel::ToyAutoregressive { seed } => seed,
        };
        if n == 1 {
            return Ok((mu, sigma));
        }
        let prev = layout.range(n - 1)?;
        let residual_means: Vec<f32> = prev
            .clone()
            .map(|ch| {
                let at = ch * plane..(ch + 1) * plane;
                let sum: f64 = decoded_prefix[at.clone()]
                    .iter()
                    .zip(&base.mu().values()[at])
                    .map(|(&y, &m)| (y - m) as f64)
                    .sum();
                (sum / plane as f64) as f32
            })
            .collect();
        for (i, ch) in range.enumerate() {
            let src = (splitmix64(seed ^ (ch as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93))
                % prev.len() as u64) as usize;
            let m = residual_means[src];
            let shift = TOY_MIX * m;
            let widen = 1.0 + TOY_MIX * m.abs().min(1.0);
            for j in i * plane..(i + 1) * plane {
                mu[j] += shift;
                sigma[j] = (sigma[j] * widen).max(SIGMA_FLOOR);
            }
        }
        Ok((mu, sigma))
    }
}

/// Image-independent coding settings.
#[derive(Debug, Clone, PartialEq)]
pub struct CodecSetup {
    pub layout: SliceLayout,
    pub context: ContextModel,
    /// Pixel count of the source image, the bpp denominator.
    pub source_pixels: u64,
}

impl CodecSetup {
    pub fn new(layout: SliceLayout, context: ContextModel, source_pixels: u64) -> Result<Self> {
        if source_pixels == 0 {
            return Err(invalid("source pixel count must be positive"));
        }
        Ok(Self {
            layout,
            context,
            source_pixels,
        })
    }
}

/// Reconstruction plus everything needed to audit it.
#[derive(Debug, Clone, PartialEq)]
pub struct CodingResult {
    pub y_hat: LatentTensor,
    /// Means the symbols are relative to, as produced by the context.
    pub mu: LatentTensor,
    /// Scales used for modelling and step selection.
    pub sigma: LatentTensor,
    pub steps: LatentTensor,
    /// Transmitted symbols, channel-major; zero for untransmitted slices.
    pub symbols: Vec<i32>,
    pub z_hat: HyperLatent,
    pub rate: RateReport,
}

/// Supplies what the decoder would get from the hyper-synthesis transform.
pub trait HyperDecoder {
    fn factorized_model(&self) -> &FactorizedModel;
    fn base_params(&self, z_hat: &HyperLatent) -> Result<EntropyParams>;
}

/// Stand-in hyper-synthesis that returns known parameters once the decoded
/// hyper-latent matches the one they belong to.
#[derive(Debug, Clone)]
pub struct KnownParams {
    pub params: EntropyParams,
    pub z: HyperLatent,
}

impl KnownParams {
    pub fn new(params: EntropyParams, z: HyperLatent) -> Self {
        Self { params, z }
    }
}

impl HyperDecoder for KnownParams {
    fn factorized_model(&self) -> &FactorizedModel {
        self.z.model()
    }

    fn base_params(&self, z_hat: &HyperLatent) -> Result<EntropyParams> {
        if z_hat.shape() != self.z.shape() || z_hat.symbols() != self.z.symbols() {
            return Err(Error::Format(
                "decoded hyper-latent does not match the supplied parameters".into(),
            ));
        }
        Ok(self.params.clone())
    }
}

fn slice_steps(
    quant: &QuantMode,
    sigma: &[f32],
    channels: usize,
    height: usize,
    width: usize,
    n: usize,
    slices: usize,
) -> Result<Vec<f32>> {
    match quant {
        QuantMode::Uniform { step } => Ok(vec![*step; sigma.len()]),
        QuantMode::Adaptive(rc) => {
            let bounds: SliceBounds = bounds_for(rc.d(), n, slices)?;
            let sigma = LatentTensor::from_parts_unchecked(channels, height, width, sigma.to_vec());
            Ok(spatial_step_map(&sigma, bounds, rc)?.into_tensor().into_values())
        }
    }
}

fn element_model(mu: f32, sigma: f32, delta: f32) -> SymbolModel {
    SymbolModel::from_parts(mu, sigma, delta, alphabet_halfwidth(sigma, delta))
}

fn check_inputs(y: &LatentTensor, base: &EntropyParams, z: &HyperLatent, setup: &CodecSetup) -> Result<()> {
    if y.shape() != base.shape() {
        return Err(Error::ShapeMismatch(format!(
            "latent is {:?}, parameters are {:?}",
            y.shape(),
            base.shape()
        )));
    }
    setup.layout.check_partitions(y.channels())?;
    if !z.symbols().is_empty() && z.model().channels() != z.shape().0 {
        return Err(Error::ShapeMismatch("hyper-latent model channel count".into()));
    }
    Ok(())
}

fn encode_z(z: &HyperLatent) -> (Segment, f64) {
    let mut enc = RangeEncoder::new();
    let plane = z.plane_len();
    let mut coded = Vec::with_capacity(z.symbols().len());
    if plane > 0 {
        for (symbols, table) in z.symbols().chunks(plane).zip(z.model().tables()) {
            for &s in symbols {
                let s = table.fold(s);
                enc.encode_symbol(table, s);
                coded.push(s);
            }
        }
    }
    let seg = Segment {
        payload: enc.finish(),
        checksum: symbol_checksum(&coded),
    };
    (seg, factorized_z_bits(z))
}

/// Encodes with the adaptive controller at rate setting `rc`.
pub fn encode(
    y: &LatentTensor,
    base: &EntropyParams,
    z: &HyperLatent,
    setup: &CodecSetup,
    rc: RateControl,
) -> Result<(Bitstream, CodingResult)> {
    encode_with(y, base, z, setup, QuantMode::Adaptive(rc))
}

/// Baseline: one global step for every latent element.
pub fn encode_nonadaptive(
    y: &LatentTensor,
    base: &EntropyParams,
    z: &HyperLatent,
    setup: &CodecSetup,
    step: f32,
) -> Result<(Bitstream, CodingResult)> {
    if !(step.is_finite() && step > 0.0) {
        return Err(invalid(format!("quantization step must be > 0, got {step}")));
    }
    encode_with(y, base, z, setup, QuantMode::Uniform { step })
}

pub fn encode_with(
    y: &LatentTensor,
    base: &EntropyParams,
    z: &HyperLatent,
    setup: &CodecSetup,
    quant: QuantMode,
) -> Result<(Bitstream, CodingResult)> {
    check_inputs(y, base, z, setup)?;
    let quant = quant.canonical();
    let (c, h, w) = y.shape();
    let plane = h * w;
    let slices = setup.layout.num_slices();

    let (z_segment, z_est) = encode_z(z);

    let mut y_hat = Vec::with_capacity(y.len());
    let mut mu_all = Vec::with_capacity(y.len());
    let mut sigma_all = Vec::with_capacity(y.len());
    let mut steps_all = Vec::with_capacity(y.len());
    let mut symbols = Vec::with_capacity(y.len());
    let mut segments = Vec::with_capacity(slices);
    let mut slice_est = Vec::with_capacity(slices);

    for (idx, range) in setup.layout.ranges().enumerate() {
        let n = idx + 1;
        let (mu, sigma) = setup.context.slice_params(base, &setup.layout, n, &y_hat)?;
        let steps = slice_steps(&quant, &sigma, range.len(), h, w, n, slices)?;
        let values = &y.values()[range.start * plane..range.end * plane];
        let mut enc = RangeEncoder::new();
        let mut est = 0.0;
        let first = symbols.len();
        for i in 0..values.len() {
            let m = element_model(mu[i], sigma[i], steps[i]);
            let k = m.quantize(values[i]);
            est += m.estimate_bits(k);
            enc.encode_symbol(&m, k);
            symbols.push(k);
            y_hat.push(m.reconstruct(k));
        }
        segments.push(Segment {
            payload: enc.finish(),
            checksum: symbol_checksum(&symbols[first..]),
        });
        slice_est.push(est);
        mu_all.extend(mu);
        sigma_all.extend(sigma);
        steps_all.extend(steps);
    }

    let header = Header {
        shape: (c, h, w),
        source_pixels: setup.source_pixels,
        layout: setup.layout.clone(),
        quant,
        context: setup.context,
        flags: 0,
        z_shape: z.shape(),
    };
    let rate = RateReport::new(
        slice_est,
        segments.iter().map(|s| s.payload.len() as u64 * 8).collect(),
        z_est,
        z_segment.payload.len() as u64 * 8,
        setup.source_pixels,
    );
    let result = CodingResult {
        y_hat: LatentTensor::new(c, h, w, y_hat)?,
        mu: LatentTensor::from_parts_unchecked(c, h, w, mu_all),
        sigma: LatentTensor::from_parts_unchecked(c, h, w, sigma_all),
        steps: LatentTensor::from_parts_unchecked(c, h, w, steps_all),
        symbols,
        z_hat: z.clone(),
        rate,
    };
    let bitstream = Bitstream {
        header,
        z: z_segment,
        slices: segments,
    };
    Ok((bitstream, result))
}

fn decode_z(bs: &Bitstream, hyper: &dyn HyperDecoder) -> Result<HyperLatent> {
    let (zc, zh, zw) = bs.header.z_shape;
    let model = hyper.factorized_model().clone();
    let count = zc * zh * zw;
    if count > 0 && model.channels() != zc {
        return Err(Error::ShapeMismatch(format!(
            "bitstream hyper-latent has {zc} channels, model has {}",
            model.channels()
        )));
    }
    let mut dec = RangeDecoder::new(&bs.z.payload);
    let mut symbols = Vec::with_capacity(count);
    for table in model.tables().iter().take(if count > 0 { zc } else { 0 }) {
        for _ in 0..zh * zw {
            symbols.push(dec.decode_symbol(table));
        }
    }
    if symbol_checksum(&symbols) != bs.z.checksum {
        return Err(Error::Corrupt(SegmentId::HyperLatent));
    }
    HyperLatent::new(zc, zh, zw, symbols, model)
}

/// Full decode.
pub fn decode(bs: &Bitstream, hyper: &dyn HyperDecoder) -> Result<CodingResult> {
    decode_slices(bs, hyper, bs.header.layout.num_slices())
}

/// Decodes the first `n_keep` slices and substitutes the context mean for
/// the rest. Only defined for unit-step bitstreams.
pub fn decode_progressive(bs: &Bitstream, hyper: &dyn HyperDecoder, n_keep: usize) -> Result<CodingResult> {
    let slices = bs.header.layout.num_slices();
    if n_keep > slices {
        return Err(invalid(format!("cannot keep {n_keep} of {slices} slices")));
    }
    if bs.header.quant.canonical() != QuantMode::Adaptive(RateControl::linear(1.0)?) {
        return Err(invalid("progressive decoding requires a bitstream coded at d = 1"));
    }
    decode_slices(bs, hyper, n_keep)
}

fn decode_slices(bs: &Bitstream, hyper: &dyn HyperDecoder, n_keep: usize) -> Result<CodingResult> {
    let header = &bs.header;
    let (c, h, w) = header.shape;
    let plane = h * w;
    let slices = header.layout.num_slices();
    if bs.slices.len() != slices {
        return Err(Error::Format("segment count does not match layout".into()));
    }
    let z_hat = decode_z(bs, hyper)?;
    let base = hyper.base_params(&z_hat)?;
    if base.shape() != header.shape {
        return Err(Error::ShapeMismatch(format!(
            "bitstream latent is {:?}, supplied parameters are {:?}",
            header.shape,
            base.shape()
        )));
    }

    let total = c * plane;
    let mut y_hat = Vec::with_capacity(total);
    let mut mu_all = Vec::with_capacity(total);
    let mut sigma_all = Vec::with_capacity(total);
    let mut steps_all = Vec::with_capacity(total);
    let mut symbols = Vec::with_capacity(total);
    let mut slice_est = Vec::with_capacity(slices);
    let mut slice_bits = Vec::with_capacity(slices);

    for (idx, range) in header.layout.ranges().enumerate() {
        let n = idx + 1;
        let (mu, sigma) = header.context.slice_params(&base, &header.layout, n, &y_hat)?;
        let steps = slice_steps(&header.quant, &sigma, range.len(), h, w, n, slices)?;
        if n <= n_keep {
            let seg = &bs.slices[idx];
            let mut dec = RangeDecoder::new(&seg.payload);
            let first = symbols.len();
            let mut est = 0.0;
            for i in 0..mu.len() {
                let m = element_model(mu[i], sigma[i], steps[i]);
                let k = dec.decode_symbol(&m);
                debug_assert!(k >= m.min_symbol() && k <= m.max_symbol());
                est += m.estimate_bits(k);
                symbols.push(k);
                y_hat.push(m.reconstruct(k));
            }
            if symbol_checksum(&symbols[first..]) != seg.checksum {
                return Err(Error::Corrupt(SegmentId::Slice(n)));
            }
            slice_est.push(est);
            slice_bits.push(seg.payload.len() as u64 * 8);
        } else {
            symbols.extend(std::iter::repeat_n(0, mu.len()));
            y_hat.extend_from_slice(&mu);
            slice_est.push(0.0);
            slice_bits.push(0);
        }
        mu_all.extend(mu);
        sigma_all.extend(sigma);
        steps_all.extend(steps);
    }

    let rate = RateReport::new(
        slice_est,
        slice_bits,
        factorized_z_bits(&z_hat),
        bs.z.payload.len() as u64 * 8,
        header.source_pixels,
    );
    Ok(CodingResult {
        y_hat: LatentTensor::new(c, h, w, y_hat)?,
        mu: LatentTensor::from_parts_unchecked(c, h, w, mu_all),
        sigma: LatentTensor::from_parts_unchecked(c, h, w, sigma_all),
        steps: LatentTensor::from_parts_unchecked(c, h, w, steps_all),
        symbols,
        z_hat,
        rate,
    })
}
