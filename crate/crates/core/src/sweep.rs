//! Rate-distortion sweeps over a corpus and the mapping ablation report.
//!
//! Sweep CSV columns:
//!
//! ```text
//! method,k,d,bpp,mse,mse_high_sigma,quality,quality_high_sigma
//! ```
//!
//! `method` is `nonadaptive`, `sigmoid` or `linear`; `k` is the sigmoid
//! steepness (0 otherwise); for `nonadaptive`, `d` is the global step.
//! Values are corpus means; `quality*` are `-10 log10` of the MSE columns.
//!
//! Ablation CSV columns:
//!
//! ```text
//! method,bd_rate_mse,bd_rate_high_sigma
//! ```

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::bitstream::QuantMode;
use crate::controller::{Mapping, RateControl};
use crate::error::{invalid, Error, Result};
use crate::metrics::{bd_rate, high_sigma_mask, mse, quality_db, RdCurve};
use crate::pipeline::{encode_with, CodecSetup, ContextModel};
use crate::tensor::{EntropyParams, HyperLatent, LatentTensor, SliceLayout};

/// One image ready for coding.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusImage {
    pub name: String,
    pub y: LatentTensor,
    pub params: EntropyParams,
    pub z: HyperLatent,
    pub source_pixels: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    NonAdaptive,
    Adaptive(Mapping),
}

impl Method {
    /// Rows of the ablation table, in order.
    pub const ABLATION: [Method; 4] = [
        Method::NonAdaptive,
        Method::Adaptive(Mapping::Sigmoid { k: 5.0 }),
        Method::Adaptive(Mapping::Sigmoid { k: 10.0 }),
        Method::Adaptive(Mapping::Linear),
    ];

    pub fn quant_mode(&self, d: f32) -> Result<QuantMode> {
        Ok(match self {
            Method::NonAdaptive => {
                if !(d.is_finite() && d > 0.0) {
                    return Err(invalid(format!("step must be > 0, got {d}")));
                }
                QuantMode::Uniform { step: d }
            }
            Method::Adaptive(m) => QuantMode::Adaptive(RateControl::new(d, *m)?),
        })
    }

    fn tag(&self) -> (&'static str, f32) {
        match self {
            Method::NonAdaptive => ("nonadaptive", 0.0),
            Method::Adaptive(Mapping::Linear) => ("linear", 0.0),
            Method::Adaptive(Mapping::Sigmoid { k }) => ("sigmoid", *k),
        }
    }

    fn from_tag(name: &str, k: f32) -> Result<Self> {
        match name {
            "nonadaptive" => Ok(Method::NonAdaptive),
            "linear" => Ok(Method::Adaptive(Mapping::Linear)),
            "sigmoid" => Ok(Method::Adaptive(Mapping::sigmoid(k)?)),
            other => Err(Error::Format(format!("unknown method {other:?}"))),
        }
    }

    /// Row label used in the ablation report.
    pub fn label(&self) -> String {
        match self {
            Method::NonAdaptive => "Non-Adaptive Quantization".into(),
            Method::Adaptive(Mapping::Linear) => "Linear".into(),
            Method::Adaptive(Mapping::Sigmoid { k }) => format!("Sigmoid (k={k})"),
        }
    }
}

/// Corpus-mean operating point of one method at one rate setting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub method: Method,
    pub d: f32,
    pub bpp: f64,
    pub mse: f64,
    pub mse_high_sigma: f64,
}

/// Per-image measurements behind a sweep point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageMeasurement {
    pub bits: u64,
    pub bpp: f64,
    pub mse: f64,
    pub mse_high_sigma: f64,
}

/// Codes `image` once and measures it.
pub fn measure(image: &CorpusImage, layout: &SliceLayout, context: ContextModel, quant: QuantMode) -> Result<ImageMeasurement> {
    let setup = CodecSetup::new(layout.clone(), context, image.source_pixels)?;
    let (_, res) = encode_with(&image.y, &image.params, &image.z, &setup, quant)?;
    let mask = high_sigma_mask(image.params.sigma());
    Ok(ImageMeasurement {
        bits: res.rate.total_bits(),
        bpp: res.rate.bpp(),
        mse: mse(&image.y, &res.y_hat, None)?,
        mse_high_sigma: mse(&image.y, &res.y_hat, Some(&mask))?,
    })
}

/// Runs every method at every `d` over the corpus. Output is ordered by
/// method, then `d`, independent of scheduling.
pub fn sweep(
    corpus: &[CorpusImage],
    d_list: &[f32],
    methods: &[Method],
    layout: &SliceLayout,
    context: ContextModel,
) -> Result<Vec<SweepPoint>> {
    if corpus.is_empty() {
        return Err(invalid("sweep needs at least one image"));
    }
    if d_list.is_empty() || d_list.windows(2).any(|p| p[0] >= p[1]) {
        return Err(invalid("d list must be non-empty and strictly increasing"));
    }
    let jobs: Vec<(Method, f32)> = methods
        .iter()
        .flat_map(|&m| d_list.iter().map(move |&d| (m, d)))
        .collect();
    jobs.par_iter()
        .map(|&(method, d)| {
            let quant = method.quant_mode(d)?;
            let per_image = corpus
                .par_iter()
                .map(|img| measure(img, layout, context, quant))
                .collect::<Result<Vec<_>>>()?;
            let n = per_image.len() as f64;
            Ok(SweepPoint {
                method,
                d,
                bpp: per_image.iter().map(|m| m.bpp).sum::<f64>() / n,
                mse: per_image.iter().map(|m| m.mse).sum::<f64>() / n,
                mse_high_sigma: per_image.iter().map(|m| m.mse_high_sigma).sum::<f64>() / n,
            })
        })
        .collect()
}

pub const SWEEP_HEADER: &str = "method,k,d,bpp,mse,mse_high_sigma,quality,quality_high_sigma";

pub fn sweep_to_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for p in points {
        let (name, k) = p.method.tag();
        writeln!(
            out,
            "{name},{k},{},{:.9},{:.9},{:.9},{:.6},{:.6}",
            p.d,
            p.bpp,
            p.mse,
            p.mse_high_sigma,
            quality_db(p.mse),
            quality_db(p.mse_high_sigma)
        )
        .unwrap();
    }
    out
}

pub fn sweep_from_csv(text: &str) -> Result<Vec<SweepPoint>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.trim() == SWEEP_HEADER => {}
        _ => return Err(Error::Format(format!("sweep CSV must start with {SWEEP_HEADER:?}"))),
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = |what: &str| Error::Format(format!("sweep CSV row {}: bad {what}", i + 1));
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 8 {
                return Err(bad("column count"));
            }
            let num = |j: usize, what: &str| cols[j].parse::<f64>().map_err(|_| bad(what));
            let k = num(1, "k")? as f32;
            Ok(SweepPoint {
                method: Method::from_tag(cols[0], k)?,
                d: num(2, "d")? as f32,
                bpp: num(3, "bpp")?,
                mse: num(4, "mse")?,
                mse_high_sigma: num(5, "mse_high_sigma")?,
            })
        })
        .collect()
}

/// Full-latent and high-scale-region curves of `method`.
pub fn curves_for(points: &[SweepPoint], method: Method) -> Result<(RdCurve, RdCurve)> {
    let rows: Vec<&SweepPoint> = points.iter().filter(|p| p.method == method).collect();
    let full = RdCurve::new(rows.iter().map(|p| (p.bpp, quality_db(p.mse))).collect());
    let high = RdCurve::new(rows.iter().map(|p| (p.bpp, quality_db(p.mse_high_sigma))).collect());
    let ctx = |e: Error| Error::Curve(format!("{}: {e}", method.label()));
    Ok((full.map_err(ctx)?, high.map_err(ctx)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub method: Method,
    pub bd_rate_mse: f64,
    pub bd_rate_high_sigma: f64,
}

/// BD-rate of each ablation method. Without a reference, every row is
/// measured against the non-adaptive curve of `points`; with one, each
/// method is measured against its own curve in `reference`.
pub fn ablation_report(points: &[SweepPoint], reference: Option<&[SweepPoint]>) -> Result<Vec<AblationRow>> {
    Method::ABLATION
        .iter()
        .map(|&method| {
            let (test_full, test_high) = curves_for(points, method)?;
            let (ref_full, ref_high) = match reference {
                Some(r) => curves_for(r, method)?,
                None => curves_for(points, Method::NonAdaptive)?,
            };
            Ok(AblationRow {
                method,
                bd_rate_mse: bd_rate(&ref_full, &test_full)?,
                bd_rate_high_sigma: bd_rate(&ref_high, &test_high)?,
            })
        })
        .collect()
}

pub const ABLATION_HEADER: &str = "method,bd_rate_mse,bd_rate_high_sigma";

pub fn ablation_to_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from(ABLATION_HEADER);
    out.push('\n');
    for r in rows {
        // avoid printing "-0.00"
        let fmt = |v: f64| {
            let s = format!("{v:.2}");
            if s == "-0.00" { "0.00".to_string() } else { s }
        };
        writeln!(out, "{},{},{}", r.method.label(), fmt(r.bd_rate_mse), fmt(r.bd_rate_high_sigma)).unwrap();
    }
    out
}
