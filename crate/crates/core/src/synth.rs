//! Deterministic synthetic latents.
//!
//! Every image draws from its own ChaCha8 stream (`set_stream(index)`), so a
//! corpus is identical no matter how images are scheduled across threads.
//! Scales are shaped, not realistic: earlier slices get larger scales
//! (`slice_decay` per slice) and the `EdgeBands` profile puts a thin ridge of
//! large scales on a low background, exactly one decile of each channel.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container::{write_record, AqtFile, FieldTag, Record};
use crate::entropy::{normal_cdf, CdfTable, FactorizedModel};
use crate::error::{invalid, Error, Result};
use crate::sweep::CorpusImage;
use crate::tensor::{EntropyParams, HyperLatent, LatentTensor, SliceLayout, SIGMA_FLOOR};

/// Hyper-latent symbols live in `[-Z_RANGE, Z_RANGE]`.
pub const Z_RANGE: i32 = 16;
/// Source pixels per latent element along each axis.
pub const DOWNSAMPLE: u64 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScaleProfile {
    Flat,
    EdgeBands,
    Blobs,
}

impl std::str::FromStr for ScaleProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flat" => Ok(Self::Flat),
            "edge-bands" | "edgebands" => Ok(Self::EdgeBands),
            "blobs" => Ok(Self::Blobs),
            other => Err(invalid(format!("unknown scale profile {other:?}"))),
        }
    }
}

impl std::fmt::Display for ScaleProfile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Flat => "flat",
            Self::EdgeBands => "edge-bands",
            Self::Blobs => "blobs",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub n_images: usize,
    pub profile: ScaleProfile,
    /// Scale attenuation from one slice to the next, in `(0, 1]`.
    pub slice_decay: f32,
    /// Equal slices used for the decay schedule.
    pub slices: usize,
}

impl SynthSpec {
    /// 16 images of 320x16x16 in 5 slices.
    pub fn desk_corpus(seed: u64, profile: ScaleProfile) -> Self {
        Self {
            seed,
            channels: 320,
            height: 16,
            width: 16,
            n_images: 16,
            profile,
            slice_decay: 0.8,
            slices: 5,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.height == 0 || self.width == 0 {
            return Err(invalid("synthetic dimensions must be positive"));
        }
        if !(self.slice_decay > 0.0 && self.slice_decay <= 1.0) {
            return Err(invalid(format!(
                "slice_decay must lie in (0, 1], got {}",
                self.slice_decay
            )));
        }
        SliceLayout::equal(self.channels, self.slices)?;
        Ok(())
    }

    pub fn layout(&self) -> Result<SliceLayout> {
        SliceLayout::equal(self.channels, self.slices)
    }

    pub fn source_pixels(&self) -> u64 {
        self.height as u64 * DOWNSAMPLE * self.width as u64 * DOWNSAMPLE
    }

    pub fn z_shape(&self) -> (usize, usize, usize) {
        (
            (self.channels / 5).max(1),
            self.height.div_ceil(4),
            self.width.div_ceil(4),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthImage {
    pub index: usize,
    pub y: LatentTensor,
    pub params: EntropyParams,
    pub z: HyperLatent,
    /// Construction-time ridge pixels (all false unless `EdgeBands`).
    pub ridge_mask: Vec<bool>,
    pub source_pixels: u64,
}

impl SynthImage {
    pub fn to_corpus_image(&self) -> CorpusImage {
        CorpusImage {
            name: format!("img_{:04}", self.index),
            y: self.y.clone(),
            params: self.params.clone(),
            z: self.z.clone(),
            source_pixels: self.source_pixels,
        }
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f32 {
    StandardNormal.sample(rng)
}

/// Indices of the `keep` pixels nearest to a random line, ties by index.
fn ridge_pixels(rng: &mut ChaCha8Rng, height: usize, width: usize, keep: usize) -> Vec<usize> {
    let angle: f32 = rng.random_range(0.0..std::f32::consts::PI);
    let (nx, ny) = (libm::cosf(angle), libm::sinf(angle));
    let cx = rng.random_range(0.25..0.75) * width as f32;
    let cy = rng.random_range(0.25..0.75) * height as f32;
    let mut dist: Vec<(f32, usize)> = (0..height * width)
        .map(|i| {
            let (h, w) = ((i / width) as f32 + 0.5, (i % width) as f32 + 0.5);
            (((w - cx) * nx + (h - cy) * ny).abs(), i)
        })
        .collect();
    dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    dist.truncate(keep);
    dist.into_iter().map(|(_, i)| i).collect()
}

fn factorized_table(scale: f64) -> Result<CdfTable> {
    let probs: Vec<f64> = (-Z_RANGE..=Z_RANGE)
        .map(|s| {
            let lo = if s == -Z_RANGE { 0.0 } else { normal_cdf((s as f64 - 0.5) / scale) };
            let hi = if s == Z_RANGE { 1.0 } else { normal_cdf((s as f64 + 0.5) / scale) };
            hi - lo
        })
        .collect();
    CdfTable::from_probabilities(-Z_RANGE, &probs)
}

/// Image `index` of the corpus described by `spec`.
pub fn generate_one(spec: &SynthSpec, index: usize) -> Result<SynthImage> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);

    let (c, h, w) = (spec.channels, spec.height, spec.width);
    let plane = h * w;
    let layout = spec.layout()?;
    let keep = plane.div_ceil(10);

    let mut sigma = Vec::with_capacity(c * plane);
    let mut ridge_mask = vec![false; c * plane];
    for (n, range) in layout.ranges().enumerate() {
        let level = spec.slice_decay.powi(n as i32);
        for ch in range {
            let base = level * rng.random_range(0.7f32..1.3);
            match spec.profile {
                ScaleProfile::Flat => sigma.extend(std::iter::repeat_n(base.max(SIGMA_FLOOR), plane)),
                ScaleProfile::EdgeBands => {
                    let ridge = ridge_pixels(&mut rng, h, w, keep);
                    let start = sigma.len();
                    for _ in 0..plane {
                        let bg = base * rng.random_range(0.25f32..0.6);
                        sigma.push(bg.max(SIGMA_FLOOR));
                    }
                    for i in ridge {
                        let peak = base * rng.random_range(2.6f32..3.4);
                        sigma[start + i] = peak.max(2.0 * SIGMA_FLOOR);
                        ridge_mask[ch * plane + i] = true;
                    }
                }
                ScaleProfile::Blobs => {
                    let blobs: Vec<(f32, f32, f32)> = (0..3)
                        .map(|_| {
                            (
                                rng.random_range(0.0..h as f32),
                                rng.random_range(0.0..w as f32),
                                rng.random_range(1.0f32..3.0),
                            )
                        })
                        .collect();
                    for i in 0..plane {
                        let (y0, x0) = ((i / w) as f32, (i % w) as f32);
                        let bump: f32 = blobs
                            .iter()
                            .map(|&(by, bx, r)| {
                                let d2 = (y0 - by).powi(2) + (x0 - bx).powi(2);
                                libm::expf(-d2 / (2.0 * r * r))
                            })
                            .sum();
                        sigma.push((base * (0.3 + 2.0 * bump)).max(SIGMA_FLOOR));
                    }
                }
            }
        }
    }

    let mut mu = Vec::with_capacity(c * plane);
    for _ in 0..c {
        let offset = normal(&mut rng);
        for _ in 0..plane {
            mu.push(offset + 0.25 * normal(&mut rng));
        }
    }
    let y: Vec<f32> = mu
        .iter()
        .zip(&sigma)
        .map(|(&m, &s)| m + s * normal(&mut rng))
        .collect();

    let (zc, zh, zw) = spec.z_shape();
    let mut tables = Vec::with_capacity(zc);
    let mut symbols = Vec::with_capacity(zc * zh * zw);
    for _ in 0..zc {
        let scale = rng.random_range(0.5f64..3.0);
        tables.push(factorized_table(scale)?);
        for _ in 0..zh * zw {
            let s = (scale as f32 * normal(&mut rng)).round() as i32;
            symbols.push(s.clamp(-Z_RANGE, Z_RANGE));
        }
    }

    let y = LatentTensor::new(c, h, w, y)?;
    let params = EntropyParams::new(
        LatentTensor::new(c, h, w, mu)?,
        LatentTensor::new(c, h, w, sigma)?,
    )?;
    let z = HyperLatent::new(zc, zh, zw, symbols, FactorizedModel::new(tables))?;
    Ok(SynthImage {
        index,
        y,
        params,
        z,
        ridge_mask,
        source_pixels: spec.source_pixels(),
    })
}

/// The whole corpus, generated in parallel.
pub fn generate(spec: &SynthSpec) -> Result<Vec<SynthImage>> {
    spec.validate()?;
    (0..spec.n_images)
        .into_par_iter()
        .map(|i| generate_one(spec, i))
        .collect()
}

/// One line of `manifest.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image: String,
    pub index: usize,
    pub seed: u64,
    pub profile: ScaleProfile,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub slices: usize,
    pub slice_decay: f32,
    pub source_pixels: u64,
    /// File holding one mask record (tag 5) per image, in index order.
    pub masks_file: String,
}

pub const MANIFEST_NAME: &str = "manifest.jsonl";
pub const MASKS_NAME: &str = "masks.aqt";

/// Writes `img_XXXX.aqt`, `masks.aqt` and `manifest.jsonl` into `dir`.
pub fn write_corpus(dir: &Path, spec: &SynthSpec, images: &[SynthImage]) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut masks = BufWriter::new(File::create(dir.join(MASKS_NAME))?);
    let manifest_path = dir.join(MANIFEST_NAME);
    let mut manifest = BufWriter::new(File::create(&manifest_path)?);
    for img in images {
        let name = format!("img_{:04}.aqt", img.index);
        AqtFile::from_codec_inputs(&img.y, &img.params, &img.z)?.write(dir.join(&name))?;
        let (c, h, w) = img.y.shape();
        let mask = LatentTensor::new(
            c,
            h,
            w,
            img.ridge_mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        )?;
        write_record(&mut masks, &Record::Tensor(FieldTag::Mask, mask))?;
        let entry = ManifestEntry {
            image: name,
            index: img.index,
            seed: spec.seed,
            profile: spec.profile,
            channels: c,
            height: h,
            width: w,
            slices: spec.slices,
            slice_decay: spec.slice_decay,
            source_pixels: img.source_pixels,
            masks_file: MASKS_NAME.into(),
        };
        serde_json::to_writer(&mut manifest, &entry).map_err(|e| Error::Format(e.to_string()))?;
        manifest.write_all(b"\n")?;
    }
    masks.flush()?;
    manifest.flush()?;
    Ok(manifest_path)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("manifest line {}: {e}", i + 1)))?,
        );
    }
    Ok(out)
}

/// Loads every image a manifest lists, resolving paths next to it.
pub fn load_corpus(manifest: &Path) -> Result<Vec<CorpusImage>> {
    let dir = manifest.parent().unwrap_or(Path::new("."));
    read_manifest(manifest)?
        .into_par_iter()
        .map(|entry| {
            let f = AqtFile::read(dir.join(&entry.image))?;
            Ok(CorpusImage {
                name: entry.image.trim_end_matches(".aqt").to_string(),
                y: f.require_y()?.clone(),
                params: f.params()?,
                z: f.hyper_latent()?,
                source_pixels: entry.source_pixels,
            })
        })
        .collect()
}
