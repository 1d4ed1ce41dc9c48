//! `.aqt` tensor container.
//!
//! A file is a concatenation of records. Each record is
//!
//! ```text
//! offset  size  field
//! 0       4     magic "AQT1"
//! 4       4     C  (u32 LE)
//! 8       4     H  (u32 LE)
//! 12      4     W  (u32 LE)
//! 16      1     field tag
//! 17      ...   payload
//! ```
//!
//! Tags 0 (y), 1 (mu), 2 (sigma), 3 (z, integer-valued) and 5 (region mask,
//! values 0 or 1) carry `C*H*W` little-endian binary32 values. Tag 4 is the
//! hyper-latent's factorized model: `C` tables of `W` cumulative counts
//! (`H` must be 1), each written as an `i32` LE lowest symbol followed by `W`
//! `u32` LE counts running from 0 to 65536.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::entropy::{CdfTable, FactorizedModel};
use crate::error::{Error, Result};
use crate::tensor::{EntropyParams, HyperLatent, LatentTensor};

pub const AQT_MAGIC: &[u8; 4] = b"AQT1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum FieldTag {
    Y = 0,
    Mu = 1,
    Sigma = 2,
    Z = 3,
    ZModel = 4,
    Mask = 5,
}

impl TryFrom<u8> for FieldTag {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        Ok(match v {
            0 => FieldTag::Y,
            1 => FieldTag::Mu,
            2 => FieldTag::Sigma,
            3 => FieldTag::Z,
            4 => FieldTag::ZModel,
            5 => FieldTag::Mask,
            other => return Err(Error::Format(format!("unknown field tag {other}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Record {
    Tensor(FieldTag, LatentTensor),
    ZModel(FactorizedModel),
}

fn put_u32(out: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("dimension {v} exceeds u32")))?;
    out.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn write_record(out: &mut impl Write, record: &Record) -> Result<()> {
    out.write_all(AQT_MAGIC)?;
    match record {
        Record::Tensor(tag, t) => {
            if *tag == FieldTag::ZModel {
                return Err(Error::Format("z-model tag used for a tensor".into()));
            }
            put_u32(out, t.channels())?;
            put_u32(out, t.height())?;
            put_u32(out, t.width())?;
            out.write_all(&[*tag as u8])?;
            let mut buf = Vec::with_capacity(t.len() * 4);
            for v in t.values() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            out.write_all(&buf)?;
        }
        Record::ZModel(model) => {
            let len = model.tables().first().map_or(0, |t| t.counts().len());
            if model.tables().iter().any(|t| t.counts().len() != len) {
                return Err(Error::Format(
                    "all factorized tables must have the same length".into(),
                ));
            }
            put_u32(out, model.channels())?;
            put_u32(out, 1)?;
            put_u32(out, len)?;
            out.write_all(&[FieldTag::ZModel as u8])?;
            for t in model.tables() {
                out.write_all(&crate::entropy::SymbolCdf::min_symbol(t).to_le_bytes())?;
                for c in t.counts() {
                    out.write_all(&c.to_le_bytes())?;
                }
            }
        }
    }
    Ok(())
}

fn read_exact_or(input: &mut impl Read, buf: &mut [u8], what: &'static str) -> Result<()> {
    input.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Truncated(what),
        _ => Error::Io(e),
    })
}

/// Reads the next record; `Ok(None)` at a clean end of input.
pub fn read_record(input: &mut impl Read) -> Result<Option<Record>> {
    let mut magic = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        let n = input.read(&mut magic[got..])?;
        if n == 0 {
            break;
        }
        got += n;
    }
    if got == 0 {
        return Ok(None);
    }
    if got < 4 {
        return Err(Error::Truncated("record magic"));
    }
    if &magic != AQT_MAGIC {
        return Err(Error::Format(format!("bad record magic {magic:?}")));
    }
    let mut head = [0u8; 13];
    read_exact_or(input, &mut head, "record header")?;
    let dim = |i: usize| u32::from_le_bytes(head[i..i + 4].try_into().unwrap()) as usize;
    let (c, h, w) = (dim(0), dim(4), dim(8));
    let tag = FieldTag::try_from(head[12])?;
    if tag == FieldTag::ZModel {
        if h != 1 || w < 2 {
            return Err(Error::Format(format!("z-model record has shape {c}x{h}x{w}")));
        }
        let mut tables = Vec::with_capacity(c);
        let mut buf = vec![0u8; 4 + 4 * w];
        for _ in 0..c {
            read_exact_or(input, &mut buf, "z-model table")?;
            let min = i32::from_le_bytes(buf[..4].try_into().unwrap());
            let counts = buf[4..]
                .chunks_exact(4)
                .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            tables.push(CdfTable::new(min, counts)?);
        }
        return Ok(Some(Record::ZModel(FactorizedModel::new(tables))));
    }
    let len = c
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .filter(|&n| n <= (1 << 30))
        .ok_or_else(|| Error::Format(format!("implausible record shape {c}x{h}x{w}")))?;
    let mut buf = vec![0u8; len * 4];
    read_exact_or(input, &mut buf, "record values")?;
    let values = buf
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let t = LatentTensor::new(c, h, w, values)?;
    if tag == FieldTag::Mask && t.values().iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Format("mask values must be 0 or 1".into()));
    }
    Ok(Some(Record::Tensor(tag, t)))
}

pub fn read_records(input: &mut impl Read) -> Result<Vec<Record>> {
    let mut out = Vec::new();
    while let Some(r) = read_record(input)? {
        out.push(r);
    }
    Ok(out)
}

/// The fields of one image, as stored in an `.aqt` file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AqtFile {
    pub y: Option<LatentTensor>,
    pub mu: Option<LatentTensor>,
    pub sigma: Option<LatentTensor>,
    pub z: Option<LatentTensor>,
    pub z_model: Option<FactorizedModel>,
    pub mask: Option<LatentTensor>,
}

impl AqtFile {
    /// Later records of the same tag replace earlier ones.
    pub fn from_records(records: Vec<Record>) -> Self {
        let mut f = AqtFile::default();
        for r in records {
            match r {
                Record::Tensor(FieldTag::Y, t) => f.y = Some(t),
                Record::Tensor(FieldTag::Mu, t) => f.mu = Some(t),
                Record::Tensor(FieldTag::Sigma, t) => f.sigma = Some(t),
                Record::Tensor(FieldTag::Z, t) => f.z = Some(t),
                Record::Tensor(FieldTag::Mask, t) => f.mask = Some(t),
                Record::Tensor(FieldTag::ZModel, _) => unreachable!("reader never builds this"),
                Record::ZModel(m) => f.z_model = Some(m),
            }
        }
        f
    }

    /// Codec inputs as a bundle.
    pub fn from_codec_inputs(y: &LatentTensor, params: &EntropyParams, z: &HyperLatent) -> Result<Self> {
        Ok(AqtFile {
            y: Some(y.clone()),
            mu: Some(params.mu().clone()),
            sigma: Some(params.sigma().clone()),
            z: (!z.symbols().is_empty()).then(|| z.to_tensor()).transpose()?,
            z_model: Some(z.model().clone()),
            mask: None,
        })
    }

    pub fn records(&self) -> Vec<Record> {
        let mut out = Vec::new();
        let tensors = [
            (FieldTag::Y, &self.y),
            (FieldTag::Mu, &self.mu),
            (FieldTag::Sigma, &self.sigma),
            (FieldTag::Z, &self.z),
        ];
        for (tag, t) in tensors {
            if let Some(t) = t {
                out.push(Record::Tensor(tag, t.clone()));
            }
        }
        if let Some(m) = &self.z_model {
            out.push(Record::ZModel(m.clone()));
        }
        if let Some(m) = &self.mask {
            out.push(Record::Tensor(FieldTag::Mask, m.clone()));
        }
        out
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        Ok(Self::from_records(read_records(&mut r)?))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for r in self.records() {
            write_record(&mut w, &r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn params(&self) -> Result<EntropyParams> {
        match (&self.mu, &self.sigma) {
            (Some(mu), Some(sigma)) => EntropyParams::new(mu.clone(), sigma.clone()),
            _ => Err(Error::Format("container lacks mu/sigma records".into())),
        }
    }

    /// Missing z records mean an empty hyper-latent.
    pub fn hyper_latent(&self) -> Result<HyperLatent> {
        let model = self.z_model.clone().unwrap_or_default();
        match &self.z {
            Some(z) => HyperLatent::from_tensor(z, model),
            None => HyperLatent::new(0, 0, 0, Vec::new(), model),
        }
    }

    pub fn require_y(&self) -> Result<&LatentTensor> {
        self.y
            .as_ref()
            .ok_or_else(|| Error::Format("container lacks a y record".into()))
    }
}
