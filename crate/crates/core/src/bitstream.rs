//! `.aqb` bitstream layout.
//!
//! All integers little-endian, reals IEEE-754 binary32:
//!
//! ```text
//! magic            4   "AQB1"
//! version          u16 (currently 1)
//! C, H, W          3 x u32   latent shape
//! source pixels    u64       bpp denominator
//! N                u32       slice count
//! slice channels   N x u32
//! quant mode       u8        0 = adaptive, 1 = uniform step
//! d / step         f32
//! mapping          u8        0 = linear, 1 = sigmoid
//! k                f32       sigmoid steepness (0 for linear)
//! epsilon          f32       scale-span guard of the step mapping
//! context          u8        0 = hyperprior only, 1 = toy autoregressive
//! seed             u64       toy context seed (0 otherwise)
//! flags            u8        reserved, must be 0
//! zC, zH, zW       3 x u32   hyper-latent shape
//! then 1 + N segments (hyper-latent first, then slices 1..=N):
//!   length         u32       payload bytes
//!   payload        length bytes of range-coder output
//!   checksum       u32       CRC-32 of the segment's symbols as i16 LE
//! ```
//!
//! Nothing per element is transmitted: the decoder re-derives every step
//! from the header and the decoded scales.

use crate::controller::{Mapping, RateControl};
use crate::error::{Error, Result};
use crate::pipeline::ContextModel;
use crate::tensor::SliceLayout;

pub const AQB_MAGIC: &[u8; 4] = b"AQB1";
pub const AQB_VERSION: u16 = 1;

/// How steps are assigned to latent elements.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QuantMode {
    Adaptive(RateControl),
    Uniform { step: f32 },
}

impl QuantMode {
    /// Every configuration that yields unit steps everywhere is written as
    /// linear `d = 1`.
    pub fn canonical(self) -> Self {
        let unit = match self {
            QuantMode::Adaptive(rc) => rc.d() == 1.0,
            QuantMode::Uniform { step } => step == 1.0,
        };
        if unit {
            QuantMode::Adaptive(RateControl::linear(1.0).expect("d = 1 is valid"))
        } else {
            self
        }
    }

    /// The value reported as `d` in rate tables.
    pub fn rate_parameter(&self) -> f32 {
        match self {
            QuantMode::Adaptive(rc) => rc.d(),
            QuantMode::Uniform { step } => *step,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Header {
    pub shape: (usize, usize, usize),
    pub source_pixels: u64,
    pub layout: SliceLayout,
    pub quant: QuantMode,
    pub context: ContextModel,
    pub flags: u8,
    pub z_shape: (usize, usize, usize),
}

/// One independently decodable range-coded segment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub payload: Vec<u8>,
    pub checksum: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bitstream {
    pub header: Header,
    pub z: Segment,
    pub slices: Vec<Segment>,
}

/// CRC-32 over symbols serialized as `i16` little-endian.
pub fn symbol_checksum(symbols: &[i32]) -> u32 {
    let mut h = crc32fast::Hasher::new();
    for &s in symbols {
        h.update(&(s as i16).to_le_bytes());
    }
    h.finalize()
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} exceeds u32")))?;
        self.0.extend_from_slice(&v.to_le_bytes());
        Ok(())
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn segment(&mut self, s: &Segment) -> Result<()> {
        self.u32(s.payload.len())?;
        self.0.extend_from_slice(&s.payload);
        self.0.extend_from_slice(&s.checksum.to_le_bytes());
        Ok(())
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(Error::Truncated(what))?;
        let bytes = self.data.get(self.pos..end).ok_or(Error::Truncated(what))?;
        self.pos = end;
        Ok(bytes)
    }
    fn u8(&mut self, what: &'static str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn u16(&mut self, what: &'static str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }
    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    fn usize(&mut self, what: &'static str) -> Result<usize> {
        self.u32(what).map(|v| v as usize)
    }
    fn u64(&mut self, what: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn f32(&mut self, what: &'static str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    fn segment(&mut self, what: &'static str) -> Result<Segment> {
        let len = self.usize(what)?;
        let payload = self.take(len, what)?.to_vec();
        let checksum = self.u32(what)?;
        Ok(Segment { payload, checksum })
    }
}

impl Header {
    fn write(&self, w: &mut Writer) -> Result<()> {
        w.0.extend_from_slice(AQB_MAGIC);
        w.u16(AQB_VERSION);
        w.u32(self.shape.0)?;
        w.u32(self.shape.1)?;
        w.u32(self.shape.2)?;
        w.u64(self.source_pixels);
        w.u32(self.layout.num_slices())?;
        for &c in self.layout.counts() {
            w.u32(c)?;
        }
        let (mode, param, mapping, epsilon) = match self.quant {
            QuantMode::Adaptive(rc) => (0, rc.d(), rc.mapping(), rc.epsilon()),
            QuantMode::Uniform { step } => (1, step, Mapping::Linear, 0.0),
        };
        w.u8(mode);
        w.f32(param);
        match mapping {
            Mapping::Linear => {
                w.u8(0);
                w.f32(0.0);
            }
            Mapping::Sigmoid { k } => {
                w.u8(1);
                w.f32(k);
            }
        }
        w.f32(epsilon);
        match self.context {
            ContextModel::HyperpriorOnly => {
                w.u8(0);
                w.u64(0);
            }
            ContextModel::ToyAutoregressive { seed } => {
                w.u8(1);
                w.u64(seed);
            }
        }
        w.u8(self.flags);
        w.u32(self.z_shape.0)?;
        w.u32(self.z_shape.1)?;
        w.u32(self.z_shape.2)?;
        Ok(())
    }

    fn read(r: &mut Reader<'_>) -> Result<Self> {
        let magic = r.take(4, "magic")?;
        if magic != AQB_MAGIC {
            return Err(Error::Format(format!("bad bitstream magic {magic:?}")));
        }
        let version = r.u16("version")?;
        if version != AQB_VERSION {
            return Err(Error::Version {
                found: version,
                expected: AQB_VERSION,
            });
        }
        let shape = (r.usize("shape")?, r.usize("shape")?, r.usize("shape")?);
        let source_pixels = r.u64("pixel count")?;
        let n = r.usize("slice count")?;
        if n == 0 || n > shape.0 {
            return Err(Error::Format(format!("{n} slices for {} channels", shape.0)));
        }
        let counts = (0..n)
            .map(|_| r.usize("slice layout"))
            .collect::<Result<Vec<_>>>()?;
        let layout = SliceLayout::new(counts).map_err(|e| Error::Format(e.to_string()))?;
        layout
            .check_partitions(shape.0)
            .map_err(|e| Error::Format(e.to_string()))?;
        let mode = r.u8("quant mode")?;
        let param = r.f32("rate parameter")?;
        let mapping_tag = r.u8("mapping")?;
        let k = r.f32("mapping")?;
        let epsilon = r.f32("epsilon")?;
        let bad = |e: Error| Error::Format(e.to_string());
        let quant = match (mode, mapping_tag) {
            (0, 0) => QuantMode::Adaptive(
                RateControl::with_epsilon(param, Mapping::Linear, epsilon).map_err(bad)?,
            ),
            (0, 1) => QuantMode::Adaptive(
                RateControl::with_epsilon(param, Mapping::Sigmoid { k }, epsilon).map_err(bad)?,
            ),
            (1, 0) if param.is_finite() && param > 0.0 => QuantMode::Uniform { step: param },
            _ => {
                return Err(Error::Format(format!(
                    "invalid quantizer description (mode {mode}, mapping {mapping_tag}, parameter {param})"
                )))
            }
        };
        let context = match r.u8("context")? {
            0 => {
                r.u64("context seed")?;
                ContextModel::HyperpriorOnly
            }
            1 => ContextModel::ToyAutoregressive {
                seed: r.u64("context seed")?,
            },
            other => return Err(Error::Format(format!("unknown context kind {other}"))),
        };
        let flags = r.u8("flags")?;
        if flags != 0 {
            return Err(Error::Format(format!("unsupported flags {flags:#04x}")));
        }
        let z_shape = (r.usize("z shape")?, r.usize("z shape")?, r.usize("z shape")?);
        Ok(Header {
            shape,
            source_pixels,
            layout,
            quant,
            context,
            flags,
            z_shape,
        })
    }
}

impl Bitstream {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer(Vec::new());
        self.header.write(&mut w)?;
        w.segment(&self.z)?;
        for s in &self.slices {
            w.segment(s)?;
        }
        Ok(w.0)
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let mut r = Reader { data, pos: 0 };
        let header = Header::read(&mut r)?;
        let z = r.segment("hyper-latent segment")?;
        let slices = (0..header.layout.num_slices())
            .map(|_| r.segment("slice segment"))
            .collect::<Result<Vec<_>>>()?;
        if r.pos != data.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after last slice",
                data.len() - r.pos
            )));
        }
        Ok(Self { header, z, slices })
    }

    /// Range-coded bytes only, excluding header and framing.
    pub fn payload_bytes(&self) -> usize {
        self.z.payload.len() + self.slices.iter().map(|s| s.payload.len()).sum::<usize>()
    }
}
