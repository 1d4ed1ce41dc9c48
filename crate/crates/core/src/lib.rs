//! Scale-adaptive quantization for learned latent codecs.
//!
//! A latent tensor `y` is quantized with per-element steps derived from the
//! hyperprior scale `sigma`, split into channel slices whose step range
//! tightens toward later slices, and entropy coded with a 64-bit range coder
//! under discretized Gaussian models.
//!
//! ```
//! use adaq_core::{encode, decode, CodecSetup, ContextModel, KnownParams, RateControl};
//! use adaq_core::synth::{generate_one, ScaleProfile, SynthSpec};
//!
//! let spec = SynthSpec {
//!     seed: 1, channels: 10, height: 4, width: 4, n_images: 1,
//!     profile: ScaleProfile::Blobs, slice_decay: 0.8, slices: 5,
//! };
//! let img = generate_one(&spec, 0).unwrap();
//! let setup = CodecSetup::new(spec.layout().unwrap(), ContextModel::HyperpriorOnly, img.source_pixels).unwrap();
//! let (bs, enc) = encode(&img.y, &img.params, &img.z, &setup, RateControl::linear(2.0).unwrap()).unwrap();
//! let dec = decode(&bs, &KnownParams::new(img.params.clone(), img.z.clone())).unwrap();
//! assert_eq!(dec.y_hat, enc.y_hat);
//! ```

pub mod bitstream;
pub mod container;
pub mod controller;
pub mod entropy;
pub mod error;
pub mod metrics;
pub mod pipeline;
pub mod range_coder;
pub mod sweep;
pub mod synth;
pub mod tensor;

pub use bitstream::{Bitstream, Header, QuantMode};
pub use container::AqtFile;
pub use controller::{full_step_tensor, slice_bounds, spatial_step_map, Mapping, RateControl, SliceBounds, StepTensor};
pub use entropy::{CdfTable, FactorizedModel, SymbolCdf, SymbolModel};
pub use error::{Error, Result, Segment};
pub use metrics::{bd_rate, high_sigma_mask, mse, RateReport, RdCurve};
pub use pipeline::{
    decode, decode_progressive, encode, encode_nonadaptive, encode_with, CodecSetup, CodingResult, ContextModel,
    HyperDecoder, KnownParams,
};
pub use range_coder::{RangeDecoder, RangeEncoder};
pub use sweep::{CorpusImage, Method, SweepPoint};
pub use tensor::{EntropyParams, HyperLatent, LatentTensor, SliceLayout, SIGMA_FLOOR};
