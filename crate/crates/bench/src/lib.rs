//! Fixtures shared by the codec benchmarks.

use adaq_core::synth::{generate_one, ScaleProfile, SynthImage, SynthSpec};
use adaq_core::{CodecSetup, ContextModel};

/// First image of the desk-scale edge-band corpus, with a matching setup.
pub fn desk_image() -> (SynthImage, CodecSetup) {
    let spec = SynthSpec::desk_corpus(2024, ScaleProfile::EdgeBands);
    let img = generate_one(&spec, 0).expect("valid spec");
    let setup = CodecSetup::new(spec.layout().expect("valid layout"), ContextModel::HyperpriorOnly, img.source_pixels)
        .expect("valid setup");
    (img, setup)
}
