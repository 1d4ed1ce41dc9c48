//! Frozen reference values and corpus-level properties.

use adaq_core::entropy::{factorized_z_bits, normal_upper_tail, PROB_TOTAL};
use adaq_core::synth::{generate, generate_one, ScaleProfile, SynthSpec};
use adaq_core::tensor::channel_extrema;
use adaq_core::{
    bd_rate, encode, encode_nonadaptive, mse, CodecSetup, ContextModel, RateControl, RdCurve, SymbolCdf, SymbolModel,
};

fn small(profile: ScaleProfile, n_images: usize) -> SynthSpec {
    SynthSpec {
        seed: 31,
        channels: 40,
        height: 12,
        width: 12,
        n_images,
        profile,
        slice_decay: 0.8,
        slices: 5,
    }
}

// Values below come from a fixed-point construction with an independent
// erfc (series plus continued fraction), cross-checked against scipy.

#[test]
fn unit_model_cdf_entries() {
    let m = SymbolModel::with_halfwidth(0.0, 1.0, 1.0, 64).unwrap();
    assert_eq!(m.cumulative(-1), 4432);
    assert_eq!(m.cumulative(0), 20244);
    assert_eq!(m.cumulative(1), 45291);
    assert_eq!(m.cumulative(2), 61103);
    assert_eq!(m.cumulative(65), PROB_TOTAL);
}

#[test]
fn fractional_step_cdf_entries() {
    let m = SymbolModel::with_halfwidth(0.3, 2.5, 0.75, 40).unwrap();
    assert_eq!(m.cumulative(0), 28865);
    assert_eq!(m.cumulative(1), 36670);
    assert_eq!(m.cumulative(5), 59706);
}

#[test]
fn upper_tail_values() {
    assert!((2.0 * normal_upper_tail(0.5 * std::f64::consts::SQRT_2) - 4.795_001_221_869_534e-1).abs() < 1e-15);
    assert!((2.0 * normal_upper_tail(3.5 * std::f64::consts::SQRT_2) - 7.430_983_723_414_127e-7).abs() < 1e-20);
}

#[test]
fn bd_rate_hand_curves() {
    let a = RdCurve::new(vec![(0.1, 20.0), (0.2, 23.5), (0.4, 26.0), (0.8, 28.1)]).unwrap();
    let b = RdCurve::new(vec![(0.09, 20.4), (0.17, 23.9), (0.33, 26.6), (0.7, 28.3)]).unwrap();
    let got = bd_rate(&a, &b).unwrap();
    assert!((got - (-23.023_802_877_4)).abs() < 0.01, "{got}");
    assert!(bd_rate(&b, &a).unwrap() > 0.0);
}

#[test]
fn z_bits_match_summation() {
    for img in generate(&small(ScaleProfile::Blobs, 3)).unwrap() {
        let z = &img.z;
        let plane = z.plane_len();
        let mut want = 0.0f64;
        for (i, &s) in z.symbols().iter().enumerate() {
            let t = z.model().table(i / plane).unwrap();
            let counts = t.counts();
            let j = (s - t.min_symbol()) as usize;
            want -= ((counts[j + 1] - counts[j]) as f64 / 65536.0).log2();
        }
        let got = factorized_z_bits(z);
        assert!((got - want).abs() < 1e-9 * want.max(1.0), "{got} vs {want}");
    }
}

#[test]
fn mse_matches_summation() {
    let imgs = generate(&small(ScaleProfile::EdgeBands, 2)).unwrap();
    let (a, b) = (&imgs[0].y, &imgs[1].y);
    let mut sum = 0.0f64;
    for (x, y) in a.values().iter().zip(b.values()) {
        sum += (*x as f64 - *y as f64).powi(2);
    }
    assert!((mse(a, b, None).unwrap() - sum / a.len() as f64).abs() < 1e-12);
}

#[test]
fn seeded_extrema_match_scan() {
    let img = generate_one(&small(ScaleProfile::Blobs, 1), 0).unwrap();
    let s = img.params.sigma();
    for c in 0..s.channels() {
        let ch = s.channel(c).unwrap();
        let lo = ch.iter().cloned().fold(f32::INFINITY, f32::min);
        let hi = ch.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        assert_eq!(channel_extrema(s, c).unwrap(), (lo, hi));
    }
}

#[test]
fn measured_rate_tracks_generating_entropy() {
    // at unit step the coder models y exactly as it was drawn
    for profile in [ScaleProfile::Flat, ScaleProfile::EdgeBands, ScaleProfile::Blobs] {
        let spec = small(profile, 2);
        for img in generate(&spec).unwrap() {
            let setup = CodecSetup::new(spec.layout().unwrap(), ContextModel::HyperpriorOnly, img.source_pixels).unwrap();
            let (_, res) = encode(&img.y, &img.params, &img.z, &setup, RateControl::linear(1.0).unwrap()).unwrap();
            let mu = img.params.mu().values();
            let sigma = img.params.sigma().values();
            let entropy: f64 = img
                .y
                .values()
                .iter()
                .enumerate()
                .map(|(i, &y)| {
                    let m = SymbolModel::new(mu[i], sigma[i], 1.0).unwrap();
                    m.estimate_bits(m.quantize(y))
                })
                .sum::<f64>()
                + factorized_z_bits(&img.z);
            let measured = res.rate.total_bits() as f64;
            assert!((measured - entropy).abs() <= 0.03 * entropy, "{profile}: {measured} vs {entropy}");
        }
    }
}

#[test]
fn coarser_settings_cost_fewer_bits() {
    let spec = small(ScaleProfile::EdgeBands, 2);
    for img in generate(&spec).unwrap() {
        let setup = CodecSetup::new(spec.layout().unwrap(), ContextModel::HyperpriorOnly, img.source_pixels).unwrap();
        let bpp = |d: f32| {
            encode(&img.y, &img.params, &img.z, &setup, RateControl::linear(d).unwrap())
                .unwrap()
                .1
                .rate
                .bpp()
        };
        assert!(bpp(8.0) < bpp(1.0));
        let bits: Vec<u64> = [0.5f32, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0]
            .iter()
            .map(|&s| encode_nonadaptive(&img.y, &img.params, &img.z, &setup, s).unwrap().1.rate.total_bits())
            .collect();
        assert!(bits.windows(2).all(|w| w[1] <= w[0]), "{bits:?}");
    }
}
