use gsimage_core::bitstream::{bits_per_pixel, decode, encode, payload_bytes, Bitstream, HEADER_BYTES, TABLE_BYTES};
use gsimage_core::model::CovarianceParam;
use gsimage_core::quantizer::{fake_quant_cloud, LsqChannelQuantizer, QuantDomain, QuantizerBank};
use gsimage_core::{render, seeded_rng, Error, GaussianCloud, Parameterization, Rng};
use proptest::prelude::*;
use rand::Rng as _;

fn random_cloud(n: usize, dims: (usize, usize), rng: &mut Rng) -> GaussianCloud {
    let (h, w) = dims;
    let mut cloud = GaussianCloud::new(Parameterization::Direct, n.max(1)).unwrap();
    for _ in 0..n {
        let a = rng.random_range(0.05..40.0);
        let b = rng.random_range(0.05..40.0);
        let c = rng.random_range(-0.9..0.9) * f64::sqrt(a * b);
        cloud
            .push(
                [rng.random_range(-2.0..w as f64 + 2.0), rng.random_range(-2.0..h as f64 + 2.0)],
                CovarianceParam::Direct { s11: a, s12: c, s22: b },
                [rng.random_range(-0.2..1.2), rng.random_range(-0.2..1.2), rng.random_range(-0.2..1.2)],
                rng.random_range(0.0..1.0),
            )
            .unwrap();
    }
    cloud
}

fn random_depths(rng: &mut Rng) -> [u8; 3] {
    if rng.random_bool(0.5) {
        [12, 10, 6]
    } else {
        [rng.random_range(1..=16), rng.random_range(1..=16), rng.random_range(1..=16)]
    }
}

#[test]
fn fuzzed_clouds_round_trip_byte_identically() {
    let mut rng = seeded_rng(2024);
    for _ in 0..1000 {
        let dims = (rng.random_range(1..600), rng.random_range(1..800));
        let n = rng.random_range(1..40);
        let cloud = random_cloud(n, dims, &mut rng);
        let mut bank = QuantizerBank::new(random_depths(&mut rng)).unwrap();
        bank.calibrate(&cloud).unwrap();
        if rng.random_bool(0.3) {
            // a bank that saturates some values
            let c = rng.random_range(0..8);
            let q = bank.channels()[c];
            *bank.channel_mut(c) =
                LsqChannelQuantizer::with_params(q.bits(), q.scale() * 0.5, q.offset() + q.scale(), q.domain()).unwrap();
        }
        let first = encode(&cloud, &bank, dims.0, dims.1).unwrap();
        assert_eq!(first.len(), HEADER_BYTES + TABLE_BYTES + payload_bytes(n, bank.bits_per_primitive()));
        let decoded = decode(&first).unwrap();
        assert_eq!((decoded.height, decoded.width), dims);
        assert_eq!(decoded.cloud.len(), n);
        let second = encode(&decoded.cloud, &decoded.bank, decoded.height, decoded.width).unwrap();
        assert_eq!(first, second);
    }
}

#[test]
fn decoded_cloud_renders_like_fake_quant() {
    let mut rng = seeded_rng(1);
    let dims = (40, 60);
    let cloud = random_cloud(50, dims, &mut rng);
    let mut bank = QuantizerBank::default();
    bank.calibrate(&cloud).unwrap();
    bank.round_to_f32();
    let decoded = decode(&encode(&cloud, &bank, 40, 60).unwrap()).unwrap();
    let a = render(&fake_quant_cloud(&cloud, &bank).unwrap(), dims, 6.0).unwrap();
    let b = render(&decoded.cloud, dims, 6.0).unwrap();
    assert_eq!(a.data(), b.data());
}

#[test]
fn payload_rate_matches_budget() {
    let mut rng = seeded_rng(0);
    let cloud = random_cloud(5898, (512, 768), &mut rng);
    let mut bank = QuantizerBank::default();
    bank.calibrate(&cloud).unwrap();
    let bytes = encode(&cloud, &bank, 512, 768).unwrap();
    let payload = bytes.len() - HEADER_BYTES - TABLE_BYTES;
    assert_eq!(payload, (72 * 5898usize).div_ceil(8));
    assert!((bits_per_pixel(payload, 512, 768) - 1.080).abs() < 1e-3);
    assert_eq!(bytes[5], 0);
}

fn sample_stream() -> Vec<u8> {
    let mut rng = seeded_rng(9);
    let cloud = random_cloud(7, (16, 16), &mut rng);
    let mut bank = QuantizerBank::default();
    bank.calibrate(&cloud).unwrap();
    encode(&cloud, &bank, 16, 16).unwrap()
}

#[test]
fn malformed_streams_are_rejected_with_distinct_errors() {
    let good = sample_stream();
    for cut in [0, 3, 10, HEADER_BYTES + 5, good.len() - 1] {
        assert!(matches!(decode(&good[..cut]), Err(Error::Truncated { .. })), "cut at {cut}");
    }
    let mut bad = good.clone();
    bad[0] = b'X';
    assert_eq!(decode(&bad).unwrap_err(), Error::BadMagic);
    let mut bad = good.clone();
    bad[4] = 2;
    assert_eq!(decode(&bad).unwrap_err(), Error::UnsupportedVersion(2));
    let mut bad = good.clone();
    bad.push(0);
    assert_eq!(decode(&bad).unwrap_err(), Error::TrailingBytes(1));
    let mut bad = good.clone();
    bad[18] = 11;
    assert!(matches!(decode(&bad), Err(Error::Malformed(_))));
    let mut bad = good.clone();
    bad[19] = 0;
    bad[5] = 1;
    assert_eq!(decode(&bad).unwrap_err(), Error::InvalidBitDepth(0));
}

#[test]
fn log_channels_reject_non_positive_variances() {
    let mut cloud = GaussianCloud::new(Parameterization::Direct, 2).unwrap();
    cloud.push([1.0, 1.0], CovarianceParam::Direct { s11: 1.0, s12: 0.0, s22: 1.0 }, [0.5; 3], 0.0).unwrap();
    let mut bank = QuantizerBank::default();
    bank.calibrate(&cloud).unwrap();
    cloud.push([1.0, 1.0], CovarianceParam::Direct { s11: -1.0, s12: 0.0, s22: 1.0 }, [0.5; 3], 0.0).unwrap();
    assert!(matches!(encode(&cloud, &bank, 4, 4), Err(Error::LogDomain(_))));
}

#[test]
fn every_code_survives_a_round_trip() {
    for bits in [1u8, 6, 10, 12] {
        for domain in [QuantDomain::Linear, QuantDomain::Log] {
            let q = LsqChannelQuantizer::with_params(bits, 0.003, -1.7, domain).unwrap();
            for code in 0..=q.max_code() {
                assert_eq!(q.quantize(q.dequantize(code).unwrap()).unwrap(), code);
            }
        }
    }
}

#[test]
fn wide_bit_depths_are_near_lossless() {
    let mut rng = seeded_rng(4);
    let dims = (48, 48);
    let cloud = random_cloud(60, dims, &mut rng);
    let reference = render(&cloud, dims, 6.0).unwrap();
    let mut bank = QuantizerBank::new([16, 16, 16]).unwrap();
    bank.calibrate(&cloud).unwrap();
    let quantized = render(&fake_quant_cloud(&cloud, &bank).unwrap(), dims, 6.0).unwrap();
    let peak = reference.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mse: f64 = reference
        .data()
        .iter()
        .zip(quantized.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / reference.data().len() as f64;
    // PSNR against the reference render, relative to its peak
    let psnr_vs_reference = 10.0 * (peak * peak / mse).log10();
    assert!(psnr_vs_reference > 60.0, "{psnr_vs_reference}");
}

proptest! {
    #[test]
    fn parsed_streams_reserialize_identically(seed in any::<u64>(), n in 0usize..20) {
        let mut rng = seeded_rng(seed);
        let cloud = random_cloud(n, (30, 30), &mut rng);
        let mut bank = QuantizerBank::new(random_depths(&mut rng)).unwrap();
        if n > 0 {
            bank.calibrate(&cloud).unwrap();
        }
        let bytes = encode(&cloud, &bank, 30, 30).unwrap();
        let parsed = Bitstream::from_bytes(&bytes).unwrap();
        prop_assert_eq!(parsed.codes.len(), n);
        prop_assert_eq!(parsed.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn random_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..200)) {
        let _ = decode(&bytes);
    }
}
