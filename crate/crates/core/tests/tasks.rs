use std::f64::consts::PI;

use isf_core::producer::{checkpoint_coeffs, coeff_bytes, tgv_field, CheckpointConfig, CostModel, ProducerConfig};
use isf_core::tasks::dct::Dct3;
use isf_core::tasks::{
    colormap, compression_table, lossless_encode, lossy_compress, lossy_decompress, relative_error,
    render_slice, Axis, CodecRegistry, CompressionReport, ErrorNorm, LossyConfig, RenderConfig,
    ValueRange,
};
use isf_core::{Field, FieldShape};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tgv(e: u32, p: u32, c: u32) -> Field {
    let cfg = ProducerConfig {
        elements: e,
        points: p,
        components: c,
        steps: 1,
        insitu_every: 1,
        dt: 0.01,
        nu: 0.05,
        cost: CostModel::BusySpin { ns_per_point: 0.0 },
        seed: 0,
        domain_length: 2.0 * PI,
        serial_fraction: 1.0,
    };
    tgv_field(&cfg, 0).unwrap()
}

/// Random smooth field: a few low Fourier modes with random amplitudes
/// and phases, plus an offset.
fn smooth_field(seed: u64) -> Field {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let e = rng.gen_range(1..=2);
    let p = rng.gen_range(2..=5);
    let c = if rng.gen_bool(0.5) { 1 } else { 3 };
    let shape = FieldShape::new(e, p, c).unwrap();
    let n = shape.grid_points_per_axis();
    let modes: Vec<([f64; 3], f64, f64)> = (0..4)
        .map(|_| {
            let k = [rng.gen_range(0..3) as f64, rng.gen_range(0..3) as f64, rng.gen_range(0..3) as f64];
            (k, rng.gen_range(-1.0..1.0), rng.gen_range(0.0..2.0 * PI))
        })
        .collect();
    let offset = rng.gen_range(-0.5..0.5);
    let mut values = vec![0.0; shape.value_count()];
    for el in 0..shape.element_count() {
        for pt in 0..shape.points_per_element() {
            let g = shape.global_coords(el, pt);
            let x = g.map(|v| v as f64 * 2.0 * PI / n as f64);
            for comp in 0..c as usize {
                let mut v = offset;
                for (k, a, ph) in &modes {
                    v += a * (k[0] * x[0] + k[1] * x[1] + k[2] * x[2] + ph + comp as f64).cos();
                }
                values[shape.index(el, pt, comp)] = v;
            }
        }
    }
    Field::new(shape, values).unwrap()
}

#[test]
fn error_guarantee_on_1000_smooth_fields() {
    let mut worst: f64 = 0.0;
    for seed in 0..1000u64 {
        let f = smooth_field(seed);
        let norm = if seed % 2 == 0 { ErrorNorm::RelativeL2 } else { ErrorNorm::RelativeLInf };
        let max_error = [1e-1, 1e-2, 1e-3][(seed % 3) as usize];
        let cfg = LossyConfig::new(max_error, norm).unwrap();
        let block = lossy_compress(&f, &cfg).unwrap();
        let back = lossy_decompress(&block, f.shape()).unwrap();
        let err = relative_error(&f, &back, norm);
        worst = worst.max(err / max_error);
        assert!(err <= max_error, "seed {seed}: {norm:?} error {err} > {max_error}");
    }
    assert!(worst <= 1.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn parseval_per_element(n in 2usize..7, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..n * n * n).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let mut coeffs = data.clone();
        Dct3::new(n).forward(&mut coeffs, &mut Vec::new());
        let a: f64 = data.iter().map(|v| v * v).sum();
        let b: f64 = coeffs.iter().map(|v| v * v).sum();
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1e-300));
    }

    #[test]
    fn compression_ratio_bitwise(o in 1u64..u64::MAX / 2, c in 0u64..u64::MAX / 2) {
        let r = CompressionReport::new(o, c);
        let expect = (o as f64 - c as f64) / o as f64;
        prop_assert_eq!(r.cr.to_bits(), expect.to_bits());
    }

    #[test]
    fn tighter_bound_never_keeps_fewer(seed in 0u64..10_000, e1 in 1e-4f64..0.5, e2 in 1e-4f64..0.5) {
        let f = smooth_field(seed);
        let (lo, hi) = if e1 < e2 { (e1, e2) } else { (e2, e1) };
        for norm in [ErrorNorm::RelativeL2, ErrorNorm::RelativeLInf] {
            let tight = lossy_compress(&f, &LossyConfig::new(lo, norm).unwrap()).unwrap();
            let loose = lossy_compress(&f, &LossyConfig::new(hi, norm).unwrap()).unwrap();
            for (t, l) in tight.kept_counts.iter().zip(&loose.kept_counts) {
                prop_assert!(t >= l);
            }
        }
    }

    #[test]
    fn every_codec_round_trips(data in prop::collection::vec(any::<u8>(), 0..20_000), runs in any::<bool>()) {
        let data: Vec<u8> = if runs { data.iter().map(|b| b / 64).collect() } else { data };
        for codec in CodecRegistry::builtin().iter() {
            let (coded, report) = lossless_encode(codec, &data);
            prop_assert_eq!(report.compressed_size, coded.len() as u64);
            prop_assert_eq!(&codec.decode(&coded).unwrap(), &data);
        }
    }
}

#[test]
fn codecs_round_trip_16_mib() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let mut data = vec![0u8; 16 << 20];
    // Mixed content: random bytes, runs, and a smooth ramp.
    for (i, chunk) in data.chunks_mut(4096).enumerate() {
        match i % 3 {
            0 => rng.fill(chunk),
            1 => chunk.fill((i % 251) as u8),
            _ => chunk.iter_mut().enumerate().for_each(|(j, b)| *b = (j / 16) as u8),
        }
    }
    for codec in CodecRegistry::builtin().iter() {
        let coded = codec.encode(&data);
        assert!(codec.decode(&coded).unwrap() == data, "{} failed on 16 MiB", codec.name());
    }
}

#[test]
fn rle_on_a_mebibyte_of_zeros() {
    let rle = CodecRegistry::builtin().by_name("rle").unwrap();
    let (_, report) = lossless_encode(rle, &vec![0u8; 1 << 20]);
    assert!(report.cr >= 0.99, "cr {}", report.cr);
}

#[test]
fn equal_sizes_give_zero_ratio() {
    assert_eq!(CompressionReport::new(4096, 4096).cr, 0.0);
}

#[test]
fn tgv_keeps_under_five_percent() {
    let f = tgv(8, 8, 3);
    let cfg = LossyConfig::new(1e-2, ErrorNorm::RelativeL2).unwrap();
    let block = lossy_compress(&f, &cfg).unwrap();
    assert!(block.kept_fraction() <= 0.05, "kept {}", block.kept_fraction());
    let back = lossy_decompress(&block, f.shape()).unwrap();
    let err = relative_error(&f, &back, ErrorNorm::RelativeL2);
    assert!(err <= 1e-2, "error {err}");
}

#[test]
fn bad_block_index_is_shape_mismatch() {
    let f = tgv(1, 4, 1);
    let mut block = lossy_compress(&f, &LossyConfig::new(0.1, ErrorNorm::RelativeL2).unwrap()).unwrap();
    block.indices[0] = 64;
    assert!(matches!(
        lossy_decompress(&block, f.shape()),
        Err(isf_core::tasks::TaskError::ShapeMismatch(_))
    ));
}

#[test]
fn render_is_deterministic() {
    let f = tgv(4, 8, 3);
    let cfg = RenderConfig {
        slice_axis: Axis::Z,
        slice_position: 0.25,
        width: 256,
        height: 256,
        value_range: ValueRange::Auto,
    };
    let a = render_slice(&f, &cfg).unwrap().to_ppm();
    let b = render_slice(&f, &cfg).unwrap().to_ppm();
    assert_eq!(a, b);
    assert_eq!(a.len(), "P6\n256 256\n255\n".len() + 256 * 256 * 3);
}

#[test]
fn max_location_maps_to_top_of_colormap() {
    // Scalar field in [0, 1] with its single maximum on the slice plane.
    let shape = FieldShape::new(2, 4, 1).unwrap();
    let n = shape.grid_points_per_axis();
    let (mx, my, mz) = (5usize, 2usize, 4usize);
    let mut values = vec![0.0; shape.value_count()];
    for el in 0..shape.element_count() {
        for pt in 0..shape.points_per_element() {
            let [x, y, z] = shape.global_coords(el, pt);
            let d = (x.abs_diff(mx) + y.abs_diff(my) + z.abs_diff(mz)) as f64;
            values[shape.index(el, pt, 0)] = 1.0 / (1.0 + d);
        }
    }
    let f = Field::new(shape, values).unwrap();
    // Locate the maximum on the z = 4 plane numerically.
    let (mut best, mut at) = (f64::MIN, (0, 0));
    for y in 0..n {
        for x in 0..n {
            if f.at(x, y, mz, 0) > best {
                best = f.at(x, y, mz, 0);
                at = (x, y);
            }
        }
    }
    let cfg = RenderConfig {
        slice_axis: Axis::Z,
        slice_position: mz as f64 / n as f64,
        width: n as u32,
        height: n as u32,
        value_range: ValueRange::Fixed { lo: 0.0, hi: 1.0 },
    };
    let img = render_slice(&f, &cfg).unwrap();
    assert_eq!(best, 1.0);
    assert_eq!(img.pixel(at.0 as u32, at.1 as u32), colormap()[255]);
}

#[test]
fn flat_spectrum_is_nearly_incompressible() {
    let cfg = CheckpointConfig {
        coeff_count: 1 << 16,
        spectrum_decay: 0.0,
        seed: 5,
    };
    let bytes = coeff_bytes(&checkpoint_coeffs(&cfg, 0).unwrap());
    let rows = compression_table(
        &[("flat".into(), bytes)],
        &CodecRegistry::builtin().names(),
        CodecRegistry::builtin(),
    );
    for r in rows {
        let m = r.outcome.unwrap();
        assert!(m.cr < 0.05, "{}: cr {}", r.codec, m.cr);
    }
}

#[test]
fn decaying_spectrum_compresses_under_every_codec() {
    let names = CodecRegistry::builtin().names();
    let cr = |decay: f64| -> Vec<f64> {
        let cfg = CheckpointConfig {
            coeff_count: 1 << 16,
            spectrum_decay: decay,
            seed: 5,
        };
        let bytes = coeff_bytes(&checkpoint_coeffs(&cfg, 0).unwrap());
        compression_table(&[("c".into(), bytes)], &names, CodecRegistry::builtin())
            .into_iter()
            .map(|r| r.outcome.unwrap().cr)
            .collect()
    };
    let steep = cr(2.0);
    let flat = cr(0.0);
    for ((s, f), name) in steep.iter().zip(&flat).zip(&names) {
        assert!(*s > 0.0, "{name}: cr {s}");
        assert!(s > f, "{name}: decay 2 cr {s} <= decay 0 cr {f}");
    }
}
