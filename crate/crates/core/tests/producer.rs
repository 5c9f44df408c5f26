use std::f64::consts::PI;
use std::sync::Mutex;

use isf_core::producer::{
    checkpoint_coeffs, run_compute_phase, tgv_field, CheckpointConfig, ComputeKernel, CostModel,
    ProducerConfig, ProducerError,
};
use isf_core::Field;
use proptest::prelude::*;

static TIMING: Mutex<()> = Mutex::new(());

fn cfg(e: u32, p: u32, c: u32, steps: u64) -> ProducerConfig {
    ProducerConfig {
        elements: e,
        points: p,
        components: c,
        steps,
        insitu_every: 1,
        dt: 0.01,
        nu: 0.05,
        cost: CostModel::BusySpin { ns_per_point: 0.0 },
        seed: 11,
        domain_length: 2.0 * PI,
        serial_fraction: 1.0,
    }
}

fn energy(f: &Field) -> f64 {
    f.values().iter().map(|v| v * v).sum::<f64>() * 0.5
}

#[test]
fn mean_u_vanishes() {
    let c = cfg(4, 8, 3, 50);
    for step in [0, 7, 49] {
        let f = tgv_field(&c, step).unwrap();
        let n = f.shape().grid_points_per_axis();
        let mut sum = 0.0;
        for z in 0..n {
            for y in 0..n {
                for x in 0..n {
                    sum += f.at(x, y, z, 0);
                }
            }
        }
        let mean = sum / (n * n * n) as f64;
        assert!(mean.abs() <= 1e-12, "step {step}: mean u {mean}");
    }
}

#[test]
fn energy_ratio_at_step_100() {
    let c = cfg(4, 8, 3, 101);
    let e0 = energy(&tgv_field(&c, 0).unwrap());
    let e100 = energy(&tgv_field(&c, 100).unwrap());
    let expect = (-4.0 * c.nu * 100.0 * c.dt).exp();
    assert!((e100 / e0 - expect).abs() <= 1e-9, "ratio {} vs {expect}", e100 / e0);
}

#[test]
fn analytic_point_at_t0() {
    // E·P = 8 points per axis over 2π: index 2 sits at π/2.
    let c = cfg(2, 4, 3, 1);
    let f = tgv_field(&c, 0).unwrap();
    assert!((f.at(0, 2, 2, 0) - 1.0).abs() < 1e-15);
    assert!(f.at(0, 2, 2, 1).abs() < 1e-15);
    assert_eq!(f.at(0, 2, 2, 2), 0.0);
}

#[test]
fn discrete_divergence_is_second_order_small() {
    for (e, p) in [(4u32, 8u32), (8, 4), (4, 10)] {
        let c = cfg(e, p, 3, 10);
        let f = tgv_field(&c, 3).unwrap();
        let n = f.shape().grid_points_per_axis();
        let h = c.domain_length / n as f64;
        let wrap = |i: usize, d: isize| (i as isize + d).rem_euclid(n as isize) as usize;
        let mut worst: f64 = 0.0;
        for z in 0..n {
            for y in 0..n {
                for x in 0..n {
                    let du = f.at(wrap(x, 1), y, z, 0) - f.at(wrap(x, -1), y, z, 0);
                    let dv = f.at(x, wrap(y, 1), z, 1) - f.at(x, wrap(y, -1), z, 1);
                    let dw = f.at(x, y, wrap(z, 1), 2) - f.at(x, y, wrap(z, -1), 2);
                    worst = worst.max(((du + dv + dw) / (2.0 * h)).abs());
                }
            }
        }
        assert!(worst <= 10.0 * h * h, "E={e} P={p}: max |div| {worst} > {}", 10.0 * h * h);
    }
}

#[test]
fn step_out_of_range() {
    let c = cfg(1, 2, 1, 5);
    assert_eq!(
        tgv_field(&c, 5).unwrap_err(),
        ProducerError::StepOutOfRange { step: 5, steps: 5 }
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn energy_decays_monotonically(nu in 1e-3f64..1.0, dt in 1e-3f64..0.1, e in 1u32..3, p in 2u32..6) {
        let mut c = cfg(e, p, 3, 40);
        c.nu = nu;
        c.dt = dt;
        let mut prev = f64::INFINITY;
        for step in 0..40 {
            let en = energy(&tgv_field(&c, step).unwrap());
            prop_assert!(en < prev);
            prev = en;
        }
    }

    #[test]
    fn output_is_pure_in_config_and_step(seed in any::<u64>(), step in 0u64..20) {
        let mut c = cfg(2, 3, 3, 20);
        c.seed = seed;
        let a = tgv_field(&c, step).unwrap();
        let b = tgv_field(&c, step).unwrap();
        prop_assert_eq!(a, b);
        let ck = CheckpointConfig { coeff_count: 257, spectrum_decay: 1.5, seed };
        prop_assert_eq!(checkpoint_coeffs(&ck, step).unwrap(), checkpoint_coeffs(&ck, step).unwrap());
    }
}

#[test]
fn field_is_independent_of_pool_size() {
    let c = cfg(4, 5, 3, 3);
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let a = one.install(|| tgv_field(&c, 2).unwrap());
    let b = four.install(|| tgv_field(&c, 2).unwrap());
    assert_eq!(a, b);
}

#[test]
fn checkpoint_steps_differ() {
    let ck = CheckpointConfig {
        coeff_count: 64,
        spectrum_decay: 1.0,
        seed: 9,
    };
    assert_ne!(checkpoint_coeffs(&ck, 0).unwrap(), checkpoint_coeffs(&ck, 1).unwrap());
    assert_eq!(checkpoint_coeffs(&ck, 0).unwrap().len(), 128);
}

#[test]
fn checkpoint_magnitude_ratio_before_noise() {
    for d in [0.5, 1.0, 2.0, 3.7] {
        let ck = CheckpointConfig {
            coeff_count: 100,
            spectrum_decay: d,
            seed: 0,
        };
        for k in [1usize, 3, 17, 40] {
            let ratio = ck.base_magnitude(2 * k) / ck.base_magnitude(k);
            assert!((ratio - 2f64.powf(-d)).abs() <= 1e-12);
        }
    }
}

#[test]
fn calibrated_10ms_mean_within_10_percent() {
    let _g = TIMING.lock().unwrap_or_else(|e| e.into_inner());
    let mut c = cfg(1, 2, 1, 1);
    c.cost = CostModel::Calibrated { target_step_s: 0.010 };
    let k = ComputeKernel::prepare(&c).unwrap();
    let mean = (0..100).map(|_| k.run(1)).sum::<f64>() / 100.0;
    assert!((0.009..=0.011).contains(&mean), "mean {mean} s");
}

#[test]
fn zero_cost_busy_spin_is_instant() {
    let _g = TIMING.lock().unwrap_or_else(|e| e.into_inner());
    let t = run_compute_phase(&cfg(2, 4, 3, 1)).unwrap();
    assert!((0.0..1e-3).contains(&t), "took {t}");
}

#[test]
fn nanosecond_target_cannot_be_calibrated() {
    let _g = TIMING.lock().unwrap_or_else(|e| e.into_inner());
    let mut c = cfg(1, 2, 1, 1);
    c.cost = CostModel::Calibrated { target_step_s: 1e-9 };
    assert!(matches!(
        run_compute_phase(&c),
        Err(ProducerError::CalibrationFailed { rounds: 5, .. })
    ));
}

#[test]
fn producer_workers_scale_the_parallel_part() {
    let mut c = cfg(1, 2, 1, 1);
    c.cost = CostModel::BusySpin { ns_per_point: 1e6 };
    c.serial_fraction = 0.25;
    let k = ComputeKernel::prepare(&c).unwrap();
    let unit = 8.0 * 1e-3;
    assert!((k.step_cost_s(1) - unit).abs() < 1e-15);
    assert!((k.step_cost_s(4) - unit * (0.25 + 0.75 / 4.0)).abs() < 1e-15);
}
