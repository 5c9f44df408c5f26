use isf_core::model::des::simulate;
use isf_core::model::{
    estimate, fit_curve, optimize_split, HybridTerms, ModelError, ModelParams, ScalingCurve,
};
use isf_core::{ResourcePlan, WorkflowMode};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn curve(s: f64, u: f64) -> ScalingCurve {
    ScalingCurve::new(s, u).unwrap()
}

fn params(sim: ScalingCurve, task: ScalingCurve, steps: u64, cadence: u64, h: f64) -> ModelParams {
    ModelParams {
        sim,
        task,
        steps,
        cadence,
        handoff_s: h,
        hybrid: None,
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

fn random_params(rng: &mut ChaCha8Rng) -> ModelParams {
    let cadence = rng.gen_range(1..=25u64);
    let n = rng.gen_range(1..=40u64);
    let pick = |rng: &mut ChaCha8Rng| {
        let s = if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.0..=1.0) };
        curve(s, rng.gen_range(1e-4..2.0))
    };
    ModelParams {
        sim: pick(rng),
        task: pick(rng),
        steps: cadence * n,
        cadence,
        handoff_s: if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.0..0.5) },
        hybrid: Some(HybridTerms {
            prefix: pick(rng),
            retention: rng.gen_range(0.0..=1.0),
        }),
    }
}

#[test]
fn estimate_matches_event_simulation_on_500_random_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    let mut worst: f64 = 0.0;
    for set in 0..500 {
        let p = random_params(&mut rng);
        let total = rng.gen_range(2..=96u32);
        let pi = rng.gen_range(1..total);
        let capacity = rng.gen_range(1..=4usize);
        for mode in WorkflowMode::ALL {
            let plan = match mode {
                WorkflowMode::Synchronous => ResourcePlan::all_producer(total).unwrap(),
                _ => ResourcePlan::new(total, total - pi, pi).unwrap(),
            };
            let e = estimate(mode, plan, &p).unwrap().predicted_total_s;
            let d = simulate(mode, plan, &p, capacity).unwrap().total_s;
            worst = worst.max(rel(e, d));
            assert!(rel(e, d) <= 1e-9, "set {set} {mode:?} {plan:?} cap {capacity}: {e} vs {d}");
        }
    }
    assert!(worst <= 1e-9);
}

#[test]
fn all_splits_of_72_match_event_simulation() {
    let p = params(curve(0.02, 0.05), curve(0.5, 0.3), 2000, 20, 2e-3);
    let scan = optimize_split(WorkflowMode::Asynchronous, 72, &p).unwrap();
    assert_eq!(scan.table.len(), 71);
    for row in &scan.table {
        let plan = ResourcePlan::new(72, row.p_o, row.p_i).unwrap();
        let d = simulate(WorkflowMode::Asynchronous, plan, &p, 1).unwrap();
        assert!(rel(row.predicted_total_s, d.total_s) <= 1e-9, "p_i {}", row.p_i);
    }
    // The scan's argmin is the exhaustive minimum.
    let min = scan.table.iter().map(|r| r.predicted_total_s).fold(f64::INFINITY, f64::min);
    assert_eq!(scan.estimate.predicted_total_s, min);
}

#[test]
fn async_producer_bound_and_consumer_bound_examples() {
    // 10 intervals of 50 ms; tasks of 20 ms then 100 ms.
    let plan = ResourcePlan::new(2, 1, 1).unwrap();
    let fast = params(curve(1.0, 0.005), curve(1.0, 0.020), 100, 10, 1e-3);
    let e = estimate(WorkflowMode::Asynchronous, plan, &fast).unwrap();
    assert!(rel(e.predicted_total_s, 10.0 * 0.051 + 0.020) <= 1e-12);
    let slow = params(curve(1.0, 0.005), curve(1.0, 0.100), 100, 10, 1e-3);
    let e = estimate(WorkflowMode::Asynchronous, plan, &slow).unwrap();
    assert!(rel(e.predicted_total_s, 0.051 + 10.0 * 0.100) <= 1e-12);
    assert!(e.predicted_total_s >= e.predicted_producer_s.max(e.predicted_insitu_s));
}

#[test]
fn invalid_cadence_is_rejected() {
    let p = params(curve(0.1, 1.0), curve(0.1, 1.0), 100, 7, 0.0);
    assert_eq!(
        estimate(WorkflowMode::Synchronous, ResourcePlan::all_producer(4).unwrap(), &p),
        Err(ModelError::InvalidCadence { steps: 100, cadence: 7 })
    );
}

/// Per-interval producer and consumer times for a split.
fn ab(p: &ModelParams, po: u32, pi: u32) -> (f64, f64) {
    (p.cadence as f64 * p.sim.time(po) + p.handoff_s, p.task.time(pi))
}

#[test]
fn optimum_balances_scalable_curves_up_to_one_worker() {
    for (total, n, unit) in [(8u32, 10u64, 0.4), (72, 100, 1.0), (100, 7, 2.5), (333, 50, 0.01)] {
        let cadence = 10;
        // Equal aggregate work: one interval of simulation costs what one task costs.
        let p = params(curve(0.0, unit / cadence as f64), curve(0.0, unit), n * cadence, cadence, 0.0);
        let scan = optimize_split(WorkflowMode::Asynchronous, total, &p).unwrap();
        let (po, pi) = (scan.best.producer(), scan.best.insitu());
        let (a, b) = ab(&p, po, pi);
        // The balance point lies between the optimum and one of its
        // neighbours; one worker moves a and b by at most this much.
        let mut gap: f64 = 0.0;
        let mut bracketed = a == b;
        for d in [-1i64, 1] {
            let npi = pi as i64 + d;
            if npi < 1 || npi >= total as i64 {
                continue;
            }
            let (na, nb) = ab(&p, total - npi as u32, npi as u32);
            gap = gap.max((na - a).abs() + (nb - b).abs());
            bracketed |= (na - nb).signum() != (a - b).signum();
        }
        assert!(bracketed, "p_t {total}: optimum p_i {pi} does not bracket a = b");
        assert!((a - b).abs() <= gap, "p_t {total}: |a−b| {} > gap {gap}", (a - b).abs());
        assert!((a - b).abs() / a.max(b) <= 0.10, "p_t {total}: a {a} b {b}");
    }
}

#[test]
fn free_task_needs_one_worker() {
    let p = params(curve(0.02, 0.05), curve(0.5, 0.0), 2000, 20, 0.0);
    for total in [2u32, 72, 576] {
        assert_eq!(optimize_split(WorkflowMode::Asynchronous, total, &p).unwrap().best.insitu(), 1);
    }
}

fn drift_params(task_unit: f64) -> ModelParams {
    params(curve(0.02, 0.05), curve(0.5, task_unit), 2000, 20, 0.0)
}

fn optimal_fractions(p: &ModelParams) -> Vec<f64> {
    [72u32, 144, 216, 288, 360, 432, 504, 576]
        .iter()
        .map(|&t| optimize_split(WorkflowMode::Asynchronous, t, p).unwrap().best.insitu() as f64 / t as f64)
        .collect()
}

#[test]
fn insitu_fraction_grows_with_total_workers() {
    // One interval of simulation costs 1 s on one worker; the task's
    // serial floor sits just above the simulation's.
    let f = optimal_fractions(&drift_params(0.045));
    for w in f.windows(2) {
        assert!(w[1] >= w[0], "fractions {f:?}");
    }
    assert!(f[7] > 4.0 * f[0], "fractions {f:?}");
}

#[test]
fn consumer_bound_optimum_settles_on_a_fixed_fraction() {
    // Once the task's serial floor dominates, total = a + n·b and its
    // continuous minimiser fixes p_o/p_i = sqrt(A(1−σ) / (n·B(1−τ))).
    let p = drift_params(0.1);
    let n = p.intervals() as f64;
    let a_par = p.cadence as f64 * p.sim.unit_cost_s * (1.0 - p.sim.serial_fraction);
    let b_par = p.task.unit_cost_s * (1.0 - p.task.serial_fraction);
    let ratio = (a_par / (n * b_par)).sqrt();
    for total in [288u32, 432, 576] {
        let pi = optimize_split(WorkflowMode::Asynchronous, total, &p).unwrap().best.insitu();
        let expect = total as f64 / (1.0 + ratio);
        assert!((pi as f64 - expect).abs() <= 1.0, "p_t {total}: p_i {pi} vs {expect}");
    }
}

#[test]
fn fit_recovers_exact_curve() {
    let truth = curve(0.1, 2.0);
    let samples: Vec<(u32, f64)> = [1, 2, 3, 5, 8, 13].iter().map(|&p| (p, truth.time(p))).collect();
    let fit = fit_curve(&samples).unwrap();
    assert!((fit.curve.serial_fraction - 0.1).abs() <= 1e-6);
    assert!((fit.curve.unit_cost_s - 2.0).abs() <= 1e-6);
    assert!(fit.residual <= 1e-9);
}

#[test]
fn fit_under_five_percent_noise() {
    let truth = curve(0.1, 2.0);
    let ps = [1u32, 2, 4, 8, 16, 32, 64, 128];
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples: Vec<(u32, f64)> = ps
            .iter()
            .flat_map(|&p| [p, p, p])
            .map(|p| (p, truth.time(p) * rng.gen_range(0.95..=1.05)))
            .collect();
        let fit = fit_curve(&samples).unwrap().curve;
        assert!(rel(fit.serial_fraction, 0.1) <= 0.15, "seed {seed}: s {}", fit.serial_fraction);
        assert!(rel(fit.unit_cost_s, 2.0) <= 0.15, "seed {seed}: unit {}", fit.unit_cost_s);
    }
}

#[test]
fn fit_needs_two_worker_counts() {
    assert_eq!(fit_curve(&[(4, 1.0), (4, 1.1)]), Err(ModelError::DegenerateSamples));
    assert_eq!(fit_curve(&[]), Err(ModelError::DegenerateSamples));
}

fn best_async_and_sync(p: &ModelParams, total: u32) -> (f64, f64) {
    let asy = optimize_split(WorkflowMode::Asynchronous, total, p).unwrap().estimate.predicted_total_s;
    let sync = estimate(WorkflowMode::Synchronous, ResourcePlan::all_producer(total).unwrap(), p)
        .unwrap()
        .predicted_total_s;
    (asy, sync)
}

#[test]
fn handoff_below_task_time_is_not_enough_for_async_to_win() {
    // Perfectly scalable curves: splitting the workers never beats using
    // all of them for both phases in turn, whatever the handoff.
    let p = params(curve(0.0, 0.01), curve(0.0, 1.0), 1000, 10, 0.0);
    for total in [2u32, 8, 72] {
        assert!(p.handoff_s <= p.task.time(total));
        let (asy, sync) = best_async_and_sync(&p, total);
        assert!(asy > sync, "p_t {total}: async {asy} sync {sync}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    /// Async beats sync when the simulation does not scale with host
    /// workers, the handoff plus one lost task worker is paid back by
    /// overlapping n tasks, and the slower task still hides behind the
    /// simulation it overlaps.
    #[test]
    fn async_wins_for_non_scaling_simulation(
        total in 2u32..200,
        n in 2u64..60,
        cadence in 1u64..30,
        task_s in 0.0f64..=1.0,
        task_unit in 1e-3f64..5.0,
        h_frac in 0.0f64..=1.0,
        slack in 1.0f64..10.0,
    ) {
        let task = curve(task_s, task_unit);
        let nf = n as f64;
        let (t_all, t_less) = (task.time(total), task.time(total - 1));
        prop_assume!(nf * t_all >= t_less);
        let h = h_frac * (nf * t_all - t_less) / nf;
        let need = (nf * (t_less - t_all) + h) / ((nf - 1.0) * cadence as f64);
        let sim_unit = need.max(1e-6) * slack;
        let p = params(curve(1.0, sim_unit), task, n * cadence, cadence, h);
        prop_assert!(h <= task.time(total));
        let (asy, sync) = best_async_and_sync(&p, total);
        prop_assert!(asy <= sync * (1.0 + 1e-12), "async {} sync {}", asy, sync);
    }
}
