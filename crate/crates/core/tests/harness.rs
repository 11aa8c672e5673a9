use std::f64::consts::{E, PI};

use mfvision::harness::{
    c_m, default_snapshots, fit_loglog_slope, run_chaos, run_lln_theta, run_lln_velocity, run_stability, theoretical_bound,
    ChaosConfig, LawSpec, LlnConfig, StabilityConfig, TheoreticalRate, DEFAULT_SNAPSHOTS,
};
use mfvision::pde::InitialDensity;
use mfvision::rng::stream_rng;
use mfvision::{DomainSpec, KernelSpec, OrientationField, PdeConfig, Region, SensitivitySpec, SimConfig};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn unit_box() -> DomainSpec {
    DomainSpec::new_box(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap()
}

fn ball(r: f64) -> SensitivitySpec {
    SensitivitySpec::new(Region::Ball { radius: r }, OrientationField::Constant { value: vec![1.0, 0.0] }).unwrap()
}

proptest! {
    #[test]
    fn theoretical_bound_decreases_in_n(p in 1.0..3.0f64, dq in 0.1..3.0f64, d in 1usize..5, m in 1u32..4, n in 100usize..100_000) {
        let rate = TheoreticalRate { p, q: p + dq, d, m };
        prop_assume!(theoretical_bound(&rate, n).is_ok());
        let a = theoretical_bound(&rate, n).unwrap();
        let b = theoretical_bound(&rate, 2 * n).unwrap();
        prop_assert!(b <= a);
        if m > 1 {
            prop_assert!(b < a);
        }
    }

    #[test]
    fn exact_power_laws_fit_exactly(k in -1.5..1.0f64, scale in 0.01..100.0f64) {
        let rows: Vec<(f64, f64)> = [16.0, 64.0, 256.0, 1024.0, 4096.0].iter().map(|&n: &f64| (n, scale * n.powf(k))).collect();
        let (slope, ci) = fit_loglog_slope(&rows).unwrap();
        prop_assert!((slope - k).abs() <= 1e-10);
        prop_assert!(ci <= 1e-6);
    }
}

#[test]
fn rate_constants_and_preconditions() {
    assert!((c_m(1) - (4.0 + 8.0 * E * E)).abs() < 1e-12);
    assert!((c_m(1) - 63.11).abs() < 0.01);
    let rate = TheoreticalRate { p: 1.0, q: 3.0, d: 2, m: 2 };
    assert!(theoretical_bound(&rate, 15).is_err());
    let n = 1000f64;
    let expect = c_m(2) * n.powf(-0.25) + n.powf(-0.5) * (1.0 + n).ln() + n.powf(-2.0 / 3.0);
    assert!((theoretical_bound(&rate, 1000).unwrap() - expect).abs() < 1e-12 * expect);
    assert!(theoretical_bound(&TheoreticalRate { p: 1.0, q: 2.0, d: 2, m: 2 }, 1000).is_err());
    assert!(theoretical_bound(&TheoreticalRate { p: 1.0, q: 1.5, d: 3, m: 2 }, 1000).is_err());
    assert_eq!(rate.leading_exponent(), -0.25);
}

#[test]
fn slope_fit_is_calibrated_on_noisy_power_laws() {
    let ns: Vec<f64> = (0..8).map(|k| 64.0 * 2f64.powi(k)).collect();
    let mut rng = stream_rng(81, 0);
    let trials = 1000;
    let mut inside = 0;
    for _ in 0..trials {
        let rows: Vec<(f64, f64)> = ns
            .iter()
            .map(|&n| {
                let z: f64 = rng.sample(StandardNormal);
                (n, n.powf(-0.25) * (1.0 + 0.05 * z))
            })
            .collect();
        let (slope, _) = fit_loglog_slope(&rows).unwrap();
        if (-0.35..=-0.15).contains(&slope) {
            inside += 1;
        }
    }
    assert!(inside as f64 >= 0.95 * trials as f64, "{inside}");
    let flat: Vec<(f64, f64)> = ns.iter().map(|&n| (n, 2.0)).collect();
    assert_eq!(fit_loglog_slope(&flat).unwrap().0, 0.0);
    assert!(fit_loglog_slope(&flat[..3]).is_err());
    assert!(fit_loglog_slope(&[(1.0, 1.0), (2.0, 0.0), (3.0, 1.0), (4.0, 1.0)]).is_err());
}

fn lln(kernel: KernelSpec, sens: SensitivitySpec) -> LlnConfig {
    LlnConfig {
        ns: vec![16, 32, 64, 128],
        replicas: 30,
        m: 2,
        domain: unit_box(),
        law: LawSpec::Uniform,
        sensitivity: sens,
        kernel,
        u_points: 64,
    }
}

#[test]
fn lln_runs_are_deterministic_and_below_their_bounds() {
    let cfg = lln(KernelSpec::gaussian(1.0, 0.2).unwrap(), ball(0.3));
    let a = run_lln_velocity(&cfg, 5).unwrap();
    assert_eq!(a, run_lln_velocity(&cfg, 5).unwrap());
    assert_ne!(a, run_lln_velocity(&cfg, 6).unwrap());
    assert!(a.rows_below_bound());
    let t = run_lln_theta(&cfg, 5).unwrap();
    assert!(t.rows_below_bound());
    // Total-variation sanity: masses of sets under two probability laws.
    assert!(t.rows.iter().all(|r| r.mean <= 2.0));
    assert_eq!(t.theory_exponent, -0.25);
}

#[test]
fn lln_rejects_too_few_replicas_or_small_n() {
    let mut cfg = lln(KernelSpec::gaussian(1.0, 0.2).unwrap(), ball(0.3));
    cfg.replicas = 29;
    assert!(run_lln_velocity(&cfg, 1).is_err());
    cfg.replicas = 30;
    cfg.ns = vec![8, 32, 64, 128];
    assert!(run_lln_velocity(&cfg, 1).is_err());
}

fn stability(kernel: KernelSpec, sigma: f64, deltas: Vec<f64>) -> StabilityConfig {
    let mut sim = SimConfig::new(50, 0.3, sigma, unit_box(), ball(0.3), kernel);
    sim.dt = Some(0.01);
    StabilityConfig { deltas, sim, pde: None, direction: None }
}

#[test]
fn zero_offset_stays_zero() {
    let r = run_stability(&stability(KernelSpec::gaussian(1.0, 0.3).unwrap(), 0.2, vec![0.0, 0.02]), 3).unwrap();
    let (delta, d) = &r.deviations[0];
    assert_eq!(*delta, 0.0);
    assert!(d.iter().all(|v| *v == 0.0));
}

#[test]
fn projection_never_expands_offsets_without_interaction() {
    let r = run_stability(&stability(KernelSpec::zero(), 0.0, vec![0.01, 0.05]), 3).unwrap();
    for (_, d) in &r.deviations {
        assert!(d.iter().all(|v| *v <= d[0]));
    }
}

#[test]
fn default_snapshot_schedule_is_step_aligned() {
    let mut sim = SimConfig::new(10, 0.37, 0.1, unit_box(), ball(0.3), KernelSpec::zero());
    sim.dt = Some(0.01);
    let times = default_snapshots(&sim);
    assert_eq!(times.len(), DEFAULT_SNAPSHOTS);
    assert!((times.last().unwrap() - 0.37).abs() < 1e-12);
    sim.snapshots = times;
    assert!(sim.snapshot_steps().is_ok());
    // Fewer steps than snapshots: duplicates collapse.
    sim.t_end = 0.05;
    sim.snapshots.clear();
    assert_eq!(default_snapshots(&sim).len(), 5);
}

fn chaos(kernel: KernelSpec, initial: InitialDensity) -> ChaosConfig {
    let sens = SensitivitySpec::new(Region::Cone { radius: 0.3, half_angle: PI / 3.0 }, OrientationField::Constant { value: vec![1.0, 0.3] })
        .unwrap();
    let mut pde = PdeConfig::new(vec![32, 32], 0.1, 0.05, unit_box(), sens.clone(), kernel.clone(), initial).unwrap();
    pde.snapshots = vec![0.05];
    let mut sim = SimConfig::new(1, 0.1, 0.05, unit_box(), sens, kernel);
    sim.dt = Some(0.01);
    sim.snapshots = vec![0.05, 0.1];
    ChaosConfig { ns: vec![16, 32, 64, 128], replicas: 6, p: 1.0, q: 3.0, m: 2, pde, sim }
}

#[test]
fn chaos_is_deterministic_and_decays_for_pure_sampling_error() {
    let cfg = chaos(KernelSpec::zero(), InitialDensity::Uniform);
    let a = run_chaos(&cfg, 9).unwrap();
    let b = run_chaos(&cfg, 9).unwrap();
    assert_eq!(a.table, b.table);
    assert_eq!(a.replica_values, b.replica_values);
    assert!(a.table.strictly_decreasing());
    assert!(a.table.slope < -0.15, "{}", a.table.slope);
    assert!(a.table.rows.iter().all(|r| r.mean <= r.theory_bound));
}

#[test]
fn chaos_rejects_misaligned_schedules() {
    let mut cfg = chaos(KernelSpec::gaussian(1.0, 0.2).unwrap(), InitialDensity::Uniform);
    cfg.sim.snapshots = vec![0.07, 0.1];
    assert!(run_chaos(&cfg, 1).is_err());
    let mut cfg = chaos(KernelSpec::gaussian(1.0, 0.2).unwrap(), InitialDensity::Uniform);
    cfg.ns = vec![32, 16, 64, 128];
    assert!(run_chaos(&cfg, 1).is_err());
}

#[test]
fn lln_statistics_vanish_without_interaction() {
    let cfg = lln(KernelSpec::zero(), ball(0.3));
    let mut rng = stream_rng(90, 0);
    let law = mfvision::harness::ReferenceLaw::new(&cfg.law, &cfg.domain).unwrap();
    for _ in 0..5 {
        let n = rng.random_range(16..200);
        let cloud = law.sample(n, &mut rng).unwrap();
        assert_eq!(mfvision::harness::velocity_lln_statistic(&cloud, &law, &cfg.sensitivity, &cfg.kernel).unwrap(), 0.0);
    }
}
