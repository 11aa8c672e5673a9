use itertools::Itertools;
use mfvision::pde::{InitialDensity, Mesh};
use mfvision::rng::stream_rng;
use mfvision::transport::{estimate_wp_cloud_vs_density, sample_density, wasserstein_inf, wasserstein_p, CostMatrix};
use mfvision::{DomainSpec, GridDensity, ParticleCloud};
use proptest::prelude::*;
use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn cloud(points: &[(f64, f64)]) -> ParticleCloud {
    ParticleCloud::from_points(2, points.iter().flat_map(|&(x, y)| [x, y]).collect()).unwrap()
}

fn pairs(n: std::ops::Range<usize>) -> impl Strategy<Value = (Vec<(f64, f64)>, Vec<(f64, f64)>)> {
    n.prop_flat_map(|k| {
        let pts = prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), k);
        (pts.clone(), pts)
    })
}

fn unit_box() -> DomainSpec {
    DomainSpec::new_box(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scale_equivariance((a, b) in pairs(1..20), c in 0.01..50.0f64) {
        let scale = |v: &[(f64, f64)]| v.iter().map(|&(x, y)| (c * x, c * y)).collect::<Vec<_>>();
        let (ca, cb) = (cloud(&scale(&a)), cloud(&scale(&b)));
        let (a, b) = (cloud(&a), cloud(&b));
        for p in [1.0, 2.0, 3.5] {
            let base = wasserstein_p(&a, &b, p).unwrap();
            prop_assert!((wasserstein_p(&ca, &cb, p).unwrap() - c * base).abs() <= 1e-12 * c.max(1.0) * base.max(1.0));
        }
        let base = wasserstein_inf(&a, &b).unwrap();
        prop_assert!((wasserstein_inf(&ca, &cb).unwrap() - c * base).abs() <= 1e-12 * c.max(1.0) * base.max(1.0));
    }

    #[test]
    fn distances_increase_with_the_exponent((a, b) in pairs(1..25)) {
        let (a, b) = (cloud(&a), cloud(&b));
        let w1 = wasserstein_p(&a, &b, 1.0).unwrap();
        let w2 = wasserstein_p(&a, &b, 2.0).unwrap();
        let w4 = wasserstein_p(&a, &b, 4.0).unwrap();
        let wi = wasserstein_inf(&a, &b).unwrap();
        prop_assert!(w1 <= w2 + 1e-12 && w2 <= w4 + 1e-12 && w4 <= wi + 1e-12);
    }

    #[test]
    fn relabeling_either_cloud_changes_nothing((a, b) in pairs(2..15), rot in 1usize..14) {
        let n = a.len();
        let mut shuffled = b.clone();
        shuffled.rotate_left(rot % n);
        let (ca, cb, cs) = (cloud(&a), cloud(&b), cloud(&shuffled));
        for p in [1.0, 2.0] {
            prop_assert!((wasserstein_p(&ca, &cb, p).unwrap() - wasserstein_p(&ca, &cs, p).unwrap()).abs() <= 1e-12);
        }
        prop_assert_eq!(wasserstein_inf(&ca, &cb).unwrap(), wasserstein_inf(&ca, &cs).unwrap());
        prop_assert_eq!(wasserstein_inf(&ca, &cb).unwrap(), wasserstein_inf(&cb, &ca).unwrap());
    }

    #[test]
    fn translation_costs_its_length((a, _) in pairs(1..8), vx in -0.5..0.5f64, vy in -0.5..0.5f64) {
        let b: Vec<(f64, f64)> = a.iter().map(|&(x, y)| (x + vx, y + vy)).collect();
        let (ca, cb) = (cloud(&a), cloud(&b));
        let n = a.len();
        let cost = CostMatrix::new(&ca, &cb).unwrap();
        let brute = (0..n)
            .permutations(n)
            .map(|perm| perm.iter().enumerate().map(|(i, &j)| cost.get(i, j)).fold(0.0, f64::max))
            .fold(f64::INFINITY, f64::min);
        let w = wasserstein_inf(&ca, &cb).unwrap();
        prop_assert!((w - brute).abs() <= 1e-12);
        prop_assert!(w <= vx.hypot(vy) + 1e-12);
    }
}

#[test]
fn uniform_sampling_passes_a_chi_square_test() {
    let mesh = Mesh::new(unit_box(), vec![10, 10]).unwrap();
    let rho = GridDensity::uniform(mesh.clone());
    let n = 100_000;
    let sample = sample_density(&rho, n, &mut stream_rng(71, 0)).unwrap();
    let mut counts = vec![0usize; mesh.len()];
    for r in sample.rows() {
        counts[mesh.flat_index(&mesh.locate(&r))] += 1;
    }
    let expect = n as f64 / mesh.len() as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expect).powi(2) / expect).sum();
    let p_value = 1.0 - ChiSquared::new((mesh.len() - 1) as f64).unwrap().cdf(chi2);
    assert!(p_value > 1e-3, "chi2 {chi2}, p {p_value}");
}

#[test]
fn sampling_is_deterministic_and_spikes_stay_in_their_cell() {
    let mesh = Mesh::new(unit_box(), vec![8, 8]).unwrap();
    let rho = InitialDensity::Gaussian { mean: vec![0.3, 0.6], std: 0.2 }.build(&mesh).unwrap();
    let a = sample_density(&rho, 500, &mut stream_rng(72, 0)).unwrap();
    let b = sample_density(&rho, 500, &mut stream_rng(72, 0)).unwrap();
    assert_eq!(a.positions(), b.positions());

    let spike = InitialDensity::Spike { center: vec![0.7, 0.2] }.build(&mesh).unwrap();
    let cell = mesh.locate(&[0.7, 0.2]);
    let s = sample_density(&spike, 2000, &mut stream_rng(73, 0)).unwrap();
    assert!(s.rows().iter().all(|r| mesh.locate(r) == cell));

    let at_z = ParticleCloud::from_points(2, [0.7, 0.2].repeat(64)).unwrap();
    let (m, _) = estimate_wp_cloud_vs_density(&at_z, &spike, 2.0, 5, &mut stream_rng(74, 0)).unwrap();
    let h = mesh.h()[0];
    assert!(m <= h * 2f64.sqrt());
}

#[test]
fn cloud_to_density_estimate_falls_with_the_cloud_size() {
    let mesh = Mesh::new(unit_box(), vec![16, 16]).unwrap();
    let rho = InitialDensity::Gaussian { mean: vec![0.5, 0.5], std: 0.25 }.build(&mesh).unwrap();
    let mut rng = stream_rng(75, 0);
    let means: Vec<f64> = [64, 256, 1024]
        .iter()
        .map(|&n| {
            let c = sample_density(&rho, n, &mut rng).unwrap();
            estimate_wp_cloud_vs_density(&c, &rho, 1.0, 4, &mut rng).unwrap().0
        })
        .collect();
    assert!(means[0] > means[1] && means[1] > means[2], "{means:?}");
}

#[test]
fn first_moment_is_below_the_second_per_replica() {
    let mesh = Mesh::new(unit_box(), vec![12, 12]).unwrap();
    let rho = GridDensity::uniform(mesh);
    let mut rng = stream_rng(76, 0);
    for _ in 0..20 {
        let c = sample_density(&rho, 50, &mut rng).unwrap();
        let seed = rng.random::<u64>();
        let (w1, _) = estimate_wp_cloud_vs_density(&c, &rho, 1.0, 1, &mut stream_rng(seed, 0)).unwrap();
        let (w2, _) = estimate_wp_cloud_vs_density(&c, &rho, 2.0, 1, &mut stream_rng(seed, 0)).unwrap();
        assert!(w1 <= w2 + 1e-12);
    }
}
