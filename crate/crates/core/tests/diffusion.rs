use ndarray::{arr2, Array2};
use proptest::prelude::*;
use rand_distr::{Distribution, StandardNormal};

use imgopt::diffusion::{
    denoise, forward_noise, reverse_step, GmmModel, NoiseSchedule, PointBatch, SigmaMode,
};
use imgopt::experiment::mean_std;
use imgopt::rng::{seeded, split};

fn column_stats(x: &Array2<f64>, j: usize) -> (f64, f64) {
    mean_std(&x.column(j).to_vec())
}

#[test]
fn forward_noise_moments() {
    let schedule = NoiseSchedule::linear(100, 1e-4, 0.02).unwrap();
    let n = 100_000;
    let x0 = Array2::from_elem((n, 1), 1.5);
    let xt = forward_noise(
        &PointBatch::clean(x0).unwrap(),
        60,
        &schedule,
        &mut seeded(1),
    )
    .unwrap();
    let ab = schedule.alpha_bar(60);
    let (m, s) = column_stats(&xt.points, 0);
    assert!((m - ab.sqrt() * 1.5).abs() < 3.0 * s / (n as f64).sqrt());
    // Sample variance SE for a Gaussian: sigma^2 sqrt(2 / (n - 1)).
    let var = s * s;
    assert!((var - (1.0 - ab)).abs() < 3.0 * (1.0 - ab) * (2.0 / (n as f64 - 1.0)).sqrt());
}

#[test]
fn data_sampler_weights() {
    let model = GmmModel::new(
        vec![0.2, 0.8],
        arr2(&[[5.0], [-5.0]]),
        arr2(&[[0.1], [0.1]]),
    )
    .unwrap();
    let n = 50_000;
    let x = model.sample_data(n, &mut seeded(2));
    let frac = x.column(0).iter().filter(|v| **v > 0.0).count() as f64 / n as f64;
    assert!((frac - 0.2).abs() < 3.0 * (0.16 / n as f64).sqrt());
}

#[test]
fn deterministic_mode_ignores_the_generator() {
    let model = GmmModel::new(
        vec![0.5, 0.5],
        arr2(&[[1.0, 1.0], [-1.0, 0.0]]),
        arr2(&[[0.2, 0.2], [0.3, 0.1]]),
    )
    .unwrap();
    let schedule = NoiseSchedule::linear(50, 1e-4, 0.02)
        .unwrap()
        .with_sigma_mode(SigmaMode::Deterministic);
    let x = PointBatch::new(arr2(&[[0.3, -0.2], [1.0, 2.0]]), 50).unwrap();
    let a = denoise(&model, &x, &schedule, &mut seeded(1)).unwrap();
    let b = denoise(&model, &x, &schedule, &mut seeded(2)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.t, 0);
}

#[test]
fn renoise_mode_contracts_standard_normal_data() {
    // Documented behaviour of the literal re-noising transition.
    let model = GmmModel::standard_normal(1).unwrap();
    let schedule = NoiseSchedule::linear(100, 1e-4, 0.02)
        .unwrap()
        .with_sigma_mode(SigmaMode::Renoise);
    let mut rng = seeded(3);
    let z = Array2::from_shape_simple_fn((20_000, 1), || StandardNormal.sample(&mut rng));
    let out = denoise(
        &model,
        &PointBatch::new(z, 100).unwrap(),
        &schedule,
        &mut rng,
    )
    .unwrap();
    let (_, s) = column_stats(&out.points, 0);
    assert!(s * s < 0.7, "variance {}", s * s);
}

#[test]
fn ancestral_chain_keeps_standard_normal_marginal() {
    // With N(0, 1) data every marginal is N(0, 1); the ancestral chain loses
    // only the posterior-variance gap, under 3% at T = 100.
    let model = GmmModel::standard_normal(1).unwrap();
    let schedule = NoiseSchedule::linear(100, 1e-4, 0.02).unwrap();
    let mut rng = split(4, 0);
    let z = Array2::from_shape_simple_fn((20_000, 1), || StandardNormal.sample(&mut rng));
    let out = denoise(
        &model,
        &PointBatch::new(z, 100).unwrap(),
        &schedule,
        &mut rng,
    )
    .unwrap();
    let (m, s) = column_stats(&out.points, 0);
    assert!(m.abs() < 0.03);
    assert!((s * s - 1.0).abs() < 0.05, "variance {}", s * s);
}

#[test]
fn reverse_step_rejects_bad_input() {
    let model = GmmModel::standard_normal(2).unwrap();
    let schedule = NoiseSchedule::linear(10, 1e-4, 0.02).unwrap();
    let clean = PointBatch::clean(arr2(&[[0.0, 0.0]])).unwrap();
    assert!(reverse_step(&model, &clean, &schedule, &mut seeded(0)).is_err());
    let wrong_dim = PointBatch::new(arr2(&[[0.0, 0.0, 0.0]]), 5).unwrap();
    assert!(reverse_step(&model, &wrong_dim, &schedule, &mut seeded(0)).is_err());
    let too_late = PointBatch::new(arr2(&[[0.0, 0.0]]), 11).unwrap();
    assert!(reverse_step(&model, &too_late, &schedule, &mut seeded(0)).is_err());
    assert!(NoiseSchedule::linear(10, 1e-4, 1.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn schedule_invariants(steps in 1usize..400, lo in 1e-5f64..1e-3, span in 0.0f64..0.05) {
        let hi = lo + span;
        for mode in [SigmaMode::Ancestral, SigmaMode::Renoise, SigmaMode::Deterministic] {
            let s = NoiseSchedule::linear(steps, lo, hi).unwrap().with_sigma_mode(mode);
            prop_assert_eq!(s.alpha_bar(0), 1.0);
            prop_assert_eq!(s.sigma(1), 0.0);
            for t in 1..=steps {
                prop_assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
                prop_assert!(s.alpha_bar(t) > 0.0);
                prop_assert!(s.sigma(t) >= 0.0);
                prop_assert!(s.sigma(t) <= (1.0 - s.alpha_bar(t - 1)).sqrt() + 1e-15);
            }
        }
    }

    #[test]
    fn responsibilities_form_a_distribution(x in prop::collection::vec(-5.0f64..5.0, 2), ab in 0.01f64..1.0) {
        let model = GmmModel::new(
            vec![0.2, 0.3, 0.5],
            arr2(&[[1.0, 0.0], [-1.0, 2.0], [0.0, -3.0]]),
            arr2(&[[0.1, 0.4], [0.5, 0.5], [1.0, 0.2]]),
        ).unwrap();
        let r = model.responsibilities(&x, ab);
        prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(r.iter().all(|v| *v >= 0.0));
        prop_assert!(model.score(&x, ab).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn chains_are_reproducible(seed in any::<u64>()) {
        let model = GmmModel::new(vec![0.5, 0.5], arr2(&[[2.0], [-2.0]]), arr2(&[[0.1], [0.1]])).unwrap();
        let schedule = NoiseSchedule::linear(20, 1e-4, 0.02).unwrap();
        let x = PointBatch::new(arr2(&[[0.1], [0.5]]), 20).unwrap();
        let a = denoise(&model, &x, &schedule, &mut seeded(seed)).unwrap();
        let b = denoise(&model, &x, &schedule, &mut seeded(seed)).unwrap();
        prop_assert_eq!(a, b);
    }
}
