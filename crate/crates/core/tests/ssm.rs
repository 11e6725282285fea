mod common;

use common::{check_param_gradients, naive_scan, weighted_mean};
use gamba_autodiff::gradcheck::{check_gradients, GradCheckOptions};
use gamba_autodiff::{no_grad, Tensor};
use gamba_core::bench::{median_scan_time, ScanInputs};
use gamba_core::ssm::{discretize, selective_scan_kernel, MambaBlockParams, MambaConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn max_abs_diff(a: &[f64], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, &y)| (x - f64::from(y)).abs())
        .fold(0.0, f64::max)
}

#[test]
fn scan_matches_naive_recurrence() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let s = ScanInputs::<f32>::random(128, 6, 4, false, &mut rng);
    let diff = max_abs_diff(&naive_scan(&s), &s.scan().unwrap().to_vec());
    assert!(diff < 1e-5, "max abs diff {diff:e}");
    for _ in 0..20 {
        let len = rng.random_range(1..=256);
        let n = rng.random_range(1..=8);
        let di = rng.random_range(1..=8);
        let s = ScanInputs::<f32>::random(len, di, n, false, &mut rng);
        let diff = max_abs_diff(&naive_scan(&s), &s.scan().unwrap().to_vec());
        assert!(diff < 1e-5, "L {len} n {n}: max abs diff {diff:e}");
    }
}

#[test]
fn discretization_approaches_identity_as_delta_vanishes() {
    let a = [-1.0, 0.3, 0.0, -2.0];
    let b = [1.0, -0.5, 0.25, 2.0];
    let mut prev = (f64::INFINITY, f64::INFINITY);
    for delta in [1e-1, 1e-2, 1e-3] {
        let (a_bar, b_bar) = discretize(&a, &b, 2, 2, delta).unwrap();
        let eye = [1.0, 0.0, 0.0, 1.0];
        let da = a_bar.iter().zip(eye).map(|(x, e)| (x - e).powi(2)).sum::<f64>().sqrt();
        let db = b_bar.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(da < prev.0 && db < prev.1);
        prev = (da, db);
    }
    assert!(prev.0 < 3e-3 && prev.1 < 3e-3);
}

#[test]
fn scan_is_causal() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let s = ScanInputs::<f64>::random(40, 3, 4, false, &mut rng);
    let base = s.scan().unwrap().to_vec();
    for k in [0, 17, 39] {
        let mut x = s.x.to_vec();
        x[k * 3 + 1] += 0.5;
        let perturbed = ScanInputs {
            x: Tensor::new(x, &[40, 3]).unwrap(),
            ..s.clone()
        };
        let y = perturbed.scan().unwrap().to_vec();
        assert_eq!(&y[..k * 3], &base[..k * 3], "output before step {k} changed");
        assert_ne!(y[k * 3 + 1], base[k * 3 + 1]);
    }
}

#[test]
fn scan_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    for (len, di, n) in [(1, 1, 1), (7, 3, 2), (20, 4, 4)] {
        let s = ScanInputs::<f64>::random(len, di, n, true, &mut rng);
        let report = check_gradients(
            &s.as_vec(),
            |t| {
                let y = selective_scan_kernel(&t[0], &t[1], &t[2], &t[3], &t[4], &t[5])
                    .map_err(|e| gamba_autodiff::Error::Usage(e.to_string()))?;
                weighted_mean(&y, 7)
            },
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-4, "{len}x{di}x{n}: {report:?}");
    }
}

fn block(d_model: usize, seed: u64) -> MambaBlockParams<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = MambaConfig {
        d_model,
        d_state: 3,
        expand: 2,
        conv_width: 4,
    };
    MambaBlockParams::new(cfg, &mut rng).unwrap()
}

#[test]
fn block_gradients_match_finite_differences() {
    let p = block(4, 103);
    let mut named = Vec::new();
    p.collect("b", &mut named);
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let x = Tensor::param((0..6 * 4).map(|_| rng.random_range(-1.0..1.0)).collect(), &[6, 4]).unwrap();
    let mut params = vec![x.clone()];
    params.extend(named.into_iter().map(|(_, t)| t));
    let (err, at) = check_param_gradients(&params, || Ok(weighted_mean(&p.forward(&x)?, 8)?), usize::MAX);
    assert!(err < 1e-4, "rel err {err:e} at {at:?}");
}

#[test]
fn block_preserves_shape_for_any_length() {
    let p = block(8, 105);
    for len in [1, 2, 5, 33] {
        let x = Tensor::<f64>::full(&[len, 8], 0.3).unwrap();
        assert_eq!(p.forward(&x).unwrap().shape(), &[len, 8]);
    }
}

#[test]
fn scan_time_scales_linearly() {
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let t1 = median_scan_time(2048, 64, 16, 5, &mut rng).unwrap().as_secs_f64();
    let t2 = median_scan_time(4096, 64, 16, 5, &mut rng).unwrap().as_secs_f64();
    let ratio = t2 / t1;
    assert!((1.5..=2.6).contains(&ratio), "time ratio {ratio:.3}");
}

#[test]
fn block_time_scales_linearly() {
    let p = {
        let mut rng = ChaCha8Rng::seed_from_u64(107);
        let cfg = MambaConfig {
            d_model: 32,
            d_state: 16,
            expand: 2,
            conv_width: 4,
        };
        MambaBlockParams::<f32>::new(cfg, &mut rng).unwrap()
    };
    let time = |len: usize| {
        let x = Tensor::<f32>::full(&[len, 32], 0.1).unwrap();
        let mut runs: Vec<f64> = (0..5)
            .map(|_| {
                let start = std::time::Instant::now();
                no_grad(|| p.forward(&x)).unwrap();
                start.elapsed().as_secs_f64()
            })
            .collect();
        runs.sort_by(f64::total_cmp);
        runs[2]
    };
    let ratio = time(4096) / time(2048);
    assert!(ratio <= 2.6, "time ratio {ratio:.3}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stable_systems_stay_contractive(a in -50.0f64..-1e-3, delta in 1e-4f64..10.0, b in -5.0f64..5.0) {
        let (a_bar, b_bar) = discretize(&[a], &[b], 1, 1, delta).unwrap();
        prop_assert!(a_bar[0].abs() < 1.0);
        prop_assert!((b_bar[0] - delta * b / (1.0 - delta * a / 2.0)).abs() < 1e-12 * (1.0 + b.abs() * delta));
    }

    #[test]
    fn zero_input_is_a_fixed_point(len in 1usize..40, n in 1usize..6, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = ScanInputs::<f64>::random(len, 2, n, false, &mut rng);
        let zero = ScanInputs { x: Tensor::zeros(&[len, 2]), ..s };
        prop_assert!(zero.scan().unwrap().to_vec().iter().all(|&v| v == 0.0));
    }
}
