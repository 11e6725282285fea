mod common;

use std::f64::consts::TAU;

use common::{brute_force_radius, disk, random_convex};
use gamba_autodiff::Tensor;
use gamba_core::constraints::{contour_lookup, dist_loss, mask_to_radial_polygon, Mask, RadialPolygon};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn assert_matches_brute_force(mask: &Mask, label: &str) {
    let poly = mask_to_radial_polygon(mask, 360).unwrap();
    for (k, theta) in poly.angles().into_iter().enumerate() {
        let truth = brute_force_radius(mask, poly.center, theta);
        let err = (poly.radii[k] - truth).abs();
        assert!(err <= 1.5, "{label} angle {k}: radius {} vs {truth}", poly.radii[k]);
    }
}

#[test]
fn polygon_tracks_disk_and_square_boundaries() {
    for size in [32, 64, 65] {
        assert_matches_brute_force(&disk(size, size as f64 * 0.3), &format!("disk {size}"));
        let lo = size / 4;
        let hi = size - size / 4;
        let square = Mask::from_fn(size, size, |y, x| (lo..hi).contains(&x) && (lo..hi).contains(&y));
        assert_matches_brute_force(&square, &format!("square {size}"));
    }
}

#[test]
fn polygon_tracks_random_convex_boundaries() {
    let mut rng = ChaCha8Rng::seed_from_u64(400);
    for i in 0..30 {
        let mask = random_convex(64, &mut rng);
        assert!(mask.area() > 0);
        assert_matches_brute_force(&mask, &format!("convex mask {i}"));
    }
}

#[test]
fn disk_radii_are_close_to_the_true_radius() {
    let poly = mask_to_radial_polygon(&disk(64, 20.0), 360).unwrap();
    assert!(poly.radii.iter().all(|r| (r - 20.0).abs() <= 1.5));
    for theta in [0.0, 1.0, 2.5, 4.0, 6.2] {
        let p = contour_lookup(&poly, theta);
        let r = ((p[0] - 32.0).powi(2) + (p[1] - 32.0).powi(2)).sqrt();
        assert!((r - 20.0).abs() <= 1.5);
    }
}

fn distance_outside(mask: &Mask, poly: &RadialPolygon, p: [f64; 2]) -> f64 {
    if mask.contains_point(p[0], p[1]) {
        return 0.0;
    }
    let angle = (p[1] - poly.center[1]).atan2(p[0] - poly.center[0]);
    let t = contour_lookup(poly, angle);
    ((p[0] - t[0]).powi(2) + (p[1] - t[1]).powi(2)).sqrt()
}

#[test]
fn gradient_step_pulls_centres_inward() {
    let mask = disk(64, 14.0);
    let poly = mask_to_radial_polygon(&mask, 360).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(401);
    let n = 40;
    let start: Vec<f64> = (0..n)
        .flat_map(|_| {
            let theta: f64 = rng.random_range(0.0..TAU);
            let r = rng.random_range(18.0..40.0);
            [32.0 + r * theta.cos(), 32.0 + r * theta.sin()]
        })
        .collect();
    let centers = Tensor::param(start.clone(), &[n, 2]).unwrap();
    let loss = dist_loss(&centers, &vec![true; n], &mask, &poly).unwrap();
    loss.backward().unwrap();
    let g = centers.grad().unwrap();
    let lr = 0.2 * n as f64;
    let moved: Vec<f64> = start.iter().zip(&g).map(|(c, g)| c - lr * g).collect();
    for i in 0..n {
        let before = distance_outside(&mask, &poly, [start[2 * i], start[2 * i + 1]]);
        let after = distance_outside(&mask, &poly, [moved[2 * i], moved[2 * i + 1]]);
        assert!(before > 0.0 && after < before, "centre {i}: {before} -> {after}");
    }
    let after = dist_loss(&Tensor::new(moved, &[n, 2]).unwrap(), &vec![true; n], &mask, &poly).unwrap();
    assert!(after.item().unwrap() < loss.item().unwrap());
}

#[test]
fn gradient_is_twice_the_offset_over_n() {
    let mask = disk(32, 8.0);
    let poly = mask_to_radial_polygon(&mask, 360).unwrap();
    let centers = Tensor::param(vec![30.0, 16.0, 16.0, 16.0, 16.0, 2.0], &[3, 2]).unwrap();
    let loss = dist_loss(&centers, &[true, true, false], &mask, &poly).unwrap();
    loss.backward().unwrap();
    let g = centers.grad().unwrap();
    let target = contour_lookup(&poly, 0.0);
    assert!((g[0] - 2.0 * (30.0 - target[0]) / 3.0).abs() < 1e-12);
    assert!((g[1] - 2.0 * (16.0 - target[1]) / 3.0).abs() < 1e-12);
    // Inside, and outside but not visible: no pull.
    assert!(g[2..].iter().all(|&v| v == 0.0));
    let expected = ((30.0 - target[0]).powi(2) + (16.0 - target[1]).powi(2)) / 3.0;
    assert!((loss.item().unwrap() - expected).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn loss_vanishes_exactly_when_all_centres_are_inside(
        pts in prop::collection::vec((0.0f64..48.0, 0.0f64..48.0), 1..30),
        radius in 5.0f64..20.0,
    ) {
        let mask = disk(48, radius);
        let poly = mask_to_radial_polygon(&mask, 360).unwrap();
        let flat: Vec<f64> = pts.iter().flat_map(|&(u, v)| [u, v]).collect();
        let centers = Tensor::new(flat, &[pts.len(), 2]).unwrap();
        let loss = dist_loss(&centers, &vec![true; pts.len()], &mask, &poly).unwrap().item().unwrap();
        let all_inside = pts.iter().all(|&(u, v)| mask.contains_point(u, v));
        prop_assert!(loss >= 0.0);
        prop_assert_eq!(loss == 0.0, all_inside);
    }
}
