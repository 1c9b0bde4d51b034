mod common;

use common::oracles::*;

#[test]
fn backprop_matches_central_differences() {
    let mut rng = common::rng(11);
    for dims in [[4usize, 5, 3].as_slice(), &[6, 4, 4, 3], &[3, 2]] {
        let problem = toy_problem(&mut rng, dims, 5, 0.05);
        let err = backprop_gradient_error(&problem);
        println!("{dims:?}: worst relative error {err:.2e}");
        assert!(err <= FD_TOLERANCE, "{dims:?}: {err:.3e}");
    }
}

#[test]
fn centroid_gradients_match_central_differences() {
    let mut rng = common::rng(12);
    for k in [2usize, 4, 8] {
        let problem = toy_problem(&mut rng, &[5, 6, 3], 6, 0.05);
        let err = centroid_gradient_error(&mut rng, &problem, k);
        println!("k = {k}: worst relative error {err:.2e}");
        assert!(err <= FD_TOLERANCE, "k = {k}: {err:.3e}");
    }
}

#[test]
fn kmeans_reaches_brute_force_optimum() {
    assert_eq!(kmeans_brute_force_suite().unwrap(), 495);
}

#[test]
fn brute_force_oracle_sanity() {
    assert!((brute_force_two_means(&[0.0, 4.0, 5.0, 9.0]) - 14.0).abs() < 1e-12);
    assert_eq!(brute_force_two_means(&[1.0, 1.0, 3.0, 3.0]), 0.0);
    assert!(!is_local_optimum(&[0.0, 1.0, 10.0, 11.0], &[0, 1, 1, 1]));
}

#[test]
fn lloyd_monotone_on_random_instances() {
    lloyd_monotone_suite(&mut common::rng(13), 300).unwrap();
}
