mod common;

use common::*;

#[test]
fn loss_gradients_match_finite_differences() {
    let worst = gradient_suite(20);
    for (name, err) in LOSS_NAMES.iter().zip(worst) {
        assert!(err < 1e-4, "{name}: max relative error {err:e}");
    }
}

#[test]
fn linear_head_gradient_matches_finite_differences() {
    for seed in 0..3 {
        let err = classifier_fd_error(seed, 0, 40);
        assert!(err < 1e-4, "seed {seed}: {err:e}");
    }
}

#[test]
fn hidden_layer_gradient_matches_finite_differences() {
    for seed in 0..3 {
        let err = classifier_fd_error(100 + seed, 6, 40);
        assert!(err < 1e-4, "seed {seed}: {err:e}");
    }
}
