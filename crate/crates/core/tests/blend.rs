use empowerkit::intrinsic::{blend_weights, blend_weights_with, combined_reward, BlendConfig};
use proptest::prelude::*;

#[test]
fn threshold_gives_even_split() {
    let (w_icm, w_emp) = blend_weights(0.12);
    assert!((w_icm - 0.5).abs() < 1e-12);
    assert!((w_emp - 0.5).abs() < 1e-12);
}

#[test]
fn weights_are_non_increasing_in_icm_error() {
    let grid: Vec<f64> = (0..=4000).map(|i| -1.0 + i as f64 * 5e-4).collect();
    let w: Vec<f64> = grid.iter().map(|&r| blend_weights(r).0).collect();
    assert!(w.windows(2).all(|p| p[1] <= p[0]));
    assert!(w[0] > 1.0 - 1e-12 && *w.last().unwrap() < 1e-12);
}

#[test]
fn default_config_matches_shorthand() {
    let d = BlendConfig::default();
    for r in [-0.3, 0.0, 0.11, 0.12, 0.125, 0.4] {
        assert_eq!(blend_weights(r), blend_weights_with(r, d.threshold, d.slope));
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 10_000, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn weights_sum_to_one(r in -1e3f64..1e3) {
        let (a, b) = blend_weights(r);
        prop_assert!((a + b - 1.0).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn combined_reward_is_affine_in_extrinsic(w in 0.0f64..1.0, i in -5.0f64..5.0, e in -5.0f64..5.0, x in -50.0f64..50.0) {
        let base = combined_reward(w, 1.0 - w, i, e, 0.0);
        prop_assert!((combined_reward(w, 1.0 - w, i, e, x) - base - x).abs() < 1e-9);
    }
}
