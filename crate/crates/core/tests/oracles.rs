//! The multi-dilated layer and the network against independent oracles: naive
//! convolution, central finite differences, straight-line expectation and
//! impulse propagation.

mod support;

use g2l_core::build_local_window;
use g2l_core::tcn::conv::FeatureMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::{random_layer, random_map};

#[test]
fn pmf_is_a_scale_free_distribution() {
    support::check_pmf(10_000).unwrap();
}

#[test]
fn multi_dilated_gradients_match_finite_differences() {
    support::check_layer_gradients(30).unwrap();
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let layer = random_layer(&mut rng, 2, 2, build_local_window(5, 0.3, 3).unwrap());
    let x = random_map(&mut rng, 2, 16);
    let g = layer.backward(&FeatureMap::zeros(2, 16), &x).unwrap();
    assert!(g.input.data().iter().chain(&g.kernel).chain(&g.bias).chain(&g.weights).all(|&v| v == 0.0));
}

#[test]
fn layer_is_linear_in_input_and_kernel() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let layer = random_layer(&mut rng, 2, 3, build_local_window(4, 0.5, 3).unwrap());
    let (a, b) = (random_map(&mut rng, 2, 12), random_map(&mut rng, 2, 12));
    let mut no_bias = layer.clone();
    no_bias.bias = vec![0.0; 3];
    let mut sum = a.clone();
    sum.add_assign(&b);
    let mut expect = no_bias.forward(&a).unwrap();
    expect.add_assign(&no_bias.forward(&b).unwrap());
    let got = no_bias.forward(&sum).unwrap();
    for (g, e) in got.data().iter().zip(expect.data()) {
        assert!((g - e).abs() < 1e-12);
    }

    let mut doubled = no_bias.clone();
    doubled.kernel.iter_mut().for_each(|k| *k *= 2.0);
    let y1 = no_bias.forward(&a).unwrap();
    let y2 = doubled.forward(&a).unwrap();
    for (p, q) in y1.data().iter().zip(y2.data()) {
        assert!((2.0 * p - q).abs() < 1e-12);
    }
}

#[test]
fn one_hot_weights_collapse_to_plain_convolution() {
    support::check_one_hot_collapse(100).unwrap();
}

#[test]
fn expectation_matches_hand_arithmetic_and_recomputation() {
    support::check_expectation(1000).unwrap();
}

#[test]
fn network_gradients_match_finite_differences() {
    support::check_network_gradients(24).unwrap();
}

#[test]
fn influence_stays_inside_the_receptive_field() {
    support::check_receptive_field(20).unwrap();
}
