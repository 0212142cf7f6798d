mod common;

use common::{
    negation_symmetry, permutation_invariance, scale_equivariance, sign_symmetric,
    sub_window_invisibility,
};
use tcemu::formats::Format;
use tcemu::{lookup, presets::supported, COrder, Rounding, TcConfig};

const CASES: u64 = 1000;

fn for_each_preset(check: impl Fn(&TcConfig) -> common::Outcome, min_cases: usize) {
    for key in supported() {
        let cfg = lookup(&key).unwrap();
        match check(&cfg) {
            Ok(n) => assert!(n >= min_cases, "{key}: only {n} usable cases"),
            Err(e) => panic!("{key}: {e}"),
        }
    }
}

#[test]
fn permutations_within_a_block() {
    for_each_preset(|cfg| permutation_invariance(cfg, CASES, 21), CASES as usize);
}

#[test]
fn sub_window_terms_vanish() {
    for_each_preset(|cfg| sub_window_invisibility(cfg, CASES, 22), 900);
}

#[test]
fn power_of_two_scaling() {
    for_each_preset(|cfg| scale_equivariance(cfg, CASES, 23), 100);
}

#[test]
fn negation_symmetry_for_symmetric_modes() {
    for_each_preset(
        |cfg| {
            assert!(sign_symmetric(cfg));
            negation_symmetry(cfg, CASES, 24)
        },
        CASES as usize,
    );
}

#[test]
fn invariants_hold_on_custom_configs() {
    for neab in [-3, 0, 2] {
        for mode in Rounding::ALL {
            for order in [COrder::Early, COrder::Late] {
                let cfg = TcConfig::new(Format::Binary16, Format::Binary32, neab, 8)
                    .with_rounding(mode)
                    .with_c_order(order);
                permutation_invariance(&cfg, 200, 31).unwrap();
                sub_window_invisibility(&cfg, 200, 32).unwrap();
                scale_equivariance(&cfg, 200, 33).unwrap();
                if sign_symmetric(&cfg) {
                    negation_symmetry(&cfg, 200, 34).unwrap();
                }
            }
        }
    }
}
