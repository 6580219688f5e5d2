mod common;

use std::time::Instant;

#[test]
fn all_kinds_match_nested_loops() {
    let start = Instant::now();
    let checked = common::oracle_sweep(120, 0xA11CE).unwrap();
    assert_eq!(checked, 3 * 6 * 120);
    assert!(start.elapsed().as_secs() < 60);
}

#[test]
fn other_seeds_match_too() {
    for seed in 1..4 {
        common::oracle_sweep(20, seed).unwrap();
    }
}
