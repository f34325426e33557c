//! The repulsion term moves the agent's policy away from a frozen
//! adversary.

use saac_core::diagnostics::repulsion_kl;
use saac_core::trainer::TrainConfig;

#[test]
fn repulsion_raises_divergence_from_the_adversary() {
    for seed in [0, 1, 2] {
        let c = TrainConfig {
            seed,
            batch_size: 64,
            hidden: vec![32, 32],
            ..TrainConfig::default()
        };
        let with = repulsion_kl(&c, 1.0, 500, 2000).unwrap();
        let without = repulsion_kl(&c, 0.0, 500, 2000).unwrap();
        eprintln!("seed {seed}: kl {with:.4} with repulsion, {without:.4} without");
        assert!(with > without, "seed {seed}: {with} <= {without}");
    }
}

#[test]
fn no_updates_means_equal_divergence() {
    let c = TrainConfig { hidden: vec![8], batch_size: 16, ..TrainConfig::default() };
    assert_eq!(repulsion_kl(&c, 1.0, 0, 100).unwrap(), repulsion_kl(&c, 0.0, 0, 100).unwrap());
}
