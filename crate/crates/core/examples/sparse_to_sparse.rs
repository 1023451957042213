// Start from a randomly half-pruned network instead of a dense one.

use std::error::Error;

use cgp::graph::{generate_sbm, SbmConfig};
use cgp::sparsify::RegrowthScheme;
use cgp::train::{train, TrainConfig};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let (g, splits) = generate_sbm(&SbmConfig {
        n_nodes: 160,
        n_classes: 4,
        d: 16,
        intra_p: 0.25,
        inter_p: 0.02,
        feature_noise: 0.8,
        seed: 4,
    })?;
    for density in [1.0, 0.5, 0.2] {
        let cfg = TrainConfig {
            epochs: 80,
            hidden: 64,
            dt: 5,
            n: 10,
            p_w: 0.9,
            p_a: 0.3,
            regrowth: RegrowthScheme::Momentum,
            init_weight_density: density,
            ..TrainConfig::default()
        };
        let r = train(&g, &splits, &cfg)?;
        let first = &r.records[0];
        println!(
            "init density {density}: weight sparsity {:.2} after epoch 0, {:.2} at the end, test {:.3}, {:.3e} training FLOPs",
            first.sparsity_w, r.final_sparsity_w, r.test_acc_at_best, r.training_flops
        );
        assert!(r.test_acc_at_best > 0.7);
    }
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
