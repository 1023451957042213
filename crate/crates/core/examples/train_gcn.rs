// Co-sparsify a GCN's weights, edges and feature channels during training
// and compare it with the dense model.

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
        seed: 2,
    })?;
    let base = TrainConfig {
        epochs: 80,
        hidden: 64,
        dt: 5,
        n: 10,
        ..TrainConfig::default()
    };
    let sparse_cfg = TrainConfig {
        p_w: 0.9,
        p_a: 0.5,
        p_x: 0.25,
        regrowth: RegrowthScheme::Momentum,
        ..base.clone()
    };

    let dense = train(&g, &splits, &base)?;
    let sparse = train(&g, &splits, &sparse_cfg)?;
    for (name, r) in [("dense", &dense), ("cgp", &sparse)] {
        println!(
            "{name:<6} test {:.3} at epoch {:>2}  sparsity w/a/x {:.2}/{:.2}/{:.2}  {:>9.0} MACs",
            r.test_acc_at_best,
            r.best_epoch,
            r.final_sparsity_w,
            r.final_sparsity_a,
            r.final_sparsity_x,
            r.inference.total_macs
        );
    }
    assert!(sparse.inference.total_macs < 0.4 * dense.inference.total_macs);
    assert!(sparse.test_acc_at_best > 0.7);
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
