// Magnitude pruning to a target sparsity followed by regrowth, on a plain
// score vector.

use std::error::Error;

use cgp::sparsify::{magnitude_prune, regrow, PruneScope};

fn show(label: &str, mask: &[bool]) {
    let bits: String = mask.iter().map(|&a| if a { '#' } else { '.' }).collect();
    println!("{label:<8} {bits}");
}

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let weights = [0.9, -0.05, 0.4, 0.01, -0.7, 0.2, 0.0, 0.33, -0.12, 0.6];
    let magnitude: Vec<f64> = weights.iter().map(|w: &f64| w.abs()).collect();
    let all = vec![true; weights.len()];
    show("dense", &all);

    let pruned = magnitude_prune(&magnitude, &all, 0.5, PruneScope::Global, &[])?;
    show("p=0.5", &pruned);
    assert_eq!(pruned.iter().filter(|&&a| !a).count(), 5);

    // Surviving magnitudes decide what goes; a growth score (here a made-up
    // gradient magnitude) decides what comes back.
    let keep: Vec<f64> = magnitude.iter().zip(&pruned).map(|(&m, &a)| if a { m } else { 0.0 }).collect();
    let grad = [0.0, 0.8, 0.0, 0.1, 0.0, 0.0, 0.5, 0.0, 0.3, 0.0];
    let grown = regrow(&pruned, &keep, &grad, 0.4)?;
    show("regrow", &grown);
    assert_eq!(
        grown.iter().filter(|&&a| a).count(),
        pruned.iter().filter(|&&a| a).count()
    );

    let layered = magnitude_prune(&magnitude, &all, 0.5, PruneScope::Layerwise, &[4, 6])?;
    show("layers", &layered);
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
