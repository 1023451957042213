// Sample block-model graphs across the homophily range.

use std::error::Error;

use cgp::graph::{edge_homophily, generate_sbm, SbmConfig};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    println!("intra_p inter_p  arcs homophily");
    let mut last = f64::INFINITY;
    for (intra, inter) in [(0.3, 0.01), (0.2, 0.02), (0.1, 0.05), (0.05, 0.05), (0.02, 0.08)] {
        let (g, _) = generate_sbm(&SbmConfig {
            n_nodes: 200,
            n_classes: 4,
            d: 8,
            intra_p: intra,
            inter_p: inter,
            feature_noise: 0.5,
            seed: 0,
        })?;
        let h = edge_homophily(&g)?;
        println!("{intra:>7} {inter:>7} {:>5} {h:>9.3}", g.n_arcs());
        assert!(h < last);
        last = h;
    }
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
