// Inference and training cost of a GCN as each kind of sparsity grows.

use std::error::Error;

use cgp::cost::{inference_cost, training_cost};
use cgp::model::Arch;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    // Roughly Cora-sized.
    let (n, arcs, d, classes) = (2708, 10556, 1433, 7);
    let arch = Arch::Gcn { hidden: 512 };
    let dense = inference_cost(arch, n, arcs, d, classes, &[1.0, 1.0]);
    println!("dense: {:.3e} MACs, {:.3e} training FLOPs over 200 epochs", dense.total_macs, training_cost(&dense, 200));

    println!("  p_w   p_a   p_x   MACs      saving");
    for (pw, pa, px) in [(0.5, 0.0, 0.0), (0.9, 0.0, 0.0), (0.9, 0.5, 0.0), (0.9, 0.5, 0.5), (0.99, 0.8, 0.5)] {
        let c = inference_cost(
            arch,
            n,
            (arcs as f64 * (1.0 - pa)) as usize,
            (d as f64 * (1.0 - px)) as usize,
            classes,
            &[1.0 - pw, 1.0 - pw],
        );
        println!(
            "{pw:>5} {pa:>5} {px:>5}  {:.3e} {:>6.1}%",
            c.total_macs,
            100.0 * (1.0 - c.total_macs / dense.total_macs)
        );
        assert!(c.total_macs < dense.total_macs);
    }

    let toy = inference_cost(Arch::Gcn { hidden: 2 }, 4, 4, 3, 2, &[1.0, 1.0]);
    assert_eq!(toy.total_macs, 72.0);
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
