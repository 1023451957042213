// A small weight-by-graph sparsity grid, run the same way `cgp sweep`
// runs it, then flattened for plotting.

use std::error::Error;

use cgp::cli::{sweep, to_long, RunSpec};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let out = tempfile::tempdir()?;
    let spec = RunSpec::from_json(
        r#"{
            "sbm": {"n_nodes": 120, "n_classes": 3, "d": 12, "intra_p": 0.25,
                    "inter_p": 0.03, "feature_noise": 0.8, "seed": 5},
            "epochs": 40, "hidden": 32, "dt": 3, "n": 8, "regrowth": "momentum",
            "grid_p_w": [0.5, 0.9], "grid_p_a": [0.0, 0.3], "repeats": 2
        }"#,
        out.path(),
    )?;
    let rows = sweep(&spec, out.path(), 2)?;
    println!(" p_w  p_a seed test_acc inference_MACs");
    for r in &rows {
        println!(
            "{:>4} {:>4} {:>4} {:>8.3} {:>14.0}",
            r.p_w,
            r.p_a,
            r.seed,
            r.test_acc.unwrap_or(f64::NAN),
            r.inference_macs.unwrap_or(f64::NAN)
        );
    }
    assert_eq!(rows.len(), 8);
    assert!(rows.iter().all(|r| r.status == "ok"));
    assert_eq!(to_long(&rows).len(), 24);
    assert!(out.path().join("summary.csv").exists());
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
