// Write a tiny dataset in the on-disk format, load it back and inspect the
// normalized adjacency. Line i of features.tsv and labels.tsv is node i;
// edges are listed once and symmetrized on load.

use std::error::Error;

use cgp::graph::{load_dataset, normalize_adjacency};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let dir = tempfile::tempdir()?;
    std::fs::write(dir.path().join("edges.tsv"), "0\t1\n1\t2\n2\t3\n")?;
    std::fs::write(
        dir.path().join("features.tsv"),
        "1.0\t0.0\n0.8\t0.2\n0.1\t0.9\n0.0\t1.0\n",
    )?;
    std::fs::write(dir.path().join("labels.tsv"), "0\n0\n1\n1\n")?;
    std::fs::write(
        dir.path().join("splits.json"),
        r#"{"train": [0, 3], "val": [1], "test": [2]}"#,
    )?;

    let (graph, splits) = load_dataset(dir.path())?;
    println!(
        "{} nodes, {} arcs, {} features, {} classes, train {:?}",
        graph.n_nodes(),
        graph.n_arcs(),
        graph.feature_dim(),
        graph.n_classes(),
        splits.train
    );

    let norm = normalize_adjacency(&graph);
    let a = norm.csr().to_dense();
    for r in 0..a.rows() {
        let row: Vec<String> = a.row(r).iter().map(|v| format!("{v:.3}")).collect();
        println!("  {}", row.join(" "));
    }
    assert_eq!(graph.n_arcs(), 6);
    assert_eq!(norm.csr().nnz(), 6 + 4);
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
