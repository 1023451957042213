// Save the best-epoch checkpoint, reload it and re-evaluate.

use std::error::Error;

use cgp::graph::{generate_sbm, normalize_adjacency, SbmConfig};
use cgp::model::{accuracy, Checkpoint, Mode, PreparedGraph};
use cgp::sparsify::RegrowthScheme;
use cgp::train::{train_run, EpochSnapshot, TrainConfig};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let (g, splits) = generate_sbm(&SbmConfig {
        n_nodes: 120,
        n_classes: 3,
        d: 12,
        intra_p: 0.25,
        inter_p: 0.03,
        feature_noise: 0.8,
        seed: 6,
    })?;
    let cfg = TrainConfig {
        epochs: 50,
        hidden: 32,
        dt: 4,
        n: 8,
        p_w: 0.8,
        p_a: 0.4,
        p_x: 0.25,
        regrowth: RegrowthScheme::Gradient,
        ..TrainConfig::default()
    };
    let run = train_run(&g, &splits, &cfg, &mut |_: &EpochSnapshot<'_>| {})?;

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("checkpoint.json");
    run.best.save(&path)?;
    let loaded = Checkpoint::load(&path)?;
    assert_eq!(loaded, run.best);

    let (model, m_a, m_x, mut rng) = loaded.restore::<f64>()?;
    let norm = normalize_adjacency(&g);
    let pg = PreparedGraph::<f64>::new(&g, &norm);
    let (logits, _) = model.forward(&pg, &m_a, &m_x, Mode::Eval, &mut rng)?;
    let acc = accuracy(&logits, g.labels(), &splits.test)?;
    println!(
        "epoch {}: {} of {} weights active, test accuracy {acc:.3} (reported {:.3})",
        loaded.epoch,
        model.active_weight_count(),
        model.weight_count(),
        run.report.test_acc_at_best
    );
    assert_eq!(acc, run.report.test_acc_at_best);
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
