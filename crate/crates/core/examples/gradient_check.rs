// Central finite differences against the analytic edge-mask gradient of a
// small GCN.

use std::error::Error;

use cgp::graph::{generate_sbm, normalize_adjacency, SbmConfig};
use cgp::model::{full_masks, Mode, Model, PreparedGraph};
use cgp::sparsify::SoftMask;
use cgp::tensor::softmax_xent;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let (g, splits) = generate_sbm(&SbmConfig {
        n_nodes: 24,
        n_classes: 3,
        d: 5,
        intra_p: 0.4,
        inter_p: 0.1,
        feature_noise: 0.5,
        seed: 1,
    })?;
    let norm = normalize_adjacency(&g);
    let pg = PreparedGraph::<f64>::new(&g, &norm);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let model = Model::<f64>::gcn(5, 4, 3, 0.0, &mut rng)?;
    let (m_a, m_x) = full_masks(&pg);

    let loss = |m_a: &SoftMask<f64>| -> f64 {
        let (logits, _) = model.forward(&pg, m_a, &m_x, Mode::Eval, &mut rng.clone()).unwrap();
        softmax_xent(&logits, g.labels(), &splits.train).unwrap().0
    };
    let (logits, cache) = model.forward(&pg, &m_a, &m_x, Mode::Eval, &mut rng.clone())?;
    let (_, glogits) = softmax_xent(&logits, g.labels(), &splits.train)?;
    let grads = model.backward(&pg, &cache, &glogits)?;

    let h = 1e-6;
    let mut worst = 0.0f64;
    for arc in 0..g.n_arcs().min(12) {
        let perturbed = |delta: f64| {
            let mut v = m_a.values().to_vec();
            v[arc] += delta;
            SoftMask::from_parts(v, m_a.active().to_vec(), m_a.momentum().to_vec(), m_a.kind()).unwrap()
        };
        let fd = (loss(&perturbed(h)) - loss(&perturbed(-h))) / (2.0 * h);
        let an = grads.d_ma[arc];
        let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-12);
        worst = worst.max(err);
        println!("arc {arc:>2} {:?}: analytic {an:+.6e} numeric {fd:+.6e}", g.arcs()[arc]);
    }
    println!("worst relative error {worst:.2e}");
    assert!(worst < 1e-4);
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
