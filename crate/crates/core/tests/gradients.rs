mod common;

use cgp::graph::normalize_adjacency;
use cgp::model::{full_masks, Mode, Model, PreparedGraph};
use cgp::tensor::softmax_xent;
use common::{gradient_check, random_graph};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn gcn_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for _ in 0..5 {
        let e = gradient_check(&mut rng, false);
        assert!(e.max() <= 1e-5, "{e:?}");
    }
}

#[test]
fn sgc_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    for _ in 0..5 {
        let e = gradient_check(&mut rng, true);
        assert!(e.max() <= 1e-5, "{e:?}");
    }
}

#[test]
fn stale_cache_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (g, s) = random_graph(&mut rng, 10, 3, 2);
    let norm = normalize_adjacency(&g);
    let pg = PreparedGraph::<f64>::new(&g, &norm);
    let mut model = Model::<f64>::gcn(3, 4, 2, 0.0, &mut rng).unwrap();
    let (m_a, m_x) = full_masks(&pg);
    let (logits, cache) = model.forward(&pg, &m_a, &m_x, Mode::Train, &mut rng).unwrap();
    let (_, gl) = softmax_xent(&logits, g.labels(), &s.train).unwrap();
    model.layers_mut();
    let err = model.backward(&pg, &cache, &gl).unwrap_err();
    assert!(matches!(err, cgp::error::CgpError::StaleCache), "{err}");
}

#[test]
fn single_precision_forward_tracks_double() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (g, _) = random_graph(&mut rng, 25, 4, 3);
    let norm = normalize_adjacency(&g);
    let pg64 = PreparedGraph::<f64>::new(&g, &norm);
    let pg32 = PreparedGraph::<f32>::new(&g, &norm);
    let m64 = Model::<f64>::gcn(4, 8, 3, 0.0, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let m32 = Model::<f32>::gcn(4, 8, 3, 0.0, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let (a64, x64) = full_masks(&pg64);
    let (a32, x32) = full_masks(&pg32);
    let (l64, _) = m64.forward(&pg64, &a64, &x64, Mode::Eval, &mut rng).unwrap();
    let (l32, _) = m32.forward(&pg32, &a32, &x32, Mode::Eval, &mut rng).unwrap();
    let diff = l64
        .data()
        .iter()
        .zip(l32.data())
        .map(|(a, b)| (a - *b as f64).abs())
        .fold(0.0, f64::max);
    assert!(diff < 1e-5, "{diff}");
}
