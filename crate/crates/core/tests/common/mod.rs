#![allow(dead_code)]

use cgp::graph::{normalize_adjacency, Graph, SbmConfig, SplitSet};
use cgp::model::{Arch, Mode, Model, PreparedGraph};
use cgp::sparsify::{ceil_count, floor_count, MaskKind, MaskedTensor, SoftMask};
use cgp::tensor::{softmax_xent, DenseMatrix};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

/// Four-class SBM with edge homophily around 0.77.
pub fn homophilous_sbm(seed: u64) -> SbmConfig {
    SbmConfig {
        n_nodes: 400,
        n_classes: 4,
        d: 32,
        intra_p: 0.2,
        inter_p: 0.02,
        feature_noise: 1.0,
        seed,
    }
}

/// Four-class SBM with edge homophily around 0.25.
pub fn heterophilous_sbm(seed: u64) -> SbmConfig {
    SbmConfig {
        n_nodes: 400,
        n_classes: 4,
        d: 32,
        intra_p: 0.05,
        inter_p: 0.05,
        feature_noise: 0.3,
        seed,
    }
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Random undirected graph with Gaussian-ish features and every class and
/// split populated.
pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, d: usize, classes: usize) -> (Graph, SplitSet) {
    let p = rng.random_range(0.1..0.5);
    let mut arcs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < p {
                arcs.push((i, j));
                arcs.push((j, i));
            }
        }
    }
    let feats: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let labels: Vec<usize> = (0..n).map(|i| if i < classes { i } else { rng.random_range(0..classes) }).collect();
    let g = Graph::new(n, arcs, DenseMatrix::from_vec(n, d, feats).unwrap(), labels, classes).unwrap();
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        idx.swap(i, rng.random_range(0..=i));
    }
    let n_train = n / 2;
    let n_val = (n - n_train) / 2;
    let splits = SplitSet {
        train: idx[..n_train].to_vec(),
        val: idx[n_train..n_train + n_val].to_vec(),
        test: idx[n_train + n_val..].to_vec(),
    };
    (g, splits)
}

/// Worst relative errors of analytic against central-difference gradients,
/// measured per tensor as `‖a − f‖ / max(‖a‖, ‖f‖)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct GradErrors {
    pub w: f64,
    pub ma: f64,
    pub mx: f64,
}

impl GradErrors {
    pub fn max(&self) -> f64 {
        self.w.max(self.ma).max(self.mx)
    }
}

fn rel_err(a: &[f64], f: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(f).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nf = f.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nf);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Compares `backward` against central differences of the training loss on
/// a random graph, with random soft-mask values and a partly pruned weight
/// mask. Dropout is off.
pub fn gradient_check(rng: &mut ChaCha8Rng, sgc: bool) -> GradErrors {
    let n = rng.random_range(6..=30);
    let d = rng.random_range(2..=6);
    let classes = rng.random_range(2..=4);
    let (g, splits) = random_graph(rng, n, d, classes);
    let norm = normalize_adjacency(&g);
    let pg = PreparedGraph::<f64>::new(&g, &norm);

    let mut model = if sgc {
        Model::<f64>::sgc(d, classes, rng.random_range(1..=3), rng).unwrap()
    } else {
        Model::<f64>::gcn(d, rng.random_range(2..=6), classes, 0.0, rng).unwrap()
    };
    let arch = model.arch();
    let layers: Vec<MaskedTensor<f64>> = model
        .layers()
        .iter()
        .map(|l| {
            let (_, cols) = l.shape();
            // A hidden unit with no active inputs sits exactly on the ReLU
            // kink, where the loss has no derivative.
            let mask = loop {
                let m: Vec<bool> = (0..l.len()).map(|_| rng.random::<f64>() > 0.3).collect();
                if (0..cols).all(|c| m.iter().skip(c).step_by(cols).any(|&a| a)) {
                    break m;
                }
            };
            let mut t = MaskedTensor::from_parts(l.values().clone(), mask, vec![0.0; l.len()]).unwrap();
            t.apply_mask();
            t
        })
        .collect();
    model = Model::from_layers(arch, layers, 0.0).unwrap();

    let soft = |len: usize, kind: MaskKind, rng: &mut ChaCha8Rng| {
        let v: Vec<f64> = (0..len).map(|_| rng.random_range(0.5..1.5)).collect();
        SoftMask::from_parts(v, vec![true; len], vec![0.0; len], kind).unwrap()
    };
    let m_a = soft(g.n_arcs(), MaskKind::Edge, rng);
    let m_x = soft(d, MaskKind::Feature, rng);

    let loss = |model: &Model<f64>, m_a: &SoftMask<f64>, m_x: &SoftMask<f64>| {
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let (logits, _) = model.forward(&pg, m_a, m_x, Mode::Eval, &mut r).unwrap();
        softmax_xent(&logits, g.labels(), &splits.train).unwrap().0
    };
    let mut r = ChaCha8Rng::seed_from_u64(0);
    let (logits, cache) = model.forward(&pg, &m_a, &m_x, Mode::Train, &mut r).unwrap();
    let (_, glogits) = softmax_xent(&logits, g.labels(), &splits.train).unwrap();
    let grads = model.backward(&pg, &cache, &glogits).unwrap();

    let h = 1e-6;
    // Weight gradients are taken with respect to the effective weights, so
    // the reference perturbs a dense copy of them.
    let effective: Vec<DenseMatrix<f64>> = model.layers().iter().map(|l| l.values().clone()).collect();
    let mut fd_w = Vec::new();
    let mut an_w = Vec::new();
    for (li, w) in effective.iter().enumerate() {
        for k in 0..w.data().len() {
            let probe = |delta: f64| {
                let layers = effective
                    .iter()
                    .enumerate()
                    .map(|(lj, m)| {
                        let mut m = m.clone();
                        if lj == li {
                            m.data_mut()[k] += delta;
                        }
                        MaskedTensor::dense(m)
                    })
                    .collect();
                loss(&Model::from_layers(arch, layers, 0.0).unwrap(), &m_a, &m_x)
            };
            fd_w.push((probe(h) - probe(-h)) / (2.0 * h));
            an_w.push(grads.d_w[li].data()[k]);
        }
    }

    let fd_soft = |mask: &SoftMask<f64>, is_edge: bool| -> Vec<f64> {
        (0..mask.len())
            .map(|k| {
                let probe = |delta: f64| {
                    let mut v = mask.values().to_vec();
                    v[k] += delta;
                    let m = SoftMask::from_parts(v, mask.active().to_vec(), vec![0.0; mask.len()], mask.kind()).unwrap();
                    if is_edge {
                        loss(&model, &m, &m_x)
                    } else {
                        loss(&model, &m_a, &m)
                    }
                };
                (probe(h) - probe(-h)) / (2.0 * h)
            })
            .collect()
    };
    GradErrors {
        w: rel_err(&an_w, &fd_w),
        ma: rel_err(&grads.d_ma, &fd_soft(&m_a, true)),
        mx: rel_err(&grads.d_mx, &fd_soft(&m_x, false)),
    }
}

/// Full-sort reference for magnitude pruning.
pub fn prune_oracle(scores: &[f64], active: &[bool], target: f64, segments: &[std::ops::Range<usize>]) -> Vec<bool> {
    let mut out = vec![true; scores.len()];
    for seg in segments {
        let mut idx: Vec<usize> = seg.clone().collect();
        idx.sort_by(|&a, &b| {
            scores[a]
                .partial_cmp(&scores[b])
                .unwrap()
                .then(active[a].cmp(&active[b]))
                .then(a.cmp(&b))
        });
        for &i in idx.iter().take(ceil_count(target, seg.len())) {
            out[i] = false;
        }
    }
    out
}

/// Full-sort reference for prune-and-regrow on a single segment.
pub fn regrow_oracle(active: &[bool], keep: &[f64], add: &[f64], rate: f64) -> Vec<bool> {
    let mut on: Vec<usize> = (0..active.len()).filter(|&i| active[i]).collect();
    let mut off: Vec<usize> = (0..active.len()).filter(|&i| !active[i]).collect();
    let k = floor_count(rate, on.len()).min(off.len());
    on.sort_by(|&a, &b| keep[a].partial_cmp(&keep[b]).unwrap().then(a.cmp(&b)));
    off.sort_by(|&a, &b| add[b].partial_cmp(&add[a]).unwrap().then(a.cmp(&b)));
    let mut out = active.to_vec();
    for &i in &on[..k] {
        out[i] = false;
    }
    for &i in &off[..k] {
        out[i] = true;
    }
    out
}

/// Scores drawn from a handful of values so ties are common.
pub fn tied_scores(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let levels = rng.random_range(1..=6);
    (0..n).map(|_| rng.random_range(0..levels) as f64 * 0.25).collect()
}

pub fn arch_name(arch: Arch) -> &'static str {
    match arch {
        Arch::Gcn { .. } => "GCN",
        Arch::Sgc { .. } => "SGC",
    }
}
