//! Two-layer GCN and K-hop SGC with weight, arc and feature masks applied,
//! plus the gradients needed to train weights and soft masks.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CgpError, Result};
use crate::graph::{Graph, NormAdj};
use crate::sparsify::{MaskKind, MaskedTensor, SoftMask};
use crate::tensor::{
    dropout_bwd, dropout_fwd, matmul_nt, matmul_tn, matmul_with, relu_bwd, relu_fwd,
    spmm_backward, spmm_with, DenseMatrix, Exec, Scalar, SparseMatrix,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Arch {
    /// `Â′ ReLU(Â′ X′ W0′) W1′`
    Gcn { hidden: usize },
    /// `Â′^K X′ W′`
    Sgc { hops: usize },
}

/// Graph tensors in the model's precision, built once per dataset.
#[derive(Debug, Clone)]
pub struct PreparedGraph<T = f64> {
    x: DenseMatrix<T>,
    adj: SparseMatrix<T>,
    entry_arc: Vec<Option<usize>>,
    n_arcs: usize,
    labels: Vec<usize>,
    n_classes: usize,
}

impl<T: Scalar> PreparedGraph<T> {
    pub fn new(graph: &Graph, norm: &NormAdj) -> Self {
        Self {
            x: graph.features().cast(),
            adj: norm.csr().cast(),
            entry_arc: norm.entry_arc().to_vec(),
            n_arcs: norm.n_arcs(),
            labels: graph.labels().to_vec(),
            n_classes: graph.n_classes(),
        }
    }

    #[inline]
    pub fn features(&self) -> &DenseMatrix<T> {
        &self.x
    }

    #[inline]
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    #[inline]
    pub fn n_arcs(&self) -> usize {
        self.n_arcs
    }

    #[inline]
    pub fn n_nodes(&self) -> usize {
        self.x.rows()
    }

    #[inline]
    pub fn feature_dim(&self) -> usize {
        self.x.cols()
    }

    #[inline]
    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    /// Normalized adjacency with arc entries scaled by the edge mask.
    pub fn masked_adjacency(&self, m_a: &SoftMask<T>) -> Result<SparseMatrix<T>> {
        if m_a.len() != self.n_arcs {
            return Err(CgpError::Shape(format!(
                "edge mask has {} entries for {} arcs",
                m_a.len(),
                self.n_arcs
            )));
        }
        let vals = m_a.values();
        let values = self
            .adj
            .values()
            .iter()
            .zip(&self.entry_arc)
            .map(|(&v, arc)| match arc {
                Some(a) => v * vals[*a],
                None => v,
            })
            .collect();
        self.adj.with_values(values)
    }

    fn masked_features(&self, m_x: &SoftMask<T>) -> Result<DenseMatrix<T>> {
        if m_x.len() != self.x.cols() {
            return Err(CgpError::Shape(format!(
                "feature mask has {} entries for {} channels",
                m_x.len(),
                self.x.cols()
            )));
        }
        let mut out = self.x.clone();
        let cols = out.cols();
        if cols > 0 {
            for row in out.data_mut().chunks_mut(cols) {
                for (v, &m) in row.iter_mut().zip(m_x.values()) {
                    *v = *v * m;
                }
            }
        }
        Ok(out)
    }

    /// Folds per-entry adjacency gradients into per-arc mask gradients.
    fn accumulate_arc_grads(&self, gvalues: &[T], d_ma: &mut [T]) {
        for ((g, base), arc) in gvalues.iter().zip(self.adj.values()).zip(&self.entry_arc) {
            if let Some(a) = arc {
                d_ma[*a] = d_ma[*a] + *g * *base;
            }
        }
    }

    fn feature_mask_grads(&self, g_masked: &DenseMatrix<T>) -> Vec<T> {
        let d = self.x.cols();
        let mut out = vec![T::zero(); d];
        for i in 0..self.x.rows() {
            for (j, o) in out.iter_mut().enumerate() {
                *o = *o + self.x.get(i, j) * g_masked.get(i, j);
            }
        }
        out
    }
}

/// `Â′` for an `f64` normalized adjacency and edge mask.
pub fn masked_adjacency(na: &NormAdj, m_a: &SoftMask<f64>) -> Result<SparseMatrix<f64>> {
    if m_a.len() != na.n_arcs() {
        return Err(CgpError::Shape(format!(
            "edge mask has {} entries for {} arcs",
            m_a.len(),
            na.n_arcs()
        )));
    }
    let values = na
        .csr()
        .values()
        .iter()
        .zip(na.entry_arc())
        .map(|(&v, arc)| arc.map_or(v, |a| v * m_a.values()[a]))
        .collect();
    na.csr().with_values(values)
}

/// Glorot/Xavier uniform initialization.
pub fn glorot_uniform<T: Scalar, R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DenseMatrix<T> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| T::from_f64(rng.random_range(-limit..=limit)))
        .collect();
    DenseMatrix::from_vec(rows, cols, data).expect("sized")
}

/// Masked GNN weights. Layer 0 maps features; the last layer emits class
/// logits. Biases are not used.
#[derive(Debug, Clone)]
pub struct Model<T = f64> {
    arch: Arch,
    layers: Vec<MaskedTensor<T>>,
    dropout: f64,
    exec: Exec,
    version: u64,
}

impl<T: Scalar> Model<T> {
    pub fn gcn<R: Rng + ?Sized>(
        d: usize,
        hidden: usize,
        classes: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&dropout) {
            return Err(CgpError::Config(format!("dropout {dropout} outside [0, 1)")));
        }
        let w0 = glorot_uniform(d, hidden, rng);
        let w1 = glorot_uniform(hidden, classes, rng);
        Self::from_layers(
            Arch::Gcn { hidden },
            vec![MaskedTensor::dense(w0), MaskedTensor::dense(w1)],
            dropout,
        )
    }

    pub fn sgc<R: Rng + ?Sized>(d: usize, classes: usize, hops: usize, rng: &mut R) -> Result<Self> {
        let w = glorot_uniform(d, classes, rng);
        Self::from_layers(Arch::Sgc { hops }, vec![MaskedTensor::dense(w)], 0.0)
    }

    pub fn from_layers(arch: Arch, layers: Vec<MaskedTensor<T>>, dropout: f64) -> Result<Self> {
        match arch {
            Arch::Gcn { hidden } => {
                if layers.len() != 2
                    || layers[0].shape().1 != hidden
                    || layers[1].shape().0 != hidden
                {
                    return Err(CgpError::Shape(format!(
                        "GCN needs d×{hidden} and {hidden}×C weight layers"
                    )));
                }
            }
            Arch::Sgc { hops } => {
                if hops == 0 {
                    return Err(CgpError::Config("SGC needs at least one hop".into()));
                }
                if layers.len() != 1 {
                    return Err(CgpError::Shape("SGC has exactly one weight layer".into()));
                }
                if dropout != 0.0 {
                    return Err(CgpError::Config("SGC does not use dropout".into()));
                }
            }
        }
        Ok(Self {
            arch,
            layers,
            dropout,
            exec: Exec::Sequential,
            version: 0,
        })
    }

    #[inline]
    pub fn arch(&self) -> Arch {
        self.arch
    }

    #[inline]
    pub fn dropout(&self) -> f64 {
        self.dropout
    }

    #[inline]
    pub fn layers(&self) -> &[MaskedTensor<T>] {
        &self.layers
    }

    /// Mutable weights. Invalidates outstanding forward caches.
    pub fn layers_mut(&mut self) -> &mut [MaskedTensor<T>] {
        self.version += 1;
        &mut self.layers
    }

    pub fn set_exec(&mut self, exec: Exec) {
        self.exec = exec;
    }

    #[inline]
    pub fn exec(&self) -> Exec {
        self.exec
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].shape().0
    }

    pub fn n_classes(&self) -> usize {
        self.layers.last().unwrap().shape().1
    }

    pub fn weight_count(&self) -> usize {
        self.layers.iter().map(|l| l.len()).sum()
    }

    pub fn active_weight_count(&self) -> usize {
        self.layers.iter().map(|l| l.active_count()).sum()
    }

    pub fn weight_sparsity(&self) -> f64 {
        1.0 - self.active_weight_count() as f64 / self.weight_count() as f64
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        g: &PreparedGraph<T>,
        m_a: &SoftMask<T>,
        m_x: &SoftMask<T>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(DenseMatrix<T>, ForwardCache<T>)> {
        match self.arch {
            Arch::Gcn { .. } => gcn_forward(g, self, m_a, m_x, mode, rng),
            Arch::Sgc { .. } => sgc_forward(g, self, m_a, m_x),
        }
    }

    pub fn backward(
        &self,
        g: &PreparedGraph<T>,
        cache: &ForwardCache<T>,
        glogits: &DenseMatrix<T>,
    ) -> Result<GradBundle<T>> {
        match self.arch {
            Arch::Gcn { .. } => gcn_backward(g, self, cache, glogits),
            Arch::Sgc { .. } => sgc_backward(g, self, cache, glogits),
        }
    }

    fn check_input(&self, g: &PreparedGraph<T>) -> Result<()> {
        if self.input_dim() != g.feature_dim() || self.n_classes() != g.n_classes() {
            return Err(CgpError::Shape(format!(
                "model expects {} features / {} classes, graph has {} / {}",
                self.input_dim(),
                self.n_classes(),
                g.feature_dim(),
                g.n_classes()
            )));
        }
        Ok(())
    }
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T = f64> {
    version: u64,
    adj: SparseMatrix<T>,
    x_masked: DenseMatrix<T>,
    inner: CacheInner<T>,
}

#[derive(Debug, Clone)]
enum CacheInner<T> {
    Gcn {
        x_drop: DenseMatrix<T>,
        keep_in: Vec<bool>,
        xw: DenseMatrix<T>,
        h_pre: DenseMatrix<T>,
        h_drop: DenseMatrix<T>,
        keep_hidden: Vec<bool>,
        hw: DenseMatrix<T>,
        dropout: f64,
    },
    Sgc {
        /// `X′W`, `Â′X′W`, …, `Â′^{K-1}X′W`.
        props: Vec<DenseMatrix<T>>,
    },
}

/// Gradients with respect to the effective weights `m_w ⊙ W` (so pruned
/// positions carry a score), the arc mask and the feature mask.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBundle<T = f64> {
    pub d_w: Vec<DenseMatrix<T>>,
    pub d_ma: Vec<T>,
    pub d_mx: Vec<T>,
}

impl<T: Scalar> GradBundle<T> {
    pub fn zeros_like(model: &Model<T>, n_arcs: usize) -> Self {
        Self {
            d_w: model
                .layers()
                .iter()
                .map(|l| DenseMatrix::zeros(l.shape().0, l.shape().1))
                .collect(),
            d_ma: vec![T::zero(); n_arcs],
            d_mx: vec![T::zero(); model.input_dim()],
        }
    }
}

pub fn gcn_forward<T: Scalar, R: Rng + ?Sized>(
    g: &PreparedGraph<T>,
    model: &Model<T>,
    m_a: &SoftMask<T>,
    m_x: &SoftMask<T>,
    mode: Mode,
    rng: &mut R,
) -> Result<(DenseMatrix<T>, ForwardCache<T>)> {
    if !matches!(model.arch, Arch::Gcn { .. }) {
        return Err(CgpError::InvalidArgument("gcn_forward on a non-GCN model".into()));
    }
    model.check_input(g)?;
    let exec = model.exec;
    let rate = if mode == Mode::Train { model.dropout } else { 0.0 };
    let adj = g.masked_adjacency(m_a)?;
    let x_masked = g.masked_features(m_x)?;
    let (x_drop, keep_in) = dropout_fwd(&x_masked, rate, rng)?;
    let xw = matmul_with(&x_drop, model.layers[0].values(), exec)?;
    let h_pre = spmm_with(&adj, &xw, exec)?;
    let h = relu_fwd(&h_pre);
    let (h_drop, keep_hidden) = dropout_fwd(&h, rate, rng)?;
    let hw = matmul_with(&h_drop, model.layers[1].values(), exec)?;
    let logits = spmm_with(&adj, &hw, exec)?;
    Ok((
        logits,
        ForwardCache {
            version: model.version,
            adj,
            x_masked,
            inner: CacheInner::Gcn {
                x_drop,
                keep_in,
                xw,
                h_pre,
                h_drop,
                keep_hidden,
                hw,
                dropout: rate,
            },
        },
    ))
}

pub fn gcn_backward<T: Scalar>(
    g: &PreparedGraph<T>,
    model: &Model<T>,
    cache: &ForwardCache<T>,
    glogits: &DenseMatrix<T>,
) -> Result<GradBundle<T>> {
    if cache.version != model.version {
        return Err(CgpError::StaleCache);
    }
    let CacheInner::Gcn {
        x_drop,
        keep_in,
        xw,
        h_pre,
        h_drop,
        keep_hidden,
        hw,
        dropout,
    } = &cache.inner
    else {
        return Err(CgpError::InvalidArgument("cache is not from a GCN forward".into()));
    };
    let exec = model.exec;
    let mut d_ma = vec![T::zero(); g.n_arcs()];

    let (gv2, g_hw) = spmm_backward(&cache.adj, hw, glogits)?;
    g.accumulate_arc_grads(&gv2, &mut d_ma);
    let d_w1 = matmul_tn(h_drop, &g_hw, exec)?;
    let g_hdrop = matmul_nt(&g_hw, model.layers[1].values(), exec)?;
    let g_h = dropout_bwd(keep_hidden, *dropout, &g_hdrop)?;
    let g_hpre = relu_bwd(h_pre, &g_h)?;

    let (gv1, g_xw) = spmm_backward(&cache.adj, xw, &g_hpre)?;
    g.accumulate_arc_grads(&gv1, &mut d_ma);
    let d_w0 = matmul_tn(x_drop, &g_xw, exec)?;
    let g_xdrop = matmul_nt(&g_xw, model.layers[0].values(), exec)?;
    let g_xmasked = dropout_bwd(keep_in, *dropout, &g_xdrop)?;
    let d_mx = g.feature_mask_grads(&g_xmasked);

    Ok(GradBundle {
        d_w: vec![d_w0, d_w1],
        d_ma,
        d_mx,
    })
}

/// SGC forward. The edge mask scales `Â` at every hop.
pub fn sgc_forward<T: Scalar>(
    g: &PreparedGraph<T>,
    model: &Model<T>,
    m_a: &SoftMask<T>,
    m_x: &SoftMask<T>,
) -> Result<(DenseMatrix<T>, ForwardCache<T>)> {
    let Arch::Sgc { hops } = model.arch else {
        return Err(CgpError::InvalidArgument("sgc_forward on a non-SGC model".into()));
    };
    model.check_input(g)?;
    let exec = model.exec;
    let adj = g.masked_adjacency(m_a)?;
    let x_masked = g.masked_features(m_x)?;
    let mut cur = matmul_with(&x_masked, model.layers[0].values(), exec)?;
    let mut props = Vec::with_capacity(hops);
    for _ in 0..hops {
        let next = spmm_with(&adj, &cur, exec)?;
        props.push(cur);
        cur = next;
    }
    Ok((
        cur,
        ForwardCache {
            version: model.version,
            adj,
            x_masked,
            inner: CacheInner::Sgc { props },
        },
    ))
}

pub fn sgc_backward<T: Scalar>(
    g: &PreparedGraph<T>,
    model: &Model<T>,
    cache: &ForwardCache<T>,
    glogits: &DenseMatrix<T>,
) -> Result<GradBundle<T>> {
    if cache.version != model.version {
        return Err(CgpError::StaleCache);
    }
    let CacheInner::Sgc { props } = &cache.inner else {
        return Err(CgpError::InvalidArgument("cache is not from an SGC forward".into()));
    };
    let exec = model.exec;
    let mut d_ma = vec![T::zero(); g.n_arcs()];
    let mut grad = glogits.clone();
    for input in props.iter().rev() {
        let (gv, gx) = spmm_backward(&cache.adj, input, &grad)?;
        g.accumulate_arc_grads(&gv, &mut d_ma);
        grad = gx;
    }
    let d_w = matmul_tn(&cache.x_masked, &grad, exec)?;
    let g_xmasked = matmul_nt(&grad, model.layers[0].values(), exec)?;
    let d_mx = g.feature_mask_grads(&g_xmasked);
    Ok(GradBundle {
        d_w: vec![d_w],
        d_ma,
        d_mx,
    })
}

/// Fraction of `idx` rows whose argmax matches the label. Ties go to the
/// lowest class index.
pub fn accuracy<T: Scalar>(logits: &DenseMatrix<T>, labels: &[usize], idx: &[usize]) -> Result<f64> {
    if idx.is_empty() {
        return Err(CgpError::InvalidArgument("accuracy over an empty index set".into()));
    }
    let correct = idx
        .iter()
        .filter(|&&i| {
            let row = logits.row(i);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = c;
                }
            }
            best == labels[i]
        })
        .count();
    Ok(correct as f64 / idx.len() as f64)
}

pub const CHECKPOINT_FORMAT: &str = "cgp-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
    /// One `'0'`/`'1'` character per weight, row-major.
    pub mask: String,
    pub momentum: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftMaskRecord {
    pub kind: MaskKind,
    pub values: Vec<f64>,
    pub active: String,
    pub momentum: Vec<f64>,
}

/// JSON checkpoint of weights, masks and RNG state.
///
/// All reals are stored as `f64`; single-precision values widen exactly, so
/// a save/load cycle is lossless in either precision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub precision: String,
    pub epoch: usize,
    pub arch: Arch,
    pub dropout: f64,
    pub layers: Vec<LayerRecord>,
    pub edge_mask: SoftMaskRecord,
    pub feature_mask: SoftMaskRecord,
    pub rng: ChaCha8Rng,
}

fn bits_to_string(bits: &[bool]) -> String {
    bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

fn string_to_bits(s: &str) -> Result<Vec<bool>> {
    s.chars()
        .map(|c| match c {
            '1' => Ok(true),
            '0' => Ok(false),
            other => Err(CgpError::InvalidArgument(format!("bad mask character {other:?}"))),
        })
        .collect()
}

fn widen<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.as_f64()).collect()
}

fn narrow<T: Scalar>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::from_f64(x)).collect()
}

impl Checkpoint {
    pub fn capture<T: Scalar>(
        model: &Model<T>,
        m_a: &SoftMask<T>,
        m_x: &SoftMask<T>,
        epoch: usize,
        rng: &ChaCha8Rng,
    ) -> Self {
        let soft = |m: &SoftMask<T>| SoftMaskRecord {
            kind: m.kind(),
            values: widen(m.values()),
            active: bits_to_string(m.active()),
            momentum: widen(m.momentum()),
        };
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            precision: T::NAME.to_string(),
            epoch,
            arch: model.arch(),
            dropout: model.dropout(),
            layers: model
                .layers()
                .iter()
                .map(|l| LayerRecord {
                    rows: l.shape().0,
                    cols: l.shape().1,
                    values: widen(l.values().data()),
                    mask: bits_to_string(l.mask()),
                    momentum: widen(l.momentum()),
                })
                .collect(),
            edge_mask: soft(m_a),
            feature_mask: soft(m_x),
            rng: rng.clone(),
        }
    }

    #[allow(clippy::type_complexity)]
    pub fn restore<T: Scalar>(&self) -> Result<(Model<T>, SoftMask<T>, SoftMask<T>, ChaCha8Rng)> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(CgpError::InvalidArgument(format!(
                "unknown checkpoint format {:?}",
                self.format
            )));
        }
        let layers = self
            .layers
            .iter()
            .map(|l| {
                MaskedTensor::from_parts(
                    DenseMatrix::from_vec(l.rows, l.cols, narrow(&l.values))?,
                    string_to_bits(&l.mask)?,
                    narrow(&l.momentum),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let soft = |r: &SoftMaskRecord| {
            SoftMask::from_parts(
                narrow(&r.values),
                string_to_bits(&r.active)?,
                narrow(&r.momentum),
                r.kind,
            )
        };
        let model = Model::from_layers(self.arch, layers, self.dropout)?;
        Ok((model, soft(&self.edge_mask)?, soft(&self.feature_mask)?, self.rng.clone()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string(self)?;
        fs::write(path, json).map_err(|e| CgpError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| CgpError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Fresh all-ones masks sized for `g`.
pub fn full_masks<T: Scalar>(g: &PreparedGraph<T>) -> (SoftMask<T>, SoftMask<T>) {
    (
        SoftMask::ones(g.n_arcs(), MaskKind::Edge),
        SoftMask::ones(g.feature_dim(), MaskKind::Feature),
    )
}
