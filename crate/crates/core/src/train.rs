//! Full-batch training with gradual co-sparsification.
//!
//! Each epoch runs one forward/backward pass over the training nodes, one
//! Adam step on the weights and trainable soft masks, and at scheduled
//! epochs a prune-then-regrow event on weights, arcs and feature channels.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cost::{inference_cost, training_cost_trajectory, CostBreakdown};
use crate::error::{CgpError, Result};
use crate::graph::{normalize_adjacency, Graph, SplitSet};
use crate::model::{accuracy, full_masks, Arch, Checkpoint, GradBundle, Mode, Model, PreparedGraph};
use crate::sparsify::{
    prune_event, schedule_rate, EventOutcome, KindSchedules, MaskedTensor, PruneSchedule,
    PruneScope, RegrowthPolicy, RegrowthScheme, SoftMask,
};
use crate::tensor::{softmax_xent, DenseMatrix, Exec, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[default]
    Gcn,
    Sgc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    Double,
    Single,
}

impl std::str::FromStr for Precision {
    type Err = CgpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "double" => Ok(Precision::Double),
            "single" => Ok(Precision::Single),
            other => Err(CgpError::Config(format!(
                "precision must be double or single, got {other:?}"
            ))),
        }
    }
}

/// Event timing for one element kind, overriding the shared one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timing {
    pub t0: usize,
    pub dt: usize,
    pub n: usize,
}

/// Training configuration. Serialized as a flat JSON object; every key is
/// optional and falls back to the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub hidden: usize,
    /// Propagation hops for SGC.
    pub hops: usize,
    pub dropout: f64,
    pub seed: u64,
    /// Target sparsity of weights, arcs and feature channels.
    pub p_w: f64,
    pub p_a: f64,
    pub p_x: f64,
    pub t0: usize,
    pub dt: usize,
    /// Number of pruning steps; events fall on `t0, t0 + dt, …, t0 + n·dt`.
    pub n: usize,
    pub timing_w: Option<Timing>,
    pub timing_a: Option<Timing>,
    pub timing_x: Option<Timing>,
    pub regrowth: RegrowthScheme,
    pub regrowth_rate: f64,
    pub momentum_decay: f64,
    pub scope: PruneScope,
    pub init_weight_density: f64,
    pub precision: Precision,
    pub exec: Exec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Gcn,
            epochs: 200,
            lr: 0.01,
            weight_decay: 5e-4,
            hidden: 512,
            hops: 2,
            dropout: 0.5,
            seed: 0,
            p_w: 0.0,
            p_a: 0.0,
            p_x: 0.0,
            t0: 0,
            dt: 10,
            n: 10,
            timing_w: None,
            timing_a: None,
            timing_x: None,
            regrowth: RegrowthScheme::None,
            regrowth_rate: 0.2,
            momentum_decay: 0.9,
            scope: PruneScope::Global,
            init_weight_density: 1.0,
            precision: Precision::Double,
            exec: Exec::Sequential,
        }
    }
}

impl TrainConfig {
    pub fn policy(&self) -> RegrowthPolicy {
        RegrowthPolicy {
            scheme: self.regrowth,
            rate: self.regrowth_rate,
            momentum_decay: self.momentum_decay,
        }
    }

    /// Weight sparsity implied by the initial density, as a fraction of
    /// `total` weights.
    pub fn initial_weight_sparsity(&self, total: usize) -> f64 {
        if total == 0 {
            return 0.0;
        }
        initial_inactive(self.init_weight_density, total) as f64 / total as f64
    }

    /// Per-kind schedules for a model with `weight_count` weights.
    pub fn schedules(&self, weight_count: usize) -> KindSchedules {
        let make = |p_i: f64, p_f: f64, timing: Option<Timing>| {
            let t = timing.unwrap_or(Timing {
                t0: self.t0,
                dt: self.dt,
                n: self.n,
            });
            PruneSchedule {
                p_i,
                p_f,
                t0: t.t0,
                dt: t.dt,
                n: t.n,
            }
        };
        KindSchedules {
            weights: make(self.initial_weight_sparsity(weight_count), self.p_w, self.timing_w),
            edges: make(0.0, self.p_a, self.timing_a),
            features: make(0.0, self.p_x, self.timing_x),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CgpError::Config(msg));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.lr));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight decay {} must be >= 0", self.weight_decay));
        }
        for (name, p) in [("p_w", self.p_w), ("p_a", self.p_a), ("p_x", self.p_x)] {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("target {name}={p} outside [0, 1)"));
            }
        }
        if !(self.init_weight_density > 0.0 && self.init_weight_density <= 1.0) {
            return bad(format!(
                "init_weight_density {} outside (0, 1]",
                self.init_weight_density
            ));
        }
        match self.model {
            ModelKind::Gcn => {
                if self.hidden == 0 {
                    return bad("hidden must be at least 1".into());
                }
                if !(0.0..1.0).contains(&self.dropout) {
                    return bad(format!("dropout {} outside [0, 1)", self.dropout));
                }
            }
            ModelKind::Sgc => {
                if self.hops == 0 {
                    return bad("hops must be at least 1".into());
                }
            }
        }
        self.policy().validate()?;
        for timing in [
            self.timing_w,
            self.timing_a,
            self.timing_x,
            Some(Timing {
                t0: self.t0,
                dt: self.dt,
                n: self.n,
            }),
        ]
        .into_iter()
        .flatten()
        {
            if timing.dt == 0 || timing.n == 0 {
                return bad("schedule needs dt >= 1 and n >= 1".into());
            }
            if timing.t0 + timing.n * timing.dt >= self.epochs {
                return bad(format!(
                    "schedule exceeds training length: last event at epoch {} but epochs are 0..{}",
                    timing.t0 + timing.n * timing.dt,
                    self.epochs
                ));
            }
        }
        Ok(())
    }

    /// Full validation including checks that need the model size.
    fn validate_for(&self, weight_count: usize) -> Result<KindSchedules> {
        self.validate()?;
        let s = self.schedules(weight_count);
        if s.weights.p_i > s.weights.p_f {
            return Err(CgpError::Config(format!(
                "target p_w={} is below the initial weight sparsity {}",
                self.p_w, s.weights.p_i
            )));
        }
        for sched in [s.weights, s.edges, s.features] {
            sched.validate()?;
        }
        Ok(s)
    }
}

fn initial_inactive(density: f64, total: usize) -> usize {
    crate::sparsify::floor_count(1.0 - density, total)
}

/// Per-tensor Adam moments. The step counter is shared by the caller.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T = f64> {
    pub m: Vec<T>,
    pub v: Vec<T>,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

impl<T: Scalar> AdamState<T> {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
        }
    }

    /// Clears the moments of re-activated positions.
    pub fn reset(&mut self, idx: &[usize]) {
        for &i in idx {
            self.m[i] = T::zero();
            self.v[i] = T::zero();
        }
    }
}

/// One bias-corrected Adam update at `step` (1-based), applied only where
/// `active` is set. `weight_decay` adds an L2 term to the gradient.
pub fn adam_step<T: Scalar>(
    state: &mut AdamState<T>,
    params: &mut [T],
    grads: &[T],
    lr: f64,
    weight_decay: f64,
    active: &[bool],
    step: u64,
) {
    let b1 = T::from_f64(ADAM_BETA1);
    let b2 = T::from_f64(ADAM_BETA2);
    let one_b1 = T::from_f64(1.0 - ADAM_BETA1);
    let one_b2 = T::from_f64(1.0 - ADAM_BETA2);
    let bc1 = T::from_f64(1.0 - ADAM_BETA1.powi(step as i32));
    let bc2 = T::from_f64(1.0 - ADAM_BETA2.powi(step as i32));
    let lr = T::from_f64(lr);
    let wd = T::from_f64(weight_decay);
    let eps = T::from_f64(ADAM_EPS);
    for i in 0..params.len() {
        if !active[i] {
            continue;
        }
        let g = if weight_decay != 0.0 {
            grads[i] + wd * params[i]
        } else {
            grads[i]
        };
        state.m[i] = b1 * state.m[i] + one_b1 * g;
        state.v[i] = b2 * state.v[i] + one_b2 * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] = params[i] - lr * m_hat / (v_hat.sqrt() + eps);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub sparsity_w: f64,
    pub sparsity_a: f64,
    pub sparsity_x: f64,
    pub event: bool,
    /// Training FLOPs spent in this epoch.
    pub train_flops: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub test_acc_at_best: f64,
    /// First epoch eligible for model selection (end of the pruning window).
    pub selection_start: usize,
    pub final_sparsity_w: f64,
    pub final_sparsity_a: f64,
    pub final_sparsity_x: f64,
    pub inference: CostBreakdown,
    pub dense_inference: CostBreakdown,
    pub training_flops: f64,
    /// Training FLOPs are three forward passes per epoch.
    pub training_flops_convention: String,
    pub n_weights: usize,
    pub n_arcs: usize,
    pub n_features: usize,
    pub seed: u64,
    pub config: TrainConfig,
}

/// Picks the epoch with the highest validation accuracy among epochs
/// `>= start`, ties going to the earliest.
pub fn select_best(records: &[EpochRecord], start: usize) -> Result<usize> {
    let mut best: Option<&EpochRecord> = None;
    for r in records.iter().filter(|r| r.epoch >= start) {
        if best.is_none_or(|b| r.val_acc > b.val_acc) {
            best = Some(r);
        }
    }
    best.map(|r| r.epoch).ok_or_else(|| {
        CgpError::Config(format!("no epoch at or after {start} to select from"))
    })
}

/// Deactivates a uniformly random `⌊(1 − density)·N⌋` of all weights.
pub fn sparse_init<T: Scalar>(model: &mut Model<T>, density: f64, rng: &mut ChaCha8Rng) -> Result<()> {
    if !(density > 0.0 && density <= 1.0) {
        return Err(CgpError::Config(format!("initial density {density} outside (0, 1]")));
    }
    let total = model.weight_count();
    let k = initial_inactive(density, total);
    if k == 0 {
        return Ok(());
    }
    let mut flat = vec![true; total];
    for i in sample(rng, total, k) {
        flat[i] = false;
    }
    let mut start = 0;
    for layer in model.layers_mut() {
        let len = layer.len();
        layer.set_mask(flat[start..start + len].to_vec());
        start += len;
    }
    Ok(())
}

/// Mask state handed to a [`TrainObserver`] after every epoch.
#[derive(Debug)]
pub struct EpochSnapshot<'a> {
    pub epoch: usize,
    pub record: &'a EpochRecord,
    pub event: Option<&'a EventOutcome>,
    pub schedules: &'a KindSchedules,
    /// Active and total weights per layer.
    pub layer_counts: Vec<(usize, usize)>,
    pub active_arcs: usize,
    pub n_arcs: usize,
    pub active_features: usize,
    pub n_features: usize,
}

pub trait TrainObserver {
    fn on_epoch(&mut self, snapshot: &EpochSnapshot<'_>);
}

impl<F: FnMut(&EpochSnapshot<'_>)> TrainObserver for F {
    fn on_epoch(&mut self, snapshot: &EpochSnapshot<'_>) {
        self(snapshot)
    }
}

/// Report plus the model state at the selected epoch.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub report: TrainReport,
    pub best: Checkpoint,
}

pub fn train(graph: &Graph, splits: &SplitSet, cfg: &TrainConfig) -> Result<TrainReport> {
    Ok(train_run(graph, splits, cfg, &mut |_: &EpochSnapshot<'_>| {})?.report)
}

pub fn train_run(
    graph: &Graph,
    splits: &SplitSet,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainRun> {
    match cfg.precision {
        Precision::Double => train_impl::<f64>(graph, splits, cfg, observer),
        Precision::Single => train_impl::<f32>(graph, splits, cfg, observer),
    }
}

struct Optimizer<T> {
    layers: Vec<AdamState<T>>,
    edges: AdamState<T>,
    features: AdamState<T>,
    step: u64,
}

fn cost_of<T: Scalar>(
    model: &Model<T>,
    n: usize,
    m_a: &SoftMask<T>,
    m_x: &SoftMask<T>,
    classes: usize,
) -> CostBreakdown {
    let density: Vec<f64> = model
        .layers()
        .iter()
        .map(|l| l.active_count() as f64 / l.len().max(1) as f64)
        .collect();
    inference_cost(
        model.arch(),
        n,
        m_a.active_count(),
        m_x.active_count(),
        classes,
        &density,
    )
}

fn train_impl<T: Scalar>(
    graph: &Graph,
    splits: &SplitSet,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainRun> {
    cfg.validate()?;
    splits.validate(graph.n_nodes())?;
    let norm = normalize_adjacency(graph);
    let pg = PreparedGraph::<T>::new(graph, &norm);
    let n = graph.n_nodes();
    let d = graph.feature_dim();
    let classes = graph.n_classes();
    let labels = graph.labels();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = match cfg.model {
        ModelKind::Gcn => Model::<T>::gcn(d, cfg.hidden, classes, cfg.dropout, &mut rng)?,
        ModelKind::Sgc => Model::<T>::sgc(d, classes, cfg.hops, &mut rng)?,
    };
    model.set_exec(cfg.exec);
    let schedules = cfg.validate_for(model.weight_count())?;
    sparse_init(&mut model, cfg.init_weight_density, &mut rng)?;

    let (mut m_a, mut m_x) = full_masks(&pg);
    // A soft mask only learns when its kind is actually pruned.
    let train_edges = schedules.edges.p_f > 0.0;
    let train_features = schedules.features.p_f > 0.0;
    let policy = cfg.policy();
    let dense_inference = inference_cost(
        model.arch(),
        n,
        graph.n_arcs(),
        d,
        classes,
        &vec![1.0; model.layers().len()],
    );

    let mut opt = Optimizer {
        layers: model.layers().iter().map(|l| AdamState::new(l.len())).collect(),
        edges: AdamState::new(m_a.len()),
        features: AdamState::new(m_x.len()),
        step: 0,
    };

    let selection_start = schedules.end();
    let mut records: Vec<EpochRecord> = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, Checkpoint)> = None;

    for epoch in 0..cfg.epochs {
        let epoch_cost = cost_of(&model, n, &m_a, &m_x, classes);

        let (logits, cache) = model.forward(&pg, &m_a, &m_x, Mode::Train, &mut rng)?;
        let (loss, glogits) = softmax_xent(&logits, labels, &splits.train)?;
        if !loss.is_finite() {
            return Err(CgpError::Divergence { epoch });
        }
        let grads = model.backward(&pg, &cache, &glogits)?;

        update_momentum(&mut model, &mut m_a, &mut m_x, &grads, policy.momentum_decay);
        opt.step += 1;
        optimizer_step(
            &mut opt,
            &mut model,
            &mut m_a,
            &mut m_x,
            &grads,
            cfg,
            train_edges,
            train_features,
        );

        let event = if schedules.is_event(epoch) {
            let outcome = prune_event(
                model.layers_mut(),
                &mut m_a,
                &mut m_x,
                epoch,
                &schedules,
                &policy,
                cfg.scope,
                &grads,
                &mut rng,
            )?;
            reset_regrown(&mut opt, &model, &outcome);
            Some(outcome)
        } else {
            None
        };

        let (eval_logits, _) = model.forward(&pg, &m_a, &m_x, Mode::Eval, &mut rng)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss.as_f64(),
            train_acc: accuracy(&eval_logits, labels, &splits.train)?,
            val_acc: accuracy(&eval_logits, labels, &splits.val)?,
            test_acc: accuracy(&eval_logits, labels, &splits.test)?,
            sparsity_w: model.weight_sparsity(),
            sparsity_a: m_a.sparsity(),
            sparsity_x: m_x.sparsity(),
            event: event.is_some(),
            train_flops: training_cost_trajectory([&epoch_cost]),
        };

        if epoch >= selection_start && best.as_ref().is_none_or(|(v, _)| record.val_acc > *v) {
            best = Some((
                record.val_acc,
                Checkpoint::capture(&model, &m_a, &m_x, epoch, &rng),
            ));
        }

        observer.on_epoch(&EpochSnapshot {
            epoch,
            record: &record,
            event: event.as_ref(),
            schedules: &schedules,
            layer_counts: model.layers().iter().map(|l| (l.active_count(), l.len())).collect(),
            active_arcs: m_a.active_count(),
            n_arcs: m_a.len(),
            active_features: m_x.active_count(),
            n_features: m_x.len(),
        });
        records.push(record);
    }

    let best_epoch = select_best(&records, selection_start)?;
    let (_, best_checkpoint) = best.expect("selection window is non-empty");
    debug_assert_eq!(best_checkpoint.epoch, best_epoch);
    let best_record = &records[best_epoch];
    let report = TrainReport {
        best_epoch,
        best_val_acc: best_record.val_acc,
        test_acc_at_best: best_record.test_acc,
        selection_start,
        final_sparsity_w: model.weight_sparsity(),
        final_sparsity_a: m_a.sparsity(),
        final_sparsity_x: m_x.sparsity(),
        inference: cost_of(&model, n, &m_a, &m_x, classes),
        dense_inference,
        training_flops: records.iter().map(|r| r.train_flops).sum(),
        training_flops_convention: "3 x inference FLOPs per epoch, 1 MAC = 2 FLOPs".into(),
        n_weights: model.weight_count(),
        n_arcs: graph.n_arcs(),
        n_features: d,
        seed: cfg.seed,
        config: cfg.clone(),
        records,
    };
    Ok(TrainRun {
        report,
        best: best_checkpoint,
    })
}

fn update_momentum<T: Scalar>(
    model: &mut Model<T>,
    m_a: &mut SoftMask<T>,
    m_x: &mut SoftMask<T>,
    grads: &GradBundle<T>,
    beta: f64,
) {
    for (layer, g) in model.layers_mut().iter_mut().zip(&grads.d_w) {
        layer.update_momentum(g, beta);
    }
    m_a.update_momentum(&grads.d_ma, beta);
    m_x.update_momentum(&grads.d_mx, beta);
}

#[allow(clippy::too_many_arguments)]
fn optimizer_step<T: Scalar>(
    opt: &mut Optimizer<T>,
    model: &mut Model<T>,
    m_a: &mut SoftMask<T>,
    m_x: &mut SoftMask<T>,
    grads: &GradBundle<T>,
    cfg: &TrainConfig,
    train_edges: bool,
    train_features: bool,
) {
    let step = opt.step;
    for ((layer, state), g) in model
        .layers_mut()
        .iter_mut()
        .zip(&mut opt.layers)
        .zip(&grads.d_w)
    {
        step_weights(layer, state, g, cfg, step);
    }
    if train_edges {
        let active = m_a.active().to_vec();
        adam_step(&mut opt.edges, m_a.values_mut(), &grads.d_ma, cfg.lr, 0.0, &active, step);
        m_a.clamp_inactive();
    }
    if train_features {
        let active = m_x.active().to_vec();
        adam_step(&mut opt.features, m_x.values_mut(), &grads.d_mx, cfg.lr, 0.0, &active, step);
        m_x.clamp_inactive();
    }
}

fn step_weights<T: Scalar>(
    layer: &mut MaskedTensor<T>,
    state: &mut AdamState<T>,
    grad: &DenseMatrix<T>,
    cfg: &TrainConfig,
    step: u64,
) {
    let active = layer.mask().to_vec();
    adam_step(
        state,
        layer.values_mut().data_mut(),
        grad.data(),
        cfg.lr,
        cfg.weight_decay,
        &active,
        step,
    );
}

fn reset_regrown<T: Scalar>(opt: &mut Optimizer<T>, model: &Model<T>, outcome: &EventOutcome) {
    let mut offsets = Vec::with_capacity(model.layers().len());
    let mut start = 0;
    for l in model.layers() {
        offsets.push(start);
        start += l.len();
    }
    for &flat in &outcome.weights.regrown {
        let layer = offsets.partition_point(|&o| o <= flat) - 1;
        opt.layers[layer].reset(&[flat - offsets[layer]]);
    }
    opt.edges.reset(&outcome.edges.regrown);
    opt.features.reset(&outcome.features.regrown);
}

/// Scheduled sparsity of the most recent event at or before `epoch`, or the
/// initial sparsity before the first event.
pub fn scheduled_sparsity(s: &PruneSchedule, epoch: usize) -> f64 {
    if epoch < s.t0 {
        return s.p_i;
    }
    let last = s.t0 + ((epoch.min(s.end()) - s.t0) / s.dt) * s.dt;
    schedule_rate(s, last).expect("last is an event epoch")
}

/// The architecture a config trains.
pub fn arch_of(cfg: &TrainConfig) -> Arch {
    match cfg.model {
        ModelKind::Gcn => Arch::Gcn { hidden: cfg.hidden },
        ModelKind::Sgc => Arch::Sgc { hops: cfg.hops },
    }
}
