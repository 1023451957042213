//! Masks, the cubic gradual-pruning schedule, magnitude pruning and
//! prune-then-regrow events for weights, arcs and feature channels.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CgpError, Result};
use crate::model::GradBundle;
use crate::tensor::{DenseMatrix, Scalar};

/// Relative slack used when turning a fractional count into an integer, so
/// that e.g. `0.29 * 100` counts as 29 rather than 28.999….
const COUNT_EPS: f64 = 1e-9;

/// `⌈p · n⌉`, robust to representation error in `p`.
pub fn ceil_count(p: f64, n: usize) -> usize {
    let x = p * n as f64;
    let r = x.round();
    if (x - r).abs() <= COUNT_EPS * (n.max(1) as f64) {
        r.max(0.0) as usize
    } else {
        x.ceil().max(0.0) as usize
    }
}

/// `⌊p · n⌋`, robust to representation error in `p`.
pub fn floor_count(p: f64, n: usize) -> usize {
    let x = p * n as f64;
    let r = x.round();
    if (x - r).abs() <= COUNT_EPS * (n.max(1) as f64) {
        r.max(0.0) as usize
    } else {
        x.floor().max(0.0) as usize
    }
}

/// Weight matrix gated by a non-trainable binary mask.
///
/// Inactive entries hold exactly zero. `momentum` tracks an exponential
/// moving average of the effective-weight gradient for every entry.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedTensor<T = f64> {
    values: DenseMatrix<T>,
    mask: Vec<bool>,
    momentum: Vec<T>,
}

impl<T: Scalar> MaskedTensor<T> {
    pub fn dense(values: DenseMatrix<T>) -> Self {
        let n = values.data().len();
        Self {
            values,
            mask: vec![true; n],
            momentum: vec![T::zero(); n],
        }
    }

    pub fn from_parts(values: DenseMatrix<T>, mask: Vec<bool>, momentum: Vec<T>) -> Result<Self> {
        let n = values.data().len();
        if mask.len() != n || momentum.len() != n {
            return Err(CgpError::Shape(format!(
                "mask/momentum length differs from {n} weights"
            )));
        }
        let mut t = Self {
            values,
            mask,
            momentum,
        };
        t.apply_mask();
        Ok(t)
    }

    #[inline]
    pub fn values(&self) -> &DenseMatrix<T> {
        &self.values
    }

    #[inline]
    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    #[inline]
    pub fn momentum(&self) -> &[T] {
        &self.momentum
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.mask.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.shape()
    }

    pub fn active_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn sparsity(&self) -> f64 {
        sparsity_of(&self.mask)
    }

    /// Mutable access to values; callers must call [`Self::apply_mask`]
    /// afterwards if they may have written to inactive entries.
    pub(crate) fn values_mut(&mut self) -> &mut DenseMatrix<T> {
        &mut self.values
    }

    pub(crate) fn set_mask(&mut self, mask: Vec<bool>) {
        debug_assert_eq!(mask.len(), self.mask.len());
        self.mask = mask;
        self.apply_mask();
    }

    pub fn apply_mask(&mut self) {
        for (v, &m) in self.values.data_mut().iter_mut().zip(&self.mask) {
            if !m {
                *v = T::zero();
            }
        }
    }

    pub fn update_momentum(&mut self, grad: &DenseMatrix<T>, beta: f64) {
        ema(&mut self.momentum, grad.data(), beta);
    }
}

fn ema<T: Scalar>(momentum: &mut [T], grad: &[T], beta: f64) {
    let b = T::from_f64(beta);
    let one_minus = T::from_f64(1.0 - beta);
    for (m, &g) in momentum.iter_mut().zip(grad) {
        *m = b * *m + one_minus * g;
    }
}

fn sparsity_of(active: &[bool]) -> f64 {
    if active.is_empty() {
        return 0.0;
    }
    active.iter().filter(|&&a| !a).count() as f64 / active.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskKind {
    Edge,
    Feature,
}

/// Trainable real-valued gate over arcs or feature channels.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMask<T = f64> {
    values: Vec<T>,
    active: Vec<bool>,
    momentum: Vec<T>,
    kind: MaskKind,
}

impl<T: Scalar> SoftMask<T> {
    pub fn ones(len: usize, kind: MaskKind) -> Self {
        Self {
            values: vec![T::one(); len],
            active: vec![true; len],
            momentum: vec![T::zero(); len],
            kind,
        }
    }

    pub fn from_parts(
        values: Vec<T>,
        active: Vec<bool>,
        momentum: Vec<T>,
        kind: MaskKind,
    ) -> Result<Self> {
        if values.len() != active.len() || values.len() != momentum.len() {
            return Err(CgpError::Shape("soft mask component lengths differ".into()));
        }
        let mut m = Self {
            values,
            active,
            momentum,
            kind,
        };
        m.clamp_inactive();
        Ok(m)
    }

    #[inline]
    pub fn values(&self) -> &[T] {
        &self.values
    }

    #[inline]
    pub fn active(&self) -> &[bool] {
        &self.active
    }

    #[inline]
    pub fn momentum(&self) -> &[T] {
        &self.momentum
    }

    #[inline]
    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    pub fn sparsity(&self) -> f64 {
        sparsity_of(&self.active)
    }

    pub(crate) fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    /// Deactivates one element, zeroing its value.
    pub fn deactivate(&mut self, i: usize) {
        self.active[i] = false;
        self.values[i] = T::zero();
    }

    pub fn clamp_inactive(&mut self) {
        for (v, &a) in self.values.iter_mut().zip(&self.active) {
            if !a {
                *v = T::zero();
            }
        }
    }

    pub fn update_momentum(&mut self, grad: &[T], beta: f64) {
        ema(&mut self.momentum, grad, beta);
    }
}

/// Cubic gradual-pruning schedule.
///
/// Events happen at `t0, t0 + dt, …, t0 + n·dt`; the sparsity at event `t` is
/// `p_f + (p_i − p_f)(1 − (t − t0)/(n·dt))³`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruneSchedule {
    pub p_i: f64,
    pub p_f: f64,
    pub t0: usize,
    pub dt: usize,
    pub n: usize,
}

impl PruneSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.p_i && self.p_i <= self.p_f && self.p_f < 1.0) {
            return Err(CgpError::Config(format!(
                "schedule needs 0 <= p_i <= p_f < 1 (p_i={}, p_f={})",
                self.p_i, self.p_f
            )));
        }
        if self.dt == 0 || self.n == 0 {
            return Err(CgpError::Config("schedule needs dt >= 1 and n >= 1".into()));
        }
        Ok(())
    }

    /// Epoch of the last pruning event.
    pub fn end(&self) -> usize {
        self.t0 + self.n * self.dt
    }

    pub fn is_event(&self, t: usize) -> bool {
        t >= self.t0 && t <= self.end() && (t - self.t0).is_multiple_of(self.dt)
    }

    pub fn events(&self) -> impl Iterator<Item = usize> + '_ {
        (0..=self.n).map(move |k| self.t0 + k * self.dt)
    }
}

/// Target cumulative sparsity at event epoch `t`.
pub fn schedule_rate(s: &PruneSchedule, t: usize) -> Result<f64> {
    if !s.is_event(t) {
        return Err(CgpError::InvalidArgument(format!(
            "epoch {t} is not a pruning event (t0={}, dt={}, n={})",
            s.t0, s.dt, s.n
        )));
    }
    if t == s.t0 {
        return Ok(s.p_i);
    }
    let frac = 1.0 - (t - s.t0) as f64 / (s.n * s.dt) as f64;
    Ok(s.p_f + (s.p_i - s.p_f) * frac * frac * frac)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PruneScope {
    /// One magnitude ranking across all weight layers.
    #[default]
    Global,
    /// Separate quota per weight layer.
    Layerwise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegrowthScheme {
    #[default]
    None,
    Random,
    Gradient,
    Momentum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegrowthPolicy {
    pub scheme: RegrowthScheme,
    pub rate: f64,
    pub momentum_decay: f64,
}

impl Default for RegrowthPolicy {
    fn default() -> Self {
        Self {
            scheme: RegrowthScheme::None,
            rate: 0.2,
            momentum_decay: 0.9,
        }
    }
}

impl RegrowthPolicy {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.rate) {
            return Err(CgpError::Config(format!(
                "regrowth rate {} outside [0, 1)",
                self.rate
            )));
        }
        if !(self.momentum_decay > 0.0 && self.momentum_decay < 1.0) {
            return Err(CgpError::Config(format!(
                "momentum decay {} outside (0, 1)",
                self.momentum_decay
            )));
        }
        Ok(())
    }

    /// Rate actually applied at events; zero when regrowth is disabled.
    pub fn effective_rate(&self) -> f64 {
        match self.scheme {
            RegrowthScheme::None => 0.0,
            _ => self.rate,
        }
    }
}

/// Prune ordering: smaller score first, then already-inactive before
/// active, then ascending index.
fn prune_order(scores: &[f64], active: &[bool], a: usize, b: usize) -> Ordering {
    scores[a]
        .total_cmp(&scores[b])
        .then(active[a].cmp(&active[b]))
        .then(a.cmp(&b))
}

fn segments_for(n: usize, scope: PruneScope, layer_sizes: &[usize]) -> Result<Vec<Range<usize>>> {
    match scope {
        PruneScope::Global => Ok(vec![0..n]),
        PruneScope::Layerwise => {
            if layer_sizes.iter().sum::<usize>() != n {
                return Err(CgpError::Shape(format!(
                    "layer sizes {layer_sizes:?} do not cover {n} elements"
                )));
            }
            let mut start = 0;
            Ok(layer_sizes
                .iter()
                .map(|&len| {
                    let r = start..start + len;
                    start += len;
                    r
                })
                .collect())
        }
    }
}

/// Deactivates the `⌈target · N⌉` lowest-scoring elements (per layer under
/// [`PruneScope::Layerwise`]) and activates everything else.
///
/// Inactive elements are expected to carry score zero, so sparsity
/// accumulates across calls.
pub fn magnitude_prune(
    scores: &[f64],
    active: &[bool],
    target_sparsity: f64,
    scope: PruneScope,
    layer_sizes: &[usize],
) -> Result<Vec<bool>> {
    let n = scores.len();
    if active.len() != n {
        return Err(CgpError::Shape("scores and mask lengths differ".into()));
    }
    if !(0.0..1.0).contains(&target_sparsity) {
        return Err(CgpError::InvalidArgument(format!(
            "target sparsity {target_sparsity} outside [0, 1)"
        )));
    }
    let mut out = vec![true; n];
    for seg in segments_for(n, scope, layer_sizes)? {
        let quota = ceil_count(target_sparsity, seg.len());
        if quota > seg.len() {
            return Err(CgpError::InvalidArgument(format!(
                "prune quota {quota} exceeds {} elements",
                seg.len()
            )));
        }
        if quota == 0 {
            continue;
        }
        let mut idx: Vec<usize> = seg.collect();
        idx.select_nth_unstable_by(quota - 1, |&a, &b| prune_order(scores, active, a, b));
        for &i in &idx[..quota] {
            out[i] = false;
        }
    }
    Ok(out)
}

/// Removes `k = ⌊r · active⌋` (clamped to the inactive count) active
/// elements with the smallest `keep_scores`, then activates the `k`
/// previously inactive elements with the largest `add_scores`.
pub fn regrow(active: &[bool], keep_scores: &[f64], add_scores: &[f64], rate: f64) -> Result<Vec<bool>> {
    regrow_segments(active, keep_scores, add_scores, rate, &[0..active.len()])
}

pub fn regrow_segments(
    active: &[bool],
    keep_scores: &[f64],
    add_scores: &[f64],
    rate: f64,
    segments: &[Range<usize>],
) -> Result<Vec<bool>> {
    let n = active.len();
    if keep_scores.len() != n || add_scores.len() != n {
        return Err(CgpError::Shape("regrow score lengths differ from mask".into()));
    }
    if !(0.0..1.0).contains(&rate) {
        return Err(CgpError::InvalidArgument(format!("regrowth rate {rate} outside [0, 1)")));
    }
    let mut out = active.to_vec();
    for seg in segments {
        let (mut on, mut off): (Vec<usize>, Vec<usize>) =
            seg.clone().partition(|&i| active[i]);
        let k = floor_count(rate, on.len()).min(off.len());
        if k == 0 {
            continue;
        }
        on.select_nth_unstable_by(k - 1, |&a, &b| {
            keep_scores[a].total_cmp(&keep_scores[b]).then(a.cmp(&b))
        });
        off.select_nth_unstable_by(k - 1, |&a, &b| {
            add_scores[b].total_cmp(&add_scores[a]).then(a.cmp(&b))
        });
        for &i in &on[..k] {
            out[i] = false;
        }
        for &i in &off[..k] {
            out[i] = true;
        }
    }
    Ok(out)
}

/// Growth scores for every element under the given scheme.
pub fn add_score<T: Scalar, R: Rng + ?Sized>(
    policy: &RegrowthPolicy,
    grads: &[T],
    momentum: &[T],
    rng: &mut R,
) -> Result<Vec<f64>> {
    match policy.scheme {
        RegrowthScheme::None => Err(CgpError::InvalidArgument(
            "no growth scores without a regrowth scheme".into(),
        )),
        RegrowthScheme::Gradient => Ok(grads.iter().map(|g| g.as_f64().abs()).collect()),
        RegrowthScheme::Momentum => Ok(momentum.iter().map(|m| m.as_f64().abs()).collect()),
        RegrowthScheme::Random => Ok((0..grads.len()).map(|_| rng.random::<f64>()).collect()),
    }
}

/// One schedule per element kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KindSchedules {
    pub weights: PruneSchedule,
    pub edges: PruneSchedule,
    pub features: PruneSchedule,
}

impl KindSchedules {
    pub fn is_event(&self, t: usize) -> bool {
        self.weights.is_event(t) || self.edges.is_event(t) || self.features.is_event(t)
    }

    /// Epoch after which no mask changes any more.
    pub fn end(&self) -> usize {
        self.weights.end().max(self.edges.end()).max(self.features.end())
    }
}

/// What one kind went through during an event.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KindOutcome {
    /// Scheduled sparsity, `None` when the epoch is not an event for this kind.
    pub target: Option<f64>,
    pub pruned: Vec<usize>,
    pub regrown: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventOutcome {
    pub weights: KindOutcome,
    pub edges: KindOutcome,
    pub features: KindOutcome,
}

fn diff_masks(before: &[bool], after: &[bool]) -> (Vec<usize>, Vec<usize>) {
    let mut off = Vec::new();
    let mut on = Vec::new();
    for (i, (&b, &a)) in before.iter().zip(after).enumerate() {
        match (b, a) {
            (true, false) => off.push(i),
            (false, true) => on.push(i),
            _ => {}
        }
    }
    (off, on)
}

/// Magnitude prune to `target`, then regrow. Returns the new mask.
#[allow(clippy::too_many_arguments)]
fn prune_then_regrow<R: Rng + ?Sized>(
    magnitudes: &[f64],
    active: &[bool],
    target: f64,
    scope: PruneScope,
    layer_sizes: &[usize],
    policy: &RegrowthPolicy,
    add: impl FnOnce(&mut R) -> Result<Vec<f64>>,
    rng: &mut R,
) -> Result<Vec<bool>> {
    let pruned = magnitude_prune(magnitudes, active, target, scope, layer_sizes)?;
    if policy.effective_rate() == 0.0 {
        return Ok(pruned);
    }
    let keep: Vec<f64> = magnitudes
        .iter()
        .zip(&pruned)
        .map(|(&m, &a)| if a { m } else { 0.0 })
        .collect();
    let add_scores = add(rng)?;
    let segments = segments_for(magnitudes.len(), scope, layer_sizes)?;
    regrow_segments(&pruned, &keep, &add_scores, policy.effective_rate(), &segments)
}

fn soft_mask_event<T: Scalar, R: Rng + ?Sized>(
    mask: &mut SoftMask<T>,
    schedule: &PruneSchedule,
    t: usize,
    policy: &RegrowthPolicy,
    grads: &[T],
    rng: &mut R,
) -> Result<KindOutcome> {
    if !schedule.is_event(t) {
        return Ok(KindOutcome::default());
    }
    let target = schedule_rate(schedule, t)?;
    let magnitudes: Vec<f64> = mask.values.iter().map(|v| v.as_f64().abs()).collect();
    let before = mask.active.clone();
    let momentum = mask.momentum.clone();
    let after = prune_then_regrow(
        &magnitudes,
        &before,
        target,
        PruneScope::Global,
        &[],
        policy,
        |rng| add_score(policy, grads, &momentum, rng),
        rng,
    )?;
    let (pruned, regrown) = diff_masks(&before, &after);
    mask.active = after;
    for &i in &regrown {
        mask.values[i] = T::one();
    }
    mask.clamp_inactive();
    Ok(KindOutcome {
        target: Some(target),
        pruned,
        regrown,
    })
}

fn weight_event<T: Scalar, R: Rng + ?Sized>(
    layers: &mut [MaskedTensor<T>],
    schedule: &PruneSchedule,
    t: usize,
    policy: &RegrowthPolicy,
    scope: PruneScope,
    grads: &[DenseMatrix<T>],
    rng: &mut R,
) -> Result<KindOutcome> {
    if !schedule.is_event(t) {
        return Ok(KindOutcome::default());
    }
    if grads.len() != layers.len() {
        return Err(CgpError::Shape("one weight gradient per layer expected".into()));
    }
    let target = schedule_rate(schedule, t)?;
    let sizes: Vec<usize> = layers.iter().map(|l| l.len()).collect();
    let magnitudes: Vec<f64> = layers
        .iter()
        .flat_map(|l| l.values.data().iter().map(|v| v.as_f64().abs()))
        .collect();
    let before: Vec<bool> = layers.iter().flat_map(|l| l.mask.iter().copied()).collect();
    let flat_grads: Vec<T> = grads.iter().flat_map(|g| g.data().iter().copied()).collect();
    let flat_momentum: Vec<T> = layers.iter().flat_map(|l| l.momentum.iter().copied()).collect();
    let after = prune_then_regrow(
        &magnitudes,
        &before,
        target,
        scope,
        &sizes,
        policy,
        |rng| add_score(policy, &flat_grads, &flat_momentum, rng),
        rng,
    )?;
    let (pruned, regrown) = diff_masks(&before, &after);
    let mut start = 0;
    for layer in layers.iter_mut() {
        let len = layer.len();
        // Regrown weights restart from zero.
        layer.set_mask(after[start..start + len].to_vec());
        start += len;
    }
    Ok(KindOutcome {
        target: Some(target),
        pruned,
        regrown,
    })
}

/// Applies one pruning event at epoch `t` to every kind whose schedule has
/// an event there: magnitude pruning to the scheduled sparsity, then
/// regrowth. Deactivated entries are zeroed, regrown weights start at 0
/// and regrown soft-mask entries at 1.
#[allow(clippy::too_many_arguments)]
pub fn prune_event<T: Scalar, R: Rng + ?Sized>(
    weights: &mut [MaskedTensor<T>],
    edges: &mut SoftMask<T>,
    features: &mut SoftMask<T>,
    t: usize,
    schedules: &KindSchedules,
    policy: &RegrowthPolicy,
    scope: PruneScope,
    grads: &GradBundle<T>,
    rng: &mut R,
) -> Result<EventOutcome> {
    if !schedules.is_event(t) {
        return Err(CgpError::InvalidArgument(format!(
            "epoch {t} is not a pruning event"
        )));
    }
    if grads.d_ma.len() != edges.len() || grads.d_mx.len() != features.len() {
        return Err(CgpError::Shape("gradient bundle does not match masks".into()));
    }
    Ok(EventOutcome {
        weights: weight_event(weights, &schedules.weights, t, policy, scope, &grads.d_w, rng)?,
        edges: soft_mask_event(edges, &schedules.edges, t, policy, &grads.d_ma, rng)?,
        features: soft_mask_event(features, &schedules.features, t, policy, &grads.d_mx, rng)?,
    })
}

/// Renders a mask as `index<TAB>active<TAB>value` lines.
pub fn mask_dump<T: Scalar>(active: &[bool], values: &[T]) -> String {
    let mut out = String::with_capacity(active.len() * 16);
    for (i, (&a, v)) in active.iter().zip(values).enumerate() {
        writeln!(out, "{i}\t{}\t{:?}", a as u8, v.as_f64()).unwrap();
    }
    out
}
