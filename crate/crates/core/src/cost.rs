//! Analytic multiply-accumulate counts for dense and pruned models.
//!
//! Only matrix products are counted; activations and softmax are free.
//! Unstructured weight sparsity is assumed to scale transform cost
//! linearly. One MAC is two FLOPs.

use serde::{Deserialize, Serialize};

use crate::model::Arch;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerCost {
    /// `(active arcs + n) · d_out` per propagation.
    pub aggregation_macs: f64,
    /// `n · d_in · d_out · weight density`.
    pub transform_macs: f64,
}

impl LayerCost {
    pub fn total(&self) -> f64 {
        self.aggregation_macs + self.transform_macs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub layers: Vec<LayerCost>,
    pub total_macs: f64,
    pub total_flops: f64,
    /// Feature entries, active weights, adjacency entries and per-layer
    /// activations held during inference.
    pub memory_elements: f64,
}

/// Inference cost of one forward pass.
///
/// `weight_density` holds the active fraction of each weight layer. Feature
/// pruning shrinks only the first layer's input width.
pub fn inference_cost(
    arch: Arch,
    n: usize,
    active_arcs: usize,
    active_features: usize,
    classes: usize,
    weight_density: &[f64],
) -> CostBreakdown {
    let n = n as f64;
    let adj = (active_arcs as f64) + n;
    let d = active_features as f64;
    let c = classes as f64;
    let density = |l: usize| weight_density.get(l).copied().unwrap_or(1.0);

    // (d_in, d_out, propagations) per layer
    let dims: Vec<(f64, f64, f64)> = match arch {
        Arch::Gcn { hidden } => {
            let h = hidden as f64;
            vec![(d, h, 1.0), (h, c, 1.0)]
        }
        Arch::Sgc { hops } => vec![(d, c, hops as f64)],
    };

    let mut layers = Vec::with_capacity(dims.len());
    let mut memory = n * d + adj;
    for (l, &(d_in, d_out, props)) in dims.iter().enumerate() {
        let weights = d_in * d_out * density(l);
        layers.push(LayerCost {
            aggregation_macs: props * adj * d_out,
            transform_macs: n * weights,
        });
        memory += weights + n * d_out;
    }
    let total_macs = layers.iter().map(LayerCost::total).sum::<f64>();
    CostBreakdown {
        layers,
        total_macs,
        total_flops: 2.0 * total_macs,
        memory_elements: memory,
    }
}

/// Forward plus backward counted as three forward passes.
pub const TRAINING_PASS_FACTOR: f64 = 3.0;

/// Training FLOPs for `epochs` epochs at a fixed sparsity state.
pub fn training_cost(inference: &CostBreakdown, epochs: usize) -> f64 {
    TRAINING_PASS_FACTOR * inference.total_flops * epochs as f64
}

/// Training FLOPs summed over per-epoch sparsity states.
pub fn training_cost_trajectory<'a>(per_epoch: impl IntoIterator<Item = &'a CostBreakdown>) -> f64 {
    per_epoch
        .into_iter()
        .map(|c| TRAINING_PASS_FACTOR * c.total_flops)
        .sum()
}
