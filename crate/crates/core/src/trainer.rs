//! Pairwise BPR training of every recommender parameter.
//!
//! A step samples `(u, i, j)` triples, runs the full-graph forward pass with
//! optional node/message dropout, back-propagates the mean
//! `−ln σ(ŷ_ui − ŷ_uj)` plus L2 on the touched embedding rows and all layer
//! weights, and applies one Adam update per tensor.

use std::collections::BTreeSet;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalSplit, MetricsReport};
use crate::graph::{build_laplacian, InteractionMatrix, NormalizedLaplacian};
use crate::kernel::{adam_step, dot, log_sigmoid, sigmoid, xavier_init, AdamState, DenseMatrix, Evaluation, Objective};
use crate::ngcf::{layer_backward, layer_forward, propagate_all, InitMode, LayerCache, LayerWeights, PropagationConfig, PropagationState};
use crate::scalar::Scalar;
use crate::vgae::{export_embeddings, sample_embeddings, stream_rng, train_vgae, EncoderConfig, EncoderMode};

const STREAM_WEIGHTS: u64 = 3;
const STREAM_TRAIN: u64 = 4;
const STREAM_EMBED: u64 = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub reg_lambda: f64,
    pub node_dropout: f64,
    pub msg_dropout: f64,
    pub seed: u64,
    /// Evaluate on the held-out split every this many epochs; 0 disables.
    pub eval_every: usize,
    pub k: usize,
    pub negatives_per_positive: usize,
    /// Stop after this many evaluations without a recall improvement.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 1024,
            epochs: 400,
            lr: 1e-4,
            reg_lambda: 1e-5,
            node_dropout: 0.1,
            msg_dropout: 0.1,
            seed: 0,
            eval_every: 10,
            k: 20,
            negatives_per_positive: 1,
            patience: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        for (name, p) in [("node dropout", self.node_dropout), ("message dropout", self.msg_dropout)] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("{name} {p} outside [0, 1)")));
            }
        }
        if !(self.lr >= 0.0) || !(self.reg_lambda >= 0.0) {
            return Err(Error::Config("learning rate and regularisation must be non-negative".into()));
        }
        if self.k == 0 || self.negatives_per_positive == 0 {
            return Err(Error::Config("k and negatives per positive must be at least 1".into()));
        }
        Ok(())
    }
}

/// One pairwise training example: `u` prefers observed `i` over unobserved `j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BprTriple {
    pub u: usize,
    pub i: usize,
    pub j: usize,
}

/// Uniform triple sampler over users that have at least one positive and
/// one negative item.
#[derive(Debug, Clone)]
pub struct BprSampler<'a> {
    r: &'a InteractionMatrix,
    eligible: Vec<usize>,
}

impl<'a> BprSampler<'a> {
    pub fn new(r: &'a InteractionMatrix) -> Result<Self> {
        let eligible: Vec<usize> = (0..r.n_users())
            .filter(|&u| {
                let d = r.items_of(u).len();
                d > 0 && d < r.n_items()
            })
            .collect();
        if eligible.is_empty() {
            return Err(Error::NoNegatives(
                "no user has both an observed and an unobserved item".into(),
            ));
        }
        Ok(Self { r, eligible })
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, negatives: usize, rng: &mut R) -> Vec<BprTriple> {
        let mut out = Vec::with_capacity(batch_size * negatives);
        for _ in 0..batch_size {
            let u = self.eligible[rng.random_range(0..self.eligible.len())];
            let items = self.r.items_of(u);
            let i = items[rng.random_range(0..items.len())];
            for _ in 0..negatives {
                let j = loop {
                    let j = rng.random_range(0..self.r.n_items());
                    if !self.r.contains(u, j) {
                        break j;
                    }
                };
                out.push(BprTriple { u, i, j });
            }
        }
        out
    }
}

pub fn sample_bpr_batch<R: Rng + ?Sized>(
    r: &InteractionMatrix,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<BprTriple>> {
    Ok(BprSampler::new(r)?.sample(batch_size, 1, rng))
}

/// Trainable parameters with their Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub z0: DenseMatrix<T>,
    pub layer_weights: Vec<LayerWeights<T>>,
    /// One state per tensor, in [`ModelParams::tensors`] order.
    pub adam: Vec<AdamState<T>>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn new(z0: DenseMatrix<T>, layer_weights: Vec<LayerWeights<T>>) -> Self {
        let mut params = Self {
            z0,
            layer_weights,
            adam: Vec::new(),
        };
        params.adam = params.tensors().into_iter().map(AdamState::for_param).collect();
        params
    }

    /// Glorot-initialised layer weights on top of the given layer-0 embeddings.
    pub fn init<R: Rng + ?Sized>(z0: DenseMatrix<T>, layer_dims: &[usize], rng: &mut R) -> Self {
        let mut d_in = z0.cols();
        let mut layers = Vec::with_capacity(layer_dims.len());
        for &d in layer_dims {
            layers.push(LayerWeights {
                w1: xavier_init(d_in, d, rng),
                w2: xavier_init(d_in, d, rng),
            });
            d_in = d;
        }
        Self::new(z0, layers)
    }

    pub fn tensors(&self) -> Vec<&DenseMatrix<T>> {
        let mut v = vec![&self.z0];
        for lw in &self.layer_weights {
            v.push(&lw.w1);
            v.push(&lw.w2);
        }
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut DenseMatrix<T>> {
        let mut v = vec![&mut self.z0];
        for lw in &mut self.layer_weights {
            v.push(&mut lw.w1);
            v.push(&mut lw.w2);
        }
        v
    }

    pub fn tensor_names(&self) -> Vec<String> {
        let mut v = vec!["z0".to_string()];
        for l in 0..self.layer_weights.len() {
            v.push(format!("layer{}.w1", l + 1));
            v.push(format!("layer{}.w2", l + 1));
        }
        v
    }

    pub fn flatten(&self) -> Vec<T> {
        self.tensors().into_iter().flat_map(|m| m.data().iter().copied()).collect()
    }

    pub fn assign(&mut self, flat: &[T]) {
        let mut offset = 0;
        for m in self.tensors_mut() {
            let len = m.data().len();
            m.data_mut().copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
    }

    pub fn weights_squared_norm(&self) -> T {
        self.layer_weights
            .iter()
            .map(|lw| lw.w1.squared_norm() + lw.w2.squared_norm())
            .sum()
    }
}

/// Gradients shaped like [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads<T> {
    pub z0: DenseMatrix<T>,
    pub layer_weights: Vec<LayerWeights<T>>,
}

impl<T: Scalar> ParamGrads<T> {
    pub fn tensors(&self) -> Vec<&DenseMatrix<T>> {
        let mut v = vec![&self.z0];
        for lw in &self.layer_weights {
            v.push(&lw.w1);
            v.push(&lw.w2);
        }
        v
    }

    pub fn flatten(&self) -> Vec<T> {
        self.tensors().into_iter().flat_map(|m| m.data().iter().copied()).collect()
    }
}

/// A trained (or freshly initialised) recommender.
#[derive(Debug, Clone, PartialEq)]
pub struct Recommender<T> {
    pub params: ModelParams<T>,
    pub n_users: usize,
    pub n_items: usize,
    pub leaky_slope: f64,
}

impl<T: Scalar> Recommender<T> {
    /// Dropout-free forward pass.
    pub fn propagate(&self, lap: &NormalizedLaplacian<T>) -> Result<PropagationState<T>> {
        propagate_all(&self.params.z0, &self.params.layer_weights, lap, T::of(self.leaky_slope))
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        self.params.layer_weights.iter().map(LayerWeights::d_out).collect()
    }
}

/// Mean `−ln σ(ŷ_ui − ŷ_uj)` over the batch, read off a propagated state.
pub fn bpr_ranking_loss<T: Scalar>(state: &PropagationState<T>, batch: &[BprTriple]) -> Result<T> {
    if batch.is_empty() {
        return Err(Error::Empty("BPR batch".into()));
    }
    let mut total = T::zero();
    for t in batch {
        let e_u = state.user_repr(t.u);
        let x = dot(e_u, state.item_repr(t.i)) - dot(e_u, state.item_repr(t.j));
        total -= log_sigmoid(x);
    }
    Ok(total / T::of(batch.len() as f64))
}

#[derive(Debug, Clone)]
pub struct BprLoss<T> {
    pub loss: T,
    pub ranking: T,
    pub regularization: T,
    pub grads: ParamGrads<T>,
    pub min_preactivation: T,
}

/// Embedding rows referenced by a batch: users and both items of each triple.
pub fn touched_rows(batch: &[BprTriple], n_users: usize) -> BTreeSet<usize> {
    let mut rows = BTreeSet::new();
    for t in batch {
        rows.insert(t.u);
        rows.insert(n_users + t.i);
        rows.insert(n_users + t.j);
    }
    rows
}

/// `λ (Σ_{r ∈ rows} ‖z0_r‖² + Σ_l ‖W₁‖² + ‖W₂‖²)` and its gradient.
pub fn regularization_loss<T: Scalar>(
    params: &ModelParams<T>,
    rows: &BTreeSet<usize>,
    reg_lambda: f64,
) -> (T, ParamGrads<T>) {
    let lambda = T::of(reg_lambda);
    let two_lambda = T::of(2.0 * reg_lambda);
    let mut z0 = DenseMatrix::zeros(params.z0.rows(), params.z0.cols());
    let mut norm = T::zero();
    for &r in rows {
        for (g, &x) in z0.row_mut(r).iter_mut().zip(params.z0.row(r)) {
            norm += x * x;
            *g = two_lambda * x;
        }
    }
    norm += params.weights_squared_norm();
    let layer_weights = params
        .layer_weights
        .iter()
        .map(|lw| LayerWeights {
            w1: lw.w1.scale(two_lambda),
            w2: lw.w2.scale(two_lambda),
        })
        .collect();
    (lambda * norm, ParamGrads { z0, layer_weights })
}

/// Loss and analytic gradients of the full objective for one batch.
///
/// `masks`, when given, holds one message-dropout mask per layer.
pub fn bpr_loss<T: Scalar>(
    params: &ModelParams<T>,
    lap: &NormalizedLaplacian<T>,
    batch: &[BprTriple],
    reg_lambda: f64,
    leaky_slope: f64,
    masks: Option<&[DenseMatrix<T>]>,
) -> Result<BprLoss<T>> {
    if batch.is_empty() {
        return Err(Error::Empty("BPR batch".into()));
    }
    let slope = T::of(leaky_slope);
    let n_users = lap.n_users;

    let mut layers = vec![params.z0.clone()];
    let mut caches: Vec<LayerCache<T>> = Vec::with_capacity(params.layer_weights.len());
    for (l, lw) in params.layer_weights.iter().enumerate() {
        let mask = masks.map(|m| &m[l]);
        let (out, cache) = layer_forward(layers.last().expect("non-empty"), lw, lap, slope, mask)?;
        layers.push(out);
        caches.push(cache);
    }
    let min_preactivation = caches
        .iter()
        .flat_map(|c| c.pre.data().iter())
        .fold(T::infinity(), |a, &x| a.min(x.abs()));
    let state = PropagationState::new(layers, n_users)?;
    let e = &state.concatenated;

    let inv_batch = T::one() / T::of(batch.len() as f64);
    let mut ranking = T::zero();
    let mut g_e = DenseMatrix::zeros(e.rows(), e.cols());
    for t in batch {
        let (ru, ri, rj) = (t.u, n_users + t.i, n_users + t.j);
        let x = dot(e.row(ru), e.row(ri)) - dot(e.row(ru), e.row(rj));
        ranking -= log_sigmoid(x);
        let c = -sigmoid(-x) * inv_batch;
        for k in 0..e.cols() {
            let (eu, ei, ej) = (e.get(ru, k), e.get(ri, k), e.get(rj, k));
            g_e.row_mut(ru)[k] += c * (ei - ej);
            g_e.row_mut(ri)[k] += c * eu;
            g_e.row_mut(rj)[k] -= c * eu;
        }
    }
    ranking = ranking * inv_batch;

    let mut offset = 0;
    let mut g_layers = Vec::with_capacity(state.layers.len());
    for z in &state.layers {
        g_layers.push(g_e.column_block(offset, z.cols())?);
        offset += z.cols();
    }
    let mut layer_grads = vec![LayerWeights::zeros(0, 0); params.layer_weights.len()];
    for l in (0..params.layer_weights.len()).rev() {
        let g_out = g_layers[l + 1].clone();
        let (d_z, d_w1, d_w2) = layer_backward(
            &state.layers[l],
            &params.layer_weights[l],
            lap,
            slope,
            &caches[l],
            &g_out,
        )?;
        g_layers[l].add_assign(&d_z)?;
        layer_grads[l] = LayerWeights { w1: d_w1, w2: d_w2 };
    }

    let (regularization, reg_grads) = regularization_loss(params, &touched_rows(batch, n_users), reg_lambda);
    let mut z0 = g_layers.swap_remove(0);
    z0.add_assign(&reg_grads.z0)?;
    for (g, r) in layer_grads.iter_mut().zip(&reg_grads.layer_weights) {
        g.w1.add_assign(&r.w1)?;
        g.w2.add_assign(&r.w2)?;
    }
    Ok(BprLoss {
        loss: ranking + regularization,
        ranking,
        regularization,
        grads: ParamGrads {
            z0,
            layer_weights: layer_grads,
        },
        min_preactivation,
    })
}

/// BPR objective over the flattened parameters for a fixed batch.
pub struct BprObjective<T> {
    pub params: ModelParams<T>,
    pub lap: NormalizedLaplacian<T>,
    pub batch: Vec<BprTriple>,
    pub reg_lambda: f64,
    pub leaky_slope: f64,
}

impl<T: Scalar> Objective<T> for BprObjective<T> {
    fn params(&self) -> Vec<T> {
        self.params.flatten()
    }

    fn set_params(&mut self, params: &[T]) {
        self.params.assign(params);
    }

    fn evaluate(&mut self) -> Result<Evaluation<T>> {
        let out = bpr_loss(&self.params, &self.lap, &self.batch, self.reg_lambda, self.leaky_slope, None)?;
        Ok(Evaluation {
            loss: out.loss,
            gradient: out.grads.flatten(),
            min_preactivation: Some(out.min_preactivation),
        })
    }
}

/// Per-epoch telemetry.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// Completed epochs, starting at 1.
    pub epoch: usize,
    pub loss: f64,
    pub recall: Option<f64>,
    pub ndcg: Option<f64>,
    pub seconds: f64,
    pub z0_norm: f64,
}

pub struct TrainOutcome<T> {
    pub model: Recommender<T>,
    pub history: Vec<EpochRecord>,
    pub last_report: Option<MetricsReport>,
}

fn message_masks<T: Scalar, R: Rng + ?Sized>(
    n_nodes: usize,
    dims: &[usize],
    rate: f64,
    rng: &mut R,
) -> Vec<DenseMatrix<T>> {
    let keep = T::of(1.0 / (1.0 - rate));
    dims.iter()
        .map(|&d| DenseMatrix::from_fn(n_nodes, d, |_, _| if rng.random_bool(rate) { T::zero() } else { keep }))
        .collect()
}

/// Mini-batch Adam training from the given layer-0 embeddings.
pub fn train<T: Scalar>(
    r: &InteractionMatrix,
    z0_init: DenseMatrix<T>,
    prop: &PropagationConfig,
    cfg: &TrainConfig,
    eval_split: Option<&EvalSplit>,
) -> Result<TrainOutcome<T>> {
    prop.validate()?;
    cfg.validate()?;
    if z0_init.rows() != r.n_nodes() {
        return Err(Error::Dimension {
            op: "train (initial embeddings)",
            lhs: z0_init.shape(),
            rhs: (r.n_nodes(), z0_init.cols()),
        });
    }
    let lap = build_laplacian::<T>(r);
    let sampler = BprSampler::new(r)?;
    let mut weight_rng = stream_rng(cfg.seed, STREAM_WEIGHTS);
    let mut rng: ChaCha8Rng = stream_rng(cfg.seed, STREAM_TRAIN);
    let mut model = Recommender {
        params: ModelParams::init(z0_init, &prop.layer_dims, &mut weight_rng),
        n_users: r.n_users(),
        n_items: r.n_items(),
        leaky_slope: prop.leaky_slope,
    };

    let n_batches = r.nnz().div_ceil(cfg.batch_size).max(1);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut last_report = None;
    let mut best_recall = f64::NEG_INFINITY;
    let mut stale = 0usize;
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let epoch_lap = if cfg.node_dropout > 0.0 {
            let dropped: Vec<bool> = (0..r.n_nodes()).map(|_| rng.random_bool(cfg.node_dropout)).collect();
            lap.with_node_dropout(&dropped, cfg.node_dropout)?
        } else {
            lap.clone()
        };

        let mut epoch_loss = 0.0;
        for b in 0..n_batches {
            let batch = sampler.sample(cfg.batch_size, cfg.negatives_per_positive, &mut rng);
            let masks = (cfg.msg_dropout > 0.0)
                .then(|| message_masks::<T, _>(r.n_nodes(), &prop.layer_dims, cfg.msg_dropout, &mut rng));
            let step = bpr_loss(
                &model.params,
                &epoch_lap,
                &batch,
                cfg.reg_lambda,
                prop.leaky_slope,
                masks.as_deref(),
            )?;
            if !step.loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "BPR loss {} at epoch {epoch}, batch {b} (ranking {}, regularisation {})",
                    step.loss, step.ranking, step.regularization
                )));
            }
            epoch_loss += step.loss.as_f64();
            let params = &mut model.params;
            let mut adam = std::mem::take(&mut params.adam);
            for ((param, grad), state) in params.tensors_mut().into_iter().zip(step.grads.tensors()).zip(adam.iter_mut()) {
                adam_step(param, grad, state, cfg.lr)?;
            }
            params.adam = adam;
        }

        let mut record = EpochRecord {
            epoch,
            loss: epoch_loss / n_batches as f64,
            recall: None,
            ndcg: None,
            seconds: 0.0,
            z0_norm: model.params.z0.squared_norm().as_f64().sqrt(),
        };
        let mut stop = false;
        if let Some(split) = eval_split {
            if cfg.eval_every > 0 && epoch % cfg.eval_every == 0 {
                let report = evaluate(&model, &lap, split, cfg.k)?;
                record.recall = Some(report.recall);
                record.ndcg = Some(report.ndcg);
                if report.recall > best_recall {
                    best_recall = report.recall;
                    stale = 0;
                } else {
                    stale += 1;
                    stop = cfg.patience.is_some_and(|p| stale >= p);
                }
                last_report = Some(report);
            }
        }
        record.seconds = started.elapsed().as_secs_f64();
        history.push(record);
        if stop {
            break;
        }
    }
    Ok(TrainOutcome {
        model,
        history,
        last_report,
    })
}

/// Produces layer-0 embeddings for the requested initialisation mode.
///
/// `Variational` and `Gae` pre-train the auto-encoder with `encoder`
/// (its latent width is forced to `embed_size`); `Xavier` draws Glorot noise.
pub fn initial_embeddings<T: Scalar>(
    r: &InteractionMatrix,
    mode: InitMode,
    embed_size: usize,
    encoder: &EncoderConfig,
    sample: bool,
    seed: u64,
) -> Result<DenseMatrix<T>> {
    let mut rng = stream_rng(seed, STREAM_EMBED);
    let encoder_mode = match mode {
        InitMode::Xavier => return Ok(xavier_init(r.n_nodes(), embed_size, &mut rng)),
        InitMode::Variational => EncoderMode::Variational,
        InitMode::Gae => EncoderMode::Deterministic,
    };
    let cfg = EncoderConfig {
        latent_dim: embed_size,
        mode: encoder_mode,
        ..encoder.clone()
    };
    let out = train_vgae::<T>(r, &cfg)?;
    if sample {
        sample_embeddings(&out.embeddings, &mut rng)
    } else {
        Ok(export_embeddings(&out.embeddings))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperGrid {
    pub lrs: Vec<f64>,
    pub regs: Vec<f64>,
    pub node_dropouts: Vec<f64>,
}

impl HyperGrid {
    pub fn len(&self) -> usize {
        self.lrs.len() * self.regs.len() * self.node_dropouts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cells in lr-major, then regularisation, then node-dropout order.
    pub fn cells(&self) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::with_capacity(self.len());
        for &lr in &self.lrs {
            for &reg in &self.regs {
                for &nd in &self.node_dropouts {
                    out.push((lr, reg, nd));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub lr: f64,
    pub reg_lambda: f64,
    pub node_dropout: f64,
    pub recall: Option<f64>,
    pub ndcg: Option<f64>,
    pub final_loss: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct GridResult {
    pub best: TrainConfig,
    pub best_index: usize,
    pub rows: Vec<GridRow>,
}

/// Trains every grid cell from the same initial embeddings and keeps the one
/// with the highest validation recall (earliest cell on ties).
pub fn grid_search<T: Scalar>(
    r: &InteractionMatrix,
    z0_init: &DenseMatrix<T>,
    prop: &PropagationConfig,
    template: &TrainConfig,
    grid: &HyperGrid,
    validation: &EvalSplit,
) -> Result<GridResult> {
    if grid.is_empty() {
        return Err(Error::Config("hyper-parameter grid is empty".into()));
    }
    let lap = build_laplacian::<T>(r);
    let mut rows = Vec::with_capacity(grid.len());
    let mut best: Option<(usize, f64)> = None;
    for (idx, (lr, reg, nd)) in grid.cells().into_iter().enumerate() {
        let cfg = TrainConfig {
            lr,
            reg_lambda: reg,
            node_dropout: nd,
            eval_every: 0,
            patience: None,
            ..template.clone()
        };
        let mut row = GridRow {
            lr,
            reg_lambda: reg,
            node_dropout: nd,
            recall: None,
            ndcg: None,
            final_loss: None,
            error: None,
        };
        let outcome = train(r, z0_init.clone(), prop, &cfg, None)
            .and_then(|o| {
                let report = evaluate(&o.model, &lap, validation, template.k)?;
                Ok((o, report))
            });
        match outcome {
            Ok((o, report)) if report.recall.is_finite() => {
                row.recall = Some(report.recall);
                row.ndcg = Some(report.ndcg);
                row.final_loss = o.history.last().map(|h| h.loss);
                if best.is_none_or(|(_, b)| report.recall > b) {
                    best = Some((idx, report.recall));
                }
            }
            Ok((o, _)) => {
                row.final_loss = o.history.last().map(|h| h.loss);
                row.error = Some("non-finite validation recall".into());
            }
            Err(e) => row.error = Some(e.to_string()),
        }
        rows.push(row);
    }
    let (best_index, _) = best.ok_or_else(|| Error::NonFinite("every grid cell failed to train".into()))?;
    let chosen = &rows[best_index];
    Ok(GridResult {
        best: TrainConfig {
            lr: chosen.lr,
            reg_lambda: chosen.reg_lambda,
            node_dropout: chosen.node_dropout,
            ..template.clone()
        },
        best_index,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::grad_check;
    use crate::vgae::stream_rng;

    fn toy() -> InteractionMatrix {
        InteractionMatrix::from_pairs(
            5,
            5,
            [(0, 0), (0, 1), (1, 1), (1, 2), (2, 2), (2, 3), (3, 3), (3, 4), (4, 4), (4, 0)],
        )
        .unwrap()
    }

    fn toy_objective(layers: &[usize], seed: u64, reg: f64) -> BprObjective<f64> {
        let r = toy();
        let mut rng = stream_rng(seed, 0);
        let z0 = xavier_init(r.n_nodes(), 3, &mut rng);
        let params = ModelParams::init(z0, layers, &mut rng);
        let batch = BprSampler::new(&r).unwrap().sample(6, 1, &mut rng);
        BprObjective {
            params,
            lap: build_laplacian(&r),
            batch,
            reg_lambda: reg,
            leaky_slope: 0.2,
        }
    }

    #[test]
    fn single_positive_is_always_chosen() {
        let r = InteractionMatrix::from_pairs(1, 4, [(0, 2)]).unwrap();
        let mut rng = stream_rng(1, 0);
        let batch = sample_bpr_batch(&r, 200, &mut rng).unwrap();
        assert!(batch.iter().all(|t| t.i == 2 && t.j != 2));
    }

    #[test]
    fn positives_are_uniform() {
        let r = InteractionMatrix::from_pairs(3, 6, [(0, 0), (0, 1), (1, 2), (1, 3), (2, 4), (2, 5)]).unwrap();
        let mut rng = stream_rng(2, 0);
        let batch = sample_bpr_batch(&r, 100_000, &mut rng).unwrap();
        let first = batch.iter().filter(|t| t.i % 2 == 0).count() as f64 / batch.len() as f64;
        assert!((first - 0.5).abs() <= 0.02, "{first}");
        for t in &batch {
            assert!(r.contains(t.u, t.i));
            assert!(!r.contains(t.u, t.j));
        }
    }

    #[test]
    fn saturated_users_are_skipped() {
        let r = InteractionMatrix::from_pairs(2, 2, [(0, 0), (0, 1), (1, 0)]).unwrap();
        let batch = sample_bpr_batch(&r, 50, &mut stream_rng(3, 0)).unwrap();
        assert!(batch.iter().all(|t| t.u == 1 && t.j == 1));
        let full = InteractionMatrix::from_pairs(1, 2, [(0, 0), (0, 1)]).unwrap();
        assert!(matches!(sample_bpr_batch(&full, 1, &mut stream_rng(3, 0)), Err(Error::NoNegatives(_))));
    }

    #[test]
    fn ranking_loss_reference_values() {
        // Two items with identical representations give ŷ_ui = ŷ_uj.
        let z = DenseMatrix::from_vec(3, 2, vec![1.0, 2.0, 0.5, 0.5, 0.5, 0.5]).unwrap();
        let state = PropagationState::new(vec![z], 1).unwrap();
        let batch = [BprTriple { u: 0, i: 0, j: 1 }];
        let loss = bpr_ranking_loss(&state, &batch).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);

        let z = DenseMatrix::from_vec(3, 1, vec![1.0, 25.0, -25.0]).unwrap();
        let state = PropagationState::new(vec![z], 1).unwrap();
        assert!(bpr_ranking_loss(&state, &batch).unwrap() <= 1e-20);
        assert!(bpr_ranking_loss(&state, &[]).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for (layers, seed) in [(vec![3], 1), (vec![3, 2], 2), (vec![2, 4], 3)] {
            let mut obj = toy_objective(&layers, seed, 0.1);
            let report = grad_check(&mut obj, seed).unwrap();
            assert!(report.max_relative_error <= 1e-5, "{layers:?}: {report:?}");
        }
    }

    #[test]
    fn gradient_with_dropout_masks() {
        let obj = toy_objective(&[3, 3], 4, 0.0);
        let mut rng = stream_rng(4, 9);
        let masks: Vec<DenseMatrix<f64>> = message_masks(10, &[3, 3], 0.3, &mut rng);
        let base = bpr_loss(&obj.params, &obj.lap, &obj.batch, 0.0, 0.2, Some(&masks)).unwrap();
        let flat = obj.params.flatten();
        let grad = base.grads.flatten();
        let h = 1e-6;
        for k in (0..flat.len()).step_by(7) {
            let mut p = obj.params.clone();
            let mut f = flat.clone();
            f[k] += h;
            p.assign(&f);
            let plus = bpr_loss(&p, &obj.lap, &obj.batch, 0.0, 0.2, Some(&masks)).unwrap().loss;
            f[k] -= 2.0 * h;
            p.assign(&f);
            let minus = bpr_loss(&p, &obj.lap, &obj.batch, 0.0, 0.2, Some(&masks)).unwrap().loss;
            let fd = (plus - minus) / (2.0 * h);
            assert!((fd - grad[k]).abs() <= 1e-5 * fd.abs().max(1.0), "coord {k}: {fd} vs {}", grad[k]);
        }
    }

    #[test]
    fn untouched_rows_get_zero_gradient() {
        // Two disconnected components: users {0,1} × items {0,1} and users {2,3} × items {2,3}.
        let r = InteractionMatrix::from_pairs(4, 4, [(0, 0), (0, 1), (1, 0), (2, 2), (2, 3), (3, 3)]).unwrap();
        let mut rng = stream_rng(5, 0);
        let params = ModelParams::init(xavier_init::<f64, _>(8, 3, &mut rng), &[3, 3], &mut rng);
        let batch = [BprTriple { u: 0, i: 0, j: 1 }, BprTriple { u: 1, i: 0, j: 1 }];
        let out = bpr_loss(&params, &build_laplacian(&r), &batch, 0.5, 0.2, None).unwrap();
        for row in [2, 3, 6, 7] {
            assert!(out.grads.z0.row(row).iter().all(|&g| g == 0.0), "row {row}");
        }
        assert!(out.grads.z0.row(0).iter().any(|&g| g != 0.0));
        for (g, p) in out.grads.tensors().iter().zip(params.tensors()) {
            assert_eq!(g.shape(), p.shape());
        }
    }

    #[test]
    fn regularisation_alone_shrinks_parameters() {
        let mut rng = stream_rng(6, 0);
        let mut params = ModelParams::init(xavier_init::<f64, _>(6, 4, &mut rng), &[4, 4], &mut rng);
        let rows: BTreeSet<usize> = (0..6).collect();
        let norm = |p: &ModelParams<f64>| p.flatten().iter().map(|x| x * x).sum::<f64>();
        let start = norm(&params);
        for _ in 0..200 {
            let (_, grads) = regularization_loss(&params, &rows, 0.5);
            let mut adam = std::mem::take(&mut params.adam);
            for ((p, g), s) in params.tensors_mut().into_iter().zip(grads.tensors()).zip(adam.iter_mut()) {
                adam_step(p, g, s, 0.01).unwrap();
            }
            params.adam = adam;
        }
        assert!(norm(&params) < 0.05 * start, "{} vs {start}", norm(&params));
    }

    fn two_block(n: usize, seed: u64) -> InteractionMatrix {
        let mut rng = stream_rng(seed, 0);
        let half = n / 2;
        let mut pairs = Vec::new();
        for u in 0..n {
            for i in 0..n {
                let p = if (u < half) == (i < half) { 0.4 } else { 0.02 };
                if rng.random_bool(p) {
                    pairs.push((u, i));
                }
            }
        }
        InteractionMatrix::from_pairs(n, n, pairs).unwrap()
    }

    fn small_cfg(seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: 64,
            epochs: 2,
            lr: 0.01,
            reg_lambda: 1e-4,
            node_dropout: 0.1,
            msg_dropout: 0.1,
            seed,
            eval_every: 0,
            ..Default::default()
        }
    }

    #[test]
    fn training_is_deterministic() {
        let r = two_block(20, 1);
        let prop = PropagationConfig {
            layer_dims: vec![8, 8],
            ..Default::default()
        };
        let z0 = xavier_init::<f64, _>(40, 8, &mut stream_rng(1, 1));
        let a = train(&r, z0.clone(), &prop, &small_cfg(3), None).unwrap();
        let b = train(&r, z0, &prop, &small_cfg(3), None).unwrap();
        let losses = |o: &TrainOutcome<f64>| o.history.iter().map(|h| h.loss).collect::<Vec<_>>();
        assert_eq!(losses(&a), losses(&b));
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn strong_regularisation_shrinks_embeddings() {
        let r = two_block(20, 2);
        let prop = PropagationConfig {
            layer_dims: vec![8],
            ..Default::default()
        };
        let z0 = xavier_init::<f64, _>(40, 8, &mut stream_rng(2, 1));
        let cfg = TrainConfig {
            reg_lambda: 1e3,
            lr: 1e-3,
            epochs: 6,
            batch_size: 32,
            ..small_cfg(4)
        };
        let start = z0.squared_norm().sqrt();
        let out = train(&r, z0, &prop, &cfg, None).unwrap();
        let mut prev = start;
        for h in &out.history {
            assert!(h.z0_norm < prev, "{} !< {prev}", h.z0_norm);
            prev = h.z0_norm;
        }
    }

    #[test]
    fn training_beats_untrained_loss() {
        let r = two_block(40, 3);
        let prop = PropagationConfig {
            layer_dims: vec![16, 16],
            ..Default::default()
        };
        let z0 = xavier_init::<f64, _>(80, 16, &mut stream_rng(3, 1));
        let cfg = TrainConfig {
            epochs: 50,
            reg_lambda: 1e-5,
            ..small_cfg(5)
        };
        let out = train(&r, z0, &prop, &cfg, None).unwrap();
        let last = out.history.last().unwrap().loss;
        assert!(last < std::f64::consts::LN_2, "final loss {last}");
    }

    #[test]
    fn one_cell_grid_equals_plain_training() {
        let r = two_block(20, 4);
        let split = EvalSplit::new(r.clone(), vec![vec![]; 20]).unwrap();
        let mut test = vec![Vec::new(); 20];
        for u in 0..20 {
            if let Some(&i) = (0..20).find(|&i| !r.contains(u, i)).as_ref() {
                test[u].push(i);
            }
        }
        let validation = EvalSplit::new(r.clone(), test).unwrap();
        let _ = split;
        let prop = PropagationConfig {
            layer_dims: vec![4],
            ..Default::default()
        };
        let z0 = xavier_init::<f64, _>(40, 4, &mut stream_rng(4, 1));
        let template = small_cfg(6);
        let grid = HyperGrid {
            lrs: vec![template.lr],
            regs: vec![template.reg_lambda],
            node_dropouts: vec![template.node_dropout],
        };
        let result = grid_search(&r, &z0, &prop, &template, &grid, &validation).unwrap();
        assert_eq!(result.rows.len(), 1);
        let plain = train(&r, z0, &prop, &template, None).unwrap();
        let report = evaluate(&plain.model, &build_laplacian(&r), &validation, template.k).unwrap();
        assert_eq!(result.rows[0].recall, Some(report.recall));
        assert_eq!(result.best, template);
        assert!(grid_search(&r, &xavier_init::<f64, _>(40, 4, &mut stream_rng(0, 0)), &prop, &template, &HyperGrid { lrs: vec![], regs: vec![1.0], node_dropouts: vec![0.1] }, &validation).is_err());
    }
}
