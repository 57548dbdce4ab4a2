//! Embedding propagation over the user–item graph, final representation
//! assembly and inner-product preference scores.
//!
//! Each layer computes
//!
//! ```text
//! Z⁽ˡ⁾ = LeakyReLU( (L + I) Z⁽ˡ⁻¹⁾ W₁ + (L Z⁽ˡ⁻¹⁾ ⊙ Z⁽ˡ⁻¹⁾) W₂ )
//! ```
//!
//! which is the matrix form of summing a self message `z_u W₁` with
//! decay-weighted neighbour messages `p_ui (z_i W₁ + (z_i ⊙ z_u) W₂)`.
//! [`propagate_layer_per_edge`] spells out the per-edge form and is kept as an
//! independent reference for the matrix path.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::graph::{InteractionMatrix, NormalizedLaplacian};
use crate::kernel::{dot, leaky_relu_grad, leaky_relu_scalar, DenseMatrix};
use crate::scalar::Scalar;

/// Source of the layer-0 embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InitMode {
    /// Posterior means of the variational graph auto-encoder.
    Variational,
    /// Deterministic graph auto-encoder (no KL term).
    Gae,
    /// Glorot-uniform random embeddings.
    Xavier,
}

impl fmt::Display for InitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitMode::Variational => "variational",
            InitMode::Gae => "gae",
            InitMode::Xavier => "xavier",
        })
    }
}

impl FromStr for InitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "variational" | "vgae" => Ok(InitMode::Variational),
            "gae" | "deterministic" => Ok(InitMode::Gae),
            "xavier" | "random" => Ok(InitMode::Xavier),
            other => Err(Error::Config(format!("unknown init mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropagationConfig {
    pub layer_dims: Vec<usize>,
    pub leaky_slope: f64,
    pub init_mode: InitMode,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        Self {
            layer_dims: vec![64, 64, 64],
            leaky_slope: crate::kernel::DEFAULT_LEAKY_SLOPE,
            init_mode: InitMode::Variational,
        }
    }
}

impl PropagationConfig {
    pub fn n_layers(&self) -> usize {
        self.layer_dims.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.is_empty() {
            return Err(Error::Config("at least one propagation layer is required".into()));
        }
        if self.layer_dims.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::Config(format!("leaky slope {} outside (0, 1)", self.leaky_slope)));
        }
        Ok(())
    }

    /// Width of the concatenated representation for layer-0 width `d0`.
    pub fn concat_width(&self, d0: usize) -> usize {
        d0 + self.layer_dims.iter().sum::<usize>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights<T> {
    pub w1: DenseMatrix<T>,
    pub w2: DenseMatrix<T>,
}

impl<T: Scalar> LayerWeights<T> {
    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        Self {
            w1: DenseMatrix::zeros(d_in, d_out),
            w2: DenseMatrix::zeros(d_in, d_out),
        }
    }

    pub fn d_in(&self) -> usize {
        self.w1.rows()
    }

    pub fn d_out(&self) -> usize {
        self.w1.cols()
    }
}

/// Layer outputs `Z⁽⁰⁾ … Z⁽ᴸ⁾` and their row-wise concatenation `e*`.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationState<T> {
    pub layers: Vec<DenseMatrix<T>>,
    pub concatenated: DenseMatrix<T>,
    pub n_users: usize,
}

impl<T: Scalar> PropagationState<T> {
    pub fn new(layers: Vec<DenseMatrix<T>>, n_users: usize) -> Result<Self> {
        let refs: Vec<&DenseMatrix<T>> = layers.iter().collect();
        let concatenated = DenseMatrix::hconcat(&refs)?;
        Ok(Self {
            layers,
            concatenated,
            n_users,
        })
    }

    pub fn n_items(&self) -> usize {
        self.concatenated.rows() - self.n_users
    }

    pub fn user_repr(&self, u: usize) -> &[T] {
        self.concatenated.row(u)
    }

    pub fn item_repr(&self, i: usize) -> &[T] {
        self.concatenated.row(self.n_users + i)
    }

    /// Columns of `e*` belonging to layer `l`.
    pub fn layer_block(&self, l: usize) -> Result<DenseMatrix<T>> {
        let start: usize = self.layers[..l].iter().map(DenseMatrix::cols).sum();
        self.concatenated.column_block(start, self.layers[l].cols())
    }
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct LayerCache<T> {
    /// `L Z`
    pub smoothed: DenseMatrix<T>,
    /// `(L + I) Z`
    pub augmented: DenseMatrix<T>,
    /// `L Z ⊙ Z`
    pub interaction: DenseMatrix<T>,
    /// Pre-activation after the optional dropout mask.
    pub pre: DenseMatrix<T>,
    pub mask: Option<DenseMatrix<T>>,
}

fn check_chain<T: Scalar>(z: &DenseMatrix<T>, lw: &LayerWeights<T>, lap: &NormalizedLaplacian<T>) -> Result<()> {
    if z.rows() != lap.n_nodes() {
        return Err(Error::Dimension {
            op: "propagate (nodes)",
            lhs: z.shape(),
            rhs: lap.laplacian.shape(),
        });
    }
    if z.cols() != lw.w1.rows() || lw.w1.shape() != lw.w2.shape() {
        return Err(Error::Dimension {
            op: "propagate (weights)",
            lhs: z.shape(),
            rhs: lw.w1.shape(),
        });
    }
    Ok(())
}

pub(crate) fn layer_forward<T: Scalar>(
    z: &DenseMatrix<T>,
    lw: &LayerWeights<T>,
    lap: &NormalizedLaplacian<T>,
    slope: T,
    mask: Option<&DenseMatrix<T>>,
) -> Result<(DenseMatrix<T>, LayerCache<T>)> {
    check_chain(z, lw, lap)?;
    let smoothed = lap.laplacian.spmm(z)?;
    let augmented = lap.laplacian_plus_identity.spmm(z)?;
    let interaction = smoothed.hadamard(z)?;
    let mut pre = augmented.matmul(&lw.w1)?;
    pre.add_assign(&interaction.matmul(&lw.w2)?)?;
    if let Some(m) = mask {
        pre.hadamard_assign(m)?;
    }
    let out = pre.map(|x| leaky_relu_scalar(x, slope));
    Ok((
        out,
        LayerCache {
            smoothed,
            augmented,
            interaction,
            pre,
            mask: mask.cloned(),
        },
    ))
}

/// Back-propagates `grad_out = ∂loss/∂Z⁽ˡ⁾` through one layer, returning
/// `(∂loss/∂Z⁽ˡ⁻¹⁾, ∂loss/∂W₁, ∂loss/∂W₂)`.
pub(crate) fn layer_backward<T: Scalar>(
    z: &DenseMatrix<T>,
    lw: &LayerWeights<T>,
    lap: &NormalizedLaplacian<T>,
    slope: T,
    cache: &LayerCache<T>,
    grad_out: &DenseMatrix<T>,
) -> Result<(DenseMatrix<T>, DenseMatrix<T>, DenseMatrix<T>)> {
    let mut g_pre = grad_out.clone();
    for (g, &p) in g_pre.data_mut().iter_mut().zip(cache.pre.data()) {
        *g *= leaky_relu_grad(p, slope);
    }
    if let Some(m) = &cache.mask {
        g_pre.hadamard_assign(m)?;
    }
    let d_w1 = cache.augmented.matmul_tn(&g_pre)?;
    let d_w2 = cache.interaction.matmul_tn(&g_pre)?;
    let g_aug = g_pre.matmul_nt(&lw.w1)?;
    let g_int = g_pre.matmul_nt(&lw.w2)?;

    let mut d_z = lap.laplacian_plus_identity.spmm_transpose(&g_aug)?;
    d_z.add_assign(&g_int.hadamard(&cache.smoothed)?)?;
    d_z.add_assign(&lap.laplacian.spmm_transpose(&g_int.hadamard(z)?)?)?;
    Ok((d_z, d_w1, d_w2))
}

/// One propagation layer in matrix form.
pub fn propagate_layer_matrix<T: Scalar>(
    z_prev: &DenseMatrix<T>,
    lw: &LayerWeights<T>,
    lap: &NormalizedLaplacian<T>,
    slope: T,
) -> Result<DenseMatrix<T>> {
    Ok(layer_forward(z_prev, lw, lap, slope, None)?.0)
}

fn row_times<T: Scalar>(v: &[T], w: &DenseMatrix<T>, out: &mut [T], scale: T) {
    for (k, &x) in v.iter().enumerate() {
        let a = scale * x;
        for (o, &b) in out.iter_mut().zip(w.row(k)) {
            *o += a * b;
        }
    }
}

/// One propagation layer built message by message over explicit edges.
///
/// Reference implementation; [`propagate_layer_matrix`] is the fast path.
pub fn propagate_layer_per_edge<T: Scalar>(
    z_prev: &DenseMatrix<T>,
    lw: &LayerWeights<T>,
    graph: &InteractionMatrix,
    slope: T,
) -> Result<DenseMatrix<T>> {
    if z_prev.rows() != graph.n_nodes() || z_prev.cols() != lw.d_in() {
        return Err(Error::Dimension {
            op: "propagate_layer_per_edge",
            lhs: z_prev.shape(),
            rhs: (graph.n_nodes(), lw.d_in()),
        });
    }
    let n = graph.n_users();
    let degrees = graph.node_degrees();
    let mut neighbours: Vec<Vec<usize>> = (0..n)
        .map(|u| graph.items_of(u).iter().map(|&i| n + i).collect())
        .collect();
    neighbours.extend(graph.item_users());

    let d_in = lw.d_in();
    let mut out = DenseMatrix::zeros(graph.n_nodes(), lw.d_out());
    let mut elementwise = vec![T::zero(); d_in];
    for t in 0..graph.n_nodes() {
        let z_t = z_prev.row(t);
        let mut acc = vec![T::zero(); lw.d_out()];
        // self message
        row_times(z_t, &lw.w1, &mut acc, T::one());
        for &s in &neighbours[t] {
            let p = T::of(1.0 / ((degrees[t] * degrees[s]) as f64).sqrt());
            let z_s = z_prev.row(s);
            row_times(z_s, &lw.w1, &mut acc, p);
            for ((e, &a), &b) in elementwise.iter_mut().zip(z_s).zip(z_t) {
                *e = a * b;
            }
            row_times(&elementwise, &lw.w2, &mut acc, p);
        }
        for (o, a) in out.row_mut(t).iter_mut().zip(acc) {
            *o = leaky_relu_scalar(a, slope);
        }
    }
    Ok(out)
}

/// Stacks every layer and concatenates `Z⁽⁰⁾ … Z⁽ᴸ⁾`.
pub fn propagate_all<T: Scalar>(
    z0: &DenseMatrix<T>,
    weights: &[LayerWeights<T>],
    lap: &NormalizedLaplacian<T>,
    slope: T,
) -> Result<PropagationState<T>> {
    let mut layers = Vec::with_capacity(weights.len() + 1);
    layers.push(z0.clone());
    for lw in weights {
        let next = propagate_layer_matrix(layers.last().expect("non-empty"), lw, lap, slope)?;
        layers.push(next);
    }
    PropagationState::new(layers, lap.n_users)
}

/// `ŷ(u, i) = e*_uᵀ e*_i`
pub fn score<T: Scalar>(state: &PropagationState<T>, u: usize, i: usize) -> Result<T> {
    check_user(state, u)?;
    if i >= state.n_items() {
        return Err(Error::OutOfRange {
            what: "item",
            index: i,
            limit: state.n_items(),
        });
    }
    Ok(dot(state.user_repr(u), state.item_repr(i)))
}

/// Scores of user `u` against every item, in item order.
pub fn score_all_items<T: Scalar>(state: &PropagationState<T>, u: usize) -> Result<Vec<T>> {
    check_user(state, u)?;
    let user = state.user_repr(u);
    Ok((0..state.n_items()).map(|i| dot(user, state.item_repr(i))).collect())
}

fn check_user<T: Scalar>(state: &PropagationState<T>, u: usize) -> Result<()> {
    if u >= state.n_users {
        return Err(Error::OutOfRange {
            what: "user",
            index: u,
            limit: state.n_users,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_laplacian;
    use crate::kernel::xavier_init;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_graph(rng: &mut ChaCha8Rng, n_users: usize, n_items: usize, p: f64) -> InteractionMatrix {
        let pairs: Vec<_> = (0..n_users * n_items)
            .filter(|_| rng.random_bool(p))
            .collect();
        InteractionMatrix::from_pairs(n_users, n_items, pairs.into_iter().map(|x| (x / n_items, x % n_items))).unwrap()
    }

    fn random_layer(rng: &mut ChaCha8Rng, d_in: usize, d_out: usize) -> LayerWeights<f64> {
        LayerWeights {
            w1: xavier_init(d_in, d_out, rng),
            w2: xavier_init(d_in, d_out, rng),
        }
    }

    #[test]
    fn edgeless_graph_reduces_to_self_transform() {
        let r = InteractionMatrix::empty(2, 2);
        let lap = build_laplacian::<f64>(&r);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z: DenseMatrix<f64> = xavier_init(4, 3, &mut rng);
        let mut lw = random_layer(&mut rng, 3, 2);
        lw.w2 = DenseMatrix::zeros(3, 2);
        let out = propagate_layer_matrix(&z, &lw, &lap, 0.2).unwrap();
        let expected = crate::kernel::leaky_relu(&z.matmul(&lw.w1).unwrap(), 0.2);
        assert_eq!(out, expected);
    }

    #[test]
    fn single_edge_hand_trace() {
        // p = 1; pre_u = z_u w1 + z_i w1 + (z_i z_u) w2, and symmetrically for i.
        let r = InteractionMatrix::from_pairs(1, 1, [(0, 0)]).unwrap();
        let lap = build_laplacian::<f64>(&r);
        let z = DenseMatrix::from_vec(2, 1, vec![2.0, -1.0]).unwrap();
        let lw = LayerWeights {
            w1: DenseMatrix::from_vec(1, 1, vec![0.5]).unwrap(),
            w2: DenseMatrix::from_vec(1, 1, vec![3.0]).unwrap(),
        };
        // pre = 0.5·(2 − 1) + 3·(−2) = −5.5 for both nodes
        let out = propagate_layer_matrix(&z, &lw, &lap, 0.2).unwrap();
        assert_eq!(out.data(), &[-1.1, -1.1]);
        let per_edge = propagate_layer_per_edge(&z, &lw, &r, 0.2).unwrap();
        assert_eq!(per_edge.data(), &[-1.1, -1.1]);
    }

    #[test]
    fn identity_weights_hand_trace() {
        let r = InteractionMatrix::from_pairs(1, 1, [(0, 0)]).unwrap();
        let e1 = DenseMatrix::from_vec(2, 2, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let lw = LayerWeights {
            w1: DenseMatrix::identity(2),
            w2: DenseMatrix::identity(2),
        };
        // z_u + z_i + z_i ⊙ z_u = 3·e₁
        let out = propagate_layer_per_edge(&e1, &lw, &r, 0.2).unwrap();
        assert_eq!(out.data(), &[3.0, 0.0, 3.0, 0.0]);
    }

    #[test]
    fn isolated_node_gets_only_self_message() {
        let r = InteractionMatrix::from_pairs(2, 2, [(0, 0)]).unwrap();
        let lap = build_laplacian::<f64>(&r);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z: DenseMatrix<f64> = xavier_init(4, 3, &mut rng);
        let lw = random_layer(&mut rng, 3, 3);
        let out = propagate_layer_matrix(&z, &lw, &lap, 0.2).unwrap();
        let self_only = crate::kernel::leaky_relu(&z.matmul(&lw.w1).unwrap(), 0.2);
        // user 1 and item 1 are isolated
        assert_eq!(out.row(1), self_only.row(1));
        assert_eq!(out.row(3), self_only.row(3));
        assert_ne!(out.row(0), self_only.row(0));
    }

    #[test]
    fn doubling_degree_scales_message_by_inv_sqrt2() {
        // user 0 linked to item 0 only vs. user 0 linked to items 0 and 1; item 0
        // keeps degree 1 in both, so p_{u0,i0} goes from 1 to 1/√2.
        let one = InteractionMatrix::from_pairs(1, 2, [(0, 0)]).unwrap();
        let two = InteractionMatrix::from_pairs(1, 2, [(0, 0), (0, 1)]).unwrap();
        let l1 = build_laplacian::<f64>(&one);
        let l2 = build_laplacian::<f64>(&two);
        assert_eq!(l1.laplacian.get(0, 1), 1.0);
        assert!((l2.laplacian.get(0, 1) - 1.0 / 2f64.sqrt()).abs() < 1e-16);
        assert!((l2.laplacian.get(0, 1) / l1.laplacian.get(0, 1) - 0.5f64.sqrt()).abs() <= f64::EPSILON);
    }

    #[test]
    fn matrix_rule_matches_per_edge_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..25 {
            let nu = rng.random_range(1..12);
            let ni = rng.random_range(1..12);
            let r = random_graph(&mut rng, nu, ni, 0.3);
            let lap = build_laplacian::<f64>(&r);
            let d_in = rng.random_range(1..6);
            let d_out = rng.random_range(1..6);
            let z: DenseMatrix<f64> = xavier_init(r.n_nodes(), d_in, &mut rng);
            let lw = random_layer(&mut rng, d_in, d_out);
            let a = propagate_layer_matrix(&z, &lw, &lap, 0.2).unwrap();
            let b = propagate_layer_per_edge(&z, &lw, &r, 0.2).unwrap();
            assert!(a.max_abs_diff(&b).unwrap() <= 1e-10);
        }
    }

    #[test]
    fn propagate_all_shapes_and_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let r = random_graph(&mut rng, 5, 4, 0.5);
        let lap = build_laplacian::<f64>(&r);
        let z0: DenseMatrix<f64> = xavier_init(9, 64, &mut rng);
        let weights: Vec<_> = (0..3).map(|_| random_layer(&mut rng, 64, 64)).collect();
        let state = propagate_all(&z0, &weights, &lap, 0.2).unwrap();
        assert_eq!(state.concatenated.cols(), 256);
        assert_eq!(state.layers.len(), 4);
        for l in 0..4 {
            assert_eq!(state.layer_block(l).unwrap(), state.layers[l]);
        }

        let one = propagate_all(&z0, &weights[..1], &lap, 0.2).unwrap();
        assert_eq!(one.concatenated.cols(), 128);

        let zeros: Vec<_> = (0..2).map(|_| LayerWeights::zeros(64, 64)).collect();
        let state = propagate_all(&z0, &zeros, &lap, 0.2).unwrap();
        assert_eq!(state.layer_block(0).unwrap(), z0);
        assert!(state.layers[1..].iter().all(|m| m.max_abs() == 0.0));

        let bad = vec![random_layer(&mut rng, 32, 64)];
        assert!(propagate_all(&z0, &bad, &lap, 0.2).is_err());
    }

    #[test]
    fn scoring() {
        let z = DenseMatrix::from_vec(3, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
        let state = PropagationState::new(vec![z], 1).unwrap();
        assert_eq!(score(&state, 0, 0).unwrap(), 0.0);
        assert_eq!(score(&state, 0, 1).unwrap(), 1.0);
        assert!(score(&state, 1, 0).is_err());
        assert!(score(&state, 0, 2).is_err());
        assert_eq!(score_all_items(&state, 0).unwrap(), vec![0.0, 1.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let z: DenseMatrix<f64> = xavier_init(25, 8, &mut rng);
        let state = PropagationState::new(vec![z.clone()], 5).unwrap();
        let all = score_all_items(&state, 2).unwrap();
        assert_eq!(all.len(), 20);
        for (i, &s) in all.iter().enumerate() {
            let mut naive = 0.0;
            for k in 0..8 {
                naive += z.get(2, k) * z.get(5 + i, k);
            }
            assert!((s - naive).abs() <= 1e-14);
            assert_eq!(s, score(&state, 2, i).unwrap());
        }
    }

    #[test]
    fn single_item_scores() {
        let z = DenseMatrix::from_vec(2, 2, vec![0.5, 2.0, 0.5, 2.0]).unwrap();
        let state = PropagationState::new(vec![z], 1).unwrap();
        assert_eq!(score_all_items(&state, 0).unwrap(), vec![score(&state, 0, 0).unwrap()]);
        assert_eq!(score(&state, 0, 0).unwrap(), 4.25);
    }
}
