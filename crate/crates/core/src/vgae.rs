//! Variational graph auto-encoder used to pre-train layer-0 embeddings.
//!
//! The encoder is a shared GCN trunk (`H ← LeakyReLU(Ã H W)`, with `Ã` the
//! self-looped symmetric-normalised adjacency) followed by two linear GCN
//! heads for `μ` and `log σ`. The decoder scores a user–item pair with
//! `σ(z_uᵀ z_i)`. Training minimises weighted binary cross-entropy over
//! user–item pairs plus the closed-form Gaussian KL to `N(0, I)`.
//!
//! The deterministic mode drops the `log σ` head and the KL term, giving a
//! plain graph auto-encoder with the same trunk.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::graph::{build_laplacian, gcn_normalized_adjacency, InteractionMatrix};
use crate::kernel::{
    adam_step, dot, leaky_relu_grad, leaky_relu_scalar, log_sigmoid, sigmoid, softplus, xavier_init, AdamState,
    DenseMatrix, Evaluation, Objective, SparseMatrix,
};
use crate::scalar::Scalar;

/// Upper clamp on `log σ` before exponentiation.
pub const LOG_SIGMA_MAX: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderMode {
    Variational,
    Deterministic,
}

impl fmt::Display for EncoderMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncoderMode::Variational => "variational",
            EncoderMode::Deterministic => "deterministic",
        })
    }
}

impl FromStr for EncoderMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "variational" | "vgae" => Ok(EncoderMode::Variational),
            "deterministic" | "gae" => Ok(EncoderMode::Deterministic),
            other => Err(Error::Config(format!("unknown encoder mode {other:?}"))),
        }
    }
}

/// Node features fed to the first encoder layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    /// Row `t` of the normalised Laplacian: each node's connectivity profile.
    Laplacian,
    /// One-hot node identity.
    Identity,
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureKind::Laplacian => "laplacian",
            FeatureKind::Identity => "identity",
        })
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "laplacian" => Ok(FeatureKind::Laplacian),
            "identity" => Ok(FeatureKind::Identity),
            other => Err(Error::Config(format!("unknown feature kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub hidden_dims: Vec<usize>,
    pub latent_dim: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub mode: EncoderMode,
    /// Sampled non-edges per positive edge when pair enumeration is too large.
    pub negative_sample_ratio: f64,
    pub kl_weight: f64,
    pub features: FeatureKind,
    /// Enumerate every user–item pair while `N + M` stays at or below this.
    pub full_pair_limit: usize,
    pub leaky_slope: f64,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            hidden_dims: vec![128, 64],
            latent_dim: 64,
            learning_rate: 0.01,
            epochs: 200,
            mode: EncoderMode::Variational,
            negative_sample_ratio: 1.0,
            kl_weight: 1.0,
            features: FeatureKind::Laplacian,
            full_pair_limit: 2000,
            leaky_slope: crate::kernel::DEFAULT_LEAKY_SLOPE,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) {
            return Err(Error::Config("encoder needs at least one positive hidden width".into()));
        }
        if self.latent_dim == 0 {
            return Err(Error::Config("latent dimension must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("encoder learning rate must be positive".into()));
        }
        if !(self.negative_sample_ratio > 0.0) {
            return Err(Error::Config("negative sample ratio must be positive".into()));
        }
        if !(self.kl_weight >= 0.0) {
            return Err(Error::Config("KL weight must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderWeights<T> {
    pub trunk: Vec<DenseMatrix<T>>,
    pub mu_head: DenseMatrix<T>,
    pub log_sigma_head: Option<DenseMatrix<T>>,
}

impl<T: Scalar> EncoderWeights<T> {
    /// Glorot initialisation. The trunk and `μ` head are drawn before the
    /// `log σ` head, so both modes share identical initial `μ` for a seed.
    pub fn init<R: Rng + ?Sized>(n_features: usize, cfg: &EncoderConfig, rng: &mut R) -> Self {
        let mut trunk = Vec::with_capacity(cfg.hidden_dims.len());
        let mut d_in = n_features;
        for &d in &cfg.hidden_dims {
            trunk.push(xavier_init(d_in, d, rng));
            d_in = d;
        }
        let mu_head = xavier_init(d_in, cfg.latent_dim, rng);
        let log_sigma_head = match cfg.mode {
            EncoderMode::Variational => Some(xavier_init(d_in, cfg.latent_dim, rng)),
            EncoderMode::Deterministic => None,
        };
        Self {
            trunk,
            mu_head,
            log_sigma_head,
        }
    }

    pub fn zeros_like(&self) -> Self {
        let z = |m: &DenseMatrix<T>| DenseMatrix::zeros(m.rows(), m.cols());
        Self {
            trunk: self.trunk.iter().map(z).collect(),
            mu_head: z(&self.mu_head),
            log_sigma_head: self.log_sigma_head.as_ref().map(z),
        }
    }

    pub fn tensors(&self) -> Vec<&DenseMatrix<T>> {
        let mut v: Vec<&DenseMatrix<T>> = self.trunk.iter().collect();
        v.push(&self.mu_head);
        v.extend(self.log_sigma_head.as_ref());
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut DenseMatrix<T>> {
        let mut v: Vec<&mut DenseMatrix<T>> = self.trunk.iter_mut().collect();
        v.push(&mut self.mu_head);
        v.extend(self.log_sigma_head.as_mut());
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
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput<T> {
    pub mu: DenseMatrix<T>,
    pub log_sigma: Option<DenseMatrix<T>>,
}

struct EncoderCache<T> {
    /// Layer inputs after the first: `H₁ … H_k`.
    hidden: Vec<DenseMatrix<T>>,
    /// Trunk pre-activations `Ã H W`.
    pre: Vec<DenseMatrix<T>>,
}

fn forward_cached<T: Scalar>(
    features: &SparseMatrix<T>,
    adj: &SparseMatrix<T>,
    w: &EncoderWeights<T>,
    slope: T,
) -> Result<(EncoderOutput<T>, EncoderCache<T>)> {
    if features.rows() != adj.rows() || adj.rows() != adj.cols() {
        return Err(Error::Dimension {
            op: "encoder_forward",
            lhs: features.shape(),
            rhs: adj.shape(),
        });
    }
    let mut hidden: Vec<DenseMatrix<T>> = Vec::with_capacity(w.trunk.len());
    let mut pre = Vec::with_capacity(w.trunk.len());
    for (k, wk) in w.trunk.iter().enumerate() {
        let projected = if k == 0 {
            features.spmm(wk)?
        } else {
            hidden[k - 1].matmul(wk)?
        };
        let a: DenseMatrix<T> = adj.spmm(&projected)?;
        hidden.push(a.map(|x| leaky_relu_scalar(x, slope)));
        pre.push(a);
    }
    let top = hidden.last().expect("non-empty trunk");
    let mu = adj.spmm(&top.matmul(&w.mu_head)?)?;
    let log_sigma = match &w.log_sigma_head {
        Some(h) => Some(adj.spmm(&top.matmul(h)?)?),
        None => None,
    };
    Ok((EncoderOutput { mu, log_sigma }, EncoderCache { hidden, pre }))
}

/// Encodes every node into `μ` (and `log σ` when the head is present).
pub fn encoder_forward<T: Scalar>(
    features: &SparseMatrix<T>,
    adj: &SparseMatrix<T>,
    weights: &EncoderWeights<T>,
    slope: T,
) -> Result<EncoderOutput<T>> {
    Ok(forward_cached(features, adj, weights, slope)?.0)
}

fn backward<T: Scalar>(
    features: &SparseMatrix<T>,
    adj: &SparseMatrix<T>,
    w: &EncoderWeights<T>,
    slope: T,
    cache: &EncoderCache<T>,
    g_mu: &DenseMatrix<T>,
    g_log_sigma: Option<&DenseMatrix<T>>,
) -> Result<EncoderWeights<T>> {
    let top = cache.hidden.last().expect("non-empty trunk");
    let g_proj_mu = adj.spmm_transpose(g_mu)?;
    let d_mu = top.matmul_tn(&g_proj_mu)?;
    let mut g_h = g_proj_mu.matmul_nt(&w.mu_head)?;
    let d_ls = match (g_log_sigma, &w.log_sigma_head) {
        (Some(g), Some(head)) => {
            let g_proj = adj.spmm_transpose(g)?;
            g_h.add_assign(&g_proj.matmul_nt(head)?)?;
            Some(top.matmul_tn(&g_proj)?)
        }
        _ => None,
    };

    let mut d_trunk = vec![DenseMatrix::zeros(0, 0); w.trunk.len()];
    for k in (0..w.trunk.len()).rev() {
        let mut g_a = g_h;
        for (g, &p) in g_a.data_mut().iter_mut().zip(cache.pre[k].data()) {
            *g *= leaky_relu_grad(p, slope);
        }
        let g_proj = adj.spmm_transpose(&g_a)?;
        if k == 0 {
            d_trunk[0] = features.spmm_transpose(&g_proj)?;
            break;
        }
        d_trunk[k] = cache.hidden[k - 1].matmul_tn(&g_proj)?;
        g_h = g_proj.matmul_nt(&w.trunk[k])?;
    }
    Ok(EncoderWeights {
        trunk: d_trunk,
        mu_head: d_mu,
        log_sigma_head: d_ls,
    })
}

/// Draws standard-normal noise of the given shape.
pub fn sample_noise<T: Scalar, R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DenseMatrix<T> {
    DenseMatrix::from_fn(rows, cols, |_, _| T::of(rng.sample::<f64, _>(StandardNormal)))
}

/// `z = μ + exp(log σ) ⊙ ε` for a given noise matrix.
pub fn reparameterize_with<T: Scalar>(
    mu: &DenseMatrix<T>,
    log_sigma: &DenseMatrix<T>,
    eps: &DenseMatrix<T>,
) -> Result<DenseMatrix<T>> {
    crate::error::check_shape("reparameterize", mu.shape(), log_sigma.shape())?;
    crate::error::check_shape("reparameterize", mu.shape(), eps.shape())?;
    let cap = T::of(LOG_SIGMA_MAX);
    let mut z = mu.clone();
    for ((zv, &ls), &e) in z.data_mut().iter_mut().zip(log_sigma.data()).zip(eps.data()) {
        *zv += ls.min(cap).exp() * e;
    }
    Ok(z)
}

/// Reparameterised sample `z = μ + exp(log σ) ⊙ ε`, `ε ~ N(0, I)`.
pub fn reparameterize<T: Scalar, R: Rng + ?Sized>(
    mu: &DenseMatrix<T>,
    log_sigma: &DenseMatrix<T>,
    rng: &mut R,
) -> Result<DenseMatrix<T>> {
    let eps = sample_noise(mu.rows(), mu.cols(), rng);
    reparameterize_with(mu, log_sigma, &eps)
}

/// Edge probability `σ(z_iᵀ z_j)`.
pub fn decode_edge<T: Scalar>(z_i: &[T], z_j: &[T]) -> T {
    assert_eq!(z_i.len(), z_j.len(), "decode_edge needs equal-length vectors");
    sigmoid(dot(z_i, z_j))
}

/// User–item pairs the reconstruction loss is evaluated on.
#[derive(Debug, Clone, PartialEq)]
pub enum EdgeSample {
    /// Every `N × M` pair; labels row-major by user.
    AllPairs {
        n_users: usize,
        n_items: usize,
        labels: Vec<bool>,
        pos_weight: f64,
    },
    /// Explicit `(user, item)` pairs.
    Pairs {
        n_users: usize,
        pairs: Vec<(usize, usize)>,
        labels: Vec<bool>,
        pos_weight: f64,
    },
}

impl EdgeSample {
    pub fn all_pairs(r: &InteractionMatrix) -> Result<Self> {
        let (n, m) = (r.n_users(), r.n_items());
        let mut labels = vec![false; n * m];
        for (u, i) in r.pairs() {
            labels[u * m + i] = true;
        }
        let pos = r.nnz();
        let neg = n * m - pos;
        if pos == 0 || neg == 0 {
            return Err(Error::Empty("reconstruction needs both edges and non-edges".into()));
        }
        Ok(EdgeSample::AllPairs {
            n_users: n,
            n_items: m,
            labels,
            pos_weight: neg as f64 / pos as f64,
        })
    }

    /// Every observed edge plus `ratio ×` as many uniformly drawn non-edges.
    pub fn sampled<R: Rng + ?Sized>(r: &InteractionMatrix, ratio: f64, rng: &mut R) -> Result<Self> {
        let pos = r.nnz();
        let cells = r.n_users() * r.n_items();
        if pos == 0 || pos == cells {
            return Err(Error::Empty("reconstruction needs both edges and non-edges".into()));
        }
        let n_neg = ((pos as f64 * ratio).round() as usize).clamp(1, cells - pos);
        let mut pairs: Vec<(usize, usize)> = r.pairs().collect();
        let mut labels = vec![true; pos];
        while pairs.len() < pos + n_neg {
            let u = rng.random_range(0..r.n_users());
            let i = rng.random_range(0..r.n_items());
            if !r.contains(u, i) {
                pairs.push((u, i));
                labels.push(false);
            }
        }
        Ok(EdgeSample::Pairs {
            n_users: r.n_users(),
            pairs,
            labels,
            pos_weight: n_neg as f64 / pos as f64,
        })
    }

    pub fn len(&self) -> usize {
        match self {
            EdgeSample::AllPairs { labels, .. } | EdgeSample::Pairs { labels, .. } => labels.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pos_weight(&self) -> f64 {
        match self {
            EdgeSample::AllPairs { pos_weight, .. } | EdgeSample::Pairs { pos_weight, .. } => *pos_weight,
        }
    }
}

/// Weighted BCE of one score and its derivative w.r.t. the score.
#[inline]
fn bce<T: Scalar>(s: T, positive: bool, w: T) -> (T, T) {
    if positive {
        (-w * log_sigmoid(s), -w * sigmoid(-s))
    } else {
        (softplus(s), sigmoid(s))
    }
}

fn reconstruction<T: Scalar>(z: &DenseMatrix<T>, sample: &EdgeSample) -> Result<(T, DenseMatrix<T>)> {
    if sample.is_empty() {
        return Err(Error::Empty("edge sample".into()));
    }
    let w = T::of(sample.pos_weight());
    let count = T::of(sample.len() as f64);
    let mut grad = DenseMatrix::zeros(z.rows(), z.cols());
    let mut total = T::zero();
    match sample {
        EdgeSample::AllPairs {
            n_users,
            n_items,
            labels,
            ..
        } => {
            let (n, m) = (*n_users, *n_items);
            if n + m != z.rows() {
                return Err(Error::Dimension {
                    op: "reconstruction",
                    lhs: z.shape(),
                    rhs: (n + m, z.cols()),
                });
            }
            let zu = DenseMatrix::from_vec(n, z.cols(), z.data()[..n * z.cols()].to_vec())?;
            let zi = DenseMatrix::from_vec(m, z.cols(), z.data()[n * z.cols()..].to_vec())?;
            let mut scores = zu.matmul_nt(&zi)?;
            for (s, &y) in scores.data_mut().iter_mut().zip(labels) {
                let (l, g) = bce(*s, y, w);
                total += l;
                *s = g / count;
            }
            let gu = scores.matmul(&zi)?;
            let gi = scores.matmul_tn(&zu)?;
            let d = z.cols();
            grad.data_mut()[..n * d].copy_from_slice(gu.data());
            grad.data_mut()[n * d..].copy_from_slice(gi.data());
        }
        EdgeSample::Pairs {
            n_users,
            pairs,
            labels,
            ..
        } => {
            let n = *n_users;
            for (&(u, i), &y) in pairs.iter().zip(labels) {
                let (a, b) = (u, n + i);
                if b >= z.rows() {
                    return Err(Error::OutOfRange {
                        what: "sampled node",
                        index: b,
                        limit: z.rows(),
                    });
                }
                let (l, g) = bce(dot(z.row(a), z.row(b)), y, w);
                total += l;
                let g = g / count;
                for k in 0..z.cols() {
                    let (za, zb) = (z.get(a, k), z.get(b, k));
                    grad.row_mut(a)[k] += g * zb;
                    grad.row_mut(b)[k] += g * za;
                }
            }
        }
    }
    Ok((total / count, grad))
}

/// Per-node KL divergences to `N(0, I)` with gradients of their mean.
fn kl_terms<T: Scalar>(
    mu: &DenseMatrix<T>,
    log_sigma: &DenseMatrix<T>,
) -> Result<(Vec<T>, DenseMatrix<T>, DenseMatrix<T>)> {
    crate::error::check_shape("kl", mu.shape(), log_sigma.shape())?;
    let n = T::of(mu.rows() as f64);
    let half = T::of(0.5);
    let two = T::of(2.0);
    let cap = T::of(LOG_SIGMA_MAX);
    let mut per_node = Vec::with_capacity(mu.rows());
    let mut g_mu = DenseMatrix::zeros(mu.rows(), mu.cols());
    let mut g_ls = DenseMatrix::zeros(mu.rows(), mu.cols());
    for r in 0..mu.rows() {
        let mut acc = T::zero();
        for k in 0..mu.cols() {
            let m = mu.get(r, k);
            let raw = log_sigma.get(r, k);
            let c = raw.min(cap);
            let excess = (two * c).exp_m1();
            // −½(1 + 2c − μ² − e^{2c}) = ½(μ² + (e^{2c} − 1 − 2c)); the bracket is ≥ 0.
            acc += half * (m * m + (excess - two * c).max(T::zero()));
            g_mu.set(r, k, m / n);
            if raw <= cap {
                g_ls.set(r, k, excess / n);
            }
        }
        per_node.push(acc);
    }
    Ok((per_node, g_mu, g_ls))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboTerms<T> {
    pub total: T,
    pub reconstruction: T,
    pub kl: T,
}

/// Reconstruction, mean KL and their weighted sum for given latents.
///
/// Pass `log_sigma = None` for the deterministic mode, which reports `kl = 0`.
pub fn elbo_loss<T: Scalar>(
    mu: &DenseMatrix<T>,
    log_sigma: Option<&DenseMatrix<T>>,
    z: &DenseMatrix<T>,
    sample: &EdgeSample,
    kl_weight: f64,
) -> Result<ElboTerms<T>> {
    let (rec, _) = reconstruction(z, sample)?;
    let kl = match log_sigma {
        Some(ls) => {
            let (per_node, _, _) = kl_terms(mu, ls)?;
            per_node.iter().copied().sum::<T>() / T::of(mu.rows() as f64)
        }
        None => T::zero(),
    };
    Ok(ElboTerms {
        total: rec + T::of(kl_weight) * kl,
        reconstruction: rec,
        kl,
    })
}

/// Loss terms, weight gradients and the smallest trunk pre-activation.
pub struct ElboGradient<T> {
    pub terms: ElboTerms<T>,
    pub grads: EncoderWeights<T>,
    pub kl_per_node: Vec<T>,
    pub min_preactivation: T,
}

/// Full forward/backward pass of the auto-encoder objective with frozen noise.
#[allow(clippy::too_many_arguments)]
pub fn elbo_gradient<T: Scalar>(
    features: &SparseMatrix<T>,
    adj: &SparseMatrix<T>,
    weights: &EncoderWeights<T>,
    eps: Option<&DenseMatrix<T>>,
    sample: &EdgeSample,
    kl_weight: f64,
    slope: T,
) -> Result<ElboGradient<T>> {
    let (out, cache) = forward_cached(features, adj, weights, slope)?;
    let min_preactivation = cache
        .pre
        .iter()
        .flat_map(|m| m.data().iter())
        .fold(T::infinity(), |a, &x| a.min(x.abs()));

    match (&out.log_sigma, eps) {
        (Some(ls), Some(eps)) => {
            let z = reparameterize_with(&out.mu, ls, eps)?;
            let (rec, g_z) = reconstruction(&z, sample)?;
            let (per_node, g_kl_mu, g_kl_ls) = kl_terms(&out.mu, ls)?;
            let kl = per_node.iter().copied().sum::<T>() / T::of(out.mu.rows() as f64);
            let klw = T::of(kl_weight);
            let mut g_mu = g_z.clone();
            g_mu.axpy(klw, &g_kl_mu)?;
            let cap = T::of(LOG_SIGMA_MAX);
            let mut g_ls = DenseMatrix::zeros(ls.rows(), ls.cols());
            for (k, g) in g_ls.data_mut().iter_mut().enumerate() {
                let raw = ls.data()[k];
                if raw <= cap {
                    *g = g_z.data()[k] * raw.exp() * eps.data()[k];
                }
                *g += klw * g_kl_ls.data()[k];
            }
            let grads = backward(features, adj, weights, slope, &cache, &g_mu, Some(&g_ls))?;
            Ok(ElboGradient {
                terms: ElboTerms {
                    total: rec + klw * kl,
                    reconstruction: rec,
                    kl,
                },
                grads,
                kl_per_node: per_node,
                min_preactivation,
            })
        }
        (None, _) => {
            let (rec, g_z) = reconstruction(&out.mu, sample)?;
            let grads = backward(features, adj, weights, slope, &cache, &g_z, None)?;
            Ok(ElboGradient {
                terms: ElboTerms {
                    total: rec,
                    reconstruction: rec,
                    kl: T::zero(),
                },
                grads,
                kl_per_node: vec![T::zero(); out.mu.rows()],
                min_preactivation,
            })
        }
        (Some(_), None) => Err(Error::Config("variational encoder needs reparameterisation noise".into())),
    }
}

/// Pre-trained node embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalEmbeddings<T> {
    pub mu: DenseMatrix<T>,
    /// Absent for the deterministic encoder.
    pub log_sigma: Option<DenseMatrix<T>>,
    pub latent_dim: usize,
}

impl<T: Scalar> VariationalEmbeddings<T> {
    pub fn n_nodes(&self) -> usize {
        self.mu.rows()
    }
}

/// Layer-0 embeddings for the recommender: the posterior means.
pub fn export_embeddings<T: Scalar>(ve: &VariationalEmbeddings<T>) -> DenseMatrix<T> {
    ve.mu.clone()
}

/// One reparameterised draw instead of the means.
pub fn sample_embeddings<T: Scalar, R: Rng + ?Sized>(
    ve: &VariationalEmbeddings<T>,
    rng: &mut R,
) -> Result<DenseMatrix<T>> {
    match &ve.log_sigma {
        Some(ls) => reparameterize(&ve.mu, ls, rng),
        None => Ok(ve.mu.clone()),
    }
}

pub struct PretrainOutcome<T> {
    pub embeddings: VariationalEmbeddings<T>,
    pub weights: EncoderWeights<T>,
    /// Loss terms at the start of every epoch, before that epoch's update.
    pub history: Vec<ElboTerms<T>>,
}

/// Encoder inputs derived from the interaction graph.
pub struct EncoderInputs<T> {
    pub features: SparseMatrix<T>,
    pub adjacency: SparseMatrix<T>,
}

impl<T: Scalar> EncoderInputs<T> {
    pub fn new(r: &InteractionMatrix, kind: FeatureKind) -> Self {
        let features = match kind {
            FeatureKind::Laplacian => build_laplacian(r).laplacian,
            FeatureKind::Identity => SparseMatrix::identity(r.n_nodes()),
        };
        Self {
            features,
            adjacency: gcn_normalized_adjacency(r),
        }
    }
}

const STREAM_INIT: u64 = 0;
const STREAM_NOISE: u64 = 1;
const STREAM_EDGES: u64 = 2;

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Full-batch Adam training of the auto-encoder.
pub fn train_vgae<T: Scalar>(r: &InteractionMatrix, cfg: &EncoderConfig) -> Result<PretrainOutcome<T>> {
    cfg.validate()?;
    if r.nnz() == 0 {
        return Err(Error::Empty("interaction graph has no edges".into()));
    }
    let inputs = EncoderInputs::<T>::new(r, cfg.features);
    let slope = T::of(cfg.leaky_slope);
    let mut init_rng = stream_rng(cfg.seed, STREAM_INIT);
    let mut noise_rng = stream_rng(cfg.seed, STREAM_NOISE);
    let mut edge_rng = stream_rng(cfg.seed, STREAM_EDGES);

    let mut weights = EncoderWeights::<T>::init(inputs.features.cols(), cfg, &mut init_rng);
    let mut adam: Vec<AdamState<T>> = weights.tensors().into_iter().map(AdamState::for_param).collect();
    let enumerate_all = r.n_nodes() <= cfg.full_pair_limit;
    let fixed_sample = if enumerate_all {
        Some(EdgeSample::all_pairs(r)?)
    } else {
        None
    };

    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let drawn;
        let sample = match &fixed_sample {
            Some(s) => s,
            None => {
                drawn = EdgeSample::sampled(r, cfg.negative_sample_ratio, &mut edge_rng)?;
                &drawn
            }
        };
        let eps = match cfg.mode {
            EncoderMode::Variational => Some(sample_noise(r.n_nodes(), cfg.latent_dim, &mut noise_rng)),
            EncoderMode::Deterministic => None,
        };
        let step = elbo_gradient(
            &inputs.features,
            &inputs.adjacency,
            &weights,
            eps.as_ref(),
            sample,
            cfg.kl_weight,
            slope,
        )?;
        let t = step.terms;
        if !(t.total.is_finite() && t.reconstruction.is_finite() && t.kl.is_finite()) {
            return Err(Error::NonFinite(format!(
                "auto-encoder loss at epoch {epoch}: total {} reconstruction {} kl {}",
                t.total, t.reconstruction, t.kl
            )));
        }
        if let Some(node) = step.kl_per_node.iter().position(|&k| k < T::zero()) {
            return Err(Error::NonFinite(format!(
                "negative KL {} for node {node} at epoch {epoch}",
                step.kl_per_node[node]
            )));
        }
        history.push(t);
        for ((param, grad), state) in weights
            .tensors_mut()
            .into_iter()
            .zip(step.grads.tensors())
            .zip(adam.iter_mut())
        {
            adam_step(param, grad, state, cfg.learning_rate)?;
        }
    }

    let out = encoder_forward(&inputs.features, &inputs.adjacency, &weights, slope)?;
    if !out.mu.is_finite() || out.log_sigma.as_ref().is_some_and(|m| !m.is_finite()) {
        return Err(Error::NonFinite("trained embeddings contain non-finite values".into()));
    }
    Ok(PretrainOutcome {
        embeddings: VariationalEmbeddings {
            mu: out.mu,
            log_sigma: out.log_sigma,
            latent_dim: cfg.latent_dim,
        },
        weights,
        history,
    })
}

/// Auto-encoder objective over the flattened encoder weights, with the
/// reparameterisation noise and edge sample held fixed.
pub struct ElboObjective<T> {
    pub inputs: EncoderInputs<T>,
    pub weights: EncoderWeights<T>,
    pub eps: Option<DenseMatrix<T>>,
    pub sample: EdgeSample,
    pub kl_weight: f64,
    pub slope: T,
}

impl<T: Scalar> ElboObjective<T> {
    /// Random instance on `r` for gradient verification.
    pub fn random(r: &InteractionMatrix, cfg: &EncoderConfig) -> Result<Self> {
        let inputs = EncoderInputs::new(r, cfg.features);
        let mut rng = stream_rng(cfg.seed, STREAM_INIT);
        let weights = EncoderWeights::init(inputs.features.cols(), cfg, &mut rng);
        let eps = match cfg.mode {
            EncoderMode::Variational => Some(sample_noise(r.n_nodes(), cfg.latent_dim, &mut rng)),
            EncoderMode::Deterministic => None,
        };
        Ok(Self {
            inputs,
            weights,
            eps,
            sample: EdgeSample::all_pairs(r)?,
            kl_weight: cfg.kl_weight,
            slope: T::of(cfg.leaky_slope),
        })
    }

    fn run(&self) -> Result<ElboGradient<T>> {
        elbo_gradient(
            &self.inputs.features,
            &self.inputs.adjacency,
            &self.weights,
            self.eps.as_ref(),
            &self.sample,
            self.kl_weight,
            self.slope,
        )
    }
}

impl<T: Scalar> Objective<T> for ElboObjective<T> {
    fn params(&self) -> Vec<T> {
        self.weights.flatten()
    }

    fn set_params(&mut self, params: &[T]) {
        self.weights.assign(params);
    }

    fn evaluate(&mut self) -> Result<Evaluation<T>> {
        let g = self.run()?;
        Ok(Evaluation {
            loss: g.terms.total,
            gradient: g.grads.flatten(),
            min_preactivation: Some(g.min_preactivation),
        })
    }
}
