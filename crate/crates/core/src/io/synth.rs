//! Planted-block synthetic interaction data.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::InteractionMatrix;
use crate::io::dataset::{holdout, DatasetSplit};
use crate::vgae::stream_rng;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_blocks: usize,
    pub intra_p: f64,
    pub inter_p: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_users: 300,
            n_items: 300,
            n_blocks: 2,
            intra_p: 0.8,
            inter_p: 0.02,
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

/// Community of index `t` out of `n` when split into `blocks` contiguous runs.
pub fn block_of(t: usize, n: usize, blocks: usize) -> usize {
    t * blocks / n
}

/// Users and items are split into `n_blocks` contiguous communities; a pair
/// interacts with probability `intra_p` inside a community and `inter_p`
/// across. Each user with two or more items then holds out
/// `round(test_fraction·degree)` of them, at least one and never all.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<DatasetSplit> {
    if cfg.n_users == 0 || cfg.n_items == 0 || cfg.n_blocks == 0 {
        return Err(Error::Config("users, items and blocks must be at least 1".into()));
    }
    if cfg.n_blocks > cfg.n_users.min(cfg.n_items) {
        return Err(Error::Config("more blocks than users or items".into()));
    }
    for (name, p) in [("intra_p", cfg.intra_p), ("inter_p", cfg.inter_p)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Config(format!("{name} {p} outside [0, 1]")));
        }
    }
    if !(cfg.test_fraction > 0.0 && cfg.test_fraction < 1.0) {
        return Err(Error::Config(format!("test fraction {} outside (0, 1)", cfg.test_fraction)));
    }
    let mut rng = stream_rng(cfg.seed, 0);
    let mut full = Vec::with_capacity(cfg.n_users);
    for u in 0..cfg.n_users {
        let bu = block_of(u, cfg.n_users, cfg.n_blocks);
        let items: Vec<usize> = (0..cfg.n_items)
            .filter(|&i| {
                let p = if block_of(i, cfg.n_items, cfg.n_blocks) == bu { cfg.intra_p } else { cfg.inter_p };
                rng.random_bool(p)
            })
            .collect();
        full.push(items);
    }
    if full.iter().all(Vec::is_empty) {
        return Err(Error::Empty("synthetic parameters produced no interactions".into()));
    }
    let mut split_rng = stream_rng(cfg.seed, 1);
    let mut train = Vec::with_capacity(cfg.n_users);
    let mut test = Vec::with_capacity(cfg.n_users);
    for items in &full {
        let (t, v) = holdout(items, cfg.test_fraction, &mut split_rng);
        train.push(t);
        test.push(v);
    }
    Ok(DatasetSplit {
        name: format!("synthetic-{}x{}-b{}-s{}", cfg.n_users, cfg.n_items, cfg.n_blocks, cfg.seed),
        train: InteractionMatrix::from_user_lists(cfg.n_items, train)?,
        test,
        dropped_test: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_cross_block_edges_without_inter_probability() {
        let ds = generate_synthetic(&SynthConfig {
            n_users: 40,
            n_items: 30,
            inter_p: 0.0,
            seed: 3,
            ..Default::default()
        })
        .unwrap();
        for u in 0..40 {
            for &i in ds.train.items_of(u).iter().chain(&ds.test[u]) {
                assert_eq!(block_of(u, 40, 2), block_of(i, 30, 2));
            }
        }
    }

    #[test]
    fn full_blocks_have_exact_density() {
        for blocks in [1, 2, 3, 4] {
            let ds = generate_synthetic(&SynthConfig {
                n_users: 24,
                n_items: 36,
                n_blocks: blocks,
                intra_p: 1.0,
                inter_p: 0.0,
                ..Default::default()
            })
            .unwrap();
            assert!((ds.stats().density - 1.0 / blocks as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn holdout_shape_and_determinism() {
        let cfg = SynthConfig {
            n_users: 50,
            n_items: 50,
            intra_p: 0.3,
            inter_p: 0.05,
            seed: 9,
            ..Default::default()
        };
        let a = generate_synthetic(&cfg).unwrap();
        assert_eq!(a, generate_synthetic(&cfg).unwrap());
        for u in 0..50 {
            let (tr, te) = (a.train.items_of(u), &a.test[u]);
            if tr.len() + te.len() >= 2 {
                assert!(!te.is_empty() && !tr.is_empty());
            }
            assert!(te.iter().all(|i| !tr.contains(i)));
        }
        assert!(a.eval_split().is_ok());
    }

    #[test]
    fn empty_graph_is_an_error() {
        let cfg = SynthConfig {
            intra_p: 0.0,
            inter_p: 0.0,
            ..Default::default()
        };
        assert!(matches!(generate_synthetic(&cfg), Err(Error::Empty(_))));
        assert!(generate_synthetic(&SynthConfig { test_fraction: 1.0, ..Default::default() }).is_err());
    }
}
