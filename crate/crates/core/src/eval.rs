//! Full-ranking top-K evaluation: recall@K and NDCG@K averaged over test users.
//!
//! Training positives are removed from each user's candidate list. NDCG uses
//! binary relevance with the ideal DCG truncated at `min(K, |test|)`. Score
//! ties are broken by ascending item index.

use std::cmp::Ordering;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{InteractionMatrix, NormalizedLaplacian};
use crate::ngcf::score_all_items;
use crate::scalar::Scalar;
use crate::trainer::Recommender;

/// Training interactions plus held-out positives, one sorted list per user.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSplit {
    pub train: InteractionMatrix,
    pub test: Vec<Vec<usize>>,
}

impl EvalSplit {
    /// Sorts and deduplicates test lists, pads them to one per user and
    /// rejects items out of range or already in the training set.
    pub fn new(train: InteractionMatrix, mut test: Vec<Vec<usize>>) -> Result<Self> {
        if test.len() > train.n_users() {
            return Err(Error::OutOfRange {
                what: "test user",
                index: test.len() - 1,
                limit: train.n_users(),
            });
        }
        test.resize(train.n_users(), Vec::new());
        for (u, items) in test.iter_mut().enumerate() {
            items.sort_unstable();
            items.dedup();
            for &i in items.iter() {
                if i >= train.n_items() {
                    return Err(Error::OutOfRange {
                        what: "test item",
                        index: i,
                        limit: train.n_items(),
                    });
                }
                if train.contains(u, i) {
                    return Err(Error::Config(format!("user {u}: item {i} is both a training and a test positive")));
                }
            }
        }
        Ok(Self { train, test })
    }

    pub fn n_test_interactions(&self) -> usize {
        self.test.iter().map(Vec::len).sum()
    }

    pub fn n_test_users(&self) -> usize {
        self.test.iter().filter(|t| !t.is_empty()).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UserMetrics {
    pub user: usize,
    pub recall: f64,
    pub ndcg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub k: usize,
    pub recall: f64,
    pub ndcg: f64,
    /// Users that contributed to the averages.
    pub n_users: usize,
    /// Users with test items but no candidate items left after exclusion.
    pub skipped_users: usize,
    #[serde(skip)]
    pub per_user: Vec<UserMetrics>,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn rank_order<T: Scalar>(scores: &[T], a: usize, b: usize) -> Ordering {
    let (x, y) = (scores[a], scores[b]);
    // NaN ranks below every number.
    match (x.is_nan(), y.is_nan()) {
        (true, true) => a.cmp(&b),
        (true, false) => Ordering::Greater,
        (false, true) => Ordering::Less,
        _ => y.partial_cmp(&x).unwrap_or(Ordering::Equal).then(a.cmp(&b)),
    }
}

/// The `k` best items not in `exclude` (sorted ascending), best first.
pub fn top_k<T: Scalar>(scores: &[T], exclude: &[usize], k: usize) -> Vec<usize> {
    let mut candidates: Vec<usize> = Vec::with_capacity(scores.len().saturating_sub(exclude.len()));
    let mut ex = exclude.iter().peekable();
    for i in 0..scores.len() {
        while ex.next_if(|&&e| e < i).is_some() {}
        if ex.next_if_eq(&&i).is_none() {
            candidates.push(i);
        }
    }
    if k == 0 {
        return Vec::new();
    }
    if candidates.len() > k {
        candidates.select_nth_unstable_by(k - 1, |&a, &b| rank_order(scores, a, b));
        candidates.truncate(k);
    }
    candidates.sort_unstable_by(|&a, &b| rank_order(scores, a, b));
    candidates
}

/// `|topk ∩ test| / |test|`; `test` must be sorted.
pub fn recall_at_k(topk: &[usize], test: &[usize]) -> f64 {
    if test.is_empty() {
        return 0.0;
    }
    let hits = topk.iter().filter(|i| test.binary_search(i).is_ok()).count();
    hits as f64 / test.len() as f64
}

/// Binary-relevance NDCG with the ideal list truncated at `min(k, |test|)`;
/// `test` must be sorted.
pub fn ndcg_at_k(topk: &[usize], test: &[usize], k: usize) -> f64 {
    let discount = |rank: usize| 1.0 / ((rank + 2) as f64).log2();
    let dcg: f64 = topk
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| test.binary_search(i).is_ok())
        .map(|(r, _)| discount(r))
        .sum();
    let idcg: f64 = (0..k.min(test.len())).map(discount).sum();
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

/// Ranks every item for each test user with `scorer(u)` and averages the
/// per-user metrics in ascending user order.
pub fn evaluate_scores<T: Scalar>(
    split: &EvalSplit,
    k: usize,
    mut scorer: impl FnMut(usize) -> Result<Vec<T>>,
) -> Result<MetricsReport> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let n_items = split.train.n_items();
    let mut per_user = Vec::new();
    let mut skipped_users = 0;
    for (u, test) in split.test.iter().enumerate() {
        if test.is_empty() {
            continue;
        }
        let exclude = split.train.items_of(u);
        if exclude.len() >= n_items {
            skipped_users += 1;
            continue;
        }
        let scores = scorer(u)?;
        if scores.len() != n_items {
            return Err(Error::Dimension {
                op: "evaluate (scores)",
                lhs: (1, scores.len()),
                rhs: (1, n_items),
            });
        }
        let ranked = top_k(&scores, exclude, k);
        per_user.push(UserMetrics {
            user: u,
            recall: recall_at_k(&ranked, test),
            ndcg: ndcg_at_k(&ranked, test, k),
        });
    }
    if per_user.is_empty() {
        return Err(Error::Empty("no user has both test items and candidates".into()));
    }
    let n = per_user.len() as f64;
    Ok(MetricsReport {
        k,
        recall: per_user.iter().map(|m| m.recall).sum::<f64>() / n,
        ndcg: per_user.iter().map(|m| m.ndcg).sum::<f64>() / n,
        n_users: per_user.len(),
        skipped_users,
        per_user,
    })
}

/// One dropout-free forward pass, then full ranking for every test user.
pub fn evaluate<T: Scalar>(
    model: &Recommender<T>,
    lap: &NormalizedLaplacian<T>,
    split: &EvalSplit,
    k: usize,
) -> Result<MetricsReport> {
    let state = model.propagate(lap)?;
    evaluate_scores(split, k, |u| score_all_items(&state, u))
}

/// Item scores proportional to training popularity, shared by all users.
pub fn popularity_scores(train: &InteractionMatrix) -> Vec<f64> {
    train.item_degrees().into_iter().map(|d| d as f64).collect()
}

pub fn evaluate_popularity(split: &EvalSplit, k: usize) -> Result<MetricsReport> {
    let scores = popularity_scores(&split.train);
    evaluate_scores(split, k, |_| Ok(scores.clone()))
}

/// Expected recall@K of a uniformly random ranking: `K / M`.
pub fn random_recall_baseline(k: usize, n_items: usize) -> f64 {
    (k as f64 / n_items as f64).min(1.0)
}

/// Exact expected recall@K of a random ranking over each user's candidates,
/// averaged over test users: `mean_u min(K, C_u) / C_u`.
pub fn random_recall_expected(split: &EvalSplit, k: usize) -> f64 {
    let n_items = split.train.n_items();
    let per_user: Vec<f64> = (0..split.test.len())
        .filter(|&u| !split.test[u].is_empty())
        .map(|u| {
            let c = n_items - split.train.items_of(u).len();
            k.min(c) as f64 / c as f64
        })
        .collect();
    per_user.iter().sum::<f64>() / per_user.len().max(1) as f64
}
