//! Bipartite user–item graph and its normalised operators.
//!
//! Node numbering is users first (`0..N`) then items (`N..N+M`), matching the
//! block layout `A = [[0, R], [Rᵀ, 0]]`.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::kernel::SparseMatrix;
use crate::scalar::Scalar;

/// Binary implicit-feedback matrix stored as sorted per-user item lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionMatrix {
    n_users: usize,
    n_items: usize,
    user_items: Vec<Vec<usize>>,
}

impl InteractionMatrix {
    /// Builds from `(user, item)` pairs; duplicates collapse to one interaction.
    pub fn from_pairs(
        n_users: usize,
        n_items: usize,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut lists = vec![Vec::new(); n_users];
        for (u, i) in pairs {
            if u >= n_users {
                return Err(Error::OutOfRange {
                    what: "user",
                    index: u,
                    limit: n_users,
                });
            }
            lists[u].push(i);
        }
        Self::from_user_lists(n_items, lists)
    }

    pub fn from_user_lists(n_items: usize, mut lists: Vec<Vec<usize>>) -> Result<Self> {
        for items in &mut lists {
            items.sort_unstable();
            items.dedup();
            if let Some(&last) = items.last() {
                if last >= n_items {
                    return Err(Error::OutOfRange {
                        what: "item",
                        index: last,
                        limit: n_items,
                    });
                }
            }
        }
        Ok(Self {
            n_users: lists.len(),
            n_items,
            user_items: lists,
        })
    }

    pub fn empty(n_users: usize, n_items: usize) -> Self {
        Self {
            n_users,
            n_items,
            user_items: vec![Vec::new(); n_users],
        }
    }

    #[inline]
    pub fn n_users(&self) -> usize {
        self.n_users
    }

    #[inline]
    pub fn n_items(&self) -> usize {
        self.n_items
    }

    #[inline]
    pub fn n_nodes(&self) -> usize {
        self.n_users + self.n_items
    }

    pub fn nnz(&self) -> usize {
        self.user_items.iter().map(Vec::len).sum()
    }

    #[inline]
    pub fn items_of(&self, u: usize) -> &[usize] {
        &self.user_items[u]
    }

    pub fn user_lists(&self) -> &[Vec<usize>] {
        &self.user_items
    }

    #[inline]
    pub fn contains(&self, u: usize, i: usize) -> bool {
        self.user_items[u].binary_search(&i).is_ok()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.user_items
            .iter()
            .enumerate()
            .flat_map(|(u, items)| items.iter().map(move |&i| (u, i)))
    }

    pub fn item_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n_items];
        for (_, i) in self.pairs() {
            deg[i] += 1;
        }
        deg
    }

    /// Users of every item, ascending.
    pub fn item_users(&self) -> Vec<Vec<usize>> {
        let mut lists = vec![Vec::new(); self.n_items];
        for (u, i) in self.pairs() {
            lists[i].push(u);
        }
        lists
    }

    /// Neighbour counts `|N_t|` in node order (users then items).
    pub fn node_degrees(&self) -> Vec<usize> {
        let mut deg: Vec<usize> = self.user_items.iter().map(Vec::len).collect();
        deg.extend(self.item_degrees());
        deg
    }

    pub fn density(&self) -> f64 {
        let cells = self.n_users as f64 * self.n_items as f64;
        if cells == 0.0 {
            0.0
        } else {
            self.nnz() as f64 / cells
        }
    }
}

/// `L = D^{-1/2} A D^{-1/2}` together with `L + I` and the node degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedLaplacian<T> {
    pub laplacian: SparseMatrix<T>,
    pub laplacian_plus_identity: SparseMatrix<T>,
    pub degrees: Vec<usize>,
    pub n_users: usize,
}

impl<T: Scalar> NormalizedLaplacian<T> {
    pub fn n_nodes(&self) -> usize {
        self.degrees.len()
    }

    /// Wraps an arbitrary symmetric operator, deriving `L + I`.
    pub fn from_operator(laplacian: SparseMatrix<T>, degrees: Vec<usize>, n_users: usize) -> Result<Self> {
        let laplacian_plus_identity = laplacian.add_scaled_identity(T::one())?;
        Ok(Self {
            laplacian,
            laplacian_plus_identity,
            degrees,
            n_users,
        })
    }

    /// Zeroes the rows and columns of `dropped` nodes and rescales every
    /// surviving entry by `1 / (1 − rate)`.
    pub fn with_node_dropout(&self, dropped: &[bool], rate: f64) -> Result<Self> {
        if dropped.len() != self.n_nodes() {
            return Err(Error::Dimension {
                op: "node_dropout",
                lhs: (self.n_nodes(), 1),
                rhs: (dropped.len(), 1),
            });
        }
        let scale = T::of(1.0 / (1.0 - rate));
        let laplacian = self.laplacian.map_entries(|i, j, v| {
            if dropped[i] || dropped[j] {
                T::zero()
            } else {
                v * scale
            }
        });
        Self::from_operator(laplacian, self.degrees.clone(), self.n_users)
    }
}

/// Block adjacency `[[0, R], [Rᵀ, 0]]` of size `(N+M)²`.
pub fn build_adjacency<T: Scalar>(r: &InteractionMatrix) -> SparseMatrix<T> {
    let n = r.n_users();
    let mut rows: Vec<Vec<(usize, T)>> = Vec::with_capacity(r.n_nodes());
    for u in 0..n {
        rows.push(r.items_of(u).iter().map(|&i| (n + i, T::one())).collect());
    }
    for users in r.item_users() {
        rows.push(users.into_iter().map(|u| (u, T::one())).collect());
    }
    SparseMatrix::from_sorted_rows(r.n_nodes(), rows)
}

/// Symmetric-normalised Laplacian with `L_ui = 1/√(|N_u|·|N_i|)`.
///
/// Zero-degree nodes simply have empty rows and columns.
pub fn build_laplacian<T: Scalar>(r: &InteractionMatrix) -> NormalizedLaplacian<T> {
    let n = r.n_users();
    let degrees = r.node_degrees();
    let coef = |a: usize, b: usize| T::of(1.0 / ((degrees[a] * degrees[b]) as f64).sqrt());
    let mut rows: Vec<Vec<(usize, T)>> = Vec::with_capacity(r.n_nodes());
    for u in 0..n {
        rows.push(r.items_of(u).iter().map(|&i| (n + i, coef(u, n + i))).collect());
    }
    for (i, users) in r.item_users().into_iter().enumerate() {
        rows.push(users.into_iter().map(|u| (u, coef(n + i, u))).collect());
    }
    let laplacian = SparseMatrix::from_sorted_rows(r.n_nodes(), rows);
    NormalizedLaplacian::from_operator(laplacian, degrees, n).expect("square operator")
}

/// Self-looped GCN propagation operator `D̃^{-1/2} (A + I) D̃^{-1/2}`, `D̃ = D + I`.
pub fn gcn_normalized_adjacency<T: Scalar>(r: &InteractionMatrix) -> SparseMatrix<T> {
    let n = r.n_users();
    let degrees = r.node_degrees();
    let coef = |a: usize, b: usize| T::of(1.0 / (((degrees[a] + 1) * (degrees[b] + 1)) as f64).sqrt());
    let mut rows: Vec<Vec<(usize, T)>> = Vec::with_capacity(r.n_nodes());
    for u in 0..n {
        let mut row = vec![(u, coef(u, u))];
        row.extend(r.items_of(u).iter().map(|&i| (n + i, coef(u, n + i))));
        rows.push(row);
    }
    for (i, users) in r.item_users().into_iter().enumerate() {
        let node = n + i;
        let mut row: Vec<(usize, T)> = users.into_iter().map(|u| (u, coef(node, u))).collect();
        row.push((node, coef(node, node)));
        rows.push(row);
    }
    SparseMatrix::from_sorted_rows(r.n_nodes(), rows)
}

/// Result of k-core peeling with the old→new index maps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KCore {
    pub matrix: InteractionMatrix,
    pub user_map: Vec<Option<usize>>,
    pub item_map: Vec<Option<usize>>,
}

impl KCore {
    pub fn is_empty(&self) -> bool {
        self.matrix.n_users() == 0 && self.matrix.n_items() == 0
    }
}

/// Removes users and items with fewer than `k` interactions until none remain,
/// then renumbers survivors densely in ascending original order.
pub fn kcore_filter(r: &InteractionMatrix, k: usize) -> Result<KCore> {
    if k == 0 {
        return Err(Error::Config("k-core order must be at least 1".into()));
    }
    let n = r.n_users();
    let item_users = r.item_users();
    let mut degree = r.node_degrees();
    let mut alive = vec![true; r.n_nodes()];
    let mut queue: VecDeque<usize> = (0..r.n_nodes()).filter(|&t| degree[t] < k).collect();
    for &t in &queue {
        alive[t] = false;
    }
    while let Some(t) = queue.pop_front() {
        let neighbours: Box<dyn Iterator<Item = usize>> = if t < n {
            Box::new(r.items_of(t).iter().map(|&i| n + i))
        } else {
            Box::new(item_users[t - n].iter().copied())
        };
        for s in neighbours {
            if alive[s] {
                degree[s] -= 1;
                if degree[s] < k {
                    alive[s] = false;
                    queue.push_back(s);
                }
            }
        }
    }

    let renumber = |range: std::ops::Range<usize>| {
        let mut next = 0;
        range
            .map(|t| {
                alive[t].then(|| {
                    next += 1;
                    next - 1
                })
            })
            .collect::<Vec<_>>()
    };
    let user_map = renumber(0..n);
    let item_map = renumber(n..r.n_nodes());
    let n_users = user_map.iter().flatten().count();
    let n_items = item_map.iter().flatten().count();
    let mut lists = vec![Vec::new(); n_users];
    for (u, i) in r.pairs() {
        if let (Some(nu), Some(ni)) = (user_map[u], item_map[i]) {
            lists[nu].push(ni);
        }
    }
    Ok(KCore {
        matrix: InteractionMatrix::from_user_lists(n_items, lists)?,
        user_map,
        item_map,
    })
}
