//! Bipartite user–item interaction graph in compressed adjacency form.

use std::collections::HashMap;

use crate::error::DataError;

/// Bidirectional mapping between opaque string keys and contiguous indices.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdMap {
    keys: Vec<String>,
    index: HashMap<String, usize>,
}

impl IdMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the index for `key`, assigning the next free one on first sight.
    pub fn intern(&mut self, key: &str) -> usize {
        if let Some(&idx) = self.index.get(key) {
            return idx;
        }
        let idx = self.keys.len();
        self.keys.push(key.to_owned());
        self.index.insert(key.to_owned(), idx);
        idx
    }

    pub fn get(&self, key: &str) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn key(&self, idx: usize) -> &str {
        &self.keys[idx]
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

/// Compressed sparse rows: `offsets[r]..offsets[r + 1]` indexes `targets`.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Csr {
    offsets: Vec<usize>,
    targets: Vec<usize>,
}

impl Csr {
    fn from_pairs(rows: usize, pairs: impl Iterator<Item = (usize, usize)>) -> Self {
        let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); rows];
        for (r, t) in pairs {
            buckets[r].push(t);
        }
        let mut offsets = Vec::with_capacity(rows + 1);
        let mut targets = Vec::new();
        offsets.push(0);
        for mut b in buckets {
            b.sort_unstable();
            b.dedup();
            targets.extend(b);
            offsets.push(targets.len());
        }
        Self { offsets, targets }
    }

    fn row(&self, r: usize) -> &[usize] {
        &self.targets[self.offsets[r]..self.offsets[r + 1]]
    }

    fn degree(&self, r: usize) -> usize {
        self.offsets[r + 1] - self.offsets[r]
    }
}

/// Immutable bipartite graph of positive interactions.
///
/// Users are indexed `0..n`, items `0..m`. Negative sets are the complements of
/// the stored adjacency and are never materialized.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionGraph {
    users: IdMap,
    items: IdMap,
    user_adj: Csr,
    item_adj: Csr,
}

impl InteractionGraph {
    /// Builds a graph whose node universe is exactly the endpoints of `edges`.
    pub fn from_edges<S: AsRef<str>>(edges: &[(S, S)]) -> Result<Self, DataError> {
        if edges.is_empty() {
            return Err(DataError::EmptyGraph);
        }
        let mut users = IdMap::new();
        let mut items = IdMap::new();
        for (u, i) in edges {
            users.intern(u.as_ref());
            items.intern(i.as_ref());
        }
        Self::with_universe(users, items, edges)
    }

    /// Builds a graph over a fixed node universe; nodes without edges get degree 0.
    pub fn with_universe<S: AsRef<str>>(
        users: IdMap,
        items: IdMap,
        edges: &[(S, S)],
    ) -> Result<Self, DataError> {
        if edges.is_empty() {
            return Err(DataError::EmptyGraph);
        }
        let mut indexed = Vec::with_capacity(edges.len());
        for (u, i) in edges {
            let ui = users
                .get(u.as_ref())
                .ok_or_else(|| DataError::UnknownKey(u.as_ref().to_owned()))?;
            let ii = items
                .get(i.as_ref())
                .ok_or_else(|| DataError::UnknownKey(i.as_ref().to_owned()))?;
            indexed.push((ui, ii));
        }
        Ok(Self::from_indexed(users, items, &indexed))
    }

    /// Builds a graph from index pairs. Panics if an index is out of range.
    pub fn from_indexed(users: IdMap, items: IdMap, edges: &[(usize, usize)]) -> Self {
        let (n, m) = (users.len(), items.len());
        assert!(
            edges.iter().all(|&(u, i)| u < n && i < m),
            "edge index out of range"
        );
        let user_adj = Csr::from_pairs(n, edges.iter().copied());
        let item_adj = Csr::from_pairs(m, edges.iter().map(|&(u, i)| (i, u)));
        Self {
            users,
            items,
            user_adj,
            item_adj,
        }
    }

    /// Anonymous graph with numeric keys, used by synthetic generators and tests.
    pub fn from_index_pairs(n: usize, m: usize, edges: &[(usize, usize)]) -> Self {
        let mut users = IdMap::new();
        let mut items = IdMap::new();
        for u in 0..n {
            users.intern(&format!("u{u}"));
        }
        for i in 0..m {
            items.intern(&format!("i{i}"));
        }
        Self::from_indexed(users, items, edges)
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn n_edges(&self) -> usize {
        self.user_adj.targets.len()
    }

    /// Sorted positive items of user `u`.
    pub fn user_items(&self, u: usize) -> &[usize] {
        self.user_adj.row(u)
    }

    /// Sorted positive users of item `i`.
    pub fn item_users(&self, i: usize) -> &[usize] {
        self.item_adj.row(i)
    }

    pub fn user_degree(&self, u: usize) -> usize {
        self.user_adj.degree(u)
    }

    pub fn item_degree(&self, i: usize) -> usize {
        self.item_adj.degree(i)
    }

    pub fn user_degrees(&self) -> Vec<usize> {
        (0..self.n_users()).map(|u| self.user_degree(u)).collect()
    }

    pub fn item_degrees(&self) -> Vec<usize> {
        (0..self.n_items()).map(|i| self.item_degree(i)).collect()
    }

    pub fn has_edge(&self, u: usize, i: usize) -> bool {
        self.user_items(u).binary_search(&i).is_ok()
    }

    /// Edges in user-major order, items ascending within a user.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n_users()).flat_map(move |u| self.user_items(u).iter().map(move |&i| (u, i)))
    }

    pub fn user_ids(&self) -> &IdMap {
        &self.users
    }

    pub fn item_ids(&self) -> &IdMap {
        &self.items
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_graph_counts() {
        let g = InteractionGraph::from_edges(&[("u1", "i1"), ("u1", "i2"), ("u2", "i1")]).unwrap();
        assert_eq!((g.n_users(), g.n_items(), g.n_edges()), (2, 2, 3));
        assert_eq!(g.user_degrees(), vec![2, 1]);
        assert_eq!(g.item_degrees(), vec![2, 1]);
        assert_eq!(g.user_ids().key(1), "u2");
        assert_eq!(g.item_ids().get("i2"), Some(1));
    }

    #[test]
    fn empty_edges_rejected() {
        let edges: [(&str, &str); 0] = [];
        assert!(matches!(
            InteractionGraph::from_edges(&edges),
            Err(DataError::EmptyGraph)
        ));
    }

    #[test]
    fn duplicate_edges_collapse() {
        let g = InteractionGraph::from_index_pairs(2, 2, &[(0, 1), (0, 1), (1, 0)]);
        assert_eq!(g.n_edges(), 2);
        assert!(g.has_edge(0, 1) && !g.has_edge(0, 0));
    }

    #[test]
    fn unknown_key_in_fixed_universe() {
        let mut users = IdMap::new();
        users.intern("a");
        let mut items = IdMap::new();
        items.intern("x");
        let err = InteractionGraph::with_universe(users, items, &[("a", "y")]).unwrap_err();
        assert!(matches!(err, DataError::UnknownKey(k) if k == "y"));
    }
}
