//! The user graph and its decremental connectivity structure.
//!
//! Edges are only ever deleted. A spanning forest is kept alongside the edge
//! set: deleting a non-forest edge cannot change connectivity, while deleting
//! a forest edge triggers two interleaved searches over the forest from both
//! endpoints. The search that finishes first yields the smaller tree piece;
//! its incident edges are then scanned for a replacement. If none exists the
//! component splits and the smaller piece becomes a new cluster.

use std::collections::{BTreeSet, VecDeque};
use std::io::Write;

use rand::Rng;

use crate::error::{Error, Result};

/// Outcome of a deletion that disconnected a cluster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitEvent {
    /// Id of the cluster that was split; it keeps `retained`.
    pub cluster: usize,
    /// Id assigned to the detached part (always the previous cluster count).
    pub new_cluster: usize,
    pub retained: BTreeSet<usize>,
    pub detached: BTreeSet<usize>,
}

#[derive(Clone, Debug)]
pub struct UserGraph {
    adjacency: Vec<BTreeSet<usize>>,
    forest: Vec<BTreeSet<usize>>,
    cluster_index: Vec<usize>,
    clusters: Vec<BTreeSet<usize>>,
    edge_count: usize,
    deletions: u64,
    // search scratch: mark[v] == stamp + side
    mark: Vec<u64>,
    stamp: u64,
}

/// Default edge probability factor: `p = min(1, factor · ln n / n)`.
pub const DEFAULT_DENSITY: f64 = 3.0;

/// Graphs up to this many nodes start complete.
pub const COMPLETE_GRAPH_LIMIT: usize = 32;

impl UserGraph {
    /// Sparsified random initialization with the default density.
    pub fn init_sparsified<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Self> {
        Self::init_with_density(n, DEFAULT_DENSITY, rng)
    }

    /// Erdős–Rényi graph with `p = min(1, density · ln n / n)` plus a random
    /// Hamiltonian path, which guarantees connectivity. Small graphs are
    /// complete.
    pub fn init_with_density<R: Rng + ?Sized>(n: usize, density: f64, rng: &mut R) -> Result<Self> {
        if n == 0 {
            return Err(Error::Empty("user set"));
        }
        if !(density.is_finite() && density > 0.0) {
            return Err(Error::InvalidInput(format!("graph density {density}")));
        }
        if n <= COMPLETE_GRAPH_LIMIT {
            return Ok(Self::complete(n));
        }
        let p = (density * (n as f64).ln() / n as f64).min(1.0);
        let mut edges = Vec::new();
        if p >= 1.0 {
            for i in 0..n {
                for j in i + 1..n {
                    edges.push((i, j));
                }
            }
        } else {
            // Walk the upper triangle with geometric skips.
            let log_q = (1.0 - p).ln();
            for i in 0..n - 1 {
                let mut j = i;
                loop {
                    let u: f64 = rng.random::<f64>();
                    let skip = ((1.0 - u).ln() / log_q).floor();
                    if !skip.is_finite() || j as f64 + 1.0 + skip >= n as f64 {
                        break;
                    }
                    j += 1 + skip as usize;
                    edges.push((i, j));
                }
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        for k in (1..n).rev() {
            order.swap(k, rng.random_range(0..=k));
        }
        edges.extend(order.windows(2).map(|w| (w[0], w[1])));
        Self::from_edges(n, edges)
    }

    pub fn complete(n: usize) -> Self {
        let edges = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j)));
        Self::from_edges(n, edges).expect("complete graph edges are in range")
    }

    /// Graph over `n` nodes with the given undirected edges; duplicates and
    /// self-loops are dropped. Initial clusters are the connected components.
    pub fn from_edges<I>(n: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        if n == 0 {
            return Err(Error::Empty("user set"));
        }
        let mut adjacency = vec![BTreeSet::new(); n];
        let mut edge_count = 0;
        for (a, b) in edges {
            for id in [a, b] {
                if id >= n {
                    return Err(Error::UserOutOfRange { id, n });
                }
            }
            if a != b && adjacency[a].insert(b) {
                adjacency[b].insert(a);
                edge_count += 1;
            }
        }

        let mut forest = vec![BTreeSet::new(); n];
        let mut cluster_index = vec![usize::MAX; n];
        let mut clusters = Vec::new();
        let mut queue = VecDeque::new();
        for root in 0..n {
            if cluster_index[root] != usize::MAX {
                continue;
            }
            let id = clusters.len();
            let mut members = BTreeSet::new();
            cluster_index[root] = id;
            queue.push_back(root);
            while let Some(v) = queue.pop_front() {
                members.insert(v);
                for &w in &adjacency[v] {
                    if cluster_index[w] == usize::MAX {
                        cluster_index[w] = id;
                        forest[v].insert(w);
                        forest[w].insert(v);
                        queue.push_back(w);
                    }
                }
            }
            clusters.push(members);
        }

        Ok(Self {
            adjacency,
            forest,
            cluster_index,
            clusters,
            edge_count,
            deletions: 0,
            mark: vec![0; n],
            stamp: 0,
        })
    }

    pub fn n(&self) -> usize {
        self.adjacency.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    /// Number of edges deleted so far; changes whenever the edge set does.
    pub fn version(&self) -> u64 {
        self.deletions
    }

    /// Current number of clusters `m_t`.
    pub fn cluster_count(&self) -> usize {
        self.clusters.len()
    }

    pub fn cluster_of(&self, i: usize) -> Result<usize> {
        self.check(i)?;
        Ok(self.cluster_index[i])
    }

    pub fn cluster_index(&self) -> &[usize] {
        &self.cluster_index
    }

    pub fn cluster(&self, id: usize) -> Option<&BTreeSet<usize>> {
        self.clusters.get(id)
    }

    pub fn clusters(&self) -> &[BTreeSet<usize>] {
        &self.clusters
    }

    /// Snapshot of the current clusters, indexed by cluster id.
    pub fn components_of(&self) -> Vec<BTreeSet<usize>> {
        self.clusters.clone()
    }

    pub fn neighbors(&self, i: usize) -> Result<&BTreeSet<usize>> {
        self.check(i)?;
        Ok(&self.adjacency[i])
    }

    /// Neighbor set of `i`; panics when `i` is out of range.
    pub fn adjacency_of(&self, i: usize) -> &BTreeSet<usize> {
        &self.adjacency[i]
    }

    pub fn has_edge(&self, i: usize, l: usize) -> bool {
        self.adjacency.get(i).is_some_and(|s| s.contains(&l))
    }

    /// All edges as `(low, high)` pairs in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(i, s)| s.range(i + 1..).map(move |&j| (i, j)))
    }

    pub fn is_connected(&self, i: usize, l: usize) -> Result<bool> {
        self.check(i)?;
        self.check(l)?;
        Ok(self.cluster_index[i] == self.cluster_index[l])
    }

    /// Removes edge `(i, l)` if present. Returns the split it caused, if any.
    pub fn delete_edge(&mut self, i: usize, l: usize) -> Result<Option<SplitEvent>> {
        self.check(i)?;
        self.check(l)?;
        if !self.adjacency[i].remove(&l) {
            return Ok(None);
        }
        self.adjacency[l].remove(&i);
        self.edge_count -= 1;
        self.deletions += 1;

        if !self.forest[i].remove(&l) {
            return Ok(None);
        }
        self.forest[l].remove(&i);

        let (piece, piece_root) = self.smaller_tree_piece(i, l);
        let piece_mark = self.mark[piece_root];
        for &v in &piece {
            if let Some(&w) = self.adjacency[v]
                .iter()
                .find(|&&w| self.mark[w] != piece_mark)
            {
                self.forest[v].insert(w);
                self.forest[w].insert(v);
                return Ok(None);
            }
        }

        let old = self.cluster_index[i];
        let new_cluster = self.clusters.len();
        for &v in &piece {
            self.cluster_index[v] = new_cluster;
            self.clusters[old].remove(&v);
        }
        let detached: BTreeSet<usize> = piece.into_iter().collect();
        self.clusters.push(detached.clone());
        Ok(Some(SplitEvent {
            cluster: old,
            new_cluster,
            retained: self.clusters[old].clone(),
            detached,
        }))
    }

    /// Deletes every edge `(i, ℓ)` whose neighbor satisfies `should_delete`,
    /// visiting neighbors in increasing id order.
    pub fn delete_edges_for_user<F>(&mut self, i: usize, mut should_delete: F) -> Result<Vec<SplitEvent>>
    where
        F: FnMut(usize) -> bool,
    {
        self.check(i)?;
        let doomed: Vec<usize> = self.adjacency[i]
            .iter()
            .copied()
            .filter(|&l| should_delete(l))
            .collect();
        let mut events = Vec::new();
        for l in doomed {
            if let Some(ev) = self.delete_edge(i, l)? {
                events.push(ev);
            }
        }
        Ok(events)
    }

    /// Writes one `i j` line per edge.
    pub fn write_edge_list<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (i, j) in self.edges() {
            writeln!(out, "{i} {j}")?;
        }
        Ok(())
    }

    fn check(&self, id: usize) -> Result<()> {
        if id < self.n() {
            Ok(())
        } else {
            Err(Error::UserOutOfRange { id, n: self.n() })
        }
    }

    /// Interleaved forest searches from `a` and `b` (already disconnected in
    /// the forest). Returns the nodes of whichever tree is exhausted first,
    /// plus a node of it whose mark identifies the piece.
    fn smaller_tree_piece(&mut self, a: usize, b: usize) -> (Vec<usize>, usize) {
        self.stamp += 2;
        let stamp = self.stamp;
        let mut sides = [
            (VecDeque::from([a]), vec![a]),
            (VecDeque::from([b]), vec![b]),
        ];
        self.mark[a] = stamp;
        self.mark[b] = stamp + 1;
        loop {
            for (side, (queue, seen)) in sides.iter_mut().enumerate() {
                let Some(v) = queue.pop_front() else {
                    let root = seen[0];
                    return (std::mem::take(seen), root);
                };
                for &w in &self.forest[v] {
                    if self.mark[w] != stamp + side as u64 {
                        self.mark[w] = stamp + side as u64;
                        queue.push_back(w);
                        seen.push(w);
                    }
                }
            }
        }
    }
}

/// From-scratch reference answers, independent of the forest bookkeeping.
pub mod reference {
    use std::collections::{BTreeSet, VecDeque};

    /// Connected components by breadth-first search, as sorted member sets
    /// ordered by their smallest member.
    pub fn bfs_components<I>(n: usize, edges: I) -> Vec<BTreeSet<usize>>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut adj = vec![Vec::new(); n];
        for (a, b) in edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut seen = vec![false; n];
        let mut out = Vec::new();
        for root in 0..n {
            if seen[root] {
                continue;
            }
            seen[root] = true;
            let mut comp = BTreeSet::new();
            let mut queue = VecDeque::from([root]);
            while let Some(v) = queue.pop_front() {
                comp.insert(v);
                for &w in &adj[v] {
                    if !seen[w] {
                        seen[w] = true;
                        queue.push_back(w);
                    }
                }
            }
            out.push(comp);
        }
        out
    }

    /// Puts a partition into the canonical order used by `bfs_components`.
    pub fn canonical(mut parts: Vec<BTreeSet<usize>>) -> Vec<BTreeSet<usize>> {
        parts.sort_by_key(|p| p.first().copied());
        parts
    }
}
