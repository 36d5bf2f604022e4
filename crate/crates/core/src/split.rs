//! Exploratory two-way split of a cluster.
//!
//! The bisection is spectral: the Fiedler vector of the cluster's Laplacian
//! is found by power iteration on `cI − L` with the constant vector
//! projected out, and nodes are split at the median of their Fiedler value.
//! Small clusters, or iterations that fail to converge, fall back to halving
//! a breadth-first order. Both parts are then made internally connected so
//! that cutting the crossing edges creates exactly one new cluster.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::Rng;

use crate::bandit::{BanditState, ClusterAggregate};
use crate::error::{Error, Result};
use crate::graph::{SplitEvent, UserGraph};

pub const FIEDLER_TOLERANCE: f64 = 1e-6;
pub const FIEDLER_MAX_ITERATIONS: usize = 500;
/// Clusters smaller than this are split by breadth-first order.
pub const SPECTRAL_MIN_SIZE: usize = 4;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitPlan {
    pub target_cluster: usize,
    pub part_a: BTreeSet<usize>,
    pub part_b: BTreeSet<usize>,
    pub cut_edges: Vec<(usize, usize)>,
    /// Graph version the plan was computed against.
    pub graph_version: u64,
}

/// Result of applying a plan: the graph's split event and the rebuilt
/// aggregates for the retained and detached parts.
#[derive(Clone, Debug)]
pub struct AppliedSplit {
    pub event: SplitEvent,
    pub retained: ClusterAggregate,
    pub detached: ClusterAggregate,
}

/// Which route produced a bisection.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BisectionMethod {
    Spectral,
    BreadthFirst,
}

pub fn bisect_component<R: Rng + ?Sized>(
    g: &UserGraph,
    cluster: usize,
    rng: &mut R,
) -> Result<SplitPlan> {
    bisect_component_traced(g, cluster, rng).map(|(plan, _)| plan)
}

/// Like [`bisect_component`], also reporting which route was taken.
pub fn bisect_component_traced<R: Rng + ?Sized>(
    g: &UserGraph,
    cluster: usize,
    rng: &mut R,
) -> Result<(SplitPlan, BisectionMethod)> {
    let members = g
        .cluster(cluster)
        .ok_or_else(|| Error::InvalidInput(format!("no cluster {cluster}")))?;
    if members.len() < 2 {
        return Err(Error::SingletonCluster(cluster));
    }
    let nodes: Vec<usize> = members.iter().copied().collect();
    let local: BTreeMap<usize, usize> = nodes.iter().enumerate().map(|(k, &v)| (v, k)).collect();
    let adj: Vec<Vec<usize>> = nodes
        .iter()
        .map(|&v| g.adjacency_of(v).iter().map(|w| local[w]).collect())
        .collect();

    let spectral = if nodes.len() >= SPECTRAL_MIN_SIZE {
        fiedler_vector(&adj, rng)
    } else {
        None
    };
    let (mut order, method) = match spectral {
        Some(f) => {
            let mut order: Vec<usize> = (0..nodes.len()).collect();
            order.sort_by(|&a, &b| f[a].total_cmp(&f[b]).then(a.cmp(&b)));
            (order, BisectionMethod::Spectral)
        }
        None => (bfs_order(&adj, 0), BisectionMethod::BreadthFirst),
    };
    let half = nodes.len().div_ceil(2);
    let rest = order.split_off(half);
    let (a, b) = make_parts_connected(&adj, order, rest);

    let part_a: BTreeSet<usize> = a.iter().map(|&k| nodes[k]).collect();
    let part_b: BTreeSet<usize> = b.iter().map(|&k| nodes[k]).collect();
    let cut_edges = crossing_edges(g, &part_a, &part_b);
    Ok((
        SplitPlan {
            target_cluster: cluster,
            part_a,
            part_b,
            cut_edges,
            graph_version: g.version(),
        },
        method,
    ))
}

/// Removes the plan's cut edges and rebuilds both aggregates from member
/// statistics.
pub fn apply_split(
    g: &mut UserGraph,
    plan: &SplitPlan,
    states: &[BanditState],
) -> Result<AppliedSplit> {
    if plan.graph_version != g.version() {
        return Err(Error::StalePlan("graph changed since the plan was made".into()));
    }
    let members = g
        .cluster(plan.target_cluster)
        .ok_or_else(|| Error::StalePlan(format!("cluster {} is gone", plan.target_cluster)))?;
    if plan.part_a.is_empty() || plan.part_b.is_empty() || !plan.part_a.is_disjoint(&plan.part_b) {
        return Err(Error::StalePlan("parts must be nonempty and disjoint".into()));
    }
    let union: BTreeSet<usize> = plan.part_a.union(&plan.part_b).copied().collect();
    if &union != members {
        return Err(Error::StalePlan("cluster membership changed".into()));
    }
    if crossing_edges(g, &plan.part_a, &plan.part_b) != plan.cut_edges {
        return Err(Error::StalePlan("cut edges no longer match the graph".into()));
    }
    for part in [&plan.part_a, &plan.part_b] {
        if !induced_connected(g, part) {
            return Err(Error::StalePlan("a part is not internally connected".into()));
        }
    }

    let mut events = Vec::new();
    for &(a, b) in &plan.cut_edges {
        if let Some(ev) = g.delete_edge(a, b)? {
            events.push(ev);
        }
    }
    debug_assert_eq!(events.len(), 1);
    let event = events
        .pop()
        .ok_or_else(|| Error::StalePlan("cutting the plan did not split the cluster".into()))?;
    let retained = ClusterAggregate::build(states, event.retained.iter().copied())?;
    let detached = ClusterAggregate::build(states, event.detached.iter().copied())?;
    Ok(AppliedSplit {
        event,
        retained,
        detached,
    })
}

/// Edges with one endpoint in each part, as `(low, high)` pairs, sorted.
pub fn crossing_edges(
    g: &UserGraph,
    part_a: &BTreeSet<usize>,
    part_b: &BTreeSet<usize>,
) -> Vec<(usize, usize)> {
    let mut cut: Vec<(usize, usize)> = part_a
        .iter()
        .flat_map(|&v| {
            g.adjacency_of(v)
                .iter()
                .filter(|w| part_b.contains(w))
                .map(move |&w| (v.min(w), v.max(w)))
        })
        .collect();
    cut.sort_unstable();
    cut
}

fn induced_connected(g: &UserGraph, part: &BTreeSet<usize>) -> bool {
    let Some(&root) = part.first() else {
        return false;
    };
    let mut seen = BTreeSet::from([root]);
    let mut queue = VecDeque::from([root]);
    while let Some(v) = queue.pop_front() {
        for &w in g.adjacency_of(v) {
            if part.contains(&w) && seen.insert(w) {
                queue.push_back(w);
            }
        }
    }
    seen.len() == part.len()
}

/// Fiedler vector over a connected local graph, or `None` when the power
/// iteration does not converge.
fn fiedler_vector<R: Rng + ?Sized>(adj: &[Vec<usize>], rng: &mut R) -> Option<Vec<f64>> {
    let n = adj.len();
    // λ_max(L) ≤ max over edges of deg(u) + deg(v)
    let shift = adj
        .iter()
        .enumerate()
        .flat_map(|(u, nb)| nb.iter().map(move |&v| (u, v)))
        .map(|(u, v)| adj[u].len() + adj[v].len())
        .max()
        .unwrap_or(0) as f64
        + 1.0;

    let laplacian = |v: &[f64], out: &mut [f64]| {
        for (u, nb) in adj.iter().enumerate() {
            out[u] = nb.len() as f64 * v[u] - nb.iter().map(|&w| v[w]).sum::<f64>();
        }
    };
    let deflate_normalize = |v: &mut [f64]| -> bool {
        let mean = v.iter().sum::<f64>() / n as f64;
        v.iter_mut().for_each(|x| *x -= mean);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-300 {
            return false;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        true
    };

    let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    if !deflate_normalize(&mut v) {
        return None;
    }
    let mut lv = vec![0.0; n];
    let mut next = vec![0.0; n];
    for _ in 0..FIEDLER_MAX_ITERATIONS {
        laplacian(&v, &mut lv);
        for u in 0..n {
            next[u] = shift * v[u] - lv[u];
        }
        if !deflate_normalize(&mut next) {
            return None;
        }
        let delta = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        std::mem::swap(&mut v, &mut next);
        if delta < FIEDLER_TOLERANCE {
            if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
                if *first < 0.0 {
                    v.iter_mut().for_each(|x| *x = -*x);
                }
            }
            return Some(v);
        }
    }
    None
}

fn bfs_order(adj: &[Vec<usize>], root: usize) -> Vec<usize> {
    let mut seen = vec![false; adj.len()];
    let mut order = Vec::with_capacity(adj.len());
    let mut queue = VecDeque::from([root]);
    seen[root] = true;
    while let Some(v) = queue.pop_front() {
        order.push(v);
        let mut nb = adj[v].clone();
        nb.sort_unstable();
        for w in nb {
            if !seen[w] {
                seen[w] = true;
                queue.push_back(w);
            }
        }
    }
    order
}

/// Connected pieces of the subgraph induced by `part`, largest first (ties
/// by smallest member).
fn pieces(adj: &[Vec<usize>], part: &[usize]) -> Vec<Vec<usize>> {
    let inside: BTreeSet<usize> = part.iter().copied().collect();
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for &root in &inside {
        if !seen.insert(root) {
            continue;
        }
        let mut piece = vec![root];
        let mut queue = VecDeque::from([root]);
        while let Some(v) = queue.pop_front() {
            for &w in &adj[v] {
                if inside.contains(&w) && seen.insert(w) {
                    piece.push(w);
                    queue.push_back(w);
                }
            }
        }
        piece.sort_unstable();
        out.push(piece);
    }
    out.sort_by(|x, y| y.len().cmp(&x.len()).then(x[0].cmp(&y[0])));
    out
}

/// Keeps the largest piece of `a`; everything else goes to `b`. Then keeps
/// only the largest piece of `b`, handing its other pieces back to `a`.
/// Each leftover piece of `b` touches `a` because the whole graph is
/// connected, so both results are connected and nonempty.
fn make_parts_connected(
    adj: &[Vec<usize>],
    a: Vec<usize>,
    b: Vec<usize>,
) -> (Vec<usize>, Vec<usize>) {
    let mut a_pieces = pieces(adj, &a).into_iter();
    let mut new_a = a_pieces.next().unwrap_or_default();
    let mut new_b = b;
    new_b.extend(a_pieces.flatten());

    let mut b_pieces = pieces(adj, &new_b).into_iter();
    let kept_b = b_pieces.next().unwrap_or_default();
    new_a.extend(b_pieces.flatten());
    new_a.sort_unstable();
    (new_a, kept_b)
}
