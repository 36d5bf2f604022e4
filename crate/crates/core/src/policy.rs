//! Per-round decision procedures behind one select/update interface.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bandit::{
    deletion_threshold, select_item, BanditState, ClusterAggregate, ContextSet, LinearEstimate,
};
use crate::error::{Error, Result};
use crate::graph::{SplitEvent, UserGraph, DEFAULT_DENSITY};
use crate::split::{apply_split, bisect_component};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    Club,
    Gclub,
    LinucbOne,
    LinucbInd,
    UcbOne,
    UcbInd,
    Ran,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 7] = [
        PolicyKind::Club,
        PolicyKind::Gclub,
        PolicyKind::LinucbOne,
        PolicyKind::LinucbInd,
        PolicyKind::UcbOne,
        PolicyKind::UcbInd,
        PolicyKind::Ran,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Club => "club",
            PolicyKind::Gclub => "gclub",
            PolicyKind::LinucbOne => "linucb-one",
            PolicyKind::LinucbInd => "linucb-ind",
            PolicyKind::UcbOne => "ucb-one",
            PolicyKind::UcbInd => "ucb-ind",
            PolicyKind::Ran => "ran",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = PolicyKind::ALL.iter().map(|k| k.name()).collect();
                Error::Config(format!("unknown policy {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    /// Exploration scale of the selection bonus.
    pub alpha: f64,
    /// Scale of the edge-deletion radius.
    pub alpha2: f64,
    /// Probability of a cluster-split exploration step (GCLUB only).
    pub split_prob: f64,
    /// Fraction of the horizon during which split exploration is active.
    pub cold_start_fraction: f64,
    pub horizon: u64,
    pub dim: usize,
    pub seed: u64,
    /// Edge probability factor of the initial user graph.
    pub graph_density: f64,
}

impl PolicyConfig {
    pub fn new(dim: usize, horizon: u64) -> Self {
        Self {
            alpha: 0.25,
            alpha2: 0.25,
            split_prob: 0.2,
            cold_start_fraction: 0.1,
            horizon,
            dim,
            seed: 0,
            graph_density: DEFAULT_DENSITY,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.alpha2 > 0.0 && self.alpha2.is_finite()) {
            return Err(Error::Config(format!("alpha2 must be positive, got {}", self.alpha2)));
        }
        if !(0.0..0.5).contains(&self.split_prob) {
            return Err(Error::Config(format!(
                "split_prob must lie in [0, 1/2), got {}",
                self.split_prob
            )));
        }
        if !(0.0..=1.0).contains(&self.cold_start_fraction) {
            return Err(Error::Config(format!(
                "cold_start_fraction must lie in [0, 1], got {}",
                self.cold_start_fraction
            )));
        }
        if self.dim == 0 {
            return Err(Error::Config("dimension must be positive".into()));
        }
        Ok(())
    }
}

/// One completed interaction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub t: u64,
    pub user: usize,
    pub chosen: usize,
    pub payoff: f64,
    pub regret: Option<f64>,
    /// Cluster count after the round.
    pub clusters: usize,
}

/// A bandit policy. `select` picks a candidate; `update` is the post-payoff
/// hook for the same round. Rounds are numbered from 1.
pub trait Policy: Send {
    fn kind(&self) -> PolicyKind;

    fn select(&mut self, user: usize, ctx: &ContextSet, t: u64) -> Result<usize>;

    fn update(&mut self, user: usize, ctx: &ContextSet, chosen: usize, payoff: f64, t: u64)
        -> Result<()>;

    /// Number of user clusters the policy currently distinguishes.
    fn cluster_count(&self) -> usize {
        1
    }
}

pub fn build_policy(kind: PolicyKind, cfg: &PolicyConfig, n_users: usize) -> Result<Box<dyn Policy>> {
    cfg.validate()?;
    if n_users == 0 {
        return Err(Error::Config("no users".into()));
    }
    Ok(match kind {
        PolicyKind::Club => Box::new(ClusteredBandit::club(cfg, n_users)?),
        PolicyKind::Gclub => Box::new(ClusteredBandit::gclub(cfg, n_users)?),
        PolicyKind::LinucbOne => Box::new(LinUcb::one(cfg)),
        PolicyKind::LinucbInd => Box::new(LinUcb::ind(cfg, n_users)),
        PolicyKind::UcbOne => Box::new(Ucb1::one()),
        PolicyKind::UcbInd => Box::new(Ucb1::ind(n_users)),
        PolicyKind::Ran => Box::new(RandomPolicy::new(cfg.seed)),
    })
}

/// How a cluster split came about.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitCause {
    EdgeDeletion,
    Exploration,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitRecord {
    pub t: u64,
    pub cause: SplitCause,
    pub event: SplitEvent,
}

/// CLUB, and GCLUB when `explore` is set.
#[derive(Clone, Debug)]
pub struct ClusteredBandit {
    cfg: PolicyConfig,
    explore: bool,
    states: Vec<BanditState>,
    graph: UserGraph,
    aggregates: Vec<ClusterAggregate>,
    rng: ChaCha8Rng,
    splits: Vec<SplitRecord>,
}

impl ClusteredBandit {
    pub fn club(cfg: &PolicyConfig, n_users: usize) -> Result<Self> {
        Self::new(cfg, n_users, false)
    }

    pub fn gclub(cfg: &PolicyConfig, n_users: usize) -> Result<Self> {
        Self::new(cfg, n_users, true)
    }

    fn new(cfg: &PolicyConfig, n_users: usize, explore: bool) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let graph = UserGraph::init_with_density(n_users, cfg.graph_density, &mut rng)?;
        Self::with_graph(cfg, graph, explore, rng)
    }

    /// Starts from a caller-supplied graph; its components are the initial
    /// clusters.
    pub fn with_graph(cfg: &PolicyConfig, graph: UserGraph, explore: bool, rng: ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let states = vec![BanditState::new(cfg.dim); graph.n()];
        let aggregates = graph
            .clusters()
            .iter()
            .map(|c| ClusterAggregate::build(&states, c.iter().copied()))
            .collect::<Result<_>>()?;
        Ok(Self {
            cfg: cfg.clone(),
            explore,
            states,
            graph,
            aggregates,
            rng,
            splits: Vec::new(),
        })
    }

    pub fn states(&self) -> &[BanditState] {
        &self.states
    }

    pub fn graph(&self) -> &UserGraph {
        &self.graph
    }

    pub fn aggregates(&self) -> &[ClusterAggregate] {
        &self.aggregates
    }

    pub fn splits(&self) -> &[SplitRecord] {
        &self.splits
    }

    fn in_cold_start(&self, t: u64) -> bool {
        (t as f64) <= self.cfg.cold_start_fraction * self.cfg.horizon as f64
    }

    fn record(&mut self, t: u64, cause: SplitCause, event: SplitEvent) {
        self.splits.push(SplitRecord { t, cause, event });
    }

    fn delete_dissimilar_edges(&mut self, user: usize, t: u64) -> Result<()> {
        let states = &self.states;
        let alpha2 = self.cfg.alpha2;
        let radius = |i: usize| deletion_threshold(states[i].serve_count() as f64, alpha2);
        let w_user = LinearEstimate::weight(&states[user]);
        let r_user = radius(user);
        let events = self.graph.delete_edges_for_user(user, |l| {
            let w_l = LinearEstimate::weight(&states[l]);
            (w_user - w_l).norm() > r_user + radius(l)
        })?;
        for ev in events {
            self.rebuild_after(&ev)?;
            self.record(t, SplitCause::EdgeDeletion, ev);
        }
        Ok(())
    }

    fn rebuild_after(&mut self, ev: &SplitEvent) -> Result<()> {
        debug_assert_eq!(ev.new_cluster, self.aggregates.len());
        self.aggregates[ev.cluster] = ClusterAggregate::build(&self.states, ev.retained.iter().copied())?;
        self.aggregates
            .push(ClusterAggregate::build(&self.states, ev.detached.iter().copied())?);
        Ok(())
    }

    /// Splits a random multi-member cluster other than `own`, if one exists.
    fn explore_split(&mut self, own: usize, t: u64) -> Result<()> {
        let eligible: Vec<usize> = self
            .graph
            .clusters()
            .iter()
            .enumerate()
            .filter(|&(j, c)| j != own && c.len() >= 2)
            .map(|(j, _)| j)
            .collect();
        if eligible.is_empty() {
            return Ok(());
        }
        let target = eligible[self.rng.random_range(0..eligible.len())];
        let plan = bisect_component(&self.graph, target, &mut self.rng)?;
        let applied = apply_split(&mut self.graph, &plan, &self.states)?;
        debug_assert_eq!(applied.event.new_cluster, self.aggregates.len());
        self.aggregates[applied.event.cluster] = applied.retained;
        self.aggregates.push(applied.detached);
        self.record(t, SplitCause::Exploration, applied.event);
        Ok(())
    }
}

impl Policy for ClusteredBandit {
    fn kind(&self) -> PolicyKind {
        if self.explore {
            PolicyKind::Gclub
        } else {
            PolicyKind::Club
        }
    }

    fn select(&mut self, user: usize, ctx: &ContextSet, t: u64) -> Result<usize> {
        let j = self.graph.cluster_of(user)?;
        select_item(&self.aggregates[j], ctx.vectors(), t as f64, self.cfg.alpha)
    }

    fn update(&mut self, user: usize, ctx: &ContextSet, chosen: usize, payoff: f64, t: u64) -> Result<()> {
        let x = ctx
            .vectors()
            .get(chosen)
            .ok_or_else(|| Error::InvalidInput(format!("chosen index {chosen} out of range")))?;
        let j = self.graph.cluster_of(user)?;
        self.states[user].rank_one_update(x, payoff)?;
        self.aggregates[j].absorb(x, payoff)?;

        if self.explore && self.in_cold_start(t) && self.rng.random_bool(self.cfg.split_prob) {
            self.explore_split(j, t)
        } else {
            self.delete_dissimilar_edges(user, t)
        }
    }

    fn cluster_count(&self) -> usize {
        self.graph.cluster_count()
    }
}

/// LinUCB with one shared estimator (ONE) or one per user (IND).
#[derive(Clone, Debug)]
pub struct LinUcb {
    alpha: f64,
    shared: bool,
    states: Vec<BanditState>,
}

impl LinUcb {
    pub fn one(cfg: &PolicyConfig) -> Self {
        Self {
            alpha: cfg.alpha,
            shared: true,
            states: vec![BanditState::new(cfg.dim)],
        }
    }

    pub fn ind(cfg: &PolicyConfig, n_users: usize) -> Self {
        Self {
            alpha: cfg.alpha,
            shared: false,
            states: vec![BanditState::new(cfg.dim); n_users],
        }
    }

    fn slot(&self, user: usize) -> Result<usize> {
        if self.shared {
            Ok(0)
        } else if user < self.states.len() {
            Ok(user)
        } else {
            Err(Error::UserOutOfRange {
                id: user,
                n: self.states.len(),
            })
        }
    }

    pub fn states(&self) -> &[BanditState] {
        &self.states
    }
}

impl Policy for LinUcb {
    fn kind(&self) -> PolicyKind {
        if self.shared {
            PolicyKind::LinucbOne
        } else {
            PolicyKind::LinucbInd
        }
    }

    fn select(&mut self, user: usize, ctx: &ContextSet, t: u64) -> Result<usize> {
        let s = self.slot(user)?;
        select_item(&self.states[s], ctx.vectors(), t as f64, self.alpha)
    }

    fn update(&mut self, user: usize, ctx: &ContextSet, chosen: usize, payoff: f64, _t: u64) -> Result<()> {
        let s = self.slot(user)?;
        let x = ctx
            .vectors()
            .get(chosen)
            .ok_or_else(|| Error::InvalidInput(format!("chosen index {chosen} out of range")))?;
        self.states[s].rank_one_update(x, payoff)
    }
}

#[derive(Clone, Debug, Default)]
struct ArmTable {
    stats: HashMap<usize, (f64, u64)>,
    pulls: u64,
}

/// Featureless UCB1 keyed by item id, shared (ONE) or per user (IND).
#[derive(Clone, Debug)]
pub struct Ucb1 {
    shared: bool,
    tables: Vec<ArmTable>,
}

impl Ucb1 {
    pub fn one() -> Self {
        Self {
            shared: true,
            tables: vec![ArmTable::default()],
        }
    }

    pub fn ind(n_users: usize) -> Self {
        Self {
            shared: false,
            tables: vec![ArmTable::default(); n_users],
        }
    }

    fn slot(&self, user: usize) -> Result<usize> {
        if self.shared {
            Ok(0)
        } else if user < self.tables.len() {
            Ok(user)
        } else {
            Err(Error::UserOutOfRange {
                id: user,
                n: self.tables.len(),
            })
        }
    }

    /// Pull count and empirical mean for an item, if it has been pulled.
    pub fn arm(&self, user: usize, item: usize) -> Option<(u64, f64)> {
        let table = &self.tables[self.slot(user).ok()?];
        table.stats.get(&item).map(|&(sum, n)| (n, sum / n as f64))
    }
}

fn item_ids(ctx: &ContextSet) -> Result<&[usize]> {
    ctx.items()
        .ok_or_else(|| Error::InvalidInput("UCB1 needs item ids on every candidate".into()))
}

impl Policy for Ucb1 {
    fn kind(&self) -> PolicyKind {
        if self.shared {
            PolicyKind::UcbOne
        } else {
            PolicyKind::UcbInd
        }
    }

    /// Unseen items first, in candidate order; otherwise the largest
    /// `mean + sqrt(2 ln N / n)` where `N` counts all pulls in the table.
    fn select(&mut self, user: usize, ctx: &ContextSet, _t: u64) -> Result<usize> {
        let items = item_ids(ctx)?;
        let table = &self.tables[self.slot(user)?];
        if let Some(k) = items.iter().position(|id| !table.stats.contains_key(id)) {
            return Ok(k);
        }
        let log_total = (table.pulls as f64).ln();
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (k, id) in items.iter().enumerate() {
            let (sum, n) = table.stats[id];
            let score = sum / n as f64 + (2.0 * log_total / n as f64).sqrt();
            if score > best_score {
                best = k;
                best_score = score;
            }
        }
        Ok(best)
    }

    fn update(&mut self, user: usize, ctx: &ContextSet, chosen: usize, payoff: f64, _t: u64) -> Result<()> {
        let items = item_ids(ctx)?;
        let id = *items
            .get(chosen)
            .ok_or_else(|| Error::InvalidInput(format!("chosen index {chosen} out of range")))?;
        let s = self.slot(user)?;
        let table = &mut self.tables[s];
        let entry = table.stats.entry(id).or_insert((0.0, 0));
        entry.0 += payoff;
        entry.1 += 1;
        table.pulls += 1;
        Ok(())
    }
}

/// Uniformly random choice among the candidates.
#[derive(Clone, Debug)]
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn choose(&mut self, c: usize) -> usize {
        self.rng.random_range(0..c)
    }
}

impl Policy for RandomPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Ran
    }

    fn select(&mut self, _user: usize, ctx: &ContextSet, _t: u64) -> Result<usize> {
        if ctx.is_empty() {
            return Err(Error::Empty("context set"));
        }
        Ok(self.choose(ctx.len()))
    }

    fn update(&mut self, _: usize, _: &ContextSet, _: usize, _: f64, _: u64) -> Result<()> {
        Ok(())
    }
}
