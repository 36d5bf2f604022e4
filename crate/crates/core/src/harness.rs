//! Experiment runner: configuration, prefix tuning, paired multi-seed runs
//! and CSV output.

use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::fs;
use std::hash::Hasher;
use std::io::Write;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bandit::ContextSet;
use crate::env::{EnvSpec, SyntheticEnv};
use crate::error::{Error, Result};
use crate::graph::DEFAULT_DENSITY;
use crate::ingest::{
    binarize_payoffs, build_context_sets, load_item_features, load_movielens, pca_standardize,
    read_rounds_cache, write_rounds_cache, ReplayRound,
};
use crate::policy::{build_policy, Policy, PolicyConfig, PolicyKind, RandomPolicy, RoundRecord};

pub const OUT_DIR_VAR: &str = "CLUB_OUT_DIR";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Synthetic,
    Replay,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamDefaults {
    pub alpha: f64,
    /// Defaults to `alpha`.
    pub alpha2: Option<f64>,
    pub split_prob: f64,
    pub cold_start_fraction: f64,
    pub graph_density: f64,
}

impl Default for ParamDefaults {
    fn default() -> Self {
        Self {
            alpha: 0.25,
            alpha2: None,
            split_prob: 0.2,
            cold_start_fraction: 0.1,
            graph_density: DEFAULT_DENSITY,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grid {
    pub alpha: Vec<f64>,
    /// Absolute deletion scales; when absent, `alpha2_scale` multiplies α.
    pub alpha2: Option<Vec<f64>>,
    pub alpha2_scale: Vec<f64>,
    pub split_prob: Vec<f64>,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            alpha: vec![0.01, 0.05, 0.1, 0.25, 0.5, 1.0, 2.0],
            alpha2: None,
            alpha2_scale: vec![1.0, 0.5, 2.0],
            split_prob: vec![0.1, 0.2, 0.3],
        }
    }
}

impl Grid {
    pub fn single(alpha: f64, alpha2: f64, split_prob: f64) -> Self {
        Self {
            alpha: vec![alpha],
            alpha2: Some(vec![alpha2]),
            alpha2_scale: vec![1.0],
            split_prob: vec![split_prob],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplaySpec {
    /// Tab-separated interaction log.
    pub data: PathBuf,
    /// Pipe-separated item table with genre flags.
    pub items: PathBuf,
    pub cache: Option<PathBuf>,
    #[serde(default = "default_replay_context")]
    pub context_size: usize,
    #[serde(default = "default_variance_fraction")]
    pub variance_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    pub max_rounds: Option<usize>,
}

fn default_replay_context() -> usize {
    25
}

fn default_variance_fraction() -> f64 {
    0.95
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3, 4]
}

fn default_train_fraction() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub policy: PolicyKind,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    /// Total rounds; required for synthetic runs, a cap for replay.
    pub horizon: Option<u64>,
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub params: ParamDefaults,
    #[serde(default)]
    pub grid: Grid,
    pub env: Option<EnvSpec>,
    pub replay: Option<ReplaySpec>,
}

impl ExperimentConfig {
    pub fn synthetic(policy: PolicyKind, env: EnvSpec, horizon: u64) -> Self {
        Self {
            mode: Mode::Synthetic,
            policy,
            seeds: default_seeds(),
            train_fraction: default_train_fraction(),
            horizon: Some(horizon),
            output: None,
            params: ParamDefaults::default(),
            grid: Grid::default(),
            env: Some(env),
            replay: None,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train_fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list is empty".into()));
        }
        let g = &self.grid;
        if g.alpha.is_empty()
            || g.split_prob.is_empty()
            || g.alpha2.as_ref().map_or(g.alpha2_scale.is_empty(), Vec::is_empty)
        {
            return Err(Error::Config("grid lists must be nonempty".into()));
        }
        match self.mode {
            Mode::Synthetic => {
                if self.env.is_none() {
                    return Err(Error::Config("synthetic mode needs an [env] section".into()));
                }
                if self.horizon.is_none() {
                    return Err(Error::Config("synthetic mode needs a horizon".into()));
                }
            }
            Mode::Replay => {
                if self.replay.is_none() {
                    return Err(Error::Config("replay mode needs a [replay] section".into()));
                }
            }
        }
        for p in self.grid_points(1, 1) {
            p.validate()?;
        }
        Ok(())
    }

    fn base_params(&self, dim: usize, horizon: u64) -> PolicyConfig {
        let p = &self.params;
        PolicyConfig {
            alpha: p.alpha,
            alpha2: p.alpha2.unwrap_or(p.alpha),
            split_prob: p.split_prob,
            cold_start_fraction: p.cold_start_fraction,
            horizon,
            dim,
            seed: self.seeds.first().copied().unwrap_or(0),
            graph_density: p.graph_density,
        }
    }

    /// Grid points relevant to the configured policy, α outermost.
    pub fn grid_points(&self, dim: usize, horizon: u64) -> Vec<PolicyConfig> {
        let base = self.base_params(dim, horizon);
        let g = &self.grid;
        let (tunes_alpha, tunes_alpha2, tunes_split) = match self.policy {
            PolicyKind::Club => (true, true, false),
            PolicyKind::Gclub => (true, true, true),
            PolicyKind::LinucbOne | PolicyKind::LinucbInd => (true, false, false),
            PolicyKind::UcbOne | PolicyKind::UcbInd | PolicyKind::Ran => (false, false, false),
        };
        let alphas = if tunes_alpha { g.alpha.clone() } else { vec![base.alpha] };
        let splits = if tunes_split { g.split_prob.clone() } else { vec![base.split_prob] };
        let mut out = Vec::new();
        for &alpha in &alphas {
            let alpha2s: Vec<f64> = match (&g.alpha2, tunes_alpha2) {
                (_, false) => vec![if tunes_alpha { alpha } else { base.alpha2 }],
                (Some(list), true) => list.clone(),
                (None, true) => g.alpha2_scale.iter().map(|s| s * alpha).collect(),
            };
            for &alpha2 in &alpha2s {
                for &split_prob in &splits {
                    out.push(PolicyConfig {
                        alpha,
                        alpha2,
                        split_prob,
                        ..base.clone()
                    });
                }
            }
        }
        out
    }

    /// Output file: explicit override, then the config, then the
    /// `CLUB_OUT_DIR` directory, then the working directory.
    pub fn output_path(&self, explicit: Option<&Path>) -> PathBuf {
        if let Some(p) = explicit {
            return p.to_path_buf();
        }
        if let Some(p) = &self.output {
            return p.clone();
        }
        let file = format!("{}.csv", self.policy);
        match std::env::var_os(OUT_DIR_VAR) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir).join(file),
            _ => PathBuf::from(file),
        }
    }
}

/// A fully materialized round: who arrives, what is offered, and the payoff
/// every candidate would yield.
#[derive(Clone, Debug)]
pub struct Round {
    pub t: u64,
    pub user: usize,
    pub ctx: ContextSet,
    pub payoffs: Vec<f64>,
    pub expected: Vec<f64>,
}

impl Round {
    pub fn regret(&self, chosen: usize) -> f64 {
        let best = self.expected.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (best - self.expected[chosen]).max(0.0)
    }

    fn hash_into(&self, h: &mut DefaultHasher) {
        h.write_u64(self.t);
        h.write_usize(self.user);
        if let Some(items) = self.ctx.items() {
            for &i in items {
                h.write_usize(i);
            }
        }
        for x in self.ctx.vectors() {
            for v in x.iter() {
                h.write_u64(v.to_bits());
            }
        }
        for a in &self.payoffs {
            h.write_u64(a.to_bits());
        }
    }
}

/// Deterministic, randomly addressable round stream.
#[derive(Clone, Debug)]
pub enum RoundSource {
    Synthetic {
        env: Arc<SyntheticEnv>,
        stream_seed: u64,
        horizon: u64,
    },
    Replay {
        rounds: Arc<Vec<ReplayRound>>,
        n_users: usize,
        dim: usize,
    },
}

impl RoundSource {
    pub fn synthetic(env: SyntheticEnv, stream_seed: u64, horizon: u64) -> Self {
        RoundSource::Synthetic {
            env: Arc::new(env),
            stream_seed,
            horizon,
        }
    }

    pub fn replay(rounds: Vec<ReplayRound>, n_users: usize) -> Result<Self> {
        let dim = rounds
            .first()
            .and_then(|r| r.vectors.first())
            .map_or(0, Vec::len);
        let max_user = rounds.iter().map(|r| r.user + 1).max().unwrap_or(0);
        if max_user > n_users {
            return Err(Error::Config(format!(
                "replay rounds reference user {} of {n_users}",
                max_user - 1
            )));
        }
        Ok(RoundSource::Replay {
            rounds: Arc::new(rounds),
            n_users,
            dim,
        })
    }

    pub fn len(&self) -> u64 {
        match self {
            RoundSource::Synthetic { horizon, .. } => *horizon,
            RoundSource::Replay { rounds, .. } => rounds.len() as u64,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_users(&self) -> usize {
        match self {
            RoundSource::Synthetic { env, .. } => env.n(),
            RoundSource::Replay { n_users, .. } => *n_users,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            RoundSource::Synthetic { env, .. } => env.dim(),
            RoundSource::Replay { dim, .. } => *dim,
        }
    }

    pub fn mode(&self) -> Mode {
        match self {
            RoundSource::Synthetic { .. } => Mode::Synthetic,
            RoundSource::Replay { .. } => Mode::Replay,
        }
    }

    /// Round `t`, numbered from 1.
    pub fn round(&self, t: u64) -> Result<Round> {
        if t == 0 || t > self.len() {
            return Err(Error::InvalidInput(format!("round {t} outside 1..={}", self.len())));
        }
        match self {
            RoundSource::Synthetic { env, stream_seed, .. } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*stream_seed);
                rng.set_stream(t);
                let (user, ctx) = env.sample_round(t, &mut rng);
                let payoffs = ctx.vectors().iter().map(|x| env.payoff(user, x, &mut rng)).collect();
                let expected = ctx.vectors().iter().map(|x| env.expected_payoff(user, x)).collect();
                Ok(Round {
                    t,
                    user,
                    ctx,
                    payoffs,
                    expected,
                })
            }
            RoundSource::Replay { rounds, .. } => {
                let r = &rounds[(t - 1) as usize];
                Ok(Round {
                    t,
                    user: r.user,
                    ctx: r.context_set()?,
                    payoffs: r.payoffs.clone(),
                    expected: r.payoffs.clone(),
                })
            }
        }
    }
}

/// Cumulative curves of one policy over one round range.
#[derive(Clone, Debug, PartialEq)]
pub struct RunTrace {
    pub rounds: RangeInclusive<u64>,
    pub cum_regret: Vec<f64>,
    pub cum_payoff: Vec<f64>,
    pub clusters: Vec<usize>,
    pub checksum: u64,
}

impl RunTrace {
    pub fn final_regret(&self) -> f64 {
        self.cum_regret.last().copied().unwrap_or(0.0)
    }

    pub fn final_payoff(&self) -> f64 {
        self.cum_payoff.last().copied().unwrap_or(0.0)
    }
}

/// Replays `rounds` of `source` through `policy`, renumbering them from 1
/// for the policy. `observe` sees every completed round.
pub fn run_rounds(
    policy: &mut dyn Policy,
    source: &RoundSource,
    rounds: RangeInclusive<u64>,
    mut observe: impl FnMut(&RoundRecord),
) -> Result<RunTrace> {
    let start = *rounds.start();
    let count = rounds.clone().count();
    let mut trace = RunTrace {
        rounds: rounds.clone(),
        cum_regret: Vec::with_capacity(count),
        cum_payoff: Vec::with_capacity(count),
        clusters: Vec::with_capacity(count),
        checksum: 0,
    };
    let mut hasher = DefaultHasher::new();
    let (mut regret, mut payoff) = (0.0, 0.0);
    for global in rounds {
        let round = source.round(global)?;
        round.hash_into(&mut hasher);
        let t = global - start + 1;
        let chosen = policy.select(round.user, &round.ctx, t)?;
        let a = round.payoffs[chosen];
        policy.update(round.user, &round.ctx, chosen, a, t)?;
        let r = round.regret(chosen);
        regret += r;
        payoff += a;
        let clusters = policy.cluster_count();
        trace.cum_regret.push(regret);
        trace.cum_payoff.push(payoff);
        trace.clusters.push(clusters);
        observe(&RoundRecord {
            t,
            user: round.user,
            chosen,
            payoff: a,
            regret: Some(r),
            clusters,
        });
    }
    trace.checksum = hasher.finish();
    Ok(trace)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TuningResult {
    pub config: PolicyConfig,
    /// Prefix cumulative regret (synthetic) or negated prefix payoff (replay).
    pub score: f64,
    pub rounds: RangeInclusive<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeedTrace {
    pub seed: u64,
    pub policy: RunTrace,
    pub baseline: RunTrace,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub rounds: u64,
    pub cum_regret: f64,
    pub ran_cum_regret: f64,
    pub regret_ratio: f64,
    pub cum_payoff: f64,
    pub ran_cum_payoff: f64,
    pub ctr: f64,
    pub ran_ctr: f64,
    pub ctr_ratio: f64,
    pub final_clusters: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricTrace {
    pub mode: Mode,
    pub policy: PolicyKind,
    pub tuned: PolicyConfig,
    pub tuning: Vec<TuningResult>,
    pub test_rounds: RangeInclusive<u64>,
    pub seeds: Vec<SeedTrace>,
    pub mean_regret: Vec<f64>,
    pub mean_payoff: Vec<f64>,
    pub ran_mean_regret: Vec<f64>,
    pub ran_mean_payoff: Vec<f64>,
    pub mean_clusters: Vec<f64>,
    pub summary: Summary,
}

fn mean_curve(curves: &[&[f64]]) -> Vec<f64> {
    let len = curves.first().map_or(0, |c| c.len());
    let k = curves.len() as f64;
    (0..len)
        .map(|i| curves.iter().map(|c| c[i]).sum::<f64>() / k)
        .collect()
}

fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        f64::NAN
    } else {
        a / b
    }
}

/// Source for one seed of a configured experiment.
pub fn build_source(cfg: &ExperimentConfig, seed: u64) -> Result<RoundSource> {
    match cfg.mode {
        Mode::Synthetic => {
            let mut spec = cfg
                .env
                .clone()
                .ok_or_else(|| Error::Config("synthetic mode needs an [env] section".into()))?;
            spec.seed = spec.seed.wrapping_add(seed);
            let env = SyntheticEnv::make(&spec)?;
            let horizon = cfg.horizon.unwrap_or(0);
            Ok(RoundSource::synthetic(env, stream_seed(spec.seed), horizon))
        }
        Mode::Replay => {
            let spec = cfg
                .replay
                .as_ref()
                .ok_or_else(|| Error::Config("replay mode needs a [replay] section".into()))?;
            let (mut rounds, n_users) = load_replay(spec)?;
            let cap = cfg.horizon.map(|h| h as usize).into_iter().chain(spec.max_rounds).min();
            if let Some(cap) = cap {
                rounds.truncate(cap);
            }
            RoundSource::replay(rounds, n_users)
        }
    }
}

fn stream_seed(env_seed: u64) -> u64 {
    env_seed ^ 0x5eed_0f5e_ed0f_u64.rotate_left(17)
}

/// Builds replay rounds, reusing the cache when it exists.
pub fn load_replay(spec: &ReplaySpec) -> Result<(Vec<ReplayRound>, usize)> {
    let config_err = |what: &Path, e: Error| Error::Config(format!("cannot load {}: {e}", what.display()));
    if let Some(cache) = &spec.cache {
        if cache.exists() {
            let (rounds, meta) = read_rounds_cache(cache).map_err(|e| config_err(cache, e))?;
            let n_users = meta
                .get("users")
                .and_then(|u| u.parse().ok())
                .unwrap_or_else(|| rounds.iter().map(|r| r.user + 1).max().unwrap_or(0));
            return Ok((rounds, n_users));
        }
    }
    let log = load_movielens(&spec.data).map_err(|e| config_err(&spec.data, e))?;
    let log = binarize_payoffs(&log);
    let raw = load_item_features(&spec.items, &log).map_err(|e| config_err(&spec.items, e))?;
    let table = pca_standardize(&raw, spec.variance_fraction)?;
    let rounds = build_context_sets(&log, &table.features, spec.context_size, spec.seed)?;
    if let Some(cache) = &spec.cache {
        if let Some(dir) = cache.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let meta = BTreeMap::from([
            ("users".to_string(), log.n_users().to_string()),
            ("items".to_string(), log.n_items().to_string()),
            ("events".to_string(), log.len().to_string()),
            ("dim".to_string(), table.dim().to_string()),
            ("context_size".to_string(), spec.context_size.to_string()),
            ("seed".to_string(), spec.seed.to_string()),
        ]);
        write_rounds_cache(cache, &rounds, meta)?;
    }
    Ok((rounds, log.n_users()))
}

/// Number of tuning rounds for a stream of `total` rounds.
pub fn train_len(total: u64, train_fraction: f64) -> u64 {
    ((total as f64) * train_fraction).floor() as u64
}

/// Tunes on the first seed's training prefix, then runs the tuned policy and
/// RAN on the remaining rounds of every seed.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<MetricTrace> {
    cfg.validate()?;
    let sources: Vec<RoundSource> = cfg
        .seeds
        .iter()
        .map(|&s| build_source(cfg, s))
        .collect::<Result<_>>()?;
    run_experiment_on(cfg, &sources)
}

/// As [`run_experiment`] with prebuilt sources, one per configured seed.
pub fn run_experiment_on(cfg: &ExperimentConfig, sources: &[RoundSource]) -> Result<MetricTrace> {
    if sources.len() != cfg.seeds.len() {
        return Err(Error::Config(format!(
            "{} sources for {} seeds",
            sources.len(),
            cfg.seeds.len()
        )));
    }
    let first = &sources[0];
    let total = first.len();
    let n_users = first.n_users();
    let dim = first.dim();
    let train = train_len(total, cfg.train_fraction);
    let mode = first.mode();

    let tuning: Vec<TuningResult> = if train == 0 {
        Vec::new()
    } else {
        cfg.grid_points(dim, train)
            .into_par_iter()
            .map(|pc| {
                let mut policy = build_policy(cfg.policy, &pc, n_users)?;
                let run = run_rounds(policy.as_mut(), first, 1..=train, |_| {})?;
                let score = match mode {
                    Mode::Synthetic => run.final_regret(),
                    Mode::Replay => -run.final_payoff(),
                };
                Ok(TuningResult {
                    config: pc,
                    score,
                    rounds: 1..=train,
                })
            })
            .collect::<Result<_>>()?
    };
    let test_len = total - train;
    let mut tuned = cfg.base_params(dim, test_len);
    let mut best = f64::INFINITY;
    for t in &tuning {
        if t.score < best {
            best = t.score;
            tuned = t.config.clone();
        }
    }
    tuned.horizon = test_len;
    let test_rounds = train + 1..=total;

    let seeds: Vec<SeedTrace> = cfg
        .seeds
        .par_iter()
        .zip(sources.par_iter())
        .map(|(&seed, source)| {
            let pc = PolicyConfig { seed, ..tuned.clone() };
            let mut policy = build_policy(cfg.policy, &pc, n_users)?;
            let run = run_rounds(policy.as_mut(), source, test_rounds.clone(), |_| {})?;
            let mut ran = RandomPolicy::new(seed);
            let baseline = run_rounds(&mut ran, source, test_rounds.clone(), |_| {})?;
            if run.checksum != baseline.checksum {
                return Err(Error::InvalidInput("policy and RAN saw different round streams".into()));
            }
            Ok(SeedTrace {
                seed,
                policy: run,
                baseline,
            })
        })
        .collect::<Result<_>>()?;

    let curves = |f: fn(&SeedTrace) -> &[f64]| mean_curve(&seeds.iter().map(f).collect::<Vec<_>>());
    let mean_regret = curves(|s| &s.policy.cum_regret);
    let mean_payoff = curves(|s| &s.policy.cum_payoff);
    let ran_mean_regret = curves(|s| &s.baseline.cum_regret);
    let ran_mean_payoff = curves(|s| &s.baseline.cum_payoff);
    let k = seeds.len() as f64;
    let mean_clusters: Vec<f64> = (0..test_len as usize)
        .map(|i| seeds.iter().map(|s| s.policy.clusters[i] as f64).sum::<f64>() / k)
        .collect();

    let last = |v: &[f64]| v.last().copied().unwrap_or(0.0);
    let rounds = test_len;
    let per_round = |x: f64| if rounds == 0 { f64::NAN } else { x / rounds as f64 };
    let summary = Summary {
        rounds,
        cum_regret: last(&mean_regret),
        ran_cum_regret: last(&ran_mean_regret),
        regret_ratio: ratio(last(&mean_regret), last(&ran_mean_regret)),
        cum_payoff: last(&mean_payoff),
        ran_cum_payoff: last(&ran_mean_payoff),
        ctr: per_round(last(&mean_payoff)),
        ran_ctr: per_round(last(&ran_mean_payoff)),
        ctr_ratio: ratio(last(&mean_payoff), last(&ran_mean_payoff)),
        final_clusters: last(&mean_clusters),
    };

    Ok(MetricTrace {
        mode,
        policy: cfg.policy,
        tuned,
        tuning,
        test_rounds,
        seeds,
        mean_regret,
        mean_payoff,
        ran_mean_regret,
        ran_mean_payoff,
        mean_clusters,
        summary,
    })
}

/// Writes the seed-averaged trace: a header, one row per test round, then
/// `#`-prefixed summary lines.
pub fn write_csv(trace: &MetricTrace, mut w: impl Write) -> Result<()> {
    let (label, curve, base) = match trace.mode {
        Mode::Synthetic => ("cum_regret", &trace.mean_regret, &trace.ran_mean_regret),
        Mode::Replay => ("cum_payoff", &trace.mean_payoff, &trace.ran_mean_payoff),
    };
    writeln!(w, "t,{label},ratio_vs_ran,m_t")?;
    for (i, (v, b)) in curve.iter().zip(base.iter()).enumerate() {
        writeln!(w, "{},{},{},{}", i + 1, v, ratio(*v, *b), trace.mean_clusters[i])?;
    }
    let s = &trace.summary;
    let seeds: Vec<String> = trace.seeds.iter().map(|s| s.seed.to_string()).collect();
    let checksums: Vec<String> = trace
        .seeds
        .iter()
        .map(|s| format!("{:016x}", s.policy.checksum))
        .collect();
    let tuning_rounds = trace
        .tuning
        .first()
        .map_or("none".to_string(), |t| format!("{}..={}", t.rounds.start(), t.rounds.end()));
    let lines = [
        ("policy", trace.policy.to_string()),
        (
            "mode",
            match trace.mode {
                Mode::Synthetic => "synthetic".into(),
                Mode::Replay => "replay".into(),
            },
        ),
        ("seeds", seeds.join(" ")),
        ("alpha", trace.tuned.alpha.to_string()),
        ("alpha2", trace.tuned.alpha2.to_string()),
        ("split_prob", trace.tuned.split_prob.to_string()),
        ("cold_start_fraction", trace.tuned.cold_start_fraction.to_string()),
        ("grid_points", trace.tuning.len().to_string()),
        ("tuning_rounds", tuning_rounds),
        (
            "test_rounds",
            format!("{}..={}", trace.test_rounds.start(), trace.test_rounds.end()),
        ),
        ("rounds", s.rounds.to_string()),
        ("cum_regret", s.cum_regret.to_string()),
        ("ran_cum_regret", s.ran_cum_regret.to_string()),
        ("regret_ratio", s.regret_ratio.to_string()),
        ("cum_payoff", s.cum_payoff.to_string()),
        ("ran_cum_payoff", s.ran_cum_payoff.to_string()),
        ("ctr", s.ctr.to_string()),
        ("ran_ctr", s.ran_ctr.to_string()),
        ("ctr_ratio", s.ctr_ratio.to_string()),
        ("final_m", s.final_clusters.to_string()),
        ("stream_checksums", checksums.join(" ")),
    ];
    for (k, v) in lines {
        writeln!(w, "# {k}={v}")?;
    }
    Ok(())
}

pub fn emit_csv(trace: &MetricTrace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut buf = Vec::new();
    write_csv(trace, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}
