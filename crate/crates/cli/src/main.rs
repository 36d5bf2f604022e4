use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use club_core::env::ArrivalKind;
use club_core::graph::reference::bfs_components;
use club_core::harness::{self, ExperimentConfig, ReplaySpec};
use club_core::{EnvSpec, PolicyKind, UserGraph};

#[derive(Parser)]
#[command(name = "club", version, about = "Online clustering of bandits: simulate, replay, measure")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tune on a training prefix, run every seed, write the CSV trace.
    Run(RunArgs),
    /// Fuzz the decremental connectivity structure against a BFS oracle.
    BenchConnectivity(BenchArgs),
    /// Emit a synthetic experiment config.
    MakeEnv(MakeEnvArgs),
    /// Build replay rounds from a MovieLens-style log and cache them.
    Ingest(IngestArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML).
    config: PathBuf,
    /// Override the configured policy.
    #[arg(long)]
    policy: Option<String>,
    /// Run only these seeds (repeatable).
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    /// Output CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 200)]
    n: usize,
    /// Interleaved deletions and queries.
    #[arg(long, default_value_t = 10_000)]
    ops: usize,
    /// Number of independent graphs.
    #[arg(long, default_value_t = 5)]
    graphs: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct MakeEnvArgs {
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 5)]
    m: usize,
    #[arg(long, default_value_t = 10)]
    d: usize,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long, default_value_t = 0.1)]
    sigma: f64,
    #[arg(long, default_value_t = 10)]
    context_size: usize,
    /// `uniform` or `power-law`.
    #[arg(long, default_value = "uniform")]
    arrivals: String,
    #[arg(long, default_value_t = 1.5)]
    exponent: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "club")]
    policy: String,
    #[arg(long, default_value_t = 20_000)]
    horizon: u64,
    /// Write here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct IngestArgs {
    /// Tab-separated ratings (`u.data`).
    #[arg(long)]
    data: PathBuf,
    /// Pipe-separated item table (`u.item`).
    #[arg(long)]
    items: PathBuf,
    /// Cache file to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 25)]
    context_size: usize,
    #[arg(long, default_value_t = 0.95)]
    variance_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn run(args: RunArgs) -> anyhow::Result<()> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(p) = &args.policy {
        cfg.policy = p.parse()?;
    }
    if !args.seeds.is_empty() {
        cfg.seeds = args.seeds.clone();
    }
    cfg.validate()?;
    let out = cfg.output_path(args.out.as_deref());
    let trace = harness::run_experiment(&cfg)?;
    harness::emit_csv(&trace, &out).with_context(|| format!("writing {}", out.display()))?;
    let s = &trace.summary;
    println!(
        "{} rounds={} cum_regret={:.3} regret_ratio={:.4} ctr={:.4} ctr_ratio={:.4} m={} -> {}",
        trace.policy,
        s.rounds,
        s.cum_regret,
        s.regret_ratio,
        s.ctr,
        s.ctr_ratio,
        s.final_clusters,
        out.display()
    );
    Ok(())
}

fn bench_connectivity(args: BenchArgs) -> anyhow::Result<()> {
    if args.n < 2 {
        bail!("need at least 2 nodes");
    }
    let start = Instant::now();
    let mut deletions = 0usize;
    let mut queries = 0usize;
    for g_idx in 0..args.graphs {
        let mut rng = ChaCha8Rng::seed_from_u64(args.seed.wrapping_add(g_idx));
        let mut g = UserGraph::init_sparsified(args.n, &mut rng)?;
        let mut edges: Vec<(usize, usize)> = g.edges().collect();
        for op in 0..args.ops {
            if op % 2 == 0 && !edges.is_empty() {
                let (a, b) = edges.swap_remove(rng.random_range(0..edges.len()));
                g.delete_edge(a, b)?;
                deletions += 1;
            } else {
                let i = rng.random_range(0..args.n);
                let l = rng.random_range(0..args.n);
                let oracle = bfs_components(args.n, edges.iter().copied());
                let want = oracle.iter().any(|c| c.contains(&i) && c.contains(&l));
                if g.is_connected(i, l)? != want {
                    bail!("graph {g_idx}, op {op}: is_connected({i}, {l}) disagrees with BFS");
                }
                let mut got: Vec<BTreeSet<usize>> = g.components_of();
                got.sort();
                let mut want_parts = oracle;
                want_parts.sort();
                if got != want_parts {
                    bail!("graph {g_idx}, op {op}: components disagree with BFS");
                }
                queries += 1;
            }
        }
    }
    println!(
        "ok: {} graphs, n={}, {deletions} deletions, {queries} queries, {:.3}s",
        args.graphs,
        args.n,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn make_env(args: MakeEnvArgs) -> anyhow::Result<()> {
    let arrivals = match args.arrivals.as_str() {
        "uniform" => ArrivalKind::Uniform,
        "power-law" => ArrivalKind::PowerLaw,
        other => bail!("unknown arrival kind {other:?}; expected uniform or power-law"),
    };
    let mut spec = EnvSpec::new(args.n, args.m, args.d, args.gamma, args.sigma);
    spec.context_size = args.context_size;
    spec.arrivals = arrivals;
    spec.exponent = args.exponent;
    spec.seed = args.seed;
    club_core::SyntheticEnv::make(&spec)?;
    let policy: PolicyKind = args.policy.parse()?;
    let cfg = ExperimentConfig::synthetic(policy, spec, args.horizon);
    let text = cfg.to_toml_string()?;
    match &args.out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display()))?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn ingest(args: IngestArgs) -> anyhow::Result<()> {
    if args.out.exists() {
        fs::remove_file(&args.out).with_context(|| format!("replacing {}", args.out.display()))?;
    }
    let spec = ReplaySpec {
        data: args.data,
        items: args.items,
        cache: Some(args.out.clone()),
        context_size: args.context_size,
        variance_fraction: args.variance_fraction,
        seed: args.seed,
        max_rounds: None,
    };
    let (rounds, users) = harness::load_replay(&spec)?;
    let dim = rounds.first().and_then(|r| r.vectors.first()).map_or(0, Vec::len);
    let widest = rounds.iter().map(|r| r.len()).max().unwrap_or(0);
    println!(
        "{} rounds, {users} users, d={dim}, c_t<={widest} -> {}",
        rounds.len(),
        args.out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::BenchConnectivity(a) => bench_connectivity(a),
        Command::MakeEnv(a) => make_env(a),
        Command::Ingest(a) => ingest(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
