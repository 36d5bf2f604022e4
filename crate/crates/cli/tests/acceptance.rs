//! Acceptance run. Each criterion prints one PASS/FAIL/SKIP line; the test
//! fails if any required criterion fails.

use std::collections::{BTreeSet, VecDeque};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use club_core::env::ArrivalKind;
use club_core::harness::{build_source, run_experiment, run_rounds, ExperimentConfig, Grid, Mode, ReplaySpec, RoundSource};
use club_core::ingest::{
    binarize_payoffs, build_context_sets, load_item_features, load_movielens, pca_standardize, write_movielens_fixture,
};
use club_core::policy::{ClusteredBandit, RandomPolicy};
use club_core::split::{apply_split, bisect_component};
use club_core::{
    build_policy, BanditState, ClusterAggregate, EnvSpec, Matrix, Policy, PolicyConfig, PolicyKind, UserGraph, Vector,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(PartialEq)]
enum Verdict {
    Pass,
    Fail,
    Skip,
}

struct Outcome {
    id: u32,
    verdict: Verdict,
    required: bool,
    detail: String,
}

fn outcome(id: u32, pass: bool, detail: String) -> Outcome {
    Outcome {
        id,
        verdict: if pass { Verdict::Pass } else { Verdict::Fail },
        required: true,
        detail,
    }
}

fn ari(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0u64; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let c2 = |v: u64| (v * v.saturating_sub(1)) as f64 / 2.0;
    let sum_ij: f64 = table.iter().flatten().map(|&v| c2(v)).sum();
    let sum_a: f64 = table.iter().map(|r| c2(r.iter().sum())).sum();
    let sum_b: f64 = (0..kb).map(|j| c2(table.iter().map(|r| r[j]).sum())).sum();
    let total = c2(n as u64);
    let expected = sum_a * sum_b / total;
    let max = (sum_a + sum_b) / 2.0;
    if max == expected {
        1.0
    } else {
        (sum_ij - expected) / (max - expected)
    }
}

fn labels_of(parts: &[BTreeSet<usize>], n: usize) -> Vec<usize> {
    let mut out = vec![0; n];
    for (k, p) in parts.iter().enumerate() {
        for &i in p {
            out[i] = k;
        }
    }
    out
}

fn bfs_labels(n: usize, edges: &BTreeSet<(usize, usize)>) -> Vec<usize> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut label = vec![usize::MAX; n];
    let mut next = 0;
    for s in 0..n {
        if label[s] != usize::MAX {
            continue;
        }
        label[s] = next;
        let mut q = VecDeque::from([s]);
        while let Some(u) = q.pop_front() {
            for &v in &adj[u] {
                if label[v] == usize::MAX {
                    label[v] = next;
                    q.push_back(v);
                }
            }
        }
        next += 1;
    }
    label
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let d = 10;
    let mut state = BanditState::new(d);
    for _ in 0..1000 {
        let x = Vector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
        state.rank_one_update(&x, rng.random_range(-1.0..1.0)).unwrap();
    }
    let direct = state.corr().clone().try_inverse().unwrap();
    let dev = (state.gram().inv_corr() - direct).amax();
    let elapsed = start.elapsed();
    outcome(1, dev < 1e-9 && elapsed < Duration::from_secs(1), format!("max dev {dev:.2e}, {elapsed:.2?}"))
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut bad = 0usize;
    let mut answers = 0usize;
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 200;
        let mut g = UserGraph::init_sparsified(n, &mut rng).unwrap();
        let mut edges: BTreeSet<(usize, usize)> = g.edges().collect();
        let mut pool: Vec<(usize, usize)> = edges.iter().copied().collect();
        let mut label = bfs_labels(n, &edges);
        for op in 0..10_000 {
            if op % 2 == 0 && !pool.is_empty() {
                let (a, b) = pool.swap_remove(rng.random_range(0..pool.len()));
                g.delete_edge(a, b).unwrap();
                edges.remove(&(a, b));
                label = bfs_labels(n, &edges);
            } else if op % 10 == 1 {
                let got: BTreeSet<BTreeSet<usize>> = g.components_of().into_iter().collect();
                let k = label.iter().max().unwrap() + 1;
                let mut want = vec![BTreeSet::new(); k];
                for (i, &l) in label.iter().enumerate() {
                    want[l].insert(i);
                }
                bad += usize::from(got != want.into_iter().collect());
                answers += 1;
            } else {
                let (i, l) = (rng.random_range(0..n), rng.random_range(0..n));
                bad += usize::from(g.is_connected(i, l).unwrap() != (label[i] == label[l]));
                answers += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        2,
        bad == 0 && elapsed < Duration::from_secs(10),
        format!("{bad} wrong of {answers} answers over 3 graphs, {elapsed:.2?}"),
    )
}

fn criterion_3() -> Outcome {
    let d = 4;
    let mut worst: f64 = 0.0;
    for trial in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
        let n = rng.random_range(2..80);
        let mut g = UserGraph::init_with_density(n, 2.0, &mut rng).unwrap();
        let mut states = vec![BanditState::new(d); n];
        for _ in 0..n * 6 {
            let i = rng.random_range(0..n);
            let x = Vector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
            states[i].rank_one_update(&x, rng.random_range(-1.0..1.0)).unwrap();
        }
        let id = Matrix::identity(d, d);
        let start = rng.random_range(0..n);
        let cluster = g.cluster_of(start).unwrap();
        let members = g.cluster(cluster).unwrap().clone();
        if members.len() < 2 {
            continue;
        }
        let whole = ClusterAggregate::build(&states, members.iter().copied()).unwrap();
        let plan = bisect_component(&g, cluster, &mut rng).unwrap();
        let applied = apply_split(&mut g, &plan, &states).unwrap();
        let m = (applied.retained.corr() - &id) + (applied.detached.corr() - &id) - (whole.corr() - &id);
        let b = applied.retained.bias() + applied.detached.bias() - whole.bias();
        worst = worst.max(m.amax()).max(b.amax());
    }
    outcome(3, worst < 1e-9, format!("worst drift {worst:.2e} over 100 trials"))
}

fn recovery_env() -> EnvSpec {
    let mut spec = EnvSpec::new(100, 5, 10, 1.0, 0.1);
    spec.context_size = 10;
    spec.arrivals = ArrivalKind::Uniform;
    spec
}

struct RecoveryRun {
    ari: f64,
    regret: f64,
    elapsed: Duration,
}

fn recovery_run(seed: u64, alpha2: f64) -> RecoveryRun {
    let cfg = ExperimentConfig::synthetic(PolicyKind::Club, recovery_env(), 20_000);
    let start = Instant::now();
    let src = build_source(&cfg, seed).unwrap();
    let RoundSource::Synthetic { env, .. } = &src else { unreachable!() };
    let truth = labels_of(&env.true_partition(), 100);
    let pc = PolicyConfig {
        alpha: 0.25,
        alpha2,
        seed,
        graph_density: 100.0,
        ..PolicyConfig::new(10, 20_000)
    };
    let mut club = ClusteredBandit::club(&pc, 100).unwrap();
    let run = run_rounds(&mut club, &src, 1..=20_000, |_| {}).unwrap();
    let found = labels_of(club.graph().clusters(), 100);
    RecoveryRun {
        ari: ari(&truth, &found),
        regret: run.final_regret(),
        elapsed: start.elapsed(),
    }
}

fn criterion_4() -> Outcome {
    // α₂ chosen on held-out seeds 100..105 by recovery count, ties to the
    // smaller value; evaluation uses seeds 0..5.
    let grid = [0.25, 0.5, 1.0, 2.0];
    let mut best = (0usize, grid[0]);
    for &a2 in &grid {
        let hits = (100..105u64).filter(|&s| recovery_run(s, a2).ari == 1.0).count();
        if hits > best.0 {
            best = (hits, a2);
        }
    }
    let alpha2 = best.1;
    let runs: Vec<RecoveryRun> = (0..5u64).map(|s| recovery_run(s, alpha2)).collect();
    let exact = runs.iter().filter(|r| r.ari == 1.0).count();
    let slowest = runs.iter().map(|r| r.elapsed).max().unwrap();
    let aris: Vec<String> = runs.iter().map(|r| format!("{:.3}", r.ari)).collect();
    let mean_regret = runs.iter().map(|r| r.regret).sum::<f64>() / 5.0;
    outcome(
        4,
        exact >= 4 && slowest < Duration::from_secs(60),
        format!(
            "alpha2={alpha2} (held-out {}/5), ARI [{}], exact {exact}/5, mean regret {mean_regret:.0}, slowest seed {slowest:.2?}",
            best.0,
            aris.join(", ")
        ),
    )
}

fn harness_regrets(kind: PolicyKind, spec: &EnvSpec, horizon: u64, grid: Option<Grid>) -> (Vec<f64>, f64) {
    let mut cfg = ExperimentConfig::synthetic(kind, spec.clone(), horizon);
    if let Some(g) = grid {
        cfg.grid = g;
    }
    let trace = run_experiment(&cfg).unwrap();
    let per_seed = trace.seeds.iter().map(|s| s.policy.final_regret()).collect();
    (per_seed, trace.summary.regret_ratio)
}

fn fmt(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.0}")).collect::<Vec<_>>().join(", ")
}

fn criterion_5() -> Outcome {
    let spec = recovery_env();
    let (club, club_ratio) = harness_regrets(PolicyKind::Club, &spec, 20_000, None);
    let (ind, ind_ratio) = harness_regrets(PolicyKind::LinucbInd, &spec, 20_000, None);
    let (one, one_ratio) = harness_regrets(PolicyKind::LinucbOne, &spec, 20_000, None);
    let (_, gclub_ratio) = harness_regrets(PolicyKind::Gclub, &spec, 20_000, None);
    let wins = (0..5).filter(|&i| club[i] < ind[i] && club[i] < one[i]).count();
    let ratios = [club_ratio, gclub_ratio, ind_ratio, one_ratio];
    let all_below = ratios.iter().all(|&r| r < 0.9);
    outcome(
        5,
        wins >= 4 && all_below,
        format!(
            "club [{}] ind [{}] one [{}], club best in {wins}/5; ratios club {:.3} gclub {:.3} ind {:.3} one {:.3}",
            fmt(&club),
            fmt(&ind),
            fmt(&one),
            ratios[0],
            ratios[1],
            ratios[2],
            ratios[3]
        ),
    )
}

fn criterion_6() -> Outcome {
    let mut spec = EnvSpec::new(200, 8, 10, 0.8, 0.1);
    spec.context_size = 10;
    spec.arrivals = ArrivalKind::PowerLaw;
    spec.exponent = 1.5;
    let grid = Grid {
        split_prob: vec![0.2],
        ..Grid::default()
    };
    let (club, _) = harness_regrets(PolicyKind::Club, &spec, 30_000, Some(grid.clone()));
    let (gclub, _) = harness_regrets(PolicyKind::Gclub, &spec, 30_000, Some(grid));
    let wins = (0..5).filter(|&i| gclub[i] <= club[i]).count();
    let mut o = outcome(6, wins >= 3, format!("gclub [{}] club [{}], gclub <= club in {wins}/5", fmt(&gclub), fmt(&club)));
    // A loose stochastic check: reported, never fatal.
    o.required = false;
    o
}

fn criterion_7() -> Outcome {
    let mut same = 0;
    for seed in 0..3u64 {
        let mut spec = EnvSpec::new(50, 5, 8, 1.0, 0.1);
        spec.seed = seed;
        let cfg = ExperimentConfig::synthetic(PolicyKind::Club, spec, 1000);
        let src = build_source(&cfg, seed).unwrap();
        let pc = PolicyConfig {
            split_prob: 0.0,
            seed,
            ..PolicyConfig::new(8, 1000)
        };
        let mut club = build_policy(PolicyKind::Club, &pc, 50).unwrap();
        let mut gclub = build_policy(PolicyKind::Gclub, &pc, 50).unwrap();
        let mut a = Vec::new();
        let mut b = Vec::new();
        run_rounds(club.as_mut(), &src, 1..=1000, |r| a.push(r.clone())).unwrap();
        run_rounds(gclub.as_mut(), &src, 1..=1000, |r| b.push(r.clone())).unwrap();
        same += usize::from(a == b);
    }
    outcome(7, same == 3, format!("{same}/3 seeds trajectory-identical"))
}

fn movielens_dir() -> Option<PathBuf> {
    let candidates = [
        std::env::var_os("CLUB_MOVIELENS_DIR").map(PathBuf::from),
        Some(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/ml-100k")),
    ];
    candidates
        .into_iter()
        .flatten()
        .find(|d| d.join("u.data").is_file() && d.join("u.item").is_file())
}

struct ReplayStats {
    events: usize,
    users: usize,
    items: usize,
    rounds: usize,
    widest: usize,
    ran_ctr: f64,
    /// Mean of 1/c_t over rounds and three binomial standard deviations.
    expected_ctr: f64,
    tol: f64,
}

/// Structure checks shared by the real dataset and the fixture.
fn replay_checks(data: &Path, items: &Path) -> ReplayStats {
    let log = binarize_payoffs(&load_movielens(data).unwrap());
    let raw = load_item_features(items, &log).unwrap();
    let table = pca_standardize(&raw, 0.95).unwrap();
    let rounds = build_context_sets(&log, &table.features, 25, 0).unwrap();
    let widest = rounds.iter().map(|r| r.len()).max().unwrap_or(0);
    let mut ran = RandomPolicy::new(0);
    let (mut clicks, mut mean, mut var) = (0.0, 0.0, 0.0);
    for r in &rounds {
        let ctx = r.context_set().unwrap();
        let k = ran.select(r.user, &ctx, r.t).unwrap();
        clicks += r.payoffs[k];
        let p = 1.0 / r.len() as f64;
        mean += p;
        var += p * (1.0 - p);
    }
    let n = rounds.len() as f64;
    ReplayStats {
        events: log.len(),
        users: log.n_users(),
        items: log.n_items(),
        rounds: rounds.len(),
        widest,
        ran_ctr: clicks / n,
        expected_ctr: mean / n,
        tol: 3.0 * var.sqrt() / n,
    }
}

fn criterion_8() -> Outcome {
    let Some(dir) = movielens_dir() else {
        // Exercise the same pipeline on a generated log so the code path is covered.
        let tmp = tempfile::tempdir().unwrap();
        let paths = write_movielens_fixture(tmp.path(), 60, 300, 6000, 8).unwrap();
        let st = replay_checks(&paths.data, &paths.items);
        let (rounds, widest, ctr, mean) = (st.rounds, st.widest, st.ran_ctr, st.expected_ctr);
        assert_eq!(rounds, st.events);
        assert!(widest <= 25);
        assert!((ctr - mean).abs() < st.tol, "fixture ctr {ctr} vs {mean}");
        return Outcome {
            id: 8,
            verdict: Verdict::Skip,
            required: false,
            detail: format!(
                "MovieLens 100K not found (set CLUB_MOVIELENS_DIR); fixture pipeline ok: {rounds} rounds, c_t <= {widest}, RAN ctr {ctr:.4} vs {mean:.4}"
            ),
        };
    };
    let data = dir.join("u.data");
    let items = dir.join("u.item");
    let st = replay_checks(&data, &items);
    let (rounds, widest, ctr, mean, tol) = (st.rounds, st.widest, st.ran_ctr, st.expected_ctr, st.tol);
    let (events, users, item_count) = (st.events, st.users, st.items);
    let counts_ok = events == 100_000 && users == 943 && item_count == 1682;
    let rounds_ok = rounds == 100_000 && widest <= 25;
    let p = 1.0 / 25.0;
    let sigma3 = 3.0 * (p * (1.0 - p) / rounds as f64).sqrt();
    let ctr_ok = (ctr - p).abs() < sigma3;

    let start = Instant::now();
    let mut cfg = ExperimentConfig::synthetic(PolicyKind::Gclub, EnvSpec::new(2, 1, 2, 1.0, 0.1), 1);
    cfg.mode = Mode::Replay;
    cfg.env = None;
    cfg.horizon = None;
    cfg.replay = Some(ReplaySpec {
        data,
        items,
        cache: None,
        context_size: 25,
        variance_fraction: 0.95,
        seed: 0,
        max_rounds: None,
    });
    let trace = run_experiment(&cfg);
    let elapsed = start.elapsed();
    let run_ok = trace.is_ok() && elapsed < Duration::from_secs(600);
    outcome(
        8,
        counts_ok && rounds_ok && ctr_ok && run_ok,
        format!(
            "{events} events / {users} users / {item_count} items; {rounds} rounds, c_t <= {widest}; RAN ctr {ctr:.4} vs 0.04 (3σ {sigma3:.4}, context-size mean {mean:.4} ± {tol:.4}); gclub replay {elapsed:.1?}"
        ),
    )
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_club");
    let cfg = dir.path().join("env.toml");
    let status = Command::new(bin)
        .args(["make-env", "--n", "30", "--m", "3", "--d", "5", "--horizon", "2000", "--out"])
        .arg(&cfg)
        .status()
        .unwrap();
    assert!(status.success());
    let mut outputs = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("run{k}.csv"));
        let run = Command::new(bin)
            .arg("run")
            .arg(&cfg)
            .args(["--policy", "gclub", "--seed", "7", "--seed", "8", "--out"])
            .arg(&out)
            .output()
            .unwrap();
        assert!(run.status.success());
        outputs.push(std::fs::read(&out).unwrap());
    }
    let identical = outputs[0] == outputs[1] && !outputs[0].is_empty();
    outcome(9, identical, format!("two runs, {} bytes each, identical={identical}", outputs[0].len()))
}

#[test]
fn acceptance() {
    let criteria: [fn() -> Outcome; 9] = [
        criterion_1,
        criterion_2,
        criterion_3,
        criterion_4,
        criterion_5,
        criterion_6,
        criterion_7,
        criterion_8,
        criterion_9,
    ];
    let mut failed = Vec::new();
    for run in criteria {
        let o = run();
        let tag = match o.verdict {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Skip => "SKIP",
        };
        writeln!(std::io::stderr(), "{tag} criterion {}: {}", o.id, o.detail).unwrap();
        if o.verdict == Verdict::Fail && o.required {
            failed.push(o.id);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
