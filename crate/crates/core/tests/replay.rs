use std::collections::HashMap;

use club_core::ingest::{
    binarize_payoffs, build_context_sets, ctr, load_item_features, load_movielens, pca_standardize,
    replay_regret, write_movielens_fixture,
};
use club_core::policy::RandomPolicy;
use club_core::{Matrix, Policy, RoundRecord, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Leading eigenvalues of a symmetric PSD matrix by power iteration with
/// deflation.
fn power_spectrum(cov: &Matrix, k: usize) -> Vec<f64> {
    let n = cov.nrows();
    let mut a = cov.clone();
    let mut out = Vec::new();
    for c in 0..k {
        let mut v = Vector::from_fn(n, |i, _| 1.0 + (i + c) as f64 * 0.37);
        v.normalize_mut();
        let mut lambda = 0.0;
        for _ in 0..200_000 {
            let w = &a * &v;
            let next = w.norm();
            if next == 0.0 {
                break;
            }
            let w = w / next;
            let done = (next - lambda).abs() <= 1e-15 * next && (&w - &v).norm() < 1e-13;
            v = w;
            lambda = next;
            if done {
                break;
            }
        }
        a -= &v * v.transpose() * lambda;
        out.push(lambda);
    }
    out
}

fn anisotropic_sample(rows: usize, rng: &mut impl Rng) -> Matrix {
    let scales = [5.0, 3.0, 2.0, 1.0, 0.5, 0.2];
    let z = Matrix::from_fn(rows, 6, |_, j| rng.random_range(-1.0..1.0) * scales[j]);
    // Rotate so the principal axes are not the coordinate axes.
    let q = Matrix::from_fn(6, 6, |i, j| ((i * 7 + j * 3) as f64).sin()).qr().q();
    z * q + Matrix::from_element(rows, 6, 4.0)
}

#[test]
fn explained_variance_matches_power_iteration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let raw = anisotropic_sample(500, &mut rng);
    let table = pca_standardize(&raw, 0.95).unwrap();

    let mean = raw.row_mean();
    let mut centered = raw.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    let cov = centered.transpose() * &centered / 499.0;
    let total = cov.trace();
    let oracle = power_spectrum(&cov, table.dim());
    for (k, ratio) in table.explained.iter().enumerate() {
        assert!((ratio - oracle[k] / total).abs() < 1e-9, "component {k}");
    }
    let cumulative: f64 = table.explained.iter().sum();
    assert!(cumulative >= 0.95);
    assert!(cumulative - table.explained.last().unwrap() < 0.95);

    let gram = table.components.transpose() * &table.components;
    assert!((gram - Matrix::identity(table.dim(), table.dim())).amax() < 1e-10);
    for comp in table.components.column_iter() {
        let first = comp.iter().find(|v| v.abs() > 1e-12).unwrap();
        assert!(*first > 0.0);
    }
    for col in table.features.column_iter() {
        assert!(col.mean().abs() < 1e-10);
        assert!((col.norm_squared() / 500.0 - 1.0).abs() < 1e-10);
    }
    let again = pca_standardize(&raw, 0.95).unwrap();
    assert_eq!(again.features, table.features);
}

#[test]
fn fixture_pipeline_invariants() {
    let dir = tempfile::tempdir().unwrap();
    let paths = write_movielens_fixture(dir.path(), 80, 400, 8000, 3).unwrap();
    let log = binarize_payoffs(&load_movielens(&paths.data).unwrap());
    assert_eq!(log.len(), 8000);
    assert!(log.events().windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
    let raw = load_item_features(&paths.items, &log).unwrap();
    let table = pca_standardize(&raw, 0.95).unwrap();
    let rounds = build_context_sets(&log, &table.features, 25, 5).unwrap();
    assert_eq!(rounds.len(), 8000);

    let mut first_seen: HashMap<usize, i64> = HashMap::new();
    for e in log.events() {
        first_seen.entry(e.item).or_insert(e.timestamp);
    }
    let mut rated: HashMap<(usize, usize), ()> = HashMap::new();
    for e in log.events() {
        rated.insert((e.user, e.item), ());
    }
    let mut full = 0;
    for r in &rounds {
        assert!(r.len() <= 25 && !r.is_empty());
        for (k, &item) in r.items.iter().enumerate() {
            assert!(first_seen[&item] <= r.timestamp);
            let logged = rated.contains_key(&(r.user, item));
            assert_eq!(r.payoffs[k] == 1.0, logged, "labels follow the log");
        }
        assert_eq!(r.payoffs.iter().filter(|&&a| a == 1.0).count(), 1);
        let mut uniq = r.items.clone();
        uniq.sort_unstable();
        uniq.dedup();
        assert_eq!(uniq.len(), r.len());
        full += usize::from(r.len() == 25);
        let ctx = r.context_set().unwrap();
        assert_eq!(ctx.dim(), table.dim());
    }
    assert!(full > 6000, "{full}");

    // RAN click-through rate against its binomial expectation.
    let mut ran = RandomPolicy::new(9);
    let mut records = Vec::new();
    let (mut mean, mut var) = (0.0, 0.0);
    for r in &rounds {
        let ctx = r.context_set().unwrap();
        let k = ran.select(r.user, &ctx, r.t).unwrap();
        let p = 1.0 / r.len() as f64;
        mean += p;
        var += p * (1.0 - p);
        assert_eq!(replay_regret(r, k).unwrap(), 1.0 - r.payoffs[k]);
        records.push(RoundRecord {
            t: r.t,
            user: r.user,
            chosen: k,
            payoff: r.payoffs[k],
            regret: None,
            clusters: 1,
        });
    }
    let n = rounds.len() as f64;
    let observed = ctr(&records).unwrap();
    assert!((observed - mean / n).abs() < 3.0 * var.sqrt() / n, "ctr {observed}");
}
