//! Logged-interaction loading, item features and replay rounds.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::SymmetricEigen;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bandit::{ContextSet, Matrix, Vector};
use crate::error::{Error, Result};
use crate::policy::RoundRecord;

pub const CACHE_FORMAT: &str = "club-replay";
pub const CACHE_VERSION: u32 = 1;
pub const GENRE_COUNT: usize = 19;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
    pub rating: f64,
    pub timestamp: i64,
}

/// Time-ordered events with users and items mapped densely by sorted raw id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct InteractionLog {
    events: Vec<Interaction>,
    user_ids: Vec<u64>,
    item_ids: Vec<u64>,
}

impl InteractionLog {
    pub fn events(&self) -> &[Interaction] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn n_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn raw_user_id(&self, user: usize) -> Option<u64> {
        self.user_ids.get(user).copied()
    }

    pub fn raw_item_id(&self, item: usize) -> Option<u64> {
        self.item_ids.get(item).copied()
    }

    pub fn item_index(&self, raw: u64) -> Option<usize> {
        self.item_ids.binary_search(&raw).ok()
    }
}

pub fn load_movielens(path: impl AsRef<Path>) -> Result<InteractionLog> {
    let path = path.as_ref();
    parse_movielens(BufReader::new(File::open(path)?), path)
}

/// Parses `user \t item \t rating \t timestamp` lines. `origin` only labels
/// parse errors.
pub fn parse_movielens(reader: impl BufRead, origin: &Path) -> Result<InteractionLog> {
    let mut raw = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let fail = |msg: String| Error::Parse {
            path: origin.to_path_buf(),
            line: lineno,
            msg,
        };
        let trimmed = line.trim_end();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split('\t').collect();
        if fields.len() != 4 {
            return Err(fail(format!("expected 4 tab-separated fields, found {}", fields.len())));
        }
        let user: u64 = fields[0]
            .trim()
            .parse()
            .map_err(|e| fail(format!("bad user id {:?}: {e}", fields[0])))?;
        let item: u64 = fields[1]
            .trim()
            .parse()
            .map_err(|e| fail(format!("bad item id {:?}: {e}", fields[1])))?;
        let rating: f64 = fields[2]
            .trim()
            .parse()
            .map_err(|e| fail(format!("bad rating {:?}: {e}", fields[2])))?;
        if !rating.is_finite() {
            return Err(fail(format!("non-finite rating {:?}", fields[2])));
        }
        let timestamp: i64 = fields[3]
            .trim()
            .parse()
            .map_err(|e| fail(format!("bad timestamp {:?}: {e}", fields[3])))?;
        raw.push((user, item, rating, timestamp));
    }
    Ok(from_raw(raw))
}

fn dense_ids(raw: impl Iterator<Item = u64>) -> Vec<u64> {
    let mut ids: Vec<u64> = raw.collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

fn from_raw(raw: Vec<(u64, u64, f64, i64)>) -> InteractionLog {
    let user_ids = dense_ids(raw.iter().map(|r| r.0));
    let item_ids = dense_ids(raw.iter().map(|r| r.1));
    let mut events: Vec<Interaction> = raw
        .into_iter()
        .map(|(u, i, rating, timestamp)| Interaction {
            user: user_ids.binary_search(&u).expect("id collected above"),
            item: item_ids.binary_search(&i).expect("id collected above"),
            rating,
            timestamp,
        })
        .collect();
    events.sort_by_key(|e| e.timestamp);
    InteractionLog {
        events,
        user_ids,
        item_ids,
    }
}

/// Nonzero rating becomes payoff 1, zero becomes 0.
pub fn binarize_payoffs(log: &InteractionLog) -> InteractionLog {
    let mut out = log.clone();
    for e in &mut out.events {
        e.rating = if e.rating != 0.0 { 1.0 } else { 0.0 };
    }
    out
}

/// Raw item features from a MovieLens `u.item` file: the genre flags followed
/// by the release year. Rows follow the log's dense item order; a missing year
/// is filled with the mean of the known ones.
pub fn load_item_features(path: impl AsRef<Path>, log: &InteractionLog) -> Result<Matrix> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    // u.item is Latin-1; each byte is its own code point.
    let text: String = bytes.iter().map(|&b| b as char).collect();
    parse_item_features(&text, path, log)
}

pub fn parse_item_features(text: &str, origin: &Path, log: &InteractionLog) -> Result<Matrix> {
    let cols = GENRE_COUNT + 1;
    let mut rows: Vec<Option<(Vec<f64>, Option<f64>)>> = vec![None; log.n_items()];
    for (idx, line) in text.lines().enumerate() {
        let fail = |msg: String| Error::Parse {
            path: origin.to_path_buf(),
            line: idx + 1,
            msg,
        };
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('|').collect();
        if fields.len() < 5 + GENRE_COUNT {
            return Err(fail(format!(
                "expected at least {} pipe-separated fields, found {}",
                5 + GENRE_COUNT,
                fields.len()
            )));
        }
        let raw: u64 = fields[0]
            .trim()
            .parse()
            .map_err(|e| fail(format!("bad item id {:?}: {e}", fields[0])))?;
        let Some(item) = log.item_index(raw) else {
            continue;
        };
        let genre_fields = &fields[fields.len() - GENRE_COUNT..];
        let mut genres = Vec::with_capacity(GENRE_COUNT);
        for g in genre_fields {
            match g.trim() {
                "0" => genres.push(0.0),
                "1" => genres.push(1.0),
                other => return Err(fail(format!("bad genre flag {other:?}"))),
            }
        }
        let date = fields[2].trim();
        let year = date
            .rsplit('-')
            .next()
            .filter(|y| y.len() == 4)
            .and_then(|y| y.parse::<f64>().ok());
        rows[item] = Some((genres, year));
    }

    let known: Vec<f64> = rows.iter().flatten().filter_map(|r| r.1).collect();
    let fill = if known.is_empty() {
        0.0
    } else {
        known.iter().sum::<f64>() / known.len() as f64
    };
    let mut out = Matrix::zeros(log.n_items(), cols);
    for (item, row) in rows.iter().enumerate() {
        let (genres, year) = row.as_ref().ok_or_else(|| {
            Error::InvalidInput(format!(
                "item {} has no feature row",
                log.raw_item_id(item).unwrap_or_default()
            ))
        })?;
        for (j, g) in genres.iter().enumerate() {
            out[(item, j)] = *g;
        }
        out[(item, GENRE_COUNT)] = year.unwrap_or(fill);
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct PcaTable {
    /// Items by retained components, columns with mean 0 and variance 1.
    pub features: Matrix,
    /// Raw features by retained components, orthonormal columns.
    pub components: Matrix,
    /// Explained-variance ratio of every retained component.
    pub explained: Vec<f64>,
    /// Full descending covariance spectrum.
    pub eigenvalues: Vec<f64>,
}

impl PcaTable {
    pub fn dim(&self) -> usize {
        self.features.ncols()
    }
}

/// Projects onto the fewest principal components reaching
/// `variance_fraction` of the total variance, then standardizes each column.
/// Each component's first nonzero entry is made positive.
pub fn pca_standardize(raw: &Matrix, variance_fraction: f64) -> Result<PcaTable> {
    let (n, p) = raw.shape();
    if n < 2 {
        return Err(Error::InvalidInput(format!("PCA needs at least 2 items, got {n}")));
    }
    if p == 0 {
        return Err(Error::InvalidInput("PCA needs at least one feature".into()));
    }
    if !(variance_fraction > 0.0 && variance_fraction <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "variance fraction must lie in (0, 1], got {variance_fraction}"
        )));
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("feature matrix"));
    }

    let mean = raw.row_mean();
    let mut centered = raw.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let eigenvalues: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k].max(0.0)).collect();
    let total: f64 = eigenvalues.iter().sum();
    let scale = raw.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1.0);
    if total <= 1e-12 * scale * scale {
        return Err(Error::InvalidInput("feature matrix has rank 0".into()));
    }
    let floor = eigenvalues[0] * 1e-12;

    let mut keep = 0;
    let mut acc = 0.0;
    for &lambda in &eigenvalues {
        if lambda <= floor {
            break;
        }
        keep += 1;
        acc += lambda;
        if acc >= variance_fraction * total * (1.0 - 1e-12) {
            break;
        }
    }

    let mut components = Matrix::zeros(p, keep);
    for (c, &k) in order.iter().take(keep).enumerate() {
        let mut v = eig.eigenvectors.column(k).into_owned();
        if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
            if *first < 0.0 {
                v.neg_mut();
            }
        }
        components.set_column(c, &v);
    }

    let mut features = &centered * &components;
    for mut col in features.column_iter_mut() {
        let mu = col.mean();
        col.add_scalar_mut(-mu);
        let sd = (col.norm_squared() / n as f64).sqrt();
        if sd > 0.0 {
            col /= sd;
        }
    }

    Ok(PcaTable {
        features,
        components,
        explained: eigenvalues[..keep].iter().map(|l| l / total).collect(),
        eigenvalues,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayRound {
    pub t: u64,
    pub user: usize,
    pub timestamp: i64,
    pub items: Vec<usize>,
    pub vectors: Vec<Vec<f64>>,
    pub payoffs: Vec<f64>,
}

impl ReplayRound {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn positive(&self) -> Option<usize> {
        self.payoffs.iter().position(|&a| a > 0.0)
    }

    pub fn context_set(&self) -> Result<ContextSet> {
        let vectors = self.vectors.iter().map(|v| Vector::from_column_slice(v)).collect();
        ContextSet::new(self.t, vectors)?.with_items(self.items.clone())
    }
}

/// One round per positive event. The other candidates are drawn without
/// replacement from items already seen at that timestamp that the user
/// never rates positively; `c` shrinks when too few exist.
pub fn build_context_sets(
    log: &InteractionLog,
    features: &Matrix,
    c: usize,
    seed: u64,
) -> Result<Vec<ReplayRound>> {
    if c == 0 {
        return Err(Error::InvalidInput("context size must be positive".into()));
    }
    if features.nrows() != log.n_items() {
        return Err(Error::InvalidInput(format!(
            "feature table has {} rows for {} items",
            features.nrows(),
            log.n_items()
        )));
    }
    let events = log.events();
    let mut liked: Vec<HashSet<usize>> = vec![HashSet::new(); log.n_users()];
    for e in events {
        if e.rating > 0.0 {
            liked[e.user].insert(e.item);
        }
    }
    let row = |item: usize| features.row(item).iter().copied().collect::<Vec<f64>>();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = vec![false; log.n_items()];
    let mut available: Vec<usize> = Vec::new();
    let mut horizon = 0;
    let mut rounds = Vec::new();
    for e in events {
        while horizon < events.len() && events[horizon].timestamp <= e.timestamp {
            let item = events[horizon].item;
            if !seen[item] {
                seen[item] = true;
                available.push(item);
            }
            horizon += 1;
        }
        if e.rating <= 0.0 {
            continue;
        }
        let user_likes = &liked[e.user];
        let liked_available = user_likes.iter().filter(|&&i| seen[i]).count();
        let pool = available.len() - liked_available;
        let negatives = (c - 1).min(pool);

        let mut chosen: Vec<usize> = Vec::with_capacity(negatives + 1);
        if negatives > 0 && pool <= 4 * negatives {
            let mut eligible: Vec<usize> = available
                .iter()
                .copied()
                .filter(|i| !user_likes.contains(i))
                .collect();
            eligible.shuffle(&mut rng);
            chosen.extend_from_slice(&eligible[..negatives]);
        } else {
            let mut taken = HashSet::with_capacity(negatives);
            while chosen.len() < negatives {
                let item = available[rng.random_range(0..available.len())];
                if !user_likes.contains(&item) && taken.insert(item) {
                    chosen.push(item);
                }
            }
        }
        let slot = rng.random_range(0..=chosen.len());
        chosen.insert(slot, e.item);

        let mut payoffs = vec![0.0; chosen.len()];
        payoffs[slot] = 1.0;
        rounds.push(ReplayRound {
            t: rounds.len() as u64 + 1,
            user: e.user,
            timestamp: e.timestamp,
            vectors: chosen.iter().map(|&i| row(i)).collect(),
            items: chosen,
            payoffs,
        });
    }
    Ok(rounds)
}

/// Best payoff in the round minus the chosen one.
pub fn replay_regret(round: &ReplayRound, chosen: usize) -> Result<f64> {
    let a = round
        .payoffs
        .get(chosen)
        .ok_or_else(|| Error::InvalidInput(format!("chosen index {chosen} out of range")))?;
    let best = round.payoffs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(best - a)
}

pub fn ctr(records: &[RoundRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Empty("round records"));
    }
    Ok(records.iter().map(|r| r.payoff).sum::<f64>() / records.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct CacheHeader {
    format: String,
    version: u32,
    rounds: usize,
    #[serde(default)]
    meta: BTreeMap<String, String>,
}

/// Writes rounds as line-delimited JSON behind a versioned header line.
pub fn write_rounds_cache(
    path: impl AsRef<Path>,
    rounds: &[ReplayRound],
    meta: BTreeMap<String, String>,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let header = CacheHeader {
        format: CACHE_FORMAT.into(),
        version: CACHE_VERSION,
        rounds: rounds.len(),
        meta,
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for r in rounds {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a cache written by [`write_rounds_cache`], returning its metadata.
pub fn read_rounds_cache(path: impl AsRef<Path>) -> Result<(Vec<ReplayRound>, BTreeMap<String, String>)> {
    let path = path.as_ref();
    let mut lines = BufReader::new(File::open(path)?).lines();
    let fail = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let first = lines.next().ok_or_else(|| fail(1, "empty cache file".into()))??;
    let header: CacheHeader = serde_json::from_str(&first).map_err(|e| fail(1, e.to_string()))?;
    if header.format != CACHE_FORMAT || header.version != CACHE_VERSION {
        return Err(fail(
            1,
            format!(
                "unsupported cache {} v{} (want {CACHE_FORMAT} v{CACHE_VERSION})",
                header.format, header.version
            ),
        ));
    }
    let mut rounds = Vec::with_capacity(header.rounds);
    for (idx, line) in lines.enumerate() {
        let line = line?;
        let r: ReplayRound = serde_json::from_str(&line).map_err(|e| fail(idx + 2, e.to_string()))?;
        rounds.push(r);
    }
    if rounds.len() != header.rounds {
        return Err(fail(
            rounds.len() + 1,
            format!("truncated cache: {} of {} rounds", rounds.len(), header.rounds),
        ));
    }
    Ok((rounds, header.meta))
}

/// Paths of a generated MovieLens-format dataset.
#[derive(Clone, Debug)]
pub struct FixturePaths {
    pub data: std::path::PathBuf,
    pub items: std::path::PathBuf,
}

/// Writes a small MovieLens-format dataset (`u.data`, `u.item`) into `dir`:
/// distinct (user, item) pairs, ratings 1 to 5, increasing timestamps, and
/// items entering the catalogue over time.
pub fn write_movielens_fixture(
    dir: impl AsRef<Path>,
    users: usize,
    items: usize,
    events: usize,
    seed: u64,
) -> Result<FixturePaths> {
    if users == 0 || items == 0 || events > users * items {
        return Err(Error::InvalidInput(format!(
            "cannot place {events} distinct ratings among {users} users and {items} items"
        )));
    }
    let dir = dir.as_ref();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = HashSet::with_capacity(events);
    let mut data = String::new();
    let mut timestamp: i64 = 874_724_710;
    while pairs.len() < events {
        // The catalogue grows linearly with progress through the log.
        let open = 1 + (items - 1) * pairs.len() / events.max(1);
        let user = rng.random_range(0..users);
        let item = rng.random_range(0..=open.min(items - 1));
        if !pairs.insert((user, item)) {
            continue;
        }
        timestamp += rng.random_range(0..120);
        let rating = rng.random_range(1..=5);
        data.push_str(&format!("{}\t{}\t{rating}\t{timestamp}\n", user + 1, item + 1));
    }
    let mut table = String::new();
    for item in 0..items {
        let year = 1930 + rng.random_range(0..68);
        let genres: Vec<&str> = (0..GENRE_COUNT)
            .map(|_| if rng.random_bool(0.2) { "1" } else { "0" })
            .collect();
        table.push_str(&format!(
            "{}|Movie {} ({year})|01-Jan-{year}||http://example.invalid/{}|{}\n",
            item + 1,
            item + 1,
            item + 1,
            genres.join("|")
        ));
    }
    let paths = FixturePaths {
        data: dir.join("u.data"),
        items: dir.join("u.item"),
    };
    std::fs::write(&paths.data, data)?;
    std::fs::write(&paths.items, table)?;
    Ok(paths)
}
