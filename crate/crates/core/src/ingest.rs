//! Interaction-file parsing, k-core filtering, and the per-user chronological split.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{IdMap, InteractionRecord, SplitDataset, DEFAULT_R_MAX};
use crate::error::{Error, Result};

pub const TRAIN_FILE: &str = "train.csv";
pub const VALIDATION_FILE: &str = "validation.csv";
pub const TEST_FILE: &str = "test.csv";
pub const USER_MAP_FILE: &str = "id_map_users.csv";
pub const ITEM_MAP_FILE: &str = "id_map_items.csv";
pub const STATS_FILE: &str = "dataset_stats.json";

#[derive(Debug, Clone, PartialEq)]
pub struct IngestConfig {
    pub min_interactions: usize,
    /// Train / validation / test fractions.
    pub split_ratios: [f64; 3],
    pub r_max: u8,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self { min_interactions: 10, split_ratios: [0.6, 0.2, 0.2], r_max: DEFAULT_R_MAX }
    }
}

impl IngestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_interactions < 1 {
            return Err(Error::Config("min_interactions must be at least 1".into()));
        }
        if self.split_ratios.iter().any(|r| !(*r >= 0.0)) {
            return Err(Error::Config("split ratios must be non-negative".into()));
        }
        let sum: f64 = self.split_ratios.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios sum to {sum}, expected 1")));
        }
        if self.r_max < 1 {
            return Err(Error::Config("r_max must be at least 1".into()));
        }
        Ok(())
    }
}

/// An interaction before reindexing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawInteraction {
    pub user: String,
    pub item: String,
    pub rating: u8,
    pub timestamp: i64,
}

impl RawInteraction {
    pub fn new(user: impl Into<String>, item: impl Into<String>, rating: u8, timestamp: i64) -> Self {
        Self { user: user.into(), item: item.into(), rating, timestamp }
    }
}

/// Parses `user_id,item_id,rating,timestamp` lines. A first line whose rating
/// and timestamp fields are both non-numeric is treated as a header. Blank
/// lines are skipped.
pub fn parse_interactions<R: BufRead>(source: R, config: &IngestConfig) -> Result<Vec<RawInteraction>> {
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::Parse { line: lineno, message: e.to_string() })?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if lineno == 1 && fields.len() == 4 && fields[2].parse::<i64>().is_err() && fields[3].parse::<i64>().is_err() {
            continue;
        }
        if fields.len() != 4 {
            return Err(Error::Parse { line: lineno, message: format!("expected 4 fields, found {}", fields.len()) });
        }
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(Error::Parse { line: lineno, message: "empty user or item id".into() });
        }
        let rating: i64 = fields[2]
            .parse()
            .map_err(|_| Error::Parse { line: lineno, message: format!("invalid rating {:?}", fields[2]) })?;
        if rating < 1 || rating > config.r_max as i64 {
            return Err(Error::RatingRange { line: lineno, rating, r_max: config.r_max });
        }
        let timestamp: i64 = fields[3]
            .parse()
            .map_err(|_| Error::Parse { line: lineno, message: format!("invalid timestamp {:?}", fields[3]) })?;
        out.push(RawInteraction::new(fields[0], fields[1], rating as u8, timestamp));
    }
    Ok(out)
}

/// Repeatedly drops every interaction of a user or item with fewer than
/// `min_interactions` interactions until nothing changes. Order of the
/// surviving records is preserved.
pub fn filter_k_core(records: Vec<RawInteraction>, min_interactions: usize) -> Vec<RawInteraction> {
    let mut users: HashMap<&str, usize> = HashMap::new();
    let mut items: HashMap<&str, usize> = HashMap::new();
    let keys: Vec<(usize, usize)> = records
        .iter()
        .map(|r| {
            let n = users.len();
            let u = *users.entry(r.user.as_str()).or_insert(n);
            let n = items.len();
            let i = *items.entry(r.item.as_str()).or_insert(n);
            (u, i)
        })
        .collect();

    let mut user_deg = vec![0usize; users.len()];
    let mut item_deg = vec![0usize; items.len()];
    for &(u, i) in &keys {
        user_deg[u] += 1;
        item_deg[i] += 1;
    }
    let mut alive = vec![true; records.len()];
    loop {
        let mut changed = false;
        for (k, &(u, i)) in keys.iter().enumerate() {
            if alive[k] && (user_deg[u] < min_interactions || item_deg[i] < min_interactions) {
                alive[k] = false;
                user_deg[u] -= 1;
                item_deg[i] -= 1;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    drop(users);
    drop(items);
    records.into_iter().zip(alive).filter_map(|(r, keep)| keep.then_some(r)).collect()
}

fn floor_share(ratio: f64, n: usize) -> usize {
    (ratio * n as f64 + 1e-9).floor() as usize
}

/// Reindexes users and items densely (first appearance order) and splits each
/// user's records chronologically: the first `floor(r0 n)` go to train, the
/// next `floor(r1 n)` to validation, the rest to test. Timestamp ties are
/// broken by dense item index.
pub fn chronological_split(records: &[RawInteraction], ratios: [f64; 3], r_max: u8) -> SplitDataset {
    let mut users = IdMap::new();
    let mut items = IdMap::new();
    let mut per_user: Vec<Vec<InteractionRecord>> = Vec::new();
    for r in records {
        let user = users.intern(&r.user);
        let item = items.intern(&r.item);
        if user == per_user.len() {
            per_user.push(Vec::new());
        }
        per_user[user].push(InteractionRecord { user, item, rating: r.rating, timestamp: r.timestamp });
    }

    let mut train = Vec::new();
    let mut validation = Vec::new();
    let mut test = Vec::new();
    for mut recs in per_user {
        recs.sort_by_key(|r| (r.timestamp, r.item));
        let n = recs.len();
        let n_train = floor_share(ratios[0], n).min(n);
        let n_val = floor_share(ratios[1], n).min(n - n_train);
        let mut rest = recs.into_iter();
        train.extend(rest.by_ref().take(n_train));
        validation.extend(rest.by_ref().take(n_val));
        test.extend(rest);
    }

    SplitDataset {
        train,
        validation,
        test,
        user_count: users.len(),
        item_count: items.len(),
        r_max,
        users,
        items,
    }
}

/// Parse, filter, and split in one go.
pub fn ingest<R: BufRead>(source: R, config: &IngestConfig) -> Result<SplitDataset> {
    config.validate()?;
    let raw = parse_interactions(source, config)?;
    let kept = filter_k_core(raw, config.min_interactions);
    Ok(chronological_split(&kept, config.split_ratios, config.r_max))
}

/// Summary counts written next to the split files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    pub sparsity: f64,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub r_max: u8,
    pub min_interactions: usize,
    pub seed: u64,
}

impl DatasetStats {
    pub fn new(dataset: &SplitDataset, min_interactions: usize, seed: u64) -> Self {
        let interactions = dataset.interaction_count();
        let cells = dataset.user_count as f64 * dataset.item_count as f64;
        Self {
            users: dataset.user_count,
            items: dataset.item_count,
            interactions,
            sparsity: if cells > 0.0 { interactions as f64 / cells } else { 0.0 },
            train: dataset.train.len(),
            validation: dataset.validation.len(),
            test: dataset.test.len(),
            r_max: dataset.r_max,
            min_interactions,
            seed,
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_records(path: &Path, records: &[InteractionRecord]) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "user_id,item_id,rating,timestamp").map_err(io)?;
    for r in records {
        writeln!(w, "{},{},{},{}", r.user, r.item, r.rating, r.timestamp).map_err(io)?;
    }
    w.flush().map_err(io)
}

fn write_id_map(path: &Path, map: &IdMap) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "raw_id,dense_index").map_err(io)?;
    for (i, raw) in map.iter() {
        writeln!(w, "{raw},{i}").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Writes the three partitions, both id maps, and `dataset_stats.json` into `dir`.
pub fn write_split(dir: &Path, dataset: &SplitDataset, stats: &DatasetStats) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_records(&dir.join(TRAIN_FILE), &dataset.train)?;
    write_records(&dir.join(VALIDATION_FILE), &dataset.validation)?;
    write_records(&dir.join(TEST_FILE), &dataset.test)?;
    write_id_map(&dir.join(USER_MAP_FILE), &dataset.users)?;
    write_id_map(&dir.join(ITEM_MAP_FILE), &dataset.items)?;
    let path = dir.join(STATS_FILE);
    let mut json = serde_json::to_string_pretty(stats)?;
    json.push('\n');
    fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

fn open(path: &Path) -> Result<std::io::BufReader<fs::File>> {
    fs::File::open(path).map(std::io::BufReader::new).map_err(|e| Error::io(path, e))
}

fn read_id_map(path: &Path) -> Result<IdMap> {
    let mut pairs = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let (raw, idx) = line
            .rsplit_once(',')
            .ok_or_else(|| Error::File { path: path.into(), message: format!("line {}: expected raw_id,dense_index", i + 1) })?;
        let idx: usize = idx
            .trim()
            .parse()
            .map_err(|_| Error::File { path: path.into(), message: format!("line {}: invalid index", i + 1) })?;
        pairs.push((raw.to_owned(), idx));
    }
    IdMap::from_pairs(pairs).map_err(|e| Error::File { path: path.into(), message: e.to_string() })
}

fn read_records(path: &Path, r_max: u8, users: usize, items: usize) -> Result<Vec<InteractionRecord>> {
    let config = IngestConfig { r_max, ..IngestConfig::default() };
    let raw = parse_interactions(open(path)?, &config).map_err(|e| Error::File { path: path.into(), message: e.to_string() })?;
    raw.into_iter()
        .map(|r| {
            let bad = || Error::File { path: path.into(), message: format!("non-dense index in ({}, {})", r.user, r.item) };
            let user: usize = r.user.parse().map_err(|_| bad())?;
            let item: usize = r.item.parse().map_err(|_| bad())?;
            if user >= users || item >= items {
                return Err(bad());
            }
            Ok(InteractionRecord { user, item, rating: r.rating, timestamp: r.timestamp })
        })
        .collect()
}

/// Reads a directory produced by [`write_split`].
pub fn read_split(dir: &Path) -> Result<SplitDataset> {
    let stats_path = dir.join(STATS_FILE);
    let r_max = match fs::read_to_string(&stats_path) {
        Ok(text) => serde_json::from_str::<DatasetStats>(&text)
            .map_err(|e| Error::File { path: stats_path.clone(), message: e.to_string() })?
            .r_max,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => DEFAULT_R_MAX,
        Err(e) => return Err(Error::io(stats_path, e)),
    };
    let users = read_id_map(&dir.join(USER_MAP_FILE))?;
    let items = read_id_map(&dir.join(ITEM_MAP_FILE))?;
    let (nu, ni) = (users.len(), items.len());
    let dataset = SplitDataset {
        train: read_records(&dir.join(TRAIN_FILE), r_max, nu, ni)?,
        validation: read_records(&dir.join(VALIDATION_FILE), r_max, nu, ni)?,
        test: read_records(&dir.join(TEST_FILE), r_max, nu, ni)?,
        user_count: nu,
        item_count: ni,
        r_max,
        users,
        items,
    };
    dataset.validate().map_err(|e| Error::File { path: dir.into(), message: e.to_string() })?;
    Ok(dataset)
}
