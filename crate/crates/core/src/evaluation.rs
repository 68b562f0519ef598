//! Sampled-negatives top-K evaluation.
//!
//! For each user with held-out items, the held-out items are ranked together
//! with a pool of sampled negatives (items the user never touched in any
//! partition). Precision, recall, F1 and NDCG are computed at each cutoff
//! and averaged over users.

use std::collections::HashSet;
use std::io::Write;

use rand::seq::index;
use rand::Rng;

use crate::data::{Partition, SplitDataset};
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};
use crate::scorer::sort_ranked;

pub const DEFAULT_NEGATIVES: usize = 1000;
pub const DEFAULT_KS: [usize; 3] = [1, 5, 10];

/// Anything that can score a batch of items for a user.
pub trait Scorer: Sync {
    fn score_items(&self, user: usize, items: &[usize]) -> Vec<f64>;
}

impl<F> Scorer for F
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    fn score_items(&self, user: usize, items: &[usize]) -> Vec<f64> {
        items.iter().map(|&i| self(user, i)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub negatives: usize,
    pub ks: Vec<usize>,
    pub seed: u64,
    /// Worker cap; `None` uses every core.
    pub threads: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { negatives: DEFAULT_NEGATIVES, ks: DEFAULT_KS.to_vec(), seed: 0, threads: None }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub ndcg: f64,
}

impl Metrics {
    fn add(&mut self, other: &Metrics) {
        self.precision += other.precision;
        self.recall += other.recall;
        self.f1 += other.f1;
        self.ndcg += other.ndcg;
    }

    fn scale(&mut self, s: f64) {
        self.precision *= s;
        self.recall *= s;
        self.f1 *= s;
        self.ndcg *= s;
    }
}

/// Metrics at each configured cutoff.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingMetrics {
    pub ks: Vec<usize>,
    pub values: Vec<Metrics>,
}

impl RankingMetrics {
    pub fn at(&self, k: usize) -> Option<&Metrics> {
        self.ks.iter().position(|&x| x == k).map(|i| &self.values[i])
    }

    pub fn ndcg_at(&self, k: usize) -> f64 {
        self.at(k).map_or(0.0, |m| m.ndcg)
    }
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

fn discount(rank: usize) -> f64 {
    1.0 / ((rank + 1) as f64).log2()
}

/// Top-`k` metrics of a ranked list against a non-empty relevant set.
/// NDCG uses binary gain and `1/log2(rank + 1)` discounts with ranks from 1.
pub fn metrics_at_k(ranked: &[usize], relevant: &HashSet<usize>, k: usize) -> Metrics {
    assert!(k >= 1, "cutoff must be positive");
    assert!(!relevant.is_empty(), "relevant set must be non-empty");
    let mut hits = 0usize;
    let mut dcg = 0.0;
    for (pos, item) in ranked.iter().take(k).enumerate() {
        if relevant.contains(item) {
            hits += 1;
            dcg += discount(pos + 1);
        }
    }
    let ideal: f64 = (1..=k.min(relevant.len())).map(discount).sum();
    let precision = hits as f64 / k as f64;
    let recall = hits as f64 / relevant.len() as f64;
    Metrics { precision, recall, f1: f1(precision, recall), ndcg: dcg / ideal }
}

/// NDCG@k of a uniformly random ranking of `relevant` relevant items among
/// `negatives` irrelevant ones, in expectation.
pub fn expected_random_ndcg(relevant: usize, negatives: usize, k: usize) -> f64 {
    let n = relevant + negatives;
    let hit = relevant as f64 / n as f64;
    let dcg: f64 = (1..=k.min(n)).map(|r| hit * discount(r)).sum();
    let ideal: f64 = (1..=k.min(relevant)).map(discount).sum();
    dcg / ideal
}

/// `count` distinct items drawn uniformly from `0..item_count` minus
/// `excluded` (which must be sorted).
pub fn sample_eval_negatives<R: Rng + ?Sized>(
    rng: &mut R,
    excluded: &[usize],
    item_count: usize,
    count: usize,
) -> Result<Vec<usize>> {
    debug_assert!(excluded.windows(2).all(|w| w[0] < w[1]));
    let available = item_count - excluded.len();
    if count > available {
        return Err(Error::CatalogTooSmall { requested: count, available });
    }
    if count * 4 < available {
        let mut seen = HashSet::with_capacity(count);
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let item = rng.random_range(0..item_count);
            if excluded.binary_search(&item).is_err() && seen.insert(item) {
                out.push(item);
            }
        }
        Ok(out)
    } else {
        let eligible: Vec<usize> = (0..item_count).filter(|i| excluded.binary_search(i).is_err()).collect();
        Ok(index::sample(rng, available, count).into_iter().map(|k| eligible[k]).collect())
    }
}

fn partition_index(which: Partition) -> u64 {
    match which {
        Partition::Train => 0,
        Partition::Validation => 1,
        Partition::Test => 2,
    }
}

/// The negative pool for `user` under `config`, shared by every model.
pub fn negatives_for_user(
    config: &EvalConfig,
    which: Partition,
    user: usize,
    excluded: &[usize],
    item_count: usize,
) -> Result<Vec<usize>> {
    let mut rng = rng::stream(config.seed, Purpose::EvalNegatives, (user as u64) * 4 + partition_index(which));
    sample_eval_negatives(&mut rng, excluded, item_count, config.negatives)
}

/// Metrics of one evaluated user.
#[derive(Debug, Clone, PartialEq)]
pub struct UserMetrics {
    pub user: usize,
    pub relevant: usize,
    pub values: Vec<Metrics>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub metrics: RankingMetrics,
    pub per_user: Vec<UserMetrics>,
}

fn evaluate_user<S: Scorer + ?Sized>(
    scorer: &S,
    dataset_items: usize,
    config: &EvalConfig,
    which: Partition,
    user: usize,
    relevant: &[usize],
    touched: &[usize],
) -> Result<UserMetrics> {
    let relevant_set: HashSet<usize> = relevant.iter().copied().collect();
    let mut pool: Vec<usize> = relevant_set.iter().copied().collect();
    pool.sort_unstable();
    pool.extend(negatives_for_user(config, which, user, touched, dataset_items)?);
    let scores = scorer.score_items(user, &pool);
    let mut ranked: Vec<(usize, f64)> = pool.into_iter().zip(scores).collect();
    sort_ranked(&mut ranked);
    let order: Vec<usize> = ranked.into_iter().map(|x| x.0).collect();
    let values = config.ks.iter().map(|&k| metrics_at_k(&order, &relevant_set, k)).collect();
    Ok(UserMetrics { user, relevant: relevant_set.len(), values })
}

/// Runs the protocol on one held-out partition. Users with no items in that
/// partition are skipped; the mean is taken in user order.
pub fn evaluate<S: Scorer + ?Sized>(
    scorer: &S,
    dataset: &SplitDataset,
    which: Partition,
    config: &EvalConfig,
) -> Result<EvalReport> {
    if config.ks.is_empty() || config.ks.contains(&0) {
        return Err(Error::Config("cutoffs must be a non-empty list of positive integers".into()));
    }
    let relevant = dataset.items_by_user(which);
    let touched = dataset.all_items_by_user();
    let users: Vec<usize> = (0..dataset.user_count).filter(|&u| !relevant[u].is_empty()).collect();
    let run = |u: usize| evaluate_user(scorer, dataset.item_count, config, which, u, &relevant[u], &touched[u]);

    let per_user: Vec<UserMetrics> = match config.threads {
        Some(1) => users.iter().map(|&u| run(u)).collect::<Result<_>>()?,
        threads => {
            use rayon::prelude::*;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads.unwrap_or(0))
                .build()
                .map_err(|e| Error::Config(e.to_string()))?;
            pool.install(|| users.par_iter().map(|&u| run(u)).collect::<Result<_>>())?
        }
    };

    let mut values = vec![Metrics::default(); config.ks.len()];
    for um in &per_user {
        for (acc, m) in values.iter_mut().zip(&um.values) {
            acc.add(m);
        }
    }
    if !per_user.is_empty() {
        let inv = 1.0 / per_user.len() as f64;
        values.iter_mut().for_each(|m| m.scale(inv));
    }
    Ok(EvalReport { metrics: RankingMetrics { ks: config.ks.clone(), values }, per_user })
}

/// `model,K,precision,recall,f1,ndcg` rows.
pub fn write_metrics_csv<W: Write + ?Sized>(w: &mut W, model: &str, metrics: &RankingMetrics) -> std::io::Result<()> {
    writeln!(w, "model,K,precision,recall,f1,ndcg")?;
    for (k, m) in metrics.ks.iter().zip(&metrics.values) {
        writeln!(w, "{model},{k},{:.6},{:.6},{:.6},{:.6}", m.precision, m.recall, m.f1, m.ndcg)?;
    }
    Ok(())
}

/// `user,K,relevant,precision,recall,f1,ndcg` rows.
pub fn write_per_user_csv<W: Write + ?Sized>(
    w: &mut W,
    dataset: &SplitDataset,
    ks: &[usize],
    per_user: &[UserMetrics],
) -> std::io::Result<()> {
    writeln!(w, "user_id,K,relevant,precision,recall,f1,ndcg")?;
    for um in per_user {
        let user = dataset.users.raw(um.user).map_or_else(|| um.user.to_string(), str::to_owned);
        for (k, m) in ks.iter().zip(&um.values) {
            writeln!(w, "{user},{k},{},{:.6},{:.6},{:.6},{:.6}", um.relevant, m.precision, m.recall, m.f1, m.ndcg)?;
        }
    }
    Ok(())
}
