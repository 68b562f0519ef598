//! Shared helpers for integration tests: the planted-model generator and
//! small ranking oracles.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use weu::data::{RatingHistogram, SplitDataset};
use weu::ingest::{chronological_split, RawInteraction};
use weu::probability::{HistogramStore, PwfKind};
use weu::rng::{stream, Purpose};
use weu::scorer::weu_score;
use weu::utility::WeuParameters;

pub fn fixture_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/ratings.csv")
}

#[derive(Debug, Clone, Copy)]
pub struct PlantedConfig {
    pub users: usize,
    pub items: usize,
    pub per_user: usize,
    pub latent_dim: usize,
    /// Global gain and loss scales of the planted utility.
    pub alpha: f64,
    pub beta: f64,
    /// Spread of item and user offsets on both scales.
    pub bias_std: f64,
    pub latent_std: f64,
    /// Mean Prelec parameters and their per-user spread.
    pub delta: f64,
    pub gamma: f64,
    pub pwf_std: f64,
    /// Range of planted reference points.
    pub ref_range: (f64, f64),
    /// Smallest nonzero probability in an item's rating distribution.
    pub min_mass: f64,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            users: 500,
            items: 300,
            per_user: 20,
            latent_dim: 4,
            alpha: 1.0,
            beta: 6.0,
            bias_std: 0.4,
            latent_std: 0.2,
            delta: 0.8,
            gamma: 0.5,
            pwf_std: 0.5,
            ref_range: (2.5, 4.2),
            min_mass: 0.1,
            seed: 2024,
        }
    }
}

/// A dataset drawn from a known utility model.
pub struct Planted {
    pub dataset: SplitDataset,
    /// Planted parameters indexed by generator ids, not dataset indices.
    pub params: WeuParameters,
    pub true_hists: HistogramStore,
    /// Generator id of each dataset user and item index.
    pub user_ids: Vec<usize>,
    pub item_ids: Vec<usize>,
}

impl Planted {
    /// Score of the planted model for dataset indices.
    pub fn oracle_score(&self, user: usize, item: usize) -> f64 {
        weu_score(&self.params, &self.true_hists, self.user_ids[user], self.item_ids[item], PwfKind::Prelec)
    }
}

/// Rating distribution that mixes a peak at `mean` with a split between the
/// extremes carrying the same mean; `risk` in [0, 1] is the split's share.
/// Masses below `floor` are dropped and the rest renormalized.
fn item_distribution(mean: f64, risk: f64, floor: f64) -> [f64; 5] {
    let mut peaked = [0.0; 5];
    let lo = mean.floor().clamp(1.0, 4.0);
    let frac = mean - lo;
    peaked[lo as usize - 1] += 1.0 - frac;
    peaked[lo as usize] += frac;
    let hi_share = (mean - 1.0) / 4.0;
    let polar = [1.0 - hi_share, 0.0, 0.0, 0.0, hi_share];
    let mut p = [0.0; 5];
    for r in 0..5 {
        p[r] = (1.0 - risk) * peaked[r] + risk * polar[r];
    }
    for x in &mut p {
        if *x < floor {
            *x = 0.0;
        }
    }
    let total: f64 = p.iter().sum();
    p.map(|x| x / total)
}

fn sample_index<R: Rng + ?Sized>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut x = rng.random_range(0.0..total);
    for (i, w) in weights.iter().enumerate() {
        if x < *w {
            return i;
        }
        x -= w;
    }
    weights.len() - 1
}

/// Users choose items one at a time by softmax over planted utility plus
/// N(1, 1) noise among items they have not yet bought; ratings come from each
/// item's true rating distribution. The result is split chronologically.
pub fn planted(config: &PlantedConfig) -> Planted {
    let PlantedConfig { users, items, per_user, latent_dim: k, .. } = *config;
    let mut rng = stream(config.seed, Purpose::Synthetic, 0);
    let normal = |sd: f64| Normal::new(0.0, sd).unwrap();

    let dists: Vec<[f64; 5]> = (0..items)
        .map(|_| item_distribution(rng.random_range(2.2..4.6), rng.random_range(0.0..0.8), config.min_mass))
        .collect();
    let to_hist = |p: &[f64; 5]| RatingHistogram::from_counts(p.iter().map(|x| (x * 1e6).round() as u64).collect());
    let global: Vec<f64> = (0..5).map(|r| dists.iter().map(|d| d[r]).sum::<f64>() / items as f64).collect();
    let true_hists = HistogramStore::new(
        dists.iter().map(to_hist).collect(),
        to_hist(&[global[0], global[1], global[2], global[3], global[4]]),
    );

    let mut params = WeuParameters::zeros(users, items, k, 5, PwfKind::Prelec);
    params.alpha.global = config.alpha;
    params.beta.global = config.beta;
    for block in [&mut params.alpha, &mut params.beta] {
        let bias = normal(config.bias_std);
        let latent = normal(config.latent_std / (k as f64).sqrt());
        block.item_bias.iter_mut().chain(&mut block.user_bias).for_each(|x| *x = bias.sample(&mut rng));
        block.item_latent.iter_mut().chain(&mut block.user_latent).for_each(|x| *x = latent.sample(&mut rng));
    }
    params.delta.global = config.delta;
    params.gamma.global = config.gamma;
    params.theta.global = 1.0;
    let spread = normal(config.pwf_std);
    for u in 0..users {
        params.delta.user_bias[u] = spread.sample(&mut rng);
        params.gamma.user_bias[u] = spread.sample(&mut rng);
        params.ref_points[u] = rng.random_range(config.ref_range.0..config.ref_range.1);
    }
    params.project_all(0.05);

    let noise = Normal::new(1.0, 1.0).unwrap();
    let mut raw = Vec::with_capacity(users * per_user);
    for u in 0..users {
        let scores: Vec<f64> = (0..items).map(|i| weu_score(&params, &true_hists, u, i, PwfKind::Prelec)).collect();
        let mut bought = vec![false; items];
        for step in 0..per_user {
            let open: Vec<usize> = (0..items).filter(|&i| !bought[i]).collect();
            let logits: Vec<f64> = open.iter().map(|&i| scores[i] + noise.sample(&mut rng)).collect();
            let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
            let item = open[sample_index(&mut rng, &weights)];
            bought[item] = true;
            let rating = sample_index(&mut rng, &dists[item]) as u8 + 1;
            let timestamp = (step * users + u) as i64;
            raw.push(RawInteraction::new(format!("{u}"), format!("{item}"), rating, timestamp));
        }
    }
    let dataset = chronological_split(&raw, [0.6, 0.2, 0.2], 5);
    let ids = |map: &weu::data::IdMap| -> Vec<usize> {
        (0..map.len()).map(|i| map.raw(i).unwrap().parse().unwrap()).collect()
    };
    let (user_ids, item_ids) = (ids(&dataset.users), ids(&dataset.items));
    Planted { dataset, params, true_hists, user_ids, item_ids }
}
