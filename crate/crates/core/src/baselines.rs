//! CF-LFM rating regression and BPR pairwise ranking, both over
//! `a + b_i + l_j + i·j`.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::SplitDataset;
use crate::error::{Error, Result};
use crate::evaluation::{EvalConfig, Scorer};
use crate::rng::{self, Purpose};
use crate::training::validation_ndcg10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfParameters {
    pub user_count: usize,
    pub item_count: usize,
    pub latent_dim: usize,
    pub global: f64,
    pub item_bias: Vec<f64>,
    pub user_bias: Vec<f64>,
    pub item_latent: Vec<f64>,
    pub user_latent: Vec<f64>,
}

impl MfParameters {
    pub fn zeros(user_count: usize, item_count: usize, latent_dim: usize) -> Self {
        Self {
            user_count,
            item_count,
            latent_dim,
            global: 0.0,
            item_bias: vec![0.0; item_count],
            user_bias: vec![0.0; user_count],
            item_latent: vec![0.0; item_count * latent_dim],
            user_latent: vec![0.0; user_count * latent_dim],
        }
    }

    /// Zero biases, latent entries uniform in `±0.1/√K`.
    pub fn random<R: Rng + ?Sized>(user_count: usize, item_count: usize, latent_dim: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(user_count, item_count, latent_dim);
        let bound = 0.1 / (latent_dim.max(1) as f64).sqrt();
        for x in p.item_latent.iter_mut().chain(p.user_latent.iter_mut()) {
            *x = rng.random_range(-bound..=bound);
        }
        p
    }

    pub fn item_row(&self, item: usize) -> &[f64] {
        &self.item_latent[item * self.latent_dim..(item + 1) * self.latent_dim]
    }

    pub fn user_row(&self, user: usize) -> &[f64] {
        &self.user_latent[user * self.latent_dim..(user + 1) * self.latent_dim]
    }

    pub fn check_against(&self, dataset: &SplitDataset) -> Result<()> {
        let k = self.latent_dim;
        if self.item_bias.len() != self.item_count
            || self.user_bias.len() != self.user_count
            || self.item_latent.len() != self.item_count * k
            || self.user_latent.len() != self.user_count * k
        {
            return Err(Error::Config("factor arrays do not match declared shape".into()));
        }
        if self.user_count != dataset.user_count || self.item_count != dataset.item_count {
            return Err(Error::ShapeMismatch {
                checkpoint: format!("{} users x {} items", self.user_count, self.item_count),
                dataset: format!("{} users x {} items", dataset.user_count, dataset.item_count),
            });
        }
        Ok(())
    }

    fn dot(&self, item: usize, user: usize) -> f64 {
        self.item_row(item).iter().zip(self.user_row(user)).map(|(a, b)| a * b).sum()
    }
}

/// `a + b_i + l_j + i·j`.
pub fn mf_predict(params: &MfParameters, item: usize, user: usize) -> f64 {
    params.global + params.item_bias[item] + params.user_bias[user] + params.dot(item, user)
}

/// Address of one scalar in [`MfParameters`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MfCoord {
    Global,
    ItemBias(usize),
    UserBias(usize),
    ItemLatent(usize, usize),
    UserLatent(usize, usize),
}

impl MfCoord {
    pub fn value_mut(self, params: &mut MfParameters) -> &mut f64 {
        let k = params.latent_dim;
        match self {
            MfCoord::Global => &mut params.global,
            MfCoord::ItemBias(i) => &mut params.item_bias[i],
            MfCoord::UserBias(u) => &mut params.user_bias[u],
            MfCoord::ItemLatent(i, d) => &mut params.item_latent[i * k + d],
            MfCoord::UserLatent(u, d) => &mut params.user_latent[u * k + d],
        }
    }
}

/// Sparse gradient over the parameters one example touches.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MfGradient {
    /// Loss for CF-LFM, objective for BPR.
    pub value: f64,
    pub global: f64,
    pub user: usize,
    pub user_bias: f64,
    pub user_latent: Vec<f64>,
    /// `(item, bias grad, latent grad)`.
    pub items: Vec<(usize, f64, Vec<f64>)>,
}

impl MfGradient {
    pub fn get(&self, coord: MfCoord) -> f64 {
        match coord {
            MfCoord::Global => self.global,
            MfCoord::UserBias(u) if u == self.user => self.user_bias,
            MfCoord::UserLatent(u, d) if u == self.user => self.user_latent[d],
            MfCoord::ItemBias(i) => self.items.iter().filter(|x| x.0 == i).map(|x| x.1).sum(),
            MfCoord::ItemLatent(i, d) => self.items.iter().filter(|x| x.0 == i).map(|x| x.2[d]).sum(),
            _ => 0.0,
        }
    }
}

fn sq(xs: &[f64]) -> f64 {
    xs.iter().map(|x| x * x).sum()
}

/// Squared error `(r - r̂)² + λ(b_i² + l_j² + ‖i‖² + ‖j‖²)` and its gradient.
pub fn rating_gradient(params: &MfParameters, user: usize, item: usize, rating: f64, lambda: f64) -> MfGradient {
    let err = mf_predict(params, item, user) - rating;
    let (irow, urow) = (params.item_row(item), params.user_row(user));
    let (bi, bu) = (params.item_bias[item], params.user_bias[user]);
    let reg = bi * bi + bu * bu + sq(irow) + sq(urow);
    let two_l = 2.0 * lambda;
    MfGradient {
        value: err * err + lambda * reg,
        global: 2.0 * err,
        user,
        user_bias: 2.0 * err + two_l * bu,
        user_latent: irow.iter().zip(urow).map(|(i, u)| 2.0 * err * i + two_l * u).collect(),
        items: vec![(item, 2.0 * err + two_l * bi, irow.iter().zip(urow).map(|(i, u)| 2.0 * err * u + two_l * i).collect())],
    }
}

fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln σ(x_ui − x_uk) − λ(b_i² + b_k² + ‖i‖² + ‖k‖² + ‖j‖²)` and its gradient
/// (to be ascended). Global and user biases cancel and are untouched.
pub fn bpr_gradient(params: &MfParameters, user: usize, positive: usize, negative: usize, lambda: f64) -> MfGradient {
    let diff = mf_predict(params, positive, user) - mf_predict(params, negative, user);
    let c = 1.0 - sigmoid(diff);
    let (prow, nrow, urow) = (params.item_row(positive), params.item_row(negative), params.user_row(user));
    let (bp, bn) = (params.item_bias[positive], params.item_bias[negative]);
    let two_l = 2.0 * lambda;
    let reg = bp * bp + bn * bn + sq(prow) + sq(nrow) + sq(urow);
    MfGradient {
        value: log_sigmoid(diff) - lambda * reg,
        global: 0.0,
        user,
        user_bias: 0.0,
        user_latent: prow.iter().zip(nrow).zip(urow).map(|((p, n), u)| c * (p - n) - two_l * u).collect(),
        items: vec![
            (positive, c - two_l * bp, prow.iter().zip(urow).map(|(p, u)| c * u - two_l * p).collect()),
            (negative, -c - two_l * bn, nrow.iter().zip(urow).map(|(n, u)| -c * u - two_l * n).collect()),
        ],
    }
}

fn step(p: &mut f64, v: &mut f64, g: f64, lr: f64, momentum: f64) {
    *v = momentum * *v + lr * g;
    *p += *v;
}

/// Moves along `sign · grad` with momentum (`sign = -1` descends).
pub fn apply_mf_step(params: &mut MfParameters, velocity: &mut MfParameters, grad: &MfGradient, lr: f64, momentum: f64, sign: f64) {
    let k = params.latent_dim;
    let u = grad.user;
    step(&mut params.global, &mut velocity.global, sign * grad.global, lr, momentum);
    step(&mut params.user_bias[u], &mut velocity.user_bias[u], sign * grad.user_bias, lr, momentum);
    for d in 0..k {
        step(&mut params.user_latent[u * k + d], &mut velocity.user_latent[u * k + d], sign * grad.user_latent[d], lr, momentum);
    }
    for (i, bias, latent) in &grad.items {
        step(&mut params.item_bias[*i], &mut velocity.item_bias[*i], sign * bias, lr, momentum);
        for d in 0..k {
            step(&mut params.item_latent[i * k + d], &mut velocity.item_latent[i * k + d], sign * latent[d], lr, momentum);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub lambda: f64,
    pub latent_dim: usize,
    pub seed: u64,
    pub eval: EvalConfig,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            learning_rate: 0.01,
            momentum: 0.0,
            lambda: 1e-3,
            latent_dim: crate::utility::DEFAULT_LATENT_DIM,
            seed: 0,
            eval: EvalConfig { ks: vec![10], ..EvalConfig::default() },
        }
    }
}

impl BaselineConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !(self.lambda >= 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("need learning rate > 0, lambda >= 0, momentum in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Per-epoch bookkeeping: training objective and the selection metric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineEpochLog {
    pub epoch: usize,
    pub objective: f64,
    /// Validation RMSE for CF-LFM, validation NDCG@10 for BPR.
    pub validation: f64,
}

#[derive(Debug, Clone)]
pub struct MfFitResult {
    pub params: MfParameters,
    pub velocity: MfParameters,
    pub trace: Vec<BaselineEpochLog>,
    pub best_epoch: usize,
}

pub fn rmse(params: &MfParameters, records: &[crate::data::InteractionRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    let sse: f64 = records.iter().map(|r| (mf_predict(params, r.item, r.user) - r.rating as f64).powi(2)).sum();
    (sse / records.len() as f64).sqrt()
}

/// Starting point for both baselines: small random factors, and for CF-LFM
/// the global bias at the mean training rating.
pub fn initial_mf(dataset: &SplitDataset, config: &BaselineConfig, rating_mean: bool) -> MfParameters {
    let mut rng = rng::stream(config.seed, Purpose::Init, 1);
    let mut p = MfParameters::random(dataset.user_count, dataset.item_count, config.latent_dim, &mut rng);
    if rating_mean && !dataset.train.is_empty() {
        p.global = dataset.train.iter().map(|r| r.rating as f64).sum::<f64>() / dataset.train.len() as f64;
    }
    p
}

/// CF-LFM by SGD on squared rating error; keeps the epoch with the lowest
/// validation RMSE (training RMSE when there is no validation data).
pub fn mf_fit(dataset: &SplitDataset, config: &BaselineConfig) -> Result<MfFitResult> {
    config.validate()?;
    let mut params = initial_mf(dataset, config, true);
    let mut velocity = MfParameters::zeros(dataset.user_count, dataset.item_count, config.latent_dim);
    let mut trace = Vec::new();
    let mut best: Option<(f64, MfParameters, MfParameters, usize)> = None;
    for e in 0..config.epochs {
        let mut order: Vec<usize> = (0..dataset.train.len()).collect();
        order.shuffle(&mut rng::stream(config.seed, Purpose::Shuffle, e as u64));
        let mut total = 0.0;
        for &idx in &order {
            let r = dataset.train[idx];
            let g = rating_gradient(&params, r.user, r.item, r.rating as f64, config.lambda);
            total += g.value;
            apply_mf_step(&mut params, &mut velocity, &g, config.learning_rate, config.momentum, -1.0);
        }
        let held_out = if dataset.validation.is_empty() { &dataset.train } else { &dataset.validation };
        let val = rmse(&params, held_out);
        let objective = if order.is_empty() { 0.0 } else { total / order.len() as f64 };
        trace.push(BaselineEpochLog { epoch: e + 1, objective, validation: val });
        if best.as_ref().is_none_or(|b| val < b.0) {
            best = Some((val, params.clone(), velocity.clone(), e + 1));
        }
    }
    Ok(match best {
        Some((_, params, velocity, best_epoch)) => MfFitResult { params, velocity, trace, best_epoch },
        None => MfFitResult { params, velocity, trace, best_epoch: 0 },
    })
}

/// BPR by SGD over (user, purchased, unpurchased) triples with one uniform
/// negative per training interaction per epoch; keeps the epoch with the best
/// validation NDCG@10.
pub fn bpr_fit(dataset: &SplitDataset, config: &BaselineConfig) -> Result<MfFitResult> {
    config.validate()?;
    let mut params = initial_mf(dataset, config, false);
    let mut velocity = MfParameters::zeros(dataset.user_count, dataset.item_count, config.latent_dim);
    let mut bought = dataset.items_by_user(crate::data::Partition::Train);
    for items in &mut bought {
        items.sort_unstable();
        items.dedup();
    }
    let has_validation = !dataset.validation.is_empty();
    let mut trace = Vec::new();
    let mut best: Option<(f64, MfParameters, MfParameters, usize)> = None;
    for e in 0..config.epochs {
        let mut order: Vec<usize> = (0..dataset.train.len()).collect();
        order.shuffle(&mut rng::stream(config.seed, Purpose::Shuffle, e as u64));
        let mut neg_rng = rng::stream(config.seed, Purpose::BprNegatives, e as u64);
        let (mut total, mut n) = (0.0, 0usize);
        for &idx in &order {
            let r = dataset.train[idx];
            let seen = &bought[r.user];
            if seen.len() >= dataset.item_count {
                continue;
            }
            let negative = loop {
                let cand = neg_rng.random_range(0..dataset.item_count);
                if seen.binary_search(&cand).is_err() {
                    break cand;
                }
            };
            let g = bpr_gradient(&params, r.user, r.item, negative, config.lambda);
            total += g.value;
            n += 1;
            apply_mf_step(&mut params, &mut velocity, &g, config.learning_rate, config.momentum, 1.0);
        }
        let val = if has_validation { validation_ndcg10(&MfScorer(&params), dataset, &config.eval)? } else { 0.0 };
        trace.push(BaselineEpochLog { epoch: e + 1, objective: if n == 0 { 0.0 } else { total / n as f64 }, validation: val });
        if best.as_ref().is_none_or(|b| val > b.0 || !has_validation) {
            best = Some((val, params.clone(), velocity.clone(), e + 1));
        }
    }
    Ok(match best {
        Some((_, params, velocity, best_epoch)) => MfFitResult { params, velocity, trace, best_epoch },
        None => MfFitResult { params, velocity, trace, best_epoch: 0 },
    })
}

/// Ranks by `mf_predict`.
pub struct MfScorer<'a>(pub &'a MfParameters);

impl Scorer for MfScorer<'_> {
    fn score_items(&self, user: usize, items: &[usize]) -> Vec<f64> {
        items.iter().map(|&i| mf_predict(self.0, i, user)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{IdMap, InteractionRecord};
    use crate::scorer::sort_ranked;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn predict_examples() {
        let mut p = MfParameters::zeros(1, 1, 2);
        assert_eq!(mf_predict(&p, 0, 0), 0.0);
        p.global = 3.0;
        assert_eq!(mf_predict(&p, 0, 0), 3.0);
        p.global = 0.0;
        p.item_latent = vec![0.5, 0.5];
        p.user_latent = vec![0.5, 0.5];
        assert_eq!(mf_predict(&p, 0, 0), 0.5);
    }

    #[test]
    fn bpr_equal_scores() {
        let p = MfParameters::zeros(1, 2, 3);
        assert_abs_diff_eq!(bpr_gradient(&p, 0, 0, 1, 0.0).value, 0.5f64.ln(), epsilon = 1e-15);
    }

    fn random_params(seed: u64) -> MfParameters {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = MfParameters::random(3, 4, 3, &mut rng);
        p.global = 2.0;
        for x in p.item_bias.iter_mut().chain(&mut p.user_bias).chain(&mut p.item_latent).chain(&mut p.user_latent) {
            *x = rng.random_range(-0.8..0.8);
        }
        p
    }

    fn all_coords(p: &MfParameters) -> Vec<MfCoord> {
        let mut c = vec![MfCoord::Global];
        for i in 0..p.item_count {
            c.push(MfCoord::ItemBias(i));
            c.extend((0..p.latent_dim).map(|d| MfCoord::ItemLatent(i, d)));
        }
        for u in 0..p.user_count {
            c.push(MfCoord::UserBias(u));
            c.extend((0..p.latent_dim).map(|d| MfCoord::UserLatent(u, d)));
        }
        c
    }

    fn check_fd(p: &MfParameters, f: impl Fn(&MfParameters) -> MfGradient) {
        let g = f(p);
        let h = 1e-5;
        for coord in all_coords(p) {
            let mut plus = p.clone();
            *coord.value_mut(&mut plus) += h;
            let mut minus = p.clone();
            *coord.value_mut(&mut minus) -= h;
            let fd = (f(&plus).value - f(&minus).value) / (2.0 * h);
            let a = g.get(coord);
            let err = (a - fd).abs();
            assert!(err <= 1e-7 || err / a.abs().max(fd.abs()) <= 1e-4, "{coord:?}: {a} vs {fd}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let p = random_params(9);
        check_fd(&p, |q| rating_gradient(q, 1, 2, 4.0, 0.1));
        check_fd(&p, |q| bpr_gradient(q, 2, 0, 3, 0.1));
    }

    fn dataset(train: Vec<InteractionRecord>, users: usize, items: usize) -> SplitDataset {
        SplitDataset {
            train,
            validation: vec![],
            test: vec![],
            user_count: users,
            item_count: items,
            r_max: 5,
            users: IdMap::new(),
            items: IdMap::new(),
        }
    }

    #[test]
    fn rmse_descends_early() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let train: Vec<_> = (0..100)
            .map(|t| InteractionRecord { user: t % 10, item: (t * 7) % 20, rating: rng.random_range(1..=5), timestamp: t as i64 })
            .collect();
        let ds = dataset(train, 10, 20);
        let mut last = f64::INFINITY;
        for epochs in 1..=5 {
            let cfg = BaselineConfig { epochs, learning_rate: 1e-3, latent_dim: 8, ..Default::default() };
            let fit = mf_fit(&ds, &cfg).unwrap();
            assert_eq!(fit.best_epoch, epochs);
            let now = rmse(&fit.params, &ds.train);
            assert!(now <= last, "epoch {epochs}: {now} > {last}");
            last = now;
        }
    }

    #[test]
    fn constant_ratings_pull_global_bias() {
        let train: Vec<_> = (0..200)
            .map(|t| InteractionRecord { user: t % 20, item: (t * 3) % 15, rating: 4, timestamp: t as i64 })
            .collect();
        let ds = dataset(train, 20, 15);
        let cfg = BaselineConfig { epochs: 30, learning_rate: 0.01, latent_dim: 4, ..Default::default() };
        let fit = mf_fit(&ds, &cfg).unwrap();
        assert!((fit.params.global - 4.0).abs() < 0.1);
        assert!(rmse(&fit.params, &ds.train) < 0.1);
    }

    /// Users 0..20 buy only items 0..20, users 20..40 only items 20..40.
    #[test]
    fn bpr_separates_two_clusters() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut train = vec![];
        for u in 0..40usize {
            let base = if u < 20 { 0 } else { 20 };
            for (t, i) in rand::seq::index::sample(&mut rng, 20, 8).into_iter().enumerate() {
                train.push(InteractionRecord { user: u, item: base + i, rating: 5, timestamp: t as i64 });
            }
        }
        let ds = dataset(train, 40, 40);
        let cfg = BaselineConfig { epochs: 40, learning_rate: 0.05, latent_dim: 8, lambda: 1e-4, ..Default::default() };
        let p = bpr_fit(&ds, &cfg).unwrap().params;
        let (mut good, mut total) = (0usize, 0usize);
        for u in 0..40 {
            let own = if u < 20 { 0..20 } else { 20..40 };
            for i in own.clone() {
                for k in (0..40).filter(|k| !own.contains(k)) {
                    total += 1;
                    good += (mf_predict(&p, i, u) > mf_predict(&p, k, u)) as usize;
                }
            }
        }
        let auc = good as f64 / total as f64;
        assert!(auc > 0.9, "AUC {auc}");
    }

    proptest! {
        #[test]
        fn bpr_difference_ignores_user_shift(seed in any::<u64>(), shift in -10.0f64..10.0) {
            let p = random_params(seed);
            let mut q = p.clone();
            q.user_bias[1] += shift;
            q.global += shift;
            let a = bpr_gradient(&p, 1, 0, 2, 0.0).value;
            let b = bpr_gradient(&q, 1, 0, 2, 0.0).value;
            prop_assert!((a - b).abs() <= 1e-12);
        }

        #[test]
        fn ranking_ignores_user_bias(seed in any::<u64>(), shift in -10.0f64..10.0) {
            let p = random_params(seed);
            let mut q = p.clone();
            q.user_bias[0] += shift;
            let rank = |m: &MfParameters| {
                let mut r: Vec<_> = (0..4).map(|i| (i, mf_predict(m, i, 0))).collect();
                sort_ranked(&mut r);
                r.into_iter().map(|x| x.0).collect::<Vec<_>>()
            };
            prop_assert_eq!(rank(&p), rank(&q));
        }
    }
}
