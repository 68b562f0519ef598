//! SGD on the discrete-choice log-likelihood.
//!
//! Each training interaction `(user, item)` becomes a choice among the
//! purchased item and `N - 1` uniformly sampled alternatives. The choice
//! probability is a softmax over scores (plus optional Gaussian noise). One
//! ascent step with momentum is taken per interaction on
//! `log P - λ‖touched‖²`, followed by projection of the user's weighting
//! parameters and reference point into their feasible sets.

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Partition, SplitDataset};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalConfig, Scorer};
use crate::probability::{build_histograms, HistogramStore, PwfKind};
use crate::rng::{self, Purpose};
use crate::scorer::{weu_score, weu_score_with_grad};
use crate::utility::{FactorBlock, WeuParameters, DEFAULT_LATENT_DIM};

pub const DEFAULT_CANDIDATES: usize = 11;
pub const DEFAULT_PROJECTION_EPSILON: f64 = 1e-3;
pub const NOISE_MEAN: f64 = 1.0;
pub const NOISE_STD: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Size of each choice set, the positive included.
    pub candidate_set_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub lambda: f64,
    pub latent_dim: usize,
    pub seed: u64,
    pub noise_enabled: bool,
    pub kind: PwfKind,
    pub projection_epsilon: f64,
    /// Protocol used for per-epoch validation NDCG@10.
    pub eval: EvalConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            candidate_set_size: DEFAULT_CANDIDATES,
            epochs: 20,
            learning_rate: 0.05,
            momentum: 0.0,
            lambda: 1e-3,
            latent_dim: DEFAULT_LATENT_DIM,
            seed: 0,
            noise_enabled: true,
            kind: PwfKind::PrelecPlus,
            projection_epsilon: DEFAULT_PROJECTION_EPSILON,
            eval: EvalConfig { ks: vec![10], ..EvalConfig::default() },
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, item_count: usize) -> Result<()> {
        if self.candidate_set_size < 2 {
            return Err(Error::Config("candidate set size must be at least 2".into()));
        }
        if self.candidate_set_size > item_count {
            return Err(Error::Config(format!(
                "candidate set size {} exceeds catalog of {item_count} items",
                self.candidate_set_size
            )));
        }
        if !(self.learning_rate > 0.0) || !(self.lambda >= 0.0) {
            return Err(Error::Config("learning rate must be positive and lambda non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must lie in [0, 1)".into()));
        }
        if !(self.projection_epsilon > 0.0 && self.projection_epsilon < 0.5) {
            return Err(Error::Config("projection epsilon must lie in (0, 0.5)".into()));
        }
        Ok(())
    }
}

/// The positive item followed by `n - 1` distinct uniformly drawn others.
pub fn sample_candidates<R: Rng + ?Sized>(rng: &mut R, positive: usize, item_count: usize, n: usize) -> Vec<usize> {
    assert!(n >= 1 && n <= item_count && positive < item_count);
    let mut out = Vec::with_capacity(n);
    out.push(positive);
    out.extend(index::sample(rng, item_count - 1, n - 1).into_iter().map(|k| if k >= positive { k + 1 } else { k }));
    out
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Log softmax of `scores + noise` at `positive`.
pub fn choice_log_prob(scores: &[f64], positive: usize, noise: Option<&[f64]>) -> f64 {
    let z: Vec<f64> = match noise {
        Some(eps) => scores.iter().zip(eps).map(|(s, e)| s + e).collect(),
        None => scores.to_vec(),
    };
    z[positive] - log_sum_exp(&z)
}

/// One observed choice: `candidates[positive]` was picked by `user`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceExample {
    pub user: usize,
    pub candidates: Vec<usize>,
    pub positive: usize,
    pub noise: Option<Vec<f64>>,
}

/// Which scalar family a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Field {
    Alpha,
    Beta,
    Delta,
    Gamma,
    Theta,
}

/// Address of one scalar in [`WeuParameters`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Coord {
    Global(Field),
    UserBias(Field, usize),
    /// Alpha or Beta only.
    ItemBias(Field, usize),
    ItemLatent(Field, usize, usize),
    UserLatent(Field, usize, usize),
    RefPoint(usize),
}

fn factor_mut(params: &mut WeuParameters, field: Field) -> &mut FactorBlock {
    match field {
        Field::Alpha => &mut params.alpha,
        Field::Beta => &mut params.beta,
        _ => panic!("{field:?} has no item factors"),
    }
}

impl Coord {
    pub fn value_mut(self, params: &mut WeuParameters) -> &mut f64 {
        let k = params.latent_dim;
        match self {
            Coord::Global(Field::Delta) => &mut params.delta.global,
            Coord::Global(Field::Gamma) => &mut params.gamma.global,
            Coord::Global(Field::Theta) => &mut params.theta.global,
            Coord::Global(f) => &mut factor_mut(params, f).global,
            Coord::UserBias(Field::Delta, u) => &mut params.delta.user_bias[u],
            Coord::UserBias(Field::Gamma, u) => &mut params.gamma.user_bias[u],
            Coord::UserBias(Field::Theta, u) => &mut params.theta.user_bias[u],
            Coord::UserBias(f, u) => &mut factor_mut(params, f).user_bias[u],
            Coord::ItemBias(f, i) => &mut factor_mut(params, f).item_bias[i],
            Coord::ItemLatent(f, i, d) => &mut factor_mut(params, f).item_latent[i * k + d],
            Coord::UserLatent(f, u, d) => &mut factor_mut(params, f).user_latent[u * k + d],
            Coord::RefPoint(u) => &mut params.ref_points[u],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ItemGrad {
    pub item: usize,
    pub bias: f64,
    pub latent: Vec<f64>,
}

/// Gradient of the per-choice objective with respect to one α/β block.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FactorGrad {
    pub global: f64,
    pub user_bias: f64,
    pub user_latent: Vec<f64>,
    pub items: Vec<ItemGrad>,
}

/// Gradient of `log P(choice) - λ‖touched‖²` over every touched parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceGradient {
    pub objective: f64,
    pub log_prob: f64,
    pub user: usize,
    pub alpha: FactorGrad,
    pub beta: FactorGrad,
    /// `(global, user_bias)` for δ, γ, θ; `None` when the kind ignores them.
    pub delta: Option<(f64, f64)>,
    pub gamma: Option<(f64, f64)>,
    pub theta: Option<(f64, f64)>,
    pub ref_point: f64,
}

impl ChoiceGradient {
    /// The gradient entry for `coord`; zero for untouched parameters.
    pub fn get(&self, coord: Coord) -> f64 {
        let factor = |f: Field| match f {
            Field::Alpha => Some(&self.alpha),
            Field::Beta => Some(&self.beta),
            _ => None,
        };
        let pwf = |f: Field| match f {
            Field::Delta => self.delta,
            Field::Gamma => self.gamma,
            Field::Theta => self.theta,
            _ => None,
        };
        match coord {
            Coord::Global(f) => factor(f).map(|g| g.global).or_else(|| pwf(f).map(|g| g.0)).unwrap_or(0.0),
            Coord::UserBias(f, u) if u == self.user => {
                factor(f).map(|g| g.user_bias).or_else(|| pwf(f).map(|g| g.1)).unwrap_or(0.0)
            }
            Coord::UserLatent(f, u, d) if u == self.user => factor(f).map_or(0.0, |g| g.user_latent[d]),
            Coord::ItemBias(f, i) => factor(f)
                .and_then(|g| g.items.iter().find(|x| x.item == i))
                .map_or(0.0, |x| x.bias),
            Coord::ItemLatent(f, i, d) => factor(f)
                .and_then(|g| g.items.iter().find(|x| x.item == i))
                .map_or(0.0, |x| x.latent[d]),
            Coord::RefPoint(u) if u == self.user => self.ref_point,
            _ => 0.0,
        }
    }
}

fn sq(xs: &[f64]) -> f64 {
    xs.iter().map(|x| x * x).sum()
}

/// Objective and analytic gradient of one choice.
///
/// Regularized parameters: item/user biases and latent rows of α and β for
/// every candidate and the user, plus the user's δ, γ (and θ when learned)
/// biases. Global biases and the reference point are not regularized.
pub fn choice_gradient(
    params: &WeuParameters,
    hists: &HistogramStore,
    example: &ChoiceExample,
    kind: PwfKind,
    lambda: f64,
) -> ChoiceGradient {
    let k = params.latent_dim;
    let user = example.user;
    let n = example.candidates.len();
    let mut z = Vec::with_capacity(n);
    let mut partials = Vec::with_capacity(n);
    for (c, &item) in example.candidates.iter().enumerate() {
        let (s, g) = weu_score_with_grad(params, hists, user, item, kind);
        z.push(s + example.noise.as_ref().map_or(0.0, |e| e[c]));
        partials.push(g);
    }
    let lse = log_sum_exp(&z);
    let log_prob = z[example.positive] - lse;
    let coef: Vec<f64> = z
        .iter()
        .enumerate()
        .map(|(c, zc)| (c == example.positive) as u8 as f64 - (zc - lse).exp())
        .collect();

    let two_lambda = 2.0 * lambda;
    let mut reg = 0.0;
    let mut factor_grad = |block: &FactorBlock, pick: fn(&crate::scorer::ScoreGrad) -> f64| {
        let user_row = block.user_row(user, k);
        let mut g = FactorGrad { user_latent: vec![0.0; k], ..Default::default() };
        for (c, &item) in example.candidates.iter().enumerate() {
            let d = coef[c] * pick(&partials[c]);
            g.global += d;
            g.user_bias += d;
            let item_row = block.item_row(item, k);
            for (acc, x) in g.user_latent.iter_mut().zip(item_row) {
                *acc += d * x;
            }
            let bias = block.item_bias[item];
            reg += bias * bias + sq(item_row);
            g.items.push(ItemGrad {
                item,
                bias: d - two_lambda * bias,
                latent: item_row.iter().zip(user_row).map(|(i, u)| d * u - two_lambda * i).collect(),
            });
        }
        let bias = block.user_bias[user];
        reg += bias * bias + sq(user_row);
        g.user_bias -= two_lambda * bias;
        for (acc, u) in g.user_latent.iter_mut().zip(user_row) {
            *acc -= two_lambda * u;
        }
        g
    };
    let alpha = factor_grad(&params.alpha, |g| g.alpha);
    let beta = factor_grad(&params.beta, |g| g.beta);

    let mut pwf_grad = |enabled: bool, bias: f64, pick: fn(&crate::scorer::ScoreGrad) -> f64| {
        enabled.then(|| {
            let d: f64 = coef.iter().zip(&partials).map(|(c, g)| c * pick(g)).sum();
            reg += bias * bias;
            (d, d - two_lambda * bias)
        })
    };
    let delta = pwf_grad(kind.is_weighted(), params.delta.user_bias[user], |g| g.delta);
    let gamma = pwf_grad(kind.is_weighted(), params.gamma.user_bias[user], |g| g.gamma);
    let theta = pwf_grad(kind.learns_theta(), params.theta.user_bias[user], |g| g.theta);
    let ref_point = coef.iter().zip(&partials).map(|(c, g)| c * g.ref_point).sum();

    ChoiceGradient { objective: log_prob - lambda * reg, log_prob, user, alpha, beta, delta, gamma, theta, ref_point }
}

/// Optimizer state carried across epochs; checkpointed next to the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Number of completed epochs.
    pub epoch: usize,
    pub seed: u64,
    /// Momentum buffers, shaped like the parameters.
    pub velocity: WeuParameters,
}

impl TrainState {
    pub fn new(params: &WeuParameters, seed: u64) -> Self {
        let velocity =
            WeuParameters::zeros(params.user_count, params.item_count, params.latent_dim, params.r_max, params.kind);
        Self { epoch: 0, seed, velocity }
    }
}

fn ascend(param: &mut f64, velocity: &mut f64, grad: f64, lr: f64, momentum: f64) {
    *velocity = momentum * *velocity + lr * grad;
    *param += *velocity;
}

/// Applies one momentum ascent step for every parameter in `grad`.
pub fn apply_step(params: &mut WeuParameters, velocity: &mut WeuParameters, grad: &ChoiceGradient, lr: f64, momentum: f64) {
    let k = params.latent_dim;
    let u = grad.user;
    for (field, g) in [(Field::Alpha, &grad.alpha), (Field::Beta, &grad.beta)] {
        let (p, v) = (factor_mut(params, field), factor_mut(velocity, field));
        ascend(&mut p.global, &mut v.global, g.global, lr, momentum);
        ascend(&mut p.user_bias[u], &mut v.user_bias[u], g.user_bias, lr, momentum);
        for d in 0..k {
            ascend(&mut p.user_latent[u * k + d], &mut v.user_latent[u * k + d], g.user_latent[d], lr, momentum);
        }
        for ig in &g.items {
            let i = ig.item;
            ascend(&mut p.item_bias[i], &mut v.item_bias[i], ig.bias, lr, momentum);
            for d in 0..k {
                ascend(&mut p.item_latent[i * k + d], &mut v.item_latent[i * k + d], ig.latent[d], lr, momentum);
            }
        }
    }
    for (g, p, v) in [
        (grad.delta, &mut params.delta, &mut velocity.delta),
        (grad.gamma, &mut params.gamma, &mut velocity.gamma),
        (grad.theta, &mut params.theta, &mut velocity.theta),
    ] {
        if let Some((global, user)) = g {
            ascend(&mut p.global, &mut v.global, global, lr, momentum);
            ascend(&mut p.user_bias[u], &mut v.user_bias[u], user, lr, momentum);
        }
    }
    ascend(&mut params.ref_points[u], &mut velocity.ref_points[u], grad.ref_point, lr, momentum);
}

/// One pass over the training interactions in a seeded shuffled order.
/// Returns the mean per-choice objective.
pub fn epoch(
    params: &mut WeuParameters,
    state: &mut TrainState,
    dataset: &SplitDataset,
    hists: &HistogramStore,
    config: &TrainConfig,
) -> Result<f64> {
    params.check_against(dataset)?;
    config.validate(dataset.item_count)?;
    let e = state.epoch as u64;
    let mut order: Vec<usize> = (0..dataset.train.len()).collect();
    order.shuffle(&mut rng::stream(config.seed, Purpose::Shuffle, e));
    let mut cand_rng = rng::stream(config.seed, Purpose::Candidates, e);
    let mut noise_rng = rng::stream(config.seed, Purpose::Noise, e);
    let noise = Normal::new(NOISE_MEAN, NOISE_STD).expect("valid normal");
    let eps = config.projection_epsilon;

    let mut total = 0.0;
    for &idx in &order {
        let rec = dataset.train[idx];
        let candidates = sample_candidates(&mut cand_rng, rec.item, dataset.item_count, config.candidate_set_size);
        let draws = config
            .noise_enabled
            .then(|| (0..candidates.len()).map(|_| noise.sample(&mut noise_rng)).collect());
        let example = ChoiceExample { user: rec.user, candidates, positive: 0, noise: draws };
        params.project_user(rec.user, eps);
        let grad = choice_gradient(params, hists, &example, config.kind, config.lambda);
        total += grad.objective;
        apply_step(params, &mut state.velocity, &grad, config.learning_rate, config.momentum);
        params.project_user(rec.user, eps);
    }
    params.project_all(eps);
    state.epoch += 1;
    Ok(if order.is_empty() { 0.0 } else { total / order.len() as f64 })
}

/// Deterministic scorer over a trained parameter store.
pub struct WeuScorer<'a> {
    pub params: &'a WeuParameters,
    pub hists: &'a HistogramStore,
    pub kind: PwfKind,
}

impl<'a> WeuScorer<'a> {
    pub fn new(params: &'a WeuParameters, hists: &'a HistogramStore) -> Self {
        Self { params, hists, kind: params.kind }
    }
}

impl Scorer for WeuScorer<'_> {
    fn score_items(&self, user: usize, items: &[usize]) -> Vec<f64> {
        items.iter().map(|&i| weu_score(self.params, self.hists, user, i, self.kind)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub objective: f64,
    pub val_ndcg10: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: WeuParameters,
    pub state: TrainState,
    pub trace: Vec<EpochLog>,
    /// 1-based epoch whose parameters were kept; 0 when nothing was trained.
    pub best_epoch: usize,
}

/// Validation NDCG@10 under `eval`, or 0 when there are no validation users.
pub fn validation_ndcg10<S: Scorer + ?Sized>(scorer: &S, dataset: &SplitDataset, eval: &EvalConfig) -> Result<f64> {
    let config = EvalConfig { ks: vec![10], ..eval.clone() };
    Ok(evaluate(scorer, dataset, Partition::Validation, &config)?.metrics.ndcg_at(10))
}

/// Trains from the standard initialization and keeps the epoch with the
/// best validation NDCG@10.
pub fn fit(dataset: &SplitDataset, config: &TrainConfig) -> Result<FitResult> {
    config.validate(dataset.item_count)?;
    let hists = build_histograms(&dataset.train, dataset.item_count, dataset.r_max);
    let mut init_rng = rng::stream(config.seed, Purpose::Init, 0);
    let params = WeuParameters::initialize(dataset, config.latent_dim, config.kind, &mut init_rng);
    fit_from(params, dataset, &hists, config)
}

/// Trains `params` for `config.epochs` epochs with fresh optimizer state.
pub fn fit_from(
    mut params: WeuParameters,
    dataset: &SplitDataset,
    hists: &HistogramStore,
    config: &TrainConfig,
) -> Result<FitResult> {
    let mut state = TrainState::new(&params, config.seed);
    resume(&mut params, &mut state, dataset, hists, config)
}

/// Runs `config.epochs` epochs starting from an existing optimizer state.
pub fn resume(
    params: &mut WeuParameters,
    state: &mut TrainState,
    dataset: &SplitDataset,
    hists: &HistogramStore,
    config: &TrainConfig,
) -> Result<FitResult> {
    params.check_against(dataset)?;
    let has_validation = !dataset.validation.is_empty();
    let mut best: Option<(f64, WeuParameters, TrainState, usize)> = None;
    let mut trace = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let objective = epoch(params, state, dataset, hists, config)?;
        let val = if has_validation {
            validation_ndcg10(&WeuScorer { params, hists, kind: config.kind }, dataset, &config.eval)?
        } else {
            0.0
        };
        trace.push(EpochLog { epoch: state.epoch, objective, val_ndcg10: val });
        if best.as_ref().is_none_or(|b| val > b.0 || !has_validation) {
            best = Some((val, params.clone(), state.clone(), state.epoch));
        }
    }
    Ok(match best {
        Some((_, p, s, e)) => FitResult { params: p, state: s, trace, best_epoch: e },
        None => FitResult { params: params.clone(), state: state.clone(), trace, best_epoch: 0 },
    })
}
