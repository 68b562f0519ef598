//! Expected-utility scores and deterministic rankings.

use std::cmp::Ordering;

use crate::data::RatingHistogram;
use crate::error::{Error, Result};
use crate::probability::{weight_with_grad, HistogramStore, PwfKind, PwfParams};
use crate::utility::{materialize_alpha_beta, materialize_pwf_params, outcome, utility_with_grad, WeuParameters};

/// Partials of one (user, item) score with respect to the materialized quantities.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ScoreGrad {
    pub alpha: f64,
    pub beta: f64,
    pub ref_point: f64,
    pub delta: f64,
    pub gamma: f64,
    pub theta: f64,
}

/// Score of one outcome distribution for fixed materialized parameters.
///
/// Outcomes with zero probability are skipped; every weighting maps 0 to 0,
/// so this equals the full sum.
pub fn expected_utility_with_grad(
    hist: &RatingHistogram,
    ref_point: f64,
    alpha: f64,
    beta: f64,
    kind: PwfKind,
    pwf: PwfParams,
) -> (f64, ScoreGrad) {
    let mut score = 0.0;
    let mut grad = ScoreGrad::default();
    for (rating, p) in hist.support() {
        let u = utility_with_grad(outcome(rating, ref_point), alpha, beta);
        let (w, gw) = weight_with_grad(kind, p, pwf);
        score += u.value * w;
        grad.alpha += u.d_alpha * w;
        grad.beta += u.d_beta * w;
        grad.ref_point -= u.d_outcome * w;
        grad.delta += u.value * gw.delta;
        grad.gamma += u.value * gw.gamma;
        grad.theta += u.value * gw.theta;
    }
    (score, grad)
}

pub fn weu_score_with_grad(
    params: &WeuParameters,
    hists: &HistogramStore,
    user: usize,
    item: usize,
    kind: PwfKind,
) -> (f64, ScoreGrad) {
    let (alpha, beta) = materialize_alpha_beta(params, item, user);
    let pwf = materialize_pwf_params(params, user, kind);
    expected_utility_with_grad(hists.for_item(item), params.ref_points[user], alpha, beta, kind, pwf)
}

/// Weighted expected utility of `item` for `user`. With
/// [`PwfKind::Identity`] this is the plain expected utility.
pub fn weu_score(params: &WeuParameters, hists: &HistogramStore, user: usize, item: usize, kind: PwfKind) -> f64 {
    weu_score_with_grad(params, hists, user, item, kind).0
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRequest {
    pub user: usize,
    pub candidates: Vec<usize>,
    pub kind: PwfKind,
}

impl ScoreRequest {
    pub fn validate(&self, user_count: usize, item_count: usize) -> Result<()> {
        if self.candidates.is_empty() {
            return Err(Error::Config("empty candidate list".into()));
        }
        if self.user >= user_count {
            return Err(Error::Config(format!("user {} out of range ({user_count} users)", self.user)));
        }
        if let Some(&bad) = self.candidates.iter().find(|&&i| i >= item_count) {
            return Err(Error::Config(format!("item {bad} out of range ({item_count} items)")));
        }
        Ok(())
    }
}

/// Sorts `(item, score)` pairs by score descending, then item ascending.
pub fn sort_ranked(ranked: &mut [(usize, f64)]) {
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0)));
}

/// Candidates ordered by score (highest first), ties to the lower item index.
pub fn rank_candidates(params: &WeuParameters, hists: &HistogramStore, request: &ScoreRequest) -> Result<Vec<(usize, f64)>> {
    request.validate(params.user_count, params.item_count)?;
    let mut ranked: Vec<(usize, f64)> = request
        .candidates
        .iter()
        .map(|&item| (item, weu_score(params, hists, request.user, item, request.kind)))
        .collect();
    sort_ranked(&mut ranked);
    Ok(ranked)
}
