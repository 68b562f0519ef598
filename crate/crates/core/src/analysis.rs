//! Interpretability exports: per-user mean utility scales and the mean
//! learned weighting curve.

use std::io::Write;

use crate::data::{Partition, SplitDataset};
use crate::probability::{weight_grid, PwfKind, PwfParams};
use crate::utility::{materialize_alpha_beta, materialize_pwf_params, WeuParameters};

pub const DEFAULT_BINS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UserScaleSummary {
    pub user: usize,
    pub mean_alpha: f64,
    pub mean_beta: f64,
    /// `mean_alpha - mean_beta`.
    pub diff: f64,
}

/// Users with at least one test record, in index order.
pub fn test_users(dataset: &SplitDataset) -> Vec<usize> {
    let by_user = dataset.items_by_user(Partition::Test);
    (0..dataset.user_count).filter(|&u| !by_user[u].is_empty()).collect()
}

/// Distinct items that appear anywhere in the test partition, sorted.
pub fn test_items(dataset: &SplitDataset) -> Vec<usize> {
    let mut items: Vec<usize> = dataset.test.iter().map(|r| r.item).collect();
    items.sort_unstable();
    items.dedup();
    items
}

/// For every user, the mean of `α_ij` and `β_ij` over `items`.
pub fn scale_summaries_over(params: &WeuParameters, users: &[usize], items: &[usize]) -> Vec<UserScaleSummary> {
    users
        .iter()
        .map(|&user| {
            let (mut a, mut b) = (0.0, 0.0);
            for &item in items {
                let (alpha, beta) = materialize_alpha_beta(params, item, user);
                a += alpha;
                b += beta;
            }
            let n = items.len().max(1) as f64;
            let (mean_alpha, mean_beta) = (a / n, b / n);
            UserScaleSummary { user, mean_alpha, mean_beta, diff: mean_alpha - mean_beta }
        })
        .collect()
}

/// Mean utility scales of each test user over the test-item set.
pub fn user_scale_summaries(params: &WeuParameters, dataset: &SplitDataset) -> Vec<UserScaleSummary> {
    scale_summaries_over(params, &test_users(dataset), &test_items(dataset))
}

/// Fraction of summaries with `mean_alpha > mean_beta`.
pub fn fraction_gain_dominant(summaries: &[UserScaleSummary]) -> f64 {
    if summaries.is_empty() {
        return 0.0;
    }
    summaries.iter().filter(|s| s.mean_alpha > s.mean_beta).count() as f64 / summaries.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleBin {
    pub lo: f64,
    pub hi: f64,
    pub count_alpha: usize,
    pub count_beta: usize,
    pub count_diff: usize,
}

/// Equal-width bins over the joint observed range of ᾱ, β̄ and their difference.
pub fn scale_histogram(summaries: &[UserScaleSummary], bins: usize) -> Vec<ScaleBin> {
    let bins = bins.max(1);
    let values = summaries.iter().flat_map(|s| [s.mean_alpha, s.mean_beta, s.diff]);
    let (mut lo, mut hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    if summaries.is_empty() {
        (lo, hi) = (0.0, 1.0);
    } else if hi - lo <= f64::EPSILON * lo.abs().max(1.0) {
        (lo, hi) = (lo - 0.5, hi + 0.5);
    }
    let width = (hi - lo) / bins as f64;
    let mut out: Vec<ScaleBin> = (0..bins)
        .map(|b| ScaleBin {
            lo: lo + b as f64 * width,
            hi: if b + 1 == bins { hi } else { lo + (b + 1) as f64 * width },
            count_alpha: 0,
            count_beta: 0,
            count_diff: 0,
        })
        .collect();
    let slot = |v: f64| (((v - lo) / width) as usize).min(bins - 1);
    for s in summaries {
        out[slot(s.mean_alpha)].count_alpha += 1;
        out[slot(s.mean_beta)].count_beta += 1;
        out[slot(s.diff)].count_diff += 1;
    }
    out
}

/// Average of the materialized weighting parameters over `users`.
pub fn mean_pwf_params(params: &WeuParameters, users: &[usize], kind: PwfKind) -> PwfParams {
    if users.is_empty() {
        return materialize_pwf_params(params, 0, kind);
    }
    let n = users.len() as f64;
    let (d, g, t) = users
        .iter()
        .map(|&u| materialize_pwf_params(params, u, kind))
        .fold((0.0, 0.0, 0.0), |acc, p| (acc.0 + p.delta, acc.1 + p.gamma, acc.2 + p.theta));
    PwfParams::new(d / n, g / n, t / n)
}

/// `(p, w_model, w_identity)` rows of the curve evaluated at `mean` params.
pub fn pwf_curve(kind: PwfKind, mean: PwfParams, grid_step: f64) -> Vec<(f64, f64, f64)> {
    weight_grid(kind, mean, grid_step).into_iter().map(|(p, w)| (p, w, p)).collect()
}

/// The mean-parameter weighting curve over test users.
pub fn export_mean_pwf_curve(
    params: &WeuParameters,
    dataset: &SplitDataset,
    kind: PwfKind,
    grid_step: f64,
) -> Vec<(f64, f64, f64)> {
    pwf_curve(kind, mean_pwf_params(params, &test_users(dataset), kind), grid_step)
}

pub fn write_user_scales<W: Write + ?Sized>(w: &mut W, dataset: &SplitDataset, rows: &[UserScaleSummary]) -> std::io::Result<()> {
    writeln!(w, "user,mean_alpha,mean_beta,diff")?;
    for s in rows {
        let user = dataset.users.raw(s.user).map_or_else(|| s.user.to_string(), str::to_owned);
        writeln!(w, "{user},{},{},{}", s.mean_alpha, s.mean_beta, s.diff)?;
    }
    Ok(())
}

pub fn write_scale_histogram<W: Write + ?Sized>(w: &mut W, bins: &[ScaleBin]) -> std::io::Result<()> {
    writeln!(w, "bin_lo,bin_hi,count_alpha,count_beta,count_diff")?;
    for b in bins {
        writeln!(w, "{},{},{},{},{}", b.lo, b.hi, b.count_alpha, b.count_beta, b.count_diff)?;
    }
    Ok(())
}

pub fn write_pwf_curve<W: Write + ?Sized>(w: &mut W, rows: &[(f64, f64, f64)]) -> std::io::Result<()> {
    writeln!(w, "p,w_model,w_identity")?;
    for (p, wm, wi) in rows {
        writeln!(w, "{p},{wm},{wi}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};

    #[test]
    fn zero_model_has_zero_scales() {
        let p = WeuParameters::zeros(3, 4, 2, 5, PwfKind::Tf);
        let rows = scale_summaries_over(&p, &[0, 2], &[1, 3]);
        assert!(rows.iter().all(|r| r.mean_alpha == 0.0 && r.mean_beta == 0.0 && r.diff == 0.0));
    }

    fn random_params(seed: u64) -> WeuParameters {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut p = WeuParameters::zeros(2, 12, 3, 5, PwfKind::TfPlus);
        p.alpha.global = 0.7;
        p.beta.global = 1.3;
        for b in [&mut p.alpha, &mut p.beta] {
            for x in b.item_bias.iter_mut().chain(&mut b.user_bias).chain(&mut b.item_latent).chain(&mut b.user_latent) {
                *x = rng.random_range(-1.0..1.0);
            }
        }
        p
    }

    #[test]
    fn single_item_mean_is_the_value() {
        let p = random_params(1);
        let row = scale_summaries_over(&p, &[1], &[7])[0];
        let (a, b) = materialize_alpha_beta(&p, 7, 1);
        assert_eq!((row.mean_alpha, row.mean_beta), (a, b));
        assert_eq!(row.diff, a - b);
    }

    #[test]
    fn mean_matches_direct_summation() {
        let p = random_params(2);
        let items: Vec<usize> = (0..10).collect();
        let row = scale_summaries_over(&p, &[0], &items)[0];
        let k = p.latent_dim;
        let mut direct = 0.0;
        for &i in &items {
            let mut v = p.alpha.global + p.alpha.item_bias[i] + p.alpha.user_bias[0];
            for d in 0..k {
                v += p.alpha.item_latent[i * k + d] * p.alpha.user_latent[d];
            }
            direct += v;
        }
        assert_abs_diff_eq!(row.mean_alpha, direct / 10.0, epsilon = 1e-12);
    }

    #[test]
    fn histogram_counts_every_user() {
        let rows: Vec<_> = (0..30)
            .map(|u| UserScaleSummary { user: u, mean_alpha: u as f64, mean_beta: 2.0 * u as f64, diff: -(u as f64) })
            .collect();
        let bins = scale_histogram(&rows, 50);
        assert_eq!(bins.len(), 50);
        assert_eq!(bins.iter().map(|b| b.count_alpha).sum::<usize>(), 30);
        assert_eq!(bins.iter().map(|b| b.count_diff).sum::<usize>(), 30);
        assert_eq!(bins[0].lo, -29.0);
        assert_eq!(bins[49].hi, 58.0);
        assert_eq!(bins[49].count_beta, 1);
        assert_eq!(fraction_gain_dominant(&rows), 0.0);
        let flat = scale_histogram(&[UserScaleSummary { user: 0, mean_alpha: 0.0, mean_beta: 0.0, diff: 0.0 }], 50);
        assert_eq!(flat.iter().map(|b| b.count_alpha).sum::<usize>(), 1);
    }

    #[test]
    fn curves() {
        let identity = pwf_curve(PwfKind::Identity, PwfParams::new(0.5, 1.0, 1.0), 0.01);
        assert!(identity.iter().all(|&(p, w, i)| w == p && i == p));
        for kind in PwfKind::ALL {
            let c = pwf_curve(kind, PwfParams::new(0.6, 0.7, 0.8), 0.01);
            assert_eq!(c.last().unwrap().1, 1.0);
        }
        let tf = pwf_curve(PwfKind::Tf, PwfParams::new(0.9, 0.5, 1.0), 0.01);
        assert_abs_diff_eq!(tf[25].1, 0.3419, epsilon = 1e-4);
    }

    #[test]
    fn mean_params_average_users() {
        let mut p = WeuParameters::zeros(2, 1, 1, 5, PwfKind::TfPlus);
        p.delta.global = 0.5;
        p.delta.user_bias = vec![0.1, 0.3];
        p.gamma.global = 1.0;
        p.theta.global = 0.5;
        let m = mean_pwf_params(&p, &[0, 1], PwfKind::TfPlus);
        assert_abs_diff_eq!(m.delta, 0.7, epsilon = 1e-15);
        assert_eq!(m.gamma, 1.0);
        assert_eq!(mean_pwf_params(&p, &[0, 1], PwfKind::Tf).theta, 1.0);
    }
}
