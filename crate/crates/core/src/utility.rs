//! Satisfaction outcomes, the gain/loss utility, and the learnable parameter store.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::SplitDataset;
use crate::error::{Error, Result};
use crate::probability::{PwfKind, PwfParams};

pub const DEFAULT_LATENT_DIM: usize = 64;

/// Signed satisfaction of `rating` relative to the user's reference point.
pub fn outcome(rating: u8, ref_point: f64) -> f64 {
    rating as f64 - ref_point
}

/// `alpha·tanh(o)` for gains (`o >= 0`), `beta·tanh(o)` for losses.
pub fn utility(o: f64, alpha: f64, beta: f64) -> f64 {
    if o >= 0.0 {
        alpha * o.tanh()
    } else {
        beta * o.tanh()
    }
}

/// Utility with its partials.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtilityGrad {
    pub value: f64,
    pub d_alpha: f64,
    pub d_beta: f64,
    pub d_outcome: f64,
}

/// At `o = 0` the gain branch is used, so `d_outcome = alpha`.
pub fn utility_with_grad(o: f64, alpha: f64, beta: f64) -> UtilityGrad {
    let t = o.tanh();
    let slope = 1.0 - t * t;
    if o >= 0.0 {
        UtilityGrad { value: alpha * t, d_alpha: t, d_beta: 0.0, d_outcome: alpha * slope }
    } else {
        UtilityGrad { value: beta * t, d_alpha: 0.0, d_beta: t, d_outcome: beta * slope }
    }
}

/// Global + item + user biases plus an item·user latent dot product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorBlock {
    pub global: f64,
    pub item_bias: Vec<f64>,
    pub user_bias: Vec<f64>,
    /// Row-major `item_count × latent_dim`.
    pub item_latent: Vec<f64>,
    /// Row-major `user_count × latent_dim`.
    pub user_latent: Vec<f64>,
}

impl FactorBlock {
    fn zeros(users: usize, items: usize, k: usize) -> Self {
        Self {
            global: 0.0,
            item_bias: vec![0.0; items],
            user_bias: vec![0.0; users],
            item_latent: vec![0.0; items * k],
            user_latent: vec![0.0; users * k],
        }
    }

    pub fn item_row(&self, item: usize, k: usize) -> &[f64] {
        &self.item_latent[item * k..(item + 1) * k]
    }

    pub fn user_row(&self, user: usize, k: usize) -> &[f64] {
        &self.user_latent[user * k..(user + 1) * k]
    }

    pub fn value(&self, item: usize, user: usize, k: usize) -> f64 {
        let dot: f64 = self.item_row(item, k).iter().zip(self.user_row(user, k)).map(|(a, b)| a * b).sum();
        self.global + self.item_bias[item] + self.user_bias[user] + dot
    }

    fn check(&self, name: &str, users: usize, items: usize, k: usize) -> Result<()> {
        if self.item_bias.len() != items
            || self.user_bias.len() != users
            || self.item_latent.len() != items * k
            || self.user_latent.len() != users * k
        {
            return Err(Error::Config(format!("{name} block does not match {users} users x {items} items x {k} factors")));
        }
        Ok(())
    }
}

/// Global + user bias, for the per-user weighting parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserBlock {
    pub global: f64,
    pub user_bias: Vec<f64>,
}

impl UserBlock {
    fn constant(users: usize, global: f64) -> Self {
        Self { global, user_bias: vec![0.0; users] }
    }

    pub fn value(&self, user: usize) -> f64 {
        self.global + self.user_bias[user]
    }

    /// Moves the user's bias so the materialized value lands in `[lo, hi]`.
    fn clamp_user(&mut self, user: usize, lo: f64, hi: f64) {
        let v = self.value(user);
        if v < lo {
            let mut bias = lo - self.global;
            while self.global + bias < lo {
                bias = bias.next_up();
            }
            self.user_bias[user] = bias;
        } else if v > hi {
            let mut bias = hi - self.global;
            while self.global + bias > hi {
                bias = bias.next_down();
            }
            self.user_bias[user] = bias;
        }
    }
}

/// Every learnable quantity of a weighted-expected-utility model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeuParameters {
    pub user_count: usize,
    pub item_count: usize,
    pub latent_dim: usize,
    pub r_max: u8,
    pub kind: PwfKind,
    pub alpha: FactorBlock,
    pub beta: FactorBlock,
    pub delta: UserBlock,
    pub gamma: UserBlock,
    pub theta: UserBlock,
    pub ref_points: Vec<f64>,
}

impl WeuParameters {
    /// All-zero store (biases, factors, and reference points).
    pub fn zeros(user_count: usize, item_count: usize, latent_dim: usize, r_max: u8, kind: PwfKind) -> Self {
        Self {
            user_count,
            item_count,
            latent_dim,
            r_max,
            kind,
            alpha: FactorBlock::zeros(user_count, item_count, latent_dim),
            beta: FactorBlock::zeros(user_count, item_count, latent_dim),
            delta: UserBlock::constant(user_count, 0.0),
            gamma: UserBlock::constant(user_count, 0.0),
            theta: UserBlock::constant(user_count, 0.0),
            ref_points: vec![0.0; user_count],
        }
    }

    /// Training start point: symmetric unit utility scales, δ = 0.5, γ = 1,
    /// θ = 1, zero per-entity biases, latent entries uniform in
    /// `±0.01/√K`, and each user's reference point at their mean training
    /// rating (global mean for users without training data).
    pub fn initialize<R: Rng + ?Sized>(dataset: &SplitDataset, latent_dim: usize, kind: PwfKind, rng: &mut R) -> Self {
        let (users, items) = (dataset.user_count, dataset.item_count);
        let mut p = Self::zeros(users, items, latent_dim, dataset.r_max, kind);
        p.alpha.global = 1.0;
        p.beta.global = 1.0;
        p.delta.global = 0.5;
        p.gamma.global = 1.0;
        p.theta.global = 1.0;
        let bound = 0.01 / (latent_dim.max(1) as f64).sqrt();
        for block in [&mut p.alpha, &mut p.beta] {
            for x in block.item_latent.iter_mut().chain(block.user_latent.iter_mut()) {
                *x = rng.random_range(-bound..=bound);
            }
        }

        let mut sum = vec![0.0; users];
        let mut count = vec![0usize; users];
        for r in &dataset.train {
            sum[r.user] += r.rating as f64;
            count[r.user] += 1;
        }
        let global_mean = if dataset.train.is_empty() {
            (1.0 + dataset.r_max as f64) / 2.0
        } else {
            sum.iter().sum::<f64>() / dataset.train.len() as f64
        };
        for u in 0..users {
            let mean = if count[u] > 0 { sum[u] / count[u] as f64 } else { global_mean };
            p.ref_points[u] = mean.clamp(1.0, dataset.r_max as f64);
        }
        p
    }

    pub fn check_shape(&self) -> Result<()> {
        let (u, i, k) = (self.user_count, self.item_count, self.latent_dim);
        self.alpha.check("alpha", u, i, k)?;
        self.beta.check("beta", u, i, k)?;
        for (name, b) in [("delta", &self.delta), ("gamma", &self.gamma), ("theta", &self.theta)] {
            if b.user_bias.len() != u {
                return Err(Error::Config(format!("{name} block does not match {u} users")));
            }
        }
        if self.ref_points.len() != u {
            return Err(Error::Config(format!("reference points do not match {u} users")));
        }
        Ok(())
    }

    /// Errors unless the store's shape matches the dataset.
    pub fn check_against(&self, dataset: &SplitDataset) -> Result<()> {
        self.check_shape()?;
        if self.user_count != dataset.user_count || self.item_count != dataset.item_count || self.r_max != dataset.r_max {
            return Err(Error::ShapeMismatch {
                checkpoint: format!("{} users x {} items, r_max {}", self.user_count, self.item_count, self.r_max),
                dataset: format!("{} users x {} items, r_max {}", dataset.user_count, dataset.item_count, dataset.r_max),
            });
        }
        Ok(())
    }

    /// Projects one user's δ, γ, θ and reference point into their feasible sets.
    pub fn project_user(&mut self, user: usize, eps: f64) {
        self.delta.clamp_user(user, eps, 1.0 - eps);
        self.gamma.clamp_user(user, eps, f64::INFINITY);
        if self.kind.learns_theta() {
            self.theta.clamp_user(user, eps, 1.0);
        }
        self.ref_points[user] = self.ref_points[user].clamp(1.0, self.r_max as f64);
    }

    pub fn project_all(&mut self, eps: f64) {
        for u in 0..self.user_count {
            self.project_user(u, eps);
        }
    }

    pub fn is_finite(&self) -> bool {
        let blocks = [&self.alpha, &self.beta];
        let users = [&self.delta, &self.gamma, &self.theta];
        blocks.iter().all(|b| {
            b.global.is_finite()
                && b.item_bias.iter().chain(&b.user_bias).chain(&b.item_latent).chain(&b.user_latent).all(|x| x.is_finite())
        }) && users.iter().all(|b| b.global.is_finite() && b.user_bias.iter().all(|x| x.is_finite()))
            && self.ref_points.iter().all(|x| x.is_finite())
    }
}

/// Pairwise utility scales `(α_ij, β_ij)`.
pub fn materialize_alpha_beta(params: &WeuParameters, item: usize, user: usize) -> (f64, f64) {
    let k = params.latent_dim;
    (params.alpha.value(item, user, k), params.beta.value(item, user, k))
}

/// The user's weighting parameters; θ is 1 unless `kind` learns it.
pub fn materialize_pwf_params(params: &WeuParameters, user: usize, kind: PwfKind) -> PwfParams {
    let theta = if kind.learns_theta() { params.theta.value(user) } else { 1.0 };
    PwfParams { delta: params.delta.value(user), gamma: params.gamma.value(user), theta }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{IdMap, InteractionRecord};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;

    #[test]
    fn outcome_examples() {
        assert_eq!(outcome(5, 3.0), 2.0);
        assert_eq!(outcome(3, 3.0), 0.0);
        assert_eq!(outcome(1, 3.5), -2.5);
    }

    #[test]
    fn utility_examples() {
        assert_abs_diff_eq!(utility(1.0, 1.0, 2.0), 0.76159, epsilon = 1e-5);
        assert_abs_diff_eq!(utility(-1.0, 1.0, 2.0), -1.52319, epsilon = 1e-5);
        assert_eq!(utility(0.0, 3.0, 7.0), 0.0);
        let g = utility_with_grad(0.0, 3.0, 7.0);
        assert_eq!(g.d_outcome, 3.0);
    }

    fn tiny(k: usize) -> WeuParameters {
        WeuParameters::zeros(2, 3, k, 5, PwfKind::TfPlus)
    }

    #[test]
    fn alpha_components_sum() {
        let mut p = tiny(1);
        p.alpha.global = 0.1;
        p.alpha.item_bias[2] = 0.2;
        p.alpha.user_bias[1] = 0.3;
        p.alpha.item_latent[2] = 0.8;
        p.alpha.user_latent[1] = 0.5;
        assert_abs_diff_eq!(materialize_alpha_beta(&p, 2, 1).0, 1.0, epsilon = 1e-15);
        assert_eq!(materialize_alpha_beta(&tiny(4), 0, 0), (0.0, 0.0));

        let mut p = tiny(2);
        p.alpha.item_latent[0..2].copy_from_slice(&[1.0, 0.0]);
        p.alpha.user_latent[0..2].copy_from_slice(&[0.0, 1.0]);
        assert_eq!(materialize_alpha_beta(&p, 0, 0).0, 0.0);
    }

    #[test]
    fn pwf_params_examples() {
        let mut p = tiny(1);
        p.delta.global = 0.5;
        p.delta.user_bias[0] = 0.2;
        p.theta.global = 0.3;
        p.theta.user_bias[0] = 0.1;
        assert_abs_diff_eq!(materialize_pwf_params(&p, 0, PwfKind::TfPlus).delta, 0.7, epsilon = 1e-15);
        assert_abs_diff_eq!(materialize_pwf_params(&p, 0, PwfKind::TfPlus).theta, 0.4, epsilon = 1e-15);
        assert_eq!(materialize_pwf_params(&p, 0, PwfKind::Tf).theta, 1.0);
        assert_eq!(materialize_pwf_params(&p, 0, PwfKind::Prelec).theta, 1.0);
    }

    fn dataset() -> SplitDataset {
        let rec = |user, item, rating| InteractionRecord { user, item, rating, timestamp: 0 };
        SplitDataset {
            train: vec![rec(0, 0, 5), rec(0, 1, 4), rec(1, 2, 1)],
            validation: vec![],
            test: vec![rec(2, 0, 3)],
            user_count: 3,
            item_count: 3,
            r_max: 5,
            users: IdMap::new(),
            items: IdMap::new(),
        }
    }

    #[test]
    fn initialization_values() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let p = WeuParameters::initialize(&dataset(), 16, PwfKind::PrelecPlus, &mut rng);
        let pwf = materialize_pwf_params(&p, 1, PwfKind::PrelecPlus);
        assert_eq!((pwf.delta, pwf.gamma, pwf.theta), (0.5, 1.0, 1.0));
        assert_eq!(p.ref_points, vec![4.5, 1.0, 10.0 / 3.0]);
        let bound = 0.01 / 4.0;
        assert!(p.alpha.item_latent.iter().all(|x| x.abs() <= bound));
        assert!(p.alpha.item_latent.iter().any(|&x| x != 0.0));
        p.check_against(&dataset()).unwrap();
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let p = WeuParameters::zeros(4, 3, 2, 5, PwfKind::Tf);
        let msg = p.check_against(&dataset()).unwrap_err().to_string();
        assert!(msg.contains("4 users") && msg.contains("3 users"), "{msg}");
    }

    #[test]
    fn projection_bounds() {
        let mut p = tiny(1);
        p.delta.global = 0.9;
        p.delta.user_bias[0] = 0.5;
        p.gamma.global = -1.0;
        p.theta.global = 1.5;
        p.ref_points = vec![7.0, -2.0];
        p.project_all(1e-3);
        for u in 0..2 {
            let pwf = materialize_pwf_params(&p, u, PwfKind::TfPlus);
            assert!(pwf.is_valid() || pwf.theta == 1.0, "{pwf:?}");
            assert!(pwf.delta <= 1.0 - 1e-3 && pwf.gamma >= 1e-3 && pwf.theta <= 1.0);
        }
        assert_eq!(p.ref_points, vec![5.0, 1.0]);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let p = WeuParameters::initialize(&dataset(), 5, PwfKind::TfPlus, &mut rng);
        let back: WeuParameters = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
        assert_eq!(back, p);
    }

    proptest! {
        #[test]
        fn loss_branch_is_scaled_mirror(o in 1e-6f64..10.0, alpha in 0.1f64..5.0, beta in -5.0f64..5.0) {
            let lhs = utility(-o, alpha, beta);
            let rhs = (beta / alpha) * -utility(o, alpha, beta);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        }

        #[test]
        fn diminishing_gains(o1 in 0.0f64..5.0, gap in 0.0f64..5.0, h in 1e-3f64..2.0, alpha in 0.01f64..5.0) {
            let o2 = o1 + gap;
            let d1 = utility(o1 + h, alpha, 1.0) - utility(o1, alpha, 1.0);
            let d2 = utility(o2 + h, alpha, 1.0) - utility(o2, alpha, 1.0);
            prop_assert!(d1 >= d2 - 1e-15);
        }

        #[test]
        fn dot_product_is_linear_in_user_factor(c in -5.0f64..5.0, xs in proptest::collection::vec(-1.0f64..1.0, 6)) {
            let mut p = tiny(3);
            p.alpha.item_latent[3..6].copy_from_slice(&xs[0..3]);
            p.alpha.user_latent[0..3].copy_from_slice(&xs[3..6]);
            let base = materialize_alpha_beta(&p, 1, 0).0;
            for x in &mut p.alpha.user_latent[0..3] { *x *= c; }
            let scaled = materialize_alpha_beta(&p, 1, 0).0;
            prop_assert!((scaled - c * base).abs() <= 1e-12);
        }
    }
}
