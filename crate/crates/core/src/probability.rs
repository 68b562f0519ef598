//! Outcome probabilities and probability-weighting functions.
//!
//! Two weighting families are supported, each with an optional extra
//! parameter `theta`:
//!
//! * Tversky-Fox: `w(p) = δ p^γ / (δ p^γ + θ (1-p)^γ)`
//! * Prelec: `w(p) = exp(-δ (-θ ln p)^γ)`
//!
//! The unplussed variants pin `θ = 1`. `Identity` is plain expected utility.
//! Every kind maps 0 to 0 and 1 to 1 exactly.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{InteractionRecord, RatingHistogram};
use crate::error::Error;

/// Lower clamp for `p` before taking `ln p` in Prelec.
pub const MIN_PROBABILITY: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PwfKind {
    #[serde(rename = "eu")]
    Identity,
    #[serde(rename = "tf")]
    Tf,
    #[serde(rename = "tf+")]
    TfPlus,
    #[serde(rename = "prelec")]
    Prelec,
    #[serde(rename = "prelec+")]
    PrelecPlus,
}

impl PwfKind {
    pub const ALL: [PwfKind; 5] = [PwfKind::Identity, PwfKind::Tf, PwfKind::TfPlus, PwfKind::Prelec, PwfKind::PrelecPlus];

    /// Whether θ is a free parameter.
    pub fn learns_theta(self) -> bool {
        matches!(self, PwfKind::TfPlus | PwfKind::PrelecPlus)
    }

    /// Whether δ and γ are used at all.
    pub fn is_weighted(self) -> bool {
        self != PwfKind::Identity
    }

    pub fn name(self) -> &'static str {
        match self {
            PwfKind::Identity => "eu",
            PwfKind::Tf => "tf",
            PwfKind::TfPlus => "tf+",
            PwfKind::Prelec => "prelec",
            PwfKind::PrelecPlus => "prelec+",
        }
    }
}

impl fmt::Display for PwfKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PwfKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        PwfKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .or_else(|| s.eq_ignore_ascii_case("identity").then_some(PwfKind::Identity))
            .ok_or_else(|| Error::Config(format!("unknown weighting kind {s:?}")))
    }
}

/// Per-user weighting parameters. Valid when `0 < delta < 1`, `gamma > 0`,
/// `0 < theta <= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PwfParams {
    pub delta: f64,
    pub gamma: f64,
    pub theta: f64,
}

impl PwfParams {
    pub fn new(delta: f64, gamma: f64, theta: f64) -> Self {
        Self { delta, gamma, theta }
    }

    pub fn is_valid(&self) -> bool {
        self.delta > 0.0 && self.delta < 1.0 && self.gamma > 0.0 && self.theta > 0.0 && self.theta <= 1.0
    }

    fn with_unit_theta(self) -> Self {
        Self { theta: 1.0, ..self }
    }
}

/// Partial derivatives of a weight with respect to `(δ, γ, θ)`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PwfGrad {
    pub delta: f64,
    pub gamma: f64,
    pub theta: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Tversky-Fox weight and its gradient.
///
/// For `0 < p < 1` the weight equals `σ(ln δ − ln θ + γ·logit p)`, which
/// avoids the 0/0 that the ratio form hits when both powers underflow.
pub fn weight_tf_with_grad(p: f64, params: PwfParams) -> (f64, PwfGrad) {
    if p <= 0.0 {
        return (0.0, PwfGrad::default());
    }
    if p >= 1.0 {
        return (1.0, PwfGrad::default());
    }
    let logit = p.ln() - (1.0 - p).ln();
    let z = params.delta.ln() - params.theta.ln() + params.gamma * logit;
    let w = sigmoid(z);
    let slope = w * (1.0 - w);
    let grad = PwfGrad { delta: slope / params.delta, gamma: slope * logit, theta: -slope / params.theta };
    (w, grad)
}

pub fn weight_tf(p: f64, params: PwfParams) -> f64 {
    weight_tf_with_grad(p, params).0
}

/// Prelec weight and its gradient.
pub fn weight_prelec_with_grad(p: f64, params: PwfParams) -> (f64, PwfGrad) {
    if p <= 0.0 {
        return (0.0, PwfGrad::default());
    }
    if p >= 1.0 {
        return (1.0, PwfGrad::default());
    }
    let p = p.max(MIN_PROBABILITY);
    let log_term = -params.theta * p.ln();
    let powered = log_term.powf(params.gamma);
    let w = (-params.delta * powered).exp();
    let grad = PwfGrad {
        delta: -w * powered,
        gamma: -w * params.delta * powered * log_term.ln(),
        theta: -w * params.delta * params.gamma * powered / params.theta,
    };
    (w, grad)
}

pub fn weight_prelec(p: f64, params: PwfParams) -> f64 {
    weight_prelec_with_grad(p, params).0
}

/// Weight for `kind`, forcing θ = 1 for the unplussed variants. The
/// gradient's θ component is zero whenever θ is not learned.
pub fn weight_with_grad(kind: PwfKind, p: f64, params: PwfParams) -> (f64, PwfGrad) {
    match kind {
        PwfKind::Identity => (p, PwfGrad::default()),
        PwfKind::Tf => {
            let (w, g) = weight_tf_with_grad(p, params.with_unit_theta());
            (w, PwfGrad { theta: 0.0, ..g })
        }
        PwfKind::TfPlus => weight_tf_with_grad(p, params),
        PwfKind::Prelec => {
            let (w, g) = weight_prelec_with_grad(p, params.with_unit_theta());
            (w, PwfGrad { theta: 0.0, ..g })
        }
        PwfKind::PrelecPlus => weight_prelec_with_grad(p, params),
    }
}

pub fn weight(kind: PwfKind, p: f64, params: PwfParams) -> f64 {
    weight_with_grad(kind, p, params).0
}

/// `(p, w(p))` on an evenly spaced grid from 0 to 1 inclusive.
pub fn weight_grid(kind: PwfKind, params: PwfParams, step: f64) -> Vec<(f64, f64)> {
    let n = (1.0 / step).round().max(1.0) as usize;
    (0..=n)
        .map(|k| {
            let p = k as f64 / n as f64;
            (p, weight(kind, p, params))
        })
        .collect()
}

/// Per-item training histograms with a catalog-wide fallback for items
/// that have no training ratings.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramStore {
    items: Vec<RatingHistogram>,
    global: RatingHistogram,
}

impl HistogramStore {
    pub fn new(items: Vec<RatingHistogram>, global: RatingHistogram) -> Self {
        Self { items, global }
    }

    /// The item's own histogram, or the global one when the item is empty.
    pub fn for_item(&self, item: usize) -> &RatingHistogram {
        let h = &self.items[item];
        if h.is_empty() {
            &self.global
        } else {
            h
        }
    }

    pub fn item(&self, item: usize) -> &RatingHistogram {
        &self.items[item]
    }

    pub fn global(&self) -> &RatingHistogram {
        &self.global
    }

    pub fn item_count(&self) -> usize {
        self.items.len()
    }

    pub fn r_max(&self) -> u8 {
        self.global.r_max()
    }
}

/// Counts training ratings per item and over the whole training set.
pub fn build_histograms(train: &[InteractionRecord], item_count: usize, r_max: u8) -> HistogramStore {
    let mut items = vec![RatingHistogram::empty(r_max); item_count];
    let mut global = RatingHistogram::empty(r_max);
    for r in train {
        items[r.item].add(r.rating);
        global.add(r.rating);
    }
    HistogramStore { items, global }
}
