use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankSvmModel {
    pub weights: Vec<f64>,
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RankSvmConfig {
    pub c: f64,
    pub epochs: usize,
    /// Initial step; epoch `t` uses `eta0 / (1 + t)`.
    pub eta0: f64,
    pub seed: u64,
}

impl Default for RankSvmConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            epochs: 200,
            eta0: 0.1,
            seed: 0,
        }
    }
}

impl RankSvmModel {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn rank_score(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                what: "rank-svm input",
                expected: self.weights.len(),
                got: x.len(),
            });
        }
        Ok(dot(&self.weights, x))
    }

    pub fn validate(&self, expected_dim: Option<usize>) -> Result<()> {
        if let Some(e) = expected_dim {
            if self.weights.len() != e {
                return Err(Error::DimensionMismatch {
                    what: "rank-svm model",
                    expected: e,
                    got: self.weights.len(),
                });
            }
        }
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("rank-svm weights"));
        }
        if !(self.c > 0.0) {
            return Err(Error::InvalidArgument("rank-svm c must be positive".into()));
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

/// Full objective `sum hinge(1 - w.d) + |w|^2 / (2 c P)`.
pub(crate) fn rank_loss(w: &[f64], diffs: &[Vec<f64>], c: f64) -> f64 {
    let p = diffs.len() as f64;
    let hinge: f64 = diffs.iter().map(|d| (1.0 - dot(w, d)).max(0.0)).sum();
    hinge + dot(w, w) / (2.0 * c * p)
}

/// Train on `(better, worse)` feature pairs.
pub fn train_rank_svm(pairs: &[(Vec<f64>, Vec<f64>)], cfg: &RankSvmConfig) -> Result<RankSvmModel> {
    train_rank_svm_with_losses(pairs, cfg).map(|(m, _)| m)
}

/// As [`train_rank_svm`], also returning the objective after every epoch.
///
/// Each epoch visits the pairs in a fresh seeded order and takes one
/// subgradient step per pair on that pair's share of the objective. The
/// returned weights are the best iterate seen at an epoch boundary.
pub fn train_rank_svm_with_losses(
    pairs: &[(Vec<f64>, Vec<f64>)],
    cfg: &RankSvmConfig,
) -> Result<(RankSvmModel, Vec<f64>)> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("rank-svm needs at least one pair".into()));
    }
    if !(cfg.c > 0.0 && cfg.c.is_finite()) || !(cfg.eta0 > 0.0) {
        return Err(Error::InvalidArgument("rank-svm c and eta0 must be positive".into()));
    }
    let dim = pairs[0].0.len();
    let mut diffs = Vec::with_capacity(pairs.len());
    for (a, b) in pairs {
        if a.len() != dim || b.len() != dim {
            return Err(Error::DimensionMismatch {
                what: "rank-svm pair",
                expected: dim,
                got: if a.len() != dim { a.len() } else { b.len() },
            });
        }
        let d: Vec<f64> = a.iter().zip(b).map(|(u, v)| u - v).collect();
        if d.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("rank-svm features"));
        }
        diffs.push(d);
    }

    let p = diffs.len() as f64;
    let lambda = 1.0 / (cfg.c * p * p);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..diffs.len()).collect();
    let mut w = vec![0.0; dim];
    let mut best_w = w.clone();
    let mut best_loss = rank_loss(&w, &diffs, cfg.c);
    let mut losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let eta = cfg.eta0 / (1.0 + epoch as f64);
        for &i in &order {
            let d = &diffs[i];
            let active = dot(&w, d) < 1.0;
            for (k, wk) in w.iter_mut().enumerate() {
                let mut g = lambda * *wk;
                if active {
                    g -= d[k];
                }
                *wk -= eta * g;
            }
        }
        let loss = rank_loss(&w, &diffs, cfg.c);
        if loss < best_loss {
            best_loss = loss;
            best_w.clone_from(&w);
        }
        losses.push(loss);
    }
    Ok((
        RankSvmModel {
            weights: best_w,
            c: cfg.c,
        },
        losses,
    ))
}
