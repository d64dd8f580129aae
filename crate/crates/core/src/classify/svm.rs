use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const TAU: f64 = 1e-12;
const PROB_FLOOR: f64 = 1e-7;
/// Kernel matrices up to this many entries are precomputed.
const FULL_KERNEL_LIMIT: usize = 16_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbfSvmModel {
    pub support_vectors: Vec<Vec<f64>>,
    /// `y_i * alpha_i` for each support vector.
    pub alphas: Vec<f64>,
    pub bias: f64,
    pub gamma: f64,
    /// Normalized Platt parameters: `p = sigmoid(platt_a * f + platt_b)`
    /// with `platt_a > 0`.
    pub platt_a: f64,
    pub platt_b: f64,
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmConfig {
    pub c: f64,
    /// RBF width; `None` means `1 / feature_dim`.
    pub gamma: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
    pub platt_folds: usize,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            gamma: None,
            tol: 1e-3,
            max_iter: 10_000_000,
            platt_folds: 3,
            seed: 0,
        }
    }
}

/// Diagnostics from one SMO solve.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SmoReport {
    pub iterations: usize,
    pub converged: bool,
    /// Dual objective `sum(alpha) - 0.5 alpha' Q alpha` sampled after every
    /// sweep of `n` pair updates, and once at termination.
    pub dual_trace: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum()
}

fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    (-gamma * sq_dist(a, b)).exp()
}

enum Kernel<'a> {
    Full(Vec<f64>, usize),
    Lazy(&'a [Vec<f64>], f64),
}

impl Kernel<'_> {
    fn row(&self, i: usize, y: &[f64], out: &mut [f64]) {
        match self {
            Kernel::Full(k, n) => {
                for (j, o) in out.iter_mut().enumerate() {
                    *o = y[i] * y[j] * k[i * n + j];
                }
            }
            Kernel::Lazy(x, gamma) => {
                for (j, o) in out.iter_mut().enumerate() {
                    *o = y[i] * y[j] * rbf(&x[i], &x[j], *gamma);
                }
            }
        }
    }
}

struct Solution {
    alpha: Vec<f64>,
    rho: f64,
    report: SmoReport,
}

/// SMO with second-order working set selection on the C-SVC dual,
/// `min 0.5 a'Qa - e'a  s.t.  y'a = 0, 0 <= a <= C`.
fn smo(x: &[Vec<f64>], y: &[f64], c: f64, gamma: f64, tol: f64, max_iter: usize) -> Solution {
    let n = x.len();
    let kernel = if n * n <= FULL_KERNEL_LIMIT {
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            k[i * n + i] = 1.0;
            for j in 0..i {
                let v = rbf(&x[i], &x[j], gamma);
                k[i * n + j] = v;
                k[j * n + i] = v;
            }
        }
        Kernel::Full(k, n)
    } else {
        Kernel::Lazy(x, gamma)
    };

    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let mut qi = vec![0.0; n];
    let mut qj = vec![0.0; n];
    let dual = |alpha: &[f64], grad: &[f64]| -> f64 {
        -0.5 * alpha
            .iter()
            .zip(grad)
            .map(|(a, g)| a * (g - 1.0))
            .sum::<f64>()
    };
    let upper = |a: f64| a >= c;
    let lower = |a: f64| a <= 0.0;

    let mut report = SmoReport::default();
    let mut iter = 0;
    loop {
        // select i: maximal violating index in I_up
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = None;
        for t in 0..n {
            let v = -y[t] * grad[t];
            let in_up = if y[t] > 0.0 { !upper(alpha[t]) } else { !lower(alpha[t]) };
            if in_up && v >= gmax {
                gmax = v;
                i_sel = Some(t);
            }
        }
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j_sel = None;
        if let Some(i) = i_sel {
            kernel.row(i, y, &mut qi);
            let mut best = f64::INFINITY;
            for t in 0..n {
                let in_low = if y[t] > 0.0 { !lower(alpha[t]) } else { !upper(alpha[t]) };
                if !in_low {
                    continue;
                }
                let v = -y[t] * grad[t];
                gmax2 = gmax2.max(-v);
                let diff = gmax - v;
                if diff > 0.0 {
                    // Q_tt = 1 for the RBF kernel
                    let quad = 2.0 - 2.0 * y[i] * y[t] * qi[t];
                    let obj = -(diff * diff) / if quad > 0.0 { quad } else { TAU };
                    if obj <= best {
                        best = obj;
                        j_sel = Some(t);
                    }
                }
            }
        }
        let (Some(i), Some(j)) = (i_sel, j_sel) else {
            report.converged = true;
            break;
        };
        if gmax + gmax2 < tol {
            report.converged = true;
            break;
        }
        if iter >= max_iter {
            break;
        }
        kernel.row(j, y, &mut qj);

        let (old_i, old_j) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let quad = (2.0 + 2.0 * qi[j]).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (2.0 - 2.0 * qi[j]).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += qi[t] * di + qj[t] * dj;
        }
        iter += 1;
        if iter % n.max(1) == 0 {
            report.dual_trace.push(dual(&alpha, &grad));
        }
    }
    report.iterations = iter;
    report.dual_trace.push(dual(&alpha, &grad));

    // bias from free vectors, or the midpoint of the feasible interval
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut n_free, mut sum_free) = (0usize, 0.0);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if upper(alpha[t]) {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if lower(alpha[t]) {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    let rho = if n_free > 0 {
        sum_free / n_free as f64
    } else {
        (ub + lb) / 2.0
    };

    Solution { alpha, rho, report }
}

fn check_rows(rows: &[Vec<f64>], dim: usize) -> Result<()> {
    for r in rows {
        if r.len() != dim {
            return Err(Error::DimensionMismatch {
                what: "svm training row",
                expected: dim,
                got: r.len(),
            });
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("svm training features"));
        }
    }
    Ok(())
}

struct Fitted {
    sv: Vec<Vec<f64>>,
    coef: Vec<f64>,
    bias: f64,
    report: SmoReport,
}

fn fit_decision(x: &[Vec<f64>], y: &[f64], c: f64, gamma: f64, cfg: &SvmConfig) -> Fitted {
    let sol = smo(x, y, c, gamma, cfg.tol, cfg.max_iter);
    let mut sv = Vec::new();
    let mut coef = Vec::new();
    for (t, &a) in sol.alpha.iter().enumerate() {
        if a > 0.0 {
            sv.push(x[t].clone());
            coef.push(y[t] * a);
        }
    }
    Fitted {
        sv,
        coef,
        bias: -sol.rho,
        report: sol.report,
    }
}

fn decision_with(sv: &[Vec<f64>], coef: &[f64], bias: f64, gamma: f64, x: &[f64]) -> f64 {
    sv.iter()
        .zip(coef)
        .map(|(s, a)| a * rbf(s, x, gamma))
        .sum::<f64>()
        + bias
}

/// Train an RBF SVM and calibrate it with Platt scaling on cross-validated
/// decision values.
pub fn train_rbf_svm(pos: &[Vec<f64>], neg: &[Vec<f64>], cfg: &SvmConfig) -> Result<RbfSvmModel> {
    train_rbf_svm_with_report(pos, neg, cfg).map(|(m, _)| m)
}

pub fn train_rbf_svm_with_report(
    pos: &[Vec<f64>],
    neg: &[Vec<f64>],
    cfg: &SvmConfig,
) -> Result<(RbfSvmModel, SmoReport)> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::SingleClass {
            positives: pos.len(),
            negatives: neg.len(),
        });
    }
    if !(cfg.c > 0.0 && cfg.c.is_finite()) {
        return Err(Error::InvalidArgument(format!("C = {} must be positive", cfg.c)));
    }
    let dim = pos[0].len();
    if dim == 0 {
        return Err(Error::InvalidArgument("empty svm features".into()));
    }
    check_rows(pos, dim)?;
    check_rows(neg, dim)?;
    let gamma = cfg.gamma.unwrap_or(1.0 / dim as f64);
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidArgument(format!("gamma = {gamma} must be positive")));
    }

    let x: Vec<Vec<f64>> = pos.iter().chain(neg).cloned().collect();
    let y: Vec<f64> = std::iter::repeat_n(1.0, pos.len())
        .chain(std::iter::repeat_n(-1.0, neg.len()))
        .collect();
    let full = fit_decision(&x, &y, cfg.c, gamma, cfg);

    let cv = cross_validated_decisions(&x, &y, gamma, cfg, &full);
    let (a, b) = fit_platt(&cv, &y);

    let model = RbfSvmModel {
        support_vectors: full.sv,
        alphas: full.coef,
        bias: full.bias,
        gamma,
        platt_a: a,
        platt_b: b,
        c: cfg.c,
    };
    Ok((model, full.report))
}

/// Stratified k-fold decision values. Points whose training fold lacks a
/// class fall back to the full model's decision value.
fn cross_validated_decisions(
    x: &[Vec<f64>],
    y: &[f64],
    gamma: f64,
    cfg: &SvmConfig,
    full: &Fitted,
) -> Vec<f64> {
    let n = x.len();
    let folds = cfg.platt_folds.max(2);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut fold_of = vec![0usize; n];
    for label in [1.0, -1.0] {
        let mut idx: Vec<usize> = (0..n).filter(|&t| y[t] == label).collect();
        idx.shuffle(&mut rng);
        for (pos, t) in idx.into_iter().enumerate() {
            fold_of[t] = pos % folds;
        }
    }
    let mut out: Vec<f64> = x
        .iter()
        .map(|xi| decision_with(&full.sv, &full.coef, full.bias, gamma, xi))
        .collect();
    for f in 0..folds {
        let train: Vec<usize> = (0..n).filter(|&t| fold_of[t] != f).collect();
        let test: Vec<usize> = (0..n).filter(|&t| fold_of[t] == f).collect();
        let has_pos = train.iter().any(|&t| y[t] > 0.0);
        let has_neg = train.iter().any(|&t| y[t] < 0.0);
        if test.is_empty() || !has_pos || !has_neg {
            continue;
        }
        let tx: Vec<Vec<f64>> = train.iter().map(|&t| x[t].clone()).collect();
        let ty: Vec<f64> = train.iter().map(|&t| y[t]).collect();
        let m = fit_decision(&tx, &ty, cfg.c, gamma, cfg);
        for &t in &test {
            out[t] = decision_with(&m.sv, &m.coef, m.bias, gamma, &x[t]);
        }
    }
    out
}

/// Platt sigmoid fit by Newton's method with backtracking on the
/// target-smoothed likelihood. Returns normalized `(a, b)` such that
/// `P(y = 1 | f) = sigmoid(a f + b)`.
fn fit_platt(dec: &[f64], y: &[f64]) -> (f64, f64) {
    let prior1 = y.iter().filter(|&&v| v > 0.0).count() as f64;
    let prior0 = y.len() as f64 - prior1;
    let hi = (prior1 + 1.0) / (prior1 + 2.0);
    let lo = 1.0 / (prior0 + 2.0);
    let t: Vec<f64> = y.iter().map(|&v| if v > 0.0 { hi } else { lo }).collect();

    // P = 1 / (1 + exp(A f + B))
    let objective = |a: f64, b: f64| -> f64 {
        dec.iter()
            .zip(&t)
            .map(|(&f, &ti)| {
                let z = f * a + b;
                if z >= 0.0 {
                    ti * z + (-z).exp().ln_1p()
                } else {
                    (ti - 1.0) * z + z.exp().ln_1p()
                }
            })
            .sum()
    };
    let (mut a, mut b) = (0.0, ((prior0 + 1.0) / (prior1 + 1.0)).ln());
    let mut fval = objective(a, b);
    let sigma = 1e-12;
    for _ in 0..100 {
        let (mut h11, mut h22, mut h21, mut g1, mut g2) = (sigma, sigma, 0.0, 0.0, 0.0);
        for (&f, &ti) in dec.iter().zip(&t) {
            let z = f * a + b;
            let (p, q) = if z >= 0.0 {
                let e = (-z).exp();
                (e / (1.0 + e), 1.0 / (1.0 + e))
            } else {
                let e = z.exp();
                (1.0 / (1.0 + e), e / (1.0 + e))
            };
            let d2 = p * q;
            h11 += f * f * d2;
            h22 += d2;
            h21 += f * d2;
            let d1 = ti - p;
            g1 += f * d1;
            g2 += d1;
        }
        if g1.abs() < 1e-5 && g2.abs() < 1e-5 {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;
        let mut step = 1.0;
        while step >= 1e-10 {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = objective(na, nb);
            if nf < fval + 1e-4 * step * gd {
                a = na;
                b = nb;
                fval = nf;
                break;
            }
            step /= 2.0;
        }
        if step < 1e-10 {
            break;
        }
    }
    // probability must increase with the decision value
    let slope = (-a).max(1e-8);
    (slope, -b)
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl RbfSvmModel {
    pub fn dim(&self) -> usize {
        self.support_vectors.first().map_or(0, |s| s.len())
    }

    pub fn decision(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "svm input",
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(decision_with(
            &self.support_vectors,
            &self.alphas,
            self.bias,
            self.gamma,
            x,
        ))
    }

    pub fn prob_from_decision(&self, f: f64) -> f64 {
        sigmoid(self.platt_a * f + self.platt_b).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
    }

    /// Calibrated probability of the positive class, in `[1e-7, 1 - 1e-7]`.
    pub fn predict_prob(&self, x: &[f64]) -> Result<f64> {
        Ok(self.prob_from_decision(self.decision(x)?))
    }

    pub fn validate(&self, expected_dim: Option<usize>) -> Result<()> {
        if self.support_vectors.is_empty() || self.alphas.len() != self.support_vectors.len() {
            return Err(Error::InvalidArgument(
                "svm model needs at least one support vector with a coefficient".into(),
            ));
        }
        let dim = self.dim();
        if let Some(e) = expected_dim {
            if dim != e {
                return Err(Error::DimensionMismatch {
                    what: "svm model",
                    expected: e,
                    got: dim,
                });
            }
        }
        if self.support_vectors.iter().any(|s| s.len() != dim) {
            return Err(Error::InvalidArgument("ragged support vectors".into()));
        }
        if !(self.gamma > 0.0) || self.platt_a.is_nan() || self.platt_b.is_nan() {
            return Err(Error::InvalidArgument("invalid svm parameters".into()));
        }
        Ok(())
    }
}

/// Pick the RBF width with the best k-fold accuracy from `grid`. Ties go to
/// the earlier grid entry.
pub fn select_gamma(
    pos: &[Vec<f64>],
    neg: &[Vec<f64>],
    grid: &[f64],
    cfg: &SvmConfig,
) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty gamma grid".into()));
    }
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::SingleClass {
            positives: pos.len(),
            negatives: neg.len(),
        });
    }
    let x: Vec<Vec<f64>> = pos.iter().chain(neg).cloned().collect();
    let y: Vec<f64> = std::iter::repeat_n(1.0, pos.len())
        .chain(std::iter::repeat_n(-1.0, neg.len()))
        .collect();
    let mut best = (grid[0], -1.0);
    for &g in grid {
        let full = fit_decision(&x, &y, cfg.c, g, cfg);
        let dec = cross_validated_decisions(&x, &y, g, cfg, &full);
        let acc = dec
            .iter()
            .zip(&y)
            .filter(|(d, t)| (**d > 0.0) == (**t > 0.0))
            .count() as f64
            / y.len() as f64;
        if acc > best.1 {
            best = (g, acc);
        }
    }
    Ok(best.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn blob(rng: &mut ChaCha8Rng, center: [f64; 2], sd: f64, n: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                vec![
                    center[0] + sd * rng.sample::<f64, _>(StandardNormal),
                    center[1] + sd * rng.sample::<f64, _>(StandardNormal),
                ]
            })
            .collect()
    }

    fn accuracy(m: &RbfSvmModel, pos: &[Vec<f64>], neg: &[Vec<f64>]) -> f64 {
        let ok = pos.iter().filter(|x| m.decision(x).unwrap() > 0.0).count()
            + neg.iter().filter(|x| m.decision(x).unwrap() < 0.0).count();
        ok as f64 / (pos.len() + neg.len()) as f64
    }

    #[test]
    fn separable_clusters() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pos = blob(&mut rng, [2.0, 2.0], 0.4, 40);
        let neg = blob(&mut rng, [-2.0, -2.0], 0.4, 40);
        let cfg = SvmConfig {
            c: 10.0,
            ..SvmConfig::default()
        };
        let (m, report) = train_rbf_svm_with_report(&pos, &neg, &cfg).unwrap();
        assert!(report.converged);
        assert_eq!(accuracy(&m, &pos, &neg), 1.0);
        assert!(m.predict_prob(&[2.0, 2.0]).unwrap() > 0.9);
        assert!(m.predict_prob(&[-2.0, -2.0]).unwrap() < 0.1);
        assert!(m.alphas.iter().all(|a| a.abs() <= cfg.c + 1e-12));
        assert!(!m.support_vectors.is_empty());
    }

    #[test]
    fn symmetric_data_centers_at_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pos = blob(&mut rng, [1.5, 0.5], 0.7, 60);
        let neg: Vec<Vec<f64>> = pos.iter().map(|p| vec![-p[0], -p[1]]).collect();
        let m = train_rbf_svm(&pos, &neg, &SvmConfig::default()).unwrap();
        let d = m.decision(&[0.0, 0.0]).unwrap();
        assert!(d.abs() < 1e-2, "{d}");
        let p = m.predict_prob(&[0.0, 0.0]).unwrap();
        assert!((p - 0.5).abs() <= 0.05, "{p}");
    }

    #[test]
    fn xor_with_tuned_gamma() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut pos = blob(&mut rng, [1.0, 1.0], 0.25, 50);
        pos.extend(blob(&mut rng, [-1.0, -1.0], 0.25, 50));
        let mut neg = blob(&mut rng, [1.0, -1.0], 0.25, 50);
        neg.extend(blob(&mut rng, [-1.0, 1.0], 0.25, 50));
        let cfg = SvmConfig {
            c: 10.0,
            ..SvmConfig::default()
        };
        let gamma = select_gamma(&pos, &neg, &[0.01, 0.1, 1.0, 10.0], &cfg).unwrap();
        let m = train_rbf_svm(
            &pos,
            &neg,
            &SvmConfig {
                gamma: Some(gamma),
                ..cfg
            },
        )
        .unwrap();
        assert!(accuracy(&m, &pos, &neg) >= 0.95);
    }

    #[test]
    fn dual_objective_non_decreasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pos = blob(&mut rng, [0.5, 0.0], 1.0, 80);
        let neg = blob(&mut rng, [-0.5, 0.0], 1.0, 80);
        let (_, report) = train_rbf_svm_with_report(&pos, &neg, &SvmConfig::default()).unwrap();
        assert!(report.dual_trace.len() >= 2);
        for w in report.dual_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-12, "{w:?}");
        }
    }

    #[test]
    fn probability_monotone_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pos = blob(&mut rng, [1.0, 0.0], 0.8, 30);
        let neg = blob(&mut rng, [-1.0, 0.0], 0.8, 30);
        let m = train_rbf_svm(&pos, &neg, &SvmConfig::default()).unwrap();
        assert!(m.platt_a > 0.0);
        let mut last = 0.0;
        for k in -100..=100 {
            let p = m.prob_from_decision(k as f64 * 0.1);
            assert!(p > 0.0 && p < 1.0);
            assert!(p >= last);
            last = p;
        }
        assert_eq!(m.prob_from_decision(1e9), 1.0 - 1e-7);
    }

    #[test]
    fn training_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pos = blob(&mut rng, [1.0, 0.0], 1.0, 30);
        let neg = blob(&mut rng, [-1.0, 0.0], 1.0, 30);
        let cfg = SvmConfig {
            seed: 9,
            ..SvmConfig::default()
        };
        let a = train_rbf_svm(&pos, &neg, &cfg).unwrap();
        let b = train_rbf_svm(&pos, &neg, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn error_cases() {
        let cfg = SvmConfig::default();
        assert!(matches!(
            train_rbf_svm(&[vec![1.0]], &[], &cfg),
            Err(Error::SingleClass { .. })
        ));
        assert!(train_rbf_svm(&[vec![f64::NAN]], &[vec![0.0]], &cfg).is_err());
        assert!(train_rbf_svm(&[vec![1.0, 2.0]], &[vec![0.0]], &cfg).is_err());
        let m = train_rbf_svm(&[vec![1.0]], &[vec![-1.0]], &cfg).unwrap();
        assert!(m.predict_prob(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn lazy_kernel_matches_full() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x: Vec<Vec<f64>> = (0..20)
            .map(|_| vec![rng.random::<f64>(), rng.random::<f64>()])
            .collect();
        let y: Vec<f64> = (0..20).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let full = {
            let n = x.len();
            let mut k = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    k[i * n + j] = rbf(&x[i], &x[j], 0.5);
                }
            }
            Kernel::Full(k, n)
        };
        let lazy = Kernel::Lazy(&x, 0.5);
        let (mut a, mut b) = (vec![0.0; 20], vec![0.0; 20]);
        for i in 0..20 {
            full.row(i, &y, &mut a);
            lazy.row(i, &y, &mut b);
            assert_eq!(a, b);
        }
    }
}
