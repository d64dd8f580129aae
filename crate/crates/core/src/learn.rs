//! Cue-weight learning by derivative-free simplex search on recall counts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classify::{train_rank_svm, RankSvmConfig};
use crate::cues::SPC_SLOTS;
use crate::error::{Error, Result};
use crate::geometry::iou;
use crate::infer::GroundingImage;
use crate::ppc::PPC_SLOTS;

const CORRECT_IOU: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NelderMeadConfig {
    /// Initial simplex edge, relative to `max(|x0_k|, 1)`.
    pub init_scale: f64,
    pub max_evals: usize,
    /// Stop once the simplex diameter (max-norm distance to the best
    /// vertex) and the spread of function values both fall below these.
    pub x_tol: f64,
    pub f_tol: f64,
}

impl Default for NelderMeadConfig {
    fn default() -> Self {
        Self {
            init_scale: 0.25,
            max_evals: 2000,
            x_tol: 1e-6,
            f_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    pub converged: bool,
}

struct Vertex {
    x: Vec<f64>,
    f: f64,
    born: usize,
}

/// Minimize `f` with the Nelder-Mead simplex method (reflection 1,
/// expansion 2, contraction 0.5, shrink 0.5).
///
/// Vertices with equal values are ordered oldest first, then by creation
/// order, so flat regions do not cause cycling.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], cfg: &NelderMeadConfig) -> NelderMeadResult
where
    F: FnMut(&[f64]) -> f64,
{
    let d = x0.len();
    let mut evals = 0;
    let mut born = 0;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        f(x)
    };
    let mut simplex: Vec<Vertex> = Vec::with_capacity(d + 1);
    simplex.push(Vertex {
        x: x0.to_vec(),
        f: eval(x0, &mut evals),
        born,
    });
    for k in 0..d {
        let mut x = x0.to_vec();
        x[k] += cfg.init_scale * x0[k].abs().max(1.0);
        born += 1;
        let fx = eval(&x, &mut evals);
        simplex.push(Vertex { x, f: fx, born });
    }
    let order = |s: &mut Vec<Vertex>| {
        s.sort_by(|a, b| a.f.total_cmp(&b.f).then(a.born.cmp(&b.born)));
    };
    let point = |c: &[f64], w: &[f64], t: f64| -> Vec<f64> {
        c.iter().zip(w).map(|(ci, wi)| ci + t * (wi - ci)).collect()
    };

    let mut converged = false;
    loop {
        order(&mut simplex);
        if d == 0 {
            converged = true;
            break;
        }
        let best = &simplex[0];
        let diam = simplex[1..]
            .iter()
            .map(|v| {
                v.x.iter()
                    .zip(&best.x)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        let spread = simplex[d].f - simplex[0].f;
        if diam <= cfg.x_tol && spread <= cfg.f_tol {
            converged = true;
            break;
        }
        if evals >= cfg.max_evals {
            break;
        }

        let mut centroid = vec![0.0; d];
        for v in &simplex[..d] {
            for (c, xi) in centroid.iter_mut().zip(&v.x) {
                *c += xi / d as f64;
            }
        }
        let worst = simplex[d].x.clone();
        let (f_best, f_second, f_worst) = (simplex[0].f, simplex[d - 1].f, simplex[d].f);

        let xr = point(&centroid, &worst, -1.0);
        let fr = eval(&xr, &mut evals);
        let mut replacement = None;
        if fr < f_best {
            let xe = point(&centroid, &worst, -2.0);
            let fe = eval(&xe, &mut evals);
            replacement = Some(if fe < fr { (xe, fe) } else { (xr, fr) });
        } else if fr < f_second {
            replacement = Some((xr, fr));
        } else if fr < f_worst {
            let xc = point(&centroid, &worst, -0.5);
            let fc = eval(&xc, &mut evals);
            if fc <= fr {
                replacement = Some((xc, fc));
            }
        } else {
            let xcc = point(&centroid, &worst, 0.5);
            let fcc = eval(&xcc, &mut evals);
            if fcc < f_worst {
                replacement = Some((xcc, fcc));
            }
        }
        match replacement {
            Some((x, fx)) => {
                born += 1;
                simplex[d] = Vertex { x, f: fx, born };
            }
            None => {
                let x_best = simplex[0].x.clone();
                for v in simplex.iter_mut().skip(1) {
                    v.x = point(&x_best, &v.x, 0.5);
                    v.f = eval(&v.x, &mut evals);
                    born += 1;
                    v.born = born;
                }
            }
        }
    }
    let best = simplex.swap_remove(0);
    NelderMeadResult {
        x: best.x,
        f: best.f,
        evals,
        converged,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub restarts: usize,
    pub seed: u64,
    pub nelder_mead: NelderMeadConfig,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            restarts: 20,
            seed: 0,
            nelder_mead: NelderMeadConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnedWeights {
    pub weights: Vec<f64>,
    /// Recall count achieved on the data the weights were learned on.
    pub count: usize,
    /// Number of items the count is out of.
    pub total: usize,
    /// Best count reached by each restart.
    pub restart_counts: Vec<usize>,
}

fn check_dim(w: &[f64], expected: usize, what: &'static str) -> Result<()> {
    if w.len() != expected {
        return Err(Error::DimensionMismatch {
            what,
            expected,
            got: w.len(),
        });
    }
    Ok(())
}

/// Number of phrases whose lowest-cost candidate overlaps the ground truth
/// with IOU >= 0.5. Phrases without ground truth are ignored.
pub fn recall_objective_s(ws: &[f64], data: &[GroundingImage]) -> Result<usize> {
    check_dim(ws, SPC_SLOTS, "spc weights")?;
    let mut count = 0;
    for img in data {
        for p in &img.phrases {
            let Some(gt) = p.gt else { continue };
            if let Some(k) = p.spc.argmin(ws)? {
                if iou(&p.candidates[k], &gt) >= CORRECT_IOU {
                    count += 1;
                }
            }
        }
    }
    Ok(count)
}

/// Phrases with ground truth, the denominator of [`recall_objective_s`].
pub fn phrases_with_gt(data: &[GroundingImage]) -> usize {
    data.iter()
        .flat_map(|i| &i.phrases)
        .filter(|p| p.gt.is_some())
        .count()
}

/// Relations whose two phrases both have ground truth.
pub fn relations_with_gt(data: &[GroundingImage]) -> usize {
    data.iter()
        .map(|img| {
            img.relations
                .iter()
                .filter(|r| img.phrases[r.left].gt.is_some() && img.phrases[r.right].gt.is_some())
                .count()
        })
        .sum()
}

/// Number of correctly localized boxes (0, 1 or 2 per relation) when each
/// relation's phrase pair is grounded jointly by
/// `S(left) + S(right) + wq[kind] * psi`.
pub fn recall_objective_q(wq: &[f64], ws: &[f64], data: &[GroundingImage]) -> Result<usize> {
    check_dim(wq, PPC_SLOTS, "ppc weights")?;
    check_dim(ws, SPC_SLOTS, "spc weights")?;
    let mut count = 0;
    for img in data {
        let scores: Vec<Vec<f64>> = img
            .phrases
            .iter()
            .map(|p| p.spc.score(ws))
            .collect::<Result<_>>()?;
        for r in &img.relations {
            let (pl, pr) = (&img.phrases[r.left], &img.phrases[r.right]);
            let (Some(gl), Some(gr)) = (pl.gt, pr.gt) else {
                continue;
            };
            let (sl, sr) = (&scores[r.left], &scores[r.right]);
            let w = wq[r.kind.slot()];
            let mut best = (0, 0, f64::INFINITY);
            for (a, sa) in sl.iter().enumerate() {
                for (b, sb) in sr.iter().enumerate() {
                    let q = match &r.costs {
                        Some(c) => w * c[a * sr.len() + b],
                        None => 0.0,
                    };
                    let v = sa + sb + q;
                    if v < best.2 {
                        best = (a, b, v);
                    }
                }
            }
            count += usize::from(iou(&pl.candidates[best.0], &gl) >= CORRECT_IOU);
            count += usize::from(iou(&pr.candidates[best.1], &gr) >= CORRECT_IOU);
        }
    }
    Ok(count)
}

fn search<F>(dim: usize, cfg: &SearchConfig, total: usize, mut count: F) -> Result<LearnedWeights>
where
    F: FnMut(&[f64]) -> Result<usize>,
{
    if cfg.restarts == 0 {
        return Err(Error::InvalidArgument("restarts must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(Vec<f64>, usize)> = None;
    let mut restart_counts = Vec::with_capacity(cfg.restarts);
    let mut failure = None;
    for _ in 0..cfg.restarts {
        let x0: Vec<f64> = (0..dim).map(|_| rng.random_range(0.0..1.0)).collect();
        let res = nelder_mead(
            |w| match count(w) {
                Ok(c) => -(c as f64),
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::INFINITY
                }
            },
            &x0,
            &cfg.nelder_mead,
        );
        if let Some(e) = failure.take() {
            return Err(e);
        }
        let c = (-res.f) as usize;
        restart_counts.push(c);
        if best.as_ref().is_none_or(|(_, bc)| c > *bc) {
            best = Some((res.x, c));
        }
    }
    let (weights, count) = best.expect("at least one restart");
    Ok(LearnedWeights {
        weights,
        count,
        total,
        restart_counts,
    })
}

/// Learn single-phrase weights maximizing [`recall_objective_s`].
///
/// Each restart starts from a point drawn uniformly from `[0, 1]^14`; the
/// restart with the highest count wins, ties to the earlier restart.
pub fn learn_weights_s(data: &[GroundingImage], cfg: &SearchConfig) -> Result<LearnedWeights> {
    let total = phrases_with_gt(data);
    search(SPC_SLOTS, cfg, total, |w| recall_objective_s(w, data))
}

/// Learn pairwise weights maximizing [`recall_objective_q`] with `ws` fixed.
pub fn learn_weights_q(
    data: &[GroundingImage],
    ws: &[f64],
    cfg: &SearchConfig,
) -> Result<LearnedWeights> {
    check_dim(ws, SPC_SLOTS, "spc weights")?;
    let total = 2 * relations_with_gt(data);
    if total == 0 {
        log::warn!("no relations with ground truth; returning the first initial weights");
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let w: Vec<f64> = (0..PPC_SLOTS).map(|_| rng.random_range(0.0..1.0)).collect();
        return Ok(LearnedWeights {
            weights: w,
            count: 0,
            total: 0,
            restart_counts: Vec::new(),
        });
    }
    search(PPC_SLOTS, cfg, total, |w| recall_objective_q(w, ws, data))
}

/// Alternative to the direct search: a rank-SVM on masked cost vectors,
/// ordering each correct candidate above up to `neg_per_pos` incorrect
/// candidates of the same phrase.
pub fn learn_weights_s_rank(
    data: &[GroundingImage],
    neg_per_pos: usize,
    cfg: &RankSvmConfig,
) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut pairs = Vec::new();
    for img in data {
        for p in &img.phrases {
            let Some(gt) = p.gt else { continue };
            let masked = |k: usize| -> Vec<f64> {
                (0..SPC_SLOTS)
                    .map(|s| if p.spc.available[s] { -p.spc.costs[k][s] } else { 0.0 })
                    .collect()
            };
            let (good, bad): (Vec<usize>, Vec<usize>) =
                (0..p.candidates.len()).partition(|&k| iou(&p.candidates[k], &gt) >= CORRECT_IOU);
            if good.is_empty() || bad.is_empty() {
                continue;
            }
            for &g in &good {
                for _ in 0..neg_per_pos {
                    let b = bad[rng.random_range(0..bad.len())];
                    pairs.push((masked(g), masked(b)));
                }
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::NoPositives("no phrase has both correct and incorrect candidates".into()));
    }
    Ok(train_rank_svm(&pairs, cfg)?.weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cues::SpcRow;
    use crate::geometry::BoundingBox;
    use crate::infer::{GroundingPhrase, GroundingRelation};
    use crate::lingcue::RelationKind;
    use crate::phrase::PhraseType;
    use proptest::prelude::*;

    #[test]
    fn quadratic_minimum() {
        let r = nelder_mead(|x| (x[0] - 3.0).powi(2), &[0.0], &NelderMeadConfig::default());
        assert!((r.x[0] - 3.0).abs() < 1e-5, "{:?}", r.x);
        assert!(r.converged);
    }

    #[test]
    fn flat_function_stays_near_start() {
        let r = nelder_mead(|_| 4.0, &[1.0, 2.0], &NelderMeadConfig::default());
        assert_eq!(r.f, 4.0);
        assert_eq!(r.x, vec![1.0, 2.0]);
        assert!(r.converged);
    }

    #[test]
    fn rosenbrock() {
        let cfg = NelderMeadConfig {
            init_scale: 0.05,
            max_evals: 500,
            x_tol: 1e-10,
            f_tol: 1e-12,
        };
        let f = |x: &[f64]| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2);
        let r = nelder_mead(f, &[-1.2, 1.0], &cfg);
        assert!(r.f < 1e-6, "{} after {}", r.f, r.evals);
        assert!(r.evals <= 500 + 3);
    }

    fn bb(x: f64) -> BoundingBox {
        BoundingBox::new(x, 0.0, 10.0, 10.0).unwrap()
    }

    /// Two informative cues whose relative weight decides the argmin.
    fn two_cue_data() -> Vec<GroundingImage> {
        let mut images = Vec::new();
        let ratios = [0.2, 0.5, 0.8, 1.2, 2.0, 3.0, 0.3, 0.6];
        for (n, &r) in ratios.iter().enumerate() {
            let mut available = [false; SPC_SLOTS];
            available[0] = true;
            available[1] = true;
            let mut good = [0.0; SPC_SLOTS];
            let mut bad = [0.0; SPC_SLOTS];
            // the correct box wins iff w1 / w0 < r
            good[0] = 1.0;
            good[1] = 0.0;
            bad[0] = 0.0;
            bad[1] = 1.0 / r;
            images.push(GroundingImage {
                image_id: format!("i{n}"),
                phrases: vec![GroundingPhrase {
                    phrase_id: "p".into(),
                    phrase_type: PhraseType::Other,
                    candidates: vec![bb(0.0), bb(50.0)],
                    spc: SpcRow {
                        phrase_id: "p".into(),
                        costs: vec![good, bad],
                        available,
                    },
                    gt: Some(bb(0.0)),
                }],
                relations: vec![],
            });
        }
        images
    }

    #[test]
    fn search_matches_grid_optimum_on_two_cues() {
        let data = two_cue_data();
        let mut grid_best = 0;
        for a in 0..=40 {
            for b in 0..=40 {
                let mut w = [0.0; SPC_SLOTS];
                w[0] = a as f64 / 10.0;
                w[1] = b as f64 / 10.0;
                grid_best = grid_best.max(recall_objective_s(&w, &data).unwrap());
            }
        }
        let learned = learn_weights_s(&data, &SearchConfig::default()).unwrap();
        assert_eq!(learned.count, grid_best);
        assert_eq!(recall_objective_s(&learned.weights, &data).unwrap(), learned.count);
    }

    #[test]
    fn restarts_superset_and_determinism() {
        let data = two_cue_data();
        let one = learn_weights_s(
            &data,
            &SearchConfig {
                restarts: 1,
                ..Default::default()
            },
        )
        .unwrap();
        let many = learn_weights_s(&data, &SearchConfig::default()).unwrap();
        assert!(many.count >= one.count);
        assert_eq!(many.restart_counts[0], one.restart_counts[0]);
        assert_eq!(many, learn_weights_s(&data, &SearchConfig::default()).unwrap());
    }

    #[test]
    fn oracle_and_disjoint_counts() {
        let data = two_cue_data();
        let mut w = [0.0; SPC_SLOTS];
        w[1] = 1.0;
        assert_eq!(recall_objective_s(&w, &data).unwrap(), data.len());
        let mut far = data.clone();
        for img in &mut far {
            img.phrases[0].gt = Some(bb(500.0));
        }
        assert_eq!(recall_objective_s(&w, &far).unwrap(), 0);
        let mut nogt = data.clone();
        nogt[0].phrases[0].gt = None;
        assert_eq!(phrases_with_gt(&nogt), data.len() - 1);
        assert!(recall_objective_s(&[1.0; 3], &data).is_err());
    }

    fn pair_data() -> Vec<GroundingImage> {
        // Unary costs alone prefer the wrong right-hand box; the pair cost
        // favors the correct combination.
        let mut available = [false; SPC_SLOTS];
        available[0] = true;
        let row = |c: &[f64]| SpcRow {
            phrase_id: "p".into(),
            costs: c
                .iter()
                .map(|v| {
                    let mut a = [0.0; SPC_SLOTS];
                    a[0] = *v;
                    a
                })
                .collect(),
            available,
        };
        let phrase = |gt: f64, costs: &[f64]| GroundingPhrase {
            phrase_id: "p".into(),
            phrase_type: PhraseType::People,
            candidates: vec![bb(0.0), bb(100.0)],
            spc: row(costs),
            gt: Some(bb(gt)),
        };
        vec![GroundingImage {
            image_id: "i".into(),
            phrases: vec![phrase(0.0, &[0.0, 1.0]), phrase(100.0, &[0.0, 0.2])],
            relations: vec![GroundingRelation {
                left: 0,
                right: 1,
                kind: RelationKind::Attachment,
                costs: Some(vec![1.0, 0.0, 1.0, 1.0]),
            }],
        }]
    }

    #[test]
    fn pair_objective_counts() {
        let data = pair_data();
        let mut ws = [0.0; SPC_SLOTS];
        ws[0] = 1.0;
        assert_eq!(recall_objective_q(&[0.0; 3], &ws, &data).unwrap(), 1);
        assert_eq!(recall_objective_q(&[0.0, 0.0, 1.0], &ws, &data).unwrap(), 2);
        let learned = learn_weights_q(&data, &ws, &SearchConfig::default()).unwrap();
        assert_eq!(learned.count, 2);
        assert!(learned.weights[RelationKind::Attachment.slot()] > 0.0);
        assert_eq!(learned, learn_weights_q(&data, &ws, &SearchConfig::default()).unwrap());
    }

    #[test]
    fn no_relations_returns_init() {
        let data = two_cue_data();
        let r = learn_weights_q(&data, &[1.0; SPC_SLOTS], &SearchConfig::default()).unwrap();
        assert_eq!(r.count, 0);
        assert_eq!(r.weights.len(), PPC_SLOTS);
    }

    #[test]
    fn rank_mode_prefers_informative_cue() {
        let data = two_cue_data();
        let w = learn_weights_s_rank(&data, 2, &RankSvmConfig::default()).unwrap();
        assert_eq!(w.len(), SPC_SLOTS);
        assert!(w[1] > w[0]);
    }

    proptest! {
        #[test]
        fn scaling_weights_keeps_recall(alpha in 0.01f64..100.0, w in proptest::collection::vec(0.0f64..1.0, 14)) {
            let data = two_cue_data();
            let scaled: Vec<f64> = w.iter().map(|v| v * alpha).collect();
            prop_assert_eq!(
                recall_objective_s(&w, &data).unwrap(),
                recall_objective_s(&scaled, &data).unwrap()
            );
        }
    }
}
