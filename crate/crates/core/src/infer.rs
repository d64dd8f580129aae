//! Candidate retrieval and joint phrase-to-box assignment.
//!
//! The joint objective over one box index `k_i` per phrase is
//! `sum_i S_i[k_i] + sum_(i,j) Q_ij[k_i, k_j]`.

use serde::{Deserialize, Serialize};

use crate::cues::{argmin, SpcRow, SPC_SLOTS};
use crate::error::{Error, Result};
use crate::geometry::{nms, BoundingBox};
use crate::lingcue::RelationKind;
use crate::phrase::PhraseType;
use crate::ppc::PPC_SLOTS;

pub const DEFAULT_TOP_M: usize = 30;
pub const DEFAULT_NMS_IOU: f64 = 0.8;
pub const DEFAULT_BUDGET: u64 = 1_000_000;

/// Pairwise cost between phrases `i` and `j`, row-major over `i`'s
/// candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTerm {
    pub i: usize,
    pub j: usize,
    pub costs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointProblem {
    unary: Vec<Vec<f64>>,
    pairs: Vec<PairTerm>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub chosen: Vec<usize>,
    pub objective: f64,
}

impl JointProblem {
    /// Validate and normalize. Pair terms are stored with `i < j`; several
    /// terms on the same phrase pair are summed.
    pub fn new(unary: Vec<Vec<f64>>, pairs: Vec<PairTerm>) -> Result<Self> {
        for u in &unary {
            if u.is_empty() {
                return Err(Error::NoBoxes);
            }
            if u.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("unary costs"));
            }
        }
        let n = unary.len();
        let mut merged: Vec<PairTerm> = Vec::new();
        for t in pairs {
            if t.i >= n || t.j >= n || t.i == t.j {
                return Err(Error::InvalidArgument(format!(
                    "pair term ({}, {}) invalid for {n} phrases",
                    t.i, t.j
                )));
            }
            let (mi, mj) = (unary[t.i].len(), unary[t.j].len());
            if t.costs.len() != mi * mj {
                return Err(Error::DimensionMismatch {
                    what: "pair term",
                    expected: mi * mj,
                    got: t.costs.len(),
                });
            }
            if t.costs.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("pair costs"));
            }
            let t = if t.i < t.j {
                t
            } else {
                let mut c = vec![0.0; mi * mj];
                for a in 0..mi {
                    for b in 0..mj {
                        c[b * mi + a] = t.costs[a * mj + b];
                    }
                }
                PairTerm {
                    i: t.j,
                    j: t.i,
                    costs: c,
                }
            };
            match merged.iter_mut().find(|m| m.i == t.i && m.j == t.j) {
                Some(m) => m.costs.iter_mut().zip(&t.costs).for_each(|(x, y)| *x += y),
                None => merged.push(t),
            }
        }
        Ok(Self {
            unary,
            pairs: merged,
        })
    }

    pub fn num_phrases(&self) -> usize {
        self.unary.len()
    }

    pub fn unary(&self) -> &[Vec<f64>] {
        &self.unary
    }

    pub fn pairs(&self) -> &[PairTerm] {
        &self.pairs
    }

    /// Objective of an assignment: unary terms in phrase order, then pair
    /// terms in stored order.
    pub fn objective(&self, chosen: &[usize]) -> f64 {
        let mut s = 0.0;
        for (u, &k) in self.unary.iter().zip(chosen) {
            s += u[k];
        }
        for t in &self.pairs {
            s += t.costs[chosen[t.i] * self.unary[t.j].len() + chosen[t.j]];
        }
        s
    }

    fn combinations(&self) -> f64 {
        self.unary.iter().map(|u| u.len() as f64).product()
    }

    /// Cost of choosing `k` for phrase `i` with all other phrases fixed.
    fn local_cost(&self, chosen: &[usize], i: usize, k: usize) -> f64 {
        let mut s = self.unary[i][k];
        for t in &self.pairs {
            if t.i == i {
                s += t.costs[k * self.unary[t.j].len() + chosen[t.j]];
            } else if t.j == i {
                s += t.costs[chosen[t.i] * self.unary[i].len() + k];
            }
        }
        s
    }
}

/// Exhaustive minimization. Among equal objectives the lexicographically
/// smallest index vector wins.
pub fn solve_exact(p: &JointProblem, budget: u64) -> Result<Assignment> {
    let combos = p.combinations();
    if combos > budget as f64 {
        return Err(Error::BudgetExceeded {
            combinations: combos,
            budget,
        });
    }
    let n = p.num_phrases();
    let mut cur = vec![0usize; n];
    let mut best = cur.clone();
    let mut best_f = p.objective(&cur);
    if n == 0 {
        return Ok(Assignment {
            chosen: best,
            objective: best_f,
        });
    }
    loop {
        // odometer increment, last phrase fastest
        let mut pos = n;
        loop {
            if pos == 0 {
                return Ok(Assignment {
                    chosen: best,
                    objective: best_f,
                });
            }
            pos -= 1;
            cur[pos] += 1;
            if cur[pos] < p.unary[pos].len() {
                break;
            }
            cur[pos] = 0;
        }
        let f = p.objective(&cur);
        if f < best_f {
            best_f = f;
            best.clone_from(&cur);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RelaxConfig {
    pub iters: usize,
    pub tol: f64,
}

impl Default for RelaxConfig {
    fn default() -> Self {
        Self {
            iters: 500,
            tol: 1e-6,
        }
    }
}

/// Euclidean projection onto the probability simplex.
pub(crate) fn project_simplex(v: &mut [f64]) {
    let mut u: Vec<f64> = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (k, &uk) in u.iter().enumerate() {
        cum += uk;
        let t = (cum - 1.0) / (k + 1) as f64;
        if uk - t > 0.0 {
            theta = t;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
}

struct Relaxation<'a> {
    p: &'a JointProblem,
    unary: Vec<Vec<f64>>,
}

impl Relaxation<'_> {
    fn value(&self, x: &[Vec<f64>]) -> f64 {
        let mut s = 0.0;
        for (u, xi) in self.unary.iter().zip(x) {
            s += u.iter().zip(xi).map(|(a, b)| a * b).sum::<f64>();
        }
        for t in &self.p.pairs {
            let mj = x[t.j].len();
            for (a, xa) in x[t.i].iter().enumerate() {
                if *xa == 0.0 {
                    continue;
                }
                let row = &t.costs[a * mj..(a + 1) * mj];
                s += xa * row.iter().zip(&x[t.j]).map(|(c, xb)| c * xb).sum::<f64>();
            }
        }
        s
    }

    fn gradient(&self, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let mut g = self.unary.clone();
        for t in &self.p.pairs {
            let mj = x[t.j].len();
            for a in 0..x[t.i].len() {
                let row = &t.costs[a * mj..(a + 1) * mj];
                g[t.i][a] += row.iter().zip(&x[t.j]).map(|(c, xb)| c * xb).sum::<f64>();
                for (b, c) in row.iter().enumerate() {
                    g[t.j][b] += c * x[t.i][a];
                }
            }
        }
        g
    }
}

/// Iterated conditional modes from `start` until no phrase changes.
fn improve(p: &JointProblem, mut chosen: Vec<usize>) -> Vec<usize> {
    loop {
        let mut changed = false;
        for i in 0..p.num_phrases() {
            let costs: Vec<f64> = (0..p.unary[i].len())
                .map(|k| p.local_cost(&chosen, i, k))
                .collect();
            let k = argmin(&costs).expect("non-empty candidates");
            if costs[k] < costs[chosen[i]] {
                chosen[i] = k;
                changed = true;
            }
        }
        if !changed {
            return chosen;
        }
    }
}

/// Continuous relaxation over per-phrase simplices, minimized by projected
/// gradient with backtracking, rounded to the largest mass and polished by
/// conditional improvement. The polished unary-argmin start is also tried
/// and the better of the two kept.
pub fn solve_relaxed(p: &JointProblem, cfg: &RelaxConfig) -> Assignment {
    let n = p.num_phrases();
    let unary: Vec<Vec<f64>> = p
        .unary
        .iter()
        .map(|u| {
            let m = u.iter().copied().fold(f64::INFINITY, f64::min);
            u.iter().map(|v| v - m).collect()
        })
        .collect();
    let relax = Relaxation { p, unary };

    let mut x: Vec<Vec<f64>> = p
        .unary
        .iter()
        .map(|u| vec![1.0 / u.len() as f64; u.len()])
        .collect();
    let mut f = relax.value(&x);
    let mut step = 1.0;
    for _ in 0..cfg.iters {
        let g = relax.gradient(&x);
        let mut accepted = None;
        for _ in 0..60 {
            let mut y = x.clone();
            let mut lin = 0.0;
            let mut sq = 0.0;
            for i in 0..n {
                for (yk, gk) in y[i].iter_mut().zip(&g[i]) {
                    *yk -= step * gk;
                }
                project_simplex(&mut y[i]);
                for k in 0..y[i].len() {
                    let d = y[i][k] - x[i][k];
                    lin += g[i][k] * d;
                    sq += d * d;
                }
            }
            let fy = relax.value(&y);
            if fy <= f + lin + sq / (2.0 * step) + 1e-15 {
                accepted = Some((y, fy));
                break;
            }
            step *= 0.5;
        }
        let Some((y, fy)) = accepted else { break };
        let delta = f - fy;
        x = y;
        f = fy;
        step *= 2.0;
        if delta.abs() < cfg.tol {
            break;
        }
    }

    let rounded: Vec<usize> = x
        .iter()
        .map(|xi| {
            let mut best = 0;
            for (k, v) in xi.iter().enumerate() {
                if *v > xi[best] {
                    best = k;
                }
            }
            best
        })
        .collect();
    let a = improve(p, rounded);
    let independent: Vec<usize> = p
        .unary
        .iter()
        .map(|u| argmin(u).expect("non-empty candidates"))
        .collect();
    let b = improve(p, independent);
    let (fa, fb) = (p.objective(&a), p.objective(&b));
    let (chosen, objective) = if fb < fa { (b, fb) } else { (a, fa) };
    Assignment { chosen, objective }
}

/// Exact when the search space fits the budget, relaxed otherwise.
pub fn solve(p: &JointProblem, budget: u64, relax: &RelaxConfig) -> Assignment {
    match solve_exact(p, budget) {
        Ok(a) => a,
        Err(_) => solve_relaxed(p, relax),
    }
}

/// Indices of the best `m` boxes by ascending cost after NMS.
pub fn retrieve_candidates(
    boxes: &[BoundingBox],
    costs: &[f64],
    m: usize,
    nms_iou: f64,
) -> Result<Vec<usize>> {
    let neg: Vec<f64> = costs.iter().map(|c| -c).collect();
    let mut kept = nms(boxes, &neg, nms_iou)?;
    kept.truncate(m);
    Ok(kept)
}

/// A phrase with its candidate boxes and cue costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingPhrase {
    pub phrase_id: String,
    pub phrase_type: PhraseType,
    pub candidates: Vec<BoundingBox>,
    pub spc: SpcRow,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt: Option<BoundingBox>,
}

/// A relation between two phrases of the same image with its pairwise cue
/// costs over all candidate combinations (row-major over the left phrase's
/// candidates). `costs` is `None` when no classifier covers the relation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingRelation {
    pub left: usize,
    pub right: usize,
    pub kind: RelationKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub costs: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingImage {
    pub image_id: String,
    pub phrases: Vec<GroundingPhrase>,
    #[serde(default)]
    pub relations: Vec<GroundingRelation>,
}

impl GroundingImage {
    pub fn validate(&self) -> Result<()> {
        for p in &self.phrases {
            if p.candidates.len() != p.spc.num_candidates() {
                return Err(Error::LengthMismatch {
                    what: "candidates/cost rows",
                    left: p.candidates.len(),
                    right: p.spc.num_candidates(),
                });
            }
        }
        for r in &self.relations {
            let n = self.phrases.len();
            if r.left >= n || r.right >= n || r.left == r.right {
                return Err(Error::InvalidArgument(format!(
                    "relation ({}, {}) invalid in image {}",
                    r.left, r.right, self.image_id
                )));
            }
            if let Some(c) = &r.costs {
                let want = self.phrases[r.left].candidates.len() * self.phrases[r.right].candidates.len();
                if c.len() != want {
                    return Err(Error::DimensionMismatch {
                        what: "relation costs",
                        expected: want,
                        got: c.len(),
                    });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferConfig {
    pub top_m: usize,
    pub nms_iou: f64,
    pub budget: u64,
    pub relax: RelaxConfig,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self {
            top_m: DEFAULT_TOP_M,
            nms_iou: DEFAULT_NMS_IOU,
            budget: DEFAULT_BUDGET,
            relax: RelaxConfig::default(),
        }
    }
}

/// Chosen candidate (index into the phrase's full candidate list) for each
/// phrase of the image.
pub fn ground_image(
    img: &GroundingImage,
    ws: &[f64],
    wq: &[f64],
    cfg: &InferConfig,
) -> Result<Vec<usize>> {
    if ws.len() != SPC_SLOTS {
        return Err(Error::DimensionMismatch {
            what: "spc weights",
            expected: SPC_SLOTS,
            got: ws.len(),
        });
    }
    if wq.len() != PPC_SLOTS {
        return Err(Error::DimensionMismatch {
            what: "ppc weights",
            expected: PPC_SLOTS,
            got: wq.len(),
        });
    }
    img.validate()?;
    if img.phrases.is_empty() {
        return Ok(Vec::new());
    }
    let mut kept = Vec::with_capacity(img.phrases.len());
    let mut unary = Vec::with_capacity(img.phrases.len());
    for p in &img.phrases {
        let scores = p.spc.score(ws)?;
        let idx = retrieve_candidates(&p.candidates, &scores, cfg.top_m, cfg.nms_iou)?;
        unary.push(idx.iter().map(|&k| scores[k]).collect::<Vec<f64>>());
        kept.push(idx);
    }
    let mut pairs = Vec::new();
    for r in &img.relations {
        let (Some(c), w) = (&r.costs, wq[r.kind.slot()]) else {
            continue;
        };
        if w == 0.0 {
            continue;
        }
        let m_right = img.phrases[r.right].candidates.len();
        let mut costs = Vec::with_capacity(kept[r.left].len() * kept[r.right].len());
        for &a in &kept[r.left] {
            for &b in &kept[r.right] {
                costs.push(w * c[a * m_right + b]);
            }
        }
        pairs.push(PairTerm {
            i: r.left,
            j: r.right,
            costs,
        });
    }
    let problem = JointProblem::new(unary, pairs)?;
    let a = solve(&problem, cfg.budget, &cfg.relax);
    Ok(a.chosen.iter().zip(&kept).map(|(&k, idx)| idx[k]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(rng: &mut ChaCha8Rng) -> JointProblem {
        let n = rng.random_range(1..=4);
        let unary: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let m = rng.random_range(1..=5);
                (0..m).map(|_| rng.random_range(0.0..1.0)).collect()
            })
            .collect();
        let mut pairs = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.random_bool(0.6) {
                    let c = (0..unary[i].len() * unary[j].len())
                        .map(|_| rng.random_range(0.0..1.0))
                        .collect();
                    pairs.push(PairTerm { i, j, costs: c });
                }
            }
        }
        JointProblem::new(unary, pairs).unwrap()
    }

    #[test]
    fn exact_examples() {
        let p = JointProblem::new(vec![vec![0.5, 0.1, 0.3]], vec![]).unwrap();
        assert_eq!(solve_exact(&p, DEFAULT_BUDGET).unwrap().chosen, vec![1]);

        let p = JointProblem::new(
            vec![vec![0.0, 1.0], vec![0.0, 1.0]],
            vec![PairTerm {
                i: 0,
                j: 1,
                costs: vec![10.0, 0.0, 0.0, 10.0],
            }],
        )
        .unwrap();
        let a = solve_exact(&p, DEFAULT_BUDGET).unwrap();
        assert_eq!(a.chosen, vec![0, 1]);
        assert_eq!(a.objective, 1.0);

        let p = JointProblem::new(
            vec![vec![0.4, 0.2], vec![0.1, 0.9]],
            vec![PairTerm {
                i: 0,
                j: 1,
                costs: vec![0.0; 4],
            }],
        )
        .unwrap();
        assert_eq!(solve_exact(&p, DEFAULT_BUDGET).unwrap().chosen, vec![1, 0]);
    }

    #[test]
    fn budget_and_validation() {
        let p = JointProblem::new(vec![vec![0.0; 10]; 7], vec![]).unwrap();
        assert!(matches!(
            solve_exact(&p, DEFAULT_BUDGET),
            Err(Error::BudgetExceeded { .. })
        ));
        assert!(JointProblem::new(vec![vec![]], vec![]).is_err());
        assert!(JointProblem::new(
            vec![vec![0.0], vec![0.0]],
            vec![PairTerm {
                i: 0,
                j: 0,
                costs: vec![0.0]
            }]
        )
        .is_err());
    }

    #[test]
    fn duplicate_and_reversed_pairs_are_summed() {
        let p = JointProblem::new(
            vec![vec![0.0, 0.0], vec![0.0, 0.0, 0.0]],
            vec![
                PairTerm {
                    i: 0,
                    j: 1,
                    costs: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
                },
                PairTerm {
                    i: 1,
                    j: 0,
                    costs: vec![10.0, 40.0, 20.0, 50.0, 30.0, 60.0],
                },
            ],
        )
        .unwrap();
        assert_eq!(p.pairs().len(), 1);
        assert_eq!(p.pairs()[0].costs, vec![11.0, 22.0, 33.0, 44.0, 55.0, 66.0]);
    }

    #[test]
    fn relaxed_matches_unary_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let unary: Vec<Vec<f64>> = (0..3)
                .map(|_| (0..6).map(|_| rng.random_range(0.0..1.0)).collect())
                .collect();
            let p = JointProblem::new(unary, vec![]).unwrap();
            let e = solve_exact(&p, DEFAULT_BUDGET).unwrap();
            let r = solve_relaxed(&p, &RelaxConfig::default());
            assert_eq!(e, r);
        }
    }

    #[test]
    fn relaxed_degenerate_is_deterministic() {
        let p = JointProblem::new(
            vec![vec![1.0; 4]; 3],
            vec![PairTerm {
                i: 0,
                j: 2,
                costs: vec![0.5; 16],
            }],
        )
        .unwrap();
        let a = solve_relaxed(&p, &RelaxConfig::default());
        assert_eq!(a, solve_relaxed(&p, &RelaxConfig::default()));
        assert_eq!(a.objective, 3.5);
        assert_eq!(a.chosen.len(), 3);
    }

    #[test]
    fn relaxed_is_close_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut close = 0;
        for _ in 0..100 {
            let p = random_problem(&mut rng);
            let e = solve_exact(&p, DEFAULT_BUDGET).unwrap();
            let r = solve_relaxed(&p, &RelaxConfig::default());
            assert!(e.objective <= r.objective + 1e-12);
            assert!((r.objective - p.objective(&r.chosen)).abs() < 1e-9);
            if r.objective <= e.objective * 1.05 + 1e-12 {
                close += 1;
            }
        }
        assert!(close >= 95, "{close}");
    }

    #[test]
    fn simplex_projection() {
        let mut v = vec![0.2, 0.3, 0.5];
        project_simplex(&mut v);
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let mut v = vec![5.0, -1.0, 0.0];
        project_simplex(&mut v);
        assert_eq!(v, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn retrieval_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let boxes: Vec<BoundingBox> = (0..200)
            .map(|_| {
                BoundingBox::new(
                    rng.random_range(0.0..400.0),
                    rng.random_range(0.0..400.0),
                    rng.random_range(10.0..100.0),
                    rng.random_range(10.0..100.0),
                )
                .unwrap()
            })
            .collect();
        let costs: Vec<f64> = (0..200).map(|_| rng.random_range(0.0..1.0)).collect();
        let out = retrieve_candidates(&boxes, &costs, 30, 0.8).unwrap();
        assert!(out.len() <= 30);
        assert!(out.windows(2).all(|w| costs[w[0]] <= costs[w[1]]));
        let one = retrieve_candidates(&boxes, &costs, 1, 0.8).unwrap();
        let best = argmin(&costs).unwrap();
        assert_eq!(one, vec![best]);
        let same = vec![boxes[0]; 5];
        assert_eq!(retrieve_candidates(&same, &[0.3; 5], 30, 0.8).unwrap().len(), 1);
    }

    proptest! {
        #[test]
        fn constant_shift_invariance(seed in 0u64..500, phrase in 0usize..4, c in -5.0f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_problem(&mut rng);
            let i = phrase % p.num_phrases();
            let mut unary = p.unary().to_vec();
            unary[i].iter_mut().for_each(|v| *v += c);
            let q = JointProblem::new(unary, p.pairs().to_vec()).unwrap();
            let (e1, e2) = (solve_exact(&p, DEFAULT_BUDGET).unwrap(), solve_exact(&q, DEFAULT_BUDGET).unwrap());
            prop_assert_eq!(&e1.chosen, &e2.chosen);
            prop_assert!((e2.objective - e1.objective - c).abs() < 1e-9);
            let (r1, r2) = (solve_relaxed(&p, &RelaxConfig::default()), solve_relaxed(&q, &RelaxConfig::default()));
            prop_assert_eq!(&r1.chosen, &r2.chosen);
            prop_assert!((r2.objective - r1.objective - c).abs() < 1e-9);
        }
    }
}
