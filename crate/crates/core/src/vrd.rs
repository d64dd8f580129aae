//! Visual relationship detection: score every ordered pair of detected boxes
//! under every predicate and evaluate recall at K.
//!
//! Each candidate gets an 11-value feature:
//!
//! | index | value |
//! |-------|-------|
//! | 0 | CCA(subject box, subject name) |
//! | 1 | CCA(object box, object name) |
//! | 2 | CCA(subject box, [subject, predicate]) |
//! | 3 | CCA(object box, [predicate, object]) |
//! | 4 | CCA(union box, predicate) |
//! | 5 | CCA(union box, [subject, predicate, object]) |
//! | 6, 7 | size cost of subject, object |
//! | 8, 9 | position cost of subject, object |
//! | 10 | `-ln p` of the predicate's spatial classifier |
//!
//! Slots 0 and 1 share one model in training but are stored separately.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use nalgebra::DMatrix;
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classify::{train_rbf_svm, RankSvmModel, RbfSvmModel, SvmConfig};
use crate::cues::{position_cost, size_cost};
use crate::embed::{fit_cca, CcaModel, FeatureVector};
use crate::error::{Error, Result};
use crate::geometry::{iou, position_feature, spatial_pair_feature, union_hull, BoundingBox, ImageSize};

pub const VRD_CCA_SCORES: usize = 6;
pub const VRD_FEATURE_DIM: usize = 11;
pub const DEFAULT_TOP_K: usize = 10;
/// Key of the class-independent position classifier.
pub const CATCH_ALL: &str = "*";

const CORRECT_IOU: f64 = 0.5;
const MISSING_PROB: f64 = 0.5;

/// Object classes, predicates and a text vector for every name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VrdVocabulary {
    pub object_classes: Vec<String>,
    pub predicates: Vec<String>,
    pub vectors: BTreeMap<String, FeatureVector>,
}

impl VrdVocabulary {
    pub fn new(
        object_classes: Vec<String>,
        predicates: Vec<String>,
        vectors: BTreeMap<String, FeatureVector>,
    ) -> Result<Self> {
        let v = Self {
            object_classes,
            predicates,
            vectors,
        };
        v.validate(None)?;
        Ok(v)
    }

    /// Every name needs a vector; `counts` optionally pins the number of
    /// object classes and predicates.
    pub fn validate(&self, counts: Option<(usize, usize)>) -> Result<()> {
        if let Some((o, p)) = counts {
            if self.object_classes.len() != o {
                return Err(Error::DictionaryCount {
                    name: "object classes".into(),
                    expected: o,
                    found: self.object_classes.len(),
                });
            }
            if self.predicates.len() != p {
                return Err(Error::DictionaryCount {
                    name: "predicates".into(),
                    expected: p,
                    found: self.predicates.len(),
                });
            }
        }
        for name in self.object_classes.iter().chain(&self.predicates) {
            if !self.vectors.contains_key(name) {
                return Err(Error::MissingFeature(format!("text vector for {name:?}")));
            }
        }
        Ok(())
    }

    pub fn vector(&self, name: &str) -> Result<&FeatureVector> {
        self.vectors
            .get(name)
            .ok_or_else(|| Error::MissingFeature(format!("text vector for {name:?}")))
    }

    /// Text input of score slot `slot` for a (subject, predicate, object)
    /// triple.
    pub fn text_input(&self, slot: usize, s: &str, p: &str, o: &str) -> Result<FeatureVector> {
        let names: &[&str] = match slot {
            0 => &[s],
            1 => &[o],
            2 => &[s, p],
            3 => &[p, o],
            4 => &[p],
            5 => &[s, p, o],
            _ => {
                return Err(Error::InvalidArgument(format!("no CCA score slot {slot}")));
            }
        };
        let parts: Vec<&FeatureVector> = names.iter().map(|n| self.vector(n)).collect::<Result<_>>()?;
        FeatureVector::concat(&parts)
    }
}

/// Which region each score slot reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Region {
    Subject,
    Object,
    Union,
}

const SLOT_REGIONS: [Region; VRD_CCA_SCORES] = [
    Region::Subject,
    Region::Object,
    Region::Subject,
    Region::Object,
    Region::Union,
    Region::Union,
];

/// One CCA model per score slot. Text is view `x`, regions view `y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<CcaModel>", into = "Vec<CcaModel>")]
pub struct VrdCcaBank {
    models: Vec<CcaModel>,
}

impl TryFrom<Vec<CcaModel>> for VrdCcaBank {
    type Error = Error;

    fn try_from(models: Vec<CcaModel>) -> Result<Self> {
        Self::new(models)
    }
}

impl From<VrdCcaBank> for Vec<CcaModel> {
    fn from(b: VrdCcaBank) -> Self {
        b.models
    }
}

impl VrdCcaBank {
    pub fn new(models: Vec<CcaModel>) -> Result<Self> {
        if models.len() != VRD_CCA_SCORES {
            return Err(Error::InvalidArgument(format!(
                "relationship CCA bank needs {VRD_CCA_SCORES} score models, got {}",
                models.len()
            )));
        }
        Ok(Self { models })
    }

    pub fn models(&self) -> &[CcaModel] {
        &self.models
    }
}

/// Region features and names of one training relationship.
#[derive(Debug, Clone, PartialEq)]
pub struct VrdCcaExample {
    pub subject_feat: FeatureVector,
    pub object_feat: FeatureVector,
    pub union_feat: FeatureVector,
    pub subject: String,
    pub predicate: String,
    pub object: String,
}

/// Fit the five distinct models and place them in the six score slots.
/// `k` is capped at each model's smaller view dimension.
pub fn fit_vrd_cca(
    examples: &[VrdCcaExample],
    vocab: &VrdVocabulary,
    k: usize,
    reg: f64,
) -> Result<VrdCcaBank> {
    if examples.len() < 2 {
        return Err(Error::InvalidArgument("need at least two relationships to fit CCA".into()));
    }
    let to_matrix = |rows: &[FeatureVector]| -> DMatrix<f64> {
        let d = rows[0].dim();
        DMatrix::from_fn(rows.len(), d, |i, j| rows[i].values()[j])
    };
    let fit = |text: Vec<FeatureVector>, region: Vec<FeatureVector>| -> Result<CcaModel> {
        let (x, y) = (to_matrix(&text), to_matrix(&region));
        let kk = k.min(x.ncols()).min(y.ncols());
        fit_cca(&x, &y, kk, reg)
    };
    let mut entity = (Vec::new(), Vec::new());
    let mut per_slot: Vec<(Vec<FeatureVector>, Vec<FeatureVector>)> = vec![(Vec::new(), Vec::new()); 4];
    for ex in examples {
        let (s, p, o) = (ex.subject.as_str(), ex.predicate.as_str(), ex.object.as_str());
        entity.0.push(vocab.text_input(0, s, p, o)?);
        entity.1.push(ex.subject_feat.clone());
        entity.0.push(vocab.text_input(1, s, p, o)?);
        entity.1.push(ex.object_feat.clone());
        for (i, slot) in (2..VRD_CCA_SCORES).enumerate() {
            per_slot[i].0.push(vocab.text_input(slot, s, p, o)?);
            let region = match SLOT_REGIONS[slot] {
                Region::Subject => &ex.subject_feat,
                Region::Object => &ex.object_feat,
                Region::Union => &ex.union_feat,
            };
            per_slot[i].1.push(region.clone());
        }
    }
    let m1 = fit(entity.0, entity.1)?;
    let mut models = vec![m1.clone(), m1];
    for (text, region) in per_slot {
        models.push(fit(text, region)?);
    }
    VrdCcaBank::new(models)
}

/// The six CCA distances of one (subject box, object box, names) candidate.
#[allow(clippy::too_many_arguments)]
pub fn vrd_cca_scores(
    bank: &VrdCcaBank,
    vocab: &VrdVocabulary,
    subject_feat: &FeatureVector,
    object_feat: &FeatureVector,
    union_feat: &FeatureVector,
    subject: &str,
    predicate: &str,
    object: &str,
) -> Result<[f64; VRD_CCA_SCORES]> {
    let mut out = [0.0; VRD_CCA_SCORES];
    for (slot, model) in bank.models.iter().enumerate() {
        let text = vocab.text_input(slot, subject, predicate, object)?;
        let region = match SLOT_REGIONS[slot] {
            Region::Subject => subject_feat,
            Region::Object => object_feat,
            Region::Union => union_feat,
        };
        out[slot] = model.cca_cost(&text, region)?.cost;
    }
    Ok(out)
}

/// Concatenate the candidate's scores in the documented order.
pub fn vrd_feature(
    cca: &[f64; VRD_CCA_SCORES],
    size_subject: f64,
    size_object: f64,
    pos_subject: f64,
    pos_object: f64,
    spatial: f64,
) -> [f64; VRD_FEATURE_DIM] {
    let mut f = [0.0; VRD_FEATURE_DIM];
    f[..VRD_CCA_SCORES].copy_from_slice(cca);
    f[6] = size_subject;
    f[7] = size_object;
    f[8] = pos_subject;
    f[9] = pos_object;
    f[10] = spatial;
    f
}

/// Boxes and classes from an external detector for one image. Without an
/// explicit size the image is taken to span the boxes' extent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VrdDetections {
    pub image_id: String,
    pub boxes: Vec<BoundingBox>,
    pub classes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<f64>,
}

impl VrdDetections {
    pub fn image_size(&self) -> Result<ImageSize> {
        let extent = |f: fn(&BoundingBox) -> f64| self.boxes.iter().map(f).fold(0.0, f64::max);
        ImageSize::new(
            self.width.unwrap_or_else(|| extent(BoundingBox::right)),
            self.height.unwrap_or_else(|| extent(BoundingBox::bottom)),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.boxes.len() != self.classes.len() {
            return Err(Error::LengthMismatch {
                what: "detection boxes/classes",
                left: self.boxes.len(),
                right: self.classes.len(),
            });
        }
        Ok(())
    }
}

/// Region features of one image keyed by [`region_key`] and [`union_key`].
pub type RegionFeatures = HashMap<String, FeatureVector>;

pub fn region_key(i: usize) -> String {
    i.to_string()
}

pub fn union_key(i: usize, j: usize) -> String {
    format!("{i}+{j}")
}

fn region<'a>(feats: &'a RegionFeatures, key: &str, image_id: &str) -> Result<&'a FeatureVector> {
    feats
        .get(key)
        .ok_or_else(|| Error::MissingFeature(format!("box {key} of image {image_id}")))
}

/// Models that produce the 11-value feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VrdFeatureModels {
    pub cca: VrdCcaBank,
    /// Position classifiers keyed by object class, with [`CATCH_ALL`] used
    /// for classes without their own.
    pub position: BTreeMap<String, RbfSvmModel>,
    /// One-vs-rest spatial classifiers keyed by predicate.
    pub spatial: BTreeMap<String, RbfSvmModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VrdModels {
    pub features: VrdFeatureModels,
    pub rank: RankSvmModel,
}

impl VrdFeatureModels {
    fn position_cost(&self, class: &str, b: &BoundingBox, img: ImageSize) -> Result<f64> {
        match self.position.get(class).or_else(|| self.position.get(CATCH_ALL)) {
            Some(m) => position_cost(m, b, img),
            None => Ok(-MISSING_PROB.ln()),
        }
    }

    fn spatial_cost(&self, predicate: &str, b: &BoundingBox, b2: &BoundingBox) -> Result<f64> {
        match self.spatial.get(predicate) {
            Some(m) => Ok(-m.predict_prob(&spatial_pair_feature(b, b2))?.ln()),
            None => Ok(-MISSING_PROB.ln()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationshipCandidate {
    pub subject: usize,
    pub object: usize,
    pub subject_box: BoundingBox,
    pub object_box: BoundingBox,
    pub subject_class: String,
    pub predicate: String,
    pub object_class: String,
    pub feature: Vec<f64>,
    pub score: f64,
}

/// Every ordered pair of distinct boxes under every predicate, with its
/// feature and a zero score. Order: subject, object, predicate index.
pub fn enumerate_candidates(
    det: &VrdDetections,
    feats: &RegionFeatures,
    vocab: &VrdVocabulary,
    models: &VrdFeatureModels,
) -> Result<Vec<RelationshipCandidate>> {
    det.validate()?;
    let n = det.boxes.len();
    let mut out = Vec::new();
    if n < 2 {
        return Ok(out);
    }
    let img = det.image_size()?;
    let sizes: Vec<f64> = det.boxes.iter().map(|b| size_cost(b, img)).collect();
    let positions: Vec<f64> = det
        .boxes
        .iter()
        .zip(&det.classes)
        .map(|(b, c)| models.position_cost(c, b, img))
        .collect::<Result<_>>()?;
    for i in 0..n {
        let fi = region(feats, &region_key(i), &det.image_id)?;
        for j in 0..n {
            if i == j {
                continue;
            }
            let fj = region(feats, &region_key(j), &det.image_id)?;
            let fu = region(feats, &union_key(i, j), &det.image_id)?;
            let (bi, bj) = (&det.boxes[i], &det.boxes[j]);
            for pred in &vocab.predicates {
                let cca = vrd_cca_scores(
                    &models.cca,
                    vocab,
                    fi,
                    fj,
                    fu,
                    &det.classes[i],
                    pred,
                    &det.classes[j],
                )?;
                let spatial = models.spatial_cost(pred, bi, bj)?;
                let f = vrd_feature(&cca, sizes[i], sizes[j], positions[i], positions[j], spatial);
                out.push(RelationshipCandidate {
                    subject: i,
                    object: j,
                    subject_box: *bi,
                    object_box: *bj,
                    subject_class: det.classes[i].clone(),
                    predicate: pred.clone(),
                    object_class: det.classes[j].clone(),
                    feature: f.to_vec(),
                    score: 0.0,
                });
            }
        }
    }
    Ok(out)
}

/// Score candidates with the rank model and keep the best `top_k`
/// predicates of each ordered pair. Output is sorted by descending score;
/// ties keep enumeration order.
pub fn rank_candidates(
    mut candidates: Vec<RelationshipCandidate>,
    rank: &RankSvmModel,
    top_k: usize,
) -> Result<Vec<RelationshipCandidate>> {
    for c in &mut candidates {
        c.score = rank.rank_score(&c.feature)?;
    }
    let mut groups: BTreeMap<(usize, usize), Vec<RelationshipCandidate>> = BTreeMap::new();
    for c in candidates {
        groups.entry((c.subject, c.object)).or_default().push(c);
    }
    let mut out = Vec::new();
    for (_, mut g) in groups {
        g.sort_by(|a, b| b.score.total_cmp(&a.score));
        g.truncate(top_k);
        out.extend(g);
    }
    out.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(out)
}

/// Top `top_k` relationships per ordered pair of detected boxes.
pub fn score_relationships(
    det: &VrdDetections,
    feats: &RegionFeatures,
    vocab: &VrdVocabulary,
    models: &VrdModels,
    top_k: usize,
) -> Result<Vec<RelationshipCandidate>> {
    let all = enumerate_candidates(det, feats, vocab, &models.features)?;
    rank_candidates(all, &models.rank, top_k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VrdRelation {
    pub subject: String,
    pub predicate: String,
    pub object: String,
    pub subject_box: BoundingBox,
    pub object_box: BoundingBox,
    #[serde(default = "default_seen")]
    pub seen: bool,
}

fn default_seen() -> bool {
    true
}

impl VrdRelation {
    pub fn triple(&self) -> (String, String, String) {
        (self.subject.clone(), self.predicate.clone(), self.object.clone())
    }

    /// Correct triple and both boxes at IOU >= 0.5.
    pub fn matched_by(&self, c: &RelationshipCandidate) -> bool {
        c.subject_class == self.subject
            && c.predicate == self.predicate
            && c.object_class == self.object
            && iou(&c.subject_box, &self.subject_box) >= CORRECT_IOU
            && iou(&c.object_box, &self.object_box) >= CORRECT_IOU
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VrdGroundTruth {
    pub image_id: String,
    pub relations: Vec<VrdRelation>,
}

/// Mark each relation seen or unseen against the training triples.
pub fn mark_seen(gt: &mut VrdGroundTruth, training: &BTreeSet<(String, String, String)>) {
    for r in &mut gt.relations {
        r.seen = training.contains(&r.triple());
    }
}

/// True when no relation flagged unseen appears among the training triples
/// and no seen one is missing from them.
pub fn split_is_consistent(gt: &VrdGroundTruth, training: &BTreeSet<(String, String, String)>) -> bool {
    gt.relations
        .iter()
        .all(|r| r.seen == training.contains(&r.triple()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecallAt {
    pub recalled: usize,
    pub total: usize,
}

impl RecallAt {
    pub fn ratio(&self) -> Option<f64> {
        (self.total > 0).then(|| self.recalled as f64 / self.total as f64)
    }
}

impl std::ops::Add for RecallAt {
    type Output = RecallAt;

    fn add(self, o: RecallAt) -> RecallAt {
        RecallAt {
            recalled: self.recalled + o.recalled,
            total: self.total + o.total,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecallOptions {
    pub k: usize,
    pub zero_shot_only: bool,
    /// Each ground-truth relation and each candidate is used at most once,
    /// assigned greedily down the ranking.
    pub one_to_one: bool,
}

impl RecallOptions {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            zero_shot_only: false,
            one_to_one: true,
        }
    }
}

/// Recall of `gt` among the first `k` ranked candidates. `None` when the
/// (possibly zero-shot restricted) ground truth is empty.
pub fn eval_recall_at(
    ranked: &[RelationshipCandidate],
    gt: &VrdGroundTruth,
    opts: RecallOptions,
) -> Option<RecallAt> {
    let targets: Vec<&VrdRelation> = gt
        .relations
        .iter()
        .filter(|r| !opts.zero_shot_only || !r.seen)
        .collect();
    if targets.is_empty() {
        return None;
    }
    let top = &ranked[..ranked.len().min(opts.k)];
    let mut matched = vec![false; targets.len()];
    if opts.one_to_one {
        for c in top {
            if let Some(t) = (0..targets.len()).find(|&t| !matched[t] && targets[t].matched_by(c)) {
                matched[t] = true;
            }
        }
    } else {
        for (t, r) in targets.iter().enumerate() {
            matched[t] = top.iter().any(|c| r.matched_by(c));
        }
    }
    Some(RecallAt {
        recalled: matched.iter().filter(|m| **m).count(),
        total: targets.len(),
    })
}

/// Pair every correct candidate with up to `neg_ratio` incorrect ones from
/// the same image, sampled with a seeded generator.
pub fn build_rank_training(
    images: &[(Vec<RelationshipCandidate>, VrdGroundTruth)],
    neg_ratio: usize,
    seed: u64,
) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::new();
    let mut positives = 0;
    for (cands, gt) in images {
        let (pos, neg): (Vec<&RelationshipCandidate>, Vec<&RelationshipCandidate>) = cands
            .iter()
            .partition(|c| gt.relations.iter().any(|r| r.matched_by(c)));
        positives += pos.len();
        for p in pos {
            for n in neg.choose_multiple(&mut rng, neg_ratio) {
                pairs.push((p.feature.clone(), n.feature.clone()));
            }
        }
    }
    if positives == 0 {
        return Err(Error::NoPositives("no candidate matches a ground-truth relationship".into()));
    }
    Ok(pairs)
}

/// Train one-vs-rest spatial classifiers over predicates from ground-truth
/// box pairs. Negatives are pairs with other predicates, `neg_ratio` per
/// positive.
pub fn train_spatial_svms(
    gt: &[VrdGroundTruth],
    predicates: &[String],
    svm: &SvmConfig,
    neg_ratio: usize,
    seed: u64,
) -> Result<BTreeMap<String, RbfSvmModel>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let all: Vec<(&str, Vec<f64>)> = gt
        .iter()
        .flat_map(|g| &g.relations)
        .map(|r| {
            (
                r.predicate.as_str(),
                spatial_pair_feature(&r.subject_box, &r.object_box).to_vec(),
            )
        })
        .collect();
    let mut out = BTreeMap::new();
    for pred in predicates {
        let pos: Vec<Vec<f64>> = all.iter().filter(|(p, _)| p == pred).map(|(_, f)| f.clone()).collect();
        let others: Vec<&Vec<f64>> = all.iter().filter(|(p, _)| p != pred).map(|(_, f)| f).collect();
        if pos.is_empty() || others.is_empty() {
            continue;
        }
        let neg: Vec<Vec<f64>> = others
            .choose_multiple(&mut rng, pos.len() * neg_ratio)
            .map(|f| (*f).clone())
            .collect();
        out.insert(pred.clone(), train_rbf_svm(&pos, &neg, svm)?);
    }
    Ok(out)
}

/// Train position classifiers per object class plus a catch-all. Positives
/// are ground-truth boxes; negatives are detections of the same image with
/// IOU < 0.5 against every ground-truth box of that class.
pub fn train_vrd_position_svms(
    data: &[(VrdDetections, VrdGroundTruth)],
    svm: &SvmConfig,
    neg_ratio: usize,
    min_positives: usize,
    seed: u64,
) -> Result<BTreeMap<String, RbfSvmModel>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_class: BTreeMap<String, (Vec<Vec<f64>>, Vec<Vec<f64>>)> = BTreeMap::new();
    for (det, gt) in data {
        let img = det.image_size()?;
        let mut boxes: BTreeMap<&str, Vec<BoundingBox>> = BTreeMap::new();
        for r in &gt.relations {
            boxes.entry(&r.subject).or_default().push(r.subject_box);
            boxes.entry(&r.object).or_default().push(r.object_box);
        }
        for (class, gts) in boxes {
            let entry = per_class.entry(class.to_string()).or_default();
            for g in &gts {
                entry.0.push(position_feature(g, img).to_vec());
            }
            let pool: Vec<&BoundingBox> = det
                .boxes
                .iter()
                .filter(|b| gts.iter().all(|g| iou(b, g) < CORRECT_IOU))
                .collect();
            for b in pool.choose_multiple(&mut rng, gts.len() * neg_ratio) {
                entry.1.push(position_feature(b, img).to_vec());
            }
        }
    }
    let mut out = BTreeMap::new();
    let (mut all_pos, mut all_neg) = (Vec::new(), Vec::new());
    for (class, (pos, neg)) in per_class {
        all_pos.extend(pos.iter().cloned());
        all_neg.extend(neg.iter().cloned());
        if pos.len() >= min_positives && !neg.is_empty() {
            out.insert(class, train_rbf_svm(&pos, &neg, svm)?);
        }
    }
    if !all_pos.is_empty() && !all_neg.is_empty() {
        out.insert(CATCH_ALL.to_string(), train_rbf_svm(&all_pos, &all_neg, svm)?);
    }
    Ok(out)
}

/// Best-overlapping detection (IOU >= 0.5) for a ground-truth box.
pub fn match_detection(det: &VrdDetections, gt: &BoundingBox) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, b) in det.boxes.iter().enumerate() {
        let v = iou(b, gt);
        if v >= CORRECT_IOU && best.is_none_or(|(_, bv)| v > bv) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// CCA training rows from ground-truth relations whose boxes are matched by
/// detections that have region features.
pub fn cca_examples(
    det: &VrdDetections,
    feats: &RegionFeatures,
    gt: &VrdGroundTruth,
) -> Vec<VrdCcaExample> {
    let mut out = Vec::new();
    for r in &gt.relations {
        let (Some(i), Some(j)) = (match_detection(det, &r.subject_box), match_detection(det, &r.object_box)) else {
            continue;
        };
        if i == j {
            continue;
        }
        let (Some(fs), Some(fo), Some(fu)) = (
            feats.get(&region_key(i)),
            feats.get(&region_key(j)),
            feats.get(&union_key(i, j)),
        ) else {
            continue;
        };
        out.push(VrdCcaExample {
            subject_feat: fs.clone(),
            object_feat: fo.clone(),
            union_feat: fu.clone(),
            subject: r.subject.clone(),
            predicate: r.predicate.clone(),
            object: r.object.clone(),
        });
    }
    out
}

/// The union box of an ordered pair.
pub fn union_box(a: &BoundingBox, b: &BoundingBox) -> BoundingBox {
    union_hull(&[*a, *b]).expect("two boxes")
}
