//! Single-phrase cue costs and their assembly into per-phrase cost rows.
//!
//! Every phrase gets 14 cost slots in a fixed order:
//!
//! | slot | cue |
//! |------|-----|
//! | 0 | region-phrase CCA distance |
//! | 1 | position SVM |
//! | 2..=9 | box size, one slot per phrase type (in [`PhraseType::ALL`] order) |
//! | 10 | object detector |
//! | 11 | adjective detector |
//! | 12 | subject-verb detector |
//! | 13 | verb-object detector |
//!
//! Unavailable slots hold cost 0 and are masked out.

use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assets;
use crate::classify::{train_rbf_svm, RbfSvmModel, SvmConfig};
use crate::embed::{CcaModel, FeatureVector};
use crate::error::{Error, Result};
use crate::geometry::{iou, position_feature, BoundingBox, ImageSize};
use crate::phrase::{PhraseRecord, PhraseType};

pub const SPC_SLOTS: usize = 14;
pub const SLOT_CCA: usize = 0;
pub const SLOT_POSITION: usize = 1;
pub const SLOT_SIZE_FIRST: usize = 2;
pub const SLOT_OBJECT: usize = 10;
pub const SLOT_ADJECTIVE: usize = 11;
pub const SLOT_SUBJECT_VERB: usize = 12;
pub const SLOT_VERB_OBJECT: usize = 13;

/// Probability substituted for zero or missing detector scores.
pub const PROB_FLOOR: f64 = 1e-7;

pub fn size_slot(t: PhraseType) -> usize {
    SLOT_SIZE_FIRST + t.index()
}

pub fn spc_slot_names() -> Vec<String> {
    let mut names = vec!["cca".to_string(), "position".to_string()];
    names.extend(PhraseType::ALL.iter().map(|t| format!("size_{}", t.as_str())));
    names.extend(
        ["object_det", "adjective", "subject_verb", "verb_object"]
            .iter()
            .map(|s| s.to_string()),
    );
    names
}

/// Term to category lookup loaded from a two-column TSV. A term may map to
/// several categories.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CueDictionary {
    map: BTreeMap<String, Vec<String>>,
    rows: usize,
}

impl CueDictionary {
    pub fn from_tsv(text: &str, name: &str) -> Result<Self> {
        let rows = assets::parse_tsv(text, name, 2)?;
        Ok(Self::from_pairs(
            rows.into_iter().map(|r| (r[0].clone(), r[1].clone())),
        ))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tsv(&text, &path.display().to_string())
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, String)>) -> Self {
        let mut d = Self::default();
        for (term, cat) in pairs {
            let cats = d.map.entry(term.to_lowercase()).or_default();
            if !cats.contains(&cat) {
                cats.push(cat);
                d.rows += 1;
            }
        }
        d
    }

    /// Number of distinct (term, category) rows.
    pub fn len(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn categories(&self, term: &str) -> &[String] {
        self.map.get(term).map_or(&[], |v| v.as_slice())
    }

    pub fn has_category(&self, term: &str, category: &str) -> bool {
        self.categories(term).iter().any(|c| c == category)
    }

    pub fn with_expected_count(self, name: &str, expected: usize) -> Result<Self> {
        if self.rows != expected {
            return Err(Error::DictionaryCount {
                name: name.to_string(),
                expected,
                found: self.rows,
            });
        }
        Ok(self)
    }
}

/// Dictionaries routing a phrase to its detector categories.
#[derive(Debug, Clone, PartialEq)]
pub struct PhraseCueConfig {
    pub adjectives: CueDictionary,
    pub objects: CueDictionary,
    /// Surface verb form to the verb key used by the two verb dictionaries.
    pub verbs: CueDictionary,
    pub subject_verb: CueDictionary,
    pub verb_object: CueDictionary,
    pub prob_floor: f64,
}

impl PhraseCueConfig {
    /// The dictionaries shipped with the crate, with their sizes checked.
    pub fn shipped() -> Result<Self> {
        Ok(Self {
            adjectives: CueDictionary::from_tsv(assets::ADJECTIVES, "adjectives.tsv")?
                .with_expected_count("adjectives.tsv", assets::counts::ADJECTIVES)?,
            objects: CueDictionary::from_tsv(assets::OBJECTS, "objects.tsv")?,
            verbs: CueDictionary::from_tsv(assets::VERBS, "verbs.tsv")?
                .with_expected_count("verbs.tsv", assets::counts::VERBS)?,
            subject_verb: CueDictionary::from_tsv(assets::SUBJECT_VERB, "subject_verb.tsv")?
                .with_expected_count("subject_verb.tsv", assets::counts::SUBJECT_VERB)?,
            verb_object: CueDictionary::from_tsv(assets::VERB_OBJECT, "verb_object.tsv")?
                .with_expected_count("verb_object.tsv", assets::counts::VERB_OBJECT)?,
            prob_floor: PROB_FLOOR,
        })
    }

    /// Load dictionaries from a directory holding files named like the
    /// shipped assets. Missing files fall back to the shipped copies.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut cfg = Self::shipped()?;
        let slots: [(&str, &mut CueDictionary); 5] = [
            ("adjectives.tsv", &mut cfg.adjectives),
            ("objects.tsv", &mut cfg.objects),
            ("verbs.tsv", &mut cfg.verbs),
            ("subject_verb.tsv", &mut cfg.subject_verb),
            ("verb_object.tsv", &mut cfg.verb_object),
        ];
        for (file, dict) in slots {
            let path = dir.join(file);
            if path.exists() {
                *dict = CueDictionary::load(&path)?;
            }
        }
        Ok(cfg)
    }

    fn lower_words(phrase: &PhraseRecord) -> Vec<String> {
        phrase.words.iter().map(|w| w.to_lowercase()).collect()
    }

    /// Object detector categories for words of the phrase.
    pub fn object_categories(&self, phrase: &PhraseRecord) -> Vec<String> {
        let mut out = Vec::new();
        for w in Self::lower_words(phrase) {
            for c in self.objects.categories(&w) {
                push_unique(&mut out, c);
            }
        }
        out
    }

    /// Adjective categories. People phrases use the `people-` variant of a
    /// term when one exists; other phrases never use `people-` categories.
    pub fn adjective_categories(&self, phrase: &PhraseRecord) -> Vec<String> {
        let people = phrase.phrase_type == PhraseType::People;
        let mut out = Vec::new();
        for w in Self::lower_words(phrase) {
            let cats = self.adjectives.categories(&w);
            if cats.is_empty() {
                continue;
            }
            let special = cats.iter().find(|c| c.starts_with("people-"));
            let plain = cats.iter().find(|c| !c.starts_with("people-"));
            let pick = if people { special.or(plain) } else { plain };
            if let Some(c) = pick {
                push_unique(&mut out, c);
            }
        }
        out
    }

    fn verb_categories(
        &self,
        dict: &CueDictionary,
        verbs: &[String],
        ty: PhraseType,
    ) -> Vec<String> {
        let mut out = Vec::new();
        for v in verbs {
            let v = v.to_lowercase();
            let keys: Vec<String> = match self.verbs.categories(&v) {
                [] => vec![v.clone()],
                ks => ks.to_vec(),
            };
            for key in keys {
                let typed = format!("{}-{}", ty.as_str(), key);
                if dict.has_category(&key, &typed) {
                    push_unique(&mut out, &typed);
                } else if dict.has_category(&key, &key) {
                    push_unique(&mut out, &key);
                }
            }
        }
        out
    }

    pub fn subject_verb_categories(&self, phrase: &PhraseRecord) -> Vec<String> {
        self.verb_categories(&self.subject_verb, &phrase.subject_of, phrase.phrase_type)
    }

    pub fn verb_object_categories(&self, phrase: &PhraseRecord) -> Vec<String> {
        self.verb_categories(&self.verb_object, &phrase.object_of, phrase.phrase_type)
    }
}

fn push_unique(v: &mut Vec<String>, s: &str) {
    if !v.iter().any(|x| x == s) {
        v.push(s.to_string());
    }
}

/// Build a verb dictionary from `(phrase type, verb) -> count` statistics.
/// Every verb gets its catch-all category; a typed category is added when
/// the pair occurs at least `min_count` times.
pub fn build_verb_dictionary(
    counts: &BTreeMap<(PhraseType, String), usize>,
    min_count: usize,
) -> CueDictionary {
    let mut pairs = Vec::new();
    for ((ty, verb), &n) in counts {
        if n >= min_count {
            pairs.push((verb.clone(), format!("{}-{}", ty.as_str(), verb)));
        }
    }
    for (_, verb) in counts.keys() {
        pairs.push((verb.clone(), verb.clone()));
    }
    CueDictionary::from_pairs(pairs)
}

/// One line of a detector score file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorScore {
    pub image_id: String,
    #[serde(rename = "box")]
    pub box_index: usize,
    pub category: String,
    pub prob: f64,
}

/// Softmax outputs keyed by image, box index and category.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectorScoreTable {
    entries: HashMap<String, HashMap<(usize, String), f64>>,
}

impl DetectorScoreTable {
    pub fn insert(&mut self, s: DetectorScore) -> Result<()> {
        if !(0.0..=1.0).contains(&s.prob) {
            return Err(Error::InvalidArgument(format!(
                "detector probability {} outside [0, 1]",
                s.prob
            )));
        }
        self.entries
            .entry(s.image_id)
            .or_default()
            .insert((s.box_index, s.category), s.prob);
        Ok(())
    }

    pub fn get(&self, image_id: &str, box_index: usize, category: &str) -> Option<f64> {
        self.entries
            .get(image_id)?
            .get(&(box_index, category.to_string()))
            .copied()
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(|m| m.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn from_records(records: impl IntoIterator<Item = DetectorScore>) -> Result<Self> {
        let mut t = Self::default();
        for r in records {
            t.insert(r)?;
        }
        Ok(t)
    }

    /// Read a JSONL score file.
    pub fn load_jsonl(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut t = Self::default();
        for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: DetectorScore = serde_json::from_str(&line).map_err(|e| Error::Format {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })?;
            t.insert(rec)?;
        }
        Ok(t)
    }
}

/// Detector tables for the four detector-backed cues.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectorTables {
    pub object: DetectorScoreTable,
    pub adjective: DetectorScoreTable,
    pub subject_verb: DetectorScoreTable,
    pub verb_object: DetectorScoreTable,
}

/// `1 - (w/W)(h/H)`.
pub fn size_cost(b: &BoundingBox, img: ImageSize) -> f64 {
    (1.0 - (b.w / img.width) * (b.h / img.height)).clamp(0.0, 1.0)
}

/// Negative log probability of the type's position classifier.
pub fn position_cost(svm: &RbfSvmModel, b: &BoundingBox, img: ImageSize) -> Result<f64> {
    Ok(-svm.predict_prob(&position_feature(b, img))?.ln())
}

/// Negative log of the mean detector probability over `categories`.
/// Returns `None` when no category applies.
pub fn detector_cost(
    table: &DetectorScoreTable,
    categories: &[String],
    image_id: &str,
    box_index: usize,
    floor: f64,
) -> Option<f64> {
    if categories.is_empty() {
        return None;
    }
    let mean = categories
        .iter()
        .map(|c| table.get(image_id, box_index, c).unwrap_or(floor))
        .sum::<f64>()
        / categories.len() as f64;
    Some(-mean.max(floor).ln())
}

/// Position classifiers keyed by phrase type.
pub type PositionSvms = BTreeMap<PhraseType, RbfSvmModel>;

/// Cost row for one phrase over its candidate boxes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpcRow {
    pub phrase_id: String,
    pub costs: Vec<[f64; SPC_SLOTS]>,
    pub available: [bool; SPC_SLOTS],
}

impl SpcRow {
    pub fn num_candidates(&self) -> usize {
        self.costs.len()
    }

    /// Weighted cost of every candidate; lower is better.
    pub fn score(&self, weights: &[f64]) -> Result<Vec<f64>> {
        check_weights(weights)?;
        Ok(self
            .costs
            .iter()
            .map(|c| masked_dot(c, &self.available, weights))
            .collect())
    }

    /// Index of the lowest weighted cost, ties to the lower index.
    pub fn argmin(&self, weights: &[f64]) -> Result<Option<usize>> {
        let scores = self.score(weights)?;
        Ok(argmin(&scores))
    }
}

pub(crate) fn argmin(v: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in v.iter().enumerate() {
        if best.is_none_or(|b| *s < v[b]) {
            best = Some(i);
        }
    }
    best
}

fn check_weights(weights: &[f64]) -> Result<()> {
    if weights.len() != SPC_SLOTS {
        return Err(Error::DimensionMismatch {
            what: "spc weights",
            expected: SPC_SLOTS,
            got: weights.len(),
        });
    }
    Ok(())
}

pub(crate) fn masked_dot(costs: &[f64; SPC_SLOTS], available: &[bool; SPC_SLOTS], w: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..SPC_SLOTS {
        if available[k] {
            s += costs[k] * w[k];
        }
    }
    s
}

/// Masked weighted sum per candidate.
pub fn spc_score(row: &SpcRow, weights: &[f64]) -> Result<Vec<f64>> {
    row.score(weights)
}

/// All cue costs for the phrases of one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CueCostTable {
    pub image_id: String,
    pub cue_names: Vec<String>,
    pub rows: Vec<SpcRow>,
}

impl CueCostTable {
    pub fn new(image_id: impl Into<String>, rows: Vec<SpcRow>) -> Self {
        Self {
            image_id: image_id.into(),
            cue_names: spc_slot_names(),
            rows,
        }
    }
}

/// Trained models and tables needed to fill a cost row.
#[derive(Debug, Clone, Copy)]
pub struct CueModels<'a> {
    pub cca: &'a CcaModel,
    pub position_svms: &'a PositionSvms,
    pub detectors: &'a DetectorTables,
    pub config: &'a PhraseCueConfig,
}

/// Fill the 14 cost slots of `phrase` for every candidate box.
///
/// `candidates[i]` is box index `i` of the image in the detector tables and
/// `region_features[i]` its appearance feature.
pub fn assemble_spc(
    phrase: &PhraseRecord,
    candidates: &[BoundingBox],
    region_features: &[FeatureVector],
    img: ImageSize,
    models: CueModels<'_>,
) -> Result<SpcRow> {
    if candidates.is_empty() {
        return Err(Error::NoBoxes);
    }
    if candidates.len() != region_features.len() {
        return Err(Error::LengthMismatch {
            what: "candidates/region features",
            left: candidates.len(),
            right: region_features.len(),
        });
    }
    let pf = phrase
        .feature
        .as_ref()
        .ok_or_else(|| Error::MissingFeature(format!("phrase {}", phrase.phrase_id)))?;
    let cfg = models.config;
    let position_svm = models.position_svms.get(&phrase.phrase_type);
    let size_k = size_slot(phrase.phrase_type);
    let detector_slots = [
        (SLOT_OBJECT, &models.detectors.object, cfg.object_categories(phrase)),
        (
            SLOT_ADJECTIVE,
            &models.detectors.adjective,
            cfg.adjective_categories(phrase),
        ),
        (
            SLOT_SUBJECT_VERB,
            &models.detectors.subject_verb,
            cfg.subject_verb_categories(phrase),
        ),
        (
            SLOT_VERB_OBJECT,
            &models.detectors.verb_object,
            cfg.verb_object_categories(phrase),
        ),
    ];

    let mut available = [false; SPC_SLOTS];
    available[SLOT_CCA] = true;
    available[SLOT_POSITION] = position_svm.is_some();
    available[size_k] = true;
    for (slot, _, cats) in &detector_slots {
        available[*slot] = !cats.is_empty();
    }

    let mut costs = Vec::with_capacity(candidates.len());
    for (i, (b, rf)) in candidates.iter().zip(region_features).enumerate() {
        let mut c = [0.0; SPC_SLOTS];
        c[SLOT_CCA] = models.cca.cca_cost(pf, rf)?.cost;
        if let Some(svm) = position_svm {
            c[SLOT_POSITION] = position_cost(svm, b, img)?;
        }
        c[size_k] = size_cost(b, img);
        for (slot, table, cats) in &detector_slots {
            if let Some(v) = detector_cost(table, cats, &phrase.image_id, i, cfg.prob_floor) {
                c[*slot] = v;
            }
        }
        costs.push(c);
    }
    Ok(SpcRow {
        phrase_id: phrase.phrase_id.clone(),
        costs,
        available,
    })
}

/// Training material for a position classifier: one ground-truth box and
/// the image's proposals, from which negatives are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionExample {
    pub phrase_type: PhraseType,
    pub image: ImageSize,
    pub gt: BoundingBox,
    pub proposals: Vec<BoundingBox>,
}

/// Train one position classifier per phrase type. Negatives are proposals
/// with IOU < 0.5 against the ground truth, `neg_ratio` per positive,
/// drawn with a seeded generator. Types lacking either class are skipped.
pub fn train_position_svms(
    examples: &[PositionExample],
    svm: &SvmConfig,
    neg_ratio: usize,
    seed: u64,
) -> Result<PositionSvms> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_type: BTreeMap<PhraseType, (Vec<Vec<f64>>, Vec<Vec<f64>>)> = BTreeMap::new();
    for ex in examples {
        let (pos, neg) = per_type.entry(ex.phrase_type).or_default();
        pos.push(position_feature(&ex.gt, ex.image).to_vec());
        let mut pool: Vec<&BoundingBox> = ex
            .proposals
            .iter()
            .filter(|p| iou(p, &ex.gt) < 0.5)
            .collect();
        pool.shuffle(&mut rng);
        for p in pool.into_iter().take(neg_ratio) {
            neg.push(position_feature(p, ex.image).to_vec());
        }
    }
    let mut out = PositionSvms::new();
    for (ty, (pos, neg)) in per_type {
        if pos.is_empty() || neg.is_empty() {
            log::warn!("position classifier for {} skipped: no negatives", ty.as_str());
            continue;
        }
        out.insert(ty, train_rbf_svm(&pos, &neg, svm)?);
    }
    Ok(out)
}
