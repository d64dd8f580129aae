//! Phrase-pair cue costs from per-relation spatial classifiers.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assets;
use crate::classify::{train_rbf_svm, RbfSvmModel, SvmConfig};
use crate::cues::CueDictionary;
use crate::error::{Error, Result};
use crate::geometry::{iou, spatial_pair_feature, BoundingBox};
use crate::lingcue::{RelationKind, RelationTuple};
use crate::phrase::EntityMention;

/// Number of pairwise cue slots: verb, preposition, attachment.
pub const PPC_SLOTS: usize = 3;
pub const PAIR_FEATURE_DIM: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PairClassifierKey {
    pub kind: RelationKind,
    pub left: String,
    /// Empty for attachment keys.
    pub rel: String,
    pub right: String,
}

impl PairClassifierKey {
    pub fn new(kind: RelationKind, left: &str, rel: &str, right: &str) -> Self {
        let rel = if kind == RelationKind::Attachment { "" } else { rel };
        Self {
            kind,
            left: left.to_string(),
            rel: rel.to_string(),
            right: right.to_string(),
        }
    }

    fn file_stem(&self) -> String {
        let kind = match self.kind {
            RelationKind::Verb => "verb",
            RelationKind::Preposition => "prep",
            RelationKind::Attachment => "attach",
        };
        let clean = |s: &str| {
            s.chars()
                .map(|c| if c.is_ascii_alphanumeric() || c == '+' { c } else { '_' })
                .collect::<String>()
        };
        format!("{kind}-{}-{}-{}", clean(&self.left), clean(&self.rel), clean(&self.right))
    }
}

impl fmt::Display for PairClassifierKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            RelationKind::Attachment => write!(f, "{}-{}", self.left, self.right),
            _ => write!(f, "{}-{}-{}", self.left, self.rel, self.right),
        }
    }
}

/// Relation-word normalization for classifier keys.
#[derive(Debug, Clone, PartialEq)]
pub struct PairLexicon {
    pub verbs: CueDictionary,
    pub prepositions: BTreeSet<String>,
}

impl PairLexicon {
    pub fn shipped() -> Result<Self> {
        let prepositions: BTreeSet<String> = assets::parse_tsv(assets::PREPOSITIONS, "prepositions.tsv", 1)?
            .into_iter()
            .map(|r| r[0].to_lowercase())
            .collect();
        if prepositions.len() != assets::counts::PREPOSITIONS {
            return Err(Error::DictionaryCount {
                name: "prepositions.tsv".into(),
                expected: assets::counts::PREPOSITIONS,
                found: prepositions.len(),
            });
        }
        Ok(Self {
            verbs: CueDictionary::from_tsv(assets::VERBS, "verbs.tsv")?,
            prepositions,
        })
    }

    fn relation(&self, kind: RelationKind, words: &[String]) -> Option<String> {
        words.iter().find_map(|w| {
            let w = w.to_lowercase();
            match kind {
                RelationKind::Verb => self.verbs.categories(&w).first().cloned(),
                RelationKind::Preposition => self.prepositions.contains(&w).then_some(w),
                RelationKind::Attachment => Some(String::new()),
            }
        })
    }
}

/// Classifier key of a tuple, or `None` when its relation word is not in
/// the lexicon. People-to-clothing/bodyparts pairs always key the attachment
/// classifier.
pub fn pair_key(
    tuple: &RelationTuple,
    entities: &[EntityMention],
    lexicon: &PairLexicon,
) -> Option<PairClassifierKey> {
    let find = |id: Option<&str>| id.and_then(|id| entities.iter().find(|e| e.phrase_id == id));
    let left = find(tuple.left.entity_id())?;
    let right = find(tuple.right.entity_id())?;
    let attachment = tuple.kind == RelationKind::Attachment
        || (left.phrase_type == crate::phrase::PhraseType::People && right.phrase_type.is_attachable());
    let kind = if attachment {
        RelationKind::Attachment
    } else {
        tuple.kind
    };
    let rel = lexicon.relation(kind, &tuple.rel_words)?;
    Some(PairClassifierKey::new(
        kind,
        &left.pair_category(),
        &rel,
        &right.pair_category(),
    ))
}

/// Classifier keys enumerated in the shipped pair dictionaries.
pub fn shipped_pair_keys() -> Result<Vec<PairClassifierKey>> {
    let mut keys = Vec::new();
    let tables = [
        (RelationKind::Verb, assets::VERB_PAIRS, "verb_pairs.tsv", 3, assets::counts::VERB_PAIRS),
        (
            RelationKind::Preposition,
            assets::PREPOSITION_PAIRS,
            "preposition_pairs.tsv",
            3,
            assets::counts::PREPOSITION_PAIRS,
        ),
        (
            RelationKind::Attachment,
            assets::ATTACHMENT_PAIRS,
            "attachment_pairs.tsv",
            2,
            assets::counts::ATTACHMENT_PAIRS,
        ),
    ];
    for (kind, text, name, cols, expected) in tables {
        let rows = assets::parse_tsv(text, name, cols)?;
        if rows.len() != expected {
            return Err(Error::DictionaryCount {
                name: name.into(),
                expected,
                found: rows.len(),
            });
        }
        for r in rows {
            keys.push(if cols == 3 {
                PairClassifierKey::new(kind, &r[0], &r[1], &r[2])
            } else {
                PairClassifierKey::new(kind, &r[0], "", &r[1])
            });
        }
    }
    Ok(keys)
}

/// Spatial layout of the pair followed by the two phrases' SPC scores.
pub fn pair_feature(b: &BoundingBox, b2: &BoundingBox, s_left: f64, s_right: f64) -> [f64; 6] {
    let s = spatial_pair_feature(b, b2);
    [s[0], s[1], s[2], s[3], s_left, s_right]
}

/// A scored candidate box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub score: f64,
}

/// One annotated relation instance for bank training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTrainingExample {
    pub key: PairClassifierKey,
    pub gt_left: BoundingBox,
    pub gt_right: BoundingBox,
    pub left: Vec<ScoredBox>,
    pub right: Vec<ScoredBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairBankConfig {
    pub min_count: usize,
    pub neg_ratio: usize,
    pub svm: SvmConfig,
    pub seed: u64,
}

impl Default for PairBankConfig {
    fn default() -> Self {
        Self {
            min_count: 30,
            neg_ratio: 3,
            svm: SvmConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PairBankReport {
    pub trained: Vec<(PairClassifierKey, usize)>,
    pub skipped: Vec<(PairClassifierKey, usize)>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairModelBank {
    pub models: BTreeMap<PairClassifierKey, RbfSvmModel>,
    pub min_count: usize,
}

#[derive(Serialize, Deserialize)]
struct BankIndex {
    min_count: usize,
    entries: Vec<BankIndexEntry>,
}

#[derive(Serialize, Deserialize)]
struct BankIndexEntry {
    key: PairClassifierKey,
    file: String,
}

fn best_match(cands: &[ScoredBox], gt: &BoundingBox) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in cands.iter().enumerate() {
        let v = iou(&c.bbox, gt);
        if v >= 0.5 && best.is_none_or(|(_, bv)| v > bv) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Train one classifier per key seen at least `min_count` times.
///
/// Positives pair the best-overlapping candidate (IOU >= 0.5) on each side;
/// negatives are random candidate pairs where either side has IOU < 0.5.
pub fn train_pair_bank(
    examples: &[PairTrainingExample],
    cfg: &PairBankConfig,
) -> Result<(PairModelBank, PairBankReport)> {
    let mut groups: BTreeMap<&PairClassifierKey, Vec<&PairTrainingExample>> = BTreeMap::new();
    for ex in examples {
        groups.entry(&ex.key).or_default().push(ex);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut bank = PairModelBank {
        models: BTreeMap::new(),
        min_count: cfg.min_count,
    };
    let mut report = PairBankReport::default();
    for (key, group) in groups {
        if group.len() < cfg.min_count {
            report.skipped.push((key.clone(), group.len()));
            continue;
        }
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for ex in group.iter() {
            let (Some(i), Some(j)) = (best_match(&ex.left, &ex.gt_left), best_match(&ex.right, &ex.gt_right)) else {
                continue;
            };
            let (l, r) = (&ex.left[i], &ex.right[j]);
            pos.push(pair_feature(&l.bbox, &r.bbox, l.score, r.score).to_vec());
            let mut pool: Vec<(usize, usize)> = Vec::new();
            for (a, la) in ex.left.iter().enumerate() {
                for (b, rb) in ex.right.iter().enumerate() {
                    if iou(&la.bbox, &ex.gt_left) < 0.5 || iou(&rb.bbox, &ex.gt_right) < 0.5 {
                        pool.push((a, b));
                    }
                }
            }
            for &(a, b) in pool.choose_multiple(&mut rng, cfg.neg_ratio) {
                let (la, rb) = (&ex.left[a], &ex.right[b]);
                neg.push(pair_feature(&la.bbox, &rb.bbox, la.score, rb.score).to_vec());
            }
        }
        if pos.is_empty() || neg.is_empty() {
            log::warn!("pair classifier {key} skipped: {} positives, {} negatives", pos.len(), neg.len());
            report.skipped.push((key.clone(), group.len()));
            continue;
        }
        let svm = train_rbf_svm(&pos, &neg, &cfg.svm)?;
        bank.models.insert(key.clone(), svm);
        report.trained.push((key.clone(), group.len()));
    }
    Ok((bank, report))
}

impl PairModelBank {
    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn get(&self, key: &PairClassifierKey) -> Option<&RbfSvmModel> {
        self.models.get(key)
    }

    /// Write `index.json` plus one JSON file per classifier into `dir`.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut used: HashMap<String, usize> = HashMap::new();
        let mut entries = Vec::new();
        for (key, model) in &self.models {
            let stem = key.file_stem();
            let n = used.entry(stem.clone()).or_insert(0);
            let file = if *n == 0 {
                format!("{stem}.json")
            } else {
                format!("{stem}.{n}.json")
            };
            *n += 1;
            let path = dir.join(&file);
            std::fs::write(&path, serde_json::to_vec(model)?).map_err(|e| Error::io(&path, e))?;
            entries.push(BankIndexEntry {
                key: key.clone(),
                file,
            });
        }
        let index = BankIndex {
            min_count: self.min_count,
            entries,
        };
        let path = dir.join("index.json");
        std::fs::write(&path, serde_json::to_vec_pretty(&index)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let path = dir.join("index.json");
        let text = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let index: BankIndex = serde_json::from_slice(&text)?;
        let mut models = BTreeMap::new();
        for e in index.entries {
            let p = dir.join(&e.file);
            let bytes = std::fs::read(&p).map_err(|err| Error::io(&p, err))?;
            let m: RbfSvmModel = serde_json::from_slice(&bytes)?;
            m.validate(Some(PAIR_FEATURE_DIM))?;
            models.insert(e.key, m);
        }
        Ok(Self {
            models,
            min_count: index.min_count,
        })
    }
}

/// `-ln p` of the key's classifier on the pair feature; `None` when the
/// bank has no classifier for the key.
pub fn ppc_cost(
    bank: &PairModelBank,
    key: Option<&PairClassifierKey>,
    b: &BoundingBox,
    b2: &BoundingBox,
    s_left: f64,
    s_right: f64,
) -> Result<Option<f64>> {
    let Some(model) = key.and_then(|k| bank.get(k)) else {
        return Ok(None);
    };
    let p = model.predict_prob(&pair_feature(b, b2, s_left, s_right))?;
    Ok(Some(-p.ln()))
}

/// Cost of every (left, right) candidate combination, row-major over the
/// left candidates.
pub fn pair_cost_matrix(
    bank: &PairModelBank,
    key: Option<&PairClassifierKey>,
    left: &[ScoredBox],
    right: &[ScoredBox],
) -> Result<Option<Vec<f64>>> {
    let Some(model) = key.and_then(|k| bank.get(k)) else {
        return Ok(None);
    };
    let mut out = Vec::with_capacity(left.len() * right.len());
    for l in left {
        for r in right {
            let p = model.predict_prob(&pair_feature(&l.bbox, &r.bbox, l.score, r.score))?;
            out.push(-p.ln());
        }
    }
    Ok(Some(out))
}
