//! Dataset I/O, evaluation metrics, model bundles and synthetic data.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classify::{RankSvmModel, RbfSvmModel};
use crate::cues::{SpcRow, SPC_SLOTS, SLOT_CCA};
use crate::embed::FeatureVector;
use crate::error::{Error, Result};
use crate::geometry::{iou, spatial_pair_feature, union_hull, BoundingBox, ImageSize};
use crate::infer::{GroundingImage, GroundingPhrase, GroundingRelation};
use crate::lingcue::{parse_ptb, PronounLink, RelationKind, RelationTuple};
use crate::phrase::{EntityMention, PhraseType, TokenSpan};
use crate::ppc::{PairClassifierKey, PairModelBank, PAIR_FEATURE_DIM, PPC_SLOTS};
use crate::vrd::{RegionFeatures, RelationshipCandidate, VrdGroundTruth, VRD_FEATURE_DIM};

const CORRECT_IOU: f64 = 0.5;

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| Error::io(path, e))
}

/// Parse JSON Lines text. Blank lines are skipped; `name` labels errors.
pub fn parse_jsonl<T: DeserializeOwned>(text: &str, name: &str) -> Result<Vec<T>> {
    read_jsonl_from(text.as_bytes(), name)
}

fn read_jsonl_from<T: DeserializeOwned, R: Read>(reader: R, name: &str) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| Error::io(name, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| Error::Format {
            path: name.to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    read_jsonl_from(open(path)?, &path.display().to_string())
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> Result<String> {
    let mut s = String::new();
    for it in items {
        s.push_str(&serde_json::to_string(it)?);
        s.push('\n');
    }
    Ok(s)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(create(path)?);
    for it in items {
        serde_json::to_writer(&mut w, it)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(open(path)?))?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// An annotated entity mention of a sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceEntity {
    pub phrase_id: String,
    pub span: TokenSpan,
    pub phrase_type: PhraseType,
    #[serde(default)]
    pub head_tokens: Vec<String>,
    #[serde(default)]
    pub gt_boxes: Vec<BoundingBox>,
}

impl SentenceEntity {
    pub fn mention(&self) -> EntityMention {
        EntityMention {
            phrase_id: self.phrase_id.clone(),
            span: self.span,
            phrase_type: self.phrase_type,
            head_tokens: self.head_tokens.clone(),
        }
    }
}

/// A caption with its parse and entity annotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub image_id: String,
    pub sentence_id: String,
    pub tokens: Vec<String>,
    pub parse: String,
    pub entities: Vec<SentenceEntity>,
}

impl SentenceRecord {
    /// Entity spans must lie within the tokens and the parse leaves must
    /// equal the tokens.
    pub fn validate(&self) -> Result<()> {
        for e in &self.entities {
            if e.span.start >= e.span.end || e.span.end > self.tokens.len() {
                return Err(Error::InvalidArgument(format!(
                    "entity {} span {} outside {} tokens in sentence {}",
                    e.phrase_id,
                    e.span,
                    self.tokens.len(),
                    self.sentence_id
                )));
            }
        }
        let tree = parse_ptb(&self.parse)?;
        if tree.tokens() != self.tokens.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(Error::InvalidArgument(format!(
                "parse leaves differ from tokens in sentence {}",
                self.sentence_id
            )));
        }
        Ok(())
    }

    pub fn mentions(&self) -> Vec<EntityMention> {
        self.entities.iter().map(SentenceEntity::mention).collect()
    }
}

/// One dense vector of a feature table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorRecord {
    pub key: String,
    pub vec: Vec<f64>,
}

pub type VectorTable = BTreeMap<String, FeatureVector>;

fn table_from_records(records: Vec<VectorRecord>, name: &str) -> Result<VectorTable> {
    let mut out = VectorTable::new();
    let mut dim = None;
    for r in records {
        if *dim.get_or_insert(r.vec.len()) != r.vec.len() {
            return Err(Error::Format {
                path: name.to_string(),
                line: out.len() + 1,
                message: format!("vector {} has dimension {}, expected {}", r.key, r.vec.len(), dim.unwrap()),
            });
        }
        let key = r.key.clone();
        if out.insert(r.key, FeatureVector::new(r.vec)?).is_some() {
            return Err(Error::InvalidArgument(format!("duplicate vector key {key} in {name}")));
        }
    }
    Ok(out)
}

const F32_MAGIC: &[u8; 8] = b"GKF32\0\0\x01";

fn keys_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".keys");
    PathBuf::from(p)
}

/// Write a table as raw little-endian f32 values with a header (magic, dim
/// as u32, count as u64) and the keys, one per line, in `<path>.keys`.
pub fn write_f32_table(path: &Path, table: &VectorTable) -> Result<()> {
    let dim = table.values().next().map_or(0, FeatureVector::dim);
    let mut w = BufWriter::new(create(path)?);
    let io = |e| Error::io(path, e);
    w.write_all(F32_MAGIC).map_err(io)?;
    w.write_all(&(dim as u32).to_le_bytes()).map_err(io)?;
    w.write_all(&(table.len() as u64).to_le_bytes()).map_err(io)?;
    for v in table.values() {
        if v.dim() != dim {
            return Err(Error::DimensionMismatch {
                what: "vector table",
                expected: dim,
                got: v.dim(),
            });
        }
        for x in v.values() {
            w.write_all(&(*x as f32).to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)?;
    let kp = keys_path(path);
    let mut keys = String::new();
    for k in table.keys() {
        keys.push_str(k);
        keys.push('\n');
    }
    std::fs::write(&kp, keys).map_err(|e| Error::io(&kp, e))
}

pub fn read_f32_table(path: &Path) -> Result<VectorTable> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |message: String| Error::Format {
        path: path.display().to_string(),
        line: 0,
        message,
    };
    if bytes.len() < 20 || &bytes[..8] != F32_MAGIC {
        return Err(bad("missing f32 table header".into()));
    }
    let dim = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let count = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = &bytes[20..];
    if body.len() != dim * count * 4 {
        return Err(bad(format!("expected {count} vectors of dimension {dim}")));
    }
    let kp = keys_path(path);
    let keys_text = std::fs::read_to_string(&kp).map_err(|e| Error::io(&kp, e))?;
    let keys: Vec<&str> = keys_text.lines().collect();
    if keys.len() != count {
        return Err(Error::LengthMismatch {
            what: "f32 table keys/vectors",
            left: keys.len(),
            right: count,
        });
    }
    let records = keys
        .iter()
        .enumerate()
        .map(|(i, k)| VectorRecord {
            key: k.to_string(),
            vec: body[i * dim * 4..(i + 1) * dim * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect(),
        })
        .collect();
    table_from_records(records, &path.display().to_string())
}

/// Read a vector table, either JSONL records or an f32 sidecar file.
pub fn read_vector_table(path: &Path) -> Result<VectorTable> {
    let mut head = [0u8; 8];
    let n = open(path)?.read(&mut head).map_err(|e| Error::io(path, e))?;
    if n == 8 && &head == F32_MAGIC {
        return read_f32_table(path);
    }
    table_from_records(read_jsonl(path)?, &path.display().to_string())
}

pub fn write_vector_table(path: &Path, table: &VectorTable) -> Result<()> {
    let records: Vec<VectorRecord> = table
        .iter()
        .map(|(k, v)| VectorRecord {
            key: k.clone(),
            vec: v.values().to_vec(),
        })
        .collect();
    write_jsonl(path, &records)
}

/// Split `image/box` keys into per-image region features.
pub fn region_features_by_image(table: &VectorTable) -> Result<HashMap<String, RegionFeatures>> {
    let mut out: HashMap<String, RegionFeatures> = HashMap::new();
    for (k, v) in table {
        let (image, region) = k
            .rsplit_once('/')
            .ok_or_else(|| Error::InvalidArgument(format!("region key {k:?} lacks an image prefix")))?;
        out.entry(image.to_string())
            .or_default()
            .insert(region.to_string(), v.clone());
    }
    Ok(out)
}

/// Region proposals of one image; feature keys are `image_id/index`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalRecord {
    pub image_id: String,
    pub width: f64,
    pub height: f64,
    pub boxes: Vec<BoundingBox>,
}

/// Relation tuples and pronoun links found in one sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TupleRecord {
    pub image_id: String,
    pub sentence_id: String,
    pub tuples: Vec<RelationTuple>,
    /// Pair classifier of each tuple, if any.
    pub pair_keys: Vec<Option<PairClassifierKey>>,
    pub links: Vec<PronounLink>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

/// One paired training row for CCA.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcaPairRecord {
    pub phrase: Vec<f64>,
    pub region: Vec<f64>,
}

/// Ranked relationship candidates of one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredImageRecord {
    pub image_id: String,
    pub candidates: Vec<RelationshipCandidate>,
}

/// The box chosen for one phrase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub image_id: String,
    pub phrase_id: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
}

/// Annotated boxes of one phrase; the target is their union.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRecord {
    pub image_id: String,
    pub phrase_id: String,
    pub phrase_type: PhraseType,
    #[serde(default)]
    pub gt_boxes: Vec<BoundingBox>,
}

/// Candidate boxes of one phrase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub image_id: String,
    pub phrase_id: String,
    pub boxes: Vec<BoundingBox>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub correct: usize,
    pub total: usize,
}

impl Counts {
    pub fn ratio(&self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }

    fn add(&mut self, ok: bool) {
        self.total += 1;
        self.correct += usize::from(ok);
    }
}

/// Overall and per-type counts of a localization metric.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    pub overall: Counts,
    pub per_type: BTreeMap<PhraseType, Counts>,
}

impl RecallReport {
    fn add(&mut self, t: PhraseType, ok: bool) {
        self.overall.add(ok);
        self.per_type.entry(t).or_default().add(ok);
    }

    /// Plain-text table with one row per phrase type and an overall row.
    pub fn table(&self) -> String {
        let pct = |c: &Counts| c.ratio().map_or("-".to_string(), |r| format!("{:.2}", 100.0 * r));
        let mut s = format!("{:<12} {:>8} {:>8} {:>8}\n", "type", "correct", "total", "recall");
        for t in PhraseType::ALL {
            let c = self.per_type.get(&t).copied().unwrap_or_default();
            s.push_str(&format!("{:<12} {:>8} {:>8} {:>8}\n", t.as_str(), c.correct, c.total, pct(&c)));
        }
        let c = &self.overall;
        s.push_str(&format!("{:<12} {:>8} {:>8} {:>8}\n", "overall", c.correct, c.total, pct(c)));
        s
    }
}

fn keyed<'a, T>(
    items: &'a [T],
    key: impl Fn(&'a T) -> (&'a str, &'a str),
    what: &str,
) -> Result<HashMap<(&'a str, &'a str), &'a T>> {
    let mut out = HashMap::new();
    for it in items {
        let k = key(it);
        if out.insert(k, it).is_some() {
            return Err(Error::InvalidArgument(format!("duplicate {what} for phrase {}/{}", k.0, k.1)));
        }
    }
    Ok(out)
}

/// Fraction of phrases whose chosen box has IOU >= 0.5 with the union of
/// its ground-truth boxes. Phrases without ground truth are excluded; a
/// phrase without a prediction counts as a miss.
pub fn recall_at_1(preds: &[PredictionRecord], gt: &[GroundTruthRecord]) -> Result<RecallReport> {
    let preds = keyed(preds, |p| (p.image_id.as_str(), p.phrase_id.as_str()), "prediction")?;
    let mut report = RecallReport::default();
    for g in gt {
        let Ok(target) = union_hull(&g.gt_boxes) else {
            continue;
        };
        let ok = preds
            .get(&(g.image_id.as_str(), g.phrase_id.as_str()))
            .is_some_and(|p| iou(&p.bbox, &target) >= CORRECT_IOU);
        report.add(g.phrase_type, ok);
    }
    Ok(report)
}

/// Fraction of phrases with at least one candidate at IOU >= 0.5.
pub fn upper_bound(cands: &[CandidateRecord], gt: &[GroundTruthRecord]) -> Result<RecallReport> {
    let cands = keyed(cands, |c| (c.image_id.as_str(), c.phrase_id.as_str()), "candidate set")?;
    let mut report = RecallReport::default();
    for g in gt {
        let Ok(target) = union_hull(&g.gt_boxes) else {
            continue;
        };
        let ok = cands
            .get(&(g.image_id.as_str(), g.phrase_id.as_str()))
            .is_some_and(|c| c.boxes.iter().any(|b| iou(b, &target) >= CORRECT_IOU));
        report.add(g.phrase_type, ok);
    }
    Ok(report)
}

pub fn gt_records(images: &[GroundingImage]) -> Vec<GroundTruthRecord> {
    images
        .iter()
        .flat_map(|img| {
            img.phrases.iter().map(|p| GroundTruthRecord {
                image_id: img.image_id.clone(),
                phrase_id: p.phrase_id.clone(),
                phrase_type: p.phrase_type,
                gt_boxes: p.gt.into_iter().collect(),
            })
        })
        .collect()
}

pub fn candidate_records(images: &[GroundingImage]) -> Vec<CandidateRecord> {
    images
        .iter()
        .flat_map(|img| {
            img.phrases.iter().map(|p| CandidateRecord {
                image_id: img.image_id.clone(),
                phrase_id: p.phrase_id.clone(),
                boxes: p.candidates.clone(),
            })
        })
        .collect()
}

/// Prediction records from chosen candidate indices, one list per image.
pub fn prediction_records(images: &[GroundingImage], chosen: &[Vec<usize>]) -> Result<Vec<PredictionRecord>> {
    if images.len() != chosen.len() {
        return Err(Error::LengthMismatch {
            what: "images/assignments",
            left: images.len(),
            right: chosen.len(),
        });
    }
    let mut out = Vec::new();
    for (img, ch) in images.iter().zip(chosen) {
        if ch.len() != img.phrases.len() {
            return Err(Error::LengthMismatch {
                what: "phrases/assignment",
                left: img.phrases.len(),
                right: ch.len(),
            });
        }
        for (p, &k) in img.phrases.iter().zip(ch) {
            let bbox = *p.candidates.get(k).ok_or_else(|| {
                Error::InvalidArgument(format!("candidate {k} out of range for phrase {}", p.phrase_id))
            })?;
            out.push(PredictionRecord {
                image_id: img.image_id.clone(),
                phrase_id: p.phrase_id.clone(),
                bbox,
            });
        }
    }
    Ok(out)
}

/// Configuration of the synthetic grounding generator.
///
/// Cue 0 (CCA) costs `1 - IOU(candidate, gt)` plus Gaussian noise; the other
/// thirteen cues are uniform noise. Each phrase gets one near-copy of its
/// ground truth, some near misses and random boxes. A relation's pairwise
/// cost is the distance between the candidate pair's layout and the ground
/// truth pair's layout, capped at 1, plus Gaussian noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub images: usize,
    pub phrases_per_image: usize,
    pub candidates_per_phrase: usize,
    pub noise: f64,
    /// Probability that a phrase pair of an image is related.
    pub relation_density: f64,
    pub pair_noise: f64,
    /// Probability that a phrase gets a wrong candidate whose cue 0 cost
    /// undercuts the correct one by `decoy_margin`.
    pub decoy_rate: f64,
    pub decoy_margin: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            images: 200,
            phrases_per_image: 2,
            candidates_per_phrase: 20,
            noise: 0.05,
            relation_density: 0.5,
            pair_noise: 0.05,
            decoy_rate: 0.0,
            decoy_margin: 0.15,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("synthetic spec: {m}")));
        if self.images == 0 || self.phrases_per_image == 0 {
            return bad("needs at least one image and one phrase per image");
        }
        if self.candidates_per_phrase < 2 {
            return bad("needs at least two candidates per phrase");
        }
        for (name, v) in [
            ("noise", self.noise),
            ("pair_noise", self.pair_noise),
            ("decoy_margin", self.decoy_margin),
        ] {
            if !v.is_finite() || v < 0.0 {
                return bad(&format!("{name} must be finite and non-negative"));
            }
        }
        for (name, v) in [("relation_density", self.relation_density), ("decoy_rate", self.decoy_rate)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(&format!("{name} must lie in [0, 1]"));
            }
        }
        Ok(())
    }
}

const SYNTH_IMAGE: (f64, f64) = (500.0, 400.0);

fn random_box(rng: &mut ChaCha8Rng, img: ImageSize) -> BoundingBox {
    let w = rng.random_range(60.0..200.0);
    let h = rng.random_range(60.0..200.0);
    let x = rng.random_range(0.0..img.width - w);
    let y = rng.random_range(0.0..img.height - h);
    BoundingBox::new(x, y, w, h).expect("positive size")
}

fn jittered(rng: &mut ChaCha8Rng, b: &BoundingBox, shift: f64) -> BoundingBox {
    let dx = rng.random_range(-shift..=shift) * b.w;
    let dy = rng.random_range(-shift..=shift) * b.h;
    let sw = 1.0 + rng.random_range(-shift / 2.0..=shift / 2.0);
    let sh = 1.0 + rng.random_range(-shift / 2.0..=shift / 2.0);
    BoundingBox::new(b.x + dx, b.y + dy, b.w * sw, b.h * sh).expect("positive size")
}

fn sample_until(
    rng: &mut ChaCha8Rng,
    gt: &BoundingBox,
    mut draw: impl FnMut(&mut ChaCha8Rng) -> BoundingBox,
    accept: impl Fn(f64) -> bool,
) -> BoundingBox {
    let mut last = draw(rng);
    for _ in 0..1000 {
        if accept(iou(&last, gt)) {
            return last;
        }
        last = draw(rng);
    }
    last
}

/// A synthetic grounding dataset with known oracle weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthDataset {
    pub spec: SynthSpec,
    pub seed: u64,
    pub images: Vec<GroundingImage>,
}

impl SynthDataset {
    /// One-hot weights on the informative cue.
    pub fn oracle_ws() -> [f64; SPC_SLOTS] {
        let mut w = [0.0; SPC_SLOTS];
        w[SLOT_CCA] = 1.0;
        w
    }
}

pub fn synth_grounding_dataset(spec: &SynthSpec, seed: u64) -> Result<SynthDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let img = ImageSize::new(SYNTH_IMAGE.0, SYNTH_IMAGE.1)?;
    let cue = Normal::new(0.0, spec.noise).expect("validated");
    let pair = Normal::new(0.0, spec.pair_noise).expect("validated");
    let m = spec.candidates_per_phrase;
    let mut images = Vec::with_capacity(spec.images);
    for n in 0..spec.images {
        let image_id = format!("synth{n:05}");
        let mut phrases = Vec::with_capacity(spec.phrases_per_image);
        for k in 0..spec.phrases_per_image {
            let gt = random_box(&mut rng, img);
            let near = (m - 1) / 2;
            let mut cands = vec![sample_until(&mut rng, &gt, |r| jittered(r, &gt, 0.05), |v| v >= 0.8)];
            for _ in 0..near {
                cands.push(sample_until(&mut rng, &gt, |r| jittered(r, &gt, 0.7), |v| (0.2..=0.45).contains(&v)));
            }
            while cands.len() < m {
                cands.push(sample_until(&mut rng, &gt, |r| random_box(r, img), |v| v < CORRECT_IOU));
            }
            let mut cca: Vec<f64> = cands.iter().map(|c| 1.0 - iou(c, &gt)).collect();
            if rng.random_bool(spec.decoy_rate) {
                // the last candidate is a random wrong box; make it look best
                cca[m - 1] = cca[0] - spec.decoy_margin;
            }
            let mut rows: Vec<[f64; SPC_SLOTS]> = cca
                .iter()
                .map(|&c0| {
                    let mut row = [0.0; SPC_SLOTS];
                    row[SLOT_CCA] = c0 + cue.sample(&mut rng);
                    for v in row.iter_mut().skip(1) {
                        *v = rng.random_range(0.0..1.0);
                    }
                    row
                })
                .collect();
            let mut order: Vec<usize> = (0..m).collect();
            order.shuffle(&mut rng);
            let candidates = order.iter().map(|&i| cands[i]).collect();
            rows = order.iter().map(|&i| rows[i]).collect();
            let phrase_type = PhraseType::ALL[rng.random_range(0..PhraseType::ALL.len())];
            phrases.push(GroundingPhrase {
                phrase_id: format!("{image_id}_p{k}"),
                phrase_type,
                candidates,
                spc: SpcRow {
                    phrase_id: format!("{image_id}_p{k}"),
                    costs: rows,
                    available: [true; SPC_SLOTS],
                },
                gt: Some(gt),
            });
        }
        let mut relations = Vec::new();
        for i in 0..phrases.len() {
            for j in i + 1..phrases.len() {
                if !rng.random_bool(spec.relation_density) {
                    continue;
                }
                let kind = RelationKind::ALL[rng.random_range(0..RelationKind::ALL.len())];
                let (gi, gj) = (phrases[i].gt.expect("set"), phrases[j].gt.expect("set"));
                let planted = spatial_pair_feature(&gi, &gj);
                let mut costs = Vec::with_capacity(m * m);
                for a in &phrases[i].candidates {
                    for b in &phrases[j].candidates {
                        let f = spatial_pair_feature(a, b);
                        let d = f.iter().zip(&planted).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                        costs.push((d.min(1.0) + pair.sample(&mut rng)).max(0.0));
                    }
                }
                relations.push(GroundingRelation {
                    left: i,
                    right: j,
                    kind,
                    costs: Some(costs),
                });
            }
        }
        images.push(GroundingImage {
            image_id,
            phrases,
            relations,
        });
    }
    Ok(SynthDataset {
        spec: *spec,
        seed,
        images,
    })
}

pub const BUNDLE_FORMAT: u32 = 1;

/// Learned weights with the models they were learned against. Large
/// components are referenced by path, relative to the bundle's directory
/// unless absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedModelBundle {
    pub format: u32,
    pub crate_version: String,
    pub ws: Vec<f64>,
    pub wq: Vec<f64>,
    #[serde(default)]
    pub position_svms: BTreeMap<PhraseType, RbfSvmModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_bank: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cca: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank_svm: Option<RankSvmModel>,
    pub config_fingerprint: String,
}

impl WeightedModelBundle {
    pub fn new(ws: Vec<f64>, wq: Vec<f64>, config_fingerprint: String) -> Result<Self> {
        let b = Self {
            format: BUNDLE_FORMAT,
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            ws,
            wq,
            position_svms: BTreeMap::new(),
            pair_bank: None,
            cca: None,
            rank_svm: None,
            config_fingerprint,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != BUNDLE_FORMAT {
            return Err(Error::InvalidArgument(format!(
                "bundle format {} not supported (expected {BUNDLE_FORMAT})",
                self.format
            )));
        }
        let dim = |what, v: &[f64], want| {
            if v.len() != want {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: want,
                    got: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(what));
            }
            Ok(())
        };
        dim("bundle spc weights", &self.ws, SPC_SLOTS)?;
        dim("bundle ppc weights", &self.wq, PPC_SLOTS)?;
        for m in self.position_svms.values() {
            m.validate(Some(4))?;
        }
        if let Some(r) = &self.rank_svm {
            r.validate(Some(VRD_FEATURE_DIM))?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let b: Self = read_json(path)?;
        b.validate()?;
        Ok(b)
    }

    fn resolve(base: &Path, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    }

    /// Load the referenced pair bank; every classifier must take the
    /// 6-value pair feature.
    pub fn load_pair_bank(&self, bundle_dir: &Path) -> Result<Option<PairModelBank>> {
        let Some(p) = &self.pair_bank else {
            return Ok(None);
        };
        let bank = PairModelBank::load_dir(&Self::resolve(bundle_dir, p))?;
        for m in bank.models.values() {
            m.validate(Some(PAIR_FEATURE_DIM))?;
        }
        Ok(Some(bank))
    }

    pub fn cca_path(&self, bundle_dir: &Path) -> Option<PathBuf> {
        self.cca.as_deref().map(|p| Self::resolve(bundle_dir, p))
    }
}

/// Hex SHA-256 of a value's JSON serialization.
pub fn fingerprint<T: Serialize>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Distinct (subject, predicate, object) names of ground-truth relations.
pub fn triples_of(gt: &[VrdGroundTruth]) -> BTreeSet<(String, String, String)> {
    gt.iter().flat_map(|g| g.relations.iter().map(|r| r.triple())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::recall_objective_s;

    fn bb(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(x, y, w, h).unwrap()
    }

    fn gt(id: &str, t: PhraseType, b: &[BoundingBox]) -> GroundTruthRecord {
        GroundTruthRecord {
            image_id: "i".into(),
            phrase_id: id.into(),
            phrase_type: t,
            gt_boxes: b.to_vec(),
        }
    }

    fn pred(id: &str, b: BoundingBox) -> PredictionRecord {
        PredictionRecord {
            image_id: "i".into(),
            phrase_id: id.into(),
            bbox: b,
        }
    }

    #[test]
    fn recall_examples() {
        let a = bb(0.0, 0.0, 10.0, 10.0);
        let far = bb(100.0, 100.0, 10.0, 10.0);
        let g = vec![
            gt("p0", PhraseType::People, &[a]),
            gt("p1", PhraseType::People, &[a]),
            gt("p2", PhraseType::Scene, &[a]),
            gt("p3", PhraseType::Other, &[]),
        ];
        let all = recall_at_1(&[pred("p0", a), pred("p1", a), pred("p2", a)], &g).unwrap();
        assert_eq!(all.overall.ratio(), Some(1.0));
        let none = recall_at_1(&[pred("p0", far), pred("p1", far), pred("p2", far)], &g).unwrap();
        assert_eq!(none.overall.ratio(), Some(0.0));
        let two = recall_at_1(&[pred("p0", a), pred("p1", far), pred("p2", a)], &g).unwrap();
        assert!((two.overall.ratio().unwrap() - 0.6667).abs() < 1e-4);
        assert_eq!(two.per_type[&PhraseType::People], Counts { correct: 1, total: 2 });
        assert_eq!(two.per_type[&PhraseType::Scene], Counts { correct: 1, total: 1 });
        assert!(!two.per_type.contains_key(&PhraseType::Other));
        assert!(two.table().contains("overall"));
        assert!(recall_at_1(&[pred("p0", a), pred("p0", a)], &g).is_err());
    }

    #[test]
    fn gt_is_union_of_boxes() {
        let left = bb(0.0, 0.0, 10.0, 10.0);
        let right = bb(10.0, 0.0, 10.0, 10.0);
        let g = vec![gt("p", PhraseType::People, &[left, right])];
        assert_eq!(recall_at_1(&[pred("p", left)], &g).unwrap().overall.correct, 1);
        assert_eq!(recall_at_1(&[pred("p", bb(0.0, 0.0, 20.0, 10.0))], &g).unwrap().overall.correct, 1);
        assert_eq!(recall_at_1(&[pred("p", bb(0.0, 0.0, 9.0, 10.0))], &g).unwrap().overall.correct, 0);
    }

    #[test]
    fn upper_bound_examples() {
        let a = bb(0.0, 0.0, 10.0, 10.0);
        let g = vec![gt("p0", PhraseType::People, &[a]), gt("p1", PhraseType::Animals, &[a])];
        let c = vec![
            CandidateRecord {
                image_id: "i".into(),
                phrase_id: "p0".into(),
                boxes: vec![bb(50.0, 50.0, 5.0, 5.0), a],
            },
            CandidateRecord {
                image_id: "i".into(),
                phrase_id: "p1".into(),
                boxes: vec![],
            },
        ];
        let ub = upper_bound(&c, &g).unwrap();
        assert_eq!(ub.overall, Counts { correct: 1, total: 2 });
    }

    #[test]
    fn synth_properties() {
        let spec = SynthSpec {
            images: 30,
            noise: 0.0,
            ..SynthSpec::default()
        };
        let d = synth_grounding_dataset(&spec, 4).unwrap();
        for img in &d.images {
            img.validate().unwrap();
        }
        let n = recall_objective_s(&SynthDataset::oracle_ws(), &d.images).unwrap();
        assert_eq!(n, 60);
        let again = synth_grounding_dataset(&spec, 4).unwrap();
        assert_eq!(serde_json::to_vec(&d).unwrap(), serde_json::to_vec(&again).unwrap());
        let other = synth_grounding_dataset(&spec, 5).unwrap();
        assert_ne!(d, other);
        let empty = synth_grounding_dataset(
            &SynthSpec {
                relation_density: 0.0,
                ..spec
            },
            4,
        )
        .unwrap();
        assert!(empty.images.iter().all(|i| i.relations.is_empty()));
        assert!(synth_grounding_dataset(
            &SynthSpec {
                candidates_per_phrase: 1,
                ..spec
            },
            0
        )
        .is_err());
        assert!(synth_grounding_dataset(
            &SynthSpec {
                noise: -1.0,
                ..spec
            },
            0
        )
        .is_err());
    }

    #[test]
    fn synth_candidate_mix() {
        let d = synth_grounding_dataset(&SynthSpec::default(), 9).unwrap();
        for p in d.images.iter().flat_map(|i| &i.phrases) {
            let g = p.gt.unwrap();
            let ious: Vec<f64> = p.candidates.iter().map(|c| iou(c, &g)).collect();
            assert_eq!(ious.iter().filter(|v| **v >= 0.8).count(), 1);
            assert!(ious.iter().filter(|v| (0.2..=0.45).contains(*v)).count() >= 9);
        }
    }

    #[test]
    fn f32_sidecar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = VectorTable::new();
        t.insert("a/0".into(), FeatureVector::new(vec![1.0, -2.5, 0.125]).unwrap());
        t.insert("a/0+1".into(), FeatureVector::new(vec![0.0, 3.0, 1e-3]).unwrap());
        let p = dir.path().join("v.bin");
        write_f32_table(&p, &t).unwrap();
        let back = read_vector_table(&p).unwrap();
        assert_eq!(back.len(), 2);
        for (k, v) in &t {
            for (x, y) in v.values().iter().zip(back[k].values()) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
        let j = dir.path().join("v.jsonl");
        write_vector_table(&j, &t).unwrap();
        assert_eq!(read_vector_table(&j).unwrap(), t);
        let per = region_features_by_image(&t).unwrap();
        assert!(per["a"].contains_key("0+1"));
    }

    #[test]
    fn jsonl_errors_name_the_line() {
        let err = parse_jsonl::<PredictionRecord>("\n{\"image_id\": 3}\n", "preds").unwrap_err();
        match err {
            Error::Format { line, .. } => assert_eq!(line, 2),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn sentence_validation() {
        let s = SentenceRecord {
            image_id: "1".into(),
            sentence_id: "1_0".into(),
            tokens: ["a", "dog", "runs"].map(String::from).to_vec(),
            parse: "(ROOT (S (NP (DT a) (NN dog)) (VP (VBZ runs))))".into(),
            entities: vec![SentenceEntity {
                phrase_id: "e0".into(),
                span: TokenSpan::new(0, 2),
                phrase_type: PhraseType::Animals,
                head_tokens: vec!["dog".into()],
                gt_boxes: vec![bb(1.0, 2.0, 3.0, 4.0)],
            }],
        };
        s.validate().unwrap();
        let mut bad = s.clone();
        bad.entities[0].span = TokenSpan::new(2, 4);
        assert!(bad.validate().is_err());
        let mut bad = s;
        bad.tokens[2] = "walks".into();
        assert!(bad.validate().is_err());
    }

    #[test]
    fn bundle_dimension_checks() {
        let dir = tempfile::tempdir().unwrap();
        let fp = fingerprint(&SynthSpec::default()).unwrap();
        assert_eq!(fp.len(), 64);
        let b = WeightedModelBundle::new(vec![0.5; 14], vec![1.0; 3], fp).unwrap();
        let p = dir.path().join("b.json");
        b.save(&p).unwrap();
        assert_eq!(WeightedModelBundle::load(&p).unwrap(), b);
        for (ws, wq) in [(13, 3), (14, 2)] {
            assert!(WeightedModelBundle::new(vec![0.0; ws], vec![0.0; wq], String::new()).is_err());
        }
        let mut bad = serde_json::to_value(&b).unwrap();
        bad["ws"] = serde_json::json!([1.0, 2.0]);
        std::fs::write(&p, bad.to_string()).unwrap();
        assert!(WeightedModelBundle::load(&p).is_err());
        let mut r = b.clone();
        r.rank_svm = Some(RankSvmModel {
            weights: vec![0.0; 10],
            c: 1.0,
        });
        assert!(r.validate().is_err());
    }
}
