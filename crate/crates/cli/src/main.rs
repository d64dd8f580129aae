use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use groundkit::classify::{train_rank_svm, RankSvmConfig, SvmConfig};
use groundkit::cues::{
    assemble_spc, train_position_svms, CueModels, DetectorScoreTable, DetectorTables,
    PhraseCueConfig, PositionExample, PositionSvms, SLOT_CCA,
};
use groundkit::embed::{fit_cca, CcaModel, FeatureVector};
use groundkit::geometry::ImageSize;
use groundkit::harness::{
    candidate_records, fingerprint, gt_records, prediction_records, read_json, read_jsonl,
    read_vector_table, recall_at_1, region_features_by_image, synth_grounding_dataset,
    upper_bound, write_json, write_jsonl, CandidateRecord, CcaPairRecord, GroundTruthRecord,
    PredictionRecord, ProposalRecord, RecallReport, ScoredImageRecord, SentenceRecord,
    SynthSpec, TupleRecord, VectorTable, WeightedModelBundle,
};
use groundkit::infer::{
    ground_image, GroundingImage, GroundingPhrase, GroundingRelation, InferConfig,
};
use groundkit::learn::{learn_weights_q, learn_weights_s, SearchConfig};
use groundkit::lingcue::{sentence_tuples, parse_ptb, PronounLexicon, RelationKind};
use groundkit::phrase::PhraseRecord;
use groundkit::ppc::{
    pair_cost_matrix, pair_key, train_pair_bank, PairBankConfig, PairLexicon, PairModelBank,
    PairTrainingExample, ScoredBox, PPC_SLOTS,
};
use groundkit::vrd::{
    build_rank_training, cca_examples, enumerate_candidates, eval_recall_at, fit_vrd_cca,
    score_relationships, train_spatial_svms, train_vrd_position_svms, RecallAt, RecallOptions,
    RegionFeatures, VrdDetections, VrdFeatureModels, VrdGroundTruth, VrdModels, VrdVocabulary,
};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

#[derive(Parser)]
#[command(name = "groundkit", version, about = "Phrase grounding and relationship detection over precomputed features")]
struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for per-image work (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// JSON file overriding default hyperparameters.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Stage {
    Spc,
    Ppc,
}

#[derive(Subcommand)]
enum Command {
    /// Build per-sentence grounding problems: tuples, cue costs, pair costs.
    ExtractCues {
        #[arg(long)]
        sentences: PathBuf,
        #[arg(long)]
        proposals: PathBuf,
        /// Phrase vectors keyed `sentence_id/phrase_id`.
        #[arg(long)]
        phrase_features: PathBuf,
        /// Region vectors keyed `image_id/box_index`.
        #[arg(long)]
        region_features: PathBuf,
        #[arg(long)]
        cca: PathBuf,
        #[arg(long)]
        position_svms: Option<PathBuf>,
        /// Directory with object/adjective/subject_verb/verb_object `.jsonl` score tables.
        #[arg(long)]
        detectors: Option<PathBuf>,
        #[arg(long)]
        pair_bank: Option<PathBuf>,
        /// Directory overriding the shipped dictionaries.
        #[arg(long)]
        dictionaries: Option<PathBuf>,
        #[arg(long)]
        pronouns: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        tuples_out: Option<PathBuf>,
    },
    /// Fit a phrase-region CCA model from paired rows.
    FitCca {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        reg: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one position classifier per phrase type.
    TrainPositionSvm {
        #[arg(long)]
        examples: PathBuf,
        #[arg(long)]
        neg_ratio: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the pairwise classifier bank.
    TrainPairBank {
        #[arg(long)]
        examples: PathBuf,
        #[arg(long)]
        min_count: Option<usize>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Learn cue weights on validation problems by direct search.
    LearnWeights {
        #[arg(long, value_enum)]
        stage: Stage,
        /// Grounding problems (`.jsonl`, or a directory holding `images.jsonl`).
        #[arg(long)]
        val: PathBuf,
        #[arg(long)]
        restarts: Option<usize>,
        /// Existing bundle; required for the ppc stage.
        #[arg(long)]
        bundle: Option<PathBuf>,
        #[arg(long, default_value = "bundle.json")]
        out: PathBuf,
        #[arg(long)]
        position_svms: Option<PathBuf>,
        #[arg(long)]
        pair_bank: Option<PathBuf>,
        #[arg(long)]
        cca: Option<PathBuf>,
    },
    /// Ground every phrase with a learned bundle.
    Infer {
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recall@1 overall and per phrase type.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Share of phrases with at least one correct candidate.
    UpperBound {
        #[arg(long)]
        cands: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Train relationship scoring models.
    VrdTrain {
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Region vectors keyed `image_id/i` and `image_id/i+j`.
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank relationship candidates of every image.
    VrdScore {
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        top_k: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Relationship recall at K.
    VrdEval {
        #[arg(long)]
        scored: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value_t = 100)]
        k: usize,
        /// Only count relations whose triple is unseen in training.
        #[arg(long)]
        zero_shot: bool,
        /// Let one candidate match several identical relations.
        #[arg(long)]
        many_to_one: bool,
    },
    /// Write a synthetic grounding dataset with planted structure.
    Synth {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        images: Option<usize>,
        #[arg(long)]
        phrases: Option<usize>,
        #[arg(long)]
        candidates: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        relation_density: Option<f64>,
        #[arg(long)]
        pair_noise: Option<f64>,
        #[arg(long)]
        decoy_rate: Option<f64>,
    },
}

/// Hyperparameters; every field may be overridden by `--config`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct Settings {
    svm: SvmConfig,
    position_neg_ratio: usize,
    pair_bank: PairBankConfig,
    search: SearchConfig,
    infer: InferConfig,
    cca_k: usize,
    cca_reg: f64,
    rank: RankSvmConfig,
    rank_neg_ratio: usize,
    vrd_top_k: usize,
    vrd_min_class_positives: usize,
    synth: SynthSpec,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            svm: SvmConfig::default(),
            position_neg_ratio: 3,
            pair_bank: PairBankConfig::default(),
            search: SearchConfig::default(),
            infer: InferConfig::default(),
            cca_k: 128,
            cca_reg: 1e-4,
            rank: RankSvmConfig::default(),
            rank_neg_ratio: 3,
            vrd_top_k: groundkit::vrd::DEFAULT_TOP_K,
            vrd_min_class_positives: 5,
            synth: SynthSpec::default(),
        }
    }
}

impl Settings {
    fn load(path: Option<&Path>, seed: u64) -> Result<Self> {
        let mut s: Settings = match path {
            Some(p) => read_json(p).with_context(|| format!("reading config {}", p.display()))?,
            None => Settings::default(),
        };
        s.svm.seed = seed;
        s.pair_bank.seed = seed;
        s.pair_bank.svm.seed = seed;
        s.search.seed = seed;
        s.rank.seed = seed;
        Ok(s)
    }
}

fn print_json(v: serde_json::Value) {
    println!("{v}");
}

fn read_images(path: &Path) -> Result<Vec<GroundingImage>> {
    let file = if path.is_dir() { path.join("images.jsonl") } else { path.to_path_buf() };
    let images: Vec<GroundingImage> = read_jsonl(&file)?;
    for img in &images {
        img.validate()?;
    }
    Ok(images)
}

fn report_json(r: &RecallReport) -> serde_json::Value {
    let per: BTreeMap<&str, serde_json::Value> = r
        .per_type
        .iter()
        .map(|(t, c)| (t.as_str(), json!({"correct": c.correct, "total": c.total, "ratio": c.ratio()})))
        .collect();
    json!({"correct": r.overall.correct, "total": r.overall.total, "ratio": r.overall.ratio(), "per_type": per})
}

fn print_report(r: &RecallReport, as_json: bool) {
    if as_json {
        print_json(report_json(r));
    } else {
        print!("{}", r.table());
    }
}

struct ExtractContext<'a> {
    proposals: HashMap<String, ProposalRecord>,
    phrase_features: VectorTable,
    regions: HashMap<String, RegionFeatures>,
    models: CueModels<'a>,
    pair_bank: Option<&'a PairModelBank>,
    pronouns: &'a PronounLexicon,
    pair_lexicon: &'a PairLexicon,
}

fn sentence_problem(s: &SentenceRecord, ctx: &ExtractContext) -> Result<(GroundingImage, TupleRecord)> {
    s.validate()?;
    let tree = parse_ptb(&s.parse)?;
    let mentions = s.mentions();
    let (tuples, links, warnings) = sentence_tuples(&tree, &mentions, ctx.pronouns);
    for w in &warnings {
        warn!("sentence {}: {w}", s.sentence_id);
    }
    let props = ctx
        .proposals
        .get(&s.image_id)
        .ok_or_else(|| anyhow!("no proposals for image {}", s.image_id))?;
    let img = ImageSize::new(props.width, props.height)?;
    let empty = RegionFeatures::new();
    let regions = ctx.regions.get(&s.image_id).unwrap_or(&empty);
    let region_feats: Vec<FeatureVector> = (0..props.boxes.len())
        .map(|i| {
            regions
                .get(&i.to_string())
                .cloned()
                .ok_or_else(|| anyhow!("missing region feature {}/{i}", s.image_id))
        })
        .collect::<Result<_>>()?;
    let mut phrases = Vec::with_capacity(s.entities.len());
    let mut scored: Vec<Vec<ScoredBox>> = Vec::with_capacity(s.entities.len());
    for e in &s.entities {
        let verbs_of = |left: bool| -> Vec<String> {
            tuples
                .iter()
                .filter(|t| t.kind == RelationKind::Verb)
                .filter(|t| (if left { &t.left } else { &t.right }).entity_id() == Some(e.phrase_id.as_str()))
                .filter_map(|t| t.rel_words.first().cloned())
                .collect()
        };
        let id = format!("{}/{}", s.sentence_id, e.phrase_id);
        let record = PhraseRecord {
            phrase_id: id.clone(),
            image_id: s.image_id.clone(),
            words: s.tokens[e.span.start..e.span.end].to_vec(),
            phrase_type: e.phrase_type,
            feature: ctx.phrase_features.get(&id).cloned(),
            gt_boxes: e.gt_boxes.clone(),
            subject_of: verbs_of(true),
            object_of: verbs_of(false),
        };
        let spc = assemble_spc(&record, &props.boxes, &region_feats, img, ctx.models)
            .with_context(|| format!("phrase {id}"))?;
        scored.push(
            props
                .boxes
                .iter()
                .zip(&spc.costs)
                .map(|(b, c)| ScoredBox { bbox: *b, score: c[SLOT_CCA] })
                .collect(),
        );
        phrases.push(GroundingPhrase {
            phrase_id: id,
            phrase_type: e.phrase_type,
            candidates: props.boxes.clone(),
            spc,
            gt: record.gt_union(),
        });
    }
    let index = |id: Option<&str>| id.and_then(|id| s.entities.iter().position(|e| e.phrase_id == id));
    let mut relations = Vec::new();
    let mut pair_keys = Vec::with_capacity(tuples.len());
    for t in &tuples {
        let key = pair_key(t, &mentions, ctx.pair_lexicon);
        pair_keys.push(key.clone());
        let (Some(l), Some(r)) = (index(t.left.entity_id()), index(t.right.entity_id())) else {
            continue;
        };
        if l == r {
            continue;
        }
        let costs = match ctx.pair_bank {
            Some(bank) => pair_cost_matrix(bank, key.as_ref(), &scored[l], &scored[r])?,
            None => None,
        };
        relations.push(GroundingRelation {
            left: l,
            right: r,
            kind: key.as_ref().map_or(t.kind, |k| k.kind),
            costs,
        });
    }
    let image = GroundingImage {
        image_id: s.image_id.clone(),
        phrases,
        relations,
    };
    let tuples_rec = TupleRecord {
        image_id: s.image_id.clone(),
        sentence_id: s.sentence_id.clone(),
        tuples,
        pair_keys,
        links,
        warnings,
    };
    Ok((image, tuples_rec))
}

fn load_detectors(dir: Option<&Path>) -> Result<DetectorTables> {
    let Some(dir) = dir else {
        return Ok(DetectorTables::default());
    };
    let load = |name: &str| -> Result<DetectorScoreTable> {
        let p = dir.join(format!("{name}.jsonl"));
        if p.exists() {
            Ok(DetectorScoreTable::load_jsonl(&p)?)
        } else {
            Ok(DetectorScoreTable::default())
        }
    };
    Ok(DetectorTables {
        object: load("object")?,
        adjective: load("adjective")?,
        subject_verb: load("subject_verb")?,
        verb_object: load("verb_object")?,
    })
}

fn cca_matrix(rows: &[&Vec<f64>]) -> Result<nalgebra::DMatrix<f64>> {
    let d = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != d) {
        bail!("CCA rows have inconsistent dimensions");
    }
    Ok(nalgebra::DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]))
}

fn by_image<T>(items: Vec<T>, id: impl Fn(&T) -> &str) -> Result<BTreeMap<String, T>> {
    let mut out = BTreeMap::new();
    for it in items {
        let k = id(&it).to_string();
        if out.insert(k.clone(), it).is_some() {
            bail!("duplicate record for image {k}");
        }
    }
    Ok(out)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let settings = Settings::load(cli.config.as_deref(), cli.seed)?;
    match cli.command {
        Command::ExtractCues {
            sentences,
            proposals,
            phrase_features,
            region_features,
            cca,
            position_svms,
            detectors,
            pair_bank,
            dictionaries,
            pronouns,
            out,
            tuples_out,
        } => {
            let sentences: Vec<SentenceRecord> = read_jsonl(&sentences)?;
            let proposals = by_image(read_jsonl::<ProposalRecord>(&proposals)?, |p| &p.image_id)?;
            let cca: CcaModel = read_json(&cca)?;
            let position: PositionSvms = match position_svms {
                Some(p) => read_json(&p)?,
                None => PositionSvms::new(),
            };
            let detectors = load_detectors(detectors.as_deref())?;
            let config = match dictionaries {
                Some(d) => PhraseCueConfig::load_dir(&d)?,
                None => PhraseCueConfig::shipped()?,
            };
            let bank = pair_bank.map(|d| PairModelBank::load_dir(&d)).transpose()?;
            let pronouns = match pronouns {
                Some(p) => PronounLexicon::load(&p)?,
                None => PronounLexicon::default(),
            };
            let pair_lexicon = PairLexicon::shipped()?;
            let ctx = ExtractContext {
                proposals: proposals.into_iter().collect(),
                phrase_features: read_vector_table(&phrase_features)?,
                regions: region_features_by_image(&read_vector_table(&region_features)?)?,
                models: CueModels {
                    cca: &cca,
                    position_svms: &position,
                    detectors: &detectors,
                    config: &config,
                },
                pair_bank: bank.as_ref(),
                pronouns: &pronouns,
                pair_lexicon: &pair_lexicon,
            };
            let results: Vec<(GroundingImage, TupleRecord)> = sentences
                .par_iter()
                .map(|s| sentence_problem(s, &ctx).with_context(|| format!("sentence {}", s.sentence_id)))
                .collect::<Result<_>>()?;
            let (images, tuples): (Vec<_>, Vec<_>) = results.into_iter().unzip();
            write_jsonl(&out, &images)?;
            if let Some(t) = tuples_out {
                write_jsonl(&t, &tuples)?;
            }
            let relations: usize = images.iter().map(|i| i.relations.len()).sum();
            print_json(json!({"sentences": images.len(), "relations": relations}));
        }
        Command::FitCca { pairs, k, reg, out } => {
            let rows: Vec<CcaPairRecord> = read_jsonl(&pairs)?;
            let x = cca_matrix(&rows.iter().map(|r| &r.phrase).collect::<Vec<_>>())?;
            let y = cca_matrix(&rows.iter().map(|r| &r.region).collect::<Vec<_>>())?;
            let k = k.unwrap_or(settings.cca_k).min(x.ncols()).min(y.ncols());
            let model = fit_cca(&x, &y, k, reg.unwrap_or(settings.cca_reg))?;
            write_json(&out, &model)?;
            print_json(json!({"rows": rows.len(), "k": k, "correlations": model.correlations()}));
        }
        Command::TrainPositionSvm { examples, neg_ratio, out } => {
            let ex: Vec<PositionExample> = read_jsonl(&examples)?;
            let svms = train_position_svms(
                &ex,
                &settings.svm,
                neg_ratio.unwrap_or(settings.position_neg_ratio),
                cli.seed,
            )?;
            write_json(&out, &svms)?;
            let types: Vec<&str> = svms.keys().map(|t| t.as_str()).collect();
            print_json(json!({"examples": ex.len(), "trained": types}));
        }
        Command::TrainPairBank { examples, min_count, out } => {
            let ex: Vec<PairTrainingExample> = read_jsonl(&examples)?;
            let mut cfg = settings.pair_bank.clone();
            if let Some(m) = min_count {
                cfg.min_count = m;
            }
            let (bank, report) = train_pair_bank(&ex, &cfg)?;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            bank.save_dir(&out)?;
            print_json(json!({"trained": report.trained.len(), "skipped": report.skipped.len()}));
        }
        Command::LearnWeights {
            stage,
            val,
            restarts,
            bundle,
            out,
            position_svms,
            pair_bank,
            cca,
        } => {
            let data = read_images(&val)?;
            let mut search = settings.search;
            if let Some(r) = restarts {
                search.restarts = r;
            }
            let previous = bundle.as_deref().map(WeightedModelBundle::load).transpose()?;
            let fp = fingerprint(&json!({
                "stage": match stage { Stage::Spc => "spc", Stage::Ppc => "ppc" },
                "search": search,
                "infer": settings.infer,
            }))?;
            let (mut b, learned) = match stage {
                Stage::Spc => {
                    let learned = learn_weights_s(&data, &search)?;
                    let wq = previous.as_ref().map_or(vec![0.0; PPC_SLOTS], |p| p.wq.clone());
                    let mut b = previous.clone().unwrap_or(WeightedModelBundle::new(learned.weights.clone(), wq.clone(), fp.clone())?);
                    b.ws = learned.weights.clone();
                    b.wq = wq;
                    (b, learned)
                }
                Stage::Ppc => {
                    let Some(mut b) = previous.clone() else {
                        bail!("the ppc stage needs --bundle with learned spc weights");
                    };
                    let learned = learn_weights_q(&data, &b.ws, &search)?;
                    b.wq = learned.weights.clone();
                    (b, learned)
                }
            };
            b.config_fingerprint = fp;
            if let Some(p) = position_svms {
                b.position_svms = read_json(&p)?;
            }
            if pair_bank.is_some() {
                b.pair_bank = pair_bank;
            }
            if cca.is_some() {
                b.cca = cca;
            }
            b.save(&out)?;
            info!("restart counts {:?}", learned.restart_counts);
            print_json(json!({
                "count": learned.count,
                "total": learned.total,
                "weights": learned.weights,
                "bundle": out.display().to_string(),
            }));
        }
        Command::Infer { images, bundle, out } => {
            let data = read_images(&images)?;
            let b = WeightedModelBundle::load(&bundle)?;
            let chosen: Vec<Vec<usize>> = data
                .par_iter()
                .map(|img| ground_image(img, &b.ws, &b.wq, &settings.infer))
                .collect::<groundkit::Result<_>>()?;
            let preds = prediction_records(&data, &chosen)?;
            write_jsonl(&out, &preds)?;
            print_json(json!({"images": data.len(), "predictions": preds.len()}));
        }
        Command::Eval { pred, gt, json } => {
            let preds: Vec<PredictionRecord> = read_jsonl(&pred)?;
            let gt: Vec<GroundTruthRecord> = read_jsonl(&gt)?;
            print_report(&recall_at_1(&preds, &gt)?, json);
        }
        Command::UpperBound { cands, gt, json } => {
            let cands: Vec<CandidateRecord> = read_jsonl(&cands)?;
            let gt: Vec<GroundTruthRecord> = read_jsonl(&gt)?;
            print_report(&upper_bound(&cands, &gt)?, json);
        }
        Command::VrdTrain {
            vocab,
            detections,
            gt,
            features,
            out,
        } => {
            let vocab: VrdVocabulary = read_json(&vocab)?;
            vocab.validate(None)?;
            let dets = by_image(read_jsonl::<VrdDetections>(&detections)?, |d| &d.image_id)?;
            let gts: Vec<VrdGroundTruth> = read_jsonl(&gt)?;
            let feats = region_features_by_image(&read_vector_table(&features)?)?;
            let empty = RegionFeatures::new();
            let paired: Vec<(VrdDetections, VrdGroundTruth)> = gts
                .iter()
                .filter_map(|g| dets.get(&g.image_id).map(|d| (d.clone(), g.clone())))
                .collect();
            let examples: Vec<_> = paired
                .iter()
                .flat_map(|(d, g)| cca_examples(d, feats.get(&d.image_id).unwrap_or(&empty), g))
                .collect();
            let k = settings.cca_k;
            let cca = fit_vrd_cca(&examples, &vocab, k, settings.cca_reg)?;
            let position = train_vrd_position_svms(
                &paired,
                &settings.svm,
                settings.position_neg_ratio,
                settings.vrd_min_class_positives,
                cli.seed,
            )?;
            let spatial = train_spatial_svms(&gts, &vocab.predicates, &settings.svm, settings.position_neg_ratio, cli.seed)?;
            let features_models = VrdFeatureModels { cca, position, spatial };
            let scored: Vec<_> = paired
                .par_iter()
                .map(|(d, g)| {
                    let c = enumerate_candidates(d, feats.get(&d.image_id).unwrap_or(&empty), &vocab, &features_models)?;
                    Ok((c, g.clone()))
                })
                .collect::<groundkit::Result<_>>()?;
            let pairs = build_rank_training(&scored, settings.rank_neg_ratio, cli.seed)?;
            let rank = train_rank_svm(&pairs, &settings.rank)?;
            let models = VrdModels {
                features: features_models,
                rank,
            };
            write_json(&out, &models)?;
            print_json(json!({
                "images": paired.len(),
                "cca_rows": examples.len(),
                "rank_pairs": pairs.len(),
                "spatial_models": models.features.spatial.len(),
                "position_models": models.features.position.len(),
            }));
        }
        Command::VrdScore {
            vocab,
            models,
            detections,
            features,
            top_k,
            out,
        } => {
            let vocab: VrdVocabulary = read_json(&vocab)?;
            let models: VrdModels = read_json(&models)?;
            models.rank.validate(Some(groundkit::vrd::VRD_FEATURE_DIM))?;
            let dets: Vec<VrdDetections> = read_jsonl(&detections)?;
            let feats = region_features_by_image(&read_vector_table(&features)?)?;
            let empty = RegionFeatures::new();
            let top_k = top_k.unwrap_or(settings.vrd_top_k);
            let records: Vec<ScoredImageRecord> = dets
                .par_iter()
                .map(|d| {
                    let f = feats.get(&d.image_id).unwrap_or(&empty);
                    Ok(ScoredImageRecord {
                        image_id: d.image_id.clone(),
                        candidates: score_relationships(d, f, &vocab, &models, top_k)?,
                    })
                })
                .collect::<groundkit::Result<_>>()?;
            write_jsonl(&out, &records)?;
            let n: usize = records.iter().map(|r| r.candidates.len()).sum();
            print_json(json!({"images": records.len(), "candidates": n}));
        }
        Command::VrdEval {
            scored,
            gt,
            k,
            zero_shot,
            many_to_one,
        } => {
            let scored = by_image(read_jsonl::<ScoredImageRecord>(&scored)?, |s| &s.image_id)?;
            let gts: Vec<VrdGroundTruth> = read_jsonl(&gt)?;
            let opts = RecallOptions {
                k,
                zero_shot_only: zero_shot,
                one_to_one: !many_to_one,
            };
            let mut total = RecallAt { recalled: 0, total: 0 };
            for g in &gts {
                let ranked = scored.get(&g.image_id).map_or(&[][..], |s| &s.candidates[..]);
                if let Some(r) = eval_recall_at(ranked, g, opts) {
                    total = total + r;
                }
            }
            print_json(json!({
                "k": k,
                "zero_shot": zero_shot,
                "recalled": total.recalled,
                "total": total.total,
                "recall": total.ratio(),
            }));
        }
        Command::Synth {
            out,
            images,
            phrases,
            candidates,
            noise,
            relation_density,
            pair_noise,
            decoy_rate,
        } => {
            let mut spec = settings.synth;
            if let Some(v) = images {
                spec.images = v;
            }
            if let Some(v) = phrases {
                spec.phrases_per_image = v;
            }
            if let Some(v) = candidates {
                spec.candidates_per_phrase = v;
            }
            if let Some(v) = noise {
                spec.noise = v;
            }
            if let Some(v) = relation_density {
                spec.relation_density = v;
            }
            if let Some(v) = pair_noise {
                spec.pair_noise = v;
            }
            if let Some(v) = decoy_rate {
                spec.decoy_rate = v;
            }
            let d = synth_grounding_dataset(&spec, cli.seed)?;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            write_jsonl(&out.join("images.jsonl"), &d.images)?;
            write_jsonl(&out.join("gt.jsonl"), &gt_records(&d.images))?;
            write_jsonl(&out.join("candidates.jsonl"), &candidate_records(&d.images))?;
            write_json(&out.join("spec.json"), &json!({"spec": spec, "seed": cli.seed}))?;
            print_json(json!({"images": d.images.len(), "out": out.display().to_string()}));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            eprintln!("{}", json!({"error": e.to_string().trim(), "kind": "usage"}));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut msg = String::new();
            for cause in e.chain().map(|c| c.to_string()) {
                if !msg.contains(&cause) {
                    if !msg.is_empty() {
                        msg.push_str(": ");
                    }
                    msg.push_str(&cause);
                }
            }
            eprintln!("{}", json!({"error": msg}));
            ExitCode::FAILURE
        }
    }
}
