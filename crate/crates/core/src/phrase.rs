//! Phrase-level domain types shared by the linguistic and scoring stages.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embed::FeatureVector;
use crate::error::{Error, Result};
use crate::geometry::{union_hull, BoundingBox};

/// The eight broad phrase types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhraseType {
    People,
    Clothing,
    Bodyparts,
    Animals,
    Vehicles,
    Instruments,
    Scene,
    Other,
}

impl PhraseType {
    pub const ALL: [PhraseType; 8] = [
        PhraseType::People,
        PhraseType::Clothing,
        PhraseType::Bodyparts,
        PhraseType::Animals,
        PhraseType::Vehicles,
        PhraseType::Instruments,
        PhraseType::Scene,
        PhraseType::Other,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PhraseType::People => "people",
            PhraseType::Clothing => "clothing",
            PhraseType::Bodyparts => "bodyparts",
            PhraseType::Animals => "animals",
            PhraseType::Vehicles => "vehicles",
            PhraseType::Instruments => "instruments",
            PhraseType::Scene => "scene",
            PhraseType::Other => "other",
        }
    }

    /// Right-hand types that turn a people-headed relation into an attachment.
    pub fn is_attachable(self) -> bool {
        matches!(self, PhraseType::Clothing | PhraseType::Bodyparts)
    }
}

impl fmt::Display for PhraseType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PhraseType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PhraseType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown phrase type {s:?}")))
    }
}

/// Half-open token range `[start, end)`; serialized as `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct TokenSpan {
    pub start: usize,
    pub end: usize,
}

impl TokenSpan {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, other: &TokenSpan) -> bool {
        self.start <= other.start && other.end <= self.end
    }
}

impl From<[usize; 2]> for TokenSpan {
    fn from(v: [usize; 2]) -> Self {
        TokenSpan::new(v[0], v[1])
    }
}

impl From<TokenSpan> for [usize; 2] {
    fn from(s: TokenSpan) -> Self {
        [s.start, s.end]
    }
}

impl fmt::Display for TokenSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.start, self.end)
    }
}

/// A noun-phrase entity mention in a sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityMention {
    pub phrase_id: String,
    pub span: TokenSpan,
    pub phrase_type: PhraseType,
    #[serde(default)]
    pub head_tokens: Vec<String>,
}

impl EntityMention {
    pub fn new(
        phrase_id: impl Into<String>,
        span: TokenSpan,
        phrase_type: PhraseType,
        head_tokens: &[&str],
    ) -> Self {
        Self {
            phrase_id: phrase_id.into(),
            span,
            phrase_type,
            head_tokens: head_tokens.iter().map(|s| s.to_lowercase()).collect(),
        }
    }

    /// Category used in pair classifier keys. People phrases collapse to
    /// `people`; everything else is named by its head words joined with `+`.
    pub fn pair_category(&self) -> String {
        if self.phrase_type == PhraseType::People {
            "people".to_string()
        } else {
            self.head_tokens.join("+")
        }
    }
}

/// A phrase ready for scoring: words, type, embedding input, and the verbs
/// it participates in as subject or object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhraseRecord {
    pub phrase_id: String,
    pub image_id: String,
    pub words: Vec<String>,
    pub phrase_type: PhraseType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature: Option<FeatureVector>,
    #[serde(default)]
    pub gt_boxes: Vec<BoundingBox>,
    #[serde(default)]
    pub subject_of: Vec<String>,
    #[serde(default)]
    pub object_of: Vec<String>,
}

impl PhraseRecord {
    /// Ground truth as the union of all annotated boxes, if any.
    pub fn gt_union(&self) -> Option<BoundingBox> {
        union_hull(&self.gt_boxes).ok()
    }
}
