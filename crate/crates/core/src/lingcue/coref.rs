//! Rule-based pronominal coreference within a single sentence.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ptb::ParseTree;
use crate::assets;
use crate::error::{Error, Result};
use crate::phrase::{EntityMention, TokenSpan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PronounClass {
    Subject,
    Object,
    Reflexive,
    Reciprocal,
    Relative,
    Indefinite,
}

impl PronounClass {
    pub const ALL: [PronounClass; 6] = [
        PronounClass::Subject,
        PronounClass::Object,
        PronounClass::Reflexive,
        PronounClass::Reciprocal,
        PronounClass::Relative,
        PronounClass::Indefinite,
    ];
}

impl FromStr for PronounClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "subject" => PronounClass::Subject,
            "object" => PronounClass::Object,
            "reflexive" => PronounClass::Reflexive,
            "reciprocal" => PronounClass::Reciprocal,
            "relative" => PronounClass::Relative,
            "indefinite" => PronounClass::Indefinite,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown pronoun class {other:?}"
                )))
            }
        })
    }
}

/// Class-keyed pronoun word lists. Entries may span several words
/// (`each other`).
#[derive(Debug, Clone, PartialEq)]
pub struct PronounLexicon {
    entries: Vec<(Vec<String>, PronounClass)>,
}

impl PronounLexicon {
    /// Parse `word<TAB>class` rows. Every class must be represented.
    pub fn from_tsv(text: &str, name: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for row in assets::parse_tsv(text, name, 2)? {
            let words: Vec<String> = row[0]
                .split_whitespace()
                .map(|w| w.to_lowercase())
                .collect();
            entries.push((words, row[1].parse()?));
        }
        for class in PronounClass::ALL {
            if !entries.iter().any(|(_, c)| *c == class) {
                return Err(Error::InvalidArgument(format!(
                    "pronoun lexicon {name} has no {class:?} entries"
                )));
            }
        }
        // longest entries first so multiword pronouns win
        entries.sort_by_key(|e| std::cmp::Reverse(e.0.len()));
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tsv(&text, &path.display().to_string())
    }

    pub fn lookup_at(&self, tokens: &[String], i: usize) -> Option<(usize, PronounClass)> {
        self.entries.iter().find_map(|(words, class)| {
            let end = i + words.len();
            (end <= tokens.len() && tokens[i..end] == words[..]).then_some((words.len(), *class))
        })
    }
}

impl Default for PronounLexicon {
    fn default() -> Self {
        Self::from_tsv(assets::PRONOUNS, "pronouns.tsv").expect("shipped pronoun lexicon is valid")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PronounLink {
    pub pronoun_span: TokenSpan,
    pub antecedent: Option<String>,
    pub pronoun_class: PronounClass,
}

/// Pronoun occurrences outside entity mentions. Possessive determiners
/// (`PRP$`) and determiners (`DT`) are skipped.
pub fn find_pronouns(
    tree: &ParseTree,
    entities: &[EntityMention],
    lexicon: &PronounLexicon,
) -> Vec<(TokenSpan, PronounClass)> {
    let tokens: Vec<String> = tree.tokens().iter().map(|t| t.to_lowercase()).collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let inside_entity = entities
            .iter()
            .any(|e| e.span.start <= i && i < e.span.end);
        if !inside_entity {
            if let Some((len, class)) = lexicon.lookup_at(&tokens, i) {
                let determiner = len == 1 && matches!(tree.tag_of(i), Some("PRP$" | "DT" | "WP$"));
                if !determiner {
                    out.push((TokenSpan::new(i, i + len), class));
                    i += len;
                    continue;
                }
            }
        }
        i += 1;
    }
    out
}

/// The sentence's main subject: the leftmost NP directly under the root
/// clause, or the first entity when the root is not a clause.
fn main_subject<'e>(tree: &ParseTree, entities: &'e [EntityMention]) -> Option<&'e EntityMention> {
    let mut root = tree;
    while root.label == "ROOT" || (root.children.len() == 1 && !root.is_preterminal()) {
        match root.subtrees().next() {
            Some(t) => root = t,
            None => break,
        }
    }
    let first_within = |span: TokenSpan| {
        entities
            .iter()
            .filter(|e| span.contains(&e.span))
            .min_by_key(|e| (e.span.start, std::cmp::Reverse(e.span.end)))
    };
    if root.label.starts_with('S') {
        if let Some(np) = root
            .subtrees()
            .find(|t| t.label == "NP" || t.label.starts_with("NP-"))
        {
            if let Some(e) = entities.iter().find(|e| e.span == np.span) {
                return Some(e);
            }
            if let Some(e) = first_within(np.span) {
                return Some(e);
            }
        }
    }
    entities.iter().min_by_key(|e| (e.span.start, e.span.end))
}

fn nearest_preceding(
    entities: &[EntityMention],
    pronoun: TokenSpan,
) -> Option<&EntityMention> {
    entities
        .iter()
        .filter(|e| e.span.end <= pronoun.start)
        .max_by_key(|e| (e.span.end, e.span.start))
}

/// Link each pronoun to at most one preceding non-pronominal entity.
///
/// Subject and object pronouns refer to the main subject; reflexive,
/// reciprocal and relative pronouns to the nearest preceding entity;
/// indefinite pronouns to nothing.
pub fn resolve_pronouns(
    tree: &ParseTree,
    entities: &[EntityMention],
    lexicon: &PronounLexicon,
) -> Vec<PronounLink> {
    let subject = main_subject(tree, entities);
    find_pronouns(tree, entities, lexicon)
        .into_iter()
        .map(|(span, class)| {
            let antecedent = match class {
                PronounClass::Subject | PronounClass::Object => {
                    subject.filter(|e| e.span.end <= span.start)
                }
                PronounClass::Reflexive | PronounClass::Reciprocal | PronounClass::Relative => {
                    nearest_preceding(entities, span)
                }
                PronounClass::Indefinite => None,
            };
            PronounLink {
                pronoun_span: span,
                antecedent: antecedent.map(|e| e.phrase_id.clone()),
                pronoun_class: class,
            }
        })
        .collect()
}
