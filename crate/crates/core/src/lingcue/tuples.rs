//! Relation tuple extraction from constituency parses.
//!
//! Every VP and PP is a relational phrase. Its left entity is found by walking
//! up the tree and scanning left siblings for a noun phrase; its right entity
//! is the first mention inside the phrase after the head word.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::coref::{find_pronouns, PronounLexicon};
use super::ptb::{ParseNode, ParseTree};
use crate::phrase::{EntityMention, PhraseType, TokenSpan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelationKind {
    Verb,
    Preposition,
    Attachment,
}

impl RelationKind {
    pub const ALL: [RelationKind; 3] = [
        RelationKind::Verb,
        RelationKind::Preposition,
        RelationKind::Attachment,
    ];

    /// Slot of this kind in the pairwise weight vector.
    pub fn slot(self) -> usize {
        self as usize
    }
}

/// One side of a relation: a named entity or a pronoun awaiting resolution.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Endpoint {
    Entity(String),
    Pronoun(TokenSpan),
}

impl Endpoint {
    pub fn entity_id(&self) -> Option<&str> {
        match self {
            Endpoint::Entity(id) => Some(id),
            Endpoint::Pronoun(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RelationTuple {
    pub left: Endpoint,
    pub rel_words: Vec<String>,
    pub right: Endpoint,
    pub kind: RelationKind,
    /// Set when the left entity was found by walking through a coordinated
    /// constituent, where attachment is ambiguous.
    #[serde(default)]
    pub via_coordination: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Extraction {
    pub tuples: Vec<RelationTuple>,
    pub warnings: Vec<String>,
}

const AUXILIARIES: &[&str] = &[
    "is", "are", "was", "were", "be", "been", "being", "am", "'s", "'re", "has", "have", "had",
];

struct Node<'a> {
    tree: &'a ParseTree,
    parent: Option<usize>,
    children: Vec<usize>,
}

struct Arena<'a> {
    nodes: Vec<Node<'a>>,
}

impl<'a> Arena<'a> {
    fn new(root: &'a ParseTree) -> Self {
        let mut nodes = vec![Node {
            tree: root,
            parent: None,
            children: Vec::new(),
        }];
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            let tree = nodes[id].tree;
            let mut kids = Vec::new();
            for sub in tree.subtrees() {
                let child = nodes.len();
                nodes.push(Node {
                    tree: sub,
                    parent: Some(id),
                    children: Vec::new(),
                });
                kids.push(child);
            }
            stack.extend(kids.iter().rev().copied());
            nodes[id].children = kids;
        }
        Self { nodes }
    }

    fn preorder(&self, from: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![from];
        while let Some(id) = stack.pop() {
            out.push(id);
            stack.extend(self.nodes[id].children.iter().rev().copied());
        }
        out
    }
}

fn is_np(label: &str) -> bool {
    label == "NP" || label.starts_with("NP-") || label == "NX" || label == "WHNP"
}

fn has_label(label: &str, base: &str) -> bool {
    label == base || label.starts_with(&format!("{base}-"))
}

/// First preterminal child whose tag satisfies `pred`, as (lowercased word, token index).
fn head_child(tree: &ParseTree, pred: impl Fn(&str) -> bool) -> Option<(String, usize)> {
    tree.subtrees().find_map(|t| match t.children.as_slice() {
        [ParseNode::Token(tok)] if pred(&t.label) => Some((tok.word.to_lowercase(), tok.index)),
        _ => None,
    })
}

struct Mentions<'e> {
    entities: HashMap<TokenSpan, &'e EntityMention>,
    pronouns: HashSet<TokenSpan>,
}

impl Mentions<'_> {
    fn at(&self, tree: &ParseTree) -> Option<Endpoint> {
        if is_np(&tree.label) {
            if let Some(e) = self.entities.get(&tree.span) {
                return Some(Endpoint::Entity(e.phrase_id.clone()));
            }
        }
        if self.pronouns.contains(&tree.span) {
            return Some(Endpoint::Pronoun(tree.span));
        }
        None
    }
}

/// Extract `(entity1, rel, entity2)` tuples from one parsed sentence.
///
/// Entities must align exactly with NP constituents; entities that do not are
/// reported in [`Extraction::warnings`] and take no part in any tuple.
/// Pronoun mentions found through `lexicon` become [`Endpoint::Pronoun`]
/// endpoints, to be rewritten by [`super::expand_tuples_with_pronouns`].
pub fn extract_tuples(
    tree: &ParseTree,
    entities: &[EntityMention],
    lexicon: &PronounLexicon,
) -> Extraction {
    let arena = Arena::new(tree);
    let mut warnings = Vec::new();

    let np_spans: HashSet<TokenSpan> = arena
        .nodes
        .iter()
        .filter(|n| is_np(&n.tree.label))
        .map(|n| n.tree.span)
        .collect();
    let mut aligned = HashMap::new();
    for e in entities {
        if np_spans.contains(&e.span) {
            aligned.insert(e.span, e);
        } else {
            warnings.push(format!(
                "entity {} span {} does not match any NP constituent",
                e.phrase_id, e.span
            ));
        }
    }
    let mentions = Mentions {
        entities: aligned,
        pronouns: find_pronouns(tree, entities, lexicon)
            .into_iter()
            .map(|(span, _)| span)
            .collect(),
    };

    let mut tuples = Vec::new();
    for id in arena.preorder(0) {
        let node = arena.nodes[id].tree;
        let (kind, head) = if has_label(&node.label, "VP") {
            let Some(head) = head_child(node, |tag| tag.starts_with("VB") || tag == "MD") else {
                continue;
            };
            let has_vp_child = node.subtrees().any(|t| has_label(&t.label, "VP"));
            if has_vp_child && AUXILIARIES.contains(&head.0.as_str()) {
                continue;
            }
            (RelationKind::Verb, head)
        } else if has_label(&node.label, "PP") {
            let Some(head) = head_child(node, |tag| tag == "IN" || tag == "TO") else {
                continue;
            };
            (RelationKind::Preposition, head)
        } else {
            continue;
        };

        let Some((left, via_coordination)) = up_left(&arena, id, &mentions) else {
            continue;
        };
        let right = arena.preorder(id).into_iter().skip(1).find_map(|d| {
            let t = arena.nodes[d].tree;
            if t.span.start > head.1 {
                mentions.at(t)
            } else {
                None
            }
        });
        let Some(right) = right else {
            continue;
        };
        if left == right {
            continue;
        }
        tuples.push(RelationTuple {
            left,
            rel_words: vec![head.0],
            right,
            kind,
            via_coordination,
        });
    }

    Extraction {
        tuples: collapse_attachments(dedup(tuples), entities),
        warnings,
    }
}

/// Walk up from `id`, scanning left siblings nearest-first for a mention.
/// A non-mention NP sibling yields the first mention inside it (its head NP).
fn up_left(arena: &Arena<'_>, id: usize, mentions: &Mentions<'_>) -> Option<(Endpoint, bool)> {
    let mut crossed = false;
    let mut cur = id;
    while let Some(parent) = arena.nodes[cur].parent {
        let ptree = arena.nodes[parent].tree;
        if ptree.subtrees().any(|t| t.label == "CC") || ptree.label == "UCP" {
            crossed = true;
        }
        let siblings = &arena.nodes[parent].children;
        let pos = siblings.iter().position(|&c| c == cur).unwrap_or(0);
        for &sib in siblings[..pos].iter().rev() {
            let st = arena.nodes[sib].tree;
            if let Some(m) = mentions.at(st) {
                return Some((m, crossed));
            }
            if is_np(&st.label) {
                if let Some(m) = arena
                    .preorder(sib)
                    .into_iter()
                    .find_map(|d| mentions.at(arena.nodes[d].tree))
                {
                    return Some((m, crossed));
                }
            }
        }
        cur = parent;
    }
    None
}

pub(crate) fn dedup(tuples: Vec<RelationTuple>) -> Vec<RelationTuple> {
    let mut seen = HashSet::new();
    tuples
        .into_iter()
        .filter(|t| {
            seen.insert((
                t.left.clone(),
                t.right.clone(),
                t.kind,
                t.rel_words.clone(),
            ))
        })
        .collect()
}

/// Replace every tuple between a people entity and a clothing or body-part
/// entity by a single attachment tuple for that ordered pair. The attachment
/// keeps the union of the relation words in order of appearance.
pub fn collapse_attachments(
    tuples: Vec<RelationTuple>,
    entities: &[EntityMention],
) -> Vec<RelationTuple> {
    let types: HashMap<&str, PhraseType> = entities
        .iter()
        .map(|e| (e.phrase_id.as_str(), e.phrase_type))
        .collect();
    let attaches = |t: &RelationTuple| match (t.left.entity_id(), t.right.entity_id()) {
        (Some(l), Some(r)) => {
            types.get(l) == Some(&PhraseType::People)
                && types.get(r).is_some_and(|ty| ty.is_attachable())
        }
        _ => false,
    };

    let mut out: Vec<RelationTuple> = Vec::with_capacity(tuples.len());
    let mut slot: HashMap<(Endpoint, Endpoint), usize> = HashMap::new();
    for t in tuples {
        if !attaches(&t) {
            out.push(t);
            continue;
        }
        let key = (t.left.clone(), t.right.clone());
        match slot.get(&key) {
            Some(&i) => {
                let merged = &mut out[i];
                for w in t.rel_words {
                    if !merged.rel_words.contains(&w) {
                        merged.rel_words.push(w);
                    }
                }
                merged.via_coordination |= t.via_coordination;
            }
            None => {
                slot.insert(key, out.len());
                out.push(RelationTuple {
                    kind: RelationKind::Attachment,
                    ..t
                });
            }
        }
    }
    out
}
