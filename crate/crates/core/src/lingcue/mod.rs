//! Linguistic cues: relation tuples and pronoun links from parsed captions.

mod coref;
mod ptb;
mod tuples;

use std::collections::HashMap;

pub use coref::{find_pronouns, resolve_pronouns, PronounClass, PronounLexicon, PronounLink};
pub use ptb::{parse_ptb, ParseNode, ParseTree, Token};
pub use tuples::{
    collapse_attachments, extract_tuples, Endpoint, Extraction, RelationKind, RelationTuple,
};

use crate::phrase::{EntityMention, TokenSpan};

/// Rewrite pronoun endpoints to their antecedents.
///
/// Tuples with an unresolved pronoun are dropped, duplicates removed, and
/// attachment collapsing reapplied since rewritten endpoints may now form a
/// people to clothing or body-part pair.
pub fn expand_tuples_with_pronouns(
    tuples: &[RelationTuple],
    links: &[PronounLink],
    entities: &[EntityMention],
) -> Vec<RelationTuple> {
    let resolved: HashMap<TokenSpan, Option<&str>> = links
        .iter()
        .map(|l| (l.pronoun_span, l.antecedent.as_deref()))
        .collect();
    let rewrite = |e: &Endpoint| -> Option<Endpoint> {
        match e {
            Endpoint::Entity(_) => Some(e.clone()),
            Endpoint::Pronoun(span) => resolved
                .get(span)
                .copied()
                .flatten()
                .map(|id| Endpoint::Entity(id.to_string())),
        }
    };
    let rewritten = tuples
        .iter()
        .filter_map(|t| {
            Some(RelationTuple {
                left: rewrite(&t.left)?,
                right: rewrite(&t.right)?,
                ..t.clone()
            })
        })
        .collect();
    collapse_attachments(tuples::dedup(rewritten), entities)
}

/// Full per-sentence pass: extraction, coreference and expansion.
pub fn sentence_tuples(
    tree: &ParseTree,
    entities: &[EntityMention],
    lexicon: &PronounLexicon,
) -> (Vec<RelationTuple>, Vec<PronounLink>, Vec<String>) {
    let extraction = extract_tuples(tree, entities, lexicon);
    let links = resolve_pronouns(tree, entities, lexicon);
    let tuples = expand_tuples_with_pronouns(&extraction.tuples, &links, entities);
    (tuples, links, extraction.warnings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phrase::PhraseType;

    fn ent(id: &str, s: usize, e: usize, ty: PhraseType, head: &[&str]) -> EntityMention {
        EntityMention::new(id, TokenSpan::new(s, e), ty, head)
    }

    fn triple(t: &RelationTuple) -> (String, String, String, RelationKind) {
        let name = |e: &Endpoint| match e {
            Endpoint::Entity(id) => id.clone(),
            Endpoint::Pronoun(s) => format!("pron{s}"),
        };
        (name(&t.left), t.rel_words.join(" "), name(&t.right), t.kind)
    }

    const BOY_FIELD_DOG: &str = "(NP (NP (DT A) (NN boy)) (VP (VBG running) (PP (IN in) (NP (DT a) (NN field))) (PP (IN with) (NP (DT a) (NN dog)))))";

    fn boy_field_dog() -> Vec<EntityMention> {
        vec![
            ent("boy", 0, 2, PhraseType::People, &["boy"]),
            ent("field", 4, 6, PhraseType::Scene, &["field"]),
            ent("dog", 7, 9, PhraseType::Animals, &["dog"]),
        ]
    }

    #[test]
    fn verb_phrase_with_prepositions() {
        let tree = parse_ptb(BOY_FIELD_DOG).unwrap();
        let ex = extract_tuples(&tree, &boy_field_dog(), &PronounLexicon::default());
        assert!(ex.warnings.is_empty());
        let got: Vec<_> = ex.tuples.iter().map(triple).collect();
        let want = vec![
            ("boy".into(), "running".into(), "field".into(), RelationKind::Verb),
            ("boy".into(), "in".into(), "field".into(), RelationKind::Preposition),
            ("boy".into(), "with".into(), "dog".into(), RelationKind::Preposition),
        ];
        assert_eq!(got, want);
    }

    #[test]
    fn clothing_collapses_to_attachment() {
        let tree = parse_ptb(
            "(NP (NP (DT A) (NN boy)) (VP (VBG running) (PP (IN in) (NP (DT a) (NN jacket)))))",
        )
        .unwrap();
        let ents = vec![
            ent("boy", 0, 2, PhraseType::People, &["boy"]),
            ent("jacket", 4, 6, PhraseType::Clothing, &["jacket"]),
        ];
        let ex = extract_tuples(&tree, &ents, &PronounLexicon::default());
        assert_eq!(ex.tuples.len(), 1);
        let t = &ex.tuples[0];
        assert_eq!(t.kind, RelationKind::Attachment);
        assert_eq!(t.left, Endpoint::Entity("boy".into()));
        assert_eq!(t.right, Endpoint::Entity("jacket".into()));
        assert_eq!(t.rel_words, vec!["running", "in"]);
    }

    #[test]
    fn no_relational_phrases() {
        let tree = parse_ptb("(NP (DT a) (JJ brown) (NN dog))").unwrap();
        let ents = vec![ent("dog", 0, 3, PhraseType::Animals, &["dog"])];
        assert!(extract_tuples(&tree, &ents, &PronounLexicon::default())
            .tuples
            .is_empty());
    }

    #[test]
    fn misaligned_entity_is_warning() {
        let tree = parse_ptb(BOY_FIELD_DOG).unwrap();
        let mut ents = boy_field_dog();
        ents[2].span = TokenSpan::new(8, 9);
        let ex = extract_tuples(&tree, &ents, &PronounLexicon::default());
        assert_eq!(ex.warnings.len(), 1);
        assert!(ex.tuples.iter().all(|t| t.right != Endpoint::Entity("dog".into())));
        assert_eq!(ex.tuples.len(), 2);
    }

    #[test]
    fn extraction_is_deterministic() {
        let tree = parse_ptb(BOY_FIELD_DOG).unwrap();
        let lex = PronounLexicon::default();
        let a = extract_tuples(&tree, &boy_field_dog(), &lex);
        let b = extract_tuples(&tree, &boy_field_dog(), &lex);
        assert_eq!(a, b);
    }

    #[test]
    fn coordination_is_flagged() {
        let tree = parse_ptb(
            "(S (NP (NP (DT A) (NN man)) (CC and) (NP (DT a) (NN woman))) (VP (VBG sitting) (PP (IN on) (NP (DT a) (NN bench)))))",
        )
        .unwrap();
        let ents = vec![
            ent("man", 0, 2, PhraseType::People, &["man"]),
            ent("woman", 3, 5, PhraseType::People, &["woman"]),
            ent("bench", 7, 9, PhraseType::Other, &["bench"]),
        ];
        let ex = extract_tuples(&tree, &ents, &PronounLexicon::default());
        assert!(!ex.tuples.is_empty());
        // the walk reaches the coordinated subject NP from the VP without
        // crossing a CC node inside its own ancestors
        assert!(ex.tuples.iter().all(|t| !t.via_coordination));

        let tree = parse_ptb(
            "(NP (NP (DT A) (NN man)) (CC and) (VP (VBG sitting) (PP (IN on) (NP (DT a) (NN bench)))))",
        )
        .unwrap();
        let ents = vec![
            ent("man", 0, 2, PhraseType::People, &["man"]),
            ent("bench", 5, 7, PhraseType::Other, &["bench"]),
        ];
        let ex = extract_tuples(&tree, &ents, &PronounLexicon::default());
        assert!(ex.tuples.iter().any(|t| t.via_coordination));
    }

    fn link_of(links: &[PronounLink], start: usize) -> &PronounLink {
        links.iter().find(|l| l.pronoun_span.start == start).unwrap()
    }

    #[test]
    fn reflexive_links_to_subject_and_expands() {
        let tree =
            parse_ptb("(S (NP (NNS Ducks)) (VP (VBP feed) (NP (PRP themselves))))").unwrap();
        let ents = vec![ent("ducks", 0, 1, PhraseType::Animals, &["ducks"])];
        let lex = PronounLexicon::default();
        let links = resolve_pronouns(&tree, &ents, &lex);
        assert_eq!(links.len(), 1);
        assert_eq!(links[0].pronoun_class, PronounClass::Reflexive);
        assert_eq!(links[0].antecedent.as_deref(), Some("ducks"));

        let ex = extract_tuples(&tree, &ents, &lex);
        assert_eq!(
            ex.tuples.iter().map(triple).collect::<Vec<_>>(),
            vec![("ducks".into(), "feed".into(), "pron[2, 3)".into(), RelationKind::Verb)]
        );
        let expanded = expand_tuples_with_pronouns(&ex.tuples, &links, &ents);
        assert_eq!(
            expanded.iter().map(triple).collect::<Vec<_>>(),
            vec![("ducks".into(), "feed".into(), "ducks".into(), RelationKind::Verb)]
        );
    }

    #[test]
    fn reflexive_nearest_antecedent() {
        let tree = parse_ptb(
            "(S (NP (DT A) (NN tennis) (NN player)) (VP (VBZ readies) (NP (PRP herself))))",
        )
        .unwrap();
        let ents = vec![ent("player", 0, 3, PhraseType::People, &["player"])];
        let links = resolve_pronouns(&tree, &ents, &PronounLexicon::default());
        assert_eq!(link_of(&links, 4).antecedent.as_deref(), Some("player"));
    }

    #[test]
    fn object_pronoun_links_main_subject() {
        let tree = parse_ptb(
            "(S (NP (NP (DT A) (NN dog)) (VP (VBG laying) (PP (IN on) (NP (DT the) (NN ground))))) \
             (VP (VBZ looks) (PRT (RP up)) (PP (IN at) (NP (NP (DT the) (NN dog)) \
             (VP (VBG standing) (PP (IN over) (NP (PRP him))))))))",
        )
        .unwrap();
        let ents = vec![
            ent("dog1", 0, 2, PhraseType::Animals, &["dog"]),
            ent("ground", 4, 6, PhraseType::Scene, &["ground"]),
            ent("dog2", 9, 11, PhraseType::Animals, &["dog"]),
        ];
        let lex = PronounLexicon::default();
        let links = resolve_pronouns(&tree, &ents, &lex);
        let him = link_of(&links, 13);
        assert_eq!(him.pronoun_class, PronounClass::Object);
        assert_eq!(him.antecedent.as_deref(), Some("dog1"));

        let (tuples, _, warnings) = sentence_tuples(&tree, &ents, &lex);
        assert!(warnings.is_empty());
        let got: Vec<_> = tuples.iter().map(triple).collect();
        assert!(got.contains(&("dog1".into(), "on".into(), "ground".into(), RelationKind::Preposition)));
        assert!(got.contains(&("dog1".into(), "at".into(), "dog2".into(), RelationKind::Preposition)));
        assert!(got.contains(&("dog2".into(), "over".into(), "dog1".into(), RelationKind::Preposition)));
        assert!(tuples
            .iter()
            .all(|t| t.left.entity_id().is_some() && t.right.entity_id().is_some()));
    }

    #[test]
    fn reciprocal_links_nearest() {
        let tree =
            parse_ptb("(S (NP (CD Two) (NNS men)) (VP (VBP hit) (NP (DT each) (JJ other))))")
                .unwrap();
        let ents = vec![ent("men", 0, 2, PhraseType::People, &["men"])];
        let links = resolve_pronouns(&tree, &ents, &PronounLexicon::default());
        assert_eq!(links.len(), 1);
        assert_eq!(links[0].pronoun_span, TokenSpan::new(3, 5));
        assert_eq!(links[0].pronoun_class, PronounClass::Reciprocal);
        assert_eq!(links[0].antecedent.as_deref(), Some("men"));
    }

    #[test]
    fn indefinite_has_no_antecedent_and_tuple_dropped() {
        let tree = parse_ptb(
            "(S (NP (DT A) (NN man)) (VP (VBZ talks) (PP (TO to) (NP (NN someone)))))",
        )
        .unwrap();
        let ents = vec![ent("man", 0, 2, PhraseType::People, &["man"])];
        let lex = PronounLexicon::default();
        let links = resolve_pronouns(&tree, &ents, &lex);
        assert_eq!(links[0].pronoun_class, PronounClass::Indefinite);
        assert_eq!(links[0].antecedent, None);
        let ex = extract_tuples(&tree, &ents, &lex);
        assert_eq!(ex.tuples.len(), 2);
        assert!(expand_tuples_with_pronouns(&ex.tuples, &links, &ents).is_empty());
    }

    #[test]
    fn antecedent_must_precede() {
        let tree =
            parse_ptb("(S (NP (PRP He)) (VP (VBZ rides) (NP (DT a) (NN horse))))").unwrap();
        let ents = vec![ent("horse", 2, 4, PhraseType::Animals, &["horse"])];
        let links = resolve_pronouns(&tree, &ents, &PronounLexicon::default());
        assert_eq!(links[0].antecedent, None);
    }

    #[test]
    fn expansion_dedups() {
        let t = RelationTuple {
            left: Endpoint::Entity("a".into()),
            rel_words: vec!["on".into()],
            right: Endpoint::Pronoun(TokenSpan::new(5, 6)),
            kind: RelationKind::Preposition,
            via_coordination: false,
        };
        let direct = RelationTuple {
            right: Endpoint::Entity("b".into()),
            ..t.clone()
        };
        let links = vec![PronounLink {
            pronoun_span: TokenSpan::new(5, 6),
            antecedent: Some("b".into()),
            pronoun_class: PronounClass::Object,
        }];
        let ents = vec![
            ent("a", 0, 1, PhraseType::Other, &["a"]),
            ent("b", 2, 3, PhraseType::Other, &["b"]),
        ];
        let out = expand_tuples_with_pronouns(&[direct.clone(), t], &links, &ents);
        assert_eq!(out, vec![direct]);
    }

    #[test]
    fn expansion_can_create_attachment() {
        // "A man ... his jacket" style: pronoun resolves to the person
        let t = RelationTuple {
            left: Endpoint::Pronoun(TokenSpan::new(4, 5)),
            rel_words: vec!["wearing".into()],
            right: Endpoint::Entity("jacket".into()),
            kind: RelationKind::Verb,
            via_coordination: false,
        };
        let links = vec![PronounLink {
            pronoun_span: TokenSpan::new(4, 5),
            antecedent: Some("man".into()),
            pronoun_class: PronounClass::Relative,
        }];
        let ents = vec![
            ent("man", 0, 2, PhraseType::People, &["man"]),
            ent("jacket", 6, 8, PhraseType::Clothing, &["jacket"]),
        ];
        let out = expand_tuples_with_pronouns(&[t], &links, &ents);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].kind, RelationKind::Attachment);
    }

    #[test]
    fn lexicon_requires_all_classes() {
        assert!(PronounLexicon::from_tsv("he\tsubject\n", "x").is_err());
        assert!(PronounLexicon::from_tsv("he\tpossessive\n", "x").is_err());
    }
}
