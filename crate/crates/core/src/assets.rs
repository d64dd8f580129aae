//! Shipped dictionaries and the TSV reader used to load them.
//!
//! Every table can be replaced by an edited copy on disk; the embedded
//! versions are the defaults.

use std::path::Path;

use crate::error::{Error, Result};

pub const ADJECTIVES: &str = include_str!("../assets/adjectives.tsv");
pub const OBJECTS: &str = include_str!("../assets/objects.tsv");
pub const VERBS: &str = include_str!("../assets/verbs.tsv");
pub const SUBJECT_VERB: &str = include_str!("../assets/subject_verb.tsv");
pub const VERB_OBJECT: &str = include_str!("../assets/verb_object.tsv");
pub const VERB_PAIRS: &str = include_str!("../assets/verb_pairs.tsv");
pub const PREPOSITION_PAIRS: &str = include_str!("../assets/preposition_pairs.tsv");
pub const ATTACHMENT_PAIRS: &str = include_str!("../assets/attachment_pairs.tsv");
pub const PREPOSITIONS: &str = include_str!("../assets/prepositions.tsv");
pub const PRONOUNS: &str = include_str!("../assets/pronouns.tsv");

/// Expected category counts for the shipped detector and pair dictionaries.
pub mod counts {
    pub const ADJECTIVES: usize = 83;
    pub const VERBS: usize = 58;
    pub const SUBJECT_VERB: usize = 191;
    pub const VERB_OBJECT: usize = 225;
    pub const VERB_PAIRS: usize = 260;
    pub const PREPOSITION_PAIRS: usize = 216;
    pub const ATTACHMENT_PAIRS: usize = 207;
    pub const PREPOSITIONS: usize = 8;
}

/// Parse tab-separated rows, skipping blank lines and `#` comments. Every row
/// must have exactly `columns` fields.
pub fn parse_tsv(text: &str, name: &str, columns: usize) -> Result<Vec<Vec<String>>> {
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<String> = line.split('\t').map(|f| f.trim().to_string()).collect();
        if fields.len() != columns || fields.iter().any(|f| f.is_empty()) {
            return Err(Error::Format {
                path: name.to_string(),
                line: n + 1,
                message: format!("expected {columns} non-empty tab-separated fields"),
            });
        }
        rows.push(fields);
    }
    Ok(rows)
}

pub fn read_tsv(path: &Path, columns: usize) -> Result<Vec<Vec<String>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_tsv(&text, &path.display().to_string(), columns)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tsv_rejects_wrong_arity() {
        assert!(parse_tsv("a\tb\n", "t", 2).is_ok());
        let err = parse_tsv("# c\n\na\tb\tc\n", "t", 2).unwrap_err();
        assert!(matches!(err, Error::Format { line: 3, .. }));
    }
}
