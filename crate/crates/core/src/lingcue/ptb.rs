//! Reader for Penn-Treebank style bracketed constituency parses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phrase::TokenSpan;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Token {
    pub word: String,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ParseNode {
    Tree(ParseTree),
    Token(Token),
}

impl ParseNode {
    pub fn span(&self) -> TokenSpan {
        match self {
            ParseNode::Tree(t) => t.span,
            ParseNode::Token(tok) => TokenSpan::new(tok.index, tok.index + 1),
        }
    }
}

/// A constituent with its ordered children and the token range it covers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParseTree {
    pub label: String,
    pub children: Vec<ParseNode>,
    pub span: TokenSpan,
}

impl ParseTree {
    /// Tokens of the sentence in order.
    pub fn tokens(&self) -> Vec<&str> {
        let mut out = Vec::with_capacity(self.span.len());
        self.collect_tokens(&mut out);
        out
    }

    fn collect_tokens<'a>(&'a self, out: &mut Vec<&'a str>) {
        for child in &self.children {
            match child {
                ParseNode::Tree(t) => t.collect_tokens(out),
                ParseNode::Token(tok) => out.push(&tok.word),
            }
        }
    }

    /// A preterminal has exactly one token child, e.g. `(NN boy)`.
    pub fn is_preterminal(&self) -> bool {
        matches!(self.children.as_slice(), [ParseNode::Token(_)])
    }

    pub fn subtrees(&self) -> impl Iterator<Item = &ParseTree> {
        self.children.iter().filter_map(|c| match c {
            ParseNode::Tree(t) => Some(t),
            ParseNode::Token(_) => None,
        })
    }

    /// Pre-order walk over all constituents, including `self`.
    pub fn preorder(&self) -> Vec<&ParseTree> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(node) = stack.pop() {
            out.push(node);
            let kids: Vec<&ParseTree> = node.subtrees().collect();
            stack.extend(kids.into_iter().rev());
        }
        out
    }

    /// Part-of-speech tag of the preterminal above token `index`.
    pub fn tag_of(&self, index: usize) -> Option<&str> {
        self.preorder().into_iter().find_map(|t| match t.children.as_slice() {
            [ParseNode::Token(tok)] if tok.index == index => Some(t.label.as_str()),
            _ => None,
        })
    }
}

/// Parse a bracketed tree such as `(S (NP (DT a) (NN boy)) (VP (VBG running)))`.
///
/// Token spans are assigned left to right. An outermost bracket with no label,
/// as in `( (S ...) )`, is read as a `ROOT` node.
pub fn parse_ptb(text: &str) -> Result<ParseTree> {
    let mut p = Parser {
        src: text.as_bytes(),
        pos: 0,
        next_token: 0,
    };
    p.skip_ws();
    if p.pos >= p.src.len() {
        return Err(p.error("empty input"));
    }
    if p.peek() != Some(b'(') {
        return Err(p.error("expected '('"));
    }
    let tree = p.tree(true)?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(p.error("trailing input after tree"));
    }
    if tree.span.is_empty() {
        return Err(Error::Parse {
            offset: 0,
            message: "tree has no tokens".into(),
        });
    }
    Ok(tree)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    next_token: usize,
}

impl Parser<'_> {
    fn error(&self, message: &str) -> Error {
        Error::Parse {
            offset: self.pos,
            message: message.to_string(),
        }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(c) if c.is_ascii_whitespace()) {
            self.pos += 1;
        }
    }

    fn atom(&mut self) -> String {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_ascii_whitespace() || c == b'(' || c == b')' {
                break;
            }
            self.pos += 1;
        }
        String::from_utf8_lossy(&self.src[start..self.pos]).into_owned()
    }

    fn tree(&mut self, outermost: bool) -> Result<ParseTree> {
        let open = self.pos;
        self.pos += 1;
        self.skip_ws();
        let mut label = self.atom();
        if label.is_empty() {
            if outermost && self.peek() == Some(b'(') {
                label = "ROOT".to_string();
            } else {
                return Err(Error::Parse {
                    offset: self.pos,
                    message: "empty constituent label".into(),
                });
            }
        }
        let start = self.next_token;
        let mut children = Vec::new();
        loop {
            self.skip_ws();
            match self.peek() {
                None => {
                    return Err(Error::Parse {
                        offset: self.pos,
                        message: format!("unbalanced parentheses: '(' at offset {open} is never closed"),
                    })
                }
                Some(b')') => {
                    self.pos += 1;
                    break;
                }
                Some(b'(') => children.push(ParseNode::Tree(self.tree(false)?)),
                Some(_) => {
                    let word = self.atom();
                    children.push(ParseNode::Token(Token {
                        word,
                        index: self.next_token,
                    }));
                    self.next_token += 1;
                }
            }
        }
        if children.is_empty() {
            return Err(Error::Parse {
                offset: open,
                message: format!("constituent {label} has no children"),
            });
        }
        Ok(ParseTree {
            label,
            children,
            span: TokenSpan::new(start, self.next_token),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_tree() {
        let t = parse_ptb("(NP (DT a) (NN boy))").unwrap();
        assert_eq!(t.label, "NP");
        assert_eq!(t.span, TokenSpan::new(0, 2));
        assert_eq!(t.tokens(), vec!["a", "boy"]);
    }

    #[test]
    fn nested_spans() {
        let t = parse_ptb("(S (NP (DT a) (NN boy)) (VP (VBG running)))").unwrap();
        assert_eq!(t.label, "S");
        assert_eq!(t.children.len(), 2);
        let spans: Vec<_> = t.children.iter().map(|c| c.span()).collect();
        assert_eq!(spans, vec![TokenSpan::new(0, 2), TokenSpan::new(2, 3)]);
        assert_eq!(t.tag_of(2), Some("VBG"));
    }

    #[test]
    fn children_partition_parent() {
        let t = parse_ptb(
            "(ROOT (S (NP (NNS Ducks)) (VP (VBP feed) (NP (PRP themselves))) (. .)))",
        )
        .unwrap();
        for node in t.preorder() {
            let mut cursor = node.span.start;
            for c in &node.children {
                assert_eq!(c.span().start, cursor);
                cursor = c.span().end;
            }
            assert_eq!(cursor, node.span.end);
        }
    }

    #[test]
    fn unlabeled_root_wrapper() {
        let t = parse_ptb("( (NP (DT a) (NN dog)) )").unwrap();
        assert_eq!(t.label, "ROOT");
        assert_eq!(t.span.len(), 2);
    }

    #[test]
    fn malformed_inputs() {
        for bad in ["((NP a boy", "", "   ", "(NP (DT a)", "(NP a))", "NP a", "(NP )", "(NP (() a))"] {
            let err = parse_ptb(bad).unwrap_err();
            assert!(matches!(err, Error::Parse { .. }), "{bad:?} -> {err}");
        }
    }

    #[test]
    fn error_reports_offset() {
        match parse_ptb("(NP (DT a) (NN boy)").unwrap_err() {
            Error::Parse { offset, .. } => assert_eq!(offset, 19),
            other => panic!("{other}"),
        }
    }
}
