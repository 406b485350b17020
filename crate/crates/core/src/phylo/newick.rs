//! Newick reader and writer.
//!
//! Accepted dialect: unquoted labels over `[A-Za-z0-9_.-]`, single-quoted
//! labels (with `''` as an escaped quote), square-bracket comments anywhere
//! between tokens, and a branch length on every non-root edge.

use crate::error::{Error, Result};
use crate::format::fmt12;

use super::tree::{Node, PhyloTree};

/// Parses a single rooted Newick expression terminated by `;`.
pub fn parse_newick(text: &str) -> Result<PhyloTree> {
    let mut p = Parser { chars: text.chars().collect(), pos: 0, nodes: Vec::new() };
    let root = p.subtree(None)?;
    p.skip_trivia()?;
    if p.peek() == Some(':') {
        // A root edge length is allowed and ignored.
        p.pos += 1;
        p.length()?;
        p.skip_trivia()?;
    }
    match p.peek() {
        Some(';') => p.pos += 1,
        Some(c) => return Err(p.error(format!("expected ';', found '{c}'"))),
        None => return Err(p.error("unexpected end of input, expected ';'")),
    }
    p.skip_trivia()?;
    if let Some(c) = p.peek() {
        return Err(p.error(format!("trailing input after ';': '{c}'")));
    }
    let nodes = p.nodes;
    if let Some(dup) = duplicate_tip(&nodes) {
        return Err(Error::Newick { offset: dup.0, message: format!("duplicate tip label '{}'", dup.1) });
    }
    PhyloTree::from_nodes(nodes.into_iter().map(|(n, _)| n).collect(), root)
}

fn duplicate_tip(nodes: &[(Node, usize)]) -> Option<(usize, String)> {
    let mut seen = std::collections::HashSet::new();
    for (n, off) in nodes {
        if let (true, Some(l)) = (n.is_tip(), n.label.as_ref()) {
            if !seen.insert(l.as_str()) {
                return Some((*off, l.clone()));
            }
        }
    }
    None
}

struct Parser {
    chars: Vec<char>,
    pos: usize,
    // each node with the character offset where it started
    nodes: Vec<(Node, usize)>,
}

fn is_label_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '-')
}

impl Parser {
    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn error(&self, message: impl Into<String>) -> Error {
        Error::Newick { offset: self.pos, message: message.into() }
    }

    fn skip_trivia(&mut self) -> Result<()> {
        loop {
            match self.peek() {
                Some(c) if c.is_whitespace() => self.pos += 1,
                Some('[') => {
                    let start = self.pos;
                    while let Some(c) = self.peek() {
                        self.pos += 1;
                        if c == ']' {
                            break;
                        }
                    }
                    if self.chars[self.pos - 1] != ']' {
                        self.pos = start;
                        return Err(self.error("unterminated comment"));
                    }
                }
                _ => return Ok(()),
            }
        }
    }

    fn subtree(&mut self, parent: Option<usize>) -> Result<usize> {
        self.skip_trivia()?;
        let start = self.pos;
        let id = self.nodes.len();
        self.nodes.push((
            Node { parent, children: Vec::new(), branch_length: 0.0, label: None },
            start,
        ));
        if self.peek() == Some('(') {
            self.pos += 1;
            loop {
                let child = self.subtree(Some(id))?;
                self.nodes[id].0.children.push(child);
                self.skip_trivia()?;
                match self.peek() {
                    Some(',') => self.pos += 1,
                    Some(')') => {
                        self.pos += 1;
                        break;
                    }
                    Some(c) => return Err(self.error(format!("expected ',' or ')', found '{c}'"))),
                    None => return Err(self.error("unexpected end of input, unbalanced '('")),
                }
            }
            self.skip_trivia()?;
            self.nodes[id].0.label = self.label()?;
        } else {
            let label = self.label()?;
            match label {
                Some(l) if !l.is_empty() => self.nodes[id].0.label = Some(l),
                _ => {
                    return Err(match self.peek() {
                        None => self.error("unexpected end of input, expected a tip label"),
                        Some(c) => self.error(format!("expected a tip label, found '{c}'")),
                    })
                }
            }
        }
        if parent.is_some() {
            self.skip_trivia()?;
            if self.peek() != Some(':') {
                return Err(self.error("missing branch length"));
            }
            self.pos += 1;
            self.nodes[id].0.branch_length = self.length()?;
        }
        Ok(id)
    }

    fn label(&mut self) -> Result<Option<String>> {
        match self.peek() {
            Some('\'') => {
                let start = self.pos;
                self.pos += 1;
                let mut s = String::new();
                loop {
                    match self.peek() {
                        None => {
                            self.pos = start;
                            return Err(self.error("unterminated quoted label"));
                        }
                        Some('\'') if self.chars.get(self.pos + 1) == Some(&'\'') => {
                            s.push('\'');
                            self.pos += 2;
                        }
                        Some('\'') => {
                            self.pos += 1;
                            break;
                        }
                        Some(c) => {
                            s.push(c);
                            self.pos += 1;
                        }
                    }
                }
                Ok(Some(s))
            }
            Some(c) if is_label_char(c) => {
                let start = self.pos;
                while self.peek().is_some_and(is_label_char) {
                    self.pos += 1;
                }
                Ok(Some(self.chars[start..self.pos].iter().collect()))
            }
            _ => Ok(None),
        }
    }

    fn length(&mut self) -> Result<f64> {
        self.skip_trivia()?;
        let start = self.pos;
        while self
            .peek()
            .is_some_and(|c| c.is_ascii_digit() || matches!(c, '.' | '-' | '+' | 'e' | 'E'))
        {
            self.pos += 1;
        }
        let token: String = self.chars[start..self.pos].iter().collect();
        if token.is_empty() {
            return Err(self.error("missing branch length"));
        }
        let value: f64 = token.parse().map_err(|_| Error::Newick {
            offset: start,
            message: format!("invalid branch length '{token}'"),
        })?;
        if !value.is_finite() {
            return Err(Error::Newick { offset: start, message: "non-finite branch length".into() });
        }
        if value < 0.0 {
            return Err(Error::Newick {
                offset: start,
                message: format!("negative branch length {token}"),
            });
        }
        Ok(value)
    }
}

fn write_label(out: &mut String, label: &str) {
    if !label.is_empty() && label.chars().all(is_label_char) {
        out.push_str(label);
    } else {
        out.push('\'');
        out.push_str(&label.replace('\'', "''"));
        out.push('\'');
    }
}

/// Writes the tree as Newick with branch lengths at 12 significant digits.
pub fn serialize_newick(tree: &PhyloTree) -> String {
    let mut out = String::new();
    write_node(tree, tree.root(), &mut out);
    out.push(';');
    out
}

fn write_node(tree: &PhyloTree, id: usize, out: &mut String) {
    let node = tree.node(id);
    if !node.children.is_empty() {
        out.push('(');
        for (k, &c) in node.children.iter().enumerate() {
            if k > 0 {
                out.push(',');
            }
            write_node(tree, c, out);
        }
        out.push(')');
    }
    if let Some(l) = &node.label {
        write_label(out, l);
    }
    if node.parent.is_some() {
        out.push(':');
        out.push_str(&fmt12(node.branch_length));
    }
}
