use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary constituency tree whose leaves are positions `0..n`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BinaryTree {
    Leaf(usize),
    Node(Box<BinaryTree>, Box<BinaryTree>),
}

impl BinaryTree {
    pub fn node(left: BinaryTree, right: BinaryTree) -> Self {
        BinaryTree::Node(Box::new(left), Box::new(right))
    }

    /// Inclusive `(first, last)` leaf covered by this subtree.
    pub fn span(&self) -> (usize, usize) {
        match self {
            BinaryTree::Leaf(i) => (*i, *i),
            BinaryTree::Node(l, r) => (l.span().0, r.span().1),
        }
    }

    pub fn leaf_count(&self) -> usize {
        let (i, j) = self.span();
        j - i + 1
    }

    /// Spans of internal nodes in pre-order.
    pub fn brackets(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        self.collect(&mut out);
        out
    }

    fn collect(&self, out: &mut Vec<(usize, usize)>) {
        if let BinaryTree::Node(l, r) = self {
            out.push(self.span());
            l.collect(out);
            r.collect(out);
        }
    }

    /// Checks CNF shape and that the leaves read `0..n` left to right.
    pub fn is_valid(&self) -> bool {
        fn walk(t: &BinaryTree, next: &mut usize) -> bool {
            match t {
                BinaryTree::Leaf(i) => {
                    let ok = *i == *next;
                    *next += 1;
                    ok
                }
                BinaryTree::Node(l, r) => walk(l, next) && walk(r, next),
            }
        }
        let mut next = self.span().0;
        self.span().0 == 0 && walk(self, &mut next)
    }

    /// Rebuilds the tree from its internal-node spans.
    pub fn from_brackets(n: usize, brackets: &[(usize, usize)]) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("a tree needs at least one leaf".into()));
        }
        let set: BTreeSet<(usize, usize)> = brackets.iter().copied().collect();
        if set.len() != brackets.len() {
            return Err(Error::Validation("duplicate bracket".into()));
        }
        if set.len() != n - 1 {
            return Err(Error::Validation(format!(
                "a binary tree over {n} leaves has {} internal nodes, got {}",
                n - 1,
                set.len()
            )));
        }
        if let Some(&(i, j)) = set.iter().find(|(i, j)| i >= j || *j >= n) {
            return Err(Error::Validation(format!("bracket ({i}, {j}) is not a multi-leaf span inside 0..{n}")));
        }
        fn build(i: usize, j: usize, set: &BTreeSet<(usize, usize)>) -> Result<BinaryTree> {
            if i == j {
                return Ok(BinaryTree::Leaf(i));
            }
            let present = |a: usize, b: usize| a == b || set.contains(&(a, b));
            let k = (i..j)
                .find(|&k| present(i, k) && present(k + 1, j))
                .ok_or_else(|| Error::Validation(format!("span ({i}, {j}) has no binary split in the bracket set")))?;
            Ok(BinaryTree::node(build(i, k, set)?, build(k + 1, j, set)?))
        }
        if n > 1 && !set.contains(&(0, n - 1)) {
            return Err(Error::Validation("the full span is missing".into()));
        }
        build(0, n - 1, &set)
    }

    pub fn left_branching(n: usize) -> Self {
        (1..n).fold(BinaryTree::Leaf(0), |acc, k| BinaryTree::node(acc, BinaryTree::Leaf(k)))
    }

    pub fn right_branching(n: usize) -> Self {
        (0..n.saturating_sub(1))
            .rev()
            .fold(BinaryTree::Leaf(n - 1), |acc, k| BinaryTree::node(BinaryTree::Leaf(k), acc))
    }

    /// Bracketed text, e.g. `((the dog) barked)`.
    pub fn to_sexpr(&self, label: &dyn Fn(usize) -> String) -> String {
        match self {
            BinaryTree::Leaf(i) => label(*i),
            BinaryTree::Node(l, r) => format!("({} {})", l.to_sexpr(label), r.to_sexpr(label)),
        }
    }

    /// Parses bracketed text; leaves are numbered left to right and their
    /// surface labels returned alongside.
    pub fn parse_sexpr(text: &str) -> Result<(Self, Vec<String>)> {
        let mut tokens = Vec::new();
        let mut atom = String::new();
        for ch in text.chars() {
            match ch {
                '(' | ')' => {
                    if !atom.is_empty() {
                        tokens.push(std::mem::take(&mut atom));
                    }
                    tokens.push(ch.to_string());
                }
                c if c.is_whitespace() => {
                    if !atom.is_empty() {
                        tokens.push(std::mem::take(&mut atom));
                    }
                }
                c => atom.push(c),
            }
        }
        if !atom.is_empty() {
            tokens.push(atom);
        }
        let mut pos = 0;
        let mut labels = Vec::new();
        let tree = parse_node(&tokens, &mut pos, &mut labels)?;
        if pos != tokens.len() {
            return Err(Error::Parse(format!("trailing input after tree: {:?}", &tokens[pos..])));
        }
        Ok((tree, labels))
    }
}

fn parse_node(tokens: &[String], pos: &mut usize, labels: &mut Vec<String>) -> Result<BinaryTree> {
    let tok = tokens.get(*pos).ok_or_else(|| Error::Parse("unexpected end of tree".into()))?;
    *pos += 1;
    match tok.as_str() {
        "(" => {
            let mut children = Vec::new();
            while tokens.get(*pos).map(String::as_str) != Some(")") {
                if *pos >= tokens.len() {
                    return Err(Error::Parse("unbalanced parentheses".into()));
                }
                children.push(parse_node(tokens, pos, labels)?);
            }
            *pos += 1;
            match children.len() {
                // tolerate a redundant wrapper such as `((a b))` or `(a)`
                1 => Ok(children.pop().unwrap()),
                2 => {
                    let r = children.pop().unwrap();
                    let l = children.pop().unwrap();
                    Ok(BinaryTree::node(l, r))
                }
                k => Err(Error::Parse(format!("node with {k} children is not binary"))),
            }
        }
        ")" => Err(Error::Parse("unexpected ')'".into())),
        atom => {
            labels.push(atom.to_string());
            Ok(BinaryTree::Leaf(labels.len() - 1))
        }
    }
}

/// Spans of length at least two, deduplicated.
pub fn nontrivial_spans(spans: &[(usize, usize)]) -> BTreeSet<(usize, usize)> {
    spans.iter().copied().filter(|(i, j)| j > i).collect()
}
