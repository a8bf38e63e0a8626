//! Tree files: one `id<TAB>tree` line per sentence.
//!
//! Trees are bracketed text. Leaves are token indices or surface tokens;
//! clip trees write every leaf as `label@start:end` with times in seconds.

use std::io::{BufRead, Write};

use super::metrics::ClipInterval;
use super::tree::BinaryTree;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TreeRecord {
    pub id: String,
    pub tree: BinaryTree,
    pub labels: Vec<String>,
    pub clips: Option<Vec<ClipInterval>>,
}

impl TreeRecord {
    pub fn new(id: impl Into<String>, tree: BinaryTree, labels: Vec<String>) -> Self {
        TreeRecord {
            id: id.into(),
            tree,
            labels,
            clips: None,
        }
    }

    pub fn with_clips(mut self, clips: Vec<ClipInterval>) -> Self {
        self.clips = Some(clips);
        self
    }
}

pub fn format_tree_line(rec: &TreeRecord) -> String {
    let label = |i: usize| {
        let base = rec.labels.get(i).cloned().unwrap_or_else(|| i.to_string());
        match &rec.clips {
            Some(c) => format!("{base}@{:.3}:{:.3}", c[i].start, c[i].end),
            None => base,
        }
    };
    format!("{}\t{}", rec.id, rec.tree.to_sexpr(&label))
}

pub fn write_tree_file<W: Write>(mut out: W, records: &[TreeRecord]) -> Result<()> {
    for r in records {
        writeln!(out, "{}", format_tree_line(r))?;
    }
    Ok(())
}

fn split_clip_label(atom: &str) -> Option<(String, ClipInterval)> {
    let (label, times) = atom.rsplit_once('@')?;
    let (a, b) = times.split_once(':')?;
    Some((label.to_string(), ClipInterval::new(a.parse().ok()?, b.parse().ok()?)))
}

pub fn parse_tree_file<R: BufRead>(input: R) -> Result<Vec<TreeRecord>> {
    let mut out = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (id, text) = line
            .split_once('\t')
            .ok_or_else(|| Error::Parse(format!("line {}: expected `id<TAB>tree`", lineno + 1)))?;
        let (tree, atoms) =
            BinaryTree::parse_sexpr(text).map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
        let split: Vec<_> = atoms.iter().map(|a| split_clip_label(a)).collect();
        let rec = if !split.is_empty() && split.iter().all(Option::is_some) {
            let (labels, clips): (Vec<_>, Vec<_>) = split.into_iter().flatten().unzip();
            TreeRecord::new(id, tree, labels).with_clips(clips)
        } else {
            TreeRecord::new(id, tree, atoms)
        };
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_and_clip_records_round_trip() {
        let recs = vec![
            TreeRecord::new("s1", BinaryTree::right_branching(3), vec!["a".into(), "b".into(), "c".into()]),
            TreeRecord::new("s2", BinaryTree::Leaf(0), vec!["0".into()]),
            TreeRecord::new("s3", BinaryTree::left_branching(2), vec!["x".into(), "y".into()])
                .with_clips(vec![ClipInterval::new(0.0, 0.25), ClipInterval::new(0.25, 0.61)]),
        ];
        let mut buf = Vec::new();
        write_tree_file(&mut buf, &recs).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("s3\t(x@0.000:0.250 y@0.250:0.610)"));
        assert_eq!(parse_tree_file(text.as_bytes()).unwrap(), recs);
    }

    #[test]
    fn missing_tab_is_reported_with_line_number() {
        let err = parse_tree_file("s1\t(a b)\nbroken (a b)\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }
}
