use super::tree::BinaryTree;
use crate::error::{Error, Result};

/// Per-node compatibility scores `local(i, j, k)` for every split of every span.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitScores {
    n: usize,
    scores: Vec<f64>,
}

impl SplitScores {
    pub fn new(n: usize) -> Self {
        SplitScores {
            n,
            scores: vec![0.0; n * n * n],
        }
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize, usize) -> f64) -> Self {
        let mut s = SplitScores::new(n);
        for i in 0..n {
            for j in i + 1..n {
                for k in i..j {
                    s.set(i, j, k, f(i, j, k));
                }
            }
        }
        s
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    fn at(&self, i: usize, j: usize, k: usize) -> usize {
        debug_assert!(i <= k && k < j && j < self.n);
        (i * self.n + j) * self.n + k
    }

    /// Score of joining `(i, k)` and `(k + 1, j)` into `(i, j)`.
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.scores[self.at(i, j, k)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let at = self.at(i, j, k);
        self.scores[at] = v;
    }

    /// Sum of local scores over the internal nodes of `tree`.
    pub fn tree_score(&self, tree: &BinaryTree) -> f64 {
        match tree {
            BinaryTree::Leaf(_) => 0.0,
            BinaryTree::Node(l, r) => {
                let (i, k) = l.span();
                let j = r.span().1;
                self.get(i, j, k) + self.tree_score(l) + self.tree_score(r)
            }
        }
    }
}

/// Max-plus CKY: the binary tree maximising the summed local scores.
/// Ties go to the largest split point, so a flat score table yields the
/// left-branching tree.
pub fn cky_decode(scores: &SplitScores) -> Result<BinaryTree> {
    let n = scores.len();
    if n == 0 {
        return Err(Error::InvalidArgument("cannot decode an empty sentence".into()));
    }
    let mut best = vec![0.0; n * n];
    let mut split = vec![0usize; n * n];
    for len in 2..=n {
        for i in 0..=n - len {
            let j = i + len - 1;
            let mut arg = i;
            let mut top = f64::NEG_INFINITY;
            for k in i..j {
                let v = scores.get(i, j, k) + best[i * n + k] + best[(k + 1) * n + j];
                if v >= top {
                    top = v;
                    arg = k;
                }
            }
            if !top.is_finite() {
                return Err(Error::NonFinite(format!("CKY score for span ({i}, {j})")));
            }
            best[i * n + j] = top;
            split[i * n + j] = arg;
        }
    }
    fn build(i: usize, j: usize, n: usize, split: &[usize]) -> BinaryTree {
        if i == j {
            return BinaryTree::Leaf(i);
        }
        let k = split[i * n + j];
        BinaryTree::node(build(i, k, n, split), build(k + 1, j, n, split))
    }
    Ok(build(0, n - 1, n, &split))
}
