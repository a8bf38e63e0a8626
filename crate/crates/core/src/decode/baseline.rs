use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tree::BinaryTree;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Left,
    Right,
    Random,
}

impl std::str::FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "left" => Ok(BaselineKind::Left),
            "right" => Ok(BaselineKind::Right),
            "random" => Ok(BaselineKind::Random),
            other => Err(Error::InvalidArgument(format!("unknown baseline {other:?}"))),
        }
    }
}

/// Structure-free reference trees. The random baseline picks every split
/// point uniformly, top-down, from a generator seeded by `seed`.
pub fn baseline_tree(n: usize, kind: BaselineKind, seed: u64) -> Result<BinaryTree> {
    if n == 0 {
        return Err(Error::InvalidArgument("baseline tree over zero leaves".into()));
    }
    Ok(match kind {
        BaselineKind::Left => BinaryTree::left_branching(n),
        BaselineKind::Right => BinaryTree::right_branching(n),
        BaselineKind::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            random_split(0, n - 1, &mut rng)
        }
    })
}

fn random_split(i: usize, j: usize, rng: &mut ChaCha8Rng) -> BinaryTree {
    if i == j {
        return BinaryTree::Leaf(i);
    }
    let k = rng.random_range(i..j);
    let left = random_split(i, k, rng);
    let right = random_split(k + 1, j, rng);
    BinaryTree::node(left, right)
}
