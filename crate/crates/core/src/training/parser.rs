use serde::{Deserialize, Serialize};

use crate::chart::{Chart, ChartDump, Span};
use crate::config::RunConfig;
use crate::corpus::{ExampleBundle, Vocabulary};
use crate::decode::BinaryTree;
use crate::error::Result;
use crate::features::PairRelevanceMatrix;
use crate::model::{encode, prepare, ModelParams, PreparedExample};
use crate::numerics::{Dropout, Graph};

/// Full chart readout for one sentence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub id: String,
    pub tree: BinaryTree,
    pub chart: ChartDump,
    /// Best-matching object per internal node of `tree`.
    pub grounding: Vec<(Span, usize)>,
}

/// Evaluation-mode inference: no dropout, unknown tokens allowed.
pub struct Parser<'a> {
    config: &'a RunConfig,
    model: &'a ModelParams,
    vocab: &'a Vocabulary,
    pairs: &'a PairRelevanceMatrix,
}

impl<'a> Parser<'a> {
    pub fn new(
        config: &'a RunConfig,
        model: &'a ModelParams,
        vocab: &'a Vocabulary,
        pairs: &'a PairRelevanceMatrix,
    ) -> Self {
        Parser {
            config,
            model,
            vocab,
            pairs,
        }
    }

    pub fn prepare(&self, bundle: &ExampleBundle) -> Result<PreparedExample> {
        prepare(bundle, self.vocab, self.pairs, self.config, false)
    }

    /// CKY tree over the example's leaves.
    pub fn parse(&self, bundle: &ExampleBundle) -> Result<BinaryTree> {
        let ex = self.prepare(bundle)?;
        if ex.len() == 1 {
            return Ok(BinaryTree::Leaf(0));
        }
        let l = &self.model.layout;
        let mut g = Graph::new(&self.model.store);
        let enc = encode(&mut g, l, &ex, self.config)?;
        let chart = Chart::inside(&mut g, &l.chart_params(), &enc.terminals, &enc.fusion, &mut Dropout::disabled())?;
        chart.decode(&g)
    }

    /// Tree, every chart score and span-level grounding.
    pub fn analyse(&self, bundle: &ExampleBundle) -> Result<Analysis> {
        let ex = self.prepare(bundle)?;
        let l = &self.model.layout;
        let cp = l.chart_params();
        let mut g = Graph::new(&self.model.store);
        let enc = encode(&mut g, l, &ex, self.config)?;
        let mut chart = Chart::inside(&mut g, &cp, &enc.terminals, &enc.fusion, &mut Dropout::disabled())?;
        chart.outside(&mut g, &cp, &mut Dropout::disabled())?;
        let tree = chart.decode(&g)?;
        let grounding = tree
            .brackets()
            .into_iter()
            .map(|(i, j)| {
                let s = Span::new(i, j);
                (s, chart.ground(&g, s, enc.regions))
            })
            .collect();
        Ok(Analysis {
            id: ex.id.clone(),
            tree,
            chart: chart.dump(&g),
            grounding,
        })
    }
}
