//! Objectives, the optimisation loop, checkpoints and inference.

mod checkpoint;
mod losses;
mod parser;
mod verify;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chart::Chart;
use crate::config::{Mode, RunConfig};
use crate::corpus::{ExampleBundle, Vocabulary};
use crate::decode::{aggregate, bracket_counts, Averaging};
use crate::error::{Error, Result};
use crate::features::{build_pair_matrix, PairRelevanceMatrix};
use crate::model::{encode, prepare, Layout, ModelParams, PreparedExample};
use crate::numerics::{Adam, Dropout, Gradients, Graph, ParamStore, Var};

pub use checkpoint::Checkpoint;
pub use losses::{
    contrastive_loss, internal_spans, reconstruction_loss, representation_loss, sample_negatives, span_similarity,
    ContrastItem, LossReport, Negative,
};
pub use parser::{Analysis, Parser};
pub use verify::{objective_check, verification_suite, CheckResult};

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub l_rec: f64,
    pub l_cl: f64,
    pub l_rep: f64,
    pub total: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heldout_sent_f1: Option<f64>,
}

fn with_id(id: &str, e: Error) -> Error {
    match e {
        Error::NonFinite(m) => Error::NonFinite(format!("example {id}: {m}")),
        Error::DegenerateChart(v) => Error::Data(format!("example {id}: degenerate chart (root inside score {v:e})")),
        other => other,
    }
}

/// Builds the batch objective on `g`: per-example charts, the three losses
/// averaged over the batch, and their weighted total.
pub fn batch_objective(
    g: &mut Graph<'_>,
    layout: &Layout,
    config: &RunConfig,
    batch: &[&PreparedExample],
    negatives: &[Vec<Negative>],
    dropout: &mut Dropout,
) -> Result<(Var, LossReport)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let cp = layout.chart_params();
    let mut charts: Vec<Chart> = Vec::with_capacity(batch.len());
    let mut regions = Vec::with_capacity(batch.len());
    let mut rec = Vec::with_capacity(batch.len());
    let mut rep = Vec::with_capacity(batch.len());
    for ex in batch {
        let enc = encode(g, layout, ex, config).map_err(|e| with_id(&ex.id, e))?;
        let mut chart = Chart::inside(g, &cp, &enc.terminals, &enc.fusion, dropout).map_err(|e| with_id(&ex.id, e))?;
        chart.outside(g, &cp, dropout).map_err(|e| with_id(&ex.id, e))?;
        rec.push(reconstruction_loss(g, layout, &chart, &enc, ex)?);
        rep.push(representation_loss(g, layout, &enc, config.mode));
        regions.push(enc.regions);
        charts.push(chart);
    }
    let items: Vec<ContrastItem<'_>> = charts
        .iter()
        .zip(&regions)
        .map(|(chart, &regions)| ContrastItem { chart, regions })
        .collect();
    let cl = contrastive_loss(g, &items, negatives, config.margin).map_err(|e| match e {
        Error::DegenerateChart(_) => with_id(&batch[0].id, e),
        other => other,
    })?;
    for (k, ex) in batch.iter().enumerate() {
        for (what, v) in [("reconstruction", rec[k]), ("contrastive", cl[k]), ("representation", rep[k])] {
            if !g.scalar(v).is_finite() {
                return Err(Error::NonFinite(format!("example {}: {what} loss is {}", ex.id, g.scalar(v))));
            }
        }
    }
    let (rec, cl, rep) = (g.mean(&rec), g.mean(&cl), g.mean(&rep));
    let wc = g.scale(cl, config.alpha1);
    let wr = g.scale(rep, config.alpha2);
    let total = g.add(rec, wc);
    let total = g.add(total, wr);
    let report = LossReport::new(g.scalar(rec), g.scalar(cl), g.scalar(rep), config.alpha1, config.alpha2);
    debug_assert_eq!(report.total, g.scalar(total));
    Ok((total, report))
}

/// Loss and gradients for a fixed batch and fixed negatives, without
/// dropout. Used by the finite-difference checker.
pub fn objective_with_gradients(
    store: &ParamStore,
    layout: &Layout,
    config: &RunConfig,
    batch: &[&PreparedExample],
    negatives: &[Vec<Negative>],
) -> Result<(f64, Gradients)> {
    let mut g = Graph::new(store);
    let (total, _) = batch_objective(&mut g, layout, config, batch, negatives, &mut Dropout::disabled())?;
    Ok((g.scalar(total), g.backward(total)))
}

/// Model, optimiser and corpus-level state for one run.
pub struct Trainer {
    pub config: RunConfig,
    pub model: ModelParams,
    pub optimizer: Adam,
    pub vocab: Vocabulary,
    pub pairs: PairRelevanceMatrix,
    pub epochs_done: usize,
    rng: ChaCha8Rng,
}

impl Trainer {
    /// Fresh run: vocabulary and pair relevance come from `corpus`.
    pub fn new(config: RunConfig, corpus: &[ExampleBundle]) -> Result<Self> {
        config.validate()?;
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let vocab = match config.mode {
            Mode::Full => Vocabulary::from_corpus(corpus),
            Mode::Textless => Vocabulary::new(std::iter::empty()),
        };
        let sets: Vec<Vec<usize>> = corpus.iter().map(|b| b.regions.categories().collect()).collect();
        let categories = sets.iter().flatten().max().map_or(1, |m| m + 1);
        let pairs = build_pair_matrix(&sets, categories)?;
        let model = ModelParams::new(&config, vocab.len(), config.seed);
        let optimizer = Adam::new(&model.store, config.learning_rate);
        let rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
        Ok(Trainer {
            config,
            model,
            optimizer,
            vocab,
            pairs,
            epochs_done: 0,
            rng,
        })
    }

    pub fn parser(&self) -> Parser<'_> {
        Parser::new(&self.config, &self.model, &self.vocab, &self.pairs)
    }

    /// Validated training instances. Sentences with one leaf or longer than
    /// `max_text_length` are dropped.
    pub fn prepare(&self, corpus: &[ExampleBundle]) -> Result<Vec<PreparedExample>> {
        let mut out = Vec::with_capacity(corpus.len());
        for b in corpus {
            let n = b.leaf_count();
            if n < 2 || n > self.config.max_text_length {
                continue;
            }
            out.push(prepare(b, &self.vocab, &self.pairs, &self.config, true)?);
        }
        if out.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        Ok(out)
    }

    /// One Adam update on `batch` with freshly sampled negatives.
    pub fn step(&mut self, batch: &[&PreparedExample]) -> Result<LossReport> {
        let counts: Vec<usize> = batch.iter().map(|e| e.len()).collect();
        let negatives = sample_negatives(&counts, &mut self.rng);
        let mut dropout = Dropout::new(self.config.dropout, self.rng.random());
        let (report, grads) = {
            let mut g = Graph::new(&self.model.store);
            let (total, report) =
                batch_objective(&mut g, &self.model.layout, &self.config, batch, &negatives, &mut dropout)?;
            (report, g.backward(total))
        };
        if !grads.all_finite() {
            let ids: Vec<&str> = batch.iter().map(|e| e.id.as_str()).collect();
            return Err(Error::NonFinite(format!("gradient for batch [{}]", ids.join(", "))));
        }
        self.optimizer.step(&mut self.model.store, &grads)?;
        Ok(report)
    }

    /// Batch losses in evaluation mode: no dropout, negatives drawn from
    /// `seed`. Parameters are untouched.
    pub fn evaluate(&self, batch: &[&PreparedExample], seed: u64) -> Result<LossReport> {
        let counts: Vec<usize> = batch.iter().map(|e| e.len()).collect();
        let negatives = sample_negatives(&counts, &mut ChaCha8Rng::seed_from_u64(seed));
        let mut g = Graph::new(&self.model.store);
        let (_, report) = batch_objective(
            &mut g,
            &self.model.layout,
            &self.config,
            batch,
            &negatives,
            &mut Dropout::disabled(),
        )?;
        Ok(report)
    }

    /// Shuffled pass over `data`; returns the mean of the batch reports.
    pub fn run_epoch(&mut self, data: &[PreparedExample]) -> Result<LossReport> {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        let mut reports = Vec::new();
        for chunk in order.chunks(self.config.batch_size) {
            let batch: Vec<&PreparedExample> = chunk.iter().map(|&k| &data[k]).collect();
            reports.push(self.step(&batch)?);
        }
        self.epochs_done += 1;
        LossReport::mean(&reports).ok_or(Error::EmptyCorpus)
    }

    /// Mean sentence-level F1 against gold trees, over examples that have one.
    pub fn heldout_sent_f1(&self, heldout: &[ExampleBundle]) -> Result<Option<f64>> {
        let parser = self.parser();
        let (mut pred, mut gold) = (Vec::new(), Vec::new());
        for b in heldout {
            let Some(tree) = b.gold_tree() else { continue };
            gold.push(tree?);
            pred.push(parser.parse(b)?);
        }
        if gold.is_empty() {
            return Ok(None);
        }
        Ok(Some(aggregate(&bracket_counts(&pred, &gold)?, Averaging::Sentence)))
    }

    /// Runs the configured number of epochs, calling `on_epoch` after each.
    pub fn fit(
        &mut self,
        corpus: &[ExampleBundle],
        heldout: &[ExampleBundle],
        mut on_epoch: impl FnMut(&EpochMetrics, &Trainer) -> Result<()>,
    ) -> Result<Vec<EpochMetrics>> {
        let data = self.prepare(corpus)?;
        let mut log = Vec::with_capacity(self.config.epochs);
        while self.epochs_done < self.config.epochs {
            let r = self.run_epoch(&data)?;
            let m = EpochMetrics {
                epoch: self.epochs_done,
                l_rec: r.l_rec,
                l_cl: r.l_cl,
                l_rep: r.l_rep,
                total: r.total,
                heldout_sent_f1: self.heldout_sent_f1(heldout)?,
            };
            on_epoch(&m, self)?;
            log.push(m);
        }
        Ok(log)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            dims_hash: self.config.dims_hash(),
            epochs_done: self.epochs_done,
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            pairs: self.pairs.clone(),
            params: self.model.store.clone(),
            optimizer: self.optimizer.clone(),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        ck.verify()?;
        let model = ModelParams::from_store(&ck.config, ck.params)?;
        let rng = ChaCha8Rng::seed_from_u64(ck.config.seed.wrapping_add(ck.epochs_done as u64 + 1));
        Ok(Trainer {
            config: ck.config,
            model,
            optimizer: ck.optimizer,
            vocab: ck.vocab,
            pairs: ck.pairs,
            epochs_done: ck.epochs_done,
            rng,
        })
    }
}
