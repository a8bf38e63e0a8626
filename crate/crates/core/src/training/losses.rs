use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::chart::{Chart, Span};
use crate::config::Mode;
use crate::error::{Error, Result};
use crate::model::{Encoded, Layout, PreparedExample};
use crate::numerics::{Graph, Var};

const COS_EPS: f64 = 1e-8;

/// Loss components for one batch or epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_rec: f64,
    pub l_cl: f64,
    pub l_rep: f64,
    pub total: f64,
    pub alpha1: f64,
    pub alpha2: f64,
}

impl LossReport {
    pub fn new(l_rec: f64, l_cl: f64, l_rep: f64, alpha1: f64, alpha2: f64) -> Self {
        LossReport {
            l_rec,
            l_cl,
            l_rep,
            total: l_rec + alpha1 * l_cl + alpha2 * l_rep,
            alpha1,
            alpha2,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.l_rec, self.l_cl, self.l_rep, self.total].iter().all(|x| x.is_finite())
    }

    /// Component-wise mean; the total is recomputed from the means.
    pub fn mean(reports: &[LossReport]) -> Option<LossReport> {
        let first = reports.first()?;
        let k = reports.len() as f64;
        let avg = |f: fn(&LossReport) -> f64| reports.iter().map(f).sum::<f64>() / k;
        Some(LossReport::new(
            avg(|r| r.l_rec),
            avg(|r| r.l_cl),
            avg(|r| r.l_rep),
            first.alpha1,
            first.alpha2,
        ))
    }
}

/// Spans of length at least two, shortest first, left to right.
pub fn internal_spans(n: usize) -> Vec<Span> {
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for len in 2..=n {
        for i in 0..=n - len {
            out.push(Span::new(i, i + len - 1));
        }
    }
    out
}

/// Blank filling from the outside context of every leaf. With text, the
/// target is the token under a softmax over the vocabulary (tied to the
/// input embeddings). Without text, the target is the leaf's own clip among
/// the sentence's clip terminals.
pub fn reconstruction_loss(
    g: &mut Graph<'_>,
    l: &Layout,
    chart: &Chart,
    enc: &Encoded,
    ex: &PreparedExample,
) -> Result<Var> {
    let n = chart.len();
    let mut terms = Vec::with_capacity(n);
    match &ex.token_ids {
        Some(ids) => {
            let table = g.param(l.word_embeddings);
            let v = g.tensor(table).rows();
            for (i, &tok) in ids.iter().enumerate() {
                if tok >= v {
                    return Err(Error::Data(format!("example {}: token id {tok} outside a vocabulary of {v}", ex.id)));
                }
                let h = chart.outside_vec(Span::new(i, i));
                let p = l.reconstruction.forward(g, h);
                let logits = g.matvec(table, p);
                terms.push(g.nll(logits, tok));
            }
        }
        None => {
            let leaves: Vec<Var> = enc.terminals.clone();
            let keys = g.stack_rows(&leaves);
            for i in 0..n {
                let h = chart.outside_vec(Span::new(i, i));
                let logits = g.matvec(keys, h);
                terms.push(g.nll(logits, i));
            }
        }
    }
    Ok(g.mean(&terms))
}

/// `1 − cos` alignment between clip, word and region projections.
pub fn representation_loss(g: &mut Graph<'_>, l: &Layout, enc: &Encoded, mode: Mode) -> Var {
    let one = g.constant_scalar(1.0);
    let speech: Vec<Var> = enc.clips.iter().map(|&r| l.align_speech.forward(g, r)).collect();
    let vision: Vec<Var> = enc.region_raw.iter().map(|&v| l.align_vision.forward(g, v)).collect();
    let (s_avg, v_avg) = (g.mean(&speech), g.mean(&vision));
    let c = g.cosine(s_avg, v_avg, COS_EPS);
    let global = g.sub(one, c);
    match (mode, &enc.words) {
        (Mode::Full, Some(words)) => {
            let mut per = Vec::with_capacity(words.len());
            for (&s, &w) in speech.iter().zip(words) {
                let t = l.align_text.forward(g, w);
                let c = g.cosine(s, t, COS_EPS);
                per.push(g.sub(one, c));
            }
            let local = g.mean(&per);
            g.add(local, global)
        }
        _ => global,
    }
}

/// One example's contribution to the contrastive objective.
#[derive(Clone, Copy)]
pub struct ContrastItem<'c> {
    pub chart: &'c Chart,
    /// Projected regions `[M, d]` of the example's own image.
    pub regions: Var,
}

/// Negatives for one positive span.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Negative {
    /// Batch position whose image replaces the positive image.
    pub image: usize,
    /// Batch position and span replacing the positive span.
    pub example: usize,
    pub span: Span,
}

/// Draws one negative image and one negative span (both from other batch
/// members) for every internal span of every example, in
/// [`internal_spans`] order. Empty when the batch has a single member.
pub fn sample_negatives<R: Rng>(leaf_counts: &[usize], rng: &mut R) -> Vec<Vec<Negative>> {
    let b = leaf_counts.len();
    let mut out = Vec::with_capacity(b);
    for (pos, &n) in leaf_counts.iter().enumerate() {
        if b < 2 {
            out.push(Vec::new());
            continue;
        }
        let other = |rng: &mut R| {
            let k = rng.random_range(0..b - 1);
            if k >= pos {
                k + 1
            } else {
                k
            }
        };
        let spans = internal_spans(n);
        let mut negs = Vec::with_capacity(spans.len());
        for _ in &spans {
            let image = other(rng);
            let example = other(rng);
            let choices = internal_spans(leaf_counts[example]);
            let span = if choices.is_empty() {
                Span::new(0, 0)
            } else {
                choices[rng.random_range(0..choices.len())]
            };
            negs.push(Negative { image, example, span });
        }
        out.push(negs);
    }
    out
}

/// `max_m v'_mᵀ (h_in + h_out)` for a span against an image.
pub fn span_similarity(g: &mut Graph<'_>, chart: &Chart, span: Span, regions: Var) -> Var {
    let v = g.add(chart.inside_vec(span), chart.outside_vec(span));
    let scores = g.matvec(regions, v);
    g.max(scores)
}

/// Per-example contrastive loss: hinge terms over internal spans plus a
/// cross-image softmax term per leaf.
pub fn contrastive_loss(
    g: &mut Graph<'_>,
    items: &[ContrastItem<'_>],
    negatives: &[Vec<Negative>],
    margin: f64,
) -> Result<Vec<Var>> {
    let eps = g.constant_scalar(margin);
    let mut out = Vec::with_capacity(items.len());
    for (b, item) in items.iter().enumerate() {
        let chart = item.chart;
        let mut terms = Vec::new();
        if items.len() > 1 {
            let spans = internal_spans(chart.len());
            let negs = negatives.get(b).map(Vec::as_slice).unwrap_or(&[]);
            if negs.len() != spans.len() {
                return Err(Error::InvalidArgument(format!(
                    "{} negatives for {} spans of batch member {b}",
                    negs.len(),
                    spans.len()
                )));
            }
            for (&span, neg) in spans.iter().zip(negs) {
                let q = chart.marginal_var(g, span)?;
                let sim = span_similarity(g, chart, span, item.regions);
                let pos = g.mul(sim, q);

                let other = items[neg.example].chart;
                let q_neg = other.marginal_var(g, neg.span)?;
                let sim_neg = span_similarity(g, other, neg.span, item.regions);
                let d_span = g.mul(sim_neg, q_neg);

                let sim_img = span_similarity(g, chart, span, items[neg.image].regions);
                let d_img = g.mul(sim_img, q);

                for d in [d_span, d_img] {
                    let gap = g.sub(d, pos);
                    let gap = g.add(gap, eps);
                    terms.push(g.relu(gap));
                }
            }
        }
        for i in 0..chart.len() {
            let leaf = Span::new(i, i);
            let sims: Vec<Var> = items.iter().map(|it| span_similarity(g, chart, leaf, it.regions)).collect();
            let logits = g.stack(&sims);
            terms.push(g.nll(logits, b));
        }
        out.push(g.add_all(&terms));
    }
    Ok(out)
}
