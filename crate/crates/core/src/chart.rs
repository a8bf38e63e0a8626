//! Inside-outside span chart with visual, pitch and voice-activity fusion.
//!
//! Spans are 0-based and inclusive. Every cell holds graph nodes so losses
//! computed from the chart backpropagate into the composition parameters.

use serde::{Deserialize, Serialize};

use crate::decode::{cky_decode, BinaryTree, SplitScores};
use crate::error::{Error, Result};
use crate::features::VoiceActivity;
use crate::numerics::{mlp_compose, sigmoid, Dropout, Graph, Mlp, ParamId, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end, "span ({start}, {end}) is reversed");
        Span { start, end }
    }

    /// Number of leaves covered.
    pub fn width(&self) -> usize {
        self.end - self.start + 1
    }
}

/// Composition parameters read by both passes.
#[derive(Clone, Copy, Debug)]
pub struct ChartParams {
    pub compose_inside: Mlp,
    pub compose_outside: Mlp,
    pub bilinear_inside: ParamId,
    pub bilinear_outside: ParamId,
    pub root_outside_bias: ParamId,
}

/// Per-example object features.
#[derive(Clone, Copy, Debug)]
pub struct RegionContext {
    /// Projected object vectors `v'_m`, `[M, d]`; attention keys.
    pub keys: Var,
    /// `v'_m + l_m`, `[M, d]`.
    pub values: Var,
    /// Pair relevance between this image's objects, `[M, M]`.
    pub pairs: Var,
}

/// Non-text signals mixed into the inside pass. Absent parts contribute
/// nothing; [`Fusion::disabled`] gives the plain text-only chart.
#[derive(Clone, Debug, Default)]
pub struct Fusion {
    pub regions: Option<RegionContext>,
    /// Pitch vector per leaf, already at chart width.
    pub pitch: Option<Vec<Var>>,
    pub activity: Option<Vec<VoiceActivity>>,
    pub gamma: f64,
    pub lambda: f64,
}

impl Fusion {
    pub fn disabled() -> Self {
        Fusion::default()
    }
}

/// Attention over objects and the attended visual feature for `h`.
pub fn visual_span_feature(g: &mut Graph<'_>, h: Var, ctx: &RegionContext) -> (Var, Var) {
    let scores = g.matvec(ctx.keys, h);
    let attn = g.softmax(scores);
    let u = g.mat_t_vec(ctx.values, attn);
    (attn, u)
}

/// `Σ_{m,n} attn_left[m] · attn_right[n] · pairs[m, n]`.
pub fn region_composition_score(g: &mut Graph<'_>, attn_left: Var, attn_right: Var, pairs: Var) -> Var {
    let pr = g.matvec(pairs, attn_right);
    g.dot(attn_left, pr)
}

/// Density penalty for span `(i, j)` from clip-level voice activity; zero
/// for single leaves.
pub fn voice_activity_score(i: usize, j: usize, activity: &[VoiceActivity]) -> f64 {
    if j <= i {
        return 0.0;
    }
    let range = &activity[i..j];
    let max_silent = range.iter().map(|a| a.silent).fold(f64::NEG_INFINITY, f64::max);
    let avg_active = range.iter().map(|a| a.active).sum::<f64>() / range.len() as f64;
    -sigmoid(max_silent / (avg_active + 1e-6))
}

struct Cell {
    h_in: Var,
    s_in: Var,
    /// `s_{i,j,k}` for `k = i..j`.
    splits: Vec<Var>,
    weights: Option<Var>,
    attn: Option<Var>,
    /// `h_in + γ u`, before pitch is added by the parent.
    fused: Var,
    h_out: Option<Var>,
    s_out: Option<Var>,
}

pub struct Chart {
    n: usize,
    cells: Vec<Option<Cell>>,
    inside_writes: usize,
    outside_writes: usize,
}

fn check(g: &Graph<'_>, v: Var, what: &str, i: usize, j: usize, k: usize) -> Result<()> {
    if g.value(v).iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} at (i={i}, j={j}, k={k})")))
    }
}

impl Chart {
    fn at(&self, i: usize, j: usize) -> usize {
        assert!(i <= j && j < self.n, "span ({i}, {j}) outside a chart of {} leaves", self.n);
        i * self.n + j
    }

    fn cell(&self, s: Span) -> &Cell {
        self.cells[self.at(s.start, s.end)]
            .as_ref()
            .expect("chart cell not filled")
    }

    /// Bottom-up pass over increasing span lengths.
    pub fn inside(
        g: &mut Graph<'_>,
        params: &ChartParams,
        terminals: &[Var],
        fusion: &Fusion,
        dropout: &mut Dropout,
    ) -> Result<Chart> {
        let n = terminals.len();
        if n == 0 {
            return Err(Error::InvalidArgument("inside pass over zero leaves".into()));
        }
        if let Some(p) = &fusion.pitch {
            if p.len() != n {
                return Err(Error::Alignment(format!("{} pitch vectors for {n} leaves", p.len())));
            }
        }
        if let Some(a) = &fusion.activity {
            if a.len() != n {
                return Err(Error::Alignment(format!("{} voice-activity entries for {n} leaves", a.len())));
            }
        }
        let mut chart = Chart {
            n,
            cells: (0..n * n).map(|_| None).collect(),
            inside_writes: 0,
            outside_writes: 0,
        };
        let bil = g.param(params.bilinear_inside);
        for (i, &h) in terminals.iter().enumerate() {
            let s = g.constant_scalar(0.0);
            chart.store_inside(g, fusion, i, i, h, s, Vec::new(), None)?;
        }
        for len in 2..=n {
            for i in 0..=n - len {
                let j = i + len - 1;
                let pooled = match &fusion.pitch {
                    Some(p) => {
                        let m = g.mean(&p[i..=j]);
                        Some(g.scale(m, fusion.lambda))
                    }
                    None => None,
                };
                let activity = fusion.activity.as_ref().map(|a| voice_activity_score(i, j, a));
                let mut composed = Vec::with_capacity(j - i);
                let mut splits = Vec::with_capacity(j - i);
                for k in i..j {
                    let (left, right) = (chart.cell(Span::new(i, k)), chart.cell(Span::new(k + 1, j)));
                    let (mut hl, mut hr) = (left.fused, right.fused);
                    if let Some(p) = pooled {
                        hl = g.add(hl, p);
                        hr = g.add(hr, p);
                    }
                    let (sl, sr) = (left.s_in, right.s_in);
                    let region = match (&fusion.regions, left.attn, right.attn) {
                        (Some(ctx), Some(al), Some(ar)) => Some(region_composition_score(g, al, ar, ctx.pairs)),
                        _ => None,
                    };
                    let mut s = g.bilinear(hl, bil, hr);
                    if let Some(r) = region {
                        s = g.add(s, r);
                    }
                    if let Some(a) = activity {
                        let a = g.constant_scalar(a);
                        s = g.add(s, a);
                    }
                    let s = g.add(s, sl);
                    let s = g.add(s, sr);
                    check(g, s, "inside score", i, j, k)?;
                    composed.push(mlp_compose(g, &params.compose_inside, hl, hr, dropout)?);
                    splits.push(s);
                }
                let stacked = g.stack(&splits);
                let w = g.softmax(stacked);
                let h = g.weighted_sum(w, &composed);
                let s = g.dot(w, stacked);
                check(g, h, "inside vector", i, j, j)?;
                chart.store_inside(g, fusion, i, j, h, s, splits, Some(w))?;
            }
        }
        Ok(chart)
    }

    #[allow(clippy::too_many_arguments)]
    fn store_inside(
        &mut self,
        g: &mut Graph<'_>,
        fusion: &Fusion,
        i: usize,
        j: usize,
        h: Var,
        s: Var,
        splits: Vec<Var>,
        weights: Option<Var>,
    ) -> Result<()> {
        let (attn, fused) = match &fusion.regions {
            Some(ctx) => {
                let (attn, u) = visual_span_feature(g, h, ctx);
                let u = g.scale(u, fusion.gamma);
                (Some(attn), g.add(h, u))
            }
            None => (None, h),
        };
        let at = self.at(i, j);
        debug_assert!(self.cells[at].is_none(), "cell ({i}, {j}) written twice");
        self.cells[at] = Some(Cell {
            h_in: h,
            s_in: s,
            splits,
            weights,
            attn,
            fused,
            h_out: None,
            s_out: None,
        });
        self.inside_writes += 1;
        Ok(())
    }

    /// Top-down pass over decreasing span lengths. The root context is a
    /// learned vector with outside score zero.
    pub fn outside(&mut self, g: &mut Graph<'_>, params: &ChartParams, dropout: &mut Dropout) -> Result<()> {
        let n = self.n;
        let bil = g.param(params.bilinear_outside);
        let root = self.at(0, n - 1);
        let bias = g.param(params.root_outside_bias);
        let zero = g.constant_scalar(0.0);
        {
            let c = self.cells[root].as_mut().expect("inside pass not run");
            c.h_out = Some(bias);
            c.s_out = Some(zero);
        }
        self.outside_writes += 1;
        for len in (1..n).rev() {
            for i in 0..=n - len {
                let j = i + len - 1;
                let mut vecs = Vec::new();
                let mut scores = Vec::new();
                // contexts to the left: parent (k, j), sibling (k, i - 1)
                // contexts to the right: parent (i, k), sibling (j + 1, k)
                let contexts = (0..i)
                    .map(|k| (k, Span::new(k, j), Span::new(k, i - 1)))
                    .chain((j + 1..n).map(|k| (k, Span::new(i, k), Span::new(j + 1, k))));
                for (k, parent, sibling) in contexts {
                    let p = self.cell(parent);
                    let (ho, so) = (p.h_out.expect("parent outside"), p.s_out.expect("parent outside"));
                    let sib = self.cell(sibling);
                    let (hi, si) = (sib.h_in, sib.s_in);
                    let s = g.bilinear(ho, bil, hi);
                    let s = g.add(s, so);
                    let s = g.add(s, si);
                    check(g, s, "outside score", i, j, k)?;
                    vecs.push(mlp_compose(g, &params.compose_outside, ho, hi, dropout)?);
                    scores.push(s);
                }
                let stacked = g.stack(&scores);
                let w = g.softmax(stacked);
                let h = g.weighted_sum(w, &vecs);
                let s = g.dot(w, stacked);
                check(g, h, "outside vector", i, j, 0)?;
                let at = self.at(i, j);
                let c = self.cells[at].as_mut().expect("inside pass not run");
                debug_assert!(c.h_out.is_none(), "outside cell ({i}, {j}) written twice");
                c.h_out = Some(h);
                c.s_out = Some(s);
                self.outside_writes += 1;
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn root(&self) -> Span {
        Span::new(0, self.n - 1)
    }

    /// Cells written by the (inside, outside) passes.
    pub fn writes(&self) -> (usize, usize) {
        (self.inside_writes, self.outside_writes)
    }

    pub fn inside_vec(&self, s: Span) -> Var {
        self.cell(s).h_in
    }

    pub fn inside_score(&self, s: Span) -> Var {
        self.cell(s).s_in
    }

    /// Panics if the outside pass has not run.
    pub fn outside_vec(&self, s: Span) -> Var {
        self.cell(s).h_out.expect("outside pass not run")
    }

    pub fn outside_score(&self, s: Span) -> Var {
        self.cell(s).s_out.expect("outside pass not run")
    }

    /// `s_{i,j,k}` nodes for `k = i..j`; empty for leaves.
    pub fn split_vars(&self, s: Span) -> &[Var] {
        &self.cell(s).splits
    }

    /// Softmax weights over decompositions; empty for leaves.
    pub fn split_weights(&self, g: &Graph<'_>, s: Span) -> Vec<f64> {
        self.cell(s).weights.map(|w| g.value(w).to_vec()).unwrap_or_default()
    }

    /// Object attention for a span, when regions are fused.
    pub fn attention(&self, s: Span) -> Option<Var> {
        self.cell(s).attn
    }

    /// Differentiable span marginal `s_in · s_out / s_in(root)`.
    pub fn marginal_var(&self, g: &mut Graph<'_>, s: Span) -> Result<Var> {
        let root = self.inside_score(self.root());
        let denom = g.scalar(root);
        if denom.abs() < 1e-12 {
            return Err(Error::DegenerateChart(denom));
        }
        let num = g.mul(self.inside_score(s), self.outside_score(s));
        Ok(g.div(num, root))
    }

    pub fn span_marginal(&self, g: &Graph<'_>, s: Span) -> Result<f64> {
        let denom = g.scalar(self.inside_score(self.root()));
        if denom.abs() < 1e-12 {
            return Err(Error::DegenerateChart(denom));
        }
        Ok(g.scalar(self.inside_score(s)) * g.scalar(self.outside_score(s)) / denom)
    }

    /// Per-node compatibility `s_{i,j,k} − s_{i,k} − s_{k+1,j}` for decoding.
    pub fn split_scores(&self, g: &Graph<'_>) -> SplitScores {
        SplitScores::from_fn(self.n, |i, j, k| {
            g.scalar(self.cell(Span::new(i, j)).splits[k - i])
                - g.scalar(self.inside_score(Span::new(i, k)))
                - g.scalar(self.inside_score(Span::new(k + 1, j)))
        })
    }

    pub fn decode(&self, g: &Graph<'_>) -> Result<BinaryTree> {
        cky_decode(&self.split_scores(g))
    }

    /// Object index best matching the span: argmax of `v'_mᵀ h_in`, ties to
    /// the smallest index.
    pub fn ground(&self, g: &Graph<'_>, s: Span, keys: Var) -> usize {
        let h = g.value(self.inside_vec(s));
        let t = g.tensor(keys);
        let mut best = (0, f64::NEG_INFINITY);
        for m in 0..t.rows() {
            let v: f64 = t.row(m).iter().zip(h).map(|(a, b)| a * b).sum();
            if v > best.1 {
                best = (m, v);
            }
        }
        best.0
    }

    /// Every score in the chart as plain numbers.
    pub fn dump(&self, g: &Graph<'_>) -> ChartDump {
        let mut cells = Vec::with_capacity(self.n * (self.n + 1) / 2);
        for len in 1..=self.n {
            for i in 0..=self.n - len {
                let s = Span::new(i, i + len - 1);
                let c = self.cell(s);
                let splits: Vec<f64> = c.splits.iter().map(|&v| g.scalar(v)).collect();
                let best_split = (!splits.is_empty()).then(|| {
                    let arg = (0..splits.len()).fold(0, |b, k| if splits[k] > splits[b] { k } else { b });
                    s.start + arg
                });
                cells.push(CellDump {
                    start: s.start,
                    end: s.end,
                    inside_score: g.scalar(c.s_in),
                    outside_score: c.s_out.map(|v| g.scalar(v)),
                    marginal: c.s_out.and_then(|_| self.span_marginal(g, s).ok()),
                    split_scores: splits,
                    best_split,
                });
            }
        }
        ChartDump { leaves: self.n, cells }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellDump {
    pub start: usize,
    pub end: usize,
    pub inside_score: f64,
    pub outside_score: Option<f64>,
    pub marginal: Option<f64>,
    pub split_scores: Vec<f64>,
    pub best_split: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChartDump {
    pub leaves: usize,
    pub cells: Vec<CellDump>,
}
