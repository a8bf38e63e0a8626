//! Learnable parameters and the per-example encoders that feed the chart.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::chart::{ChartParams, Fusion, RegionContext};
use crate::config::{Mode, RunConfig};
use crate::corpus::{ExampleBundle, Vocabulary};
use crate::error::{Error, Result};
use crate::features::{self, PairRelevanceMatrix, VoiceActivity, PITCH_BINS};
use crate::numerics::{lstm_forward, Graph, Init, Linear, Lstm, Mlp, ParamId, ParamStore, Tensor, Var};

/// Handles to every learnable tensor.
#[derive(Clone, Debug)]
pub struct Layout {
    pub word_embeddings: ParamId,
    pub clip_projection: Linear,
    pub word_projection: Linear,
    pub attn_query: ParamId,
    pub attn_key: ParamId,
    pub attn_value: ParamId,
    pub compose_inside: Mlp,
    pub compose_outside: Mlp,
    pub bilinear_inside: ParamId,
    pub bilinear_outside: ParamId,
    pub pitch_embedding: ParamId,
    pub pitch_lstm: Lstm,
    pub pitch_projection: Linear,
    pub region_projection: Linear,
    pub bbox_embed: Linear,
    pub root_outside_bias: ParamId,
    pub reconstruction: Linear,
    pub align_speech: Linear,
    pub align_vision: Linear,
    pub align_text: Linear,
}

#[derive(Clone, Debug)]
pub struct ModelParams {
    pub store: ParamStore,
    pub layout: Layout,
}

impl ModelParams {
    /// Fresh parameters; `vocab_size` includes the unknown-token row.
    pub fn new(config: &RunConfig, vocab_size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let (d, dw, dv, ds, dp, da) = (config.d, config.d_w, config.d_v, config.d_s, config.d_p, config.d_a);
        let hidden = config.hidden_width();
        let square = Init::Xavier { fan_in: d, fan_out: d };
        let r = &mut rng;
        let layout = Layout {
            word_embeddings: s.add("word_embeddings", &[vocab_size, dw], Init::Xavier { fan_in: dw, fan_out: vocab_size }, r),
            clip_projection: Linear::register(&mut s, "clip_projection", ds, d, false, r),
            word_projection: Linear::register(&mut s, "word_projection", dw, d, false, r),
            attn_query: s.add("attn_query", &[d, d], square, r),
            attn_key: s.add("attn_key", &[d, d], square, r),
            attn_value: s.add("attn_value", &[d, d], square, r),
            compose_inside: Mlp::register(&mut s, "compose_inside", 2 * d, hidden, d, r),
            compose_outside: Mlp::register(&mut s, "compose_outside", 2 * d, hidden, d, r),
            bilinear_inside: s.add("bilinear_inside", &[d, d], square, r),
            bilinear_outside: s.add("bilinear_outside", &[d, d], square, r),
            pitch_embedding: s.add("pitch_embedding", &[PITCH_BINS, dp], Init::Xavier { fan_in: dp, fan_out: PITCH_BINS }, r),
            pitch_lstm: Lstm::register(&mut s, "pitch_lstm", dp, dp, r),
            pitch_projection: Linear::register(&mut s, "pitch_projection", dp, d, false, r),
            region_projection: Linear::register(&mut s, "region_projection", dv, d, false, r),
            bbox_embed: Linear::register(&mut s, "bbox_embed", 4, d, true, r),
            root_outside_bias: s.add("root_outside_bias", &[d], Init::Xavier { fan_in: 1, fan_out: d }, r),
            reconstruction: Linear::register(&mut s, "reconstruction", d, dw, false, r),
            align_speech: Linear::register(&mut s, "align_speech", ds, da, false, r),
            align_vision: Linear::register(&mut s, "align_vision", dv, da, false, r),
            align_text: Linear::register(&mut s, "align_text", dw, da, false, r),
        };
        ModelParams { store: s, layout }
    }

    /// Rebuilds handles for a stored tensor set, checking names and shapes.
    pub fn from_store(config: &RunConfig, store: ParamStore) -> Result<Self> {
        let vocab = store
            .id("word_embeddings")
            .map(|id| store.get(id).rows())
            .ok_or_else(|| Error::Checkpoint("missing word_embeddings".into()))?;
        let fresh = ModelParams::new(config, vocab, 0);
        fresh.store.check_layout(&store)?;
        Ok(ModelParams {
            store,
            layout: fresh.layout,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.store.get(self.layout.word_embeddings).rows()
    }

}

impl Layout {
    pub fn chart_params(&self) -> ChartParams {
        ChartParams {
            compose_inside: self.compose_inside,
            compose_outside: self.compose_outside,
            bilinear_inside: self.bilinear_inside,
            bilinear_outside: self.bilinear_outside,
            root_outside_bias: self.root_outside_bias,
        }
    }
}

/// Everything about an example that does not depend on parameters.
#[derive(Clone, Debug)]
pub struct PreparedExample {
    pub id: String,
    pub token_ids: Option<Vec<usize>>,
    pub clip_features: Vec<Vec<f64>>,
    pub pitch_indices: Vec<usize>,
    pub activity: Vec<VoiceActivity>,
    pub region_features: Vec<Vec<f64>>,
    pub unit_boxes: Vec<[f64; 4]>,
    pub categories: Vec<usize>,
    /// `M x M` pair relevance between this image's objects.
    pub object_pairs: Tensor,
}

impl PreparedExample {
    pub fn len(&self) -> usize {
        self.clip_features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clip_features.is_empty()
    }
}

/// Validates and converts a bundle. Unknown tokens map to the unknown row;
/// `strict` turns them into data errors instead.
pub fn prepare(
    bundle: &ExampleBundle,
    vocab: &Vocabulary,
    pairs: &PairRelevanceMatrix,
    config: &RunConfig,
    strict: bool,
) -> Result<PreparedExample> {
    bundle.validate(config.mode)?;
    let id = &bundle.id;
    let with_id = |e: Error| Error::Validation(format!("example {id}: {e}"));
    let token_ids = match (config.mode, &bundle.tokens) {
        (Mode::Full, Some(t)) if strict => Some(vocab.encode_strict(t).map_err(with_id)?),
        (Mode::Full, Some(t)) => Some(vocab.encode_lenient(t)),
        _ => None,
    };
    let s = &bundle.speech;
    if s.clip_features[0].len() != config.d_s {
        return Err(with_id(Error::shape("prepare", format!("clip vectors have {} dims, config d_s = {}", s.clip_features[0].len(), config.d_s))));
    }
    let regions = &bundle.regions;
    if regions.regions[0].feature.len() != config.d_v {
        return Err(with_id(Error::shape("prepare", format!("region vectors have {} dims, config d_v = {}", regions.regions[0].feature.len(), config.d_v))));
    }
    // detector output is ordered by confidence; keep the top `roi_count`
    let kept = &regions.regions[..regions.len().min(config.roi_count)];
    let (w, h) = regions.image_size;
    let unit_boxes = kept
        .iter()
        .map(|r| features::normalize_bbox(&r.bbox, w, h))
        .collect::<Result<Vec<_>>>()
        .map_err(with_id)?;
    let categories: Vec<usize> = kept.iter().map(|r| r.category).collect();
    // categories never seen in training have no co-occurrence evidence
    let c = pairs.category_count();
    let m = categories.len();
    let mut pair_data = Vec::with_capacity(m * m);
    for &a in &categories {
        for &b in &categories {
            pair_data.push(if a < c && b < c { pairs.get(a, b) } else { 0.0 });
        }
    }
    Ok(PreparedExample {
        id: id.clone(),
        token_ids,
        clip_features: s.clip_features.clone(),
        pitch_indices: features::pitch_indices(s).map_err(with_id)?,
        activity: features::vad_aggregate(s, config.vad_frame_period).map_err(with_id)?,
        region_features: kept.iter().map(|r| r.feature.clone()).collect(),
        unit_boxes,
        categories,
        object_pairs: Tensor::new(vec![m, m], pair_data)?,
    })
}

/// Graph nodes shared by the chart and the losses for one example.
pub struct Encoded {
    pub terminals: Vec<Var>,
    pub fusion: Fusion,
    /// Word embeddings per token (full setting only).
    pub words: Option<Vec<Var>>,
    /// Raw clip vectors as constants.
    pub clips: Vec<Var>,
    /// Raw region vectors as constants.
    pub region_raw: Vec<Var>,
    /// Region vectors projected to the chart width, `[M, d]`.
    pub regions: Var,
}

/// Pitch features `p̂_t`: embedding lookup followed by the LSTM.
pub fn pitch_features(g: &mut Graph<'_>, l: &Layout, indices: &[usize]) -> Result<Vec<Var>> {
    let table = g.param(l.pitch_embedding);
    let rows: Vec<Var> = indices.iter().map(|&k| g.row(table, k)).collect();
    lstm_forward(g, &l.pitch_lstm, &rows)
}

/// Terminal vectors: cross-attention from words to clips in the full
/// setting, normalised projected clips in the textless one.
pub fn init_terminals(
    g: &mut Graph<'_>,
    l: &Layout,
    words: Option<&[Var]>,
    clips: &[Var],
) -> Result<Vec<Var>> {
    let projected: Vec<Var> = clips.iter().map(|&r| l.clip_projection.forward(g, r)).collect();
    let Some(words) = words else {
        if clips.is_empty() {
            return Err(Error::InvalidArgument("no speech clips to initialise from".into()));
        }
        return Ok(projected.into_iter().map(|p| g.l2_normalize(p, 1e-8)).collect());
    };
    if words.len() != clips.len() {
        return Err(Error::Alignment(format!("{} words but {} clips", words.len(), clips.len())));
    }
    let (q, k, v) = (g.param(l.attn_query), g.param(l.attn_key), g.param(l.attn_value));
    let keys: Vec<Var> = projected.iter().map(|&r| g.matvec(k, r)).collect();
    let values: Vec<Var> = projected.iter().map(|&r| g.matvec(v, r)).collect();
    let mut out = Vec::with_capacity(words.len());
    for &w in words {
        let wp = l.word_projection.forward(g, w);
        let query = g.matvec(q, wp);
        let scores: Vec<Var> = keys.iter().map(|&key| g.dot(query, key)).collect();
        let scores = g.stack(&scores);
        let attn = g.softmax(scores);
        out.push(g.weighted_sum(attn, &values));
    }
    Ok(out)
}

/// Builds terminals and fusion inputs for one prepared example.
pub fn encode(g: &mut Graph<'_>, l: &Layout, ex: &PreparedExample, config: &RunConfig) -> Result<Encoded> {
    let clips: Vec<Var> = ex.clip_features.iter().map(|r| g.constant_vec(r.clone())).collect();
    let words = match &ex.token_ids {
        Some(ids) => {
            let table = g.param(l.word_embeddings);
            Some(ids.iter().map(|&t| g.row(table, t)).collect::<Vec<_>>())
        }
        None => None,
    };
    let terminals = init_terminals(g, l, words.as_deref(), &clips)?;

    let region_raw: Vec<Var> = ex.region_features.iter().map(|v| g.constant_vec(v.clone())).collect();
    let projected: Vec<Var> = region_raw.iter().map(|&v| l.region_projection.forward(g, v)).collect();
    let regions = g.stack_rows(&projected);

    let fusion = if config.text_only {
        Fusion::disabled()
    } else {
        let mut with_loc = Vec::with_capacity(projected.len());
        for (&vp, b) in projected.iter().zip(&ex.unit_boxes) {
            let unit = g.constant_vec(b.to_vec());
            let loc = l.bbox_embed.forward(g, unit);
            with_loc.push(g.add(vp, loc));
        }
        let values = g.stack_rows(&with_loc);
        let pairs = g.constant(ex.object_pairs.clone());
        let pitch = pitch_features(g, l, &ex.pitch_indices)?
            .into_iter()
            .map(|p| l.pitch_projection.forward(g, p))
            .collect();
        Fusion {
            regions: Some(RegionContext {
                keys: regions,
                values,
                pairs,
            }),
            pitch: Some(pitch),
            activity: config.voice_activity.then(|| ex.activity.clone()),
            gamma: config.gamma,
            lambda: config.lambda,
        }
    };
    Ok(Encoded {
        terminals,
        fusion,
        words,
        clips,
        region_raw,
        regions,
    })
}
