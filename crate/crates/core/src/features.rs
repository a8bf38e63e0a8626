//! Engineered per-modality features: normalised box embeddings, the
//! category pair relevance matrix, pitch indices and voice-activity times.

use serde::{Deserialize, Serialize};

use crate::corpus::SpeechTrack;
use crate::error::{Error, Result};
use crate::numerics::{Graph, Linear, Var};

pub const F0_MIN: f64 = 50.0;
pub const F0_MAX: f64 = 500.0;
/// 451 voiced bins (50..=500 Hz) plus the unvoiced row 0.
pub const PITCH_BINS: usize = 452;

pub fn validate_bbox(b: &[f64; 4], w: f64, h: f64) -> Result<()> {
    let [x0, y0, x1, y1] = *b;
    if !b.iter().all(|v| v.is_finite()) {
        return Err(Error::Validation(format!("box {b:?} has a non-finite coordinate")));
    }
    if !(0.0 <= x0 && x0 < x1 && x1 <= w) || !(0.0 <= y0 && y0 < y1 && y1 <= h) {
        return Err(Error::Validation(format!(
            "box {b:?} is empty or outside the {w} x {h} image"
        )));
    }
    Ok(())
}

/// Scales a pixel box into the unit square.
pub fn normalize_bbox(b: &[f64; 4], w: f64, h: f64) -> Result<[f64; 4]> {
    validate_bbox(b, w, h)?;
    Ok([b[0] / w, b[1] / h, b[2] / w, b[3] / h])
}

/// Normalises box `index` and embeds it with `embed`; returns `(b', l)`.
pub fn normalize_and_embed_bbox(
    g: &mut Graph<'_>,
    embed: &Linear,
    index: usize,
    b: &[f64; 4],
    w: f64,
    h: f64,
) -> Result<([f64; 4], Var)> {
    let unit = normalize_bbox(b, w, h).map_err(|e| Error::Validation(format!("object {index}: {e}")))?;
    let x = g.constant_vec(unit.to_vec());
    Ok((unit, embed.forward(g, x)))
}

/// Category co-occurrence scores:
/// `M[a][b] = Co(a, b) / Σ_c (Co(a, c) + Co(c, b))`, zero when the
/// denominator is zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRelevanceMatrix {
    categories: usize,
    values: Vec<f64>,
}

impl PairRelevanceMatrix {
    pub fn zeros(categories: usize) -> Self {
        PairRelevanceMatrix {
            categories,
            values: vec![0.0; categories * categories],
        }
    }

    pub fn category_count(&self) -> usize {
        self.categories
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.values[a * self.categories + b]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Builds the matrix from raw co-occurrence counts.
    pub fn from_counts(categories: usize, co: &[f64]) -> Self {
        let c = categories;
        let row: Vec<f64> = (0..c).map(|a| (0..c).map(|g| co[a * c + g]).sum()).collect();
        let col: Vec<f64> = (0..c).map(|b| (0..c).map(|g| co[g * c + b]).sum()).collect();
        let mut values = vec![0.0; c * c];
        for a in 0..c {
            for b in 0..c {
                let denom = row[a] + col[b];
                values[a * c + b] = if denom > 0.0 { co[a * c + b] / denom } else { 0.0 };
            }
        }
        PairRelevanceMatrix { categories, values }
    }
}

/// Number of images in which categories `a` and `b` are both detected on
/// distinct objects; each image counts at most once per pair.
pub fn co_counts(category_sets: &[Vec<usize>], categories: usize) -> Result<Vec<f64>> {
    let c = categories;
    let mut co = vec![0.0; c * c];
    for (img, cats) in category_sets.iter().enumerate() {
        let mut present = vec![0usize; c];
        for &k in cats {
            if k >= c {
                return Err(Error::Validation(format!("image {img}: category {k} outside 0..{c}")));
            }
            present[k] += 1;
        }
        for a in 0..c {
            for b in 0..c {
                let both = if a == b { present[a] >= 2 } else { present[a] > 0 && present[b] > 0 };
                if both {
                    co[a * c + b] += 1.0;
                }
            }
        }
    }
    Ok(co)
}

pub fn build_pair_matrix(category_sets: &[Vec<usize>], categories: usize) -> Result<PairRelevanceMatrix> {
    if category_sets.is_empty() {
        return Err(Error::InvalidArgument("pair matrix over an empty corpus".into()));
    }
    Ok(PairRelevanceMatrix::from_counts(categories, &co_counts(category_sets, categories)?))
}

/// Embedding row for a clip: mean f0 over voiced frames, clamped to
/// [50, 500] Hz and rounded; 0 when no frame is voiced.
pub fn pitch_index(frames: &[f64]) -> Result<usize> {
    if frames.is_empty() {
        return Err(Error::Validation("clip has no f0 frames".into()));
    }
    if let Some(bad) = frames.iter().find(|f| !f.is_finite() || **f < 0.0) {
        return Err(Error::Validation(format!("invalid f0 value {bad}")));
    }
    let voiced: Vec<f64> = frames.iter().copied().filter(|f| *f > 0.0).collect();
    if voiced.is_empty() {
        return Ok(0);
    }
    let avg = voiced.iter().sum::<f64>() / voiced.len() as f64;
    let f0 = avg.clamp(F0_MIN, F0_MAX).round();
    Ok((f0 - F0_MIN) as usize + 1)
}

pub fn pitch_indices(track: &SpeechTrack) -> Result<Vec<usize>> {
    track
        .f0_frames
        .iter()
        .enumerate()
        .map(|(t, f)| pitch_index(f).map_err(|e| Error::Validation(format!("clip {t}: {e}"))))
        .collect()
}

/// Voiced and unvoiced time of one clip, in seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoiceActivity {
    pub active: f64,
    pub silent: f64,
}

pub fn vad_aggregate(track: &SpeechTrack, frame_period: f64) -> Result<Vec<VoiceActivity>> {
    if frame_period <= 0.0 {
        return Err(Error::InvalidArgument("VAD frame period must be positive".into()));
    }
    track
        .vad_frames
        .iter()
        .enumerate()
        .map(|(t, frames)| {
            if frames.is_empty() {
                return Err(Error::Validation(format!("clip {t} has no VAD frames")));
            }
            let voiced = frames.iter().filter(|v| **v).count();
            Ok(VoiceActivity {
                active: voiced as f64 * frame_period,
                silent: (frames.len() - voiced) as f64 * frame_period,
            })
        })
        .collect()
}
