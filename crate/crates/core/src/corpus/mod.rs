//! Training instances, their on-disk format, and the synthetic generator.

mod io;
pub mod synth;
mod vocab;

use serde::{Deserialize, Serialize};

use crate::config::Mode;
use crate::decode::{BinaryTree, ClipInterval};
use crate::error::{Error, Result};

pub use io::{companion_path, load_corpus, save_corpus};
pub use synth::{generate_synthetic, Grammar, SynthConfig, SynthCorpus};
pub use vocab::Vocabulary;

/// One detected object: RoI feature, pixel box and category id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub feature: Vec<f64>,
    /// `(x_min, y_min, x_max, y_max)` in pixels, origin top-left.
    pub bbox: [f64; 4],
    pub category: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionSet {
    pub regions: Vec<Region>,
    /// `(width, height)` in pixels.
    pub image_size: (f64, f64),
}

impl RegionSet {
    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn categories(&self) -> impl Iterator<Item = usize> + '_ {
        self.regions.iter().map(|r| r.category)
    }
}

/// Segmented speech with per-clip representations and frame-level prosody.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeechTrack {
    pub clips: Vec<ClipInterval>,
    /// One representation vector per clip.
    pub clip_features: Vec<Vec<f64>>,
    /// Per clip, f0 in Hz per frame; 0 marks an unvoiced frame.
    pub f0_frames: Vec<Vec<f64>>,
    /// Per clip, voice activity per frame.
    pub vad_frames: Vec<Vec<bool>>,
}

impl SpeechTrack {
    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleBundle {
    pub id: String,
    pub tokens: Option<Vec<String>>,
    pub speech: SpeechTrack,
    pub regions: RegionSet,
    /// Internal-node spans of the gold tree, 0-based inclusive.
    pub gold_brackets: Option<Vec<(usize, usize)>>,
    pub gold_labels: Option<Vec<String>>,
    /// Gold word segmentation for textless evaluation; gold brackets index
    /// these clips when present.
    pub gold_clips: Option<Vec<ClipInterval>>,
}

impl ExampleBundle {
    /// Number of chart leaves: tokens in the full setting, clips otherwise.
    pub fn leaf_count(&self) -> usize {
        self.speech.len()
    }

    pub fn gold_tree(&self) -> Option<Result<BinaryTree>> {
        let brackets = self.gold_brackets.as_ref()?;
        let n = match &self.gold_clips {
            Some(c) => c.len(),
            None => self.leaf_count(),
        };
        Some(BinaryTree::from_brackets(n, brackets))
    }

    /// Checks every structural invariant, naming the example and field.
    pub fn validate(&self, mode: Mode) -> Result<()> {
        let id = &self.id;
        let fail = |field: &str, msg: String| Err(Error::Validation(format!("example {id}: {field}: {msg}")));
        let s = &self.speech;
        let t = s.clips.len();
        if t == 0 {
            return fail("clips", "no speech clips".into());
        }
        if s.clip_features.len() != t {
            return fail("clip_feats_ref", format!("{} vectors for {t} clips", s.clip_features.len()));
        }
        if let Some(w) = s.clip_features.windows(2).find(|w| w[0].len() != w[1].len()) {
            return fail("clip_feats_ref", format!("ragged clip vectors ({} vs {})", w[0].len(), w[1].len()));
        }
        if s.f0_frames.len() != t {
            return fail("f0_frames", format!("{} frame lists for {t} clips", s.f0_frames.len()));
        }
        if s.vad_frames.len() != t {
            return fail("vad_frames", format!("{} frame lists for {t} clips", s.vad_frames.len()));
        }
        for (k, c) in s.clips.iter().enumerate() {
            if !(c.start.is_finite() && c.end.is_finite()) || c.start >= c.end {
                return fail("clips", format!("clip {k} has start {} >= end {}", c.start, c.end));
            }
            if k > 0 && s.clips[k - 1].end > c.start + 1e-9 {
                return fail("clips", format!("clip {k} overlaps or precedes clip {}", k - 1));
            }
            if s.f0_frames[k].is_empty() {
                return fail("f0_frames", format!("clip {k} has no frames"));
            }
            if s.f0_frames[k].iter().any(|f| !f.is_finite() || *f < 0.0) {
                return fail("f0_frames", format!("clip {k} has a negative or non-finite f0"));
            }
            if s.vad_frames[k].is_empty() {
                return fail("vad_frames", format!("clip {k} has no frames"));
            }
        }
        match (mode, &self.tokens) {
            (Mode::Full, None) => return fail("tokens", "required in full mode".into()),
            (Mode::Full, Some(tok)) if tok.len() != t => {
                return Err(Error::Alignment(format!(
                    "example {id}: {} tokens but {t} clips",
                    tok.len()
                )))
            }
            _ => {}
        }
        let r = &self.regions;
        if r.regions.is_empty() {
            return fail("regions", "at least one object is required".into());
        }
        let (w, h) = r.image_size;
        if !(w > 0.0 && h > 0.0) {
            return fail("image_size", format!("{w} x {h} is not a valid image size"));
        }
        let dim = r.regions[0].feature.len();
        for (m, reg) in r.regions.iter().enumerate() {
            if reg.feature.len() != dim {
                return fail("regions", format!("object {m} feature has {} dims, expected {dim}", reg.feature.len()));
            }
            crate::features::validate_bbox(&reg.bbox, w, h)
                .map_err(|e| Error::Validation(format!("example {id}: regions: object {m}: {e}")))?;
        }
        if let Some(gc) = &self.gold_clips {
            if let Some(k) = (0..gc.len()).find(|&k| gc[k].start >= gc[k].end || (k > 0 && gc[k - 1].end > gc[k].start + 1e-9)) {
                return fail("gold_clips", format!("clip {k} is empty or out of order"));
            }
        }
        if let Some(tree) = self.gold_tree() {
            tree.map_err(|e| Error::Validation(format!("example {id}: gold_brackets: {e}")))?;
        }
        if let (Some(labels), Some(br)) = (&self.gold_labels, &self.gold_brackets) {
            if labels.len() != br.len() {
                return fail("gold_labels", format!("{} labels for {} brackets", labels.len(), br.len()));
            }
        }
        Ok(())
    }
}
