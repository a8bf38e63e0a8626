//! JSON-lines corpus files with feature vectors in a companion raw file.
//!
//! The companion file `<corpus>.feats` holds little-endian `f64` values;
//! records point into it with `{offset, rows, cols}` where `offset` counts
//! values, not bytes.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ExampleBundle, Region, RegionSet, SpeechTrack};
use crate::config::Mode;
use crate::decode::ClipInterval;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatRef {
    offset: usize,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegionRecord {
    feat_ref: FeatRef,
    bbox: [f64; 4],
    category: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tokens: Option<Vec<String>>,
    clips: Vec<ClipInterval>,
    clip_feats_ref: FeatRef,
    f0_frames: Vec<Vec<f64>>,
    vad_frames: Vec<Vec<u8>>,
    regions: Vec<RegionRecord>,
    image_size: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gold_brackets: Option<Vec<(usize, usize)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gold_labels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gold_clips: Option<Vec<ClipInterval>>,
}

pub fn companion_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".feats");
    PathBuf::from(s)
}

struct FeatWriter {
    out: BufWriter<File>,
    len: usize,
}

impl FeatWriter {
    fn push(&mut self, rows: &[Vec<f64>]) -> Result<FeatRef> {
        let cols = rows.first().map_or(0, Vec::len);
        let r = FeatRef {
            offset: self.len,
            rows: rows.len(),
            cols,
        };
        for row in rows {
            if row.len() != cols {
                return Err(Error::Validation("ragged feature rows cannot be saved".into()));
            }
            for x in row {
                self.out.write_all(&x.to_le_bytes())?;
            }
        }
        self.len += rows.len() * cols;
        Ok(r)
    }
}

/// Writes `bundles` to `path` and feature vectors to [`companion_path`].
pub fn save_corpus(path: &Path, bundles: &[ExampleBundle]) -> Result<()> {
    let mut feats = FeatWriter {
        out: BufWriter::new(File::create(companion_path(path))?),
        len: 0,
    };
    let mut out = BufWriter::new(File::create(path)?);
    for b in bundles {
        let s = &b.speech;
        let regions = b
            .regions
            .regions
            .iter()
            .map(|r| {
                Ok(RegionRecord {
                    feat_ref: feats.push(std::slice::from_ref(&r.feature))?,
                    bbox: r.bbox,
                    category: r.category,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let rec = Record {
            id: b.id.clone(),
            tokens: b.tokens.clone(),
            clips: s.clips.clone(),
            clip_feats_ref: feats.push(&s.clip_features)?,
            f0_frames: s.f0_frames.clone(),
            vad_frames: s.vad_frames.iter().map(|c| c.iter().map(|&v| v as u8).collect()).collect(),
            regions,
            image_size: [b.regions.image_size.0, b.regions.image_size.1],
            gold_brackets: b.gold_brackets.clone(),
            gold_labels: b.gold_labels.clone(),
            gold_clips: b.gold_clips.clone(),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    feats.out.flush()?;
    Ok(())
}

fn read_feats(path: &Path) -> Result<Vec<f64>> {
    let mut bytes = Vec::new();
    File::open(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?
        .read_to_end(&mut bytes)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Data(format!("{}: length {} is not a multiple of 8", path.display(), bytes.len())));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

fn slice_feats(store: &[f64], r: FeatRef, id: &str, field: &str) -> Result<Vec<Vec<f64>>> {
    let end = r.offset + r.rows * r.cols;
    if end > store.len() {
        return Err(Error::Validation(format!(
            "example {id}: {field}: reference [{}, {end}) exceeds the {} stored values",
            r.offset,
            store.len()
        )));
    }
    Ok((0..r.rows)
        .map(|k| store[r.offset + k * r.cols..r.offset + (k + 1) * r.cols].to_vec())
        .collect())
}

fn to_bundle(rec: Record, feats: &[f64]) -> Result<ExampleBundle> {
    let id = rec.id;
    let mut regions = Vec::with_capacity(rec.regions.len());
    for (m, r) in rec.regions.into_iter().enumerate() {
        let mut rows = slice_feats(feats, r.feat_ref, &id, &format!("regions[{m}].feat_ref"))?;
        if rows.len() != 1 {
            return Err(Error::Validation(format!("example {id}: regions[{m}].feat_ref must have one row")));
        }
        regions.push(Region {
            feature: rows.pop().expect("one row"),
            bbox: r.bbox,
            category: r.category,
        });
    }
    let mut vad = Vec::with_capacity(rec.vad_frames.len());
    for (t, frames) in rec.vad_frames.into_iter().enumerate() {
        if let Some(v) = frames.iter().find(|&&v| v > 1) {
            return Err(Error::Validation(format!("example {id}: vad_frames: clip {t} has value {v}, expected 0 or 1")));
        }
        vad.push(frames.into_iter().map(|v| v == 1).collect());
    }
    Ok(ExampleBundle {
        speech: SpeechTrack {
            clips: rec.clips,
            clip_features: slice_feats(feats, rec.clip_feats_ref, &id, "clip_feats_ref")?,
            f0_frames: rec.f0_frames,
            vad_frames: vad,
        },
        regions: RegionSet {
            regions,
            image_size: (rec.image_size[0], rec.image_size[1]),
        },
        id,
        tokens: rec.tokens,
        gold_brackets: rec.gold_brackets,
        gold_labels: rec.gold_labels,
        gold_clips: rec.gold_clips,
    })
}

/// Reads and validates every example, sorted by id.
pub fn load_corpus(path: &Path, mode: Mode) -> Result<Vec<ExampleBundle>> {
    let file = File::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut records = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line)
            .map_err(|e| Error::Parse(format!("{} line {}: {e}", path.display(), lineno + 1)))?;
        records.push(rec);
    }
    if records.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let feats = read_feats(&companion_path(path))?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(records.len());
    for rec in records {
        if !seen.insert(rec.id.clone()) {
            return Err(Error::Validation(format!("example {}: duplicate id", rec.id)));
        }
        let b = to_bundle(rec, &feats)?;
        b.validate(mode)?;
        out.push(b);
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}
