//! Synthetic corpora with planted structure.
//!
//! Trees are sampled from a weighted binary grammar. Speech carries the
//! tree in its timing and pitch: pauses follow shallow constituent
//! boundaries and f0 rises at constituent starts over a falling baseline.
//! Images hold one object per noun token, plus (with a fixed probability) a
//! companion object from the noun category's partner category.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ExampleBundle, Region, RegionSet, SpeechTrack};
use crate::decode::{BinaryTree, ClipInterval};
use crate::error::{Error, Result};

/// `lhs → left right` with a positive weight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub lhs: String,
    pub left: String,
    pub right: String,
    pub weight: f64,
}

/// A preterminal and its share of the vocabulary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preterminal {
    pub name: String,
    pub share: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grammar {
    pub start: String,
    pub rules: Vec<Rule>,
    pub preterminals: Vec<Preterminal>,
    /// Preterminal whose tokens get an object in the image.
    #[serde(default)]
    pub noun: Option<String>,
}

fn rule(lhs: &str, left: &str, right: &str, weight: f64) -> Rule {
    Rule {
        lhs: lhs.into(),
        left: left.into(),
        right: right.into(),
        weight,
    }
}

fn pre(name: &str, share: f64) -> Preterminal {
    Preterminal { name: name.into(), share }
}

impl Grammar {
    /// Small English-like grammar: right-heavy verb phrases, optional
    /// adjectives and prepositional attachments. Mean length is about 8.
    pub fn english() -> Self {
        Grammar {
            start: "S".into(),
            rules: vec![
                rule("S", "NP", "VP", 1.0),
                rule("NP", "Det", "N", 0.6),
                rule("NP", "Det", "NB", 0.25),
                rule("NP", "NP", "PP", 0.15),
                rule("NB", "Adj", "N", 0.7),
                rule("NB", "Adj", "NB", 0.3),
                rule("VP", "V", "NP", 0.45),
                rule("VP", "VP", "PP", 0.35),
                rule("VP", "V", "Adv", 0.2),
                rule("PP", "P", "NP", 1.0),
            ],
            preterminals: vec![
                pre("N", 16.0),
                pre("V", 10.0),
                pre("Adj", 8.0),
                pre("Det", 4.0),
                pre("P", 6.0),
                pre("Adv", 6.0),
            ],
            noun: Some("N".into()),
        }
    }

    /// `X → A X | A A`: every tree is fully right-branching.
    pub fn right_branching() -> Self {
        Grammar {
            start: "X".into(),
            rules: vec![rule("X", "A", "X", 0.85), rule("X", "A", "A", 0.15)],
            preterminals: vec![pre("A", 1.0)],
            noun: Some("A".into()),
        }
    }

    fn validate(&self) -> Result<()> {
        let is_pre = |s: &str| self.preterminals.iter().any(|p| p.name == s);
        let is_nt = |s: &str| self.rules.iter().any(|r| r.lhs == s);
        if !is_nt(&self.start) {
            return Err(Error::Generation(format!("start symbol {} has no rules", self.start)));
        }
        for r in &self.rules {
            if !(r.weight > 0.0 && r.weight.is_finite()) {
                return Err(Error::Generation(format!("rule {} → {} {} has a non-positive weight", r.lhs, r.left, r.right)));
            }
            if is_pre(&r.lhs) {
                return Err(Error::Generation(format!("{} is both a preterminal and a rule head", r.lhs)));
            }
            for s in [&r.left, &r.right] {
                if !is_pre(s) && !is_nt(s) {
                    return Err(Error::Generation(format!("symbol {s} has neither rules nor words")));
                }
            }
        }
        if let Some(p) = self.preterminals.iter().find(|p| p.share.is_nan() || p.share <= 0.0) {
            return Err(Error::Generation(format!("preterminal {} has a non-positive share", p.name)));
        }
        if let Some(n) = &self.noun {
            if !is_pre(n) {
                return Err(Error::Generation(format!("noun symbol {n} is not a preterminal")));
            }
        }
        Ok(())
    }
}

/// Generator settings. Times are in seconds, pitch in Hz.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub sentences: usize,
    pub seed: u64,
    pub grammar: Grammar,
    pub vocab_size: usize,
    pub min_length: usize,
    pub max_length: usize,
    pub max_depth: usize,
    pub frame_period: f64,
    pub word_duration_min: f64,
    pub word_duration_max: f64,
    /// Silence appended after a word ending a constituent boundary of depth
    /// at most `pause_depth` (the root split has depth 1).
    pub pause_seconds: f64,
    pub pause_depth: usize,
    pub pitch_base: f64,
    /// Declination in Hz per second.
    pub pitch_slope: f64,
    /// Rise per non-root constituent starting at a word.
    pub pitch_reset: f64,
    pub pitch_noise: f64,
    pub d_s: usize,
    pub d_v: usize,
    pub clip_noise: f64,
    pub region_noise: f64,
    pub noun_categories: usize,
    /// Probability that a noun's object comes with its partner object.
    pub companion_prob: f64,
    pub distractors: usize,
    pub image_size: (f64, f64),
    /// Omit tokens; clips are the leaves.
    pub textless: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            sentences: 250,
            seed: 0,
            grammar: Grammar::english(),
            vocab_size: 50,
            min_length: 2,
            max_length: 20,
            max_depth: 30,
            frame_period: 0.01,
            word_duration_min: 0.2,
            word_duration_max: 0.4,
            pause_seconds: 0.3,
            pause_depth: 1,
            pitch_base: 220.0,
            pitch_slope: 15.0,
            pitch_reset: 25.0,
            pitch_noise: 2.0,
            d_s: 16,
            d_v: 16,
            clip_noise: 0.3,
            region_noise: 0.2,
            noun_categories: 6,
            companion_prob: 0.6,
            distractors: 1,
            image_size: (640.0, 480.0),
            textless: false,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        self.grammar.validate()?;
        let bad = |m: &str| Err(Error::Generation(m.into()));
        if self.vocab_size < self.grammar.preterminals.len() {
            return bad("vocab_size must give every preterminal at least one word");
        }
        if self.min_length < 1 || self.min_length > self.max_length {
            return bad("need 1 <= min_length <= max_length");
        }
        let ordered = 0.0 < self.word_duration_min && self.word_duration_min <= self.word_duration_max;
        if self.frame_period.is_nan() || self.frame_period <= 0.0 || !ordered {
            return bad("frame period and word durations must be positive and ordered");
        }
        if self.pause_seconds < 0.0 || self.pitch_noise < 0.0 || self.clip_noise < 0.0 || self.region_noise < 0.0 {
            return bad("pause and noise magnitudes must be non-negative");
        }
        if self.noun_categories == 0 || 2 * self.noun_categories > self.d_v {
            return bad("need 1 <= noun_categories and 2 * noun_categories <= d_v");
        }
        if !(0.0..=1.0).contains(&self.companion_prob) {
            return bad("companion_prob must lie in [0, 1]");
        }
        if self.d_s == 0 {
            return bad("d_s must be positive");
        }
        Ok(())
    }
}

/// A generated corpus and the lexicon it was drawn from.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub bundles: Vec<ExampleBundle>,
    /// Words per preterminal, in grammar order.
    pub lexicon: Vec<(String, Vec<String>)>,
}

impl SynthCorpus {
    pub fn gold_trees(&self) -> Result<Vec<BinaryTree>> {
        self.bundles
            .iter()
            .map(|b| b.gold_tree().unwrap_or_else(|| Err(Error::Generation(format!("example {} has no gold tree", b.id)))))
            .collect()
    }
}

/// Labeled derivation.
enum Deriv {
    Leaf { pre: usize },
    Node { label: String, left: Box<Deriv>, right: Box<Deriv> },
}

struct Sampler<'g> {
    grammar: &'g Grammar,
    max_depth: usize,
}

impl Sampler<'_> {
    fn sample(&self, sym: &str, depth: usize, rng: &mut ChaCha8Rng) -> Option<Deriv> {
        if let Some(p) = self.grammar.preterminals.iter().position(|p| p.name == sym) {
            return Some(Deriv::Leaf { pre: p });
        }
        if depth >= self.max_depth {
            return None;
        }
        let rules: Vec<&Rule> = self.grammar.rules.iter().filter(|r| r.lhs == sym).collect();
        let total: f64 = rules.iter().map(|r| r.weight).sum();
        let mut x = rng.random::<f64>() * total;
        let mut chosen = rules[rules.len() - 1];
        for r in &rules {
            if x < r.weight {
                chosen = r;
                break;
            }
            x -= r.weight;
        }
        let left = self.sample(&chosen.left, depth + 1, rng)?;
        let right = self.sample(&chosen.right, depth + 1, rng)?;
        Some(Deriv::Node {
            label: sym.to_string(),
            left: Box::new(left),
            right: Box::new(right),
        })
    }
}

/// Flattened derivation: preterminal per leaf, brackets with labels and
/// tree depth (root = 1) in pre-order.
struct Flat {
    pres: Vec<usize>,
    brackets: Vec<(usize, usize)>,
    labels: Vec<String>,
    depths: Vec<usize>,
    splits: Vec<usize>,
}

fn flatten(d: &Deriv, depth: usize, out: &mut Flat) -> (usize, usize) {
    match d {
        Deriv::Leaf { pre } => {
            out.pres.push(*pre);
            let i = out.pres.len() - 1;
            (i, i)
        }
        Deriv::Node { label, left, right } => {
            let slot = out.brackets.len();
            out.brackets.push((0, 0));
            out.labels.push(label.clone());
            out.depths.push(depth);
            out.splits.push(0);
            let (i, k) = flatten(left, depth + 1, out);
            let (_, j) = flatten(right, depth + 1, out);
            out.brackets[slot] = (i, j);
            out.splits[slot] = k;
            (i, j)
        }
    }
}

fn lexicon(cfg: &SynthConfig) -> Vec<(String, Vec<String>)> {
    let pts = &cfg.grammar.preterminals;
    let total: f64 = pts.iter().map(|p| p.share).sum();
    let spare = cfg.vocab_size - pts.len();
    let mut counts: Vec<usize> = pts.iter().map(|p| 1 + (spare as f64 * p.share / total).floor() as usize).collect();
    let (mut k, m) = (0, counts.len());
    while counts.iter().sum::<usize>() < cfg.vocab_size {
        counts[k % m] += 1;
        k += 1;
    }
    pts.iter()
        .zip(counts)
        .map(|(p, c)| {
            let stem = p.name.to_lowercase();
            (p.name.clone(), (0..c).map(|w| format!("{stem}{w}")).collect())
        })
        .collect()
}

fn frames(seconds: f64, period: f64) -> usize {
    (seconds / period).round() as usize
}

/// Partner category of noun category `c`; partners occupy their own range
/// so they only ever appear as companions.
pub fn partner_category(c: usize, noun_categories: usize) -> usize {
    c + noun_categories
}

/// Category of the `w`-th noun word.
pub fn noun_category(w: usize, noun_categories: usize) -> usize {
    w % noun_categories
}

/// Samples `cfg.sentences` examples. Ids are zero-padded so that sorting by
/// id keeps generation order.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let lex = lexicon(cfg);
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let vocab_flat: Vec<&str> = lex.iter().flat_map(|(_, ws)| ws.iter().map(String::as_str)).collect();
    let prototypes: Vec<Vec<f64>> = vocab_flat
        .iter()
        .map(|_| (0..cfg.d_s).map(|_| std.sample(&mut rng)).collect())
        .collect();
    let offsets: Vec<usize> = lex
        .iter()
        .scan(0, |acc, (_, ws)| {
            let o = *acc;
            *acc += ws.len();
            Some(o)
        })
        .collect();
    let noun_pre = cfg
        .grammar
        .noun
        .as_ref()
        .and_then(|n| cfg.grammar.preterminals.iter().position(|p| &p.name == n));
    let sampler = Sampler {
        grammar: &cfg.grammar,
        max_depth: cfg.max_depth,
    };
    let (w, h) = cfg.image_size;
    let width = format!("{}", cfg.sentences.max(1) - 1).len();
    let mut bundles = Vec::with_capacity(cfg.sentences);
    for idx in 0..cfg.sentences {
        let mut flat = None;
        for _ in 0..1000 {
            let Some(d) = sampler.sample(&cfg.grammar.start, 0, &mut rng) else { continue };
            let mut f = Flat {
                pres: Vec::new(),
                brackets: Vec::new(),
                labels: Vec::new(),
                depths: Vec::new(),
                splits: Vec::new(),
            };
            flatten(&d, 1, &mut f);
            if (cfg.min_length..=cfg.max_length).contains(&f.pres.len()) {
                flat = Some(f);
                break;
            }
        }
        let f = flat.ok_or_else(|| {
            Error::Generation(format!(
                "grammar produced no sentence within depth {} and length {}..={} after 1000 attempts",
                cfg.max_depth, cfg.min_length, cfg.max_length
            ))
        })?;
        let n = f.pres.len();
        let words: Vec<usize> = f.pres.iter().map(|&p| rng.random_range(0..lex[p].1.len())).collect();
        let tokens: Vec<String> = f.pres.iter().zip(&words).map(|(&p, &k)| lex[p].1[k].clone()).collect();

        // boundary after leaf t carries the depth of the node split there
        let mut boundary_depth = vec![usize::MAX; n];
        for (b, &k) in f.splits.iter().enumerate() {
            boundary_depth[k] = f.depths[b];
        }
        let mut starts = vec![0usize; n];
        for (b, &(i, j)) in f.brackets.iter().enumerate() {
            if f.depths[b] > 1 && j > i {
                starts[i] += 1;
            }
        }

        let mut clips = Vec::with_capacity(n);
        let mut clip_features = Vec::with_capacity(n);
        let mut f0_frames = Vec::with_capacity(n);
        let mut vad_frames = Vec::with_capacity(n);
        let mut frame_clock = 0usize;
        for t in 0..n {
            let dur = rng.random_range(cfg.word_duration_min..=cfg.word_duration_max);
            let voiced = frames(dur, cfg.frame_period).max(1);
            let pause = if t + 1 < n && boundary_depth[t] <= cfg.pause_depth {
                frames(cfg.pause_seconds, cfg.frame_period)
            } else {
                0
            };
            let start = frame_clock;
            let mut f0 = Vec::with_capacity(voiced + pause);
            for k in 0..voiced {
                let time = (start + k) as f64 * cfg.frame_period;
                let noise = if cfg.pitch_noise > 0.0 { cfg.pitch_noise * std.sample(&mut rng) } else { 0.0 };
                let v = cfg.pitch_base - cfg.pitch_slope * time + cfg.pitch_reset * starts[t] as f64 + noise;
                f0.push(v.max(60.0));
            }
            f0.extend(std::iter::repeat_n(0.0, pause));
            let mut vad = vec![true; voiced];
            vad.extend(std::iter::repeat_n(false, pause));
            frame_clock += voiced + pause;
            clips.push(ClipInterval::new(
                start as f64 * cfg.frame_period,
                frame_clock as f64 * cfg.frame_period,
            ));
            let proto = &prototypes[offsets[f.pres[t]] + words[t]];
            clip_features.push(proto.iter().map(|x| x + cfg.clip_noise * std.sample(&mut rng)).collect());
            f0_frames.push(f0);
            vad_frames.push(vad);
        }

        let mut categories = Vec::new();
        if let Some(np) = noun_pre {
            for (&p, &k) in f.pres.iter().zip(&words) {
                if p == np {
                    let c = noun_category(k, cfg.noun_categories);
                    categories.push(c);
                    if rng.random::<f64>() < cfg.companion_prob {
                        categories.push(partner_category(c, cfg.noun_categories));
                    }
                }
            }
        }
        let extra = if categories.is_empty() { cfg.distractors.max(1) } else { cfg.distractors };
        for _ in 0..extra {
            categories.push(rng.random_range(0..cfg.noun_categories));
        }
        let regions = categories
            .iter()
            .map(|&c| {
                let feature = (0..cfg.d_v)
                    .map(|k| if k == c { 1.0 } else { 0.0 } + cfg.region_noise * std.sample(&mut rng))
                    .collect();
                let (x1, y1) = (rng.random_range(0.0..w * 0.8), rng.random_range(0.0..h * 0.8));
                let (x2, y2) = (rng.random_range(x1 + 1.0..=w), rng.random_range(y1 + 1.0..=h));
                Region {
                    feature,
                    bbox: [x1, y1, x2, y2],
                    category: c,
                }
            })
            .collect();

        bundles.push(ExampleBundle {
            id: format!("syn{idx:0width$}"),
            tokens: (!cfg.textless).then_some(tokens),
            gold_clips: Some(clips.clone()),
            speech: SpeechTrack {
                clips,
                clip_features,
                f0_frames,
                vad_frames,
            },
            regions: RegionSet {
                regions,
                image_size: (w, h),
            },
            gold_brackets: Some(f.brackets),
            gold_labels: Some(f.labels),
        });
    }
    Ok(SynthCorpus { bundles, lexicon: lex })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Mode;
    use crate::decode::{bracketing_f1, Averaging};
    use crate::features::{co_counts, pitch_indices, vad_aggregate};

    fn small(n: usize) -> SynthConfig {
        SynthConfig {
            sentences: n,
            seed: 7,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn same_seed_same_corpus() {
        assert_eq!(generate_synthetic(&small(20)).unwrap(), generate_synthetic(&small(20)).unwrap());
        let other = SynthConfig { seed: 8, ..small(20) };
        assert_ne!(generate_synthetic(&small(20)).unwrap(), generate_synthetic(&other).unwrap());
    }

    #[test]
    fn examples_validate_and_gold_trees_score_one() {
        let c = generate_synthetic(&small(200)).unwrap();
        for b in &c.bundles {
            b.validate(Mode::Full).unwrap();
        }
        let gold = c.gold_trees().unwrap();
        assert_eq!(bracketing_f1(&gold, &gold, Averaging::Sentence).unwrap(), 1.0);
        let mean = gold.iter().map(|t| t.leaf_count()).sum::<usize>() as f64 / gold.len() as f64;
        assert!((6.5..=9.5).contains(&mean), "mean length {mean}");
        let vocab: std::collections::BTreeSet<&String> = c.lexicon.iter().flat_map(|(_, w)| w).collect();
        assert_eq!(vocab.len(), 50);
    }

    #[test]
    fn pauses_sit_only_on_shallow_boundaries() {
        let cfg = SynthConfig { pause_depth: 2, ..small(100) };
        let c = generate_synthetic(&cfg).unwrap();
        for b in &c.bundles {
            let br = b.gold_brackets.as_ref().unwrap();
            let tree = b.gold_tree().unwrap().unwrap();
            let n = b.leaf_count();
            // depth of the node splitting after leaf t
            fn walk(t: &BinaryTree, d: usize, out: &mut Vec<usize>) {
                if let BinaryTree::Node(l, r) = t {
                    out[l.span().1] = d;
                    walk(l, d + 1, out);
                    walk(r, d + 1, out);
                }
            }
            let mut depth = vec![usize::MAX; n];
            walk(&tree, 1, &mut depth);
            assert!(br.contains(&(0, n - 1)));
            for (t, vad) in b.speech.vad_frames.iter().enumerate() {
                let silent = vad.iter().any(|v| !v);
                assert_eq!(silent, t + 1 < n && depth[t] <= 2, "{} clip {t}", b.id);
            }
        }
    }

    #[test]
    fn flat_pitch_without_pauses() {
        let cfg = SynthConfig {
            pause_seconds: 0.0,
            pitch_slope: 0.0,
            pitch_reset: 0.0,
            pitch_noise: 0.0,
            ..small(30)
        };
        for b in generate_synthetic(&cfg).unwrap().bundles {
            assert!(b.speech.vad_frames.iter().flatten().all(|v| *v));
            let idx = pitch_indices(&b.speech).unwrap();
            assert!(idx.iter().all(|&k| k == idx[0]), "{idx:?}");
            let va = vad_aggregate(&b.speech, cfg.frame_period).unwrap();
            assert!(va.iter().all(|a| a.silent == 0.0));
        }
    }

    #[test]
    fn clip_times_are_frame_aligned_and_conserve_time() {
        let cfg = small(30);
        for b in generate_synthetic(&cfg).unwrap().bundles {
            for (c, f) in b.speech.clips.iter().zip(&b.speech.f0_frames) {
                let frames = (c.duration() / cfg.frame_period).round() as usize;
                assert_eq!(frames, f.len());
            }
        }
    }

    #[test]
    fn co_occurrence_matches_companion_probability() {
        let cfg = SynthConfig {
            companion_prob: 0.4,
            ..small(1000)
        };
        let corpus = generate_synthetic(&cfg).unwrap();
        let nc = cfg.noun_categories;
        let sets: Vec<Vec<usize>> = corpus.bundles.iter().map(|b| b.regions.categories().collect()).collect();
        let co = co_counts(&sets, 2 * nc).unwrap();
        let noun_words = &corpus.lexicon[0].1;
        let mut observed = 0.0;
        let mut expected = 0.0;
        for c in 0..nc {
            observed += co[c * 2 * nc + partner_category(c, nc)];
            for b in &corpus.bundles {
                let k = b
                    .tokens
                    .as_ref()
                    .unwrap()
                    .iter()
                    .filter(|t| noun_words.iter().position(|w| w == *t).is_some_and(|w| noun_category(w, nc) == c))
                    .count();
                expected += 1.0 - (1.0 - cfg.companion_prob).powi(k as i32);
            }
        }
        let rel = (observed - expected).abs() / expected;
        assert!(rel < 0.05, "observed {observed}, expected {expected}");
    }

    #[test]
    fn right_branching_grammar_yields_right_branching_trees() {
        let cfg = SynthConfig {
            grammar: Grammar::right_branching(),
            ..small(50)
        };
        for t in generate_synthetic(&cfg).unwrap().gold_trees().unwrap() {
            assert_eq!(t, BinaryTree::right_branching(t.leaf_count()));
        }
    }

    #[test]
    fn non_terminating_grammar_is_a_generation_error() {
        let mut g = Grammar::english();
        g.rules = vec![rule("S", "S", "S", 1.0), rule("S", "N", "N", 1e-9)];
        let cfg = SynthConfig { grammar: g, max_depth: 5, ..small(3) };
        assert!(matches!(generate_synthetic(&cfg), Err(Error::Generation(_))));
    }

    #[test]
    fn textless_corpus_has_no_tokens() {
        let cfg = SynthConfig { textless: true, ..small(5) };
        for b in generate_synthetic(&cfg).unwrap().bundles {
            assert!(b.tokens.is_none());
            b.validate(Mode::Textless).unwrap();
            assert_eq!(b.gold_clips.as_ref().unwrap().len(), b.leaf_count());
        }
    }
}
