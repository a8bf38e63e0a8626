//! The finite-difference suite behind `vatgi gradcheck`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{objective_with_gradients, sample_negatives, Trainer};
use crate::chart::{Chart, Fusion, RegionContext};
use crate::config::RunConfig;
use crate::corpus::{generate_synthetic, Grammar, SynthConfig};
use crate::error::Result;
use crate::features::VoiceActivity;
use crate::numerics::{
    grad_check, lstm_forward, mlp_compose, Dropout, GradCheckOptions, GradCheckReport, Graph, Init, Lstm, Mlp,
    ParamStore, Stencil, Tensor, Var,
};

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub check: String,
    #[serde(flatten)]
    pub report: GradCheckReport,
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Projects `v` onto a fixed direction so every output coordinate matters.
fn readout(g: &mut Graph<'_>, v: Var, dir: &[f64]) -> Var {
    let d = g.constant_vec(dir.to_vec());
    g.dot(v, d)
}

fn op_checks(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = 4;
    let mut store = ParamStore::new();
    let mlp = Mlp::register(&mut store, "mlp", 2 * d, d, d, &mut rng);
    let lstm = Lstm::register(&mut store, "lstm", d, d, &mut rng);
    let bilinear = store.add("bilinear", &[d, d], Init::Xavier { fan_in: d, fan_out: d }, &mut rng);
    let root = store.add("root", &[d], Init::Xavier { fan_in: 1, fan_out: d }, &mut rng);
    let mlp_out = Mlp::register(&mut store, "mlp_out", 2 * d, d, d, &mut rng);
    let bilinear_out = store.add("bilinear_out", &[d, d], Init::Xavier { fan_in: d, fan_out: d }, &mut rng);
    for id in store.ids().collect::<Vec<_>>() {
        for x in store.get_mut(id).data_mut() {
            if *x == 0.0 {
                *x = rng.random_range(-0.2..0.2);
            }
        }
    }
    let (a, b) = (random_vec(&mut rng, d), random_vec(&mut rng, d));
    let dir = random_vec(&mut rng, d);
    let seq: Vec<Vec<f64>> = (0..3).map(|_| random_vec(&mut rng, d)).collect();
    let terms: Vec<Vec<f64>> = (0..3).map(|_| random_vec(&mut rng, d)).collect();
    let regions: Vec<Vec<f64>> = (0..2).map(|_| random_vec(&mut rng, d)).collect();
    let pairs = Tensor::new(vec![2, 2], random_vec(&mut rng, 4))?;
    let activity: Vec<VoiceActivity> = (0..3)
        .map(|t| VoiceActivity {
            active: 0.3,
            silent: 0.1 * t as f64,
        })
        .collect();
    let cp = crate::chart::ChartParams {
        compose_inside: mlp,
        compose_outside: mlp_out,
        bilinear_inside: bilinear,
        bilinear_outside: bilinear_out,
        root_outside_bias: root,
    };

    let opts = GradCheckOptions::exhaustive();
    let mut out = Vec::new();
    let mut run = |name: &str, f: &dyn Fn(&mut Graph<'_>) -> Result<Var>, store: &mut ParamStore| -> Result<()> {
        let report = grad_check(store, &opts, name, |s| {
            let mut g = Graph::new(s);
            let y = f(&mut g)?;
            Ok((g.scalar(y), g.backward(y)))
        })?;
        out.push(CheckResult {
            check: name.to_string(),
            report,
        });
        Ok(())
    };
    run(
        "mlp_compose",
        &|g| {
            let (l, r) = (g.constant_vec(a.clone()), g.constant_vec(b.clone()));
            let h = mlp_compose(g, &mlp, l, r, &mut Dropout::disabled())?;
            Ok(readout(g, h, &dir))
        },
        &mut store,
    )?;
    run(
        "lstm_forward",
        &|g| {
            let xs: Vec<Var> = seq.iter().map(|v| g.constant_vec(v.clone())).collect();
            let hs = lstm_forward(g, &lstm, &xs)?;
            let parts: Vec<Var> = hs.iter().map(|&h| readout(g, h, &dir)).collect();
            Ok(g.add_all(&parts))
        },
        &mut store,
    )?;
    run(
        "bilinear",
        &|g| {
            let (l, r) = (g.constant_vec(a.clone()), g.constant_vec(b.clone()));
            let w = g.param(bilinear);
            Ok(g.bilinear(l, w, r))
        },
        &mut store,
    )?;
    run(
        "chart",
        &|g| {
            let t: Vec<Var> = terms.iter().map(|v| g.constant_vec(v.clone())).collect();
            let keys = g.constant(Tensor::from_rows(&regions)?);
            let pair_var = g.constant(pairs.clone());
            let pitch = seq.iter().map(|v| g.constant_vec(v.clone())).collect();
            let fusion = Fusion {
                regions: Some(RegionContext {
                    keys,
                    values: keys,
                    pairs: pair_var,
                }),
                pitch: Some(pitch),
                activity: Some(activity.clone()),
                gamma: 0.5,
                lambda: 0.5,
            };
            let mut chart = Chart::inside(g, &cp, &t, &fusion, &mut Dropout::disabled())?;
            chart.outside(g, &cp, &mut Dropout::disabled())?;
            let mut parts = vec![chart.inside_score(chart.root())];
            for i in 0..3 {
                let s = crate::chart::Span::new(i, i);
                parts.push(readout(g, chart.outside_vec(s), &dir));
                parts.push(chart.outside_score(s));
            }
            Ok(g.add_all(&parts))
        },
        &mut store,
    )?;
    Ok(out)
}

/// Full objective on a seeded batch of two 3-token synthetic sentences, all
/// fusion features on. Uses the five-point stencil: a two-point one at
/// 1e-5 cannot resolve gradients near 1e-8 against rounding in the loss.
/// Even so the worst coordinate lands between 1e-5 and 1e-4 depending on
/// the draw; seed 0 is the setup the acceptance suite checks.
pub fn objective_check(seed: u64) -> Result<CheckResult> {
    let data = generate_synthetic(&SynthConfig {
        sentences: 2,
        seed: seed.wrapping_add(5),
        grammar: Grammar::right_branching(),
        vocab_size: 6,
        min_length: 3,
        max_length: 3,
        d_s: 5,
        d_v: 4,
        noun_categories: 2,
        ..SynthConfig::default()
    })?
    .bundles;
    let config = RunConfig {
        d: 6,
        d_w: 6,
        d_v: 4,
        d_s: 5,
        d_p: 4,
        d_a: 4,
        dropout: 0.0,
        seed: seed.wrapping_add(3),
        ..RunConfig::default()
    };
    let trainer = Trainer::new(config.clone(), &data)?;
    let prepared = trainer.prepare(&data)?;
    let batch: Vec<_> = prepared.iter().collect();
    let counts: Vec<usize> = batch.iter().map(|e| e.len()).collect();
    let negatives = sample_negatives(&counts, &mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(1)));
    let layout = trainer.model.layout.clone();
    let mut store = trainer.model.store.clone();
    let opts = GradCheckOptions {
        epsilon: 1e-3,
        stencil: Stencil::FivePoint,
        ..GradCheckOptions::exhaustive()
    };
    let report = grad_check(&mut store, &opts, "objective", |s| {
        objective_with_gradients(s, &layout, &config, &batch, &negatives)
    })?;
    Ok(CheckResult {
        check: "objective".into(),
        report,
    })
}

/// Every check, in order: layers, the chart, then the full objective.
pub fn verification_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut out = op_checks(seed)?;
    out.push(objective_check(seed)?);
    Ok(out)
}
