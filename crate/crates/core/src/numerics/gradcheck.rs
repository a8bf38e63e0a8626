//! Central finite-difference verification of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::params::{Gradients, ParamId, ParamStore};
use crate::error::{Error, Result};

/// Finite-difference formula.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Stencil {
    /// `(f(x+ε) − f(x−ε)) / 2ε`.
    #[default]
    Central,
    /// Fourth-order five-point formula. Tolerates a larger ε, which keeps
    /// rounding in `f` from swamping gradients near 1e-8 in deep objectives.
    FivePoint,
}

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    pub stencil: Stencil,
    /// `None` probes every coordinate.
    pub probe_count: Option<usize>,
    pub seed: u64,
}

impl GradCheckOptions {
    pub fn exhaustive() -> Self {
        GradCheckOptions {
            epsilon: 1e-5,
            stencil: Stencil::Central,
            probe_count: None,
            seed: 0,
        }
    }

    pub fn sampled(probe_count: usize, seed: u64) -> Self {
        GradCheckOptions {
            epsilon: 1e-5,
            stencil: Stencil::Central,
            probe_count: Some(probe_count),
            seed,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_parameter: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub probes: usize,
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares the analytic gradient returned by `f` against central differences.
///
/// Probes are spread round-robin over the parameter tensors so that small
/// tensors are not drowned out by large embedding tables. The store is
/// restored exactly after every probe.
pub fn grad_check<F>(
    store: &mut ParamStore,
    opts: &GradCheckOptions,
    op: &str,
    mut f: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<(f64, Gradients)>,
{
    let (base, grads) = f(store)?;
    if !base.is_finite() {
        return Err(Error::NonFinite(format!("{op}: loss {base} at the probe point")));
    }
    let probes = choose_probes(store, opts);
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_parameter: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        probes: probes.len(),
    };
    for (id, idx) in probes {
        let original = store.get(id).data()[idx];
        let offsets: &[(f64, f64)] = match opts.stencil {
            Stencil::Central => &[(1.0, 0.5), (-1.0, -0.5)],
            Stencil::FivePoint => &[(2.0, -1.0 / 12.0), (1.0, 8.0 / 12.0), (-1.0, -8.0 / 12.0), (-2.0, 1.0 / 12.0)],
        };
        let mut numeric = 0.0;
        for &(step, weight) in offsets {
            store.get_mut(id).data_mut()[idx] = original + step * opts.epsilon;
            let value = f(store).map(|r| r.0);
            store.get_mut(id).data_mut()[idx] = original;
            let value = value?;
            if !value.is_finite() {
                return Err(Error::NonFinite(format!(
                    "{op}: loss not finite when perturbing {}[{idx}]",
                    store.name(id)
                )));
            }
            numeric += weight * value;
        }
        let numeric = numeric / opts.epsilon;
        let analytic = grads.get(id)[idx];
        let err = relative_error(analytic, numeric);
        if err > report.max_relative_error || report.worst_parameter.is_empty() {
            report.max_relative_error = err;
            report.worst_parameter = store.name(id).to_string();
            report.worst_index = idx;
            report.analytic = analytic;
            report.numeric = numeric;
        }
    }
    Ok(report)
}

fn choose_probes(store: &ParamStore, opts: &GradCheckOptions) -> Vec<(ParamId, usize)> {
    let ids: Vec<ParamId> = store.ids().filter(|&id| !store.get(id).is_empty()).collect();
    match opts.probe_count {
        None => ids
            .iter()
            .flat_map(|&id| (0..store.get(id).len()).map(move |i| (id, i)))
            .collect(),
        Some(count) => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            (0..count)
                .map(|k| {
                    let id = ids[k % ids.len()];
                    (id, rng.random_range(0..store.get(id).len()))
                })
                .collect()
        }
    }
}
