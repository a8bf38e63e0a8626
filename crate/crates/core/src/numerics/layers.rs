use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::params::{Init, ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Inverted dropout on hidden activations; a no-op at evaluation time.
pub struct Dropout {
    rate: f64,
    rng: Option<ChaCha8Rng>,
}

impl Dropout {
    pub fn disabled() -> Self {
        Dropout { rate: 0.0, rng: None }
    }

    pub fn new(rate: f64, seed: u64) -> Self {
        Dropout {
            rate,
            rng: (rate > 0.0).then(|| ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    pub fn is_active(&self) -> bool {
        self.rng.is_some()
    }

    pub fn apply(&mut self, g: &mut Graph<'_>, x: Var) -> Var {
        let Some(rng) = self.rng.as_mut() else { return x };
        let keep = 1.0 - self.rate;
        let n = g.value(x).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let m = g.constant_vec(mask);
        g.mul(x, m)
    }
}

/// Affine map `W x + b`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(
            &format!("{name}.weight"),
            &[output, input],
            Init::Xavier {
                fan_in: input,
                fan_out: output,
            },
            rng,
        );
        let bias = bias.then(|| store.add(&format!("{name}.bias"), &[output], Init::Zeros, rng));
        Linear { weight, bias }
    }

    pub fn input_dim(&self, store: &ParamStore) -> usize {
        store.get(self.weight).cols()
    }

    pub fn output_dim(&self, store: &ParamStore) -> usize {
        store.get(self.weight).rows()
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let w = g.param(self.weight);
        let y = g.matvec(w, x);
        match self.bias {
            Some(b) => {
                let b = g.param(b);
                g.add(y, b)
            }
            None => y,
        }
    }
}

/// Two-layer perceptron `W2 · tanh(W1 x + b1) + b2` used to merge two spans.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Mlp {
    pub hidden: Linear,
    pub output: Linear,
}

impl Mlp {
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        output: usize,
        rng: &mut R,
    ) -> Self {
        Mlp {
            hidden: Linear::register(store, &format!("{name}.hidden"), input, hidden, true, rng),
            output: Linear::register(store, &format!("{name}.output"), hidden, output, true, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var, dropout: &mut Dropout) -> Var {
        let h = self.hidden.forward(g, x);
        let h = g.tanh(h);
        let h = dropout.apply(g, h);
        self.output.forward(g, h)
    }
}

/// Composes two child vectors into a parent vector: `MLP([left; right])`.
pub fn mlp_compose(
    g: &mut Graph<'_>,
    mlp: &Mlp,
    left: Var,
    right: Var,
    dropout: &mut Dropout,
) -> Result<Var> {
    let store = g.params();
    let expected = mlp.hidden.input_dim(store);
    let (l, r) = (g.value(left).len(), g.value(right).len());
    if l + r != expected || l != r {
        return Err(Error::shape(
            "mlp_compose",
            format!("children of dimension {l} and {r}, composition expects 2 x {}", expected / 2),
        ));
    }
    let x = g.concat(&[left, right]);
    Ok(mlp.forward(g, x, dropout))
}

/// Single-layer unidirectional LSTM, gates ordered (input, forget, cell, output).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Lstm {
    pub input_weight: ParamId,
    pub hidden_weight: ParamId,
    pub bias: ParamId,
}

impl Lstm {
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let input_weight = store.add(
            &format!("{name}.input_weight"),
            &[4 * hidden, input],
            Init::Xavier {
                fan_in: input,
                fan_out: 4 * hidden,
            },
            rng,
        );
        let hidden_weight = store.add(
            &format!("{name}.hidden_weight"),
            &[4 * hidden, hidden],
            Init::Xavier {
                fan_in: hidden,
                fan_out: 4 * hidden,
            },
            rng,
        );
        let bias = store.add(&format!("{name}.bias"), &[4 * hidden], Init::Zeros, rng);
        Lstm {
            input_weight,
            hidden_weight,
            bias,
        }
    }

    pub fn hidden_dim(&self, store: &ParamStore) -> usize {
        store.get(self.hidden_weight).cols()
    }
}

/// Runs the LSTM over `inputs` from a zero state and returns every hidden state.
pub fn lstm_forward(g: &mut Graph<'_>, lstm: &Lstm, inputs: &[Var]) -> Result<Vec<Var>> {
    if inputs.is_empty() {
        return Err(Error::InvalidArgument("lstm_forward on an empty sequence".into()));
    }
    let store = g.params();
    let hidden = lstm.hidden_dim(store);
    let in_dim = store.get(lstm.input_weight).cols();
    if let Some(bad) = inputs.iter().find(|&&x| g.value(x).len() != in_dim) {
        return Err(Error::shape(
            "lstm_forward",
            format!("input of dimension {}, expected {in_dim}", g.value(*bad).len()),
        ));
    }
    let wi = g.param(lstm.input_weight);
    let wh = g.param(lstm.hidden_weight);
    let b = g.param(lstm.bias);
    let mut h = g.constant(Tensor::zeros(&[hidden]));
    let mut c = g.constant(Tensor::zeros(&[hidden]));
    let mut outputs = Vec::with_capacity(inputs.len());
    for &x in inputs {
        let zi = g.matvec(wi, x);
        let zh = g.matvec(wh, h);
        let z = g.add(zi, zh);
        let z = g.add(z, b);
        let i_gate = g.slice(z, 0, hidden);
        let f_gate = g.slice(z, hidden, hidden);
        let c_cand = g.slice(z, 2 * hidden, hidden);
        let o_gate = g.slice(z, 3 * hidden, hidden);
        let i_gate = g.sigmoid(i_gate);
        let f_gate = g.sigmoid(f_gate);
        let c_cand = g.tanh(c_cand);
        let o_gate = g.sigmoid(o_gate);
        let keep = g.mul(f_gate, c);
        let write = g.mul(i_gate, c_cand);
        c = g.add(keep, write);
        let c_act = g.tanh(c);
        h = g.mul(o_gate, c_act);
        outputs.push(h);
    }
    Ok(outputs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::{grad_check, GradCheckOptions};
    use rand::SeedableRng;

    fn zero_all(store: &mut ParamStore) {
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            store.get_mut(id).data_mut().fill(0.0);
        }
    }

    #[test]
    fn zero_mlp_gives_zero_vector() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let mlp = Mlp::register(&mut store, "mlp", 8, 4, 4, &mut rng);
        zero_all(&mut store);
        let mut g = Graph::new(&store);
        let l = g.constant_vec(vec![0.3, -1.0, 2.0, 0.5]);
        let r = g.constant_vec(vec![1.0, 1.0, -4.0, 0.0]);
        let out = mlp_compose(&mut g, &mlp, l, r, &mut Dropout::disabled()).unwrap();
        assert_eq!(g.value(out), &[0.0; 4]);
    }

    #[test]
    fn mlp_compose_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let mlp = Mlp::register(&mut store, "mlp", 6, 3, 3, &mut rng);
        let run = || {
            let mut g = Graph::new(&store);
            let l = g.constant_vec(vec![0.1, 0.2, 0.3]);
            let r = g.constant_vec(vec![-0.4, 0.5, 0.6]);
            let out = mlp_compose(&mut g, &mlp, l, r, &mut Dropout::disabled()).unwrap();
            g.value(out).iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn mlp_compose_rejects_wrong_dimensions() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let mlp = Mlp::register(&mut store, "mlp", 6, 3, 3, &mut rng);
        let mut g = Graph::new(&store);
        let l = g.constant_vec(vec![0.1, 0.2]);
        let r = g.constant_vec(vec![-0.4, 0.5, 0.6]);
        let err = mlp_compose(&mut g, &mlp, l, r, &mut Dropout::disabled()).unwrap_err();
        assert!(matches!(err, Error::Shape { op: "mlp_compose", .. }));
    }

    #[test]
    fn mlp_compose_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut store = ParamStore::new();
        let mlp = Mlp::register(&mut store, "mlp", 10, 5, 5, &mut rng);
        let left = store.add("left", &[5], Init::Xavier { fan_in: 1, fan_out: 5 }, &mut rng);
        let right = store.add("right", &[5], Init::Xavier { fan_in: 1, fan_out: 5 }, &mut rng);
        // biases start at zero; move them so their gradients are exercised
        for id in [mlp.hidden.bias.unwrap(), mlp.output.bias.unwrap()] {
            for x in store.get_mut(id).data_mut() {
                *x = rng.random_range(-0.5..0.5);
            }
        }
        let probe: Vec<f64> = (0..5).map(|i| 0.3 * i as f64 - 0.5).collect();
        let report = grad_check(
            &mut store,
            &GradCheckOptions::exhaustive(),
            "mlp_compose",
            |s| {
                let mut g = Graph::new(s);
                let l = g.param(left);
                let r = g.param(right);
                let out = mlp_compose(&mut g, &mlp, l, r, &mut Dropout::disabled())?;
                let c = g.constant_vec(probe.clone());
                let loss = g.dot(out, c);
                Ok((g.scalar(loss), g.backward(loss)))
            },
        )
        .unwrap();
        assert!(report.max_relative_error < 1e-4, "{report:?}");
    }

    #[test]
    fn lstm_shapes_and_zero_case() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let lstm = Lstm::register(&mut store, "lstm", 3, 3, &mut rng);
        {
            let mut g = Graph::new(&store);
            let x = g.constant_vec(vec![1.0, 2.0, 3.0]);
            assert_eq!(lstm_forward(&mut g, &lstm, &[x]).unwrap().len(), 1);
            assert!(lstm_forward(&mut g, &lstm, &[]).is_err());
        }
        zero_all(&mut store);
        let mut g = Graph::new(&store);
        let xs: Vec<Var> = (0..4).map(|_| g.constant_vec(vec![0.0; 3])).collect();
        let out = lstm_forward(&mut g, &lstm, &xs).unwrap();
        assert_eq!(out.len(), 4);
        for o in out {
            assert_eq!(g.value(o), &[0.0; 3]);
        }
    }

    #[test]
    fn lstm_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let lstm = Lstm::register(&mut store, "lstm", 3, 4, &mut rng);
        for x in store.get_mut(lstm.bias).data_mut() {
            *x = rng.random_range(-0.5..0.5);
        }
        let xs = store.add("inputs", &[5, 3], Init::Xavier { fan_in: 3, fan_out: 5 }, &mut rng);
        let report = grad_check(
            &mut store,
            &GradCheckOptions::exhaustive(),
            "lstm_forward",
            |s| {
                let mut g = Graph::new(s);
                let m = g.param(xs);
                let inputs: Vec<Var> = (0..5).map(|t| g.row(m, t)).collect();
                let outs = lstm_forward(&mut g, &lstm, &inputs)?;
                let weights: Vec<Var> = (0..5)
                    .map(|t| g.constant_vec(vec![1.0 + t as f64, -0.5, 0.25, 2.0]))
                    .collect();
                let terms: Vec<Var> = outs.iter().zip(&weights).map(|(&o, &w)| g.dot(o, w)).collect();
                let loss = g.add_all(&terms);
                Ok((g.scalar(loss), g.backward(loss)))
            },
        )
        .unwrap();
        assert!(report.max_relative_error < 1e-4, "{report:?}");
    }
}
