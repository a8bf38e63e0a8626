//! Plain-f64 chart recursion. Every sub-span is recomputed from scratch, so
//! it shares no memoisation or graph code with the library chart.

use vatgi_core::chart::{voice_activity_score, ChartParams};
use vatgi_core::features::VoiceActivity;
use vatgi_core::numerics::{Linear, Mlp, ParamId, ParamStore, Tensor};

pub struct Objects {
    pub keys: Vec<Vec<f64>>,
    pub values: Vec<Vec<f64>>,
    pub pairs: Vec<Vec<f64>>,
}

pub struct Inputs {
    pub terminals: Vec<Vec<f64>>,
    pub objects: Option<Objects>,
    pub pitch: Option<Vec<Vec<f64>>>,
    pub activity: Option<Vec<VoiceActivity>>,
    pub gamma: f64,
    pub lambda: f64,
}

pub struct Oracle<'a> {
    pub store: &'a ParamStore,
    pub params: ChartParams,
    pub x: &'a Inputs,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

fn mix(weights: &[f64], vecs: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; vecs[0].len()];
    for (w, v) in weights.iter().zip(vecs) {
        for (o, x) in out.iter_mut().zip(v) {
            *o += w * x;
        }
    }
    out
}

impl Oracle<'_> {
    fn t(&self, id: ParamId) -> &Tensor {
        self.store.get(id)
    }

    fn mv(&self, m: &Tensor, x: &[f64]) -> Vec<f64> {
        (0..m.rows()).map(|r| dot(m.row(r), x)).collect()
    }

    fn linear(&self, l: &Linear, x: &[f64]) -> Vec<f64> {
        let mut y = self.mv(self.t(l.weight), x);
        if let Some(b) = l.bias {
            for (o, bb) in y.iter_mut().zip(self.t(b).data()) {
                *o += bb;
            }
        }
        y
    }

    fn mlp(&self, m: &Mlp, a: &[f64], b: &[f64]) -> Vec<f64> {
        let x: Vec<f64> = a.iter().chain(b).copied().collect();
        let h: Vec<f64> = self.linear(&m.hidden, &x).into_iter().map(f64::tanh).collect();
        self.linear(&m.output, &h)
    }

    fn bilinear(&self, id: ParamId, a: &[f64], b: &[f64]) -> f64 {
        dot(a, &self.mv(self.t(id), b))
    }

    fn attention(&self, h: &[f64]) -> Option<Vec<f64>> {
        let o = self.x.objects.as_ref()?;
        Some(softmax(&o.keys.iter().map(|k| dot(k, h)).collect::<Vec<_>>()))
    }

    /// Child vector as seen by a parent over `[i, j]`.
    fn fuse(&self, h: &[f64], i: usize, j: usize) -> Vec<f64> {
        let mut out = h.to_vec();
        if let (Some(o), Some(a)) = (&self.x.objects, self.attention(h)) {
            let u = mix(&a, &o.values);
            for (e, v) in out.iter_mut().zip(&u) {
                *e += self.x.gamma * v;
            }
        }
        if let Some(p) = &self.x.pitch {
            let width = (j - i + 1) as f64;
            for (c, e) in out.iter_mut().enumerate() {
                *e += self.x.lambda * (i..=j).map(|t| p[t][c]).sum::<f64>() / width;
            }
        }
        out
    }

    /// Inside vector and score, plus the per-split scores.
    pub fn inside(&self, i: usize, j: usize) -> (Vec<f64>, f64, Vec<f64>) {
        if i == j {
            return (self.x.terminals[i].clone(), 0.0, Vec::new());
        }
        let cp = &self.params;
        let (mut hs, mut ss) = (Vec::new(), Vec::new());
        for k in i..j {
            let (hl, sl, _) = self.inside(i, k);
            let (hr, sr, _) = self.inside(k + 1, j);
            let (fl, fr) = (self.fuse(&hl, i, j), self.fuse(&hr, i, j));
            let mut s = self.bilinear(cp.bilinear_inside, &fl, &fr);
            if let (Some(o), Some(al), Some(ar)) = (&self.x.objects, self.attention(&hl), self.attention(&hr)) {
                let mut r = 0.0;
                for (m, am) in al.iter().enumerate() {
                    for (n, an) in ar.iter().enumerate() {
                        r += am * o.pairs[m][n] * an;
                    }
                }
                s += r;
            }
            if let Some(a) = &self.x.activity {
                s += voice_activity_score(i, j, a);
            }
            s += sl;
            s += sr;
            hs.push(self.mlp(&cp.compose_inside, &fl, &fr));
            ss.push(s);
        }
        let w = softmax(&ss);
        (mix(&w, &hs), dot(&w, &ss), ss)
    }

    pub fn outside(&self, i: usize, j: usize) -> (Vec<f64>, f64) {
        let n = self.x.terminals.len();
        let cp = &self.params;
        if i == 0 && j == n - 1 {
            return (self.t(cp.root_outside_bias).data().to_vec(), 0.0);
        }
        let mut contexts = Vec::new();
        for k in 0..i {
            contexts.push(((k, j), (k, i - 1)));
        }
        for k in j + 1..n {
            contexts.push(((i, k), (j + 1, k)));
        }
        let (mut hs, mut ss) = (Vec::new(), Vec::new());
        for ((pi, pj), (si, sj)) in contexts {
            let (ho, so) = self.outside(pi, pj);
            let (hi, sc, _) = self.inside(si, sj);
            ss.push(self.bilinear(cp.bilinear_outside, &ho, &hi) + so + sc);
            hs.push(self.mlp(&cp.compose_outside, &ho, &hi));
        }
        let w = softmax(&ss);
        (mix(&w, &hs), dot(&w, &ss))
    }
}
