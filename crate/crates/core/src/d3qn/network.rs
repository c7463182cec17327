//! Fully connected Q-network with factored output groups.
//!
//! All parameters live in one flat `Vec<f64>`; each layer records the offset
//! of its row-major weight block (`out × in`) followed by its bias. The output
//! is split into consecutive groups (one per action factor). In dueling mode a
//! scalar value head `V(s)` and an advantage head are combined per group as
//! `Q_g(s,a) = V(s) + A_g(s,a) - mean_a' A_g(s,a')`.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// One linear head producing Q directly.
    Plain,
    /// Value and advantage heads with mean-centred aggregation.
    Dueling,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layer {
    inputs: usize,
    outputs: usize,
    offset: usize,
}

impl Layer {
    fn weights_len(&self) -> usize {
        self.inputs * self.outputs
    }

    fn len(&self) -> usize {
        self.weights_len() + self.outputs
    }

    fn forward(&self, params: &[f64], x: &[f64], out: &mut Vec<f64>) {
        let w = &params[self.offset..self.offset + self.weights_len()];
        let b = &params[self.offset + self.weights_len()..self.offset + self.len()];
        out.clear();
        out.extend(
            w.chunks_exact(self.inputs)
                .zip(b)
                .map(|(row, &bias)| bias + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()),
        );
    }

    /// Accumulates parameter gradients and returns dL/dx.
    fn backward(
        &self,
        params: &[f64],
        x: &[f64],
        d_out: &[f64],
        grad: &mut [f64],
        d_in: &mut Vec<f64>,
    ) {
        let wl = self.weights_len();
        let w = &params[self.offset..self.offset + wl];
        let (gw, gb) = grad[self.offset..self.offset + self.len()].split_at_mut(wl);
        d_in.clear();
        d_in.resize(self.inputs, 0.0);
        for (o, &d) in d_out.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            gb[o] += d;
            let row = &w[o * self.inputs..(o + 1) * self.inputs];
            let grow = &mut gw[o * self.inputs..(o + 1) * self.inputs];
            for ((g, &xi), (di, &wi)) in grow.iter_mut().zip(x).zip(d_in.iter_mut().zip(row)) {
                *g += d * xi;
                *di += d * wi;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    arch: Architecture,
    groups: Vec<usize>,
    trunk: Vec<Layer>,
    value: Option<Layer>,
    head: Layer,
    params: Vec<f64>,
}

/// Intermediate activations kept for backpropagation.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    /// `acts[0]` is the input, `acts[i+1]` the post-ReLU output of trunk layer `i`.
    acts: Vec<Vec<f64>>,
    pub value: Option<f64>,
    pub advantage: Vec<f64>,
    pub q: Vec<f64>,
}

impl QNetwork {
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        groups: Vec<usize>,
        arch: Architecture,
        rng: &mut R,
    ) -> Self {
        assert!(input_dim > 0 && !groups.is_empty() && groups.iter().all(|&g| g > 0));
        let mut offset = 0;
        let mut layer = |inputs: usize, outputs: usize| {
            let l = Layer { inputs, outputs, offset };
            offset += l.len();
            l
        };
        let mut trunk = Vec::with_capacity(hidden.len());
        let mut width = input_dim;
        for &h in hidden {
            trunk.push(layer(width, h));
            width = h;
        }
        let value = (arch == Architecture::Dueling).then(|| layer(width, 1));
        let head = layer(width, groups.iter().sum());
        let mut net = QNetwork {
            arch,
            groups,
            trunk,
            value,
            head,
            params: vec![0.0; offset],
        };
        net.init(rng);
        net
    }

    fn init<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let layers: Vec<(Layer, bool)> = self
            .trunk
            .iter()
            .map(|&l| (l, true))
            .chain(self.value.map(|l| (l, false)))
            .chain(std::iter::once((self.head, false)))
            .collect();
        for (l, relu) in layers {
            // He-uniform for ReLU layers, Glorot-uniform for linear heads
            let limit = if relu {
                (6.0 / l.inputs as f64).sqrt()
            } else {
                (6.0 / (l.inputs + l.outputs) as f64).sqrt()
            };
            for w in &mut self.params[l.offset..l.offset + l.weights_len()] {
                *w = rng.gen_range(-limit..limit);
            }
            for b in &mut self.params[l.offset + l.weights_len()..l.offset + l.len()] {
                *b = 0.0;
            }
        }
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn groups(&self) -> &[usize] {
        &self.groups
    }

    pub fn input_dim(&self) -> usize {
        self.trunk.first().map_or(self.head.inputs, |l| l.inputs)
    }

    pub fn output_dim(&self) -> usize {
        self.head.outputs
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Copies parameters from a network of identical shape.
    pub fn copy_from(&mut self, other: &QNetwork) {
        assert_eq!(self.params.len(), other.params.len());
        self.params.copy_from_slice(&other.params);
    }

    /// `(offset, len)` of each output group inside the flat Q vector.
    pub fn group_ranges(&self) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        self.groups.iter().scan(0, |start, &len| {
            let r = *start..*start + len;
            *start += len;
            Some(r)
        })
    }

    pub fn forward(&self, x: &[f64]) -> ForwardCache {
        let mut cache = ForwardCache::default();
        self.forward_into(x, &mut cache);
        cache
    }

    pub fn q_values(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).q
    }

    pub fn forward_into(&self, x: &[f64], cache: &mut ForwardCache) {
        assert_eq!(x.len(), self.input_dim(), "input width mismatch");
        cache.acts.resize_with(self.trunk.len() + 1, Vec::new);
        cache.acts[0].clear();
        cache.acts[0].extend_from_slice(x);
        for (i, l) in self.trunk.iter().enumerate() {
            let (prev, next) = cache.acts.split_at_mut(i + 1);
            l.forward(&self.params, &prev[i], &mut next[0]);
            for v in next[0].iter_mut() {
                *v = v.max(0.0);
            }
        }
        let features = cache.acts.last().unwrap();
        let mut adv = std::mem::take(&mut cache.advantage);
        self.head.forward(&self.params, features, &mut adv);
        cache.value = self.value.map(|vl| {
            let mut v = Vec::with_capacity(1);
            vl.forward(&self.params, features, &mut v);
            v[0]
        });
        cache.q.clear();
        match cache.value {
            None => cache.q.extend_from_slice(&adv),
            Some(v) => {
                for r in self.group_ranges() {
                    let group = &adv[r];
                    let mean = group.iter().sum::<f64>() / group.len() as f64;
                    cache.q.extend(group.iter().map(|a| v + a - mean));
                }
            }
        }
        cache.advantage = adv;
    }

    /// Backpropagates `d_q` (dL/dQ for every output) through a cached forward
    /// pass, accumulating into `grad` (same layout as `params`).
    pub fn backward(&self, cache: &ForwardCache, d_q: &[f64], grad: &mut [f64]) {
        assert_eq!(d_q.len(), self.output_dim());
        assert_eq!(grad.len(), self.params.len());
        let features = cache.acts.last().unwrap();
        let mut d_features = vec![0.0; features.len()];
        let mut scratch = Vec::new();

        match self.value {
            None => {
                self.head.backward(&self.params, features, d_q, grad, &mut scratch);
                add_into(&mut d_features, &scratch);
            }
            Some(vl) => {
                let d_v: f64 = d_q.iter().sum();
                let mut d_adv = Vec::with_capacity(d_q.len());
                for r in self.group_ranges() {
                    let g = &d_q[r];
                    let mean = g.iter().sum::<f64>() / g.len() as f64;
                    d_adv.extend(g.iter().map(|d| d - mean));
                }
                self.head.backward(&self.params, features, &d_adv, grad, &mut scratch);
                add_into(&mut d_features, &scratch);
                vl.backward(&self.params, features, &[d_v], grad, &mut scratch);
                add_into(&mut d_features, &scratch);
            }
        }

        let mut d_act = d_features;
        for (i, l) in self.trunk.iter().enumerate().rev() {
            let out = &cache.acts[i + 1];
            for (d, &a) in d_act.iter_mut().zip(out) {
                if a <= 0.0 {
                    *d = 0.0;
                }
            }
            l.backward(&self.params, &cache.acts[i], &d_act, grad, &mut scratch);
            std::mem::swap(&mut d_act, &mut scratch);
        }
    }

    const MAGIC: &'static [u8; 4] = b"SKQN";
    const VERSION: u32 = 1;

    /// Serializes the network. Layout (all integers u32 little-endian,
    /// all reals f64 little-endian):
    ///
    /// ```text
    /// "SKQN" | version=1 | arch (0 plain, 1 dueling) | n_groups | group sizes…
    /// | n_layers | per layer: outputs, inputs, weights (row-major out×in), biases
    /// ```
    ///
    /// Layers appear as trunk layers in order, then the value head (dueling
    /// only), then the advantage/Q head.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(Self::MAGIC)?;
        w.write_all(&Self::VERSION.to_le_bytes())?;
        let arch: u32 = match self.arch {
            Architecture::Plain => 0,
            Architecture::Dueling => 1,
        };
        w.write_all(&arch.to_le_bytes())?;
        w.write_all(&(self.groups.len() as u32).to_le_bytes())?;
        for &g in &self.groups {
            w.write_all(&(g as u32).to_le_bytes())?;
        }
        let layers = self.all_layers();
        w.write_all(&(layers.len() as u32).to_le_bytes())?;
        for l in layers {
            w.write_all(&(l.outputs as u32).to_le_bytes())?;
            w.write_all(&(l.inputs as u32).to_le_bytes())?;
            for p in &self.params[l.offset..l.offset + l.len()] {
                w.write_all(&p.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != Self::MAGIC {
            return Err(bad("bad magic"));
        }
        fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)
                .map_err(|_| Error::Checkpoint("truncated".into()))?;
            Ok(u32::from_le_bytes(b))
        }
        let mut u32_ = || read_u32(&mut r);
        let version = u32_()?;
        if version != Self::VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let arch = match u32_()? {
            0 => Architecture::Plain,
            1 => Architecture::Dueling,
            a => return Err(Error::Checkpoint(format!("unknown architecture tag {a}"))),
        };
        let n_groups = u32_()? as usize;
        let groups = (0..n_groups)
            .map(|_| u32_().map(|g| g as usize))
            .collect::<Result<Vec<_>>>()?;
        let n_layers = u32_()? as usize;
        let heads = if arch == Architecture::Dueling { 2 } else { 1 };
        if n_layers < heads || groups.is_empty() {
            return Err(bad("layer count inconsistent with architecture"));
        }
        let mut shapes = Vec::with_capacity(n_layers);
        let mut params = Vec::new();
        for _ in 0..n_layers {
            let outputs = read_u32(&mut r)? as usize;
            let inputs = read_u32(&mut r)? as usize;
            shapes.push((inputs, outputs));
            for _ in 0..(inputs * outputs + outputs) {
                let mut b = [0u8; 8];
                r.read_exact(&mut b).map_err(|_| bad("truncated weights"))?;
                params.push(f64::from_le_bytes(b));
            }
        }
        let hidden: Vec<usize> = shapes[..n_layers - heads].iter().map(|s| s.1).collect();
        let input_dim = shapes[0].0;
        let mut net = QNetwork::new(
            input_dim,
            &hidden,
            groups,
            arch,
            &mut rand::rngs::mock::StepRng::new(0, 0),
        );
        let expected: Vec<(usize, usize)> = net
            .all_layers()
            .iter()
            .map(|l| (l.inputs, l.outputs))
            .collect();
        if expected != shapes {
            return Err(bad("layer shapes do not chain"));
        }
        net.params = params;
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_checkpoint(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_checkpoint(std::io::BufReader::new(f))
    }

    fn all_layers(&self) -> Vec<Layer> {
        self.trunk
            .iter()
            .copied()
            .chain(self.value)
            .chain(std::iter::once(self.head))
            .collect()
    }
}

fn add_into(acc: &mut [f64], x: &[f64]) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}

/// Adam optimizer over a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(num_params: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}
