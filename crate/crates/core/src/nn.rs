//! Parameter storage, layer building blocks and the forward-pass context.

use crate::error::Result;
use crate::graph::{ConvCfg, Graph, NodeId, PoolCfg};
use crate::rng::SeedKey;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Clone)]
struct ParamEntry {
    name: String,
    value: Tensor,
    grad: Tensor,
    velocity: Tensor,
}

/// Flat, ordered store of trainable parameters. The creation order defines
/// the checkpoint manifest order.
#[derive(Clone, Default)]
pub struct ParamSet {
    entries: Vec<ParamEntry>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate parameter name {name}"
        );
        let grad = Tensor::zeros(value.shape());
        let velocity = Tensor::zeros(value.shape());
        self.entries.push(ParamEntry { name, value, grad, velocity });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].grad
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.data_mut().fill(0.0);
        }
    }

    /// One classical-momentum SGD step:
    /// g <- grad + weight_decay * w; v <- momentum * v + g; w <- w - lr * v.
    pub fn sgd_step(&mut self, lr: f64, momentum: f64, weight_decay: f64) {
        for e in &mut self.entries {
            let w = e.value.data_mut();
            let g = e.grad.data();
            let v = e.velocity.data_mut();
            for i in 0..w.len() {
                let gi = g[i] + weight_decay * w[i];
                v[i] = momentum * v[i] + gi;
                w[i] -= lr * v[i];
            }
        }
    }
}

/// Per-layer running statistics for batch normalization.
#[derive(Clone)]
pub struct BnStats {
    pub name: String,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BnId(usize);

#[derive(Clone, Default)]
pub struct BnStore {
    entries: Vec<BnStats>,
}

impl BnStore {
    pub fn new() -> Self {
        BnStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, channels: usize) -> BnId {
        self.entries.push(BnStats {
            name: name.into(),
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        });
        BnId(self.entries.len() - 1)
    }

    pub fn get(&self, id: BnId) -> &BnStats {
        &self.entries[id.0]
    }

    pub fn get_mut(&mut self, id: BnId) -> &mut BnStats {
        &mut self.entries[id.0]
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &BnStats> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut BnStats> {
        self.entries.iter_mut()
    }
}

/// Whether a forward pass runs with batch statistics and dropout.
#[derive(Clone, Copy)]
pub enum Mode {
    /// Batch-statistics normalization; dropout active unless disabled
    /// (the gradient checker disables it to keep the loss deterministic).
    Train { seed: u64, step: u64, dropout: bool },
    /// Running-statistics normalization, no dropout.
    Eval,
}

impl Mode {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train { .. })
    }
}

/// Per-forward context: parameters, normalization state, mode, and the
/// running-statistics updates collected along the way (applied by the
/// trainer after the pass so the model itself can stay `&self`).
pub struct Fwd<'a> {
    pub params: &'a ParamSet,
    pub bn: &'a BnStore,
    pub mode: Mode,
    pub bn_updates: Vec<(BnId, Vec<f64>, Vec<f64>)>,
}

impl<'a> Fwd<'a> {
    pub fn new(params: &'a ParamSet, bn: &'a BnStore, mode: Mode) -> Self {
        Fwd { params, bn, mode, bn_updates: Vec::new() }
    }
}

/// Seeded He-style initialization context.
pub struct Init {
    key: SeedKey,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Init { key: SeedKey::new(seed).tag("init") }
    }

    /// Normal(0, sqrt(2 / fan_out)) — fan-out scaling for conv kernels.
    fn conv_kernel(&self, name: &str, shape: &[usize]) -> Tensor {
        let fan_out: usize = shape[0] * shape[2..].iter().product::<usize>();
        let std = (2.0 / fan_out as f64).sqrt();
        let mut rng = self.key.tag(name).rng();
        let mut t = Tensor::zeros(shape);
        for v in t.data_mut() {
            *v = std * rng.normal();
        }
        t
    }

    /// Small-variance normal for classifier heads.
    fn fc_weight(&self, name: &str, shape: &[usize]) -> Tensor {
        let mut rng = self.key.tag(name).rng();
        let mut t = Tensor::zeros(shape);
        for v in t.data_mut() {
            *v = 0.01 * rng.normal();
        }
        t
    }
}

/// 3D convolution layer (bias optional; omitted when normalization follows).
pub struct Conv3d {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub cfg: ConvCfg,
}

impl Conv3d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamSet,
        init: &Init,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: [usize; 3],
        stride: [usize; 3],
        pad: [usize; 3],
        bias: bool,
    ) -> Self {
        let shape = [out_ch, in_ch, kernel[0], kernel[1], kernel[2]];
        let wname = format!("{name}.w");
        let w = ps.add(wname.clone(), init.conv_kernel(&wname, &shape));
        let b = bias.then(|| ps.add(format!("{name}.b"), Tensor::zeros(&[out_ch])));
        Conv3d { w, b, cfg: ConvCfg { stride, pad } }
    }

    pub fn forward(&self, g: &mut Graph, f: &mut Fwd, x: NodeId) -> Result<NodeId> {
        let w = g.param(f.params, self.w);
        let b = self.b.map(|pid| g.param(f.params, pid));
        g.conv3d(x, w, b, self.cfg)
    }
}

/// Batch normalization over (batch, time, height, width) per channel.
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub stats: BnId,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm {
    pub fn new(ps: &mut ParamSet, bn: &mut BnStore, name: &str, channels: usize) -> Self {
        let gamma = ps.add(format!("{name}.gamma"), Tensor::full(&[channels], 1.0));
        let beta = ps.add(format!("{name}.beta"), Tensor::zeros(&[channels]));
        let stats = bn.add(name, channels);
        BatchNorm { gamma, beta, stats, eps: 1e-5, momentum: 0.1 }
    }

    pub fn forward(&self, g: &mut Graph, f: &mut Fwd, x: NodeId) -> Result<NodeId> {
        let gamma = g.param(f.params, self.gamma);
        let beta = g.param(f.params, self.beta);
        match f.mode {
            Mode::Train { .. } => {
                let (y, mean, var) = g.batch_norm_train(x, gamma, beta, self.eps)?;
                let st = f.bn.get(self.stats);
                let m = self.momentum;
                let new_mean: Vec<f64> =
                    st.mean.iter().zip(&mean).map(|(r, b)| (1.0 - m) * r + m * b).collect();
                let new_var: Vec<f64> =
                    st.var.iter().zip(&var).map(|(r, b)| (1.0 - m) * r + m * b).collect();
                f.bn_updates.push((self.stats, new_mean, new_var));
                Ok(y)
            }
            Mode::Eval => {
                let st = f.bn.get(self.stats);
                g.batch_norm_eval(x, gamma, beta, &st.mean, &st.var, self.eps)
            }
        }
    }
}

pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(ps: &mut ParamSet, init: &Init, name: &str, in_f: usize, out_f: usize) -> Self {
        let wname = format!("{name}.w");
        let w = ps.add(wname.clone(), init.fc_weight(&wname, &[out_f, in_f]));
        let b = ps.add(format!("{name}.b"), Tensor::zeros(&[out_f]));
        Linear { w, b }
    }

    pub fn forward(&self, g: &mut Graph, f: &mut Fwd, x: NodeId) -> Result<NodeId> {
        let w = g.param(f.params, self.w);
        let b = g.param(f.params, self.b);
        g.linear(x, w, b)
    }
}

/// Inverted dropout. The mask is drawn from a seed keyed by
/// (train seed, global step, site name) so masks at one site never depend
/// on which other sites exist in the model.
pub struct Dropout {
    pub p: f64,
    pub site: String,
}

impl Dropout {
    pub fn new(p: f64, site: impl Into<String>) -> Self {
        Dropout { p, site: site.into() }
    }

    pub fn forward(&self, g: &mut Graph, f: &mut Fwd, x: NodeId) -> Result<NodeId> {
        match f.mode {
            Mode::Train { seed, step, dropout: true } if self.p > 0.0 => {
                let mut rng = SeedKey::new(seed)
                    .tag("dropout")
                    .tag(&self.site)
                    .index(step)
                    .rng();
                let keep = 1.0 - self.p;
                let mask: Vec<f64> = (0..g.value(x).numel())
                    .map(|_| if rng.uniform() < keep { 1.0 / keep } else { 0.0 })
                    .collect();
                g.dropout(x, mask)
            }
            _ => Ok(x),
        }
    }
}

/// Convenience: temporal max-pool with window == stride == alpha.
pub fn temporal_pool_cfg(alpha: usize) -> PoolCfg {
    PoolCfg { window: [alpha, 1, 1], stride: [alpha, 1, 1], pad: [0, 0, 0] }
}
