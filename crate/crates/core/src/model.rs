//! A trainable model: backbone plus optional pyramid module, with the
//! parameter set and normalization state they share.

use crate::backbone::{build_backbone, Backbone, BackboneSpec};
use crate::error::Result;
use crate::graph::{Graph, NodeId};
use crate::nn::{BnId, BnStore, Fwd, Mode, ParamSet};
use crate::tensor::Tensor;
use crate::tpn::{resolve, total_loss, PyramidConfig, TpnModule};

#[derive(Clone, Debug)]
pub struct ModelConfig {
    pub backbone: BackboneSpec,
    /// Pyramid on top of the backbone; `None` trains the plain baseline.
    pub tpn: Option<PyramidConfig>,
    pub num_classes: usize,
    /// Dropout of the baseline classifier head.
    pub head_dropout: f64,
    pub seed: u64,
}

pub struct ForwardOutput {
    pub main_logits: NodeId,
    pub aux_logits: Vec<NodeId>,
}

pub struct Model {
    pub cfg: ModelConfig,
    pub backbone: Backbone,
    pub tpn: Option<TpnModule>,
    pub params: ParamSet,
    pub bn: BnStore,
}

impl Model {
    pub fn new(cfg: ModelConfig) -> Result<Model> {
        let mut params = ParamSet::new();
        let mut bn = BnStore::new();
        let backbone = build_backbone(
            &cfg.backbone,
            cfg.num_classes,
            cfg.seed,
            cfg.head_dropout,
            &mut params,
            &mut bn,
        )?;
        let tpn = match &cfg.tpn {
            Some(pc) => {
                let plan = resolve(pc, &cfg.backbone)?;
                Some(TpnModule::build(plan, cfg.num_classes, cfg.seed, &mut params, &mut bn)?)
            }
            None => None,
        };
        Ok(Model { cfg, backbone, tpn, params, bn })
    }

    pub fn num_classes(&self) -> usize {
        self.cfg.num_classes
    }

    /// Auxiliary loss weights (empty for the baseline).
    pub fn lambdas(&self) -> Vec<f64> {
        match (&self.tpn, ) {
            (Some(t),) if !t.plan.lambdas.is_empty() && t.plan.aux_heads => t.plan.lambdas.clone(),
            _ => Vec::new(),
        }
    }

    /// One forward pass over clips laid out (batch, channel, time, h, w);
    /// for the segment-based 2D kind, time is the segment axis.
    pub fn forward(&self, g: &mut Graph, f: &mut Fwd, clips: &Tensor) -> Result<ForwardOutput> {
        let pyramid = self.backbone.forward_stages(g, f, clips)?;
        match &self.tpn {
            Some(tpn) => {
                let out = tpn.forward(g, f, &pyramid)?;
                Ok(ForwardOutput { main_logits: out.main_logits, aux_logits: out.aux_logits })
            }
            None => {
                let logits = self.backbone.logits(g, f, &pyramid)?;
                Ok(ForwardOutput { main_logits: logits, aux_logits: Vec::new() })
            }
        }
    }

    /// Total training objective on a forward output.
    pub fn loss(
        &self,
        g: &mut Graph,
        out: &ForwardOutput,
        labels: &[usize],
    ) -> Result<NodeId> {
        let lambdas = self.lambdas();
        total_loss(g, out.main_logits, &out.aux_logits, labels, &lambdas)
    }

    /// Convenience: forward + loss in training mode with a fresh context;
    /// returns the collected running-statistics updates for the caller to
    /// apply.
    pub fn train_loss(
        &self,
        clips: &Tensor,
        labels: &[usize],
        mode: Mode,
    ) -> Result<(Graph, NodeId, Vec<(BnId, Vec<f64>, Vec<f64>)>)> {
        let mut g = Graph::new();
        let mut f = Fwd::new(&self.params, &self.bn, mode);
        let out = self.forward(&mut g, &mut f, clips)?;
        let loss = self.loss(&mut g, &out, labels)?;
        Ok((g, loss, f.bn_updates))
    }

    /// Softmax class probabilities in eval mode, one row per batch element.
    pub fn eval_probs(&self, clips: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let mut f = Fwd::new(&self.params, &self.bn, Mode::Eval);
        let out = self.forward(&mut g, &mut f, clips)?;
        crate::graph::ops::softmax_rows(g.value(out.main_logits))
    }

    pub fn apply_bn_updates(&mut self, updates: Vec<(BnId, Vec<f64>, Vec<f64>)>) {
        for (id, mean, var) in updates {
            let st = self.bn.get_mut(id);
            st.mean = mean;
            st.var = var;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::BackboneKind;

    fn randn(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = crate::rng::SeedKey::new(seed).rng();
        let mut t = Tensor::zeros(shape);
        for v in t.data_mut() {
            *v = rng.normal();
        }
        t
    }

    #[test]
    fn baseline_and_tpn_share_backbone_initialization() {
        let base = Model::new(ModelConfig {
            backbone: BackboneSpec::toy(),
            tpn: None,
            num_classes: 4,
            head_dropout: 0.5,
            seed: 11,
        })
        .unwrap();
        let tpn = Model::new(ModelConfig {
            backbone: BackboneSpec::toy(),
            tpn: Some(PyramidConfig::res45_parallel()),
            num_classes: 4,
            head_dropout: 0.5,
            seed: 11,
        })
        .unwrap();
        for id in base.params.ids() {
            let name = base.params.name(id).to_string();
            let other = tpn.params.find(&name).expect("backbone params present in both");
            assert_eq!(
                base.params.value(id).data(),
                tpn.params.value(other).data(),
                "{name} differs"
            );
        }
        assert!(tpn.params.len() > base.params.len());
    }

    #[test]
    fn segment_kind_forwards_and_classifies() {
        let mut spec = BackboneSpec::toy();
        spec.kind = BackboneKind::Conv2dSegments;
        spec.temporal_kernels = vec![1, 1, 1, 1];
        let model = Model::new(ModelConfig {
            backbone: spec,
            tpn: Some(PyramidConfig::res45_parallel()),
            num_classes: 4,
            head_dropout: 0.0,
            seed: 2,
        })
        .unwrap();
        let clips = randn(&[2, 3, 8, 32, 32], 4);
        let probs = model.eval_probs(&clips).unwrap();
        assert_eq!(probs.shape(), &[2, 4]);
        for b in 0..2 {
            let s: f64 = probs.data()[b * 4..(b + 1) * 4].iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn batch_permutation_permutes_logits_rows() {
        let model = Model::new(ModelConfig {
            backbone: BackboneSpec::toy(),
            tpn: Some(PyramidConfig::res45_parallel()),
            num_classes: 4,
            head_dropout: 0.0,
            seed: 5,
        })
        .unwrap();
        let a = randn(&[1, 3, 8, 32, 32], 6);
        let b = randn(&[1, 3, 8, 32, 32], 7);
        let stack = |x: &Tensor, y: &Tensor| {
            let mut t = Tensor::zeros(&[2, 3, 8, 32, 32]);
            let n = x.numel();
            t.data_mut()[..n].copy_from_slice(x.data());
            t.data_mut()[n..].copy_from_slice(y.data());
            t
        };
        let p_ab = model.eval_probs(&stack(&a, &b)).unwrap();
        let p_ba = model.eval_probs(&stack(&b, &a)).unwrap();
        assert_eq!(p_ab.data()[..4], p_ba.data()[4..]);
        assert_eq!(p_ab.data()[4..], p_ba.data()[..4]);
    }
}
