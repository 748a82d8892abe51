//! Toy-scale residual video backbones exposing hierarchical stage features.
//!
//! Two kinds share one implementation: the inflated 3D kind convolves over
//! (time, height, width) with per-stage temporal kernel sizes, and the
//! segment-based 2D kind is the same network constrained to temporal kernel
//! 1 everywhere, run over per-segment frames stacked along a synthetic time
//! axis. Neither kind downsamples time anywhere, so every stage preserves
//! the input frame count.

pub mod shapes;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId, PoolCfg};
use crate::nn::{BatchNorm, BnStore, Conv3d, Dropout, Fwd, Init, Linear, ParamSet};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
pub use shapes::{infer_stage_shapes, infer_stage_shapes_for, StageShape};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    Conv3d,
    Conv2dSegments,
}

/// Structural description of a backbone.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub kind: BackboneKind,
    /// Bottleneck blocks per stage (res2..res5).
    pub depth_blocks: Vec<usize>,
    /// Stem width; stage i outputs base_channels * 2^(i-1) * 4 channels.
    pub base_channels: usize,
    /// Temporal kernel size per stage, each 1 or 3.
    pub temporal_kernels: Vec<usize>,
    pub input_frames: usize,
    pub input_size: usize,
    #[serde(default = "default_in_channels")]
    pub in_channels: usize,
}

fn default_in_channels() -> usize {
    3
}

impl BackboneSpec {
    /// The full-width reference structure: 3-4-6-3 bottlenecks at base 64,
    /// temporal kernels on res4/res5 only, 8 frames of 224x224 input.
    pub fn full_width() -> Self {
        BackboneSpec {
            kind: BackboneKind::Conv3d,
            depth_blocks: vec![3, 4, 6, 3],
            base_channels: 64,
            temporal_kernels: vec![1, 1, 3, 3],
            input_frames: 8,
            input_size: 224,
            in_channels: 3,
        }
    }

    /// Desk-scale default: one block per stage at base width 8.
    pub fn toy() -> Self {
        BackboneSpec {
            kind: BackboneKind::Conv3d,
            depth_blocks: vec![1, 1, 1, 1],
            base_channels: 8,
            temporal_kernels: vec![1, 1, 3, 3],
            input_frames: 8,
            input_size: 32,
            in_channels: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth_blocks.len() != 4 {
            return Err(Error::config(
                "backbone.depth_blocks",
                format!("expected 4 stage depths, got {}", self.depth_blocks.len()),
            ));
        }
        if self.depth_blocks.iter().any(|&d| d == 0) {
            return Err(Error::config("backbone.depth_blocks", "stage depth must be positive"));
        }
        if self.base_channels == 0 {
            return Err(Error::config("backbone.base_channels", "must be positive"));
        }
        if self.temporal_kernels.len() != 4 {
            return Err(Error::config(
                "backbone.temporal_kernels",
                format!("expected 4 kernel sizes, got {}", self.temporal_kernels.len()),
            ));
        }
        if self.temporal_kernels.iter().any(|&k| k != 1 && k != 3) {
            return Err(Error::config("backbone.temporal_kernels", "kernel sizes must be 1 or 3"));
        }
        if self.kind == BackboneKind::Conv2dSegments && self.temporal_kernels.iter().any(|&k| k != 1)
        {
            return Err(Error::config(
                "backbone.temporal_kernels",
                "the segment-based 2D kind requires temporal kernel 1 in every stage",
            ));
        }
        if self.input_frames == 0 {
            return Err(Error::config("backbone.input_frames", "must be positive"));
        }
        if self.input_size == 0 || self.input_size % 32 != 0 {
            return Err(Error::config(
                "backbone.input_size",
                format!("spatial side must be a positive multiple of 32, got {}", self.input_size),
            ));
        }
        if self.in_channels == 0 {
            return Err(Error::config("backbone.in_channels", "must be positive"));
        }
        Ok(())
    }

    /// Output channel count of the deepest stage.
    pub fn top_channels(&self) -> usize {
        self.base_channels * 8 * 4
    }
}

/// One stage feature on the tape plus its geometry metadata.
#[derive(Clone, Copy, Debug)]
pub struct FeatureMap {
    pub node: NodeId,
    pub stage_id: usize,
    pub spatial_stride: usize,
    pub temporal_rf: usize,
}

/// The four stage features of one forward pass, ordered res2..res5.
pub struct StagePyramid {
    pub levels: Vec<FeatureMap>,
}

impl StagePyramid {
    pub fn by_stage(&self, stage_id: usize) -> Option<&FeatureMap> {
        self.levels.iter().find(|f| f.stage_id == stage_id)
    }
}

struct Bottleneck {
    conv1: Conv3d,
    bn1: BatchNorm,
    conv2: Conv3d,
    bn2: BatchNorm,
    conv3: Conv3d,
    bn3: BatchNorm,
    down: Option<(Conv3d, BatchNorm)>,
}

impl Bottleneck {
    #[allow(clippy::too_many_arguments)]
    fn new(
        ps: &mut ParamSet,
        bn: &mut BnStore,
        init: &Init,
        name: &str,
        in_ch: usize,
        planes: usize,
        out_ch: usize,
        spatial_stride: usize,
        kt: usize,
    ) -> Self {
        let s = spatial_stride;
        let conv1 = Conv3d::new(
            ps,
            init,
            &format!("{name}.conv1"),
            in_ch,
            planes,
            [kt, 1, 1],
            [1, 1, 1],
            [kt / 2, 0, 0],
            false,
        );
        let bn1 = BatchNorm::new(ps, bn, &format!("{name}.bn1"), planes);
        let conv2 = Conv3d::new(
            ps,
            init,
            &format!("{name}.conv2"),
            planes,
            planes,
            [1, 3, 3],
            [1, s, s],
            [0, 1, 1],
            false,
        );
        let bn2 = BatchNorm::new(ps, bn, &format!("{name}.bn2"), planes);
        let conv3 = Conv3d::new(
            ps,
            init,
            &format!("{name}.conv3"),
            planes,
            out_ch,
            [1, 1, 1],
            [1, 1, 1],
            [0, 0, 0],
            false,
        );
        let bn3 = BatchNorm::new(ps, bn, &format!("{name}.bn3"), out_ch);
        let down = if s != 1 || in_ch != out_ch {
            let dc = Conv3d::new(
                ps,
                init,
                &format!("{name}.down"),
                in_ch,
                out_ch,
                [1, 1, 1],
                [1, s, s],
                [0, 0, 0],
                false,
            );
            let db = BatchNorm::new(ps, bn, &format!("{name}.down_bn"), out_ch);
            Some((dc, db))
        } else {
            None
        };
        Bottleneck { conv1, bn1, conv2, bn2, conv3, bn3, down }
    }

    fn forward(&self, g: &mut Graph, f: &mut Fwd, x: NodeId) -> Result<NodeId> {
        let mut y = self.conv1.forward(g, f, x)?;
        y = self.bn1.forward(g, f, y)?;
        y = g.relu(y);
        y = self.conv2.forward(g, f, y)?;
        y = self.bn2.forward(g, f, y)?;
        y = g.relu(y);
        y = self.conv3.forward(g, f, y)?;
        y = self.bn3.forward(g, f, y)?;
        let shortcut = match &self.down {
            Some((dc, db)) => {
                let d = dc.forward(g, f, x)?;
                db.forward(g, f, d)?
            }
            None => x,
        };
        let s = g.add(y, shortcut)?;
        Ok(g.relu(s))
    }
}

struct Stage {
    blocks: Vec<Bottleneck>,
    stage_id: usize,
    spatial_stride: usize,
    temporal_rf: usize,
}

/// Global-average-pool classifier head shared by both backbone kinds. For
/// the segment kind, pooling over the synthetic time axis is exactly the
/// segment-consensus average.
pub struct ClassifierHead {
    pub dropout: Dropout,
    pub fc: Linear,
}

impl ClassifierHead {
    pub fn forward(&self, g: &mut Graph, f: &mut Fwd, top: NodeId) -> Result<NodeId> {
        let pooled = g.global_avg_pool(top)?;
        let dropped = self.dropout.forward(g, f, pooled)?;
        self.fc.forward(g, f, dropped)
    }
}

pub struct Backbone {
    pub spec: BackboneSpec,
    pub num_classes: usize,
    stem_conv: Conv3d,
    stem_bn: BatchNorm,
    stages: Vec<Stage>,
    pub head: ClassifierHead,
}

/// Builds a backbone with seeded deterministic initialization. Every
/// parameter's values are keyed by its name, so unrelated modules can be
/// added or removed without disturbing this backbone's initialization.
pub fn build_backbone(
    spec: &BackboneSpec,
    num_classes: usize,
    seed: u64,
    head_dropout: f64,
    ps: &mut ParamSet,
    bn: &mut BnStore,
) -> Result<Backbone> {
    spec.validate()?;
    if num_classes < 2 {
        return Err(Error::config("num_classes", "need at least 2 classes"));
    }
    let init = Init::new(seed);
    let stem_conv = Conv3d::new(
        ps,
        &init,
        "backbone.stem.conv",
        spec.in_channels,
        spec.base_channels,
        [1, 7, 7],
        [1, 2, 2],
        [0, 3, 3],
        false,
    );
    let stem_bn = BatchNorm::new(ps, bn, "backbone.stem.bn", spec.base_channels);

    let mut stages = Vec::with_capacity(4);
    let mut in_ch = spec.base_channels;
    let mut rf = 1usize;
    for si in 0..4 {
        let stage_id = si + 2;
        let planes = spec.base_channels << si;
        let out_ch = planes * 4;
        let kt = spec.temporal_kernels[si];
        let mut blocks = Vec::with_capacity(spec.depth_blocks[si]);
        for b in 0..spec.depth_blocks[si] {
            let stride = if si > 0 && b == 0 { 2 } else { 1 };
            blocks.push(Bottleneck::new(
                ps,
                bn,
                &init,
                &format!("backbone.res{stage_id}.b{b}"),
                if b == 0 { in_ch } else { out_ch },
                planes,
                out_ch,
                stride,
                kt,
            ));
        }
        if kt == 3 {
            rf += 2 * spec.depth_blocks[si];
        }
        stages.push(Stage { blocks, stage_id, spatial_stride: 4 << si, temporal_rf: rf });
        in_ch = out_ch;
    }

    let head = ClassifierHead {
        dropout: Dropout::new(head_dropout, "backbone.head.dropout"),
        fc: Linear::new(ps, &init, "backbone.head.fc", spec.top_channels(), num_classes),
    };

    Ok(Backbone { spec: spec.clone(), num_classes, stem_conv, stem_bn, stages, head })
}

impl Backbone {
    fn check_input(&self, clips: &Tensor) -> Result<[usize; 5]> {
        let dims = clips.dims5()?;
        let [_, c, _, h, w] = dims;
        if c != self.spec.in_channels {
            return Err(Error::Shape(format!(
                "backbone expects {} input channels, got {c}",
                self.spec.in_channels
            )));
        }
        if h % 32 != 0 || w % 32 != 0 {
            return Err(Error::Shape(format!(
                "spatial side must be divisible by 32, got {h}x{w}"
            )));
        }
        if !clips.is_finite() {
            return Err(Error::Numeric("non-finite values in input clips".into()));
        }
        Ok(dims)
    }

    /// Runs the stem and all four stages on clips laid out as
    /// (batch, channel, time, height, width).
    pub fn forward_stages(&self, g: &mut Graph, f: &mut Fwd, clips: &Tensor) -> Result<StagePyramid> {
        self.check_input(clips)?;
        let x = g.leaf(clips.clone());
        self.forward_stages_node(g, f, x)
    }

    /// As [`Backbone::forward_stages`] for an input already on the tape.
    pub fn forward_stages_node(
        &self,
        g: &mut Graph,
        f: &mut Fwd,
        x: NodeId,
    ) -> Result<StagePyramid> {
        let mut y = self.stem_conv.forward(g, f, x)?;
        y = self.stem_bn.forward(g, f, y)?;
        y = g.relu(y);
        y = g.max_pool(
            y,
            PoolCfg { window: [1, 3, 3], stride: [1, 2, 2], pad: [0, 1, 1] },
        )?;
        let mut levels = Vec::with_capacity(4);
        for stage in &self.stages {
            for block in &stage.blocks {
                y = block.forward(g, f, y)?;
            }
            levels.push(FeatureMap {
                node: y,
                stage_id: stage.stage_id,
                spatial_stride: stage.spatial_stride,
                temporal_rf: stage.temporal_rf,
            });
        }
        Ok(StagePyramid { levels })
    }

    /// Runs the (weight-shared) 2D path on per-segment frames laid out as
    /// (batch, segment, channel, height, width); per-segment stage features
    /// are stacked along a synthetic time axis. Implemented by transposing
    /// to (batch, channel, segment, h, w) — with temporal kernel 1 and no
    /// temporal downsampling this is exactly a shared 2D network per frame.
    pub fn forward_stages_2d(
        &self,
        g: &mut Graph,
        f: &mut Fwd,
        segments: &Tensor,
    ) -> Result<StagePyramid> {
        let [b, s, c, h, w] = segments.dims5()?;
        if s == 0 {
            return Err(Error::Shape("need at least one segment".into()));
        }
        let mut stacked = Tensor::zeros(&[b, c, s, h, w]);
        {
            let src = segments.data();
            let dst = stacked.data_mut();
            let plane = h * w;
            for bi in 0..b {
                for si in 0..s {
                    for ci in 0..c {
                        let from = ((bi * s + si) * c + ci) * plane;
                        let to = ((bi * c + ci) * s + si) * plane;
                        dst[to..to + plane].copy_from_slice(&src[from..from + plane]);
                    }
                }
            }
        }
        self.forward_stages(g, f, &stacked)
    }

    /// Classification logits from the deepest stage (the baseline head).
    pub fn logits(&self, g: &mut Graph, f: &mut Fwd, pyramid: &StagePyramid) -> Result<NodeId> {
        let top = pyramid.levels.last().expect("four stages").node;
        self.head.forward(g, f, top)
    }
}

/// Inflates a 2D kernel (out, in, k, k) to 3D (out, in, t, k, k) by copying
/// it `t` times and rescaling by 1/t, so a temporally constant signal sees
/// the original 2D response.
pub fn inflate_kernel(kernel2d: &Tensor, t: usize) -> Result<Tensor> {
    if t < 1 {
        return Err(Error::Invalid("inflation factor must be >= 1".into()));
    }
    let shape = kernel2d.shape();
    if shape.len() != 4 {
        return Err(Error::Shape(format!(
            "expected rank-4 kernel (out, in, k, k), got {shape:?}"
        )));
    }
    let (o, i, kh, kw) = (shape[0], shape[1], shape[2], shape[3]);
    let mut out = Tensor::zeros(&[o, i, t, kh, kw]);
    let scale = 1.0 / t as f64;
    {
        let src = kernel2d.data();
        let dst = out.data_mut();
        let plane = kh * kw;
        for oi in 0..o * i {
            for dt in 0..t {
                let to = (oi * t + dt) * plane;
                for k in 0..plane {
                    dst[to + k] = src[oi * plane + k] * scale;
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::ops::conv3d_fwd;
    use crate::graph::ConvCfg;
    use crate::nn::Mode;

    fn randn(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = crate::rng::SeedKey::new(seed).rng();
        let mut t = Tensor::zeros(shape);
        for v in t.data_mut() {
            *v = rng.normal();
        }
        t
    }

    fn toy_backbone(kind: BackboneKind) -> (Backbone, ParamSet, BnStore) {
        let mut spec = BackboneSpec::toy();
        spec.kind = kind;
        if kind == BackboneKind::Conv2dSegments {
            spec.temporal_kernels = vec![1, 1, 1, 1];
        }
        let mut ps = ParamSet::new();
        let mut bn = BnStore::new();
        let b = build_backbone(&spec, 4, 7, 0.5, &mut ps, &mut bn).unwrap();
        (b, ps, bn)
    }

    #[test]
    fn invalid_specs_name_the_offending_field() {
        let mut spec = BackboneSpec::toy();
        spec.depth_blocks = vec![1, 1, 1];
        let mut ps = ParamSet::new();
        let mut bn = BnStore::new();
        let err = build_backbone(&spec, 4, 0, 0.0, &mut ps, &mut bn).unwrap_err();
        match err {
            Error::Config { field, .. } => assert_eq!(field, "backbone.depth_blocks"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn toy_forward_matches_symbolic_shapes() {
        let (backbone, ps, bn) = toy_backbone(BackboneKind::Conv3d);
        let clips = randn(&[2, 3, 8, 32, 32], 5);
        let mut g = Graph::new();
        let mut f = Fwd::new(&ps, &bn, Mode::Eval);
        let pyr = backbone.forward_stages(&mut g, &mut f, &clips).unwrap();
        let want = infer_stage_shapes(&backbone.spec).unwrap();
        for (level, w) in pyr.levels.iter().zip(want) {
            assert_eq!(
                g.shape(level.node),
                &[2, w.channels, w.time, w.height, w.width],
                "stage {}",
                w.stage_id
            );
            assert_eq!(level.spatial_stride, w.spatial_stride);
            assert_eq!(level.temporal_rf, w.temporal_rf);
        }
        assert_eq!(g.shape(pyr.levels[3].node), &[2, 256, 8, 1, 1]);
    }

    #[test]
    fn batch_samples_are_independent_in_eval() {
        let (backbone, ps, bn) = toy_backbone(BackboneKind::Conv3d);
        let clip = randn(&[1, 3, 8, 32, 32], 9);
        let mut two = Tensor::zeros(&[2, 3, 8, 32, 32]);
        let n = clip.numel();
        two.data_mut()[..n].copy_from_slice(clip.data());
        two.data_mut()[n..].copy_from_slice(clip.data());

        let mut g = Graph::new();
        let mut f = Fwd::new(&ps, &bn, Mode::Eval);
        let pyr = backbone.forward_stages(&mut g, &mut f, &two).unwrap();
        let top = g.value(pyr.levels[3].node);
        let half = top.numel() / 2;
        assert_eq!(top.data()[..half], top.data()[half..]);
    }

    #[test]
    fn zeroed_final_stage_outputs_zeros() {
        let (backbone, mut ps, bn) = toy_backbone(BackboneKind::Conv3d);
        for id in ps.ids().collect::<Vec<_>>() {
            if ps.name(id).starts_with("backbone.res5.") {
                ps.value_mut(id).data_mut().fill(0.0);
            }
        }
        let clips = randn(&[1, 3, 8, 32, 32], 11);
        let mut g = Graph::new();
        let mut f = Fwd::new(&ps, &bn, Mode::Eval);
        let pyr = backbone.forward_stages(&mut g, &mut f, &clips).unwrap();
        assert!(g.value(pyr.levels[3].node).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_bad_spatial_side_and_nonfinite_input() {
        let (backbone, ps, bn) = toy_backbone(BackboneKind::Conv3d);
        let mut g = Graph::new();
        let mut f = Fwd::new(&ps, &bn, Mode::Eval);
        let bad = Tensor::zeros(&[1, 3, 8, 33, 33]);
        assert!(matches!(
            backbone.forward_stages(&mut g, &mut f, &bad),
            Err(Error::Shape(_))
        ));
        let mut nan = Tensor::zeros(&[1, 3, 8, 32, 32]);
        nan.data_mut()[0] = f64::NAN;
        assert!(matches!(
            backbone.forward_stages(&mut g, &mut f, &nan),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn segment_backbone_stacks_time_and_shares_weights() {
        let (backbone, ps, bn) = toy_backbone(BackboneKind::Conv2dSegments);
        // 8 identical segments -> all temporal slices of res5 identical
        let frame = randn(&[1, 1, 3, 32, 32], 13);
        let mut segs = Tensor::zeros(&[1, 8, 3, 32, 32]);
        let n = frame.numel();
        for s in 0..8 {
            segs.data_mut()[s * n..(s + 1) * n].copy_from_slice(frame.data());
        }
        let mut g = Graph::new();
        let mut f = Fwd::new(&ps, &bn, Mode::Eval);
        let pyr = backbone.forward_stages_2d(&mut g, &mut f, &segs).unwrap();
        let res5 = g.value(pyr.levels[3].node);
        let [_, c, t, h, w] = res5.dims5().unwrap();
        assert_eq!(t, 8);
        let plane = h * w;
        let d = res5.data();
        for ch in 0..c {
            for ti in 1..t {
                for k in 0..plane {
                    let a = d[(ch * t) * plane + k];
                    let b = d[(ch * t + ti) * plane + k];
                    assert!((a - b).abs() < 1e-12, "slice {ti} differs at ch {ch}");
                }
            }
        }
    }

    #[test]
    fn one_segment_gives_time_one_everywhere() {
        let (backbone, ps, bn) = toy_backbone(BackboneKind::Conv2dSegments);
        let segs = randn(&[2, 1, 3, 32, 32], 15);
        let mut g = Graph::new();
        let mut f = Fwd::new(&ps, &bn, Mode::Eval);
        let pyr = backbone.forward_stages_2d(&mut g, &mut f, &segs).unwrap();
        for level in &pyr.levels {
            assert_eq!(g.shape(level.node)[2], 1);
        }
    }

    #[test]
    fn inflate_kernel_copy_and_rescale() {
        let k = Tensor::from_vec(&[1, 1, 1, 1], vec![2.0]).unwrap();
        let k1 = inflate_kernel(&k, 1).unwrap();
        assert_eq!(k1.shape(), &[1, 1, 1, 1, 1]);
        assert_eq!(k1.data(), &[2.0]);
        let k2 = inflate_kernel(&k, 2).unwrap();
        assert_eq!(k2.data(), &[1.0, 1.0]);
        assert!(inflate_kernel(&k, 0).is_err());

        let k3 = randn(&[2, 3, 3, 3], 17);
        let infl = inflate_kernel(&k3, 3).unwrap();
        // temporal sum reconstructs the original kernel
        let plane = 9;
        for oi in 0..6 {
            for p in 0..plane {
                let s: f64 = (0..3).map(|t| infl.data()[(oi * 3 + t) * plane + p]).sum();
                assert!((s - k3.data()[oi * plane + p]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn inflated_conv_matches_2d_on_constant_signal() {
        let k2d = randn(&[4, 2, 3, 3], 19);
        let k3d = inflate_kernel(&k2d, 3).unwrap();
        let frame = randn(&[1, 2, 1, 6, 6], 20);
        let t = 5;
        let mut clip = Tensor::zeros(&[1, 2, t, 6, 6]);
        {
            let plane = 36;
            let fd = frame.data();
            let cd = clip.data_mut();
            for c in 0..2 {
                for ti in 0..t {
                    cd[(c * t + ti) * plane..(c * t + ti + 1) * plane]
                        .copy_from_slice(&fd[c * plane..(c + 1) * plane]);
                }
            }
        }
        let y3 = conv3d_fwd(
            &clip,
            &k3d,
            None,
            &ConvCfg { stride: [1, 1, 1], pad: [1, 1, 1] },
        )
        .unwrap();
        let k2d5 = k2d.clone().reshape(&[4, 2, 1, 3, 3]).unwrap();
        let y2 = conv3d_fwd(
            &frame,
            &k2d5,
            None,
            &ConvCfg { stride: [1, 1, 1], pad: [0, 1, 1] },
        )
        .unwrap();
        // interior frames (temporal padding untouched) match the 2D response
        let plane = 36;
        for c in 0..4 {
            for ti in 1..t - 1 {
                for p in 0..plane {
                    let a = y3.data()[(c * t + ti) * plane + p];
                    let b = y2.data()[c * plane + p];
                    assert!((a - b).abs() < 1e-5, "c={c} t={ti} p={p}: {a} vs {b}");
                }
            }
        }
    }
}
