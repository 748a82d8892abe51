//! The temporal pyramid module: source collection, spatial semantic
//! modulation with auxiliary supervision, temporal rate modulation, one of
//! five information flows, and the rescale-concat-classify head.

pub mod flows;

use crate::backbone::{infer_stage_shapes, BackboneSpec, FeatureMap, StagePyramid};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId, PoolCfg};
use crate::nn::{temporal_pool_cfg, BatchNorm, BnStore, Conv3d, Dropout, Fwd, Init, Linear, ParamSet};
use serde::{Deserialize, Serialize};

pub use flows::{aggregate, g_resample, FlowKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceMode {
    SingleDepth,
    MultiDepth,
}

fn default_dropout() -> f64 {
    0.5
}

fn default_true() -> bool {
    true
}

/// Full pyramid specification. `stages`/`rates` select the feature sources;
/// the component toggles (`aux_heads`, `spatial_convs`, `temporal_mod`)
/// exist for the component-ablation axis and default to the full module.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PyramidConfig {
    pub source_mode: SourceMode,
    /// Multi-depth: the source stages, ascending. Single-depth: one stage.
    pub stages: Vec<usize>,
    /// Single-depth only: strictly increasing temporal sampling rates.
    #[serde(default)]
    pub rates: Vec<usize>,
    /// Per-level temporal downsampling factors; empty derives a default.
    #[serde(default)]
    pub alphas: Vec<usize>,
    pub flow: FlowKind,
    /// Unified channel width after modulation; defaults to half the top
    /// stage width (1024 at full width).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mod_channels: Option<usize>,
    /// Auxiliary loss weights, one per non-top level; empty means 0.5 each.
    #[serde(default)]
    pub lambdas: Vec<f64>,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    #[serde(default = "default_true")]
    pub aux_heads: bool,
    #[serde(default = "default_true")]
    pub spatial_convs: bool,
    #[serde(default = "default_true")]
    pub temporal_mod: bool,
}

impl PyramidConfig {
    /// The strongest ablation cell: multi-depth over res4/res5 with the
    /// parallel flow and one auxiliary head at weight 0.5.
    pub fn res45_parallel() -> Self {
        PyramidConfig {
            source_mode: SourceMode::MultiDepth,
            stages: vec![4, 5],
            rates: vec![],
            alphas: vec![],
            flow: FlowKind::Parallel,
            mod_channels: None,
            lambdas: vec![],
            dropout: 0.5,
            aux_heads: true,
            spatial_convs: true,
            temporal_mod: true,
        }
    }
}

/// One planned pyramid level (bottom to top).
#[derive(Clone, Copy, Debug)]
pub struct LevelPlan {
    pub stage_id: usize,
    /// Temporal subsampling rate applied at collection (1 for multi-depth).
    pub rate: usize,
    pub in_channels: usize,
    /// Frame count after collection.
    pub time: usize,
    pub height: usize,
    pub width: usize,
    /// Number of stride-2 spatial steps down to the top level's shape.
    pub down_steps: usize,
    /// Temporal downsampling factor in rate modulation.
    pub alpha: usize,
}

/// Validated geometry of a pyramid over a given backbone.
#[derive(Clone, Debug)]
pub struct ResolvedPyramid {
    pub levels: Vec<LevelPlan>,
    pub mod_channels: usize,
    pub lambdas: Vec<f64>,
    pub flow: FlowKind,
    pub dropout: f64,
    pub aux_heads: bool,
    pub spatial_convs: bool,
    pub temporal_mod: bool,
}

impl ResolvedPyramid {
    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    /// Feature width entering the final fully-connected layer.
    pub fn fc_in(&self) -> usize {
        self.levels.len() * self.mod_channels
    }

    /// (channels, time, height, width) of every level after spatial
    /// modulation, before rate modulation.
    pub fn modulated_shapes(&self) -> Vec<[usize; 4]> {
        let top = self.levels.last().expect("nonempty pyramid");
        self.levels
            .iter()
            .map(|l| [self.mod_channels, l.time, top.height, top.width])
            .collect()
    }

    /// Level shapes after temporal rate modulation.
    pub fn temporal_shapes(&self) -> Vec<[usize; 4]> {
        let top = self.levels.last().expect("nonempty pyramid");
        self.levels
            .iter()
            .map(|l| {
                let t = if self.temporal_mod { l.time / l.alpha } else { l.time };
                [self.mod_channels, t, top.height, top.width]
            })
            .collect()
    }
}

/// Checks a pyramid configuration against a backbone spec and fills in the
/// derived defaults (alphas, lambdas, channel width, per-level geometry).
pub fn resolve(cfg: &PyramidConfig, spec: &BackboneSpec) -> Result<ResolvedPyramid> {
    let shapes = infer_stage_shapes(spec)?;
    let stage = |id: usize| -> Result<&crate::backbone::StageShape> {
        shapes
            .iter()
            .find(|s| s.stage_id == id)
            .ok_or_else(|| Error::config("tpn.stages", format!("unknown stage res{id}")))
    };

    let mut levels: Vec<LevelPlan> = Vec::new();
    match cfg.source_mode {
        SourceMode::MultiDepth => {
            if cfg.stages.is_empty() {
                return Err(Error::config("tpn.stages", "multi-depth pyramid needs source stages"));
            }
            if !cfg.rates.is_empty() {
                return Err(Error::config("tpn.rates", "rates only apply to single-depth pyramids"));
            }
            if cfg.stages.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::config("tpn.stages", "source stages must be strictly increasing"));
            }
            for &sid in &cfg.stages {
                let s = stage(sid)?;
                levels.push(LevelPlan {
                    stage_id: sid,
                    rate: 1,
                    in_channels: s.channels,
                    time: s.time,
                    height: s.height,
                    width: s.width,
                    down_steps: 0,
                    alpha: 1,
                });
            }
        }
        SourceMode::SingleDepth => {
            if cfg.stages.len() != 1 {
                return Err(Error::config(
                    "tpn.stages",
                    "single-depth pyramid takes exactly one source stage",
                ));
            }
            if cfg.rates.is_empty() {
                return Err(Error::config("tpn.rates", "single-depth pyramid needs sampling rates"));
            }
            if cfg.rates.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::config("tpn.rates", "rates must be strictly increasing"));
            }
            let s = stage(cfg.stages[0])?;
            for &r in &cfg.rates {
                if r == 0 || s.time % r != 0 {
                    return Err(Error::config(
                        "tpn.rates",
                        format!("rate {r} does not divide the {} source frames", s.time),
                    ));
                }
                levels.push(LevelPlan {
                    stage_id: s.stage_id,
                    rate: r,
                    in_channels: s.channels,
                    time: s.time / r,
                    height: s.height,
                    width: s.width,
                    down_steps: 0,
                    alpha: 1,
                });
            }
        }
    }

    let m = levels.len();
    let top = *levels.last().expect("nonempty");
    for l in &mut levels {
        if l.height % top.height != 0 || l.width % top.width != 0 {
            return Err(Error::Shape(format!(
                "level res{} ({}x{}) cannot be downsampled to the top shape {}x{}",
                l.stage_id, l.height, l.width, top.height, top.width
            )));
        }
        let ratio = l.height / top.height;
        if l.width / top.width != ratio || !ratio.is_power_of_two() {
            return Err(Error::Shape(format!(
                "level res{} spatial ratio {ratio} is not a power of two",
                l.stage_id
            )));
        }
        l.down_steps = ratio.trailing_zeros() as usize;
    }

    let alphas = if cfg.alphas.is_empty() {
        match cfg.source_mode {
            // match the deepest level down to one frame, halving per level
            SourceMode::MultiDepth => {
                let t = top.time;
                (0..m)
                    .map(|j| {
                        let a = t >> (m - 1 - j);
                        if a == 0 {
                            1
                        } else {
                            a
                        }
                    })
                    .collect::<Vec<_>>()
            }
            // the rates already produce the tempo hierarchy
            SourceMode::SingleDepth => vec![1; m],
        }
    } else {
        cfg.alphas.clone()
    };
    if alphas.len() != m {
        return Err(Error::config(
            "tpn.alphas",
            format!("expected {m} factors, got {}", alphas.len()),
        ));
    }
    for (l, &a) in levels.iter_mut().zip(&alphas) {
        if a == 0 || l.time % a != 0 {
            return Err(Error::config(
                "tpn.alphas",
                format!("alpha {a} does not divide the level's {} frames", l.time),
            ));
        }
        l.alpha = a;
    }

    let lambdas = if cfg.lambdas.is_empty() {
        vec![0.5; m.saturating_sub(1)]
    } else {
        cfg.lambdas.clone()
    };
    if lambdas.len() + 1 != m {
        return Err(Error::config(
            "tpn.lambdas",
            format!("expected {} weights for {m} levels, got {}", m - 1, lambdas.len()),
        ));
    }
    if lambdas.iter().any(|&l| l < 0.0) {
        return Err(Error::config("tpn.lambdas", "weights must be non-negative"));
    }

    if !(0.0..1.0).contains(&cfg.dropout) {
        return Err(Error::config("tpn.dropout", "dropout must lie in [0, 1)"));
    }

    let mod_channels = cfg.mod_channels.unwrap_or_else(|| (spec.top_channels() / 2).max(1));
    if mod_channels == 0 {
        return Err(Error::config("tpn.mod_channels", "must be positive"));
    }

    Ok(ResolvedPyramid {
        levels,
        mod_channels,
        lambdas,
        flow: cfg.flow,
        dropout: cfg.dropout,
        aux_heads: cfg.aux_heads,
        spatial_convs: cfg.spatial_convs,
        temporal_mod: cfg.temporal_mod,
    })
}

/// Selects the pyramid's source features from the backbone stages:
/// multi-depth passes stage features through unchanged, single-depth
/// temporally subsamples one stage at each configured rate. Levels come out
/// ordered bottom (finest time) to top.
pub fn collect_sources(
    g: &mut Graph,
    pyramid: &StagePyramid,
    plan: &ResolvedPyramid,
) -> Result<Vec<FeatureMap>> {
    let mut out = Vec::with_capacity(plan.levels.len());
    for level in &plan.levels {
        let src = pyramid.by_stage(level.stage_id).ok_or_else(|| {
            Error::config("tpn.stages", format!("stage res{} missing from pyramid", level.stage_id))
        })?;
        let node = if level.rate == 1 {
            src.node
        } else {
            g.subsample_t(src.node, level.rate)?
        };
        out.push(FeatureMap { node, ..*src });
    }
    Ok(out)
}

struct SpatialLevel {
    downs: Vec<(Conv3d, BatchNorm)>,
    /// Parameter-free fallback when the stride convs are ablated away.
    pool_steps: usize,
    proj: Conv3d,
    proj_bn: BatchNorm,
}

struct AuxHead {
    dropout: Dropout,
    fc: Linear,
}

struct TemporalLevel {
    conv: Conv3d,
    alpha: usize,
}

/// The pyramid module with all its parameters.
pub struct TpnModule {
    pub plan: ResolvedPyramid,
    spatial: Vec<SpatialLevel>,
    aux: Vec<AuxHead>,
    temporal: Vec<TemporalLevel>,
    predict_dropout: Dropout,
    predict_fc: Linear,
}

pub struct TpnOutput {
    pub main_logits: NodeId,
    pub aux_logits: Vec<NodeId>,
    pub aggregated: Vec<FeatureMap>,
}

impl TpnModule {
    pub fn build(
        plan: ResolvedPyramid,
        num_classes: usize,
        seed: u64,
        ps: &mut ParamSet,
        bn: &mut BnStore,
    ) -> Result<Self> {
        let init = Init::new(seed);
        let d = plan.mod_channels;
        let m = plan.num_levels();

        let mut spatial = Vec::with_capacity(m);
        for (j, level) in plan.levels.iter().enumerate() {
            let mut downs = Vec::new();
            let mut pool_steps = 0;
            if plan.spatial_convs {
                for k in 0..level.down_steps {
                    let name = format!("tpn.spatial.l{j}.down{k}");
                    let conv = Conv3d::new(
                        ps,
                        &init,
                        &name,
                        level.in_channels,
                        level.in_channels,
                        [1, 3, 3],
                        [1, 2, 2],
                        [0, 1, 1],
                        false,
                    );
                    let norm = BatchNorm::new(ps, bn, &format!("{name}.bn"), level.in_channels);
                    downs.push((conv, norm));
                }
            } else {
                pool_steps = level.down_steps;
            }
            let pname = format!("tpn.spatial.l{j}.proj");
            let proj = Conv3d::new(
                ps,
                &init,
                &pname,
                level.in_channels,
                d,
                [1, 1, 1],
                [1, 1, 1],
                [0, 0, 0],
                false,
            );
            let proj_bn = BatchNorm::new(ps, bn, &format!("{pname}.bn"), d);
            spatial.push(SpatialLevel { downs, pool_steps, proj, proj_bn });
        }

        let mut aux = Vec::new();
        if plan.aux_heads {
            for j in 0..m.saturating_sub(1) {
                aux.push(AuxHead {
                    dropout: Dropout::new(plan.dropout, format!("tpn.aux{j}.dropout")),
                    fc: Linear::new(ps, &init, &format!("tpn.aux{j}.fc"), d, num_classes),
                });
            }
        }

        let mut temporal = Vec::new();
        if plan.temporal_mod {
            for (j, level) in plan.levels.iter().enumerate() {
                let conv = Conv3d::new(
                    ps,
                    &init,
                    &format!("tpn.temporal.l{j}.conv"),
                    d,
                    d,
                    [3, 1, 1],
                    [1, 1, 1],
                    [1, 0, 0],
                    true,
                );
                temporal.push(TemporalLevel { conv, alpha: level.alpha });
            }
        }

        let predict_dropout = Dropout::new(plan.dropout, "tpn.predict.dropout");
        let predict_fc = Linear::new(ps, &init, "tpn.predict.fc", m * d, num_classes);

        Ok(TpnModule { plan, spatial, aux, temporal, predict_dropout, predict_fc })
    }

    /// Aligns every level to the top level's spatial shape and projects to
    /// the unified channel width: each non-top level passes its stack of
    /// stride-2 convolutions, then every level gets the 1x1x1 projection.
    /// Time dimensions are untouched.
    pub fn spatial_modulate(
        &self,
        g: &mut Graph,
        f: &mut Fwd,
        sources: &[FeatureMap],
    ) -> Result<Vec<FeatureMap>> {
        if sources.len() != self.spatial.len() {
            return Err(Error::Shape(format!(
                "pyramid has {} levels, module was built for {}",
                sources.len(),
                self.spatial.len()
            )));
        }
        let mut out = Vec::with_capacity(sources.len());
        for (src, level) in sources.iter().zip(&self.spatial) {
            let mut x = src.node;
            for (conv, norm) in &level.downs {
                x = conv.forward(g, f, x)?;
                x = norm.forward(g, f, x)?;
                x = g.relu(x);
            }
            for _ in 0..level.pool_steps {
                x = g.max_pool(
                    x,
                    PoolCfg { window: [1, 2, 2], stride: [1, 2, 2], pad: [0, 0, 0] },
                )?;
            }
            x = level.proj.forward(g, f, x)?;
            x = level.proj_bn.forward(g, f, x)?;
            x = g.relu(x);
            out.push(FeatureMap { node: x, ..*src });
        }
        Ok(out)
    }

    /// Auxiliary classification logits for every non-top level (empty for a
    /// single-level pyramid or when the heads are ablated away).
    pub fn aux_head_logits(
        &self,
        g: &mut Graph,
        f: &mut Fwd,
        modulated: &[FeatureMap],
    ) -> Result<Vec<NodeId>> {
        let mut out = Vec::with_capacity(self.aux.len());
        for (head, level) in self.aux.iter().zip(modulated) {
            let pooled = g.global_avg_pool(level.node)?;
            let dropped = head.dropout.forward(g, f, pooled)?;
            out.push(head.fc.forward(g, f, dropped)?);
        }
        Ok(out)
    }

    /// Temporal rate modulation: per level a size-preserving temporal
    /// convolution followed by max-pooling with window and stride alpha.
    pub fn temporal_modulate(
        &self,
        g: &mut Graph,
        f: &mut Fwd,
        modulated: &[FeatureMap],
    ) -> Result<Vec<FeatureMap>> {
        if self.temporal.is_empty() {
            return Ok(modulated.to_vec());
        }
        let mut out = Vec::with_capacity(modulated.len());
        for (level, tm) in modulated.iter().zip(&self.temporal) {
            let t = g.shape(level.node)[2];
            if t % tm.alpha != 0 {
                return Err(Error::config(
                    "tpn.alphas",
                    format!("alpha {} does not divide time {t}", tm.alpha),
                ));
            }
            let mut x = tm.conv.forward(g, f, level.node)?;
            if tm.alpha > 1 {
                x = g.max_pool(x, temporal_pool_cfg(tm.alpha))?;
            }
            out.push(FeatureMap { node: x, ..*level });
        }
        Ok(out)
    }

    /// Final prediction: global max-pool each level to (batch, channels),
    /// concatenate along channels, dropout, one fully-connected layer.
    pub fn predict(&self, g: &mut Graph, f: &mut Fwd, aggregated: &[FeatureMap]) -> Result<NodeId> {
        let mut pooled = Vec::with_capacity(aggregated.len());
        for level in aggregated {
            pooled.push(g.global_max_pool(level.node)?);
        }
        let cat = g.concat_features(&pooled)?;
        let dropped = self.predict_dropout.forward(g, f, cat)?;
        self.predict_fc.forward(g, f, dropped)
    }

    /// The full pyramid pass over backbone stage features.
    pub fn forward(&self, g: &mut Graph, f: &mut Fwd, pyramid: &StagePyramid) -> Result<TpnOutput> {
        let sources = collect_sources(g, pyramid, &self.plan)?;
        let modulated = self.spatial_modulate(g, f, &sources)?;
        let aux_logits = self.aux_head_logits(g, f, &modulated)?;
        let temporal = self.temporal_modulate(g, f, &modulated)?;
        let aggregated = aggregate(g, &temporal, self.plan.flow)?;
        let main_logits = self.predict(g, f, &aggregated)?;
        Ok(TpnOutput { main_logits, aux_logits, aggregated })
    }
}

/// Total objective: main cross-entropy plus the weighted auxiliary terms,
/// `L = L_main + sum_i lambda_i * L_aux_i`, each term a batch mean.
pub fn total_loss(
    g: &mut Graph,
    main_logits: NodeId,
    aux_logits: &[NodeId],
    labels: &[usize],
    lambdas: &[f64],
) -> Result<NodeId> {
    if aux_logits.len() != lambdas.len() {
        return Err(Error::Invalid(format!(
            "{} auxiliary heads but {} weights",
            aux_logits.len(),
            lambdas.len()
        )));
    }
    let mut total = g.cross_entropy_mean(main_logits, labels)?;
    for (&aux, &lambda) in aux_logits.iter().zip(lambdas) {
        let ce = g.cross_entropy_mean(aux, labels)?;
        let scaled = g.scale(ce, lambda);
        total = g.add(total, scaled)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::{build_backbone, BackboneKind};
    use crate::nn::Mode;
    use crate::tensor::Tensor;

    fn randn(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = crate::rng::SeedKey::new(seed).rng();
        let mut t = Tensor::zeros(shape);
        for v in t.data_mut() {
            *v = rng.normal();
        }
        t
    }

    fn toy_spec() -> BackboneSpec {
        BackboneSpec::toy()
    }

    #[test]
    fn resolve_fills_paper_defaults() {
        let cfg = PyramidConfig::res45_parallel();
        let plan = resolve(&cfg, &toy_spec()).unwrap();
        assert_eq!(plan.num_levels(), 2);
        assert_eq!(plan.levels[0].down_steps, 1);
        assert_eq!(plan.levels[1].down_steps, 0);
        // derived: alphas {4,8} for 8 frames, lambdas {0.5}, d = top/2
        assert_eq!(plan.levels[0].alpha, 4);
        assert_eq!(plan.levels[1].alpha, 8);
        assert_eq!(plan.lambdas, vec![0.5]);
        assert_eq!(plan.mod_channels, 128);
        assert_eq!(plan.fc_in(), 256);
    }

    #[test]
    fn resolve_single_depth_rates() {
        let cfg = PyramidConfig {
            source_mode: SourceMode::SingleDepth,
            stages: vec![5],
            rates: vec![1, 2, 4, 8],
            ..PyramidConfig::res45_parallel()
        };
        let plan = resolve(&cfg, &toy_spec()).unwrap();
        let times: Vec<usize> = plan.levels.iter().map(|l| l.time).collect();
        assert_eq!(times, vec![8, 4, 2, 1]);
        assert!(plan.levels.iter().all(|l| l.down_steps == 0));

        let bad = PyramidConfig { rates: vec![1, 3], ..cfg };
        assert!(matches!(resolve(&bad, &toy_spec()), Err(Error::Config { .. })));
    }

    #[test]
    fn full_width_modulation_shapes_match_reference() {
        let spec = BackboneSpec::full_width();
        let cfg = PyramidConfig {
            mod_channels: Some(1024),
            alphas: vec![4, 8],
            ..PyramidConfig::res45_parallel()
        };
        let plan = resolve(&cfg, &spec).unwrap();
        assert_eq!(plan.modulated_shapes(), vec![[1024, 8, 7, 7], [1024, 8, 7, 7]]);
        assert_eq!(plan.temporal_shapes(), vec![[1024, 2, 7, 7], [1024, 1, 7, 7]]);
        assert_eq!(plan.fc_in(), 2048);
    }

    fn build_toy_tpn(
        cfg: &PyramidConfig,
    ) -> (crate::backbone::Backbone, TpnModule, ParamSet, BnStore) {
        let spec = toy_spec();
        let mut ps = ParamSet::new();
        let mut bn = BnStore::new();
        let backbone = build_backbone(&spec, 4, 3, 0.0, &mut ps, &mut bn).unwrap();
        let plan = resolve(cfg, &spec).unwrap();
        let tpn = TpnModule::build(plan, 4, 3, &mut ps, &mut bn).unwrap();
        (backbone, tpn, ps, bn)
    }

    #[test]
    fn tpn_forward_produces_expected_shapes_and_is_deterministic() {
        let cfg = PyramidConfig::res45_parallel();
        let (backbone, tpn, ps, bn) = build_toy_tpn(&cfg);
        let clips = randn(&[2, 3, 8, 32, 32], 40);

        let run = || {
            let mut g = Graph::new();
            let mut f = Fwd::new(&ps, &bn, Mode::Eval);
            let pyr = backbone.forward_stages(&mut g, &mut f, &clips).unwrap();
            let out = tpn.forward(&mut g, &mut f, &pyr).unwrap();
            (
                g.value(out.main_logits).data().to_vec(),
                out.aux_logits.len(),
                out.aggregated
                    .iter()
                    .map(|l| g.shape(l.node).to_vec())
                    .collect::<Vec<_>>(),
            )
        };
        let (logits1, n_aux, shapes) = run();
        let (logits2, _, _) = run();
        assert_eq!(logits1, logits2, "eval forward must be deterministic");
        assert_eq!(logits1.len(), 2 * 4);
        assert_eq!(n_aux, 1);
        assert_eq!(shapes, vec![vec![2, 128, 2, 1, 1], vec![2, 128, 1, 1, 1]]);
    }

    #[test]
    fn single_level_pyramid_reduces_to_pooled_classifier() {
        let cfg = PyramidConfig {
            source_mode: SourceMode::MultiDepth,
            stages: vec![5],
            flow: FlowKind::Isolation,
            alphas: vec![1],
            ..PyramidConfig::res45_parallel()
        };
        let (backbone, tpn, ps, bn) = build_toy_tpn(&cfg);
        let clips = randn(&[1, 3, 8, 32, 32], 41);
        let mut g = Graph::new();
        let mut f = Fwd::new(&ps, &bn, Mode::Eval);
        let pyr = backbone.forward_stages(&mut g, &mut f, &clips).unwrap();
        let out = tpn.forward(&mut g, &mut f, &pyr).unwrap();
        assert!(out.aux_logits.is_empty());
        assert_eq!(g.shape(out.main_logits), &[1, 4]);
    }

    #[test]
    fn zeroed_spatial_convs_zero_the_modulated_features() {
        let cfg = PyramidConfig::res45_parallel();
        let (backbone, tpn, mut ps, bn) = build_toy_tpn(&cfg);
        for id in ps.ids().collect::<Vec<_>>() {
            if ps.name(id).starts_with("tpn.spatial.") {
                ps.value_mut(id).data_mut().fill(0.0);
            }
        }
        let clips = randn(&[1, 3, 8, 32, 32], 42);
        let mut g = Graph::new();
        let mut f = Fwd::new(&ps, &bn, Mode::Eval);
        let pyr = backbone.forward_stages(&mut g, &mut f, &clips).unwrap();
        let sources = collect_sources(&mut g, &pyr, &tpn.plan).unwrap();
        let modulated = tpn.spatial_modulate(&mut g, &mut f, &sources).unwrap();
        for level in &modulated {
            assert!(g.value(level.node).data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn temporal_modulate_window_max_example() {
        // values [1,3,2,5] along time, alpha 2, identity conv -> [3,5]
        let spec = toy_spec();
        let cfg = PyramidConfig {
            source_mode: SourceMode::MultiDepth,
            stages: vec![5],
            alphas: vec![2],
            mod_channels: Some(1),
            ..PyramidConfig::res45_parallel()
        };
        let plan = resolve(&cfg, &spec).unwrap();
        let mut ps = ParamSet::new();
        let mut bn = BnStore::new();
        let tpn = TpnModule::build(plan, 4, 3, &mut ps, &mut bn).unwrap();
        // identity temporal conv: center tap 1, bias 0
        let w = ps.find("tpn.temporal.l0.conv.w").unwrap();
        ps.value_mut(w).data_mut().copy_from_slice(&[0.0, 1.0, 0.0]);
        let b = ps.find("tpn.temporal.l0.conv.b").unwrap();
        ps.value_mut(b).data_mut().fill(0.0);

        let mut g = Graph::new();
        let mut f = Fwd::new(&ps, &bn, Mode::Eval);
        let feat = FeatureMap {
            node: g.leaf(Tensor::from_vec(&[1, 1, 4, 1, 1], vec![1.0, 3.0, 2.0, 5.0]).unwrap()),
            stage_id: 5,
            spatial_stride: 32,
            temporal_rf: 1,
        };
        let out = tpn.temporal_modulate(&mut g, &mut f, &[feat]).unwrap();
        assert_eq!(g.value(out[0].node).data(), &[3.0, 5.0]);

        // alpha = 1 with the same identity conv leaves the feature unchanged
        let cfg1 = PyramidConfig { alphas: vec![1], ..cfg };
        let plan1 = resolve(&cfg1, &spec).unwrap();
        let mut ps1 = ParamSet::new();
        let mut bn1 = BnStore::new();
        let tpn1 = TpnModule::build(plan1, 4, 3, &mut ps1, &mut bn1).unwrap();
        let w = ps1.find("tpn.temporal.l0.conv.w").unwrap();
        ps1.value_mut(w).data_mut().copy_from_slice(&[0.0, 1.0, 0.0]);
        let mut f1 = Fwd::new(&ps1, &bn1, Mode::Eval);
        let vals = vec![0.5, -1.0, 2.0, 7.0];
        let feat1 = FeatureMap {
            node: g.leaf(Tensor::from_vec(&[1, 1, 4, 1, 1], vals.clone()).unwrap()),
            stage_id: 5,
            spatial_stride: 32,
            temporal_rf: 1,
        };
        let out1 = tpn1.temporal_modulate(&mut g, &mut f1, &[feat1]).unwrap();
        assert_eq!(g.value(out1[0].node).data(), vals.as_slice());
    }

    #[test]
    fn predict_concat_width_and_zero_behaviour() {
        let cfg = PyramidConfig::res45_parallel();
        let (_, tpn, mut ps, bn) = build_toy_tpn(&cfg);
        // zero FC weights and bias -> zero logits
        for name in ["tpn.predict.fc.w", "tpn.predict.fc.b"] {
            let id = ps.find(name).unwrap();
            ps.value_mut(id).data_mut().fill(0.0);
        }
        let mut g = Graph::new();
        let mut f = Fwd::new(&ps, &bn, Mode::Eval);
        let lv = |g: &mut Graph, t: usize, seed: u64| FeatureMap {
            node: g.leaf(randn(&[2, 128, t, 1, 1], seed)),
            stage_id: 5,
            spatial_stride: 32,
            temporal_rf: 1,
        };
        let l1 = lv(&mut g, 2, 50);
        let l2 = lv(&mut g, 1, 51);
        let logits = tpn.predict(&mut g, &mut f, &[l1, l2]).unwrap();
        assert_eq!(g.shape(logits), &[2, 4]);
        assert!(g.value(logits).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn total_loss_is_exactly_additive() {
        let mut g = Graph::new();
        let main = g.leaf(randn(&[3, 4], 60));
        let aux1 = g.leaf(randn(&[3, 4], 61));
        let aux2 = g.leaf(randn(&[3, 4], 62));
        let labels = [0usize, 2, 3];
        for lambdas in [[0.0, 0.0], [0.5, 0.5], [1.0, 0.5]] {
            let total = total_loss(&mut g, main, &[aux1, aux2], &labels, &lambdas).unwrap();
            let l_main = g.cross_entropy_mean(main, &labels).unwrap();
            let l1 = g.cross_entropy_mean(aux1, &labels).unwrap();
            let l2 = g.cross_entropy_mean(aux2, &labels).unwrap();
            let want = g.value(l_main).item().unwrap()
                + lambdas[0] * g.value(l1).item().unwrap()
                + lambdas[1] * g.value(l2).item().unwrap();
            assert_eq!(g.value(total).item().unwrap(), want);
        }
        // no aux heads: exactly the main term
        let total = total_loss(&mut g, main, &[], &labels, &[]).unwrap();
        let l_main = g.cross_entropy_mean(main, &labels).unwrap();
        assert_eq!(g.value(total).item().unwrap(), g.value(l_main).item().unwrap());
        // direct substitution: L_o = 2.0, lambda_1 = 0.5, L_1 = 1.0 -> 2.5
        assert_eq!(2.0 + 0.5 * 1.0, 2.5);
    }

    #[test]
    fn lambda_count_must_match_aux_heads() {
        let mut g = Graph::new();
        let main = g.leaf(randn(&[2, 3], 63));
        let aux = g.leaf(randn(&[2, 3], 64));
        assert!(matches!(
            total_loss(&mut g, main, &[aux], &[0, 1], &[]),
            Err(Error::Invalid(_))
        ));
    }
}
