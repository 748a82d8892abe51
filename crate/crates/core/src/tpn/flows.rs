//! Temporal resampling and the five information flows.
//!
//! Aggregation is element-wise addition between temporally aligned levels:
//! a level is brought to a neighbour's frame count by `g_resample` (max-pool
//! down, nearest-neighbour repeat up). The directed flows sweep over
//! already-aggregated features; the parallel flow adds only un-aggregated
//! neighbours, which is what makes it distinct from the cascade.

use crate::backbone::FeatureMap;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::nn::temporal_pool_cfg;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowKind {
    Isolation,
    BottomUp,
    TopDown,
    Cascade,
    Parallel,
}

impl FlowKind {
    pub const ALL: [FlowKind; 5] = [
        FlowKind::Isolation,
        FlowKind::BottomUp,
        FlowKind::TopDown,
        FlowKind::Cascade,
        FlowKind::Parallel,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            FlowKind::Isolation => "isolation",
            FlowKind::BottomUp => "bottom_up",
            FlowKind::TopDown => "top_down",
            FlowKind::Cascade => "cascade",
            FlowKind::Parallel => "parallel",
        }
    }
}

/// Temporal down/up-sampling `g(F, delta)` with `delta = t_target / t_source`.
/// Down by an integer factor is a temporal max-pool, up is nearest-neighbour
/// repeat, and `delta = 1` returns the feature untouched (same tape node).
pub fn g_resample(g: &mut Graph, f: &FeatureMap, t_target: usize) -> Result<FeatureMap> {
    let t_src = g.shape(f.node)[2];
    if t_target == 0 {
        return Err(Error::Invalid("cannot resample to zero frames".into()));
    }
    let node = if t_target == t_src {
        f.node
    } else if t_target > t_src {
        if t_target % t_src != 0 {
            return Err(Error::Invalid(format!(
                "non-integral temporal upsample {t_src} -> {t_target}"
            )));
        }
        g.upsample_t(f.node, t_target / t_src)?
    } else {
        if t_src % t_target != 0 {
            return Err(Error::Invalid(format!(
                "non-integral temporal downsample {t_src} -> {t_target}"
            )));
        }
        g.max_pool(f.node, temporal_pool_cfg(t_src / t_target))?
    };
    Ok(FeatureMap { node, ..*f })
}

fn check_aligned(g: &Graph, features: &[FeatureMap]) -> Result<()> {
    if features.is_empty() {
        return Err(Error::Invalid("cannot aggregate an empty pyramid".into()));
    }
    let first = g.shape(features[0].node).to_vec();
    for f in features {
        let s = g.shape(f.node);
        if s[0] != first[0] || s[1] != first[1] || s[3] != first[3] || s[4] != first[4] {
            return Err(Error::Shape(format!(
                "pyramid levels misaligned for aggregation: {:?} vs {:?}",
                first, s
            )));
        }
    }
    Ok(())
}

fn add_resampled(
    g: &mut Graph,
    target: &FeatureMap,
    other: &FeatureMap,
) -> Result<FeatureMap> {
    let t = g.shape(target.node)[2];
    let r = g_resample(g, other, t)?;
    let node = g.add(target.node, r.node)?;
    Ok(FeatureMap { node, ..*target })
}

fn bottom_up(g: &mut Graph, features: &[FeatureMap]) -> Result<Vec<FeatureMap>> {
    let mut out: Vec<FeatureMap> = Vec::with_capacity(features.len());
    for (i, f) in features.iter().enumerate() {
        if i == 0 {
            out.push(*f);
        } else {
            let prev = out[i - 1];
            out.push(add_resampled(g, f, &prev)?);
        }
    }
    Ok(out)
}

fn top_down(g: &mut Graph, features: &[FeatureMap]) -> Result<Vec<FeatureMap>> {
    let m = features.len();
    let mut out = features.to_vec();
    for i in (0..m.saturating_sub(1)).rev() {
        let upper = out[i + 1];
        out[i] = add_resampled(g, &features[i], &upper)?;
    }
    Ok(out)
}

fn parallel(g: &mut Graph, features: &[FeatureMap]) -> Result<Vec<FeatureMap>> {
    let m = features.len();
    let mut out = Vec::with_capacity(m);
    for i in 0..m {
        let mut acc = features[i];
        if i > 0 {
            acc = add_resampled(g, &acc, &features[i - 1])?;
        }
        if i + 1 < m {
            acc = add_resampled(g, &acc, &features[i + 1])?;
        }
        out.push(acc);
    }
    Ok(out)
}

/// Applies one information flow over levels ordered bottom (finest time) to
/// top. Level times must be pairwise resample-compatible along the paths the
/// flow actually takes.
pub fn aggregate(g: &mut Graph, features: &[FeatureMap], flow: FlowKind) -> Result<Vec<FeatureMap>> {
    check_aligned(g, features)?;
    match flow {
        FlowKind::Isolation => Ok(features.to_vec()),
        FlowKind::BottomUp => bottom_up(g, features),
        FlowKind::TopDown => top_down(g, features),
        FlowKind::Cascade => {
            let td = top_down(g, features)?;
            bottom_up(g, &td)
        }
        FlowKind::Parallel => parallel(g, features),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn level(g: &mut Graph, time: usize, values: &[f64]) -> FeatureMap {
        assert_eq!(values.len(), time);
        let t = Tensor::from_vec(&[1, 1, time, 1, 1], values.to_vec()).unwrap();
        FeatureMap { node: g.leaf(t), stage_id: 5, spatial_stride: 32, temporal_rf: 1 }
    }

    fn values(g: &Graph, f: &FeatureMap) -> Vec<f64> {
        g.value(f.node).data().to_vec()
    }

    #[test]
    fn g_resample_identity_repeat_and_pool() {
        let mut g = Graph::new();
        let f = level(&mut g, 2, &[1.0, 3.0]);
        let same = g_resample(&mut g, &f, 2).unwrap();
        assert_eq!(same.node, f.node);
        let up = g_resample(&mut g, &f, 4).unwrap();
        assert_eq!(values(&g, &up), vec![1.0, 1.0, 3.0, 3.0]);
        let f4 = level(&mut g, 4, &[1.0, 3.0, 2.0, 5.0]);
        let down = g_resample(&mut g, &f4, 2).unwrap();
        assert_eq!(values(&g, &down), vec![3.0, 5.0]);
        assert!(g_resample(&mut g, &f4, 3).is_err());
    }

    #[test]
    fn bottom_up_hand_example() {
        // F1 = [2,4] (T=2), F2 = [10] (T=1): F'2 = [10 + max(2,4)] = [14]
        let mut g = Graph::new();
        let f1 = level(&mut g, 2, &[2.0, 4.0]);
        let f2 = level(&mut g, 1, &[10.0]);
        let out = aggregate(&mut g, &[f1, f2], FlowKind::BottomUp).unwrap();
        assert_eq!(values(&g, &out[0]), vec![2.0, 4.0]);
        assert_eq!(values(&g, &out[1]), vec![14.0]);
    }

    #[test]
    fn top_down_with_zero_bottom_is_pure_resample() {
        let mut g = Graph::new();
        let f1 = level(&mut g, 2, &[0.0, 0.0]);
        let f2 = level(&mut g, 1, &[7.0]);
        let out = aggregate(&mut g, &[f1, f2], FlowKind::TopDown).unwrap();
        // F'_1 = g(F_2, 2) = [7,7]; top level untouched (same node)
        assert_eq!(values(&g, &out[0]), vec![7.0, 7.0]);
        assert_eq!(out[1].node, f2.node);
    }

    #[test]
    fn boundary_levels_keep_their_nodes() {
        let mut g = Graph::new();
        let f1 = level(&mut g, 4, &[1.0, 2.0, 3.0, 4.0]);
        let f2 = level(&mut g, 2, &[5.0, 6.0]);
        let f3 = level(&mut g, 1, &[7.0]);
        let pyr = [f1, f2, f3];
        let bu = aggregate(&mut g, &pyr, FlowKind::BottomUp).unwrap();
        assert_eq!(bu[0].node, f1.node, "bottom-up must not touch the bottom");
        let td = aggregate(&mut g, &pyr, FlowKind::TopDown).unwrap();
        assert_eq!(td[2].node, f3.node, "top-down must not touch the top");
    }

    #[test]
    fn single_level_every_flow_is_identity() {
        let mut g = Graph::new();
        let f = level(&mut g, 4, &[1.0, -2.0, 3.0, 0.5]);
        for flow in FlowKind::ALL {
            let out = aggregate(&mut g, &[f], flow).unwrap();
            assert_eq!(out.len(), 1);
            assert_eq!(out[0].node, f.node, "{flow:?}");
        }
    }

    #[test]
    fn cascade_equals_bottom_up_after_top_down() {
        let mut g = Graph::new();
        let f1 = level(&mut g, 4, &[1.0, 9.0, 2.0, 3.0]);
        let f2 = level(&mut g, 2, &[4.0, -1.0]);
        let f3 = level(&mut g, 1, &[0.5]);
        let pyr = [f1, f2, f3];
        let cascade = aggregate(&mut g, &pyr, FlowKind::Cascade).unwrap();
        let td = aggregate(&mut g, &pyr, FlowKind::TopDown).unwrap();
        let composed = aggregate(&mut g, &td, FlowKind::BottomUp).unwrap();
        for (c, e) in cascade.iter().zip(&composed) {
            assert_eq!(values(&g, c), values(&g, e));
        }
    }

    #[test]
    fn parallel_uses_unaggregated_neighbours() {
        let mut g = Graph::new();
        let f1 = level(&mut g, 2, &[1.0, 2.0]);
        let f2 = level(&mut g, 2, &[10.0, 20.0]);
        let f3 = level(&mut g, 2, &[100.0, 200.0]);
        let out = aggregate(&mut g, &[f1, f2, f3], FlowKind::Parallel).unwrap();
        assert_eq!(values(&g, &out[0]), vec![11.0, 22.0]);
        assert_eq!(values(&g, &out[1]), vec![111.0, 222.0]);
        assert_eq!(values(&g, &out[2]), vec![110.0, 220.0]);
    }

    #[test]
    fn misaligned_channels_are_rejected() {
        let mut g = Graph::new();
        let a = FeatureMap {
            node: g.leaf(Tensor::zeros(&[1, 2, 2, 1, 1])),
            stage_id: 4,
            spatial_stride: 16,
            temporal_rf: 1,
        };
        let b = FeatureMap {
            node: g.leaf(Tensor::zeros(&[1, 3, 1, 1, 1])),
            stage_id: 5,
            spatial_stride: 32,
            temporal_rf: 1,
        };
        assert!(matches!(
            aggregate(&mut g, &[a, b], FlowKind::BottomUp),
            Err(Error::Shape(_))
        ));
    }
}
