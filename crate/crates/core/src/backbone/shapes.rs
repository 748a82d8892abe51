//! Symbolic shape inference for the backbone. Serves as the independent
//! oracle that executed forward passes are checked against, and gives the
//! pyramid builder the per-stage geometry it needs without running anything.

use crate::backbone::BackboneSpec;
use crate::error::Result;
use crate::graph::ops::conv_out_len;

/// Geometry of one residual stage output.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StageShape {
    pub stage_id: usize,
    pub channels: usize,
    pub time: usize,
    pub height: usize,
    pub width: usize,
    /// Cumulative spatial stride w.r.t. the input frames.
    pub spatial_stride: usize,
    /// Temporal receptive field in input frames.
    pub temporal_rf: usize,
}

/// Stage output shapes res2..res5 for a square input of side `input_size`.
pub fn infer_stage_shapes(spec: &BackboneSpec) -> Result<[StageShape; 4]> {
    infer_stage_shapes_for(spec, spec.input_frames, spec.input_size, spec.input_size)
}

/// As [`infer_stage_shapes`] for an arbitrary input geometry.
pub fn infer_stage_shapes_for(
    spec: &BackboneSpec,
    t: usize,
    h: usize,
    w: usize,
) -> Result<[StageShape; 4]> {
    // stem: 1x7x7 stride (1,2,2) pad (0,3,3), then 1x3x3 max stride (1,2,2) pad (0,1,1)
    let h1 = conv_out_len(h, 7, 2, 3)?;
    let w1 = conv_out_len(w, 7, 2, 3)?;
    let mut ch = conv_out_len(h1, 3, 2, 1)?;
    let mut cw = conv_out_len(w1, 3, 2, 1)?;
    let mut rf = 1usize;
    let mut out = Vec::with_capacity(4);
    for stage in 0..4 {
        if stage > 0 {
            ch = conv_out_len(ch, 3, 2, 1)?;
            cw = conv_out_len(cw, 3, 2, 1)?;
        }
        if spec.temporal_kernels[stage] == 3 {
            rf += 2 * spec.depth_blocks[stage];
        }
        out.push(StageShape {
            stage_id: stage + 2,
            channels: spec.base_channels * (1 << stage) * 4,
            time: t,
            height: ch,
            width: cw,
            spatial_stride: 4 << stage,
            temporal_rf: rf,
        });
    }
    Ok([out[0], out[1], out[2], out[3]])
}
