//! Test-time crop protocols and the resize/crop/flip primitives behind
//! them. Sizes follow the standard video evaluation conventions: three
//! 256x256 crops after a shorter-side resize to 256, or five 224x224 crops
//! (corners + centre) with their horizontal flips, or a single centre crop.
//! `None` passes frames through untouched for native-resolution evaluation.

use super::Frames;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CropProtocol {
    None,
    Center,
    ThreeCrop,
    TenCrop,
}

/// Bilinear resize of every frame to (new_h, new_w).
pub fn resize_bilinear(frames: &Frames, new_h: usize, new_w: usize) -> Frames {
    let mut out = Frames::zeros(frames.t, frames.c, new_h, new_w);
    let (h, w) = (frames.h, frames.w);
    let sy = h as f64 / new_h as f64;
    let sx = w as f64 / new_w as f64;
    for t in 0..frames.t {
        for c in 0..frames.c {
            let src = &frames.frame(t)[c * h * w..(c + 1) * h * w];
            let base = (t * frames.c + c) * new_h * new_w;
            for y in 0..new_h {
                let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
                let y0 = fy.floor() as usize;
                let y1 = (y0 + 1).min(h - 1);
                let wy = fy - y0 as f64;
                for x in 0..new_w {
                    let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
                    let x0 = fx.floor() as usize;
                    let x1 = (x0 + 1).min(w - 1);
                    let wx = fx - x0 as f64;
                    let v00 = src[y0 * w + x0] as f64;
                    let v01 = src[y0 * w + x1] as f64;
                    let v10 = src[y1 * w + x0] as f64;
                    let v11 = src[y1 * w + x1] as f64;
                    let v = v00 * (1.0 - wy) * (1.0 - wx)
                        + v01 * (1.0 - wy) * wx
                        + v10 * wy * (1.0 - wx)
                        + v11 * wy * wx;
                    out.data[base + y * new_w + x] = v as f32;
                }
            }
        }
    }
    out
}

/// Resizes so the shorter spatial side equals `target`.
pub fn resize_shorter_side(frames: &Frames, target: usize) -> Frames {
    let (h, w) = (frames.h, frames.w);
    if h.min(w) == target {
        return frames.clone();
    }
    let (nh, nw) = if h <= w {
        (target, (w * target + h / 2) / h)
    } else {
        ((h * target + w / 2) / w, target)
    };
    resize_bilinear(frames, nh.max(target), nw.max(target))
}

pub fn crop(frames: &Frames, y0: usize, x0: usize, size: usize) -> Result<Frames> {
    if y0 + size > frames.h || x0 + size > frames.w {
        return Err(Error::Data(format!(
            "crop {size}x{size} at ({y0},{x0}) exceeds {}x{} frames",
            frames.h, frames.w
        )));
    }
    let mut out = Frames::zeros(frames.t, frames.c, size, size);
    for t in 0..frames.t {
        for c in 0..frames.c {
            let src = &frames.frame(t)[c * frames.h * frames.w..];
            let dst_base = (t * frames.c + c) * size * size;
            for y in 0..size {
                let from = (y0 + y) * frames.w + x0;
                out.data[dst_base + y * size..dst_base + (y + 1) * size]
                    .copy_from_slice(&src[from..from + size]);
            }
        }
    }
    Ok(out)
}

pub fn hflip(frames: &Frames) -> Frames {
    let mut out = frames.clone();
    let w = frames.w;
    for row in out.data.chunks_mut(w) {
        row.reverse();
    }
    out
}

const TEN_CROP_SIZE: usize = 224;
const THREE_CROP_SIZE: usize = 256;

/// Expands one clip into the protocol's crop set.
pub fn crop_protocol(frames: &Frames, protocol: CropProtocol) -> Result<Vec<Frames>> {
    match protocol {
        CropProtocol::None => Ok(vec![frames.clone()]),
        CropProtocol::Center => {
            let s = TEN_CROP_SIZE;
            if frames.h < s || frames.w < s {
                return Err(Error::Data(format!(
                    "centre crop needs at least {s}x{s} frames, got {}x{}",
                    frames.h, frames.w
                )));
            }
            Ok(vec![crop(frames, (frames.h - s) / 2, (frames.w - s) / 2, s)?])
        }
        CropProtocol::ThreeCrop => {
            let s = THREE_CROP_SIZE;
            let resized = resize_shorter_side(frames, s);
            // three crops evenly placed along the longer side
            let (h, w) = (resized.h, resized.w);
            let mut out = Vec::with_capacity(3);
            if w >= h {
                for off in [0, (w - s) / 2, w - s] {
                    out.push(crop(&resized, (h - s) / 2, off, s)?);
                }
            } else {
                for off in [0, (h - s) / 2, h - s] {
                    out.push(crop(&resized, off, (w - s) / 2, s)?);
                }
            }
            Ok(out)
        }
        CropProtocol::TenCrop => {
            let s = TEN_CROP_SIZE;
            if frames.h < s || frames.w < s {
                return Err(Error::Data(format!(
                    "ten-crop needs at least {s}x{s} frames, got {}x{}",
                    frames.h, frames.w
                )));
            }
            let (h, w) = (frames.h, frames.w);
            let positions =
                [(0, 0), (0, w - s), (h - s, 0), (h - s, w - s), ((h - s) / 2, (w - s) / 2)];
            let mut out = Vec::with_capacity(10);
            for (y, x) in positions {
                let c = crop(frames, y, x, s)?;
                let flipped = hflip(&c);
                out.push(c);
                out.push(flipped);
            }
            Ok(out)
        }
    }
}
