//! Forward/backward kernels for every tape operation. All kernels are plain
//! functions over [`Tensor`]s so they can be tested directly against finite
//! differences without going through the tape.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvCfg {
    pub stride: [usize; 3],
    pub pad: [usize; 3],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolCfg {
    pub window: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
}

pub fn conv_out_len(in_len: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = in_len + 2 * pad;
    if padded < k {
        return Err(Error::Shape(format!(
            "kernel {k} larger than padded input {padded}"
        )));
    }
    Ok((padded - k) / stride + 1)
}

/// Output index range [lo, hi) for one kernel tap offset `d`, such that the
/// corresponding input index `o*stride + d - pad` stays in bounds.
#[inline]
fn tap_range(in_len: usize, d: usize, pad: usize, stride: usize, out_len: usize) -> (usize, usize) {
    let lo = if d >= pad { 0 } else { (pad - d).div_ceil(stride) };
    let max_in = in_len + pad;
    if max_in <= d {
        return (0, 0);
    }
    let hi = ((max_in - 1 - d) / stride + 1).min(out_len);
    (lo, hi.max(lo))
}

pub fn conv3d_fwd(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, cfg: &ConvCfg) -> Result<Tensor> {
    let [bs, ic, ti, hi, wi] = x.dims5()?;
    let [oc, wic, kt, kh, kw] = w.dims5()?;
    if wic != ic {
        return Err(Error::Shape(format!(
            "conv expects {wic} input channels, got {ic}"
        )));
    }
    let [st, sh, sw] = cfg.stride;
    let [pt, ph, pw] = cfg.pad;
    let ot = conv_out_len(ti, kt, st, pt)?;
    let oh = conv_out_len(hi, kh, sh, ph)?;
    let ow = conv_out_len(wi, kw, sw, pw)?;

    let mut out = Tensor::zeros(&[bs, oc, ot, oh, ow]);
    if let Some(b) = bias {
        let bd = b.data();
        let plane = ot * oh * ow;
        let od = out.data_mut();
        for bi in 0..bs {
            for c in 0..oc {
                let base = (bi * oc + c) * plane;
                od[base..base + plane].fill(bd[c]);
            }
        }
    }

    let xd = x.data();
    let wd = w.data();
    let od = out.data_mut();
    let x_plane = hi * wi;
    let o_plane = oh * ow;
    for b in 0..bs {
        let xb = &xd[b * ic * ti * x_plane..][..ic * ti * x_plane];
        let ob = &mut od[b * oc * ot * o_plane..][..oc * ot * o_plane];
        for c in 0..oc {
            let oc_sl = &mut ob[c * ot * o_plane..][..ot * o_plane];
            let w_oc = &wd[c * ic * kt * kh * kw..][..ic * kt * kh * kw];
            for i in 0..ic {
                let xc = &xb[i * ti * x_plane..][..ti * x_plane];
                let w_ic = &w_oc[i * kt * kh * kw..][..kt * kh * kw];
                for dt in 0..kt {
                    let (t_lo, t_hi) = tap_range(ti, dt, pt, st, ot);
                    for dh in 0..kh {
                        let (h_lo, h_hi) = tap_range(hi, dh, ph, sh, oh);
                        for dw in 0..kw {
                            let wv = w_ic[(dt * kh + dh) * kw + dw];
                            let (w_lo, w_hi) = tap_range(wi, dw, pw, sw, ow);
                            if w_lo >= w_hi {
                                continue;
                            }
                            for o_t in t_lo..t_hi {
                                let it = o_t * st + dt - pt;
                                let xt = &xc[it * x_plane..][..x_plane];
                                let ot_sl = &mut oc_sl[o_t * o_plane..][..o_plane];
                                for o_h in h_lo..h_hi {
                                    let ih = o_h * sh + dh - ph;
                                    let x_row = &xt[ih * wi..][..wi];
                                    let o_row = &mut ot_sl[o_h * ow..][..ow];
                                    if sw == 1 {
                                        let src = &x_row[w_lo + dw - pw..w_hi + dw - pw];
                                        for (o, xv) in o_row[w_lo..w_hi].iter_mut().zip(src) {
                                            *o += wv * xv;
                                        }
                                    } else {
                                        for o_w in w_lo..w_hi {
                                            o_row[o_w] += wv * x_row[o_w * sw + dw - pw];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of conv3d w.r.t. input, weight and (optionally) bias.
pub fn conv3d_bwd(
    x: &Tensor,
    w: &Tensor,
    has_bias: bool,
    cfg: &ConvCfg,
    gout: &Tensor,
) -> Result<(Tensor, Tensor, Option<Tensor>)> {
    let [bs, ic, ti, hi, wi] = x.dims5()?;
    let [oc, _, kt, kh, kw] = w.dims5()?;
    let [_, _, ot, oh, ow] = gout.dims5()?;
    let [st, sh, sw] = cfg.stride;
    let [pt, ph, pw] = cfg.pad;

    let mut gx = Tensor::zeros(x.shape());
    let mut gw = Tensor::zeros(w.shape());
    let gb = if has_bias {
        let gd = gout.data();
        let plane = ot * oh * ow;
        let mut gb = vec![0.0; oc];
        for b in 0..bs {
            for c in 0..oc {
                let base = (b * oc + c) * plane;
                gb[c] += gd[base..base + plane].iter().sum::<f64>();
            }
        }
        Some(Tensor::from_vec(&[oc], gb)?)
    } else {
        None
    };

    let xd = x.data();
    let wd = w.data();
    let gd = gout.data();
    let gxd = gx.data_mut();
    let gwd = gw.data_mut();
    let x_plane = hi * wi;
    let o_plane = oh * ow;
    for b in 0..bs {
        let xb = &xd[b * ic * ti * x_plane..][..ic * ti * x_plane];
        let gxb = &mut gxd[b * ic * ti * x_plane..][..ic * ti * x_plane];
        let gob = &gd[b * oc * ot * o_plane..][..oc * ot * o_plane];
        for c in 0..oc {
            let go_c = &gob[c * ot * o_plane..][..ot * o_plane];
            let w_oc = &wd[c * ic * kt * kh * kw..][..ic * kt * kh * kw];
            let gw_oc = &mut gwd[c * ic * kt * kh * kw..][..ic * kt * kh * kw];
            for i in 0..ic {
                let xc = &xb[i * ti * x_plane..][..ti * x_plane];
                let gxc = &mut gxb[i * ti * x_plane..][..ti * x_plane];
                let w_ic = &w_oc[i * kt * kh * kw..][..kt * kh * kw];
                let gw_ic = &mut gw_oc[i * kt * kh * kw..][..kt * kh * kw];
                for dt in 0..kt {
                    let (t_lo, t_hi) = tap_range(ti, dt, pt, st, ot);
                    for dh in 0..kh {
                        let (h_lo, h_hi) = tap_range(hi, dh, ph, sh, oh);
                        for dw in 0..kw {
                            let (w_lo, w_hi) = tap_range(wi, dw, pw, sw, ow);
                            if w_lo >= w_hi {
                                continue;
                            }
                            let wv = w_ic[(dt * kh + dh) * kw + dw];
                            let mut acc = 0.0;
                            for o_t in t_lo..t_hi {
                                let it = o_t * st + dt - pt;
                                let xt = &xc[it * x_plane..][..x_plane];
                                let gxt = &mut gxc[it * x_plane..][..x_plane];
                                let go_t = &go_c[o_t * o_plane..][..o_plane];
                                for o_h in h_lo..h_hi {
                                    let ih = o_h * sh + dh - ph;
                                    let x_row = &xt[ih * wi..][..wi];
                                    let gx_row = &mut gxt[ih * wi..][..wi];
                                    let go_row = &go_t[o_h * ow..][..ow];
                                    if sw == 1 {
                                        let off = w_lo + dw - pw;
                                        let xs = &x_row[off..off + (w_hi - w_lo)];
                                        let gxs = &mut gx_row[off..off + (w_hi - w_lo)];
                                        let gos = &go_row[w_lo..w_hi];
                                        for k in 0..gos.len() {
                                            let g = gos[k];
                                            acc += g * xs[k];
                                            gxs[k] += wv * g;
                                        }
                                    } else {
                                        for o_w in w_lo..w_hi {
                                            let iw = o_w * sw + dw - pw;
                                            let g = go_row[o_w];
                                            acc += g * x_row[iw];
                                            gx_row[iw] += wv * g;
                                        }
                                    }
                                }
                            }
                            gw_ic[(dt * kh + dh) * kw + dw] += acc;
                        }
                    }
                }
            }
        }
    }
    Ok((gx, gw, gb))
}

/// Per-channel mean and population variance over (batch, time, height, width).
pub fn bn_stats(x: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
    let [bs, c, t, h, w] = x.dims5()?;
    let plane = t * h * w;
    let n = (bs * plane) as f64;
    let xd = x.data();
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        let mut s = 0.0;
        for b in 0..bs {
            let base = (b * c + ch) * plane;
            s += xd[base..base + plane].iter().sum::<f64>();
        }
        mean[ch] = s / n;
    }
    for ch in 0..c {
        let m = mean[ch];
        let mut s = 0.0;
        for b in 0..bs {
            let base = (b * c + ch) * plane;
            s += xd[base..base + plane].iter().map(|v| (v - m) * (v - m)).sum::<f64>();
        }
        var[ch] = s / n;
    }
    Ok((mean, var))
}

/// Normalizes with the given statistics and applies the affine transform.
/// Returns (y, xhat, invstd); `xhat` is cached for the backward pass.
pub fn bn_fwd(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    mean: &[f64],
    var: &[f64],
    eps: f64,
) -> Result<(Tensor, Tensor, Vec<f64>)> {
    let [bs, c, t, h, w] = x.dims5()?;
    if gamma.numel() != c || beta.numel() != c || mean.len() != c || var.len() != c {
        return Err(Error::Shape(format!("batch norm over {c} channels got mismatched affine/stats")));
    }
    let plane = t * h * w;
    let invstd: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut xhat = Tensor::zeros(x.shape());
    let mut y = Tensor::zeros(x.shape());
    let xd = x.data();
    let g = gamma.data();
    let be = beta.data();
    {
        let xh = xhat.data_mut();
        let yd = y.data_mut();
        for b in 0..bs {
            for ch in 0..c {
                let base = (b * c + ch) * plane;
                let (m, is, ga, bt) = (mean[ch], invstd[ch], g[ch], be[ch]);
                for k in 0..plane {
                    let v = (xd[base + k] - m) * is;
                    xh[base + k] = v;
                    yd[base + k] = ga * v + bt;
                }
            }
        }
    }
    Ok((y, xhat, invstd))
}

/// Backward through batch statistics (training mode).
pub fn bn_bwd_train(
    gout: &Tensor,
    xhat: &Tensor,
    invstd: &[f64],
    gamma: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let [bs, c, t, h, w] = gout.dims5()?;
    let plane = t * h * w;
    let n = (bs * plane) as f64;
    let gd = gout.data();
    let xh = xhat.data();
    let ga = gamma.data();
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for ch in 0..c {
        let mut sg = 0.0;
        let mut sgx = 0.0;
        for b in 0..bs {
            let base = (b * c + ch) * plane;
            for k in 0..plane {
                let g = gd[base + k];
                sg += g;
                sgx += g * xh[base + k];
            }
        }
        dbeta[ch] = sg;
        dgamma[ch] = sgx;
    }
    let mut gx = Tensor::zeros(gout.shape());
    {
        let gxd = gx.data_mut();
        for ch in 0..c {
            let scale = ga[ch] * invstd[ch];
            let mg = dbeta[ch] / n;
            let mgx = dgamma[ch] / n;
            for b in 0..bs {
                let base = (b * c + ch) * plane;
                for k in 0..plane {
                    gxd[base + k] = scale * (gd[base + k] - mg - xh[base + k] * mgx);
                }
            }
        }
    }
    Ok((
        gx,
        Tensor::from_vec(&[c], dgamma)?,
        Tensor::from_vec(&[c], dbeta)?,
    ))
}

/// Backward when the statistics are frozen constants (eval mode).
pub fn bn_bwd_eval(
    gout: &Tensor,
    xhat: &Tensor,
    invstd: &[f64],
    gamma: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let [bs, c, t, h, w] = gout.dims5()?;
    let plane = t * h * w;
    let gd = gout.data();
    let xh = xhat.data();
    let ga = gamma.data();
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    let mut gx = Tensor::zeros(gout.shape());
    let gxd = gx.data_mut();
    for ch in 0..c {
        let scale = ga[ch] * invstd[ch];
        for b in 0..bs {
            let base = (b * c + ch) * plane;
            for k in 0..plane {
                let g = gd[base + k];
                dbeta[ch] += g;
                dgamma[ch] += g * xh[base + k];
                gxd[base + k] = scale * g;
            }
        }
    }
    Ok((
        gx,
        Tensor::from_vec(&[c], dgamma)?,
        Tensor::from_vec(&[c], dbeta)?,
    ))
}

pub fn relu_fwd(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    for v in y.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    y
}

pub fn relu_bwd(y: &Tensor, gout: &Tensor) -> Tensor {
    let mut gx = gout.clone();
    for (g, v) in gx.data_mut().iter_mut().zip(y.data()) {
        if *v <= 0.0 {
            *g = 0.0;
        }
    }
    gx
}

/// Max pooling; padding positions are treated as -inf. Returns the flat
/// argmax index (into the input tensor) per output element for backward.
pub fn maxpool_fwd(x: &Tensor, cfg: &PoolCfg) -> Result<(Tensor, Vec<usize>)> {
    let [bs, c, ti, hi, wi] = x.dims5()?;
    let [kt, kh, kw] = cfg.window;
    let [st, sh, sw] = cfg.stride;
    let [pt, ph, pw] = cfg.pad;
    let ot = conv_out_len(ti, kt, st, pt)?;
    let oh = conv_out_len(hi, kh, sh, ph)?;
    let ow = conv_out_len(wi, kw, sw, pw)?;
    let mut y = Tensor::zeros(&[bs, c, ot, oh, ow]);
    let mut arg = vec![0usize; y.numel()];
    let xd = x.data();
    let yd = y.data_mut();
    let x_plane = hi * wi;
    let mut oi = 0usize;
    for b in 0..bs {
        for ch in 0..c {
            let base = (b * c + ch) * ti * x_plane;
            for o_t in 0..ot {
                for o_h in 0..oh {
                    for o_w in 0..ow {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_ix = usize::MAX;
                        for dt in 0..kt {
                            let it = o_t * st + dt;
                            if it < pt || it - pt >= ti {
                                continue;
                            }
                            let it = it - pt;
                            for dh in 0..kh {
                                let ih = o_h * sh + dh;
                                if ih < ph || ih - ph >= hi {
                                    continue;
                                }
                                let ih = ih - ph;
                                for dw in 0..kw {
                                    let iw = o_w * sw + dw;
                                    if iw < pw || iw - pw >= wi {
                                        continue;
                                    }
                                    let iw = iw - pw;
                                    let ix = base + (it * hi + ih) * wi + iw;
                                    let v = xd[ix];
                                    if v > best {
                                        best = v;
                                        best_ix = ix;
                                    }
                                }
                            }
                        }
                        if best_ix == usize::MAX {
                            return Err(Error::Shape(
                                "max-pool window contains no input elements".into(),
                            ));
                        }
                        yd[oi] = best;
                        arg[oi] = best_ix;
                        oi += 1;
                    }
                }
            }
        }
    }
    Ok((y, arg))
}

pub fn maxpool_bwd(x_shape: &[usize], arg: &[usize], gout: &Tensor) -> Tensor {
    let mut gx = Tensor::zeros(x_shape);
    let gxd = gx.data_mut();
    for (g, &ix) in gout.data().iter().zip(arg) {
        gxd[ix] += g;
    }
    gx
}

/// Global average pool over (time, height, width) -> (batch, channel).
pub fn gap_fwd(x: &Tensor) -> Result<Tensor> {
    let [bs, c, t, h, w] = x.dims5()?;
    let plane = t * h * w;
    let xd = x.data();
    let mut y = Tensor::zeros(&[bs, c]);
    let yd = y.data_mut();
    for b in 0..bs {
        for ch in 0..c {
            let base = (b * c + ch) * plane;
            yd[b * c + ch] = xd[base..base + plane].iter().sum::<f64>() / plane as f64;
        }
    }
    Ok(y)
}

pub fn gap_bwd(x_shape: &[usize], gout: &Tensor) -> Tensor {
    let (bs, c, plane) = (x_shape[0], x_shape[1], x_shape[2] * x_shape[3] * x_shape[4]);
    let mut gx = Tensor::zeros(x_shape);
    let gxd = gx.data_mut();
    let gd = gout.data();
    for b in 0..bs {
        for ch in 0..c {
            let g = gd[b * c + ch] / plane as f64;
            let base = (b * c + ch) * plane;
            gxd[base..base + plane].fill(g);
        }
    }
    gx
}

/// Global max pool over (time, height, width) -> (batch, channel).
pub fn gmp_fwd(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let [bs, c, t, h, w] = x.dims5()?;
    let plane = t * h * w;
    let xd = x.data();
    let mut y = Tensor::zeros(&[bs, c]);
    let mut arg = vec![0usize; bs * c];
    let yd = y.data_mut();
    for b in 0..bs {
        for ch in 0..c {
            let base = (b * c + ch) * plane;
            let mut best = f64::NEG_INFINITY;
            let mut best_ix = base;
            for (k, v) in xd[base..base + plane].iter().enumerate() {
                if *v > best {
                    best = *v;
                    best_ix = base + k;
                }
            }
            yd[b * c + ch] = best;
            arg[b * c + ch] = best_ix;
        }
    }
    Ok((y, arg))
}

/// Nearest-neighbour repeat along time by an integer factor.
pub fn upsample_t_fwd(x: &Tensor, factor: usize) -> Result<Tensor> {
    let [bs, c, t, h, w] = x.dims5()?;
    let plane = h * w;
    let mut y = Tensor::zeros(&[bs, c, t * factor, h, w]);
    let xd = x.data();
    let yd = y.data_mut();
    for bc in 0..bs * c {
        for it in 0..t {
            let src = &xd[(bc * t + it) * plane..][..plane];
            for r in 0..factor {
                let dst = (bc * t * factor + it * factor + r) * plane;
                yd[dst..dst + plane].copy_from_slice(src);
            }
        }
    }
    Ok(y)
}

pub fn upsample_t_bwd(x_shape: &[usize], factor: usize, gout: &Tensor) -> Tensor {
    let (bs, c, t) = (x_shape[0], x_shape[1], x_shape[2]);
    let plane = x_shape[3] * x_shape[4];
    let mut gx = Tensor::zeros(x_shape);
    let gxd = gx.data_mut();
    let gd = gout.data();
    for bc in 0..bs * c {
        for it in 0..t {
            let dst = &mut gxd[(bc * t + it) * plane..][..plane];
            for r in 0..factor {
                let src = &gd[(bc * t * factor + it * factor + r) * plane..][..plane];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
    }
    gx
}

/// Keeps frames 0, rate, 2*rate, ... along time.
pub fn subsample_t_fwd(x: &Tensor, rate: usize) -> Result<Tensor> {
    let [bs, c, t, h, w] = x.dims5()?;
    if rate == 0 || t % rate != 0 {
        return Err(Error::Config {
            field: "rates".into(),
            msg: format!("sampling rate {rate} does not divide time {t}"),
        });
    }
    let plane = h * w;
    let to = t / rate;
    let mut y = Tensor::zeros(&[bs, c, to, h, w]);
    let xd = x.data();
    let yd = y.data_mut();
    for bc in 0..bs * c {
        for ot in 0..to {
            let src = (bc * t + ot * rate) * plane;
            let dst = (bc * to + ot) * plane;
            yd[dst..dst + plane].copy_from_slice(&xd[src..src + plane]);
        }
    }
    Ok(y)
}

pub fn subsample_t_bwd(x_shape: &[usize], rate: usize, gout: &Tensor) -> Tensor {
    let (bs, c, t) = (x_shape[0], x_shape[1], x_shape[2]);
    let plane = x_shape[3] * x_shape[4];
    let to = t / rate;
    let mut gx = Tensor::zeros(x_shape);
    let gxd = gx.data_mut();
    let gd = gout.data();
    for bc in 0..bs * c {
        for ot in 0..to {
            let dst = (bc * t + ot * rate) * plane;
            let src = (bc * to + ot) * plane;
            gxd[dst..dst + plane].copy_from_slice(&gd[src..src + plane]);
        }
    }
    gx
}

/// y = x W^T + b with x (batch, in), w (out, in), b (out).
pub fn linear_fwd(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let [bs, n] = x.dims2()?;
    let [m, wn] = w.dims2()?;
    if wn != n || b.numel() != m {
        return Err(Error::Shape(format!(
            "linear ({m}x{wn}) applied to {n} features"
        )));
    }
    let xd = x.data();
    let wd = w.data();
    let bd = b.data();
    let mut y = Tensor::zeros(&[bs, m]);
    let yd = y.data_mut();
    for bi in 0..bs {
        let xr = &xd[bi * n..][..n];
        for o in 0..m {
            let wr = &wd[o * n..][..n];
            let mut acc = bd[o];
            for (xv, wv) in xr.iter().zip(wr) {
                acc += xv * wv;
            }
            yd[bi * m + o] = acc;
        }
    }
    Ok(y)
}

pub fn linear_bwd(x: &Tensor, w: &Tensor, gout: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let [bs, n] = x.dims2()?;
    let [m, _] = w.dims2()?;
    let xd = x.data();
    let wd = w.data();
    let gd = gout.data();
    let mut gx = Tensor::zeros(&[bs, n]);
    let mut gw = Tensor::zeros(&[m, n]);
    let mut gb = Tensor::zeros(&[m]);
    {
        let gxd = gx.data_mut();
        let gwd = gw.data_mut();
        let gbd = gb.data_mut();
        for bi in 0..bs {
            let xr = &xd[bi * n..][..n];
            let gxr = &mut gxd[bi * n..][..n];
            for o in 0..m {
                let g = gd[bi * m + o];
                gbd[o] += g;
                let wr = &wd[o * n..][..n];
                let gwr = &mut gwd[o * n..][..n];
                for k in 0..n {
                    gxr[k] += g * wr[k];
                    gwr[k] += g * xr[k];
                }
            }
        }
    }
    Ok((gx, gw, gb))
}

/// Row-wise softmax of a (batch, classes) tensor.
pub fn softmax_rows(logits: &Tensor) -> Result<Tensor> {
    let [bs, k] = logits.dims2()?;
    let ld = logits.data();
    let mut p = Tensor::zeros(&[bs, k]);
    let pd = p.data_mut();
    for b in 0..bs {
        let row = &ld[b * k..][..k];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (i, v) in row.iter().enumerate() {
            let e = (v - m).exp();
            pd[b * k + i] = e;
            z += e;
        }
        for i in 0..k {
            pd[b * k + i] /= z;
        }
    }
    Ok(p)
}

/// Mean cross-entropy over the batch; returns (loss, cached probabilities).
pub fn cross_entropy_fwd(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let [bs, k] = logits.dims2()?;
    if labels.len() != bs {
        return Err(Error::Invalid(format!(
            "{} labels for a batch of {bs}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Invalid(format!(
            "label {bad} out of range for {k} classes"
        )));
    }
    let probs = softmax_rows(logits)?;
    let pd = probs.data();
    let mut loss = 0.0;
    for (b, &y) in labels.iter().enumerate() {
        loss -= pd[b * k + y].max(f64::MIN_POSITIVE).ln();
    }
    Ok((loss / bs as f64, probs))
}

pub fn cross_entropy_bwd(probs: &Tensor, labels: &[usize], gscalar: f64) -> Tensor {
    let [bs, k] = probs.dims2().expect("probs rank 2");
    let mut g = probs.scaled(gscalar / bs as f64);
    let gd = g.data_mut();
    for (b, &y) in labels.iter().enumerate() {
        gd[b * k + y] -= gscalar / bs as f64;
    }
    g
}
