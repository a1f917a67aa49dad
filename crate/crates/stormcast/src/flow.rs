//! TV-L1 dense optical flow and flow-based extrapolation error.
//!
//! The estimator follows the classic primal-dual scheme: a coarse-to-fine
//! pyramid, a few relinearizations ("warps") per level, and an inner loop
//! alternating a pointwise thresholding step on the brightness residual with
//! a dual ascent on the flow gradient. The returned field is the scene
//! motion from the first frame to the second: advecting the first frame by
//! the flow approximates the second frame.

use crate::error::{Error, Result};
use crate::grid::{FlowField, Raster};

/// Solver parameters.
///
/// `lambda` weighs the brightness-constancy data term against the
/// total-variation regularizer; `theta` couples the auxiliary and primal
/// flow fields; `tau` is the dual ascent step (stability requires <= 0.25).
#[derive(Debug, Clone)]
pub struct FlowParams {
    pub lambda: f64,
    pub theta: f64,
    pub tau: f64,
    pub n_scales: usize,
    pub scale_factor: f64,
    pub n_warps: usize,
    pub n_inner_iters: usize,
    pub median_filter: bool,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams {
            lambda: 0.15,
            theta: 0.3,
            tau: 0.25,
            n_scales: 5,
            scale_factor: 0.5,
            n_warps: 5,
            n_inner_iters: 30,
            median_filter: true,
        }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau <= 0.25) {
            return Err(Error::Config(format!(
                "flow tau must be in (0, 0.25], got {}",
                self.tau
            )));
        }
        if !(self.scale_factor > 0.0 && self.scale_factor < 1.0) {
            return Err(Error::Config(format!(
                "flow scale_factor must be in (0,1), got {}",
                self.scale_factor
            )));
        }
        if self.n_scales < 1 || self.n_warps < 1 || self.n_inner_iters < 1 {
            return Err(Error::Config(
                "flow iteration counts must all be >= 1".into(),
            ));
        }
        if !(self.lambda >= 0.0 && self.theta > 0.0) {
            return Err(Error::Config(format!(
                "flow lambda must be >= 0 and theta > 0, got {} and {}",
                self.lambda, self.theta
            )));
        }
        Ok(())
    }
}

/// Estimate the dense motion field from `i0` to `i1`.
///
/// Levels whose smaller dimension would drop below 4 pixels are discarded
/// from the pyramid (with a warning on stderr when this reduces the
/// requested scale count).
pub fn tvl1_flow(i0: &Raster, i1: &Raster, p: &FlowParams) -> Result<FlowField> {
    p.validate()?;
    if i0.h() != i1.h() || i0.w() != i1.w() {
        return Err(Error::Shape(format!(
            "flow inputs differ: {}x{} vs {}x{}",
            i0.h(),
            i0.w(),
            i1.h(),
            i1.w()
        )));
    }

    // Pyramid: level 0 is full resolution. Small inputs get fewer levels
    // than requested (the coarsest level must stay at least 4x4).
    let mut pyr0 = vec![i0.clone()];
    let mut pyr1 = vec![i1.clone()];
    while pyr0.len() < p.n_scales {
        let last = pyr0.last().unwrap();
        let nh = (last.h() as f64 * p.scale_factor).round() as usize;
        let nw = (last.w() as f64 * p.scale_factor).round() as usize;
        if nh < 4 || nw < 4 {
            break;
        }
        pyr0.push(zoom_out(last, nh, nw));
        pyr1.push(zoom_out(pyr1.last().unwrap(), nh, nw));
    }

    let coarsest = pyr0.len() - 1;
    let mut u = vec![0.0; pyr0[coarsest].h() * pyr0[coarsest].w()];
    let mut v = vec![0.0; u.len()];
    for s in (0..=coarsest).rev() {
        tvl1_level(&pyr0[s], &pyr1[s], &mut u, &mut v, p);
        if s > 0 {
            let (fh, fw) = (pyr0[s - 1].h(), pyr0[s - 1].w());
            let (ch, cw) = (pyr0[s].h(), pyr0[s].w());
            u = resize_bilinear(&u, ch, cw, fh, fw);
            v = resize_bilinear(&v, ch, cw, fh, fw);
            let su = fw as f64 / cw as f64;
            let sv = fh as f64 / ch as f64;
            u.iter_mut().for_each(|x| *x *= su);
            v.iter_mut().for_each(|x| *x *= sv);
        }
    }
    FlowField::from_components(i0.h(), i0.w(), u, v)
}

/// Advect an image by a displacement field: `out(x) = I(x - f(x))`, with
/// out-of-frame samples clamped to the border.
pub fn warp(i: &Raster, f: &FlowField) -> Result<Raster> {
    if i.h() != f.h() || i.w() != f.w() {
        return Err(Error::Shape(format!(
            "warp image {}x{} vs flow {}x{}",
            i.h(),
            i.w(),
            f.h(),
            f.w()
        )));
    }
    let mut out = Raster::new(i.h(), i.w());
    for y in 0..i.h() {
        for x in 0..i.w() {
            let idx = y * i.w() + x;
            let sy = y as f64 - f.v()[idx];
            let sx = x as f64 - f.u()[idx];
            out.set(y, x, i.sample(sy, sx));
        }
    }
    Ok(out)
}

/// Per-pixel extrapolation error of a one-step constant-velocity nowcast.
///
/// The motion between the two past frames is estimated, the latest frame is
/// advected one step forward, and the result is compared with the actually
/// observed frame.
pub fn nowcast_error(
    i_m30: &Raster,
    i_m15: &Raster,
    i_0: &Raster,
    p: &FlowParams,
) -> Result<Raster> {
    if i_m30.h() != i_0.h()
        || i_m30.w() != i_0.w()
        || i_m15.h() != i_0.h()
        || i_m15.w() != i_0.w()
    {
        return Err(Error::Shape("nowcast_error frames differ in size".into()));
    }
    let f = tvl1_flow(i_m30, i_m15, p)?;
    let pred = warp(i_m15, &f)?;
    let mut out = Raster::new(i_0.h(), i_0.w());
    for (o, (p, t)) in out
        .data_mut()
        .iter_mut()
        .zip(pred.data().iter().zip(i_0.data()))
    {
        *o = (p - t).abs();
    }
    Ok(out)
}

// --------------------------------------------------------------- internals

/// One pyramid level: `n_warps` relinearizations, each followed by
/// `n_inner_iters` primal-dual iterations and an optional median filter.
fn tvl1_level(i0: &Raster, i1: &Raster, u: &mut Vec<f64>, v: &mut Vec<f64>, p: &FlowParams) {
    let (h, w) = (i0.h(), i0.w());
    let n = h * w;
    debug_assert_eq!(u.len(), n);

    let (i1x, i1y) = central_gradients(i1);
    let lt_coeff = p.lambda * p.theta;
    let taut = p.tau / p.theta;

    let mut i1w = vec![0.0; n];
    let mut i1wx = vec![0.0; n];
    let mut i1wy = vec![0.0; n];
    let mut grad2 = vec![0.0; n];
    let mut rho_c = vec![0.0; n];
    let mut v1u = vec![0.0; n];
    let mut v1v = vec![0.0; n];
    let mut p11 = vec![0.0; n];
    let mut p12 = vec![0.0; n];
    let mut p21 = vec![0.0; n];
    let mut p22 = vec![0.0; n];

    for _ in 0..p.n_warps {
        // Linearize the brightness residual around the current flow.
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let sy = y as f64 + v[i];
                let sx = x as f64 + u[i];
                i1w[i] = i1.sample(sy, sx);
                i1wx[i] = i1x.sample(sy, sx);
                i1wy[i] = i1y.sample(sy, sx);
                grad2[i] = i1wx[i] * i1wx[i] + i1wy[i] * i1wy[i];
                rho_c[i] = i1w[i] - i1wx[i] * u[i] - i1wy[i] * v[i] - i0.get(y, x);
            }
        }

        for _ in 0..p.n_inner_iters {
            // Thresholding step: closed-form minimizer of the L1 data term.
            for i in 0..n {
                let rho = rho_c[i] + i1wx[i] * u[i] + i1wy[i] * v[i];
                let lt = lt_coeff * grad2[i];
                let (du, dv) = if rho < -lt {
                    (lt_coeff * i1wx[i], lt_coeff * i1wy[i])
                } else if rho > lt {
                    (-lt_coeff * i1wx[i], -lt_coeff * i1wy[i])
                } else if grad2[i] > 1e-12 {
                    let s = -rho / grad2[i];
                    (s * i1wx[i], s * i1wy[i])
                } else {
                    (0.0, 0.0)
                };
                v1u[i] = u[i] + du;
                v1v[i] = v[i] + dv;
            }

            // Primal update from the dual field: u = v1 + theta * div(p).
            for y in 0..h {
                for x in 0..w {
                    let i = y * w + x;
                    let dxu = p11[i] - if x > 0 { p11[i - 1] } else { 0.0 };
                    let dyu = p12[i] - if y > 0 { p12[i - w] } else { 0.0 };
                    let dxv = p21[i] - if x > 0 { p21[i - 1] } else { 0.0 };
                    let dyv = p22[i] - if y > 0 { p22[i - w] } else { 0.0 };
                    u[i] = v1u[i] + p.theta * (dxu + dyu);
                    v[i] = v1v[i] + p.theta * (dxv + dyv);
                }
            }

            // Dual ascent on forward differences of the flow.
            for y in 0..h {
                for x in 0..w {
                    let i = y * w + x;
                    let ux = if x + 1 < w { u[i + 1] - u[i] } else { 0.0 };
                    let uy = if y + 1 < h { u[i + w] - u[i] } else { 0.0 };
                    let vx = if x + 1 < w { v[i + 1] - v[i] } else { 0.0 };
                    let vy = if y + 1 < h { v[i + w] - v[i] } else { 0.0 };
                    let nu = 1.0 + taut * (ux * ux + uy * uy).sqrt();
                    let nv = 1.0 + taut * (vx * vx + vy * vy).sqrt();
                    p11[i] = (p11[i] + taut * ux) / nu;
                    p12[i] = (p12[i] + taut * uy) / nu;
                    p21[i] = (p21[i] + taut * vx) / nv;
                    p22[i] = (p22[i] + taut * vy) / nv;
                }
            }
        }

        if p.median_filter {
            median3x3(u, h, w);
            median3x3(v, h, w);
        }
    }
}

/// Central-difference image gradients with replicated borders.
fn central_gradients(img: &Raster) -> (Raster, Raster) {
    let (h, w) = (img.h(), img.w());
    let mut gx = Raster::new(h, w);
    let mut gy = Raster::new(h, w);
    for y in 0..h {
        for x in 0..w {
            let xm = x.saturating_sub(1);
            let xp = (x + 1).min(w - 1);
            let ym = y.saturating_sub(1);
            let yp = (y + 1).min(h - 1);
            gx.set(y, x, 0.5 * (img.get(y, xp) - img.get(y, xm)));
            gy.set(y, x, 0.5 * (img.get(yp, x) - img.get(ym, x)));
        }
    }
    (gx, gy)
}

/// In-place 3x3 median filter with replicated borders.
fn median3x3(data: &mut Vec<f64>, h: usize, w: usize) {
    let src = data.clone();
    let mut win = [0.0f64; 9];
    for y in 0..h {
        for x in 0..w {
            let mut k = 0;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let sy = (y as i64 + dy).clamp(0, h as i64 - 1) as usize;
                    let sx = (x as i64 + dx).clamp(0, w as i64 - 1) as usize;
                    win[k] = src[sy * w + sx];
                    k += 1;
                }
            }
            win.sort_by(|a, b| a.partial_cmp(b).unwrap());
            data[y * w + x] = win[4];
        }
    }
}

/// Gaussian-smoothed bilinear downsampling to an explicit target size.
fn zoom_out(img: &Raster, nh: usize, nw: usize) -> Raster {
    let sf = (nh as f64 / img.h() as f64).min(nw as f64 / img.w() as f64);
    let sigma = 0.6 * (1.0 / (sf * sf) - 1.0).sqrt();
    let blurred = gaussian_blur(img, sigma);
    let resized = resize_bilinear(blurred.data(), img.h(), img.w(), nh, nw);
    Raster::from_vec(nh, nw, resized).expect("resize produced invalid raster")
}

/// Separable Gaussian blur with replicated borders.
fn gaussian_blur(img: &Raster, sigma: f64) -> Raster {
    if sigma <= 0.0 {
        return img.clone();
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    let mut sum = 0.0;
    for i in -radius..=radius {
        let v = (-((i * i) as f64) / (2.0 * sigma * sigma)).exp();
        kernel.push(v);
        sum += v;
    }
    kernel.iter_mut().for_each(|v| *v /= sum);

    let (h, w) = (img.h(), img.w());
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                let sx = (x as i64 + k as i64 - radius).clamp(0, w as i64 - 1) as usize;
                s += kv * img.get(y, sx);
            }
            tmp[y * w + x] = s;
        }
    }
    let mut out = Raster::new(h, w);
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                let sy = (y as i64 + k as i64 - radius).clamp(0, h as i64 - 1) as usize;
                s += kv * tmp[sy * w + x];
            }
            out.set(y, x, s);
        }
    }
    out
}

/// Bilinear resize with half-pixel-center mapping and edge clamping.
fn resize_bilinear(src: &[f64], sh: usize, sw: usize, dh: usize, dw: usize) -> Vec<f64> {
    let mut out = vec![0.0; dh * dw];
    let ry = sh as f64 / dh as f64;
    let rx = sw as f64 / dw as f64;
    for dy in 0..dh {
        let sy = ((dy as f64 + 0.5) * ry - 0.5).clamp(0.0, (sh - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(sh - 1);
        let fy = sy - y0 as f64;
        for dx in 0..dw {
            let sx = ((dx as f64 + 0.5) * rx - 0.5).clamp(0.0, (sw - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(sw - 1);
            let fx = sx - x0 as f64;
            let top = src[y0 * sw + x0] * (1.0 - fx) + src[y0 * sw + x1] * fx;
            let bot = src[y1 * sw + x0] * (1.0 - fx) + src[y1 * sw + x1] * fx;
            out[dy * dw + dx] = top * (1.0 - fy) + bot * fy;
        }
    }
    out
}
