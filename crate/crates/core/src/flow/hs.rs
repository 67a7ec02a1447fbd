//! Coarse-to-fine Horn–Schunck with image warping.
//!
//! Each pyramid level linearizes brightness constancy around the current
//! flow estimate (`I1` warped by the flow), then runs Jacobi fixed-point
//! iterations on the Horn–Schunck normal equations:
//!
//! ```text
//! u <- u_avg - Ix (Ix (u_avg - u0) + Iy (v_avg - v0) + It) / (lambda + Ix^2 + Iy^2)
//! ```
//!
//! with `lambda = 4 * smoothness_weight` for the 4-neighbour Laplacian.
//! Neighbour averages are weighted by intensity similarity in `I0`, and a
//! 3x3 median filter runs after every warp.

use image::RgbImage;

use super::{FlowField, FlowSolverParams};
use crate::error::{Error, Result};
use crate::raster::luminance;

/// The coarsest pyramid level keeps at least this many pixels on its short side.
pub const MIN_LEVEL_SIDE: usize = 16;

/// Warps per pyramid level; iterations are split evenly across them.
const WARPS: usize = 5;

/// Luminance is stretched to [0, INTENSITY_RANGE] before solving so the
/// balance between data and smoothness terms does not depend on contrast.
const INTENSITY_RANGE: f32 = 80.0;

/// Intensity step (on the stretched range) that halves neighbour coupling.
const EDGE_SCALE: f32 = 1.25;
/// Smoothness weights toward the left, right, upper and lower neighbour.
/// Differences in `I0` damp the coupling, so flow does not diffuse across
/// object boundaries into static background.
struct Weights {
    w: Vec<[f32; 4]>,
    sum: Vec<f32>,
}

impl Weights {
    fn from_image(img: &Plane) -> Weights {
        let n = img.w * img.h;
        let mut w = vec![[0.0f32; 4]; n];
        let mut sum = vec![0.0f32; n];
        let k = |a: f32, b: f32| {
            let d = (a - b) / EDGE_SCALE;
            1.0 / (1.0 + d * d)
        };
        for y in 0..img.h as isize {
            for x in 0..img.w as isize {
                let i = y as usize * img.w + x as usize;
                let c = img.at(x, y);
                let ws = [
                    k(c, img.at(x - 1, y)),
                    k(c, img.at(x + 1, y)),
                    k(c, img.at(x, y - 1)),
                    k(c, img.at(x, y + 1)),
                ];
                sum[i] = ws.iter().sum();
                w[i] = ws;
            }
        }
        Weights { w, sum }
    }
}

#[derive(Clone)]
struct Plane {
    w: usize,
    h: usize,
    v: Vec<f32>,
}

impl Plane {
    fn new(w: usize, h: usize) -> Self {
        Plane {
            w,
            h,
            v: vec![0.0; w * h],
        }
    }

    #[inline]
    fn at(&self, x: isize, y: isize) -> f32 {
        let xc = x.clamp(0, self.w as isize - 1) as usize;
        let yc = y.clamp(0, self.h as isize - 1) as usize;
        self.v[yc * self.w + xc]
    }

    /// Bilinear sample with edge clamping.
    fn sample(&self, x: f32, y: f32) -> f32 {
        let x = x.clamp(0.0, (self.w - 1) as f32);
        let y = y.clamp(0.0, (self.h - 1) as f32);
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let (xi, yi) = (x0 as isize, y0 as isize);
        let a = self.at(xi, yi);
        let b = self.at(xi + 1, yi);
        let c = self.at(xi, yi + 1);
        let d = self.at(xi + 1, yi + 1);
        (a * (1.0 - fx) + b * fx) * (1.0 - fy) + (c * (1.0 - fx) + d * fx) * fy
    }

    /// Separable [1 4 6 4 1] / 16 blur.
    fn blur(&self) -> Plane {
        const K: [f32; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
        let mut tmp = Plane::new(self.w, self.h);
        for y in 0..self.h as isize {
            for x in 0..self.w as isize {
                let s: f32 = (0..5).map(|k| K[k] * self.at(x + k as isize - 2, y)).sum();
                tmp.v[y as usize * self.w + x as usize] = s;
            }
        }
        let mut out = Plane::new(self.w, self.h);
        for y in 0..self.h as isize {
            for x in 0..self.w as isize {
                let s: f32 = (0..5).map(|k| K[k] * tmp.at(x, y + k as isize - 2)).sum();
                out.v[y as usize * self.w + x as usize] = s;
            }
        }
        out
    }

    /// 2x2 box average, rounding odd sizes up.
    fn downsample(&self) -> Plane {
        let (w, h) = (self.w.div_ceil(2), self.h.div_ceil(2));
        let mut out = Plane::new(w, h);
        for y in 0..h {
            for x in 0..w {
                let (sx, sy) = (2 * x as isize, 2 * y as isize);
                out.v[y * w + x] = 0.25
                    * (self.at(sx, sy) + self.at(sx + 1, sy) + self.at(sx, sy + 1) + self.at(sx + 1, sy + 1));
            }
        }
        out
    }

    /// Five-point central difference along x and y.
    fn gradients(&self) -> (Plane, Plane) {
        let mut gx = Plane::new(self.w, self.h);
        let mut gy = Plane::new(self.w, self.h);
        for y in 0..self.h as isize {
            for x in 0..self.w as isize {
                let i = y as usize * self.w + x as usize;
                gx.v[i] = (self.at(x - 2, y) - 8.0 * self.at(x - 1, y) + 8.0 * self.at(x + 1, y)
                    - self.at(x + 2, y))
                    / 12.0;
                gy.v[i] = (self.at(x, y - 2) - 8.0 * self.at(x, y - 1) + 8.0 * self.at(x, y + 1)
                    - self.at(x, y + 2))
                    / 12.0;
            }
        }
        (gx, gy)
    }

    /// Weighted mean of the 4-neighbourhood with replicated borders.
    fn neighbour_mean_into(&self, weights: &Weights, out: &mut Plane) {
        for y in 0..self.h as isize {
            for x in 0..self.w as isize {
                let i = y as usize * self.w + x as usize;
                let [l, r, u, d] = weights.w[i];
                out.v[i] = (l * self.at(x - 1, y) + r * self.at(x + 1, y) + u * self.at(x, y - 1)
                    + d * self.at(x, y + 1))
                    / weights.sum[i];
            }
        }
    }

    /// Bilinear upsampling to `w x h`, scaling values by `scale`.
    fn upsample(&self, w: usize, h: usize, scale: f32) -> Plane {
        let mut out = Plane::new(w, h);
        let (rx, ry) = (self.w as f32 / w as f32, self.h as f32 / h as f32);
        for y in 0..h {
            for x in 0..w {
                let sx = (x as f32 + 0.5) * rx - 0.5;
                let sy = (y as f32 + 0.5) * ry - 0.5;
                out.v[y * w + x] = scale * self.sample(sx, sy);
            }
        }
        out
    }

    /// 3x3 median, a standard denoising step between warps.
    fn median3(&self) -> Plane {
        let mut out = Plane::new(self.w, self.h);
        let mut win = [0.0f32; 9];
        for y in 0..self.h as isize {
            for x in 0..self.w as isize {
                let mut k = 0;
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        win[k] = self.at(x + dx, y + dy);
                        k += 1;
                    }
                }
                win.sort_unstable_by(f32::total_cmp);
                out.v[y as usize * self.w + x as usize] = win[4];
            }
        }
        out
    }
}

/// Number of pyramid levels actually used for a `width x height` frame:
/// the requested count, reduced until the coarsest level's short side is
/// at least [`MIN_LEVEL_SIDE`] (never below one level).
pub fn effective_levels(requested: usize, width: usize, height: usize) -> usize {
    let mut levels = 1;
    let mut side = width.min(height);
    while levels < requested && side.div_ceil(2) >= MIN_LEVEL_SIDE {
        side = side.div_ceil(2);
        levels += 1;
    }
    levels
}

fn pyramid(base: Plane, levels: usize) -> Vec<Plane> {
    let mut out = vec![base.blur()];
    for _ in 1..levels {
        let next = out.last().expect("nonempty").blur().downsample();
        out.push(next);
    }
    out
}

/// Refines `(u, v)` in place on one pyramid level.
fn solve_level(i0: &Plane, i1: &Plane, u: &mut Plane, v: &mut Plane, lambda: f32, iterations: usize) {
    let (w, h) = (i0.w, i0.h);
    let per_warp = iterations.div_ceil(WARPS).max(1);
    let mut remaining = iterations;
    let mut u_avg = Plane::new(w, h);
    let mut v_avg = Plane::new(w, h);
    let (g0x, g0y) = i0.gradients();
    let weights = Weights::from_image(i0);
    while remaining > 0 {
        let iters = per_warp.min(remaining);
        remaining -= iters;

        let mut warped = Plane::new(w, h);
        let mut valid = vec![true; w * h];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let (tx, ty) = (x as f32 + u.v[i], y as f32 + v.v[i]);
                valid[i] = tx >= 0.0 && ty >= 0.0 && tx <= (w - 1) as f32 && ty <= (h - 1) as f32;
                warped.v[i] = i1.sample(tx, ty);
            }
        }
        let (g1x, g1y) = warped.gradients();
        let n = w * h;
        let mut ix = vec![0.0f32; n];
        let mut iy = vec![0.0f32; n];
        let mut it = vec![0.0f32; n];
        for i in 0..n {
            if valid[i] {
                ix[i] = 0.5 * (g0x.v[i] + g1x.v[i]);
                iy[i] = 0.5 * (g0y.v[i] + g1y.v[i]);
                it[i] = warped.v[i] - i0.v[i];
            }
        }
        let u0 = u.v.clone();
        let v0 = v.v.clone();
        for _ in 0..iters {
            u.neighbour_mean_into(&weights, &mut u_avg);
            v.neighbour_mean_into(&weights, &mut v_avg);
            for i in 0..n {
                let ua = u_avg.v[i];
                let va = v_avg.v[i];
                let r = ix[i] * (ua - u0[i]) + iy[i] * (va - v0[i]) + it[i];
                let d = lambda * 0.25 * weights.sum[i] + ix[i] * ix[i] + iy[i] * iy[i];
                u.v[i] = ua - ix[i] * r / d;
                v.v[i] = va - iy[i] * r / d;
            }
        }
        *u = u.median3();
        *v = v.median3();
    }
}

/// Estimates flow from `frame_t` to `frame_t1`. Pure and deterministic.
pub fn estimate_flow(frame_t: &RgbImage, frame_t1: &RgbImage, params: &FlowSolverParams) -> Result<FlowField> {
    params.validate()?;
    if frame_t.dimensions() != frame_t1.dimensions() {
        return Err(Error::DimensionMismatch(format!(
            "frames {}x{} and {}x{}",
            frame_t.width(),
            frame_t.height(),
            frame_t1.width(),
            frame_t1.height()
        )));
    }
    let (w, h) = (frame_t.width() as usize, frame_t.height() as usize);
    if w == 0 || h == 0 {
        return Ok(FlowField::zeros(w, h));
    }
    let mut l0 = luminance(frame_t);
    let mut l1 = luminance(frame_t1);
    let (lo, hi) = l0
        .iter()
        .chain(&l1)
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if hi - lo <= f32::EPSILON {
        // Constant frames carry no motion information.
        return Ok(FlowField::zeros(w, h));
    }
    let scale = INTENSITY_RANGE / (hi - lo);
    for v in l0.iter_mut().chain(l1.iter_mut()) {
        *v = (*v - lo) * scale;
    }

    let levels = effective_levels(params.pyramid_levels, w, h);
    let p0 = pyramid(Plane { w, h, v: l0 }, levels);
    let p1 = pyramid(Plane { w, h, v: l1 }, levels);
    let lambda = 4.0 * params.smoothness_weight as f32;

    let coarsest = &p0[levels - 1];
    let mut u = Plane::new(coarsest.w, coarsest.h);
    let mut v = Plane::new(coarsest.w, coarsest.h);
    for level in (0..levels).rev() {
        let (i0, i1) = (&p0[level], &p1[level]);
        if u.w != i0.w || u.h != i0.h {
            let sx = i0.w as f32 / u.w as f32;
            let sy = i0.h as f32 / u.h as f32;
            u = u.upsample(i0.w, i0.h, sx);
            v = v.upsample(i0.w, i0.h, sy);
        }
        solve_level(i0, i1, &mut u, &mut v, lambda, params.iterations);
    }
    FlowField::from_components(w, h, u.v, v.v)
}
