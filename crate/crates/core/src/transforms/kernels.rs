//! Pixel kernels on single planes stored row-major as `[h, w]`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Fill {
    Constant(f32),
    /// Replicate the nearest edge pixel.
    Clamp,
}

/// Inverse mapping from output pixel `(x, y)` to a source location.
pub trait SourceMap: Fn(f64, f64) -> (f64, f64) + Sync {}
impl<F: Fn(f64, f64) -> (f64, f64) + Sync> SourceMap for F {}

/// Bilinear resampling of `src` through `map`.
pub fn resample_bilinear(src: &[f32], h: usize, w: usize, map: impl SourceMap, fill: Fill) -> Vec<f32> {
    let mut out = vec![0.0f32; h * w];
    let (hf, wf) = ((h - 1) as f64, (w - 1) as f64);
    for y in 0..h {
        for x in 0..w {
            let (mut sx, mut sy) = map(x as f64, y as f64);
            match fill {
                Fill::Constant(v) => {
                    // allow a hair of slack so exact edge samples survive rounding
                    if sx < -1e-9 || sy < -1e-9 || sx > wf + 1e-9 || sy > hf + 1e-9 {
                        out[y * w + x] = v;
                        continue;
                    }
                    sx = sx.clamp(0.0, wf);
                    sy = sy.clamp(0.0, hf);
                }
                Fill::Clamp => {
                    sx = sx.clamp(0.0, wf);
                    sy = sy.clamp(0.0, hf);
                }
            }
            let x0 = sx.floor() as usize;
            let y0 = sy.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let y1 = (y0 + 1).min(h - 1);
            let fx = sx - x0 as f64;
            let fy = sy - y0 as f64;
            let v00 = src[y0 * w + x0] as f64;
            let v01 = src[y0 * w + x1] as f64;
            let v10 = src[y1 * w + x0] as f64;
            let v11 = src[y1 * w + x1] as f64;
            let top = v00 + (v01 - v00) * fx;
            let bot = v10 + (v11 - v10) * fx;
            out[y * w + x] = (top + (bot - top) * fy) as f32;
        }
    }
    out
}

/// Nearest-neighbour resampling; out-of-bounds pixels take `fill`.
pub fn resample_nearest<T: Copy>(src: &[T], h: usize, w: usize, map: impl SourceMap, fill: T) -> Vec<T> {
    let mut out = vec![fill; h * w];
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = map(x as f64, y as f64);
            let (rx, ry) = (sx.round(), sy.round());
            if rx >= 0.0 && ry >= 0.0 && rx < w as f64 && ry < h as f64 {
                out[y * w + x] = src[ry as usize * w + rx as usize];
            }
        }
    }
    out
}

/// Exact permutation for a rotation by `quarter_turns * 90` degrees anticlockwise
/// (as displayed, y axis pointing down). Requires a square plane.
pub fn rotate_quarter<T: Copy>(src: &[T], n: usize, quarter_turns: i32) -> Vec<T> {
    let k = quarter_turns.rem_euclid(4);
    let mut out = src.to_vec();
    for y in 0..n {
        for x in 0..n {
            let (sy, sx) = match k {
                0 => (y, x),
                1 => (x, n - 1 - y),
                2 => (n - 1 - y, n - 1 - x),
                _ => (n - 1 - x, y),
            };
            out[y * n + x] = src[sy * n + sx];
        }
    }
    out
}

pub fn mirror<T: Copy>(src: &[T], h: usize, w: usize, horizontal: bool, vertical: bool) -> Vec<T> {
    let mut out = src.to_vec();
    for y in 0..h {
        let sy = if vertical { h - 1 - y } else { y };
        for x in 0..w {
            let sx = if horizontal { w - 1 - x } else { x };
            out[y * w + x] = src[sy * w + sx];
        }
    }
    out
}

/// Source map for anticlockwise rotation by `degrees` then zoom by `factor`, about the centre.
pub fn affine_source_map(h: usize, w: usize, degrees: f64, factor: f64) -> impl SourceMap {
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (s, c) = degrees.to_radians().sin_cos();
    move |x: f64, y: f64| {
        let (dx, dy) = ((x - cx) / factor, (y - cy) / factor);
        (cx + c * dx - s * dy, cy + s * dx + c * dy)
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian blur truncated at 3 sigma, edge-replicating borders.
pub fn gaussian_blur(src: &[f32], h: usize, w: usize, sigma: f64) -> Vec<f32> {
    if sigma <= 1e-6 {
        return src.to_vec();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let mut tmp = vec![0.0f64; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, kv) in k.iter().enumerate() {
                let sx = (x as isize + j as isize - r).clamp(0, w as isize - 1) as usize;
                acc += kv * src[y * w + sx] as f64;
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, kv) in k.iter().enumerate() {
                let sy = (y as isize + j as isize - r).clamp(0, h as isize - 1) as usize;
                acc += kv * tmp[sy * w + x];
            }
            out[y * w + x] = acc as f32;
        }
    }
    out
}

/// `x + (x - blur(x))`
pub fn sharpen(src: &[f32], h: usize, w: usize, sigma: f64) -> Vec<f32> {
    let b = gaussian_blur(src, h, w, sigma);
    src.iter().zip(&b).map(|(&x, &bx)| 2.0 * x - bx).collect()
}

pub fn add_gaussian_noise(src: &[f32], sigma: f64, seed: u64) -> Vec<f32> {
    if sigma <= 0.0 {
        return src.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("finite positive sigma");
    src.iter().map(|&v| v + normal.sample(&mut rng) as f32).collect()
}

/// Box-average down to `round(factor * size)` then bilinear back up.
pub fn simulate_low_res(src: &[f32], h: usize, w: usize, factor: f64) -> Vec<f32> {
    let lh = ((h as f64 * factor).round() as usize).clamp(1, h);
    let lw = ((w as f64 * factor).round() as usize).clamp(1, w);
    if lh == h && lw == w {
        return src.to_vec();
    }
    let mut sum = vec![0.0f64; lh * lw];
    let mut cnt = vec![0u32; lh * lw];
    for y in 0..h {
        let ly = y * lh / h;
        for x in 0..w {
            let lx = x * lw / w;
            sum[ly * lw + lx] += src[y * w + x] as f64;
            cnt[ly * lw + lx] += 1;
        }
    }
    let low: Vec<f64> = sum.iter().zip(&cnt).map(|(s, &c)| s / c.max(1) as f64).collect();
    let mut out = vec![0.0f32; h * w];
    for y in 0..h {
        let sy = ((y as f64 + 0.5) * lh as f64 / h as f64 - 0.5).clamp(0.0, (lh - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(lh - 1);
        let fy = sy - y0 as f64;
        for x in 0..w {
            let sx = ((x as f64 + 0.5) * lw as f64 / w as f64 - 0.5).clamp(0.0, (lw - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(lw - 1);
            let fx = sx - x0 as f64;
            let top = low[y0 * lw + x0] * (1.0 - fx) + low[y0 * lw + x1] * fx;
            let bot = low[y1 * lw + x0] * (1.0 - fx) + low[y1 * lw + x1] * fx;
            out[y * w + x] = (top * (1.0 - fy) + bot * fy) as f32;
        }
    }
    out
}

/// Min-max rescale to [0,1], raise to `exponent`, rescale back. With `inverted`
/// the power acts on `1 - x`.
pub fn gamma(src: &[f32], exponent: f64, inverted: bool) -> Vec<f32> {
    if exponent == 1.0 {
        return src.to_vec();
    }
    let (lo, hi) = src
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let range = hi as f64 - lo as f64;
    if !(range > 1e-12) {
        return src.to_vec();
    }
    src.iter()
        .map(|&v| {
            let t = ((v as f64 - lo as f64) / range).clamp(0.0, 1.0);
            let g = if inverted {
                1.0 - (1.0 - t).powf(exponent)
            } else {
                t.powf(exponent)
            };
            (g * range + lo as f64) as f32
        })
        .collect()
}

pub fn contrast(src: &[f32], factor: f64) -> Vec<f32> {
    if factor == 1.0 {
        return src.to_vec();
    }
    let mean = src.iter().map(|&v| v as f64).sum::<f64>() / src.len().max(1) as f64;
    src.iter().map(|&v| ((v as f64 - mean) * factor + mean) as f32).collect()
}
