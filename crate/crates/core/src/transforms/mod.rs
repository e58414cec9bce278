//! Augmentation operations: the stochastic training-time cascade and the
//! deterministic test-time pool with prediction-space inverses.

pub mod kernels;
mod registry;

pub use registry::*;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{LabelMap, Tensor};
use kernels::Fill;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    Identity,
    Spatial,
    Intensity,
    Noise,
}

/// A fully parameterized transformation.
///
/// Rotation angles are anticlockwise as displayed; scale factors above one zoom in.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Op {
    Identity,
    Scale { factor: f32 },
    Rotate { degrees: f32 },
    Mirror { horizontal: bool, vertical: bool },
    Gamma { exponent: f32, inverted: bool },
    Shift { amount: f32 },
    IntensityScale { factor: f32 },
    Contrast { factor: f32 },
    Blur { sigma: f32 },
    Sharpen { sigma: f32 },
    Noise { sigma: f32, seed: u64 },
    LowRes { factor: f32 },
    /// Raw pointwise power `x^p` without rescaling.
    Power { exponent: f32 },
}

impl Op {
    pub fn category(&self) -> Category {
        match self {
            Op::Identity => Category::Identity,
            Op::Scale { .. } | Op::Rotate { .. } | Op::Mirror { .. } => Category::Spatial,
            Op::Blur { .. } | Op::Sharpen { .. } | Op::Noise { .. } | Op::LowRes { .. } => Category::Noise,
            _ => Category::Intensity,
        }
    }

    pub fn is_spatial(&self) -> bool {
        self.category() == Category::Spatial
    }

    /// The geometric inverse; non-spatial ops map to identity.
    pub fn geometric_inverse(&self) -> Op {
        match *self {
            Op::Scale { factor } => Op::Scale { factor: 1.0 / factor },
            Op::Rotate { degrees } => Op::Rotate { degrees: -degrees },
            m @ Op::Mirror { .. } => m,
            _ => Op::Identity,
        }
    }

    /// Applies the intensity or noise part of the op to a plane. Spatial ops
    /// are handled by the warp helpers.
    fn apply_pixels(&self, src: &[f32], h: usize, w: usize) -> Vec<f32> {
        match *self {
            Op::Gamma { exponent, inverted } => kernels::gamma(src, exponent as f64, inverted),
            Op::Shift { amount } => src.iter().map(|&v| v + amount).collect(),
            Op::IntensityScale { factor } => src.iter().map(|&v| v * factor).collect(),
            Op::Contrast { factor } => kernels::contrast(src, factor as f64),
            Op::Blur { sigma } => kernels::gaussian_blur(src, h, w, sigma as f64),
            Op::Sharpen { sigma } => kernels::sharpen(src, h, w, sigma as f64),
            Op::Noise { sigma, seed } => kernels::add_gaussian_noise(src, sigma as f64, seed),
            Op::LowRes { factor } => kernels::simulate_low_res(src, h, w, factor as f64),
            Op::Power { exponent } => src.iter().map(|&v| v.powf(exponent)).collect(),
            _ => src.to_vec(),
        }
    }
}

fn quarter_turns(degrees: f32) -> Option<i32> {
    let q = degrees / 90.0;
    (q == q.trunc()).then_some(q as i32)
}

fn warp_plane_f32(op: &Op, src: &[f32], h: usize, w: usize, fill: Fill) -> Vec<f32> {
    match *op {
        Op::Mirror { horizontal, vertical } => kernels::mirror(src, h, w, horizontal, vertical),
        Op::Rotate { degrees } if h == w && quarter_turns(degrees).is_some() => {
            kernels::rotate_quarter(src, h, quarter_turns(degrees).unwrap())
        }
        Op::Scale { factor } if factor == 1.0 => src.to_vec(),
        Op::Rotate { degrees } => resample(src, h, w, kernels::affine_source_map(h, w, degrees as f64, 1.0), fill),
        Op::Scale { factor } => resample(src, h, w, kernels::affine_source_map(h, w, 0.0, factor as f64), fill),
        _ => src.to_vec(),
    }
}

fn resample(src: &[f32], h: usize, w: usize, map: impl kernels::SourceMap, fill: Fill) -> Vec<f32> {
    kernels::resample_bilinear(src, h, w, map, fill)
}

fn warp_labels(op: &Op, src: &[u8], h: usize, w: usize) -> Vec<u8> {
    match *op {
        Op::Mirror { horizontal, vertical } => kernels::mirror(src, h, w, horizontal, vertical),
        Op::Rotate { degrees } if h == w && quarter_turns(degrees).is_some() => {
            kernels::rotate_quarter(src, h, quarter_turns(degrees).unwrap())
        }
        Op::Scale { factor } if factor == 1.0 => src.to_vec(),
        Op::Rotate { degrees } => kernels::resample_nearest(src, h, w, kernels::affine_source_map(h, w, degrees as f64, 1.0), 0),
        Op::Scale { factor } => kernels::resample_nearest(src, h, w, kernels::affine_source_map(h, w, 0.0, factor as f64), 0),
        _ => src.to_vec(),
    }
}

fn plane_dims(t: &Tensor) -> Result<(usize, usize, usize)> {
    match t.shape() {
        &[c, h, w] => Ok((c, h, w)),
        s => Err(Error::Shape {
            expected: vec![0, 0, 0],
            got: s.to_vec(),
            context: "image or map [c, H, W]",
        }),
    }
}

/// Applies `op` to every channel of an image `[c, H, W]`: bilinear, zero fill.
pub fn apply_op_image(op: &Op, image: &Tensor) -> Result<Tensor> {
    if *op == Op::Identity {
        return Ok(image.clone());
    }
    let (c, h, w) = plane_dims(image)?;
    let plane = h * w;
    let mut out = Vec::with_capacity(image.len());
    for ch in 0..c {
        let src = &image.data()[ch * plane..(ch + 1) * plane];
        let v = if op.is_spatial() {
            warp_plane_f32(op, src, h, w, Fill::Constant(0.0))
        } else {
            op.apply_pixels(src, h, w)
        };
        out.extend(v);
    }
    Tensor::new(image.shape().to_vec(), out)
}

/// Applies the geometry of `op` to a label map (nearest neighbour, fill 0);
/// non-spatial ops leave labels untouched.
pub fn apply_op_labels(op: &Op, labels: &LabelMap) -> LabelMap {
    if !op.is_spatial() {
        return labels.clone();
    }
    LabelMap {
        height: labels.height,
        width: labels.width,
        data: warp_labels(op, &labels.data, labels.height, labels.width),
    }
}

/// Applies the geometry of `op` to a per-class map `[c, H, W]` (bilinear,
/// edge-replicating). Non-spatial ops return the map unchanged.
pub fn apply_op_geometry_to_map(op: &Op, map: &Tensor) -> Result<Tensor> {
    if !op.is_spatial() {
        return Ok(map.clone());
    }
    let (c, h, w) = plane_dims(map)?;
    let plane = h * w;
    let mut out = Vec::with_capacity(map.len());
    for ch in 0..c {
        out.extend(warp_plane_f32(
            op,
            &map.data()[ch * plane..(ch + 1) * plane],
            h,
            w,
            Fill::Clamp,
        ));
    }
    Tensor::new(map.shape().to_vec(), out)
}

/// Rescales each pixel's class vector to sum to one (uniform where it sums to zero).
pub fn renormalize_pixels(map: &mut Tensor) -> Result<()> {
    let (c, h, w) = plane_dims(map)?;
    let plane = h * w;
    let data = map.data_mut();
    for p in 0..plane {
        let s: f64 = (0..c).map(|k| data[k * plane + p] as f64).sum();
        for k in 0..c {
            data[k * plane + p] = if s > 1e-12 {
                (data[k * plane + p] as f64 / s) as f32
            } else {
                1.0 / c as f32
            };
        }
    }
    Ok(())
}
